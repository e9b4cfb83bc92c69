use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    apply_filters, colormap, normalize_values, Dataset, DatasetError, FilterState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub region: String,
    pub year: i32,
    pub count: usize,
    /// Mean of the value column within the group.
    pub value: f64,
    pub height: f64,
    pub color: [u8; 3],
}

/// One bar per (region, year) group present among the visible rows,
/// sorted by region then year.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BarGrid {
    pub value_column: String,
    pub bars: Vec<Bar>,
}

impl BarGrid {
    pub fn get(&self, region: &str, year: i32) -> Option<&Bar> {
        self.bars
            .iter()
            .find(|b| b.region == region && b.year == year)
    }
}

pub fn aggregate_bars(
    dataset: &Dataset,
    value_column: &str,
    filter: &FilterState,
) -> Result<BarGrid, DatasetError> {
    let slot = dataset.numeric_slot(value_column)?;
    if !dataset.has_region() {
        return Err(DatasetError::NoRegionColumn);
    }
    let visible = apply_filters(dataset, filter)?;
    let mut groups: BTreeMap<(&str, i32), (usize, f64)> = BTreeMap::new();
    for &index in &visible {
        let row = &dataset.rows()[index];
        let region = row.region.as_deref().unwrap_or_default();
        let entry = groups.entry((region, row.year)).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += row.values[slot];
    }
    let means: Vec<f64> = groups
        .values()
        .map(|(count, sum)| sum / *count as f64)
        .collect();
    let heights = normalize_values(&means);
    let bars = groups
        .into_iter()
        .zip(means.iter().zip(&heights))
        .map(|(((region, year), (count, _)), (&value, &height))| Bar {
            region: region.to_string(),
            year,
            count,
            value,
            height,
            color: colormap(height),
        })
        .collect();
    Ok(BarGrid {
        value_column: value_column.to_string(),
        bars,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStatistics {
    pub column: String,
    pub count: usize,
    /// Absent when no row is visible.
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStatistics {
    pub count: usize,
    pub columns: Vec<ColumnStatistics>,
}

impl SubsetStatistics {
    pub fn column(&self, name: &str) -> Option<&ColumnStatistics> {
        self.columns.iter().find(|c| c.column == name)
    }
}

pub fn subset_statistics(
    dataset: &Dataset,
    filter: &FilterState,
    columns: &[&str],
) -> Result<SubsetStatistics, DatasetError> {
    let slots = columns
        .iter()
        .map(|c| dataset.numeric_slot(c))
        .collect::<Result<Vec<_>, _>>()?;
    let visible = apply_filters(dataset, filter)?;
    let columns = columns
        .iter()
        .zip(slots)
        .map(|(name, slot)| {
            // Welford's running mean and squared-deviation sum.
            let mut mean = 0.0;
            let mut m2 = 0.0;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for (n, &index) in visible.iter().enumerate() {
                let x = dataset.rows()[index].values[slot];
                let delta = x - mean;
                mean += delta / (n + 1) as f64;
                m2 += delta * (x - mean);
                min = min.min(x);
                max = max.max(x);
            }
            let count = visible.len();
            ColumnStatistics {
                column: name.to_string(),
                count,
                summary: (count > 0).then(|| Summary {
                    mean: mean.clamp(min, max),
                    std_dev: (m2.max(0.0) / count as f64).sqrt(),
                    min,
                    max,
                }),
            }
        })
        .collect();
    Ok(SubsetStatistics {
        count: visible.len(),
        columns,
    })
}
