//! Population health datasets: CSV ingestion, filtering, channel
//! normalization and the six-channel scatter mapping.
//!
//! The file format is plain comma-separated UTF-8 with a header row. The
//! `id` and `year` columns are required, `zipcode` is the optional region
//! column, and every other column is a numeric biomarker.

mod csv;
mod detail;
pub mod synth;
mod watchlist;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::csv::{export_csv, parse_csv, parse_csv_report, ParseReport};
pub use self::detail::{format_significant, record_detail};
pub use self::watchlist::{watchlist_add, watchlist_export, WatchEntry, Watchlist};

pub const ID_COLUMN: &str = "id";
pub const YEAR_COLUMN: &str = "year";
pub const REGION_COLUMN: &str = "zipcode";

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: empty column name at position {position}")]
    EmptyColumnName { line: usize, position: usize },
    #[error("line {line}: duplicate column `{column}`")]
    DuplicateColumn { line: usize, column: String },
    #[error("line {line}: header must contain both `id` and `year` columns")]
    MissingIdOrYearColumn { line: usize },
    #[error("line {line}: quoted values are not supported")]
    QuotedValueUnsupported { line: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} (line {line}): column `{column}` is not a finite number: `{value}`")]
    NonNumericValue {
        row: usize,
        line: usize,
        column: String,
        value: String,
    },
    #[error("row {row} (line {line}): invalid year `{value}`")]
    InvalidYear {
        row: usize,
        line: usize,
        value: String,
    },
    #[error("row {row} (line {line}): empty individual id")]
    EmptyId { row: usize, line: usize },
    #[error("row {row} (line {line}): duplicate (id, year) pair ({id}, {year})")]
    DuplicateIdYearPair {
        row: usize,
        line: usize,
        id: String,
        year: i32,
    },
    #[error("value `{0}` contains a comma, quote or line break")]
    UnrepresentableValue(String),
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric")]
    NotNumeric(String),
    #[error("invalid range for `{column}`: [{lo}, {hi}]")]
    InvalidRange { column: String, lo: f64, hi: f64 },
    #[error("dataset has no region column")]
    NoRegionColumn,
    #[error("unknown individual `{0}`")]
    UnknownIndividual(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColumnKind {
    Id,
    Year,
    Region,
    Numeric,
}

impl ColumnKind {
    /// Kind implied by a header name.
    pub fn for_name(name: &str) -> Self {
        match name {
            ID_COLUMN => ColumnKind::Id,
            YEAR_COLUMN => ColumnKind::Year,
            REGION_COLUMN => ColumnKind::Region,
            _ => ColumnKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let kind = ColumnKind::for_name(&name);
        Self { name, kind }
    }
}

/// One row: an individual's measurements for one year.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub individual_id: String,
    pub year: i32,
    pub region: Option<String>,
    /// One value per numeric column, in schema order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<ColumnDescriptor>,
    rows: Vec<Record>,
    /// Numeric slot for each column (None for id/year/region).
    numeric_slot: Vec<Option<usize>>,
    individuals: BTreeMap<String, Vec<usize>>,
}

fn representable(value: &str) -> bool {
    !value.contains([',', '"', '\n', '\r'])
}

impl Dataset {
    /// Builds a dataset from a schema and rows, checking every invariant the
    /// CSV reader enforces.
    pub fn from_parts(
        columns: Vec<ColumnDescriptor>,
        rows: Vec<Record>,
    ) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for (position, column) in columns.iter().enumerate() {
            if column.name.is_empty() {
                return Err(DatasetError::EmptyColumnName { line: 1, position });
            }
            if !representable(&column.name) {
                return Err(DatasetError::UnrepresentableValue(column.name.clone()));
            }
            if column.kind != ColumnKind::for_name(&column.name) {
                return Err(DatasetError::NotNumeric(column.name.clone()));
            }
            if !seen.insert(column.name.as_str()) {
                return Err(DatasetError::DuplicateColumn {
                    line: 1,
                    column: column.name.clone(),
                });
            }
        }
        if !seen.contains(ID_COLUMN) || !seen.contains(YEAR_COLUMN) {
            return Err(DatasetError::MissingIdOrYearColumn { line: 1 });
        }
        let has_region = seen.contains(REGION_COLUMN);
        let mut numeric_slot = Vec::with_capacity(columns.len());
        let mut numeric_count = 0;
        for column in &columns {
            if column.kind == ColumnKind::Numeric {
                numeric_slot.push(Some(numeric_count));
                numeric_count += 1;
            } else {
                numeric_slot.push(None);
            }
        }

        let mut individuals: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (index, row) in rows.iter().enumerate() {
            let line = index + 2;
            let row_no = index + 1;
            if row.individual_id.is_empty() {
                return Err(DatasetError::EmptyId { row: row_no, line });
            }
            if !representable(&row.individual_id) {
                return Err(DatasetError::UnrepresentableValue(row.individual_id.clone()));
            }
            if !(MIN_YEAR..=MAX_YEAR).contains(&row.year) {
                return Err(DatasetError::InvalidYear {
                    row: row_no,
                    line,
                    value: row.year.to_string(),
                });
            }
            match (&row.region, has_region) {
                (Some(region), true) if representable(region) => {}
                (None, false) => {}
                (Some(region), _) => {
                    return Err(DatasetError::UnrepresentableValue(region.clone()))
                }
                (None, true) => {
                    return Err(DatasetError::FieldCountMismatch {
                        line,
                        expected: columns.len(),
                        found: columns.len() - 1,
                    })
                }
            }
            if row.values.len() != numeric_count {
                return Err(DatasetError::FieldCountMismatch {
                    line,
                    expected: numeric_count,
                    found: row.values.len(),
                });
            }
            if let Some(slot) = row.values.iter().position(|v| !v.is_finite()) {
                let column = columns
                    .iter()
                    .zip(&numeric_slot)
                    .find(|(_, s)| **s == Some(slot))
                    .map(|(c, _)| c.name.clone())
                    .unwrap_or_default();
                return Err(DatasetError::NonNumericValue {
                    row: row_no,
                    line,
                    column,
                    value: row.values[slot].to_string(),
                });
            }
            individuals
                .entry(row.individual_id.clone())
                .or_default()
                .push(index);
        }
        for indices in individuals.values_mut() {
            indices.sort_by_key(|&i| rows[i].year);
            for pair in indices.windows(2) {
                let (a, b) = (&rows[pair[0]], &rows[pair[1]]);
                if a.year == b.year {
                    let later = pair[0].max(pair[1]);
                    return Err(DatasetError::DuplicateIdYearPair {
                        row: later + 1,
                        line: later + 2,
                        id: b.individual_id.clone(),
                        year: b.year,
                    });
                }
            }
        }
        Ok(Self {
            columns,
            rows,
            numeric_slot,
            individuals,
        })
    }

    pub fn columns(&self) -> &[ColumnDescriptor] {
        &self.columns
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> Result<&Record, DatasetError> {
        self.rows.get(index).ok_or(DatasetError::IndexOutOfRange {
            index,
            len: self.rows.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Individual id → row indices ordered by ascending year.
    pub fn individuals(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.individuals
    }

    pub fn has_region(&self) -> bool {
        self.columns.iter().any(|c| c.kind == ColumnKind::Region)
    }

    pub fn numeric_columns(&self) -> impl Iterator<Item = &ColumnDescriptor> {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Numeric)
    }

    /// Position of `name` among the numeric values of a record.
    pub fn numeric_slot(&self, name: &str) -> Result<usize, DatasetError> {
        let position = self
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))?;
        self.numeric_slot[position].ok_or_else(|| DatasetError::NotNumeric(name.to_string()))
    }

    /// SHA-256 of the canonical CSV export, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let all: Vec<usize> = (0..self.rows.len()).collect();
        let text = export_csv(self, &all).expect("all indices are valid");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Which numeric columns drive the five continuous visual channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionMapping {
    pub x: String,
    pub y: String,
    pub z: String,
    pub color: String,
    pub size: String,
    pub traces_enabled: bool,
}

impl DimensionMapping {
    /// Every channel on the same column.
    pub fn uniform(column: &str) -> Self {
        Self {
            x: column.to_string(),
            y: column.to_string(),
            z: column.to_string(),
            color: column.to_string(),
            size: column.to_string(),
            traces_enabled: false,
        }
    }

    /// First five numeric columns (cycling when there are fewer).
    pub fn default_for(columns: &[ColumnDescriptor]) -> Option<Self> {
        let numeric: Vec<&str> = columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .map(|c| c.name.as_str())
            .collect();
        if numeric.is_empty() {
            return None;
        }
        let pick = |i: usize| numeric[i % numeric.len()].to_string();
        Some(Self {
            x: pick(0),
            y: pick(1),
            z: pick(2),
            color: pick(3),
            size: pick(4),
            traces_enabled: false,
        })
    }

    pub fn channels(&self) -> [&str; 5] {
        [&self.x, &self.y, &self.z, &self.color, &self.size]
    }

    pub fn validate(&self, columns: &[ColumnDescriptor]) -> Result<(), DatasetError> {
        for channel in self.channels() {
            match columns.iter().find(|c| c.name == channel) {
                None => return Err(DatasetError::UnknownColumn(channel.to_string())),
                Some(c) if c.kind != ColumnKind::Numeric => {
                    return Err(DatasetError::NotNumeric(channel.to_string()))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Inclusive numeric interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub lo: i32,
    pub hi: i32,
}

impl YearRange {
    pub fn contains(&self, year: i32) -> bool {
        self.lo <= year && year <= self.hi
    }
}

impl Default for YearRange {
    fn default() -> Self {
        Self {
            lo: MIN_YEAR,
            hi: MAX_YEAR,
        }
    }
}

/// Visible-record predicate. The default value hides nothing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterState {
    pub numeric_ranges: BTreeMap<String, ValueRange>,
    pub year_range: YearRange,
    pub regions: Option<BTreeSet<String>>,
}

impl FilterState {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn with_range(mut self, column: &str, lo: f64, hi: f64) -> Self {
        self.numeric_ranges
            .insert(column.to_string(), ValueRange::new(lo, hi));
        self
    }

    pub fn with_years(mut self, lo: i32, hi: i32) -> Self {
        self.year_range = YearRange { lo, hi };
        self
    }

    pub fn with_regions<I, S>(mut self, regions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.regions = Some(regions.into_iter().map(Into::into).collect());
        self
    }

    /// Range sanity alone, without a schema.
    pub fn validate_ranges(&self) -> Result<(), DatasetError> {
        for (column, range) in &self.numeric_ranges {
            if !(range.lo.is_finite() && range.hi.is_finite() && range.lo <= range.hi) {
                return Err(DatasetError::InvalidRange {
                    column: column.clone(),
                    lo: range.lo,
                    hi: range.hi,
                });
            }
        }
        if self.year_range.lo > self.year_range.hi {
            return Err(DatasetError::InvalidRange {
                column: YEAR_COLUMN.to_string(),
                lo: self.year_range.lo as f64,
                hi: self.year_range.hi as f64,
            });
        }
        Ok(())
    }

    pub fn validate(&self, columns: &[ColumnDescriptor]) -> Result<(), DatasetError> {
        self.validate_ranges()?;
        for column in self.numeric_ranges.keys() {
            match columns.iter().find(|c| &c.name == column) {
                None => return Err(DatasetError::UnknownColumn(column.clone())),
                Some(c) if c.kind != ColumnKind::Numeric => {
                    return Err(DatasetError::NotNumeric(column.clone()))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Indices (ascending) of the rows passing `filter`.
pub fn apply_filters(dataset: &Dataset, filter: &FilterState) -> Result<Vec<usize>, DatasetError> {
    filter.validate(dataset.columns())?;
    let ranges = filter
        .numeric_ranges
        .iter()
        .map(|(column, range)| Ok((dataset.numeric_slot(column)?, *range)))
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(dataset
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, row)| {
            filter.year_range.contains(row.year)
                && filter.regions.as_ref().is_none_or(|allowed| {
                    row.region.as_ref().is_some_and(|r| allowed.contains(r))
                })
                && ranges
                    .iter()
                    .all(|(slot, range)| range.contains(row.values[*slot]))
        })
        .map(|(index, _)| index)
        .collect())
}

/// Min/max rescaling into [0, 1] over the whole dataset.
pub fn normalize_channel(dataset: &Dataset, column: &str) -> Result<Vec<f64>, DatasetError> {
    let slot = dataset.numeric_slot(column)?;
    let values: Vec<f64> = dataset.rows().iter().map(|r| r.values[slot]).collect();
    Ok(normalize_values(&values))
}

/// Shared normalization rule; a constant series maps to 0.5.
pub(crate) fn normalize_values(values: &[f64]) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = max - min;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - min) / span).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
        .collect()
}

/// A record placed inside the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub row_index: usize,
    pub position: [f64; 3],
    pub color_t: f64,
    pub size_t: f64,
}

struct ChannelCache<'a> {
    dataset: &'a Dataset,
    columns: BTreeMap<&'a str, Vec<f64>>,
}

impl<'a> ChannelCache<'a> {
    fn new(dataset: &'a Dataset) -> Self {
        Self {
            dataset,
            columns: BTreeMap::new(),
        }
    }

    fn get(&mut self, column: &'a str) -> Result<&[f64], DatasetError> {
        if !self.columns.contains_key(column) {
            let t = normalize_channel(self.dataset, column)?;
            self.columns.insert(column, t);
        }
        Ok(&self.columns[column])
    }
}

pub fn project_points(
    dataset: &Dataset,
    mapping: &DimensionMapping,
    visible: &[usize],
) -> Result<Vec<NormalizedPoint>, DatasetError> {
    let mut cache = ChannelCache::new(dataset);
    for channel in mapping.channels() {
        cache.get(channel)?;
    }
    let channel = |name: &str| cache.columns[name].as_slice();
    let (x, y, z) = (channel(&mapping.x), channel(&mapping.y), channel(&mapping.z));
    let (color, size) = (channel(&mapping.color), channel(&mapping.size));
    visible
        .iter()
        .map(|&row| {
            dataset.row(row)?;
            Ok(NormalizedPoint {
                row_index: row,
                position: [x[row], y[row], z[row]],
                color_t: color[row],
                size_t: size[row],
            })
        })
        .collect()
}

/// One individual's visible points linked in year order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub individual_id: String,
    pub points: Vec<NormalizedPoint>,
}

pub fn build_traces(
    dataset: &Dataset,
    mapping: &DimensionMapping,
    visible: &[usize],
) -> Result<Vec<Trace>, DatasetError> {
    if !mapping.traces_enabled {
        return Ok(Vec::new());
    }
    let visible_set: BTreeSet<usize> = visible.iter().copied().collect();
    let points = project_points(dataset, mapping, visible)?;
    let by_row: BTreeMap<usize, NormalizedPoint> =
        points.into_iter().map(|p| (p.row_index, p)).collect();
    Ok(dataset
        .individuals()
        .iter()
        .filter_map(|(id, rows)| {
            let points: Vec<NormalizedPoint> = rows
                .iter()
                .filter(|r| visible_set.contains(r))
                .map(|r| by_row[r])
                .collect();
            (points.len() >= 2).then(|| Trace {
                individual_id: id.clone(),
                points,
            })
        })
        .collect())
}

const COLORMAP_STOPS: [[f64; 3]; 4] = [
    [0.0, 0.0, 255.0],
    [0.0, 255.0, 0.0],
    [255.0, 255.0, 0.0],
    [255.0, 0.0, 0.0],
];

fn colormap_segment(segment: usize, local: f64) -> [f64; 3] {
    let (a, b) = (COLORMAP_STOPS[segment], COLORMAP_STOPS[segment + 1]);
    [
        a[0] + (b[0] - a[0]) * local,
        a[1] + (b[1] - a[1]) * local,
        a[2] + (b[2] - a[2]) * local,
    ]
}

/// Cool-to-warm gradient: blue, green, yellow, red at t = 0, 1/3, 2/3, 1.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let scaled = t * 3.0;
    let segment = (scaled.floor() as usize).min(2);
    let rgb = colormap_segment(segment, scaled - segment as f64);
    rgb.map(|c| (c + 0.5).floor().clamp(0.0, 255.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "id,year,zipcode,glucose\np1,2020,92093,98.5\np1,2021,92093,101.0\n";

    fn three_rows() -> Dataset {
        parse_csv("id,year,zipcode,glucose\np1,2020,92093,98.5\np2,2020,92093,101.0\np3,2020,92037,120.0\n")
            .unwrap()
    }

    #[test]
    fn parse_fixture() {
        let ds = parse_csv(FIXTURE).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.individuals().len(), 1);
        assert_eq!(ds.numeric_columns().count(), 1);
        assert_eq!(ds.individuals()["p1"], vec![0, 1]);
    }

    #[test]
    fn unconstrained_filter_keeps_everything() {
        let ds = three_rows();
        assert_eq!(apply_filters(&ds, &FilterState::unconstrained()).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn disjoint_year_range_is_empty() {
        let ds = three_rows();
        let filter = FilterState::default().with_years(2030, 2031);
        assert!(apply_filters(&ds, &filter).unwrap().is_empty());
    }

    #[test]
    fn inclusive_numeric_bounds() {
        let ds = three_rows();
        let filter = FilterState::default().with_range("glucose", 100.0, 120.0);
        let visible = apply_filters(&ds, &filter).unwrap();
        // brute-force scan
        let expected: Vec<usize> = ds
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.values[0] >= 100.0 && r.values[0] <= 120.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(visible, expected);
        assert_eq!(visible, vec![1, 2]);
    }

    #[test]
    fn region_filter() {
        let ds = three_rows();
        let filter = FilterState::default().with_regions(["92037"]);
        assert_eq!(apply_filters(&ds, &filter).unwrap(), vec![2]);
    }

    #[test]
    fn filter_errors() {
        let ds = three_rows();
        let unknown = FilterState::default().with_range("cholesterol", 0.0, 1.0);
        assert_eq!(
            apply_filters(&ds, &unknown),
            Err(DatasetError::UnknownColumn("cholesterol".into()))
        );
        let inverted = FilterState::default().with_range("glucose", 2.0, 1.0);
        assert!(matches!(
            apply_filters(&ds, &inverted),
            Err(DatasetError::InvalidRange { .. })
        ));
    }

    fn single_column(values: &[f64]) -> Dataset {
        let mut text = String::from("id,year,v\n");
        for (i, v) in values.iter().enumerate() {
            text.push_str(&format!("p{i},2020,{v}\n"));
        }
        parse_csv(&text).unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_channel(&single_column(&[10.0, 20.0, 30.0]), "v").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_channel(&single_column(&[7.0, 7.0]), "v").unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize_channel(&single_column(&[-1.0, 0.0, 3.0]), "v").unwrap(), vec![0.0, 0.25, 1.0]);
        assert_eq!(
            normalize_channel(&single_column(&[1.0]), "id"),
            Err(DatasetError::NotNumeric("id".into()))
        );
        assert_eq!(
            normalize_channel(&single_column(&[1.0]), "nope"),
            Err(DatasetError::UnknownColumn("nope".into()))
        );
    }

    #[test]
    fn shared_channel_projection() {
        let ds = single_column(&[0.0, 10.0]);
        let points = project_points(&ds, &DimensionMapping::uniform("v"), &[0, 1]).unwrap();
        assert_eq!(points[0].position, [0.0, 0.0, 0.0]);
        assert_eq!(points[1].position, [1.0, 1.0, 1.0]);
        assert_eq!((points[0].color_t, points[0].size_t), (0.0, 0.0));
        assert_eq!((points[1].color_t, points[1].size_t), (1.0, 1.0));
        assert!(project_points(&ds, &DimensionMapping::uniform("v"), &[]).unwrap().is_empty());
    }

    #[test]
    fn distinct_channel_projection_matches_per_channel_normalization() {
        let ds = parse_csv("id,year,a,b,c,d,e\np1,2020,1,5,0,3,9\np2,2020,2,4,1,2,8\np3,2020,4,3,3,1,1\n")
            .unwrap();
        let mapping = DimensionMapping {
            x: "a".into(),
            y: "b".into(),
            z: "c".into(),
            color: "d".into(),
            size: "e".into(),
            traces_enabled: false,
        };
        let points = project_points(&ds, &mapping, &[0, 1, 2]).unwrap();
        let col = |c| normalize_channel(&ds, c).unwrap();
        let (a, b, c, d, e) = (col("a"), col("b"), col("c"), col("d"), col("e"));
        for p in &points {
            let r = p.row_index;
            assert_eq!(p.position, [a[r], b[r], c[r]]);
            assert_eq!(p.color_t, d[r]);
            assert_eq!(p.size_t, e[r]);
        }
    }

    #[test]
    fn traces_follow_year_order() {
        let ds = parse_csv("id,year,v\np1,2023,4\np1,2021,2\np1,2020,1\np1,2022,3\np2,2020,0\n").unwrap();
        let mut mapping = DimensionMapping::uniform("v");
        mapping.traces_enabled = true;
        let all = apply_filters(&ds, &FilterState::default()).unwrap();
        let traces = build_traces(&ds, &mapping, &all).unwrap();
        assert_eq!(traces.len(), 1);
        let years: Vec<i32> = traces[0].points.iter().map(|p| ds.rows()[p.row_index].year).collect();
        assert_eq!(years, vec![2020, 2021, 2022, 2023]);
    }

    #[test]
    fn singletons_yield_no_traces() {
        let ds = three_rows();
        let mut mapping = DimensionMapping::uniform("glucose");
        mapping.traces_enabled = true;
        assert!(build_traces(&ds, &mapping, &[0, 1, 2]).unwrap().is_empty());
    }

    #[test]
    fn hidden_year_is_skipped_in_trace() {
        let ds = parse_csv("id,year,v\np1,2020,1\np1,2021,2\np1,2022,3\n").unwrap();
        let mut mapping = DimensionMapping::uniform("v");
        mapping.traces_enabled = true;
        let filter = FilterState::default().with_range("v", 1.0, 1.0);
        let mut visible = apply_filters(&ds, &filter).unwrap();
        visible.extend(apply_filters(&ds, &FilterState::default().with_range("v", 3.0, 3.0)).unwrap());
        // filter-then-link: the surviving rows of p1 in year order
        let expected: Vec<usize> = ds.individuals()["p1"]
            .iter()
            .copied()
            .filter(|r| visible.contains(r))
            .collect();
        let traces = build_traces(&ds, &mapping, &visible).unwrap();
        let got: Vec<usize> = traces[0].points.iter().map(|p| p.row_index).collect();
        assert_eq!(got, expected);
        assert_eq!(got, vec![0, 2]);
    }

    #[test]
    fn colormap_examples() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        assert_eq!(colormap(0.5), [128, 255, 0]);
        assert_eq!(colormap(-3.0), [0, 0, 255]);
        assert_eq!(colormap(7.0), [255, 0, 0]);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn colormap_joints_are_continuous() {
        for joint in 1..=2 {
            let left = colormap_segment(joint - 1, 1.0);
            let right = colormap_segment(joint, 0.0);
            assert_eq!(left, right);
            assert_eq!(left, COLORMAP_STOPS[joint]);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_is_bounded_and_monotone(values in prop::collection::vec(-1e6f64..1e6, 1..40)) {
                let t = normalize_values(&values);
                for (i, a) in values.iter().enumerate() {
                    prop_assert!((0.0..=1.0).contains(&t[i]));
                    for (j, b) in values.iter().enumerate() {
                        if a <= b {
                            prop_assert!(t[i] <= t[j]);
                        }
                    }
                }
            }

            #[test]
            fn tightening_a_range_never_adds_rows(
                values in prop::collection::vec(0.0f64..100.0, 1..30),
                lo in 0.0f64..50.0, hi in 50.0f64..100.0, fraction in 0.0f64..0.5,
            ) {
                let mut text = String::from("id,year,v\n");
                for (i, v) in values.iter().enumerate() {
                    text.push_str(&format!("p{i},2020,{v}\n"));
                }
                let ds = parse_csv(&text).unwrap();
                let wide = apply_filters(&ds, &FilterState::default().with_range("v", lo, hi)).unwrap();
                let shrink = fraction * (hi - lo);
                let narrow = apply_filters(&ds, &FilterState::default().with_range("v", lo + shrink, hi - shrink)).unwrap();
                prop_assert!(narrow.iter().all(|r| wide.contains(r)));
                prop_assert!(wide.iter().all(|&r| r < ds.len()));
            }

            #[test]
            fn colormap_is_piecewise_monotone_per_channel(t in 0.0f64..1.0) {
                let c = colormap(t);
                // exactly one channel pair is active per segment
                prop_assert!(c[0] == 0 || c[2] == 0);
            }
        }
    }
}
