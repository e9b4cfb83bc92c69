use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use datacube::dataset::synth::{generate_population, PopulationSpec};
use datacube::dataset::{apply_filters, export_csv, parse_csv, parse_csv_report, Dataset, FilterState};
use datacube::server::{write_artifacts, ArtifactSummary, FixedClock};
use datacube::sim::{Scenario, SimReport, Simulation};

/// Schema summary and every parse error of a CSV file. The flag is true
/// when the file is valid.
pub fn validate_text(text: &str) -> (String, bool) {
    let report = parse_csv_report(text);
    let mut out = String::new();
    let _ = writeln!(out, "columns:");
    for column in &report.columns {
        let _ = writeln!(out, "  {:<20} {:?}", column.name, column.kind);
    }
    let _ = writeln!(out, "rows: {}", report.row_count);
    let _ = writeln!(out, "individuals: {}", report.individual_count);
    if report.errors.is_empty() {
        let _ = writeln!(out, "valid");
    } else {
        let _ = writeln!(out, "errors: {}", report.errors.len());
        for error in &report.errors {
            let _ = writeln!(out, "  {error}");
        }
    }
    (out, report.errors.is_empty())
}

pub fn validate_file(path: &Path) -> Result<(String, bool)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(validate_text(&text))
}

pub fn load_or_generate(dataset: Option<&Path>, seed: u64, individuals: usize) -> Result<Dataset> {
    match dataset {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_csv(&text).with_context(|| format!("parsing {}", path.display()))
        }
        None => Ok(generate_population(&PopulationSpec {
            individuals,
            seed,
            ..PopulationSpec::default()
        })),
    }
}

/// `LO:HI`
pub fn parse_years(spec: &str) -> Result<(i32, i32)> {
    let Some((lo, hi)) = spec.split_once(':') else { bail!("expected LO:HI, got `{spec}`") };
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

/// `COLUMN:LO:HI`
pub fn parse_range(spec: &str) -> Result<(String, f64, f64)> {
    let parts: Vec<&str> = spec.rsplitn(3, ':').collect();
    let [hi, lo, column] = parts[..] else { bail!("expected COLUMN:LO:HI, got `{spec}`") };
    Ok((column.to_string(), lo.trim().parse()?, hi.trim().parse()?))
}

pub fn build_filter(years: Option<&str>, ranges: &[String], regions: Option<&str>) -> Result<FilterState> {
    let mut filter = FilterState::default();
    if let Some(years) = years {
        let (lo, hi) = parse_years(years)?;
        filter = filter.with_years(lo, hi);
    }
    for range in ranges {
        let (column, lo, hi) = parse_range(range)?;
        filter = filter.with_range(&column, lo, hi);
    }
    if let Some(regions) = regions {
        filter = filter.with_regions(regions.split(',').map(str::trim).filter(|r| !r.is_empty()));
    }
    Ok(filter)
}

/// The visible subset of `dataset` under `filter`, as CSV text.
pub fn export_subset(dataset: &Dataset, filter: &FilterState) -> Result<String> {
    filter.validate(dataset.columns())?;
    let rows = apply_filters(dataset, filter)?;
    Ok(export_csv(dataset, &rows)?)
}

/// Runs a scenario in the simulator and writes the resulting session's
/// snapshots and watchlist under `out_dir`, stamped with virtual time.
pub fn export_scenario_artifacts(scenario: Scenario, out_dir: &Path) -> Result<(SimReport, ArtifactSummary)> {
    let mut sim = Simulation::new(scenario);
    while !sim.is_quiescent() && sim.step() {}
    let now = sim.now();
    let server = sim.server();
    let summary = write_artifacts(
        out_dir,
        server.session_id(),
        server.state(),
        server.dataset().map(|d| d.as_ref()),
        &FixedClock(now),
    )?;
    Ok((sim.run(), summary))
}
