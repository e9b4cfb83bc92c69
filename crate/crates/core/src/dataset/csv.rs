use std::collections::{BTreeMap, BTreeSet};

use super::{
    ColumnDescriptor, ColumnKind, Dataset, DatasetError, Record, ID_COLUMN, MAX_YEAR, MIN_YEAR,
    YEAR_COLUMN,
};

/// Outcome of a full validation pass: the dataset when the file is clean,
/// plus every error found (in line order) otherwise.
#[derive(Debug, Clone)]
pub struct ParseReport {
    pub columns: Vec<ColumnDescriptor>,
    pub row_count: usize,
    pub individual_count: usize,
    pub errors: Vec<DatasetError>,
    pub dataset: Option<Dataset>,
}

/// Reads the DataCube CSV format, stopping at the first error.
pub fn parse_csv(text: &str) -> Result<Dataset, DatasetError> {
    let report = parse_inner(text, true);
    match report.errors.into_iter().next() {
        Some(error) => Err(error),
        None => Ok(report.dataset.expect("clean parse yields a dataset")),
    }
}

/// Reads the whole file and reports every problem instead of stopping early.
pub fn parse_csv_report(text: &str) -> ParseReport {
    parse_inner(text, false)
}

fn split_lines(text: &str) -> Vec<&str> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines: Vec<&str> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

fn parse_inner(text: &str, fail_fast: bool) -> ParseReport {
    let mut report = ParseReport {
        columns: Vec::new(),
        row_count: 0,
        individual_count: 0,
        errors: Vec::new(),
        dataset: None,
    };
    let lines = split_lines(text);
    let Some(header) = lines.first().filter(|h| !h.is_empty()) else {
        report.errors.push(DatasetError::MissingHeader);
        return report;
    };
    if header.contains('"') {
        report
            .errors
            .push(DatasetError::QuotedValueUnsupported { line: 1 });
        return report;
    }

    let names: Vec<&str> = header.split(',').collect();
    let mut seen = BTreeSet::new();
    for (position, name) in names.iter().enumerate() {
        if name.is_empty() {
            report
                .errors
                .push(DatasetError::EmptyColumnName { line: 1, position });
        } else if !seen.insert(*name) {
            report.errors.push(DatasetError::DuplicateColumn {
                line: 1,
                column: name.to_string(),
            });
        }
    }
    if !seen.contains(ID_COLUMN) || !seen.contains(YEAR_COLUMN) {
        report
            .errors
            .push(DatasetError::MissingIdOrYearColumn { line: 1 });
    }
    report.columns = names.iter().map(|n| ColumnDescriptor::new(*n)).collect();
    if !report.errors.is_empty() {
        return report;
    }

    let columns = report.columns.clone();
    let mut rows = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut seen_pairs: BTreeMap<(String, i32), usize> = BTreeMap::new();
    for (offset, line_text) in lines.iter().enumerate().skip(1) {
        let line = offset + 1;
        let row = offset;
        if fail_fast && !report.errors.is_empty() {
            break;
        }
        if line_text.contains('"') {
            report
                .errors
                .push(DatasetError::QuotedValueUnsupported { line });
            continue;
        }
        let fields: Vec<&str> = line_text.split(',').collect();
        if fields.len() != columns.len() {
            report.errors.push(DatasetError::FieldCountMismatch {
                line,
                expected: columns.len(),
                found: fields.len(),
            });
            continue;
        }
        let mut record = Record {
            individual_id: String::new(),
            year: 0,
            region: None,
            values: Vec::new(),
        };
        let mut row_ok = true;
        for (column, field) in columns.iter().zip(&fields) {
            match column.kind {
                ColumnKind::Id => {
                    if field.is_empty() {
                        report.errors.push(DatasetError::EmptyId { row, line });
                        row_ok = false;
                    }
                    record.individual_id = field.to_string();
                }
                ColumnKind::Year => match field.parse::<i32>() {
                    Ok(year) if (MIN_YEAR..=MAX_YEAR).contains(&year) => record.year = year,
                    _ => {
                        report.errors.push(DatasetError::InvalidYear {
                            row,
                            line,
                            value: field.to_string(),
                        });
                        row_ok = false;
                    }
                },
                ColumnKind::Region => record.region = Some(field.to_string()),
                ColumnKind::Numeric => match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => record.values.push(v),
                    _ => {
                        report.errors.push(DatasetError::NonNumericValue {
                            row,
                            line,
                            column: column.name.clone(),
                            value: field.to_string(),
                        });
                        row_ok = false;
                    }
                },
            }
        }
        if !row_ok {
            continue;
        }
        let key = (record.individual_id.clone(), record.year);
        if seen_pairs.insert(key, row).is_some() {
            report.errors.push(DatasetError::DuplicateIdYearPair {
                row,
                line,
                id: record.individual_id.clone(),
                year: record.year,
            });
            continue;
        }
        rows.push(record);
    }
    report.row_count = lines.len() - 1;
    report.individual_count = seen_pairs
        .keys()
        .map(|(id, _)| id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    if report.errors.is_empty() {
        match Dataset::from_parts(columns, rows) {
            Ok(ds) => report.dataset = Some(ds),
            Err(e) => report.errors.push(e),
        }
    }
    report
}

/// Writes the header and the given rows (in the given order).
pub fn export_csv(dataset: &Dataset, rows: &[usize]) -> Result<String, DatasetError> {
    let columns = dataset.columns();
    let mut out = String::new();
    out.push_str(
        &columns
            .iter()
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for &index in rows {
        let record = dataset.row(index)?;
        let mut numeric = record.values.iter();
        let fields: Vec<String> = columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Id => record.individual_id.clone(),
                ColumnKind::Year => record.year.to_string(),
                ColumnKind::Region => record.region.clone().unwrap_or_default(),
                ColumnKind::Numeric => numeric.next().map(f64::to_string).unwrap_or_default(),
            })
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_is_valid() {
        let ds = parse_csv("id,year,zipcode,glucose\n").unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.columns().len(), 4);
    }

    #[test]
    fn error_classes() {
        assert_eq!(parse_csv(""), Err(DatasetError::MissingHeader));
        assert_eq!(parse_csv("\n"), Err(DatasetError::MissingHeader));
        assert_eq!(
            parse_csv("id,year,a,a\n"),
            Err(DatasetError::DuplicateColumn { line: 1, column: "a".into() })
        );
        assert_eq!(
            parse_csv("id,zipcode,glucose\n"),
            Err(DatasetError::MissingIdOrYearColumn { line: 1 })
        );
        assert_eq!(
            parse_csv("id,year,zipcode,glucose\np1,2020,92093,abc\n"),
            Err(DatasetError::NonNumericValue {
                row: 1,
                line: 2,
                column: "glucose".into(),
                value: "abc".into()
            })
        );
        assert_eq!(
            parse_csv("id,year,glucose\np1,2020,1\np1,2020,2\n"),
            Err(DatasetError::DuplicateIdYearPair { row: 2, line: 3, id: "p1".into(), year: 2020 })
        );
        assert_eq!(
            parse_csv("id,year,glucose\n\"p1\",2020,1\n"),
            Err(DatasetError::QuotedValueUnsupported { line: 2 })
        );
        assert!(matches!(
            parse_csv("id,year,glucose\np1,2020\n"),
            Err(DatasetError::FieldCountMismatch { line: 2, expected: 3, found: 2 })
        ));
        assert!(matches!(
            parse_csv("id,year,glucose\np1,1800,1\n"),
            Err(DatasetError::InvalidYear { row: 1, .. })
        ));
    }

    #[test]
    fn non_finite_numbers_are_rejected() {
        for bad in ["NaN", "inf", "-inf", ""] {
            let text = format!("id,year,g\np1,2020,{bad}\n");
            assert!(matches!(parse_csv(&text), Err(DatasetError::NonNumericValue { .. })), "{bad}");
        }
    }

    #[test]
    fn crlf_and_missing_trailing_newline() {
        let ds = parse_csv("id,year,g\r\np1,2020,1\r\np2,2020,2").unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn report_collects_every_error() {
        let report = parse_csv_report("id,year,g\np1,2020,x\np2,20x0,1\np3,2020,1\np3,2020,2\n");
        assert_eq!(report.errors.len(), 3);
        assert!(report.dataset.is_none());
        assert_eq!(report.row_count, 4);
    }

    #[test]
    fn export_roundtrip_and_subsets() {
        let text = "id,year,zipcode,glucose\np1,2020,92093,98.5\np1,2021,92093,101\np2,2020,92037,120\n";
        let ds = parse_csv(text).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let exported = export_csv(&ds, &all).unwrap();
        assert_eq!(exported, text);
        assert_eq!(parse_csv(&exported).unwrap(), ds);

        assert_eq!(export_csv(&ds, &[]).unwrap(), "id,year,zipcode,glucose\n");
        assert_eq!(
            export_csv(&ds, &[1]).unwrap(),
            "id,year,zipcode,glucose\np1,2021,92093,101\n"
        );
        assert_eq!(
            export_csv(&ds, &[5]),
            Err(DatasetError::IndexOutOfRange { index: 5, len: 3 })
        );
    }

    #[test]
    fn column_order_is_free() {
        let ds = parse_csv("glucose,year,id\n1.5,2020,p1\n").unwrap();
        assert_eq!(ds.rows()[0].individual_id, "p1");
        assert_eq!(export_csv(&ds, &[0]).unwrap(), "glucose,year,id\n1.5,2020,p1\n");
    }
}
