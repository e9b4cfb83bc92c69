use super::{ColumnKind, Dataset, DatasetError};

/// Column name and display string for every field of one row, in schema order.
pub fn record_detail(
    dataset: &Dataset,
    row_index: usize,
) -> Result<Vec<(String, String)>, DatasetError> {
    let record = dataset.row(row_index)?;
    let mut numeric = record.values.iter();
    Ok(dataset
        .columns()
        .iter()
        .map(|column| {
            let value = match column.kind {
                ColumnKind::Id => record.individual_id.clone(),
                ColumnKind::Year => record.year.to_string(),
                ColumnKind::Region => record.region.clone().unwrap_or_default(),
                ColumnKind::Numeric => numeric
                    .next()
                    .map(|v| format_significant(*v, 6))
                    .unwrap_or_default(),
            };
            (column.name.clone(), value)
        })
        .collect())
}

/// Renders `value` with exactly `digits` significant digits, keeping
/// trailing zeros. Magnitudes outside [1e-5, 10^digits) use an exponent.
pub fn format_significant(value: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !value.is_finite() {
        return value.to_string();
    }
    if value == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    // `{:e}` rounds correctly; re-place the decimal point from its exponent.
    let scientific = format!("{:.*e}", digits - 1, value);
    let (mantissa, exponent) = scientific.split_once('e').expect("exponent marker");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if exponent < -5 || exponent >= digits as i32 {
        return format!("{mantissa}e{exponent}");
    }
    let negative = mantissa.starts_with('-');
    let figures: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exponent < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exponent - 1) as usize));
        out.push_str(&figures);
    } else {
        let split = exponent as usize + 1;
        out.push_str(&figures[..split]);
        if split < figures.len() {
            out.push('.');
            out.push_str(&figures[split..]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_csv;

    #[test]
    fn detail_echoes_every_field() {
        let ds = parse_csv("id,year,zipcode,glucose\np1,2020,92093,98.5\np1,2021,92093,101\n").unwrap();
        let detail = record_detail(&ds, 0).unwrap();
        let pairs: Vec<(&str, &str)> = detail.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        assert_eq!(
            pairs,
            vec![("id", "p1"), ("year", "2020"), ("zipcode", "92093"), ("glucose", "98.5000")]
        );
        assert_eq!(
            record_detail(&ds, 99),
            Err(DatasetError::IndexOutOfRange { index: 99, len: 2 })
        );
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_significant(98.4999999, 6), "98.5000");
        assert_eq!(format_significant(98.5, 6), "98.5000");
        assert_eq!(format_significant(123456.0, 6), "123456");
        assert_eq!(format_significant(999999.5, 6), "1.00000e6");
        assert_eq!(format_significant(99.999951, 6), "100.000");
        assert_eq!(format_significant(0.000123456789, 6), "0.000123457");
        assert_eq!(format_significant(-2.5, 6), "-2.50000");
        assert_eq!(format_significant(0.0, 6), "0.00000");
        assert_eq!(format_significant(1.5e-9, 6), "1.50000e-9");
    }
}
