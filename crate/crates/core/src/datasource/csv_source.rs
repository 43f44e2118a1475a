use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Matrix, RawUnit};

/// Column mapping for long-format CSV files: one row per (unit, t).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub unit_column: String,
    pub time_column: String,
    /// Feature columns in channel order. Empty means every `f_*` column in
    /// header order.
    pub feature_columns: Vec<String>,
    pub target_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            unit_column: "unit_id".into(),
            time_column: "t".into(),
            feature_columns: Vec::new(),
            target_column: "y".into(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<RawUnit>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Groups rows by unit, sorts them by time and checks that every unit covers
/// t = 1..T exactly once. Units come back sorted by id.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<RawUnit>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let unit_col = find(&schema.unit_column)?;
    let time_col = find(&schema.time_column)?;
    let target_col = find(&schema.target_column)?;
    let feature_names: Vec<String> = if schema.feature_columns.is_empty() {
        headers
            .iter()
            .filter(|h| h.starts_with("f_"))
            .map(str::to_string)
            .collect()
    } else {
        schema.feature_columns.clone()
    };
    if feature_names.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    let feature_cols = feature_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut grouped: BTreeMap<String, BTreeMap<u64, (Vec<f64>, f64)>> = BTreeMap::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = line + 2;
        let unit = record.get(unit_col).unwrap_or_default().to_string();
        let t_raw = record.get(time_col).unwrap_or_default().trim();
        let t: u64 = t_raw
            .parse()
            .ok()
            .filter(|t| *t >= 1)
            .ok_or_else(|| Error::Schema(format!("row {row_no}: time `{t_raw}` is not a positive integer")))?;
        let features = feature_cols
            .iter()
            .map(|&c| parse_float(record.get(c).unwrap_or_default(), row_no))
            .collect::<Result<Vec<_>>>()?;
        let y = parse_float(record.get(target_col).unwrap_or_default(), row_no)?;
        let rows = grouped.entry(unit.clone()).or_default();
        if rows.insert(t, (features, y)).is_some() {
            return Err(Error::Integrity(format!("duplicate row for unit {unit} at t={t}")));
        }
    }

    let channel_names: Vec<String> = feature_names
        .iter()
        .map(|n| n.strip_prefix("f_").unwrap_or(n).to_string())
        .collect();
    let mut units = Vec::with_capacity(grouped.len());
    for (unit_id, rows) in grouped {
        for (expected, t) in (1u64..).zip(rows.keys()) {
            if *t != expected {
                return Err(Error::Integrity(format!(
                    "non-contiguous time for unit {unit_id}: expected t={expected}, found t={t}"
                )));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * feature_cols.len());
        let mut target = Vec::with_capacity(rows.len());
        for (features, y) in rows.into_values() {
            data.extend(features);
            target.push(y);
        }
        let features = Matrix::new(target.len(), feature_cols.len(), data)?;
        units.push(RawUnit::new(unit_id, features, target, channel_names.clone())?);
    }
    Ok(units)
}

fn parse_float(cell: &str, row_no: usize) -> Result<f64> {
    let cell = cell.trim();
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::Schema(format!("row {row_no}: `{cell}` is not a number")))?;
    // Normalize every NaN spelling to the canonical quiet NaN.
    Ok(if v.is_nan() { f64::NAN } else { v })
}

/// Writes units in the long format `read_csv` accepts, with `f_<channel>`
/// feature columns. Floats use shortest round-trip formatting.
pub fn write_csv<W: Write>(writer: W, units: &[RawUnit]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let Some(first) = units.first() else {
        return Ok(());
    };
    let mut header = vec!["unit_id".to_string(), "t".to_string()];
    header.extend(first.channel_names.iter().map(|c| format!("f_{c}")));
    header.push("y".into());
    wtr.write_record(&header)?;
    for unit in units {
        if unit.channel_names != first.channel_names {
            return Err(Error::Schema(format!(
                "unit {} has different channels than {}",
                unit.unit_id, first.unit_id
            )));
        }
        for (i, row) in unit.features.iter_rows().enumerate() {
            let mut record = vec![unit.unit_id.clone(), (i + 1).to_string()];
            record.extend(row.iter().map(|v| format_float(*v)));
            record.push(format_float(unit.target[i]));
            wtr.write_record(&record)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Vec<RawUnit>> {
        read_csv(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn groups_rows_by_unit() {
        let units = read("unit_id,t,f_a,y\nB,2,5,0\nA,1,1,2\nA,3,3,0\nB,1,4,1\nA,2,2,1\n").unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].unit_id, "A");
        assert_eq!(units[0].len(), 3);
        assert_eq!(units[0].features.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(units[1].len(), 2);
        assert_eq!(units[1].target, vec![1.0, 0.0]);
        assert_eq!(units[0].channel_names, vec!["a".to_string()]);
    }

    #[test]
    fn gap_in_time_names_the_unit() {
        let err = read("unit_id,t,f_a,y\nA,1,1,0\nA,3,3,0\n").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        assert!(err.to_string().contains("non-contiguous time for unit A"));
    }

    #[test]
    fn duplicate_time_is_rejected() {
        let err = read("unit_id,t,f_a,y\nA,1,1,0\nA,1,3,0\n").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = read("unit_id,t,f_a\nA,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn nan_cells_become_quiet_nan() {
        let units = read("unit_id,t,f_a,f_b,y\nA,1,NaN,2,0\n").unwrap();
        let v = units[0].features.get(0, 0);
        assert!(v.is_nan());
        assert_eq!(v.to_bits(), f64::NAN.to_bits());
    }
}
