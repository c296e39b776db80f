//! CSV data files: a header row, `NA` for missing entries, input columns
//! named `x…`, output columns `y…` and an optional integer `label` column.

use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::MaskedDataset;
use crate::error::{Error, Result};
use crate::kernel::Mask;

pub const NA: &str = "NA";

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        NA.to_string()
    }
}

fn parse(field: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let f = field.trim();
    if f == NA || f.is_empty() {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("row {row}, column `{col}`: `{f}` is not a number")))
}

/// A dataset read from CSV; `labels[n]` is `None` for unlabelled rows.
#[derive(Clone, Debug)]
pub struct CsvData {
    pub dataset: MaskedDataset,
    pub labels: Option<Vec<Option<i64>>>,
}

pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &MaskedDataset, labels: Option<&[Option<i64>]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.input_names.clone();
    header.extend(ds.output_names.iter().filter(|n| n.as_str() != "label").cloned());
    let write_outputs = !ds.output_names.iter().any(|n| n == "label");
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for r in 0..ds.n() {
        let mut rec: Vec<String> = (0..ds.q())
            .map(|c| if ds.input_mask.get(r, c) { fmt(ds.inputs[(r, c)]) } else { NA.into() })
            .collect();
        if write_outputs {
            rec.extend(ds.outputs.row(r).iter().map(|v| fmt(*v)));
        }
        if let Some(l) = labels {
            rec.push(l[r].map_or(NA.to_string(), |v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<CsvData> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut label_col = None;
    for (i, h) in header.iter().enumerate() {
        if h == "label" {
            label_col = Some(i);
        } else if h.starts_with('x') {
            xs.push(i);
        } else if h.starts_with('y') {
            ys.push(i);
        } else {
            return Err(Error::Parse(format!("unrecognized column `{h}` (expected x…, y… or label)")));
        }
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        for &c in &xs {
            inputs.push(parse(&rec[c], row, &header[c])?);
        }
        for &c in &ys {
            outputs.push(parse(&rec[c], row, &header[c])?.unwrap_or(f64::NAN));
        }
        if let Some(c) = label_col {
            let f = rec[c].trim();
            labels.push(if f == NA || f.is_empty() {
                None
            } else {
                Some(f.parse::<i64>().map_err(|_| Error::Parse(format!("row {row}: label `{f}` is not an integer")))?)
            });
        }
    }
    let n = if xs.is_empty() { outputs.len() / ys.len().max(1) } else { inputs.len() / xs.len() };
    let q = xs.len();
    let x = DMatrix::from_fn(n, q, |r, c| inputs[r * q + c].unwrap_or(f64::NAN));
    let mask = Mask::from_fn(n, q, |r, c| inputs[r * q + c].is_some());
    let (y, mut out_names) = if ys.is_empty() {
        if label_col.is_some() {
            (
                DMatrix::from_fn(n, 1, |r, _| labels[r].map_or(f64::NAN, |v| v as f64)),
                vec!["label".to_string()],
            )
        } else {
            (DMatrix::zeros(n, 0), Vec::new())
        }
    } else {
        let d = ys.len();
        (
            DMatrix::from_fn(n, d, |r, c| outputs[r * d + c]),
            ys.iter().map(|c| header[*c].clone()).collect(),
        )
    };
    let label_mask = if label_col.is_some() {
        labels.iter().map(|l| l.is_some()).collect()
    } else {
        vec![true; n]
    };
    let mut ds = MaskedDataset::new(x, mask, y, label_mask)?;
    ds.input_names = xs.iter().map(|c| header[*c].clone()).collect();
    if out_names.is_empty() {
        out_names = Vec::new();
    }
    ds.output_names = out_names;
    Ok(CsvData {
        dataset: ds,
        labels: label_col.map(|_| labels),
    })
}

/// Write a numeric table with the given header.
pub fn write_table_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}
