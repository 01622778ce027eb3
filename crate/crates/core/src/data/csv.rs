//! CSV ingestion with a mandatory `f0,...,fD-1[,label]` header.

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

use super::{LabeledDataset, UnlabeledDataset};

/// Result of [`load_csv`]: labeled when the header ends in a `label` column.
#[derive(Clone, Debug)]
pub enum CsvData {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

pub fn load_csv(path: &Path) -> Result<CsvData> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub(crate) fn parse_csv(text: &str) -> Result<CsvData> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty csv file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let labeled = cols.last() == Some(&"label");
    let d = if labeled { cols.len() - 1 } else { cols.len() };
    if d == 0 {
        return Err(Error::Data("csv header has no feature columns".into()));
    }
    for (i, name) in cols[..d].iter().enumerate() {
        let expected = format!("f{i}");
        if *name != expected {
            return Err(Error::Data(format!(
                "csv header column {i} is {name:?}, expected {expected:?}"
            )));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for (row_idx, line) in lines.enumerate() {
        let row = row_idx + 2; // 1-based, counting the header
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::RaggedRows {
                row,
                expected: cols.len(),
                found: fields.len(),
            });
        }
        for field in &fields[..d] {
            let v: f64 = field.parse().map_err(|_| Error::NonNumeric {
                row,
                value: field.to_string(),
            })?;
            features.push(v);
        }
        if labeled {
            let raw = fields[d];
            let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                row,
                value: raw.to_string(),
            })?;
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Error::NonNumeric {
                    row,
                    value: raw.to_string(),
                });
            }
            labels.push(v as usize);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("csv has a header but no data rows".into()));
    }

    let features = Tensor::matrix(n, d, features)?;
    if labeled {
        let k = labels.iter().copied().max().map_or(1, |m| m + 1);
        Ok(CsvData::Labeled(LabeledDataset::new(features, labels, k)?))
    } else {
        Ok(CsvData::Unlabeled(UnlabeledDataset::new(features)?))
    }
}

/// Serialize a labeled dataset in the format [`load_csv`] accepts.
pub fn to_csv(ds: &LabeledDataset) -> String {
    let d = ds.dim();
    let mut out = String::new();
    for j in 0..d {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("f{j}"));
    }
    out.push_str(",label\n");
    for i in 0..ds.len() {
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", ds.features.data()[i * d + j]));
        }
        out.push_str(&format!(",{}\n", ds.labels[i]));
    }
    out
}
