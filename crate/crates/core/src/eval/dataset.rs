//! Tabular datasets and their CSV form.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

/// Prefix of per-disease indicator columns in CSV files.
pub const DISEASE_PREFIX: &str = "disease:";
pub const LABEL_COLUMN: &str = "label";
pub const BLOCK_COLUMN: &str = "block_id";

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Integer class per row.
    Label(Vec<usize>),
    /// Per-disease 0/1 indicators, one row per sample.
    Diseases { names: Vec<String>, indicators: Vec<Vec<u8>> },
}

/// Feature rows (missing values are NaN), a target and optional block ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub x: Tensor<f64>,
    pub target: Target,
    pub block_id: Option<Vec<u32>>,
}

/// 1 for rows with at least one disease present, else 0.
pub fn binarize_target(indicators: &[Vec<u8>]) -> Vec<usize> {
    indicators.iter().map(|row| usize::from(row.iter().any(|&v| v != 0))).collect()
}

impl TabularDataset {
    pub fn new(feature_names: Vec<String>, x: Tensor<f64>, target: Target, block_id: Option<Vec<u32>>) -> Result<Self> {
        let d = Self { feature_names, x, target, block_id };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        let (n, f) = self.x.dims2()?;
        if n < 2 {
            return Err(Error::InvalidInput(format!("a dataset needs at least 2 rows, got {n}")));
        }
        if self.feature_names.len() != f {
            return dim_err(format!("{} feature names for {f} columns", self.feature_names.len()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.feature_names.iter().find(|name| !seen.insert(name.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate feature name {dup:?}")));
        }
        let rows = match &self.target {
            Target::Label(y) => y.len(),
            Target::Diseases { names, indicators } => {
                if indicators.iter().any(|r| r.len() != names.len()) {
                    return dim_err("indicator rows disagree with the disease list");
                }
                indicators.len()
            }
        };
        if rows != n || self.block_id.as_ref().is_some_and(|b| b.len() != n) {
            return dim_err(format!("{n} feature rows but targets or block ids of another length"));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.x.shape()[1]
    }

    /// Binary labels: binarized disease indicators, or the label column.
    pub fn binary_labels(&self) -> Result<Vec<usize>> {
        match &self.target {
            Target::Diseases { indicators, .. } => Ok(binarize_target(indicators)),
            Target::Label(y) => match y.iter().find(|&&c| c > 1) {
                Some(c) => Err(Error::InvalidInput(format!("label {c} is not binary"))),
                None => Ok(y.clone()),
            },
        }
    }

    /// Columns `idx`, in that order.
    pub fn select_features(&self, idx: &[usize]) -> Result<Self> {
        let (n, f) = self.x.dims2()?;
        if let Some(&bad) = idx.iter().find(|&&j| j >= f) {
            return dim_err(format!("feature index {bad} out of range for {f} columns"));
        }
        let mut data = Vec::with_capacity(n * idx.len());
        for i in 0..n {
            let row = self.x.row(i);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Self::new(
            idx.iter().map(|&j| self.feature_names[j].clone()).collect(),
            Tensor::new(vec![n, idx.len()], data)?,
            self.target.clone(),
            self.block_id.clone(),
        )
    }

    /// Column indices of `names`, in that order.
    pub fn feature_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.feature_names.iter().position(|f| f == n).ok_or_else(|| Error::InvalidInput(format!("no feature column named {n:?}")))
            })
            .collect()
    }

    /// Rows `idx`, in that order (indices may repeat).
    pub fn subset_rows(&self, idx: &[usize]) -> Result<Tensor<f64>> {
        take_rows(&self.x, idx)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut features = Vec::new();
        let mut diseases = Vec::new();
        let (mut label, mut block) = (None, None);
        for (j, name) in header.iter().enumerate() {
            if let Some(d) = name.strip_prefix(DISEASE_PREFIX) {
                diseases.push((j, d.to_owned()));
            } else if name == LABEL_COLUMN {
                label = Some(j);
            } else if name == BLOCK_COLUMN {
                block = Some(j);
            } else {
                features.push((j, name.clone()));
            }
        }
        if label.is_some() == !diseases.is_empty() {
            return Err(Error::Format(format!(
                "CSV needs either a `{LABEL_COLUMN}` column or `{DISEASE_PREFIX}` columns, not both or neither"
            )));
        }
        let mut x = Vec::new();
        let (mut labels, mut indicators, mut blocks) = (Vec::new(), Vec::new(), Vec::new());
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let line = r + 2;
            let cell = |j: usize| record.get(j).unwrap_or("").trim();
            let int = |j: usize, what: &str| -> Result<u64> {
                cell(j).parse().map_err(|_| Error::Format(format!("line {line}: {what} {:?} is not a nonnegative integer", cell(j))))
            };
            for &(j, ref name) in &features {
                let c = cell(j);
                x.push(if c.is_empty() {
                    f64::NAN
                } else {
                    c.parse::<f64>().map_err(|_| Error::Format(format!("line {line}: {name} value {c:?} is not a number")))?
                });
            }
            if let Some(j) = label {
                labels.push(int(j, "label")? as usize);
            }
            if !diseases.is_empty() {
                let row: Result<Vec<u8>> = diseases
                    .iter()
                    .map(|&(j, _)| match int(j, "indicator")? {
                        v @ (0 | 1) => Ok(v as u8),
                        v => Err(Error::Format(format!("line {line}: indicator {v} is not 0 or 1"))),
                    })
                    .collect();
                indicators.push(row?);
            }
            if let Some(j) = block {
                blocks.push(int(j, "block id")? as u32);
            }
        }
        let n = if features.is_empty() { 0 } else { x.len() / features.len() };
        if features.is_empty() || n < 2 {
            return Err(Error::Format("CSV needs at least one feature column and two data rows".into()));
        }
        let target = match label {
            Some(_) => Target::Label(labels),
            None => Target::Diseases { names: diseases.into_iter().map(|d| d.1).collect(), indicators },
        };
        Self::new(features.into_iter().map(|f| f.1).collect(), Tensor::new(vec![n, x.len() / n], x)?, target, block.map(|_| blocks))
    }

    /// Features, then targets, then `block_id`; missing values as empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = self.feature_names.clone();
        match &self.target {
            Target::Label(_) => header.push(LABEL_COLUMN.into()),
            Target::Diseases { names, .. } => header.extend(names.iter().map(|d| format!("{DISEASE_PREFIX}{d}"))),
        }
        if self.block_id.is_some() {
            header.push(BLOCK_COLUMN.into());
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }).collect();
            match &self.target {
                Target::Label(y) => rec.push(y[i].to_string()),
                Target::Diseases { indicators, .. } => rec.extend(indicators[i].iter().map(u8::to_string)),
            }
            if let Some(b) = &self.block_id {
                rec.push(b[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the named feature columns of a CSV, in the order given; other
/// columns (targets included) are ignored and empty cells are missing.
pub fn read_feature_csv<R: Read>(reader: R, names: &[String]) -> Result<Tensor<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| header.iter().position(|h| h == n).ok_or_else(|| Error::Format(format!("CSV has no column named {n:?}"))))
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut n = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (&j, name) in cols.iter().zip(names) {
            let c = record.get(j).unwrap_or("").trim();
            x.push(if c.is_empty() {
                f64::NAN
            } else {
                c.parse::<f64>().map_err(|_| Error::Format(format!("line {}: {name} value {c:?} is not a number", r + 2)))?
            });
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    Tensor::new(vec![n, names.len()], x)
}

/// Copies rows `idx` of `x`, in that order.
pub fn take_rows(x: &Tensor<f64>, idx: &[usize]) -> Result<Tensor<f64>> {
    let (n, f) = x.dims2()?;
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return dim_err(format!("row index {bad} out of range for {n} rows"));
    }
    let mut data = Vec::with_capacity(idx.len() * f);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), f], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_marks_any_disease() {
        let ind = vec![vec![0, 0, 0], vec![0, 1, 0], vec![1, 1, 0]];
        assert_eq!(binarize_target(&ind), vec![0, 1, 1]);
    }

    #[test]
    fn csv_round_trip_keeps_missing_cells() {
        let x = Tensor::from_f64(&[2, 2], &[1.5, f64::NAN, -2.0, 0.1]).unwrap();
        let target = Target::Diseases { names: vec!["Botrytis".into()], indicators: vec![vec![1], vec![0]] };
        let d = TabularDataset::new(vec!["a".into(), "b".into()], x, target, Some(vec![3, 4])).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "a,b,disease:Botrytis,block_id\n1.5,,1,3\n-2,0.1,0,4\n");
        let back = TabularDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.feature_names, d.feature_names);
        assert!(back.x.at(0, 1).is_nan());
        assert_eq!(back.target, d.target);
        assert_eq!(back.block_id, d.block_id);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(TabularDataset::read_csv("a,label\nx,1\n2,0\n".as_bytes()).is_err());
        assert!(TabularDataset::read_csv("a,b\n1,2\n3,4\n".as_bytes()).is_err());
        assert!(TabularDataset::read_csv("a,a,label\n1,2,0\n3,4,1\n".as_bytes()).is_err());
    }
}
