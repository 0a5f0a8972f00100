//! Dataset loading and preprocessing.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FsvmError, Result};

/// Variance below which a feature is treated as constant and left unscaled.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Labeled samples. Labels are arbitrary integer class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: Vec<i64>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: Vec<i64>) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        if x.nrows() == 0 {
            return Err(FsvmError::invalid("dataset has no samples"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FsvmError::invalid("dataset contains non-finite features"));
        }
        Ok(Dataset {
            name: name.into(),
            x,
            y,
            feature_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Distinct class ids in ascending order.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.y.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = self.x.select_rows(idx);
        Dataset {
            name: self.name.clone(),
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Pads with zero columns up to `width`. Sparse files only list the
    /// indices they use, so a test file may come out narrower than training.
    pub fn pad_to(&mut self, width: usize) -> Result<()> {
        let d = self.dim();
        if d > width {
            return Err(FsvmError::invalid(format!(
                "{}: {d} features, model expects {width}",
                self.name
            )));
        }
        if d < width {
            self.x = self.x.clone().resize_horizontally(width, 0.0);
        }
        Ok(())
    }
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> FsvmError {
    FsvmError::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| FsvmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn source_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_label(tok: &str, source: &str, line: usize) -> Result<i64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(source, line, format!("label '{tok}' is not a number")))?;
    if !v.is_finite() || v.fract() != 0.0 || v.abs() > 1e15 {
        return Err(parse_err(
            source,
            line,
            format!("label '{tok}' is not an integer class id"),
        ));
    }
    Ok(v as i64)
}

/// Parses LIBSVM sparse text: `<label> <index>:<value> ...` with 1-based,
/// strictly ascending indices. Blank lines are skipped.
pub fn parse_libsvm(text: &str, source: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut width = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut toks = raw.split_whitespace();
        let Some(first) = toks.next() else { continue };
        labels.push(parse_label(first, source, line)?);
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(source, line, format!("expected index:value, got '{tok}'")))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| parse_err(source, line, format!("index '{idx}' is not an integer")))?;
            if idx < 1 {
                return Err(parse_err(source, line, "index must be ≥ 1"));
            }
            let idx = idx as usize;
            if idx <= last {
                return Err(parse_err(
                    source,
                    line,
                    format!("indices must be ascending ({idx} after {last})"),
                ));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(source, line, format!("value '{val}' is not a number")))?;
            if !val.is_finite() {
                return Err(parse_err(source, line, format!("value '{val}' is not finite")));
            }
            last = idx;
            row.push((idx, val));
        }
        width = width.max(last);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(source, 0, "no samples"));
    }
    let mut x = DMatrix::zeros(rows.len(), width);
    for (r, row) in rows.iter().enumerate() {
        for &(idx, val) in row {
            x[(r, idx - 1)] = val;
        }
    }
    Dataset::new(source, x, labels)
}

pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    parse_libsvm(&read(path)?, &source_name(path))
}

/// Parses CSV with a header row. The label column is `label_col` (default
/// `label`); every other column is a numeric feature.
pub fn parse_csv(text: &str, source: &str, label_col: Option<&str>) -> Result<Dataset> {
    let label_name = label_col.unwrap_or("label");
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(source, 1, e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_name)
        .ok_or_else(|| parse_err(source, 1, format!("no label column named '{label_name}'")))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let d = names.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for (i, field) in rec.iter().enumerate() {
            if i == label_idx {
                labels.push(parse_label(field, source, line)?);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(source, line, format!("value '{field}' is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(source, line, format!("value '{field}' is not finite")));
                }
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_err(source, 1, "no samples"));
    }
    let mut ds = Dataset::new(source, DMatrix::from_row_slice(labels.len(), d, &values), labels)?;
    ds.feature_names = Some(names);
    Ok(ds)
}

pub fn load_csv(path: &Path, label_col: Option<&str>) -> Result<Dataset> {
    parse_csv(&read(path)?, &source_name(path), label_col)
}

/// Reads an unlabeled numeric CSV. A first row containing any non-numeric
/// field is taken as a header and skipped.
pub fn parse_points_csv(text: &str, source: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(source, i + 1, e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let parsed: Vec<Option<f64>> = rec.iter().map(|f| f.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            continue;
        }
        if let Some(w) = width {
            if parsed.len() != w {
                return Err(parse_err(
                    source,
                    line,
                    format!("expected {w} fields, found {}", parsed.len()),
                ));
            }
        }
        width = Some(parsed.len());
        for (field, v) in rec.iter().zip(parsed) {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(parse_err(
                        source,
                        line,
                        format!("value '{field}' is not a finite number"),
                    ))
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(source, 1, "no points"));
    }
    Ok(DMatrix::from_row_slice(rows, width.unwrap_or(0), &values))
}

pub fn load_points_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_points_csv(&read(path)?, &source_name(path))
}

/// Features for prediction. LIBSVM files always carry labels; a CSV file
/// carries them only when its header names the label column.
pub fn load_for_prediction(
    path: &Path,
    format: DataFormat,
    label_col: Option<&str>,
) -> Result<(DMatrix<f64>, Option<Vec<i64>>)> {
    match format {
        DataFormat::Libsvm => load_libsvm(path).map(|ds| (ds.x, Some(ds.y))),
        DataFormat::Csv => {
            let text = read(path)?;
            let source = source_name(path);
            let label_name = label_col.unwrap_or("label");
            let first = text.lines().next().unwrap_or("");
            if first.split(',').any(|h| h.trim() == label_name) {
                parse_csv(&text, &source, label_col).map(|ds| (ds.x, Some(ds.y)))
            } else {
                parse_points_csv(&text, &source).map(|x| (x, None))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Libsvm,
    Csv,
}

impl DataFormat {
    /// `.csv` files are CSV, everything else LIBSVM.
    pub fn guess(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Libsvm,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat, label_col: Option<&str>) -> Result<Dataset> {
    match format {
        DataFormat::Libsvm => load_libsvm(path),
        DataFormat::Csv => load_csv(path, label_col),
    }
}

/// Per-feature z-score transform fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation per column; constant columns
    /// get scale 1.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(FsvmError::invalid("cannot fit a scaler on zero samples"));
        }
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let m = c.sum() / n;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > VARIANCE_FLOOR { var.sqrt() } else { 1.0 });
        }
        Ok(Scaler { mean, scale })
    }

    pub fn identity(d: usize) -> Self {
        Scaler {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.mean.len(), x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }

    pub fn transform_point(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.mean.len(), x.len())?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]),
        ))
    }
}

/// Fits a scaler on `train` and applies it to `train` and every dataset in
/// `others`.
pub fn standardize(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>, Scaler)> {
    let scaler = Scaler::fit(&train.x)?;
    let apply = |d: &Dataset| -> Result<Dataset> {
        Ok(Dataset {
            x: scaler.transform(&d.x)?,
            ..d.clone()
        })
    };
    let t = apply(train)?;
    let o = others.iter().map(apply).collect::<Result<Vec<_>>>()?;
    Ok((t, o, scaler))
}
