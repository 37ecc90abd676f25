//! CSV and JSON readers/writers for matrices, answer codes and marginals.
//!
//! Matrix files carry a header row and a row-label column; the top-left cell
//! is the row-label header. `NA` (any case) or an empty cell marks a missing
//! entry.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::distcal::Categorical;
use crate::error::{Error, Result};
use crate::matcore::MaskedMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_header: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub matrix: MaskedMatrix,
}

impl LabeledMatrix {
    /// Default labels `r0..` and `q0..`.
    pub fn unlabeled(matrix: MaskedMatrix) -> Self {
        Self {
            row_header: "id".into(),
            row_labels: (0..matrix.nrows()).map(|i| format!("r{i}")).collect(),
            col_labels: (0..matrix.ncols()).map(|j| format!("q{j}")).collect(),
            matrix,
        }
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(())
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

/// Formats a finite double with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NA".into()
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    require(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(parse_err(path, "need a row-label column and at least one data column"));
    }
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    Ok((header, rows))
}

pub fn read_matrix(path: &Path) -> Result<LabeledMatrix> {
    let (header, rows) = read_table(path)?;
    let (n, m) = (rows.len(), header.len() - 1);
    let mut values = DMatrix::from_element(n, m, f64::NAN);
    let mut row_labels = Vec::with_capacity(n);
    for (i, rec) in rows.iter().enumerate() {
        row_labels.push(rec[0].trim().to_string());
        for j in 0..m {
            let cell = &rec[j + 1];
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, format!("row {} column {}: '{cell}' is not a number", i + 1, j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, format!("row {} column {}: non-finite value", i + 1, j + 1)));
            }
            values[(i, j)] = v;
        }
    }
    Ok(LabeledMatrix {
        row_header: header[0].clone(),
        row_labels,
        col_labels: header[1..].to_vec(),
        matrix: MaskedMatrix::from_nan(values)?,
    })
}

pub fn write_matrix(path: &Path, m: &LabeledMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![m.row_header.clone()];
    header.extend(m.col_labels.iter().cloned());
    w.write_record(&header)?;
    for i in 0..m.matrix.nrows() {
        let mut rec = vec![m.row_labels[i].clone()];
        rec.extend((0..m.matrix.ncols()).map(|j| m.matrix.get(i, j).map(fmt_f64).unwrap_or_else(|| "NA".into())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dense matrix; non-finite cells become `NA`.
pub fn write_dense(path: &Path, values: &DMatrix<f64>, row_labels: &[String], col_labels: &[String]) -> Result<()> {
    let m = MaskedMatrix::from_nan(values.map(|v| if v.is_finite() { v } else { f64::NAN }))?;
    write_matrix(
        path,
        &LabeledMatrix {
            row_header: "id".into(),
            row_labels: row_labels.to_vec(),
            col_labels: col_labels.to_vec(),
            matrix: m,
        },
    )
}

/// Twin answer codes: one row per twin, one column per question, values in
/// `1..=K`. Returns `codes[question][twin]`.
pub fn read_codes(path: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let (header, rows) = read_table(path)?;
    let m = header.len() - 1;
    let mut codes = vec![Vec::with_capacity(rows.len()); m];
    for (i, rec) in rows.iter().enumerate() {
        for (j, col) in codes.iter_mut().enumerate() {
            let cell = rec[j + 1].trim();
            let v: usize = cell
                .parse()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| parse_err(path, format!("row {} column {}: '{cell}' is not a code >= 1", i + 1, j + 1)))?;
            col.push(v);
        }
    }
    Ok((header[1..].to_vec(), codes))
}

pub fn write_codes(path: &Path, codes: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["twin".to_string()];
    header.extend((0..codes.len()).map(|j| format!("q{j}")));
    w.write_record(&header)?;
    let n = codes.first().map_or(0, Vec::len);
    for i in 0..n {
        let mut rec = vec![format!("t{i}")];
        rec.extend(codes.iter().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Human marginals: one row per question, one column per category.
pub fn read_marginals(path: &Path) -> Result<Vec<Categorical>> {
    let (header, rows) = read_table(path)?;
    let k = header.len() - 1;
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let probs = (0..k)
                .map(|c| {
                    rec[c + 1]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| parse_err(path, format!("row {} column {}: not a probability", i + 1, c + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            Categorical::new(probs).map_err(|e| parse_err(path, format!("row {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_marginals(path: &Path, dists: &[Categorical]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = dists.first().map_or(0, Categorical::k);
    let mut header = vec!["question".to_string()];
    header.extend((1..=k).map(|c| format!("k{c}")));
    w.write_record(&header)?;
    for (j, d) in dists.iter().enumerate() {
        let mut rec = vec![format!("q{j}")];
        rec.extend(d.probs().iter().map(|&p| fmt_f64(p)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Human marginals from raw responses (rows are people, columns questions,
/// values are codes `1..=K`); missing answers are skipped.
pub fn marginals_from_responses(m: &MaskedMatrix, k: usize) -> Result<Vec<Categorical>> {
    (0..m.ncols())
        .map(|j| {
            let labels = m
                .column_observed(j)
                .into_iter()
                .map(|(_, v)| {
                    let r = v.round();
                    if (v - r).abs() > 1e-9 || r < 1.0 || r > k as f64 {
                        Err(Error::param(format!("question {j}: response {v} is not a code in 1..={k}")))
                    } else {
                        Ok(r as usize)
                    }
                })
                .collect::<Result<Vec<usize>>>()?;
            if labels.is_empty() {
                return Err(Error::EmptyColumn(j));
            }
            Categorical::from_labels(&labels, k)
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}
