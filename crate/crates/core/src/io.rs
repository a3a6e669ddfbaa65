//! File formats for matrices and distributions.
//!
//! Matrix CSV: the first record is `d,k`; it is followed by `d` records of
//! `k` numbers each. Numbers are written with the shortest representation
//! that parses back to the same `f64`.
//!
//! ```text
//! 3,2
//! 1,0
//! 0,1
//! 0.5,-2
//! ```
//!
//! Matrix JSON: `{"rows":3,"cols":2,"data":[1.0,0.0,0.0,1.0,0.5,-2.0]}` with
//! `data` in row-major order.
//!
//! Distribution JSON: `{"k":2,"support":[[0.1,0.2],[0.5,0.5]],"probs":[0.25,0.75]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::DiscreteDist;
use crate::error::{Error, Result};
use crate::matrix::Mat;

#[derive(Serialize, Deserialize)]
struct MatJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DistJson {
    k: usize,
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

pub fn mat_to_csv(a: &Mat) -> String {
    let mut out = format!("{},{}\n", a.rows(), a.cols());
    for i in 0..a.rows() {
        let row: Vec<String> = a.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn mat_from_csv(text: &str) -> Result<Mat> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let head = records
        .next()
        .ok_or_else(|| Error::InvalidInput("empty matrix file".into()))??;
    let dims: Vec<usize> = head
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidInput(format!("bad header: {e}")))?;
    if dims.len() != 2 {
        return Err(Error::InvalidInput("header must be `d,k`".into()));
    }
    let (d, k) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(d * k);
    let mut rows = 0;
    for rec in records {
        let rec = rec?;
        if rec.len() != k {
            return Err(Error::ShapeMismatch {
                expected: k,
                found: rec.len(),
            });
        }
        for f in rec.iter() {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad entry {f:?}: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            found: rows,
        });
    }
    Mat::from_row_slice(d, k, &data)
}

pub fn mat_to_json(a: &Mat) -> String {
    serde_json::to_string(&MatJson {
        rows: a.rows(),
        cols: a.cols(),
        data: a.to_row_major(),
    })
    .expect("matrix serializes")
}

pub fn mat_from_json(text: &str) -> Result<Mat> {
    let m: MatJson = serde_json::from_str(text)?;
    Mat::from_row_slice(m.rows, m.cols, &m.data)
}

/// Reads a matrix, choosing the format from the file extension.
pub fn read_mat(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => mat_from_json(&text),
        _ => mat_from_csv(&text),
    }
}

pub fn dist_to_json(f: &DiscreteDist) -> String {
    serde_json::to_string(&DistJson {
        k: f.dim(),
        support: f.support().to_vec(),
        probs: f.probs().to_vec(),
    })
    .expect("distribution serializes")
}

pub fn dist_from_json(text: &str) -> Result<DiscreteDist> {
    let j: DistJson = serde_json::from_str(text)?;
    if j.support.iter().any(|x| x.len() != j.k) {
        return Err(Error::InvalidInput("support point of wrong dimension".into()));
    }
    DiscreteDist::new(j.support, j.probs)
}

pub fn read_dist(path: &Path) -> Result<DiscreteDist> {
    dist_from_json(&std::fs::read_to_string(path)?)
}
