//! Synthetic instance generation, weight-map construction, and matrix /
//! report persistence.
//!
//! All randomized generation runs on ChaCha8 seeded with a user u64, so
//! instances are reproducible bit-for-bit across platforms; library-default
//! generators are never used here.

use crate::sparsity::{spar_slice, SparsityError, WeightVector};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: cannot parse {token:?} as a number")]
    Parse { path: String, line: usize, token: String },
    #[error("{path}:{line}: row has {got} columns, expected {expected}")]
    Ragged { path: String, line: usize, expected: usize, got: usize },
    #[error("{path}: file contains no data")]
    Empty { path: String },
    #[error("report serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error(transparent)]
    Domain(#[from] SparsityError),
}

/// An exactly factorable NMF instance `Y = X_true H_true` with the column
/// sparsity of `X_true` recorded.
#[derive(Debug, Clone)]
pub struct SyntheticNmfInstance {
    pub y: Array2<f64>,
    pub x_true: Array2<f64>,
    pub h_true: Array2<f64>,
    pub seed: u64,
    /// Exact mean `spar` over the columns of `x_true`.
    pub true_avg_col_sparsity: f64,
}

/// `X_true` entries are standard normals clipped at zero (about half the
/// entries survive, so columns have sparsity around 0.5 for large m);
/// `H_true` entries are uniform on [0, 1). A clipped column that comes out
/// identically zero is redrawn.
pub fn gen_synthetic_nmf(m: usize, n: usize, r: usize, seed: u64) -> SyntheticNmfInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((m, r));
    for k in 0..r {
        loop {
            for i in 0..m {
                let v: f64 = StandardNormal.sample(&mut rng);
                x[[i, k]] = v.max(0.0);
            }
            if (0..m).any(|i| x[[i, k]] > 0.0) {
                break;
            }
        }
    }
    let mut h = Array2::<f64>::zeros((r, n));
    for i in 0..r {
        for j in 0..n {
            h[[i, j]] = rng.random::<f64>();
        }
    }
    let y = x.dot(&h);
    let true_avg_col_sparsity = if m >= 2 {
        (0..r)
            .map(|k| spar_slice(&x.column(k).to_vec()))
            .sum::<f64>()
            / r as f64
    } else {
        0.0
    };
    SyntheticNmfInstance { y, x_true: x, h_true: h, seed, true_avg_col_sparsity }
}

/// Radial weight map for `height x width` images: the pixel at 1-based
/// position (i, j) gets weight `exp(||(i,j) - center||_2 / sigma)` with
/// center ((height+1)/2, (width+1)/2), vectorized column-major. Larger
/// weights far from the center push the sparsity there.
pub fn radial_weights(height: usize, width: usize, sigma: f64) -> Result<WeightVector, SparsityError> {
    let ci = (height as f64 + 1.0) / 2.0;
    let cj = (width as f64 + 1.0) / 2.0;
    let mut w = Vec::with_capacity(height * width);
    for j in 1..=width {
        for i in 1..=height {
            let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
            w.push((d / sigma).exp());
        }
    }
    if w.len() == 1 {
        // WeightVector needs n >= 2; a 1x1 map is only useful as a scalar
        return Err(SparsityError::TooShort { min: 2, got: 1 });
    }
    WeightVector::new(w)
}

/// Parse a CSV of decimal numbers, one row per line. Rows must be rectangular.
pub fn load_matrix(path: &Path) -> Result<Array2<f64>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                let t = tok.trim();
                t.parse::<f64>().map_err(|_| DataError::Parse {
                    path: name.clone(),
                    line: idx + 1,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(DataError::Ragged {
                path: name,
                line: idx + 1,
                expected: width,
                got: row.len(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty { path: name });
    }
    let height = rows.len();
    Ok(Array2::from_shape_fn((height, width), |(i, j)| rows[i][j]))
}

/// Write a matrix as CSV with 17 significant digits, enough for an exact
/// f64 round trip through `load_matrix`.
pub fn save_matrix(m: &Array2<f64>, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.16e}", m[[i, j]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Run record persisted as JSON with a fixed key order.
///
/// `wall_ms` is zero unless timing was explicitly requested, so reports from
/// repeated runs with the same seed are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub schema: String,
    pub variant: String,
    pub seed: u64,
    pub s: f64,
    pub epsilon: f64,
    pub error_trace: Vec<f64>,
    pub sparsity_trace: Vec<f64>,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub achieved_sparsity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discontinuous: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity_band: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    pub fn new(variant: &str, seed: u64, s: f64, epsilon: f64) -> Self {
        Report {
            schema: "1".to_string(),
            variant: variant.to_string(),
            seed,
            s,
            epsilon,
            error_trace: Vec::new(),
            sparsity_trace: Vec::new(),
            wall_ms: 0,
            achieved_sparsity: None,
            mu_star: None,
            iterations: None,
            discontinuous: None,
            sparsity_band: None,
            best_error: None,
            error: None,
        }
    }
}

/// Serialize the report as pretty JSON; key order follows the struct fields.
pub fn write_report(report: &Report, path: &Path) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(report)?;
    let mut f = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(json.as_bytes()).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(b"\n").map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<Report, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}
