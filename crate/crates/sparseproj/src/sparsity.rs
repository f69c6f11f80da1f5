//! Hoyer-style sparsity measures and the soft-thresholding operator.
//!
//! The sparsity of a nonzero vector `x` with `n >= 2` entries is
//!
//! ```text
//!   spar(x) = (sqrt(n) - ||x||_1 / ||x||_2) / (sqrt(n) - 1)   in [0, 1]
//! ```
//!
//! It is 0 exactly when all entries have the same magnitude, 1 exactly when a
//! single entry is nonzero, and is invariant to scaling by any nonzero factor.
//! Unlike the l0 count it varies smoothly: `[1, 1e-6, 1e-6]` is sparser than
//! `[1, 1, 0]`.
//!
//! The weighted generalization replaces the l1 norm with a weighted sum,
//! `||x||_w = w^T |x|`, giving
//!
//! ```text
//!   spar_w(x) = (||w||_2 - ||x||_w / ||x||_2) / (||w||_2 - min_j w(j))
//! ```
//!
//! which reduces to `spar` for `w = e` (all ones). A coordinate with `w(j) = 0`
//! is exempt from sparsity; a large `w(j)` forces `x(j)` toward zero when a
//! high weighted sparsity is requested.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparsityError {
    #[error("vector must have at least {min} entries, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("operation requires a nonzero vector")]
    ZeroVector,
    #[error("lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("weights must be nonnegative, entry {index} is negative")]
    NegativeWeight { index: usize },
    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
}

/// A dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, SparsityError> {
        if entries.is_empty() {
            return Err(SparsityError::TooShort { min: 1, got: 0 });
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(SparsityError::NonFinite { index: i });
        }
        Ok(DenseVector(entries))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// An ordered set of nonzero vectors, the projection input.
///
/// Every member must be nonzero with at least two entries (the sparsity
/// measure is undefined at zero and for n = 1). Lengths may differ.
#[derive(Debug, Clone)]
pub struct VectorGroup(Vec<DenseVector>);

impl VectorGroup {
    pub fn new(vectors: Vec<DenseVector>) -> Result<Self, SparsityError> {
        if vectors.is_empty() {
            return Err(SparsityError::TooShort { min: 1, got: 0 });
        }
        for v in &vectors {
            if v.len() < 2 {
                return Err(SparsityError::TooShort { min: 2, got: v.len() });
            }
            if v.is_zero() {
                return Err(SparsityError::ZeroVector);
            }
        }
        Ok(VectorGroup(vectors))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SparsityError> {
        let vs = rows
            .into_iter()
            .map(DenseVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        VectorGroup::new(vs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vectors(&self) -> &[DenseVector] {
        &self.0
    }

    /// Total entry count over the whole group.
    pub fn total_len(&self) -> usize {
        self.0.iter().map(|v| v.len()).sum()
    }
}

/// A nonzero, nonnegative weight vector.
///
/// `n >= 2` and at least one positive entry, so `||w||_2 > min_j w(j)` and the
/// weighted-sparsity denominator is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, SparsityError> {
        if entries.len() < 2 {
            return Err(SparsityError::TooShort { min: 2, got: entries.len() });
        }
        for (i, &v) in entries.iter().enumerate() {
            if !v.is_finite() {
                return Err(SparsityError::NonFinite { index: i });
            }
            if v < 0.0 {
                return Err(SparsityError::NegativeWeight { index: i });
            }
        }
        if entries.iter().all(|&v| v == 0.0) {
            return Err(SparsityError::ZeroVector);
        }
        Ok(WeightVector(entries))
    }

    /// All-ones weights of length `n`, for which spar_w reduces to spar.
    pub fn ones(n: usize) -> Result<Self, SparsityError> {
        WeightVector::new(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Sparsity on raw slices; callers must guarantee the preconditions.
pub(crate) fn spar_slice(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    let l2: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n.sqrt() - l1 / l2) / (n.sqrt() - 1.0)
}

/// `spar(x) = (sqrt(n) - ||x||_1/||x||_2) / (sqrt(n) - 1)`.
///
/// Requires a nonzero vector with at least two entries.
pub fn spar(x: &DenseVector) -> Result<f64, SparsityError> {
    if x.len() < 2 {
        return Err(SparsityError::TooShort { min: 2, got: x.len() });
    }
    if x.is_zero() {
        return Err(SparsityError::ZeroVector);
    }
    Ok(spar_slice(x.as_slice()))
}

/// Weighted sparsity `spar_w(x) = (||w||_2 - ||x||_w/||x||_2) / (||w||_2 - min_j w(j))`
/// with `||x||_w = w^T |x|`.
pub fn spar_weighted(x: &DenseVector, w: &WeightVector) -> Result<f64, SparsityError> {
    if x.len() != w.len() {
        return Err(SparsityError::LengthMismatch { left: x.len(), right: w.len() });
    }
    if x.is_zero() {
        return Err(SparsityError::ZeroVector);
    }
    let wnorm = w.norm_l2();
    let wmin = w.min();
    let xw: f64 = x
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(v, wi)| wi * v.abs())
        .sum();
    Ok((wnorm - xw / x.norm_l2()) / (wnorm - wmin))
}

/// Soft thresholding `st(x, lambda) = sign(x) o [|x| - lambda e]_+`.
pub fn soft_threshold(x: &DenseVector, lambda: f64) -> Result<DenseVector, SparsityError> {
    if !(lambda >= 0.0) {
        return Err(SparsityError::NegativeThreshold(lambda));
    }
    let out = x
        .as_slice()
        .iter()
        .map(|&v| {
            let shrunk = (v.abs() - lambda).max(0.0);
            if v < 0.0 {
                -shrunk
            } else {
                shrunk
            }
        })
        .collect();
    DenseVector::new(out)
}

/// Arithmetic mean of `spar` over the group.
pub fn average_sparsity(g: &VectorGroup) -> Result<f64, SparsityError> {
    let mut acc = 0.0;
    for v in g.vectors() {
        acc += spar(v)?;
    }
    Ok(acc / g.len() as f64)
}
