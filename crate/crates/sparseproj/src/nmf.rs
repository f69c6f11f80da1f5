//! NMF under the Frobenius objective with five update strategies, including
//! the projection-based sparse variants.
//!
//! All variants alternate an X update with an H update; the H update is
//! always plain HALS sweeps. The X update distinguishes them:
//!
//! * `Nenmf` — Nesterov-accelerated projected gradient (FGM) onto the
//!   nonnegative orthant.
//! * `Ahals` — HALS sweeps on X as well.
//! * `Psnmf` — FGM where the orthant projection is replaced by the grouped
//!   sparse projection of the columns of X at a target average sparsity.
//! * `Cpsnmf` — same but projecting each column to the target individually.
//! * `L1Ahals` — HALS with per-column l1 penalties tuned toward the target
//!   sparsity.
//! * `Wsnmf` — FGM with the weighted grouped projection and a per-column
//!   weight map.
//!
//! The sparse feasible sets are nonconvex, so FGM is not a descent method
//! there; the best (X, H) pair by exact relative error is kept in memory
//! across outer iterations and returned, while iteration proceeds from the
//! last projected iterate.

use crate::gsp::{project_group, ProjectionConfig, ProjectionError};
use crate::sparsity::{spar_slice, DenseVector, VectorGroup};
use crate::wgsp::{project_group_weighted, WeightGroup};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NmfError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("H has no energy; the gradient step size is undefined")]
    DegenerateH,
    #[error("relative error is undefined for a zero matrix Y")]
    ZeroMatrix,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfVariant {
    Nenmf,
    Ahals,
    Psnmf,
    Cpsnmf,
    L1Ahals,
    Wsnmf,
}

impl NmfVariant {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "nenmf" => Some(NmfVariant::Nenmf),
            "ahals" => Some(NmfVariant::Ahals),
            "psnmf" => Some(NmfVariant::Psnmf),
            "cpsnmf" => Some(NmfVariant::Cpsnmf),
            "l1ahals" => Some(NmfVariant::L1Ahals),
            "wsnmf" => Some(NmfVariant::Wsnmf),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NmfVariant::Nenmf => "nenmf",
            NmfVariant::Ahals => "ahals",
            NmfVariant::Psnmf => "psnmf",
            NmfVariant::Cpsnmf => "cpsnmf",
            NmfVariant::L1Ahals => "l1ahals",
            NmfVariant::Wsnmf => "wsnmf",
        }
    }

    fn needs_sparsity(&self) -> bool {
        !matches!(self, NmfVariant::Nenmf | NmfVariant::Ahals)
    }
}

/// Which factor a HALS sweep updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorSide {
    /// The m x r basis matrix X (column-wise updates).
    Basis,
    /// The r x n coefficient matrix H (row-wise updates).
    Coefficients,
}

#[derive(Debug, Clone)]
pub struct NmfProblem {
    pub y: Array2<f64>,
    pub rank: usize,
    pub variant: NmfVariant,
    /// Target average column sparsity; required by the sparse variants.
    pub sparsity: Option<f64>,
    /// Per-column weight map; required by Wsnmf.
    pub weights: Option<WeightGroup>,
    pub outer_iters: usize,
    pub seed: u64,
    /// Optional initial factors; uniform(0,1) entries from the seed otherwise.
    pub init: Option<(Array2<f64>, Array2<f64>)>,
}

impl NmfProblem {
    pub fn new(y: Array2<f64>, rank: usize, variant: NmfVariant) -> Self {
        NmfProblem {
            y,
            rank,
            variant,
            sparsity: None,
            weights: None,
            outer_iters: 500,
            seed: 0,
            init: None,
        }
    }

    fn validate(&self) -> Result<(), NmfError> {
        let (m, n) = self.y.dim();
        if self.rank == 0 || self.rank > m.min(n) {
            return Err(NmfError::Config(format!(
                "rank must satisfy 1 <= r <= min(m, n) = {}, got {}",
                m.min(n),
                self.rank
            )));
        }
        if self.y.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(NmfError::Config(
                "Y must be elementwise finite and nonnegative".into(),
            ));
        }
        if self.y.iter().all(|&v| v == 0.0) {
            return Err(NmfError::ZeroMatrix);
        }
        if self.variant.needs_sparsity() {
            match self.sparsity {
                Some(s) if (0.0..=1.0).contains(&s) => {}
                Some(s) => {
                    return Err(NmfError::Config(format!(
                        "sparsity target must be in [0, 1], got {s}"
                    )))
                }
                None => {
                    return Err(NmfError::Config(format!(
                        "variant {} requires a sparsity target",
                        self.variant.name()
                    )))
                }
            }
            if m < 2 {
                return Err(NmfError::Config(
                    "sparse variants need at least 2 rows".into(),
                ));
            }
        }
        match (self.variant, &self.weights) {
            (NmfVariant::Wsnmf, None) => {
                return Err(NmfError::Config(
                    "variant wsnmf requires a weight map".into(),
                ))
            }
            (NmfVariant::Wsnmf, Some(w)) => {
                if w.len() != self.rank {
                    return Err(NmfError::Config(format!(
                        "weight map has {} vectors, expected rank {}",
                        w.len(),
                        self.rank
                    )));
                }
                if w.weights().iter().any(|wv| wv.len() != m) {
                    return Err(NmfError::Config(format!(
                        "weight vectors must have length m = {m}"
                    )));
                }
            }
            _ => {}
        }
        if self.outer_iters == 0 {
            return Err(NmfError::Config("outer_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NmfResult {
    pub x: Array2<f64>,
    pub h: Array2<f64>,
    pub error_trace: Vec<f64>,
    pub sparsity_trace: Vec<f64>,
    pub best_error: f64,
}

/// `||Y - XH||_F / ||Y||_F`.
pub fn relative_error(y: &Array2<f64>, x: &Array2<f64>, h: &Array2<f64>) -> Result<f64, NmfError> {
    if y.nrows() != x.nrows() || x.ncols() != h.nrows() || h.ncols() != y.ncols() {
        return Err(NmfError::Config(format!(
            "shapes do not conform: Y {}x{}, X {}x{}, H {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ynorm == 0.0 {
        return Err(NmfError::ZeroMatrix);
    }
    let diff = y - &x.dot(h);
    Ok(diff.iter().map(|v| v * v).sum::<f64>().sqrt() / ynorm)
}

const HALS_DIAG_GUARD: f64 = 1e-16;

/// One HALS sweep over the chosen factor: closed-form nonnegative updates
/// column by column (X) or row by row (H). A column whose Gram diagonal has
/// collapsed is reseeded from the dominant column of the current residual.
pub fn hals_update(
    y: &Array2<f64>,
    x: &Array2<f64>,
    h: &Array2<f64>,
    side: FactorSide,
) -> Array2<f64> {
    match side {
        FactorSide::Basis => {
            let mut xm = x.clone();
            hals_sweep_x(y, &mut xm, h, None);
            xm
        }
        FactorSide::Coefficients => {
            let mut hm = h.clone();
            hals_sweep_h(y, x, &mut hm);
            hm
        }
    }
}

fn hals_sweep_x(y: &Array2<f64>, x: &mut Array2<f64>, h: &Array2<f64>, lambdas: Option<&[f64]>) {
    let r = x.ncols();
    let gram = h.dot(&h.t()); // r x r
    let w = y.dot(&h.t()); // m x r
    for k in 0..r {
        let gkk = gram[[k, k]];
        if gkk < HALS_DIAG_GUARD {
            reseed_column(y, x, h, k);
            continue;
        }
        let xg = x.dot(&gram.column(k)); // m
        let lam = lambdas.map_or(0.0, |l| l[k]);
        for i in 0..x.nrows() {
            let v = x[[i, k]] + (w[[i, k]] - xg[i] - lam) / gkk;
            x[[i, k]] = v.max(0.0);
        }
    }
}

fn hals_sweep_h(y: &Array2<f64>, x: &Array2<f64>, h: &mut Array2<f64>) {
    let r = h.nrows();
    let gram = x.t().dot(x); // r x r
    let w = x.t().dot(y); // r x n
    for k in 0..r {
        let gkk = gram[[k, k]];
        if gkk < HALS_DIAG_GUARD {
            reseed_row(y, x, h, k);
            continue;
        }
        let gh = gram.row(k).dot(h); // n
        for j in 0..h.ncols() {
            let v = h[[k, j]] + (w[[k, j]] - gh[j]) / gkk;
            h[[k, j]] = v.max(0.0);
        }
    }
}

fn reseed_column(y: &Array2<f64>, x: &mut Array2<f64>, h: &Array2<f64>, k: usize) {
    let resid = y - &x.dot(h);
    let mut best = 0;
    let mut best_norm = -1.0;
    for j in 0..resid.ncols() {
        let nrm: f64 = resid.column(j).iter().map(|v| v * v).sum();
        if nrm > best_norm {
            best = j;
            best_norm = nrm;
        }
    }
    for i in 0..x.nrows() {
        x[[i, k]] = resid[[i, best]].max(0.0) + 1e-6;
    }
}

fn reseed_row(y: &Array2<f64>, x: &Array2<f64>, h: &mut Array2<f64>, k: usize) {
    let resid = y - &x.dot(h);
    let mut best = 0;
    let mut best_norm = -1.0;
    for i in 0..resid.nrows() {
        let nrm: f64 = resid.row(i).iter().map(|v| v * v).sum();
        if nrm > best_norm {
            best = i;
            best_norm = nrm;
        }
    }
    for j in 0..h.ncols() {
        h[[k, j]] = resid[[best, j]].max(0.0) + 1e-6;
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration
/// (50 iterations, relative tolerance 1e-8, deterministic all-ones start).
fn max_eigenvalue(g: &Array2<f64>) -> f64 {
    let n = g.nrows();
    let mut v = Array1::from_elem(n, (n as f64).sqrt().recip());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = g.dot(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let next = v.dot(&g.dot(&v));
        if (next - lambda).abs() <= 1e-8 * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// The feasible-set projection used inside the FGM X update.
#[derive(Debug, Clone)]
pub enum ColumnProjector {
    /// No projection (plain gradient steps).
    Identity,
    /// Entrywise `max(0, .)`, the standard NMF orthant projection.
    Clip,
    /// Clip, then grouped sparse projection of all columns to average
    /// sparsity `s`.
    GspColumns(f64),
    /// Clip, then per-column sparse projection, each to sparsity `s`.
    GspPerColumn(f64),
    /// Clip, then weighted grouped projection with one weight vector per
    /// column.
    WgspColumns(f64, WeightGroup),
}

impl ColumnProjector {
    fn is_convex(&self) -> bool {
        matches!(self, ColumnProjector::Identity | ColumnProjector::Clip)
    }

    fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>, NmfError> {
        match self {
            ColumnProjector::Identity => Ok(x.clone()),
            ColumnProjector::Clip => Ok(x.mapv(|v| v.max(0.0))),
            ColumnProjector::GspColumns(s) => {
                let cols = nonneg_columns(x);
                let group = VectorGroup::new(cols).map_err(ProjectionError::from)?;
                let res = project_group(&group, &ProjectionConfig::new(*s))?;
                Ok(columns_to_matrix(x.nrows(), &res.projected))
            }
            ColumnProjector::GspPerColumn(s) => {
                let cols = nonneg_columns(x);
                let cfg = ProjectionConfig::new(*s);
                let mut out = Vec::with_capacity(cols.len());
                for c in cols {
                    let g = VectorGroup::new(vec![c]).map_err(ProjectionError::from)?;
                    out.push(project_group(&g, &cfg)?.projected.into_iter().next().unwrap());
                }
                Ok(columns_to_matrix(x.nrows(), &out))
            }
            ColumnProjector::WgspColumns(s, weights) => {
                let cols = nonneg_columns(x);
                let group = VectorGroup::new(cols).map_err(ProjectionError::from)?;
                let res = project_group_weighted(&group, weights, &ProjectionConfig::new(*s))?;
                Ok(columns_to_matrix(x.nrows(), &res.projected))
            }
        }
    }
}

/// Columns clipped at zero; an all-nonpositive column gets its pre-clip
/// argmax entry reseeded so the projection input stays nonzero.
fn nonneg_columns(x: &Array2<f64>) -> Vec<DenseVector> {
    let mut out = Vec::with_capacity(x.ncols());
    for k in 0..x.ncols() {
        let col = x.column(k);
        let mut v: Vec<f64> = col.iter().map(|&a| a.max(0.0)).collect();
        if v.iter().all(|&a| a == 0.0) {
            let mut best = 0;
            for i in 1..col.len() {
                if col[i] > col[best] {
                    best = i;
                }
            }
            v[best] = 1e-8;
        }
        out.push(DenseVector::new(v).unwrap());
    }
    out
}

fn columns_to_matrix(m: usize, cols: &[DenseVector]) -> Array2<f64> {
    Array2::from_shape_fn((m, cols.len()), |(i, k)| cols[k][i])
}

/// Half squared Frobenius misfit via the expanded quadratic form; `w = Y H^T`
/// and `gram = H H^T` are shared across inner iterations.
fn objective_quadratic(
    ynorm_sq: f64,
    x: &Array2<f64>,
    w: &Array2<f64>,
    gram: &Array2<f64>,
) -> f64 {
    let xw: f64 = x.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
    let xtx = x.t().dot(x);
    let gx: f64 = gram.iter().zip(xtx.iter()).map(|(a, b)| a * b).sum();
    0.5 * (ynorm_sq - 2.0 * xw + gx)
}

/// Nesterov-accelerated projected gradient on `f(X) = 1/2 ||Y - XH||_F^2`
/// with fixed step `1/L`, `L` the largest eigenvalue of `H H^T`.
///
/// With a convex projector the best candidate (including the projected start)
/// is returned, so the objective never increases. With the nonconvex sparse
/// projectors the last projected iterate is returned to keep the iteration
/// moving; callers retain a best-iterate snapshot across outer iterations.
pub fn fgm_update(
    y: &Array2<f64>,
    h: &Array2<f64>,
    x0: &Array2<f64>,
    inner_iters: usize,
    projector: &ColumnProjector,
) -> Result<Array2<f64>, NmfError> {
    let gram = h.dot(&h.t());
    let lip = max_eigenvalue(&gram);
    if lip <= 0.0 {
        return Err(NmfError::DegenerateH);
    }
    let w = y.dot(&h.t());
    let ynorm_sq: f64 = y.iter().map(|v| v * v).sum();

    let mut x = projector.apply(x0)?;
    let mut best = x.clone();
    let mut f_best = objective_quadratic(ynorm_sq, &x, &w, &gram);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    for _ in 0..inner_iters {
        let grad = yk.dot(&gram) - &w;
        let step = &yk - &(grad / lip);
        let xn = projector.apply(&step)?;
        let f = objective_quadratic(ynorm_sq, &xn, &w, &gram);
        if f < f_best {
            best = xn.clone();
            f_best = f;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &xn + &((&xn - &x) * ((t - 1.0) / t_next));
        x = xn;
        t = t_next;
    }
    if projector.is_convex() {
        Ok(best)
    } else {
        Ok(x)
    }
}

const L1_TUNE_FACTOR: f64 = 1.05;
const L1_TUNE_DEADBAND: f64 = 0.01;

/// Multiplicative update of the per-column l1 penalties: grow a column's
/// penalty while it is below the target sparsity band, shrink it above.
pub fn l1_tune_lambdas(x: &Array2<f64>, s: f64, lambda_prev: &[f64]) -> Vec<f64> {
    let mut out = lambda_prev.to_vec();
    for (k, lam) in out.iter_mut().enumerate() {
        let sp = column_sparsity(x, k);
        if sp < s - L1_TUNE_DEADBAND {
            *lam *= L1_TUNE_FACTOR;
        } else if sp > s + L1_TUNE_DEADBAND {
            *lam /= L1_TUNE_FACTOR;
        }
    }
    out
}

/// A zero column counts as maximally sparse.
fn column_sparsity(x: &Array2<f64>, k: usize) -> f64 {
    let col = x.column(k).to_vec();
    if col.iter().all(|&v| v == 0.0) {
        1.0
    } else {
        spar_slice(&col)
    }
}

fn average_column_sparsity(x: &Array2<f64>) -> f64 {
    (0..x.ncols()).map(|k| column_sparsity(x, k)).sum::<f64>() / x.ncols() as f64
}

const HALS_SWEEPS: usize = 2;
const FGM_INNER_ITERS: usize = 10;

/// Run `outer_iters` alternations of the selected variant, recording the
/// relative error and the column-average sparsity of X after each outer
/// iteration, and returning the best (X, H) pair seen.
pub fn run_nmf(p: &NmfProblem) -> Result<NmfResult, NmfError> {
    p.validate()?;
    let (m, n) = p.y.dim();
    let r = p.rank;
    let (mut x, mut h) = match &p.init {
        Some((x0, h0)) => {
            if x0.dim() != (m, r) || h0.dim() != (r, n) {
                return Err(NmfError::Config(
                    "initial factors have the wrong shape".into(),
                ));
            }
            (x0.clone(), h0.clone())
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            let x = Array2::from_shape_fn((m, r), |_| rng.random::<f64>());
            let h = Array2::from_shape_fn((r, n), |_| rng.random::<f64>());
            (x, h)
        }
    };

    let projector = match p.variant {
        NmfVariant::Nenmf => Some(ColumnProjector::Clip),
        NmfVariant::Psnmf => Some(ColumnProjector::GspColumns(p.sparsity.unwrap())),
        NmfVariant::Cpsnmf => Some(ColumnProjector::GspPerColumn(p.sparsity.unwrap())),
        NmfVariant::Wsnmf => Some(ColumnProjector::WgspColumns(
            p.sparsity.unwrap(),
            p.weights.clone().unwrap(),
        )),
        NmfVariant::Ahals | NmfVariant::L1Ahals => None,
    };
    let mut lambdas = vec![0.01 * p.y.mean().unwrap_or(0.0); r];

    let mut error_trace = Vec::with_capacity(p.outer_iters);
    let mut sparsity_trace = Vec::with_capacity(p.outer_iters);
    let mut best_error = f64::INFINITY;
    let mut best_pair = (x.clone(), h.clone());

    for _ in 0..p.outer_iters {
        match p.variant {
            NmfVariant::Ahals => {
                for _ in 0..HALS_SWEEPS {
                    hals_sweep_x(&p.y, &mut x, &h, None);
                }
            }
            NmfVariant::L1Ahals => {
                for _ in 0..HALS_SWEEPS {
                    hals_sweep_x(&p.y, &mut x, &h, Some(&lambdas));
                }
                lambdas = l1_tune_lambdas(&x, p.sparsity.unwrap(), &lambdas);
            }
            _ => {
                x = fgm_update(&p.y, &h, &x, FGM_INNER_ITERS, projector.as_ref().unwrap())?;
            }
        }
        for _ in 0..HALS_SWEEPS {
            hals_sweep_h(&p.y, &x, &mut h);
        }
        if p.variant == NmfVariant::L1Ahals {
            // absorb the H row scales into X, otherwise the scale ambiguity
            // lets the factorization evade the l1 penalty entirely
            for k in 0..r {
                let d: f64 = h.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
                if d > 0.0 {
                    for j in 0..n {
                        h[[k, j]] /= d;
                    }
                    for i in 0..m {
                        x[[i, k]] *= d;
                    }
                }
            }
        }
        let err = relative_error(&p.y, &x, &h)?;
        error_trace.push(err);
        sparsity_trace.push(average_column_sparsity(&x));
        if err < best_error {
            best_error = err;
            best_pair = (x.clone(), h.clone());
        }
    }

    Ok(NmfResult {
        x: best_pair.0,
        h: best_pair.1,
        error_trace,
        sparsity_trace,
        best_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic_nmf;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.random::<f64>())
    }

    fn frob_obj(y: &Array2<f64>, x: &Array2<f64>, h: &Array2<f64>) -> f64 {
        let d = y - &x.dot(h);
        d.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn relative_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_matrix(&mut rng, 5, 3);
        let h = random_matrix(&mut rng, 3, 5);
        let y = x.dot(&h);
        assert!(relative_error(&y, &x, &h).unwrap() < 1e-14);

        let zero = Array2::zeros((5, 3));
        let e = relative_error(&y, &zero, &h).unwrap();
        assert!((e - 1.0).abs() < 1e-14);

        assert!(matches!(
            relative_error(&Array2::zeros((5, 5)), &x, &h),
            Err(NmfError::ZeroMatrix)
        ));

        // elementwise oracle
        let y2 = random_matrix(&mut rng, 5, 5);
        let x2 = random_matrix(&mut rng, 5, 2);
        let h2 = random_matrix(&mut rng, 2, 5);
        let prod = x2.dot(&h2);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                num += (y2[[i, j]] - prod[[i, j]]).powi(2);
                den += y2[[i, j]].powi(2);
            }
        }
        let oracle = (num / den).sqrt();
        assert!((relative_error(&y2, &x2, &h2).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn hals_objective_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y = random_matrix(&mut rng, 12, 9);
            let x = random_matrix(&mut rng, 12, 4);
            let h = random_matrix(&mut rng, 4, 9);
            let before = frob_obj(&y, &x, &h);
            let x2 = hals_update(&y, &x, &h, FactorSide::Basis);
            let mid = frob_obj(&y, &x2, &h);
            assert!(mid <= before + 1e-10 * before);
            let h2 = hals_update(&y, &x2, &h, FactorSide::Coefficients);
            let after = frob_obj(&y, &x2, &h2);
            assert!(after <= mid + 1e-10 * mid);
        }
    }

    #[test]
    fn hals_exact_factorization_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 8, 3).mapv(|v| v + 0.1);
        let h = random_matrix(&mut rng, 3, 7).mapv(|v| v + 0.1);
        let y = x.dot(&h);
        let x2 = hals_update(&y, &x, &h, FactorSide::Basis);
        let h2 = hals_update(&y, &x, &h, FactorSide::Coefficients);
        for (a, b) in x.iter().zip(x2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in h.iter().zip(h2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hals_converges_to_rank_one_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Array1::from_shape_fn(10, |_| rng.random::<f64>() + 0.2);
        let v = Array1::from_shape_fn(8, |_| rng.random::<f64>() + 0.2);
        let y = Array2::from_shape_fn((10, 8), |(i, j)| u[i] * v[j]);
        // leading singular pair by power iteration, independent of HALS
        let mut sv = Array1::from_elem(8, 1.0 / (8f64).sqrt());
        for _ in 0..200 {
            let yu = y.dot(&sv);
            let ytyu = y.t().dot(&yu);
            let nrm = ytyu.iter().map(|a| a * a).sum::<f64>().sqrt();
            sv = ytyu / nrm;
        }
        let su = y.dot(&sv);
        let best = Array2::from_shape_fn((10, 8), |(i, j)| su[i] * sv[j]);

        let mut x = random_matrix(&mut rng, 10, 1);
        let mut h = random_matrix(&mut rng, 1, 8);
        for _ in 0..200 {
            x = hals_update(&y, &x, &h, FactorSide::Basis);
            h = hals_update(&y, &x, &h, FactorSide::Coefficients);
        }
        let fit = x.dot(&h);
        for (a, b) in fit.iter().zip(best.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn fgm_fixed_point_at_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 6, 2).mapv(|v| v + 0.1);
        let h = random_matrix(&mut rng, 2, 6).mapv(|v| v + 0.1);
        let y = x.dot(&h);
        let out = fgm_update(&y, &h, &x, 10, &ColumnProjector::Clip).unwrap();
        for (a, b) in x.iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fgm_first_sparse_step_decreases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let y = random_matrix(&mut rng, 15, 12);
            let h = random_matrix(&mut rng, 4, 12);
            let x0 = random_matrix(&mut rng, 15, 4);
            let proj = ColumnProjector::GspColumns(0.6);
            // start from a feasible point
            let x_feas = proj.apply(&x0).unwrap();
            let before = frob_obj(&y, &x_feas, &h);
            let x1 = fgm_update(&y, &h, &x_feas, 1, &proj).unwrap();
            let after = frob_obj(&y, &x1, &h);
            assert!(
                after <= before + 1e-9 * before,
                "trial {trial}: {before} -> {after}"
            );
        }
    }

    #[test]
    fn fgm_projected_iterates_stay_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random_matrix(&mut rng, 20, 15);
        let h = random_matrix(&mut rng, 5, 15);
        let x0 = random_matrix(&mut rng, 20, 5);
        for inner in [1, 3, 10] {
            let out = fgm_update(&y, &h, &x0, inner, &ColumnProjector::GspColumns(0.7)).unwrap();
            let avg = average_column_sparsity(&out);
            assert!((avg - 0.7).abs() <= 1e-4, "inner {inner}: {avg}");
        }
    }

    #[test]
    fn fgm_degenerate_h_rejected() {
        let y = Array2::from_elem((4, 4), 1.0);
        let h = Array2::zeros((2, 4));
        let x = Array2::from_elem((4, 2), 1.0);
        assert!(matches!(
            fgm_update(&y, &h, &x, 5, &ColumnProjector::Clip),
            Err(NmfError::DegenerateH)
        ));
    }

    #[test]
    fn l1_tuning_rules() {
        let mut x = Array2::zeros((6, 2));
        // column 0 constant (sparsity 0), column 1 one-sparse (sparsity 1)
        for i in 0..6 {
            x[[i, 0]] = 1.0;
        }
        x[[0, 1]] = 3.0;
        let prev = vec![0.5, 0.5];
        let tuned = l1_tune_lambdas(&x, 0.5, &prev);
        assert!((tuned[0] - 0.5 * L1_TUNE_FACTOR).abs() < 1e-15);
        assert!((tuned[1] - 0.5 / L1_TUNE_FACTOR).abs() < 1e-15);
        // inside the deadband: unchanged
        let s0 = column_sparsity(&x, 0);
        let same = l1_tune_lambdas(&x, s0 + 0.005, &prev);
        assert_eq!(same[0], 0.5);
    }

    #[test]
    fn l1_closed_loop_reaches_target_band() {
        let inst = gen_synthetic_nmf(60, 60, 6, 11);
        let mut p = NmfProblem::new(inst.y, 6, NmfVariant::L1Ahals);
        p.sparsity = Some(0.6);
        p.outer_iters = 500;
        p.seed = 11;
        let res = run_nmf(&p).unwrap();
        let mut spars: Vec<f64> = (0..6).map(|k| column_sparsity(&res.x, k)).collect();
        spars.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (spars[2] + spars[3]);
        assert!((median - 0.6).abs() <= 0.05, "median {median}");
    }

    #[test]
    fn run_nmf_is_deterministic() {
        let inst = gen_synthetic_nmf(30, 30, 4, 2);
        let mut p = NmfProblem::new(inst.y, 4, NmfVariant::Psnmf);
        p.sparsity = Some(0.6);
        p.outer_iters = 40;
        p.seed = 9;
        let a = run_nmf(&p).unwrap();
        let b = run_nmf(&p).unwrap();
        assert_eq!(a.error_trace, b.error_trace);
        assert_eq!(a.sparsity_trace, b.sparsity_trace);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn exact_input_with_true_factors_stays_exact() {
        let inst = gen_synthetic_nmf(25, 25, 3, 5);
        for variant in [NmfVariant::Ahals, NmfVariant::Nenmf, NmfVariant::Psnmf] {
            let mut p = NmfProblem::new(inst.y.clone(), 3, variant);
            p.sparsity = Some(inst.true_avg_col_sparsity);
            p.outer_iters = 10;
            p.init = Some((inst.x_true.clone(), inst.h_true.clone()));
            let res = run_nmf(&p).unwrap();
            for e in &res.error_trace {
                assert!(*e < 1e-10, "{variant:?} drifted to {e}");
            }
        }
    }

    #[test]
    fn factors_stay_nonnegative() {
        let inst = gen_synthetic_nmf(20, 18, 3, 8);
        for variant in [
            NmfVariant::Nenmf,
            NmfVariant::Ahals,
            NmfVariant::Psnmf,
            NmfVariant::Cpsnmf,
            NmfVariant::L1Ahals,
        ] {
            let mut p = NmfProblem::new(inst.y.clone(), 3, variant);
            p.sparsity = Some(0.6);
            p.outer_iters = 25;
            let res = run_nmf(&p).unwrap();
            assert!(res.x.iter().all(|&v| v >= 0.0), "{variant:?} X negative");
            assert!(res.h.iter().all(|&v| v >= 0.0), "{variant:?} H negative");
            assert_eq!(res.error_trace.len(), 25);
            assert!((res.best_error
                - res.error_trace.iter().cloned().fold(f64::INFINITY, f64::min))
            .abs()
                < 1e-15);
        }
    }

    #[test]
    fn monotone_traces_for_convex_variants() {
        let inst = gen_synthetic_nmf(30, 30, 4, 13);
        for variant in [NmfVariant::Nenmf, NmfVariant::Ahals] {
            let mut p = NmfProblem::new(inst.y.clone(), 4, variant);
            p.outer_iters = 60;
            p.seed = 13;
            let res = run_nmf(&p).unwrap();
            for w in res.error_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{variant:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn psnmf_sparsity_trace_pinned() {
        let inst = gen_synthetic_nmf(40, 40, 5, 21);
        let mut p = NmfProblem::new(inst.y, 5, NmfVariant::Psnmf);
        p.sparsity = Some(0.75);
        p.outer_iters = 30;
        let res = run_nmf(&p).unwrap();
        for sp in &res.sparsity_trace {
            assert!((sp - 0.75).abs() <= 1e-4, "sparsity {sp}");
        }
    }

    #[test]
    fn wsnmf_requires_weights() {
        let inst = gen_synthetic_nmf(10, 10, 2, 0);
        let mut p = NmfProblem::new(inst.y, 2, NmfVariant::Wsnmf);
        p.sparsity = Some(0.5);
        assert!(matches!(run_nmf(&p), Err(NmfError::Config(_))));
    }

    #[test]
    fn config_validation_errors() {
        let inst = gen_synthetic_nmf(10, 10, 2, 0);
        let p = NmfProblem::new(inst.y.clone(), 20, NmfVariant::Ahals);
        assert!(matches!(run_nmf(&p), Err(NmfError::Config(_))));
        let p2 = NmfProblem::new(inst.y.clone(), 2, NmfVariant::Psnmf);
        assert!(matches!(run_nmf(&p2), Err(NmfError::Config(_))));
        let mut p3 = NmfProblem::new(inst.y, 2, NmfVariant::Psnmf);
        p3.sparsity = Some(1.4);
        assert!(matches!(run_nmf(&p3), Err(NmfError::Config(_))));
    }
}
