//! Grouped sparse projection: given nonzero vectors `x_1..x_r` and a target
//! average sparsity `s`, find the closest set of vectors whose mean `spar`
//! is `s` (within `eps`).
//!
//! The problem reduces to a scalar root find. Writing each solution as
//! `alpha_i * sign(x_i) o xbar_i` with `xbar_i >= 0`, `||xbar_i||_2 = 1`, the
//! optimal direction for a multiplier `mu >= 0` is
//!
//! ```text
//!   xbar_i(mu) = st(|x_i|, mu beta_i) / ||st(|x_i|, mu beta_i)||_2
//! ```
//!
//! (or the 1-sparse indicator at the largest entry of `|x_i|` once the
//! threshold wipes the whole vector), where `beta_i = 1/(sqrt(n_i) - 1)`.
//! The multiplier solves `g(mu) = 0` with
//!
//! ```text
//!   g(mu) = sum_i beta_i e^T xbar_i(mu) - k_s,
//!   k_s   = sum_i sqrt(n_i)/(sqrt(n_i) - 1) - r s,
//! ```
//!
//! equivalently `g(mu) = r (s - mean spar(xbar(mu)))`. `g` is nonincreasing on
//! `[0, mu_tilde]`, reaches `r(s-1) <= 0` at `mu_tilde` (the smallest `mu`
//! where every direction is 1-sparse), and jumps wherever a vector's largest
//! magnitudes are tied — at such targets only a band of sparsities is
//! achievable and the solver reports it.
//!
//! The root finder is Newton from `mu = 0` safeguarded by bisection: the
//! candidate falls back to the bracket midpoint when it leaves the bracket,
//! and whenever an iteration fails to shrink the bracket by the factor `r_l`
//! while the step was small, a midpoint evaluation forces the shrink. The
//! solver then continues from whichever evaluated point has the smaller
//! residual, so a converging one-sided Newton run is never discarded.

use crate::sparsity::{spar_slice, DenseVector, SparsityError, VectorGroup};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Domain(#[from] SparsityError),
    #[error("no convergence after {iterations} iterations; bracket [{mu_lo}, {mu_hi}]")]
    MaxIterations { iterations: usize, mu_lo: f64, mu_hi: f64 },
}

/// Solver parameters. `s` is the target average sparsity; `eps` the accuracy
/// on the achieved average; `r_l` in `[1/2, 1)` the per-iteration bracket
/// shrink factor the safeguard enforces.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionConfig {
    pub s: f64,
    pub eps: f64,
    pub r_l: f64,
    pub max_iters: usize,
}

impl ProjectionConfig {
    pub fn new(s: f64) -> Self {
        ProjectionConfig { s, eps: 1e-4, r_l: 0.9, max_iters: 100 }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), ProjectionError> {
        if !(0.0..=1.0).contains(&self.s) {
            return Err(ProjectionError::InvalidConfig(format!(
                "target sparsity must be in [0, 1], got {}",
                self.s
            )));
        }
        if !(self.eps > 0.0) {
            return Err(ProjectionError::InvalidConfig(format!(
                "accuracy eps must be positive, got {}",
                self.eps
            )));
        }
        if !(0.5..1.0).contains(&self.r_l) {
            return Err(ProjectionError::InvalidConfig(format!(
                "safeguard ratio r_l must be in [1/2, 1), got {}",
                self.r_l
            )));
        }
        if self.max_iters == 0 {
            return Err(ProjectionError::InvalidConfig(
                "max_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-group constants of the dual residual: `beta_i = 1/(sqrt(n_i)-1)` and
/// `k_s = sum_i sqrt(n_i) beta_i - r s`.
#[derive(Debug, Clone)]
pub struct GroupConstants {
    pub betas: Vec<f64>,
    pub k_s: f64,
}

impl GroupConstants {
    pub fn new(g: &VectorGroup, s: f64) -> Self {
        let betas: Vec<f64> = g
            .vectors()
            .iter()
            .map(|v| 1.0 / ((v.len() as f64).sqrt() - 1.0))
            .collect();
        let k_s = g
            .vectors()
            .iter()
            .zip(&betas)
            .map(|(v, b)| (v.len() as f64).sqrt() * b)
            .sum::<f64>()
            - g.len() as f64 * s;
        GroupConstants { betas, k_s }
    }
}

/// Outcome of a grouped projection.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// The projected vectors, same lengths and componentwise signs as the input.
    pub projected: Vec<DenseVector>,
    /// The optimal unit nonnegative directions `xbar_i(mu*)`.
    pub unit_directions: Vec<DenseVector>,
    pub mu_star: f64,
    /// Solver loop passes; 0 when the input was already feasible.
    pub iterations: usize,
    pub achieved_sparsity: f64,
    /// Set when the solve stalled on a jump of `g`; the target sparsity is
    /// then unattainable and `sparsity_band` holds the achievable values
    /// immediately below and above the jump.
    pub discontinuous: bool,
    pub bracket: (f64, f64),
    pub sparsity_band: Option<(f64, f64)>,
}

/// One bracket state per evaluation, for invariant checks and diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    pub g_mu: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub g_lo: f64,
    pub g_hi: f64,
}

pub type SolveTrace = Vec<IterationRecord>;

/// Optimal unit direction for a single vector at multiplier `mu`:
/// the normalized soft threshold of `x_abs` at level `mu * beta`, or the
/// 1-sparse indicator at the largest entry (lowest index on ties) once
/// everything is thresholded away.
///
/// `x_abs` must be nonnegative and nonzero.
pub fn candidate_direction(x_abs: &DenseVector, mu: f64, beta: f64) -> DenseVector {
    DenseVector::new(candidate_direction_slice(x_abs.as_slice(), mu * beta)).unwrap()
}

fn candidate_direction_slice(xa: &[f64], t: f64) -> Vec<f64> {
    let mut y: Vec<f64> = xa.iter().map(|&v| (v - t).max(0.0)).collect();
    let norm2: f64 = y.iter().map(|v| v * v).sum();
    if norm2 > 0.0 {
        let norm = norm2.sqrt();
        for v in &mut y {
            *v /= norm;
        }
        y
    } else {
        let mut best = 0;
        for (j, &v) in xa.iter().enumerate() {
            if v > xa[best] {
                best = j;
            }
        }
        let mut e = vec![0.0; xa.len()];
        e[best] = 1.0;
        e
    }
}

/// Value and one-sided derivative of the per-vector dual term
/// `beta * e^T xbar(mu)`. Entries with `|x(j)| = mu beta` count as inactive
/// (right-sided derivative); a vector in the 1-sparse regime contributes
/// `beta` with derivative 0.
fn g_term(xa: &[f64], beta: f64, mu: f64) -> (f64, f64) {
    let t = mu * beta;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut active = 0usize;
    for &v in xa {
        if v > t {
            let y = v - t;
            sum += y;
            sum_sq += y * y;
            active += 1;
        }
    }
    if sum_sq > 0.0 {
        let norm = sum_sq.sqrt();
        let value = beta * sum / norm;
        let deriv = if active >= 2 {
            -beta * beta * (active as f64 * sum_sq - sum * sum) / (sum_sq * norm)
        } else {
            0.0
        };
        (value, deriv)
    } else {
        (beta, 0.0)
    }
}

fn g_eval_core(abs: &[Vec<f64>], consts: &GroupConstants, mu: f64) -> (f64, f64) {
    let mut value = -consts.k_s;
    let mut deriv = 0.0;
    for (xa, &b) in abs.iter().zip(&consts.betas) {
        let (v, d) = g_term(xa, b, mu);
        value += v;
        deriv += d;
    }
    (value, deriv)
}

/// The dual residual `g(mu) = sum_i beta_i e^T xbar_i(mu) - k_s` and its
/// analytic one-sided derivative.
pub fn g_eval(g: &VectorGroup, consts: &GroupConstants, mu: f64) -> (f64, f64) {
    let abs = abs_group(g);
    g_eval_core(&abs, consts, mu)
}

fn abs_group(g: &VectorGroup) -> Vec<Vec<f64>> {
    g.vectors()
        .iter()
        .map(|v| v.as_slice().iter().map(|x| x.abs()).collect())
        .collect()
}

/// Largest and second largest entry of a nonnegative slice (n >= 2).
fn top_two(xa: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in xa {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first, second)
}

fn mu_tilde_core(abs: &[Vec<f64>], betas: &[f64]) -> f64 {
    abs.iter()
        .zip(betas)
        .map(|(xa, b)| top_two(xa).1 / b)
        .fold(0.0, f64::max)
}

/// Smallest `mu` past which every direction `xbar_i(mu)` is 1-sparse:
/// the largest per-vector second-biggest entry of `|x_i|/beta_i`.
pub fn mu_tilde(g: &VectorGroup, consts: &GroupConstants) -> f64 {
    mu_tilde_core(&abs_group(g), &consts.betas)
}

/// Relative tolerance under which tied leading magnitudes are treated as equal.
const TIE_REL_TOL: f64 = 1e-12;

fn discontinuity_core(abs: &[Vec<f64>], betas: &[f64]) -> Vec<f64> {
    let mut points = Vec::new();
    for (xa, &b) in abs.iter().zip(betas) {
        let max = xa.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            let ties = xa.iter().filter(|&&v| v >= max * (1.0 - TIE_REL_TOL)).count();
            if ties >= 2 {
                points.push(max / b);
            }
        }
    }
    points
}

/// Multipliers where `g` jumps: `max_j |x_i(j)| / beta_i` for every vector
/// whose largest magnitude is attained at two or more entries (relative tie
/// tolerance 1e-12). At such a point the vector's whole remaining support
/// vanishes at once.
pub fn discontinuity_points(g: &VectorGroup, consts: &GroupConstants) -> Vec<f64> {
    discontinuity_core(&abs_group(g), &consts.betas)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reconstruct(
    g: &VectorGroup,
    abs: &[Vec<f64>],
    betas: &[f64],
    mu: f64,
) -> (Vec<DenseVector>, Vec<DenseVector>, f64) {
    let mut projected = Vec::with_capacity(g.len());
    let mut directions = Vec::with_capacity(g.len());
    let mut spar_sum = 0.0;
    for ((x, xa), &b) in g.vectors().iter().zip(abs).zip(betas) {
        let xbar = candidate_direction_slice(xa, mu * b);
        let alpha: f64 = xa.iter().zip(&xbar).map(|(a, d)| a * d).sum();
        let xt: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&xbar)
            .map(|(&xi, &di)| sign(xi) * alpha * di)
            .collect();
        spar_sum += spar_slice(&xt);
        projected.push(DenseVector::new(xt).unwrap());
        directions.push(DenseVector::new(xbar).unwrap());
    }
    let achieved = spar_sum / g.len() as f64;
    (projected, directions, achieved)
}

/// Project the group onto mean sparsity `s`, returning the per-evaluation
/// bracket states alongside the result.
pub fn project_group_with_trace(
    g: &VectorGroup,
    cfg: &ProjectionConfig,
) -> Result<(ProjectionResult, SolveTrace), ProjectionError> {
    cfg.validate()?;
    let r = g.len() as f64;
    let tol = r * cfg.eps;
    let abs = abs_group(g);
    let consts = GroupConstants::new(g, cfg.s);
    let mut trace = SolveTrace::new();

    let (g0, d0) = g_eval_core(&abs, &consts, 0.0);
    if g0 <= tol {
        // Already feasible: xbar_i(0) = |x_i|/||x_i||, alpha recovers x_i.
        let directions = abs
            .iter()
            .map(|xa| DenseVector::new(candidate_direction_slice(xa, 0.0)).unwrap())
            .collect();
        let achieved = g.vectors().iter().map(|v| spar_slice(v.as_slice())).sum::<f64>() / r;
        return Ok((
            ProjectionResult {
                projected: g.vectors().to_vec(),
                unit_directions: directions,
                mu_star: 0.0,
                iterations: 0,
                achieved_sparsity: achieved,
                discontinuous: false,
                bracket: (0.0, 0.0),
                sparsity_band: None,
            },
            trace,
        ));
    }

    let tilde = mu_tilde_core(&abs, &consts.betas);
    debug_assert!(tilde > 0.0, "infeasible at zero implies a nontrivial bracket");
    let disc = discontinuity_core(&abs, &consts.betas);

    if cfg.s >= 1.0 {
        // g(mu_tilde) = r(s-1) = 0: the root is exactly mu_tilde.
        let (projected, directions, achieved) = reconstruct(g, &abs, &consts.betas, tilde);
        return Ok((
            ProjectionResult {
                projected,
                unit_directions: directions,
                mu_star: tilde,
                iterations: 0,
                achieved_sparsity: achieved,
                discontinuous: false,
                bracket: (0.0, tilde),
                sparsity_band: None,
            },
            trace,
        ));
    }

    let (mut mu_lo, mut g_lo) = (0.0, g0);
    let (g_tilde, _) = g_eval_core(&abs, &consts, tilde);
    let (mut mu_hi, mut g_hi) = (tilde, g_tilde);
    let (mut mu, mut g_mu, mut dg_mu) = (0.0, g0, d0);
    let mut delta = mu_hi - mu_lo;
    let mut iterations = 0usize;
    let mut discontinuous = false;

    while g_mu.abs() > tol {
        iterations += 1;
        if iterations > cfg.max_iters {
            return Err(ProjectionError::MaxIterations {
                iterations: cfg.max_iters,
                mu_lo,
                mu_hi,
            });
        }
        let mu_old = mu;
        let newton = if dg_mu < 0.0 { mu - g_mu / dg_mu } else { f64::NAN };
        let cand = if newton.is_finite() && newton > mu_lo && newton < mu_hi {
            newton
        } else {
            0.5 * (mu_lo + mu_hi)
        };
        mu = cand;
        let (gv, dv) = g_eval_core(&abs, &consts, mu);
        g_mu = gv;
        dg_mu = dv;
        if g_mu > 0.0 {
            mu_lo = mu;
            g_lo = g_mu;
        } else {
            mu_hi = mu;
            g_hi = g_mu;
        }
        trace.push(IterationRecord { iteration: iterations, mu, g_mu, mu_lo, mu_hi, g_lo, g_hi });
        if g_mu.abs() <= tol {
            break;
        }
        // Linear-convergence safeguard: a small step that left the bracket
        // wide forces a midpoint evaluation; keep the better residual.
        if (mu_hi - mu_lo) > cfg.r_l * delta && (mu - mu_old).abs() < (1.0 - cfg.r_l) * delta {
            let mid = 0.5 * (mu_lo + mu_hi);
            let (gm, dm) = g_eval_core(&abs, &consts, mid);
            if gm > 0.0 {
                mu_lo = mid;
                g_lo = gm;
            } else {
                mu_hi = mid;
                g_hi = gm;
            }
            if gm.abs() < g_mu.abs() {
                mu = mid;
                g_mu = gm;
                dg_mu = dm;
            }
            trace.push(IterationRecord {
                iteration: iterations,
                mu: mid,
                g_mu: gm,
                mu_lo,
                mu_hi,
                g_lo,
                g_hi,
            });
        }
        delta = mu_hi - mu_lo;
        if delta < cfg.eps * mu && disc.iter().any(|d| (mu - d).abs() < cfg.eps * mu) {
            discontinuous = true;
            break;
        }
    }

    let (mu_star, band) = if discontinuous {
        // Report the solution just below the jump, and both attainable sides.
        (mu_lo, Some((cfg.s - g_lo / r, cfg.s - g_hi / r)))
    } else {
        (mu, None)
    };
    let (projected, directions, achieved) = reconstruct(g, &abs, &consts.betas, mu_star);
    Ok((
        ProjectionResult {
            projected,
            unit_directions: directions,
            mu_star,
            iterations,
            achieved_sparsity: achieved,
            discontinuous,
            bracket: (mu_lo, mu_hi),
            sparsity_band: band,
        },
        trace,
    ))
}

/// Project the group onto mean sparsity `cfg.s` within `cfg.eps`.
pub fn project_group(
    g: &VectorGroup,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult, ProjectionError> {
    project_group_with_trace(g, cfg).map(|(res, _)| res)
}

/// Sparse projection of a single vector: the singleton-group solve.
pub fn project_single(x: &DenseVector, cfg: &ProjectionConfig) -> Result<DenseVector, ProjectionError> {
    let g = VectorGroup::new(vec![x.clone()])?;
    let res = project_group(&g, cfg)?;
    Ok(res.projected.into_iter().next().unwrap())
}

/// Projection minimizing relative error: inputs are normalized to unit l2
/// norm, projected, and the outputs rescaled by the original norms. The
/// unit directions and achieved sparsity are unaffected by the rescaling.
pub fn project_group_relative(
    g: &VectorGroup,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult, ProjectionError> {
    let norms: Vec<f64> = g.vectors().iter().map(|v| v.norm_l2()).collect();
    let normalized = VectorGroup::new(
        g.vectors()
            .iter()
            .zip(&norms)
            .map(|(v, &n)| DenseVector::new(v.as_slice().iter().map(|x| x / n).collect()))
            .collect::<Result<Vec<_>, _>>()?,
    )?;
    let mut res = project_group(&normalized, cfg)?;
    res.projected = res
        .projected
        .into_iter()
        .zip(&norms)
        .map(|(v, &n)| DenseVector::new(v.as_slice().iter().map(|x| x * n).collect()).unwrap())
        .collect();
    Ok(res)
}
