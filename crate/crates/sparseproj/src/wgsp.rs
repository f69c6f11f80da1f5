//! Weighted grouped sparse projection: the average constraint is on
//! `spar_w` instead of `spar`, with per-vector weight vectors `w_i`.
//!
//! The machinery mirrors the unweighted solve with
//!
//! ```text
//!   beta_i^w = 1 / (||w_i||_2 - min_j w_i(j)),
//!   k_s^w    = sum_i ||w_i||_2 beta_i^w - r s,
//!   xbar_i(mu) = [|x_i| - mu beta_i^w w_i]_+ / ||.||_2   (or 1-sparse),
//!   g_w(mu)  = sum_i beta_i^w w_i^T xbar_i(mu) - k_s^w.
//! ```
//!
//! Two behaviors have no unweighted counterpart. In the 1-sparse regime the
//! surviving coordinate is the argmax of the *residual* `|x_i| - mu beta w_i`,
//! which moves toward small-weight coordinates as `mu` grows, so `g_w` has
//! piecewise-constant plateaus and can jump at argmax switches. And a
//! coordinate with `w(j) = 0` is never thresholded: it is exempt from the
//! sparsity measure and survives every `mu`.
//!
//! The solver is the same safeguarded Newton; plateaus (zero derivative with
//! nonzero residual) fall through to bisection automatically, and a bracket
//! that collapses while the residual is still large signals a jump of `g_w`,
//! reported exactly like a GSP discontinuity.

use crate::gsp::{ProjectionConfig, ProjectionError, ProjectionResult};
use crate::sparsity::{spar_weighted, DenseVector, SparsityError, VectorGroup, WeightVector};

/// Weight vectors paired with a `VectorGroup`, one per member.
#[derive(Debug, Clone)]
pub struct WeightGroup(Vec<WeightVector>);

impl WeightGroup {
    pub fn new(weights: Vec<WeightVector>) -> Result<Self, SparsityError> {
        if weights.is_empty() {
            return Err(SparsityError::TooShort { min: 1, got: 0 });
        }
        Ok(WeightGroup(weights))
    }

    /// All-ones weights shaped like `g`, under which WGSP reduces to GSP.
    pub fn ones_like(g: &VectorGroup) -> Self {
        WeightGroup(
            g.vectors()
                .iter()
                .map(|v| WeightVector::ones(v.len()).unwrap())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[WeightVector] {
        &self.0
    }

    fn check_shapes(&self, g: &VectorGroup) -> Result<(), SparsityError> {
        if self.len() != g.len() {
            return Err(SparsityError::LengthMismatch { left: g.len(), right: self.len() });
        }
        for (v, w) in g.vectors().iter().zip(&self.0) {
            if v.len() != w.len() {
                return Err(SparsityError::LengthMismatch { left: v.len(), right: w.len() });
            }
        }
        Ok(())
    }
}

/// `beta_i^w = 1/(||w_i||_2 - min_j w_i(j))` and `k_s^w = sum_i ||w_i||_2 beta_i^w - r s`.
#[derive(Debug, Clone)]
pub struct WeightedConstants {
    pub betas: Vec<f64>,
    pub k_s: f64,
}

impl WeightedConstants {
    pub fn new(weights: &WeightGroup, s: f64) -> Self {
        let betas: Vec<f64> = weights
            .weights()
            .iter()
            .map(|w| 1.0 / (w.norm_l2() - w.min()))
            .collect();
        let k_s = weights
            .weights()
            .iter()
            .zip(&betas)
            .map(|(w, b)| w.norm_l2() * b)
            .sum::<f64>()
            - weights.len() as f64 * s;
        WeightedConstants { betas, k_s }
    }
}

/// Weighted optimal direction at multiplier `mu`: the normalized positive
/// part of `x_abs - mu beta_w w`, or the 1-sparse indicator at the largest
/// residual entry (lowest index on ties). With large `mu` that argmax sits at
/// the smallest weight, not necessarily the largest `|x|` entry.
pub fn candidate_direction_weighted(
    x_abs: &DenseVector,
    w: &WeightVector,
    mu: f64,
    beta_w: f64,
) -> DenseVector {
    DenseVector::new(candidate_weighted_slice(
        x_abs.as_slice(),
        w.as_slice(),
        mu * beta_w,
    ))
    .unwrap()
}

fn candidate_weighted_slice(xa: &[f64], w: &[f64], t: f64) -> Vec<f64> {
    let mut y: Vec<f64> = xa.iter().zip(w).map(|(&v, &wi)| (v - t * wi).max(0.0)).collect();
    let norm2: f64 = y.iter().map(|v| v * v).sum();
    if norm2 > 0.0 {
        let norm = norm2.sqrt();
        for v in &mut y {
            *v /= norm;
        }
        y
    } else {
        let mut best = 0;
        let mut best_val = xa[0] - t * w[0];
        for j in 1..xa.len() {
            let val = xa[j] - t * w[j];
            if val > best_val {
                best = j;
                best_val = val;
            }
        }
        let mut e = vec![0.0; xa.len()];
        e[best] = 1.0;
        e
    }
}

fn gw_term(xa: &[f64], w: &[f64], beta: f64, mu: f64) -> (f64, f64) {
    let t = mu * beta;
    let mut wy = 0.0;
    let mut yy = 0.0;
    let mut ww = 0.0;
    let mut any = false;
    for (&v, &wi) in xa.iter().zip(w) {
        let res = v - t * wi;
        if res > 0.0 {
            any = true;
            wy += wi * res;
            yy += res * res;
            ww += wi * wi;
        }
    }
    if any && yy > 0.0 {
        let norm = yy.sqrt();
        let value = beta * wy / norm;
        let deriv = -beta * beta * (ww * yy - wy * wy) / (yy * norm);
        (value, deriv)
    } else {
        // 1-sparse fallback: w^T xbar = w at the residual argmax, flat in mu
        let mut best = 0;
        let mut best_val = xa[0] - t * w[0];
        for j in 1..xa.len() {
            let val = xa[j] - t * w[j];
            if val > best_val {
                best = j;
                best_val = val;
            }
        }
        (beta * w[best], 0.0)
    }
}

fn gw_eval_core(
    abs: &[Vec<f64>],
    weights: &WeightGroup,
    consts: &WeightedConstants,
    mu: f64,
) -> (f64, f64) {
    let mut value = -consts.k_s;
    let mut deriv = 0.0;
    for ((xa, w), &b) in abs.iter().zip(weights.weights()).zip(&consts.betas) {
        let (v, d) = gw_term(xa, w.as_slice(), b, mu);
        value += v;
        deriv += d;
    }
    (value, deriv)
}

/// `g_w(mu) = sum_i beta_i^w w_i^T xbar_i(mu) - k_s^w` and its analytic
/// one-sided derivative (0 on plateaus).
pub fn gw_eval(
    g: &VectorGroup,
    weights: &WeightGroup,
    consts: &WeightedConstants,
    mu: f64,
) -> (f64, f64) {
    let abs = abs_group(g);
    gw_eval_core(&abs, weights, consts, mu)
}

fn abs_group(g: &VectorGroup) -> Vec<Vec<f64>> {
    g.vectors()
        .iter()
        .map(|v| v.as_slice().iter().map(|x| x.abs()).collect())
        .collect()
}

/// A multiplier past which every vector is pinned at weighted sparsity 1:
/// beyond the second-largest vanish ratio every positive-weight residual but
/// one is gone, and beyond the argmax-switch bound the surviving coordinate
/// is a minimum-weight one. `g_w` is guaranteed nonpositive here (the caller
/// still verifies and doubles if the pin is not yet strict).
fn weighted_upper_bound(abs: &[Vec<f64>], weights: &WeightGroup, betas: &[f64]) -> f64 {
    let mut bound: f64 = 0.0;
    for ((xa, w), &b) in abs.iter().zip(weights.weights()).zip(betas) {
        let ws = w.as_slice();
        // vanish bound: second largest |x(j)|/(beta w(j)) over positive weights
        let mut first = 0.0f64;
        let mut second = 0.0f64;
        for (&v, &wi) in xa.iter().zip(ws) {
            if wi > 0.0 {
                let ratio = v / (b * wi);
                if ratio > first {
                    second = first;
                    first = ratio;
                } else if ratio > second {
                    second = ratio;
                }
            }
        }
        bound = bound.max(second);
        // switch bound: past it the fallback argmax sits at a min-weight entry
        let wmin = w.min();
        let mut jstar = 0;
        for j in 0..ws.len() {
            if ws[j] == wmin && (ws[jstar] != wmin || xa[j] > xa[jstar]) {
                jstar = j;
            }
        }
        for j in 0..ws.len() {
            if ws[j] > wmin && xa[j] > xa[jstar] {
                bound = bound.max((xa[j] - xa[jstar]) / (b * (ws[j] - wmin)));
            }
        }
    }
    bound
}

/// Project the group onto mean weighted sparsity `cfg.s`.
///
/// Identical contract to `project_group`; with all-ones weights the two agree
/// entrywise. On a jump of `g_w` (tied vanish points or a fallback-argmax
/// switch straddling the root) the solve exits with the discontinuous flag,
/// the solution just below the jump, and the achievable sparsity band.
pub fn project_group_weighted(
    g: &VectorGroup,
    weights: &WeightGroup,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult, ProjectionError> {
    cfg.validate()?;
    weights.check_shapes(g)?;
    let r = g.len() as f64;
    let tol = r * cfg.eps;
    let abs = abs_group(g);
    let consts = WeightedConstants::new(weights, cfg.s);

    let (g0, d0) = gw_eval_core(&abs, weights, &consts, 0.0);
    if g0 <= tol {
        let directions = abs
            .iter()
            .zip(weights.weights())
            .map(|(xa, w)| {
                DenseVector::new(candidate_weighted_slice(xa, w.as_slice(), 0.0)).unwrap()
            })
            .collect();
        let achieved = achieved_weighted(g.vectors(), weights);
        return Ok(ProjectionResult {
            projected: g.vectors().to_vec(),
            unit_directions: directions,
            mu_star: 0.0,
            iterations: 0,
            achieved_sparsity: achieved,
            discontinuous: false,
            bracket: (0.0, 0.0),
            sparsity_band: None,
        });
    }

    let mut mu_hi = weighted_upper_bound(&abs, weights, &consts.betas).max(f64::MIN_POSITIVE);
    let (mut g_hi, _) = gw_eval_core(&abs, weights, &consts, mu_hi);
    let mut doublings = 0;
    while g_hi > 0.0 && doublings < 200 {
        mu_hi *= 2.0;
        g_hi = gw_eval_core(&abs, weights, &consts, mu_hi).0;
        doublings += 1;
    }
    if g_hi > 0.0 {
        return Err(ProjectionError::MaxIterations { iterations: doublings, mu_lo: 0.0, mu_hi });
    }

    if cfg.s >= 1.0 {
        let (projected, directions) = reconstruct(g, &abs, weights, &consts.betas, mu_hi);
        let achieved = achieved_weighted(&projected, weights);
        return Ok(ProjectionResult {
            projected,
            unit_directions: directions,
            mu_star: mu_hi,
            iterations: 0,
            achieved_sparsity: achieved,
            discontinuous: false,
            bracket: (0.0, mu_hi),
            sparsity_band: None,
        });
    }

    let (mut mu_lo, mut g_lo) = (0.0, g0);
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
        let (gv, dv) = gw_eval_core(&abs, weights, &consts, mu);
        g_mu = gv;
        dg_mu = dv;
        if g_mu > 0.0 {
            mu_lo = mu;
            g_lo = g_mu;
        } else {
            mu_hi = mu;
            g_hi = g_mu;
        }
        if g_mu.abs() <= tol {
            break;
        }
        if (mu_hi - mu_lo) > cfg.r_l * delta && (mu - mu_old).abs() < (1.0 - cfg.r_l) * delta {
            let mid = 0.5 * (mu_lo + mu_hi);
            let (gm, dm) = gw_eval_core(&abs, weights, &consts, mid);
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
        }
        delta = mu_hi - mu_lo;
        // bracket collapse with a large residual: g_w jumps across zero here
        if delta < cfg.eps * mu {
            discontinuous = true;
            break;
        }
    }

    let (mu_star, band) = if discontinuous {
        (mu_lo, Some((cfg.s - g_lo / r, cfg.s - g_hi / r)))
    } else {
        (mu, None)
    };
    let (projected, directions) = reconstruct(g, &abs, weights, &consts.betas, mu_star);
    let achieved = achieved_weighted(&projected, weights);
    Ok(ProjectionResult {
        projected,
        unit_directions: directions,
        mu_star,
        iterations,
        achieved_sparsity: achieved,
        discontinuous,
        bracket: (mu_lo, mu_hi),
        sparsity_band: band,
    })
}

fn achieved_weighted(vectors: &[DenseVector], weights: &WeightGroup) -> f64 {
    vectors
        .iter()
        .zip(weights.weights())
        .map(|(v, w)| spar_weighted(v, w).unwrap())
        .sum::<f64>()
        / vectors.len() as f64
}

fn reconstruct(
    g: &VectorGroup,
    abs: &[Vec<f64>],
    weights: &WeightGroup,
    betas: &[f64],
    mu: f64,
) -> (Vec<DenseVector>, Vec<DenseVector>) {
    let mut projected = Vec::with_capacity(g.len());
    let mut directions = Vec::with_capacity(g.len());
    for (((x, xa), w), &b) in g.vectors().iter().zip(abs).zip(weights.weights()).zip(betas) {
        let xbar = candidate_weighted_slice(xa, w.as_slice(), mu * b);
        let alpha: f64 = xa.iter().zip(&xbar).map(|(a, d)| a * d).sum();
        let xt: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&xbar)
            .map(|(&xi, &di)| {
                let s = if xi > 0.0 {
                    1.0
                } else if xi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                s * alpha * di
            })
            .collect();
        projected.push(DenseVector::new(xt).unwrap());
        directions.push(DenseVector::new(xbar).unwrap());
    }
    (projected, directions)
}
