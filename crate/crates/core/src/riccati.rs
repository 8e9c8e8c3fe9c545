//! Algebraic and recursive Riccati equations.
//!
//! * [`solve_care`]: `0 = VA + AᵀV − VBN⁻¹BᵀV + M` (regulator form; the
//!   filter form follows by duality `A → Aᵀ`, `B → Cᵀ`).
//! * [`dare_filter_fixed_point`]: stationary point of the one-step
//!   predictor covariance recursion used by the Kalman filter.
//! * [`riccati_ode_step`]: one RK4 step of the filter's differential
//!   Riccati equation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, balance, congruence, congruence_inv, frobenius, lyap_continuous, min_eigenvalue,
    similarity, symmetrize,
};
use crate::lti::is_stabilizable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiOptions {
    /// Relative change between iterates that counts as converged.
    pub rel_tol: f64,
    /// Bound on the normalized residual of the algebraic equation.
    pub residual_tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            residual_tol: 1e-10,
            max_iter: 1_000_000,
        }
    }
}

/// Symmetric solution of a Riccati equation with convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub x: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of the defining equation evaluated at `x`, divided
    /// by the sum of the norms of its terms.
    pub residual: f64,
}

fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    linalg::spectral_abscissa(a) < 0.0
}

fn spd_inverse(n_mat: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let ch = n_mat.clone().cholesky().ok_or(Error::invalid(what, "must be positive definite"))?;
    Ok(ch.inverse())
}

/// Normalized residual of `VA + AᵀV − VSV + M` with `S = BN⁻¹Bᵀ`.
pub fn care_residual(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    m: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> f64 {
    let va = v * a;
    let vsv = v * s * v;
    let res = &va + va.transpose() - &vsv + m;
    let scale = 2.0 * frobenius(&va) + frobenius(&vsv) + frobenius(m);
    if scale == 0.0 {
        0.0
    } else {
        frobenius(&res) / scale
    }
}

/// Stabilizing solution of the continuous algebraic Riccati equation
/// `0 = VA + AᵀV − VBN⁻¹BᵀV + M`.
///
/// Newton–Kleinman iteration in balanced coordinates, each step a direct
/// Lyapunov solve. The start gain is zero for Hurwitz `A`, otherwise a
/// Bass-type shifted-Lyapunov gain. If Newton stalls the Riccati ODE is
/// integrated to stationarity instead.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n_weight: &DMatrix<f64>,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let l = b.ncols();
    if a.ncols() != n || b.nrows() != n || m.shape() != (n, n) || n_weight.shape() != (l, l) {
        return Err(Error::Dimension("solve_care: A n×n, B n×l, M n×n, N l×l".into()));
    }
    if linalg::rel_diff(m, &m.transpose()) > 1e-12 {
        return Err(Error::invalid("M", "must be symmetric"));
    }
    if m.nrows() > 0 && min_eigenvalue(m) < -1e-12 * m.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::invalid("M", "must be positive semidefinite"));
    }
    let n_inv = spd_inverse(n_weight, "N")?;
    if !is_stabilizable(a, b)? {
        return Err(Error::NotStabilizable);
    }

    let d = balance(a);
    let ab = similarity(a, &d);
    let bb = DMatrix::from_fn(n, l, |i, j| b[(i, j)] / d[i]);
    let mb = congruence(m, &d);
    let s = &bb * &n_inv * bb.transpose();

    let newton = newton_kleinman(&ab, &bb, &mb, n_weight, &n_inv, opts);
    let (vb, iterations) = match newton {
        Some(r) => r,
        None => {
            log::warn!("Newton-Kleinman stalled; integrating the Riccati ODE");
            care_by_integration(&ab, &s, &mb, opts)?
        }
    };

    let mut v = congruence_inv(&vb, &d);
    symmetrize(&mut v);
    let s_orig = b * &n_inv * b.transpose();
    let residual = care_residual(a, &s_orig, m, &v);
    let closed = a - &s_orig * &v;
    if !is_hurwitz(&closed) {
        return Err(Error::Unstable("CARE solution is not stabilizing".into()));
    }
    if residual > opts.residual_tol {
        log::warn!("CARE residual {residual:e} above tolerance {:e}", opts.residual_tol);
    }
    Ok(RiccatiSolution {
        x: v,
        iterations,
        residual,
    })
}

fn initial_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if is_hurwitz(a) {
        return Some(DMatrix::zeros(b.ncols(), n));
    }
    // shift past the rightmost eigenvalue: (A+βI)P + P(A+βI)ᵀ = 2BBᵀ
    let max_re = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let beta = max_re.max(0.0) + a.amax().max(1.0);
    let shifted = -(a + DMatrix::identity(n, n) * beta);
    let p = lyap_continuous(&shifted, &(b * b.transpose() * 2.0)).ok()?;
    let ridge = 1e-12 * p.trace().abs().max(f64::MIN_POSITIVE);
    let p = p + DMatrix::identity(n, n) * ridge;
    let p_inv = p.try_inverse()?;
    let k = b.transpose() * p_inv;
    if is_hurwitz(&(a - b * &k)) {
        Some(k)
    } else {
        None
    }
}

fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n_weight: &DMatrix<f64>,
    n_inv: &DMatrix<f64>,
    opts: &RiccatiOptions,
) -> Option<(DMatrix<f64>, usize)> {
    let mut k = initial_gain(a, b)?;
    let mut v_prev: Option<DMatrix<f64>> = None;
    let max_iter = opts.max_iter.min(500);
    for it in 1..=max_iter {
        let ak = a - b * &k;
        let rhs = m + k.transpose() * n_weight * &k;
        let v = lyap_continuous(&ak.transpose(), &rhs).ok()?;
        if !v.iter().all(|x| x.is_finite()) {
            return None;
        }
        k = n_inv * b.transpose() * &v;
        if let Some(prev) = &v_prev {
            let scale = frobenius(&v);
            let change = frobenius(&(&v - prev));
            if scale == 0.0 || change <= opts.rel_tol * scale {
                return Some((v, it));
            }
            // Newton converges quadratically; a floor near round-off is as good as it gets
            if it > 5 && change <= 1e3 * f64::EPSILON * scale {
                let prev_change = frobenius(&(prev - &v));
                if prev_change <= 1e3 * f64::EPSILON * scale {
                    return Some((v, it));
                }
            }
        }
        v_prev = Some(v);
    }
    v_prev.map(|v| (v, max_iter))
}

fn care_by_integration(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    m: &DMatrix<f64>,
    opts: &RiccatiOptions,
) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    let f = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let va = v * a;
        &va + va.transpose() - v * s * v + m
    };
    let h = 0.05 / a.amax().max(s.amax()).max(m.amax()).max(1.0);
    let mut v = DMatrix::zeros(n, n);
    let mut last = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let k1 = f(&v);
        let k2 = f(&(&v + &k1 * (h / 2.0)));
        let k3 = f(&(&v + &k2 * (h / 2.0)));
        let k4 = f(&(&v + &k3 * h));
        let dv = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        v += &dv;
        symmetrize(&mut v);
        last = frobenius(&dv) / frobenius(&v).max(f64::MIN_POSITIVE);
        if last < opts.rel_tol {
            return Ok((v, it));
        }
    }
    Err(Error::NoConvergence {
        what: "Riccati ODE integration",
        iterations: opts.max_iter,
        last_change: last,
    })
}

/// One step of the predictor covariance recursion
/// `Σ⁺ = AΣAᵀ + Q − AΣCᵀ(CΣCᵀ + R)⁻¹CΣAᵀ`.
pub fn predictor_covariance_step(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let a_sigma = a * sigma;
    let s = c * sigma * c.transpose() + r;
    let cross = c * a_sigma.transpose(); // C Σ Aᵀ
    let gain_t = linalg::solve_spd(&s, &cross).ok_or(Error::Singular("C Σ Cᵀ + R"))?;
    let mut next = &a_sigma * a.transpose() + q - cross.transpose() * gain_t;
    symmetrize(&mut next);
    Ok(next)
}

/// Largest `|Δ_ij| / sqrt(Σ_ii Σ_jj)`, skipping rows of zero variance.
fn normalized_change(next: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    let n = next.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let s = (next[(i, i)] * next[(j, j)]).abs().sqrt();
            if s > 0.0 {
                worst = worst.max((next[(i, j)] - prev[(i, j)]).abs() / s);
            }
        }
    }
    worst
}

// Changes this small are rounding noise; no further progress is possible.
const ROUNDOFF_FLOOR: f64 = 64.0 * f64::EPSILON;
// Window over which the contraction rate is estimated.
const RATE_WINDOW: usize = 32;

/// Stationary point of the predictor covariance recursion by plain
/// fixed-point iteration, starting from `init` (default `Q`).
///
/// The iteration contracts linearly, often with a rate close to one, so a
/// small step does not mean a small error. It stops once the geometric
/// tail `δ ρ/(1 − ρ)` of the per-entry normalized change `δ` is below
/// `rel_tol`, with `ρ` the largest step ratio over a recent window, or when
/// the change has reached rounding level.
pub fn dare_filter_fixed_point(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    init: Option<&DMatrix<f64>>,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if c.ncols() != n || q.shape() != (n, n) || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::Dimension("dare: A n×n, C m×n, Q n×n, R m×m".into()));
    }
    let mut sigma = init.cloned().unwrap_or_else(|| q.clone());
    let mut ratios = std::collections::VecDeque::with_capacity(RATE_WINDOW);
    let mut prev_change = f64::NAN;
    let mut last = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = predictor_covariance_step(&sigma, a, c, q, r)?;
        let change = normalized_change(&next, &sigma);
        sigma = next;
        last = change;
        if prev_change > 0.0 {
            if ratios.len() == RATE_WINDOW {
                ratios.pop_front();
            }
            ratios.push_back(change / prev_change);
        }
        prev_change = change;
        let rate = ratios.iter().copied().fold(0.0f64, f64::max);
        let converged = change <= ROUNDOFF_FLOOR
            || (ratios.len() == RATE_WINDOW && rate < 1.0 && change * rate / (1.0 - rate) < opts.rel_tol);
        if converged {
            let after = predictor_covariance_step(&sigma, a, c, q, r)?;
            let scale = frobenius(&sigma);
            let residual = if scale == 0.0 {
                0.0
            } else {
                frobenius(&(&after - &sigma)) / scale
            };
            return Ok(RiccatiSolution {
                x: sigma,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "discrete filter Riccati iteration",
        iterations: opts.max_iter,
        last_change: last,
    })
}

fn filter_riccati_rhs(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    ctrc: &DMatrix<f64>,
) -> DMatrix<f64> {
    let asg = a * sigma;
    &asg + asg.transpose() + w - sigma * ctrc * sigma
}

/// One explicit RK4 step of `dΣ/dt = AΣ + ΣAᵀ + GGᵀ − ΣCᵀR⁻¹CΣ`.
///
/// Fails with [`Error::NotPsd`] when the step leaves the PSD cone, which
/// signals a step size too large for the dynamics.
pub fn riccati_ode_step(
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be > 0"));
    }
    let r_inv = spd_inverse(r, "R")?;
    let w = g * g.transpose();
    let ctrc = c.transpose() * r_inv * c;
    let k1 = filter_riccati_rhs(sigma, a, &w, &ctrc);
    let k2 = filter_riccati_rhs(&(sigma + &k1 * (dt / 2.0)), a, &w, &ctrc);
    let k3 = filter_riccati_rhs(&(sigma + &k2 * (dt / 2.0)), a, &w, &ctrc);
    let k4 = filter_riccati_rhs(&(sigma + &k3 * dt), a, &w, &ctrc);
    let mut next = sigma + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    symmetrize(&mut next);
    let min = min_eigenvalue(&next);
    if min < -1e-10 * next.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd {
            context: "riccati_ode_step",
            min_eig: min,
        });
    }
    Ok(next)
}
