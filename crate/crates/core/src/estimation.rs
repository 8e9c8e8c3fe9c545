//! Discrete-time Kalman filtering and Rauch–Tung–Striebel smoothing.
//!
//! The filter runs in one-step predictor form: the stored belief at sample
//! `k` is conditioned on `y_0 … y_{k−1}`,
//!
//! ```text
//! K_k     = A Σ_k Cᵀ (C Σ_k Cᵀ + R)⁻¹
//! x_{k+1} = A x_k + B u_k + K_k (y_k − C x_k)
//! Σ_{k+1} = A Σ_k Aᵀ + Q − K_k C Σ_k Aᵀ
//! ```
//!
//! The backward pass is the RTS recursion on the measurement-updated
//! belief `(x_{k|k}, Σ_{k|k})`, which is recovered from the stored
//! predictor belief and innovation, so that
//! `A Σ_{k|k} Aᵀ + Q` is exactly the next predictor covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius, symmetrize};
use crate::lti::DiscreteModel;
use crate::riccati::{dare_filter_fixed_point, RiccatiOptions};

/// Gaussian state estimate at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub t: f64,
    pub x: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(t: f64, x: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != x.len() || cov.ncols() != x.len() {
            return Err(Error::Dimension("belief covariance must be n×n".into()));
        }
        if !x.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("belief", "entries must be finite"));
        }
        Ok(Self { t, x, cov })
    }

    /// Zero mean with the given covariance.
    pub fn centered(cov: DMatrix<f64>) -> Self {
        let n = cov.nrows();
        Self {
            t: 0.0,
            x: DVector::zeros(n),
            cov,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

/// Recorded (or simulated) single-input single-output data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Sample period [s].
    pub t_s: f64,
    /// Time of the first sample [s].
    #[serde(default)]
    pub t0: f64,
    /// Measurements [m/s].
    pub y: Vec<f64>,
    /// Inputs [V], aligned with `y`.
    pub u: Vec<f64>,
}

impl Trace {
    pub fn new(t_s: f64, y: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let tr = Self { t_s, t0: 0.0, y, u };
        tr.validate()?;
        Ok(tr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return Err(Error::invalid("trace.t_s", "must be > 0"));
        }
        if self.y.len() != self.u.len() {
            return Err(Error::invalid(
                "trace",
                format!("y has {} samples but u has {}", self.y.len(), self.u.len()),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.t_s
    }

    /// Samples `[start, end)` as a new trace with shifted start time.
    pub fn slice(&self, start: usize, end: usize) -> Trace {
        Trace {
            t_s: self.t_s,
            t0: self.time(start),
            y: self.y[start..end].to_vec(),
            u: self.u[start..end].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Use the Joseph-form covariance update instead of the textbook form.
    pub joseph: bool,
}

/// Output of one predictor step.
#[derive(Debug, Clone, PartialEq)]
pub struct KfStep {
    /// Predictor belief for the next sample.
    pub next: GaussianBelief,
    /// `y_k − C x_k`.
    pub innovation: DVector<f64>,
    /// `C Σ_k Cᵀ + R`.
    pub innovation_cov: DMatrix<f64>,
}

fn check_dims(model: &DiscreteModel, belief: &GaussianBelief, y: &[f64], u: &[f64]) -> Result<()> {
    let n = model.n_states();
    if belief.n() != n {
        return Err(Error::Dimension(format!("belief has {} states, model {n}", belief.n())));
    }
    if y.len() != model.c.nrows() || u.len() != model.b.ncols() {
        return Err(Error::Dimension(format!(
            "expected {} outputs and {} inputs",
            model.c.nrows(),
            model.b.ncols()
        )));
    }
    Ok(())
}

/// One Kalman predictor step.
pub fn kf_step(
    belief: &GaussianBelief,
    y: &[f64],
    u: &[f64],
    model: &DiscreteModel,
    opts: &FilterOptions,
) -> Result<KfStep> {
    check_dims(model, belief, y, u)?;
    let (a, c) = (&model.a, &model.c);
    let sigma = &belief.cov;
    let innovation = DVector::from_column_slice(y) - c * &belief.x;
    let s = c * sigma * c.transpose() + &model.r;
    let a_sigma = a * sigma;
    let cross = c * a_sigma.transpose(); // C Σ Aᵀ
    let gain = linalg::solve_spd(&s, &cross)
        .ok_or(Error::Singular("C Σ Cᵀ + R"))?
        .transpose();
    let x = a * &belief.x + &model.b * DVector::from_column_slice(u) + &gain * &innovation;
    let mut cov = if opts.joseph {
        let acl = a - &gain * c;
        &acl * sigma * acl.transpose() + &gain * &model.r * gain.transpose() + &model.q
    } else {
        &a_sigma * a.transpose() + &model.q - &gain * cross
    };
    symmetrize(&mut cov);
    Ok(KfStep {
        next: GaussianBelief {
            t: belief.t + model.t_s,
            x,
            cov,
        },
        innovation,
        innovation_cov: s,
    })
}

/// Forward pass over a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPass {
    /// Predictor beliefs `0..=N`; entry `k` is conditioned on `y_0 … y_{k−1}`.
    pub priors: Vec<GaussianBelief>,
    /// Innovations `y_k − C x_k`, `k = 0..N`.
    pub innovations: Vec<f64>,
    /// Innovation variances `C Σ_k Cᵀ + R`.
    pub innovation_vars: Vec<f64>,
    /// Inputs used in the pass, kept for the backward recursion.
    pub inputs: Vec<f64>,
}

impl FilterPass {
    pub fn last(&self) -> &GaussianBelief {
        self.priors.last().expect("filter pass holds at least the initial belief")
    }

    /// Relative covariance change over the final step, a stationarity indicator.
    pub fn final_relative_change(&self) -> f64 {
        let n = self.priors.len();
        if n < 2 {
            return f64::INFINITY;
        }
        let a = &self.priors[n - 1].cov;
        let b = &self.priors[n - 2].cov;
        frobenius(&(a - b)) / frobenius(a).max(f64::MIN_POSITIVE)
    }
}

fn require_siso(model: &DiscreteModel) -> Result<()> {
    if model.c.nrows() != 1 || model.b.ncols() != 1 {
        return Err(Error::Dimension("traces are single-input single-output".into()));
    }
    Ok(())
}

/// Run the predictor over the whole trace, storing every belief.
pub fn kf_run(
    trace: &Trace,
    model: &DiscreteModel,
    initial: &GaussianBelief,
    opts: &FilterOptions,
) -> Result<FilterPass> {
    trace.validate()?;
    require_siso(model)?;
    let n = trace.len();
    let mut priors = Vec::with_capacity(n + 1);
    let mut innovations = Vec::with_capacity(n);
    let mut innovation_vars = Vec::with_capacity(n);
    priors.push(initial.clone());
    for k in 0..n {
        let step = kf_step(&priors[k], &[trace.y[k]], &[trace.u[k]], model, opts)?;
        innovations.push(step.innovation[0]);
        innovation_vars.push(step.innovation_cov[(0, 0)]);
        priors.push(step.next);
    }
    Ok(FilterPass {
        priors,
        innovations,
        innovation_vars,
        inputs: trace.u.clone(),
    })
}

/// Innovations only, without storing beliefs; returns the final belief too.
pub fn kf_innovations(
    trace: &Trace,
    model: &DiscreteModel,
    initial: &GaussianBelief,
    opts: &FilterOptions,
) -> Result<(Vec<f64>, GaussianBelief)> {
    trace.validate()?;
    require_siso(model)?;
    let mut belief = initial.clone();
    let mut out = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        let step = kf_step(&belief, &[trace.y[k]], &[trace.u[k]], model, opts)?;
        out.push(step.innovation[0]);
        belief = step.next;
    }
    Ok((out, belief))
}

/// Measurement-updated belief from a predictor belief and its innovation.
pub fn measurement_update(
    prior: &GaussianBelief,
    innovation: f64,
    model: &DiscreteModel,
) -> Result<GaussianBelief> {
    let c = &model.c;
    let sigma = &prior.cov;
    let s = c * sigma * c.transpose() + &model.r;
    let c_sigma = c * sigma;
    let gain_t = linalg::solve_spd(&s, &c_sigma).ok_or(Error::Singular("C Σ Cᵀ + R"))?;
    let x = &prior.x + gain_t.transpose() * DVector::from_element(1, innovation);
    let mut cov = sigma - gain_t.transpose() * c_sigma;
    symmetrize(&mut cov);
    Ok(GaussianBelief { t: prior.t, x, cov })
}

/// RTS backward pass. Returns smoothed beliefs `0..=N`; the last one equals
/// the final filter belief.
pub fn rts_run(pass: &FilterPass, model: &DiscreteModel) -> Result<Vec<GaussianBelief>> {
    require_siso(model)?;
    let n = pass.innovations.len();
    if pass.priors.len() != n + 1 || pass.inputs.len() != n {
        return Err(Error::Dimension("filter pass is inconsistent".into()));
    }
    let a = &model.a;
    let mut smoothed = vec![pass.priors[n].clone(); n + 1];
    let mut jittered = false;
    for k in (0..n).rev() {
        let post = measurement_update(&pass.priors[k], pass.innovations[k], model)?;
        let a_post = a * &post.cov;
        let mut pred_cov = &a_post * a.transpose() + &model.q;
        symmetrize(&mut pred_cov);
        // G = Σ Aᵀ P⁻¹  ⇔  Gᵀ = P⁻¹ A Σ
        let gain_t = match smoother_gain_t(&pred_cov, &a_post) {
            Some(g) => g,
            None => {
                if jittered {
                    return Err(Error::Singular("A Σ Aᵀ + Q in RTS backward pass"));
                }
                jittered = true;
                let j = 1e-14 * pred_cov.trace().abs().max(f64::MIN_POSITIVE);
                let dim = pred_cov.nrows();
                pred_cov += DMatrix::identity(dim, dim) * j;
                smoother_gain_t(&pred_cov, &a_post)
                    .ok_or(Error::Singular("A Σ Aᵀ + Q in RTS backward pass"))?
            }
        };
        let gain = gain_t.transpose();
        let pred_x = a * &post.x + &model.b * DVector::from_element(1, pass.inputs[k]);
        let next = &smoothed[k + 1];
        let x = &post.x + &gain * (&next.x - pred_x);
        let mut cov = &post.cov + &gain * (&next.cov - &pred_cov) * &gain_t;
        symmetrize(&mut cov);
        smoothed[k] = GaussianBelief { t: post.t, x, cov };
    }
    Ok(smoothed)
}

/// `P⁻¹ A Σ` restricted to states with nonzero predicted variance.
///
/// States that carry no uncertainty at all (for example a disturbance
/// section without noise input) have zero rows in both `P` and `A Σ`; they
/// get a zero smoother gain instead of making `P` singular.
fn smoother_gain_t(pred_cov: &DMatrix<f64>, a_post: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = pred_cov.nrows();
    let active: Vec<usize> = (0..n).filter(|&i| pred_cov[(i, i)] > 0.0).collect();
    let out = if active.len() == n {
        linalg::solve_spd(pred_cov, a_post)?
    } else {
        let p = pred_cov.select_rows(&active).select_columns(&active);
        let rhs = a_post.select_rows(&active);
        let sub = linalg::solve_spd(&p, &rhs)?;
        let mut full = DMatrix::zeros(n, a_post.ncols());
        for (r, &i) in active.iter().enumerate() {
            full.row_mut(i).copy_from(&sub.row(r));
        }
        full
    };
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Stationary predictor covariance and gains.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// Stationary predictor covariance.
    pub sigma: DMatrix<f64>,
    /// Predictor gain `A Σ Cᵀ (C Σ Cᵀ + R)⁻¹`.
    pub gain: DMatrix<f64>,
    /// Measurement-update gain `Σ Cᵀ (C Σ Cᵀ + R)⁻¹`.
    pub update_gain: DMatrix<f64>,
}

pub fn steady_state_gains(model: &DiscreteModel, opts: &RiccatiOptions) -> Result<SteadyState> {
    let sol = dare_filter_fixed_point(&model.a, &model.c, &model.q, &model.r, None, opts)?;
    Ok(gains_at(model, sol.x))
}

pub(crate) fn gains_at(model: &DiscreteModel, sigma: DMatrix<f64>) -> SteadyState {
    let c = &model.c;
    let s = c * &sigma * c.transpose() + &model.r;
    let c_sigma = c * &sigma;
    let update_gain = linalg::solve_spd(&s, &c_sigma)
        .expect("innovation covariance is positive definite for R ≻ 0")
        .transpose();
    let gain = &model.a * &update_gain;
    SteadyState {
        sigma,
        gain,
        update_gain,
    }
}
