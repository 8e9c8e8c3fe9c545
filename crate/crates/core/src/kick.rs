//! Momentum-kick reconstruction at a known sample.
//!
//! The trace is split at the kick sample `t_p`. Data before the kick give
//! the predictor belief at `t_p`; its velocity variances are inflated and
//! the data from `t_p` on are filtered forward and smoothed back to `t_p`.
//! The state jump is the difference of the two estimates, reported as
//! after minus before so that a positive kick gives a positive `Δv`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{kf_innovations, kf_run, rts_run, FilterOptions, GaussianBelief, Trace};
use crate::linalg::{frobenius, min_eigenvalue, symmetrized};
use crate::lti::DiscreteModel;

/// Default inflation relative to the stationary velocity variance.
pub const DEFAULT_PRIOR_SCALE: f64 = 1e6;

/// Per-step relative covariance change above which a segment is flagged
/// as too short to have reached the stationary filter.
pub const STATIONARITY_THRESHOLD: f64 = 1e-6;

/// Prior variance of the velocity jump of each mode [(m/s)²].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KickPrior {
    pub velocity_var: Vec<f64>,
}

impl KickPrior {
    /// `scale` times the velocity-slot variances of `cov`.
    pub fn relative(model: &DiscreteModel, cov: &DMatrix<f64>, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::invalid("kick.prior_scale", "must be ≥ 0"));
        }
        let velocity_var = (0..model.n_modes())
            .map(|i| {
                let k = model.velocity_index(i).expect("every mode has a velocity state");
                scale * cov[(k, k)]
            })
            .collect();
        Ok(Self { velocity_var })
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        if self.velocity_var.len() != n_modes {
            return Err(Error::invalid(
                "kick.prior",
                format!("expected {n_modes} variances, got {}", self.velocity_var.len()),
            ));
        }
        if let Some(i) = self.velocity_var.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("kick.prior[{i}]"), "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Add the prior variances to the velocity diagonal; nothing else changes.
pub fn inflate_covariance(belief: &GaussianBelief, model: &DiscreteModel, prior: &KickPrior) -> Result<GaussianBelief> {
    prior.validate(model.n_modes())?;
    let mut out = belief.clone();
    for (i, v) in prior.velocity_var.iter().enumerate() {
        let k = model.velocity_index(i).expect("every mode has a velocity state");
        out.cov[(k, k)] += v;
    }
    Ok(out)
}

/// `Σ_f,𝒟₁ + Σ_s,𝒟₂`, an upper bound on the covariance of the difference
/// for any correlation between the two estimates.
pub fn kick_bound(sigma_before: &DMatrix<f64>, sigma_after: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrized(sigma_before + sigma_after)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KickEstimate {
    pub t_p: f64,
    pub t_p_index: usize,
    /// Estimated jump, after minus before.
    pub dx: DVector<f64>,
    pub bound: DMatrix<f64>,
    /// `m_eff,i · Δv̂_i` per mode [kg·m/s].
    pub momenta: Vec<f64>,
    /// Predictor belief at `t_p` from the data before the kick.
    pub before: GaussianBelief,
    /// Smoothed belief at `t_p` from the data after the kick.
    pub after: GaussianBelief,
    /// Set when a segment looks too short for the filter to be stationary.
    pub warning: Option<String>,
}

impl KickEstimate {
    pub fn dv(&self, model: &DiscreteModel, mode: usize) -> f64 {
        self.dx[model.velocity_index(mode).expect("mode exists")]
    }

    pub fn dz(&self, model: &DiscreteModel, mode: usize) -> f64 {
        self.dx[model.position_index(mode).expect("mode exists")]
    }

    pub fn bound_dv(&self, model: &DiscreteModel, mode: usize) -> f64 {
        let k = model.velocity_index(mode).expect("mode exists");
        self.bound[(k, k)].sqrt()
    }
}

fn relative_step(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(a).max(f64::MIN_POSITIVE)
}

/// Estimate the state jump at sample `t_p_index` of `trace`.
///
/// `initial` is the filter belief at the first sample.
pub fn estimate_kick(
    trace: &Trace,
    model: &DiscreteModel,
    t_p_index: usize,
    prior: &KickPrior,
    initial: &GaussianBelief,
) -> Result<KickEstimate> {
    trace.validate()?;
    let n = trace.len();
    if t_p_index == 0 || t_p_index >= n {
        return Err(Error::invalid(
            "kick.t_p_index",
            format!("must lie in 1..{n}, got {t_p_index}"),
        ));
    }
    prior.validate(model.n_modes())?;
    let opts = FilterOptions::default();

    // before: predictor belief at t_p from samples [0, t_p)
    let head = trace.slice(0, t_p_index - 1);
    let (_, penultimate) = kf_innovations(&head, model, initial, &opts)?;
    let last = trace.slice(t_p_index - 1, t_p_index);
    let (_, before) = kf_innovations(&last, model, &penultimate, &opts)?;
    let change_before = relative_step(&before.cov, &penultimate.cov);

    // after: inflate, filter [t_p, N), smooth back to t_p
    let inflated = inflate_covariance(&before, model, prior)?;
    let tail = trace.slice(t_p_index, n);
    let pass = kf_run(&tail, model, &inflated, &opts)?;
    let change_after = pass.final_relative_change();
    let smoothed = rts_run(&pass, model)?;
    let after = smoothed.into_iter().next().expect("smoother returns t_p");

    let dx = &after.x - &before.x;
    let bound = kick_bound(&before.cov, &after.cov);
    let floor = min_eigenvalue(&bound);
    if floor < -1e-10 * bound.trace().abs() {
        return Err(Error::NotPsd {
            context: "kick bound",
            min_eig: floor,
        });
    }
    let momenta = model
        .masses
        .iter()
        .enumerate()
        .map(|(i, m)| m * dx[model.velocity_index(i).expect("mode exists")])
        .collect();

    let mut notes = Vec::new();
    if change_before > STATIONARITY_THRESHOLD {
        notes.push(format!("pre-kick segment not stationary (relative step {change_before:.1e})"));
    }
    if change_after > STATIONARITY_THRESHOLD {
        notes.push(format!("post-kick segment not stationary (relative step {change_after:.1e})"));
    }
    let warning = (!notes.is_empty()).then(|| notes.join("; "));
    if let Some(w) = &warning {
        log::warn!("kick at sample {t_p_index}: {w}");
    }

    Ok(KickEstimate {
        t_p: trace.time(t_p_index),
        t_p_index,
        dx,
        bound,
        momenta,
        before,
        after,
        warning,
    })
}
