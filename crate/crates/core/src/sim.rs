//! Exact-discretization simulation of the resonator with optional LQG
//! feedback and momentum kicks, and the seeded Monte Carlo driver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{Regulator, RegulatorGains};
use crate::error::{Error, Result};
use crate::estimation::{GaussianBelief, Trace};
use crate::kick::{estimate_kick, KickEstimate, KickPrior};
use crate::linalg::{lyap_discrete, psd_factor};
use crate::lti::{discretize, DiscreteModel};
use crate::model::StateSpaceModel;

/// Momentum kick applied at the start of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kick {
    pub index: usize,
    /// Momentum [kg·m/s].
    pub momentum: f64,
    /// Projection onto each mode; mode `i` receives `weights[i]·p/m_eff,i`.
    pub weights: Vec<f64>,
}

impl Kick {
    /// Kick on the first mode only.
    pub fn mode1(index: usize, momentum: f64, n_modes: usize) -> Self {
        let mut weights = vec![0.0; n_modes];
        weights[0] = 1.0;
        Self {
            index,
            momentum,
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Zero,
    /// Drawn from the open-loop stationary covariance.
    Stationary,
    Given(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: StateSpaceModel,
    pub gains: Option<RegulatorGains>,
    pub t_s: f64,
    pub n: usize,
    pub seed: u64,
    pub kicks: Vec<Kick>,
    pub initial: InitialState,
    pub process_noise: bool,
    pub measurement_noise: bool,
    /// Keep the true state sequence.
    pub record_states: bool,
}

impl SimConfig {
    pub fn new(model: StateSpaceModel, t_s: f64, n: usize, seed: u64) -> Self {
        Self {
            model,
            gains: None,
            t_s,
            n,
            seed,
            kicks: Vec::new(),
            initial: InitialState::Stationary,
            process_noise: true,
            measurement_noise: true,
            record_states: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return Err(Error::invalid("sim.t_s", "must be > 0"));
        }
        if self.n == 0 {
            return Err(Error::invalid("sim.n", "must be ≥ 1"));
        }
        let k = self.model.modes.len();
        for (i, kick) in self.kicks.iter().enumerate() {
            if kick.index >= self.n {
                return Err(Error::invalid(
                    format!("kicks[{i}].index"),
                    format!("{} outside 0..{}", kick.index, self.n),
                ));
            }
            if kick.weights.len() != k {
                return Err(Error::invalid(
                    format!("kicks[{i}].weights"),
                    format!("expected {k} entries"),
                ));
            }
            if !kick.momentum.is_finite() {
                return Err(Error::invalid(format!("kicks[{i}].momentum"), "must be finite"));
            }
        }
        if let Some(g) = &self.gains {
            if g.n_states() != self.model.n_states() {
                return Err(Error::invalid("control", "gains do not match the model"));
            }
            exec_schedule(g.t_exec, self.t_s)?;
        }
        if let InitialState::Given(x) = &self.initial {
            if x.len() != self.model.n_states() {
                return Err(Error::invalid("sim.initial", "wrong state dimension"));
            }
        }
        Ok(())
    }
}

/// How the regulator period relates to the sample period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Schedule {
    /// `T_s = m · T_exec`: `m` executions per sample, measurement held.
    Sub(usize),
    /// `T_exec = m · T_s`: one execution every `m` samples, command held.
    Every(usize),
}

fn exec_schedule(t_exec: f64, t_s: f64) -> Result<Schedule> {
    let near_int = |r: f64| {
        let m = r.round();
        (m >= 1.0 && (r - m).abs() <= 1e-9 * r).then_some(m as usize)
    };
    if let Some(m) = near_int(t_s / t_exec) {
        return Ok(Schedule::Sub(m));
    }
    if let Some(m) = near_int(t_exec / t_s) {
        return Ok(Schedule::Every(m));
    }
    Err(Error::invalid(
        "control.t_exec",
        format!("{t_exec:e} s is not an integer ratio of the sample period {t_s:e} s"),
    ))
}

/// Simulated measurements, optional true states, and the discrete model
/// the data follow.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Trace,
    /// True state at every sample (after kicks), when recorded.
    pub states: Option<Vec<DVector<f64>>>,
    pub discrete: DiscreteModel,
    /// Covariance the initial state was drawn from.
    pub initial_cov: DMatrix<f64>,
}

impl SimOutput {
    /// Filter belief matching the initial-state distribution.
    pub fn matched_initial_belief(&self) -> GaussianBelief {
        GaussianBelief::centered(self.initial_cov.clone())
    }
}

/// Open-loop stationary covariance of a discrete model.
pub fn stationary_covariance(model: &DiscreteModel) -> Result<DMatrix<f64>> {
    lyap_discrete(&model.a, &model.q)
}

/// Everything that depends on the configuration but not on the seed.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    discrete: DiscreteModel,
    /// Plant discretized at the regulator period when it executes faster
    /// than the sampling.
    inner: Option<(DiscreteModel, DMatrix<f64>)>,
    q_factor: DMatrix<f64>,
    initial_cov: DMatrix<f64>,
    initial_factor: Option<DMatrix<f64>>,
    schedule: Option<Schedule>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        if config.model.n_outputs() != 1 || config.model.n_inputs() != 1 {
            return Err(Error::Dimension("simulation supports one input and one output".into()));
        }
        let discrete = discretize(&config.model, config.t_s)?;
        let q_factor = psd_factor(&discrete.q)?;
        let schedule = config
            .gains
            .as_ref()
            .map(|g| exec_schedule(g.t_exec, config.t_s))
            .transpose()?;
        let inner = match schedule {
            Some(Schedule::Sub(m)) if m > 1 => {
                let d = discretize(&config.model, config.t_s / m as f64)?;
                let f = psd_factor(&d.q)?;
                Some((d, f))
            }
            _ => None,
        };
        let n = discrete.n_states();
        let (initial_cov, initial_factor) = match &config.initial {
            InitialState::Stationary => {
                let p = stationary_covariance(&discrete)?;
                let f = psd_factor(&p)?;
                (p, Some(f))
            }
            _ => (DMatrix::zeros(n, n), None),
        };
        Ok(Self {
            config,
            discrete,
            inner,
            q_factor,
            initial_cov,
            initial_factor,
            schedule,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn discrete(&self) -> &DiscreteModel {
        &self.discrete
    }

    pub fn initial_cov(&self) -> &DMatrix<f64> {
        &self.initial_cov
    }

    /// Run with RNG stream `stream` of the configured seed and the given kicks.
    pub fn run(&self, stream: u64, kicks: &[Kick]) -> Result<SimOutput> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let n_states = self.discrete.n_states();
        let mut normal = |len: usize| -> DVector<f64> {
            DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
        };

        let mut x = match (&cfg.initial, &self.initial_factor) {
            (InitialState::Given(v), _) => DVector::from_column_slice(v),
            (InitialState::Stationary, Some(f)) => f * normal(n_states),
            _ => DVector::zeros(n_states),
        };
        let mut regulator = cfg.gains.clone().map(Regulator::new);
        let r_std = self.discrete.r[(0, 0)].sqrt();

        let mut kick_dv: Vec<(usize, DVector<f64>)> = Vec::with_capacity(kicks.len());
        for k in kicks {
            let mut dv = DVector::zeros(n_states);
            for (i, w) in k.weights.iter().enumerate() {
                let idx = self.discrete.velocity_index(i).expect("mode has a velocity state");
                dv[idx] += w * k.momentum / self.discrete.masses[i];
            }
            kick_dv.push((k.index, dv));
        }

        let mut y = Vec::with_capacity(cfg.n);
        let mut u = Vec::with_capacity(cfg.n);
        let mut states = cfg.record_states.then(|| Vec::with_capacity(cfg.n));
        let mut next = DVector::zeros(n_states);
        let mut held_u = 0.0;

        for k in 0..cfg.n {
            for (idx, dv) in &kick_dv {
                if *idx == k {
                    x += dv;
                }
            }
            if let Some(s) = states.as_mut() {
                s.push(x.clone());
            }
            let noise = if cfg.measurement_noise { r_std * normal(1)[0] } else { 0.0 };
            let yk = (&self.discrete.c * &x)[0] + noise;

            let uk = match (&mut regulator, self.schedule) {
                (Some(reg), Some(Schedule::Sub(m))) if m > 1 => {
                    let (d, f) = self.inner.as_ref().expect("inner model built for sub-stepping");
                    let mut sum = 0.0;
                    for _ in 0..m {
                        let uj = reg.output();
                        reg.update(yk);
                        sum += uj;
                        next.gemv(1.0, &d.a, &x, 0.0);
                        next.axpy(uj, &d.b.column(0), 1.0);
                        if cfg.process_noise {
                            next.gemv(1.0, f, &normal(n_states), 1.0);
                        }
                        std::mem::swap(&mut x, &mut next);
                    }
                    y.push(yk);
                    u.push(sum / m as f64);
                    continue;
                }
                (Some(reg), Some(Schedule::Every(m))) => {
                    if k % m == 0 {
                        held_u = reg.output();
                        reg.update(yk);
                    }
                    held_u
                }
                (Some(reg), _) => {
                    let uk = reg.output();
                    reg.update(yk);
                    uk
                }
                (None, _) => 0.0,
            };

            next.gemv(1.0, &self.discrete.a, &x, 0.0);
            next.axpy(uk, &self.discrete.b.column(0), 1.0);
            if cfg.process_noise {
                next.gemv(1.0, &self.q_factor, &normal(n_states), 1.0);
            }
            std::mem::swap(&mut x, &mut next);
            y.push(yk);
            u.push(uk);
        }

        Ok(SimOutput {
            trace: Trace {
                t_s: cfg.t_s,
                t0: 0.0,
                y,
                u,
            },
            states,
            discrete: self.discrete.clone(),
            initial_cov: self.initial_cov.clone(),
        })
    }
}

/// Simulate one trace with the configured kicks on RNG stream 0.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    let sim = Simulator::new(config.clone())?;
    sim.run(0, &config.kicks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    /// Kick momenta [kg·m/s].
    pub magnitudes: Vec<f64>,
    pub trials_per_magnitude: usize,
    /// Kick sample; the trace length comes from the simulation config.
    pub t_p_index: usize,
    /// Kick projection onto the modes.
    pub weights: Vec<f64>,
    /// Velocity prior as a multiple of the pre-kick filter variance.
    pub prior_scale: f64,
}

/// One Monte Carlo trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub p_applied: f64,
    /// Velocity jump actually applied to mode 1 [m/s].
    pub dv1_applied: f64,
    pub estimate: KickEstimate,
}

/// Independent trials: trial `j` runs on RNG stream `j` of the master seed,
/// so results do not depend on scheduling.
pub fn run_montecarlo(config: &SimConfig, spec: &MonteCarloSpec) -> Result<Vec<TrialOutcome>> {
    if spec.trials_per_magnitude == 0 || spec.magnitudes.is_empty() {
        return Err(Error::invalid("kick", "need at least one magnitude and one trial"));
    }
    let mut base = config.clone();
    base.kicks.clear();
    base.record_states = false;
    let sim = Simulator::new(base)?;
    let model = sim.discrete().clone();
    if spec.t_p_index == 0 || spec.t_p_index >= config.n {
        return Err(Error::invalid("kick.t_p_index", format!("must lie in 1..{}", config.n)));
    }
    if spec.weights.len() != model.n_modes() {
        return Err(Error::invalid("kick.weights", format!("expected {} entries", model.n_modes())));
    }
    let initial = GaussianBelief::centered(sim.initial_cov().clone());
    let prior = prior_for(&model, &initial, spec.t_p_index, spec.prior_scale)?;
    let m1 = model.masses[0];
    let total = spec.magnitudes.len() * spec.trials_per_magnitude;
    (0..total)
        .into_par_iter()
        .map(|trial| {
            let p = spec.magnitudes[trial / spec.trials_per_magnitude];
            let kick = Kick {
                index: spec.t_p_index,
                momentum: p,
                weights: spec.weights.clone(),
            };
            let out = sim.run(trial as u64, std::slice::from_ref(&kick))?;
            let estimate = estimate_kick(&out.trace, &model, spec.t_p_index, &prior, &initial)?;
            Ok(TrialOutcome {
                trial,
                p_applied: p,
                dv1_applied: spec.weights[0] * p / m1,
                estimate,
            })
        })
        .collect()
}

/// Prior scaled to the predictor velocity variance reached at `t_p`.
///
/// The covariance recursion does not depend on the data, so it is run on
/// an all-zero trace.
pub fn prior_for(model: &DiscreteModel, initial: &GaussianBelief, t_p_index: usize, scale: f64) -> Result<KickPrior> {
    let zeros = Trace::new(model.t_s, vec![0.0; t_p_index], vec![0.0; t_p_index])?;
    let (_, at_tp) = crate::estimation::kf_innovations(&zeros, model, initial, &Default::default())?;
    KickPrior::relative(model, &at_tp.cov, scale)
}

/// Covariance bound a kick estimate will report for a trace of `n`
/// samples split at `t_p_index`; it does not depend on the data.
pub fn predicted_bound(
    model: &DiscreteModel,
    initial: &GaussianBelief,
    n: usize,
    t_p_index: usize,
    scale: f64,
) -> Result<DMatrix<f64>> {
    let prior = prior_for(model, initial, t_p_index, scale)?;
    let zeros = Trace::new(model.t_s, vec![0.0; n], vec![0.0; n])?;
    Ok(estimate_kick(&zeros, model, t_p_index, &prior, initial)?.bound)
}

/// Measurement-noise PSD for which the mode-1 velocity slot of the
/// predicted bound equals `target_dv` [m/s].
///
/// Bisection on `log R`; the bound grows monotonically with `R`.
pub fn calibrate_measurement_noise<F>(
    build: F,
    t_s: f64,
    n: usize,
    t_p_index: usize,
    scale: f64,
    target_dv: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<StateSpaceModel>,
{
    if !(target_dv > 0.0) {
        return Err(Error::invalid("calibration.target", "must be > 0"));
    }
    let bound_at = |log_r: f64| -> Result<f64> {
        let model = build(10f64.powf(log_r))?;
        let d = discretize(&model, t_s)?;
        let p0 = stationary_covariance(&d)?;
        let b = predicted_bound(&d, &GaussianBelief::centered(p0), n, t_p_index, scale)?;
        let k = d.velocity_index(0).expect("mode 1 exists");
        Ok(b[(k, k)].sqrt())
    };
    let (mut lo, mut hi) = (-24.0, -4.0);
    let (b_lo, b_hi) = (bound_at(lo)?, bound_at(hi)?);
    if !(b_lo < target_dv && target_dv < b_hi) {
        return Err(Error::invalid(
            "calibration.target",
            format!("{target_dv:e} outside attainable range [{b_lo:e}, {b_hi:e}]"),
        ));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bound_at(mid)? < target_dv {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}
