//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{synthesize_lqg, CostWeights, RegulatorGains, DEFAULT_INPUT_WEIGHT};
use crate::error::{Error, Result};
use crate::kick::DEFAULT_PRIOR_SCALE;
use crate::model::{build_full_model, DisturbanceParams, ModeParams, StateSpaceModel};
use crate::riccati::RiccatiOptions;
use crate::sim::{InitialState, MonteCarloSpec, SimConfig};
use crate::spectral::{Window, WhitenessConfig};

/// Measurement-noise PSD [(m/s)²/Hz] at which the mode-1 kick bound of the
/// default single-mode Monte Carlo setup is 2.9e-6 m/s. A calibration
/// target, not a measured detector floor.
pub const CALIBRATED_NOISE_PSD: f64 = 1.4655e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub modes: Vec<ModeParams>,
    #[serde(default)]
    pub disturbance: DisturbanceParams,
    /// One-sided PSD of the detection noise [(m/s)²/Hz].
    #[serde(default = "default_noise_psd")]
    pub measurement_noise_psd: f64,
}

fn default_noise_psd() -> f64 {
    CALIBRATED_NOISE_PSD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_input_weight")]
    pub input_weight: f64,
    /// Regulator execution period; defaults to the sample period.
    #[serde(default)]
    pub t_exec: Option<f64>,
    /// Explicit gains instead of synthesis from the weights.
    #[serde(default)]
    pub gains: Option<RegulatorGains>,
}

fn yes() -> bool {
    true
}

fn default_input_weight() -> f64 {
    DEFAULT_INPUT_WEIGHT
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            enabled: true,
            input_weight: DEFAULT_INPUT_WEIGHT,
            t_exec: None,
            gains: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_t_s")]
    pub t_s: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_initial")]
    pub initial: InitialState,
}

fn default_t_s() -> f64 {
    1e-6
}

fn default_initial() -> InitialState {
    InitialState::Stationary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickSection {
    pub t_p_index: usize,
    /// Momenta [kg·m/s].
    pub magnitudes: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_prior_scale")]
    pub prior_scale: f64,
    /// Projection onto the modes; default is mode 1 only.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

fn default_trials() -> usize {
    100
}

fn default_prior_scale() -> f64 {
    DEFAULT_PRIOR_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_segment")]
    pub psd_segment_length: usize,
    #[serde(default = "default_overlap")]
    pub psd_overlap: f64,
    #[serde(default = "default_window")]
    pub window: Window,
    #[serde(default)]
    pub whiteness: WhitenessConfig,
}

fn default_segment() -> usize {
    1 << 16
}

fn default_overlap() -> f64 {
    0.5
}

fn default_window() -> Window {
    Window::Hann
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            psd_segment_length: default_segment(),
            psd_overlap: default_overlap(),
            window: Window::Hann,
            whiteness: WhitenessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub control: ControlSection,
    pub sim: SimSection,
    #[serde(default)]
    pub kick: Option<KickSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form, for provenance headers. The
    /// output directory is left out so relocated runs hash the same.
    pub fn sha256(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("configuration serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Check every section before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let model = self.build_model()?;
        let s = &self.sim;
        if !(s.t_s > 0.0 && s.t_s.is_finite()) {
            return Err(Error::invalid("sim.t_s", "must be > 0"));
        }
        if s.n == 0 {
            return Err(Error::invalid("sim.n", "must be ≥ 1"));
        }
        if let InitialState::Given(x) = &s.initial {
            if x.len() != model.n_states() {
                return Err(Error::invalid(
                    "sim.initial",
                    format!("expected {} entries", model.n_states()),
                ));
            }
        }
        let c = &self.control;
        if !(c.input_weight > 0.0 && c.input_weight.is_finite()) {
            return Err(Error::invalid("control.input_weight", "must be > 0"));
        }
        if let Some(t) = c.t_exec {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("control.t_exec", "must be > 0"));
            }
        }
        if let Some(g) = &c.gains {
            let n = model.n_states();
            if g.k_c.shape() != (1, n) || g.k_f.shape() != (n, 1) || g.a_f.shape() != (n, n) {
                return Err(Error::invalid("control.gains", format!("shapes do not match {n} states")));
            }
        }
        if let Some(k) = &self.kick {
            if k.t_p_index == 0 || k.t_p_index >= s.n {
                return Err(Error::invalid(
                    "kick.t_p_index",
                    format!("must lie in 1..{}", s.n),
                ));
            }
            if k.magnitudes.is_empty() {
                return Err(Error::invalid("kick.magnitudes", "at least one required"));
            }
            if let Some(i) = k.magnitudes.iter().position(|m| !m.is_finite()) {
                return Err(Error::invalid(format!("kick.magnitudes[{i}]"), "must be finite"));
            }
            if k.trials == 0 {
                return Err(Error::invalid("kick.trials", "must be ≥ 1"));
            }
            if !(k.prior_scale >= 0.0 && k.prior_scale.is_finite()) {
                return Err(Error::invalid("kick.prior_scale", "must be ≥ 0"));
            }
            if let Some(w) = &k.weights {
                if w.len() != self.model.modes.len() {
                    return Err(Error::invalid(
                        "kick.weights",
                        format!("expected {} entries", self.model.modes.len()),
                    ));
                }
            }
        }
        let a = &self.analysis;
        if a.psd_segment_length < 2 {
            return Err(Error::invalid("analysis.psd_segment_length", "must be ≥ 2"));
        }
        if !(0.0..1.0).contains(&a.psd_overlap) {
            return Err(Error::invalid("analysis.psd_overlap", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<StateSpaceModel> {
        let m = &self.model;
        build_full_model(&m.modes, &m.disturbance, m.measurement_noise_psd).map_err(|e| match e {
            Error::Invalid { path, message } if !path.starts_with("model.") && path != "modes" => {
                Error::Invalid {
                    path: format!("model.{path}"),
                    message,
                }
            }
            other => other,
        })
    }

    pub fn exec_period(&self) -> f64 {
        self.control.t_exec.unwrap_or(self.sim.t_s)
    }

    /// Regulator from explicit gains or synthesized from the weights;
    /// `None` when feedback is disabled.
    pub fn regulator(&self, model: &StateSpaceModel) -> Result<Option<RegulatorGains>> {
        if !self.control.enabled {
            return Ok(None);
        }
        let t_exec = self.exec_period();
        let gains = match &self.control.gains {
            Some(g) if g.t_exec == t_exec => g.clone(),
            Some(g) => g.with_exec_period(t_exec)?,
            None => {
                let w = CostWeights::energy(model, self.control.input_weight)?;
                synthesize_lqg(model, &w, t_exec, &RiccatiOptions::default())?
            }
        };
        Ok(Some(gains))
    }

    pub fn sim_config(&self, model: &StateSpaceModel, gains: Option<RegulatorGains>) -> SimConfig {
        let mut cfg = SimConfig::new(model.clone(), self.sim.t_s, self.sim.n, self.sim.seed);
        cfg.gains = gains;
        cfg.initial = self.sim.initial.clone();
        cfg
    }

    pub fn montecarlo_spec(&self) -> Result<MonteCarloSpec> {
        let k = self
            .kick
            .as_ref()
            .ok_or_else(|| Error::invalid("kick", "missing kick schedule"))?;
        let n_modes = self.model.modes.len();
        let weights = k.weights.clone().unwrap_or_else(|| {
            let mut w = vec![0.0; n_modes];
            w[0] = 1.0;
            w
        });
        Ok(MonteCarloSpec {
            magnitudes: k.magnitudes.clone(),
            trials_per_magnitude: k.trials,
            t_p_index: k.t_p_index,
            weights,
            prior_scale: k.prior_scale,
        })
    }

    pub fn whiteness(&self) -> WhitenessConfig {
        WhitenessConfig {
            sample_rate: 1.0 / self.sim.t_s,
            ..self.analysis.whiteness.clone()
        }
    }
}
