//! Continuous-time model of a multimode resonator plus measurement disturbance.
//!
//! Each mechanical mode is a damped oscillator with state `[z, v]`
//! (displacement in m, velocity in m/s) driven by thermomechanical force
//! noise and by the actuation voltage. The measured output is the sum of
//! modal velocities plus a disturbance subsystem made of a weakly damped
//! spurious peak and a band-pass shaped floor.
//!
//! All power spectral densities handed to this module are one-sided
//! (`unit²/Hz`). A one-sided PSD `S` of white noise corresponds to the
//! intensity `S/2` of a unit-intensity white process, so noise input
//! matrices carry `√(S/2)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use crate::linalg::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant (exact SI value) [J/K].
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Temperature assumed when a configuration does not specify one [K].
pub const DEFAULT_TEMPERATURE: f64 = 300.0;

/// Relative frequency separation below which two modes are rejected as degenerate.
pub const DEGENERATE_REL_TOL: f64 = 1e-6;

/// Physical parameters of one mechanical mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    /// Resonance frequency [Hz].
    pub f_hz: f64,
    /// Quality factor.
    pub q: f64,
    /// Effective mass [kg].
    pub m_eff_kg: f64,
    /// Actuation gain [N/V].
    pub b_f: f64,
    /// Bath temperature [K].
    #[serde(default = "default_temperature")]
    pub temperature_k: f64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl ModeParams {
    pub fn new(f_hz: f64, q: f64, m_eff_kg: f64, b_f: f64) -> Self {
        Self {
            f_hz,
            q,
            m_eff_kg,
            b_f,
            temperature_k: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature_k = t;
        self
    }

    /// Angular resonance frequency Ω = 2πf [rad/s].
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f_hz
    }

    /// Effective damping γ = Ω·m/Q [kg/s].
    pub fn gamma_eff(&self) -> f64 {
        self.omega() * self.m_eff_kg / self.q
    }

    /// Effective spring constant k = Ω²·m [N/m].
    pub fn k_eff(&self) -> f64 {
        self.omega().powi(2) * self.m_eff_kg
    }

    /// Amplitude decay rate Ω/(2Q) [1/s].
    pub fn decay_rate(&self) -> f64 {
        self.omega() / (2.0 * self.q)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let finite = [self.f_hz, self.q, self.m_eff_kg, self.b_f, self.temperature_k]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(path, "parameters must be finite"));
        }
        if self.f_hz <= 0.0 {
            return Err(Error::invalid(format!("{path}.f_hz"), "must be > 0"));
        }
        if self.q <= 0.0 {
            return Err(Error::invalid(format!("{path}.q"), "must be > 0"));
        }
        if self.m_eff_kg <= 0.0 {
            return Err(Error::invalid(format!("{path}.m_eff_kg"), "must be > 0"));
        }
        if self.temperature_k < 0.0 {
            return Err(Error::invalid(format!("{path}.temperature_k"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Parameters of the measurement-disturbance subsystem.
///
/// `peak_*` describe a weakly damped spurious resonance; `bp_*` a
/// second-order band-pass with poles at the two cutoff frequencies.
/// Gains are one-sided amplitude spectral densities of the disturbance
/// output at the peak and in the pass band, respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceParams {
    pub peak_freq_hz: f64,
    pub peak_q: f64,
    pub peak_gain: f64,
    pub bp_low_hz: f64,
    pub bp_high_hz: f64,
    pub bp_gain: f64,
}

impl DisturbanceParams {
    /// A disturbance model that contributes nothing to the output.
    pub fn off() -> Self {
        Self {
            peak_gain: 0.0,
            bp_gain: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let all = [
            self.peak_freq_hz,
            self.peak_q,
            self.peak_gain,
            self.bp_low_hz,
            self.bp_high_hz,
            self.bp_gain,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(path, "parameters must be finite"));
        }
        if self.peak_freq_hz <= 0.0 {
            return Err(Error::invalid(format!("{path}.peak_freq_hz"), "must be > 0"));
        }
        if self.peak_q <= 0.0 {
            return Err(Error::invalid(format!("{path}.peak_q"), "must be > 0"));
        }
        if !(self.bp_low_hz > 0.0 && self.bp_low_hz < self.bp_high_hz) {
            return Err(Error::invalid(
                format!("{path}.bp_low_hz"),
                "requires 0 < bp_low_hz < bp_high_hz",
            ));
        }
        if self.peak_gain < 0.0 || self.bp_gain < 0.0 {
            return Err(Error::invalid(path, "gains must be >= 0"));
        }
        Ok(())
    }
}

impl Default for DisturbanceParams {
    /// Qualitative fit: spurious line at 21 kHz and a floor rising from
    /// 10 kHz, flat up to 200 kHz. Gains are configuration values, not
    /// measured quantities.
    fn default() -> Self {
        Self {
            peak_freq_hz: 21e3,
            peak_q: 2000.0,
            peak_gain: 3e-6,
            bp_low_hz: 10e3,
            bp_high_hz: 200e3,
            bp_gain: 1e-7,
        }
    }
}

/// Semantic tag of one state entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLabel {
    Position(usize),
    Velocity(usize),
    /// State `k` (0 or 1) of the spurious-peak disturbance section.
    Peak(usize),
    /// State `k` (0 or 1) of the band-pass disturbance section.
    BandPass(usize),
}

impl std::fmt::Display for StateLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StateLabel::Position(i) => format!("z{}", i + 1),
            StateLabel::Velocity(i) => format!("v{}", i + 1),
            StateLabel::Peak(k) => format!("np{}", k + 1),
            StateLabel::BandPass(k) => format!("nf{}", k + 1),
        };
        f.pad(&s)
    }
}

/// Continuous-time linear stochastic model
/// `ẋ = A x + B u + G η`, `y = C x + ν` with unit-intensity `η` and
/// `ν` of intensity `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    #[serde(with = "crate::io::matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub g: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub r: DMatrix<f64>,
    pub labels: Vec<StateLabel>,
    /// Mechanical modes in state order, empty for hand-built models.
    #[serde(default)]
    pub modes: Vec<ModeParams>,
}

impl StateSpaceModel {
    /// Build a model from raw matrices, checking dimensions.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || g.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "A {}x{}, B {}x{}, G {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                g.nrows(),
                g.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if r.nrows() != c.nrows() || r.ncols() != c.nrows() {
            return Err(Error::Dimension("R must be m_y x m_y".into()));
        }
        let labels = (0..n).map(StateLabel::Position).collect();
        Ok(Self {
            a,
            b,
            g,
            c,
            r,
            labels,
            modes: Vec::new(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Index of the velocity state of mechanical mode `i`.
    pub fn velocity_index(&self, mode: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| *l == StateLabel::Velocity(mode))
    }

    pub fn position_index(&self, mode: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| *l == StateLabel::Position(mode))
    }

    /// Process-noise intensity `G Gᵀ`.
    pub fn noise_intensity(&self) -> DMatrix<f64> {
        &self.g * self.g.transpose()
    }

    /// Frequency response `C (iω I − A)⁻¹ M` for an input matrix `M`.
    pub fn frequency_response(&self, input: &DMatrix<f64>, f_hz: f64) -> Result<DMatrix<Complex64>> {
        let n = self.n_states();
        let w = 2.0 * PI * f_hz;
        let si_a = DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { Complex64::new(0.0, w) } else { Complex64::new(0.0, 0.0) };
            d - Complex64::new(self.a[(i, j)], 0.0)
        });
        let rhs = input.map(|v| Complex64::new(v, 0.0));
        let x = si_a
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular("frequency response"))?;
        let c = self.c.map(|v| Complex64::new(v, 0.0));
        Ok(c * x)
    }

    /// Analytic one-sided output PSD of the first output at `f_hz`:
    /// `2 (|C (iωI−A)⁻¹ G|² + R)`.
    pub fn output_psd(&self, f_hz: f64) -> Result<f64> {
        let h = self.frequency_response(&self.g, f_hz)?;
        let power: f64 = h.row(0).iter().map(|z| z.norm_sqr()).sum();
        Ok(2.0 * (power + self.r[(0, 0)]))
    }
}

/// One-sided thermomechanical force-noise PSD `4 k_B T γ_eff` [N²/Hz].
pub fn thermomechanical_psd(mode: &ModeParams) -> f64 {
    4.0 * BOLTZMANN * mode.temperature_k * mode.gamma_eff()
}

/// Matrices `(A_i, B_i, G_i, C_i)` of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DVector<f64>,
    pub c: DMatrix<f64>,
}

/// Two-state companion realization of one mode.
///
/// The force noise enters the velocity equation divided by the effective
/// mass so the state stays in `[m, m/s]`.
pub fn build_mode_system(mode: &ModeParams) -> Result<ModeSystem> {
    mode.validate("mode")?;
    let w = mode.omega();
    let m = mode.m_eff_kg;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -w / mode.q]);
    let b = DVector::from_row_slice(&[0.0, mode.b_f / m]);
    let g = DVector::from_row_slice(&[0.0, (0.5 * thermomechanical_psd(mode)).sqrt() / m]);
    let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    Ok(ModeSystem { a, b, g, c })
}

/// Assemble the block-diagonal model of all modes plus the disturbance.
///
/// State order: `[z1, v1, …, zk, vk, np1, np2, nf1, nf2]`. The output is
/// the sum of modal velocities plus the two disturbance outputs;
/// `measurement_noise_psd` is the one-sided PSD of the white detection
/// noise in output units²/Hz.
pub fn build_full_model(
    modes: &[ModeParams],
    dist: &DisturbanceParams,
    measurement_noise_psd: f64,
) -> Result<StateSpaceModel> {
    if modes.is_empty() {
        return Err(Error::invalid("modes", "at least one required"));
    }
    for (i, m) in modes.iter().enumerate() {
        m.validate(&format!("modes[{i}]"))?;
    }
    dist.validate("disturbance")?;
    if !(measurement_noise_psd > 0.0 && measurement_noise_psd.is_finite()) {
        return Err(Error::invalid("measurement_noise_psd", "must be > 0"));
    }
    for i in 0..modes.len() {
        for j in (i + 1)..modes.len() {
            let (fi, fj) = (modes[i].f_hz, modes[j].f_hz);
            if (fi - fj).abs() <= DEGENERATE_REL_TOL * fi.max(fj) {
                return Err(Error::invalid(
                    format!("modes[{j}].f_hz"),
                    format!("degenerate with modes[{i}] ({fi} Hz)"),
                ));
            }
        }
    }

    let k = modes.len();
    let n = 2 * k + 4;
    let n_noise = k + 2;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut g = DMatrix::zeros(n, n_noise);
    let mut c = DMatrix::zeros(1, n);
    let mut labels = Vec::with_capacity(n);

    for (i, mode) in modes.iter().enumerate() {
        let sys = build_mode_system(mode)?;
        let o = 2 * i;
        a.view_mut((o, o), (2, 2)).copy_from(&sys.a);
        b.view_mut((o, 0), (2, 1)).copy_from(&sys.b);
        g.view_mut((o, i), (2, 1)).copy_from(&sys.g);
        c.view_mut((0, o), (1, 2)).copy_from(&sys.c);
        labels.push(StateLabel::Position(i));
        labels.push(StateLabel::Velocity(i));
    }

    // spurious peak: unit gain from drive to output at resonance
    let o = 2 * k;
    let wp = 2.0 * PI * dist.peak_freq_hz;
    a[(o, o + 1)] = 1.0;
    a[(o + 1, o)] = -wp * wp;
    a[(o + 1, o + 1)] = -wp / dist.peak_q;
    g[(o + 1, k)] = dist.peak_gain / 2f64.sqrt();
    c[(0, o + 1)] = wp / dist.peak_q;
    labels.push(StateLabel::Peak(0));
    labels.push(StateLabel::Peak(1));

    // band-pass ω_h s / ((s+ω_l)(s+ω_h)), unit gain in the pass band
    let o = 2 * k + 2;
    let wl = 2.0 * PI * dist.bp_low_hz;
    let wh = 2.0 * PI * dist.bp_high_hz;
    a[(o, o + 1)] = 1.0;
    a[(o + 1, o)] = -wl * wh;
    a[(o + 1, o + 1)] = -(wl + wh);
    g[(o + 1, k + 1)] = dist.bp_gain / 2f64.sqrt();
    c[(0, o + 1)] = wh;
    labels.push(StateLabel::BandPass(0));
    labels.push(StateLabel::BandPass(1));

    let r = DMatrix::from_element(1, 1, 0.5 * measurement_noise_psd);
    Ok(StateSpaceModel {
        a,
        b,
        g,
        c,
        r,
        labels,
        modes: modes.to_vec(),
    })
}

/// One sample of a discretized mode shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Normalized modal displacement φ(r).
    pub phi: f64,
    /// Mass density ρ(r) [kg/m³].
    pub rho: f64,
    /// Volume element [m³].
    pub dv: f64,
}

/// Mode shape sampled on a volumetric grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModeShape {
    pub samples: Vec<ShapeSample>,
}

/// Effective mass `Σ |φ|² ρ ΔV` of a sampled mode shape [kg].
pub fn effective_mass(shape: &ModeShape) -> Result<f64> {
    if shape.samples.is_empty() {
        return Err(Error::invalid("mode_shape", "empty sample list"));
    }
    let mut total = 0.0;
    for (i, s) in shape.samples.iter().enumerate() {
        if !(s.dv > 0.0) {
            return Err(Error::invalid(format!("mode_shape[{i}].dv"), "must be > 0"));
        }
        if s.rho < 0.0 {
            return Err(Error::invalid(format!("mode_shape[{i}].rho"), "must be >= 0"));
        }
        total += s.phi * s.phi * s.rho * s.dv;
    }
    Ok(total)
}

/// Actuation gain from a driven response at resonance:
/// `b_F = A_out Q / (A_in C_m Ω)`.
pub fn force_calibration(a_in: f64, a_out: f64, mode: &ModeParams, c_m: f64) -> Result<f64> {
    if !(a_in > 0.0) {
        return Err(Error::invalid("a_in", "must be > 0"));
    }
    if !(c_m > 0.0) {
        return Err(Error::invalid("c_m", "must be > 0"));
    }
    Ok(a_out * mode.q / (a_in * c_m * mode.omega()))
}

/// The three dominant out-of-plane modes of the trampoline resonator
/// with the default actuation gain.
pub fn trampoline_modes() -> Vec<ModeParams> {
    vec![
        ModeParams::new(23.05e3, 110_000.0, 4.52e-12, DEFAULT_ACTUATION_GAIN),
        ModeParams::new(68.02e3, 150_000.0, 6.06e-13, DEFAULT_ACTUATION_GAIN),
        ModeParams::new(114.05e3, 112_000.0, 2.23e-13, DEFAULT_ACTUATION_GAIN),
    ]
}

/// Actuation gain used when none is calibrated [N/V].
pub const DEFAULT_ACTUATION_GAIN: f64 = 1e-12;
