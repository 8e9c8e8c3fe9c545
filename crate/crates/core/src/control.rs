//! LQR synthesis and the LQG regulator that runs in the feedback loop.
//!
//! The regulator is the continuous-time observer-based controller
//!
//! ```text
//! ẋ_r = A_f x_r + K_f y,   u = −K_c x_r,   A_f = A − K_f C − B K_c
//! ```
//!
//! executed at a fixed period `T_exec` through
//! `A_df = exp(A_f T_exec)` and `K_df = A_f⁻¹ (A_df − I) K_f`.

use nalgebra::{DMatrix, DVector};
use crate::linalg::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, expm};
use crate::lti::DiscreteModel;
use crate::model::{StateLabel, StateSpaceModel, BOLTZMANN};
use crate::riccati::{solve_care, RiccatiOptions};

/// Execution period of a 5 MHz FPGA regulator [s].
pub const DEFAULT_EXEC_PERIOD: f64 = 200e-9;

/// Default input weight `N` [1/V²] for the energy-normalized state cost.
pub const DEFAULT_INPUT_WEIGHT: f64 = 30.0;

/// Quadratic cost `∫ xᵀ M x + uᵀ N u dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    #[serde(with = "crate::io::matrix_serde")]
    pub m: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub n: DMatrix<f64>,
}

impl CostWeights {
    /// Modal energies in units of `k_B T`, nothing on disturbance states,
    /// and a scalar input weight.
    pub fn energy(model: &StateSpaceModel, input_weight: f64) -> Result<Self> {
        if !(input_weight > 0.0 && input_weight.is_finite()) {
            return Err(Error::invalid("control.input_weight", "must be > 0"));
        }
        let n = model.n_states();
        let mut m = DMatrix::zeros(n, n);
        for (i, label) in model.labels.iter().enumerate() {
            let w = match *label {
                StateLabel::Position(k) => model.modes.get(k).map(|p| {
                    p.k_eff() / (BOLTZMANN * p.temperature_k.max(1.0))
                }),
                StateLabel::Velocity(k) => model.modes.get(k).map(|p| {
                    p.m_eff_kg / (BOLTZMANN * p.temperature_k.max(1.0))
                }),
                _ => None,
            };
            m[(i, i)] = w.unwrap_or(0.0);
        }
        let l = model.n_inputs();
        Ok(Self {
            m,
            n: DMatrix::identity(l, l) * input_weight,
        })
    }
}

/// LQR gain `K_c = N⁻¹ Bᵀ V`.
pub fn lqr_gain(model: &StateSpaceModel, weights: &CostWeights, opts: &RiccatiOptions) -> Result<DMatrix<f64>> {
    let sol = solve_care(&model.a, &model.b, &weights.m, &weights.n, opts)?;
    let n_inv = weights
        .n
        .clone()
        .try_inverse()
        .ok_or(Error::invalid("control.N", "must be invertible"))?;
    Ok(n_inv * model.b.transpose() * sol.x)
}

/// Stationary Kalman–Bucy gain `K_f = Σ Cᵀ R⁻¹` from the dual CARE.
pub fn kalman_bucy_gain(model: &StateSpaceModel, opts: &RiccatiOptions) -> Result<DMatrix<f64>> {
    let sol = solve_care(
        &model.a.transpose(),
        &model.c.transpose(),
        &model.noise_intensity(),
        &model.r,
        opts,
    )?;
    let r_inv = model
        .r
        .clone()
        .try_inverse()
        .ok_or(Error::invalid("R", "must be invertible"))?;
    Ok(sol.x * model.c.transpose() * r_inv)
}

/// Gains and matrices of the assembled LQG regulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorGains {
    #[serde(with = "crate::io::matrix_serde")]
    pub k_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub k_f: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub a_f: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub a_df: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub k_df: DMatrix<f64>,
    pub t_exec: f64,
}

impl RegulatorGains {
    /// Re-discretize for another execution period.
    pub fn with_exec_period(&self, t_exec: f64) -> Result<Self> {
        let (a_df, k_df) = discretize_regulator(&self.a_f, &self.k_f, t_exec)?;
        Ok(Self {
            a_df,
            k_df,
            t_exec,
            ..self.clone()
        })
    }

    pub fn n_states(&self) -> usize {
        self.a_f.nrows()
    }
}

/// Plant plus continuous regulator, state `[x; x_r]`.
pub fn closed_loop_matrix(model: &StateSpaceModel, k_c: &DMatrix<f64>, k_f: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.n_states();
    let a_f = &model.a - k_f * &model.c - &model.b * k_c;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&model.a);
    m.view_mut((0, n), (n, n)).copy_from(&(-(&model.b * k_c)));
    m.view_mut((n, 0), (n, n)).copy_from(&(k_f * &model.c));
    m.view_mut((n, n), (n, n)).copy_from(&a_f);
    m
}

/// Eigenvalues of the continuous closed loop.
pub fn closed_loop_eigenvalues(model: &StateSpaceModel, k_c: &DMatrix<f64>, k_f: &DMatrix<f64>) -> Vec<Complex64> {
    linalg::eigenvalues(&closed_loop_matrix(model, k_c, k_f))
}

/// Assemble `A_f` and verify the 2n-state closed loop, discretizing at
/// [`DEFAULT_EXEC_PERIOD`].
pub fn assemble_lqg(model: &StateSpaceModel, k_c: &DMatrix<f64>, k_f: &DMatrix<f64>) -> Result<RegulatorGains> {
    let n = model.n_states();
    if k_c.shape() != (model.n_inputs(), n) || k_f.shape() != (n, model.n_outputs()) {
        return Err(Error::Dimension(format!(
            "K_c must be {}x{n}, K_f {n}x{}",
            model.n_inputs(),
            model.n_outputs()
        )));
    }
    let abscissa = linalg::spectral_abscissa(&closed_loop_matrix(model, k_c, k_f));
    if !(abscissa < 0.0) {
        return Err(Error::Unstable(format!(
            "closed loop has eigenvalue with real part {abscissa:e}"
        )));
    }
    let a_f = &model.a - k_f * &model.c - &model.b * k_c;
    let (a_df, k_df) = discretize_regulator(&a_f, k_f, DEFAULT_EXEC_PERIOD)?;
    Ok(RegulatorGains {
        k_c: k_c.clone(),
        k_f: k_f.clone(),
        a_f,
        a_df,
        k_df,
        t_exec: DEFAULT_EXEC_PERIOD,
    })
}

/// LQR and Kalman–Bucy gains for `weights`, assembled and discretized at `t_exec`.
pub fn synthesize_lqg(
    model: &StateSpaceModel,
    weights: &CostWeights,
    t_exec: f64,
    opts: &RiccatiOptions,
) -> Result<RegulatorGains> {
    let k_c = lqr_gain(model, weights, opts)?;
    let k_f = kalman_bucy_gain(model, opts)?;
    assemble_lqg(model, &k_c, &k_f)?.with_exec_period(t_exec)
}

/// `A_df = e^{A_f T}`, `K_df = A_f⁻¹ (A_df − I) K_f`.
///
/// Both blocks are read from the exponential of the augmented matrix
/// `[[A_f, K_f], [0, 0]] T`, whose upper-right block is
/// `∫₀ᵀ e^{A_f s} ds K_f`. That equals the inverse formula whenever `A_f`
/// is invertible, and it neither inverts `A_f` nor cancels `A_df − I`
/// for short periods.
pub fn discretize_regulator(a_f: &DMatrix<f64>, k_f: &DMatrix<f64>, t_exec: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(t_exec > 0.0 && t_exec.is_finite()) {
        return Err(Error::invalid("control.t_exec", "must be > 0"));
    }
    let n = a_f.nrows();
    if a_f.ncols() != n || k_f.nrows() != n {
        return Err(Error::Dimension("A_f must be n×n and K_f n×m".into()));
    }
    let m = k_f.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a_f);
    aug.view_mut((0, n), (n, m)).copy_from(k_f);
    let e = expm(&(aug * t_exec));
    let a_df = e.view((0, 0), (n, n)).into_owned();
    let k_df = e.view((0, n), (n, m)).into_owned();
    if !a_df.iter().chain(k_df.iter()).all(|v| v.is_finite()) {
        return Err(Error::Singular("regulator exponential"));
    }
    Ok((a_df, k_df))
}

/// The printed form `A_f⁻¹ (A_df − I) K_f`, for comparison.
pub fn regulator_input_via_inverse(a_f: &DMatrix<f64>, a_df: &DMatrix<f64>, k_f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_f.nrows();
    a_f.clone()
        .lu()
        .solve(&((a_df - DMatrix::identity(n, n)) * k_f))
        .ok_or(Error::Singular("A_f"))
}

/// Spectral radius of the sampled loop formed by a discrete plant and the
/// regulator executing once per plant sample.
pub fn discrete_loop_radius(plant: &DiscreteModel, gains: &RegulatorGains) -> Result<f64> {
    let n = plant.n_states();
    if gains.n_states() != n {
        return Err(Error::Dimension("regulator and plant state counts differ".into()));
    }
    if ((gains.t_exec - plant.t_s) / plant.t_s).abs() > 1e-9 {
        return Err(Error::invalid("control.t_exec", "must equal the plant sample period"));
    }
    // x⁺ = A_d x − B_d K_c x_r,  x_r⁺ = A_df x_r + K_df C x
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    m.view_mut((0, n), (n, n)).copy_from(&(-(&plant.b * &gains.k_c)));
    m.view_mut((n, 0), (n, n)).copy_from(&(&gains.k_df * &plant.c));
    m.view_mut((n, n), (n, n)).copy_from(&gains.a_df);
    Ok(linalg::spectral_radius(&m))
}

/// Running regulator state for a simulation.
#[derive(Debug, Clone)]
pub struct Regulator {
    gains: RegulatorGains,
    x: DVector<f64>,
}

impl Regulator {
    pub fn new(gains: RegulatorGains) -> Self {
        let n = gains.n_states();
        Self {
            gains,
            x: DVector::zeros(n),
        }
    }

    pub fn gains(&self) -> &RegulatorGains {
        &self.gains
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn set_state(&mut self, x: DVector<f64>) {
        self.x = x;
    }

    /// Current command `u = −K_c x_r` (single input).
    pub fn output(&self) -> f64 {
        -(self.gains.k_c.row(0) * &self.x)[0]
    }

    /// One execution with measurement `y` (single output).
    pub fn update(&mut self, y: f64) {
        let mut next = &self.gains.a_df * &self.x;
        next.axpy(y, &self.gains.k_df.column(0), 1.0);
        self.x = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_model(a: f64, b: f64) -> StateSpaceModel {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        StateSpaceModel::new(s(a), s(b), s(1.0), s(1.0), s(1.0)).unwrap()
    }

    fn weights(m: f64, n: f64) -> CostWeights {
        CostWeights {
            m: DMatrix::from_element(1, 1, m),
            n: DMatrix::from_element(1, 1, n),
        }
    }

    #[test]
    fn integrator_gain_is_one() {
        let k = lqr_gain(&scalar_model(0.0, 1.0), &weights(1.0, 1.0), &RiccatiOptions::default()).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_state_cost_gives_zero_gain() {
        let k = lqr_gain(&scalar_model(-1.0, 1.0), &weights(0.0, 1.0), &RiccatiOptions::default()).unwrap();
        assert!(k[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn heavier_input_weight_shrinks_gain() {
        // K = a + √(a² + m/n) for ẋ = a x + u
        let opts = RiccatiOptions::default();
        let model = scalar_model(-1.0, 1.0);
        let k1 = lqr_gain(&model, &weights(1.0, 1.0), &opts).unwrap()[(0, 0)];
        let k2 = lqr_gain(&model, &weights(1.0, 2.0), &opts).unwrap()[(0, 0)];
        assert_relative_eq!(k1, -1.0 + 2f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(k2, -1.0 + 1.5f64.sqrt(), epsilon = 1e-10);
        assert!(k2 < k1);
    }

    #[test]
    fn scalar_discretization_ln2() {
        let a_f = DMatrix::from_element(1, 1, -1.0);
        let k_f = DMatrix::from_element(1, 1, 1.0);
        let (a_df, k_df) = discretize_regulator(&a_f, &k_f, std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(a_df[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(k_df[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn augmented_route_matches_inverse_formula() {
        let a_f = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -3.0, -4.0]);
        let k_f = DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);
        let (a_df, k_df) = discretize_regulator(&a_f, &k_f, 0.3).unwrap();
        let printed = regulator_input_via_inverse(&a_f, &a_df, &k_f).unwrap();
        assert!((k_df - printed).amax() < 1e-14);
    }

    #[test]
    fn singular_a_f_is_fine() {
        let a_f = DMatrix::zeros(1, 1);
        let k_f = DMatrix::from_element(1, 1, 3.0);
        let (a_df, k_df) = discretize_regulator(&a_f, &k_f, 0.5).unwrap();
        assert_eq!(a_df[(0, 0)], 1.0);
        assert_relative_eq!(k_df[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn tiny_period_limit() {
        let a_f = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -3.0, -4.0]);
        let k_f = DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);
        let t = 1e-12;
        let (a_df, k_df) = discretize_regulator(&a_f, &k_f, t).unwrap();
        assert!((a_df - DMatrix::identity(2, 2)).amax() < 1e-11);
        assert!((k_df / t - &k_f).amax() < 1e-9);
    }

    #[test]
    fn pure_observer_when_k_c_zero() {
        let model = scalar_model(-1.0, 1.0);
        let k_f = DMatrix::from_element(1, 1, 0.7);
        let g = assemble_lqg(&model, &DMatrix::zeros(1, 1), &k_f).unwrap();
        assert_relative_eq!(g.a_f[(0, 0)], -1.7, epsilon = 1e-15);
    }

    #[test]
    fn unstable_assembly_is_rejected() {
        let model = scalar_model(1.0, 1.0);
        let zero = DMatrix::zeros(1, 1);
        assert!(matches!(
            assemble_lqg(&model, &zero, &zero),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn regulator_runner_matches_matrices() {
        let model = scalar_model(-1.0, 1.0);
        let g = assemble_lqg(&model, &DMatrix::from_element(1, 1, 2.0), &DMatrix::from_element(1, 1, 0.5))
            .unwrap()
            .with_exec_period(0.1)
            .unwrap();
        let mut r = Regulator::new(g.clone());
        r.update(1.0);
        assert_relative_eq!(r.state()[0], g.k_df[(0, 0)], epsilon = 1e-15);
        assert_relative_eq!(r.output(), -2.0 * g.k_df[(0, 0)], epsilon = 1e-15);
    }
}
