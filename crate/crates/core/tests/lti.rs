use approx::assert_relative_eq;
use kicksense::linalg::{expm, min_eigenvalue};
use kicksense::lti::{discretize, input_matrix_via_inverse, van_loan_q};
use kicksense::model::{build_full_model, build_mode_system, trampoline_modes, DisturbanceParams, ModeParams};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn mode_strategy() -> impl Strategy<Value = ModeParams> {
    (1e3f64..2e5, 1e2f64..1e6, 1e-13f64..1e-11).prop_map(|(f, q, m)| ModeParams::new(f, q, m, 1e-12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn input_matrix_matches_inverse_formula(mode in mode_strategy(), t_s in 1e-7f64..1e-5) {
        let model = build_full_model(&[mode], &DisturbanceParams::off(), 1e-14).unwrap();
        let d = discretize(&model, t_s).unwrap();
        // the resonator block of A is invertible
        let a = model.a.view((0, 0), (2, 2)).into_owned();
        let ad = d.a.view((0, 0), (2, 2)).into_owned();
        let b = model.b.view((0, 0), (2, 1)).into_owned();
        let via_inv = input_matrix_via_inverse(&a, &ad, &b).unwrap();
        let bd = d.b.view((0, 0), (2, 1)).into_owned();
        prop_assert!((&bd - &via_inv).amax() <= 1e-8 * bd.amax());
    }

    #[test]
    fn process_noise_is_psd_and_composes(mode in mode_strategy(), t_s in 1e-7f64..1e-5) {
        let sys = build_mode_system(&mode).unwrap();
        let w = &sys.g * sys.g.transpose();
        let q1 = van_loan_q(&sys.a, &w, t_s);
        let q2 = van_loan_q(&sys.a, &w, 2.0 * t_s);
        let a1 = expm(&(&sys.a * t_s));
        let composed = &a1 * &q1 * a1.transpose() + &q1;
        prop_assert!(min_eigenvalue(&q1) >= -1e-12 * q1.amax());
        prop_assert!((&q2 - &composed).amax() <= 1e-9 * q2.amax());
    }

    #[test]
    fn exponential_semigroup(mode in mode_strategy(), t_s in 1e-7f64..1e-5) {
        let sys = build_mode_system(&mode).unwrap();
        let a1 = expm(&(&sys.a * t_s));
        let a3 = expm(&(&sys.a * (3.0 * t_s)));
        let prod = &a1 * &a1 * &a1;
        prop_assert!((&a3 - &prod).amax() <= 1e-10 * a3.amax());
    }
}

#[test]
fn measurement_noise_scales_with_rate() {
    let model = build_full_model(&trampoline_modes(), &DisturbanceParams::default(), 2e-14).unwrap();
    let d = discretize(&model, 1e-6).unwrap();
    assert_relative_eq!(d.r[(0, 0)], 1e-14 / 1e-6, max_relative = 1e-12);
    assert_eq!(d.n_states(), 10);
    assert_eq!(d.masses.len(), 3);
}

#[test]
fn discretize_rejects_bad_period() {
    let model = build_full_model(&trampoline_modes(), &DisturbanceParams::off(), 1e-14).unwrap();
    assert!(discretize(&model, 0.0).is_err());
    assert!(discretize(&model, f64::NAN).is_err());
}

#[test]
fn singular_a_handled_by_augmented_exponential() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let g = DMatrix::zeros(2, 1);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let r = DMatrix::from_element(1, 1, 1.0);
    let model = kicksense::model::StateSpaceModel::new(a, b, g, c, r).unwrap();
    let d = discretize(&model, 0.5).unwrap();
    // double integrator: B_d = [T²/2, T]
    assert_relative_eq!(d.b[(0, 0)], 0.125, epsilon = 1e-15);
    assert_relative_eq!(d.b[(1, 0)], 0.5, epsilon = 1e-15);
}
