use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::control::{synthesize_lqg, CostWeights, DEFAULT_INPUT_WEIGHT};
use kicksense::estimation::{kf_innovations, kf_run, rts_run, steady_state_gains, FilterOptions, GaussianBelief, Trace};
use kicksense::lti::DiscreteModel;
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams, StateLabel};
use kicksense::riccati::{dare_filter_fixed_point, RiccatiOptions};
use kicksense::sim::{simulate, InitialState, SimConfig};
use nalgebra::{DMatrix, DVector};

fn scalar_model(a: f64, q: f64, r: f64) -> DiscreteModel {
    DiscreteModel {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, 0.0),
        q: DMatrix::from_element(1, 1, q),
        r: DMatrix::from_element(1, 1, r),
        c: DMatrix::from_element(1, 1, 1.0),
        t_s: 1.0,
        labels: vec![StateLabel::Velocity(0)],
        masses: vec![1.0],
    }
}

#[test]
fn long_trace_covariance_reaches_dare() {
    let model = build_full_model(&trampoline_modes(), &DisturbanceParams::default(), CALIBRATED_NOISE_PSD).unwrap();
    let w = CostWeights::energy(&model, DEFAULT_INPUT_WEIGHT).unwrap();
    let gains = synthesize_lqg(&model, &w, 1e-6, &RiccatiOptions::default()).unwrap();
    let mut cfg = SimConfig::new(model, 1e-6, 400_000, 3);
    cfg.gains = Some(gains);
    let out = simulate(&cfg).unwrap();
    let d = &out.discrete;
    let (_, last) = kf_innovations(&out.trace, d, &out.matched_initial_belief(), &FilterOptions::default()).unwrap();
    let dare = steady_state_gains(d, &RiccatiOptions::default()).unwrap().sigma;
    let n = d.n_states();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let s = (dare[(i, i)] * dare[(j, j)]).sqrt();
            if s > 0.0 {
                worst = worst.max((last.cov[(i, j)] - dare[(i, j)]).abs() / s);
            }
        }
    }
    assert!(worst <= 1e-9, "relative deviation {worst:e}");
}

#[test]
fn filter_forgets_its_initial_belief() {
    let model = scalar_model(0.9, 0.2, 0.5);
    let y: Vec<f64> = (0..400).map(|k| (k as f64 * 0.37).sin()).collect();
    let trace = Trace::new(1.0, y.clone(), vec![0.0; y.len()]).unwrap();
    let opts = FilterOptions::default();
    let a = GaussianBelief::new(0.0, DVector::from_element(1, 100.0), DMatrix::from_element(1, 1, 1e4)).unwrap();
    let b = GaussianBelief::new(0.0, DVector::from_element(1, -3.0), DMatrix::from_element(1, 1, 1e-3)).unwrap();
    let (_, fa) = kf_innovations(&trace, &model, &a, &opts).unwrap();
    let (_, fb) = kf_innovations(&trace, &model, &b, &opts).unwrap();
    assert!((fa.x[0] - fb.x[0]).abs() < 1e-10);
    assert!((fa.cov[(0, 0)] - fb.cov[(0, 0)]).abs() < 1e-12);
}

#[test]
fn smoother_reproduces_noise_free_state() {
    // tiny noise on a rotation: the smoother must track the true trajectory
    let th: f64 = 0.3;
    let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
    let model = DiscreteModel {
        a: a.clone(),
        b: DMatrix::zeros(2, 1),
        q: DMatrix::identity(2, 2) * 1e-20,
        r: DMatrix::from_element(1, 1, 1e-16),
        c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        t_s: 1.0,
        labels: vec![StateLabel::Position(0), StateLabel::Velocity(0)],
        masses: vec![1.0],
    };
    let n = 200;
    let mut x = DVector::from_row_slice(&[1.0, -0.5]);
    let mut truth = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        truth.push(x.clone());
        y.push(x[0]);
        x = &a * &x;
    }
    let trace = Trace::new(1.0, y, vec![0.0; n]).unwrap();
    let init = GaussianBelief::centered(DMatrix::identity(2, 2) * 10.0);
    let pass = kf_run(&trace, &model, &init, &FilterOptions::default()).unwrap();
    let smoothed = rts_run(&pass, &model).unwrap();
    for (s, t) in smoothed.iter().zip(&truth) {
        assert!((&s.x - t).amax() < 1e-6, "{} vs {}", s.x, t);
    }
}

#[test]
fn innovation_variance_matches_prediction() {
    let model = build_full_model(&trampoline_modes(), &DisturbanceParams::default(), CALIBRATED_NOISE_PSD).unwrap();
    let mut cfg = SimConfig::new(model, 1e-6, 200_000, 8);
    cfg.initial = InitialState::Stationary;
    let out = simulate(&cfg).unwrap();
    let pass = kf_run(&out.trace, &out.discrete, &out.matched_initial_belief(), &FilterOptions::default()).unwrap();
    let tail = 50_000;
    let measured = pass.innovations[tail..].iter().map(|e| e * e).sum::<f64>() / (pass.innovations.len() - tail) as f64;
    let predicted = pass.innovation_vars.last().copied().unwrap();
    assert!((measured / predicted - 1.0).abs() < 0.05, "{measured:e} vs {predicted:e}");
}

#[test]
fn scalar_filter_covariance_matches_fixed_point() {
    let model = scalar_model(0.95, 0.1, 1.0);
    let trace = Trace::new(1.0, vec![0.0; 2000], vec![0.0; 2000]).unwrap();
    let init = GaussianBelief::centered(DMatrix::from_element(1, 1, 5.0));
    let (_, last) = kf_innovations(&trace, &model, &init, &FilterOptions::default()).unwrap();
    let fp = dare_filter_fixed_point(&model.a, &model.c, &model.q, &model.r, None, &RiccatiOptions::default()).unwrap();
    assert!((last.cov[(0, 0)] - fp.x[(0, 0)]).abs() < 1e-12);
}
