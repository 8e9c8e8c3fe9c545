use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::control::{synthesize_lqg, CostWeights, DEFAULT_INPUT_WEIGHT};
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::riccati::RiccatiOptions;
use kicksense::sim::{simulate, Kick, Simulator, SimConfig};

fn config(t_exec: f64) -> SimConfig {
    let model = build_full_model(&trampoline_modes()[..1], &DisturbanceParams::default(), CALIBRATED_NOISE_PSD).unwrap();
    let w = CostWeights::energy(&model, DEFAULT_INPUT_WEIGHT).unwrap();
    let gains = synthesize_lqg(&model, &w, t_exec, &RiccatiOptions::default()).unwrap();
    let mut cfg = SimConfig::new(model, 1e-6, 5_000, 12);
    cfg.gains = Some(gains);
    cfg
}

#[test]
fn streams_are_independent_and_reproducible() {
    let sim = Simulator::new(config(1e-6)).unwrap();
    let a = sim.run(3, &[]).unwrap();
    let b = sim.run(3, &[]).unwrap();
    let c = sim.run(4, &[]).unwrap();
    assert_eq!(a.trace.y, b.trace.y);
    assert_eq!(a.trace.u, b.trace.u);
    assert_ne!(a.trace.y, c.trace.y);
}

#[test]
fn stream_zero_is_the_default_run() {
    let cfg = config(1e-6);
    let direct = simulate(&cfg).unwrap();
    let via = Simulator::new(cfg).unwrap().run(0, &[]).unwrap();
    assert_eq!(direct.trace.y, via.trace.y);
}

#[test]
fn faster_and_slower_regulators_run() {
    for t_exec in [200e-9, 1e-6, 2e-6] {
        let out = simulate(&config(t_exec)).unwrap();
        assert_eq!(out.trace.len(), 5_000);
        assert!(out.trace.u.iter().all(|u| u.is_finite()));
    }
    // a period that is not a multiple or divisor of the sample period
    assert!(simulate(&config(0.7e-6)).is_err());
}

#[test]
fn kick_outside_trace_rejected() {
    let mut cfg = config(1e-6);
    cfg.kicks = vec![Kick::mode1(5_000, 1e-15, 1)];
    assert!(simulate(&cfg).is_err());
}
