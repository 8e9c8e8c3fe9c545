//! Monte Carlo ensemble of kick estimates and the linear fit through it.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::control::{synthesize_lqg, CostWeights, DEFAULT_INPUT_WEIGHT};
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::riccati::RiccatiOptions;
use kicksense::sim::{run_montecarlo, MonteCarloSpec, SimConfig};
use kicksense::spectral::ensemble_stats;

fn main() -> kicksense::Result<()> {
    let trials: usize = std::env::args().nth(1).map(|s| s.parse().expect("trials")).unwrap_or(25);
    let model = build_full_model(&trampoline_modes()[..1], &DisturbanceParams::off(), CALIBRATED_NOISE_PSD)?;
    let w = CostWeights::energy(&model, DEFAULT_INPUT_WEIGHT)?;
    let mut cfg = SimConfig::new(model, 1e-6, 40_000, 2024);
    cfg.gains = Some(synthesize_lqg(&cfg.model, &w, 1e-6, &RiccatiOptions::default())?);

    let spec = MonteCarloSpec {
        magnitudes: vec![3.6e-17, 8.4e-17, 1.32e-16, 1.8e-16],
        trials_per_magnitude: trials,
        t_p_index: 20_000,
        weights: vec![1.0],
        prior_scale: 1e6,
    };
    let outcomes = run_montecarlo(&cfg, &spec)?;
    let points: Vec<(f64, f64)> = outcomes.iter().map(|o| (o.p_applied, o.estimate.momenta[0])).collect();
    let stats = ensemble_stats(&points)?;
    let bound_p = outcomes[0].estimate.bound[(1, 1)].sqrt() * cfg.model.modes[0].m_eff_kg;
    println!("bound on p: {bound_p:.3e} kg·m/s");
    for g in &stats.groups {
        println!("p {:.3e}: mean {:.3e}, std {:.3e} ({} trials)", g.magnitude, g.mean, g.std, g.n);
    }
    println!("slope {:.4}, intercept {:.2e}", stats.slope, stats.intercept);
    Ok(())
}
