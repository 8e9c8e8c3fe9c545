//! Estimate a single momentum kick on a feedback-cooled mode.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::control::{synthesize_lqg, CostWeights, DEFAULT_INPUT_WEIGHT};
use kicksense::kick::{estimate_kick, DEFAULT_PRIOR_SCALE};
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::riccati::RiccatiOptions;
use kicksense::sim::{prior_for, Kick, SimConfig, Simulator};

fn main() -> kicksense::Result<()> {
    let model = build_full_model(&trampoline_modes()[..1], &DisturbanceParams::off(), CALIBRATED_NOISE_PSD)?;
    let m1 = model.modes[0].m_eff_kg;
    let w = CostWeights::energy(&model, DEFAULT_INPUT_WEIGHT)?;
    let mut cfg = SimConfig::new(model, 1e-6, 40_000, 7);
    cfg.gains = Some(synthesize_lqg(&cfg.model, &w, 1e-6, &RiccatiOptions::default())?);

    let t_p = 20_000;
    let p = 1.32e-16;
    let sim = Simulator::new(cfg)?;
    let out = sim.run(0, &[Kick::mode1(t_p, p, 1)])?;

    let initial = out.matched_initial_belief();
    let prior = prior_for(&out.discrete, &initial, t_p, DEFAULT_PRIOR_SCALE)?;
    let est = estimate_kick(&out.trace, &out.discrete, t_p, &prior, &initial)?;
    println!("applied   p {p:.3e} kg·m/s  Δv {:.3e} m/s", p / m1);
    println!(
        "estimated p {:.3e} kg·m/s  Δv {:.3e} ± {:.3e} m/s",
        est.momenta[0],
        est.dv(&out.discrete, 0),
        est.bound_dv(&out.discrete, 0)
    );
    println!("estimated Δz {:.3e} m", est.dz(&out.discrete, 0));
    if let Some(w) = &est.warning {
        println!("warning: {w}");
    }
    Ok(())
}
