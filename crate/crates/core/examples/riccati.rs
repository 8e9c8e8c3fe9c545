//! Continuous and discrete Riccati solutions for the resonator model.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::control::{kalman_bucy_gain, lqr_gain, CostWeights, DEFAULT_INPUT_WEIGHT};
use kicksense::estimation::steady_state_gains;
use kicksense::lti::discretize;
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::riccati::{dare_filter_fixed_point, RiccatiOptions};
use nalgebra::DMatrix;

fn main() -> kicksense::Result<()> {
    let opts = RiccatiOptions::default();

    let one = DMatrix::from_element(1, 1, 1.0);
    let golden = dare_filter_fixed_point(&one, &one, &one, &one, None, &opts)?;
    println!("scalar fixed point {:.15} after {} steps", golden.x[(0, 0)], golden.iterations);

    let model = build_full_model(&trampoline_modes(), &DisturbanceParams::default(), CALIBRATED_NOISE_PSD)?;
    let w = CostWeights::energy(&model, DEFAULT_INPUT_WEIGHT)?;
    let k_c = lqr_gain(&model, &w, &opts)?;
    let k_f = kalman_bucy_gain(&model, &opts)?;
    println!("controller gain K_c:");
    println!("  {}", k_c.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" "));
    println!("filter gain K_f:");
    println!("  {}", k_f.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" "));

    let d = discretize(&model, 1e-6)?;
    let ss = steady_state_gains(&d, &opts)?;
    println!("stationary predictor std per state:");
    for (i, label) in d.labels.iter().enumerate() {
        println!("  {label:>4}  {:.3e}", ss.sigma[(i, i)].sqrt());
    }
    Ok(())
}
