//! Find the detection-noise level that gives a chosen kick bound.

use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::sim::calibrate_measurement_noise;

fn main() -> kicksense::Result<()> {
    let target: f64 = std::env::args().nth(1).map(|s| s.parse().expect("target Δv")).unwrap_or(2.9e-6);
    let mode1 = [trampoline_modes()[0]];
    let r = calibrate_measurement_noise(
        |r| build_full_model(&mode1, &DisturbanceParams::off(), r),
        1e-6,
        40_000,
        20_000,
        1e6,
        target,
    )?;
    println!("measurement noise PSD {r:.6e} (m/s)²/Hz gives a Δv bound of {target:e} m/s");
    Ok(())
}
