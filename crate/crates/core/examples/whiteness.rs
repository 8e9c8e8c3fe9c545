//! Innovation whiteness of a matched filter against a mismatched one.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::estimation::{kf_innovations, FilterOptions, GaussianBelief};
use kicksense::lti::discretize;
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::sim::{simulate, stationary_covariance, SimConfig};
use kicksense::spectral::{whiteness_test, WhitenessConfig};

fn main() -> kicksense::Result<()> {
    let modes = trampoline_modes();
    let model = build_full_model(&modes, &DisturbanceParams::default(), CALIBRATED_NOISE_PSD)?;
    let out = simulate(&SimConfig::new(model, 1e-6, 200_000, 3))?;
    let cfg = WhitenessConfig::default();

    let (inn, _) = kf_innovations(&out.trace, &out.discrete, &out.matched_initial_belief(), &FilterOptions::default())?;
    let rep = whiteness_test(&inn, &cfg)?;
    println!(
        "matched:    pass {}  lags within {:.2}  flatness {:.2} dB",
        rep.pass, rep.fraction_within, rep.flatness_db
    );

    // a filter that believes the first mode sits 200 Hz higher
    let mut shifted = modes.clone();
    shifted[0].f_hz += 200.0;
    let wrong = discretize(&build_full_model(&shifted, &DisturbanceParams::default(), CALIBRATED_NOISE_PSD)?, 1e-6)?;
    let init = GaussianBelief::centered(stationary_covariance(&wrong)?);
    let (inn, _) = kf_innovations(&out.trace, &wrong, &init, &FilterOptions::default())?;
    let rep = whiteness_test(&inn, &cfg)?;
    println!(
        "mismatched: pass {}  lags within {:.2}  flatness {:.2} dB",
        rep.pass, rep.fraction_within, rep.flatness_db
    );
    Ok(())
}
