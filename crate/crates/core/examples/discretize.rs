//! Exact zero-order-hold discretization and the Van Loan noise covariance.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::lti::{discretize, input_matrix_via_inverse};
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};

fn main() -> kicksense::Result<()> {
    let model = build_full_model(&trampoline_modes(), &DisturbanceParams::default(), CALIBRATED_NOISE_PSD)?;
    for t_s in [1e-7, 1e-6, 1e-5] {
        let d = discretize(&model, t_s)?;
        let via_inv = input_matrix_via_inverse(&model.a, &d.a, &model.b)?;
        println!(
            "T_s {t_s:.0e}: |B_d − A⁻¹(A_d − I)B| / |B_d| = {:.1e}, R_d = {:.3e}",
            (&d.b - &via_inv).amax() / d.b.amax(),
            d.r[(0, 0)]
        );
    }
    let d = discretize(&model, 1e-6)?;
    println!("process noise std per step:");
    for (i, label) in d.labels.iter().enumerate() {
        println!("  {label:>4}  {:.3e}", d.q[(i, i)].sqrt());
    }
    Ok(())
}
