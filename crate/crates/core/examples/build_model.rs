//! Build the three-mode resonator model and run the structural checks.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::lti::{controllability_rank, is_stabilizable, observability_rank};
use kicksense::model::{build_full_model, effective_mass, trampoline_modes, DisturbanceParams, ModeShape, ShapeSample};

fn main() -> kicksense::Result<()> {
    let modes = trampoline_modes();
    let model = build_full_model(&modes, &DisturbanceParams::default(), CALIBRATED_NOISE_PSD)?;

    println!("{} states:", model.n_states());
    for (label, row) in model.labels.iter().zip(model.a.row_iter()) {
        let entries: Vec<String> = row.iter().map(|v| format!("{v:>10.3e}")).collect();
        println!("  {label:>4} | {}", entries.join(" "));
    }
    for m in &modes {
        println!(
            "mode {:>8.2} kHz  Q {:>7.0}  m_eff {:.2e} kg  k_eff {:.3e} N/m",
            m.f_hz / 1e3,
            m.q,
            m.m_eff_kg,
            m.k_eff()
        );
    }

    let obs = observability_rank(&model.a, &model.c)?;
    let ctrb = controllability_rank(&model.a, &model.b)?;
    println!("observability rank   {}/{}", obs.rank, model.n_states());
    println!("controllability rank {}/{}", ctrb.rank, model.n_states());
    println!("stabilizable         {}", is_stabilizable(&model.a, &model.b)?);

    // effective mass of a uniform membrane with a half-sine shape
    let (side, thick, rho, cells) = (100e-6, 20e-9, 3000.0, 200);
    let h = side / cells as f64;
    let mut shape = ModeShape::default();
    for i in 0..cells {
        for j in 0..cells {
            let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let phi = (std::f64::consts::PI * x / side).sin() * (std::f64::consts::PI * y / side).sin();
            shape.samples.push(ShapeSample { x, y, z: 0.0, phi, rho, dv: h * h * thick });
        }
    }
    println!(
        "half-sine membrane: m_eff {:.3e} kg (a quarter of the {:.3e} kg total)",
        effective_mass(&shape)?,
        rho * side * side * thick
    );
    Ok(())
}
