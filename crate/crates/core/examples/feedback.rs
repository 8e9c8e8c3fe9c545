//! LQG feedback on the three-mode model: spectra with and without control.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::control::{discrete_loop_radius, synthesize_lqg, CostWeights, DEFAULT_INPUT_WEIGHT};
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::riccati::RiccatiOptions;
use kicksense::sim::{simulate, SimConfig};
use kicksense::spectral::{welch_psd, Window};

fn main() -> kicksense::Result<()> {
    let input_weight: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("input weight"))
        .unwrap_or(DEFAULT_INPUT_WEIGHT);
    let modes = trampoline_modes();
    let model = build_full_model(&modes, &DisturbanceParams::default(), CALIBRATED_NOISE_PSD)?;
    let w = CostWeights::energy(&model, input_weight)?;
    let gains = synthesize_lqg(&model, &w, 1e-6, &RiccatiOptions::default())?;

    let open_cfg = SimConfig::new(model, 1e-6, 1 << 21, 5);
    let mut closed_cfg = open_cfg.clone();
    closed_cfg.gains = Some(gains.clone());
    let open = simulate(&open_cfg)?;
    let closed = simulate(&closed_cfg)?;
    println!("sampled loop spectral radius {:.6}", discrete_loop_radius(&open.discrete, &gains)?);

    let po = welch_psd(&open.trace.y, 1e6, 1 << 16, 0.5, Window::Hann)?;
    let pc = welch_psd(&closed.trace.y, 1e6, 1 << 16, 0.5, Window::Hann)?;
    let half = 3.0 * po.resolution();
    for m in &modes {
        let (a, b) = (po.peak_near(m.f_hz, half), pc.peak_near(m.f_hz, half));
        println!("{:>7.2} kHz: {a:.2e} → {b:.2e} (m/s)²/Hz, {:.1} dB", m.f_hz / 1e3, 10.0 * (a / b).log10());
    }
    let u_rms = (closed.trace.u.iter().map(|u| u * u).sum::<f64>() / closed.trace.len() as f64).sqrt();
    println!("actuator rms {u_rms:.3e} V");
    Ok(())
}
