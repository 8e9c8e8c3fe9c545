//! Forward Kalman pass and RTS smoothing on a simulated trace.

use kicksense::config::CALIBRATED_NOISE_PSD;
use kicksense::estimation::{kf_run, rts_run, FilterOptions};
use kicksense::model::{build_full_model, trampoline_modes, DisturbanceParams};
use kicksense::sim::{simulate, SimConfig};

fn main() -> kicksense::Result<()> {
    let model = build_full_model(&trampoline_modes()[..1], &DisturbanceParams::off(), CALIBRATED_NOISE_PSD)?;
    let mut cfg = SimConfig::new(model, 1e-6, 20_000, 1);
    cfg.record_states = true;
    let out = simulate(&cfg)?;
    let states = out.states.as_ref().expect("states recorded");

    let pass = kf_run(&out.trace, &out.discrete, &out.matched_initial_belief(), &FilterOptions::default())?;
    let smoothed = rts_run(&pass, &out.discrete)?;

    let v = out.discrete.velocity_index(0).expect("mode 1");
    let rms = |est: &dyn Fn(usize) -> f64| {
        let e: f64 = (0..states.len()).map(|k| (est(k) - states[k][v]).powi(2)).sum();
        (e / states.len() as f64).sqrt()
    };
    let k = states.len() / 2;
    println!("mid-trace velocity std: filter {:.3e}, smoother {:.3e} m/s",
        pass.priors[k].cov[(v, v)].sqrt(),
        smoothed[k].cov[(v, v)].sqrt());
    println!("rms error:              filter {:.3e}, smoother {:.3e} m/s",
        rms(&|k| pass.priors[k].x[v]),
        rms(&|k| smoothed[k].x[v]));
    Ok(())
}
