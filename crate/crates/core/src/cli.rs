//! Batch command line: `build`, `simulate`, `estimate`, `montecarlo`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::control::{closed_loop_eigenvalues, discrete_loop_radius};
use crate::error::{Error, Result};
use crate::estimation::{kf_innovations, kf_run, FilterOptions, GaussianBelief, Trace};
use crate::io::{self, EnsembleRow, Provenance};
use crate::kick::estimate_kick;
use crate::lti::{controllability_rank, discretize, is_stabilizable, observability_rank, DiscreteModel};
use crate::sim::{prior_for, run_montecarlo, stationary_covariance, Kick, Simulator};
use crate::spectral::{ensemble_stats, welch_psd, whiteness_test, WhitenessReport};

/// Exit status for invalid input.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for numerical failure.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kicksense", version, about = "Momentum-kick estimation on a feedback-controlled resonator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the model and regulator, run structural checks.
    Build(Common),
    /// Simulate one trace and its PSD.
    Simulate(Common),
    /// Estimate kicks on a recorded trace or on inline simulations.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Trace CSV (`t,y,u`); simulated inline when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also export the forward filter beliefs.
        #[arg(long)]
        beliefs: bool,
    },
    /// Monte Carlo over the configured kick magnitudes.
    Montecarlo(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON payload with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_sha256: String,
    pub seed: u64,
    pub data: T,
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    prov: Provenance,
}

impl Context {
    fn load(common: &Common) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.sim.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.output_dir = out.clone();
        }
        std::fs::create_dir_all(&cfg.output_dir)?;
        let prov = Provenance {
            config_sha256: cfg.sha256(),
            seed: cfg.sim.seed,
        };
        Ok(Self {
            out: cfg.output_dir.clone(),
            cfg,
            prov,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stamp<T>(&self, data: T) -> Stamped<T> {
        Stamped {
            config_sha256: self.prov.config_sha256.clone(),
            seed: self.prov.seed,
            data,
        }
    }

    fn write_text(&self, name: &str, body: &str) -> Result<()> {
        std::fs::write(self.path(name), format!("{}\n{body}", self.prov.line()))?;
        Ok(())
    }
}

/// Run a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Build(c) => cmd_build(&Context::load(c)?),
        Command::Simulate(c) => cmd_simulate(&Context::load(c)?),
        Command::Estimate {
            common,
            trace,
            beliefs,
        } => cmd_estimate(&Context::load(common)?, trace.as_deref(), *beliefs),
        Command::Montecarlo(c) => cmd_montecarlo(&Context::load(c)?),
    }
}

/// Map an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

fn cmd_build(ctx: &Context) -> Result<()> {
    let model = ctx.cfg.build_model()?;
    let discrete = discretize(&model, ctx.cfg.sim.t_s)?;
    let obs = observability_rank(&model.a, &model.c)?;
    let ctrb = controllability_rank(&model.a, &model.b)?;
    let stab = is_stabilizable(&model.a, &model.b)?;
    let gains = ctx.cfg.regulator(&model)?;

    io::write_json(&ctx.path("model.json"), &ctx.stamp(&model))?;
    io::write_json(&ctx.path("discrete_model.json"), &ctx.stamp(&discrete))?;

    let n = model.n_states();
    let mut r = String::new();
    writeln!(r, "states {n}").ok();
    writeln!(r, "labels {}", model.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")).ok();
    writeln!(r, "observable {} rank {}/{n}", obs.full, obs.rank).ok();
    writeln!(r, "controllable {} rank {}/{n}", ctrb.full, ctrb.rank).ok();
    writeln!(r, "stabilizable {stab}").ok();
    if let Some(g) = &gains {
        io::write_json(&ctx.path("gains.json"), &ctx.stamp(g))?;
        let mut ev = closed_loop_eigenvalues(&model, &g.k_c, &g.k_f);
        ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        writeln!(r, "exec_period {:e}", g.t_exec).ok();
        if (g.t_exec - discrete.t_s).abs() <= 1e-9 * discrete.t_s {
            writeln!(r, "sampled_loop_spectral_radius {}", discrete_loop_radius(&discrete, g)?).ok();
        }
        writeln!(r, "closed_loop_eigenvalues").ok();
        for z in ev {
            writeln!(r, "  {:e} {:+e}i", z.re, z.im).ok();
        }
    }
    ctx.write_text("build_report.txt", &r)?;
    log::info!("build: {n} states, outputs in {}", ctx.out.display());
    Ok(())
}

fn simulator(ctx: &Context) -> Result<Simulator> {
    let model = ctx.cfg.build_model()?;
    let gains = ctx.cfg.regulator(&model)?;
    Simulator::new(ctx.cfg.sim_config(&model, gains))
}

fn cmd_simulate(ctx: &Context) -> Result<()> {
    let mut sim_cfg = simulator(ctx)?.config().clone();
    sim_cfg.record_states = true;
    let sim = Simulator::new(sim_cfg)?;
    let out = sim.run(0, &[])?;
    io::write_trace(&ctx.path("trace.csv"), &out.trace, Some(&ctx.prov))?;
    if let Some(states) = &out.states {
        io::write_states(&ctx.path("states.csv"), out.trace.t_s, states, Some(&ctx.prov))?;
    }
    let a = &ctx.cfg.analysis;
    let seg = a.psd_segment_length.min(out.trace.len());
    let psd = welch_psd(&out.trace.y, 1.0 / out.trace.t_s, seg, a.psd_overlap, a.window)?;
    io::write_psd(&ctx.path("psd_y.csv"), &psd, Some(&ctx.prov))?;

    let mut r = String::new();
    writeln!(r, "samples {}", out.trace.len()).ok();
    writeln!(r, "feedback {}", sim.config().gains.is_some()).ok();
    for m in &ctx.cfg.model.modes {
        writeln!(r, "psd_peak {} Hz {:e}", m.f_hz, psd.peak_near(m.f_hz, 3.0 * psd.resolution())).ok();
    }
    ctx.write_text("simulate_summary.txt", &r)
}

fn whiteness_of(trace: &Trace, model: &DiscreteModel, initial: &GaussianBelief, ctx: &Context) -> Result<Option<WhitenessReport>> {
    if trace.len() < 10_000 {
        return Ok(None);
    }
    let (inn, _) = kf_innovations(trace, model, initial, &FilterOptions::default())?;
    Ok(Some(whiteness_test(&inn, &ctx.cfg.whiteness())?))
}

fn write_whiteness(r: &mut String, w: &Option<WhitenessReport>) {
    match w {
        Some(w) => {
            writeln!(
                r,
                "whiteness {} (lags within band {:.3}, max |rho| {:.2e}, flatness {:.2} dB)",
                if w.pass { "pass" } else { "fail" },
                w.fraction_within,
                w.max_abs_autocorr,
                w.flatness_db
            )
            .ok();
        }
        None => {
            writeln!(r, "whiteness n/a (fewer than 10000 samples)").ok();
        }
    }
}

fn write_group_summary(ctx: &Context, rows: &[EnsembleRow], r: &mut String) -> Result<()> {
    let points: Vec<(f64, f64)> = rows.iter().map(|e| (e.p_applied, e.p_est_mode1)).collect();
    match ensemble_stats(&points) {
        Ok(st) => {
            io::write_stats(&ctx.path("stats.csv"), &st.groups, Some(&ctx.prov))?;
            writeln!(r, "slope {:.4} intercept {:e}", st.slope, st.intercept).ok();
            for g in &st.groups {
                writeln!(r, "magnitude {:e} mean {:e} std {:e} n {}", g.magnitude, g.mean, g.std, g.n).ok();
            }
        }
        Err(_) => {
            writeln!(r, "slope n/a (fewer than two magnitudes)").ok();
        }
    }
    Ok(())
}

fn cmd_estimate(ctx: &Context, trace_path: Option<&Path>, beliefs: bool) -> Result<()> {
    let kick = ctx
        .cfg
        .kick
        .as_ref()
        .ok_or_else(|| Error::invalid("kick", "missing t_p schedule"))?;
    let sim = simulator(ctx)?;
    let model = sim.discrete().clone();
    let initial = GaussianBelief::centered(stationary_covariance(&model)?);
    let t_p = kick.t_p_index;
    let mut rows = Vec::new();
    let mut r = String::new();

    let traces: Vec<(f64, Trace)> = match trace_path {
        Some(p) => {
            let tr = io::read_trace(p)?;
            if ((tr.t_s - model.t_s) / model.t_s).abs() > 1e-6 {
                return Err(Error::invalid(
                    "trace",
                    format!("sample period {:e} differs from sim.t_s {:e}", tr.t_s, model.t_s),
                ));
            }
            vec![(f64::NAN, tr)]
        }
        None => {
            let spec = ctx.cfg.montecarlo_spec()?;
            spec.magnitudes
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let k = Kick {
                        index: t_p,
                        momentum: p,
                        weights: spec.weights.clone(),
                    };
                    sim.run(i as u64, &[k]).map(|o| (p, o.trace))
                })
                .collect::<Result<_>>()?
        }
    };
    if t_p == 0 || t_p >= traces[0].1.len() {
        return Err(Error::invalid("kick.t_p_index", "outside the trace"));
    }
    let prior = prior_for(&model, &initial, t_p, kick.prior_scale)?;

    for (i, (p, tr)) in traces.iter().enumerate() {
        let est = estimate_kick(tr, &model, t_p, &prior, &initial)?;
        if let Some(w) = &est.warning {
            writeln!(r, "warning trial {i}: {w}").ok();
        }
        rows.push(EnsembleRow {
            trial: i,
            p_applied: *p,
            p_est_mode1: est.momenta[0],
            dv1_est: est.dv(&model, 0),
            dz1_est: est.dz(&model, 0),
            bound_dv1: est.bound_dv(&model, 0),
        });
        write_whiteness(&mut r, &whiteness_of(tr, &model, &initial, ctx)?);
    }
    if beliefs {
        let pass = kf_run(&traces[0].1, &model, &initial, &FilterOptions::default())?;
        io::write_beliefs(&ctx.path("beliefs.csv"), &pass.priors, Some(&ctx.prov))?;
    }
    io::write_ensemble(&ctx.path("ensemble.csv"), &rows, Some(&ctx.prov))?;
    for row in &rows {
        writeln!(
            r,
            "trial {} p_applied {:e} p_est {:e} dv1 {:e} bound_dv1 {:e}",
            row.trial, row.p_applied, row.p_est_mode1, row.dv1_est, row.bound_dv1
        )
        .ok();
    }
    write_group_summary(ctx, &rows, &mut r)?;
    ctx.write_text("estimate_summary.txt", &r)
}

fn cmd_montecarlo(ctx: &Context) -> Result<()> {
    let model = ctx.cfg.build_model()?;
    let gains = ctx.cfg.regulator(&model)?;
    let sim_cfg = ctx.cfg.sim_config(&model, gains);
    let spec = ctx.cfg.montecarlo_spec()?;
    let outcomes = run_montecarlo(&sim_cfg, &spec)?;
    let rows: Vec<EnsembleRow> = outcomes.iter().map(EnsembleRow::from).collect();
    io::write_ensemble(&ctx.path("ensemble.csv"), &rows, Some(&ctx.prov))?;

    let mut r = String::new();
    writeln!(r, "trials {}", rows.len()).ok();
    let warned = outcomes.iter().filter(|o| o.estimate.warning.is_some()).count();
    writeln!(r, "stationarity warnings {warned}").ok();
    if let Some(first) = rows.first() {
        writeln!(r, "bound_dv1 {:e}", first.bound_dv1).ok();
    }
    write_group_summary(ctx, &rows, &mut r)?;

    // one extra trace without a kick for the whiteness verdict
    let sim = Simulator::new(sim_cfg)?;
    let out = sim.run(u64::MAX, &[])?;
    let w = whiteness_of(&out.trace, sim.discrete(), &out.matched_initial_belief(), ctx)?;
    write_whiteness(&mut r, &w);
    ctx.write_text("montecarlo_summary.txt", &r)
}
