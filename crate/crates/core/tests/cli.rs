use std::path::Path;
use std::process::Command;

use kicksense::cli::Stamped;
use kicksense::io::{read_ensemble, read_json, read_trace, Provenance};
use kicksense::model::StateSpaceModel;
use tempfile::TempDir;

const CONFIG: &str = r#"{
    "model": {
        "modes": [ { "f_hz": 23050.0, "q": 110000.0, "m_eff_kg": 4.52e-12, "b_f": 1e-12 } ],
        "disturbance": { "peak_freq_hz": 45000.0, "peak_q": 50.0, "peak_gain": 0.0,
                         "bp_low_hz": 1000.0, "bp_high_hz": 200000.0, "bp_gain": 0.0 }
    },
    "sim": { "n": 4000, "seed": 9 },
    "kick": { "t_p_index": 2000, "magnitudes": [0.0, 1e-15], "trials": 3 },
    "analysis": { "psd_segment_length": 1024 }
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kicksense"))
}

fn setup(config: &str) -> (TempDir, std::path::PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, config).unwrap();
    (dir, path)
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn all_subcommands_run() {
    let (dir, cfg) = setup(CONFIG);
    let out = dir.path().join("out");
    for sub in ["build", "simulate", "estimate", "montecarlo"] {
        let o = run(sub, &cfg, &out, &[]);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "model.json",
        "discrete_model.json",
        "gains.json",
        "build_report.txt",
        "trace.csv",
        "psd_y.csv",
        "ensemble.csv",
        "stats.csv",
        "estimate_summary.txt",
        "montecarlo_summary.txt",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let rows = read_ensemble(&out.join("ensemble.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    let prov = Provenance::read(&out.join("trace.csv")).unwrap().unwrap();
    assert_eq!(prov.seed, 9);
    assert_eq!(prov.config_sha256.len(), 64);
}

#[test]
fn estimate_reads_a_recorded_trace() {
    let (dir, cfg) = setup(CONFIG);
    let out = dir.path().join("out");
    assert!(run("simulate", &cfg, &out, &[]).status.success());
    let trace = out.join("trace.csv");
    assert_eq!(read_trace(&trace).unwrap().len(), 4000);
    let o = run("estimate", &cfg, &out, &["--trace", trace.to_str().unwrap(), "--beliefs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("beliefs.csv").exists());
    assert_eq!(read_ensemble(&out.join("ensemble.csv")).unwrap().len(), 1);
}

#[test]
fn validation_errors_exit_with_two() {
    let empty = CONFIG.replace(
        r#"[ { "f_hz": 23050.0, "q": 110000.0, "m_eff_kg": 4.52e-12, "b_f": 1e-12 } ]"#,
        "[]",
    );
    let zero_n = CONFIG.replace(r#""n": 4000"#, r#""n": 0"#);
    for (text, needle) in [(empty.as_str(), "modes: at least one required"), (zero_n.as_str(), "sim.n")] {
        let (dir, cfg) = setup(text);
        let o = run("build", &cfg, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle));
    }
    let o = bin().arg("build").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_json_round_trips_bit_for_bit() {
    let (dir, cfg) = setup(CONFIG);
    let out = dir.path().join("out");
    assert!(run("build", &cfg, &out, &[]).status.success());
    let path = out.join("model.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed: Stamped<StateSpaceModel> = read_json(&path).unwrap();
    let again = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    assert_eq!(text, again);
    let reparsed: Stamped<StateSpaceModel> = serde_json::from_str(&again).unwrap();
    assert_eq!(parsed, reparsed);
}

#[test]
fn fixed_seed_gives_identical_outputs() {
    let (dir, cfg) = setup(CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for sub in ["simulate", "montecarlo"] {
        assert!(run(sub, &cfg, &a, &[]).status.success());
        assert!(run(sub, &cfg, &b, &[]).status.success());
    }
    for f in ["trace.csv", "psd_y.csv", "ensemble.csv", "montecarlo_summary.txt"] {
        let read = |d: &Path| std::fs::read_to_string(d.join(f)).unwrap();
        assert!(read(&a) == read(&b), "{f} differs");
    }
    let c = dir.path().join("c");
    assert!(run("simulate", &cfg, &c, &["--seed", "10"]).status.success());
    let trace = |d: &Path| std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace(&a) != trace(&c));
}
