use std::fs;
use std::path::Path;
use std::process::Command;

use ldm_cli::commands::{cmd_diagnostics, cmd_ed_sweep, cmd_observables, cmd_train};
use ldm_cli::{Preset, RunConfig};
use ldm_core::oracle::{expectation, steady_state_ed};
use ldm_core::sampler::derive_seed;
use ldm_core::{init_params, LdmParameters, Observable, Variant};
use num_complex::Complex64;

const BIN: &str = env!("CARGO_BIN_EXE_ldm");

fn small_config(steps: usize) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
            "version": 1,
            "model": {{"variant": "ZZ", "n_sites": 2, "coupling": 2.0, "field": 0.5}},
            "ansatz": {{"beta": 1.0}},
            "sampler": {{"n_samples": 200, "burn_in": 40, "thinning": 2, "n_chains": 2}},
            "optimizer": {{"eta": 0.01, "lambda": 0.01, "max_steps": {steps}}},
            "outputs": "unused",
            "seed": 5
        }}"#
    ))
    .unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn ldm(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn zero_steps_emit_initial_parameters_and_an_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(0);
    let out = cmd_train(&cfg, None, dir.path()).unwrap();
    let expected = init_params(2, 2, 0.01, derive_seed(cfg.seed, 0)).unwrap();
    assert_eq!(out.params, expected);
    assert_eq!(
        LdmParameters::load(dir.path().join("checkpoint.json")).unwrap(),
        expected
    );
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1, "{trace}");
    assert_eq!(out.summary.steps, 0);
    assert_eq!(out.summary.final_cost_abs_sq, None);
    assert!(out.summary.exact_cost_abs_sq.is_some());
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(15);
    cfg.checkpoint_every = 5;
    cfg.physicality_every = 5;
    let config = write_config(dir.path(), &cfg);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let out_s = out.to_str().unwrap();
        let status = ldm(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_s,
            "--threads",
            "2",
        ]);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let cp = out.join("checkpoint.json");
        for sub in ["observables", "diagnostics"] {
            let s = ldm(&[
                sub,
                "--config",
                config.to_str().unwrap(),
                "--checkpoint",
                cp.to_str().unwrap(),
                "--out",
                out_s,
            ]);
            assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
        }
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in [
        "checkpoint.json",
        "trace.csv",
        "summary.json",
        "physicality.csv",
        "checkpoints/step_000010.json",
        "observables.csv",
        "diagnostics.json",
    ] {
        let (x, y) = (fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
        assert!(x == y, "{file} differs between runs");
    }
    let physicality = fs::read_to_string(a.join("physicality.csv")).unwrap();
    assert_eq!(physicality.lines().count(), 5, "{physicality}");

    let c = dir.path().join("c");
    let s = ldm(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "6",
    ]);
    assert!(s.status.success());
    assert_ne!(
        fs::read(a.join("trace.csv")).unwrap(),
        fs::read(c.join("trace.csv")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(3);
    let bad = cfg.to_json().replace("\"eta\": 0.01", "\"eta\": -1.0");
    let path = dir.path().join("bad.json");
    fs::write(&path, bad).unwrap();
    let out = ldm(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("optimizer"));

    let typo = cfg.to_json().replace("\"n_sites\": 2", "\"n_sites\": \"two\"");
    fs::write(&path, typo).unwrap();
    let out = ldm(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("model.n_sites") && msg.contains("line"), "{msg}");

    // a checkpoint for a different machine
    let config = write_config(dir.path(), &cfg);
    let cp = dir.path().join("other.json");
    LdmParameters::zeros(3, 1).save(&cp).unwrap();
    let out = ldm(&[
        "observables",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        cp.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweeps_beyond_the_size_limit_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(0);
    cfg.model.n_sites = 7;
    cfg.sweep = Some(serde_json::from_str(r#"{"parameter": "h", "values": [1.0]}"#).unwrap());
    let config = write_config(dir.path(), &cfg);
    let out = ldm(&[
        "ed-sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ed_sweep_rows_follow_sweep_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(0);
    cfg.model.n_sites = 3;
    cfg.sweep = Some(serde_json::from_str(r#"{"parameter": "h", "values": [2.0, 0.0, 1.0]}"#).unwrap());
    let rows = cmd_ed_sweep(&cfg, dir.path()).unwrap();
    let fields: Vec<f64> = rows.iter().map(|r| r.h).collect();
    assert_eq!(fields, [2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    for r in rows.iter().filter(|r| r.h == 0.0) {
        assert!((r.purity - 1.0).abs() < 1e-10);
        assert!(r.negativity.abs() < 1e-10);
        assert!((r.sz + 1.0).abs() < 1e-10);
    }
    let text = fs::read_to_string(dir.path().join("ed_sweep.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "h,subsystem,negativity,purity,sx,sz,szsz,sxsx"
    );
    assert_eq!(text.lines().count(), 7);
}

fn all_down(n: usize, m: usize) -> LdmParameters {
    let mut p = LdmParameters::zeros(n, m);
    p.a1_mut().fill(Complex64::new(-15.0, 0.0));
    p.a2_mut().fill(Complex64::new(15.0, 0.0));
    p
}

#[test]
fn observables_of_the_all_down_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(0);
    cfg.model.field = 0.0;
    let rows = cmd_observables(&cfg, &all_down(2, 2), dir.path()).unwrap();
    assert_eq!(rows[0].observable, "identity");
    assert_eq!((rows[0].value, rows[0].stderr), (1.0, 0.0));
    let sz = rows.iter().find(|r| r.observable == "sz").unwrap();
    assert!((sz.value + 1.0).abs() <= 0.02, "{sz:?}");
    let text = fs::read_to_string(dir.path().join("observables.csv")).unwrap();
    assert!(
        text.starts_with("observable,site,value,stderr,imag_residual\nidentity,,1e0,0e0,0e0\n"),
        "{text}"
    );
}

#[test]
fn single_chain_diagnostics_report_r_hat_as_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(0);
    cfg.sampler.n_chains = 1;
    let params = init_params(2, 2, 0.1, 1).unwrap();
    let report = cmd_diagnostics(&cfg, &params, dir.path()).unwrap();
    assert_eq!(report.r_hat.local_cost_re, None);
    assert!(report.r_hat.note.as_deref().unwrap().contains("2 chains"));
    assert!(report.physicality.is_some());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert!(json["r_hat"]["local_cost_re"].is_null());
}

#[test]
fn preset_subcommand_prints_a_loadable_config() {
    let out = ldm(&["preset", "fine-step", "--variant", "xx", "--sites", "3", "--field", "2"]);
    assert!(out.status.success());
    let cfg = RunConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, Preset::FineStep.config(Variant::Xx, 3, 2.0).unwrap());
}

#[test]
fn two_site_preset_converges_to_the_exact_steady_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Preset::Beta2.config(Variant::Zz, 2, 0.5).unwrap();
    let trained = cmd_train(&cfg, None, dir.path()).unwrap();
    assert!(trained.summary.converged, "{:?}", trained.summary);
    assert!(trained.summary.final_cost_abs_sq.unwrap() < 1e-3);
    assert!(
        trained.summary.exact_cost_abs_sq.unwrap() < 1e-3,
        "{:?}",
        trained.summary
    );

    let ed = steady_state_ed(&cfg.model).unwrap();
    let rows = cmd_observables(&cfg, &trained.params, dir.path()).unwrap();
    for r in rows.iter().skip(1) {
        let op = match r.observable {
            "sx" => Observable::SigmaX(0),
            "sz" => Observable::SigmaZ(0),
            "szsz" => Observable::SigmaZZ(0),
            "sxsx" => Observable::SigmaXX(0),
            other => panic!("unexpected {other}"),
        };
        let exact = expectation(&ed, op).unwrap().re;
        assert!((r.value - exact).abs() <= 3.0 * r.stderr, "{r:?} vs {exact}");
    }

    let report = cmd_diagnostics(&cfg, &trained.params, dir.path()).unwrap();
    let r = report.r_hat.local_cost_re.unwrap();
    assert!((1.0..=1.1).contains(&r), "{report:?}");
}
