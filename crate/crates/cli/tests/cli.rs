//! Exit-code and output contract of the `hdtn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MINIMAL: &str = r#"
[grid]
m = 17

[physics]
omega2 = 1.0
b1 = 1.0
b2 = 2.0

[truth]
coeffs = [1.5]

[schedule]
levels = [1, 4]

[bundle]
mode = "analytic"
lhat0 = 1.0
l0 = 1e-3
big_k = 0.01

[run]
max_iter = 20
"#;

fn hdtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdtn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    hdtn(&args)
}

#[test]
fn forward_writes_dtn_with_expected_header() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let out = run("forward", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dtn = fs::read_to_string(tmp.path().join("a/dtn.txt")).unwrap();
    assert!(dtn.starts_with("dtn 64 1.0\n"));
    assert_eq!(dtn.lines().count(), 65);
    for f in ["wplus.txt", "wminus.txt", "truth.pwc", "config.toml", "metadata.txt"] {
        assert!(tmp.path().join("a").join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(tmp.path().join("a/wplus.txt")).unwrap().starts_with("wplus 64\n"));
}

#[test]
fn forward_is_byte_identical_across_reruns_with_noise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("max_iter = 20", "max_iter = 20\nnoise = 1e-3"));
    for d in ["a", "b"] {
        assert_eq!(run("forward", &cfg, &tmp.path().join(d), &["--seed", "9"]).status.code(), Some(0));
    }
    for f in ["dtn.txt", "config.toml", "metadata.txt"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    // a different seed changes the noisy data
    run("forward", &cfg, &tmp.path().join("c"), &["--seed", "10"]);
    assert_ne!(fs::read(tmp.path().join("a/dtn.txt")).unwrap(), fs::read(tmp.path().join("c/dtn.txt")).unwrap());
}

#[test]
fn forbidden_band_exits_2_with_band_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("omega2 = 1.0", "omega2 = 12.0"));
    let out = run("forward", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("forbidden band"), "{err}");
    assert!(!tmp.path().join("a").exists());
}

#[test]
fn missing_data_file_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("max_iter = 20", "max_iter = 20\ndata = \"nowhere.txt\""));
    assert_eq!(run("reconstruct", &cfg, &tmp.path().join("a"), &[]).status.code(), Some(3));
    assert_eq!(run("forward", &tmp.path().join("absent.toml"), &tmp.path().join("b"), &[]).status.code(), Some(3));
}

#[test]
fn usage_errors_exit_64() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("levels = [1, 4]", "levels = []"));
    let out = run("reconstruct", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty schedule"));
    assert_eq!(run("constants", &cfg, &tmp.path().join("b"), &[]).status.code(), Some(64));
    assert_eq!(hdtn(&[]).status.code(), Some(64));
    assert_eq!(hdtn(&["bogus"]).status.code(), Some(64));
    assert_eq!(hdtn(&["forward"]).status.code(), Some(64));
    assert_eq!(hdtn(&["--help"]).status.code(), Some(0));
    let bad = write_config(tmp.path(), "bad.toml", "[grid]\nm = 16\n[physics]\nomega2 = 1.0\nb1 = 1.0\nb2 = 2.0\n[truth]\ncells_per_side = 2\ncoeffs = [1.5, 1.5, 1.5, 1.5]\n");
    let out = run("forward", &bad, &tmp.path().join("c"), &[]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth.cells_per_side"));
}

#[test]
fn out_of_bounds_truth_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("coeffs = [1.5]", "coeffs = [2.5]"));
    assert_eq!(run("forward", &cfg, &tmp.path().join("a"), &[]).status.code(), Some(2));
}

#[test]
fn refused_transition_exits_2_unless_overridden() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace("big_k = 0.01", "big_k = 0.01\nphi = { kind = \"power_law\", c_phi = 1e6, beta = 1.0 }");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = run("reconstruct", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frequency condition"));
    let out = run("reconstruct", &cfg, &tmp.path().join("b"), &["--override-level-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("b/bound_report.txt")).unwrap();
    assert!(report.contains("warning.0 = refinement 1 -> 4 proceeds under override"));
    assert!(fs::read_to_string(tmp.path().join("b/config.toml")).unwrap().contains("override_level_check = true"));
}

#[test]
fn reconstruct_from_a_data_file_matches_in_run_synthesis() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    assert_eq!(run("forward", &cfg, &tmp.path().join("f"), &[]).status.code(), Some(0));
    let data = tmp.path().join("f/dtn.txt");
    let with_file = MINIMAL.replace("max_iter = 20", &format!("max_iter = 20\ndata = {:?}", data.to_str().unwrap()));
    let cfg2 = write_config(tmp.path(), "d.toml", &with_file);
    assert_eq!(run("reconstruct", &cfg, &tmp.path().join("a"), &[]).status.code(), Some(0));
    assert_eq!(run("reconstruct", &cfg2, &tmp.path().join("b"), &[]).status.code(), Some(0));
    for f in ["level_0_n1.csv", "level_1_n4.csv", "final.pwc", "bound_report.txt"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    // an exactly representable constant truth stops at once on the coarsest level
    let levels = fs::read_to_string(tmp.path().join("a/levels.csv")).unwrap();
    let first: Vec<&str> = levels.lines().nth(1).unwrap().split(',').collect();
    assert!(first[2] == "0" || first[2] == "1", "{levels}");
}

#[test]
fn calibrate_emits_a_reusable_bundle() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL
        .replace("mode = \"analytic\"", "mode = \"calibrate\"\nsamples = 10\nbig_ns = [1, 4]")
        .replace("m = 17", "m = 9");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = run("calibrate", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = fs::read_to_string(tmp.path().join("a/bundle.toml")).unwrap();
    assert!(bundle.contains("mode = \"analytic\"") && bundle.contains("big_k = "));
    let small = text.replace("samples = 10", "samples = 9");
    let cfg = write_config(tmp.path(), "s.toml", &small);
    assert_eq!(run("calibrate", &cfg, &tmp.path().join("b"), &[]).status.code(), Some(1));
}

#[test]
fn constants_tables_are_written() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace("big_k = 0.01", "big_k = 0.01\nphi = { kind = \"power_law\", c_phi = 1e-4, beta = 2.0 }");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = run("constants", &cfg, &tmp.path().join("a"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    for f in ["level_constants.csv", "transitions.csv", "rho_vs_omega.csv", "rho_sweep.csv", "n_max.txt"] {
        assert!(tmp.path().join("a").join(f).exists(), "{f}");
    }
    let rho = fs::read_to_string(tmp.path().join("a/rho_vs_omega.csv")).unwrap();
    assert!(rho.starts_with("omega2,rho,denominator_bound,rho_lower_bound,note\n1.0,"));
}
