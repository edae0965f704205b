//! End-to-end tests of the `dpmest` binary: exit codes, artifact formats,
//! and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dpmest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn path_str(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn simulate_fit_ci_round_trip() {
    let dir = TempDir::new().unwrap();
    let sim = path_str(&dir, "sim.csv");
    let wald = path_str(&dir, "wald.csv");

    let out = dpmest(&["simulate", "--kind", "linear", "--n", "400", "--seed", "7", "--out", &sim]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&sim).exists());

    let out = dpmest(&[
        "ci", "--data", &sim, "--response", "y", "--model", "linear_huber", "--mu", "1.0",
        "--seed", "3", "--out", &wald,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let result = stdout_json(&out);
    let terms: Vec<&str> = result["terms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(terms, ["intercept", "z1", "z2", "z3", "sigma"]);
    assert_eq!(result["estimate"].as_array().unwrap().len(), 5);

    // Fit spends mu = 1, the sandwich spends mu = 1 on each of two releases.
    let mu_total = result["mu_total"].as_f64().unwrap();
    assert!((mu_total - 3f64.sqrt()).abs() < 1e-9, "mu_total = {mu_total}");

    // Correction only widens.
    let basic = result["basic"].as_array().unwrap();
    let corrected = result["corrected"].as_array().unwrap();
    assert_eq!(basic.len(), 5);
    for (b, c) in basic.iter().zip(corrected) {
        let bw = b["upper"].as_f64().unwrap() - b["lower"].as_f64().unwrap();
        let cw = c["upper"].as_f64().unwrap() - c["lower"].as_f64().unwrap();
        assert!(cw >= bw);
    }

    let table = std::fs::read_to_string(&wald).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "term,estimate,std_error,z_value,p_value");
    assert_eq!(lines.count(), 5);
}

#[test]
fn fit_emits_json_with_newton_diagnostics() {
    let dir = TempDir::new().unwrap();
    let sim = path_str(&dir, "sim.csv");
    dpmest(&["simulate", "--kind", "logistic", "--n", "600", "--seed", "2", "--out", &sim]);

    let out = dpmest(&[
        "fit", "--data", &sim, "--response", "y", "--model", "logistic", "--algo", "newton",
        "--mu", "1.0", "--seed", "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result = stdout_json(&out);
    assert_eq!(result["estimate"].as_array().unwrap().len(), 4);
    assert!((result["mu_spent"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(result["final_grad_norm"].as_f64().unwrap().is_finite());
}

#[test]
fn missing_data_file_exits_with_data_code() {
    let out = dpmest(&["fit", "--data", "/nonexistent/nope.csv", "--response", "y"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_model_family_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let sim = path_str(&dir, "sim.csv");
    dpmest(&["simulate", "--kind", "linear", "--n", "60", "--seed", "0", "--out", &sim]);

    let out = dpmest(&["fit", "--data", &sim, "--response", "y", "--model", "banana"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ci_without_out_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let sim = path_str(&dir, "sim.csv");
    dpmest(&["simulate", "--kind", "linear", "--n", "60", "--seed", "0", "--out", &sim]);

    let out = dpmest(&["ci", "--data", &sim, "--response", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn malformed_experiment_config_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "experiment = \"fit\"\nnot_a_field = 1\n").unwrap();

    let out = dpmest(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn no_noise_warns_loudly_on_stderr() {
    let dir = TempDir::new().unwrap();
    let sim = path_str(&dir, "sim.csv");
    dpmest(&["simulate", "--kind", "linear", "--n", "60", "--seed", "0", "--out", &sim]);

    let out = dpmest(&["fit", "--data", &sim, "--response", "y", "--no-noise"]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("WARNING"), "stderr: {err}");
    assert!(err.contains("no privacy guarantee"), "stderr: {err}");
}

#[test]
fn experiment_reruns_are_byte_identical_and_account_for_every_rep() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        format!(
            "experiment = \"fit\"\nreps = 4\nn_grid = [150]\nseed = 13\nout = {:?}\n\n\
             [optimizer]\nmu = 0.8\n",
            dir.path().join("a")
        ),
    )
    .unwrap();

    let out1 = dpmest(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert!(out1.status.success(), "{}", String::from_utf8_lossy(&out1.stderr));
    let out2 = dpmest(&[
        "experiment", "--config", cfg.to_str().unwrap(), "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert!(out2.status.success(), "{}", String::from_utf8_lossy(&out2.stderr));

    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "same config and seed must reproduce the CSV exactly");

    // diverged rows make `failed + succeeded = reps` checkable from the CSV.
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "experiment,rep,n,coordinate,metric,value");
    let diverged = text
        .lines()
        .filter(|l| l.contains(",diverged,"))
        .count();
    assert_eq!(diverged, 4);

    let summary = stdout_json(&out1);
    let reps = &summary["replications"][0];
    assert_eq!(
        reps["failed"].as_u64().unwrap() + reps["succeeded"].as_u64().unwrap(),
        4
    );
}

#[test]
fn seed_override_changes_private_estimates() {
    let dir = TempDir::new().unwrap();
    let sim = path_str(&dir, "sim.csv");
    // n large enough that the default stepsize is stable under noise.
    dpmest(&["simulate", "--kind", "linear", "--n", "1000", "--seed", "1", "--out", &sim]);

    let fit = |seed: &str| {
        let out = dpmest(&[
            "fit", "--data", &sim, "--response", "y", "--seed", seed,
        ]);
        assert!(out.status.success());
        stdout_json(&out)["estimate"].as_array().unwrap().clone()
    };
    assert_ne!(fit("1"), fit("2"));
    assert_eq!(fit("1"), fit("1"));
}
