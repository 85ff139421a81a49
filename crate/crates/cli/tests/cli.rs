use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn robustcg(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_robustcg"));
    cmd.args(args).env_remove("ROBUSTCG_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_ok(sub: &str, config: &Path, out: &Path, envs: &[(&str, &str)]) {
    let o = robustcg(&[sub, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()], envs);
    assert!(o.status.success(), "{sub} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn run_err(sub: &str, config: &Path, out: &Path) -> String {
    let o = robustcg(&[sub, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()], &[]);
    assert!(!o.status.success(), "{sub} unexpectedly succeeded");
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL_LASSO: &str = r#"{
  "experiment": "lasso-convergence",
  "n": 80, "d": 40, "sparsity": 3,
  "sigma": [0.0, 0.01],
  "max_iters": 60
}"#;

#[test]
fn lasso_files_are_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lasso.json", SMALL_LASSO);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("lasso-convergence", &cfg, &a, &[]);
    run_ok("lasso-convergence", &cfg, &b, &[]);
    let fa = sorted_files(&a);
    assert_eq!(fa, sorted_files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["lasso_sigma_0.01.csv", "lasso_sigma_0.csv", "lasso_summary.json"]);

    // rerunning into the same directory overwrites with the same bytes
    run_ok("lasso-convergence", &cfg, &a, &[]);
    assert_eq!(sorted_files(&a), fa);
}

#[test]
fn trace_csv_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lasso.json", SMALL_LASSO);
    let out = tmp.path().join("out");
    run_ok("lasso-convergence", &cfg, &out, &[]);
    let text = fs::read_to_string(out.join("lasso_sigma_0.csv")).unwrap();
    assert!(text.ends_with('\n'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,xdist,gap,eta"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 61);
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(fields[0], "0");
    // 17 significant digits in scientific notation
    assert_eq!(fields[1].split('e').next().unwrap().len(), 18);

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("lasso_summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for key in ["sigma", "final_xdist", "pre_plateau_slope"] {
        assert!(runs[0].get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn seed_flag_changes_the_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lasso.json", SMALL_LASSO);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("lasso-convergence", &cfg, &a, &[]);
    let o = robustcg(
        &["lasso-convergence", "--config", cfg.to_str().unwrap(), "--out-dir", b.to_str().unwrap(), "--seed", "7"],
        &[],
    );
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("lasso_sigma_0.csv")).unwrap(), fs::read(b.join("lasso_sigma_0.csv")).unwrap());
}

#[test]
fn config_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("lasso-convergence", r#"{"experiment": "lasso-convergence", "n": "many"}"#, "`n`"),
        ("lasso-convergence", r#"{"experiment": "lasso-convergence", "colour": 1}"#, "`colour`"),
        ("lasso-convergence", r#"{"experiment": "lasso-convergence", "epsilon": 0.7}"#, "`epsilon`"),
        ("lasso-convergence", r#"{"experiment": "lasso-convergence", "n": [100, 200]}"#, "`n`"),
        ("haar-convergence", r#"{"experiment": "haar-convergence", "d": 500}"#, "`d`"),
        ("rasc-audit", r#"{"experiment": "rasc-audit"}"#, "`sigma_x`"),
        ("heavy-tail-sweep", r#"{"experiment": "lasso-convergence"}"#, "`experiment`"),
    ];
    for (i, (sub, body, key)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.json"), body);
        let msg = run_err(sub, &cfg, &out);
        assert!(msg.contains(key), "case {i}: {msg:?} does not name {key}");
    }
    assert!(!out.exists(), "failed runs must not write outputs");
}

#[test]
fn missing_config_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let msg = run_err("lasso-convergence", &tmp.path().join("absent.json"), &tmp.path().join("out"));
    assert!(msg.contains("absent.json"), "{msg}");
}

#[test]
fn heavy_tail_sweep_rows_are_ordered_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ht.json",
        r#"{"experiment": "heavy-tail-sweep", "n": [60, 120], "d": 30, "sparsity": 3, "reps": 2, "max_iters": 40}"#,
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("heavy-tail-sweep", &cfg, &a, &[("ROBUSTCG_THREADS", "1")]);
    run_ok("heavy-tail-sweep", &cfg, &b, &[("ROBUSTCG_THREADS", "3")]);
    assert_eq!(sorted_files(&a), sorted_files(&b));

    let text = fs::read_to_string(a.join("heavy_tail.csv")).unwrap();
    let keys: Vec<String> = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect();
    assert_eq!(
        keys,
        [
            "n,rep,setting",
            "60,0,robust_lognormal",
            "60,0,mean_gaussian",
            "60,1,robust_lognormal",
            "60,1,mean_gaussian",
            "120,0,robust_lognormal",
            "120,0,mean_gaussian",
            "120,1,robust_lognormal",
            "120,1,mean_gaussian",
        ]
    );
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("heavy_tail_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_n"].as_array().unwrap().len(), 2);
    assert!(summary.get("loglog_slope").is_some());
}

#[test]
fn bad_thread_cap_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ht.json",
        r#"{"experiment": "heavy-tail-sweep", "n": [60], "d": 30, "sparsity": 3, "reps": 1, "max_iters": 5}"#,
    );
    let out = tmp.path().join("out");
    let o = robustcg(
        &["heavy-tail-sweep", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()],
        &[("ROBUSTCG_THREADS", "zero")],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ROBUSTCG_THREADS"));
}

#[test]
fn haar_run_writes_signal_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "haar.json",
        r#"{"experiment": "haar-convergence", "n": 60, "d": 32, "sparsity": 3, "sigma": 0.0, "max_iters": 30}"#,
    );
    let out = tmp.path().join("out");
    run_ok("haar-convergence", &cfg, &out, &[]);
    let signal = fs::read_to_string(out.join("haar_signal.csv")).unwrap();
    assert_eq!(signal.lines().count(), 33);
    assert!(out.join("haar_sigma_0.csv").exists());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("haar_summary.json")).unwrap()).unwrap();
    assert!(summary.get("note").is_none(), "no remap note unless d = 512");
}

#[test]
fn audit_of_clean_mean_run_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "audit.json",
        r#"{
          "experiment": "rasc-audit",
          "n": 4000, "d": 8, "sparsity": 2, "sigma": 0.0, "epsilon": 0.0,
          "estimator": {"kind": "mean"},
          "max_iters": 60,
          "sigma_x": {"kind": "identity"}
        }"#,
    );
    let out = tmp.path().join("out");
    run_ok("rasc-audit", &cfg, &out, &[]);
    let text = fs::read_to_string(out.join("rasc_audit.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("iter,xdist,gap,eta,rasc_gap"));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("rasc_audit_summary.json")).unwrap()).unwrap();
    assert_eq!(report["theta_hat"], 0.0);
    assert_eq!(report["psi_hat"], 0.0);
    assert_eq!(report["pass"], true);
    assert!(report["coverage"].as_f64().unwrap() >= 0.95);
}
