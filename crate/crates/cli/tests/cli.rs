use std::path::Path;
use std::process::{Command, Output};

fn dmp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_category(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).expect("stderr is JSON");
    v["error"]["category"].as_str().unwrap().to_string()
}

#[test]
fn bench_synth_writes_41_predictions_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dmp(&["bench-synth", "--seed", "7", "--chain-length", "800", "--out", name], dir.path());
        let v = stdout_json(&out);
        assert_eq!(v["held_out"], 41);
        assert!(v["coverage"].as_f64().unwrap() >= 0.0);
    };
    run("a");
    run("b");
    let csv = std::fs::read_to_string(dir.path().join("a/predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 42);
    assert!(csv.starts_with("time,series,mean,var_latent,var_predictive,observed_truth\n"));
    for f in ["data.csv", "truth.csv", "predictions.csv", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn zero_chain_length_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    stdout_json(&dmp(&["simulate", "--synth", "--out", "d.csv"], dir.path()));
    let out = dmp(
        &["sample", "--data", "d.csv", "--nu", "0.5", "--rank", "2", "--chain-length", "0", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_category(&out), "validation");
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = dmp(&["fit", "--data", "missing.csv", "--nu", "1.5", "--rank", "1", "--out", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_category(&out), "io");

    let out = dmp(
        &["simulate", "--nu", "0.5", "--ell", "1,1", "--coupling", "1,2;2,1", "--tau2", "0.1,0.1", "--out", "x.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_category(&out), "numeric");

    std::fs::write(dir.path().join("c.toml"), "[stage2]\nchainlength = 10\n").unwrap();
    stdout_json(&dmp(&["simulate", "--synth", "--out", "d.csv"], dir.path()));
    let out = dmp(
        &["fit", "--data", "d.csv", "--nu", "0.5", "--rank", "2", "--config", "c.toml", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    let out = dmp(&["fit", "--data", "d.csv", "--nu", "1.0", "--rank", "2", "--out", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // Smoothness is a required flag.
    let out = dmp(&["fit", "--data", "d.csv", "--rank", "2", "--out", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

/// Writes `train.csv` (last 15 entries of series 2 blanked) and `truth.csv`.
fn simulated_split(dir: &Path, n: usize) {
    let n_arg = n.to_string();
    stdout_json(&dmp(
        &[
            "simulate", "--nu", "1.5", "--ell", "1,2", "--coupling", "1,0.7;0.7,1", "--tau2", "0.05,0.05", "--n",
            &n_arg, "--seed", "4", "--out", "truth.csv",
        ],
        dir,
    ));
    let text = std::fs::read_to_string(dir.join("truth.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i > lines.len() - 16 {
            let first = line.rsplit_once(',').unwrap().0;
            out.push_str(&format!("{first},\n"));
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    std::fs::write(dir.join("train.csv"), out).unwrap();
}

#[test]
fn dense_and_ssm_engines_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated_split(d, 50);
    stdout_json(&dmp(&["fit", "--data", "train.csv", "--nu", "1.5", "--rank", "2", "--out", "fit.json"], d));
    let post = stdout_json(&dmp(
        &[
            "sample", "--data", "train.csv", "--nu", "1.5", "--rank", "2", "--fit", "fit.json", "--chain-length", "600",
            "--chains", "2", "--out", "post.json",
        ],
        d,
    ));
    assert!(post["rho"][0][1].as_f64().unwrap().abs() <= 1.0);
    let mut smse = Vec::new();
    for engine in ["ssm", "dense"] {
        let out = engine.to_string() + ".csv";
        let m = stdout_json(&dmp(
            &[
                "predict", "--data", "train.csv", "--truth", "truth.csv", "--params", "post.json", "--engine", engine,
                "--out", &out,
            ],
            d,
        ));
        assert_eq!(m["n_predictions"], 15);
        smse.push(m["smse"].as_f64().unwrap());
    }
    assert!((smse[0] - smse[1]).abs() < 1e-8, "{smse:?}");

    let corr = stdout_json(&dmp(&["corr", "--params", "post.json"], d));
    assert_eq!(corr["rho"][0][0].as_f64().unwrap().round(), 1.0);
    let out = dmp(&["corr", "--params", "fit.json"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dense_engine_refuses_large_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated_split(d, 300);
    stdout_json(&dmp(&["fit", "--data", "train.csv", "--nu", "1.5", "--rank", "2", "--out", "fit.json"], d));
    let out = dmp(
        &["predict", "--data", "train.csv", "--params", "fit.json", "--engine", "dense", "--out", "p.csv"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    let m = stdout_json(&dmp(&["predict", "--data", "train.csv", "--params", "fit.json", "--out", "p.csv"], d));
    assert_eq!(m["n_predictions"], 15);
    assert!(m["smse"].is_null());
}
