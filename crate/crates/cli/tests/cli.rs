use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssrecon-lab")).args(args).env_remove("SSRECON_SEED").output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("sweep.json");
    std::fs::write(
        &path,
        r#"{"experiment": "denoise-gd", "n": 20, "d": 4, "sigma_z": 0.1,
            "sigma_e": [0.0, 0.1], "train_sizes": [10, 30, 100, 300], "trials": 2, "seed": 4}"#,
    )
    .unwrap();
    path
}

#[test]
fn sweep_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = lab(&["sweep", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = lab(&["sweep", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap(), "--workers", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next().unwrap(), "experiment,N,trial,param,risk,optimal_risk,excess,bound,wall_time_s");
    assert_eq!(text.lines().count(), 1 + 2 * 4 * 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = lab(&["sweep", "--config", config.to_str().unwrap(), "--trials", "1", "--train-sizes", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 2);
}

#[test]
fn fit_rate_reads_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let csv = dir.path().join("s.csv");
    lab(&["sweep", "--config", config.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    let out = lab(&["fit-rate", "--in", csv.to_str().unwrap(), "--group", "param"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines().skip(1) {
        let slope: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(slope < 0.0, "{line}");
    }
}

#[test]
fn mask_split_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.json");
    let out = lab(&[
        "mask-split",
        "--n-freq",
        "1000",
        "--nu",
        "0.08",
        "--p",
        "0.25",
        "--mu",
        "0.33",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let ones = |k: &str| v[k].as_array().unwrap().iter().filter(|b| b.as_u64() == Some(1)).count();
    assert_eq!(ones("center"), 80);
    assert_eq!(ones("m_input"), 250);
    assert_eq!(v["weights"].as_array().unwrap().len(), 1000);
}

#[test]
fn exit_codes() {
    // validation
    let out = lab(&["mask-split", "--n-freq", "100", "--nu", "0.3", "--p", "0.25", "--mu", "0.33"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lab(&["sweep", "--experiment", "denoise-gd", "--d", "3", "--sigma-z", "0.1", "--train-sizes", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n is required"));
    let out = lab(&["sweep", "--not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
    // I/O
    let out = lab(&["fit-rate", "--in", "/nonexistent/rows.csv", "--group", "param"]);
    assert_eq!(out.status.code(), Some(3));
    let out = lab(&[
        "mask-split",
        "--n-freq",
        "100",
        "--nu",
        "0.08",
        "--p",
        "0.25",
        "--mu",
        "0.33",
        "--out",
        "/nonexistent/m.json",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n": 10, "learning_rat": 1, "dd": 2}"#).unwrap();
    let out = lab(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rat") && err.contains("dd"), "{err}");
}

#[test]
fn seed_env_is_the_last_resort() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssrecon-lab"));
        cmd.args(["mask-split", "--n-freq", "100", "--nu", "0.08", "--p", "0.25", "--mu", "0.33"]).args(extra);
        match env {
            Some(v) => cmd.env("SSRECON_SEED", v),
            None => cmd.env_remove("SSRECON_SEED"),
        };
        cmd.output().unwrap().stdout
    };
    assert_ne!(run(Some("7"), &[]), run(None, &[]));
    assert_eq!(run(Some("7"), &[]), run(None, &["--seed", "7"]));
    assert_eq!(run(Some("7"), &["--seed", "0"]), run(None, &[]));
}

#[test]
fn grad_var_writes_samples_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gv.json");
    std::fs::write(
        &config,
        r#"{"n": 20, "d": 4, "sigma_z": 0.1, "sigma_e": [0.1, 0.2], "samples": 200, "bins": 10, "seed": 1}"#,
    )
    .unwrap();
    let out_path = dir.path().join("gv.csv");
    let out = lab(&["grad-var", "--config", config.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let samples = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(samples.lines().next().unwrap(), "loss_label,sample_index,normalized_variance");
    assert_eq!(samples.lines().count(), 1 + 3 * 200);
    for i in 0..3 {
        let hist = std::fs::read_to_string(dir.path().join(format!("gv-hist-{i}.csv"))).unwrap();
        assert_eq!(hist.lines().next().unwrap(), "bin_left,bin_right,count");
        let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 200);
    }
}

#[test]
fn verify_fast_passes() {
    let out = lab(&["verify", "--fast"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
