use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tcsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcsde"))
        .args(args)
        .env_remove("TCSDE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Splits CSV text into `#` comment lines and data rows (header row first).
fn split_csv(text: &str) -> (Vec<&str>, Vec<Vec<&str>>) {
    let comments = text.lines().filter(|l| l.starts_with('#')).collect();
    let rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    (comments, rows)
}

fn comment_value<'a>(comments: &[&'a str], key: &str) -> Option<&'a str> {
    comments
        .iter()
        .find_map(|c| c.strip_prefix("# ")?.strip_prefix(key)?.strip_prefix('='))
}

#[test]
fn simulate_path_and_inverse() {
    let text = stdout(&tcsde(&["simulate", "--alpha", "0.7", "--seed", "3"]));
    let (comments, rows) = split_csv(&text);
    assert_eq!(rows[0], vec!["t", "D"]);
    assert_eq!(comment_value(&comments, "alpha"), Some("0.7"));
    assert_eq!(comment_value(&comments, "delta"), Some("0.0009765625"));
    assert_eq!(comment_value(&comments, "schema_version"), Some("1"));
    let d: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(d[0], 0.0);
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    assert!(*d.last().unwrap() > 1.0);
    assert!(d[d.len() - 2] <= 1.0);

    let text = stdout(&tcsde(&[
        "simulate",
        "--alpha",
        "0.7",
        "--seed",
        "3",
        "--inverse",
        "--grid-step",
        "0.125",
    ]));
    let (_, rows) = split_csv(&text);
    assert_eq!(rows[0], vec!["t", "E_tilde"]);
    assert_eq!(rows.len(), 1 + 9);
    assert_eq!(rows[9][0], "1");
    let e: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn simulate_rejects_bad_alpha() {
    let out = tcsde(&["simulate", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tcsde(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_writes_path_and_drivers() {
    let dir = tempfile::tempdir().unwrap();
    let drivers = dir.path().join("drivers.csv");
    let text = stdout(&tcsde(&[
        "solve",
        "--system",
        "expdecay",
        "--param",
        "lambda=2",
        "--alpha",
        "0.8",
        "--dt",
        "0.00390625",
        "--keep-path",
        "--dump-drivers",
        drivers.to_str().unwrap(),
    ]));
    let (comments, rows) = split_csv(&text);
    assert_eq!(rows[0], vec!["n", "t", "E", "X_1"]);
    assert_eq!(rows.len(), 1 + 257);
    assert_eq!(comment_value(&comments, "params"), Some("lambda=2"));
    let e_t: f64 = comment_value(&comments, "E_T").unwrap().parse().unwrap();
    let oracle: f64 = comment_value(&comments, "oracle_X_T")
        .unwrap()
        .parse()
        .unwrap();
    assert!((oracle - (-2.0 * e_t).exp()).abs() < 1e-15);
    let last = rows.last().unwrap();
    assert_eq!(last[0], "256");
    assert_eq!(last[2].parse::<f64>().unwrap(), e_t);
    let x: f64 = last[3].parse().unwrap();
    assert!((x - oracle).abs() < 0.02, "{x} vs {oracle}");

    let text = fs::read_to_string(&drivers).unwrap();
    let (_, rows) = split_csv(&text);
    assert_eq!(rows[0], vec!["n", "t", "E", "dE", "dB_1"]);
    assert_eq!(rows.len(), 1 + 256);
    let total: f64 = rows[1..].iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((total - e_t).abs() < 1e-12);
}

#[test]
fn solve_terminal_only_matches_full_path() {
    let args = [
        "solve",
        "--alpha",
        "0.6",
        "--dt",
        "0.0078125",
        "--seed",
        "9",
    ];
    let short_text = stdout(&tcsde(&args));
    let mut full_args = args.to_vec();
    full_args.push("--keep-path");
    let full_text = stdout(&tcsde(&full_args));
    let (_, short) = split_csv(&short_text);
    let (_, full) = split_csv(&full_text);
    assert_eq!(short.len(), 2);
    assert_eq!(short[0], vec!["n", "t", "E", "X_1", "X_2"]);
    assert_eq!(&short[1], full.last().unwrap());
}

#[test]
fn solve_configuration_errors() {
    for args in [
        vec!["solve", "--system", "lorenz", "--alpha", "0.7"],
        vec![
            "solve", "--system", "expdecay", "--param", "mu=1", "--alpha", "0.7",
        ],
        vec!["solve", "--param", "oops", "--alpha", "0.7"],
        vec!["solve", "--alpha", "0.7", "--dt", "0.3"],
    ] {
        let out = tcsde(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

fn converge_args<'a>(out_dir: &'a str, threads: &'a str) -> Vec<&'a str> {
    vec![
        "--threads",
        threads,
        "converge",
        "--alpha",
        "0.6",
        "--alpha",
        "0.8",
        "--dt-ref",
        "0.00390625",
        "--M",
        "40",
        "--seed",
        "5",
        "--out-dir",
        out_dir,
    ]
}

#[test]
fn converge_writes_all_outputs_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    stdout(&tcsde(&converge_args(a.path().to_str().unwrap(), "1")));
    stdout(&tcsde(&converge_args(b.path().to_str().unwrap(), "3")));
    for name in ["report.json", "errors.csv", "rates.csv", "loglog.dat"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs across thread counts");
    }

    let rates = fs::read_to_string(a.path().join("rates.csv")).unwrap();
    let (comments, rows) = split_csv(&rates);
    assert_eq!(rows[0], vec!["alpha", "theoretical", "fitted", "r2"]);
    assert_eq!(rows[1][0], "0.6");
    assert_eq!(rows[1][1], "0.4");
    assert_eq!(rows[2][1], "0.45");
    assert_eq!(comment_value(&comments, "samples"), Some("40"));
    assert_eq!(comment_value(&comments, "ladder"), Some("8,16,32,64"));
    assert_eq!(comment_value(&comments, "profile"), Some("desk"));

    let errors = fs::read_to_string(a.path().join("errors.csv")).unwrap();
    let (_, rows) = split_csv(&errors);
    assert_eq!(rows[0], vec!["alpha", "dt", "error", "stderr"]);
    assert_eq!(rows.len(), 1 + 8);

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert_eq!(report["reports"][1]["config"]["alpha"], 0.8);

    let dat = fs::read_to_string(a.path().join("loglog.dat")).unwrap();
    let data: Vec<&str> = dat
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .collect();
    assert_eq!(data.len(), 8);
    assert!(data[0].starts_with("-5 "));
}

#[test]
fn converge_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tcsde"))
        .args([
            "converge",
            "--alpha",
            "0.7",
            "--dt-ref",
            "0.00390625",
            "--M",
            "10",
        ])
        .env("TCSDE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    stdout(&out);
    assert!(dir.path().join("rates.csv").exists());
}

#[test]
fn converge_out_of_theory_needs_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let base = [
        "converge",
        "--alpha",
        "0.4",
        "--dt-ref",
        "0.00390625",
        "--M",
        "10",
        "--out-dir",
        d,
    ];
    assert_eq!(tcsde(&base).status.code(), Some(2));
    let mut args = base.to_vec();
    args.push("--allow-out-of-theory");
    let out = tcsde(&args);
    stdout(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of theory"));
    let rates = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    let (comments, _) = split_csv(&rates);
    assert_eq!(
        comment_value(&comments, "out_of_theory_alphas"),
        Some("0.4")
    );
}

#[test]
fn converge_self_coupling_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = tcsde(&[
        "converge",
        "--alpha",
        "0.7",
        "--dt-ref",
        "0.00390625",
        "--M",
        "4",
        "--ladder",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn verify_moments_table() {
    let text = stdout(&tcsde(&[
        "verify-moments",
        "--alpha",
        "0.7",
        "--paths",
        "2000",
        "--delta",
        "0.00390625",
        "--grid",
        "0.5:1:1",
        "--grid",
        "0.5:1:2",
    ]));
    let (comments, rows) = split_csv(&text);
    assert_eq!(
        rows[0],
        vec!["alpha", "a", "b", "n", "estimate", "stderr", "lower", "upper", "pass"]
    );
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][3], "2");
    assert!(rows[1..].iter().all(|r| r[8] == "true"));
    assert_eq!(comment_value(&comments, "grid"), Some("0.5:1:1,0.5:1:2"));
    assert_eq!(
        tcsde(&["verify-moments", "--alpha", "0.7", "--grid", "1:0.5"])
            .status
            .code(),
        Some(2)
    );
}

fn manifest_hashes(dir: &Path) -> Vec<(String, String)> {
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_owned(),
                f["sha256"].as_str().unwrap().to_owned(),
            )
        })
        .collect()
}

#[test]
fn repro_manifest_is_complete_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = tcsde(&[
            "repro",
            "--dt-ref",
            "0.00390625",
            "--M",
            "12",
            "--seed",
            "2",
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
        stdout(&out);
        let progress = String::from_utf8_lossy(&out.stderr);
        assert_eq!(progress.matches("fitted=").count(), 9, "{progress}");
    }
    let ha = manifest_hashes(a.path());
    assert_eq!(ha.len(), 8);
    assert_eq!(ha, manifest_hashes(b.path()));
    for (path, _) in &ha {
        assert!(a.path().join(path).exists(), "{path}");
    }
    assert!(!a.path().join(".staging").exists());

    let rates = fs::read_to_string(a.path().join("table/rates.csv")).unwrap();
    let (_, rows) = split_csv(&rates);
    assert_eq!(rows.len(), 1 + 7);
    assert_eq!(rows[4][0], "0.75");
    assert_eq!(rows[4][1], "0.4375");
    let rates = fs::read_to_string(a.path().join("drift/rates.csv")).unwrap();
    let (_, rows) = split_csv(&rates);
    assert_eq!(rows.len(), 1 + 2);
    assert!(rows[1..].iter().all(|r| r[1] == "0.5"));

    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 2);
    assert_eq!(m["config"]["samples"], 12);
    assert!(m["duration_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn repro_failure_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = tcsde(&[
        "repro",
        "--dt-ref",
        "0.3",
        "--M",
        "4",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}
