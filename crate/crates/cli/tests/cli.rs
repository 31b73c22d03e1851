use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const ORACLE: &str = "seed = 7
[law]
kind = \"lattice_binary\"

[sim]
n = 3
betas = [1.5, 2.0, 3.0]
replicas = 20000

[task]
kind = \"oracle\"
";

fn tipbrw(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tipbrw"));
    cmd.args(args).env_remove("TIPBRW_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_to(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    tipbrw(&args, &[])
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// `P(M_n ≤ m)` for the two-child ±h walk by the recursion
/// `P(min > m | start x) = (E P_{n-1}(min > m | x + X))²`.
fn lattice_min_cdf(n: usize, m: f64) -> f64 {
    let s = 2.0 + 3f64.sqrt();
    let (h, r) = (s.ln(), s / 4.0);
    fn above(k: usize, x: f64, m: f64, h: f64, r: f64) -> f64 {
        if k == 0 {
            return if x > m + 1e-9 { 1.0 } else { 0.0 };
        }
        let one = r * above(k - 1, x + h, m, h, r) + (1.0 - r) * above(k - 1, x - h, m, h, r);
        one * one
    }
    1.0 - above(n, 0.0, m, h, r)
}

#[test]
fn oracle_run_reports_exact_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "oracle.toml", ORACLE);
    let out = tmp.path().join("out");
    let res = run_to(&cfg, &out, &["--workers", "2"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let summary = json(&out.join("summary.json"));
    let exact = &summary["results"]["exact_expectations"];
    let s = 2.0 + 3f64.sqrt();
    let (h, r) = (s.ln(), s / 4.0);
    for beta in [1.5f64, 2.0, 3.0] {
        // E W_{n,β} = (2 E e^{-βX})^n
        let expected = (2.0 * (r * (-beta * h).exp() + (1.0 - r) * (beta * h).exp())).powi(3);
        let got = exact[format!("W_beta={beta}")].as_f64().unwrap();
        assert!(
            (got - expected).abs() <= 1e-12 * expected,
            "beta {beta}: {got} vs {expected}"
        );
    }
    assert!(exact["Z"].as_f64().unwrap().abs() < 1e-12);
    assert!((exact["W_additive"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    for pair in summary["results"]["exact_min_cdf"].as_array().unwrap() {
        let (m, p) = (pair[0].as_f64().unwrap(), pair[1].as_f64().unwrap());
        assert!((p - lattice_min_cdf(3, m)).abs() < 1e-12, "m = {m}");
    }
    assert_eq!(summary["checks"]["oracle_self_check"], Value::Bool(true));

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["workers"], 2);
    assert_eq!(manifest["csv_schema_version"], 1);
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    for f in ["config.toml", "oracle.csv", "oracle_min_cdf.csv", "summary.json"] {
        assert!(files.contains(&f), "{f} missing from {files:?}");
        assert!(out.join(f).exists());
    }
}

#[test]
fn tail_with_ten_replicas_flags_insufficient_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "tail.toml",
        "seed = 3\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 8\nreplicas = 10\n[task]\nkind = \"tail\"\n",
    );
    let out = tmp.path().join("out");
    let res = run_to(&cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sufficient_data"));
    let mut reader = csv::Reader::from_path(out.join("tail.csv")).unwrap();
    let col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "insufficient")
        .unwrap();
    let flags: Vec<String> = reader.records().map(|r| r.unwrap()[col].to_string()).collect();
    assert!(!flags.is_empty() && flags.iter().all(|f| f == "1"));
    assert_eq!(json(&out.join("manifest.json"))["passed"], Value::Bool(false));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.toml",
        "seed = 11\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 9\nbetas = [1.5, 2.5]\nreplicas = 3000\ncluster_window = 2.0\n[task]\nkind = \"simulate\"\n",
    );
    let mut codes = Vec::new();
    let dirs: Vec<PathBuf> = ["1", "4", "4"]
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let out = tmp.path().join(format!("run{i}"));
            codes.push(run_to(&cfg, &out, &["--workers", w]).status.code());
            out
        })
        .collect();
    // the martingale checks may fail on a small pool; the outcome must not vary
    assert!(codes.iter().all(|c| *c == codes[0] && *c != Some(1)), "{codes:?}");
    for f in ["simulate.csv", "clusters.csv", "summary.json"] {
        let first = fs::read(dirs[0].join(f)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(first, fs::read(d.join(f)).unwrap(), "{f} differs");
        }
    }
    let (a, b) = (
        json(&dirs[0].join("manifest.json")),
        json(&dirs[1].join("manifest.json")),
    );
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_ne!(a["workers"], b["workers"]);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "oracle.toml", ORACLE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_to(&cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run_to(&cfg, &b, &["--seed", "8"]).status.code(), Some(0));
    assert_ne!(
        fs::read(a.join("oracle.csv")).unwrap(),
        fs::read(b.join("oracle.csv")).unwrap()
    );
    assert_eq!(json(&b.join("manifest.json"))["seed"], 8);
    assert_ne!(
        json(&a.join("manifest.json"))["config_hash"],
        json(&b.join("manifest.json"))["config_hash"]
    );
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), "bad.toml", &ORACLE.replace("n = 3", "n = 3\nreplicaz = 4"));
    let res = run_to(&bad_key, &tmp.path().join("o1"), &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("replicaz"));

    let bad_range = write_config(tmp.path(), "range.toml", &ORACLE.replace("n = 3", "n = 0"));
    let res = run_to(&bad_range, &tmp.path().join("o2"), &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("[1, 100000]"));

    let res = run_to(&tmp.path().join("missing.toml"), &tmp.path().join("o3"), &[]);
    assert_eq!(res.status.code(), Some(1));

    let good = write_config(tmp.path(), "good.toml", ORACLE);
    let res = tipbrw(
        &[good.to_str().unwrap(), "--out", tmp.path().join("o4").to_str().unwrap()],
        &[("TIPBRW_WORKERS", "zero")],
    );
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("TIPBRW_WORKERS"));
}

#[test]
fn workers_environment_variable_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "oracle.toml", ORACLE);
    let out = tmp.path().join("out");
    let res = tipbrw(
        &[cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[("TIPBRW_WORKERS", "3")],
    );
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(json(&out.join("manifest.json"))["workers"], 3);
}

#[test]
fn shipped_example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            tipbrw_cli::config::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 15);
}
