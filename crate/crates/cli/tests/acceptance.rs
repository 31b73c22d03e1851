//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Most criteria drive the same task code as the binary through
//! `tipbrw_cli::run` on an inline configuration; the rest call the core
//! library directly and carry their own independent reference values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use tipbrw_cli::config::parse_config_str;
use tipbrw_cli::{resolve_workers, run, RunOutcome};
use tipbrw_core::estimators::ftheta::{ExponentialRho, QuadratureConfig};
use tipbrw_core::numerics::RunningStats;
use tipbrw_core::spine::spine_law_check;
use tipbrw_core::{f_theta, simulate_many, OffspringLaw, SimConfig, SpineStepLaw};

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn run_config(text: &str, dir: &Path, workers: usize) -> Result<RunOutcome, String> {
    let mut cfg = parse_config_str(text).map_err(|e| e.to_string())?;
    cfg.output.directory = dir.to_path_buf();
    run(&cfg, workers).map_err(|e| e.to_string())
}

/// Runs a task and reports its checks, or the error that stopped it.
fn task_checks(text: &str, workers: usize) -> (bool, String) {
    let dir = tempfile::tempdir().expect("temp dir");
    match run_config(text, dir.path(), workers) {
        Ok(out) => (out.manifest.passed, describe(&out.manifest.checks)),
        Err(e) => (false, format!("error: {e}")),
    }
}

fn describe(checks: &BTreeMap<String, bool>) -> String {
    checks
        .iter()
        .map(|(k, v)| format!("{k}={}", if *v { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join(" ")
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir") {
        let path = entry.expect("dir entry").path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, fs::read(&path).expect("csv readable"));
        }
    }
    out
}

fn boundary_exactness() -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, law) in [
        ("gaussian_binary", OffspringLaw::gaussian_binary()),
        ("lattice_binary", OffspringLaw::lattice_binary()),
    ] {
        let phi = law.analytic_log_mgf(1.0).unwrap();
        let h = 1e-5;
        let dphi = (law.analytic_log_mgf(1.0 + h).unwrap() - law.analytic_log_mgf(1.0 - h).unwrap()) / (2.0 * h);
        ok &= phi.abs() < 1e-10 && dphi.abs() < 1e-6;
        notes.push(format!("{name}: phi(1)={phi:.1e} phi'(1)={dphi:.1e}"));
    }
    let raw = OffspringLaw::binary_normal(0.0, 1.0).unwrap();
    let map = raw.normalize_to_boundary().unwrap().affine().expect("affine map");
    let ln2 = std::f64::consts::LN_2;
    let (ea, eb) = ((map.scale - (2.0 * ln2).sqrt()).abs(), (map.shift - 2.0 * ln2).abs());
    ok &= ea < 1e-8 && eb < 1e-8;
    notes.push(format!("normalize: |da|={ea:.1e} |db|={eb:.1e}"));
    (ok, notes.join("; "))
}

fn martingale_suite() -> (bool, String) {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (i, law) in [OffspringLaw::gaussian_binary(), OffspringLaw::lattice_binary()]
        .iter()
        .enumerate()
    {
        let sim = SimConfig {
            generations: 10,
            seed: 100 + i as u64,
            record_history: true,
            ..SimConfig::default()
        };
        let stats = match simulate_many(law, &sim, 100_000, None) {
            Ok(s) => s,
            Err(e) => return (false, format!("error: {e}")),
        };
        for g in 0..10 {
            let (mut w, mut z) = (RunningStats::new(), RunningStats::new());
            for s in &stats {
                w.push(s.history[g].additive);
                z.push(s.history[g].derivative);
            }
            let zw = (w.mean() - 1.0) / w.std_error();
            let zz = z.mean() / z.std_error();
            worst = worst.max(zw.abs()).max(zz.abs());
            ok &= zw.abs() <= 4.0 && zz.abs() <= 4.0;
        }
    }
    (ok, format!("max |z| over n=1..10, both laws: {worst:.2}"))
}

fn oracle_equivalence(workers: usize) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for n in 1..=3 {
        let (p, d) = task_checks(
            &format!(
                "seed = {}\n[law]\nkind = \"lattice_binary\"\n[sim]\nn = {n}\nbetas = [1.5, 2.0, 3.0]\nreplicas = 100000\n[task]\nkind = \"oracle\"\n",
                30 + n
            ),
            workers,
        );
        ok &= p;
        notes.push(format!("n={n}: {d}"));
    }
    (ok, notes.join("; "))
}

fn spine_law() -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, law) in [
        ("gaussian_binary", OffspringLaw::gaussian_binary()),
        ("lattice_binary", OffspringLaw::lattice_binary()),
    ] {
        let step = SpineStepLaw::new(&law).unwrap();
        let r = match spine_law_check(&step, 10_000, 41) {
            Ok(r) => r,
            Err(e) => return (false, format!("error: {e}")),
        };
        let inc_p = r
            .increment_ks
            .map(|k| k.p_value)
            .or(r.increment_chi2.map(|c| c.p_value))
            .unwrap_or(f64::NAN);
        ok &= r.choice_p > 0.01 && inc_p > 0.01;
        notes.push(format!("{name}: choice p={:.3} increment p={inc_p:.3}", r.choice_p));
    }
    (ok, notes.join("; "))
}

/// Adaptive Simpson on `[a, b]`, the textbook recursion.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn quadrature(workers: usize) -> (bool, String) {
    let (task_ok, task_detail) = task_checks(
        "seed = 5\n[law]\nkind = \"gaussian_binary\"\n[sim]\nbetas = [1.5, 2.0, 3.0]\n[task]\nkind = \"ftheta\"\ntheta = [0.5, 0.8, 1.3]\nrho = \"softmin\"\ntolerance = 1e-6\nshift = 0.7\n",
        workers,
    );
    // One coordinate: ρ(δ) = c e^δ, F(θ) = c ∫ e^{-u} (θ/u)^{1/β} du. With
    // u = v^p, p = β/(β-1), the integrand becomes p c θ^{1/β} e^{-v^p}.
    let mut worst: f64 = 0.0;
    for (theta, beta, c) in [(0.5, 2.0, 1.0), (2.0, 1.5, 0.7), (1.0, 3.0, 1.3), (0.05, 2.5, 1.0)] {
        let p: f64 = beta / (beta - 1.0);
        let upper = 40f64.powf(1.0 / p);
        let reference =
            p * c * f64::powf(theta, 1.0 / beta) * adaptive_simpson(&|v: f64| (-v.powf(p)).exp(), 0.0, upper, 1e-13);
        let got = f_theta(
            &ExponentialRho { scale: c },
            &[theta],
            &[beta],
            &QuadratureConfig::default(),
        )
        .unwrap()
        .f_hat;
        worst = worst.max(((got - reference) / reference).abs());
    }
    let ok = task_ok && worst <= 1e-6;
    (
        ok,
        format!("{task_detail}; l=1 vs adaptive Simpson max rel err {worst:.1e}"),
    )
}

fn determinism() -> (bool, String) {
    let configs = [
        "seed = 1\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 10\nbetas = [1.5, 2.0]\nreplicas = 2000\ncluster_window = 3.0\n[task]\nkind = \"simulate\"\n",
        "seed = 3\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 10\nreplicas = 5000\n[task]\nkind = \"tail\"\n",
        "seed = 7\n[law]\nkind = \"lattice_binary\"\n[sim]\nn = 3\nbetas = [1.5, 2.0, 3.0]\nreplicas = 20000\n[task]\nkind = \"oracle\"\n",
        "seed = 8\n[law]\nkind = \"lattice_binary\"\n[sim]\nreplicas = 5000\n[task]\nkind = \"many-to-one\"\nn_list = [4]\nspine_replicas = 50000\n",
        "seed = 2\n[law]\nkind = \"gaussian_binary\"\n[sim]\nreplicas = 5000\n[task]\nkind = \"dppp\"\nwindow_hi = 3.0\n",
        "seed = 4\n[law]\nkind = \"gaussian_binary\"\n[sim]\nbetas = [1.5, 2.0, 3.0]\nreplicas = 2000\n[task]\nkind = \"superpose-test\"\n",
    ];
    let mut ok = true;
    let mut files = 0;
    let mut notes = Vec::new();
    for text in configs {
        let runs: Vec<_> = [1usize, 8, 8]
            .iter()
            .map(|&w| {
                let dir = tempfile::tempdir().expect("temp dir");
                let result = run_config(text, dir.path(), w).map(|_| csv_bytes(dir.path()));
                (dir, result)
            })
            .collect();
        let task = text
            .split("kind = \"")
            .last()
            .unwrap_or("")
            .split('"')
            .next()
            .unwrap_or("");
        match (&runs[0].1, &runs[1].1, &runs[2].1) {
            (Ok(a), Ok(b), Ok(c)) => {
                let same = !a.is_empty() && a == b && b == c;
                files += a.len();
                if !same {
                    notes.push(format!("{task}: CSV differs"));
                }
                ok &= same;
            }
            _ => {
                ok = false;
                notes.push(format!("{task}: run failed"));
            }
        }
    }
    let detail = if notes.is_empty() {
        format!("{files} CSV files byte-identical at 1, 8 and 8 workers")
    } else {
        notes.join("; ")
    };
    (ok, detail)
}

fn main() {
    let workers = resolve_workers(None).expect("worker count");
    let started = Instant::now();
    let mut lines: Vec<Line> = Vec::new();
    let mut record = |id: u32, name: &'static str, f: &dyn Fn() -> (bool, String)| {
        let t = Instant::now();
        let (passed, detail) = f();
        let line = Line {
            id,
            name,
            passed,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        };
        println!(
            "criterion {:>2} {:<28} {} ({:.1}s) {}",
            line.id,
            line.name,
            if line.passed { "PASS" } else { "FAIL" },
            line.seconds,
            line.detail
        );
        lines.push(line);
    };

    record(1, "boundary exactness", &boundary_exactness);
    record(2, "martingale suite", &martingale_suite);
    record(3, "enumeration oracle", &|| oracle_equivalence(workers));
    record(4, "many-to-one", &|| {
        task_checks(
            "seed = 8\n[law]\nkind = \"lattice_binary\"\n[sim]\nreplicas = 100000\n[task]\nkind = \"many-to-one\"\nn_list = [4, 6, 8]\nspine_replicas = 1000000\n",
            workers,
        )
    });
    record(5, "spine law", &spine_law);
    record(6, "renewal", &|| {
        task_checks(
            "seed = 6\n[law]\nkind = \"gaussian_binary\"\n[sim]\nreplicas = 100000\n[task]\nkind = \"renewal\"\nc0_ranges = [[10.0, 20.0], [30.0, 40.0]]\ntolerance = 0.10\n",
            workers,
        )
    });
    record(7, "tail shape n=512", &|| {
        task_checks(
            "seed = 11\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 512\nbetas = [2.0]\nreplicas = 1000000\nceiling = 25.0\n[task]\nkind = \"rho\"\nx_grid = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5, 8.0]\nshifts = [0.0, 1.0]\ntolerance = 0.15\n",
            workers,
        )
    });
    record(8, "killed tail", &|| {
        task_checks(
            "seed = 12\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 14\nbetas = [2.0]\nreplicas = 20000\nfree_statistics = false\n[task]\nkind = \"chi\"\nx_grid = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0]\nmin_deltas = [0.0, 0.5, 1.0, 1.5]\nshift = 0.5\ntolerance = 0.15\n",
            workers,
        )
    });
    record(9, "domination", &|| {
        task_checks(
            "seed = 13\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 14\nbetas = [2.0]\nreplicas = 20000\n[task]\nkind = \"domination\"\nx_grid = [1.0, 1.5, 2.0, 2.5]\nj_grid = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]\nmax_violation = 1.5\n",
            workers,
        )
    });
    record(10, "F quadrature", &|| quadrature(workers));
    record(11, "Laplace convergence", &|| {
        task_checks(
            "seed = 21\n[law]\nkind = \"gaussian_binary\"\n[sim]\nbetas = [2.0]\nreplicas = 100000\nceiling = 25.0\n[task]\nkind = \"laplace-test\"\nn_list = [128, 256, 512]\ntheta = [0.5]\nalpha = 1.0\nx_grid = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0]\nsystematic_allowance = 0.02\n",
            workers,
        )
    });
    record(12, "DPPP structure", &|| {
        let parts = [
            "seed = 2\n[law]\nkind = \"gaussian_binary\"\n[sim]\nreplicas = 10000\n[task]\nkind = \"dppp\"\nlambda = 1.0\nwindow_hi = 3.0\ndecoration = \"dirac\"\nmode = \"limit\"\n",
            "seed = 2\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 10\nreplicas = 2000\ncluster_window = 4.0\n[task]\nkind = \"corollary\"\nwindow_hi = 3.0\ndecoration = \"empirical\"\n",
            "seed = 4\n[law]\nkind = \"gaussian_binary\"\n[sim]\nbetas = [1.5, 2.0, 3.0]\nreplicas = 10000\n[task]\nkind = \"superpose-test\"\nlambda = 1.0\nwindow_hi = 8.0\np_threshold = 0.01\n",
        ];
        let mut ok = true;
        let mut notes = Vec::new();
        for text in parts {
            let (p, d) = task_checks(text, workers);
            ok &= p;
            notes.push(d);
        }
        (ok, notes.join("; "))
    });
    record(13, "determinism", &determinism);

    let failed: Vec<u32> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0}s with {workers} workers",
        lines.len() - failed.len(),
        lines.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
