//! Library side of the `tipbrw` binary: configuration, task dispatch and
//! artifact writing.

pub mod config;
pub mod output;
pub mod tasks;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use config::{Format, RunConfig};
use output::{config_hash, write_json, RunManifest, CSV_SCHEMA_VERSION};

/// Exit code for a run whose invariant checks all passed.
pub const EXIT_OK: i32 = 0;
/// Exit code for a configuration or runtime error.
pub const EXIT_ERROR: i32 = 1;
/// Exit code for a completed run with at least one failed check.
pub const EXIT_CHECK_FAILED: i32 = 2;

/// Environment variable overriding the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "TIPBRW_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

macro_rules! run_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}

run_error_from!(
    tipbrw_core::BrwError,
    tipbrw_core::EstimatorError,
    tipbrw_core::SpineError,
    tipbrw_core::PointProcError
);

impl From<tipbrw_core::OffspringError> for CliError {
    fn from(e: tipbrw_core::OffspringError) -> Self {
        CliError::Config(format!("law: {e}"))
    }
}

/// Overrides supplied on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub directory: PathBuf,
    pub exit_code: i32,
}

/// Canonical text of every setting that influences results. The output
/// section is left out so that the same run written elsewhere keeps its id.
pub fn results_identity(cfg: &RunConfig) -> String {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    if let Some(map) = value.as_object_mut() {
        map.remove("output");
    }
    serde_json::to_string(&value).expect("value serializes")
}

/// Worker count: explicit value, then the environment override, then all cores.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize, CliError> {
    if let Some(w) = explicit {
        return if w >= 1 {
            Ok(w)
        } else {
            Err(CliError::Config("--workers must be at least 1".into()))
        };
    }
    if let Ok(text) = std::env::var(WORKERS_ENV) {
        return match text.trim().parse::<usize>() {
            Ok(w) if w >= 1 => Ok(w),
            _ => Err(CliError::Config(format!(
                "{WORKERS_ENV}={text} is not a positive integer"
            ))),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Applies command-line overrides to a parsed configuration.
pub fn apply_overrides(mut cfg: RunConfig, opts: &RunOptions) -> RunConfig {
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &opts.out {
        cfg.output.directory = dir.clone();
    }
    cfg
}

/// Executes a validated configuration and writes every artifact.
pub fn run(cfg: &RunConfig, workers: usize) -> Result<RunOutcome, CliError> {
    let started = chrono::Utc::now();
    let dir = cfg.output.directory.clone();
    fs::create_dir_all(&dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    log::info!("task {} with {workers} workers", cfg.task.name());
    let out = pool.install(|| tasks::run_task(cfg))?;

    let mut files = Vec::new();
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    files.push("config.toml".to_string());
    if cfg.output.formats.contains(&Format::Csv) {
        for t in &out.tables {
            t.write(&dir)?;
            files.push(format!("{}.csv", t.name));
        }
    }
    if cfg.output.formats.contains(&Format::Gnuplot) {
        if let Some(p) = &out.plot {
            let name = format!("{}.gp", cfg.task.name());
            fs::write(dir.join(&name), p.script())?;
            files.push(name);
        }
    }
    let passed = out.passed();
    let summary = json!({
        "task": cfg.task.name(),
        "seed": cfg.seed,
        "results": out.summary,
        "checks": out.checks,
        "passed": passed,
    });
    if cfg.output.formats.contains(&Format::Json) {
        write_json(&dir.join("summary.json"), &summary)?;
        files.push("summary.json".to_string());
    }
    let manifest = RunManifest {
        config_hash: config_hash(&results_identity(cfg)),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        csv_schema_version: CSV_SCHEMA_VERSION,
        task: cfg.task.name().to_string(),
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        replicas: out.replicas,
        workers,
        seed: cfg.seed,
        files,
        task_summary: out.summary.clone(),
        checks: out.checks.clone(),
        passed,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        manifest,
        directory: dir,
        exit_code: if passed { EXIT_OK } else { EXIT_CHECK_FAILED },
    })
}

/// Parses `path`, applies overrides and runs; returns the process exit code.
pub fn run_path(path: &Path, opts: &RunOptions) -> i32 {
    let result = config::parse_config(path).and_then(|cfg| {
        let cfg = apply_overrides(cfg, opts);
        let workers = resolve_workers(opts.workers)?;
        run(&cfg, workers)
    });
    match result {
        Ok(outcome) => {
            for (name, ok) in &outcome.manifest.checks {
                if !ok {
                    eprintln!("check failed: {name}");
                }
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
