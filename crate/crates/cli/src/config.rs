//! Run configuration: a single TOML file with `seed`, `[law]`, `[sim]`,
//! `[task]` and `[output]`. Unknown keys are rejected and every default is
//! resolved before the run starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tipbrw_core::brwsim::{SimConfig, DEFAULT_POPULATION_CAP};
use tipbrw_core::offspring::{AffineMap, ChildCount, Displacement, OffspringLaw, Reproduction};

use crate::CliError;

pub const DEFAULT_REPLICAS: usize = 10_000;
const MAX_GENERATIONS: usize = 100_000;
const MAX_REPLICAS: usize = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub law: LawSection,
    #[serde(default)]
    pub sim: SimSection,
    pub task: TaskSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    GaussianBinary,
    LatticeBinary,
    BinaryNormal,
    UserConfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSection {
    pub kind: LawName,
    /// Apply the affine map that puts the law in the boundary case.
    #[serde(default)]
    pub normalize: bool,
    /// lattice_binary step.
    pub h: Option<f64>,
    /// lattice_binary probability of a `+h` step.
    pub r: Option<f64>,
    /// binary_normal per-child mean.
    pub mean: Option<f64>,
    /// binary_normal per-child variance.
    pub variance: Option<f64>,
    /// user_configured: fixed number of children...
    pub children: Option<usize>,
    /// ...or probabilities of 0, 1, 2, ... children.
    pub child_probs: Option<Vec<f64>>,
    /// user_configured Normal displacement.
    pub displacement_mean: Option<f64>,
    pub displacement_sd: Option<f64>,
    /// user_configured finitely supported displacement.
    pub values: Option<Vec<f64>>,
    pub probs: Option<Vec<f64>>,
    /// Optional affine map `V ↦ scale·V + shift` applied after construction.
    pub affine_scale: Option<f64>,
    pub affine_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n: usize,
    pub betas: Vec<f64>,
    pub replicas: usize,
    pub kill_at_zero: bool,
    pub free_statistics: bool,
    /// Offset `C` of the pruning ceiling `(3/2) log n + C`; absent means no pruning.
    pub ceiling: Option<f64>,
    pub population_cap: usize,
    pub cluster_window: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n: 10,
            betas: vec![2.0],
            replicas: DEFAULT_REPLICAS,
            kill_at_zero: false,
            free_statistics: true,
            ceiling: None,
            population_cap: DEFAULT_POPULATION_CAP,
            cluster_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Gnuplot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("tipbrw-out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSource {
    /// `ρ(δ) = c / Σ e^{-δ_i}`.
    Softmin,
    /// Plateau estimates from simulated tail curves.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecorationName {
    Dirac,
    /// Clusters seen from the tip of simulated trees (`sim.n`, `sim.cluster_window`).
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpppModeName {
    Limit,
    SeenFromTip,
}

fn default_x_grid() -> Vec<f64> {
    (0..=12).map(|i| 0.25 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSection {
    Simulate {},
    Tail {
        #[serde(default)]
        deltas: Option<Vec<f64>>,
        #[serde(default = "default_x_grid")]
        x_grid: Vec<f64>,
        #[serde(default)]
        killed: bool,
        #[serde(default)]
        min_event_delta: Option<f64>,
    },
    Rho {
        #[serde(default)]
        deltas: Option<Vec<f64>>,
        #[serde(default = "default_x_grid")]
        x_grid: Vec<f64>,
        /// Diagonal shifts `s` for the translation check `ρ(δ+s) = e^s ρ(δ)`.
        #[serde(default = "default_shifts")]
        shifts: Vec<f64>,
        #[serde(default = "default_ratio_tolerance")]
        tolerance: f64,
    },
    Chi {
        #[serde(default)]
        deltas: Option<Vec<f64>>,
        #[serde(default = "default_x_grid")]
        x_grid: Vec<f64>,
        /// Grid of `Δ` values for the monotonicity check.
        #[serde(default = "default_min_deltas")]
        min_deltas: Vec<f64>,
        /// Shift `s` for `χ(δ+s, Δ+s) = e^s χ(δ, Δ)`.
        #[serde(default = "default_shift")]
        shift: f64,
        #[serde(default = "default_ratio_tolerance")]
        tolerance: f64,
    },
    Ftheta {
        theta: Vec<f64>,
        #[serde(default = "default_rho_source")]
        rho: RhoSource,
        #[serde(default = "default_one")]
        rho_scale: f64,
        #[serde(default = "default_x_grid")]
        x_grid: Vec<f64>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        /// Shift `s` for the identity `F(e^{-β s}θ) = e^{-s} F(θ)`.
        #[serde(default = "default_shift")]
        shift: f64,
    },
    LaplaceTest {
        n_list: Vec<usize>,
        theta: Vec<f64>,
        #[serde(default = "default_one")]
        alpha: f64,
        /// Use this value of `F̂` instead of estimating ρ.
        #[serde(default)]
        f_hat: Option<f64>,
        #[serde(default = "default_x_grid")]
        x_grid: Vec<f64>,
        #[serde(default = "default_systematic")]
        systematic_allowance: f64,
    },
    Dppp {
        #[serde(default = "default_one")]
        lambda: f64,
        #[serde(default = "default_window")]
        window_hi: f64,
        #[serde(default = "default_decoration")]
        decoration: DecorationName,
        #[serde(default = "default_mode")]
        mode: DpppModeName,
    },
    Corollary {
        #[serde(default = "default_window")]
        window_hi: f64,
        #[serde(default = "default_decoration")]
        decoration: DecorationName,
    },
    SuperposeTest {
        #[serde(default = "default_one")]
        lambda: f64,
        #[serde(default = "default_window")]
        window_hi: f64,
        #[serde(default = "default_ln2")]
        a: f64,
        #[serde(default = "default_ln2")]
        b: f64,
        #[serde(default)]
        margin: Option<f64>,
        #[serde(default = "default_p_threshold")]
        p_threshold: f64,
    },
    Renewal {
        #[serde(default = "default_renewal_grid")]
        x_grid: Vec<f64>,
        /// Ranges over which `c_0` slopes are fitted and compared.
        #[serde(default = "default_c0_ranges")]
        c0_ranges: Vec<[f64; 2]>,
        #[serde(default = "default_c0_tolerance")]
        tolerance: f64,
    },
    ManyToOne {
        n_list: Vec<usize>,
        #[serde(default = "default_spine_replicas")]
        spine_replicas: usize,
    },
    Ballot {
        n_grid: Vec<usize>,
    },
    Oracle {
        /// Also compare with `sim.replicas` simulated trees.
        #[serde(default = "default_true")]
        compare: bool,
    },
    Independence {
        n_list: Vec<usize>,
        #[serde(default = "default_level")]
        level: f64,
    },
    Domination {
        #[serde(default = "default_domination_x")]
        x_grid: Vec<f64>,
        #[serde(default = "default_j_grid")]
        j_grid: Vec<f64>,
        #[serde(default = "default_violation")]
        max_violation: f64,
    },
}

fn default_shifts() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5, 1.0]
}
fn default_ratio_tolerance() -> f64 {
    0.15
}
fn default_min_deltas() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5]
}
fn default_shift() -> f64 {
    1.0
}
fn default_rho_source() -> RhoSource {
    RhoSource::Softmin
}
fn default_one() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_systematic() -> f64 {
    0.02
}
fn default_window() -> f64 {
    5.0
}
fn default_decoration() -> DecorationName {
    DecorationName::Dirac
}
fn default_mode() -> DpppModeName {
    DpppModeName::Limit
}
fn default_ln2() -> f64 {
    std::f64::consts::LN_2
}
fn default_p_threshold() -> f64 {
    0.01
}
fn default_renewal_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64).collect()
}
fn default_c0_ranges() -> Vec<[f64; 2]> {
    vec![[10.0, 20.0], [30.0, 40.0]]
}
fn default_c0_tolerance() -> f64 {
    0.10
}
fn default_spine_replicas() -> usize {
    1_000_000
}
fn default_true() -> bool {
    true
}
fn default_level() -> f64 {
    4.0
}
fn default_domination_x() -> Vec<f64> {
    vec![1.0, 1.5, 2.0, 2.5]
}
fn default_j_grid() -> Vec<f64> {
    (0..=6).map(|j| j as f64).collect()
}
fn default_violation() -> f64 {
    1.5
}

impl TaskSection {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSection::Simulate {} => "simulate",
            TaskSection::Tail { .. } => "tail",
            TaskSection::Rho { .. } => "rho",
            TaskSection::Chi { .. } => "chi",
            TaskSection::Ftheta { .. } => "ftheta",
            TaskSection::LaplaceTest { .. } => "laplace-test",
            TaskSection::Dppp { .. } => "dppp",
            TaskSection::Corollary { .. } => "corollary",
            TaskSection::SuperposeTest { .. } => "superpose-test",
            TaskSection::Renewal { .. } => "renewal",
            TaskSection::ManyToOne { .. } => "many-to-one",
            TaskSection::Ballot { .. } => "ballot",
            TaskSection::Oracle { .. } => "oracle",
            TaskSection::Independence { .. } => "independence",
            TaskSection::Domination { .. } => "domination",
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_range<T: PartialOrd + std::fmt::Display + Copy>(key: &str, v: T, lo: T, hi: T) -> Result<(), CliError> {
    if v < lo || v > hi {
        return Err(bad(format!("{key} = {v} is out of range [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_finite(key: &str, values: &[f64]) -> Result<(), CliError> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(bad(format!("{key} contains a non-finite value {v}"))),
        None => Ok(()),
    }
}

fn check_betas(key: &str, betas: &[f64]) -> Result<(), CliError> {
    if betas.is_empty() {
        return Err(bad(format!("{key} must not be empty")));
    }
    check_finite(key, betas)?;
    if let Some(b) = betas.iter().find(|b| **b <= 1.0) {
        return Err(bad(format!(
            "{key} contains {b}; every beta must exceed 1 (range (1, inf))"
        )));
    }
    Ok(())
}

fn check_grid(key: &str, grid: &[f64], lo: f64) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(bad(format!("{key} must not be empty")));
    }
    check_finite(key, grid)?;
    if let Some(x) = grid.iter().find(|x| **x < lo) {
        return Err(bad(format!("{key} contains {x}, out of range [{lo}, inf)")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad(format!("{key} must be strictly increasing")));
    }
    Ok(())
}

fn check_counts(key: &str, ns: &[usize]) -> Result<(), CliError> {
    if ns.is_empty() {
        return Err(bad(format!("{key} must not be empty")));
    }
    for &n in ns {
        check_range(key, n, 1, MAX_GENERATIONS)?;
    }
    Ok(())
}

impl RunConfig {
    /// Range and consistency checks on a parsed configuration.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.sim;
        check_range("sim.n", s.n, 1, MAX_GENERATIONS)?;
        check_range("sim.replicas", s.replicas, 1, MAX_REPLICAS)?;
        check_betas("sim.betas", &s.betas)?;
        if s.population_cap < 1 {
            return Err(bad("sim.population_cap = 0 is out of range [1, inf)"));
        }
        if let Some(c) = s.ceiling {
            check_finite("sim.ceiling", &[c])?;
            if c <= 0.0 {
                return Err(bad(format!("sim.ceiling = {c} is out of range (0, inf)")));
            }
        }
        if let Some(w) = s.cluster_window {
            if !(w > 0.0 && w.is_finite()) {
                return Err(bad(format!("sim.cluster_window = {w} is out of range (0, inf)")));
            }
        }
        self.build_law()?;
        let l = s.betas.len();
        let check_deltas = |d: &Option<Vec<f64>>| -> Result<(), CliError> {
            if let Some(d) = d {
                check_finite("task.deltas", d)?;
                if d.len() != l {
                    return Err(bad(format!(
                        "task.deltas has {} entries but sim.betas has {l}",
                        d.len()
                    )));
                }
            }
            Ok(())
        };
        let check_tolerance = |key: &str, t: f64| check_range(key, t, 0.0, 1.0);
        match &self.task {
            TaskSection::Simulate {} => {}
            TaskSection::Tail {
                deltas,
                x_grid,
                min_event_delta,
                ..
            } => {
                check_deltas(deltas)?;
                check_grid("task.x_grid", x_grid, 0.0)?;
                if let Some(d) = min_event_delta {
                    check_finite("task.min_event_delta", &[*d])?;
                }
            }
            TaskSection::Rho {
                deltas,
                x_grid,
                shifts,
                tolerance,
            } => {
                check_deltas(deltas)?;
                check_grid("task.x_grid", x_grid, 0.0)?;
                check_finite("task.shifts", shifts)?;
                if shifts.is_empty() {
                    return Err(bad("task.shifts must not be empty"));
                }
                check_tolerance("task.tolerance", *tolerance)?;
            }
            TaskSection::Chi {
                deltas,
                x_grid,
                min_deltas,
                shift,
                tolerance,
            } => {
                check_deltas(deltas)?;
                check_grid("task.x_grid", x_grid, 0.0)?;
                check_grid("task.min_deltas", min_deltas, f64::NEG_INFINITY)?;
                check_finite("task.shift", &[*shift])?;
                check_tolerance("task.tolerance", *tolerance)?;
            }
            TaskSection::Ftheta {
                theta,
                rho_scale,
                x_grid,
                tolerance,
                shift,
                ..
            } => {
                if theta.len() != l {
                    return Err(bad(format!(
                        "task.theta has {} entries but sim.betas has {l}",
                        theta.len()
                    )));
                }
                check_finite("task.theta", theta)?;
                if let Some(t) = theta.iter().find(|t| **t < 0.0) {
                    return Err(bad(format!("task.theta contains {t}, out of range [0, inf)")));
                }
                if !(*rho_scale > 0.0 && rho_scale.is_finite()) {
                    return Err(bad(format!("task.rho_scale = {rho_scale} is out of range (0, inf)")));
                }
                check_grid("task.x_grid", x_grid, 0.0)?;
                check_range("task.tolerance", *tolerance, 1e-12, 1e-1)?;
                check_finite("task.shift", &[*shift])?;
            }
            TaskSection::LaplaceTest {
                n_list,
                theta,
                alpha,
                f_hat,
                x_grid,
                systematic_allowance,
            } => {
                check_counts("task.n_list", n_list)?;
                if theta.len() != l {
                    return Err(bad(format!(
                        "task.theta has {} entries but sim.betas has {l}",
                        theta.len()
                    )));
                }
                check_finite("task.theta", theta)?;
                if theta.iter().any(|t| *t < 0.0) {
                    return Err(bad("task.theta entries are out of range [0, inf)"));
                }
                check_finite("task.alpha", &[*alpha])?;
                if *alpha < 0.0 {
                    return Err(bad(format!("task.alpha = {alpha} is out of range [0, inf)")));
                }
                if let Some(f) = f_hat {
                    check_finite("task.f_hat", &[*f])?;
                }
                check_grid("task.x_grid", x_grid, 0.0)?;
                check_range("task.systematic_allowance", *systematic_allowance, 0.0, 1.0)?;
            }
            TaskSection::Dppp { lambda, window_hi, .. } | TaskSection::SuperposeTest { lambda, window_hi, .. } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(bad(format!("task.lambda = {lambda} is out of range (0, inf)")));
                }
                check_range("task.window_hi", *window_hi, -50.0, 15.0)?;
                if let TaskSection::SuperposeTest {
                    a,
                    b,
                    p_threshold,
                    margin,
                    ..
                } = &self.task
                {
                    check_finite("task.a, task.b", &[*a, *b])?;
                    check_range("task.p_threshold", *p_threshold, 0.0, 1.0)?;
                    if let Some(m) = margin {
                        check_range("task.margin", *m, 0.0, 100.0)?;
                    }
                }
            }
            TaskSection::Corollary { window_hi, .. } => {
                check_range("task.window_hi", *window_hi, 1e-9, 15.0)?;
            }
            TaskSection::Renewal {
                x_grid,
                c0_ranges,
                tolerance,
            } => {
                check_grid("task.x_grid", x_grid, 0.0)?;
                for [lo, hi] in c0_ranges {
                    if lo.is_nan() || hi.is_nan() || lo >= hi {
                        return Err(bad(format!("task.c0_ranges entry [{lo}, {hi}] is empty")));
                    }
                    if x_grid.iter().filter(|x| **x >= *lo && **x <= *hi).count() < 2 {
                        return Err(bad(format!(
                            "task.c0_ranges entry [{lo}, {hi}] covers fewer than two x_grid points"
                        )));
                    }
                }
                check_tolerance("task.tolerance", *tolerance)?;
            }
            TaskSection::ManyToOne { n_list, spine_replicas } => {
                check_counts("task.n_list", n_list)?;
                check_range("task.spine_replicas", *spine_replicas, 1, MAX_REPLICAS)?;
            }
            TaskSection::Ballot { n_grid } => check_counts("task.n_grid", n_grid)?,
            TaskSection::Oracle { .. } => {}
            TaskSection::Independence { n_list, level } => {
                check_counts("task.n_list", n_list)?;
                check_range("task.level", *level, 0.0, 30.0)?;
            }
            TaskSection::Domination {
                x_grid,
                j_grid,
                max_violation,
            } => {
                check_grid("task.x_grid", x_grid, 1.0)?;
                check_grid("task.j_grid", j_grid, 0.0)?;
                check_range("task.max_violation", *max_violation, 1.0, f64::MAX)?;
            }
        }
        Ok(())
    }

    /// Builds the offspring law described by `[law]`.
    pub fn build_law(&self) -> Result<OffspringLaw, CliError> {
        let l = &self.law;
        let allowed: &[&str] = match l.kind {
            LawName::GaussianBinary => &[],
            LawName::LatticeBinary => &["h", "r"],
            LawName::BinaryNormal => &["mean", "variance"],
            LawName::UserConfigured => &[
                "children",
                "child_probs",
                "displacement_mean",
                "displacement_sd",
                "values",
                "probs",
            ],
        };
        let present = [
            ("h", l.h.is_some()),
            ("r", l.r.is_some()),
            ("mean", l.mean.is_some()),
            ("variance", l.variance.is_some()),
            ("children", l.children.is_some()),
            ("child_probs", l.child_probs.is_some()),
            ("displacement_mean", l.displacement_mean.is_some()),
            ("displacement_sd", l.displacement_sd.is_some()),
            ("values", l.values.is_some()),
            ("probs", l.probs.is_some()),
        ];
        if let Some((key, _)) = present.iter().find(|(k, p)| *p && !allowed.contains(k)) {
            return Err(bad(format!("law.{key} does not apply to law kind {:?}", l.kind)));
        }
        let law = match l.kind {
            LawName::GaussianBinary => OffspringLaw::gaussian_binary(),
            LawName::LatticeBinary => match (l.h, l.r) {
                (None, None) => OffspringLaw::lattice_binary(),
                (Some(h), Some(r)) => OffspringLaw::lattice_binary_with(h, r)?,
                _ => return Err(bad("law.h and law.r must be given together")),
            },
            LawName::BinaryNormal => {
                let mean = l.mean.ok_or_else(|| bad("law.mean is required for binary_normal"))?;
                let var = l
                    .variance
                    .ok_or_else(|| bad("law.variance is required for binary_normal"))?;
                OffspringLaw::binary_normal(mean, var)?
            }
            LawName::UserConfigured => {
                let count = match (l.children, &l.child_probs) {
                    (Some(k), None) => ChildCount::Fixed(k),
                    (None, Some(p)) => ChildCount::Distribution(p.clone()),
                    _ => return Err(bad("give exactly one of law.children and law.child_probs")),
                };
                let displacement =
                    match (l.displacement_mean, l.displacement_sd, &l.values, &l.probs) {
                        (Some(mean), Some(sd), None, None) => Displacement::Normal { mean, sd },
                        (None, None, Some(values), Some(probs)) => Displacement::Discrete {
                            values: values.clone(),
                            probs: probs.clone(),
                        },
                        _ => return Err(bad(
                            "give either law.displacement_mean and law.displacement_sd, or law.values and law.probs",
                        )),
                    };
                OffspringLaw::user_configured(Reproduction::Iid { count, displacement })?
            }
        };
        let law = match (l.affine_scale, l.affine_shift) {
            (None, None) => law,
            (scale, shift) => law.affine_transform(AffineMap {
                scale: scale.unwrap_or(1.0),
                shift: shift.unwrap_or(0.0),
            })?,
        };
        if l.normalize {
            Ok(law.normalize_to_boundary()?)
        } else {
            Ok(law)
        }
    }

    /// Simulation settings for `generations` with `betas`.
    pub fn sim_config(&self, generations: usize, betas: &[f64]) -> SimConfig {
        SimConfig {
            generations,
            betas: betas.to_vec(),
            kill_at_zero: self.sim.kill_at_zero,
            free_statistics: self.sim.free_statistics,
            ceiling_offset: self.sim.ceiling,
            population_cap: self.sim.population_cap,
            seed: self.seed,
            record_cluster_window: self.sim.cluster_window,
            record_history: false,
        }
    }

    /// Canonical JSON text: sorted keys, resolved defaults.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Resolved configuration as TOML, echoed next to the outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 1\n[law]\nkind = \"gaussian_binary\"\n[sim]\nn = 10\n[task]\nkind = \"simulate\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.sim.betas, vec![2.0]);
        assert_eq!(c.sim.replicas, 10_000);
        assert_eq!(c.task, TaskSection::Simulate {});
        assert_eq!(c.output.formats, vec![Format::Csv, Format::Json]);
    }

    #[test]
    fn beta_at_most_one_is_rejected() {
        let text = MINIMAL.replace("n = 10", "n = 10\nbetas = [0.5]");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("exceed 1"), "{err}");
    }

    #[test]
    fn duplicate_task_kind_is_rejected() {
        let text = format!("{MINIMAL}kind = \"tail\"\n");
        assert!(parse_config_str(&text).is_err());
        let twice = format!("{MINIMAL}[task]\nkind = \"tail\"\n");
        assert!(parse_config_str(&twice).is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = MINIMAL.replace("n = 10", "n = 10\nreplicaz = 5");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("replicaz"), "{err}");
        let text = MINIMAL.replace("kind = \"simulate\"", "kind = \"simulate\"\nfoo = 1");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("foo"), "{err}");
    }

    #[test]
    fn missing_task_or_seed_is_rejected() {
        let no_task = MINIMAL.replace("[task]\nkind = \"simulate\"\n", "");
        assert!(parse_config_str(&no_task).unwrap_err().to_string().contains("task"));
        let no_seed = MINIMAL.replace("seed = 1\n", "");
        assert!(parse_config_str(&no_seed).unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn out_of_range_numbers_report_bounds() {
        let text = MINIMAL.replace("n = 10", "n = 0");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("sim.n") && err.contains("[1, 100000]"), "{err}");
    }

    #[test]
    fn law_parameters_must_match_kind() {
        let text = MINIMAL.replace("kind = \"gaussian_binary\"", "kind = \"gaussian_binary\"\nh = 1.0");
        assert!(parse_config_str(&text).unwrap_err().to_string().contains("law.h"));
        let raw = MINIMAL.replace(
            "kind = \"gaussian_binary\"",
            "kind = \"binary_normal\"\nmean = 0.0\nvariance = 1.0\nnormalize = true",
        );
        let c = parse_config_str(&raw).unwrap();
        assert!(c.build_law().unwrap().is_boundary_normalized());
    }

    #[test]
    fn canonical_json_ignores_field_order() {
        let a = parse_config_str(MINIMAL).unwrap();
        let reordered = "[task]\nkind = \"simulate\"\n[sim]\nn = 10\n[law]\nkind = \"gaussian_binary\"\n";
        let b = parse_config_str(&format!("seed = 1\n{reordered}")).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
    }
}
