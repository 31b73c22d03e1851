//! The tilted random walk behind the many-to-one formula, the spine of the
//! size-biased tree, ladder-height renewal counts and ballot-type estimates.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::numerics::{
    chi_square_sf, ks_one_sample, linear_fit, mix_keys, normal_cdf, Estimate, KsResult, RunningStats,
};
use crate::offspring::{ChildCount, Displacement, OffspringLaw, Reproduction};
use crate::replicas::{par_map, try_par_map};

/// Largest generation accepted by [`many_to_one_check`].
pub const MAX_TREE_GENERATIONS: usize = 12;
/// Relative standard error above which a many-to-one side is flagged.
pub const VARIANCE_WARNING_RATIO: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpineError {
    #[error("law is not boundary-normalized; normalize it first")]
    NotNormalized,
    #[error("law is not product-form; only weighted spine steps are available")]
    UnsupportedLaw,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("walk exceeded the per-replica cap of {0} steps")]
    PathCapExceeded(u64),
}

pub type Result<T> = std::result::Result<T, SpineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpineMode {
    /// Exact draws from the tilted displacement law.
    AnalyticTilt,
    /// Draws from the base law with importance weight `N e^{-V}`.
    Weighted,
}

#[derive(Debug, Clone, PartialEq)]
enum Tilt {
    Normal { mean: f64, sd: f64 },
    Discrete { values: Vec<f64>, cdf: Vec<f64> },
}

impl Tilt {
    fn tie_tolerance(&self) -> f64 {
        match self {
            Tilt::Discrete { .. } => 1e-9,
            Tilt::Normal { .. } => 0.0,
        }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Tilt::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Tilt::Discrete { values, cdf } => {
                let u: f64 = rng.random();
                values[cdf.iter().position(|&c| u < c).unwrap_or(values.len() - 1)]
            }
        }
    }
}

/// Law of the many-to-one step `X`, defined by `E f(X) = E[Σ e^{-V} f(V)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineStepLaw {
    law: OffspringLaw,
    mode: SpineMode,
    sigma2: f64,
    tilt: Option<Tilt>,
    /// CDF of the size-biased child count (product-form laws with random counts).
    count_cdf: Option<Vec<f64>>,
}

/// One step drawn in either mode; `weight` is 1 for exact draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedStep {
    pub value: f64,
    pub weight: f64,
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    let mut acc = 0.0;
    p.iter()
        .map(|q| {
            acc += q / total;
            acc
        })
        .collect()
}

impl SpineStepLaw {
    /// Chooses the exact tilt for product-form laws, weighted mode otherwise.
    pub fn new(law: &OffspringLaw) -> Result<Self> {
        let mode = if law.is_product_form() {
            SpineMode::AnalyticTilt
        } else {
            SpineMode::Weighted
        };
        Self::with_mode(law, mode).map(|(s, _)| s)
    }

    /// Builds a step law in the requested mode. Requesting weighted mode for
    /// a law that admits an exact tilt succeeds with a warning.
    pub fn with_mode(law: &OffspringLaw, mode: SpineMode) -> Result<(Self, Option<String>)> {
        if !law.is_boundary_normalized() {
            return Err(SpineError::NotNormalized);
        }
        let mut warning = None;
        let (tilt, count_cdf) = match (mode, law.reproduction()) {
            (SpineMode::AnalyticTilt, Reproduction::Iid { count, displacement }) => {
                let tilt = match displacement {
                    Displacement::Normal { mean, sd } => Tilt::Normal {
                        mean: mean - sd * sd,
                        sd: *sd,
                    },
                    Displacement::Discrete { values, probs } => {
                        let w: Vec<f64> = values.iter().zip(probs).map(|(v, p)| p * (-v).exp()).collect();
                        Tilt::Discrete {
                            values: values.clone(),
                            cdf: cumulative(&w),
                        }
                    }
                };
                let count_cdf = match count {
                    ChildCount::Fixed(_) => None,
                    ChildCount::Distribution(p) => Some(cumulative(
                        &p.iter().enumerate().map(|(k, q)| k as f64 * q).collect::<Vec<_>>(),
                    )),
                };
                (Some(tilt), count_cdf)
            }
            (SpineMode::AnalyticTilt, Reproduction::Scenarios(_)) => return Err(SpineError::UnsupportedLaw),
            (SpineMode::Weighted, _) => {
                if law.is_product_form() {
                    warning = Some(
                        "weighted spine steps requested for a product-form law; the exact tilt is available"
                            .to_string(),
                    );
                }
                (None, None)
            }
        };
        Ok((
            SpineStepLaw {
                law: law.clone(),
                mode,
                sigma2: law.moment(1.0, 2),
                tilt,
                count_cdf,
            },
            warning,
        ))
    }

    pub fn mode(&self) -> SpineMode {
        self.mode
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    /// `σ² = E[X²] = E[Σ V² e^{-V}]`.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// A draw of `X` with its importance weight.
    #[inline]
    pub fn spine_step<R: Rng + ?Sized>(&self, rng: &mut R, buf: &mut Vec<f64>) -> WeightedStep {
        match &self.tilt {
            Some(t) => WeightedStep {
                value: t.sample(rng),
                weight: 1.0,
            },
            None => {
                buf.clear();
                self.law.sample_into(rng, buf);
                if buf.is_empty() {
                    return WeightedStep {
                        value: 0.0,
                        weight: 0.0,
                    };
                }
                let j = rng.random_range(0..buf.len());
                let v = buf[j];
                WeightedStep {
                    value: v,
                    weight: buf.len() as f64 * (-v).exp(),
                }
            }
        }
    }

    /// An exact draw of `X`; only available with the analytic tilt.
    #[inline]
    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.tilt
            .as_ref()
            .map(|t| t.sample(rng))
            .ok_or(SpineError::UnsupportedLaw)
    }

    /// One generation of the size-biased tree along the spine.
    ///
    /// Returns the displacements of all children of the spine particle and the
    /// index of the next spine particle among them.
    pub fn size_biased_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<f64>, usize)> {
        let tilt = self.tilt.as_ref().ok_or(SpineError::UnsupportedLaw)?;
        let Reproduction::Iid { count, .. } = self.law.reproduction() else {
            return Err(SpineError::UnsupportedLaw);
        };
        let k = match (count, &self.count_cdf) {
            (ChildCount::Fixed(k), _) => *k,
            (_, Some(cdf)) => {
                let u: f64 = rng.random();
                cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
            }
            _ => unreachable!("random counts always carry a size-biased CDF"),
        };
        // Children are exchangeable, so the spine index is uniform.
        let chosen = rng.random_range(0..k);
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            if j == chosen {
                out.push(tilt.sample(rng));
            } else {
                out.push(self.base_displacement(rng));
            }
        }
        Ok((out, chosen))
    }

    fn base_displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law.reproduction() {
            Reproduction::Iid { displacement, .. } => match displacement {
                Displacement::Normal { mean, sd } => {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + sd * z
                }
                Displacement::Discrete { values, probs } => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (v, p) in values.iter().zip(probs) {
                        acc += p;
                        if u < acc {
                            return *v;
                        }
                    }
                    *values.last().expect("nonempty support")
                }
            },
            Reproduction::Scenarios(_) => unreachable!("checked by caller"),
        }
    }
}

/// A spine trajectory together with the offspring of each spine particle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineSample {
    pub spine_positions: Vec<f64>,
    pub sibling_counts: Vec<usize>,
    pub chosen_indices: Vec<usize>,
    /// Displacements of all children of the spine particle at each step.
    pub offspring: Vec<Vec<f64>>,
}

/// Runs `n` generations of the spine under the size-biased measure.
pub fn simulate_q<R: Rng + ?Sized>(step: &SpineStepLaw, n: usize, rng: &mut R) -> Result<SpineSample> {
    if !step.law.is_product_form() || step.tilt.is_none() {
        return Err(SpineError::UnsupportedLaw);
    }
    let mut positions = Vec::with_capacity(n + 1);
    positions.push(0.0);
    let mut counts = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    let mut offspring = Vec::with_capacity(n);
    let mut pos = 0.0;
    for _ in 0..n {
        let (children, j) = step.size_biased_offspring(rng)?;
        pos += children[j];
        positions.push(pos);
        counts.push(children.len());
        chosen.push(j);
        offspring.push(children);
    }
    Ok(SpineSample {
        spine_positions: positions,
        sibling_counts: counts,
        chosen_indices: chosen,
        offspring,
    })
}

/// A path functional `g(V(z_1), …, V(z_n))`.
pub type PathFunctional = dyn Fn(&[f64]) -> f64 + Sync + Send;

/// A named path functional.
pub struct NamedFunctional {
    pub name: &'static str,
    pub g: Box<PathFunctional>,
}

/// Five bounded functionals: constant, terminal band, nonnegative path,
/// clipped `e^{-S_n}` and a product of bounded factors.
pub fn standard_functionals() -> Vec<NamedFunctional> {
    vec![
        NamedFunctional {
            name: "constant",
            g: Box::new(|_| 1.0),
        },
        NamedFunctional {
            name: "terminal_band",
            g: Box::new(|p| {
                let s = p.last().copied().unwrap_or(0.0);
                f64::from(u8::from((-1.0..=2.0).contains(&s)))
            }),
        },
        NamedFunctional {
            name: "nonnegative_path",
            g: Box::new(|p| f64::from(u8::from(p.iter().all(|s| *s >= 0.0)))),
        },
        NamedFunctional {
            name: "clipped_exp",
            g: Box::new(|p| (-p.last().copied().unwrap_or(0.0)).exp().min(1.0)),
        },
        NamedFunctional {
            name: "product",
            g: Box::new(|p| p.iter().map(|s| 1.0 / (1.0 + s * s)).product()),
        },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct ManyToOneReport {
    pub name: String,
    pub n: usize,
    /// Monte Carlo of `E[Σ_{|z|=n} g(path)]` over whole trees.
    pub lhs: Estimate,
    /// Monte Carlo of `E[e^{S_n} g(S_1..S_n)]` over spine walks.
    pub rhs: Estimate,
    pub z_score: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct ManyToOneConfig {
    pub n: usize,
    pub tree_replicas: usize,
    pub spine_replicas: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

/// Appends each generation-`n` path of one tree to `paths` (flattened, stride `n`).
fn tree_paths(law: &OffspringLaw, n: usize, key: u64, paths: &mut Vec<f64>) {
    // (key, path) for each particle of the current generation
    let mut current: Vec<(u64, Vec<f64>)> = vec![(key, Vec::new())];
    let mut buf = Vec::new();
    for _ in 0..n {
        let mut next = Vec::with_capacity(current.len() * 2);
        for (k, path) in &current {
            let mut rng = SmallRng::seed_from_u64(*k);
            buf.clear();
            law.sample_into(&mut rng, &mut buf);
            let base = path.last().copied().unwrap_or(0.0);
            for (j, d) in buf.iter().enumerate() {
                let mut p = path.clone();
                p.push(base + d);
                next.push((mix_keys(*k, j as u64), p));
            }
        }
        current = next;
    }
    for (_, p) in current {
        paths.extend_from_slice(&p);
    }
}

/// Compares both sides of the many-to-one identity for several functionals
/// on shared trees and shared spine walks.
pub fn many_to_one_check(
    step: &SpineStepLaw,
    functionals: &[NamedFunctional],
    config: &ManyToOneConfig,
) -> Result<Vec<ManyToOneReport>> {
    let n = config.n;
    if n > MAX_TREE_GENERATIONS {
        return Err(SpineError::InvalidParameter(format!(
            "n = {n} exceeds the tree limit {MAX_TREE_GENERATIONS}"
        )));
    }
    if config.tree_replicas < 2 || config.spine_replicas < 2 {
        return Err(SpineError::InvalidParameter("need at least 2 replicas per side".into()));
    }
    let law = step.law();
    let tree_seed = mix_keys(config.seed, 1);
    let spine_seed = mix_keys(config.seed, 2);
    let nf = functionals.len();

    let lhs_samples: Vec<Vec<f64>> = par_map(config.tree_replicas, config.workers, |r| {
        let mut paths = Vec::new();
        tree_paths(law, n, mix_keys(tree_seed, r as u64), &mut paths);
        let count = paths.len().checked_div(n).unwrap_or(1);
        functionals
            .iter()
            .map(|f| (0..count).map(|i| (f.g)(&paths[i * n..(i + 1) * n])).sum::<f64>())
            .collect()
    });
    let rhs_samples: Vec<Vec<f64>> = par_map(config.spine_replicas, config.workers, |r| {
        let mut rng = SmallRng::seed_from_u64(mix_keys(spine_seed, r as u64));
        let mut buf = Vec::new();
        let mut path = Vec::with_capacity(n);
        let mut s = 0.0;
        let mut weight = 1.0;
        for _ in 0..n {
            let st = step.spine_step(&mut rng, &mut buf);
            s += st.value;
            weight *= st.weight;
            path.push(s);
        }
        let w = weight * s.exp();
        functionals.iter().map(|f| w * (f.g)(&path)).collect()
    });

    let mut out = Vec::with_capacity(nf);
    for (k, f) in functionals.iter().enumerate() {
        let lhs = Estimate::from_stats(&lhs_samples.iter().map(|v| v[k]).collect());
        let rhs = Estimate::from_stats(&rhs_samples.iter().map(|v| v[k]).collect());
        let pooled = (lhs.se * lhs.se + rhs.se * rhs.se).sqrt();
        let diff = lhs.value - rhs.value;
        let z_score = if pooled > 0.0 {
            diff / pooled
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY * diff.signum()
        };
        let ratio = |e: &Estimate| if e.value != 0.0 { e.se / e.value.abs() } else { 0.0 };
        let warning = (ratio(&lhs) > VARIANCE_WARNING_RATIO || ratio(&rhs) > VARIANCE_WARNING_RATIO).then(|| {
            format!(
                "high variance: relative SE {:.3} (tree) / {:.3} (spine)",
                ratio(&lhs),
                ratio(&rhs)
            )
        });
        out.push(ManyToOneReport {
            name: f.name.to_string(),
            n,
            lhs,
            rhs,
            z_score,
            warning,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RenewalEstimate {
    pub x: f64,
    pub r_hat: f64,
    pub se: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct RenewalConfig {
    pub replicas: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    /// A ladder epoch longer than this is discarded and redrawn from the current minimum.
    pub epoch_cap: u64,
    /// Hard limit on the total number of steps of one replica.
    pub path_cap: u64,
}

impl Default for RenewalConfig {
    fn default() -> Self {
        RenewalConfig {
            replicas: 10_000,
            seed: 0,
            workers: None,
            epoch_cap: 100_000,
            path_cap: 10_000_000,
        }
    }
}

/// Per-replica renewal counts on a grid, plus the number of redrawn epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalCurve {
    pub estimates: Vec<RenewalEstimate>,
    /// `counts[r][i]` is the count of replica `r` at `xs[i]`.
    #[serde(skip)]
    pub counts: Vec<Vec<u32>>,
    pub redrawn_epochs: u64,
}

/// Strict descending ladder values of one walk, down to the first one below `-x_max`.
fn ladder_values<R: Rng + ?Sized>(
    step: &SpineStepLaw,
    x_max: f64,
    config: &RenewalConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, u64)> {
    let tilt = step.tilt.as_ref().ok_or(SpineError::UnsupportedLaw)?;
    // Lattice walks revisit earlier minima; rounding must not turn a tie
    // into a new strict record.
    let tie = tilt.tie_tolerance();
    let mut records = Vec::new();
    let mut minimum = 0.0;
    let mut total = 0u64;
    let mut redrawn = 0u64;
    while minimum >= -x_max {
        let mut s = minimum;
        let mut len = 0u64;
        loop {
            s += tilt.sample(rng);
            len += 1;
            total += 1;
            if s < minimum - tie * (1.0 + minimum.abs()) {
                break;
            }
            if total >= config.path_cap {
                return Err(SpineError::PathCapExceeded(config.path_cap));
            }
            if len >= config.epoch_cap {
                redrawn += 1;
                s = minimum;
                len = 0;
            }
        }
        minimum = s;
        records.push(s);
    }
    Ok((records, redrawn))
}

/// `R(x)`: one plus the expected number of strict descending ladder values
/// `≥ -x`, estimated on a whole grid from the same walks.
pub fn renewal_curve(step: &SpineStepLaw, xs: &[f64], config: &RenewalConfig) -> Result<RenewalCurve> {
    if config.replicas < 2 {
        return Err(SpineError::InvalidParameter("need at least 2 replicas".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(SpineError::InvalidParameter("grid values must be finite".into()));
    }
    let x_max = xs.iter().copied().fold(0.0, f64::max);
    let per: Vec<(Vec<u32>, u64)> = try_par_map(config.replicas, config.workers, |r| {
        let mut rng = SmallRng::seed_from_u64(mix_keys(config.seed, r as u64));
        let (records, redrawn) = if x_max > 0.0 {
            ladder_values(step, x_max, config, &mut rng)?
        } else {
            (Vec::new(), 0)
        };
        let counts = xs
            .iter()
            .map(|&x| {
                if x < 0.0 {
                    0
                } else {
                    1 + records.iter().filter(|v| **v >= -x).count() as u32
                }
            })
            .collect();
        Ok((counts, redrawn))
    })?;
    let estimates = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let st: RunningStats = per.iter().map(|(c, _)| c[i] as f64).collect();
            RenewalEstimate {
                x,
                r_hat: st.mean(),
                se: st.std_error(),
                replicas: config.replicas,
            }
        })
        .collect();
    Ok(RenewalCurve {
        estimates,
        redrawn_epochs: per.iter().map(|(_, r)| r).sum(),
        counts: per.into_iter().map(|(c, _)| c).collect(),
    })
}

/// Renewal estimate at a single level.
pub fn renewal_function(step: &SpineStepLaw, x: f64, config: &RenewalConfig) -> Result<RenewalEstimate> {
    Ok(renewal_curve(step, &[x], config)?.estimates[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C0Estimate {
    pub slope: f64,
    pub se: f64,
    pub intercept: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

/// Slope of `R(x)` against `x`: the mean of per-replica least-squares slopes.
pub fn c0_estimate(step: &SpineStepLaw, xs: &[f64], config: &RenewalConfig) -> Result<C0Estimate> {
    let mut distinct = xs.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(SpineError::InvalidParameter(
            "slope estimation needs at least two distinct grid points".into(),
        ));
    }
    let curve = renewal_curve(step, xs, config)?;
    Ok(c0_from_curve(xs, &curve))
}

/// Slope estimate from an already computed curve.
pub fn c0_from_curve(xs: &[f64], curve: &RenewalCurve) -> C0Estimate {
    let mut slopes = RunningStats::new();
    let mut intercepts = RunningStats::new();
    for c in &curve.counts {
        let ys: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        if let Some(fit) = linear_fit(xs, &ys) {
            slopes.push(fit.slope);
            intercepts.push(fit.intercept);
        }
    }
    C0Estimate {
        slope: slopes.mean(),
        se: slopes.std_error(),
        intercept: intercepts.mean(),
        x_lo: xs.iter().copied().fold(f64::INFINITY, f64::min),
        x_hi: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BallotRow {
    /// Which estimate: `survival`, `interval` or `late_interval`.
    pub kind: String,
    pub x: f64,
    pub n: usize,
    pub probability: Estimate,
    /// `√n P/(1+x)` for survival, `n^{3/2} P` for the interval estimates.
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BallotReport {
    pub rows: Vec<BallotRow>,
    /// Per (kind, x): supremum of the normalized values over the grid.
    pub suprema: Vec<(String, f64, f64)>,
    /// Per (kind, x): the last normalized value exceeds 1.3 times the previous
    /// one by more than three combined standard errors.
    pub still_growing: Vec<(String, f64, bool)>,
    /// Survival probability is nondecreasing in the starting point at each n.
    pub monotone_in_x: bool,
}

pub const BALLOT_STARTS: [f64; 3] = [0.0, 1.0, 5.0];
/// Interval `[a, b]` for the terminal-band estimate.
pub const BALLOT_INTERVAL: (f64, f64) = (0.0, 1.0);
/// Level `y` and fraction `Λ` for the late-window estimate.
pub const BALLOT_LATE: (f64, f64) = (1.0, 0.5);

/// Estimates `P_x(min_{j≤n} S_j ≥ 0)` and the two terminal-interval variants
/// on a grid of `n`, for starting points `x ∈ {0, 1, 5}`, from shared walks.
pub fn ballot_checks(
    step: &SpineStepLaw,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<BallotReport> {
    let tilt = step.tilt.as_ref().ok_or(SpineError::UnsupportedLaw)?;
    if n_grid.is_empty() || n_grid.contains(&0) || replicas < 2 {
        return Err(SpineError::InvalidParameter(
            "n grid must be nonempty and positive, with at least 2 replicas".into(),
        ));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let n_max = *grid.last().expect("nonempty");
    let x_top = BALLOT_STARTS[BALLOT_STARTS.len() - 1];
    let (ia, ib) = BALLOT_INTERVAL;
    let (y, lambda) = BALLOT_LATE;
    let late_start: Vec<usize> = grid.iter().map(|&n| (lambda * n as f64).ceil() as usize).collect();
    let nx = BALLOT_STARTS.len();
    let ng = grid.len();
    let tol = tilt.tie_tolerance();

    // per replica: flattened [kind][x][n] indicators, kind = survival, interval, late
    let per: Vec<Vec<u8>> = par_map(replicas, workers, |r| {
        let mut rng = SmallRng::seed_from_u64(mix_keys(seed, r as u64));
        let mut hits = vec![0u8; 3 * nx * ng];
        let mut s = 0.0;
        let mut running_min = 0.0f64;
        let mut late_min = vec![f64::INFINITY; ng];
        let mut gi = 0;
        for j in 1..=n_max {
            s += tilt.sample(&mut rng);
            running_min = running_min.min(s);
            for (k, &ls) in late_start.iter().enumerate() {
                if j >= ls && j <= grid[k] {
                    late_min[k] = late_min[k].min(s);
                }
            }
            if j == grid[gi] {
                for (xi, &x) in BALLOT_STARTS.iter().enumerate() {
                    if running_min + x >= -tol {
                        hits[xi * ng + gi] = 1;
                        let end = s + x;
                        if end >= ia - tol && end <= ib + tol {
                            hits[(nx + xi) * ng + gi] = 1;
                        }
                        if end >= y + ia - tol && end <= y + ib + tol && late_min[gi] + x >= y - tol {
                            hits[(2 * nx + xi) * ng + gi] = 1;
                        }
                    }
                }
                gi += 1;
                if gi == ng {
                    break;
                }
            }
            if running_min + x_top < -tol {
                break;
            }
        }
        hits
    });

    let kinds = ["survival", "interval", "late_interval"];
    let mut rows = Vec::new();
    let mut suprema = Vec::new();
    let mut still_growing = Vec::new();
    for (ki, kind) in kinds.iter().enumerate() {
        for (xi, &x) in BALLOT_STARTS.iter().enumerate() {
            let mut normed = Vec::with_capacity(ng);
            let mut normed_se = Vec::with_capacity(ng);
            for (gi, &n) in grid.iter().enumerate() {
                let idx = (ki * nx + xi) * ng + gi;
                let h = per.iter().filter(|v| v[idx] == 1).count() as u64;
                let p = crate::numerics::proportion(h, replicas as u64);
                let nf = n as f64;
                let normalized = if ki == 0 {
                    nf.sqrt() * p.value / (1.0 + x)
                } else {
                    nf.powf(1.5) * p.value
                };
                normed.push(normalized);
                normed_se.push(if p.value > 0.0 {
                    normalized * p.se / p.value
                } else {
                    0.0
                });
                rows.push(BallotRow {
                    kind: kind.to_string(),
                    x,
                    n,
                    probability: p,
                    normalized,
                });
            }
            let sup = normed.iter().copied().fold(0.0, f64::max);
            suprema.push((kind.to_string(), x, sup));
            let growing = ng >= 2 && {
                let (last, prev) = (normed[ng - 1], normed[ng - 2]);
                let se = normed_se[ng - 1].hypot(1.3 * normed_se[ng - 2]);
                last - 1.3 * prev > 3.0 * se
            };
            still_growing.push((kind.to_string(), x, growing));
        }
    }
    let monotone_in_x = grid.iter().enumerate().all(|(gi, _)| {
        let ps: Vec<f64> = (0..nx)
            .map(|xi| per.iter().filter(|v| v[xi * ng + gi] == 1).count() as f64)
            .collect();
        ps.windows(2).all(|w| w[0] <= w[1])
    });
    Ok(BallotReport {
        rows,
        suprema,
        still_growing,
        monotone_in_x,
    })
}

/// Goodness-of-fit of the spine construction against the tilted law.
#[derive(Debug, Clone, Serialize)]
pub struct SpineLawReport {
    /// Chi-square statistic of the spine choice, binned by `q = e^{-V_1}/Σ e^{-V_j}`.
    pub choice_chi2: f64,
    pub choice_dof: f64,
    pub choice_p: f64,
    /// One-sample KS of spine increments against the tilted law (continuous tilts only).
    pub increment_ks: Option<KsResult>,
    /// Chi-square of spine increment frequencies against the tilted atoms
    /// (lattice tilts only).
    pub increment_chi2: Option<ChiSquareResult>,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

impl SpineStepLaw {
    /// CDF of the tilted step when it is known in closed form.
    pub fn tilted_cdf(&self, x: f64) -> Option<f64> {
        match self.tilt.as_ref()? {
            Tilt::Normal { mean, sd } => Some(normal_cdf((x - mean) / sd)),
            Tilt::Discrete { values, cdf } => Some(
                values
                    .iter()
                    .zip(cdf)
                    .filter(|(v, _)| **v <= x)
                    .map(|(_, c)| *c)
                    .fold(0.0, f64::max),
            ),
        }
    }
}

/// Chi-square test that the spine child is chosen with probability
/// proportional to `e^{-V}`, and a goodness-of-fit test of `samples` spine
/// increments (KS for Normal tilts, chi-square over the atoms for lattice tilts).
pub fn spine_law_check(step: &SpineStepLaw, samples: usize, seed: u64) -> Result<SpineLawReport> {
    if samples == 0 {
        return Err(SpineError::InvalidParameter("samples must be positive".into()));
    }
    const BINS: usize = 10;
    let mut rng = SmallRng::seed_from_u64(mix_keys(seed, 0x5b1e));
    let mut picks = [0.0; BINS];
    let mut expected = [0.0; BINS];
    let mut totals = [0.0; BINS];
    let choice_draws = samples.max(100_000);
    for _ in 0..choice_draws {
        let (children, j) = step.size_biased_offspring(&mut rng)?;
        let m = children.iter().copied().fold(f64::INFINITY, f64::min);
        let norm: f64 = children.iter().map(|v| (m - v).exp()).sum();
        let q = (m - children[0]).exp() / norm;
        let b = ((q * BINS as f64) as usize).min(BINS - 1);
        totals[b] += 1.0;
        expected[b] += q;
        if j == 0 {
            picks[b] += 1.0;
        }
    }
    let mut chi2 = 0.0;
    let mut dof = 0.0;
    for b in 0..BINS {
        let e1 = expected[b];
        let e0 = totals[b] - e1;
        if e1 < 5.0 || e0 < 5.0 {
            continue;
        }
        chi2 += (picks[b] - e1).powi(2) / e1 + (totals[b] - picks[b] - e0).powi(2) / e0;
        dof += 1.0;
    }
    let mut incs = Vec::with_capacity(samples);
    while incs.len() < samples {
        let s = simulate_q(step, 1, &mut rng)?;
        incs.push(s.spine_positions[1] - s.spine_positions[0]);
    }
    let (increment_ks, increment_chi2) = match &step.tilt {
        Some(Tilt::Normal { .. }) => (
            Some(ks_one_sample(&incs, |x| step.tilted_cdf(x).unwrap_or(f64::NAN))),
            None,
        ),
        Some(Tilt::Discrete { values, cdf }) => {
            let mut stat = 0.0;
            let mut prev = 0.0;
            for (v, c) in values.iter().zip(cdf) {
                let expected = (c - prev) * samples as f64;
                prev = *c;
                let observed = incs.iter().filter(|x| (*x - v).abs() <= 1e-9 * (1.0 + v.abs())).count() as f64;
                stat += (observed - expected).powi(2) / expected;
            }
            let dof = (values.len() - 1) as f64;
            let p_value = if dof > 0.0 { chi_square_sf(stat, dof) } else { 1.0 };
            (
                None,
                Some(ChiSquareResult {
                    statistic: stat,
                    dof,
                    p_value,
                }),
            )
        }
        None => (None, None),
    };
    Ok(SpineLawReport {
        choice_chi2: chi2,
        choice_dof: dof,
        choice_p: if dof > 0.0 { chi_square_sf(chi2, dof) } else { 1.0 },
        increment_ks,
        increment_chi2,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn gauss() -> SpineStepLaw {
        SpineStepLaw::new(&OffspringLaw::gaussian_binary()).unwrap()
    }

    fn lattice() -> SpineStepLaw {
        SpineStepLaw::new(&OffspringLaw::lattice_binary()).unwrap()
    }

    #[test]
    fn step_moments_match_tilted_law() {
        let h = (2.0 + 3f64.sqrt()).ln();
        for (step, var) in [(gauss(), 2.0 * LN_2), (lattice(), h * h)] {
            assert!((step.sigma2() - var).abs() < 1e-12);
            let mut rng = SmallRng::seed_from_u64(1);
            let mut m = RunningStats::new();
            let mut sq = RunningStats::new();
            for _ in 0..1_000_000 {
                let x = step.sample_x(&mut rng).unwrap();
                m.push(x);
                sq.push(x * x);
            }
            assert!(m.mean().abs() < 4.0 * m.std_error());
            assert!((sq.mean() - var).abs() <= 4.0 * sq.std_error() + 1e-12);
        }
    }

    #[test]
    fn lattice_step_is_fair_coin() {
        let h = (2.0 + 3f64.sqrt()).ln();
        let step = lattice();
        let mut rng = SmallRng::seed_from_u64(2);
        let ups = (0..100_000)
            .filter(|_| {
                let x = step.sample_x(&mut rng).unwrap();
                assert!(x == h || x == -h);
                x > 0.0
            })
            .count();
        assert!((ups as f64 / 1e5 - 0.5).abs() < 4.0 * (0.25f64 / 1e5).sqrt());
    }

    #[test]
    fn weighted_mode_is_unbiased_and_warns() {
        let (step, warn) = SpineStepLaw::with_mode(&OffspringLaw::gaussian_binary(), SpineMode::Weighted).unwrap();
        assert!(warn.is_some());
        let mut rng = SmallRng::seed_from_u64(3);
        let mut buf = Vec::new();
        let mut w = RunningStats::new();
        let mut wx = RunningStats::new();
        for _ in 0..400_000 {
            let s = step.spine_step(&mut rng, &mut buf);
            w.push(s.weight);
            wx.push(s.weight * s.value);
        }
        assert!((w.mean() - 1.0).abs() < 4.0 * w.std_error());
        assert!(wx.mean().abs() < 4.0 * wx.std_error());
    }

    #[test]
    fn unnormalized_law_is_rejected() {
        let raw = OffspringLaw::binary_normal(0.0, 1.0).unwrap();
        assert_eq!(SpineStepLaw::new(&raw), Err(SpineError::NotNormalized));
    }

    #[test]
    fn spine_of_length_zero() {
        let s = simulate_q(&gauss(), 0, &mut SmallRng::seed_from_u64(0)).unwrap();
        assert_eq!(s.spine_positions, vec![0.0]);
    }

    #[test]
    fn spine_increments_follow_tilted_normal() {
        let step = gauss();
        let mut rng = SmallRng::seed_from_u64(4);
        let sd = (2.0 * LN_2).sqrt();
        let mut incs = Vec::new();
        while incs.len() < 10_000 {
            let s = simulate_q(&step, 5, &mut rng).unwrap();
            assert_eq!(s.spine_positions.len(), 6);
            incs.extend(s.spine_positions.windows(2).map(|w| w[1] - w[0]));
        }
        incs.truncate(10_000);
        let ks = ks_one_sample(&incs, |x| normal_cdf(x / sd));
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn spine_choice_is_proportional_to_exp_weight() {
        // Bin by q = e^{-V_1}/(e^{-V_1}+e^{-V_2}); under the size-biased law the
        // spine picks child 1 with probability q.
        let step = gauss();
        let mut rng = SmallRng::seed_from_u64(5);
        let bins = 10;
        let mut picks = vec![0.0; bins];
        let mut expected = vec![0.0; bins];
        let mut totals = vec![0.0; bins];
        for _ in 0..200_000 {
            let (c, j) = step.size_biased_offspring(&mut rng).unwrap();
            let q = 1.0 / (1.0 + (c[0] - c[1]).exp());
            let b = ((q * bins as f64) as usize).min(bins - 1);
            totals[b] += 1.0;
            expected[b] += q;
            if j == 0 {
                picks[b] += 1.0;
            }
        }
        let mut chi2 = 0.0;
        let mut dof = 0.0;
        for b in 0..bins {
            if totals[b] < 50.0 {
                continue;
            }
            let e1 = expected[b];
            let e0 = totals[b] - e1;
            chi2 += (picks[b] - e1).powi(2) / e1 + (totals[b] - picks[b] - e0).powi(2) / e0;
            dof += 1.0;
        }
        assert!(chi_square_sf(chi2, dof) > 0.01, "chi2 {chi2} dof {dof}");
    }

    #[test]
    fn spine_law_report_passes_for_both_laws() {
        let g = spine_law_check(&gauss(), 10_000, 11).unwrap();
        assert!(g.choice_p > 0.01 && g.increment_ks.unwrap().p_value > 0.01, "{g:?}");
        let l = spine_law_check(&lattice(), 10_000, 11).unwrap();
        assert!(l.choice_p > 0.01 && l.increment_ks.is_none(), "{l:?}");
        assert!(l.increment_chi2.unwrap().p_value > 0.01, "{l:?}");
    }

    #[test]
    fn many_to_one_constant_functional() {
        let cfg = ManyToOneConfig {
            n: 5,
            tree_replicas: 2_000,
            spine_replicas: 200_000,
            seed: 1,
            workers: None,
        };
        let fs = standard_functionals();
        let r = many_to_one_check(&lattice(), &fs[..1], &cfg).unwrap();
        assert_eq!(r[0].lhs.value, 32.0);
        assert!(r[0].z_score.abs() < 3.0, "{r:?}");
    }

    #[test]
    fn many_to_one_at_generation_zero() {
        let cfg = ManyToOneConfig {
            n: 0,
            tree_replicas: 10,
            spine_replicas: 10,
            seed: 1,
            workers: None,
        };
        let g = [NamedFunctional {
            name: "c",
            g: Box::new(|_| 2.5),
        }];
        let r = many_to_one_check(&gauss(), &g, &cfg).unwrap();
        assert_eq!(r[0].lhs.value, 2.5);
        assert_eq!(r[0].rhs.value, 2.5);
        assert_eq!(r[0].z_score, 0.0);
        let too_deep = ManyToOneConfig { n: 13, ..cfg };
        assert!(many_to_one_check(&gauss(), &g, &too_deep).is_err());
    }

    #[test]
    fn renewal_edge_values() {
        let cfg = RenewalConfig {
            replicas: 100,
            ..RenewalConfig::default()
        };
        let r0 = renewal_function(&gauss(), 0.0, &cfg).unwrap();
        assert_eq!((r0.r_hat, r0.se), (1.0, 0.0));
        assert_eq!(renewal_function(&gauss(), -1.0, &cfg).unwrap().r_hat, 0.0);
    }

    #[test]
    fn lattice_renewal_is_exact() {
        let h = (2.0 + 3f64.sqrt()).ln();
        let xs = [0.0, 1.0, 2.0, 5.0, 10.0];
        let cfg = RenewalConfig {
            replicas: 200,
            ..RenewalConfig::default()
        };
        let c = renewal_curve(&lattice(), &xs, &cfg).unwrap();
        for e in &c.estimates {
            assert_eq!(e.r_hat, 1.0 + (e.x / h).floor());
            assert_eq!(e.se, 0.0);
        }
        let slope = c0_estimate(&lattice(), &[10.0, 15.0, 20.0, 25.0, 30.0], &cfg).unwrap();
        assert!((slope.slope - 1.0 / h).abs() < 0.05);
    }

    #[test]
    fn renewal_curve_is_monotone() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let cfg = RenewalConfig {
            replicas: 2000,
            ..RenewalConfig::default()
        };
        let c = renewal_curve(&gauss(), &xs, &cfg).unwrap();
        assert!(c.estimates.windows(2).all(|w| w[0].r_hat <= w[1].r_hat));
        assert!(c.estimates.iter().all(|e| e.r_hat >= 1.0));
    }

    #[test]
    fn c0_needs_two_points() {
        let cfg = RenewalConfig::default();
        assert!(c0_estimate(&gauss(), &[20.0], &cfg).is_err());
        assert!(c0_estimate(&gauss(), &[20.0, 20.0], &cfg).is_err());
    }

    #[test]
    fn ballot_probabilities_are_monotone_in_start() {
        let r = ballot_checks(&gauss(), &[10, 100], 5000, 3, None).unwrap();
        assert!(r.monotone_in_x);
        assert_eq!(r.rows.len(), 3 * 3 * 2);
    }
}
