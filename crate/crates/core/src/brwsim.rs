//! Generation-by-generation simulation of the branching random walk.
//!
//! Every particle owns a 64-bit key; a child's key is derived from its
//! parent's key and its birth index, and the particle's offspring are drawn
//! from a generator seeded by its own key. The realized tree is therefore a
//! pure function of `(seed, replica)`: breadth-first frontiers, depth-first
//! stopped lines and pruned or unpruned passes all see the same tree.

use rand::rngs::SmallRng;
use rand::SeedableRng;
use serde::Serialize;
use thiserror::Error;

use crate::numerics::{mix_keys, CompensatedSum};
use crate::offspring::{OffspringError, OffspringLaw};
use crate::pointproc::PointMeasure;

/// Default ceiling offset above `(3/2) log n`.
pub const DEFAULT_CEILING: f64 = 25.0;
pub const DEFAULT_POPULATION_CAP: usize = 1 << 22;
pub const DEFAULT_CLUSTER_WINDOW: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrwError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("population {population} at generation {generation} exceeds the cap {cap}{}", if *.ceiling_set { "" } else { "; set a ceiling offset to prune particles far above the minimum" })]
    CapExceeded {
        generation: usize,
        population: usize,
        cap: usize,
        ceiling_set: bool,
    },
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("derivative-martingale proxy must be positive, got {0}")]
    Conditioning(f64),
    #[error(transparent)]
    Law(#[from] OffspringError),
}

pub type Result<T> = std::result::Result<T, BrwError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub generations: usize,
    pub betas: Vec<f64>,
    pub kill_at_zero: bool,
    /// With `kill_at_zero`, also compute the unkilled statistics on the same tree.
    /// When false, killed particles are dropped as soon as they cross below 0
    /// and the unkilled fields are NaN.
    pub free_statistics: bool,
    /// Prune particles above `(3/2) log n + C`.
    pub ceiling_offset: Option<f64>,
    pub population_cap: usize,
    pub seed: u64,
    pub record_cluster_window: Option<f64>,
    /// Record per-generation minimum, additive and derivative martingales.
    pub record_history: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            generations: 10,
            betas: vec![2.0],
            kill_at_zero: false,
            free_statistics: true,
            ceiling_offset: None,
            population_cap: DEFAULT_POPULATION_CAP,
            seed: 0,
            record_cluster_window: None,
            record_history: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generations < 1 {
            return Err(BrwError::InvalidConfig("generations must be at least 1".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 1.0 && b.is_finite())) {
            return Err(BrwError::InvalidConfig(format!("beta must exceed 1, got {b}")));
        }
        if self.population_cap < 1 {
            return Err(BrwError::InvalidConfig("population_cap must be at least 1".into()));
        }
        if let Some(c) = self.ceiling_offset {
            if !c.is_finite() {
                return Err(BrwError::InvalidConfig("ceiling offset must be finite".into()));
            }
        }
        if let Some(w) = self.record_cluster_window {
            if w.is_nan() || w < 0.0 {
                return Err(BrwError::InvalidConfig("cluster window must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `(3/2) log n`.
    pub fn a_n(&self) -> f64 {
        recentering(self.generations)
    }

    pub fn ceiling(&self) -> Option<f64> {
        self.ceiling_offset.map(|c| self.a_n() + c)
    }

    fn drop_killed(&self) -> bool {
        self.kill_at_zero && !self.free_statistics
    }
}

/// `(3/2) log n`, with value 0 at `n = 0`.
pub fn recentering(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.5 * (n as f64).ln()
    }
}

/// Key of the root particle of a replica.
pub fn root_key(seed: u64, replica: u64) -> u64 {
    mix_keys(seed, replica)
}

/// One generation of particles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationFrontier {
    pub positions: Vec<f64>,
    /// Minimum along the ancestral path, the particle itself included.
    pub running_path_min: Vec<f64>,
    pub keys: Vec<u64>,
    pub generation: usize,
    pub truncated: bool,
    /// Absolute ceiling position when pruning was enabled.
    pub ceiling: Option<f64>,
}

impl GenerationFrontier {
    /// Single particle at the origin.
    pub fn root(key: u64) -> Self {
        GenerationFrontier {
            positions: vec![0.0],
            running_path_min: vec![0.0],
            keys: vec![key],
            ..Self::default()
        }
    }

    /// A frontier with the given positions, each treated as its own path minimum.
    pub fn from_positions(positions: Vec<f64>, generation: usize, key: u64) -> Self {
        let keys = (0..positions.len() as u64).map(|i| mix_keys(key, i)).collect();
        GenerationFrontier {
            running_path_min: positions.clone(),
            positions,
            keys,
            generation,
            truncated: false,
            ceiling: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Whether the particle's whole path stayed at or above 0.
    #[inline]
    pub fn is_alive_killed(&self, i: usize) -> bool {
        self.running_path_min[i] >= 0.0
    }
}

/// Exact minimum of the positions, `+∞` when empty.
pub fn minimum(frontier: &GenerationFrontier) -> f64 {
    frontier.positions.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `Σ e^{-βV}` over the frontier.
pub fn partition_function(frontier: &GenerationFrontier, beta: f64) -> f64 {
    let mut s = CompensatedSum::new();
    for &v in &frontier.positions {
        s.add((-beta * v).exp());
    }
    s.value()
}

/// `n^{3β/2} Σ e^{-βV}`.
pub fn partition_function_tilde(frontier: &GenerationFrontier, beta: f64) -> f64 {
    tilde_factor(frontier.generation, beta) * partition_function(frontier, beta)
}

/// `n^{3β/2}`.
pub fn tilde_factor(n: usize, beta: f64) -> f64 {
    (n as f64).powf(1.5 * beta)
}

/// `Z_n = Σ V e^{-V}`.
pub fn derivative_martingale(frontier: &GenerationFrontier) -> f64 {
    let mut s = CompensatedSum::new();
    for &v in &frontier.positions {
        s.add(v * (-v).exp());
    }
    s.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub population: usize,
    pub minimum: f64,
    pub additive: f64,
    pub derivative: f64,
}

/// Particles within a window of the minimum, measured from the minimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSample {
    pub relative_positions: Vec<f64>,
}

/// Path functionals of one replica at generation `n`.
///
/// Vectors indexed like `betas`. Unkilled fields are NaN when killed
/// particles were physically dropped; killed fields are empty (and `m_kill`
/// is `+∞`) when no barrier was requested.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub generations: usize,
    pub betas: Vec<f64>,
    pub m_n: f64,
    pub m_tilde: f64,
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub w_kill: Vec<f64>,
    pub w_kill_tilde: Vec<f64>,
    pub m_kill: f64,
    pub z_n: f64,
    pub w_additive: f64,
    pub survived: bool,
    pub survived_kill: bool,
    pub population: usize,
    pub pruned: u64,
    /// Per β: `pruned · e^{-βC}`, an a-posteriori bound on the pruned mass of `W̃`.
    pub ceiling_bias_bound: Vec<f64>,
    pub cluster: Option<ClusterSample>,
    pub history: Vec<GenerationSummary>,
}

fn summarize(f: &GenerationFrontier) -> GenerationSummary {
    GenerationSummary {
        generation: f.generation,
        population: f.len(),
        minimum: minimum(f),
        additive: partition_function(f, 1.0),
        derivative: derivative_martingale(f),
    }
}

/// Advances `frontier` by one generation in place.
///
/// Returns the number of children pruned by the ceiling.
fn step(
    law: &OffspringLaw,
    config: &SimConfig,
    frontier: &mut GenerationFrontier,
    next: &mut GenerationFrontier,
    buf: &mut Vec<f64>,
) -> Result<u64> {
    next.positions.clear();
    next.running_path_min.clear();
    next.keys.clear();
    let ceiling = config.ceiling();
    let drop_killed = config.drop_killed();
    let mut pruned = 0u64;
    for i in 0..frontier.len() {
        let (p, m, key) = (frontier.positions[i], frontier.running_path_min[i], frontier.keys[i]);
        let mut rng = SmallRng::seed_from_u64(key);
        buf.clear();
        law.sample_into(&mut rng, buf);
        for (j, d) in buf.iter().enumerate() {
            let pos = p + d;
            let run_min = m.min(pos);
            if drop_killed && run_min < 0.0 {
                continue;
            }
            if let Some(c) = ceiling {
                if pos > c {
                    pruned += 1;
                    continue;
                }
            }
            next.positions.push(pos);
            next.running_path_min.push(run_min);
            next.keys.push(mix_keys(key, j as u64));
        }
        if next.len() > config.population_cap {
            return Err(BrwError::CapExceeded {
                generation: frontier.generation + 1,
                population: next.len(),
                cap: config.population_cap,
                ceiling_set: ceiling.is_some(),
            });
        }
    }
    next.generation = frontier.generation + 1;
    next.truncated = frontier.truncated || pruned > 0;
    next.ceiling = ceiling;
    std::mem::swap(frontier, next);
    Ok(pruned)
}

/// Simulates replica 0.
pub fn simulate(law: &OffspringLaw, config: &SimConfig) -> Result<(GenerationFrontier, TrajectoryStats)> {
    simulate_replica(law, config, 0)
}

/// Simulates the tree rooted at `root_key(config.seed, replica)` up to generation `n`.
pub fn simulate_replica(
    law: &OffspringLaw,
    config: &SimConfig,
    replica: u64,
) -> Result<(GenerationFrontier, TrajectoryStats)> {
    config.validate()?;
    let mut frontier = GenerationFrontier::root(root_key(config.seed, replica));
    let mut next = GenerationFrontier::default();
    let mut buf = Vec::new();
    let mut pruned = 0u64;
    let mut history = Vec::new();
    for _ in 0..config.generations {
        pruned += step(law, config, &mut frontier, &mut next, &mut buf)?;
        if config.record_history {
            history.push(summarize(&frontier));
        }
        if frontier.is_empty() {
            frontier.generation = config.generations;
            break;
        }
    }
    frontier.generation = config.generations;
    if pruned > 0 {
        log::debug!("replica {replica}: ceiling pruned {pruned} particles");
    }
    let stats = compute_stats(&frontier, config, pruned, history);
    Ok((frontier, stats))
}

fn compute_stats(
    frontier: &GenerationFrontier,
    config: &SimConfig,
    pruned: u64,
    history: Vec<GenerationSummary>,
) -> TrajectoryStats {
    let n = config.generations;
    let a_n = recentering(n);
    let nb = config.betas.len();
    let free = !config.drop_killed();

    let mut w = vec![CompensatedSum::new(); nb];
    let mut wk = vec![CompensatedSum::new(); nb];
    let mut z = CompensatedSum::new();
    let mut add = CompensatedSum::new();
    let mut m_n = f64::INFINITY;
    let mut m_kill = f64::INFINITY;
    let mut alive_kill = 0usize;
    for i in 0..frontier.len() {
        let v = frontier.positions[i];
        let alive = config.kill_at_zero && frontier.is_alive_killed(i);
        m_n = m_n.min(v);
        let e1 = (-v).exp();
        z.add(v * e1);
        add.add(e1);
        for (k, &beta) in config.betas.iter().enumerate() {
            let e = (-beta * v).exp();
            w[k].add(e);
            if alive {
                wk[k].add(e);
            }
        }
        if alive {
            m_kill = m_kill.min(v);
            alive_kill += 1;
        }
    }
    let free_or_nan = |x: f64| if free { x } else { f64::NAN };
    let w: Vec<f64> = w.iter().map(|s| free_or_nan(s.value())).collect();
    let w_tilde = w
        .iter()
        .zip(&config.betas)
        .map(|(x, &b)| x * tilde_factor(n, b))
        .collect();
    let (w_kill, w_kill_tilde) = if config.kill_at_zero {
        let wk: Vec<f64> = wk.iter().map(|s| s.value()).collect();
        let wkt = wk
            .iter()
            .zip(&config.betas)
            .map(|(x, &b)| x * tilde_factor(n, b))
            .collect();
        (wk, wkt)
    } else {
        (Vec::new(), Vec::new())
    };
    let ceiling_bias_bound = config
        .betas
        .iter()
        .map(|&b| match config.ceiling_offset {
            Some(c) => pruned as f64 * (-b * c).exp(),
            None => 0.0,
        })
        .collect();
    let cluster = match config.record_cluster_window {
        Some(win) if free && !frontier.is_empty() => seen_from_tip(frontier, win).ok(),
        _ => None,
    };
    let m_n = free_or_nan(m_n);
    TrajectoryStats {
        generations: n,
        betas: config.betas.clone(),
        m_n,
        m_tilde: m_n - a_n,
        w,
        w_tilde,
        w_kill,
        w_kill_tilde,
        m_kill,
        z_n: free_or_nan(z.value()),
        w_additive: free_or_nan(add.value()),
        survived: !frontier.is_empty(),
        survived_kill: alive_kill > 0,
        population: frontier.len(),
        pruned,
        ceiling_bias_bound,
        cluster,
        history,
    }
}

/// Sorted `V(z) - M_n` for every particle within `window` of the minimum.
pub fn seen_from_tip(frontier: &GenerationFrontier, window: f64) -> Result<ClusterSample> {
    if frontier.is_empty() {
        return Err(BrwError::EmptyFrontier);
    }
    let m = minimum(frontier);
    let mut rel: Vec<f64> = frontier
        .positions
        .iter()
        .map(|v| v - m)
        .filter(|d| *d <= window)
        .collect();
    rel.sort_by(|a, b| a.total_cmp(b));
    Ok(ClusterSample {
        relative_positions: rel,
    })
}

/// Point measure with atoms `V(z) - (3/2) log n + log z_proxy`.
///
/// The proxy stands in for the limit of the derivative martingale; typical
/// choices are `Z_n` of the same tree or a stopped-line value.
pub fn recentered_measure(frontier: &GenerationFrontier, z_proxy: f64) -> Result<PointMeasure> {
    if !(z_proxy > 0.0 && z_proxy.is_finite()) {
        return Err(BrwError::Conditioning(z_proxy));
    }
    let shift = -recentering(frontier.generation) + z_proxy.ln();
    let hi = frontier.ceiling.map_or(f64::INFINITY, |c| c + shift);
    Ok(PointMeasure::new(
        frontier.positions.iter().map(|v| v + shift).collect(),
        (f64::NEG_INFINITY, hi),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineParticle {
    pub position: f64,
    pub generation: usize,
    /// Highest position among strict ancestors (`-∞` for the root).
    pub ancestor_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppedLine {
    pub level: f64,
    pub particles: Vec<LineParticle>,
    pub z_a: f64,
    /// Some lineage hit the generation or particle cap before crossing.
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppedLineConfig {
    pub seed: u64,
    pub replica: u64,
    pub max_generation: usize,
    pub max_particles: usize,
}

impl Default for StoppedLineConfig {
    fn default() -> Self {
        StoppedLineConfig {
            seed: 0,
            replica: 0,
            max_generation: 100_000,
            max_particles: 10_000_000,
        }
    }
}

/// Particles whose position first reaches `level` along their ancestral line.
///
/// Explores the same tree as [`simulate_replica`] for the same seed and replica.
pub fn stopped_line(law: &OffspringLaw, level: f64, config: &StoppedLineConfig) -> Result<StoppedLine> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(BrwError::InvalidConfig(format!(
            "stopped-line level must be finite and nonnegative, got {level}"
        )));
    }
    let mut particles = Vec::new();
    let mut partial = false;
    let mut visited = 0usize;
    let mut buf = Vec::new();
    // (position, key, generation, ancestor max)
    let mut stack = vec![(0.0f64, root_key(config.seed, config.replica), 0usize, f64::NEG_INFINITY)];
    while let Some((pos, key, generation, amax)) = stack.pop() {
        if pos >= level {
            particles.push(LineParticle {
                position: pos,
                generation,
                ancestor_max: amax,
            });
            continue;
        }
        if generation >= config.max_generation || visited >= config.max_particles {
            partial = true;
            continue;
        }
        visited += 1;
        let mut rng = SmallRng::seed_from_u64(key);
        buf.clear();
        law.sample_into(&mut rng, &mut buf);
        let amax = amax.max(pos);
        for (j, d) in buf.iter().enumerate().rev() {
            stack.push((pos + d, mix_keys(key, j as u64), generation + 1, amax));
        }
    }
    let z_a = {
        let mut s = CompensatedSum::new();
        for p in &particles {
            s.add(p.position * (-p.position).exp());
        }
        s.value()
    };
    Ok(StoppedLine {
        level,
        particles,
        z_a,
        partial,
    })
}

/// Fraction of replicas extinct by generation `n`.
///
/// A replica is declared surviving once its population reaches `escape`:
/// the extinction probability from that many independent particles is
/// negligible for any supercritical law with moderate extinction risk.
pub fn extinction_probability(
    law: &OffspringLaw,
    generations: usize,
    replicas: usize,
    escape: usize,
    seed: u64,
) -> crate::numerics::Estimate {
    let config = SimConfig {
        generations: 1,
        seed,
        population_cap: usize::MAX,
        ..SimConfig::default()
    };
    let extinct: u64 = crate::replicas::par_map(replicas, None, |r| {
        let mut frontier = GenerationFrontier::root(root_key(seed, r as u64));
        let mut next = GenerationFrontier::default();
        let mut buf = Vec::new();
        for _ in 0..generations {
            if frontier.is_empty() || frontier.len() >= escape {
                break;
            }
            step(law, &config, &mut frontier, &mut next, &mut buf).expect("uncapped step");
        }
        u64::from(frontier.is_empty())
    })
    .into_iter()
    .sum();
    crate::numerics::proportion(extinct, replicas as u64)
}
