//! Tail estimators, the Laplace exponent, limit-theorem checks and the
//! enumeration oracle.

pub mod ftheta;
pub mod oracle;
pub mod tail;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::brwsim::{self, BrwError, SimConfig, StoppedLineConfig, TrajectoryStats};
use crate::numerics::{linear_fit, mix_keys, proportion, spearman, Estimate, RunningStats};
use crate::offspring::OffspringLaw;
use crate::replicas::try_par_map;

pub use ftheta::{f_theta, FThetaEstimate, GridRho, QuadratureConfig, SoftminRho, TailIntensity};
pub use oracle::{oracle_enumerate, OracleResult};
pub use tail::{
    chi_estimate, rho_estimate, tail_curve_from_stats, PlateauEstimate, RhoEstimate, TailCurve, TailOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no plateau found: {0}")]
    NoPlateau(String),
    #[error("tail intensity returned {value} at {delta:?}; it must be positive and finite")]
    InvalidRho { delta: Vec<f64>, value: f64 },
    #[error("outcome space exceeds {limit} outcomes")]
    OutcomeSpaceTooLarge { limit: u64 },
    #[error(transparent)]
    Simulation(#[from] BrwError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Simulates `replicas` independent trees and returns their statistics in replica order.
pub fn simulate_many(
    law: &OffspringLaw,
    config: &SimConfig,
    replicas: usize,
    workers: Option<usize>,
) -> Result<Vec<TrajectoryStats>> {
    Ok(try_par_map(replicas, workers, |r| {
        brwsim::simulate_replica(law, config, r as u64).map(|(_, s)| s)
    })?)
}

/// Simulates a replica pool and evaluates the tail events on `x_grid`.
#[allow(clippy::too_many_arguments)]
pub fn tail_curve(
    law: &OffspringLaw,
    sim: &SimConfig,
    betas: &[f64],
    deltas: &[f64],
    x_grid: &[f64],
    replicas: usize,
    options: TailOptions,
    workers: Option<usize>,
) -> Result<TailCurve> {
    let mut cfg = sim.clone();
    for b in betas {
        if !cfg.betas.contains(b) {
            cfg.betas.push(*b);
        }
    }
    if options.killed {
        cfg.kill_at_zero = true;
    }
    let stats = simulate_many(law, &cfg, replicas, workers)?;
    tail_curve_from_stats(&stats, betas, deltas, x_grid, options)
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceRow {
    pub n: usize,
    /// `E[e^{-Σθ_i μ̂_n(β_i)} e^{-αZ_n} 1{Z_n>0}]`
    pub lhs: Estimate,
    /// `e^{-F̂} E[e^{-αZ_n} 1{Z_n>0}]`
    pub rhs: Estimate,
    pub gap: f64,
    pub pooled_se: f64,
    pub positive_z: usize,
    pub insufficient: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceReport {
    pub f_hat: f64,
    pub rows: Vec<LaplaceRow>,
    pub gap_nonincreasing: bool,
    /// Final gap below three pooled standard errors plus the systematic allowance.
    pub final_within_budget: bool,
    pub systematic_allowance: f64,
}

/// Laplace-functional check from precomputed replica pools, one per `n`.
///
/// `μ̂_n(β)` uses the same tree's `Z_n` as the proxy for the limit of the
/// derivative martingale, so `μ̂_n(β) = W̃_{n,β} Z_n^{-β}`.
pub fn laplace_convergence_from_stats(
    pools: &[Vec<TrajectoryStats>],
    betas: &[f64],
    theta: &[f64],
    alpha: f64,
    f_hat: f64,
    systematic_allowance: f64,
) -> Result<LaplaceReport> {
    if betas.len() != theta.len() {
        return Err(EstimatorError::InvalidParameter(
            "betas and theta differ in length".into(),
        ));
    }
    let mut rows = Vec::with_capacity(pools.len());
    let factor = (-f_hat).exp();
    for pool in pools {
        let first = pool
            .first()
            .ok_or_else(|| EstimatorError::InvalidParameter("empty replica pool".into()))?;
        let idx: Vec<usize> = betas
            .iter()
            .map(|b| {
                first
                    .betas
                    .iter()
                    .position(|s| s == b)
                    .ok_or_else(|| EstimatorError::InvalidParameter(format!("beta {b} was not simulated")))
            })
            .collect::<Result<_>>()?;
        let mut lhs = RunningStats::new();
        let mut rhs = RunningStats::new();
        let mut positive = 0;
        for s in pool {
            if s.z_n > 0.0 {
                positive += 1;
                let weight = (-alpha * s.z_n).exp();
                let exponent: f64 = idx
                    .iter()
                    .zip(betas)
                    .zip(theta)
                    .map(|((&k, &b), &t)| t * s.w_tilde[k] * s.z_n.powf(-b))
                    .sum();
                lhs.push((-exponent).exp() * weight);
                rhs.push(factor * weight);
            } else {
                lhs.push(0.0);
                rhs.push(0.0);
            }
        }
        let lhs = Estimate::from_stats(&lhs);
        let rhs = Estimate::from_stats(&rhs);
        rows.push(LaplaceRow {
            n: first.generations,
            gap: (lhs.value - rhs.value).abs(),
            pooled_se: (lhs.se * lhs.se + rhs.se * rhs.se).sqrt(),
            lhs,
            rhs,
            positive_z: positive,
            insufficient: positive < tail::MIN_SURVIVORS,
        });
    }
    let gap_nonincreasing = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    let final_within_budget = rows
        .last()
        .is_some_and(|r| r.gap < 3.0 * r.pooled_se + systematic_allowance);
    Ok(LaplaceReport {
        f_hat,
        rows,
        gap_nonincreasing,
        final_within_budget,
        systematic_allowance,
    })
}

/// Simulates one pool per `n` and runs [`laplace_convergence_from_stats`].
#[allow(clippy::too_many_arguments)]
pub fn laplace_convergence_test(
    law: &OffspringLaw,
    n_list: &[usize],
    sim: &SimConfig,
    betas: &[f64],
    theta: &[f64],
    alpha: f64,
    f_hat: f64,
    replicas: usize,
    workers: Option<usize>,
) -> Result<LaplaceReport> {
    let pools = n_list
        .iter()
        .map(|&n| {
            let cfg = SimConfig {
                generations: n,
                betas: betas.to_vec(),
                ..sim.clone()
            };
            simulate_many(law, &cfg, replicas, workers)
        })
        .collect::<Result<Vec<_>>>()?;
    laplace_convergence_from_stats(&pools, betas, theta, alpha, f_hat, 0.02)
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceRow {
    pub n: usize,
    /// Spearman correlation of `μ̂_n(β)` (independent-run proxy) against `Z_A`.
    pub rank_correlation: f64,
    /// Spearman correlation of `W̃_{n,β} Z_n^{-β}` against `Z_n` on the same tree.
    pub self_proxy_correlation: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub beta: f64,
    pub level: f64,
    pub rows: Vec<IndependenceRow>,
    pub abs_correlation_decreasing: bool,
    /// `3/√pairs` of the last row, the null calibration band.
    pub null_band: f64,
}

/// Rank-correlation trend between the normalized partition function and the
/// stopped-line derivative martingale.
#[allow(clippy::too_many_arguments)]
pub fn independence_trend(
    law: &OffspringLaw,
    n_list: &[usize],
    sim: &SimConfig,
    beta: f64,
    level: f64,
    replicas: usize,
    workers: Option<usize>,
) -> Result<IndependenceReport> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let cfg = SimConfig {
            generations: n,
            betas: vec![beta],
            ..sim.clone()
        };
        let proxy_cfg = SimConfig {
            seed: mix_keys(sim.seed, 0xC0FFEE),
            ..cfg.clone()
        };
        let triples: Vec<(f64, f64, f64, f64)> = try_par_map(replicas, workers, |r| {
            let (_, s) = brwsim::simulate_replica(law, &cfg, r as u64)?;
            let (_, p) = brwsim::simulate_replica(law, &proxy_cfg, r as u64)?;
            let line = brwsim::stopped_line(
                law,
                level,
                &StoppedLineConfig {
                    seed: sim.seed,
                    replica: r as u64,
                    ..StoppedLineConfig::default()
                },
            )?;
            Ok::<_, BrwError>((s.w_tilde[0], s.z_n, p.z_n, line.z_a))
        })?;
        let (mut mu, mut za) = (Vec::new(), Vec::new());
        let (mut self_mu, mut self_z) = (Vec::new(), Vec::new());
        for &(w, z, zp, z_a) in &triples {
            if zp > 0.0 {
                mu.push(w * zp.powf(-beta));
                za.push(z_a);
            }
            if z > 0.0 {
                self_mu.push(w * z.powf(-beta));
                self_z.push(z);
            }
        }
        rows.push(IndependenceRow {
            n,
            rank_correlation: spearman(&mu, &za),
            self_proxy_correlation: spearman(&self_mu, &self_z),
            pairs: mu.len(),
        });
    }
    let abs_correlation_decreasing = rows
        .windows(2)
        .all(|w| w[1].rank_correlation.abs() <= w[0].rank_correlation.abs());
    let null_band = rows.last().map_or(0.0, |r| 3.0 / (r.pairs.max(1) as f64).sqrt());
    Ok(IndependenceReport {
        beta,
        level,
        rows,
        abs_correlation_decreasing,
        null_band,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationCell {
    pub x: f64,
    pub j: f64,
    pub probability: Estimate,
    pub hits: u64,
    /// `P̂ / (ĉ x e^{-x-α̂j})`, NaN for excluded cells.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationReport {
    pub beta: f64,
    pub c_hat: f64,
    pub alpha_hat: f64,
    pub cells: Vec<DominationCell>,
    pub max_violation_ratio: f64,
    /// Per x: (x, sum over every unit bin `j - x - 1 < M̃ ≤ j - x` covering the
    /// sample, P̂(W̃ ≥ e^{βx}) with SE).
    pub marginals: Vec<(f64, f64, Estimate)>,
}

/// Tabulates `P(W̃_{n,β} ≥ e^{βx}, M̃_n ∈ [j-x-1, j-x])` and fits
/// `c x e^{-x} e^{-αj}` by least squares on the logarithm.
///
/// Cells with fewer than [`tail::MIN_HITS`] hits are tabulated but take no
/// part in the fit or in the violation ratio.
pub fn domination_fit(
    stats: &[TrajectoryStats],
    beta: f64,
    x_grid: &[f64],
    j_grid: &[f64],
) -> Result<DominationReport> {
    let first = stats
        .first()
        .ok_or_else(|| EstimatorError::InvalidParameter("no replicas".into()))?;
    if x_grid.iter().any(|x| *x < 1.0) {
        return Err(EstimatorError::InvalidParameter("x grid must satisfy x ≥ 1".into()));
    }
    let k = first
        .betas
        .iter()
        .position(|b| *b == beta)
        .ok_or_else(|| EstimatorError::InvalidParameter(format!("beta {beta} was not simulated")))?;
    let a_n = brwsim::recentering(first.generations);
    let total = stats.len() as u64;
    let mut cells = Vec::new();
    let mut marginals = Vec::new();
    for &x in x_grid {
        let threshold = (beta * x).exp();
        let mut tail_hits = 0u64;
        let mut cell_hits = vec![0u64; j_grid.len()];
        let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
        for s in stats {
            if s.w_tilde[k] >= threshold {
                tail_hits += 1;
                let m = s.m_n - a_n;
                for (ji, &j) in j_grid.iter().enumerate() {
                    if m >= j - x - 1.0 && m <= j - x {
                        cell_hits[ji] += 1;
                    }
                }
                *bins.entry((m + x).ceil() as i64).or_default() += 1;
            }
        }
        for (ji, &j) in j_grid.iter().enumerate() {
            cells.push(DominationCell {
                x,
                j,
                probability: proportion(cell_hits[ji], total),
                hits: cell_hits[ji],
                ratio: f64::NAN,
            });
        }
        let sum = bins.values().map(|h| proportion(*h, total).value).sum();
        marginals.push((x, sum, proportion(tail_hits, total)));
    }
    // log P - log x + x = log c - α j
    let (js, ys): (Vec<f64>, Vec<f64>) = cells
        .iter()
        .filter(|c| c.hits >= tail::MIN_HITS)
        .map(|c| (c.j, c.probability.value.ln() - c.x.ln() + c.x))
        .unzip();
    let fit = linear_fit(&js, &ys)
        .ok_or_else(|| EstimatorError::InvalidParameter("need populated cells at two distinct j values".into()))?;
    let c_hat = fit.intercept.exp();
    let alpha_hat = -fit.slope;
    let mut max_ratio: f64 = 0.0;
    for c in cells.iter_mut().filter(|c| c.hits >= tail::MIN_HITS) {
        c.ratio = c.probability.value / (c_hat * c.x * (-c.x - alpha_hat * c.j).exp());
        max_ratio = max_ratio.max(c.ratio);
    }
    Ok(DominationReport {
        beta,
        c_hat,
        alpha_hat,
        cells,
        max_violation_ratio: max_ratio,
        marginals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rank_correlation_calibration() {
        let mut rng = SmallRng::seed_from_u64(1);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!((spearman(&xs, &xs) - 1.0).abs() < 1e-12);
        let ys: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!(spearman(&xs, &ys).abs() < 3.0 / 100.0);
    }

    #[test]
    fn laplace_with_zero_theta_is_exact() {
        let law = OffspringLaw::gaussian_binary();
        let sim = SimConfig {
            seed: 4,
            ..SimConfig::default()
        };
        let r = laplace_convergence_test(&law, &[6, 8], &sim, &[2.0], &[0.0], 1.0, 0.0, 500, None).unwrap();
        for row in &r.rows {
            assert_eq!(row.lhs.value, row.rhs.value);
        }
        let r0 = laplace_convergence_test(&law, &[6], &sim, &[2.0], &[0.0], 0.0, 0.0, 500, None).unwrap();
        let stats = simulate_many(&law, &SimConfig { generations: 6, ..sim }, 500, None).unwrap();
        let p = stats.iter().filter(|s| s.z_n > 0.0).count() as f64 / 500.0;
        assert!((r0.rows[0].lhs.value - p).abs() < 1e-12);
    }

    #[test]
    fn domination_marginals_partition_the_tail() {
        let law = OffspringLaw::gaussian_binary();
        let sim = SimConfig {
            generations: 10,
            seed: 2,
            ..SimConfig::default()
        };
        let stats = simulate_many(&law, &sim, 4000, None).unwrap();
        let j_grid: Vec<f64> = (0..=6).map(|j| j as f64).collect();
        let rep = domination_fit(&stats, 2.0, &[1.0, 1.5, 2.0], &j_grid).unwrap();
        for (_, sum, tail) in &rep.marginals {
            assert!((sum - tail.value).abs() <= 1e-12);
        }
        for c in rep.cells.iter().filter(|c| c.hits < tail::MIN_HITS) {
            assert!(c.ratio.is_nan());
        }
        assert!(domination_fit(&stats, 2.0, &[0.5], &j_grid).is_err());
    }

    #[test]
    fn tail_curve_is_monotone_and_starts_at_one() {
        let law = OffspringLaw::gaussian_binary();
        let sim = SimConfig {
            generations: 8,
            seed: 9,
            ..SimConfig::default()
        };
        let xs = [0.0, 0.5, 1.0, 1.5, 2.0];
        let c = tail_curve(&law, &sim, &[2.0], &[50.0], &xs, 300, TailOptions::default(), None).unwrap();
        assert_eq!(c.joint_prob[0].value, 1.0);
        assert!(c.joint_prob.windows(2).all(|w| w[1].value <= w[0].value));
        let small = tail_curve(&law, &sim, &[2.0], &[0.0], &xs, 10, TailOptions::default(), None).unwrap();
        assert!(small.any_insufficient());
    }
}
