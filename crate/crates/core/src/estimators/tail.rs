//! Joint tail probabilities of the normalized partition functions and the
//! plateau estimators built on them.

use serde::Serialize;

use super::{EstimatorError, Result};
use crate::brwsim::{recentering, TrajectoryStats};
use crate::numerics::{linear_fit, proportion, Estimate, LinearFit};

/// A grid point needs this many surviving replicas...
pub const MIN_SURVIVORS: usize = 100;
/// ...and this many replicas inside the event.
pub const MIN_HITS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TailOptions {
    /// Use the killed partition functions and killed minimum.
    pub killed: bool,
    /// Also estimate the event intersected with `{M̃ < -(x - Δ)}`.
    pub min_event_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub x_grid: Vec<f64>,
    /// `P(∩_j {W̃_{n,β_j} ≥ e^{β_j (x - δ_j)}})` per grid point.
    pub joint_prob: Vec<Estimate>,
    pub joint_hits: Vec<u64>,
    /// Δ and the per-x probabilities of the joint event with the minimum event.
    pub with_min_event: Option<(f64, Vec<Estimate>)>,
    pub with_min_hits: Vec<u64>,
    pub insufficient: Vec<bool>,
    pub n: usize,
    pub replicas: usize,
    pub survivors: usize,
    pub killed: bool,
}

impl TailCurve {
    pub fn any_insufficient(&self) -> bool {
        self.insufficient.iter().any(|b| *b)
    }

    /// Probabilities used by the plateau estimators: the minimum-event curve
    /// when present, the plain joint curve otherwise.
    fn primary(&self) -> (&[Estimate], &[u64]) {
        match &self.with_min_event {
            Some((_, p)) => (p, &self.with_min_hits),
            None => (&self.joint_prob, &self.joint_hits),
        }
    }
}

/// Evaluates the tail events on every grid point from one pool of replicas.
pub fn tail_curve_from_stats(
    stats: &[TrajectoryStats],
    betas: &[f64],
    deltas: &[f64],
    x_grid: &[f64],
    options: TailOptions,
) -> Result<TailCurve> {
    let first = stats
        .first()
        .ok_or_else(|| EstimatorError::InvalidParameter("no replicas".into()))?;
    if betas.is_empty() || betas.len() != deltas.len() {
        return Err(EstimatorError::InvalidParameter(
            "betas and deltas must be nonempty and of equal length".into(),
        ));
    }
    if let Some(b) = betas.iter().find(|b| b.is_nan() || **b <= 1.0) {
        return Err(EstimatorError::InvalidParameter(format!("beta must exceed 1, got {b}")));
    }
    if x_grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(EstimatorError::InvalidParameter(
            "x grid must be finite and nonnegative".into(),
        ));
    }
    let n = first.generations;
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
    if options.killed && first.w_kill_tilde.is_empty() {
        return Err(EstimatorError::InvalidParameter(
            "killed curve requested but replicas carry no killed statistics".into(),
        ));
    }
    let a_n = recentering(n);
    let survivors = stats
        .iter()
        .filter(|s| if options.killed { s.survived_kill } else { s.survived })
        .count();
    let total = stats.len() as u64;

    let mut joint_hits = vec![0u64; x_grid.len()];
    let mut min_hits = vec![0u64; x_grid.len()];
    for s in stats {
        let (w, m) = if options.killed {
            (&s.w_kill_tilde, s.m_kill)
        } else {
            (&s.w_tilde, s.m_n)
        };
        let m_tilde = m - a_n;
        for (xi, &x) in x_grid.iter().enumerate() {
            let joint = idx
                .iter()
                .zip(betas)
                .zip(deltas)
                .all(|((&k, &b), &d)| w[k] >= (b * (x - d)).exp());
            if joint {
                joint_hits[xi] += 1;
                if let Some(dd) = options.min_event_delta {
                    if m_tilde < -(x - dd) {
                        min_hits[xi] += 1;
                    }
                }
            }
        }
    }
    let joint_prob = joint_hits.iter().map(|&h| proportion(h, total)).collect();
    let with_min_event = options
        .min_event_delta
        .map(|d| (d, min_hits.iter().map(|&h| proportion(h, total)).collect()));
    let relevant = if options.min_event_delta.is_some() {
        &min_hits
    } else {
        &joint_hits
    };
    let insufficient = relevant
        .iter()
        .map(|&h| survivors < MIN_SURVIVORS || h < MIN_HITS)
        .collect();
    Ok(TailCurve {
        betas: betas.to_vec(),
        deltas: deltas.to_vec(),
        x_grid: x_grid.to_vec(),
        joint_prob,
        joint_hits,
        with_min_event,
        with_min_hits: if options.min_event_delta.is_some() {
            min_hits
        } else {
            Vec::new()
        },
        insufficient,
        n,
        replicas: stats.len(),
        survivors,
        killed: options.killed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauEstimate {
    pub value: f64,
    pub plateau_range: (f64, f64),
    pub se: f64,
    pub points: usize,
}

/// Alias kept for the free tail constant.
pub type RhoEstimate = PlateauEstimate;

/// Normalized points `(x, value, se)` usable for plateau detection.
fn normalized_points(curve: &TailCurve, with_x_factor: bool) -> Vec<(f64, f64, f64)> {
    let (probs, hits) = curve.primary();
    curve
        .x_grid
        .iter()
        .zip(probs)
        .zip(hits)
        .zip(&curve.insufficient)
        .filter(|(((x, _), h), insuff)| !**insuff && **h > 0 && (!with_x_factor || **x > 0.0))
        .map(|(((&x, p), _), _)| {
            let f = if with_x_factor { x.exp() / x } else { x.exp() };
            (x, f * p.value, f * p.se)
        })
        .collect()
}

/// Widest contiguous run of points whose values are pairwise within two
/// pooled standard errors; ties go to the run starting at the smallest x.
pub fn detect_plateau(points: &[(f64, f64, f64)]) -> Option<(usize, usize)> {
    let compatible =
        |a: &(f64, f64, f64), b: &(f64, f64, f64)| (a.1 - b.1).abs() <= 2.0 * (a.2 * a.2 + b.2 * b.2).sqrt();
    let mut best: Option<(usize, usize)> = None;
    for i in 0..points.len() {
        let mut j = i;
        while j + 1 < points.len() && (i..=j).all(|k| compatible(&points[k], &points[j + 1])) {
            j += 1;
        }
        if best.is_none_or(|(bi, bj)| j - i > bj - bi) {
            best = Some((i, j));
        }
    }
    best
}

fn plateau_estimate(points: &[(f64, f64, f64)], range: Option<(f64, f64)>) -> Result<PlateauEstimate> {
    if points.len() < 4 && range.is_none() {
        return Err(EstimatorError::NoPlateau(format!(
            "only {} usable grid points (need 4)",
            points.len()
        )));
    }
    let chosen: Vec<&(f64, f64, f64)> = match range {
        Some((lo, hi)) => points
            .iter()
            .filter(|p| p.0 >= lo - 1e-12 && p.0 <= hi + 1e-12)
            .collect(),
        None => {
            let (i, j) = detect_plateau(points).expect("nonempty");
            points[i..=j].iter().collect()
        }
    };
    if chosen.len() < 3 {
        return Err(EstimatorError::NoPlateau(format!(
            "widest plateau has {} points (need 3); increase n or replicas",
            chosen.len()
        )));
    }
    let k = chosen.len() as f64;
    Ok(PlateauEstimate {
        value: chosen.iter().map(|p| p.1).sum::<f64>() / k,
        se: chosen.iter().map(|p| p.2).sum::<f64>() / k,
        plateau_range: (chosen[0].0, chosen[chosen.len() - 1].0),
        points: chosen.len(),
    })
}

/// Plateau mean of `(e^x / x) P̂(x)`.
pub fn rho_estimate(curve: &TailCurve) -> Result<RhoEstimate> {
    plateau_estimate(&normalized_points(curve, true), None)
}

/// Like [`rho_estimate`] on a prescribed x-range instead of a detected plateau.
pub fn rho_estimate_on(curve: &TailCurve, range: (f64, f64)) -> Result<RhoEstimate> {
    plateau_estimate(&normalized_points(curve, true), Some(range))
}

/// Plateau mean of `e^x P̂(x)` on a killed curve with the minimum event.
pub fn chi_estimate(curve: &TailCurve) -> Result<PlateauEstimate> {
    check_chi_curve(curve)?;
    plateau_estimate(&normalized_points(curve, false), None)
}

pub fn chi_estimate_on(curve: &TailCurve, range: (f64, f64)) -> Result<PlateauEstimate> {
    check_chi_curve(curve)?;
    plateau_estimate(&normalized_points(curve, false), Some(range))
}

fn check_chi_curve(curve: &TailCurve) -> Result<()> {
    if !curve.killed || curve.with_min_event.is_none() {
        return Err(EstimatorError::InvalidParameter(
            "killed tail constant needs a killed curve with a minimum event".into(),
        ));
    }
    Ok(())
}

/// The normalized points `(x, e^x P̂ / x or e^x P̂, se)` of a curve.
pub fn normalized_curve(curve: &TailCurve, with_x_factor: bool) -> Vec<(f64, f64, f64)> {
    normalized_points(curve, with_x_factor)
}

/// Least-squares slope of `log(P̂(x)/x)` against `x` on `[lo, hi]`.
pub fn tail_slope(curve: &TailCurve, range: (f64, f64)) -> Option<LinearFit> {
    let (probs, hits) = curve.primary();
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .x_grid
        .iter()
        .zip(probs)
        .zip(hits)
        .filter(|((x, _), h)| **x > 0.0 && **h > 0 && **x >= range.0 - 1e-12 && **x <= range.1 + 1e-12)
        .map(|((&x, p), _)| (x, (p.value / x).ln()))
        .unzip();
    linear_fit(&xs, &ys)
}

/// Fits `log v ≈ log c + min δ` over a family of estimates and returns `c`
/// together with the largest ratio `v / (c e^{min δ})`.
pub fn fit_min_delta_bound(family: &[(Vec<f64>, f64)]) -> (f64, f64) {
    let ratios: Vec<f64> = family
        .iter()
        .map(|(d, v)| v / d.iter().copied().fold(f64::INFINITY, f64::min).exp())
        .collect();
    let c = ratios.iter().copied().fold(0.0, f64::max);
    let worst = ratios.iter().map(|r| r / c).fold(0.0, f64::max);
    (c, worst)
}
