//! Finite counting measures on the line and samplers for exponential-intensity
//! Poisson processes decorated by i.i.d. clusters.

use std::fmt;
use std::sync::Arc;

use rand::rngs::SmallRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::brwsim::ClusterSample;
use crate::numerics::{compensated_sum, ks_two_sample, mix_keys, KsResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointProcError {
    #[error("window intersection is empty: ({0}, {1})")]
    EmptyWindow(f64, f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("superposability requires e^-a + e^-b = 1, got a = {a}, b = {b} (sum {sum})")]
    SuperposabilityConstraint { a: f64, b: f64, sum: f64 },
    #[error("decoration bank is empty")]
    EmptyBank,
    #[error("decoration must be a finite point set with minimum 0, got {0:?}")]
    InvalidDecoration(Vec<f64>),
}

pub type Result<T> = std::result::Result<T, PointProcError>;

/// A finite counting measure: sorted atoms valid inside `window`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMeasure {
    atoms: Vec<f64>,
    window: (f64, f64),
}

impl PointMeasure {
    /// Builds a measure, sorting atoms and discarding those outside the window.
    pub fn new(mut atoms: Vec<f64>, window: (f64, f64)) -> Self {
        atoms.retain(|p| *p >= window.0 && *p <= window.1);
        atoms.sort_by(|a, b| a.total_cmp(b));
        PointMeasure { atoms, window }
    }

    /// Empty measure on the whole line.
    pub fn empty() -> Self {
        PointMeasure {
            atoms: Vec::new(),
            window: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Number of atoms in the closed interval `[lo, hi]`.
    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        let start = self.atoms.partition_point(|p| *p < lo);
        let end = self.atoms.partition_point(|p| *p <= hi);
        end.saturating_sub(start)
    }

    /// `T_x μ`: every atom `p` moves to `p - x`, and so does the window.
    pub fn translate(&self, x: f64) -> PointMeasure {
        PointMeasure {
            atoms: self.atoms.iter().map(|p| p - x).collect(),
            window: (self.window.0 - x, self.window.1 - x),
        }
    }

    /// Restriction to `[lo, hi]` intersected with the current window.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<PointMeasure> {
        let w = (self.window.0.max(lo), self.window.1.min(hi));
        if w.0 > w.1 {
            return Err(PointProcError::EmptyWindow(w.0, w.1));
        }
        let start = self.atoms.partition_point(|p| *p < w.0);
        let end = self.atoms.partition_point(|p| *p <= w.1);
        Ok(PointMeasure {
            atoms: self.atoms[start..end].to_vec(),
            window: w,
        })
    }

    /// Sum of two measures on the intersection of their windows.
    pub fn superpose(&self, other: &PointMeasure) -> Result<PointMeasure> {
        let lo = self.window.0.max(other.window.0);
        let hi = self.window.1.min(other.window.1);
        if lo > hi {
            return Err(PointProcError::EmptyWindow(lo, hi));
        }
        let a = self.restrict(lo, hi)?;
        let b = other.restrict(lo, hi)?;
        let mut atoms = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.atoms.len() && j < b.atoms.len() {
            if a.atoms[i] <= b.atoms[j] {
                atoms.push(a.atoms[i]);
                i += 1;
            } else {
                atoms.push(b.atoms[j]);
                j += 1;
            }
        }
        atoms.extend_from_slice(&a.atoms[i..]);
        atoms.extend_from_slice(&b.atoms[j..]);
        Ok(PointMeasure {
            atoms,
            window: (lo, hi),
        })
    }

    /// `∫ e^{-βx} μ(dx)` with compensated summation.
    pub fn laplace(&self, beta: f64) -> f64 {
        compensated_sum(self.atoms.iter().map(|p| (-beta * p).exp()))
    }
}

type UserDecoration = dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync;

/// Source of i.i.d. decorations attached to each Poisson atom.
#[derive(Clone)]
pub enum DecorationSampler {
    DiracZero,
    Empirical(Arc<Vec<ClusterSample>>),
    User(Arc<UserDecoration>),
}

impl fmt::Debug for DecorationSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecorationSampler::DiracZero => write!(f, "DiracZero"),
            DecorationSampler::Empirical(bank) => write!(f, "Empirical({} clusters)", bank.len()),
            DecorationSampler::User(_) => write!(f, "User"),
        }
    }
}

/// Bootstrap decoration sampler drawing uniformly from a bank of clusters.
pub fn empirical_decoration(clusters: Vec<ClusterSample>) -> Result<DecorationSampler> {
    if clusters.is_empty() {
        return Err(PointProcError::EmptyBank);
    }
    Ok(DecorationSampler::Empirical(Arc::new(clusters)))
}

impl DecorationSampler {
    pub fn user<F>(f: F) -> Self
    where
        F: Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync + 'static,
    {
        DecorationSampler::User(Arc::new(f))
    }

    /// Appends one decoration, shifted by `x`, to `out`.
    pub fn sample_shifted<R: RngCore>(&self, x: f64, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        match self {
            DecorationSampler::DiracZero => out.push(x),
            DecorationSampler::Empirical(bank) => {
                let c = &bank[rng.random_range(0..bank.len())];
                out.extend(c.relative_positions.iter().map(|d| x + d));
            }
            DecorationSampler::User(f) => {
                let d = f(rng);
                let min = d.iter().copied().fold(f64::INFINITY, f64::min);
                if d.is_empty() || min != 0.0 || d.iter().any(|v| !v.is_finite()) {
                    return Err(PointProcError::InvalidDecoration(d));
                }
                out.extend(d.iter().map(|v| x + v));
            }
        }
        Ok(())
    }

    /// One decoration anchored at 0.
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.sample_shifted(0.0, rng, &mut out)?;
        out.sort_by(|a, b| a.total_cmp(b));
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DpppMode {
    /// Poisson atoms with intensity `λe^x` on `(-∞, B]`.
    Limit,
    /// Atom at 0 plus Poisson atoms with intensity `e·e^x` on `(0, B]`.
    SeenFromTip,
}

#[derive(Debug, Clone)]
pub struct DpppConfig {
    pub lambda: f64,
    pub window_hi: f64,
    pub decoration: DecorationSampler,
    pub mode: DpppMode,
}

impl DpppConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(PointProcError::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !self.window_hi.is_finite() {
            return Err(PointProcError::InvalidParameter(
                "window upper bound must be finite".into(),
            ));
        }
        if self.mode == DpppMode::SeenFromTip && self.window_hi <= 0.0 {
            return Err(PointProcError::InvalidParameter(format!(
                "tip-anchored sampler needs B > 0, got {}",
                self.window_hi
            )));
        }
        Ok(())
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    let k: f64 = d.sample(rng);
    k as u64
}

fn validate_ppp(lambda: f64, b: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(PointProcError::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !b.is_finite() {
        return Err(PointProcError::InvalidParameter(
            "window upper bound must be finite".into(),
        ));
    }
    Ok(())
}

fn ppp_atoms<R: Rng + ?Sized>(lambda: f64, b: f64, rng: &mut R) -> Vec<f64> {
    let n = poisson_count(lambda * b.exp(), rng);
    (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            b + u.ln()
        })
        .collect()
}

/// Poisson process with intensity `λe^x dx` on `(-∞, B]`.
pub fn sample_ppp_exp<R: Rng + ?Sized>(lambda: f64, b: f64, rng: &mut R) -> Result<PointMeasure> {
    validate_ppp(lambda, b)?;
    Ok(PointMeasure::new(ppp_atoms(lambda, b, rng), (f64::NEG_INFINITY, b)))
}

/// Decorated Poisson process: each Poisson atom `x` is replaced by `x + D`.
pub fn sample_dppp<R: RngCore>(config: &DpppConfig, rng: &mut R) -> Result<PointMeasure> {
    config.validate()?;
    match config.mode {
        DpppMode::SeenFromTip => sample_corollary(config.window_hi, &config.decoration, rng),
        DpppMode::Limit => {
            let base = ppp_atoms(config.lambda, config.window_hi, rng);
            let mut atoms = Vec::with_capacity(base.len());
            for x in base {
                config.decoration.sample_shifted(x, rng, &mut atoms)?;
            }
            Ok(PointMeasure::new(atoms, (f64::NEG_INFINITY, config.window_hi)))
        }
    }
}

/// Process seen from its minimum: an atom at 0 plus, given `e ~ Exp(1)`,
/// Poisson atoms with intensity `e·e^x` on `(0, B]`, all decorated.
pub fn sample_corollary<R: RngCore>(b: f64, decoration: &DecorationSampler, rng: &mut R) -> Result<PointMeasure> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(PointProcError::InvalidParameter(format!(
            "B must be positive and finite, got {b}"
        )));
    }
    let e: f64 = Exp1.sample(rng);
    let span = b.exp_m1();
    let n = poisson_count(e * span, rng);
    let mut atoms = Vec::with_capacity(n as usize + 1);
    decoration.sample_shifted(0.0, rng, &mut atoms)?;
    for _ in 0..n {
        let u: f64 = rng.random();
        let x = (u * span).ln_1p();
        decoration.sample_shifted(x, rng, &mut atoms)?;
    }
    Ok(PointMeasure::new(atoms, (0.0, b)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperposabilityRow {
    pub beta: f64,
    pub ks: KsResult,
    pub mean_superposed: f64,
    pub mean_reference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperposabilityReport {
    pub a: f64,
    pub b: f64,
    pub window: (f64, f64),
    pub replicas: usize,
    pub rows: Vec<SuperposabilityRow>,
}

/// Compares `laplace(μ shifted up by a + μ' shifted up by b, β)` against
/// `laplace(μ'', β)` on a common sub-window with a two-sample KS test.
///
/// Shifting atoms up by `a` multiplies an `e^x` intensity by `e^{-a}`, so the
/// superposition has the original intensity exactly when `e^{-a} + e^{-b} = 1`.
pub fn superposability_test(
    config: &DpppConfig,
    a: f64,
    b: f64,
    betas: &[f64],
    replicas: usize,
    margin: f64,
    seed: u64,
) -> Result<SuperposabilityReport> {
    config.validate()?;
    let sum = (-a).exp() + (-b).exp();
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) || (sum - 1.0).abs() >= 1e-12 {
        return Err(PointProcError::SuperposabilityConstraint { a, b, sum });
    }
    if betas.iter().any(|b| b.is_nan() || *b <= 0.0) {
        return Err(PointProcError::InvalidParameter("betas must be positive".into()));
    }
    let base = match config.mode {
        DpppMode::Limit => (f64::NEG_INFINITY, config.window_hi),
        DpppMode::SeenFromTip => (0.0, config.window_hi),
    };
    let window = (base.0 + a.max(b) + margin, base.1 - margin);
    if window.0 > window.1 {
        return Err(PointProcError::EmptyWindow(window.0, window.1));
    }
    let samples: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = SmallRng::seed_from_u64(mix_keys(seed, r as u64));
            let m1 = sample_dppp(config, &mut rng)?;
            let m2 = sample_dppp(config, &mut rng)?;
            let m3 = sample_dppp(config, &mut rng)?;
            let sup = m1
                .translate(-a)
                .superpose(&m2.translate(-b))?
                .restrict(window.0, window.1)?;
            let reference = m3.restrict(window.0, window.1)?;
            Ok((
                betas.iter().map(|&bt| sup.laplace(bt)).collect(),
                betas.iter().map(|&bt| reference.laplace(bt)).collect(),
            ))
        })
        .collect();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = samples.into_iter().collect::<Result<_>>()?;
    let rows = betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            let xs: Vec<f64> = samples.iter().map(|s| s.0[i]).collect();
            let ys: Vec<f64> = samples.iter().map(|s| s.1[i]).collect();
            SuperposabilityRow {
                beta,
                ks: ks_two_sample(&xs, &ys),
                mean_superposed: xs.iter().sum::<f64>() / xs.len().max(1) as f64,
                mean_reference: ys.iter().sum::<f64>() / ys.len().max(1) as f64,
            }
        })
        .collect();
    Ok(SuperposabilityReport {
        a,
        b,
        window,
        replicas,
        rows,
    })
}
