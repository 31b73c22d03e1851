//! Reproduction laws of the branching random walk.
//!
//! A law describes the point process of child displacements produced by one
//! particle. Every supported law has closed-form moments of the form
//! `E[Σ V^k e^{-θV}]`, which back the log-moment generating function, the
//! boundary-case normalization and the spine step law.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::numerics::RunningStats;

/// Tolerance used when verifying the boundary-case identities from closed forms.
pub const ANALYTIC_TOLERANCE: f64 = 1e-10;
/// Residual tolerance accepted by the normalization solver.
pub const NEWTON_TOLERANCE: f64 = 1e-8;
/// Search box for the scale parameter of the normalizing affine map.
pub const SCALE_BRACKET: (f64, f64) = (1e-3, 1e3);
/// Minimum sample count for [`check_boundary`].
pub const MIN_BOUNDARY_SAMPLES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffspringError {
    #[error("invalid law parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "law is not supercritical: P(N>=1) = {p_nonempty}, E[N] = {mean_children} (need P(N>=1) > 0 and E[N] > 1)"
    )]
    NotSupercritical { mean_children: f64, p_nonempty: f64 },
    #[error("theta = {theta} is outside the convergence domain of the log-mgf")]
    Domain { theta: f64 },
    #[error("no boundary-case solution found with scale in ({}, {}); last iterate a = {last_scale}, b = {last_shift}, residual = {residual:e}", .bracket.0, .bracket.1)]
    NormalizationFailed {
        bracket: (f64, f64),
        last_scale: f64,
        last_shift: f64,
        residual: f64,
    },
    #[error("check_boundary needs at least {MIN_BOUNDARY_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
}

pub type Result<T> = std::result::Result<T, OffspringError>;

/// Which family a law belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    GaussianBinary,
    LatticeBinary,
    AffineTransformed,
    UserConfigured,
}

/// Distribution of a single child's displacement.
#[derive(Debug, Clone, PartialEq)]
pub enum Displacement {
    Normal { mean: f64, sd: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

/// Distribution of the number of children.
#[derive(Debug, Clone, PartialEq)]
pub enum ChildCount {
    Fixed(usize),
    /// `probs[k] = P(N = k)`.
    Distribution(Vec<f64>),
}

/// One possible offspring configuration of a scenario law.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub prob: f64,
    pub displacements: Vec<f64>,
}

/// The reproduction point process, before any validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Reproduction {
    /// A random number of children with i.i.d. displacements (product form).
    Iid {
        count: ChildCount,
        displacement: Displacement,
    },
    /// A finite list of joint offspring configurations.
    Scenarios(Vec<Scenario>),
}

/// Affine map `V ↦ scale · V + shift` applied to every displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineMap {
    pub scale: f64,
    pub shift: f64,
}

/// A draw of the reproduction point process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffspringSample {
    pub displacements: Vec<f64>,
}

fn sample_index<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn check_probabilities(what: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(OffspringError::InvalidParameter(format!("{what}: empty")));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(OffspringError::InvalidParameter(format!(
            "{what}: probabilities must lie in [0, 1]"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(OffspringError::InvalidParameter(format!(
            "{what}: probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

impl Displacement {
    fn validate(&self) -> Result<()> {
        match self {
            Displacement::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || *sd <= 0.0 {
                    return Err(OffspringError::InvalidParameter(format!(
                        "normal displacement needs finite mean and positive variance (mean={mean}, sd={sd})"
                    )));
                }
            }
            Displacement::Discrete { values, probs } => {
                if values.len() != probs.len() {
                    return Err(OffspringError::InvalidParameter(
                        "discrete displacement: values and probs differ in length".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(OffspringError::InvalidParameter(
                        "discrete displacement: non-finite value".into(),
                    ));
                }
                check_probabilities("discrete displacement", probs)?;
            }
        }
        Ok(())
    }

    /// `E[Y^k e^{-θY}]` for k ∈ {0, 1, 2}.
    fn tilted_moment(&self, theta: f64, k: u32) -> f64 {
        match self {
            Displacement::Normal { mean, sd } => {
                let var = sd * sd;
                let scale = (-theta * mean + 0.5 * theta * theta * var).exp();
                let m = mean - theta * var;
                scale
                    * match k {
                        0 => 1.0,
                        1 => m,
                        _ => m * m + var,
                    }
            }
            Displacement::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| p * v.powi(k as i32) * (-theta * v).exp())
                .sum(),
        }
    }

    fn map(&self, f: AffineMap) -> Displacement {
        match self {
            Displacement::Normal { mean, sd } => Displacement::Normal {
                mean: f.scale * mean + f.shift,
                sd: f.scale * sd,
            },
            Displacement::Discrete { values, probs } => Displacement::Discrete {
                values: values.iter().map(|v| f.scale * v + f.shift).collect(),
                probs: probs.clone(),
            },
        }
    }
}

impl ChildCount {
    fn validate(&self) -> Result<()> {
        if let ChildCount::Distribution(p) = self {
            check_probabilities("child count", p)?;
        }
        Ok(())
    }

    fn mean(&self) -> f64 {
        match self {
            ChildCount::Fixed(k) => *k as f64,
            ChildCount::Distribution(p) => p.iter().enumerate().map(|(k, q)| k as f64 * q).sum(),
        }
    }

    fn p_nonempty(&self) -> f64 {
        match self {
            ChildCount::Fixed(k) => {
                if *k > 0 {
                    1.0
                } else {
                    0.0
                }
            }
            ChildCount::Distribution(p) => 1.0 - p[0],
        }
    }
}

impl Reproduction {
    fn validate(&self) -> Result<()> {
        match self {
            Reproduction::Iid { count, displacement } => {
                count.validate()?;
                displacement.validate()
            }
            Reproduction::Scenarios(list) => {
                let probs: Vec<f64> = list.iter().map(|s| s.prob).collect();
                check_probabilities("scenarios", &probs)?;
                if list.iter().flat_map(|s| &s.displacements).any(|v| !v.is_finite()) {
                    return Err(OffspringError::InvalidParameter(
                        "scenario displacement is not finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `E[Σ V^k e^{-θV}]` over the children of one particle.
    pub fn moment(&self, theta: f64, k: u32) -> f64 {
        match self {
            Reproduction::Iid { count, displacement } => count.mean() * displacement.tilted_moment(theta, k),
            Reproduction::Scenarios(list) => list
                .iter()
                .map(|s| {
                    s.prob
                        * s.displacements
                            .iter()
                            .map(|v| v.powi(k as i32) * (-theta * v).exp())
                            .sum::<f64>()
                })
                .sum(),
        }
    }

    pub fn mean_children(&self) -> f64 {
        match self {
            Reproduction::Iid { count, .. } => count.mean(),
            Reproduction::Scenarios(list) => list.iter().map(|s| s.prob * s.displacements.len() as f64).sum(),
        }
    }

    fn p_nonempty(&self) -> f64 {
        match self {
            Reproduction::Iid { count, .. } => count.p_nonempty(),
            Reproduction::Scenarios(list) => list
                .iter()
                .filter(|s| !s.displacements.is_empty())
                .map(|s| s.prob)
                .sum(),
        }
    }

    fn map(&self, f: AffineMap) -> Reproduction {
        match self {
            Reproduction::Iid { count, displacement } => Reproduction::Iid {
                count: count.clone(),
                displacement: displacement.map(f),
            },
            Reproduction::Scenarios(list) => Reproduction::Scenarios(
                list.iter()
                    .map(|s| Scenario {
                        prob: s.prob,
                        displacements: s.displacements.iter().map(|v| f.scale * v + f.shift).collect(),
                    })
                    .collect(),
            ),
        }
    }

    /// Draws one offspring configuration without any validity checks.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> OffspringSample {
        let sampler = Sampler::new(self);
        let mut out = Vec::new();
        sampler.sample_into(self, rng, &mut out);
        OffspringSample { displacements: out }
    }
}

/// Precomputed inverse-CDF tables.
#[derive(Debug, Clone, PartialEq)]
struct Sampler {
    count_cdf: Vec<f64>,
    value_cdf: Vec<f64>,
}

impl Sampler {
    fn new(rep: &Reproduction) -> Self {
        match rep {
            Reproduction::Iid { count, displacement } => Sampler {
                count_cdf: match count {
                    ChildCount::Fixed(_) => Vec::new(),
                    ChildCount::Distribution(p) => cumulative(p),
                },
                value_cdf: match displacement {
                    Displacement::Normal { .. } => Vec::new(),
                    Displacement::Discrete { probs, .. } => cumulative(probs),
                },
            },
            Reproduction::Scenarios(list) => Sampler {
                count_cdf: cumulative(&list.iter().map(|s| s.prob).collect::<Vec<_>>()),
                value_cdf: Vec::new(),
            },
        }
    }

    #[inline]
    fn sample_into<R: Rng + ?Sized>(&self, rep: &Reproduction, rng: &mut R, out: &mut Vec<f64>) {
        match rep {
            Reproduction::Iid { count, displacement } => {
                let n = match count {
                    ChildCount::Fixed(k) => *k,
                    ChildCount::Distribution(_) => sample_index(&self.count_cdf, rng),
                };
                match displacement {
                    Displacement::Normal { mean, sd } => {
                        for _ in 0..n {
                            let z: f64 = StandardNormal.sample(rng);
                            out.push(mean + sd * z);
                        }
                    }
                    Displacement::Discrete { values, .. } => {
                        for _ in 0..n {
                            out.push(values[sample_index(&self.value_cdf, rng)]);
                        }
                    }
                }
            }
            Reproduction::Scenarios(list) => {
                let i = sample_index(&self.count_cdf, rng);
                out.extend_from_slice(&list[i].displacements);
            }
        }
    }
}

/// A validated, supercritical reproduction law.
///
/// Laws are immutable after construction and may be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    kind: LawKind,
    base_kind: LawKind,
    reproduction: Reproduction,
    affine: Option<AffineMap>,
    boundary_normalized: bool,
    sampler: Sampler,
}

impl OffspringLaw {
    fn build(kind: LawKind, reproduction: Reproduction) -> Result<Self> {
        reproduction.validate()?;
        let mean_children = reproduction.mean_children();
        let p_nonempty = reproduction.p_nonempty();
        if !(mean_children > 1.0 && p_nonempty > 0.0) {
            return Err(OffspringError::NotSupercritical {
                mean_children,
                p_nonempty,
            });
        }
        let sampler = Sampler::new(&reproduction);
        let mut law = OffspringLaw {
            kind,
            base_kind: kind,
            reproduction,
            affine: None,
            boundary_normalized: false,
            sampler,
        };
        law.boundary_normalized = law.satisfies_boundary(ANALYTIC_TOLERANCE);
        Ok(law)
    }

    /// Two children with i.i.d. `Normal(2 log 2, 2 log 2)` displacements.
    pub fn gaussian_binary() -> Self {
        let v = 2.0 * std::f64::consts::LN_2;
        Self::build(
            LawKind::GaussianBinary,
            Reproduction::Iid {
                count: ChildCount::Fixed(2),
                displacement: Displacement::Normal { mean: v, sd: v.sqrt() },
            },
        )
        .expect("built-in gaussian law is valid")
    }

    /// Two children, each independently at `+h` with probability `r` and at
    /// `-h` otherwise, with `h = log(2+√3)` and `r = (2+√3)/4`.
    pub fn lattice_binary() -> Self {
        let s = 2.0 + 3f64.sqrt();
        Self::lattice_binary_with(s.ln(), s / 4.0).expect("built-in lattice law is valid")
    }

    /// Two-child lattice law with step `h` and up-probability `r`.
    pub fn lattice_binary_with(h: f64, r: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(OffspringError::InvalidParameter(format!(
                "lattice step must be positive, got {h}"
            )));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(OffspringError::InvalidParameter(format!(
                "lattice probability must lie in [0, 1], got {r}"
            )));
        }
        Self::build(
            LawKind::LatticeBinary,
            Reproduction::Iid {
                count: ChildCount::Fixed(2),
                displacement: Displacement::Discrete {
                    values: vec![h, -h],
                    probs: vec![r, 1.0 - r],
                },
            },
        )
    }

    /// A two-child law with i.i.d. normal displacements of the given mean and variance.
    pub fn binary_normal(mean: f64, variance: f64) -> Result<Self> {
        if variance.is_nan() || variance <= 0.0 {
            return Err(OffspringError::InvalidParameter(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Self::user_configured(Reproduction::Iid {
            count: ChildCount::Fixed(2),
            displacement: Displacement::Normal {
                mean,
                sd: variance.sqrt(),
            },
        })
    }

    /// Any validated reproduction law.
    pub fn user_configured(reproduction: Reproduction) -> Result<Self> {
        Self::build(LawKind::UserConfigured, reproduction)
    }

    /// The law of `scale · V + shift`.
    pub fn affine_transform(&self, map: AffineMap) -> Result<Self> {
        if !(map.scale > 0.0 && map.scale.is_finite() && map.shift.is_finite()) {
            return Err(OffspringError::InvalidParameter(format!(
                "affine map needs positive finite scale and finite shift, got ({}, {})",
                map.scale, map.shift
            )));
        }
        let mut law = Self::build(LawKind::AffineTransformed, self.reproduction.map(map))?;
        law.base_kind = self.base_kind;
        law.affine = Some(map);
        Ok(law)
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    /// Kind of the law this one was derived from (itself unless transformed).
    pub fn base_kind(&self) -> LawKind {
        self.base_kind
    }

    pub fn reproduction(&self) -> &Reproduction {
        &self.reproduction
    }

    /// The affine map recorded by the last transformation, if any.
    pub fn affine(&self) -> Option<AffineMap> {
        self.affine
    }

    /// Every supported law has closed-form moments.
    pub fn analytic_moments_available(&self) -> bool {
        true
    }

    pub fn is_boundary_normalized(&self) -> bool {
        self.boundary_normalized
    }

    /// Whether displacements live on a lattice (the limit theorems assume they don't).
    pub fn is_lattice(&self) -> bool {
        match &self.reproduction {
            Reproduction::Iid { displacement, .. } => {
                matches!(displacement, Displacement::Discrete { .. })
            }
            Reproduction::Scenarios(_) => true,
        }
    }

    /// Product-form laws have a random child count and i.i.d. displacements.
    pub fn is_product_form(&self) -> bool {
        matches!(self.reproduction, Reproduction::Iid { .. })
    }

    /// Deterministic child count, if any.
    pub fn fixed_child_count(&self) -> Option<usize> {
        match &self.reproduction {
            Reproduction::Iid {
                count: ChildCount::Fixed(k),
                ..
            } => Some(*k),
            _ => None,
        }
    }

    pub fn mean_children(&self) -> f64 {
        self.reproduction.mean_children()
    }

    /// Named parameters for reporting.
    pub fn params(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        match &self.reproduction {
            Reproduction::Iid { count, displacement } => {
                match count {
                    ChildCount::Fixed(k) => out.push(("children".into(), *k as f64)),
                    ChildCount::Distribution(p) => {
                        for (k, q) in p.iter().enumerate() {
                            out.push((format!("p_children_{k}"), *q));
                        }
                    }
                }
                match displacement {
                    Displacement::Normal { mean, sd } => {
                        out.push(("mean".into(), *mean));
                        out.push(("variance".into(), sd * sd));
                    }
                    Displacement::Discrete { values, probs } => {
                        for (i, (v, p)) in values.iter().zip(probs).enumerate() {
                            out.push((format!("value_{i}"), *v));
                            out.push((format!("prob_{i}"), *p));
                        }
                    }
                }
            }
            Reproduction::Scenarios(list) => {
                out.push(("scenarios".into(), list.len() as f64));
            }
        }
        if let Some(a) = self.affine {
            out.push(("affine_scale".into(), a.scale));
            out.push(("affine_shift".into(), a.shift));
        }
        out
    }

    /// Appends one draw of the reproduction point process to `out`.
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        self.sampler.sample_into(&self.reproduction, rng, out);
    }

    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> OffspringSample {
        let mut out = Vec::with_capacity(self.fixed_child_count().unwrap_or(4));
        self.sample_into(rng, &mut out);
        OffspringSample { displacements: out }
    }

    /// `E[Σ V^k e^{-θV}]`.
    pub fn moment(&self, theta: f64, k: u32) -> f64 {
        self.reproduction.moment(theta, k)
    }

    /// `φ(θ) = log E[Σ_{|z|=1} e^{-θ V(z)}]`.
    pub fn analytic_log_mgf(&self, theta: f64) -> Result<f64> {
        if !theta.is_finite() {
            return Err(OffspringError::Domain { theta });
        }
        let m = self.moment(theta, 0);
        if !(m.is_finite() && m > 0.0) {
            return Err(OffspringError::Domain { theta });
        }
        Ok(m.ln())
    }

    /// `φ'(θ) = -E[Σ V e^{-θV}] / E[Σ e^{-θV}]`.
    pub fn log_mgf_derivative(&self, theta: f64) -> Result<f64> {
        let m0 = self.moment(theta, 0);
        let m1 = self.moment(theta, 1);
        if !(theta.is_finite() && m0.is_finite() && m0 > 0.0 && m1.is_finite()) {
            return Err(OffspringError::Domain { theta });
        }
        Ok(-m1 / m0)
    }

    fn satisfies_boundary(&self, tol: f64) -> bool {
        (self.moment(1.0, 0) - 1.0).abs() < tol && self.moment(1.0, 1).abs() < tol
    }

    /// Finds `V ↦ aV + b` (a > 0) such that the transformed law satisfies
    /// `φ(1) = 0` and `φ'(1) = 0`.
    ///
    /// Solves `φ_raw(a) - b = 0`, `a φ_raw'(a) - b = 0` by damped Newton with a
    /// finite-difference Jacobian.
    pub fn normalize_to_boundary(&self) -> Result<OffspringLaw> {
        let residual = |a: f64, b: f64| -> Option<[f64; 2]> {
            let phi = self.analytic_log_mgf(a).ok()?;
            let dphi = self.log_mgf_derivative(a).ok()?;
            Some([phi - b, a * dphi - b])
        };
        let norm = |r: &[f64; 2]| r[0].abs().max(r[1].abs());
        let fail = |a: f64, b: f64, res: f64| OffspringError::NormalizationFailed {
            bracket: SCALE_BRACKET,
            last_scale: a,
            last_shift: b,
            residual: res,
        };

        let mut a = 1.0;
        let mut b = self.analytic_log_mgf(1.0)?;
        let mut r = residual(a, b).ok_or_else(|| fail(a, b, f64::NAN))?;
        for _ in 0..200 {
            if norm(&r) < 1e-13 {
                break;
            }
            let h = 1e-6 * a.max(1e-3);
            let rp = residual(a + h, b).ok_or_else(|| fail(a, b, norm(&r)))?;
            let rm = residual(a - h, b).ok_or_else(|| fail(a, b, norm(&r)))?;
            // columns: d/da (finite difference), d/db = (-1, -1) exactly
            let j11 = (rp[0] - rm[0]) / (2.0 * h);
            let j21 = (rp[1] - rm[1]) / (2.0 * h);
            // [j11 -1; j21 -1] [da; db] = -r
            let det = -j11 + j21;
            if det.abs() < 1e-14 {
                return Err(fail(a, b, norm(&r)));
            }
            let da = (r[0] - r[1]) / det;
            let db = j11 * da + r[0];
            let mut step = 1.0;
            let current = norm(&r);
            let mut accepted = false;
            while step > 1e-6 {
                let na = a + step * da;
                let nb = b + step * db;
                if na > SCALE_BRACKET.0 && na < SCALE_BRACKET.1 {
                    if let Some(nr) = residual(na, nb) {
                        if norm(&nr) < current {
                            a = na;
                            b = nb;
                            r = nr;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm(&r) >= NEWTON_TOLERANCE {
            return Err(fail(a, b, norm(&r)));
        }
        self.affine_transform(AffineMap { scale: a, shift: b })
    }
}

/// Monte Carlo moments of the reproduction law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryReport {
    pub mean_children: f64,
    pub mean_children_se: f64,
    /// `E[Σ e^{-V}]`
    pub mean_exp_weight: f64,
    pub mean_exp_weight_se: f64,
    /// `E[Σ V e^{-V}]`
    pub mean_tilted_position: f64,
    pub mean_tilted_position_se: f64,
    /// `E[Σ V² e^{-V}]`
    pub second_tilted_moment: f64,
    pub second_tilted_moment_se: f64,
    /// `E[X (log₊(X + X̃))³]` with `X = Σ e^{-V}`, `X̃ = Σ V₊ e^{-V}`.
    pub log_moment: f64,
    pub log_moment_se: f64,
    pub sample_count: usize,
}

/// Estimates the boundary-case and integrability moments by sampling.
pub fn check_boundary<R: Rng + ?Sized>(law: &OffspringLaw, n_samples: usize, rng: &mut R) -> Result<BoundaryReport> {
    if n_samples < MIN_BOUNDARY_SAMPLES {
        return Err(OffspringError::TooFewSamples(n_samples));
    }
    let mut children = RunningStats::new();
    let mut w = RunningStats::new();
    let mut tilted = RunningStats::new();
    let mut second = RunningStats::new();
    let mut logm = RunningStats::new();
    let mut buf = Vec::new();
    for _ in 0..n_samples {
        buf.clear();
        law.sample_into(rng, &mut buf);
        let mut x = 0.0;
        let mut xt = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &v in &buf {
            let e = (-v).exp();
            x += e;
            xt += v.max(0.0) * e;
            s1 += v * e;
            s2 += v * v * e;
        }
        let lp = (x + xt).ln().max(0.0);
        children.push(buf.len() as f64);
        w.push(x);
        tilted.push(s1);
        second.push(s2);
        logm.push(if x > 0.0 { x * lp * lp * lp } else { 0.0 });
    }
    Ok(BoundaryReport {
        mean_children: children.mean(),
        mean_children_se: children.std_error(),
        mean_exp_weight: w.mean(),
        mean_exp_weight_se: w.std_error(),
        mean_tilted_position: tilted.mean(),
        mean_tilted_position_se: tilted.std_error(),
        second_tilted_moment: second.mean(),
        second_tilted_moment_se: second.std_error(),
        log_moment: logm.mean(),
        log_moment_se: logm.std_error(),
        sample_count: n_samples,
    })
}
