//! Exhaustive enumeration of small trees with finitely supported displacements.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{EstimatorError, Result};
use crate::numerics::CompensatedSum;
use crate::offspring::{ChildCount, Displacement, OffspringLaw, Reproduction};

pub const MAX_OUTCOMES: u64 = 1_000_000;
const MIN_MERGE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    /// Keys `W_beta=<β>`, `Z`, `W_additive`.
    pub exact_expectations: BTreeMap<String, f64>,
    /// `(m, P(M_n ≤ m))` at every attainable value of the minimum.
    pub exact_min_cdf: Vec<(f64, f64)>,
    pub outcome_count: u64,
    pub total_probability: f64,
}

impl OracleResult {
    pub fn expectation(&self, key: &str) -> Option<f64> {
        self.exact_expectations.get(key).copied()
    }
}

/// Key under which `E[W_{n,β}]` is stored.
pub fn w_key(beta: f64) -> String {
    format!("W_beta={beta}")
}

struct Acc {
    w: Vec<CompensatedSum>,
    z: CompensatedSum,
    additive: CompensatedSum,
    minima: Vec<(f64, f64)>,
    total: CompensatedSum,
    outcomes: u64,
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    gen: usize,
    n: usize,
    k: usize,
    values: &[f64],
    probs: &[f64],
    betas: &[f64],
    positions: &[f64],
    prob: f64,
    acc: &mut Acc,
) {
    if gen == n {
        acc.outcomes += 1;
        acc.total.add(prob);
        for (s, &b) in acc.w.iter_mut().zip(betas) {
            s.add(prob * positions.iter().map(|v| (-b * v).exp()).sum::<f64>());
        }
        acc.z.add(prob * positions.iter().map(|v| v * (-v).exp()).sum::<f64>());
        acc.additive
            .add(prob * positions.iter().map(|v| (-v).exp()).sum::<f64>());
        let m = positions.iter().copied().fold(f64::INFINITY, f64::min);
        acc.minima.push((m, prob));
        return;
    }
    let slots = positions.len() * k;
    let s = values.len();
    let mut digits = vec![0usize; slots];
    let mut next = vec![0.0; slots];
    loop {
        let mut p = prob;
        for (slot, &d) in digits.iter().enumerate() {
            next[slot] = positions[slot / k] + values[d];
            p *= probs[d];
        }
        recurse(gen + 1, n, k, values, probs, betas, &next, p, acc);
        let mut i = 0;
        loop {
            if i == slots {
                return;
            }
            digits[i] += 1;
            if digits[i] < s {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Enumerates every displacement assignment of an `n`-generation tree.
pub fn oracle_enumerate(law: &OffspringLaw, n: usize, betas: &[f64]) -> Result<OracleResult> {
    let (k, values, probs) = match law.reproduction() {
        Reproduction::Iid {
            count: ChildCount::Fixed(k),
            displacement: Displacement::Discrete { values, probs },
        } => (*k, values.clone(), probs.clone()),
        _ => {
            return Err(EstimatorError::InvalidParameter(
                "enumeration needs a fixed child count and finitely supported displacements".into(),
            ))
        }
    };
    // outcomes = s^(k + k^2 + ... + k^n)
    let mut slots: u64 = 0;
    let mut layer: u64 = 1;
    for _ in 0..n {
        layer = layer.saturating_mul(k as u64);
        slots = slots.saturating_add(layer);
    }
    let count = u32::try_from(slots)
        .ok()
        .and_then(|e| (values.len() as u64).checked_pow(e))
        .filter(|c| *c <= MAX_OUTCOMES)
        .ok_or(EstimatorError::OutcomeSpaceTooLarge { limit: MAX_OUTCOMES })?;

    let mut acc = Acc {
        w: vec![CompensatedSum::new(); betas.len()],
        z: CompensatedSum::new(),
        additive: CompensatedSum::new(),
        minima: Vec::with_capacity(count as usize),
        total: CompensatedSum::new(),
        outcomes: 0,
    };
    recurse(0, n, k, &values, &probs, betas, &[0.0], 1.0, &mut acc);

    let mut exact = BTreeMap::new();
    for (s, &b) in acc.w.iter().zip(betas) {
        exact.insert(w_key(b), s.value());
    }
    exact.insert("Z".to_string(), acc.z.value());
    exact.insert("W_additive".to_string(), acc.additive.value());

    acc.minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    let mut running = CompensatedSum::new();
    for (m, p) in acc.minima {
        running.add(p);
        match cdf.last_mut() {
            Some(last) if (m - last.0).abs() <= MIN_MERGE * (1.0 + m.abs()) => last.1 = running.value(),
            _ => cdf.push((m, running.value())),
        }
    }
    Ok(OracleResult {
        exact_expectations: exact,
        exact_min_cdf: cdf,
        outcome_count: acc.outcomes,
        total_probability: acc.total.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_consts() -> (f64, f64) {
        let s = 2.0 + 3f64.sqrt();
        (s.ln(), s / 4.0)
    }

    #[test]
    fn martingale_self_checks() {
        let law = OffspringLaw::lattice_binary();
        for n in 1..=3 {
            let r = oracle_enumerate(&law, n, &[2.0]).unwrap();
            assert!((r.expectation("W_additive").unwrap() - 1.0).abs() < 1e-12);
            assert!(r.expectation("Z").unwrap().abs() < 1e-12);
            assert!((r.total_probability - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outcome_count_for_three_generations() {
        let r = oracle_enumerate(&OffspringLaw::lattice_binary(), 3, &[]).unwrap();
        assert_eq!(r.outcome_count, 1 << 14);
    }

    #[test]
    fn partition_function_matches_closed_form() {
        let (h, r) = lattice_consts();
        let law = OffspringLaw::lattice_binary();
        for n in 1..=3 {
            let res = oracle_enumerate(&law, n, &[1.5, 2.0, 3.0]).unwrap();
            for b in [1.5f64, 2.0, 3.0] {
                let exact = (2.0 * (r * (-b * h).exp() + (1.0 - r) * (b * h).exp())).powi(n as i32);
                let got = res.expectation(&w_key(b)).unwrap();
                assert!((got / exact - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_generation_minimum() {
        let (h, r) = lattice_consts();
        let res = oracle_enumerate(&OffspringLaw::lattice_binary(), 1, &[]).unwrap();
        let (m, p) = res.exact_min_cdf[0];
        assert!((m + h).abs() < 1e-12);
        assert!((p - (1.0 - r * r)).abs() < 1e-12);
        assert!((p - 0.1295).abs() < 1e-4);
        assert!((res.exact_min_cdf.last().unwrap().1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_spaces_are_rejected() {
        assert!(matches!(
            oracle_enumerate(&OffspringLaw::lattice_binary(), 5, &[]),
            Err(EstimatorError::OutcomeSpaceTooLarge { .. })
        ));
        assert!(oracle_enumerate(&OffspringLaw::gaussian_binary(), 1, &[]).is_err());
    }
}
