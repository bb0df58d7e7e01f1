//! Robust accuracy bookkeeping, radius statistics and the soft sparsity
//! measure `‖δ‖₁/‖δ‖₂` of attack solutions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{Formulation, PerturbationRecord, SolverTag};
use crate::numerics::linalg::{norm1, norm2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no records")]
    Empty,
    #[error("record groups cover different sample sets")]
    InconsistentCoverage,
    #[error("sample {0} has conflicting clean labels across records")]
    ConflictingClean(usize),
    #[error("record for sample {0} is not a feasible min-radius solution")]
    NotARadius(usize),
    #[error("histogram needs at least one bin and n ≥ 1")]
    Histogram,
}

/// `‖δ‖₁/‖δ‖₂ ∈ [1, √n]`; `None` for `δ = 0`.
pub fn sparsity_measure(delta: &[f64]) -> Option<f64> {
    let l2 = norm2(delta);
    if l2 == 0.0 || !l2.is_finite() {
        return None;
    }
    // rounding can push exact extremes a hair outside [1, √n]
    let upper = (delta.len() as f64).sqrt();
    Some((norm1(delta) / l2).clamp(1.0, upper))
}

/// Records that share solver, loss, metric and budget.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub solver: SolverTag,
    pub loss: String,
    pub metric: String,
    /// `eps` as its bit pattern so the key stays `Ord`.
    pub eps_bits: u64,
}

impl ConfigKey {
    pub fn of(r: &PerturbationRecord) -> Self {
        Self {
            solver: r.solver_tag,
            loss: r.loss.clone(),
            metric: r.metric.clone(),
            eps_bits: r.eps.to_bits(),
        }
    }

    pub fn eps(&self) -> f64 {
        f64::from_bits(self.eps_bits)
    }
}

/// Fraction of samples that are classified correctly and survive every
/// given record. All config groups present must cover the same samples.
pub fn robust_accuracy<'a>(records: impl IntoIterator<Item = &'a PerturbationRecord>) -> Result<f64, AnalysisError> {
    let mut groups: BTreeMap<ConfigKey, BTreeSet<usize>> = BTreeMap::new();
    let mut robust: BTreeMap<usize, bool> = BTreeMap::new();
    let mut clean: BTreeMap<usize, bool> = BTreeMap::new();
    for r in records {
        groups.entry(ConfigKey::of(r)).or_default().insert(r.sample_id);
        if *clean.entry(r.sample_id).or_insert(r.clean_correct) != r.clean_correct {
            return Err(AnalysisError::ConflictingClean(r.sample_id));
        }
        let ok = robust.entry(r.sample_id).or_insert(r.clean_correct);
        *ok = *ok && !r.attack_success;
    }
    let mut sets = groups.values();
    let first = sets.next().ok_or(AnalysisError::Empty)?;
    if sets.any(|s| s != first) {
        return Err(AnalysisError::InconsistentCoverage);
    }
    Ok(robust.values().filter(|v| **v).count() as f64 / robust.len() as f64)
}

/// Robust accuracy over the union of all successes found by the given
/// solver tags.
pub fn union_robust_accuracy(records: &[PerturbationRecord], tags: &[SolverTag]) -> Result<f64, AnalysisError> {
    robust_accuracy(records.iter().filter(|r| tags.contains(&r.solver_tag)))
}

/// Fraction of samples classified correctly before any attack.
pub fn clean_accuracy<'a>(records: impl IntoIterator<Item = &'a PerturbationRecord>) -> Result<f64, AnalysisError> {
    let mut clean: BTreeMap<usize, bool> = BTreeMap::new();
    for r in records {
        clean.insert(r.sample_id, r.clean_correct);
    }
    if clean.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(clean.values().filter(|v| **v).count() as f64 / clean.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn radius_stats(values: &[f64]) -> Result<RadiusStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(RadiusStats {
        count: k,
        mean,
        median,
        std: var.sqrt(),
    })
}

/// Radii of min-radius records, sample id order. Misclassified samples
/// (radius 0) are skipped; a record with `violation > τ_v` is an error.
pub fn radii(records: &[PerturbationRecord], tau_v: f64) -> Result<BTreeMap<usize, f64>, AnalysisError> {
    let mut out = BTreeMap::new();
    for r in records {
        if r.formulation != Formulation::MinRadius || !(r.violation <= tau_v) {
            return Err(AnalysisError::NotARadius(r.sample_id));
        }
        if r.clean_correct {
            out.insert(r.sample_id, r.objective_or_radius);
        }
    }
    Ok(out)
}

/// Per-sample `a − b` over samples present in both.
pub fn radius_differences(
    a: &BTreeMap<usize, f64>,
    b: &BTreeMap<usize, f64>,
) -> Result<Vec<(usize, f64)>, AnalysisError> {
    if a.keys().ne(b.keys()) {
        return Err(AnalysisError::InconsistentCoverage);
    }
    Ok(a.iter().map(|(id, ra)| (*id, ra - b[id])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` uniform edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Default sparsity binning: 30 bins over `[1, √n]`.
pub const SPARSITY_BINS: usize = 30;

/// Uniform bins over `[1, √n]`; values on the upper edge go to the last
/// bin and values outside the range are clamped.
pub fn sparsity_histogram(values: &[f64], n: usize, bins: usize) -> Result<Histogram, AnalysisError> {
    if bins == 0 || n == 0 {
        return Err(AnalysisError::Histogram);
    }
    let hi = (n as f64).sqrt();
    let width = (hi - 1.0) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { 1.0 + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = if width > 0.0 { ((v - 1.0) / width).floor() } else { 0.0 };
        counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub solver: SolverTag,
    pub loss: String,
    pub metric: String,
    pub eps: f64,
    pub samples: usize,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionEntry {
    pub metric: String,
    pub eps: f64,
    /// `solver/loss` members combined.
    pub members: Vec<String>,
    pub robust_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusEntry {
    pub solver: SolverTag,
    pub metric: String,
    pub stats: RadiusStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityEntry {
    pub solver: SolverTag,
    pub loss: String,
    pub metric: String,
    pub eps: f64,
    /// Mean over records with a non-zero perturbation.
    pub mean: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub accuracy: Vec<AccuracyEntry>,
    pub union: Vec<UnionEntry>,
    pub radius: Vec<RadiusEntry>,
    pub sparsity: Vec<SparsityEntry>,
}

/// Summarizes max-loss and min-radius records of inputs of dimension `n`.
pub fn summarize(records: &[PerturbationRecord], n: usize, tau_v: f64) -> Result<RunSummary, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut groups: BTreeMap<ConfigKey, Vec<&PerturbationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(ConfigKey::of(r)).or_default().push(r);
    }
    let mut summary = RunSummary {
        accuracy: Vec::new(),
        union: Vec::new(),
        radius: Vec::new(),
        sparsity: Vec::new(),
    };
    let mut unions: BTreeMap<(String, u64), Vec<&ConfigKey>> = BTreeMap::new();
    for (key, rs) in &groups {
        let values: Vec<f64> = rs.iter().filter_map(|r| r.sparsity).collect();
        summary.sparsity.push(SparsityEntry {
            solver: key.solver,
            loss: key.loss.clone(),
            metric: key.metric.clone(),
            eps: key.eps(),
            mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
            histogram: sparsity_histogram(&values, n, SPARSITY_BINS)?,
        });
        if rs[0].formulation == Formulation::MinRadius {
            let owned: Vec<PerturbationRecord> = rs.iter().map(|r| (*r).clone()).collect();
            let rad: Vec<f64> = radii(&owned, tau_v)?.into_values().collect();
            if !rad.is_empty() {
                summary.radius.push(RadiusEntry {
                    solver: key.solver,
                    metric: key.metric.clone(),
                    stats: radius_stats(&rad)?,
                });
            }
            continue;
        }
        summary.accuracy.push(AccuracyEntry {
            solver: key.solver,
            loss: key.loss.clone(),
            metric: key.metric.clone(),
            eps: key.eps(),
            samples: rs.len(),
            clean_accuracy: clean_accuracy(rs.iter().copied())?,
            robust_accuracy: robust_accuracy(rs.iter().copied())?,
        });
        unions.entry((key.metric.clone(), key.eps_bits)).or_default().push(key);
    }
    for ((metric, eps_bits), keys) in unions {
        let members = keys.iter().map(|k| format!("{}/{}", k.solver, k.loss)).collect();
        let acc = robust_accuracy(keys.iter().flat_map(|k| groups[*k].iter().copied()))?;
        summary.union.push(UnionEntry {
            metric,
            eps: f64::from_bits(eps_bits),
            members,
            robust_accuracy: acc,
        });
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_measure(&[1.0, 0.0, 0.0, 0.0]), Some(1.0));
        assert_eq!(sparsity_measure(&[1.0, 1.0, 1.0, 1.0]), Some(2.0));
        assert!((sparsity_measure(&[-3.0, 4.0]).unwrap() - 1.4).abs() < 1e-15);
        assert_eq!(sparsity_measure(&[0.0, 0.0]), None);
    }

    #[test]
    fn radius_stat_examples() {
        let s = radius_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.median), (2.0, 2.0));
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(radius_stats(&[4.5]).unwrap().std, 0.0);
        assert_eq!(radius_stats(&[]), Err(AnalysisError::Empty));
        assert_eq!(radius_stats(&[1.0, 2.0, 3.0, 10.0]).unwrap().median, 2.5);
    }

    #[test]
    fn histogram_edges_and_counts() {
        let h = sparsity_histogram(&[1.0, 2.0, 1.5, 1.99], 4, 2).unwrap();
        assert_eq!(h.edges, vec![1.0, 1.5, 2.0]);
        assert_eq!(h.counts, vec![1, 3]);
        assert_eq!(sparsity_histogram(&[], 4, 30).unwrap().edges.len(), 31);
    }
}
