//! Per-sample attack runs and their records. Each sample gets its own seed
//! `sample_seed(global_seed, sample_id)`, so results do not depend on the
//! thread schedule.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::builders::{build_max_loss, build_min_radius, AttackProblem};
use super::pgd::{pgd_baseline, PgdConfig};
use super::two_stage::{two_stage_solve, TwoStageConfig};
use super::{AttackError, AttackSpec, Formulation};
use crate::analysis::sparsity_measure;
use crate::model::{Classifier, Sample};
use crate::numerics::linalg::sub;
use crate::penalty_sqp::{SolverConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverTag {
    Pwcf,
    Pgd,
}

impl fmt::Display for SolverTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverTag::Pwcf => "pwcf",
            SolverTag::Pgd => "pgd",
        })
    }
}

impl FromStr for SolverTag {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pwcf" => Ok(SolverTag::Pwcf),
            "pgd" => Ok(SolverTag::Pgd),
            _ => Err(AttackError::Spec("solver tag must be pwcf or pgd")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    #[default]
    Pwcf,
    Pgd,
    Both,
}

impl SolverChoice {
    pub fn tags(self) -> Vec<SolverTag> {
        match self {
            SolverChoice::Pwcf => vec![SolverTag::Pwcf],
            SolverChoice::Pgd => vec![SolverTag::Pgd],
            SolverChoice::Both => vec![SolverTag::Pwcf, SolverTag::Pgd],
        }
    }
}

/// Outcome of one attack on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub sample_id: usize,
    pub solver_tag: SolverTag,
    pub formulation: Formulation,
    /// `ce`, `margin` or `none` (min-radius).
    pub loss: String,
    pub metric: String,
    pub eps: f64,
    /// Clipped loss at `x′` (max-loss) or `d(x, x′)` recomputed directly
    /// (min-radius).
    pub objective_or_radius: f64,
    pub violation: f64,
    /// `None` for PGD and for samples skipped as misclassified.
    pub stationarity: Option<f64>,
    /// `margin(x′) > 0` and `violation ≤ τ_v`.
    pub attack_success: bool,
    /// `None` when `x′ = x`.
    pub sparsity: Option<f64>,
    pub iterations: usize,
    pub wall_time_ms: f64,
    pub clean_correct: bool,
    pub termination: Option<Termination>,
    pub x_prime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct HarnessConfig {
    pub global_seed: u64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub solver: SolverConfig,
    /// `None` uses the formulation's defaults.
    pub two_stage: Option<TwoStageConfig>,
    pub pgd: PgdConfig,
}

/// SplitMix64 finalizer over `(global_seed, sample_id)`.
pub fn sample_seed(global_seed: u64, sample_id: u64) -> u64 {
    let mut z = global_seed ^ sample_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Soft sparsity of `x′ − x`.
pub fn sparsity_of(x: &[f64], x_prime: &[f64]) -> Option<f64> {
    sparsity_measure(&sub(x_prime, x))
}

fn build(model: &Arc<Classifier>, x: &[f64], y: usize, spec: &AttackSpec) -> Result<AttackProblem, AttackError> {
    match spec.formulation {
        Formulation::MaxLoss => build_max_loss(model.clone(), x, y, spec),
        Formulation::MinRadius => build_min_radius(model.clone(), x, y, spec),
    }
}

fn noisy_start(x: &[f64], scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.iter()
        .map(|v| {
            let e = if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            };
            (v + e).clamp(0.0, 1.0)
        })
        .collect()
}

fn objective_or_radius(ap: &AttackProblem, xp: &[f64]) -> Result<f64, AttackError> {
    match ap.spec.formulation {
        Formulation::MaxLoss => ap.loss(xp),
        Formulation::MinRadius => ap.distance(xp),
    }
}

/// Attacks one sample. A sample the model already misclassifies is
/// recorded as a success at `x′ = x` with zero iterations.
pub fn attack_sample(
    model: &Arc<Classifier>,
    sample_id: usize,
    x: &[f64],
    y: usize,
    spec: &AttackSpec,
    tag: SolverTag,
    cfg: &HarnessConfig,
) -> Result<PerturbationRecord, AttackError> {
    let start = Instant::now();
    let ap = build(model, x, y, spec)?;
    let tau_v = cfg.solver.tau_violation;
    let clean_correct = model.predict(x)? == y;
    let mut record = PerturbationRecord {
        sample_id,
        solver_tag: tag,
        formulation: spec.formulation,
        loss: spec.loss_name().to_string(),
        metric: spec.metric.to_string(),
        eps: spec.eps,
        objective_or_radius: 0.0,
        violation: 0.0,
        stationarity: None,
        attack_success: true,
        sparsity: None,
        iterations: 0,
        wall_time_ms: 0.0,
        clean_correct,
        termination: None,
        x_prime: x.to_vec(),
    };
    if !clean_correct {
        record.objective_or_radius = objective_or_radius(&ap, x)?;
        record.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(record);
    }
    let (xp, violation) = match tag {
        SolverTag::Pwcf => {
            let ts = cfg
                .two_stage
                .unwrap_or_else(|| TwoStageConfig::for_formulation(spec.formulation));
            let seed = sample_seed(cfg.global_seed, sample_id as u64);
            let init = |r: usize| ap.initial_point(&noisy_start(x, ts.init_noise_scale, sample_seed(seed, r as u64)));
            let out = two_stage_solve(&ap.problem, &init, &ts, &cfg.solver)?;
            let report = out.best;
            record.stationarity = Some(report.best.stationarity);
            record.iterations = report.iterations;
            record.termination = Some(report.termination);
            let xp = ap.x_prime(&report.best.x).to_vec();
            (xp, report.best.violation)
        }
        SolverTag::Pgd => {
            let run = pgd_baseline(model, x, y, spec, &cfg.pgd)?;
            let best = run.best_by_margin();
            record.iterations = run.iterates.len() - 1;
            let xp = run.iterates[best].clone();
            let v = ap.problem.evaluate(&xp)?.violation();
            (xp, v)
        }
    };
    record.objective_or_radius = objective_or_radius(&ap, &xp)?;
    record.violation = violation;
    record.attack_success = ap.margin(&xp)? > 0.0 && violation <= tau_v;
    record.sparsity = sparsity_of(x, &xp);
    record.x_prime = xp;
    record.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}

/// Runs every `(spec, tag, sample)` combination on a pool of `cfg.jobs`
/// threads. Records come back spec-major, then tag, then sample order.
pub fn attack_samples(
    model: &Arc<Classifier>,
    samples: &[(usize, Sample)],
    specs: &[AttackSpec],
    tags: &[SolverTag],
    cfg: &HarnessConfig,
) -> Result<Vec<PerturbationRecord>, AttackError> {
    let jobs: Vec<(&AttackSpec, SolverTag, &(usize, Sample))> = specs
        .iter()
        .flat_map(|s| {
            tags.iter()
                .flat_map(move |t| samples.iter().map(move |smp| (s, *t, smp)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|_| AttackError::Spec("could not start the worker pool"))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(spec, tag, (id, s))| attack_sample(model, *id, &s.x, s.y, spec, *tag, cfg))
            .collect()
    })
}
