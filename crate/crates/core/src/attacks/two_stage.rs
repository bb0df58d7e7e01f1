//! Two-stage restarts: `R` short seeded runs truncated at `k` iterations,
//! screening, then one long run (up to `K`) from the winning start.

use serde::{Deserialize, Serialize};

use super::{AttackError, Formulation};
use crate::penalty_sqp::{screens_better, solve, NonsmoothProblem, SolverConfig, SolverReport, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStageConfig {
    pub restarts: usize,
    pub stage1_iters: usize,
    pub max_iters: usize,
    pub init_noise_scale: f64,
}

impl TwoStageConfig {
    /// `R = 10`, `k = 20`, `K = 400`.
    pub fn max_loss() -> Self {
        Self {
            restarts: 10,
            stage1_iters: 20,
            max_iters: 400,
            init_noise_scale: 1e-2,
        }
    }

    /// `R = 10`, `k = 50`, `K = 4000`.
    pub fn min_radius() -> Self {
        Self {
            restarts: 10,
            stage1_iters: 50,
            max_iters: 4000,
            init_noise_scale: 1e-2,
        }
    }

    pub fn for_formulation(f: Formulation) -> Self {
        match f {
            Formulation::MaxLoss => Self::max_loss(),
            Formulation::MinRadius => Self::min_radius(),
        }
    }

    /// Single run with `K` iterations.
    pub fn single(max_iters: usize) -> Self {
        Self {
            restarts: 1,
            stage1_iters: max_iters,
            max_iters,
            init_noise_scale: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.restarts == 0 {
            return Err(AttackError::Spec("restarts must be at least 1"));
        }
        if !(1 <= self.stage1_iters && self.stage1_iters <= self.max_iters) {
            return Err(AttackError::Spec("need 1 ≤ stage1_iters ≤ max_iters"));
        }
        if !(self.init_noise_scale >= 0.0 && self.init_noise_scale.is_finite()) {
            return Err(AttackError::Spec("init_noise_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self::max_loss()
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub best: SolverReport,
    /// Stage-1 reports in restart order (empty when `R = 1`).
    pub stage1: Vec<SolverReport>,
    pub winner: usize,
    /// Starting point of the winning restart.
    pub x0: Vec<f64>,
}

/// Index of the winner among `(f, v)` pairs: the feasible one
/// (`v ≤ τ_v`) with least `f`, otherwise least `v`. Ties keep the earlier
/// entry.
pub fn screen(results: &[(f64, f64)], tau_v: f64) -> usize {
    let mut best = 0;
    for (i, &(f, v)) in results.iter().enumerate().skip(1) {
        let (bf, bv) = results[best];
        if screens_better(f, v, bf, bv, tau_v) {
            best = i;
        }
    }
    best
}

/// `init(r)` gives the starting point of restart `r`. `H₀` scaling is
/// forced off in both stages, so stage 2 retraces the winner's first `k`
/// iterates exactly. When the winner already stopped before its budget
/// ran out, its report is returned as the stage-2 result.
pub fn two_stage_solve(
    problem: &NonsmoothProblem,
    init: &dyn Fn(usize) -> Vec<f64>,
    cfg: &TwoStageConfig,
    solver: &SolverConfig,
) -> Result<TwoStageResult, AttackError> {
    cfg.validate()?;
    let base = SolverConfig {
        h0_scaling: false,
        ..solver.clone()
    };
    if cfg.restarts == 1 {
        let x0 = init(0);
        let best = solve(
            problem,
            &x0,
            &SolverConfig {
                max_iter: cfg.max_iters,
                ..base
            },
        )?;
        return Ok(TwoStageResult {
            best,
            stage1: Vec::new(),
            winner: 0,
            x0,
        });
    }
    let stage1_cfg = SolverConfig {
        max_iter: cfg.stage1_iters,
        ..base.clone()
    };
    let mut starts = Vec::with_capacity(cfg.restarts);
    let mut stage1 = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let x0 = init(r);
        stage1.push(solve(problem, &x0, &stage1_cfg)?);
        starts.push(x0);
    }
    let scores: Vec<(f64, f64)> = stage1.iter().map(|r| (r.best.f, r.best.violation)).collect();
    let winner = screen(&scores, solver.tau_violation);
    let x0 = starts.swap_remove(winner);
    let done = stage1[winner].termination != Termination::MaxIter || cfg.stage1_iters == cfg.max_iters;
    let best = if done {
        stage1[winner].clone()
    } else {
        solve(
            problem,
            &x0,
            &SolverConfig {
                max_iter: cfg.max_iters,
                ..base
            },
        )?
    };
    Ok(TwoStageResult {
        best,
        stage1,
        winner,
        x0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn screening_rules() {
        assert_eq!(screen(&[(0.5, 0.0), (-3.0, 0.2)], 1e-2), 0);
        assert_eq!(screen(&[(0.0, 0.2), (9.0, 0.05)], 1e-2), 1);
        assert_eq!(screen(&[(0.5, 0.0), (0.2, 0.001), (0.2, 0.0)], 1e-2), 1);
        assert_eq!(screen(&[(1.0, 0.3)], 1e-2), 0);
    }

    #[test]
    fn config_validation() {
        assert!(TwoStageConfig::max_loss().validate().is_ok());
        assert!(TwoStageConfig {
            stage1_iters: 0,
            ..TwoStageConfig::max_loss()
        }
        .validate()
        .is_err());
        assert!(TwoStageConfig {
            stage1_iters: 500,
            ..TwoStageConfig::max_loss()
        }
        .validate()
        .is_err());
        assert!(TwoStageConfig {
            restarts: 0,
            ..TwoStageConfig::max_loss()
        }
        .validate()
        .is_err());
    }

    fn rosenbrock_on_disk() -> NonsmoothProblem {
        NonsmoothProblem::new(2, |x| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            (a * a + 100.0 * b * b, vec![-2.0 * a - 400.0 * x[0] * b, 200.0 * b])
        })
        .with_inequality(|x| (x[0] * x[0] + x[1] * x[1] - 1.5, vec![2.0 * x[0], 2.0 * x[1]]))
    }

    #[test]
    fn single_restart_equals_plain_solve() {
        let p = rosenbrock_on_disk();
        let cfg = SolverConfig::default();
        let r = two_stage_solve(&p, &|_| vec![-1.0, 0.5], &TwoStageConfig::single(60), &cfg).unwrap();
        let direct = solve(&p, &[-1.0, 0.5], &SolverConfig { max_iter: 60, ..cfg }).unwrap();
        assert_eq!(r.best.x_star, direct.x_star);
        assert_eq!(r.best.iterations, direct.iterations);
        assert!(r.stage1.is_empty());
    }

    #[test]
    fn stage_two_replays_the_winner() {
        let p = rosenbrock_on_disk();
        let cfg = SolverConfig {
            tau_stationarity: 1e-12,
            tau_violation: 1e-12,
            record_trajectory: true,
            record_iterates: true,
            h0_scaling: true,
            ..SolverConfig::default()
        };
        let starts = [vec![-1.0, 0.5], vec![0.2, -0.9], vec![0.0, 1.0]];
        let tc = TwoStageConfig {
            restarts: 3,
            stage1_iters: 5,
            max_iters: 200,
            init_noise_scale: 0.0,
        };
        let r = two_stage_solve(&p, &|i| starts[i].clone(), &tc, &cfg).unwrap();
        assert_eq!(r.x0, starts[r.winner]);
        let first = &r.stage1[r.winner].trajectory;
        assert_eq!(first.len(), 5);
        for (a, b) in first.iter().zip(&r.best.trajectory) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.f.to_bits(), b.f.to_bits());
            assert_eq!(a.mu.to_bits(), b.mu.to_bits());
        }
        assert!(r.best.iterations > 5);
    }
}
