//! Self-contained property suites: projections, QP subproblems, solver
//! regressions, folding, loss clipping, the Danskin example, gradient
//! checks and two-stage replay. Each suite reports pass or fail with a
//! short detail line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attacks::{lp_distance, perceptual_distance, two_stage_solve, InnerNorm, TwoStageConfig};
use crate::folding::{clip_loss, fold_constraints, Aggregator, ClippedLoss, LossKind};
use crate::model::{
    cross_entropy, danskin_example, danskin_objective, danskin_step, margin_loss, Activation, Classifier, InnerSolution,
};
use crate::numerics::linalg::{norm2, sub};
use crate::numerics::{finite_diff_grad, InverseHessian, Matrix};
use crate::penalty_sqp::{solve, NonsmoothProblem, SolverConfig};
use crate::qp::{project, project_linf_box, solve_box_qp, solve_termination_qp, BoxQp, ProjectionSet, TerminationQp};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

pub type Suite = fn(u64) -> CheckOutcome;

/// Every suite, in run order.
pub fn suites() -> Vec<(&'static str, Suite)> {
    vec![
        ("linf_projection", linf_projection as Suite),
        ("l2_sequential_feasible", l2_sequential_feasible),
        ("box_qp_enumeration", box_qp_enumeration),
        ("termination_qp", termination_qp),
        ("solver_regression", solver_regression),
        ("folding_zero_iff_feasible", folding_zero_iff_feasible),
        ("loss_clipping", loss_clipping),
        ("danskin", danskin),
        ("gradient_checks", gradient_checks),
        ("two_stage_replay", two_stage_replay),
    ]
}

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    suites().into_iter().map(|(_, f)| f(seed)).collect()
}

/// Closed-form ℓ∞∩box projector against both sequential orders.
pub fn linf_projection(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        let x: f64 = rng.random();
        let eps: f64 = rng.random_range(1e-3..1.0);
        let w: f64 = rng.random_range(-2.0..2.0);
        let closed = project_linf_box(x, eps, w).expect("valid input");
        let ball_then_box = (x + w.clamp(-eps, eps)).clamp(0.0, 1.0) - x;
        let box_then_ball = ((x + w).clamp(0.0, 1.0) - x).clamp(-eps, eps);
        worst = worst
            .max((closed - ball_then_box).abs())
            .max((closed - box_then_ball).abs());
    }
    outcome("linf_projection", worst <= 1e-12, format!("max gap {worst:.2e}"))
}

/// Both ℓ2/box sequential orders land in the intersection.
pub fn l2_sequential_feasible(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..6);
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let eps: f64 = rng.random_range(1e-3..1.0);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lower: Vec<f64> = x.iter().map(|v| -v).collect();
        let upper: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        let boxed = ProjectionSet::Box { lower, upper };
        let ball = ProjectionSet::L2Ball { radius: eps };
        let a = project(&ball, &project(&boxed, &w).expect("finite")).expect("finite");
        let b = project(&boxed, &project(&ball, &w).expect("finite")).expect("finite");
        for d in [a, b] {
            let box_gap = d
                .iter()
                .zip(&x)
                .map(|(di, xi)| (-(xi + di)).max(xi + di - 1.0))
                .fold(0.0, f64::max);
            worst = worst.max(norm2(&d) - eps).max(box_gap);
        }
    }
    outcome(
        "l2_sequential_feasible",
        worst <= 1e-9,
        format!("max violation {worst:.2e}"),
    )
}

/// Brute-force box QP: fix each coordinate at a bound or free, solve the
/// free block, keep the best feasible candidate.
fn enumerate_box_qp(qp: &BoxQp) -> f64 {
    let n = qp.dim();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut state = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            state.push(c % 3);
            c /= 3;
        }
        let mut x = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|i| state[*i] == 2).collect();
        for i in 0..n {
            match state[i] {
                0 => x[i] = qp.lower[i],
                1 => x[i] = qp.upper[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let mut a = Matrix::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (r, &i) in free.iter().enumerate() {
                rhs[r] = -qp.b[i];
                for j in 0..n {
                    if state[j] != 2 {
                        rhs[r] -= qp.q.row(i)[j] * x[j];
                    }
                }
                for (s, &j) in free.iter().enumerate() {
                    a.row_mut(r)[s] = qp.q.row(i)[j];
                }
            }
            let Some(l) = a.cholesky() else { continue };
            let sol = Matrix::cholesky_solve(&l, &rhs);
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        if x.iter()
            .zip(qp.lower.iter().zip(&qp.upper))
            .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12)
        {
            best = best.min(qp.objective(&x));
        }
    }
    best
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = if i == j { 1e-2 } else { 0.0 };
            for k in 0..n {
                s += a[i * n + k] * a[j * n + k];
            }
            q.row_mut(i)[j] = s;
        }
    }
    q
}

/// `solve_box_qp` against enumeration on random small instances.
pub fn box_qp_enumeration(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..300 {
        let n = rng.random_range(1..=4);
        let q = random_spd(&mut rng, n);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
        let qp = BoxQp::new(q, b, lower, upper).expect("valid qp");
        let Ok(sol) = solve_box_qp(&qp, 1e-12) else {
            return outcome("box_qp_enumeration", false, "solver error".into());
        };
        worst = worst.max((sol.objective - enumerate_box_qp(&qp)).abs());
    }
    outcome(
        "box_qp_enumeration",
        worst <= 1e-8,
        format!("max objective gap {worst:.2e}"),
    )
}

/// Two opposite gradients `±g` certify stationarity.
pub fn termination_qp(_seed: u64) -> CheckOutcome {
    let h = InverseHessian::identity(2);
    let tqp = TerminationQp {
        objective_gradients: vec![vec![1.0, -2.0], vec![-1.0, 2.0]],
        constraint_gradients: Vec::new(),
        constraint_values: Vec::new(),
        multiplier_lower: Vec::new(),
        h: &h,
        mu: 1.0,
    };
    match solve_termination_qp(&tqp, 1e-12) {
        Ok(s) => outcome(
            "termination_qp",
            s.stationarity <= 1e-8,
            format!("stationarity {:.2e}", s.stationarity),
        ),
        Err(e) => outcome("termination_qp", false, e.to_string()),
    }
}

/// `min x² s.t. x ≥ 1` at default tolerances and `min ‖x‖∞ s.t.
/// x₁ + x₂ = 1` at tight ones.
pub fn solver_regression(_seed: u64) -> CheckOutcome {
    let cfg = SolverConfig::default();
    let p1 =
        NonsmoothProblem::new(1, |x| (x[0] * x[0], vec![2.0 * x[0]])).with_inequality(|x| (1.0 - x[0], vec![-1.0]));
    let linf = |x: &[f64]| {
        let i = if x[0].abs() >= x[1].abs() { 0 } else { 1 };
        let mut g = vec![0.0; 2];
        g[i] = x[i].signum();
        (x[i].abs(), g)
    };
    let p2 = NonsmoothProblem::new(2, linf).with_equality(|x| (x[0] + x[1] - 1.0, vec![1.0, 1.0]));
    let tight = SolverConfig {
        tau_stationarity: 1e-6,
        tau_violation: 1e-8,
        ..SolverConfig::default()
    };
    let (Ok(r1), Ok(r2)) = (solve(&p1, &[3.0], &cfg), solve(&p2, &[2.0, -0.5], &tight)) else {
        return outcome("solver_regression", false, "solver error".into());
    };
    let e1 = (r1.x_star[0] - 1.0).abs();
    let e2 = (r2.f_star - 0.5).abs();
    let ok = e1 <= 1e-3 && r1.violation <= 1e-2 && e2 <= 1e-3;
    outcome(
        "solver_regression",
        ok,
        format!("|x*−1| = {e1:.2e}, |f*−0.5| = {e2:.2e}"),
    )
}

/// Folded value is zero exactly when every member is satisfied.
pub fn folding_zero_iff_feasible(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng| -> f64 {
        match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(-1.0..0.0),
            2 => rng.random_range(0.0..1.0) * 1e-300,
            _ => rng.random_range(-1.0..1.0),
        }
    };
    let mut failures = 0;
    for trial in 0..30_000 {
        let agg = [Aggregator::L2, Aggregator::L1, Aggregator::Max][trial % 3];
        let ni = rng.random_range(0..5);
        let ne = rng.random_range(usize::from(ni == 0)..4);
        let ineq: Vec<f64> = (0..ni).map(|_| pick(&mut rng)).collect();
        let eq: Vec<f64> = (0..ne)
            .map(|_| if rng.random_bool(0.5) { 0.0 } else { pick(&mut rng) })
            .collect();
        let satisfied = ineq.iter().all(|c| *c <= 0.0) && eq.iter().all(|h| *h == 0.0);
        match fold_constraints(&ineq, &eq, agg) {
            Ok(f) if (f.value == 0.0) == satisfied && f.value >= 0.0 => {}
            _ => failures += 1,
        }
    }
    outcome(
        "folding_zero_iff_feasible",
        failures == 0,
        format!("{failures} mismatches"),
    )
}

/// Clipped losses never exceed their thresholds and have zero gradient
/// beyond them.
pub fn loss_clipping(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for trial in 0..4_000 {
        let nc = if trial % 2 == 0 { 3 } else { 10 };
        let logits: Vec<f64> = (0..nc).map(|_| rng.random_range(-8.0..8.0)).collect();
        let y = rng.random_range(0..nc);
        for loss in [ClippedLoss::margin(), ClippedLoss::cross_entropy(nc)] {
            let (raw, g) = match loss.base {
                LossKind::Margin => margin_loss(&logits, y).expect("valid label"),
                LossKind::CrossEntropy => cross_entropy(&logits, y).expect("valid label"),
            };
            let (v, cg) = clip_loss(&loss, raw, &g);
            let beyond = raw > loss.clip_at;
            if v > loss.clip_at || (beyond && cg.iter().any(|x| *x != 0.0)) || (!beyond && cg != g) {
                failures += 1;
            }
        }
    }
    outcome("loss_clipping", failures == 0, format!("{failures} violations"))
}

pub fn danskin(_seed: u64) -> CheckOutcome {
    let zero = danskin_example(1.0, InnerSolution::StationaryZero);
    let two = danskin_example(1.0, InnerSolution::GlobalOne);
    let (theta, _) = danskin_step(1.0, InnerSolution::GlobalOne, 0.1);
    let g = danskin_objective(theta);
    let ok = zero == 0.0 && two == 2.0 && (g - 0.64).abs() < 1e-12;
    outcome(
        "danskin",
        ok,
        format!("stationary {zero}, global {two}, g after step {g:.4}"),
    )
}

fn rel_close(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-4 * scale)
}

/// Model, loss and distance gradients against central differences.
pub fn gradient_checks(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let total = 200;
    for i in 0..total {
        let m = Classifier::random(&[3, 5, 4, 3], Activation::Tanh, seed.wrapping_add(i as u64)).expect("valid dims");
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
        let xp: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.04..0.04)).collect();
        let y = rng.random_range(0..3);
        let ce = |z: &[f64]| cross_entropy(&m.forward(z).expect("dims"), y).expect("label").0;
        let g = m
            .input_gradient(&x, &cross_entropy(&m.forward(&x).expect("dims"), y).expect("label").1)
            .expect("dims");
        let fd = finite_diff_grad(ce, &x, 1e-6).expect("finite");
        if !rel_close(&g, &fd) {
            failures += 1;
        }
        let p = [1.0, 1.5, 2.0, 8.0][i % 4];
        let (_, g) = lp_distance(&x, &xp, p);
        let fd = finite_diff_grad(|z| lp_distance(&x, z, p).0, &xp, 1e-7).expect("finite");
        if !rel_close(&g, &fd) {
            failures += 1;
        }
        let (_, g) = perceptual_distance(&m, &x, &xp, InnerNorm::L2).expect("dims");
        let fd = finite_diff_grad(
            |z| perceptual_distance(&m, &x, z, InnerNorm::L2).expect("dims").0,
            &xp,
            1e-7,
        )
        .expect("finite");
        if !rel_close(&g, &fd) {
            failures += 1;
        }
    }
    outcome(
        "gradient_checks",
        failures == 0,
        format!("{failures} of {} mismatches", 3 * total),
    )
}

/// Stage 2 retraces the stage-1 winner's first `k` iterates bit for bit.
pub fn two_stage_replay(seed: u64) -> CheckOutcome {
    let p = NonsmoothProblem::new(2, |x| {
        let a = 1.0 - x[0];
        let b = x[1] - x[0] * x[0];
        (a * a + 100.0 * b * b, vec![-2.0 * a - 400.0 * x[0] * b, 200.0 * b])
    })
    .with_inequality(|x| (x[0] * x[0] + x[1] * x[1] - 1.5, vec![2.0 * x[0], 2.0 * x[1]]));
    let cfg = SolverConfig {
        tau_stationarity: 1e-12,
        tau_violation: 1e-12,
        record_trajectory: true,
        record_iterates: true,
        ..SolverConfig::default()
    };
    let tc = TwoStageConfig {
        restarts: 4,
        stage1_iters: 6,
        max_iters: 300,
        init_noise_scale: 0.0,
    };
    let init = |r: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r as u64);
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
    };
    let Ok(r) = two_stage_solve(&p, &init, &tc, &cfg) else {
        return outcome("two_stage_replay", false, "solver error".into());
    };
    let first = &r.stage1[r.winner].trajectory;
    let same = first.len() <= r.best.trajectory.len()
        && first
            .iter()
            .zip(&r.best.trajectory)
            .all(|(a, b)| a.x == b.x && a.f.to_bits() == b.f.to_bits());
    let start_ok = sub(&r.x0, &init(r.winner)).iter().all(|v| *v == 0.0);
    outcome(
        "two_stage_replay",
        same && start_ok,
        format!("winner {} replayed over {} iterates", r.winner, first.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for c in run_all(0) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
