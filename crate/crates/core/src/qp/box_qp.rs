//! Projected-gradient solver for small convex QPs over sets with cheap
//! projections, plus the box-constrained instance used for the dual
//! search-direction subproblem.
//!
//! Each iteration takes a Barzilai-Borwein trial step, projects, and then
//! does an exact line search along the segment to the projected point.
//! The segment stays feasible, so the method is monotone. For box QPs an
//! active-set polish (Newton step on the free variables) removes the last
//! digits of error once the active set has settled.

use serde::{Deserialize, Serialize};

use super::QpError;
use crate::numerics::linalg::{all_finite, dot, norm2, Matrix};

pub const DEFAULT_QP_TOL: f64 = 1e-10;
pub const DEFAULT_QP_MAX_ITER: usize = 10_000;

/// `min ½ λᵀQλ + bᵀλ  s.t.  lower ≤ λ ≤ upper`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxQp {
    pub q: Matrix,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `‖x − P(x − ∇q(x))‖₂`
    pub kkt_residual: f64,
}

impl BoxQp {
    pub fn new(q: Matrix, b: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, QpError> {
        let n = b.len();
        if q.rows() != n || q.cols() != n || lower.len() != n || upper.len() != n {
            return Err(QpError::Dimension);
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(QpError::InvalidSet("box lower bound exceeds upper bound"));
        }
        if !q.is_symmetric(1e-9) {
            return Err(QpError::NotSymmetric);
        }
        if !all_finite(q.as_slice()) || !all_finite(&b) {
            return Err(QpError::NonFinite);
        }
        Ok(Self { q, b, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.q.mul_vec(x).expect("dimension checked");
        0.5 * dot(x, &qx) + dot(&self.b, x)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (xi, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *xi = xi.clamp(*l, *u);
        }
    }
}

pub fn solve_box_qp(qp: &BoxQp, tol: f64) -> Result<QpSolution, QpError> {
    solve_box_qp_with(qp, tol, DEFAULT_QP_MAX_ITER)
}

pub fn solve_box_qp_with(qp: &BoxQp, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    if !(tol > 0.0) {
        return Err(QpError::InvalidTolerance(tol));
    }
    let n = qp.dim();
    if n == 0 {
        return Ok(QpSolution {
            x: vec![],
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
        });
    }
    let mut x0: Vec<f64> = qp
        .lower
        .iter()
        .zip(&qp.upper)
        .map(|(l, u)| 0.0f64.clamp(*l, *u))
        .collect();
    qp.clamp(&mut x0);
    let project = |v: &mut [f64]| qp.clamp(v);
    let polish = |x: &[f64], g: &[f64]| polish_box(qp, x, g);
    let run = projected_gradient(&qp.q, &qp.b, x0, project, Some(&polish), tol, max_iter);
    let sol = QpSolution {
        objective: qp.objective(&run.x),
        x: run.x,
        iterations: run.iterations,
        kkt_residual: run.residual,
    };
    if run.converged {
        Ok(sol)
    } else {
        Err(QpError::NotConverged(Box::new(sol)))
    }
}

pub(crate) struct PgRun {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn gradient(q: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut g = q.mul_vec(x).expect("dimension checked");
    for (gi, bi) in g.iter_mut().zip(b) {
        *gi += bi;
    }
    g
}

fn kkt_residual<P: Fn(&mut [f64])>(x: &[f64], g: &[f64], project: &P) -> f64 {
    let mut z: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
    project(&mut z);
    x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

type Polish<'a> = &'a dyn Fn(&[f64], &[f64]) -> Option<Vec<f64>>;

/// Monotone spectral projected gradient for `½xᵀQx + bᵀx` over a convex set
/// given by `project`.
pub(crate) fn projected_gradient<P: Fn(&mut [f64])>(
    q: &Matrix,
    b: &[f64],
    mut x: Vec<f64>,
    project: P,
    polish: Option<Polish<'_>>,
    tol: f64,
    max_iter: usize,
) -> PgRun {
    let n = x.len();
    let mut g = gradient(q, b, &x);
    let mut residual = kkt_residual(&x, &g, &project);
    // first trial step from the inverse of the largest diagonal entry
    let max_diag = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
    let mut alpha = if max_diag > 0.0 { 1.0 / max_diag } else { 1.0 };
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        iterations += 1;
        let mut z: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
        project(&mut z);
        let d: Vec<f64> = z.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dd = dot(&d, &d);
        if dd == 0.0 {
            // trial step too short to move; fall back to a unit step
            alpha = if alpha < 1.0 { 1.0 } else { alpha * 10.0 };
            if alpha > 1e12 {
                break;
            }
            continue;
        }
        let qd = q.mul_vec(&d).expect("dimension checked");
        let curvature = dot(&d, &qd);
        let slope = dot(&g, &d);
        let t = if curvature > 0.0 {
            (-slope / curvature).clamp(0.0, 1.0)
        } else {
            1.0
        };
        for i in 0..n {
            x[i] += t * d[i];
            g[i] += t * qd[i];
        }
        alpha = if curvature > 0.0 {
            (dd / curvature).clamp(1e-12, 1e12)
        } else {
            1e12
        };
        residual = kkt_residual(&x, &g, &project);
        if let Some(polish) = polish {
            if residual > tol && iterations % 10 == 0 {
                if let Some(candidate) = polish(&x, &g) {
                    let gc = gradient(q, b, &candidate);
                    let rc = kkt_residual(&candidate, &gc, &project);
                    if rc < residual {
                        x = candidate;
                        g = gc;
                        residual = rc;
                    }
                }
            }
        }
    }
    if residual > tol {
        if let Some(polish) = polish {
            if let Some(candidate) = polish(&x, &g) {
                let gc = gradient(q, b, &candidate);
                let rc = kkt_residual(&candidate, &gc, &project);
                if rc < residual {
                    x = candidate;
                    residual = rc;
                }
            }
        }
    }
    PgRun {
        x,
        iterations,
        residual,
        converged: residual <= tol,
    }
}

/// Solves the equality-constrained problem on the variables that are not
/// pinned at a bound by an outward-pointing gradient. Returns `None` when
/// the reduced Hessian is singular or the result leaves the box.
fn polish_box(qp: &BoxQp, x: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    let scale = 1e-12 * (1.0 + norm2(x));
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let at_lower = x[i] <= qp.lower[i] + scale && g[i] > 0.0;
            let at_upper = x[i] >= qp.upper[i] - scale && g[i] < 0.0;
            !(at_lower || at_upper)
        })
        .collect();
    let mut out = x.to_vec();
    for i in 0..n {
        if !free.contains(&i) {
            out[i] = if g[i] > 0.0 { qp.lower[i] } else { qp.upper[i] };
        }
    }
    if free.is_empty() {
        return Some(out);
    }
    let m = free.len();
    let mut qff = Matrix::zeros(m, m);
    let mut rhs = vec![0.0; m];
    for (a, &i) in free.iter().enumerate() {
        let mut r = -qp.b[i];
        for (j, o) in out.iter().enumerate() {
            if !free.contains(&j) {
                r -= qp.q[(i, j)] * o;
            }
        }
        rhs[a] = r;
        for (c, &j) in free.iter().enumerate() {
            qff[(a, c)] = qp.q[(i, j)];
        }
    }
    let l = qff.cholesky()?;
    let sol = Matrix::cholesky_solve(&l, &rhs);
    for (a, &i) in free.iter().enumerate() {
        if sol[a] < qp.lower[i] - 1e-14 || sol[a] > qp.upper[i] + 1e-14 || !sol[a].is_finite() {
            return None;
        }
        out[i] = sol[a].clamp(qp.lower[i], qp.upper[i]);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qp(q: Matrix, b: Vec<f64>, lo: f64, hi: f64) -> BoxQp {
        let n = b.len();
        BoxQp::new(q, b, vec![lo; n], vec![hi; n]).unwrap()
    }

    #[test]
    fn one_dimensional_upper_bound() {
        let p = qp(Matrix::identity(1), vec![-2.0], 0.0, 1.0);
        let s = solve_box_qp(&p, 1e-10).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        // grid oracle
        let best = (0..=10_000)
            .map(|k| k as f64 / 10_000.0)
            .min_by(|a, b| p.objective(&[*a]).total_cmp(&p.objective(&[*b])))
            .unwrap();
        assert!((best - s.x[0]).abs() < 1e-4);
    }

    #[test]
    fn one_dimensional_lower_bound() {
        let s = solve_box_qp(&qp(Matrix::identity(1), vec![0.5], 0.0, 1.0), 1e-10).unwrap();
        assert_eq!(s.x, vec![0.0]);
    }

    #[test]
    fn separable_clamp() {
        let s = solve_box_qp(&qp(Matrix::identity(2), vec![-0.25, -2.0], 0.0, 1.0), 1e-10).unwrap();
        assert!((s.x[0] - 0.25).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual <= 1e-10);
    }

    #[test]
    fn coupled_problem_with_semidefinite_hessian() {
        // rank-one Q: solutions form a segment; any KKT point is acceptable
        let q = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = qp(q, vec![-0.5, -0.5], 0.0, 1.0);
        let s = solve_box_qp(&p, 1e-10).unwrap();
        assert!((s.x[0] + s.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_problem() {
        let p = BoxQp::new(Matrix::zeros(0, 0), vec![], vec![], vec![]).unwrap();
        assert!(solve_box_qp(&p, 1e-10).unwrap().x.is_empty());
    }

    #[test]
    fn rejects_invalid() {
        assert!(BoxQp::new(Matrix::identity(2), vec![0.0], vec![0.0], vec![1.0]).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            BoxQp::new(asym, vec![0.0; 2], vec![0.0; 2], vec![1.0; 2]),
            Err(QpError::NotSymmetric)
        ));
        let p = qp(Matrix::identity(1), vec![1.0], 0.0, 1.0);
        assert!(matches!(solve_box_qp(&p, 0.0), Err(QpError::InvalidTolerance(_))));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let q = Matrix::from_rows(&[vec![1.0, 0.999], vec![0.999, 1.0]]).unwrap();
        let p = qp(q, vec![-3.0, 1.0], -10.0, 10.0);
        match solve_box_qp_with(&p, 1e-14, 1) {
            Err(QpError::NotConverged(best)) => assert_eq!(best.iterations, 1),
            Ok(s) => assert!(s.kkt_residual <= 1e-14),
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
