//! Inverse-Hessian approximations maintained by BFGS updates.
//!
//! The stored operator is the *inverse* Hessian approximation, so
//! [`InverseHessian::apply`] returns the product that the search-direction
//! and stationarity formulas need directly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::linalg::{axpy, check_dim, dot, norm2, Matrix};
use super::NumericsError;

/// Default history length for the limited-memory representation.
pub const DEFAULT_MEMORY: usize = 20;

/// Pairs whose curvature `yᵀs` falls below this multiple of `‖s‖‖y‖` are
/// rejected, which keeps the approximation positive definite.
pub const CURVATURE_SKIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum HessianMode {
    #[default]
    Full,
    Limited {
        memory: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    /// `yᵀs` too small; the approximation was left unchanged.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Full(Matrix),
    Limited {
        memory: usize,
        pairs: VecDeque<CurvaturePair>,
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseHessian {
    dim: usize,
    repr: Repr,
    /// Scale `H₀` by `yᵀs / yᵀy` at the first applied update.
    scale_initial: bool,
    updates: usize,
}

impl InverseHessian {
    /// `H₀ = I` in the requested representation.
    pub fn new(dim: usize, mode: HessianMode) -> Self {
        let repr = match mode {
            HessianMode::Full => Repr::Full(Matrix::identity(dim)),
            HessianMode::Limited { memory } => Repr::Limited {
                memory: memory.max(1),
                pairs: VecDeque::with_capacity(memory.max(1)),
                gamma: 1.0,
            },
        };
        Self {
            dim,
            repr,
            scale_initial: false,
            updates: 0,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, HessianMode::Full)
    }

    pub fn limited(dim: usize, memory: usize) -> Self {
        Self::new(dim, HessianMode::Limited { memory })
    }

    /// Full-mode approximation starting from an arbitrary SPD matrix.
    pub fn from_matrix(h: Matrix) -> Result<Self, NumericsError> {
        check_dim(h.rows(), h.cols())?;
        Ok(Self {
            dim: h.rows(),
            repr: Repr::Full(h),
            scale_initial: false,
            updates: 0,
        })
    }

    /// Enables the one-time `H₀` rescaling. Warm starts that must replay a
    /// previous trajectory exactly need this off.
    pub fn with_initial_scaling(mut self, on: bool) -> Self {
        self.scale_initial = on;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> HessianMode {
        match &self.repr {
            Repr::Full(_) => HessianMode::Full,
            Repr::Limited { memory, .. } => HessianMode::Limited { memory: *memory },
        }
    }

    /// Number of updates applied so far (skipped pairs not counted).
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Inverse BFGS update `H' = (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> Result<UpdateStatus, NumericsError> {
        check_dim(self.dim, s.len())?;
        check_dim(self.dim, y.len())?;
        let sy = dot(s, y);
        if !sy.is_finite() {
            return Err(NumericsError::NonFinite("curvature pair"));
        }
        if sy <= CURVATURE_SKIP * norm2(s) * norm2(y) {
            return Ok(UpdateStatus::Skipped);
        }
        let rho = 1.0 / sy;
        let first = self.updates == 0;
        let gamma0 = sy / dot(y, y);
        match &mut self.repr {
            Repr::Full(h) => {
                if first && self.scale_initial {
                    *h = Matrix::identity(self.dim);
                    for i in 0..self.dim {
                        h[(i, i)] = gamma0;
                    }
                }
                let hy = h.mul_vec(y)?;
                let yhy = dot(y, &hy);
                let c = rho * rho * yhy + rho;
                for i in 0..self.dim {
                    let row = h.row_mut(i);
                    for (j, hij) in row.iter_mut().enumerate() {
                        *hij += -rho * (s[i] * hy[j] + hy[i] * s[j]) + c * s[i] * s[j];
                    }
                }
                h.symmetrize();
            }
            Repr::Limited { memory, pairs, gamma } => {
                if first && self.scale_initial {
                    *gamma = gamma0;
                }
                if pairs.len() == *memory {
                    pairs.pop_front();
                }
                pairs.push_back(CurvaturePair {
                    s: s.to_vec(),
                    y: y.to_vec(),
                    rho,
                });
            }
        }
        self.updates += 1;
        Ok(UpdateStatus::Applied)
    }

    /// Returns `H·g`. Limited-memory mode uses the two-loop recursion.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>, NumericsError> {
        check_dim(self.dim, g.len())?;
        match &self.repr {
            Repr::Full(h) => h.mul_vec(g),
            Repr::Limited { pairs, gamma, .. } => {
                let mut q = g.to_vec();
                let mut alpha = vec![0.0; pairs.len()];
                for (i, p) in pairs.iter().enumerate().rev() {
                    alpha[i] = p.rho * dot(&p.s, &q);
                    axpy(-alpha[i], &p.y, &mut q);
                }
                for qi in q.iter_mut() {
                    *qi *= *gamma;
                }
                for (i, p) in pairs.iter().enumerate() {
                    let beta = p.rho * dot(&p.y, &q);
                    axpy(alpha[i] - beta, &p.s, &mut q);
                }
                Ok(q)
            }
        }
    }

    /// Dense copy of the operator (column-by-column application in
    /// limited-memory mode).
    pub fn to_dense(&self) -> Matrix {
        match &self.repr {
            Repr::Full(h) => h.clone(),
            Repr::Limited { .. } => {
                let mut m = Matrix::zeros(self.dim, self.dim);
                let mut e = vec![0.0; self.dim];
                for j in 0..self.dim {
                    e[j] = 1.0;
                    let col = self.apply(&e).expect("dimension checked");
                    for (i, c) in col.iter().enumerate() {
                        m[(i, j)] = *c;
                    }
                    e[j] = 0.0;
                }
                m
            }
        }
    }
}
