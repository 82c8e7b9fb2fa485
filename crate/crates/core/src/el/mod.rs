//! The empirical-likelihood inner problem at a fixed coefficient vector:
//! feasibility diagnostics, multiplier bounds, the multiplier solve, the
//! implied weights and the empirical log-likelihood kernel.

mod bounds;
mod lp;
mod solver;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sigmoid, BetaVector, Dataset, ModelError};

pub use bounds::{Interval, MultiplierBounds, DEFAULT_CONSTRAINT_CAP};
pub use solver::solve_multiplier;

#[derive(Debug, Error)]
pub enum ElError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("score matrix has non-finite entries")]
    NonFinite,
    #[error("score matrix needs at least q = {q} rows, got {n}")]
    TooFewRows { n: usize, q: usize },
    #[error("1 + t'g_{index} falls below 1/n")]
    ConstraintViolation { index: usize },
    #[error("multiplier polyhedron is unbounded: the origin is not interior to the convex hull of the scores")]
    InfeasiblePolyhedron,
    #[error("Fourier-Motzkin elimination would create {count} constraints (cap {cap})")]
    TooManyConstraints { count: usize, cap: usize },
    #[error("no start converged; best residual {best_residual:e}")]
    NoRoot { best_residual: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Scores `g(x_i, y_i, beta)` stacked row-wise (`n x q`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<f64>,
    n: usize,
    q: usize,
}

impl ScoreMatrix {
    pub fn new(rows: Vec<f64>, q: usize) -> Result<Self, ElError> {
        if q == 0 || !rows.len().is_multiple_of(q) {
            return Err(ElError::DimensionMismatch {
                expected: q.max(1),
                found: rows.len(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(ElError::NonFinite);
        }
        let n = rows.len() / q;
        if n < q.max(2) {
            return Err(ElError::TooFewRows { n, q });
        }
        Ok(Self { rows, n, q })
    }

    pub fn from_dataset(dataset: &Dataset, beta: &BetaVector) -> Result<Self, ElError> {
        if dataset.q() != beta.len() {
            return Err(ModelError::DimensionMismatch {
                expected: dataset.q(),
                found: beta.len(),
            }
            .into());
        }
        let mut rows = Vec::with_capacity(dataset.n() * dataset.q());
        for (x, y) in dataset.observations() {
            let r = f64::from(y) - sigmoid(beta.linear_predictor(x));
            rows.extend(x.iter().map(|v| v * r));
        }
        Self::new(rows, dataset.q())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.q..(i + 1) * self.q]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.rows.chunks_exact(self.q)
    }

    pub(crate) fn permute_columns(&self, order: &[usize]) -> ScoreMatrix {
        let rows = self
            .iter()
            .flat_map(|r| order.iter().map(move |&j| r[j]))
            .collect();
        ScoreMatrix {
            rows,
            n: self.n,
            q: self.q,
        }
    }

    /// `gamma_i = t' g_i`.
    pub fn gammas(&self, t: &[f64]) -> Vec<f64> {
        self.iter()
            .map(|g| g.iter().zip(t).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `(1/n) sum_i g_i / (1 + t' g_i)`, the multiplier system.
    pub fn system(&self, t: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.q];
        for g in self.iter() {
            let d = 1.0 + g.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
            for (acc, v) in h.iter_mut().zip(g) {
                *acc += v / d;
            }
        }
        let inv = 1.0 / self.n as f64;
        h.iter_mut().for_each(|v| *v *= inv);
        h
    }

    /// `-(1/n) sum_i g_i g_i' / (1 + t' g_i)^2`, the Jacobian of [`Self::system`].
    pub fn system_jacobian(&self, t: &[f64]) -> DMatrix<f64> {
        let q = self.q;
        let mut j = DMatrix::<f64>::zeros(q, q);
        for g in self.iter() {
            let d = 1.0 + g.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
            let w = 1.0 / (d * d);
            for a in 0..q {
                for b in a..q {
                    j[(a, b)] -= w * g[a] * g[b];
                }
            }
        }
        let inv = 1.0 / self.n as f64;
        for a in 0..q {
            for b in 0..a {
                j[(a, b)] = j[(b, a)];
            }
        }
        j * inv
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let q = self.q;
        let mut s = DMatrix::<f64>::zeros(q, q);
        for g in self.iter() {
            for a in 0..q {
                for b in 0..q {
                    s[(a, b)] += g[a] * g[b];
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub hull_contains_origin: bool,
    pub gram_positive_definite: bool,
    pub min_eigenvalue: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.hull_contains_origin && self.gram_positive_definite
    }
}

/// Convex-hull membership of the origin (phase-one LP) and positive
/// definiteness of `sum g g'`.
pub fn feasibility_check(g: &ScoreMatrix) -> FeasibilityReport {
    let hull = lp::origin_in_hull(g.as_row_major(), g.n(), g.q());
    let eig = g.gram().symmetric_eigenvalues();
    let min_eigenvalue = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    FeasibilityReport {
        hull_contains_origin: hull,
        gram_positive_definite: min_eigenvalue > 0.0,
        min_eigenvalue,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Grid starts tried besides the origin. With 0 only the origin is used,
    /// which suffices whenever the root is known to be unique.
    pub n_start: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_start: 50,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierSolution {
    pub t: Vec<f64>,
    pub residual_norm: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Index of the winning start; `n_start` denotes the origin fallback.
    pub start_index: usize,
}

/// `p_i = (1/n) / (1 + t' g_i)`. Normalization holds only at a root.
pub fn weights(g: &ScoreMatrix, t: &[f64]) -> Result<Vec<f64>, ElError> {
    if t.len() != g.q() {
        return Err(ElError::DimensionMismatch {
            expected: g.q(),
            found: t.len(),
        });
    }
    let n = g.n() as f64;
    let floor = 1.0 / n;
    g.gammas(t)
        .into_iter()
        .enumerate()
        .map(|(i, gamma)| {
            let d = 1.0 + gamma;
            // Tiny slack absorbs rounding for weights sitting exactly on the bound.
            if d < floor * (1.0 - 1e-12) {
                Err(ElError::ConstraintViolation { index: i })
            } else {
                Ok(1.0 / (n * d))
            }
        })
        .collect()
}

/// `-sum_i log(1 + t' g_i)` at the solved multiplier.
pub fn loglik_from_solution(g: &ScoreMatrix, solution: &MultiplierSolution) -> f64 {
    -g.gammas(&solution.t).into_iter().map(f64::ln_1p).sum::<f64>()
}

/// Kernel of the empirical log-likelihood at `beta`.
pub fn empirical_loglik(
    dataset: &Dataset,
    beta: &BetaVector,
    config: &SolverConfig,
) -> Result<f64, ElError> {
    let g = ScoreMatrix::from_dataset(dataset, beta)?;
    let sol = solve_multiplier(&g, config)?;
    Ok(loglik_from_solution(&g, &sol))
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    pub t: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub start_index: usize,
    pub bounds: Vec<Interval>,
    pub feasibility: FeasibilityReport,
}

impl SolverDiagnostics {
    pub fn collect(g: &ScoreMatrix, solution: &MultiplierSolution) -> Self {
        Self {
            t: solution.t.clone(),
            residual: solution.residual_norm,
            iterations: solution.iterations,
            start_index: solution.start_index,
            bounds: MultiplierBounds::projections(g).unwrap_or_default(),
            feasibility: feasibility_check(g),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}
