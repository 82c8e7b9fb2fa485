//! Reference distributions, critical values and test decisions.
//!
//! Levels are coverage levels `1 - alpha`; the critical value is the
//! quantile at that level. A test rejects only when the statistic is strictly
//! above the critical value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{DivergenceError, PhiSpec};
use crate::el::{solve_multiplier, ElError, ScoreMatrix, SolverConfig};
use crate::model::{BetaVector, Dataset};
use crate::special;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("{0}")]
    DomainError(String),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    El(#[from] ElError),
    #[error("empirical likelihood is infeasible at this coefficient vector: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approximation {
    #[serde(rename = "chi2")]
    Chi2,
    /// Critical value `((n-1)q/(n-q)) F_{q, n-q}`.
    #[serde(rename = "f_owen")]
    FOwen,
}

impl Approximation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Approximation::Chi2 => "chi2",
            Approximation::FOwen => "f_owen",
        }
    }
}

impl fmt::Display for Approximation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approximation {
    type Err = InferenceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chi2" => Ok(Approximation::Chi2),
            "f" | "f_owen" => Ok(Approximation::FOwen),
            other => Err(InferenceError::DomainError(format!(
                "unknown approximation {other:?}; expected chi2 or f"
            ))),
        }
    }
}

fn check_prob(p: f64, what: &str) -> Result<(), InferenceError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(InferenceError::DomainError(format!("{what} must lie in (0, 1), got {p}")))
    }
}

fn check_dof(dof: usize) -> Result<(), InferenceError> {
    if dof == 0 {
        Err(InferenceError::DomainError("degrees of freedom must be at least 1".into()))
    } else {
        Ok(())
    }
}

pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64, InferenceError> {
    check_dof(dof)?;
    check_prob(p, "probability")?;
    Ok(special::chi2_quantile(dof as f64, p))
}

pub fn chi2_sf(dof: usize, x: f64) -> Result<f64, InferenceError> {
    check_dof(dof)?;
    Ok(special::chi2_sf(dof as f64, x))
}

fn owen_scale(n: usize, q: usize) -> Result<f64, InferenceError> {
    check_dof(q)?;
    if n <= q {
        return Err(InferenceError::DomainError(format!("need n > q, got n = {n}, q = {q}")));
    }
    Ok(((n - 1) * q) as f64 / (n - q) as f64)
}

/// `((n-1)q/(n-q)) F^{-1}_{q, n-q}(level)`.
pub fn owen_critical(n: usize, q: usize, level: f64) -> Result<f64, InferenceError> {
    let scale = owen_scale(n, q)?;
    check_prob(level, "level")?;
    Ok(scale * special::f_quantile(q as f64, (n - q) as f64, level))
}

pub fn critical_value(
    approx: Approximation,
    n: usize,
    q: usize,
    level: f64,
) -> Result<f64, InferenceError> {
    match approx {
        Approximation::Chi2 => chi2_quantile(q, level),
        Approximation::FOwen => owen_critical(n, q, level),
    }
}

pub fn p_value(
    approx: Approximation,
    n: usize,
    q: usize,
    statistic: f64,
) -> Result<f64, InferenceError> {
    let x = statistic.max(0.0);
    match approx {
        Approximation::Chi2 => chi2_sf(q, x),
        Approximation::FOwen => {
            let scale = owen_scale(n, q)?;
            Ok(special::f_sf(q as f64, (n - q) as f64, x / scale))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub dof: usize,
    pub n: usize,
    pub level: f64,
    pub approx: Approximation,
    pub phi: PhiSpec,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
}

impl TestReport {
    /// Attaches critical value, p-value and decision to a statistic.
    pub fn decide(
        statistic: f64,
        n: usize,
        q: usize,
        level: f64,
        approx: Approximation,
        phi: PhiSpec,
    ) -> Result<Self, InferenceError> {
        let critical_value = critical_value(approx, n, q, level)?;
        let p_value = p_value(approx, n, q, statistic)?;
        Ok(Self {
            statistic,
            dof: q,
            n,
            level,
            approx,
            phi,
            critical_value,
            p_value,
            reject: statistic > critical_value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TestOutcome {
    Decided(TestReport),
    /// The EL problem has no solution at the hypothesised coefficients.
    Infeasible { reason: String },
}

fn is_infeasibility(e: &ElError) -> bool {
    matches!(
        e,
        ElError::InfeasiblePolyhedron | ElError::NoRoot { .. } | ElError::ConstraintViolation { .. }
    )
}

/// Tests `beta = beta0` with the selected divergence statistic.
pub fn run_test(
    dataset: &Dataset,
    beta0: &BetaVector,
    phi: &PhiSpec,
    level: f64,
    approx: Approximation,
    solver: &SolverConfig,
) -> Result<TestOutcome, InferenceError> {
    check_prob(level, "level")?;
    let g = ScoreMatrix::from_dataset(dataset, beta0)?;
    let sol = match solve_multiplier(&g, solver) {
        Ok(s) => s,
        Err(e) if is_infeasibility(&e) => {
            return Ok(TestOutcome::Infeasible {
                reason: e.to_string(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let statistic = phi.statistic(&g.gammas(&sol.t))?;
    let report = TestReport::decide(statistic, dataset.n(), dataset.q(), level, approx, *phi)?;
    Ok(TestOutcome::Decided(report))
}

/// Whether `beta` lies in the confidence region `{beta : T(beta) < c}`.
pub fn confidence_region_contains(
    dataset: &Dataset,
    beta: &BetaVector,
    phi: &PhiSpec,
    level: f64,
    approx: Approximation,
    solver: &SolverConfig,
) -> Result<bool, InferenceError> {
    match run_test(dataset, beta, phi, level, approx, solver)? {
        TestOutcome::Decided(r) => Ok(!r.reject),
        TestOutcome::Infeasible { reason } => Err(InferenceError::Infeasible(reason)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_mle, generate_sample, SimulationModel};
    use proptest::prelude::*;

    #[test]
    fn chi2_closed_forms() {
        assert!((chi2_quantile(2, 0.90).unwrap() - (-2.0 * 0.1f64.ln())).abs() < 1e-10);
        assert!((chi2_quantile(2, 0.95).unwrap() - 5.991_464_547_107_979).abs() < 1e-9);
        assert!(chi2_quantile(2, 1.0).is_err());
        assert!(chi2_quantile(0, 0.5).is_err());
    }

    #[test]
    fn owen_limits() {
        let big = owen_critical(1_000_000, 2, 0.90).unwrap();
        assert!((big - 4.605_170).abs() < 1e-3);
        assert!(owen_critical(50, 2, 0.90).unwrap() > chi2_quantile(2, 0.90).unwrap());
        let mut prev = f64::INFINITY;
        for n in [5, 10, 50, 200, 1000, 10_000] {
            let c = owen_critical(n, 2, 0.95).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(owen_critical(2, 2, 0.9).is_err());
    }

    #[test]
    fn boundary_is_not_rejected() {
        let c = chi2_quantile(2, 0.9).unwrap();
        let r = TestReport::decide(c, 100, 2, 0.9, Approximation::Chi2, PhiSpec::Power { a: 0.0 })
            .unwrap();
        assert!(!r.reject);
        assert!((r.p_value - 0.1).abs() < 1e-9);
    }

    #[test]
    fn mle_is_never_rejected() {
        let m = SimulationModel::reference_models()[0];
        let ds = generate_sample(&m, 120, 4).unwrap();
        let bhat = fit_mle(&ds, &BetaVector::zeros(2), 1e-12, 100).unwrap();
        let spec = PhiSpec::Power { a: 1.0 };
        let out = run_test(&ds, &bhat, &spec, 0.95, Approximation::Chi2, &SolverConfig::default())
            .unwrap();
        let TestOutcome::Decided(r) = out else { panic!("infeasible at the MLE") };
        assert!(r.statistic.abs() < 1e-12 && !r.reject);
        assert!(confidence_region_contains(
            &ds,
            &bhat,
            &spec,
            0.95,
            Approximation::FOwen,
            &SolverConfig::default()
        )
        .unwrap());
    }

    #[test]
    fn far_coefficients_leave_the_region() {
        let m = SimulationModel::reference_models()[1];
        let ds = generate_sample(&m, 150, 8).unwrap();
        let bhat = fit_mle(&ds, &BetaVector::zeros(2), 1e-12, 100).unwrap();
        let spec = PhiSpec::Power { a: 0.0 };
        let cfg = SolverConfig::default();
        let mut left = false;
        for k in 1..40 {
            let s = 0.1 * k as f64;
            let b = BetaVector::new(vec![bhat.as_slice()[0] + s, bhat.as_slice()[1] - s]).unwrap();
            match run_test(&ds, &b, &spec, 0.95, Approximation::Chi2, &cfg).unwrap() {
                TestOutcome::Decided(r) if r.reject => {
                    left = true;
                    break;
                }
                TestOutcome::Infeasible { .. } => {
                    left = true;
                    break;
                }
                _ => {}
            }
        }
        assert!(left);
    }

    #[test]
    fn infeasible_is_a_distinct_outcome() {
        let m = SimulationModel::reference_models()[0];
        let ds = generate_sample(&m, 30, 2).unwrap();
        let b = BetaVector::new(vec![40.0, 0.0]).unwrap();
        let out = run_test(
            &ds,
            &b,
            &PhiSpec::Power { a: 0.0 },
            0.9,
            Approximation::Chi2,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(matches!(out, TestOutcome::Infeasible { .. }));
    }

    proptest! {
        #[test]
        fn quantile_survival_round_trip(dof in 1_usize..12, p in 0.01_f64..0.99) {
            let x = chi2_quantile(dof, p).unwrap();
            prop_assert!((chi2_sf(dof, x).unwrap() - (1.0 - p)).abs() < 1e-9);
        }

        #[test]
        fn p_value_agrees_with_decision(stat in 0.0_f64..20.0, level in 0.5_f64..0.99, n in 5_usize..500) {
            for approx in [Approximation::Chi2, Approximation::FOwen] {
                let r = TestReport::decide(stat, n, 2, level, approx, PhiSpec::Power { a: 0.0 }).unwrap();
                let alpha = 1.0 - level;
                if (r.p_value - alpha).abs() > 1e-9 {
                    prop_assert_eq!(r.p_value < alpha, r.reject);
                }
            }
        }
    }
}
