//! Population quantities under a fixed alternative and the resulting power
//! approximation and sample-size formula.
//!
//! Expectations are over `X ~ N(0, 1)` (see [`crate::quadrature`]) and
//! `Y | X ~ Bernoulli(sigmoid(beta*' (1, X)))` (exact two-point sum), with the
//! score evaluated at the null coefficients.

use std::fmt;
use std::ops::{AddAssign, Mul};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::PhiFamily;
use crate::inference::{chi2_quantile, InferenceError};
use crate::model::{sigmoid, BetaVector};
use crate::quadrature::NormalQuadrature;
use crate::special::{normal_cdf, normal_quantile};

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("the power design has an intercept and one covariate; got {0} coefficients")]
    UnsupportedDesign(usize),
    #[error("no tau solves the population equation (residual {residual:e})")]
    NoRoot { residual: f64 },
    #[error("matrix n(beta0, beta*) is singular")]
    SingularMatrix,
    #[error("alternative is degenerate: the variance of the divergence vanishes")]
    DegenerateAlternative,
    #[error("{0}")]
    DomainError(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Covariate law of the alternative; only the simulation design is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    #[default]
    StandardNormalWithIntercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeSpec {
    pub beta_null: BetaVector,
    pub beta_star: BetaVector,
    #[serde(default)]
    pub covariate_law: CovariateLaw,
}

impl AlternativeSpec {
    pub fn new(beta_null: BetaVector, beta_star: BetaVector) -> Result<Self, PowerError> {
        for b in [&beta_null, &beta_star] {
            if b.len() != 2 {
                return Err(PowerError::UnsupportedDesign(b.len()));
            }
        }
        Ok(Self {
            beta_null,
            beta_star,
            covariate_law: CovariateLaw::StandardNormalWithIntercept,
        })
    }

    /// `true` when the alternative coincides with the null.
    pub fn is_null(&self) -> bool {
        self.beta_null == self.beta_star
    }
}

/// Which variance enters the normal approximation of the divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `m' n^-1 E[h] E[h]' n^-1 m` with `h = g/(1+tau'g)`. Since `E[h] = 0`
    /// at the root this is zero up to rounding and is reported as degenerate.
    AsPrinted,
    /// `m' n^-1 E[h h'] n^-1 m`: the variance carried by the multiplier alone.
    ScoreCovariance,
    /// `Var(f - m' n^-1 h)` with `f = phi(1+tau'g)/(1+tau'g)`: first-order
    /// variance of the plug-in divergence, including its own sampling noise.
    #[default]
    DeltaMethod,
}

impl SigmaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SigmaMode::AsPrinted => "as_printed",
            SigmaMode::ScoreCovariance => "score_covariance",
            SigmaMode::DeltaMethod => "delta_method",
        }
    }
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SigmaMode {
    type Err = PowerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as_printed" => Ok(SigmaMode::AsPrinted),
            "score_covariance" => Ok(SigmaMode::ScoreCovariance),
            "delta_method" => Ok(SigmaMode::DeltaMethod),
            other => Err(PowerError::DomainError(format!(
                "unknown sigma mode {other:?}; expected as_printed, score_covariance or delta_method"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub quad_order: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub sigma_mode: SigmaMode,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            quad_order: 40,
            tol: 1e-12,
            max_iter: 100,
            sigma_mode: SigmaMode::default(),
        }
    }
}

impl PowerConfig {
    fn validate(&self) -> Result<(), PowerError> {
        if self.quad_order < 20 {
            return Err(PowerError::DomainError(format!(
                "quadrature order must be at least 20, got {}",
                self.quad_order
            )));
        }
        if !(self.tol > 0.0) {
            return Err(PowerError::DomainError("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationMoments {
    pub tau: Vec<f64>,
    pub m_vec: Vec<f64>,
    pub n_mat: Vec<Vec<f64>>,
    pub sigma_sq: f64,
    pub sigma_mode: SigmaMode,
}

/// `E_{beta*}[f(x, y)]` with `x = (1, X)`.
pub fn population_expectation<T, F>(beta_star: &BetaVector, quad_order: usize, zero: T, f: F) -> T
where
    T: AddAssign + Mul<f64, Output = T>,
    F: Fn(&[f64; 2], u8) -> T,
{
    let quad = NormalQuadrature::new(quad_order);
    expect_with(&quad, beta_star, zero, f)
}

fn expect_with<T, F>(quad: &NormalQuadrature, beta_star: &BetaVector, zero: T, f: F) -> T
where
    T: AddAssign + Mul<f64, Output = T>,
    F: Fn(&[f64; 2], u8) -> T,
{
    let b = beta_star.as_slice();
    let mut acc = zero;
    for (x, w) in quad.iter() {
        let xv = [1.0, x];
        let p1 = sigmoid(b[0] + b[1] * x);
        acc += f(&xv, 1) * (w * p1);
        acc += f(&xv, 0) * (w * (1.0 - p1));
    }
    acc
}

fn score_at(x: &[f64; 2], y: u8, beta: &[f64]) -> [f64; 2] {
    let r = f64::from(y) - sigmoid(beta[0] + beta[1] * x[1]);
    [x[0] * r, x[1] * r]
}

/// Smallest `1 + tau'g` admitted at a quadrature node.
const DOMAIN_FLOOR: f64 = 1e-12;

struct Population<'a> {
    quad: NormalQuadrature,
    spec: &'a AlternativeSpec,
}

impl Population<'_> {
    fn new(spec: &AlternativeSpec, quad_order: usize) -> Population<'_> {
        Population {
            quad: NormalQuadrature::new(quad_order),
            spec,
        }
    }

    fn expect<T, F>(&self, zero: T, f: F) -> T
    where
        T: AddAssign + Mul<f64, Output = T>,
        F: Fn([f64; 2]) -> T,
    {
        let b0 = self.spec.beta_null.as_slice();
        expect_with(&self.quad, &self.spec.beta_star, zero, |x, y| f(score_at(x, y, b0)))
    }

    /// Minimum of `1 + tau'g` over nodes carrying positive mass.
    fn min_denominator(&self, tau: &[f64]) -> f64 {
        let b0 = self.spec.beta_null.as_slice();
        let bs = self.spec.beta_star.as_slice();
        let mut m = f64::INFINITY;
        for &x in self.quad.nodes() {
            let xv = [1.0, x];
            let p1 = sigmoid(bs[0] + bs[1] * x);
            for (y, py) in [(1u8, p1), (0u8, 1.0 - p1)] {
                if py > 0.0 {
                    let g = score_at(&xv, y, b0);
                    m = m.min(1.0 + tau[0] * g[0] + tau[1] * g[1]);
                }
            }
        }
        m
    }

    fn objective(&self, tau: &[f64]) -> Option<f64> {
        if self.min_denominator(tau) < DOMAIN_FLOOR {
            return None;
        }
        Some(-self.expect(0.0, |g| (tau[0] * g[0] + tau[1] * g[1]).ln_1p()))
    }

    fn system(&self, tau: &[f64]) -> DVector<f64> {
        self.expect(DVector::zeros(2), |g| {
            let d = 1.0 + tau[0] * g[0] + tau[1] * g[1];
            DVector::from_column_slice(&[g[0] / d, g[1] / d])
        })
    }

    /// `n(tau) = -E[g g' / (1 + tau'g)^2]`.
    fn n_mat(&self, tau: &[f64]) -> DMatrix<f64> {
        -self.expect(DMatrix::zeros(2, 2), |g| {
            let d = 1.0 + tau[0] * g[0] + tau[1] * g[1];
            let w = 1.0 / (d * d);
            DMatrix::from_row_slice(2, 2, &[w * g[0] * g[0], w * g[0] * g[1], w * g[1] * g[0], w * g[1] * g[1]])
        })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `E_{beta*}[g(X, Y, beta0) / (1 + tau'g)] = 0` by damped Newton on
/// the convex potential `-E[log(1 + tau'g)]`.
pub fn solve_tau(spec: &AlternativeSpec, config: &PowerConfig) -> Result<Vec<f64>, PowerError> {
    config.validate()?;
    let pop = Population::new(spec, config.quad_order);
    let mut tau = vec![0.0, 0.0];
    let mut f = pop.objective(&tau).ok_or(PowerError::NoRoot {
        residual: f64::INFINITY,
    })?;
    let mut h = pop.system(&tau);
    let mut res = inf_norm(&h);
    for _ in 0..config.max_iter {
        if res <= config.tol {
            break;
        }
        let hess = -pop.n_mat(&tau);
        let Some(chol) = hess.cholesky() else {
            return Err(PowerError::SingularMatrix);
        };
        let d = chol.solve(&h);
        let slope = h.dot(&d);
        let mut s = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = vec![tau[0] + s * d[0], tau[1] + s * d[1]];
            if let Some(fc) = pop.objective(&cand) {
                let hc = pop.system(&cand);
                let rc = inf_norm(&hc);
                if fc <= f - 1e-4 * s * slope || rc < res {
                    tau = cand;
                    f = fc;
                    h = hc;
                    res = rc;
                    moved = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if res <= config.tol {
        Ok(tau)
    } else {
        Err(PowerError::NoRoot { residual: res })
    }
}

fn psi(phi: &PhiFamily, x: f64) -> f64 {
    -phi.phi(x) / x + phi.dphi(x)
}

/// `m`, `n` and `sigma^2` at a solved `tau`.
pub fn compute_moments(
    spec: &AlternativeSpec,
    tau: &[f64],
    phi: &PhiFamily,
    config: &PowerConfig,
) -> Result<PopulationMoments, PowerError> {
    config.validate()?;
    let pop = Population::new(spec, config.quad_order);
    if pop.min_denominator(tau) < DOMAIN_FLOOR {
        return Err(PowerError::NoRoot {
            residual: f64::INFINITY,
        });
    }
    let gamma = |g: &[f64; 2]| tau[0] * g[0] + tau[1] * g[1];
    let m = pop.expect(DVector::zeros(2), |g| {
        let x = 1.0 + gamma(&g);
        let s = psi(phi, x) / x;
        DVector::from_column_slice(&[g[0] * s, g[1] * s])
    });
    let n_mat = pop.n_mat(tau);
    let n_inv = n_mat
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or(PowerError::SingularMatrix)?;
    let a = &n_inv * &m;
    let sigma_sq = match config.sigma_mode {
        SigmaMode::AsPrinted => {
            let e = pop.system(tau);
            let v = a.dot(&e);
            v * v
        }
        SigmaMode::ScoreCovariance => {
            // E[h h'] = -n.
            -(m.dot(&a))
        }
        SigmaMode::DeltaMethod => {
            let d = pop.expect(0.0, |g| {
                let x = 1.0 + gamma(&g);
                phi.phi(x) / x
            });
            pop.expect(0.0, |g| {
                let x = 1.0 + gamma(&g);
                let lin = a[0] * g[0] / x + a[1] * g[1] / x;
                let v = phi.phi(x) / x - d - lin;
                v * v
            })
        }
    };
    Ok(PopulationMoments {
        tau: tau.to_vec(),
        m_vec: m.iter().copied().collect(),
        n_mat: (0..2).map(|i| (0..2).map(|j| n_mat[(i, j)]).collect()).collect(),
        sigma_sq: sigma_sq.max(0.0),
        sigma_mode: config.sigma_mode,
    })
}

/// `D_phi(tau) = E[phi(1 + tau'g) / (1 + tau'g)]`.
pub fn population_divergence(
    spec: &AlternativeSpec,
    tau: &[f64],
    phi: &PhiFamily,
    config: &PowerConfig,
) -> Result<f64, PowerError> {
    config.validate()?;
    let pop = Population::new(spec, config.quad_order);
    if pop.min_denominator(tau) < DOMAIN_FLOOR {
        return Err(PowerError::NoRoot {
            residual: f64::INFINITY,
        });
    }
    Ok(pop.expect(0.0, |g| {
        let x = 1.0 + tau[0] * g[0] + tau[1] * g[1];
        phi.phi(x) / x
    }))
}

/// Everything the power and sample-size formulas need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerInputs {
    pub tau: Vec<f64>,
    pub d_phi: f64,
    pub sigma_sq: f64,
    pub sigma_mode: SigmaMode,
    pub chi2: f64,
    pub d2phi_one: f64,
}

fn check_level(level: f64) -> Result<(), PowerError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(PowerError::DomainError(format!("level must lie in (0, 1), got {level}")))
    }
}

pub fn power_inputs(
    spec: &AlternativeSpec,
    level: f64,
    phi: &PhiFamily,
    config: &PowerConfig,
) -> Result<PowerInputs, PowerError> {
    check_level(level)?;
    if spec.is_null() {
        return Err(PowerError::DegenerateAlternative);
    }
    let tau = solve_tau(spec, config)?;
    let moments = compute_moments(spec, &tau, phi, config)?;
    let d_phi = population_divergence(spec, &tau, phi, config)?;
    // The printed variance is zero at the root up to rounding; anything at the
    // level of the root residual counts as zero.
    let reference = {
        let cfg = PowerConfig {
            sigma_mode: SigmaMode::ScoreCovariance,
            ..*config
        };
        compute_moments(spec, &tau, phi, &cfg)?.sigma_sq
    };
    if !(moments.sigma_sq > 1e-12 * reference) || !(d_phi > 0.0) {
        return Err(PowerError::DegenerateAlternative);
    }
    Ok(PowerInputs {
        tau,
        d_phi,
        sigma_sq: moments.sigma_sq,
        sigma_mode: config.sigma_mode,
        chi2: chi2_quantile(2, level)?,
        d2phi_one: phi.d2phi(1.0),
    })
}

impl PowerInputs {
    /// `1 - Phi( sqrt(n / sigma^2) (chi2 phi''(1) / (2n) - D) )`.
    pub fn power_at(&self, n: f64) -> f64 {
        let z = (n / self.sigma_sq).sqrt() * (self.chi2 * self.d2phi_one / (2.0 * n) - self.d_phi);
        1.0 - normal_cdf(z)
    }

    /// Real-valued sample size at which [`Self::power_at`] equals
    /// `target_power`, and the two terms `A`, `B` it is assembled from.
    pub fn sample_size(&self, target_power: f64) -> Result<SampleSizeReport, PowerError> {
        if !(target_power > 0.0 && target_power < 1.0) {
            return Err(PowerError::DomainError(format!(
                "target power must lie in (0, 1), got {target_power}"
            )));
        }
        let d = self.d_phi;
        let z = normal_quantile(1.0 - target_power);
        let a_term = 2.0 * self.chi2 * self.d2phi_one * d;
        let b_term = self.sigma_sq * z * z;
        let root = 2.0 * (b_term * (b_term + a_term)).sqrt();
        // The + root solves the equation for target power >= 1/2; below 1/2 the
        // other root is the one on the correct side of the crossing point.
        let n_real = if z <= 0.0 {
            (a_term + 2.0 * b_term + root) / (4.0 * d * d)
        } else {
            (a_term + 2.0 * b_term - root) / (4.0 * d * d)
        };
        let n_star = n_real.floor() as u64 + 1;
        Ok(SampleSizeReport {
            a_term,
            b_term,
            n_real,
            n_star,
            target_power,
            achieved_power: self.power_at(n_star as f64),
            tau: self.tau.clone(),
            d_phi: self.d_phi,
            sigma_sq: self.sigma_sq,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub tau: Vec<f64>,
    pub d_phi: f64,
    pub sigma_sq: f64,
    pub n: u64,
    pub level: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeReport {
    #[serde(rename = "A")]
    pub a_term: f64,
    #[serde(rename = "B")]
    pub b_term: f64,
    pub n_real: f64,
    pub n_star: u64,
    pub target_power: f64,
    pub achieved_power: f64,
    pub tau: Vec<f64>,
    pub d_phi: f64,
    pub sigma_sq: f64,
}

/// Asymptotic power of the level-`level` test at sample size `n`.
pub fn power_approx(
    spec: &AlternativeSpec,
    n: u64,
    level: f64,
    phi: &PhiFamily,
    config: &PowerConfig,
) -> Result<PowerReport, PowerError> {
    if n == 0 {
        return Err(PowerError::DomainError("sample size must be positive".into()));
    }
    let inputs = power_inputs(spec, level, phi, config)?;
    Ok(PowerReport {
        power: inputs.power_at(n as f64),
        tau: inputs.tau,
        d_phi: inputs.d_phi,
        sigma_sq: inputs.sigma_sq,
        n,
        level,
    })
}

/// Smallest integer above the real solution of `power = target_power`.
pub fn sample_size(
    spec: &AlternativeSpec,
    level: f64,
    target_power: f64,
    phi: &PhiFamily,
    config: &PowerConfig,
) -> Result<SampleSizeReport, PowerError> {
    power_inputs(spec, level, phi, config)?.sample_size(target_power)
}
