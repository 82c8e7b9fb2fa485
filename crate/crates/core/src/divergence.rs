//! Divergence generators and the empirical divergence statistics built on
//! the EL multiplier.
//!
//! A [`PhiFamily`] is a base generator plus an optional linear term
//! `c (x - 1)`. The linear term never changes a divergence between
//! probability vectors, and at a multiplier root it does not change the
//! statistic either; it exists so that the shift invariance can be exercised.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::el::{solve_multiplier, ElError, MultiplierSolution, ScoreMatrix, SolverConfig};
use crate::model::{BetaVector, Dataset};

/// Distance from a removable singularity of the power family below which the
/// logarithmic limit is used.
const LIMIT_BRANCH: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("argument {0} outside the domain x > 0")]
    DomainError(f64),
    #[error("invalid parameter: {0}")]
    ParameterError(String),
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cannot parse divergence spec {spec:?}: {reason}")]
    Parse { spec: String, reason: String },
    #[error(transparent)]
    El(#[from] ElError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiKind {
    /// Cressie–Read family `(x^(a+1) - x - a(x-1)) / (a(a+1))`.
    Power { a: f64 },
    /// `(x^a - a(x-1) - 1) / (a(a-1))`, the generator paired with the Rényi
    /// and Sharma–Mittal transforms.
    Renyi { a: f64 },
    /// `-sqrt(x) + (x+1)/2`.
    Bhattacharya,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiFamily {
    kind: PhiKind,
    linear: f64,
}

impl PhiFamily {
    pub fn power(a: f64) -> Self {
        Self {
            kind: PhiKind::Power { a },
            linear: 0.0,
        }
    }

    pub fn renyi(a: f64) -> Result<Self, DivergenceError> {
        check_renyi_a(a)?;
        Ok(Self {
            kind: PhiKind::Renyi { a },
            linear: 0.0,
        })
    }

    pub fn bhattacharya() -> Self {
        Self {
            kind: PhiKind::Bhattacharya,
            linear: 0.0,
        }
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn linear_term(&self) -> f64 {
        self.linear
    }

    /// Adds `c (x - 1)` to the generator.
    pub fn with_linear_term(self, c: f64) -> Self {
        Self {
            linear: self.linear + c,
            ..self
        }
    }

    fn base_phi(&self, x: f64) -> f64 {
        match self.kind {
            PhiKind::Power { a } => power_phi_value(a, x),
            PhiKind::Renyi { a } => power_phi_value(a - 1.0, x),
            PhiKind::Bhattacharya => -x.sqrt() + 0.5 * (x + 1.0),
        }
    }

    fn base_dphi(&self, x: f64) -> f64 {
        match self.kind {
            PhiKind::Power { a } => power_dphi_value(a, x),
            PhiKind::Renyi { a } => power_dphi_value(a - 1.0, x),
            PhiKind::Bhattacharya => 0.5 - 0.5 / x.sqrt(),
        }
    }

    /// `phi(x)` for `x > 0`.
    pub fn phi(&self, x: f64) -> f64 {
        self.base_phi(x) + self.linear * (x - 1.0)
    }

    pub fn dphi(&self, x: f64) -> f64 {
        self.base_dphi(x) + self.linear
    }

    pub fn d2phi(&self, x: f64) -> f64 {
        match self.kind {
            PhiKind::Power { a } => x.powf(a - 1.0),
            PhiKind::Renyi { a } => x.powf(a - 2.0),
            PhiKind::Bhattacharya => 0.25 * x.powf(-1.5),
        }
    }

    /// `phi(x)`, rejecting `x <= 0` and non-finite input.
    pub fn checked_phi(&self, x: f64) -> Result<f64, DivergenceError> {
        if x > 0.0 && x.is_finite() {
            Ok(self.phi(x))
        } else {
            Err(DivergenceError::DomainError(x))
        }
    }

    /// `lim_{x -> 0+} phi(x)`.
    pub fn value_at_zero(&self) -> f64 {
        let base = match self.kind {
            PhiKind::Power { a } => power_value_at_zero(a),
            PhiKind::Renyi { a } => power_value_at_zero(a - 1.0),
            PhiKind::Bhattacharya => 0.5,
        };
        base - self.linear
    }

    /// `lim_{x -> inf} phi(x) / x`.
    pub fn slope_at_infinity(&self) -> f64 {
        let base = match self.kind {
            PhiKind::Power { a } => power_slope_at_infinity(a),
            PhiKind::Renyi { a } => power_slope_at_infinity(a - 1.0),
            PhiKind::Bhattacharya => 0.5,
        };
        base + self.linear
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PhiFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PhiKind::Power { a } => write!(f, "power(a={a})")?,
            PhiKind::Renyi { a } => write!(f, "renyi-phi(a={a})")?,
            PhiKind::Bhattacharya => write!(f, "bhattacharya-phi")?,
        }
        if self.linear != 0.0 {
            write!(f, " + {}(x-1)", self.linear)?;
        }
        Ok(())
    }
}

fn power_phi_value(a: f64, x: f64) -> f64 {
    let lx = x.ln();
    if a.abs() < LIMIT_BRANCH {
        x * lx - x + 1.0
    } else if (a + 1.0).abs() < LIMIT_BRANCH {
        -lx + x - 1.0
    } else {
        (((a + 1.0) * lx).exp_m1() - (a + 1.0) * (x - 1.0)) / (a * (a + 1.0))
    }
}

fn power_dphi_value(a: f64, x: f64) -> f64 {
    let lx = x.ln();
    if a.abs() < LIMIT_BRANCH {
        lx
    } else {
        (a * lx).exp_m1() / a
    }
}

fn power_value_at_zero(a: f64) -> f64 {
    if a > -1.0 {
        1.0 / (a + 1.0)
    } else {
        f64::INFINITY
    }
}

fn power_slope_at_infinity(a: f64) -> f64 {
    if a >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / a
    }
}

fn check_renyi_a(a: f64) -> Result<(), DivergenceError> {
    if !a.is_finite() || a == 0.0 || a == 1.0 {
        return Err(DivergenceError::ParameterError(format!(
            "Renyi-type parameter a must be finite and outside {{0, 1}}, got {a}"
        )));
    }
    Ok(())
}

/// The power-divergence generator with index `a` (any real).
pub fn power_phi(a: f64) -> PhiFamily {
    PhiFamily::power(a)
}

/// Increasing transform `h` with `h(0) = 0` applied to a phi-divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HFunction {
    Identity,
    /// `log(1 + a(a-1)x) / (a(a-1))`.
    Renyi { a: f64 },
    /// `((1 + a(a-1)x)^((b-1)/(a-1)) - 1) / (b-1)`.
    SharmaMittal { a: f64, b: f64 },
    /// `-log(1 - x)`.
    Bhattacharya,
}

impl HFunction {
    pub fn h(&self, x: f64) -> f64 {
        match *self {
            HFunction::Identity => x,
            HFunction::Renyi { a } => {
                let k = a * (a - 1.0);
                (k * x).ln_1p() / k
            }
            HFunction::SharmaMittal { a, b } => {
                let k = a * (a - 1.0);
                (((b - 1.0) / (a - 1.0)) * (k * x).ln_1p()).exp_m1() / (b - 1.0)
            }
            HFunction::Bhattacharya => -(-x).ln_1p(),
        }
    }

    /// `h'(0)`.
    pub fn dh0(&self) -> f64 {
        match *self {
            HFunction::SharmaMittal { a, .. } => a,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NamedH {
    Renyi { a: f64 },
    SharmaMittal { a: f64, b: f64 },
    Bhattacharya,
}

/// The `(h, phi)` pairs of the named divergences.
pub fn named_h(kind: NamedH) -> Result<(HFunction, PhiFamily), DivergenceError> {
    match kind {
        NamedH::Renyi { a } => Ok((HFunction::Renyi { a }, PhiFamily::renyi(a)?)),
        NamedH::SharmaMittal { a, b } => {
            check_renyi_a(a)?;
            if !b.is_finite() || b == 1.0 {
                return Err(DivergenceError::ParameterError(format!(
                    "Sharma-Mittal parameter b must be finite and different from 1, got {b}"
                )));
            }
            if a <= 0.0 {
                return Err(DivergenceError::ParameterError(format!(
                    "Sharma-Mittal needs h'(0) = a > 0, got a = {a}"
                )));
            }
            Ok((HFunction::SharmaMittal { a, b }, PhiFamily::renyi(a)?))
        }
        NamedH::Bhattacharya => Ok((HFunction::Bhattacharya, PhiFamily::bhattacharya())),
    }
}

/// `d_phi(p, q) = sum_i q_i phi(p_i / q_i)` with `0 phi(0/0) = 0`,
/// `q phi(0/q) = q phi(0+)` and `0 phi(p/0) = p lim phi(u)/u`.
pub fn phi_divergence(p: &[f64], q: &[f64], phi: &PhiFamily) -> Result<f64, DivergenceError> {
    if p.len() != q.len() {
        return Err(DivergenceError::LengthMismatch(p.len(), q.len()));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if !(pi >= 0.0 && qi >= 0.0 && pi.is_finite() && qi.is_finite()) {
            return Err(DivergenceError::DomainError(if pi >= 0.0 { qi } else { pi }));
        }
        total += match (pi > 0.0, qi > 0.0) {
            (false, false) => 0.0,
            (true, true) => qi * phi.phi(pi / qi),
            (false, true) => qi * phi.value_at_zero(),
            (true, false) => pi * phi.slope_at_infinity(),
        };
    }
    Ok(total)
}

/// `psi(x) = -phi(x)/x + phi'(x)`.
pub fn psi_transform(phi: &PhiFamily, x: f64) -> Result<f64, DivergenceError> {
    Ok(-phi.checked_phi(x)? / x + phi.dphi(x))
}

/// `phi(x) - phi'(1)(x - 1)`.
pub fn center_phi(phi: &PhiFamily) -> PhiFamily {
    phi.with_linear_term(-phi.dphi(1.0))
}

/// `d_phi(u, p) = (1/n) sum_i phi(1 + gamma_i) / (1 + gamma_i)` with
/// `gamma_i = t' g_i`.
pub fn divergence_from_gammas(gammas: &[f64], phi: &PhiFamily) -> f64 {
    let s: f64 = gammas
        .iter()
        .map(|&gm| {
            let x = 1.0 + gm;
            phi.phi(x) / x
        })
        .sum();
    s / gammas.len() as f64
}

/// `2n d_phi(u, p) / phi''(1)`.
pub fn statistic_from_gammas(gammas: &[f64], phi: &PhiFamily) -> f64 {
    2.0 * gammas.len() as f64 * divergence_from_gammas(gammas, phi) / phi.d2phi(1.0)
}

/// `2n h(d_phi(u, p)) / (phi''(1) h'(0))`.
pub fn h_statistic_from_gammas(gammas: &[f64], phi: &PhiFamily, h: &HFunction) -> f64 {
    let d = divergence_from_gammas(gammas, phi);
    2.0 * gammas.len() as f64 * h.h(d) / (phi.d2phi(1.0) * h.dh0())
}

pub fn statistic_from_solution(g: &ScoreMatrix, solution: &MultiplierSolution, phi: &PhiFamily) -> f64 {
    statistic_from_gammas(&g.gammas(&solution.t), phi)
}

/// The empirical phi-divergence statistic at `beta0`.
pub fn test_statistic(
    dataset: &Dataset,
    beta0: &BetaVector,
    phi: &PhiFamily,
    solver: &SolverConfig,
) -> Result<f64, DivergenceError> {
    let g = ScoreMatrix::from_dataset(dataset, beta0)?;
    let sol = solve_multiplier(&g, solver)?;
    Ok(statistic_from_solution(&g, &sol, phi))
}

/// The empirical `(h, phi)`-divergence statistic at `beta0`.
pub fn h_test_statistic(
    dataset: &Dataset,
    beta0: &BetaVector,
    phi: &PhiFamily,
    h: &HFunction,
    solver: &SolverConfig,
) -> Result<f64, DivergenceError> {
    let g = ScoreMatrix::from_dataset(dataset, beta0)?;
    let sol = solve_multiplier(&g, solver)?;
    Ok(h_statistic_from_gammas(&g.gammas(&sol.t), phi, h))
}

/// A parsed divergence selection as accepted on the command line:
/// `power:a=<f>`, `hphi:renyi:a=<f>`, `hphi:sharma_mittal:a=<f>,b=<f>` or
/// `hphi:bhattacharya`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PhiSpec {
    Power { a: f64 },
    Renyi { a: f64 },
    SharmaMittal { a: f64, b: f64 },
    Bhattacharya,
}

impl PhiSpec {
    pub fn pair(&self) -> Result<(HFunction, PhiFamily), DivergenceError> {
        match *self {
            PhiSpec::Power { a } => Ok((HFunction::Identity, PhiFamily::power(a))),
            PhiSpec::Renyi { a } => named_h(NamedH::Renyi { a }),
            PhiSpec::SharmaMittal { a, b } => named_h(NamedH::SharmaMittal { a, b }),
            PhiSpec::Bhattacharya => named_h(NamedH::Bhattacharya),
        }
    }

    /// Statistic for this selection from the multiplier terms `gamma_i`.
    pub fn statistic(&self, gammas: &[f64]) -> Result<f64, DivergenceError> {
        let (h, phi) = self.pair()?;
        Ok(h_statistic_from_gammas(gammas, &phi, &h))
    }
}

impl fmt::Display for PhiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiSpec::Power { a } => write!(f, "power:a={a}"),
            PhiSpec::Renyi { a } => write!(f, "hphi:renyi:a={a}"),
            PhiSpec::SharmaMittal { a, b } => write!(f, "hphi:sharma_mittal:a={a},b={b}"),
            PhiSpec::Bhattacharya => write!(f, "hphi:bhattacharya"),
        }
    }
}

fn parse_params(spec: &str, body: &str, names: &[&str]) -> Result<Vec<f64>, DivergenceError> {
    let err = |reason: String| DivergenceError::Parse {
        spec: spec.to_string(),
        reason,
    };
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    if parts.len() != names.len() {
        return Err(err(format!("expected parameters {}", names.join(","))));
    }
    parts
        .iter()
        .zip(names)
        .map(|(part, name)| {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| err(format!("expected {name}=<value>, found {part:?}")))?;
            if k.trim() != *name {
                return Err(err(format!("expected parameter {name}, found {k:?}")));
            }
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| err(format!("cannot parse {v:?} as a number")))?;
            if !value.is_finite() {
                return Err(err(format!("{name} must be finite")));
            }
            Ok(value)
        })
        .collect()
}

impl FromStr for PhiSpec {
    type Err = DivergenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let spec = if let Some(rest) = s.strip_prefix("power:") {
            let v = parse_params(s, rest, &["a"])?;
            PhiSpec::Power { a: v[0] }
        } else if let Some(rest) = s.strip_prefix("hphi:renyi:") {
            let v = parse_params(s, rest, &["a"])?;
            PhiSpec::Renyi { a: v[0] }
        } else if let Some(rest) = s.strip_prefix("hphi:sharma_mittal:") {
            let v = parse_params(s, rest, &["a", "b"])?;
            PhiSpec::SharmaMittal { a: v[0], b: v[1] }
        } else if s == "hphi:bhattacharya" {
            PhiSpec::Bhattacharya
        } else {
            return Err(DivergenceError::Parse {
                spec: s.to_string(),
                reason: "expected power:a=.., hphi:renyi:a=.., hphi:sharma_mittal:a=..,b=.. or hphi:bhattacharya".into(),
            });
        };
        spec.pair()?;
        Ok(spec)
    }
}

impl TryFrom<String> for PhiSpec {
    type Error = DivergenceError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PhiSpec> for String {
    fn from(s: PhiSpec) -> Self {
        s.to_string()
    }
}
