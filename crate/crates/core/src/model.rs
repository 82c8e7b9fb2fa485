//! Logistic regression primitives: the link, the score (estimating function),
//! its Jacobian, the classical MLE, and the synthetic simulation design.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::NormalQuadrature;
use crate::rng::SampleStream;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("response at row {index} is {value}; must be 0 or 1")]
    InvalidResponse { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least q + 1 = {needed} rows, got {n}")]
    TooFewRows { n: usize, needed: usize },
    #[error("design matrix does not have full column rank")]
    RankDeficient,
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("score Jacobian is singular")]
    SingularJacobian,
    #[error("malformed dataset CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Design matrix (row-major, `n x q`) plus binary responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<u8>,
    q: usize,
}

impl Dataset {
    /// Builds a dataset from row-major covariates, checking the response
    /// coding, `n >= q + 1` and full column rank.
    pub fn from_row_major(x: Vec<f64>, q: usize, y: Vec<u8>) -> Result<Self, ModelError> {
        if q == 0 {
            return Err(ModelError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if x.len() != y.len() * q {
            return Err(ModelError::DimensionMismatch {
                expected: y.len() * q,
                found: x.len(),
            });
        }
        if let Some((index, &v)) = y.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(ModelError::InvalidResponse {
                index,
                value: f64::from(v),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("design matrix"));
        }
        let n = y.len();
        if n < q + 1 {
            return Err(ModelError::TooFewRows { n, needed: q + 1 });
        }
        let ds = Self { x, y, q };
        if !ds.has_full_rank() {
            return Err(ModelError::RankDeficient);
        }
        Ok(ds)
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<u8>) -> Result<Self, ModelError> {
        let q = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * q);
        for r in rows {
            if r.len() != q {
                return Err(ModelError::DimensionMismatch {
                    expected: q,
                    found: r.len(),
                });
            }
            x.extend_from_slice(r);
        }
        Self::from_row_major(x, q, y)
    }

    fn has_full_rank(&self) -> bool {
        let mut xtx = DMatrix::<f64>::zeros(self.q, self.q);
        for i in 0..self.n() {
            let r = self.row(i);
            for a in 0..self.q {
                for b in 0..self.q {
                    xtx[(a, b)] += r[a] * r[b];
                }
            }
        }
        let eig = xtx.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        max > 0.0 && min > 1e-12 * max
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.q..(i + 1) * self.q]
    }

    pub fn response(&self, i: usize) -> u8 {
        self.y[i]
    }

    pub fn responses(&self) -> &[u8] {
        &self.y
    }

    pub fn observations(&self) -> impl Iterator<Item = (&[f64], u8)> + '_ {
        self.x.chunks_exact(self.q).zip(self.y.iter().copied())
    }

    /// Row `i` of the result is row `order[i]` of `self`; indices may repeat.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self, ModelError> {
        if let Some(&bad) = order.iter().find(|&&i| i >= self.n()) {
            return Err(ModelError::DimensionMismatch {
                expected: self.n(),
                found: bad,
            });
        }
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.n());
        for &i in order {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self::from_row_major(x, self.q, y)
    }

    /// Reads the `x1,...,xq,y` CSV layout.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| ModelError::Csv(e.to_string()))?.clone();
        let width = headers.len();
        if width < 2 || headers.get(width - 1).map(str::trim) != Some("y") {
            return Err(ModelError::Csv(
                "header must be x1,...,xq,y with y as the last column".into(),
            ));
        }
        let q = width - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::Csv(e.to_string()))?;
            if rec.len() != width {
                return Err(ModelError::Csv(format!(
                    "row {} has {} fields, expected {width}",
                    line + 1,
                    rec.len()
                )));
            }
            for field in rec.iter().take(q) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    ModelError::Csv(format!("row {}: cannot parse {field:?}", line + 1))
                })?;
                x.push(v);
            }
            let yv: f64 = rec[q].trim().parse().map_err(|_| {
                ModelError::Csv(format!("row {}: cannot parse response {:?}", line + 1, &rec[q]))
            })?;
            if yv == 0.0 {
                y.push(0);
            } else if yv == 1.0 {
                y.push(1);
            } else {
                return Err(ModelError::InvalidResponse {
                    index: line,
                    value: yv,
                });
            }
        }
        Self::from_row_major(x, q, y)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.q).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(|e| ModelError::Csv(e.to_string()))?;
        for (row, y) in self.observations() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(y.to_string());
            w.write_record(&rec).map_err(|e| ModelError::Csv(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Regression coefficients (log-odds per covariate unit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BetaVector(Vec<f64>);

impl BetaVector {
    pub fn new(coefficients: Vec<f64>) -> Result<Self, ModelError> {
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("coefficients"));
        }
        Ok(Self(coefficients))
    }

    pub fn zeros(q: usize) -> Self {
        Self(vec![0.0; q])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(x, &self.0)
    }
}

impl TryFrom<Vec<f64>> for BetaVector {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<BetaVector> for Vec<f64> {
    fn from(b: BetaVector) -> Self {
        b.0
    }
}

/// One row of the simulation design: `logit P(Y=1 | X) = beta0 + beta1 X`
/// with `X ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationModel {
    pub beta0: f64,
    pub beta1: f64,
    pub marginal_rate: f64,
}

impl SimulationModel {
    pub fn new(beta0: f64, beta1: f64, marginal_rate: f64) -> Result<Self, ModelError> {
        if !(beta0.is_finite() && beta1.is_finite()) {
            return Err(ModelError::NonFinite("simulation model coefficients"));
        }
        if !(marginal_rate > 0.0 && marginal_rate < 1.0) {
            return Err(ModelError::InvalidResponse {
                index: 0,
                value: marginal_rate,
            });
        }
        Ok(Self {
            beta0,
            beta1,
            marginal_rate,
        })
    }

    /// The four reference designs, with `P(Y=1)` of 0.5, 0.4, 0.3 and 0.2.
    pub fn reference_models() -> [SimulationModel; 4] {
        [
            SimulationModel { beta0: 0.00, beta1: 4.36, marginal_rate: 0.5 },
            SimulationModel { beta0: -1.16, beta1: 4.20, marginal_rate: 0.4 },
            SimulationModel { beta0: -2.16, beta1: 3.71, marginal_rate: 0.3 },
            SimulationModel { beta0: -2.80, beta1: 2.82, marginal_rate: 0.2 },
        ]
    }

    pub fn beta(&self) -> BetaVector {
        BetaVector(vec![self.beta0, self.beta1])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, branching on the sign of `eta` so neither branch
/// overflows.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `g(x, y, beta) = x (y - sigmoid(x' beta))`.
pub fn score_g(x: &[f64], y: u8, beta: &BetaVector) -> Result<Vec<f64>, ModelError> {
    if x.len() != beta.len() {
        return Err(ModelError::DimensionMismatch {
            expected: beta.len(),
            found: x.len(),
        });
    }
    if y > 1 {
        return Err(ModelError::InvalidResponse {
            index: 0,
            value: f64::from(y),
        });
    }
    let r = f64::from(y) - sigmoid(beta.linear_predictor(x));
    Ok(x.iter().map(|v| v * r).collect())
}

fn check_dims(dataset: &Dataset, beta: &BetaVector) -> Result<(), ModelError> {
    if dataset.q() != beta.len() {
        return Err(ModelError::DimensionMismatch {
            expected: dataset.q(),
            found: beta.len(),
        });
    }
    Ok(())
}

/// `sum_i g(x_i, y_i, beta)`.
pub fn score_sum(dataset: &Dataset, beta: &BetaVector) -> Result<Vec<f64>, ModelError> {
    check_dims(dataset, beta)?;
    let mut s = vec![0.0; dataset.q()];
    for (x, y) in dataset.observations() {
        let r = f64::from(y) - sigmoid(beta.linear_predictor(x));
        for (acc, v) in s.iter_mut().zip(x) {
            *acc += v * r;
        }
    }
    Ok(s)
}

/// `sum_i dg/dbeta = -sum_i x_i x_i' pi_i (1 - pi_i)`.
pub fn score_jacobian(dataset: &Dataset, beta: &BetaVector) -> Result<DMatrix<f64>, ModelError> {
    check_dims(dataset, beta)?;
    let q = dataset.q();
    let mut j = DMatrix::<f64>::zeros(q, q);
    for (x, _) in dataset.observations() {
        let p = sigmoid(beta.linear_predictor(x));
        let w = p * (1.0 - p);
        for a in 0..q {
            for b in a..q {
                j[(a, b)] -= w * x[a] * x[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            j[(a, b)] = j[(b, a)];
        }
    }
    Ok(j)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Newton-Raphson solution of `score_sum(beta) = 0`. A step that does not
/// reduce the residual norm is halved, at most 30 times.
///
/// Under complete separation the score tends to zero along a diverging ray, so
/// a small residual alone does not certify a root. A converged point whose
/// information matrix has collapsed (smallest eigenvalue below `1e-10` times
/// the largest eigenvalue of `X'X`) is reported as non-convergence.
pub fn fit_mle(
    dataset: &Dataset,
    init: &BetaVector,
    tol: f64,
    max_iter: usize,
) -> Result<BetaVector, ModelError> {
    check_dims(dataset, init)?;
    let mut beta = init.clone();
    let mut score = score_sum(dataset, &beta)?;
    let mut res = inf_norm(&score);
    for iteration in 0..max_iter {
        if res <= tol {
            return certify(dataset, beta, iteration, res);
        }
        let jac = score_jacobian(dataset, &beta)?;
        let neg = -jac;
        let step = match neg.clone().cholesky() {
            Some(ch) => ch.solve(&DVector::from_column_slice(&score)),
            None => neg
                .lu()
                .solve(&DVector::from_column_slice(&score))
                .ok_or(ModelError::SingularJacobian)?,
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::SingularJacobian);
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let cand: Vec<f64> = beta
                .as_slice()
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand = BetaVector(cand);
            let s = score_sum(dataset, &cand)?;
            let r = inf_norm(&s);
            if r < res {
                accepted = Some((cand, s, r));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((b, s, r)) => {
                beta = b;
                score = s;
                res = r;
            }
            None => {
                // No halving reduced the residual; take the smallest step and carry on.
                let cand: Vec<f64> = beta
                    .as_slice()
                    .iter()
                    .zip(step.iter())
                    .map(|(b, s)| b + scale * s)
                    .collect();
                beta = BetaVector(cand);
                score = score_sum(dataset, &beta)?;
                res = inf_norm(&score);
            }
        }
    }
    if res <= tol {
        certify(dataset, beta, max_iter, res)
    } else {
        Err(ModelError::NonConvergence {
            iterations: max_iter,
            residual: res,
        })
    }
}

fn certify(
    dataset: &Dataset,
    beta: BetaVector,
    iterations: usize,
    residual: f64,
) -> Result<BetaVector, ModelError> {
    let info = -score_jacobian(dataset, &beta)?;
    let identity = BetaVector(vec![0.0; dataset.q()]);
    // At beta = 0 every weight is 1/4, so this is X'X / 4.
    let design = -score_jacobian(dataset, &identity)? * 4.0;
    let info_min = info.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    let design_max = design.symmetric_eigenvalues().iter().cloned().fold(0.0_f64, f64::max);
    if info_min <= 1e-10 * design_max {
        return Err(ModelError::NonConvergence { iterations, residual });
    }
    Ok(beta)
}

/// Draws `n` observations from a simulation model. Row `i` consumes two
/// uniforms from the stream: the first becomes `x_i` by inverse-CDF, the
/// second decides `y_i`.
pub fn generate_sample(model: &SimulationModel, n: usize, seed: u64) -> Result<Dataset, ModelError> {
    if n < 3 {
        return Err(ModelError::TooFewRows { n, needed: 3 });
    }
    let mut stream = SampleStream::new(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = stream.standard_normal();
        let p = sigmoid(model.beta0 + model.beta1 * xi);
        x.push(1.0);
        x.push(xi);
        y.push(u8::from(stream.bernoulli(p)));
    }
    Dataset::from_row_major(x, 2, y)
}

/// `P(Y = 1) = E[sigmoid(beta0 + beta1 X)]`, `X ~ N(0, 1)`, by quadrature.
pub fn marginal_event_rate(model: &SimulationModel, quad_order: usize) -> f64 {
    NormalQuadrature::new(quad_order).expect(|x| sigmoid(model.beta0 + model.beta1 * x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_fixture() -> Dataset {
        let rows = vec![
            vec![1.0, -1.2],
            vec![1.0, -0.4],
            vec![1.0, 0.1],
            vec![1.0, 0.7],
            vec![1.0, 1.5],
        ];
        Dataset::from_rows(&rows, vec![0, 1, 0, 1, 1]).unwrap()
    }

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid((1.0_f64 / 3.0).ln()) - 0.25).abs() < 1e-15);
        // e^3.04 / (1 + e^3.04), evaluated at 50 digits.
        assert!((sigmoid(3.04) - 0.954_348_829_215_556_3).abs() < 1e-15);
        assert!(sigmoid(700.0) == 1.0 && sigmoid(-700.0) > 0.0);
        assert!(sigmoid(-700.0) < 1e-300);
    }

    #[test]
    fn score_examples() {
        let z = BetaVector::zeros(2);
        assert_eq!(score_g(&[1.0, 0.0], 1, &z).unwrap(), vec![0.5, 0.0]);
        assert_eq!(score_g(&[1.0, 1.0], 0, &z).unwrap(), vec![-0.5, -0.5]);
        let beta = BetaVector::new(vec![-1.16, 4.20]).unwrap();
        let g = score_g(&[1.0, 0.3], 1, &beta).unwrap();
        // eta = -1.16 + 1.26 = 0.10.
        let r = 1.0 - 1.0 / (1.0 + (-0.1_f64).exp());
        assert!((g[0] - r).abs() < 1e-15);
        assert!((g[1] - 0.3 * r).abs() < 1e-15);
        assert!(matches!(
            score_g(&[1.0], 1, &z),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn jacobian_single_point_and_duplicates() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![1.0]], vec![1, 0]).unwrap();
        let j = score_jacobian(&ds, &BetaVector::zeros(1)).unwrap();
        assert!((j[(0, 0)] + 0.5).abs() < 1e-15);

        let base = small_fixture();
        let beta = BetaVector::new(vec![0.2, -0.3]).unwrap();
        let doubled = base.select_rows(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]).unwrap();
        let j1 = score_jacobian(&base, &beta).unwrap();
        let j2 = score_jacobian(&doubled, &beta).unwrap();
        assert!((j2 - 2.0 * j1).abs().max() < 1e-14);
    }

    #[test]
    fn score_sum_single_row_and_saturation() {
        let ds = Dataset::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 5.0]], vec![1, 1, 1])
            .unwrap();
        let s = score_sum(&ds, &BetaVector::new(vec![40.0, 0.0]).unwrap()).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
        let one = small_fixture();
        let beta = BetaVector::new(vec![0.1, 0.2]).unwrap();
        let total = score_sum(&one, &beta).unwrap();
        let mut naive = [0.0; 2];
        for i in 0..one.n() {
            let g = score_g(one.row(i), one.response(i), &beta).unwrap();
            naive[0] += g[0];
            naive[1] += g[1];
        }
        assert!((total[0] - naive[0]).abs() < 1e-14 && (total[1] - naive[1]).abs() < 1e-14);
    }

    #[test]
    fn mle_intercept_only_balanced() {
        let ds = Dataset::from_rows(&vec![vec![1.0]; 6], vec![1, 0, 1, 0, 1, 0]).unwrap();
        let b = fit_mle(&ds, &BetaVector::new(vec![1.3]).unwrap(), 1e-12, 50).unwrap();
        assert!(b.as_slice()[0].abs() < 1e-12);
    }

    #[test]
    fn mle_matches_grid_search_on_tiny_fixture() {
        let ds = small_fixture();
        let b = fit_mle(&ds, &BetaVector::zeros(2), 1e-12, 100).unwrap();
        // Grid oracle: minimize the score norm on a fine lattice around the root region.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = 800;
        for i in 0..=steps {
            for j in 0..=steps {
                let b0 = -3.0 + 6.0 * i as f64 / steps as f64;
                let b1 = -3.0 + 6.0 * j as f64 / steps as f64;
                let s = score_sum(&ds, &BetaVector(vec![b0, b1])).unwrap();
                let r = s[0].hypot(s[1]);
                if r < best.0 {
                    best = (r, b0, b1);
                }
            }
        }
        let h = 6.0 / steps as f64;
        assert!((b.as_slice()[0] - best.1).abs() <= h);
        assert!((b.as_slice()[1] - best.2).abs() <= h);
    }

    #[test]
    fn mle_separated_data_does_not_converge() {
        let ds = Dataset::from_rows(
            &[vec![1.0, -2.0], vec![1.0, -1.0], vec![1.0, 1.0], vec![1.0, 2.0]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let err = fit_mle(&ds, &BetaVector::zeros(2), 1e-12, 50).unwrap_err();
        assert!(matches!(err, ModelError::NonConvergence { .. }));
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            Dataset::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]], vec![0, 1, 0]),
            Err(ModelError::RankDeficient)
        ));
        assert!(matches!(
            Dataset::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]], vec![0, 1]),
            Err(ModelError::TooFewRows { .. })
        ));
        assert!(matches!(
            Dataset::from_row_major(vec![1.0, 2.0, 3.0], 1, vec![0, 2, 1]),
            Err(ModelError::InvalidResponse { index: 1, .. })
        ));
        assert!(BetaVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let ds = small_fixture();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
        assert!(Dataset::read_csv("x1,y\n1.0,0.5\n1.0,1\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,x2\n1.0,0\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,y\n1.0,zz\n".as_bytes()).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = SimulationModel::reference_models()[1];
        let a = generate_sample(&m, 50, 99).unwrap();
        let b = generate_sample(&m, 50, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_sample(&m, 50, 100).unwrap());
        assert!((0..50).all(|i| a.row(i)[0] == 1.0));
    }

    #[test]
    fn generated_rate_matches_model_one() {
        let m = SimulationModel::reference_models()[0];
        let n = 100_000;
        let ds = generate_sample(&m, n, 2024).unwrap();
        let mean = ds.responses().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn zero_slope_gives_uncorrelated_response() {
        let m = SimulationModel::new(0.3, 0.0, 0.57).unwrap();
        let n = 40_000;
        let ds = generate_sample(&m, n, 5).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| ds.row(i)[1]).collect();
        let ys: Vec<f64> = ds.responses().iter().map(|&v| f64::from(v)).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn marginal_rates() {
        let models = SimulationModel::reference_models();
        assert!((marginal_event_rate(&models[0], 40) - 0.5).abs() < 1e-12);
        assert!((marginal_event_rate(&models[3], 40) - 0.2).abs() < 0.005);
        let flat = SimulationModel::new(-0.7, 0.0, 0.33).unwrap();
        assert!((marginal_event_rate(&flat, 40) - sigmoid(-0.7)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn sigmoid_reflection(eta in -700.0_f64..700.0) {
            prop_assert!((sigmoid(-eta) - (1.0 - sigmoid(eta))).abs() <= 1e-15);
        }

        #[test]
        fn marginal_rate_symmetric_at_zero_intercept(b1 in -8.0_f64..8.0) {
            let m = SimulationModel { beta0: 0.0, beta1: b1, marginal_rate: 0.5 };
            prop_assert!((marginal_event_rate(&m, 40) - 0.5).abs() < 1e-13);
        }

        #[test]
        fn jacobian_matches_finite_differences(
            seed in 0_u64..10_000,
            b0 in -1.5_f64..1.5,
            b1 in -2.0_f64..2.0,
        ) {
            let m = SimulationModel { beta0: 0.3, beta1: 1.0, marginal_rate: 0.5 };
            let ds = generate_sample(&m, 40, seed).unwrap();
            let beta = BetaVector(vec![b0, b1]);
            let j = score_jacobian(&ds, &beta).unwrap();
            let h = 1e-6;
            for c in 0..2 {
                let mut up = beta.as_slice().to_vec();
                let mut dn = beta.as_slice().to_vec();
                up[c] += h;
                dn[c] -= h;
                let su = score_sum(&ds, &BetaVector(up)).unwrap();
                let sd = score_sum(&ds, &BetaVector(dn)).unwrap();
                for r in 0..2 {
                    let fd = (su[r] - sd[r]) / (2.0 * h);
                    let scale = j.abs().max();
                    prop_assert!((fd - j[(r, c)]).abs() <= 1e-6 * scale);
                }
            }
        }

        #[test]
        fn fit_residual_contract(seed in 0_u64..10_000) {
            let m = SimulationModel::reference_models()[2];
            let ds = generate_sample(&m, 200, seed).unwrap();
            if let Ok(b) = fit_mle(&ds, &BetaVector::zeros(2), 1e-9, 100) {
                prop_assert!(inf_norm(&score_sum(&ds, &b).unwrap()) <= 1e-9);
            }
        }
    }
}
