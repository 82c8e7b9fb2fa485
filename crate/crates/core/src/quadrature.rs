//! Expectations under the standard normal law.
//!
//! The default rule is a composite Gauss-Legendre rule on `[-10, 10]` with the
//! normal density folded into the weights. Logistic integrands have complex
//! poles at distance `pi / |slope|` from the real axis, which slows a global
//! Gauss-Hermite rule down to errors near `1e-5` at 40 nodes; short panels
//! keep every pole far away relative to the panel width. The mass outside
//! the truncated range is below `1e-22`.
//!
//! A plain Gauss-Hermite rule is still available for comparison.

const HALF_RANGE: f64 = 10.0;

/// Legendre nodes per panel.
pub const PANEL_NODES: usize = 10;

/// Nodes and weights such that `sum_k w_k f(x_k)` approximates `E[f(Z)]`
/// for `Z ~ N(0, 1)`. Nodes are sorted in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalQuadrature {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Gauss-Legendre rule on `[-1, 1]` for `n >= 2`, nodes increasing.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

impl NormalQuadrature {
    /// Composite rule with `order` equal panels of `PANEL_NODES` points.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let (t, wt) = gauss_legendre(PANEL_NODES);
        let h = 2.0 * HALF_RANGE / order as f64;
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        let mut nodes = Vec::with_capacity(order * PANEL_NODES);
        let mut weights = Vec::with_capacity(order * PANEL_NODES);
        for p in 0..order {
            let mid = -HALF_RANGE + (p as f64 + 0.5) * h;
            for (ti, wi) in t.iter().zip(&wt) {
                let x = mid + 0.5 * h * ti;
                nodes.push(x);
                weights.push(0.5 * h * wi * (-0.5 * x * x).exp() / norm);
            }
        }
        Self { order, nodes, weights }
    }

    /// Classical `order`-point Gauss-Hermite rule mapped to the normal weight.
    pub fn gauss_hermite(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let nf = n as f64;
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut z_nodes = vec![0.0; n];
        let mut w = vec![0.0; n];
        let half = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..half {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * z_nodes[0],
                3 => 1.91 * z - 0.91 * z_nodes[1],
                _ => 2.0 * z - z_nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let jf = j as f64;
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            z_nodes[i] = z;
            z_nodes[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let scale = std::f64::consts::PI.sqrt();
        let sqrt2 = std::f64::consts::SQRT_2;
        Self {
            order,
            nodes: z_nodes.iter().rev().map(|z| z * sqrt2).collect(),
            weights: w.iter().rev().map(|w| w / scale).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[f(Z)]` for a standard normal `Z`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}
