//! Fourier–Motzkin description of the multiplier polyhedron
//! `{t : g_i' t >= 1/n - 1 for all i}`.
//!
//! The polyhedron is stored as a chain of systems, one per prefix of the
//! variables: the system with `k` variables is the projection onto
//! `(t_1, ..., t_k)`. Fixing `t_1..t_{k-1}` in it leaves an interval for `t_k`.
//! The one-variable projection is never materialized; its interval is folded
//! directly from the pairs of the two-variable system.

use serde::Serialize;

use super::{ElError, ScoreMatrix};

/// Default cap on the number of rows any eliminated system may hold.
pub const DEFAULT_CONSTRAINT_CAP: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Rows `a . t >= rhs` over `vars` variables.
#[derive(Debug, Clone)]
struct System {
    vars: usize,
    coef: Vec<f64>,
    rhs: Vec<f64>,
}

impl System {
    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.coef[i * self.vars..(i + 1) * self.vars]
    }

    fn last_sign(&self, i: usize) -> i8 {
        let r = self.row(i);
        let last = r[self.vars - 1];
        let scale = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if last.abs() <= 1e-14 * scale {
            0
        } else if last > 0.0 {
            1
        } else {
            -1
        }
    }

    fn eliminate_last(&self, cap: usize) -> Result<System, ElError> {
        let k = self.vars;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut zero = Vec::new();
        for i in 0..self.len() {
            match self.last_sign(i) {
                1 => pos.push(i),
                -1 => neg.push(i),
                _ => zero.push(i),
            }
        }
        let count = zero.len() + pos.len() * neg.len();
        if count > cap {
            return Err(ElError::TooManyConstraints { count, cap });
        }
        let vars = k - 1;
        let mut coef = Vec::with_capacity(count * vars);
        let mut rhs = Vec::with_capacity(count);
        for &i in &zero {
            coef.extend_from_slice(&self.row(i)[..vars]);
            rhs.push(self.rhs[i]);
        }
        for &p in &pos {
            let ap = self.row(p);
            for &r in &neg {
                let ar = self.row(r);
                let wp = -ar[k - 1];
                let wr = ap[k - 1];
                for j in 0..vars {
                    coef.push(wp * ap[j] + wr * ar[j]);
                }
                rhs.push(wp * self.rhs[p] + wr * self.rhs[r]);
            }
        }
        Ok(System { vars, coef, rhs })
    }

    /// Interval of the last variable once the others are fixed to `prefix`.
    fn conditional(&self, prefix: &[f64]) -> Interval {
        let k = self.vars;
        let mut acc = IntervalAcc::new();
        for i in 0..self.len() {
            let r = self.row(i);
            let shift: f64 = r[..k - 1].iter().zip(prefix).map(|(a, t)| a * t).sum();
            let alpha = if self.last_sign(i) == 0 { 0.0 } else { r[k - 1] };
            acc.push(alpha, self.rhs[i] - shift);
        }
        acc.finish()
    }

    /// Interval of the first variable of a two-variable system, obtained by
    /// eliminating the second one pair by pair.
    fn fold_pairs(&self) -> Interval {
        debug_assert_eq!(self.vars, 2);
        let mut acc = IntervalAcc::new();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..self.len() {
            match self.last_sign(i) {
                1 => pos.push(i),
                -1 => neg.push(i),
                _ => acc.push(self.row(i)[0], self.rhs[i]),
            }
        }
        for &p in &pos {
            let ap = self.row(p);
            for &r in &neg {
                let ar = self.row(r);
                let wp = -ar[1];
                let wr = ap[1];
                acc.push(wp * ap[0] + wr * ar[0], wp * self.rhs[p] + wr * self.rhs[r]);
            }
        }
        acc.finish()
    }
}

/// Intersection of half-lines `alpha x >= beta`.
struct IntervalAcc {
    lo: f64,
    hi: f64,
}

impl IntervalAcc {
    fn new() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    fn push(&mut self, alpha: f64, beta: f64) {
        if alpha > 0.0 {
            self.lo = self.lo.max(beta / alpha);
        } else if alpha < 0.0 {
            self.hi = self.hi.min(beta / alpha);
        } else if beta > 0.0 {
            // 0 >= beta is violated everywhere.
            self.lo = f64::INFINITY;
            self.hi = f64::NEG_INFINITY;
        }
    }

    fn finish(self) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiplierBounds {
    q: usize,
    /// `systems[k]` has `k + 2` variables; the last one is the original system.
    systems: Vec<System>,
    first: Interval,
}

impl MultiplierBounds {
    pub fn new(g: &ScoreMatrix) -> Result<Self, ElError> {
        Self::with_cap(g, DEFAULT_CONSTRAINT_CAP)
    }

    pub fn with_cap(g: &ScoreMatrix, cap: usize) -> Result<Self, ElError> {
        let n = g.n();
        let q = g.q();
        let c = 1.0 / n as f64 - 1.0;
        let original = System {
            vars: q,
            coef: g.as_row_major().to_vec(),
            rhs: vec![c; n],
        };
        let mut systems = vec![original];
        while systems[systems.len() - 1].vars > 2 {
            let next = systems[systems.len() - 1].eliminate_last(cap)?;
            systems.push(next);
        }
        let first = if q == 1 {
            systems.pop().expect("original system").conditional(&[])
        } else {
            systems[systems.len() - 1].fold_pairs()
        };
        systems.reverse();
        let bounds = Self { q, systems, first };
        bounds.check_first()?;
        Ok(bounds)
    }

    fn check_first(&self) -> Result<(), ElError> {
        let Interval { lo, hi } = self.first;
        if !(lo.is_finite() && hi.is_finite()) || !(lo <= 0.0 && 0.0 <= hi) {
            return Err(ElError::InfeasiblePolyhedron);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    /// Projection of the polyhedron onto `t_1`.
    pub fn first(&self) -> Interval {
        self.first
    }

    /// Interval for `t_{k+1}` given `t_1..t_k = prefix`; empty (`lo > hi`) when
    /// the prefix lies outside the projection.
    pub fn conditional_interval(&self, prefix: &[f64]) -> Interval {
        assert!(prefix.len() < self.q, "prefix must leave a free coordinate");
        if prefix.is_empty() {
            return self.first;
        }
        self.systems[prefix.len() - 1].conditional(prefix)
    }

    /// Projection of the polyhedron of `g` onto coordinate `coord`.
    pub fn projection(g: &ScoreMatrix, coord: usize) -> Result<Interval, ElError> {
        let q = g.q();
        assert!(coord < q, "coordinate out of range");
        let mut order: Vec<usize> = vec![coord];
        order.extend((0..q).filter(|&j| j != coord));
        let permuted = g.permute_columns(&order);
        Ok(Self::new(&permuted)?.first)
    }

    /// All coordinate projections.
    pub fn projections(g: &ScoreMatrix) -> Result<Vec<Interval>, ElError> {
        (0..g.q()).map(|j| Self::projection(g, j)).collect()
    }
}
