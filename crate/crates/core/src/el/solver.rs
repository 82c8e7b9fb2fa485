//! Multi-start solver for `(1/n) sum_i g_i / (1 + t' g_i) = 0`.
//!
//! The system is the gradient (up to sign) of the strictly convex function
//! `F(t) = -(1/n) sum_i log(1 + t' g_i)`, so each start runs damped Newton
//! with a backtracking line search on `F`, falling back to a dogleg
//! trust-region step when the Newton direction is unusable. Every iterate
//! keeps `1 + t' g_i >= 1/n + 1e-14`.

use nalgebra::{DMatrix, DVector};

use super::bounds::MultiplierBounds;
use super::{weights, ElError, MultiplierSolution, ScoreMatrix, SolverConfig};

const BOUNDARY_SLACK: f64 = 1e-14;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const POLISH_STEPS: usize = 4;

struct Attempt {
    t: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Problem<'a> {
    g: &'a ScoreMatrix,
    floor: f64,
}

impl Problem<'_> {
    /// `F(t)`, or `None` outside the guarded domain.
    fn objective(&self, t: &[f64]) -> Option<f64> {
        let mut s = 0.0;
        for gi in self.g.iter() {
            let gamma: f64 = gi.iter().zip(t).map(|(a, b)| a * b).sum();
            if !(1.0 + gamma >= self.floor) {
                return None;
            }
            s += gamma.ln_1p();
        }
        Some(-s / self.g.n() as f64)
    }

    fn step(&self, t: &[f64], d: &[f64], s: f64) -> Vec<f64> {
        t.iter().zip(d).map(|(a, b)| a + s * b).collect()
    }
}

/// Newton direction `H^{-1} h` with `H = -J` positive definite.
fn newton_direction(hess: &DMatrix<f64>, h: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(h);
    let d = hess.clone().cholesky()?.solve(&rhs);
    d.iter().all(|v| v.is_finite()).then(|| d.iter().copied().collect())
}

fn dogleg(hess: &DMatrix<f64>, h: &[f64], newton: Option<&[f64]>, radius: f64) -> Vec<f64> {
    let hv = DVector::from_column_slice(h);
    let curv = hv.dot(&(hess * &hv));
    let hh = hv.dot(&hv);
    let hn = hh.sqrt();
    let cauchy: Vec<f64> = if curv > 0.0 {
        h.iter().map(|v| v * hh / curv).collect()
    } else {
        h.iter().map(|v| v * radius / hn).collect()
    };
    if let Some(dn) = newton {
        if norm2(dn) <= radius {
            return dn.to_vec();
        }
        let nc = norm2(&cauchy);
        if nc < radius {
            // Walk from the Cauchy point toward the Newton point until the boundary.
            let diff: Vec<f64> = dn.iter().zip(&cauchy).map(|(a, b)| a - b).collect();
            let a: f64 = diff.iter().map(|v| v * v).sum();
            let b: f64 = 2.0 * diff.iter().zip(&cauchy).map(|(x, y)| x * y).sum::<f64>();
            let c = nc * nc - radius * radius;
            let tau = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
            return cauchy.iter().zip(&diff).map(|(x, y)| x + tau * y).collect();
        }
    }
    let nc = norm2(&cauchy);
    if nc <= radius {
        cauchy
    } else {
        h.iter().map(|v| v * radius / hn).collect()
    }
}

fn refine(problem: &Problem<'_>, t0: Vec<f64>, config: &SolverConfig) -> Attempt {
    let g = problem.g;
    let Some(mut f) = problem.objective(&t0) else {
        return Attempt {
            t: t0,
            residual: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    };
    let mut t = t0;
    let mut h = g.system(&t);
    let mut res = inf_norm(&h);
    let mut iterations = 0;
    let mut radius = 1.0_f64.max(norm2(&t));

    while res > config.tol && iterations < config.max_iter {
        iterations += 1;
        let hess = -g.system_jacobian(&t);
        let newton = newton_direction(&hess, &h);
        let mut accepted = false;
        if let Some(d) = &newton {
            let slope: f64 = h.iter().zip(d).map(|(a, b)| a * b).sum();
            let mut s = 1.0;
            for _ in 0..MAX_BACKTRACK {
                let cand = problem.step(&t, d, s);
                if let Some(fc) = problem.objective(&cand) {
                    let hc = g.system(&cand);
                    let rc = inf_norm(&hc);
                    if fc <= f - ARMIJO * s * slope || rc < res {
                        t = cand;
                        f = fc;
                        h = hc;
                        res = rc;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
        }
        if !accepted {
            for _ in 0..MAX_BACKTRACK {
                let d = dogleg(&hess, &h, newton.as_deref(), radius);
                let cand = problem.step(&t, &d, 1.0);
                if let Some(fc) = problem.objective(&cand) {
                    if fc < f {
                        h = g.system(&cand);
                        res = inf_norm(&h);
                        t = cand;
                        f = fc;
                        radius = (2.0 * norm2(&d)).max(radius);
                        accepted = true;
                        break;
                    }
                }
                radius *= 0.25;
            }
        }
        if !accepted {
            break;
        }
    }
    let converged = res <= config.tol;
    if converged {
        // Push the residual toward machine precision so that the weights sum to
        // one far below the convergence tolerance.
        for _ in 0..POLISH_STEPS {
            let hess = -g.system_jacobian(&t);
            let Some(d) = newton_direction(&hess, &h) else { break };
            let cand = problem.step(&t, &d, 1.0);
            if problem.objective(&cand).is_none() {
                break;
            }
            let hc = g.system(&cand);
            let rc = inf_norm(&hc);
            if rc < 0.5 * res {
                t = cand;
                h = hc;
                res = rc;
            } else {
                break;
            }
        }
    }
    Attempt {
        t,
        residual: res,
        iterations,
        converged,
    }
}

/// Starting points indexed by position: `n_start` points spread across the
/// open `t_1` interval, later coordinates at midpoints of their conditional
/// intervals, then the origin (index `n_start`). With `n_start = 0` the
/// bounds are not computed and the origin is the only start.
fn start_points(g: &ScoreMatrix, n_start: usize) -> Result<Vec<(usize, Vec<f64>)>, ElError> {
    let q = g.q();
    let mut starts = Vec::with_capacity(n_start + 1);
    if n_start == 0 {
        starts.push((0, vec![0.0; q]));
        return Ok(starts);
    }
    match MultiplierBounds::new(g) {
        Ok(bounds) => {
            let first = bounds.first();
            for k in 0..n_start {
                let frac = (k as f64 + 1.0) / (n_start as f64 + 1.0);
                let mut t = vec![first.lo + frac * first.width()];
                while t.len() < q {
                    let iv = bounds.conditional_interval(&t);
                    if iv.lo > iv.hi {
                        break;
                    }
                    t.push(iv.midpoint());
                }
                if t.len() == q {
                    starts.push((k, t));
                }
            }
        }
        Err(ElError::TooManyConstraints { .. }) => {}
        Err(e) => return Err(e),
    }
    starts.push((n_start, vec![0.0; q]));
    Ok(starts)
}

/// Solves for the multiplier `t(beta)` and fills in the implied weights.
///
/// All starts are run; among converged ones the smallest residual wins, then
/// the smallest `|t|`, then the smallest start index.
pub fn solve_multiplier(
    g: &ScoreMatrix,
    config: &SolverConfig,
) -> Result<MultiplierSolution, ElError> {
    let problem = Problem {
        g,
        floor: 1.0 / g.n() as f64 + BOUNDARY_SLACK,
    };
    let mut best: Option<(usize, Attempt)> = None;
    let mut best_residual = f64::INFINITY;
    for (index, t0) in start_points(g, config.n_start)? {
        let attempt = refine(&problem, t0, config);
        best_residual = best_residual.min(attempt.residual);
        if !attempt.converged {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bi, b)) => {
                let key = (attempt.residual, norm2(&attempt.t), index);
                let bkey = (b.residual, norm2(&b.t), *bi);
                key.partial_cmp(&bkey) == Some(std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some((index, attempt));
        }
    }
    let Some((start_index, attempt)) = best else {
        return Err(ElError::NoRoot { best_residual });
    };
    let weights = weights(g, &attempt.t)?;
    Ok(MultiplierSolution {
        t: attempt.t,
        residual_norm: attempt.residual,
        weights,
        iterations: attempt.iterations,
        start_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SampleStream;

    #[test]
    fn centered_rows_give_zero_multiplier() {
        let g = ScoreMatrix::new(vec![1.0, 2.0, -1.0, -0.5, 0.0, -1.5], 2).unwrap();
        let sol = solve_multiplier(&g, &SolverConfig::default()).unwrap();
        assert!(norm2(&sol.t) <= 1e-10);
        assert!(sol.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn two_point_scalar_root() {
        // 1/(1+t) - 2/(1-2t) = 0 has the root t = -1/4.
        let g = ScoreMatrix::new(vec![1.0, -2.0], 1).unwrap();
        let sol = solve_multiplier(&g, &SolverConfig::default()).unwrap();
        assert!((sol.t[0] + 0.25).abs() < 1e-12);
        assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn different_start_grids_agree() {
        let mut s = SampleStream::new(8);
        let rows: Vec<f64> = (0..80).map(|_| s.standard_normal() + 0.3).collect();
        let g = ScoreMatrix::new(rows, 2).unwrap();
        let a = solve_multiplier(&g, &SolverConfig { n_start: 7, ..Default::default() }).unwrap();
        let b = solve_multiplier(&g, &SolverConfig { n_start: 50, ..Default::default() }).unwrap();
        assert!((a.t[0] - b.t[0]).abs() < 1e-8 && (a.t[1] - b.t[1]).abs() < 1e-8);
    }

    #[test]
    fn origin_outside_hull_is_reported() {
        let g = ScoreMatrix::new(vec![1.0, 2.0, 0.5], 1).unwrap();
        assert!(matches!(
            solve_multiplier(&g, &SolverConfig::default()),
            Err(ElError::InfeasiblePolyhedron)
        ));
    }

    #[test]
    fn three_dimensional_solve() {
        let mut s = SampleStream::new(21);
        let rows: Vec<f64> = (0..90).map(|_| s.standard_normal() + 0.2).collect();
        let g = ScoreMatrix::new(rows, 3).unwrap();
        let sol = solve_multiplier(&g, &SolverConfig::default()).unwrap();
        assert!(sol.residual_norm <= 1e-10);
        assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
