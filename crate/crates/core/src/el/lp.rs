//! Dense phase-one simplex deciding whether the origin is a convex
//! combination of the score rows.

const PIVOT_EPS: f64 = 1e-11;
const FEASIBILITY_TOL: f64 = 1e-9;

/// Solves `min sum(artificials)` subject to `sum(mu) = 1`, `G' mu = 0`,
/// `mu >= 0`, with Bland's anti-cycling rule. Returns `true` when the
/// optimum is zero within tolerance.
pub(crate) fn origin_in_hull(rows: &[f64], n: usize, q: usize) -> bool {
    let scale = rows.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return true;
    }
    let m = q + 1;
    let width = n + m + 1;
    let rhs_col = n + m;
    let mut tab = vec![0.0; (m + 1) * width];
    for i in 0..n {
        tab[i] = 1.0;
        for j in 0..q {
            tab[(j + 1) * width + i] = rows[i * q + j] / scale;
        }
    }
    for r in 0..m {
        tab[r * width + n + r] = 1.0;
    }
    tab[rhs_col] = 1.0;
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Reduced-cost row (index m): cost of artificials is 1.
    let cost = m * width;
    for c in 0..width {
        let mut s = 0.0;
        for r in 0..m {
            s += tab[r * width + c];
        }
        tab[cost + c] = if (n..n + m).contains(&c) { 0.0 } else { -s };
    }

    let max_iter = 50 * (n + m);
    for _ in 0..max_iter {
        let Some(enter) = (0..n + m).find(|&c| tab[cost + c] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let a = tab[r * width + enter];
            if a > PIVOT_EPS {
                let ratio = tab[r * width + rhs_col] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-14
                            || ((ratio - lratio).abs() <= 1e-14 && basis[r] < basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let Some((pr, _)) = leave else {
            // Unbounded direction cannot occur in a phase-one problem bounded below by 0.
            break;
        };
        let pivot = tab[pr * width + enter];
        for c in 0..width {
            tab[pr * width + c] /= pivot;
        }
        for r in 0..=m {
            if r == pr {
                continue;
            }
            let f = tab[r * width + enter];
            if f != 0.0 {
                for c in 0..width {
                    tab[r * width + c] -= f * tab[pr * width + c];
                }
            }
        }
        basis[pr] = enter;
    }
    let objective = -tab[cost + rhs_col];
    objective <= FEASIBILITY_TOL
}
