//! Lawson–Hanson active-set non-negative least squares.

use nalgebra::{DMatrix, DVector};

/// Solves `min ||A x − b||₂` subject to `x ≥ 0`.
///
/// Returns the solution and the set of columns left in the passive
/// (unconstrained) set.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, Vec<bool>) {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.norm().max(f64::MIN_POSITIVE) * b.norm().max(f64::MIN_POSITIVE);
    let tol = 10.0 * f64::EPSILON * scale * (a.nrows().max(n) as f64);
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.tr_mul(&(b - a * &x));
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
            .filter(|&j| w[j] > tol);
        let Some(t) = candidate else { break };
        passive[t] = true;

        for _ in 0..=max_outer {
            let s = solve_passive(a, b, &passive);
            let infeasible: Vec<usize> = (0..n).filter(|&j| passive[j] && s[j] <= 0.0).collect();
            if infeasible.is_empty() {
                x = s;
                break;
            }
            let (j_min, alpha) = infeasible
                .iter()
                .map(|&j| (j, x[j] / (x[j] - s[j])))
                .fold((usize::MAX, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
            x += (s - &x) * alpha;
            x[j_min] = 0.0;
            for j in 0..n {
                if passive[j] && x[j] <= 0.0 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    (x, passive)
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..a.ncols()).filter(|&j| passive[j]).collect();
    let mut out = DVector::zeros(a.ncols());
    if cols.is_empty() {
        return out;
    }
    let sub = a.select_columns(&cols);
    let svd = sub.svd(true, true);
    let eps = f64::EPSILON * svd.singular_values.max() * (a.nrows().max(cols.len()) as f64);
    let sol = svd.solve(b, eps).expect("U and V were computed");
    for (k, &j) in cols.iter().enumerate() {
        out[j] = sol[k];
    }
    out
}
