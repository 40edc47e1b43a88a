//! Entropic optimal-transport matching of features to prototypes.
//!
//! The plan is `diag(u) · exp(S / κ) · diag(v)` where `S` is an M×O
//! similarity matrix. `u` and `v` are found by alternating Sinkhorn-Knopp
//! renormalization, carried out on log-potentials so that small temperatures
//! cannot overflow.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T: Scalar = f64> {
    /// M×O matching matrix.
    pub matrix: Array2<T>,
    pub row_marginals: Vec<T>,
    pub col_marginals: Vec<T>,
    pub iterations_run: usize,
    /// Largest absolute violation over all row and column marginals.
    pub converged_residual: T,
    /// Relative gap under which two entries of a row count as equal when
    /// assigning. Covers the rounding of the log-domain potentials.
    pub tie_tolerance: T,
}

impl<T: Scalar> TransportPlan<T> {
    pub fn marginal_residual(&self) -> T {
        marginal_residual(&self.matrix, &self.row_marginals, &self.col_marginals)
    }
}

fn marginal_residual<T: Scalar>(m: &Array2<T>, rows: &[T], cols: &[T]) -> T {
    let row_err = m
        .rows()
        .into_iter()
        .zip(rows)
        .map(|(r, &a)| (r.sum() - a).abs());
    let col_err = m
        .columns()
        .into_iter()
        .zip(cols)
        .map(|(c, &b)| (c.sum() - b).abs());
    row_err.chain(col_err).fold(T::zero(), T::max)
}

fn check_simplex<T: Scalar>(name: &str, v: &[T]) -> Result<()> {
    if v.iter().any(|&x| !(x >= T::zero() && x.is_finite())) {
        return Err(Error::Transport(format!("{name} marginals must be non-negative")));
    }
    let sum: T = v.iter().copied().sum();
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(8.0) * T::from_usize_lossy(v.len()));
    if (sum - T::one()).abs() > tol {
        return Err(Error::Transport(format!(
            "{name} marginals must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

pub fn uniform<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::from_usize_lossy(n); n]
}

/// Runs exactly `steps` Sinkhorn passes. Each pass rescales columns to
/// `col_marginals`, then rows to `row_marginals`, so the returned plan
/// satisfies the row marginals up to rounding.
pub fn sinkhorn_match<T: Scalar>(
    similarity: ArrayView2<'_, T>,
    kappa: T,
    steps: usize,
    row_marginals: &[T],
    col_marginals: &[T],
) -> Result<TransportPlan<T>> {
    if steps == 0 {
        return Err(Error::Transport("steps must be at least 1".into()));
    }
    solve(similarity, kappa, row_marginals, col_marginals, steps, steps, None)
}

/// Iterates until the largest marginal violation is at most `tol`, running
/// at least `min_steps` and at most `max_steps` passes. Small κ can need
/// tens of thousands of passes; the returned plan reports how many ran and
/// the residual reached, which exceeds `tol` only if `max_steps` was hit.
pub fn sinkhorn_until<T: Scalar>(
    similarity: ArrayView2<'_, T>,
    kappa: T,
    tol: T,
    min_steps: usize,
    max_steps: usize,
    row_marginals: &[T],
    col_marginals: &[T],
) -> Result<TransportPlan<T>> {
    if max_steps == 0 || min_steps > max_steps {
        return Err(Error::Transport(format!(
            "need 1 <= max_steps and min_steps <= max_steps, got {min_steps}..{max_steps}"
        )));
    }
    if !(tol >= T::zero()) {
        return Err(Error::Transport(format!("tolerance must be non-negative, got {tol}")));
    }
    solve(similarity, kappa, row_marginals, col_marginals, min_steps.max(1), max_steps, Some(tol))
}

fn solve<T: Scalar>(
    similarity: ArrayView2<'_, T>,
    kappa: T,
    row_marginals: &[T],
    col_marginals: &[T],
    min_steps: usize,
    max_steps: usize,
    tol: Option<T>,
) -> Result<TransportPlan<T>> {
    let (m, o) = similarity.dim();
    if m == 0 || o == 0 {
        return Err(Error::Transport(format!("empty similarity matrix ({m}x{o})")));
    }
    if !(kappa > T::zero() && kappa.is_finite()) {
        return Err(Error::Transport(format!("kappa must be positive, got {kappa}")));
    }
    if row_marginals.len() != m {
        return Err(Error::dim("row marginals", m, row_marginals.len()));
    }
    if col_marginals.len() != o {
        return Err(Error::dim("column marginals", o, col_marginals.len()));
    }
    if similarity.iter().any(|s| !s.is_finite()) {
        return Err(Error::Transport("similarity must be finite".into()));
    }
    check_simplex("row", row_marginals)?;
    check_simplex("column", col_marginals)?;

    // Row-major and column-major copies keep both passes on contiguous slices.
    let by_row: Vec<T> = similarity.iter().map(|&s| s / kappa).collect();
    let by_col: Vec<T> = similarity.t().iter().map(|&s| s / kappa).collect();
    let log_a: Vec<T> = row_marginals.iter().map(|a| a.ln()).collect();
    let log_b: Vec<T> = col_marginals.iter().map(|b| b.ln()).collect();
    let mut f = vec![T::zero(); m];
    let mut g = vec![T::zero(); o];

    // After a row pass the rows are exact, so only columns need checking.
    let col_violation = |f: &[T], g: &[T]| {
        by_col.chunks_exact(m).zip(g).zip(col_marginals).fold(T::zero(), |worst, ((col, &gj), &b)| {
            let mass: T = col.iter().zip(f).map(|(&k, &fi)| (k + fi + gj).exp()).sum();
            worst.max((mass - b).abs())
        })
    };

    let mut steps = 0;
    while steps < max_steps {
        for ((gj, col), &lb) in g.iter_mut().zip(by_col.chunks_exact(m)).zip(&log_b) {
            *gj = lb - log_sum_exp(col.iter().zip(&f).map(|(&k, &fi)| k + fi));
        }
        for ((fi, row), &la) in f.iter_mut().zip(by_row.chunks_exact(o)).zip(&log_a) {
            *fi = la - log_sum_exp(row.iter().zip(&g).map(|(&k, &gj)| k + gj));
        }
        steps += 1;
        if let Some(tol) = tol {
            if steps >= min_steps && steps % 8 == 0 && col_violation(&f, &g) <= tol {
                break;
            }
        } else if steps >= min_steps {
            break;
        }
    }

    let matrix = Array2::from_shape_fn((m, o), |(i, j)| {
        let v = (by_row[i * o + j] + f[i] + g[j]).exp();
        if v.is_nan() {
            T::zero()
        } else {
            v
        }
    });
    let converged_residual = marginal_residual(&matrix, row_marginals, col_marginals);
    let log_scale = by_row.iter().fold(T::zero(), |m, x| m.max(x.abs()))
        + log_a.iter().chain(&log_b).fold(T::zero(), |m, x| m.max(x.abs()));
    let tie_tolerance = T::epsilon() * T::lit(64.0) * log_scale.max(T::one());
    Ok(TransportPlan {
        matrix,
        row_marginals: row_marginals.to_vec(),
        col_marginals: col_marginals.to_vec(),
        iterations_run: steps,
        converged_residual,
        tie_tolerance,
    })
}

/// [`sinkhorn_match`] with uniform marginals on both sides.
pub fn sinkhorn_uniform<T: Scalar>(
    similarity: ArrayView2<'_, T>,
    kappa: T,
    steps: usize,
) -> Result<TransportPlan<T>> {
    let (m, o) = similarity.dim();
    sinkhorn_match(similarity, kappa, steps, &uniform(m.max(1)), &uniform(o.max(1)))
}

/// Column of the largest entry in each row. Entries within the plan's tie
/// tolerance of the running best count as ties and go to the lowest column,
/// so a single feature facing a uniform plan always lands on prototype 0.
pub fn assign_rows<T: Scalar>(plan: &TransportPlan<T>) -> Vec<usize> {
    let factor = T::one() + plan.tie_tolerance;
    plan.matrix
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &x) in r.iter().enumerate().skip(1) {
                if x > r[best] * factor {
                    best = j;
                }
            }
            best
        })
        .collect()
}
