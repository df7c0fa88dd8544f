//! Small dense linear programs.
//!
//! The dual bounded-Lipschitz norm reduces to a linear program over the
//! test-function values at the atom positions, so the instances solved here
//! are tiny: a handful of variables and rows per atom. A plain dense simplex
//! tableau in standard form
//!
//! ```text
//! maximize  c . x   subject to  A x <= b,  x >= 0,  b >= 0
//! ```
//!
//! is all that is needed. Requiring `b >= 0` makes the all-slack basis
//! feasible, so no separate feasibility phase is necessary. Pivoting starts
//! with Dantzig's rule and falls back to Bland's rule after a while, which
//! guarantees termination on the highly degenerate instances (many zero
//! right-hand sides) the norm produces.

use crate::{Error, Result};

/// Reduced costs below this threshold count as nonpositive, which is the
/// optimality certificate; pivot elements below it are treated as zero.
const PIVOT_TOL: f64 = 1e-11;

/// `maximize objective . x` subject to `constraints * x <= rhs`, `x >= 0`.
/// Every entry of `rhs` must be nonnegative.
#[derive(Debug, Clone)]
pub struct SimplexProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

/// An optimal vertex together with the pivot count that certified it.
#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

/// Solves the program to optimality. Returns an error if the objective is
/// unbounded over the feasible set or the pivot budget is exhausted before
/// all reduced costs are certified nonpositive.
pub fn maximize(problem: &SimplexProblem) -> Result<SimplexSolution> {
    let m = problem.constraints.len();
    let n = problem.objective.len();
    debug_assert!(problem.rhs.len() == m);
    debug_assert!(problem.constraints.iter().all(|row| row.len() == n));
    debug_assert!(problem.rhs.iter().all(|&b| b >= 0.0));

    if m == 0 {
        // No constraints: bounded only if no objective coefficient is positive.
        if problem.objective.iter().any(|&c| c > PIVOT_TOL) {
            return Err(Error::LpUnbounded);
        }
        return Ok(SimplexSolution {
            value: 0.0,
            x: vec![0.0; n],
            pivots: 0,
        });
    }

    // Dense tableau over the structural variables followed by one slack per
    // row. `basis[i]` is the variable currently basic in row `i`.
    let total = n + m;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (i, row) in problem.constraints.iter().enumerate() {
        let mut r = vec![0.0; total];
        r[..n].copy_from_slice(row);
        r[n + i] = 1.0;
        rows.push(r);
    }
    let mut rhs = problem.rhs.clone();
    let mut cost = vec![0.0; total];
    cost[..n].copy_from_slice(&problem.objective);
    let mut value = 0.0;
    let mut basis: Vec<usize> = (n..total).collect();

    let bland_after = 10 * (m + n) + 50;
    let max_pivots = 100 * (m + n) + 1000;

    for pivots in 0..max_pivots {
        // Entering column.
        let entering = if pivots < bland_after {
            let mut best = None;
            let mut best_cost = PIVOT_TOL;
            for (j, &c) in cost.iter().enumerate() {
                if c > best_cost {
                    best_cost = c;
                    best = Some(j);
                }
            }
            best
        } else {
            cost.iter().position(|&c| c > PIVOT_TOL)
        };
        let Some(col) = entering else {
            let mut x = vec![0.0; n];
            for (i, &var) in basis.iter().enumerate() {
                if var < n {
                    x[var] = rhs[i];
                }
            }
            return Ok(SimplexSolution { value, x, pivots });
        };

        // Leaving row by the minimum-ratio test; ties resolved toward the
        // smallest basic variable index, which keeps Bland's rule honest.
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = rows[i][col];
            if a > PIVOT_TOL {
                let ratio = rhs[i] / a;
                let better = match leave {
                    None => true,
                    Some(prev) => {
                        ratio < best_ratio - PIVOT_TOL
                            || (ratio < best_ratio + PIVOT_TOL && basis[i] < basis[prev])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(Error::LpUnbounded);
        };

        // Pivot.
        let piv = rows[row][col];
        for entry in rows[row].iter_mut() {
            *entry /= piv;
        }
        rhs[row] /= piv;
        let pivot_row = rows[row].clone();
        for i in 0..m {
            if i != row {
                let factor = rows[i][col];
                if factor != 0.0 {
                    for (entry, &p) in rows[i].iter_mut().zip(&pivot_row) {
                        *entry -= factor * p;
                    }
                    rhs[i] -= factor * rhs[row];
                    // Elimination round-off must not break feasibility of
                    // degenerate rows.
                    if rhs[i] < 0.0 && rhs[i] > -1e-12 {
                        rhs[i] = 0.0;
                    }
                }
            }
        }
        let factor = cost[col];
        for (entry, &p) in cost.iter_mut().zip(&pivot_row) {
            *entry -= factor * p;
        }
        value += factor * rhs[row];
        basis[row] = col;
    }

    Err(Error::LpIterationLimit { pivots: max_pivots })
}
