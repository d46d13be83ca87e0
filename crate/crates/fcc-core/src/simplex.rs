//! Dense two-phase simplex method over exact rationals.
//!
//! Bland's smallest-index rule for both the entering and the leaving variable
//! rules out cycling and makes every solve deterministic, which the golden
//! tests rely on. Problem sizes stay at desk scale, so a dense tableau is the
//! right trade.

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::num::Ratio;

#[derive(Clone, Debug)]
pub struct StandardLp {
    /// Coefficients of the objective to be minimized, one per variable.
    pub objective: Vec<Ratio>,
    /// Equality constraints `row · x = rhs` over `x >= 0`.
    pub rows: Vec<Vec<Ratio>>,
    pub rhs: Vec<Ratio>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<Ratio>, objective: Ratio },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LpError {
    #[error("constraint row {row} has {got} coefficients, expected {expected}")]
    ShapeMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("rhs length {got} does not match {expected} constraint rows")]
    RhsMismatch { expected: usize, got: usize },
    #[error("pivot cap {0} exceeded")]
    PivotCap(usize),
}

const PIVOT_CAP: usize = 2_000_000;

struct Tableau {
    // rows[i] has num_cols coefficient entries followed by the rhs.
    rows: Vec<Vec<Ratio>>,
    // Reduced-cost row, same layout; its rhs entry is minus the objective.
    cost: Vec<Ratio>,
    basis: Vec<usize>,
    num_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let factor = self.rows[row][col].clone();
        for entry in self.rows[row].iter_mut() {
            *entry /= &factor;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row || r[col].is_zero() {
                continue;
            }
            let scale = r[col].clone();
            for (entry, p) in r.iter_mut().zip(pivot_row.iter()) {
                *entry -= &scale * p;
            }
        }
        if !self.cost[col].is_zero() {
            let scale = self.cost[col].clone();
            for (entry, p) in self.cost.iter_mut().zip(pivot_row.iter()) {
                *entry -= &scale * p;
            }
        }
        self.basis[row] = col;
    }

    /// Dantzig's rule (most negative reduced cost, ties to the lowest index)
    /// until the objective stalls on degenerate pivots, then Bland's
    /// smallest-index rule, which cannot cycle. Deterministic either way.
    fn run(&mut self, pivots_used: &mut usize) -> Result<bool, LpError> {
        let stall_limit = 2 * self.rows.len() + 8;
        let mut stalled = 0usize;
        let mut bland = false;
        loop {
            let col = if bland {
                match (0..self.num_cols).find(|&j| self.cost[j].is_negative()) {
                    Some(j) => j,
                    None => return Ok(true),
                }
            } else {
                let mut best: Option<usize> = None;
                for j in 0..self.num_cols {
                    if self.cost[j].is_negative()
                        && best.map(|b| self.cost[j] < self.cost[b]).unwrap_or(true)
                    {
                        best = Some(j);
                    }
                }
                match best {
                    Some(j) => j,
                    None => return Ok(true),
                }
            };
            let mut leave: Option<(usize, Ratio)> = None;
            for i in 0..self.rows.len() {
                let coeff = &self.rows[i][col];
                if !coeff.is_positive() {
                    continue;
                }
                let ratio = &self.rows[i][self.num_cols] / coeff;
                let better = match &leave {
                    None => true,
                    Some((best_i, best)) => {
                        ratio < *best || (ratio == *best && self.basis[i] < self.basis[*best_i])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((row, step)) = leave else {
                return Ok(false); // unbounded direction
            };
            if step.is_zero() {
                stalled += 1;
                if stalled > stall_limit {
                    bland = true;
                }
            } else {
                stalled = 0;
            }
            self.pivot(row, col);
            *pivots_used += 1;
            if *pivots_used > PIVOT_CAP {
                return Err(LpError::PivotCap(PIVOT_CAP));
            }
        }
    }

    fn objective_value(&self) -> Ratio {
        -self.cost[self.num_cols].clone()
    }
}

/// Minimize `objective · x` subject to `rows · x = rhs`, `x >= 0`.
pub fn solve(lp: &StandardLp) -> Result<LpOutcome, LpError> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    if lp.rhs.len() != m {
        return Err(LpError::RhsMismatch {
            expected: m,
            got: lp.rhs.len(),
        });
    }
    for (i, row) in lp.rows.iter().enumerate() {
        if row.len() != n {
            return Err(LpError::ShapeMismatch {
                row: i,
                expected: n,
                got: row.len(),
            });
        }
    }

    // Phase 1 tableau with one artificial variable per row and rhs >= 0.
    let mut rows: Vec<Vec<Ratio>> = Vec::with_capacity(m);
    for i in 0..m {
        let flip = lp.rhs[i].is_negative();
        let mut row: Vec<Ratio> = Vec::with_capacity(n + m + 1);
        for v in &lp.rows[i] {
            row.push(if flip { -v.clone() } else { v.clone() });
        }
        for j in 0..m {
            row.push(if j == i {
                Ratio::from_integer(1.into())
            } else {
                Ratio::zero()
            });
        }
        row.push(if flip {
            -lp.rhs[i].clone()
        } else {
            lp.rhs[i].clone()
        });
        rows.push(row);
    }

    // Reduced phase-1 costs: minimize the sum of artificials whose basis
    // columns must read zero, so subtract every constraint row.
    let mut cost = vec![Ratio::zero(); n + m + 1];
    for row in &rows {
        for (c, v) in cost.iter_mut().zip(row.iter()) {
            *c -= v;
        }
    }
    for c in cost.iter_mut().take(n + m).skip(n) {
        *c = Ratio::zero();
    }

    let mut tableau = Tableau {
        rows,
        cost,
        basis: (n..n + m).collect(),
        num_cols: n + m,
    };
    let mut pivots = 0usize;
    tableau.run(&mut pivots)?;
    if tableau.objective_value().is_positive() {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive remaining artificials out of the basis; rows that cannot pivot
    // are redundant and dropped.
    let mut drop_rows = Vec::new();
    for i in 0..tableau.rows.len() {
        if tableau.basis[i] < n {
            continue;
        }
        match (0..n).find(|&j| !tableau.rows[i][j].is_zero()) {
            Some(j) => tableau.pivot(i, j),
            None => drop_rows.push(i),
        }
    }
    for &i in drop_rows.iter().rev() {
        tableau.rows.remove(i);
        tableau.basis.remove(i);
    }

    // Phase 2: rebuild the tableau without artificial columns and with the
    // real objective reduced against the current basis.
    let keep_rhs = tableau.num_cols;
    let rows: Vec<Vec<Ratio>> = tableau
        .rows
        .iter()
        .map(|r| {
            let mut row: Vec<Ratio> = r[..n].to_vec();
            row.push(r[keep_rhs].clone());
            row
        })
        .collect();
    let basis = tableau.basis.clone();
    let mut cost: Vec<Ratio> = lp.objective.clone();
    cost.push(Ratio::zero());
    for (i, &b) in basis.iter().enumerate() {
        if cost[b].is_zero() {
            continue;
        }
        let scale = cost[b].clone();
        for (c, v) in cost.iter_mut().zip(rows[i].iter()) {
            *c -= &scale * v;
        }
    }

    let mut tableau = Tableau {
        rows,
        cost,
        basis,
        num_cols: n,
    };
    if !tableau.run(&mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = vec![Ratio::zero(); n];
    for (i, &b) in tableau.basis.iter().enumerate() {
        x[b] = tableau.rows[i][n].clone();
    }
    Ok(LpOutcome::Optimal {
        objective: tableau.objective_value(),
        x,
    })
}

/// Minimize from a caller-supplied basic feasible basis, skipping phase 1.
/// Falls back to the two-phase path when the basis cannot be canonicalized
/// into a feasible tableau.
pub fn solve_from_basis(lp: &StandardLp, basis: &[usize]) -> Result<LpOutcome, LpError> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    if basis.len() != m || basis.iter().any(|&b| b >= n) {
        return solve(lp);
    }
    let mut rows: Vec<Vec<Ratio>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = lp.rows[i].clone();
        row.push(lp.rhs[i].clone());
        rows.push(row);
    }
    let mut cost: Vec<Ratio> = lp.objective.clone();
    cost.push(Ratio::zero());
    let mut tableau = Tableau {
        rows,
        cost,
        basis: basis.to_vec(),
        num_cols: n,
    };
    // Canonicalize one basis column at a time; a zero pivot or a negative
    // right-hand side sends the problem down the generic path instead.
    for (i, &b) in basis.iter().enumerate() {
        if tableau.rows[i][b].is_zero() {
            return solve(lp);
        }
        tableau.pivot(i, b);
    }
    if tableau.rows.iter().any(|r| r[n].is_negative()) {
        return solve(lp);
    }
    let mut pivots = 0usize;
    if !tableau.run(&mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![Ratio::zero(); n];
    for (i, &b) in tableau.basis.iter().enumerate() {
        x[b] = tableau.rows[i][n].clone();
    }
    Ok(LpOutcome::Optimal {
        objective: tableau.objective_value(),
        x,
    })
}
