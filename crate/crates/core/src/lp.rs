//! Dense two-phase simplex for the small linear programs behind the Pareto
//! and core checks.
//!
//! Variables are nonnegative; constraints are rows with `<=`, `>=` or `=`.
//! Pivoting uses Dantzig's rule and switches to Bland's rule after a run of
//! degenerate pivots, which rules out cycling.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize c . x` subject to the stored rows and `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        LinearProgram { objective, rows: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds a dense row. Panics if its length differs from the variable count.
    pub fn constrain(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars(), "constraint width");
        self.rows.push((coeffs, rel, rhs));
    }

    /// Adds a row given as `(variable, coefficient)` pairs.
    pub fn constrain_sparse(&mut self, terms: &[(usize, f64)], rel: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.n_vars()];
        for &(k, a) in terms {
            coeffs[k] += a;
        }
        self.constrain(coeffs, rel, rhs);
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run(&self.objective)
    }
}

/// Row-major tableau. Column layout: structural variables, then one
/// slack/surplus per inequality row, then one artificial per `>=`/`=` row,
/// then the right-hand side.
struct Tableau {
    rows: usize,
    cols: usize,
    n_struct: usize,
    first_artificial: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    pivot_limit: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n_struct = lp.n_vars();
        let rows = lp.rows.len();
        let n_slack = lp.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        // Flip rows with negative rhs so the initial basis is feasible.
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .rows
            .iter()
            .map(|(a, rel, b)| {
                if *b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (a.iter().map(|x| -x).collect(), flipped, -b)
                } else {
                    (a.clone(), *rel, *b)
                }
            })
            .collect();
        let n_art = normalized.iter().filter(|r| r.1 != Relation::Le).count();
        let first_artificial = n_struct + n_slack;
        let cols = first_artificial + n_art + 1;
        let mut data = vec![0.0; rows * cols];
        let mut basis = vec![0; rows];
        let (mut slack, mut art) = (n_struct, first_artificial);
        for (r, (a, rel, b)) in normalized.iter().enumerate() {
            let row = &mut data[r * cols..(r + 1) * cols];
            row[..n_struct].copy_from_slice(a);
            row[cols - 1] = *b;
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis[r] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis[r] = art;
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis[r] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            rows,
            cols,
            n_struct,
            first_artificial,
            data,
            basis,
            pivots: 0,
            pivot_limit: 100 * (rows + cols) + 1000,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols - 1)
    }

    fn run(mut self, objective: &[f64]) -> Result<LpSolution> {
        let n_cols = self.cols - 1;
        if self.first_artificial < n_cols {
            let mut phase1 = vec![0.0; n_cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            let value = self.optimize(&phase1, n_cols)?;
            let scale = 1.0 + (0..self.rows).map(|r| self.rhs(r).abs()).fold(0.0, f64::max);
            if value < -1e-8 * scale {
                return Err(Error::LpInfeasible);
            }
            self.drive_out_artificials();
        }
        let mut costs = vec![0.0; n_cols];
        costs[..self.n_struct].copy_from_slice(objective);
        let value = self.optimize(&costs, self.first_artificial)?;
        let mut x = vec![0.0; self.n_struct];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.rhs(r).max(0.0);
            }
        }
        Ok(LpSolution { x, objective: value, pivots: self.pivots })
    }

    /// Maximizes `costs . x` over the current basis, letting only columns
    /// below `allowed` enter. Returns the optimal value.
    fn optimize(&mut self, costs: &[f64], allowed: usize) -> Result<f64> {
        let mut degenerate = 0;
        loop {
            let reduced = self.reduced_costs(costs);
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = (0..allowed).filter(|&c| reduced[c] > PIVOT_TOL && !self.basis.contains(&c)).fold(
                None,
                |best: Option<usize>, c| match best {
                    None => Some(c),
                    Some(_) if bland => best,
                    Some(b) if reduced[c] > reduced[b] => Some(c),
                    keep => keep,
                },
            );
            let Some(enter) = entering else {
                return Ok(self.basis.iter().enumerate().map(|(r, &b)| costs[b] * self.rhs(r)).sum());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, enter);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(Error::LpUnbounded);
            };
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(row, enter);
            if self.pivots > self.pivot_limit {
                return Err(Error::LpIterationLimit);
            }
        }
    }

    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut reduced = costs.to_vec();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                let row = &self.data[r * self.cols..(r + 1) * self.cols - 1];
                for (d, a) in reduced.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
        reduced
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let cols = self.cols;
        let inv = 1.0 / self.at(row, col);
        for v in &mut self.data[row * cols..(row + 1) * cols] {
            *v *= inv;
        }
        let pivot_row = self.data[row * cols..(row + 1) * cols].to_vec();
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let f = self.at(r, col);
            if f != 0.0 {
                let target = &mut self.data[r * cols..(r + 1) * cols];
                for (t, p) in target.iter_mut().zip(&pivot_row) {
                    *t -= f * p;
                }
                target[col] = 0.0;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Swaps zero-valued artificials out of the basis where possible. Rows
    /// where that fails are redundant and keep their artificial at zero.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.rows {
            if self.basis[r] < self.first_artificial {
                continue;
            }
            let col = (0..self.first_artificial)
                .filter(|c| !self.basis.contains(c))
                .max_by(|&a, &b| self.at(r, a).abs().total_cmp(&self.at(r, b).abs()));
            if let Some(c) = col {
                if self.at(r, c).abs() > PIVOT_TOL {
                    self.pivot(r, c);
                }
            }
        }
    }
}
