//! Lifting representative-market solutions back to the original market.
//!
//! Prices are copied from each item's representative. Allocations either
//! split every representative holding proportionally (first by supply over
//! the items it stands for, then by budget over the buyers), or re-solve a
//! small equilibrium among each cluster's members over the items the
//! proportional split handed that cluster.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractionMap;
use crate::error::Result;
use crate::market::{Allocation, Diagnostics, EquilibriumSolution, Market, PriceVector};
use crate::matrix::Matrix;
use crate::solver::{solve_eg_pd, SolverOptions};

/// Cluster supplies at or below this are left out of recursive sub-markets.
pub const MIN_SUB_SUPPLY: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    Proportional,
    Recursive,
}

/// How one cluster's recursive allocation was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SubSolve {
    /// A single eligible buyer took the whole cluster supply.
    TakeAll,
    Solved(Diagnostics),
    /// The sub-solver missed its target; the cluster kept its proportional
    /// shares.
    FellBack(Diagnostics),
    /// No member values any of the cluster's items; proportional shares kept.
    Unvalued,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedSolution {
    pub prices: PriceVector,
    pub allocation: Allocation,
    pub kind: LiftKind,
    /// One entry per representative buyer (recursive lifts only).
    pub sub_solves: Vec<SubSolve>,
}

impl LiftedSolution {
    pub fn fell_back(&self) -> usize {
        self.sub_solves.iter().filter(|s| matches!(s, SubSolve::FellBack(_))).count()
    }
}

/// `p_j = p_tilde_{r(j)}`.
pub fn lift_prices(rep_prices: &PriceVector, item_assign: &[usize]) -> PriceVector {
    PriceVector::new(item_assign.iter().map(|&c| rep_prices[c]).collect())
}

/// Step one of the proportional lift: `x'_{c j} = s_j / s_tilde_{r(j)} * x_tilde_{c r(j)}`,
/// an `n_hat x m` matrix.
pub fn supply_split(rep_alloc: &Allocation, market: &Market, abs: &AbstractionMap) -> Matrix {
    let s = market.supplies();
    let s_rep = abs.rep_market.supplies();
    let x = rep_alloc.shares();
    Matrix::from_fn(abs.n_hat(), market.n_items(), |c, j| {
        let r = abs.item_assign[j];
        s[j] / s_rep[r] * x[(c, r)]
    })
}

pub fn proportional_lift(rep_sol: &EquilibriumSolution, market: &Market, abs: &AbstractionMap) -> LiftedSolution {
    let split = supply_split(&rep_sol.allocation, market, abs);
    let b = market.budgets();
    let b_rep = abs.rep_market.budgets();
    let x = Matrix::from_fn(market.n_buyers(), market.n_items(), |i, j| {
        let c = abs.buyer_assign[i];
        b[i] / b_rep[c] * split[(c, j)]
    });
    LiftedSolution {
        prices: lift_prices(&rep_sol.prices, &abs.item_assign),
        allocation: Allocation::new(x),
        kind: LiftKind::Proportional,
        sub_solves: Vec::new(),
    }
}

/// Re-solves each cluster's members over their proportional item supplies.
/// Sub-market prices are discarded; the lifted prices are the
/// representative ones.
pub fn recursive_lift(
    rep_sol: &EquilibriumSolution,
    market: &Market,
    abs: &AbstractionMap,
    opts: &SolverOptions,
) -> Result<LiftedSolution> {
    let split = supply_split(&rep_sol.allocation, market, abs);
    let members = abs.buyer_members();
    let total_budget = market.total_budget();
    let outcomes: Vec<(Vec<(usize, Vec<(usize, f64)>)>, SubSolve)> = members
        .par_iter()
        .enumerate()
        .map(|(c, buyers)| solve_cluster(market, buyers, split.row(c), total_budget, opts))
        .collect::<Result<_>>()?;

    let mut x = Matrix::zeros(market.n_buyers(), market.n_items());
    let mut sub_solves = Vec::with_capacity(outcomes.len());
    for (rows, info) in outcomes {
        for (i, entries) in rows {
            for (j, q) in entries {
                x[(i, j)] = q;
            }
        }
        sub_solves.push(info);
    }
    Ok(LiftedSolution {
        prices: lift_prices(&rep_sol.prices, &abs.item_assign),
        allocation: Allocation::new(x),
        kind: LiftKind::Recursive,
        sub_solves,
    })
}

type ClusterRows = Vec<(usize, Vec<(usize, f64)>)>;

fn solve_cluster(
    market: &Market,
    buyers: &[usize],
    supply: &[f64],
    total_budget: f64,
    opts: &SolverOptions,
) -> Result<(ClusterRows, SubSolve)> {
    let v = market.valuations();
    let b = market.budgets();
    let items: Vec<usize> = (0..supply.len()).filter(|&j| supply[j] > MIN_SUB_SUPPLY).collect();
    let cluster_budget: f64 = buyers.iter().map(|&i| b[i]).sum();
    let proportional = || -> ClusterRows {
        buyers.iter().map(|&i| (i, items.iter().map(|&j| (j, b[i] / cluster_budget * supply[j])).collect())).collect()
    };
    // Buyers who value none of the cluster's items would make the
    // sub-market invalid; they receive nothing.
    let eligible: Vec<usize> = buyers.iter().copied().filter(|&i| items.iter().any(|&j| v[(i, j)] > 0.0)).collect();
    match eligible.len() {
        0 => return Ok((proportional(), SubSolve::Unvalued)),
        1 => {
            let rows = vec![(eligible[0], items.iter().map(|&j| (j, supply[j])).collect())];
            return Ok((rows, SubSolve::TakeAll));
        }
        _ => {}
    }
    let sub = Market::new(
        v.submatrix(&eligible, &items),
        eligible.iter().map(|&i| b[i]).collect(),
        items.iter().map(|&j| supply[j]).collect(),
    )?;
    let sub_opts = SolverOptions { target_gap: opts.target_gap * cluster_budget / total_budget, ..opts.clone() };
    let sol = solve_eg_pd(&sub, &sub_opts)?;
    if !sol.diagnostics.converged {
        return Ok((proportional(), SubSolve::FellBack(sol.diagnostics)));
    }
    let x = sol.allocation.shares();
    let rows = eligible
        .iter()
        .enumerate()
        .map(|(a, &i)| (i, items.iter().enumerate().map(|(k, &j)| (j, x[(a, k)])).collect()))
        .collect();
    Ok((rows, SubSolve::Solved(sol.diagnostics)))
}
