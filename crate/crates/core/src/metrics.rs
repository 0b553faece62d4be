//! Solution-quality measures for a price/allocation pair evaluated under a
//! market's true valuations.
//!
//! Normalized variants return `None` when their denominator is zero and the
//! numerator is not; a zero numerator always normalizes to zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::market::{demand_value, Allocation, EquilibriumSolution, Market, PriceVector};
use crate::matrix::dot;

/// Largest `n * m` for which the exact LP metrics run.
pub const LP_SIZE_LIMIT: usize = 10_000;

/// Per-buyer regret against the supply-capped demand at `prices`.
pub fn regret(market: &Market, prices: &PriceVector, alloc: &Allocation) -> Vec<f64> {
    regret_with_optimum(market, prices, alloc).into_iter().map(|(r, _)| r).collect()
}

fn regret_with_optimum(market: &Market, prices: &PriceVector, alloc: &Allocation) -> Vec<(f64, f64)> {
    let utilities = alloc.utilities(market);
    (0..market.n_buyers())
        .map(|i| {
            let best = demand_value(market, i, prices).value;
            ((best - utilities[i]).max(0.0), best)
        })
        .collect()
}

/// Envy of each buyer toward the bundle they like best, floored at zero.
pub fn envy(market: &Market, alloc: &Allocation) -> Vec<f64> {
    envy_with_target(market, alloc).into_iter().map(|(e, _)| e).collect()
}

/// `(envy_i, u_i(most envied bundle))`.
fn envy_with_target(market: &Market, alloc: &Allocation) -> Vec<(f64, f64)> {
    let v = market.valuations();
    (0..market.n_buyers())
        .into_par_iter()
        .map(|i| {
            let own = dot(v.row(i), alloc.bundle(i));
            let best = (0..market.n_buyers()).map(|k| dot(v.row(i), alloc.bundle(k))).fold(own, f64::max);
            ((best - own).max(0.0), best)
        })
        .collect()
}

/// Maximin share of every buyer. For divisible goods with linear utilities
/// the equal split is an optimal partition, so `MMS_i = v_i . s / n`.
pub fn mms_shares(market: &Market) -> Vec<f64> {
    let n = market.n_buyers() as f64;
    (0..market.n_buyers()).map(|i| market.full_supply_value(i) / n).collect()
}

pub fn mms_gap(market: &Market, alloc: &Allocation) -> Vec<f64> {
    let u = alloc.utilities(market);
    mms_shares(market).iter().zip(&u).map(|(m, u)| (m - u).max(0.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nsw {
    /// Product of utilities.
    pub product: f64,
    /// Its `n`-th root.
    pub geomean: f64,
}

/// Nash social welfare, accumulated in log space.
pub fn nsw(market: &Market, alloc: &Allocation) -> Nsw {
    let u = alloc.utilities(market);
    if u.iter().any(|&x| x <= 0.0) {
        return Nsw { product: 0.0, geomean: 0.0 };
    }
    let log_sum: f64 = u.iter().map(|x| x.ln()).sum();
    Nsw { product: log_sum.exp(), geomean: (log_sum / u.len() as f64).exp() }
}

/// Budget-weighted geometric mean `exp(sum_i B_i ln u_i / sum_i B_i)`, the
/// quantity the equilibrium maximizes when budgets differ.
pub fn nsw_budget_weighted(market: &Market, alloc: &Allocation) -> f64 {
    let u = alloc.utilities(market);
    if u.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    let b = market.budgets();
    let weighted: f64 = u.iter().zip(b).map(|(x, w)| w * x.ln()).sum();
    (weighted / market.total_budget()).exp()
}

/// Largest gain in total welfare over allocations that leave nobody worse
/// off, computed by an exact LP.
pub fn pareto_gap(market: &Market, alloc: &Allocation) -> Result<f64> {
    let (n, m) = (market.n_buyers(), market.n_items());
    if n * m > LP_SIZE_LIMIT {
        return Err(Error::ScaleLimit { size: n * m, limit: LP_SIZE_LIMIT });
    }
    let u = alloc.utilities(market);
    let welfare: f64 = u.iter().sum();
    let best = max_welfare_subject_to(market, |i| Some(u[i]))?;
    Ok((best - welfare).max(0.0))
}

/// Solves `max sum_i v_i . y_i` over feasible `y` with `v_i . y_i >= floor(i)`
/// for every buyer whose floor is given. Only entries with `v_ij > 0` become
/// variables.
///
/// Floors taken from an allocation that overshoots supply by round-off can
/// make the program infeasible; they are then relaxed by one part in 1e9.
pub(crate) fn max_welfare_subject_to(market: &Market, floor: impl Fn(usize) -> Option<f64>) -> Result<f64> {
    match welfare_lp(market, &floor, 1.0) {
        Err(Error::LpInfeasible) => welfare_lp(market, &floor, 1.0 - 1e-9),
        other => other,
    }
}

fn welfare_lp(market: &Market, floor: &impl Fn(usize) -> Option<f64>, relax: f64) -> Result<f64> {
    let v = market.valuations();
    let (n, m) = (market.n_buyers(), market.n_items());
    let vars: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..m).filter(move |&j| v[(i, j)] > 0.0).map(move |j| (i, j))).collect();
    let mut by_buyer: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (k, &(i, j)) in vars.iter().enumerate() {
        by_buyer[i].push((k, v[(i, j)]));
        by_item[j].push((k, 1.0));
    }
    let mut lp = LinearProgram::maximize(vars.iter().map(|&(i, j)| v[(i, j)]).collect());
    for (i, terms) in by_buyer.iter().enumerate() {
        if let Some(f) = floor(i) {
            if f > 0.0 {
                lp.constrain_sparse(terms, Relation::Ge, f * relax);
            }
        }
    }
    for (terms, &s) in by_item.iter().zip(market.supplies()) {
        if !terms.is_empty() {
            lp.constrain_sparse(terms, Relation::Le, s);
        }
    }
    Ok(lp.solve()?.objective)
}

/// Negishi weights `beta_i = B_i / u_i`.
pub fn negishi_weights(market: &Market, sol: &EquilibriumSolution) -> Result<Vec<f64>> {
    sol.utilities
        .iter()
        .zip(market.budgets())
        .enumerate()
        .map(|(i, (&u, &b))| if u > 0.0 { Ok(b / u) } else { Err(Error::ZeroUtility { buyer: i }) })
        .collect()
}

/// `max_y sum_i beta_i v_i . y_i - sum_i beta_i v_i . x_i`; the maximum gives
/// each item's whole supply to a buyer with the largest `beta_i v_ij`.
pub fn weighted_welfare_gap(market: &Market, beta: &[f64], alloc: &Allocation) -> f64 {
    let v = market.valuations();
    let best: f64 = market
        .supplies()
        .iter()
        .enumerate()
        .map(|(j, s)| s * (0..market.n_buyers()).map(|i| beta[i] * v[(i, j)]).fold(0.0, f64::max))
        .sum();
    let current: f64 = alloc.utilities(market).iter().zip(beta).map(|(u, b)| b * u).sum();
    (best - current).max(0.0)
}

/// Welfare obtained when every item goes to whoever values it most.
pub fn max_welfare(market: &Market) -> f64 {
    let v = market.valuations();
    market
        .supplies()
        .iter()
        .enumerate()
        .map(|(j, s)| s * (0..market.n_buyers()).map(|i| v[(i, j)]).fold(0.0, f64::max))
        .sum()
}

/// Total utility as a fraction of [`max_welfare`].
pub fn efficiency(market: &Market, alloc: &Allocation) -> f64 {
    let total: f64 = alloc.utilities(market).iter().sum();
    total / max_welfare(market)
}

/// `num / den` with the zero conventions described at module level.
pub fn normalize(num: f64, den: f64) -> Option<f64> {
    if num == 0.0 {
        Some(0.0)
    } else if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Every metric for one price/allocation pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub regret: Vec<f64>,
    /// Regret over the value of the capped demand.
    pub regret_norm: Vec<Option<f64>>,
    pub envy: Vec<f64>,
    /// Envy over the value of the envied bundle.
    pub envy_norm: Vec<Option<f64>>,
    pub mms_gap: Vec<f64>,
    /// `u_i / MMS_i`.
    pub mms_frac: Vec<f64>,
    pub utilities: Vec<f64>,
    pub nsw: Nsw,
    pub nsw_budget_weighted: f64,
    /// `None` above [`LP_SIZE_LIMIT`].
    pub pareto_gap: Option<f64>,
    pub efficiency: f64,
    /// Present when Negishi weights were supplied.
    pub weighted_welfare_gap: Option<f64>,
}

impl MetricsReport {
    /// `beta` are the Negishi weights to score weighted welfare against,
    /// usually those of the solution the allocation came from.
    pub fn evaluate(market: &Market, prices: &PriceVector, alloc: &Allocation, beta: Option<&[f64]>) -> Result<Self> {
        let regret = regret_with_optimum(market, prices, alloc);
        let envy = envy_with_target(market, alloc);
        let utilities = alloc.utilities(market);
        let pareto_gap = match pareto_gap(market, alloc) {
            Ok(g) => Some(g),
            Err(Error::ScaleLimit { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            regret_norm: regret.iter().map(|&(r, d)| normalize(r, d)).collect(),
            regret: regret.into_iter().map(|(r, _)| r).collect(),
            envy_norm: envy.iter().map(|&(e, t)| normalize(e, t)).collect(),
            envy: envy.into_iter().map(|(e, _)| e).collect(),
            mms_gap: mms_gap(market, alloc),
            mms_frac: mms_shares(market).iter().zip(&utilities).map(|(m, u)| u / m).collect(),
            nsw: nsw(market, alloc),
            nsw_budget_weighted: nsw_budget_weighted(market, alloc),
            pareto_gap,
            efficiency: efficiency(market, alloc),
            weighted_welfare_gap: beta.map(|b| weighted_welfare_gap(market, b, alloc)),
            utilities,
        })
    }

    pub fn max_regret(&self) -> f64 {
        self.regret.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_envy(&self) -> f64 {
        self.envy.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_mms_gap(&self) -> f64 {
        self.mms_gap.iter().copied().fold(0.0, f64::max)
    }
}
