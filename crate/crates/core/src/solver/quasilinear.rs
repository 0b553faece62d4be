//! Quasi-linear utilities: money left unspent is worth its face value.

use super::pd::run_pd;
use super::SolverOptions;
use crate::error::Result;
use crate::market::{Demand, EquilibriumSolution, Market, PriceVector, ValidationReport};
use crate::matrix::dot;

/// Equilibrium with possibly positive leftovers `delta_i` and `beta_i <= 1`.
pub type QuasiLinearSolution = EquilibriumSolution;

pub const CHECK_BETA_CAP: &str = "beta_at_most_one";
pub const CHECK_PRICE_DOMINANCE: &str = "price_dominates_beta_value";
pub const CHECK_TIGHT_ON_SUPPORT: &str = "price_tight_on_support";
pub const CHECK_LEFTOVER_SLACKNESS: &str = "leftover_slackness";
pub const CHECK_BUDGET_BALANCE: &str = "budget_balance";
pub const CHECK_CLEARING_WHEN_PRICED: &str = "clearing_when_priced";

/// Solves `max sum_i B_i ln(v_i . x_i + delta_i) - delta_i` with the
/// primal-dual method, the leftover `delta_i` living in the buyer's block.
pub fn solve_quasilinear(market: &Market, opts: &SolverOptions) -> Result<QuasiLinearSolution> {
    Ok(run_pd(market, opts, true)?.solution)
}

/// Utility-maximizing purchase when utility is `v_i . x + (B_i - p . x)`:
/// buy items with `v_ij > p_j`, best ratio first, within budget and supply.
/// `value` includes the unspent money.
pub fn quasilinear_demand(market: &Market, i: usize, prices: &PriceVector) -> Demand {
    let v = market.valuations().row(i);
    let s = market.supplies();
    let p = prices.as_slice();
    let mut order: Vec<usize> = (0..v.len()).filter(|&j| v[j] > p[j]).collect();
    order.sort_by(|&a, &b| (v[b] * p[a]).total_cmp(&(v[a] * p[b])));
    let mut bundle = vec![0.0; v.len()];
    let mut budget = market.budgets()[i];
    for j in order {
        let qty = if p[j] > 0.0 { s[j].min(budget / p[j]) } else { s[j] };
        bundle[j] = qty;
        budget -= qty * p[j];
        if budget <= 0.0 {
            budget = 0.0;
            break;
        }
    }
    Demand { value: dot(v, &bundle) + budget, bundle }
}

/// Quasi-linear KKT residuals with `beta_i = B_i / (v_i . x_i + delta_i)`.
pub fn verify_quasilinear(market: &Market, sol: &QuasiLinearSolution, tol: f64) -> ValidationReport {
    let (n, m) = (market.n_buyers(), market.n_items());
    let v = market.valuations();
    let x = sol.allocation.shares();
    let p = sol.prices.as_slice();
    let delta = &sol.leftover;
    let beta: Vec<f64> = (0..n).map(|i| market.budgets()[i] / (dot(v.row(i), x.row(i)) + delta[i])).collect();
    let mut report = ValidationReport { tol, checks: Vec::new() };

    let mut push = |name: &str, per: Vec<f64>| {
        let worst = per.iter().copied().fold(0.0, f64::max);
        let offenders = (0..per.len()).filter(|&k| per[k] > tol).collect();
        report.push_residual(name, worst, offenders);
    };

    push(CHECK_BETA_CAP, beta.iter().map(|b| b - 1.0).collect());
    push(
        CHECK_PRICE_DOMINANCE,
        (0..n).map(|i| (0..m).map(|j| beta[i] * v[(i, j)] - p[j]).fold(0.0, f64::max)).collect(),
    );
    push(
        CHECK_TIGHT_ON_SUPPORT,
        (0..n)
            .map(|i| {
                (0..m).filter(|&j| x[(i, j)] > tol).map(|j| (p[j] - beta[i] * v[(i, j)]).abs()).fold(0.0, f64::max)
            })
            .collect(),
    );
    push(CHECK_LEFTOVER_SLACKNESS, (0..n).map(|i| (delta[i] * (1.0 - beta[i])).abs()).collect());
    push(CHECK_BUDGET_BALANCE, (0..n).map(|i| (dot(x.row(i), p) + delta[i] - market.budgets()[i]).abs()).collect());
    let sums = x.col_sums();
    push(
        CHECK_CLEARING_WHEN_PRICED,
        (0..m)
            .map(|j| {
                if p[j] > tol {
                    (sums[j] - market.supplies()[j]).abs()
                } else {
                    (sums[j] - market.supplies()[j]).max(0.0)
                }
            })
            .collect(),
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn two_bidders(v2: f64) -> Market {
        Market::new(Matrix::from_rows(&[[10.0], [v2]]).unwrap(), vec![0.5, 2.0], vec![1.0]).unwrap()
    }

    #[test]
    fn high_value_bidder_is_budget_limited() {
        let m = two_bidders(1.0);
        let sol = solve_quasilinear(&m, &SolverOptions::default()).unwrap();
        let x = sol.allocation.shares();
        assert!((sol.prices[0] - 1.0).abs() < 1e-5, "{:?}", sol.prices);
        assert!((x[(0, 0)] - 0.5).abs() < 1e-5);
        assert!((x[(1, 0)] - 0.5).abs() < 1e-5);
        let welfare = 10.0 * x[(0, 0)] + x[(1, 0)];
        assert!((welfare - 5.5).abs() < 1e-4);
        let report = verify_quasilinear(&m, &sol, 1e-5);
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn overstated_low_value_shifts_allocation() {
        let m = two_bidders(2.0);
        let sol = solve_quasilinear(&m, &SolverOptions::default()).unwrap();
        let x = sol.allocation.shares();
        assert!((sol.prices[0] - 2.0).abs() < 1e-5, "{:?}", sol.prices);
        assert!((x[(0, 0)] - 0.25).abs() < 1e-5);
        assert!((x[(1, 0)] - 0.75).abs() < 1e-5);
        // welfare under the original valuation of the second bidder
        let welfare = 10.0 * x[(0, 0)] + 1.0 * x[(1, 0)];
        assert!((welfare - 3.25).abs() < 1e-4);
    }

    #[test]
    fn equal_values_price_at_value() {
        let m = Market::new(Matrix::from_rows(&[[1.0], [1.0]]).unwrap(), vec![1.0, 1.0], vec![1.0]).unwrap();
        let sol = solve_quasilinear(&m, &SolverOptions::default()).unwrap();
        assert!((sol.prices[0] - 1.0).abs() < 1e-5, "{:?}", sol.prices);
        for b in &sol.beta {
            assert!((b - 1.0).abs() < 1e-5);
        }
        let above = PriceVector::new(vec![1.0 + 1e-3]);
        for i in 0..2 {
            let d = quasilinear_demand(&m, i, &above);
            assert_eq!(d.bundle, vec![0.0]);
            assert_eq!(d.value, 1.0);
        }
    }

    #[test]
    fn demand_respects_budget_and_prefers_best_ratio() {
        let m = Market::new(Matrix::from_rows(&[[3.0, 4.0, 0.5]]).unwrap(), vec![1.0], vec![1.0, 1.0, 1.0]).unwrap();
        let d = quasilinear_demand(&m, 0, &PriceVector::new(vec![1.0, 2.0, 0.1]));
        // ratios 3, 2, 5: item 2 first (0.1), then item 0 (0.9 of it)
        assert!((d.bundle[2] - 1.0).abs() < 1e-12);
        assert!((d.bundle[0] - 0.9).abs() < 1e-12);
        assert_eq!(d.bundle[1], 0.0);
        assert!((d.value - (0.5 + 2.7)).abs() < 1e-12);
    }
}
