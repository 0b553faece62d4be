//! Linear Fisher markets: the instance, allocations, prices, solutions, and
//! the primitive checks every other module builds on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Default tolerance for exact-check reports.
pub const DEFAULT_TOL: f64 = 1e-7;

/// A linear Fisher market: `n` buyers with budgets, `m` divisible items with
/// supplies, and an `n x m` matrix of per-unit valuations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Market {
    valuations: Matrix,
    budgets: Vec<f64>,
    supplies: Vec<f64>,
}

impl Market {
    /// Assembles a market, checking only that the dimensions agree.
    ///
    /// Use [`Market::new`] when the market invariants must hold; this
    /// constructor exists so that invalid instances can still be inspected
    /// with [`validate_market`].
    pub fn from_parts(valuations: Matrix, budgets: Vec<f64>, supplies: Vec<f64>) -> Result<Self> {
        if budgets.len() != valuations.rows() {
            return Err(Error::DimensionMismatch {
                context: "budgets",
                expected: valuations.rows(),
                found: budgets.len(),
            });
        }
        if supplies.len() != valuations.cols() {
            return Err(Error::DimensionMismatch {
                context: "supplies",
                expected: valuations.cols(),
                found: supplies.len(),
            });
        }
        Ok(Market { valuations, budgets, supplies })
    }

    /// Assembles a market and rejects it unless every invariant holds.
    pub fn new(valuations: Matrix, budgets: Vec<f64>, supplies: Vec<f64>) -> Result<Self> {
        let market = Market::from_parts(valuations, budgets, supplies)?;
        market.ensure_valid()?;
        Ok(market)
    }

    /// Unit budgets and unit supplies.
    pub fn with_unit_budgets(valuations: Matrix) -> Result<Self> {
        let (n, m) = valuations.shape();
        Market::new(valuations, vec![1.0; n], vec![1.0; m])
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let report = validate_market(self);
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidMarket(report.summary()))
        }
    }

    #[inline]
    pub fn n_buyers(&self) -> usize {
        self.valuations.rows()
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.valuations.cols()
    }

    #[inline]
    pub fn valuations(&self) -> &Matrix {
        &self.valuations
    }

    #[inline]
    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    #[inline]
    pub fn supplies(&self) -> &[f64] {
        &self.supplies
    }

    #[inline]
    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    /// Upper end of the price box, `||B||_1 / s_j`.
    pub fn price_caps(&self) -> Vec<f64> {
        let total = self.total_budget();
        self.supplies.iter().map(|s| total / s).collect()
    }

    /// The same budgets and supplies with a different valuation matrix.
    pub fn with_valuations(&self, valuations: Matrix) -> Result<Market> {
        if valuations.shape() != self.valuations.shape() {
            return Err(Error::DimensionMismatch {
                context: "valuations",
                expected: self.valuations.rows() * self.valuations.cols(),
                found: valuations.rows() * valuations.cols(),
            });
        }
        Market::from_parts(valuations, self.budgets.clone(), self.supplies.clone())
    }

    /// Value of the whole supply to buyer `i`.
    pub fn full_supply_value(&self, i: usize) -> f64 {
        dot(self.valuations.row(i), &self.supplies)
    }
}

/// An `n x m` matrix of item shares in item units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(Matrix);

impl Allocation {
    pub fn new(shares: Matrix) -> Self {
        Allocation(shares)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Allocation(Matrix::zeros(n, m))
    }

    /// Every buyer receives `s_j / n` of every item.
    pub fn uniform(market: &Market) -> Self {
        let n = market.n_buyers() as f64;
        Allocation(Matrix::from_fn(market.n_buyers(), market.n_items(), |_, j| market.supplies()[j] / n))
    }

    #[inline]
    pub fn shares(&self) -> &Matrix {
        &self.0
    }

    pub fn into_shares(self) -> Matrix {
        self.0
    }

    #[inline]
    pub fn bundle(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn n_buyers(&self) -> usize {
        self.0.rows()
    }

    pub fn n_items(&self) -> usize {
        self.0.cols()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.0.col_sums()
    }

    /// Nonnegative and no column exceeds its supply by more than `tol`.
    pub fn is_feasible(&self, supplies: &[f64], tol: f64) -> bool {
        self.0.as_slice().iter().all(|&x| x >= -tol)
            && self.column_sums().iter().zip(supplies).all(|(c, s)| *c <= s + tol)
    }

    /// Every column sums to its supply within `tol`.
    pub fn is_full(&self, supplies: &[f64], tol: f64) -> bool {
        self.is_feasible(supplies, tol) && self.column_sums().iter().zip(supplies).all(|(c, s)| (c - s).abs() <= tol)
    }

    /// `u_i = v_i . x_i` for every buyer.
    pub fn utilities(&self, market: &Market) -> Vec<f64> {
        (0..market.n_buyers()).map(|i| dot(market.valuations().row(i), self.bundle(i))).collect()
    }

    /// Spending `p . x_i` for every buyer.
    pub fn spending(&self, prices: &PriceVector) -> Vec<f64> {
        self.0.row_iter().map(|r| dot(r, prices.as_slice())).collect()
    }
}

/// Per-unit item prices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(prices: Vec<f64>) -> Self {
        PriceVector(prices)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for PriceVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// How a solution was produced and how close it got.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: String,
    pub iterations: usize,
    /// Restricted Lagrangian duality gap of the returned pair (first-order
    /// solvers), or the final price movement (fixed-point oracle).
    pub duality_gap: f64,
    pub converged: bool,
    /// `max_j |sum_i x_ij - s_j|` before the returned allocation was made feasible.
    pub clearing_residual: f64,
    /// `max_i |p . x_i + delta_i - B_i|`.
    pub budget_residual: f64,
}

/// Prices, allocation, and the per-buyer quantities derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub prices: PriceVector,
    pub allocation: Allocation,
    pub utilities: Vec<f64>,
    /// Inverse bang-per-buck `B_i / u_i` (the quasi-linear dual variable in
    /// that mode).
    pub beta: Vec<f64>,
    /// Unspent budget; identically zero for linear utilities.
    pub leftover: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl EquilibriumSolution {
    /// Derives utilities, `beta`, and zero leftovers from a price/allocation pair.
    pub fn from_pair(market: &Market, prices: PriceVector, allocation: Allocation) -> Self {
        let utilities = allocation.utilities(market);
        let beta =
            utilities.iter().zip(market.budgets()).map(|(u, b)| if *u > 0.0 { b / u } else { f64::INFINITY }).collect();
        EquilibriumSolution {
            prices,
            allocation,
            utilities,
            beta,
            leftover: vec![0.0; market.n_buyers()],
            diagnostics: Diagnostics::default(),
        }
    }
}

/// One named check inside a [`ValidationReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    /// Largest violation found; never negative.
    pub residual: f64,
    pub passed: bool,
    /// Buyers (or items, depending on the check) responsible for a failure.
    pub offenders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tol: f64,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn summary(&self) -> String {
        let failed: Vec<String> = self
            .failed_checks()
            .map(|c| format!("{} (residual {:e}, offenders {:?})", c.name, c.residual, c.offenders))
            .collect();
        if failed.is_empty() {
            "all checks passed".to_string()
        } else {
            failed.join("; ")
        }
    }

    pub(crate) fn push_residual(&mut self, name: &str, residual: f64, offenders: Vec<usize>) {
        let residual = residual.max(0.0);
        self.checks.push(ValidationCheck {
            name: name.to_string(),
            residual,
            passed: residual <= self.tol && !residual.is_nan(),
            offenders,
        });
    }
}

pub const CHECK_NONNEGATIVE_VALUATIONS: &str = "nonnegative_valuations";
pub const CHECK_POSITIVE_ROWS: &str = "positive_valuation_rows";
pub const CHECK_POSITIVE_BUDGETS: &str = "positive_budgets";
pub const CHECK_POSITIVE_SUPPLIES: &str = "positive_supplies";
pub const CHECK_NONNEGATIVITY: &str = "nonnegativity";
pub const CHECK_MARKET_CLEARING: &str = "market_clearing";
pub const CHECK_BUDGET_EXHAUSTION: &str = "budget_exhaustion";
pub const CHECK_BANG_PER_BUCK: &str = "bang_per_buck";

/// Reports every violated market invariant; passes only when all hold exactly.
pub fn validate_market(market: &Market) -> ValidationReport {
    let mut report = ValidationReport { tol: 0.0, checks: Vec::new() };
    let v = market.valuations();

    let mut worst = 0.0f64;
    let mut offenders = Vec::new();
    for (i, row) in v.row_iter().enumerate() {
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= 0.0) && !row.is_empty() {
            offenders.push(i);
            worst = worst.max(if min.is_nan() { f64::INFINITY } else { -min });
        }
    }
    strict_check(&mut report, CHECK_NONNEGATIVE_VALUATIONS, worst, offenders);

    let offenders: Vec<usize> =
        v.row_iter().enumerate().filter(|(_, row)| !row.iter().any(|&x| x > 0.0)).map(|(i, _)| i).collect();
    strict_check(&mut report, CHECK_POSITIVE_ROWS, 0.0, offenders);

    let (worst, offenders) = positivity(market.budgets());
    strict_check(&mut report, CHECK_POSITIVE_BUDGETS, worst, offenders);
    let (worst, offenders) = positivity(market.supplies());
    strict_check(&mut report, CHECK_POSITIVE_SUPPLIES, worst, offenders);

    report
}

fn positivity(xs: &[f64]) -> (f64, Vec<usize>) {
    let offenders: Vec<usize> = (0..xs.len()).filter(|&k| !(xs[k] > 0.0)).collect();
    let worst = offenders.iter().map(|&k| if xs[k].is_nan() { f64::INFINITY } else { -xs[k] }).fold(0.0, f64::max);
    (worst, offenders)
}

fn strict_check(report: &mut ValidationReport, name: &str, residual: f64, offenders: Vec<usize>) {
    report.checks.push(ValidationCheck {
        name: name.to_string(),
        residual: residual.max(0.0),
        passed: offenders.is_empty(),
        offenders,
    });
}

/// `u_i(x_i) = v_i . x_i`.
pub fn utility(market: &Market, i: usize, bundle: &[f64]) -> Result<f64> {
    if i >= market.n_buyers() {
        return Err(Error::IndexOutOfRange { context: "buyers", index: i, len: market.n_buyers() });
    }
    if bundle.len() != market.n_items() {
        return Err(Error::DimensionMismatch { context: "bundle", expected: market.n_items(), found: bundle.len() });
    }
    Ok(dot(market.valuations().row(i), bundle))
}

/// Best affordable, supply-capped bundle of one buyer at fixed prices.
#[derive(Clone, Debug, PartialEq)]
pub struct Demand {
    pub value: f64,
    pub bundle: Vec<f64>,
}

/// Solves `max { v_i . x : p . x <= B_i, 0 <= x <= s }` greedily by
/// bang-per-buck.
///
/// Free items the buyer values are taken at full supply. Ties between equal
/// rates go to the lower item index; worthless items are never bought.
pub fn demand_value(market: &Market, i: usize, prices: &PriceVector) -> Demand {
    let v = market.valuations().row(i);
    let s = market.supplies();
    let p = prices.as_slice();
    let mut bundle = vec![0.0; v.len()];
    let mut value = 0.0;

    let mut paid: Vec<usize> = Vec::with_capacity(v.len());
    for j in 0..v.len() {
        if v[j] <= 0.0 {
            continue;
        }
        if p[j] <= 0.0 {
            bundle[j] = s[j];
            value += v[j] * s[j];
        } else {
            paid.push(j);
        }
    }
    // stable sort keeps lower indices first among equal rates
    paid.sort_by(|&a, &b| (v[b] / p[b]).total_cmp(&(v[a] / p[a])));

    let mut budget = market.budgets()[i];
    for j in paid {
        if budget <= 0.0 {
            break;
        }
        let qty = s[j].min(budget / p[j]);
        bundle[j] = qty;
        value += v[j] * qty;
        budget -= qty * p[j];
    }
    Demand { value, bundle }
}

/// Checks the linear-market equilibrium conditions at tolerance `tol`:
/// nonnegativity, market clearing, budget exhaustion (net of any leftover),
/// and equal bang-per-buck on every item a buyer holds more than `tol` of.
///
/// The bang-per-buck residual is relative: `1 - (v_ij/p_j) / max_k v_ik/p_k`.
pub fn verify_equilibrium(market: &Market, sol: &EquilibriumSolution, tol: f64) -> ValidationReport {
    let mut report = ValidationReport { tol, checks: Vec::new() };
    let (n, m) = (market.n_buyers(), market.n_items());
    let x = sol.allocation.shares();
    let p = sol.prices.as_slice();
    if x.shape() != (n, m) || p.len() != m {
        report.checks.push(ValidationCheck {
            name: "dimensions".to_string(),
            residual: f64::INFINITY,
            passed: false,
            offenders: Vec::new(),
        });
        return report;
    }

    let neg_x = x.as_slice().iter().fold(0.0f64, |a, &v| a.max(-v));
    let neg_p = p.iter().fold(0.0f64, |a, &v| a.max(-v));
    report.push_residual(CHECK_NONNEGATIVITY, neg_x.max(neg_p), Vec::new());

    let sums = x.col_sums();
    let mut worst = 0.0f64;
    let mut offenders = Vec::new();
    for j in 0..m {
        let r = (sums[j] - market.supplies()[j]).abs();
        if r > tol {
            offenders.push(j);
        }
        worst = worst.max(r);
    }
    report.push_residual(CHECK_MARKET_CLEARING, worst, offenders);

    let mut worst = 0.0f64;
    let mut offenders = Vec::new();
    for i in 0..n {
        let leftover = sol.leftover.get(i).copied().unwrap_or(0.0);
        let r = (dot(x.row(i), p) + leftover - market.budgets()[i]).abs();
        if r > tol {
            offenders.push(i);
        }
        worst = worst.max(r);
    }
    report.push_residual(CHECK_BUDGET_EXHAUSTION, worst, offenders);

    let mut worst = 0.0f64;
    let mut offenders = Vec::new();
    for i in 0..n {
        let v = market.valuations().row(i);
        let rate = |j: usize| -> f64 {
            if p[j] > 0.0 {
                v[j] / p[j]
            } else if v[j] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        let best = (0..m).map(rate).fold(0.0, f64::max);
        let mut buyer_worst = 0.0f64;
        for j in 0..m {
            if x[(i, j)] > tol {
                let r = if best.is_infinite() {
                    if rate(j).is_infinite() {
                        0.0
                    } else {
                        1.0
                    }
                } else if best > 0.0 {
                    1.0 - rate(j) / best
                } else {
                    0.0
                };
                buyer_worst = buyer_worst.max(r);
            }
        }
        if buyer_worst > tol {
            offenders.push(i);
        }
        worst = worst.max(buyer_worst);
    }
    report.push_residual(CHECK_BANG_PER_BUCK, worst, offenders);

    report
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_accepts_disjoint_market() {
        assert!(validate_market(&disjoint()).passed());
    }

    #[test]
    fn validate_names_zero_row() {
        let m =
            Market::from_parts(Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap(), vec![1.0, 1.0], vec![1.0, 1.0])
                .unwrap();
        let report = validate_market(&m);
        assert!(!report.passed());
        let check = report.check(CHECK_POSITIVE_ROWS).unwrap();
        assert!(!check.passed);
        assert_eq!(check.offenders, vec![1]);
        assert!(Market::new(m.valuations().clone(), vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn validate_flags_zero_budget() {
        let m = Market::from_parts(Matrix::identity(2), vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let report = validate_market(&m);
        let check = report.check(CHECK_POSITIVE_BUDGETS).unwrap();
        assert!(!check.passed);
        assert_eq!(check.offenders, vec![1]);
        assert!(report.check(CHECK_POSITIVE_ROWS).unwrap().passed);
    }

    #[test]
    fn validate_flags_negative_value() {
        let m =
            Market::from_parts(Matrix::from_rows(&[[1.0, -0.5], [0.0, 1.0]]).unwrap(), vec![1.0, 1.0], vec![1.0, 1.0])
                .unwrap();
        let check = validate_market(&m).check(CHECK_NONNEGATIVE_VALUATIONS).unwrap().clone();
        assert!(!check.passed);
        assert_eq!(check.residual, 0.5);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(Market::from_parts(Matrix::identity(2), vec![1.0], vec![1.0, 1.0]).is_err());
        assert!(utility(&disjoint(), 0, &[1.0]).is_err());
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(&disjoint(), 0, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(utility(&disjoint(), 0, &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(utility(&symmetric(), 0, &[0.5, 0.5]).unwrap(), 1.5);
    }

    #[test]
    fn demand_buys_only_valued_item() {
        let d = demand_value(&disjoint(), 0, &PriceVector::new(vec![1.0, 1.0]));
        assert_eq!(d.value, 1.0);
        assert_eq!(d.bundle, vec![1.0, 0.0]);
    }

    #[test]
    fn demand_follows_bang_per_buck() {
        let d = demand_value(&symmetric(), 0, &PriceVector::new(vec![1.0, 1.0]));
        assert_eq!(d.value, 2.0);
        assert_eq!(d.bundle, vec![1.0, 0.0]);
    }

    /// Enumerates budget splits across two items; the optimum of the capped
    /// knapsack is the best split.
    fn enumerate_two_item_demand(v: [f64; 2], p: [f64; 2], s: [f64; 2], budget: f64) -> f64 {
        let steps = 10_000;
        let mut best: f64 = 0.0;
        for k in 0..=steps {
            let spend0 = budget * k as f64 / steps as f64;
            let x0 = (spend0 / p[0]).min(s[0]);
            let left = budget - x0 * p[0];
            let x1 = (left / p[1]).min(s[1]);
            best = best.max(v[0] * x0 + v[1] * x1);
        }
        best
    }

    #[test]
    fn demand_with_tied_rates_breaks_toward_lower_index() {
        let oracle = enumerate_two_item_demand([2.0, 1.0], [2.0, 1.0], [1.0, 1.0], 1.0);
        let d = demand_value(&symmetric(), 0, &PriceVector::new(vec![2.0, 1.0]));
        assert!((d.value - oracle).abs() < 1e-9);
        assert!((d.value - 1.0).abs() < 1e-12);
        assert_eq!(d.bundle, vec![0.5, 0.0]);
    }

    #[test]
    fn demand_takes_free_items_and_skips_worthless_ones() {
        let m = Market::new(Matrix::from_rows(&[[1.0, 0.0, 3.0]]).unwrap(), vec![1.0], vec![2.0, 1.0, 1.0]).unwrap();
        let d = demand_value(&m, 0, &PriceVector::new(vec![0.0, 0.0, 2.0]));
        assert_eq!(d.bundle, vec![2.0, 0.0, 0.5]);
        assert_eq!(d.value, 3.5);
    }

    #[test]
    fn verify_identity_equilibria() {
        let m = disjoint();
        assert!(verify_equilibrium(&m, &identity_solution(&m), 1e-9).passed());
        let m = symmetric();
        let sol = identity_solution(&m);
        for i in 0..2 {
            let d = demand_value(&m, i, &sol.prices);
            assert_eq!(d.bundle, sol.allocation.bundle(i));
        }
        assert!(verify_equilibrium(&m, &sol, 1e-9).passed());
    }

    #[test]
    fn verify_rejects_half_split_on_disjoint() {
        let m = disjoint();
        let sol = EquilibriumSolution::from_pair(
            &m,
            PriceVector::new(vec![1.0, 1.0]),
            Allocation::new(Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap()),
        );
        let report = verify_equilibrium(&m, &sol, 1e-9);
        assert!(!report.passed());
        let bpb = report.check(CHECK_BANG_PER_BUCK).unwrap();
        assert!(!bpb.passed);
        assert_eq!(bpb.offenders, vec![0, 1]);
        assert!(report.check(CHECK_MARKET_CLEARING).unwrap().passed);
    }

    fn market_strategy() -> impl Strategy<Value = Market> {
        (1usize..5, 1usize..6).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(0.0f64..3.0, n * m),
                proptest::collection::vec(0.1f64..3.0, n),
                proptest::collection::vec(0.1f64..3.0, m),
            )
                .prop_map(move |(v, b, s)| {
                    let mut v = Matrix::from_vec(n, m, v);
                    for i in 0..n {
                        v[(i, 0)] += 0.1;
                    }
                    Market::new(v, b, s).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn demand_is_feasible_and_beats_random_bundles(
            market in market_strategy(),
            raw_prices in proptest::collection::vec(0.0f64..4.0, 6),
            samples in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 6), 20),
        ) {
            let m = market.n_items();
            let prices = PriceVector::new(raw_prices[..m].to_vec());
            for i in 0..market.n_buyers() {
                let d = demand_value(&market, i, &prices);
                let cost = dot(&d.bundle, prices.as_slice());
                prop_assert!(cost <= market.budgets()[i] + 1e-9);
                for j in 0..m {
                    prop_assert!(d.bundle[j] >= 0.0 && d.bundle[j] <= market.supplies()[j] + 1e-12);
                }
                prop_assert!((utility(&market, i, &d.bundle).unwrap() - d.value).abs() < 1e-9);
                // rejection sampling of feasible bundles
                for frac in &samples {
                    let x: Vec<f64> = (0..m).map(|j| frac[j] * market.supplies()[j]).collect();
                    if dot(&x, prices.as_slice()) <= market.budgets()[i] {
                        prop_assert!(utility(&market, i, &x).unwrap() <= d.value + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn utility_is_additive(
            market in market_strategy(),
            a in proptest::collection::vec(0.0f64..0.5, 6),
            b in proptest::collection::vec(0.0f64..0.5, 6),
        ) {
            let m = market.n_items();
            let x: Vec<f64> = (0..m).map(|j| a[j] * market.supplies()[j]).collect();
            let y: Vec<f64> = (0..m).map(|j| b[j] * market.supplies()[j]).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
            for i in 0..market.n_buyers() {
                let lhs = utility(&market, i, &xy).unwrap();
                let rhs = utility(&market, i, &x).unwrap() + utility(&market, i, &y).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}
