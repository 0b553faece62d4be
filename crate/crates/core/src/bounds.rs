//! Abstraction-error norms and certificates for the approximation bounds.
//!
//! Each check evaluates an empirical quantity under the true valuations and
//! the matching bound, built from the error `Delta = V - v_hat`, and reports
//! the signed margin `bound - empirical`. A check passes when the margin is
//! at least `-(abs_tol + rel_tol * |bound|)`.
//!
//! Bounds are stated for exact solutions of the abstract market. Solutions
//! from an iterative solver are slightly off, so each check adds a *carried*
//! term: the same quantity measured under `v_hat`, which is zero for an exact
//! abstract solution. Row norms are supply-weighted,
//! `||Delta v_i||_{1,s} = sum_j |Delta_ij| s_j`, the largest change a row
//! error can make to the value of a supply-feasible bundle; with unit
//! supplies this is the plain row l1 norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::market::{verify_equilibrium, Allocation, EquilibriumSolution, Market, PriceVector};
use crate::matrix::{dot, Matrix};
use crate::metrics::{envy, mms_gap, regret, weighted_welfare_gap, LP_SIZE_LIMIT};
use crate::solver::{lagrangian_gap, quasilinear_demand, QuasiLinearSolution};

/// Largest buyer count for the coalition-enumerating core check.
pub const CORE_MAX_BUYERS: usize = 10;

/// Norms of an error matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaNorms {
    /// Largest row l1 norm.
    pub norm_1inf: f64,
    /// Sum over columns of the column's largest magnitude.
    pub norm_inf1: f64,
    pub frobenius: f64,
    /// `sqrt(m) * frobenius`, which dominates `norm_1inf`.
    pub sqrt_m_frob: f64,
    pub row_norms: Vec<f64>,
}

pub fn delta_norms(delta: &Matrix) -> DeltaNorms {
    let (_, m) = delta.shape();
    let row_norms: Vec<f64> = delta.row_iter().map(|r| r.iter().map(|x| x.abs()).sum()).collect();
    let norm_inf1 = (0..m).map(|j| delta.row_iter().map(|r| r[j].abs()).fold(0.0, f64::max)).sum();
    let frobenius = delta.frobenius_norm();
    DeltaNorms {
        norm_1inf: row_norms.iter().copied().fold(0.0, f64::max),
        norm_inf1,
        frobenius,
        sqrt_m_frob: (m as f64).sqrt() * frobenius,
        row_norms,
    }
}

/// `sum_j |delta_ij| s_j` for every row.
pub fn weighted_row_norms(delta: &Matrix, supplies: &[f64]) -> Vec<f64> {
    delta.row_iter().map(|r| r.iter().zip(supplies).map(|(d, s)| d.abs() * s).sum()).collect()
}

/// One certified inequality `empirical <= bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub name: String,
    pub buyer: Option<usize>,
    pub empirical: f64,
    /// Full bound, including the carried term.
    pub bound: f64,
    /// Part of `bound` measured under `v_hat`.
    pub carried: f64,
    /// `bound - empirical`.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub norms: DeltaNorms,
    pub weighted_row_norms: Vec<f64>,
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst_margin(&self) -> f64 {
        self.entries.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

pub const BOUND_REGRET: &str = "regret";
pub const BOUND_ENVY: &str = "envy";
pub const BOUND_MMS: &str = "mms_gap";
pub const BOUND_NEGISHI: &str = "negishi_weighted_welfare";
pub const BOUND_NSW: &str = "nsw_log";
pub const BOUND_PARETO: &str = "pareto_min_gain";
pub const BOUND_QL_REGRET_INF1: &str = "ql_total_regret_inf1";
pub const BOUND_QL_REGRET_FROB: &str = "ql_total_regret_frobenius";
pub const BOUND_CORE: &str = "ql_core";

/// Tolerances and the constant every norm term is multiplied by. The
/// constant is 1 for the true bounds; shrinking it must make checks fail,
/// which is how the harness itself is tested.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certifier {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub bound_scale: f64,
    /// Tolerance for confirming that the abstract solution is an equilibrium.
    pub equilibrium_tol: f64,
}

impl Default for Certifier {
    fn default() -> Self {
        Certifier { abs_tol: 1e-6, rel_tol: 1e-8, bound_scale: 1.0, equilibrium_tol: 1e-4 }
    }
}

/// The abstract market: true budgets and supplies with `v_hat`.
fn abstract_market(market: &Market, v_hat: &Matrix) -> Result<Market> {
    if v_hat.shape() != market.valuations().shape() {
        return Err(Error::DimensionMismatch {
            context: "v_hat",
            expected: market.n_buyers() * market.n_items(),
            found: v_hat.rows() * v_hat.cols(),
        });
    }
    Market::from_parts(v_hat.clone(), market.budgets().to_vec(), market.supplies().to_vec())
}

impl Certifier {
    fn entry(&self, name: &str, buyer: Option<usize>, empirical: f64, carried: f64, norm_part: f64) -> BoundEntry {
        let bound = carried + self.bound_scale * norm_part;
        let margin = bound - empirical;
        BoundEntry {
            name: name.to_string(),
            buyer,
            empirical,
            bound,
            carried,
            margin,
            passed: margin >= -(self.abs_tol + self.rel_tol * bound.abs()),
        }
    }

    fn report(&self, market: &Market, v_hat: &Matrix, entries: Vec<BoundEntry>) -> Result<BoundReport> {
        let delta = market.valuations().sub(v_hat).expect("shape checked");
        Ok(BoundReport {
            norms: delta_norms(&delta),
            weighted_row_norms: weighted_row_norms(&delta, market.supplies()),
            entries,
        })
    }

    fn row_norms(&self, market: &Market, v_hat: &Matrix) -> Result<(Market, Vec<f64>)> {
        let hat = abstract_market(market, v_hat)?;
        let delta = market.valuations().sub(v_hat).expect("shape checked");
        Ok((hat, weighted_row_norms(&delta, market.supplies())))
    }

    fn require_equilibrium(&self, hat: &Market, sol: &EquilibriumSolution) -> Result<()> {
        let report = verify_equilibrium(hat, sol, self.equilibrium_tol);
        if report.passed() {
            Ok(())
        } else {
            Err(Error::NotAnAbstractEquilibrium(report.summary()))
        }
    }

    /// Per buyer: regret and envy under `V` exceed their values under
    /// `v_hat` by at most `||Delta v_i||`, and the MMS gap by at most twice
    /// that. Holds for any pair, equilibrium or not.
    pub fn individual(
        &self,
        market: &Market,
        v_hat: &Matrix,
        prices: &PriceVector,
        alloc: &Allocation,
    ) -> Result<BoundReport> {
        let (hat, norms) = self.row_norms(market, v_hat)?;
        let pairs = [
            (BOUND_REGRET, regret(market, prices, alloc), regret(&hat, prices, alloc), 1.0),
            (BOUND_ENVY, envy(market, alloc), envy(&hat, alloc), 1.0),
            (BOUND_MMS, mms_gap(market, alloc), mms_gap(&hat, alloc), 2.0),
        ];
        let mut entries = Vec::new();
        for (name, true_vals, hat_vals, factor) in pairs {
            for i in 0..market.n_buyers() {
                entries.push(self.entry(name, Some(i), true_vals[i], hat_vals[i], factor * norms[i]));
            }
        }
        self.report(market, v_hat, entries)
    }

    /// With Negishi weights `beta` of the abstract equilibrium, its
    /// allocation is optimal for `beta`-weighted welfare under `V` up to
    /// `||beta||_1 ||Delta V||_{1,inf}`.
    pub fn negishi(&self, market: &Market, v_hat: &Matrix, sol_hat: &EquilibriumSolution) -> Result<BoundReport> {
        let (hat, norms) = self.row_norms(market, v_hat)?;
        self.require_equilibrium(&hat, sol_hat)?;
        let u_hat = sol_hat.allocation.utilities(&hat);
        let beta: Vec<f64> = u_hat
            .iter()
            .zip(market.budgets())
            .enumerate()
            .map(|(i, (&u, &b))| if u > 0.0 { Ok(b / u) } else { Err(Error::ZeroUtility { buyer: i }) })
            .collect::<Result<_>>()?;
        let empirical = weighted_welfare_gap(market, &beta, &sol_hat.allocation);
        let carried = weighted_welfare_gap(&hat, &beta, &sol_hat.allocation);
        let beta_l1: f64 = beta.iter().sum();
        let norm = norms.iter().copied().fold(0.0, f64::max);
        let entries = vec![self.entry(BOUND_NEGISHI, None, empirical, carried, beta_l1 * norm)];
        self.report(market, v_hat, entries)
    }

    /// In budget-weighted log form:
    /// `sum_i B_i ln u_i(x*) <= sum_i B_i ln(1 + ||Delta v_i|| / u_hat_i(x*)) + sum_i B_i ln u_hat_i(x_hat)`,
    /// where `x*` is the true equilibrium allocation. With unit budgets this
    /// is the product form. The carried term is the abstract solution's
    /// duality gap, which bounds how far it is from maximizing the abstract
    /// objective.
    pub fn nsw(
        &self,
        market: &Market,
        v_hat: &Matrix,
        sol_hat: &EquilibriumSolution,
        sol_star: &EquilibriumSolution,
    ) -> Result<BoundReport> {
        let (hat, norms) = self.row_norms(market, v_hat)?;
        let b = market.budgets();
        let u_star_hat = sol_star.allocation.utilities(&hat);
        for (i, &u) in u_star_hat.iter().enumerate() {
            if !(u > self.abs_tol) {
                return Err(Error::HypothesisViolated { buyer: i, value: u });
            }
        }
        let u_star = sol_star.allocation.utilities(market);
        let u_hat = sol_hat.allocation.utilities(&hat);
        let lhs: f64 = u_star.iter().zip(b).map(|(u, w)| w * u.ln()).sum();
        let inflation: f64 =
            (0..market.n_buyers()).map(|i| b[i] * (1.0 + self.bound_scale * norms[i] / u_star_hat[i]).ln()).sum();
        let base: f64 = u_hat.iter().zip(b).map(|(u, w)| w * u.ln()).sum();
        let carried = lagrangian_gap(&hat, sol_hat.allocation.shares(), None, sol_hat.prices.as_slice()).max(0.0);
        // The norm part enters through a logarithm, so scale it there and
        // pass the assembled bound through with unit scale.
        let unit = Certifier { bound_scale: 1.0, ..*self };
        let entries = vec![unit.entry(BOUND_NSW, None, lhs, carried, base + inflation)];
        self.report(market, v_hat, entries)
    }

    /// Over allocations that weakly improve everyone under `V`, the largest
    /// achievable `min_i (gain_i - ||Delta v_i||)` is at most zero. The
    /// carried term is the largest uniform gain available under `v_hat`,
    /// zero for a Pareto-optimal abstract allocation.
    pub fn pareto(&self, market: &Market, v_hat: &Matrix, alloc_hat: &Allocation) -> Result<BoundReport> {
        let (n, m) = (market.n_buyers(), market.n_items());
        if n * m > LP_SIZE_LIMIT {
            return Err(Error::ScaleLimit { size: n * m, limit: LP_SIZE_LIMIT });
        }
        let (hat, norms) = self.row_norms(market, v_hat)?;
        let slack: Vec<f64> = norms.iter().map(|x| self.bound_scale * x).collect();
        let empirical = max_min_gain(market, alloc_hat, &slack)?;
        let carried = max_min_gain(&hat, alloc_hat, &vec![0.0; n])?.max(0.0);
        let unit = Certifier { bound_scale: 1.0, ..*self };
        let entries = vec![unit.entry(BOUND_PARETO, None, empirical, carried, 0.0)];
        self.report(market, v_hat, entries)
    }

    /// Quasi-linear checks: total regret under `V` against both norm bounds,
    /// and, for at most [`CORE_MAX_BUYERS`] buyers, the approximate core.
    pub fn quasilinear(&self, market: &Market, v_hat: &Matrix, ql_sol: &QuasiLinearSolution) -> Result<BoundReport> {
        let (hat, norms) = self.row_norms(market, v_hat)?;
        let delta = market.valuations().sub(v_hat).expect("shape checked");
        let s = market.supplies();
        let total_regret = |mk: &Market| -> f64 {
            let x = ql_sol.allocation.shares();
            (0..mk.n_buyers())
                .map(|i| {
                    let held = dot(mk.valuations().row(i), x.row(i)) + ql_sol.leftover[i];
                    (quasilinear_demand(mk, i, &ql_sol.prices).value - held).max(0.0)
                })
                .sum()
        };
        let empirical = total_regret(market);
        let carried = total_regret(&hat);
        let inf1: f64 =
            (0..market.n_items()).map(|j| s[j] * delta.row_iter().map(|r| r[j].abs()).fold(0.0, f64::max)).sum();
        let s_max = s.iter().copied().fold(0.0, f64::max);
        let frob = s_max * (market.n_items() as f64).sqrt() * delta.frobenius_norm();
        let mut entries = vec![
            self.entry(BOUND_QL_REGRET_INF1, None, empirical, carried, 2.0 * inf1),
            self.entry(BOUND_QL_REGRET_FROB, None, empirical, carried, 2.0 * frob),
        ];
        let n = market.n_buyers();
        if n > CORE_MAX_BUYERS {
            return Err(Error::ScaleLimit { size: n, limit: CORE_MAX_BUYERS });
        }
        let slack: Vec<f64> = norms.iter().map(|x| self.bound_scale * x).collect();
        let u_hat = ql_utilities(&hat, ql_sol);
        let empirical = core_excess(market, ql_sol, &u_hat, &slack)?;
        let carried = core_excess(&hat, ql_sol, &u_hat, &vec![0.0; n])?.max(0.0);
        let unit = Certifier { bound_scale: 1.0, ..*self };
        entries.push(unit.entry(BOUND_CORE, None, empirical, carried, 0.0));
        self.report(market, v_hat, entries)
    }
}

fn ql_utilities(market: &Market, sol: &QuasiLinearSolution) -> Vec<f64> {
    let x = sol.allocation.shares();
    (0..market.n_buyers()).map(|i| dot(market.valuations().row(i), x.row(i)) + sol.leftover[i]).collect()
}

/// `max_y min_i (v_i . y_i - v_i . x_i - slack_i)` over feasible `y` with
/// `v_i . y_i >= v_i . x_i` for all `i`.
fn max_min_gain(market: &Market, alloc: &Allocation, slack: &[f64]) -> Result<f64> {
    let (n, m) = (market.n_buyers(), market.n_items());
    let v = market.valuations();
    let u = alloc.utilities(market);
    let vars: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..m).filter(move |&j| v[(i, j)] > 0.0).map(move |j| (i, j))).collect();
    // The epigraph variable is shifted by `shift` to keep it nonnegative;
    // keeping `y = x` already attains `-max(slack)`.
    let shift = slack.iter().copied().fold(0.0, f64::max) + 1.0;
    let t = vars.len();
    let mut objective = vec![0.0; t + 1];
    objective[t] = 1.0;
    let mut lp = LinearProgram::maximize(objective);
    for i in 0..n {
        let mut terms: Vec<(usize, f64)> =
            vars.iter().enumerate().filter(|(_, &(b, _))| b == i).map(|(k, &(_, j))| (k, v[(i, j)])).collect();
        if u[i] > 0.0 {
            lp.constrain_sparse(&terms, Relation::Ge, u[i]);
        }
        terms.push((t, -1.0));
        lp.constrain_sparse(&terms, Relation::Ge, u[i] + slack[i] - shift);
    }
    add_supply_rows(&mut lp, &vars, market.supplies());
    Ok(lp.solve()?.objective - shift)
}

fn add_supply_rows(lp: &mut LinearProgram, vars: &[(usize, usize)], supplies: &[f64]) {
    for (j, &s) in supplies.iter().enumerate() {
        let terms: Vec<(usize, f64)> =
            vars.iter().enumerate().filter(|(_, &(_, c))| c == j).map(|(k, _)| (k, 1.0)).collect();
        if !terms.is_empty() {
            lp.constrain_sparse(&terms, Relation::Le, s);
        }
    }
}

/// Largest uniform excess `min_{i in S} (v_i . y_i + d_i - u_hat_i - slack_i)`
/// any coalition `S` can secure while every member weakly gains under
/// `market` and the seller collects at least the solution's revenue.
fn core_excess(market: &Market, sol: &QuasiLinearSolution, u_hat: &[f64], slack: &[f64]) -> Result<f64> {
    let n = market.n_buyers();
    let m = market.n_items();
    let v = market.valuations();
    let b = market.budgets();
    let held = ql_utilities(market, sol);
    let revenue: f64 = sol.allocation.spending(&sol.prices).iter().sum();
    let shift = slack.iter().copied().fold(0.0, f64::max) + u_hat.iter().copied().fold(0.0, f64::max) + 1.0;
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let coalition: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let budget: f64 = coalition.iter().map(|&i| b[i]).sum();
        if budget < revenue * (1.0 - 1e-12) {
            continue; // cannot pay the seller
        }
        let vars: Vec<(usize, usize)> =
            coalition.iter().flat_map(|&i| (0..m).filter(move |&j| v[(i, j)] > 0.0).map(move |j| (i, j))).collect();
        // Columns: bundle entries, one leftover per member, the shifted epigraph variable.
        let left = vars.len();
        let t = left + coalition.len();
        let mut objective = vec![0.0; t + 1];
        objective[t] = 1.0;
        let mut lp = LinearProgram::maximize(objective);
        let mut paid = Vec::with_capacity(coalition.len());
        for (a, &i) in coalition.iter().enumerate() {
            let mut terms: Vec<(usize, f64)> =
                vars.iter().enumerate().filter(|(_, &(r, _))| r == i).map(|(k, &(_, j))| (k, v[(i, j)])).collect();
            terms.push((left + a, 1.0));
            lp.constrain_sparse(&terms, Relation::Ge, held[i]);
            terms.push((t, -1.0));
            lp.constrain_sparse(&terms, Relation::Ge, u_hat[i] + slack[i] - shift);
            lp.constrain_sparse(&[(left + a, 1.0)], Relation::Le, b[i]);
            paid.push((left + a, 1.0));
        }
        // sum_{i in S} (B_i - d_i) >= revenue
        lp.constrain_sparse(&paid, Relation::Le, budget - revenue);
        add_supply_rows(&mut lp, &vars, market.supplies());
        match lp.solve() {
            Ok(sol) => best = best.max(sol.objective - shift),
            Err(Error::LpInfeasible) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

pub fn check_individual_bounds(
    market: &Market,
    v_hat: &Matrix,
    prices: &PriceVector,
    alloc_hat: &Allocation,
) -> Result<BoundReport> {
    Certifier::default().individual(market, v_hat, prices, alloc_hat)
}

pub fn check_negishi_bound(market: &Market, v_hat: &Matrix, sol_hat: &EquilibriumSolution) -> Result<BoundReport> {
    Certifier::default().negishi(market, v_hat, sol_hat)
}

pub fn check_nsw_bound(
    market: &Market,
    v_hat: &Matrix,
    sol_hat: &EquilibriumSolution,
    sol_star: &EquilibriumSolution,
) -> Result<BoundReport> {
    Certifier::default().nsw(market, v_hat, sol_hat, sol_star)
}

pub fn check_pareto_bound(market: &Market, v_hat: &Matrix, alloc_hat: &Allocation) -> Result<BoundReport> {
    Certifier::default().pareto(market, v_hat, alloc_hat)
}

pub fn check_ql_regret_and_core(market: &Market, v_hat: &Matrix, ql_sol: &QuasiLinearSolution) -> Result<BoundReport> {
    Certifier::default().quasilinear(market, v_hat, ql_sol)
}
