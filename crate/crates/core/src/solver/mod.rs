//! Equilibrium computation.
//!
//! The main solver runs the Chambolle–Pock primal-dual method on the
//! Lagrangian saddle-point form of the Eisenberg–Gale program, with prices
//! as the dual block and allocations as the primal block. A proportional
//! response fixed point serves as an independent desk-scale oracle, and a
//! quasi-linear variant keeps unspent budget in the primal block.

mod oracle;
mod pd;
pub(crate) mod prox;
mod quasilinear;

pub use oracle::solve_eg_oracle;
pub use pd::{duality_gap, lagrangian_gap, recover_prices, run_eg_pd, solve_eg_pd, PdRun, SaddleState};
pub use quasilinear::{quasilinear_demand, solve_quasilinear, verify_quasilinear, QuasiLinearSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;

/// Lower bound on each buyer's utility enforced inside the primal step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityFloor {
    /// `v_i . x_i >= MMS_i = (v_i . s) / n`, which every equilibrium satisfies.
    Mms,
    /// `v_i . x_i >= eps * max_j v_ij s_j`.
    Epsilon(f64),
}

/// Which primal-dual pair the solver reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    LastIterate,
    /// Running average since the last restart.
    Ergodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Absolute duality-gap threshold.
    pub target_gap: f64,
    /// Primal step `tau`; derived from the market when `None`.
    pub step_primal: Option<f64>,
    /// Dual step `sigma`; derived from the market when `None`.
    pub step_dual: Option<f64>,
    pub utility_floor: UtilityFloor,
    pub averaging: Averaging,
    /// Restart the running average whenever its gap has shrunk by this
    /// factor since the previous restart. `None` keeps a single average
    /// over all iterations.
    pub restart_factor: Option<f64>,
    /// Re-balance `tau / sigma` at each restart from how far the primal and
    /// dual iterates moved since the previous one. Ignored when either step
    /// is given explicitly.
    pub adaptive_weight: bool,
    /// Iterations between duality-gap evaluations.
    pub check_every: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 200_000,
            target_gap: 1e-9,
            step_primal: None,
            step_dual: None,
            utility_floor: UtilityFloor::Epsilon(1e-6),
            averaging: Averaging::Ergodic,
            restart_factor: Some(0.2),
            adaptive_weight: true,
            check_every: 64,
            seed: 0,
        }
    }
}

/// `tau * sigma` is scaled to this fraction of `1 / L^2`.
const STEP_MARGIN: f64 = 0.9;

/// Multiplier on the dimensional estimate of the primal weight; tuned on
/// uniform random markets, where exact primal proxes favour long primal steps.
const WEIGHT_BIAS: f64 = 300.0;

impl SolverOptions {
    /// Plain ergodic averaging over every iterate with fixed steps, run for
    /// exactly `iters` iterations.
    pub fn fixed_iterations(iters: usize) -> Self {
        SolverOptions {
            max_iters: iters,
            target_gap: 0.0,
            restart_factor: None,
            adaptive_weight: false,
            ..SolverOptions::default()
        }
    }

    pub fn with_target_gap(mut self, gap: f64) -> Self {
        self.target_gap = gap;
        self
    }

    /// Whether both steps come from the market (and may adapt).
    pub(crate) fn derived_steps(&self) -> bool {
        self.step_primal.is_none() && self.step_dual.is_none()
    }

    /// Resolves scalar `(tau, sigma)` and checks `tau * sigma * L^2 <= 1`
    /// with `L = sqrt(n)`. Derived steps split the budget
    /// `tau * sigma = 0.81 / n` by the initial primal weight, which compares
    /// a typical share to a typical price.
    pub fn steps(&self, market: &Market) -> Result<(f64, f64)> {
        let lipschitz_sq = market.n_buyers() as f64;
        let eta_sq = STEP_MARGIN * STEP_MARGIN / lipschitz_sq;
        let (tau, sigma) = match (self.step_primal, self.step_dual) {
            (Some(t), Some(s)) => (t, s),
            (Some(t), None) => (t, eta_sq / t),
            (None, Some(s)) => (eta_sq / s, s),
            (None, None) => {
                let w = initial_weight(market) * mean_square(market.supplies()).powi(2);
                (eta_sq.sqrt() * w.sqrt(), eta_sq.sqrt() / w.sqrt())
            }
        };
        if !(tau > 0.0 && sigma > 0.0) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if tau * sigma * lipschitz_sq > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!("tau * sigma * L^2 = {} exceeds 1", tau * sigma * lipschitz_sq)));
        }
        Ok((tau, sigma))
    }

    /// Per-item steps `(tau_j, sigma_j)` for primal weight `weight`.
    /// User-supplied steps apply uniformly; derived ones are
    /// `tau_j = eta sqrt(weight) s_j^2` and `sigma_j = eta / (sqrt(weight) s_j^2)`,
    /// so the iteration does not depend on the unit each item is measured
    /// in. `tau_j * sigma_j = tau * sigma` either way.
    pub(crate) fn item_steps(&self, market: &Market, weight: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (tau, sigma) = self.steps(market)?;
        let s = market.supplies();
        if !self.derived_steps() {
            return Ok((vec![tau; s.len()], vec![sigma; s.len()]));
        }
        let eta = (tau * sigma).sqrt();
        let root = weight.sqrt();
        Ok((s.iter().map(|x| eta * root * x * x).collect(), s.iter().map(|x| eta / (root * x * x)).collect()))
    }

    pub(crate) fn floors(&self, market: &Market) -> Vec<f64> {
        let n = market.n_buyers() as f64;
        let s = market.supplies();
        (0..market.n_buyers())
            .map(|i| {
                let v = market.valuations().row(i);
                match self.utility_floor {
                    UtilityFloor::Mms => market.full_supply_value(i) / n,
                    UtilityFloor::Epsilon(eps) => eps * v.iter().zip(s).map(|(a, b)| a * b).fold(0.0, f64::max),
                }
            })
            .collect()
    }
}

/// Starting `tau / sigma` in supply-normalized units (shares divided by
/// `s_j`, prices multiplied by `s_j`).
pub(crate) fn initial_weight(market: &Market) -> f64 {
    let n = market.n_buyers() as f64;
    let m = market.n_items() as f64;
    WEIGHT_BIAS * m / (n * market.total_budget() * mean_square(market.supplies()))
}

fn mean_square(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 1.0;
    }
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}
