//! Primal-dual iteration on the Eisenberg–Gale saddle point.
//!
//! With `L(x, p) = sum_i B_i ln(v_i . x_i) - p . x_i + s . p` the solver
//! computes `min_p max_x L` over the boxes `0 <= x_i <= s` and
//! `0 <= p <= ||B||_1 / s`. In the textbook `min_x max_p` layout this is
//! `f(x) + <Kx, p> - s . p` with `f = -sum_i B_i ln(v_i . x_i)` and
//! `Kx = sum_i x_i`, i.e. the negation of `L`, and the coupling norm is
//! `||K|| = sqrt(n)`. Each iteration is
//!
//! ```text
//! x+ = prox_{tau f + box}(x - tau K^T p)
//! p+ = proj_box(p + sigma (K(2 x+ - x) - s))
//! ```
//!
//! The prox of the log term is evaluated exactly per buyer; see
//! [`super::prox`]. In quasi-linear mode each buyer block also carries the
//! unspent budget `delta_i` with objective `B_i ln(v_i . x_i + delta_i) - delta_i`.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::prox::{best_response, solve_level, solve_rate_from, Piece};
use super::{initial_weight, Averaging, SolverOptions};
use crate::error::{Error, Result};
use crate::market::{Allocation, Diagnostics, EquilibriumSolution, Market, PriceVector};
use crate::matrix::{dot, Matrix};

/// Iterates of the primal-dual method plus their running average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleState {
    pub x: Matrix,
    pub p: Vec<f64>,
    /// Unspent budget (quasi-linear mode only).
    pub delta: Option<Vec<f64>>,
    pub x_avg: Matrix,
    pub p_avg: Vec<f64>,
    pub delta_avg: Option<Vec<f64>>,
    /// Iterations performed.
    pub t: usize,
    /// Iterates folded into the current average.
    pub averaged: usize,
}

impl SaddleState {
    /// `x = 0`, `p_j = ||B||_1 / (m s_j)`.
    pub fn initial(market: &Market, quasi_linear: bool) -> Self {
        let (n, m) = (market.n_buyers(), market.n_items());
        let total = market.total_budget();
        let p: Vec<f64> = market.supplies().iter().map(|s| total / (m as f64 * s)).collect();
        let delta = quasi_linear.then(|| vec![0.0; n]);
        SaddleState {
            x: Matrix::zeros(n, m),
            p_avg: p.clone(),
            p,
            delta_avg: delta.clone(),
            delta,
            x_avg: Matrix::zeros(n, m),
            t: 0,
            averaged: 0,
        }
    }

    fn reset_average(&mut self) {
        self.x_avg = self.x.clone();
        self.p_avg = self.p.clone();
        self.delta_avg = self.delta.clone();
        self.averaged = 1;
    }

    fn fold_into_average(&mut self) {
        self.averaged += 1;
        let w = 1.0 / self.averaged as f64;
        for (a, x) in self.x_avg.as_mut_slice().iter_mut().zip(self.x.as_slice()) {
            *a += w * (x - *a);
        }
        for (a, x) in self.p_avg.iter_mut().zip(&self.p) {
            *a += w * (x - *a);
        }
        if let (Some(avg), Some(cur)) = (self.delta_avg.as_mut(), self.delta.as_ref()) {
            for (a, x) in avg.iter_mut().zip(cur) {
                *a += w * (x - *a);
            }
        }
    }

    fn adopt_average(&mut self) {
        self.x = self.x_avg.clone();
        self.p = self.p_avg.clone();
        self.delta = self.delta_avg.clone();
    }

    /// Whether every iterate lies in its box.
    pub fn in_boxes(&self, market: &Market) -> bool {
        let caps = market.price_caps();
        let s = market.supplies();
        let x_ok = self.x.row_iter().all(|r| r.iter().zip(s).all(|(x, sj)| *x >= 0.0 && x <= sj));
        let p_ok = self.p.iter().zip(&caps).all(|(p, c)| *p >= 0.0 && p <= c);
        let d_ok = self.delta.as_ref().is_none_or(|d| d.iter().zip(market.budgets()).all(|(d, b)| *d >= 0.0 && d <= b));
        x_ok && p_ok && d_ok
    }
}

/// Restricted duality gap of the averaged pair in `state`.
pub fn duality_gap(market: &Market, state: &SaddleState) -> f64 {
    lagrangian_gap(market, &state.x_avg, state.delta_avg.as_deref(), &state.p_avg)
}

/// `max_x L(x, p) - min_p L(x_bar, p)` over the solver boxes.
///
/// The price half is coordinatewise: `p_j` sits at its cap exactly when item
/// `j` is over-allocated. The allocation half decomposes per buyer into
/// maximizing `B_i ln(u) - cost(u)`, where utility is bought cheapest-first
/// at cost-per-utility `p_j / v_ij`; the optimum is the first point where the
/// marginal value `B_i / u` meets the current rate. Infinite when some
/// buyer has zero utility under `x_bar`.
pub fn lagrangian_gap(market: &Market, x_bar: &Matrix, delta_bar: Option<&[f64]>, p: &[f64]) -> f64 {
    let (n, m) = (market.n_buyers(), market.n_items());
    let v = market.valuations();
    let s = market.supplies();
    let caps = market.price_caps();

    let mut upper = dot(s, p);
    let mut goods: Vec<(f64, f64)> = Vec::with_capacity(m + 1);
    for i in 0..n {
        goods.clear();
        for j in 0..m {
            let vij = v[(i, j)];
            if vij > 0.0 {
                goods.push((p[j] / vij, vij * s[j]));
            }
        }
        if delta_bar.is_some() {
            goods.push((1.0, market.budgets()[i]));
        }
        let b = market.budgets()[i];
        let (bought, u) = best_response(b, &goods);
        let cost: f64 = bought.iter().zip(&goods).map(|(q, g)| q * g.0).sum();
        upper += b * u.ln() - cost;
    }

    let mut lower = 0.0;
    for i in 0..n {
        let leftover = delta_bar.map_or(0.0, |d| d[i]);
        let u = dot(v.row(i), x_bar.row(i)) + leftover;
        lower += market.budgets()[i] * u.ln() - leftover;
    }
    let sums = x_bar.col_sums();
    for j in 0..m {
        let excess = s[j] - sums[j];
        if excess < 0.0 {
            lower += caps[j] * excess;
        }
    }
    if lower == f64::NEG_INFINITY || lower.is_nan() {
        return f64::INFINITY;
    }
    upper - lower
}

/// Restart once the gap has decayed this much and then stopped improving.
const NECESSARY_DECAY: f64 = 0.8;
/// Restart anyway when the current average spans this fraction of the run.
const ARTIFICIAL_RESTART: f64 = 0.36;
/// Largest change of the primal weight at one restart.
const MAX_WEIGHT_STEP: f64 = 4.0;

/// Everything a primal-dual run produced.
#[derive(Clone, Debug)]
pub struct PdRun {
    pub solution: EquilibriumSolution,
    pub state: SaddleState,
    /// `(iteration, gap of the reported pair)` at every evaluation.
    pub gap_history: Vec<(usize, f64)>,
}

/// Solves for the linear-utility equilibrium with the primal-dual method.
///
/// Returns once the reported pair's duality gap is at most
/// `opts.target_gap`; otherwise the final pair is returned with
/// `diagnostics.converged == false`.
pub fn solve_eg_pd(market: &Market, opts: &SolverOptions) -> Result<EquilibriumSolution> {
    Ok(run_pd(market, opts, false)?.solution)
}

/// Like [`solve_eg_pd`], but also hands back the final iterates and the
/// gap trace.
pub fn run_eg_pd(market: &Market, opts: &SolverOptions) -> Result<PdRun> {
    run_pd(market, opts, false)
}

pub(crate) fn run_pd(market: &Market, opts: &SolverOptions, quasi_linear: bool) -> Result<PdRun> {
    market.ensure_valid()?;
    if market.n_buyers() == 0 || market.n_items() == 0 {
        return Err(Error::InvalidMarket("empty market".into()));
    }
    let mut engine = Engine::new(market, opts)?;
    let mut state = SaddleState::initial(market, quasi_linear);
    let check_every = opts.check_every.max(1);
    let mut restart_gap = f64::INFINITY;
    let mut previous_best = f64::INFINITY;
    let mut last_restart = 0usize;
    let mut gap_history = Vec::new();
    let mut anchor = (state.x.clone(), state.p.clone());
    let adapt = opts.adaptive_weight && opts.derived_steps();

    while state.t < opts.max_iters {
        engine.step(&mut state);
        let due = state.t.is_multiple_of(check_every) || state.t == opts.max_iters;
        if !due {
            continue;
        }
        let gap_avg = duality_gap(market, &state);
        let gap_last = lagrangian_gap(market, &state.x, state.delta.as_deref(), &state.p);
        let reported_gap = {
            let (x, delta) = reported_iterate(&state, opts.averaging);
            Candidate::new(market, x, delta).gap
        };
        gap_history.push((state.t, reported_gap));
        if reported_gap <= opts.target_gap {
            break;
        }
        if let Some(factor) = opts.restart_factor {
            let best = gap_avg.min(gap_last);
            let since = state.t - last_restart;
            // sufficient decay; stalled after partial decay; or a long stretch
            // without any restart
            let due = best.is_finite()
                && (best <= factor * restart_gap
                    || (best <= NECESSARY_DECAY * restart_gap && best > previous_best)
                    || since as f64 >= ARTIFICIAL_RESTART * state.t as f64);
            previous_best = best;
            if due {
                if gap_avg < gap_last {
                    state.adopt_average();
                }
                state.reset_average();
                restart_gap = best;
                last_restart = state.t;
                previous_best = f64::INFINITY;
                if adapt {
                    engine.rebalance(&anchor.0, &anchor.1, &state)?;
                }
                anchor = (state.x.clone(), state.p.clone());
            }
        }
    }

    let (x, delta) = reported_iterate(&state, opts.averaging);
    let candidate = Candidate::new(market, x, delta);
    let diagnostics = Diagnostics {
        method: if quasi_linear { "pd-quasilinear" } else { "pd" }.to_string(),
        iterations: state.t,
        duality_gap: candidate.gap,
        converged: candidate.gap <= opts.target_gap,
        ..Diagnostics::default()
    };
    let solution = candidate.into_solution(market, delta, diagnostics);
    Ok(PdRun { solution, state, gap_history })
}

fn reported_iterate(state: &SaddleState, averaging: Averaging) -> (&Matrix, Option<&[f64]>) {
    match averaging {
        Averaging::Ergodic => (&state.x_avg, state.delta_avg.as_deref()),
        Averaging::LastIterate => (&state.x, state.delta.as_deref()),
    }
}

/// Prices consistent with an allocation: `p_j = max_i v_ij B_i / (u_i + delta_i)`,
/// capped at the price box.
///
/// The Lagrangian keeps `x_ij <= s_j`, so whenever a buyer's box binds (a
/// lone bidder, disjoint tastes) every lower price also solves the saddle
/// problem. Reading prices off the buyers' marginal values selects the
/// market-clearing one.
pub fn recover_prices(market: &Market, x: &Matrix, delta: Option<&[f64]>) -> Vec<f64> {
    let v = market.valuations();
    let caps = market.price_caps();
    let mut p = vec![0.0f64; market.n_items()];
    for i in 0..market.n_buyers() {
        let u = dot(v.row(i), x.row(i)) + delta.map_or(0.0, |d| d[i]);
        let beta = market.budgets()[i] / u;
        for (pj, vij) in p.iter_mut().zip(v.row(i)) {
            if *vij > 0.0 {
                *pj = pj.max(beta * vij);
            }
        }
    }
    for (pj, cap) in p.iter_mut().zip(&caps) {
        *pj = pj.min(*cap);
    }
    p
}

/// The pair a run would report: the iterate with over-allocated columns
/// scaled back to supply, priced by [`recover_prices`].
struct Candidate {
    shares: Matrix,
    prices: Vec<f64>,
    clearing_residual: f64,
    gap: f64,
}

impl Candidate {
    fn new(market: &Market, x: &Matrix, delta: Option<&[f64]>) -> Candidate {
        let s = market.supplies();
        let sums = x.col_sums();
        let clearing_residual = sums.iter().zip(s).map(|(c, s)| (c - s).abs()).fold(0.0, f64::max);
        let mut shares = x.clone();
        for i in 0..shares.rows() {
            for ((xij, c), sj) in shares.row_mut(i).iter_mut().zip(&sums).zip(s) {
                if c > sj {
                    *xij *= sj / c;
                }
            }
        }
        let prices = recover_prices(market, &shares, delta);
        let gap = lagrangian_gap(market, &shares, delta, &prices);
        Candidate { shares, prices, clearing_residual, gap }
    }

    fn into_solution(
        self,
        market: &Market,
        delta: Option<&[f64]>,
        mut diagnostics: Diagnostics,
    ) -> EquilibriumSolution {
        diagnostics.clearing_residual = self.clearing_residual;
        let allocation = Allocation::new(self.shares);
        let mut sol = EquilibriumSolution::from_pair(market, PriceVector::new(self.prices), allocation);
        if let Some(d) = delta {
            sol.leftover = d.to_vec();
            sol.beta = sol.utilities.iter().zip(d).zip(market.budgets()).map(|((u, d), b)| b / (u + d)).collect();
        }
        let spend = sol.allocation.spending(&sol.prices);
        diagnostics.budget_residual = spend
            .iter()
            .zip(&sol.leftover)
            .zip(market.budgets())
            .map(|((sp, d), b)| (sp + d - b).abs())
            .fold(0.0, f64::max);
        sol.diagnostics = diagnostics;
        sol
    }
}

/// Instances with at least this many valuation entries update buyers in parallel.
const PARALLEL_MIN_ENTRIES: usize = 20_000;

struct Engine<'a> {
    market: &'a Market,
    opts: &'a SolverOptions,
    /// Current `tau / sigma` in supply-normalized units.
    weight: f64,
    tau: Vec<f64>,
    sigma: Vec<f64>,
    caps: Vec<f64>,
    floors: Vec<f64>,
    /// Last budget multiplier of each buyer, reused as a warm start.
    mus: Vec<f64>,
    x_old: Matrix,
    demand: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(market: &'a Market, opts: &'a SolverOptions) -> Result<Self> {
        let weight = initial_weight(market);
        let (tau, sigma) = opts.item_steps(market, weight)?;
        let (n, m) = (market.n_buyers(), market.n_items());
        Ok(Engine {
            market,
            opts,
            weight,
            tau,
            sigma,
            caps: market.price_caps(),
            floors: opts.floors(market),
            mus: vec![0.0; n],
            x_old: Matrix::zeros(n, m),
            demand: vec![0.0; m],
        })
    }

    /// Moves the primal weight halfway (in log scale) toward the ratio of
    /// primal to dual movement since the previous restart.
    fn rebalance(&mut self, x0: &Matrix, p0: &[f64], state: &SaddleState) -> Result<()> {
        let s = self.market.supplies();
        let m = s.len();
        let dx = x0
            .as_slice()
            .iter()
            .zip(state.x.as_slice())
            .enumerate()
            .map(|(k, (a, b))| ((a - b) / s[k % m]).powi(2))
            .sum::<f64>()
            .sqrt();
        let dp = p0.iter().zip(&state.p).zip(s).map(|((a, b), sj)| ((a - b) * sj).powi(2)).sum::<f64>().sqrt();
        if dx > 1e-12 && dp > 1e-12 {
            let target = (dx / dp).powi(2);
            let smoothed = (0.5 * target.ln() + 0.5 * self.weight.ln()).exp();
            self.weight = smoothed.clamp(self.weight / MAX_WEIGHT_STEP, self.weight * MAX_WEIGHT_STEP);
            let (tau, sigma) = self.opts.item_steps(self.market, self.weight)?;
            self.tau = tau;
            self.sigma = sigma;
        }
        Ok(())
    }

    fn step(&mut self, state: &mut SaddleState) {
        let market = self.market;
        let (n, m) = (market.n_buyers(), market.n_items());
        let s = market.supplies();
        self.x_old.as_mut_slice().copy_from_slice(state.x.as_slice());

        let block = BuyerBlock { market, tau: &self.tau, prices: &state.p, floors: &self.floors };
        let x_old = &self.x_old;
        let mut deltas: Vec<Option<&mut f64>> = match state.delta.as_mut() {
            Some(d) => d.iter_mut().map(Some).collect(),
            None => (0..n).map(|_| None).collect(),
        };
        let width = m.max(1);
        if n * m >= PARALLEL_MIN_ENTRIES {
            state
                .x
                .as_mut_slice()
                .par_chunks_mut(width)
                .zip(self.mus.par_iter_mut())
                .zip(deltas.par_iter_mut())
                .enumerate()
                .for_each(|(i, ((row, mu), delta))| block.update(i, x_old.row(i), row, mu, delta.as_deref_mut()));
        } else {
            state
                .x
                .as_mut_slice()
                .chunks_mut(width)
                .zip(self.mus.iter_mut())
                .zip(deltas.iter_mut())
                .enumerate()
                .for_each(|(i, ((row, mu), delta))| block.update(i, x_old.row(i), row, mu, delta.as_deref_mut()));
        }

        // K(2 x+ - x), summed in row order so the result is thread-independent
        self.demand.iter_mut().for_each(|d| *d = 0.0);
        for i in 0..n {
            for ((d, new), old) in self.demand.iter_mut().zip(state.x.row(i)).zip(self.x_old.row(i)) {
                *d += 2.0 * new - old;
            }
        }
        for j in 0..m {
            let p = state.p[j] + self.sigma[j] * (self.demand[j] - s[j]);
            state.p[j] = p.clamp(0.0, self.caps[j]);
        }
        state.t += 1;
        if state.averaged == 0 {
            state.reset_average();
        } else {
            state.fold_into_average();
        }
    }
}

/// Read-only data shared by every buyer's prox step.
struct BuyerBlock<'b> {
    market: &'b Market,
    tau: &'b [f64],
    prices: &'b [f64],
    floors: &'b [f64],
}

impl BuyerBlock<'_> {
    /// Exact prox of `-B_i ln(v_i . x + delta)` (plus `delta` in
    /// quasi-linear mode) over the box, from the shifted point
    /// `x_old - tau p`. Optimality makes every coordinate
    /// `clip(y_j + tau_j v_ij mu)` with `mu = B_i / u`, so only the scalar
    /// `mu` is searched for.
    fn update(&self, i: usize, x_old: &[f64], row: &mut [f64], mu_slot: &mut f64, delta: Option<&mut f64>) {
        let market = self.market;
        let v = market.valuations().row(i);
        let s = market.supplies();
        let budget = market.budgets()[i];
        let mut pieces: Vec<Piece> = Vec::with_capacity(v.len() + 1);
        for j in 0..v.len() {
            pieces.push(Piece {
                weight: v[j],
                offset: x_old[j] - self.tau[j] * self.prices[j],
                slope: self.tau[j] * v[j],
                lo: 0.0,
                hi: s[j],
            });
        }
        if let Some(d) = delta.as_deref() {
            // the leftover has no coupling, so its step is free; B_i keeps it in budget units
            pieces.push(Piece { weight: 1.0, offset: d - budget, slope: budget, lo: 0.0, hi: budget });
        }
        let mut mu = solve_rate_from(&pieces, budget, *mu_slot);
        let u: f64 = pieces.iter().map(|pc| pc.weight * pc.at(mu)).sum();
        if u < self.floors[i] {
            if let Some(level_mu) = solve_level(&pieces, self.floors[i]) {
                mu = level_mu;
            }
        }
        *mu_slot = mu;
        for (x, pc) in row.iter_mut().zip(&pieces) {
            *x = pc.at(mu);
        }
        if let Some(d) = delta {
            *d = pieces[v.len()].at(mu);
        }
    }
}
