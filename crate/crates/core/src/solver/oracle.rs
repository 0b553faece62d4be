//! Proportional-response fixed point, used as an independent cross-check.

use crate::error::{Error, Result};
use crate::market::{Allocation, Diagnostics, EquilibriumSolution, Market, PriceVector};
use crate::matrix::Matrix;

/// Largest `n * m` the oracle accepts.
pub const ORACLE_SIZE_LIMIT: usize = 10_000;

const MAX_ROUNDS: usize = 2_000_000;
const POLISH_EVERY: usize = 200;
/// Bids below one of these fractions of the bidder's budget are treated as
/// off-support; each is tried in turn.
const SUPPORT_CUTOFFS: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];
/// Relative slack allowed in the polished optimality conditions.
const POLISH_TOL: f64 = 1e-11;

/// Equilibrium by proportional response: every round each buyer splits its
/// budget across items in proportion to the utility each item delivered in
/// the previous round. Stops once no bid (and hence no price) moves by
/// more than `tol` in a round; prices alone can sit still by symmetry while
/// the allocation is still far off.
///
/// Items nobody values end at price zero and stay unallocated.
///
/// Every few hundred rounds the support of the current bids is handed to
/// [`polish`], which solves the equilibrium conditions on that support
/// exactly; the result is returned as soon as it satisfies every
/// optimality condition.
pub fn solve_eg_oracle(market: &Market, tol: f64) -> Result<EquilibriumSolution> {
    market.ensure_valid()?;
    let (n, m) = (market.n_buyers(), market.n_items());
    if n * m > ORACLE_SIZE_LIMIT {
        return Err(Error::ScaleLimit { size: n * m, limit: ORACLE_SIZE_LIMIT });
    }
    let v = market.valuations();
    let s = market.supplies();
    let budgets = market.budgets();

    let mut bids = Matrix::from_fn(n, m, |i, j| {
        let row_sum: f64 = v.row(i).iter().sum();
        budgets[i] * v[(i, j)] / row_sum
    });
    let unit_prices = |bids: &Matrix| -> Vec<f64> { bids.col_sums().iter().zip(s).map(|(b, sj)| b / sj).collect() };
    let mut prices = unit_prices(&bids);
    let mut movement = f64::INFINITY;
    let mut rounds = 0;
    let mut previous = vec![0.0; m];

    while rounds < MAX_ROUNDS {
        rounds += 1;
        movement = 0.0f64;
        for i in 0..n {
            let row = bids.row_mut(i);
            previous.copy_from_slice(row);
            let mut u = 0.0;
            for j in 0..m {
                if prices[j] > 0.0 {
                    row[j] = v[(i, j)] * row[j] / prices[j];
                    u += row[j];
                } else {
                    row[j] = 0.0;
                }
            }
            for (b, old) in row.iter_mut().zip(&previous) {
                *b *= budgets[i] / u;
                movement = movement.max((*b - old).abs());
            }
        }
        prices = unit_prices(&bids);
        if movement < tol {
            break;
        }
        if rounds % POLISH_EVERY == 0 {
            for cutoff in SUPPORT_CUTOFFS {
                if let Some(sol) = polish(market, &bids, cutoff, rounds) {
                    return Ok(sol);
                }
            }
        }
    }
    if movement >= tol {
        return Err(Error::NonConvergence { iterations: rounds, residual: movement });
    }

    let shares = Matrix::from_fn(n, m, |i, j| if prices[j] > 0.0 { bids[(i, j)] / prices[j] } else { 0.0 });
    let mut sol = EquilibriumSolution::from_pair(market, PriceVector::new(prices), Allocation::new(shares));
    sol.diagnostics = Diagnostics {
        method: "proportional-response".to_string(),
        iterations: rounds,
        duality_gap: movement,
        converged: true,
        clearing_residual: 0.0,
        budget_residual: 0.0,
    };
    Ok(sol)
}

/// Exact equilibrium on the support of `bids`, if that support is right.
///
/// On the support, `p_j = beta_i v_ij`; a spanning forest of the
/// buyer–item support graph fixes every price up to one scale per
/// component, which the component's budget total pins down. Spending on
/// tree edges then follows by peeling leaves; spending on edges closing a
/// cycle keeps its proportional-response value. The candidate is rejected
/// unless all spending is nonnegative and no buyer prefers an item off its
/// support.
fn polish(market: &Market, bids: &Matrix, cutoff: f64, rounds: usize) -> Option<EquilibriumSolution> {
    let (n, m) = (market.n_buyers(), market.n_items());
    let v = market.valuations();
    let s = market.supplies();
    let budgets = market.budgets();
    let nodes = n + m;
    // adjacency over buyers 0..n and items n..n+m
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for i in 0..n {
        for j in 0..m {
            if bids[(i, j)] > cutoff * budgets[i] {
                adj[i].push(n + j);
                adj[n + j].push(i);
            }
        }
    }

    // spanning forest in BFS order; log-values: ln p_j for items, ln beta_i for buyers
    let mut parent = vec![usize::MAX; nodes];
    let mut seen = vec![false; nodes];
    let mut log_val = vec![0.0f64; nodes];
    let mut order = Vec::with_capacity(nodes);
    let mut component = vec![usize::MAX; nodes];
    let mut comp_count = 0;
    for root in 0..nodes {
        if seen[root] {
            continue;
        }
        if root >= n && v.col(root - n).iter().all(|&x| x == 0.0) {
            seen[root] = true;
            continue;
        }
        if adj[root].is_empty() {
            return None;
        }
        seen[root] = true;
        component[root] = comp_count;
        let start = order.len();
        order.push(root);
        let mut head = start;
        while head < order.len() {
            let a = order[head];
            head += 1;
            for &b in &adj[a] {
                let (i, j) = if a < n { (a, b - n) } else { (b, a - n) };
                let edge = v[(i, j)].ln();
                // ln p_j - ln beta_i = ln v_ij
                let implied = if a < n { log_val[a] + edge } else { log_val[a] - edge };
                if !seen[b] {
                    seen[b] = true;
                    parent[b] = a;
                    component[b] = comp_count;
                    log_val[b] = implied;
                    order.push(b);
                } else if (log_val[b] - implied).abs() > 1e-9 {
                    return None;
                }
            }
        }
        comp_count += 1;
    }

    // scale each component so price mass equals budget mass
    let mut mass_budget = vec![0.0; comp_count];
    let mut mass_price = vec![0.0; comp_count];
    for i in 0..n {
        mass_budget[component[i]] += budgets[i];
    }
    for j in 0..m {
        let c = component[n + j];
        if c != usize::MAX {
            mass_price[c] += log_val[n + j].exp() * s[j];
        }
    }
    let mut prices = vec![0.0; m];
    let mut beta = vec![0.0; n];
    for j in 0..m {
        let c = component[n + j];
        if c != usize::MAX {
            prices[j] = log_val[n + j].exp() * mass_budget[c] / mass_price[c];
        }
    }
    for i in 0..n {
        let c = component[i];
        beta[i] = log_val[i].exp() * mass_budget[c] / mass_price[c];
    }

    // no buyer strictly prefers an item off its support
    for i in 0..n {
        for j in 0..m {
            if beta[i] * v[(i, j)] > prices[j] * (1.0 + POLISH_TOL) {
                return None;
            }
        }
    }

    // spending: non-tree edges keep their bids, tree edges are solved leaf-first
    let mut spend = Matrix::zeros(n, m);
    let mut residual: Vec<f64> =
        (0..nodes).map(|k| if k < n { budgets[k] } else { prices[k - n] * s[k - n] }).collect();
    for a in 0..n {
        for &b in &adj[a] {
            let j = b - n;
            if parent[b] != a && parent[a] != b {
                let bid = bids[(a, j)];
                spend[(a, j)] = bid;
                residual[a] -= bid;
                residual[b] -= bid;
            }
        }
    }
    for &node in order.iter().rev() {
        let up = parent[node];
        if up == usize::MAX {
            let scale = if node < n { budgets[node] } else { prices[node - n] * s[node - n] };
            if residual[node].abs() > 1e-9 * scale.max(1.0) {
                return None;
            }
            continue;
        }
        let flow = residual[node];
        let (i, j) = if node < n { (node, up - n) } else { (up, node - n) };
        if flow < -POLISH_TOL * budgets[i] {
            return None;
        }
        spend[(i, j)] = flow.max(0.0);
        residual[node] -= flow;
        residual[up] -= flow;
    }

    let shares = Matrix::from_fn(n, m, |i, j| if prices[j] > 0.0 { spend[(i, j)] / prices[j] } else { 0.0 });
    let mut sol = EquilibriumSolution::from_pair(market, PriceVector::new(prices), Allocation::new(shares));
    sol.diagnostics = Diagnostics {
        method: "proportional-response+support-solve".to_string(),
        iterations: rounds,
        duality_gap: 0.0,
        converged: true,
        clearing_residual: 0.0,
        budget_residual: 0.0,
    };
    Some(sol)
}
