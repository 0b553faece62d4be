use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LowRankFactors;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Observed entries `(i, j, value)` of an `n x m` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    n: usize,
    m: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl ObservationSet {
    /// Rejects out-of-range indices and repeated cells.
    pub fn new(n: usize, m: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for &(i, j, _) in &entries {
            if i >= n {
                return Err(Error::IndexOutOfRange { context: "observation row", index: i, len: n });
            }
            if j >= m {
                return Err(Error::IndexOutOfRange { context: "observation column", index: j, len: m });
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidConfig(format!("duplicate observation ({i}, {j})")));
            }
        }
        Ok(ObservationSet { n, m, entries })
    }

    /// Every cell of a dense matrix.
    pub fn full(v: &Matrix) -> Self {
        let (n, m) = v.shape();
        let entries = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| (i, j, v[(i, j)])).collect();
        ObservationSet { n, m, entries }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionOptions {
    pub rank: usize,
    /// Ridge weight on factor and bias norms.
    pub reg: f64,
    pub iters: usize,
    pub seed: u64,
    /// Fit per-buyer and per-item offsets alongside the factors.
    pub biases: bool,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        CompletionOptions { rank: 5, reg: 1e-4, iters: 200, seed: 0, biases: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub factors: LowRankFactors,
    pub train_rmse: f64,
    pub sweeps: usize,
    /// Rows with no observation; their factors stay zero, so their
    /// reconstructions are pure extrapolation.
    pub cold_buyers: Vec<usize>,
    pub cold_items: Vec<usize>,
}

/// Alternating least squares on the observed cells, each row and column
/// solved exactly as a ridge regression in turn.
///
/// Stops early once the training RMSE stalls.
pub fn matrix_complete(obs: &ObservationSet, opts: &CompletionOptions) -> Result<Completion> {
    let (n, m) = obs.shape();
    let d = opts.rank;
    if d == 0 {
        return Err(Error::RankOutOfRange { rank: 0, max: n.min(m) });
    }
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for &(i, j, x) in obs.entries() {
        by_row[i].push((j, x));
        by_col[j].push((i, x));
    }
    let cold_buyers: Vec<usize> = (0..n).filter(|&i| by_row[i].is_empty()).collect();
    let cold_items: Vec<usize> = (0..m).filter(|&j| by_col[j].is_empty()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = obs.entries().iter().map(|e| e.2.abs()).sum::<f64>() / obs.len().max(1) as f64;
    let init = (scale.max(1e-3) / d as f64).sqrt();
    let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| init * rng.gen_range(0.5..1.5)).collect()).collect();
    let mut cols: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| init * rng.gen_range(0.5..1.5)).collect()).collect();
    let mut row_bias = vec![0.0; n];
    let mut col_bias = vec![0.0; m];
    for &i in &cold_buyers {
        rows[i].fill(0.0);
    }
    for &j in &cold_items {
        cols[j].fill(0.0);
    }

    let mut rmse = training_rmse(obs, &rows, &cols, &row_bias, &col_bias);
    let mut sweeps = 0;
    while sweeps < opts.iters && rmse > 0.0 {
        let solved = solve_side(&by_row, &cols, &col_bias, opts);
        for (i, (vec, bias)) in solved.into_iter().enumerate() {
            rows[i] = vec;
            row_bias[i] = bias;
        }
        let solved = solve_side(&by_col, &rows, &row_bias, opts);
        for (j, (vec, bias)) in solved.into_iter().enumerate() {
            cols[j] = vec;
            col_bias[j] = bias;
        }
        sweeps += 1;
        let next = training_rmse(obs, &rows, &cols, &row_bias, &col_bias);
        let stalled = (rmse - next).abs() <= 1e-12 * rmse.max(1e-300) || next < 1e-13 * scale.max(1.0);
        rmse = next;
        if stalled {
            break;
        }
    }

    let to_matrix = |vs: &[Vec<f64>]| Matrix::from_fn(vs.len(), d, |a, b| vs[a][b]);
    let mut factors = LowRankFactors::new(to_matrix(&rows), to_matrix(&cols));
    if opts.biases {
        factors.buyer_bias = Some(row_bias);
        factors.item_bias = Some(col_bias);
    }
    Ok(Completion { factors, train_rmse: rmse, sweeps, cold_buyers, cold_items })
}

/// Ridge solve for every vector on one side with the other side fixed.
/// Returns `(vector, bias)` pairs; the bias is zero when biases are off.
fn solve_side(
    lists: &[Vec<(usize, f64)>],
    other: &[Vec<f64>],
    other_bias: &[f64],
    opts: &CompletionOptions,
) -> Vec<(Vec<f64>, f64)> {
    let d = opts.rank;
    let width = if opts.biases { d + 1 } else { d };
    lists
        .par_iter()
        .map(|list| {
            if list.is_empty() {
                return (vec![0.0; d], 0.0);
            }
            let mut gram = DMatrix::<f64>::zeros(width, width);
            let mut rhs = DVector::<f64>::zeros(width);
            let mut feature = vec![1.0; width];
            for &(k, x) in list {
                feature[..d].copy_from_slice(&other[k]);
                let target = x - if opts.biases { other_bias[k] } else { 0.0 };
                for a in 0..width {
                    rhs[a] += feature[a] * target;
                    for b in 0..width {
                        gram[(a, b)] += feature[a] * feature[b];
                    }
                }
            }
            for a in 0..width {
                gram[(a, a)] += opts.reg;
            }
            let sol = match gram.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                // Unregularized and underdetermined: take the minimum-norm fit.
                None => gram.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(width)),
            };
            let bias = if opts.biases { sol[d] } else { 0.0 };
            (sol.iter().take(d).copied().collect(), bias)
        })
        .collect()
}

fn training_rmse(obs: &ObservationSet, rows: &[Vec<f64>], cols: &[Vec<f64>], rb: &[f64], cb: &[f64]) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    let sq: f64 = obs
        .entries()
        .iter()
        .map(|&(i, j, x)| {
            let pred: f64 = rows[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>() + rb[i] + cb[j];
            (x - pred).powi(2)
        })
        .sum();
    (sq / obs.len() as f64).sqrt()
}
