//! Market abstractions: low-rank models of the valuation matrix, clustering,
//! and the representative market whose buyers and items stand for clusters
//! of originals.

mod completion;
mod kmeans;
mod svd;

pub use completion::{matrix_complete, Completion, CompletionOptions, ObservationSet};
pub use kmeans::{kmeans, kmeans_best_of, kmeans_from, kmeans_path, normalize_rows, Clustering};
pub use svd::svd_low_rank;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::matrix::{dot, Matrix};

/// Latent vectors with `v_ij ~ buyer_vecs_i . item_vecs_j + buyer_bias_i + item_bias_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankFactors {
    pub buyer_vecs: Matrix,
    pub item_vecs: Matrix,
    pub buyer_bias: Option<Vec<f64>>,
    pub item_bias: Option<Vec<f64>>,
}

impl LowRankFactors {
    /// Panics if the two factor matrices disagree on the rank.
    pub fn new(buyer_vecs: Matrix, item_vecs: Matrix) -> Self {
        assert_eq!(buyer_vecs.cols(), item_vecs.cols(), "factor ranks differ");
        LowRankFactors { buyer_vecs, item_vecs, buyer_bias: None, item_bias: None }
    }

    pub fn rank(&self) -> usize {
        self.buyer_vecs.cols()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        dot(self.buyer_vecs.row(i), self.item_vecs.row(j))
            + self.buyer_bias.as_ref().map_or(0.0, |b| b[i])
            + self.item_bias.as_ref().map_or(0.0, |b| b[j])
    }

    /// The modelled matrix, possibly with negative entries.
    pub fn reconstruct(&self) -> Matrix {
        Matrix::from_fn(self.buyer_vecs.rows(), self.item_vecs.rows(), |i, j| self.value(i, j))
    }

    /// The modelled matrix clamped at zero, with the number of clamped entries.
    pub fn valuations(&self) -> (Matrix, usize) {
        clamp_nonnegative(self.reconstruct())
    }
}

pub(crate) fn clamp_nonnegative(mut v: Matrix) -> (Matrix, usize) {
    let mut clamped = 0;
    for x in v.as_mut_slice() {
        if *x < 0.0 {
            *x = 0.0;
            clamped += 1;
        }
    }
    (v, clamped)
}

/// How representative valuations are formed.
#[derive(Clone, Debug, PartialEq)]
pub enum ValuationMode {
    /// Mean of the original valuations over each buyer-cluster by
    /// item-cluster block.
    ClusterMean,
    /// Dot product of the cluster-mean factor vectors (plus mean biases).
    FactorDot(LowRankFactors),
    /// Representative valuations given directly, `n_hat x m_hat`.
    Explicit(Matrix),
}

/// Cluster assignments, the representative market they induce, and the
/// full-size approximation `v_hat_ij = v_tilde_{r(i) r(j)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractionMap {
    pub buyer_assign: Vec<usize>,
    pub item_assign: Vec<usize>,
    pub rep_market: Market,
    pub v_hat: Matrix,
    /// Representative valuations clamped up to zero (factor mode only).
    pub clamped: usize,
}

impl AbstractionMap {
    pub fn n_hat(&self) -> usize {
        self.rep_market.n_buyers()
    }

    pub fn m_hat(&self) -> usize {
        self.rep_market.n_items()
    }

    pub fn buyer_members(&self) -> Vec<Vec<usize>> {
        members(&self.buyer_assign, self.n_hat())
    }

    pub fn item_members(&self) -> Vec<Vec<usize>> {
        members(&self.item_assign, self.m_hat())
    }

    /// Every buyer and item in its own cluster.
    pub fn identity(market: &Market) -> Result<Self> {
        build_representative_market(
            market,
            &(0..market.n_buyers()).collect::<Vec<_>>(),
            &(0..market.n_items()).collect::<Vec<_>>(),
            &ValuationMode::ClusterMean,
        )
    }
}

fn members(assign: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (x, &c) in assign.iter().enumerate() {
        out[c].push(x);
    }
    out
}

fn cluster_count(kind: &'static str, assign: &[usize]) -> Result<usize> {
    let k = assign.iter().max().map_or(0, |&c| c + 1);
    let mut seen = vec![false; k];
    for &c in assign {
        seen[c] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(cluster) => Err(Error::EmptyCluster { kind, cluster }),
        None => Ok(k),
    }
}

/// Representative market with summed budgets and supplies.
pub fn build_representative_market(
    market: &Market,
    buyer_assign: &[usize],
    item_assign: &[usize],
    mode: &ValuationMode,
) -> Result<AbstractionMap> {
    let (n, m) = (market.n_buyers(), market.n_items());
    if buyer_assign.len() != n {
        return Err(Error::DimensionMismatch { context: "buyer assignment", expected: n, found: buyer_assign.len() });
    }
    if item_assign.len() != m {
        return Err(Error::DimensionMismatch { context: "item assignment", expected: m, found: item_assign.len() });
    }
    let n_hat = cluster_count("buyer", buyer_assign)?;
    let m_hat = cluster_count("item", item_assign)?;
    let buyers = members(buyer_assign, n_hat);
    let items = members(item_assign, m_hat);

    let budgets: Vec<f64> = buyers.iter().map(|c| c.iter().map(|&i| market.budgets()[i]).sum()).collect();
    let supplies: Vec<f64> = items.iter().map(|c| c.iter().map(|&j| market.supplies()[j]).sum()).collect();

    let v = market.valuations();
    let (rep_v, clamped) = match mode {
        ValuationMode::ClusterMean => {
            let mean = Matrix::from_fn(n_hat, m_hat, |a, b| {
                let total: f64 = buyers[a].iter().flat_map(|&i| items[b].iter().map(move |&j| v[(i, j)])).sum();
                total / (buyers[a].len() * items[b].len()) as f64
            });
            (mean, 0)
        }
        ValuationMode::FactorDot(f) => {
            if f.buyer_vecs.rows() != n || f.item_vecs.rows() != m {
                return Err(Error::DimensionMismatch {
                    context: "factor rows",
                    expected: n,
                    found: f.buyer_vecs.rows(),
                });
            }
            let avg = |vecs: &Matrix, bias: &Option<Vec<f64>>, group: &[usize]| {
                let mut c = vec![0.0; f.rank()];
                let mut b = 0.0;
                for &x in group {
                    for (acc, y) in c.iter_mut().zip(vecs.row(x)) {
                        *acc += y;
                    }
                    b += bias.as_ref().map_or(0.0, |bs| bs[x]);
                }
                let inv = 1.0 / group.len() as f64;
                c.iter_mut().for_each(|x| *x *= inv);
                (c, b * inv)
            };
            let bc: Vec<_> = buyers.iter().map(|g| avg(&f.buyer_vecs, &f.buyer_bias, g)).collect();
            let ic: Vec<_> = items.iter().map(|g| avg(&f.item_vecs, &f.item_bias, g)).collect();
            clamp_nonnegative(Matrix::from_fn(n_hat, m_hat, |a, b| dot(&bc[a].0, &ic[b].0) + bc[a].1 + ic[b].1))
        }
        ValuationMode::Explicit(given) => {
            if given.shape() != (n_hat, m_hat) {
                return Err(Error::DimensionMismatch {
                    context: "representative valuations",
                    expected: n_hat * m_hat,
                    found: given.rows() * given.cols(),
                });
            }
            (given.clone(), 0)
        }
    };
    let v_hat = Matrix::from_fn(n, m, |i, j| rep_v[(buyer_assign[i], item_assign[j])]);
    let rep_market = Market::new(rep_v, budgets, supplies)?;
    Ok(AbstractionMap {
        buyer_assign: buyer_assign.to_vec(),
        item_assign: item_assign.to_vec(),
        rep_market,
        v_hat,
        clamped,
    })
}

/// `V - v_hat`.
pub fn delta_v(market: &Market, v_hat: &Matrix) -> Result<Matrix> {
    let v = market.valuations();
    v.sub(v_hat).ok_or(Error::DimensionMismatch {
        context: "v_hat",
        expected: v.rows() * v.cols(),
        found: v_hat.rows() * v_hat.cols(),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    pub use crate::instances::five_by_four;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_clustering_is_lossless() {
        let m =
            Market::new(Matrix::from_rows(&[[1.0, 2.0], [3.0, 0.5]]).unwrap(), vec![1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let abs = AbstractionMap::identity(&m).unwrap();
        assert_eq!(abs.rep_market, m);
        assert_eq!(abs.v_hat, *m.valuations());
        assert!(delta_v(&m, &abs.v_hat).unwrap().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_buyers_merge() {
        let m =
            Market::new(Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap(), vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let abs = build_representative_market(&m, &[0, 0], &[0, 1], &ValuationMode::ClusterMean).unwrap();
        assert_eq!(abs.rep_market.valuations().row(0), &[1.0, 2.0]);
        assert_eq!(abs.rep_market.budgets(), &[2.0]);
    }

    #[test]
    fn five_by_four_budgets_and_means() {
        let m = fixtures::five_by_four(0.1);
        let abs =
            build_representative_market(&m, &[0, 0, 1, 1, 0], &[0, 1, 2, 3], &ValuationMode::ClusterMean).unwrap();
        assert_eq!(abs.rep_market.budgets(), &[3.0, 2.0]);
        let rows = abs.rep_market.valuations();
        assert!((rows[(1, 2)] - 1.0).abs() < 1e-12 && (rows[(1, 3)] - 1.0).abs() < 1e-12);
        // Buyer 4's tilt toward items 2 and 3 is averaged into the first row.
        assert!((rows[(0, 2)] - 1.1 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn totals_are_conserved() {
        let m = Market::new(
            Matrix::from_fn(5, 4, |i, j| (i + 2 * j) as f64 + 0.5),
            vec![1.0, 2.0, 3.0, 0.5, 1.5],
            vec![2.0, 1.0, 0.25, 4.0],
        )
        .unwrap();
        let abs =
            build_representative_market(&m, &[1, 0, 1, 2, 0], &[0, 0, 1, 0], &ValuationMode::ClusterMean).unwrap();
        assert_eq!(abs.rep_market.total_budget(), m.total_budget());
        let s_tot: f64 = abs.rep_market.supplies().iter().sum();
        assert_eq!(s_tot, m.supplies().iter().sum::<f64>());
        for i in 0..5 {
            for j in 0..4 {
                let same = (0..5).filter(|&k| abs.buyer_assign[k] == abs.buyer_assign[i]);
                for k in same {
                    assert_eq!(abs.v_hat[(i, j)], abs.v_hat[(k, j)]);
                }
            }
        }
    }

    #[test]
    fn empty_cluster_is_rejected() {
        let m = fixtures::five_by_four(0.1);
        let err = build_representative_market(&m, &[0, 0, 2, 2, 0], &[0, 1, 2, 3], &ValuationMode::ClusterMean);
        assert!(matches!(err, Err(Error::EmptyCluster { kind: "buyer", cluster: 1 })));
    }

    #[test]
    fn factor_mode_uses_mean_vectors() {
        let m = Market::with_unit_budgets(Matrix::from_rows(&[[3.0, 4.0], [6.0, 8.0]]).unwrap()).unwrap();
        let f = LowRankFactors::new(
            Matrix::from_rows(&[[1.0], [2.0]]).unwrap(),
            Matrix::from_rows(&[[3.0], [4.0]]).unwrap(),
        );
        let abs = build_representative_market(&m, &[0, 0], &[0, 1], &ValuationMode::FactorDot(f)).unwrap();
        assert_eq!(abs.rep_market.valuations().row(0), &[4.5, 6.0]);
        let f = LowRankFactors::new(
            Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
            Matrix::from_rows(&[[1.0], [1.0]]).unwrap(),
        );
        assert_eq!(f.valuations().1, 2);
    }

    #[test]
    fn delta_examples() {
        let m = Market::with_unit_budgets(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        let d = delta_v(&m, &Matrix::from_fn(2, 2, |_, _| 1.0)).unwrap();
        assert_eq!(d, Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0]]).unwrap());
        assert!(delta_v(&m, &Matrix::identity(3)).is_err());
    }
}
