use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assign: Vec<usize>,
    pub centroids: Matrix,
    /// Sum of squared distances to assigned centroids.
    pub distortion: f64,
    /// Distortion after seeding and after every Lloyd step.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Members of each cluster, in point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (p, &c) in self.assign.iter().enumerate() {
            out[c].push(p);
        }
        out
    }
}

/// Lloyd's algorithm from k-means++ seeding. Points are the rows of
/// `points`; an emptied cluster takes the point farthest from its centroid
/// in the largest cluster.
pub fn kmeans(points: &Matrix, k: usize, iters: usize, seed: u64) -> Result<Clustering> {
    let r = points.rows();
    if k == 0 || k > r {
        return Err(Error::InvalidConfig(format!("k = {k} must lie in 1..={r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(lloyd(points, seed_plus_plus(points, k, &mut rng), iters))
}

/// Lloyd's algorithm from the given centroids.
pub fn kmeans_from(points: &Matrix, centroids: Matrix, iters: usize) -> Result<Clustering> {
    if centroids.rows() == 0 || centroids.rows() > points.rows() || centroids.cols() != points.cols() {
        return Err(Error::InvalidConfig("starting centroids do not fit the points".into()));
    }
    Ok(lloyd(points, centroids, iters))
}

fn lloyd(points: &Matrix, centroids: Matrix, iters: usize) -> Clustering {
    let k = centroids.rows();
    let (mut assign, mut dist) = assign_points(points, &centroids);
    let mut history = vec![dist.iter().sum::<f64>()];
    for _ in 0..iters {
        let centroids = update_centroids(points, &mut assign, &mut dist, k);
        let (next, next_dist) = assign_points(points, &centroids);
        let changed = next != assign;
        assign = next;
        dist = next_dist;
        history.push(dist.iter().sum());
        if !changed {
            break;
        }
    }
    // Final means also repair any cluster the last reassignment emptied.
    let centroids = update_centroids(points, &mut assign, &mut dist, k);
    for (p, d) in dist.iter_mut().enumerate() {
        *d = sq_dist(points.row(p), centroids.row(assign[p]));
    }
    let distortion = dist.iter().sum();
    history.push(distortion);
    Clustering { assign, centroids, distortion, history }
}

/// Best of `restarts` runs with seeds `seed, seed + 1, ...`.
pub fn kmeans_best_of(points: &Matrix, k: usize, iters: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    let runs: Vec<Clustering> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|s| kmeans(points, k, iters, seed.wrapping_add(s)))
        .collect::<Result<_>>()?;
    // first minimum wins, independent of completion order
    Ok(runs
        .into_iter()
        .reduce(|best, c| if c.distortion < best.distortion { c } else { best })
        .expect("at least one run"))
}

/// Clusterings for `k = 1..=max_k` whose distortion never increases with
/// `k`: each level keeps the better of a fresh best-of-`restarts` run and a
/// warm start from the previous level plus its worst-fit point.
pub fn kmeans_path(points: &Matrix, max_k: usize, iters: usize, seed: u64, restarts: usize) -> Result<Vec<Clustering>> {
    let mut path: Vec<Clustering> = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let fresh = kmeans_best_of(points, k, iters, seed, restarts)?;
        let best = match path.last() {
            Some(prev) => {
                let (_, dist) = assign_points(points, &prev.centroids);
                let worst = (0..points.rows()).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).expect("points");
                let mut rows = prev.centroids.to_rows();
                rows.push(points.row(worst).to_vec());
                let warm = lloyd(points, Matrix::from_rows(&rows).expect("rectangular"), iters);
                if warm.distortion < fresh.distortion {
                    warm
                } else {
                    fresh
                }
            }
            None => fresh,
        };
        path.push(best);
    }
    Ok(path)
}

/// Scales every nonzero row to unit Euclidean length.
pub fn normalize_rows(points: &Matrix) -> Matrix {
    let mut out = points.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_plus_plus(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let r = points.rows();
    let mut chosen = vec![rng.gen_range(0..r)];
    let mut nearest: Vec<f64> = (0..r).map(|p| sq_dist(points.row(p), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // All remaining mass is zero: duplicates only, pick any unused point.
            Err(_) => (0..r).find(|p| !chosen.contains(p)).expect("k <= r"),
        };
        chosen.push(next);
        for (p, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(p), points.row(next)));
        }
    }
    points.submatrix(&chosen, &(0..points.cols()).collect::<Vec<_>>())
}

fn assign_points(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .into_par_iter()
        .map(|p| {
            let row = points.row(p);
            (0..centroids.rows()).map(|c| (c, sq_dist(row, centroids.row(c)))).fold((0, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            })
        })
        .unzip()
}

/// Means of the current clusters. Empty clusters are refilled first, which
/// only ever lowers the distortion.
fn update_centroids(points: &Matrix, assign: &mut [usize], dist: &mut [f64], k: usize) -> Matrix {
    let mut counts = vec![0usize; k];
    for &c in assign.iter() {
        counts[c] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("k >= 1");
        let far = (0..assign.len())
            .filter(|&p| assign[p] == largest)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
            .expect("largest cluster is non-empty");
        assign[far] = empty;
        dist[far] = 0.0;
        counts[largest] -= 1;
        counts[empty] += 1;
    }
    let d = points.cols();
    let mut sums = Matrix::zeros(k, d);
    for (p, &c) in assign.iter().enumerate() {
        for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(p)) {
            *s += x;
        }
    }
    for c in 0..k {
        let inv = 1.0 / counts[c] as f64;
        sums.row_mut(c).iter_mut().for_each(|x| *x *= inv);
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_groups() {
        let pts = Matrix::from_fn(10, 2, |i, _| if i < 5 { 0.0 } else { 10.0 });
        let c = kmeans_best_of(&pts, 2, 50, 0, 5).unwrap();
        assert_eq!(c.distortion, 0.0);
        let mut cents: Vec<f64> = (0..2).map(|k| c.centroids[(k, 0)]).collect();
        cents.sort_by(f64::total_cmp);
        assert_eq!(cents, vec![0.0, 10.0]);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]]).unwrap();
        let c = kmeans(&pts, 3, 10, 4).unwrap();
        assert_eq!(c.distortion, 0.0);
        let mut a = c.assign.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn line_example_matches_exhaustive_partition() {
        let xs = [0.0, 1.0, 9.0, 10.0];
        let pts = Matrix::from_fn(4, 1, |i, _| xs[i]);
        // Enumerate every 2-partition for the optimum.
        let mut best = f64::INFINITY;
        for mask in 1u32..15 {
            let cost = |inside: bool| {
                let group: Vec<f64> = (0..4).filter(|&i| ((mask >> i) & 1 == 1) == inside).map(|i| xs[i]).collect();
                let mean = group.iter().sum::<f64>() / group.len() as f64;
                group.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            };
            best = best.min(cost(true) + cost(false));
        }
        let c = kmeans_best_of(&pts, 2, 50, 0, 5).unwrap();
        assert!((c.distortion - best).abs() < 1e-12);
        assert_eq!(c.assign[0], c.assign[1]);
        assert_eq!(c.assign[2], c.assign[3]);
        let mut cents: Vec<f64> = (0..2).map(|k| c.centroids[(k, 0)]).collect();
        cents.sort_by(f64::total_cmp);
        assert_eq!(cents, vec![0.5, 9.5]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = Matrix::from_fn(6, 2, |_, _| 1.0);
        let c = kmeans(&pts, 4, 10, 0).unwrap();
        assert!(c.members().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn rejects_bad_k() {
        let pts = Matrix::identity(3);
        assert!(kmeans(&pts, 0, 10, 0).is_err());
        assert!(kmeans(&pts, 4, 10, 0).is_err());
    }

    fn cloud() -> impl Strategy<Value = Matrix> {
        (2usize..30, 1usize..4).prop_flat_map(|(r, d)| {
            prop::collection::vec(-5.0f64..5.0, r * d).prop_map(move |v| Matrix::from_vec(r, d, v))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn distortion_never_increases(pts in cloud(), k in 1usize..6, seed in any::<u64>()) {
            let k = k.min(pts.rows());
            let c = kmeans(&pts, k, 100, seed).unwrap();
            for w in c.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
            }
            prop_assert!(c.members().iter().all(|m| !m.is_empty()));
        }

        #[test]
        fn nested_path_is_monotone_in_k(pts in cloud(), seed in any::<u64>()) {
            let path = kmeans_path(&pts, pts.rows().min(6), 100, seed, 5).unwrap();
            for w in path.windows(2) {
                prop_assert!(w[1].distortion <= w[0].distortion * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
