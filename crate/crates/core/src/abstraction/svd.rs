use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LowRankFactors;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Extra basis vectors carried through the subspace iteration.
const OVERSAMPLE: usize = 8;
const MAX_SWEEPS: usize = 500;

/// Best rank-`k` approximation of `v` by orthogonal (subspace) iteration
/// from a seeded Gaussian start.
///
/// Each factor carries the square root of its singular value, so
/// `buyer_vecs * item_vecs^T` is the truncated product.
pub fn svd_low_rank(v: &Matrix, k: usize, seed: u64) -> Result<LowRankFactors> {
    let (n, m) = v.shape();
    let max = n.min(m);
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { rank: k, max });
    }
    let a = v.to_nalgebra();
    let width = (k + OVERSAMPLE).min(max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(m, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = (&a * omega).qr().q();
    let mut previous = vec![f64::INFINITY; k];
    for _ in 0..MAX_SWEEPS {
        let z = (a.transpose() * &q).qr().q();
        q = (&a * z).qr().q();
        let sigma = top_singular_values(&(q.transpose() * &a), k);
        let settled =
            sigma.iter().zip(&previous).all(|(s, p)| (s - p).abs() <= 1e-13 * sigma[0].max(f64::MIN_POSITIVE));
        previous = sigma;
        if settled {
            break;
        }
    }
    // Project, then finish with a small dense SVD.
    let b = q.transpose() * &a;
    let svd = b.svd(true, true);
    let u_small = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let u = q * u_small;
    let buyer_vecs = Matrix::from_fn(n, k, |i, c| u[(i, order[c])] * svd.singular_values[order[c]].sqrt());
    let item_vecs = Matrix::from_fn(m, k, |j, c| vt[(order[c], j)] * svd.singular_values[order[c]].sqrt());
    Ok(LowRankFactors::new(buyer_vecs, item_vecs))
}

fn top_singular_values(b: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let mut s: Vec<f64> = b.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(k);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn error(v: &Matrix, k: usize) -> f64 {
        let f = svd_low_rank(v, k, 7).unwrap();
        v.sub(&f.reconstruct()).unwrap().frobenius_norm()
    }

    #[test]
    fn rank_one_is_exact() {
        let v = Matrix::from_rows(&[[3.0, 4.0], [6.0, 8.0]]).unwrap();
        assert!(error(&v, 1) < 1e-12);
    }

    #[test]
    fn identity_truncation() {
        let id = Matrix::identity(3);
        assert!(error(&id, 3) < 1e-12);
        assert_abs_diff_eq!(error(&id, 1), 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn rank_out_of_range() {
        let id = Matrix::identity(3);
        assert!(matches!(svd_low_rank(&id, 0, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(svd_low_rank(&id, 4, 0), Err(Error::RankOutOfRange { rank: 4, max: 3 })));
    }

    #[test]
    fn matches_dense_reference_and_is_monotone() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Matrix::from_fn(60, 25, |_, _| rng.gen_range(0.0..1.0));
        let reference = v.to_nalgebra().singular_values();
        let mut sigma: Vec<f64> = reference.iter().copied().collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        let mut last = f64::INFINITY;
        for k in 1..=25 {
            let expected = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            let got = error(&v, k);
            assert!((got - expected).abs() <= 1e-6 * expected.max(1e-12) + 1e-10, "k={k}: {got} vs {expected}");
            assert!(got <= last + 1e-12);
            last = got;
        }
    }
}
