//! Seeded synthetic valuation matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::matrix::Matrix;

/// Generator parameters. Markets get unit budgets and `n / m` supply per
/// item unless overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// Buyers and items split into near-equal contiguous blocks; each block
    /// pair has one value drawn from `[low, high)`, plus Gaussian noise.
    BlockStructured { n: usize, m: usize, buyer_blocks: usize, item_blocks: usize, low: f64, high: f64, noise: f64 },
    /// Product of `[0, 1)` factors of the given rank, plus Gaussian noise.
    LowRankPlusNoise { n: usize, m: usize, rank: usize, noise: f64 },
    /// Independent draws from `[low, high)`.
    Uniform { n: usize, m: usize, low: f64, high: f64 },
}

impl SyntheticSpec {
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            SyntheticSpec::BlockStructured { n, m, .. }
            | SyntheticSpec::LowRankPlusNoise { n, m, .. }
            | SyntheticSpec::Uniform { n, m, .. } => (n, m),
        }
    }

    /// Block of buyer `i` (or item, with `item_blocks`) for block-structured specs.
    pub fn block_of(index: usize, len: usize, blocks: usize) -> usize {
        index * blocks / len
    }
}

/// Draws the valuation matrix. Noisy entries are clamped at zero, and a row
/// left without positive value gets a small positive entry so the result is
/// always a valid market.
pub fn generate_valuations(spec: &SyntheticSpec, seed: u64) -> Result<Matrix> {
    let (n, m) = spec.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidConfig("synthetic market needs n, m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_dist = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(format!("noise: {e}")));
    let mut v = match *spec {
        SyntheticSpec::BlockStructured { buyer_blocks, item_blocks, low, high, noise, .. } => {
            if buyer_blocks == 0 || buyer_blocks > n || item_blocks == 0 || item_blocks > m {
                return Err(Error::InvalidConfig("block counts must lie in 1..=n and 1..=m".into()));
            }
            check_range(low, high)?;
            let levels = Matrix::from_fn(buyer_blocks, item_blocks, |_, _| rng.gen_range(low..high));
            let dist = noise_dist(noise)?;
            Matrix::from_fn(n, m, |i, j| {
                let base =
                    levels[(SyntheticSpec::block_of(i, n, buyer_blocks), SyntheticSpec::block_of(j, m, item_blocks))];
                if noise > 0.0 {
                    base + dist.sample(&mut rng)
                } else {
                    base
                }
            })
        }
        SyntheticSpec::LowRankPlusNoise { rank, noise, .. } => {
            if rank == 0 {
                return Err(Error::InvalidConfig("rank must be positive".into()));
            }
            let a = Matrix::from_fn(n, rank, |_, _| rng.gen::<f64>());
            let b = Matrix::from_fn(m, rank, |_, _| rng.gen::<f64>());
            let dist = noise_dist(noise)?;
            Matrix::from_fn(n, m, |i, j| {
                let base: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                if noise > 0.0 {
                    base + dist.sample(&mut rng)
                } else {
                    base
                }
            })
        }
        SyntheticSpec::Uniform { low, high, .. } => {
            check_range(low, high)?;
            Matrix::from_fn(n, m, |_, _| rng.gen_range(low..high))
        }
    };
    for i in 0..n {
        let row = v.row_mut(i);
        row.iter_mut().for_each(|x| *x = x.max(0.0));
        if row.iter().all(|&x| x == 0.0) {
            row[rng.gen_range(0..m)] = 1e-3;
        }
    }
    Ok(v)
}

fn check_range(low: f64, high: f64) -> Result<()> {
    if low >= 0.0 && high > low {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("value range [{low}, {high}) must be nonempty and nonnegative")))
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Market> {
    let v = generate_valuations(spec, seed)?;
    let (n, m) = v.shape();
    Market::new(v, vec![1.0; n], vec![n as f64 / m as f64; m])
}
