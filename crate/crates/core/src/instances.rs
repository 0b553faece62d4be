//! Small named markets used throughout the tests, the guide and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::ValuationMode;
use crate::market::Market;
use crate::matrix::Matrix;

/// Two unit-budget buyers who each value a different item.
pub fn disjoint() -> Market {
    Market::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), vec![1.0, 1.0], vec![1.0, 1.0]).unwrap()
}

/// Two unit-budget buyers with mirrored preferences.
pub fn symmetric() -> Market {
    Market::new(Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap(), vec![1.0, 1.0], vec![1.0, 1.0]).unwrap()
}

/// Five unit-budget buyers over four unit-supply items. Buyers 0, 1 and 4
/// share a taste for items 0 and 1; buyers 2 and 3 tilt by `eps` toward
/// items 2 and 3 respectively, and buyer 4 shares buyer 2's tilt.
pub fn five_by_four(eps: f64) -> Market {
    Market::new(
        Matrix::from_rows(&[
            [1.5, 1.5, 0.0, 0.0],
            [1.5, 1.5, 0.0, 0.0],
            [0.0, 0.0, 1.0 + eps, 1.0 - eps],
            [0.0, 0.0, 1.0 - eps, 1.0 + eps],
            [1.5, 1.5, 1.0 + eps, 1.0 - eps],
        ])
        .unwrap(),
        vec![1.0; 5],
        vec![1.0; 4],
    )
    .unwrap()
}

/// The coarse view of [`five_by_four`]: buyers {0, 1, 4} and {2, 3}, items
/// {0, 1} and {2, 3}, with representative values 1.5 on the own block and 0
/// elsewhere. Returns `(buyer_assign, item_assign, mode)`.
pub fn five_by_four_abstraction() -> (Vec<usize>, Vec<usize>, ValuationMode) {
    let rep = Matrix::from_rows(&[[1.5, 1.5, 0.0, 0.0], [0.0, 0.0, 1.5, 1.5]]).unwrap();
    // Representative values are per original item, so item clusters are singletons.
    (vec![0, 0, 1, 1, 0], vec![0, 1, 2, 3], ValuationMode::Explicit(rep))
}

/// Values drawn uniformly from `[lo, hi)` with the given budgets and supply.
pub fn uniform_random(n: usize, m: usize, lo: f64, hi: f64, budget: f64, supply: f64, seed: u64) -> Market {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Matrix::from_fn(n, m, |_, _| rng.gen_range(lo..hi));
    Market::new(v, vec![budget; n], vec![supply; m]).expect("positive draws")
}
