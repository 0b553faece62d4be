//! Per-buyer subproblems shared by the primal-dual solver and the duality gap.
//!
//! Both reduce to one-dimensional monotone equations over piecewise-linear
//! functions, which are solved exactly by walking the breakpoints.

/// One coordinate of a buyer block whose trajectory in the multiplier `mu`
/// is `clip(offset + slope * mu, lo, hi)`, contributing `weight` times its
/// value to the buyer's utility.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Piece {
    pub weight: f64,
    pub offset: f64,
    pub slope: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Piece {
    #[inline]
    pub fn at(&self, mu: f64) -> f64 {
        (self.offset + self.slope * mu).clamp(self.lo, self.hi)
    }
}

/// Utility `u(mu) = const + slope * mu` on one segment, with the events
/// where the affine form changes.
struct Walk {
    constant: f64,
    slope: f64,
    events: Vec<(f64, f64, f64)>,
}

impl Walk {
    fn new(pieces: &[Piece]) -> Walk {
        let mut constant = 0.0;
        let mut slope = 0.0;
        let mut events = Vec::with_capacity(2 * pieces.len());
        for pc in pieces {
            if pc.weight == 0.0 {
                continue;
            }
            let w = pc.weight;
            if pc.slope <= 0.0 {
                constant += w * pc.offset.clamp(pc.lo, pc.hi);
                continue;
            }
            let enter = (pc.lo - pc.offset) / pc.slope;
            let exit = (pc.hi - pc.offset) / pc.slope;
            if exit <= 0.0 {
                constant += w * pc.hi;
            } else if enter > 0.0 {
                constant += w * pc.lo;
                events.push((enter, w * (pc.offset - pc.lo), w * pc.slope));
                events.push((exit, w * (pc.hi - pc.offset), -w * pc.slope));
            } else {
                constant += w * pc.offset;
                slope += w * pc.slope;
                events.push((exit, w * (pc.hi - pc.offset), -w * pc.slope));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        Walk { constant, slope, events }
    }
}

/// Smallest `mu >= 0` with `mu * u(mu) = target` (`target > 0`).
///
/// `mu * u(mu)` is continuous and nondecreasing, so the root is found on the
/// first segment whose right end overshoots. Returns infinity when `u`
/// stays at zero.
pub(crate) fn solve_rate(pieces: &[Piece], target: f64) -> f64 {
    let Walk { mut constant, mut slope, events } = Walk::new(pieces);
    for (mu, d_const, d_slope) in events {
        let u = constant + slope * mu;
        if mu * u >= target {
            return quadratic_root(constant, slope, target);
        }
        constant += d_const;
        slope += d_slope;
    }
    quadratic_root(constant, slope, target)
}

/// Same root as [`solve_rate`], found by hopping between segments from the
/// guess `mu0`. Each hop solves the quadratic for the segment at hand and
/// then checks that no piece changed regime on the way, so a warm start
/// near the answer costs two division-free sweeps and no sorting. Falls
/// back to the sorted walk after `MAX_HOPS` hops.
pub(crate) fn solve_rate_from(pieces: &[Piece], target: f64, mu0: f64) -> f64 {
    const MAX_HOPS: usize = 6;
    let mut mu = if mu0.is_finite() && mu0 > 0.0 { mu0 } else { 0.0 };
    for _ in 0..MAX_HOPS {
        // affine form of u on the right and on the left of mu
        let (mut c_right, mut s_right, mut c_left, mut s_left) = (0.0, 0.0, 0.0, 0.0);
        for pc in pieces {
            if pc.weight == 0.0 {
                continue;
            }
            let w = pc.weight;
            let z = pc.offset + pc.slope * mu;
            if pc.slope <= 0.0 {
                let c = w * pc.offset.clamp(pc.lo, pc.hi);
                c_right += c;
                c_left += c;
                continue;
            }
            if z < pc.lo {
                c_right += w * pc.lo;
            } else if z < pc.hi {
                c_right += w * pc.offset;
                s_right += w * pc.slope;
            } else {
                c_right += w * pc.hi;
            }
            if z <= pc.lo {
                c_left += w * pc.lo;
            } else if z <= pc.hi {
                c_left += w * pc.offset;
                s_left += w * pc.slope;
            } else {
                c_left += w * pc.hi;
            }
        }
        let u = c_right + s_right * mu;
        let phi = mu * u - target;
        if phi == 0.0 {
            return mu;
        }
        let right = phi < 0.0;
        let root =
            if right { quadratic_root(c_right, s_right, target) } else { quadratic_root(c_left, s_left, target) };
        // nearest breakpoint strictly between mu and root, if any
        let mut edge: Option<f64> = None;
        for pc in pieces {
            if pc.weight == 0.0 || pc.slope <= 0.0 {
                continue;
            }
            let z0 = pc.offset + pc.slope * mu;
            let z1 = pc.offset + pc.slope * root;
            let crossing = if right {
                if z0 < pc.lo && z1 > pc.lo {
                    Some(pc.lo)
                } else if z0 >= pc.lo && z0 < pc.hi && z1 > pc.hi {
                    Some(pc.hi)
                } else {
                    None
                }
            } else if z0 > pc.hi && z1 < pc.hi {
                Some(pc.hi)
            } else if z0 > pc.lo && z0 <= pc.hi && z1 < pc.lo {
                Some(pc.lo)
            } else {
                None
            };
            if let Some(level) = crossing {
                let at = (level - pc.offset) / pc.slope;
                edge = Some(match edge {
                    None => at,
                    Some(e) if right => e.min(at),
                    Some(e) => e.max(at),
                });
            }
        }
        match edge {
            None => return root,
            Some(e) => mu = e.max(0.0),
        }
    }
    solve_rate(pieces, target)
}

/// Smallest `mu >= 0` with `u(mu) >= level`, or `None` if unreachable.
pub(crate) fn solve_level(pieces: &[Piece], level: f64) -> Option<f64> {
    let Walk { mut constant, mut slope, events } = Walk::new(pieces);
    if constant >= level {
        return Some(0.0);
    }
    let mut last = 0.0;
    for (mu, d_const, d_slope) in events {
        if constant + slope * mu >= level {
            return Some(if slope > 0.0 { ((level - constant) / slope).max(last) } else { mu });
        }
        constant += d_const;
        slope += d_slope;
        last = mu;
    }
    if slope > 0.0 {
        Some(((level - constant) / slope).max(last))
    } else {
        None
    }
}

/// Positive root of `slope * mu^2 + constant * mu - target = 0`, picking
/// the cancellation-free formula for the sign of `constant`. The constant is
/// negative on segments entered after `mu = 0`.
#[inline]
fn quadratic_root(constant: f64, slope: f64, target: f64) -> f64 {
    let slope = slope.max(0.0);
    let disc = (constant * constant + 4.0 * slope * target).sqrt();
    if constant >= 0.0 {
        let denom = constant + disc;
        if denom > 0.0 {
            2.0 * target / denom
        } else {
            f64::INFINITY
        }
    } else if slope > 0.0 {
        (disc - constant) / (2.0 * slope)
    } else {
        f64::INFINITY
    }
}

/// Exact maximizer of `budget * ln(u) - cost` where utility is bought from
/// goods at constant cost-per-utility `rate` up to `capacity` units of
/// utility each.
///
/// Goods are `(rate, capacity)`; returns the utility bought from each good
/// (in the input order) and the total utility.
pub(crate) fn best_response(budget: f64, goods: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..goods.len()).filter(|&k| goods[k].1 > 0.0).collect();
    order.sort_by(|&a, &b| goods[a].0.total_cmp(&goods[b].0));
    let mut bought = vec![0.0; goods.len()];
    let mut total = 0.0;
    for k in order {
        let (rate, cap) = goods[k];
        if rate <= 0.0 {
            bought[k] = cap;
            total += cap;
            continue;
        }
        // marginal value of utility is budget / u; stop once it drops to the rate
        let wanted = budget / rate;
        if wanted <= total {
            break;
        }
        let take = (wanted - total).min(cap);
        bought[k] = take;
        total += take;
        if take < cap {
            break;
        }
    }
    (bought, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_rate(pieces: &[Piece], target: f64) -> f64 {
        let u = |mu: f64| pieces.iter().map(|p| p.weight * p.at(mu)).sum::<f64>();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi * u(hi) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * u(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    #[test]
    fn rate_matches_bisection() {
        let pieces = [
            Piece { weight: 2.0, offset: -0.3, slope: 0.5, lo: 0.0, hi: 1.0 },
            Piece { weight: 1.0, offset: 0.4, slope: 0.2, lo: 0.0, hi: 0.6 },
            Piece { weight: 0.5, offset: 1.5, slope: 1.0, lo: 0.0, hi: 1.0 },
            Piece { weight: 3.0, offset: -2.0, slope: 0.1, lo: 0.0, hi: 2.0 },
        ];
        for &target in &[0.01, 0.3, 1.0, 4.0, 50.0] {
            let exact = solve_rate(&pieces, target);
            let brute = brute_rate(&pieces, target);
            assert!((exact - brute).abs() < 1e-9 * brute.max(1.0), "{target}: {exact} vs {brute}");
        }
    }

    fn arb_piece() -> impl Strategy<Value = Piece> {
        (0.0f64..3.0, -3.0f64..2.0, 0.0f64..2.0, 0.1f64..3.0).prop_map(|(weight, offset, slope, hi)| Piece {
            weight,
            offset,
            slope,
            lo: 0.0,
            hi,
        })
    }

    proptest! {
        #[test]
        fn rate_matches_bisection_on_random_pieces(
            pieces in proptest::collection::vec(arb_piece(), 1..6),
            target in 0.01f64..5.0,
        ) {
            let u = |mu: f64| pieces.iter().map(|p| p.weight * p.at(mu)).sum::<f64>();
            prop_assume!(u(1e6) > 0.0);
            let exact = solve_rate(&pieces, target);
            let brute = brute_rate(&pieces, target);
            prop_assert!((exact - brute).abs() <= 1e-8 * brute.max(1.0), "{} vs {}", exact, brute);
        }
    }

    proptest! {
        #[test]
        fn warm_start_matches_sorted_walk(
            pieces in proptest::collection::vec(arb_piece(), 1..8),
            target in 0.01f64..5.0,
            guess in 0.0f64..20.0,
        ) {
            let u = |mu: f64| pieces.iter().map(|p| p.weight * p.at(mu)).sum::<f64>();
            prop_assume!(u(1e6) > 0.0);
            let cold = solve_rate(&pieces, target);
            let warm = solve_rate_from(&pieces, target, guess);
            prop_assert!((cold - warm).abs() <= 1e-9 * cold.max(1.0), "{} vs {}", cold, warm);
        }
    }

    #[test]
    fn level_is_first_crossing() {
        let pieces = [Piece { weight: 1.0, offset: -1.0, slope: 1.0, lo: 0.0, hi: 2.0 }];
        assert_eq!(solve_level(&pieces, 0.0), Some(0.0));
        assert!((solve_level(&pieces, 1.5).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(solve_level(&pieces, 3.0), None);
    }

    #[test]
    fn best_response_stops_at_kink() {
        // budget 1, first good cost 1 per utility with 2 units: log-optimum at u = 1
        let (bought, u) = best_response(1.0, &[(1.0, 2.0), (0.5, 0.25)]);
        assert!((u - 1.0).abs() < 1e-12);
        assert_eq!(bought[1], 0.25);
        assert!((bought[0] - 0.75).abs() < 1e-12);
        // cheap goods exhausted before the marginal condition binds
        let (bought, u) = best_response(1.0, &[(0.1, 1.0), (10.0, 1.0)]);
        assert_eq!(bought, vec![1.0, 0.0]);
        assert_eq!(u, 1.0);
    }
}
