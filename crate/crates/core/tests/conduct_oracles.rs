use nalgebra::DVector;
use rand::Rng;

use cvgmm_core::conduct::{enumerate_partitions, solve_equilibrium_prices, MarketPrimitives, Partition};
use cvgmm_core::rng::stream_rng;

fn monopoly_share(delta0: f64, alpha: f64, p: f64) -> f64 {
    let e = (delta0 + alpha * p).exp();
    e / (1.0 + e)
}

/// Scalar bisection on `p − mc − 1/(−α(1 − s(p))) = 0`.
fn bisect_monopoly(delta0: f64, mc: f64, alpha: f64) -> f64 {
    let g = |p: f64| p - mc - 1.0 / (-alpha * (1.0 - monopoly_share(delta0, alpha, p)));
    let (mut lo, mut hi) = (mc, mc + 1.0);
    while g(hi) < 0.0 {
        hi = mc + 2.0 * (hi - mc);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn monopoly_price_matches_bisection() {
    let mut rng = stream_rng(31, 0);
    for _ in 0..50 {
        let (delta0, mc, alpha) = (
            rng.random_range(-2.0..4.0),
            rng.random_range(0.1..5.0),
            rng.random_range(-3.0..-0.05),
        );
        let m = MarketPrimitives {
            base_utility: DVector::from_element(1, delta0),
            marginal_cost: DVector::from_element(1, mc),
            alpha,
            market_size: 1.0,
        };
        let eq = solve_equilibrium_prices(&Partition::collusive(1), &m).unwrap();
        let oracle = bisect_monopoly(delta0, mc, alpha);
        assert!((eq.prices[0] - oracle).abs() < 1e-8, "{} vs {oracle}", eq.prices[0]);
    }
}

#[test]
fn collusive_duopoly_prices_are_weakly_higher() {
    let mut rng = stream_rng(31, 1);
    for _ in 0..100 {
        let u = rng.random_range(-1.0..3.0);
        let c = rng.random_range(0.5..3.0);
        let m = MarketPrimitives {
            base_utility: DVector::from_element(2, u),
            marginal_cost: DVector::from_element(2, c),
            alpha: rng.random_range(-2.0..-0.05),
            market_size: 1.0,
        };
        let coll = solve_equilibrium_prices(&Partition::collusive(2), &m).unwrap();
        let comp = solve_equilibrium_prices(&Partition::competitive(2), &m).unwrap();
        assert!(coll.prices.iter().zip(comp.prices.iter()).all(|(a, b)| a >= b));
    }
}

#[test]
fn conduct_is_invisible_when_shares_vanish() {
    let m = MarketPrimitives {
        base_utility: DVector::from_vec(vec![2.0, 1.5, 2.5]),
        marginal_cost: DVector::from_vec(vec![3.0, 2.8, 3.1]),
        alpha: -50.0,
        market_size: 1.0,
    };
    let prices: Vec<DVector<f64>> = enumerate_partitions(3)
        .unwrap()
        .iter()
        .map(|p| solve_equilibrium_prices(p, &m).unwrap().prices)
        .collect();
    for p in &prices[1..] {
        assert!((p - &prices[0]).amax() < 1e-4);
    }
}

#[test]
fn four_firms_have_fifteen_conducts() {
    assert_eq!(enumerate_partitions(4).unwrap().len(), 15);
}
