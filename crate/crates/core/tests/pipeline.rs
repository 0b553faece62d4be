//! End to end through the public API: CSV in, abstraction, both lifts,
//! metrics and certificates out.

use market_abstraction::abstraction::{build_representative_market, kmeans_best_of, ValuationMode};
use market_abstraction::bounds::Certifier;
use market_abstraction::experiments::{
    generate_valuations, read_matrix_csv, write_matrix_csv, LoadOptions, SyntheticSpec,
};
use market_abstraction::lift::{proportional_lift, recursive_lift};
use market_abstraction::metrics::MetricsReport;
use market_abstraction::solver::{solve_eg_pd, SolverOptions};
use market_abstraction::EquilibriumSolution;

#[test]
fn csv_to_certified_lifts() {
    let spec = SyntheticSpec::BlockStructured {
        n: 30,
        m: 8,
        buyer_blocks: 3,
        item_blocks: 2,
        low: 0.5,
        high: 2.0,
        noise: 0.05,
    };
    let v = generate_valuations(&spec, 17).unwrap();
    let mut csv = Vec::new();
    write_matrix_csv(&v, &mut csv).unwrap();
    let market = read_matrix_csv(csv.as_slice(), &LoadOptions::default()).unwrap();
    assert_eq!((market.n_buyers(), market.n_items()), (30, 8));
    assert!((market.supplies()[0] - 30.0 / 8.0).abs() < 1e-12);

    let buyers = kmeans_best_of(market.valuations(), 3, 100, 1, 5).unwrap();
    let items = kmeans_best_of(&market.valuations().transpose(), 2, 100, 1, 5).unwrap();
    let abs = build_representative_market(&market, &buyers.assign, &items.assign, &ValuationMode::ClusterMean).unwrap();
    let opts = SolverOptions::default();
    let rep = solve_eg_pd(&abs.rep_market, &opts).unwrap();
    assert!(rep.diagnostics.converged);

    let prop = proportional_lift(&rep, &market, &abs);
    let rec = recursive_lift(&rep, &market, &abs, &opts).unwrap();
    for lifted in [&prop, &rec] {
        assert!(lifted.allocation.is_feasible(market.supplies(), 1e-9));
        let m = MetricsReport::evaluate(&market, &lifted.prices, &lifted.allocation, None).unwrap();
        // Low noise around three clean blocks: the lift is close to an equilibrium.
        assert!(m.utilities.iter().all(|&u| u > 0.0));
        assert!(m.max_regret() < 0.2, "{:?} regret {}", lifted.kind, m.max_regret());
    }
    let a = MetricsReport::evaluate(&market, &prop.prices, &prop.allocation, None).unwrap();
    let b = MetricsReport::evaluate(&market, &rec.prices, &rec.allocation, None).unwrap();
    assert!(b.max_regret() <= a.max_regret() + 1e-6);
    assert!(b.nsw.geomean >= a.nsw.geomean - 1e-6);

    let c = Certifier::default();
    let ind = c.individual(&market, &abs.v_hat, &prop.prices, &prop.allocation).unwrap();
    // The proportional pair is an equilibrium of the v_hat market.
    let hat = market.with_valuations(abs.v_hat.clone()).unwrap();
    let sol_hat = EquilibriumSolution::from_pair(&hat, prop.prices.clone(), prop.allocation.clone());
    let neg = c.negishi(&market, &abs.v_hat, &sol_hat).unwrap();
    assert!(ind.passed(), "{:?}", ind.failures().collect::<Vec<_>>());
    assert!(neg.passed(), "{:?}", neg.failures().collect::<Vec<_>>());
}
