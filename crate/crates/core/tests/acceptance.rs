//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits nonzero if any failed. Criteria run one at a time
//! so that the timed ones are measured without contention.

#![allow(clippy::type_complexity)]

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use market_abstraction::abstraction::{
    build_representative_market, matrix_complete, AbstractionMap, CompletionOptions, ObservationSet, ValuationMode,
};
use market_abstraction::bounds::{BoundReport, Certifier};
use market_abstraction::experiments::{
    emit_reports, run_grid, spearman, DatasetSource, ExperimentConfig, Format, RankSpec, SyntheticSpec,
};
use market_abstraction::instances::{five_by_four, five_by_four_abstraction, uniform_random};
use market_abstraction::lift::{proportional_lift, recursive_lift, LiftKind};
use market_abstraction::market::verify_equilibrium;
use market_abstraction::metrics::{envy, pareto_gap, MetricsReport};
use market_abstraction::solver::{
    duality_gap, quasilinear_demand, run_eg_pd, solve_eg_oracle, solve_eg_pd, solve_quasilinear, SolverOptions,
};
use market_abstraction::{Market, Matrix};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn criterion_markets() -> impl Iterator<Item = (u64, Market)> {
    (0..100u64).map(|seed| (seed, uniform_random(20, 10, 0.1, 1.0, 1.0, 2.0, 1000 + seed)))
}

fn equilibrium_correctness() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let (mut worst_gap, mut worst_rel, mut failures) = (0.0f64, 0.0f64, Vec::new());
    for (seed, market) in criterion_markets() {
        let sol = solve_eg_pd(&market, &opts).expect("solver runs");
        let oracle = solve_eg_oracle(&market, 1e-12).expect("oracle converges");
        let gap_ok = sol.diagnostics.duality_gap <= 1e-6 * market.total_budget();
        let verified = verify_equilibrium(&market, &sol, 1e-4).passed();
        let rel = sol.utilities.iter().zip(&oracle.utilities).map(|(a, b)| (a - b).abs() / b.abs()).fold(0.0, f64::max);
        worst_gap = worst_gap.max(sol.diagnostics.duality_gap);
        worst_rel = worst_rel.max(rel);
        if !(gap_ok && verified && rel <= 1e-4) {
            failures.push(seed);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "100 markets 20x10; worst gap {worst_gap:.2e} (limit 2e-5), worst utility error {worst_rel:.2e}, \
             failing seeds {failures:?}, {}",
            secs(elapsed)
        ),
    )
}

fn equilibria_are_pareto_optimal() -> Outcome {
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    for (_, market) in criterion_markets() {
        let sol = solve_eg_pd(&market, &opts).expect("solver runs");
        worst = worst.max(pareto_gap(&market, &sol.allocation).expect("LP solves"));
    }
    outcome(worst <= 1e-5, format!("largest Pareto gap over 100 equilibria {worst:.2e} (limit 1e-5)"))
}

/// Random market with some zero values and a random clustering.
fn random_abstraction_pair(seed: u64) -> (Market, AbstractionMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
    let n = rng.gen_range(6..=20);
    let m = rng.gen_range(3..=10);
    let mut v = Matrix::from_fn(n, m, |_, _| if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.1..1.0) });
    for i in 0..n {
        if v.row(i).iter().all(|&x| x == 0.0) {
            let j = rng.gen_range(0..m);
            v[(i, j)] = rng.gen_range(0.1..1.0);
        }
    }
    let budgets = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let supplies = (0..m).map(|_| rng.gen_range(0.5..2.0)).collect();
    let market = Market::new(v, budgets, supplies).unwrap();
    let n_hat = rng.gen_range(2..=5);
    let random_assign = |len: usize, k: usize, rng: &mut ChaCha8Rng| {
        let mut a: Vec<usize> = (0..len).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
        a.shuffle(rng);
        a
    };
    let buyers = random_assign(n, n_hat, &mut rng);
    let items = if rng.gen_bool(0.5) {
        (0..m).collect()
    } else {
        let m_hat = rng.gen_range(2..=m);
        random_assign(m, m_hat, &mut rng)
    };
    let abs = build_representative_market(&market, &buyers, &items, &ValuationMode::ClusterMean).unwrap();
    (market, abs)
}

fn recursion_beats_proportional() -> Outcome {
    let opts = SolverOptions::default();
    let slack = 1e-6;
    let (mut violations, mut fallbacks) = (Vec::new(), 0);
    for seed in 0..100 {
        let (market, abs) = random_abstraction_pair(seed);
        let rep = solve_eg_pd(&abs.rep_market, &opts).expect("representative solve");
        let prop = proportional_lift(&rep, &market, &abs);
        let rec = recursive_lift(&rep, &market, &abs, &opts).expect("recursive lift");
        assert_eq!(prop.prices, rec.prices);
        fallbacks += rec.fell_back();
        let a = MetricsReport::evaluate(&market, &prop.prices, &prop.allocation, None).unwrap();
        let b = MetricsReport::evaluate(&market, &rec.prices, &rec.allocation, None).unwrap();
        let checks = [
            ("pareto", b.pareto_gap.unwrap() <= a.pareto_gap.unwrap() + slack),
            ("regret", b.max_regret() <= a.max_regret() + slack),
            ("mms", b.max_mms_gap() <= a.max_mms_gap() + slack),
            ("nsw", b.nsw.geomean >= a.nsw.geomean - slack),
        ];
        for (name, ok) in checks {
            if !ok {
                violations.push(format!("seed {seed} {name}"));
            }
        }
    }
    outcome(violations.is_empty(), format!("100 pairs; violations {violations:?}; sub-solve fallbacks {fallbacks}"))
}

fn five_by_four_envy() -> Outcome {
    let market = five_by_four(0.1);
    let (buyers, items, mode) = five_by_four_abstraction();
    let abs = build_representative_market(&market, &buyers, &items, &mode).unwrap();
    let rep = solve_eg_pd(&abs.rep_market, &SolverOptions::default()).unwrap();
    let prop = proportional_lift(&rep, &market, &abs);
    let rec = recursive_lift(&rep, &market, &abs, &SolverOptions::default()).unwrap();
    let prop_envy = envy(&market, &prop.allocation).into_iter().fold(0.0, f64::max);
    let rec_envy = envy(&market, &rec.allocation);
    outcome(
        prop_envy <= 1e-6 && (rec_envy[4] - 0.1).abs() <= 1e-6,
        format!(
            "representative prices {:?}; proportional max envy {prop_envy:.2e}; recursive envy of buyer 5 {:.9}",
            rep.prices.as_slice().iter().map(|p| (p * 1e6).round() / 1e6).collect::<Vec<_>>(),
            rec_envy[4]
        ),
    )
}

fn perturbation(seed: u64) -> (Market, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
    let n = rng.gen_range(3..=8);
    let m = rng.gen_range(2..=6);
    let v = Matrix::from_fn(n, m, |_, _| rng.gen_range(0.1..1.0));
    let budgets = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let supplies = (0..m).map(|_| rng.gen_range(0.5..2.0)).collect();
    let market = Market::new(v.clone(), budgets, supplies).unwrap();
    // |delta_ij| <= 0.5 v_ij keeps every row error within half the row mass.
    let v_hat = Matrix::from_fn(n, m, |i, j| v[(i, j)] * (1.0 + rng.gen_range(-0.5..0.5)));
    (market, v_hat)
}

fn certify(c: &Certifier, market: &Market, v_hat: &Matrix) -> Vec<BoundReport> {
    let hat = market.with_valuations(v_hat.clone()).unwrap();
    let sol = solve_eg_oracle(&hat, 1e-12).unwrap();
    let star = solve_eg_oracle(market, 1e-12).unwrap();
    vec![
        c.individual(market, v_hat, &sol.prices, &sol.allocation).unwrap(),
        c.negishi(market, v_hat, &sol).unwrap(),
        c.nsw(market, v_hat, &sol, &star).unwrap(),
        c.pareto(market, v_hat, &sol.allocation).unwrap(),
    ]
}

fn bound_certification() -> Outcome {
    let honest = Certifier::default();
    let broken = Certifier { bound_scale: 0.01, ..Certifier::default() };
    let (mut worst, mut checks, mut caught) = (f64::INFINITY, 0usize, 0usize);
    for seed in 0..200 {
        let (market, v_hat) = perturbation(seed);
        for report in certify(&honest, &market, &v_hat) {
            checks += report.entries.len();
            worst = worst.min(report.worst_margin());
        }
        if certify(&broken, &market, &v_hat).iter().any(|r| !r.passed()) {
            caught += 1;
        }
    }
    outcome(
        worst >= -1e-6 && caught > 0,
        format!(
            "200 experiments, {checks} checks, smallest margin {worst:.3e}; constants x0.01 caught in {caught}/200"
        ),
    )
}

fn identity_is_lossless() -> Outcome {
    let mut config =
        ExperimentConfig::new(DatasetSource::Synthetic(SyntheticSpec::Uniform { n: 20, m: 10, low: 0.1, high: 1.0 }));
    config.seed = 3;
    config.grid.ranks = vec![RankSpec::FULL];
    config.grid.buyer_coarseness = vec![100.0];
    config.grid.item_coarseness = vec![100.0];
    let out = run_grid(&config).unwrap();
    let baseline: Vec<_> = out.rows.iter().filter(|r| r.lift == "baseline").collect();
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for lift in ["proportional", "recursive"] {
        for b in &baseline {
            let row = out.rows.iter().find(|r| r.lift == lift && r.metric == b.metric && r.stat == b.stat);
            match (row.and_then(|r| r.value), b.value) {
                (Some(x), Some(y)) => {
                    compared += 1;
                    worst = worst.max((x - y).abs());
                    if (x - y).abs() > 1e-5 {
                        mismatches.push(format!("{lift} {} {}", b.metric, b.stat));
                    }
                }
                (None, None) => {}
                _ => mismatches.push(format!("{lift} {} {} missing", b.metric, b.stat)),
            }
        }
    }
    outcome(
        mismatches.is_empty() && out.failed_cells == 0,
        format!("{compared} metric values compared, largest difference {worst:.2e}; mismatches {mismatches:?}"),
    )
}

fn quasilinear_counterexamples() -> Outcome {
    let two = |v2: f64| Market::new(Matrix::from_rows(&[[10.0], [v2]]).unwrap(), vec![0.5, 2.0], vec![1.0]).unwrap();
    let opts = SolverOptions::default();
    let before = solve_quasilinear(&two(1.0), &opts).unwrap();
    let after = solve_quasilinear(&two(2.0), &opts).unwrap();
    let x =
        |s: &market_abstraction::EquilibriumSolution| [s.allocation.shares()[(0, 0)], s.allocation.shares()[(1, 0)]];
    let (xb, xa) = (x(&before), x(&after));
    // Welfare is always measured with the original values 10 and 1.
    let (wb, wa) = (10.0 * xb[0] + xb[1], 10.0 * xa[0] + xa[1]);
    let alloc_ok = (xb[0] - 0.5).abs() <= 1e-6
        && (xb[1] - 0.5).abs() <= 1e-6
        && (xa[0] - 0.25).abs() <= 1e-6
        && (xa[1] - 0.75).abs() <= 1e-6;
    let welfare_ok = (wb - 5.5).abs() <= 1e-6 && (wa - 3.25).abs() <= 1e-6;

    let eps = 0.1;
    let truth = Market::new(Matrix::from_rows(&[[1.0], [1.0]]).unwrap(), vec![1.0, 1.0], vec![1.0]).unwrap();
    let approx = truth.with_valuations(truth.valuations().map(|v| v + eps)).unwrap();
    let posted = solve_quasilinear(&approx, &opts).unwrap();
    let price_ok = (posted.prices[0] - (1.0 + eps)).abs() <= 1e-6;
    let demand: Vec<f64> = (0..2).map(|i| quasilinear_demand(&truth, i, &posted.prices).bundle[0]).collect();
    let demand_ok = demand.iter().all(|&d| d == 0.0);
    outcome(
        alloc_ok && welfare_ok && price_ok && demand_ok,
        format!(
            "allocations {xb:.7?} -> {xa:.7?}, welfare {wb:.7} -> {wa:.7}; posted price {:.7}, true demand {demand:?}",
            posted.prices[0]
        ),
    )
}

fn matrix_completion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = Matrix::from_fn(100, 5, |_, _| rng.gen::<f64>());
    let b = Matrix::from_fn(50, 5, |_, _| rng.gen::<f64>());
    let v = Matrix::from_fn(100, 50, |i, j| a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum());
    let mut observed = vec![false; 100 * 50];
    let mut cells: Vec<usize> = (0..observed.len()).collect();
    cells.shuffle(&mut rng);
    cells[..observed.len() / 2].iter().for_each(|&k| observed[k] = true);
    let entries = (0..100 * 50).filter(|&k| observed[k]).map(|k| (k / 50, k % 50, v.as_slice()[k])).collect();
    let obs = ObservationSet::new(100, 50, entries).unwrap();
    let opts = CompletionOptions { rank: 5, reg: 1e-6, iters: 500, seed: 1, biases: false };
    let fit = matrix_complete(&obs, &opts).unwrap();
    let recon = fit.factors.reconstruct();
    let (mut err, mut norm) = (0.0, 0.0);
    for k in (0..100 * 50).filter(|&k| !observed[k]) {
        err += (recon.as_slice()[k] - v.as_slice()[k]).powi(2);
        norm += v.as_slice()[k].powi(2);
    }
    let held_out = (err / norm).sqrt();
    let full = matrix_complete(&ObservationSet::full(&v), &CompletionOptions { reg: 0.0, ..opts }).unwrap();
    let elapsed = start.elapsed();
    outcome(
        held_out <= 0.05 && full.train_rmse <= 1e-5 && elapsed < Duration::from_secs(30),
        format!(
            "held-out relative error {held_out:.2e} (limit 0.05); fully observed RMSE {:.2e} (limit 1e-5); {}",
            full.train_rmse,
            secs(elapsed)
        ),
    )
}

fn convergence_trend() -> Outcome {
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let market = uniform_random(20, 10, 0.1, 1.0, 1.0, 2.0, 500 + seed);
        let gap_at = |t| duality_gap(&market, &run_eg_pd(&market, &SolverOptions::fixed_iterations(t)).unwrap().state);
        ratios.push(gap_at(4000) / gap_at(2000));
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    outcome(worst <= 0.75, format!("gap(4000)/gap(2000) on 10 markets, largest {worst:.3} (limit 0.75)"))
}

fn grid_at_scale() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec::BlockStructured {
        n: 720,
        m: 100,
        buyer_blocks: 12,
        item_blocks: 5,
        low: 0.5,
        high: 2.0,
        noise: 0.1,
    };
    let mut config = ExperimentConfig::new(DatasetSource::Synthetic(spec));
    config.grid.buyer_coarseness = vec![50.0, 20.0, 10.0, 5.0];
    config.grid.lifts = vec![LiftKind::Proportional, LiftKind::Recursive];
    config.solver.target_gap = 1e-6;
    let out = run_grid(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_reports(&out.rows, dir.path(), &[Format::Csv, Format::Json, Format::Svg]).unwrap();
    let elapsed = start.elapsed();
    let chart = dir.path().join("nsw_ratio_value.svg").exists();
    let mut trends = Vec::new();
    for lift in ["proportional", "recursive"] {
        let (pct, nsw): (Vec<f64>, Vec<f64>) = out
            .rows
            .iter()
            .filter(|r| r.lift == lift && r.metric == "nsw_ratio")
            .map(|r| (r.buyer_coarseness, r.value.unwrap_or(f64::NAN)))
            .unzip();
        trends.push((lift, spearman(&pct, &nsw), nsw));
    }
    // Rank correlation of NSW ratio with coarseness >= 0 means the ratio
    // does not rise as the abstraction gets coarser.
    let trend_ok = trends.iter().all(|(_, rho, _)| rho.is_some_and(|r| r >= 0.0));
    outcome(
        out.failed_cells == 0 && chart && trend_ok && elapsed < Duration::from_secs(300),
        format!(
            "{} cells, {} failed, {} files; spearman(coarseness, nsw ratio) {}; {}",
            out.cells,
            out.failed_cells,
            files.len(),
            trends
                .iter()
                .map(|(l, r, v)| format!("{l} {:.2} {:.4?}", r.unwrap_or(f64::NAN), v))
                .collect::<Vec<_>>()
                .join(", "),
            secs(elapsed)
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("equilibrium correctness", equilibrium_correctness),
        ("Pareto optimality of equilibria", equilibria_are_pareto_optimal),
        ("recursive lift dominates proportional", recursion_beats_proportional),
        ("five-by-four envy regression", five_by_four_envy),
        ("bound certification", bound_certification),
        ("identity abstraction is lossless", identity_is_lossless),
        ("quasi-linear regressions", quasilinear_counterexamples),
        ("matrix completion", matrix_completion),
        ("convergence trend", convergence_trend),
        ("grid at 720x100", grid_at_scale),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || label.ends_with(f.as_str())) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!("{label} {}: {name}: {}", if result.passed { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
