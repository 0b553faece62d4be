//! The abstraction grid: for every rank and coarseness, build the
//! abstraction, solve it, lift it, and score the lifted solution against
//! the full-market equilibrium.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coarseness_count, ExperimentConfig, GridSpec};
use crate::abstraction::{
    build_representative_market, kmeans_best_of, normalize_rows, svd_low_rank, AbstractionMap, ValuationMode,
};
use crate::bounds::{BoundReport, Certifier};
use crate::error::Result;
use crate::lift::{proportional_lift, recursive_lift, LiftKind, LiftedSolution};
use crate::market::{EquilibriumSolution, Market};
use crate::matrix::Matrix;
use crate::metrics::{normalize, MetricsReport, LP_SIZE_LIMIT};
use crate::solver::{solve_eg_pd, SolverOptions};

/// One line of a report: a single statistic of one metric in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    /// 0 for the full-market baseline, grid cells from 1.
    pub cell: usize,
    pub rank: usize,
    pub buyer_coarseness: f64,
    pub item_coarseness: f64,
    pub n_hat: usize,
    pub m_hat: usize,
    /// `baseline`, `proportional` or `recursive`.
    pub lift: String,
    pub metric: String,
    /// `max`, `mean`, `min`, `value` or `count`.
    pub stat: String,
    /// Empty when undefined.
    pub value: Option<f64>,
    /// What the metric is divided by, `none` for raw values.
    pub normalization: String,
    /// The divisor, when it is a single number.
    pub denominator: Option<f64>,
    pub wall_ms: Option<u64>,
    /// `ok`, or `failed: <reason>` on a cell's single failure row.
    pub status: String,
}

/// Full-market equilibrium and its metrics, the reference for ratios.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub solution: EquilibriumSolution,
    pub metrics: MetricsReport,
    pub welfare: f64,
}

pub fn solve_baseline(market: &Market, solver: &SolverOptions) -> Result<Baseline> {
    let solution = solve_eg_pd(market, solver)?;
    let metrics = MetricsReport::evaluate(market, &solution.prices, &solution.allocation, None)?;
    let welfare = metrics.utilities.iter().sum();
    Ok(Baseline { solution, metrics, welfare })
}

/// Coordinates of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    pub rank: usize,
    pub buyer_coarseness: f64,
    pub item_coarseness: f64,
}

#[derive(Clone, Debug)]
pub struct LiftOutcome {
    pub kind: LiftKind,
    pub lifted: LiftedSolution,
    pub metrics: MetricsReport,
    pub bounds: Option<BoundReport>,
    /// Certificates that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AbstractionOutcome {
    pub rep_solution: EquilibriumSolution,
    pub lifts: Vec<LiftOutcome>,
}

/// Rank truncation followed by k-means on buyers and items. Full rank
/// keeps `V` itself and full coarseness keeps singleton clusters, so the
/// corner cell is the identity abstraction.
pub fn build_abstraction(
    market: &Market,
    rank: usize,
    n_hat: usize,
    m_hat: usize,
    grid: &GridSpec,
    seed: u64,
) -> Result<AbstractionMap> {
    let v = market.valuations();
    let (n, m) = v.shape();
    let (features, mode) = if rank >= n.min(m) {
        (v.clone(), ValuationMode::ClusterMean)
    } else {
        let factors = svd_low_rank(v, rank, seed)?;
        // Cluster means of factor products are products of factor means,
        // so this mode averages the truncated matrix over each block.
        (factors.reconstruct(), ValuationMode::FactorDot(factors))
    };
    let cluster = |points: &Matrix, k: usize| -> Result<Vec<usize>> {
        if k == points.rows() {
            return Ok((0..k).collect());
        }
        let points = if grid.normalize_rows { normalize_rows(points) } else { points.clone() };
        Ok(kmeans_best_of(&points, k, grid.kmeans_iters, seed, grid.kmeans_restarts)?.assign)
    };
    let buyer_assign = cluster(&features, n_hat)?;
    let item_assign = cluster(&features.transpose(), m_hat)?;
    build_representative_market(market, &buyer_assign, &item_assign, &mode)
}

/// Solves the representative market, lifts it each requested way, and
/// scores the results. Certificates need the full-market solution, which
/// `baseline` supplies.
pub fn evaluate_abstraction(
    market: &Market,
    abs: &AbstractionMap,
    lifts: &[LiftKind],
    solver: &SolverOptions,
    baseline: Option<&Baseline>,
    certify: bool,
) -> Result<AbstractionOutcome> {
    let rep_solution = solve_eg_pd(&abs.rep_market, solver)?;
    let proportional = proportional_lift(&rep_solution, market, abs);
    let certifier = Certifier::default();

    // Checks about the abstract equilibrium itself are shared by every lift.
    let mut shared = Vec::new();
    let mut shared_skipped = Vec::new();
    if certify {
        let hat = Market::from_parts(abs.v_hat.clone(), market.budgets().to_vec(), market.supplies().to_vec())?;
        let sol_hat =
            EquilibriumSolution::from_pair(&hat, proportional.prices.clone(), proportional.allocation.clone());
        match certifier.negishi(market, &abs.v_hat, &sol_hat) {
            Ok(r) => shared.extend(r.entries),
            Err(e) => shared_skipped.push(format!("negishi: {e}")),
        }
        match baseline {
            Some(b) => match certifier.nsw(market, &abs.v_hat, &sol_hat, &b.solution) {
                Ok(r) => shared.extend(r.entries),
                Err(e) => shared_skipped.push(format!("nsw: {e}")),
            },
            None => shared_skipped.push("nsw: no full-market solution".into()),
        }
    }

    let mut outcomes = Vec::with_capacity(lifts.len());
    for &kind in lifts {
        let lifted = match kind {
            LiftKind::Proportional => proportional.clone(),
            LiftKind::Recursive => recursive_lift(&rep_solution, market, abs, solver)?,
        };
        let metrics = MetricsReport::evaluate(market, &lifted.prices, &lifted.allocation, None)?;
        let (bounds, skipped) = if certify {
            let mut report = certifier.individual(market, &abs.v_hat, &lifted.prices, &lifted.allocation)?;
            let mut skipped = shared_skipped.clone();
            match certifier.pareto(market, &abs.v_hat, &lifted.allocation) {
                Ok(r) => report.entries.extend(r.entries),
                Err(e) => skipped.push(format!("pareto: {e}")),
            }
            report.entries.extend(shared.iter().cloned());
            (Some(report), skipped)
        } else {
            (None, Vec::new())
        };
        outcomes.push(LiftOutcome { kind, lifted, metrics, bounds, skipped });
    }
    Ok(AbstractionOutcome { rep_solution, lifts: outcomes })
}

/// Rows plus the number of cells that failed.
#[derive(Clone, Debug)]
pub struct GridOutput {
    pub rows: Vec<ReportRow>,
    pub cells: usize,
    pub failed_cells: usize,
}

/// Runs every cell of the grid. Cells run in parallel and are independent;
/// rows come out in cell order whatever the thread count. A failing cell
/// contributes one failure row and does not stop the run. Failure to load
/// the market or solve the full market is fatal.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridOutput> {
    config.validate()?;
    let market = config.load_market()?;
    let (n, m) = (market.n_buyers(), market.n_items());
    let dataset = config.dataset.id();
    let grid = &config.grid;
    let baseline = solve_baseline(&market, &config.solver)?;

    let mut cells = Vec::new();
    let fixed_counts = match &grid.abstraction {
        Some(fixed) => {
            let n_hat = fixed.buyer_assign.iter().max().map_or(0, |c| c + 1);
            let m_hat = fixed.item_assign.iter().max().map_or(0, |c| c + 1);
            cells.push(CellSpec {
                index: 1,
                rank: n.min(m),
                buyer_coarseness: 100.0 * n_hat as f64 / n as f64,
                item_coarseness: 100.0 * m_hat as f64 / m as f64,
            });
            Some((n_hat, m_hat))
        }
        None => {
            for &rank in &grid.ranks {
                let rank = rank.resolve(n, m)?;
                for &bc in &grid.buyer_coarseness {
                    for &ic in &grid.item_coarseness {
                        cells.push(CellSpec {
                            index: cells.len() + 1,
                            rank,
                            buyer_coarseness: bc,
                            item_coarseness: ic,
                        });
                    }
                }
            }
            None
        }
    };

    let template = ReportRow {
        dataset,
        cell: 0,
        rank: n.min(m),
        buyer_coarseness: 100.0,
        item_coarseness: 100.0,
        n_hat: n,
        m_hat: m,
        lift: "baseline".into(),
        metric: String::new(),
        stat: String::new(),
        value: None,
        normalization: String::new(),
        denominator: None,
        wall_ms: None,
        status: "ok".into(),
    };
    let mut rows = metric_rows(&template, &baseline.metrics, &baseline, None, &[], None);

    let results: Vec<(CellSpec, usize, usize, Result<AbstractionOutcome>, u64)> = cells
        .into_par_iter()
        .map(|cell| {
            let start = Instant::now();
            let counts = match fixed_counts {
                Some(c) => Ok(c),
                None => coarseness_count(cell.buyer_coarseness, n)
                    .and_then(|a| coarseness_count(cell.item_coarseness, m).map(|b| (a, b))),
            };
            let (n_hat, m_hat) = *counts.as_ref().unwrap_or(&(0, 0));
            let outcome = counts.and_then(|(n_hat, m_hat)| {
                let abs = match &grid.abstraction {
                    Some(fixed) => {
                        let mode = match &fixed.rep_valuations {
                            Some(v) => ValuationMode::Explicit(v.clone()),
                            None => ValuationMode::ClusterMean,
                        };
                        build_representative_market(&market, &fixed.buyer_assign, &fixed.item_assign, &mode)?
                    }
                    None => build_abstraction(&market, cell.rank, n_hat, m_hat, grid, config.seed)?,
                };
                evaluate_abstraction(&market, &abs, &grid.lifts, &config.solver, Some(&baseline), grid.certify)
            });
            let ms = start.elapsed().as_millis() as u64;
            (cell, n_hat, m_hat, outcome, ms)
        })
        .collect();

    let total = results.len();
    let mut failed = 0;
    for (cell, n_hat, m_hat, outcome, ms) in results {
        let mut base = ReportRow {
            cell: cell.index,
            rank: cell.rank,
            buyer_coarseness: cell.buyer_coarseness,
            item_coarseness: cell.item_coarseness,
            n_hat,
            m_hat,
            wall_ms: config.record_wall_time.then_some(ms),
            ..template.clone()
        };
        match outcome {
            Ok(out) => {
                for lift in &out.lifts {
                    base.lift = lift_name(lift.kind).into();
                    let extra = Some((&out.rep_solution, &lift.lifted));
                    rows.extend(metric_rows(
                        &base,
                        &lift.metrics,
                        &baseline,
                        lift.bounds.as_ref(),
                        &lift.skipped,
                        extra,
                    ));
                }
            }
            Err(e) => {
                failed += 1;
                base.lift = "none".into();
                base.metric = "cell".into();
                base.stat = "value".into();
                base.normalization = "none".into();
                base.status = format!("failed: {e}");
                rows.push(base);
            }
        }
    }
    Ok(GridOutput { rows, cells: total, failed_cells: failed })
}

pub fn lift_name(kind: LiftKind) -> &'static str {
    match kind {
        LiftKind::Proportional => "proportional",
        LiftKind::Recursive => "recursive",
    }
}

fn defined(xs: &[Option<f64>]) -> impl Iterator<Item = f64> + '_ {
    xs.iter().flatten().copied()
}

fn max_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    xs.reduce(f64::max)
}

fn min_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    xs.reduce(f64::min)
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn metric_rows(
    base: &ReportRow,
    metrics: &MetricsReport,
    baseline: &Baseline,
    bounds: Option<&BoundReport>,
    skipped: &[String],
    solved: Option<(&EquilibriumSolution, &LiftedSolution)>,
) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, stat: &str, value: Option<f64>, normalization: &str, denominator: Option<f64>| {
        rows.push(ReportRow {
            metric: metric.into(),
            stat: stat.into(),
            value,
            normalization: normalization.into(),
            denominator,
            ..base.clone()
        });
    };
    let welfare: f64 = metrics.utilities.iter().sum();
    push("regret", "max", max_of(defined(&metrics.regret_norm)), "optimal_demand_value", None);
    push("regret", "mean", mean_of(defined(&metrics.regret_norm)), "optimal_demand_value", None);
    push("envy", "max", max_of(defined(&metrics.envy_norm)), "envied_bundle_value", None);
    push("envy", "mean", mean_of(defined(&metrics.envy_norm)), "envied_bundle_value", None);
    push("mms_frac", "min", min_of(metrics.mms_frac.iter().copied()), "maximin_share", None);
    push("mms_frac", "mean", mean_of(metrics.mms_frac.iter().copied()), "maximin_share", None);
    let base_nsw = baseline.metrics.nsw.geomean;
    push("nsw_ratio", "value", normalize(metrics.nsw.geomean, base_nsw), "baseline_nsw", Some(base_nsw));
    push("efficiency_ratio", "value", normalize(welfare, baseline.welfare), "baseline_welfare", Some(baseline.welfare));
    match metrics.pareto_gap {
        Some(gap) => {
            let den = welfare + gap;
            push("pareto_gap", "value", normalize(gap, den), "pareto_optimal_welfare", Some(den));
        }
        None => push("pareto_gap", "value", None, &format!("skipped_above_{LP_SIZE_LIMIT}_cells"), None),
    }
    push("regret_raw", "max", Some(metrics.max_regret()), "none", None);
    push("envy_raw", "max", Some(metrics.max_envy()), "none", None);
    push("mms_gap_raw", "max", Some(metrics.max_mms_gap()), "none", None);
    if let Some(report) = bounds {
        let worst = report.entries.iter().map(|e| e.margin).reduce(f64::min);
        push("bound_margin", "min", worst, "none", None);
        push("bound_checks", "count", Some(report.entries.len() as f64), "none", None);
        push("bound_failures", "count", Some(report.failures().count() as f64), "none", None);
    }
    if !skipped.is_empty() || bounds.is_some() {
        let names: Vec<&str> = skipped.iter().map(|s| s.split(':').next().unwrap_or("")).collect();
        let label = if names.is_empty() { "none".to_string() } else { names.join("+") };
        push("bound_skipped", "count", Some(skipped.len() as f64), &label, None);
    }
    if let Some((rep, lifted)) = solved {
        push("rep_duality_gap", "value", Some(rep.diagnostics.duality_gap), "none", None);
        if lifted.kind == LiftKind::Recursive {
            push("sub_solve_fallbacks", "count", Some(lifted.fell_back() as f64), "none", None);
        }
    }
    rows
}

/// Rows of one metric and statistic, in row order.
pub fn select<'a>(rows: &'a [ReportRow], metric: &'a str, stat: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
    rows.iter().filter(move |r| r.metric == metric && r.stat == stat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{DatasetSource, FixedAbstraction, RankSpec, SyntheticSpec};
    use crate::instances::five_by_four_abstraction;

    fn value(rows: &[ReportRow], lift: &str, metric: &str, stat: &str) -> Vec<Option<f64>> {
        select(rows, metric, stat).filter(|r| r.lift == lift).map(|r| r.value).collect()
    }

    #[test]
    fn identity_cell_matches_the_baseline() {
        let mut config =
            ExperimentConfig::new(DatasetSource::Synthetic(SyntheticSpec::Uniform { n: 8, m: 4, low: 0.1, high: 1.0 }));
        config.grid.ranks = vec![RankSpec::FULL];
        config.grid.buyer_coarseness = vec![100.0];
        let out = run_grid(&config).unwrap();
        assert_eq!(out.failed_cells, 0);
        for lift in ["proportional", "recursive"] {
            for (metric, stat) in [("nsw_ratio", "value"), ("efficiency_ratio", "value")] {
                let v = value(&out.rows, lift, metric, stat)[0].unwrap();
                assert!((v - 1.0).abs() < 1e-9, "{lift} {metric} {v}");
            }
            for (metric, stat) in [("regret", "max"), ("envy", "max"), ("mms_frac", "min"), ("pareto_gap", "value")] {
                let got = value(&out.rows, lift, metric, stat)[0].unwrap();
                let want = value(&out.rows, "baseline", metric, stat)[0].unwrap();
                assert!((got - want).abs() < 1e-9, "{lift} {metric}");
            }
            assert_eq!(value(&out.rows, lift, "bound_failures", "count"), vec![Some(0.0)]);
        }
    }

    #[test]
    fn five_by_four_with_its_stated_abstraction() {
        let (buyer_assign, item_assign, mode) = five_by_four_abstraction();
        let ValuationMode::Explicit(rep) = mode else { unreachable!() };
        let mut config = ExperimentConfig::new(DatasetSource::FiveByFour { eps: 0.1 });
        config.grid.abstraction = Some(FixedAbstraction { buyer_assign, item_assign, rep_valuations: Some(rep) });
        let out = run_grid(&config).unwrap();
        assert_eq!(out.failed_cells, 0);
        assert_eq!(value(&out.rows, "proportional", "envy_raw", "max")[0], Some(0.0));
        let recursive = value(&out.rows, "recursive", "envy_raw", "max")[0].unwrap();
        assert!((recursive - 0.1).abs() < 1e-6, "{recursive}");
    }

    #[test]
    fn exact_blocks_have_no_gaps() {
        let mut config = ExperimentConfig::new(DatasetSource::Synthetic(SyntheticSpec::BlockStructured {
            n: 12,
            m: 6,
            buyer_blocks: 3,
            item_blocks: 2,
            low: 0.5,
            high: 2.0,
            noise: 0.0,
        }));
        config.grid.buyer_coarseness = vec![25.0];
        config.grid.item_coarseness = vec![100.0, 2.0 / 6.0 * 100.0];
        let out = run_grid(&config).unwrap();
        assert_eq!(out.failed_cells, 0);
        for lift in ["proportional", "recursive"] {
            for (metric, stat) in [("regret", "max"), ("envy", "max"), ("pareto_gap", "value")] {
                for v in value(&out.rows, lift, metric, stat) {
                    assert!(v.unwrap() < 1e-5, "{lift} {metric} {v:?}");
                }
            }
            for v in value(&out.rows, lift, "nsw_ratio", "value") {
                assert!((v.unwrap() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn failing_cells_are_isolated() {
        let mut config =
            ExperimentConfig::new(DatasetSource::Synthetic(SyntheticSpec::Uniform { n: 6, m: 3, low: 0.1, high: 1.0 }));
        config.grid.ranks = vec![RankSpec::K(2), RankSpec::FULL];
        config.grid.buyer_coarseness = vec![50.0];
        config.grid.lifts = vec![LiftKind::Proportional];
        let good = run_grid(&config).unwrap();
        // A bad fixed clustering on its own fails only its cell.
        let mut bad = config.clone();
        bad.grid.abstraction = Some(FixedAbstraction {
            buyer_assign: vec![0, 2, 0, 2, 0, 2],
            item_assign: vec![0, 1, 2],
            rep_valuations: None,
        });
        let out = run_grid(&bad).unwrap();
        assert_eq!((out.cells, out.failed_cells), (1, 1));
        assert!(out.rows.last().unwrap().status.starts_with("failed"));
        assert_eq!(good.failed_cells, 0);
        let cells: Vec<usize> = good.rows.iter().map(|r| r.cell).collect();
        assert!(cells.windows(2).all(|w| w[0] <= w[1]));
    }
}
