//! Experiment configuration, dataset loading, the abstraction grid and its
//! reports.

pub mod grid;
pub mod io;
pub mod report;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::abstraction::{matrix_complete, CompletionOptions};
use crate::error::{Error, Result};
use crate::lift::LiftKind;
use crate::market::Market;
use crate::matrix::Matrix;
use crate::solver::SolverOptions;

pub use grid::{
    build_abstraction, evaluate_abstraction, run_grid, select, solve_baseline, AbstractionOutcome, Baseline, CellSpec,
    GridOutput, LiftOutcome, ReportRow,
};
pub use io::{
    densest_submatrix, load_matrix_csv, load_observations_csv, read_matrix_csv, write_matrix_csv, LoadOptions,
};
pub use report::{emit_reports, spearman, Format};
pub use synthetic::{generate_synthetic, generate_valuations, SyntheticSpec};

/// Where the valuation matrix comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        options: LoadOptions,
    },
    Synthetic(SyntheticSpec),
    /// Sparse `i,j,value` observations: complete at the given rank, then
    /// keep the densest `rows x cols` block of the reconstruction.
    Completion {
        path: PathBuf,
        #[serde(default)]
        completion: CompletionOptions,
        rows: usize,
        cols: usize,
        #[serde(default)]
        shift: f64,
    },
    /// The five-buyer, four-item example market.
    FiveByFour {
        eps: f64,
    },
}

impl DatasetSource {
    /// Short name used in report rows.
    pub fn id(&self) -> String {
        match self {
            DatasetSource::Csv { path, .. } | DatasetSource::Completion { path, .. } => {
                path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
            }
            DatasetSource::Synthetic(spec) => {
                let (n, m) = spec.shape();
                let kind = match spec {
                    SyntheticSpec::BlockStructured { .. } => "block",
                    SyntheticSpec::LowRankPlusNoise { .. } => "lowrank",
                    SyntheticSpec::Uniform { .. } => "uniform",
                };
                format!("{kind}_{n}x{m}")
            }
            DatasetSource::FiveByFour { .. } => "five_by_four".to_string(),
        }
    }
}

/// Rank of the low-rank step: a number, or `"full"` for no truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankSpec {
    K(usize),
    Full(FullRank),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FullRank {
    #[serde(rename = "full")]
    Full,
}

impl RankSpec {
    pub const FULL: RankSpec = RankSpec::Full(FullRank::Full);

    pub fn resolve(self, n: usize, m: usize) -> Result<usize> {
        let max = n.min(m);
        match self {
            RankSpec::Full(_) => Ok(max),
            RankSpec::K(k) if k >= 1 && k <= max => Ok(k),
            RankSpec::K(k) => Err(Error::RankOutOfRange { rank: k, max }),
        }
    }
}

/// A clustering given outright instead of computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedAbstraction {
    pub buyer_assign: Vec<usize>,
    pub item_assign: Vec<usize>,
    /// Representative values; cluster means when absent.
    #[serde(default)]
    pub rep_valuations: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub ranks: Vec<RankSpec>,
    /// Percent of buyers kept as representatives, each in `(0, 100]`.
    pub buyer_coarseness: Vec<f64>,
    pub item_coarseness: Vec<f64>,
    pub lifts: Vec<LiftKind>,
    pub kmeans_iters: usize,
    pub kmeans_restarts: usize,
    /// Cluster unit-length rows instead of raw ones.
    pub normalize_rows: bool,
    /// Replaces the rank and coarseness axes with one given clustering.
    pub abstraction: Option<FixedAbstraction>,
    /// Run the bound certificates on every cell.
    pub certify: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            ranks: vec![RankSpec::FULL],
            buyer_coarseness: vec![100.0, 50.0, 20.0, 10.0],
            item_coarseness: vec![100.0],
            lifts: vec![LiftKind::Proportional, LiftKind::Recursive],
            kmeans_iters: 100,
            kmeans_restarts: 5,
            normalize_rows: false,
            abstraction: None,
            certify: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Overrides every buyer's budget.
    #[serde(default)]
    pub budget: Option<f64>,
    /// Overrides every item's supply.
    #[serde(default)]
    pub supply: Option<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Off by default so that reports are byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        ExperimentConfig {
            dataset,
            budget: None,
            supply: None,
            grid: GridSpec::default(),
            solver: SolverOptions::default(),
            seed: 0,
            out_dir: None,
            formats: default_formats(),
            record_wall_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        for &pct in g.buyer_coarseness.iter().chain(&g.item_coarseness) {
            if !(pct > 0.0 && pct <= 100.0) {
                return Err(Error::InvalidConfig(format!("coarseness {pct} is outside (0, 100]")));
            }
        }
        if g.abstraction.is_none()
            && (g.ranks.is_empty() || g.buyer_coarseness.is_empty() || g.item_coarseness.is_empty())
        {
            return Err(Error::InvalidConfig("grid axes must be nonempty".into()));
        }
        if g.lifts.is_empty() {
            return Err(Error::InvalidConfig("at least one lift kind is required".into()));
        }
        for b in [self.budget, self.supply].into_iter().flatten() {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidConfig(format!("budget and supply overrides must be positive, got {b}")));
            }
        }
        Ok(())
    }

    /// Loads the dataset and applies the budget and supply overrides.
    pub fn load_market(&self) -> Result<Market> {
        let market = load_dataset(&self.dataset, self.seed)?;
        let (n, m) = (market.n_buyers(), market.n_items());
        let budgets = self.budget.map_or_else(|| market.budgets().to_vec(), |b| vec![b; n]);
        let supplies = self.supply.map_or_else(|| market.supplies().to_vec(), |s| vec![s; m]);
        Market::new(market.valuations().clone(), budgets, supplies)
    }
}

pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<Market> {
    match source {
        DatasetSource::Csv { path, options } => load_matrix_csv(path, options),
        DatasetSource::Synthetic(spec) => generate_synthetic(spec, seed),
        DatasetSource::Completion { path, completion, rows, cols, shift } => {
            let obs = load_observations_csv(path, None, None)?;
            let (keep_rows, keep_cols) = densest_submatrix(&obs, *rows, *cols);
            let fit = matrix_complete(&obs, completion)?;
            let (v, _) = fit.factors.valuations();
            let v = v.submatrix(&keep_rows, &keep_cols).map(|x| (x + shift).max(0.0));
            let (n, m) = v.shape();
            Market::new(v, vec![1.0; n], vec![n as f64 / m as f64; m])
        }
        DatasetSource::FiveByFour { eps } => Ok(crate::instances::five_by_four(*eps)),
    }
}

/// Number of representatives for a coarseness percentage:
/// `ceil(pct * len / 100)`, at least 1.
pub fn coarseness_count(pct: f64, len: usize) -> Result<usize> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidConfig(format!("coarseness {pct} is outside (0, 100]")));
    }
    // Guard against products like 40 * 7200 / 100 landing just above an integer.
    let raw = pct * len as f64 / 100.0;
    let count = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    Ok(count.clamp(1, len))
}
