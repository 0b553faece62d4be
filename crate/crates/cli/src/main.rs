//! Command-line front end: market generation, equilibrium solving,
//! abstraction, bound certification and the experiment grid.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use market_abstraction::abstraction::{matrix_complete, CompletionOptions};
use market_abstraction::bounds::Certifier;
use market_abstraction::experiments::{
    build_abstraction, coarseness_count, emit_reports, evaluate_abstraction, generate_valuations, load_matrix_csv,
    load_observations_csv, run_grid, solve_baseline, write_matrix_csv, DatasetSource, ExperimentConfig, LoadOptions,
    RankSpec, SyntheticSpec,
};
use market_abstraction::lift::LiftKind;
use market_abstraction::market::{verify_equilibrium, Market};
use market_abstraction::solver::{solve_eg_oracle, solve_eg_pd, solve_quasilinear, verify_quasilinear};

/// Exit status when some grid cells or bound checks failed.
const PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "market-abs", version, about = "Fisher market equilibria and market abstractions")]
struct Cli {
    /// Seed for generators, SVD and k-means.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Target duality gap of the equilibrium solver.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, or directory for `grid`. Standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment configuration (JSON). Flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic valuation matrix as CSV.
    Gen(GenArgs),
    /// Solve a market and verify the result.
    Solve(SolveArgs),
    /// Abstract a market, solve, lift, and report metrics.
    Abstract(AbstractArgs),
    /// Certify the approximation bounds for one abstraction.
    CheckBounds(AbstractArgs),
    /// Run the experiment grid from `--config` and write reports.
    Grid,
    /// Complete a sparse `i,j,value` observation file into a dense CSV.
    Complete(CompleteArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Block,
    LowRank,
    Uniform,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    buyer_blocks: usize,
    #[arg(long, default_value_t = 2)]
    item_blocks: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    low: f64,
    #[arg(long, default_value_t = 1.0)]
    high: f64,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Valuation matrix CSV; the dataset of `--config` when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Added to every value on load.
    #[arg(long)]
    shift: Option<f64>,
    /// Value that replaces zeros after the shift.
    #[arg(long)]
    zero_replacement: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pd,
    Oracle,
    Quasilinear,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "pd")]
    method: Method,
}

#[derive(Clone, Copy, ValueEnum)]
enum LiftArg {
    Proportional,
    Recursive,
    Both,
}

#[derive(Args)]
struct AbstractArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Rank of the truncated SVD, or `full`.
    #[arg(long, default_value = "full")]
    rank: String,
    /// Percent of buyers kept as representatives.
    #[arg(long, default_value_t = 100.0)]
    coarseness: f64,
    /// Percent of items kept as representatives.
    #[arg(long, default_value_t = 100.0)]
    item_coarseness: f64,
    #[arg(long, value_enum, default_value = "both")]
    lift: LiftArg,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    observations: PathBuf,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 1e-4)]
    reg: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Fit per-buyer and per-item offsets.
    #[arg(long)]
    biases: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring threads")?;
    }
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    if let Some(c) = config.as_mut() {
        if let Some(seed) = cli.seed {
            c.seed = seed;
        }
        if let Some(tol) = cli.tol {
            c.solver.target_gap = tol;
        }
    }
    match &cli.command {
        Command::Gen(args) => gen(&cli, args),
        Command::Solve(args) => solve(&cli, config.as_ref(), args),
        Command::Abstract(args) => abstract_cmd(&cli, config.as_ref(), args, false),
        Command::CheckBounds(args) => abstract_cmd(&cli, config.as_ref(), args, true),
        Command::Grid => grid(&cli, config),
        Command::Complete(args) => complete(&cli, args),
    }
}

/// Writes to `--out` if given, else standard output.
fn emit(cli: &Cli, bytes: &[u8]) -> Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn emit_json(cli: &Cli, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(cli, text.as_bytes())
}

fn gen(cli: &Cli, args: &GenArgs) -> Result<u8> {
    let (n, m) = (args.n, args.m);
    let spec = match args.kind {
        GenKind::Block => SyntheticSpec::BlockStructured {
            n,
            m,
            buyer_blocks: args.buyer_blocks,
            item_blocks: args.item_blocks,
            low: args.low,
            high: args.high,
            noise: args.noise,
        },
        GenKind::LowRank => SyntheticSpec::LowRankPlusNoise { n, m, rank: args.rank, noise: args.noise },
        GenKind::Uniform => SyntheticSpec::Uniform { n, m, low: args.low, high: args.high },
    };
    let v = generate_valuations(&spec, cli.seed.unwrap_or(0))?;
    let mut buf = Vec::new();
    write_matrix_csv(&v, &mut buf)?;
    emit(cli, &buf)?;
    Ok(0)
}

fn solver_config(cli: &Cli, config: Option<&ExperimentConfig>) -> ExperimentConfig {
    // Without a config only the default grid and solver settings are used;
    // the placeholder dataset is never loaded.
    let mut c = config.cloned().unwrap_or_else(|| ExperimentConfig::new(DatasetSource::FiveByFour { eps: 0.1 }));
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(tol) = cli.tol {
        c.solver.target_gap = tol;
    }
    c
}

fn load_input(input: &InputArgs, config: Option<&ExperimentConfig>) -> Result<Market> {
    match (&input.input, config) {
        (Some(path), _) => {
            let options = LoadOptions {
                shift: input.shift.unwrap_or(0.0),
                zero_replacement: input.zero_replacement,
                ..LoadOptions::default()
            };
            load_matrix_csv(path, &options).with_context(|| format!("loading {}", path.display()))
        }
        (None, Some(c)) => Ok(c.load_market()?),
        (None, None) => bail!("no market: pass --input or --config"),
    }
}

fn solve(cli: &Cli, config: Option<&ExperimentConfig>, args: &SolveArgs) -> Result<u8> {
    let market = load_input(&args.input, config)?;
    let c = solver_config(cli, config);
    let verify_tol = 1e-4;
    let (solution, report) = match args.method {
        Method::Pd => {
            let s = solve_eg_pd(&market, &c.solver)?;
            let r = verify_equilibrium(&market, &s, verify_tol);
            (s, r)
        }
        Method::Oracle => {
            let s = solve_eg_oracle(&market, cli.tol.unwrap_or(1e-10))?;
            let r = verify_equilibrium(&market, &s, verify_tol);
            (s, r)
        }
        Method::Quasilinear => {
            let s = solve_quasilinear(&market, &c.solver)?;
            let r = verify_quasilinear(&market, &s, verify_tol);
            (s, r)
        }
    };
    let passed = report.passed();
    emit_json(cli, &json!({ "solution": solution, "validation": report }))?;
    Ok(if passed { 0 } else { PARTIAL })
}

fn parse_rank(text: &str) -> Result<RankSpec> {
    if text == "full" {
        return Ok(RankSpec::FULL);
    }
    Ok(RankSpec::K(text.parse().with_context(|| format!("rank must be a number or `full`, got {text:?}"))?))
}

fn abstract_cmd(cli: &Cli, config: Option<&ExperimentConfig>, args: &AbstractArgs, bounds_only: bool) -> Result<u8> {
    let market = load_input(&args.input, config)?;
    let c = solver_config(cli, config);
    let (n, m) = (market.n_buyers(), market.n_items());
    let rank = parse_rank(&args.rank)?.resolve(n, m)?;
    let n_hat = coarseness_count(args.coarseness, n)?;
    let m_hat = coarseness_count(args.item_coarseness, m)?;
    let lifts = match args.lift {
        LiftArg::Proportional => vec![LiftKind::Proportional],
        LiftArg::Recursive => vec![LiftKind::Recursive],
        LiftArg::Both => vec![LiftKind::Proportional, LiftKind::Recursive],
    };
    let abs = build_abstraction(&market, rank, n_hat, m_hat, &c.grid, c.seed)?;
    let baseline = solve_baseline(&market, &c.solver)?;
    let outcome = evaluate_abstraction(&market, &abs, &lifts, &c.solver, Some(&baseline), true)?;

    let mut failures = 0;
    let mut lifted = Vec::new();
    for lift in &outcome.lifts {
        let report = lift.bounds.as_ref().expect("certified");
        failures += report.failures().count();
        let mut entry = json!({
            "lift": lift.kind,
            "bounds": report,
            "skipped_checks": lift.skipped,
        });
        if !bounds_only {
            entry["metrics"] = serde_json::to_value(&lift.metrics)?;
            entry["prices"] = serde_json::to_value(&lift.lifted.prices)?;
            entry["allocation"] = serde_json::to_value(&lift.lifted.allocation)?;
        }
        lifted.push(entry);
    }
    let mut doc = json!({
        "n": n, "m": m, "rank": rank, "n_hat": n_hat, "m_hat": m_hat,
        "bound_constant": Certifier::default().bound_scale,
        "bound_failures": failures,
        "lifts": lifted,
    });
    if !bounds_only {
        doc["buyer_assign"] = serde_json::to_value(&abs.buyer_assign)?;
        doc["item_assign"] = serde_json::to_value(&abs.item_assign)?;
        doc["representative_prices"] = serde_json::to_value(&outcome.rep_solution.prices)?;
        doc["baseline_metrics"] = serde_json::to_value(&baseline.metrics)?;
    }
    emit_json(cli, &doc)?;
    Ok(if bounds_only && failures > 0 { PARTIAL } else { 0 })
}

fn grid(cli: &Cli, config: Option<ExperimentConfig>) -> Result<u8> {
    let Some(mut config) = config else { bail!("grid needs --config") };
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("grid-out"));
    let output = run_grid(&config)?;
    let written = emit_reports(&output.rows, &out_dir, &config.formats)?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    eprintln!(
        "{} cells, {} failed; wrote {} files to {}",
        output.cells,
        output.failed_cells,
        written.len() + 1,
        out_dir.display()
    );
    Ok(if output.failed_cells > 0 { PARTIAL } else { 0 })
}

fn complete(cli: &Cli, args: &CompleteArgs) -> Result<u8> {
    let obs = load_observations_csv(&args.observations, None, None)
        .with_context(|| format!("loading {}", args.observations.display()))?;
    let opts = CompletionOptions {
        rank: args.rank,
        reg: args.reg,
        iters: args.iters,
        seed: cli.seed.unwrap_or(0),
        biases: args.biases,
    };
    let fit = matrix_complete(&obs, &opts)?;
    eprintln!(
        "train rmse {:.3e} after {} sweeps; {} cold buyers, {} cold items",
        fit.train_rmse,
        fit.sweeps,
        fit.cold_buyers.len(),
        fit.cold_items.len()
    );
    let (v, _) = fit.factors.valuations();
    let mut buf = Vec::new();
    write_matrix_csv(&v, &mut buf)?;
    emit(cli, &buf)?;
    Ok(0)
}
