//! `geounet` command line.
//!
//! Settings resolve in three layers: built-in defaults, then the `--config`
//! JSON file, then explicit flags. With `--out` every command also writes
//! its artifacts plus a `config.json` echo of the resolved settings.
//!
//! Exit codes: 0 success, 1 failed property or runtime error, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geounet::chains::{run_table, table_grid, ExperimentConfig};
use geounet::gwl::{demonstrate_increase, empirical_maintains, EmpiricalReport, IncreaseReport};
use geounet::pool::PoolKind;
use geounet::props::equivariance_suite;
use geounet::protein::{build_residue_graph, coarsen_hierarchy, read_ca_structure, DEFAULT_COARSEN_RATIO, RESIDUE_KNN_K};
use geounet::synthetic::{run_synthetic, SyntheticConfig};
use geounet::GeoError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "geounet", version, about = "Geometric graph U-Net experiments")]
struct Cli {
    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// JSON file with settings for the chosen subcommand.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train discriminators on the k-chain pair over the full grid.
    Chains(ChainsArgs),
    /// Check invariance and equivariance of every block under random motions.
    Equivariance(EquivarianceArgs),
    /// Pooling census on random pairs plus the k-chain pooling demonstration.
    Expressivity(ExpressivityArgs),
    /// Read CA atoms from a structure file and export a coarsening hierarchy.
    Coarsen(CoarsenArgs),
    /// U-Net versus flat baseline on the synthetic motif dataset.
    TrainSynthetic(SyntheticArgs),
}

#[derive(Args)]
struct ChainsArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EquivarianceArgs {
    /// Random motions per group.
    #[arg(long)]
    motions: Option<usize>,
}

#[derive(Args)]
struct ExpressivityArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// point or sparse.
    #[arg(long)]
    pool: Option<PoolKind>,
}

#[derive(Args)]
struct CoarsenArgs {
    file: PathBuf,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    pool: Option<PoolKind>,
    #[arg(long)]
    ratio: Option<f64>,
    /// Neighbours per residue in the input graph.
    #[arg(long)]
    knn: Option<usize>,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    pool: Option<PoolKind>,
    /// Fail (exit 1) unless the U-Net wins by at least this many points.
    #[arg(long)]
    min_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EquivarianceConfig {
    seed: u64,
    motions: usize,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        EquivarianceConfig { seed: 0, motions: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExpressivityConfig {
    seed: u64,
    trials: usize,
    k: usize,
    pool_kind: PoolKind,
}

impl Default for ExpressivityConfig {
    fn default() -> Self {
        ExpressivityConfig { seed: 0, trials: 1000, k: 4, pool_kind: PoolKind::Sparse }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CoarsenConfig {
    levels: usize,
    pool_kind: PoolKind,
    ratio: f64,
    knn: usize,
}

impl Default for CoarsenConfig {
    fn default() -> Self {
        CoarsenConfig { levels: 3, pool_kind: PoolKind::Sparse, ratio: DEFAULT_COARSEN_RATIO, knn: RESIDUE_KNN_K }
    }
}

#[derive(Serialize)]
struct ExpressivityReport {
    config: ExpressivityConfig,
    empirical: EmpiricalReport,
    increase: IncreaseReport,
    passed: bool,
}

enum Failure {
    Usage(String),
    Property(String),
    Runtime(String),
}

impl From<GeoError> for Failure {
    fn from(e: GeoError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
}

struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn new(dir: Option<PathBuf>) -> Result<Self, Failure> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Output { dir })
    }

    fn write(&self, name: &str, contents: &str) -> Outcome {
        let Some(d) = &self.dir else { return Ok(()) };
        let path = d.join(name);
        fs::write(&path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    fn write_config<T: Serialize>(&self, config: &T) -> Outcome {
        self.write("config.json", &pretty(config))
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data always serializes")
}

fn chains(cli: &Cli, args: &ChainsArgs, out: &Output) -> Outcome {
    let mut config: ExperimentConfig = load_config(cli.config.as_deref())?;
    config.base_seed = cli.seed.unwrap_or(config.base_seed);
    config.k = args.k.unwrap_or(config.k);
    config.seeds = args.seeds.unwrap_or(config.seeds);
    config.epochs = args.epochs.unwrap_or(config.epochs);
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    out.write_config(&config)?;
    let (rows, csv) = run_table(&table_grid(&config))?;
    out.write("table.csv", &csv)?;
    out.write("results.json", &pretty(&rows))?;
    print!("{csv}");
    Ok(())
}

fn equivariance(cli: &Cli, args: &EquivarianceArgs, out: &Output) -> Outcome {
    let mut config: EquivarianceConfig = load_config(cli.config.as_deref())?;
    config.seed = cli.seed.unwrap_or(config.seed);
    config.motions = args.motions.unwrap_or(config.motions);
    out.write_config(&config)?;
    let report = equivariance_suite(config.seed, config.motions)?;
    let json = report.to_json();
    out.write("equivariance.json", &json)?;
    println!("{json}");
    if !report.passed {
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Failure::Property(format!("equivariance violated by {}", failed.join(", "))));
    }
    Ok(())
}

fn expressivity(cli: &Cli, args: &ExpressivityArgs, out: &Output) -> Outcome {
    let mut config: ExpressivityConfig = load_config(cli.config.as_deref())?;
    config.seed = cli.seed.unwrap_or(config.seed);
    config.trials = args.trials.unwrap_or(config.trials);
    config.k = args.k.unwrap_or(config.k);
    config.pool_kind = args.pool.unwrap_or(config.pool_kind);
    if config.trials == 0 {
        return Err(Failure::Usage("--trials must be positive".into()));
    }
    out.write_config(&config)?;
    let empirical = empirical_maintains(config.pool_kind, config.trials, config.seed)?;
    let increase = demonstrate_increase(config.k).map_err(|e| Failure::Usage(e.to_string()))?;
    // point pooling is not certified, so its violations are findings, not failures
    let certified = config.pool_kind == PoolKind::Sparse;
    let passed = increase.increased && (!certified || empirical.violations.is_empty());
    let report = ExpressivityReport { config, empirical, increase, passed };
    let json = pretty(&report);
    out.write("expressivity.json", &json)?;
    println!("{json}");
    if !passed {
        return Err(Failure::Property(format!(
            "{} violation(s), pooling increased separation: {}",
            report.empirical.violations.len(),
            report.increase.increased
        )));
    }
    Ok(())
}

fn coarsen(cli: &Cli, args: &CoarsenArgs, out: &Output) -> Outcome {
    let mut config: CoarsenConfig = load_config(cli.config.as_deref())?;
    config.levels = args.levels.unwrap_or(config.levels);
    config.pool_kind = args.pool.unwrap_or(config.pool_kind);
    config.ratio = args.ratio.unwrap_or(config.ratio);
    config.knn = args.knn.unwrap_or(config.knn);
    if config.levels == 0 || config.knn == 0 || !(config.ratio > 0.0 && config.ratio <= 1.0) {
        return Err(Failure::Usage("need levels >= 1, knn >= 1 and ratio in (0, 1]".into()));
    }
    let records = read_ca_structure(&args.file).map_err(|e| match e {
        GeoError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Failure::Runtime(format!("file not found: {}", args.file.display()))
        }
        other => Failure::Runtime(format!("{}: {other}", args.file.display())),
    })?;
    out.write_config(&config)?;
    let g = build_residue_graph(&records, config.knn, true)?;
    let h = coarsen_hierarchy(&g, config.levels, config.pool_kind, config.ratio)?;
    for w in &h.warnings {
        eprintln!("warning: {w}");
    }
    let json = h.to_json();
    out.write("hierarchy.json", &json)?;
    println!("{json}");
    Ok(())
}

fn train_synthetic(cli: &Cli, args: &SyntheticArgs, out: &Output) -> Outcome {
    let mut config: SyntheticConfig = load_config(cli.config.as_deref())?;
    config.base_seed = cli.seed.unwrap_or(config.base_seed);
    config.epochs = args.epochs.unwrap_or(config.epochs);
    config.seeds = args.seeds.unwrap_or(config.seeds);
    config.pool_kind = args.pool.unwrap_or(config.pool_kind);
    out.write_config(&config)?;
    let report = run_synthetic(&config).map_err(|e| match e {
        GeoError::InvalidInput(msg) => Failure::Usage(msg),
        other => other.into(),
    })?;
    let csv = report.to_csv()?;
    out.write("synthetic.csv", &csv)?;
    out.write("report.json", &pretty(&report))?;
    print!("{csv}");
    eprintln!(
        "unet {:.1} ± {:.1}, baseline {:.1} ± {:.1}, margin {:.1} points",
        report.unet_mean,
        report.unet_std,
        report.baseline_mean,
        report.baseline_std,
        report.margin()
    );
    match args.min_margin {
        Some(m) if report.margin() < m => {
            Err(Failure::Property(format!("margin {:.1} below required {m}", report.margin())))
        }
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Outcome {
    let out = Output::new(cli.out.clone())?;
    match &cli.command {
        Command::Chains(a) => chains(cli, a, &out),
        Command::Equivariance(a) => equivariance(cli, a, &out),
        Command::Expressivity(a) => expressivity(cli, a, &out),
        Command::Coarsen(a) => coarsen(cli, a, &out),
        Command::TrainSynthetic(a) => train_synthetic(cli, a, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Property(msg) | Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
