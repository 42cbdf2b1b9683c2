//! `pathgat` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathgat_cli::commands;
use pathgat_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "pathgat", version, about = "Pathway-guided graph attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated trajectories, one CSV per condition and replicate.
    Simulate(Common),
    /// Fit each model on all data and save checkpoints and loss curves.
    Train(Common),
    /// Leave-one-condition-out evaluation tables.
    Loco(Common),
    /// Learn a signed interaction matrix without a prior graph.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Minimum score magnitude for an edge to count as present.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Summarise a finished run directory into summary.md.
    Report {
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment TOML.
    #[arg(long, env = "PATHGAT_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `N` for seeds 0..N, `a..b`, or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// `[CONDITION=]relation:source:target:remove|add`; without a condition
    /// the edit applies to every condition.
    #[arg(long)]
    intervene: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] pathgat::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_divergence() => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("--seeds `{text}`: expected N, a..b or a,b,c"));
    let seeds: Vec<u64> = if text.contains(',') {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    } else if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        (0..text.trim().parse::<u64>().map_err(|_| bad())?).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn load(common: &Common) -> Result<commands::Experiment, CliError> {
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(text) = &common.seeds {
        let seeds = parse_seeds(text)?;
        cfg.train.seeds = seeds.clone();
        cfg.discovery.train.seeds = seeds;
    }
    for item in &common.intervene {
        let (conds, edit) = match item.split_once('=') {
            Some((c, e)) => (vec![c.to_string()], e),
            None => (cfg.dataset.conditions.clone(), item.as_str()),
        };
        edit.parse::<pathgat::graph::Intervention>()
            .map_err(|e| CliError::Usage(format!("--intervene: {e}")))?;
        for c in conds {
            cfg.interventions.entry(c).or_default().push(edit.to_string());
        }
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("pathgat-out"));
    Ok(commands::Experiment::new(cfg, out)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(common) => {
            let exp = load(&common)?;
            for path in commands::simulate(&exp)? {
                println!("{}", path.display());
            }
        }
        Command::Train(common) => {
            let exp = load(&common)?;
            print!("{}", commands::train_all(&exp)?);
        }
        Command::Loco(common) => {
            let exp = load(&common)?;
            print!("{}", commands::loco(&exp)?.tables_text());
        }
        Command::Discover { common, threshold } => {
            if threshold.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                return Err(CliError::Usage("--threshold must be a nonnegative number".into()));
            }
            let exp = load(&common)?;
            let out = commands::discover_signs(&exp, threshold)?;
            print!("{}{}", out.matrix.to_csv(), out.report);
        }
        Command::Report { dir } => {
            print!("{}", commands::report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
