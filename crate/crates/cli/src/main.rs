//! `mfhrl`: runs single experiments and budget sweeps, and rebuilds sweep tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mfhrl_core::experiment::{
    self, fmt_g9, run_sweep, write_run_dir, write_sweep, ExperimentConfig, Strategy, SweepOptions,
};

#[derive(Parser)]
#[command(
    name = "mfhrl",
    version,
    about = "Multi-fidelity hybrid offline-online RL experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run of one strategy at one budget.
    Run {
        /// Key-value configuration file; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        budget: Option<f64>,
        /// Seed; the first configured seed when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for summary.csv, selector.csv, regret.csv and config.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross product of budgets, strategies and seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated budgets; the configured fractions of the maximum budget when absent.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        /// Comma-separated strategies; all four when absent.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        /// Number of seeds, counted from 0; the configured seed list when absent.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-run detail directories under <out>/runs.
        #[arg(long)]
        details: bool,
    },
    /// Rebuilds the aggregate tables of a sweep directory from its runs.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Prints the effective configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => {
            ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            strategy,
            budget,
            seed,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            if let Some(b) = budget {
                cfg.budget = b;
            }
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output));
            let pre = experiment::pretrain(&cfg, seed)?;
            let res = experiment::run_from(&cfg, &pre, cfg.strategy, cfg.budget)?;
            write_run_dir(&res, &cfg, pre.family.len(), &out)?;
            println!(
                "{} budget={} seed={} rounds={} spent={} return={} optimal={} regret={}",
                res.strategy,
                fmt_g9(res.budget),
                seed,
                res.rounds.len(),
                fmt_g9(res.ledger.spent()),
                fmt_g9(res.final_return),
                fmt_g9(res.optimal_return),
                res.regret
                    .as_ref()
                    .map_or("nan".into(), |r| fmt_g9(r.total_regret)),
            );
        }
        Command::Sweep {
            config,
            budgets,
            strategies,
            seeds,
            out,
            details,
        } => {
            let cfg = load(config.as_deref())?;
            let budgets = budgets.unwrap_or_else(|| cfg.sweep_budgets());
            let strategies = strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
            let seeds: Vec<u64> = match seeds {
                Some(0) => bail!("--seeds must be positive"),
                Some(n) => (0..n).collect(),
                None => cfg.seeds.clone(),
            };
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output));
            let detail_dir = out.join("runs");
            let cells = run_sweep(
                &cfg,
                &SweepOptions {
                    budgets: &budgets,
                    strategies: &strategies,
                    seeds: &seeds,
                    details: details.then_some(detail_dir.as_path()),
                },
            )?;
            write_sweep(&cells, &cfg, &out)?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            println!(
                "{} runs, {} failed, written to {}",
                cells.len(),
                failed,
                out.display()
            );
            print_aggregate(&out)?;
        }
        Command::Report { input } => print_aggregate(&input)?,
        Command::Config { config } => print!("{}", load(config.as_deref())?.to_text()),
    }
    Ok(())
}

fn print_aggregate(dir: &Path) -> Result<()> {
    let (agg, regret, fits) = experiment::report(dir)?;
    println!("budget,strategy,mean_return,std_error,seeds");
    for row in &agg {
        println!(
            "{},{},{},{},{}",
            fmt_g9(row.budget),
            row.strategy,
            fmt_g9(row.mean_return),
            fmt_g9(row.std_error),
            row.seeds
        );
    }
    println!("budget,strategy,mean_regret,regret_per_budget");
    for row in &regret {
        println!(
            "{},{},{},{}",
            fmt_g9(row.budget),
            row.strategy,
            fmt_g9(row.mean_regret),
            fmt_g9(row.regret_per_budget())
        );
    }
    for (strategy, fit) in &fits {
        println!(
            "{strategy}: regret slope {} ratio_decreasing={}",
            fmt_g9(fit.slope),
            fit.ratio_decreasing
        );
    }
    Ok(())
}
