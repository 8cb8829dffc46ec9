//! Budget x strategy x seed sweeps, aggregation and regret slopes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::regret::{sublinearity_fit, SublinearityFit};

use super::config::{ExperimentConfig, Strategy};
use super::output::{fmt_g9, write_run_dir, RUN_HEADER};
use super::runner::{pretrain, run_from};

/// The numbers of one sweep cell that aggregation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub budget: f64,
    pub seed: u64,
    pub rounds: usize,
    pub spent: f64,
    pub final_return: f64,
    pub final_return_mixture: f64,
    pub optimal_return: f64,
    pub total_regret: f64,
    pub gamma_low: f64,
    pub alpha_gamma: f64,
    pub c_const: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub strategy: Strategy,
    pub budget: f64,
    pub seed: u64,
    /// The failure message of a cell that did not complete.
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions<'a> {
    pub budgets: &'a [f64],
    pub strategies: &'a [Strategy],
    pub seeds: &'a [u64],
    /// Per-run detail directories are written here when set.
    pub details: Option<&'a Path>,
}

/// Runs the full cross product. The pretrained ensemble of each seed is shared
/// by all of that seed's cells; a failing cell is recorded and skipped.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &SweepOptions<'_>) -> Result<Vec<SweepCell>> {
    if opts.budgets.is_empty() || opts.strategies.is_empty() || opts.seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs budgets, strategies and seeds".into(),
        ));
    }
    let mut cells = Vec::new();
    for &seed in opts.seeds {
        let pre = pretrain(cfg, seed);
        for &budget in opts.budgets {
            for &strategy in opts.strategies {
                let outcome = match &pre {
                    Err(e) => Err(e.to_string()),
                    Ok(pre) => match run_from(cfg, pre, strategy, budget) {
                        Err(e) => Err(e.to_string()),
                        Ok(res) => {
                            if let Some(dir) = opts.details {
                                let name = format!("{}_b{}_s{}", strategy, fmt_g9(budget), seed);
                                write_run_dir(&res, cfg, pre.family.len(), &dir.join(name))?;
                            }
                            let reg = res.regret.as_ref();
                            Ok(RunSummary {
                                strategy,
                                budget,
                                seed,
                                rounds: res.rounds.len(),
                                spent: res.ledger.spent(),
                                final_return: res.final_return,
                                final_return_mixture: res.final_return_mixture,
                                optimal_return: res.optimal_return,
                                total_regret: reg.map_or(f64::NAN, |r| r.total_regret),
                                gamma_low: reg.map_or(f64::NAN, |r| r.gamma_low),
                                alpha_gamma: reg.map_or(f64::NAN, |r| r.alpha_gamma),
                                c_const: reg.map_or(f64::NAN, |r| r.c_const),
                            })
                        }
                    },
                };
                cells.push(SweepCell {
                    strategy,
                    budget,
                    seed,
                    outcome,
                });
            }
        }
    }
    cells.sort_by(|a, b| {
        a.budget
            .total_cmp(&b.budget)
            .then(a.strategy.cmp(&b.strategy))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(cells)
}

/// Mean and standard error (`sd / sqrt(n)`, zero for a single value).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub budget: f64,
    pub strategy: Strategy,
    pub mean_return: f64,
    pub std_error: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRow {
    pub strategy: Strategy,
    pub budget: f64,
    pub mean_regret: f64,
    pub std_error: f64,
    pub seeds: usize,
}

impl RegretRow {
    pub fn regret_per_budget(&self) -> f64 {
        self.mean_regret / self.budget
    }
}

fn grouped<F: Fn(&RunSummary) -> f64>(
    runs: &[RunSummary],
    value: F,
) -> BTreeMap<(u64, Strategy), (f64, Vec<f64>)> {
    let mut groups: BTreeMap<(u64, Strategy), (f64, Vec<f64>)> = BTreeMap::new();
    for r in runs {
        let v = value(r);
        if v.is_finite() {
            groups
                .entry((r.budget.to_bits(), r.strategy))
                .or_insert((r.budget, Vec::new()))
                .1
                .push(v);
        }
    }
    groups
}

/// Mean true return and standard error per (budget, strategy), budgets ascending.
pub fn aggregate(runs: &[RunSummary]) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = grouped(runs, |r| r.final_return)
        .into_iter()
        .map(|((_, strategy), (budget, xs))| {
            let (mean_return, std_error) = mean_and_se(&xs);
            AggregateRow {
                budget,
                strategy,
                mean_return,
                std_error,
                seeds: xs.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.budget
            .total_cmp(&b.budget)
            .then(a.strategy.cmp(&b.strategy))
    });
    rows
}

/// Mean regret per (strategy, budget), budgets ascending within each strategy.
pub fn regret_by_budget(runs: &[RunSummary]) -> Vec<RegretRow> {
    let mut rows: Vec<RegretRow> = grouped(runs, |r| r.total_regret)
        .into_iter()
        .map(|((_, strategy), (budget, xs))| {
            let (mean_regret, std_error) = mean_and_se(&xs);
            RegretRow {
                strategy,
                budget,
                mean_regret,
                std_error,
                seeds: xs.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.strategy
            .cmp(&b.strategy)
            .then(a.budget.total_cmp(&b.budget))
    });
    rows
}

/// Log-log regret slope per strategy (strategies with fewer than 3 budgets are skipped).
pub fn regret_fits(rows: &[RegretRow]) -> Vec<(Strategy, SublinearityFit)> {
    let mut by_strategy: BTreeMap<Strategy, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by_strategy
            .entry(r.strategy)
            .or_default()
            .push((r.budget, r.mean_regret));
    }
    by_strategy
        .into_iter()
        .filter_map(|(s, pts)| sublinearity_fit(&pts).ok().map(|f| (s, f)))
        .collect()
}

pub fn successful(cells: &[SweepCell]) -> Vec<RunSummary> {
    cells
        .iter()
        .filter_map(|c| c.outcome.clone().ok())
        .collect()
}

pub fn write_runs(cells: &[SweepCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_HEADER)?;
    for c in cells {
        match &c.outcome {
            Ok(r) => w.write_record(summary_record(r))?,
            Err(msg) => {
                let mut rec = vec![
                    c.strategy.to_string(),
                    fmt_g9(c.budget),
                    c.seed.to_string(),
                    "error".into(),
                ];
                rec.extend(std::iter::repeat_n(String::new(), RUN_HEADER.len() - 5));
                rec.push(msg.clone());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn summary_record(r: &RunSummary) -> Vec<String> {
    vec![
        r.strategy.to_string(),
        fmt_g9(r.budget),
        r.seed.to_string(),
        "ok".into(),
        r.rounds.to_string(),
        fmt_g9(r.spent),
        fmt_g9(r.final_return),
        fmt_g9(r.final_return_mixture),
        fmt_g9(r.optimal_return),
        fmt_g9(r.total_regret),
        fmt_g9(r.gamma_low),
        fmt_g9(r.alpha_gamma),
        fmt_g9(r.c_const),
        String::new(),
    ]
}

/// Reads the successful rows of a `runs.csv`.
pub fn read_runs(path: &Path) -> Result<Vec<RunSummary>> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RUN_HEADER {
        return Err(Error::Parse(format!("unexpected runs header {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if &rec[3] != "ok" {
            continue;
        }
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|e| Error::Parse(format!("column {}: {e}", RUN_HEADER[i])))
        };
        let u = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|e| Error::Parse(format!("column {}: {e}", RUN_HEADER[i])))
        };
        out.push(RunSummary {
            strategy: rec[0].parse()?,
            budget: f(1)?,
            seed: u(2)?,
            rounds: u(4)? as usize,
            spent: f(5)?,
            final_return: f(6)?,
            final_return_mixture: f(7)?,
            optimal_return: f(8)?,
            total_regret: f(9)?,
            gamma_low: f(10)?,
            alpha_gamma: f(11)?,
            c_const: f(12)?,
        });
    }
    Ok(out)
}

pub fn write_aggregate(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["budget", "strategy", "mean_return", "std_error", "seeds"])?;
    for r in rows {
        w.write_record([
            fmt_g9(r.budget),
            r.strategy.to_string(),
            fmt_g9(r.mean_return),
            fmt_g9(r.std_error),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_regret_rows(rows: &[RegretRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "budget",
        "mean_regret",
        "std_error",
        "seeds",
        "regret_per_budget",
    ])?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            fmt_g9(r.budget),
            fmt_g9(r.mean_regret),
            fmt_g9(r.std_error),
            r.seeds.to_string(),
            fmt_g9(r.regret_per_budget()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fits(fits: &[(Strategy, SublinearityFit)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "slope",
        "intercept",
        "ratio_decreasing",
        "substituted",
    ])?;
    for (s, f) in fits {
        w.write_record([
            s.to_string(),
            fmt_g9(f.slope),
            fmt_g9(f.intercept),
            f.ratio_decreasing.to_string(),
            f.substituted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregate rows, regret rows and per-strategy fits of a sweep.
pub type Report = (
    Vec<AggregateRow>,
    Vec<RegretRow>,
    Vec<(Strategy, SublinearityFit)>,
);

/// Recomputes `aggregate.csv`, `regret_vs_budget.csv` and `regret_fit.csv`
/// from `runs.csv` in `dir`.
pub fn report(dir: &Path) -> Result<Report> {
    let runs = read_runs(&dir.join("runs.csv"))?;
    let agg = aggregate(&runs);
    let reg = regret_by_budget(&runs);
    let fits = regret_fits(&reg);
    write_aggregate(&agg, &dir.join("aggregate.csv"))?;
    write_regret_rows(&reg, &dir.join("regret_vs_budget.csv"))?;
    write_fits(&fits, &dir.join("regret_fit.csv"))?;
    Ok((agg, reg, fits))
}

/// Writes `runs.csv` and the derived tables into `dir`.
pub fn write_sweep(cells: &[SweepCell], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_runs(cells, &dir.join("runs.csv"))?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    report(dir)?;
    Ok(())
}
