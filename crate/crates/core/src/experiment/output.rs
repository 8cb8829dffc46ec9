//! CSV emission. Every float is written with 9 significant digits.

use std::io::Write;

use crate::error::Result;
use crate::regret::{RegretReport, RoundRecord};

use super::runner::{RunResult, SelectorLogRow};

/// `printf("%.9g")`: 9 significant digits, trailing zeros trimmed, exponent
/// notation outside `1e-4 <= |x| < 1e9`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn write_selector_log<W: Write>(
    rows: &[SelectorLogRow],
    num_fidelities: usize,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["round".to_string(), "entropy".to_string()];
    header.extend((1..=num_fidelities).map(|k| format!("gain_{k}")));
    header.extend(["beta_r", "chosen_k", "remaining_budget"].map(String::from));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.round.to_string(), fmt_g9(row.entropy)];
        rec.extend(row.gains.iter().map(|g| fmt_g9(*g)));
        rec.extend([
            fmt_g9(row.beta),
            (row.chosen + 1).to_string(),
            fmt_g9(row.remaining),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const REGRET_HEADER: [&str; 15] = [
    "row",
    "round",
    "fidelity",
    "cost",
    "return_sim",
    "return_true",
    "return_mixture",
    "gain",
    "beta",
    "contribution",
    "total_regret",
    "g_star",
    "gamma_low",
    "alpha_gamma",
    "c_const",
];

/// One row per round plus a trailing summary row.
pub fn write_regret<W: Write>(
    records: &[RoundRecord],
    report: &RegretReport,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REGRET_HEADER)?;
    for (r, contribution) in records.iter().zip(&report.per_round) {
        let mut rec = vec![
            "round".to_string(),
            r.round.to_string(),
            (r.fidelity + 1).to_string(),
            fmt_g9(r.cost),
            fmt_g9(r.return_sim),
            fmt_g9(r.return_true),
            fmt_g9(r.return_mixture),
            fmt_g9(r.gain),
            fmt_g9(r.beta),
            fmt_g9(*contribution),
        ];
        rec.extend(std::iter::repeat_n(String::new(), 5));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["summary".to_string()];
    rec.extend(std::iter::repeat_n(String::new(), 9));
    rec.extend([
        fmt_g9(report.total_regret),
        fmt_g9(report.g_star),
        fmt_g9(report.gamma_low),
        fmt_g9(report.alpha_gamma),
        fmt_g9(report.c_const),
    ]);
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

pub const RUN_HEADER: [&str; 14] = [
    "strategy",
    "budget",
    "seed",
    "status",
    "rounds",
    "spent",
    "final_return",
    "final_return_mixture",
    "optimal_return",
    "total_regret",
    "gamma_low",
    "alpha_gamma",
    "c_const",
    "error",
];

/// Columns of [`RUN_HEADER`] for a successful run.
pub fn run_record(r: &RunResult) -> Vec<String> {
    let nan = f64::NAN;
    let reg = r.regret.as_ref();
    vec![
        r.strategy.to_string(),
        fmt_g9(r.budget),
        r.seed.to_string(),
        "ok".into(),
        r.rounds.len().to_string(),
        fmt_g9(r.ledger.spent()),
        fmt_g9(r.final_return),
        fmt_g9(r.final_return_mixture),
        fmt_g9(r.optimal_return),
        fmt_g9(reg.map_or(nan, |x| x.total_regret)),
        fmt_g9(reg.map_or(nan, |x| x.gamma_low)),
        fmt_g9(reg.map_or(nan, |x| x.alpha_gamma)),
        fmt_g9(reg.map_or(nan, |x| x.c_const)),
        String::new(),
    ]
}

/// Single-row per-run summary with the [`RUN_HEADER`] columns.
pub fn write_run_summary<W: Write>(r: &RunResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RUN_HEADER)?;
    w.write_record(run_record(r))?;
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, `selector.csv`, `regret.csv` and `config.txt` under `dir`.
pub fn write_run_dir(
    r: &RunResult,
    cfg: &super::config::ExperimentConfig,
    num_fidelities: usize,
    dir: &std::path::Path,
) -> Result<()> {
    use std::fs::File;
    std::fs::create_dir_all(dir)?;
    write_run_summary(r, File::create(dir.join("summary.csv"))?)?;
    write_selector_log(
        &r.selector_log,
        num_fidelities,
        File::create(dir.join("selector.csv"))?,
    )?;
    if let Some(report) = &r.regret {
        write_regret(&r.rounds, report, File::create(dir.join("regret.csv"))?)?;
    }
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}
