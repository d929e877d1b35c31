//! Artifact files of an experiment run.
//!
//! Everything except `metadata.json` is a pure function of the resolved
//! configuration, so reruns produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::{run, ExperimentConfig, ExperimentReport};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Suppress per-run progress lines on stderr.
    pub quiet: bool,
}

const RUNS_HEADER: &str = "setting,x,method,seed,acc,macro_p,macro_r,macro_f1,nll,brier,ece,train_risk\n";
const SUMMARY_HEADER: &str =
    "setting,x,method,runs,acc_mean,acc_std,macro_f1_mean,macro_f1_std,nll_mean,nll_std,ece_mean,ece_std\n";

fn runs_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(RUNS_HEADER);
    for r in &report.runs {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.setting, r.x, r.method, r.seed, m.acc, m.macro_p, m.macro_r, m.macro_f1, m.nll, m.brier, m.ece, r.train_risk
        )
        .unwrap();
    }
    out
}

fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    for r in &report.summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.setting,
            r.x,
            r.method,
            r.runs,
            r.acc_mean,
            r.acc_std,
            r.macro_f1_mean,
            r.macro_f1_std,
            r.nll_mean,
            r.nll_std,
            r.ece_mean,
            r.ece_std
        )
        .unwrap();
    }
    out
}

fn failures_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("setting,method,seed,error\n");
    for f in &report.failures {
        let msg = f.error.replace('"', "'");
        writeln!(out, "{},{},{},\"{}\"", f.setting, f.method, f.seed, msg).unwrap();
    }
    out
}

/// Plain-text table in `mean±std` percent form, plus the checks.
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let w = report.summary.iter().map(|r| r.setting.len()).max().unwrap_or(7).max(7);
    let mw = report.summary.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    writeln!(out, "{:<w$}  {:<mw$}  {:>13}  {:>13}  {:>7}  {:>7}", "setting", "method", "acc (%)", "macro-F1 (%)", "nll", "ece")
        .unwrap();
    for r in &report.summary {
        writeln!(
            out,
            "{:<w$}  {:<mw$}  {:>13}  {:>13}  {:>7.4}  {:>7.4}",
            r.setting,
            r.method,
            format!("{:.2}±{:.2}", 100.0 * r.acc_mean, 100.0 * r.acc_std),
            format!("{:.2}±{:.2}", 100.0 * r.macro_f1_mean, 100.0 * r.macro_f1_std),
            r.nll_mean,
            r.ece_mean
        )
        .unwrap();
    }
    if let Some(b) = report.bayes_acc {
        writeln!(out, "\nbayes accuracy: {:.4}", b).unwrap();
    }
    if !report.checks.is_empty() {
        writeln!(out, "\nchecks:").unwrap();
        for c in &report.checks {
            let bounds = match (c.lo, c.hi) {
                (Some(l), Some(h)) => format!("in [{l}, {h}]"),
                (Some(l), None) => format!(">= {l}"),
                (None, Some(h)) => format!("<= {h}"),
                (None, None) => "info".into(),
            };
            let tag = if c.pass { "PASS" } else { "FAIL" };
            writeln!(out, "  [{tag}] {} = {:.6} ({bounds})", c.name, c.value).unwrap();
        }
    }
    for s in &report.skipped {
        writeln!(out, "skipped: {s}").unwrap();
    }
    out
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Writes every deterministic artifact of `report` into `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml())?;
    fs::write(dir.join("runs.csv"), runs_csv(report))?;
    fs::write(dir.join("summary.csv"), summary_csv(report))?;
    fs::write(dir.join("summary.json"), json(report))?;
    fs::write(dir.join("summary.txt"), summary_table(report))?;
    if !report.failures.is_empty() {
        fs::write(dir.join("failures.csv"), failures_csv(report))?;
    }
    for (name, text) in &report.tables {
        fs::write(dir.join(name), text)?;
    }
    if !report.runs.is_empty() {
        let hist = dir.join("histories");
        fs::create_dir_all(&hist)?;
        for r in &report.runs {
            let name = format!("{}__{}__seed{}.csv", file_stem(&r.setting), file_stem(&r.method), r.seed);
            fs::write(hist.join(name), &r.history_csv)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Metadata {
    started_unix_ms: u128,
    finished_unix_ms: u128,
    elapsed_seconds: f64,
    crate_version: &'static str,
    runs: usize,
    failures: usize,
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Runs the experiment and writes its artifacts; wall-clock information goes
/// to `metadata.json` only.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    let started = unix_ms();
    let clock = Instant::now();
    let progress = |line: &str| eprintln!("{line}");
    let report = run(cfg, if opts.quiet { None } else { Some(&progress) })?;
    write_artifacts(cfg, &report, &opts.out_dir)?;
    let meta = Metadata {
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        crate_version: env!("CARGO_PKG_VERSION"),
        runs: report.runs.len(),
        failures: report.failures.len(),
    };
    fs::write(opts.out_dir.join("metadata.json"), json(&meta))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::ExperimentKind;

    fn empty_report() -> ExperimentReport {
        ExperimentReport {
            kind: ExperimentKind::UuGrid,
            name: None,
            methods: vec![],
            bayes_acc: None,
            runs: vec![],
            failures: vec![],
            summary: vec![],
            checks: vec![],
            skipped: vec![],
            tables: vec![],
        }
    }

    #[test]
    fn empty_report_gives_header_only_csvs() {
        let r = empty_report();
        assert_eq!(runs_csv(&r), RUNS_HEADER);
        assert_eq!(summary_csv(&r), SUMMARY_HEADER);
    }

    #[test]
    fn stems_are_filesystem_safe() {
        assert_eq!(file_stem("pair=0.2-0.8"), "pair_0.2-0.8");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
