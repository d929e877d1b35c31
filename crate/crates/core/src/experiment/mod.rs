//! Config-driven experiments: data generation, training of every method
//! over seeds and settings, seed aggregation, kind-specific checks, and
//! artifact output.
//!
//! Jobs run on a rayon pool; results are collected in job order, so the
//! artifacts do not depend on scheduling.

mod config;
mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    accepts_any_loss, ComplexityClass, DataConfig, ExperimentConfig, ExperimentKind, LossCompareSection,
    NoiseSection, OptimizerKind, RademacherSection, RateSection, ScanSection, SourceKind, TrainSection,
};
pub use output::{run_experiment, summary_table, write_artifacts, RunOptions};

use crate::analysis::{
    empirical_rademacher, gen_bound_rhs, oracle_bayes, rate_slope, spearman, GroupComplexity, RademacherClass,
};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::rng::derive_seed;
use crate::synthdata::{perturb_priors, sample_cll, sample_pll, sample_weak_groups, PriorMatrix, Source, WeakGroups};
use crate::trainer::{train, MetricsRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: String,
    /// Numeric coordinate of the setting (gap, factor, size, ...).
    pub x: f64,
    pub method: String,
    pub seed: u64,
    pub metrics: MetricsRecord,
    pub train_risk: f64,
    #[serde(skip)]
    pub history_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub setting: String,
    pub method: String,
    pub seed: u64,
    pub error: String,
}

/// Seed aggregate of one `(setting, method)` cell; standard deviations use
/// `n − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub x: f64,
    pub method: String,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
}

/// Pass/fail of one quantity against an optional closed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, lo: Option<f64>, hi: Option<f64>) -> Self {
        let pass = value.is_finite() && lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h);
        Self {
            name: name.into(),
            value,
            lo,
            hi,
            pass,
        }
    }
}

/// Everything an experiment produced, before it is written out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub name: Option<String>,
    pub methods: Vec<String>,
    pub bayes_acc: Option<f64>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<Failure>,
    pub summary: Vec<SummaryRow>,
    pub checks: Vec<Check>,
    /// `(setting, method)` pairs not run, with the reason.
    pub skipped: Vec<String>,
    /// Additional kind-specific tables as `(file name, CSV text)`.
    #[serde(skip)]
    pub tables: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn row(&self, setting: &str, method: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.setting == setting && r.method == method)
    }
}

#[derive(Debug, Clone)]
enum Plan {
    Weak { priors: PriorMatrix, sizes: Vec<usize> },
    Cll { n: usize },
    Pll { n: usize },
}

#[derive(Debug, Clone)]
struct Setting {
    label: String,
    x: f64,
    plan: Plan,
    loss: LossKind,
    factor: f64,
}

fn pair_plan(pair: [f64; 2], sizes: Vec<usize>) -> Result<Plan> {
    Ok(Plan::Weak {
        priors: PriorMatrix::binary_pair(pair[0], pair[1])?,
        sizes,
    })
}

fn settings(cfg: &ExperimentConfig) -> Result<Vec<Setting>> {
    let d = &cfg.data;
    let loss = cfg.train.loss;
    let n2 = vec![d.n_per_group; 2];
    let one = |label: String, x: f64, plan: Plan| Setting {
        label,
        x,
        plan,
        loss,
        factor: 1.0,
    };
    let out = match cfg.kind {
        ExperimentKind::PuCompare => vec![one(
            format!("prior={}", d.prior),
            d.prior,
            Plan::Weak {
                priors: PriorMatrix::pu(d.prior)?,
                sizes: vec![d.n_positive, d.n_unlabeled],
            },
        )],
        ExperimentKind::UuGrid => d
            .pairs
            .iter()
            .map(|p| Ok(one(format!("pair={}-{}", p[0], p[1]), (p[0] - p[1]).abs(), pair_plan(*p, n2.clone())?)))
            .collect::<Result<_>>()?,
        ExperimentKind::Multiuu => {
            let priors = cfg.multi_priors()?;
            let m = priors.num_sets();
            vec![one(
                format!("sets={m}"),
                m as f64,
                Plan::Weak {
                    priors,
                    sizes: vec![d.n_per_group; m],
                },
            )]
        }
        ExperimentKind::Cll => {
            let label = if d.transition.is_some() { "transition=custom" } else { "transition=uniform" };
            vec![one(label.into(), 0.0, Plan::Cll { n: d.n })]
        }
        ExperimentKind::Pll => vec![one(format!("q={}", d.q), d.q, Plan::Pll { n: d.n })],
        ExperimentKind::DeltaScan => {
            let mut grid = cfg.scan.grid.clone();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            grid.iter()
                .map(|&g| Ok(one(format!("delta={g}"), g, pair_plan([0.5 - g / 2.0, 0.5 + g / 2.0], n2.clone())?)))
                .collect::<Result<_>>()?
        }
        ExperimentKind::PriorNoise => cfg
            .noise
            .factors
            .iter()
            .map(|&f| {
                let mut s = one(format!("factor={f}"), f, pair_plan(d.pairs[0], n2.clone())?);
                s.factor = f;
                Ok(s)
            })
            .collect::<Result<_>>()?,
        ExperimentKind::LossCompare => cfg
            .loss_compare
            .losses
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut s = one(format!("loss={}", l.name()), i as f64, pair_plan(d.pairs[0], n2.clone())?);
                s.loss = l;
                Ok(s)
            })
            .collect::<Result<_>>()?,
        ExperimentKind::RateCheck => {
            let mut sizes = cfg.rate.sizes.clone();
            sizes.sort_unstable();
            sizes.dedup();
            sizes
                .iter()
                .map(|&n| Ok(one(format!("n={n}"), n as f64, pair_plan(d.pairs[0], vec![n / 2, n - n / 2])?)))
                .collect::<Result<_>>()?
        }
        ExperimentKind::Rademacher => Vec::new(),
    };
    Ok(out)
}

/// Closed-form or exact Bayes accuracy of the source under its own priors.
pub fn bayes_accuracy(source: &Source) -> Option<f64> {
    match source {
        Source::Gaussian(g) if g.num_classes() == 2 => g.binary_bayes_accuracy().ok(),
        Source::Gaussian(_) => None,
        Source::Halfspace(_) => Some(1.0),
        Source::Discrete(m) => Some(1.0 - oracle_bayes(m).risk01),
    }
}

fn build_groups(cfg: &ExperimentConfig, source: &Source, setting: &Setting, seed: u64) -> Result<WeakGroups> {
    let data_seed = derive_seed(seed, 0);
    let mut groups = match &setting.plan {
        Plan::Weak { priors, sizes } => sample_weak_groups(source, priors, sizes, data_seed)?.groups,
        Plan::Cll { n } => sample_cll(source, &cfg.transition(), *n, data_seed)?.groups,
        Plan::Pll { n } => sample_pll(source, cfg.data.q, *n, data_seed)?.groups,
    };
    if let Some(w) = &cfg.data.group_weights {
        groups
            .set_group_weights(w)
            .map_err(|e| Error::config("data.group_weights", e.to_string()))?;
    }
    if setting.factor != 1.0 {
        groups = perturb_priors(&groups, setting.factor)?;
    }
    Ok(groups)
}

fn run_job(cfg: &ExperimentConfig, source: &Source, setting: &Setting, method: &str, seed: u64) -> Result<RunRecord> {
    let groups = build_groups(cfg, source, setting, seed)?;
    let test = source.sample_labeled(cfg.data.n_test, derive_seed(seed, 1));
    let objective = cfg.objective(method, LossSpec::new(setting.loss))?;
    let tc = cfg.train_config(objective, seed);
    let (_, hist) = train(&groups, Some(&test), &tc)?;
    let metrics = hist
        .final_metrics()
        .cloned()
        .ok_or_else(|| Error::Numeric("training produced no evaluation".into()))?;
    let train_risk = hist.epochs.last().map(|e| e.train_risk).unwrap_or(f64::NAN);
    Ok(RunRecord {
        setting: setting.label.clone(),
        x: setting.x,
        method: method.to_string(),
        seed,
        metrics,
        train_risk,
        history_csv: hist.to_csv(),
    })
}

use crate::analysis::mean_std;

fn summarize(runs: &[RunRecord], settings: &[Setting], methods: &[String]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for s in settings {
        for m in methods {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.setting == s.label && &r.method == m).collect();
            if cell.is_empty() {
                continue;
            }
            let col = |f: fn(&MetricsRecord) -> f64| mean_std(&cell.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
            let (acc_mean, acc_std) = col(|m| m.acc);
            let (macro_f1_mean, macro_f1_std) = col(|m| m.macro_f1);
            let (nll_mean, nll_std) = col(|m| m.nll);
            let (ece_mean, ece_std) = col(|m| m.ece);
            out.push(SummaryRow {
                setting: s.label.clone(),
                x: s.x,
                method: m.clone(),
                runs: cell.len(),
                acc_mean,
                acc_std,
                macro_f1_mean,
                macro_f1_std,
                nll_mean,
                nll_std,
                ece_mean,
                ece_std,
            });
        }
    }
    out
}

fn method_rows<'a>(summary: &'a [SummaryRow], method: &str) -> Vec<&'a SummaryRow> {
    let mut rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.method == method).collect();
    rows.sort_by(|a, b| a.x.total_cmp(&b.x));
    rows
}

fn kind_checks(
    cfg: &ExperimentConfig,
    summary: &[SummaryRow],
    methods: &[String],
    bayes: Option<f64>,
    tables: &mut Vec<(String, String)>,
) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mean_of = |m: &str| -> Option<f64> {
        let rows = method_rows(summary, m);
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.acc_mean).sum::<f64>() / rows.len() as f64)
    };
    match cfg.kind {
        ExperimentKind::DeltaScan => {
            let mut curve = String::from("method,delta,acc,acc_std,macro_f1,macro_f1_std,nll,nll_std,ece,ece_std\n");
            for m in methods {
                let rows = method_rows(summary, m);
                for r in &rows {
                    curve.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{}\n",
                        m, r.x, r.acc_mean, r.acc_std, r.macro_f1_mean, r.macro_f1_std, r.nll_mean, r.nll_std, r.ece_mean, r.ece_std
                    ));
                }
                let Some(first) = rows.first() else { continue };
                checks.push(Check::new(format!("{m}: acc at smallest gap"), first.acc_mean, Some(0.45), Some(0.60)));
                if let Some(b) = bayes {
                    let worst = rows
                        .iter()
                        .filter(|r| r.x >= 0.6)
                        .map(|r| (b - r.acc_mean).abs())
                        .fold(f64::NAN, f64::max);
                    if worst.is_finite() {
                        checks.push(Check::new(format!("{m}: max |bayes - acc| for gap >= 0.6"), worst, None, Some(0.05)));
                    }
                }
                if rows.len() >= 2 {
                    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
                    let ys: Vec<f64> = rows.iter().map(|r| r.acc_mean).collect();
                    let rho = spearman(&xs, &ys).unwrap_or(f64::NAN);
                    checks.push(Check::new(format!("{m}: spearman(gap, acc)"), rho, Some(0.9), None));
                }
            }
            tables.push(("curve.csv".into(), curve));
        }
        ExperimentKind::PriorNoise => {
            for m in methods {
                let rows = method_rows(summary, m);
                let Some(base) = rows.iter().find(|r| r.x == 1.0) else { continue };
                let acc_drop = rows.iter().map(|r| base.acc_mean - r.acc_mean).fold(0.0, f64::max);
                let f1_drop = rows.iter().map(|r| base.macro_f1_mean - r.macro_f1_mean).fold(0.0, f64::max);
                checks.push(Check::new(format!("{m}: max accuracy drop"), acc_drop, None, Some(0.05)));
                checks.push(Check::new(format!("{m}: max macro-F1 drop"), f1_drop, None, Some(0.05)));
            }
        }
        ExperimentKind::RateCheck => {
            let mut table = String::from("method,n,error,normalized_error,f1_error,normalized_f1_error\n");
            for m in methods {
                let rows = method_rows(summary, m);
                if rows.len() < 4 {
                    continue;
                }
                let err: Vec<f64> = rows.iter().map(|r| 1.0 - r.acc_mean).collect();
                let ferr: Vec<f64> = rows.iter().map(|r| 1.0 - r.macro_f1_mean).collect();
                let norm: Vec<f64> = err.iter().map(|e| e / err[0]).collect();
                let fnorm: Vec<f64> = ferr.iter().map(|e| e / ferr[0]).collect();
                let ns: Vec<f64> = rows.iter().map(|r| r.x).collect();
                for i in 0..rows.len() {
                    table.push_str(&format!("{},{},{},{},{},{}\n", m, ns[i], err[i], norm[i], ferr[i], fnorm[i]));
                }
                let fit = rate_slope(&ns, &norm)?;
                checks.push(Check::new(format!("{m}: slope of normalized error"), fit.slope, Some(-0.65), Some(-0.35)));
                if let Ok(f) = rate_slope(&ns, &fnorm) {
                    checks.push(Check::new(format!("{m}: slope of normalized F1 error"), f.slope, None, None));
                }
            }
            tables.push(("rate.csv".into(), table));
        }
        ExperimentKind::PuCompare => {
            if let (Some(e), Some(n)) = (mean_of("eoerm"), mean_of("nnpu")) {
                checks.push(Check::new("eoerm acc - nnpu acc", e - n, Some(-0.01), None));
            }
        }
        ExperimentKind::UuGrid => {
            for r in method_rows(summary, "eoerm") {
                checks.push(Check::new(format!("{}: eoerm acc", r.setting), r.acc_mean, Some(0.85), None));
            }
            for r in method_rows(summary, "eoerm-abl") {
                checks.push(Check::new(format!("{}: eoerm-abl acc", r.setting), r.acc_mean, None, Some(0.6)));
            }
        }
        _ => {}
    }
    Ok(checks)
}

fn rademacher_report(cfg: &ExperimentConfig, source: &Source) -> Result<(Vec<Check>, Vec<(String, String)>)> {
    let r = &cfg.rademacher;
    let class = match r.class {
        ComplexityClass::Linear => RademacherClass::Linear { bound: r.bound },
        ComplexityClass::Mlp => RademacherClass::mlp(r.hidden.clone(), r.bound),
    };
    let loss = LossSpec::new(cfg.train.loss);
    let rho = loss.lipschitz();
    let c_loss = loss.c().unwrap_or(1.0);
    let jobs: Vec<(usize, u64)> = r.sizes.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let est = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let x = source.sample_labeled(n, derive_seed(seed, 2)).x;
            empirical_rademacher(&class, x.view(), r.draws, derive_seed(seed, 3))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = String::from("n,seed,estimate,std_err,scaled,lower_bound,bound_rhs\n");
    let mut scaled_means = Vec::new();
    let mut sizes = r.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    for &n in &sizes {
        let mut scaled = Vec::new();
        for ((jn, seed), e) in jobs.iter().zip(&est) {
            if *jn != n {
                continue;
            }
            let groups = [0.5, 0.5].map(|w| GroupComplexity {
                weight: w,
                rademacher: vec![e.estimate; 2],
                n,
            });
            let rhs = gen_bound_rhs(&groups, rho, c_loss, r.delta)?;
            let s = e.estimate * (n as f64).sqrt();
            scaled.push(s);
            table.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                n, seed, e.estimate, e.std_err, s, e.lower_bound, rhs
            ));
        }
        scaled_means.push(mean_std(&scaled).0);
    }
    let hi = scaled_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = scaled_means.iter().copied().fold(f64::INFINITY, f64::min);
    let checks = vec![Check::new("max/min of sqrt(n)·estimate", hi / lo, None, Some(1.2))];
    Ok((checks, vec![("rademacher.csv".into(), table)]))
}

/// Runs every job of the configuration and aggregates the results.
/// Numeric failures of single runs are recorded and do not stop the others.
pub fn run(cfg: &ExperimentConfig, progress: Option<&(dyn Fn(&str) + Sync)>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let source = cfg.source()?;
    let bayes = bayes_accuracy(&source);
    let methods = cfg.methods();
    let mut report = ExperimentReport {
        kind: cfg.kind,
        name: cfg.name.clone(),
        methods: methods.clone(),
        bayes_acc: bayes,
        runs: Vec::new(),
        failures: Vec::new(),
        summary: Vec::new(),
        checks: Vec::new(),
        skipped: Vec::new(),
        tables: Vec::new(),
    };
    let mut work = || -> Result<()> {
        if cfg.kind == ExperimentKind::Rademacher {
            let (checks, tables) = rademacher_report(cfg, &source)?;
            report.checks = checks;
            report.tables = tables;
            return Ok(());
        }
        let settings = settings(cfg)?;
        let mut jobs = Vec::new();
        for (si, s) in settings.iter().enumerate() {
            for m in &methods {
                if !LossSpec::new(s.loss).is_symmetric() && !accepts_any_loss(m) {
                    report.skipped.push(format!("{} / {}: needs a symmetric loss", s.label, m));
                    continue;
                }
                for &seed in &cfg.seeds {
                    jobs.push((si, m.as_str(), seed));
                }
            }
        }
        let results: Vec<Result<RunRecord>> = jobs
            .par_iter()
            .map(|&(si, m, seed)| {
                let r = run_job(cfg, &source, &settings[si], m, seed);
                if let Some(p) = progress {
                    let status = match &r {
                        Ok(rec) => format!("acc {:.4}", rec.metrics.acc),
                        Err(e) => format!("failed: {e}"),
                    };
                    p(&format!("{} {} seed {}: {}", settings[si].label, m, seed, status));
                }
                r
            })
            .collect();
        for ((si, m, seed), r) in jobs.iter().zip(results) {
            match r {
                Ok(rec) => report.runs.push(rec),
                Err(Error::Numeric(msg)) => report.failures.push(Failure {
                    setting: settings[*si].label.clone(),
                    method: m.to_string(),
                    seed: *seed,
                    error: msg,
                }),
                Err(other) => return Err(other),
            }
        }
        report.summary = summarize(&report.runs, &settings, &methods);
        report.checks = kind_checks(cfg, &report.summary, &methods, bayes, &mut report.tables)?;
        Ok(())
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: &str, extra: &str) -> ExperimentConfig {
        let text = format!(
            "kind = \"{kind}\"\nseeds = [0, 1, 2]\n{extra}\n[data]\nn_per_group = 200\nn_test = 300\nn = 300\nn_positive = 200\nn_unlabeled = 200\n[train]\nepochs = 3\nbatch_size = 64\nlr = 0.01\n"
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn counts_runs_and_summary_rows() {
        let cfg = tiny("uu_grid", "methods = [\"eoerm\", \"abs-uu\"]");
        let r = run(&cfg, None).unwrap();
        assert_eq!(r.runs.len(), 6);
        assert_eq!(r.summary.len(), 2);
        assert!(r.failures.is_empty());
    }

    #[test]
    fn empty_method_list_runs_nothing() {
        let cfg = tiny("uu_grid", "methods = []");
        let r = run(&cfg, None).unwrap();
        assert!(r.runs.is_empty() && r.summary.is_empty());
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut cfg = tiny("pu_compare", "methods = [\"eoerm\", \"nnpu\"]");
        cfg.threads = Some(1);
        let a = run(&cfg, None).unwrap();
        cfg.threads = Some(4);
        let b = run(&cfg, None).unwrap();
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn loss_compare_skips_eoerm_on_non_symmetric_losses() {
        let mut cfg = tiny("loss_compare", "");
        cfg.seeds = vec![0];
        let r = run(&cfg, None).unwrap();
        assert_eq!(r.skipped.len(), 2);
        assert_eq!(r.runs.len(), 6);
    }

    #[test]
    fn weak_label_kinds_run() {
        let mut cll = tiny("cll", "");
        cll.data.classes = 3;
        cll.data.dim = 3;
        cll.seeds = vec![0];
        assert_eq!(run(&cll, None).unwrap().runs.len(), 3);
        let mut pll = tiny("pll", "");
        pll.data.classes = 3;
        pll.data.dim = 3;
        pll.seeds = vec![0];
        assert_eq!(run(&pll, None).unwrap().runs.len(), 3);
    }
}
