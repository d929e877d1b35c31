//! Accuracy as a function of the prior gap between two unlabeled groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::synthdata::{sample_weak_groups, PriorMatrix, Source};
use crate::trainer::{train, MetricsRecord, TrainConfig};

pub const DEFAULT_DELTA_GRID: [f64; 8] = [0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScanConfig {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_per_group: usize,
    pub n_test: usize,
    /// Template for every run; its seed is replaced by the run seed.
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRun {
    pub delta: f64,
    pub seed: u64,
    pub metrics: MetricsRecord,
}

/// Seed-aggregated point of the curve; standard deviations use `n − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPoint {
    pub delta: f64,
    pub acc: f64,
    pub acc_std: f64,
    pub macro_f1: f64,
    pub macro_f1_std: f64,
    pub nll: f64,
    pub nll_std: f64,
    pub ece: f64,
    pub ece_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScan {
    /// Sorted by `(delta, seed)`.
    pub runs: Vec<DeltaRun>,
    /// Sorted by `delta`.
    pub curve: Vec<DeltaPoint>,
}

impl DeltaScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,acc,acc_std,macro_f1,macro_f1_std,nll,nll_std,ece,ece_std\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.delta, p.acc, p.acc_std, p.macro_f1, p.macro_f1_std, p.nll, p.nll_std, p.ece, p.ece_std
            ));
        }
        out
    }
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains one model per `(Δ, seed)` on groups with positive fractions
/// `0.5 − Δ/2` and `0.5 + Δ/2`, and evaluates on a labeled test draw.
pub fn delta_scan(source: &Source, cfg: &DeltaScanConfig) -> Result<DeltaScan> {
    if source.num_classes() != 2 {
        return Err(Error::InvalidInput("the gap scan needs a binary source".into()));
    }
    if cfg.seeds.is_empty() || cfg.grid.is_empty() {
        return Err(Error::InvalidInput("empty grid or seed list".into()));
    }
    for (i, &d) in cfg.grid.iter().enumerate() {
        if d == 0.0 {
            return Err(Error::NotIdentifiable(format!("grid[{i}] is zero: identical groups")));
        }
        if !(0.0 < d && d <= 1.0) {
            return Err(Error::validation(format!("grid[{i}]"), "must lie in (0, 1]"));
        }
    }
    let jobs: Vec<(f64, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(delta, seed)| -> Result<DeltaRun> {
            let priors = PriorMatrix::binary_pair(0.5 - delta / 2.0, 0.5 + delta / 2.0)?;
            let data = sample_weak_groups(source, &priors, &[cfg.n_per_group; 2], derive_seed(seed, 0))?;
            let test = source.sample_labeled(cfg.n_test, derive_seed(seed, 1));
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = seed;
            let (_, hist) = train(&data.groups, Some(&test), &train_cfg)?;
            let metrics = hist
                .final_metrics()
                .cloned()
                .ok_or_else(|| Error::InvalidInput("training produced no evaluation".into()))?;
            Ok(DeltaRun { delta, seed, metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(a.seed.cmp(&b.seed)));
    let mut deltas: Vec<f64> = cfg.grid.clone();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let curve = deltas
        .iter()
        .map(|&d| {
            let at: Vec<&MetricsRecord> = runs.iter().filter(|r| r.delta == d).map(|r| &r.metrics).collect();
            let col = |f: fn(&MetricsRecord) -> f64| mean_std(&at.iter().map(|m| f(m)).collect::<Vec<_>>());
            let (acc, acc_std) = col(|m| m.acc);
            let (macro_f1, macro_f1_std) = col(|m| m.macro_f1);
            let (nll, nll_std) = col(|m| m.nll);
            let (ece, ece_std) = col(|m| m.ece);
            DeltaPoint {
                delta: d,
                acc,
                acc_std,
                macro_f1,
                macro_f1_std,
                nll,
                nll_std,
                ece,
                ece_std,
            }
        })
        .collect();
    Ok(DeltaScan { runs, curve })
}
