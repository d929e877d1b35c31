//! Minibatch training over weakly supervised groups.
//!
//! The training path only ever sees [`WeakGroups`]; the labeled test set is
//! used for evaluation after each epoch and never reaches the objective.

mod metrics;

use std::borrow::Cow;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use metrics::{evaluate_metrics, evaluate_scores, predict_class, probabilities, ClassMetrics, MetricsRecord, ECE_BINS};

use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelSpec, Optimizer};
use crate::risks::{Objective, ScoredBatch, ScoredGroup};
use crate::rng::{derive_seed, rng_for, Rng};
use crate::synthdata::{LabeledSet, WeakGroups};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Steps per epoch; `None` means `⌈min_s n_s / batch⌉`.
    pub iterations: Option<usize>,
    /// Rows drawn from every group per step; `None` trains on full groups.
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    pub objective: Objective,
    /// Architecture name understood by [`ModelSpec::from_name`].
    pub arch: String,
    pub seed: u64,
    /// Evaluate on the test set every this many epochs (and after the last).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective, seed: u64) -> Self {
        Self {
            epochs: 100,
            iterations: None,
            batch_size: Some(256),
            optimizer: Optimizer::adam(1e-3),
            objective,
            arch: "linear".into(),
            seed,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch risk over the epoch.
    pub train_risk: f64,
    pub metrics: Option<MetricsRecord>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Batch size actually used, after clamping to the smallest group.
    pub batch_size: Option<usize>,
    pub iterations: usize,
}

impl TrainHistory {
    /// One row per epoch: `epoch,train_risk,acc,macro_p,macro_r,macro_f1,nll,brier,ece`.
    /// Epochs without evaluation leave the metric columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_risk,acc,macro_p,macro_r,macro_f1,nll,brier,ece\n");
        for e in &self.epochs {
            write!(out, "{},{}", e.epoch, e.train_risk).unwrap();
            match &e.metrics {
                Some(m) => writeln!(
                    out,
                    ",{},{},{},{},{},{},{}",
                    m.acc, m.macro_p, m.macro_r, m.macro_f1, m.nll, m.brier, m.ece
                )
                .unwrap(),
                None => out.push_str(",,,,,,,\n"),
            }
        }
        out
    }

    pub fn final_metrics(&self) -> Option<&MetricsRecord> {
        self.epochs.iter().rev().find_map(|e| e.metrics.as_ref())
    }
}

/// Per-group shuffled order with a cursor; a group is reshuffled each time
/// it runs out, so every row is visited once per pass.
struct GroupCursor {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl GroupCursor {
    fn new(n: usize, rng: Rng) -> Self {
        let mut c = Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn take(&mut self, b: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            let k = (b - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + k]);
            self.pos += k;
        }
        out
    }
}

/// Initial model for a configuration, before any step.
pub fn init_model(groups: &WeakGroups, cfg: &TrainConfig) -> Result<Model> {
    let heads = cfg.objective.heads(groups.num_classes);
    let spec = ModelSpec::from_name(&cfg.arch, groups.dim(), heads)?;
    Model::new(spec, derive_seed(cfg.seed, 0x1417))
}

/// Runs `epochs × iterations` steps of stratified minibatch training.
pub fn train(groups: &WeakGroups, test: Option<&LabeledSet>, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let mut model = init_model(groups, cfg)?;
    let history = train_from(&mut model, groups, test, cfg)?;
    Ok((model, history))
}

/// As [`train`], starting from an existing model.
pub fn train_from(
    model: &mut Model,
    groups: &WeakGroups,
    test: Option<&LabeledSet>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    groups.validate()?;
    cfg.objective.check_regime(groups.regime, groups.num_classes)?;
    if cfg.epochs == 0 {
        return Err(Error::validation("epochs", "must be at least 1"));
    }
    if cfg.eval_every == 0 {
        return Err(Error::validation("eval_every", "must be at least 1"));
    }
    let active: Vec<usize> = (0..groups.groups.len())
        .filter(|&s| !groups.groups[s].is_empty())
        .collect();
    if active.is_empty() {
        return Err(Error::InvalidInput("every group is empty".into()));
    }
    let smallest = active.iter().map(|&s| groups.groups[s].len()).min().unwrap();
    let batch = cfg.batch_size.map(|b| b.clamp(1, smallest));
    if cfg.batch_size == Some(0) {
        return Err(Error::validation("batch_size", "must be at least 1"));
    }
    let iterations = match (cfg.iterations, batch) {
        (Some(i), _) => i,
        (None, Some(b)) => smallest.div_ceil(b),
        (None, None) => 1,
    };
    let mut cursors: Vec<Option<GroupCursor>> = (0..groups.groups.len())
        .map(|s| {
            let n = groups.groups[s].len();
            (n > 0).then(|| GroupCursor::new(n, rng_for(cfg.seed, 0x5EED_0000 + s as u64)))
        })
        .collect();
    let mut opt = cfg.optimizer.state(model.num_params());
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        batch_size: batch,
        iterations,
    };
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let mut risk_sum = 0.0;
        for it in 0..iterations {
            let picks: Vec<Option<Vec<usize>>> = cursors
                .iter_mut()
                .map(|c| c.as_mut().map(|c| match batch {
                    Some(b) => c.take(b),
                    None => (0..c.order.len()).collect(),
                }))
                .collect();
            let risk = step(model, groups, &picks, cfg, &mut opt).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, iteration {it}: {msg}")),
                other => other,
            })?;
            risk_sum += risk;
        }
        let train_risk = if iterations > 0 { risk_sum / iterations as f64 } else { f64::NAN };
        let metrics = match test {
            Some(t) if epoch % cfg.eval_every == 0 || epoch == cfg.epochs => Some(evaluate_metrics(&*model, t)?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_risk,
            metrics,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

fn step(
    model: &mut Model,
    groups: &WeakGroups,
    picks: &[Option<Vec<usize>>],
    cfg: &TrainConfig,
    opt: &mut crate::model::OptimizerState,
) -> Result<f64> {
    let d = groups.dim();
    let mut parts: Vec<Array2<f64>> = Vec::with_capacity(picks.len());
    let mut bounds = Vec::with_capacity(picks.len());
    let mut offset = 0;
    for (g, pick) in groups.groups.iter().zip(picks) {
        let rows = match pick {
            Some(idx) => g.x.select(Axis(0), idx),
            None => Array2::zeros((0, d)),
        };
        bounds.push((offset, offset + rows.nrows()));
        offset += rows.nrows();
        parts.push(rows);
    }
    let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let candidates: Vec<Option<Vec<_>>> = groups
        .groups
        .iter()
        .zip(picks)
        .map(|(g, pick)| match (&g.candidates, pick) {
            (Some(c), Some(idx)) => Some(idx.iter().map(|&i| c[i]).collect()),
            (Some(_), None) => Some(Vec::new()),
            _ => None,
        })
        .collect();
    let mut report_total = 0.0;
    let (_, tape, stats) = model.loss_and_grad(x.view(), Mode::Train, |scores| {
        let scored: Vec<ScoredGroup<'_>> = groups
            .groups
            .iter()
            .zip(&bounds)
            .zip(&candidates)
            .map(|((g, &(lo, hi)), cands)| ScoredGroup {
                scores: scores.slice(s![lo..hi, ..]),
                weight: if hi > lo { g.weight } else { 0.0 },
                cond_priors: &g.cond_priors,
                row_weights: None,
                candidates: cands.as_deref().map(Cow::Borrowed),
                label: g.label,
            })
            .collect();
        let batch = ScoredBatch {
            regime: groups.regime,
            num_classes: groups.num_classes,
            groups: scored,
        };
        let eval = cfg.objective.evaluate(&batch)?;
        report_total = eval.report.total;
        let mut dscores = Array2::zeros(scores.raw_dim());
        for (grad, &(lo, hi)) in eval.grads.iter().zip(&bounds) {
            dscores.slice_mut(s![lo..hi, ..]).assign(grad);
        }
        Ok((eval.report.objective, dscores))
    })?;
    opt.step(model.params_mut(), &tape)?;
    model.update_running(&stats);
    Ok(report_total)
}
