//! Held-out classification metrics computed from raw scores.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::LabeledSet;

pub const ECE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub acc: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes with no test examples, left out of the macro averages.
    pub skipped_classes: Vec<usize>,
}

/// Predicted class: a single head picks class 0 iff its score is ≥ 0,
/// several heads pick the argmax (lowest index on ties).
pub fn predict_class(scores: &[f64]) -> usize {
    if scores.len() == 1 {
        return if scores[0] >= 0.0 { 0 } else { 1 };
    }
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities: the logistic sigmoid for one head, softmax otherwise.
pub fn probabilities(scores: ArrayView2<'_, f64>, num_classes: usize) -> Array2<f64> {
    let n = scores.nrows();
    let mut p = Array2::zeros((n, num_classes));
    for (i, row) in scores.outer_iter().enumerate() {
        if row.len() == 1 {
            let p0 = crate::losses::sigmoid(row[0]);
            p[[i, 0]] = p0;
            p[[i, 1]] = 1.0 - p0;
        } else {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (k, v) in row.iter().enumerate() {
                p[[i, k]] = (v - max).exp() / z;
            }
        }
    }
    p
}

/// Natural-log likelihood of class `y`, computed stably from the scores.
fn log_prob(row: &[f64], y: usize) -> f64 {
    if row.len() == 1 {
        let m = if y == 0 { row[0] } else { -row[0] };
        return -crate::losses::softplus(-m);
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[y] - lse
}

pub fn evaluate_scores(scores: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<MetricsRecord> {
    let n = labels.len();
    if n == 0 || scores.nrows() != n {
        return Err(Error::Shape("scores and labels must be non-empty and aligned".into()));
    }
    let probs = probabilities(scores, num_classes);
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let (mut correct, mut nll, mut brier) = (0usize, 0.0, 0.0);
    let mut bin_count = [0usize; ECE_BINS];
    let mut bin_conf = [0.0; ECE_BINS];
    let mut bin_hits = [0usize; ECE_BINS];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::InvalidInput(format!("label {y} out of range")));
        }
        let row: Vec<f64> = scores.row(i).to_vec();
        let pred = predict_class(&row);
        confusion[y][pred] += 1;
        let hit = pred == y;
        correct += hit as usize;
        nll -= log_prob(&row, y);
        for k in 0..num_classes {
            let t = if k == y { 1.0 } else { 0.0 };
            brier += (probs[[i, k]] - t).powi(2);
        }
        let conf = probs.row(i).iter().copied().fold(0.0, f64::max);
        let b = ((conf * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        bin_count[b] += 1;
        bin_conf[b] += conf;
        bin_hits[b] += hit as usize;
    }
    let nf = n as f64;
    let ece = (0..ECE_BINS)
        .filter(|&b| bin_count[b] > 0)
        .map(|b| {
            let c = bin_count[b] as f64;
            (c / nf) * (bin_hits[b] as f64 / c - bin_conf[b] / c).abs()
        })
        .sum();
    let mut per_class = Vec::with_capacity(num_classes);
    let mut skipped = Vec::new();
    let (mut sp, mut sr, mut sf, mut counted) = (0.0, 0.0, 0.0, 0usize);
    for k in 0..num_classes {
        let tp = confusion[k][k] as f64;
        let support: usize = confusion[k].iter().sum();
        let predicted: usize = (0..num_classes).map(|t| confusion[t][k]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support == 0 {
            skipped.push(k);
        } else {
            sp += precision;
            sr += recall;
            sf += f1;
            counted += 1;
        }
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    let c = counted as f64;
    Ok(MetricsRecord {
        acc: correct as f64 / nf,
        macro_p: sp / c,
        macro_r: sr / c,
        macro_f1: sf / c,
        nll: nll / nf,
        brier: brier / nf,
        ece,
        per_class,
        skipped_classes: skipped,
    })
}

/// Metrics of `scorer` on a labeled test set.
pub fn evaluate_metrics(scorer: &dyn crate::risks::Scorer, test: &LabeledSet) -> Result<MetricsRecord> {
    let scores = scorer.score(test.x.view())?;
    evaluate_scores(scores.view(), &test.y, test.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_predictions() {
        let s = array![[50.0, -50.0, -50.0], [-50.0, 50.0, -50.0], [-50.0, -50.0, 50.0]];
        let m = evaluate_scores(s.view(), &[0, 1, 2], 3).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert!(m.ece < 1e-12 && m.brier < 1e-12 && m.nll < 1e-12);
    }

    #[test]
    fn hand_built_confusion() {
        // truth 0,0,1,1 ; predictions 0,1,1,1 with a single head
        let s = array![[1.0], [-1.0], [-2.0], [-0.5]];
        let m = evaluate_scores(s.view(), &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.acc, 0.75);
        let c0 = &m.per_class[0];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15);
        let c1 = &m.per_class[1];
        assert!((c1.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c1.recall, 1.0);
        assert!((c1.f1 - 0.8).abs() < 1e-15);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_skipped() {
        let s = array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let m = evaluate_scores(s.view(), &[0, 1], 3).unwrap();
        assert_eq!(m.skipped_classes, vec![2]);
        assert_eq!(m.macro_r, 1.0);
    }

    #[test]
    fn nll_and_brier_closed_form() {
        let s = array![[0.0]];
        let m = evaluate_scores(s.view(), &[1], 2).unwrap();
        assert!((m.nll - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((m.brier - 0.5).abs() < 1e-15);
        // a zero score ties to class 0, wrong here, confidence 0.5
        assert_eq!(m.acc, 0.0);
        assert!((m.ece - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_scores_are_near_chance() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_for(4, 0);
        let n = 4000;
        let s = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let m = evaluate_scores(s.view(), &y, 2).unwrap();
        let sd = (0.25 / n as f64).sqrt();
        assert!((m.acc - 0.5).abs() < 3.0 * sd, "{}", m.acc);
    }
}
