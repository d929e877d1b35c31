//! Baseline estimators: unbiased rewrites with non-negativity corrections,
//! partial-risk regularization, and softmax losses for complementary and
//! partial labels.

use nalgebra::DMatrix;
use ndarray::Array2;

use super::{sign0, Correction, Evaluation, OvaComposite, RiskReport, RiskTerm, ScoredBatch, ScoredGroup};
use crate::error::{Error, Result};
use crate::losses::{LossSpec, Sign};

/// Coefficients `(a, b, c, d)` such that
/// `a·E_1[ℓ(f,+1)] + b·E_2[ℓ(f,+1)] + c·E_1[ℓ(f,−1)] + d·E_2[ℓ(f,−1)]`
/// equals `π_test·E_P[ℓ(f,+1)] + (1−π_test)·E_N[ℓ(f,−1)]`, where group `s`
/// has positive fraction `θ_s`.
pub fn uu_coefficients(theta1: f64, theta2: f64, test_prior: f64) -> Result<[f64; 4]> {
    let delta = theta1 - theta2;
    if delta == 0.0 {
        return Err(Error::NotIdentifiable(format!(
            "both groups have positive fraction {theta1}"
        )));
    }
    Ok([
        test_prior * (1.0 - theta2) / delta,
        -test_prior * (1.0 - theta1) / delta,
        -(1.0 - test_prior) * theta2 / delta,
        (1.0 - test_prior) * theta1 / delta,
    ])
}

/// Means of `ℓ(f,+1)` and `ℓ(f,−1)` over a single-head group, and adds the
/// gradient of `cp·mean⁺ + cn·mean⁻` into `grad` when requested.
fn binary_means(
    g: &ScoredGroup<'_>,
    loss: LossSpec,
    grad: Option<(&mut Array2<f64>, f64, f64)>,
) -> Result<(f64, f64)> {
    let (mut mp, mut mn) = (0.0, 0.0);
    match grad {
        None => {
            for i in 0..g.len() {
                let z = g.scores[[i, 0]];
                let w = g.row_weight(i);
                mp += w * loss.value(z, Sign::Pos);
                mn += w * loss.value(z, Sign::Neg);
            }
        }
        Some((out, cp, cn)) => {
            for i in 0..g.len() {
                let z = g.scores[[i, 0]];
                let w = g.row_weight(i);
                let (vp, gp) = loss.eval(z, Sign::Pos)?;
                let (vn, gn) = loss.eval(z, Sign::Neg)?;
                mp += w * vp;
                mn += w * vn;
                out[[i, 0]] += w * (cp * gp + cn * gn);
            }
        }
    }
    Ok((mp, mn))
}

fn require_single_head(batch: &ScoredBatch<'_>) -> Result<()> {
    if batch.groups.iter().any(|g| g.heads() != 1) {
        return Err(Error::Shape("binary rewrites need a single score head".into()));
    }
    Ok(())
}

pub(super) fn uu_corrected(
    batch: &ScoredBatch<'_>,
    loss: LossSpec,
    correction: Correction,
    test_prior: Option<f64>,
) -> Result<Evaluation> {
    require_single_head(batch)?;
    if batch.groups.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "corrected two-group risk needs exactly two groups, got {}",
            batch.groups.len()
        )));
    }
    let (g1, g2) = (&batch.groups[0], &batch.groups[1]);
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::InvalidInput("both groups must be non-empty".into()));
    }
    let (t1, t2) = (g1.cond_priors[0], g2.cond_priors[0]);
    let pt = test_prior.unwrap_or((t1 + t2) / 2.0);
    let [a, b, c, d] = uu_coefficients(t1, t2, pt)?;
    let (p1, n1) = binary_means(g1, loss, None)?;
    let (p2, n2) = binary_means(g2, loss, None)?;
    let pos = a * p1 + b * p2;
    let neg = c * n1 + d * n2;
    let (vp, dp) = correction.apply(pos);
    let (vn, dn) = correction.apply(neg);
    let mut grads = batch.zero_grads();
    binary_means(g1, loss, Some((&mut grads[0], dp * a, dn * c)))?;
    binary_means(g2, loss, Some((&mut grads[1], dp * b, dn * d)))?;
    let mut report = RiskReport::new("", None);
    report.total = vp + vn;
    report.objective = report.total;
    for (label, raw, contribution) in [(0, pos, vp), (1, neg, vn)] {
        report.terms.push(RiskTerm {
            group: None,
            label: Some(label),
            raw,
            flood: 0.0,
            contribution,
        });
    }
    Ok(Evaluation { report, grads })
}

/// `π·R_P⁺ + φ(R_U⁻ − π·R_P⁻)` with the class prior read from the unlabeled
/// group (group 1); group 0 holds the positives.
pub(super) fn pu(batch: &ScoredBatch<'_>, loss: LossSpec, correction: Correction) -> Result<Evaluation> {
    require_single_head(batch)?;
    if batch.groups.len() != 2 {
        return Err(Error::InvalidInput("PU risk needs a positive and an unlabeled group".into()));
    }
    let (gp, gu) = (&batch.groups[0], &batch.groups[1]);
    if gp.cond_priors[0] != 1.0 {
        return Err(Error::InvalidInput("group 0 must be the positive group".into()));
    }
    if gp.is_empty() {
        return Err(Error::InvalidInput("positive group is empty".into()));
    }
    if gu.is_empty() {
        return Err(Error::InvalidInput("unlabeled group is empty".into()));
    }
    let prior = gu.cond_priors[0];
    let (pp, pn) = binary_means(gp, loss, None)?;
    let (_, un) = binary_means(gu, loss, None)?;
    let pos = prior * pp;
    let neg = un - prior * pn;
    let (vn, dn) = correction.apply(neg);
    let mut grads = batch.zero_grads();
    binary_means(gp, loss, Some((&mut grads[0], prior, -prior * dn)))?;
    binary_means(gu, loss, Some((&mut grads[1], 0.0, dn)))?;
    let mut report = RiskReport::new("", None);
    report.total = pos + vn;
    report.objective = report.total;
    report.terms.push(RiskTerm {
        group: Some(0),
        label: Some(0),
        raw: pos,
        flood: 0.0,
        contribution: pos,
    });
    report.terms.push(RiskTerm {
        group: None,
        label: Some(1),
        raw: neg,
        flood: 0.0,
        contribution: vn,
    });
    Ok(Evaluation { report, grads })
}

/// Weights `w[m][k] = θ_k · (Π⁺)_{k,m}` of the unbiased multi-group rewrite
/// and whether `Π` lacks full column rank.
pub fn uprr_weights(rows: &[Vec<f64>], class_weights: &[f64]) -> Result<(Vec<Vec<f64>>, bool)> {
    let m = rows.len();
    let k = class_weights.len();
    if m == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("prior rows must match the class weights".into()));
    }
    let pi = DMatrix::from_fn(m, k, |i, j| rows[i][j]);
    let rank = pi.rank(1e-10);
    let pinv = pi
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numeric(format!("pseudo-inverse failed: {e}")))?;
    let w = (0..m)
        .map(|mi| (0..k).map(|ki| class_weights[ki] * pinv[(ki, mi)]).collect())
        .collect();
    Ok((w, rank < k))
}

fn predict(row: &[f64]) -> usize {
    if row.len() == 1 {
        return if row[0] >= 0.0 { 0 } else { 1 };
    }
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(super) fn uprr(
    batch: &ScoredBatch<'_>,
    loss: LossSpec,
    alpha_mix: f64,
    class_weights: Option<&[f64]>,
) -> Result<Evaluation> {
    if !(0.0..=1.0).contains(&alpha_mix) {
        return Err(Error::validation("alpha_mix", "must lie in [0, 1]"));
    }
    let k = batch.num_classes;
    let comp = OvaComposite::new(loss, k, batch.heads()?)?;
    let theta = match class_weights {
        Some(t) => t.to_vec(),
        None => vec![1.0 / k as f64; k],
    };
    let rows: Vec<Vec<f64>> = batch.groups.iter().map(|g| g.cond_priors.to_vec()).collect();
    let (w, deficient) = uprr_weights(&rows, &theta)?;
    let mut report = RiskReport::new("", None);
    if deficient {
        if alpha_mix < 1.0 {
            return Err(Error::NotIdentifiable(
                "prior matrix lacks full column rank; partial-risk weights are undefined".into(),
            ));
        }
        report.warnings.push("prior matrix lacks full column rank".into());
    }
    let alpha = comp.alpha();
    let mut grads = batch.zero_grads();
    let mut vals = vec![0.0; k];
    let mut unbiased = 0.0;
    let mut reg_value = 0.0;
    let mut reg_objective = 0.0;
    for (m, g) in batch.groups.iter().enumerate() {
        if g.is_empty() {
            if w[m].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidInput(format!("group {m} is empty")));
            }
            continue;
        }
        let mut surrogate = vec![0.0; k];
        let mut zero_one = vec![0.0; k];
        for i in 0..g.len() {
            let row = g.row(i);
            comp.values_into(&row, &mut vals)?;
            let pred = predict(&row);
            let wi = g.row_weight(i);
            for y in 0..k {
                surrogate[y] += wi * vals[y];
                if pred != y {
                    zero_one[y] += wi;
                }
            }
        }
        let mut coefs = vec![0.0; k];
        for y in 0..k {
            let lambda = w[m][y].abs();
            let flood = 1.0 - g.cond_priors[y];
            let dev = zero_one[y] - flood;
            let s = sign0(dev);
            unbiased += w[m][y] * surrogate[y];
            reg_value += lambda * dev.abs();
            reg_objective += lambda * s * surrogate[y] / alpha;
            coefs[y] = alpha_mix * w[m][y] + (1.0 - alpha_mix) * lambda * s / alpha;
            report.terms.push(RiskTerm {
                group: Some(m),
                label: Some(y),
                raw: dev,
                flood,
                contribution: alpha_mix * w[m][y] * surrogate[y]
                    + (1.0 - alpha_mix) * lambda * dev.abs(),
            });
        }
        for i in 0..g.len() {
            let wi = g.row_weight(i);
            let scaled: Vec<f64> = coefs.iter().map(|c| c * wi).collect();
            let mut grow = grads[m].row_mut(i);
            comp.accumulate_weighted(&g.row(i), &scaled, grow.as_slice_mut().expect("contiguous"))?;
        }
    }
    report.total = alpha_mix * unbiased + (1.0 - alpha_mix) * reg_value;
    report.objective = alpha_mix * unbiased + (1.0 - alpha_mix) * reg_objective;
    Ok(Evaluation { report, grads })
}

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `−log(1 − softmax_ȳ)` per row, computed as `lse(z) − lse_{j≠ȳ}(z)`.
pub(super) fn cce(batch: &ScoredBatch<'_>, scaled: bool) -> Result<Evaluation> {
    let k = batch.num_classes;
    let scale = if scaled { k as f64 - 1.0 } else { 1.0 };
    let mut report = RiskReport::new("", None);
    let mut grads = batch.zero_grads();
    for (s, g) in batch.groups.iter().enumerate() {
        if g.weight == 0.0 {
            continue;
        }
        let bar = g
            .label
            .ok_or_else(|| Error::InvalidInput(format!("group {s} has no complementary label")))?;
        let mut mean = 0.0;
        for i in 0..g.len() {
            let row = g.row(i);
            let all = log_sum_exp(row.iter().copied());
            let rest = log_sum_exp(row.iter().enumerate().filter(|(j, _)| *j != bar).map(|(_, &v)| v));
            let w = g.row_weight(i);
            mean += w * (all - rest);
            let p_bar = (row[bar] - all).exp();
            let c = g.weight * w * scale;
            for j in 0..k {
                let d = if j == bar {
                    p_bar
                } else {
                    // −p_ȳ · softmax over the non-complementary heads
                    -p_bar * (row[j] - rest).exp()
                };
                grads[s][[i, j]] += c * d;
            }
        }
        let contribution = g.weight * scale * mean;
        report.total += contribution;
        report.terms.push(RiskTerm {
            group: Some(s),
            label: Some(bar),
            raw: scale * mean,
            flood: 0.0,
            contribution,
        });
    }
    report.objective = report.total;
    Ok(Evaluation { report, grads })
}

/// Uniform-target cross-entropy (`log_mass = false`) or negative log of the
/// candidate softmax mass (`log_mass = true`).
pub(super) fn pll_softmax(batch: &ScoredBatch<'_>, log_mass: bool) -> Result<Evaluation> {
    let k = batch.num_classes;
    let mut report = RiskReport::new("", None);
    let mut grads = batch.zero_grads();
    for (s, g) in batch.groups.iter().enumerate() {
        if g.weight == 0.0 {
            continue;
        }
        let cands = g
            .candidates
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("group {s} has no candidate sets")))?;
        let mut mean = 0.0;
        for i in 0..g.len() {
            let set = cands[i];
            if set.is_empty() {
                return Err(Error::InvalidInput(format!("empty candidate set at row {i}")));
            }
            let row = g.row(i);
            let all = log_sum_exp(row.iter().copied());
            let w = g.row_weight(i);
            let c = g.weight * w;
            let size = set.len() as f64;
            if log_mass {
                let inside = log_sum_exp(set.iter().map(|j| row[j]));
                mean += w * (all - inside);
                for j in 0..k {
                    let q = if set.contains(j) { (row[j] - inside).exp() } else { 0.0 };
                    grads[s][[i, j]] += c * ((row[j] - all).exp() - q);
                }
            } else {
                let avg: f64 = set.iter().map(|j| row[j]).sum::<f64>() / size;
                mean += w * (all - avg);
                for j in 0..k {
                    let t = if set.contains(j) { 1.0 / size } else { 0.0 };
                    grads[s][[i, j]] += c * ((row[j] - all).exp() - t);
                }
            }
        }
        let contribution = g.weight * mean;
        report.total += contribution;
        report.terms.push(RiskTerm {
            group: Some(s),
            label: None,
            raw: mean,
            flood: 0.0,
            contribution,
        });
    }
    report.objective = report.total;
    Ok(Evaluation { report, grads })
}
