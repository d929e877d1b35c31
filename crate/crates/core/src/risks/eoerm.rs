//! The stable surrogate risk itself.

use super::{Evaluation, OvaComposite, RiskReport, RiskTerm, ScoredBatch, Variant};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::synthdata::Regime;

pub(super) fn evaluate(batch: &ScoredBatch<'_>, loss: LossSpec, variant: Variant) -> Result<Evaluation> {
    let comp = OvaComposite::new(loss, batch.num_classes, batch.heads()?)?;
    match batch.regime {
        Regime::Pll => candidate_aggregated(batch, &comp, variant),
        _ => grouped(batch, &comp, variant),
    }
}

/// `Σ_s π_s Σ_y φ(A_{s,y} − flood_{s,y})`. For complementary-label groups the
/// term of the complementary class uses the flipped component loss with its
/// own flood level.
fn grouped(batch: &ScoredBatch<'_>, comp: &OvaComposite, variant: Variant) -> Result<Evaluation> {
    let k = batch.num_classes;
    let alpha = comp.alpha();
    let mut report = RiskReport::new("", Some(variant));
    let mut grads = batch.zero_grads();
    let mut vals = vec![0.0; k];
    for (s, g) in batch.groups.iter().enumerate() {
        if g.weight == 0.0 {
            continue;
        }
        if g.cond_priors.len() != k {
            return Err(Error::Shape(format!("group {s} has {} priors", g.cond_priors.len())));
        }
        let comp_label = if batch.regime == Regime::Cll {
            Some(g.label.ok_or_else(|| {
                Error::InvalidInput(format!("complementary group {s} has no label"))
            })?)
        } else {
            None
        };
        let mut means = vec![0.0; k];
        for i in 0..g.len() {
            comp.values_into(&g.row(i), &mut vals)?;
            let w = g.row_weight(i);
            for y in 0..k {
                means[y] += w * vals[y];
            }
        }
        let mut coefs = vec![0.0; k];
        for y in 0..k {
            let base_flood = (1.0 - g.cond_priors[y]) * alpha;
            let (a, flood, flip) = if comp_label == Some(y) {
                let off = comp.complementary_offset();
                (off - means[y], off - base_flood, -1.0)
            } else {
                (means[y], base_flood, 1.0)
            };
            let h = a - flood;
            let (phi, dphi) = variant.apply(h);
            let contribution = g.weight * phi;
            report.total += contribution;
            report.terms.push(RiskTerm {
                group: Some(s),
                label: Some(y),
                raw: h,
                flood,
                contribution,
            });
            coefs[y] = g.weight * dphi * flip;
        }
        if coefs.iter().all(|&c| c == 0.0) {
            continue;
        }
        let grad = &mut grads[s];
        let mut scaled = vec![0.0; k];
        for i in 0..g.len() {
            let w = g.row_weight(i);
            for y in 0..k {
                scaled[y] = w * coefs[y];
            }
            let mut row = grad.row_mut(i);
            let out = row.as_slice_mut().expect("fresh arrays are contiguous");
            comp.accumulate_weighted(&g.row(i), &scaled, out)?;
        }
    }
    report.objective = report.total;
    Ok(Evaluation { report, grads })
}

/// Per example: `φ(Σ_{y∈S} 𝓛(f(x), y) − (|S| − 1)·α)`, averaged within each
/// group and weighted across groups.
fn candidate_aggregated(
    batch: &ScoredBatch<'_>,
    comp: &OvaComposite,
    variant: Variant,
) -> Result<Evaluation> {
    let k = batch.num_classes;
    let alpha = comp.alpha();
    let mut report = RiskReport::new("", Some(variant));
    let mut grads = batch.zero_grads();
    let mut vals = vec![0.0; k];
    let mut coefs = vec![0.0; k];
    for (s, g) in batch.groups.iter().enumerate() {
        if g.weight == 0.0 {
            continue;
        }
        let cands = g
            .candidates
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("group {s} has no candidate sets")))?;
        let (mut raw, mut flood_mean, mut group_total) = (0.0, 0.0, 0.0);
        for i in 0..g.len() {
            let set = cands[i];
            if set.is_empty() {
                return Err(Error::InvalidInput(format!("empty candidate set at row {i}")));
            }
            let row = g.row(i);
            comp.values_into(&row, &mut vals)?;
            let agg: f64 = set.iter().map(|y| vals[y]).sum();
            let flood = (set.len() as f64 - 1.0) * alpha;
            let h = agg - flood;
            let (phi, dphi) = variant.apply(h);
            let w = g.row_weight(i);
            raw += w * h;
            flood_mean += w * flood;
            group_total += w * phi;
            let scale = g.weight * w * dphi;
            if scale != 0.0 {
                coefs.iter_mut().enumerate().for_each(|(y, c)| {
                    *c = if set.contains(y) { scale } else { 0.0 };
                });
                let mut grow = grads[s].row_mut(i);
                comp.accumulate_weighted(&row, &coefs, grow.as_slice_mut().expect("contiguous"))?;
            }
        }
        let contribution = g.weight * group_total;
        report.total += contribution;
        report.terms.push(RiskTerm {
            group: Some(s),
            label: None,
            raw,
            flood: flood_mean,
            contribution,
        });
    }
    report.objective = report.total;
    Ok(Evaluation { report, grads })
}
