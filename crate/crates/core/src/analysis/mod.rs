//! Numerical checks of the theory: exact oracle risks, the two-group
//! contrast and its deviation interval, total variation, prior
//! misspecification bias, generalization-bound plug-ins, and rate fitting.

mod rademacher;
mod scan;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use rademacher::{empirical_rademacher, RademacherClass, RademacherEstimate};
pub(crate) use scan::mean_std;
pub use scan::{delta_scan, DeltaPoint, DeltaRun, DeltaScan, DeltaScanConfig, DEFAULT_DELTA_GRID};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::risks::{eoerm_risk, OvaComposite, Scorer, Variant};
use crate::synthdata::{DiscreteMixture, WeakGroups};

/// Bayes rule of a finite mixture and its 0-1 risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOracle {
    /// Predicted class per support point (argmax posterior, lowest index on ties).
    pub labeling: Vec<usize>,
    pub risk01: f64,
    pub realizable: bool,
}

pub fn oracle_bayes(mix: &DiscreteMixture) -> BayesOracle {
    let mut labeling = Vec::with_capacity(mix.num_points());
    let mut risk = 0.0;
    for j in 0..mix.num_points() {
        let joints: Vec<f64> = (0..mix.num_classes()).map(|k| mix.joint(k, j)).collect();
        let mut best = 0;
        for (k, &p) in joints.iter().enumerate() {
            if p > joints[best] {
                best = k;
            }
        }
        let total: f64 = joints.iter().sum();
        risk += total - joints[best];
        labeling.push(best);
    }
    BayesOracle {
        labeling,
        risk01: risk,
        realizable: risk == 0.0,
    }
}

/// Scores `±margin` from a fixed class per support point; lets a labeling
/// (such as the Bayes rule) act as a scorer on exact groups.
#[derive(Debug, Clone)]
pub struct LabelingScorer {
    points: Array2<f64>,
    classes: Vec<usize>,
    heads: usize,
    margin: f64,
}

impl LabelingScorer {
    pub fn new(mix: &DiscreteMixture, classes: Vec<usize>, heads: usize, margin: f64) -> Result<Self> {
        if classes.len() != mix.num_points() {
            return Err(Error::Shape("one class per support point".into()));
        }
        Ok(Self {
            points: mix.points().clone(),
            classes,
            heads,
            margin,
        })
    }
}

impl Scorer for LabelingScorer {
    fn heads(&self) -> usize {
        self.heads
    }

    fn score(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::from_elem((x.nrows(), self.heads), -self.margin);
        for (i, row) in x.outer_iter().enumerate() {
            let j = self
                .points
                .outer_iter()
                .position(|p| p == row)
                .ok_or_else(|| Error::InvalidInput(format!("row {i} is not a support point")))?;
            let c = self.classes[j];
            if self.heads == 1 {
                out[[i, 0]] = if c == 0 { self.margin } else { -self.margin };
            } else {
                out[[i, c]] = self.margin;
            }
        }
        Ok(out)
    }
}

/// `Σ_k w_k Σ_x p(x | k) 𝓛(f(x), k)` by full summation.
pub fn exact_supervised_risk(
    mix: &DiscreteMixture,
    scorer: &dyn Scorer,
    comp: &OvaComposite,
    class_weights: &[f64],
) -> Result<f64> {
    if class_weights.len() != mix.num_classes() {
        return Err(Error::Shape("one weight per class".into()));
    }
    let scores = scorer.score(mix.points().view())?;
    let mut total = 0.0;
    for j in 0..mix.num_points() {
        let row = scores.row(j).to_vec();
        for (k, &w) in class_weights.iter().enumerate() {
            total += w * mix.cond_pmf()[[k, j]] * comp.value(&row, k)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRecord {
    /// `mean_{D1} h − mean_{D2} h`.
    pub contrast: f64,
    /// `|π1 − π2|`.
    pub delta: f64,
    /// Estimated `E_P h − E_N h`, the contrast divided by `π1 − π2`.
    pub delta_pn: f64,
    /// Hoeffding half-width of `delta_pn` at confidence `1 − δ`.
    pub halfwidth: f64,
}

fn weighted_mean(values: ArrayView1<'_, f64>, weights: Option<ArrayView1<'_, f64>>) -> f64 {
    match weights {
        Some(w) => values.iter().zip(w.iter()).map(|(v, w)| v * w).sum(),
        None => values.mean().unwrap_or(0.0),
    }
}

/// Contrast of a bounded statistic `h` between two groups with positive
/// fractions `π1`, `π2`. `h1`, `h2` are the statistic's values on each
/// group; optional weights turn the means into exact expectations.
#[allow(clippy::too_many_arguments)]
pub fn contrast_and_gap(
    h1: ArrayView1<'_, f64>,
    h2: ArrayView1<'_, f64>,
    w1: Option<ArrayView1<'_, f64>>,
    w2: Option<ArrayView1<'_, f64>>,
    pi1: f64,
    pi2: f64,
    bound: f64,
    confidence_delta: f64,
) -> Result<ContrastRecord> {
    let gap = pi1 - pi2;
    if gap == 0.0 {
        return Err(Error::NotIdentifiable(
            "equal positive fractions: the contrast carries no class signal".into(),
        ));
    }
    if h1.is_empty() || h2.is_empty() {
        return Err(Error::InvalidInput("both groups need samples".into()));
    }
    if !(0.0 < confidence_delta && confidence_delta < 1.0) {
        return Err(Error::validation("delta", "must lie in (0, 1)"));
    }
    let contrast = weighted_mean(h1, w1) - weighted_mean(h2, w2);
    let (n1, n2) = (h1.len() as f64, h2.len() as f64);
    let delta = gap.abs();
    Ok(ContrastRecord {
        contrast,
        delta,
        delta_pn: contrast / gap,
        halfwidth: bound / delta * (2.0 * (2.0 / confidence_delta).ln()).sqrt() * (1.0 / n1 + 1.0 / n2).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvRecord {
    pub tv_p12: f64,
    /// `Δ · TV(P, N)`.
    pub delta_tv_pn: f64,
    pub equality_gap: f64,
}

/// Total variation between the two group marginals against `Δ·TV(P, N)`,
/// both by exact L1 summation over a binary mixture.
pub fn tv_check(mix: &DiscreteMixture, pi1: f64, pi2: f64) -> Result<TvRecord> {
    if mix.num_classes() != 2 {
        return Err(Error::InvalidInput("total-variation check needs two classes".into()));
    }
    let p1 = mix.mixture_pmf(&[pi1, 1.0 - pi1]);
    let p2 = mix.mixture_pmf(&[pi2, 1.0 - pi2]);
    let cond = mix.cond_pmf();
    let tv_p12 = 0.5 * p1.iter().zip(p2.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let tv_pn = 0.5 * (0..mix.num_points()).map(|j| (cond[[0, j]] - cond[[1, j]]).abs()).sum::<f64>();
    let delta_tv_pn = (pi1 - pi2).abs() * tv_pn;
    Ok(TvRecord {
        tv_p12,
        delta_tv_pn,
        equality_gap: (tv_p12 - delta_tv_pn).abs(),
    })
}

/// Terms of the risk bound under misspecified priors. All terms are ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub statistical_term: f64,
    /// `α Σ_s π_s Σ_y |π̂_{y|s} − π_{y|s}|`.
    pub prior_bias_term: f64,
    /// Group-weight misspecification term (see [`misspec_bias`]).
    pub group_weight_term: f64,
    pub total: f64,
}

/// Bias from using `used_cond` (and optionally `used_weights`) in place of
/// the true conditional priors and weights carried by `groups`.
///
/// Without a scorer the group-weight term is `K·α·Σ_s |π̂_s − π_s|`; with a
/// scorer it is the exact `Σ_s |π̂_s − π_s| Σ_y |A_{s,y}(f) − (1−π_{y|s})α|`.
pub fn misspec_bias(
    groups: &WeakGroups,
    used_cond: &[Vec<f64>],
    used_weights: Option<&[f64]>,
    alpha: f64,
    scorer: Option<(&dyn Scorer, LossSpec)>,
) -> Result<BoundReport> {
    if used_cond.len() != groups.groups.len() {
        return Err(Error::Shape("one prior vector per group".into()));
    }
    let k = groups.num_classes;
    let mut prior_bias = 0.0;
    for (g, used) in groups.groups.iter().zip(used_cond) {
        if used.len() != k {
            return Err(Error::Shape("prior vectors must have one entry per class".into()));
        }
        let l1: f64 = g.cond_priors.iter().zip(used).map(|(a, b)| (a - b).abs()).sum();
        prior_bias += g.weight * l1;
    }
    prior_bias *= alpha;
    let mut group_term = 0.0;
    if let Some(w) = used_weights {
        if w.len() != groups.groups.len() {
            return Err(Error::Shape("one weight per group".into()));
        }
        let diffs: Vec<f64> = groups.groups.iter().zip(w).map(|(g, u)| (u - g.weight).abs()).collect();
        match scorer {
            None => group_term = k as f64 * alpha * diffs.iter().sum::<f64>(),
            Some((f, loss)) => {
                let report = eoerm_risk(f, groups, loss, Variant::Abs)?;
                for t in &report.terms {
                    let s = t.group.expect("grouped terms");
                    group_term += diffs[s] * t.raw.abs();
                }
            }
        }
    }
    Ok(BoundReport {
        statistical_term: 0.0,
        prior_bias_term: prior_bias,
        group_weight_term: group_term,
        total: prior_bias + group_term,
    })
}

/// Per-group inputs of the generalization bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComplexity {
    pub weight: f64,
    /// Rademacher complexity of the class used for each label.
    pub rademacher: Vec<f64>,
    pub n: usize,
}

/// `2√2 Σ_s π_s Σ_y (2ρ R_{n_s}(G_y) + C_ℓ √(ln(2/δ)/n_s))`.
pub fn gen_bound_rhs(groups: &[GroupComplexity], rho: f64, c_loss: f64, delta: f64) -> Result<f64> {
    if rho < 0.0 || c_loss < 0.0 || !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidInput("need ρ, C ≥ 0 and δ in (0, 1)".into()));
    }
    let mut total = 0.0;
    for g in groups {
        if g.n == 0 {
            return Err(Error::InvalidInput("group sizes must be positive".into()));
        }
        let conc = c_loss * ((2.0 / delta).ln() / g.n as f64).sqrt();
        total += g.weight * g.rademacher.iter().map(|r| 2.0 * rho * r + conc).sum::<f64>();
    }
    Ok(2.0 * std::f64::consts::SQRT_2 * total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Indices of points dropped for a nonpositive error.
    pub excluded: Vec<usize>,
}

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn rate_slope(sizes: &[f64], errors: &[f64]) -> Result<RateFit> {
    if sizes.len() != errors.len() {
        return Err(Error::Shape("sizes and errors differ in length".into()));
    }
    if sizes.len() < 4 {
        return Err(Error::InvalidInput("need at least four sizes".into()));
    }
    let lo = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sizes.iter().copied().fold(0.0, f64::max);
    if lo <= 0.0 || hi / lo < 16.0 {
        return Err(Error::InvalidInput("sizes must be positive and span at least 16x".into()));
    }
    let mut excluded = Vec::new();
    let mut pts = Vec::new();
    for (i, (&n, &e)) in sizes.iter().zip(errors).enumerate() {
        if e > 0.0 && e.is_finite() {
            pts.push((n.ln(), e.ln()));
        } else {
            excluded.push(i);
        }
    }
    if pts.len() < 2 {
        return Err(Error::InvalidInput("fewer than two positive errors".into()));
    }
    let (slope, intercept) = ols(&pts);
    Ok(RateFit {
        slope,
        intercept,
        excluded,
    })
}

fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("need two equal-length series of length ≥ 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numeric("a series is constant".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}
