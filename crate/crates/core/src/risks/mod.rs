//! Stable surrogate risk (absolute, ReLU and identity variants) and the
//! baseline risk estimators it is compared against.
//!
//! Every estimator works on scored groups: the model's scores for each
//! group's rows plus the group's metadata. Evaluation returns a
//! [`RiskReport`] and the derivative of the training objective with respect
//! to every score, which the trainer backpropagates through the model.

mod baselines;
mod composite;
mod eoerm;

use std::borrow::Cow;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use baselines::{uprr_weights, uu_coefficients};
pub use composite::OvaComposite;

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::synthdata::{LabelSet, Regime, WeakGroups};

/// Outer function applied to each `A − flood` deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Abs,
    Relu,
    Identity,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Abs, Variant::Relu, Variant::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Abs => "ABS",
            Variant::Relu => "RELU",
            Variant::Identity => "IDENTITY",
        }
    }

    /// Value and derivative of the outer function. Kinks take derivative 0.
    pub fn apply(self, h: f64) -> (f64, f64) {
        match self {
            Variant::Abs => (h.abs(), sign0(h)),
            Variant::Relu => (h.max(0.0), if h > 0.0 { 1.0 } else { 0.0 }),
            Variant::Identity => (h, 1.0),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ABS" => Ok(Variant::Abs),
            "RELU" => Ok(Variant::Relu),
            "IDENTITY" => Ok(Variant::Identity),
            _ => Err(Error::InvalidInput(format!("unknown variant `{s}`"))),
        }
    }
}

/// Non-negativity correction applied to partial risks of the unbiased
/// rewrites. `None` leaves the rewrite unbiased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Correction {
    None,
    Abs,
    Relu,
}

impl Correction {
    pub fn apply(self, h: f64) -> (f64, f64) {
        match self {
            Correction::None => (h, 1.0),
            Correction::Abs => Variant::Abs.apply(h),
            Correction::Relu => Variant::Relu.apply(h),
        }
    }
}

pub(crate) fn sign0(h: f64) -> f64 {
    if h > 0.0 {
        1.0
    } else if h < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One `(group, label)` entry of a risk decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTerm {
    pub group: Option<usize>,
    pub label: Option<usize>,
    /// Deviation from the flood (`A − flood`), or the partial risk itself
    /// for estimators without a flood.
    pub raw: f64,
    pub flood: f64,
    /// What this term adds to the total.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub method: String,
    pub variant: Option<Variant>,
    pub total: f64,
    /// Value whose gradient is returned. Equal to `total` except for
    /// estimators that mix a piecewise-constant value with a surrogate
    /// gradient.
    pub objective: f64,
    pub terms: Vec<RiskTerm>,
    pub warnings: Vec<String>,
}

impl RiskReport {
    fn new(method: impl Into<String>, variant: Option<Variant>) -> Self {
        Self {
            method: method.into(),
            variant,
            total: 0.0,
            objective: 0.0,
            terms: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Plain-text record: `key=value` header lines, then one CSV row per term.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "method={}", self.method).unwrap();
        if let Some(v) = self.variant {
            writeln!(out, "variant={v}").unwrap();
        }
        writeln!(out, "total={}", self.total).unwrap();
        writeln!(out, "objective={}", self.objective).unwrap();
        for w in &self.warnings {
            writeln!(out, "warning={w}").unwrap();
        }
        writeln!(out, "group,label,raw,flood,contribution").unwrap();
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for t in &self.terms {
            writeln!(
                out,
                "{},{},{},{},{}",
                opt(t.group),
                opt(t.label),
                t.raw,
                t.flood,
                t.contribution
            )
            .unwrap();
        }
        out
    }
}

/// Scores for one group plus the metadata the estimators read.
#[derive(Debug, Clone)]
pub struct ScoredGroup<'a> {
    pub scores: ArrayView2<'a, f64>,
    pub weight: f64,
    pub cond_priors: &'a [f64],
    /// Exact-expectation weights summing to one; `None` means `1/n` each.
    pub row_weights: Option<ArrayView1<'a, f64>>,
    pub candidates: Option<Cow<'a, [LabelSet]>>,
    pub label: Option<usize>,
}

impl ScoredGroup<'_> {
    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn heads(&self) -> usize {
        self.scores.ncols()
    }

    /// Weight of row `i` in the group mean.
    pub fn row_weight(&self, i: usize) -> f64 {
        match &self.row_weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    fn row(&self, i: usize) -> Cow<'_, [f64]> {
        let r = self.scores.row(i);
        match r.to_slice() {
            Some(s) => Cow::Borrowed(s),
            None => Cow::Owned(r.to_vec()),
        }
    }
}

/// All groups of one evaluation.
#[derive(Debug, Clone)]
pub struct ScoredBatch<'a> {
    pub regime: Regime,
    pub num_classes: usize,
    pub groups: Vec<ScoredGroup<'a>>,
}

impl<'a> ScoredBatch<'a> {
    /// Pairs full groups with their scores (one score matrix per group).
    pub fn from_groups(groups: &'a WeakGroups, scores: &'a [Array2<f64>]) -> Result<Self> {
        if scores.len() != groups.groups.len() {
            return Err(Error::Shape(format!(
                "{} score matrices for {} groups",
                scores.len(),
                groups.groups.len()
            )));
        }
        let mut out = Vec::with_capacity(scores.len());
        for (g, s) in groups.groups.iter().zip(scores) {
            if s.nrows() != g.len() {
                return Err(Error::Shape("score rows differ from group rows".into()));
            }
            out.push(ScoredGroup {
                scores: s.view(),
                weight: g.weight,
                cond_priors: &g.cond_priors,
                row_weights: g.row_weights.as_ref().map(|w| w.view()),
                candidates: g.candidates.as_deref().map(Cow::Borrowed),
                label: g.label,
            });
        }
        Ok(Self {
            regime: groups.regime,
            num_classes: groups.num_classes,
            groups: out,
        })
    }

    fn heads(&self) -> Result<usize> {
        let h = self.groups.first().map(|g| g.heads()).unwrap_or(0);
        if self.groups.iter().any(|g| g.heads() != h) {
            return Err(Error::Shape("groups scored with different head counts".into()));
        }
        Ok(h)
    }

    fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.groups.iter().map(|g| Array2::zeros(g.scores.raw_dim())).collect()
    }
}

/// A report plus the derivative of `report.objective` with respect to every
/// score, one matrix per group.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: RiskReport,
    pub grads: Vec<Array2<f64>>,
}

/// Which training objective to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Stable surrogate risk. The regime picks the form: per-group OVA terms
    /// for mixture and complementary-label data, per-example candidate
    /// aggregation for partial-label data.
    Eoerm { loss: LossSpec, variant: Variant },
    /// Unbiased two-group rewrite with a per-class correction.
    UuCorrected {
        loss: LossSpec,
        correction: Correction,
        test_prior: Option<f64>,
    },
    /// Positive-unlabeled rewrite; `Relu` is nnPU, `Abs` is PU-ABS and
    /// `None` the unbiased estimator.
    Pu { loss: LossSpec, correction: Correction },
    /// Unbiased multi-group rewrite mixed with partial-risk regularization.
    Uprr {
        loss: LossSpec,
        alpha_mix: f64,
        class_weights: Option<Vec<f64>>,
    },
    /// Complementary cross-entropy, optionally scaled by `K − 1`.
    Cce { scaled: bool },
    /// Cross-entropy against the uniform distribution on each candidate set.
    PllUniformCe,
    /// Negative log of the softmax mass on each candidate set.
    PllLogSumExp,
}

impl Objective {
    pub fn name(&self) -> String {
        match self {
            Objective::Eoerm { variant, .. } => format!("eoerm-{}", variant.name().to_lowercase()),
            Objective::UuCorrected { correction, .. } => match correction {
                Correction::None => "uu-unbiased".into(),
                Correction::Abs => "abs-uu".into(),
                Correction::Relu => "relu-uu".into(),
            },
            Objective::Pu { correction, .. } => match correction {
                Correction::None => "upu".into(),
                Correction::Abs => "pu-abs".into(),
                Correction::Relu => "nnpu".into(),
            },
            Objective::Uprr { .. } => "uprr".into(),
            Objective::Cce { scaled: false } => "cce".into(),
            Objective::Cce { scaled: true } => "cce-scaled".into(),
            Objective::PllUniformCe => "pll-uniform-ce".into(),
            Objective::PllLogSumExp => "pll-logsumexp".into(),
        }
    }

    /// Output heads the scorer needs for `num_classes` classes: margin-based
    /// estimators score binary problems with one head, softmax-based ones
    /// always use one head per class.
    pub fn heads(&self, num_classes: usize) -> usize {
        match self {
            Objective::Cce { .. } | Objective::PllUniformCe | Objective::PllLogSumExp => {
                num_classes
            }
            _ if num_classes == 2 => 1,
            _ => num_classes,
        }
    }

    /// Rejects objective/regime pairs that have no meaning.
    pub fn check_regime(&self, regime: Regime, num_classes: usize) -> Result<()> {
        let bad = |why: &str| Err(Error::Unsupported(format!("{} on {regime} data: {why}", self.name())));
        match self {
            Objective::UuCorrected { .. } if num_classes != 2 => bad("needs two classes"),
            Objective::Pu { .. } if regime != Regime::Pu => bad("needs positive and unlabeled groups"),
            Objective::Uprr { .. } if matches!(regime, Regime::Cll | Regime::Pll) => {
                bad("needs mixture groups")
            }
            Objective::Cce { .. } if regime != Regime::Cll => bad("needs complementary labels"),
            Objective::PllUniformCe | Objective::PllLogSumExp if regime != Regime::Pll => {
                bad("needs candidate sets")
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, batch: &ScoredBatch<'_>) -> Result<Evaluation> {
        self.check_regime(batch.regime, batch.num_classes)?;
        let heads = batch.heads()?;
        let want = self.heads(batch.num_classes);
        if heads != want {
            return Err(Error::Shape(format!(
                "{} expects {want} heads, scores have {heads}",
                self.name()
            )));
        }
        for (s, g) in batch.groups.iter().enumerate() {
            if g.is_empty() && g.weight > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "group {s} is empty but has weight {}",
                    g.weight
                )));
            }
        }
        let mut eval = match self {
            Objective::Eoerm { loss, variant } => eoerm::evaluate(batch, *loss, *variant),
            Objective::UuCorrected {
                loss,
                correction,
                test_prior,
            } => baselines::uu_corrected(batch, *loss, *correction, *test_prior),
            Objective::Pu { loss, correction } => baselines::pu(batch, *loss, *correction),
            Objective::Uprr {
                loss,
                alpha_mix,
                class_weights,
            } => baselines::uprr(batch, *loss, *alpha_mix, class_weights.as_deref()),
            Objective::Cce { scaled } => baselines::cce(batch, *scaled),
            Objective::PllUniformCe => baselines::pll_softmax(batch, false),
            Objective::PllLogSumExp => baselines::pll_softmax(batch, true),
        }?;
        eval.report.method = self.name();
        if !eval.report.total.is_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite risk", self.name())));
        }
        Ok(eval)
    }
}

/// Anything that maps a feature matrix to a score matrix.
pub trait Scorer {
    fn heads(&self) -> usize;
    fn score(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// Scores every group with `scorer` and evaluates `objective` on the full
/// groups (exact expectations when the groups carry row weights).
pub fn evaluate(scorer: &dyn Scorer, groups: &WeakGroups, objective: &Objective) -> Result<Evaluation> {
    let scores: Vec<Array2<f64>> = groups
        .groups
        .iter()
        .map(|g| scorer.score(g.x.view()))
        .collect::<Result<_>>()?;
    let batch = ScoredBatch::from_groups(groups, &scores)?;
    objective.evaluate(&batch)
}

pub fn eoerm_risk(
    scorer: &dyn Scorer,
    groups: &WeakGroups,
    loss: LossSpec,
    variant: Variant,
) -> Result<RiskReport> {
    Ok(evaluate(scorer, groups, &Objective::Eoerm { loss, variant })?.report)
}

pub fn uu_corrected_risk(
    scorer: &dyn Scorer,
    groups: &WeakGroups,
    loss: LossSpec,
    correction: Correction,
    test_prior: Option<f64>,
) -> Result<RiskReport> {
    let obj = Objective::UuCorrected {
        loss,
        correction,
        test_prior,
    };
    Ok(evaluate(scorer, groups, &obj)?.report)
}

pub fn nnpu_risk(scorer: &dyn Scorer, groups: &WeakGroups, loss: LossSpec) -> Result<RiskReport> {
    let obj = Objective::Pu {
        loss,
        correction: Correction::Relu,
    };
    Ok(evaluate(scorer, groups, &obj)?.report)
}

pub fn uprr_risk(
    scorer: &dyn Scorer,
    groups: &WeakGroups,
    alpha_mix: f64,
    loss: LossSpec,
) -> Result<RiskReport> {
    let obj = Objective::Uprr {
        loss,
        alpha_mix,
        class_weights: None,
    };
    Ok(evaluate(scorer, groups, &obj)?.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CllMethod {
    Cce,
    CceScaled,
    EoermOva,
}

pub fn cll_risks(
    scorer: &dyn Scorer,
    groups: &WeakGroups,
    loss: LossSpec,
    method: CllMethod,
) -> Result<RiskReport> {
    let obj = match method {
        CllMethod::Cce => Objective::Cce { scaled: false },
        CllMethod::CceScaled => Objective::Cce { scaled: true },
        CllMethod::EoermOva => Objective::Eoerm {
            loss,
            variant: Variant::Abs,
        },
    };
    if groups.regime != Regime::Cll {
        return Err(Error::Unsupported("complementary-label risks need CLL groups".into()));
    }
    Ok(evaluate(scorer, groups, &obj)?.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PllMethod {
    UniformCe,
    LogSumExp,
    EoermOva,
}

pub fn pll_risks(
    scorer: &dyn Scorer,
    groups: &WeakGroups,
    loss: LossSpec,
    method: PllMethod,
) -> Result<RiskReport> {
    let obj = match method {
        PllMethod::UniformCe => Objective::PllUniformCe,
        PllMethod::LogSumExp => Objective::PllLogSumExp,
        PllMethod::EoermOva => Objective::Eoerm {
            loss,
            variant: Variant::Abs,
        },
    };
    if groups.regime != Regime::Pll {
        return Err(Error::Unsupported("partial-label risks need PLL groups".into()));
    }
    Ok(evaluate(scorer, groups, &obj)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_ordering_and_kinks() {
        for h in [-2.0, -0.1, 0.0, 0.3, 5.0] {
            let (a, _) = Variant::Abs.apply(h);
            let (r, _) = Variant::Relu.apply(h);
            let (i, _) = Variant::Identity.apply(h);
            assert!(a >= r && r >= i);
        }
        assert_eq!(Variant::Abs.apply(0.0).1, 0.0);
        assert_eq!(Variant::Relu.apply(0.0).1, 0.0);
        assert_eq!("relu".parse::<Variant>().unwrap(), Variant::Relu);
    }

    #[test]
    fn report_text_has_one_row_per_term() {
        let mut r = RiskReport::new("eoerm-abs", Some(Variant::Abs));
        r.total = 0.25;
        r.terms.push(RiskTerm {
            group: Some(0),
            label: Some(1),
            raw: -0.25,
            flood: 0.5,
            contribution: 0.25,
        });
        let text = r.to_text();
        assert!(text.contains("variant=ABS"));
        assert!(text.ends_with("0,1,-0.25,0.5,0.25\n"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RiskReport>(&json).unwrap(), r);
    }
}
