//! Experiment configuration: TOML with one section per concern.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_DELTA_GRID;
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::model::{ModelSpec, Optimizer};
use crate::risks::{Correction, Objective, Variant};
use crate::synthdata::{
    uniform_transition, DiscreteMixture, GaussianMixtureSpec, HalfspaceSpec, PriorMatrix, Regime, Source,
};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PuCompare,
    UuGrid,
    Multiuu,
    Cll,
    Pll,
    DeltaScan,
    PriorNoise,
    LossCompare,
    RateCheck,
    Rademacher,
}

impl ExperimentKind {
    pub fn regime(self) -> Regime {
        match self {
            ExperimentKind::PuCompare => Regime::Pu,
            ExperimentKind::Multiuu => Regime::MultiUu,
            ExperimentKind::Cll => Regime::Cll,
            ExperimentKind::Pll => Regime::Pll,
            _ => Regime::Uu,
        }
    }

    pub fn default_methods(self) -> Vec<String> {
        let m: &[&str] = match self {
            ExperimentKind::PuCompare => &["eoerm", "eoerm-relu", "eoerm-abl", "nnpu", "pu-abs"],
            ExperimentKind::UuGrid => &["eoerm", "eoerm-relu", "eoerm-abl", "abs-uu", "relu-uu", "uprr"],
            ExperimentKind::Multiuu => &["eoerm", "eoerm-relu", "eoerm-abl", "uprr"],
            ExperimentKind::Cll => &["eoerm", "cce", "cce-scaled"],
            ExperimentKind::Pll => &["eoerm", "pll-uniform-ce", "pll-logsumexp"],
            ExperimentKind::DeltaScan | ExperimentKind::RateCheck => &["eoerm"],
            ExperimentKind::PriorNoise | ExperimentKind::LossCompare => &["eoerm", "abs-uu"],
            ExperimentKind::Rademacher => &[],
        };
        m.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Gaussian,
    Halfspace,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    pub classes: usize,
    pub dim: usize,
    /// Gaussian class-mean offset along the first axis (binary) or each axis
    /// (multiclass).
    pub shift: f64,
    pub nuisance_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_priors: Option<Vec<f64>>,
    /// Halfspace offset; class 0 is `x_0 + offset ≥ 0`.
    pub offset: f64,
    /// Support size of a random discrete mixture.
    pub points: usize,
    pub realizable: bool,
    pub source_seed: u64,
    /// Two-group settings as `[θ1, θ2]` positive fractions.
    pub pairs: Vec<[f64; 2]>,
    /// Multi-group set priors, one row per set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set_priors: Option<Vec<Vec<f64>>>,
    /// PU class prior of the unlabeled set (and of the test set).
    pub prior: f64,
    pub n_per_group: usize,
    pub n_positive: usize,
    pub n_unlabeled: usize,
    /// Training size for complementary and partial labels.
    pub n: usize,
    /// Column-stochastic complementary transition; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Average candidate-set size, in `[1, classes]`.
    pub q: f64,
    pub n_test: usize,
    /// Replaces the empirical group weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_weights: Option<Vec<f64>>,
    /// Test prior used by the corrected two-group baselines.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_prior: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Gaussian,
            classes: 2,
            dim: 2,
            shift: 1.0,
            nuisance_std: 1.0,
            class_priors: None,
            offset: 0.0,
            points: 20,
            realizable: true,
            source_seed: 0,
            pairs: vec![[0.2, 0.8]],
            set_priors: None,
            prior: 0.1,
            n_per_group: 5000,
            n_positive: 10000,
            n_unlabeled: 10000,
            n: 10000,
            transition: None,
            q: 2.0,
            n_test: 10000,
            group_weights: None,
            test_prior: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Use every row of every group at each step.
    pub full_batch: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub arch: String,
    pub loss: LossKind,
    pub eval_every: usize,
    pub uprr_alpha: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            full_batch: false,
            iterations: None,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            arch: "linear".into(),
            loss: LossKind::Sigmoid,
            eval_every: 1,
            uprr_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub grid: Vec<f64>,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            grid: DEFAULT_DELTA_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub factors: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            factors: vec![1.0, 1.1, 1.2, 1.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    /// Total training sizes, split evenly over the two groups.
    pub sizes: Vec<usize>,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            sizes: (0..6).map(|i| (500.0 * 64f64.powf(i as f64 / 5.0)).round() as usize).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityClass {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RademacherSection {
    pub sizes: Vec<usize>,
    pub draws: usize,
    pub bound: f64,
    pub class: ComplexityClass,
    pub hidden: Vec<usize>,
    pub delta: f64,
}

impl Default for RademacherSection {
    fn default() -> Self {
        Self {
            sizes: vec![100, 400, 1600],
            draws: 50,
            bound: 1.0,
            class: ComplexityClass::Linear,
            hidden: vec![16, 16],
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCompareSection {
    pub losses: Vec<LossKind>,
}

impl Default for LossCompareSection {
    fn default() -> Self {
        Self {
            losses: vec![LossKind::Hinge, LossKind::Logistic, LossKind::Ramp, LossKind::Sigmoid],
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Kind default when absent; an empty list runs nothing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub rademacher: RademacherSection,
    #[serde(default)]
    pub loss_compare: LossCompareSection,
}

const METHODS: [&str; 14] = [
    "eoerm",
    "eoerm-relu",
    "eoerm-abl",
    "nnpu",
    "pu-abs",
    "upu",
    "abs-uu",
    "relu-uu",
    "uu-unbiased",
    "uprr",
    "cce",
    "cce-scaled",
    "pll-uniform-ce",
    "pll-logsumexp",
];

/// Whether `method` can train with a non-symmetric base loss.
pub fn accepts_any_loss(method: &str) -> bool {
    matches!(method, "nnpu" | "pu-abs" | "upu" | "abs-uu" | "relu-uu" | "uu-unbiased")
}

fn check_simplex(path: &str, v: &[f64], k: usize) -> Result<()> {
    if v.len() != k {
        return Err(Error::config(path, format!("expected {k} entries, got {}", v.len())));
    }
    if let Some(i) = v.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::config(format!("{path}[{i}]"), "must lie in [0, 1]"));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::config(path, format!("entries sum to {s}, not 1")));
    }
    Ok(())
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, "must be positive"))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let path = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<config>".into());
            Error::config(path, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::from_toml_str(&text)
    }

    /// The configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        let mut resolved = self.clone();
        resolved.methods = Some(self.methods());
        toml::to_string(&resolved).expect("config serializes")
    }

    pub fn methods(&self) -> Vec<String> {
        self.methods.clone().unwrap_or_else(|| self.kind.default_methods())
    }

    /// Checks every field the kind uses before any work starts.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let k = d.classes;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        if k < 2 || k > 64 {
            return Err(Error::config("data.classes", "must lie in 2..=64"));
        }
        let binary_only = matches!(
            self.kind,
            ExperimentKind::PuCompare
                | ExperimentKind::UuGrid
                | ExperimentKind::DeltaScan
                | ExperimentKind::PriorNoise
                | ExperimentKind::LossCompare
                | ExperimentKind::RateCheck
        );
        if binary_only && k != 2 {
            return Err(Error::config("data.classes", "this kind needs two classes"));
        }
        if d.source == SourceKind::Halfspace && k != 2 {
            return Err(Error::config("data.classes", "a halfspace has two classes"));
        }
        if let Some(p) = &d.class_priors {
            check_simplex("data.class_priors", p, k)?;
        }
        if d.dim == 0 {
            return Err(Error::config("data.dim", "must be positive"));
        }
        positive("data.nuisance_std", d.nuisance_std)?;
        if d.n_test == 0 {
            return Err(Error::config("data.n_test", "must be positive"));
        }
        if let Some(w) = &d.group_weights {
            check_simplex("data.group_weights", w, w.len())?;
        }
        for (i, p) in d.pairs.iter().enumerate() {
            for (j, v) in p.iter().enumerate() {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::config(format!("data.pairs[{i}][{j}]"), "must lie in [0, 1]"));
                }
            }
            if p[0] == p[1] && self.kind != ExperimentKind::DeltaScan {
                return Err(Error::config(format!("data.pairs[{i}]"), "the two priors must differ"));
            }
        }
        let needs_pairs = matches!(
            self.kind,
            ExperimentKind::UuGrid | ExperimentKind::PriorNoise | ExperimentKind::LossCompare | ExperimentKind::RateCheck
        );
        if needs_pairs && d.pairs.is_empty() {
            return Err(Error::config("data.pairs", "need at least one prior pair"));
        }
        if let Some(tp) = d.test_prior {
            if !(0.0..=1.0).contains(&tp) {
                return Err(Error::config("data.test_prior", "must lie in [0, 1]"));
            }
        }
        match self.kind {
            ExperimentKind::PuCompare => {
                if !(0.0 < d.prior && d.prior < 1.0) {
                    return Err(Error::config("data.prior", "must lie in (0, 1)"));
                }
                if d.n_positive == 0 || d.n_unlabeled == 0 {
                    return Err(Error::config("data.n_positive", "group sizes must be positive"));
                }
            }
            ExperimentKind::Multiuu => {
                let rows = d
                    .set_priors
                    .as_ref()
                    .ok_or_else(|| Error::config("data.set_priors", "required for multiuu"))?;
                if rows.len() < 2 {
                    return Err(Error::config("data.set_priors", "need at least two sets"));
                }
                for (i, r) in rows.iter().enumerate() {
                    check_simplex(&format!("data.set_priors[{i}]"), r, k)?;
                }
            }
            ExperimentKind::Cll => {
                if let Some(t) = &d.transition {
                    if t.len() != k {
                        return Err(Error::config("data.transition", format!("expected {k} rows")));
                    }
                    for c in 0..k {
                        let col: Vec<f64> = t.iter().map(|r| r.get(c).copied().unwrap_or(f64::NAN)).collect();
                        check_simplex(&format!("data.transition[:, {c}]"), &col, k)?;
                    }
                }
            }
            ExperimentKind::Pll => {
                if !(1.0..=k as f64).contains(&d.q) {
                    return Err(Error::config("data.q", format!("must lie in [1, {k}]")));
                }
            }
            ExperimentKind::DeltaScan => {
                if self.scan.grid.is_empty() {
                    return Err(Error::config("scan.grid", "must not be empty"));
                }
                for (i, &g) in self.scan.grid.iter().enumerate() {
                    if g == 0.0 {
                        return Err(Error::config(format!("scan.grid[{i}]"), "zero gap is not identifiable"));
                    }
                    if !(0.0 < g && g <= 1.0) {
                        return Err(Error::config(format!("scan.grid[{i}]"), "must lie in (0, 1]"));
                    }
                }
            }
            ExperimentKind::PriorNoise => {
                for (i, &f) in self.noise.factors.iter().enumerate() {
                    positive(&format!("noise.factors[{i}]"), f)?;
                }
                if !self.noise.factors.contains(&1.0) {
                    return Err(Error::config("noise.factors", "must include the reference factor 1.0"));
                }
            }
            ExperimentKind::RateCheck => {
                let s = &self.rate.sizes;
                if s.len() < 4 {
                    return Err(Error::config("rate.sizes", "need at least four sizes"));
                }
                let lo = *s.iter().min().unwrap();
                let hi = *s.iter().max().unwrap();
                if lo < 2 || hi < 16 * lo {
                    return Err(Error::config("rate.sizes", "sizes must be ≥ 2 and span at least 16x"));
                }
            }
            ExperimentKind::Rademacher => {
                if self.rademacher.sizes.is_empty() || self.rademacher.sizes.contains(&0) {
                    return Err(Error::config("rademacher.sizes", "need positive sizes"));
                }
                if self.rademacher.draws == 0 {
                    return Err(Error::config("rademacher.draws", "must be positive"));
                }
                positive("rademacher.bound", self.rademacher.bound)?;
                if !(0.0 < self.rademacher.delta && self.rademacher.delta < 1.0) {
                    return Err(Error::config("rademacher.delta", "must lie in (0, 1)"));
                }
            }
            _ => {}
        }
        if matches!(
            self.kind,
            ExperimentKind::UuGrid
                | ExperimentKind::Multiuu
                | ExperimentKind::DeltaScan
                | ExperimentKind::PriorNoise
                | ExperimentKind::LossCompare
        ) && d.n_per_group == 0
        {
            return Err(Error::config("data.n_per_group", "must be positive"));
        }
        if matches!(self.kind, ExperimentKind::Cll | ExperimentKind::Pll) && d.n == 0 {
            return Err(Error::config("data.n", "must be positive"));
        }
        let t = &self.train;
        if t.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if !t.full_batch && t.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if t.iterations == Some(0) {
            return Err(Error::config("train.iterations", "must be positive"));
        }
        if t.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        positive("train.lr", t.lr)?;
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&t.uprr_alpha) {
            return Err(Error::config("train.uprr_alpha", "must lie in [0, 1]"));
        }
        ModelSpec::from_name(&t.arch, d.dim, 1).map_err(|e| Error::config("train.arch", e.to_string()))?;
        if t.loss == LossKind::ZeroOne {
            return Err(Error::config("train.loss", "the 0-1 loss has no gradient"));
        }
        if self.kind == ExperimentKind::LossCompare {
            if let Some(i) = self.loss_compare.losses.iter().position(|l| *l == LossKind::ZeroOne) {
                return Err(Error::config(format!("loss_compare.losses[{i}]"), "the 0-1 loss has no gradient"));
            }
        }
        self.source().map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("data", other.to_string()),
        })?;
        let regime = self.kind.regime();
        for (i, m) in self.methods().iter().enumerate() {
            let path = format!("methods[{i}]");
            if self.kind == ExperimentKind::Rademacher {
                continue;
            }
            if !METHODS.contains(&m.as_str()) {
                return Err(Error::config(path, format!("unknown method `{m}`")));
            }
            let obj = self.objective(m, LossSpec::sigmoid())?;
            obj.check_regime(regime, k).map_err(|e| Error::config(&path, e.to_string()))?;
            if self.kind != ExperimentKind::LossCompare && !LossSpec::new(t.loss).is_symmetric() && !accepts_any_loss(m) {
                return Err(Error::config("train.loss", format!("`{m}` needs a symmetric loss")));
            }
        }
        Ok(())
    }

    /// Data source described by the `data` section.
    pub fn source(&self) -> Result<Source> {
        let d = &self.data;
        let src = match d.source {
            SourceKind::Gaussian => {
                let g = if d.classes == 2 {
                    GaussianMixtureSpec::binary_shift(d.shift, d.dim, d.nuisance_std)?
                } else {
                    GaussianMixtureSpec::one_hot(d.classes, d.dim, d.shift)?
                };
                let priors = match (&d.class_priors, self.kind) {
                    (Some(p), _) => Some(p.clone()),
                    (None, ExperimentKind::PuCompare) => Some(vec![d.prior, 1.0 - d.prior]),
                    _ => None,
                };
                match priors {
                    Some(p) => Source::Gaussian(g.with_priors(p)?),
                    None => Source::Gaussian(g),
                }
            }
            SourceKind::Halfspace => {
                let mut normal = vec![0.0; d.dim];
                normal[0] = 1.0;
                let offset = if self.kind == ExperimentKind::PuCompare && d.offset == 0.0 {
                    // place the boundary so that class 0 has mass `prior`
                    crate::synthdata::normal_quantile(d.prior)
                } else {
                    d.offset
                };
                Source::Halfspace(HalfspaceSpec::new(normal, offset)?)
            }
            SourceKind::Discrete => {
                let mut rng = crate::rng::rng_for(d.source_seed, 0);
                let mix = if d.realizable {
                    DiscreteMixture::random_realizable(d.classes, d.points, d.dim, &mut rng)?
                } else {
                    DiscreteMixture::random_overlapping(d.classes, d.points, d.dim, &mut rng)?
                };
                Source::Discrete(mix)
            }
        };
        Ok(src)
    }

    /// Training objective for a method name.
    pub fn objective(&self, method: &str, loss: LossSpec) -> Result<Objective> {
        let test_prior = self.data.test_prior;
        Ok(match method {
            "eoerm" => Objective::Eoerm { loss, variant: Variant::Abs },
            "eoerm-relu" => Objective::Eoerm { loss, variant: Variant::Relu },
            "eoerm-abl" => Objective::Eoerm {
                loss,
                variant: Variant::Identity,
            },
            "nnpu" => Objective::Pu {
                loss,
                correction: Correction::Relu,
            },
            "pu-abs" => Objective::Pu {
                loss,
                correction: Correction::Abs,
            },
            "upu" => Objective::Pu {
                loss,
                correction: Correction::None,
            },
            "abs-uu" => Objective::UuCorrected {
                loss,
                correction: Correction::Abs,
                test_prior,
            },
            "relu-uu" => Objective::UuCorrected {
                loss,
                correction: Correction::Relu,
                test_prior,
            },
            "uu-unbiased" => Objective::UuCorrected {
                loss,
                correction: Correction::None,
                test_prior,
            },
            "uprr" => Objective::Uprr {
                loss,
                alpha_mix: self.train.uprr_alpha,
                class_weights: None,
            },
            "cce" => Objective::Cce { scaled: false },
            "cce-scaled" => Objective::Cce { scaled: true },
            "pll-uniform-ce" => Objective::PllUniformCe,
            "pll-logsumexp" => Objective::PllLogSumExp,
            other => return Err(Error::config("methods", format!("unknown method `{other}`"))),
        })
    }

    /// Trainer configuration for one run.
    pub fn train_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        let t = &self.train;
        let mut cfg = TrainConfig::new(objective, seed);
        cfg.epochs = t.epochs;
        cfg.iterations = t.iterations;
        cfg.batch_size = if t.full_batch { None } else { Some(t.batch_size) };
        cfg.optimizer = match t.optimizer {
            OptimizerKind::Adam => Optimizer::adam(t.lr),
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: t.lr,
                momentum: t.momentum,
            },
        };
        cfg.arch = t.arch.clone();
        cfg.eval_every = t.eval_every;
        cfg
    }

    /// Set-prior matrix of the multi-group setting.
    pub fn multi_priors(&self) -> Result<PriorMatrix> {
        let rows = self
            .data
            .set_priors
            .as_ref()
            .ok_or_else(|| Error::config("data.set_priors", "required"))?;
        PriorMatrix::from_rows(rows)
    }

    /// Complementary transition, uniform unless configured.
    pub fn transition(&self) -> Array2<f64> {
        match &self.data.transition {
            Some(t) => Array2::from_shape_fn((t.len(), t.len()), |(i, j)| t[i][j]),
            None => uniform_transition(self.data.classes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text)
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse("kind = \"uu_grid\"\n").unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.methods().len(), 6);
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(again.methods(), cfg.methods());
        assert_eq!(again.data, cfg.data);
    }

    #[test]
    fn malformed_priors_name_the_field() {
        let err = parse("kind = \"multiuu\"\n[data]\nclasses = 3\ndim = 3\nset_priors = [[0.5, 0.5, 0.2], [0.2, 0.3, 0.5]]\n")
            .unwrap_err();
        match err {
            Error::Config { path, reason } => {
                assert_eq!(path, "data.set_priors[0]");
                assert!(reason.contains("sum"), "{reason}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_fields_and_methods_are_rejected() {
        assert!(matches!(parse("kind = \"uu_grid\"\nbogus = 1\n"), Err(Error::Config { .. })));
        let err = parse("kind = \"uu_grid\"\nmethods = [\"eoerm\", \"magic\"]\n").unwrap_err();
        assert!(err.to_string().contains("methods[1]"), "{err}");
        let err = parse("kind = \"pu_compare\"\nmethods = [\"cce\"]\n").unwrap_err();
        assert!(err.to_string().contains("methods[0]"), "{err}");
    }

    #[test]
    fn non_symmetric_loss_only_with_baselines() {
        assert!(parse("kind = \"uu_grid\"\nmethods = [\"abs-uu\"]\n[train]\nloss = \"logistic\"\n").is_ok());
        let err = parse("kind = \"uu_grid\"\nmethods = [\"eoerm\"]\n[train]\nloss = \"hinge\"\n").unwrap_err();
        assert!(err.to_string().contains("train.loss"), "{err}");
    }

    #[test]
    fn zero_gap_in_grid_is_rejected() {
        let err = parse("kind = \"delta_scan\"\n[scan]\ngrid = [0.5, 0.0]\n").unwrap_err();
        assert!(err.to_string().contains("scan.grid[1]"), "{err}");
    }

    #[test]
    fn pu_source_uses_the_class_prior() {
        let cfg = parse("kind = \"pu_compare\"\n[data]\nprior = 0.2\n").unwrap();
        assert_eq!(cfg.source().unwrap().priors(), vec![0.2, 0.8]);
        let hs = parse("kind = \"pu_compare\"\n[data]\nsource = \"halfspace\"\nprior = 0.2\n").unwrap();
        assert!((hs.source().unwrap().priors()[0] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn default_rate_sizes_span_64x() {
        let s = RateSection::default().sizes;
        assert_eq!(s.len(), 6);
        assert_eq!((s[0], s[5]), (500, 32000));
    }
}
