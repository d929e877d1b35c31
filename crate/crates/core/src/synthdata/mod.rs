//! Data model for weakly supervised groups plus the synthetic sources and
//! samplers that produce them.
//!
//! A [`WeakGroups`] value is everything a learner is allowed to see: the
//! feature rows of every observed group, the group weights `π_s`, and the
//! conditional class priors `π_{·|s}`. True labels never live here; samplers
//! return them separately in [`WeakSample::latent`] for evaluation code.

mod discrete;
mod gaussian;
mod io;
mod sampling;

pub use discrete::DiscreteMixture;
pub use gaussian::{normal_cdf, normal_quantile, GaussianMixtureSpec, HalfspaceSpec};
pub use io::{read_groups, write_groups};
pub use sampling::{perturb_priors, sample_cll, sample_pll, sample_weak_groups, PRIOR_CLAMP_EPS};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const SIMPLEX_TOL: f64 = 1e-9;

/// Subset of `{0, …, K-1}` stored as a bit mask (`K ≤ 64`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet(pub u64);

impl LabelSet {
    pub fn singleton(k: usize) -> Self {
        LabelSet(1u64 << k)
    }

    pub fn full(classes: usize) -> Self {
        if classes >= 64 {
            LabelSet(u64::MAX)
        } else {
            LabelSet((1u64 << classes) - 1)
        }
    }

    pub fn contains(&self, k: usize) -> bool {
        k < 64 && self.0 & (1u64 << k) != 0
    }

    pub fn insert(&mut self, k: usize) {
        self.0 |= 1u64 << k;
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..64).filter(move |&k| self.contains(k))
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.iter().map(|k| k.to_string()).collect();
        f.write_str(&labels.join("|"))
    }
}

impl FromStr for LabelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = LabelSet::default();
        for part in s.split('|').filter(|p| !p.is_empty()) {
            let k: usize = part
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad label `{part}`")))?;
            if k >= 64 {
                return Err(Error::InvalidInput(format!("label {k} out of range")));
            }
            set.insert(k);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pu,
    Uu,
    MultiUu,
    Cll,
    Pll,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Pu => "PU",
            Regime::Uu => "UU",
            Regime::MultiUu => "MULTIUU",
            Regime::Cll => "CLL",
            Regime::Pll => "PLL",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PU" => Ok(Regime::Pu),
            "UU" => Ok(Regime::Uu),
            "MULTIUU" | "MULTI_UU" | "MULTIU" => Ok(Regime::MultiUu),
            "CLL" => Ok(Regime::Cll),
            "PLL" => Ok(Regime::Pll),
            other => Err(Error::InvalidInput(format!("unknown regime `{other}`"))),
        }
    }
}

/// One observed subpopulation `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// `n_s × d` feature rows.
    pub x: Array2<f64>,
    /// Group weight `π_s`.
    pub weight: f64,
    /// Conditional class priors `π_{·|s}`.
    pub cond_priors: Vec<f64>,
    /// PLL candidate set of every row.
    pub candidates: Option<Vec<LabelSet>>,
    /// Exact per-row probabilities. When present the group is a finite
    /// distribution (oracle mode) and means are weighted by these.
    pub row_weights: Option<Array1<f64>>,
    /// Complementary label for CLL groups.
    pub label: Option<usize>,
}

impl Group {
    pub fn new(x: Array2<f64>, weight: f64, cond_priors: Vec<f64>) -> Self {
        Self {
            x,
            weight,
            cond_priors,
            candidates: None,
            row_weights: None,
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// The observed weakly supervised dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakGroups {
    pub regime: Regime,
    pub num_classes: usize,
    pub groups: Vec<Group>,
    /// CLL transition `Q[i][j] = p(ȳ = i | y = j)`.
    pub transition: Option<Array2<f64>>,
    /// Set when the prior matrix of the groups is rank deficient.
    pub rank_deficient: bool,
}

impl WeakGroups {
    pub fn dim(&self) -> usize {
        self.groups
            .iter()
            .find(|g| !g.is_empty())
            .map(|g| g.x.ncols())
            .unwrap_or(0)
    }

    pub fn total_len(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn prior_matrix(&self) -> Result<PriorMatrix> {
        let m = self.groups.len();
        let k = self.num_classes;
        let mut rows = Array2::zeros((m, k));
        for (s, g) in self.groups.iter().enumerate() {
            for (j, &p) in g.cond_priors.iter().enumerate() {
                rows[[s, j]] = p;
            }
        }
        PriorMatrix::new(rows)
    }

    /// Replaces `π_s` by `n_s / Σ n`.
    pub fn use_empirical_weights(&mut self) {
        let total = self.total_len() as f64;
        if total > 0.0 {
            for g in &mut self.groups {
                g.weight = g.len() as f64 / total;
            }
        }
    }

    pub fn set_group_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.groups.len() {
            return Err(Error::Shape(format!(
                "{} group weights for {} groups",
                weights.len(),
                self.groups.len()
            )));
        }
        for (g, &w) in self.groups.iter_mut().zip(weights) {
            g.weight = w;
        }
        self.validate()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes;
        if k < 2 {
            return Err(Error::validation("num_classes", "need at least two classes"));
        }
        if self.groups.is_empty() {
            return Err(Error::validation("groups", "no groups"));
        }
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::validation(
                "groups.weight",
                format!("group weights sum to {total}, expected 1"),
            ));
        }
        let dim = self.dim();
        for (s, g) in self.groups.iter().enumerate() {
            let field = |name: &str| format!("groups[{s}].{name}");
            if g.weight < 0.0 || !g.weight.is_finite() {
                return Err(Error::validation(field("weight"), "negative or non-finite"));
            }
            check_simplex(&g.cond_priors, k).map_err(|r| Error::validation(field("cond_priors"), r))?;
            if g.is_empty() && g.weight > 0.0 {
                return Err(Error::validation(field("x"), "empty group with positive weight"));
            }
            if !g.is_empty() && g.x.ncols() != dim {
                return Err(Error::validation(field("x"), "feature dimension differs"));
            }
            if let Some(w) = &g.row_weights {
                if w.len() != g.len() {
                    return Err(Error::validation(field("row_weights"), "length mismatch"));
                }
                let sum: f64 = w.sum();
                if !g.is_empty() && (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::validation(field("row_weights"), "does not sum to 1"));
                }
            }
            if let Some(c) = &g.candidates {
                if c.len() != g.len() {
                    return Err(Error::validation(field("candidates"), "length mismatch"));
                }
                if let Some(i) = c.iter().position(|s| s.is_empty()) {
                    return Err(Error::validation(
                        field("candidates"),
                        format!("row {i} has an empty candidate set"),
                    ));
                }
                if c.iter().any(|s| s.0 >> k != 0 && k < 64) {
                    return Err(Error::validation(field("candidates"), "label out of range"));
                }
            }
        }
        if self.regime == Regime::Pll && self.groups.iter().any(|g| g.candidates.is_none()) {
            return Err(Error::validation("candidates", "PLL groups need candidate sets"));
        }
        if let Some(q) = &self.transition {
            validate_transition(q, k)?;
        } else if self.regime == Regime::Cll {
            return Err(Error::validation("transition", "CLL groups need a transition matrix"));
        }
        Ok(())
    }
}

/// Output of a sampler: the observable groups and, separately, the latent
/// true label of every row (per group, same order).
#[derive(Debug, Clone)]
pub struct WeakSample {
    pub groups: WeakGroups,
    pub latent: Vec<Vec<usize>>,
}

/// Fully labeled evaluation data.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `M × K` matrix whose row `m` holds the class priors of unlabeled set `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatrix {
    rows: Array2<f64>,
}

impl PriorMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        let k = rows.ncols();
        if rows.nrows() == 0 || k < 2 {
            return Err(Error::validation("priors", "need at least one row and two classes"));
        }
        for (m, row) in rows.outer_iter().enumerate() {
            check_simplex(row.as_slice().unwrap_or(&row.to_vec()), k)
                .map_err(|r| Error::validation(format!("priors[{m}]"), r))?;
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::validation("priors", "rows have different lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let a = Array2::from_shape_vec((rows.len(), k), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(a)
    }

    /// Binary unlabeled pair with positive-class priors `θ1`, `θ2`.
    pub fn binary_pair(theta1: f64, theta2: f64) -> Result<Self> {
        Self::from_rows(&[vec![theta1, 1.0 - theta1], vec![theta2, 1.0 - theta2]])
    }

    /// SCAR PU: a purely positive set and an unlabeled set with prior `π`.
    pub fn pu(prior: f64) -> Result<Self> {
        Self::from_rows(&[vec![1.0, 0.0], vec![prior, 1.0 - prior]])
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn num_sets(&self) -> usize {
        self.rows.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, m: usize) -> Vec<f64> {
        self.rows.row(m).to_vec()
    }

    pub fn rank(&self) -> usize {
        let m = nalgebra::DMatrix::from_fn(self.rows.nrows(), self.rows.ncols(), |i, j| {
            self.rows[[i, j]]
        });
        m.rank(1e-10)
    }

    pub fn full_column_rank(&self) -> bool {
        self.rank() == self.num_classes()
    }
}

fn check_simplex(p: &[f64], k: usize) -> std::result::Result<(), String> {
    if p.len() != k {
        return Err(format!("expected {k} entries, found {}", p.len()));
    }
    if p.iter().any(|&v| !(0.0..=1.0 + SIMPLEX_TOL).contains(&v) || !v.is_finite()) {
        return Err("entries must lie in [0, 1]".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("entries sum to {sum}, expected 1"));
    }
    Ok(())
}

pub(crate) fn validate_transition(q: &Array2<f64>, k: usize) -> Result<()> {
    if q.dim() != (k, k) {
        return Err(Error::validation("transition", format!("expected {k}x{k}")));
    }
    for j in 0..k {
        if q[[j, j]] != 0.0 {
            return Err(Error::validation(
                format!("transition[{j}][{j}]"),
                "diagonal must be zero",
            ));
        }
        let col: Vec<f64> = q.column(j).to_vec();
        check_simplex(&col, k)
            .map_err(|r| Error::validation(format!("transition[:, {j}]"), r))?;
    }
    Ok(())
}

/// Uniform complementary transition: every wrong label has probability
/// `1/(K-1)`.
pub fn uniform_transition(k: usize) -> Array2<f64> {
    let off = 1.0 / (k as f64 - 1.0);
    Array2::from_shape_fn((k, k), |(i, j)| if i == j { 0.0 } else { off })
}

/// A data source that can emit class-conditional draws.
#[derive(Debug, Clone)]
pub enum Source {
    Discrete(DiscreteMixture),
    Gaussian(GaussianMixtureSpec),
    Halfspace(HalfspaceSpec),
}

impl Source {
    pub fn num_classes(&self) -> usize {
        match self {
            Source::Discrete(d) => d.num_classes(),
            Source::Gaussian(g) => g.num_classes(),
            Source::Halfspace(_) => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Source::Discrete(d) => d.dim(),
            Source::Gaussian(g) => g.dim(),
            Source::Halfspace(h) => h.dim(),
        }
    }

    pub fn priors(&self) -> Vec<f64> {
        match self {
            Source::Discrete(d) => d.priors().to_vec(),
            Source::Gaussian(g) => g.priors().to_vec(),
            Source::Halfspace(h) => h.priors().to_vec(),
        }
    }

    /// One draw from `p(x | y = k)`.
    pub fn sample_class(&self, k: usize, rng: &mut Rng) -> Vec<f64> {
        match self {
            Source::Discrete(d) => d.point(d.sample_point(k, rng)).to_vec(),
            Source::Gaussian(g) => g.sample_class(k, rng),
            Source::Halfspace(h) => h.sample_class(k, rng),
        }
    }

    /// Labeled draws from the source's own class priors.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> LabeledSet {
        let mut rng = crate::rng::rng_for(seed, u64::MAX);
        let priors = self.priors();
        let d = self.dim();
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let k = sampling::draw_categorical(&priors, &mut rng);
            let row = self.sample_class(k, &mut rng);
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            y.push(k);
        }
        LabeledSet {
            x,
            y,
            num_classes: self.num_classes(),
        }
    }
}
