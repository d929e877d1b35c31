//! Finite mixtures with exact class-conditional pmfs. Every expectation over
//! these can be computed by full summation, which is what the oracle checks
//! are built on.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{
    check_simplex, validate_transition, Group, LabelSet, PriorMatrix, Regime, WeakGroups,
};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Largest support handled by the exact oracles.
pub const MAX_SUPPORT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMixture {
    points: Array2<f64>,
    cond_pmf: Array2<f64>,
    priors: Vec<f64>,
}

impl DiscreteMixture {
    /// `points`: `m × d`; `cond_pmf`: `K × m` with row `k = p(x | y = k)`.
    pub fn new(points: Array2<f64>, cond_pmf: Array2<f64>, priors: Vec<f64>) -> Result<Self> {
        let m = points.nrows();
        let k = cond_pmf.nrows();
        if m == 0 || m > MAX_SUPPORT {
            return Err(Error::validation(
                "points",
                format!("support size {m} outside 1..={MAX_SUPPORT}"),
            ));
        }
        if cond_pmf.ncols() != m {
            return Err(Error::Shape(format!(
                "cond_pmf has {} columns for {m} points",
                cond_pmf.ncols()
            )));
        }
        if priors.len() != k {
            return Err(Error::Shape(format!("{} priors for {k} classes", priors.len())));
        }
        for (row, pmf) in cond_pmf.outer_iter().enumerate() {
            if pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::validation(
                    format!("cond_pmf[{row}]"),
                    "negative or non-finite mass",
                ));
            }
            let sum = pmf.sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::validation(
                    format!("cond_pmf[{row}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        check_simplex(&priors, k).map_err(|r| Error::validation("priors", r))?;
        Ok(Self {
            points,
            cond_pmf,
            priors,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cond_pmf.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, j: usize) -> ndarray::ArrayView1<'_, f64> {
        self.points.row(j)
    }

    pub fn cond_pmf(&self) -> &Array2<f64> {
        &self.cond_pmf
    }

    /// `p(x_j, y = k)`.
    pub fn joint(&self, k: usize, j: usize) -> f64 {
        self.priors[k] * self.cond_pmf[[k, j]]
    }

    /// `Σ_k w_k p(x | y = k)` over the support.
    pub fn mixture_pmf(&self, class_weights: &[f64]) -> Array1<f64> {
        let mut out = Array1::zeros(self.num_points());
        for (k, &w) in class_weights.iter().enumerate() {
            if w != 0.0 {
                out.scaled_add(w, &self.cond_pmf.row(k));
            }
        }
        out
    }

    pub fn marginal(&self) -> Array1<f64> {
        self.mixture_pmf(&self.priors)
    }

    /// `p(y | x_j)`; uniform when `x_j` has zero mass.
    pub fn posterior(&self, j: usize) -> Vec<f64> {
        let k = self.num_classes();
        let joint: Vec<f64> = (0..k).map(|c| self.joint(c, j)).collect();
        let total: f64 = joint.iter().sum();
        if total > 0.0 {
            joint.iter().map(|p| p / total).collect()
        } else {
            vec![1.0 / k as f64; k]
        }
    }

    pub fn sample_point(&self, k: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = self.cond_pmf.row(k);
        let mut last = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last = j;
                acc += p;
                if u < acc {
                    return j;
                }
            }
        }
        last
    }

    /// A random realizable mixture: every support point belongs to exactly
    /// one class, so the Bayes risk is zero. Requires `m ≥ k`.
    pub fn random_realizable(k: usize, m: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        if m < k {
            return Err(Error::InvalidInput(format!("need at least {k} points, got {m}")));
        }
        let points = random_points(m, d, rng);
        let mut owner: Vec<usize> = (0..m).map(|j| if j < k { j } else { rng.random_range(0..k) }).collect();
        // shuffle ownership so class 0 is not always point 0
        for j in (1..m).rev() {
            let i = rng.random_range(0..=j);
            owner.swap(i, j);
        }
        let mut cond = Array2::zeros((k, m));
        for (j, &c) in owner.iter().enumerate() {
            cond[[c, j]] = rng.random_range(0.2..1.0);
        }
        normalize_rows(&mut cond);
        let priors = random_simplex(k, 0.1, rng);
        Self::new(points, cond, priors)
    }

    /// A random mixture with overlapping class supports.
    pub fn random_overlapping(k: usize, m: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        let points = random_points(m, d, rng);
        let mut cond = Array2::from_shape_fn((k, m), |_| rng.random_range(0.05..1.0));
        normalize_rows(&mut cond);
        let priors = random_simplex(k, 0.1, rng);
        Self::new(points, cond, priors)
    }

    /// Exact groups for a prior matrix: every group lists the whole support
    /// with row weights `p_s(x) = Σ_k Π[s,k] p(x | y = k)`.
    pub fn exact_groups(
        &self,
        priors: &PriorMatrix,
        group_weights: Option<&[f64]>,
    ) -> Result<WeakGroups> {
        let k = self.num_classes();
        if priors.num_classes() != k {
            return Err(Error::Shape(format!(
                "prior matrix has {} columns for {k} classes",
                priors.num_classes()
            )));
        }
        let m = priors.num_sets();
        let weights = match group_weights {
            Some(w) => w.to_vec(),
            None => vec![1.0 / m as f64; m],
        };
        let groups = (0..m)
            .map(|s| {
                let row = priors.row(s);
                let mut g = Group::new(self.points.clone(), weights[s], row.clone());
                g.row_weights = Some(self.mixture_pmf(&row));
                g
            })
            .collect();
        let regime = infer_regime(priors);
        let out = WeakGroups {
            regime,
            num_classes: k,
            groups,
            transition: None,
            rank_deficient: !priors.full_column_rank(),
        };
        out.validate()?;
        Ok(out)
    }

    /// Exact CLL groups indexed by complementary label `ȳ`, with weights
    /// `p(ȳ)` and conditional priors `p(y | ȳ)` from Bayes' rule.
    pub fn exact_cll(&self, q: &Array2<f64>) -> Result<WeakGroups> {
        let k = self.num_classes();
        validate_transition(q, k)?;
        let cond = cll_conditional_priors(q, &self.priors);
        let mut groups = Vec::with_capacity(k);
        for (bar, (p_bar, pri)) in cond.into_iter().enumerate() {
            let mut g = Group::new(self.points.clone(), p_bar, pri.clone());
            g.row_weights = Some(self.mixture_pmf(&pri));
            g.label = Some(bar);
            if p_bar == 0.0 {
                g.x = Array2::zeros((0, self.dim()));
                g.row_weights = Some(Array1::zeros(0));
            }
            groups.push(g);
        }
        let out = WeakGroups {
            regime: Regime::Cll,
            num_classes: k,
            groups,
            transition: Some(q.clone()),
            rank_deficient: false,
        };
        out.validate()?;
        Ok(out)
    }

    /// Exact PLL distribution over `(x, S)` with independent inclusion of
    /// each wrong label at rate `(q-1)/(K-1)`. Enumerates all candidate sets,
    /// so it is meant for small `K`.
    pub fn exact_pll(&self, q: f64) -> Result<WeakGroups> {
        let k = self.num_classes();
        if k > 16 {
            return Err(Error::InvalidInput("exact PLL enumeration needs K ≤ 16".into()));
        }
        if !(1.0..=k as f64).contains(&q) {
            return Err(Error::InvalidInput(format!("candidate size {q} outside [1, {k}]")));
        }
        let rate = (q - 1.0) / (k as f64 - 1.0);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut weights = Vec::new();
        let mut sets = Vec::new();
        for j in 0..self.num_points() {
            for mask in 1u64..(1u64 << k) {
                let set = LabelSet(mask);
                let size = set.len();
                let p_set_given_y = rate.powi(size as i32 - 1) * (1.0 - rate).powi((k - size) as i32);
                let mass: f64 = set.iter().map(|y| self.joint(y, j)).sum::<f64>() * p_set_given_y;
                if mass > 0.0 {
                    rows.push(self.point(j).to_vec());
                    weights.push(mass);
                    sets.push(set);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        let n = rows.len();
        let x = Array2::from_shape_vec((n, self.dim()), rows.concat())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut g = Group::new(x, 1.0, self.priors.clone());
        g.row_weights = Some(Array1::from_iter(weights.iter().map(|w| w / total)));
        g.candidates = Some(sets);
        let out = WeakGroups {
            regime: Regime::Pll,
            num_classes: k,
            groups: vec![g],
            transition: None,
            rank_deficient: false,
        };
        out.validate()?;
        Ok(out)
    }
}

/// `(p(ȳ), p(y | ȳ))` for every complementary label.
pub(crate) fn cll_conditional_priors(q: &Array2<f64>, priors: &[f64]) -> Vec<(f64, Vec<f64>)> {
    let k = priors.len();
    (0..k)
        .map(|bar| {
            let joint: Vec<f64> = (0..k).map(|y| q[[bar, y]] * priors[y]).collect();
            let p_bar: f64 = joint.iter().sum();
            let cond = if p_bar > 0.0 {
                joint.iter().map(|v| v / p_bar).collect()
            } else {
                // unreachable group; any simplex point will do
                (0..k).map(|y| if y == (bar + 1) % k { 1.0 } else { 0.0 }).collect()
            };
            (p_bar, cond)
        })
        .collect()
}

pub(crate) fn infer_regime(priors: &PriorMatrix) -> Regime {
    if priors.num_classes() > 2 {
        return Regime::MultiUu;
    }
    let rows = priors.rows();
    let pure_positive = rows.outer_iter().any(|r| r[0] == 1.0);
    if priors.num_sets() == 2 && pure_positive {
        Regime::Pu
    } else {
        Regime::Uu
    }
}

fn random_points(m: usize, d: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((m, d), |_| StandardNormal.sample(rng))
}

fn random_simplex(k: usize, floor: f64, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(floor..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn normalize_rows(a: &mut Array2<f64>) {
    for mut row in a.outer_iter_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use ndarray::array;

    fn two_class() -> DiscreteMixture {
        DiscreteMixture::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            array![[0.4, 0.3, 0.2, 0.1], [0.1, 0.2, 0.3, 0.4]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn accepts_valid_mixture() {
        let d = two_class();
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.num_points(), 4);
        assert!((d.marginal().sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_row() {
        let err = DiscreteMixture::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            array![[0.4, 0.3, 0.2, 0.1], [0.1, 0.2, 0.3, 0.37]],
            vec![0.5, 0.5],
        )
        .unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "cond_pmf[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disjoint_supports_have_zero_bayes_risk() {
        // K = 3, m = 9, three points per class
        let points = Array2::from_shape_fn((9, 1), |(j, _)| j as f64);
        let cond = Array2::from_shape_fn((3, 9), |(k, j)| if j / 3 == k { 1.0 / 3.0 } else { 0.0 });
        let d = DiscreteMixture::new(points, cond, vec![0.2, 0.3, 0.5]).unwrap();
        let bayes_risk: f64 = (0..9)
            .map(|j| {
                let post = d.posterior(j);
                let best = post.iter().cloned().fold(0.0, f64::max);
                let px: f64 = (0..3).map(|k| d.joint(k, j)).sum();
                px * (1.0 - best)
            })
            .sum();
        assert_eq!(bayes_risk, 0.0);
    }

    #[test]
    fn realizable_generator_is_realizable() {
        let mut rng = rng_for(11, 0);
        for k in [2, 3, 5] {
            let d = DiscreteMixture::random_realizable(k, 12, 3, &mut rng).unwrap();
            for j in 0..d.num_points() {
                let owners = (0..k).filter(|&c| d.cond_pmf()[[c, j]] > 0.0).count();
                assert_eq!(owners, 1);
            }
        }
    }

    #[test]
    fn cll_conditional_priors_match_enumeration() {
        let mut rng = rng_for(5, 0);
        let d = DiscreteMixture::random_overlapping(3, 6, 2, &mut rng).unwrap();
        let q = array![[0.0, 0.7, 0.4], [0.25, 0.0, 0.6], [0.75, 0.3, 0.0]];
        let g = d.exact_cll(&q).unwrap();
        // brute force over the finite joint (x, y, ȳ)
        for bar in 0..3 {
            let mut joint = [0.0; 3];
            for j in 0..d.num_points() {
                for (y, slot) in joint.iter_mut().enumerate() {
                    *slot += d.joint(y, j) * q[[bar, y]];
                }
            }
            let total: f64 = joint.iter().sum();
            for y in 0..3 {
                assert!((g.groups[bar].cond_priors[y] - joint[y] / total).abs() < 1e-12);
            }
            assert!((g.groups[bar].weight - total).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_pll_weights_form_a_distribution() {
        let mut rng = rng_for(3, 0);
        let d = DiscreteMixture::random_realizable(4, 5, 2, &mut rng).unwrap();
        let g = d.exact_pll(2.5).unwrap();
        let w = g.groups[0].row_weights.as_ref().unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-12);
        // expected candidate size equals q
        let sets = g.groups[0].candidates.as_ref().unwrap();
        let mean: f64 = sets.iter().zip(w.iter()).map(|(s, p)| s.len() as f64 * p).sum();
        assert!((mean - 2.5).abs() < 1e-12);
    }
}
