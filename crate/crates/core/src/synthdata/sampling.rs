use ndarray::{Array2, ArrayView1};
use rand::Rng as _;

use super::discrete::{cll_conditional_priors, infer_regime};
use super::{
    validate_transition, Group, LabelSet, PriorMatrix, Regime, Source, WeakGroups, WeakSample,
};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

/// Clamp margin used by [`perturb_priors`].
pub const PRIOR_CLAMP_EPS: f64 = 1e-3;

pub(crate) fn draw_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in p.iter().enumerate() {
        if w > 0.0 {
            last = k;
            acc += w;
            if u < acc {
                return k;
            }
        }
    }
    last
}

fn fill_rows(source: &Source, labels: &[usize], rng: &mut Rng) -> Array2<f64> {
    let mut x = Array2::zeros((labels.len(), source.dim()));
    for (i, &k) in labels.iter().enumerate() {
        let row = source.sample_class(k, rng);
        x.row_mut(i).assign(&ArrayView1::from(&row));
    }
    x
}

/// Draws `sizes[m]` rows from `Σ_k Π[m,k] p(x | y = k)` for every set `m`.
///
/// Each group uses its own stream derived from `(seed, m)`. Group weights are
/// the empirical `n_s / Σ n`.
pub fn sample_weak_groups(
    source: &Source,
    priors: &PriorMatrix,
    sizes: &[usize],
    seed: u64,
) -> Result<WeakSample> {
    let k = source.num_classes();
    if priors.num_classes() != k {
        return Err(Error::Shape(format!(
            "prior matrix has {} columns, source has {k} classes",
            priors.num_classes()
        )));
    }
    if sizes.len() != priors.num_sets() {
        return Err(Error::Shape(format!(
            "{} sizes for {} sets",
            sizes.len(),
            priors.num_sets()
        )));
    }
    if let Some(m) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::validation(format!("sizes[{m}]"), "group size must be positive"));
    }
    let total: usize = sizes.iter().sum();
    let mut groups = Vec::with_capacity(sizes.len());
    let mut latent = Vec::with_capacity(sizes.len());
    for (m, &n) in sizes.iter().enumerate() {
        let mut rng = rng_for(seed, m as u64);
        let row = priors.row(m);
        let labels: Vec<usize> = (0..n).map(|_| draw_categorical(&row, &mut rng)).collect();
        let x = fill_rows(source, &labels, &mut rng);
        groups.push(Group::new(x, n as f64 / total as f64, row));
        latent.push(labels);
    }
    let out = WeakGroups {
        regime: infer_regime(priors),
        num_classes: k,
        groups,
        transition: None,
        rank_deficient: !priors.full_column_rank(),
    };
    out.validate()?;
    Ok(WeakSample {
        groups: out,
        latent,
    })
}

/// Draws `(x, y)` from the source, then `ȳ ~ Q[:, y]`, and groups rows by
/// `ȳ`. Conditional priors `p(y | ȳ)` are exact (Bayes over `Q` and the
/// source priors); group weights are empirical. Empty groups are kept with
/// weight zero.
pub fn sample_cll(source: &Source, q: &Array2<f64>, n: usize, seed: u64) -> Result<WeakSample> {
    let k = source.num_classes();
    validate_transition(q, k)?;
    if n == 0 {
        return Err(Error::validation("n", "sample size must be positive"));
    }
    let priors = source.priors();
    let mut rng = rng_for(seed, 0);
    let mut by_bar: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for _ in 0..n {
        let y = draw_categorical(&priors, &mut rng);
        let x = source.sample_class(y, &mut rng);
        let col: Vec<f64> = q.column(y).to_vec();
        let bar = draw_categorical(&col, &mut rng);
        by_bar[bar].push(y);
        rows[bar].push(x);
    }
    let cond = cll_conditional_priors(q, &priors);
    let d = source.dim();
    let mut groups = Vec::with_capacity(k);
    for (bar, ((_, pri), xs)) in cond.into_iter().zip(rows).enumerate() {
        let count = xs.len();
        let x = Array2::from_shape_vec((count, d), xs.concat())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut g = Group::new(x, count as f64 / n as f64, pri);
        g.label = Some(bar);
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
    Ok(WeakSample {
        groups: out,
        latent: by_bar,
    })
}

/// PLL sampling: `S = {y} ∪ {each wrong label independently with rate
/// (q-1)/(K-1)}`, so `E|S| = q` and `p(S | x, y) = p(S | y)`.
pub fn sample_pll(source: &Source, q: f64, n: usize, seed: u64) -> Result<WeakSample> {
    let k = source.num_classes();
    if !(1.0..=k as f64).contains(&q) {
        return Err(Error::validation("q", format!("average set size {q} outside [1, {k}]")));
    }
    if n == 0 {
        return Err(Error::validation("n", "sample size must be positive"));
    }
    let rate = (q - 1.0) / (k as f64 - 1.0);
    let priors = source.priors();
    let mut rng = rng_for(seed, 0);
    let mut labels = Vec::with_capacity(n);
    let mut sets = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let y = draw_categorical(&priors, &mut rng);
        xs.push(source.sample_class(y, &mut rng));
        let mut s = LabelSet::singleton(y);
        for other in (0..k).filter(|&c| c != y) {
            if rng.random::<f64>() < rate {
                s.insert(other);
            }
        }
        labels.push(y);
        sets.push(s);
    }
    let x = Array2::from_shape_vec((n, source.dim()), xs.concat())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mut g = Group::new(x, 1.0, priors);
    g.candidates = Some(sets);
    let out = WeakGroups {
        regime: Regime::Pll,
        num_classes: k,
        groups: vec![g],
        transition: None,
        rank_deficient: false,
    };
    out.validate()?;
    Ok(WeakSample {
        groups: out,
        latent: vec![labels],
    })
}

/// Copy of `groups` with every positive-class prior `π_{0|s}` scaled by
/// `factor`. A scaled value that leaves `[0, 1]` is clamped to
/// `[ε, 1-ε]`; the remaining classes share the complement in their original
/// proportions (uniformly if they had no mass).
pub fn perturb_priors(groups: &WeakGroups, factor: f64) -> Result<WeakGroups> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidInput(format!("factor {factor} must be positive")));
    }
    let mut out = groups.clone();
    for g in &mut out.groups {
        let old = g.cond_priors[0];
        let mut p = old * factor;
        if p > 1.0 || p < 0.0 {
            p = p.clamp(PRIOR_CLAMP_EPS, 1.0 - PRIOR_CLAMP_EPS);
        }
        if p == old {
            continue;
        }
        let rest_old: f64 = g.cond_priors[1..].iter().sum();
        let rest_new = 1.0 - p;
        let others = g.cond_priors.len() - 1;
        g.cond_priors[0] = p;
        for v in &mut g.cond_priors[1..] {
            *v = if rest_old > 0.0 {
                *v / rest_old * rest_new
            } else {
                rest_new / others as f64
            };
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{uniform_transition, DiscreteMixture, GaussianMixtureSpec};
    use ndarray::array;

    fn gaussian() -> Source {
        Source::Gaussian(GaussianMixtureSpec::standard_2d())
    }

    #[test]
    fn uu_config_has_two_groups() {
        let pri = PriorMatrix::binary_pair(0.2, 0.8).unwrap();
        let s = sample_weak_groups(&gaussian(), &pri, &[10_000, 10_000], 1).unwrap();
        assert_eq!(s.groups.regime, Regime::Uu);
        assert_eq!(s.groups.groups.len(), 2);
        assert_eq!(s.groups.groups[0].len(), 10_000);
        assert_eq!(s.groups.groups[1].weight, 0.5);
        assert_eq!(s.groups.groups[0].cond_priors, vec![0.2, 0.8]);
    }

    #[test]
    fn pu_config() {
        let pri = PriorMatrix::pu(0.1).unwrap();
        let s = sample_weak_groups(&gaussian(), &pri, &[10_000, 10_000], 2).unwrap();
        assert_eq!(s.groups.regime, Regime::Pu);
        assert!(s.latent[0].iter().all(|&y| y == 0));
        let frac = s.latent[1].iter().filter(|&&y| y == 0).count() as f64 / 10_000.0;
        assert!((frac - 0.1).abs() < 3.0 * (0.1f64 * 0.9 / 10_000.0).sqrt());
    }

    #[test]
    fn identity_priors_give_pure_groups() {
        let mut rng = rng_for(9, 0);
        let d = DiscreteMixture::random_overlapping(3, 8, 2, &mut rng).unwrap();
        let pri = PriorMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let s = sample_weak_groups(&Source::Discrete(d), &pri, &[500, 500, 500], 4).unwrap();
        for (m, lat) in s.latent.iter().enumerate() {
            assert!(lat.iter().all(|&y| y == m));
        }
        assert_eq!(s.groups.regime, Regime::MultiUu);
    }

    #[test]
    fn zero_size_rejected_and_rank_flagged() {
        let pri = PriorMatrix::binary_pair(0.3, 0.3).unwrap();
        assert!(sample_weak_groups(&gaussian(), &pri, &[10, 0], 1).is_err());
        let s = sample_weak_groups(&gaussian(), &pri, &[10, 10], 1).unwrap();
        assert!(s.groups.rank_deficient);
    }

    #[test]
    fn sampling_is_deterministic() {
        let pri = PriorMatrix::binary_pair(0.2, 0.8).unwrap();
        let a = sample_weak_groups(&gaussian(), &pri, &[100, 50], 77).unwrap();
        let b = sample_weak_groups(&gaussian(), &pri, &[100, 50], 77).unwrap();
        assert_eq!(a.groups, b.groups);
        let c = sample_weak_groups(&gaussian(), &pri, &[100, 50], 78).unwrap();
        assert_ne!(a.groups, c.groups);
    }

    #[test]
    fn cll_binary_is_a_flip() {
        let q = uniform_transition(2);
        let s = sample_cll(&gaussian(), &q, 1000, 3).unwrap();
        for (bar, lat) in s.latent.iter().enumerate() {
            assert!(lat.iter().all(|&y| y != bar));
            let pri = &s.groups.groups[bar].cond_priors;
            assert_eq!(pri[bar], 0.0);
            assert_eq!(pri[1 - bar], 1.0);
        }
    }

    #[test]
    fn cll_uniform_ten_classes_never_hits_truth() {
        let means: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64, 0.0]).collect();
        let cov = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = GaussianMixtureSpec::new(means, vec![cov; 10], vec![0.1; 10]).unwrap();
        let s = sample_cll(&Source::Gaussian(g), &uniform_transition(10), 5000, 5).unwrap();
        for (bar, lat) in s.latent.iter().enumerate() {
            assert!(lat.iter().all(|&y| y != bar));
        }
        let w: f64 = s.groups.groups.iter().map(|g| g.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pll_candidates_contain_truth() {
        let means: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let g = GaussianMixtureSpec::new(means, vec![vec![vec![1.0]]; 10], vec![0.1; 10]).unwrap();
        let n = 20_000;
        let s = sample_pll(&Source::Gaussian(g.clone()), 6.0, n, 1).unwrap();
        let sets = s.groups.groups[0].candidates.as_ref().unwrap();
        assert!(sets.iter().zip(&s.latent[0]).all(|(set, &y)| set.contains(y)));
        let mean = sets.iter().map(|s| s.len() as f64).sum::<f64>() / n as f64;
        // |S| - 1 ~ Binomial(9, 5/9)
        let sd = (9.0 * (5.0 / 9.0) * (4.0 / 9.0) / n as f64).sqrt();
        assert!((mean - 6.0).abs() < 4.0 * sd, "mean {mean}");

        let sup = sample_pll(&Source::Gaussian(g.clone()), 1.0, 500, 1).unwrap();
        let sets = sup.groups.groups[0].candidates.as_ref().unwrap();
        assert!(sets.iter().zip(&sup.latent[0]).all(|(s, &y)| *s == LabelSet::singleton(y)));

        let full = sample_pll(&Source::Gaussian(g.clone()), 10.0, 200, 1).unwrap();
        assert!(full.groups.groups[0]
            .candidates
            .as_ref()
            .unwrap()
            .iter()
            .all(|s| *s == LabelSet::full(10)));
        assert!(sample_pll(&Source::Gaussian(g), 11.0, 10, 1).is_err());
    }

    #[test]
    fn perturbation_rules() {
        let pri = PriorMatrix::binary_pair(0.5, 0.9).unwrap();
        let s = sample_weak_groups(&gaussian(), &pri, &[10, 10], 1).unwrap();
        let same = perturb_priors(&s.groups, 1.0).unwrap();
        assert_eq!(same, s.groups);
        let p11 = perturb_priors(&s.groups, 1.1).unwrap();
        assert!((p11.groups[0].cond_priors[0] - 0.55).abs() < 1e-15);
        assert!((p11.groups[0].cond_priors[1] - 0.45).abs() < 1e-15);
        let p13 = perturb_priors(&s.groups, 1.3).unwrap();
        assert_eq!(p13.groups[1].cond_priors[0], 1.0 - PRIOR_CLAMP_EPS);
        let sum: f64 = p13.groups[1].cond_priors.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        // original untouched
        assert_eq!(s.groups.groups[1].cond_priors[0], 0.9);
        assert!(perturb_priors(&s.groups, 0.0).is_err());
    }

    #[test]
    fn cll_rejects_nonzero_diagonal() {
        let q = array![[0.5, 1.0], [0.5, 0.0]];
        assert!(sample_cll(&gaussian(), &q, 10, 1).is_err());
    }
}
