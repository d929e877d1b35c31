//! Oracles shared by the integration tests: hard scorers defined by a
//! labeling of a finite support, and exact supervised risks computed by full
//! summation over a `DiscreteMixture`.
#![allow(dead_code)]

use eoerm::model::{Model, ModelSpec};
use eoerm::risks::{OvaComposite, Scorer};
use eoerm::rng::rng_for;
use eoerm::synthdata::DiscreteMixture;
use eoerm::Result;
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

/// Scores `±margin` according to a fixed class per support point.
pub struct TableScorer {
    pub points: Array2<f64>,
    pub classes: Vec<usize>,
    pub heads: usize,
    pub margin: f64,
}

impl TableScorer {
    /// The Bayes rule of the mixture (argmax posterior, lowest index on ties).
    pub fn bayes(mix: &DiscreteMixture, heads: usize, margin: f64) -> Self {
        let classes = (0..mix.num_points())
            .map(|j| {
                let post = mix.posterior(j);
                let mut best = 0;
                for (k, &p) in post.iter().enumerate() {
                    if p > post[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Self::labeling(mix, classes, heads, margin)
    }

    pub fn labeling(mix: &DiscreteMixture, classes: Vec<usize>, heads: usize, margin: f64) -> Self {
        Self {
            points: mix.points().clone(),
            classes,
            heads,
            margin,
        }
    }

    fn lookup(&self, row: ndarray::ArrayView1<'_, f64>) -> usize {
        self.points
            .outer_iter()
            .position(|p| p == row)
            .expect("row is a support point")
    }
}

impl Scorer for TableScorer {
    fn heads(&self) -> usize {
        self.heads
    }

    fn score(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.heads));
        for (i, row) in x.outer_iter().enumerate() {
            let c = self.classes[self.lookup(row)];
            if self.heads == 1 {
                out[[i, 0]] = if c == 0 { self.margin } else { -self.margin };
            } else {
                for k in 0..self.heads {
                    out[[i, k]] = if k == c { self.margin } else { -self.margin };
                }
            }
        }
        Ok(out)
    }
}

/// A linear scorer with random weights and bias.
pub fn random_linear(d: usize, heads: usize, seed: u64) -> Model {
    let mut m = Model::new(ModelSpec::linear(d, heads), seed).unwrap();
    let mut rng = rng_for(seed, 77);
    let n = m.num_params();
    for b in &mut m.params_mut()[n - heads..] {
        *b = rng.random_range(-1.0..1.0);
    }
    m
}

/// `Σ_k θ_k Σ_j p(x_j | k) 𝓛(f(x_j), k)` by full summation.
pub fn supervised_risk(
    mix: &DiscreteMixture,
    scorer: &dyn Scorer,
    comp: &OvaComposite,
    class_weights: &[f64],
) -> f64 {
    let scores = scorer.score(mix.points().view()).unwrap();
    let cond = mix.cond_pmf();
    let mut total = 0.0;
    for (k, &theta) in class_weights.iter().enumerate() {
        for j in 0..mix.num_points() {
            let row: Vec<f64> = scores.row(j).to_vec();
            total += theta * cond[[k, j]] * comp.value(&row, k).unwrap();
        }
    }
    total
}

/// A random realizable mixture on `m` points in `d` dimensions.
pub fn realizable(k: usize, m: usize, d: usize, seed: u64) -> DiscreteMixture {
    DiscreteMixture::random_realizable(k, m, d, &mut rng_for(seed, 3)).unwrap()
}
