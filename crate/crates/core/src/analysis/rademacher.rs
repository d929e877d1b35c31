//! Empirical Rademacher complexity of norm-bounded scorer classes.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelSpec, Optimizer};
use crate::rng::{derive_seed, rng_for};

/// Hypothesis class whose complexity is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RademacherClass {
    /// `{x ↦ w·x : ‖w‖ ≤ bound}`, sup in closed form.
    Linear { bound: f64 },
    /// First head of an MLP with parameter norm ≤ `bound`. The sup is
    /// approximated by projected gradient ascent.
    Mlp {
        hidden: Vec<usize>,
        bound: f64,
        steps: usize,
        restarts: usize,
    },
}

impl RademacherClass {
    pub fn mlp(hidden: Vec<usize>, bound: f64) -> Self {
        RademacherClass::Mlp {
            hidden,
            bound,
            steps: 50,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub estimate: f64,
    /// Monte Carlo standard error over sign draws.
    pub std_err: f64,
    pub draws: usize,
    /// Set when the sup is only approximated from below.
    pub lower_bound: bool,
}

fn signs(n: usize, seed: u64, draw: u64) -> Array1<f64> {
    let mut rng = rng_for(seed, draw);
    Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
}

fn project(params: &mut [f64], bound: f64) {
    let norm = params.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        params.iter_mut().for_each(|v| *v *= s);
    }
}

fn mlp_sup(
    sample: ArrayView2<'_, f64>,
    sigma: &Array1<f64>,
    hidden: &[usize],
    bound: f64,
    steps: usize,
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    let n = sample.nrows() as f64;
    let spec = ModelSpec::mlp(sample.ncols(), hidden.to_vec(), 1, false);
    let mut best = f64::NEG_INFINITY;
    for r in 0..restarts {
        let mut model = Model::new(spec.clone(), derive_seed(seed, r as u64))?;
        project(model.params_mut(), bound);
        let mut opt = Optimizer::adam(0.05).state(model.num_params());
        for step in 0..=steps {
            let (scores, cache, _) = model.forward(sample, Mode::Eval)?;
            let value = scores.column(0).dot(sigma) / n;
            best = best.max(value);
            if step == steps {
                break;
            }
            // ascend by descending the negated correlation
            let dscores = Array2::from_shape_fn((sigma.len(), 1), |(i, _)| -sigma[i] / n);
            let tape = model.backward(&cache, &dscores);
            opt.step(model.params_mut(), &tape)?;
            project(model.params_mut(), bound);
        }
    }
    Ok(best)
}

/// Mean over `draws` sign vectors of `sup_h (1/n) Σ σ_i h(z_i)`.
pub fn empirical_rademacher(
    class: &RademacherClass,
    sample: ArrayView2<'_, f64>,
    draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    let n = sample.nrows();
    if n == 0 || draws == 0 {
        return Err(Error::InvalidInput("need a non-empty sample and at least one draw".into()));
    }
    let mut values = Vec::with_capacity(draws);
    for t in 0..draws {
        let sigma = signs(n, seed, t as u64);
        let v = match class {
            RademacherClass::Linear { bound } => {
                let s = sample.t().dot(&sigma);
                bound * s.dot(&s).sqrt() / n as f64
            }
            RademacherClass::Mlp {
                hidden,
                bound,
                steps,
                restarts,
            } => mlp_sup(sample, &sigma, hidden, *bound, *steps, *restarts, derive_seed(seed, 0x4D4C_5000 + t as u64))?,
        };
        values.push(v);
    }
    let m = draws as f64;
    let mean = values.iter().sum::<f64>() / m;
    let std_err = if draws > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        estimate: mean,
        std_err,
        draws,
        lower_bound: matches!(class, RademacherClass::Mlp { .. }),
    })
}
