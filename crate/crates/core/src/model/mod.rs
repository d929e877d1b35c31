//! Linear and MLP scorers over a flat parameter vector, with a manual
//! forward/backward pass, batch normalization, and first-order optimizers.

mod checkpoint;
mod optim;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{Optimizer, OptimizerState};

use crate::error::{Error, Result};
use crate::risks::Scorer;
use crate::rng::rng_for;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Layer widths and normalization flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: usize,
    pub batch_norm: bool,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, heads: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            heads,
            batch_norm: false,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, heads: usize, batch_norm: bool) -> Self {
        Self {
            input_dim,
            hidden,
            heads,
            batch_norm,
        }
    }

    /// Four hidden blocks of width 300, each Linear–BatchNorm–ReLU.
    pub fn mlp_4x300(input_dim: usize, heads: usize) -> Self {
        Self::mlp(input_dim, vec![300; 4], heads, true)
    }

    /// Parses `linear`, `mlp-4x300`, or `mlp:<w1>x<w2>x…` (add `+bn` for
    /// batch normalization, e.g. `mlp:64x64+bn`).
    pub fn from_name(name: &str, input_dim: usize, heads: usize) -> Result<Self> {
        match name {
            "linear" => Ok(Self::linear(input_dim, heads)),
            "mlp-4x300" => Ok(Self::mlp_4x300(input_dim, heads)),
            _ => {
                let rest = name
                    .strip_prefix("mlp:")
                    .ok_or_else(|| Error::InvalidInput(format!("unknown architecture `{name}`")))?;
                let (widths, bn) = match rest.strip_suffix("+bn") {
                    Some(w) => (w, true),
                    None => (rest, false),
                };
                let hidden = widths
                    .split('x')
                    .map(|w| w.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::InvalidInput(format!("bad widths in `{name}`")))?;
                Ok(Self::mlp(input_dim, hidden, heads, bn))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.heads == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidInput("layer widths must be at least 1".into()));
        }
        Ok(())
    }

    fn layout(&self) -> (Vec<Layer>, usize) {
        let mut layers = Vec::new();
        let mut off = 0;
        let mut fan_in = self.input_dim;
        let widths: Vec<usize> = self.hidden.iter().copied().chain([self.heads]).collect();
        for (i, &out) in widths.iter().enumerate() {
            let hidden = i + 1 < widths.len();
            let w = off;
            off += out * fan_in;
            let b = off;
            off += out;
            let bn = if hidden && self.batch_norm {
                let g = off;
                off += 2 * out;
                Some(g)
            } else {
                None
            };
            layers.push(Layer {
                fan_in,
                fan_out: out,
                w,
                b,
                bn,
                relu: hidden,
            });
            fan_in = out;
        }
        (layers, off)
    }
}

/// Offsets of one affine block inside the flat parameter vector. `W` is
/// stored `fan_out × fan_in` row-major, then the bias, then BN `γ` and `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    bn: Option<usize>,
    relu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    mode: Mode,
    inputs: Vec<Array2<f64>>,
    normalized: Vec<Option<(Array2<f64>, Array1<f64>)>>,
    masks: Vec<Option<Array2<bool>>>,
}

/// Per-layer batch mean and unbiased variance from a training forward pass.
#[derive(Debug, Clone, Default)]
pub struct BatchStats(Vec<Option<(Array1<f64>, Array1<f64>)>>);

/// Gradient of a scalar objective with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub grads: Vec<f64>,
}

impl GradientTape {
    pub fn zeros(len: usize) -> Self {
        Self { grads: vec![0.0; len] }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    running: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

impl Model {
    /// Kaiming fan-in normal weights, zero biases, unit BN scale.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = rng_for(seed, 0);
        for layer in model.layers.clone() {
            let std = (2.0 / layer.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
            for p in &mut model.params[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    /// All weights and biases zero, BN scale one.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let (layers, count) = spec.layout();
        let mut params = vec![0.0; count];
        let mut running = Vec::with_capacity(layers.len());
        for l in &layers {
            if let Some(g) = l.bn {
                params[g..g + l.fan_out].iter_mut().for_each(|v| *v = 1.0);
                running.push(Some((Array1::zeros(l.fan_out), Array1::ones(l.fan_out))));
            } else {
                running.push(None);
            }
        }
        Ok(Self {
            spec,
            layers,
            params,
            running,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Running means and variances of every normalized layer, flattened.
    pub fn running_stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (m, v) in self.running.iter().flatten() {
            out.extend(m.iter());
            out.extend(v.iter());
        }
        out
    }

    pub fn set_running_stats(&mut self, flat: &[f64]) -> Result<()> {
        let need: usize = self.running.iter().flatten().map(|(m, _)| 2 * m.len()).sum();
        if flat.len() != need {
            return Err(Error::Shape(format!("expected {need} running statistics")));
        }
        let mut it = flat.iter().copied();
        for (m, v) in self.running.iter_mut().flatten() {
            m.iter_mut().for_each(|x| *x = it.next().unwrap());
            v.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    fn weight(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.fan_out, l.fan_in), &self.params[l.w..l.w + l.fan_out * l.fan_in])
            .expect("layout matches")
    }

    /// Forward pass. Training mode normalizes with batch statistics and
    /// returns them so the caller can update the running averages.
    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<(Array2<f64>, Cache, BatchStats)> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        let n = x.nrows();
        let mut cache = Cache {
            mode,
            inputs: Vec::with_capacity(self.layers.len()),
            normalized: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut stats = BatchStats(Vec::with_capacity(self.layers.len()));
        let mut h = x.to_owned();
        for (li, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&self.weight(l).t());
            let bias = &self.params[l.b..l.b + l.fan_out];
            for mut row in a.rows_mut() {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            cache.inputs.push(h);
            let mut batch = None;
            let mut norm = None;
            if let Some(g) = l.bn {
                let (mean, var) = match mode {
                    Mode::Train => {
                        if n < 2 {
                            return Err(Error::InvalidInput(
                                "batch normalization needs at least two rows in training mode".into(),
                            ));
                        }
                        let mean = a.mean_axis(Axis(0)).expect("n ≥ 2");
                        let var = a.var_axis(Axis(0), 0.0);
                        let unbiased = &var * (n as f64 / (n as f64 - 1.0));
                        batch = Some((mean.clone(), unbiased));
                        (mean, var)
                    }
                    Mode::Eval => {
                        let (m, v) = self.running[li].as_ref().expect("bn layer has stats");
                        (m.clone(), v.clone())
                    }
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let gamma = &self.params[g..g + l.fan_out];
                let beta = &self.params[g + l.fan_out..g + 2 * l.fan_out];
                let mut xhat = a;
                for mut row in xhat.rows_mut() {
                    for j in 0..l.fan_out {
                        row[j] = (row[j] - mean[j]) * inv_std[j];
                    }
                }
                let mut out = xhat.clone();
                for mut row in out.rows_mut() {
                    for j in 0..l.fan_out {
                        row[j] = gamma[j] * row[j] + beta[j];
                    }
                }
                norm = Some((xhat, inv_std));
                a = out;
            }
            cache.normalized.push(norm);
            stats.0.push(batch);
            if l.relu {
                let mask = a.mapv(|v| v > 0.0);
                a.zip_mut_with(&mask, |v, &m| {
                    if !m {
                        *v = 0.0
                    }
                });
                cache.masks.push(Some(mask));
            } else {
                cache.masks.push(None);
            }
            h = a;
        }
        if let Some(bad) = h.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite score {bad}; {}",
                self.diagnostics()
            )));
        }
        Ok((h, cache, stats))
    }

    /// Parameter summary for numeric error messages.
    pub fn diagnostics(&self) -> String {
        let norm = self.params.iter().map(|p| p * p).sum::<f64>().sqrt();
        let max = self.params.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let bad = self.params.iter().filter(|p| !p.is_finite()).count();
        format!("parameter norm {norm:.6e}, max |p| {max:.6e}, non-finite parameters {bad}")
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &BatchStats) {
        for (run, batch) in self.running.iter_mut().zip(&stats.0) {
            if let (Some((rm, rv)), Some((bm, bv))) = (run, batch) {
                rm.zip_mut_with(bm, |r, b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
                rv.zip_mut_with(bv, |r, b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
            }
        }
    }

    /// Backpropagates `d objective / d scores` to every parameter.
    pub fn backward(&self, cache: &Cache, dscores: &Array2<f64>) -> GradientTape {
        let mut tape = GradientTape::zeros(self.params.len());
        let mut delta = dscores.clone();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.masks[li] {
                delta.zip_mut_with(mask, |d, &m| {
                    if !m {
                        *d = 0.0
                    }
                });
            }
            if let (Some(g), Some((xhat, inv_std))) = (l.bn, &cache.normalized[li]) {
                let n = delta.nrows() as f64;
                let gamma = &self.params[g..g + l.fan_out];
                let dgamma = (&delta * xhat).sum_axis(Axis(0));
                let dbeta = delta.sum_axis(Axis(0));
                tape.grads[g..g + l.fan_out].copy_from_slice(dgamma.as_slice().unwrap());
                tape.grads[g + l.fan_out..g + 2 * l.fan_out].copy_from_slice(dbeta.as_slice().unwrap());
                let mut da = delta.clone();
                for mut row in da.rows_mut() {
                    for j in 0..l.fan_out {
                        row[j] *= gamma[j] * inv_std[j];
                    }
                }
                // Batch statistics depend on every row, which adds the
                // centering terms; running statistics make the map affine.
                if cache.mode == Mode::Train {
                    for (i, mut row) in da.rows_mut().into_iter().enumerate() {
                        for j in 0..l.fan_out {
                            row[j] -= gamma[j] * inv_std[j] / n * (dbeta[j] + xhat[[i, j]] * dgamma[j]);
                        }
                    }
                }
                delta = da;
            }
            let input = &cache.inputs[li];
            let dw = delta.t().dot(input);
            tape.grads[l.w..l.w + l.fan_out * l.fan_in].copy_from_slice(dw.as_slice().unwrap());
            let db = delta.sum_axis(Axis(0));
            tape.grads[l.b..l.b + l.fan_out].copy_from_slice(db.as_slice().unwrap());
            if li > 0 {
                delta = delta.dot(&self.weight(l));
            }
        }
        tape
    }

    /// Forward in `mode`, hands the scores to `objective` (which returns the
    /// value and its derivative with respect to the scores), and backpropagates.
    pub fn loss_and_grad<F>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
        objective: F,
    ) -> Result<(f64, GradientTape, BatchStats)>
    where
        F: FnOnce(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
    {
        let (scores, cache, stats) = self.forward(x, mode)?;
        let (value, dscores) = objective(&scores)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("objective is {value}; {}", self.diagnostics())));
        }
        if dscores.raw_dim() != scores.raw_dim() {
            return Err(Error::Shape("score gradient shape differs from scores".into()));
        }
        Ok((value, self.backward(&cache, &dscores), stats))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }
}

impl Scorer for Model {
    fn heads(&self) -> usize {
        self.spec.heads
    }

    fn score(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.predict(x)
    }
}

/// Largest `|analytic − central difference| / (|analytic| + step)` over
/// `samples` parameters drawn without replacement (all when `None`).
///
/// `objective` must return the value and gradient at the given model and
/// must not mutate hidden state.
pub fn grad_check<F>(model: &Model, objective: F, step: f64, samples: Option<usize>, seed: u64) -> Result<f64>
where
    F: Fn(&Model) -> Result<(f64, GradientTape)>,
{
    if step <= 0.0 {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let (_, tape) = objective(model)?;
    let mut idx: Vec<usize> = (0..model.num_params()).collect();
    if let Some(k) = samples {
        idx.shuffle(&mut rng_for(seed, 1));
        idx.truncate(k);
    }
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for &i in &idx {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let (up, _) = objective(&probe)?;
        probe.params[i] = orig - step;
        let (down, _) = objective(&probe)?;
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let a = tape.grads[i];
        worst = worst.max((a - fd).abs() / (a.abs() + step));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn parameter_counts() {
        assert_eq!(Model::new(ModelSpec::linear(2, 1), 0).unwrap().num_params(), 3);
        assert_eq!(Model::new(ModelSpec::mlp_4x300(784, 10), 0).unwrap().num_params(), 511_810);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::new(ModelSpec::mlp(5, vec![7, 3], 2, true), 9).unwrap();
        let b = Model::new(ModelSpec::mlp(5, vec![7, 3], 2, true), 9).unwrap();
        assert_eq!(a, b);
        let c = Model::new(ModelSpec::mlp(5, vec![7, 3], 2, true), 10).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_model_scores_zero_and_linear_is_dot_product() {
        let m = Model::zeros(ModelSpec::mlp(3, vec![4], 2, true)).unwrap();
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        assert!(m.predict(x.view()).unwrap().iter().all(|&v| v == 0.0));
        let mut lin = Model::zeros(ModelSpec::linear(3, 1)).unwrap();
        lin.set_params(&[0.5, -1.0, 2.0, 0.25]).unwrap();
        let s = lin.predict(x.view()).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 0.5 - 2.0 + 6.0 + 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s[[1, 0]], -0.5 - 0.5 + 0.25, epsilon = 1e-15);
    }

    #[test]
    fn positive_path_mlp_is_composed_affine_map() {
        let mut m = Model::zeros(ModelSpec::mlp(2, vec![2], 1, false)).unwrap();
        // W1 = [[1,2],[3,1]], b1 = [1,1], W2 = [[2,-1]], b2 = [0.5]
        m.set_params(&[1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 2.0, -1.0, 0.5]).unwrap();
        let x = array![[0.5, 0.25]];
        let h = [1.0 * 0.5 + 2.0 * 0.25 + 1.0, 3.0 * 0.5 + 1.0 * 0.25 + 1.0];
        let want = 2.0 * h[0] - h[1] + 0.5;
        assert_abs_diff_eq!(m.predict(x.view()).unwrap()[[0, 0]], want, epsilon = 1e-15);
    }

    #[test]
    fn train_and_eval_agree_when_running_stats_match_batch() {
        let mut m = Model::new(ModelSpec::mlp(3, vec![5], 2, true), 3).unwrap();
        let x = array![[1.0, 0.0, 2.0], [0.5, -1.0, 0.0], [-2.0, 1.0, 1.0], [0.0, 0.3, -0.7]];
        let (train, _, _) = m.forward(x.view(), Mode::Train).unwrap();
        // set running stats to the biased batch statistics the train pass used
        let a = x.dot(&m.weight(&m.layers[0]).t());
        let mean = a.mean_axis(Axis(0)).unwrap();
        let var = a.var_axis(Axis(0), 0.0);
        let flat: Vec<f64> = mean.iter().chain(var.iter()).copied().collect();
        m.set_running_stats(&flat).unwrap();
        let eval = m.predict(x.view()).unwrap();
        for (a, b) in train.iter().zip(eval.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn square_objective(x: Array2<f64>, mode: Mode) -> impl Fn(&Model) -> Result<(f64, GradientTape)> {
        move |m: &Model| {
            let (v, t, _) = m.loss_and_grad(x.view(), mode, |s| {
                let v = s.iter().enumerate().map(|(i, z)| (i as f64 * 0.1 + 1.0) * z * z).sum::<f64>();
                let mut g = s.clone();
                g.iter_mut().enumerate().for_each(|(i, z)| *z *= 2.0 * (i as f64 * 0.1 + 1.0));
                Ok((v, g))
            })?;
            Ok((v, t))
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences_in_both_modes() {
        let mut m = Model::new(ModelSpec::mlp(4, vec![6, 5], 3, true), 4).unwrap();
        let x = Array2::from_shape_fn((7, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let (_, _, stats) = m.forward(x.view(), Mode::Train).unwrap();
        m.update_running(&stats);
        for mode in [Mode::Train, Mode::Eval] {
            let err = grad_check(&m, square_objective(x.clone(), mode), 1e-4, None, 0).unwrap();
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
    }

    #[test]
    fn quadratic_toy_gradient_is_closed_form() {
        // objective Σ z², linear model with w = 1, b = 0 on x = 3 → d/dw = 2·z·x = 18
        let mut m = Model::zeros(ModelSpec::linear(1, 1)).unwrap();
        m.set_params(&[1.0, 0.0]).unwrap();
        let x = array![[3.0]];
        let (v, tape) = square_objective(x, Mode::Eval)(&m).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(tape.grads, vec![18.0, 6.0]);
    }

    #[test]
    fn rejects_dim_mismatch_and_reports_non_finite() {
        let mut m = Model::new(ModelSpec::linear(2, 1), 0).unwrap();
        assert!(m.predict(array![[1.0, 2.0, 3.0]].view()).is_err());
        m.params_mut()[0] = f64::NAN;
        let err = m.predict(array![[1.0, 2.0]].view()).unwrap_err();
        assert!(err.to_string().contains("non-finite parameters 1"));
    }

    #[test]
    fn architecture_names() {
        assert_eq!(ModelSpec::from_name("mlp:16x16", 8, 3).unwrap(), ModelSpec::mlp(8, vec![16, 16], 3, false));
        assert!(ModelSpec::from_name("mlp:16x16+bn", 8, 3).unwrap().batch_norm);
        assert!(ModelSpec::from_name("resnet", 8, 3).is_err());
    }
}
