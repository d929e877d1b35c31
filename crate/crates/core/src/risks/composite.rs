//! One-vs-all composite losses over per-class score heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossSpec, Sign};

/// A symmetric margin loss lifted to `K` classes.
///
/// With `K` heads the composite for class `y` is
/// `ℓ(f_y, +1) + 1/(K−1) · Σ_{i≠y} ℓ(f_i, −1)`. A binary problem may instead
/// use a single head, where class 0 is the positive side and the composite
/// for class `y` is `ℓ(f, ±1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvaComposite {
    pub base: LossSpec,
    num_classes: usize,
    heads: usize,
}

impl OvaComposite {
    pub fn new(base: LossSpec, num_classes: usize, heads: usize) -> Result<Self> {
        base.require_symmetric()?;
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "composite loss needs at least two classes, got {num_classes}"
            )));
        }
        if heads != num_classes && !(heads == 1 && num_classes == 2) {
            return Err(Error::Shape(format!(
                "{heads} heads cannot score {num_classes} classes"
            )));
        }
        Ok(Self {
            base,
            num_classes,
            heads,
        })
    }

    /// `K` heads for `K` classes.
    pub fn multi_head(base: LossSpec, num_classes: usize) -> Result<Self> {
        Self::new(base, num_classes, num_classes)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn c(&self) -> f64 {
        self.base.c().expect("checked at construction")
    }

    /// Expected composite loss of a Bayes-correct scorer against a wrong
    /// label: `c·K/(K−1)` for `K` heads and `c` for a single head.
    pub fn alpha(&self) -> f64 {
        if self.heads == 1 {
            self.c()
        } else {
            let k = self.num_classes as f64;
            k / (k - 1.0) * self.c()
        }
    }

    fn check_len(&self, scores: &[f64]) -> Result<()> {
        if scores.len() == self.heads {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "expected {} scores, got {}",
                self.heads,
                scores.len()
            )))
        }
    }

    fn head_sign(y: usize) -> Sign {
        if y == 0 {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    /// Composite loss value for class `y`.
    pub fn value(&self, scores: &[f64], y: usize) -> Result<f64> {
        self.check_len(scores)?;
        if self.heads == 1 {
            return Ok(self.base.value(scores[0], Self::head_sign(y)));
        }
        let off = 1.0 / (self.num_classes as f64 - 1.0);
        let mut v = 0.0;
        for (i, &z) in scores.iter().enumerate() {
            if i == y {
                v += self.base.value(z, Sign::Pos);
            } else {
                v += off * self.base.value(z, Sign::Neg);
            }
        }
        Ok(v)
    }

    /// Adds `scale · ∂𝓛(scores, y)/∂scores` into `grad` and returns the value.
    pub fn accumulate(&self, scores: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> Result<f64> {
        self.check_len(scores)?;
        if self.heads == 1 {
            let (v, g) = self.base.eval(scores[0], Self::head_sign(y))?;
            grad[0] += scale * g;
            return Ok(v);
        }
        let off = 1.0 / (self.num_classes as f64 - 1.0);
        let mut v = 0.0;
        for (i, &z) in scores.iter().enumerate() {
            let (w, sign) = if i == y { (1.0, Sign::Pos) } else { (off, Sign::Neg) };
            let (lv, lg) = self.base.eval(z, sign)?;
            v += w * lv;
            grad[i] += scale * w * lg;
        }
        Ok(v)
    }

    /// Composite values for every class at once, written into `out`.
    pub fn values_into(&self, scores: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(scores)?;
        if self.heads == 1 {
            out[0] = self.base.value(scores[0], Sign::Pos);
            out[1] = self.base.value(scores[0], Sign::Neg);
            return Ok(());
        }
        let off = 1.0 / (self.num_classes as f64 - 1.0);
        let neg: Vec<f64> = scores.iter().map(|&z| self.base.value(z, Sign::Neg)).collect();
        let neg_sum: f64 = neg.iter().sum();
        for (y, o) in out.iter_mut().enumerate() {
            *o = self.base.value(scores[y], Sign::Pos) + off * (neg_sum - neg[y]);
        }
        Ok(())
    }

    /// Adds `Σ_y coefs[y] · ∂𝓛(scores, y)/∂scores` into `grad`.
    pub fn accumulate_weighted(&self, scores: &[f64], coefs: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_len(scores)?;
        if self.heads == 1 {
            let (_, gp) = self.base.eval(scores[0], Sign::Pos)?;
            let (_, gn) = self.base.eval(scores[0], Sign::Neg)?;
            grad[0] += coefs[0] * gp + coefs[1] * gn;
            return Ok(());
        }
        let off = 1.0 / (self.num_classes as f64 - 1.0);
        let total: f64 = coefs.iter().sum();
        for (i, &z) in scores.iter().enumerate() {
            let (_, gp) = self.base.eval(z, Sign::Pos)?;
            let (_, gn) = self.base.eval(z, Sign::Neg)?;
            grad[i] += coefs[i] * gp + off * (total - coefs[i]) * gn;
        }
        Ok(())
    }

    /// Complementary-label component: every head's target flipped.
    /// By symmetry it equals `complementary_offset() − 𝓛(scores, y)`.
    pub fn complementary_value(&self, scores: &[f64], y: usize) -> Result<f64> {
        Ok(self.complementary_offset() - self.value(scores, y)?)
    }

    /// `2c` for `K` heads, `c` for a single head.
    pub fn complementary_offset(&self) -> f64 {
        if self.heads == 1 {
            self.c()
        } else {
            2.0 * self.c()
        }
    }

    /// Gradient form of [`Self::complementary_value`], evaluated head by
    /// head rather than through the identity.
    pub fn accumulate_complementary(
        &self,
        scores: &[f64],
        y: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_len(scores)?;
        if self.heads == 1 {
            let (v, g) = self.base.eval(scores[0], Self::head_sign(y).flip())?;
            grad[0] += scale * g;
            return Ok(v);
        }
        let off = 1.0 / (self.num_classes as f64 - 1.0);
        let mut v = 0.0;
        for (i, &z) in scores.iter().enumerate() {
            let (w, sign) = if i == y { (1.0, Sign::Neg) } else { (off, Sign::Pos) };
            let (lv, lg) = self.base.eval(z, sign)?;
            v += w * lv;
            grad[i] += scale * w * lg;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use proptest::prelude::*;

    fn perfect(k: usize, y: usize, m: f64) -> Vec<f64> {
        (0..k).map(|i| if i == y { m } else { -m }).collect()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let comp = OvaComposite::multi_head(LossSpec::ramp(), 4).unwrap();
        assert_eq!(comp.value(&perfect(4, 2, 3.0), 2).unwrap(), 0.0);
    }

    #[test]
    fn bayes_scores_against_wrong_label_give_alpha() {
        for k in [2, 3, 5, 10] {
            let comp = OvaComposite::multi_head(LossSpec::ramp(), k).unwrap();
            let s = perfect(k, 0, 2.0);
            for y in 1..k {
                let v = comp.value(&s, y).unwrap();
                assert!((v - comp.alpha()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_heads_reduce_to_two_term_form() {
        let comp = OvaComposite::multi_head(LossSpec::sigmoid(), 2).unwrap();
        let l = LossSpec::sigmoid();
        let s = [0.3, -1.1];
        let want = l.value(0.3, Sign::Pos) + l.value(-1.1, Sign::Neg);
        assert!((comp.value(&s, 0).unwrap() - want).abs() < 1e-15);
        // a single head with score z0 − z1 is the same classifier; check the
        // single-head composite matches the binary loss directly
        let single = OvaComposite::new(LossSpec::sigmoid(), 2, 1).unwrap();
        assert_eq!(single.value(&[0.4], 1).unwrap(), l.value(0.4, Sign::Neg));
        assert_eq!(single.alpha(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(OvaComposite::multi_head(LossSpec::new(LossKind::Hinge), 3).is_err());
        assert!(OvaComposite::multi_head(LossSpec::ramp(), 1).is_err());
        assert!(OvaComposite::new(LossSpec::ramp(), 3, 1).is_err());
        let comp = OvaComposite::multi_head(LossSpec::ramp(), 3).unwrap();
        assert!(comp.value(&[0.0, 1.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn accumulate_matches_value_and_finite_differences(
            scores in prop::collection::vec(-3.0f64..3.0, 4),
            y in 0usize..4,
        ) {
            let comp = OvaComposite::multi_head(LossSpec::sigmoid(), 4).unwrap();
            let mut g = vec![0.0; 4];
            let v = comp.accumulate(&scores, y, 1.0, &mut g).unwrap();
            prop_assert!((v - comp.value(&scores, y).unwrap()).abs() < 1e-14);
            let h = 1e-6;
            for i in 0..4 {
                let mut p = scores.clone();
                p[i] += h;
                let mut m = scores.clone();
                m[i] -= h;
                let fd = (comp.value(&p, y).unwrap() - comp.value(&m, y).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() < 1e-8);
            }
            let mut all = vec![0.0; 4];
            comp.values_into(&scores, &mut all).unwrap();
            let coefs = [0.3, -1.2, 0.7, 2.0];
            let mut gw = vec![0.0; 4];
            comp.accumulate_weighted(&scores, &coefs, &mut gw).unwrap();
            let mut gsum = vec![0.0; 4];
            for (yy, &cf) in coefs.iter().enumerate() {
                prop_assert!((all[yy] - comp.value(&scores, yy).unwrap()).abs() < 1e-14);
                comp.accumulate(&scores, yy, cf, &mut gsum).unwrap();
            }
            for i in 0..4 {
                prop_assert!((gw[i] - gsum[i]).abs() < 1e-13);
            }
            let mut gc = vec![0.0; 4];
            let vc = comp.accumulate_complementary(&scores, y, 1.0, &mut gc).unwrap();
            prop_assert!((vc - comp.complementary_value(&scores, y).unwrap()).abs() < 1e-12);
            for i in 0..4 {
                prop_assert!((gc[i] + g[i]).abs() < 1e-14);
            }
        }
    }
}
