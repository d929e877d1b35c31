//! Margin losses `ℓ(z, y)` with `y ∈ {+1, -1}`.
//!
//! The stable surrogate risks need a loss whose two label branches sum to a
//! constant: `ℓ(z,+1) + ℓ(z,-1) = c` for every score `z`. Sigmoid and ramp
//! satisfy this with `c = 1`; logistic and hinge do not and are only used by
//! baselines and the loss comparison experiment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary label in margin form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sigmoid,
    Ramp,
    Logistic,
    Hinge,
    ZeroOne,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Sigmoid,
        LossKind::Ramp,
        LossKind::Logistic,
        LossKind::Hinge,
        LossKind::ZeroOne,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Sigmoid => "sigmoid",
            LossKind::Ramp => "ramp",
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
            LossKind::ZeroOne => "zero_one",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(LossKind::Sigmoid),
            "ramp" => Ok(LossKind::Ramp),
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            "zero_one" | "zero-one" | "01" => Ok(LossKind::ZeroOne),
            other => Err(Error::InvalidInput(format!("unknown loss `{other}`"))),
        }
    }
}

/// A margin loss together with its symmetry constant.
///
/// The constant is stored rather than recomputed because the flood levels of
/// the surrogate risks consume it directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    c: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        let c = match kind {
            LossKind::Sigmoid | LossKind::Ramp | LossKind::ZeroOne => Some(1.0),
            LossKind::Logistic | LossKind::Hinge => None,
        };
        Self { kind, c }
    }

    pub fn sigmoid() -> Self {
        Self::new(LossKind::Sigmoid)
    }

    pub fn ramp() -> Self {
        Self::new(LossKind::Ramp)
    }

    /// Symmetry constant, `None` for kinds whose branch sum is not constant.
    pub fn c(&self) -> Option<f64> {
        self.c
    }

    pub fn is_symmetric(&self) -> bool {
        self.c.is_some()
    }

    /// Symmetry constant or an error naming the loss.
    pub fn require_symmetric(&self) -> Result<f64> {
        self.c.ok_or_else(|| {
            Error::Unsupported(format!(
                "loss `{}` is not symmetric and cannot serve as a stable-risk base",
                self.kind
            ))
        })
    }

    /// Loss value only. Valid for every kind, including `zero_one`.
    pub fn value(&self, z: f64, y: Sign) -> f64 {
        let m = y.as_f64() * z;
        match self.kind {
            LossKind::Sigmoid => sigmoid(-m),
            LossKind::Ramp => ((1.0 - m) * 0.5).clamp(0.0, 1.0),
            LossKind::Logistic => softplus(-m),
            LossKind::Hinge => (1.0 - m).max(0.0),
            LossKind::ZeroOne => {
                if m > 0.0 {
                    0.0
                } else if m < 0.0 {
                    1.0
                } else {
                    0.5
                }
            }
        }
    }

    /// Value and derivative with respect to the score `z`.
    ///
    /// Kinks (ramp at `|m| = 1`, hinge at `m = 1`) return the midpoint of the
    /// subdifferential.
    pub fn eval(&self, z: f64, y: Sign) -> Result<(f64, f64)> {
        let s = y.as_f64();
        let m = s * z;
        let dm = match self.kind {
            LossKind::Sigmoid => -sigmoid(m) * sigmoid(-m),
            LossKind::Ramp => {
                let a = m.abs();
                if a < 1.0 {
                    -0.5
                } else if a > 1.0 {
                    0.0
                } else {
                    -0.25
                }
            }
            LossKind::Logistic => -sigmoid(-m),
            LossKind::Hinge => {
                if m < 1.0 {
                    -1.0
                } else if m > 1.0 {
                    0.0
                } else {
                    -0.5
                }
            }
            LossKind::ZeroOne => {
                return Err(Error::Unsupported(
                    "zero_one loss has no usable gradient".into(),
                ))
            }
        };
        Ok((self.value(z, y), s * dm))
    }

    /// Lipschitz constant in the score.
    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            LossKind::Sigmoid => 0.25,
            LossKind::Ramp => 0.5,
            LossKind::Logistic | LossKind::Hinge => 1.0,
            LossKind::ZeroOne => f64::INFINITY,
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<LossKind>().map(LossSpec::new)
    }
}

/// Result of probing `ℓ(z,+1) + ℓ(z,-1)` on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    /// `max |sum - c|` for symmetric kinds, `max sum - min sum` otherwise.
    pub max_abs_deviation: f64,
    pub symmetric: bool,
    pub min_sum: f64,
    pub max_sum: f64,
}

pub fn check_symmetry(spec: &LossSpec, grid: &[f64]) -> Result<SymmetryCheck> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("symmetry grid is empty".into()));
    }
    let sums: Vec<f64> = grid
        .iter()
        .map(|&z| spec.value(z, Sign::Pos) + spec.value(z, Sign::Neg))
        .collect();
    let min_sum = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max_sum = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (max_abs_deviation, symmetric) = match spec.c() {
        Some(c) => (
            sums.iter().map(|s| (s - c).abs()).fold(0.0, f64::max),
            true,
        ),
        None => (max_sum - min_sum, false),
    };
    Ok(SymmetryCheck {
        max_abs_deviation,
        symmetric,
        min_sum,
        max_sum,
    })
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points).map(|i| lo + step * i as f64).collect()
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
