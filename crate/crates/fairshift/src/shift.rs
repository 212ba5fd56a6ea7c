//! Shift families and the smooth trimming kernel.
//!
//! A shift family is a map `f: [0,1) -> [0,1)` applied to each non-target
//! arm's propensity; admissibility requires `f(x) < x` for `x > 0` (and hence
//! `f(0) = 0`), so an intervention can only move probability mass *toward*
//! the target arm. Built-in families:
//!
//! * `tsm` — `f(x) = 0`: all mass moves to the target (the classical
//!   treatment-specific mean, smoothly trimmed).
//! * `multiplicative` — `f(x) = delta * x`: each competing arm keeps a fixed
//!   fraction `delta` of its propensity.
//! * `exp_tilt` — `f(x) = delta*x / (delta*x + 1 - x)`: the odds of each
//!   competing arm are multiplied by `delta`.
//! * `identity` — `f(x) = x`: the degenerate no-shift family, admitted only
//!   as a negative control (it violates strict admissibility).
//! * `custom` — a tabulated `(x, f, f', f'')` triple with linear
//!   interpolation, admissibility-checked on its grid at construction.
//!
//! The trimming kernel `s(x) = 1 - exp(-k*x)` smooths the hard positivity
//! indicator `1{x > 0}`; `s(0) = 0` exactly, which is what makes every
//! estimand downstream insensitive to arms that can never be observed.
//! First and second derivatives of both `f` and `s` are analytic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from family construction or evaluation.
#[derive(Debug, Error)]
pub enum ShiftError {
    /// Derivative order outside {0, 1, 2}.
    #[error("derivative order must be 0, 1, or 2, got {0}")]
    BadOrder(u8),
    /// `delta` outside [0, 1].
    #[error("delta must lie in [0, 1], got {0}")]
    BadDelta(f64),
    /// Smoothing rate `k` must be strictly positive and finite.
    #[error("smoothing rate k must be positive and finite, got {0}")]
    BadRate(f64),
    /// A custom table violates `f(x) < x` (or basic shape requirements).
    #[error("custom family inadmissible: {0}")]
    Inadmissible(String),
}

/// Tabulated custom family: strictly increasing grid over [0, 1) with values
/// of `f`, `f'`, `f''` at each knot, evaluated by linear interpolation and
/// held constant beyond the last knot.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomShift {
    xs: Vec<f64>,
    f: Vec<f64>,
    df: Vec<f64>,
    d2f: Vec<f64>,
}

impl CustomShift {
    fn interp(&self, table: &[f64], x: f64) -> f64 {
        let xs = &self.xs;
        if x <= xs[0] {
            return table[0];
        }
        if x >= *xs.last().unwrap() {
            return *table.last().unwrap();
        }
        // Grid is strictly increasing; find the bracketing segment.
        let hi = xs.partition_point(|&g| g < x).max(1);
        let (x0, x1) = (xs[hi - 1], xs[hi]);
        let w = (x - x0) / (x1 - x0);
        table[hi - 1] * (1.0 - w) + table[hi] * w
    }
}

/// A shift family tag plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftFamily {
    /// `f = 0`: full shift toward the target arm.
    Tsm,
    /// `f(x) = delta * x`.
    Multiplicative { delta: f64 },
    /// `f(x) = delta*x / (delta*x + 1 - x)` (odds scaled by `delta`).
    ExpTilt { delta: f64 },
    /// `f(x) = x`: no shift; negative control only.
    Identity,
    /// User-supplied tabulated family.
    Custom(CustomShift),
}

/// Serializable description of a family for configs and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl ShiftFamily {
    /// Multiplicative family with validated `delta` in [0, 1]; `delta = 1`
    /// degenerates to the identity and is permitted for no-shift tests only.
    pub fn multiplicative(delta: f64) -> Result<Self, ShiftError> {
        if !(0.0..=1.0).contains(&delta) || !delta.is_finite() {
            return Err(ShiftError::BadDelta(delta));
        }
        Ok(ShiftFamily::Multiplicative { delta })
    }

    /// Exponential tilt family with validated `delta` in [0, 1].
    pub fn exp_tilt(delta: f64) -> Result<Self, ShiftError> {
        if !(0.0..=1.0).contains(&delta) || !delta.is_finite() {
            return Err(ShiftError::BadDelta(delta));
        }
        Ok(ShiftFamily::ExpTilt { delta })
    }

    /// Custom tabulated family. The grid must be strictly increasing inside
    /// [0, 1), start at `x = 0` with `f(0) = 0`, and satisfy `f(x) < x` at
    /// every interior knot.
    pub fn custom(xs: Vec<f64>, f: Vec<f64>, df: Vec<f64>, d2f: Vec<f64>) -> Result<Self, ShiftError> {
        if xs.len() < 2 || f.len() != xs.len() || df.len() != xs.len() || d2f.len() != xs.len() {
            return Err(ShiftError::Inadmissible(
                "table needs >= 2 knots with matching value/derivative lengths".into(),
            ));
        }
        if xs[0] != 0.0 {
            return Err(ShiftError::Inadmissible("grid must start at x = 0".into()));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ShiftError::Inadmissible("grid must be strictly increasing".into()));
            }
        }
        if *xs.last().unwrap() >= 1.0 {
            return Err(ShiftError::Inadmissible("grid must stay inside [0, 1)".into()));
        }
        if f[0] != 0.0 {
            return Err(ShiftError::Inadmissible("f(0) must be 0".into()));
        }
        for (i, (&x, &fx)) in xs.iter().zip(f.iter()).enumerate().skip(1) {
            if !(fx >= 0.0 && fx < x) {
                return Err(ShiftError::Inadmissible(format!(
                    "f({x}) = {fx} violates 0 <= f(x) < x at knot {i}"
                )));
            }
        }
        Ok(ShiftFamily::Custom(CustomShift { xs, f, df, d2f }))
    }

    /// Custom family without the admissibility check. Exists so corrupt
    /// tables can exercise downstream error paths; production configs should
    /// go through [`ShiftFamily::custom`].
    pub fn custom_unchecked(xs: Vec<f64>, f: Vec<f64>, df: Vec<f64>, d2f: Vec<f64>) -> Self {
        ShiftFamily::Custom(CustomShift { xs, f, df, d2f })
    }

    /// Evaluate `f` (order 0) or its first/second derivative at `x`.
    pub fn eval(&self, x: f64, order: u8) -> Result<f64, ShiftError> {
        if order > 2 {
            return Err(ShiftError::BadOrder(order));
        }
        Ok(match self {
            ShiftFamily::Tsm => 0.0,
            ShiftFamily::Multiplicative { delta } => match order {
                0 => delta * x,
                1 => *delta,
                _ => 0.0,
            },
            ShiftFamily::ExpTilt { delta } => {
                // f = d*x / D with D = d*x + 1 - x = 1 + (d - 1)*x,
                // f' = d / D^2, f'' = 2*d*(1 - d) / D^3.
                // At d = 0 the family is identically zero but D vanishes at
                // x = 1, so the ratio forms would produce 0/0 there; return
                // the zero member directly.
                if *delta == 0.0 {
                    0.0
                } else {
                    let den = delta * x + 1.0 - x;
                    match order {
                        0 => delta * x / den,
                        1 => delta / (den * den),
                        _ => 2.0 * delta * (1.0 - delta) / (den * den * den),
                    }
                }
            }
            ShiftFamily::Identity => match order {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
            ShiftFamily::Custom(t) => match order {
                0 => t.interp(&t.f, x),
                1 => t.interp(&t.df, x),
                _ => t.interp(&t.d2f, x),
            },
        })
    }

    /// `f(x)`.
    pub fn f(&self, x: f64) -> f64 {
        self.eval(x, 0).expect("order 0 is always valid")
    }

    /// `f'(x)`.
    pub fn df(&self, x: f64) -> f64 {
        self.eval(x, 1).expect("order 1 is always valid")
    }

    /// `f''(x)`.
    pub fn d2f(&self, x: f64) -> f64 {
        self.eval(x, 2).expect("order 2 is always valid")
    }

    /// Short tag for reports.
    pub fn tag(&self) -> &'static str {
        match self {
            ShiftFamily::Tsm => "tsm",
            ShiftFamily::Multiplicative { .. } => "multiplicative",
            ShiftFamily::ExpTilt { .. } => "exp_tilt",
            ShiftFamily::Identity => "identity",
            ShiftFamily::Custom(_) => "custom",
        }
    }

    /// Shift magnitude parameter, when the family has one.
    pub fn delta(&self) -> Option<f64> {
        match self {
            ShiftFamily::Multiplicative { delta } | ShiftFamily::ExpTilt { delta } => Some(*delta),
            _ => None,
        }
    }

    /// True when `f'' = 0` identically (tsm, multiplicative, identity).
    /// Such families sit at the boundary of the curvature conditions the
    /// second-order bias analysis assumes; estimates remain valid, and the
    /// flag lets reports carry a diagnostics note.
    pub fn zero_curvature(&self) -> bool {
        matches!(
            self,
            ShiftFamily::Tsm | ShiftFamily::Multiplicative { .. } | ShiftFamily::Identity
        )
    }

    /// Report descriptor (tag plus delta).
    pub fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            tag: self.tag().to_string(),
            delta: self.delta(),
        }
    }
}

/// Smooth trimming kernel `s(x) = 1 - exp(-k*x)`.
///
/// `s(0) = 0` exactly in floating point, `s` is strictly increasing in both
/// `x` and `k`, and `s(x) -> 1{x > 0}` pointwise as `k -> infinity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernel {
    k: f64,
}

impl SmoothingKernel {
    /// Kernel with rate `k > 0`.
    pub fn new(k: f64) -> Result<Self, ShiftError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(ShiftError::BadRate(k));
        }
        Ok(SmoothingKernel { k })
    }

    /// The rate `k`.
    pub fn rate(&self) -> f64 {
        self.k
    }

    /// Evaluate `s` (order 0) or a derivative: `s' = k*exp(-k*x)`,
    /// `s'' = -k^2*exp(-k*x)`.
    pub fn eval(&self, x: f64, order: u8) -> Result<f64, ShiftError> {
        if order > 2 {
            return Err(ShiftError::BadOrder(order));
        }
        let e = (-self.k * x).exp();
        Ok(match order {
            0 => 1.0 - e,
            1 => self.k * e,
            _ => -self.k * self.k * e,
        })
    }

    /// `s(x)`.
    pub fn s(&self, x: f64) -> f64 {
        1.0 - (-self.k * x).exp()
    }

    /// `s'(x)`.
    pub fn ds(&self, x: f64) -> f64 {
        self.k * (-self.k * x).exp()
    }

    /// `s''(x)`.
    pub fn d2s(&self, x: f64) -> f64 {
        -self.k * self.k * (-self.k * x).exp()
    }
}
