//! Scalar activation functions with range and derivative-bound metadata.
//!
//! Every kind except [`ActivationKind::Gelu`] is *squashing*: its range is a
//! bounded interval and its derivative is bounded. GELU is kept only as the
//! unbounded baseline and is rejected wherever a compact range is required.
//!
//! The truncated GELU (`TGelu`) is defined piecewise with thresholds
//! `t_l <= 0 <= t_r`:
//!
//! ```text
//!   t_r Φ(t_r) + (x - t_r)(1 - Φ(x - t_r))   x >= t_r
//!   x Φ(x)                                   0 <= x <= t_r
//!   x (1 - Φ(x))                             t_l <= x <= 0
//!   t_l (1 - Φ(t_l)) + (x - t_l) Φ(x - t_l)  x <= t_l
//! ```
//!
//! The function is continuous but its one-sided derivatives differ at
//! `t_l` and `t_r`. At a boundary the derivative of the lower branch is
//! returned; [`tgelu_one_sided_derivatives`] exposes both limits.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, `P(N <= x)`.
///
/// Evaluated through `erfc` so that both tails keep full relative precision;
/// the absolute error is below 1e-15 over the whole real line.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `P(N >= x) = 1 - Φ(x)`, computed without cancellation.
#[inline]
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `max_{u >= 0} u (1 - Φ(u))`, the overshoot of the tGELU tail branches
/// (and the depth of the GELU dip below zero).
pub fn tail_overshoot() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| {
        // stationary point solves 1 - Φ(u) - u φ(u) = 0; the left side is
        // decreasing on [0, sqrt 2] and changes sign there
        let h = |u: f64| std_normal_sf(u) - u * std_normal_pdf(u);
        let (mut lo, mut hi) = (0.0_f64, SQRT_2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = 0.5 * (lo + hi);
        u * std_normal_sf(u)
    })
}

/// Maximum of `Φ(x) + x φ(x)` over `x in [0, limit]`. The expression is
/// increasing up to `sqrt 2` and decreasing afterwards.
fn gelu_slope_peak(limit: f64) -> f64 {
    let m = limit.clamp(0.0, SQRT_2);
    std_normal_cdf(m) + m * std_normal_pdf(m)
}

/// Activation descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    /// `a * tanh(x / a)` with `a >= 1`.
    ScaledTanh {
        a: f64,
    },
    /// Unbounded baseline, `x Φ(x)`.
    Gelu,
    /// Truncated GELU with thresholds `t_l <= 0 <= t_r`.
    TGelu {
        t_l: f64,
        t_r: f64,
    },
}

/// Closed interval containing every value an activation can take.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActRange {
    pub lo: f64,
    pub hi: f64,
}

impl ActRange {
    /// Largest absolute value in the range.
    pub fn abs_max(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

impl ActivationKind {
    pub fn tgelu(t_l: f64, t_r: f64) -> Result<Self> {
        let kind = ActivationKind::TGelu { t_l, t_r };
        kind.validate()?;
        Ok(kind)
    }

    pub fn scaled_tanh(a: f64) -> Result<Self> {
        let kind = ActivationKind::ScaledTanh { a };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::TGelu { t_l, t_r } => {
                if !(t_l.is_finite() && t_r.is_finite() && t_l <= 0.0 && t_r >= 0.0) {
                    return Err(Error::Domain(format!(
                        "tgelu thresholds must satisfy t_l <= 0 <= t_r, got ({t_l}, {t_r})"
                    )));
                }
            }
            ActivationKind::ScaledTanh { a } if !(a.is_finite() && a >= 1.0) => {
                return Err(Error::Domain(format!(
                    "scaled tanh requires a >= 1, got {a}"
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether the range is compact.
    pub fn is_squashing(&self) -> bool {
        !matches!(self, ActivationKind::Gelu)
    }

    /// Unchecked evaluation, used on the hot path.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::ScaledTanh { a } => a * (x / a).tanh(),
            ActivationKind::Gelu => x * std_normal_cdf(x),
            ActivationKind::TGelu { t_l, t_r } => tgelu_value(t_l, t_r, x),
        }
    }

    /// Unchecked first derivative. Ties at tGELU kinks take the lower branch.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::ScaledTanh { a } => {
                let t = (x / a).tanh();
                1.0 - t * t
            }
            ActivationKind::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            ActivationKind::TGelu { t_l, t_r } => tgelu_derivative(t_l, t_r, x),
        }
    }

    /// Value and derivative in one pass.
    #[inline]
    pub fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        match *self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            ActivationKind::ScaledTanh { a } => {
                let t = (x / a).tanh();
                (a * t, 1.0 - t * t)
            }
            _ => (self.value(x), self.derivative(x)),
        }
    }

    /// Interval containing the activation's image. GELU returns `hi = +inf`.
    pub fn range(&self) -> ActRange {
        match *self {
            ActivationKind::Sigmoid => ActRange { lo: 0.0, hi: 1.0 },
            ActivationKind::Tanh => ActRange { lo: -1.0, hi: 1.0 },
            ActivationKind::ScaledTanh { a } => ActRange { lo: -a, hi: a },
            ActivationKind::Gelu => ActRange {
                lo: -tail_overshoot(),
                hi: f64::INFINITY,
            },
            ActivationKind::TGelu { t_l, t_r } => {
                let over = tail_overshoot();
                ActRange {
                    lo: t_l * std_normal_sf(t_l) - over,
                    hi: t_r * std_normal_cdf(t_r) + over,
                }
            }
        }
    }

    /// Supremum of `|σ'(x)|` over the real line.
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            ActivationKind::Sigmoid => 0.25,
            ActivationKind::Tanh | ActivationKind::ScaledTanh { .. } => 1.0,
            ActivationKind::Gelu => gelu_slope_peak(f64::INFINITY),
            // the tail branches stay within [-0.0683, 0.5]
            ActivationKind::TGelu { t_l, t_r } => {
                0.5_f64.max(gelu_slope_peak(t_r)).max(gelu_slope_peak(-t_l))
            }
        }
    }

    /// Config tag, the inverse of [`FromStr`].
    pub fn tag(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Tanh => write!(f, "tanh"),
            ActivationKind::ScaledTanh { a } => write!(f, "stanh:{a}"),
            ActivationKind::Gelu => write!(f, "gelu"),
            ActivationKind::TGelu { t_l, t_r } => write!(f, "tgelu:{t_l}:{t_r}"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| -> Result<f64> {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {p:?} in activation tag {s:?}")))
        };
        let kind = match parts.as_slice() {
            ["sigmoid"] => ActivationKind::Sigmoid,
            ["tanh"] => ActivationKind::Tanh,
            ["gelu"] => ActivationKind::Gelu,
            ["stanh", a] => ActivationKind::ScaledTanh { a: num(a)? },
            ["tgelu", l, r] => ActivationKind::TGelu {
                t_l: num(l)?,
                t_r: num(r)?,
            },
            _ => return Err(Error::Config(format!("unknown activation tag {s:?}"))),
        };
        kind.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(kind)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn tgelu_value(t_l: f64, t_r: f64, x: f64) -> f64 {
    if x > t_r {
        let w = x - t_r;
        t_r * std_normal_cdf(t_r) + w * std_normal_sf(w)
    } else if x > 0.0 {
        x * std_normal_cdf(x)
    } else if x > t_l {
        x * std_normal_sf(x)
    } else {
        let w = x - t_l;
        t_l * std_normal_sf(t_l) + w * std_normal_cdf(w)
    }
}

#[inline]
fn tgelu_derivative(t_l: f64, t_r: f64, x: f64) -> f64 {
    if x > t_r {
        let w = x - t_r;
        std_normal_sf(w) - w * std_normal_pdf(w)
    } else if x > 0.0 {
        std_normal_cdf(x) + x * std_normal_pdf(x)
    } else if x > t_l {
        std_normal_sf(x) - x * std_normal_pdf(x)
    } else {
        let w = x - t_l;
        std_normal_cdf(w) + w * std_normal_pdf(w)
    }
}

/// An activation with its tGELU tail offsets precomputed, for inner loops.
/// Results are bit-identical to [`ActivationKind::value`] and
/// [`ActivationKind::derivative`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedActivation {
    kind: ActivationKind,
    c_l: f64,
    c_r: f64,
}

impl ActivationKind {
    pub fn prepare(&self) -> PreparedActivation {
        let (c_l, c_r) = match *self {
            ActivationKind::TGelu { t_l, t_r } => {
                (t_l * std_normal_sf(t_l), t_r * std_normal_cdf(t_r))
            }
            _ => (0.0, 0.0),
        };
        PreparedActivation {
            kind: *self,
            c_l,
            c_r,
        }
    }
}

impl PreparedActivation {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::TGelu { t_l, t_r } => {
                if x > t_r {
                    let w = x - t_r;
                    self.c_r + w * std_normal_sf(w)
                } else if x > t_l {
                    tgelu_value(t_l, t_r, x)
                } else {
                    let w = x - t_l;
                    self.c_l + w * std_normal_cdf(w)
                }
            }
            k => k.value(x),
        }
    }

    #[inline]
    pub fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        match self.kind {
            ActivationKind::TGelu { t_l, t_r } => {
                if x > t_r {
                    let w = x - t_r;
                    let (sf, pdf) = (std_normal_sf(w), std_normal_pdf(w));
                    (self.c_r + w * sf, sf - w * pdf)
                } else if x > 0.0 {
                    let (cdf, pdf) = (std_normal_cdf(x), std_normal_pdf(x));
                    (x * cdf, cdf + x * pdf)
                } else if x > t_l {
                    let (sf, pdf) = (std_normal_sf(x), std_normal_pdf(x));
                    (x * sf, sf - x * pdf)
                } else {
                    let w = x - t_l;
                    let (cdf, pdf) = (std_normal_cdf(w), std_normal_pdf(w));
                    (self.c_l + w * cdf, cdf + w * pdf)
                }
            }
            ActivationKind::Gelu => {
                let (cdf, pdf) = (std_normal_cdf(x), std_normal_pdf(x));
                (x * cdf, cdf + x * pdf)
            }
            k => k.value_and_derivative(x),
        }
    }
}

/// Left and right derivative limits of tGELU at `x`. They differ only at
/// `t_l` and `t_r` (when those are nonzero).
pub fn tgelu_one_sided_derivatives(t_l: f64, t_r: f64, x: f64) -> (f64, f64) {
    (
        tgelu_derivative(t_l, t_r, x),
        tgelu_derivative(t_l, t_r, x.next_up()),
    )
}

/// Checked evaluation of `σ(x)`.
pub fn act_eval(kind: ActivationKind, x: f64) -> Result<f64> {
    kind.validate()?;
    if !x.is_finite() {
        return Err(Error::Domain(format!(
            "activation input must be finite, got {x}"
        )));
    }
    Ok(kind.value(x))
}

/// Checked evaluation of `σ'(x)`.
pub fn act_deriv(kind: ActivationKind, x: f64) -> Result<f64> {
    kind.validate()?;
    if !x.is_finite() {
        return Err(Error::Domain(format!(
            "activation input must be finite, got {x}"
        )));
    }
    Ok(kind.derivative(x))
}

/// `(lo, hi)` bounds of the activation image.
pub fn act_range(kind: ActivationKind) -> (f64, f64) {
    let r = kind.range();
    (r.lo, r.hi)
}

/// Bound on `|σ'|`.
pub fn act_deriv_bound(kind: ActivationKind) -> f64 {
    kind.derivative_bound()
}
