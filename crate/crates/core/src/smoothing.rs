//! Smooth saturation and deadband operators.
//!
//! The hard operators
//!
//! ```text
//! sat(x; l, h) = h          for x >= h,  x for l < x < h,  l for x <= l
//! db(x; d1, d2) = x - d2    for x > d2,  0 inside,         x - d1 for x < d1
//! ```
//!
//! are replaced with the differentiable family
//!
//! ```text
//! ssf(x)  = lambda + mu * z * (1 + z^k)^(-1/k)      z = (x - lambda) / mu
//! sdbf(x) = x - ssf(x)
//! ```
//!
//! with `lambda = (h + l) / 2`, `mu = (h - l) / 2` and an even sharpness `k`.
//! `ssf' = (1 + z^k)^(-1 - 1/k)` vanishes in the saturated tails, so every
//! Jacobian evaluation floors the operand derivative at a small positive value.

use crate::error::{Error, Result};

/// Sharpness used when none is configured.
pub const DEFAULT_SHARPNESS: u32 = 12;

/// Floor applied to operand derivatives inside Jacobians.
pub const DEFAULT_DERIVATIVE_FLOOR: f64 = 1e-6;

/// Lower/upper limits and sharpness of one smooth operator instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothLimits {
    lower: f64,
    upper: f64,
    sharpness: u32,
}

impl SmoothLimits {
    pub fn new(lower: f64, upper: f64, sharpness: u32) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "smooth limits must be finite, got [{lower}, {upper}]"
            )));
        }
        if lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "degenerate smooth limits: lower {lower} >= upper {upper}"
            )));
        }
        validate_sharpness(sharpness)?;
        Ok(Self {
            lower,
            upper,
            sharpness,
        })
    }

    /// Limits with the default sharpness.
    pub fn with_default_sharpness(lower: f64, upper: f64) -> Result<Self> {
        Self::new(lower, upper, DEFAULT_SHARPNESS)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn sharpness(&self) -> u32 {
        self.sharpness
    }

    /// Midpoint of the limits.
    pub fn lambda(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }

    /// Half-width of the limits.
    pub fn mu(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

pub(crate) fn validate_sharpness(k: u32) -> Result<()> {
    if k < 2 || k % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "sharpness must be an even integer >= 2, got {k}"
        )));
    }
    Ok(())
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("operand must be finite, got {x}")))
    }
}

/// Smooth saturation of `x` to `lim`.
pub fn ssf(x: f64, lim: &SmoothLimits) -> Result<f64> {
    check_finite(x)?;
    Ok(ssf_raw(x, lim.lower, lim.upper, lim.sharpness))
}

/// Smooth deadband of `x` over `lim`.
pub fn sdbf(x: f64, lim: &SmoothLimits) -> Result<f64> {
    check_finite(x)?;
    Ok(x - ssf_raw(x, lim.lower, lim.upper, lim.sharpness))
}

/// Derivative of [`ssf`] with respect to `x`, floored at `eps`.
pub fn ssf_derivative_clamped(x: f64, lim: &SmoothLimits, eps: f64) -> Result<f64> {
    check_finite(x)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "derivative floor must be positive, got {eps}"
        )));
    }
    let z = (x - lim.lambda()) / lim.mu();
    let (_, dg) = shape(z, lim.sharpness);
    Ok(dg.max(eps))
}

/// Hard saturation `[x]_lower^upper`.
pub fn hard_sat(x: f64, lower: f64, upper: f64) -> f64 {
    if x >= upper {
        upper
    } else if x <= lower {
        lower
    } else {
        x
    }
}

/// Hard deadband `db_{d1}^{d2}(x)`.
pub fn hard_db(x: f64, d1: f64, d2: f64) -> f64 {
    if x > d2 {
        x - d2
    } else if x < d1 {
        x - d1
    } else {
        0.0
    }
}

/// `g(z) = z (1 + z^k)^(-1/k)` and `g'(z) = (1 + z^k)^(-1-1/k)`.
///
/// For `|z| > 1` the equivalent forms in `1/z` are used so that `z^k` never
/// overflows.
#[inline]
pub(crate) fn shape(z: f64, k: u32) -> (f64, f64) {
    let kf = k as f64;
    if z.abs() <= 1.0 {
        let base = 1.0 + z.powi(k as i32);
        let w = base.powf(-1.0 / kf);
        (z * w, w / base)
    } else {
        let r = 1.0 / z;
        let base = 1.0 + r.powi(k as i32);
        let w = base.powf(-1.0 / kf);
        let g = z.signum() * w;
        // |z|^-(k+1) * base^(-1-1/k)
        let dg = r.abs().powi(k as i32 + 1) * w / base;
        (g, dg)
    }
}

#[inline]
pub(crate) fn ssf_raw(x: f64, lower: f64, upper: f64, k: u32) -> f64 {
    let lam = 0.5 * (upper + lower);
    let mu = 0.5 * (upper - lower);
    // rounding of lam + mu*g can step past a limit in the far tails
    (lam + mu * shape((x - lam) / mu, k).0).clamp(lower, upper)
}

/// Value and first partials of a smooth operator with respect to its operand
/// and both limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothPartials {
    pub value: f64,
    pub d_x: f64,
    pub d_lower: f64,
    pub d_upper: f64,
}

/// Partials of `ssf(x; lower, upper)`. The operand partial is floored at
/// `floor` when one is given; the limit partials are exact.
pub fn ssf_partials(x: f64, lower: f64, upper: f64, k: u32, floor: Option<f64>) -> SmoothPartials {
    let lam = 0.5 * (upper + lower);
    let mu = 0.5 * (upper - lower);
    let z = (x - lam) / mu;
    let (g, dg) = shape(z, k);
    let d_lam = 1.0 - dg;
    let d_mu = g - z * dg;
    SmoothPartials {
        value: (lam + mu * g).clamp(lower, upper),
        d_x: floor.map_or(dg, |f| dg.max(f)),
        d_lower: 0.5 * d_lam - 0.5 * d_mu,
        d_upper: 0.5 * d_lam + 0.5 * d_mu,
    }
}

/// Partials of `sdbf(x; lower, upper)`, operand partial floored like
/// [`ssf_partials`].
pub fn sdbf_partials(x: f64, lower: f64, upper: f64, k: u32, floor: Option<f64>) -> SmoothPartials {
    let s = ssf_partials(x, lower, upper, k, None);
    let d_x = 1.0 - s.d_x;
    SmoothPartials {
        value: x - s.value,
        d_x: floor.map_or(d_x, |f| d_x.max(f)),
        d_lower: -s.d_lower,
        d_upper: -s.d_upper,
    }
}
