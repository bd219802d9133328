//! Scalar types for exact derivatives.
//!
//! The model right-hand side is written once against [`Scalar`] and evaluated
//! with three number types:
//!
//! * `f64` for plain simulation,
//! * [`Dual`] (value + one tangent) for Jacobian columns,
//! * [`Jet`] (truncated Taylor series in time) for Lie derivatives. A
//!   `Jet<Dual>` carries the sensitivity of every Taylor coefficient to one
//!   seeded coordinate, which gives one column of the observability matrix.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::smoothing;

/// Number type the model equations are generic over.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Constant with no derivative content.
    fn cst(v: f64) -> Self;

    /// Primal value, used for branch selection in piecewise operators.
    fn value(&self) -> f64;

    fn powf(self, r: f64) -> Self;

    fn tan(self) -> Self;

    fn is_finite(&self) -> bool;

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }

    fn powi(self, n: u32) -> Self {
        let mut base = self;
        let mut acc = Self::cst(1.0);
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            e >>= 1;
            if e > 0 {
                base = base * base;
            }
        }
        acc
    }

    /// Smooth saturation. `floor` bounds the operand derivative from below
    /// for number types that carry first derivatives.
    fn ssf(x: Self, lower: Self, upper: Self, k: u32, floor: Option<f64>) -> Self {
        let _ = floor;
        let lam = (upper + lower) * 0.5;
        let mu = (upper - lower) * 0.5;
        let z = (x - lam) / mu;
        let zv = z.value();
        let e = -1.0 / k as f64;
        let g = if zv.abs() <= 1.0 {
            z * (z.powi(k) + 1.0).powf(e)
        } else {
            (z.recip().powi(k) + 1.0).powf(e) * zv.signum()
        };
        lam + mu * g
    }

    /// Smooth deadband, `x - ssf(x)`.
    fn sdbf(x: Self, lower: Self, upper: Self, k: u32, floor: Option<f64>) -> Self {
        x - Self::ssf(x, lower, upper, k, floor)
    }
}

/// Hard lower bound `[x]_lo^inf`.
#[inline]
pub fn floor_at<S: Scalar>(x: S, lo: f64) -> S {
    if x.value() > lo {
        x
    } else {
        S::cst(lo)
    }
}

/// Hard `max`, derivative follows the selected branch.
#[inline]
pub fn max_of<S: Scalar>(a: S, b: S) -> S {
    if a.value() >= b.value() {
        a
    } else {
        b
    }
}

/// Hard `min`, derivative follows the selected branch.
#[inline]
pub fn min_of<S: Scalar>(a: S, b: S) -> S {
    if a.value() <= b.value() {
        a
    } else {
        b
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn powf(self, r: f64) -> Self {
        f64::powf(self, r)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ssf(x: Self, lower: Self, upper: Self, k: u32, _floor: Option<f64>) -> Self {
        smoothing::ssf_raw(x, lower, upper, k)
    }
}

/// Dual number with a single tangent direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }

    /// Independent variable, tangent seeded with 1.
    pub fn var(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Dual::new(q, (self.d - q * o.d) / o.v)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.v, -self.d)
    }
}

impl Add<f64> for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Dual::new(self.v + o, self.d)
    }
}

impl Sub<f64> for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Dual::new(self.v - o, self.d)
    }
}

impl Mul<f64> for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        Dual::new(self.v * o, self.d * o)
    }
}

impl Div<f64> for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        Dual::new(self.v / o, self.d / o)
    }
}

impl Scalar for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn powf(self, r: f64) -> Self {
        let p = self.v.powf(r);
        Dual::new(p, self.d * r * self.v.powf(r - 1.0))
    }
    #[inline]
    fn tan(self) -> Self {
        let t = self.v.tan();
        Dual::new(t, self.d * (1.0 + t * t))
    }
    #[inline]
    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d.is_finite()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual::new(s, self.d / (2.0 * s))
    }

    fn ssf(x: Self, lower: Self, upper: Self, k: u32, floor: Option<f64>) -> Self {
        let p = smoothing::ssf_partials(x.v, lower.v, upper.v, k, floor);
        Dual::new(p.value, p.d_x * x.d + p.d_lower * lower.d + p.d_upper * upper.d)
    }

    fn sdbf(x: Self, lower: Self, upper: Self, k: u32, floor: Option<f64>) -> Self {
        let p = smoothing::sdbf_partials(x.v, lower.v, upper.v, k, floor);
        Dual::new(p.value, p.d_x * x.d + p.d_lower * lower.d + p.d_upper * upper.d)
    }
}

/// Maximum number of Taylor coefficients a [`Jet`] can hold.
pub const JET_CAPACITY: usize = 24;

/// Truncated Taylor series `c0 + c1 t + ... + c_{n-1} t^{n-1}` with
/// coefficients of type `S`.
#[derive(Clone, Copy)]
pub struct Jet<S: Scalar> {
    c: [S; JET_CAPACITY],
    len: usize,
}

impl<S: Scalar> Debug for Jet<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.coeffs()).finish()
    }
}

impl<S: Scalar> Jet<S> {
    /// Series with the given coefficients. Panics beyond [`JET_CAPACITY`].
    pub fn from_coeffs(coeffs: &[S]) -> Self {
        assert!(
            !coeffs.is_empty() && coeffs.len() <= JET_CAPACITY,
            "jet length must be in 1..={JET_CAPACITY}"
        );
        let mut c = [S::cst(0.0); JET_CAPACITY];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Self {
            c,
            len: coeffs.len(),
        }
    }

    pub fn constant(v: S) -> Self {
        Self::from_coeffs(&[v])
    }

    pub fn coeffs(&self) -> &[S] {
        &self.c[..self.len]
    }

    /// Coefficient `k`, zero past the stored length.
    pub fn coeff(&self, k: usize) -> S {
        if k < self.len {
            self.c[k]
        } else {
            S::cst(0.0)
        }
    }

    fn zeros(len: usize) -> Self {
        Self {
            c: [S::cst(0.0); JET_CAPACITY],
            len,
        }
    }

    fn map_coeffs(mut self, f: impl Fn(S) -> S) -> Self {
        for c in self.c[..self.len].iter_mut() {
            *c = f(*c);
        }
        self
    }
}

impl<S: Scalar> Add for Jet<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = Self::zeros(self.len.max(o.len));
        for k in 0..r.len {
            r.c[k] = self.c[k] + o.c[k];
        }
        r
    }
}

impl<S: Scalar> Sub for Jet<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut r = Self::zeros(self.len.max(o.len));
        for k in 0..r.len {
            r.c[k] = self.c[k] - o.c[k];
        }
        r
    }
}

impl<S: Scalar> Mul for Jet<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let n = self.len.max(o.len);
        let mut r = Self::zeros(n);
        for k in 0..n {
            let lo = k.saturating_sub(o.len - 1);
            let hi = k.min(self.len - 1);
            let mut acc = S::cst(0.0);
            for j in lo..=hi {
                acc = acc + self.c[j] * o.c[k - j];
            }
            r.c[k] = acc;
        }
        r
    }
}

impl<S: Scalar> Div for Jet<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let n = self.len.max(o.len);
        let mut q = Self::zeros(n);
        let b0 = o.c[0];
        for k in 0..n {
            let mut acc = self.c[k];
            for j in 1..=k.min(o.len - 1) {
                acc = acc - o.c[j] * q.c[k - j];
            }
            q.c[k] = acc / b0;
        }
        q
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map_coeffs(|c| -c)
    }
}

impl<S: Scalar> Add<f64> for Jet<S> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.c[0] = self.c[0] + o;
        self
    }
}

impl<S: Scalar> Sub<f64> for Jet<S> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.c[0] = self.c[0] - o;
        self
    }
}

impl<S: Scalar> Mul<f64> for Jet<S> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.map_coeffs(|c| c * o)
    }
}

impl<S: Scalar> Div<f64> for Jet<S> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.map_coeffs(|c| c / o)
    }
}

impl<S: Scalar> Scalar for Jet<S> {
    fn cst(v: f64) -> Self {
        Self::constant(S::cst(v))
    }

    fn value(&self) -> f64 {
        self.c[0].value()
    }

    /// `p = a^r` via `k a0 p_k = sum_{j=1..k} (r j - (k - j)) a_j p_{k-j}`.
    fn powf(self, r: f64) -> Self {
        let n = self.len;
        let mut p = Self::zeros(n);
        let a0 = self.c[0];
        p.c[0] = a0.powf(r);
        for k in 1..n {
            let mut acc = S::cst(0.0);
            for j in 1..=k {
                let w = r * j as f64 - (k - j) as f64;
                acc = acc + self.c[j] * p.c[k - j] * w;
            }
            p.c[k] = acc / (a0 * k as f64);
        }
        p
    }

    /// `t = tan(a)` via `t' = a' (1 + t^2)`.
    fn tan(self) -> Self {
        let n = self.len;
        let mut t = Self::zeros(n);
        let mut u = Self::zeros(n);
        t.c[0] = self.c[0].tan();
        u.c[0] = t.c[0] * t.c[0] + 1.0;
        for k in 1..n {
            let mut acc = S::cst(0.0);
            for j in 1..=k {
                acc = acc + self.c[j] * u.c[k - j] * j as f64;
            }
            t.c[k] = acc / k as f64;
            let mut sq = S::cst(0.0);
            for i in 0..=k {
                sq = sq + t.c[i] * t.c[k - i];
            }
            u.c[k] = sq;
        }
        t
    }

    fn is_finite(&self) -> bool {
        self.coeffs().iter().all(|c| c.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(Jet<f64>) -> Jet<f64>, a: &[f64]) -> Vec<f64> {
        f(Jet::from_coeffs(a)).coeffs().to_vec()
    }

    #[test]
    fn dual_arithmetic() {
        let x = Dual::var(3.0);
        let y = x * x / (x + 1.0) - x.sqrt();
        // d/dx [x^2/(x+1) - sqrt(x)] = (x^2+2x)/(x+1)^2 - 1/(2 sqrt x)
        let expect = (9.0 + 6.0) / 16.0 - 0.5 / 3f64.sqrt();
        assert!((y.d - expect).abs() < 1e-14);
        let t = Dual::var(0.3).tan();
        assert!((t.d - 1.0 / 0.3f64.cos().powi(2)).abs() < 1e-14);
        let p = Dual::var(2.0).powf(-1.5);
        assert!((p.d + 1.5 * 2f64.powf(-2.5)).abs() < 1e-14);
    }

    #[test]
    fn jet_exp_like_series() {
        // 1 / (1 - t) = 1 + t + t^2 + ...
        let one = Jet::<f64>::from_coeffs(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = Jet::from_coeffs(&[1.0, -1.0]);
        let q = one / d;
        assert_eq!(q.coeffs(), &[1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn jet_powf_matches_binomial_series() {
        // (1 + t)^r = sum binom(r, k) t^k
        let r = -1.0 / 12.0;
        let c = series(|a| a.powf(r), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut binom = 1.0;
        for (k, ck) in c.iter().enumerate() {
            assert!((ck - binom).abs() < 1e-14, "k={k}");
            binom *= (r - k as f64) / (k as f64 + 1.0);
        }
    }

    #[test]
    fn jet_tan_series() {
        // tan t = t + t^3/3 + 2 t^5/15
        let c = series(|a| a.tan(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let expect = [0.0, 1.0, 0.0, 1.0 / 3.0, 0.0, 2.0 / 15.0];
        for (a, b) in c.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn jet_product_is_cauchy() {
        let a = Jet::<f64>::from_coeffs(&[1.0, 2.0, 3.0]);
        let b = Jet::from_coeffs(&[4.0, 5.0, 6.0]);
        assert_eq!((a * b).coeffs(), &[4.0, 13.0, 28.0]);
        assert_eq!((a * Jet::cst(2.0)).coeffs(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn generic_ssf_agrees_across_types() {
        for x in [-3.0, -0.7, 0.0, 0.4, 1.3, 25.0] {
            let plain = <f64 as Scalar>::ssf(x, -0.5, 1.0, 12, None);
            let dual = Dual::ssf(Dual::var(x), Dual::cst(-0.5), Dual::cst(1.0), 12, None);
            let jet = Jet::<f64>::ssf(
                Jet::from_coeffs(&[x, 1.0]),
                Jet::cst(-0.5),
                Jet::cst(1.0),
                12,
                None,
            );
            assert!((plain - dual.v).abs() < 1e-14);
            assert!((plain - jet.coeff(0)).abs() < 1e-14);
            // first Taylor coefficient is the derivative
            assert!((dual.d - jet.coeff(1)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn dual_ssf_floor_applies_to_operand_only() {
        let y = Dual::ssf(Dual::var(1e3), Dual::cst(-1.0), Dual::cst(1.0), 12, Some(1e-6));
        assert_eq!(y.d, 1e-6);
        let y = Dual::ssf(Dual::var(1e3), Dual::cst(-1.0), Dual::cst(1.0), 12, None);
        assert!(y.d < 1e-30);
    }
}
