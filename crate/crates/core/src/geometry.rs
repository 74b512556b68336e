//! Oscillating interface geometry.
//!
//! The interface is the curve `x1 = eps * g(x2 / eps)` where `g` is a
//! 1-periodic finite Fourier sum. The straightening map
//! `G(x) = (x1 - eps g(x2/eps), x2)` sends it onto the axis `{z1 = 0}` and
//! turns the geometric oscillation into a shear of the dynamics.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Side;
use crate::real::Real;

/// Number of samples used to bound the sup-norms of the profile.
pub const PROFILE_SAMPLES: usize = 4096;

/// Membership tolerance for the interface, measured in straightened coordinates.
pub const INTERFACE_TOL: f64 = 1e-9;

/// A point or vector of the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x1: T,
    pub x2: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x1: T, x2: T) -> Self {
        Self { x1, x2 }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn e1() -> Self {
        Self::new(T::one(), T::zero())
    }

    #[inline]
    pub fn e2() -> Self {
        Self::new(T::zero(), T::one())
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x1 * other.x1 + self.x2 * other.x2
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x1.hypot(self.x2)
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl<T: Real> AddAssign for Vec2<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.x1 = self.x1 + rhs.x1;
        self.x2 = self.x2 + rhs.x2;
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x1, -self.x2)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x1 * s, self.x2 * s)
    }
}

/// The shear `[[1, -s], [0, 1]]` with `s = g'(y2)`; the Jacobian of the
/// straightening map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shear<T> {
    pub slope: T,
}

impl<T: Real> Shear<T> {
    pub fn identity() -> Self {
        Self { slope: T::zero() }
    }

    pub fn matrix(&self) -> [[T; 2]; 2] {
        [[T::one(), -self.slope], [T::zero(), T::one()]]
    }

    pub fn inverse_matrix(&self) -> [[T; 2]; 2] {
        [[T::one(), self.slope], [T::zero(), T::one()]]
    }

    #[inline]
    pub fn apply(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(v.x1 - self.slope * v.x2, v.x2)
    }

    #[inline]
    pub fn apply_inverse(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(v.x1 + self.slope * v.x2, v.x2)
    }

    #[inline]
    pub fn apply_transpose(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(v.x1, v.x2 - self.slope * v.x1)
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> T {
        // sigma_max^2 = (2 + s^2 + |s| sqrt(4 + s^2)) / 2
        let s = self.slope.abs();
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        ((two + s * s + s * (four + s * s).sqrt()) / two).sqrt()
    }
}

/// Value and first two derivatives of the profile at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSample<T> {
    pub g: T,
    pub g_prime: T,
    pub g_second: T,
}

/// 1-periodic profile `g(t) = sum_k a_k sin(2 pi k t) + b_k cos(2 pi k t)`,
/// `k >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscillationProfile<T> {
    fourier_sin: Vec<T>,
    fourier_cos: Vec<T>,
    #[serde(skip)]
    sup_g: T,
    #[serde(skip)]
    sup_g_prime: T,
    #[serde(skip)]
    sup_g_second: T,
}

impl<T: Real> OscillationProfile<T> {
    /// `fourier_sin[k-1]` and `fourier_cos[k-1]` are the coefficients of
    /// frequency `k`.
    pub fn new(fourier_sin: Vec<T>, fourier_cos: Vec<T>) -> Result<Self> {
        if fourier_sin
            .iter()
            .chain(fourier_cos.iter())
            .any(|c| !c.is_finite())
        {
            return Err(Error::InvalidInput(
                "profile coefficients must be finite".into(),
            ));
        }
        let mut profile = Self {
            fourier_sin,
            fourier_cos,
            sup_g: T::zero(),
            sup_g_prime: T::zero(),
            sup_g_second: T::zero(),
        };
        profile.compute_bounds();
        Ok(profile)
    }

    pub fn flat() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("flat profile")
    }

    /// `amplitude * sin(2 pi t)`.
    pub fn sine(amplitude: T) -> Self {
        Self::new(vec![amplitude], Vec::new()).expect("finite amplitude")
    }

    pub fn fourier_sin(&self) -> &[T] {
        &self.fourier_sin
    }

    pub fn fourier_cos(&self) -> &[T] {
        &self.fourier_cos
    }

    pub fn is_flat(&self) -> bool {
        self.fourier_sin
            .iter()
            .chain(self.fourier_cos.iter())
            .all(|c| c.is_zero())
    }

    fn modes(&self) -> usize {
        self.fourier_sin.len().max(self.fourier_cos.len())
    }

    fn coeffs(&self, k: usize) -> (T, T) {
        let a = self.fourier_sin.get(k).copied().unwrap_or_else(T::zero);
        let b = self.fourier_cos.get(k).copied().unwrap_or_else(T::zero);
        (a, b)
    }

    /// Evaluates `g`, `g'` and `g''` at `t`.
    pub fn eval(&self, t: T) -> ProfileSample<T> {
        // Reduce to [0, 1) first so that shifts by whole periods are exact.
        let t = t - t.floor();
        let tau = T::TAU();
        let mut out = ProfileSample {
            g: T::zero(),
            g_prime: T::zero(),
            g_second: T::zero(),
        };
        for k in 0..self.modes() {
            let (a, b) = self.coeffs(k);
            let w = tau * T::from_usize_lossy(k + 1);
            let (s, c) = (w * t).sin_cos();
            out.g = out.g + a * s + b * c;
            out.g_prime = out.g_prime + w * (a * c - b * s);
            out.g_second = out.g_second - w * w * (a * s + b * c);
        }
        out
    }

    #[inline]
    pub fn g(&self, t: T) -> T {
        self.eval(t).g
    }

    #[inline]
    pub fn g_prime(&self, t: T) -> T {
        self.eval(t).g_prime
    }

    /// Upper bounds on `sup |g|`, `sup |g'|`, `sup |g''|`.
    pub fn sup_norm(&self) -> T {
        self.sup_g
    }

    pub fn sup_derivative(&self) -> T {
        self.sup_g_prime
    }

    pub fn sup_second_derivative(&self) -> T {
        self.sup_g_second
    }

    /// `sqrt(2) (1 + ||g'||)`, the bound on the Jacobian norm.
    pub fn jacobian_bound(&self) -> T {
        T::SQRT_2() * (T::one() + self.sup_g_prime)
    }

    fn compute_bounds(&mut self) {
        let tau = T::TAU();
        // ||g''|| is bounded by the sum of the mode amplitudes; the sampled
        // maxima of |g| and |g'| are padded by half a sample spacing times
        // the next derivative bound.
        let mut second = T::zero();
        for k in 0..self.modes() {
            let (a, b) = self.coeffs(k);
            let w = tau * T::from_usize_lossy(k + 1);
            second = second + w * w * a.hypot(b);
        }
        let mut max_g = T::zero();
        let mut max_dg = T::zero();
        let n = T::from_usize_lossy(PROFILE_SAMPLES);
        for i in 0..PROFILE_SAMPLES {
            let s = self.eval(T::from_usize_lossy(i) / n);
            max_g = max_g.max(s.g.abs());
            max_dg = max_dg.max(s.g_prime.abs());
        }
        let half_step = T::lit(0.5) / n;
        let sup_dg = if self.is_flat() {
            T::zero()
        } else {
            max_dg + half_step * second
        };
        let sup_g = if self.is_flat() {
            T::zero()
        } else {
            max_g + half_step * sup_dg
        };
        self.sup_g = sup_g;
        self.sup_g_prime = sup_dg;
        self.sup_g_second = second;
    }

    /// `J~(y2)`, the shear with slope `g'(y2)`.
    #[inline]
    pub fn shear_jacobian(&self, y2: T) -> Shear<T> {
        Shear {
            slope: self.g_prime(y2),
        }
    }

    /// `G(x) = (x1 - eps g(x2/eps), x2)`.
    pub fn straighten(&self, x: Vec2<T>, eps: T) -> Vec2<T> {
        Vec2::new(x.x1 - eps * self.g(x.x2 / eps), x.x2)
    }

    /// `G^{-1}(z) = (z1 + eps g(z2/eps), z2)`.
    pub fn unstraighten(&self, z: Vec2<T>, eps: T) -> Vec2<T> {
        Vec2::new(z.x1 + eps * self.g(z.x2 / eps), z.x2)
    }

    /// Normal `(1, -g'(x2/eps))` at a point of the interface, oriented from
    /// the left region to the right one.
    pub fn interface_normal(&self, x: Vec2<T>, eps: T) -> Result<Vec2<T>> {
        let offset = self.straighten(x, eps).x1;
        if offset.abs() > T::lit(INTERFACE_TOL) {
            return Err(Error::NotOnInterface {
                offset: offset.as_f64(),
            });
        }
        Ok(Vec2::new(T::one(), -self.g_prime(x.x2 / eps)))
    }

    /// Region of `x` for the interface at scale `eps`; `None` on the interface.
    pub fn region(&self, x: Vec2<T>, eps: T) -> Option<Side> {
        let z1 = self.straighten(x, eps).x1;
        if z1.abs() <= T::lit(INTERFACE_TOL) {
            None
        } else if z1 < T::zero() {
            Some(Side::Left)
        } else {
            Some(Side::Right)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine() -> OscillationProfile<f64> {
        OscillationProfile::sine(0.1)
    }

    #[test]
    fn peak_and_slope_of_sine_profile() {
        let p = sine();
        assert!((p.eval(0.25).g - 0.1).abs() < 1e-15);
        assert!((p.eval(0.0).g_prime - 0.2 * std::f64::consts::PI).abs() < 1e-14);
        let d2 = p.eval(0.25).g_second;
        let expected = -0.1 * (2.0 * std::f64::consts::PI).powi(2);
        assert!((d2 - expected).abs() < 1e-12);
    }

    #[test]
    fn straighten_arithmetic() {
        let p = sine();
        let z = p.straighten(Vec2::new(0.2, 0.125), 0.5);
        // 0.2 - 0.5 * 0.1 * sin(pi/2)
        assert!((z.x1 - 0.15).abs() < 1e-15);
        assert_eq!(z.x2, 0.125);
    }

    #[test]
    fn interface_maps_to_axis_and_back() {
        let p = sine();
        let eps = 0.3;
        for k in 0..50 {
            let x2 = -1.0 + 0.04 * k as f64;
            let x = Vec2::new(eps * p.g(x2 / eps), x2);
            assert!(p.straighten(x, eps).x1.abs() < 1e-15);
            let back = p.unstraighten(Vec2::new(0.0, x2), eps);
            assert!((back.x1 - x.x1).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_profile_is_identity() {
        let p = OscillationProfile::<f64>::flat();
        let x = Vec2::new(0.7, -1.3);
        assert_eq!(p.straighten(x, 0.2), x);
        assert_eq!(p.unstraighten(x, 0.2), x);
        assert_eq!(p.sup_derivative(), 0.0);
        let n = p.interface_normal(Vec2::new(0.0, 3.0), 0.5).unwrap();
        assert_eq!(n, Vec2::e1());
    }

    #[test]
    fn shear_and_inverse() {
        let p = sine();
        let j = p.shear_jacobian(0.0);
        let m = j.matrix();
        assert!((m[0][1] + 0.2 * std::f64::consts::PI).abs() < 1e-14);
        let inv = j.inverse_matrix();
        let prod = [
            [
                m[0][0] * inv[0][0] + m[0][1] * inv[1][0],
                m[0][0] * inv[0][1] + m[0][1] * inv[1][1],
            ],
            [
                m[1][0] * inv[0][0] + m[1][1] * inv[1][0],
                m[1][0] * inv[0][1] + m[1][1] * inv[1][1],
            ],
        ];
        assert_eq!(prod, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn normal_on_and_off_interface() {
        let p = sine();
        let n = p.interface_normal(Vec2::new(0.0, 0.0), 1.0).unwrap();
        assert!((n.x2 + 0.2 * std::f64::consts::PI).abs() < 1e-14);
        assert_eq!(n.x1, 1.0);
        let err = p.interface_normal(Vec2::new(0.01, 0.0), 1.0).unwrap_err();
        assert!(matches!(err, Error::NotOnInterface { .. }));
    }

    #[test]
    fn sup_bounds_are_upper_bounds() {
        let p = OscillationProfile::new(vec![0.1, 0.03], vec![0.0, 0.02]).unwrap();
        let mut max_dg: f64 = 0.0;
        let mut max_g: f64 = 0.0;
        for i in 0..100_000 {
            let s = p.eval(i as f64 / 100_000.0);
            max_dg = max_dg.max(s.g_prime.abs());
            max_g = max_g.max(s.g.abs());
        }
        assert!(p.sup_derivative() >= max_dg);
        assert!(p.sup_norm() >= max_g);
        assert!(p.sup_derivative() - max_dg < 2e-3);
    }

    #[test]
    fn operator_norm_of_shear() {
        let j = Shear { slope: 0.75_f64 };
        // brute force over unit vectors
        let mut best: f64 = 0.0;
        for k in 0..20_000 {
            let t = k as f64 / 20_000.0 * std::f64::consts::TAU;
            best = best.max(j.apply(Vec2::new(t.cos(), t.sin())).norm());
        }
        assert!((j.operator_norm() - best).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        assert!(OscillationProfile::new(vec![f64::NAN], vec![]).is_err());
    }
}
