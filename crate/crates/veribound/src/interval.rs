//! Scalar intervals and axis-aligned box domains.
//!
//! A [`BoxDomain`] is the hyper-rectangle over the concatenated input vector
//! of a graph. Everything downstream — bound propagation, branch-and-bound,
//! falsification — quantifies over one of these.

use ndarray::Array1;
use rand::Rng;
use thiserror::Error;

/// A closed scalar interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    pub fn sub(&self, other: &Interval) -> Interval {
        Interval::new(self.lo - other.hi, self.hi - other.lo)
    }

    pub fn neg(&self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn scale(&self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval::new(k * self.lo, k * self.hi)
        } else {
            Interval::new(k * self.hi, k * self.lo)
        }
    }

    /// Exact product range via the four corner products.
    pub fn mul(&self, other: &Interval) -> Interval {
        let p = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        Interval::new(
            p.iter().cloned().fold(f64::INFINITY, f64::min),
            p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Image under a monotone nondecreasing map.
    pub fn monotone(&self, f: impl Fn(f64) -> f64) -> Interval {
        Interval::new(f(self.lo), f(self.hi))
    }

    pub fn relu(&self) -> Interval {
        Interval::new(self.lo.max(0.0), self.hi.max(0.0))
    }

    pub fn square(&self) -> Interval {
        let lo2 = self.lo * self.lo;
        let hi2 = self.hi * self.hi;
        if self.lo <= 0.0 && 0.0 <= self.hi {
            Interval::new(0.0, lo2.max(hi2))
        } else {
            Interval::new(lo2.min(hi2), lo2.max(hi2))
        }
    }

    /// Heaviside gate with the `step(0) = 0` convention.
    pub fn step(&self) -> Interval {
        let lo = if self.lo > 0.0 { 1.0 } else { 0.0 };
        let hi = if self.hi > 0.0 { 1.0 } else { 0.0 };
        Interval::new(lo, hi)
    }

    /// Exact range of `sin` over the interval: endpoints plus any interior
    /// critical point `pi/2 + k*pi`.
    pub fn sin_range(&self) -> Interval {
        let mut lo = self.lo.sin().min(self.hi.sin());
        let mut hi = self.lo.sin().max(self.hi.sin());
        if contains_angle(self.lo, self.hi, std::f64::consts::FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_angle(self.lo, self.hi, -std::f64::consts::FRAC_PI_2) {
            lo = -1.0;
        }
        Interval::new(lo, hi)
    }

    pub fn cos_range(&self) -> Interval {
        let shift = std::f64::consts::FRAC_PI_2;
        Interval::new(self.lo + shift, self.hi + shift).sin_range()
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

/// True when some `x ≡ angle (mod 2π)` lies in `[lo, hi]`.
fn contains_angle(lo: f64, hi: f64, angle: f64) -> bool {
    use std::f64::consts::TAU;
    if hi - lo >= TAU {
        return true;
    }
    let k = ((lo - angle) / TAU).ceil();
    let x = angle + k * TAU;
    lo <= x && x <= hi
}

#[derive(Debug, Error)]
pub enum BoxError {
    #[error("box bounds have mismatched lengths: {lower} vs {upper}")]
    LengthMismatch { lower: usize, upper: usize },
    #[error("box lower bound exceeds upper bound at dimension {dim}: {lo} > {hi}")]
    Inverted { dim: usize, lo: f64, hi: f64 },
    #[error("box has zero width in every dimension; cannot split")]
    ZeroWidth,
}

/// An axis-aligned hyper-rectangle `[lower, upper]` over a flat input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Array1<f64>,
    upper: Array1<f64>,
}

impl BoxDomain {
    pub fn new(lower: Array1<f64>, upper: Array1<f64>) -> Result<Self, BoxError> {
        if lower.len() != upper.len() {
            return Err(BoxError::LengthMismatch {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (dim, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if lo > hi {
                return Err(BoxError::Inverted { dim, lo, hi });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self, BoxError> {
        Self::new(Array1::from(lower.to_vec()), Array1::from(upper.to_vec()))
    }

    /// The symmetric box `[-r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Self {
        Self {
            lower: Array1::from_elem(dim, -r),
            upper: Array1::from_elem(dim, r),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Array1<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array1<f64> {
        &self.upper
    }

    pub fn interval(&self, dim: usize) -> Interval {
        Interval::new(self.lower[dim], self.upper[dim])
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Array1<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, x: &Array1<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter())
                .zip(self.upper.iter())
                .all(|((&v, &lo), &hi)| lo <= v && v <= hi)
    }

    /// True when `other` lies inside `self` elementwise.
    pub fn contains_box(&self, other: &BoxDomain) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// Clamp a point onto the box elementwise.
    pub fn project(&self, x: &mut Array1<f64>) {
        for i in 0..self.dim() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Array1<f64> {
        Array1::from_iter((0..self.dim()).map(|i| {
            if self.width(i) == 0.0 {
                self.lower[i]
            } else {
                rng.random_range(self.lower[i]..=self.upper[i])
            }
        }))
    }

    /// Bisect along `dim` at the midpoint. The children share the midpoint,
    /// so their union is exactly the parent.
    pub fn split_at(&self, dim: usize) -> (BoxDomain, BoxDomain) {
        let mid = 0.5 * (self.lower[dim] + self.upper[dim]);
        let mut left_hi = self.upper.clone();
        left_hi[dim] = mid;
        let mut right_lo = self.lower.clone();
        right_lo[dim] = mid;
        (
            BoxDomain {
                lower: self.lower.clone(),
                upper: left_hi,
            },
            BoxDomain {
                lower: right_lo,
                upper: self.upper.clone(),
            },
        )
    }

    /// Concatenate two boxes into a product domain.
    pub fn product(&self, other: &BoxDomain) -> BoxDomain {
        let lower = Array1::from_iter(self.lower.iter().chain(other.lower.iter()).cloned());
        let upper = Array1::from_iter(self.upper.iter().chain(other.upper.iter()).cloned());
        BoxDomain { lower, upper }
    }
}
