//! Intervals, product boxes and quasi-random sampling over them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("empty interval: lower {lo} must be below upper {hi}")]
    Empty { lo: f64, hi: f64 },
    #[error("NaN interval endpoint")]
    NaN,
}

/// One endpoint of an interval. Infinite endpoints are always open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub closed: bool,
}

impl Bound {
    pub fn open(value: f64) -> Self {
        Bound { value, closed: false }
    }

    pub fn closed(value: f64) -> Self {
        Bound { value, closed: value.is_finite() }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Bound,
    pub hi: Bound,
}

impl Interval {
    pub fn new(lo: Bound, hi: Bound) -> Result<Self, DomainError> {
        if lo.value.is_nan() || hi.value.is_nan() {
            return Err(DomainError::NaN);
        }
        if lo.value >= hi.value {
            return Err(DomainError::Empty { lo: lo.value, hi: hi.value });
        }
        let lo = Bound { closed: lo.closed && lo.is_finite(), ..lo };
        let hi = Bound { closed: hi.closed && hi.is_finite(), ..hi };
        Ok(Interval { lo, hi })
    }

    /// Open interval `(lo, hi)`.
    pub fn open(lo: f64, hi: f64) -> Result<Self, DomainError> {
        Self::new(Bound::open(lo), Bound::open(hi))
    }

    /// Closed interval `[lo, hi]` (infinite ends stay open).
    pub fn closed(lo: f64, hi: f64) -> Result<Self, DomainError> {
        Self::new(Bound::closed(lo), Bound::closed(hi))
    }

    pub fn contains(&self, y: f64) -> bool {
        let above = if self.lo.closed { y >= self.lo.value } else { y > self.lo.value };
        let below = if self.hi.closed { y <= self.hi.value } else { y < self.hi.value };
        above && below
    }

    pub fn contains_interior(&self, y: f64) -> bool {
        y > self.lo.value && y < self.hi.value
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn length(&self) -> f64 {
        self.hi.value - self.lo.value
    }

    /// Whether the two intervals share at least one point.
    pub fn intersects(&self, other: &Interval) -> bool {
        let lo = if self.lo.value > other.lo.value {
            self.lo
        } else if other.lo.value > self.lo.value {
            other.lo
        } else {
            Bound { value: self.lo.value, closed: self.lo.closed && other.lo.closed }
        };
        let hi = if self.hi.value < other.hi.value {
            self.hi
        } else if other.hi.value < self.hi.value {
            other.hi
        } else {
            Bound { value: self.hi.value, closed: self.hi.closed && other.hi.closed }
        };
        lo.value < hi.value || (lo.value == hi.value && lo.closed && hi.closed)
    }

    /// Intersection as an interval with nonempty interior, if any.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = if self.lo.value >= other.lo.value { self.lo } else { other.lo };
        let hi = if self.hi.value <= other.hi.value { self.hi } else { other.hi };
        Interval::new(lo, hi).ok()
    }

    /// Map `u ∈ (0,1)` into the interval. Finite intervals are affine,
    /// half-lines use `u/(1-u)` and the full line `tan`.
    pub fn from_unit(&self, u: f64) -> f64 {
        let (a, b) = (self.lo.value, self.hi.value);
        match (a.is_finite(), b.is_finite()) {
            (true, true) => a + (b - a) * u,
            (true, false) => a + u / (1.0 - u),
            (false, true) => b - (1.0 - u) / u,
            (false, false) => (std::f64::consts::PI * (u - 0.5)).tan(),
        }
    }

    /// Log-spaced samples in `(lo, hi)` relative to `anchor`, which must lie
    /// at or outside one end. Points cluster near the anchor; unbounded ends
    /// are sampled out to `far` from the anchor.
    pub fn graded_samples(&self, anchor: f64, n: usize, far: f64) -> Vec<f64> {
        let (a, b) = (self.lo.value, self.hi.value);
        let (sign, near, far_end) = if anchor <= a {
            (1.0, a - anchor, if b.is_finite() { b - anchor } else { far.max(2.0 * (a - anchor)) })
        } else {
            (-1.0, anchor - b, if a.is_finite() { anchor - a } else { far.max(2.0 * (anchor - b)) })
        };
        let near = if near > 0.0 { near } else { far_end * 1e-12 };
        let (l0, l1) = (near.ln(), far_end.ln());
        (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / n as f64;
                anchor + sign * (l0 + (l1 - l0) * t).exp()
            })
            .filter(|y| self.contains_interior(*y))
            .collect()
    }
}

/// Product of per-axis intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub axes: Vec<Interval>,
}

impl DomainBox {
    pub fn new(axes: Vec<Interval>) -> Self {
        DomainBox { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.axes.len() && self.axes.iter().zip(y).all(|(iv, v)| iv.contains(*v))
    }

    pub fn intersects(&self, other: &DomainBox) -> bool {
        self.axes.len() == other.axes.len()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| a.intersects(b))
    }

    pub fn intersect(&self, other: &DomainBox) -> Option<DomainBox> {
        if self.axes.len() != other.axes.len() {
            return None;
        }
        let axes: Option<Vec<_>> = self.axes.iter().zip(&other.axes).map(|(a, b)| a.intersect(b)).collect();
        axes.map(DomainBox::new)
    }

    pub fn is_bounded(&self) -> bool {
        self.axes.iter().all(Interval::is_bounded)
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(Interval::length).product()
    }

    /// `n` Halton points mapped into the box (interior only).
    pub fn halton_points(&self, n: usize) -> Vec<Vec<f64>> {
        (1..=n)
            .map(|k| {
                self.axes
                    .iter()
                    .enumerate()
                    .map(|(d, iv)| iv.from_unit(radical_inverse(k as u64, PRIMES[d % PRIMES.len()])))
                    .collect()
            })
            .collect()
    }
}

const PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

/// Van der Corput radical inverse of `k` in `base`; lies in (0,1) for k ≥ 1.
pub fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while k > 0 {
        r += f * (k % base) as f64;
        k /= base;
        f *= inv;
    }
    r
}
