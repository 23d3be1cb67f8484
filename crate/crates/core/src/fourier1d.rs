//! Fourier transforms of 1-D amplitudes, `f̂(z) = (2π)^{-1/2} ∫ f(y) e^{-iyz} dy`:
//! monotone partitions, the FTC and integration-by-parts identities, decay
//! fits of `|f̂|`, and the integrability verdict.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decayfit::{self, DecayError};
use crate::domain::{DomainBox, Interval};
use crate::exec::Execution;
use crate::phase::PhaseModel;
use crate::powerlog::{self, PiecewisePowerLog, PowerLogError};
use crate::quad::{self, QuadError};
use crate::stats;

/// Samples per interval when confirming the sign of `f′`.
pub const SIGN_SAMPLES: usize = 512;
pub const CONTINUITY_TOL: f64 = 1e-9;
/// `q̂` must exceed `1 + INTEGRABILITY_MARGIN` for an "integrable" verdict.
pub const INTEGRABILITY_MARGIN: f64 = 0.05;
const SCAN: usize = 2048;
/// Unbounded pieces are scanned out to this distance.
const SCAN_FAR: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FourierError {
    #[error("amplitude must be 1-D, got dimension {0}")]
    NotOneDimensional(usize),
    #[error("one-sided limit of f at {at} from the {side} diverges")]
    DivergentLimit { at: f64, side: &'static str },
    #[error("integration-by-parts hypotheses fail: {0}")]
    Hypotheses(String),
    #[error("need z_max > 0 and at least {min} points", min = decayfit::MIN_POINTS)]
    BadGrid,
    #[error(transparent)]
    Amplitude(#[from] PowerLogError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Decay(#[from] DecayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonePartition {
    /// Piece boundaries and interior sign changes of `f′`, sorted.
    pub breakpoints: Vec<f64>,
    /// Sign of `f′` on each of the `breakpoints.len() + 1` intervals.
    pub signs: Vec<i8>,
    /// Breakpoints where the sign of `f′` differs on the two sides.
    pub turning_points: Vec<f64>,
    pub continuous: bool,
    pub discontinuities: Vec<f64>,
    /// `f → 0` at both infinities.
    pub vanishes_at_infinity: bool,
    /// Every interval had a single sign over its samples.
    pub signs_consistent: bool,
}

impl MonotonePartition {
    /// The intervals `(a_{k-1}, a_k)`, with infinite outer ends.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        let mut ends = vec![f64::NEG_INFINITY];
        ends.extend(&self.breakpoints);
        ends.push(f64::INFINITY);
        ends.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

fn check_dim(f: &PiecewisePowerLog) -> Result<(), FourierError> {
    if f.dim() != 1 {
        return Err(FourierError::NotOneDimensional(f.dim()));
    }
    Ok(())
}

/// Interior scan points of `(lo, hi)`; unbounded ends are graded out to
/// [`SCAN_FAR`].
fn scan_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (1..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect(),
        (true, false) => stats::log_grid(1e-6, SCAN_FAR, n).into_iter().map(|d| lo + d).collect(),
        (false, true) => stats::log_grid(1e-6, SCAN_FAR, n).into_iter().rev().map(|d| hi - d).collect(),
        (false, false) => {
            let half = stats::log_grid(1e-6, SCAN_FAR, n / 2);
            half.iter().rev().map(|d| -d).chain(std::iter::once(0.0)).chain(half.iter().copied()).collect()
        }
    }
}

fn sign_changes(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<f64> {
    let xs = scan_points(lo, hi, SCAN);
    let vs: Vec<f64> = xs.iter().map(|x| g(*x)).collect();
    let mut out = Vec::new();
    for k in 0..xs.len().saturating_sub(1) {
        if vs[k] == 0.0 && k > 0 && vs[k - 1] * vs[k + 1] < 0.0 {
            out.push(xs[k]);
        } else if vs[k] * vs[k + 1] < 0.0 {
            let (mut l, mut h, mut gl) = (xs[k], xs[k + 1], vs[k]);
            while h - l > 1e-12 * l.abs().max(1.0) {
                let m = 0.5 * (l + h);
                if m <= l || m >= h {
                    break;
                }
                let gm = g(m);
                if gm * gl <= 0.0 {
                    h = m;
                } else {
                    l = m;
                    gl = gm;
                }
            }
            out.push(0.5 * (l + h));
        }
    }
    out
}

fn interval_sign(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (i8, bool) {
    let (mut pos, mut neg) = (false, false);
    for y in scan_points(lo, hi, SIGN_SAMPLES + 1) {
        let v = g(y);
        pos |= v > 0.0;
        neg |= v < 0.0;
    }
    match (pos, neg) {
        (true, false) => (1, true),
        (false, true) => (-1, true),
        (false, false) => (0, true),
        (true, true) => (0, false),
    }
}

fn limits_agree(l: Option<f64>, r: Option<f64>) -> bool {
    match (l, r) {
        (Some(a), Some(b)) => (a - b).abs() <= CONTINUITY_TOL * a.abs().max(b.abs()).max(1.0),
        _ => false,
    }
}

/// Breakpoints where `f′` may change sign: cell boundaries plus sign
/// changes inside each cell, confirmed by sampling each interval.
pub fn monotone_partition(f: &PiecewisePowerLog) -> Result<MonotonePartition, FourierError> {
    check_dim(f)?;
    let d = f.derivative(0);
    let dv = |y: f64| d.eval(&[y]).unwrap_or(f64::NAN);
    let mut points = f.breakpoints(0);
    for p in f.pieces() {
        let iv = &p.cell.axes[0];
        points.extend(sign_changes(&dv, iv.lo.value, iv.hi.value));
    }
    points.retain(|v| v.is_finite());
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    let mut ends = vec![f64::NEG_INFINITY];
    ends.extend(&points);
    ends.push(f64::INFINITY);
    let mut signs = Vec::new();
    let mut consistent = true;
    for w in ends.windows(2) {
        let (s, ok) = interval_sign(&dv, w[0], w[1]);
        signs.push(s);
        consistent &= ok;
    }
    let turning_points = points.iter().enumerate().filter(|(i, _)| signs[*i] != signs[i + 1]).map(|(_, v)| *v).collect();
    let discontinuities: Vec<f64> = points
        .iter()
        .copied()
        .filter(|&b| !limits_agree(powerlog::one_sided_limit(f, b, -1.0), powerlog::one_sided_limit(f, b, 1.0)))
        .collect();
    let vanishes = powerlog::one_sided_limit(f, f64::INFINITY, -1.0) == Some(0.0)
        && powerlog::one_sided_limit(f, f64::NEG_INFINITY, 1.0) == Some(0.0);
    Ok(MonotonePartition {
        breakpoints: points,
        signs,
        turning_points,
        continuous: discontinuities.is_empty(),
        discontinuities,
        vanishes_at_infinity: vanishes,
        signs_consistent: consistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtcCheck {
    pub integral: f64,
    pub f_a_plus: f64,
    pub f_b_minus: f64,
    pub residual: f64,
}

/// `|∫_a^b f′ − (f(b⁻) − f(a⁺))|` with symbolic one-sided limits.
pub fn ftc_check(f: &PiecewisePowerLog, a: f64, b: f64, tol: f64) -> Result<FtcCheck, FourierError> {
    check_dim(f)?;
    let fa = powerlog::one_sided_limit(f, a, 1.0).ok_or(FourierError::DivergentLimit { at: a, side: "right" })?;
    let fb = powerlog::one_sided_limit(f, b, -1.0).ok_or(FourierError::DivergentLimit { at: b, side: "left" })?;
    let region = DomainBox::new(vec![Interval::open(a, b).map_err(PowerLogError::from)?]);
    let d = f.derivative(0).restrict(&region);
    let integral = quad::integrate(&d, tol)?.value;
    Ok(FtcCheck { integral, f_a_plus: fa, f_b_minus: fb, residual: (integral - (fb - fa)).abs() })
}

fn linear_phase() -> PhaseModel {
    PhaseModel::parse(1, &["y1"], None).expect("linear phase parses")
}

/// `∫ f(y) e^{-iyz} dy` (without the `(2π)^{-1/2}` factor).
fn raw_transform(f: &PiecewisePowerLog, phase: &PhaseModel, z: f64, tol: f64) -> Result<(Complex64, f64), FourierError> {
    let r = quad::integrate_oscillatory(f, phase, &[1.0], -z, tol)?;
    Ok((r.value, r.error))
}

/// `f̂(z)`.
pub fn transform(f: &PiecewisePowerLog, z: f64, tol: f64) -> Result<Complex64, FourierError> {
    check_dim(f)?;
    Ok(raw_transform(f, &linear_phase(), z, tol)?.0 / (2.0 * PI).sqrt())
}

/// `f̂` of `re + i·im`, by linearity.
pub fn transform_complex(re: &PiecewisePowerLog, im: &PiecewisePowerLog, z: f64, tol: f64) -> Result<Complex64, FourierError> {
    Ok(transform(re, z, tol)? + Complex64::i() * transform(im, z, tol)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbpCheck {
    pub z: f64,
    /// `√(2π)·iz·f̂(z)`.
    pub lhs: Complex64,
    /// `∫ f′(y) e^{-iyz} dy`.
    pub rhs: Complex64,
    pub residual: f64,
}

fn ibp_hypotheses(f: &PiecewisePowerLog, partition: &MonotonePartition) -> Result<PiecewisePowerLog, FourierError> {
    if !partition.continuous {
        return Err(FourierError::Hypotheses(format!("f jumps at {:?}", partition.discontinuities)));
    }
    if !partition.vanishes_at_infinity {
        return Err(FourierError::Hypotheses("f does not vanish at infinity".into()));
    }
    let d = f.derivative(0);
    if !d.is_integrable_all()? {
        return Err(FourierError::Hypotheses("f′ is not integrable".into()));
    }
    Ok(d)
}

/// Both sides of `√(2π)·iz·f̂(z) = ∫ f′(y) e^{-iyz} dy`.
pub fn ibp_identity(f: &PiecewisePowerLog, partition: &MonotonePartition, z: f64, tol: f64) -> Result<IbpCheck, FourierError> {
    check_dim(f)?;
    let d = ibp_hypotheses(f, partition)?;
    let phase = linear_phase();
    let lhs = Complex64::new(0.0, z) * raw_transform(f, &phase, z, tol)?.0;
    let rhs = raw_transform(&d, &phase, z, tol)?.0;
    Ok(IbpCheck { z, lhs, rhs, residual: (lhs - rhs).norm() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSample {
    pub z: f64,
    pub value: Complex64,
    pub abs: f64,
    /// `|lhs − rhs| / (1 + |lhs|)`, when the identity's hypotheses hold.
    pub ibp_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierReport {
    pub partition: MonotonePartition,
    pub samples: Vec<FourierSample>,
    pub fit: decayfit::ExponentFit,
    /// `∫_{|z|<z_max} |f̂|`.
    pub integral_body: f64,
    /// Power-law completion beyond `z_max`; `+∞` when `q̂ ≤ 1`.
    pub integral_tail: f64,
    pub integral: f64,
    /// Half the tail spread for `q̂ ± 0.05`.
    pub tail_model_error: f64,
    pub integrable: bool,
    /// The verdict agrees with the continuity flag.
    pub consistent: bool,
}

fn tail(c: f64, q: f64, z: f64) -> f64 {
    if q.is_infinite() {
        0.0
    } else if q > 1.0 {
        2.0 * c * z.powf(1.0 - q) / (q - 1.0)
    } else {
        f64::INFINITY
    }
}

/// Sample `|f̂|` on a log grid in `[max(1, z_max/1000), z_max]`, fit the
/// decay exponent on the top decade, and extrapolate `∫|f̂|`.
pub fn check_ft_integrability(
    f: &PiecewisePowerLog,
    z_max: f64,
    points: usize,
    tol: f64,
    exec: Execution,
) -> Result<FourierReport, FourierError> {
    check_dim(f)?;
    if !(z_max > 0.0 && z_max.is_finite()) || points < decayfit::MIN_POINTS {
        return Err(FourierError::BadGrid);
    }
    let partition = monotone_partition(f)?;
    let deriv = ibp_hypotheses(f, &partition).ok();
    let z_lo = (z_max / 1e3).max(1.0).min(z_max / 2.0);
    let grid = stats::log_grid(z_lo, z_max, points);
    let phase = linear_phase();
    let norm = (2.0 * PI).sqrt();
    let samples = exec
        .map(&grid, |&z| -> Result<FourierSample, FourierError> {
            let (raw, _) = raw_transform(f, &phase, z, tol)?;
            let ibp_residual = match &deriv {
                Some(d) => {
                    let lhs = Complex64::new(0.0, z) * raw;
                    let rhs = raw_transform(d, &phase, z, tol)?.0;
                    Some((lhs - rhs).norm() / (1.0 + lhs.norm()))
                }
                None => None,
            };
            let value = raw / norm;
            Ok(FourierSample { z, value, abs: value.norm(), ibp_residual })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let zs: Vec<f64> = samples.iter().map(|s| s.z).collect();
    let abs: Vec<f64> = samples.iter().map(|s| s.abs).collect();
    let fit = decayfit::fit_exponent(&zs, &abs, decayfit::top_decade_fraction(z_lo, z_max))?;
    let integrable = fit.p_hat > 1.0 + INTEGRABILITY_MARGIN;
    let integral_tail = if integrable { tail(fit.c_hat, fit.p_hat, z_max) } else { f64::INFINITY };
    let integral_body = if integrable {
        // f is real, so |f̂| is even
        let body = quad::adaptive_gk(&|z| raw_transform(f, &phase, z, tol).map_or(f64::NAN, |r| r.0.norm()) / norm, 0.0, z_max, tol.max(1e-9));
        2.0 * body.value
    } else {
        f64::INFINITY
    };
    let tail_model_error = if integrable {
        let hi = tail(fit.c_hat, fit.p_hat - INTEGRABILITY_MARGIN, z_max);
        let lo = tail(fit.c_hat, fit.p_hat + INTEGRABILITY_MARGIN, z_max);
        0.5 * (hi - lo).abs()
    } else {
        f64::INFINITY
    };
    Ok(FourierReport {
        consistent: integrable == partition.continuous,
        partition,
        samples,
        fit,
        integral_body,
        integral_tail,
        integral: integral_body + integral_tail,
        tail_model_error,
        integrable,
    })
}

/// `(2π)^{-1/2} ∫_{-Z}^{Z} f̂(z) e^{iyz} dz`, the truncated inverse transform.
pub fn invert(f: &PiecewisePowerLog, y: f64, z_max: f64, tol: f64) -> Result<Complex64, FourierError> {
    check_dim(f)?;
    let phase = linear_phase();
    let g = |z: f64| raw_transform(f, &phase, z, tol * 1e-2).map_or(Complex64::new(f64::NAN, 0.0), |r| r.0) * Complex64::from_polar(1.0, y * z);
    let (v, _) = quad::adaptive_gk_complex(&g, -z_max, z_max, tol);
    Ok(v / (2.0 * PI))
}
