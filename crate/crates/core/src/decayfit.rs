//! Sampling `|F(λξ)|` on log grids, fitting decay exponents to its upper
//! envelope, and certifying candidate bounds `g·λ^{-p}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::phase::PhaseModel;
use crate::powerlog::PiecewisePowerLog;
use crate::quad::{self, QuadError};
use crate::stats;

pub const MIN_POINTS: usize = 8;
pub const ENVELOPE_WIDTH: usize = 5;
/// Upper-hull refits after the first least-squares pass.
pub const REFIT_PASSES: usize = 3;
pub const DEFAULT_POINTS: usize = 48;
pub const DEFAULT_LAMBDA: (f64, f64) = (10.0, 1e4);
/// Absolute slack added to every sample's quadrature error when certifying.
pub const ALLOWANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecayError {
    #[error("need at least {MIN_POINTS} grid points, got {0}")]
    TooFewPoints(usize),
    #[error("λ range must satisfy 1 ≤ λ_min ≤ λ_max, got [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("window fraction must lie in (0, 1], got {0}")]
    BadWindow(f64),
    #[error("only {got} positive envelope points in the fit window, need {MIN_POINTS}")]
    SparseWindow { got: usize },
    #[error("exponent and constant must be positive, got p={p}, g={g}")]
    BadCandidate { p: f64, g: f64 },
    #[error(transparent)]
    Quad(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub lambda: f64,
    pub abs_f: f64,
    pub quad_error: f64,
    pub tol: f64,
    pub low_confidence: bool,
}

/// Per-sample tolerance: 1e-3 of a `‖f‖₁·λ^{-2}` envelope guess, floored.
pub fn sample_tolerance(l1: f64, lambda: f64) -> f64 {
    (1e-3 * l1 * lambda.max(1.0).powi(-2)).max(1e-13)
}

/// `|F(λξ)|` on `points` log-spaced values in `[λ_min, λ_max]`. With
/// `tol = None` each sample uses [`sample_tolerance`].
#[allow(clippy::too_many_arguments)]
pub fn sample_decay(
    f: &PiecewisePowerLog,
    phase: &PhaseModel,
    xi: &[f64],
    lambda_min: f64,
    lambda_max: f64,
    points: usize,
    tol: Option<f64>,
    exec: Execution,
) -> Result<Vec<DecaySample>, DecayError> {
    if !(lambda_min >= 1.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
        return Err(DecayError::BadRange(lambda_min, lambda_max));
    }
    let grid = if lambda_min == lambda_max {
        vec![lambda_min]
    } else if points < MIN_POINTS {
        return Err(DecayError::TooFewPoints(points));
    } else {
        stats::log_grid(lambda_min, lambda_max, points)
    };
    let l1 = match tol {
        Some(_) => 0.0,
        None => quad::integrate_abs(f, 1e-10)?.value,
    };
    let out = exec.map(&grid, |&lambda| {
        let t = tol.unwrap_or_else(|| sample_tolerance(l1, lambda));
        quad::integrate_oscillatory(f, phase, xi, lambda, t).map(|r| DecaySample {
            lambda,
            abs_f: r.abs(),
            quad_error: r.error,
            tol: t,
            low_confidence: r.low_confidence,
        })
    });
    out.into_iter().collect::<Result<Vec<_>, _>>().map_err(DecayError::from)
}

/// Centred sliding maximum of width [`ENVELOPE_WIDTH`], clipped at the ends.
pub fn envelope(values: &[f64]) -> Vec<f64> {
    let h = ENVELOPE_WIDTH / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(values.len());
            values[lo..hi].iter().copied().fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// `+∞` when the envelope vanishes on the whole window.
    pub p_hat: f64,
    pub c_hat: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// Points in the final refit.
    pub points: usize,
}

/// Fit `envelope ≈ ĉ·λ^{-p̂}` on the top `window_fraction` of the λ range
/// (in log scale). The first least-squares pass is refined by keeping only
/// points on or above the line, so the fit tracks the peaks rather than the
/// dips between them.
pub fn fit_exponent(lambdas: &[f64], abs_f: &[f64], window_fraction: f64) -> Result<ExponentFit, DecayError> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(DecayError::BadWindow(window_fraction));
    }
    let env = envelope(abs_f);
    let (lmin, lmax) = match (lambdas.first(), lambdas.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(DecayError::SparseWindow { got: 0 }),
    };
    let cut = (lmax.ln() - window_fraction * (lmax.ln() - lmin.ln())).exp();
    // small slack so the nominal window edge is included despite rounding
    let in_window: Vec<usize> = (0..lambdas.len()).filter(|&i| lambdas[i] >= cut * (1.0 - 1e-12)).collect();
    let window = (in_window.first().map_or(lmax, |&i| lambdas[i]), lmax);
    if in_window.len() < MIN_POINTS {
        return Err(DecayError::SparseWindow { got: in_window.len() });
    }
    let mut idx: Vec<usize> = in_window.iter().copied().filter(|&i| env[i] > 0.0).collect();
    if idx.is_empty() {
        return Ok(ExponentFit { p_hat: f64::INFINITY, c_hat: 0.0, r_squared: 1.0, window, points: 0 });
    }
    if idx.len() < MIN_POINTS {
        return Err(DecayError::SparseWindow { got: idx.len() });
    }
    let line = |idx: &[usize]| {
        let x: Vec<f64> = idx.iter().map(|&i| lambdas[i].ln()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| env[i].ln()).collect();
        stats::least_squares(&x, &y)
    };
    let mut fit = line(&idx).ok_or(DecayError::SparseWindow { got: idx.len() })?;
    for _ in 0..REFIT_PASSES {
        let above: Vec<usize> =
            idx.iter().copied().filter(|&i| env[i].ln() >= fit.intercept + fit.slope * lambdas[i].ln()).collect();
        if above.len() < MIN_POINTS || above.len() == idx.len() {
            break;
        }
        match line(&above) {
            Some(next) => {
                fit = next;
                idx = above;
            }
            None => break,
        }
    }
    Ok(ExponentFit { p_hat: -fit.slope, c_hat: fit.intercept.exp(), r_squared: fit.r_squared, window, points: idx.len() })
}

/// Window fraction covering the top decade of `[λ_min, λ_max]`.
pub fn top_decade_fraction(lambda_min: f64, lambda_max: f64) -> f64 {
    let decades = (lambda_max / lambda_min).log10();
    if decades <= 1.0 {
        1.0
    } else {
        1.0 / decades
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub p: f64,
    pub g: f64,
    pub verdict: bool,
    /// `min_k (g·λ_k^{-p} + allowance_k − |F_k|)`.
    pub worst_margin: f64,
    pub worst_lambda: f64,
}

/// Checks `|F(λ)| ≤ g·λ^{-p} + allowance` at every sample, where the
/// allowance is the sample's quadrature error plus [`ALLOWANCE`].
pub fn certify_envelope(samples: &[DecaySample], p: f64, g: f64) -> Result<Certification, DecayError> {
    if !(p > 0.0 && g > 0.0) {
        return Err(DecayError::BadCandidate { p, g });
    }
    let mut worst = (f64::INFINITY, f64::NAN);
    for s in samples {
        let margin = g * s.lambda.powf(-p) + s.quad_error + ALLOWANCE - s.abs_f;
        if margin < worst.0 {
            worst = (margin, s.lambda);
        }
    }
    Ok(Certification { p, g, verdict: worst.0 >= 0.0, worst_margin: worst.0, worst_lambda: worst.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFitReport {
    pub samples: Vec<DecaySample>,
    pub envelope: Vec<f64>,
    pub fit: ExponentFit,
    pub certification: Option<Certification>,
}

impl DecayFitReport {
    pub fn new(samples: Vec<DecaySample>, window_fraction: f64, candidate: Option<(f64, f64)>) -> Result<Self, DecayError> {
        let lambdas: Vec<f64> = samples.iter().map(|s| s.lambda).collect();
        let abs_f: Vec<f64> = samples.iter().map(|s| s.abs_f).collect();
        let fit = fit_exponent(&lambdas, &abs_f, window_fraction)?;
        let certification = candidate.map(|(p, g)| certify_envelope(&samples, p, g)).transpose()?;
        Ok(DecayFitReport { envelope: envelope(&abs_f), samples, fit, certification })
    }
}
