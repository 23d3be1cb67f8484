//! The van der Corput inequality
//!
//! ```text
//! |∫_a^b f e^{iλφ}| ≤ c_d (λε)^{-1/d} (min(|f(a)|, |f(b)|) + ∫_a^b |f'|),
//! c_d = 5·2^{d-1} - 2,
//! ```
//!
//! valid when `|φ^{(d)}| ≥ ε` on `[a, b]` (and `φ'` monotone for `d = 1`).

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainBox, Interval};
use crate::exec::Execution;
use crate::phase::{PhaseError, PhaseModel};
use crate::poly::Polynomial;
use crate::powerlog::{self, Cell, Piece, PiecewisePowerLog, PowerLogTerm};
use crate::quad::{self, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VdcError {
    #[error("derivative order must be positive, got {0}")]
    BadOrder(i64),
    #[error("λ must be positive, got {0}")]
    BadLambda(f64),
    #[error("ε must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("total variation must be nonnegative, got {0}")]
    BadVariation(f64),
    #[error("interval must be bounded")]
    Unbounded,
    #[error("phase must be one-dimensional")]
    NotOneDimensional,
    #[error("hypotheses fail: |φ^({d})| is not bounded away from 0 on the interval")]
    HypothesisFailed { d: u32 },
    #[error("phase: {0}")]
    Phase(#[from] PhaseError),
    #[error("quadrature: {0}")]
    Quad(#[from] QuadError),
}

/// Samples used to certify `ε`.
pub const HYPOTHESIS_SAMPLES: usize = 4096;
/// `ε` is certified as this fraction of the sampled minimum.
pub const EPSILON_SAFETY: f64 = 0.95;
/// Slack allowed between the computed integral and the bound.
pub const QUAD_ALLOWANCE: f64 = 1e-8;

/// `c_d = 5·2^{d-1} - 2`.
pub fn cd_constant(d: i64) -> Result<u64, VdcError> {
    if d <= 0 || d > 62 {
        return Err(VdcError::BadOrder(d));
    }
    Ok(5 * (1u64 << (d - 1)) - 2)
}

/// `c_d/(λε)^{1/d} · (min(|f_a|, |f_b|) + tv)`.
pub fn vdc_bound(d: u32, epsilon: f64, lambda: f64, f_a: f64, f_b: f64, tv: f64) -> Result<f64, VdcError> {
    let cd = cd_constant(d as i64)? as f64;
    if !(lambda > 0.0) {
        return Err(VdcError::BadLambda(lambda));
    }
    if !(epsilon > 0.0) {
        return Err(VdcError::BadEpsilon(epsilon));
    }
    if !(tv >= 0.0) {
        return Err(VdcError::BadVariation(tv));
    }
    let data = f_a.abs().min(f_b.abs()) + tv;
    if data == 0.0 {
        return Ok(0.0);
    }
    Ok(cd / (lambda * epsilon).powf(1.0 / d as f64) * data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEvidence {
    pub samples: usize,
    pub safety_factor: f64,
    /// Sampled `min |φ^{(d)}|`.
    pub min_abs_derivative: f64,
    pub argmin: f64,
    /// For `d = 1`: whether `φ''` kept one sign on the samples.
    pub monotone_derivative: Option<bool>,
}

/// `ε = 0.95 · min |φ^{(d)}|` over 4096 equispaced samples (endpoints
/// included); for `d = 1` also requires `φ''` to keep one sign. Returns 0
/// when a hypothesis fails.
pub fn check_hypotheses(phase: &PhaseModel, xi: &[f64], d: u32, iv: &Interval) -> Result<(f64, HypothesisEvidence), VdcError> {
    if phase.dim() != 1 {
        return Err(VdcError::NotOneDimensional);
    }
    if !iv.is_bounded() {
        return Err(VdcError::Unbounded);
    }
    if d == 0 {
        return Err(VdcError::BadOrder(0));
    }
    let proj = phase.project(xi)?;
    let dd = proj.field().nth_partial(0, d);
    let second = proj.field().nth_partial(0, 2);
    let (a, b) = (iv.lo.value, iv.hi.value);
    let n = HYPOTHESIS_SAMPLES;
    let mut min = f64::INFINITY;
    let mut argmin = a;
    let (mut pos, mut neg) = (false, false);
    for k in 0..n {
        let t = a + (b - a) * k as f64 / (n - 1) as f64;
        let v = dd.eval(&[t]).abs();
        if !(v >= min) {
            min = v;
            argmin = t;
        }
        if d == 1 {
            let s = second.eval(&[t]);
            pos |= s > 0.0;
            neg |= s < 0.0;
        }
    }
    let monotone = (d == 1).then_some(!(pos && neg));
    let ok = min.is_finite() && min > 0.0 && monotone != Some(false);
    let evidence = HypothesisEvidence {
        samples: n,
        safety_factor: EPSILON_SAFETY,
        min_abs_derivative: min,
        argmin,
        monotone_derivative: monotone,
    };
    Ok((if ok { EPSILON_SAFETY * min } else { 0.0 }, evidence))
}

/// Endpoint values and variation of the amplitude on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeData {
    pub f_a: f64,
    pub f_b: f64,
    /// Total variation on `(a, b)`: `∫|f'|` plus jumps at interior cell
    /// boundaries.
    pub tv: f64,
}

/// Total variation by monotone decomposition: cut `(a, b)` at interior cell
/// boundaries and at sign changes of `f'`, then sum `|f(right⁻) - f(left⁺)|`
/// over the parts (exact for each part by the fundamental theorem of
/// calculus) and the jumps at the boundaries. Falls back to `∫|f'|` by
/// quadrature when a one-sided limit diverges.
pub fn amplitude_data(f: &PiecewisePowerLog, iv: &Interval, tol: f64) -> Result<AmplitudeData, VdcError> {
    let (a, b) = (iv.lo.value, iv.hi.value);
    let g = f.restrict(&DomainBox::new(vec![*iv]));
    let limit = |y: f64, side: f64| powerlog::one_sided_limit(&g, y, side);
    let f_a = limit(a, 1.0).unwrap_or(f64::INFINITY);
    let f_b = limit(b, -1.0).unwrap_or(f64::INFINITY);
    let deriv = g.derivative(0);
    let mut cuts: Vec<f64> = vec![a, b];
    let boundaries: Vec<f64> = g.breakpoints(0).into_iter().filter(|x| *x > a && *x < b).collect();
    cuts.extend(&boundaries);
    for p in deriv.pieces() {
        let lo = p.cell.axes[0].lo.value.max(a);
        let hi = p.cell.axes[0].hi.value.min(b);
        if hi > lo {
            let dp = |y: f64| p.eval(&[y]);
            cuts.extend(sign_changes_open(&dp, lo, hi));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut tv = 0.0;
    let mut exact = true;
    for w in cuts.windows(2) {
        match (limit(w[0], 1.0), limit(w[1], -1.0)) {
            (Some(l), Some(r)) => tv += (r - l).abs(),
            _ => exact = false,
        }
    }
    for x in &boundaries {
        match (limit(*x, -1.0), limit(*x, 1.0)) {
            (Some(l), Some(r)) => tv += (r - l).abs(),
            _ => exact = false,
        }
    }
    if !exact {
        tv = match quad::integrate_abs(&deriv, tol) {
            Ok(v) => v.value,
            Err(QuadError::NotIntegrable { .. }) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
    }
    Ok(AmplitudeData { f_a, f_b, tv })
}

fn sign_changes_open(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = 2048;
    let mut out = Vec::new();
    let xs: Vec<f64> = (1..n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let vs: Vec<f64> = xs.iter().map(|x| g(*x)).collect();
    for k in 0..xs.len() - 1 {
        if vs[k] == 0.0 {
            out.push(xs[k]);
        } else if vs[k] * vs[k + 1] < 0.0 {
            let (mut l, mut h, mut gl) = (xs[k], xs[k + 1], vs[k]);
            for _ in 0..80 {
                let m = 0.5 * (l + h);
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdcRow {
    pub lambda: f64,
    pub actual: f64,
    pub bound: f64,
    pub margin: f64,
    pub quad_error: f64,
    pub low_confidence: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdcCertificate {
    pub d: u32,
    pub epsilon: f64,
    pub interval: (f64, f64),
    pub amplitude: AmplitudeData,
    pub evidence: HypothesisEvidence,
    pub allowance: f64,
    pub rows: Vec<VdcRow>,
    pub low_confidence: bool,
    pub verdict: bool,
}

/// Compare `|∫_a^b f e^{iλ ξ·φ}|` from [`quad`] with the bound for every λ.
#[allow(clippy::too_many_arguments)]
pub fn verify(
    f: &PiecewisePowerLog,
    phase: &PhaseModel,
    xi: &[f64],
    d: u32,
    iv: &Interval,
    lambdas: &[f64],
    tol: f64,
    exec: Execution,
) -> Result<VdcCertificate, VdcError> {
    let (epsilon, evidence) = check_hypotheses(phase, xi, d, iv)?;
    if !(epsilon > 0.0) {
        return Err(VdcError::HypothesisFailed { d });
    }
    for &l in lambdas {
        if !(l > 0.0) {
            return Err(VdcError::BadLambda(l));
        }
    }
    let amp = amplitude_data(f, iv, tol)?;
    let g = f.restrict(&DomainBox::new(vec![*iv]));
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let results = exec.map(&sorted, |&l| quad::integrate_oscillatory(&g, phase, xi, l, tol));
    let mut rows = Vec::new();
    for (l, r) in sorted.iter().zip(results) {
        let r = r?;
        let bound = vdc_bound(d, epsilon, *l, amp.f_a, amp.f_b, amp.tv)?;
        let actual = r.abs();
        rows.push(VdcRow {
            lambda: *l,
            actual,
            bound,
            margin: bound - actual,
            quad_error: r.error,
            low_confidence: r.low_confidence,
            pass: actual <= bound + QUAD_ALLOWANCE,
        });
    }
    let verdict = rows.iter().all(|r| r.pass);
    let low_confidence = rows.iter().any(|r| r.low_confidence);
    Ok(VdcCertificate {
        d,
        epsilon,
        interval: (iv.lo.value, iv.hi.value),
        amplitude: amp,
        evidence,
        allowance: QUAD_ALLOWANCE,
        rows,
        low_confidence,
        verdict,
    })
}

/// One randomized case for the bound battery.
#[derive(Debug, Clone)]
pub struct VdcCase {
    pub amplitude: PiecewisePowerLog,
    pub phase: PhaseModel,
    pub d: u32,
    pub interval: Interval,
}

/// Deterministic random cases: polynomial phases of degree ≤ 4 whose `d`-th
/// derivative stays away from 0 on a random interval (rejection sampled),
/// and amplitudes made of one or two bounded power-log terms.
pub fn battery(seed: u64, n: usize) -> Vec<VdcCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphas = [(1, 3), (1, 2), (1, 1), (3, 2), (2, 1), (5, 2)];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let d = rng.random_range(1..=4u32);
        let deg = rng.random_range(d..=4u32);
        let a = rng.random_range(-2.0..1.5f64);
        let b = a + rng.random_range(0.5..2.0f64);
        let iv = Interval::closed(a, b).expect("a < b");
        let mut p = Polynomial::zero(1);
        for k in 1..=deg {
            let c: f64 = rng.random_range(-1.0..1.0);
            p.add_term(vec![k], if k == deg { c.signum() * (0.5 + c.abs()) } else { c });
        }
        let phase = PhaseModel::from_polynomials(vec![p], None).expect("polynomial phase");
        let Ok((eps, _)) = check_hypotheses(&phase, &[1.0], d, &iv) else { continue };
        if !(eps > 1e-3) {
            continue;
        }
        let n_terms = rng.random_range(1..=2usize);
        let mut terms = Vec::new();
        for _ in 0..n_terms {
            let (p_, q_) = alphas[rng.random_range(0..alphas.len())];
            let center = match rng.random_range(0..3) {
                0 => a,
                1 => b,
                _ => a - rng.random_range(0.1..1.0f64),
            };
            let beta = if rng.random_bool(0.3) { 1 } else { 0 };
            let coef = rng.random_range(-2.0..2.0f64);
            terms.push(PowerLogTerm::new_1d(coef, center, Rational64::new(p_, q_), beta));
        }
        let amplitude = PiecewisePowerLog::new(1, vec![Piece::new(Cell::interval_1d(iv), terms)]).expect("valid amplitude");
        out.push(VdcCase { amplitude, phase, d, interval: iv });
    }
    out
}

/// Worst violation `actual - bound` over a certificate (negative when every
/// row passes).
pub fn worst_violation(c: &VdcCertificate) -> f64 {
    c.rows.iter().map(|r| r.actual - r.bound).fold(f64::NEG_INFINITY, f64::max)
}
