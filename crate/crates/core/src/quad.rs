//! Quadrature for `∫ f(y) e^{iλψ(y)} dy` with prepared power-log amplitudes.
//!
//! Each cell is cut into segments at stationary points of the phase (and,
//! for `∫|f|`, at sign changes of the amplitude). Segments touching a
//! singular center are mapped by `y = a + L s^q`, unbounded cells are
//! truncated using the power-law tail bound. Segments are then refined
//! globally, largest error first: panels with small phase change use
//! Gauss–Kronrod 15/7, the others a Filon-type rule with degree-10
//! amplitude interpolation against exact moments of `e^{iωt}`.

use std::cell::Cell as StdCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use num_complex::Complex64;
use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Interval;
use crate::phase::{PhaseError, PhaseModel, ProjectedPhase};
use crate::powerlog::{self, power_log, Piece, PiecewisePowerLog, Unit};
use crate::stats::pairwise_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("only 1- and 2-dimensional integrals are supported, got {0}")]
    Dimension(usize),
    #[error("amplitude is {amplitude}-dimensional but the phase is {phase}-dimensional")]
    DimensionMismatch { amplitude: usize, phase: usize },
    #[error("direction must be a unit vector, |ξ| = {0}")]
    NotUnit(f64),
    #[error("term {term} of cell {piece} is not integrable")]
    NotIntegrable { piece: usize, term: usize },
    #[error("amplitude: {0}")]
    Amplitude(String),
    #[error("phase: {0}")]
    Phase(#[from] PhaseError),
}

/// Maximum number of panels per integral.
pub const PANEL_BUDGET: usize = 50_000;
/// Maximum bisection depth of a single panel.
pub const MAX_DEPTH: u32 = 30;
/// Panels with `λ|Δψ|` above this use the Filon rule.
pub const FILON_PHASE_CHANGE: f64 = 8.0 * PI;
/// Grid size for stationary-point and sign-change scans.
pub const ROOT_GRID: usize = 4096;
const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelMethod {
    GaussKronrod,
    Filon,
}

/// Real-valued quadrature result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadValue {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryResult {
    pub value: Complex64,
    pub error: f64,
    pub lambda: f64,
    pub xi: Vec<f64>,
    pub panels: usize,
    pub methods: Vec<PanelMethod>,
    /// Set when the panel budget or depth limit stopped refinement before
    /// the tolerance was met.
    pub low_confidence: bool,
}

impl OscillatoryResult {
    pub fn abs(&self) -> f64 {
        self.value.norm()
    }

    /// (Gauss–Kronrod panels, Filon panels).
    pub fn method_counts(&self) -> (usize, usize) {
        let filon = self.methods.iter().filter(|m| **m == PanelMethod::Filon).count();
        (self.methods.len() - filon, filon)
    }
}

// ---------------------------------------------------------------------------
// rules

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

const FILON_NODES: usize = 11;

/// Monomial coefficients of the Chebyshev polynomials `T_0..T_10`.
fn chebyshev_table() -> &'static [[f64; FILON_NODES]; FILON_NODES] {
    static TABLE: OnceLock<[[f64; FILON_NODES]; FILON_NODES]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; FILON_NODES]; FILON_NODES];
        t[0][0] = 1.0;
        t[1][1] = 1.0;
        for j in 2..FILON_NODES {
            for k in 0..FILON_NODES {
                let up = if k > 0 { 2.0 * t[j - 1][k - 1] } else { 0.0 };
                t[j][k] = up - t[j - 2][k];
            }
        }
        t
    })
}

/// `M_k = ∫_{-1}^{1} t^k e^{iωt} dt` for `k = 0..10`.
fn filon_moments(omega: f64) -> [Complex64; FILON_NODES] {
    let mut m = [Complex64::new(0.0, 0.0); FILON_NODES];
    if omega.abs() >= 10.0 {
        let iw = Complex64::new(0.0, omega);
        let ep = Complex64::cis(omega);
        let em = ep.conj();
        m[0] = (ep - em) / iw;
        for k in 1..FILON_NODES {
            let boundary = if k % 2 == 0 { ep - em } else { ep + em };
            m[k] = boundary / iw - m[k - 1] * (k as f64) / iw;
        }
    } else {
        let iw = Complex64::new(0.0, omega);
        for (k, mk) in m.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut pow = Complex64::new(1.0, 0.0);
            for j in 0..200 {
                if j > 0 {
                    pow = pow * iw / j as f64;
                }
                if (k + j) % 2 == 0 {
                    let term = pow * (2.0 / (k + j + 1) as f64);
                    acc += term;
                    if j as f64 > omega.abs() && term.norm() < 1e-18 {
                        break;
                    }
                }
            }
            *mk = acc;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// engine

#[derive(Debug, Clone, Copy, PartialEq)]
enum Map {
    Affine,
    /// `y = a + L s^q`
    Left(u32),
    /// `y = b - L s^q`
    Right(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    a: f64,
    b: f64,
    map: Map,
}

struct MappedPoint {
    y: f64,
    near: Option<(f64, f64)>,
    jac: f64,
    dyds: f64,
}

impl Segment {
    fn s_range(&self) -> (f64, f64) {
        match self.map {
            Map::Affine => (self.a, self.b),
            _ => (0.0, 1.0),
        }
    }

    fn point(&self, s: f64) -> MappedPoint {
        match self.map {
            Map::Affine => MappedPoint { y: s, near: None, jac: 1.0, dyds: 1.0 },
            Map::Left(q) | Map::Right(q) => {
                let l = self.b - self.a;
                let t = l * s.powi(q as i32);
                let jac = q as f64 * l * s.powi(q as i32 - 1);
                if let Map::Left(_) = self.map {
                    MappedPoint { y: self.a + t, near: Some((self.a, t)), jac, dyds: jac }
                } else {
                    MappedPoint { y: self.b - t, near: Some((self.b, t)), jac, dyds: -jac }
                }
            }
        }
    }
}

type AmpFn<'a> = dyn Fn(f64, Option<(f64, f64)>) -> Complex64 + 'a;
type RealFn<'a> = dyn Fn(f64) -> f64 + 'a;

struct Problem<'a> {
    amp: &'a AmpFn<'a>,
    /// `(ψ, ψ')`; only used when `lambda > 0`.
    phase: Option<(&'a RealFn<'a>, &'a RealFn<'a>)>,
    lambda: f64,
}

#[derive(Debug, Clone)]
struct Panel {
    seg: usize,
    lo: f64,
    hi: f64,
    value: Complex64,
    error: f64,
    depth: u32,
    method: PanelMethod,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.seg.cmp(&self.seg))
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

#[derive(Debug, Clone)]
struct EngineOut {
    value: Complex64,
    error: f64,
    panels: usize,
    methods: Vec<PanelMethod>,
    low_confidence: bool,
}

impl EngineOut {
    fn zero() -> Self {
        EngineOut { value: Complex64::new(0.0, 0.0), error: 0.0, panels: 0, methods: Vec::new(), low_confidence: false }
    }
}

impl Problem<'_> {
    fn oscillates(&self) -> bool {
        self.lambda != 0.0 && self.phase.is_some()
    }

    fn psi(&self, seg: &Segment, s: f64) -> f64 {
        let (psi, _) = self.phase.expect("phase present");
        psi(seg.point(s).y)
    }

    fn amp_s(&self, seg: &Segment, s: f64) -> Complex64 {
        let p = seg.point(s);
        (self.amp)(p.y, p.near) * p.jac
    }

    fn gauss_kronrod(&self, seg: &Segment, lo: f64, hi: f64) -> (Complex64, f64) {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let psi_c = if self.oscillates() { self.psi(seg, c) } else { 0.0 };
        let eval = |s: f64| {
            let a = self.amp_s(seg, s);
            if self.oscillates() {
                a * Complex64::cis(self.lambda * (self.psi(seg, s) - psi_c))
            } else {
                a
            }
        };
        let mut k = Complex64::new(0.0, 0.0);
        let mut g = Complex64::new(0.0, 0.0);
        for i in 0..8 {
            if i == 7 {
                let v = eval(c);
                k += v * WGK[7];
                g += v * WG[3];
            } else {
                let v = eval(c - h * XGK[i]) + eval(c + h * XGK[i]);
                k += v * WGK[i];
                if i % 2 == 1 {
                    g += v * WG[i / 2];
                }
            }
        }
        let rot = if self.oscillates() { Complex64::cis(self.lambda * psi_c) } else { Complex64::new(1.0, 0.0) };
        (k * h * rot, ((k - g) * h).norm())
    }

    fn filon_raw(&self, seg: &Segment, lo: f64, hi: f64) -> Complex64 {
        let (psi, dpsi) = self.phase.expect("phase present");
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let pc = seg.point(c);
        let psi_c = psi(pc.y);
        let slope = dpsi(pc.y) * pc.dyds;
        let omega = self.lambda * slope * h;
        let n = FILON_NODES;
        let mut g = [Complex64::new(0.0, 0.0); FILON_NODES];
        let mut theta = [0.0; FILON_NODES];
        for k in 0..n {
            theta[k] = (2 * k + 1) as f64 * PI / (2 * n) as f64;
            let t = theta[k].cos();
            let s = c + h * t;
            let rem = psi(seg.point(s).y) - psi_c - slope * h * t;
            g[k] = self.amp_s(seg, s) * Complex64::cis(self.lambda * rem);
        }
        let table = chebyshev_table();
        let mut mono = [Complex64::new(0.0, 0.0); FILON_NODES];
        for j in 0..n {
            let mut a = Complex64::new(0.0, 0.0);
            for k in 0..n {
                a += g[k] * (j as f64 * theta[k]).cos();
            }
            a *= 2.0 / n as f64;
            if j == 0 {
                a *= 0.5;
            }
            for (m, t) in mono.iter_mut().zip(&table[j]) {
                *m += a * *t;
            }
        }
        let moments = filon_moments(omega);
        let sum: Complex64 = mono.iter().zip(&moments).map(|(a, m)| a * m).sum();
        sum * h * Complex64::cis(self.lambda * psi_c)
    }

    fn filon(&self, seg: &Segment, lo: f64, hi: f64) -> (Complex64, f64) {
        let mid = 0.5 * (lo + hi);
        let whole = self.filon_raw(seg, lo, hi);
        let halves = self.filon_raw(seg, lo, mid) + self.filon_raw(seg, mid, hi);
        (halves, (whole - halves).norm())
    }

    fn panel(&self, seg_idx: usize, seg: &Segment, lo: f64, hi: f64, depth: u32) -> Panel {
        let use_filon = self.oscillates() && {
            let change = (self.psi(seg, hi) - self.psi(seg, lo)).abs();
            !(self.lambda * change <= FILON_PHASE_CHANGE)
        };
        let ((mut value, mut error), method) = if use_filon {
            (self.filon(seg, lo, hi), PanelMethod::Filon)
        } else {
            (self.gauss_kronrod(seg, lo, hi), PanelMethod::GaussKronrod)
        };
        if !(value.re.is_finite() && value.im.is_finite() && error.is_finite()) {
            value = Complex64::new(0.0, 0.0);
            error = f64::INFINITY;
        }
        Panel { seg: seg_idx, lo, hi, value, error, depth, method }
    }

    fn run(&self, segments: &[Segment], tol: f64, budget: usize) -> EngineOut {
        if segments.is_empty() {
            return EngineOut::zero();
        }
        let mut heap = BinaryHeap::new();
        let mut done: Vec<Panel> = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            let (lo, hi) = seg.s_range();
            heap.push(self.panel(i, seg, lo, hi, 0));
        }
        let mut count = heap.len();
        let mut total: f64 = heap.iter().map(|p| p.error).sum();
        let mut steps = 0usize;
        while total > tol && count < budget {
            let Some(p) = heap.pop() else { break };
            if p.depth >= MAX_DEPTH {
                done.push(p);
                if heap.is_empty() {
                    break;
                }
                continue;
            }
            let seg = &segments[p.seg];
            let mid = 0.5 * (p.lo + p.hi);
            let left = self.panel(p.seg, seg, p.lo, mid, p.depth + 1);
            let right = self.panel(p.seg, seg, mid, p.hi, p.depth + 1);
            total += left.error + right.error - p.error;
            heap.push(left);
            heap.push(right);
            count += 1;
            steps += 1;
            if steps.is_multiple_of(64) || !total.is_finite() {
                total = heap.iter().chain(&done).map(|p| p.error).sum();
            }
        }
        let mut all: Vec<Panel> = heap.into_vec();
        all.extend(done);
        all.sort_by(|a, b| a.seg.cmp(&b.seg).then(a.lo.total_cmp(&b.lo)));
        let re: Vec<f64> = all.iter().map(|p| p.value.re).collect();
        let im: Vec<f64> = all.iter().map(|p| p.value.im).collect();
        let errs: Vec<f64> = all.iter().map(|p| p.error).collect();
        let error = pairwise_sum(&errs);
        EngineOut {
            value: Complex64::new(pairwise_sum(&re), pairwise_sum(&im)),
            error,
            panels: all.len(),
            methods: all.iter().map(|p| p.method).collect(),
            low_confidence: !(error <= tol),
        }
    }
}

// ---------------------------------------------------------------------------
// real-function helpers

/// Adaptive Gauss–Kronrod for a smooth real function on a finite interval.
pub fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> QuadValue {
    let amp = |y: f64, _: Option<(f64, f64)>| Complex64::new(f(y), 0.0);
    let out = Problem { amp: &amp, phase: None, lambda: 0.0 }.run(&[Segment { a, b, map: Map::Affine }], tol, PANEL_BUDGET);
    QuadValue { value: out.value.re, error: out.error, panels: out.panels, low_confidence: out.low_confidence }
}

/// Adaptive Gauss–Kronrod for a complex function on a finite interval.
pub fn adaptive_gk_complex(f: &dyn Fn(f64) -> Complex64, a: f64, b: f64, tol: f64) -> (Complex64, QuadValue) {
    let amp = |y: f64, _: Option<(f64, f64)>| f(y);
    let out = Problem { amp: &amp, phase: None, lambda: 0.0 }.run(&[Segment { a, b, map: Map::Affine }], tol, PANEL_BUDGET);
    (out.value, QuadValue { value: out.value.norm(), error: out.error, panels: out.panels, low_confidence: out.low_confidence })
}

/// Sign changes of `g` on `grid`, refined by bisection; exact zeros at grid
/// nodes are reported as-is. Tangential zeros are not detected.
fn sign_changes(g: &dyn Fn(f64) -> f64, grid: &[f64]) -> Vec<f64> {
    let vals: Vec<f64> = grid.iter().map(|x| g(*x)).collect();
    let mut out = Vec::new();
    for k in 0..grid.len() {
        if vals[k] == 0.0 {
            out.push(grid[k]);
            continue;
        }
        if k + 1 < grid.len() && vals[k] * vals[k + 1] < 0.0 {
            let (mut lo, mut hi) = (grid[k], grid[k + 1]);
            let mut glo = vals[k];
            while hi - lo > ROOT_TOL * lo.abs().max(hi.abs()).max(1.0) {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let gm = g(mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if gm * glo < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    glo = gm;
                }
            }
            out.push(0.5 * (lo + hi));
        }
    }
    out.dedup();
    out
}

/// Scan grid on `[a, b]`: uniform points plus log-graded points toward both
/// ends, so long truncated ranges and endpoint layers are both covered.
fn scan_grid(a: f64, b: f64) -> Vec<f64> {
    let l = b - a;
    let mut g: Vec<f64> = (0..ROOT_GRID).map(|k| a + l * k as f64 / (ROOT_GRID - 1) as f64).collect();
    let graded = 512;
    for k in 0..graded {
        let d = l * 1e-12f64.powf(1.0 - k as f64 / (graded - 1) as f64) * 0.5;
        g.push(a + d);
        g.push(b - d);
    }
    g.retain(|x| *x >= a && *x <= b);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Roots of `dpsi` in `[a, b]` (see [`sign_changes`]).
fn roots_in(dpsi: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Vec<f64> {
    sign_changes(&|y| dpsi(y), &scan_grid(a, b))
}

/// Stationary points of `ξ·φ` on a 1-D interval: sign changes of the
/// derivative on a 4096-point grid, bisected to 1e-12. Tangential roots
/// (no sign change) may be missed. Infinite ends are clipped to ±1e6.
pub fn stationary_points(phase: &PhaseModel, xi: &[f64], iv: &Interval) -> Result<Vec<f64>, QuadError> {
    if phase.dim() != 1 {
        return Err(QuadError::Dimension(phase.dim()));
    }
    let proj = phase.project(xi)?;
    let a = iv.lo.value.max(-1e6);
    let b = iv.hi.value.min(1e6);
    let mut r = roots_in(&|y| proj.d1(0, &[y]), a, b);
    r.retain(|y| iv.contains(*y));
    Ok(r)
}

// ---------------------------------------------------------------------------
// lines: 1-D restrictions of a piece

struct LineTerm<'a> {
    scale: f64,
    center: f64,
    alpha: Rational64,
    beta: u32,
    unit: &'a Unit,
}

struct Line<'a> {
    iv: Interval,
    terms: Vec<LineTerm<'a>>,
    base: [f64; 2],
    dim: usize,
    axis: usize,
}

enum Kernel<'a> {
    Plain,
    Abs,
    Oscillatory { lambda: f64, psi: &'a RealFn<'a>, dpsi: &'a RealFn<'a> },
}

impl<'a> Line<'a> {
    fn from_piece_1d(piece: &'a Piece) -> Self {
        let terms = piece
            .terms
            .iter()
            .map(|t| LineTerm { scale: t.coef, center: t.center[0], alpha: t.alpha[0], beta: t.beta[0], unit: &t.unit })
            .collect();
        Line { iv: piece.cell.axes[0], terms, base: [0.0; 2], dim: 1, axis: 0 }
    }

    fn point(&self, y: f64) -> [f64; 2] {
        let mut p = self.base;
        p[self.axis] = y;
        p
    }

    fn amp(&self, y: f64, near: Option<(f64, f64)>) -> f64 {
        let p = self.point(y);
        let mut acc = 0.0;
        for t in &self.terms {
            let offset = match near {
                Some((e, d)) if e == t.center => d,
                _ => (y - t.center).abs(),
            };
            let u = if t.unit.is_one() { 1.0 } else { t.unit.eval(&p[..self.dim]) };
            acc += t.scale * power_log(offset, t.alpha, t.beta) * u;
        }
        acc
    }

    fn unit_at(&self, t: &LineTerm, y: f64) -> f64 {
        if t.unit.is_one() {
            1.0
        } else {
            t.unit.eval(&self.point(y)[..self.dim])
        }
    }

    /// Substitution power at a finite endpoint: 1 when no term is singular
    /// there.
    fn endpoint_power(&self, e: f64) -> u32 {
        self.terms
            .iter()
            .filter(|t| t.center == e && t.scale != 0.0)
            .map(|t| singular_power(t.alpha, t.beta, t.unit.is_one()))
            .max()
            .unwrap_or(1)
    }

    /// Truncation point and tail bound for the unbounded side `side = ±1`.
    fn truncation(&self, side: f64, share: f64) -> (f64, f64) {
        let finite_end = if side > 0.0 { self.iv.lo.value } else { self.iv.hi.value };
        let start = if finite_end.is_finite() { finite_end } else { 0.0 };
        let n = self.terms.len().max(1) as f64;
        let mut point = start + side;
        let mut bound = 0.0;
        for t in &self.terms {
            let min_dist = ((start - t.center) * side).max(0.0);
            let sup = |d: f64| -> f64 {
                if t.unit.is_one() {
                    1.0
                } else if let Some(k) = t.unit.bound {
                    k
                } else {
                    let mut m: f64 = 0.0;
                    for j in 0..=80 {
                        let y = t.center + side * d * 2f64.powf(j as f64 / 4.0);
                        m = m.max(self.unit_at(t, y).abs());
                    }
                    1.5 * m
                }
            };
            let (d, b) = power_tail(t.alpha, t.beta, t.scale.abs(), &sup, min_dist, share / n);
            point = if side > 0.0 { point.max(t.center + d) } else { point.min(t.center - d) };
            bound += b;
        }
        (point, bound)
    }
}

/// Smallest `q` with `q(α+1) - 1 ≥ 1`; 1 for factors smooth at the center.
fn singular_power(alpha: Rational64, beta: u32, unit_is_one: bool) -> u32 {
    let smooth = beta == 0 && alpha.is_integer() && !alpha.is_negative();
    if smooth {
        return if unit_is_one { 1 } else { 2 };
    }
    let one = Rational64::from_integer(1);
    let a1 = alpha + one;
    if !a1.is_positive() {
        return 1;
    }
    let q = (Rational64::from_integer(2) / a1).ceil().to_integer().max(1);
    let q = if beta > 0 { q.max(2) } else { q };
    q.min(64) as u32
}

/// Distance `D ≥ min_dist` beyond which
/// `2·c·sup(D)·D^{α+1}(log D)^β/(-α-1) ≤ share`, and the bound at `D`.
fn power_tail(alpha: Rational64, beta: u32, c: f64, sup: &dyn Fn(f64) -> f64, min_dist: f64, share: f64) -> (f64, f64) {
    let a = alpha.to_f64().unwrap_or(0.0);
    let s = -a - 1.0;
    if c == 0.0 {
        return (min_dist.max(1.0), 0.0);
    }
    if !(s > 0.0) {
        return (min_dist.max(1.0), f64::INFINITY);
    }
    let mut d = min_dist.max(E).max((2.0 * beta as f64 / s).exp());
    loop {
        let bound = 2.0 * c * sup(d) * d.powf(a + 1.0) * d.ln().powi(beta as i32) / s;
        if bound <= share || d > 1e300 {
            return (d, bound);
        }
        d *= 2.0;
    }
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Geometric cut points from `start` toward `end` (either direction).
fn geometric_cuts(start: f64, end: f64) -> Vec<f64> {
    let side = (end - start).signum();
    let w = start.abs().max(1.0);
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let y = start + side * w * 2f64.powi(k);
        if (end - y) * side <= 0.0 {
            break;
        }
        out.push(y);
        k += 1;
    }
    out
}

/// Assemble segments between consecutive cut points, mapping those that
/// touch a singular cell endpoint.
fn segments_from_cuts(cuts: &[f64], lo_power: u32, hi_power: u32, lo: f64, hi: f64) -> Vec<Segment> {
    let mut segs = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let ql = if a == lo { lo_power } else { 1 };
        let qr = if b == hi { hi_power } else { 1 };
        match (ql > 1, qr > 1) {
            (true, true) => {
                let m = 0.5 * (a + b);
                segs.push(Segment { a, b: m, map: Map::Left(ql) });
                segs.push(Segment { a: m, b, map: Map::Right(qr) });
            }
            (true, false) => segs.push(Segment { a, b, map: Map::Left(ql) }),
            (false, true) => segs.push(Segment { a, b, map: Map::Right(qr) }),
            (false, false) => segs.push(Segment { a, b, map: Map::Affine }),
        }
    }
    segs
}

fn integrate_line(line: &Line, kernel: &Kernel, tol: f64) -> EngineOut {
    if line.terms.iter().all(|t| t.scale == 0.0) {
        return EngineOut::zero();
    }
    let (lo, hi) = (line.iv.lo.value, line.iv.hi.value);
    let infinite_sides = (!lo.is_finite()) as u32 + (!hi.is_finite()) as u32;
    let share = if infinite_sides > 0 { tol / 10.0 / infinite_sides as f64 } else { 0.0 };
    let mut tail = 0.0;
    let mut a = lo;
    let mut b = hi;
    if !hi.is_finite() {
        let (t, bound) = line.truncation(1.0, share);
        b = t;
        tail += bound;
    }
    if !lo.is_finite() {
        let (t, bound) = line.truncation(-1.0, share);
        a = t;
        tail += bound;
    }
    if !(b > a) {
        let mut out = EngineOut::zero();
        out.error = tail;
        return out;
    }
    let mut cuts = vec![a, b];
    if !hi.is_finite() {
        cuts.extend(geometric_cuts(if lo.is_finite() { a } else { 0.0f64.max(a) }, b));
    }
    if !lo.is_finite() {
        cuts.extend(geometric_cuts(if hi.is_finite() { b } else { 0.0f64.min(b) }, a));
    }
    for t in &line.terms {
        if t.beta > 0 {
            cuts.push(t.center - 1.0);
            cuts.push(t.center + 1.0);
        }
    }
    let amp_real = |y: f64, near: Option<(f64, f64)>| line.amp(y, near);
    match kernel {
        Kernel::Oscillatory { lambda, dpsi, .. } if *lambda != 0.0 => {
            cuts.extend(roots_in(*dpsi, a, b));
        }
        Kernel::Abs => {
            let scan = line.terms.len() > 1 || line.terms.iter().any(|t| !t.unit.is_one());
            if scan {
                cuts.extend(sign_changes(&|y| amp_real(y, None), &scan_grid(a, b)));
            }
        }
        _ => {}
    }
    let cuts: Vec<f64> = dedup_sorted(cuts).into_iter().filter(|y| *y >= a && *y <= b).collect();
    let lo_power = if lo.is_finite() { line.endpoint_power(lo) } else { 1 };
    let hi_power = if hi.is_finite() { line.endpoint_power(hi) } else { 1 };
    let segs = segments_from_cuts(&cuts, lo_power, hi_power, lo, hi);

    let engine_tol = (tol - tail).max(tol * 0.5);
    let mut out = match kernel {
        Kernel::Plain => {
            let amp = |y: f64, near| Complex64::new(amp_real(y, near), 0.0);
            Problem { amp: &amp, phase: None, lambda: 0.0 }.run(&segs, engine_tol, PANEL_BUDGET)
        }
        Kernel::Abs => {
            let amp = |y: f64, near| Complex64::new(amp_real(y, near).abs(), 0.0);
            Problem { amp: &amp, phase: None, lambda: 0.0 }.run(&segs, engine_tol, PANEL_BUDGET)
        }
        Kernel::Oscillatory { lambda, psi, dpsi } => {
            let amp = |y: f64, near| Complex64::new(amp_real(y, near), 0.0);
            Problem { amp: &amp, phase: Some((*psi, *dpsi)), lambda: *lambda }.run(&segs, engine_tol, PANEL_BUDGET)
        }
    };
    out.error += tail;
    out.low_confidence |= !tail.is_finite();
    out
}

// ---------------------------------------------------------------------------
// pieces

enum Kernel2<'a> {
    Plain,
    Abs,
    Oscillatory { lambda: f64, phase: &'a ProjectedPhase },
}

fn integrate_piece_1d(piece: &Piece, kernel: &Kernel2, tol: f64) -> EngineOut {
    let line = Line::from_piece_1d(piece);
    match kernel {
        Kernel2::Plain => integrate_line(&line, &Kernel::Plain, tol),
        Kernel2::Abs => integrate_line(&line, &Kernel::Abs, tol),
        Kernel2::Oscillatory { lambda, phase } => {
            let psi = |y: f64| phase.value(&[y]);
            let dpsi = |y: f64| phase.d1(0, &[y]);
            integrate_line(&line, &Kernel::Oscillatory { lambda: *lambda, psi: &psi, dpsi: &dpsi }, tol)
        }
    }
}

/// `∫_{iv} |y - θ|^α |log|y - θ||^β dy`, used for the 2-D outer tail.
fn axis_factor_mass(iv: Interval, center: f64, alpha: Rational64, beta: u32) -> f64 {
    let unit = Unit::one();
    let line = Line {
        iv,
        terms: vec![LineTerm { scale: 1.0, center, alpha, beta, unit: &unit }],
        base: [0.0; 2],
        dim: 1,
        axis: 0,
    };
    let out = integrate_line(&line, &Kernel::Abs, 1e-8);
    out.value.re + out.error
}

fn integrate_piece_2d(piece: &Piece, kernel: &Kernel2, tol: f64) -> EngineOut {
    let iv0 = piece.cell.axes[0];
    let iv1 = piece.cell.axes[1];
    let (lo, hi) = (iv0.lo.value, iv0.hi.value);
    let tol_outer = tol / 2.0;

    // outer truncation: per-term product of the axis-0 tail and the axis-1 mass
    let infinite_sides = (!lo.is_finite()) as u32 + (!hi.is_finite()) as u32;
    let mut tail = 0.0;
    let (mut a, mut b) = (lo, hi);
    if infinite_sides > 0 {
        let share = tol_outer / 10.0 / infinite_sides as f64 / piece.terms.len().max(1) as f64;
        for side in [1.0, -1.0] {
            let end = if side > 0.0 { hi } else { lo };
            if end.is_finite() {
                continue;
            }
            let finite_end = if side > 0.0 { lo } else { hi };
            let start = if finite_end.is_finite() { finite_end } else { 0.0 };
            let mut point = start + side;
            for t in &piece.terms {
                let mass = axis_factor_mass(iv1, t.center[1], t.alpha[1], t.beta[1]);
                let k = match (&t.unit.expr, t.unit.bound) {
                    (None, _) => 1.0,
                    (Some(_), Some(k)) => k,
                    (Some(_), None) => {
                        1.5 * piece.cell.as_box().halton_points(4096).iter().map(|y| t.unit.eval(y).abs()).fold(0.0, f64::max)
                    }
                };
                let min_dist = ((start - t.center[0]) * side).max(0.0);
                let (d, bound) = power_tail(t.alpha[0], t.beta[0], t.coef.abs() * k * mass, &|_| 1.0, min_dist, share);
                point = if side > 0.0 { point.max(t.center[0] + d) } else { point.min(t.center[0] - d) };
                tail += bound;
            }
            if side > 0.0 {
                b = point;
            } else {
                a = point;
            }
        }
    }
    if !(b > a) {
        let mut out = EngineOut::zero();
        out.error = tail;
        return out;
    }

    let mut cuts = vec![a, b];
    if !hi.is_finite() {
        cuts.extend(geometric_cuts(if lo.is_finite() { a } else { 0.0f64.max(a) }, b));
    }
    if !lo.is_finite() {
        cuts.extend(geometric_cuts(if hi.is_finite() { b } else { 0.0f64.min(b) }, a));
    }
    for t in &piece.terms {
        if t.beta[0] > 0 {
            cuts.push(t.center[0] - 1.0);
            cuts.push(t.center[0] + 1.0);
        }
    }
    if let Kernel2::Oscillatory { lambda, phase } = kernel {
        // pre-split the outer range so each panel sees a bounded phase change
        let c0 = iv1.lo.value.max(iv1.hi.value.min(0.0) - 1e3);
        let c1 = iv1.hi.value.min(c0 + 2e3);
        let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=64 {
            for j in 0..=64 {
                let y0 = a + (b - a) * i as f64 / 64.0;
                let y1 = c0 + (c1 - c0) * j as f64 / 64.0;
                let v = phase.value(&[y0, y1]);
                if v.is_finite() {
                    pmin = pmin.min(v);
                    pmax = pmax.max(v);
                }
            }
        }
        if pmax > pmin {
            let n = ((lambda * (pmax - pmin)) / FILON_PHASE_CHANGE).ceil().clamp(1.0, 2048.0) as usize;
            for k in 1..n {
                cuts.push(a + (b - a) * k as f64 / n as f64);
            }
        }
    }
    let cuts: Vec<f64> = dedup_sorted(cuts).into_iter().filter(|y| *y >= a && *y <= b).collect();
    let outer_power = |e: f64| {
        piece
            .terms
            .iter()
            .filter(|t| t.center[0] == e && t.coef != 0.0)
            .map(|t| singular_power(t.alpha[0], t.beta[0], t.unit.is_one()))
            .max()
            .unwrap_or(1)
    };
    let lo_power = if lo.is_finite() { outer_power(lo) } else { 1 };
    let hi_power = if hi.is_finite() { outer_power(hi) } else { 1 };
    let segs = segments_from_cuts(&cuts, lo_power, hi_power, lo, hi);
    let n_outer = segs.len().max(1) as f64;
    let inner_tol = tol / (2.0 * n_outer * (b - a).clamp(1.0, 1e6));

    let inner_panels = StdCell::new(0usize);
    let inner_low = StdCell::new(false);
    let outer_amp = |y0: f64, near: Option<(f64, f64)>| -> Complex64 {
        let terms = piece
            .terms
            .iter()
            .map(|t| {
                let offset = match near {
                    Some((e, d)) if e == t.center[0] => d,
                    _ => (y0 - t.center[0]).abs(),
                };
                LineTerm {
                    scale: t.coef * power_log(offset, t.alpha[0], t.beta[0]),
                    center: t.center[1],
                    alpha: t.alpha[1],
                    beta: t.beta[1],
                    unit: &t.unit,
                }
            })
            .collect();
        let line = Line { iv: iv1, terms, base: [y0, 0.0], dim: 2, axis: 1 };
        let out = match kernel {
            Kernel2::Plain => integrate_line(&line, &Kernel::Plain, inner_tol),
            Kernel2::Abs => integrate_line(&line, &Kernel::Abs, inner_tol),
            Kernel2::Oscillatory { lambda, phase } => {
                let psi = |y1: f64| phase.value(&[y0, y1]);
                let dpsi = |y1: f64| phase.d1(1, &[y0, y1]);
                integrate_line(&line, &Kernel::Oscillatory { lambda: *lambda, psi: &psi, dpsi: &dpsi }, inner_tol)
            }
        };
        inner_panels.set(inner_panels.get() + out.panels);
        inner_low.set(inner_low.get() | out.low_confidence);
        out.value
    };
    let engine_tol = (tol_outer - tail).max(tol_outer * 0.5);
    let mut out = Problem { amp: &outer_amp, phase: None, lambda: 0.0 }.run(&segs, engine_tol, PANEL_BUDGET / 10);
    out.error += tail + tol / 2.0 * inner_low.get() as u8 as f64;
    out.panels += inner_panels.get();
    out.low_confidence |= inner_low.get() || !tail.is_finite();
    out
}

fn check_integrable(f: &PiecewisePowerLog) -> Result<(), QuadError> {
    let verdicts = powerlog::is_integrable(f).map_err(|e| QuadError::Amplitude(e.to_string()))?;
    match verdicts.into_iter().find(|v| !v.integrable) {
        Some(v) => Err(QuadError::NotIntegrable { piece: v.piece, term: v.term }),
        None => Ok(()),
    }
}

fn check_tol(tol: f64) -> Result<(), QuadError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(QuadError::BadTolerance(tol))
    }
}

fn integrate_pieces(f: &PiecewisePowerLog, kernel: &Kernel2, tol: f64) -> Result<EngineOut, QuadError> {
    match f.dim() {
        1 | 2 => {}
        d => return Err(QuadError::Dimension(d)),
    }
    let n = f.pieces().len().max(1) as f64;
    let outs: Vec<EngineOut> = f
        .pieces()
        .iter()
        .map(|p| if f.dim() == 1 { integrate_piece_1d(p, kernel, tol / n) } else { integrate_piece_2d(p, kernel, tol / n) })
        .collect();
    let re: Vec<f64> = outs.iter().map(|o| o.value.re).collect();
    let im: Vec<f64> = outs.iter().map(|o| o.value.im).collect();
    Ok(EngineOut {
        value: Complex64::new(pairwise_sum(&re), pairwise_sum(&im)),
        error: outs.iter().map(|o| o.error).sum(),
        panels: outs.iter().map(|o| o.panels).sum(),
        methods: outs.iter().flat_map(|o| o.methods.iter().copied()).collect(),
        low_confidence: outs.iter().any(|o| o.low_confidence),
    })
}

/// `∫ f(y) e^{iλ ξ·φ(y)} dy` for `m ∈ {1, 2}`; 2-D integrals are iterated
/// (outer axis 0, inner axis 1). Negative `λ` gives the complex conjugate
/// of the `|λ|` result.
pub fn integrate_oscillatory(
    f: &PiecewisePowerLog,
    phase: &PhaseModel,
    xi: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<OscillatoryResult, QuadError> {
    check_tol(tol)?;
    if f.dim() != phase.dim() {
        return Err(QuadError::DimensionMismatch { amplitude: f.dim(), phase: phase.dim() });
    }
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= 1e-12) {
        return Err(QuadError::NotUnit(norm));
    }
    check_integrable(f)?;
    let proj = phase.project(xi)?;
    let out = integrate_pieces(f, &Kernel2::Oscillatory { lambda: lambda.abs(), phase: &proj }, tol)?;
    let value = if lambda < 0.0 { out.value.conj() } else { out.value };
    Ok(OscillatoryResult {
        value,
        error: out.error,
        lambda,
        xi: xi.to_vec(),
        panels: out.panels,
        methods: out.methods,
        low_confidence: out.low_confidence,
    })
}

/// `∫ |f|`, split at sign changes of the amplitude.
pub fn integrate_abs(f: &PiecewisePowerLog, tol: f64) -> Result<QuadValue, QuadError> {
    check_tol(tol)?;
    check_integrable(f)?;
    let out = integrate_pieces(f, &Kernel2::Abs, tol)?;
    Ok(QuadValue { value: out.value.re, error: out.error, panels: out.panels, low_confidence: out.low_confidence })
}

/// `∫ f` (the `λ = 0` case without a phase).
pub fn integrate(f: &PiecewisePowerLog, tol: f64) -> Result<QuadValue, QuadError> {
    check_tol(tol)?;
    check_integrable(f)?;
    let out = integrate_pieces(f, &Kernel2::Plain, tol)?;
    Ok(QuadValue { value: out.value.re, error: out.error, panels: out.panels, low_confidence: out.low_confidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerlog::{Cell, PowerLogTerm};

    fn r(p: i64, q: i64) -> Rational64 {
        Rational64::new(p, q)
    }

    fn one_on(iv: Interval) -> PiecewisePowerLog {
        let c = if iv.lo.is_finite() { iv.lo.value } else { iv.hi.value };
        PiecewisePowerLog::single_1d(iv, PowerLogTerm::new_1d(1.0, c, r(0, 1), 0)).unwrap()
    }

    fn linear() -> PhaseModel {
        PhaseModel::parse(1, &["y1"], None).unwrap()
    }

    fn square() -> PhaseModel {
        PhaseModel::parse(1, &["y1*y1"], None).unwrap()
    }

    /// `∫_1^∞ g(u) e^{iλu} du = -e^{iλ} Σ_k (-1)^k g^{(k)}(1)/(iλ)^{k+1}`,
    /// truncated at the smallest term.
    fn asymptotic_tail(lambda: f64, derivs: impl Fn(usize) -> f64) -> Complex64 {
        let il = Complex64::new(0.0, lambda);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut best = f64::INFINITY;
        let mut denom = il;
        for k in 0..400 {
            let term = derivs(k) * if k % 2 == 0 { 1.0 } else { -1.0 } / denom;
            if !(term.norm() <= best) {
                break;
            }
            best = term.norm();
            acc += term;
            denom *= il;
        }
        -Complex64::cis(lambda) * acc
    }

    /// `∫_0^1 e^{iλt²} dt`: power series for small λ, otherwise
    /// `√π e^{iπ/4}/(2√λ) - ∫_1^∞ e^{iλu}/(2√u) du`.
    fn fresnel01(lambda: f64) -> Complex64 {
        if lambda <= 8.0 {
            let il = Complex64::new(0.0, lambda);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut pow = Complex64::new(1.0, 0.0);
            for n in 0..120 {
                if n > 0 {
                    pow = pow * il / n as f64;
                }
                acc += pow / (2 * n + 1) as f64;
            }
            return acc;
        }
        let full = Complex64::cis(PI / 4.0) * (PI.sqrt() / (2.0 * lambda.sqrt()));
        // g(u) = u^{-1/2}/2, g^{(k)}(1) = (1/2)·(-1/2)(-3/2)…
        let tail = asymptotic_tail(lambda, |k| {
            let mut v = 0.5;
            for j in 0..k {
                v *= -0.5 - j as f64;
            }
            v
        });
        full - tail
    }

    fn linear_closed(a: f64, b: f64, lambda: f64) -> Complex64 {
        if lambda == 0.0 {
            return Complex64::new(b - a, 0.0);
        }
        (Complex64::cis(lambda * b) - Complex64::cis(lambda * a)) / Complex64::new(0.0, lambda)
    }

    #[test]
    fn spec_examples() {
        let f = one_on(Interval::closed(0.0, 1.0).unwrap());
        let v = integrate_oscillatory(&f, &linear(), &[1.0], 0.0, 1e-12).unwrap();
        assert!((v.value - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        let v = integrate_oscillatory(&f, &linear(), &[1.0], 10.0, 1e-12).unwrap();
        assert!((v.abs() - 2.0 * 5f64.sin().abs() / 10.0).abs() < 1e-12);
        assert!((v.abs() - 0.191784).abs() < 1e-6);

        let g = one_on(Interval::closed(-1.0, 1.0).unwrap());
        let v = integrate_oscillatory(&g, &square(), &[1.0], 100.0, 1e-12).unwrap();
        let oracle = fresnel01(100.0) * 2.0;
        assert!((v.value - oracle).norm() < 1e-10, "{:?} vs {oracle:?}", v.value);
        assert!((v.abs() - (PI / 100.0).sqrt()).abs() < 1e-2);
    }

    #[test]
    fn closed_form_battery() {
        let mut cases: Vec<(PiecewisePowerLog, PhaseModel, f64, Complex64)> = Vec::new();
        for (a, b, lambda) in [(0.0, 1.0, 10.0), (0.0, 1.0, 1e4), (-2.0, 3.0, 37.0), (1.0, 5.0, 1e3), (0.0, 1.0, 0.0)] {
            cases.push((one_on(Interval::closed(a, b).unwrap()), linear(), lambda, linear_closed(a, b, lambda)));
        }
        for lambda in [1.0, 5.0, 30.0, 1e3, 1e4] {
            let g = one_on(Interval::closed(-1.0, 1.0).unwrap());
            cases.push((g, square(), lambda, fresnel01(lambda) * 2.0));
        }
        // y^{-1/2} on (0,1) with φ = y is 2∫_0^1 e^{iλt²}dt
        for lambda in [3.0, 100.0, 1e4] {
            let f = PiecewisePowerLog::single_1d(Interval::open(0.0, 1.0).unwrap(), PowerLogTerm::new_1d(1.0, 0.0, r(-1, 2), 0))
                .unwrap();
            cases.push((f, linear(), lambda, fresnel01(lambda) * 2.0));
        }
        // sinc: χ_[-1,1], φ = y
        for lambda in [7.0, 1e3] {
            cases.push((one_on(Interval::closed(-1.0, 1.0).unwrap()), linear(), lambda, Complex64::new(2.0 * lambda.sin() / lambda, 0.0)));
        }
        // triangle max(0, 1-|y|), φ = y
        for lambda in [2.0 * PI, 50.0, 1e4] {
            let tri = PiecewisePowerLog::new(
                1,
                vec![
                    Piece::new(Cell::interval_1d(Interval::new(crate::Bound::open(-1.0), crate::Bound::closed(0.0)).unwrap()), vec![PowerLogTerm::new_1d(1.0, -1.0, r(1, 1), 0)]),
                    Piece::new(Cell::interval_1d(Interval::open(0.0, 1.0).unwrap()), vec![PowerLogTerm::new_1d(1.0, 1.0, r(1, 1), 0)]),
                ],
            )
            .unwrap();
            cases.push((tri, linear(), lambda, Complex64::new(2.0 * (1.0 - lambda.cos()) / (lambda * lambda), 0.0)));
        }
        // y^{-2} on (1,∞), φ = y: g^{(k)}(1) = (-1)^k (k+1)!
        for lambda in [60.0, 1e4] {
            let f = PiecewisePowerLog::single_1d(Interval::open(1.0, f64::INFINITY).unwrap(), PowerLogTerm::new_1d(1.0, 0.0, r(-2, 1), 0))
                .unwrap();
            let oracle = asymptotic_tail(lambda, |k| {
                let fact: f64 = (1..=k + 1).map(|j| j as f64).product();
                if k % 2 == 0 { fact } else { -fact }
            });
            cases.push((f, linear(), lambda, oracle));
        }
        assert!(cases.len() >= 20);
        for (i, (f, phase, lambda, oracle)) in cases.iter().enumerate() {
            let v = integrate_oscillatory(f, phase, &[1.0], *lambda, 1e-10).unwrap();
            assert!(!v.low_confidence, "case {i}");
            let err = (v.value - oracle).norm();
            assert!(err <= 1e-8, "case {i}: λ={lambda} got {:?} want {oracle:?} (err {err:e})", v.value);
        }
    }

    #[test]
    fn conjugation_and_zero_frequency() {
        let f = PiecewisePowerLog::single_1d(Interval::open(0.0, 2.0).unwrap(), PowerLogTerm::new_1d(1.5, 0.0, r(1, 3), 1)).unwrap();
        let phase = PhaseModel::parse(1, &["y1*y1*y1 - y1"], None).unwrap();
        for lambda in [3.0, 250.0] {
            let p = integrate_oscillatory(&f, &phase, &[1.0], lambda, 1e-11).unwrap();
            let m = integrate_oscillatory(&f, &phase, &[1.0], -lambda, 1e-11).unwrap();
            assert!((p.value.conj() - m.value).norm() <= 1e-12);
        }
        let z = integrate_oscillatory(&f, &phase, &[1.0], 0.0, 1e-11).unwrap();
        let s = integrate(&f, 1e-11).unwrap();
        assert!((z.value.re - s.value).abs() < 1e-10 && z.value.im == 0.0);
    }

    #[test]
    fn abs_examples() {
        let f = PiecewisePowerLog::single_1d(Interval::open(0.0, 1.0).unwrap(), PowerLogTerm::new_1d(2.0, 0.0, r(1, 1), 0)).unwrap();
        assert!((integrate_abs(&f, 1e-12).unwrap().value - 1.0).abs() < 1e-12);
        let g = PiecewisePowerLog::single_1d(Interval::open(0.0, 1.0).unwrap(), PowerLogTerm::new_1d(1.0, 0.0, r(-1, 2), 0)).unwrap();
        assert!((integrate_abs(&g, 1e-10).unwrap().value - 2.0).abs() < 1e-10);
        // |y| on (-1, 1) from the signed pieces -y and y
        let h = PiecewisePowerLog::new(
            1,
            vec![
                Piece::new(Cell::interval_1d(Interval::open(-1.0, 0.0).unwrap()), vec![PowerLogTerm::new_1d(-1.0, 0.0, r(1, 1), 0)]),
                Piece::new(Cell::interval_1d(Interval::closed(0.0, 1.0).unwrap()), vec![PowerLogTerm::new_1d(1.0, 0.0, r(1, 1), 0)]),
            ],
        )
        .unwrap();
        assert!((integrate_abs(&h, 1e-12).unwrap().value - 1.0).abs() < 1e-12);
        // sign change inside a cell: 1 - 2y on (0,1)
        let k = PiecewisePowerLog::single_1d(
            Interval::open(0.0, 1.0).unwrap(),
            PowerLogTerm::new_1d(1.0, 0.0, r(0, 1), 0),
        )
        .unwrap();
        let mut pieces = k.pieces().to_vec();
        pieces[0].terms.push(PowerLogTerm::new_1d(-2.0, 0.0, r(1, 1), 0));
        let k = PiecewisePowerLog::new(1, pieces).unwrap();
        assert!((integrate_abs(&k, 1e-12).unwrap().value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_singularity_and_far_tail() {
        // ∫_0^1 |log y| dy = 1, ∫_e^∞ y^{-2}(log y)^3 dy = 16/e
        let f = PiecewisePowerLog::single_1d(Interval::open(0.0, 1.0).unwrap(), PowerLogTerm::new_1d(1.0, 0.0, r(0, 1), 1)).unwrap();
        assert!((integrate_abs(&f, 1e-10).unwrap().value - 1.0).abs() < 1e-9);
        let g = PiecewisePowerLog::single_1d(Interval::open(E, f64::INFINITY).unwrap(), PowerLogTerm::new_1d(1.0, 0.0, r(-2, 1), 3))
            .unwrap();
        let v = integrate_abs(&g, 1e-8).unwrap();
        assert!((v.value - 16.0 / E).abs() < 1e-7, "{v:?}");
    }

    #[test]
    fn stationary_point_examples() {
        let iv = Interval::closed(-1.0, 1.0).unwrap();
        assert_eq!(stationary_points(&square(), &[1.0], &iv).unwrap(), vec![0.0]);
        assert!(stationary_points(&linear(), &[1.0], &Interval::closed(0.0, 1.0).unwrap()).unwrap().is_empty());
        let cubic = PhaseModel::parse(1, &["y1*y1*y1 - 3*y1"], None).unwrap();
        let roots = stationary_points(&cubic, &[1.0], &Interval::closed(-2.0, 2.0).unwrap()).unwrap();
        assert_eq!(roots.len(), 2);
        assert!((roots[0] + 1.0).abs() < 1e-11 && (roots[1] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn two_dimensional_iterated() {
        // ∫∫_{[0,1]²} e^{iλ(y1+y2)} = ((e^{iλ}-1)/(iλ))²
        let region = crate::DomainBox::new(vec![Interval::closed(0.0, 1.0).unwrap(), Interval::closed(0.0, 1.0).unwrap()]);
        let f = PiecewisePowerLog::indicator(&region).unwrap();
        let phase = PhaseModel::parse(2, &["y1 + y2"], None).unwrap();
        let xi = [1.0];
        for lambda in [0.0, 3.0, 40.0] {
            let v = integrate_oscillatory(&f, &phase, &xi, lambda, 1e-9).unwrap();
            let one = linear_closed(0.0, 1.0, lambda);
            assert!((v.value - one * one).norm() < 1e-8, "λ={lambda}: {:?}", v.value);
        }
        // ∫∫_{(0,1)²} y1^{-1/2} y2^{1/2} = 2 · 2/3
        let t = PowerLogTerm::monomial(1.0, vec![0.0, 0.0], vec![r(-1, 2), r(1, 2)], vec![0, 0]);
        let g = PiecewisePowerLog::new(2, vec![Piece::new(Cell::new(region.axes.clone()), vec![t])]).unwrap();
        assert!((integrate_abs(&g, 1e-9).unwrap().value - 4.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = one_on(Interval::closed(0.0, 1.0).unwrap());
        assert_eq!(integrate_oscillatory(&f, &linear(), &[0.5], 1.0, 1e-8).unwrap_err(), QuadError::NotUnit(0.5));
        assert!(matches!(integrate_abs(&f, 0.0), Err(QuadError::BadTolerance(_))));
        let bad = PiecewisePowerLog::single_1d(Interval::open(0.0, 1.0).unwrap(), PowerLogTerm::new_1d(1.0, 0.0, r(-1, 1), 0)).unwrap();
        assert!(matches!(integrate_abs(&bad, 1e-8), Err(QuadError::NotIntegrable { .. })));
    }

    #[test]
    fn filon_moments_agree_across_regimes() {
        for omega in [9.99f64, 10.0] {
            let m = filon_moments(omega);
            let m0 = 2.0 * omega.sin() / omega;
            assert!((m[0].re - m0).abs() < 1e-13 && m[0].im.abs() < 1e-13);
        }
        let a = filon_moments(9.999_999);
        let b = filon_moments(10.0);
        for k in 0..FILON_NODES {
            assert!((a[k] - b[k]).norm() < 1e-5);
        }
    }
}
