//! Prepared power-log amplitudes.
//!
//! An amplitude is a finite sum over disjoint product cells of terms
//!
//! ```text
//! c · Π_i |y_i - θ_i|^{α_i} (log|y_i - θ_i|)^{β_i} · u(y)
//! ```
//!
//! with rational `α_i`, natural `β_i` and a unit `u` bounded between `1/K`
//! and `K`. Whether a term is integrable on its cell depends only on the
//! exponents `α_i` and on how each axis interval sits relative to the center.

use std::f64::consts::E;

use num_rational::Rational64;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bound, DomainBox, DomainError, Interval};
use crate::expr::{self, rational_pow, Expr, ExprError};
use crate::quad::{self, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerLogError {
    #[error("term has {got} exponents, amplitude is {dim}-dimensional")]
    Arity { got: usize, dim: usize },
    #[error("cells {0} and {1} overlap")]
    OverlappingCells(usize, usize),
    #[error("center {center} lies inside axis {axis} of cell {piece}")]
    CenterInsideCell { piece: usize, axis: usize, center: f64 },
    #[error("unit bound K must exceed 1, got {0}")]
    BadUnitBound(f64),
    #[error("unit `{unit}` violates its bound K={bound} near {point:?}: {what}")]
    UnitBoundViolated { unit: String, bound: f64, point: Vec<f64>, what: String },
    #[error("point {0:?} lies in more than one cell")]
    AmbiguousPoint(Vec<f64>),
    #[error("term {term} of cell {piece} is not integrable")]
    NotIntegrable { piece: usize, term: usize },
    #[error("axis {axis} of cell {piece} is not in {expected} form relative to its center")]
    UnsupportedCell { piece: usize, axis: usize, expected: &'static str },
    #[error("malformed rational `{0}`")]
    BadRational(String),
    #[error("interval: {0}")]
    Interval(#[from] DomainError),
    #[error("expression: {0}")]
    Expr(#[from] ExprError),
    #[error("quadrature: {0}")]
    Quad(#[from] Box<QuadError>),
    #[error("amplitude text: {0}")]
    Format(String),
}

impl From<QuadError> for PowerLogError {
    fn from(e: QuadError) -> Self {
        PowerLogError::Quad(Box::new(e))
    }
}

/// `t^α (log t)^β` for `t ≥ 0`; `t = 0` with `α < 0` gives ±∞.
pub fn power_log(t: f64, alpha: Rational64, beta: u32) -> f64 {
    let p = if t == 0.0 && alpha.is_negative() {
        f64::INFINITY
    } else {
        rational_pow(t, alpha).unwrap_or(f64::NAN)
    };
    if beta == 0 {
        p
    } else {
        p * t.ln().powi(beta as i32)
    }
}

/// A φ-unit: positive, bounded between `1/K` and `K`, with
/// `|ỹ_l ∂u/∂y_l| < K`. `expr = None` is the constant 1. Derivative terms
/// produced by [`differentiate_term`] reuse this slot for factors that are
/// not units; those carry no bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub expr: Option<Expr>,
    pub bound: Option<f64>,
}

impl Unit {
    pub fn one() -> Self {
        Unit { expr: None, bound: None }
    }

    pub fn new(expr: Expr, bound: Option<f64>) -> Self {
        Unit { expr: Some(expr), bound }
    }

    pub fn is_one(&self) -> bool {
        self.expr.is_none()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match &self.expr {
            None => 1.0,
            Some(e) => e.evaluate(y, &[]).unwrap_or(f64::NAN),
        }
    }

    /// Effective K: the declared bound, or 1 for the constant unit.
    pub fn k(&self) -> f64 {
        match (&self.expr, self.bound) {
            (None, _) => 1.0,
            (Some(_), Some(k)) => k,
            (Some(_), None) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLogTerm {
    pub coef: f64,
    pub center: Vec<f64>,
    pub alpha: Vec<Rational64>,
    pub beta: Vec<u32>,
    pub unit: Unit,
}

impl PowerLogTerm {
    /// `c·Π|y_i - θ_i|^{α_i}(log|y_i - θ_i|)^{β_i}` with constant unit.
    pub fn monomial(coef: f64, center: Vec<f64>, alpha: Vec<Rational64>, beta: Vec<u32>) -> Self {
        PowerLogTerm { coef, center, alpha, beta, unit: Unit::one() }
    }

    /// One-dimensional `c·|y - θ|^α (log|y - θ|)^β`.
    pub fn new_1d(coef: f64, center: f64, alpha: Rational64, beta: u32) -> Self {
        Self::monomial(coef, vec![center], vec![alpha], vec![beta])
    }

    pub fn with_unit(mut self, unit: Unit) -> Self {
        self.unit = unit;
        self
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut v = self.coef;
        for i in 0..self.dim() {
            v *= power_log((y[i] - self.center[i]).abs(), self.alpha[i], self.beta[i]);
        }
        v * self.unit.eval(y)
    }

    /// Evaluate when the distances `|y_i - θ_i|` are known exactly (near a
    /// center `y - θ` would lose them to rounding).
    pub fn eval_with_offsets(&self, y: &[f64], offsets: &[f64]) -> f64 {
        let mut v = self.coef;
        for i in 0..self.dim() {
            v *= power_log(offsets[i], self.alpha[i], self.beta[i]);
        }
        v * self.unit.eval(y)
    }

    /// The power-log factor along one axis only.
    pub fn axis_factor(&self, axis: usize, offset: f64) -> f64 {
        power_log(offset, self.alpha[axis], self.beta[axis])
    }

    /// Smooth through its center along `axis` (nonnegative integer power,
    /// no log).
    pub fn is_smooth_at_center(&self, axis: usize) -> bool {
        self.beta[axis] == 0 && self.alpha[axis].is_integer() && !self.alpha[axis].is_negative()
    }
}

/// Where an axis interval sits relative to its center after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisClass {
    /// `|ỹ| ⊂ (0, e^{-1})`
    NearZero,
    /// `|ỹ| ⊂ [e^{-1}, e]`
    Middle,
    /// `|ỹ| ⊂ (e, ∞)`
    Far,
    Custom,
}

/// Product cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub axes: Vec<Interval>,
}

impl Cell {
    pub fn new(axes: Vec<Interval>) -> Self {
        Cell { axes }
    }

    pub fn interval_1d(iv: Interval) -> Self {
        Cell { axes: vec![iv] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.as_box().contains(y)
    }

    pub fn as_box(&self) -> DomainBox {
        DomainBox::new(self.axes.clone())
    }

    /// Distances from `center` along `axis` as an interval `[near, far]`,
    /// together with the side (`+1` above the center, `-1` below). `None`
    /// when the center is interior.
    pub fn offset_range(&self, axis: usize, center: f64) -> Option<(f64, f64, f64)> {
        let iv = &self.axes[axis];
        if iv.lo.value >= center {
            Some((iv.lo.value - center, iv.hi.value - center, 1.0))
        } else if iv.hi.value <= center {
            Some((center - iv.hi.value, center - iv.lo.value, -1.0))
        } else {
            None
        }
    }

    pub fn axis_class(&self, axis: usize, center: f64) -> AxisClass {
        let Some((near, far, _)) = self.offset_range(axis, center) else {
            return AxisClass::Custom;
        };
        let inv_e = (-1.0f64).exp();
        if far <= inv_e && near >= 0.0 {
            AxisClass::NearZero
        } else if near >= inv_e && far <= E {
            AxisClass::Middle
        } else if near >= E {
            AxisClass::Far
        } else {
            AxisClass::Custom
        }
    }

    /// Split `axis` at distances `e^{-1}` and `e` from `center`, so each part
    /// is near-zero, middle or far.
    pub fn split_by_class(&self, axis: usize, center: f64) -> Vec<Cell> {
        let Some((_, _, side)) = self.offset_range(axis, center) else {
            return vec![self.clone()];
        };
        let cuts = [center + side * (-1.0f64).exp(), center + side * E];
        let mut parts = vec![self.axes[axis]];
        for cut in cuts {
            let mut next = Vec::new();
            for iv in parts {
                if iv.contains_interior(cut) {
                    // the cut point goes to the middle part
                    let toward_center = (cut - center).abs() <= 1.0;
                    let (l_closed, r_closed) = if (side > 0.0) == toward_center { (false, true) } else { (true, false) };
                    next.push(Interval { lo: iv.lo, hi: Bound { value: cut, closed: l_closed } });
                    next.push(Interval { lo: Bound { value: cut, closed: r_closed }, hi: iv.hi });
                } else {
                    next.push(iv);
                }
            }
            parts = next;
        }
        parts
            .into_iter()
            .map(|iv| {
                let mut axes = self.axes.clone();
                axes[axis] = iv;
                Cell { axes }
            })
            .collect()
    }
}

/// Constant sign of a term on its cell, from sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSign {
    Positive,
    Negative,
    Mixed,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub cell: Cell,
    pub terms: Vec<PowerLogTerm>,
}

impl Piece {
    pub fn new(cell: Cell, terms: Vec<PowerLogTerm>) -> Self {
        Piece { cell, terms }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(y)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePowerLog {
    dim: usize,
    pieces: Vec<Piece>,
    signs: Vec<Vec<TermSign>>,
}

/// Samples used for unit-bound and sign validation.
pub const UNIT_SAMPLES: usize = 10_000;
/// Sampled unit values must stay this far inside the declared bound.
pub const UNIT_SAFETY: f64 = 1.05;

impl PiecewisePowerLog {
    /// Validate and build. Checks arity, pairwise cell disjointness, that no
    /// term center is interior to its cell, and declared unit bounds.
    pub fn new(dim: usize, pieces: Vec<Piece>) -> Result<Self, PowerLogError> {
        for (pi, p) in pieces.iter().enumerate() {
            if p.cell.dim() != dim {
                return Err(PowerLogError::Arity { got: p.cell.dim(), dim });
            }
            for t in &p.terms {
                if t.alpha.len() != dim || t.beta.len() != dim || t.center.len() != dim {
                    return Err(PowerLogError::Arity { got: t.alpha.len(), dim });
                }
                for (axis, &c) in t.center.iter().enumerate() {
                    if p.cell.axes[axis].contains_interior(c) {
                        return Err(PowerLogError::CenterInsideCell { piece: pi, axis, center: c });
                    }
                }
                validate_unit(&p.cell, t)?;
            }
        }
        for i in 0..pieces.len() {
            for j in i + 1..pieces.len() {
                if pieces[i].cell.as_box().intersects(&pieces[j].cell.as_box()) {
                    return Err(PowerLogError::OverlappingCells(i, j));
                }
            }
        }
        let signs = pieces.iter().map(|p| p.terms.iter().map(|t| sample_sign(&p.cell, t)).collect()).collect();
        Ok(PiecewisePowerLog { dim, pieces, signs })
    }

    pub fn empty(dim: usize) -> Self {
        PiecewisePowerLog { dim, pieces: Vec::new(), signs: Vec::new() }
    }

    /// Single-term amplitude on one interval.
    pub fn single_1d(iv: Interval, term: PowerLogTerm) -> Result<Self, PowerLogError> {
        Self::new(1, vec![Piece::new(Cell::interval_1d(iv), vec![term])])
    }

    /// Indicator of a product box.
    pub fn indicator(region: &DomainBox) -> Result<Self, PowerLogError> {
        let d = region.dim();
        let t = PowerLogTerm::monomial(1.0, vec![0.0; d], vec![Rational64::zero(); d], vec![0; d]);
        // the center is irrelevant for α = 0, β = 0; move it off the cell
        let center = region.axes.iter().map(|iv| if iv.lo.is_finite() { iv.lo.value } else { iv.hi.value }).collect();
        Self::new(d, vec![Piece::new(Cell::new(region.axes.clone()), vec![PowerLogTerm { center, ..t }])])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn term_sign(&self, piece: usize, term: usize) -> TermSign {
        self.signs[piece][term]
    }

    /// Value at `y`; 0 outside all cells.
    pub fn eval(&self, y: &[f64]) -> Result<f64, PowerLogError> {
        let mut hit: Option<&Piece> = None;
        for p in &self.pieces {
            if p.cell.contains(y) {
                if hit.is_some() {
                    return Err(PowerLogError::AmbiguousPoint(y.to_vec()));
                }
                hit = Some(p);
            }
        }
        Ok(hit.map_or(0.0, |p| p.eval(y)))
    }

    /// Restriction to a box (cells intersected, empty parts dropped).
    pub fn restrict(&self, region: &DomainBox) -> PiecewisePowerLog {
        let mut pieces = Vec::new();
        let mut signs = Vec::new();
        for (p, s) in self.pieces.iter().zip(&self.signs) {
            if let Some(b) = p.cell.as_box().intersect(region) {
                pieces.push(Piece::new(Cell::new(b.axes), p.terms.clone()));
                signs.push(s.clone());
            }
        }
        PiecewisePowerLog { dim: self.dim, pieces, signs }
    }

    /// Symbolic ∂f/∂y_axis, cell by cell.
    pub fn derivative(&self, axis: usize) -> PiecewisePowerLog {
        let pieces: Vec<Piece> = self
            .pieces
            .iter()
            .map(|p| {
                let terms = p.terms.iter().flat_map(|t| differentiate_term(t, &p.cell, axis)).collect();
                Piece::new(p.cell.clone(), terms)
            })
            .collect();
        let signs = pieces.iter().map(|p| p.terms.iter().map(|t| sample_sign(&p.cell, t)).collect()).collect();
        PiecewisePowerLog { dim: self.dim, pieces, signs }
    }

    /// Multiply every coefficient by `s`.
    pub fn scaled(&self, s: f64) -> PiecewisePowerLog {
        let mut out = self.clone();
        for p in &mut out.pieces {
            for t in &mut p.terms {
                t.coef *= s;
            }
        }
        out
    }

    /// Finite cell endpoints along `axis`, sorted and deduplicated.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| [p.cell.axes[axis].lo.value, p.cell.axes[axis].hi.value])
            .filter(|x| x.is_finite())
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// All terms integrable on their cells.
    pub fn is_integrable_all(&self) -> Result<bool, PowerLogError> {
        Ok(is_integrable(self)?.iter().all(|v| v.integrable))
    }

    pub fn to_spec(&self) -> AmplitudeSpec {
        AmplitudeSpec {
            dim: self.dim,
            cells: self
                .pieces
                .iter()
                .map(|p| CellSpec {
                    axes: p.cell.axes.iter().map(IntervalSpec::from).collect(),
                    terms: p.terms.iter().map(TermSpec::from_term).collect(),
                })
                .collect(),
        }
    }

    /// Render as key-value text (TOML), exact rationals as `"p/q"`.
    pub fn to_text(&self) -> String {
        toml::to_string(&self.to_spec()).expect("amplitude spec serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, PowerLogError> {
        let spec: AmplitudeSpec = toml::from_str(text).map_err(|e| PowerLogError::Format(e.to_string()))?;
        spec.build(&[])
    }
}

fn sample_sign(cell: &Cell, t: &PowerLogTerm) -> TermSign {
    let (mut pos, mut neg) = (false, false);
    for y in cell.as_box().halton_points(512) {
        let v = t.eval(&y);
        if v > 0.0 {
            pos = true;
        } else if v < 0.0 {
            neg = true;
        }
    }
    match (pos, neg) {
        (true, true) => TermSign::Mixed,
        (true, false) => TermSign::Positive,
        (false, true) => TermSign::Negative,
        (false, false) => TermSign::Zero,
    }
}

/// Sampled check of `K^{-1} < u < K` and `|ỹ_l ∂u/∂y_l| < K` with the
/// [`UNIT_SAFETY`] margin.
fn validate_unit(cell: &Cell, t: &PowerLogTerm) -> Result<(), PowerLogError> {
    let (Some(e), Some(k)) = (&t.unit.expr, t.unit.bound) else {
        return Ok(());
    };
    if k <= 1.0 {
        return Err(PowerLogError::BadUnitBound(k));
    }
    let report = unit_sample_report(cell, t, UNIT_SAMPLES);
    let fail = |point: Vec<f64>, what: String| PowerLogError::UnitBoundViolated {
        unit: e.to_string(),
        bound: k,
        point,
        what,
    };
    if !(report.min_value * k >= UNIT_SAFETY) {
        return Err(fail(report.argmin, format!("min u = {:e}", report.min_value)));
    }
    if !(report.max_value * UNIT_SAFETY <= k) {
        return Err(fail(report.argmax, format!("max u = {:e}", report.max_value)));
    }
    if !(report.max_log_derivative * UNIT_SAFETY <= k) {
        return Err(fail(report.argmax_log_derivative, format!("max |y du/dy| = {:e}", report.max_log_derivative)));
    }
    Ok(())
}

/// Sampled extremes of a unit and of its logarithmic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSampleReport {
    pub min_value: f64,
    pub max_value: f64,
    pub max_log_derivative: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    pub argmax_log_derivative: Vec<f64>,
}

pub fn unit_sample_report(cell: &Cell, t: &PowerLogTerm, samples: usize) -> UnitSampleReport {
    let derivs: Vec<Option<Expr>> =
        (0..cell.dim()).map(|l| t.unit.expr.as_ref().map(|e| e.differentiate(l))).collect();
    let mut r = UnitSampleReport {
        min_value: f64::INFINITY,
        max_value: f64::NEG_INFINITY,
        max_log_derivative: 0.0,
        argmin: vec![],
        argmax: vec![],
        argmax_log_derivative: vec![],
    };
    for y in cell.as_box().halton_points(samples) {
        let u = t.unit.eval(&y);
        if !(u >= r.min_value) {
            r.min_value = u;
            r.argmin = y.clone();
        }
        if !(u <= r.max_value) {
            r.max_value = u;
            r.argmax = y.clone();
        }
        for (l, d) in derivs.iter().enumerate() {
            if let Some(d) = d {
                let g = ((y[l] - t.center[l]) * d.evaluate(&y, &[]).unwrap_or(f64::NAN)).abs();
                if !(g <= r.max_log_derivative) {
                    r.max_log_derivative = g;
                    r.argmax_log_derivative = y.clone();
                }
            }
        }
    }
    r
}

/// Closed-form ∂/∂y_axis of one term on `cell`:
/// `σα·ỹ^{α-e}(log)^β u + σβ·ỹ^{α-e}(log)^{β-e} u + ỹ^α(log)^β ∂u`, where
/// `σ` is the side of the cell relative to the center. Zero parts are
/// dropped.
pub fn differentiate_term(t: &PowerLogTerm, cell: &Cell, axis: usize) -> Vec<PowerLogTerm> {
    let side = cell.offset_range(axis, t.center[axis]).map_or(1.0, |r| r.2);
    let mut out = Vec::new();
    let a = t.alpha[axis];
    let b = t.beta[axis];
    let lowered = {
        let mut al = t.alpha.clone();
        al[axis] = a - Rational64::one();
        al
    };
    if !a.is_zero() {
        out.push(PowerLogTerm {
            coef: t.coef * side * a.to_f64().unwrap_or(f64::NAN),
            alpha: lowered.clone(),
            ..t.clone()
        });
    }
    if b > 0 {
        let mut be = t.beta.clone();
        be[axis] = b - 1;
        out.push(PowerLogTerm { coef: t.coef * side * b as f64, alpha: lowered, beta: be, ..t.clone() });
    }
    if let Some(u) = &t.unit.expr {
        let du = u.differentiate(axis);
        if !du.is_const(0.0) {
            out.push(PowerLogTerm { unit: Unit::new(du, None), ..t.clone() });
        }
    }
    out
}

/// Per-axis placement used by the integrability rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisPlacement {
    /// Bounded and away from the center: always integrable.
    Separated,
    /// Bounded with the center as an endpoint: needs `α > -1`.
    AdjacentBounded,
    /// Unbounded, away from the center: needs `α < -1`.
    Unbounded,
    /// Unbounded with the center as an endpoint: never integrable.
    AdjacentUnbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermVerdict {
    pub piece: usize,
    pub term: usize,
    pub integrable: bool,
    pub axes: Vec<(AxisPlacement, bool)>,
}

pub fn axis_placement(iv: &Interval, center: f64) -> Option<AxisPlacement> {
    if iv.contains_interior(center) {
        return None;
    }
    let adjacent = iv.lo.value == center || iv.hi.value == center;
    Some(match (iv.is_bounded(), adjacent) {
        (true, false) => AxisPlacement::Separated,
        (true, true) => AxisPlacement::AdjacentBounded,
        (false, false) => AxisPlacement::Unbounded,
        (false, true) => AxisPlacement::AdjacentUnbounded,
    })
}

/// Integrability of a one-axis factor `|ỹ|^α (log|ỹ|)^β`; `β` never matters.
pub fn axis_integrable(placement: AxisPlacement, alpha: Rational64) -> bool {
    let minus_one = -Rational64::one();
    match placement {
        AxisPlacement::Separated => true,
        AxisPlacement::AdjacentBounded => alpha > minus_one,
        AxisPlacement::Unbounded => alpha < minus_one,
        AxisPlacement::AdjacentUnbounded => false,
    }
}

/// Verdict per cell per term: the conjunction over axes of
/// [`axis_integrable`].
pub fn is_integrable(f: &PiecewisePowerLog) -> Result<Vec<TermVerdict>, PowerLogError> {
    let mut out = Vec::new();
    for (pi, p) in f.pieces.iter().enumerate() {
        for (ti, t) in p.terms.iter().enumerate() {
            let mut axes = Vec::new();
            for (axis, iv) in p.cell.axes.iter().enumerate() {
                let placement = axis_placement(iv, t.center[axis]).ok_or(PowerLogError::UnsupportedCell {
                    piece: pi,
                    axis,
                    expected: "product-with-center",
                })?;
                // a term that is smooth through its center is fine on any
                // bounded interval
                let ok = if t.is_smooth_at_center(axis) && iv.is_bounded() {
                    true
                } else {
                    axis_integrable(placement, t.alpha[axis])
                };
                axes.push((placement, ok));
            }
            let integrable = axes.iter().all(|(_, ok)| *ok);
            out.push(TermVerdict { piece: pi, term: ti, integrable, axes });
        }
    }
    Ok(out)
}

/// `∫_region |f|` with the singularity-aware quadrature of [`quad`].
pub fn integral_abs(f: &PiecewisePowerLog, region: &DomainBox, tol: f64) -> Result<quad::QuadValue, PowerLogError> {
    let r = f.restrict(region);
    for v in is_integrable(&r)? {
        if !v.integrable {
            return Err(PowerLogError::NotIntegrable { piece: v.piece, term: v.term });
        }
    }
    Ok(quad::integrate_abs(&r, tol)?)
}

/// Move a term's center to 0 and flip axes so the cell lies in the
/// positive orthant. Returns the new cell and term, in coordinates
/// `ỹ_i = σ_i (y_i - θ_i)`.
pub fn normalize_term(cell: &Cell, t: &PowerLogTerm) -> Option<(Cell, PowerLogTerm)> {
    let mut axes = Vec::new();
    let mut unit = t.unit.expr.clone();
    for (axis, iv) in cell.axes.iter().enumerate() {
        let (_, _, side) = cell.offset_range(axis, t.center[axis])?;
        let theta = t.center[axis];
        let new_iv = if side > 0.0 {
            Interval { lo: Bound { value: iv.lo.value - theta, ..iv.lo }, hi: Bound { value: iv.hi.value - theta, ..iv.hi } }
        } else {
            Interval { lo: Bound { value: theta - iv.hi.value, ..iv.hi }, hi: Bound { value: theta - iv.lo.value, ..iv.lo } }
        };
        axes.push(new_iv);
        if let Some(u) = unit.as_mut() {
            // y = θ + σ ỹ
            let repl = Expr::Const(theta) + Expr::Const(side) * Expr::Var(axis);
            *u = u.substitute_var(axis, &repl).simplify();
        }
    }
    let term = PowerLogTerm {
        center: vec![0.0; t.dim()],
        unit: Unit { expr: unit, bound: t.unit.bound },
        ..t.clone()
    };
    Some((Cell::new(axes), term))
}

/// Rewrite a term on a middle cell (`|ỹ_axis| ∈ [e^{-1}, e]`) with
/// `β_axis > 0` into two terms with `β_axis = 0`:
/// `(log)^β u = c - (c - (log)^β u)` where `c = 2·sup|(log)^β u|` from
/// samples. Both new factors are units on the cell.
pub fn eliminate_middle_log(cell: &Cell, t: &PowerLogTerm, axis: usize) -> Result<Vec<PowerLogTerm>, PowerLogError> {
    if cell.axis_class(axis, t.center[axis]) != AxisClass::Middle {
        return Err(PowerLogError::UnsupportedCell { piece: 0, axis, expected: "middle-class" });
    }
    let b = t.beta[axis];
    if b == 0 {
        return Ok(vec![t.clone()]);
    }
    let dist = Expr::Var(axis) - Expr::Const(t.center[axis]);
    let log_pow = dist.abs().log().pow(Rational64::from_integer(b as i64));
    let factor = match &t.unit.expr {
        Some(u) => log_pow * u.clone(),
        None => log_pow,
    };
    let mut sup: f64 = 0.0;
    for y in cell.as_box().halton_points(UNIT_SAMPLES) {
        sup = sup.max(factor.evaluate(&y, &[]).unwrap_or(0.0).abs());
    }
    let c = 2.0 * sup;
    let mut beta = t.beta.clone();
    beta[axis] = 0;
    // c - (log)^β u lies in [c/2, 3c/2]
    let rest = (Expr::Const(c) - factor).simplify();
    let k_rest = 3.0 * UNIT_SAFETY;
    let constant = PowerLogTerm { coef: t.coef * c, beta: beta.clone(), unit: Unit::one(), ..t.clone() };
    let remainder = PowerLogTerm {
        coef: -t.coef,
        beta,
        unit: Unit::new(rest, Some(k_rest.max(c * 1.5 * UNIT_SAFETY).max(2.0 * UNIT_SAFETY / c))),
        ..t.clone()
    };
    Ok(vec![constant, remainder])
}

/// Limit of a 1-D amplitude as `y → at` from above (`side > 0`) or below.
/// `at` may be infinite. Computed from the leading exponents of each term:
/// `|ỹ|^α (log|ỹ|)^β → 0` when `α > 0` near the center (or `α < 0` at
/// infinity), `→ c·u` when `α = β = 0`, and diverges otherwise. `None`
/// means divergent. Points outside every cell give 0.
pub fn one_sided_limit(f: &PiecewisePowerLog, at: f64, side: f64) -> Option<f64> {
    assert_eq!(f.dim(), 1, "one-sided limits are 1-D");
    let piece = f.pieces().iter().find(|p| {
        let iv = &p.cell.axes[0];
        if side > 0.0 {
            iv.lo.value <= at && at < iv.hi.value
        } else {
            iv.lo.value < at && at <= iv.hi.value
        }
    });
    let Some(piece) = piece else { return Some(0.0) };
    let mut acc = 0.0;
    for t in &piece.terms {
        let dist = (at - t.center[0]).abs();
        let a = t.alpha[0];
        let b = t.beta[0];
        let v = if at.is_infinite() {
            if a.is_negative() {
                0.0
            } else if a.is_zero() && b == 0 {
                t.coef * t.unit.eval(&[at.signum() * 1e12])
            } else {
                return None;
            }
        } else if dist == 0.0 {
            if a.is_positive() {
                0.0
            } else if a.is_zero() && b == 0 {
                let probe = at + side * 1e-12 * at.abs().max(1.0);
                t.coef * t.unit.eval(&[probe])
            } else {
                return None;
            }
        } else {
            t.eval(&[at])
        };
        acc += v;
    }
    Some(acc)
}

// ---------------------------------------------------------------------------
// key-value text format

/// A real number or an expression in the parameters `x1, x2, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expr(String),
}

impl Scalar {
    pub fn value(&self, params: &[f64]) -> Result<f64, ExprError> {
        match self {
            Scalar::Number(v) => Ok(*v),
            Scalar::Expr(s) => expr::parse(s)?.evaluate(&[], params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub lo_closed: bool,
    #[serde(default)]
    pub hi_closed: bool,
}

impl From<&Interval> for IntervalSpec {
    fn from(iv: &Interval) -> Self {
        IntervalSpec { lo: iv.lo.value, hi: iv.hi.value, lo_closed: iv.lo.closed, hi_closed: iv.hi.closed }
    }
}

impl IntervalSpec {
    pub fn to_interval(&self) -> Result<Interval, DomainError> {
        Interval::new(Bound { value: self.lo, closed: self.lo_closed }, Bound { value: self.hi, closed: self.hi_closed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub coef: Scalar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Exact rationals, `"p/q"` or `"p"`.
    pub alpha: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_bound: Option<f64>,
}

impl TermSpec {
    fn from_term(t: &PowerLogTerm) -> Self {
        TermSpec {
            coef: Scalar::Number(t.coef),
            center: Some(t.center.clone()),
            alpha: t.alpha.iter().map(render_rational).collect(),
            beta: Some(t.beta.clone()),
            unit: t.unit.expr.as_ref().map(|e| e.to_string()),
            unit_bound: t.unit.bound,
        }
    }

    pub fn build(&self, dim: usize, params: &[f64]) -> Result<PowerLogTerm, PowerLogError> {
        let alpha = self.alpha.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>, _>>()?;
        if alpha.len() != dim {
            return Err(PowerLogError::Arity { got: alpha.len(), dim });
        }
        let unit = match &self.unit {
            None => Unit::one(),
            Some(s) => Unit::new(expr::parse(s)?.substitute_params(params), self.unit_bound),
        };
        Ok(PowerLogTerm {
            coef: self.coef.value(params)?,
            center: self.center.clone().unwrap_or_else(|| vec![0.0; dim]),
            alpha,
            beta: self.beta.clone().unwrap_or_else(|| vec![0; dim]),
            unit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub axes: Vec<IntervalSpec>,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpec {
    pub dim: usize,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
}

impl AmplitudeSpec {
    /// Build for one parameter value `x` (coefficients and units may use
    /// `x1, x2, …`).
    pub fn build(&self, params: &[f64]) -> Result<PiecewisePowerLog, PowerLogError> {
        let mut pieces = Vec::new();
        for c in &self.cells {
            let axes = c.axes.iter().map(IntervalSpec::to_interval).collect::<Result<Vec<_>, _>>()?;
            let terms = c.terms.iter().map(|t| t.build(self.dim, params)).collect::<Result<Vec<_>, _>>()?;
            pieces.push(Piece::new(Cell::new(axes), terms));
        }
        PiecewisePowerLog::new(self.dim, pieces)
    }
}

pub fn render_rational(r: &Rational64) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn parse_rational(s: &str) -> Result<Rational64, PowerLogError> {
    let bad = || PowerLogError::BadRational(s.to_string());
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: i64 = n.parse().map_err(|_| bad())?;
    let d: i64 = d.parse().map_err(|_| bad())?;
    if d == 0 {
        return Err(bad());
    }
    Ok(Rational64::new(n, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64, q: i64) -> Rational64 {
        Rational64::new(p, q)
    }

    fn open(lo: f64, hi: f64) -> Interval {
        Interval::open(lo, hi).unwrap()
    }

    #[test]
    fn eval_examples() {
        let f = PiecewisePowerLog::single_1d(open(0.0, 10.0), PowerLogTerm::new_1d(2.0, 0.0, r(1, 2), 1)).unwrap();
        assert_eq!(f.eval(&[1.0]).unwrap(), 0.0);
        let v = f.eval(&[E]).unwrap();
        assert!((v - 2.0 * E.sqrt()).abs() < 1e-14);
        assert!((v - 3.29744).abs() < 1e-5);
        assert_eq!(f.eval(&[11.0]).unwrap(), 0.0);
        assert_eq!(f.eval(&[-1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_overlap_and_interior_center() {
        let t = PowerLogTerm::new_1d(1.0, 0.0, r(0, 1), 0);
        let a = Piece::new(Cell::interval_1d(Interval::closed(0.0, 1.0).unwrap()), vec![t.clone()]);
        let b = Piece::new(Cell::interval_1d(Interval::closed(1.0, 2.0).unwrap()), vec![t.clone()]);
        assert_eq!(PiecewisePowerLog::new(1, vec![a.clone(), b]).unwrap_err(), PowerLogError::OverlappingCells(0, 1));
        let c = Piece::new(Cell::interval_1d(open(1.0, 2.0)), vec![t.clone()]);
        assert!(PiecewisePowerLog::new(1, vec![a, c]).is_ok());
        let inside = Piece::new(Cell::interval_1d(open(-1.0, 1.0)), vec![t]);
        assert!(matches!(PiecewisePowerLog::new(1, vec![inside]), Err(PowerLogError::CenterInsideCell { .. })));
    }

    #[test]
    fn derivative_examples() {
        let cell = Cell::interval_1d(open(0.0, 5.0));
        let d = differentiate_term(&PowerLogTerm::new_1d(1.0, 0.0, r(2, 1), 0), &cell, 0);
        assert_eq!(d, vec![PowerLogTerm::new_1d(2.0, 0.0, r(1, 1), 0)]);

        let d = differentiate_term(&PowerLogTerm::new_1d(1.0, 0.0, r(1, 2), 1), &cell, 0);
        assert_eq!(d, vec![PowerLogTerm::new_1d(0.5, 0.0, r(-1, 2), 1), PowerLogTerm::new_1d(1.0, 0.0, r(-1, 2), 0)]);
        let y: f64 = 2.0;
        let sum: f64 = d.iter().map(|t| t.eval(&[y])).sum();
        let h = 1e-5;
        let g = |y: f64| y.sqrt() * y.ln();
        assert!((sum - (g(y + h) - g(y - h)) / (2.0 * h)).abs() < 1e-8);

        let d = differentiate_term(&PowerLogTerm::new_1d(1.0, 0.0, r(-1, 1), 0), &cell, 0);
        assert_eq!(d, vec![PowerLogTerm::new_1d(-1.0, 0.0, r(-2, 1), 0)]);
    }

    #[test]
    fn derivative_flips_sign_below_center() {
        // |y - 1| on (0, 1) is 1 - y
        let cell = Cell::interval_1d(open(0.0, 1.0));
        let d = differentiate_term(&PowerLogTerm::new_1d(1.0, 1.0, r(1, 1), 0), &cell, 0);
        assert_eq!(d[0].eval(&[0.5]), -1.0);
    }

    #[test]
    fn integrability_examples() {
        let verdict = |iv: Interval, a: Rational64, b: u32| {
            let f = PiecewisePowerLog::single_1d(iv, PowerLogTerm::new_1d(1.0, 0.0, a, b)).unwrap();
            is_integrable(&f).unwrap()[0].integrable
        };
        assert!(verdict(open(0.0, 1.0), r(-1, 2), 0));
        for b in 0..4 {
            assert!(!verdict(open(0.0, 1.0), r(-1, 1), b));
            assert!(!verdict(open(E, f64::INFINITY), r(-1, 1), b));
        }
        assert!(verdict(open(E, f64::INFINITY), r(-2, 1), 3));
        assert!(!verdict(open(0.0, f64::INFINITY), r(-2, 1), 0));
        assert!(verdict(open(1.0, 2.0), r(-7, 1), 2));
    }

    #[test]
    fn integral_abs_examples() {
        let f = PiecewisePowerLog::single_1d(open(0.0, 1.0), PowerLogTerm::new_1d(1.0, 0.0, r(-1, 2), 0)).unwrap();
        let region = DomainBox::new(vec![open(f64::NEG_INFINITY, f64::INFINITY)]);
        let v = integral_abs(&f, &region, 1e-11).unwrap();
        assert!((v.value - 2.0).abs() < 1e-9, "{v:?}");

        let g = PiecewisePowerLog::new(
            1,
            vec![
                Piece::new(Cell::interval_1d(open(0.0, 1.0)), vec![PowerLogTerm::new_1d(1.0, 0.0, r(-1, 2), 0)]),
                Piece::new(
                    Cell::interval_1d(open(1.0, f64::INFINITY)),
                    vec![PowerLogTerm::new_1d(1.0, 0.0, r(-2, 1), 0)],
                ),
            ],
        )
        .unwrap();
        let v = integral_abs(&g, &region, 1e-11).unwrap();
        assert!((v.value - 3.0).abs() < 1e-9, "{v:?}");

        assert_eq!(integral_abs(&PiecewisePowerLog::empty(1), &region, 1e-10).unwrap().value, 0.0);

        let bad = PiecewisePowerLog::single_1d(open(0.0, 1.0), PowerLogTerm::new_1d(1.0, 0.0, r(-1, 1), 0)).unwrap();
        assert!(matches!(integral_abs(&bad, &region, 1e-8), Err(PowerLogError::NotIntegrable { .. })));
    }

    #[test]
    fn unit_bounds_are_checked() {
        let u = expr::parse("1 + y1*y1").unwrap();
        let t = PowerLogTerm::new_1d(1.0, 0.0, r(0, 1), 0).with_unit(Unit::new(u.clone(), Some(3.0)));
        assert!(PiecewisePowerLog::single_1d(open(0.0, 1.0), t).is_ok());
        let t = PowerLogTerm::new_1d(1.0, 0.0, r(0, 1), 0).with_unit(Unit::new(u, Some(1.5)));
        assert!(matches!(
            PiecewisePowerLog::single_1d(open(0.0, 1.0), t),
            Err(PowerLogError::UnitBoundViolated { .. })
        ));
    }

    #[test]
    fn class_split_and_normalization() {
        let cell = Cell::interval_1d(open(0.0, 10.0));
        let parts = cell.split_by_class(0, 0.0);
        let classes: Vec<_> = parts.iter().map(|c| c.axis_class(0, 0.0)).collect();
        assert_eq!(classes, vec![AxisClass::NearZero, AxisClass::Middle, AxisClass::Far]);
        assert!(parts[1].axes[0].lo.closed && parts[1].axes[0].hi.closed);

        let below = Cell::interval_1d(open(-3.0, 1.0));
        let t = PowerLogTerm::new_1d(1.0, 1.0, r(1, 2), 0).with_unit(Unit::new(expr::parse("2 + y1").unwrap(), None));
        let (nc, nt) = normalize_term(&below, &t).unwrap();
        assert_eq!((nc.axes[0].lo.value, nc.axes[0].hi.value), (0.0, 4.0));
        // same value at corresponding points: y = -1 ↔ ỹ = 2
        assert!((nt.eval(&[2.0]) - t.eval(&[-1.0])).abs() < 1e-15);
    }

    #[test]
    fn middle_log_elimination_preserves_values() {
        let cell = Cell::interval_1d(Interval::closed((-1.0f64).exp(), E).unwrap());
        let t = PowerLogTerm::new_1d(1.5, 0.0, r(1, 2), 3);
        let parts = eliminate_middle_log(&cell, &t, 0).unwrap();
        assert!(parts.iter().all(|p| p.beta[0] == 0));
        for y in [0.4, 1.0, 2.0, 2.7] {
            let sum: f64 = parts.iter().map(|p| p.eval(&[y])).sum();
            assert!((sum - t.eval(&[y])).abs() < 1e-12);
        }
        let f = PiecewisePowerLog::new(1, vec![Piece::new(cell, parts)]);
        assert!(f.is_ok(), "{f:?}");
    }

    #[test]
    fn text_round_trip() {
        let text = r#"
dim = 1

[[cells]]
axes = [{ lo = 0.0, hi = 1.0 }]
terms = [{ coef = "2*x1", alpha = ["-1/2"], beta = [1] }]

[[cells]]
axes = [{ lo = 1.0, hi = inf, lo_closed = true }]
terms = [{ coef = 1.0, alpha = ["-2"], unit = "1 + 1/(y1*y1)", unit_bound = 3.0 }]
"#;
        let spec: AmplitudeSpec = toml::from_str(text).unwrap();
        let f = spec.build(&[1.5]).unwrap();
        assert_eq!(f.pieces()[0].terms[0].coef, 3.0);
        assert_eq!(f.pieces()[0].terms[0].alpha[0], r(-1, 2));
        let back = PiecewisePowerLog::from_text(&f.to_text()).unwrap();
        assert_eq!(back, f);
        assert!(parse_rational("1/0").is_err());
    }
}
