//! Numerical versions of the objects in the decay proof: the minorant `ψ`,
//! the truncation family `E_λ` along the last axis, the split `f = g·h`,
//! and the bounds the proof places on each factor.

use num_rational::Rational64;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainBox, Interval};
use crate::expr::Expr;
use crate::powerlog::{self, AxisClass, Cell, Piece, PiecewisePowerLog, PowerLogError, PowerLogTerm, Unit};
use crate::quad::{self, QuadError};
use crate::stats;

/// Sample count for sups and the `ψ` minorization.
pub const SUP_SAMPLES: usize = 4096;
/// Slack on the fitted growth exponent of the `h` bounds.
pub const GROWTH_SLACK: f64 = 0.02;
/// Slices `y_{<m}` used for 2-D terms.
const SLICES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProofkitError {
    #[error("ψ needs t > 0, got {0}")]
    NonPositive(f64),
    #[error("truncation exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error("exponent p must be positive, got {0}")]
    BadP(f64),
    #[error("term and cell dimensions differ ({term} vs {cell})")]
    Dimension { term: usize, cell: usize },
    #[error("only 1-D and 2-D cells are supported, got {0}")]
    UnsupportedDim(usize),
    #[error("center lies inside axis {0} of the cell")]
    CenterInside(usize),
    #[error("term is not integrable on the cell")]
    NotIntegrable,
    #[error("unit has no declared bound K")]
    UnboundedUnit,
    #[error(transparent)]
    Amplitude(#[from] PowerLogError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// `ψ(t) = t^α` for `α ≠ -1`; for `α = -1`, `t^{-1/2}` on `t ≤ 1` and
/// `t^{-2}` above.
pub fn psi(t: f64, alpha: Rational64) -> Result<f64, ProofkitError> {
    if !(t > 0.0) {
        return Err(ProofkitError::NonPositive(t));
    }
    let minus_one = -Rational64::one();
    Ok(if alpha != minus_one {
        powerlog::power_log(t, alpha, 0)
    } else if t <= 1.0 {
        t.powf(-0.5)
    } else {
        t.powi(-2)
    })
}

fn antiderivative(t: f64, a: f64) -> f64 {
    if a == -1.0 {
        t.ln()
    } else {
        t.powf(a + 1.0) / (a + 1.0)
    }
}

/// `∫_near^far ψ`, possibly `+∞`.
pub fn psi_integral(near: f64, far: f64, alpha: Rational64) -> f64 {
    if !(far > near) {
        return 0.0;
    }
    let a = alpha.to_f64().unwrap_or(f64::NAN);
    let plain = |lo: f64, hi: f64, a: f64| -> f64 {
        if lo == 0.0 && a <= -1.0 {
            return f64::INFINITY;
        }
        if hi.is_infinite() {
            return if a < -1.0 { -antiderivative(lo, a) } else { f64::INFINITY };
        }
        antiderivative(hi, a) - if lo == 0.0 { 0.0 } else { antiderivative(lo, a) }
    };
    if alpha != -Rational64::one() {
        return plain(near, far, a);
    }
    let low = if near < 1.0 { plain(near, far.min(1.0), -0.5) } else { 0.0 };
    let high = if far > 1.0 { plain(near.max(1.0), far, -2.0) } else { 0.0 };
    low + high
}

/// Defaults `p = 1/(4N)` and `r = p / (2(|α_m| + 2))`. This `r` keeps both
/// case exponents `r|α_m|` and `r(|α_m - 1| + 1)` at most `p/2`, leaving
/// room for the log factors.
pub fn default_parameters(order: u32, alpha_m: Rational64) -> (Rational64, Rational64) {
    let p = Rational64::new(1, 4 * order.max(1) as i64);
    let r = p / (Rational64::from_integer(2) * (alpha_m.abs() + Rational64::from_integer(2)));
    (p, r)
}

/// `f = g(y_{<m}) · h(y)`: `g` carries the coefficient and the first `m-1`
/// axes, `h` the last axis and the unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSplit {
    pub g: PowerLogTerm,
    pub h: PowerLogTerm,
}

impl FactorSplit {
    pub fn new(t: &PowerLogTerm) -> Self {
        let m = t.dim();
        let g = PowerLogTerm::monomial(t.coef, t.center[..m - 1].to_vec(), t.alpha[..m - 1].to_vec(), t.beta[..m - 1].to_vec());
        let mut alpha = vec![Rational64::zero(); m];
        let mut beta = vec![0; m];
        alpha[m - 1] = t.alpha[m - 1];
        beta[m - 1] = t.beta[m - 1];
        let h = PowerLogTerm { coef: 1.0, center: t.center.clone(), alpha, beta, unit: t.unit.clone() };
        FactorSplit { g, h }
    }

    pub fn eval(&self, y: &[f64]) -> (f64, f64) {
        (self.g.eval(&y[..y.len() - 1]), self.h.eval(y))
    }

    /// Largest relative gap between `g·h` and the term over Halton points.
    pub fn max_mismatch(&self, t: &PowerLogTerm, cell: &Cell, samples: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for y in cell.as_box().halton_points(samples) {
            let (g, h) = self.eval(&y);
            let want = t.eval(&y);
            if want.is_finite() {
                worst = worst.max((g * h - want).abs() / want.abs().max(1e-300));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRegion {
    pub lambda: f64,
    /// Interval of `y_m`, in the original coordinates.
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationFamily {
    pub r: Rational64,
    pub axis: usize,
    pub center: f64,
    /// `+1` when the cell lies above the center along the last axis.
    pub side: f64,
    pub k: f64,
    /// Cell extent as distances from the center.
    pub near: f64,
    pub far: f64,
    pub psi_integral: f64,
    pub regions: Vec<TruncationRegion>,
    /// Grows with λ; checked on consecutive grid values.
    pub nested: bool,
}

impl TruncationFamily {
    /// The cell with its last axis cut to region `i`, or `None` when empty.
    pub fn region_box(&self, cell: &Cell, i: usize) -> Option<DomainBox> {
        let reg = &self.regions[i];
        if reg.empty {
            return None;
        }
        let mut axes = cell.axes.clone();
        axes[self.axis] = Interval::open(reg.lo, reg.hi).ok()?;
        Some(DomainBox::new(axes))
    }

    /// Distances from the center covered by region `i`.
    fn offsets(&self, i: usize) -> Option<(f64, f64)> {
        let reg = &self.regions[i];
        if reg.empty {
            return None;
        }
        Some(if self.side > 0.0 { (reg.lo - self.center, reg.hi - self.center) } else { (self.center - reg.hi, self.center - reg.lo) })
    }
}

fn check_term(t: &PowerLogTerm, cell: &Cell) -> Result<(f64, f64, f64), ProofkitError> {
    let m = cell.dim();
    if t.dim() != m {
        return Err(ProofkitError::Dimension { term: t.dim(), cell: m });
    }
    if !(1..=2).contains(&m) {
        return Err(ProofkitError::UnsupportedDim(m));
    }
    for (axis, iv) in cell.axes.iter().enumerate() {
        let placement = powerlog::axis_placement(iv, t.center[axis]).ok_or(ProofkitError::CenterInside(axis))?;
        let ok = (t.is_smooth_at_center(axis) && iv.is_bounded()) || powerlog::axis_integrable(placement, t.alpha[axis]);
        if !ok {
            return Err(ProofkitError::NotIntegrable);
        }
    }
    cell.offset_range(m - 1, t.center[m - 1]).ok_or(ProofkitError::CenterInside(m - 1))
}

/// `E_λ = {λ^{-r} < |ỹ_m| < λ^r, λ^{-r} < K^{-1}∫ψ}` within the cell.
/// The fiber integral does not depend on `y_{<m}` for product cells, so
/// every region is the full cell in the other axes.
pub fn build_truncation(t: &PowerLogTerm, cell: &Cell, r: Rational64, lambdas: &[f64]) -> Result<TruncationFamily, ProofkitError> {
    let rf = r.to_f64().unwrap_or(f64::NAN);
    if !(rf > 0.0) {
        return Err(ProofkitError::BadExponent(rf));
    }
    let (near, far, side) = check_term(t, cell)?;
    let axis = cell.dim() - 1;
    let k = t.unit.k();
    if !k.is_finite() {
        return Err(ProofkitError::UnboundedUnit);
    }
    let alpha_m = t.alpha[axis];
    let psi_int = psi_integral(near, far, alpha_m);
    let center = t.center[axis];
    let regions: Vec<TruncationRegion> = lambdas
        .iter()
        .map(|&lambda| {
            let lo_t = near.max(lambda.powf(-rf));
            let hi_t = far.min(lambda.powf(rf));
            let mass_ok = lambda.powf(-rf) < psi_int / k;
            let empty = !(lambda > 1.0) || !mass_ok || !(lo_t < hi_t);
            let (lo, hi) = if side > 0.0 { (center + lo_t, center + hi_t) } else { (center - hi_t, center - lo_t) };
            TruncationRegion { lambda, lo, hi, empty }
        })
        .collect();
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| regions[a].lambda.total_cmp(&regions[b].lambda));
    let nested = order.windows(2).all(|w| {
        let (a, b) = (&regions[w[0]], &regions[w[1]]);
        a.empty || (!b.empty && b.lo <= a.lo && a.hi <= b.hi)
    });
    Ok(TruncationFamily { r, axis, center, side, k, near, far, psi_integral: psi_int, regions, nested })
}

/// Log-spaced distances in `[lo, hi]`, with `lo = 0` replaced by a tiny
/// fraction of `hi` and `hi = ∞` capped.
fn offset_samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let hi = if hi.is_finite() { hi } else { lo.max(1.0) * 1e6 };
    let lo = if lo > 0.0 { lo } else { hi * 1e-12 };
    stats::log_grid(lo, hi, n)
}

fn slice_points(cell: &Cell) -> Vec<f64> {
    if cell.dim() == 1 {
        return vec![];
    }
    (1..=SLICES).map(|k| cell.axes[0].from_unit(domain_unit(k))).collect()
}

fn domain_unit(k: usize) -> f64 {
    crate::domain::radical_inverse(k as u64, 2)
}

/// The last-axis factor at fixed `y_{<m}` as a 1-D term.
fn h_slice(h: &PowerLogTerm, y_lt: Option<f64>) -> PowerLogTerm {
    let m = h.dim();
    let axis = m - 1;
    let unit = match (&h.unit.expr, y_lt) {
        (Some(u), Some(y0)) => Unit { expr: Some(u.substitute_var(0, &Expr::Const(y0)).substitute_var(1, &Expr::Var(0)).simplify()), bound: h.unit.bound },
        _ => h.unit.clone(),
    };
    PowerLogTerm::new_1d(1.0, h.center[axis], h.alpha[axis], h.beta[axis]).with_unit(unit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HBoundRow {
    pub lambda: f64,
    pub sup_h: f64,
    pub int_abs_dh: f64,
    pub lhs: f64,
    /// `lhs / λ^p`.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HBoundReport {
    pub p: f64,
    pub rows: Vec<HBoundRow>,
    /// Smallest `c` with `lhs ≤ c·λ^p` on the grid.
    pub c_min: f64,
    /// Least-squares slope of `log lhs` against `log λ`.
    pub growth: f64,
    pub pass: bool,
}

/// `sup |h| + ∫|∂h/∂y_m|` over each region, maximised over slices
/// `y_{<m}` for 2-D cells.
pub fn verify_h_bounds(t: &PowerLogTerm, cell: &Cell, family: &TruncationFamily, p: f64, tol: f64) -> Result<HBoundReport, ProofkitError> {
    if !(p > 0.0) {
        return Err(ProofkitError::BadP(p));
    }
    check_term(t, cell)?;
    let split = FactorSplit::new(t);
    let slices: Vec<Option<f64>> = if cell.dim() == 1 { vec![None] } else { slice_points(cell).into_iter().map(Some).collect() };
    let mut rows = Vec::new();
    for i in 0..family.regions.len() {
        let Some((lo_t, hi_t)) = family.offsets(i) else { continue };
        let reg = &family.regions[i];
        let iv = Interval::open(reg.lo, reg.hi).map_err(PowerLogError::from)?;
        let (mut sup, mut var) = (0.0f64, 0.0f64);
        for y0 in &slices {
            let h1 = h_slice(&split.h, *y0);
            for s in offset_samples(lo_t, hi_t, SUP_SAMPLES) {
                let y = family.center + family.side * s;
                sup = sup.max(h1.eval_with_offsets(&[y], &[s]).abs());
            }
            let amp = PiecewisePowerLog::new(1, vec![Piece::new(Cell::interval_1d(iv), vec![h1])])?;
            let d = amp.derivative(0);
            var = var.max(quad::integrate_abs(&d, tol)?.value);
        }
        let lhs = sup + var;
        rows.push(HBoundRow { lambda: reg.lambda, sup_h: sup, int_abs_dh: var, lhs, c: lhs / reg.lambda.powf(p) });
    }
    let c_min = rows.iter().map(|r| r.c).fold(0.0, f64::max);
    let x: Vec<f64> = rows.iter().map(|r| r.lambda.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.lhs.max(f64::MIN_POSITIVE).ln()).collect();
    let growth = stats::least_squares(&x, &y).map_or(0.0, |f| f.slope);
    Ok(HBoundReport { p, rows, c_min, growth, pass: growth <= p + GROWTH_SLACK })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBoundRow {
    pub lambda: f64,
    pub int_abs_g: f64,
    pub bound: f64,
    pub ok: bool,
}

/// `∫_{proj E_λ} |g| ≤ G·λ^r` with `G = ∫_cell |term|`.
pub fn verify_g_bound(t: &PowerLogTerm, cell: &Cell, family: &TruncationFamily, tol: f64) -> Result<(f64, Vec<GBoundRow>), ProofkitError> {
    check_term(t, cell)?;
    let whole = PiecewisePowerLog::new(cell.dim(), vec![Piece::new(cell.clone(), vec![t.clone()])])?;
    let g_total = quad::integrate_abs(&whole, tol)?.value;
    let split = FactorSplit::new(t);
    let int_g = if cell.dim() == 1 {
        split.g.coef.abs()
    } else {
        let g1 = PiecewisePowerLog::new(1, vec![Piece::new(Cell::interval_1d(cell.axes[0]), vec![split.g.clone()])])?;
        quad::integrate_abs(&g1, tol)?.value
    };
    let rf = family.r.to_f64().unwrap_or(f64::NAN);
    let rows = family
        .regions
        .iter()
        .filter(|reg| !reg.empty)
        .map(|reg| {
            let bound = g_total * reg.lambda.powf(rf);
            GBoundRow { lambda: reg.lambda, int_abs_g: int_g, bound, ok: int_g <= bound * (1.0 + 1e-9) }
        })
        .collect();
    Ok((g_total, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub lambda: f64,
    pub mass: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementReport {
    pub rows: Vec<MassRow>,
    /// Decay exponent fitted to the positive masses.
    pub exponent: Option<f64>,
    pub decreasing: bool,
}

/// `∫_{cell \ E_λ} |f|` per λ.
pub fn complement_mass(f: &PiecewisePowerLog, cell: &Cell, family: &TruncationFamily, tol: f64) -> Result<ComplementReport, ProofkitError> {
    let axis = family.axis;
    let iv = &cell.axes[axis];
    let mut rows = Vec::with_capacity(family.regions.len());
    for reg in &family.regions {
        let parts: Vec<Interval> = if reg.empty {
            vec![*iv]
        } else {
            let mut v = Vec::new();
            if reg.lo > iv.lo.value {
                v.push(Interval::new(iv.lo, crate::domain::Bound::closed(reg.lo)).map_err(PowerLogError::from)?);
            }
            if reg.hi < iv.hi.value {
                v.push(Interval::new(crate::domain::Bound::closed(reg.hi), iv.hi).map_err(PowerLogError::from)?);
            }
            v
        };
        let (mut mass, mut error) = (0.0, 0.0);
        for part in parts {
            let mut axes = cell.axes.clone();
            axes[axis] = part;
            let q = powerlog::integral_abs(f, &DomainBox::new(axes), tol)?;
            mass += q.value;
            error += q.error;
        }
        rows.push(MassRow { lambda: reg.lambda, mass, error });
    }
    let decreasing = rows.windows(2).all(|w| w[1].mass <= w[0].mass + w[0].error + w[1].error + 1e-15);
    let pos: Vec<&MassRow> = rows.iter().filter(|r| r.mass > 0.0).collect();
    let x: Vec<f64> = pos.iter().map(|r| r.lambda.ln()).collect();
    let y: Vec<f64> = pos.iter().map(|r| r.mass.ln()).collect();
    let exponent = stats::least_squares(&x, &y).map(|fit| -fit.slope);
    Ok(ComplementReport { rows, exponent, decreasing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minorization {
    pub samples: usize,
    /// `min |h| / (K^{-1} ψ)` over the samples.
    pub worst_ratio: f64,
    pub holds: bool,
    pub class: AxisClass,
}

/// Sampled check of `K^{-1} ψ(|ỹ_m|) ≤ |h(y)|`.
pub fn psi_minorization(t: &PowerLogTerm, cell: &Cell) -> Result<Minorization, ProofkitError> {
    let (near, far, side) = check_term(t, cell)?;
    let axis = cell.dim() - 1;
    let k = t.unit.k();
    if !k.is_finite() {
        return Err(ProofkitError::UnboundedUnit);
    }
    let split = FactorSplit::new(t);
    let slices: Vec<Option<f64>> = if cell.dim() == 1 { vec![None] } else { slice_points(cell).into_iter().map(Some).collect() };
    let per = SUP_SAMPLES / slices.len();
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for y0 in &slices {
        let h1 = h_slice(&split.h, *y0);
        for s in offset_samples(near, far, per) {
            // skip the open ends themselves
            if s <= near || s >= far {
                continue;
            }
            let y = t.center[axis] + side * s;
            let ratio = h1.eval_with_offsets(&[y], &[s]).abs() / (psi(s, t.alpha[axis])? / k);
            worst = worst.min(ratio);
            count += 1;
        }
    }
    Ok(Minorization { samples: count, worst_ratio: worst, holds: worst >= 1.0 - 1e-12, class: cell.axis_class(axis, t.center[axis]) })
}
