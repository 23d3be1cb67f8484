//! Bases of homogeneous polynomials made of powers of linear forms
//! `(v·y)^d`, monomial re-expression, and the nondegeneracy function `M`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::phase::PhaseModel;
use crate::poly::{binomial, monomials_of_degree, Monomial, Polynomial};

pub const MAX_DIM: usize = 3;
pub const MAX_DEGREE: u32 = 4;
/// Points on the circle for the `n = 2` minimisation.
pub const CIRCLE_GRID: usize = 720;
const RANK_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-10;
const PARALLEL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogError {
    #[error("unsupported basis size m={m}, d={d} (need 1 ≤ m ≤ 3, 1 ≤ d ≤ 4)")]
    Unsupported { m: usize, d: u32 },
    #[error("multi-index has degree {got}, basis has degree {expected}")]
    DegreeMismatch { got: u32, expected: u32 },
    #[error("multi-index has {got} entries, expected {expected}")]
    Arity { got: usize, expected: usize },
    #[error("change-of-basis system is singular (residual {residual:e})")]
    Singular { residual: f64 },
    #[error("phase is not polynomial")]
    NotPolynomial,
    #[error("derivative order bound must be at least 1")]
    OrderBound,
    #[error("M is only implemented for n ≤ 2 components, got {0}")]
    TooManyComponents(usize),
    #[error("vector is not a unit vector (norm {0})")]
    NotUnit(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogBasis {
    pub m: usize,
    pub d: u32,
    /// Integer directions the unit vectors were normalised from.
    pub directions: Vec<Vec<i32>>,
    pub vectors: Vec<Vec<f64>>,
    /// Row order of `matrix`.
    pub monomials: Vec<Monomial>,
    /// Column `j` holds the monomial coefficients of `(v_j·y)^d`.
    pub matrix: DMatrix<f64>,
    pub condition: f64,
}

impl HomogBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// `ℓ = binom(m+d−1, d)`, the dimension of degree-`d` forms in `m` variables.
pub fn basis_size(m: usize, d: u32) -> usize {
    binomial((m as u64 + d as u64).saturating_sub(1), d as u64) as usize
}

/// Integer vectors of max-norm `k` whose first nonzero entry is positive,
/// ordered by L1 norm and then descending lexicographically.
fn candidates(m: usize, k: i32) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let mut cur = vec![-k; m];
    loop {
        let maxn = cur.iter().map(|v| v.abs()).max().unwrap_or(0);
        let first = cur.iter().find(|v| **v != 0).copied().unwrap_or(0);
        if maxn == k && first > 0 {
            out.push(cur.clone());
        }
        let mut i = m;
        loop {
            if i == 0 {
                out.sort_by(|a, b| {
                    let la: i32 = a.iter().map(|v| v.abs()).sum();
                    let lb: i32 = b.iter().map(|v| v.abs()).sum();
                    la.cmp(&lb).then_with(|| b.cmp(a))
                });
                return out;
            }
            i -= 1;
            if cur[i] < k {
                cur[i] += 1;
                for v in cur.iter_mut().skip(i + 1) {
                    *v = -k;
                }
                break;
            }
        }
    }
}

fn power_coefficients(v: &[f64], d: u32, monomials: &[Monomial]) -> Vec<f64> {
    let p = Polynomial::linear_form(v).powi(d);
    monomials.iter().map(|e| p.coefficient(e)).collect()
}

fn construct(m: usize, d: u32) -> HomogBasis {
    let ell = basis_size(m, d);
    let monomials = monomials_of_degree(m, d);
    let mut directions = Vec::new();
    let mut vectors = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut k = 1;
    while vectors.len() < ell {
        for c in candidates(m, k) {
            let norm = c.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let v: Vec<f64> = c.iter().map(|x| *x as f64 / norm).collect();
            let col = power_coefficients(&v, d, &monomials);
            let mut trial = columns.clone();
            trial.push(col.clone());
            let a = DMatrix::from_fn(monomials.len(), trial.len(), |r, j| trial[j][r]);
            if linalg::rref(&a, RANK_TOL).rank == trial.len() {
                columns.push(col);
                directions.push(c);
                vectors.push(v);
                if vectors.len() == ell {
                    break;
                }
            }
        }
        k += 1;
    }
    let matrix = DMatrix::from_fn(ell, ell, |r, j| columns[j][r]);
    let condition = linalg::condition_number(&matrix);
    HomogBasis { m, d, directions, vectors, monomials, matrix, condition }
}

fn table() -> &'static Vec<HomogBasis> {
    static TABLE: OnceLock<Vec<HomogBasis>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::new();
        for m in 1..=MAX_DIM {
            for d in 1..=MAX_DEGREE {
                t.push(construct(m, d));
            }
        }
        t
    })
}

/// Cached basis for `(m, d)`.
pub fn build_basis(m: usize, d: u32) -> Result<&'static HomogBasis, HomogError> {
    if !(1..=MAX_DIM).contains(&m) || !(1..=MAX_DEGREE).contains(&d) {
        return Err(HomogError::Unsupported { m, d });
    }
    Ok(&table()[(m - 1) * MAX_DEGREE as usize + (d as usize - 1)])
}

/// Coefficients `c` with `y^α = Σ c_j (v_j·y)^{|α|}`.
pub fn express_monomial(basis: &HomogBasis, alpha: &[u32]) -> Result<Vec<f64>, HomogError> {
    if alpha.len() != basis.m {
        return Err(HomogError::Arity { got: alpha.len(), expected: basis.m });
    }
    let deg: u32 = alpha.iter().sum();
    if deg != basis.d {
        return Err(HomogError::DegreeMismatch { got: deg, expected: basis.d });
    }
    let rhs = DVector::from_iterator(basis.len(), basis.monomials.iter().map(|e| if e.as_slice() == alpha { 1.0 } else { 0.0 }));
    let c = linalg::solve(&basis.matrix, &rhs).ok_or(HomogError::Singular { residual: f64::INFINITY })?;
    let residual = (&basis.matrix * &c - &rhs).amax();
    if !(residual <= RESIDUAL_TOL) {
        return Err(HomogError::Singular { residual });
    }
    Ok(c.iter().copied().collect())
}

/// Both sides of `∂^α φ(y) = Σ_j c_{α,j} (v_j·∇)^{|α|} φ(y)`, one entry per
/// phase component.
pub fn directional_derivative_expansion(phi: &PhaseModel, alpha: &[u32], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>), HomogError> {
    let polys = phi.polynomials().ok_or(HomogError::NotPolynomial)?;
    let m = phi.dim();
    if alpha.len() != m {
        return Err(HomogError::Arity { got: alpha.len(), expected: m });
    }
    let d: u32 = alpha.iter().sum();
    if d == 0 {
        let v = polys.iter().map(|p| p.eval(y)).collect::<Vec<_>>();
        return Ok((v.clone(), v));
    }
    let basis = build_basis(m, d)?;
    let c = express_monomial(basis, alpha)?;
    let mut lhs = Vec::with_capacity(polys.len());
    let mut rhs = Vec::with_capacity(polys.len());
    for p in polys {
        lhs.push(p.partial_multi(alpha).eval(y));
        let mut acc = Polynomial::zero(m);
        for (cj, v) in c.iter().zip(&basis.vectors) {
            acc = acc.add(&p.directional(v, d).scale(*cj));
        }
        rhs.push(acc.eval(y));
    }
    Ok((lhs, rhs))
}

/// Orthogonal matrix whose last column is `v`: Gram–Schmidt over `v`
/// followed by `e_1..e_m`, dropping near-parallel candidates.
pub fn orthonormal_completion(v: &[f64]) -> Result<DMatrix<f64>, HomogError> {
    let m = v.len();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= 1e-12) {
        return Err(HomogError::NotUnit(norm));
    }
    let mut kept: Vec<DVector<f64>> = vec![DVector::from_column_slice(v)];
    for i in 0..m {
        if kept.len() == m {
            break;
        }
        let mut w = DVector::zeros(m);
        w[i] = 1.0;
        // two passes keep the columns orthogonal to rounding
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dot(&w);
                w -= q * proj;
            }
        }
        let n = w.norm();
        if n > PARALLEL_TOL {
            kept.push(w / n);
        }
    }
    let mut cols: Vec<DVector<f64>> = kept[1..].to_vec();
    cols.push(kept[0].clone());
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NondegeneracyReport {
    pub point: Vec<f64>,
    /// `M(y)` at the refined minimiser.
    pub value: f64,
    /// Lipschitz lower bound on the true minimum over the sphere.
    pub lower_bound: f64,
    pub argmin: Vec<f64>,
    /// `(d, j)` attaining the max at the minimiser, `j` 1-based.
    pub argmax: (u32, usize),
    /// Number of sphere points examined (0 when exact).
    pub grid: usize,
    /// Final angular spacing, 0 when exact.
    pub resolution: f64,
}

impl NondegeneracyReport {
    /// True when `M(y) > 0` is certified with a positive margin.
    pub fn is_positive(&self) -> bool {
        self.lower_bound > 0.0
    }
}

/// `M(y) = min_{|ξ|=1} max_{d ≤ N, j} |ξ·(v_{d,j}·∇)^d φ(y)|`.
pub fn nondegeneracy_m(phi: &PhaseModel, y: &[f64], order: u32) -> Result<NondegeneracyReport, HomogError> {
    if order < 1 {
        return Err(HomogError::OrderBound);
    }
    let polys = phi.polynomials().ok_or(HomogError::NotPolynomial)?;
    let n = polys.len();
    if n > 2 {
        return Err(HomogError::TooManyComponents(n));
    }
    let m = phi.dim();
    let mut labels = Vec::new();
    let mut ws: Vec<Vec<f64>> = Vec::new();
    for d in 1..=order {
        let basis = build_basis(m, d)?;
        for (j, v) in basis.vectors.iter().enumerate() {
            labels.push((d, j + 1));
            ws.push(polys.iter().map(|p| p.directional(v, d).eval(y)).collect());
        }
    }
    let score = |xi: &[f64]| -> (f64, usize) {
        let mut best = (-1.0, 0);
        for (k, w) in ws.iter().enumerate() {
            let s = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().abs();
            if s > best.0 {
                best = (s, k);
            }
        }
        best
    };
    if n == 1 {
        let (value, k) = score(&[1.0]);
        return Ok(NondegeneracyReport {
            point: y.to_vec(),
            value,
            lower_bound: value,
            argmin: vec![1.0],
            argmax: labels[k],
            grid: 0,
            resolution: 0.0,
        });
    }
    let lip = ws.iter().map(|w| w.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let at = |t: f64| score(&[t.cos(), t.sin()]);
    let h = 2.0 * PI / CIRCLE_GRID as f64;
    let (mut t_best, mut best) = (0.0, f64::INFINITY);
    for i in 0..CIRCLE_GRID {
        let t = i as f64 * h;
        let (s, _) = at(t);
        if s < best {
            best = s;
            t_best = t;
        }
    }
    let coarse_lower = best - lip * h / 2.0;
    // one refinement pass around the coarse minimiser
    let fine = CIRCLE_GRID;
    let hf = 2.0 * h / fine as f64;
    let centre = t_best;
    for i in 0..=fine {
        let t = centre - h + i as f64 * hf;
        let (s, _) = at(t);
        if s < best {
            best = s;
            t_best = t;
        }
    }
    let (value, k) = at(t_best);
    let lower = coarse_lower.min(value - lip * hf / 2.0).max(0.0);
    Ok(NondegeneracyReport {
        point: y.to_vec(),
        value,
        lower_bound: lower,
        argmin: vec![t_best.cos(), t_best.sin()],
        argmax: labels[k],
        grid: CIRCLE_GRID + fine + 1,
        resolution: hf,
    })
}
