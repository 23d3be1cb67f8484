//! The hyperplane condition: exact rank test for polynomial phases, a
//! sampled heuristic for everything else, and the constant-modulus
//! integral over a fiber that shows why the condition is necessary.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DomainBox;
use crate::exec::Execution;
use crate::linalg;
use crate::phase::PhaseModel;
use crate::poly::Monomial;
use crate::powerlog::{PiecewisePowerLog, PowerLogError};
use crate::quad::{self, QuadError};
use crate::stats;

/// Relative rank threshold.
pub const RANK_TOL: f64 = 1e-10;
pub const WITNESS_POINTS: usize = 100;
pub const WITNESS_TOL: f64 = 1e-10;
const CHUNK: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HyperplaneError {
    #[error("phase is not polynomial; use the sampled check")]
    NotPolynomial,
    #[error("hyperplane has {got} coefficients, phase has {expected} components")]
    Arity { got: usize, expected: usize },
    #[error("hyperplane normal must be nonzero")]
    ZeroNormal,
    #[error("box must be bounded and match the phase dimension")]
    BadBox,
    #[error("region is not inside the fiber: |ξ·φ(y) − b| = {residual:e} at {point:?}")]
    NotInFiber { point: Vec<f64>, residual: f64 },
    #[error(transparent)]
    Amplitude(#[from] PowerLogError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SymbolicRank,
    MonteCarlo,
}

/// `ξ·φ ≡ b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub xi: Vec<f64>,
    pub b: f64,
    /// Max of `|ξ·φ(y) − b|` over the check points.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneVerdict {
    pub pass: bool,
    pub method: Method,
    pub rank: usize,
    pub witness: Option<Witness>,
}

fn witness_points(dim: usize, n: usize) -> Vec<Vec<f64>> {
    // fixed stream, so witnesses are reproducible
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn residual(phi: &PhaseModel, xi: &[f64], b: f64, y: &[f64]) -> f64 {
    let v = phi.eval(y);
    (v.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>() - b).abs()
}

/// Kernel vector `k` of `[1 | φ_1 | … | φ_n]` as a witness `(ξ, b)` with the
/// first nonzero entry of `ξ` positive.
fn witness_from_kernel(k: &[f64]) -> (Vec<f64>, f64) {
    let mut xi = k[1..].to_vec();
    let mut b = -k[0];
    if xi.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) {
        xi.iter_mut().for_each(|v| *v = -*v);
        b = -b;
    }
    (xi, b)
}

/// Exact decision for polynomial phases: the condition holds iff
/// `1, φ_1, …, φ_n` are linearly independent.
pub fn check_polynomial(phi: &PhaseModel) -> Result<HyperplaneVerdict, HyperplaneError> {
    let polys = phi.polynomials().ok_or(HyperplaneError::NotPolynomial)?;
    let dim = phi.dim();
    let mut monomials: Vec<Monomial> = vec![vec![0; dim]];
    for p in polys {
        for (e, _) in p.terms() {
            if !monomials.contains(e) {
                monomials.push(e.clone());
            }
        }
    }
    let cols = polys.len() + 1;
    let a = DMatrix::from_fn(monomials.len(), cols, |r, c| {
        if c == 0 {
            if r == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            polys[c - 1].coefficient(&monomials[r])
        }
    });
    let rank = linalg::rref(&a, RANK_TOL).rank;
    let witness = linalg::kernel_vector(&a, RANK_TOL).map(|k| {
        let (xi, b) = witness_from_kernel(k.as_slice());
        let max_residual = witness_points(dim, WITNESS_POINTS).iter().map(|y| residual(phi, &xi, b, y)).fold(0.0, f64::max);
        Witness { xi, b, max_residual }
    });
    Ok(HyperplaneVerdict { pass: witness.is_none(), method: Method::SymbolicRank, rank, witness })
}

/// Heuristic for non-polynomial phases: rank of `[1 | φ(y_k)]` over
/// Halton points of `region`. A rank deficit yields a candidate witness
/// whose residual is measured on the same points. Never a proof.
pub fn check_sampled(phi: &PhaseModel, region: &DomainBox, samples: usize) -> Result<HyperplaneVerdict, HyperplaneError> {
    if !region.is_bounded() || region.dim() != phi.dim() {
        return Err(HyperplaneError::BadBox);
    }
    let pts: Vec<Vec<f64>> = region.halton_points(samples).into_iter().filter(|y| phi.eval(y).iter().all(|v| v.is_finite())).collect();
    let cols = phi.n_components() + 1;
    let rows: Vec<Vec<f64>> = pts.iter().map(|y| std::iter::once(1.0).chain(phi.eval(y)).collect()).collect();
    let a = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    let rank = linalg::rref(&a, RANK_TOL).rank;
    let witness = linalg::kernel_vector(&a, RANK_TOL).map(|k| {
        let (xi, b) = witness_from_kernel(k.as_slice());
        let max_residual = pts.iter().map(|y| residual(phi, &xi, b, y)).fold(0.0, f64::max);
        Witness { xi, b, max_residual }
    });
    Ok(HyperplaneVerdict { pass: witness.is_none(), method: Method::MonteCarlo, rank, witness })
}

/// Polynomial phases get the exact test, others the sampled heuristic.
pub fn check(phi: &PhaseModel, region: &DomainBox, samples: usize) -> Result<HyperplaneVerdict, HyperplaneError> {
    match check_polynomial(phi) {
        Err(HyperplaneError::NotPolynomial) => check_sampled(phi, region, samples),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberEstimate {
    pub samples: u64,
    pub hits: u64,
    pub fraction: f64,
    /// 95% Wilson interval.
    pub interval: (f64, f64),
    pub delta: f64,
}

/// Fraction of uniform samples in `region` with `|ξ·φ(y) − b| < δ`.
/// Chunk `i` draws from stream `i` of a ChaCha generator seeded with
/// `seed`, so the result does not depend on the execution mode.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_fiber(
    phi: &PhaseModel,
    xi: &[f64],
    b: f64,
    region: &DomainBox,
    samples: u64,
    delta: f64,
    seed: u64,
    exec: Execution,
) -> Result<FiberEstimate, HyperplaneError> {
    if xi.len() != phi.n_components() {
        return Err(HyperplaneError::Arity { got: xi.len(), expected: phi.n_components() });
    }
    if xi.iter().all(|v| *v == 0.0) {
        return Err(HyperplaneError::ZeroNormal);
    }
    if !region.is_bounded() || region.dim() != phi.dim() {
        return Err(HyperplaneError::BadBox);
    }
    let chunks = samples.div_ceil(CHUNK as u64) as usize;
    let counts = exec.map_range(chunks, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let n = (samples - (i * CHUNK) as u64).min(CHUNK as u64);
        let mut hits = 0u64;
        let mut y = vec![0.0; region.dim()];
        for _ in 0..n {
            for (yk, iv) in y.iter_mut().zip(&region.axes) {
                *yk = iv.from_unit(rng.random::<f64>());
            }
            if residual(phi, xi, b, &y) < delta {
                hits += 1;
            }
        }
        hits
    });
    let hits: u64 = counts.iter().sum();
    let fraction = if samples == 0 { 0.0 } else { hits as f64 / samples as f64 };
    Ok(FiberEstimate { samples, hits, fraction, interval: stats::wilson_interval(hits, samples), delta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub lambda: f64,
    pub abs_f: f64,
    pub quad_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub volume: f64,
    pub rows: Vec<CounterexampleRow>,
    /// Largest spread of `|F|` across the grid.
    pub spread: f64,
}

/// `|F(λξ)|` for `f = χ_U` when `U` lies in the fiber `ξ·φ = b`: the phase
/// is constant on `U`, so the modulus is `vol(U)` for every `λ`.
pub fn counterexample_integral(
    phi: &PhaseModel,
    witness: (&[f64], f64),
    region: &DomainBox,
    lambdas: &[f64],
    tol: f64,
) -> Result<Counterexample, HyperplaneError> {
    let (xi, b) = witness;
    if xi.len() != phi.n_components() {
        return Err(HyperplaneError::Arity { got: xi.len(), expected: phi.n_components() });
    }
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(HyperplaneError::ZeroNormal);
    }
    if !region.is_bounded() || region.dim() != phi.dim() {
        return Err(HyperplaneError::BadBox);
    }
    let scale = 1.0 + b.abs();
    for y in region.halton_points(256) {
        let r = residual(phi, xi, b, &y);
        if !(r <= WITNESS_TOL * scale) {
            return Err(HyperplaneError::NotInFiber { point: y, residual: r });
        }
    }
    let f = PiecewisePowerLog::indicator(region)?;
    let unit: Vec<f64> = xi.iter().map(|v| v / norm).collect();
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let r = quad::integrate_oscillatory(&f, phi, &unit, lambda * norm, tol)?;
        rows.push(CounterexampleRow { lambda, abs_f: r.abs(), quad_error: r.error });
    }
    let hi = rows.iter().map(|r| r.abs_f).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.abs_f).fold(f64::INFINITY, f64::min);
    let spread = if rows.is_empty() { 0.0 } else { hi - lo };
    Ok(Counterexample { volume: region.volume(), rows, spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Interval;
    use crate::homog;
    use crate::poly::{monomials_of_degree, Polynomial};

    fn unit_box(lo: f64, hi: f64) -> DomainBox {
        DomainBox::new(vec![Interval::open(lo, hi).unwrap()])
    }

    #[test]
    fn rank_examples() {
        let v = check_polynomial(&PhaseModel::parse(1, &["y1", "y1*y1"], None).unwrap()).unwrap();
        assert!(v.pass && v.witness.is_none() && v.rank == 3);
        let v = check_polynomial(&PhaseModel::parse(1, &["y1", "2*y1 + 3"], None).unwrap()).unwrap();
        assert!(!v.pass);
        let w = v.witness.unwrap();
        assert_eq!(w.xi, vec![2.0, -1.0]);
        assert_eq!(w.b, -3.0);
        assert!(w.max_residual <= WITNESS_TOL);
        let v = check_polynomial(&PhaseModel::parse(1, &["2.5"], Some(1)).unwrap()).unwrap();
        let w = v.witness.unwrap();
        assert_eq!((w.xi, w.b), (vec![1.0], 2.5));
    }

    #[test]
    fn rank_two_dimensional() {
        let v = check_polynomial(&PhaseModel::parse(2, &["y1*y2", "y1 + y2"], None).unwrap()).unwrap();
        assert!(v.pass);
        let phi = PhaseModel::parse(2, &["y1*y2 + y1", "3*y1*y2 + 2*y1 - y2", "y1 + y2"], None).unwrap();
        let v = check_polynomial(&phi).unwrap();
        let w = v.witness.expect("dependent");
        assert!(w.max_residual <= WITNESS_TOL);
    }

    #[test]
    fn non_polynomial_routes_to_sampling() {
        let phi = PhaseModel::parse(1, &["log(y1)", "2*log(y1) + 1"], Some(2)).unwrap();
        assert!(matches!(check_polynomial(&phi), Err(HyperplaneError::NotPolynomial)));
        let v = check(&phi, &unit_box(0.5, 2.0), 256).unwrap();
        assert_eq!(v.method, Method::MonteCarlo);
        let w = v.witness.unwrap();
        assert!(w.max_residual < 1e-10);
        let phi = PhaseModel::parse(1, &["log(y1)", "y1"], Some(2)).unwrap();
        assert!(check(&phi, &unit_box(0.5, 2.0), 256).unwrap().pass);
    }

    #[test]
    fn fiber_fractions() {
        let phi = PhaseModel::parse(1, &["y1", "y1*y1"], None).unwrap();
        let r = monte_carlo_fiber(&phi, &[1.0, 0.0], 0.0, &unit_box(-1.0, 1.0), 1_000_000, 1e-3, 1, Execution::Sequential).unwrap();
        // {|y| < 1e-3} has measure 2e-3 in a box of length 2
        assert!((r.fraction - 1e-3).abs() < 1.5e-4, "{}", r.fraction);
        assert!(r.interval.0 < 1e-3 && 1e-3 < r.interval.1);
        let par = monte_carlo_fiber(&phi, &[1.0, 0.0], 0.0, &unit_box(-1.0, 1.0), 1_000_000, 1e-3, 1, Execution::Parallel).unwrap();
        assert_eq!(r, par);
        let zero = monte_carlo_fiber(&phi, &[1.0, 0.0], 0.0, &unit_box(-1.0, 1.0), 10_000, 0.0, 1, Execution::Sequential).unwrap();
        assert_eq!(zero.hits, 0);
        let dep = PhaseModel::parse(1, &["y1", "2*y1 + 3"], None).unwrap();
        let r = monte_carlo_fiber(&dep, &[2.0, -1.0], -3.0, &unit_box(-5.0, 7.0), 5000, 1e-9, 3, Execution::Sequential).unwrap();
        assert_eq!(r.fraction, 1.0);
    }

    #[test]
    fn fractions_shrink_linearly_for_passing_phase() {
        let phi = PhaseModel::parse(1, &["y1", "y1*y1"], None).unwrap();
        let region = unit_box(-1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in 0..10 {
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let xi = [t.cos(), t.sin()];
            let b: f64 = rng.random_range(-0.5..0.5);
            let big = monte_carlo_fiber(&phi, &xi, b, &region, 200_000, 1e-2, k, Execution::Parallel).unwrap();
            let small = monte_carlo_fiber(&phi, &xi, b, &region, 200_000, 1e-3, k, Execution::Parallel).unwrap();
            assert!(small.fraction <= 0.2 * big.fraction + 1e-4, "{xi:?} {b} {} {}", big.fraction, small.fraction);
        }
    }

    #[test]
    fn counterexample_is_constant() {
        let phi = PhaseModel::parse(1, &["y1", "2*y1 + 3"], None).unwrap();
        let w = check_polynomial(&phi).unwrap().witness.unwrap();
        for (hi, vol) in [(1.0, 1.0), (0.5, 0.5)] {
            let c = counterexample_integral(&phi, (&w.xi, w.b), &unit_box(0.0, hi), &[0.0, 1.0, 10.0, 100.0, 1000.0], 1e-10).unwrap();
            assert_eq!(c.volume, vol);
            for r in &c.rows {
                assert!((r.abs_f - vol).abs() < 1e-8, "{r:?}");
            }
            assert!(c.spread < 1e-8);
        }
        let bad = counterexample_integral(&phi, (&[1.0, 0.0], 0.0), &unit_box(0.0, 1.0), &[1.0], 1e-10);
        assert!(matches!(bad, Err(HyperplaneError::NotInFiber { .. })));
    }

    #[test]
    fn passing_phases_are_nondegenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 20 {
            let m = rng.random_range(1..=2usize);
            let n = rng.random_range(1..=2usize);
            let deg = rng.random_range(1..=3u32);
            let polys: Vec<Polynomial> = (0..n)
                .map(|_| {
                    let mut p = Polynomial::zero(m);
                    for d in 0..=deg {
                        for e in monomials_of_degree(m, d) {
                            if rng.random_bool(0.6) {
                                p.add_term(e, rng.random_range(-2i32..=2) as f64);
                            }
                        }
                    }
                    p
                })
                .collect();
            if polys.iter().any(Polynomial::is_zero) {
                continue;
            }
            let phi = PhaseModel::from_polynomials(polys, None).unwrap();
            if !check_polynomial(&phi).unwrap().pass {
                continue;
            }
            let order = phi.degree().unwrap();
            for _ in 0..10 {
                let y: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let r = homog::nondegeneracy_m(&phi, &y, order).unwrap();
                assert!(r.is_positive(), "{phi:?} {y:?} {r:?}");
            }
            checked += 1;
        }
    }
}
