//! Phase functions `φ: ℝ^m → ℝ^n`, either polynomial or power-log
//! expressions, with a declared derivative-order bound `N`.

use thiserror::Error;

use crate::expr::{self, Expr, ExprError};
use crate::poly::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("phase has no components")]
    Empty,
    #[error("phase component {index}: {source}")]
    Component { index: usize, source: ExprError },
    #[error("phase uses y{used} but the domain is {dim}-dimensional")]
    Dimension { used: usize, dim: usize },
    #[error("non-polynomial phase needs an explicit derivative-order bound")]
    MissingOrderBound,
    #[error("direction has {got} entries, phase has {expected} components")]
    DirectionArity { got: usize, expected: usize },
    #[error("direction must be nonzero")]
    ZeroDirection,
}

/// A scalar field, kept polynomial when possible so derivatives are exact
/// and cheap.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Poly(Polynomial),
    Expr(Expr),
}

impl Field {
    /// Value at `y`; NaN where an expression is undefined.
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Field::Poly(p) => p.eval(y),
            Field::Expr(e) => e.evaluate(y, &[]).unwrap_or(f64::NAN),
        }
    }

    pub fn partial(&self, axis: usize) -> Field {
        match self {
            Field::Poly(p) => Field::Poly(p.partial(axis)),
            Field::Expr(e) => Field::Expr(e.differentiate(axis)),
        }
    }

    pub fn nth_partial(&self, axis: usize, k: u32) -> Field {
        (0..k).fold(self.clone(), |f, _| f.partial(axis))
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match self {
            Field::Poly(p) => Some(p),
            Field::Expr(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    dim: usize,
    components: Vec<Expr>,
    polys: Option<Vec<Polynomial>>,
    order_bound: u32,
}

impl PhaseModel {
    /// Build from expressions in `y1..y_dim` (parameters must already be
    /// substituted, see [`PhaseModel::with_params`]). For polynomial phases
    /// `order_bound` defaults to the total degree.
    pub fn from_exprs(dim: usize, components: Vec<Expr>, order_bound: Option<u32>) -> Result<Self, PhaseError> {
        if components.is_empty() {
            return Err(PhaseError::Empty);
        }
        for c in &components {
            let used = c.var_count();
            if used > dim {
                return Err(PhaseError::Dimension { used, dim });
            }
        }
        let polys: Option<Vec<Polynomial>> = components.iter().map(|c| c.to_polynomial(dim)).collect();
        let order_bound = match (order_bound, &polys) {
            (Some(n), _) => n,
            (None, Some(ps)) => ps.iter().map(Polynomial::degree).max().unwrap_or(0).max(1),
            (None, None) => return Err(PhaseError::MissingOrderBound),
        };
        Ok(PhaseModel { dim, components, polys, order_bound })
    }

    pub fn parse(dim: usize, components: &[&str], order_bound: Option<u32>) -> Result<Self, PhaseError> {
        let exprs = components
            .iter()
            .enumerate()
            .map(|(index, t)| expr::parse(t).map_err(|source| PhaseError::Component { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_exprs(dim, exprs, order_bound)
    }

    pub fn from_polynomials(polys: Vec<Polynomial>, order_bound: Option<u32>) -> Result<Self, PhaseError> {
        let dim = polys.first().ok_or(PhaseError::Empty)?.dim();
        let exprs = polys.iter().map(|p| expr::parse(&p.to_string()).expect("rendered polynomial parses")).collect();
        Self::from_exprs(dim, exprs, order_bound)
    }

    /// Substitute the parameter vector `x` into every component.
    pub fn with_params(dim: usize, components: &[Expr], x: &[f64], order_bound: Option<u32>) -> Result<Self, PhaseError> {
        Self::from_exprs(dim, components.iter().map(|c| c.substitute_params(x)).collect(), order_bound)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn order_bound(&self) -> u32 {
        self.order_bound
    }

    pub fn polynomials(&self) -> Option<&[Polynomial]> {
        self.polys.as_deref()
    }

    pub fn is_polynomial(&self) -> bool {
        self.polys.is_some()
    }

    /// Total degree for polynomial phases.
    pub fn degree(&self) -> Option<u32> {
        self.polys.as_ref().map(|ps| ps.iter().map(Polynomial::degree).max().unwrap_or(0))
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        match &self.polys {
            Some(ps) => ps.iter().map(|p| p.eval(y)).collect(),
            None => self.components.iter().map(|e| e.evaluate(y, &[]).unwrap_or(f64::NAN)).collect(),
        }
    }

    /// The scalar phase `ξ·φ`.
    pub fn project(&self, xi: &[f64]) -> Result<ProjectedPhase, PhaseError> {
        if xi.len() != self.components.len() {
            return Err(PhaseError::DirectionArity { got: xi.len(), expected: self.components.len() });
        }
        if xi.iter().all(|v| *v == 0.0) {
            return Err(PhaseError::ZeroDirection);
        }
        let value = match &self.polys {
            Some(ps) => {
                let mut acc = Polynomial::zero(self.dim);
                for (p, w) in ps.iter().zip(xi) {
                    acc = acc.add(&p.scale(*w));
                }
                Field::Poly(acc)
            }
            None => {
                let mut acc = Expr::Const(0.0);
                for (c, w) in self.components.iter().zip(xi) {
                    if *w != 0.0 {
                        acc = acc + Expr::Const(*w) * c.clone();
                    }
                }
                Field::Expr(acc.simplify())
            }
        };
        Ok(ProjectedPhase::new(value, self.dim))
    }
}

/// Scalar phase with first and second partials along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPhase {
    dim: usize,
    value: Field,
    first: Vec<Field>,
    second: Vec<Field>,
}

impl ProjectedPhase {
    pub fn new(value: Field, dim: usize) -> Self {
        let first: Vec<Field> = (0..dim).map(|i| value.partial(i)).collect();
        let second = first.iter().enumerate().map(|(i, f)| f.partial(i)).collect();
        ProjectedPhase { dim, value, first, second }
    }

    /// 1-D phase from a polynomial in `y1`.
    pub fn univariate(p: Polynomial) -> Self {
        Self::new(Field::Poly(p), 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field(&self) -> &Field {
        &self.value
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.value.eval(y)
    }

    pub fn d1(&self, axis: usize, y: &[f64]) -> f64 {
        self.first[axis].eval(y)
    }

    pub fn d2(&self, axis: usize, y: &[f64]) -> f64 {
        self.second[axis].eval(y)
    }

    /// Evaluate with all coordinates but `axis` frozen at `base`.
    pub fn slice(&self, axis: usize, base: &[f64]) -> PhaseSlice<'_> {
        PhaseSlice { phase: self, axis, base: base.to_vec() }
    }
}

/// One-dimensional view of a projected phase along one axis.
#[derive(Debug, Clone)]
pub struct PhaseSlice<'a> {
    phase: &'a ProjectedPhase,
    axis: usize,
    base: Vec<f64>,
}

impl PhaseSlice<'_> {
    fn point(&self, t: f64) -> Vec<f64> {
        let mut p = self.base.clone();
        p[self.axis] = t;
        p
    }

    pub fn value(&self, t: f64) -> f64 {
        if self.phase.dim == 1 {
            return self.phase.value(&[t]);
        }
        self.phase.value(&self.point(t))
    }

    pub fn d1(&self, t: f64) -> f64 {
        if self.phase.dim == 1 {
            return self.phase.d1(0, &[t]);
        }
        self.phase.d1(self.axis, &self.point(t))
    }

    pub fn d2(&self, t: f64) -> f64 {
        if self.phase.dim == 1 {
            return self.phase.d2(0, &[t]);
        }
        self.phase.d2(self.axis, &self.point(t))
    }
}
