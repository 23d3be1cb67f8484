//! Numerical laboratory for oscillatory integrals
//!
//! ```text
//! F(λ) = ∫ f(y) e^{iλ ξ·φ(y)} dy
//! ```
//!
//! with amplitudes `f` given in prepared power-log form
//! `c·|y-θ|^α (log|y-θ|)^β u(y)` on product cells, and polynomial or
//! power-log phases `φ`.
//!
//! The crate is organised bottom-up:
//!
//! * [`expr`]: a small expression language (parser, evaluator, symbolic
//!   derivative) used for units, phases and scenario files.
//! * [`powerlog`]: the prepared amplitude model and its integrability rule.
//! * [`quad`]: Gauss–Kronrod and Filon-type quadrature, the numerical oracle
//!   everything else is checked against.
//! * [`vdc`], [`homog`], [`hyperplane`], [`decayfit`], [`proofkit`],
//!   [`fourier1d`]: the analyses built on top.
//!
//! Sweeps over λ grids, batteries and Monte Carlo samples run on rayon when
//! the `parallel` feature is enabled (the default) and sequentially
//! otherwise; see [`exec`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decayfit;
pub mod domain;
pub mod exec;
pub mod expr;
pub mod fourier1d;
pub mod homog;
pub mod hyperplane;
pub mod linalg;
pub mod phase;
pub mod poly;
pub mod powerlog;
pub mod proofkit;
pub mod quad;
pub mod report;
pub mod scenario;
pub mod stats;
pub mod vdc;

pub use domain::{Bound, DomainBox, Interval};
pub use expr::Expr;
pub use phase::PhaseModel;
pub use powerlog::{Cell, Piece, PiecewisePowerLog, PowerLogTerm, Unit};
pub use quad::OscillatoryResult;

pub use num_complex::Complex64;
pub use num_rational::Rational64;
