//! TOML scenarios: an amplitude, a phase and a list of analyses, run into
//! one directory per analysis holding `data.csv`, `report.json` and
//! `plot.svg`. The run record is written last and is the only file with
//! timestamps.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decayfit::{self, Certification, DecayFitReport};
use crate::domain::DomainBox;
use crate::exec::Execution;
use crate::expr::{self, ExprError};
use crate::fourier1d::{self, FourierError};
use crate::homog;
use crate::hyperplane;
use crate::phase::{PhaseError, PhaseModel};
use crate::powerlog::{self, AmplitudeSpec, IntervalSpec, PiecewisePowerLog, PowerLogError};
use crate::proofkit;
use crate::report::{self, Field, Plot, Style, Table};
use crate::stats;
use crate::vdc;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Relative IBP residual accepted by the fourier analysis.
pub const IBP_TOL: f64 = 1e-6;
pub const FTC_TOL: f64 = 1e-8;
/// `g = THEORETICAL_SLACK × ĉ` for the `p = 1/(4D)` certification.
pub const THEORETICAL_SLACK: f64 = 1.1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Precondition(String),
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
}

impl ScenarioError {
    /// 2 for malformed input, 3 for unmet preconditions and I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse(_) => 2,
            _ => 3,
        }
    }
}

fn precondition(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Precondition(e.to_string())
}

fn syntax_error(e: &ExprError) -> bool {
    matches!(e, ExprError::Syntax { .. } | ExprError::MalformedRational { .. } | ExprError::NonRationalExponent { .. })
}

fn amplitude_error(e: PowerLogError) -> ScenarioError {
    let parse = match &e {
        PowerLogError::BadRational(_) | PowerLogError::Interval(_) | PowerLogError::Format(_) | PowerLogError::Arity { .. } => true,
        PowerLogError::Expr(x) => syntax_error(x),
        _ => false,
    };
    let msg = format!("amplitude: {e}");
    if parse {
        ScenarioError::Parse(msg)
    } else {
        ScenarioError::Precondition(msg)
    }
}

fn phase_error(e: PhaseError) -> ScenarioError {
    let msg = format!("phase: {e}");
    match &e {
        PhaseError::Component { source, .. } if syntax_error(source) => ScenarioError::Parse(msg),
        _ => ScenarioError::Precondition(msg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Vdc,
    Decay,
    Hyperplane,
    Proofkit,
    Fourier,
    Basis,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Vdc => "vdc",
            Analysis::Decay => "decay",
            Analysis::Hyperplane => "hyperplane",
            Analysis::Proofkit => "proofkit",
            Analysis::Fourier => "fourier",
            Analysis::Basis => "basis",
        }
    }

    fn needs_amplitude(self) -> bool {
        matches!(self, Analysis::Vdc | Analysis::Decay | Analysis::Proofkit | Analysis::Fourier)
    }

    fn needs_phase(self) -> bool {
        matches!(self, Analysis::Vdc | Analysis::Decay | Analysis::Hyperplane)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub components: Vec<String>,
    /// Derivative-order bound `N`; defaults to the degree for polynomials.
    #[serde(default)]
    pub order: Option<u32>,
    /// Direction `ξ`, normalised on use; defaults to `e_1`.
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { min: decayfit::DEFAULT_LAMBDA.0, max: decayfit::DEFAULT_LAMBDA.1, points: decayfit::DEFAULT_POINTS }
    }
}

fn default_vdc_lambdas() -> Vec<f64> {
    vec![10.0, 100.0, 1e3, 1e4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdcSpec {
    pub d: u32,
    pub interval: IntervalSpec,
    #[serde(default = "default_vdc_lambdas")]
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub p: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub p: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    /// Fraction of the grid (top end) used by the fit; defaults to the top
    /// decade.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub candidate: Option<Candidate>,
    #[serde(default)]
    pub expect: Option<Expectation>,
}

fn default_samples() -> usize {
    4096
}
fn default_fiber_samples() -> u64 {
    20_000
}
fn default_deltas() -> Vec<f64> {
    vec![0.02, 0.01, 0.005]
}
fn default_planes() -> usize {
    3
}
fn default_counter_lambdas() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1e3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperplaneSpec {
    /// Bounded box used for sampling, fiber estimates and the
    /// counterexample region.
    pub region: Vec<IntervalSpec>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_fiber_samples")]
    pub fiber_samples: u64,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_planes")]
    pub planes: usize,
    #[serde(default = "default_counter_lambdas")]
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofkitSpec {
    #[serde(default)]
    pub piece: usize,
    #[serde(default)]
    pub term: usize,
    /// Exact rational `"p/q"`; defaults to `p/(2(|α|+2))`.
    #[serde(default)]
    pub r: Option<String>,
    /// Defaults to `1/(4N)`.
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

fn default_z_max() -> f64 {
    1e3
}
fn default_z_points() -> usize {
    400
}
fn default_ibp_z() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 20.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    #[serde(default = "default_z_points")]
    pub points: usize,
    #[serde(default = "default_ibp_z")]
    pub ibp_z: Vec<f64>,
    /// Intervals `[a, b]` for the FTC check.
    #[serde(default)]
    pub ftc: Vec<[f64; 2]>,
    #[serde(default)]
    pub expect_integrable: Option<bool>,
}

impl Default for FourierSpec {
    fn default() -> Self {
        FourierSpec { z_max: default_z_max(), points: default_z_points(), ibp_z: default_ibp_z(), ftc: Vec::new(), expect_integrable: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub m: usize,
    pub d: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    /// Quadrature tolerance; decay sampling picks per-λ tolerances when
    /// unset.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    /// Parameter grid `x`; the decay analysis runs once per entry, the
    /// others use the first.
    #[serde(default)]
    pub params: Vec<Vec<f64>>,
    #[serde(default)]
    pub amplitude: Option<AmplitudeSpec>,
    #[serde(default)]
    pub phase: Option<PhaseSpec>,
    #[serde(default)]
    pub lambda: LambdaGrid,
    #[serde(default)]
    pub vdc: Option<VdcSpec>,
    #[serde(default)]
    pub decay: Option<DecaySpec>,
    #[serde(default)]
    pub hyperplane: Option<HyperplaneSpec>,
    #[serde(default)]
    pub proofkit: Option<ProofkitSpec>,
    #[serde(default)]
    pub fourier: Option<FourierSpec>,
    #[serde(default)]
    pub basis: Option<BasisSpec>,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub lambda_points: Option<usize>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Parse a file; also returns the raw bytes for hashing.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ScenarioError> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let s = Self::from_toml(&text)?;
        Ok((s, bytes))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.tol {
            self.tol = Some(t);
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.lambda_min {
            self.lambda.min = v;
        }
        if let Some(v) = o.lambda_max {
            self.lambda.max = v;
        }
        if let Some(v) = o.lambda_points {
            self.lambda.points = v;
        }
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_TOL)
    }

    pub fn x_grid(&self) -> Vec<Vec<f64>> {
        if self.params.is_empty() {
            vec![Vec::new()]
        } else {
            self.params.clone()
        }
    }

    pub fn amplitude(&self, x: &[f64]) -> Result<PiecewisePowerLog, ScenarioError> {
        let spec = self.amplitude.as_ref().ok_or_else(|| precondition("scenario has no [amplitude]"))?;
        spec.build(x).map_err(amplitude_error)
    }

    pub fn phase(&self, x: &[f64]) -> Result<PhaseModel, ScenarioError> {
        let spec = self.phase.as_ref().ok_or_else(|| precondition("scenario has no [phase]"))?;
        let exprs = spec
            .components
            .iter()
            .enumerate()
            .map(|(index, t)| expr::parse(t).map_err(|source| phase_error(PhaseError::Component { index, source })))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = match &self.amplitude {
            Some(a) => a.dim,
            None => exprs.iter().map(|e| e.var_count()).max().unwrap_or(1).max(1),
        };
        PhaseModel::with_params(dim, &exprs, x, spec.order).map_err(phase_error)
    }

    /// Unit direction `ξ`.
    pub fn xi(&self) -> Result<Vec<f64>, ScenarioError> {
        let spec = self.phase.as_ref().ok_or_else(|| precondition("scenario has no [phase]"))?;
        let n = spec.components.len();
        let raw = spec.xi.clone().unwrap_or_else(|| (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect());
        if raw.len() != n {
            return Err(precondition(format!("xi has {} entries, phase has {n} components", raw.len())));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(precondition("xi must be a nonzero finite vector"));
        }
        Ok(raw.iter().map(|v| v / norm).collect())
    }

    /// Everything that can be checked without running an analysis.
    pub fn check(&self) -> Result<(), ScenarioError> {
        let x0 = self.x_grid().swap_remove(0);
        let needs_amp = self.analyses.iter().any(|a| a.needs_amplitude());
        let needs_phase = self.analyses.iter().any(|a| a.needs_phase());
        let amp = if self.amplitude.is_some() || needs_amp { Some(self.amplitude(&x0)?) } else { None };
        let phase = if self.phase.is_some() || needs_phase { Some(self.phase(&x0)?) } else { None };
        if phase.is_some() {
            self.xi()?;
        }
        if let (Some(a), Some(p)) = (&amp, &phase) {
            if a.dim() != p.dim() {
                return Err(precondition(format!("amplitude is {}-D but the phase is {}-D", a.dim(), p.dim())));
            }
        }
        let dim = amp.as_ref().map(|a| a.dim()).or(phase.as_ref().map(|p| p.dim())).unwrap_or(1);
        for a in &self.analyses {
            match a {
                Analysis::Vdc => {
                    self.vdc.as_ref().ok_or_else(|| precondition("vdc analysis needs a [vdc] section"))?;
                    if dim != 1 {
                        return Err(precondition("vdc needs a 1-D amplitude and phase"));
                    }
                }
                Analysis::Decay => {
                    let l = &self.lambda;
                    if !(l.min >= 1.0 && l.max >= l.min && l.points >= decayfit::MIN_POINTS) {
                        return Err(precondition(format!("λ grid needs 1 ≤ min ≤ max and at least {} points", decayfit::MIN_POINTS)));
                    }
                    if dim > 2 {
                        return Err(precondition("decay sampling supports m ≤ 2"));
                    }
                }
                Analysis::Hyperplane => {
                    let h = self.hyperplane.as_ref().ok_or_else(|| precondition("hyperplane analysis needs a [hyperplane] section"))?;
                    if h.region.len() != dim {
                        return Err(precondition(format!("hyperplane region has {} axes, phase is {dim}-D", h.region.len())));
                    }
                    let region = self.region(&h.region)?;
                    if !region.is_bounded() {
                        return Err(precondition("hyperplane region must be bounded"));
                    }
                }
                Analysis::Proofkit => {
                    let spec = self.proofkit.clone().unwrap_or_default();
                    let a = amp.as_ref().expect("built above");
                    let piece = a.pieces().get(spec.piece).ok_or_else(|| precondition(format!("no piece {}", spec.piece)))?;
                    piece.terms.get(spec.term).ok_or_else(|| precondition(format!("piece {} has no term {}", spec.piece, spec.term)))?;
                    if let Some(r) = &spec.r {
                        powerlog::parse_rational(r).map_err(amplitude_error)?;
                    }
                }
                Analysis::Fourier => {
                    if dim != 1 || phase.as_ref().is_some_and(|p| p.n_components() != 1) {
                        return Err(precondition("fourier needs m = n = 1"));
                    }
                }
                Analysis::Basis => {
                    let b = self.basis.ok_or_else(|| precondition("basis analysis needs a [basis] section"))?;
                    homog::build_basis(b.m, b.d).map_err(precondition)?;
                }
            }
        }
        Ok(())
    }

    fn region(&self, axes: &[IntervalSpec]) -> Result<DomainBox, ScenarioError> {
        let ivs = axes.iter().map(|a| a.to_interval().map_err(|e| ScenarioError::Parse(format!("region: {e}")))).collect::<Result<Vec<_>, _>>()?;
        Ok(DomainBox::new(ivs))
    }
}

/// What one analysis produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub analysis: Analysis,
    pub verdict: bool,
    pub json: serde_json::Value,
    pub table: Table,
    pub plot: Option<Plot>,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialise")
}

/// Decay runs every `x`; hyperplane gives a verdict per `x` with details at
/// the first one; the other analyses use the first `x`, recorded as `x`.
pub fn run_analysis(s: &Scenario, a: Analysis, exec: Execution) -> Result<AnalysisOutput, ScenarioError> {
    let mut out = match a {
        Analysis::Vdc => run_vdc(s, exec),
        Analysis::Decay => run_decay(s, exec),
        Analysis::Hyperplane => run_hyperplane(s, exec),
        Analysis::Proofkit => run_proofkit(s),
        Analysis::Fourier => run_fourier(s, exec),
        Analysis::Basis => run_basis(s),
    }?;
    if matches!(a, Analysis::Vdc | Analysis::Hyperplane | Analysis::Proofkit | Analysis::Fourier) {
        if let Some(obj) = out.json.as_object_mut() {
            obj.insert("x".into(), json!(s.x_grid().swap_remove(0)));
        }
    }
    Ok(out)
}

fn run_vdc(s: &Scenario, exec: Execution) -> Result<AnalysisOutput, ScenarioError> {
    let spec = s.vdc.as_ref().ok_or_else(|| precondition("missing [vdc]"))?;
    let x0 = s.x_grid().swap_remove(0);
    let f = s.amplitude(&x0)?;
    let phase = s.phase(&x0)?;
    let iv = spec.interval.to_interval().map_err(|e| ScenarioError::Parse(format!("vdc.interval: {e}")))?;
    let cert = vdc::verify(&f, &phase, &s.xi()?, spec.d, &iv, &spec.lambdas, s.tol(), exec).map_err(precondition)?;
    let mut table = Table::new(&["lambda", "actual", "bound", "margin", "quad_error", "low_confidence", "pass"]);
    for r in &cert.rows {
        table.push(vec![r.lambda.into(), r.actual.into(), r.bound.into(), r.margin.into(), r.quad_error.into(), r.low_confidence.into(), r.pass.into()]);
    }
    let plot = Plot::new(&format!("{}: van der Corput bound, d = {}", s.name, cert.d), "lambda", "|F|")
        .with("|F(λ)|", cert.rows.iter().map(|r| (r.lambda, r.actual)).collect(), Style::Markers)
        .with("bound", cert.rows.iter().map(|r| (r.lambda, r.bound)).collect(), Style::Line);
    Ok(AnalysisOutput { analysis: Analysis::Vdc, verdict: cert.verdict, json: to_value(&cert), table, plot: Some(plot) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalCheck {
    pub degree: u32,
    pub certification: Certification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRun {
    pub x: Vec<f64>,
    pub fit: decayfit::ExponentFit,
    pub certification: Option<Certification>,
    /// `p = 1/(4D)`, `g = 1.1·ĉ`, for polynomial phases passing the
    /// hyperplane check.
    pub theoretical: Option<TheoreticalCheck>,
    pub expect_ok: Option<bool>,
    pub verdict: bool,
}

/// Decay sampling and fits for every `x`, without touching the file system.
pub fn decay_runs(s: &Scenario, exec: Execution) -> Result<Vec<(DecayRun, DecayFitReport)>, ScenarioError> {
    let spec = s.decay.clone().unwrap_or_default();
    let l = s.lambda;
    let window = spec.window.unwrap_or_else(|| decayfit::top_decade_fraction(l.min, l.max));
    let xi = s.xi()?;
    let mut out = Vec::new();
    for x in s.x_grid() {
        let f = s.amplitude(&x)?;
        let phase = s.phase(&x)?;
        let samples = decayfit::sample_decay(&f, &phase, &xi, l.min, l.max, l.points, s.tol, exec).map_err(precondition)?;
        let rep = DecayFitReport::new(samples, window, spec.candidate.map(|c| (c.p, c.g))).map_err(precondition)?;
        let theoretical = match phase.degree() {
            Some(deg) if deg >= 1 && hyperplane::check_polynomial(&phase).is_ok_and(|v| v.pass) && rep.fit.c_hat.is_finite() && rep.fit.c_hat > 0.0 => {
                let cert = decayfit::certify_envelope(&rep.samples, 1.0 / (4.0 * deg as f64), THEORETICAL_SLACK * rep.fit.c_hat).map_err(precondition)?;
                Some(TheoreticalCheck { degree: deg, certification: cert })
            }
            _ => None,
        };
        let expect_ok = spec.expect.map(|e| (rep.fit.p_hat - e.p).abs() <= e.tol);
        let verdict = !rep.fit.p_hat.is_nan()
            && rep.certification.as_ref().is_none_or(|c| c.verdict)
            && theoretical.as_ref().is_none_or(|t| t.certification.verdict)
            && expect_ok.unwrap_or(true);
        out.push((DecayRun { x, fit: rep.fit.clone(), certification: rep.certification.clone(), theoretical, expect_ok, verdict }, rep));
    }
    Ok(out)
}

fn run_decay(s: &Scenario, exec: Execution) -> Result<AnalysisOutput, ScenarioError> {
    let runs = decay_runs(s, exec)?;
    let mut table = Table::new(&["x_index", "lambda", "abs_f", "envelope", "quad_error", "low_confidence"]);
    for (i, (_, rep)) in runs.iter().enumerate() {
        for (smp, env) in rep.samples.iter().zip(&rep.envelope) {
            table.push(vec![i.into(), smp.lambda.into(), smp.abs_f.into(), (*env).into(), smp.quad_error.into(), smp.low_confidence.into()]);
        }
    }
    let (first, rep) = &runs[0];
    let lambdas: Vec<f64> = rep.samples.iter().map(|x| x.lambda).collect();
    let mut plot = Plot::new(&format!("{}: decay of |F(λξ)|", s.name), "lambda", "|F|")
        .with("|F|", rep.samples.iter().map(|x| (x.lambda, x.abs_f)).collect(), Style::Markers)
        .with("envelope", lambdas.iter().copied().zip(rep.envelope.iter().copied()).collect(), Style::Line);
    if first.fit.p_hat.is_finite() {
        plot = plot.with(&format!("fit p = {:.3}", first.fit.p_hat), Plot::power_line(&lambdas, first.fit.c_hat, first.fit.p_hat), Style::Dashed);
    }
    if let Some(t) = &first.theoretical {
        plot = plot.with("1/(4D) bound", Plot::power_line(&lambdas, t.certification.g, t.certification.p), Style::Line);
    }
    let verdict = runs.iter().all(|(r, _)| r.verdict);
    let list: Vec<&DecayRun> = runs.iter().map(|(r, _)| r).collect();
    let json = json!({ "lambda": s.lambda, "runs": to_value(&list), "verdict": verdict });
    Ok(AnalysisOutput { analysis: Analysis::Decay, verdict, json, table, plot: Some(plot) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FiberPlane {
    xi: Vec<f64>,
    b: f64,
    estimates: Vec<hyperplane::FiberEstimate>,
    /// Slope of log fraction against log δ; 1 for a transversal fiber.
    log_slope: Option<f64>,
}

fn run_hyperplane(s: &Scenario, exec: Execution) -> Result<AnalysisOutput, ScenarioError> {
    let spec = s.hyperplane.as_ref().ok_or_else(|| precondition("missing [hyperplane]"))?;
    let x0 = s.x_grid().swap_remove(0);
    let phase = s.phase(&x0)?;
    let region = s.region(&spec.region)?;
    let verdict = hyperplane::check(&phase, &region, spec.samples).map_err(precondition)?;
    let mut per_x = Vec::new();
    for x in s.x_grid() {
        let v = hyperplane::check(&s.phase(&x)?, &region, spec.samples).map_err(precondition)?;
        per_x.push(json!({ "x": x, "pass": v.pass, "witness": to_value(&v.witness) }));
    }
    let all_pass = per_x.iter().all(|v| v["pass"] == true);
    let n = phase.n_components();
    let mut planes = Vec::new();
    let mut counter = None;
    let mut table;
    if let (false, Some(w)) = (verdict.pass, &verdict.witness) {
        let cx = hyperplane::counterexample_integral(&phase, (&w.xi, w.b), &region, &spec.lambdas, s.tol()).map_err(precondition)?;
        table = Table::new(&["lambda", "abs_f", "quad_error", "volume"]);
        for r in &cx.rows {
            table.push(vec![r.lambda.into(), r.abs_f.into(), r.quad_error.into(), cx.volume.into()]);
        }
        counter = Some(cx);
    } else {
        table = Table::new(&["plane", "delta", "samples", "hits", "fraction", "ci_lo", "ci_hi"]);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mid: Vec<f64> = region.axes.iter().map(|a| 0.5 * (a.lo.value + a.hi.value)).collect();
        let at_mid = phase.eval(&mid);
        for k in 0..spec.planes {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let xi: Vec<f64> = raw.iter().map(|v| v / norm).collect();
            let b: f64 = xi.iter().zip(&at_mid).map(|(a, c)| a * c).sum();
            let mut estimates = Vec::new();
            for (j, &delta) in spec.deltas.iter().enumerate() {
                let e = hyperplane::monte_carlo_fiber(&phase, &xi, b, &region, spec.fiber_samples, delta, s.seed ^ ((k as u64) << 32 | j as u64), exec)
                    .map_err(precondition)?;
                table.push(vec![k.into(), delta.into(), (e.samples as usize).into(), (e.hits as usize).into(), e.fraction.into(), e.interval.0.into(), e.interval.1.into()]);
                estimates.push(e);
            }
            let pos: Vec<&hyperplane::FiberEstimate> = estimates.iter().filter(|e| e.fraction > 0.0).collect();
            let lx: Vec<f64> = pos.iter().map(|e| e.delta.ln()).collect();
            let ly: Vec<f64> = pos.iter().map(|e| e.fraction.ln()).collect();
            let log_slope = if pos.len() >= 2 { stats::least_squares(&lx, &ly).map(|f| f.slope) } else { None };
            planes.push(FiberPlane { xi, b, estimates, log_slope });
        }
    }
    let plot = counter.as_ref().map(|cx| {
        Plot::new(&format!("{}: |F(λξ)| on the fiber", s.name), "lambda", "|F|")
            .with("|F|", cx.rows.iter().map(|r| (r.lambda, r.abs_f)).collect(), Style::Markers)
            .with("vol(U)", cx.rows.iter().map(|r| (r.lambda, cx.volume)).collect(), Style::Dashed)
    });
    let json = json!({
        "verdict": to_value(&verdict),
        "counterexample": to_value(&counter),
        "fiber_planes": to_value(&planes),
        "per_x": per_x,
    });
    Ok(AnalysisOutput { analysis: Analysis::Hyperplane, verdict: all_pass, json, table, plot })
}

fn run_proofkit(s: &Scenario) -> Result<AnalysisOutput, ScenarioError> {
    let spec = s.proofkit.clone().unwrap_or_default();
    let x0 = s.x_grid().swap_remove(0);
    let f = s.amplitude(&x0)?;
    let order = match &s.phase {
        Some(_) => s.phase(&x0)?.order_bound(),
        None => 1,
    };
    let piece = f.pieces().get(spec.piece).ok_or_else(|| precondition(format!("no piece {}", spec.piece)))?;
    let term = piece.terms.get(spec.term).ok_or_else(|| precondition(format!("no term {}", spec.term)))?;
    let cell = &piece.cell;
    let alpha = term.alpha[cell.dim() - 1];
    let (p_def, r_def) = proofkit::default_parameters(order, alpha);
    let r = match &spec.r {
        Some(t) => powerlog::parse_rational(t).map_err(amplitude_error)?,
        None => r_def,
    };
    let p = spec.p.unwrap_or_else(|| p_def.to_f64().unwrap_or(f64::NAN));
    let lambdas = spec.lambdas.clone().unwrap_or_else(|| stats::log_grid(10.0, 1e6, 13));
    let tol = s.tol();
    let family = proofkit::build_truncation(term, cell, r, &lambdas).map_err(precondition)?;
    let h = proofkit::verify_h_bounds(term, cell, &family, p, tol).map_err(precondition)?;
    let (g_total, g_rows) = proofkit::verify_g_bound(term, cell, &family, tol).map_err(precondition)?;
    let mass = proofkit::complement_mass(&f, cell, &family, tol).map_err(precondition)?;
    let minor = proofkit::psi_minorization(term, cell).map_err(precondition)?;
    let mismatch = proofkit::FactorSplit::new(term).max_mismatch(term, cell, 256);
    let mut table = Table::new(&["lambda", "region_lo", "region_hi", "empty", "sup_h", "int_abs_dh", "h_lhs", "int_abs_g", "g_bound", "mass", "mass_error"]);
    for (reg, m) in family.regions.iter().zip(&mass.rows) {
        let hr = h.rows.iter().find(|x| x.lambda == reg.lambda);
        let gr = g_rows.iter().find(|x| x.lambda == reg.lambda);
        table.push(vec![
            reg.lambda.into(),
            reg.lo.into(),
            reg.hi.into(),
            reg.empty.into(),
            hr.map(|x| x.sup_h).into(),
            hr.map(|x| x.int_abs_dh).into(),
            hr.map(|x| x.lhs).into(),
            gr.map(|x| x.int_abs_g).into(),
            gr.map(|x| x.bound).into(),
            m.mass.into(),
            m.error.into(),
        ]);
    }
    let verdict = family.nested && h.pass && g_rows.iter().all(|x| x.ok) && mass.decreasing && minor.holds && mismatch <= 1e-12;
    let mut plot = Plot::new(&format!("{}: complement mass", s.name), "lambda", "mass").with(
        "∫ outside E_λ",
        mass.rows.iter().map(|x| (x.lambda, x.mass)).collect(),
        Style::Markers,
    );
    if let Some(e) = mass.exponent {
        if let Some(first) = mass.rows.iter().find(|x| x.mass > 0.0) {
            let c = first.mass * first.lambda.powf(e);
            plot = plot.with(&format!("slope -{e:.3}"), Plot::power_line(&lambdas, c, e), Style::Dashed);
        }
    }
    let json = json!({
        "order": order,
        "p": p,
        "r": powerlog::render_rational(&r),
        "family": to_value(&family),
        "h_bounds": to_value(&h),
        "g_total": g_total,
        "g_bounds": to_value(&g_rows),
        "complement": to_value(&mass),
        "minorization": to_value(&minor),
        "split_mismatch": mismatch,
        "verdict": verdict,
    });
    Ok(AnalysisOutput { analysis: Analysis::Proofkit, verdict, json, table, plot: Some(plot) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct IbpRow {
    z: f64,
    lhs: [f64; 2],
    rhs: [f64; 2],
    relative_residual: f64,
    ok: bool,
}

fn run_fourier(s: &Scenario, exec: Execution) -> Result<AnalysisOutput, ScenarioError> {
    let spec = s.fourier.clone().unwrap_or_default();
    let x0 = s.x_grid().swap_remove(0);
    let f = s.amplitude(&x0)?;
    let tol = s.tol();
    let fe = |e: FourierError| precondition(e);
    let rep = fourier1d::check_ft_integrability(&f, spec.z_max, spec.points, tol, exec).map_err(fe)?;
    let mut ibp = Vec::new();
    let mut ibp_skipped = None;
    for &z in &spec.ibp_z {
        match fourier1d::ibp_identity(&f, &rep.partition, z, tol) {
            Ok(c) => {
                let rel = c.residual / (1.0 + c.lhs.norm());
                ibp.push(IbpRow { z, lhs: [c.lhs.re, c.lhs.im], rhs: [c.rhs.re, c.rhs.im], relative_residual: rel, ok: rel <= IBP_TOL });
            }
            Err(FourierError::Hypotheses(m)) => {
                ibp_skipped = Some(m);
                break;
            }
            Err(e) => return Err(fe(e)),
        }
    }
    let ftc = spec.ftc.iter().map(|[a, b]| fourier1d::ftc_check(&f, *a, *b, tol)).collect::<Result<Vec<_>, _>>().map_err(fe)?;
    let expect_ok = spec.expect_integrable.map(|e| e == rep.integrable);
    let verdict = rep.consistent && ibp.iter().all(|r| r.ok) && ftc.iter().all(|c| c.residual <= FTC_TOL) && expect_ok.unwrap_or(true);
    let mut table = Table::new(&["z", "re_ft", "im_ft", "abs_ft", "ibp_residual"]);
    for smp in &rep.samples {
        table.push(vec![smp.z.into(), smp.value.re.into(), smp.value.im.into(), smp.abs.into(), smp.ibp_residual.into()]);
    }
    let zs: Vec<f64> = rep.samples.iter().map(|x| x.z).collect();
    let mut plot = Plot::new(&format!("{}: |f̂(z)|", s.name), "z", "|f̂|").with("|f̂|", rep.samples.iter().map(|x| (x.z, x.abs)).collect(), Style::Markers);
    if rep.fit.p_hat.is_finite() {
        plot = plot.with(&format!("fit q = {:.3}", rep.fit.p_hat), Plot::power_line(&zs, rep.fit.c_hat, rep.fit.p_hat), Style::Dashed);
    }
    let json = json!({
        "partition": to_value(&rep.partition),
        "fit": to_value(&rep.fit),
        "integral_body": rep.integral_body,
        "integral_tail": rep.integral_tail,
        "integral": rep.integral,
        "tail_model_error": rep.tail_model_error,
        "integrable": rep.integrable,
        "consistent": rep.consistent,
        "ibp": to_value(&ibp),
        "ibp_skipped": ibp_skipped,
        "ftc": to_value(&ftc),
        "expect_integrable_ok": expect_ok,
        "verdict": verdict,
    });
    Ok(AnalysisOutput { analysis: Analysis::Fourier, verdict, json, table, plot: Some(plot) })
}

fn monomial_label(alpha: &[u32]) -> String {
    alpha.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("_")
}

fn run_basis(s: &Scenario) -> Result<AnalysisOutput, ScenarioError> {
    let spec = s.basis.ok_or_else(|| precondition("missing [basis]"))?;
    basis_output(spec.m, spec.d)
}

/// The `basis` analysis on its own (also used by the `basis` subcommand).
pub fn basis_output(m: usize, d: u32) -> Result<AnalysisOutput, ScenarioError> {
    let b = homog::build_basis(m, d).map_err(precondition)?;
    let coeffs = b.monomials.iter().map(|a| homog::express_monomial(b, a)).collect::<Result<Vec<_>, _>>().map_err(precondition)?;
    let mut header: Vec<String> = vec!["j".into()];
    header.extend((1..=m).map(|i| format!("dir_{i}")));
    header.extend((1..=m).map(|i| format!("v_{i}")));
    header.extend(b.monomials.iter().map(|a| format!("c_{}", monomial_label(a))));
    let mut table = Table { header, rows: Vec::new() };
    for j in 0..b.len() {
        let mut row: Vec<Field> = vec![j.into()];
        row.extend(b.directions[j].iter().map(|&v| Field::Int(v as i64)));
        row.extend(b.vectors[j].iter().map(|&v| Field::Num(v)));
        row.extend(coeffs.iter().map(|c| Field::Num(c[j])));
        table.push(row);
    }
    let size = homog::basis_size(m, d);
    let verdict = b.len() == size;
    let coefficients: BTreeMap<String, Vec<f64>> = b.monomials.iter().zip(&coeffs).map(|(a, c)| (monomial_label(a), c.clone())).collect();
    let json = json!({
        "m": m,
        "d": d,
        "size": size,
        "condition": b.condition,
        "directions": b.directions,
        "vectors": b.vectors,
        "monomials": b.monomials,
        "coefficients": coefficients,
        "verdict": verdict,
    });
    Ok(AnalysisOutput { analysis: Analysis::Basis, verdict, json, table, plot: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputOptions {
    /// `None` writes both CSV and JSON.
    pub format: Option<Format>,
    pub plots: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions { format: None, plots: true }
    }
}

/// Writes the analysis files into `dir` and returns their names.
pub fn write_output(out: &AnalysisOutput, dir: &Path, opts: OutputOptions) -> Result<Vec<String>, ScenarioError> {
    let mut files = Vec::new();
    if opts.format != Some(Format::Json) {
        let bytes = out.table.to_csv().map_err(|e| io::Error::other(e.to_string()))?;
        report::write_file(&dir.join("data.csv"), &bytes)?;
        files.push("data.csv".to_string());
    }
    if opts.format != Some(Format::Csv) {
        let bytes = report::to_json(&json!({ "analysis": out.analysis, "verdict": out.verdict, "report": out.json })).map_err(|e| io::Error::other(e.to_string()))?;
        report::write_file(&dir.join("report.json"), &bytes)?;
        files.push("report.json".to_string());
    }
    if let (true, Some(p)) = (opts.plots, &out.plot) {
        report::write_file(&dir.join("plot.svg"), p.to_svg().as_bytes())?;
        files.push("plot.svg".to_string());
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub analysis: Analysis,
    pub verdict: bool,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub scenario_sha256: String,
    pub tool_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub analyses: Vec<RecordEntry>,
    pub pass: bool,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Run a parsed scenario into `out_dir/<name>/`, restricted to `only` when
/// given. The record goes to `run.json` after every analysis has finished.
pub fn run_scenario(
    s: &Scenario,
    source: &[u8],
    out_dir: &Path,
    only: Option<Analysis>,
    opts: OutputOptions,
    exec: Execution,
) -> Result<RunRecord, ScenarioError> {
    s.check()?;
    let started = unix_now();
    let root: PathBuf = out_dir.join(&s.name);
    let analyses: Vec<Analysis> = match only {
        Some(a) => vec![a],
        None => s.analyses.clone(),
    };
    let mut entries = Vec::new();
    for a in analyses {
        let out = run_analysis(s, a, exec)?;
        let files = write_output(&out, &root.join(a.name()), opts)?;
        entries.push(RecordEntry { analysis: a, verdict: out.verdict, files: files.iter().map(|f| format!("{}/{f}", a.name())).collect() });
    }
    let record = RunRecord {
        scenario: s.name.clone(),
        scenario_sha256: sha256_hex(source),
        tool_version: TOOL_VERSION.to_string(),
        seed: s.seed,
        started_unix: started,
        finished_unix: unix_now(),
        pass: entries.iter().all(|e| e.verdict),
        analyses: entries,
    };
    let bytes = report::to_json(&record).map_err(|e| io::Error::other(e.to_string()))?;
    report::write_file(&root.join("run.json"), &bytes)?;
    Ok(record)
}

/// Load, override and run a scenario file.
pub fn run(path: &Path, out_dir: &Path, overrides: &Overrides, only: Option<Analysis>, opts: OutputOptions, exec: Execution) -> Result<RunRecord, ScenarioError> {
    let (mut s, bytes) = Scenario::load(path)?;
    s.apply(overrides);
    run_scenario(&s, &bytes, out_dir, only, opts, exec)
}

/// Every `*.toml` file in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    v.sort();
    Ok(v)
}
