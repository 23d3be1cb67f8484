//! Acceptance suite. Runs as a plain binary so the per-criterion lines are
//! always printed; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use num_rational::Rational64;
use oscdecay::decayfit::{self, DecayFitReport};
use oscdecay::exec::Execution;
use oscdecay::fourier1d;
use oscdecay::homog;
use oscdecay::hyperplane;
use oscdecay::poly::{monomials_of_degree, Polynomial};
use oscdecay::powerlog::{self, AmplitudeSpec};
use oscdecay::proofkit;
use oscdecay::scenario::{self, Analysis, OutputOptions, Scenario};
use oscdecay::stats;
use oscdecay::vdc;
use oscdecay::{Cell, DomainBox, Interval, PhaseModel, PiecewisePowerLog, PowerLogTerm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIOS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../cli/scenarios");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn r(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

fn amplitude(toml_text: &str) -> PiecewisePowerLog {
    let spec: AmplitudeSpec = toml::from_str(toml_text).expect("amplitude toml");
    spec.build(&[]).expect("amplitude")
}

fn indicator(lo: f64, hi: f64) -> PiecewisePowerLog {
    PiecewisePowerLog::indicator(&DomainBox::new(vec![Interval::closed(lo, hi).unwrap()])).unwrap()
}

fn triangle() -> PiecewisePowerLog {
    amplitude(
        r#"
        dim = 1
        [[cells]]
        axes = [{ lo = -1.0, hi = 0.0 }]
        terms = [{ coef = 1.0, alpha = ["0"] }, { coef = -1.0, center = [0.0], alpha = ["1"] }]
        [[cells]]
        axes = [{ lo = 0.0, hi = 1.0, lo_closed = true }]
        terms = [{ coef = 1.0, alpha = ["0"] }, { coef = -1.0, center = [0.0], alpha = ["1"] }]
        "#,
    )
}

fn lorentzian() -> PiecewisePowerLog {
    amplitude(
        r#"
        dim = 1
        [[cells]]
        axes = [{ lo = -inf, hi = -1.0 }]
        terms = [{ coef = 1.0, center = [0.0], alpha = ["-2"], unit = "y1*y1/(1 + y1*y1)", unit_bound = 2.5 }]
        [[cells]]
        axes = [{ lo = -1.0, hi = 0.0, lo_closed = true }]
        terms = [{ coef = 1.0, center = [0.0], alpha = ["0"], unit = "1/(1 + y1*y1)", unit_bound = 2.5 }]
        [[cells]]
        axes = [{ lo = 0.0, hi = 1.0, lo_closed = true, hi_closed = true }]
        terms = [{ coef = 1.0, center = [0.0], alpha = ["0"], unit = "1/(1 + y1*y1)", unit_bound = 2.5 }]
        [[cells]]
        axes = [{ lo = 1.0, hi = inf }]
        terms = [{ coef = 1.0, center = [0.0], alpha = ["-2"], unit = "y1*y1/(1 + y1*y1)", unit_bound = 2.5 }]
        "#,
    )
}

fn c1_vdc_battery() -> Outcome {
    let start = Instant::now();
    let lambdas = [10.0, 1e2, 1e3, 1e4];
    let cases = vdc::battery(20240601, 50);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for case in &cases {
        match vdc::verify(&case.amplitude, &case.phase, &[1.0], case.d, &case.interval, &lambdas, 1e-10, Execution::default()) {
            Ok(c) => {
                worst = worst.max(vdc::worst_violation(&c));
                violations += c.rows.iter().filter(|row| row.actual > row.bound + 1e-8).count();
            }
            Err(e) => return outcome(false, format!("verify error: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        cases.len() >= 50 && violations == 0 && secs <= 60.0,
        format!("{} cases x 4 lambdas, {violations} violations, worst actual-bound {worst:.3e}, {secs:.1} s", cases.len()),
    )
}

fn c2_constants() -> Outcome {
    let got: Vec<u64> = (1..=4).map(|d| vdc::cd_constant(d).unwrap()).collect();
    outcome(got == [3, 8, 18, 38], format!("c_1..c_4 = {got:?}"))
}

fn fitted_exponent(f: &PiecewisePowerLog, phase: &PhaseModel) -> f64 {
    let samples = decayfit::sample_decay(f, phase, &[1.0], 10.0, 1e4, 400, None, Execution::default()).unwrap();
    DecayFitReport::new(samples, decayfit::top_decade_fraction(10.0, 1e4), None).unwrap().fit.p_hat
}

fn c3_decay_oracles() -> Outcome {
    let start = Instant::now();
    let linear = PhaseModel::parse(1, &["y1"], None).unwrap();
    let square = PhaseModel::parse(1, &["y1*y1"], None).unwrap();
    let bump = amplitude(
        r#"
        dim = 1
        [[cells]]
        axes = [{ lo = -1.0, hi = 0.0, lo_closed = true }]
        terms = [{ coef = 1.0, alpha = ["0"] }, { coef = -1.0, center = [0.0], alpha = ["2"] }]
        [[cells]]
        axes = [{ lo = 0.0, hi = 1.0, lo_closed = true, hi_closed = true }]
        terms = [{ coef = 1.0, alpha = ["0"] }, { coef = -1.0, center = [0.0], alpha = ["2"] }]
        "#,
    );
    let cases = [
        ("indicator", fitted_exponent(&indicator(0.0, 1.0), &linear), 1.0),
        ("triangle", fitted_exponent(&triangle(), &linear), 2.0),
        ("bump", fitted_exponent(&bump, &square), 0.5),
    ];
    let secs = start.elapsed().as_secs_f64();
    let ok = cases.iter().all(|(_, p, want)| (p - want).abs() <= 0.05) && secs <= 120.0;
    let parts: Vec<String> = cases.iter().map(|(n, p, _)| format!("{n} {p:.4}")).collect();
    outcome(ok, format!("{}, {secs:.1} s", parts.join(", ")))
}

fn c4_theoretical() -> Outcome {
    let mut checked = Vec::new();
    let mut failed = Vec::new();
    for path in scenario::scenario_files(Path::new(SCENARIOS)).unwrap() {
        let (s, _) = Scenario::load(&path).unwrap();
        if !s.analyses.contains(&Analysis::Decay) {
            continue;
        }
        let runs = match scenario::decay_runs(&s, Execution::default()) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{}: {e}", s.name)),
        };
        for (run, _) in runs {
            if let Some(t) = run.theoretical {
                let label = format!("{}(D={})", s.name, t.degree);
                if t.certification.verdict {
                    checked.push(label);
                } else {
                    failed.push(label);
                }
            }
        }
    }
    outcome(
        !checked.is_empty() && failed.is_empty(),
        format!("{} certified [{}], {} failed {:?}", checked.len(), checked.join(" "), failed.len(), failed),
    )
}

fn c5_fourier() -> Outcome {
    let f = lorentzian();
    let tol = 1e-10;
    let mut max_err: f64 = 0.0;
    for z in stats::linear_grid(0.0, 20.0, 201) {
        let exact = (std::f64::consts::PI / 2.0).sqrt() * (-z).exp();
        let got = fourier1d::transform(&f, z, tol).unwrap();
        max_err = max_err.max((got - Complex64::new(exact, 0.0)).norm());
    }
    let partition = fourier1d::monotone_partition(&f).unwrap();
    let mut ibp: f64 = 0.0;
    for z in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
        let c = fourier1d::ibp_identity(&f, &partition, z, 1e-12).unwrap();
        ibp = ibp.max(c.residual);
    }
    let lor = fourier1d::check_ft_integrability(&f, 20.0, 200, tol, Execution::default()).unwrap();
    let boxcar = fourier1d::check_ft_integrability(&indicator(-1.0, 1.0), 1e3, 400, tol, Execution::default()).unwrap();
    let tri = fourier1d::check_ft_integrability(&triangle(), 1e3, 400, tol, Execution::default()).unwrap();
    let ok = max_err <= 1e-6
        && ibp <= 1e-6
        && (lor.integral - 2.5066).abs() <= 1e-3
        && (boxcar.fit.p_hat - 1.0).abs() <= 0.05
        && !boxcar.integrable
        && (tri.fit.p_hat - 2.0).abs() <= 0.05
        && tri.integrable;
    outcome(
        ok,
        format!(
            "max|f^-exact| {max_err:.2e}, ibp {ibp:.2e}, int|f^| {:.6}, boxcar q {:.4} integrable={}, triangle q {:.4} integrable={}",
            lor.integral, boxcar.fit.p_hat, boxcar.integrable, tri.fit.p_hat, tri.integrable
        ),
    )
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn c6_homog() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut rank_ok = true;
    let mut recon: f64 = 0.0;
    for m in 1..=3usize {
        for d in 1..=4u32 {
            let b = homog::build_basis(m, d).unwrap();
            let rank = b.matrix.clone().svd(false, false).rank(1e-10);
            rank_ok &= rank == binom(m + d as usize - 1, d as usize) && b.len() == rank;
        }
    }
    let cs: BTreeMap<(usize, u32), Vec<Vec<f64>>> = (1..=3usize)
        .flat_map(|m| (1..=4u32).map(move |d| (m, d)))
        .map(|(m, d)| {
            let b = homog::build_basis(m, d).unwrap();
            ((m, d), b.monomials.iter().map(|a| homog::express_monomial(b, a).unwrap()).collect())
        })
        .collect();
    for _ in 0..100 {
        let m = rng.random_range(1..=3usize);
        let d = rng.random_range(1..=4u32);
        let b = homog::build_basis(m, d).unwrap();
        let coeffs: Vec<f64> = b.monomials.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut weights = vec![0.0; b.len()];
        for (a, c) in coeffs.iter().zip(&cs[&(m, d)]) {
            for (w, cj) in weights.iter_mut().zip(c) {
                *w += a * cj;
            }
        }
        let mut p = Polynomial::zero(m);
        for (w, v) in weights.iter().zip(&b.vectors) {
            p = p.add(&Polynomial::linear_form(v).powi(d).scale(*w));
        }
        for (a, e) in coeffs.iter().zip(&b.monomials) {
            recon = recon.max((p.coefficient(e) - a).abs());
        }
    }
    let mut expansion: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..=3usize);
        let d = rng.random_range(1..=4u32);
        let mut p = Polynomial::zero(m);
        for deg in 0..=5 {
            for e in monomials_of_degree(m, deg) {
                p.add_term(e, rng.random_range(-1.0..1.0));
            }
        }
        let phi = PhaseModel::from_polynomials(vec![p], None).unwrap();
        let alphas = monomials_of_degree(m, d);
        let alpha = &alphas[rng.random_range(0..alphas.len())];
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (l, rhs) = homog::directional_derivative_expansion(&phi, alpha, &y).unwrap();
        expansion = expansion.max((l[0] - rhs[0]).abs());
    }
    outcome(
        rank_ok && recon <= 1e-10 && expansion <= 1e-10,
        format!("ranks match binomials: {rank_ok}, reconstruction {recon:.2e}, expansion {expansion:.2e}"),
    )
}

fn c7_hyperplane() -> Outcome {
    let curve = PhaseModel::parse(1, &["y1", "y1*y1"], None).unwrap();
    let line = PhaseModel::parse(1, &["y1", "2*y1 + 3"], None).unwrap();
    let curve_pass = hyperplane::check_polynomial(&curve).unwrap().pass;
    let v = hyperplane::check_polynomial(&line).unwrap();
    let Some(w) = v.witness.filter(|_| !v.pass) else {
        return outcome(false, "(y, 2y+3) passed or gave no witness");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut residual: f64 = 0.0;
    for _ in 0..100 {
        let y = rng.random_range(-10.0..10.0f64);
        let phi = line.eval(&[y]);
        let dot: f64 = w.xi.iter().zip(&phi).map(|(a, b)| a * b).sum();
        residual = residual.max((dot - w.b).abs());
    }
    let region = DomainBox::new(vec![Interval::closed(0.0, 1.0).unwrap()]);
    let c = hyperplane::counterexample_integral(&line, (&w.xi, w.b), &region, &[1.0, 10.0, 100.0, 1000.0], 1e-10).unwrap();
    let spread = c.rows.iter().map(|row| (row.abs_f - c.volume).abs()).fold(0.0, f64::max);
    outcome(
        curve_pass && residual <= 1e-10 && spread <= 1e-8,
        format!("(y,y^2) pass={curve_pass}, witness xi={:?} b={}, residual {residual:.2e}, max||F|-vol| {spread:.2e}", w.xi, w.b),
    )
}

fn c8_proofkit() -> Outcome {
    let cell = Cell::interval_1d(Interval::open(0.0, 1.0).unwrap());
    let t = PowerLogTerm::new_1d(1.0, 0.0, r(-1, 2), 0);
    let f = PiecewisePowerLog::single_1d(Interval::open(0.0, 1.0).unwrap(), t.clone()).unwrap();
    let lambdas = stats::log_grid(10.0, 1e6, 25);
    let fam = proofkit::build_truncation(&t, &cell, r(1, 10), &lambdas).unwrap();
    let mass = proofkit::complement_mass(&f, &cell, &fam, 1e-12).unwrap();
    let rel = mass
        .rows
        .iter()
        .map(|row| (row.mass / (2.0 * row.lambda.powf(-0.05)) - 1.0).abs())
        .fold(0.0, f64::max);
    let pairs = fam.regions.windows(2).all(|w| !w[0].empty && !w[1].empty && w[1].lo <= w[0].lo && w[0].hi <= w[1].hi);
    let psi_a = proofkit::psi(0.25, r(-1, 1)).unwrap();
    let psi_b = proofkit::psi(4.0, r(-1, 1)).unwrap();
    outcome(
        rel <= 0.01 && fam.nested && pairs && psi_a == 2.0 && psi_b == 1.0 / 16.0,
        format!("max relative mass error {rel:.2e}, nested {}, psi(0.25,-1)={psi_a}, psi(4,-1)={psi_b}", fam.nested && pairs),
    )
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (g(a) + g(b) + inner) * h / 3.0
}

/// Divergence oracle: after `t = e^{∓s}` the integral becomes
/// `∫_1^∞ e^{κs} s^β ds`; it converges iff the increments over successive
/// decades of `t` shrink geometrically.
fn oracle_converges(alpha: f64, beta: i32, near_zero: bool) -> bool {
    let kappa = if near_zero { -(alpha + 1.0) } else { alpha + 1.0 };
    let step = std::f64::consts::LN_10;
    let inc = |k: usize| {
        let a = 1.0 + k as f64 * step;
        simpson(|s| (kappa * s).exp() * s.powi(beta), a, a + step, 2000)
    };
    let (last, prev) = (inc(12), inc(11));
    last / prev < 0.7
}

fn c9_integrability() -> Outcome {
    let alphas = [r(-2, 1), r(-3, 2), r(-1, 1), r(-1, 2), r(0, 1), r(1, 2)];
    let e = std::f64::consts::E;
    let cells = [(Interval::open(0.0, 1.0 / e).unwrap(), true), (Interval::open(e, f64::INFINITY).unwrap(), false)];
    let mut agree = 0;
    let mut mismatches = Vec::new();
    for &alpha in &alphas {
        for beta in 0..=2u32 {
            for (iv, near_zero) in &cells {
                let f = PiecewisePowerLog::single_1d(*iv, PowerLogTerm::new_1d(1.0, 0.0, alpha, beta)).unwrap();
                let verdict = powerlog::is_integrable(&f).unwrap().iter().all(|v| v.integrable);
                let oracle = oracle_converges(*alpha.numer() as f64 / *alpha.denom() as f64, beta as i32, *near_zero);
                if verdict == oracle {
                    agree += 1;
                } else {
                    mismatches.push(format!("alpha={alpha} beta={beta} near_zero={near_zero}"));
                }
            }
        }
    }
    outcome(agree == 36 && mismatches.is_empty(), format!("{agree}/36 agree {mismatches:?}"))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect_files(root, &p, out);
        } else if p.file_name().is_some_and(|n| n != "run.json") {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
}

fn run_corpus(out: &Path, exec: Execution) -> BTreeMap<PathBuf, Vec<u8>> {
    let _ = std::fs::remove_dir_all(out);
    for path in scenario::scenario_files(Path::new(SCENARIOS)).unwrap() {
        scenario::run(&path, out, &Default::default(), None, OutputOptions { format: None, plots: true }, exec).unwrap();
    }
    let mut files = BTreeMap::new();
    collect_files(out, out, &mut files);
    files
}

fn c10_reproducible() -> Outcome {
    let base = std::env::temp_dir().join(format!("oscdecay-acceptance-{}", std::process::id()));
    let a = run_corpus(&base.join("a"), Execution::default());
    let b = run_corpus(&base.join("b"), Execution::Sequential);
    let _ = std::fs::remove_dir_all(&base);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let data_files = a.keys().filter(|k| k.extension().is_some_and(|x| x == "csv" || x == "json")).count();
    outcome(
        differing.is_empty() && data_files > 0,
        format!("{} files ({data_files} csv/json) compared across two runs, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("van der Corput battery", c1_vdc_battery),
        ("constants c_d", c2_constants),
        ("decay-exponent oracles", c3_decay_oracles),
        ("theoretical-exponent certification", c4_theoretical),
        ("Fourier pipeline", c5_fourier),
        ("homogeneous bases", c6_homog),
        ("hyperplane condition", c7_hyperplane),
        ("proofkit", c8_proofkit),
        ("integrability decision", c9_integrability),
        ("reproducibility", c10_reproducible),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failures += 1;
        }
        println!(
            "[{}] {:>2} {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
