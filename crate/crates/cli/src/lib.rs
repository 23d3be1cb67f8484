//! Command-line front end. Exit codes: 0 when every verdict passes, 1 when
//! some verdict fails, 2 for unparsable input, 3 for unmet preconditions.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use oscdecay::exec::Execution;
use oscdecay::scenario::{self, Analysis, Format, OutputOptions, Overrides, ScenarioError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "oscdecay", version, about = "Oscillatory-integral decay laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory; each scenario writes into <out-dir>/<name>/
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Quadrature tolerance (overrides the scenario)
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_max: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_points: Option<usize>,
    /// Write only this table format (default: both)
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, global = true)]
    pub no_plot: bool,
    /// Run sweeps on one thread
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every analysis listed in the scenario files (directories are expanded)
    Run {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// van der Corput certificate for the scenario's [vdc] section
    VdcVerify { scenario: PathBuf },
    /// Decay sampling, exponent fit and envelope certification
    DecayFit { scenario: PathBuf },
    /// Hyperplane condition, witness and counterexample or fiber estimates
    HyperplaneCheck { scenario: PathBuf },
    /// Fourier transform integrability check
    FourierCheck { scenario: PathBuf },
    /// Truncation-family and bound checks for one amplitude term
    Proofkit { scenario: PathBuf },
    /// Homogeneous basis (v_j·y)^d and monomial coefficients
    Basis {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: u32,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { tol: self.tol, seed: self.seed, lambda_min: self.lambda_min, lambda_max: self.lambda_max, lambda_points: self.lambda_points }
    }

    fn output(&self) -> OutputOptions {
        OutputOptions {
            format: self.format.map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            }),
            plots: !self.no_plot,
        }
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

/// Parse errors win over precondition failures, which win over verdicts.
fn worst(a: i32, b: i32) -> i32 {
    let rank = |c: i32| match c {
        EXIT_PARSE => 3,
        EXIT_PRECONDITION => 2,
        EXIT_FAIL => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, ScenarioError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(scenario::scenario_files(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn run_one(path: &Path, only: Option<Analysis>, c: &Common) -> i32 {
    match scenario::run(path, &c.out_dir, &c.overrides(), only, c.output(), c.exec()) {
        Ok(rec) => {
            for e in &rec.analyses {
                println!("{}/{}: {}", rec.scenario, e.analysis.name(), if e.verdict { "pass" } else { "FAIL" });
            }
            if rec.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            e.exit_code()
        }
    }
}

fn run_basis(m: usize, d: u32, c: &Common) -> i32 {
    let out = match scenario::basis_output(m, d) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let dir = c.out_dir.join(format!("basis-m{m}-d{d}"));
    if let Err(e) = scenario::write_output(&out, &dir, c.output()) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    print!("{}", String::from_utf8_lossy(&out.table.to_csv().unwrap_or_default()));
    println!("basis m={m} d={d}: {}", if out.verdict { "pass" } else { "FAIL" });
    if out.verdict {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Entry point shared by the binary and the tests.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let c = &cli.common;
    let single = |p: &PathBuf, a| run_one(p, Some(a), c);
    match &cli.command {
        Command::Run { paths } => match expand(paths) {
            Ok(files) => files.iter().map(|p| run_one(p, None, c)).fold(EXIT_PASS, worst),
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::VdcVerify { scenario } => single(scenario, Analysis::Vdc),
        Command::DecayFit { scenario } => single(scenario, Analysis::Decay),
        Command::HyperplaneCheck { scenario } => single(scenario, Analysis::Hyperplane),
        Command::FourierCheck { scenario } => single(scenario, Analysis::Fourier),
        Command::Proofkit { scenario } => single(scenario, Analysis::Proofkit),
        Command::Basis { m, d } => run_basis(*m, *d, c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_priority() {
        assert_eq!([0, 1, 3, 1].into_iter().fold(EXIT_PASS, worst), 3);
        assert_eq!([1, 2, 3].into_iter().fold(EXIT_PASS, worst), 2);
        assert_eq!([0, 0].into_iter().fold(EXIT_PASS, worst), 0);
    }
}
