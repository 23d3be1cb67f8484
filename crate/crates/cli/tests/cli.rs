use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCENARIOS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");

fn scenario(name: &str) -> PathBuf {
    Path::new(SCENARIOS).join(name)
}

fn oscdecay(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscdecay"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn oscdecay")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn sinc_decay_passes_and_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscdecay(tmp.path(), &["decay-fit", scenario("01-sinc.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "sinc/decay: pass");
    let dir = tmp.path().join("sinc").join("decay");
    for f in ["data.csv", "report.json", "plot.svg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report = json(&dir.join("report.json"));
    assert_eq!(report["verdict"], true);
    let p = report["report"]["runs"][0]["fit"]["p_hat"].as_f64().unwrap();
    assert!((p - 1.0).abs() < 0.05, "{p}");
    let csv = std::fs::read_to_string(dir.join("data.csv")).unwrap();
    let mut lines = csv.split("\r\n");
    assert!(lines.next().unwrap().starts_with("x_index,lambda,abs_f,envelope"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    // 17 significant digits: one before the point, sixteen after
    let mantissa = first[1].split('e').next().unwrap();
    assert_eq!(mantissa.len(), 18, "{}", first[1]);
    let svg = std::fs::read_to_string(dir.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<?xml") && svg.contains("<svg") && svg.contains("class=\"sample"));
    let run = json(&tmp.path().join("sinc").join("run.json"));
    assert_eq!(run["pass"], true);
    assert_eq!(run["scenario_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn failing_hyperplane_exits_one_with_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscdecay(tmp.path(), &["hyperplane-check", scenario("04-hyperplane-fail.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("hyperplane-fail/hyperplane: FAIL"));
    let report = json(&tmp.path().join("hyperplane-fail/hyperplane/report.json"));
    let w = &report["report"]["verdict"]["witness"];
    let xi: Vec<f64> = w["xi"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let b = w["b"].as_f64().unwrap();
    // ξ·(y, 2y + 3) = b for every y
    for y in [-3.0, 0.0, 0.5, 7.0] {
        assert!((xi[0] * y + xi[1] * (2.0 * y + 3.0) - b).abs() < 1e-10);
    }
    for row in report["report"]["counterexample"]["rows"].as_array().unwrap() {
        assert!((row["abs_f"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn parse_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", "name = \"x\"\nanalyses = [\"bogus\"]\n");
    assert_eq!(code(&oscdecay(tmp.path(), &["run", bad.to_str().unwrap()])), 2);
    let unknown = write(tmp.path(), "unknown.toml", "name = \"x\"\nanalyses = []\ncolour = 3\n");
    assert_eq!(code(&oscdecay(tmp.path(), &["run", unknown.to_str().unwrap()])), 2);
    let expr = write(
        tmp.path(),
        "expr.toml",
        "name = \"x\"\nanalyses = [\"hyperplane\"]\n[phase]\ncomponents = [\"y1 +\"]\n[hyperplane]\nregion = [{ lo = 0.0, hi = 1.0 }]\n",
    );
    assert_eq!(code(&oscdecay(tmp.path(), &["run", expr.to_str().unwrap()])), 2);
    assert_eq!(code(&oscdecay(tmp.path(), &["--frobnicate", "run", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&oscdecay(tmp.path(), &["--format", "xml", "basis", "--m", "2", "--d", "2"])), 2);
    assert_eq!(code(&oscdecay(tmp.path(), &[])), 2);
}

#[test]
fn precondition_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    // the 2-D scenario has no 1-D amplitude for the Fourier check
    let o = oscdecay(tmp.path(), &["fourier-check", scenario("15-square-2d.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert_eq!(code(&oscdecay(tmp.path(), &["run", tmp.path().join("missing.toml").to_str().unwrap()])), 3);
    // too few points left in the fit window
    let o = oscdecay(tmp.path(), &["--lambda-points", "16", "decay-fit", scenario("01-sinc.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn empty_analysis_list_passes_with_record_only() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "empty.toml", "name = \"empty\"\nanalyses = []\n");
    let o = oscdecay(&tmp.path().join("out"), &["run", s.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let entries: Vec<_> = std::fs::read_dir(tmp.path().join("out/empty")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, ["run.json"]);
}

#[test]
fn format_and_plot_flags_select_files() {
    let tmp = tempfile::tempdir().unwrap();
    let s = scenario("09-basis-m3-d4.toml");
    let o = oscdecay(tmp.path(), &["--format", "json", "--no-plot", "run", s.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let dir = tmp.path().join("basis-m3-d4/basis");
    assert!(dir.join("report.json").is_file());
    assert!(!dir.join("data.csv").exists() && !dir.join("plot.svg").exists());
    let o = oscdecay(tmp.path(), &["--format", "csv", "run", s.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(dir.join("data.csv").is_file());
}

#[test]
fn lambda_overrides_change_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--lambda-min", "100", "--lambda-max", "1000", "--lambda-points", "40", "decay-fit"];
    let s = scenario("01-sinc.toml");
    let o = oscdecay(tmp.path(), &[&args[..], &[s.to_str().unwrap()]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("sinc/decay/data.csv")).unwrap();
    assert_eq!(csv.trim_end().split("\r\n").count(), 41);
    assert!(csv.split("\r\n").nth(1).unwrap().starts_with("0,1.0000000000000000e2,"));
}

#[test]
fn basis_subcommand_prints_coefficients() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscdecay(tmp.path(), &["basis", "--m", "2", "--d", "3"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("j,dir_1,dir_2,v_1,v_2,"));
    assert!(out.trim_end().ends_with("basis m=2 d=3: pass"));
    // four basis vectors for binomial(4, 3) monomials
    assert_eq!(out.lines().count(), 1 + 4 + 1);
    assert!(tmp.path().join("basis-m2-d3/report.json").is_file());
    assert_eq!(code(&oscdecay(tmp.path(), &["basis", "--m", "0", "--d", "3"])), 3);
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let files = ["02-triangle.toml", "05-moment-curve.toml", "08-proofkit-inverse-sqrt.toml"].map(|n| scenario(n).to_str().unwrap().to_string());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args: Vec<&str> = vec!["run"];
    args.extend(files.iter().map(String::as_str));
    assert_eq!(code(&oscdecay(&a, &args)), 0);
    let mut seq = vec!["--sequential"];
    seq.extend(&args);
    assert_eq!(code(&oscdecay(&b, &seq)), 0);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() >= 9);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
}

#[test]
fn directory_run_covers_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscdecay(tmp.path(), &["run", SCENARIOS]);
    // one scenario fails by design
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.ends_with("FAIL")).collect::<Vec<_>>(), ["hyperplane-fail/hyperplane: FAIL"]);
    for a in ["vdc", "decay", "hyperplane", "proofkit", "fourier", "basis"] {
        assert!(out.lines().any(|l| l.contains(&format!("/{a}: pass"))), "{a}");
    }
    let names: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert!(names.len() >= 12);
}
