use std::process::Command;

use serde_json::Value;
use wigner_ldp::cli::run;

const UNCLASSIFIED: &str = "gauss_rademacher_mix:a=0.1,b=0.9428090415820634,bvar=2";

fn run_ok(args: &[&str]) -> String {
    let mut out = Vec::new();
    let code = run(std::iter::once("wigner-ldp").chain(args.iter().copied()), &mut out);
    assert_eq!(code, 0, "{args:?}");
    String::from_utf8(out).unwrap()
}

fn code_of(args: &[&str]) -> i32 {
    run(std::iter::once("wigner-ldp").chain(args.iter().copied()), &mut Vec::new())
}

/// Data rows of CSV output, without comment lines and the column header.
fn csv_rows(out: &str) -> Vec<Vec<String>> {
    out.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn header(out: &str) -> Value {
    serde_json::from_str(out.lines().next().unwrap().trim_start_matches("# ")).unwrap()
}

#[test]
fn igoe_rows() {
    let out = run_ok(&["igoe", "--xmin", "2", "--xmax", "4", "--steps", "3"]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 3);
    let i: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(i[0], 0.0);
    let expect = 0.75 * 5.0f64.sqrt() - ((3.0 + 5.0f64.sqrt()) / 2.0).ln();
    assert!((i[1] - expect).abs() < 1e-12);
    assert!(i[2] > i[1]);
    assert_eq!(header(&out)["command"], "igoe");
}

#[test]
fn fcurve_below_threshold_is_quadratic() {
    let out = run_ok(&["fcurve", "--law", "sparse_gaussian:p=0.5", "--theta-min", "0.1", "--theta-max", "0.5", "--steps", "5"]);
    for r in csv_rows(&out) {
        let t: f64 = r[0].parse().unwrap();
        let f: f64 = r[1].parse().unwrap();
        assert!((f - t * t).abs() < 1e-9, "{r:?}");
        assert_eq!(r[2], "SmallTheta");
    }
}

#[test]
fn output_is_deterministic() {
    let args = ["rate", "--law", "three_point:p=0.2", "--xmin", "2", "--xmax", "4", "--steps", "5", "--emit-theta"];
    assert_eq!(run_ok(&args), run_ok(&args));
    let sim = ["simulate", "--law", "rademacher", "--N", "40", "--samples", "3", "--seed", "5"];
    assert_eq!(run_ok(&sim), run_ok(&sim));
    let other = ["simulate", "--law", "rademacher", "--N", "40", "--samples", "3", "--seed", "6"];
    assert_ne!(csv_rows(&run_ok(&sim)), csv_rows(&run_ok(&other)));
}

#[test]
fn emitted_spec_round_trips() {
    for law in ["sparse_gaussian:p=0.5", "three_point:p=0.2", "gauss_rademacher_mix:a=0.5,b=0.7071067811865476,bvar=1.5"] {
        let spec = run_ok(&["laws", "inspect", "--law", law, "--emit-spec"]);
        let a = header(&run_ok(&["laws", "inspect", "--law", law]))["law"].clone();
        let b = header(&run_ok(&["laws", "inspect", "--law", spec.trim()]))["law"].clone();
        for key in ["a", "b"] {
            let (x, y) = (a[key].as_f64().unwrap(), b[key].as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12, "{law} {key}");
        }
        assert_eq!(a["classification"], b["classification"]);
    }
}

#[test]
fn spec_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("law.json");
    std::fs::write(&path, run_ok(&["laws", "inspect", "--law", "sparse_gaussian:p=0.5", "--emit-spec"])).unwrap();
    let out = run_ok(&["laws", "inspect", "--law", path.to_str().unwrap()]);
    assert_eq!(header(&out)["law"]["classification"], "IncreasingPsi");
}

#[test]
fn json_format() {
    let out = run_ok(&["--format", "json", "fcurve", "--law", "rademacher", "--theta-min", "0.5", "--theta-max", "1", "--steps", "2"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["header"]["law"]["classification"], "SharpSubGaussian");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["F"].as_f64(), Some(1.0));
}

#[test]
fn output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("igoe.csv");
    let stdout = run_ok(&["igoe", "--xmin", "2", "--xmax", "3", "--steps", "2", "-o", path.to_str().unwrap()]);
    assert!(stdout.is_empty());
    assert_eq!(csv_rows(&std::fs::read_to_string(&path).unwrap()).len(), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(code_of(&["fcurve", "--law", "no_such_law", "--theta-min", "1", "--theta-max", "2", "--steps", "2"]), 2);
    assert_eq!(code_of(&["simulate", "--law", "rademacher", "--N", "5000", "--samples", "1"]), 2);
    assert_eq!(code_of(&["fcurve", "--law", UNCLASSIFIED, "--theta-min", "1", "--theta-max", "2", "--steps", "2"]), 3);
    assert_eq!(
        code_of(&["fcurve", "--law", UNCLASSIFIED, "--theta-min", "1", "--theta-max", "2", "--steps", "2", "--allow-upper-bound"]),
        0
    );
    let tilt = ["tilt", "--law", "gaussian", "--N-list", "50", "--x", "2.5", "--theta", "1", "--samples", "200"];
    assert_eq!(code_of(&tilt), 4);
}

#[test]
fn upper_bound_rows_are_flagged() {
    let out = run_ok(&["rate", "--law", UNCLASSIFIED, "--xmin", "2.5", "--xmax", "3", "--steps", "2", "--allow-upper-bound"]);
    assert!(csv_rows(&out).iter().all(|r| r.last().unwrap() == "false"));
}

#[test]
fn localize_and_tilt_tables() {
    let out = run_ok(&["localize", "--law", "gaussian", "--N", "60", "--samples", "2", "--tilt-theta", "1.5"]);
    assert_eq!(csv_rows(&out).len(), 2);
    let out = run_ok(&["tilt", "--law", "gaussian", "--N-list", "20,30", "--x", "2.2", "--theta", "0.3", "--delta", "1", "--samples", "300"]);
    assert_eq!(csv_rows(&out).len(), 2);
}

#[test]
fn binary_reports_errors_on_stderr() {
    let out = Command::new(env!("CARGO_BIN_EXE_wigner-ldp"))
        .args(["rate", "--law", "no_such_law", "--xmin", "2", "--xmax", "3", "--steps", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
    let ok = Command::new(env!("CARGO_BIN_EXE_wigner-ldp")).args(["laws", "list"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}
