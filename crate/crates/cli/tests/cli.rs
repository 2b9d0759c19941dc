use std::io::Write;
use std::process::{Command, Output};

use foliquant::chart::{FoliatedChart, FunctionField};
use foliquant::exprlang::ScalarFieldExpr;
use foliquant::quant::OperatorTable;
use foliquant::symtensor::MultiIndex;
use serde_json::Value;

const ADAPTED: &str = r#"
[dims]
p = 1
q = 2

[connection]
"Gamma[2][2][3]" = "y1 + 0.5*y2^2"
"Gamma[3][3][3]" = "0.3*y1"
"Gamma[1][1][2]" = "x1*y2"
"Gamma[1][3][3]" = "x1 + y1"

[symbol]
degree = 2
"S[2][3]" = "y1"
"S[3][3]" = "1 + y2^2"
"S[1][2]" = "x1"
"S[1][1]" = "x1*y1"

[function]
f = "sin(y1) + y2^3"

[points]
at = [[0.1, 0.2, -0.3], [0.4, -0.1, 0.2]]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foliquant"))
}

fn config(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn path(f: &tempfile::NamedTempFile) -> &str {
    f.path().to_str().unwrap()
}

#[test]
fn flat_config_is_valid() {
    let f = config("[dims]\np = 2\nq = 2\n");
    let out = run(&["validate", path(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["valid"], true);
}

#[test]
fn mixed_block_is_named() {
    let f = config(&ADAPTED.replace("Gamma[1][1][2]", "Gamma[2][1][2]"));
    let out = run(&["validate", path(&f)]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["violations"][0], "Γ^𝔨_{iλ}=0");
    assert!(String::from_utf8_lossy(&out.stderr).contains("Γ^𝔨_{iλ}=0"));
}

#[test]
fn x_dependent_symbol_is_flagged() {
    let f = config(&ADAPTED.replace(r#""S[3][3]" = "1 + y2^2""#, r#""S[3][3]" = "x1""#));
    let out = run(&["validate", path(&f)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_expression_reports_offset() {
    let f = config(&ADAPTED.replace("0.3*y1", "0.3*)y1"));
    let out = run(&["validate", path(&f)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("byte 4"), "{err}");
    assert!(err.contains("Gamma[3][3][3]"), "{err}");
}

#[test]
fn malformed_toml_is_a_parse_error() {
    let f = config("[dims\np = 1");
    assert_eq!(run(&["validate", path(&f)]).status.code(), Some(2));
}

#[test]
fn degree_zero_is_multiplication() {
    let text = r#"
[dims]
p = 1
q = 2
[connection]
"Gamma[2][2][3]" = "y1"
[symbol]
degree = 0
"S" = "2 + y1*y2"
[function]
f = "x1^2 + cos(y2)"
[points]
at = [[0.3, -0.2, 0.5]]
"#;
    let f = config(text);
    let out = run(&["quantize", path(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let got = json(&out)["value"].as_f64().unwrap();
    let want = (2.0 + (-0.2f64) * 0.5) * (0.09 + 0.5f64.cos());
    assert!((got - want).abs() < 1e-12, "{got} {want}");
}

#[test]
fn foliated_mode_matches_adapted() {
    let f = config(ADAPTED);
    for point in ["0", "1"] {
        let a = json(&run(&["quantize", path(&f), "--point", point]));
        let b = json(&run(&["quantize", path(&f), "--mode", "foliated", "--point", point]));
        let (a, b) = (a["value"].as_f64().unwrap(), b["value"].as_f64().unwrap());
        assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} {b}");
    }
}

#[test]
fn codimension_one_is_rejected() {
    let text = "[dims]\np = 1\nq = 1\n[symbol]\ndegree = 0\nS = \"1\"\n[function]\nf = \"y1\"\n[points]\nat = [[0.0, 0.0]]\n";
    let f = config(text);
    let out = run(&["quantize", path(&f)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different from 1"));
}

#[test]
fn emitted_operator_round_trips() {
    let f = config(ADAPTED);
    let out = run(&["quantize", path(&f), "--emit-operator", "--point", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let op = &v["operator"];
    assert_eq!(op["k"], 2);
    assert_eq!(op["q"], 2);
    assert_eq!(op["c"][1]["exact"], "2/5");
    let coefficients: Vec<(MultiIndex, f64)> = op["coefficients"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(key, c)| {
            let e: Vec<usize> = key.split(',').map(|s| s.parse().unwrap()).collect();
            (MultiIndex::new(e), c.as_f64().unwrap())
        })
        .collect();
    assert_eq!(coefficients.len(), 10);
    let base: Vec<f64> = op["base_point"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    let table = OperatorTable {
        base_point: base,
        degree: 2,
        dim: 3,
        coefficients,
    };
    let chart = FoliatedChart::cube(1, 2, 1.0).unwrap();
    let func = FunctionField::from_expr(chart, ScalarFieldExpr::parse("sin(y1) + y2^3", 1, 2).unwrap());
    let value = v["value"].as_f64().unwrap();
    assert!((table.apply(&func).unwrap() - value).abs() < 1e-10);
}

#[test]
fn verify_single_suite_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for target in [&a, &b] {
        let out = run(&[
            "verify",
            "--suite",
            "normality",
            "--seed",
            "7",
            "--connections",
            "2",
            "--points",
            "3",
            "--json",
            target.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["reports"].as_array().unwrap().len(), 1);
    assert_eq!(v["reports"][0]["name"], "normality");
}

#[test]
fn verify_all_small_grid_passes() {
    let out = run(&["verify", "--connections", "1", "--points", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["reports"].as_array().unwrap().len(), 23);
}

#[test]
fn seed_override_from_environment() {
    let out = bin()
        .args(["verify", "--suite", "bianchi", "--connections", "1", "--points", "1"])
        .env("FOLIQUANT_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(json(&out)["seed"], 99);
}

#[test]
fn unknown_suite_lists_names() {
    let out = run(&["verify", "--suite", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("normality") && err.contains("q1-rejection"), "{err}");
}
