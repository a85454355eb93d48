use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_heightinterp"));
    c.env_remove("HEIGHTINTERP_PROFILE");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON output")
}

#[test]
fn height_examples() {
    let o = run(&["height", "h", "7/6"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("= 7"));
    assert_eq!(run(&["height", "S", "2/3", "5/7", "21"]).status.code(), Some(0));
    let o = run(&["--json", "height", "H", "7", "--", "1/2", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o)["holds"], false);
    assert_eq!(run(&["height", "h", "1/0"]).status.code(), Some(2));
}

#[test]
fn curve_examples() {
    assert_eq!(stdout(&run(&["curve", "mul", "2"])).trim(), "(17/4, -71/8)");
    assert_eq!(stdout(&run(&["curve", "mul", "-2"])).trim(), "(17/4, 71/8)");
    let o = run(&["--json", "curve", "hhat", "--k", "8"]);
    let lo: f64 = json(&o)["hhat"]["lo"].as_f64().unwrap();
    let hi: f64 = json(&o)["hhat"]["hi"].as_f64().unwrap();
    assert!(lo <= 0.7545769 && 0.7545769 <= hi);
    let o = run(&["curve", "gap", "--range", "8", "--k", "8"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(run(&["curve", "add", "(1, 1)", "(-1, 1)"]).status.code(), Some(2));
}

#[test]
fn slack_examples() {
    let o = run(&["slack", "--cE", "4"]);
    let text = stdout(&o);
    for v in ["160", "240", "84"] {
        assert!(text.contains(v), "{text}");
    }
    assert_eq!(run(&["slack", "--cE", "4", "--check-N", "200"]).status.code(), Some(0));
    assert_eq!(run(&["slack", "--cE", "4", "--check-N", "30"]).status.code(), Some(0));
    assert_eq!(run(&["slack", "--cE", "4", "--check-N", "5"]).status.code(), Some(1));
}

#[test]
fn encode_decode() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("c.json");
    let o = run(&["encode", "7", "--N", "30", "--mmax", "10", "--out", cert.to_str().unwrap()]);
    assert!(o.status.success());
    let o = run(&["decode", cert.to_str().unwrap(), "--N", "30", "--mmax", "10"]);
    assert_eq!(stdout(&o).trim(), "7");
    let o = run(&["--json", "encode", "0", "--N", "30"]);
    assert_eq!(json(&o)["q"], "1");
    // past m_max
    assert_eq!(run(&["encode", "11", "--N", "30", "--mmax", "10"]).status.code(), Some(2));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn compile_witness_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = write(d, "f.sexp", "(exists (x) (= (+ x x) (+ 1 1 1 1)))");
    let a = write(d, "a.json", r#"{"x": 2}"#);
    let s = d.join("s.sexp").to_str().unwrap().to_string();
    let w = d.join("w.json").to_str().unwrap().to_string();
    let prof = ["--N", "30", "--mmax", "8"];
    let mut args = vec!["compile", &f, "--sentence-out", &s];
    args.extend(prof);
    assert!(run(&args).status.success());
    let mut args = vec!["witness-up", &f, &a, "--out", &w];
    args.extend(prof);
    assert!(run(&args).status.success());
    assert_eq!(stdout(&run(&["check", &s, &w])).trim(), "accept");

    let cfg = write(d, "p.cfg", &format!("N = 30\nm_max = 8\nformula = {f}\nwitness = {w}\n"));
    let o = bin().env("HEIGHTINTERP_PROFILE", &cfg).args(["--json", "witness-down"]).output().unwrap();
    assert!(o.status.success());
    assert_eq!(json(&o)["x"], 2);

    let bad = write(d, "b.json", r#"{"x": 3}"#);
    let mut args = vec!["witness-up", &f, &bad];
    args.extend(prof);
    assert_eq!(run(&args).status.code(), Some(2));

    let mut wit: serde_json::Map<String, Value> = serde_json::from_str(&std::fs::read_to_string(&w).unwrap()).unwrap();
    wit.insert("x".into(), Value::String("2".into()));
    let w2 = write(d, "w2.json", &serde_json::to_string(&wit).unwrap());
    assert_eq!(run(&["check", &s, &w2]).status.code(), Some(1));
}

#[test]
fn verify_lemmas_suites() {
    let o = run(&["verify-lemmas", "--suite", "heights", "--samples", "200"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let o = run(&["--json", "verify-lemmas", "--suite", "gadgets", "--samples", "20"]);
    assert!(o.status.success());
    assert_eq!(json(&o)["ok"], true);
    let o = run(&["verify-lemmas", "--suite", "interp", "--N", "30", "--mmax", "20"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(run(&["verify-lemmas", "--suite", "nonsense"]).status.code(), Some(2));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "N = 30\nm_max = 3\n");
    let o = run(&["--json", "--config", &cfg, "profile"]);
    assert_eq!(json(&o)["m_max"], 3);
    let o = run(&["--json", "--config", &cfg, "--mmax", "4", "profile"]);
    assert_eq!(json(&o)["m_max"], 4);
}
