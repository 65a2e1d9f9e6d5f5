use std::process::Command;

use serde_json::Value;
use tancert::fixtures::BUILTIN;
use tancert::report::untagged_number;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tancert")).args(args).output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut all = args.to_vec();
    all.push("--json");
    let (code, stdout, stderr) = run(&all);
    let v = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("{e}: {stdout}{stderr}"));
    (code, v)
}

fn find<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    match v {
        Value::Object(m) => m.get(key).or_else(|| m.values().find_map(|x| find(x, key))),
        Value::Array(a) => a.iter().find_map(|x| find(x, key)),
        _ => None,
    }
}

#[test]
fn certify_interval_multipliers() {
    let (code, v) = json(&["certify", "--instance", "ex42", "--x", "0"]);
    assert_eq!(code, 0);
    let lambda: Vec<f64> = serde_json::from_value(find(&v, "lambda").unwrap().clone()).unwrap();
    assert!((lambda[0] - 1.0 / 3.0).abs() < 1e-6 && lambda[1] == 0.0, "{lambda:?}");
}

#[test]
fn cq_reports_nacq_without_nrcq() {
    let (code, v) = json(&["cq", "--instance", "ex21"]);
    assert_eq!(code, 0);
    assert_eq!(find(&find(&v, "nrcq").unwrap(), "holds"), Some(&Value::Bool(false)));
    assert_eq!(find(&find(&v, "nacq").unwrap(), "holds"), Some(&Value::Bool(true)));
    let (code, _, _) = run(&["cq", "--instance", "ex31"]);
    assert_eq!(code, 1);
}

#[test]
fn malformed_instance_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"n\": 1,\n  \"constraints\": [\n").unwrap();
    let (code, _, stderr) = run(&["inspect", "--instance", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 4"), "{stderr}");
    let (code, _, _) = run(&["inspect", "--instance", "no-such-instance"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["certify", "--instance", "ex42", "--x", "1,2"]);
    assert_eq!(code, 2);
}

#[test]
fn reports_are_reproducible_and_tagged() {
    for cmd in ["inspect", "cones", "cq", "project", "certify", "chip", "audit"] {
        for (id, _) in BUILTIN {
            let args = ["--instance", id, "--json"];
            let all: Vec<&str> = std::iter::once(cmd).chain(args).collect();
            let (c1, a, _) = run(&all);
            let (c2, b, _) = run(&all);
            assert_eq!(c1, c2);
            assert_eq!(a, b, "{cmd} {id} differs between runs");
            let v: Value = serde_json::from_str(&a).unwrap();
            assert_eq!(untagged_number(&v), None, "{cmd} {id}");
        }
    }
}

#[test]
fn perturbed_fixture_fails_by_name() {
    let dir = tempfile::tempdir().unwrap();
    for (id, text) in BUILTIN {
        let text = if id == "ex42" { text.replace("\"strong_chip\": true", "\"strong_chip\": false") } else { text.to_string() };
        std::fs::write(dir.path().join(format!("{id}.json")), text).unwrap();
    }
    let (code, stdout, _) = run(&["paper-examples", "--fixtures", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("FAIL ex42"), "{stdout}");
    assert!(stdout.contains("5 of 6 fixtures passed"), "{stdout}");
    let (code, stdout, _) = run(&["paper-examples"]);
    assert_eq!(code, 0, "{stdout}");
}
