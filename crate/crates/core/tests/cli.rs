use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn skewlab(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_skewlab"))
        .arg("--config")
        .arg(&path)
        .args(extra)
        .output()
        .unwrap()
}

fn body(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

fn json_out(dir: &Path, config: &str) -> Value {
    let out = dir.join("report.json");
    let o = skewlab(dir, config, &["--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn gamma_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = json_out(
        dir.path(),
        r#"{"command":"gamma","base":{"kind":"golden_rotation"},
            "scalar_cocycle":{"kind":"cos_profile","p":2,"q":1},"horizon":1000000}"#,
    );
    let g = r["summary"]["gamma"].as_f64().unwrap();
    assert!((g - ((2.0 + 3f64.sqrt()) / 2.0).ln()).abs() < 1e-9);
    assert_eq!(r["config"]["command"], "gamma");
    assert_eq!(r["rows"][0]["estimator"], "quadrature");
}

#[test]
fn example1_constraint_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = skewlab(dir.path(), r#"{"command":"example1","gamma":1,"epsilon":1.5}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(γ−ε) > 0"));
}

#[test]
fn coboundary_zero_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let r = json_out(
        dir.path(),
        r#"{"command":"coboundary","base":{"kind":"odometer","depth":8},
            "int_cocycle":{"kind":"constant","value":0},"horizon":100}"#,
    );
    assert_eq!(r["summary"]["verdict"], "bounded_within_horizon");
}

#[test]
fn csv_bodies_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command":"criterion","weights":{"rule":"constant","w":2},"gamma":0,"seed":3,"horizon":500}"#;
    let a = skewlab(dir.path(), config, &["--quiet"]);
    let b = skewlab(dir.path(), config, &["--quiet"]);
    assert_eq!(a.status.code(), Some(0));
    let (a, b) = (String::from_utf8(a.stdout).unwrap(), String::from_utf8(b.stdout).unwrap());
    assert_eq!(body(&a), body(&b));
    assert!(a.lines().any(|l| l.starts_with("# config: ") && l.contains("\"seed\":3")));
    assert!(body(&a).starts_with("vector_id,condition,k,n_k,log_value,threshold_log,margin,value"));
    assert!(!body(&a).contains("-0.0000000000000000e0"));
    let c = String::from_utf8(skewlab(dir.path(), config, &["--quiet", "--seed", "4"]).stdout).unwrap();
    assert!(c.lines().any(|l| l.starts_with("# config: ") && l.contains("\"seed\":4")));
}

#[test]
fn horizon_and_format_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let o = skewlab(
        dir.path(),
        r#"{"command":"furstenberg","grid":4}"#,
        &["--horizon", "3", "--format", "json", "--quiet"],
    );
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["summary"]["steps"], 3);
    assert_eq!(r["config"]["horizon"], 3);
    assert_eq!(r["rows"].as_array().unwrap().len(), 16);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(skewlab(dir.path(), r#"{"command":"launch"}"#, &[]).status.code(), Some(2));
    assert_eq!(skewlab(dir.path(), "not json", &[]).status.code(), Some(2));
    assert_eq!(skewlab(dir.path(), r#"{"command":"hitting"}"#, &[]).status.code(), Some(2));
    let zero = r#"{"command":"criterion","weights":{"rule":"table","values":[1,0,1]},"gamma":0,"seed":1,"horizon":50}"#;
    assert_eq!(skewlab(dir.path(), zero, &[]).status.code(), Some(3));
    let missing = Command::new(env!("CARGO_BIN_EXE_skewlab"))
        .args(["--config", dir.path().join("absent.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let o = skewlab(
        dir.path(),
        r#"{"command":"gamma","base":{"kind":"golden_rotation"},"scalar_cocycle":{"kind":"exp_gamma","gamma":1}}"#,
        &["--out", dir.path().join("no/such/dir/out.csv").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn hitting_and_product_hitting() {
    let dir = tempfile::tempdir().unwrap();
    let single = r#"{"command":"hitting","base":{"kind":"golden_rotation"},
        "scalar_cocycle":{"kind":"exp_gamma","gamma":0},"weights":{"rule":"constant","w":2},
        "horizon":60,"boxes":{
          "u":{"base_center":{"kind":"circle","x":0},"base_radius":1,"fiber_center":[[2,1,0]],"fiber_radius":0.1},
          "v":{"base_center":{"kind":"circle","x":0},"base_radius":1,"fiber_center":[[1,2,0]],"fiber_radius":0.3}}}"#;
    let r = json_out(dir.path(), single);
    assert_eq!(r["summary"]["mode"], "exact");
    assert_eq!(r["rows"][1]["hit"], true);
    assert!(r["summary"]["stats"]["cofinite_tail_start"].as_u64().unwrap() <= 30);

    let product = single.replace(
        r#""fiber_radius":0.3}}}"#,
        r#""fiber_radius":0.3},
          "u2":{"base_center":{"kind":"circle","x":0},"base_radius":1,"fiber_center":[[1,1,0]],"fiber_radius":0.1},
          "v2":{"base_center":{"kind":"circle","x":0},"base_radius":1,"fiber_center":[[1,1,0]],"fiber_radius":0}}}"#,
    );
    let r = json_out(dir.path(), &product);
    assert_eq!(r["summary"]["hit_count"], 0);
}

#[test]
fn intskew_and_examples() {
    let dir = tempfile::tempdir().unwrap();
    let r = json_out(
        dir.path(),
        r#"{"command":"intskew","base":{"kind":"golden_rotation"},"int_cocycle":{"kind":"constant","value":1},
            "weights":{"rule":"split","left":0.5,"right":2},"horizon":200,"samples":4,"boxes":{
            "u":{"base_center":{"kind":"circle","x":0},"base_radius":1,"fiber_center":[[0,1,0]],"fiber_radius":0.1},
            "v":{"base_center":{"kind":"circle","x":0},"base_radius":1,"fiber_center":[[3,-1,0]],"fiber_radius":0.1}}}"#,
    );
    assert!(r["summary"]["hit_count"].as_u64().unwrap() > 0);

    let r = json_out(dir.path(), r#"{"command":"example1","horizon":100000}"#);
    assert_eq!(r["summary"]["along_rk"]["verdict"]["verdict"], "transitive_certificate");
    assert_eq!(r["summary"]["along_full"]["verdict"]["verdict"], "fail");

    let r = json_out(dir.path(), r#"{"command":"example2","horizon":1000,"identity_horizon":5000}"#);
    assert_eq!(r["summary"]["identity_violations"], 0);
    assert_eq!(r["summary"]["non_window_hits"].as_array().unwrap().len(), 0);

    let r = json_out(
        dir.path(),
        r#"{"command":"dichotomy","weights":{"rule":"constant","w":0.25},"gamma":1,"horizon":2000}"#,
    );
    assert_eq!(r["summary"]["comparison"], "below");

    let r = json_out(
        dir.path(),
        r#"{"command":"cocycle","base":{"kind":"odometer","depth":8},
            "int_cocycle":{"kind":"odometer_coboundary","depth":2,"g":[1,-3,0,2]},"seed":5}"#,
    );
    assert_eq!(r["summary"]["violations"], 0);
    assert_eq!(r["summary"]["checked"], 100);
}
