use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dispml_cli::scenarios::{names, CommandKind};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dispml");

fn dispml(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn validate_dir(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let stem = path.file_stem().unwrap().to_str().unwrap();
            let schema = json(&schema_dir().join(format!("{stem}.schema.json")));
            let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
            let doc = json(&path);
            let msgs: Vec<String> = match compiled.validate(&doc) {
                Ok(()) => Vec::new(),
                Err(errs) => errs.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
            };
            assert!(msgs.is_empty(), "{} fails its schema: {msgs:?}", path.display());
        }
    }
}

fn kinds() -> [CommandKind; 4] {
    [CommandKind::Certify, CommandKind::Assemble, CommandKind::Simulate, CommandKind::Fixedpoint]
}

#[test]
fn every_scenario_output_matches_the_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in kinds() {
        for name in names(kind) {
            let out = tmp.path().join(format!("{}-{name}", kind.as_str()));
            let o = dispml(&[kind.as_str(), "--scenario", name, "--out", out.to_str().unwrap()]);
            // Expectation mismatches still write their reports.
            assert!(matches!(code(&o), 0 | 3), "{} {name}: {}", kind.as_str(), String::from_utf8_lossy(&o.stderr));
            assert!(out.join("manifest.json").exists());
            validate_dir(&out);
        }
    }
}

#[test]
fn certify_exit_codes_follow_the_expectation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(code(&dispml(&["certify", "--scenario", "lorentz", "--expect", "unstable", "--out", out])), 0);
    assert_eq!(code(&dispml(&["certify", "--scenario", "lorentz", "--expect", "stable", "--out", out])), 3);
    assert_eq!(code(&dispml(&["certify", "--scenario", "debye", "--expect", "stable", "--out", out])), 0);
    assert_eq!(code(&dispml(&["certify", "--scenario", "debye", "--expect", "unstable", "--out", out])), 3);
    let o = dispml(&["certify", "--scenario", "cfs-vacuum", "--expect", "stable", "--out", out]);
    assert_eq!(code(&o), 0);
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.starts_with("cfs-vacuum: Accretive") && line.contains("[expect stable: ok]"), "{line}");
}

#[test]
fn lorentz_certificate_carries_a_negative_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dispml(&["certify", "--scenario", "lorentz", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let c = json(&tmp.path().join("certificate.json"));
    assert_eq!(c["certificate"]["verdict"], "NotAccretive");
    assert!(c["certificate"]["counterexample"]["value"].as_f64().unwrap() < 0.0);
    assert_eq!(c["stable"], false);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&dispml(&["certify", "--scenario", "nope", "--out", out])), 2);
    assert_eq!(code(&dispml(&["certify", "--out", out])), 2);
    assert_eq!(code(&dispml(&["certify", "--scenario", "custom", "--out", out])), 2);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "material = 3\n").unwrap();
    assert_eq!(code(&dispml(&["certify", "--config", bad.to_str().unwrap(), "--out", out])), 2);
    assert_eq!(
        code(&dispml(&["certify", "--config", bad.to_str().unwrap(), "--scenario", "debye", "--out", out])),
        2
    );
    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, "variant = \"dispersion\"\nsampels = 3\n").unwrap();
    assert_eq!(code(&dispml(&["assemble", "--config", typo.to_str().unwrap(), "--out", out])), 2);
    let missing = tmp.path().join("missing.toml");
    assert_ne!(code(&dispml(&["simulate", "--config", missing.to_str().unwrap(), "--out", out])), 0);
    // dt above the CFL limit.
    let cfl = tmp.path().join("cfl.toml");
    fs::write(
        &cfl,
        "[sim]\nvariant = \"dispersion\"\nn_steps = 10\ndt = 1.0\n[sim.grid]\nn_cells = 10\ndx = 0.1\n",
    )
    .unwrap();
    assert_eq!(code(&dispml(&["simulate", "--config", cfl.to_str().unwrap(), "--out", out])), 2);
    // A stretch that does not fit the variant.
    let mism = tmp.path().join("mism.toml");
    fs::write(&mism, "variant = \"dispersion-cfs\"\n[stretch]\nkind = \"uniaxial\"\nsigma = 1.0\n").unwrap();
    assert_eq!(code(&dispml(&["assemble", "--config", mism.to_str().unwrap(), "--out", out])), 2);
}

#[test]
fn json_configs_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("debye.json");
    fs::write(
        &cfg,
        r#"{"name": "debye-json", "component": "electric", "material": {"debye": [{"a": 1.0, "b": 1.0}]}}"#,
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = dispml(&["certify", "--config", cfg.to_str().unwrap(), "--expect", "stable", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"], cfg.to_str().unwrap());
    assert_eq!(m["command"], "certify");
}

#[test]
fn literal_s3_toggle_fails_the_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = dispml(&["assemble", "--scenario", "dispersion-cfs-mixed", "--paper-literal-s3", "--out", out]);
    assert_eq!(code(&o), 3);
    let r = json(&tmp.path().join("tf_report.json"));
    assert_eq!(r["pass"], false);
    assert!(r["max_rel_error_electric"].as_f64().unwrap() > 1e-3);
    assert_eq!(json(&tmp.path().join("blocksystem.json"))["s3"], "literal");
    for s in ["dispersion-mixed", "vacuum", "dispersion-cfs-mixed", "cfs-vacuum"] {
        assert_eq!(code(&dispml(&["assemble", "--scenario", s, "--out", out])), 0, "{s}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(code(&dispml(&["assemble", "--scenario", "dispersion-mixed", "--seed", "7", "--out", out])), 0);
    assert_eq!(json(&tmp.path().join("tf_report.json"))["seed"], 7);
    assert_eq!(json(&tmp.path().join("manifest.json"))["seed"], 7);
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: [(&str, &str); 4] = [
        ("certify", "lorentz-cfs"),
        ("assemble", "dispersion-cfs-mixed"),
        ("simulate", "debye-pulse"),
        ("fixedpoint", "saturable"),
    ];
    for (cmd, scen) in runs {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        for d in [&a, &b] {
            assert_eq!(code(&dispml(&[cmd, "--scenario", scen, "--out", d.to_str().unwrap()])), 0);
        }
        let (ra, rb) = (read_outputs(&a), read_outputs(&b));
        assert!(!ra.is_empty());
        assert!(ra == rb, "{cmd} outputs differ");
        let (mut ma, mut mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
        for m in [&mut ma, &mut mb] {
            m.as_object_mut().unwrap().remove("timestamp");
            m.as_object_mut().unwrap().remove("out_dir");
        }
        assert_eq!(ma, mb);
    }
}

#[test]
fn simulate_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |s: &str| {
        let out = tmp.path().join(s);
        assert_eq!(code(&dispml(&["simulate", "--scenario", s, "--out", out.to_str().unwrap()])), 0);
        json(&out.join("summary.json"))
    };
    let u = run("upml-uniform");
    let rate = u["decay"]["decay_rate"].as_f64().unwrap();
    assert!((rate / 2.0 - 1.0).abs() < 0.02, "{rate}");
    let r = run("cfs-reflection");
    assert!(r["reflection"]["r_db"].as_f64().unwrap() <= -60.0);
    let v = run("vacuum-energy");
    assert!(v["drift"]["relative"].as_f64().unwrap() <= 1e-6);
    assert!(v["drift"]["samples"].as_u64().unwrap() >= 1000);
    let csv = fs::read_to_string(tmp.path().join("vacuum-energy/timeseries.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time,energy,state_norm,probe_150");
    assert_eq!(csv.lines().count(), 1201);
}

#[test]
fn fixedpoint_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |s: &str| {
        let out = tmp.path().join(s);
        let o = dispml(&["fixedpoint", "--scenario", s, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        json(&out.join("fixedpoint.json"))
    };
    assert_eq!(run("zero")["iterations"], 1);
    for s in ["saturable", "quadratic"] {
        let f = run(s);
        assert_eq!(f["predicted_contraction"], true, "{s}");
        let ratio = f["max_ratio"].as_f64().unwrap();
        assert!(ratio < 1.0 && ratio <= f["predicted_ratio"].as_f64().unwrap(), "{s}");
        assert!(f["residual"].as_f64().unwrap() <= 1e-8);
        assert!(f["compare"]["max_rel_diff"].as_f64().unwrap() <= 1e-6);
    }
    let log = fs::read_to_string(tmp.path().join("saturable/iteration_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "iteration,update_norm,ratio");
}

#[test]
fn kernel_csv_paths_resolve_against_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dt = 0.9 * 0.05;
    let mut k = String::from("t,value\n");
    for n in 0..200 {
        let t = n as f64 * dt;
        k += &format!("{t:.17e},{:.17e}\n", 0.1 * t * (-t).exp());
    }
    fs::write(tmp.path().join("kernel.csv"), k).unwrap();
    let text = dispml_cli::scenarios::lookup(CommandKind::Fixedpoint, "saturable")
        .unwrap()
        .replace(
            r#"kernel = { shape = "gamma", amplitude = 0.1, rate = 1.0, length = 20.0 }"#,
            r#"kernel = { shape = "csv", path = "kernel.csv" }"#,
        );
    assert!(text.contains("kernel.csv"));
    let cfg = tmp.path().join("fp.toml");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("o");
    let o = dispml(&["fixedpoint", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // A kernel on another time step is rejected as a config error.
    fs::write(tmp.path().join("kernel.csv"), "t,value\n0,0\n0.01,0.001\n0.02,0.002\n").unwrap();
    assert_eq!(code(&dispml(&["fixedpoint", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);
}
