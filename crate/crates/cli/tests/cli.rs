use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quadlat::dataset::{sample_configuration, SamplerConfig, StanceId};
use quadlat::robot::RobotParams;

fn quadlat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadlat"))
        .args(args)
        .current_dir(dir)
        .env_remove("QUADLAT_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = quadlat(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small dataset plus one-epoch models shared by several checks.
fn models(dir: &Path) {
    ok(dir, &["gen-data", "--n", "400", "--seed", "5", "--out", "d.csv"]);
    ok(dir, &["train", "--data", "d.csv", "--out", "v.bin", "--epochs", "1"]);
    ok(
        dir,
        &["train-baseline", "--data", "d.csv", "--out", "b.bin", "--epochs", "1"],
    );
}

#[test]
fn stabilize_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    models(dir);
    let study = |out: &str, extra: &[&str]| {
        let mut a = vec![
            "stabilize",
            "--model",
            "v.bin",
            "--baseline",
            "b.bin",
            "--episodes",
            "6",
            "--steps",
            "10",
        ];
        a.extend_from_slice(extra);
        a.extend(["--report-dir", out]);
        ok(dir, &a);
    };
    study("r1", &[]);
    study("r1", &["--force"]);
    study("r2", &["--sequential"]);
    let timing = quadlat::eval::STUDY_FILES.last().unwrap();
    for f in quadlat::eval::STUDY_FILES.iter().filter(|f| *f != timing) {
        let a = fs::read(dir.join("r1").join(f)).unwrap();
        let b = fs::read(dir.join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let m = json(&dir.join("r1/manifest.json"));
    assert_eq!(m["schema"], "quadlat-manifest-v1");
    assert_eq!(m["runs"].as_object().unwrap().len(), 1);
    let m = &m["runs"]["stabilize"];
    assert_eq!(m["command"], "stabilize");
    assert_eq!(m["config"]["study"]["am"]["steps"], 10);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    let outs = m["outputs"].as_array().unwrap();
    assert!(outs.iter().filter(|o| o["sha256"].is_null()).count() == 1);
    assert_eq!(
        fs::read_dir(dir.join("r1"))
            .unwrap()
            .filter(|e| { e.as_ref().unwrap().file_name().to_string_lossy().contains("manifest") })
            .count(),
        1
    );
}

#[test]
fn manifests_record_hashes_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    models(dir);
    let all = json(&dir.join("manifest.json"));
    let keys: Vec<&String> = all["runs"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["b.bin", "d.csv", "v.bin"]);
    let m = &all["runs"]["d.csv"];
    assert_eq!(m["seeds"]["root"], 5);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let t = &all["runs"]["v.bin"];
    assert_eq!(t["inputs"][0]["sha256"], m["outputs"][0]["sha256"]);
    assert!(!fs::read_to_string(dir.join("manifest.json")).unwrap().contains("time"));
    // A forced rerun leaves the manifest byte-identical.
    let before = fs::read(dir.join("manifest.json")).unwrap();
    ok(
        dir,
        &["gen-data", "--n", "400", "--seed", "5", "--out", "d.csv", "--force"],
    );
    assert_eq!(fs::read(dir.join("manifest.json")).unwrap(), before);
    let log = json(&dir.join("v.bin.log.json"));
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);
}

#[test]
fn overwrite_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-data", "--n", "80", "--out", "d.csv"]);
    let o = quadlat(dir, &["gen-data", "--n", "80", "--out", "d.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    ok(dir, &["gen-data", "--n", "80", "--out", "d.csv", "--force"]);
}

#[test]
fn exit_codes_and_json_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = quadlat(dir, &["gen-data", "--nope"]);
    assert_eq!(o.status.code(), Some(1));
    let o = quadlat(dir, &["--json-errors", "gen-data", "--n", "10", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["error"]["kind"], "usage");
    let o = quadlat(dir, &["--json-errors", "bench", "--model", "missing.bin"]);
    assert_eq!(o.status.code(), Some(2));
    let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["error"]["kind"], "runtime");
    assert!(e["error"]["message"].as_str().unwrap().contains("missing.bin"));
    let o = Command::new(env!("CARGO_BIN_EXE_quadlat"))
        .args(["gen-data", "--n", "80", "--out", "w.csv"])
        .current_dir(dir)
        .env("QUADLAT_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_quadlat"))
        .args(["gen-data", "--n", "80", "--out", "w.csv"])
        .current_dir(dir)
        .env("QUADLAT_WORKERS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-data", "--n", "240", "--out", "d.csv"]);
    fs::write(dir.join("run.toml"), "[train]\nepochs = 2\nbeta = 0.5\n").unwrap();
    ok(
        dir,
        &["--config", "run.toml", "train", "--data", "d.csv", "--out", "a.bin"],
    );
    let m = &json(&dir.join("manifest.json"))["runs"]["a.bin"];
    assert_eq!(m["config"]["train"]["epochs"], 2);
    assert_eq!(m["config"]["train"]["beta"], 0.5);
    assert_eq!(m["config"]["train"]["mu1"], 1.0);
    ok(
        dir,
        &[
            "--config", "run.toml", "train", "--data", "d.csv", "--out", "b.bin", "--epochs", "1",
        ],
    );
    let m = &json(&dir.join("manifest.json"))["runs"]["b.bin"];
    assert_eq!(m["config"]["train"]["epochs"], 1);
    assert_eq!(m["config"]["train"]["beta"], 0.5);

    fs::write(dir.join("bad.toml"), "[train]\nepoch = 2\n").unwrap();
    let o = quadlat(
        dir,
        &["--config", "bad.toml", "train", "--data", "d.csv", "--out", "c.bin"],
    );
    assert_eq!(o.status.code(), Some(1));

    // Other robot parameters: a warning when training, a refusal when a
    // model is used.
    fs::write(dir.join("heavy.toml"), "[robot]\nbase_mass = 40.0\n").unwrap();
    let o = quadlat(
        dir,
        &[
            "--config",
            "heavy.toml",
            "train",
            "--data",
            "d.csv",
            "--out",
            "c.bin",
            "--epochs",
            "1",
        ],
    );
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let o = quadlat(
        dir,
        &["--config", "heavy.toml", "bench", "--model", "a.bin", "--trials", "4"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_reports_a_standing_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let p = RobotParams::default();
    let s = (0..100)
        .map(|i| sample_configuration(StanceId::new(0).unwrap(), i, &p, &SamplerConfig::default()).unwrap())
        .find(|s| s.y)
        .unwrap();
    let q = s.x.q().0;
    let mut text = String::from("t,q0,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,y_prob,s0,s1,s2,s3,segment_id\n");
    for (i, (seg, st)) in [(0, "1,0,0,0"), (0, "1,1,0,0"), (1, "1,1,0,0"), (1, "0,1,0,0")]
        .iter()
        .enumerate()
    {
        let qs: Vec<String> = q.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{},{},0.9,{st},{seg}\n", i as f64 / 200.0, qs.join(",")));
    }
    fs::write(dir.join("w.csv"), text).unwrap();
    let out = ok(dir, &["eval", "--traj", "w.csv", "--report", "g.json"]);
    assert!(out.starts_with("PASS"), "{out}");
    let r = json(&dir.join("g.json"));
    assert_eq!(r["schema"], "quadlat-report-v1");
    assert_eq!(r["passed"], true);
    assert_eq!(r["segments"].as_array().unwrap().len(), 2);
    assert_eq!(r["max_abs_velocity"], 0.0);
}
