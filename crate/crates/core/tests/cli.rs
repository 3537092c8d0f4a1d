use std::path::Path;
use std::process::{Command, Output};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photostereo")).current_dir(dir).args(args).output().unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[test]
fn generate_then_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["generate", "--scenes", "3", "--resolution", "32", "--k", "4", "--seed", "5", "--out", "ds"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out.stdout)["scenes"], 3);
    assert!(dir.path().join("ds/dataset.json").is_file());
    let out = cli(dir.path(), &["baseline", "--data", "ds"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    let scored = report["scenes"].as_array().unwrap().len();
    let skipped = report["skipped_without_directional_light"].as_array().unwrap().len();
    assert_eq!(scored + skipped, 3);
}

#[test]
fn exchange_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["selfcheck-diff", "--emit", "200", "--seed", "9", "--out", "ex.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(dir.path(), &["selfcheck-diff", "--input", "ex.json"]);
    assert!(out.status.success());
    let report = json(&out.stdout);
    assert_eq!(report["pass"], true);
    assert!(report["max_rel_err"].as_f64().unwrap() < 1e-10);

    let mut file = json(&std::fs::read(dir.path().join("ex.json")).unwrap());
    let brdf = &mut file["points"][3]["brdf"][0];
    *brdf = serde_json::json!(brdf.as_f64().unwrap() * 1.01);
    std::fs::write(dir.path().join("bad.json"), file.to_string()).unwrap();
    let out = cli(dir.path(), &["selfcheck-diff", "--input", "bad.json"]);
    assert!(!out.status.success());
    assert_eq!(json(&out.stdout)["pass"], false);
}

#[test]
fn failures_are_json_objects() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"version": 1, "bogus": 1}"#).unwrap();
    for args in [
        vec!["generate", "--config", "bad.json", "--out", "x"],
        vec!["eval", "--checkpoint", "missing.ckpt", "--data", "nowhere"],
        vec!["infer", "--checkpoint", "missing.ckpt", "--input", "nowhere"],
    ] {
        let out = cli(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = json(&out.stderr);
        assert!(err["error"]["kind"].is_string() && err["error"]["message"].is_string(), "{err}");
    }
    let out = cli(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(json(&out.stderr)["error"]["kind"].is_string());
}
