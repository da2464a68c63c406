use std::process::Command;

use serde_json::Value;

fn txid(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_txid")).args(args).output().unwrap()
}

#[test]
fn missing_input_gives_error_line_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = txid(&["prep", "--in", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().find(|l| l.starts_with("error: ")).unwrap();
    let v: Value = serde_json::from_str(&line["error: ".len()..]).unwrap();
    assert!(v["kind"].is_string() && v["message"].is_string());
}

#[test]
fn bad_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(txid(&["gen", "--packets", "2", "--out", d]).status.success());
    let out = txid(&["prep", "--in", d, "--mode", "phase", "--out", d]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("unknown mode"));
}

#[test]
fn gen_prep_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let run = |args: &[&str]| -> Value {
        let out = txid(args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let g = run(&["gen", "--packets", "6", "--out", &p("corpus")]);
    assert_eq!(g["packets"], 72);
    let f = run(&["prep", "--in", &p("corpus"), "--wn", "32", "--split", "50/50", "--out", &p("feat")]);
    assert_eq!(f["train"], 36);
    run(&["train", "--features", &p("feat"), "--seed", "3", "--out", &p("model")]);
    let conf = p("conf.csv");
    let e = run(&["eval", "--model", &p("model"), "--features", &p("feat"), "--confusion", &conf]);
    assert_eq!(e["samples"], 36);
    let acc = e["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(std::fs::read_to_string(conf).unwrap().starts_with("true\\pred,"));
}

#[test]
fn complexity_prints_flagged_total() {
    let dir = tempfile::tempdir().unwrap();
    let out = txid(&["complexity", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.contains("total_from_published_stage_counts,675900,674480,mismatch"));
}
