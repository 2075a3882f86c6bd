//! Seed-0 fixture run end to end through the binary.
//!
//! `infer` output is checked against the float64 reference written by
//! `fixtures/golden/reference.py`. Everything the pipeline writes is compared
//! byte for byte with `fixtures/golden/expected/`; set `MSFK_BLESS=1` to
//! regenerate.

mod common;

use std::path::Path;

use serde_json::Value;

const BOX_TOL: f64 = 2e-2;
const SCORE_TOL: f64 = 1e-4;

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn check_against_reference(head: &str, got: &Path) {
    let got = read_json(got);
    let want = read_json(&common::fixtures().join(format!("reference_{head}.json")));
    let (got, want) = (got.as_array().unwrap(), want.as_array().unwrap());
    assert_eq!(got.len(), want.len(), "{head}: detection count");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert_eq!(g["image_id"], w["image_id"], "{head}[{i}]");
        assert_eq!(g["category_id"], w["category_id"], "{head}[{i}] class");
        let gb = g["bbox"].as_array().unwrap();
        let wb = w["bbox"].as_array().unwrap();
        for k in 0..4 {
            let (a, b) = (gb[k].as_f64().unwrap(), wb[k].as_f64().unwrap());
            assert!((a - b).abs() <= BOX_TOL, "{head}[{i}] bbox[{k}]: {a} vs {b}");
        }
        let (a, b) = (g["score"].as_f64().unwrap(), w["score"].as_f64().unwrap());
        assert!((a - b).abs() <= SCORE_TOL, "{head}[{i}] score: {a} vs {b}");
    }
}

#[test]
fn infer_matches_float64_reference() {
    let dir = tempfile::tempdir().unwrap();
    for head in ["msgdino", "msyolow"] {
        let out = dir.path().join(format!("{head}.json"));
        common::infer(head, &out).unwrap();
        check_against_reference(head, &out);
    }
}

#[test]
fn pipeline_matches_blessed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let outputs = common::run_pipeline(dir.path()).unwrap();
    assert_eq!(outputs.len(), 10);
    let bless = std::env::var_os("MSFK_BLESS").is_some_and(|v| v == "1");
    for (name, path) in outputs {
        if bless {
            std::fs::copy(&path, common::expected_dir().join(&name)).unwrap();
        } else {
            common::compare_expected(&name, &path).unwrap();
        }
    }
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    common::infer("msgdino", &a).unwrap();
    common::infer("msgdino", &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
