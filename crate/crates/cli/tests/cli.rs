mod common;

use std::path::Path;
use std::process::{Command, Output};

use msfk_core::dataset::load_coco;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msfk")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixtures();
    let dataset = s(&f.join("dataset.json"));
    let out = s(&dir.path().join("out.json"));

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["infer", "--head", "faster-rcnn"]), 1);
    assert_eq!(code(&["sample-split", "--dataset", &dataset, "--k", "0", "--out", &out]), 1);
    let bad_floor = ["pseudo-label", "--dataset", &dataset, "--detections", &dataset, "--tau-floor", "1.5"];
    assert_eq!(code(&[&bad_floor[..], &["--out", &out, "--stats", &out]].concat()), 1);

    let missing = s(&dir.path().join("missing.json"));
    assert_eq!(code(&["eval", "--dataset", &missing, "--detections", &missing, "--out", &out]), 2);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"images\": [").unwrap();
    assert_eq!(code(&["sample-split", "--dataset", &s(&broken), "--k", "1", "--out", &out]), 3);
    let dets = dir.path().join("dets.json");
    std::fs::write(&dets, r#"[{"image_id": 99, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5}]"#).unwrap();
    assert_eq!(code(&["eval", "--dataset", &dataset, "--detections", &s(&dets), "--out", &out]), 3);

    assert_eq!(code(&["gradcheck", "--seed", "3"]), 0);
    let corrupt = run(&["gradcheck", "--corrupt"]);
    assert_eq!(corrupt.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&corrupt.stdout).contains("FAIL"));
}

#[test]
fn sample_split_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = s(&common::fixtures().join("dataset.json"));
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(format!("{name}.json"));
        common::msfk(&["sample-split", "--dataset", &dataset, "--k", "1", "--seed", "5", "--out", &s(&out)]).unwrap();
        let manifest = dir.path().join(format!("{name}.json.manifest.json"));
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(manifest).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn floor_of_one_leaves_dataset_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixtures();
    let out = dir.path().join("merged.json");
    let stats = dir.path().join("stats.csv");
    common::msfk(&[
        "pseudo-label",
        "--dataset",
        &s(&f.join("dataset.json")),
        "--detections",
        &s(&f.join("candidates.json")),
        "--tau-floor",
        "1.0",
        "--out",
        &s(&out),
        "--stats",
        &s(&stats),
    ])
    .unwrap();
    let (before, _) = load_coco(f.join("dataset.json")).unwrap();
    let (after, _) = load_coco(&out).unwrap();
    assert_eq!(before.annotations(), after.annotations());
    assert_eq!(before.images(), after.images());
}
