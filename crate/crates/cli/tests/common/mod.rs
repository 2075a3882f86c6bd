//! Runs the committed seed-0 fixture through the binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn expected_dir() -> PathBuf {
    fixtures().join("expected")
}

pub fn msfk(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_msfk"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run msfk: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "msfk {args:?} exited {:?}\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_owned()
}

pub fn infer(head: &str, out: &Path) -> Result<(), String> {
    let f = fixtures();
    msfk(&[
        "infer",
        "--features-rgb",
        &s(&f.join("features_rgb.mswt")),
        "--features-ir",
        &s(&f.join("features_ir.mswt")),
        "--text",
        &s(&f.join("text.mstf")),
        "--token-classes",
        &s(&f.join("token_classes.json")),
        "--weights",
        &s(&f.join("weights.mswt")),
        "--head",
        head,
        "--image-size",
        "640x512",
        "--out",
        &s(out),
    ])
}

/// Both heads through `infer` and `eval`, then `pseudo-label` on the dense
/// head's detections and on the hand-written candidates. Returns every
/// output as (file name under `expected/`, path in `dir`).
pub fn run_pipeline(dir: &Path) -> Result<Vec<(String, PathBuf)>, String> {
    let dataset = s(&fixtures().join("dataset.json"));
    let mut outputs = Vec::new();
    for head in ["msgdino", "msyolow"] {
        let dets = dir.join(format!("dets_{head}.json"));
        infer(head, &dets)?;
        let report = dir.join(format!("eval_{head}.json"));
        let table = dir.join(format!("eval_{head}.txt"));
        msfk(&["eval", "--dataset", &dataset, "--detections", &s(&dets), "--out", &s(&report), "--table", &s(&table)])?;
        outputs.extend([dets, report, table]);
    }
    // Head scores on this fixture saturate near 1, so the threshold rejects
    // every box; the hand-written candidates cover the accepting path.
    let sources = [
        ("pseudo_msyolow", dir.join("dets_msyolow.json")),
        ("pseudo_candidates", fixtures().join("candidates.json")),
    ];
    for (name, source) in sources {
        let merged = dir.join(format!("{name}.json"));
        let stats = dir.join(format!("{name}.csv"));
        msfk(&["pseudo-label", "--dataset", &dataset, "--detections", &s(&source), "--out", &s(&merged), "--stats", &s(&stats)])?;
        outputs.extend([merged, stats]);
    }
    Ok(outputs
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect())
}

/// Byte comparison against the blessed file.
pub fn compare_expected(name: &str, got: &Path) -> Result<(), String> {
    let expected = expected_dir().join(name);
    let bytes = std::fs::read(got).map_err(|e| format!("{}: {e}", got.display()))?;
    let want = std::fs::read(&expected)
        .map_err(|e| format!("{}: {e} (run the golden test with MSFK_BLESS=1)", expected.display()))?;
    if bytes == want {
        Ok(())
    } else {
        Err(format!(
            "{name} differs from blessed output\n--- got\n{}\n--- expected\n{}",
            String::from_utf8_lossy(&bytes),
            String::from_utf8_lossy(&want)
        ))
    }
}
