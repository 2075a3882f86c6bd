use std::fmt;
use std::path::{Path, PathBuf};

use msfk_core::dataset::{self, load_coco, merge_pseudo_labels, save_coco_with};
use msfk_core::eval::{evaluate, EvalConfig};
use msfk_core::fewshot::{sample_few_shot, save_split};
use msfk_core::fusion::{
    forward_msgdino, forward_msyolow, FeatureLevel, HeadWeights, ImageInfo, Modality,
    ModalityFeatures, TextEmbeddings,
};
use msfk_core::gradcheck::run_gradcheck;
use msfk_core::json::{self, fixed_float, FloatStyle, GOLDEN_DECIMALS};
use msfk_core::pseudo::{pseudo_label_dataset, stats_csv, PseudoLabelConfig, StdMode};
use msfk_core::tensor_io;
use msfk_core::Error;

use crate::args::{EvalArgs, GradcheckArgs, Head, InferArgs, PseudoLabelArgs, SampleSplitArgs, StdModeArg};

const STYLE: FloatStyle = FloatStyle::Fixed(GOLDEN_DECIMALS);

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    NumericCheck(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Io { .. }) => 2,
            Failure::Core(_) => 3,
            Failure::NumericCheck(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::NumericCheck(m) => write!(f, "numeric check failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn default_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn sample_split(a: SampleSplitArgs) -> Outcome {
    if a.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let (ds, _) = load_coco(&a.dataset)?;
    let split = sample_few_shot(&ds, a.k, a.seed)?;
    save_coco_with(&split.apply(&ds), &a.out, STYLE)?;
    let manifest = a.manifest.unwrap_or_else(|| default_manifest(&a.out));
    save_split(&split, &manifest)?;
    println!(
        "selected {} images (k={}, seed={}) -> {}",
        split.image_ids.len(),
        a.k,
        a.seed,
        a.out.display()
    );
    for c in &split.class_counts {
        let note = if c.exhausted { " (exhausted)" } else { "" };
        println!("  class {}: {}{note}", c.class_id, c.count);
    }
    Ok(())
}

/// Loads one modality: a single `[H, W, d]` tensor, or a container whose
/// entries are `level0`, `level1`, ... in any order.
fn load_features(path: &Path, modality: Modality) -> Result<ModalityFeatures, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let grids = if tensor_io::is_container(&bytes) {
        let mut entries = tensor_io::decode_mswt(&bytes)?;
        let n = entries.len();
        let mut grids = Vec::with_capacity(n);
        for i in 0..n {
            let name = format!("level{i}");
            let pos = entries.iter().position(|(k, _)| *k == name).ok_or_else(|| Error::Format {
                what: "feature container",
                detail: format!("{}: missing entry {name:?} ({n} entries)", path.display()),
            })?;
            grids.push(entries.swap_remove(pos).1);
        }
        grids
    } else {
        vec![tensor_io::decode_mstf(&bytes)?]
    };
    let levels = grids
        .into_iter()
        .map(FeatureLevel::from_grid)
        .collect::<Result<Vec<_>, _>>()?;
    ModalityFeatures::new(modality, levels)
}

fn load_text(path: &Path, classes: Option<&Path>) -> Result<TextEmbeddings, Error> {
    let tokens = tensor_io::read_mstf(path)?;
    let classes: Vec<u64> = match classes {
        Some(p) => json::read_file(p)?,
        None => (1..=tokens.rows() as u64).collect(),
    };
    TextEmbeddings::new(tokens, &classes)
}

pub fn infer(a: InferArgs) -> Outcome {
    let rgb = load_features(&a.features_rgb, Modality::Rgb)?;
    let ir = load_features(&a.features_ir, Modality::Ir)?;
    let text = load_text(&a.text, a.token_classes.as_deref())?;
    let weights = HeadWeights::load(&a.weights)?;
    let image = ImageInfo {
        id: a.image_id,
        width: a.image_size.0 as f64,
        height: a.image_size.1 as f64,
    };
    let dets = match a.head {
        Head::Msgdino => forward_msgdino(&rgb, &ir, &text, &weights, image)?,
        Head::Msyolow => forward_msyolow(&rgb, &ir, &text, &weights, image)?,
    };
    dataset::save_results(&a.out, &dets, STYLE)?;
    println!("{} detections -> {}", dets.len(), a.out.display());
    Ok(())
}

pub fn pseudo_label(a: PseudoLabelArgs) -> Outcome {
    let cfg = PseudoLabelConfig {
        tau_floor: a.tau_floor,
        delta: a.delta,
        nms_iou: a.nms_iou,
        std_mode: match a.std_mode {
            StdModeArg::Population => StdMode::Population,
            StdModeArg::Sample => StdMode::Sample,
        },
        ..PseudoLabelConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (ds, _) = load_coco(&a.dataset)?;
    let dets = dataset::load_results(&a.detections)?;
    let (labels, reports) = pseudo_label_dataset(&ds, &dets, &cfg)?;
    let merged = merge_pseudo_labels(&ds, &labels)?;
    save_coco_with(&merged, &a.out, STYLE)?;
    write_text(&a.stats, &stats_csv(&reports, GOLDEN_DECIMALS))?;
    println!(
        "{} pseudo-labels from {} candidates over {} images -> {}",
        labels.len(),
        dets.len(),
        reports.len(),
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let cfg = EvalConfig {
        max_dets_per_image: a.max_dets,
        ..EvalConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (ds, _) = load_coco(&a.dataset)?;
    let dets = dataset::load_results(&a.detections)?;
    let report = evaluate(&ds, &dets, &cfg)?;
    json::write_file(&a.out, &report, STYLE)?;
    let table = report.to_table(GOLDEN_DECIMALS);
    if let Some(p) = &a.table {
        write_text(p, &table)?;
    }
    print!("{table}");
    let excluded: Vec<&str> = report
        .classes
        .iter()
        .filter(|c| c.excluded)
        .map(|c| c.name.as_str())
        .collect();
    if !excluded.is_empty() {
        println!("excluded (no ground truth): {}", excluded.join(", "));
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let report = run_gradcheck(a.seed, a.corrupt)?;
    for (op, err) in report.per_operator() {
        let status = if err <= report.tolerance { "ok" } else { "FAIL" };
        println!("{op:<20} max_rel_error={}  {status}", fixed_float(err, 9));
    }
    if let Some(p) = &a.out {
        json::write_file(p, &report, FloatStyle::Exact)?;
    }
    if report.passed() {
        println!("all gradient checks within {}", report.tolerance);
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(Failure::NumericCheck(format!(
            "{failed} of {} checks exceed relative error {}",
            report.checks.len(),
            report.tolerance
        )))
    }
}
