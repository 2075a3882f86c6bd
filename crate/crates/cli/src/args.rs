use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "msfk", version, about = "Multispectral vision-language detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a k-shot support split from a COCO dataset.
    SampleSplit(SampleSplitArgs),
    /// Run a detection head on RGB/IR feature fixtures.
    Infer(InferArgs),
    /// Generate adaptive-threshold pseudo-labels and merge them into a dataset.
    PseudoLabel(PseudoLabelArgs),
    /// COCO-style mAP / mAP50 / mAP75 evaluation.
    Eval(EvalArgs),
    /// Check analytic fusion gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SampleSplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Filtered COCO JSON containing only the split.
    #[arg(long)]
    pub out: PathBuf,
    /// Split manifest; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Head {
    Msgdino,
    Msyolow,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// MSTF `[H, W, d]` tensor, or MSWT container with `level0`, `level1`, ...
    #[arg(long)]
    pub features_rgb: PathBuf,
    #[arg(long)]
    pub features_ir: PathBuf,
    /// MSTF `[N_t, d]` text embeddings.
    #[arg(long)]
    pub text: PathBuf,
    /// JSON array with the category id of each text token; defaults to 1..=N_t.
    #[arg(long)]
    pub token_classes: Option<PathBuf>,
    /// MSWT head weights.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum)]
    pub head: Head,
    /// COCO results JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub image_id: u64,
    /// Image size the boxes are decoded against, as WIDTHxHEIGHT.
    #[arg(long, default_value = "640x512", value_parser = parse_size)]
    pub image_size: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StdModeArg {
    Population,
    Sample,
}

#[derive(Debug, Args)]
pub struct PseudoLabelArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// COCO results JSON with candidate detections.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = 0.35)]
    pub tau_floor: f64,
    #[arg(long, default_value_t = 0.3)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[arg(long, value_enum, default_value_t = StdModeArg::Population)]
    pub std_mode: StdModeArg,
    /// Merged COCO JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-image score statistics CSV.
    #[arg(long)]
    pub stats: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the text table here (it is always printed).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_dets: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negative control: skew the analytic path so every check fails.
    #[arg(long)]
    pub corrupt: bool,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<u32>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid dimension {v:?} in {s:?}"))
    };
    Ok((parse(w)?, parse(h)?))
}
