//! Adaptive pseudo-labeling.
//!
//! Per image: threshold at `τ = max(μ + σ, τ_floor)` over every candidate
//! score, keep `s ≥ τ`, run class-wise NMS, then accept a survivor only if its
//! IoU with every same-class ground-truth box is below `δ`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{class_nms, iou, Detection, GroundTruth, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub tau_floor: f64,
    pub delta: f64,
    pub nms_iou: f64,
    pub top_n_stats: usize,
    pub std_mode: StdMode,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            tau_floor: 0.35,
            delta: 0.3,
            nms_iou: 0.5,
            top_n_stats: 50,
            std_mode: StdMode::Population,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_floor > 0.0 && self.tau_floor <= 1.0) {
            return Err(Error::Parameter(format!("tau_floor {} not in (0, 1]", self.tau_floor)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("delta {} not in (0, 1)", self.delta)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Parameter(format!("nms_iou {} not in (0, 1]", self.nms_iou)));
        }
        Ok(())
    }
}

fn mean_std(scores: &[f64], mode: StdMode) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ss: f64 = scores.iter().map(|s| (s - mean).powi(2)).sum();
    let denom = match mode {
        StdMode::Sample if scores.len() > 1 => n - 1.0,
        _ => n,
    };
    (mean, (ss / denom).sqrt())
}

/// `max(mean + std, tau_floor)`; an empty score list yields `tau_floor`.
pub fn adaptive_threshold(scores: &[f64], cfg: &PseudoLabelConfig) -> f64 {
    if scores.is_empty() {
        return cfg.tau_floor;
    }
    let (mean, std) = mean_std(scores, cfg.std_mode);
    (mean + std).max(cfg.tau_floor)
}

/// Runs the pseudo-label pipeline on the candidates of one image. Accepted
/// detections come back in descending score order.
pub fn generate_pseudo_labels(
    dets: &[Detection],
    gts: &[GroundTruth],
    cfg: &PseudoLabelConfig,
) -> Vec<Detection> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let tau = adaptive_threshold(&scores, cfg);
    let confident: Vec<Detection> = dets.iter().filter(|d| d.score >= tau).cloned().collect();
    class_nms(&confident, cfg.nms_iou)
        .into_iter()
        .filter(|d| !d.bbox.is_degenerate())
        .filter(|d| {
            let overlap = gts
                .iter()
                .filter(|g| g.class_id == d.class_id)
                .map(|g| iou(&d.bbox, &g.bbox))
                .fold(0.0, f64::max);
            overlap < cfg.delta
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub median: f64,
    pub p75: f64,
    pub count: usize,
}

impl ScoreStats {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Linear-interpolation percentile of ascending `sorted`, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and 75th percentile of the `top_n_stats` highest scores.
pub fn score_stats(dets: &[Detection], cfg: &PseudoLabelConfig) -> ScoreStats {
    let mut scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.truncate(cfg.top_n_stats);
    if scores.is_empty() {
        return ScoreStats {
            median: 0.0,
            p75: 0.0,
            count: 0,
        };
    }
    scores.reverse();
    ScoreStats {
        median: percentile(&scores, 0.5),
        p75: percentile(&scores, 0.75),
        count: scores.len(),
    }
}

/// One row of the per-image stats report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageReport {
    pub image_id: ImageId,
    pub stats: ScoreStats,
    pub tau: f64,
    pub accepted: usize,
}

/// Pseudo-labels every image of `ds` from `dets`. Images are processed in
/// parallel; output order follows ascending image id.
pub fn pseudo_label_dataset(
    ds: &Dataset,
    dets: &[Detection],
    cfg: &PseudoLabelConfig,
) -> Result<(Vec<Detection>, Vec<ImageReport>)> {
    cfg.validate()?;
    ds.check_detections(dets)?;
    let gts = ds.ground_truth_by_image();
    let mut by_image: BTreeMap<ImageId, Vec<Detection>> = gts.keys().map(|&id| (id, Vec::new())).collect();
    for d in dets {
        by_image.get_mut(&d.image_id).expect("checked above").push(d.clone());
    }
    let per_image: Vec<(Vec<Detection>, ImageReport)> = by_image
        .par_iter()
        .map(|(&image_id, cands)| {
            let scores: Vec<f64> = cands.iter().map(|d| d.score).collect();
            let accepted = generate_pseudo_labels(cands, &gts[&image_id], cfg);
            let report = ImageReport {
                image_id,
                stats: score_stats(cands, cfg),
                tau: adaptive_threshold(&scores, cfg),
                accepted: accepted.len(),
            };
            (accepted, report)
        })
        .collect();
    let mut labels = Vec::new();
    let mut reports = Vec::new();
    for (l, r) in per_image {
        labels.extend(l);
        reports.push(r);
    }
    Ok((labels, reports))
}

/// CSV with header `image_id,count,median,p75,tau`.
pub fn stats_csv(reports: &[ImageReport], decimals: usize) -> String {
    use crate::json::fixed_float;
    let mut out = String::from("image_id,count,median,p75,tau\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.image_id,
            r.stats.count,
            fixed_float(r.stats.median, decimals),
            fixed_float(r.stats.p75, decimals),
            fixed_float(r.tau, decimals),
        ));
    }
    out
}
