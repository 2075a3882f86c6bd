//! COCO-style detection evaluation.
//!
//! Matching is greedy per (image, class): detections in descending score
//! order each take the unmatched ground truth with the highest IoU at or
//! above the threshold. AP uses the interpolated precision envelope sampled
//! at `recall_points` evenly spaced recall levels.
//!
//! Tie-breaking is fixed so results are reproducible: equal scores keep
//! input order, equal IoUs prefer the earlier ground truth, and images are
//! concatenated in ascending id before the cross-image sort.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{iou, order_by_score_desc, ClassId, Detection, GroundTruth, ImageId};
use crate::json::fixed_float;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    pub max_dets_per_image: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            recall_points: 101,
            max_dets_per_image: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Parameter(format!("IoU thresholds {t:?} must lie in (0, 1]")));
        }
        if t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(format!("IoU thresholds {t:?} must be increasing")));
        }
        if self.recall_points < 2 {
            return Err(Error::Parameter("recall_points must be at least 2".into()));
        }
        if self.max_dets_per_image == 0 {
            return Err(Error::Parameter("max_dets_per_image must be at least 1".into()));
        }
        Ok(())
    }

    fn threshold_index(&self, value: f64) -> Option<usize> {
        self.iou_thresholds.iter().position(|&t| (t - value).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
}

impl MatchLabel {
    pub fn is_tp(self) -> bool {
        self == MatchLabel::TruePositive
    }
}

fn greedy_match(order: &[usize], ious: &[Vec<f64>], n_gt: usize, thresh: f64) -> Vec<(usize, MatchLabel)> {
    let mut taken = vec![false; n_gt];
    order
        .iter()
        .map(|&d| {
            let mut best: Option<usize> = None;
            for g in 0..n_gt {
                if taken[g] || ious[d][g] < thresh {
                    continue;
                }
                if best.is_none_or(|b| ious[d][g] > ious[d][b]) {
                    best = Some(g);
                }
            }
            match best {
                Some(g) => {
                    taken[g] = true;
                    (d, MatchLabel::TruePositive)
                }
                None => (d, MatchLabel::FalsePositive),
            }
        })
        .collect()
}

/// Labels each detection (one image, one class) as TP or FP. The result is
/// aligned with the input order.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> Vec<MatchLabel> {
    let order = order_by_score_desc(dets.iter().map(|d| d.score));
    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
        .collect();
    let mut labels = vec![MatchLabel::FalsePositive; dets.len()];
    for (d, label) in greedy_match(&order, &ious, gts.len(), iou_thresh) {
        labels[d] = label;
    }
    labels
}

/// Interpolated average precision over scored TP/FP labels.
///
/// Returns `None` when there is nothing to score (no ground truth and no
/// detections) and `Some(0.0)` for detections without any ground truth.
pub fn average_precision(scored: &[(f64, MatchLabel)], num_gt: usize, recall_points: usize) -> Option<f64> {
    if num_gt == 0 {
        return if scored.is_empty() { None } else { Some(0.0) };
    }
    let order = order_by_score_desc(scored.iter().map(|s| s.0));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (n, &i) in order.iter().enumerate() {
        if scored[i].1.is_tp() {
            tp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (n + 1) as f64);
    }
    // precision envelope: best precision at this recall or beyond
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for p in 0..recall_points {
        let r = p as f64 / (recall_points - 1) as f64;
        let idx = recall.partition_point(|&v| v < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Some(sum / recall_points as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: ClassId,
    pub name: String,
    pub num_gt: usize,
    pub num_dets: usize,
    /// AP per IoU threshold; `null` when the class has neither ground truth
    /// nor detections.
    pub ap: Vec<Option<f64>>,
    /// No ground truth anywhere in the set, so the class is left out of the
    /// averages.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub classes: Vec<ClassReport>,
    pub map_per_threshold: Vec<Option<f64>>,
    pub map: Option<f64>,
    pub map50: Option<f64>,
    pub map75: Option<f64>,
}

impl EvalReport {
    /// The mAP50 across classes.
    pub fn all(&self) -> Option<f64> {
        self.map50
    }

    pub fn ap50(&self, class_id: ClassId) -> Option<f64> {
        let i = self.config.threshold_index(0.5)?;
        self.classes.iter().find(|c| c.class_id == class_id)?.ap[i]
    }

    /// Fixed-width table: one AP50 column per class followed by `All`, and
    /// one row each for the summary metrics.
    pub fn to_table(&self, decimals: usize) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.name.len())
            .chain([decimals + 3, 5])
            .max()
            .unwrap_or(8)
            + 2;
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| fixed_float(v, decimals));
        let ap50_idx = self.config.threshold_index(0.5);
        let mut out = format!("{:<8}", "Metric");
        for c in &self.classes {
            out.push_str(&format!("{:>width$}", c.name));
        }
        out.push_str(&format!("{:>width$}\n", "All"));
        out.push_str(&format!("{:<8}", "AP50"));
        for c in &self.classes {
            let v = if c.excluded { None } else { ap50_idx.and_then(|i| c.ap[i]) };
            out.push_str(&format!("{:>width$}", fmt(v)));
        }
        out.push_str(&format!("{:>width$}\n", fmt(self.all())));
        for (label, v) in [("mAP", self.map), ("mAP50", self.map50), ("mAP75", self.map75)] {
            out.push_str(&format!("{label:<8}{:>width$}\n", fmt(v)));
        }
        out
    }
}

struct Cell {
    scores: Vec<f64>,
    order: Vec<usize>,
    ious: Vec<Vec<f64>>,
    num_gt: usize,
}

pub fn evaluate(ds: &Dataset, dets: &[Detection], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    ds.check_detections(dets)?;

    let mut image_ids: Vec<ImageId> = ds.images().iter().map(|im| im.id).collect();
    image_ids.sort_unstable();
    let mut categories = ds.categories().to_vec();
    categories.sort_by_key(|c| c.id);

    let mut gt_cells: BTreeMap<(ClassId, ImageId), Vec<GroundTruth>> = BTreeMap::new();
    for a in ds.annotations() {
        gt_cells.entry((a.class_id, a.image_id)).or_default().push(a.ground_truth());
    }
    let mut det_cells: BTreeMap<(ClassId, ImageId), Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        det_cells.entry((d.class_id, d.image_id)).or_default().push(d);
    }

    let classes: Vec<ClassReport> = categories
        .par_iter()
        .map(|cat| {
            let cells: Vec<Cell> = image_ids
                .iter()
                .map(|&im| {
                    let gts = gt_cells.get(&(cat.id, im)).map_or(&[][..], Vec::as_slice);
                    let ds_ = det_cells.get(&(cat.id, im)).map_or(&[][..], Vec::as_slice);
                    let mut order = order_by_score_desc(ds_.iter().map(|d| d.score));
                    order.truncate(cfg.max_dets_per_image);
                    Cell {
                        scores: ds_.iter().map(|d| d.score).collect(),
                        ious: ds_
                            .iter()
                            .map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
                            .collect(),
                        order,
                        num_gt: gts.len(),
                    }
                })
                .collect();
            let num_gt: usize = cells.iter().map(|c| c.num_gt).sum();
            let num_dets: usize = cells.iter().map(|c| c.order.len()).sum();
            let ap = cfg
                .iou_thresholds
                .iter()
                .map(|&t| {
                    let scored: Vec<(f64, MatchLabel)> = cells
                        .iter()
                        .flat_map(|c| {
                            greedy_match(&c.order, &c.ious, c.num_gt, t)
                                .into_iter()
                                .map(|(d, label)| (c.scores[d], label))
                        })
                        .collect();
                    average_precision(&scored, num_gt, cfg.recall_points)
                })
                .collect();
            ClassReport {
                class_id: cat.id,
                name: cat.name.clone(),
                num_gt,
                num_dets,
                ap,
                excluded: num_gt == 0,
            }
        })
        .collect();

    let map_per_threshold: Vec<Option<f64>> = (0..cfg.iou_thresholds.len())
        .map(|ti| {
            let vals: Vec<f64> = classes
                .iter()
                .filter(|c| !c.excluded)
                .filter_map(|c| c.ap[ti])
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    let map = if map_per_threshold.iter().all(Option::is_some) {
        let vals: Vec<f64> = map_per_threshold.iter().flatten().copied().collect();
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    } else {
        None
    };
    let at = |v: f64| cfg.threshold_index(v).and_then(|i| map_per_threshold[i]);
    Ok(EvalReport {
        map50: at(0.5),
        map75: at(0.75),
        map,
        map_per_threshold,
        classes,
        config: cfg.clone(),
    })
}
