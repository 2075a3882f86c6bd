//! Boxes, IoU and class-wise non-maximum suppression.
//!
//! Boxes live in corner form `(x1, y1, x2, y2)` in absolute pixels. COCO's
//! `(x, y, w, h)` only appears at the file boundary.

use serde::{Deserialize, Serialize};

pub type ImageId = u64;
pub type ClassId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, swapping coordinates if needed so `x1 ≤ x2`, `y1 ≤ y2`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    /// From COCO `[x, y, w, h]`; negative extents are treated as zero.
    pub fn from_xywh(xywh: [f64; 4]) -> Self {
        let [x, y, w, h] = xywh;
        Self {
            x1: x,
            y1: y,
            x2: x + w.max(0.0),
            y2: y + h.max(0.0),
        }
    }

    pub fn to_corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]
    }

    /// Decodes a normalized `(cx, cy, w, h)` box against an image size and
    /// clamps it to the image.
    pub fn from_normalized_cxcywh(cxcywh: [f32; 4], width: f64, height: f64) -> Self {
        let [cx, cy, w, h] = cxcywh.map(|v| v as f64);
        let clamp_x = |v: f64| v.clamp(0.0, width);
        let clamp_y = |v: f64| v.clamp(0.0, height);
        Self {
            x1: clamp_x((cx - w / 2.0) * width),
            y1: clamp_y((cy - h / 2.0) * height),
            x2: clamp_x((cx + w / 2.0) * width),
            y2: clamp_y((cy + h / 2.0) * height),
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        let a = self.area();
        a.is_nan() || a <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub bbox: BBox,
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Indices of `scores` ordered by descending score, ties keeping input order.
pub(crate) fn order_by_score_desc(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy class-wise NMS for the detections of a single image.
///
/// Within each class the highest-scoring remaining box is kept and every
/// same-class box with IoU `>= iou_thresh` against it is dropped. The result
/// is sorted by descending score; equal scores keep their input order.
pub fn class_nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let order = order_by_score_desc(dets.iter().map(|d| d.score));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == d.class_id && iou(&dets[k].bbox, &d.bbox) >= iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
