//! Straight-line reference implementations used only by tests.
//!
//! Nothing here shares code with `msfk-core`. Inputs are plain tuples and
//! arrays so a bug in the library's types cannot leak into its own oracle.
//! Boxes are `[x1, y1, x2, y2]`.

pub mod fixtures;

pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix1 = if a[0] > b[0] { a[0] } else { b[0] };
    let iy1 = if a[1] > b[1] { a[1] } else { b[1] };
    let ix2 = if a[2] < b[2] { a[2] } else { b[2] };
    let iy2 = if a[3] < b[3] { a[3] } else { b[3] };
    if ix2 <= ix1 || iy2 <= iy1 {
        return 0.0;
    }
    let inter = (ix2 - ix1) * (iy2 - iy1);
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub mod nms {
    use super::iou;

    /// Repeatedly picks the best remaining candidate (ties: lowest index)
    /// and discards same-class candidates overlapping it at `>= thresh`.
    /// Returns kept indices in pick order.
    pub fn greedy_nms(dets: &[([f64; 4], f64, u64)], thresh: f64) -> Vec<usize> {
        let mut alive = vec![true; dets.len()];
        let mut kept = Vec::new();
        loop {
            let mut best: Option<usize> = None;
            for i in 0..dets.len() {
                if alive[i] && best.is_none_or(|b| dets[i].1 > dets[b].1) {
                    best = Some(i);
                }
            }
            let Some(b) = best else { break };
            kept.push(b);
            alive[b] = false;
            for j in 0..dets.len() {
                if alive[j] && dets[j].2 == dets[b].2 && iou(dets[j].0, dets[b].0) >= thresh {
                    alive[j] = false;
                }
            }
        }
        kept
    }
}

pub mod threshold {
    /// `max(mean + std, floor)` written out directly.
    pub fn adaptive(scores: &[f64], floor: f64, sample: bool) -> f64 {
        if scores.is_empty() {
            return floor;
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let dof = if sample && scores.len() > 1 { n - 1.0 } else { n };
        let std = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / dof).sqrt();
        if mean + std > floor {
            mean + std
        } else {
            floor
        }
    }
}

pub mod pseudo {
    use super::{iou, nms::greedy_nms, threshold::adaptive};

    /// Accepted candidate indices, in descending score order.
    pub fn reference(
        dets: &[([f64; 4], f64, u64)],
        gts: &[([f64; 4], u64)],
        tau_floor: f64,
        delta: f64,
        nms_iou: f64,
        sample_std: bool,
    ) -> Vec<usize> {
        let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
        let tau = adaptive(&scores, tau_floor, sample_std);
        let above: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].1 >= tau).collect();
        let sub: Vec<([f64; 4], f64, u64)> = above.iter().map(|&i| dets[i]).collect();
        let mut out = Vec::new();
        for k in greedy_nms(&sub, nms_iou) {
            let (b, _, c) = sub[k];
            if (b[2] - b[0]) * (b[3] - b[1]) <= 0.0 {
                continue;
            }
            let mut worst = 0.0f64;
            for g in gts {
                if g.1 == c {
                    worst = worst.max(iou(b, g.0));
                }
            }
            if worst < delta {
                out.push(above[k]);
            }
        }
        out
    }
}

pub mod topk {
    /// Row indices of the `n` largest row-maxima; ties go to the lower index.
    pub fn select(rows: &[Vec<f32>], n: usize) -> Vec<usize> {
        let mut keyed: Vec<(f32, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().cloned().fold(f32::NEG_INFINITY, f32::max), i))
            .collect();
        keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        keyed.into_iter().take(n).map(|(_, i)| i).collect()
    }
}

pub mod eval {
    use super::iou;

    #[derive(Debug, Clone)]
    pub struct Gt {
        pub image: u64,
        pub class: u64,
        pub bbox: [f64; 4],
    }

    #[derive(Debug, Clone)]
    pub struct Det {
        pub image: u64,
        pub class: u64,
        pub bbox: [f64; 4],
        pub score: f64,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Report {
        /// `(class, AP per threshold)`; `None` where the class has no GT.
        pub per_class: Vec<(u64, Vec<Option<f64>>)>,
        pub map_per_threshold: Vec<Option<f64>>,
        pub map: Option<f64>,
    }

    /// Interpolated AP straight from its definition: for each recall level
    /// take the best precision at any cut-off reaching that recall.
    pub fn ap(labels: &[bool], num_gt: usize, recall_points: usize) -> Option<f64> {
        if num_gt == 0 {
            return if labels.is_empty() { None } else { Some(0.0) };
        }
        let mut sum = 0.0;
        for p in 0..recall_points {
            let r = p as f64 / (recall_points - 1) as f64;
            let mut best = 0.0f64;
            for cut in 1..=labels.len() {
                let tp = labels[..cut].iter().filter(|&&l| l).count();
                let recall = tp as f64 / num_gt as f64;
                let precision = tp as f64 / cut as f64;
                if recall >= r && precision > best {
                    best = precision;
                }
            }
            sum += best;
        }
        Some(sum / recall_points as f64)
    }

    fn sorted_desc<T: Clone>(items: &[T], score: impl Fn(&T) -> f64) -> Vec<T> {
        // insertion sort: stable, obviously correct
        let mut out: Vec<T> = Vec::new();
        for it in items {
            let s = score(it);
            let pos = out.iter().position(|o| score(o) < s).unwrap_or(out.len());
            out.insert(pos, it.clone());
        }
        out
    }

    pub fn evaluate(
        images: &[u64],
        classes: &[u64],
        gts: &[Gt],
        dets: &[Det],
        thresholds: &[f64],
        recall_points: usize,
        max_dets: usize,
    ) -> Report {
        let mut images = images.to_vec();
        images.sort();
        let mut classes = classes.to_vec();
        classes.sort();
        let mut per_class = Vec::new();
        for &c in &classes {
            let mut aps = Vec::new();
            for &t in thresholds {
                let mut scored: Vec<(f64, bool)> = Vec::new();
                let mut num_gt = 0;
                for &im in &images {
                    let g: Vec<&Gt> = gts.iter().filter(|g| g.image == im && g.class == c).collect();
                    num_gt += g.len();
                    let d: Vec<Det> = dets
                        .iter()
                        .filter(|d| d.image == im && d.class == c)
                        .cloned()
                        .collect();
                    let mut d = sorted_desc(&d, |d| d.score);
                    d.truncate(max_dets);
                    let mut used = vec![false; g.len()];
                    for det in &d {
                        let mut best: Option<(usize, f64)> = None;
                        for (gi, gt) in g.iter().enumerate() {
                            if used[gi] {
                                continue;
                            }
                            let v = iou(det.bbox, gt.bbox);
                            if v >= t && best.is_none_or(|(_, bv)| v > bv) {
                                best = Some((gi, v));
                            }
                        }
                        match best {
                            Some((gi, _)) => {
                                used[gi] = true;
                                scored.push((det.score, true));
                            }
                            None => scored.push((det.score, false)),
                        }
                    }
                }
                let scored = sorted_desc(&scored, |s| s.0);
                let labels: Vec<bool> = scored.iter().map(|s| s.1).collect();
                aps.push(ap(&labels, num_gt, recall_points));
            }
            per_class.push((c, aps));
        }

        let mut map_per_threshold = Vec::new();
        for ti in 0..thresholds.len() {
            let mut sum = 0.0;
            let mut n = 0;
            for (c, aps) in &per_class {
                let has_gt = gts.iter().any(|g| g.class == *c);
                if let (true, Some(v)) = (has_gt, aps[ti]) {
                    sum += v;
                    n += 1;
                }
            }
            map_per_threshold.push(if n == 0 { None } else { Some(sum / n as f64) });
        }
        let defined: Vec<f64> = map_per_threshold.iter().flatten().copied().collect();
        let map = if defined.is_empty() || defined.len() != thresholds.len() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        Report {
            per_class,
            map_per_threshold,
            map,
        }
    }
}
