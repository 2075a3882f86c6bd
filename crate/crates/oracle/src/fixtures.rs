//! Seeded random instances shared by the oracle-backed test suites.
//!
//! Boxes snap to an integer grid around a few anchors so that exact IoU ties,
//! threshold-boundary overlaps and duplicate scores show up often.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{Det, Gt};

/// `(box, score, class)`
pub type Candidate = ([f64; 4], f64, u64);
/// `(box, class)`
pub type GtBox = ([f64; 4], u64);

pub const IMAGE_SIZE: f64 = 100.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform scores in `[0, 1)`, or on a 0.05 grid when `coarse`.
pub fn score(rng: &mut impl Rng, coarse: bool) -> f64 {
    if coarse {
        rng.gen_range(0..20) as f64 / 20.0
    } else {
        rng.gen()
    }
}

pub fn scores(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen()).collect()
}

pub fn anchors(rng: &mut impl Rng, n: usize) -> Vec<[f64; 4]> {
    (0..n)
        .map(|_| {
            let x = rng.gen_range(0..70) as f64;
            let y = rng.gen_range(0..70) as f64;
            let w = rng.gen_range(4..30) as f64;
            let h = rng.gen_range(4..30) as f64;
            [x, y, x + w, y + h]
        })
        .collect()
}

/// An anchor moved by up to `jitter` pixels per edge, kept inside the image.
/// Edges may cross, in which case they are swapped.
pub fn jittered(rng: &mut impl Rng, anchor: [f64; 4], jitter: i32) -> [f64; 4] {
    let mut b = anchor;
    for v in &mut b {
        *v = (*v + rng.gen_range(-jitter..=jitter) as f64).clamp(0.0, IMAGE_SIZE);
    }
    if b[0] > b[2] {
        b.swap(0, 2);
    }
    if b[1] > b[3] {
        b.swap(1, 3);
    }
    b
}

/// Widens collapsed edges by one pixel so the box has positive area.
pub fn with_area(mut b: [f64; 4]) -> [f64; 4] {
    for (lo, hi) in [(0, 2), (1, 3)] {
        if b[hi] <= b[lo] {
            if b[hi] < IMAGE_SIZE {
                b[hi] += 1.0;
            } else {
                b[lo] -= 1.0;
            }
        }
    }
    b
}

/// Candidates and ground truth of one image for the pseudo-label pipeline.
pub fn pseudo_instance(rng: &mut impl Rng) -> (Vec<Candidate>, Vec<GtBox>) {
    let n = rng.gen_range(1..5);
    let anchors = anchors(rng, n);
    let coarse = rng.gen_bool(0.5);
    let n_det = rng.gen_range(0..25);
    let dets = (0..n_det)
        .map(|_| {
            let a = anchors[rng.gen_range(0..anchors.len())];
            let b = if rng.gen_bool(0.05) {
                [a[0], a[1], a[0], a[3]]
            } else {
                jittered(rng, a, 4)
            };
            (b, score(rng, coarse), rng.gen_range(1..4))
        })
        .collect();
    let n_gt = rng.gen_range(0..5);
    let gts = (0..n_gt)
        .map(|_| {
            let a = anchors[rng.gen_range(0..anchors.len())];
            (jittered(rng, a, 6), rng.gen_range(1..4))
        })
        .collect();
    (dets, gts)
}

/// A small multi-image detection problem.
#[derive(Debug, Clone)]
pub struct EvalInstance {
    pub images: Vec<u64>,
    pub classes: Vec<u64>,
    pub gts: Vec<Gt>,
    pub dets: Vec<Det>,
}

/// Classes are 1..=4; class 4 only gets detections, never ground truth, so
/// some instances carry a class that must be excluded from the means.
pub fn eval_instance(rng: &mut impl Rng) -> EvalInstance {
    let n_images = rng.gen_range(1..5);
    let images: Vec<u64> = (0..n_images).map(|i| 3 * i + 2).collect();
    let coarse = rng.gen_bool(0.5);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for &image in &images {
        let n = rng.gen_range(1..4);
        let anchors = anchors(rng, n);
        for _ in 0..rng.gen_range(0..6) {
            let a = anchors[rng.gen_range(0..anchors.len())];
            let bbox = with_area(jittered(rng, a, 5));
            let class = rng.gen_range(1..4);
            gts.push(Gt { image, class, bbox });
            for _ in 0..rng.gen_range(0..3) {
                dets.push(Det {
                    image,
                    class,
                    bbox: jittered(rng, bbox, 4),
                    score: score(rng, coarse),
                });
            }
        }
        for _ in 0..rng.gen_range(0..4) {
            let a = anchors[rng.gen_range(0..anchors.len())];
            dets.push(Det {
                image,
                class: rng.gen_range(1..5),
                bbox: jittered(rng, a, 8),
                score: score(rng, coarse),
            });
        }
    }
    EvalInstance {
        images,
        classes: vec![1, 2, 3, 4],
        gts,
        dets,
    }
}

/// Random affinity rows; with `ties`, entries come from a 9-value grid so
/// equal row maxima are common.
pub fn affinity_rows(rng: &mut impl Rng, rows: usize, cols: usize, ties: bool) -> Vec<Vec<f32>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    if ties {
                        rng.gen_range(-4..=4) as f32 * 0.25
                    } else {
                        rng.gen_range(-2.0f32..2.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Ground truth placed in distinct cells of a 4×4 grid, so no detection can
/// overlap two of them. Detections are jittered copies of the ground truth
/// plus strays in empty cells; scores are continuous.
pub fn separated_instance(rng: &mut impl Rng) -> EvalInstance {
    let cell = IMAGE_SIZE / 4.0;
    let n_images = rng.gen_range(1..4);
    let images: Vec<u64> = (1..=n_images).collect();
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for &image in &images {
        let mut cells: Vec<usize> = (0..16).collect();
        cells.sort_by_key(|_| rng.gen::<u32>());
        let n_gt = rng.gen_range(0..6);
        for (i, &c) in cells.iter().take(n_gt + 2).enumerate() {
            let x = (c % 4) as f64 * cell + 4.0;
            let y = (c / 4) as f64 * cell + 4.0;
            let bbox = [x, y, x + rng.gen_range(8..17) as f64, y + rng.gen_range(8..17) as f64];
            let class = rng.gen_range(1..3);
            if i < n_gt {
                gts.push(Gt { image, class, bbox });
                if rng.gen_bool(0.8) {
                    dets.push(Det { image, class, bbox: jittered(rng, bbox, 2), score: rng.gen() });
                }
            } else if rng.gen_bool(0.5) {
                dets.push(Det { image, class, bbox, score: rng.gen() });
            }
        }
    }
    EvalInstance {
        images,
        classes: vec![1, 2],
        gts,
        dets,
    }
}
