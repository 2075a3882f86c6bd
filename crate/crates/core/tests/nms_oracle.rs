use msfk_core::geometry::{class_nms, BBox, Detection};
use msfk_oracle::{fixtures, nms};

fn detections(cands: &[fixtures::Candidate]) -> Vec<Detection> {
    cands
        .iter()
        .map(|&(b, score, class_id)| Detection {
            image_id: 1,
            class_id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
            score,
        })
        .collect()
}

#[test]
fn class_nms_matches_brute_force_and_is_idempotent() {
    let mut rng = fixtures::rng(2024);
    for trial in 0..500 {
        let (cands, _) = fixtures::pseudo_instance(&mut rng);
        let dets = detections(&cands);
        for thresh in [0.3, 0.5, 0.7] {
            let kept = class_nms(&dets, thresh);
            let expected: Vec<Detection> = nms::greedy_nms(&cands, thresh)
                .into_iter()
                .map(|i| dets[i].clone())
                .collect();
            assert_eq!(kept, expected, "trial {trial}, thresh {thresh}");
            assert_eq!(class_nms(&kept, thresh), kept, "trial {trial} not idempotent");
        }
    }
}

#[test]
fn survivors_never_overlap_within_class() {
    let mut rng = fixtures::rng(7);
    for _ in 0..200 {
        let (cands, _) = fixtures::pseudo_instance(&mut rng);
        let kept = class_nms(&detections(&cands), 0.5);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.class_id == b.class_id {
                    assert!(msfk_core::geometry::iou(&a.bbox, &b.bbox) < 0.5);
                }
            }
            if i > 0 {
                assert!(kept[i - 1].score >= a.score);
            }
        }
    }
}
