use msfk_core::dataset::{merge_pseudo_labels, Annotation, Category, Dataset, ImageRecord};
use msfk_core::geometry::{iou, BBox, Detection, GroundTruth};
use msfk_core::pseudo::{
    adaptive_threshold, generate_pseudo_labels, pseudo_label_dataset, PseudoLabelConfig, StdMode,
};
use msfk_oracle::{fixtures, pseudo, threshold};
use rand::Rng;

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

fn ground_truth(gts: &[fixtures::GtBox]) -> Vec<GroundTruth> {
    gts.iter()
        .map(|&(b, class_id)| GroundTruth {
            image_id: 1,
            class_id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
        })
        .collect()
}

#[test]
fn threshold_matches_reference() {
    let mut rng = fixtures::rng(1);
    for mode in [StdMode::Population, StdMode::Sample] {
        let cfg = PseudoLabelConfig { std_mode: mode, ..Default::default() };
        for _ in 0..1000 {
            let n = rng.gen_range(0..60);
            let s = fixtures::scores(&mut rng, n);
            let expected = threshold::adaptive(&s, 0.35, mode == StdMode::Sample);
            assert!((adaptive_threshold(&s, &cfg) - expected).abs() <= 1e-9);
        }
    }
}

#[test]
fn pipeline_matches_reference() {
    let mut rng = fixtures::rng(2);
    for mode in [StdMode::Population, StdMode::Sample] {
        let cfg = PseudoLabelConfig { std_mode: mode, ..Default::default() };
        for trial in 0..500 {
            let (cands, gts) = fixtures::pseudo_instance(&mut rng);
            let dets = detections(&cands);
            let out = generate_pseudo_labels(&dets, &ground_truth(&gts), &cfg);
            let expected: Vec<Detection> =
                pseudo::reference(&cands, &gts, 0.35, 0.3, 0.5, mode == StdMode::Sample)
                    .into_iter()
                    .map(|i| dets[i].clone())
                    .collect();
            assert_eq!(out, expected, "trial {trial}");

            let tau = adaptive_threshold(&cands.iter().map(|c| c.1).collect::<Vec<_>>(), &cfg);
            for p in &out {
                assert!(p.score >= tau);
                for g in ground_truth(&gts).iter().filter(|g| g.class_id == p.class_id) {
                    assert!(iou(&p.bbox, &g.bbox) < 0.3);
                }
            }
        }
    }
}

#[test]
fn count_is_monotone_in_floor() {
    let mut rng = fixtures::rng(3);
    for _ in 0..300 {
        let (cands, gts) = fixtures::pseudo_instance(&mut rng);
        let dets = detections(&cands);
        let gts = ground_truth(&gts);
        let counts: Vec<usize> = [0.2, 0.35, 0.5, 0.75, 1.0]
            .iter()
            .map(|&f| {
                let cfg = PseudoLabelConfig { tau_floor: f, ..Default::default() };
                generate_pseudo_labels(&dets, &gts, &cfg).len()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        assert_eq!(counts[4], 0);
    }
}

fn dataset_from(gts: &[fixtures::GtBox]) -> Dataset {
    let anns = gts
        .iter()
        .enumerate()
        .map(|(i, &(b, class_id))| Annotation {
            id: i as u64 + 1,
            image_id: 1,
            class_id,
            bbox: [b[0], b[1], b[2] - b[0], b[3] - b[1]],
            is_pseudo: false,
        })
        .collect();
    let images = vec![ImageRecord {
        id: 1,
        file_name: "a.png".into(),
        width: 100,
        height: 100,
        file_name_ir: None,
    }];
    let cats = (1..4).map(|id| Category { id, name: format!("c{id}") }).collect();
    Dataset::new(images, anns, cats).unwrap().0
}

#[test]
fn second_pass_after_merge_adds_nothing() {
    let mut rng = fixtures::rng(4);
    let cfg = PseudoLabelConfig::default();
    for _ in 0..200 {
        let (cands, gts) = fixtures::pseudo_instance(&mut rng);
        let ds = dataset_from(&gts);
        let dets = detections(&cands);
        let (first, _) = pseudo_label_dataset(&ds, &dets, &cfg).unwrap();
        let merged = merge_pseudo_labels(&ds, &first).unwrap();
        assert_eq!(merged.annotations()[..ds.annotations().len()], ds.annotations()[..]);
        assert_eq!(merged.annotations().len(), ds.annotations().len() + first.len());
        let (second, _) = pseudo_label_dataset(&merged, &dets, &cfg).unwrap();
        assert!(second.is_empty(), "{second:?}");
    }
}
