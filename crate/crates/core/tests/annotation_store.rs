use msfk_core::dataset::{
    load_coco, load_results, merge_pseudo_labels, save_coco, save_coco_with, save_results, Dataset,
    LoadWarning,
};
use msfk_core::geometry::{BBox, Detection};
use msfk_core::json::FloatStyle;
use msfk_core::Error;

const SAMPLE: &str = r#"{
  "images": [
    {"id": 1, "file_name": "00001_rgb.jpg", "file_name_ir": "00001_ir.jpg", "width": 640, "height": 512},
    {"id": 2, "file_name": "00002_rgb.jpg", "width": 640, "height": 512}
  ],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 1, "bbox": [10.5, 20.25, 30.125, 40.0], "area": 1205.0, "iscrowd": 0},
    {"id": 2, "image_id": 1, "category_id": 2, "bbox": [600.0, 500.0, 80.0, 30.0]},
    {"id": 3, "image_id": 2, "category_id": 1, "bbox": [0, 0, 64, 64], "iscrowd": 1},
    {"id": 4, "image_id": 2, "category_id": 3, "bbox": [1.1, 2.2, 3.3, 4.4], "is_pseudo": true}
  ],
  "categories": [{"id": 1, "name": "person"}, {"id": 2, "name": "car"}, {"id": 3, "name": "bicycle"}]
}"#;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn load_applies_fixups_and_save_reload_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, warnings) = load_coco(write(&dir, "in.json", SAMPLE)).unwrap();
    assert_eq!(
        warnings,
        vec![
            LoadWarning::CrowdDropped { ann_id: 3 },
            LoadWarning::Clamped {
                ann_id: 2,
                from: [600.0, 500.0, 80.0, 30.0],
                to: [600.0, 500.0, 40.0, 12.0],
            },
        ]
    );
    assert_eq!(ds.annotations().len(), 3);
    assert_eq!(ds.images()[0].file_name_ir.as_deref(), Some("00001_ir.jpg"));
    assert!(ds.annotations()[2].is_pseudo);

    let out = dir.path().join("out.json");
    save_coco(&ds, &out).unwrap();
    let (back, warnings) = load_coco(&out).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(back, ds);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"file_name_ir\""));
    assert_eq!(text.matches("is_pseudo").count(), 1);
}

#[test]
fn fixed_style_writes_six_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = Dataset::from_json_str(SAMPLE).unwrap();
    let out = dir.path().join("fixed.json");
    save_coco_with(&ds, &out, FloatStyle::Fixed(6)).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("10.500000"));
    assert!(text.contains("30.125000"));
    let (back, _) = load_coco(&out).unwrap();
    assert_eq!(back.annotations()[0].bbox, [10.5, 20.25, 30.125, 40.0]);
}

#[test]
fn malformed_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write(&dir, "broken.json", "{\"images\": [\n  {\"id\": 1,, }]}");
    match load_coco(&broken) {
        Err(Error::Parse { offset, line, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(&"{\"images\": [\n  {\"id\": 1,, }]}"[offset..offset + 1], ",");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(load_coco(dir.path().join("nope.json")), Err(Error::Io { .. })));

    let dangling = SAMPLE.replace("\"image_id\": 2, \"category_id\": 3", "\"image_id\": 9, \"category_id\": 3");
    assert!(matches!(Dataset::from_json_str(&dangling), Err(Error::Integrity(_))));
}

#[test]
fn results_round_trip_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = Dataset::from_json_str(SAMPLE).unwrap();
    let dets = vec![
        Detection { image_id: 2, class_id: 2, bbox: BBox::new(5.0, 6.0, 50.0, 60.0), score: 0.875 },
        Detection { image_id: 1, class_id: 1, bbox: BBox::new(0.0, 0.0, 1.0, 1.0), score: 0.5 },
    ];
    let path = dir.path().join("results.json");
    save_results(&path, &dets, FloatStyle::Exact).unwrap();
    assert_eq!(load_results(&path).unwrap(), dets);

    let merged = merge_pseudo_labels(&ds, &dets).unwrap();
    let new: Vec<_> = merged.annotations()[ds.annotations().len()..].to_vec();
    assert_eq!(new.iter().map(|a| a.id).collect::<Vec<_>>(), vec![5, 6]);
    assert!(new.iter().all(|a| a.is_pseudo));
    assert_eq!(new[0].bbox, [5.0, 6.0, 45.0, 54.0]);

    let bad = vec![Detection { image_id: 1, class_id: 99, ..dets[0].clone() }];
    assert!(matches!(merge_pseudo_labels(&ds, &bad), Err(Error::Integrity(_))));

    let out_of_range = write(&dir, "bad.json", r#"[{"image_id":1,"category_id":1,"bbox":[0,0,1,1],"score":1.5}]"#);
    assert!(matches!(load_results(out_of_range), Err(Error::Integrity(_))));
}
