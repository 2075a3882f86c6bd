//! COCO-style annotation store.
//!
//! Two extension fields ride along with the standard COCO layout: an
//! image-level `file_name_ir` naming the aligned thermal frame, and an
//! annotation-level `is_pseudo` flag (absent means `false`). Crowd regions are
//! not modeled and are dropped at load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, ClassId, Detection, GroundTruth, ImageId};
use crate::json::{self, FloatStyle};

pub type AnnId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name_ir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnId,
    pub image_id: ImageId,
    #[serde(rename = "category_id")]
    pub class_id: ClassId,
    /// COCO `[x, y, w, h]`.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub is_pseudo: bool,
}

impl Annotation {
    pub fn corners(&self) -> BBox {
        BBox::from_xywh(self.bbox)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            image_id: self.image_id,
            class_id: self.class_id,
            bbox: self.corners(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: ClassId,
    pub name: String,
}

/// Something load-time validation fixed up rather than rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadWarning {
    Clamped {
        ann_id: AnnId,
        from: [f64; 4],
        to: [f64; 4],
    },
    CrowdDropped {
        ann_id: AnnId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: AnnId,
    image_id: ImageId,
    category_id: ClassId,
    bbox: [f64; 4],
    #[serde(default, skip_deserializing)]
    area: f64,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    is_pseudo: bool,
}

#[derive(Serialize, Deserialize)]
struct RawCoco {
    images: Vec<ImageRecord>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<Category>,
}

/// Clamps a COCO box into a `width × height` image. Returns `None` when the
/// box already fits.
fn clamp_xywh(b: [f64; 4], width: u32, height: u32) -> Option<[f64; 4]> {
    let (w, h) = (width as f64, height as f64);
    let [x, y, bw, bh] = b;
    if x >= 0.0 && y >= 0.0 && x + bw <= w && y + bh <= h {
        return None;
    }
    let x1 = x.clamp(0.0, w);
    let y1 = y.clamp(0.0, h);
    let x2 = (x + bw).clamp(0.0, w);
    let y2 = (y + bh).clamp(0.0, h);
    Some([x1, y1, x2 - x1, y2 - y1])
}

impl Dataset {
    /// Validates and normalizes a dataset: unique ids, resolvable references,
    /// non-negative box extents, boxes clamped to their image.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<(Self, Vec<LoadWarning>)> {
        let mut sizes = HashMap::new();
        for im in &images {
            if sizes.insert(im.id, (im.width, im.height)).is_some() {
                return Err(Error::Integrity(format!("duplicate image id {}", im.id)));
            }
        }
        let mut class_ids = HashSet::new();
        for c in &categories {
            if !class_ids.insert(c.id) {
                return Err(Error::Integrity(format!("duplicate category id {}", c.id)));
            }
        }
        let mut ann_ids = HashSet::new();
        let mut warnings = Vec::new();
        let mut out = Vec::with_capacity(annotations.len());
        for mut a in annotations {
            if !ann_ids.insert(a.id) {
                return Err(Error::Integrity(format!("duplicate annotation id {}", a.id)));
            }
            let &(w, h) = sizes.get(&a.image_id).ok_or_else(|| {
                Error::Integrity(format!(
                    "annotation {} references missing image_id {}",
                    a.id, a.image_id
                ))
            })?;
            if !class_ids.contains(&a.class_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing category_id {}",
                    a.id, a.class_id
                )));
            }
            if a.bbox.iter().any(|v| !v.is_finite()) || a.bbox[2] < 0.0 || a.bbox[3] < 0.0 {
                return Err(Error::Integrity(format!(
                    "annotation {} has invalid bbox {:?}",
                    a.id, a.bbox
                )));
            }
            if let Some(clamped) = clamp_xywh(a.bbox, w, h) {
                warnings.push(LoadWarning::Clamped {
                    ann_id: a.id,
                    from: a.bbox,
                    to: clamped,
                });
                a.bbox = clamped;
            }
            out.push(a);
        }
        Ok((
            Self {
                images,
                annotations: out,
                categories,
            },
            warnings,
        ))
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn has_category(&self, id: ClassId) -> bool {
        self.categories.iter().any(|c| c.id == id)
    }

    /// Ground-truth boxes grouped by image id.
    pub fn ground_truth_by_image(&self) -> BTreeMap<ImageId, Vec<GroundTruth>> {
        let mut map: BTreeMap<ImageId, Vec<GroundTruth>> =
            self.images.iter().map(|im| (im.id, Vec::new())).collect();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a.ground_truth());
        }
        map
    }

    /// Keeps only the listed images (in dataset order) and their annotations.
    pub fn subset(&self, image_ids: &[ImageId]) -> Self {
        let keep: HashSet<ImageId> = image_ids.iter().copied().collect();
        Self {
            images: self
                .images
                .iter()
                .filter(|im| keep.contains(&im.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }

    /// Checks that every detection references a known image and category.
    pub fn check_detections(&self, dets: &[Detection]) -> Result<()> {
        let images: HashSet<ImageId> = self.images.iter().map(|im| im.id).collect();
        for (i, d) in dets.iter().enumerate() {
            if !images.contains(&d.image_id) {
                return Err(Error::Integrity(format!(
                    "detection {i} references missing image_id {}",
                    d.image_id
                )));
            }
            if !self.has_category(d.class_id) {
                return Err(Error::Integrity(format!(
                    "detection {i} references missing category_id {}",
                    d.class_id
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<(Self, Vec<LoadWarning>)> {
        let raw: RawCoco = json::from_str(text)?;
        let mut warnings = Vec::new();
        let mut anns = Vec::with_capacity(raw.annotations.len());
        for a in raw.annotations {
            if a.iscrowd != 0 {
                warnings.push(LoadWarning::CrowdDropped { ann_id: a.id });
                continue;
            }
            anns.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                class_id: a.category_id,
                bbox: a.bbox,
                is_pseudo: a.is_pseudo,
            });
        }
        let (ds, more) = Self::new(raw.images, anns, raw.categories)?;
        warnings.extend(more);
        Ok((ds, warnings))
    }

    pub fn to_json_string(&self, style: FloatStyle) -> Result<String> {
        json::to_string(&self.raw(), style)
    }

    fn raw(&self) -> RawCoco {
        RawCoco {
            images: self.images.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| RawAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.class_id,
                    bbox: a.bbox,
                    area: a.bbox[2] * a.bbox[3],
                    iscrowd: 0,
                    is_pseudo: a.is_pseudo,
                })
                .collect(),
            categories: self.categories.clone(),
        }
    }
}

/// Reads and validates a COCO JSON file. Fix-ups are logged and returned.
pub fn load_coco(path: impl AsRef<Path>) -> Result<(Dataset, Vec<LoadWarning>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (ds, warnings) = Dataset::from_json_str(&text)?;
    for w in &warnings {
        log::warn!("{}: {w:?}", path.display());
    }
    Ok((ds, warnings))
}

pub fn save_coco(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    save_coco_with(ds, path, FloatStyle::Exact)
}

pub fn save_coco_with(ds: &Dataset, path: impl AsRef<Path>, style: FloatStyle) -> Result<()> {
    let path = path.as_ref();
    let text = ds.to_json_string(style)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Appends detections as pseudo annotations with fresh ids. Existing
/// annotations are left untouched.
pub fn merge_pseudo_labels(ds: &Dataset, pseudo: &[Detection]) -> Result<Dataset> {
    ds.check_detections(pseudo)?;
    let first = ds.annotations.iter().map(|a| a.id).max().map_or(1, |m| m + 1);
    let mut annotations = ds.annotations.clone();
    for (id, d) in (first..).zip(pseudo) {
        let im = ds.image(d.image_id).expect("checked above");
        let xywh = d.bbox.to_xywh();
        annotations.push(Annotation {
            id,
            image_id: d.image_id,
            class_id: d.class_id,
            bbox: clamp_xywh(xywh, im.width, im.height).unwrap_or(xywh),
            is_pseudo: true,
        });
    }
    Ok(Dataset {
        images: ds.images.clone(),
        annotations,
        categories: ds.categories.clone(),
    })
}

/// One entry of the standard COCO detection-results array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: ImageId,
    pub category_id: ClassId,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl From<&Detection> for ResultRecord {
    fn from(d: &Detection) -> Self {
        Self {
            image_id: d.image_id,
            category_id: d.class_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        }
    }
}

pub fn results_from_json_str(text: &str) -> Result<Vec<Detection>> {
    let records: Vec<ResultRecord> = json::from_str(text)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Integrity(format!(
                    "result {i} has score {} outside [0, 1]",
                    r.score
                )));
            }
            if r.bbox[2] < 0.0 || r.bbox[3] < 0.0 {
                return Err(Error::Integrity(format!(
                    "result {i} has negative box extent {:?}",
                    r.bbox
                )));
            }
            Ok(Detection {
                image_id: r.image_id,
                class_id: r.category_id,
                bbox: BBox::from_xywh(r.bbox),
                score: r.score,
            })
        })
        .collect()
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    results_from_json_str(&text)
}

pub fn save_results(path: impl AsRef<Path>, dets: &[Detection], style: FloatStyle) -> Result<()> {
    let records: Vec<ResultRecord> = dets.iter().map(ResultRecord::from).collect();
    json::write_file(path.as_ref(), &records, style)
}
