//! Deterministic k-shot support-set sampling.
//!
//! Shots are counted in annotated instances, not images. Images are visited
//! in a seeded random order and taken whenever they contain an instance of a
//! class that is still short of `k`, so a class can overshoot `k`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{ClassId, ImageId};
use crate::json::{self, FloatStyle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class_id: ClassId,
    pub count: usize,
    /// The source dataset has fewer than `k` instances of this class, so
    /// every one of them was taken.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub k: usize,
    pub seed: u64,
    /// Selected images in selection order.
    pub image_ids: Vec<ImageId>,
    pub class_counts: Vec<ClassCount>,
}

impl FewShotSplit {
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        ds.subset(&self.image_ids)
    }
}

fn instances_per_image(ds: &Dataset) -> BTreeMap<ImageId, Vec<ClassId>> {
    let mut map: BTreeMap<ImageId, Vec<ClassId>> =
        ds.images().iter().map(|im| (im.id, Vec::new())).collect();
    for a in ds.annotations() {
        map.entry(a.image_id).or_default().push(a.class_id);
    }
    map
}

pub fn sample_few_shot(ds: &Dataset, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let per_image = instances_per_image(ds);
    let mut order: Vec<ImageId> = ds.images().iter().map(|im| im.id).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut counts: BTreeMap<ClassId, usize> = ds.categories().iter().map(|c| (c.id, 0)).collect();
    let mut selected = Vec::new();
    for id in order {
        if counts.values().all(|&n| n >= k) {
            break;
        }
        let classes = &per_image[&id];
        if classes.iter().any(|c| counts[c] < k) {
            for c in classes {
                *counts.get_mut(c).expect("validated category") += 1;
            }
            selected.push(id);
        }
    }

    let class_counts = counts
        .into_iter()
        .map(|(class_id, count)| ClassCount {
            class_id,
            count,
            exhausted: count < k,
        })
        .collect();
    Ok(FewShotSplit {
        k,
        seed,
        image_ids: selected,
        class_counts,
    })
}

/// Reads a split manifest, e.g. an externally published support set, and
/// checks it against the dataset it will be applied to.
pub fn load_split(path: impl AsRef<Path>, ds: &Dataset) -> Result<FewShotSplit> {
    let split: FewShotSplit = json::read_file(path.as_ref())?;
    let known: HashSet<ImageId> = ds.images().iter().map(|im| im.id).collect();
    let mut seen = HashSet::new();
    for id in &split.image_ids {
        if !known.contains(id) {
            return Err(Error::Integrity(format!("split references missing image_id {id}")));
        }
        if !seen.insert(*id) {
            return Err(Error::Integrity(format!("split lists image_id {id} twice")));
        }
    }
    Ok(split)
}

pub fn save_split(split: &FewShotSplit, path: impl AsRef<Path>) -> Result<()> {
    json::write_file(path.as_ref(), split, FloatStyle::Exact)
}
