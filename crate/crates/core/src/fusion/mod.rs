//! Multispectral vision-language detection heads.
//!
//! Both variants share one fusion rule: enhanced visual features are summed
//! across modalities, enhanced text embeddings are concatenated (RGB rows
//! first), and class logits take the element-wise maximum over the
//! per-modality similarities.
//!
//! * [`forward_msgdino`]: language-guided query selection over both
//!   modalities, a cross-modality decoder, an MLP box head.
//! * [`forward_msyolow`]: dense per-position prediction on the fused maps.
//!
//! Feature levels are flattened row-major, so spatial position `(y, x)` of a
//! `H × W` level is row `y·W + x`.

mod decoder;
mod encoder;
mod head;
pub mod weights;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ClassId;
use crate::tensor::{self, Tensor};

pub use decoder::{decode_queries, decoder_layer};
pub use encoder::encode_modality;
pub use head::{
    box_head, class_logits_query, conv_head, forward_msgdino, forward_msyolow, pool_by_class,
    ClassScores, ImageInfo, LevelPrediction,
};
pub use weights::{HeadShape, HeadWeights, Norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir,
}

/// One flattened feature level: `height·width` rows of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub height: usize,
    pub width: usize,
    pub tokens: Tensor,
}

impl FeatureLevel {
    pub fn new(height: usize, width: usize, tokens: Tensor) -> Result<Self> {
        let (rows, _) = tokens.dims2("FeatureLevel")?;
        if rows != height * width {
            return Err(Error::dim("FeatureLevel", tokens.shape(), &[height, width]));
        }
        Ok(Self { height, width, tokens })
    }

    /// Flattens an `H × W × d` grid.
    pub fn from_grid(grid: Tensor) -> Result<Self> {
        match *grid.shape() {
            [h, w, d] => Self::new(h, w, grid.reshape(vec![h * w, d])?),
            _ => Err(Error::dim("FeatureLevel::from_grid", grid.shape(), &[0, 0, 0])),
        }
    }

    pub fn to_grid(&self) -> Tensor {
        let d = self.tokens.cols();
        self.tokens
            .clone()
            .reshape(vec![self.height, self.width, d])
            .expect("rows match height·width")
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub modality: Modality,
    pub levels: Vec<FeatureLevel>,
}

impl ModalityFeatures {
    pub fn new(modality: Modality, levels: Vec<FeatureLevel>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::Parameter("at least one feature level is required".into()))?;
        let d = first.tokens.cols();
        for l in &levels {
            if l.tokens.cols() != d {
                return Err(Error::dim("ModalityFeatures", first.tokens.shape(), l.tokens.shape()));
            }
        }
        Ok(Self { modality, levels })
    }

    pub fn width(&self) -> usize {
        self.levels[0].tokens.cols()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(FeatureLevel::positions).collect()
    }

    /// All levels stacked in level order.
    pub fn stacked(&self) -> Result<Tensor> {
        let parts: Vec<&Tensor> = self.levels.iter().map(|l| &l.tokens).collect();
        Tensor::concat_rows(&parts)
    }

    pub(crate) fn check_width(&self, d: usize, op: &'static str) -> Result<()> {
        if self.width() != d {
            return Err(Error::dim(op, &[self.width()], &[d]));
        }
        Ok(())
    }

    fn check_aligned(&self, other: &Self, op: &'static str) -> Result<()> {
        let shape = |f: &Self| -> Vec<usize> {
            f.levels
                .iter()
                .flat_map(|l| [l.height, l.width, l.tokens.cols()])
                .collect()
        };
        let (a, b) = (shape(self), shape(other));
        if a != b {
            return Err(Error::dim(op, &a, &b));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLabel {
    pub class_id: ClassId,
    /// Set once the token has been through a modality-specific encoder and
    /// fused.
    pub modality: Option<Modality>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    pub tokens: Tensor,
    pub labels: Vec<TokenLabel>,
}

impl TextEmbeddings {
    pub fn new(tokens: Tensor, classes: &[ClassId]) -> Result<Self> {
        let (n, _) = tokens.dims2("TextEmbeddings")?;
        if classes.len() != n {
            return Err(Error::dim("TextEmbeddings", &[n], &[classes.len()]));
        }
        Ok(Self {
            tokens,
            labels: classes
                .iter()
                .map(|&class_id| TokenLabel { class_id, modality: None })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    /// Distinct classes in ascending id order.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut c: Vec<ClassId> = self.labels.iter().map(|l| l.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub(crate) fn with_modality(mut self, m: Modality) -> Self {
        for l in &mut self.labels {
            l.modality = Some(m);
        }
        self
    }
}

/// Where a selected query came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryOrigin {
    pub modality: Modality,
    pub level: usize,
    /// Row-major position within the level.
    pub index: usize,
    /// Max-over-text affinity that ranked this position.
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Tensor,
    pub provenance: Vec<QueryOrigin>,
}

/// Visual fusion: element-wise sum per level.
pub fn fuse_visual(a: &ModalityFeatures, b: &ModalityFeatures) -> Result<ModalityFeatures> {
    a.check_aligned(b, "fuse_visual")?;
    let levels = a
        .levels
        .iter()
        .zip(&b.levels)
        .map(|(x, y)| FeatureLevel::new(x.height, x.width, x.tokens.add(&y.tokens)?))
        .collect::<Result<_>>()?;
    Ok(ModalityFeatures {
        modality: a.modality,
        levels,
    })
}

/// Text fusion: rows of `a` followed by rows of `b`, labels tagged with the
/// modality each block came from.
pub fn fuse_text(a: &TextEmbeddings, b: &TextEmbeddings) -> Result<TextEmbeddings> {
    if a.width() != b.width() {
        return Err(Error::dim("fuse_text", a.tokens.shape(), b.tokens.shape()));
    }
    fn tag(t: &TextEmbeddings, m: Modality) -> impl Iterator<Item = TokenLabel> + '_ {
        t.labels.iter().map(move |l| TokenLabel {
            class_id: l.class_id,
            modality: l.modality.or(Some(m)),
        })
    }
    Ok(TextEmbeddings {
        tokens: Tensor::concat_rows(&[&a.tokens, &b.tokens])?,
        labels: tag(a, Modality::Rgb).chain(tag(b, Modality::Ir)).collect(),
    })
}

/// Unscaled dot-product affinity `F · Tᵀ` of one level against every token.
pub fn affinity(level: &FeatureLevel, text: &TextEmbeddings) -> Result<Tensor> {
    if level.tokens.cols() != text.width() {
        return Err(Error::dim("affinity", level.tokens.shape(), text.tokens.shape()));
    }
    tensor::matmul_t(&level.tokens, &text.tokens)
}

/// Affinity of every level of `f`, stacked in level order.
pub fn affinity_all(f: &ModalityFeatures, text: &TextEmbeddings) -> Result<Tensor> {
    let parts = f
        .levels
        .iter()
        .map(|l| affinity(l, text))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
}

#[derive(PartialEq)]
struct Ranked {
    score: f32,
    row: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    // "greater" = better: higher score, then lower row
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.row.cmp(&self.row))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Indices of the `n` largest row-maxima of `scores`, best first; ties go to
/// the lower row. Runs a bounded min-heap of size `n`.
pub fn top_rows_by_max(scores: &Tensor, n: usize) -> Result<Vec<(usize, f32)>> {
    let (rows, _) = scores.dims2("top_rows_by_max")?;
    if n > rows {
        return Err(Error::Parameter(format!("cannot select {n} queries from {rows} rows")));
    }
    let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(n + 1);
    for (row, r) in scores.row_iter().enumerate() {
        let score = r.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        heap.push(std::cmp::Reverse(Ranked { score, row }));
        if heap.len() > n {
            heap.pop();
        }
    }
    let mut best: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    best.sort_by(|a, b| b.cmp(a));
    Ok(best.into_iter().map(|r| (r.row, r.score)).collect())
}

/// Language-guided query selection across both modalities.
///
/// `s_rgb` and `s_ir` hold the affinities of every level of each modality
/// (as from [`affinity_all`]); rows are concatenated RGB levels `1..L` then
/// IR levels `1..L`, each position is scored by its max over text, and the
/// top `n_q` positions become the queries, carrying their enhanced feature
/// row and provenance.
pub fn select_queries(
    s_rgb: &Tensor,
    s_ir: &Tensor,
    f_rgb: &ModalityFeatures,
    f_ir: &ModalityFeatures,
    n_q: usize,
) -> Result<QuerySet> {
    let sources = [f_rgb, f_ir];
    for (s, f) in [(s_rgb, f_rgb), (s_ir, f_ir)] {
        let rows: usize = f.level_sizes().iter().sum();
        if s.rows() != rows {
            return Err(Error::dim("select_queries", s.shape(), &[rows]));
        }
    }
    if n_q == 0 {
        return Err(Error::Parameter("n_q must be at least 1".into()));
    }
    let scores = Tensor::concat_rows(&[s_rgb, s_ir])?;
    let features = Tensor::concat_rows(&[&f_rgb.stacked()?, &f_ir.stacked()?])?;
    let picked = top_rows_by_max(&scores, n_q)?;

    let mut blocks = Vec::new();
    for f in sources {
        for (level, l) in f.levels.iter().enumerate() {
            blocks.push((f.modality, level, l.positions()));
        }
    }
    let provenance = picked
        .iter()
        .map(|&(row, score)| {
            let mut offset = row;
            for &(modality, level, size) in &blocks {
                if offset < size {
                    return QueryOrigin { modality, level, index: offset, score };
                }
                offset -= size;
            }
            unreachable!("row {row} within concatenated blocks")
        })
        .collect();
    let rows: Vec<usize> = picked.iter().map(|&(r, _)| r).collect();
    Ok(QuerySet {
        queries: features.select_rows(&rows)?,
        provenance,
    })
}
