use super::weights::HeadWeights;
use super::{
    affinity_all, decode_queries, encode_modality, fuse_text, fuse_visual, select_queries,
    ModalityFeatures, TextEmbeddings, TokenLabel,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ClassId, Detection, ImageId};
use crate::tensor::{self, Tensor};

/// Image the detections are decoded against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: f64,
    pub height: f64,
}

/// Token logits max-pooled per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    /// Ascending class ids, one per column of `logits`.
    pub classes: Vec<ClassId>,
    pub logits: Tensor,
}

impl ClassScores {
    /// Best class of a row and its logistic score; ties go to the lower id.
    pub fn best(&self, row: usize) -> (ClassId, f64) {
        let mut best = 0;
        let r = self.logits.row(row);
        for (c, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = c;
            }
        }
        (self.classes[best], tensor::sigmoid(r[best]) as f64)
    }
}

/// Dense predictions for one level, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPrediction {
    /// `H × W × 4` normalized `(cx, cy, w, h)`.
    pub boxes: Tensor,
    /// `H × W × N_t` max-fused token logits.
    pub logits: Tensor,
}

/// `d → d → d → 4` MLP with relu between layers and a final sigmoid, giving
/// normalized `(cx, cy, w, h)` per row.
pub fn box_head(q: &Tensor, w: &HeadWeights) -> Result<Tensor> {
    let [(w1, b1), (w2, b2), (w3, b3)] = &w.box_mlp;
    if q.cols() != w1.rows() {
        return Err(Error::dim("box_head", q.shape(), w1.shape()));
    }
    let h = tensor::relu(&tensor::linear(q, w1, Some(b1))?);
    let h = tensor::relu(&tensor::linear(&h, w2, Some(b2))?);
    Ok(tensor::linear(&h, w3, Some(b3))?.map(tensor::sigmoid))
}

/// `max(q·T'_rgbᵀ, q·T'_irᵀ)` elementwise, one column per text token.
pub fn class_logits_query(q: &Tensor, t_rgb: &TextEmbeddings, t_ir: &TextEmbeddings) -> Result<Tensor> {
    if t_rgb.tokens.shape() != t_ir.tokens.shape() {
        return Err(Error::dim("class_logits_query", t_rgb.tokens.shape(), t_ir.tokens.shape()));
    }
    let a = tensor::matmul_t(q, &t_rgb.tokens)?;
    let b = tensor::matmul_t(q, &t_ir.tokens)?;
    Ok(tensor::elementwise_max(&a, &b)?.0)
}

/// Max-pools token logits over the tokens of each class.
pub fn pool_by_class(logits: &Tensor, labels: &[TokenLabel]) -> Result<ClassScores> {
    let (rows, cols) = logits.dims2("pool_by_class")?;
    if cols != labels.len() || cols == 0 {
        return Err(Error::dim("pool_by_class", logits.shape(), &[labels.len()]));
    }
    let mut classes: Vec<ClassId> = labels.iter().map(|l| l.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let column: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(&l.class_id).unwrap_or_default())
        .collect();
    let mut data = vec![f32::NEG_INFINITY; rows * classes.len()];
    for (r, row) in logits.row_iter().enumerate() {
        let out = &mut data[r * classes.len()..(r + 1) * classes.len()];
        for (&c, &v) in column.iter().zip(row) {
            out[c] = out[c].max(v);
        }
    }
    let logits = Tensor::new(vec![rows, classes.len()], data)?;
    Ok(ClassScores { classes, logits })
}

/// Dense head over each fused level: a per-position `d → 4` linear map with
/// sigmoid for boxes, max-fused text similarity for logits.
pub fn conv_head(
    fused: &ModalityFeatures,
    t_rgb: &TextEmbeddings,
    t_ir: &TextEmbeddings,
    w: &HeadWeights,
) -> Result<Vec<LevelPrediction>> {
    let (cw, cb) = &w.conv_box;
    fused.check_width(cw.rows(), "conv_head")?;
    fused
        .levels
        .iter()
        .map(|l| {
            let boxes = tensor::linear(&l.tokens, cw, Some(cb))?.map(tensor::sigmoid);
            let logits = class_logits_query(&l.tokens, t_rgb, t_ir)?;
            let n_t = logits.cols();
            Ok(LevelPrediction {
                boxes: boxes.reshape(vec![l.height, l.width, 4])?,
                logits: logits.reshape(vec![l.height, l.width, n_t])?,
            })
        })
        .collect()
}

fn detections(boxes: &Tensor, scores: &ClassScores, image: ImageInfo) -> Vec<Detection> {
    boxes
        .row_iter()
        .enumerate()
        .map(|(r, b)| {
            let (class_id, score) = scores.best(r);
            Detection {
                image_id: image.id,
                class_id,
                bbox: BBox::from_normalized_cxcywh([b[0], b[1], b[2], b[3]], image.width, image.height),
                score,
            }
        })
        .collect()
}

fn check_inputs(rgb: &ModalityFeatures, ir: &ModalityFeatures, t: &TextEmbeddings, w: &HeadWeights) -> Result<()> {
    if t.is_empty() {
        return Err(Error::Parameter("text embeddings are empty".into()));
    }
    for f in [rgb, ir] {
        if f.levels.len() != w.num_levels {
            return Err(Error::dim("forward", &[f.levels.len()], &[w.num_levels]));
        }
    }
    Ok(())
}

/// Query-based head: enhance each modality, pick the `n_queries` most
/// text-relevant positions, decode them against the fused features and text,
/// and emit one detection per query. No NMS is applied.
pub fn forward_msgdino(
    rgb: &ModalityFeatures,
    ir: &ModalityFeatures,
    text: &TextEmbeddings,
    w: &HeadWeights,
    image: ImageInfo,
) -> Result<Vec<Detection>> {
    check_inputs(rgb, ir, text, w)?;
    let (f_rgb, t_rgb) = encode_modality(rgb, text, &w.encoder_rgb, w.norm)?;
    let (f_ir, t_ir) = encode_modality(ir, text, &w.encoder_ir, w.norm)?;
    let s_rgb = affinity_all(&f_rgb, &t_rgb)?;
    let s_ir = affinity_all(&f_ir, &t_ir)?;
    let selected = select_queries(&s_rgb, &s_ir, &f_rgb, &f_ir, w.n_queries)?;
    let f_fused = fuse_visual(&f_rgb, &f_ir)?;
    let t_fused = fuse_text(&t_rgb, &t_ir)?;
    let q = decode_queries(&selected.queries, &f_fused, &t_fused, &w.decoder, w.norm)?;
    let boxes = box_head(&q, w)?;
    let scores = pool_by_class(&class_logits_query(&q, &t_rgb, &t_ir)?, &text.labels)?;
    Ok(detections(&boxes, &scores, image))
}

/// Dense head: enhance each modality, sum-fuse, and emit one detection per
/// grid position of every level, levels in order.
pub fn forward_msyolow(
    rgb: &ModalityFeatures,
    ir: &ModalityFeatures,
    text: &TextEmbeddings,
    w: &HeadWeights,
    image: ImageInfo,
) -> Result<Vec<Detection>> {
    check_inputs(rgb, ir, text, w)?;
    let (f_rgb, t_rgb) = encode_modality(rgb, text, &w.encoder_rgb, w.norm)?;
    let (f_ir, t_ir) = encode_modality(ir, text, &w.encoder_ir, w.norm)?;
    let fused = fuse_visual(&f_rgb, &f_ir)?;
    let mut out = Vec::new();
    for p in conv_head(&fused, &t_rgb, &t_ir, w)? {
        let positions = p.boxes.shape()[0] * p.boxes.shape()[1];
        let boxes = p.boxes.reshape(vec![positions, 4])?;
        let logits = p.logits.reshape(vec![positions, text.len()])?;
        out.extend(detections(&boxes, &pool_by_class(&logits, &text.labels)?, image));
    }
    Ok(out)
}
