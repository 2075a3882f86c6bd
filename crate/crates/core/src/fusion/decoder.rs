use super::weights::{DecoderLayerWeights, Norm};
use super::{ModalityFeatures, TextEmbeddings};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One cross-modality decoder layer.
///
/// Queries self-attend, then attend to every fused visual token, then to the
/// fused text, then pass through the feed-forward block. Each step is
/// `norm(q + sub(q))`.
pub fn decoder_layer(
    q: &Tensor,
    visual: &Tensor,
    text: &Tensor,
    w: &DecoderLayerWeights,
    norm: Norm,
) -> Result<Tensor> {
    let d = w.self_attn.q.rows();
    for t in [q, visual, text] {
        if t.cols() != d {
            return Err(Error::dim("decoder_layer", t.shape(), &[d]));
        }
    }
    let q = norm.apply(q.add(&w.self_attn.attend(q, q)?)?)?;
    let q = norm.apply(q.add(&w.cross_visual.attend(&q, visual)?)?)?;
    let q = norm.apply(q.add(&w.cross_text.attend(&q, text)?)?)?;
    norm.apply(q.add(&w.ffn.forward(&q)?)?)
}

/// Runs the query set through every decoder layer in order.
pub fn decode_queries(
    q: &Tensor,
    fused: &ModalityFeatures,
    text: &TextEmbeddings,
    layers: &[DecoderLayerWeights],
    norm: Norm,
) -> Result<Tensor> {
    let visual = fused.stacked()?;
    layers
        .iter()
        .try_fold(q.clone(), |q, w| decoder_layer(&q, &visual, &text.tokens, w, norm))
}
