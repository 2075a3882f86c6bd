use super::weights::{EncoderWeights, Norm};
use super::{FeatureLevel, ModalityFeatures, TextEmbeddings};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One vision-language enhancer block for a single modality.
///
/// Sub-blocks, each `norm(x + sub(x))`:
/// 1. visual self-attention within each level
/// 2. text tokens attend to all visual tokens (image→text)
/// 3. visual tokens attend to the updated text (text→image)
/// 4. feed-forward on visual tokens
///
/// Shapes are unchanged; text labels are tagged with the modality.
pub fn encode_modality(
    f: &ModalityFeatures,
    t: &TextEmbeddings,
    w: &EncoderWeights,
    norm: Norm,
) -> Result<(ModalityFeatures, TextEmbeddings)> {
    let d = w.visual_self.q.rows();
    f.check_width(d, "encode_modality")?;
    if t.width() != d {
        return Err(Error::dim("encode_modality", t.tokens.shape(), &[d]));
    }
    let residual = |x: &Tensor, delta: Tensor| norm.apply(x.add(&delta)?);

    let mut levels: Vec<Tensor> = f
        .levels
        .iter()
        .map(|l| residual(&l.tokens, w.visual_self.attend(&l.tokens, &l.tokens)?))
        .collect::<Result<_>>()?;

    let visual = Tensor::concat_rows(&levels.iter().collect::<Vec<_>>())?;
    let text = residual(&t.tokens, w.image_to_text.attend(&t.tokens, &visual)?)?;

    for l in &mut levels {
        let x = residual(l, w.text_to_image.attend(l, &text)?)?;
        *l = residual(&x, w.ffn.forward(&x)?)?;
    }

    let levels = f
        .levels
        .iter()
        .zip(levels)
        .map(|(src, tokens)| FeatureLevel::new(src.height, src.width, tokens))
        .collect::<Result<_>>()?;
    Ok((
        ModalityFeatures {
            modality: f.modality,
            levels,
        },
        TextEmbeddings {
            tokens: text,
            labels: t.labels.clone(),
        }
        .with_modality(f.modality),
    ))
}
