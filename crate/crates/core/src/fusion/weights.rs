//! Parameter sets for both head variants and their `MSWT` naming scheme.
//!
//! Entry names:
//!
//! | prefix                         | tensors                          |
//! |--------------------------------|----------------------------------|
//! | `meta.n_queries`, `meta.num_levels` | `[1]` scalars               |
//! | `enc.{rgb,ir}.{self,i2t,t2i}`  | `.q .k .v .o`, each `d × d`      |
//! | `enc.{rgb,ir}.ffn`             | `.w1 d×h .b1 h .w2 h×d .b2 d`    |
//! | `dec.{j}.{self,vis,txt}`       | `.q .k .v .o`                    |
//! | `dec.{j}.ffn`                  | as above                         |
//! | `box`                          | `.w1 d×d .b1 .w2 d×d .b2 .w3 d×4 .b3` |
//! | `conv_box`                     | `.w d×4 .b 4`                    |
//!
//! `d` is inferred from the tensors and the decoder depth from the number of
//! `dec.{j}` blocks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::tensor_io;

/// Whether residual sub-blocks are followed by layer normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    PostResidual,
    /// Bare residuals; used by tests to expose the identity path.
    Disabled,
}

impl Norm {
    pub(crate) fn apply(self, x: Tensor) -> Result<Tensor> {
        match self {
            Norm::PostResidual => tensor::layer_norm(&x, tensor::LAYER_NORM_EPS),
            Norm::Disabled => Ok(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub o: Tensor,
}

impl AttentionWeights {
    /// Single-head projected attention of `x` over `context`.
    pub fn attend(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let q = tensor::matmul(x, &self.q)?;
        let k = tensor::matmul(context, &self.k)?;
        let v = tensor::matmul(context, &self.v)?;
        tensor::matmul(&tensor::scaled_dot_attention(&q, &k, &v)?, &self.o)
    }

    fn random<R: Rng + ?Sized>(d: usize, scale: f32, rng: &mut R) -> Self {
        Self {
            q: Tensor::random(&[d, d], scale, rng),
            k: Tensor::random(&[d, d], scale, rng),
            v: Tensor::random(&[d, d], scale, rng),
            o: Tensor::random(&[d, d], scale, rng),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            q: Tensor::zeros(&[d, d]),
            k: Tensor::zeros(&[d, d]),
            v: Tensor::zeros(&[d, d]),
            o: Tensor::zeros(&[d, d]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FfnWeights {
    /// `relu(x·w1 + b1)·w2 + b2`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = tensor::relu(&tensor::linear(x, &self.w1, Some(&self.b1))?);
        tensor::linear(&h, &self.w2, Some(&self.b2))
    }

    fn random<R: Rng + ?Sized>(d: usize, hidden: usize, scale: f32, rng: &mut R) -> Self {
        Self {
            w1: Tensor::random(&[d, hidden], scale, rng),
            b1: Tensor::random(&[hidden], scale, rng),
            w2: Tensor::random(&[hidden, d], scale, rng),
            b2: Tensor::random(&[d], scale, rng),
        }
    }

    fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[d, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, d]),
            b2: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub visual_self: AttentionWeights,
    pub image_to_text: AttentionWeights,
    pub text_to_image: AttentionWeights,
    pub ffn: FfnWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerWeights {
    pub self_attn: AttentionWeights,
    pub cross_visual: AttentionWeights,
    pub cross_text: AttentionWeights,
    pub ffn: FfnWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub d: usize,
    pub n_queries: usize,
    pub num_levels: usize,
    pub norm: Norm,
    pub encoder_rgb: EncoderWeights,
    pub encoder_ir: EncoderWeights,
    pub decoder: Vec<DecoderLayerWeights>,
    /// `(weight, bias)` for the three box-MLP layers, `d→d→d→4`.
    pub box_mlp: [(Tensor, Tensor); 3],
    pub conv_box: (Tensor, Tensor),
}

/// Sizes needed to build a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadShape {
    pub d: usize,
    pub layers: usize,
    pub n_queries: usize,
    pub num_levels: usize,
    pub ffn_hidden: usize,
}

impl Default for HeadShape {
    fn default() -> Self {
        Self {
            d: 8,
            layers: 2,
            n_queries: 6,
            num_levels: 2,
            ffn_hidden: 16,
        }
    }
}

impl HeadWeights {
    pub fn layers(&self) -> usize {
        self.decoder.len()
    }

    /// Uniform random parameters in `[-scale, scale)`, drawn in a fixed order.
    pub fn random<R: Rng + ?Sized>(shape: HeadShape, scale: f32, rng: &mut R) -> Self {
        let HeadShape { d, layers, n_queries, num_levels, ffn_hidden } = shape;
        let encoder = |rng: &mut R| EncoderWeights {
            visual_self: AttentionWeights::random(d, scale, rng),
            image_to_text: AttentionWeights::random(d, scale, rng),
            text_to_image: AttentionWeights::random(d, scale, rng),
            ffn: FfnWeights::random(d, ffn_hidden, scale, rng),
        };
        let encoder_rgb = encoder(rng);
        let encoder_ir = encoder(rng);
        let decoder = (0..layers)
            .map(|_| DecoderLayerWeights {
                self_attn: AttentionWeights::random(d, scale, rng),
                cross_visual: AttentionWeights::random(d, scale, rng),
                cross_text: AttentionWeights::random(d, scale, rng),
                ffn: FfnWeights::random(d, ffn_hidden, scale, rng),
            })
            .collect();
        let mut lin = |i: usize, o: usize| (Tensor::random(&[i, o], scale, rng), Tensor::random(&[o], scale, rng));
        let box_mlp = [lin(d, d), lin(d, d), lin(d, 4)];
        let conv_box = lin(d, 4);
        Self {
            d,
            n_queries,
            num_levels,
            norm: Norm::PostResidual,
            encoder_rgb,
            encoder_ir,
            decoder,
            box_mlp,
            conv_box,
        }
    }

    /// All-zero parameters with norms disabled: every residual block is the
    /// identity.
    pub fn zeros(shape: HeadShape) -> Self {
        let HeadShape { d, layers, n_queries, num_levels, ffn_hidden } = shape;
        let encoder = || EncoderWeights {
            visual_self: AttentionWeights::zeros(d),
            image_to_text: AttentionWeights::zeros(d),
            text_to_image: AttentionWeights::zeros(d),
            ffn: FfnWeights::zeros(d, ffn_hidden),
        };
        let lin = |i: usize, o: usize| (Tensor::zeros(&[i, o]), Tensor::zeros(&[o]));
        Self {
            d,
            n_queries,
            num_levels,
            norm: Norm::Disabled,
            encoder_rgb: encoder(),
            encoder_ir: encoder(),
            decoder: (0..layers)
                .map(|_| DecoderLayerWeights {
                    self_attn: AttentionWeights::zeros(d),
                    cross_visual: AttentionWeights::zeros(d),
                    cross_text: AttentionWeights::zeros(d),
                    ffn: FfnWeights::zeros(d, ffn_hidden),
                })
                .collect(),
            box_mlp: [lin(d, d), lin(d, d), lin(d, 4)],
            conv_box: lin(d, 4),
        }
    }

    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("meta.n_queries".to_owned(), scalar(self.n_queries)),
            ("meta.num_levels".to_owned(), scalar(self.num_levels)),
        ];
        let attn = |out: &mut Vec<(String, Tensor)>, p: &str, a: &AttentionWeights| {
            for (n, t) in [("q", &a.q), ("k", &a.k), ("v", &a.v), ("o", &a.o)] {
                out.push((format!("{p}.{n}"), t.clone()));
            }
        };
        let ffn = |out: &mut Vec<(String, Tensor)>, p: &str, f: &FfnWeights| {
            for (n, t) in [("w1", &f.w1), ("b1", &f.b1), ("w2", &f.w2), ("b2", &f.b2)] {
                out.push((format!("{p}.{n}"), t.clone()));
            }
        };
        for (m, e) in [("rgb", &self.encoder_rgb), ("ir", &self.encoder_ir)] {
            attn(&mut out, &format!("enc.{m}.self"), &e.visual_self);
            attn(&mut out, &format!("enc.{m}.i2t"), &e.image_to_text);
            attn(&mut out, &format!("enc.{m}.t2i"), &e.text_to_image);
            ffn(&mut out, &format!("enc.{m}.ffn"), &e.ffn);
        }
        for (j, l) in self.decoder.iter().enumerate() {
            attn(&mut out, &format!("dec.{j}.self"), &l.self_attn);
            attn(&mut out, &format!("dec.{j}.vis"), &l.cross_visual);
            attn(&mut out, &format!("dec.{j}.txt"), &l.cross_text);
            ffn(&mut out, &format!("dec.{j}.ffn"), &l.ffn);
        }
        for (i, (w, b)) in self.box_mlp.iter().enumerate() {
            out.push((format!("box.w{}", i + 1), w.clone()));
            out.push((format!("box.b{}", i + 1), b.clone()));
        }
        out.push(("conv_box.w".to_owned(), self.conv_box.0.clone()));
        out.push(("conv_box.b".to_owned(), self.conv_box.1.clone()));
        out
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut map: BTreeMap<String, Tensor> = entries.into_iter().collect();
        let n_queries = take_scalar(&mut map, "meta.n_queries")?;
        let num_levels = take_scalar(&mut map, "meta.num_levels")?;
        if n_queries == 0 || num_levels == 0 {
            return Err(Error::format("weights", "meta.n_queries and meta.num_levels must be ≥ 1"));
        }
        let d = map
            .get("enc.rgb.self.q")
            .ok_or_else(|| missing("enc.rgb.self.q"))?
            .shape()[0];
        let hidden = map
            .get("enc.rgb.ffn.w1")
            .ok_or_else(|| missing("enc.rgb.ffn.w1"))?
            .shape()
            .last()
            .copied()
            .unwrap_or(0);

        let mut encoders = Vec::new();
        for m in ["rgb", "ir"] {
            encoders.push(EncoderWeights {
                visual_self: take_attention(&mut map, &format!("enc.{m}.self"), d)?,
                image_to_text: take_attention(&mut map, &format!("enc.{m}.i2t"), d)?,
                text_to_image: take_attention(&mut map, &format!("enc.{m}.t2i"), d)?,
                ffn: take_ffn(&mut map, &format!("enc.{m}.ffn"), d, hidden)?,
            });
        }
        let mut decoder = Vec::new();
        while map_has_prefix(&map, &format!("dec.{}.", decoder.len())) {
            let j = decoder.len();
            decoder.push(DecoderLayerWeights {
                self_attn: take_attention(&mut map, &format!("dec.{j}.self"), d)?,
                cross_visual: take_attention(&mut map, &format!("dec.{j}.vis"), d)?,
                cross_text: take_attention(&mut map, &format!("dec.{j}.txt"), d)?,
                ffn: take_ffn(&mut map, &format!("dec.{j}.ffn"), d, hidden)?,
            });
        }
        if decoder.is_empty() {
            return Err(Error::format("weights", "no decoder layers (dec.0.*) present"));
        }
        let box_mlp = [
            take_linear(&mut map, "box.w1", "box.b1", d, d)?,
            take_linear(&mut map, "box.w2", "box.b2", d, d)?,
            take_linear(&mut map, "box.w3", "box.b3", d, 4)?,
        ];
        let conv_box = take_linear(&mut map, "conv_box.w", "conv_box.b", d, 4)?;

        if let Some(extra) = map.keys().next() {
            return Err(Error::format("weights", format!("unexpected entry {extra:?}")));
        }

        let encoder_ir = encoders.pop().expect("two encoders");
        let encoder_rgb = encoders.pop().expect("two encoders");
        Ok(Self {
            d,
            n_queries,
            num_levels,
            norm: Norm::PostResidual,
            encoder_rgb,
            encoder_ir,
            decoder,
            box_mlp,
            conv_box,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(tensor_io::read_mswt(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries = self.to_entries();
        tensor_io::write_mswt(path, entries.iter().map(|(n, t)| (n.as_str(), t)))
    }
}

fn scalar(v: usize) -> Tensor {
    Tensor::new(vec![1], vec![v as f32]).expect("scalar shape")
}

fn missing(name: &str) -> Error {
    Error::format("weights", format!("missing entry {name:?}"))
}

fn take_scalar(map: &mut BTreeMap<String, Tensor>, name: &str) -> Result<usize> {
    let t = take_shaped(map, name, &[1])?;
    let v = t.data()[0];
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::format("weights", format!("{name} must be a non-negative integer, got {v}")));
    }
    Ok(v as usize)
}

fn take_shaped(map: &mut BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = map.remove(name).ok_or_else(|| missing(name))?;
    if t.shape() != shape {
        return Err(Error::format(
            "weights",
            format!("entry {name:?} has shape {:?}, expected {shape:?}", t.shape()),
        ));
    }
    Ok(t)
}

fn take_attention(map: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize) -> Result<AttentionWeights> {
    Ok(AttentionWeights {
        q: take_shaped(map, &format!("{prefix}.q"), &[d, d])?,
        k: take_shaped(map, &format!("{prefix}.k"), &[d, d])?,
        v: take_shaped(map, &format!("{prefix}.v"), &[d, d])?,
        o: take_shaped(map, &format!("{prefix}.o"), &[d, d])?,
    })
}

fn take_ffn(map: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize, hidden: usize) -> Result<FfnWeights> {
    Ok(FfnWeights {
        w1: take_shaped(map, &format!("{prefix}.w1"), &[d, hidden])?,
        b1: take_shaped(map, &format!("{prefix}.b1"), &[hidden])?,
        w2: take_shaped(map, &format!("{prefix}.w2"), &[hidden, d])?,
        b2: take_shaped(map, &format!("{prefix}.b2"), &[d])?,
    })
}

fn take_linear(
    map: &mut BTreeMap<String, Tensor>,
    w: &str,
    b: &str,
    inputs: usize,
    outputs: usize,
) -> Result<(Tensor, Tensor)> {
    Ok((take_shaped(map, w, &[inputs, outputs])?, take_shaped(map, b, &[outputs])?))
}

fn map_has_prefix(map: &BTreeMap<String, Tensor>, prefix: &str) -> bool {
    map.range(prefix.to_owned()..).next().is_some_and(|(k, _)| k.starts_with(prefix))
}
