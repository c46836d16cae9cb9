//! Per-voxel appearance decoder.
//!
//! Voxel feature vectors are their own latent code, so the encoder is the
//! identity; only the 8 -> 64 -> 3 sigmoid decoder is learned. Pretraining
//! fits the style palette until the mean absolute RGB error drops below
//! the target.

use crate::graph::{style_color, voxel_feature};
use crate::tensor::{AdamW, ParamId, ParamSet, Rng, Tape, Tensor};
use crate::{Error, Result};

use super::TEXTURE_FEAT_DIM;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureCodecConfig {
    pub hidden: usize,
    pub categories: usize,
    pub styles: usize,
    /// Feature samples drawn per (category, style) pair.
    pub samples_per_pair: usize,
    pub embed_seed: u64,
    pub max_steps: usize,
    pub lr: f64,
    /// Mean absolute RGB error the decoder must reach.
    pub target_err: f64,
    pub seed: u64,
}

impl Default for TextureCodecConfig {
    fn default() -> Self {
        TextureCodecConfig {
            hidden: 64,
            categories: 6,
            styles: 4,
            samples_per_pair: 64,
            embed_seed: 7,
            max_steps: 4000,
            lr: 3e-3,
            target_err: 0.05,
            seed: 0x7E87,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextureCodec {
    params: ParamSet,
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
}

impl TextureCodec {
    pub fn new(hidden: usize, seed: u64) -> Result<TextureCodec> {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(seed, 0x7E87);
        let l1 = ps.add_linear("texture.dec1", &mut rng, TEXTURE_FEAT_DIM, hidden)?;
        let l2 = ps.add_linear("texture.dec2", &mut rng, hidden, 3)?;
        Ok(TextureCodec { params: ps, l1, l2 })
    }

    pub fn from_params(params: ParamSet) -> Result<TextureCodec> {
        let get = |name: &str| {
            params
                .lookup(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let l1 = (get("texture.dec1.w")?, get("texture.dec1.b")?);
        let l2 = (get("texture.dec2.w")?, get("texture.dec2.b")?);
        if params.value(l1.0).rows() != TEXTURE_FEAT_DIM || params.value(l2.0).cols() != 3 {
            return Err(Error::Checkpoint("texture decoder parameters have the wrong width".into()));
        }
        Ok(TextureCodec { params, l1, l2 })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn decode_graph(
        &self,
        tape: &mut Tape,
        x: crate::tensor::NodeId,
    ) -> Result<crate::tensor::NodeId> {
        let w1 = tape.param(&self.params, self.l1.0);
        let b1 = tape.param(&self.params, self.l1.1);
        let w2 = tape.param(&self.params, self.l2.0);
        let b2 = tape.param(&self.params, self.l2.1);
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.gelu(h)?;
        let o = tape.matmul(h, w2)?;
        let o = tape.add(o, b2)?;
        tape.sigmoid(o)
    }

    /// RGB rows in [0, 1] for a batch of feature rows.
    pub fn decode_batch(&self, feats: &Tensor) -> Result<Tensor> {
        if feats.cols() != TEXTURE_FEAT_DIM {
            return Err(Error::Contract(format!(
                "texture features must have {TEXTURE_FEAT_DIM} columns, got {}",
                feats.cols()
            )));
        }
        let mut tape = Tape::new();
        let xn = tape.constant(feats.clone());
        let o = self.decode_graph(&mut tape, xn)?;
        Ok(tape.value(o).clone())
    }

    pub fn decode(&self, feat: &[f64; TEXTURE_FEAT_DIM]) -> Result<[f64; 3]> {
        let x = Tensor::new(vec![1, TEXTURE_FEAT_DIM], feat.to_vec())?;
        let rgb = self.decode_batch(&x)?;
        Ok([rgb.data[0], rgb.data[1], rgb.data[2]])
    }
}

fn palette_batch(cfg: &TextureCodecConfig) -> (Tensor, Tensor) {
    let mut rng = Rng::new(cfg.seed, 0xFEED);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for cat in 0..cfg.categories {
        for style in 0..cfg.styles {
            let target = style_color(cat, style);
            for _ in 0..cfg.samples_per_pair {
                let vidx = rng.below(512) as u16;
                xs.extend(voxel_feature(cat, style, cfg.embed_seed, vidx));
                ys.extend(target);
                rows += 1;
            }
        }
    }
    (
        Tensor { shape: vec![rows, TEXTURE_FEAT_DIM], data: xs },
        Tensor { shape: vec![rows, 3], data: ys },
    )
}

/// Fit the decoder to the style palette.
pub fn pretrain_texture_codec(cfg: &TextureCodecConfig) -> Result<TextureCodec> {
    if cfg.categories == 0 || cfg.styles == 0 {
        return Err(Error::Contract("texture codec needs a non-empty palette".into()));
    }
    let (x, y) = palette_batch(cfg);
    let mut codec = TextureCodec::new(cfg.hidden, cfg.seed)?;
    let mut opt = AdamW::new(&codec.params, 0.0);

    for step in 0..cfg.max_steps {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let rgb = codec.decode_graph(&mut tape, xn)?;
        let yn = tape.constant(y.clone());
        let loss = tape.mse(rgb, yn)?;
        let grads = tape.backward(loss)?;
        let lr = if step < cfg.max_steps / 2 { cfg.lr } else { cfg.lr * 0.3 };
        opt.step(&mut codec.params, &grads, lr)?;

        if step % 20 == 19 || step + 1 == cfg.max_steps {
            if mean_abs_err(&codec, &x, &y)? < cfg.target_err {
                return Ok(codec);
            }
        }
    }
    let err = mean_abs_err(&codec, &x, &y)?;
    Err(Error::Training {
        step: cfg.max_steps,
        msg: format!("texture decoder stalled at mean RGB error {err:.4} (target {})", cfg.target_err),
    })
}

fn mean_abs_err(codec: &TextureCodec, x: &Tensor, y: &Tensor) -> Result<f64> {
    let rgb = codec.decode_batch(x)?;
    let n = rgb.data.len();
    Ok(rgb.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn trained() -> &'static TextureCodec {
        static CODEC: OnceLock<TextureCodec> = OnceLock::new();
        CODEC.get_or_init(|| pretrain_texture_codec(&TextureCodecConfig::default()).unwrap())
    }

    #[test]
    fn palette_error_is_under_target() {
        let cfg = TextureCodecConfig::default();
        let (x, y) = palette_batch(&cfg);
        let err = mean_abs_err(trained(), &x, &y).unwrap();
        assert!(err < cfg.target_err, "mean abs err {err}");
    }

    #[test]
    fn decoded_colors_are_in_range() {
        let cfg = TextureCodecConfig::default();
        let codec = trained();
        for cat in 0..cfg.categories {
            for style in 0..cfg.styles {
                let f = voxel_feature(cat, style, cfg.embed_seed, 100);
                let rgb = codec.decode(&f).unwrap();
                assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)), "{rgb:?}");
            }
        }
    }

    #[test]
    fn unseen_positions_still_decode_to_the_style_color() {
        let cfg = TextureCodecConfig::default();
        let codec = trained();
        let mut worst: f64 = 0.0;
        for cat in 0..cfg.categories {
            for style in 0..cfg.styles {
                let target = style_color(cat, style);
                for vidx in [3u16, 77, 271, 444] {
                    let f = voxel_feature(cat, style, cfg.embed_seed, vidx);
                    let rgb = codec.decode(&f).unwrap();
                    let err = (0..3).map(|k| (rgb[k] - target[k]).abs()).sum::<f64>() / 3.0;
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 0.15, "worst unseen-position error {worst}");
    }
}
