//! Occupancy-grid autoencoder.
//!
//! 512 voxel bits pass through a 16-dim tanh bottleneck; the decoder emits
//! per-voxel logits thresholded at zero. Pretraining runs until every grid
//! in the training set reconstructs above the target IoU and the solid cube
//! reconstructs exactly.

use crate::graph::{VoxelGrid, GRID};
use crate::tensor::{AdamW, ParamId, ParamSet, Rng, Tape, Tensor};
use crate::{Error, Result};

use super::SHAPE_LATENT_DIM;

const CELLS: usize = GRID * GRID * GRID;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeCodecConfig {
    pub hidden: usize,
    /// Jittered copies of each prototype added to the training set.
    pub variants_per_prototype: usize,
    pub max_steps: usize,
    pub lr: f64,
    /// Reconstruction IoU every training grid must reach.
    pub target_iou: f64,
    pub seed: u64,
}

impl Default for ShapeCodecConfig {
    fn default() -> Self {
        ShapeCodecConfig {
            hidden: 128,
            variants_per_prototype: 8,
            max_steps: 4000,
            lr: 3e-3,
            target_iou: 0.95,
            seed: 0x5AFE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShapeCodec {
    params: ParamSet,
    enc1: (ParamId, ParamId),
    enc2: (ParamId, ParamId),
    dec1: (ParamId, ParamId),
    dec2: (ParamId, ParamId),
}

impl ShapeCodec {
    pub fn new(seed: u64) -> Result<ShapeCodec> {
        Self::init(128, seed)
    }

    fn init(hidden: usize, seed: u64) -> Result<ShapeCodec> {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(seed, 0x5C0D);
        let enc1 = ps.add_linear("shape.enc1", &mut rng, CELLS, hidden)?;
        let enc2 = ps.add_linear("shape.enc2", &mut rng, hidden, SHAPE_LATENT_DIM)?;
        let dec1 = ps.add_linear("shape.dec1", &mut rng, SHAPE_LATENT_DIM, hidden)?;
        let dec2 = ps.add_linear("shape.dec2", &mut rng, hidden, CELLS)?;
        Ok(ShapeCodec { params: ps, enc1, enc2, dec1, dec2 })
    }

    /// Rebuild from a stored parameter set, e.g. a checkpoint.
    pub fn from_params(params: ParamSet) -> Result<ShapeCodec> {
        let get = |name: &str| {
            params
                .lookup(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let pair = |stem: &str| -> Result<(ParamId, ParamId)> {
            Ok((get(&format!("{stem}.w"))?, get(&format!("{stem}.b"))?))
        };
        let enc1 = pair("shape.enc1")?;
        let enc2 = pair("shape.enc2")?;
        let dec1 = pair("shape.dec1")?;
        let dec2 = pair("shape.dec2")?;
        if params.value(enc1.0).rows() != CELLS || params.value(dec2.0).cols() != CELLS {
            return Err(Error::Checkpoint("shape codec parameters have the wrong width".into()));
        }
        Ok(ShapeCodec { params, enc1, enc2, dec1, dec2 })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn encode_graph(&self, tape: &mut Tape, x: crate::tensor::NodeId) -> Result<crate::tensor::NodeId> {
        let w1 = tape.param(&self.params, self.enc1.0);
        let b1 = tape.param(&self.params, self.enc1.1);
        let w2 = tape.param(&self.params, self.enc2.0);
        let b2 = tape.param(&self.params, self.enc2.1);
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.gelu(h)?;
        let z = tape.matmul(h, w2)?;
        let z = tape.add(z, b2)?;
        tape.tanh(z)
    }

    fn decode_graph(&self, tape: &mut Tape, z: crate::tensor::NodeId) -> Result<crate::tensor::NodeId> {
        let w1 = tape.param(&self.params, self.dec1.0);
        let b1 = tape.param(&self.params, self.dec1.1);
        let w2 = tape.param(&self.params, self.dec2.0);
        let b2 = tape.param(&self.params, self.dec2.1);
        let h = tape.matmul(z, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.gelu(h)?;
        let l = tape.matmul(h, w2)?;
        tape.add(l, b2)
    }

    pub fn encode_batch(&self, grids: &[VoxelGrid]) -> Result<Tensor> {
        let x = grids_to_tensor(grids);
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let z = self.encode_graph(&mut tape, xn)?;
        Ok(tape.value(z).clone())
    }

    pub fn encode(&self, grid: &VoxelGrid) -> Result<[f64; SHAPE_LATENT_DIM]> {
        let z = self.encode_batch(std::slice::from_ref(grid))?;
        let mut out = [0.0; SHAPE_LATENT_DIM];
        out.copy_from_slice(&z.data);
        Ok(out)
    }

    /// Per-voxel logits for a batch of latents.
    pub fn decode_logits(&self, latents: &Tensor) -> Result<Tensor> {
        if latents.cols() != SHAPE_LATENT_DIM {
            return Err(Error::Contract(format!(
                "shape latents must have {SHAPE_LATENT_DIM} columns, got {}",
                latents.cols()
            )));
        }
        let mut tape = Tape::new();
        let zn = tape.constant(latents.clone());
        let l = self.decode_graph(&mut tape, zn)?;
        Ok(tape.value(l).clone())
    }

    /// Threshold logits at zero. A latent may decode to the empty grid;
    /// assembly treats that as a degenerate shape.
    pub fn decode_batch(&self, latents: &Tensor) -> Result<Vec<VoxelGrid>> {
        let logits = self.decode_logits(latents)?;
        Ok((0..logits.rows())
            .map(|r| {
                let mut g = VoxelGrid::empty();
                for (i, &v) in logits.row(r).iter().enumerate() {
                    g.set(i, v > 0.0);
                }
                g
            })
            .collect())
    }

    pub fn decode(&self, latent: &[f64; SHAPE_LATENT_DIM]) -> Result<VoxelGrid> {
        let z = Tensor::new(vec![1, SHAPE_LATENT_DIM], latent.to_vec())?;
        Ok(self.decode_batch(&z)?.pop().unwrap())
    }

    pub fn round_trip(&self, grid: &VoxelGrid) -> Result<VoxelGrid> {
        self.decode(&self.encode(grid)?)
    }
}

fn grids_to_tensor(grids: &[VoxelGrid]) -> Tensor {
    let mut data = Vec::with_capacity(grids.len() * CELLS);
    for g in grids {
        data.extend((0..CELLS).map(|i| if g.get(i) { 1.0 } else { 0.0 }));
    }
    Tensor { shape: vec![grids.len(), CELLS], data }
}

/// Flip up to two boundary voxels, never emptying the grid.
fn jitter(base: &VoxelGrid, rng: &mut Rng) -> VoxelGrid {
    let mut g = base.clone();
    for _ in 0..rng.below(3) {
        let boundary = g.boundary();
        if boundary.is_empty() {
            break;
        }
        let idx = boundary[rng.below(boundary.len())];
        if g.get(idx) && g.count() == 1 {
            continue;
        }
        g.set(idx, !g.get(idx));
    }
    g
}

/// Train until every grid in (library + jittered variants + empty + solid
/// cube) reconstructs at IoU >= target and the solid cube is exact.
pub fn pretrain_shape_codec(cfg: &ShapeCodecConfig, library: &[VoxelGrid]) -> Result<ShapeCodec> {
    if library.is_empty() {
        return Err(Error::Contract("shape codec needs a non-empty grid library".into()));
    }
    let mut rng = Rng::new(cfg.seed, 0xDA7A);
    let mut train: Vec<VoxelGrid> = library.to_vec();
    for base in library {
        for _ in 0..cfg.variants_per_prototype {
            train.push(jitter(base, &mut rng));
        }
    }
    train.push(VoxelGrid::empty());
    let cube_idx = train.len();
    train.push(VoxelGrid::full());

    let mut codec = ShapeCodec::init(cfg.hidden, cfg.seed)?;
    let x = grids_to_tensor(&train);
    let mut opt = AdamW::new(&codec.params, 0.0);

    for step in 0..cfg.max_steps {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let z = codec.encode_graph(&mut tape, xn)?;
        let logits = codec.decode_graph(&mut tape, z)?;
        let loss = tape.bce_logits(logits, &x)?;
        let grads = tape.backward(loss)?;
        let lr = if step < cfg.max_steps / 2 { cfg.lr } else { cfg.lr * 0.3 };
        opt.step(&mut codec.params, &grads, lr)?;

        if step % 20 == 19 || step + 1 == cfg.max_steps {
            let (min_iou, cube_iou) = reconstruction_floor(&codec, &train, &x, cube_idx)?;
            if min_iou >= cfg.target_iou && cube_iou == 1.0 {
                return Ok(codec);
            }
        }
    }
    let (min_iou, cube_iou) = reconstruction_floor(&codec, &train, &x, cube_idx)?;
    Err(Error::Training {
        step: cfg.max_steps,
        msg: format!(
            "shape codec stalled: min IoU {min_iou:.4} (target {}), cube IoU {cube_iou:.4}",
            cfg.target_iou
        ),
    })
}

fn reconstruction_floor(
    codec: &ShapeCodec,
    train: &[VoxelGrid],
    x: &Tensor,
    cube_idx: usize,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let z = codec.encode_graph(&mut tape, xn)?;
    let z = tape.value(z).clone();
    let decoded = codec.decode_batch(&z)?;
    let mut min_iou = f64::INFINITY;
    for (g, d) in train.iter().zip(&decoded) {
        min_iou = min_iou.min(g.iou(d));
    }
    Ok((min_iou, train[cube_idx].iou(&decoded[cube_idx])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{prototype_library, OracleConfig};
    use std::sync::OnceLock;

    fn trained() -> &'static ShapeCodec {
        static CODEC: OnceLock<ShapeCodec> = OnceLock::new();
        CODEC.get_or_init(|| {
            let lib = prototype_library(&OracleConfig::default());
            pretrain_shape_codec(&ShapeCodecConfig::default(), &lib).unwrap()
        })
    }

    #[test]
    fn library_reconstructs_above_target() {
        let codec = trained();
        let lib = prototype_library(&OracleConfig::default());
        for (i, g) in lib.iter().enumerate() {
            let iou = g.iou(&codec.round_trip(g).unwrap());
            assert!(iou >= 0.95, "prototype {i}: IoU {iou}");
        }
    }

    #[test]
    fn solid_cube_is_exact() {
        let codec = trained();
        let cube = VoxelGrid::full();
        assert_eq!(cube.iou(&codec.round_trip(&cube).unwrap()), 1.0);
    }

    #[test]
    fn latents_live_in_unit_box() {
        let codec = trained();
        let lib = prototype_library(&OracleConfig::default());
        let z = codec.encode_batch(&lib).unwrap();
        assert!(z.data.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn params_survive_round_trip_through_from_params() {
        let codec = trained();
        let rebuilt = ShapeCodec::from_params(codec.params().clone()).unwrap();
        let g = prototype_library(&OracleConfig::default())[0].clone();
        assert_eq!(codec.round_trip(&g).unwrap(), rebuilt.round_trip(&g).unwrap());
    }
}
