//! Rectified-flow engine: straight interpolation paths, constant velocity
//! targets, the training loss, and a guided Euler sampler.

mod model;
mod sample;
mod train;

pub use model::{Denoiser, FlowModel, VelocityField};
pub use sample::{noise_state, sample, sample_from, sample_trace, SampleConfig};
pub use train::{grf_loss, lr_at, TrainConfig, TrainItem, Trainer, VelocityNode};

use std::rc::Rc;

use crate::branches::{LAYOUT_DIM, SHAPE_LATENT_DIM, TEXTURE_FEAT_DIM};
use crate::exchange::BranchState;
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Layout,
    Shape,
    Texture,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Layout => "layout",
            Branch::Shape => "shape",
            Branch::Texture => "texture",
        }
    }

    pub fn from_name(s: &str) -> Result<Branch> {
        match s {
            "layout" => Ok(Branch::Layout),
            "shape" => Ok(Branch::Shape),
            "texture" => Ok(Branch::Texture),
            other => Err(Error::Parse(format!("unknown branch \"{other}\""))),
        }
    }

    /// Per-row state width.
    pub fn dim(self) -> usize {
        match self {
            Branch::Layout => LAYOUT_DIM,
            Branch::Shape => SHAPE_LATENT_DIM,
            Branch::Texture => TEXTURE_FEAT_DIM,
        }
    }
}

/// The tensor being transported, plus enough structure to interpret its
/// rows. Texture rows are per voxel; the voxel sets are fixed for the whole
/// flow and never change during denoising.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowState {
    Layout(Tensor),
    Shape(Tensor),
    Texture { feats: Tensor, voxels: Rc<Vec<Vec<u16>>> },
}

impl FlowState {
    pub fn layout(d: Tensor) -> Result<FlowState> {
        if d.cols() != LAYOUT_DIM {
            return Err(Error::Contract(format!(
                "layout state needs {LAYOUT_DIM} columns, got {}",
                d.cols()
            )));
        }
        Ok(FlowState::Layout(d))
    }

    pub fn shape(d: Tensor) -> Result<FlowState> {
        if d.cols() != SHAPE_LATENT_DIM {
            return Err(Error::Contract(format!(
                "shape state needs {SHAPE_LATENT_DIM} columns, got {}",
                d.cols()
            )));
        }
        Ok(FlowState::Shape(d))
    }

    pub fn texture(feats: Tensor, voxels: Rc<Vec<Vec<u16>>>) -> Result<FlowState> {
        let total: usize = voxels.iter().map(Vec::len).sum();
        if feats.cols() != TEXTURE_FEAT_DIM || feats.rows() != total {
            return Err(Error::Contract(format!(
                "texture state [{}, {}] does not cover {total} voxels of width {TEXTURE_FEAT_DIM}",
                feats.rows(),
                feats.cols()
            )));
        }
        Ok(FlowState::Texture { feats, voxels })
    }

    pub fn branch(&self) -> Branch {
        match self {
            FlowState::Layout(_) => Branch::Layout,
            FlowState::Shape(_) => Branch::Shape,
            FlowState::Texture { .. } => Branch::Texture,
        }
    }

    pub fn data(&self) -> &Tensor {
        match self {
            FlowState::Layout(d) | FlowState::Shape(d) => d,
            FlowState::Texture { feats, .. } => feats,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            FlowState::Layout(d) | FlowState::Shape(d) => d.rows(),
            FlowState::Texture { voxels, .. } => voxels.len(),
        }
    }

    /// The anchored voxel sets; None off the texture branch.
    pub fn voxels(&self) -> Option<&Rc<Vec<Vec<u16>>>> {
        match self {
            FlowState::Texture { voxels, .. } => Some(voxels),
            _ => None,
        }
    }

    /// Row segments owned by each node.
    pub fn voxel_segs(&self) -> Option<Rc<Vec<Vec<usize>>>> {
        self.voxels().map(|v| {
            let counts: Vec<usize> = v.iter().map(Vec::len).collect();
            crate::exchange::voxel_segments(&counts)
        })
    }

    /// Like `self` but carrying `data`; the anchored structure is kept.
    pub fn with_data(&self, data: Tensor) -> Result<FlowState> {
        if data.shape != self.data().shape {
            return Err(Error::dim("with_data", &self.data().shape, &data.shape));
        }
        Ok(match self {
            FlowState::Layout(_) => FlowState::Layout(data),
            FlowState::Shape(_) => FlowState::Shape(data),
            FlowState::Texture { voxels, .. } => {
                FlowState::Texture { feats: data, voxels: Rc::clone(voxels) }
            }
        })
    }

    /// Standard normal draw with this state's structure.
    pub fn noise_like(&self, rng: &mut Rng) -> FlowState {
        let d = self.data();
        let noise = Tensor { shape: d.shape.clone(), data: rng.normal_vec(d.numel()) };
        self.with_data(noise).expect("same shape by construction")
    }

    pub(crate) fn as_branch_state(&self) -> BranchState<'_> {
        match self {
            FlowState::Layout(d) => BranchState::Layout(d),
            FlowState::Shape(d) => BranchState::Shape(d),
            FlowState::Texture { feats, .. } => BranchState::Texture {
                feats,
                voxel_segs: self.voxel_segs().expect("texture state"),
            },
        }
    }

    fn check_compatible(&self, other: &FlowState, op: &str) -> Result<()> {
        if self.branch() != other.branch() {
            return Err(Error::Contract(format!(
                "{op}: branch mismatch ({} vs {})",
                self.branch().name(),
                other.branch().name()
            )));
        }
        if self.data().shape != other.data().shape {
            return Err(Error::dim(op, &self.data().shape, &other.data().shape));
        }
        if let (Some(a), Some(b)) = (self.voxels(), other.voxels()) {
            if a != b {
                return Err(Error::Contract(format!("{op}: texture voxel sets differ")));
            }
        }
        Ok(())
    }
}

/// Logistic compactification of a LogNormal(1,1) draw; strictly inside
/// (0,1) with median e/(1+e).
pub fn sample_time(rng: &mut Rng) -> f64 {
    time_of_normal(1.0 + rng.normal())
}

fn time_of_normal(z: f64) -> f64 {
    let x = z.exp();
    x / (1.0 + x)
}

/// Straight-line point at `t` between data (t=0) and noise (t=1). The
/// texture voxel anchoring comes from `d0`.
pub fn interpolate(d0: &FlowState, d1: &FlowState, t: f64) -> Result<FlowState> {
    d0.check_compatible(d1, "interpolate")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("interpolation time {t} outside [0, 1]")));
    }
    let a = d0.data();
    let b = d1.data();
    let data: Vec<f64> =
        a.data.iter().zip(&b.data).map(|(x, y)| (1.0 - t) * x + t * y).collect();
    d0.with_data(Tensor { shape: a.shape.clone(), data })
}

/// The constant target velocity of the path from `d0` to `d1`.
pub fn velocity_target(d0: &FlowState, d1: &FlowState) -> Result<Tensor> {
    d0.check_compatible(d1, "velocity_target")?;
    let a = d0.data();
    let b = d1.data();
    let data: Vec<f64> = b.data.iter().zip(&a.data).map(|(y, x)| y - x).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}
