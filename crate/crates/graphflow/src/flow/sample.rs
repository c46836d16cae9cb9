//! Euler integration of the reverse path, with guidance between the
//! conditional and unconditional fields.

use std::rc::Rc;

use super::{Branch, FlowState, VelocityField};
use crate::graph::{SceneGraph, VoxelGrid};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Euler step count K; the path is cut into K equal pieces.
    pub steps: usize,
    /// Guidance weight w. 1 is the plain conditional field, 0 the
    /// unconditional one, larger values extrapolate past the conditional.
    pub guidance: f64,
    /// Times where guidance applies; outside it the conditional field is
    /// used as-is.
    pub interval: (f64, f64),
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { steps: 25, guidance: 5.0, interval: (0.0, 1.0), seed: 0 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !self.guidance.is_finite() || self.guidance < 0.0 {
            return Err(Error::Config(format!(
                "guidance weight must be finite and >= 0, got {}",
                self.guidance
            )));
        }
        let (lo, hi) = self.interval;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "guidance interval [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(())
    }
}

/// Pure-noise starting state at t=1. Texture states are anchored to real
/// geometry, so grids are mandatory there and ignored elsewhere.
pub fn noise_state(
    graph: &SceneGraph,
    branch: Branch,
    grids: Option<&[VoxelGrid]>,
    rng: &mut Rng,
) -> Result<FlowState> {
    let n = graph.len();
    match branch {
        Branch::Layout | Branch::Shape => {
            let dim = branch.dim();
            let noise = Tensor { shape: vec![n, dim], data: rng.normal_vec(n * dim) };
            match branch {
                Branch::Layout => FlowState::layout(noise),
                _ => FlowState::shape(noise),
            }
        }
        Branch::Texture => {
            let grids = grids.ok_or_else(|| {
                Error::Contract(
                    "texture sampling needs per-node voxel grids to anchor features".into(),
                )
            })?;
            if grids.len() != n {
                return Err(Error::Contract(format!(
                    "{} voxel grids for {} nodes",
                    grids.len(),
                    n
                )));
            }
            let voxels: Vec<Vec<u16>> = grids.iter().map(VoxelGrid::active).collect();
            let rows: usize = voxels.iter().map(Vec::len).sum();
            FlowState::texture(
                Tensor { shape: vec![rows, branch.dim()], data: rng.normal_vec(rows * branch.dim()) },
                Rc::new(voxels),
            )
        }
    }
}

/// Draw noise from the config seed and integrate down to t=0.
pub fn sample<F: VelocityField + ?Sized>(
    field: &F,
    graph: &SceneGraph,
    branch: Branch,
    grids: Option<&[VoxelGrid]>,
    cfg: &SampleConfig,
) -> Result<FlowState> {
    let mut rng = Rng::new(cfg.seed, 0);
    let d1 = noise_state(graph, branch, grids, &mut rng)?;
    sample_from(field, graph, d1, cfg)
}

/// Integrate a given t=1 state down to t=0.
pub fn sample_from<F: VelocityField + ?Sized>(
    field: &F,
    graph: &SceneGraph,
    d1: FlowState,
    cfg: &SampleConfig,
) -> Result<FlowState> {
    let mut trace = sample_trace(field, graph, d1, cfg)?;
    Ok(trace.pop().expect("trace holds K+1 states"))
}

/// Full Euler trajectory: K+1 states, `trace[0]` the noise and `trace[K]`
/// the sample. Velocities are evaluated at the left endpoint of each step,
/// t=(k+1)/K, then `d <- d - v/K`.
pub fn sample_trace<F: VelocityField + ?Sized>(
    field: &F,
    graph: &SceneGraph,
    d1: FlowState,
    cfg: &SampleConfig,
) -> Result<Vec<FlowState>> {
    cfg.validate()?;
    if d1.node_count() != graph.len() {
        return Err(Error::Contract(format!(
            "state covers {} nodes, graph has {}",
            d1.node_count(),
            graph.len()
        )));
    }
    let k = cfg.steps;
    let dt = 1.0 / k as f64;
    let (lo, hi) = cfg.interval;
    let w = cfg.guidance;
    let mut trace = Vec::with_capacity(k + 1);
    trace.push(d1);
    for step in (0..k).rev() {
        let d = trace.last().expect("seeded above");
        let t = (step + 1) as f64 * dt;
        let v = if w == 1.0 || !(lo..=hi).contains(&t) {
            field.velocity(graph, d, t, true)?
        } else if w == 0.0 {
            field.velocity(graph, d, t, false)?
        } else {
            let vc = field.velocity(graph, d, t, true)?;
            let vn = field.velocity(graph, d, t, false)?;
            let data: Vec<f64> =
                vn.data.iter().zip(&vc.data).map(|(n, c)| n + w * (c - n)).collect();
            Tensor { shape: vc.shape.clone(), data }
        };
        if v.shape != d.data().shape {
            return Err(Error::dim("sample", &d.data().shape, &v.shape));
        }
        let data: Vec<f64> =
            d.data().data.iter().zip(&v.data).map(|(x, vi)| x - vi * dt).collect();
        let next = d.with_data(Tensor { shape: v.shape, data })?;
        trace.push(next);
    }
    Ok(trace)
}
