//! The learned velocity field: graph conditioner plus per-row denoiser MLP.

use std::rc::Rc;

use super::{Branch, FlowState};
use crate::exchange::{time_embedding, ExchangeUnit, GraphTopo, NodeFeatures, COND_DIM, TIME_DIM};
use crate::graph::SceneGraph;
use crate::tensor::{NodeId, ParamId, ParamSet, Rng, Tape, Tensor};
use crate::{Error, Result};

const HIDDEN: usize = 256;
const ATTN_DIM: usize = 64;

struct Attention {
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
}

/// Shared per-row MLP from [state row ‖ condition ‖ time embedding] to a
/// velocity row. Four linear layers; optionally one self-attention mixing
/// layer across rows after the second.
pub struct Denoiser {
    layers: [(ParamId, ParamId); 4],
    attn: Option<Attention>,
}

impl Denoiser {
    pub fn new(ps: &mut ParamSet, branch: Branch, attention: bool, seed: u64) -> Result<Denoiser> {
        let mut rng = Rng::new(seed, 0xD0_15E);
        let dim = branch.dim();
        let stem = format!("den.{}", branch.name());
        let input = dim + COND_DIM + TIME_DIM;
        let layers = [
            ps.add_linear(&format!("{stem}.l0"), &mut rng, input, HIDDEN)?,
            ps.add_linear(&format!("{stem}.l1"), &mut rng, HIDDEN, HIDDEN)?,
            ps.add_linear(&format!("{stem}.l2"), &mut rng, HIDDEN, HIDDEN)?,
            ps.add_linear(&format!("{stem}.l3"), &mut rng, HIDDEN, dim)?,
        ];
        let attn = if attention {
            Some(Attention {
                q: ps.add_linear(&format!("{stem}.attn.q"), &mut rng, HIDDEN, ATTN_DIM)?,
                k: ps.add_linear(&format!("{stem}.attn.k"), &mut rng, HIDDEN, ATTN_DIM)?,
                v: ps.add_linear(&format!("{stem}.attn.v"), &mut rng, HIDDEN, ATTN_DIM)?,
                o: ps.add_linear(&format!("{stem}.attn.o"), &mut rng, ATTN_DIM, HIDDEN)?,
            })
        } else {
            None
        };
        Ok(Denoiser { layers, attn })
    }

    pub fn from_params(ps: &ParamSet, branch: Branch, attention: bool) -> Result<Denoiser> {
        let get = |name: &str| {
            ps.lookup(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let pair = |stem: &str| -> Result<(ParamId, ParamId)> {
            Ok((get(&format!("{stem}.w"))?, get(&format!("{stem}.b"))?))
        };
        let stem = format!("den.{}", branch.name());
        let layers = [
            pair(&format!("{stem}.l0"))?,
            pair(&format!("{stem}.l1"))?,
            pair(&format!("{stem}.l2"))?,
            pair(&format!("{stem}.l3"))?,
        ];
        let dim = branch.dim();
        if ps.value(layers[3].0).cols() != dim {
            return Err(Error::Checkpoint(format!(
                "{stem}.l3.w emits {} dims, branch needs {dim}",
                ps.value(layers[3].0).cols()
            )));
        }
        let attn = if attention {
            Some(Attention {
                q: pair(&format!("{stem}.attn.q"))?,
                k: pair(&format!("{stem}.attn.k"))?,
                v: pair(&format!("{stem}.attn.v"))?,
                o: pair(&format!("{stem}.attn.o"))?,
            })
        } else {
            None
        };
        Ok(Denoiser { layers, attn })
    }

    fn linear(
        tape: &mut Tape,
        ps: &ParamSet,
        (w, b): (ParamId, ParamId),
        x: NodeId,
    ) -> Result<NodeId> {
        let wn = tape.param(ps, w);
        let bn = tape.param(ps, b);
        let y = tape.matmul(x, wn)?;
        tape.add(y, bn)
    }

    /// Velocity rows for state rows already matched with condition rows.
    pub fn velocity_rows(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        state_rows: NodeId,
        cond_rows: NodeId,
        t: f64,
    ) -> Result<NodeId> {
        let rows = tape.value(state_rows).rows();
        let temb_row = time_embedding(t);
        let temb = tape.constant(Tensor {
            shape: vec![rows, TIME_DIM],
            data: (0..rows).flat_map(|_| temb_row).collect(),
        });
        let x = tape.concat_cols(&[state_rows, cond_rows, temb])?;
        let h = Self::linear(tape, ps, self.layers[0], x)?;
        let h = tape.gelu(h)?;
        let h = Self::linear(tape, ps, self.layers[1], h)?;
        let mut h = tape.gelu(h)?;
        if let Some(attn) = &self.attn {
            let q = Self::linear(tape, ps, attn.q, h)?;
            let k = Self::linear(tape, ps, attn.k, h)?;
            let v = Self::linear(tape, ps, attn.v, h)?;
            let scores = tape.matmul_bt(q, k)?;
            let scores = tape.scale(scores, 1.0 / (ATTN_DIM as f64).sqrt())?;
            let w = tape.softmax_rows(scores)?;
            let mixed = tape.matmul(w, v)?;
            let back = Self::linear(tape, ps, attn.o, mixed)?;
            h = tape.add(h, back)?;
        }
        let h2 = Self::linear(tape, ps, self.layers[2], h)?;
        let h2 = tape.gelu(h2)?;
        Self::linear(tape, ps, self.layers[3], h2)
    }
}

/// How a sampler asks for velocities. The trained model is one
/// implementation; tests substitute exact fields.
pub trait VelocityField {
    fn velocity(
        &self,
        graph: &SceneGraph,
        state: &FlowState,
        t: f64,
        conditioned: bool,
    ) -> Result<Tensor>;
}

/// Conditioner and denoiser over one shared parameter table.
pub struct FlowModel {
    pub params: ParamSet,
    pub unit: ExchangeUnit,
    pub den: Denoiser,
    pub branch: Branch,
    pub categories: usize,
    pub attention: bool,
}

impl FlowModel {
    pub fn new(branch: Branch, categories: usize, attention: bool, seed: u64) -> Result<FlowModel> {
        let mut params = ParamSet::new();
        let unit = ExchangeUnit::new(&mut params, categories, seed)?;
        let den = Denoiser::new(&mut params, branch, attention, seed)?;
        Ok(FlowModel { params, unit, den, branch, categories, attention })
    }

    pub fn from_params(
        params: ParamSet,
        branch: Branch,
        categories: usize,
        attention: bool,
    ) -> Result<FlowModel> {
        let unit = ExchangeUnit::from_params(&params, categories)?;
        let den = Denoiser::from_params(&params, branch, attention)?;
        Ok(FlowModel { params, unit, den, branch, categories, attention })
    }

    fn check_state(&self, graph: &SceneGraph, state: &FlowState) -> Result<()> {
        if state.branch() != self.branch {
            return Err(Error::Contract(format!(
                "model denoises the {} branch, state is {}",
                self.branch.name(),
                state.branch().name()
            )));
        }
        if state.node_count() != graph.len() {
            return Err(Error::Contract(format!(
                "state covers {} nodes, graph has {}",
                state.node_count(),
                graph.len()
            )));
        }
        Ok(())
    }

    /// Tape-level velocity prediction; the caller owns graph context so
    /// training can reuse topology across steps and mask features freely.
    pub fn velocity_node(
        &self,
        tape: &mut Tape,
        topo: &GraphTopo,
        feats: &NodeFeatures,
        state: &FlowState,
        t: f64,
        conditioned: bool,
    ) -> Result<NodeId> {
        let n = topo.n;
        let cond = if conditioned {
            self.unit.condition(tape, &self.params, topo, feats, &state.as_branch_state(), t)?
        } else {
            tape.constant(Tensor::zeros(&[n, COND_DIM]))
        };
        let cond_rows = match state.voxel_segs() {
            Some(segs) => {
                let mut owners = Vec::with_capacity(state.data().rows());
                for (node, seg) in segs.iter().enumerate() {
                    owners.extend(std::iter::repeat(node).take(seg.len()));
                }
                tape.select_rows(cond, Rc::new(owners))?
            }
            None => cond,
        };
        let rows = tape.constant(state.data().clone());
        self.den.velocity_rows(tape, &self.params, rows, cond_rows, t)
    }

    /// Forward-only condition vectors, [n, 128]. Exposed so coupling can be
    /// probed directly.
    pub fn condition_tensor(&self, graph: &SceneGraph, state: &FlowState, t: f64) -> Result<Tensor> {
        self.check_state(graph, state)?;
        let topo = GraphTopo::new(graph);
        let feats = NodeFeatures::from_graph(graph);
        let mut tape = Tape::new();
        let c =
            self.unit.condition(&mut tape, &self.params, &topo, &feats, &state.as_branch_state(), t)?;
        Ok(tape.value(c).clone())
    }
}

impl VelocityField for FlowModel {
    fn velocity(
        &self,
        graph: &SceneGraph,
        state: &FlowState,
        t: f64,
        conditioned: bool,
    ) -> Result<Tensor> {
        self.check_state(graph, state)?;
        let topo = GraphTopo::new(graph);
        let feats = NodeFeatures::from_graph(graph);
        let mut tape = Tape::new();
        let v = self.velocity_node(&mut tape, &topo, &feats, state, t, conditioned)?;
        Ok(tape.value(v).clone())
    }
}
