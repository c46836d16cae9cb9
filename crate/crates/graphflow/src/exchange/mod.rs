//! Graph exchange unit: the conditioning path every branch shares.
//!
//! Each layer forms one triplet row per node (self loop with a learned
//! null relation) and one per directed edge, runs all rows through a shared
//! message MLP, splits the result into two endpoint messages and an evolved
//! relation feature, then rebuilds node states from segment means. Directed
//! edges come in inverse-closed pairs, so both endpoints of every relation
//! hear about each other.
//!
//! All index work lives in `GraphTopo`; the forward pass is pure tape ops,
//! which keeps it differentiable and bitwise deterministic.

use std::rc::Rc;

use crate::graph::{Predicate, SceneGraph, TEXT_DIM, VISION_DIM};
use crate::tensor::{NodeId, ParamId, ParamSet, Rng, Tape, Tensor};
use crate::{Error, Result};

pub const COND_DIM: usize = 128;
pub const TIME_DIM: usize = 32;
pub const REL_DIM: usize = 32;
pub const CAT_EMBED_DIM: usize = 16;
pub const STATE_PROJ_DIM: usize = 64;
pub const LAYERS: usize = 5;
const MSG_HIDDEN: usize = 256;
const TRIPLET_IN: usize = 2 * COND_DIM + REL_DIM;
const NODE_IN: usize = CAT_EMBED_DIM + TEXT_DIM + VISION_DIM + STATE_PROJ_DIM + TIME_DIM;

/// Geometric frequencies; the classic positional recipe on scalar time.
pub fn time_embedding(t: f64) -> [f64; TIME_DIM] {
    let mut out = [0.0; TIME_DIM];
    for k in 0..TIME_DIM / 2 {
        let arg = (1u64 << k) as f64 * t;
        out[k] = arg.sin();
        out[TIME_DIM / 2 + k] = arg.cos();
    }
    out
}

/// Index plumbing for one graph, shared across layers and branches.
#[derive(Debug, Clone)]
pub struct GraphTopo {
    pub n: usize,
    pub e: usize,
    /// Row sources for the triplet a-slot: nodes 0..n, then edge sources.
    slot_a: Rc<Vec<usize>>,
    /// Row sources for the b-slot: nodes 0..n, then edge destinations.
    slot_b: Rc<Vec<usize>>,
    /// Predicate table rows for the edge rows.
    pred_rows: Rc<Vec<usize>>,
    /// Null-relation row (always 0) repeated for the n self rows.
    null_rows: Rc<Vec<usize>>,
    /// Per node: its self message plus the endpoint messages it owns.
    gamma_segs: Rc<Vec<Vec<usize>>>,
    /// Per node: the messages describing its neighbors.
    neigh_segs: Rc<Vec<Vec<usize>>>,
}

impl GraphTopo {
    pub fn new(graph: &SceneGraph) -> GraphTopo {
        let n = graph.len();
        let edges = graph.edges();
        let e = edges.len();
        let mut slot_a: Vec<usize> = (0..n).collect();
        let mut slot_b = slot_a.clone();
        let mut pred_rows = Vec::with_capacity(e);
        for edge in edges {
            slot_a.push(edge.src);
            slot_b.push(edge.dst);
            pred_rows.push(edge.pred.index());
        }

        // Message rows live in a [gamma_a; gamma_b] stack of 2(n+e) rows:
        // gamma_a of row r at r, gamma_b of row r at (n+e)+r.
        let mut gamma_segs = vec![Vec::new(); n];
        let mut neigh_segs = vec![Vec::new(); n];
        for i in 0..n {
            gamma_segs[i].push(i);
        }
        for (k, edge) in edges.iter().enumerate() {
            let row = n + k;
            gamma_segs[edge.src].push(row);
            gamma_segs[edge.dst].push((n + e) + row);
            neigh_segs[edge.src].push((n + e) + row);
            neigh_segs[edge.dst].push(row);
        }

        GraphTopo {
            n,
            e,
            slot_a: Rc::new(slot_a),
            slot_b: Rc::new(slot_b),
            pred_rows: Rc::new(pred_rows),
            null_rows: Rc::new(vec![0; n]),
            gamma_segs: Rc::new(gamma_segs),
            neigh_segs: Rc::new(neigh_segs),
        }
    }
}

/// Dense per-node inputs pulled out of a graph.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    pub cats: Rc<Vec<usize>>,
    pub text: Tensor,
    pub vision: Tensor,
}

impl NodeFeatures {
    pub fn from_graph(graph: &SceneGraph) -> NodeFeatures {
        let n = graph.len();
        let mut text = Vec::with_capacity(n * TEXT_DIM);
        let mut vision = Vec::with_capacity(n * VISION_DIM);
        let mut cats = Vec::with_capacity(n);
        for node in &graph.nodes {
            cats.push(node.category);
            text.extend_from_slice(&node.text_feat);
            vision.extend_from_slice(&node.vision_feat);
        }
        NodeFeatures {
            cats: Rc::new(cats),
            text: Tensor { shape: vec![n, TEXT_DIM], data: text },
            vision: Tensor { shape: vec![n, VISION_DIM], data: vision },
        }
    }
}

/// The branch state being refined, as it enters the conditioner.
pub enum BranchState<'a> {
    /// [n, 8] layout rows.
    Layout(&'a Tensor),
    /// [n, 16] shape latents.
    Shape(&'a Tensor),
    /// [v, 8] per-voxel features plus each voxel's owning node.
    Texture { feats: &'a Tensor, voxel_segs: Rc<Vec<Vec<usize>>> },
}

struct Layer {
    msg1: (ParamId, ParamId),
    msg2: (ParamId, ParamId),
    agg1: (ParamId, ParamId),
    agg2: (ParamId, ParamId),
    tau_null: ParamId,
}

/// Parameters live in a caller-owned `ParamSet` so the conditioner and a
/// denoiser can share one optimizer and one checkpoint table.
pub struct ExchangeUnit {
    cat_table: ParamId,
    pred_table: ParamId,
    proj_layout: (ParamId, ParamId),
    proj_shape: (ParamId, ParamId),
    proj_texture: (ParamId, ParamId),
    input: (ParamId, ParamId),
    layers: Vec<Layer>,
}

impl ExchangeUnit {
    pub fn new(ps: &mut ParamSet, categories: usize, seed: u64) -> Result<ExchangeUnit> {
        let mut rng = Rng::new(seed, 0xE8C4);
        let cat_table = ps.add_table("xch.cat", &mut rng, categories, CAT_EMBED_DIM)?;
        let pred_table =
            ps.add_table("xch.pred", &mut rng, Predicate::ALL.len(), REL_DIM)?;
        let proj_layout = ps.add_linear("xch.proj.layout", &mut rng, 8, STATE_PROJ_DIM)?;
        let proj_shape = ps.add_linear("xch.proj.shape", &mut rng, 16, STATE_PROJ_DIM)?;
        let proj_texture = ps.add_linear("xch.proj.texture", &mut rng, 8, STATE_PROJ_DIM)?;
        let input = ps.add_linear("xch.in", &mut rng, NODE_IN, COND_DIM)?;
        let mut layers = Vec::with_capacity(LAYERS);
        for l in 0..LAYERS {
            layers.push(Layer {
                msg1: ps.add_linear(&format!("xch.l{l}.msg1"), &mut rng, TRIPLET_IN, MSG_HIDDEN)?,
                msg2: ps.add_linear(&format!("xch.l{l}.msg2"), &mut rng, MSG_HIDDEN, TRIPLET_IN)?,
                agg1: ps.add_linear(&format!("xch.l{l}.agg1"), &mut rng, COND_DIM, MSG_HIDDEN)?,
                agg2: ps.add_linear(&format!("xch.l{l}.agg2"), &mut rng, MSG_HIDDEN, COND_DIM)?,
                tau_null: ps.add(&format!("xch.l{l}.tau0"), tau_null_init(&mut rng, l))?,
            });
        }
        Ok(ExchangeUnit {
            cat_table,
            pred_table,
            proj_layout,
            proj_shape,
            proj_texture,
            input,
            layers,
        })
    }

    pub fn from_params(params: &ParamSet, categories: usize) -> Result<ExchangeUnit> {
        let get = |name: &str| {
            params
                .lookup(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let pair = |stem: &str| -> Result<(ParamId, ParamId)> {
            Ok((get(&format!("{stem}.w"))?, get(&format!("{stem}.b"))?))
        };
        let cat_table = get("xch.cat")?;
        if params.value(cat_table).rows() != categories {
            return Err(Error::Checkpoint(format!(
                "category table has {} rows, vocabulary has {categories}",
                params.value(cat_table).rows()
            )));
        }
        let pred_table = get("xch.pred")?;
        let proj_layout = pair("xch.proj.layout")?;
        let proj_shape = pair("xch.proj.shape")?;
        let proj_texture = pair("xch.proj.texture")?;
        let input = pair("xch.in")?;
        let mut layers = Vec::with_capacity(LAYERS);
        for l in 0..LAYERS {
            layers.push(Layer {
                msg1: pair(&format!("xch.l{l}.msg1"))?,
                msg2: pair(&format!("xch.l{l}.msg2"))?,
                agg1: pair(&format!("xch.l{l}.agg1"))?,
                agg2: pair(&format!("xch.l{l}.agg2"))?,
                tau_null: get(&format!("xch.l{l}.tau0"))?,
            });
        }
        Ok(ExchangeUnit {
            cat_table,
            pred_table,
            proj_layout,
            proj_shape,
            proj_texture,
            input,
            layers,
        })
    }

    fn linear(
        &self,
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

    fn project_state(&self, tape: &mut Tape, ps: &ParamSet, state: &BranchState) -> Result<NodeId> {
        match state {
            BranchState::Layout(d) => {
                let x = tape.constant((*d).clone());
                self.linear(tape, ps, self.proj_layout, x)
            }
            BranchState::Shape(d) => {
                let x = tape.constant((*d).clone());
                self.linear(tape, ps, self.proj_shape, x)
            }
            BranchState::Texture { feats, voxel_segs } => {
                let x = tape.constant((*feats).clone());
                let pooled = tape.segment_mean(x, Rc::clone(voxel_segs))?;
                self.linear(tape, ps, self.proj_texture, pooled)
            }
        }
    }

    /// Node-wise condition vectors, [n, 128].
    pub fn condition(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        topo: &GraphTopo,
        feats: &NodeFeatures,
        state: &BranchState,
        t: f64,
    ) -> Result<NodeId> {
        if feats.cats.len() != topo.n {
            return Err(Error::Contract(format!(
                "{} node features for a {}-node topology",
                feats.cats.len(),
                topo.n
            )));
        }
        let cat_node = tape.param(ps, self.cat_table);
        let p = tape.select_rows(cat_node, Rc::clone(&feats.cats))?;
        let u = tape.constant(feats.text.clone());
        let f = tape.constant(feats.vision.clone());
        let sproj = self.project_state(tape, ps, state)?;
        let temb_row = time_embedding(t);
        let temb = tape.constant(Tensor {
            shape: vec![topo.n, TIME_DIM],
            data: (0..topo.n).flat_map(|_| temb_row).collect(),
        });
        let x = tape.concat_cols(&[p, u, f, sproj, temb])?;
        let mut delta = self.linear(tape, ps, self.input, x)?;

        let pred_node = tape.param(ps, self.pred_table);
        let mut tau_edges: Option<NodeId> = if topo.e > 0 {
            Some(tape.select_rows(pred_node, Rc::clone(&topo.pred_rows))?)
        } else {
            None
        };

        for layer in &self.layers {
            let tau_null = tape.param(ps, layer.tau_null);
            let tau_self = tape.select_rows(tau_null, Rc::clone(&topo.null_rows))?;
            let a = tape.select_rows(delta, Rc::clone(&topo.slot_a))?;
            let b = tape.select_rows(delta, Rc::clone(&topo.slot_b))?;
            let tau = match tau_edges {
                Some(te) => tape.concat_rows(&[tau_self, te])?,
                None => tau_self,
            };
            let trip = tape.concat_cols(&[a, tau, b])?;
            let h = self.linear(tape, ps, layer.msg1, trip)?;
            let h = tape.gelu(h)?;
            let msg = self.linear(tape, ps, layer.msg2, h)?;

            let gamma_a = tape.slice_cols(msg, 0, COND_DIM)?;
            let tau_next = tape.slice_cols(msg, COND_DIM, REL_DIM)?;
            let gamma_b = tape.slice_cols(msg, COND_DIM + REL_DIM, COND_DIM)?;
            let gammas = tape.concat_rows(&[gamma_a, gamma_b])?;

            let own = tape.segment_mean(gammas, Rc::clone(&topo.gamma_segs))?;
            let neigh = tape.segment_mean(gammas, Rc::clone(&topo.neigh_segs))?;
            let h = self.linear(tape, ps, layer.agg1, neigh)?;
            let h = tape.gelu(h)?;
            let agg = self.linear(tape, ps, layer.agg2, h)?;
            delta = tape.add(own, agg)?;

            tau_edges = if topo.e > 0 {
                Some(tape.slice_rows(tau_next, topo.n, topo.e)?)
            } else {
                None
            };
        }
        Ok(delta)
    }
}

fn tau_null_init(rng: &mut Rng, layer: usize) -> Tensor {
    let mut r = rng.substream(0x7A0 ^ layer as u64);
    let scale = (1.0 / REL_DIM as f64).sqrt();
    Tensor {
        shape: vec![1, REL_DIM],
        data: (0..REL_DIM).map(|_| r.normal() * scale).collect(),
    }
}

/// Voxel ownership segments for texture pooling: segment i lists the rows
/// of node i's voxels in the stacked feature matrix.
pub fn voxel_segments(counts: &[usize]) -> Rc<Vec<Vec<usize>>> {
    let mut segs = Vec::with_capacity(counts.len());
    let mut next = 0;
    for &c in counts {
        segs.push((next..next + c).collect());
        next += c;
    }
    Rc::new(segs)
}
