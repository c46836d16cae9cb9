//! End-to-end drivers shared by the command-line tools and the integration
//! tests: turning datasets into training items, sampling whole scenes from
//! trained branches, graph perturbations, and the evaluation modes.

use std::rc::Rc;

use crate::branches::{
    assemble, decode_layout, AssembledScene, LayoutVector, ShapeCodec, TextureCodec,
    TEXTURE_FEAT_DIM,
};
use crate::eval::{
    chamfer, check_constraint, eval_scenes, EvalCase, EvalMode, ModeReport, RuleThresholds,
};
use crate::flow::{sample, Branch, FlowModel, FlowState, SampleConfig, TrainItem};
use crate::graph::{
    make_node, style_color, Edge, Modality, OracleConfig, Predicate, SceneGraph, SceneSample,
    VoxelGrid,
};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

pub fn layout_items(samples: &[SceneSample]) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .map(|s| {
            let rows: Vec<f64> = s.layouts.iter().flatten().copied().collect();
            let d0 = FlowState::layout(Tensor::new(vec![s.layouts.len(), 8], rows)?)?;
            Ok(TrainItem { graph: s.graph.clone(), d0 })
        })
        .collect()
}

pub fn shape_items(samples: &[SceneSample], codec: &ShapeCodec) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .map(|s| {
            let d0 = FlowState::shape(codec.encode_batch(&s.grids)?)?;
            Ok(TrainItem { graph: s.graph.clone(), d0 })
        })
        .collect()
}

/// Voxel features are their own latent code, so no codec is involved here.
pub fn texture_items(samples: &[SceneSample]) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .map(|s| {
            let voxels: Vec<Vec<u16>> = s.grids.iter().map(|g| g.active()).collect();
            let total: usize = voxels.iter().map(|v| v.len()).sum();
            let rows: Vec<f64> =
                s.features.iter().flatten().flatten().copied().collect();
            let feats = Tensor::new(vec![total, TEXTURE_FEAT_DIM], rows)?;
            let d0 = FlowState::texture(feats, Rc::new(voxels))?;
            Ok(TrainItem { graph: s.graph.clone(), d0 })
        })
        .collect()
}

/// Decode every row of a layout state.
pub fn state_layouts(state: &FlowState) -> Vec<LayoutVector> {
    (0..state.node_count())
        .map(|i| {
            let mut raw = [0.0; 8];
            raw.copy_from_slice(state.data().row(i));
            decode_layout(&raw)
        })
        .collect()
}

pub fn sample_layouts(
    model: &FlowModel,
    graph: &SceneGraph,
    cfg: &SampleConfig,
) -> Result<Vec<LayoutVector>> {
    let out = sample(model, graph, Branch::Layout, None, cfg)?;
    Ok(state_layouts(&out))
}

/// Trained branches available when sampling a scene. Layout is mandatory;
/// shape and texture fall back to placeholders when absent.
pub struct SceneModels<'a> {
    pub layout: &'a FlowModel,
    pub shape: Option<(&'a FlowModel, &'a ShapeCodec)>,
    pub texture: Option<(&'a FlowModel, &'a TextureCodec)>,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub layouts: Vec<LayoutVector>,
    /// Decoded occupancy, or the solid cube when no shape branch ran.
    pub grids: Vec<VoxelGrid>,
    /// Per active voxel; empty for nodes whose grid decoded empty.
    pub colors: Vec<Vec<[f64; 3]>>,
}

impl GeneratedScene {
    pub fn assemble(&self, graph: &SceneGraph) -> Result<AssembledScene> {
        assemble(graph, &self.layouts, &self.grids, &self.colors)
    }
}

/// Run every available branch on one graph. Each branch integrates its own
/// noise stream derived from the config seed, so adding a branch never
/// shifts the others' outputs.
pub fn sample_scene(
    models: &SceneModels,
    graph: &SceneGraph,
    cfg: &SampleConfig,
) -> Result<GeneratedScene> {
    let mut seeds = Rng::new(cfg.seed, 0x5EED);
    let layout_cfg = SampleConfig { seed: seeds.next_u64(), ..cfg.clone() };
    let shape_cfg = SampleConfig { seed: seeds.next_u64(), ..cfg.clone() };
    let texture_cfg = SampleConfig { seed: seeds.next_u64(), ..cfg.clone() };

    let layouts = sample_layouts(models.layout, graph, &layout_cfg)?;

    let grids = match models.shape {
        Some((model, codec)) => {
            let state = sample(model, graph, Branch::Shape, None, &shape_cfg)?;
            codec.decode_batch(state.data())?
        }
        None => vec![VoxelGrid::full(); graph.len()],
    };

    let total: usize = grids.iter().map(|g| g.count()).sum();
    let colors = match models.texture {
        Some((model, codec)) if total > 0 => {
            let state = sample(model, graph, Branch::Texture, Some(&grids), &texture_cfg)?;
            let rgb = codec.decode_batch(state.data())?;
            let mut out = Vec::with_capacity(grids.len());
            let mut at = 0;
            for g in &grids {
                let mut cols = Vec::with_capacity(g.count());
                for _ in 0..g.count() {
                    let row = rgb.row(at);
                    cols.push([row[0], row[1], row[2]]);
                    at += 1;
                }
                out.push(cols);
            }
            out
        }
        _ => graph
            .nodes
            .iter()
            .zip(&grids)
            .map(|(node, g)| vec![style_color(node.category, node.style); g.count()])
            .collect(),
    };

    Ok(GeneratedScene { layouts, grids, colors })
}

/// Object-frame point clouds for shape metrics; an empty grid stands in as
/// the solid cube, mirroring scene assembly.
pub fn grid_points(grids: &[VoxelGrid]) -> Vec<Vec<[f64; 3]>> {
    grids
        .iter()
        .map(|g| if g.count() == 0 { VoxelGrid::full().centers() } else { g.centers() })
        .collect()
}

/// Ascending-order arc implied by a directional predicate: left-of points
/// small-x to large-x, bigger-than small-volume to large-volume, and so on.
/// None for the symmetric predicates, which impose no ordering.
fn ordering_arc(e: &Edge) -> Option<(usize, usize)> {
    match e.pred {
        Predicate::LeftOf | Predicate::Behind | Predicate::SmallerThan | Predicate::ShorterThan => {
            Some((e.src, e.dst))
        }
        Predicate::RightOf | Predicate::FrontOf | Predicate::BiggerThan | Predicate::TallerThan => {
            Some((e.dst, e.src))
        }
        Predicate::CloseBy | Predicate::SymmetricalTo | Predicate::SameAs => None,
    }
}

fn has_cycle(n: usize, arcs: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0usize; n];
    for &(_, b) in arcs {
        indeg[b] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for &(a, b) in arcs {
            if a == v {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    ready.push(b);
                }
            }
        }
    }
    seen < n
}

/// Swap one directed edge for its inverse, choosing only edges whose
/// reversal leaves the graph satisfiable: within each ordering family the
/// constraints form a partial order, and reversing one arc of a transitive
/// chain would demand a cycle no layout can realize. None when the graph
/// carries no such edge.
pub fn flip_one_relationship(
    graph: &SceneGraph,
    rng: &mut Rng,
) -> Result<Option<(SceneGraph, (usize, usize, Predicate))>> {
    let canonical: Vec<Edge> =
        graph.edges().iter().filter(|e| e.src < e.dst).copied().collect();
    let candidates: Vec<(usize, usize, Predicate)> = canonical
        .iter()
        .filter(|e| e.pred.inverse() != e.pred)
        .filter(|e| {
            let fam = e.pred.family();
            let mut arcs: Vec<(usize, usize)> = canonical
                .iter()
                .filter(|o| {
                    (o.src, o.dst, o.pred) != (e.src, e.dst, e.pred) && o.pred.family() == fam
                })
                .filter_map(ordering_arc)
                .collect();
            let (a, b) = ordering_arc(e).expect("directional predicates order their family");
            arcs.push((b, a));
            !has_cycle(graph.len(), &arcs)
        })
        .map(|e| (e.src, e.dst, e.pred))
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let (src, dst, old) = candidates[rng.below(candidates.len())];
    let new = old.inverse();
    let flipped = graph.change_relationship(src, dst, old, new)?;
    Ok(Some((flipped, (src, dst, new))))
}

const ADDITION_POOL: [Predicate; 9] = [
    Predicate::LeftOf,
    Predicate::RightOf,
    Predicate::FrontOf,
    Predicate::Behind,
    Predicate::BiggerThan,
    Predicate::SmallerThan,
    Predicate::TallerThan,
    Predicate::ShorterThan,
    Predicate::CloseBy,
];

/// Append a fresh node with one or two edges to distinct existing nodes.
pub fn extend_with_node(
    graph: &SceneGraph,
    oracle: &OracleConfig,
    rng: &mut Rng,
) -> Result<(SceneGraph, Vec<(usize, usize, Predicate)>)> {
    let n = graph.len();
    if n == 0 {
        return Err(Error::Contract("cannot extend an empty graph".into()));
    }
    let cat = rng.below(oracle.categories.len());
    let style = rng.below(oracle.styles);
    let spec = make_node(cat, style, Modality::Both, oracle.embed_seed);
    let wanted = 1 + rng.below(2.min(n));
    let mut targets = Vec::with_capacity(wanted);
    while targets.len() < wanted {
        let t = rng.below(n);
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let edges: Vec<(usize, usize, Predicate)> = targets
        .into_iter()
        .map(|t| (n, t, ADDITION_POOL[rng.below(ADDITION_POOL.len())]))
        .collect();
    let extended = graph.add_node(spec, &edges)?;
    Ok((extended, edges))
}

#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub report: ModeReport,
    /// Satisfied/checked over just the swapped edges (relationship-change).
    pub changed: Option<(usize, usize)>,
    /// Generated grids that decoded all-empty.
    pub degenerate: usize,
    /// Conditioning graph and occupancy per scored scene; filled when a
    /// shape branch ran, or with the ground truth under `oracle`.
    pub generated: Vec<(SceneGraph, Vec<VoxelGrid>)>,
}

/// Score one evaluation mode over a held-out set. `oracle` swaps the
/// generator for the ground truth itself, a plumbing check that must come
/// out at rate 1.
pub fn run_eval_mode(
    mode: EvalMode,
    models: &SceneModels,
    samples: &[SceneSample],
    cfg: &SampleConfig,
    th: &RuleThresholds,
    oracle_cfg: &OracleConfig,
    seed: u64,
    oracle: bool,
) -> Result<ModeOutcome> {
    let mut cases = Vec::with_capacity(samples.len());
    let mut changed_sat = 0;
    let mut changed_total = 0;
    let mut degenerate = 0;
    let mut generated = Vec::new();

    for (k, s) in samples.iter().enumerate() {
        if oracle {
            generated.push((s.graph.clone(), s.grids.clone()));
            cases.push(EvalCase {
                graph: s.graph.clone(),
                layouts: s.decoded_layouts(),
                grids: Some(s.grids.clone()),
            });
            continue;
        }
        let mut prng = Rng::new(seed ^ 0xED17, k as u64);
        let (cond_graph, score_graph, changed_edge) = match mode {
            EvalMode::Generation => (s.graph.clone(), s.graph.clone(), None),
            EvalMode::RelationshipChange => match flip_one_relationship(&s.graph, &mut prng)? {
                Some((g, e)) => (g.clone(), g, Some(e)),
                None => continue,
            },
            EvalMode::NodeAddition => {
                let (g, new_edges) = extend_with_node(&s.graph, oracle_cfg, &mut prng)?;
                let score = SceneGraph::new(g.nodes.clone(), new_edges)?;
                (g, score, None)
            }
        };
        let scene_cfg =
            SampleConfig { seed: Rng::new(seed, k as u64 + 1).next_u64(), ..cfg.clone() };
        let gen = sample_scene(models, &cond_graph, &scene_cfg)?;
        degenerate += gen.grids.iter().filter(|g| g.count() == 0).count();
        if let Some((src, dst, pred)) = changed_edge {
            changed_total += 1;
            if check_constraint(pred, &gen.layouts[src], &gen.layouts[dst], th)? {
                changed_sat += 1;
            }
        }
        let grids = models.shape.is_some().then(|| gen.grids.clone());
        if models.shape.is_some() {
            generated.push((cond_graph, gen.grids.clone()));
        }
        cases.push(EvalCase { graph: score_graph, layouts: gen.layouts, grids });
    }

    let report = eval_scenes(mode, &cases, th)?;
    let changed = (mode == EvalMode::RelationshipChange && !oracle)
        .then_some((changed_sat, changed_total));
    Ok(ModeOutcome { report, changed, degenerate, generated })
}

#[derive(Debug, Clone, Copy)]
pub struct SameAsReport {
    pub pairs: usize,
    pub mean: f64,
    pub control_pairs: usize,
    pub control_mean: f64,
}

/// Chamfer distance between object-frame clouds of same-as partners, next
/// to an equal count of random non-same-as pairs from the same scenes.
pub fn same_as_consistency(
    cases: &[(&SceneGraph, &[VoxelGrid])],
    seed: u64,
) -> Result<SameAsReport> {
    let points: Vec<Vec<Vec<[f64; 3]>>> =
        cases.iter().map(|(_, grids)| grid_points(grids)).collect();

    let mut pair_cd = Vec::new();
    for ((graph, _), pts) in cases.iter().zip(&points) {
        for e in graph.edges() {
            if e.pred == Predicate::SameAs && e.src < e.dst {
                pair_cd.push(chamfer(&pts[e.src], &pts[e.dst])?);
            }
        }
    }
    if pair_cd.is_empty() {
        return Err(Error::Metric(
            "no same-as pairs in the evaluation set; raise same_as_prob in the data config"
                .into(),
        ));
    }

    let mut rng = Rng::new(seed, 0x5A5A);
    let mut control_cd = Vec::new();
    let mut attempts = 0;
    while control_cd.len() < pair_cd.len() && attempts < 1000 * pair_cd.len() {
        attempts += 1;
        let ci = rng.below(cases.len());
        let (graph, _) = cases[ci];
        if graph.len() < 2 {
            continue;
        }
        let a = rng.below(graph.len());
        let b = rng.below(graph.len());
        if a == b {
            continue;
        }
        let linked = graph
            .edges()
            .iter()
            .any(|e| e.pred == Predicate::SameAs && e.src == a.min(b) && e.dst == a.max(b));
        if linked {
            continue;
        }
        control_cd.push(chamfer(&points[ci][a], &points[ci][b])?);
    }
    if control_cd.is_empty() {
        return Err(Error::Metric(
            "no non-same-as node pairs available for the control".into(),
        ));
    }

    Ok(SameAsReport {
        pairs: pair_cd.len(),
        mean: pair_cd.iter().sum::<f64>() / pair_cd.len() as f64,
        control_pairs: control_cd.len(),
        control_mean: control_cd.iter().sum::<f64>() / control_cd.len() as f64,
    })
}
