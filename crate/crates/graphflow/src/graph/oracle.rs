//! Procedural scene generator.
//!
//! Layouts are rejection-sampled until collision-free, voxel shapes come
//! from a small hand-authored prototype library with a bounded deterministic
//! perturbation, and the edge set is read off the finished geometry. Every
//! emitted relation therefore holds by construction.

use super::{
    make_node, synth_features, Modality, NodeSpec, Predicate, SceneGraph, VoxelGrid, GRID,
};
use crate::branches::{decode_layout, LayoutVector};
use crate::eval::{check_constraint, RuleThresholds};
use crate::tensor::Rng;
use crate::{Error, Result};

pub const DEFAULT_CATEGORIES: [&str; 6] = ["bed", "chair", "table", "lamp", "wardrobe", "shelf"];
pub const STYLES: usize = 4;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub categories: Vec<String>,
    pub styles: usize,
    pub node_min: usize,
    pub node_max: usize,
    /// Relationship budget per node (inverse edges excluded from the count).
    pub max_edges_per_node: usize,
    /// Placement attempts before a scene is declared unplaceable.
    pub max_attempts: usize,
    /// Chance that a scene carries one same-as pair.
    pub same_as_prob: f64,
    /// Seed for the synthetic text/vision features.
    pub embed_seed: u64,
    pub thresholds: RuleThresholds,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            styles: STYLES,
            node_min: 2,
            node_max: 6,
            max_edges_per_node: 3,
            max_attempts: 1000,
            same_as_prob: 0.5,
            embed_seed: 7,
            thresholds: RuleThresholds::default(),
        }
    }
}

/// A complete supervised scene: graph plus ground-truth layout, occupancy
/// and per-voxel features.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub graph: SceneGraph,
    /// Raw layout vectors, one per node.
    pub layouts: Vec<[f64; 8]>,
    pub grids: Vec<VoxelGrid>,
    /// Per node, one feature vector per active voxel in ascending voxel
    /// index order.
    pub features: Vec<Vec<[f64; 8]>>,
}

impl SceneSample {
    pub fn decoded_layouts(&self) -> Vec<LayoutVector> {
        self.layouts.iter().map(decode_layout).collect()
    }
}

/// Category-dependent half-extent ranges. Values keep every box well inside
/// the room and give the volume and height families real variety.
fn size_range(category: usize) -> ([f64; 3], [f64; 3]) {
    match category % 6 {
        0 => ([0.22, 0.07, 0.16], [0.34, 0.14, 0.26]), // bed: wide, low
        1 => ([0.06, 0.09, 0.06], [0.10, 0.15, 0.10]), // chair
        2 => ([0.12, 0.08, 0.10], [0.20, 0.12, 0.16]), // table
        3 => ([0.03, 0.14, 0.03], [0.05, 0.24, 0.05]), // lamp: thin, tall
        4 => ([0.14, 0.20, 0.06], [0.22, 0.30, 0.10]), // wardrobe
        _ => ([0.12, 0.16, 0.05], [0.18, 0.26, 0.08]), // shelf
    }
}

/// Hand-authored occupancy motifs. Style selects the motif; the category
/// sets its characteristic fill height.
pub fn prototype(category: usize, style: usize) -> VoxelGrid {
    let h = 2 + category % 3 + 1; // 3..=5 rows of fill
    let mut g = VoxelGrid::empty();
    let fill = |xs: std::ops::Range<usize>, ys: std::ops::Range<usize>, zs: std::ops::Range<usize>, grid: &mut VoxelGrid| {
        for x in xs.clone() {
            for y in ys.clone() {
                for z in zs.clone() {
                    grid.set(VoxelGrid::flat(x, y, z), true);
                }
            }
        }
    };
    match style % STYLES {
        0 => {
            // slab: full footprint, category height
            fill(0..GRID, 0..h, 0..GRID, &mut g);
        }
        1 => {
            // slab on corner posts
            for (x, z) in [(0, 0), (0, GRID - 2), (GRID - 2, 0), (GRID - 2, GRID - 2)] {
                fill(x..x + 2, 0..h, z..z + 2, &mut g);
            }
            fill(0..GRID, h..h + 2, 0..GRID, &mut g);
        }
        2 => {
            // L-shape: slab plus a back panel
            fill(0..GRID, 0..h, 0..GRID, &mut g);
            fill(0..GRID, 0..(h + 3).min(GRID), GRID - 2..GRID, &mut g);
        }
        _ => {
            // thin tall block
            fill(2..GRID - 2, 0..GRID - 1, 2..GRID - 2, &mut g);
        }
    }
    g
}

/// Every (category, style) base grid; used for codec pretraining.
pub fn prototype_library(cfg: &OracleConfig) -> Vec<VoxelGrid> {
    let mut out = Vec::new();
    for c in 0..cfg.categories.len() {
        for s in 0..cfg.styles {
            out.push(prototype(c, s));
        }
    }
    out
}

/// Flip up to two boundary voxels, deterministically in `rng`, never
/// emptying the grid.
fn perturb(base: &VoxelGrid, rng: &mut Rng) -> VoxelGrid {
    let mut g = base.clone();
    let flips = rng.below(3);
    for _ in 0..flips {
        let boundary = g.boundary();
        if boundary.is_empty() {
            break;
        }
        let idx = boundary[rng.below(boundary.len())];
        let was_on = g.get(idx);
        if was_on && g.count() == 1 {
            continue;
        }
        g.set(idx, !was_on);
    }
    g
}

/// Small deterministic per-position offset mixed into voxel features.
fn pos_hash(vidx: u16) -> [f64; 8] {
    let mut r = Rng::new(0x9A5E, vidx as u64);
    let mut out = [0.0; 8];
    for o in &mut out {
        *o = r.uniform_in(-1.0, 1.0);
    }
    out
}

/// Ground-truth texture feature for one voxel of a (category, style) node:
/// the unit-normalized leading slice of the style's vision embedding plus a
/// small positional offset. Normalization keeps style clusters far apart
/// relative to the offset radius.
pub fn voxel_feature(category: usize, style: usize, embed_seed: u64, vidx: u16) -> [f64; 8] {
    let (_, f) = synth_features(category, style, Modality::Both, embed_seed);
    let norm = f[..8].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let ph = pos_hash(vidx);
    let mut out = [0.0; 8];
    for k in 0..8 {
        out[k] = f[k] / norm + 0.1 * ph[k];
    }
    out
}

/// Canonical display color of a (category, style), channels in [0, 1].
pub fn style_color(category: usize, style: usize) -> [f64; 3] {
    let mut r = Rng::new(0xC01_0E, (category as u64) << 8 | style as u64);
    [r.uniform(), r.uniform(), r.uniform()]
}

struct Placement {
    layout: LayoutVector,
    raw: [f64; 8],
}

/// Axis-aligned footprints may touch but not overlap beyond tolerance.
fn overlaps(a: &LayoutVector, b: &LayoutVector, tol: f64) -> bool {
    let fa = a.footprint();
    let fb = b.footprint();
    let ox = (fa[0] + fb[0]) - (a.t[0] - b.t[0]).abs();
    let oz = (fa[1] + fb[1]) - (a.t[2] - b.t[2]).abs();
    ox > tol && oz > tol
}

fn place_node(
    category: usize,
    placed: &[Placement],
    cfg: &OracleConfig,
    rng: &mut Rng,
) -> Result<Placement> {
    let (lo, hi) = size_range(category);
    for _ in 0..cfg.max_attempts {
        let s = [
            rng.uniform_in(lo[0], hi[0]),
            rng.uniform_in(lo[1], hi[1]),
            rng.uniform_in(lo[2], hi[2]),
        ];
        let yaw = rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
        let (cos, sin) = (yaw.cos(), yaw.sin());
        let probe = LayoutVector { t: [0.0, 0.0, 0.0], s, cos, sin };
        let fp = probe.footprint();
        if fp[0] >= 1.0 || fp[1] >= 1.0 {
            continue;
        }
        let t = [
            rng.uniform_in(-1.0 + fp[0], 1.0 - fp[0]),
            -1.0 + s[1],
            rng.uniform_in(-1.0 + fp[1], 1.0 - fp[1]),
        ];
        let candidate = LayoutVector { t, s, cos, sin };
        if placed.iter().all(|p| !overlaps(&p.layout, &candidate, 1e-6)) {
            return Ok(Placement { raw: candidate.raw(), layout: candidate });
        }
    }
    Err(Error::Generation(format!(
        "no collision-free placement after {} attempts",
        cfg.max_attempts
    )))
}

/// One scene with exactly `n` nodes. Fails (for the caller to retry with a
/// smaller n) when placement cannot finish within the attempt budget.
pub fn generate_scene(cfg: &OracleConfig, n: usize, rng: &mut Rng) -> Result<SceneSample> {
    if n == 0 {
        return Err(Error::Generation("a scene needs at least one node".into()));
    }
    let ncat = cfg.categories.len();
    if ncat == 0 || cfg.styles == 0 {
        return Err(Error::Generation("empty category or style vocabulary".into()));
    }

    let mut cats: Vec<usize> = (0..n).map(|_| rng.below(ncat)).collect();
    let mut styles: Vec<usize> = (0..n).map(|_| rng.below(cfg.styles)).collect();

    // Optional same-as pair: second member copies the first's identity.
    let mut same_pair: Option<(usize, usize)> = None;
    if n >= 2 && rng.bernoulli(cfg.same_as_prob) {
        let i = rng.below(n);
        let mut j = rng.below(n);
        while j == i {
            j = rng.below(n);
        }
        let (i, j) = (i.min(j), i.max(j));
        cats[j] = cats[i];
        styles[j] = styles[i];
        same_pair = Some((i, j));
    }

    let mut placements: Vec<Placement> = Vec::with_capacity(n);
    for &cat in &cats {
        let p = place_node(cat, &placements, cfg, rng)?;
        placements.push(p);
    }

    // Shapes: same-as members share one perturbed grid exactly; everyone
    // else gets an independent perturbation of their prototype.
    let mut grids: Vec<Option<VoxelGrid>> = vec![None; n];
    if let Some((i, j)) = same_pair {
        let mut sub = rng.substream(0x5A5A ^ i as u64);
        let shared = perturb(&prototype(cats[i], styles[i]), &mut sub);
        grids[i] = Some(shared.clone());
        grids[j] = Some(shared);
    }
    for i in 0..n {
        if grids[i].is_none() {
            let mut sub = rng.substream(0xB0B0 ^ i as u64);
            grids[i] = Some(perturb(&prototype(cats[i], styles[i]), &mut sub));
        }
    }
    let grids: Vec<VoxelGrid> = grids.into_iter().map(Option::unwrap).collect();

    let features: Vec<Vec<[f64; 8]>> = (0..n)
        .map(|i| {
            grids[i]
                .active()
                .iter()
                .map(|&v| voxel_feature(cats[i], styles[i], cfg.embed_seed, v))
                .collect()
        })
        .collect();

    // Candidate relationships from geometry; each candidate stands for the
    // edge together with its inverse.
    let layouts: Vec<LayoutVector> = placements.iter().map(|p| p.layout).collect();
    let mut candidates: Vec<(usize, usize, Predicate)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for fam_rep in [
                Predicate::LeftOf,
                Predicate::FrontOf,
                Predicate::BiggerThan,
                Predicate::TallerThan,
                Predicate::CloseBy,
                Predicate::SymmetricalTo,
            ] {
                if check_constraint(fam_rep, &layouts[i], &layouts[j], &cfg.thresholds)? {
                    candidates.push((i, j, fam_rep));
                } else if fam_rep != fam_rep.inverse()
                    && check_constraint(fam_rep, &layouts[j], &layouts[i], &cfg.thresholds)?
                {
                    candidates.push((j, i, fam_rep));
                }
            }
        }
    }
    rng.shuffle(&mut candidates);

    let mut budget = vec![0usize; n];
    let mut chosen: Vec<(usize, usize, Predicate)> = Vec::new();
    if let Some((i, j)) = same_pair {
        chosen.push((i, j, Predicate::SameAs));
        budget[i] += 1;
        budget[j] += 1;
    }
    for (i, j, p) in candidates {
        if budget[i] < cfg.max_edges_per_node && budget[j] < cfg.max_edges_per_node {
            chosen.push((i, j, p));
            budget[i] += 1;
            budget[j] += 1;
        }
    }

    let nodes: Vec<NodeSpec> = (0..n)
        .map(|i| make_node(cats[i], styles[i], Modality::Both, cfg.embed_seed))
        .collect();
    let graph = SceneGraph::new(nodes, chosen)?;

    Ok(SceneSample {
        graph,
        layouts: placements.iter().map(|p| p.raw).collect(),
        grids,
        features,
    })
}

/// Deterministic dataset: scene k draws from stream k of `seed`. Scenes
/// that fail placement retry with one node fewer.
pub fn generate_dataset(cfg: &OracleConfig, count: usize, seed: u64) -> Result<Vec<SceneSample>> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = Rng::new(seed, k as u64);
        let mut n = cfg.node_min + rng.below(cfg.node_max - cfg.node_min + 1);
        loop {
            match generate_scene(cfg, n, &mut rng) {
                Ok(s) => {
                    out.push(s);
                    break;
                }
                Err(Error::Generation(_)) if n > 1 => {
                    n -= 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}
