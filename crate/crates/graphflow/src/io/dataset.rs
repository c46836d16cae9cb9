//! `GFSD` dataset files: length-prefixed binary SceneSample records.
//!
//! Node features and per-voxel features are functions of (category, style,
//! embed seed), so records store identities, layouts, and grids; features
//! are rebuilt on read.

use std::path::Path;

use super::binary::{Reader, Writer};
use crate::graph::{
    make_node, voxel_feature, Modality, Predicate, SceneGraph, SceneSample, VoxelGrid,
};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"GFSD";
pub const DATASET_VERSION: u32 = 1;

/// Samples plus the embed seed their features were synthesized with.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<SceneSample>,
    pub embed_seed: u64,
}

fn modality_tag(m: Modality) -> u8 {
    match m {
        Modality::Text => 0,
        Modality::Image => 1,
        Modality::Both => 2,
        Modality::None => 3,
    }
}

fn modality_from_tag(t: u8) -> Result<Modality> {
    Ok(match t {
        0 => Modality::Text,
        1 => Modality::Image,
        2 => Modality::Both,
        3 => Modality::None,
        other => return Err(Error::Parse(format!("dataset: unknown modality tag {other}"))),
    })
}

pub fn encode_dataset(samples: &[SceneSample], embed_seed: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u64(embed_seed);
    w.u64(samples.len() as u64);
    for s in samples {
        let canon: Vec<_> = s.graph.edges().iter().filter(|e| e.src < e.dst).collect();
        w.u32(s.graph.len() as u32);
        w.u32(canon.len() as u32);
        for n in &s.graph.nodes {
            w.u32(n.category as u32);
            w.u32(n.style as u32);
            w.u8(modality_tag(n.modality));
        }
        for e in &canon {
            w.u32(e.src as u32);
            w.u32(e.dst as u32);
            w.u8(e.pred.index() as u8);
        }
        for row in &s.layouts {
            for v in row {
                w.f64(*v);
            }
        }
        for g in &s.grids {
            w.bytes(&g.to_bytes());
        }
    }
    w.finish()
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(buf, "dataset");
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let embed_seed = r.u64()?;
    let count = r.u64()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let e = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let category = r.u32()? as usize;
            let style = r.u32()? as usize;
            let modality = modality_from_tag(r.u8()?)?;
            nodes.push(make_node(category, style, modality, embed_seed));
        }
        let mut edges = Vec::with_capacity(e);
        for _ in 0..e {
            let src = r.u32()? as usize;
            let dst = r.u32()? as usize;
            let tag = r.u8()? as usize;
            let pred = *Predicate::ALL
                .get(tag)
                .ok_or_else(|| Error::Parse(format!("dataset: unknown predicate tag {tag}")))?;
            edges.push((src, dst, pred));
        }
        let graph = SceneGraph::new(nodes, edges)?;
        let mut layouts = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = [0.0; 8];
            for v in &mut row {
                *v = r.f64()?;
            }
            layouts.push(row);
        }
        let mut grids = Vec::with_capacity(n);
        for _ in 0..n {
            let b: [u8; 64] = r.bytes(64)?.try_into().expect("64 bytes");
            grids.push(VoxelGrid::from_bytes(&b));
        }
        let features = grids
            .iter()
            .zip(&graph.nodes)
            .map(|(g, spec)| {
                g.active()
                    .iter()
                    .map(|&v| voxel_feature(spec.category, spec.style, embed_seed, v))
                    .collect()
            })
            .collect();
        samples.push(SceneSample { graph, layouts, grids, features });
    }
    r.finish()?;
    Ok(Dataset { samples, embed_seed })
}

pub fn write_dataset(path: &Path, samples: &[SceneSample], embed_seed: u64) -> Result<()> {
    std::fs::write(path, encode_dataset(samples, embed_seed)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&buf)
}
