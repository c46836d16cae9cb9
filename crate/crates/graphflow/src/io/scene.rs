//! Assembled-scene container (GFAS). Stores per-node identity, placement,
//! occupancy, and colors; room-frame points are recomputed on read from the
//! grid centers and the stored placement, so they round-trip bitwise.

use std::path::Path;

use crate::branches::{AssembledNode, AssembledScene, LayoutVector};
use crate::graph::VoxelGrid;
use crate::io::binary::{Reader, Writer};
use crate::{Error, Result};

pub const SCENE_MAGIC: [u8; 4] = *b"GFAS";
pub const SCENE_VERSION: u32 = 1;

/// `vocab[node.category]` must name every category in the scene.
pub fn encode_scene(scene: &AssembledScene, vocab: &[String]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(&SCENE_MAGIC);
    w.u32(SCENE_VERSION);
    w.u32(vocab.len() as u32);
    for name in vocab {
        w.str(name);
    }
    w.u32(scene.degenerate_shapes as u32);
    w.u32(scene.nodes.len() as u32);
    for node in &scene.nodes {
        if node.category >= vocab.len() {
            return Err(Error::Contract(format!(
                "node category {} outside vocabulary of {}",
                node.category,
                vocab.len()
            )));
        }
        w.u32(node.category as u32);
        for v in node.layout.raw() {
            w.f64(v);
        }
        w.bytes(&node.grid.to_bytes());
        if node.colors.len() != node.grid.count() {
            return Err(Error::Contract(format!(
                "{} colors for {} active voxels",
                node.colors.len(),
                node.grid.count()
            )));
        }
        for c in &node.colors {
            for ch in c {
                w.f64(*ch);
            }
        }
    }
    Ok(w.finish())
}

pub fn decode_scene(buf: &[u8]) -> Result<(AssembledScene, Vec<String>)> {
    let mut r = Reader::new(buf, "scene");
    r.magic(&SCENE_MAGIC)?;
    r.version(SCENE_VERSION)?;
    let vn = r.u32()? as usize;
    let mut vocab = Vec::with_capacity(vn);
    for _ in 0..vn {
        vocab.push(r.str()?);
    }
    let degenerate_shapes = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let category = r.u32()? as usize;
        if category >= vocab.len() {
            return Err(Error::Parse(format!(
                "scene: category {category} outside vocabulary of {vn}"
            )));
        }
        let mut raw = [0.0; 8];
        for v in &mut raw {
            *v = r.f64()?;
        }
        let layout = LayoutVector {
            t: [raw[0], raw[1], raw[2]],
            s: [raw[3], raw[4], raw[5]],
            cos: raw[6],
            sin: raw[7],
        };
        let mut gb = [0u8; 64];
        gb.copy_from_slice(r.bytes(64)?);
        let grid = VoxelGrid::from_bytes(&gb);
        let mut colors = Vec::with_capacity(grid.count());
        for _ in 0..grid.count() {
            colors.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        let points = grid
            .centers()
            .into_iter()
            .map(|p| layout.transform(p))
            .collect();
        nodes.push(AssembledNode { category, layout, grid, points, colors });
    }
    r.finish()?;
    Ok((AssembledScene { nodes, degenerate_shapes }, vocab))
}

pub fn write_scene(path: &Path, scene: &AssembledScene, vocab: &[String]) -> Result<()> {
    let bytes = encode_scene(scene, vocab)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<(AssembledScene, Vec<String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scene(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::{assemble, decode_layout};
    use crate::graph::{generate_scene, style_color, OracleConfig};
    use crate::tensor::Rng;

    fn sample_scene() -> (AssembledScene, Vec<String>) {
        let cfg = OracleConfig::default();
        let mut rng = Rng::new(41, 7);
        let sample = generate_scene(&cfg, 4, &mut rng).unwrap();
        let layouts: Vec<LayoutVector> =
            sample.layouts.iter().map(|r| decode_layout(r)).collect();
        let colors: Vec<Vec<[f64; 3]>> = sample
            .grids
            .iter()
            .zip(&sample.graph.nodes)
            .map(|(g, node)| vec![style_color(node.category, node.style); g.count()])
            .collect();
        let scene = assemble(&sample.graph, &layouts, &sample.grids, &colors).unwrap();
        (scene, cfg.categories.clone())
    }

    #[test]
    fn scene_round_trips_value_identical() {
        let (scene, vocab) = sample_scene();
        let bytes = encode_scene(&scene, &vocab).unwrap();
        let (back, vocab2) = decode_scene(&bytes).unwrap();
        assert_eq!(vocab2, vocab);
        assert_eq!(back.degenerate_shapes, scene.degenerate_shapes);
        assert_eq!(back.nodes.len(), scene.nodes.len());
        for (a, b) in scene.nodes.iter().zip(&back.nodes) {
            assert_eq!(a.category, b.category);
            assert_eq!(a.layout.raw(), b.layout.raw());
            assert_eq!(a.grid, b.grid);
            assert_eq!(a.points, b.points);
            assert_eq!(a.colors, b.colors);
        }
        assert_eq!(encode_scene(&back, &vocab2).unwrap(), bytes);
    }

    #[test]
    fn corrupt_scene_is_rejected() {
        let (scene, vocab) = sample_scene();
        let mut bytes = encode_scene(&scene, &vocab).unwrap();
        bytes[0] = b'X';
        assert!(decode_scene(&bytes).is_err());
        let good = encode_scene(&scene, &vocab).unwrap();
        assert!(decode_scene(&good[..good.len() - 3]).is_err());
    }

    #[test]
    fn file_round_trip_and_missing_path() {
        let (scene, vocab) = sample_scene();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.gfas");
        write_scene(&path, &scene, &vocab).unwrap();
        let (back, _) = read_scene(&path).unwrap();
        assert_eq!(back.nodes.len(), scene.nodes.len());
        let err = read_scene(&dir.path().join("missing.gfas")).unwrap_err();
        assert!(err.to_string().contains("missing.gfas"));
    }
}
