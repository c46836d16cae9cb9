//! Branch-specific decoding and scene assembly.
//!
//! The layout branch works on raw 8-vectors [tx, ty, tz, sx, sy, sz, cos a,
//! sin a]: translation, per-axis half-extents, yaw about the vertical axis.
//! Decoding is total: any raw vector maps to a usable box.

mod shape;
mod texture;

pub use shape::{pretrain_shape_codec, ShapeCodec, ShapeCodecConfig};
pub use texture::{pretrain_texture_codec, TextureCodec, TextureCodecConfig};

use crate::graph::{SceneGraph, VoxelGrid};
use crate::{Error, Result};

pub const LAYOUT_DIM: usize = 8;
pub const SHAPE_LATENT_DIM: usize = 16;
pub const TEXTURE_FEAT_DIM: usize = 8;

/// Decoded oriented box. `s` holds half-extents, yaw is stored as its
/// cos/sin pair which is kept exactly unit-length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutVector {
    pub t: [f64; 3],
    pub s: [f64; 3],
    pub cos: f64,
    pub sin: f64,
}

pub const SIZE_MIN: f64 = 0.02;
pub const SIZE_MAX: f64 = 1.0;

/// Total decode of a raw 8-vector: translation clamped to the room,
/// half-extents clamped positive, rotation renormalized. A zero rotation
/// pair falls back to yaw 0.
pub fn decode_layout(raw: &[f64; 8]) -> LayoutVector {
    let t = [clamp(raw[0], -1.0, 1.0), clamp(raw[1], -1.0, 1.0), clamp(raw[2], -1.0, 1.0)];
    let s = [
        clamp(raw[3], SIZE_MIN, SIZE_MAX),
        clamp(raw[4], SIZE_MIN, SIZE_MAX),
        clamp(raw[5], SIZE_MIN, SIZE_MAX),
    ];
    let (mut c, mut sn) = (raw[6], raw[7]);
    let n2 = c * c + sn * sn;
    if n2 < 1e-24 {
        c = 1.0;
        sn = 0.0;
    } else if (n2 - 1.0).abs() > 1e-12 {
        // Skip the divide when already unit so decode is bitwise idempotent.
        let n = n2.sqrt();
        c /= n;
        sn /= n;
    }
    LayoutVector { t, s, cos: c, sin: sn }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

impl LayoutVector {
    pub fn raw(&self) -> [f64; 8] {
        [self.t[0], self.t[1], self.t[2], self.s[0], self.s[1], self.s[2], self.cos, self.sin]
    }

    pub fn yaw(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    /// Box volume (full extents are twice the half-extents).
    pub fn volume(&self) -> f64 {
        8.0 * self.s[0] * self.s[1] * self.s[2]
    }

    /// Half-extents of the axis-aligned footprint of the rotated box in the
    /// ground plane.
    pub fn footprint(&self) -> [f64; 2] {
        let ex = (self.s[0] * self.cos).abs() + (self.s[2] * self.sin).abs();
        let ez = (self.s[0] * self.sin).abs() + (self.s[2] * self.cos).abs();
        [ex, ez]
    }

    /// Object-frame point to room frame. Yaw a rotates +x toward -z.
    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let x = p[0] * self.s[0];
        let y = p[1] * self.s[1];
        let z = p[2] * self.s[2];
        [
            self.t[0] + x * self.cos + z * self.sin,
            self.t[1] + y,
            self.t[2] - x * self.sin + z * self.cos,
        ]
    }
}

/// One placed object: box, occupancy, and per-voxel color.
#[derive(Debug, Clone)]
pub struct AssembledNode {
    pub category: usize,
    pub layout: LayoutVector,
    pub grid: VoxelGrid,
    /// Room-frame voxel centers, ascending voxel index.
    pub points: Vec<[f64; 3]>,
    /// One RGB triple per active voxel, each channel in [0, 1].
    pub colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct AssembledScene {
    pub nodes: Vec<AssembledNode>,
    /// Count of all-empty decoded grids replaced by the solid cube.
    pub degenerate_shapes: usize,
}

/// Place decoded per-node grids and colors into the room. An all-empty grid
/// is replaced by the solid cube and counted instead of failing the scene.
pub fn assemble(
    graph: &SceneGraph,
    layouts: &[LayoutVector],
    grids: &[VoxelGrid],
    colors: &[Vec<[f64; 3]>],
) -> Result<AssembledScene> {
    let n = graph.nodes.len();
    if layouts.len() != n || grids.len() != n || colors.len() != n {
        return Err(Error::Contract(format!(
            "assemble: {n} nodes vs {} layouts, {} grids, {} color sets",
            layouts.len(),
            grids.len(),
            colors.len()
        )));
    }
    let mut nodes = Vec::with_capacity(n);
    let mut degenerate = 0;
    for i in 0..n {
        let (grid, cols) = if grids[i].count() == 0 {
            degenerate += 1;
            let full = VoxelGrid::full();
            let c = vec![[0.5, 0.5, 0.5]; full.count()];
            (full, c)
        } else {
            if colors[i].len() != grids[i].count() {
                return Err(Error::Contract(format!(
                    "assemble: node {i} has {} active voxels but {} colors",
                    grids[i].count(),
                    colors[i].len()
                )));
            }
            (grids[i].clone(), colors[i].clone())
        };
        let points = grid
            .centers()
            .into_iter()
            .map(|p| layouts[i].transform(p))
            .collect();
        nodes.push(AssembledNode {
            category: graph.nodes[i].category,
            layout: layouts[i],
            grid,
            points,
            colors: cols,
        });
    }
    Ok(AssembledScene { nodes, degenerate_shapes: degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_clamps_and_renormalizes() {
        let raw = [2.0, -3.0, 0.5, -1.0, 0.5, 2.0, 3.0, 4.0];
        let v = decode_layout(&raw);
        assert_eq!(v.t, [1.0, -1.0, 0.5]);
        assert_eq!(v.s, [SIZE_MIN, 0.5, SIZE_MAX]);
        assert!((v.cos - 0.6).abs() < 1e-15 && (v.sin - 0.8).abs() < 1e-15);
        assert!((v.cos * v.cos + v.sin * v.sin - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decode_is_idempotent_bitwise() {
        let raw = [0.3, 9.0, -0.2, 0.1, 0.2, 0.3, 1.0, 1.0];
        let once = decode_layout(&raw);
        let twice = decode_layout(&once.raw());
        assert_eq!(once.raw(), twice.raw());
    }

    #[test]
    fn zero_rotation_defaults_to_identity() {
        let v = decode_layout(&[0.0; 8]);
        assert_eq!((v.cos, v.sin), (1.0, 0.0));
        assert_eq!(v.yaw(), 0.0);
    }

    #[test]
    fn quarter_turn_sends_x_to_negative_z() {
        let v = LayoutVector { t: [0.0; 3], s: [1.0; 3], cos: 0.0, sin: 1.0 };
        let p = v.transform([1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-15 && (p[2] + 1.0).abs() < 1e-15);
    }
}
