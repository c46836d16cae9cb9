//! 8x8x8 occupancy grids stored as bitsets.
//!
//! Flat voxel index is (x * 8 + y) * 8 + z. Object-frame cell centers tile
//! the cube [-1, 1]^3.

pub const GRID: usize = 8;
const CELLS: usize = GRID * GRID * GRID;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    bits: [u64; CELLS / 64],
}

impl Default for VoxelGrid {
    fn default() -> Self {
        VoxelGrid::empty()
    }
}

impl VoxelGrid {
    pub fn empty() -> Self {
        VoxelGrid { bits: [0; 8] }
    }

    pub fn full() -> Self {
        VoxelGrid { bits: [u64::MAX; 8] }
    }

    #[inline]
    pub fn flat(x: usize, y: usize, z: usize) -> usize {
        (x * GRID + y) * GRID + z
    }

    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn set(&mut self, idx: usize, on: bool) {
        if on {
            self.bits[idx / 64] |= 1 << (idx % 64);
        } else {
            self.bits[idx / 64] &= !(1 << (idx % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Active voxel indices, ascending.
    pub fn active(&self) -> Vec<u16> {
        (0..CELLS as u16).filter(|&i| self.get(i as usize)).collect()
    }

    /// Object-frame centers of active voxels, ascending voxel index.
    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.active().iter().map(|&i| Self::center(i as usize)).collect()
    }

    pub fn center(idx: usize) -> [f64; 3] {
        let x = idx / (GRID * GRID);
        let y = (idx / GRID) % GRID;
        let z = idx % GRID;
        let c = |k: usize| (k as f64 + 0.5) / GRID as f64 * 2.0 - 1.0;
        [c(x), c(y), c(z)]
    }

    /// Bit-packed occupancy, words little-endian.
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        for (i, w) in self.bits.iter().enumerate() {
            out[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8; 64]) -> Self {
        let mut bits = [0u64; 8];
        for (i, w) in bits.iter_mut().enumerate() {
            *w = u64::from_le_bytes(b[i * 8..(i + 1) * 8].try_into().expect("8 bytes"));
        }
        VoxelGrid { bits }
    }

    /// Occupancy as 512 f64 values in {0, 1}.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..CELLS).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let mut g = VoxelGrid::empty();
        for (i, &v) in dense.iter().take(CELLS).enumerate() {
            g.set(i, v > 0.5);
        }
        g
    }

    /// Intersection over union; two empty grids count as identical.
    pub fn iou(&self, other: &VoxelGrid) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (a & b).count_ones() as usize;
            union += (a | b).count_ones() as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Voxels on the occupancy boundary: active cells with an inactive
    /// 6-neighbor (or a face on the grid edge), plus inactive cells with an
    /// active 6-neighbor.
    pub fn boundary(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for x in 0..GRID {
            for y in 0..GRID {
                for z in 0..GRID {
                    let idx = Self::flat(x, y, z);
                    let on = self.get(idx);
                    let mut frontier = false;
                    let mut near_active = false;
                    let neigh = [
                        (x.wrapping_sub(1), y, z),
                        (x + 1, y, z),
                        (x, y.wrapping_sub(1), z),
                        (x, y + 1, z),
                        (x, y, z.wrapping_sub(1)),
                        (x, y, z + 1),
                    ];
                    for (nx, ny, nz) in neigh {
                        if nx >= GRID || ny >= GRID || nz >= GRID {
                            frontier = true;
                            continue;
                        }
                        let nb = self.get(Self::flat(nx, ny, nz));
                        frontier |= !nb;
                        near_active |= nb;
                    }
                    if (on && frontier) || (!on && near_active) {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_and_roundtrip() {
        let mut g = VoxelGrid::empty();
        g.set(VoxelGrid::flat(0, 0, 0), true);
        g.set(VoxelGrid::flat(7, 7, 7), true);
        assert_eq!(g.count(), 2);
        assert_eq!(VoxelGrid::from_dense(&g.to_dense()), g);
    }

    #[test]
    fn centers_lie_strictly_inside_unit_cube() {
        let g = VoxelGrid::full();
        for p in g.centers() {
            for c in p {
                assert!(c.abs() <= 1.0 - 1.0 / GRID as f64 + 1e-12);
            }
        }
        assert_eq!(g.centers()[0], [-0.875, -0.875, -0.875]);
    }

    #[test]
    fn iou_cases() {
        let e = VoxelGrid::empty();
        let f = VoxelGrid::full();
        assert_eq!(e.iou(&e), 1.0);
        assert_eq!(f.iou(&f), 1.0);
        assert_eq!(f.iou(&e), 0.0);
    }

    #[test]
    fn boundary_of_full_grid_is_outer_shell() {
        let f = VoxelGrid::full();
        let b = f.boundary();
        // 8^3 minus the interior 6^3
        assert_eq!(b.len(), 512 - 216);
    }
}
