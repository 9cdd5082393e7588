use std::collections::VecDeque;

use super::math::{cross, dot, sub, V3};
use super::mesh::Mesh;
use crate::{Error, Result};

/// Occupancy over the canonical cube `[-0.5, 0.5]³`; cell `(x, y, z)` is
/// stored at `(z * R + y) * R + x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelGrid {
    pub res: usize,
    pub cells: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(res: usize) -> Self {
        Self {
            res,
            cells: vec![false; res * res * res],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.res + y) * self.res + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cell containing a canonical-frame point, if inside the cube.
    pub fn cell_of(&self, p: V3) -> Option<[usize; 3]> {
        let mut c = [0; 3];
        for a in 0..3 {
            let f = ((p[a] + 0.5) * self.res as f64).floor();
            if !(0.0..self.res as f64).contains(&f) {
                return None;
            }
            c[a] = f as usize;
        }
        Some(c)
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.cells.iter().map(|&c| c as u8 as f32).collect()
    }
}

/// Separating-axis overlap between a triangle and an axis-aligned box.
/// With `open` the box interior is open and touching counts as separated;
/// otherwise both are closed.
fn tri_box_overlap(tri: &[V3; 3], centre: V3, half: V3, open: bool) -> bool {
    let v = tri.map(|p| sub(p, centre));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    let separated = |axis: V3| -> bool {
        let r = half[0] * axis[0].abs() + half[1] * axis[1].abs() + half[2] * axis[2].abs();
        let p = v.map(|q| dot(q, axis));
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        if open {
            lo >= r || hi <= -r
        } else {
            lo > r || hi < -r
        }
    };
    let units = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for u in units {
        if separated(u) {
            return false;
        }
    }
    let n = cross(e[0], e[1]);
    if n != [0.0; 3] && separated(n) {
        return false;
    }
    for u in units {
        for ed in e {
            let axis = cross(u, ed);
            if axis != [0.0; 3] && separated(axis) {
                return false;
            }
        }
    }
    true
}

/// Solid voxelization: a cell is occupied when a triangle meets its open
/// interior, or when it cannot be reached from the grid boundary by
/// 6-connected moves that cross no triangle.
pub fn voxelize(mesh: &Mesh, res: usize) -> Result<VoxelGrid> {
    if res == 0 {
        return Err(Error::invalid("voxel resolution must be positive"));
    }
    let mut grid = VoxelGrid::empty(res);
    if mesh.is_empty() {
        return Ok(grid);
    }
    let h = 1.0 / res as f64;
    let coord = |i: usize| -0.5 + i as f64 * h;
    let n3 = res * res * res;
    // blocked[a][cell]: the face between `cell - e_a` and `cell` is crossed by a triangle
    let mut blocked = [vec![false; n3], vec![false; n3], vec![false; n3]];
    for t in 0..mesh.triangles.len() {
        let tri = mesh.corners(t);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let mn = tri.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let mx = tri.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            lo[a] = (((mn + 0.5) / h).floor() - 1.0).clamp(0.0, res as f64 - 1.0) as usize;
            hi[a] = (((mx + 0.5) / h).floor() + 1.0).clamp(0.0, res as f64 - 1.0) as usize;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let c = [x, y, z];
                    let centre = c.map(|i| coord(i) + h / 2.0);
                    let idx = grid.index(x, y, z);
                    if !grid.cells[idx] && tri_box_overlap(&tri, centre, [h / 2.0; 3], true) {
                        grid.cells[idx] = true;
                    }
                    for a in 0..3 {
                        if c[a] == 0 || blocked[a][idx] {
                            continue;
                        }
                        let mut fc = centre;
                        fc[a] = coord(c[a]);
                        let mut half = [h / 2.0; 3];
                        half[a] = 0.0;
                        if tri_box_overlap(&tri, fc, half, false) {
                            blocked[a][idx] = true;
                        }
                    }
                }
            }
        }
    }

    let mut outside = vec![false; n3];
    let mut queue = VecDeque::new();
    for z in 0..res {
        for y in 0..res {
            for x in 0..res {
                let on_border = [x, y, z].iter().any(|&i| i == 0 || i == res - 1);
                let idx = grid.index(x, y, z);
                if on_border && !grid.cells[idx] {
                    outside[idx] = true;
                    queue.push_back([x, y, z]);
                }
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        let idx = grid.index(c[0], c[1], c[2]);
        for a in 0..3 {
            for up in [false, true] {
                let mut n = c;
                let face_cell = if up {
                    if c[a] + 1 >= res {
                        continue;
                    }
                    n[a] += 1;
                    grid.index(n[0], n[1], n[2])
                } else {
                    if c[a] == 0 {
                        continue;
                    }
                    n[a] -= 1;
                    idx
                };
                let nidx = grid.index(n[0], n[1], n[2]);
                if outside[nidx] || grid.cells[nidx] || blocked[a][face_cell] {
                    continue;
                }
                outside[nidx] = true;
                queue.push_back(n);
            }
        }
    }
    for (cell, out) in grid.cells.iter_mut().zip(&outside) {
        if !*out {
            *cell = true;
        }
    }
    Ok(grid)
}
