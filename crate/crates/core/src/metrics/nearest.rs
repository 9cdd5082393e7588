//! Nearest-neighbour queries over flat `[x0, y0, z0, x1, ...]` point buffers.
//!
//! Both paths compute the squared distance with the same expression and
//! break ties towards the lowest target index, so they agree exactly.

use crate::autodiff::Real;

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn better<T: Real>(d: T, j: usize, best: (usize, T)) -> bool {
    d < best.1 || (d == best.1 && j < best.0)
}

/// O(n·m) scan; returns `(index, squared distance)` for every query point.
pub fn nearest_naive<T: Real>(query: &[T], target: &[T]) -> Vec<(usize, T)> {
    assert!(!target.is_empty(), "nearest neighbour against an empty set");
    query
        .chunks_exact(3)
        .map(|q| {
            let mut best = (0, sq_dist(q, &target[0..3]));
            for (j, t) in target.chunks_exact(3).enumerate().skip(1) {
                let d = sq_dist(q, t);
                if better(d, j, best) {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Uniform bucketing of the target set.
pub struct PointGrid<'a, T> {
    points: &'a [T],
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a, T: Real> PointGrid<'a, T> {
    pub fn build(points: &'a [T]) -> Self {
        let m = points.len() / 3;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points.chunks_exact(3) {
            for a in 0..3 {
                let v = p[a].as_f64();
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max).max(1e-9);
        let per_axis = ((m as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 64);
        let cell = extent / per_axis as f64;
        let mut dims = [1; 3];
        for a in 0..3 {
            dims[a] = (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1);
        }
        let ncell = dims[0] * dims[1] * dims[2];
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: vec![0; ncell + 1],
            items: vec![0; m],
        };
        let keys: Vec<usize> = points
            .chunks_exact(3)
            .map(|p| grid.flat(grid.cell_of([p[0].as_f64(), p[1].as_f64(), p[2].as_f64()])))
            .collect();
        for &k in &keys {
            grid.starts[k + 1] += 1;
        }
        for c in 0..ncell {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        for (j, &k) in keys.iter().enumerate() {
            grid.items[fill[k]] = j;
            fill[k] += 1;
        }
        grid
    }

    fn cell_of(&self, p: [f64; 3]) -> [usize; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.cell).floor();
            c[a] = if f < 0.0 {
                0
            } else {
                (f as usize).min(self.dims[a] - 1)
            };
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn nearest(&self, q: &[T]) -> (usize, T) {
        let qf = [q[0].as_f64(), q[1].as_f64(), q[2].as_f64()];
        let c = self.cell_of(qf);
        let mut best: Option<(usize, T)> = None;
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        for r in 0..=max_ring {
            let lo: [usize; 3] = std::array::from_fn(|a| c[a].saturating_sub(r));
            let hi: [usize; 3] = std::array::from_fn(|a| (c[a] + r).min(self.dims[a] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let on_shell = r == 0
                            || x.abs_diff(c[0]) == r
                            || y.abs_diff(c[1]) == r
                            || z.abs_diff(c[2]) == r;
                        if !on_shell {
                            continue;
                        }
                        let k = self.flat([x, y, z]);
                        for &j in &self.items[self.starts[k]..self.starts[k + 1]] {
                            let d = sq_dist(q, &self.points[j * 3..j * 3 + 3]);
                            if best.is_none_or(|b| better(d, j, b)) {
                                best = Some((j, d));
                            }
                        }
                    }
                }
            }
            let covers_all = (0..3).all(|a| lo[a] == 0 && hi[a] == self.dims[a] - 1);
            if covers_all {
                break;
            }
            if let Some((_, d)) = best {
                // distance from q to the outside of the searched block; cells
                // clamped at the grid border extend to infinity
                let mut bound = f64::INFINITY;
                for a in 0..3 {
                    if c[a] >= r {
                        let edge = self.origin[a] + (c[a] - r) as f64 * self.cell;
                        bound = bound.min(qf[a] - edge);
                    }
                    if c[a] + r < self.dims[a] - 1 {
                        let edge = self.origin[a] + (c[a] + r + 1) as f64 * self.cell;
                        bound = bound.min(edge - qf[a]);
                    }
                }
                let d = d.as_f64();
                if bound > 0.0 && d * (1.0 + 1e-6) + 1e-300 < bound * bound {
                    break;
                }
            }
        }
        best.expect("grid holds at least one point")
    }
}

/// Grid-accelerated search for large target sets; same results as [`nearest_naive`].
pub fn nearest_grid<T: Real>(query: &[T], target: &[T]) -> Vec<(usize, T)> {
    assert!(!target.is_empty(), "nearest neighbour against an empty set");
    let grid = PointGrid::build(target);
    query.chunks_exact(3).map(|q| grid.nearest(q)).collect()
}

/// Picks the grid when the pair count makes it worthwhile.
pub fn nearest_all<T: Real>(query: &[T], target: &[T]) -> Vec<(usize, T)> {
    let (n, m) = (query.len() / 3, target.len() / 3);
    if m >= 64 && n * m >= 1 << 16 {
        nearest_grid(query, target)
    } else {
        nearest_naive(query, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn grid_agrees_with_scan(
            q in prop::collection::vec(-1.0f64..1.0, 3..300),
            t in prop::collection::vec(-0.5f64..0.5, 3..600),
        ) {
            let q = &q[..q.len() / 3 * 3];
            let t = &t[..t.len() / 3 * 3];
            prop_assert_eq!(nearest_grid(q, t), nearest_naive(q, t));
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        let t = [1.0, 0.0, 0.0, -1.0, 0.0, 0.0];
        assert_eq!(nearest_naive(&[0.0, 0.0, 0.0], &t), vec![(0, 1.0)]);
        assert_eq!(nearest_grid(&[0.0, 0.0, 0.0], &t), vec![(0, 1.0)]);
    }
}
