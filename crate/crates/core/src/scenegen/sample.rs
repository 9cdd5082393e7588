use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::math::{add, scale, sub, V3};
use super::mesh::Mesh;
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<V3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn flat<T: crate::autodiff::Real>(&self) -> Vec<T> {
        self.points.iter().flatten().map(|&v| T::lit(v)).collect()
    }
}

/// Area-weighted uniform surface samples; also returns the source triangle
/// of every point.
pub fn sample_surface_with_source(mesh: &Mesh, n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot sample the surface of an empty mesh"));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid(format!("triangle areas: {e}")))?;
    let mut rng = rng_from(seed);
    let mut points = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    for _ in 0..n {
        let t = pick.sample(&mut rng);
        let [a, b, c] = mesh.corners(t);
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(add(a, add(scale(sub(b, a), u), scale(sub(c, a), v))));
        source.push(t);
    }
    Ok((PointCloud { points }, source))
}

pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(sample_surface_with_source(mesh, n, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::math::{cross, dot, normalize};
    use crate::scenegen::mesh::{make_primitive, ShapeKind};

    #[test]
    fn points_lie_on_source_triangles() {
        let m = make_primitive(ShapeKind::Chair, 3).unwrap();
        let (pc, src) = sample_surface_with_source(&m, 2000, 11).unwrap();
        for (p, &t) in pc.points.iter().zip(&src) {
            let [a, b, c] = m.corners(t);
            let n = normalize(cross(sub(b, a), sub(c, a)));
            assert!(dot(n, sub(*p, a)).abs() < 1e-9);
        }
    }

    #[test]
    fn area_proportional_counts() {
        let m = Mesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [0.3, 0.0, 0.0],
                [0.0, 0.2, 0.0],
                [0.0, 0.0, 0.1],
                [0.1, 0.0, 0.1],
                [0.0, 0.2, 0.1],
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            albedo: vec![[0.5; 3]; 2],
        };
        let (_, src) = sample_surface_with_source(&m, 40_000, 5).unwrap();
        let first = src.iter().filter(|&&t| t == 0).count() as f64;
        let sigma = (40_000.0f64 * 0.75 * 0.25).sqrt();
        assert!((first - 30_000.0).abs() < 3.0 * sigma, "{first}");
    }

    #[test]
    fn deterministic_and_errors() {
        let m = make_primitive(ShapeKind::Lamp, 1).unwrap();
        assert_eq!(sample_surface(&m, 100, 4).unwrap(), sample_surface(&m, 100, 4).unwrap());
        assert!(sample_surface(&Mesh::default(), 10, 0).is_err());
    }
}
