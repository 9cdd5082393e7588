use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::math::{add, cross, norm, scale, sub, V3};
use crate::rng::rng_from;
use crate::{Error, Result};

/// Triangle soup in the object frame (metres, y up).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<V3>,
    pub triangles: Vec<[usize; 3]>,
    /// Linear RGB albedo per triangle.
    pub albedo: Vec<[f64; 3]>,
}

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [V3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.albedo.len() != self.triangles.len() {
            return Err(Error::invalid("albedo count differs from triangle count"));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} has an out-of-range index")));
            }
            if self.triangle_area(t) <= MIN_TRIANGLE_AREA {
                return Err(Error::invalid(format!("triangle {t} is degenerate")));
            }
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite vertex"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Option<(V3, V3)> {
        let mut it = self.vertices.iter();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    pub fn append(&mut self, other: Mesh) {
        let base = self.vertices.len();
        self.vertices.extend(other.vertices);
        self.triangles
            .extend(other.triangles.into_iter().map(|t| t.map(|i| i + base)));
        self.albedo.extend(other.albedo);
    }

    pub fn translated(mut self, d: V3) -> Self {
        for v in &mut self.vertices {
            *v = add(*v, d);
        }
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.vertices {
            *v = scale(*v, s);
        }
        self
    }

    pub fn with_albedo(mut self, color: [f64; 3]) -> Self {
        self.albedo = vec![color; self.triangles.len()];
        self
    }

    /// Centres the bounding box at the origin and scales its largest side to `extent`.
    pub fn normalized(self, extent: f64) -> Self {
        let Some((lo, hi)) = self.bounds() else {
            return self;
        };
        let centre = scale(add(lo, hi), 0.5);
        let side = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        self.translated(scale(centre, -1.0)).scaled(extent / side)
    }
}

const GRAY: [f64; 3] = [0.7, 0.7, 0.7];

/// Axis-aligned box centred at the origin.
pub fn box_mesh(size: V3) -> Result<Mesh> {
    if size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("box size {size:?} must be positive")));
    }
    let h = scale(size, 0.5);
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    let quads = [
        [0, 2, 6, 4], // -x
        [1, 5, 7, 3], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 1, 3, 2], // -z
        [4, 6, 7, 5], // +z
    ];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Ok(Mesh {
        vertices,
        triangles,
        albedo: Vec::new(),
    }
    .with_albedo(GRAY))
}

/// Subdivided icosahedron with every vertex at distance `radius` from the origin.
pub fn sphere_mesh(radius: f64, subdiv: u32) -> Result<Mesh> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("sphere radius {radius} must be positive")));
    }
    if subdiv > 7 {
        return Err(Error::invalid("sphere subdivision above 7"));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<V3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let mut m = |i: usize, j: usize| {
                let key = (i.min(j), i.max(j));
                *mid.entry(key).or_insert_with(|| {
                    verts.push(scale(add(verts[i], verts[j]), 0.5));
                    verts.len() - 1
                })
            };
            let (ab, bc, ca) = (m(a, b), m(b, c), m(c, a));
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let vertices = verts.into_iter().map(|v| scale(v, radius / norm(v))).collect();
    Ok(Mesh {
        vertices,
        triangles: tris,
        albedo: Vec::new(),
    }
    .with_albedo(GRAY))
}

/// Closed cylinder along the y axis, centred at the origin.
pub fn cylinder_mesh(radius: f64, height: f64, segments: usize) -> Result<Mesh> {
    if !(radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite()) || segments < 3 {
        return Err(Error::invalid(format!(
            "cylinder radius {radius}, height {height}, segments {segments}"
        )));
    }
    let hy = height / 2.0;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for k in 0..segments {
        let a = std::f64::consts::TAU * k as f64 / segments as f64;
        let (s, c) = a.sin_cos();
        vertices.push([radius * c, -hy, radius * s]);
        vertices.push([radius * c, hy, radius * s]);
    }
    let bottom = vertices.len();
    vertices.push([0.0, -hy, 0.0]);
    vertices.push([0.0, hy, 0.0]);
    let top = bottom + 1;
    let mut triangles = Vec::with_capacity(4 * segments);
    for k in 0..segments {
        let j = (k + 1) % segments;
        let (b0, t0, b1, t1) = (2 * k, 2 * k + 1, 2 * j, 2 * j + 1);
        triangles.push([b0, b1, t1]);
        triangles.push([b0, t1, t0]);
        triangles.push([bottom, b1, b0]);
        triangles.push([top, t0, t1]);
    }
    Ok(Mesh {
        vertices,
        triangles,
        albedo: Vec::new(),
    }
    .with_albedo(GRAY))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Box,
    Sphere,
    Cylinder,
    Table,
    Chair,
    Lamp,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Box,
        ShapeKind::Sphere,
        ShapeKind::Cylinder,
        ShapeKind::Table,
        ShapeKind::Chair,
        ShapeKind::Lamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Table => "table",
            ShapeKind::Chair => "chair",
            ShapeKind::Lamp => "lamp",
        }
    }

    pub fn is_composite(self) -> bool {
        matches!(self, ShapeKind::Table | ShapeKind::Chair | ShapeKind::Lamp)
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape kind `{s}`")))
    }
}

/// Largest side of every generated object's bounding box.
pub const OBJECT_EXTENT: f64 = 0.8;

fn color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.gen_range(0.35..0.95),
        rng.gen_range(0.35..0.95),
        rng.gen_range(0.35..0.95),
    ]
}

fn part(mesh: Result<Mesh>, at: V3, albedo: [f64; 3]) -> Result<Mesh> {
    Ok(mesh?.translated(at).with_albedo(albedo))
}

/// Random instance of `kind`, centred and scaled to [`OBJECT_EXTENT`].
///
/// Parameter ranges (before normalisation, in units of the final cube):
/// boxes 0.3–1.0 per side; cylinders radius 0.2–0.5 and height 0.4–1.0;
/// tables, chairs and lamps are assembled from four to eight boxes and
/// cylinders whose legs, posts and poles are 0.04–0.08 thick.
pub fn make_primitive(kind: ShapeKind, seed: u64) -> Result<Mesh> {
    let mut rng = rng_from(seed);
    let rng = &mut rng;
    let mesh = match kind {
        ShapeKind::Box => {
            let s = [
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.3..1.0),
            ];
            box_mesh(s)?.with_albedo(color(rng))
        }
        ShapeKind::Sphere => sphere_mesh(0.5, 3)?.with_albedo(color(rng)),
        ShapeKind::Cylinder => {
            let r = rng.gen_range(0.2..0.5);
            let h = rng.gen_range(0.4..1.0);
            cylinder_mesh(r, h, 24)?.with_albedo(color(rng))
        }
        ShapeKind::Table => table(rng)?,
        ShapeKind::Chair => chair(rng)?,
        ShapeKind::Lamp => lamp(rng)?,
    };
    let mesh = mesh.normalized(OBJECT_EXTENT);
    mesh.validate()?;
    Ok(mesh)
}

fn table<R: Rng>(rng: &mut R) -> Result<Mesh> {
    let w = rng.gen_range(0.8..1.0);
    let d = rng.gen_range(0.45..0.9);
    let h = rng.gen_range(0.45..0.8);
    let top_t = rng.gen_range(0.04..0.08);
    let leg = rng.gen_range(0.04..0.08);
    let round_legs = rng.gen_bool(0.5);
    let (top_c, leg_c) = (color(rng), color(rng));
    let mut m = part(box_mesh([w, top_t, d]), [0.0, h - top_t / 2.0, 0.0], top_c)?;
    let leg_h = h - top_t;
    let (ix, iz) = (w / 2.0 - leg, d / 2.0 - leg);
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let shape = if round_legs {
            cylinder_mesh(leg / 2.0, leg_h, 10)
        } else {
            box_mesh([leg, leg_h, leg])
        };
        m.append(part(shape, [sx * ix, leg_h / 2.0, sz * iz], leg_c)?);
    }
    if rng.gen_bool(0.5) {
        // stretcher bar between the legs
        let shelf = box_mesh([2.0 * ix, leg * 0.6, leg * 0.6]);
        m.append(part(shelf, [0.0, leg_h * 0.3, 0.0], leg_c)?);
    }
    Ok(m)
}

fn chair<R: Rng>(rng: &mut R) -> Result<Mesh> {
    let w = rng.gen_range(0.45..0.6);
    let d = rng.gen_range(0.45..0.6);
    let seat_h = rng.gen_range(0.4..0.5);
    let seat_t = rng.gen_range(0.04..0.07);
    let back_h = rng.gen_range(0.35..0.55);
    let leg = rng.gen_range(0.04..0.06);
    let (seat_c, frame_c) = (color(rng), color(rng));
    let mut m = part(box_mesh([w, seat_t, d]), [0.0, seat_h, 0.0], seat_c)?;
    let leg_h = seat_h - seat_t / 2.0;
    let (ix, iz) = (w / 2.0 - leg / 2.0, d / 2.0 - leg / 2.0);
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        m.append(part(
            box_mesh([leg, leg_h, leg]),
            [sx * ix, leg_h / 2.0, sz * iz],
            frame_c,
        )?);
    }
    let back_y = seat_h + seat_t / 2.0 + back_h / 2.0;
    let back_z = -d / 2.0 + seat_t / 2.0;
    if rng.gen_bool(0.5) {
        m.append(part(box_mesh([w, back_h, seat_t]), [0.0, back_y, back_z], seat_c)?);
    } else {
        // two posts and a top rail
        for sx in [-1.0, 1.0] {
            m.append(part(box_mesh([leg, back_h, leg]), [sx * ix, back_y, back_z], frame_c)?);
        }
        let rail = back_h * 0.3;
        m.append(part(
            box_mesh([w, rail, seat_t]),
            [0.0, back_y + back_h / 2.0 - rail / 2.0, back_z],
            seat_c,
        )?);
    }
    Ok(m)
}

fn lamp<R: Rng>(rng: &mut R) -> Result<Mesh> {
    let base_r = rng.gen_range(0.15..0.25);
    let base_h = rng.gen_range(0.03..0.06);
    let pole_h = rng.gen_range(0.6..0.9);
    let pole_r = rng.gen_range(0.02..0.04);
    let shade_r = rng.gen_range(0.15..0.3);
    let shade_h = rng.gen_range(0.15..0.3);
    let (base_c, shade_c) = (color(rng), color(rng));
    let mut m = part(cylinder_mesh(base_r, base_h, 20), [0.0, base_h / 2.0, 0.0], base_c)?;
    m.append(part(
        cylinder_mesh(pole_r, pole_h, 10),
        [0.0, base_h + pole_h / 2.0, 0.0],
        base_c,
    )?);
    let top = base_h + pole_h;
    let arm = rng.gen_range(0.1..0.25);
    m.append(part(
        box_mesh([arm, pole_r * 1.5, pole_r * 1.5]),
        [arm / 2.0, top, 0.0],
        base_c,
    )?);
    m.append(part(
        cylinder_mesh(shade_r, shade_h, 20),
        [arm, top - shade_h * 0.3, 0.0],
        shade_c,
    )?);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_topology() {
        let m = box_mesh([1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.triangles.len(), 12);
        assert_eq!(m.vertices.len(), 8);
        assert!((0..12).all(|t| (m.triangle_area(t) - 0.5).abs() < 1e-15));
    }

    #[test]
    fn sphere_vertices_on_radius() {
        let m = sphere_mesh(0.5, 2).unwrap();
        assert_eq!(m.triangles.len(), 320);
        assert!(m.vertices.iter().all(|&v| (norm(v) - 0.5).abs() < 1e-9));
        m.validate().unwrap();
    }

    #[test]
    fn composites_fit_unit_cube() {
        for kind in ShapeKind::ALL {
            for seed in [0, 7, 99] {
                let m = make_primitive(kind, seed).unwrap();
                let (lo, hi) = m.bounds().unwrap();
                for a in 0..3 {
                    assert!(lo[a] >= -0.5 && hi[a] <= 0.5, "{kind} {seed}");
                }
            }
        }
        let t = make_primitive(ShapeKind::Table, 7).unwrap();
        let (lo, hi) = t.bounds().unwrap();
        assert!(lo.iter().chain(&hi).all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn degenerate_params_rejected() {
        assert!(box_mesh([1.0, 0.0, 1.0]).is_err());
        assert!(sphere_mesh(0.0, 1).is_err());
        assert!(cylinder_mesh(0.2, 0.5, 2).is_err());
    }
}
