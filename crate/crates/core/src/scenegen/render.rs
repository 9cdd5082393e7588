use super::camera::{Lighting, Pose, StereoCamera, View};
use super::image::{quantize, Map, RgbImage};
use super::math::{cross, dot, normalize, sub, V3};
use super::mesh::Mesh;
use crate::rng::splitmix64;
use crate::{Error, Result};

/// Closest admissible eye-space depth of any vertex.
pub const MIN_DEPTH: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct StereoRender {
    pub left: RgbImage,
    pub right: RgbImage,
    /// Eye-space z in metres, `+∞` on background.
    pub depth_l: Map<f32>,
    pub depth_r: Map<f32>,
}

pub fn render_stereo(
    mesh: &Mesh,
    pose: &Pose,
    camera: &StereoCamera,
    lighting: &Lighting,
) -> Result<StereoRender> {
    let (left, depth_l) = render_view(mesh, pose, camera, lighting, View::Left)?;
    let (right, depth_r) = render_view(mesh, pose, camera, lighting, View::Right)?;
    Ok(StereoRender {
        left,
        right,
        depth_l,
        depth_r,
    })
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = splitmix64(
        seed ^ (x as u64).wrapping_mul(0x9E37_79B1)
            ^ (y as u64).wrapping_mul(0x85EB_CA77_C2B2_AE63)
            ^ (z as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, p: V3) -> f64 {
    let f = p.map(f64::floor);
    let t = [p[0] - f[0], p[1] - f[1], p[2] - f[2]].map(|t| t * t * (3.0 - 2.0 * t));
    let b = f.map(|v| v as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for a in 0..3 {
            w *= if o[a] == 1 { t[a] } else { 1.0 - t[a] };
        }
        acc += w * lattice(seed, b[0] + o[0] as i64, b[1] + o[1] as i64, b[2] + o[2] as i64);
    }
    acc
}

/// Solid texture factor around 1 for an object-space point.
pub fn texture_factor(lighting: &Lighting, p: V3) -> f64 {
    if lighting.texture_amp == 0.0 {
        return 1.0;
    }
    let s = lighting.texture_seed;
    let n = 0.6 * value_noise(s, p.map(|v| v * 11.0)) + 0.4 * value_noise(s ^ 0xABCD, p.map(|v| v * 27.0));
    1.0 + lighting.texture_amp * (2.0 * n - 1.0)
}

pub fn render_view(
    mesh: &Mesh,
    pose: &Pose,
    camera: &StereoCamera,
    lighting: &Lighting,
    view: View,
) -> Result<(RgbImage, Map<f32>)> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let f = camera.focal_px();
    let (cx, cy) = camera.principal();
    let eye = camera.eye_offset(view);
    let rot = pose.rotation();
    let rig: Vec<V3> = mesh.vertices.iter().map(|&p| pose.to_rig(&rot, p)).collect();
    if let Some(z) = rig.iter().map(|v| v[2]).find(|&z| !(z > MIN_DEPTH)) {
        return Err(Error::invalid(format!(
            "object not in front of the cameras (vertex depth {z} m)"
        )));
    }
    let cam: Vec<V3> = rig.iter().map(|v| [v[0] - eye, v[1], v[2]]).collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner = vec![usize::MAX; w * h];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|i| cam[i]);
        let s = p.map(|v| [f * v[0] / v[2] + cx, f * v[1] / v[2] + cy]);
        let edge = |a: [f64; 2], b: [f64; 2], q: [f64; 2]| (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let plane = dot(n, p[0]);
        let zmin = p.iter().map(|v| v[2]).fold(f64::INFINITY, f64::min);
        let zmax = p.iter().map(|v| v[2]).fold(0.0, f64::max);
        let umin = s.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let umax = s.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let vmin = s.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let vmax = s.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (umin - 0.5).ceil().max(0.0) as usize;
        let y0 = (vmin - 0.5).ceil().max(0.0) as usize;
        let x1 = (umax - 0.5).floor().min(w as f64 - 1.0);
        let y1 = (vmax - 0.5).floor().min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let q = [px as f64 + 0.5, py as f64 + 0.5];
                let e = [edge(s[1], s[2], q), edge(s[2], s[0], q), edge(s[0], s[1], q)];
                let inside = if area > 0.0 {
                    e.iter().all(|&v| v >= 0.0)
                } else {
                    e.iter().all(|&v| v <= 0.0)
                };
                if !inside {
                    continue;
                }
                let dir = [(q[0] - cx) / f, (q[1] - cy) / f, 1.0];
                let denom = dot(n, dir);
                if denom == 0.0 {
                    continue;
                }
                let z = (plane / denom).clamp(zmin, zmax);
                let i = py * w + px;
                if z < zbuf[i] {
                    zbuf[i] = z;
                    owner[i] = t;
                }
            }
        }
    }

    let light = normalize(lighting.direction);
    let shade: Vec<f64> = mesh
        .triangles
        .iter()
        .map(|tri| {
            let p = tri.map(|i| rig[i]);
            let mut n = normalize(cross(sub(p[1], p[0]), sub(p[2], p[0])));
            let centroid = [
                (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                (p[0][1] + p[1][1] + p[2][1]) / 3.0,
                (p[0][2] + p[1][2] + p[2][2]) / 3.0,
            ];
            if dot(n, centroid) > 0.0 {
                n = n.map(|v| -v);
            }
            lighting.ambient + lighting.intensity * (-dot(n, light)).max(0.0)
        })
        .collect();

    let bg = lighting.background.map(quantize);
    let mut img = RgbImage::new(w, h);
    let mut depth = Map::filled(w, h, f32::INFINITY);
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let t = owner[i];
            if t == usize::MAX {
                img.put(px, py, bg);
                continue;
            }
            let z = zbuf[i];
            depth.data[i] = z as f32;
            let q = [(px as f64 + 0.5 - cx) / f * z + eye, (py as f64 + 0.5 - cy) / f * z, z];
            let tex = texture_factor(lighting, pose.to_object(&rot, q));
            let a = mesh.albedo[t];
            img.put(px, py, a.map(|c| quantize(c * tex * shade[t])));
        }
    }
    Ok((img, depth))
}

/// Disparity of a single finite depth sample; shared by every producer of
/// disparity so depth and disparity maps agree bit for bit.
#[inline]
pub fn disparity_value(depth: f32, camera: &StereoCamera) -> f32 {
    (camera.focal_px() * camera.baseline_m() / depth as f64) as f32
}

/// `focal_px · baseline / depth`, with `+∞` depth (background) mapped to 0.
pub fn depth_to_disparity(depth: &Map<f32>, camera: &StereoCamera) -> Result<Map<f32>> {
    let mut out = Map::filled(depth.width, depth.height, 0.0f32);
    for (o, &z) in out.data.iter_mut().zip(&depth.data) {
        if z == f32::INFINITY {
            continue;
        }
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::invalid(format!("depth {z} is not a positive distance")));
        }
        *o = disparity_value(z, camera);
    }
    Ok(out)
}

/// Pixels with `+∞` depth.
pub fn background_mask(depth: &Map<f32>) -> Map<bool> {
    depth.map(|z| z == f32::INFINITY)
}

/// Left-right consistency masks with a 1 px tolerance.
///
/// A left pixel is occluded when its match `x - round(d)` leaves the image
/// or the right map there disagrees by more than a pixel; symmetrically for
/// the right view with `x + round(d)`.
pub fn compute_occlusion(disp_l: &Map<f32>, disp_r: &Map<f32>) -> Result<(Map<bool>, Map<bool>)> {
    if !disp_l.same_dims(disp_r) {
        return Err(Error::ShapeMismatch {
            op: "compute_occlusion",
            lhs: vec![disp_l.height, disp_l.width],
            rhs: vec![disp_r.height, disp_r.width],
        });
    }
    let (w, h) = (disp_l.width, disp_l.height);
    let mut occ_l = Map::filled(w, h, false);
    let mut occ_r = Map::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let d = disp_l.get(x, y);
            let xr = x as i64 - d.round() as i64;
            occ_l.set(
                x,
                y,
                xr < 0 || xr >= w as i64 || (d - disp_r.get(xr as usize, y)).abs() > 1.0,
            );
            let d = disp_r.get(x, y);
            let xl = x as i64 + d.round() as i64;
            occ_r.set(
                x,
                y,
                xl < 0 || xl >= w as i64 || (d - disp_l.get(xl as usize, y)).abs() > 1.0,
            );
        }
    }
    Ok((occ_l, occ_r))
}
