use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use super::camera::{Lighting, Pose, StereoCamera};
use super::formats::*;
use super::image::{Map, RgbImage};
use super::math::{normalize, Mat3};
use super::mesh::{make_primitive, Mesh, ShapeKind};
use super::render::{compute_occlusion, depth_to_disparity, render_stereo};
use super::sample::{sample_surface, PointCloud};
use super::voxel::{voxelize, VoxelGrid};
use crate::rng::{mix_seed, rng_from};
use crate::{Error, Result};

pub const AZIMUTH_RANGE: (f64, f64) = (0.0, 360.0);
pub const ELEVATION_RANGE: (f64, f64) = (-20.0, 30.0);
pub const DISTANCE_RANGE: (f64, f64) = (2.0, 2.5);

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub camera: StereoCamera,
    pub voxel_res: usize,
    pub n_gt: usize,
    pub jitter: bool,
    pub texture_amp: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            camera: StereoCamera::paper(137, 137),
            voxel_res: 32,
            n_gt: 16_384,
            jitter: false,
            texture_amp: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub id: String,
    pub kind: ShapeKind,
    pub seed: u64,
    pub camera: StereoCamera,
    pub pose: Pose,
    pub left: RgbImage,
    pub right: RgbImage,
    pub depth_l: Map<f32>,
    pub depth_r: Map<f32>,
    pub disp_l: Map<f32>,
    pub disp_r: Map<f32>,
    pub occl_l: Map<bool>,
    pub occl_r: Map<bool>,
    pub voxels: VoxelGrid,
    pub points: PointCloud,
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:06}")
}

fn jittered(lighting: &mut Lighting, mesh: &mut Mesh, rng: &mut impl Rng) {
    let gain = [0; 3].map(|_| 1.0 + rng.gen_range(-0.2..0.2));
    for a in &mut mesh.albedo {
        for c in 0..3 {
            a[c] = (a[c] * gain[c]).min(1.0);
        }
    }
    let yaw = rng.gen_range(-15f64..15.0).to_radians();
    let pitch = rng.gen_range(-15f64..15.0).to_radians();
    lighting.direction = normalize(Mat3::rot_y(yaw).mul(&Mat3::rot_x(pitch)).apply(lighting.direction));
    lighting.intensity *= 1.0 + rng.gen_range(-0.3..0.3);
}

/// Builds sample `index` of the dataset described by `cfg`.
pub fn generate_sample(index: usize, cfg: &GenConfig) -> Result<StereoSample> {
    let seed = mix_seed(cfg.seed, index as u64);
    let mut rng = rng_from(seed);
    let kind = ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())];
    let mut mesh = make_primitive(kind, rng.gen())?;
    let pose = Pose {
        azimuth_deg: rng.gen_range(AZIMUTH_RANGE.0..AZIMUTH_RANGE.1),
        elevation_deg: rng.gen_range(ELEVATION_RANGE.0..=ELEVATION_RANGE.1),
        distance_m: rng.gen_range(DISTANCE_RANGE.0..DISTANCE_RANGE.1),
    };
    let mut lighting = Lighting {
        texture_amp: cfg.texture_amp,
        texture_seed: rng.gen(),
        ..Lighting::default()
    };
    let point_seed: u64 = rng.gen();
    if cfg.jitter {
        jittered(&mut lighting, &mut mesh, &mut rng);
    }
    let r = render_stereo(&mesh, &pose, &cfg.camera, &lighting)?;
    let disp_l = depth_to_disparity(&r.depth_l, &cfg.camera)?;
    let disp_r = depth_to_disparity(&r.depth_r, &cfg.camera)?;
    let (occl_l, occl_r) = compute_occlusion(&disp_l, &disp_r)?;
    Ok(StereoSample {
        id: sample_id(index),
        kind,
        seed,
        camera: cfg.camera,
        pose,
        left: r.left,
        right: r.right,
        depth_l: r.depth_l,
        depth_r: r.depth_r,
        disp_l,
        disp_r,
        occl_l,
        occl_r,
        voxels: voxelize(&mesh, cfg.voxel_res)?,
        points: sample_surface(&mesh, cfg.n_gt, point_seed)?,
    })
}

fn meta_entries(s: &StereoSample) -> Vec<(String, String)> {
    let c = &s.camera;
    [
        ("id", s.id.clone()),
        ("kind", s.kind.to_string()),
        ("seed", s.seed.to_string()),
        ("width", c.width.to_string()),
        ("height", c.height.to_string()),
        ("focal_mm", c.focal_mm.to_string()),
        ("sensor_mm", c.sensor_mm.to_string()),
        ("baseline_mm", c.baseline_mm.to_string()),
        ("focal_px", c.focal_px().to_string()),
        ("azimuth_deg", s.pose.azimuth_deg.to_string()),
        ("elevation_deg", s.pose.elevation_deg.to_string()),
        ("distance_m", s.pose.distance_m.to_string()),
        ("voxel_res", s.voxels.res.to_string()),
        ("n_gt", s.points.len().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn write_sample(dir: &Path, s: &StereoSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ppm(&dir.join("left.ppm"), &s.left)?;
    write_ppm(&dir.join("right.ppm"), &s.right)?;
    write_ssdm(&dir.join("depth_l.ssdm"), &s.depth_l)?;
    write_ssdm(&dir.join("depth_r.ssdm"), &s.depth_r)?;
    write_ssdm(&dir.join("disp_l.ssdm"), &s.disp_l)?;
    write_ssdm(&dir.join("disp_r.ssdm"), &s.disp_r)?;
    write_ssbm(&dir.join("occl_l.ssbm"), &s.occl_l)?;
    write_ssbm(&dir.join("occl_r.ssbm"), &s.occl_r)?;
    write_ssvx(&dir.join("voxels.ssvx"), &s.voxels)?;
    write_ply(&dir.join("points.ply"), &s.points)?;
    let meta = dir.join("meta.txt");
    fs::write(&meta, encode_meta(&meta_entries(s))).map_err(|e| Error::io(&meta, e))
}

/// Generates `count` samples under `out_dir` and writes `manifest.txt`.
/// Returns the manifest entries.
pub fn generate_dataset(count: usize, cfg: &GenConfig, out_dir: &Path) -> Result<Vec<String>> {
    cfg.camera.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ids: Vec<String> = (0..count).map(sample_id).collect();
    (0..count).into_par_iter().try_for_each(|i| {
        generate_sample(i, cfg)
            .and_then(|s| write_sample(&out_dir.join(&s.id), &s))
            .map_err(|e| Error::Data(format!("sample {i}: {e}")))
    })?;
    let manifest = out_dir.join("manifest.txt");
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(ids)
}

fn meta_get<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::format("meta", format!("missing key `{key}`")))
}

fn meta_num<T: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<T> {
    let v = meta_get(meta, key)?;
    v.parse()
        .map_err(|_| Error::format("meta", format!("bad value `{v}` for `{key}`")))
}

pub fn load_sample(dir: &Path) -> Result<StereoSample> {
    let meta_path = dir.join("meta.txt");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = decode_meta(&text)?;
    let camera = StereoCamera {
        focal_mm: meta_num(&meta, "focal_mm")?,
        sensor_mm: meta_num(&meta, "sensor_mm")?,
        baseline_mm: meta_num(&meta, "baseline_mm")?,
        width: meta_num(&meta, "width")?,
        height: meta_num(&meta, "height")?,
    };
    let pose = Pose {
        azimuth_deg: meta_num(&meta, "azimuth_deg")?,
        elevation_deg: meta_num(&meta, "elevation_deg")?,
        distance_m: meta_num(&meta, "distance_m")?,
    };
    let s = StereoSample {
        id: meta_get(&meta, "id")?.to_string(),
        kind: meta_get(&meta, "kind")?.parse()?,
        seed: meta_num(&meta, "seed")?,
        camera,
        pose,
        left: read_ppm(&dir.join("left.ppm"))?,
        right: read_ppm(&dir.join("right.ppm"))?,
        depth_l: read_ssdm(&dir.join("depth_l.ssdm"))?,
        depth_r: read_ssdm(&dir.join("depth_r.ssdm"))?,
        disp_l: read_ssdm(&dir.join("disp_l.ssdm"))?,
        disp_r: read_ssdm(&dir.join("disp_r.ssdm"))?,
        occl_l: read_ssbm(&dir.join("occl_l.ssbm"))?,
        occl_r: read_ssbm(&dir.join("occl_r.ssbm"))?,
        voxels: read_ssvx(&dir.join("voxels.ssvx"))?,
        points: read_ply(&dir.join("points.ply"))?,
    };
    let (w, h) = (camera.width, camera.height);
    let dims_ok = [&s.depth_l, &s.depth_r, &s.disp_l, &s.disp_r]
        .iter()
        .all(|m| m.width == w && m.height == h)
        && [&s.occl_l, &s.occl_r].iter().all(|m| m.width == w && m.height == h)
        && [&s.left, &s.right].iter().all(|m| m.width == w && m.height == h);
    if !dims_ok {
        return Err(Error::Data(format!("{}: map sizes disagree with meta.txt", dir.display())));
    }
    Ok(s)
}

pub fn read_manifest(root: &Path) -> Result<Vec<PathBuf>> {
    let path = root.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| root.join(l))
        .collect())
}

/// Loads every sample listed in `root/manifest.txt`, in manifest order.
pub fn load_dataset(root: &Path) -> Result<Vec<StereoSample>> {
    read_manifest(root)?
        .par_iter()
        .map(|dir| load_sample(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display()))))
        .collect()
}
