//! Procedural stereo scenes with complete ground truth.
//!
//! Objects are built from boxes, spheres and cylinders in a y-up canonical
//! frame that fits the cube `[-0.5, 0.5]³`. A rectified pinhole rig renders
//! both views with a z-buffer; depth, disparity, occlusion, a solid voxel
//! grid and surface samples are derived from the same mesh.

mod camera;
mod dataset;
pub mod formats;
mod image;
pub mod math;
mod mesh;
mod render;
mod sample;
mod voxel;

pub use camera::{Lighting, Pose, StereoCamera, View};
pub use dataset::{
    generate_dataset, generate_sample, load_dataset, load_sample, read_manifest, sample_id, write_sample, GenConfig,
    StereoSample, AZIMUTH_RANGE, DISTANCE_RANGE, ELEVATION_RANGE,
};
pub use image::{quantize, Map, RgbImage};
pub use mesh::{box_mesh, cylinder_mesh, make_primitive, sphere_mesh, Mesh, ShapeKind, OBJECT_EXTENT};
pub use render::{
    background_mask, compute_occlusion, depth_to_disparity, disparity_value, render_stereo, render_view,
    texture_factor, StereoRender, MIN_DEPTH,
};
pub use sample::{sample_surface, sample_surface_with_source, PointCloud};
pub use voxel::{voxelize, VoxelGrid};

#[cfg(test)]
mod tests;
