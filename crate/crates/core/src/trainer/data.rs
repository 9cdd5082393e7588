//! Conversion of generated samples into batched tensors.

use crate::autodiff::Tensor;
use crate::nets::{ScaleConfig, Task};
use crate::scenegen::{background_mask, Map, StereoSample};
use crate::{Error, Result};

/// Checks that every sample matches the network's input size and targets.
pub fn check_dataset(samples: &[StereoSample], cfg: &ScaleConfig, task: Option<Task>) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    for s in samples {
        if s.left.width != cfg.input_w || s.left.height != cfg.input_h {
            return Err(Error::Data(format!(
                "{}: image is {}x{} but the scale expects {}x{}",
                s.id, s.left.width, s.left.height, cfg.input_w, cfg.input_h
            )));
        }
        match task {
            Some(Task::Volume) if s.voxels.res != cfg.volume_res => {
                return Err(Error::Data(format!(
                    "{}: voxel grid is {}^3 but the scale expects {}^3",
                    s.id, s.voxels.res, cfg.volume_res
                )));
            }
            Some(Task::Point) if s.points.is_empty() => {
                return Err(Error::Data(format!("{}: no ground-truth points", s.id)));
            }
            _ => {}
        }
    }
    Ok(())
}

/// `[N, 3, H, W]` left and right images in `[0, 1]`.
pub fn image_batch(samples: &[&StereoSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (h, w) = (samples[0].left.height, samples[0].left.width);
    let stack = |f: &dyn Fn(&StereoSample) -> Vec<f32>| -> Result<Tensor<f32>> {
        let data: Vec<f32> = samples.iter().flat_map(|s| f(s)).collect();
        Tensor::new(&[samples.len(), 3, h, w], data)
    };
    Ok((stack(&|s| s.left.planar())?, stack(&|s| s.right.planar())?))
}

/// Stacks single-channel maps into `[N, 1, H, W]`.
pub fn map_batch(maps: &[&Map<f32>]) -> Result<Tensor<f32>> {
    let (h, w) = (maps[0].height, maps[0].width);
    let data: Vec<f32> = maps.iter().flat_map(|m| m.data.iter().copied()).collect();
    Tensor::new(&[maps.len(), 1, h, w], data)
}

pub fn gt_disparity_batch(samples: &[&StereoSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let l: Vec<&Map<f32>> = samples.iter().map(|s| &s.disp_l).collect();
    let r: Vec<&Map<f32>> = samples.iter().map(|s| &s.disp_r).collect();
    Ok((map_batch(&l)?, map_batch(&r)?))
}

/// Occupancy targets `[N, R, R, R]` as 0/1.
pub fn voxel_batch(samples: &[&StereoSample]) -> Result<Tensor<f32>> {
    let r = samples[0].voxels.res;
    let data: Vec<f32> = samples.iter().flat_map(|s| s.voxels.as_f32()).collect();
    Tensor::new(&[samples.len(), r, r, r], data)
}

pub fn point_targets(samples: &[&StereoSample]) -> Result<Vec<Tensor<f32>>> {
    samples
        .iter()
        .map(|s| Tensor::new(&[s.points.len(), 3], s.points.flat()))
        .collect()
}

/// Pixels left out of disparity evaluation: occluded or background.
pub fn epe_exclusions(s: &StereoSample) -> (Vec<bool>, Vec<bool>) {
    let ex = |occl: &Map<bool>, depth: &Map<f32>| {
        let bg = background_mask(depth);
        occl.data.iter().zip(&bg.data).map(|(&o, &b)| o || b).collect()
    };
    (ex(&s.occl_l, &s.depth_l), ex(&s.occl_r, &s.depth_r))
}

/// Splits `t[N, ...]` into `N` single-item maps of size `w x h`.
pub fn tensor_to_maps(t: &Tensor<f32>, w: usize, h: usize) -> Result<Vec<Map<f32>>> {
    let n = t.shape()[0];
    (0..n).map(|i| Map::from_vec(w, h, t.batch_item(i).into_data())).collect()
}
