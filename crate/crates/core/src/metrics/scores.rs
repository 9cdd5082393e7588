use super::nearest::{nearest_all, nearest_naive};
use crate::autodiff::Real;
use crate::{Error, Result};

/// Binarisation threshold for predicted occupancy.
pub const IOU_THRESHOLD: f64 = 0.4;

fn check_clouds<T>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    if !pred.len().is_multiple_of(3) || !gt.len().is_multiple_of(3) {
        return Err(Error::invalid("point buffers must hold xyz triples"));
    }
    Ok(())
}

fn chamfer_with<T: Real>(
    pred: &[T],
    gt: &[T],
    nn: fn(&[T], &[T]) -> Vec<(usize, T)>,
) -> Result<f64> {
    check_clouds(pred, gt)?;
    let mean = |v: Vec<(usize, T)>| v.iter().map(|&(_, d)| d.as_f64()).sum::<f64>() / v.len() as f64;
    Ok(mean(nn(gt, pred)) + mean(nn(pred, gt)))
}

/// Symmetric Chamfer distance between flat `[x, y, z, ...]` clouds, using the
/// grid search when the sets are large.
pub fn chamfer_distance<T: Real>(pred: &[T], gt: &[T]) -> Result<f64> {
    chamfer_with(pred, gt, nearest_all)
}

/// Same as [`chamfer_distance`] with an exhaustive scan.
pub fn chamfer_distance_naive<T: Real>(pred: &[T], gt: &[T]) -> Result<f64> {
    chamfer_with(pred, gt, nearest_naive)
}

/// Intersection over union of `pred > t` against `gt`; 1 when both are empty.
pub fn iou<T: Real>(pred: &[T], gt: &[bool], t: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "iou",
            lhs: vec![pred.len()],
            rhs: vec![gt.len()],
        });
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("iou threshold {t} outside (0, 1)")));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let p = p.as_f64() > t;
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean absolute disparity error over pixels whose `excluded` flag is false.
pub fn epe<T: Real>(pred: &[T], gt: &[T], excluded: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != excluded.len() {
        return Err(Error::ShapeMismatch {
            op: "epe",
            lhs: vec![pred.len(), gt.len()],
            rhs: vec![excluded.len()],
        });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((&p, &g), &ex) in pred.iter().zip(gt).zip(excluded) {
        if !ex {
            sum += (p.as_f64() - g.as_f64()).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("epe: no evaluable pixels".into()));
    }
    Ok(sum / count as f64)
}
