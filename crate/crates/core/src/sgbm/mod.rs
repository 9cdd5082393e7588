//! Semi-global matching disparity estimation: per-pixel census or SAD
//! matching costs, multi-path smoothness aggregation, winner-take-all with
//! sub-pixel refinement and a left-right consistency check.

use rayon::prelude::*;

use crate::scenegen::{Map, RgbImage};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    Sad,
    Census,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgmParams {
    /// Half-width of the matching window (2 gives 5x5, at most 3).
    pub radius: usize,
    pub max_disp: usize,
    pub p1: f32,
    pub p2: f32,
    /// 4 or 8 aggregation directions.
    pub paths: usize,
    /// Relative margin by which the best cost must beat every other
    /// disparity more than one step away.
    pub uniqueness: f32,
    pub cost: CostKind,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self {
            radius: 2,
            max_disp: 48,
            p1: 2.0,
            p2: 24.0,
            paths: 8,
            uniqueness: 0.05,
            cost: CostKind::Census,
        }
    }
}

impl SgmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 > 0.0 && self.p2 > self.p1) {
            return Err(Error::invalid(format!("need 0 < P1 < P2, got {} and {}", self.p1, self.p2)));
        }
        if self.max_disp < 1 {
            return Err(Error::invalid("max_disp must be at least 1"));
        }
        if self.paths != 4 && self.paths != 8 {
            return Err(Error::invalid(format!("paths must be 4 or 8, got {}", self.paths)));
        }
        if self.radius > 3 {
            return Err(Error::invalid("census windows above 7x7 do not fit 64 bits"));
        }
        if self.uniqueness < 0.0 {
            return Err(Error::invalid("uniqueness must be non-negative"));
        }
        Ok(())
    }

    /// Cost given to shifts that leave the image.
    pub fn max_cost(&self) -> f32 {
        let win = (2 * self.radius + 1) * (2 * self.radius + 1);
        win as f32
    }
}

/// Dense `[H, W, D]` cost array, `D = max_disp + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub levels: usize,
    pub data: Vec<f32>,
}

impl CostVolume {
    #[inline]
    pub fn at(&self, x: usize, y: usize, d: usize) -> f32 {
        self.data[(y * self.width + x) * self.levels + d]
    }

    fn cell(&self, x: usize, y: usize) -> &[f32] {
        &self.data[(y * self.width + x) * self.levels..][..self.levels]
    }
}

fn clamped(img: &Map<f32>, x: isize, y: isize) -> f32 {
    let x = x.clamp(0, img.width as isize - 1) as usize;
    let y = y.clamp(0, img.height as isize - 1) as usize;
    img.data[y * img.width + x]
}

/// Modified census transform: one bit per window pixel, set when the pixel
/// is darker than the window mean. Unlike comparing against the centre,
/// a local extremum does not collapse to an all-ones code.
fn census(img: &Map<f32>, r: usize) -> Vec<u64> {
    let r = r as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f32;
    let mut out = Vec::with_capacity(img.data.len());
    let mut win = Vec::with_capacity(n as usize);
    for y in 0..img.height as isize {
        for x in 0..img.width as isize {
            win.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    win.push(clamped(img, x + dx, y + dy));
                }
            }
            let mean = win.iter().sum::<f32>() / n;
            out.push(win.iter().fold(0u64, |bits, &v| (bits << 1) | u64::from(v < mean)));
        }
    }
    out
}

/// Matching cost between the window around `(x, y)` in `left` and around
/// `(x - d, y)` in `right`.
pub fn matching_cost(left: &Map<f32>, right: &Map<f32>, params: &SgmParams) -> Result<CostVolume> {
    params.validate()?;
    if !left.same_dims(right) {
        return Err(Error::invalid("left and right images differ in size"));
    }
    let (w, h) = (left.width, left.height);
    if params.max_disp >= w {
        return Err(Error::invalid(format!("max_disp {} must be below the width {w}", params.max_disp)));
    }
    let levels = params.max_disp + 1;
    let max_cost = params.max_cost();
    let mut data = vec![max_cost; w * h * levels];
    match params.cost {
        CostKind::Census => {
            let cl = census(left, params.radius);
            let cr = census(right, params.radius);
            for y in 0..h {
                for x in 0..w {
                    for d in 0..levels.min(x + 1) {
                        data[(y * w + x) * levels + d] = (cl[y * w + x] ^ cr[y * w + x - d]).count_ones() as f32;
                    }
                }
            }
        }
        CostKind::Sad => {
            let r = params.radius as isize;
            for y in 0..h {
                for x in 0..w {
                    for d in 0..levels.min(x + 1) {
                        let mut s = 0.0f32;
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (xi, yi) = (x as isize + dx, y as isize + dy);
                                s += (clamped(left, xi, yi) - clamped(right, xi - d as isize, yi)).abs();
                            }
                        }
                        data[(y * w + x) * levels + d] = s;
                    }
                }
            }
        }
    }
    Ok(CostVolume {
        width: w,
        height: h,
        levels,
        data,
    })
}

const DIRS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)];

/// Aggregated cost along one direction `(dx, dy)`.
fn aggregate_path(cost: &CostVolume, dir: (isize, isize), p1: f32, p2: f32) -> Vec<f32> {
    let (w, h, nd) = (cost.width as isize, cost.height as isize, cost.levels);
    let mut out = vec![0.0f32; cost.data.len()];
    // every pixel whose predecessor lies outside the image starts a path
    let mut starts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x - dir.0, y - dir.1);
            if px < 0 || py < 0 || px >= w || py >= h {
                starts.push((x, y));
            }
        }
    }
    let mut prev = vec![0.0f32; nd];
    for (sx, sy) in starts {
        let (mut x, mut y) = (sx, sy);
        let mut first = true;
        while x >= 0 && y >= 0 && x < w && y < h {
            let c = cost.cell(x as usize, y as usize);
            let base = (y as usize * cost.width + x as usize) * nd;
            let dst = &mut out[base..base + nd];
            if first {
                dst.copy_from_slice(c);
                first = false;
            } else {
                let pmin = prev.iter().copied().fold(f32::INFINITY, f32::min);
                for d in 0..nd {
                    let mut best = prev[d];
                    if d > 0 {
                        best = best.min(prev[d - 1] + p1);
                    }
                    if d + 1 < nd {
                        best = best.min(prev[d + 1] + p1);
                    }
                    best = best.min(pmin + p2);
                    dst[d] = c[d] + best - pmin;
                }
            }
            prev.copy_from_slice(dst);
            x += dir.0;
            y += dir.1;
        }
    }
    out
}

/// Sum over `params.paths` directions of the SGM path recurrence.
pub fn aggregate_sgm(cost: &CostVolume, params: &SgmParams) -> Result<CostVolume> {
    params.validate()?;
    let per_path: Vec<Vec<f32>> = DIRS[..params.paths]
        .par_iter()
        .map(|&dir| aggregate_path(cost, dir, params.p1, params.p2))
        .collect();
    let mut data = vec![0.0f32; cost.data.len()];
    for p in &per_path {
        for (a, &b) in data.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(CostVolume { data, ..cost.clone() })
}

/// Winner-take-all with parabolic refinement. Pixels are invalid when the
/// aggregated minimum is not unique or when the raw cost carries no
/// information (flat over every in-image shift).
fn select(raw: &CostVolume, agg: &CostVolume, uniqueness: f32) -> (Map<f32>, Map<bool>) {
    let (w, h, nd) = (agg.width, agg.height, agg.levels);
    let mut disp = Map::filled(w, h, 0.0f32);
    let mut valid = Map::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let rc = &raw.cell(x, y)[..nd.min(x + 1)];
            if rc.iter().all(|&v| v == rc[0]) {
                continue;
            }
            let c = agg.cell(x, y);
            let mut best = 0;
            for d in 1..nd {
                if c[d] < c[best] {
                    best = d;
                }
            }
            let bound = c[best] * (1.0 + uniqueness);
            let ambiguous = (0..nd).any(|d| d.abs_diff(best) > 1 && c[d] <= bound);
            if ambiguous {
                continue;
            }
            let mut v = best as f32;
            if best > 0 && best + 1 < nd {
                let (a, b, e) = (c[best - 1], c[best], c[best + 1]);
                let denom = a - 2.0 * b + e;
                if denom > 0.0 {
                    v += (a - e) / (2.0 * denom);
                }
            }
            disp.set(x, y, v.clamp(0.0, (nd - 1) as f32));
            valid.set(x, y, true);
        }
    }
    (disp, valid)
}

fn flip(m: &Map<f32>) -> Map<f32> {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            out.set(x, y, m.get(m.width - 1 - x, y));
        }
    }
    out
}

fn flip_mask(m: &Map<bool>) -> Map<bool> {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            out.set(x, y, m.get(m.width - 1 - x, y));
        }
    }
    out
}

fn one_direction(reference: &Map<f32>, other: &Map<f32>, params: &SgmParams) -> Result<(Map<f32>, Map<bool>)> {
    let cost = matching_cost(reference, other, params)?;
    let agg = aggregate_sgm(&cost, params)?;
    Ok(select(&cost, &agg, params.uniqueness))
}

/// Disparity maps and validity of a stereo pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SgbmOutput {
    pub disp_l: Map<f32>,
    pub disp_r: Map<f32>,
    pub valid_l: Map<bool>,
    pub valid_r: Map<bool>,
}

/// Full estimator on grayscale maps. The right-view map comes from matching
/// the mirrored pair; both maps are cross-checked to 1 px.
pub fn sgbm_gray(left: &Map<f32>, right: &Map<f32>, params: &SgmParams) -> Result<SgbmOutput> {
    let (disp_l, mut valid_l) = one_direction(left, right, params)?;
    let (fr, fvr) = one_direction(&flip(right), &flip(left), params)?;
    let (disp_r, mut valid_r) = (flip(&fr), flip_mask(&fvr));
    let w = left.width as isize;
    let check = |d: &Map<f32>, v: &Map<bool>, od: &Map<f32>, ov: &Map<bool>, sign: isize| {
        let mut keep = v.clone();
        for y in 0..d.height {
            for x in 0..d.width {
                if !v.get(x, y) {
                    continue;
                }
                let dv = d.get(x, y);
                let xo = x as isize + sign * dv.round() as isize;
                let ok = xo >= 0 && xo < w && ov.get(xo as usize, y) && (dv - od.get(xo as usize, y)).abs() <= 1.0;
                keep.set(x, y, ok);
            }
        }
        keep
    };
    let kl = check(&disp_l, &valid_l, &disp_r, &valid_r, -1);
    let kr = check(&disp_r, &valid_r, &disp_l, &valid_l, 1);
    valid_l = kl;
    valid_r = kr;
    Ok(SgbmOutput {
        disp_l,
        disp_r,
        valid_l,
        valid_r,
    })
}

pub fn sgbm_disparity(left: &RgbImage, right: &RgbImage, params: &SgmParams) -> Result<SgbmOutput> {
    sgbm_gray(&left.gray(), &right.gray(), params)
}

/// Fills invalid pixels row by row with the smaller (background-side)
/// disparity of the nearest valid neighbours; rows without any valid pixel
/// become zero.
pub fn fill_invalid(disp: &Map<f32>, valid: &Map<bool>) -> Map<f32> {
    let mut out = disp.clone();
    for y in 0..disp.height {
        let mut x = 0;
        while x < disp.width {
            if valid.get(x, y) {
                x += 1;
                continue;
            }
            let start = x;
            while x < disp.width && !valid.get(x, y) {
                x += 1;
            }
            let left = (start > 0).then(|| disp.get(start - 1, y));
            let right = (x < disp.width).then(|| disp.get(x, y));
            let v = match (left, right) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => 0.0,
            };
            for xi in start..x {
                out.set(xi, y, v);
            }
        }
    }
    out
}

/// SGBM disparities with holes filled, ready to feed the reconstruction network.
pub fn sgbm_filled(left: &RgbImage, right: &RgbImage, params: &SgmParams) -> Result<(Map<f32>, Map<f32>)> {
    let o = sgbm_disparity(left, right, params)?;
    Ok((fill_invalid(&o.disp_l, &o.valid_l), fill_invalid(&o.disp_r, &o.valid_r)))
}
