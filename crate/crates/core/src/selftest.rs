//! Built-in verification suites: finite-difference gradient checks for every
//! differentiable op and loss, metric and cost-volume oracles, and geometry
//! checks on generated scenes.

use rand::Rng;

use crate::autodiff::{check_gradients, check_gradients_in, Graph, InputDist, InputSpec, Mode, Tensor, Var};
use crate::metrics::{chamfer_distance, chamfer_loss, disparity_loss, iou, volume_loss};
use crate::nets::build_cost_volume;
use crate::rng::rng_from;
use crate::scenegen::{
    box_mesh, generate_sample, render_stereo, depth_to_disparity, GenConfig, Lighting, Pose, StereoCamera,
};
use crate::sgbm::{matching_cost, CostKind, SgmParams};
use crate::scenegen::Map;
use crate::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;

pub type GradOp = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Send + Sync>;

pub struct GradCase {
    pub name: &'static str,
    pub op: GradOp,
    pub inputs: Vec<InputSpec>,
    pub mode: Mode,
}

fn case(name: &'static str, inputs: Vec<InputSpec>, op: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static) -> GradCase {
    GradCase {
        name,
        op: Box::new(op),
        inputs,
        mode: Mode::Train,
    }
}

fn u(shape: &[usize]) -> InputSpec {
    InputSpec::uniform(shape)
}

fn bn_case(name: &'static str, mode: Mode) -> GradCase {
    let mut c = case(name, vec![u(&[3, 2, 3, 3]), u(&[2]), u(&[2])], |g, v| {
        let rm = Tensor::from_fn(&[2], |i| 0.1 * i as f64);
        let rv = Tensor::from_fn(&[2], |i| 0.5 + i as f64);
        Ok(g.batch_norm(v[0], v[1], v[2], &rm, &rv, 0.1, 1e-5)?.0)
    });
    c.mode = mode;
    c
}

/// One case per differentiable op and loss.
pub fn gradient_cases() -> Vec<GradCase> {
    let targets = Tensor::from_fn(&[6, 3], |i| ((i * 17) % 11) as f64 / 5.0 - 1.0);
    let targets2 = Tensor::from_fn(&[5, 3], |i| ((i * 7) % 13) as f64 / 6.0 - 1.0);
    let occ = Tensor::from_fn(&[1, 2, 3, 3], |i| (i % 3 == 0) as u8 as f64);
    let gt_disp = Tensor::from_fn(&[2, 1, 3, 3], |i| (i % 4) as f64);
    vec![
        case("conv2d", vec![u(&[2, 3, 8, 8]), u(&[4, 3, 3, 3]), u(&[4])], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
        }),
        case("conv2d_stride2", vec![u(&[2, 2, 7, 6]), u(&[3, 2, 3, 3]), u(&[3])], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 2, 1)
        }),
        case("conv_transpose2d", vec![u(&[2, 3, 3, 4]), u(&[3, 2, 4, 4]), u(&[2])], |g, v| {
            g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
        }),
        case("conv3d", vec![u(&[1, 2, 3, 4, 3]), u(&[2, 2, 3, 3, 3]), u(&[2])], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), 1, 1)
        }),
        case("conv_transpose3d", vec![u(&[1, 2, 2, 2, 3]), u(&[2, 2, 4, 4, 4]), u(&[2])], |g, v| {
            g.conv_transpose3d(v[0], v[1], Some(v[2]), 2, 1)
        }),
        bn_case("batch_norm", Mode::Train),
        bn_case("batch_norm_eval", Mode::Eval),
        case("relu", vec![InputSpec::with(&[4, 6], InputDist::AwayFromZero(0.1))], |g, v| g.relu(v[0])),
        case("sigmoid", vec![u(&[3, 4])], |g, v| g.sigmoid(v[0])),
        case("linear", vec![u(&[3, 5]), u(&[4, 5]), u(&[4])], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        case("concat", vec![u(&[2, 3]), u(&[2, 5])], |g, v| g.concat(&[v[0], v[1]], 1)),
        case("slice", vec![u(&[3, 4, 2])], |g, v| g.slice(v[0], 1, 1, 2)),
        case("reshape", vec![u(&[2, 6])], |g, v| g.reshape(v[0], &[3, 4])),
        case("add", vec![u(&[3, 3]), u(&[3, 3])], |g, v| g.add(v[0], v[1])),
        case("sub", vec![u(&[3, 3]), u(&[3, 3])], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![u(&[3, 3]), u(&[3, 3])], |g, v| g.mul(v[0], v[1])),
        case("affine", vec![u(&[5])], |g, v| g.affine(v[0], -1.5, 0.25)),
        case("square", vec![u(&[2, 4])], |g, v| g.square(v[0])),
        case("mean", vec![u(&[2, 4])], |g, v| g.mean(v[0])),
        case("sum", vec![u(&[2, 4])], |g, v| g.sum(v[0])),
        case("log", vec![InputSpec::with(&[6], InputDist::Range(0.1, 1.0))], |g, v| g.log(v[0], 1e-12)),
        case("min_reduce", vec![u(&[3, 7])], |g, v| g.min_reduce(v[0], 1)),
        case("reflect_pad2d", vec![u(&[1, 2, 4, 5])], |g, v| g.reflect_pad2d(v[0], 2, 3)),
        case("crop2d", vec![u(&[1, 2, 4, 5])], |g, v| g.crop2d(v[0], 3, 2)),
        case("shift_stack", vec![u(&[1, 2, 3, 6]), u(&[1, 2, 3, 6])], |g, v| g.shift_stack(v[0], v[1], 3, 2)),
        case("pairwise_sq_dist", vec![u(&[4, 3]), u(&[5, 3])], |g, v| g.pairwise_sq_dist(v[0], v[1])),
        case("chamfer", vec![u(&[2, 5, 3])], move |g, v| g.chamfer(v[0], vec![targets.clone(), targets2.clone()])),
        case("disparity_loss", vec![u(&[2, 1, 3, 3]), u(&[2, 1, 3, 3])], move |g, v| {
            let t = g.constant(gt_disp.clone())?;
            disparity_loss(g, v[0], v[1], t, t)
        }),
        case("volume_loss", vec![InputSpec::with(&[1, 2, 3, 3], InputDist::Range(0.05, 0.95))], move |g, v| {
            let t = g.constant(occ.clone())?;
            volume_loss(g, v[0], t)
        }),
        case("chamfer_loss", vec![u(&[1, 5, 3])], |g, v| {
            let t = Tensor::from_fn(&[7, 3], |i| ((i * 5) % 9) as f64 / 4.0 - 1.0);
            chamfer_loss(g, v[0], &[t])
        }),
    ]
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: impl Into<String>, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((ok, d)) => Self::new(name, ok, d),
            Err(e) => Self::new(name, false, e.to_string()),
        }
    }
}

/// Worst relative error of every gradient case over seeds `0..seeds`.
pub fn gradient_suite(seeds: u64) -> Vec<Check> {
    gradient_cases()
        .into_iter()
        .map(|c| {
            let r = (0..seeds)
                .map(|s| check_gradients_in(&c.op, &c.inputs, s, c.mode))
                .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)));
            Check::from_result(
                format!("grad/{}", c.name),
                r.map(|e| (e < GRAD_TOLERANCE, format!("max rel err {e:.2e}"))),
            )
        })
        .collect()
}

fn naive_cd(p: &[f64], q: &[f64]) -> f64 {
    let one = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for x in a.chunks(3) {
            let mut best = f64::INFINITY;
            for y in b.chunks(3) {
                let d = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
                best = best.min(d);
            }
            s += best;
        }
        s / (a.len() / 3) as f64
    };
    one(q, p) + one(p, q)
}

/// Chamfer distance against a double loop, IoU against set counting, and
/// both identity cases, on `instances` random inputs.
pub fn metric_oracles(instances: usize, seed: u64) -> Vec<Check> {
    let mut rng = rng_from(seed);
    let (mut cd_err, mut cd_self, mut iou_bad, mut iou_self) = (0.0f64, 0.0f64, 0usize, 0usize);
    let mut errors = Vec::new();
    for _ in 0..instances {
        let n = rng.gen_range(1..=256);
        let m = rng.gen_range(1..=256);
        let p: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..3 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match (chamfer_distance(&p, &q), chamfer_distance(&p, &p)) {
            (Ok(a), Ok(b)) => {
                cd_err = cd_err.max((a - naive_cd(&p, &q)).abs());
                cd_self = cd_self.max(b.abs());
            }
            (Err(e), _) | (_, Err(e)) => errors.push(e.to_string()),
        }
        let probs: Vec<f64> = (0..512).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gt: Vec<bool> = (0..512).map(|_| rng.gen_bool(0.4)).collect();
        let t = rng.gen_range(0.05..0.95);
        let pred: Vec<bool> = probs.iter().map(|&v| v > t).collect();
        let inter = pred.iter().zip(&gt).filter(|(a, b)| **a && **b).count();
        let union = pred.iter().zip(&gt).filter(|(a, b)| **a || **b).count();
        let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let as_probs: Vec<f64> = gt.iter().map(|&b| b as u8 as f64).collect();
        match (iou(&probs, &gt, t), iou(&as_probs, &gt, t)) {
            (Ok(a), Ok(b)) => {
                iou_bad += (a != want) as usize;
                iou_self += (b != 1.0) as usize;
            }
            (Err(e), _) | (_, Err(e)) => errors.push(e.to_string()),
        }
    }
    let err = |ok: bool| ok && errors.is_empty();
    vec![
        Check::new("metric/chamfer_vs_naive", err(cd_err <= 1e-12), format!("max abs diff {cd_err:.2e}")),
        Check::new("metric/chamfer_self_zero", err(cd_self == 0.0), format!("max CD(P,P) {cd_self:.2e}")),
        Check::new("metric/iou_vs_sets", err(iou_bad == 0), format!("{iou_bad} mismatches")),
        Check::new("metric/iou_self_one", err(iou_self == 0), format!("{iou_self} mismatches")),
    ]
}

/// `build_cost_volume` against a per-pixel triple loop.
pub fn cost_volume_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = rng_from(seed);
    let mut bad = 0usize;
    let run = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<bool> {
        let (n, c, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(2..9));
        let max_disp = 4 * rng.gen_range(1..4);
        let shift = rng.gen_range(1..3);
        let l = Tensor::from_fn(&[n, c, h, w], |_| rng.gen_range(-1.0..1.0f64));
        let r = Tensor::from_fn(&[n, c, h, w], |_| rng.gen_range(-1.0..1.0f64));
        let mut g = Graph::new(Mode::Eval);
        let (lv, rv) = (g.constant(l.clone())?, g.constant(r.clone())?);
        let cv = build_cost_volume(&mut g, lv, rv, max_disp, shift)?;
        let out = g.value(cv);
        let levels = (max_disp / 4) / shift + 1;
        if out.shape() != [n, 2 * c, levels, h, w] {
            return Ok(false);
        }
        let od = out.data();
        for b in 0..n {
            for ch in 0..2 * c {
                for d in 0..levels {
                    for y in 0..h {
                        for x in 0..w {
                            let want = if ch < c {
                                l.data()[((b * c + ch) * h + y) * w + x]
                            } else if x >= d * shift {
                                r.data()[((b * c + ch - c) * h + y) * w + x - d * shift]
                            } else {
                                0.0
                            };
                            let got = od[(((b * 2 * c + ch) * levels + d) * h + y) * w + x];
                            if got.to_bits() != want.to_bits() {
                                return Ok(false);
                            }
                        }
                    }
                }
            }
        }
        Ok(true)
    };
    for _ in 0..instances {
        match run(&mut rng) {
            Ok(true) => {}
            Ok(false) => bad += 1,
            Err(e) => return Check::new("cost_volume/oracle", false, e.to_string()),
        }
    }
    Check::new("cost_volume/oracle", bad == 0, format!("{bad} of {instances} differ"))
}

/// Frontal plane at Z = 2 m seen by the 224-px paper camera.
pub fn frontal_plane_disparity() -> Result<f32> {
    let cam = StereoCamera::paper(224, 224);
    let pose = Pose {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
        distance_m: 2.5,
    };
    let lighting = Lighting {
        texture_amp: 0.0,
        ..Lighting::default()
    };
    let r = render_stereo(&box_mesh([1.0; 3])?, &pose, &cam, &lighting)?;
    let d = depth_to_disparity(&r.depth_l, &cam)?;
    Ok(d.get(112, 112))
}

/// Fraction of non-occluded object pixels in the left view whose match in
/// the right view agrees to within 1 px.
pub fn lr_consistency(disp_l: &Map<f32>, disp_r: &Map<f32>, occl_l: &Map<bool>) -> (usize, usize) {
    let (mut ok, mut total) = (0, 0);
    for y in 0..disp_l.height {
        for x in 0..disp_l.width {
            let d = disp_l.get(x, y);
            if d <= 0.0 || occl_l.get(x, y) {
                continue;
            }
            total += 1;
            let xr = (x as f32 - d).round();
            if xr >= 0.0 && (xr as usize) < disp_r.width && (disp_r.get(xr as usize, y) - d).abs() <= 1.0 {
                ok += 1;
            }
        }
    }
    (ok, total)
}

/// Disparity/depth identity, left-right consistency and points-in-voxels on
/// `count` generated samples, plus the frontal-plane disparity.
pub fn geometry_suite(count: usize, cfg: &GenConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let (mut identity_bad, mut lr_ok, mut lr_total, mut worst_inside) = (0usize, 0usize, 0usize, 1.0f64);
    for i in 0..count {
        let s = match generate_sample(i, cfg) {
            Ok(s) => s,
            Err(e) => return vec![Check::new("geometry/generate", false, e.to_string())],
        };
        for (z, d) in s.depth_l.data.iter().zip(&s.disp_l.data) {
            let want = if z.is_finite() {
                (s.camera.focal_px() * s.camera.baseline_m() / *z as f64) as f32
            } else {
                0.0
            };
            identity_bad += (want.to_bits() != d.to_bits()) as usize;
        }
        let (ok, total) = lr_consistency(&s.disp_l, &s.disp_r, &s.occl_l);
        lr_ok += ok;
        lr_total += total;
        let inside = s
            .points
            .points
            .iter()
            .filter(|&&p| s.voxels.cell_of(p).is_some_and(|c| s.voxels.get(c[0], c[1], c[2])))
            .count();
        worst_inside = worst_inside.min(inside as f64 / s.points.len() as f64);
    }
    checks.push(Check::new(
        "geometry/disparity_identity",
        identity_bad == 0,
        format!("{identity_bad} pixels differ"),
    ));
    let frac = lr_ok as f64 / lr_total.max(1) as f64;
    checks.push(Check::new("geometry/lr_consistency", frac >= 0.99, format!("{:.4} consistent", frac)));
    checks.push(Check::new(
        "geometry/points_in_voxels",
        worst_inside >= 0.99,
        format!("worst sample {worst_inside:.4}"),
    ));
    checks.push(Check::from_result(
        "geometry/frontal_plane",
        frontal_plane_disparity().map(|d| ((d - 15.925).abs() <= 0.01, format!("{d} px"))),
    ));
    checks
}

/// Synthetic shift on random texture: the interior cost argmin equals the
/// shift for both cost kinds.
pub fn sgbm_shift_check(seed: u64) -> Check {
    let mut rng = rng_from(seed);
    let (w, h) = (40, 12);
    let base = Map::from_vec(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0f32)).collect()).expect("size");
    let mut bad = 0;
    for cost in [CostKind::Census, CostKind::Sad] {
        for k in [0usize, 3, 7] {
            let mut right = Map::filled(w, h, 0.0f32);
            for y in 0..h {
                for x in 0..w {
                    right.set(x, y, base.get((x + k).min(w - 1), y));
                }
            }
            let params = SgmParams {
                max_disp: 10,
                cost,
                ..SgmParams::default()
            };
            let cv = match matching_cost(&base, &right, &params) {
                Ok(c) => c,
                Err(e) => return Check::new("sgbm/shift_recovery", false, e.to_string()),
            };
            for y in 2..h - 2 {
                for x in 12..w - 10 {
                    let best = (0..=10)
                        .min_by(|&a, &b| cv.at(x, y, a).total_cmp(&cv.at(x, y, b)))
                        .unwrap_or(0);
                    bad += (best != k) as usize;
                }
            }
        }
    }
    Check::new("sgbm/shift_recovery", bad == 0, format!("{bad} wrong argmins"))
}

/// A gradient check fed a NaN input; it must be reported as a failure.
pub fn nan_injection() -> Check {
    let r = check_gradients(
        |g, v| {
            let nan = g.constant(Tensor::full(&[3], f64::NAN))?;
            g.mul(v[0], nan)
        },
        &[u(&[3])],
        0,
    );
    Check::from_result(
        "inject/nan",
        r.map(|e| (e < GRAD_TOLERANCE, format!("max rel err {e:.2e}"))),
    )
}

/// Everything `ssr selftest` runs.
pub fn run_all(inject_nan: bool) -> Vec<Check> {
    let mut checks = gradient_suite(3);
    checks.extend(metric_oracles(20, 1));
    checks.push(cost_volume_oracle(20, 2));
    let gen = GenConfig {
        camera: StereoCamera::paper(64, 64),
        n_gt: 2048,
        ..GenConfig::default()
    };
    checks.extend(geometry_suite(4, &gen));
    checks.push(sgbm_shift_check(3));
    if inject_nan {
        checks.push(nan_injection());
    }
    checks
}
