use crate::autodiff::{Graph, Real, Tensor, Var, LOG_EPS};
use crate::{Error, Result};

fn same_shapes<T: Real>(g: &Graph<T>, op: &'static str, vars: &[Var]) -> Result<()> {
    let first = g.shape(vars[0]);
    for &v in &vars[1..] {
        if g.shape(v) != first {
            return Err(Error::ShapeMismatch {
                op,
                lhs: first.to_vec(),
                rhs: g.shape(v).to_vec(),
            });
        }
    }
    Ok(())
}

/// Mean squared disparity error over all pixels of both views, averaged over
/// the batch. Background pixels take part with their zero ground truth.
pub fn disparity_loss<T: Real>(
    g: &mut Graph<T>,
    pred_l: Var,
    pred_r: Var,
    gt_l: Var,
    gt_r: Var,
) -> Result<Var> {
    same_shapes(g, "disparity_loss", &[pred_l, pred_r, gt_l, gt_r])?;
    let dl = g.sub(pred_l, gt_l)?;
    let dr = g.sub(pred_r, gt_r)?;
    let sl = g.square(dl)?;
    let sr = g.square(dr)?;
    let ml = g.mean(sl)?;
    let mr = g.mean(sr)?;
    g.add(ml, mr)
}

/// Voxel-wise binary cross entropy, non-negative, with predictions clipped to
/// `[LOG_EPS, 1 - LOG_EPS]` inside the logarithms.
pub fn volume_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    same_shapes(g, "volume_loss", &[pred, target])?;
    let log_p = g.log(pred, LOG_EPS)?;
    let q = g.affine(pred, -1.0, 1.0)?;
    let log_q = g.log(q, LOG_EPS)?;
    let not_t = g.affine(target, -1.0, 1.0)?;
    let a = g.mul(target, log_p)?;
    let b = g.mul(not_t, log_q)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    g.affine(m, -1.0, 0.0)
}

/// Batch-mean Chamfer distance between `pred[N, n_p, 3]` and per-item target
/// clouds.
pub fn chamfer_loss<T: Real>(g: &mut Graph<T>, pred: Var, targets: &[Tensor<T>]) -> Result<Var> {
    if targets.iter().any(|t| t.len() < 3) {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    g.chamfer(pred, targets.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, InputDist, InputSpec, Mode};

    fn scalar_of(f: impl FnOnce(&mut Graph<f64>) -> Result<Var>) -> f64 {
        let mut g = Graph::new(Mode::Eval);
        let v = f(&mut g).unwrap();
        g.value(v).item()
    }

    #[test]
    fn disparity_loss_arithmetic() {
        let v = scalar_of(|g| {
            let pl = g.constant(Tensor::full(&[1, 1, 1, 1], 2.0))?;
            let pr = g.constant(Tensor::full(&[1, 1, 1, 1], 3.0))?;
            let z = g.constant(Tensor::zeros(&[1, 1, 1, 1]))?;
            disparity_loss(g, pl, pr, z, z)
        });
        assert_eq!(v, 13.0);
        let same = scalar_of(|g| {
            let p = g.constant(Tensor::from_fn(&[2, 1, 3, 4], |i| i as f64))?;
            disparity_loss(g, p, p, p, p)
        });
        assert_eq!(same, 0.0);
    }

    #[test]
    fn disparity_loss_matches_loop() {
        let n = [3, 1, 4, 5];
        let mk = |k: usize| Tensor::from_fn(&n, |i| ((i * 37 + k * 11) % 23) as f64 / 3.0);
        let (a, b, c, d) = (mk(1), mk(2), mk(3), mk(4));
        let v = scalar_of(|g| {
            let vs = [a.clone(), b.clone(), c.clone(), d.clone()].map(|t| g.constant(t).unwrap());
            disparity_loss(g, vs[0], vs[1], vs[2], vs[3])
        });
        let hw = 20;
        let mut total = 0.0;
        for item in 0..3 {
            let mut s = 0.0;
            for p in 0..hw {
                let i = item * hw + p;
                s += (a.data()[i] - c.data()[i]).powi(2) + (b.data()[i] - d.data()[i]).powi(2);
            }
            total += s / hw as f64;
        }
        assert!((v - total / 3.0).abs() < 1e-12);
    }

    #[test]
    fn volume_loss_arithmetic() {
        let v = scalar_of(|g| {
            let p = g.constant(Tensor::scalar(0.5))?;
            let t = g.constant(Tensor::scalar(1.0))?;
            volume_loss(g, p, t)
        });
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let exact = scalar_of(|g| {
            let p = g.constant(Tensor::new(&[3], vec![1.0, 0.0, 1.0])?)?;
            volume_loss(g, p, p)
        });
        assert!((0.0..=1e-11).contains(&exact), "{exact}");
    }

    #[test]
    fn volume_loss_matches_loop() {
        let p = Tensor::from_fn(&[2, 4, 4, 4], |i| ((i * 29) % 97) as f64 / 98.0 + 0.005);
        let t = Tensor::from_fn(&[2, 4, 4, 4], |i| ((i * 13) % 3 == 0) as u8 as f64);
        let v = scalar_of(|g| {
            let pv = g.constant(p.clone())?;
            let tv = g.constant(t.clone())?;
            volume_loss(g, pv, tv)
        });
        let mut s = 0.0;
        for (&pi, &ti) in p.data().iter().zip(t.data()) {
            s += ti * pi.ln() + (1.0 - ti) * (1.0 - pi).ln();
        }
        assert!((v + s / p.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients() {
        let gt = Tensor::from_fn(&[2, 1, 3, 3], |i| (i % 4) as f64);
        let err = check_gradients(
            |g, v| {
                let a = g.constant(gt.clone())?;
                disparity_loss(g, v[0], v[1], a, a)
            },
            &[InputSpec::uniform(&[2, 1, 3, 3]), InputSpec::uniform(&[2, 1, 3, 3])],
            0,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");

        let occ = Tensor::from_fn(&[1, 3, 3, 3], |i| (i % 3 == 0) as u8 as f64);
        let err = check_gradients(
            |g, v| {
                let t = g.constant(occ.clone())?;
                volume_loss(g, v[0], t)
            },
            &[InputSpec::with(&[1, 3, 3, 3], InputDist::Range(0.05, 0.95))],
            0,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");

        let target = Tensor::from_fn(&[7, 3], |i| ((i * 17) % 11) as f64 / 5.0 - 1.0);
        let err = check_gradients(
            |g, v| chamfer_loss(g, v[0], std::slice::from_ref(&target)),
            &[InputSpec::uniform(&[1, 5, 3])],
            0,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
