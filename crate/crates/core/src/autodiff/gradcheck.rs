//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::graph::{Graph, Mode, Var};
use super::tensor::Tensor;
use crate::rng::rng_from;
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputDist {
    /// `U[-1, 1]`
    Uniform,
    /// `U[-1, -m] ∪ U[m, 1]`, keeps kinks such as ReLU out of the stencil.
    AwayFromZero(f64),
    /// `U[lo, hi]`
    Range(f64, f64),
}

#[derive(Clone, Debug)]
pub struct InputSpec {
    pub shape: Vec<usize>,
    pub dist: InputDist,
}

impl InputSpec {
    pub fn uniform(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            dist: InputDist::Uniform,
        }
    }

    pub fn with(shape: &[usize], dist: InputDist) -> Self {
        Self {
            shape: shape.to_vec(),
            dist,
        }
    }
}

fn draw<R: Rng>(spec: &InputSpec, rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(&spec.shape, |_| match spec.dist {
        InputDist::Uniform => rng.gen_range(-1.0..=1.0),
        InputDist::AwayFromZero(m) => {
            let v = rng.gen_range(m..=1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        }
        InputDist::Range(lo, hi) => rng.gen_range(lo..=hi),
    })
}

/// Scalar objective `sum(op(inputs) * proj)`.
fn objective<F>(op: &F, inputs: &[Tensor<f64>], proj: Option<&Tensor<f64>>, mode: Mode) -> Result<(f64, Tensor<f64>)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(mode);
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = op(&mut g, &vars)?;
    let value = g.value(out).clone();
    let s = match proj {
        Some(p) => value.data().iter().zip(p.data()).map(|(a, b)| a * b).sum(),
        None => 0.0,
    };
    Ok((s, value))
}

/// Max relative error between analytic and central-difference gradients of
/// `op` over every input element, with inputs drawn from `seed`.
///
/// The relative error of one element is
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
pub fn check_gradients<F>(op: F, inputs: &[InputSpec], seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_in(op, inputs, seed, Mode::Train)
}

pub fn check_gradients_in<F>(op: F, inputs: &[InputSpec], seed: u64, mode: Mode) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = rng_from(seed);
    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|s| draw(s, &mut rng)).collect();
    let (_, out) = objective(&op, &values, None, mode)?;
    let proj = Tensor::from_fn(out.shape(), |_| rng.gen_range(-1.0..=1.0));

    // analytic
    let mut g = Graph::new(mode);
    let vars = values
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let y = op(&mut g, &vars)?;
    let p = g.constant(proj.clone())?;
    let prod = g.mul(y, p)?;
    let loss = g.sum(prod)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&values)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], |s| s.to_vec()))
        .collect();
    for a in analytic.iter().flatten() {
        if !a.is_finite() {
            return Err(Error::NonFinite("analytic gradient".into()));
        }
    }

    let mut worst = 0.0f64;
    for (k, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + FD_STEP;
            let (fp, _) = objective(&op, &values, Some(&proj), mode)?;
            values[k].data_mut()[i] = orig - FD_STEP;
            let (fm, _) = objective(&op, &values, Some(&proj), mode)?;
            values[k].data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            if !fd.is_finite() {
                return Err(Error::NonFinite("finite-difference gradient".into()));
            }
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
