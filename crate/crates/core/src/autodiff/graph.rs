//! Tape of recorded operations and the reverse sweep over it.

use std::collections::BTreeMap;

use super::conv::{self, ConvDims, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::metrics::nearest;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    // `dims` describes the direct convolution whose input-gradient this is
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Concat {
        inputs: Vec<Var>,
        dim: usize,
    },
    Slice {
        x: Var,
        dim: usize,
        start: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    Square(Var),
    Mean(Var),
    Sum(Var),
    Log {
        x: Var,
        eps: T,
    },
    MinReduce {
        x: Var,
        argmin: Vec<usize>,
    },
    ReflectPad2d {
        x: Var,
    },
    Crop2d {
        x: Var,
    },
    PairwiseSqDist {
        a: Var,
        b: Var,
    },
    ShiftStack {
        left: Var,
        right: Var,
        shift: usize,
    },
    Chamfer {
        pred: Var,
        targets: Vec<Tensor<T>>,
        pred_nn: Vec<Vec<usize>>,
        gt_nn: Vec<Vec<usize>>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Conv { .. } => "conv",
            Op::ConvTranspose { .. } => "conv_transpose",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Linear { .. } => "linear",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Square(_) => "square",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Log { .. } => "log",
            Op::MinReduce { .. } => "min_reduce",
            Op::ReflectPad2d { .. } => "reflect_pad2d",
            Op::Crop2d { .. } => "crop2d",
            Op::PairwiseSqDist { .. } => "pairwise_sq_dist",
            Op::ShiftStack { .. } => "shift_stack",
            Op::Chamfer { .. } => "chamfer",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation so that [`Graph::backward`] can replay it
/// in reverse. Node order is the execution order, hence a topological order.
#[derive(Debug)]
pub struct Graph<T> {
    mode: Mode,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bound: BTreeMap<ParamId, Var>,
    buffer_updates: Vec<(ParamId, Tensor<T>)>,
}

fn split_at_dim(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    let outer = shape[..dim].iter().product();
    let inner = shape[dim + 1..].iter().product();
    (outer, shape[dim], inner)
}

impl<T: Real> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: BTreeMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is recorded (used for inputs under test).
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a registry entry; repeated binds of the same id share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Param, store.requires_grad(id))?;
        self.bound.insert(id, v);
        Ok(v)
    }

    pub fn push_buffer_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.push((id, value));
    }

    /// Running-statistic updates produced by training-mode forward passes.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    // ---------------------------------------------------------------- convs

    fn conv_dims(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        geom: ConvGeom,
        spatial: usize,
        transposed: bool,
    ) -> Result<ConvDims> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        };
        if xs.len() != spatial + 2 || ws.len() != spatial + 2 {
            return Err(mismatch());
        }
        let mut input = [1; 3];
        let mut kernel = [1; 3];
        input[3 - spatial..].copy_from_slice(&xs[2..]);
        kernel[3 - spatial..].copy_from_slice(&ws[2..]);
        // transposed weights are [C_in, C_out, k...]
        let (c_x, c_w_in, c_w_out) = (xs[1], ws[1], ws[0]);
        if transposed {
            if c_x != c_w_out {
                return Err(mismatch());
            }
            let out = geom.transpose_out(input, kernel).ok_or_else(mismatch)?;
            let back = geom.conv_out(out, kernel).ok_or_else(mismatch)?;
            if back != input {
                return Err(mismatch());
            }
            Ok(ConvDims {
                n: xs[0],
                c_in: c_w_in,
                c_out: c_w_out,
                input: out,
                kernel,
                output: input,
                geom,
            })
        } else {
            if c_x != c_w_in {
                return Err(mismatch());
            }
            let output = geom.conv_out(input, kernel).ok_or_else(mismatch)?;
            Ok(ConvDims {
                n: xs[0],
                c_in: c_x,
                c_out: c_w_out,
                input,
                kernel,
                output,
                geom,
            })
        }
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![channels],
                });
            }
        }
        Ok(())
    }

    fn fill_bias(&self, out: &mut [T], b: Option<Var>, n: usize, c: usize, vol: usize) {
        if let Some(b) = b {
            let bv = self.value(b).data();
            for i in 0..n {
                for (k, &bk) in bv.iter().enumerate().take(c) {
                    out[(i * c + k) * vol..][..vol].iter_mut().for_each(|o| *o = bk);
                }
            }
        }
    }

    fn conv_nd(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        spatial: usize,
    ) -> Result<Var> {
        let dims = self.conv_dims(op, x, w, geom, spatial, false)?;
        self.check_bias(op, b, dims.c_out)?;
        let vol: usize = dims.output.iter().product();
        let mut out = vec![T::zero(); dims.n * dims.c_out * vol];
        self.fill_bias(&mut out, b, dims.n, dims.c_out, vol);
        conv::forward(&dims, self.value(x).data(), self.value(w).data(), &mut out);
        let mut shape = vec![dims.n, dims.c_out];
        shape.extend_from_slice(&dims.output[3 - spatial..]);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(&shape, out)?, Op::Conv { x, w, b, dims }, needs)
    }

    fn conv_transpose_nd(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        spatial: usize,
    ) -> Result<Var> {
        let dims = self.conv_dims(op, x, w, geom, spatial, true)?;
        self.check_bias(op, b, dims.c_in)?;
        let vol: usize = dims.input.iter().product();
        let mut out = vec![T::zero(); dims.n * dims.c_in * vol];
        self.fill_bias(&mut out, b, dims.n, dims.c_in, vol);
        conv::backward_input(&dims, self.value(x).data(), self.value(w).data(), &mut out);
        let mut shape = vec![dims.n, dims.c_in];
        shape.extend_from_slice(&dims.input[3 - spatial..]);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            Tensor::new(&shape, out)?,
            Op::ConvTranspose { x, w, b, dims },
            needs,
        )
    }

    /// `x[N,C,H,W] * w[K,C,kh,kw] + b[K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.conv_nd("conv2d", x, w, b, ConvGeom::new2d(stride, pad), 2)
    }

    /// Transposed 2-D convolution, weights `[C_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_transpose_nd("conv_transpose2d", x, w, b, ConvGeom::new2d(stride, pad), 2)
    }

    /// `x[N,C,D,H,W] * w[K,C,kd,kh,kw] + b[K]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.conv_nd("conv3d", x, w, b, ConvGeom::new3d(stride, pad), 3)
    }

    /// Transposed 3-D convolution, weights `[C_in, C_out, kd, kh, kw]`.
    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_transpose_nd("conv_transpose3d", x, w, b, ConvGeom::new3d(stride, pad), 3)
    }

    // ------------------------------------------------------------ batch norm

    /// Batch normalisation over dim 1. In training mode returns the updated
    /// running statistics `(mean, var)` alongside the output.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        momentum: f64,
        eps: f64,
    ) -> Result<(Var, Option<(Tensor<T>, Tensor<T>)>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::invalid(format!("batch_norm needs rank >= 2, got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for t in [
            self.shape(gamma),
            self.shape(beta),
            running_mean.shape(),
            running_var.shape(),
        ] {
            if t != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    lhs: xs.clone(),
                    rhs: t.to_vec(),
                });
            }
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let count = n * inner;
        let eps_t = T::lit(eps);
        let mut out = vec![T::zero(); xd.len()];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let train = self.mode == Mode::Train;
        let mut new_stats = None;
        if train {
            let mut means = vec![T::zero(); c];
            let mut vars = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    s += xd[(i * c + ch) * inner..][..inner].iter().copied().sum::<T>();
                }
                let mean = s / T::lit(count as f64);
                let mut v = T::zero();
                for i in 0..n {
                    for &xv in &xd[(i * c + ch) * inner..][..inner] {
                        let dlt = xv - mean;
                        v += dlt * dlt;
                    }
                }
                let var = v / T::lit(count as f64);
                means[ch] = mean;
                vars[ch] = var;
                inv_std[ch] = T::one() / (var + eps_t).sqrt();
            }
            let m = T::lit(momentum);
            let unbias = if count > 1 {
                T::lit(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            let rm = Tensor::from_fn(&[c], |ch| {
                (T::one() - m) * running_mean.data()[ch] + m * means[ch]
            });
            let rv = Tensor::from_fn(&[c], |ch| {
                (T::one() - m) * running_var.data()[ch] + m * vars[ch] * unbias
            });
            new_stats = Some((rm, rv));
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * inner;
                    for j in base..base + inner {
                        let h = (xd[j] - means[ch]) * inv_std[ch];
                        xhat[j] = h;
                        out[j] = gd[ch] * h + bd[ch];
                    }
                }
            }
        } else {
            for ch in 0..c {
                inv_std[ch] = T::one() / (running_var.data()[ch] + eps_t).sqrt();
            }
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * inner;
                    let mean = running_mean.data()[ch];
                    for j in base..base + inner {
                        let h = (xd[j] - mean) * inv_std[ch];
                        xhat[j] = h;
                        out[j] = gd[ch] * h + bd[ch];
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            Tensor::new(&xs, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            needs,
        )?;
        Ok((v, new_stats))
    }

    // ------------------------------------------------------------- pointwise

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| v.max(T::zero())).collect())?;
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape(),
            t.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect(),
        )?;
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid(x), needs)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        let out = Tensor::new(
            ta.shape(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, o) = (T::lit(scale), T::lit(shift));
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| s * v + o).collect())?;
        let needs = self.needs(x);
        self.push(out, Op::Affine { x, scale: s }, needs)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| v * v).collect())?;
        let needs = self.needs(x);
        self.push(out, Op::Square(x), needs)
    }

    /// Natural log of `max(x, eps)`; the gradient vanishes where clipping applies.
    pub fn log(&mut self, x: Var, eps: f64) -> Result<Var> {
        let e = T::lit(eps);
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| v.max(e).ln()).collect())?;
        let needs = self.needs(x);
        self.push(out, Op::Log { x, eps: e }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        let needs = self.needs(x);
        self.push(Tensor::scalar(m), Op::Mean(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    // ------------------------------------------------------------- structure

    /// `x[N, in] @ w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, inp, outp) = (xs[0], xs[1], ws[0]);
        self.check_bias("linear", b, outp)?;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); n * outp];
        T::gemm(n, inp, outp, xd, (inp, 1), wd, (1, inp), T::zero(), &mut out, outp);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for i in 0..n {
                for o in 0..outp {
                    out[i * outp + o] += bd[o];
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(&[n, outp], out)?, Op::Linear { x, w, b }, needs)
    }

    pub fn concat(&mut self, inputs: &[Var], dim: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let s0 = self.shape(first).to_vec();
        if dim >= s0.len() {
            return Err(Error::invalid(format!("concat dim {dim} out of range for {s0:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(i, (a, b))| i == dim || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: s0.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[dim];
        }
        let mut shape = s0.clone();
        shape[dim] = total;
        let (outer, _, inner) = split_at_dim(&s0, dim);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[dim] * inner;
                out.extend_from_slice(&t.data()[o * block..][..block]);
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                dim,
            },
            needs,
        )
    }

    /// Contiguous range `[start, start + len)` along `dim`.
    pub fn slice(&mut self, x: Var, dim: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if dim >= s.len() || len == 0 || start + len > s[dim] {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) of dim {dim} out of range for {s:?}",
                start + len
            )));
        }
        let (outer, extent, inner) = split_at_dim(&s, dim);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * extent + start) * inner..][..len * inner]);
        }
        let mut shape = s;
        shape[dim] = len;
        let needs = self.needs(x);
        self.push(Tensor::new(&shape, out)?, Op::Slice { x, dim, start }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x);
        self.push(t, Op::Reshape(x), needs)
    }

    /// Minimum along `dim` (the dimension is removed). The gradient flows to
    /// the arg-min only, ties resolved to the lowest index.
    pub fn min_reduce(&mut self, x: Var, dim: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if dim >= s.len() {
            return Err(Error::invalid(format!("min_reduce dim {dim} out of range for {s:?}")));
        }
        let (outer, extent, inner) = split_at_dim(&s, dim);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmin = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * extent * inner + i;
                for e in 1..extent {
                    let j = (o * extent + e) * inner + i;
                    if xd[j] < xd[best] {
                        best = j;
                    }
                }
                out.push(xd[best]);
                argmin.push(best);
            }
        }
        let mut shape: Vec<usize> = s
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != dim)
            .map(|(_, &v)| v)
            .collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let needs = self.needs(x);
        self.push(Tensor::new(&shape, out)?, Op::MinReduce { x, argmin }, needs)
    }

    /// Reflect-pads the bottom and right edges of an NCHW tensor.
    pub fn reflect_pad2d(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || bottom >= s[2] || right >= s[3] {
            return Err(Error::invalid(format!(
                "reflect padding ({bottom}, {right}) not possible for {s:?}"
            )));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ph, pw) = (h + bottom, w + right);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(nc * ph * pw);
        for p in 0..nc {
            for y in 0..ph {
                let sy = reflect(y, h);
                for xx in 0..pw {
                    out.push(xd[(p * h + sy) * w + reflect(xx, w)]);
                }
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(&[s[0], s[1], ph, pw], out)?,
            Op::ReflectPad2d { x },
            needs,
        )
    }

    /// Keeps the top-left `h x w` window of an NCHW tensor.
    pub fn crop2d(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || h == 0 || w == 0 || h > s[2] || w > s[3] {
            return Err(Error::invalid(format!("crop to {h}x{w} not possible for {s:?}")));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(s[0] * s[1] * h * w);
        for p in 0..s[0] * s[1] {
            for y in 0..h {
                out.extend_from_slice(&xd[(p * s[2] + y) * s[3]..][..w]);
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(&[s[0], s[1], h, w], out)?, Op::Crop2d { x }, needs)
    }

    /// Stereo cost volume from two `[N, C, H, W]` maps:
    /// `out[n, c, d, y, x] = left[n, c, y, x]` for `c < C` and
    /// `right[n, c - C, y, x - d * shift]` (zero off the image) otherwise,
    /// for `d` in `0..levels`. Output shape `[N, 2C, levels, H, W]`.
    pub fn shift_stack(&mut self, left: Var, right: Var, levels: usize, shift: usize) -> Result<Var> {
        let s = self.shape(left).to_vec();
        if s.len() != 4 || self.shape(right) != s.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "shift_stack",
                lhs: s,
                rhs: self.shape(right).to_vec(),
            });
        }
        if levels == 0 || shift == 0 {
            return Err(Error::invalid("shift_stack needs levels >= 1 and shift >= 1"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let ld = self.value(left).data();
        let rd = self.value(right).data();
        let mut out = vec![T::zero(); n * 2 * c * levels * plane];
        for b in 0..n {
            for ch in 0..2 * c {
                for d in 0..levels {
                    let dst = &mut out[((b * 2 * c + ch) * levels + d) * plane..][..plane];
                    if ch < c {
                        dst.copy_from_slice(&ld[(b * c + ch) * plane..][..plane]);
                        continue;
                    }
                    let off = d * shift;
                    if off >= w {
                        continue;
                    }
                    let src = &rd[(b * c + ch - c) * plane..][..plane];
                    for y in 0..h {
                        dst[y * w + off..(y + 1) * w].copy_from_slice(&src[y * w..y * w + w - off]);
                    }
                }
            }
        }
        let needs = self.needs(left) || self.needs(right);
        self.push(
            Tensor::new(&[n, 2 * c, levels, h, w], out)?,
            Op::ShiftStack { left, right, shift },
            needs,
        )
    }

    /// `out[i, j] = |a_i - b_j|^2` for `a[n, k]`, `b[m, k]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "pairwise_sq_dist",
                lhs: sa,
                rhs: sb,
            });
        }
        let (n, m, k) = (sa[0], sb[0], sa[1]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let mut d = T::zero();
                for c in 0..k {
                    let t = ad[i * k + c] - bd[j * k + c];
                    d += t * t;
                }
                out.push(d);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(&[n, m], out)?, Op::PairwiseSqDist { a, b }, needs)
    }

    /// Batch-mean Chamfer distance between predictions `pred[N, n_p, 3]` and
    /// constant target clouds (`targets[i]` is `[n_gt_i, 3]`). Gradients flow
    /// to the predictions through the nearest-neighbour assignments.
    pub fn chamfer(&mut self, pred: Var, targets: Vec<Tensor<T>>) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if ps.len() != 3 || ps[2] != 3 || ps[0] != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "chamfer",
                lhs: ps,
                rhs: vec![targets.len(), 0, 3],
            });
        }
        let (n, np) = (ps[0], ps[1]);
        let pd = self.value(pred).data();
        let mut total = T::zero();
        let mut pred_nn = Vec::with_capacity(n);
        let mut gt_nn = Vec::with_capacity(n);
        for (i, t) in targets.iter().enumerate() {
            if t.rank() != 2 || t.shape()[1] != 3 {
                return Err(Error::invalid(format!("chamfer target shape {:?}", t.shape())));
            }
            let p = &pd[i * np * 3..][..np * 3];
            let g = t.data();
            let to_pred = nearest::nearest_all(g, p);
            let to_gt = nearest::nearest_all(p, g);
            let ngt = t.shape()[0];
            let a = to_pred.iter().map(|&(_, d)| d).sum::<T>() / T::lit(ngt as f64);
            let b = to_gt.iter().map(|&(_, d)| d).sum::<T>() / T::lit(np as f64);
            total += a + b;
            gt_nn.push(to_pred.into_iter().map(|(j, _)| j).collect());
            pred_nn.push(to_gt.into_iter().map(|(j, _)| j).collect());
        }
        let value = Tensor::scalar(total / T::lit(n as f64));
        let needs = self.needs(pred);
        self.push(
            value,
            Op::Chamfer {
                pred,
                targets,
                pred_nn,
                gt_nn,
            },
            needs,
        )
    }

    // -------------------------------------------------------------- backward

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if gy.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    self.nodes[i].op.name()
                )));
            }
            self.backward_node(i, &gy);
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, gy: &[T]) {
        let Graph { nodes, grads, .. } = self;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv { x, w, b, dims } => {
                acc(*x, &mut |dx| conv::backward_input(dims, gy, val(*w), dx));
                acc(*w, &mut |dw| conv::backward_weight(dims, val(*x), gy, dw));
                if let Some(b) = b {
                    let vol: usize = dims.output.iter().product();
                    acc(*b, &mut |db| bias_grad(gy, dims.n, dims.c_out, vol, db));
                }
            }
            Op::ConvTranspose { x, w, b, dims } => {
                acc(*x, &mut |dx| conv::forward(dims, gy, val(*w), dx));
                acc(*w, &mut |dw| conv::backward_weight(dims, gy, val(*x), dw));
                if let Some(b) = b {
                    let vol: usize = dims.input.iter().product();
                    acc(*b, &mut |db| bias_grad(gy, dims.n, dims.c_in, vol, db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = nodes[x.0].value.shape();
                let (n, c) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let gd = val(*gamma);
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for bi in 0..n {
                    for ch in 0..c {
                        let base = (bi * c + ch) * inner;
                        for j in base..base + inner {
                            dg[ch] += gy[j] * xhat[j];
                            db[ch] += gy[j];
                        }
                    }
                }
                acc(*x, &mut |dx| {
                    let m = T::lit((n * inner) as f64);
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * inner;
                            for j in base..base + inner {
                                if *train {
                                    // dx = g*istd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                                    dx[j] += gd[ch] * inv_std[ch] / m
                                        * (m * gy[j] - db[ch] - xhat[j] * dg[ch]);
                                } else {
                                    dx[j] += gd[ch] * inv_std[ch] * gy[j];
                                }
                            }
                        }
                    }
                });
                acc(*gamma, &mut |d| add_into(d, &dg));
                acc(*beta, &mut |d| add_into(d, &db));
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, &g), &v) in dx.iter_mut().zip(gy).zip(xv) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                acc(*x, &mut |dx| {
                    for ((d, &g), &y) in dx.iter_mut().zip(gy).zip(yv) {
                        *d += g * y * (T::one() - y);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (n, inp) = (xs[0], xs[1]);
                let outp = nodes[w.0].value.shape()[0];
                let wd = val(*w);
                let xd = val(*x);
                acc(*x, &mut |dx| T::gemm(n, outp, inp, gy, (outp, 1), wd, (inp, 1), T::one(), dx, inp));
                acc(*w, &mut |dw| T::gemm(outp, n, inp, gy, (1, outp), xd, (inp, 1), T::one(), dw, inp));
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for r in 0..n {
                            add_into(db, &gy[r * outp..][..outp]);
                        }
                    });
                }
            }
            Op::Concat { inputs, dim } => {
                let s = node.value.shape();
                let (outer, total, inner) = split_at_dim(s, *dim);
                let mut offset = 0;
                for &v in inputs {
                    let ext = nodes[v.0].value.shape()[*dim];
                    acc(v, &mut |dv| {
                        for o in 0..outer {
                            add_into(
                                &mut dv[o * ext * inner..][..ext * inner],
                                &gy[(o * total + offset) * inner..][..ext * inner],
                            );
                        }
                    });
                    offset += ext;
                }
            }
            Op::Slice { x, dim, start } => {
                let (outer, extent, inner) = split_at_dim(nodes[x.0].value.shape(), *dim);
                let len = node.value.shape()[*dim];
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        add_into(
                            &mut dx[(o * extent + start) * inner..][..len * inner],
                            &gy[o * len * inner..][..len * inner],
                        );
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, gy)),
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, gy));
                acc(*b, &mut |d| add_into(d, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, gy));
                acc(*b, &mut |d| d.iter_mut().zip(gy).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, &g), &o) in d.iter_mut().zip(gy).zip(bv) {
                        *d += g * o;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &g), &o) in d.iter_mut().zip(gy).zip(av) {
                        *d += g * o;
                    }
                });
            }
            Op::Affine { x, scale } => {
                acc(*x, &mut |d| d.iter_mut().zip(gy).for_each(|(d, &g)| *d += g * *scale));
            }
            Op::Square(x) => {
                let xv = val(*x);
                acc(*x, &mut |d| {
                    for ((d, &g), &v) in d.iter_mut().zip(gy).zip(xv) {
                        *d += g * (v + v);
                    }
                });
            }
            Op::Mean(x) => {
                let g = gy[0] / T::lit(nodes[x.0].value.len() as f64);
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g));
            }
            Op::Sum(x) => {
                let g = gy[0];
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g));
            }
            Op::Log { x, eps } => {
                let xv = val(*x);
                acc(*x, &mut |d| {
                    for ((d, &g), &v) in d.iter_mut().zip(gy).zip(xv) {
                        if v > *eps {
                            *d += g / v;
                        }
                    }
                });
            }
            Op::MinReduce { x, argmin } => {
                acc(*x, &mut |d| {
                    for (&j, &g) in argmin.iter().zip(gy) {
                        d[j] += g;
                    }
                });
            }
            Op::ReflectPad2d { x } => {
                let s = nodes[x.0].value.shape();
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let os = node.value.shape();
                let (ph, pw) = (os[2], os[3]);
                acc(*x, &mut |d| {
                    for p in 0..nc {
                        for y in 0..ph {
                            let sy = reflect(y, h);
                            for xx in 0..pw {
                                d[(p * h + sy) * w + reflect(xx, w)] += gy[(p * ph + y) * pw + xx];
                            }
                        }
                    }
                });
            }
            Op::Crop2d { x } => {
                let s = nodes[x.0].value.shape();
                let os = node.value.shape();
                let (h, w) = (os[2], os[3]);
                acc(*x, &mut |d| {
                    for p in 0..s[0] * s[1] {
                        for y in 0..h {
                            add_into(&mut d[(p * s[2] + y) * s[3]..][..w], &gy[(p * h + y) * w..][..w]);
                        }
                    }
                });
            }
            Op::ShiftStack { left, right, shift } => {
                let s = nodes[left.0].value.shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let levels = node.value.shape()[2];
                let plane = h * w;
                acc(*left, &mut |dl| {
                    for b in 0..n {
                        for ch in 0..c {
                            let dst = &mut dl[(b * c + ch) * plane..][..plane];
                            for d in 0..levels {
                                add_into(dst, &gy[((b * 2 * c + ch) * levels + d) * plane..][..plane]);
                            }
                        }
                    }
                });
                acc(*right, &mut |dr| {
                    for b in 0..n {
                        for ch in 0..c {
                            let dst = &mut dr[(b * c + ch) * plane..][..plane];
                            for d in 0..levels {
                                let off = d * shift;
                                if off >= w {
                                    continue;
                                }
                                let src = &gy[((b * 2 * c + c + ch) * levels + d) * plane..][..plane];
                                for y in 0..h {
                                    add_into(&mut dst[y * w..y * w + w - off], &src[y * w + off..(y + 1) * w]);
                                }
                            }
                        }
                    }
                });
            }
            Op::PairwiseSqDist { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                let k = nodes[a.0].value.shape()[1];
                let n = nodes[a.0].value.shape()[0];
                let m = nodes[b.0].value.shape()[0];
                let two = T::lit(2.0);
                acc(*a, &mut |d| {
                    for i in 0..n {
                        for j in 0..m {
                            let g = gy[i * m + j] * two;
                            for c in 0..k {
                                d[i * k + c] += g * (ad[i * k + c] - bd[j * k + c]);
                            }
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..n {
                        for j in 0..m {
                            let g = gy[i * m + j] * two;
                            for c in 0..k {
                                d[j * k + c] += g * (bd[j * k + c] - ad[i * k + c]);
                            }
                        }
                    }
                });
            }
            Op::Chamfer {
                pred,
                targets,
                pred_nn,
                gt_nn,
            } => {
                let ps = nodes[pred.0].value.shape();
                let (n, np) = (ps[0], ps[1]);
                let pd = val(*pred);
                let scale = gy[0] / T::lit(n as f64);
                let two = T::lit(2.0);
                acc(*pred, &mut |d| {
                    for (bi, t) in targets.iter().enumerate() {
                        let g = t.data();
                        let ngt = t.shape()[0];
                        let p = &pd[bi * np * 3..][..np * 3];
                        let dp = &mut d[bi * np * 3..][..np * 3];
                        let wg = scale * two / T::lit(ngt as f64);
                        for (gi, &pj) in gt_nn[bi].iter().enumerate() {
                            for c in 0..3 {
                                dp[pj * 3 + c] += wg * (p[pj * 3 + c] - g[gi * 3 + c]);
                            }
                        }
                        let wp = scale * two / T::lit(np as f64);
                        for (pi, &gj) in pred_nn[bi].iter().enumerate() {
                            for c in 0..3 {
                                dp[pi * 3 + c] += wp * (p[pi * 3 + c] - g[gj * 3 + c]);
                            }
                        }
                    }
                });
            }
        }
    }

    /// Adds parameter gradients from the last backward sweep into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.bound {
            if let Some(g) = self.grad(v) {
                add_into(store.grad_mut(id), g);
            }
        }
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&id, &v)| (id, v))
    }
}

#[inline]
fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn bias_grad<T: Real>(gy: &[T], n: usize, c: usize, vol: usize, db: &mut [T]) {
    for i in 0..n {
        for (k, d) in db.iter_mut().enumerate().take(c) {
            *d += gy[(i * c + k) * vol..][..vol].iter().copied().sum::<T>();
        }
    }
}
