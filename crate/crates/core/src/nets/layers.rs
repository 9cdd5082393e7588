//! Parameterised building blocks. Layers store registry ids only; values
//! live in a [`ParamStore`] so one layer can be applied at several call
//! sites with shared weights.

use crate::autodiff::{fan_in_uniform, he_uniform, Graph, ParamId, ParamKind, ParamStore, Real, Tensor, Var};
use crate::rng::{label_seed, rng_from};
use crate::Result;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Registers parameters with initial values derived from `(seed, name)`.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub seed: u64,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self { store, seed }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.scaled_weight(name, shape, fan_in, 1.0)
    }

    /// He-uniform values multiplied by `gain`.
    pub fn scaled_weight(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> Result<ParamId> {
        let mut rng = rng_from(label_seed(self.seed, name));
        let mut v: Tensor<T> = he_uniform(shape, fan_in, &mut rng);
        if gain != 1.0 {
            v.data_mut().iter_mut().for_each(|x| *x *= T::lit(gain));
        }
        self.store.register(name, v, ParamKind::Trainable)
    }

    pub fn bias(&mut self, name: &str, n: usize, fan_in: usize) -> Result<ParamId> {
        let mut rng = rng_from(label_seed(self.seed, name));
        let v = fan_in_uniform(&[n], fan_in, &mut rng);
        self.store.register(name, v, ParamKind::Trainable)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], value: f64, kind: ParamKind) -> Result<ParamId> {
        self.store.register(name, Tensor::full(shape, T::lit(value)), kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv2d,
    Conv3d,
    Transpose2d,
    Transpose3d,
}

impl ConvKind {
    fn spatial(self) -> usize {
        match self {
            ConvKind::Conv2d | ConvKind::Transpose2d => 2,
            ConvKind::Conv3d | ConvKind::Transpose3d => 3,
        }
    }

    fn transposed(self) -> bool {
        matches!(self, ConvKind::Transpose2d | ConvKind::Transpose3d)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub kind: ConvKind,
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Size-preserving `k x k` convolution with stride `stride`.
    pub fn same(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self {
            c_in,
            c_out,
            k,
            stride,
            pad: k / 2,
            bias: false,
        }
    }

    /// Kernel 4, stride 2, pad 1: exactly doubles every spatial extent.
    pub fn up(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            k: 4,
            stride: 2,
            pad: 1,
            bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }
}

impl Conv {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, kind: ConvKind, s: ConvSpec) -> Result<Self> {
        let kvol = s.k.pow(kind.spatial() as u32);
        let mut shape = if kind.transposed() {
            vec![s.c_in, s.c_out]
        } else {
            vec![s.c_out, s.c_in]
        };
        shape.extend(std::iter::repeat_n(s.k, kind.spatial()));
        // fan-in of one output element
        let fan_in = if kind.transposed() {
            s.c_in * kvol / (s.stride.pow(kind.spatial() as u32))
        } else {
            s.c_in * kvol
        };
        let w = b.weight(&format!("{name}.w"), &shape, fan_in.max(1))?;
        let bias = if s.bias {
            Some(b.bias(&format!("{name}.b"), s.c_out, fan_in.max(1))?)
        } else {
            None
        };
        Ok(Self {
            kind,
            w,
            b: bias,
            stride: s.stride,
            pad: s.pad,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = self.b.map(|id| g.param(store, id)).transpose()?;
        match self.kind {
            ConvKind::Conv2d => g.conv2d(x, w, b, self.stride, self.pad),
            ConvKind::Conv3d => g.conv3d(x, w, b, self.stride, self.pad),
            ConvKind::Transpose2d => g.conv_transpose2d(x, w, b, self.stride, self.pad),
            ConvKind::Transpose3d => g.conv_transpose3d(x, w, b, self.stride, self.pad),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.filled(&format!("{name}.gamma"), &[c], 1.0, ParamKind::Trainable)?,
            beta: b.filled(&format!("{name}.beta"), &[c], 0.0, ParamKind::Trainable)?,
            mean: b.filled(&format!("{name}.running_mean"), &[c], 0.0, ParamKind::Buffer)?,
            var: b.filled(&format!("{name}.running_var"), &[c], 1.0, ParamKind::Buffer)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        let (y, stats) = g.batch_norm(
            x,
            gamma,
            beta,
            store.value(self.mean),
            store.value(self.var),
            BN_MOMENTUM,
            BN_EPS,
        )?;
        if let Some((m, v)) = stats {
            g.push_buffer_update(self.mean, m);
            g.push_buffer_update(self.var, v);
        }
        Ok(y)
    }
}

/// Convolution, batch norm and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, kind: ConvKind, s: ConvSpec) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(b, &format!("{name}.conv"), kind, ConvSpec { bias: false, ..s })?,
            bn: BatchNorm::new(b, &format!("{name}.bn"), s.c_out)?,
            relu: true,
        })
    }

    pub fn linear_out(mut self) -> Self {
        self.relu = false;
        self
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y)?;
        if self.relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, inp: usize, out: usize) -> Result<Self> {
        Self::with_gain(b, name, inp, out, 1.0)
    }

    /// Output head whose initial weights are scaled by `gain`.
    pub fn with_gain<T: Real>(b: &mut Builder<'_, T>, name: &str, inp: usize, out: usize, gain: f64) -> Result<Self> {
        Ok(Self {
            w: b.scaled_weight(&format!("{name}.w"), &[out, inp], inp, gain)?,
            b: b.bias(&format!("{name}.b"), out, inp)?,
        })
    }

    /// Flattens everything after the batch dimension first.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let x = if s.len() == 2 {
            x
        } else {
            g.reshape(x, &[s[0], s[1..].iter().product()])?
        };
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        g.linear(x, w, Some(b))
    }
}

/// Two 3x3 conv+BN stages with an additive skip, projected by a 1x1
/// convolution whenever the shape changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    pub proj: Option<Conv>,
}

impl ResidualBlock {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let first = ConvBn::new(b, &format!("{name}.a"), ConvKind::Conv2d, ConvSpec::same(c_in, c_out, 3, stride))?;
        let second =
            ConvBn::new(b, &format!("{name}.b"), ConvKind::Conv2d, ConvSpec::same(c_out, c_out, 3, 1))?.linear_out();
        let proj = if c_in != c_out || stride > 1 {
            let s = ConvSpec {
                c_in,
                c_out,
                k: 1,
                stride,
                pad: 0,
                bias: true,
            };
            Some(Conv::new(b, &format!("{name}.proj"), ConvKind::Conv2d, s)?)
        } else {
            None
        };
        Ok(Self { first, second, proj })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.first.forward(g, store, x)?;
        let y = self.second.forward(g, store, y)?;
        let skip = match &self.proj {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        let s = g.add(y, skip)?;
        g.relu(s)
    }
}

/// Squeeze 1x1 conv followed by parallel 1x1 and 3x3 expand convs whose
/// outputs are concatenated along channels. Every conv is followed by batch
/// normalisation and ReLU. When input and output widths agree the input is
/// added back (SqueezeNet's simple bypass).
#[derive(Clone, Debug)]
pub struct FireModule {
    pub squeeze: ConvBn,
    pub expand1: ConvBn,
    pub expand3: ConvBn,
    pub bypass: bool,
}

impl FireModule {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, c_in: usize, s: usize, e1: usize, e3: usize) -> Result<Self> {
        if s >= e1 + e3 {
            return Err(crate::Error::Config(format!(
                "fire module {name}: squeeze width {s} must be below expand width {}",
                e1 + e3
            )));
        }
        let conv = |b: &mut Builder<'_, T>, part: &str, c_in, c_out, k| {
            ConvBn::new(b, &format!("{name}.{part}"), ConvKind::Conv2d, ConvSpec::same(c_in, c_out, k, 1))
        };
        Ok(Self {
            squeeze: conv(b, "squeeze", c_in, s, 1)?,
            expand1: conv(b, "expand1", s, e1, 1)?,
            expand3: conv(b, "expand3", s, e3, 3)?,
            bypass: c_in == e1 + e3,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = self.squeeze.forward(g, store, x)?;
        let a = self.expand1.forward(g, store, s)?;
        let b = self.expand3.forward(g, store, s)?;
        let y = g.concat(&[a, b], 1)?;
        if self.bypass {
            g.add(y, x)
        } else {
            Ok(y)
        }
    }
}
