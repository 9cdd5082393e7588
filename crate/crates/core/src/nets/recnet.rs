//! RecNet: the shared residual encoder and the two decoders.

use super::config::ScaleConfig;
use super::layers::{Builder, Conv, ConvBn, ConvKind, ConvSpec, FireModule, Linear, ResidualBlock};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::{Error, Result};

const STRIDES: [usize; 6] = [1, 2, 2, 2, 2, 2];
const WIDTHS: [usize; 6] = [1, 2, 4, 8, 8, 8];
/// Blocks run before the cost-volume tap.
const TAP_BLOCKS: usize = 3;

/// Output extent of a stride-`s`, pad-`k/2` convolution with odd `k`.
fn strided(n: usize, s: usize) -> usize {
    (n - 1) / s + 1
}

#[derive(Clone, Debug)]
pub struct RecEncoder {
    pub in_channels: usize,
    max_disp: f64,
    blocks: Vec<ResidualBlock>,
    fc: Linear,
    /// Spatial size of the tap and of the last block's output.
    pub tap_size: (usize, usize),
    pub out_size: (usize, usize),
}

impl RecEncoder {
    /// `with_disp` selects the RGB + disparity (4-channel) input.
    pub fn new<T: Real>(b: &mut Builder<'_, T>, prefix: &str, cfg: &ScaleConfig, with_disp: bool) -> Result<Self> {
        let c = cfg.base_channels;
        let in_channels = if with_disp { 4 } else { 3 };
        let mut blocks = Vec::new();
        let mut c_in = in_channels;
        let (mut h, mut w) = (cfg.input_h, cfg.input_w);
        let mut tap_size = (h, w);
        for (i, (&s, &m)) in STRIDES.iter().zip(&WIDTHS).enumerate() {
            blocks.push(ResidualBlock::new(b, &format!("{prefix}.block{i}"), c_in, m * c, s)?);
            c_in = m * c;
            h = strided(h, s);
            w = strided(w, s);
            if i + 1 == TAP_BLOCKS {
                tap_size = (h, w);
            }
        }
        let fc = Linear::new(b, &format!("{prefix}.fc"), c_in * h * w, cfg.feature_len)?;
        Ok(Self {
            in_channels,
            max_disp: cfg.max_disp as f64,
            blocks,
            fc,
            tap_size,
            out_size: (h, w),
        })
    }

    /// Encodes one view. Returns the `[N, F]` feature vector and the
    /// post-activation output of the third residual block.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: Var,
        disp: Option<Var>,
    ) -> Result<(Var, Var)> {
        let s = g.shape(image).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::invalid(format!("encoder expects [N, 3, H, W], got {s:?}")));
        }
        let x = match (self.in_channels, disp) {
            (4, Some(d)) => {
                let ds = g.shape(d);
                if ds.len() != 4 || ds[0] != s[0] || ds[1] != 1 || ds[2..] != s[2..] {
                    return Err(Error::ShapeMismatch {
                        op: "recnet_encode",
                        lhs: s,
                        rhs: ds.to_vec(),
                    });
                }
                let dn = g.affine(d, 1.0 / self.max_disp, 0.0)?;
                g.concat(&[image, dn], 1)?
            }
            (4, None) => return Err(Error::invalid("encoder built with disparity input but none given")),
            _ => image,
        };
        let mut y = x;
        let mut tap = x;
        for (i, blk) in self.blocks.iter().enumerate() {
            y = blk.forward(g, store, y)?;
            if i + 1 == TAP_BLOCKS {
                tap = y;
            }
        }
        let f = self.fc.forward(g, store, y)?;
        Ok((f, tap))
    }
}

/// Nine transposed 3-D convolution stages from a `2³` seed to `R³`.
#[derive(Clone, Debug)]
pub struct VolumeDecoder {
    seed_channels: usize,
    proj: ConvBn,
    refine: Vec<ConvBn>,
    up: Vec<ConvBn>,
    out: Conv,
    pub res: usize,
}

impl VolumeDecoder {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, prefix: &str, cfg: &ScaleConfig, in_len: usize) -> Result<Self> {
        if !in_len.is_multiple_of(8) {
            return Err(Error::Config(format!("decoder input {in_len} does not fold into a 2^3 seed")));
        }
        let n_up = cfg.volume_upsamples()?;
        let c = cfg.base_channels;
        let seed_channels = in_len / 8;
        let t3 = ConvKind::Transpose3d;
        let mut width = 8 * c;
        let proj = ConvBn::new(b, &format!("{prefix}.proj"), t3, ConvSpec::same(seed_channels, width, 3, 1))?;
        let mut refine = Vec::new();
        for i in 0..8 - n_up {
            refine.push(ConvBn::new(b, &format!("{prefix}.refine{i}"), t3, ConvSpec::same(width, width, 3, 1))?.linear_out());
        }
        let mut up = Vec::new();
        for i in 0..n_up - 1 {
            let next = (width / 2).max(c / 2).max(1);
            up.push(ConvBn::new(b, &format!("{prefix}.up{i}"), t3, ConvSpec::up(width, next))?);
            width = next;
        }
        let out = Conv::new(b, &format!("{prefix}.out"), t3, ConvSpec::up(width, 1).with_bias())?;
        Ok(Self {
            seed_channels,
            proj,
            refine,
            up,
            out,
            res: cfg.volume_res,
        })
    }

    /// `z[N, L]` to occupancy probabilities `[N, R, R, R]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let n = g.shape(z)[0];
        let x = g.reshape(z, &[n, self.seed_channels, 2, 2, 2])?;
        let mut y = self.proj.forward(g, store, x)?;
        for r in &self.refine {
            let t = r.forward(g, store, y)?;
            let s = g.add(t, y)?;
            y = g.relu(s)?;
        }
        for u in &self.up {
            y = u.forward(g, store, y)?;
        }
        let logits = self.out.forward(g, store, y)?;
        let p = g.sigmoid(logits)?;
        g.reshape(p, &[n, self.res, self.res, self.res])
    }
}

/// Initial weight scale of the point head, so training starts from a
/// compact cloud near the origin.
pub const POINT_HEAD_GAIN: f64 = 0.01;

/// Eight Fire modules on a `4x4` seed map, then a linear layer to `n_p x 3`.
#[derive(Clone, Debug)]
pub struct PointDecoder {
    seed_channels: usize,
    fires: Vec<FireModule>,
    fc: Linear,
    n_points: usize,
}

impl PointDecoder {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, prefix: &str, cfg: &ScaleConfig, in_len: usize) -> Result<Self> {
        if !in_len.is_multiple_of(16) {
            return Err(Error::Config(format!("decoder input {in_len} does not fold into a 4x4 seed")));
        }
        let seed_channels = in_len / 16;
        let width = 4 * cfg.base_channels;
        let mut fires = Vec::new();
        let mut c_in = seed_channels;
        for i in 0..8 {
            fires.push(FireModule::new(b, &format!("{prefix}.fire{i}"), c_in, (width / 4).max(1), width / 2, width - width / 2)?);
            c_in = width;
        }
        let fc = Linear::with_gain(b, &format!("{prefix}.fc"), width * 16, cfg.n_points * 3, POINT_HEAD_GAIN)?;
        Ok(Self {
            seed_channels,
            fires,
            fc,
            n_points: cfg.n_points,
        })
    }

    /// `z[N, L]` to point coordinates `[N, n_p, 3]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let n = g.shape(z)[0];
        let mut y = g.reshape(z, &[n, self.seed_channels, 4, 4])?;
        for f in &self.fires {
            y = f.forward(g, store, y)?;
        }
        let p = self.fc.forward(g, store, y)?;
        g.reshape(p, &[n, self.n_points, 3])
    }
}
