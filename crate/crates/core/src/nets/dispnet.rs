//! Bidirectional disparity U-Net.

use super::config::ScaleConfig;
use super::layers::{Builder, Conv, ConvBn, ConvKind, ConvSpec};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::{Error, Result};

/// Initial bias of the disparity head, keeps the output ReLU active at start.
const HEAD_BIAS: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct DispNetB {
    stem: ConvBn,
    down: [ConvBn; 3],
    bottleneck: ConvBn,
    up: [ConvBn; 3],
    fuse: [ConvBn; 3],
    head: Conv,
}

impl DispNetB {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, prefix: &str, cfg: &ScaleConfig) -> Result<Self> {
        let c = cfg.base_channels;
        let n = |s: &str| format!("{prefix}.{s}");
        let k2 = ConvKind::Conv2d;
        let stem = ConvBn::new(b, &n("stem"), k2, ConvSpec::same(6, c, 3, 1))?;
        let widths = [c, 2 * c, 4 * c, 8 * c];
        let mut down = Vec::new();
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        for i in 0..3 {
            down.push(ConvBn::new(b, &n(&format!("down{i}")), k2, ConvSpec::same(widths[i], widths[i + 1], 3, 2))?);
        }
        let bottleneck = ConvBn::new(b, &n("bottleneck"), k2, ConvSpec::same(8 * c, 8 * c, 3, 1))?;
        for i in (0..3).rev() {
            let (hi, lo) = (widths[i + 1], widths[i]);
            up.push(ConvBn::new(b, &n(&format!("up{i}")), ConvKind::Transpose2d, ConvSpec::up(hi, lo))?);
            fuse.push(ConvBn::new(b, &n(&format!("fuse{i}")), k2, ConvSpec::same(2 * lo, lo, 3, 1))?);
        }
        let head = Conv::new(b, &n("head"), k2, ConvSpec::same(c, 2, 3, 1).with_bias())?;
        let head_b = head.b.expect("head has a bias");
        b.store.value_mut(head_b).data_mut().fill(T::lit(HEAD_BIAS));
        Ok(Self {
            stem,
            down: down.try_into().expect("three stages"),
            bottleneck,
            up: up.try_into().expect("three stages"),
            fuse: fuse.try_into().expect("three stages"),
            head,
        })
    }

    /// `left`, `right`: `[N, 3, H, W]`; returns left and right disparities,
    /// each `[N, 1, H, W]` and non-negative.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, left: Var, right: Var) -> Result<(Var, Var)> {
        let s = g.shape(left).to_vec();
        if s.len() != 4 || s[1] != 3 || g.shape(right) != s.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "dispnetb_forward",
                lhs: s,
                rhs: g.shape(right).to_vec(),
            });
        }
        let (h, w) = (s[2], s[3]);
        let x = g.concat(&[left, right], 1)?;
        let (ph, pw) = ((8 - h % 8) % 8, (8 - w % 8) % 8);
        let x = if ph + pw > 0 { g.reflect_pad2d(x, ph, pw)? } else { x };
        let mut skips = vec![self.stem.forward(g, store, x)?];
        for d in &self.down {
            let y = d.forward(g, store, *skips.last().expect("nonempty"))?;
            skips.push(y);
        }
        let mut y = self.bottleneck.forward(g, store, skips.pop().expect("nonempty"))?;
        for (u, f) in self.up.iter().zip(&self.fuse) {
            let up = u.forward(g, store, y)?;
            let cat = g.concat(&[up, skips.pop().expect("one skip per scale")], 1)?;
            y = f.forward(g, store, cat)?;
        }
        let out = self.head.forward(g, store, y)?;
        let out = g.relu(out)?;
        let out = if ph + pw > 0 { g.crop2d(out, h, w)? } else { out };
        let dl = g.slice(out, 1, 0, 1)?;
        let dr = g.slice(out, 1, 1, 1)?;
        Ok((dl, dr))
    }
}
