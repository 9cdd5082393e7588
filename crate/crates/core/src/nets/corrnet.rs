//! Cost volume and the 3-D CNN that summarises it.

use super::config::{ScaleConfig, TAP_DOWNSAMPLE};
use super::layers::{Builder, ConvBn, ConvKind, ConvSpec, Linear};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::{Error, Result};

/// Stacks left features against right features shifted by `d * shift` for
/// every feature-level disparity `d` up to `round(max_disp / 4) / shift`.
/// Output `[N, 2C, D_f, H_f, W_f]`.
pub fn build_cost_volume<T: Real>(g: &mut Graph<T>, left: Var, right: Var, max_disp: usize, shift: usize) -> Result<Var> {
    let feature_disp = (max_disp as f64 / TAP_DOWNSAMPLE as f64).round() as usize;
    if feature_disp < 1 || shift < 1 {
        return Err(Error::invalid(format!(
            "cost volume needs a feature-level disparity of at least 1 (max_disp {max_disp}, shift {shift})"
        )));
    }
    g.shift_stack(left, right, feature_disp / shift + 1, shift)
}

#[derive(Clone, Debug)]
pub struct CorrNet {
    stages: Vec<ConvBn>,
    reduce3: ConvBn,
    reduce2: ConvBn,
    fc: Linear,
    levels: usize,
    max_disp: usize,
    shift: usize,
}

impl CorrNet {
    /// `tap_channels` and `tap_size` describe one view's encoder tap.
    pub fn new<T: Real>(
        b: &mut Builder<'_, T>,
        prefix: &str,
        cfg: &ScaleConfig,
        tap_channels: usize,
        tap_size: (usize, usize),
    ) -> Result<Self> {
        let cc = cfg.corr_channels;
        let levels = cfg.disp_levels();
        let k3 = ConvKind::Conv3d;
        let mut stages = vec![ConvBn::new(b, &format!("{prefix}.conv0"), k3, ConvSpec::same(2 * tap_channels, cc, 1, 1))?];
        for i in 1..9 {
            stages.push(ConvBn::new(b, &format!("{prefix}.conv{i}"), k3, ConvSpec::same(cc, cc, 3, 1))?);
        }
        let reduce3 = ConvBn::new(b, &format!("{prefix}.reduce3d"), k3, ConvSpec::same(cc, 1, 1, 1))?;
        let reduce2 = ConvBn::new(b, &format!("{prefix}.reduce2d"), ConvKind::Conv2d, ConvSpec::same(levels, 1, 1, 1))?;
        let fc = Linear::new(b, &format!("{prefix}.fc"), tap_size.0 * tap_size.1, cfg.corr_len)?;
        Ok(Self {
            stages,
            reduce3,
            reduce2,
            fc,
            levels,
            max_disp: cfg.max_disp,
            shift: cfg.shift,
        })
    }

    /// Cost volume `[N, 2C, D_f, H_f, W_f]` to the `[N, G]` correspondence vector.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, cv: Var) -> Result<Var> {
        let s = g.shape(cv).to_vec();
        if s.len() != 5 || s[2] != self.levels {
            return Err(Error::invalid(format!(
                "cost volume {s:?} does not have {} disparity levels",
                self.levels
            )));
        }
        let mut y = cv;
        for st in &self.stages {
            y = st.forward(g, store, y)?;
        }
        let y = self.reduce3.forward(g, store, y)?;
        let y = g.reshape(y, &[s[0], s[2], s[3], s[4]])?;
        let y = self.reduce2.forward(g, store, y)?;
        self.fc.forward(g, store, y)
    }

    /// Builds the cost volume from both taps and runs the network.
    pub fn forward_taps<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, left: Var, right: Var) -> Result<Var> {
        let cv = build_cost_volume(g, left, right, self.max_disp, self.shift)?;
        self.forward(g, store, cv)
    }
}
