//! Full Stereo2Voxel / Stereo2Point network.

use super::config::{Ablation, ScaleConfig, Task};
use super::corrnet::CorrNet;
use super::dispnet::DispNetB;
use super::layers::Builder;
use super::recnet::{PointDecoder, RecEncoder, VolumeDecoder};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::{Error, Result};

pub const DISPNET_PREFIX: &str = "dispnet";
pub const ENCODER_PREFIX: &str = "encoder";
pub const CORRNET_PREFIX: &str = "corrnet";
pub const VOLUME_PREFIX: &str = "volume_decoder";
pub const POINT_PREFIX: &str = "point_decoder";

#[derive(Clone, Debug)]
pub enum Decoder {
    Volume(VolumeDecoder),
    Point(PointDecoder),
}

#[derive(Clone, Debug)]
pub struct StereoNet {
    pub cfg: ScaleConfig,
    pub task: Task,
    pub ablation: Ablation,
    pub dispnet: Option<DispNetB>,
    pub encoder: RecEncoder,
    pub corrnet: Option<CorrNet>,
    pub decoder: Decoder,
}

/// Output of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    /// Disparities that fed the encoder (estimated or injected).
    pub disp: Option<(Var, Var)>,
    /// `[N, R, R, R]` probabilities or `[N, n_p, 3]` points.
    pub output: Var,
}

impl StereoNet {
    /// Registers every parameter in `store`; initial values depend only on
    /// `seed` and each parameter's name.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        cfg: ScaleConfig,
        task: Task,
        ablation: Ablation,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder::new(store, seed);
        let dispnet = if ablation.no_disp {
            None
        } else {
            Some(DispNetB::new(&mut b, DISPNET_PREFIX, &cfg)?)
        };
        let encoder = RecEncoder::new(&mut b, ENCODER_PREFIX, &cfg, !ablation.no_disp)?;
        let corrnet = if ablation.no_corr {
            None
        } else {
            let tap_channels = 4 * cfg.base_channels;
            Some(CorrNet::new(&mut b, CORRNET_PREFIX, &cfg, tap_channels, encoder.tap_size)?)
        };
        let z_len = 2 * cfg.feature_len + if ablation.no_corr { 0 } else { cfg.corr_len };
        let decoder = match task {
            Task::Volume => Decoder::Volume(VolumeDecoder::new(&mut b, VOLUME_PREFIX, &cfg, z_len)?),
            Task::Point => Decoder::Point(PointDecoder::new(&mut b, POINT_PREFIX, &cfg, z_len)?),
        };
        Ok(Self {
            cfg,
            task,
            ablation,
            dispnet,
            encoder,
            corrnet,
            decoder,
        })
    }

    /// Runs the pipeline on `[N, 3, H, W]` views. `disp` injects external
    /// left/right disparities `[N, 1, H, W]` in place of DispNet-B; it is
    /// ignored when the disparity branch is ablated.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        left: Var,
        right: Var,
        disp: Option<(Var, Var)>,
    ) -> Result<Prediction> {
        let s = g.shape(left).to_vec();
        if s.len() != 4 || s[2] != self.cfg.input_h || s[3] != self.cfg.input_w || g.shape(right) != s.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "stereo_forward",
                lhs: s,
                rhs: g.shape(right).to_vec(),
            });
        }
        let disp = match (&self.dispnet, disp) {
            _ if self.ablation.no_disp => None,
            (_, Some(d)) => Some(d),
            (Some(net), None) => Some(net.forward(g, store, left, right)?),
            (None, None) => unreachable!("dispnet exists unless ablated"),
        };
        let n = s[0];
        let views = g.concat(&[left, right], 0)?;
        let disps = match disp {
            Some((dl, dr)) => Some(g.concat(&[dl, dr], 0)?),
            None => None,
        };
        let (f, t) = self.encoder.forward(g, store, views, disps)?;
        let (fl, fr) = (g.slice(f, 0, 0, n)?, g.slice(f, 0, n, n)?);
        let (tl, tr) = (g.slice(t, 0, 0, n)?, g.slice(t, 0, n, n)?);
        let z = match &self.corrnet {
            Some(c) => {
                let corr = c.forward_taps(g, store, tl, tr)?;
                g.concat(&[fl, fr, corr], 1)?
            }
            None => g.concat(&[fl, fr], 1)?,
        };
        let output = match &self.decoder {
            Decoder::Volume(d) => d.forward(g, store, z)?,
            Decoder::Point(d) => d.forward(g, store, z)?,
        };
        Ok(Prediction { disp, output })
    }

    /// Key=value description stored in checkpoint headers.
    pub fn header(&self) -> Vec<(String, String)> {
        let mut h = vec![
            ("task".to_string(), self.task.to_string()),
            ("no_disp".to_string(), self.ablation.no_disp.to_string()),
            ("no_corr".to_string(), self.ablation.no_corr.to_string()),
        ];
        h.extend(self.cfg.header());
        h
    }
}

/// Registers a standalone DispNet-B under [`DISPNET_PREFIX`].
pub fn build_dispnet<T: Real>(store: &mut ParamStore<T>, cfg: &ScaleConfig, seed: u64) -> Result<DispNetB> {
    cfg.validate()?;
    DispNetB::new(&mut Builder::new(store, seed), DISPNET_PREFIX, cfg)
}
