use std::path::Path;

use super::plan::TrainTask;
use crate::autodiff::{Checkpoint, ParamStore};
use crate::nets::{build_dispnet, Ablation, DispNetB, ScaleConfig, StereoNet, DISPNET_PREFIX};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum Network {
    Disp(DispNetB),
    Stereo(StereoNet),
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ScaleConfig,
    pub net: Network,
    pub store: ParamStore<f32>,
}

impl Model {
    pub fn new(cfg: ScaleConfig, task: TrainTask, ablation: Ablation, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = match task.recon() {
            None => Network::Disp(build_dispnet(&mut store, &cfg, seed)?),
            Some(t) => Network::Stereo(StereoNet::new(&mut store, cfg, t, ablation, seed)?),
        };
        Ok(Self { cfg, net, store })
    }

    pub fn task(&self) -> TrainTask {
        match &self.net {
            Network::Disp(_) => TrainTask::Disparity,
            Network::Stereo(n) => n.task.into(),
        }
    }

    pub fn ablation(&self) -> Ablation {
        match &self.net {
            Network::Disp(_) => Ablation::default(),
            Network::Stereo(n) => n.ablation,
        }
    }

    pub fn dispnet(&self) -> Option<&DispNetB> {
        match &self.net {
            Network::Disp(d) => Some(d),
            Network::Stereo(n) => n.dispnet.as_ref(),
        }
    }

    pub fn header(&self) -> Vec<(String, String)> {
        let ab = self.ablation();
        let mut h = vec![
            ("model.task".to_string(), self.task().to_string()),
            ("model.no_disp".to_string(), ab.no_disp.to_string()),
            ("model.no_corr".to_string(), ab.no_corr.to_string()),
        ];
        h.extend(self.cfg.header());
        h
    }

    /// Architecture header plus every weight and buffer.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            header: self.header(),
            records: Vec::new(),
        };
        ck.push_store(&self.store, "");
        ck
    }

    /// Rebuilds the architecture described by the header and loads its state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.header_value(k)
                .ok_or_else(|| Error::Config(format!("checkpoint header lacks `{k}`")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{k}`")))
        };
        let task: TrainTask = get("model.task")?.parse()?;
        let ablation = Ablation {
            no_disp: flag("model.no_disp")?,
            no_corr: flag("model.no_corr")?,
        };
        let cfg = ScaleConfig::from_header(&ck.header)?;
        let mut model = Self::new(cfg, task, ablation, 0)?;
        ck.load_store(&mut model.store, "")?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Copies DispNet-B weights and buffers from another model's checkpoint.
    pub fn load_dispnet(&mut self, ck: &Checkpoint) -> Result<usize> {
        if self.dispnet().is_none() {
            return Ok(0);
        }
        let src = ScaleConfig::from_header(&ck.header)?;
        if (src.input_h, src.input_w, src.base_channels, src.max_disp)
            != (self.cfg.input_h, self.cfg.input_w, self.cfg.base_channels, self.cfg.max_disp)
        {
            return Err(Error::Config("DispNet-B checkpoint was built for a different scale".into()));
        }
        let ids: Vec<_> = self
            .store
            .ids()
            .filter(|&id| self.store.name(id).starts_with(DISPNET_PREFIX))
            .collect();
        for &id in &ids {
            let name = self.store.name(id).to_string();
            let rec = ck
                .record(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing record `{name}`")))?;
            let t = crate::autodiff::Tensor::new(&rec.shape, rec.data.clone())?;
            self.store.set_value(id, t)?;
        }
        Ok(ids.len())
    }
}
