use std::fmt;
use std::str::FromStr;

use crate::nets::{Ablation, Task};
use crate::{Error, Result};

/// Weight of the disparity loss during joint fine-tuning.
pub const JOINT_DISP_WEIGHT: f64 = 0.1;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH: usize = 4;

/// What a training run optimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTask {
    Disparity,
    Volume,
    Point,
}

impl TrainTask {
    pub fn name(self) -> &'static str {
        match self {
            TrainTask::Disparity => "disparity",
            TrainTask::Volume => "volume",
            TrainTask::Point => "point",
        }
    }

    /// Reconstruction head, if any.
    pub fn recon(self) -> Option<Task> {
        match self {
            TrainTask::Disparity => None,
            TrainTask::Volume => Some(Task::Volume),
            TrainTask::Point => Some(Task::Point),
        }
    }
}

impl From<Task> for TrainTask {
    fn from(t: Task) -> Self {
        match t {
            Task::Volume => TrainTask::Volume,
            Task::Point => TrainTask::Point,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    DispPretrain,
    RecTrain,
    JointFinetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::DispPretrain => "disp-pretrain",
            Stage::RecTrain => "rec-train",
            Stage::JointFinetune => "joint-finetune",
        }
    }
}

/// Where the reconstruction network's disparity input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DispSource {
    DispNetB,
    Sgbm,
    GroundTruth,
}

impl DispSource {
    pub const ALL: [DispSource; 3] = [DispSource::DispNetB, DispSource::Sgbm, DispSource::GroundTruth];

    pub fn name(self) -> &'static str {
        match self {
            DispSource::DispNetB => "dispnetb",
            DispSource::Sgbm => "sgbm",
            DispSource::GroundTruth => "groundtruth",
        }
    }
}

macro_rules! named_enum {
    ($t:ty, $all:expr, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $all.into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::Config(format!(concat!("unknown ", $what, " `{}`"), s)))
            }
        }
    };
}

named_enum!(TrainTask, [TrainTask::Disparity, TrainTask::Volume, TrainTask::Point], "task");
named_enum!(Stage, [Stage::DispPretrain, Stage::RecTrain, Stage::JointFinetune], "stage");
named_enum!(DispSource, DispSource::ALL, "disparity source");

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub task: TrainTask,
    pub stage: Stage,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub decay_factor: f64,
    /// First epoch trained at the decayed rate.
    pub decay_epoch: usize,
    pub ablation: Ablation,
    pub disp_source: DispSource,
    /// Let DispNet-B gradients flow during rec-train.
    pub train_dispnet: bool,
    pub disp_weight: f64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainPlan {
    /// Default plan for `task`; disparity runs pretrain, reconstruction runs
    /// train on top of a frozen DispNet-B.
    pub fn new(task: TrainTask, epochs: usize) -> Self {
        Self {
            task,
            stage: match task {
                TrainTask::Disparity => Stage::DispPretrain,
                _ => Stage::RecTrain,
            },
            epochs,
            batch: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            decay_factor: 0.5,
            decay_epoch: default_decay_epoch(epochs),
            ablation: Ablation::default(),
            disp_source: DispSource::DispNetB,
            train_dispnet: false,
            disp_weight: JOINT_DISP_WEIGHT,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be positive".into());
        }
        if self.decay_epoch >= self.epochs {
            return bad(format!(
                "decay epoch {} must be below the epoch count {}",
                self.decay_epoch, self.epochs
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("bad learning-rate schedule {} x{}", self.lr, self.decay_factor));
        }
        match (self.task, self.stage) {
            (TrainTask::Disparity, Stage::DispPretrain) => {}
            (TrainTask::Disparity, s) => return bad(format!("task disparity cannot run stage {s}")),
            (t, Stage::DispPretrain) => return bad(format!("stage disp-pretrain cannot train task {t}")),
            _ => {}
        }
        if self.stage == Stage::JointFinetune {
            if self.ablation.no_disp {
                return bad("joint-finetune needs the disparity branch".into());
            }
            if self.disp_source != DispSource::DispNetB {
                return bad("joint-finetune only trains with dispnetb disparities".into());
            }
        }
        if self.train_dispnet && self.disp_source != DispSource::DispNetB {
            return bad("unfreezing DispNet-B requires the dispnetb source".into());
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }

    /// Whether DispNet-B runs inside the training graph.
    pub fn dispnet_in_graph(&self) -> bool {
        !self.ablation.no_disp
            && self.disp_source == DispSource::DispNetB
            && (self.train_dispnet || self.stage == Stage::JointFinetune)
    }

    pub fn header(&self) -> Vec<(String, String)> {
        [
            ("task", self.task.to_string()),
            ("stage", self.stage.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", self.lr.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_epoch", self.decay_epoch.to_string()),
            ("no_disp", self.ablation.no_disp.to_string()),
            ("no_corr", self.ablation.no_corr.to_string()),
            ("disp_source", self.disp_source.to_string()),
            ("train_dispnet", self.train_dispnet.to_string()),
            ("disp_weight", self.disp_weight.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("plan.{k}"), v))
        .collect()
    }

    pub fn from_header(header: &[(String, String)]) -> Result<Self> {
        fn get<V: FromStr>(h: &[(String, String)], k: &str) -> Result<V> {
            let key = format!("plan.{k}");
            let v = h
                .iter()
                .find(|(hk, _)| *hk == key)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Config(format!("checkpoint header lacks `{key}`")))?;
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        let plan = Self {
            task: get(header, "task")?,
            stage: get(header, "stage")?,
            epochs: get(header, "epochs")?,
            batch: get(header, "batch")?,
            lr: get(header, "lr")?,
            decay_factor: get(header, "decay_factor")?,
            decay_epoch: get(header, "decay_epoch")?,
            ablation: Ablation {
                no_disp: get(header, "no_disp")?,
                no_corr: get(header, "no_corr")?,
            },
            disp_source: get(header, "disp_source")?,
            train_dispnet: get(header, "train_dispnet")?,
            disp_weight: get(header, "disp_weight")?,
            checkpoint_every: get(header, "checkpoint_every")?,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Decay after 60% of the epochs, never at epoch 0 unless there is only one.
pub fn default_decay_epoch(epochs: usize) -> usize {
    ((epochs * 3) / 5).clamp(1.min(epochs.saturating_sub(1)), epochs.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let p = TrainPlan::new(TrainTask::Volume, 10);
        assert_eq!(p.decay_epoch, 6);
        assert_eq!(p.lr_at(5), 1e-4);
        assert_eq!(p.lr_at(6), 5e-5);
        assert_eq!(default_decay_epoch(1), 0);
        assert_eq!(default_decay_epoch(2), 1);
        assert_eq!(default_decay_epoch(500), 300);
        p.validate().unwrap();
    }

    #[test]
    fn inconsistent_plans_rejected() {
        let mut p = TrainPlan::new(TrainTask::Point, 5);
        p.decay_epoch = 5;
        assert!(p.validate().is_err());
        let mut p = TrainPlan::new(TrainTask::Disparity, 5);
        p.stage = Stage::RecTrain;
        assert!(p.validate().is_err());
        let mut p = TrainPlan::new(TrainTask::Volume, 5);
        p.stage = Stage::JointFinetune;
        p.disp_source = DispSource::Sgbm;
        assert!(p.validate().is_err());
        p.disp_source = DispSource::DispNetB;
        p.validate().unwrap();
        p.ablation.no_disp = true;
        assert!(p.validate().is_err());
    }

    #[test]
    fn header_roundtrip_and_names() {
        let mut p = TrainPlan::new(TrainTask::Volume, 7);
        p.disp_source = DispSource::GroundTruth;
        p.ablation.no_corr = true;
        p.lr = 3e-4;
        assert_eq!(TrainPlan::from_header(&p.header()).unwrap(), p);
        for s in DispSource::ALL {
            assert_eq!(s.to_string().parse::<DispSource>().unwrap(), s);
        }
        assert!("voxel".parse::<TrainTask>().is_err());
        assert_eq!("joint-finetune".parse::<Stage>().unwrap(), Stage::JointFinetune);
    }
}
