use std::fmt::Write as _;

use super::eval::{predict, score, source_disparities, sample_epe};
use super::model::Model;
use super::plan::{DispSource, TrainPlan, TrainTask};
use super::run::{train, TrainOptions};
use crate::autodiff::Checkpoint;
use crate::metrics::{MetricKind, IOU_THRESHOLD};
use crate::nets::{Ablation, ScaleConfig, Task};
use crate::scenegen::StereoSample;
use crate::{Error, Result};

/// Training budget shared by every run of a harness.
#[derive(Clone, Debug, PartialEq)]
pub struct HarnessConfig {
    pub seed: u64,
    pub disp_epochs: usize,
    pub rec_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub threshold: f64,
    /// Disparities the swap harness trains its reconstruction networks on.
    pub swap_train_source: DispSource,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            disp_epochs: 40,
            rec_epochs: 40,
            batch: 4,
            lr: 1e-3,
            threshold: IOU_THRESHOLD,
            swap_train_source: DispSource::GroundTruth,
        }
    }
}

impl HarnessConfig {
    fn plan(&self, task: TrainTask, epochs: usize) -> TrainPlan {
        let mut p = TrainPlan::new(task, epochs);
        p.batch = self.batch;
        p.lr = self.lr;
        p
    }
}

fn train_dispnet(samples: &[StereoSample], cfg: &ScaleConfig, hc: &HarnessConfig) -> Result<Checkpoint> {
    let plan = hc.plan(TrainTask::Disparity, hc.disp_epochs);
    let out = train(
        &plan,
        samples,
        cfg,
        TrainOptions {
            seed: hc.seed,
            ..Default::default()
        },
    )?;
    Ok(out.model.to_checkpoint())
}

fn train_rec(
    samples: &[StereoSample],
    cfg: &ScaleConfig,
    hc: &HarnessConfig,
    task: Task,
    ablation: Ablation,
    source: DispSource,
    dispnet: &Checkpoint,
) -> Result<Model> {
    let mut plan = hc.plan(task.into(), hc.rec_epochs);
    plan.ablation = ablation;
    plan.disp_source = source;
    let out = train(
        &plan,
        samples,
        cfg,
        TrainOptions {
            seed: hc.seed,
            init_dispnet: Some(dispnet),
            ..Default::default()
        },
    )?;
    Ok(out.model)
}

fn mean_metric(model: &Model, samples: &[StereoSample], m: MetricKind, hc: &HarnessConfig, source: DispSource) -> Result<f64> {
    let out = predict(model, samples, source)?;
    Ok(score(samples, &out, &[m], hc.threshold)?[0].mean())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub iou: f64,
    /// Raw Chamfer distance.
    pub cd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `config \t iou \t cd` with CD scaled by 10³.
    pub fn tsv(&self) -> String {
        let mut out = String::from("config\tiou\tcd\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.ablation.label(), r.iou, r.cd * MetricKind::Cd.report_scale());
        }
        out
    }
}

/// Trains and scores all four {±DispNet-B, ±CorrNet} configurations on both
/// tasks under one seed and budget. Scores are training-set means.
pub fn run_ablation_suite(samples: &[StereoSample], cfg: &ScaleConfig, hc: &HarnessConfig) -> Result<AblationReport> {
    let dispnet = train_dispnet(samples, cfg, hc)?;
    let mut rows = Vec::new();
    for ab in Ablation::ALL {
        let vol = train_rec(samples, cfg, hc, Task::Volume, ab, DispSource::DispNetB, &dispnet)?;
        let iou = mean_metric(&vol, samples, MetricKind::Iou, hc, DispSource::DispNetB)?;
        let pts = train_rec(samples, cfg, hc, Task::Point, ab, DispSource::DispNetB, &dispnet)?;
        let cd = mean_metric(&pts, samples, MetricKind::Cd, hc, DispSource::DispNetB)?;
        rows.push(AblationRow { ablation: ab, iou, cd });
    }
    Ok(AblationReport { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapRow {
    pub source: DispSource,
    pub iou: f64,
    pub cd: f64,
    /// Endpoint error of the source's disparities.
    pub epe: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapReport {
    pub rows: Vec<SwapRow>,
}

impl SwapReport {
    pub fn tsv(&self) -> String {
        let mut out = String::from("source\tiou\tcd\tepe\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.source,
                r.iou,
                r.cd * MetricKind::Cd.report_scale(),
                r.epe
            );
        }
        out
    }

    pub fn row(&self, source: DispSource) -> Option<&SwapRow> {
        self.rows.iter().find(|r| r.source == source)
    }
}

/// Trains one volume and one point network, then scores both on the
/// training set with disparities from each requested source.
pub fn run_disparity_swap(
    samples: &[StereoSample],
    cfg: &ScaleConfig,
    sources: &[DispSource],
    hc: &HarnessConfig,
) -> Result<SwapReport> {
    if sources.is_empty() {
        return Err(Error::Config("no disparity sources requested".into()));
    }
    let dispnet = train_dispnet(samples, cfg, hc)?;
    let full = Ablation::default();
    let vol = train_rec(samples, cfg, hc, Task::Volume, full, hc.swap_train_source, &dispnet)?;
    let pts = train_rec(samples, cfg, hc, Task::Point, full, hc.swap_train_source, &dispnet)?;
    let mut rows = Vec::new();
    for &source in sources {
        let disp = source_disparities(&vol, samples, source)?;
        let epe = samples
            .iter()
            .zip(&disp)
            .map(|(s, d)| sample_epe(s, d))
            .sum::<Result<f64>>()?
            / samples.len() as f64;
        rows.push(SwapRow {
            source,
            iou: mean_metric(&vol, samples, MetricKind::Iou, hc, source)?,
            cd: mean_metric(&pts, samples, MetricKind::Cd, hc, source)?,
            epe,
        });
    }
    Ok(SwapReport { rows })
}
