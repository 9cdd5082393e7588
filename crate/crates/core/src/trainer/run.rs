use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::adam::Adam;
use super::data::{check_dataset, gt_disparity_batch, image_batch, map_batch, point_targets, voxel_batch};
use super::eval::{source_disparities, DispPair};
use super::model::{Model, Network};
use super::plan::{Stage, TrainPlan, TrainTask};
use crate::autodiff::{Checkpoint, Graph, Mode, Var};
use crate::metrics::{chamfer_loss, disparity_loss, volume_loss};
use crate::nets::{ScaleConfig, DISPNET_PREFIX};
use crate::rng::{mix_seed, rng_from};
use crate::scenegen::{Map, StereoSample};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.ssck";
pub const CURVE_FILE: &str = "loss_curve.tsv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub stage: Stage,
    pub loss: f64,
    pub lr: f64,
}

pub fn curve_tsv(rows: &[CurveRow]) -> String {
    let mut out = String::from("step\tstage\tloss\tlr\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.step, r.stage, r.loss, r.lr);
    }
    out
}

pub fn parse_curve(text: &str) -> Result<Vec<CurveRow>> {
    let bad = |line: &str| Error::format("loss curve", format!("bad row `{line}`"));
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(CurveRow {
                step: f[0].parse().map_err(|_| bad(line))?,
                stage: f[1].parse().map_err(|_| bad(line))?,
                loss: f[2].parse().map_err(|_| bad(line))?,
                lr: f[3].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub seed: u64,
    /// Checkpoint providing DispNet-B weights for reconstruction stages.
    pub init_dispnet: Option<&'a Checkpoint>,
    /// Training checkpoint to continue from; its plan and seed take over.
    pub resume: Option<&'a Checkpoint>,
    /// Directory receiving the checkpoint and loss curve.
    pub out_dir: Option<&'a Path>,
    /// Stop after this epoch count even if the plan asks for more.
    pub stop_after: Option<usize>,
    pub on_step: Option<&'a mut dyn FnMut(&CurveRow)>,
}

pub struct TrainOutcome {
    pub plan: TrainPlan,
    pub seed: u64,
    pub model: Model,
    pub adam: Adam<f32>,
    pub curve: Vec<CurveRow>,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
}

impl TrainOutcome {
    /// Model, optimizer state and run position in one container.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.header.extend(self.plan.header());
        ck.set_header("train.seed", self.seed);
        ck.set_header("train.epoch", self.epoch);
        ck.set_header("train.step", self.step);
        self.adam.save(&self.model.store, &mut ck);
        ck
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        let path = dir.join(CURVE_FILE);
        let tmp = dir.join(format!("{CURVE_FILE}.tmp"));
        fs::write(&tmp, curve_tsv(&self.curve)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

fn header_num<V: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<V> {
    ck.header_value(key)
        .ok_or_else(|| Error::Config(format!("checkpoint header lacks `{key}`")))?
        .parse()
        .map_err(|_| Error::Config(format!("bad value for `{key}`")))
}

fn apply_freezing(model: &mut Model, plan: &TrainPlan) {
    let frozen = plan.stage == Stage::RecTrain && !plan.train_dispnet;
    if matches!(model.net, Network::Stereo(_)) {
        model.store.set_frozen(DISPNET_PREFIX, frozen);
    }
}

/// Average of one scalar loss over a graph.
fn batch_loss(
    g: &mut Graph<f32>,
    model: &Model,
    plan: &TrainPlan,
    batch: &[&StereoSample],
    cached: Option<&[&DispPair]>,
) -> Result<Var> {
    let (lt, rt) = image_batch(batch)?;
    let l = g.constant(lt)?;
    let r = g.constant(rt)?;
    match &model.net {
        Network::Disp(d) => {
            let (pl, pr) = d.forward(g, &model.store, l, r)?;
            let (gl, gr) = gt_disparity_batch(batch)?;
            let (gl, gr) = (g.constant(gl)?, g.constant(gr)?);
            disparity_loss(g, pl, pr, gl, gr)
        }
        Network::Stereo(net) => {
            let inj = match cached {
                Some(pairs) => {
                    let dl: Vec<&Map<f32>> = pairs.iter().map(|p| &p.0).collect();
                    let dr: Vec<&Map<f32>> = pairs.iter().map(|p| &p.1).collect();
                    Some((g.constant(map_batch(&dl)?)?, g.constant(map_batch(&dr)?)?))
                }
                None => None,
            };
            let pred = net.forward(g, &model.store, l, r, inj)?;
            let rec = match plan.task {
                TrainTask::Volume => {
                    let t = g.constant(voxel_batch(batch)?)?;
                    volume_loss(g, pred.output, t)?
                }
                _ => chamfer_loss(g, pred.output, &point_targets(batch)?)?,
            };
            if plan.stage != Stage::JointFinetune {
                return Ok(rec);
            }
            let (pl, pr) = pred
                .disp
                .ok_or_else(|| Error::Config("joint-finetune needs disparity predictions".into()))?;
            let (gl, gr) = gt_disparity_batch(batch)?;
            let (gl, gr) = (g.constant(gl)?, g.constant(gr)?);
            let d = disparity_loss(g, pl, pr, gl, gr)?;
            let d = g.affine(d, plan.disp_weight, 0.0)?;
            g.add(rec, d)
        }
    }
}

/// Runs `plan` over `samples`. Every random choice derives from the seed,
/// so a run is reproducible and resuming continues it bit for bit.
pub fn train(plan: &TrainPlan, samples: &[StereoSample], cfg: &ScaleConfig, opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    let TrainOptions {
        seed,
        init_dispnet,
        resume,
        out_dir,
        stop_after,
        mut on_step,
    } = opts;
    let (plan, seed, mut model, mut adam, start_epoch, mut step, mut curve) = match resume {
        Some(ck) => {
            let plan = TrainPlan::from_header(&ck.header)?;
            let mut model = Model::from_checkpoint(ck)?;
            if model.cfg != *cfg {
                return Err(Error::Config("resume checkpoint was trained at a different scale".into()));
            }
            apply_freezing(&mut model, &plan);
            let adam = Adam::load(&model.store, ck)?;
            let step: u64 = header_num(ck, "train.step")?;
            let mut curve = Vec::new();
            if let Some(dir) = out_dir {
                if let Ok(text) = fs::read_to_string(dir.join(CURVE_FILE)) {
                    curve = parse_curve(&text)?;
                    curve.retain(|r| r.step <= step);
                }
            }
            (plan, header_num(ck, "train.seed")?, model, adam, header_num(ck, "train.epoch")?, step, curve)
        }
        None => {
            plan.validate()?;
            let mut model = Model::new(*cfg, plan.task, plan.ablation, seed)?;
            if let Some(ck) = init_dispnet {
                model.load_dispnet(ck)?;
            }
            apply_freezing(&mut model, plan);
            let adam = Adam::new(&model.store);
            (plan.clone(), seed, model, adam, 0, 0, Vec::new())
        }
    };
    check_dataset(samples, cfg, plan.task.recon())?;

    let needs_cache = matches!(model.net, Network::Stereo(_)) && !plan.ablation.no_disp && !plan.dispnet_in_graph();
    let cache = if needs_cache {
        Some(source_disparities(&model, samples, plan.disp_source)?)
    } else {
        None
    };

    let end = stop_after.map_or(plan.epochs, |s| s.min(plan.epochs));
    let mut epoch = start_epoch;
    while epoch < end {
        let lr = plan.lr_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_from(mix_seed(seed, epoch as u64)));
        for idx in order.chunks(plan.batch) {
            let batch: Vec<&StereoSample> = idx.iter().map(|&i| &samples[i]).collect();
            let cached: Option<Vec<&DispPair>> = cache.as_ref().map(|c| idx.iter().map(|&i| &c[i]).collect());
            let mut g = Graph::<f32>::new(Mode::Train);
            let loss = batch_loss(&mut g, &model, &plan, &batch, cached.as_deref())?;
            let value = g.value(loss).item() as f64;
            g.backward(loss)?;
            model.store.zero_grads();
            g.accumulate_param_grads(&mut model.store);
            for (id, t) in g.take_buffer_updates() {
                model.store.set_value(id, t)?;
            }
            adam.update(&mut model.store, lr)?;
            step += 1;
            let row = CurveRow {
                step,
                stage: plan.stage,
                loss: value,
                lr,
            };
            if let Some(f) = on_step.as_mut() {
                f(&row);
            }
            curve.push(row);
        }
        epoch += 1;
        if let Some(dir) = out_dir {
            if plan.checkpoint_every > 0 && epoch % plan.checkpoint_every == 0 && epoch < end {
                snapshot(&plan, seed, &model, &adam, &curve, epoch, step).write(dir)?;
            }
        }
    }
    let outcome = TrainOutcome {
        plan,
        seed,
        model,
        adam,
        curve,
        epoch,
        step,
    };
    if let Some(dir) = out_dir {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

fn snapshot(
    plan: &TrainPlan,
    seed: u64,
    model: &Model,
    adam: &Adam<f32>,
    curve: &[CurveRow],
    epoch: usize,
    step: u64,
) -> TrainOutcome {
    TrainOutcome {
        plan: plan.clone(),
        seed,
        model: model.clone(),
        adam: adam.clone(),
        curve: curve.to_vec(),
        epoch,
        step,
    }
}

/// Mean of each full window of `w` consecutive losses.
pub fn smoothed(curve: &[CurveRow], w: usize) -> Vec<f64> {
    curve
        .windows(w.max(1))
        .map(|win| win.iter().map(|r| r.loss).sum::<f64>() / win.len() as f64)
        .collect()
}
