use rayon::prelude::*;

use super::data::{epe_exclusions, image_batch, map_batch, tensor_to_maps};
use super::model::{Model, Network};
use super::plan::DispSource;
use crate::autodiff::{Graph, Mode, Tensor};
use crate::metrics::{chamfer_distance, epe, iou, MetricKind, MetricReport};
use crate::nets::Decoder;
use crate::scenegen::{Map, RgbImage, StereoSample};
use crate::sgbm::{sgbm_filled, SgmParams};
use crate::{Error, Result};

/// Items per evaluation forward pass.
pub const EVAL_BATCH: usize = 8;

pub type DispPair = (Map<f32>, Map<f32>);

/// Everything one eval-mode forward pass yields for a stereo pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub disp: Option<DispPair>,
    /// `R³` occupancy probabilities.
    pub volume: Option<Vec<f32>>,
    /// Flat `[x, y, z, ...]` points.
    pub points: Option<Vec<f32>>,
}

pub fn sgbm_params(max_disp: usize) -> SgmParams {
    SgmParams {
        max_disp,
        ..SgmParams::default()
    }
}

fn pair_batch(pairs: &[(&RgbImage, &RgbImage)]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (w, h) = (pairs[0].0.width, pairs[0].0.height);
    for (l, r) in pairs {
        if (l.width, l.height) != (w, h) || (r.width, r.height) != (w, h) {
            return Err(Error::Data(format!(
                "stereo images differ in size: {}x{} vs {}x{}",
                l.width, l.height, r.width, r.height
            )));
        }
    }
    let shape = [pairs.len(), 3, h, w];
    let l: Vec<f32> = pairs.iter().flat_map(|p| p.0.planar()).collect();
    let r: Vec<f32> = pairs.iter().flat_map(|p| p.1.planar()).collect();
    Ok((Tensor::new(&shape, l)?, Tensor::new(&shape, r)?))
}

/// Eval-mode forward over image pairs. `injected` replaces DispNet-B's
/// disparities, one pair per image pair.
pub fn predict_pairs(
    model: &Model,
    pairs: &[(&RgbImage, &RgbImage)],
    injected: Option<&[DispPair]>,
) -> Result<Vec<Output>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (k, chunk) in pairs.chunks(EVAL_BATCH).enumerate() {
        let (w, h) = (chunk[0].0.width, chunk[0].0.height);
        let (lt, rt) = pair_batch(chunk)?;
        let mut g = Graph::<f32>::new(Mode::Eval);
        let l = g.constant(lt)?;
        let r = g.constant(rt)?;
        let (disp, head) = match &model.net {
            Network::Disp(d) => (Some(d.forward(&mut g, &model.store, l, r)?), None),
            Network::Stereo(net) => {
                let inj = match injected {
                    Some(all) => {
                        let part = &all[k * EVAL_BATCH..k * EVAL_BATCH + chunk.len()];
                        let dl: Vec<&Map<f32>> = part.iter().map(|p| &p.0).collect();
                        let dr: Vec<&Map<f32>> = part.iter().map(|p| &p.1).collect();
                        Some((g.constant(map_batch(&dl)?)?, g.constant(map_batch(&dr)?)?))
                    }
                    None => None,
                };
                let p = net.forward(&mut g, &model.store, l, r, inj)?;
                (p.disp, Some((p.output, &net.decoder)))
            }
        };
        let disp_maps = match disp {
            Some((dl, dr)) => {
                let ml = tensor_to_maps(g.value(dl), w, h)?;
                let mr = tensor_to_maps(g.value(dr), w, h)?;
                Some(ml.into_iter().zip(mr).collect::<Vec<_>>())
            }
            None => None,
        };
        for i in 0..chunk.len() {
            let mut o = Output {
                disp: disp_maps.as_ref().map(|m| m[i].clone()),
                volume: None,
                points: None,
            };
            if let Some((v, dec)) = head {
                let item = g.value(v).batch_item(i).into_data();
                match dec {
                    Decoder::Volume(_) => o.volume = Some(item),
                    Decoder::Point(_) => o.points = Some(item),
                }
            }
            out.push(o);
        }
    }
    Ok(out)
}

/// Disparity pairs for `samples` from `source`. The dispnetb source needs a
/// model with a disparity branch.
pub fn source_disparities(model: &Model, samples: &[StereoSample], source: DispSource) -> Result<Vec<DispPair>> {
    match source {
        DispSource::GroundTruth => Ok(samples.iter().map(|s| (s.disp_l.clone(), s.disp_r.clone())).collect()),
        DispSource::Sgbm => {
            let params = sgbm_params(model.cfg.max_disp);
            samples
                .par_iter()
                .map(|s| sgbm_filled(&s.left, &s.right, &params))
                .collect()
        }
        DispSource::DispNetB => {
            let d = model
                .dispnet()
                .ok_or_else(|| Error::Config("model has no DispNet-B to estimate disparities".into()))?;
            let mut out = Vec::with_capacity(samples.len());
            for chunk in samples.chunks(EVAL_BATCH) {
                let refs: Vec<&StereoSample> = chunk.iter().collect();
                let (lt, rt) = image_batch(&refs)?;
                let mut g = Graph::<f32>::new(Mode::Eval);
                let l = g.constant(lt)?;
                let r = g.constant(rt)?;
                let (dl, dr) = d.forward(&mut g, &model.store, l, r)?;
                let (w, h) = (model.cfg.input_w, model.cfg.input_h);
                let ml = tensor_to_maps(g.value(dl), w, h)?;
                let mr = tensor_to_maps(g.value(dr), w, h)?;
                out.extend(ml.into_iter().zip(mr));
            }
            Ok(out)
        }
    }
}

/// Predictions for dataset samples with disparities taken from `source`.
pub fn predict(model: &Model, samples: &[StereoSample], source: DispSource) -> Result<Vec<Output>> {
    let pairs: Vec<(&RgbImage, &RgbImage)> = samples.iter().map(|s| (&s.left, &s.right)).collect();
    let uses_disp = matches!(&model.net, Network::Stereo(n) if !n.ablation.no_disp);
    if uses_disp && source != DispSource::DispNetB {
        let inj = source_disparities(model, samples, source)?;
        predict_pairs(model, &pairs, Some(&inj))
    } else {
        predict_pairs(model, &pairs, None)
    }
}

/// Endpoint error of a predicted pair, pooled over both views and restricted
/// to non-occluded object pixels.
pub fn sample_epe(s: &StereoSample, d: &DispPair) -> Result<f64> {
    let (el, er) = epe_exclusions(s);
    let pred: Vec<f32> = d.0.data.iter().chain(&d.1.data).copied().collect();
    let gt: Vec<f32> = s.disp_l.data.iter().chain(&s.disp_r.data).copied().collect();
    let ex: Vec<bool> = el.into_iter().chain(er).collect();
    epe(&pred, &gt, &ex)
}

/// Scores already computed predictions.
pub fn score(samples: &[StereoSample], outputs: &[Output], metrics: &[MetricKind], threshold: f64) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    for &m in metrics {
        let mut rep = MetricReport::new(m, (m == MetricKind::Iou).then_some(threshold));
        let missing = |what: &str| Error::Config(format!("metric {} needs a model that predicts {what}", m.name()));
        let values: Vec<f64> = samples
            .par_iter()
            .zip(outputs)
            .map(|(s, o)| match m {
                MetricKind::Iou => {
                    let v = o.volume.as_ref().ok_or_else(|| missing("voxels"))?;
                    iou(v, &s.voxels.cells, threshold)
                }
                MetricKind::Cd => {
                    let p = o.points.as_ref().ok_or_else(|| missing("points"))?;
                    chamfer_distance(p, &s.points.flat::<f32>())
                }
                MetricKind::Epe => sample_epe(s, o.disp.as_ref().ok_or_else(|| missing("disparities"))?),
            })
            .collect::<Result<_>>()?;
        for (s, v) in samples.iter().zip(values) {
            rep.push(s.id.clone(), v);
        }
        reports.push(rep);
    }
    Ok(reports)
}

pub fn evaluate(
    model: &Model,
    samples: &[StereoSample],
    metrics: &[MetricKind],
    threshold: f64,
    source: DispSource,
) -> Result<Vec<MetricReport>> {
    let outputs = predict(model, samples, source)?;
    score(samples, &outputs, metrics, threshold)
}
