use super::*;
use crate::autodiff::Checkpoint;
use crate::metrics::MetricKind;
use crate::nets::{ScaleConfig, DISPNET_PREFIX};
use crate::scenegen::{generate_sample, GenConfig, StereoCamera, StereoSample};

fn tiny() -> ScaleConfig {
    ScaleConfig {
        input_h: 16,
        input_w: 24,
        base_channels: 4,
        feature_len: 16,
        corr_len: 16,
        corr_channels: 4,
        volume_res: 8,
        n_points: 20,
        max_disp: 8,
        shift: 1,
    }
}

fn samples(n: usize) -> Vec<StereoSample> {
    let gen = GenConfig {
        camera: StereoCamera::paper(24, 16),
        voxel_res: 8,
        n_gt: 64,
        seed: 5,
        ..GenConfig::default()
    };
    (0..n).map(|i| generate_sample(i, &gen).unwrap()).collect()
}

fn plan(task: TrainTask, epochs: usize) -> TrainPlan {
    let mut p = TrainPlan::new(task, epochs);
    p.batch = 2;
    p.lr = 1e-3;
    p
}

fn run(p: &TrainPlan, data: &[StereoSample], init: Option<&Checkpoint>) -> TrainOutcome {
    train(
        p,
        data,
        &tiny(),
        TrainOptions {
            seed: 3,
            init_dispnet: init,
            ..Default::default()
        },
    )
    .unwrap()
}

fn bytes(o: &TrainOutcome) -> Vec<u8> {
    o.checkpoint().to_bytes().unwrap()
}

#[test]
fn identical_runs_are_bit_identical() {
    let data = samples(4);
    let p = plan(TrainTask::Point, 2);
    let a = run(&p, &data, None);
    let b = run(&p, &data, None);
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.step, 4);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = samples(4);
    let mut p = plan(TrainTask::Volume, 4);
    p.checkpoint_every = 1;
    let dir = tempfile::tempdir().unwrap();
    let full = run(&p, &data, None);
    let part = train(
        &p,
        &data,
        &tiny(),
        TrainOptions {
            seed: 3,
            out_dir: Some(dir.path()),
            stop_after: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(part.epoch, 1);
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let resumed = train(
        &p,
        &data,
        &tiny(),
        TrainOptions {
            resume: Some(&ck),
            out_dir: Some(dir.path()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(bytes(&resumed), bytes(&full));
    assert_eq!(resumed.curve, full.curve);
    let text = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    assert_eq!(parse_curve(&text).unwrap(), full.curve);
}

#[test]
fn learning_rate_halves_at_decay_epoch() {
    let data = samples(4);
    let mut p = plan(TrainTask::Disparity, 5);
    p.decay_epoch = 3;
    let out = run(&p, &data, None);
    for r in &out.curve {
        let epoch = (r.step - 1) / 2;
        let want = if epoch >= 3 { 5e-4 } else { 1e-3 };
        assert_eq!(r.lr, want, "step {}", r.step);
    }
    let text = curve_tsv(&out.curve);
    assert!(text.starts_with("step\tstage\tloss\tlr\n"));
    assert_eq!(parse_curve(&text).unwrap(), out.curve);
}

#[test]
fn disparity_overfit_lowers_smoothed_loss() {
    let data = samples(2);
    let p = plan(TrainTask::Disparity, 60);
    let out = run(&p, &data, None);
    let s = smoothed(&out.curve, 20);
    assert!(s.last().unwrap() < &s[0], "{} -> {}", s[0], s.last().unwrap());
}

#[test]
fn rec_train_leaves_dispnet_untouched() {
    let data = samples(4);
    let disp = run(&plan(TrainTask::Disparity, 1), &data, None).model.to_checkpoint();
    let out = run(&plan(TrainTask::Volume, 2), &data, Some(&disp));
    let store = &out.model.store;
    let mut checked = 0;
    for id in store.ids().filter(|&id| store.name(id).starts_with(DISPNET_PREFIX)) {
        let rec = disp.record(store.name(id)).unwrap();
        assert_eq!(store.value(id).data(), rec.data.as_slice(), "{}", store.name(id));
        checked += 1;
    }
    assert!(checked > 10);
    let enc = store.ids().find(|&id| store.name(id).starts_with("encoder")).unwrap();
    let fresh = Model::new(tiny(), TrainTask::Volume, Default::default(), 3).unwrap();
    assert_ne!(store.value(enc), fresh.store.value(enc));
}

#[test]
fn joint_finetune_updates_dispnet() {
    let data = samples(2);
    let disp = run(&plan(TrainTask::Disparity, 1), &data, None).model.to_checkpoint();
    let mut p = plan(TrainTask::Point, 1);
    p.stage = Stage::JointFinetune;
    let out = run(&p, &data, Some(&disp));
    let store = &out.model.store;
    let id = store.id("dispnet.head.w").unwrap();
    assert_ne!(store.value(id).data(), disp.record("dispnet.head.w").unwrap().data.as_slice());
}

#[test]
fn scale_mismatch_fails_before_training() {
    let data = samples(2);
    let mut steps = 0;
    let mut count = |_: &CurveRow| steps += 1;
    let cfg = ScaleConfig {
        input_w: 32,
        ..tiny()
    };
    let err = train(
        &plan(TrainTask::Volume, 1),
        &data,
        &cfg,
        TrainOptions {
            on_step: Some(&mut count),
            ..Default::default()
        },
    );
    assert!(err.is_err());
    let cfg = ScaleConfig {
        volume_res: 16,
        ..tiny()
    };
    assert!(train(&plan(TrainTask::Volume, 1), &data, &cfg, TrainOptions::default()).is_err());
    assert!(train(&plan(TrainTask::Volume, 1), &[], &tiny(), TrainOptions::default()).is_err());
    assert_eq!(steps, 0);
}

#[test]
fn checkpoint_restores_predictions() {
    let data = samples(3);
    let out = run(&plan(TrainTask::Volume, 1), &data, None);
    let back = Model::from_checkpoint(&out.checkpoint()).unwrap();
    let a = predict(&out.model, &data, DispSource::DispNetB).unwrap();
    let b = predict(&back, &data, DispSource::DispNetB).unwrap();
    assert_eq!(a, b);
    assert_eq!(back.task(), TrainTask::Volume);
    let r = evaluate(&back, &data, &[MetricKind::Iou, MetricKind::Epe], 0.4, DispSource::DispNetB).unwrap();
    assert_eq!(r.len(), 2);
    assert!(r.iter().all(|m| m.count() == 3));
    assert!(evaluate(&back, &data, &[MetricKind::Cd], 0.4, DispSource::DispNetB).is_err());
}

#[test]
fn disparity_sources() {
    let data = samples(2);
    let model = Model::new(tiny(), TrainTask::Point, Default::default(), 0).unwrap();
    let gt = source_disparities(&model, &data, DispSource::GroundTruth).unwrap();
    assert_eq!(gt[1].0, data[1].disp_l);
    assert_eq!(sample_epe(&data[0], &gt[0]).unwrap(), 0.0);
    let sg = source_disparities(&model, &data, DispSource::Sgbm).unwrap();
    assert_eq!(sg[0].1.width, 24);
    let ablated = Model::new(
        tiny(),
        TrainTask::Point,
        crate::nets::Ablation {
            no_disp: true,
            no_corr: false,
        },
        0,
    )
    .unwrap();
    assert!(source_disparities(&ablated, &data, DispSource::DispNetB).is_err());
}

#[test]
fn harness_reports_are_complete_and_repeatable() {
    let data = samples(2);
    let hc = HarnessConfig {
        seed: 1,
        disp_epochs: 1,
        rec_epochs: 1,
        batch: 2,
        ..HarnessConfig::default()
    };
    let a = run_ablation_suite(&data, &tiny(), &hc).unwrap();
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a.tsv().lines().count(), 5);
    assert_eq!(a, run_ablation_suite(&data, &tiny(), &hc).unwrap());

    let sources = [DispSource::Sgbm, DispSource::GroundTruth];
    let s = run_disparity_swap(&data, &tiny(), &sources, &hc).unwrap();
    assert_eq!(s.rows.len(), 2);
    assert_eq!(s.row(DispSource::GroundTruth).unwrap().epe, 0.0);
    assert_eq!(s.tsv(), run_disparity_swap(&data, &tiny(), &sources, &hc).unwrap().tsv());
    assert!(run_disparity_swap(&data, &tiny(), &[], &hc).is_err());
}
