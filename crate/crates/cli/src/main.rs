//! `ssr`: dataset generation, training, evaluation, inference and self-test
//! for the stereo reconstruction pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssr_core::autodiff::Checkpoint;
use ssr_core::metrics::{MetricKind, MetricReport, IOU_THRESHOLD};
use ssr_core::nets::{Ablation, ScaleConfig};
use ssr_core::scenegen::formats::{read_ppm, write_ply, write_ppm, write_ssdm, write_ssvx};
use ssr_core::scenegen::{
    generate_dataset, load_dataset, quantize, GenConfig, Map, PointCloud, RgbImage, StereoCamera, StereoSample,
    VoxelGrid,
};
use ssr_core::selftest;
use ssr_core::trainer::{
    evaluate, predict_pairs, run_ablation_suite, run_disparity_swap, train, DispSource, HarnessConfig, Model, Stage,
    TrainOptions, TrainPlan, TrainTask, DEFAULT_BATCH, DEFAULT_LR,
};
use ssr_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ssr", version, about = "Stereo-pair 3D object reconstruction")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "SSR_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic stereo dataset.
    Gen(GenArgs),
    /// Train a disparity, volume or point network.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a TSV report.
    Eval(EvalArgs),
    /// Run a checkpoint on one stereo pair and export its prediction.
    Infer(InferArgs),
    /// Run the gradient, metric, cost-volume and geometry checks.
    Selftest(SelftestArgs),
    /// Train and score all four ablation configurations.
    Ablate(HarnessArgs),
    /// Score reconstruction networks under different disparity sources.
    Swap(SwapArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 137)]
    width: usize,
    #[arg(long, default_value_t = 137)]
    height: usize,
    #[arg(long, default_value_t = 35.0)]
    focal_mm: f64,
    #[arg(long, default_value_t = 32.0)]
    sensor_mm: f64,
    #[arg(long, default_value_t = 130.0)]
    baseline_mm: f64,
    #[arg(long, default_value_t = 32)]
    voxel_res: usize,
    #[arg(long, default_value_t = 16_384)]
    n_gt: usize,
    /// Randomise the camera intrinsics slightly per sample.
    #[arg(long)]
    jitter: bool,
    #[arg(long, default_value_t = 0.25)]
    texture_amp: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// disparity, volume or point
    #[arg(long)]
    task: TrainTask,
    #[arg(long)]
    data: PathBuf,
    /// desk or paper
    #[arg(long, default_value = "desk")]
    scale: String,
    /// disp-pretrain, rec-train or joint-finetune; follows the task by default.
    #[arg(long)]
    stage: Option<Stage>,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    lr: f64,
    /// Epoch at which the learning rate halves.
    #[arg(long)]
    decay_epoch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_disp: bool,
    #[arg(long)]
    no_corr: bool,
    /// dispnetb, sgbm or groundtruth
    #[arg(long, default_value_t = DispSource::DispNetB)]
    disp_source: DispSource,
    /// Keep DispNet-B trainable during rec-train.
    #[arg(long)]
    train_dispnet: bool,
    /// Checkpoint holding pretrained DispNet-B weights.
    #[arg(long)]
    init_dispnet: Option<PathBuf>,
    /// Training checkpoint to continue; its plan and seed take over.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write an intermediate checkpoint every K epochs (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of iou, cd, epe; defaults to those the model supports.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<MetricKind>,
    #[arg(long, default_value_t = IOU_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DispSource::DispNetB)]
    disp_source: DispSource,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = IOU_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Add a check fed with NaN inputs, which must fail.
    #[arg(long)]
    inject_nan: bool,
}

#[derive(Args, Debug)]
struct HarnessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    disp_epochs: usize,
    #[arg(long, default_value_t = 40)]
    rec_epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = IOU_THRESHOLD)]
    threshold: f64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SwapArgs {
    #[command(flatten)]
    common: HarnessArgs,
    #[arg(long, value_delimiter = ',', default_value = "dispnetb,sgbm,groundtruth")]
    sources: Vec<DispSource>,
    /// Disparities the reconstruction networks are trained on.
    #[arg(long, default_value_t = DispSource::GroundTruth)]
    train_source: DispSource,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Format { .. } | Error::ShapeMismatch { .. } => 2,
            Error::NonFinite(_) => 3,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn write_text(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            fs::write(p, text).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_data(dir: &Path) -> CliResult<Vec<StereoSample>> {
    let samples = load_dataset(dir)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("dataset {} is empty", dir.display())).into());
    }
    Ok(samples)
}

fn gen(a: GenArgs) -> CliResult {
    let cfg = GenConfig {
        seed: a.seed,
        camera: StereoCamera {
            focal_mm: a.focal_mm,
            sensor_mm: a.sensor_mm,
            baseline_mm: a.baseline_mm,
            width: a.width,
            height: a.height,
        },
        voxel_res: a.voxel_res,
        n_gt: a.n_gt,
        jitter: a.jitter,
        texture_amp: a.texture_amp,
    };
    let ids = generate_dataset(a.count, &cfg, &a.out)?;
    eprintln!("wrote {} samples to {}", ids.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let cfg = ScaleConfig::preset(&a.scale)?;
    let samples = load_data(&a.data)?;
    let mut plan = TrainPlan::new(a.task, a.epochs);
    if let Some(s) = a.stage {
        plan.stage = s;
    }
    plan.batch = a.batch;
    plan.lr = a.lr;
    if let Some(d) = a.decay_epoch {
        plan.decay_epoch = d;
    }
    plan.ablation = Ablation {
        no_disp: a.no_disp,
        no_corr: a.no_corr,
    };
    plan.disp_source = a.disp_source;
    plan.train_dispnet = a.train_dispnet;
    plan.checkpoint_every = a.checkpoint_every;
    let init = a.init_dispnet.as_deref().map(Checkpoint::load).transpose()?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let out = train(
        &plan,
        &samples,
        &cfg,
        TrainOptions {
            seed: a.seed,
            init_dispnet: init.as_ref(),
            resume: resume.as_ref(),
            out_dir: Some(&a.out),
            ..Default::default()
        },
    )?;
    if let Some(last) = out.curve.last() {
        if !last.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", last.step)).into());
        }
        eprintln!("step {} loss {:.6}", last.step, last.loss);
    }
    Ok(())
}

fn default_metrics(model: &Model) -> Vec<MetricKind> {
    let mut m = Vec::new();
    match model.task() {
        TrainTask::Volume => m.push(MetricKind::Iou),
        TrainTask::Point => m.push(MetricKind::Cd),
        TrainTask::Disparity => {}
    }
    if !model.ablation().no_disp {
        m.push(MetricKind::Epe);
    }
    m
}

/// Per-sample rows followed by overall and per-kind means.
fn eval_tsv(reports: &[MetricReport], samples: &[StereoSample]) -> String {
    let mut out = MetricReport::tsv(reports);
    let kinds: Vec<String> = samples.iter().map(|s| s.kind.to_string()).collect();
    for r in reports {
        let scale = r.kind.report_scale();
        let _ = writeln!(out, "mean\t{}\t{}", r.kind.name(), r.mean() * scale);
        for (k, v) in r.group_means(&kinds) {
            let _ = writeln!(out, "mean:{k}\t{}\t{}", r.kind.name(), v * scale);
        }
    }
    out
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let model = Model::load(&a.model)?;
    let samples = load_data(&a.data)?;
    let metrics = if a.metrics.is_empty() {
        default_metrics(&model)
    } else {
        a.metrics
    };
    let reports = evaluate(&model, &samples, &metrics, a.threshold, a.disp_source)?;
    write_text(a.out.as_deref(), &eval_tsv(&reports, &samples))
}

fn disparity_image(d: &Map<f32>, max_disp: f32) -> RgbImage {
    let mut img = RgbImage::new(d.width, d.height);
    for y in 0..d.height {
        for x in 0..d.width {
            let v = quantize((d.get(x, y) / max_disp).clamp(0.0, 1.0) as f64);
            img.put(x, y, [v; 3]);
        }
    }
    img
}

/// Left input beside its disparity map.
fn montage(left: &RgbImage, disp: &RgbImage) -> RgbImage {
    let mut out = RgbImage::new(left.width * 2, left.height);
    for y in 0..left.height {
        for x in 0..left.width {
            out.put(x, y, left.pixel(x, y));
            out.put(left.width + x, y, disp.pixel(x, y));
        }
    }
    out
}

fn cmd_infer(a: InferArgs) -> CliResult {
    let model = Model::load(&a.model)?;
    let left = read_ppm(&a.left)?;
    let right = read_ppm(&a.right)?;
    if (left.width, left.height) != (right.width, right.height) {
        return Err(Error::Data(format!(
            "left image is {}x{} but right image is {}x{}",
            left.width, left.height, right.width, right.height
        ))
        .into());
    }
    if (left.width, left.height) != (model.cfg.input_w, model.cfg.input_h) {
        return Err(Error::Data(format!(
            "model expects {}x{} images, got {}x{}",
            model.cfg.input_w, model.cfg.input_h, left.width, left.height
        ))
        .into());
    }
    let out = predict_pairs(&model, &[(&left, &right)], None)?.remove(0);
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let disp_img = match &out.disp {
        Some((dl, dr)) => {
            write_ssdm(&a.out.join("disp_l.ssdm"), dl)?;
            write_ssdm(&a.out.join("disp_r.ssdm"), dr)?;
            disparity_image(dl, model.cfg.max_disp as f32)
        }
        None => RgbImage::new(left.width, left.height),
    };
    if let Some(v) = &out.volume {
        let res = model.cfg.volume_res;
        let grid = VoxelGrid {
            res,
            cells: v.iter().map(|&p| p as f64 > a.threshold).collect(),
        };
        write_ssvx(&a.out.join("volume.ssvx"), &grid)?;
    }
    if let Some(p) = &out.points {
        let cloud = PointCloud {
            points: p.chunks(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect(),
        };
        write_ply(&a.out.join("points.ply"), &cloud)?;
    }
    write_ppm(&a.out.join("montage.ppm"), &montage(&left, &disp_img))?;
    Ok(())
}

fn cmd_selftest(a: SelftestArgs) -> CliResult {
    let checks = selftest::run_all(a.inject_nan);
    let mut failed = 0;
    for c in &checks {
        println!("{}\t{}\t{}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += !c.passed as usize;
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        return Err(Failure {
            code: 3,
            msg: format!("{failed} self-test checks failed"),
        });
    }
    Ok(())
}

fn harness_config(a: &HarnessArgs) -> HarnessConfig {
    HarnessConfig {
        seed: a.seed,
        disp_epochs: a.disp_epochs,
        rec_epochs: a.rec_epochs,
        batch: a.batch,
        lr: a.lr,
        threshold: a.threshold,
        ..HarnessConfig::default()
    }
}

fn cmd_ablate(a: HarnessArgs) -> CliResult {
    let cfg = ScaleConfig::preset(&a.scale)?;
    let samples = load_data(&a.data)?;
    let report = run_ablation_suite(&samples, &cfg, &harness_config(&a))?;
    write_text(a.out.as_deref(), &report.tsv())
}

fn cmd_swap(a: SwapArgs) -> CliResult {
    let cfg = ScaleConfig::preset(&a.common.scale)?;
    let samples = load_data(&a.common.data)?;
    let hc = HarnessConfig {
        swap_train_source: a.train_source,
        ..harness_config(&a.common)
    };
    let report = run_disparity_swap(&samples, &cfg, &a.sources, &hc)?;
    write_text(a.common.out.as_deref(), &report.tsv())
}

fn run(cli: Cli) -> CliResult {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    match cli.cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Selftest(a) => cmd_selftest(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Swap(a) => cmd_swap(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
