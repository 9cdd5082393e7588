//! Optimisation: Adam, staged training runs and the evaluation harnesses.

mod adam;
pub mod data;
mod eval;
mod harness;
mod model;
mod plan;
mod run;

#[cfg(test)]
mod tests;

pub use adam::{Adam, BETA1, BETA2, EPS};
pub use eval::{
    evaluate, predict, predict_pairs, sample_epe, score, sgbm_params, source_disparities, DispPair, Output, EVAL_BATCH,
};
pub use harness::{
    run_ablation_suite, run_disparity_swap, AblationReport, AblationRow, HarnessConfig, SwapReport, SwapRow,
};
pub use model::{Model, Network};
pub use plan::{default_decay_epoch, DispSource, Stage, TrainPlan, TrainTask, DEFAULT_BATCH, DEFAULT_LR, JOINT_DISP_WEIGHT};
pub use run::{curve_tsv, parse_curve, smoothed, train, CurveRow, TrainOptions, TrainOutcome, CHECKPOINT_FILE, CURVE_FILE};
