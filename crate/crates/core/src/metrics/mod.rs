//! Training losses and evaluation metrics.
//!
//! Losses are built on a [`Graph`](crate::autodiff::Graph) so they can be
//! differentiated; evaluation scores work on plain slices.

mod losses;
pub mod nearest;
mod report;
mod scores;

pub use losses::{chamfer_loss, disparity_loss, volume_loss};
pub use report::{MetricKind, MetricReport};
pub use scores::{chamfer_distance, chamfer_distance_naive, epe, iou, IOU_THRESHOLD};
