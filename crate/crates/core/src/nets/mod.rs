//! The three sub-networks and the composed reconstruction pipeline, all
//! sized by a [`ScaleConfig`].

mod config;
mod corrnet;
mod dispnet;
pub mod layers;
mod pipeline;
mod recnet;

pub use config::{Ablation, ScaleConfig, Task, TAP_DOWNSAMPLE};
pub use corrnet::{build_cost_volume, CorrNet};
pub use dispnet::DispNetB;
pub use pipeline::{
    build_dispnet, Decoder, Prediction, StereoNet, CORRNET_PREFIX, DISPNET_PREFIX, ENCODER_PREFIX, POINT_PREFIX,
    VOLUME_PREFIX,
};
pub use recnet::{PointDecoder, RecEncoder, VolumeDecoder};

#[cfg(test)]
mod tests;
