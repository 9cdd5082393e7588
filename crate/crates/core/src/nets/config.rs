use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Spatial downsampling of the encoder tap that feeds the cost volume.
pub const TAP_DOWNSAMPLE: usize = 4;

/// Every architectural dimension of the three networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Width of the first stage of DispNet-B and of the RecNet encoder.
    pub base_channels: usize,
    /// Length `F` of each view's encoder feature vector.
    pub feature_len: usize,
    /// Length `G` of the CorrNet feature vector.
    pub corr_len: usize,
    /// Channel count of the nine 3-D convolution stages in CorrNet.
    pub corr_channels: usize,
    /// Output resolution `R` of the volume decoder.
    pub volume_res: usize,
    pub n_points: usize,
    /// Largest disparity in pixels at input resolution.
    pub max_disp: usize,
    pub shift: usize,
}

impl ScaleConfig {
    pub fn paper() -> Self {
        Self {
            input_h: 137,
            input_w: 137,
            base_channels: 16,
            feature_len: 8192,
            corr_len: 4096,
            corr_channels: 128,
            volume_res: 32,
            n_points: 1024,
            max_disp: 48,
            shift: 1,
        }
    }

    /// Small configuration trainable on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            base_channels: 8,
            feature_len: 64,
            corr_len: 32,
            corr_channels: 8,
            volume_res: 16,
            n_points: 256,
            max_disp: 16,
            shift: 1,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown scale `{name}` (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_h", self.input_h),
            ("input_w", self.input_w),
            ("base_channels", self.base_channels),
            ("feature_len", self.feature_len),
            ("corr_len", self.corr_len),
            ("corr_channels", self.corr_channels),
            ("volume_res", self.volume_res),
            ("n_points", self.n_points),
            ("max_disp", self.max_disp),
            ("shift", self.shift),
        ];
        if let Some((k, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.input_h < 8 || self.input_w < 8 {
            return Err(Error::Config("input must be at least 8x8".into()));
        }
        if !self.feature_len.is_multiple_of(8) || !self.corr_len.is_multiple_of(16) {
            return Err(Error::Config(
                "feature_len must be a multiple of 8 and corr_len a multiple of 16".into(),
            ));
        }
        self.volume_upsamples()?;
        if self.feature_disp() < 1 {
            return Err(Error::Config(format!(
                "max_disp {} is below one pixel at 1/{TAP_DOWNSAMPLE} scale",
                self.max_disp
            )));
        }
        Ok(())
    }

    /// Number of stride-2 stages taking the 2³ seed to `R³`.
    pub fn volume_upsamples(&self) -> Result<usize> {
        let r = self.volume_res;
        if r < 4 || !r.is_power_of_two() || r > 512 {
            return Err(Error::Config(format!(
                "volume_res {r} is not reachable from a 2^3 seed by doubling within nine stages"
            )));
        }
        Ok(r.trailing_zeros() as usize - 1)
    }

    /// Maximum disparity at the resolution of the encoder tap.
    pub fn feature_disp(&self) -> usize {
        (self.max_disp as f64 / TAP_DOWNSAMPLE as f64).round() as usize
    }

    /// Number of disparity levels `D_f` in the cost volume.
    pub fn disp_levels(&self) -> usize {
        self.feature_disp() / self.shift + 1
    }

    pub fn header(&self) -> Vec<(String, String)> {
        [
            ("input_h", self.input_h),
            ("input_w", self.input_w),
            ("base_channels", self.base_channels),
            ("feature_len", self.feature_len),
            ("corr_len", self.corr_len),
            ("corr_channels", self.corr_channels),
            ("volume_res", self.volume_res),
            ("n_points", self.n_points),
            ("max_disp", self.max_disp),
            ("shift", self.shift),
        ]
        .into_iter()
        .map(|(k, v)| (format!("scale.{k}"), v.to_string()))
        .collect()
    }

    pub fn from_header(header: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            let key = format!("scale.{k}");
            let v = header
                .iter()
                .find(|(hk, _)| *hk == key)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Config(format!("checkpoint header lacks `{key}`")))?;
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        };
        let cfg = Self {
            input_h: get("input_h")?,
            input_w: get("input_w")?,
            base_channels: get("base_channels")?,
            feature_len: get("feature_len")?,
            corr_len: get("corr_len")?,
            corr_channels: get("corr_channels")?,
            volume_res: get("volume_res")?,
            n_points: get("n_points")?,
            max_disp: get("max_disp")?,
            shift: get("shift")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// What the reconstruction head produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Volume,
    Point,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Volume => "volume",
            Task::Point => "point",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(Task::Volume),
            "point" => Ok(Task::Point),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

/// Ablation switches of the full pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Skip DispNet-B and feed RGB only to the encoder.
    pub no_disp: bool,
    /// Drop CorrNet; the decoders see `2F` features.
    pub no_corr: bool,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation { no_disp: false, no_corr: false },
        Ablation { no_disp: false, no_corr: true },
        Ablation { no_disp: true, no_corr: false },
        Ablation { no_disp: true, no_corr: true },
    ];

    pub fn label(self) -> &'static str {
        match (self.no_disp, self.no_corr) {
            (false, false) => "full",
            (false, true) => "no-corrnet",
            (true, false) => "no-dispnet",
            (true, true) => "neither",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ScaleConfig::paper().validate().unwrap();
        ScaleConfig::desk().validate().unwrap();
        assert_eq!(ScaleConfig::paper().volume_upsamples().unwrap(), 4);
        assert_eq!(ScaleConfig::desk().volume_upsamples().unwrap(), 3);
        assert_eq!(ScaleConfig::paper().disp_levels(), 13);
        assert_eq!(ScaleConfig::desk().disp_levels(), 5);
    }

    #[test]
    fn rejects_unreachable_resolution() {
        for r in [0, 2, 24, 1024] {
            let cfg = ScaleConfig {
                volume_res: r,
                ..ScaleConfig::desk()
            };
            assert!(cfg.validate().is_err(), "R = {r}");
        }
    }

    #[test]
    fn rejects_tiny_disparity() {
        let cfg = ScaleConfig {
            max_disp: 1,
            ..ScaleConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn header_roundtrip() {
        let cfg = ScaleConfig {
            n_points: 128,
            ..ScaleConfig::desk()
        };
        assert_eq!(ScaleConfig::from_header(&cfg.header()).unwrap(), cfg);
        assert!(ScaleConfig::from_header(&cfg.header()[1..]).is_err());
    }
}
