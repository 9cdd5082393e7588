use super::math::{Mat3, V3};
use crate::{Error, Result};

/// Rectified pinhole stereo rig. The two cameras share orientation and sit
/// at `∓baseline/2` along the camera x axis; image rows are epipolar lines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoCamera {
    pub focal_mm: f64,
    pub sensor_mm: f64,
    pub baseline_mm: f64,
    pub width: usize,
    pub height: usize,
}

impl StereoCamera {
    /// 35 mm lens on a 32 mm sensor with a 130 mm baseline.
    pub fn paper(width: usize, height: usize) -> Self {
        Self {
            focal_mm: 35.0,
            sensor_mm: 32.0,
            baseline_mm: 130.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.focal_mm > 0.0
            && self.sensor_mm > 0.0
            && self.baseline_mm > 0.0
            && self.width > 0
            && self.height > 0
            && self.focal_mm.is_finite()
            && self.sensor_mm.is_finite()
            && self.baseline_mm.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid stereo camera {self:?}")))
        }
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_mm / self.sensor_mm * self.width as f64
    }

    pub fn baseline_m(&self) -> f64 {
        self.baseline_mm / 1000.0
    }

    /// Principal point `(cx, cy)`; pixel `(i, j)` has its centre at `(i + 0.5, j + 0.5)`.
    pub fn principal(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Camera centre x offset in rig coordinates.
    pub fn eye_offset(&self, view: View) -> f64 {
        match view {
            View::Left => -self.baseline_m() / 2.0,
            View::Right => self.baseline_m() / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Left,
    Right,
}

/// Object placement relative to the rig: rotation about the object's up
/// axis, viewing elevation, and distance from the rig centre to the object
/// origin along the optical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
}

impl Pose {
    pub fn rotation(&self) -> Mat3 {
        Mat3::rot_x(self.elevation_deg.to_radians()).mul(&Mat3::rot_y(self.azimuth_deg.to_radians()))
    }

    /// Object frame (y up) to rig frame (x right, y down, z forward).
    pub fn to_rig(&self, rot: &Mat3, p: V3) -> V3 {
        let v = rot.apply(p);
        [v[0], -v[1], v[2] + self.distance_m]
    }

    pub fn to_object(&self, rot: &Mat3, q: V3) -> V3 {
        rot.transpose().apply([q[0], -q[1], q[2] - self.distance_m])
    }
}

/// Directional light plus ambient term, and the procedural surface texture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lighting {
    /// Direction the light travels, in rig coordinates.
    pub direction: V3,
    pub intensity: f64,
    pub ambient: f64,
    pub background: [f64; 3],
    /// Relative albedo modulation of the solid texture (0 disables it).
    pub texture_amp: f64,
    pub texture_seed: u64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            direction: super::math::normalize([0.4, 0.6, 1.0]),
            intensity: 0.75,
            ambient: 0.3,
            background: [0.5; 3],
            texture_amp: 0.25,
            texture_seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_focal_length() {
        assert_eq!(StereoCamera::paper(224, 224).focal_px(), 245.0);
    }

    #[test]
    fn pose_roundtrip() {
        let pose = Pose {
            azimuth_deg: 37.0,
            elevation_deg: -12.0,
            distance_m: 2.2,
        };
        let r = pose.rotation();
        let p = [0.1, -0.3, 0.25];
        let back = pose.to_object(&r, pose.to_rig(&r, p));
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-12);
        }
    }
}
