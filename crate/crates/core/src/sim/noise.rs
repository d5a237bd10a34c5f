//! Localization noise presets.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::normalize_angle;
use crate::tracking::PoseEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationMode {
    #[default]
    Ideal,
    Rtk,
    Typical,
    Degraded,
}

impl LocalizationMode {
    /// Position standard deviation per axis, m.
    pub fn position_sigma(self) -> f64 {
        match self {
            LocalizationMode::Ideal => 0.0,
            LocalizationMode::Rtk => 0.02,
            LocalizationMode::Typical => 0.05,
            LocalizationMode::Degraded => 0.20,
        }
    }

    /// Heading standard deviation, rad.
    pub fn heading_sigma(self) -> f64 {
        match self {
            LocalizationMode::Ideal => 0.0,
            LocalizationMode::Rtk | LocalizationMode::Typical => 0.2f64.to_radians(),
            LocalizationMode::Degraded => 0.5f64.to_radians(),
        }
    }
}

/// Adds zero-mean white Gaussian noise to a pose. `Ideal` returns the pose
/// unchanged without touching `rng`.
pub fn localization_noise<R: Rng + ?Sized>(pose: &PoseEstimate, mode: LocalizationMode, rng: &mut R) -> PoseEstimate {
    if mode == LocalizationMode::Ideal {
        return *pose;
    }
    let pos = Normal::new(0.0, mode.position_sigma()).expect("finite sigma");
    let head = Normal::new(0.0, mode.heading_sigma()).expect("finite sigma");
    let dx = pos.sample(rng);
    let dy = pos.sample(rng);
    let dpsi = head.sample(rng);
    PoseEstimate::new(pose.x + dx, pose.y + dy, normalize_angle(pose.psi + dpsi))
}
