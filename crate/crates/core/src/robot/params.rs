use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Joint types within one leg, in chain order.
pub const HAA: usize = 0;
pub const HFE: usize = 1;
pub const KFE: usize = 2;

/// Leg order used throughout: left-front, right-front, left-hind, right-hind.
pub const LEG_NAMES: [&str; 4] = ["LF", "RF", "LH", "RH"];
pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;

/// Geometry, inertia and actuation limits of the simulated quadruped.
///
/// Keys are documented in `README.md`; unknown keys are rejected on load and
/// missing keys fall back to [`RobotParams::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    pub base_half_length: f64,
    pub base_half_width: f64,
    /// Lateral offset between the abduction and flexion axes, pointing outward.
    pub hip_offset_lateral: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub base_mass: f64,
    /// Per leg `[thigh, shank]` point masses, located at the link midpoints.
    pub link_masses: [[f64; 2]; NUM_LEGS],
    /// `[min, max]` in rad, ordered like [`crate::robot::JointVector`].
    pub joint_limits: [[f64; 2]; NUM_JOINTS],
    pub torque_limit: f64,
    pub velocity_limit: f64,
    pub friction_coeff: f64,
    pub control_freq: f64,
    pub gravity_accel: f64,
    pub num_feet: usize,
    pub min_foot_clearance: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        let leg_limits = [[-0.7, 0.7], [-1.6, 1.6], [-2.3, 2.3]];
        let mut joint_limits = [[0.0; 2]; NUM_JOINTS];
        for (i, lim) in joint_limits.iter_mut().enumerate() {
            *lim = leg_limits[i % 3];
        }
        Self {
            base_half_length: 0.34,
            base_half_width: 0.19,
            hip_offset_lateral: 0.06,
            thigh_length: 0.25,
            shank_length: 0.33,
            base_mass: 25.0,
            link_masses: [[1.5, 0.9]; NUM_LEGS],
            joint_limits,
            torque_limit: 40.0,
            velocity_limit: 12.0,
            friction_coeff: 0.5,
            control_freq: 200.0,
            gravity_accel: 9.81,
            num_feet: NUM_LEGS,
            min_foot_clearance: 0.08,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_half_length", self.base_half_length),
            ("base_half_width", self.base_half_width),
            ("hip_offset_lateral", self.hip_offset_lateral),
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("base_mass", self.base_mass),
            ("torque_limit", self.torque_limit),
            ("velocity_limit", self.velocity_limit),
            ("friction_coeff", self.friction_coeff),
            ("control_freq", self.control_freq),
            ("gravity_accel", self.gravity_accel),
            ("min_foot_clearance", self.min_foot_clearance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (leg, m) in self.link_masses.iter().enumerate() {
            if m.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidParams(format!(
                    "link masses of leg {} must be positive",
                    LEG_NAMES[leg]
                )));
            }
        }
        for (j, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParams(format!(
                    "joint {j} limits must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        if self.num_feet != NUM_LEGS {
            return Err(Error::InvalidParams(format!(
                "num_feet must be {NUM_LEGS}, got {}",
                self.num_feet
            )));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.base_mass + self.link_masses.iter().flatten().sum::<f64>()
    }

    /// Hip (abduction axis) position of `leg` in the base frame.
    pub fn hip_position(&self, leg: usize) -> [f64; 3] {
        [
            self.longitudinal_sign(leg) * self.base_half_length,
            self.lateral_sign(leg) * self.base_half_width,
            0.0,
        ]
    }

    pub fn longitudinal_sign(&self, leg: usize) -> f64 {
        if leg < 2 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn lateral_sign(&self, leg: usize) -> f64 {
        if leg.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// Stable hex digest of the parameter set, recorded in data and weight files.
    pub fn hash_hex(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("params serialise");
        hex_digest(&bytes)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: Self = toml::from_str(s).map_err(|e| Error::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| Error::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Load from a `.toml` or `.json` file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RobotParams::default().validate().unwrap();
        assert!((RobotParams::default().total_mass() - 34.6).abs() < 1e-12);
    }

    #[test]
    fn toml_partial_override_and_unknown_key() {
        let p = RobotParams::from_toml_str("thigh_length = 0.3\nfriction_coeff = 0.8\n").unwrap();
        assert_eq!(p.thigh_length, 0.3);
        assert_eq!(p.shank_length, 0.33);
        assert!(RobotParams::from_toml_str("thigh = 0.3").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut p = RobotParams::default();
        p.joint_limits[4] = [1.0, -1.0];
        assert!(p.validate().is_err());
        let mut p = RobotParams::default();
        p.num_feet = 6;
        assert!(p.validate().is_err());
        let mut p = RobotParams::default();
        p.control_freq = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn hash_tracks_changes() {
        let a = RobotParams::default();
        let mut b = a.clone();
        assert_eq!(a.hash_hex(), b.hash_hex());
        b.base_mass += 1.0;
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
