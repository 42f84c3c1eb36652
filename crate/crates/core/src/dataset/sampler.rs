use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stance::{stance_encoding, StanceId, SWING_ORDER};
use super::{RobotState, Sample};
use crate::error::{Error, Result};
use crate::robot::kinematics::flexion_axis_point;
use crate::robot::{
    check_kinematic_feasibility, com_position, forward_kinematics, inverse_kinematics, FootPositions, KneeBend,
    RobotParams, Vec3, NUM_LEGS,
};
use crate::stability::{distribute_contact_forces, gravity_vector, stability_label_in, static_joint_torques_in};

/// Settings of the static-pose sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Base height above the ground.
    pub stand_height: f64,
    /// Crawl step length.
    pub step_length: f64,
    /// Half-widths of the uniform CoM offset box, `[longitudinal, lateral]`.
    pub com_range: [f64; 2],
    /// Candidate heights of the swing foot.
    pub swing_heights: Vec<f64>,
    /// Append the CoM to the state vector.
    pub with_com: bool,
    /// Half-width of uniform roll and pitch draws; 0 keeps the base level.
    pub tilt_range: f64,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            stand_height: 0.48,
            step_length: 0.12,
            com_range: [0.12, 0.10],
            swing_heights: vec![0.0, 0.04, 0.08, 0.12],
            with_com: false,
            tilt_range: 0.0,
            max_attempts: 1000,
        }
    }
}

/// Random quantities behind one accepted sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDraw {
    /// Base shift relative to the footprint centre, `[longitudinal, lateral]`.
    pub com_offset: [f64; 2],
    pub swing_height: f64,
    /// Progress of the swing in `[0, 1]`; 0 for all-contact stances.
    pub swing_phase: f64,
    pub roll: f64,
    pub pitch: f64,
    pub attempts: usize,
}

/// Longitudinal foothold offsets of the crawl for `stance` at swing progress
/// `u`. Before each swing the swinging foot is the rearmost at `-3L/8`; it
/// lands at `+3L/8` while the other feet drift back by `L/4`.
pub fn footprint_offsets(stance: StanceId, u: f64, step_length: f64) -> [f64; NUM_LEGS] {
    let l = step_length;
    let k = stance.phase();
    let mut out = [0.0; NUM_LEGS];
    for (m, &leg) in SWING_ORDER.iter().enumerate() {
        let r = (m + 4 - k) % 4;
        let resting = -3.0 * l / 8.0 + r as f64 * l / 4.0;
        out[leg] = if stance.is_all_contact() {
            resting
        } else if r == 0 {
            -3.0 * l / 8.0 + u * 3.0 * l / 4.0
        } else {
            resting - u * l / 4.0
        };
    }
    out
}

/// Nominal ground contact point of `leg`, world frame (footprint centre at
/// the origin).
pub fn nominal_foothold(leg: usize, params: &RobotParams) -> Vec3 {
    let p = flexion_axis_point(0.0, leg, params);
    Vec3::new(p.x, p.y, 0.0)
}

pub fn sample_configuration(
    stance: StanceId,
    rng_seed: u64,
    params: &RobotParams,
    config: &SamplerConfig,
) -> Result<Sample> {
    sample_configuration_detailed(stance, rng_seed, params, config).map(|(s, _)| s)
}

/// Draw a labelled static state in `stance`, rejecting kinematically
/// infeasible draws.
pub fn sample_configuration_detailed(
    stance: StanceId,
    rng_seed: u64,
    params: &RobotParams,
    config: &SamplerConfig,
) -> Result<(Sample, SampleDraw)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let knees: [KneeBend; NUM_LEGS] = std::array::from_fn(KneeBend::default_for_leg);
    let contact_flags = stance.contact_flags();
    for attempt in 1..=config.max_attempts {
        let dx = rng.random_range(-config.com_range[0]..=config.com_range[0]);
        let dy = rng.random_range(-config.com_range[1]..=config.com_range[1]);
        let (u, swing_height) = if stance.is_all_contact() {
            (0.0, 0.0)
        } else {
            let u = rng.random_range(0.0..=1.0);
            let h = config.swing_heights[rng.random_range(0..config.swing_heights.len())];
            (u, h)
        };
        let (roll, pitch) = if config.tilt_range > 0.0 {
            (
                rng.random_range(-config.tilt_range..=config.tilt_range),
                rng.random_range(-config.tilt_range..=config.tilt_range),
            )
        } else {
            (0.0, 0.0)
        };
        let draw = SampleDraw {
            com_offset: [dx, dy],
            swing_height,
            swing_phase: u,
            roll,
            pitch,
            attempts: attempt,
        };

        let offsets = footprint_offsets(stance, u, config.step_length);
        let base = Vec3::new(dx, dy, config.stand_height);
        let tilted = roll != 0.0 || pitch != 0.0;
        let rot = Rotation3::from_euler_angles(roll, pitch, 0.0);
        let feet = FootPositions(std::array::from_fn(|leg| {
            let mut w = nominal_foothold(leg, params) + Vec3::new(offsets[leg], 0.0, 0.0);
            if !contact_flags[leg] {
                w.z += swing_height;
            }
            if tilted {
                rot.inverse() * (w - base)
            } else {
                w - base
            }
        }));
        let g = if tilted {
            rot.inverse() * gravity_vector(params)
        } else {
            gravity_vector(params)
        };

        let Ok(q) = inverse_kinematics(&feet, params, knees) else {
            continue;
        };
        if !check_kinematic_feasibility(&q, params).is_ok() {
            continue;
        }
        let fk = forward_kinematics(&q, params);
        let com = com_position(&q, params);
        let Ok(forces) = distribute_contact_forces(contact_flags, &fk, com, params.total_mass(), g) else {
            continue;
        };
        let torques = static_joint_torques_in(&q, &forces, params, g);
        let y = stability_label_in(&q, contact_flags, params, 0.0, g)?.stable;

        let mut x = Vec::with_capacity(super::layout::dim(config.with_com));
        x.extend_from_slice(&q.0);
        x.extend_from_slice(&fk.flat());
        x.extend_from_slice(&torques);
        x.extend_from_slice(&forces.flat());
        x.extend_from_slice(g.as_slice());
        if config.with_com {
            x.extend_from_slice(com.as_slice());
        }
        let sample = Sample {
            x: RobotState(x),
            y,
            s: stance_encoding(stance),
            stance_id: stance,
            contact_flags,
        };
        return Ok((sample, draw));
    }
    Err(Error::SamplingExhausted {
        attempts: config.max_attempts,
    })
}
