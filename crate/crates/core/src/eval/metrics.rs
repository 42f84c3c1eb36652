use serde::{Deserialize, Serialize};

use crate::control::StateTrajectory;
use crate::dataset::RobotState;
use crate::robot::{check_kinematic_feasibility, forward_kinematics, RobotParams, NUM_LEGS};
use crate::stability::stability_label_in;

/// Where foot heights for contact inference come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FootSource {
    /// Forward kinematics of the state's joint angles, i.e. the geometry the
    /// oracle evaluates.
    #[default]
    Kinematic,
    /// The foot-position features stored in the state.
    Features,
}

/// Thresholds deciding which feet of a decoded state are in contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactThresholds {
    /// Minimum normal force in N.
    pub force: f64,
    /// Maximum height above the ground plane in m.
    pub height: f64,
    pub foot_source: FootSource,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self {
            force: 5.0,
            height: 0.005,
            foot_source: FootSource::Kinematic,
        }
    }
}

/// A foot is in contact if its normal force exceeds the force threshold and
/// it lies within the height threshold of the lowest such foot.
pub fn infer_contacts(x: &RobotState, th: &ContactThresholds, params: &RobotParams) -> [bool; NUM_LEGS] {
    let forces = x.forces();
    let feet = match th.foot_source {
        FootSource::Kinematic => forward_kinematics(&x.q(), params),
        FootSource::Features => x.feet(),
    };
    let loaded: [bool; NUM_LEGS] = std::array::from_fn(|i| forces.0[i].z > th.force);
    let ground = (0..NUM_LEGS)
        .filter(|&i| loaded[i])
        .map(|i| feet.0[i].z)
        .fold(f64::INFINITY, f64::min);
    std::array::from_fn(|i| loaded[i] && feet.0[i].z - ground <= th.height)
}

/// Largest absolute forward-Euler joint velocity and acceleration.
pub fn motion_extrema(q: &[[f64; 12]], rate: f64) -> (f64, f64) {
    let vel: Vec<[f64; 12]> = q
        .windows(2)
        .map(|w| std::array::from_fn(|j| (w[1][j] - w[0][j]) * rate))
        .collect();
    let max_abs = |rows: &[[f64; 12]]| rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let acc: Vec<[f64; 12]> = vel
        .windows(2)
        .map(|w| std::array::from_fn(|j| (w[1][j] - w[0][j]) * rate))
        .collect();
    (max_abs(&vel), max_abs(&acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicFeasibility {
    pub feasible: bool,
    pub max_abs_velocity: f64,
}

/// Feasible iff every joint speed stays strictly below the velocity limit.
pub fn dynamic_feasibility(q: &[[f64; 12]], rate: f64, params: &RobotParams) -> DynamicFeasibility {
    let (v, _) = motion_extrema(q, rate);
    DynamicFeasibility {
        feasible: v < params.velocity_limit,
        max_abs_velocity: v,
    }
}

/// Largest change of any distance between two initially contacting feet.
pub fn support_foot_drift(traj: &StateTrajectory, contacts: [bool; NUM_LEGS], params: &RobotParams) -> f64 {
    let pairs: Vec<(usize, usize)> = (0..NUM_LEGS)
        .flat_map(|i| (i + 1..NUM_LEGS).map(move |j| (i, j)))
        .filter(|&(i, j)| contacts[i] && contacts[j])
        .collect();
    let dists = |s: &RobotState| -> Vec<f64> {
        let f = forward_kinematics(&s.q(), params);
        pairs.iter().map(|&(i, j)| (f.0[i] - f.0[j]).norm()).collect()
    };
    let Some(first) = traj.states.first() else {
        return 0.0;
    };
    let d0 = dists(first);
    traj.states
        .iter()
        .map(|s| dists(s).iter().zip(&d0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        .fold(0.0, f64::max)
}

pub fn all_kinematically_feasible(traj: &StateTrajectory, params: &RobotParams) -> bool {
    traj.states
        .iter()
        .all(|s| check_kinematic_feasibility(&s.q(), params).is_ok())
}

/// Oracle stability of a state with contacts inferred from the state itself.
pub fn final_pose_stable(x: &RobotState, margin: f64, params: &RobotParams, th: &ContactThresholds) -> bool {
    let contacts = infer_contacts(x, th, params);
    stability_label_in(&x.q(), contacts, params, margin, x.gravity())
        .map(|v| v.stable)
        .unwrap_or(false)
}

/// Success at each margin: final pose stable and every pose kinematically
/// feasible.
pub fn episode_success_margins(
    traj: &StateTrajectory,
    margins: &[f64],
    params: &RobotParams,
    th: &ContactThresholds,
) -> Vec<bool> {
    let feasible = !traj.is_empty() && all_kinematically_feasible(traj, params);
    margins
        .iter()
        .map(|&m| feasible && final_pose_stable(traj.last(), m, params, th))
        .collect()
}

pub fn episode_success(traj: &StateTrajectory, margin: f64, params: &RobotParams, th: &ContactThresholds) -> bool {
    episode_success_margins(traj, &[margin], params, th)[0]
}
