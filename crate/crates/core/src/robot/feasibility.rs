use super::kinematics::{leg_points, JointVector, Vec3};
use super::params::{RobotParams, NUM_LEGS};

/// Outcome of the kinematic feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum KinematicStatus {
    Ok,
    /// Indices into the joint vector of every joint outside its limits.
    JointLimitViolation(Vec<usize>),
    /// Legs whose shanks or feet come closer than the clearance threshold.
    SelfCollision(usize, usize),
}

impl KinematicStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, KinematicStatus::Ok)
    }
}

/// Minimum distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

pub fn joint_limit_violations(q: &JointVector, params: &RobotParams) -> Vec<usize> {
    q.0.iter()
        .zip(params.joint_limits.iter())
        .enumerate()
        .filter(|(_, (v, [lo, hi]))| !(**v >= *lo && **v <= *hi))
        .map(|(i, _)| i)
        .collect()
}

/// Smallest clearance between any pair of shanks or feet.
pub fn min_leg_clearance(q: &JointVector, params: &RobotParams) -> (f64, usize, usize) {
    let pts: Vec<[Vec3; 3]> = (0..NUM_LEGS).map(|l| leg_points(q.leg(l), l, params)).collect();
    let mut best = (f64::INFINITY, 0, 0);
    for a in 0..NUM_LEGS {
        for b in a + 1..NUM_LEGS {
            let seg = segment_distance(pts[a][1], pts[a][2], pts[b][1], pts[b][2]);
            let feet = (pts[a][2] - pts[b][2]).norm();
            let d = seg.min(feet);
            if d < best.0 {
                best = (d, a, b);
            }
        }
    }
    best
}

pub fn check_kinematic_feasibility(q: &JointVector, params: &RobotParams) -> KinematicStatus {
    let violations = joint_limit_violations(q, params);
    if !violations.is_empty() {
        return KinematicStatus::JointLimitViolation(violations);
    }
    let (d, a, b) = min_leg_clearance(q, params);
    if d < params.min_foot_clearance {
        return KinematicStatus::SelfCollision(a, b);
    }
    KinematicStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::kinematics::{inverse_kinematics, FootPositions, KneeBend};

    pub(crate) fn standing_pose(params: &RobotParams) -> JointVector {
        let feet = FootPositions(std::array::from_fn(|leg| {
            let h = params.hip_position(leg);
            Vec3::new(h[0], h[1] + params.lateral_sign(leg) * params.hip_offset_lateral, -0.48)
        }));
        inverse_kinematics(&feet, params, std::array::from_fn(KneeBend::default_for_leg)).unwrap()
    }

    #[test]
    fn nominal_stand_is_ok() {
        let p = RobotParams::default();
        assert_eq!(check_kinematic_feasibility(&standing_pose(&p), &p), KinematicStatus::Ok);
    }

    #[test]
    fn joint_past_limit() {
        let p = RobotParams::default();
        let mut q = standing_pose(&p);
        q.0[4] = p.joint_limits[4][1] + 0.01;
        assert_eq!(
            check_kinematic_feasibility(&q, &p),
            KinematicStatus::JointLimitViolation(vec![4])
        );
    }

    #[test]
    fn feet_at_same_point_collide() {
        let p = RobotParams::default();
        let target = Vec3::new(0.34, 0.0, -0.45);
        let feet = FootPositions([
            target,
            target,
            Vec3::new(-0.34, 0.25, -0.48),
            Vec3::new(-0.34, -0.25, -0.48),
        ]);
        let q = inverse_kinematics(&feet, &p, std::array::from_fn(KneeBend::default_for_leg)).unwrap();
        assert_eq!(
            check_kinematic_feasibility(&q, &p),
            KinematicStatus::SelfCollision(0, 1)
        );
    }

    #[test]
    fn segment_distance_cases() {
        let z = Vec3::zeros();
        let x = Vec3::new(1.0, 0.0, 0.0);
        let d = segment_distance(z, x, Vec3::new(0.5, 1.0, 0.0), Vec3::new(0.5, 1.0, 1.0));
        assert!((d - 1.0).abs() < 1e-15);
        let d = segment_distance(z, x, Vec3::new(2.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-15);
        let d = segment_distance(z, x, Vec3::new(0.5, -1.0, 0.0), Vec3::new(0.5, 1.0, 0.0));
        assert!(d.abs() < 1e-15);
    }
}
