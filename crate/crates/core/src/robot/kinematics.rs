//! Leg kinematics of the 12-DoF quadruped.
//!
//! Each leg is a hip-abduction joint (rotation about the base x axis at the
//! hip), a fixed lateral offset, then a planar hip-flexion / knee chain. With
//! all joints at zero the legs point straight down. A positive flexion or knee
//! angle swings the distal link toward +x, so a positive knee angle bends the
//! knee rearward.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::params::{RobotParams, HAA, KFE, NUM_JOINTS, NUM_LEGS};
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Joint angles ordered `[LF, RF, LH, RH] x [HAA, HFE, KFE]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointVector(pub [f64; NUM_JOINTS]);

impl JointVector {
    pub fn zeros() -> Self {
        Self([0.0; NUM_JOINTS])
    }

    pub fn from_slice(q: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_JOINTS] = q
            .try_into()
            .map_err(|_| Error::ShapeMismatch(format!("expected 12 joints, got {}", q.len())))?;
        Ok(Self(arr))
    }

    pub fn leg(&self, leg: usize) -> [f64; 3] {
        [self.0[3 * leg], self.0[3 * leg + 1], self.0[3 * leg + 2]]
    }

    pub fn set_leg(&mut self, leg: usize, angles: [f64; 3]) {
        self.0[3 * leg..3 * leg + 3].copy_from_slice(&angles);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Reflect across the sagittal plane: swap left and right legs and negate
    /// abduction.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::zeros();
        for leg in 0..NUM_LEGS {
            let mut a = self.leg(leg ^ 1);
            a[HAA] = -a[HAA];
            out.set_leg(leg, a);
        }
        out
    }
}

/// Foot positions in the base frame, one per leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootPositions(pub [Vec3; NUM_LEGS]);

impl FootPositions {
    pub fn flat(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, p) in self.0.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Self {
        Self(std::array::from_fn(|i| Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])))
    }
}

/// Sign of the knee angle chosen by inverse kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KneeBend {
    /// Knee angle >= 0, knee points rearward.
    Positive,
    Negative,
}

impl KneeBend {
    /// Front knees point rearward, hind knees forward.
    pub fn default_for_leg(leg: usize) -> Self {
        if leg < 2 {
            KneeBend::Positive
        } else {
            KneeBend::Negative
        }
    }

    pub fn of_angle(knee: f64) -> Self {
        if knee >= 0.0 {
            KneeBend::Positive
        } else {
            KneeBend::Negative
        }
    }

    fn sign(self) -> f64 {
        match self {
            KneeBend::Positive => 1.0,
            KneeBend::Negative => -1.0,
        }
    }
}

fn hip(params: &RobotParams, leg: usize) -> Vec3 {
    Vec3::from(params.hip_position(leg))
}

fn lateral_offset(params: &RobotParams, leg: usize) -> f64 {
    params.lateral_sign(leg) * params.hip_offset_lateral
}

/// Rotation about x by `a` applied to `v`.
#[inline]
fn rot_x(a: f64, v: Vec3) -> Vec3 {
    let (s, c) = a.sin_cos();
    Vec3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
}

/// Joint points of one leg in the base frame: `[hip, knee, foot]`.
pub fn leg_points(q_leg: [f64; 3], leg: usize, params: &RobotParams) -> [Vec3; 3] {
    let [a, h, k] = q_leg;
    let (l1, l2) = (params.thigh_length, params.shank_length);
    let d = lateral_offset(params, leg);
    let hip = hip(params, leg);
    let knee_local = Vec3::new(l1 * h.sin(), d, -l1 * h.cos());
    let foot_local = knee_local + Vec3::new(l2 * (h + k).sin(), 0.0, -l2 * (h + k).cos());
    [hip, hip + rot_x(a, knee_local), hip + rot_x(a, foot_local)]
}

pub fn leg_forward_kinematics(q_leg: [f64; 3], leg: usize, params: &RobotParams) -> Vec3 {
    leg_points(q_leg, leg, params)[2]
}

pub fn forward_kinematics(q: &JointVector, params: &RobotParams) -> FootPositions {
    FootPositions(std::array::from_fn(|leg| {
        leg_forward_kinematics(q.leg(leg), leg, params)
    }))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Analytic inverse kinematics of one leg.
///
/// The solution keeps the foot below the hip-flexion axis (the standing
/// workspace) and takes the knee sign from `knee`.
pub fn leg_inverse_kinematics(target: Vec3, leg: usize, params: &RobotParams, knee: KneeBend) -> Result<[f64; 3]> {
    let (l1, l2) = (params.thigh_length, params.shank_length);
    let d = lateral_offset(params, leg);
    let rel = target - hip(params, leg);
    let reach_max = l1 + l2;
    let reach_min = (l1 - l2).abs();
    let unreachable = || Error::Unreachable {
        leg,
        distance: rel.norm(),
        min: reach_min,
        max: reach_max,
    };

    let r2 = rel.y * rel.y + rel.z * rel.z;
    if r2 < d * d {
        return Err(unreachable());
    }
    let zs = -(r2 - d * d).sqrt();
    let abduction = wrap_angle(rel.z.atan2(rel.y) - zs.atan2(d));

    let dist2 = rel.x * rel.x + zs * zs;
    let dist = dist2.sqrt();
    let tol = 1e-12;
    if dist > reach_max + tol || dist < reach_min - tol {
        return Err(unreachable());
    }
    // cos(k) = (D^2 - l1^2 - l2^2) / (2 l1 l2), evaluated through factored
    // forms of 1 - cos and 1 + cos to keep precision near the reach limits.
    let denom = 2.0 * l1 * l2;
    let one_minus = ((reach_max - dist) * (reach_max + dist) / denom).max(0.0);
    let one_plus = ((dist - reach_min) * (dist + reach_min) / denom).max(0.0);
    let cos_k = (dist2 - l1 * l1 - l2 * l2) / denom;
    let sin_k = (one_minus * one_plus).sqrt();
    let knee_angle = knee.sign() * sin_k.atan2(cos_k.clamp(-1.0, 1.0));
    let flexion = rel.x.atan2(-zs) - (l2 * knee_angle.sin()).atan2(l1 + l2 * knee_angle.cos());
    Ok([abduction, wrap_angle(flexion), knee_angle])
}

/// Solve all four legs, each with its own knee convention.
pub fn inverse_kinematics(
    feet: &FootPositions,
    params: &RobotParams,
    knees: [KneeBend; NUM_LEGS],
) -> Result<JointVector> {
    let mut q = JointVector::zeros();
    for (leg, knee) in knees.into_iter().enumerate() {
        q.set_leg(leg, leg_inverse_kinematics(feet.0[leg], leg, params, knee)?);
    }
    Ok(q)
}

/// Analytic Jacobian of the foot position with respect to the leg's joints.
/// Column `j` is the derivative with respect to joint `j` of the leg.
pub fn leg_jacobian(q_leg: [f64; 3], leg: usize, params: &RobotParams) -> Matrix3<f64> {
    chain_point_jacobian(q_leg, leg, params, params.thigh_length, params.shank_length)
}

/// Jacobian of the point `along_thigh` metres down the thigh and then
/// `along_shank` metres down the shank. The foot is `(thigh, shank)`.
pub fn chain_point_jacobian(
    q_leg: [f64; 3],
    leg: usize,
    params: &RobotParams,
    along_thigh: f64,
    along_shank: f64,
) -> Matrix3<f64> {
    let [a, h, k] = q_leg;
    let (u, w) = (along_thigh, along_shank);
    let d = lateral_offset(params, leg);
    let zs = -u * h.cos() - w * (h + k).cos();
    let (sa, ca) = a.sin_cos();
    let d_abd = Vec3::new(0.0, -sa * d - ca * zs, ca * d - sa * zs);
    let d_flex = rot_x(
        a,
        Vec3::new(u * h.cos() + w * (h + k).cos(), 0.0, u * h.sin() + w * (h + k).sin()),
    );
    let d_knee = rot_x(a, Vec3::new(w * (h + k).cos(), 0.0, w * (h + k).sin()));
    Matrix3::from_columns(&[d_abd, d_flex, d_knee])
}

/// Point masses of the robot: base centre plus thigh and shank midpoints.
pub fn mass_points(q: &JointVector, params: &RobotParams) -> Vec<(f64, Vec3)> {
    let mut out = Vec::with_capacity(1 + 2 * NUM_LEGS);
    out.push((params.base_mass, Vec3::zeros()));
    for leg in 0..NUM_LEGS {
        let [_, knee, foot] = leg_points(q.leg(leg), leg, params);
        let thigh_start = flexion_axis_point(q.leg(leg)[HAA], leg, params);
        out.push((params.link_masses[leg][0], 0.5 * (thigh_start + knee)));
        out.push((params.link_masses[leg][1], 0.5 * (knee + foot)));
    }
    out
}

/// Where the thigh starts: the hip-flexion axis after the lateral offset.
pub fn flexion_axis_point(abduction: f64, leg: usize, params: &RobotParams) -> Vec3 {
    hip(params, leg) + rot_x(abduction, Vec3::new(0.0, lateral_offset(params, leg), 0.0))
}

pub fn com_position(q: &JointVector, params: &RobotParams) -> Vec3 {
    let pts = mass_points(q, params);
    let total: f64 = pts.iter().map(|(m, _)| m).sum();
    pts.iter().fold(Vec3::zeros(), |acc, (m, p)| acc + *m * p) / total
}

/// Index of joint `kind` (HAA/HFE/KFE) of `leg` in a [`JointVector`].
pub fn joint_index(leg: usize, kind: usize) -> usize {
    debug_assert!(kind <= KFE && leg < NUM_LEGS);
    3 * leg + kind
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::params::HFE;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn zero_pose_legs_straight_down() {
        let p = params();
        let feet = forward_kinematics(&JointVector::zeros(), &p);
        for leg in 0..4 {
            let h = p.hip_position(leg);
            let f = feet.0[leg];
            assert_relative_eq!(f.x, h[0], epsilon = 1e-15);
            assert_relative_eq!(f.y, h[1] + p.lateral_sign(leg) * p.hip_offset_lateral, epsilon = 1e-15);
            assert_relative_eq!(f.z, -(p.thigh_length + p.shank_length), epsilon = 1e-15);
        }
    }

    #[test]
    fn right_angle_knee() {
        let p = params();
        let mut q = JointVector::zeros();
        q.set_leg(0, [0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let f = forward_kinematics(&q, &p).0[0];
        let base = flexion_axis_point(0.0, 0, &p);
        assert_relative_eq!(f.x - base.x, 0.33, epsilon = 1e-12);
        assert_relative_eq!(f.y - base.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.z - base.z, -0.25, epsilon = 1e-12);
    }

    #[test]
    fn ik_straight_and_folded() {
        let p = params();
        let below = flexion_axis_point(0.0, 1, &p) - Vec3::new(0.0, 0.0, 0.58);
        let q = leg_inverse_kinematics(below, 1, &p, KneeBend::Positive).unwrap();
        for v in q {
            assert!(v.abs() < 1e-7, "{q:?}");
        }
        let folded = flexion_axis_point(0.0, 0, &p) - Vec3::new(0.0, 0.0, 0.08);
        let q = leg_inverse_kinematics(folded, 0, &p, KneeBend::Positive).unwrap();
        assert_relative_eq!(q[KFE], PI, epsilon = 1e-6);
    }

    #[test]
    fn ik_rejects_out_of_reach() {
        let p = params();
        let far = flexion_axis_point(0.0, 2, &p) - Vec3::new(0.0, 0.0, 0.6);
        assert!(matches!(
            leg_inverse_kinematics(far, 2, &p, KneeBend::Negative),
            Err(Error::Unreachable { .. })
        ));
        let near = flexion_axis_point(0.0, 2, &p) - Vec3::new(0.0, 0.0, 0.05);
        assert!(leg_inverse_kinematics(near, 2, &p, KneeBend::Negative).is_err());
    }

    #[test]
    fn ik_round_trip_random_targets() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        while count < 1000 {
            let leg = rng.random_range(0..4);
            let base = flexion_axis_point(0.0, leg, &p);
            let t = base
                + Vec3::new(
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.6..-0.1),
                );
            let knee = if rng.random_bool(0.5) {
                KneeBend::Positive
            } else {
                KneeBend::Negative
            };
            if let Ok(q) = leg_inverse_kinematics(t, leg, &p, knee) {
                let back = leg_forward_kinematics(q, leg, &p);
                worst = worst.max((back - t).norm());
                count += 1;
            }
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..1000 {
            let leg = rng.random_range(0..4);
            let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let jac = leg_jacobian(q, leg, &p);
            for j in 0..3 {
                let mut qp = q;
                let mut qm = q;
                qp[j] += h;
                qm[j] -= h;
                let fd = (leg_forward_kinematics(qp, leg, &p) - leg_forward_kinematics(qm, leg, &p)) / (2.0 * h);
                let col = jac.column(j);
                let err = (fd - col).norm() / col.norm().max(1e-3);
                assert!(err < 1e-6, "leg {leg} joint {j} err {err}");
            }
        }
    }

    #[test]
    fn jacobian_singular_when_extended() {
        let p = params();
        let jac = leg_jacobian([0.0, 0.0, 0.0], 0, &p);
        assert!(jac.determinant().abs() < 1e-9);
        assert!(jac[(2, HFE)].abs() < 1e-15);
        let bent = leg_jacobian([0.1, -0.6, 1.2], 0, &p);
        assert!(bent.determinant().abs() > 1e-3);
    }

    #[test]
    fn com_symmetry_and_massless_links() {
        let mut p = params();
        let mut q = JointVector::zeros();
        for leg in 0..4 {
            let s = p.lateral_sign(leg);
            q.set_leg(leg, [0.2 * s, -0.5, 1.0]);
        }
        let c = com_position(&q, &p);
        assert!(c.y.abs() < 1e-15);
        p.link_masses = [[0.0, 0.0]; 4];
        let c = com_position(&q, &p);
        assert_eq!(c, Vec3::zeros());
    }

    #[test]
    fn mirror_reflects_feet_and_com() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = JointVector(std::array::from_fn(|_| rng.random_range(-0.6..0.6)));
            let m = q.mirrored();
            let f = forward_kinematics(&q, &p);
            let fm = forward_kinematics(&m, &p);
            for leg in 0..4 {
                let a = f.0[leg];
                let b = fm.0[leg ^ 1];
                assert_relative_eq!(a.x, b.x, epsilon = 1e-12);
                assert_relative_eq!(a.y, -b.y, epsilon = 1e-12);
                assert_relative_eq!(a.z, b.z, epsilon = 1e-12);
            }
            let c = com_position(&q, &p);
            let cm = com_position(&m, &p);
            assert_relative_eq!(c.y, -cm.y, epsilon = 1e-12);
            assert_relative_eq!(c.x, cm.x, epsilon = 1e-12);
        }
    }
}
