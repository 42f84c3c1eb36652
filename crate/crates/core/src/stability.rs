//! Analytical static-stability oracle.
//!
//! A pose is statically stable when the minimum-norm contact forces that
//! balance gravity exist, stay inside every friction cone, need joint torques
//! within the actuator limit, and the CoM ground projection lies inside the
//! (optionally shrunk) support polygon.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::kinematics::{chain_point_jacobian, com_position, forward_kinematics, leg_jacobian};
use crate::robot::{build_support_polygon, FootPositions, JointVector, RobotParams, Vec2, Vec3, NUM_JOINTS, NUM_LEGS};

/// Relative singular-value cutoff and residual tolerance of the force solve.
const EQUILIBRIUM_TOL: f64 = 1e-9;

/// Contact forces exerted by the ground on each foot, base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForces(pub [Vec3; NUM_LEGS]);

impl ContactForces {
    pub fn zeros() -> Self {
        Self([Vec3::zeros(); NUM_LEGS])
    }

    pub fn flat(&self) -> [f64; 12] {
        FootPositions(self.0).flat()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        Self(FootPositions::from_flat(v).0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|f| f.norm_squared()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstabilityReason {
    NoEquilibrium,
    FrictionViolation(usize),
    TorqueViolation(usize),
    ComOutsidePolygon,
    DegenerateSupport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Sorted, without duplicates. Empty iff `stable`.
    pub reasons: Vec<InstabilityReason>,
}

impl StabilityVerdict {
    fn from_reasons(mut reasons: Vec<InstabilityReason>) -> Self {
        reasons.sort();
        reasons.dedup();
        Self {
            stable: reasons.is_empty(),
            reasons,
        }
    }
}

pub fn gravity_vector(params: &RobotParams) -> Vec3 {
    Vec3::new(0.0, 0.0, -params.gravity_accel)
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Equilibrium system `A lambda = b` over the contact feet, with the
/// contact feet's indices in column-block order.
pub fn equilibrium_system(
    contact_flags: [bool; NUM_LEGS],
    feet: &FootPositions,
    com: Vec3,
    total_mass: f64,
    g: Vec3,
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let contacts: Vec<usize> = (0..NUM_LEGS).filter(|&i| contact_flags[i]).collect();
    let mut a = DMatrix::zeros(6, 3 * contacts.len());
    for (c, &foot) in contacts.iter().enumerate() {
        a.fixed_view_mut::<3, 3>(0, 3 * c).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(3, 3 * c).copy_from(&skew(&feet.0[foot]));
    }
    let weight = total_mass * g;
    let moment = com.cross(&weight);
    let b = DVector::from_column_slice(&[-weight.x, -weight.y, -weight.z, -moment.x, -moment.y, -moment.z]);
    (a, b, contacts)
}

/// Minimum-norm contact forces in static equilibrium with gravity.
pub fn distribute_contact_forces(
    contact_flags: [bool; NUM_LEGS],
    feet: &FootPositions,
    com: Vec3,
    total_mass: f64,
    g: Vec3,
) -> Result<ContactForces> {
    if !(total_mass > 0.0) {
        return Err(Error::BadInput(format!("total mass {total_mass}")));
    }
    let (a, b, contacts) = equilibrium_system(contact_flags, feet, com, total_mass, g);
    if contacts.is_empty() {
        return Err(Error::NoEquilibrium { residual: b.norm() });
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let solve = |rhs: &DVector<f64>| {
        svd.solve(rhs, EQUILIBRIUM_TOL * smax)
            .map_err(|_| Error::NoEquilibrium { residual: f64::NAN })
    };
    // The SVD of this wide system is only accurate to ~1e-8 N; two rounds of
    // refinement bring the residual to rounding level.
    let mut x = solve(&b)?;
    for _ in 0..2 {
        let r = &b - &a * &x;
        x += solve(&r)?;
    }
    let residual = (&a * &x - &b).norm();
    if !(residual <= EQUILIBRIUM_TOL * b.norm().max(1.0)) {
        return Err(Error::NoEquilibrium { residual });
    }
    let mut out = ContactForces::zeros();
    for (c, &foot) in contacts.iter().enumerate() {
        out.0[foot] = Vec3::new(x[3 * c], x[3 * c + 1], x[3 * c + 2]);
    }
    Ok(out)
}

/// Per-foot friction-cone test, including unilaterality.
pub fn friction_cone_check(lambda: &ContactForces, mu: f64) -> [bool; NUM_LEGS] {
    lambda.0.map(|f| f.z >= 0.0 && f.x.hypot(f.y) <= mu * f.z)
}

/// Joint torques holding the pose against the contact forces and the weight
/// of the leg links (point masses at link midpoints).
pub fn static_joint_torques(q: &JointVector, lambda: &ContactForces, params: &RobotParams) -> [f64; NUM_JOINTS] {
    static_joint_torques_in(q, lambda, params, gravity_vector(params))
}

/// [`static_joint_torques`] with gravity `g` given in the base frame.
pub fn static_joint_torques_in(
    q: &JointVector,
    lambda: &ContactForces,
    params: &RobotParams,
    g: Vec3,
) -> [f64; NUM_JOINTS] {
    let (l1, l2) = (params.thigh_length, params.shank_length);
    let mut tau = [0.0; NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        let ql = q.leg(leg);
        let contact = -leg_jacobian(ql, leg, params).transpose() * lambda.0[leg];
        let [m_thigh, m_shank] = params.link_masses[leg];
        let thigh = chain_point_jacobian(ql, leg, params, 0.5 * l1, 0.0);
        let shank = chain_point_jacobian(ql, leg, params, l1, 0.5 * l2);
        let gravity = -(thigh.transpose() * (m_thigh * g) + shank.transpose() * (m_shank * g));
        let t = contact + gravity;
        tau[3 * leg..3 * leg + 3].copy_from_slice(t.as_slice());
    }
    tau
}

/// Quantities derived from a static pose: foot positions, CoM, contact
/// forces and joint torques.
#[derive(Debug, Clone)]
pub struct StaticState {
    pub gravity: Vec3,
    pub feet: FootPositions,
    pub com: Vec3,
    /// `None` when no equilibrium exists.
    pub forces: Option<ContactForces>,
    pub torques: [f64; NUM_JOINTS],
}

/// Static quantities of a pose with gravity `g` expressed in the base frame.
pub fn static_state(q: &JointVector, contact_flags: [bool; NUM_LEGS], params: &RobotParams, g: Vec3) -> StaticState {
    let feet = forward_kinematics(q, params);
    let com = com_position(q, params);
    let forces = distribute_contact_forces(contact_flags, &feet, com, params.total_mass(), g).ok();
    let torques = match &forces {
        Some(f) => static_joint_torques_in(q, f, params, g),
        None => [0.0; NUM_JOINTS],
    };
    StaticState {
        gravity: g,
        feet,
        com,
        forces,
        torques,
    }
}

/// Ground truth stability of a static pose.
pub fn stability_label(
    q: &JointVector,
    contact_flags: [bool; NUM_LEGS],
    params: &RobotParams,
    margin_fraction: f64,
) -> Result<StabilityVerdict> {
    stability_label_in(q, contact_flags, params, margin_fraction, gravity_vector(params))
}

/// [`stability_label`] with gravity `g` given in the base frame.
pub fn stability_label_in(
    q: &JointVector,
    contact_flags: [bool; NUM_LEGS],
    params: &RobotParams,
    margin_fraction: f64,
    g: Vec3,
) -> Result<StabilityVerdict> {
    if !(0.0..1.0).contains(&margin_fraction) {
        return Err(Error::BadMargin(margin_fraction));
    }
    let state = static_state(q, contact_flags, params, g);
    Ok(verdict_from_state(&state, contact_flags, params, margin_fraction))
}

/// Ground-plane coordinates of `p` when projecting along gravity.
pub fn ground_projection(p: &Vec3, g: &Vec3) -> Vec2 {
    if g.x == 0.0 && g.y == 0.0 && g.z < 0.0 {
        return Vec2::new(p.x, p.y);
    }
    let rot = Rotation3::rotation_between(g, &Vec3::new(0.0, 0.0, -1.0)).unwrap_or_else(Rotation3::identity);
    let r = rot * p;
    Vec2::new(r.x, r.y)
}

fn projected_feet(feet: &FootPositions, g: &Vec3) -> FootPositions {
    FootPositions(feet.0.map(|f| {
        let p = ground_projection(&f, g);
        Vec3::new(p.x, p.y, 0.0)
    }))
}

pub fn verdict_from_state(
    state: &StaticState,
    contact_flags: [bool; NUM_LEGS],
    params: &RobotParams,
    margin_fraction: f64,
) -> StabilityVerdict {
    let mut reasons = Vec::new();
    match &state.forces {
        None => reasons.push(InstabilityReason::NoEquilibrium),
        Some(forces) => {
            let cones = friction_cone_check(forces, params.friction_coeff);
            for foot in 0..NUM_LEGS {
                if contact_flags[foot] && !cones[foot] {
                    reasons.push(InstabilityReason::FrictionViolation(foot));
                }
            }
            for (j, t) in state.torques.iter().enumerate() {
                if !(t.abs() <= params.torque_limit) {
                    reasons.push(InstabilityReason::TorqueViolation(j));
                }
            }
        }
    }
    let g = state.gravity;
    match build_support_polygon(contact_flags, &projected_feet(&state.feet, &g)) {
        Err(_) => reasons.push(InstabilityReason::DegenerateSupport),
        Ok(poly) => {
            let inside = poly
                .shrink(margin_fraction)
                .map(|p| p.contains(ground_projection(&state.com, &g)))
                .unwrap_or(false);
            if !inside {
                reasons.push(InstabilityReason::ComOutsidePolygon);
            }
        }
    }
    StabilityVerdict::from_reasons(reasons)
}

/// Signed slack of each stability condition; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSlack {
    /// Minimum over contact feet of `min(lambda_z, mu lambda_z - |lambda_xy|)`.
    pub friction: f64,
    /// Minimum over joints of `limit - |tau|`.
    pub torque: f64,
    /// Signed distance of the CoM projection to the shrunk polygon boundary.
    pub com: f64,
}

impl ConstraintSlack {
    pub fn min_abs(&self) -> f64 {
        self.friction.abs().min(self.torque.abs()).min(self.com.abs())
    }
}

/// Slack of the conditions checked by [`stability_label`], or `None` when the
/// support is degenerate or no equilibrium exists.
pub fn constraint_slack(
    q: &JointVector,
    contact_flags: [bool; NUM_LEGS],
    params: &RobotParams,
    margin_fraction: f64,
) -> Option<ConstraintSlack> {
    let g = gravity_vector(params);
    let state = static_state(q, contact_flags, params, g);
    let forces = state.forces.as_ref()?;
    let poly = build_support_polygon(contact_flags, &state.feet)
        .ok()?
        .shrink(margin_fraction)
        .ok()?;
    let mu = params.friction_coeff;
    let friction = (0..NUM_LEGS)
        .filter(|&i| contact_flags[i])
        .map(|i| {
            let f = forces.0[i];
            f.z.min(mu * f.z - f.x.hypot(f.y))
        })
        .fold(f64::INFINITY, f64::min);
    let torque = state
        .torques
        .iter()
        .map(|t| params.torque_limit - t.abs())
        .fold(f64::INFINITY, f64::min);
    Some(ConstraintSlack {
        friction,
        torque,
        com: poly.signed_distance(Vec2::new(state.com.x, state.com.y)),
    })
}
