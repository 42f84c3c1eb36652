//! Kinematics, geometry and feasibility checks of the simulated quadruped.

pub mod feasibility;
pub mod kinematics;
pub mod params;
pub mod polygon;

pub use feasibility::{check_kinematic_feasibility, KinematicStatus};
pub use kinematics::{
    com_position, forward_kinematics, inverse_kinematics, leg_inverse_kinematics, leg_jacobian, FootPositions,
    JointVector, KneeBend, Vec3,
};
pub use params::{RobotParams, NUM_JOINTS, NUM_LEGS};
pub use polygon::{build_support_polygon, point_in_polygon, shrink_polygon, SupportPolygon, Vec2};
