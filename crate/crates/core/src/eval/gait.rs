//! Checks on a planned gait cycle.

use serde::{Deserialize, Serialize};

use crate::control::{decode_latents, encode_state, most_likely_stance, TrajectoryTable};
use crate::dataset::{sample_configuration, sample_seed, stance_encoding, Sample, SamplerConfig, StanceId};
use crate::error::{Error, Result};
use crate::nn::VaeWeights;
use crate::robot::{check_kinematic_feasibility, JointVector, RobotParams};
use crate::stability::stability_label;

use super::metrics::motion_extrema;

/// Joint probability of `stance` under independent per-element
/// probabilities.
pub fn stance_probability(s_prob: &[f64; 4], stance: StanceId) -> f64 {
    stance_encoding(stance)
        .0
        .iter()
        .zip(s_prob)
        .map(|(t, p)| t * p + (1.0 - t) * (1.0 - p))
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub target_stance: u8,
    /// Row of the segment's last pose.
    pub end_index: usize,
    pub target_probability: f64,
    pub end_stability_probability: f64,
    /// Oracle verdict at margin 0 for all-contact targets.
    pub boundary_stable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitReport {
    pub n_poses: usize,
    pub start_stance: u8,
    pub start_stable: bool,
    pub infeasible_poses: usize,
    pub max_abs_velocity: f64,
    pub max_abs_acceleration: f64,
    pub velocity_limit: f64,
    pub segments: Vec<SegmentReport>,
}

impl GaitReport {
    pub fn kinematically_feasible(&self) -> bool {
        self.infeasible_poses == 0
    }

    pub fn velocity_feasible(&self) -> bool {
        self.max_abs_velocity < self.velocity_limit
    }

    pub fn targets_reached(&self) -> bool {
        self.segments.iter().all(|s| s.target_probability > 0.5)
    }

    /// Start pose and every all-contact segment end.
    pub fn boundaries_stable(&self) -> bool {
        self.start_stable && self.segments.iter().all(|s| s.boundary_stable != Some(false))
    }

    pub fn passed(&self) -> bool {
        self.kinematically_feasible() && self.velocity_feasible() && self.targets_reached() && self.boundaries_stable()
    }
}

/// First oracle-stable sample of the all-contact `stance` that the model also
/// predicts in `stance`, drawn from seeds derived from `seed`.
pub fn gait_start(
    stance: StanceId,
    seed: u64,
    weights: &VaeWeights,
    params: &RobotParams,
    sampler: &SamplerConfig,
    max_attempts: usize,
) -> Result<Sample> {
    if !stance.is_all_contact() {
        return Err(Error::BadInput(format!(
            "gait must start in an all-contact stance, got {stance}"
        )));
    }
    for attempt in 0..max_attempts {
        let s = sample_configuration(stance, sample_seed(seed, attempt as u64), params, sampler)?;
        if !s.y {
            continue;
        }
        let z = encode_state(&s.x, weights)?;
        let decoded = decode_latents(&z, weights, 1.0, 0);
        if most_likely_stance(&decoded.s_prob[0]) == stance {
            return Ok(s);
        }
    }
    Err(Error::SamplingExhausted { attempts: max_attempts })
}

fn stable_all_contact(q: &[f64; 12], stance: StanceId, params: &RobotParams) -> bool {
    stability_label(&JointVector(*q), stance.contact_flags(), params, 0.0)
        .map(|v| v.stable)
        .unwrap_or(false)
}

/// Segment `k` targets the `(k+1)`-th successor of the stance predicted at
/// the first pose.
pub fn evaluate_gait(table: &TrajectoryTable, rate: f64, params: &RobotParams) -> Result<GaitReport> {
    let n = table.q.len();
    if n < 2 || table.s_prob.len() != n || table.segment.len() != n {
        return Err(Error::BadInput(
            "gait trajectory needs at least two consistent rows".into(),
        ));
    }
    let start = most_likely_stance(&table.s_prob[0]);
    let ends: Vec<usize> = (0..n)
        .filter(|&i| i + 1 == n || table.segment[i + 1] != table.segment[i])
        .collect();
    let mut target = start;
    let segments = ends
        .iter()
        .map(|&i| {
            target = target.successor();
            SegmentReport {
                segment: table.segment[i],
                target_stance: target.id(),
                end_index: i,
                target_probability: stance_probability(&table.s_prob[i], target),
                end_stability_probability: table.y_prob[i],
                boundary_stable: target
                    .is_all_contact()
                    .then(|| stable_all_contact(&table.q[i], target, params)),
            }
        })
        .collect();
    let (v, a) = motion_extrema(&table.q, rate);
    Ok(GaitReport {
        n_poses: n,
        start_stance: start.id(),
        start_stable: !start.is_all_contact() || stable_all_contact(&table.q[0], start, params),
        infeasible_poses: table
            .q
            .iter()
            .filter(|q| !check_kinematic_feasibility(&JointVector(**q), params).is_ok())
            .count(),
        max_abs_velocity: v,
        max_abs_acceleration: a,
        velocity_limit: params.velocity_limit,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_configuration, SamplerConfig};

    #[test]
    fn joint_probability() {
        let s0 = StanceId::new(0).unwrap();
        assert_eq!(stance_probability(&[1.0, 0.0, 0.0, 0.0], s0), 1.0);
        assert_eq!(stance_probability(&[1.0; 4], s0), 0.0);
        let p = [0.9, 0.8, 0.7, 0.6];
        let total: f64 = StanceId::all().map(|s| stance_probability(&p, s)).sum();
        assert!(total <= 1.0 + 1e-12);
    }

    #[test]
    fn standing_still_passes_only_all_contact_checks() {
        let params = RobotParams::default();
        let s = (0..50)
            .map(|i| sample_configuration(StanceId::new(0).unwrap(), i, &params, &SamplerConfig::default()).unwrap())
            .find(|s| s.y)
            .unwrap();
        let q = s.x.q().0;
        let table = TrajectoryTable {
            t: vec![0.0, 0.005, 0.01, 0.015],
            q: vec![q; 4],
            y_prob: vec![0.9; 4],
            s_prob: vec![
                [1.0, 0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [1.0, 1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
            ],
            segment: vec![0, 0, 0, 1],
        };
        let r = evaluate_gait(&table, 200.0, &params).unwrap();
        assert_eq!(r.start_stance, 0);
        assert_eq!(r.segments.len(), 2);
        assert_eq!(r.segments[0].target_stance, 1);
        assert!(r.segments[0].target_probability > 0.99);
        assert_eq!(r.segments[0].boundary_stable, None);
        assert!(r.segments[1].target_probability < 0.01);
        assert_eq!(r.max_abs_velocity, 0.0);
        assert!(r.kinematically_feasible() && r.boundaries_stable());
        assert!(!r.targets_reached() && !r.passed());
    }

    #[test]
    fn gait_start_rejects_swing_stance() {
        let w = crate::control::tests::toy_vae(crate::dataset::layout::BASE_DIM, 3);
        let p = RobotParams::default();
        let c = SamplerConfig::default();
        assert!(matches!(
            gait_start(StanceId::new(1).unwrap(), 0, &w, &p, &c, 5),
            Err(Error::BadInput(_))
        ));
        match gait_start(StanceId::new(0).unwrap(), 0, &w, &p, &c, 5) {
            Ok(s) => assert!(s.y && s.stance_id.id() == 0),
            Err(e) => assert!(matches!(e, Error::SamplingExhausted { attempts: 5 })),
        }
    }
}
