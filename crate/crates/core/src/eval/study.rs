//! The stabilisation study: unstable starts, both AM schemes, success per
//! margin.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{am_stabilize, input_am_stabilize, AmConfig, StateTrajectory};
use crate::dataset::{sample_configuration, sample_seed, RobotState, SamplerConfig, StanceId};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::nn::{BaselineWeights, VaeWeights};
use crate::robot::RobotParams;

use super::metrics::{
    all_kinematically_feasible, episode_success_margins, infer_contacts, motion_extrema, support_foot_drift,
    ContactThresholds,
};
use super::stats::{wilson_interval, Quartiles};

pub const DEFAULT_MARGINS: [f64; 6] = [0.0, 0.07, 0.13, 0.19, 0.25, 0.31];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Latent,
    Input,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Latent, Scheme::Input];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Latent => "latent",
            Scheme::Input => "input",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_episodes: usize,
    pub seed: u64,
    pub margins: Vec<f64>,
    pub am: AmConfig,
    pub contacts: ContactThresholds,
    pub sampler: SamplerConfig,
    /// Cap on rejected stable draws per episode.
    pub max_start_attempts: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_episodes: 200,
            seed: 0,
            margins: DEFAULT_MARGINS.to_vec(),
            am: AmConfig::default(),
            contacts: ContactThresholds::default(),
            sampler: SamplerConfig::default(),
            max_start_attempts: 10_000,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::BadInput("n_episodes must be positive".into()));
        }
        if self.margins.is_empty() || self.margins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadInput(
                "margins must be non-empty and strictly increasing".into(),
            ));
        }
        if let Some(m) = self.margins.iter().find(|m| !(0.0..1.0).contains(*m)) {
            return Err(Error::BadMargin(*m));
        }
        self.am.validate()
    }
}

/// Per-trajectory motion statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMotion {
    pub max_abs_joint_velocity: f64,
    pub max_abs_joint_acceleration: f64,
    pub support_foot_drift: f64,
}

impl EpisodeMotion {
    pub fn of(traj: &StateTrajectory, params: &RobotParams, th: &ContactThresholds) -> Self {
        let (v, a) = motion_extrema(&traj.joints(), traj.rate);
        let drift = match traj.states.first() {
            Some(x0) => support_foot_drift(traj, infer_contacts(x0, th, params), params),
            None => 0.0,
        };
        Self {
            max_abs_joint_velocity: v,
            max_abs_joint_acceleration: a,
            support_foot_drift: drift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub scheme: Scheme,
    pub start_stance: u8,
    /// One entry per study margin, same order.
    pub success: Vec<bool>,
    pub kinematically_feasible: bool,
    pub motion: EpisodeMotion,
    /// Excluded from determinism comparisons.
    pub wall_time: f64,
}

impl EpisodeReport {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_time: 0.0,
            ..self.clone()
        } == Self {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub n: usize,
    pub successes: Vec<usize>,
    pub wilson: Vec<(f64, f64)>,
    pub velocity_violations: usize,
    pub velocity: Quartiles,
    pub acceleration: Quartiles,
    pub support_foot_drift: Quartiles,
}

impl SchemeSummary {
    pub fn rate(&self, margin_index: usize) -> f64 {
        self.successes[margin_index] as f64 / self.n as f64
    }

    pub fn violation_rate(&self) -> f64 {
        self.velocity_violations as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub margins: Vec<f64>,
    pub velocity_limit: f64,
    pub latent: SchemeSummary,
    pub input: SchemeSummary,
}

impl StudySummary {
    pub fn scheme(&self, s: Scheme) -> &SchemeSummary {
        match s {
            Scheme::Latent => &self.latent,
            Scheme::Input => &self.input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub summary: StudySummary,
    /// Sorted by episode, latent before input.
    pub episodes: Vec<EpisodeReport>,
}

/// An oracle-unstable pose for `episode`, drawn by rejection.
pub fn unstable_start(episode: usize, config: &StudyConfig, params: &RobotParams) -> Result<(StanceId, RobotState)> {
    let base = sample_seed(config.seed, episode as u64);
    for attempt in 0..config.max_start_attempts {
        let seed = sample_seed(base, attempt as u64);
        let stance = StanceId::new((seed % 8) as u8)?;
        let s = sample_configuration(stance, seed, params, &config.sampler)?;
        if !s.y {
            return Ok((stance, s.x));
        }
    }
    Err(Error::SamplingExhausted {
        attempts: config.max_start_attempts,
    })
}

fn evaluate(
    episode: usize,
    scheme: Scheme,
    stance: StanceId,
    traj: &StateTrajectory,
    wall_time: f64,
    config: &StudyConfig,
    params: &RobotParams,
) -> EpisodeReport {
    EpisodeReport {
        episode,
        scheme,
        start_stance: stance.id(),
        success: episode_success_margins(traj, &config.margins, params, &config.contacts),
        kinematically_feasible: all_kinematically_feasible(traj, params),
        motion: EpisodeMotion::of(traj, params, &config.contacts),
        wall_time,
    }
}

/// Run one episode with both schemes.
pub fn run_episode(
    episode: usize,
    vae: &VaeWeights,
    baseline: &BaselineWeights,
    config: &StudyConfig,
    params: &RobotParams,
) -> Result<[EpisodeReport; 2]> {
    let (stance, x0) = unstable_start(episode, config, params)?;
    let rate = params.control_freq;
    let t = Instant::now();
    let lat = am_stabilize(&x0, vae, &config.am, rate)?;
    let lat_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let inp = input_am_stabilize(&x0, baseline, &config.am, rate)?;
    let inp_time = t.elapsed().as_secs_f64();
    Ok([
        evaluate(episode, Scheme::Latent, stance, &lat, lat_time, config, params),
        evaluate(episode, Scheme::Input, stance, &inp, inp_time, config, params),
    ])
}

pub fn summarise(
    scheme: Scheme,
    reports: &[&EpisodeReport],
    margins: &[f64],
    velocity_limit: f64,
) -> Result<SchemeSummary> {
    let n = reports.len();
    let successes: Vec<usize> = (0..margins.len())
        .map(|m| reports.iter().filter(|r| r.success[m]).count())
        .collect();
    let wilson = successes
        .iter()
        .map(|&k| wilson_interval(k, n, 0.95))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&EpisodeMotion) -> f64| reports.iter().map(|r| f(&r.motion)).collect::<Vec<_>>();
    let vel = col(|m| m.max_abs_joint_velocity);
    Ok(SchemeSummary {
        scheme,
        n,
        successes,
        wilson,
        velocity_violations: vel.iter().filter(|v| !(**v < velocity_limit)).count(),
        velocity: Quartiles::of(&vel),
        acceleration: Quartiles::of(&col(|m| m.max_abs_joint_acceleration)),
        support_foot_drift: Quartiles::of(&col(|m| m.support_foot_drift)),
    })
}

pub fn summarise_reports(episodes: &[EpisodeReport], margins: &[f64], velocity_limit: f64) -> Result<StudySummary> {
    let of = |s: Scheme| -> Result<SchemeSummary> {
        let rows: Vec<&EpisodeReport> = episodes.iter().filter(|r| r.scheme == s).collect();
        summarise(s, &rows, margins, velocity_limit)
    };
    Ok(StudySummary {
        margins: margins.to_vec(),
        velocity_limit,
        latent: of(Scheme::Latent)?,
        input: of(Scheme::Input)?,
    })
}

pub fn run_margin_study(
    vae: &VaeWeights,
    baseline: &BaselineWeights,
    config: &StudyConfig,
    params: &RobotParams,
    exec: Exec,
) -> Result<StudyResult> {
    config.validate()?;
    let per = try_map_indexed(exec, config.n_episodes, |i| {
        run_episode(i, vae, baseline, config, params)
    })?;
    let episodes: Vec<EpisodeReport> = per.into_iter().flatten().collect();
    let summary = summarise_reports(&episodes, &config.margins, params.velocity_limit)?;
    Ok(StudyResult {
        config: config.clone(),
        summary,
        episodes,
    })
}

/// Per-scheme distribution of the per-episode motion extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSummary {
    pub scheme: Scheme,
    pub n: usize,
    pub velocity: Quartiles,
    pub acceleration: Quartiles,
    pub support_foot_drift: Quartiles,
}

fn smoothness_of(scheme: Scheme, motion: &[EpisodeMotion]) -> SmoothnessSummary {
    let col = |f: fn(&EpisodeMotion) -> f64| motion.iter().map(f).collect::<Vec<_>>();
    SmoothnessSummary {
        scheme,
        n: motion.len(),
        velocity: Quartiles::of(&col(|m| m.max_abs_joint_velocity)),
        acceleration: Quartiles::of(&col(|m| m.max_abs_joint_acceleration)),
        support_foot_drift: Quartiles::of(&col(|m| m.support_foot_drift)),
    }
}

pub fn smoothness_stats(
    per_scheme: &[(Scheme, &[StateTrajectory])],
    params: &RobotParams,
    th: &ContactThresholds,
) -> Vec<SmoothnessSummary> {
    per_scheme
        .iter()
        .map(|(s, trajs)| {
            let m: Vec<EpisodeMotion> = trajs.iter().map(|t| EpisodeMotion::of(t, params, th)).collect();
            smoothness_of(*s, &m)
        })
        .collect()
}

pub fn smoothness_from_reports(episodes: &[EpisodeReport]) -> Vec<SmoothnessSummary> {
    Scheme::ALL
        .iter()
        .map(|&s| {
            let m: Vec<EpisodeMotion> = episodes.iter().filter(|r| r.scheme == s).map(|r| r.motion).collect();
            smoothness_of(s, &m)
        })
        .collect()
}
