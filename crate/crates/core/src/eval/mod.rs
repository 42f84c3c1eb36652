//! Episode metrics, the stabilisation margin study, gait checks, timing,
//! latent diagnostics and report files.

pub mod diagnostics;
pub mod gait;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod study;
pub mod timing;

pub use diagnostics::{latent_diagnostics, LatentDiagnostics, ACTIVE_VARIANCE};
pub use gait::{evaluate_gait, gait_start, stance_probability, GaitReport, SegmentReport};
pub use metrics::{
    dynamic_feasibility, episode_success, episode_success_margins, infer_contacts, motion_extrema, support_foot_drift,
    ContactThresholds, DynamicFeasibility, FootSource,
};
pub use report::{
    write_diagnostics, write_study_reports, write_timing_json, DIAGNOSTIC_FILES, REPORT_SCHEMA, STUDY_FILES,
};
pub use stats::{wilson_interval, Quartiles, Summary};
pub use study::{
    run_margin_study, smoothness_stats, EpisodeMotion, EpisodeReport, Scheme, SchemeSummary, SmoothnessSummary,
    StudyConfig, StudyResult, StudySummary, DEFAULT_MARGINS,
};
pub use timing::{timing_bench, TimingReport, TimingStats};
