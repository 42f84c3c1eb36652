//! JSON and CSV report files. CSV files start with a `#` schema line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::diagnostics::LatentDiagnostics;
use super::study::{smoothness_from_reports, Scheme, SmoothnessSummary, StudyResult};
use super::timing::TimingReport;

pub const REPORT_SCHEMA: &str = "quadlat-report-v1";

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut f,
        &Tagged {
            schema: REPORT_SCHEMA,
            body,
        },
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# schema: {REPORT_SCHEMA}")?;
    Ok(csv::Writer::from_writer(f))
}

fn rows<W: Write>(mut w: csv::Writer<W>, header: Vec<String>, body: Vec<Vec<String>>) -> Result<()> {
    let err = Error::from;
    w.write_record(&header).map_err(err)?;
    for r in body {
        w.write_record(&r).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn pct(m: f64) -> String {
    format!("{}", (m * 100.0).round() as i64)
}

pub fn write_episodes_csv(path: &Path, study: &StudyResult) -> Result<()> {
    let mut header: Vec<String> = ["episode", "scheme", "start_stance"].map(String::from).to_vec();
    header.extend(study.config.margins.iter().map(|m| format!("success_m{}", pct(*m))));
    header.extend(
        [
            "kinematically_feasible",
            "max_abs_joint_velocity",
            "max_abs_joint_acceleration",
            "support_foot_drift",
        ]
        .map(String::from),
    );
    let body = study
        .episodes
        .iter()
        .map(|e| {
            let mut r = vec![
                e.episode.to_string(),
                e.scheme.name().to_string(),
                e.start_stance.to_string(),
            ];
            r.extend(e.success.iter().map(|b| u8::from(*b).to_string()));
            r.push(u8::from(e.kinematically_feasible).to_string());
            r.push(e.motion.max_abs_joint_velocity.to_string());
            r.push(e.motion.max_abs_joint_acceleration.to_string());
            r.push(e.motion.support_foot_drift.to_string());
            r
        })
        .collect();
    rows(csv_file(path)?, header, body)
}

/// Per-episode wall-clock seconds, kept apart so the other files are
/// reproducible byte for byte.
pub fn write_episode_timing_csv(path: &Path, study: &StudyResult) -> Result<()> {
    let header = ["episode", "scheme", "wall_time"].map(String::from).to_vec();
    let body = study
        .episodes
        .iter()
        .map(|e| {
            vec![
                e.episode.to_string(),
                e.scheme.name().to_string(),
                e.wall_time.to_string(),
            ]
        })
        .collect();
    rows(csv_file(path)?, header, body)
}

pub fn write_margins_csv(path: &Path, study: &StudyResult) -> Result<()> {
    let s = &study.summary;
    let mut header = vec!["margin".to_string()];
    for sc in Scheme::ALL {
        for f in ["n", "successes", "rate", "wilson_lo", "wilson_hi"] {
            header.push(format!("{}_{f}", sc.name()));
        }
    }
    let body = s
        .margins
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut r = vec![m.to_string()];
            for sc in Scheme::ALL {
                let x = s.scheme(sc);
                r.extend([
                    x.n.to_string(),
                    x.successes[i].to_string(),
                    x.rate(i).to_string(),
                    x.wilson[i].0.to_string(),
                    x.wilson[i].1.to_string(),
                ]);
            }
            r
        })
        .collect();
    rows(csv_file(path)?, header, body)
}

pub fn write_smoothness_csv(path: &Path, summaries: &[SmoothnessSummary]) -> Result<()> {
    let header = ["scheme", "quantity", "n", "min", "q1", "median", "q3", "max"]
        .map(String::from)
        .to_vec();
    let mut body = Vec::new();
    for s in summaries {
        for (name, q) in [
            ("max_abs_joint_velocity", s.velocity),
            ("max_abs_joint_acceleration", s.acceleration),
            ("support_foot_drift", s.support_foot_drift),
        ] {
            body.push(vec![
                s.scheme.name().to_string(),
                name.to_string(),
                s.n.to_string(),
                q.min.to_string(),
                q.q1.to_string(),
                q.median.to_string(),
                q.q3.to_string(),
                q.max.to_string(),
            ]);
        }
    }
    rows(csv_file(path)?, header, body)
}

pub fn write_latent_projection_csv(path: &Path, diag: &LatentDiagnostics) -> Result<()> {
    let header = ["pc1", "pc2", "stance_id", "stable"].map(String::from).to_vec();
    let body = diag
        .projection
        .iter()
        .map(|p| {
            vec![
                p.pc1.to_string(),
                p.pc2.to_string(),
                p.stance_id.to_string(),
                u8::from(p.stable).to_string(),
            ]
        })
        .collect();
    rows(csv_file(path)?, header, body)
}

#[derive(Serialize)]
struct StudyJson<'a> {
    config: &'a super::study::StudyConfig,
    summary: &'a super::study::StudySummary,
    smoothness: &'a [SmoothnessSummary],
}

/// File names written by [`write_study_reports`]; the last one holds timings.
pub const STUDY_FILES: [&str; 5] = [
    "study_summary.json",
    "episodes.csv",
    "margins.csv",
    "smoothness.csv",
    "episode_timing.csv",
];

/// Every file of [`STUDY_FILES`] in `dir`.
pub fn write_study_reports(dir: &Path, study: &StudyResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let smooth = smoothness_from_reports(&study.episodes);
    write_json(
        &dir.join("study_summary.json"),
        &StudyJson {
            config: &study.config,
            summary: &study.summary,
            smoothness: &smooth,
        },
    )?;
    write_episodes_csv(&dir.join("episodes.csv"), study)?;
    write_margins_csv(&dir.join("margins.csv"), study)?;
    write_smoothness_csv(&dir.join("smoothness.csv"), &smooth)?;
    write_episode_timing_csv(&dir.join("episode_timing.csv"), study)
}

pub fn write_timing_json(path: &Path, timing: &TimingReport) -> Result<()> {
    write_json(path, timing)
}

#[derive(Serialize)]
struct DiagJson<'a> {
    posterior_variance: &'a [f64],
    active_dims: &'a [usize],
    active_count: usize,
    explained_variance: [f64; 2],
}

pub const DIAGNOSTIC_FILES: [&str; 2] = ["latent_diagnostics.json", "latent_projection.csv"];

/// Every file of [`DIAGNOSTIC_FILES`] in `dir`.
pub fn write_diagnostics(dir: &Path, diag: &LatentDiagnostics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(
        &dir.join("latent_diagnostics.json"),
        &DiagJson {
            posterior_variance: &diag.posterior_variance,
            active_dims: &diag.active_dims,
            active_count: diag.active_count(),
            explained_variance: diag.explained_variance,
        },
    )?;
    write_latent_projection_csv(&dir.join("latent_projection.csv"), diag)
}
