//! Wall-clock comparison of the learned predictor against the analytical
//! oracle on one state.

use std::hint::black_box;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::nn::{Mode, VaeWeights};
use crate::robot::RobotParams;
use crate::stability::stability_label;

use super::stats::{Quartiles, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub summary: Summary,
    pub quartiles: Quartiles,
    /// `std / mean`.
    pub cv: f64,
}

impl TimingStats {
    fn of(us: &[f64]) -> Self {
        let summary = Summary::of(us);
        Self {
            summary,
            quartiles: Quartiles::of(us),
            cv: summary.std / summary.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub trials: usize,
    pub warmup: usize,
    /// Full forward pass (encode, decode, both heads), µs per call.
    pub predictor: TimingStats,
    /// Encoder mean followed by the stability head only, µs per call.
    pub predictor_stability_only: TimingStats,
    /// Analytical stability label, µs per call.
    pub oracle: TimingStats,
    /// Oracle mean over full-predictor mean.
    pub ratio: f64,
    pub ratio_stability_only: f64,
    /// Predictor and oracle verdicts on the benchmarked state.
    pub predictor_stable: bool,
    pub oracle_stable: bool,
}

fn time_trials(trials: usize, warmup: usize, mut f: impl FnMut()) -> Vec<f64> {
    for _ in 0..warmup {
        f();
    }
    (0..trials)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e6
        })
        .collect()
}

/// Times every trial individually on the calling thread with identical
/// inputs.
pub fn timing_bench(
    weights: &VaeWeights,
    params: &RobotParams,
    sample: &Sample,
    trials: usize,
) -> Result<TimingReport> {
    if trials < 2 {
        return Err(Error::BadInput("need at least two timing trials".into()));
    }
    let stats = &weights.meta.stats;
    let x = Array2::from_shape_vec((1, stats.dim()), stats.normalise(&sample.x.0))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let q = sample.x.q();
    let flags = sample.contact_flags;
    let warmup = (trials / 10).max(20);

    let out = weights.forward(&x, Mode::Mean)?;
    let predictor_stable = out.y_logit[[0, 0]] > 0.0;
    let oracle_stable = stability_label(&q, flags, params, 0.0)?.stable;

    let predictor = time_trials(trials, warmup, || {
        black_box(weights.forward(black_box(&x), Mode::Mean).ok());
    });
    let short = time_trials(trials, warmup, || {
        let (mu, _) = weights.encode(black_box(&x)).expect("shape checked");
        black_box(weights.stability_logit(&mu));
    });
    let oracle = time_trials(trials, warmup, || {
        black_box(stability_label(black_box(&q), flags, params, 0.0).ok());
    });
    let (p, s, o) = (
        TimingStats::of(&predictor),
        TimingStats::of(&short),
        TimingStats::of(&oracle),
    );
    Ok(TimingReport {
        trials,
        warmup,
        ratio: o.summary.mean / p.summary.mean,
        ratio_stability_only: o.summary.mean / s.summary.mean,
        predictor: p,
        predictor_stability_only: s,
        oracle: o,
        predictor_stable,
        oracle_stable,
    })
}
