//! Activation maximisation: single-pose stabilisation in latent or input
//! space, and latent trajectory optimisation for walking.

pub mod loco;

use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalisationStats, RobotState, StanceEncoding, StanceId};
use crate::error::{Error, Result};
use crate::nn::tape::{sigmoid, Tape, Var};
use crate::nn::{BaselineWeights, VaeWeights};

pub use loco::{
    build_locomotion_targets, locomotion_gradient, locomotion_loss, optimize_from_latent, optimize_trajectory,
    optimize_trajectory_detailed, plan_gait_cycle, LatentTrajectory, LocoComponents, LocoConfig, LocoOutcome,
    LocoTargets, TimeSmoother,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmConfig {
    /// Step size `α_y`.
    pub alpha: f64,
    pub steps: usize,
    /// Target stability probability.
    pub target: f64,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            steps: 300,
            target: 1.0,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || self.steps == 0 || !(0.0..=1.0).contains(&self.target) {
            return Err(Error::BadInput(format!(
                "invalid activation-maximisation settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// De-normalised states with predicted stability and stance probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub states: Vec<RobotState>,
    pub y_prob: Vec<f64>,
    pub s_prob: Vec<[f64; 4]>,
    pub segment: Vec<usize>,
    /// Sampling frequency in Hz.
    pub rate: f64,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &RobotState {
        self.states.last().expect("non-empty trajectory")
    }

    /// Joint angles, one row per step.
    pub fn joints(&self) -> Vec<[f64; 12]> {
        self.states.iter().map(|s| s.q().0).collect()
    }

    /// Indices of the last step of each segment.
    pub fn segment_ends(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| i + 1 == self.len() || self.segment[i + 1] != self.segment[i])
            .collect()
    }

    pub fn table(&self) -> TrajectoryTable {
        TrajectoryTable {
            t: (0..self.len()).map(|i| i as f64 / self.rate).collect(),
            q: self.joints(),
            y_prob: self.y_prob.clone(),
            s_prob: self.s_prob.clone(),
            segment: self.segment.clone(),
        }
    }

    fn append(&mut self, other: StateTrajectory, skip_first: bool) {
        let k = usize::from(skip_first);
        self.states.extend(other.states.into_iter().skip(k));
        self.y_prob.extend(other.y_prob.into_iter().skip(k));
        self.s_prob.extend(other.s_prob.into_iter().skip(k));
        self.segment.extend(other.segment.into_iter().skip(k));
    }

    /// CSV with columns `t, q0..q11, y_prob, s0..s3, segment_id`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = Error::from;
        let mut header = vec!["t".to_string()];
        header.extend((0..12).map(|i| format!("q{i}")));
        header.push("y_prob".into());
        header.extend((0..4).map(|i| format!("s{i}")));
        header.push("segment_id".into());
        w.write_record(&header).map_err(csv_err)?;
        for (i, s) in self.states.iter().enumerate() {
            let mut rec = vec![format!("{}", i as f64 / self.rate)];
            rec.extend(s.q().0.iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.y_prob[i]));
            rec.extend(self.s_prob[i].iter().map(|v| format!("{v}")));
            rec.push(self.segment[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)
    }
}

/// Trajectory columns read back from CSV: `(t, q, y_prob, s, segment)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub t: Vec<f64>,
    pub q: Vec<[f64; 12]>,
    pub y_prob: Vec<f64>,
    pub s_prob: Vec<[f64; 4]>,
    pub segment: Vec<usize>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryTable> {
    let mut r = csv::Reader::from_path(path)?;
    let mut t = TrajectoryTable {
        t: vec![],
        q: vec![],
        y_prob: vec![],
        s_prob: vec![],
        segment: vec![],
    };
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 19 {
            return Err(Error::Format(format!("trajectory row has {} fields", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number {:?}", &rec[i])))
        };
        t.t.push(num(0)?);
        let mut q = [0.0; 12];
        for (j, v) in q.iter_mut().enumerate() {
            *v = num(1 + j)?;
        }
        t.q.push(q);
        t.y_prob.push(num(13)?);
        t.s_prob.push([num(14)?, num(15)?, num(16)?, num(17)?]);
        t.segment
            .push(rec[18].parse().map_err(|_| Error::Format("bad segment id".into()))?);
    }
    Ok(t)
}

/// A differentiable scalar built on a tape from the decision variable.
pub type LossBuilder<'f, 'a> = &'f dyn Fn(&mut Tape<'a>, Var) -> Result<Var>;

/// One gradient step `z ← z − ∇ Σ α_k L_k(z)`.
pub fn am_step<'a>(z: &Array2<f64>, losses: &[(f64, LossBuilder<'_, 'a>)]) -> Result<Array2<f64>> {
    if losses.is_empty() {
        return Ok(z.clone());
    }
    let mut tape: Tape<'a> = Tape::new();
    let zv = tape.leaf(z.clone(), true);
    let mut total: Option<Var> = None;
    for (alpha, build) in losses {
        let l = build(&mut tape, zv)?;
        let scaled = tape.scale(l, *alpha);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let g = tape.grad_of(total.expect("non-empty"), &[zv])?;
    let grad = &g.grads[0];
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { iteration: 0 });
    }
    Ok(z - grad)
}

pub(crate) fn state_row(state: &RobotState, stats: &NormalisationStats) -> Result<Array2<f64>> {
    if state.0.len() != stats.dim() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} features, model expects {}",
            state.0.len(),
            stats.dim()
        )));
    }
    if !state.is_finite() {
        return Err(Error::BadInput("state is not finite".into()));
    }
    Ok(Array2::from_shape_vec((1, stats.dim()), stats.normalise(&state.0)).expect("row shape"))
}

fn rows_to_states(x_norm: &Array2<f64>, stats: &NormalisationStats) -> Vec<RobotState> {
    x_norm
        .outer_iter()
        .map(|r| RobotState(stats.denormalise(&r.to_vec())))
        .collect()
}

/// Decode a stack of latent points into a trajectory.
pub fn decode_latents(z: &Array2<f64>, weights: &VaeWeights, rate: f64, segment: usize) -> StateTrajectory {
    let x = weights.decode(z);
    let y = weights.stability_logit(z);
    let s = weights.stance_logits(z);
    StateTrajectory {
        states: rows_to_states(&x, &weights.meta.stats),
        y_prob: y.iter().map(|l| sigmoid(*l)).collect(),
        s_prob: s
            .outer_iter()
            .map(|r| [sigmoid(r[0]), sigmoid(r[1]), sigmoid(r[2]), sigmoid(r[3])])
            .collect(),
        segment: vec![segment; z.nrows()],
        rate,
    }
}

/// Encoder mean of a de-normalised state.
pub fn encode_state(state: &RobotState, weights: &VaeWeights) -> Result<Array2<f64>> {
    Ok(weights.encode(&state_row(state, &weights.meta.stats)?)?.0)
}

/// Most likely of the eight stances under independent per-element
/// probabilities.
pub fn most_likely_stance(s_prob: &[f64; 4]) -> StanceId {
    let score = |enc: StanceEncoding| -> f64 {
        enc.0
            .iter()
            .zip(s_prob)
            .map(|(t, p)| {
                let p = p.clamp(1e-300, 1.0 - 1e-16);
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum()
    };
    StanceId::all()
        .max_by(|a, b| {
            score(crate::dataset::stance_encoding(*a))
                .total_cmp(&score(crate::dataset::stance_encoding(*b)))
                .then(b.cmp(a))
        })
        .expect("eight stances")
}

/// Gradient ascent on the predicted stability in latent space, starting at
/// the encoder mean of `x0`. Returns every decoded iterate.
pub fn am_stabilize<'w>(
    x0: &RobotState,
    weights: &'w VaeWeights,
    config: &AmConfig,
    rate: f64,
) -> Result<StateTrajectory> {
    config.validate()?;
    let mut z = encode_state(x0, weights)?;
    let mut iterates = vec![z.clone()];
    let target = Array2::from_elem((1, 1), config.target);
    let head = |tape: &mut Tape<'w>, zv: Var| -> Result<Var> {
        let vars = weights.stability_head.bind(tape, false);
        let logit = vars.forward(tape, zv)?;
        tape.bce_logits(logit, target.clone(), 1.0)
    };
    for step in 0..config.steps {
        z = am_step(&z, &[(config.alpha, &head)]).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { iteration: step },
            other => other,
        })?;
        iterates.push(z.clone());
    }
    let views: Vec<_> = iterates.iter().map(|z| z.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("equal widths");
    Ok(decode_latents(&stacked, weights, rate, 0))
}

/// The same ascent performed directly on the normalised state through the
/// input-space classifier.
pub fn input_am_stabilize<'w>(
    x0: &RobotState,
    baseline: &'w BaselineWeights,
    config: &AmConfig,
    rate: f64,
) -> Result<StateTrajectory> {
    config.validate()?;
    let stats = &baseline.meta.stats;
    let mut x = state_row(x0, stats)?;
    let mut iterates = vec![x.clone()];
    let target = Array2::from_elem((1, 1), config.target);
    let head = |tape: &mut Tape<'w>, xv: Var| -> Result<Var> {
        let vars = baseline.net.bind(tape, false);
        let out = vars.forward(tape, xv)?;
        let logit = tape.columns(out, 0, 1)?;
        tape.bce_logits(logit, target.clone(), 1.0)
    };
    for step in 0..config.steps {
        x = am_step(&x, &[(config.alpha, &head)]).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { iteration: step },
            other => other,
        })?;
        iterates.push(x.clone());
    }
    let views: Vec<_> = iterates.iter().map(|x| x.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("equal widths");
    let (yl, sl) = baseline.forward(&stacked)?;
    Ok(StateTrajectory {
        states: rows_to_states(&stacked, stats),
        y_prob: yl.iter().map(|l| sigmoid(*l)).collect(),
        s_prob: sl
            .outer_iter()
            .map(|r| [sigmoid(r[0]), sigmoid(r[1]), sigmoid(r[2]), sigmoid(r[3])])
            .collect(),
        segment: vec![0; stacked.nrows()],
        rate,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::model::{standard_normal, ModelMeta, VaeArch};
    use ndarray::array;

    pub(crate) fn toy_vae(dim: usize, seed: u64) -> VaeWeights {
        let arch = VaeArch {
            input_dim: dim,
            hidden: 16,
            hidden_layers: 2,
            latent: 4,
            head_hidden: 8,
            head_layers: 3,
        };
        let meta = ModelMeta {
            stats: NormalisationStats {
                mean: (0..dim).map(|i| 0.01 * i as f64).collect(),
                std: vec![0.5; dim],
            },
            params_hash: String::new(),
            dataset_hash: String::new(),
        };
        VaeWeights::init(arch, meta, seed)
    }

    #[test]
    fn am_step_identities() {
        let z = array![[0.3, -1.2, 2.0]];
        assert_eq!(am_step(&z, &[]).unwrap(), z);
        let a = array![[1.0, 2.0, 3.0]];
        let quad = |t: &mut Tape<'_>, v: Var| -> Result<Var> {
            let av = t.leaf(a.clone(), false);
            let d = t.sub(v, av)?;
            let sq = t.square(d);
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        };
        assert_eq!(am_step(&z, &[(1.0, &quad)]).unwrap(), a);
        assert_eq!(am_step(&z, &[(0.0, &quad)]).unwrap(), z);

        let lin = |t: &mut Tape<'_>, v: Var| -> Result<Var> {
            let sq = t.square(v);
            Ok(t.sum(sq))
        };
        let both = am_step(&z, &[(0.3, &quad), (0.2, &lin)]).unwrap();
        let d1 = &z - &am_step(&z, &[(0.3, &quad)]).unwrap();
        let d2 = &z - &am_step(&z, &[(0.2, &lin)]).unwrap();
        let sum = &z - &(d1 + d2);
        assert!((both - sum).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn stabilize_shapes_and_determinism() {
        let w = toy_vae(51, 3);
        let x0 = RobotState(standard_normal(1, 51, 4).into_raw_vec_and_offset().0);
        let c = AmConfig {
            steps: 20,
            ..Default::default()
        };
        let a = am_stabilize(&x0, &w, &c, 200.0).unwrap();
        assert_eq!(a.len(), 21);
        assert_eq!(a, am_stabilize(&x0, &w, &c, 200.0).unwrap());
        assert!(a.y_prob.windows(2).all(|p| p[1] >= p[0] - 1e-12));
        assert!(matches!(
            am_stabilize(&RobotState(vec![0.0; 54]), &w, &c, 200.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn stance_ranking() {
        assert_eq!(most_likely_stance(&[0.9, 0.1, 0.2, 0.1]).id(), 0);
        assert_eq!(most_likely_stance(&[0.9, 0.8, 0.2, 0.1]).id(), 1);
        assert_eq!(most_likely_stance(&[0.7, 0.1, 0.2, 0.9]).id(), 7);
        assert_eq!(most_likely_stance(&[0.1, 0.1, 0.1, 0.1]).id(), 0);
    }

    #[test]
    fn csv_round_trip() {
        let w = toy_vae(51, 1);
        let t = decode_latents(&standard_normal(5, 4, 2), &w, 200.0, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.save_csv(&p).unwrap();
        let back = read_trajectory_csv(&p).unwrap();
        assert_eq!(back.q, t.joints());
        assert_eq!(back.t[1], 0.005);
        assert_eq!(back.segment, vec![3; 5]);
    }
}
