use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{decode_latents, encode_state, most_likely_stance, StateTrajectory};
use crate::dataset::{layout, stance_encoding, RobotState, StanceId};
use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::VaeWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocoConfig {
    /// Horizon `N` in steps.
    pub horizon: usize,
    /// Step size `α_loco`.
    pub alpha: f64,
    /// Stability multiplier `λ₀`.
    pub lambda0: f64,
    /// Stance multiplier `λ₁`.
    pub lambda1: f64,
    pub iterations: usize,
    /// Sampling frequency `f_s` in Hz.
    pub rate: f64,
    /// Stop once the relative loss decrease of an accepted step falls below
    /// this.
    pub rel_tol: f64,
    /// Filter each gradient through [`TimeSmoother`] before stepping.
    pub precondition: bool,
    /// Keep the first latent code fixed at the seed so the trajectory starts
    /// at the current state.
    pub pin_start: bool,
}

impl Default for LocoConfig {
    fn default() -> Self {
        Self {
            horizon: 400,
            alpha: 2e-4,
            lambda0: 100.0,
            lambda1: 100.0,
            iterations: 2000,
            rate: 200.0,
            rel_tol: 1e-8,
            precondition: true,
            pin_start: true,
        }
    }
}

impl LocoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 3
            && self.alpha > 0.0
            && self.lambda0 >= 0.0
            && self.lambda1 >= 0.0
            && self.rate > 0.0
            && self.rel_tol >= 0.0
            && [self.alpha, self.lambda0, self.lambda1, self.rate]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::BadInput(format!("invalid locomotion settings {self:?}")));
        }
        Ok(())
    }
}

/// Latent codes stacked over time, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub z: Array2<f64>,
    pub rate: f64,
}

impl LatentTrajectory {
    /// `n` copies of the row `z0`.
    pub fn repeat(z0: &Array2<f64>, n: usize, rate: f64) -> Self {
        let row = z0.row(0);
        Self {
            z: Array2::from_shape_fn((n, row.len()), |(_, j)| row[j]),
            rate,
        }
    }

    pub fn horizon(&self) -> usize {
        self.z.nrows()
    }
}

/// Per-step stability and stance targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LocoTargets {
    pub y: Array2<f64>,
    pub s: Array2<f64>,
}

/// Stability target 1 throughout and a linear blend from the encoding of
/// `from` to that of `to`.
pub fn build_locomotion_targets(from: StanceId, to: StanceId, n: usize) -> Result<LocoTargets> {
    if from.successor() != to {
        return Err(Error::NotSuccessor {
            from: from.id(),
            to: to.id(),
        });
    }
    if n < 2 {
        return Err(Error::BadInput(format!("horizon {n} < 2")));
    }
    let (a, b) = (stance_encoding(from).0, stance_encoding(to).0);
    let s = Array2::from_shape_fn((n, 4), |(t, j)| {
        let u = t as f64 / (n - 1) as f64;
        (1.0 - u) * a[j] + u * b[j]
    });
    Ok(LocoTargets {
        y: Array2::ones((n, 1)),
        s,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LocoComponents {
    pub total: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub stability: f64,
    pub stance: f64,
}

struct LocoGraph {
    z: Var,
    total: Var,
    parts: [Var; 4],
}

fn build_graph<'a>(
    tape: &mut Tape<'a>,
    z: &Array2<f64>,
    targets: &LocoTargets,
    weights: &'a VaeWeights,
    config: &LocoConfig,
) -> Result<LocoGraph> {
    let n = z.nrows();
    if n < 3 || z.ncols() != weights.arch.latent || targets.y.nrows() != n || targets.s.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "latent trajectory {:?} with {} targets for a {}-wide latent space",
            z.dim(),
            targets.y.nrows(),
            weights.arch.latent
        )));
    }
    let zv = tape.leaf(z.clone(), true);
    let x_hat = weights.decoder.bind(tape, false).forward(tape, zv)?;
    let stats = &weights.meta.stats;
    let q_norm = tape.columns(x_hat, layout::Q.start, layout::Q.end)?;
    let q = tape.col_affine(q_norm, &stats.std[layout::Q], &stats.mean[layout::Q])?;
    let vel = tape.time_diff(q, config.rate)?;
    let acc = tape.time_diff(vel, config.rate)?;
    let v2 = tape.square(vel);
    let v_term = tape.sum(v2);
    let a2 = tape.square(acc);
    let a_term = tape.sum(a2);
    let yl = weights.stability_head.bind(tape, false).forward(tape, zv)?;
    let y_term = tape.bce_logits(yl, targets.y.clone(), config.lambda0)?;
    let sl = weights.stance_head.bind(tape, false).forward(tape, zv)?;
    let s_term = tape.bce_logits(sl, targets.s.clone(), config.lambda1 / 4.0)?;
    let smooth = tape.add(v_term, a_term)?;
    let constraints = tape.add(y_term, s_term)?;
    let total = tape.add(smooth, constraints)?;
    Ok(LocoGraph {
        z: zv,
        total,
        parts: [v_term, a_term, y_term, s_term],
    })
}

fn components(tape: &Tape, g: &LocoGraph) -> LocoComponents {
    LocoComponents {
        total: tape.scalar(g.total),
        velocity: tape.scalar(g.parts[0]),
        acceleration: tape.scalar(g.parts[1]),
        stability: tape.scalar(g.parts[2]),
        stance: tape.scalar(g.parts[3]),
    }
}

/// Squared joint velocities and accelerations summed over the horizon plus
/// the weighted stability and stance cross-entropies summed over time.
pub fn locomotion_loss(
    z: &LatentTrajectory,
    targets: &LocoTargets,
    weights: &VaeWeights,
    config: &LocoConfig,
) -> Result<LocoComponents> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, &z.z, targets, weights, config)?;
    Ok(components(&tape, &g))
}

/// Loss and its gradient with respect to every latent code.
pub fn locomotion_gradient(
    z: &LatentTrajectory,
    targets: &LocoTargets,
    weights: &VaeWeights,
    config: &LocoConfig,
) -> Result<(LocoComponents, Array2<f64>)> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, &z.z, targets, weights, config)?;
    let grad = tape.grad_of(g.total, &[g.z])?.grads.remove(0);
    Ok((components(&tape, &g), grad))
}

/// Implicit treatment of the smoothness terms under a linearised decoder.
///
/// With joint angles `q ≈ J z` and `‖J‖² ≤ κ`, the velocity and acceleration
/// penalties have curvature up to `κ (f_s² D₁ᵀD₁ + f_s⁴ D₂ᵀD₂)` along time,
/// which at 200 Hz makes any practical explicit step unstable on the fastest
/// modes. Solving `(I + α κ (f_s² D₁ᵀD₁ + f_s⁴ D₂ᵀD₂)) d = ∇` damps those modes
/// while leaving slow ones (and the constant mode exactly) at step `α`.
#[derive(Debug, Clone)]
pub struct TimeSmoother {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    skip: usize,
}

impl TimeSmoother {
    /// With `pin_first` the first row is held fixed: the system is restricted
    /// to the remaining rows and its direction is zero there.
    pub fn new(n: usize, rate: f64, alpha: f64, kappa: f64, pin_first: bool) -> Result<Self> {
        let mut a = DMatrix::<f64>::identity(n, n);
        let c1 = alpha * kappa * rate.powi(2);
        let c2 = alpha * kappa * rate.powi(4);
        // Dᵀ D for first and second forward differences.
        for (coef, stencil) in [(c1, &[-1.0, 1.0][..]), (c2, &[1.0, -2.0, 1.0][..])] {
            let k = stencil.len();
            for start in 0..=n.saturating_sub(k) {
                for (i, si) in stencil.iter().enumerate() {
                    for (j, sj) in stencil.iter().enumerate() {
                        a[(start + i, start + j)] += coef * si * sj;
                    }
                }
            }
        }
        let skip = usize::from(pin_first);
        let free = a.view((skip, skip), (n - skip, n - skip)).clone_owned();
        let chol = free
            .cholesky()
            .ok_or_else(|| Error::BadInput("smoothing system is not positive definite".into()))?;
        Ok(Self { chol, skip })
    }

    pub fn apply(&self, grad: &Array2<f64>) -> Array2<f64> {
        let (n, d) = grad.dim();
        let k = self.skip;
        let g = DMatrix::from_fn(n - k, d, |i, j| grad[[i + k, j]]);
        let x = self.chol.solve(&g);
        Array2::from_shape_fn((n, d), |(i, j)| if i < k { 0.0 } else { x[(i - k, j)] })
    }
}

/// Squared spectral norm of the decoded joint angles' Jacobian with respect
/// to the latent code at `z0`, by central differences.
pub fn decoder_joint_gain(z0: &Array2<f64>, weights: &VaeWeights) -> f64 {
    let k = z0.ncols();
    let h = 1e-5;
    let mut probes = Array2::zeros((2 * k, k));
    for j in 0..k {
        for (r, sign) in [(2 * j, 1.0), (2 * j + 1, -1.0)] {
            probes.row_mut(r).assign(&z0.row(0));
            probes[[r, j]] += sign * h;
        }
    }
    let x = weights.decode(&probes);
    let std = &weights.meta.stats.std[layout::Q];
    let jac = DMatrix::from_fn(layout::Q.len(), k, |i, j| {
        let c = layout::Q.start + i;
        (x[[2 * j, c]] - x[[2 * j + 1, c]]) * std[i] / (2.0 * h)
    });
    let s = jac.singular_values();
    let top = s.iter().copied().fold(0.0, f64::max);
    top * top
}

/// Result of one trajectory optimisation.
#[derive(Debug, Clone)]
pub struct LocoOutcome {
    pub trajectory: StateTrajectory,
    pub latent: LatentTrajectory,
    pub components: LocoComponents,
    /// Loss of the retained iterate after every iteration.
    pub losses: Vec<f64>,
    pub final_alpha: f64,
    pub accepted_steps: usize,
}

/// Gradient descent on the latent trajectory from `N` copies of the encoded
/// `x0`. A step that raises the loss is discarded and the step size halved.
pub fn optimize_trajectory_detailed(
    x0: &RobotState,
    from: StanceId,
    to: StanceId,
    weights: &VaeWeights,
    config: &LocoConfig,
    segment: usize,
) -> Result<LocoOutcome> {
    let z0 = encode_state(x0, weights)?;
    optimize_from_latent(&z0, from, to, weights, config, segment)
}

/// [`optimize_trajectory_detailed`] starting from a latent row instead of
/// an encoded state.
pub fn optimize_from_latent(
    z0: &Array2<f64>,
    from: StanceId,
    to: StanceId,
    weights: &VaeWeights,
    config: &LocoConfig,
    segment: usize,
) -> Result<LocoOutcome> {
    config.validate()?;
    let targets = build_locomotion_targets(from, to, config.horizon)?;
    if z0.nrows() != 1 || z0.ncols() != weights.arch.latent {
        return Err(Error::ShapeMismatch(format!("latent seed of shape {:?}", z0.dim())));
    }
    let mut z = LatentTrajectory::repeat(z0, config.horizon, config.rate);
    let (mut comps, mut grad) = locomotion_gradient(&z, &targets, weights, config)?;
    if !comps.total.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            loss: comps.total,
        });
    }
    let mut alpha = config.alpha;
    let kappa = if config.precondition {
        decoder_joint_gain(z0, weights)
    } else {
        0.0
    };
    // Built once at the configured step so backoff only shortens the step.
    let smoother = match config.precondition {
        true => Some(TimeSmoother::new(
            config.horizon,
            config.rate,
            config.alpha,
            kappa,
            config.pin_start,
        )?),
        false => None,
    };
    let mut losses = Vec::with_capacity(config.iterations);
    let mut accepted = 0;
    for _ in 0..config.iterations {
        let direction = match &smoother {
            Some(p) => p.apply(&grad),
            None => {
                let mut d = grad.clone();
                if config.pin_start {
                    d.row_mut(0).fill(0.0);
                }
                d
            }
        };
        let candidate = &z.z - &(&direction * alpha);
        let mut tape = Tape::new();
        let g = build_graph(&mut tape, &candidate, &targets, weights, config)?;
        let c = components(&tape, &g);
        if c.total.is_finite() && c.total <= comps.total {
            let rel = (comps.total - c.total) / comps.total.abs().max(f64::MIN_POSITIVE);
            grad = tape.grad_of(g.total, &[g.z])?.grads.remove(0);
            z.z = candidate;
            comps = c;
            accepted += 1;
            losses.push(comps.total);
            if rel < config.rel_tol {
                break;
            }
            // Recover towards the configured step after a success.
            alpha = (alpha * 2.0).min(config.alpha);
        } else {
            alpha *= 0.5;
            losses.push(comps.total);
            if alpha < f64::MIN_POSITIVE {
                break;
            }
        }
    }
    Ok(LocoOutcome {
        trajectory: decode_latents(&z.z, weights, config.rate, segment),
        latent: z,
        components: comps,
        losses,
        final_alpha: alpha,
        accepted_steps: accepted,
    })
}

pub fn optimize_trajectory(
    x0: &RobotState,
    from: StanceId,
    to: StanceId,
    weights: &VaeWeights,
    config: &LocoConfig,
) -> Result<StateTrajectory> {
    optimize_trajectory_detailed(x0, from, to, weights, config, 0).map(|o| o.trajectory)
}

/// Chain `n_transitions` segment optimisations around the stance cycle. Each
/// segment starts from the last latent code of the previous one, so the
/// joined trajectory has no re-encoding jump at the boundaries.
pub fn plan_gait_cycle(
    x0: &RobotState,
    weights: &VaeWeights,
    config: &LocoConfig,
    n_transitions: usize,
) -> Result<(StateTrajectory, Vec<LocoOutcome>)> {
    config.validate()?;
    let z0 = encode_state(x0, weights)?;
    let start = decode_latents(&z0, weights, config.rate, 0);
    let stance = most_likely_stance(&start.s_prob[0]);
    if !stance.is_all_contact() {
        return Err(Error::BadInput(format!(
            "initial state is predicted in swing stance {stance}, expected an all-contact stance"
        )));
    }
    let mut traj = start;
    let mut outcomes = Vec::with_capacity(n_transitions);
    let mut current = z0;
    let mut from = stance;
    for k in 0..n_transitions {
        let to = from.successor();
        let outcome = optimize_from_latent(&current, from, to, weights, config, k)?;
        let reached = most_likely_stance(outcome.trajectory.s_prob.last().expect("horizon ≥ 3"));
        if reached != to {
            return Err(Error::StanceRegressed {
                target: to.id(),
                reached: reached.id(),
            });
        }
        current = outcome.latent.z.slice(ndarray::s![config.horizon - 1.., ..]).to_owned();
        if k == 0 {
            traj = outcome.trajectory.clone();
        } else {
            traj.append(outcome.trajectory.clone(), true);
        }
        outcomes.push(outcome);
        from = to;
    }
    Ok((traj, outcomes))
}
