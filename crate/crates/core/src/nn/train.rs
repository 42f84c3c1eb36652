use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{standard_normal, BaselineArch, BaselineWeights, Mode, ModelMeta, VaeArch, VaeVars, VaeWeights};
use super::tape::{sigmoid, Tape, Var};
use crate::dataset::{Dataset, NormalisationStats, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// KL weight.
    pub beta: f64,
    /// Stability BCE weight.
    pub mu1: f64,
    /// Stance BCE weight.
    pub mu2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.3,
            mu1: 1.0,
            mu2: 1.0,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.beta, self.mu1, self.mu2, self.learning_rate];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::BadInput(format!("training settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Normalised inputs with stability and stance targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub s: Array2<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[Sample], stats: &NormalisationStats) -> Result<Self> {
        let dim = stats.dim();
        let mut x = Array2::zeros((samples.len(), dim));
        let mut y = Array2::zeros((samples.len(), 1));
        let mut s = Array2::zeros((samples.len(), 4));
        for (i, smp) in samples.iter().enumerate() {
            if smp.x.0.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "sample has {} features, statistics {dim}",
                    smp.x.0.len()
                )));
            }
            for (j, v) in stats.normalise(&smp.x.0).into_iter().enumerate() {
                x[[i, j]] = v;
            }
            y[[i, 0]] = f64::from(u8::from(smp.y));
            for j in 0..4 {
                s[[i, j]] = smp.s.0[j];
            }
        }
        Ok(Self { x, y, s })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            s: self.s.select(Axis(0), rows),
        }
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub stability: f64,
    pub stance: f64,
}

impl LossComponents {
    fn add_scaled(&mut self, o: &Self, w: f64) {
        self.total += w * o.total;
        self.recon += w * o.recon;
        self.kl += w * o.kl;
        self.stability += w * o.stability;
        self.stance += w * o.stance;
    }
}

pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

struct LossVars {
    total: Var,
    parts: [Var; 4],
}

fn vae_loss_on_tape(
    tape: &mut Tape,
    vars: &VaeVars,
    batch: &Batch,
    config: &TrainConfig,
    eps: Option<Array2<f64>>,
) -> Result<LossVars> {
    let n = batch.len() as f64;
    let x = tape.leaf(batch.x.clone(), false);
    let h = vars.encoder.forward(tape, x)?;
    let mu = vars.mu_head.forward(tape, h)?;
    let logvar = vars.logvar_head.forward(tape, h)?;
    let z = match eps {
        Some(e) => tape.reparam(mu, logvar, e)?,
        None => mu,
    };
    let x_hat = vars.decoder.forward(tape, z)?;
    let recon = tape.mse(x_hat, x)?;
    let kl = tape.kl_diag(mu, logvar, config.beta / n)?;
    let yl = vars.stability_head.forward(tape, z)?;
    let stab = tape.bce_logits(yl, batch.y.clone(), config.mu1 / n)?;
    let sl = vars.stance_head.forward(tape, z)?;
    let stance = tape.bce_logits(sl, batch.s.clone(), config.mu2 / (4.0 * n))?;
    let a = tape.add(recon, kl)?;
    let b = tape.add(stab, stance)?;
    let total = tape.add(a, b)?;
    Ok(LossVars {
        total,
        parts: [recon, kl, stab, stance],
    })
}

fn components(tape: &Tape, l: &LossVars) -> LossComponents {
    LossComponents {
        total: tape.scalar(l.total),
        recon: tape.scalar(l.parts[0]),
        kl: tape.scalar(l.parts[1]),
        stability: tape.scalar(l.parts[2]),
        stance: tape.scalar(l.parts[3]),
    }
}

fn noise(mode: Mode, rows: usize, cols: usize) -> Option<Array2<f64>> {
    match mode {
        Mode::Mean => None,
        Mode::Sample(seed) => Some(standard_normal(rows, cols, seed)),
    }
}

/// Training objective: mean reconstruction error plus weighted KL, stability
/// and stance terms.
pub fn loss_total(batch: &Batch, weights: &VaeWeights, config: &TrainConfig, mode: Mode) -> Result<LossComponents> {
    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape, false);
    let l = vae_loss_on_tape(
        &mut tape,
        &vars,
        batch,
        config,
        noise(mode, batch.len(), weights.arch.latent),
    )?;
    Ok(components(&tape, &l))
}

/// Loss and its gradient for every parameter, in [`VaeWeights::params`] order.
pub fn vae_loss_gradients(
    batch: &Batch,
    weights: &VaeWeights,
    config: &TrainConfig,
    mode: Mode,
) -> Result<(LossComponents, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape, true);
    let l = vae_loss_on_tape(
        &mut tape,
        &vars,
        batch,
        config,
        noise(mode, batch.len(), weights.arch.latent),
    )?;
    let g = tape.grad_of(l.total, &vars.vars())?;
    Ok((components(&tape, &l), g.grads))
}

fn baseline_loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    weights: &'a BaselineWeights,
    batch: &Batch,
    config: &TrainConfig,
    requires_grad: bool,
) -> Result<(LossVars, Vec<Var>)> {
    let n = batch.len() as f64;
    let vars = weights.net.bind(tape, requires_grad);
    let x = tape.leaf(batch.x.clone(), false);
    let out = vars.forward(tape, x)?;
    let yl = tape.columns(out, 0, 1)?;
    let sl = tape.columns(out, 1, 5)?;
    let stab = tape.bce_logits(yl, batch.y.clone(), config.mu1 / n)?;
    let stance = tape.bce_logits(sl, batch.s.clone(), config.mu2 / (4.0 * n))?;
    let total = tape.add(stab, stance)?;
    let zero = tape.leaf(Array2::zeros((1, 1)), false);
    Ok((
        LossVars {
            total,
            parts: [zero, zero, stab, stance],
        },
        vars.vars(),
    ))
}

pub fn baseline_loss(batch: &Batch, weights: &BaselineWeights, config: &TrainConfig) -> Result<LossComponents> {
    let mut tape = Tape::new();
    let (l, _) = baseline_loss_on_tape(&mut tape, weights, batch, config, false)?;
    Ok(components(&tape, &l))
}

pub fn baseline_loss_gradients(
    batch: &Batch,
    weights: &BaselineWeights,
    config: &TrainConfig,
) -> Result<(LossComponents, Vec<Array2<f64>>)> {
    let mut tape = Tape::new();
    let (l, vars) = baseline_loss_on_tape(&mut tape, weights, batch, config, true)?;
    let g = tape.grad_of(l.total, &vars)?;
    Ok((components(&tape, &l), g.grads))
}

/// First- and second-moment gradient optimiser.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[&Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = shapes.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Test-split metrics after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub train: LossComponents,
    pub test: LossComponents,
    /// Root-mean-square reconstruction error in normalised units; absent for
    /// the baseline.
    pub test_recon_rmse: Option<f64>,
    pub test_stability_accuracy: f64,
    pub test_stance_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochLog {
        &self.epochs[self.best_epoch]
    }
}

#[derive(Debug, Clone)]
pub struct Trained<W> {
    pub weights: W,
    pub log: TrainingLog,
}

/// Hash over the features and labels of every sample.
pub fn dataset_hash(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for s in dataset.all() {
        for v in &s.x.0 {
            h.update(v.to_le_bytes());
        }
        h.update([u8::from(s.y), s.stance_id.id()]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn meta_for(dataset: &Dataset) -> ModelMeta {
    ModelMeta {
        stats: dataset.stats.clone(),
        params_hash: dataset.params_hash.clone(),
        dataset_hash: dataset_hash(dataset),
    }
}

/// `(stability accuracy, stance exact-match rate)` of logits against a batch.
pub fn classification_accuracy(y_logit: &Array2<f64>, s_logits: &Array2<f64>, batch: &Batch) -> (f64, f64) {
    let n = batch.len() as f64;
    let stab = y_logit
        .iter()
        .zip(batch.y.iter())
        .filter(|(l, y)| (**l > 0.0) == (**y > 0.5))
        .count() as f64;
    let stance = s_logits
        .outer_iter()
        .zip(batch.s.outer_iter())
        .filter(|(l, s)| l.iter().zip(s.iter()).all(|(l, s)| (sigmoid(*l) > 0.5) == (*s > 0.5)))
        .count() as f64;
    (stab / n, stance / n)
}

fn check_finite(c: &LossComponents, iteration: usize) -> Result<()> {
    if c.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            loss: c.total,
        })
    }
}

fn check_classes(dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::BadInput("empty split".into()));
    }
    let both = |s: &[Sample]| s.iter().any(|x| x.y) && s.iter().any(|x| !x.y);
    if !both(&dataset.train) {
        return Err(Error::BadInput("training split lacks one stability class".into()));
    }
    Ok(())
}

fn evaluate_vae(w: &VaeWeights, test: &Batch, config: &TrainConfig) -> Result<(LossComponents, f64, f64, f64)> {
    let loss = loss_total(test, w, config, Mode::Mean)?;
    let out = w.forward(&test.x, Mode::Mean)?;
    let rmse = ((&out.x_hat - &test.x).mapv(|d| d * d).mean().unwrap_or(0.0)).sqrt();
    let (a, s) = classification_accuracy(&out.y_logit, &out.s_logits, test);
    Ok((loss, rmse, a, s))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    ));
    order
}

/// Mini-batch training of the VAE and both heads; returns the weights with
/// the lowest test loss.
pub fn train_vae(dataset: &Dataset, arch: VaeArch, config: &TrainConfig) -> Result<Trained<VaeWeights>> {
    config.validate()?;
    check_classes(dataset)?;
    if arch.input_dim != dataset.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "architecture input {} vs dataset {}",
            arch.input_dim,
            dataset.input_dim()
        )));
    }
    let train = Batch::from_samples(&dataset.train, &dataset.stats)?;
    let test = Batch::from_samples(&dataset.test, &dataset.stats)?;
    let mut w = VaeWeights::init(arch, meta_for(dataset), config.seed);
    let mut adam = Adam::new(config.learning_rate, &w.params());

    let (t0, r0, a0, s0) = evaluate_vae(&w, &test, config)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train: loss_total(&train, &w, config, Mode::Mean)?,
        test: t0,
        test_recon_rmse: Some(r0),
        test_stability_accuracy: a0,
        test_stance_accuracy: s0,
    }];
    let mut best = (t0.total, 0, w.clone());
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut acc = LossComponents::default();
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let seed = config.seed.wrapping_add(0x5151_0000_0000).wrapping_add(step);
            let (c, g) = vae_loss_gradients(&batch, &w, config, Mode::Sample(seed))?;
            check_finite(&c, step as usize)?;
            adam.step(w.params_mut(), &g);
            acc.add_scaled(&c, chunk.len() as f64 / train.len() as f64);
            step += 1;
        }
        let (t, r, a, s) = evaluate_vae(&w, &test, config)?;
        check_finite(&t, step as usize)?;
        if t.total < best.0 {
            best = (t.total, epoch, w.clone());
        }
        log.push(EpochLog {
            epoch,
            train: acc,
            test: t,
            test_recon_rmse: Some(r),
            test_stability_accuracy: a,
            test_stance_accuracy: s,
        });
    }
    Ok(Trained {
        weights: best.2,
        log: TrainingLog {
            epochs: log,
            best_epoch: best.1,
        },
    })
}

fn evaluate_baseline(w: &BaselineWeights, test: &Batch, config: &TrainConfig) -> Result<(LossComponents, f64, f64)> {
    let loss = baseline_loss(test, w, config)?;
    let (yl, sl) = w.forward(&test.x)?;
    let (a, s) = classification_accuracy(&yl, &sl, test);
    Ok((loss, a, s))
}

/// Train the input-space classifier with the same optimiser settings.
pub fn train_baseline(dataset: &Dataset, arch: BaselineArch, config: &TrainConfig) -> Result<Trained<BaselineWeights>> {
    config.validate()?;
    check_classes(dataset)?;
    if arch.input_dim != dataset.input_dim() {
        return Err(Error::ShapeMismatch("baseline input width".into()));
    }
    let train = Batch::from_samples(&dataset.train, &dataset.stats)?;
    let test = Batch::from_samples(&dataset.test, &dataset.stats)?;
    let mut w = BaselineWeights::init(arch, meta_for(dataset), config.seed);
    let mut adam = Adam::new(config.learning_rate, &w.params());
    let (t0, a0, s0) = evaluate_baseline(&w, &test, config)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train: baseline_loss(&train, &w, config)?,
        test: t0,
        test_recon_rmse: None,
        test_stability_accuracy: a0,
        test_stance_accuracy: s0,
    }];
    let mut best = (t0.total, 0, w.clone());
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut acc = LossComponents::default();
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let (c, g) = baseline_loss_gradients(&batch, &w, config)?;
            check_finite(&c, step)?;
            adam.step(w.params_mut(), &g);
            acc.add_scaled(&c, chunk.len() as f64 / train.len() as f64);
            step += 1;
        }
        let (t, a, s) = evaluate_baseline(&w, &test, config)?;
        check_finite(&t, step)?;
        if t.total < best.0 {
            best = (t.total, epoch, w.clone());
        }
        log.push(EpochLog {
            epoch,
            train: acc,
            test: t,
            test_recon_rmse: None,
            test_stability_accuracy: a,
            test_stance_accuracy: s,
        });
    }
    Ok(Trained {
        weights: best.2,
        log: TrainingLog {
            epochs: log,
            best_epoch: best.1,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, SamplerConfig};
    use crate::exec::Exec;
    use crate::nn::tape::relative_error;
    use crate::robot::RobotParams;

    fn tiny_arch(input_dim: usize) -> VaeArch {
        VaeArch {
            input_dim,
            hidden: 6,
            hidden_layers: 2,
            latent: 3,
            head_hidden: 4,
            head_layers: 3,
        }
    }

    fn meta(dim: usize) -> ModelMeta {
        ModelMeta {
            stats: NormalisationStats {
                mean: vec![0.0; dim],
                std: vec![1.0; dim],
            },
            params_hash: String::new(),
            dataset_hash: String::new(),
        }
    }

    fn toy_batch(n: usize, dim: usize, seed: u64) -> Batch {
        let x = standard_normal(n, dim, seed);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64);
        let s = Array2::from_shape_fn((n, 4), |(i, j)| ((i + j) % 3 == 0) as u8 as f64);
        Batch { x, y, s }
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_diag_gaussian(&[0.0; 3], &[0.0; 3]), 0.0);
        assert!((kl_diag_gaussian(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        assert!((kl_diag_gaussian(&[0.0], &[1.0]) - (std::f64::consts::E - 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn loss_weights_are_linear() {
        let w = VaeWeights::init(tiny_arch(5), meta(5), 1);
        let b = toy_batch(7, 5, 2);
        let c = TrainConfig::default();
        let base = loss_total(&b, &w, &c, Mode::Sample(3)).unwrap();
        let doubled = loss_total(&b, &w, &TrainConfig { mu1: 2.0, ..c.clone() }, Mode::Sample(3)).unwrap();
        assert!((doubled.stability - 2.0 * base.stability).abs() < 1e-12);
        assert!((doubled.total - base.total - base.stability).abs() < 1e-12);
        let plain = loss_total(
            &b,
            &w,
            &TrainConfig {
                mu1: 0.0,
                mu2: 0.0,
                ..c.clone()
            },
            Mode::Sample(3),
        )
        .unwrap();
        assert!((plain.total - base.recon - base.kl).abs() < 1e-12);
    }

    fn fd_check(mut params: Vec<Array2<f64>>, analytic: &[Array2<f64>], f: impl Fn(&[Array2<f64>]) -> f64) {
        let h = 1e-5;
        let an: Vec<f64> = analytic.iter().flat_map(|a| a.iter().copied()).collect();
        let mut fd = Vec::with_capacity(an.len());
        for k in 0..params.len() {
            for i in 0..params[k].len() {
                let orig = params[k].as_slice().unwrap()[i];
                params[k].as_slice_mut().unwrap()[i] = orig + h;
                let up = f(&params);
                params[k].as_slice_mut().unwrap()[i] = orig - h;
                let down = f(&params);
                params[k].as_slice_mut().unwrap()[i] = orig;
                fd.push((up - down) / (2.0 * h));
            }
        }
        let err = relative_error(&fd, &an);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn vae_gradient_matches_finite_differences() {
        let c = TrainConfig {
            beta: 0.7,
            mu1: 1.3,
            mu2: 0.9,
            ..Default::default()
        };
        for seed in 0..3 {
            let w = VaeWeights::init(tiny_arch(5), meta(5), seed);
            let b = toy_batch(6, 5, seed + 10);
            let (_, g) = vae_loss_gradients(&b, &w, &c, Mode::Sample(seed)).unwrap();
            let params: Vec<Array2<f64>> = w.params().into_iter().cloned().collect();
            fd_check(params, &g, |p| {
                let mut w2 = w.clone();
                for (dst, src) in w2.params_mut().into_iter().zip(p) {
                    dst.assign(src);
                }
                loss_total(&b, &w2, &c, Mode::Sample(seed)).unwrap().total
            });
        }
    }

    #[test]
    fn baseline_gradient_matches_finite_differences() {
        let c = TrainConfig::default();
        let arch = BaselineArch {
            input_dim: 5,
            hidden: 4,
            hidden_layers: 3,
        };
        let w = BaselineWeights::init(arch, meta(5), 4);
        let b = toy_batch(6, 5, 4);
        let (_, g) = baseline_loss_gradients(&b, &w, &c).unwrap();
        let params: Vec<Array2<f64>> = w.params().into_iter().cloned().collect();
        fd_check(params, &g, |p| {
            let mut w2 = w.clone();
            for (dst, src) in w2.params_mut().into_iter().zip(p) {
                dst.assign(src);
            }
            baseline_loss(&b, &w2, &c).unwrap().total
        });
    }

    #[test]
    fn short_training_is_deterministic_and_improves() {
        let d = generate_dataset(
            400,
            0.8,
            11,
            &RobotParams::default(),
            &SamplerConfig::default(),
            Exec::Parallel,
        )
        .unwrap();
        let arch = VaeArch {
            hidden: 32,
            latent: 8,
            head_hidden: 16,
            ..VaeArch::standard(51)
        };
        let c = TrainConfig {
            epochs: 4,
            batch_size: 64,
            ..Default::default()
        };
        let a = train_vae(&d, arch, &c).unwrap();
        let b = train_vae(&d, arch, &c).unwrap();
        assert_eq!(a.weights, b.weights);
        let log = &a.log.epochs;
        assert_eq!(log.len(), 5);
        assert!(log.last().unwrap().test.total < log[0].test.total);

        let base = train_baseline(&d, BaselineArch::standard(51), &c).unwrap();
        assert_eq!(
            base.weights,
            train_baseline(&d, BaselineArch::standard(51), &c).unwrap().weights
        );
    }
}
