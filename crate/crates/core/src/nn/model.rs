use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Dense, Mlp, MlpVars};
use super::tape::{Tape, Var};
use crate::dataset::NormalisationStats;
use crate::error::{Error, Result};

/// Layer widths of the VAE and its two heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub latent: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
}

impl VaeArch {
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 256,
            hidden_layers: 2,
            latent: 64,
            head_hidden: 64,
            head_layers: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl BaselineArch {
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            hidden_layers: 3,
        }
    }
}

/// Provenance carried along with trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub stats: NormalisationStats,
    pub params_hash: String,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeWeights {
    pub arch: VaeArch,
    pub encoder: Mlp,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Mlp,
    pub stability_head: Mlp,
    pub stance_head: Mlp,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWeights {
    pub arch: BaselineArch,
    /// Outputs one stability logit followed by four stance logits.
    pub net: Mlp,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `z = µ`.
    Mean,
    /// `z = µ + σ ⊙ ε` with `ε` drawn from a generator seeded with the value.
    Sample(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeOutput {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub z: Array2<f64>,
    pub x_hat: Array2<f64>,
    pub y_logit: Array2<f64>,
    pub s_logits: Array2<f64>,
}

fn widths(input: usize, hidden: usize, layers: usize, output: Option<usize>) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers));
    w.extend(output);
    w
}

pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn check_input(x: &Array2<f64>, dim: usize) -> Result<()> {
    if x.ncols() != dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, model expects {dim}",
            x.ncols()
        )));
    }
    Ok(())
}

impl VaeWeights {
    pub fn init(arch: VaeArch, meta: ModelMeta, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = arch;
        let encoder = Mlp::init(
            &widths(a.input_dim, a.hidden, a.hidden_layers, None),
            Activation::Elu,
            &mut rng,
        );
        let mu_head = Dense::init(a.hidden, a.latent, Activation::Linear, &mut rng);
        let logvar_head = Dense::init(a.hidden, a.latent, Activation::Linear, &mut rng);
        let decoder = Mlp::init(
            &widths(a.latent, a.hidden, a.hidden_layers, Some(a.input_dim)),
            Activation::Linear,
            &mut rng,
        );
        let head = |out, rng: &mut ChaCha8Rng| {
            Mlp::init(
                &widths(a.latent, a.head_hidden, a.head_layers, Some(out)),
                Activation::Linear,
                rng,
            )
        };
        let stability_head = head(1, &mut rng);
        let stance_head = head(4, &mut rng);
        Self {
            arch,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            stability_head,
            stance_head,
            meta,
        }
    }

    /// Parameters in storage order: encoder, µ head, log-variance head,
    /// decoder, stability head, stance head; each layer as `w` then `b`.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.encoder.params();
        p.extend([
            &self.mu_head.w,
            &self.mu_head.b,
            &self.logvar_head.w,
            &self.logvar_head.b,
        ]);
        p.extend(self.decoder.params());
        p.extend(self.stability_head.params());
        p.extend(self.stance_head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend([
            &mut self.mu_head.w,
            &mut self.mu_head.b,
            &mut self.logvar_head.w,
            &mut self.logvar_head.b,
        ]);
        p.extend(self.decoder.params_mut());
        p.extend(self.stability_head.params_mut());
        p.extend(self.stance_head.params_mut());
        p
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Encoder mean and log-variance.
    pub fn encode(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_input(x, self.arch.input_dim)?;
        let h = self.encoder.forward(x);
        Ok((self.mu_head.forward(&h), self.logvar_head.forward(&h)))
    }

    pub fn decode(&self, z: &Array2<f64>) -> Array2<f64> {
        self.decoder.forward(z)
    }

    pub fn stability_logit(&self, z: &Array2<f64>) -> Array2<f64> {
        self.stability_head.forward(z)
    }

    pub fn stance_logits(&self, z: &Array2<f64>) -> Array2<f64> {
        self.stance_head.forward(z)
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<VaeOutput> {
        let (mu, logvar) = self.encode(x)?;
        let z = match mode {
            Mode::Mean => mu.clone(),
            Mode::Sample(seed) => {
                let eps = standard_normal(mu.nrows(), mu.ncols(), seed);
                &mu + &(logvar.mapv(|lv| (0.5 * lv).exp()) * eps)
            }
        };
        Ok(VaeOutput {
            x_hat: self.decode(&z),
            y_logit: self.stability_logit(&z),
            s_logits: self.stance_logits(&z),
            mu,
            logvar,
            z,
        })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> VaeVars {
        let single = |d: &'a Dense, tape: &mut Tape<'a>| MlpVars {
            layers: vec![(
                tape.leaf_ref(&d.w, requires_grad),
                tape.leaf_ref(&d.b, requires_grad),
                d.act,
            )],
        };
        VaeVars {
            encoder: self.encoder.bind(tape, requires_grad),
            mu_head: single(&self.mu_head, tape),
            logvar_head: single(&self.logvar_head, tape),
            decoder: self.decoder.bind(tape, requires_grad),
            stability_head: self.stability_head.bind(tape, requires_grad),
            stance_head: self.stance_head.bind(tape, requires_grad),
        }
    }
}

pub fn vae_forward(x: &Array2<f64>, weights: &VaeWeights, mode: Mode) -> Result<VaeOutput> {
    weights.forward(x, mode)
}

/// VAE parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct VaeVars {
    pub encoder: MlpVars,
    pub mu_head: MlpVars,
    pub logvar_head: MlpVars,
    pub decoder: MlpVars,
    pub stability_head: MlpVars,
    pub stance_head: MlpVars,
}

impl VaeVars {
    /// Same order as [`VaeWeights::params`].
    pub fn vars(&self) -> Vec<Var> {
        [
            &self.encoder,
            &self.mu_head,
            &self.logvar_head,
            &self.decoder,
            &self.stability_head,
            &self.stance_head,
        ]
        .iter()
        .flat_map(|m| m.vars())
        .collect()
    }
}

impl BaselineWeights {
    pub fn init(arch: BaselineArch, meta: ModelMeta, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::init(
            &widths(arch.input_dim, arch.hidden, arch.hidden_layers, Some(5)),
            Activation::Linear,
            &mut rng,
        );
        Self { arch, net, meta }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.net.params_mut()
    }

    /// `(stability logits, stance logits)`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_input(x, self.arch.input_dim)?;
        let out = self.net.forward(x);
        Ok((out.slice(s![.., 0..1]).to_owned(), out.slice(s![.., 1..5]).to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::sigmoid;

    pub(crate) fn meta(dim: usize) -> ModelMeta {
        ModelMeta {
            stats: NormalisationStats {
                mean: vec![0.0; dim],
                std: vec![1.0; dim],
            },
            params_hash: String::new(),
            dataset_hash: String::new(),
        }
    }

    #[test]
    fn standard_shapes() {
        let w = VaeWeights::init(VaeArch::standard(51), meta(51), 0);
        let x = standard_normal(3, 51, 1);
        let out = w.forward(&x, Mode::Mean).unwrap();
        assert_eq!(out.mu.dim(), (3, 64));
        assert_eq!(out.x_hat.dim(), (3, 51));
        assert_eq!(out.y_logit.dim(), (3, 1));
        assert_eq!(out.s_logits.dim(), (3, 4));
        assert_eq!(w.encoder.layers.len(), 2);
        assert_eq!(w.decoder.layers.len(), 3);
        assert_eq!(w.stability_head.layers.len(), 4);
        let p = out.y_logit.iter().chain(out.s_logits.iter()).map(|l| sigmoid(*l));
        assert!(p.into_iter().all(|p| p > 0.0 && p < 1.0));
        assert!(matches!(
            w.forward(&standard_normal(1, 54, 0), Mode::Mean),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn modes_are_deterministic() {
        let w = VaeWeights::init(VaeArch::standard(54), meta(54), 2);
        let x = standard_normal(2, 54, 3);
        assert_eq!(w.forward(&x, Mode::Mean).unwrap(), w.forward(&x, Mode::Mean).unwrap());
        let a = w.forward(&x, Mode::Sample(9)).unwrap();
        assert_eq!(a, w.forward(&x, Mode::Sample(9)).unwrap());
        assert_ne!(a.z, w.forward(&x, Mode::Sample(10)).unwrap().z);
    }

    #[test]
    fn bound_vars_follow_param_order() {
        let w = VaeWeights::init(VaeArch::standard(51), meta(51), 0);
        let mut tape = Tape::new();
        let vars = w.bind(&mut tape, true).vars();
        let params = w.params();
        assert_eq!(vars.len(), params.len());
        for (v, p) in vars.iter().zip(params) {
            assert_eq!(tape.value(*v), p);
        }
    }
}
