use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{elu, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Linear,
}

/// Fully connected layer `y = act(x · w + b)` with `w` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    pub act: Activation,
}

impl Dense {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(inputs: usize, outputs: usize, act: Activation, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / inputs as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound)),
            b: Array2::zeros((1, outputs)),
            act,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        Zip::from(y.rows_mut()).for_each(|mut r| r += &self.b.row(0));
        if self.act == Activation::Elu {
            y.mapv_inplace(elu);
        }
        y
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; hidden layers use ELU, the last layer
    /// uses `last`.
    pub fn init(widths: &[usize], last: Activation, rng: &mut impl Rng) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Elu };
                Dense::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        for l in &self.layers[1..] {
            h = l.forward(&h);
        }
        h
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf_ref(&l.w, requires_grad),
                        tape.leaf_ref(&l.b, requires_grad),
                        l.act,
                    )
                })
                .collect(),
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var, Activation)>,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = tape.affine(h, w, b)?;
            if act == Activation::Elu {
                h = tape.elu(h);
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}
