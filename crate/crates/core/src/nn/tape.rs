//! Reverse-mode automatic differentiation over 2-D arrays.

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `x · w + b` with `b` a single row broadcast over rows of `x`.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Elu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Per-column `x * scale + shift`.
    ColAffine {
        x: Var,
        scale: Array1<f64>,
    },
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// Mean of squared differences over all elements.
    Mse(Var, Var),
    /// `scale * Σ bce(logit, target)` in log-sum-exp form.
    BceLogits {
        logits: Var,
        targets: Array2<f64>,
        scale: f64,
    },
    /// `scale * Σ ½(µ² + exp(lv) − 1 − lv)`.
    KlDiag {
        mu: Var,
        logvar: Var,
        scale: f64,
    },
    /// `µ + exp(lv / 2) ⊙ ε`.
    Reparam {
        mu: Var,
        logvar: Var,
        eps: Array2<f64>,
    },
    /// Row differences `(x[t] − x[t−1]) * rate` for `t ≥ 1`.
    TimeDiff {
        x: Var,
        rate: f64,
    },
    Columns {
        x: Var,
        start: usize,
    },
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to requested leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Array2<f64>>,
    /// `true` where the leaf has no path to the loss; its gradient is zero.
    pub disconnected: Vec<bool>,
}

/// Computation record. Leaves may borrow their values, so frozen weights are
/// never copied.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `l` against target `t`, finite for every
/// finite `l`.
pub fn bce_with_logits(l: f64, t: f64) -> f64 {
    l.max(0.0) - l * t + (-l.abs()).exp().ln_1p()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf_ref(&mut self, value: &'a Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).dim(), self.value(b).dim());
        if sa != sb {
            return Err(Error::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ncols() != wv.nrows() || bv.dim() != (1, wv.ncols()) {
            return Err(Error::ShapeMismatch(format!(
                "affine: x {:?}, w {:?}, b {:?}",
                xv.dim(),
                wv.dim(),
                bv.dim()
            )));
        }
        let out = xv.dot(wv) + bv;
        Ok(self.push(out, Op::Affine { x, w, b }, &[x, w, b]))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(elu);
        self.push(out, Op::Elu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn col_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if scale.len() != xv.ncols() || shift.len() != xv.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "column affine over {} columns with {} scales",
                xv.ncols(),
                scale.len()
            )));
        }
        let scale = Array1::from(scale.to_vec());
        let out = xv * &scale + &Array1::from(shift.to_vec());
        Ok(self.push(out, Op::ColAffine { x, scale }, &[x]))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(out, Op::Mean(x), &[x])
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (av, bv) = (self.value(a), self.value(b));
        let total = Zip::from(av).and(bv).fold(0.0, |acc, &p, &q| acc + (p - q) * (p - q));
        let out = Array2::from_elem((1, 1), total / av.len() as f64);
        Ok(self.push(out, Op::Mse(a, b), &[a, b]))
    }

    pub fn bce_logits(&mut self, logits: Var, targets: Array2<f64>, scale: f64) -> Result<Var> {
        let lv = self.value(logits);
        if lv.dim() != targets.dim() {
            return Err(Error::ShapeMismatch(format!(
                "bce: logits {:?}, targets {:?}",
                lv.dim(),
                targets.dim()
            )));
        }
        let total = Zip::from(lv)
            .and(&targets)
            .fold(0.0, |acc, &l, &t| acc + bce_with_logits(l, t));
        let out = Array2::from_elem((1, 1), scale * total);
        Ok(self.push(out, Op::BceLogits { logits, targets, scale }, &[logits]))
    }

    pub fn kl_diag(&mut self, mu: Var, logvar: Var, scale: f64) -> Result<Var> {
        self.same_shape(mu, logvar, "kl")?;
        let total = Zip::from(self.value(mu))
            .and(self.value(logvar))
            .fold(0.0, |acc, &m, &lv| acc + 0.5 * (m * m + lv.exp() - 1.0 - lv));
        let out = Array2::from_elem((1, 1), scale * total);
        Ok(self.push(out, Op::KlDiag { mu, logvar, scale }, &[mu, logvar]))
    }

    pub fn reparam(&mut self, mu: Var, logvar: Var, eps: Array2<f64>) -> Result<Var> {
        self.same_shape(mu, logvar, "reparam")?;
        if self.value(mu).dim() != eps.dim() {
            return Err(Error::ShapeMismatch("reparam noise shape".into()));
        }
        let mut out = self.value(mu).clone();
        Zip::from(&mut out)
            .and(self.value(logvar))
            .and(&eps)
            .for_each(|o, &lv, &e| *o += (0.5 * lv).exp() * e);
        Ok(self.push(out, Op::Reparam { mu, logvar, eps }, &[mu, logvar]))
    }

    pub fn time_diff(&mut self, x: Var, rate: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.nrows() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "time difference over {} rows",
                xv.nrows()
            )));
        }
        let out = (&xv.slice(s![1.., ..]) - &xv.slice(s![..-1, ..])) * rate;
        Ok(self.push(out, Op::TimeDiff { x, rate }, &[x]))
    }

    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "columns {start}..{end} of {}",
                xv.ncols()
            )));
        }
        let out = xv.slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::Columns { x, start }, &[x]))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn grad_of(&self, loss: Var, wrt: &[Var]) -> Result<Gradients> {
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |v: Var, d: Array2<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    if self.nodes[x.0].requires_grad {
                        acc(*x, g.dot(&self.value(*w).t()));
                    }
                    if self.nodes[w.0].requires_grad {
                        acc(*w, self.value(*x).t().dot(&g));
                    }
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Elu(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*x))
                        .and(&*node.value)
                        .for_each(|d, &xv, &y| {
                            if xv <= 0.0 {
                                *d *= y + 1.0;
                            }
                        });
                    acc(*x, d);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(*x, d);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Scale(x, c) => acc(*x, g * *c),
                Op::ColAffine { x, scale } => acc(*x, g * scale),
                Op::Square(x) => acc(*x, g * self.value(*x) * 2.0),
                Op::Sum(x) => acc(*x, Array2::from_elem(self.value(*x).dim(), g[[0, 0]])),
                Op::Mean(x) => {
                    let v = self.value(*x);
                    acc(*x, Array2::from_elem(v.dim(), g[[0, 0]] / v.len() as f64));
                }
                Op::Mse(a, b) => {
                    let n = self.value(*a).len() as f64;
                    let d = (self.value(*a) - self.value(*b)) * (2.0 * g[[0, 0]] / n);
                    if self.nodes[b.0].requires_grad {
                        acc(*b, -&d);
                    }
                    acc(*a, d);
                }
                Op::BceLogits { logits, targets, scale } => {
                    let c = scale * g[[0, 0]];
                    let mut d = self.value(*logits).mapv(sigmoid);
                    Zip::from(&mut d).and(targets).for_each(|d, &t| *d = c * (*d - t));
                    acc(*logits, d);
                }
                Op::KlDiag { mu, logvar, scale } => {
                    let c = scale * g[[0, 0]];
                    acc(*mu, self.value(*mu) * c);
                    acc(*logvar, self.value(*logvar).mapv(|lv| 0.5 * c * lv.exp_m1()));
                }
                Op::Reparam { mu, logvar, eps } => {
                    if self.nodes[logvar.0].requires_grad {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(self.value(*logvar))
                            .and(eps)
                            .for_each(|d, &lv, &e| *d *= 0.5 * (0.5 * lv).exp() * e);
                        acc(*logvar, d);
                    }
                    acc(*mu, g);
                }
                Op::TimeDiff { x, rate } => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    let gr = g * *rate;
                    d.slice_mut(s![1.., ..]).assign(&gr);
                    let mut head = d.slice_mut(s![..-1, ..]);
                    head -= &gr;
                    acc(*x, d);
                }
                Op::Columns { x, start } => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*x, d);
                }
            }
        }
        let mut out = Gradients {
            grads: Vec::with_capacity(wrt.len()),
            disconnected: Vec::with_capacity(wrt.len()),
        };
        for v in wrt {
            match grads.get(v.0).and_then(|g| g.as_ref()) {
                Some(g) => {
                    out.grads.push(g.clone());
                    out.disconnected.push(false);
                }
                None => {
                    out.grads.push(Array2::zeros(self.value(*v).dim()));
                    out.disconnected.push(true);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
    }

    /// Compares the gradient of `build` at `inputs` with central differences.
    fn check(inputs: Vec<Array2<f64>>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        let g = tape.grad_of(loss, &vars).unwrap();
        let h = 1e-5;
        let (mut fd, mut an) = (Vec::new(), Vec::new());
        for (k, input) in inputs.iter().enumerate() {
            an.extend(g.grads[k].iter().copied());
            for idx in 0..input.len() {
                let eval = |delta: f64| {
                    let mut perturbed = inputs.clone();
                    perturbed[k].as_slice_mut().unwrap()[idx] += delta;
                    let mut t = Tape::new();
                    let vs: Vec<Var> = perturbed.into_iter().map(|a| t.leaf(a, true)).collect();
                    let l = build(&mut t, &vs);
                    t.scalar(l)
                };
                fd.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        let err = relative_error(&fd, &an);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(array![[3.0]], true);
        let sq = t.square(w);
        let l = t.sum(sq);
        assert_eq!(t.grad_of(l, &[w]).unwrap().grads[0][[0, 0]], 6.0);
    }

    #[test]
    fn non_scalar_and_disconnected() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]], true);
        let b = t.leaf(array![[1.0]], true);
        let sq = t.square(a);
        assert!(matches!(
            t.grad_of(sq, &[a]),
            Err(Error::NonScalarLoss { rows: 1, cols: 2 })
        ));
        let l = t.sum(sq);
        let g = t.grad_of(l, &[a, b]).unwrap();
        assert_eq!(g.disconnected, vec![false, true]);
        assert_eq!(g.grads[1][[0, 0]], 0.0);
    }

    #[test]
    fn primitive_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = random(&mut rng, 4, 3);
            let w = random(&mut rng, 3, 5);
            let b = random(&mut rng, 1, 5);
            check(vec![x.clone(), w, b], |t, v| {
                let a = t.affine(v[0], v[1], v[2]).unwrap();
                let e = t.elu(a);
                let s = t.sigmoid(e);
                let sq = t.square(s);
                t.mean(sq)
            });
            let y = random(&mut rng, 4, 3);
            check(vec![x.clone(), y.clone()], |t, v| {
                let d = t.sub(v[0], v[1]).unwrap();
                let a = t.add(d, v[1]).unwrap();
                let c = t.scale(a, -0.7);
                let m = t.mse(c, v[1]).unwrap();
                let td = t.time_diff(v[1], 3.0).unwrap();
                let tdd = t.time_diff(td, 3.0).unwrap();
                let sq = t.square(tdd);
                let s = t.sum(sq);
                t.add(m, s).unwrap()
            });
            let targets = random(&mut rng, 4, 3).mapv(|v| (v + 1.5) / 3.0);
            check(vec![x.clone(), y.clone()], move |t, v| {
                let cols = t.columns(v[0], 1, 3).unwrap();
                let ca = t.col_affine(cols, &[2.0, -0.5], &[0.1, 0.2]).unwrap();
                let bce = t.bce_logits(ca, targets.slice(s![.., 1..3]).to_owned(), 0.3).unwrap();
                let kl = t.kl_diag(v[0], v[1], 1.7).unwrap();
                t.add(bce, kl).unwrap()
            });
            let eps = random(&mut rng, 4, 3);
            check(vec![x, y], move |t, v| {
                let z = t.reparam(v[0], v[1], eps.clone()).unwrap();
                let sq = t.square(z);
                t.sum(sq)
            });
        }
    }

    #[test]
    fn bce_is_finite_and_correct() {
        for l in [-1e300, -800.0, -5.0, 0.0, 5.0, 800.0, 1e300] {
            for t in [0.0, 0.3, 1.0] {
                assert!(bce_with_logits(l, t).is_finite());
            }
        }
        let p = sigmoid(0.8);
        let naive = -(0.3 * p.ln() + 0.7 * (1.0 - p).ln());
        assert!((bce_with_logits(0.8, 0.3) - naive).abs() < 1e-14);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Array2::zeros((2, 3)), true);
        let b = t.leaf(Array2::zeros((3, 2)), true);
        let bias = t.leaf(Array2::zeros((1, 3)), true);
        assert!(t.add(a, b).is_err());
        assert!(t.affine(a, a, bias).is_err());
        assert!(t.columns(a, 2, 4).is_err());
        let one = t.leaf(Array2::zeros((1, 3)), true);
        assert!(t.time_diff(one, 1.0).is_err());
    }
}
