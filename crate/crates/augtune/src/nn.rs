//! Layers, parameter sets and losses shared by the two models.
//!
//! Layers are free functions over graph variables; parameters live in a
//! [`ParamSet`] (plain tensors) and are bound into a graph per training
//! step, either as differentiable leaves or as frozen constants.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

/// Named parameter tensors with the seed that initialized them.
#[derive(Clone, Debug)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
    seed: u64,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        ParamSet {
            entries: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        debug_assert!(
            !self.entries.contains_key(name),
            "parameter {name} registered twice"
        );
        self.entries.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        *self.get_mut(name) = t;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Trainable entries: everything except batchnorm running statistics.
    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .keys()
            .filter(|n| !n.contains(".running_"))
            .cloned()
            .collect()
    }
}

/// Graph bindings of a [`ParamSet`], name -> node.
#[derive(Clone)]
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn set(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    /// Current tensor values, e.g. to write back after graph updates.
    pub fn values(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.value()))
            .collect()
    }
}

/// Binds parameters into `graph`. Trainable bindings are leaves; frozen ones
/// are constants with no gradient path.
pub fn bind(graph: &Graph, params: &ParamSet, trainable: bool) -> BoundParams {
    let mut vars = BTreeMap::new();
    for (name, t) in params.iter() {
        let is_stat = name.contains(".running_");
        let v = if trainable && !is_stat {
            graph.leaf(t.clone())
        } else {
            graph.constant(t.clone())
        };
        vars.insert(name.clone(), v);
    }
    BoundParams { vars }
}

/// Fan-in scaled uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Convolution layer with bias: `conv1d(x, w) + b`.
pub fn conv_layer(x: &Var, w: &Var, b: &Var, stride: usize, dilation: usize) -> Result<Var> {
    let y = x.conv1d(w, stride, dilation)?;
    let s = y.shape();
    y.add(&b.bcast_chan(s[0], s[2])?)
}

/// Transposed convolution layer with bias.
pub fn conv_transposed_layer(x: &Var, w: &Var, b: &Var, stride: usize, dilation: usize) -> Result<Var> {
    let y = x.conv1d_transposed(w, stride, dilation)?;
    let s = y.shape();
    y.add(&b.bcast_chan(s[0], s[2])?)
}

/// Affine layer on `[B,In]`: `x @ w + b` with `w: [In,Out]`.
pub fn linear(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    let y = x.matmul(w)?;
    let n = y.shape()[0];
    y.add(&b.bcast_row(n)?)
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over `[B,C,L]` in training mode.
///
/// Normalizes with per-channel batch statistics (differentiable) and updates
/// the running statistics in place with momentum [`BN_MOMENTUM`]; the running
/// update uses the unbiased variance, matching the usual convention.
pub fn batchnorm1d_train(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
) -> Result<Var> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(TensorError::InvalidShape(format!(
            "batchnorm1d expects [B,C,L], got {s:?}"
        )));
    }
    let (b, _c, l) = (s[0], s[1], s[2]);
    let n = (b * l) as f64;
    let mu = x.sum_channels()?.mul_scalar(1.0 / n);
    let xc = x.sub(&mu.bcast_chan(b, l)?)?;
    let var = xc.mul(&xc)?.sum_channels()?.mul_scalar(1.0 / n);
    let denom = var.add_scalar(BN_EPS).sqrt().bcast_chan(b, l)?;
    let norm = xc.div(&denom)?;
    let y = norm.mul(&gamma.bcast_chan(b, l)?)?.add(&beta.bcast_chan(b, l)?)?;

    let mu_d = mu.value();
    let var_d = var.value();
    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    for i in 0..running_mean.numel() {
        let rm = running_mean.data()[i];
        running_mean.data_mut()[i] = (1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * mu_d.data()[i];
        let rv = running_var.data()[i];
        running_var.data_mut()[i] =
            (1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * var_d.data()[i] * unbias;
    }
    Ok(y)
}

/// Batch normalization in eval mode: running statistics, no side effects.
pub fn batchnorm1d_eval(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Var> {
    let s = x.shape();
    let (b, _c, l) = (s[0], s[1], s[2]);
    let g = x.graph();
    let rm = g.constant(running_mean.clone()).bcast_chan(b, l)?;
    let rv = g.constant(running_var.clone());
    let denom = rv.add_scalar(BN_EPS).sqrt().bcast_chan(b, l)?;
    let norm = x.sub(&rm)?.div(&denom)?;
    norm.mul(&gamma.bcast_chan(b, l)?)?.add(&beta.bcast_chan(b, l)?)
}

/// Inverted-dropout mask with keep probability `keep`; multiply with the
/// activations. The mask is a constant, so gradients treat it as fixed.
pub fn dropout_mask(graph: &Graph, shape: &[usize], keep: f64, rng: &mut ChaCha8Rng) -> Var {
    assert!(keep > 0.0 && keep <= 1.0, "keep probability in (0,1]");
    let n: usize = shape.iter().product();
    let inv = 1.0 / keep;
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { inv } else { 0.0 })
        .collect();
    graph.constant(Tensor::new(shape.to_vec(), data).expect("mask shape"))
}

/// Numerically stable binary cross-entropy on logits.
///
/// `mean(max(z,0) - z*y + ln(1 + exp(-|z|)))` with constant labels `y`.
pub fn bce_with_logits(z: &Var, y: &Var) -> Result<Var> {
    let zy = z.mul(y)?;
    let soft = z.abs().neg().exp().add_scalar(1.0).ln();
    Ok(z.relu().sub(&zy)?.add(&soft)?.mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::rngs;

    #[test]
    fn batchnorm_two_point_standardization() {
        // batch [[1],[3]] => mean 0, outputs close to [-1, 1]
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 3.0]).unwrap());
        let gamma = g.constant(Tensor::from_vec(vec![1.0]));
        let beta = g.constant(Tensor::from_vec(vec![0.0]));
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::full(&[1], 1.0);
        let y = batchnorm1d_train(&x, &gamma, &beta, &mut rm, &mut rv).unwrap();
        let d = y.value();
        assert!((d.data()[0] + 1.0).abs() < 1e-2);
        assert!((d.data()[1] - 1.0).abs() < 1e-2);
        assert!((d.data()[0] + d.data()[1]).abs() < 1e-12);
        // running stats moved toward batch stats
        assert!((rm.data()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 2], vec![2.0, 4.0]).unwrap());
        let gamma = g.constant(Tensor::from_vec(vec![1.0]));
        let beta = g.constant(Tensor::from_vec(vec![0.0]));
        let rm = Tensor::from_vec(vec![2.0]);
        let rv = Tensor::from_vec(vec![4.0]);
        let y = batchnorm1d_eval(&x, &gamma, &beta, &rm, &rv).unwrap();
        let d = y.value();
        assert!((d.data()[0] - 0.0).abs() < 1e-3);
        assert!((d.data()[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn dropout_deterministic_and_scaled() {
        let g = Graph::new();
        let mut r1 = rngs::stream(9, "drop", 0);
        let mut r2 = rngs::stream(9, "drop", 0);
        let m1 = dropout_mask(&g, &[4, 8], 0.8, &mut r1);
        let m2 = dropout_mask(&g, &[4, 8], 0.8, &mut r2);
        assert_eq!(m1.value().data(), m2.value().data());
        for &v in m1.value().data() {
            assert!(v == 0.0 || (v - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_matches_naive_formula() {
        let g = Graph::new();
        let z = g.constant(Tensor::from_vec(vec![0.3, -1.2, 2.0]));
        let y = g.constant(Tensor::from_vec(vec![1.0, 0.0, 1.0]));
        let loss = bce_with_logits(&z, &y).unwrap().item();
        let naive: f64 = [(0.3, 1.0), (-1.2, 0.0), (2.0, 1.0)]
            .iter()
            .map(|&(z, y): &(f64, f64)| {
                let s = 1.0 / (1.0 + (-z).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss - naive).abs() < 1e-12);
    }

    #[test]
    fn layer_gradchecks() {
        // conv + bias, transposed conv + bias, linear, batchnorm(train),
        // avgpool, relu, sigmoid: all against central differences.
        let mut rng = rngs::stream(31, "layer-gradcheck", 0);
        let x0 = uniform_init(&mut rng, &[2, 3, 12], 1);
        let w0 = uniform_init(&mut rng, &[4, 3, 3], 9);
        let b0 = uniform_init(&mut rng, &[4], 9);
        let proj = uniform_init(&mut rng, &[2 * 4 * 5, 1], 1);

        let eval_conv = |x: &Tensor, w: &Tensor, b: &Tensor| -> (f64, Option<(Tensor, Tensor, Tensor)>) {
            let g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let bv = g.leaf(b.clone());
            let y = conv_layer(&xv, &wv, &bv, 2, 1).unwrap();
            let p = g.constant(proj.clone());
            let loss = y.reshape(&[1, y.numel()]).unwrap().matmul(&p).unwrap().sum_all();
            let grads = loss.backward(&[&xv, &wv, &bv]).unwrap();
            (
                loss.item(),
                Some((grads[0].value(), grads[1].value(), grads[2].value())),
            )
        };
        let (_, grads) = eval_conv(&x0, &w0, &b0);
        let (gx, gw, gb) = grads.unwrap();
        let rep = check_gradient(|x| eval_conv(x, &w0, &b0).0, &x0, &gx, 1e-5);
        assert!(rep.max_rel_err < 1e-5, "conv x: {rep:?}");
        let rep = check_gradient(|w| eval_conv(&x0, w, &b0).0, &w0, &gw, 1e-5);
        assert!(rep.max_rel_err < 1e-5, "conv w: {rep:?}");
        let rep = check_gradient(|b| eval_conv(&x0, &w0, b).0, &b0, &gb, 1e-5);
        assert!(rep.max_rel_err < 1e-5, "conv b: {rep:?}");
    }

    #[test]
    fn batchnorm_gradcheck() {
        let mut rng = rngs::stream(77, "bn-gradcheck", 0);
        let x0 = uniform_init(&mut rng, &[3, 2, 4], 1);
        let gamma0 = uniform_init(&mut rng, &[2], 1);
        let proj = uniform_init(&mut rng, &[3 * 2 * 4, 1], 1);
        let eval = |x: &Tensor, gamma: &Tensor| -> (f64, Option<(Tensor, Tensor)>) {
            let g = Graph::new();
            let xv = g.leaf(x.clone());
            let gv = g.leaf(gamma.clone());
            let bv = g.constant(Tensor::zeros(&[2]));
            let mut rm = Tensor::zeros(&[2]);
            let mut rv = Tensor::full(&[2], 1.0);
            let y = batchnorm1d_train(&xv, &gv, &bv, &mut rm, &mut rv).unwrap();
            let p = g.constant(proj.clone());
            let loss = y.reshape(&[1, y.numel()]).unwrap().matmul(&p).unwrap().sum_all();
            let grads = loss.backward(&[&xv, &gv]).unwrap();
            (loss.item(), Some((grads[0].value(), grads[1].value())))
        };
        let (_, g0) = eval(&x0, &gamma0);
        let (gx, gg) = g0.unwrap();
        let rep = check_gradient(|x| eval(x, &gamma0).0, &x0, &gx, 1e-5);
        assert!(rep.max_rel_err < 1e-5, "bn x: {rep:?}");
        let rep = check_gradient(|ga| eval(&x0, ga).0, &gamma0, &gg, 1e-5);
        assert!(rep.max_rel_err < 1e-5, "bn gamma: {rep:?}");
    }

    #[test]
    fn init_determinism() {
        let a = uniform_init(&mut rngs::stream(5, "init", 0), &[8, 4], 4);
        let b = uniform_init(&mut rngs::stream(5, "init", 0), &[8, 4], 4);
        assert_eq!(a.data(), b.data());
    }
}
