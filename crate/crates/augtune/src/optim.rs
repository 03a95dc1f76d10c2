//! Adam, in two forms: a plain in-place update on tensors, and a
//! graph-recorded update whose outputs are differentiable functions of the
//! incoming gradients (used by the inner loop the self-tuner differentiates
//! through).

use std::collections::BTreeMap;

use crate::nn::{BoundParams, ParamSet};
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure(&mut self, name: &str, shape: &[usize]) {
        self.m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape));
        self.v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape));
    }

    /// One in-place Adam update. Gradients must be finite; a NaN gradient
    /// aborts with the offending parameter name.
    pub fn step_data(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(TensorError::NanGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get(name).clone();
            if p.shape() != g.shape() {
                return Err(TensorError::InvalidShape(format!(
                    "gradient shape {:?} vs parameter {:?} for {name}",
                    g.shape(),
                    p.shape()
                )));
            }
            self.ensure(name, g.shape());
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            let mut newp = p;
            for i in 0..g.numel() {
                let gi = g.data()[i];
                let mi = self.cfg.beta1 * m.data()[i] + (1.0 - self.cfg.beta1) * gi;
                let vi = self.cfg.beta2 * v.data()[i] + (1.0 - self.cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / c1;
                let vhat = vi / c2;
                newp.data_mut()[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            params.set(name, newp);
        }
        Ok(())
    }

    /// Binds the moments as graph constants (for one unrolled epoch).
    pub fn bind_moments(&mut self, graph: &Graph, names: &[String], params: &ParamSet) -> (BTreeMap<String, Var>, BTreeMap<String, Var>) {
        for n in names {
            let shape = params.get(n).shape().to_vec();
            self.ensure(n, &shape);
        }
        let m = names
            .iter()
            .map(|n| (n.clone(), graph.constant(self.m[n].clone())))
            .collect();
        let v = names
            .iter()
            .map(|n| (n.clone(), graph.constant(self.v[n].clone())))
            .collect();
        (m, v)
    }

    /// Writes updated moment values back and advances the step counter,
    /// after an unrolled phase of `steps` graph updates.
    pub fn absorb(&mut self, m: &BTreeMap<String, Var>, v: &BTreeMap<String, Var>, steps: u64) {
        for (n, var) in m {
            self.m.insert(n.clone(), var.value());
        }
        for (n, var) in v {
            self.v.insert(n.clone(), var.value());
        }
        self.step += steps;
    }
}

/// One graph-recorded Adam step.
///
/// All arithmetic is emitted as graph nodes, so downstream losses can be
/// differentiated with respect to anything the gradients depend on. `step`
/// is the 1-based index of this update for bias correction.
pub fn adam_step_graph(
    cfg: &AdamConfig,
    step: u64,
    params: &BoundParams,
    grads: &BTreeMap<String, Var>,
    m: &BTreeMap<String, Var>,
    v: &BTreeMap<String, Var>,
) -> Result<(BoundParams, BTreeMap<String, Var>, BTreeMap<String, Var>)> {
    let t = step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut new_params = params.clone();
    let mut new_m = BTreeMap::new();
    let mut new_v = BTreeMap::new();
    for (name, g) in grads {
        if !g.value().is_finite() {
            return Err(TensorError::NanGradient(name.clone()));
        }
        let p = params.get(name);
        let mi = m[name]
            .mul_scalar(cfg.beta1)
            .add(&g.mul_scalar(1.0 - cfg.beta1))?;
        let vi = v[name]
            .mul_scalar(cfg.beta2)
            .add(&g.mul(g)?.mul_scalar(1.0 - cfg.beta2))?;
        let mhat = mi.mul_scalar(1.0 / c1);
        let vhat = vi.mul_scalar(1.0 / c2);
        let denom = vhat.sqrt().add_scalar(cfg.eps);
        let upd = mhat.div(&denom)?.mul_scalar(cfg.lr);
        new_params.set(name, p.sub(&upd)?);
        new_m.insert(name.clone(), mi);
        new_v.insert(name.clone(), vi);
    }
    Ok((new_params, new_m, new_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn;

    fn quad_grads(params: &ParamSet) -> BTreeMap<String, Tensor> {
        // f(w) = sum w_i^2 => grad = 2w
        let w = params.get("w");
        let g = Tensor::new(
            w.shape().to_vec(),
            w.data().iter().map(|x| 2.0 * x).collect(),
        )
        .unwrap();
        [("w".to_string(), g)].into()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::from_vec(vec![1.0, -2.0]));
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        let grads: BTreeMap<String, Tensor> = [("w".to_string(), Tensor::zeros(&[2]))].into();
        st.step_data(&mut p, &grads).unwrap();
        assert_eq!(p.get("w").data(), &[1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn descends_on_square() {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::from_vec(vec![1.0]));
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        let g = quad_grads(&p);
        st.step_data(&mut p, &g).unwrap();
        assert!(p.get("w").data()[0] < 1.0);
    }

    #[test]
    fn quadratic_converges_to_small_gradient() {
        // closed-form minimum at zero; 200 steps drive |grad| below 1e-6
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::from_vec(vec![0.01, -0.007]));
        let mut st = AdamState::new(AdamConfig::with_lr(0.001));
        for _ in 0..200 {
            let g = quad_grads(&p);
            st.step_data(&mut p, &g).unwrap();
        }
        let gnorm: f64 = p
            .get("w")
            .data()
            .iter()
            .map(|x| (2.0 * x) * (2.0 * x))
            .sum::<f64>()
            .sqrt();
        assert!(gnorm < 1e-6, "gradient norm {gnorm}");
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::from_vec(vec![1.0]));
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        let grads: BTreeMap<String, Tensor> =
            [("w".to_string(), Tensor::from_vec(vec![f64::NAN]))].into();
        assert!(matches!(
            st.step_data(&mut p, &grads),
            Err(TensorError::NanGradient(_))
        ));
    }

    #[test]
    fn graph_step_matches_data_step() {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::from_vec(vec![0.4, -1.1]));
        let cfg = AdamConfig::with_lr(0.01);
        // data path
        let mut st = AdamState::new(cfg);
        let mut p_data = p.clone();
        let g0 = quad_grads(&p_data);
        st.step_data(&mut p_data, &g0).unwrap();
        // graph path
        let graph = Graph::new();
        let bound = nn::bind(&graph, &p, true);
        let mut st2 = AdamState::new(cfg);
        let (m, v) = st2.bind_moments(&graph, &["w".to_string()], &p);
        let w = bound.get("w");
        let loss = w.mul(w).unwrap().sum_all();
        let grad = loss.backward(&[w]).unwrap().remove(0);
        let grads: BTreeMap<String, Var> = [("w".to_string(), grad)].into();
        let (newp, _, _) = adam_step_graph(&cfg, 1, &bound, &grads, &m, &v).unwrap();
        let a = p_data.get("w").data().to_vec();
        let b = newp.get("w").value().data().to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15, "{a:?} vs {b:?}");
        }
    }
}
