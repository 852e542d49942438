use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::Result;

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    velocity: Option<ParamSet>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: None,
        }
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        for (name, g) in grads.iter() {
            let v = velocity.get_mut(name)?;
            v.same_shape(g, "sgd_step")?;
            let p = params.get_mut(name)?;
            p.same_shape(g, "sgd_step")?;
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// One stateless step from zero velocity. Equivalent to the first step of [`Sgd`].
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64, momentum: f64) -> Result<ParamSet> {
    let mut next = params.clone();
    Sgd::new(momentum).step(&mut next, grads, lr)?;
    Ok(next)
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: i32,
    moments: Option<(ParamSet, ParamSet)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            steps: 0,
            moments: None,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        let (m, v) = self
            .moments
            .get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            p.same_shape(g, "adam_step")?;
            let (mt, vt) = (m.get_mut(name)?, v.get_mut(name)?);
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(mt.data_mut())
                .zip(vt.data_mut())
                .zip(g.data())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Optimizer choice as stored in configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimizer built from an [`OptimizerConfig`].
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        match *cfg {
            OptimizerConfig::Sgd { momentum } => Optimizer::Sgd(Sgd::new(momentum)),
            OptimizerConfig::Adam { beta1, beta2, eps } => Optimizer::Adam(Adam::new(beta1, beta2, eps)),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads, lr),
            Optimizer::Adam(o) => o.step(params, grads, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Graph, Tensor};

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new(0);
        p.insert("p", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_lr_is_identity() {
        let p = scalar_set(1.7);
        let g = scalar_set(-4.0);
        assert_eq!(sgd_step(&p, &g, 0.0, 0.9).unwrap(), p);
    }

    #[test]
    fn plain_step() {
        let p = scalar_set(1.0);
        let g = scalar_set(2.0);
        let next = sgd_step(&p, &g, 0.5, 0.0).unwrap();
        assert_eq!(next.get("p").unwrap().data(), &[0.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(p) = (p0 - 3)^2 + 2 (p1 + 1)^2, minimum at (3, -1)
        let mut params = ParamSet::new(0);
        params.insert("p", Tensor::new(vec![2], vec![-5.0, 4.0]).unwrap()).unwrap();
        let target = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let weights = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut opt = Sgd::new(0.9);
        for _ in 0..500 {
            let mut g = Graph::new(&params);
            let p = g.param("p").unwrap();
            let t = g.input(target.map(|v| -v));
            let d = g.add(p, t).unwrap();
            let sq = g.mul(d, d).unwrap();
            let w = g.input(weights.clone());
            let wsq = g.mul(sq, w).unwrap();
            let loss = g.sum(wsq);
            let (_, grads) = g.backward(loss).unwrap();
            opt.step(&mut params, &grads, 0.05).unwrap();
        }
        let p = params.get("p").unwrap().data();
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr·sign(g)
        let mut p = scalar_set(1.0);
        let g = scalar_set(-3.0);
        Adam::new(0.9, 0.999, 0.0).step(&mut p, &g, 0.1).unwrap();
        assert!((p.get("p").unwrap().data()[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut params = ParamSet::new(0);
        params.insert("p", Tensor::new(vec![2], vec![-5.0, 4.0]).unwrap()).unwrap();
        let mut opt = Optimizer::new(&OptimizerConfig::default());
        for i in 0..4000 {
            let mut g = Graph::new(&params);
            let p = g.param("p").unwrap();
            let t = g.input(Tensor::new(vec![2], vec![-3.0, 1.0]).unwrap());
            let d = g.add(p, t).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            let (_, grads) = g.backward(loss).unwrap();
            let lr = if i < 2000 { 0.05 } else { 0.001 };
            opt.step(&mut params, &grads, lr).unwrap();
        }
        let p = params.get("p").unwrap().data();
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6, "{p:?}");
    }
}
