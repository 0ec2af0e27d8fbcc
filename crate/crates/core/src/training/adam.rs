use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::Result;
use crate::networks::NamedVars;

const EPS: f64 = 1e-8;

/// Adam with bias correction; moments are exposed for checkpointing.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub steps: u64,
    vars: NamedVars,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(vars: NamedVars, beta1: f64, beta2: f64) -> Result<Self> {
        let m = vars.iter().map(|(_, v)| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            beta1,
            beta2,
            steps: 0,
            vars,
            m,
            v,
        })
    }

    pub fn vars(&self) -> &NamedVars {
        &self.vars
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // keep moments free of autograd history so old graphs can be dropped
            let g = g.detach();
            let g = &g;
            let m = ((&self.m[i] * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&v / c2)?.sqrt()? + EPS)?;
            let update = ((&m / c1)? / denom)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m[i] = m.detach();
            self.v[i] = v.detach();
        }
        Ok(())
    }

    /// Moment tensors named `{prefix}.m.{param}` and `{prefix}.v.{param}`.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.push((format!("{prefix}.m.{name}"), self.m[i].clone()));
            out.push((format!("{prefix}.v.{name}"), self.v[i].clone()));
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, lookup: &dyn Fn(&str) -> Result<Tensor>) -> Result<()> {
        for (i, (name, _)) in self.vars.iter().enumerate() {
            self.m[i] = lookup(&format!("{prefix}.m.{name}"))?;
            self.v[i] = lookup(&format!("{prefix}.v.{name}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    #[test]
    fn minimizes_quadratic() {
        let w = Var::from_tensor(&Tensor::new(&[3.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let mut opt = Adam::new(vec![("w".into(), w.clone())], 0.9, 0.999).unwrap();
        for _ in 0..2000 {
            let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), 0.01).unwrap();
        }
        for v in w.as_tensor().to_vec1::<f64>().unwrap() {
            assert!(v.abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr * sign(g)
        let w = Var::zeros(3, DType::F64, &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![("w".into(), w.clone())], 0.5, 0.999).unwrap();
        let target = Tensor::new(&[1.0f64, -4.0, 0.5], &Device::Cpu).unwrap();
        let loss = (w.as_tensor() - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap(), 0.1).unwrap();
        let got = w.as_tensor().to_vec1::<f64>().unwrap();
        for (g, t) in got.iter().zip([0.1, -0.1, 0.1]) {
            assert!((g - t).abs() < 1e-6);
        }
    }
}
