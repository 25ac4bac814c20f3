//! Adam with a reduced learning rate for the box head.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ParamGroup, Parameters};
use crate::numerics::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub box_head_lr_mult: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            box_head_lr_mult: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.box_head_lr_mult > 0.0
            && self.box_head_lr_mult <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!(
                "optimizer needs lr > 0, betas in [0,1), eps > 0 and box_head_lr_mult in (0,1], got {self:?}"
            )))
        }
    }

    fn lr_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::BoxHead => self.lr * self.box_head_lr_mult,
            _ => self.lr,
        }
    }
}

/// Moment state keyed by visiting order, which is fixed per model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor2D>,
    v: Vec<Tensor2D>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of every parameter, then gradient reset.
    ///
    /// Fails without touching any parameter if a gradient is non-finite.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let mut bad: Option<String> = None;
        params.visit_params(&mut |name, _, p| {
            if bad.is_none() && !p.grad.is_finite() {
                bad = Some(String::from(name));
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }

        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(self.cfg.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.cfg.beta2, t as f64);
        let cfg = self.cfg;
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        params.visit_params_mut(&mut |_, group, p| {
            if ms.len() == idx {
                ms.push(Tensor2D::zeros(p.value.rows(), p.value.cols()));
                vs.push(Tensor2D::zeros(p.value.rows(), p.value.cols()));
            }
            let lr = cfg.lr_for(group);
            let m = ms[idx].data_mut();
            let v = vs[idx].data_mut();
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr * mh / (libm::sqrt(vh) + cfg.eps);
            }
            p.zero_grad();
            idx += 1;
        });
        Ok(())
    }
}
