//! Adam / AdamW with bias correction, and the warmup + cosine schedule.

use std::collections::BTreeMap;

use crate::autograd::Gradients;
use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Adam with decoupled weight decay applied as `theta *= 1 - lr * wd`.
    AdamW,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(beta1) || !in_unit(beta2) || eps <= 0.0 || weight_decay < 0.0 {
            return Err(TensorError::invalid(
                "optimizer",
                format!("beta1={beta1} beta2={beta2} eps={eps} wd={weight_decay}"),
            ));
        }
        Ok(OptimizerState {
            kind,
            beta1,
            beta2,
            eps,
            weight_decay,
            step_count: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn adam(beta1: f64, beta2: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, beta1, beta2, 1e-8, 0.0)
    }

    pub fn adamw(beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        Self::new(OptimizerKind::AdamW, beta1, beta2, 1e-8, weight_decay)
    }

    /// First/second moment buffers of a parameter, if it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.first.get(name)?.as_slice(), self.second.get(name)?.as_slice()))
    }

    /// One update of the named parameters using gradients from a backward pass.
    pub fn step(&mut self, store: &mut ParamStore, names: &[String], grads: &Gradients, lr: f64) -> Result<()> {
        let mut pairs = Vec::with_capacity(names.len());
        for name in names {
            let Some(p) = store.param(name) else {
                return Err(TensorError::invalid("optimizer", format!("unknown parameter `{name}`")));
            };
            if !p.frozen() {
                pairs.push((name.clone(), grads.get_or_zeros(p.value())));
            }
        }
        self.step_raw(store, &pairs, lr)
    }

    /// One update from explicit `(name, gradient)` pairs. Frozen parameters
    /// are skipped and never get moment buffers.
    pub fn step_raw(&mut self, store: &mut ParamStore, grads: &[(String, Vec<f64>)], lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = store
                .param(name)
                .ok_or_else(|| TensorError::invalid("optimizer", format!("unknown parameter `{name}`")))?;
            if g.len() != p.value().numel() {
                return Err(TensorError::shape("optimizer_step", p.value().shape(), &[g.len()]));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.param_mut(name).expect("checked above");
            if p.frozen() {
                continue;
            }
            let mut theta = p.value().to_vec();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..theta.len() {
                let mut gi = g[i];
                match self.kind {
                    OptimizerKind::AdamW => theta[i] -= lr * self.weight_decay * theta[i],
                    OptimizerKind::Adam => gi += self.weight_decay * theta[i],
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.assign(theta)?;
        }
        Ok(())
    }

    /// Moment buffers and step count as named tensors under `prefix`.
    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(
            format!("{prefix}.step"),
            Tensor::from_vec(&[1], vec![self.step_count as f64]).expect("scalar"),
        )];
        for (name, m) in &self.first {
            out.push((format!("{prefix}.m.{name}"), Tensor::from_vec(&[m.len()], m.clone()).expect("1-d")));
        }
        for (name, v) in &self.second {
            out.push((format!("{prefix}.v.{name}"), Tensor::from_vec(&[v.len()], v.clone()).expect("1-d")));
        }
        out
    }

    /// Restores state written by [`OptimizerState::export`].
    pub fn import(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let step = tensors
            .get(&format!("{prefix}.step"))
            .ok_or_else(|| TensorError::Format(format!("missing `{prefix}.step`")))?;
        self.step_count = step.item()? as u64;
        self.first.clear();
        self.second.clear();
        let m_pre = format!("{prefix}.m.");
        let v_pre = format!("{prefix}.v.");
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix(&m_pre) {
                self.first.insert(name.to_string(), t.to_vec());
            } else if let Some(name) = k.strip_prefix(&v_pre) {
                self.second.insert(name.to_string(), t.to_vec());
            }
        }
        Ok(())
    }
}

/// Linear warmup from `lr_init` to `lr_peak`, then cosine decay to `lr_final`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_iters: u64,
    pub total_iters: u64,
}

impl LrSchedule {
    pub fn new(lr_init: f64, lr_peak: f64, lr_final: f64, warmup_iters: u64, total_iters: u64) -> Result<Self> {
        if !(lr_init > 0.0 && lr_peak > 0.0 && lr_final > 0.0) {
            return Err(TensorError::invalid("lr_schedule", "rates must be positive"));
        }
        if warmup_iters == 0 || total_iters <= warmup_iters {
            return Err(TensorError::invalid(
                "lr_schedule",
                format!("need 0 < warmup ({warmup_iters}) < total ({total_iters})"),
            ));
        }
        Ok(LrSchedule {
            lr_init,
            lr_peak,
            lr_final,
            warmup_iters,
            total_iters,
        })
    }

    /// Learning rate at iteration `iter` in `[0, total_iters]`.
    pub fn lr_at(&self, iter: u64) -> Result<f64> {
        if iter > self.total_iters {
            return Err(TensorError::Contract(format!(
                "iteration {iter} beyond schedule end {}",
                self.total_iters
            )));
        }
        if iter <= self.warmup_iters {
            let frac = iter as f64 / self.warmup_iters as f64;
            return Ok(self.lr_init + (self.lr_peak - self.lr_init) * frac);
        }
        let progress = (iter - self.warmup_iters) as f64 / (self.total_iters - self.warmup_iters) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        Ok(self.lr_final + (self.lr_peak - self.lr_final) * cos)
    }

    /// Same shape with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        LrSchedule {
            lr_init: self.lr_init * factor,
            lr_peak: self.lr_peak * factor,
            lr_final: self.lr_final * factor,
            ..*self
        }
    }
}
