//! Small layer helpers over parameters stored by name.

use cgfr_tensor::{BatchNormMode, BatchStats, ParamStore, Tensor};
use rand::Rng;

use crate::error::Result;

/// Registers `{prefix}.w` `[fan_in, fan_out]` and a zero `{prefix}.b`.
pub fn init_linear<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    store.init_weight(rng, &format!("{prefix}.w"), &[fan_in, fan_out], fan_in)?;
    store.init_const(&format!("{prefix}.b"), &[fan_out], 0.0)?;
    Ok(())
}

/// Registers `{prefix}.w` `[f, c, kh, kw]` and a zero `{prefix}.b`.
pub fn init_conv<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, shape: [usize; 4]) -> Result<()> {
    let fan_in = shape[1] * shape[2] * shape[3];
    store.init_weight(rng, &format!("{prefix}.w"), &shape, fan_in)?;
    store.init_const(&format!("{prefix}.b"), &[shape[0]], 0.0)?;
    Ok(())
}

/// Registers unit `{prefix}.gamma` and zero `{prefix}.beta` of length `d`.
pub fn init_norm(store: &mut ParamStore, prefix: &str, d: usize) -> Result<()> {
    store.init_const(&format!("{prefix}.gamma"), &[d], 1.0)?;
    store.init_const(&format!("{prefix}.beta"), &[d], 0.0)?;
    Ok(())
}

/// `x W + b` over the last axis of `x`, any leading shape.
pub fn linear(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.w"))?;
    let b = store.get(&format!("{prefix}.b"))?;
    let d_in = *x.shape().last().unwrap_or(&0);
    let rows = x.numel() / d_in.max(1);
    let y = x.reshape(&[rows, d_in])?.matmul(&w)?.add(&b)?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = w.shape()[1];
    Ok(y.reshape(&shape)?)
}

pub fn conv(store: &ParamStore, prefix: &str, x: &Tensor, pad: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.w"))?;
    let b = store.get(&format!("{prefix}.b"))?;
    Ok(x.conv2d(&w, Some(&b), pad, stride)?)
}

pub fn layer_norm(store: &ParamStore, prefix: &str, x: &Tensor, eps: f64) -> Result<Tensor> {
    let g = store.get(&format!("{prefix}.gamma"))?;
    let b = store.get(&format!("{prefix}.beta"))?;
    Ok(x.layer_norm(&g, &b, eps)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics produced by train-mode batch norms during one forward
/// pass, keyed by layer prefix; applied to running buffers after the step.
pub type BnUpdates = Vec<(String, BatchStats)>;

/// Affine parameters plus `{prefix}.running_mean` / `{prefix}.running_var`
/// buffers initialised to 0 and 1.
pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, c: usize) -> Result<()> {
    init_norm(store, prefix, c)?;
    store.insert_buffer(&format!("{prefix}.running_mean"), &[c], vec![0.0; c])?;
    store.insert_buffer(&format!("{prefix}.running_var"), &[c], vec![1.0; c])?;
    Ok(())
}

pub fn batch_norm(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    mode: Mode,
    eps: f64,
    updates: &mut BnUpdates,
) -> Result<Tensor> {
    let g = store.get(&format!("{prefix}.gamma"))?;
    let b = store.get(&format!("{prefix}.beta"))?;
    match mode {
        Mode::Train => {
            let (y, stats) = x.batch_norm(&g, &b, BatchNormMode::Train, eps)?;
            if let Some(s) = stats {
                updates.push((prefix.to_string(), s));
            }
            Ok(y)
        }
        Mode::Eval => {
            let mean = store.buffer(&format!("{prefix}.running_mean"))?;
            let var = store.buffer(&format!("{prefix}.running_var"))?;
            let (y, _) = x.batch_norm(
                &g,
                &b,
                BatchNormMode::Eval {
                    mean: mean.data(),
                    var: var.data(),
                },
                eps,
            )?;
            Ok(y)
        }
    }
}

/// Folds collected batch statistics into the running buffers.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &BnUpdates, momentum: f64) -> Result<()> {
    for (prefix, stats) in updates {
        let mk = format!("{prefix}.running_mean");
        let vk = format!("{prefix}.running_var");
        let mut mean = store.buffer(&mk)?.to_vec();
        let mut var = store.buffer(&vk)?.to_vec();
        stats.update_running(&mut mean, &mut var, momentum);
        store.set_buffer(&mk, mean)?;
        store.set_buffer(&vk, var)?;
    }
    Ok(())
}
