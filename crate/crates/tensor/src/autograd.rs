//! Reverse-mode differentiation over the graph recorded by tensor ops.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use crate::error::{Result, TensorError};
use crate::tensor::{GradCtx, Tensor};

/// Gradients of a scalar loss with respect to every reachable leaf.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_id: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.by_id.get(&t.id()).map(|g| g.as_slice())
    }

    /// Gradient of `t`, or zeros when `t` was unreachable or untracked.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Back-propagates from a scalar `loss`.
///
/// Gradients of tensors used several times are summed. Only leaves keep
/// their gradient in the result; interior gradients are freed on the way.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(TensorError::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let mut out = Gradients::default();
    if !loss.requires_grad() {
        return Ok(out);
    }

    // iterative post-order DFS
    let mut order: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        for inp in &t.node.inputs {
            if inp.requires_grad() && !seen.contains(&inp.id()) {
                stack.push((inp.clone(), false));
            }
        }
    }

    let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
    grads.insert(loss.id(), vec![1.0]);
    for t in order.iter().rev() {
        let Some(backward) = t.node.backward.as_ref() else {
            continue;
        };
        let Some(g) = grads.remove(&t.id()) else {
            continue;
        };
        let needs: Vec<bool> = t.node.inputs.iter().map(|i| i.requires_grad()).collect();
        let ctx = GradCtx {
            grad: &g,
            out: t.data(),
            needs: &needs,
        };
        let input_grads = backward(&ctx);
        debug_assert_eq!(input_grads.len(), t.node.inputs.len(), "op {}", t.op_name());
        for (inp, ig) in t.node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad() {
                continue;
            }
            debug_assert_eq!(ig.len(), inp.numel(), "op {}", t.op_name());
            match grads.get_mut(&inp.id()) {
                Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(inp.id(), ig);
                }
            }
        }
    }

    for t in &order {
        if t.is_leaf() {
            if let Some(g) = grads.remove(&t.id()) {
                out.by_id.insert(t.id(), g);
            }
        }
    }
    Ok(out)
}

thread_local! {
    static BRANCH_PROBE: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` while fingerprinting every discrete choice made by non-smooth
/// ops (argmax routing, activation sign). Two forward passes with equal
/// fingerprints took the same branch everywhere.
pub fn with_branch_probe<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = BRANCH_PROBE.with(|p| p.replace(Some(0xcbf2_9ce4_8422_2325)));
    let r = f();
    let fp = BRANCH_PROBE.with(|p| p.replace(prev)).unwrap_or(0);
    (r, fp)
}

pub(crate) fn probe_active() -> bool {
    BRANCH_PROBE.with(|p| p.get().is_some())
}

pub(crate) fn probe_record(values: impl IntoIterator<Item = u64>) {
    BRANCH_PROBE.with(|p| {
        if let Some(mut h) = p.get() {
            for v in values {
                h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15);
                h = h.wrapping_mul(0x0100_0000_01b3);
                h ^= h >> 29;
            }
            p.set(Some(h));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_fingerprint_tracks_branch_choices() {
        let x = Tensor::from_vec(&[3], vec![1.0, -1.0, 2.0]).unwrap();
        let y = Tensor::from_vec(&[3], vec![1.0, -0.5, 2.0]).unwrap();
        let z = Tensor::from_vec(&[3], vec![1.0, 0.5, 2.0]).unwrap();
        let (_, fx) = with_branch_probe(|| x.leaky_relu(0.2));
        let (_, fy) = with_branch_probe(|| y.leaky_relu(0.2));
        let (_, fz) = with_branch_probe(|| z.leaky_relu(0.2));
        assert_eq!(fx, fy);
        assert_ne!(fx, fz);
        assert!(!probe_active());
    }

    #[test]
    fn only_leaves_keep_gradients() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let h = x.square();
        let g = backward(&h.sum_all()).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.get(&h).is_none());
        assert_eq!(g.get_or_zeros(&Tensor::zeros(&[2])), vec![0.0, 0.0]);
    }
}
