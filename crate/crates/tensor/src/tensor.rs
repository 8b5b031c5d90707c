use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// What a backward closure sees when the engine asks it for input gradients.
pub(crate) struct GradCtx<'a> {
    /// Upstream gradient, same length as the node's data.
    pub grad: &'a [f64],
    /// Forward output of the node.
    pub out: &'a [f64],
    /// One flag per input: whether that input wants a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn = Box<dyn Fn(&GradCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: Option<BackwardFn>,
    pub(crate) op: &'static str,
}

/// Immutable dense row-major f64 array, optionally part of a recorded graph.
///
/// Cloning is cheap (shared handle). Every op allocates a fresh output, so a
/// tensor can be handed to another thread but is never mutated in place.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Arc<Node>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        inputs: Vec<Tensor>,
        backward: Option<BackwardFn>,
        op: &'static str,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                inputs,
                backward,
                op,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::shape("from_vec", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, false, Vec::new(), None, "const"))
    }

    /// Leaf tensor that collects gradients during [`crate::backward`].
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::shape("leaf", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, true, Vec::new(), None, "leaf"))
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::build(Vec::new(), vec![value], false, Vec::new(), None, "const")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::build(
            shape.to_vec(),
            vec![value; numel_of(shape)],
            false,
            Vec::new(),
            None,
            "const",
        )
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::build(vec![n, n], data, false, Vec::new(), None, "const")
    }

    /// Result of an op. Drops the graph edge when no input tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        if requires_grad {
            Self::build(shape, data, true, inputs, Some(backward), op)
        } else {
            Self::build(shape, data, false, Vec::new(), None, op)
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dims(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.backward.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.node.op
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    /// Copy of the values with no graph history.
    pub fn detach(&self) -> Tensor {
        Self::build(
            self.node.shape.clone(),
            self.node.data.clone(),
            false,
            Vec::new(),
            None,
            "const",
        )
    }

    /// Copy of the values as a fresh gradient-collecting leaf.
    pub fn detach_leaf(&self) -> Tensor {
        Self::build(
            self.node.shape.clone(),
            self.node.data.clone(),
            true,
            Vec::new(),
            None,
            "leaf",
        )
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(TensorError::invalid(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape()),
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.node.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("op", &self.node.op)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_check_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!((t.rank(), t.numel()), (2, 6));
        assert!(!t.requires_grad());
        assert!(Tensor::leaf(&[1], vec![0.0]).unwrap().requires_grad());
        assert_eq!(Tensor::scalar(4.0).item().unwrap(), 4.0);
        assert!(t.item().is_err());
    }

    #[test]
    fn ops_on_constants_record_no_graph() {
        let a = Tensor::ones(&[3]);
        let b = a.scale(2.0);
        assert!(!b.requires_grad() && b.is_leaf());
        let l = Tensor::leaf(&[3], vec![1.0; 3]).unwrap();
        let c = l.scale(2.0);
        assert!(c.requires_grad() && !c.is_leaf());
        assert!(c.detach().is_leaf() && !c.detach().requires_grad());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(numel_of(&[]), 1);
    }
}
