use crate::autograd::{probe_active, probe_record};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// (outer, axis_len, inner) factorisation of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(TensorError::invalid(
            op,
            format!("axis {axis} out of range for shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum_all",
            Vec::new(),
            vec![s],
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", self, axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, v) in dst.iter_mut().zip(&x[base..base + inner]) {
                    *d += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "sum_axis",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        g[base..base + inner]
                            .copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", self, axis)?;
        let len = self.shape()[axis] as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / len))
    }

    /// Maximum over `axis`, removing it. Gradient goes to the first maximum.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("max_axis", self, axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if len == 0 {
            return Err(TensorError::invalid("max_axis", "empty axis"));
        }
        let x = self.data();
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    let v = x[base + i];
                    if k == 0 || v > data[o * inner + i] {
                        data[o * inner + i] = v;
                        arg[o * inner + i] = k;
                    }
                }
            }
        }
        if probe_active() {
            probe_record(arg.iter().map(|&a| a as u64));
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "max_axis",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = arg[o * inner + i];
                        g[(o * len + k) * inner + i] = ctx.grad[o * inner + i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}
