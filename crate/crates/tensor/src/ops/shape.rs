use crate::error::{Result, TensorError};
use crate::ops::reduce::split_axis;
use crate::tensor::{numel_of, strides_of, Tensor};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::invalid(
                "permute",
                format!("axes {axes:?} are not a permutation for shape {:?}", self.shape()),
            ));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let src = permuted_index(&in_shape, axes);
        let x = self.data();
        let data: Vec<f64> = src.iter().map(|&i| x[i]).collect();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; ctx.grad.len()];
                for (o, &i) in src.iter().enumerate() {
                    g[i] = ctx.grad[o];
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::invalid("transpose_last", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            "narrow",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    g[base..base + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no tensors"))?;
        if axis >= first.rank() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(TensorError::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |ctx| {
                let mut out: Vec<Option<Vec<f64>>> = lens
                    .iter()
                    .zip(ctx.needs)
                    .map(|(&l, &n)| n.then(|| Vec::with_capacity(outer * l * inner)))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (slot, &l) in out.iter_mut().zip(&lens) {
                        if let Some(g) = slot {
                            g.extend_from_slice(&ctx.grad[off..off + l * inner]);
                        }
                        off += l * inner;
                    }
                }
                out
            }),
        ))
    }

    /// Stacks same-shape tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("stack", "no tensors"))?;
        let mut shape = vec![1];
        shape.extend_from_slice(first.shape());
        let expanded = parts
            .iter()
            .map(|p| p.reshape(&[&[1][..], p.shape()].concat()))
            .collect::<Result<Vec<_>>>()?;
        for p in parts {
            if p.shape() != first.shape() {
                return Err(TensorError::shape("stack", first.shape(), p.shape()));
            }
        }
        Tensor::concat(&expanded, 0)
    }

    /// Gathers slices along axis 0; repeated indices accumulate gradient.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(TensorError::invalid("index_select", "rank-0 tensor"));
        }
        let rows = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::invalid(
                "index_select",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let inner: usize = self.shape()[1..].iter().product();
        let x = self.data();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&x[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            "index_select",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; rows * inner];
                for (k, &i) in idx.iter().enumerate() {
                    for (d, s) in g[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(&ctx.grad[k * inner..(k + 1) * inner])
                    {
                        *d += s;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

/// Flat source index for every element of the permuted output.
fn permuted_index(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides_of(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel_of(&out_shape);
    let mut idx = Vec::with_capacity(n);
    let mut coord = vec![0usize; out_shape.len()];
    let mut flat = 0usize;
    for _ in 0..n {
        idx.push(flat);
        for d in (0..out_shape.len()).rev() {
            coord[d] += 1;
            flat += strides[d];
            if coord[d] < out_shape[d] {
                break;
            }
            flat -= strides[d] * coord[d];
            coord[d] = 0;
        }
    }
    idx
}
