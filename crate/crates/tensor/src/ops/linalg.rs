use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Row-major view of a matrix inside a flat buffer, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, trans: false }
    }

    /// The transpose of this view (no copy).
    pub fn t(self) -> Self {
        MatRef { trans: !self.trans, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta * c + a * b` for row-major `c` of shape (m, n).
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], beta: f64) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above bound every index the kernel touches:
    // a covers m*k, b covers k*n, c covers m*n with the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn slice_view(data: &[f64], i: usize, rows: usize, cols: usize, trans: bool) -> MatRef<'_> {
    let v = MatRef::new(&data[i * rows * cols..(i + 1) * rows * cols], rows, cols);
    if trans {
        v.t()
    } else {
        v
    }
}

impl Tensor {
    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.data(), m, k),
            MatRef::new(other.data(), k, n),
            &mut out,
            0.0,
        );
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let g = MatRef::new(ctx.grad, m, n);
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(g, MatRef::new(b.data(), k, n).t(), &mut ga, 0.0);
                    ga
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(MatRef::new(a.data(), m, k).t(), g, &mut gb, 0.0);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Batched matrix product over identical leading dims:
    /// `[..., m, k] x [..., k, n] -> [..., m, n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        self.bmm_ex(other, false)
    }

    /// Batched `a * b^T`: `[..., m, k] x [..., n, k] -> [..., m, n]`.
    pub fn bmm_bt(&self, other: &Tensor) -> Result<Tensor> {
        self.bmm_ex(other, true)
    }

    fn bmm_ex(&self, other: &Tensor, b_trans: bool) -> Result<Tensor> {
        let (ra, rb) = (self.rank(), other.rank());
        let bad = || TensorError::shape("bmm", self.shape(), other.shape());
        if ra < 2 || ra != rb || self.shape()[..ra - 2] != other.shape()[..rb - 2] {
            return Err(bad());
        }
        let (m, k) = (self.shape()[ra - 2], self.shape()[ra - 1]);
        let (br, bc) = (other.shape()[rb - 2], other.shape()[rb - 1]);
        let n = if b_trans { br } else { bc };
        let kb = if b_trans { bc } else { br };
        if k != kb {
            return Err(bad());
        }
        let batch: usize = self.shape()[..ra - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                MatRef::new(&self.data()[i * m * k..(i + 1) * m * k], m, k),
                slice_view(other.data(), i, br, bc, b_trans),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let mut shape = self.shape()[..ra - 2].to_vec();
        shape.extend([m, n]);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "bmm",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let mut ga = ctx.needs[0].then(|| vec![0.0; batch * m * k]);
                let mut gb = ctx.needs[1].then(|| vec![0.0; batch * br * bc]);
                for i in 0..batch {
                    let g = MatRef::new(&ctx.grad[i * m * n..(i + 1) * m * n], m, n);
                    if let Some(ga) = ga.as_mut() {
                        // dA = G * B^T (B as seen by the product)
                        gemm(g, slice_view(b.data(), i, br, bc, b_trans).t(), &mut ga[i * m * k..(i + 1) * m * k], 0.0);
                    }
                    if let Some(gb) = gb.as_mut() {
                        let av = MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
                        let dst = &mut gb[i * br * bc..(i + 1) * br * bc];
                        if b_trans {
                            // B is [n, k]: dB = G^T * A
                            gemm(g.t(), av, dst, 0.0);
                        } else {
                            gemm(av.t(), g, dst, 0.0);
                        }
                    }
                }
                vec![ga, gb]
            }),
        ))
    }
}
