use crate::autograd::{probe_active, probe_record};
use crate::error::{Result, TensorError};
use crate::ops::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.ph == 0 && self.pw == 0 && self.sh == 1 && self.sw == 1
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..(c * g.h + ii as usize + 1) * g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        *v = if jj < 0 || jj >= g.w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && jj < g.w as isize {
                            x[base + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Splits `[N,C,H,W]` or `[C,H,W]` into (batch, C, H, W, had_batch_axis).
fn batch_view(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize, usize, bool)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w, true)),
        [c, h, w] => Ok((1, c, h, w, false)),
        _ => Err(TensorError::invalid(
            op,
            format!("expected [N,C,H,W] or [C,H,W], got {:?}", x.shape()),
        )),
    }
}

impl Tensor {
    /// 2-d convolution with zero padding.
    ///
    /// `self` is `[N,C,H,W]` or `[C,H,W]`, `weight` is `[F,C,kh,kw]`,
    /// `bias` is `[F]`. Output spatial size is `(H + 2p - k) / s + 1`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        pad: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Tensor> {
        let (n, c, h, w, batched) = batch_view("conv2d", self)?;
        let [f, wc, kh, kw] = *weight.shape() else {
            return Err(TensorError::invalid(
                "conv2d",
                format!("weight must be [F,C,kh,kw], got {:?}", weight.shape()),
            ));
        };
        if wc != c {
            return Err(TensorError::shape("conv2d", self.shape(), weight.shape()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::invalid("conv2d", "zero stride"));
        }
        if kh > h + 2 * pad.0 || kw > w + 2 * pad.1 {
            return Err(TensorError::shape("conv2d", self.shape(), weight.shape()));
        }
        if let Some(b) = bias {
            if b.shape() != [f] {
                return Err(TensorError::shape("conv2d", weight.shape(), b.shape()));
            }
        }
        let g = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            ph: pad.0,
            pw: pad.1,
            sh: stride.0,
            sw: stride.1,
            ho: (h + 2 * pad.0 - kh) / stride.0 + 1,
            wo: (w + 2 * pad.1 - kw) / stride.1 + 1,
        };
        let (patch, p, in_sz) = (g.patch(), g.positions(), c * h * w);
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![0.0; n * f * p];
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; patch * p] };
        for s in 0..n {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            let col_view = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut cols);
                &cols
            };
            let dst = &mut out[s * f * p..(s + 1) * f * p];
            if let Some(b) = bias {
                for (fi, &bv) in b.data().iter().enumerate() {
                    dst[fi * p..(fi + 1) * p].iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm(
                MatRef::new(wt, f, patch),
                MatRef::new(col_view, patch, p),
                dst,
                if bias.is_some() { 1.0 } else { 0.0 },
            );
        }

        let shape = if batched { vec![n, f, g.ho, g.wo] } else { vec![f, g.ho, g.wo] };
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let (xc, wcl) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            "conv2d",
            shape,
            out,
            inputs,
            Box::new(move |ctx| {
                let x = xc.data();
                let wt = wcl.data();
                let mut gx = ctx.needs[0].then(|| vec![0.0; n * in_sz]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; f * patch]);
                let mut gb = (has_bias && ctx.needs[2]).then(|| vec![0.0; f]);
                let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { patch * p }];
                let mut gcols = vec![0.0; if gx.is_some() && !g.is_pointwise() { patch * p } else { 0 }];
                for s in 0..n {
                    let gs = &ctx.grad[s * f * p..(s + 1) * f * p];
                    let gview = MatRef::new(gs, f, p);
                    if let Some(gw) = gw.as_mut() {
                        let xs = &x[s * in_sz..(s + 1) * in_sz];
                        let col_view = if g.is_pointwise() {
                            xs
                        } else {
                            im2col(xs, &g, &mut cols);
                            &cols
                        };
                        gemm(gview, MatRef::new(col_view, patch, p).t(), gw, 1.0);
                    }
                    if let Some(gb) = gb.as_mut() {
                        for (fi, acc) in gb.iter_mut().enumerate() {
                            *acc += gs[fi * p..(fi + 1) * p].iter().sum::<f64>();
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[s * in_sz..(s + 1) * in_sz];
                        if g.is_pointwise() {
                            gemm(MatRef::new(wt, f, patch).t(), gview, dst, 0.0);
                        } else {
                            gemm(MatRef::new(wt, f, patch).t(), gview, &mut gcols, 0.0);
                            col2im(&gcols, &g, dst);
                        }
                    }
                }
                let mut res = vec![gx, gw];
                if has_bias {
                    res.push(gb);
                }
                res
            }),
        ))
    }

    /// Max pooling with a `k x k` window; gradient goes to the first maximum
    /// of each window (row-major order).
    pub fn maxpool2d(&self, k: usize, stride: usize) -> Result<Tensor> {
        let (n, c, h, w, batched) = batch_view("maxpool2d", self)?;
        if k == 0 || stride == 0 {
            return Err(TensorError::invalid("maxpool2d", "zero window or stride"));
        }
        if k > h || k > w {
            return Err(TensorError::shape("maxpool2d", self.shape(), &[k, k]));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let x = self.data();
        let planes = n * c;
        let mut out = vec![0.0; planes * ho * wo];
        let mut arg = vec![0usize; planes * ho * wo];
        for pl in 0..planes {
            let base = pl * h * w;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = base + (oi * stride + di) * w + oj * stride + dj;
                            if best_i == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = (pl * ho + oi) * wo + oj;
                    out[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        if probe_active() {
            probe_record(arg.iter().map(|&a| a as u64));
        }
        let shape = if batched { vec![n, c, ho, wo] } else { vec![c, ho, wo] };
        let total = self.numel();
        Ok(Tensor::from_op(
            "maxpool2d",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; total];
                for (o, &i) in arg.iter().enumerate() {
                    g[i] += ctx.grad[o];
                }
                vec![Some(g)]
            }),
        ))
    }
}
