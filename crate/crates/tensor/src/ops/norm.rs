use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Batch statistics from a train-mode [`Tensor::batch_norm`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance, as stored in running statistics.
    pub var: Vec<f64>,
}

impl BatchStats {
    /// `running <- (1 - momentum) * running + momentum * batch`.
    pub fn update_running(&self, mean: &mut [f64], var: &mut [f64], momentum: f64) {
        for (r, b) in mean.iter_mut().zip(&self.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in var.iter_mut().zip(&self.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

fn last_dim(op: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| TensorError::invalid(op, "rank-0 input"))?;
    Ok((x.numel() / d.max(1), d))
}

impl Tensor {
    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax_last(&self) -> Result<Tensor> {
        let (rows, d) = last_dim("softmax", self)?;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * d..(r + 1) * d];
            let mut z = 0.0;
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            dst.iter_mut().for_each(|o| *o /= z);
        }
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; ctx.grad.len()];
                for r in 0..rows {
                    let y = &ctx.out[r * d..(r + 1) * d];
                    let gy = &ctx.grad[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in g[r * d..(r + 1) * d].iter_mut().zip(y).zip(gy) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.expect_rank("softmax_rows", 2)?;
        self.softmax_last()
    }

    pub fn log_softmax_last(&self) -> Result<Tensor> {
        let (rows, d) = last_dim("log_softmax", self)?;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        Ok(Tensor::from_op(
            "log_softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; ctx.grad.len()];
                for r in 0..rows {
                    let y = &ctx.out[r * d..(r + 1) * d];
                    let gy = &ctx.grad[r * d..(r + 1) * d];
                    let s: f64 = gy.iter().sum();
                    for ((o, &yv), &gv) in g[r * d..(r + 1) * d].iter_mut().zip(y).zip(gy) {
                        *o = gv - yv.exp() * s;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Divides every last-axis vector by `max(||v||_2, eps)`.
    pub fn l2_normalize(&self, eps: f64) -> Result<Tensor> {
        let (rows, d) = last_dim("l2_normalize", self)?;
        let x = self.data();
        let norms: Vec<f64> = (0..rows)
            .map(|r| x[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let denom = norms[r].max(eps);
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(&x[r * d..(r + 1) * d]) {
                *o = v / denom;
            }
        }
        Ok(Tensor::from_op(
            "l2_normalize",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; ctx.grad.len()];
                for r in 0..rows {
                    let y = &ctx.out[r * d..(r + 1) * d];
                    let gy = &ctx.grad[r * d..(r + 1) * d];
                    let dst = &mut g[r * d..(r + 1) * d];
                    if norms[r] > eps {
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in dst.iter_mut().zip(y).zip(gy) {
                            *o = (gv - yv * dot) / norms[r];
                        }
                    } else {
                        for (o, &gv) in dst.iter_mut().zip(gy) {
                            *o = gv / eps;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Normalises over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let (rows, d) = last_dim("layer_norm", self)?;
        if d < 2 {
            return Err(TensorError::DegenerateStats {
                op: "layer_norm",
                msg: format!("normalised axis has {d} element(s)"),
            });
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(), gamma.shape()));
        }
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gm[j] * h + bt[j];
            }
        }
        let gc = gamma.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx| {
                let gm = gc.data();
                let g = ctx.grad;
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let h = &xhat[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let gh = gr[j] * gm[j];
                            m1 += gh;
                            m2 += gh * h[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (gr[j] * gm[j] - m1 - h[j] * m2);
                        }
                    }
                    gx
                });
                let ggamma = ctx.needs[1].then(|| {
                    let mut acc = vec![0.0; d];
                    for (i, (gv, hv)) in g.iter().zip(&xhat).enumerate() {
                        acc[i % d] += gv * hv;
                    }
                    acc
                });
                let gbeta = ctx.needs[2].then(|| {
                    let mut acc = vec![0.0; d];
                    for (i, gv) in g.iter().enumerate() {
                        acc[i % d] += gv;
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    /// Per-channel batch normalisation of `[N,C,H,W]` (or `[N,C]`).
    ///
    /// Train mode normalises with the biased batch variance and also returns
    /// the batch statistics for the caller's running averages.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Tensor, Option<BatchStats>)> {
        let (n, c, spatial) = match *self.shape() {
            [n, c, h, w] => (n, c, h * w),
            [n, c] => (n, c, 1),
            _ => {
                return Err(TensorError::invalid(
                    "batch_norm",
                    format!("expected [N,C,H,W] or [N,C], got {:?}", self.shape()),
                ))
            }
        };
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::shape("batch_norm", self.shape(), gamma.shape()));
        }
        let m = n * spatial;
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let at = |s: usize, ch: usize| (s * c + ch) * spatial;

        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                if m < 2 {
                    return Err(TensorError::DegenerateStats {
                        op: "batch_norm",
                        msg: format!("train mode needs N*H*W >= 2, got {m}"),
                    });
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += x[at(b, ch)..at(b, ch) + spatial].iter().sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0.0;
                    for b in 0..n {
                        ss += x[at(b, ch)..at(b, ch) + spatial]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = ss / m as f64;
                }
                let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::shape("batch_norm", &[c], &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = at(b, ch);
                for i in base..base + spatial {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gm[ch] * h + bt[ch];
                }
            }
        }
        let train = matches!(mode, BatchNormMode::Train);
        let gc = gamma.clone();
        let t = Tensor::from_op(
            "batch_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let gm = gc.data();
                let at = |s: usize, ch: usize| (s * c + ch) * spatial;
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = at(b, ch);
                        for i in base..base + spatial {
                            ggamma[ch] += g[i] * xhat[i];
                            gbeta[ch] += g[i];
                        }
                    }
                }
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for ch in 0..c {
                        let k = gm[ch] * inv_std[ch];
                        let (m1, m2) = (gbeta[ch] / m as f64, ggamma[ch] / m as f64);
                        for b in 0..n {
                            let base = at(b, ch);
                            for i in base..base + spatial {
                                gx[i] = if train {
                                    k * (g[i] - m1 - xhat[i] * m2)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    gx
                });
                vec![gx, ctx.needs[1].then_some(ggamma), ctx.needs[2].then_some(gbeta)]
            }),
        );
        Ok((t, stats))
    }

    /// Mean softmax cross-entropy of `[N, C]` logits against class labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        self.expect_rank("cross_entropy", 2)?;
        let (n, c) = (self.shape()[0], self.shape()[1]);
        if labels.len() != n {
            return Err(TensorError::shape("cross_entropy", self.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let logp = self.log_softmax_last()?;
        let mut pick = vec![0.0; n * c];
        for (i, &l) in labels.iter().enumerate() {
            pick[i * c + l] = -1.0 / n as f64;
        }
        logp.mul(&Tensor::from_vec(&[n, c], pick)?)
            .map(|t| t.sum_all())
    }
}
