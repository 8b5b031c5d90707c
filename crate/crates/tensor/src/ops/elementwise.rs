use crate::autograd::{probe_active, probe_record};
use crate::error::{Result, TensorError};
use crate::tensor::{numel_of, strides_of, Tensor};

/// Right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::shape(op, a, b));
        };
    }
    Ok(out)
}

/// Strides of `shape` when viewed inside `out` (0 on broadcast dims).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// For each output element, the flat index into an operand of `shape`.
fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = numel_of(out);
    let strides = broadcast_strides(shape, out);
    let mut idx = Vec::with_capacity(n);
    let mut coord = vec![0usize; out.len()];
    let mut flat = 0usize;
    for _ in 0..n {
        idx.push(flat);
        for d in (0..out.len()).rev() {
            coord[d] += 1;
            flat += strides[d];
            if coord[d] < out[d] {
                break;
            }
            flat -= strides[d] * coord[d];
            coord[d] = 0;
        }
    }
    idx
}

/// Sum a gradient of the broadcast output shape back onto an operand.
fn reduce_to(grad: &[f64], index: &[usize], numel: usize) -> Vec<f64> {
    let mut out = vec![0.0; numel];
    for (g, &i) in grad.iter().zip(index) {
        out[i] += g;
    }
    out
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let name = match op {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
        Binary::Div => "div",
    };
    let f = |x: f64, y: f64| match op {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
        Binary::Div => x / y,
    };

    if a.shape() == b.shape() {
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let (ac, bc) = (a.clone(), b.clone());
        return Ok(Tensor::from_op(
            name,
            a.shape().to_vec(),
            data,
            vec![a.clone(), b.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let ga = ctx.needs[0].then(|| match op {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    Binary::Mul => g.iter().zip(bc.data()).map(|(g, y)| g * y).collect(),
                    Binary::Div => g.iter().zip(bc.data()).map(|(g, y)| g / y).collect(),
                });
                let gb = ctx.needs[1].then(|| match op {
                    Binary::Add => g.to_vec(),
                    Binary::Sub => g.iter().map(|g| -g).collect(),
                    Binary::Mul => g.iter().zip(ac.data()).map(|(g, x)| g * x).collect(),
                    Binary::Div => g
                        .iter()
                        .zip(ac.data())
                        .zip(bc.data())
                        .map(|((g, x), y)| -g * x / (y * y))
                        .collect(),
                });
                vec![ga, gb]
            }),
        ));
    }

    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let ia = broadcast_index(a.shape(), &out_shape);
    let ib = broadcast_index(b.shape(), &out_shape);
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = ia.iter().zip(&ib).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        name,
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx| {
            let g = ctx.grad;
            let (ad, bd) = (ac.data(), bc.data());
            let ga = ctx.needs[0].then(|| {
                let full: Vec<f64> = match op {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    Binary::Mul => g.iter().zip(&ib).map(|(g, &j)| g * bd[j]).collect(),
                    Binary::Div => g.iter().zip(&ib).map(|(g, &j)| g / bd[j]).collect(),
                };
                reduce_to(&full, &ia, ac.numel())
            });
            let gb = ctx.needs[1].then(|| {
                let full: Vec<f64> = match op {
                    Binary::Add => g.to_vec(),
                    Binary::Sub => g.iter().map(|g| -g).collect(),
                    Binary::Mul => g.iter().zip(&ia).map(|(g, &i)| g * ad[i]).collect(),
                    Binary::Div => g
                        .iter()
                        .zip(ia.iter().zip(&ib))
                        .map(|(g, (&i, &j))| -g * ad[i] / (bd[j] * bd[j]))
                        .collect(),
                };
                reduce_to(&full, &ib, bc.numel())
            });
            vec![ga, gb]
        }),
    ))
}

fn unary(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(
        op,
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(xc.data())
                .zip(ctx.out)
                .map(|((g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(g)]
        }),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Tensor {
    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Div, self, other)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary("scale", self, |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary("add_scalar", self, |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        unary("ln", self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        unary("sqrt", self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Tensor {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    /// `x` where `x >= 0`, `slope * x` elsewhere.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        if probe_active() {
            probe_record(self.data().iter().map(|&v| (v >= 0.0) as u64));
        }
        unary(
            "leaky_relu",
            self,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Tensor {
        unary(
            "gelu",
            self,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            |x, _| {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }

    /// Elementwise maximum of two same-shape tensors; ties route to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::shape("maximum", self.shape(), other.shape()));
        }
        let pick: Vec<bool> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a >= b)
            .collect();
        if probe_active() {
            probe_record(pick.iter().map(|&p| p as u64));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .zip(&pick)
            .map(|((&a, &b), &p)| if p { a } else { b })
            .collect();
        Ok(Tensor::from_op(
            "maximum",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let ga = ctx.needs[0].then(|| {
                    ctx.grad
                        .iter()
                        .zip(&pick)
                        .map(|(&g, &p)| if p { g } else { 0.0 })
                        .collect()
                });
                let gb = ctx.needs[1].then(|| {
                    ctx.grad
                        .iter()
                        .zip(&pick)
                        .map(|(&g, &p)| if p { 0.0 } else { g })
                        .collect()
                });
                vec![ga, gb]
            }),
        ))
    }
}
