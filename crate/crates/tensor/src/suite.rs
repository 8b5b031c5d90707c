//! Finite-difference gradient checks over every differentiable op.
//!
//! Each case builds random inputs from the seed, applies one op, and reduces
//! the output to a scalar with a fixed random weighting so that every output
//! coordinate contributes a distinct upstream gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::ops::norm::BatchNormMode;
use crate::tensor::{numel_of, Tensor};

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> Result<Tensor>>);

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let data = (0..numel_of(shape)).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// `sum(y * r)` for a fixed random `r` of `y`'s shape.
fn weighted(y: Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let r = rand_t(&mut rng, y.shape(), -1.0, 1.0);
    Ok(y.mul(&r)?.sum_all())
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = seed;
    let mut out: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($inp:expr),*], $f:expr) => {
            out.push(($name, vec![$($inp),*], Box::new(move |x: &[Tensor]| { let y: Result<Tensor> = $f(x); weighted(y?, s) })));
        };
    }
    case!("add_broadcast", [rand_t(&mut rng, &[3, 4], -1.0, 1.0), rand_t(&mut rng, &[4], -1.0, 1.0)], |x: &[Tensor]| x[0].add(&x[1]));
    case!("sub", [rand_t(&mut rng, &[2, 3], -1.0, 1.0), rand_t(&mut rng, &[2, 1], -1.0, 1.0)], |x: &[Tensor]| x[0].sub(&x[1]));
    case!("mul", [rand_t(&mut rng, &[2, 3], -1.0, 1.0), rand_t(&mut rng, &[2, 3], -1.0, 1.0)], |x: &[Tensor]| x[0].mul(&x[1]));
    case!("div", [rand_t(&mut rng, &[2, 3], -1.0, 1.0), rand_t(&mut rng, &[3], 0.5, 2.0)], |x: &[Tensor]| x[0].div(&x[1]));
    case!("scale_shift_neg", [rand_t(&mut rng, &[5], -1.0, 1.0)], |x: &[Tensor]| Ok(x[0].scale(2.5).add_scalar(0.3).neg()));
    case!("exp", [rand_t(&mut rng, &[6], -1.0, 1.0)], |x: &[Tensor]| Ok(x[0].exp()));
    case!("ln", [rand_t(&mut rng, &[6], 0.5, 2.0)], |x: &[Tensor]| Ok(x[0].ln()));
    case!("sqrt", [rand_t(&mut rng, &[6], 0.5, 2.0)], |x: &[Tensor]| Ok(x[0].sqrt()));
    case!("square", [rand_t(&mut rng, &[6], -1.0, 1.0)], |x: &[Tensor]| Ok(x[0].square()));
    case!("leaky_relu", [rand_t(&mut rng, &[12], -1.0, 1.0)], |x: &[Tensor]| Ok(x[0].leaky_relu(0.2)));
    case!("gelu", [rand_t(&mut rng, &[8], -2.0, 2.0)], |x: &[Tensor]| Ok(x[0].gelu()));
    case!("maximum", [rand_t(&mut rng, &[3, 4], -1.0, 1.0), rand_t(&mut rng, &[3, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].maximum(&x[1]));
    case!("sum_axis", [rand_t(&mut rng, &[2, 3, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].sum_axis(1));
    case!("mean_axis", [rand_t(&mut rng, &[2, 3, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].mean_axis(2));
    case!("mean_all", [rand_t(&mut rng, &[2, 3], -1.0, 1.0)], |x: &[Tensor]| Ok(x[0].mean_all().scale(3.0)));
    case!("max_axis", [rand_t(&mut rng, &[5, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].max_axis(0));
    case!("reshape_permute", [rand_t(&mut rng, &[2, 3, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].reshape(&[6, 4])?.reshape(&[2, 3, 4])?.permute(&[2, 0, 1]));
    case!("transpose_last", [rand_t(&mut rng, &[2, 3, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].transpose_last());
    case!("narrow", [rand_t(&mut rng, &[3, 5], -1.0, 1.0)], |x: &[Tensor]| x[0].narrow(1, 1, 3));
    case!("concat", [rand_t(&mut rng, &[2, 3], -1.0, 1.0), rand_t(&mut rng, &[2, 2], -1.0, 1.0)], |x: &[Tensor]| Tensor::concat(&[x[0].clone(), x[1].clone()], 1));
    case!("stack", [rand_t(&mut rng, &[3], -1.0, 1.0), rand_t(&mut rng, &[3], -1.0, 1.0)], |x: &[Tensor]| Tensor::stack(&[x[0].clone(), x[1].clone(), x[0].clone()]));
    case!("index_select", [rand_t(&mut rng, &[4, 3], -1.0, 1.0)], |x: &[Tensor]| x[0].index_select(&[2, 0, 2, 3]));
    case!("matmul", [rand_t(&mut rng, &[3, 4], -1.0, 1.0), rand_t(&mut rng, &[4, 2], -1.0, 1.0)], |x: &[Tensor]| x[0].matmul(&x[1]));
    case!("bmm", [rand_t(&mut rng, &[2, 3, 4], -1.0, 1.0), rand_t(&mut rng, &[2, 4, 2], -1.0, 1.0)], |x: &[Tensor]| x[0].bmm(&x[1]));
    case!("bmm_bt", [rand_t(&mut rng, &[2, 3, 4], -1.0, 1.0), rand_t(&mut rng, &[2, 5, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].bmm_bt(&x[1]));
    case!(
        "conv2d",
        [rand_t(&mut rng, &[2, 5, 5], -1.0, 1.0), rand_t(&mut rng, &[3, 2, 3, 2], -1.0, 1.0), rand_t(&mut rng, &[3], -1.0, 1.0)],
        |x: &[Tensor]| x[0].conv2d(&x[1], Some(&x[2]), (1, 2), (2, 1))
    );
    case!(
        "conv2d_pointwise_batched",
        [rand_t(&mut rng, &[2, 3, 3, 3], -1.0, 1.0), rand_t(&mut rng, &[2, 3, 1, 1], -1.0, 1.0)],
        |x: &[Tensor]| x[0].conv2d(&x[1], None, (0, 0), (1, 1))
    );
    case!("maxpool2d", [rand_t(&mut rng, &[2, 4, 6], -1.0, 1.0)], |x: &[Tensor]| x[0].maxpool2d(2, 2));
    case!("softmax_rows", [rand_t(&mut rng, &[3, 5], -2.0, 2.0)], |x: &[Tensor]| x[0].softmax_rows());
    case!("softmax_last", [rand_t(&mut rng, &[2, 2, 4], -2.0, 2.0)], |x: &[Tensor]| x[0].softmax_last());
    case!("log_softmax_last", [rand_t(&mut rng, &[3, 4], -2.0, 2.0)], |x: &[Tensor]| x[0].log_softmax_last());
    case!("l2_normalize", [rand_t(&mut rng, &[3, 4], -1.0, 1.0)], |x: &[Tensor]| x[0].l2_normalize(1e-12));
    case!(
        "layer_norm",
        [rand_t(&mut rng, &[3, 5], -1.0, 1.0), rand_t(&mut rng, &[5], 0.5, 1.5), rand_t(&mut rng, &[5], -1.0, 1.0)],
        |x: &[Tensor]| x[0].layer_norm(&x[1], &x[2], 1e-5)
    );
    case!(
        "batch_norm_train",
        [rand_t(&mut rng, &[3, 2, 2, 2], -1.0, 1.0), rand_t(&mut rng, &[2], 0.5, 1.5), rand_t(&mut rng, &[2], -1.0, 1.0)],
        |x: &[Tensor]| x[0].batch_norm(&x[1], &x[2], BatchNormMode::Train, 1e-5).map(|r| r.0)
    );
    case!(
        "batch_norm_eval",
        [rand_t(&mut rng, &[2, 2, 2, 2], -1.0, 1.0), rand_t(&mut rng, &[2], 0.5, 1.5), rand_t(&mut rng, &[2], -1.0, 1.0)],
        |x: &[Tensor]| x[0]
            .batch_norm(&x[1], &x[2], BatchNormMode::Eval { mean: &[0.1, -0.2], var: &[0.8, 1.3] }, 1e-5)
            .map(|r| r.0)
    );
    out.push((
        "cross_entropy",
        vec![rand_t(&mut rng, &[4, 3], -2.0, 2.0)],
        Box::new(|x: &[Tensor]| x[0].cross_entropy(&[0, 2, 1, 2])),
    ));
    out
}

/// Runs every op case for one seed and returns the per-op reports.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let cfg = GradCheckConfig {
        eps: 1e-3,
        max_coords: None,
        seed,
    };
    cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, check_gradients(f, &inputs, &cfg)?)))
        .collect()
}
