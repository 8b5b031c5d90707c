//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of every backward rule it checks. A coordinate whose `+eps` or `-eps`
//! evaluation takes a different discrete branch than the base point (an
//! argmax switch, a leaky-ReLU sign flip) is not differentiable across the
//! stencil; such coordinates are reported as `skipped_kinks` and replaced by
//! another sample.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{backward, with_branch_probe};
use crate::error::Result;
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates sampled per input; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// (input label, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_err > self.max_rel_err) {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Relative error with the denominator floored at 1% of the input's largest
/// gradient, so near-zero components are judged on the input's scale, and
/// at [`ABS_FLOOR`], below which central differences are round-off.
fn rel_errors(label: &str, pairs: &[(usize, f64, f64)]) -> GradCheckReport {
    let scale = pairs.iter().map(|p| p.1.abs().max(p.2.abs())).fold(0.0, f64::max);
    let floor = (1e-2 * scale).max(ABS_FLOOR);
    let mut rep = GradCheckReport::default();
    for &(i, a, n) in pairs {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        rep.checked += 1;
        if rep.worst.is_none() || err > rep.max_rel_err {
            rep.max_rel_err = err;
            rep.worst = Some((label.to_string(), i, a, n));
        }
    }
    rep
}

fn pick_coords(n: usize, cfg: &GradCheckConfig, salt: u64) -> Vec<usize> {
    match cfg.max_coords {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt.wrapping_mul(0x9e37_79b9));
            // draw extra candidates so kinks can be replaced
            sample(&mut rng, n, (4 * k).min(n)).into_vec()
        }
        _ => (0..n).collect(),
    }
}

/// Checks `d f(inputs) / d inputs` for a scalar-valued `f`.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach_leaf()).collect();
    let (loss, base_fp) = with_branch_probe(|| f(&leaves));
    let grads = backward(&loss?)?;

    let mut report = GradCheckReport::default();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let want = cfg.max_coords.unwrap_or(usize::MAX);
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for idx in pick_coords(leaf.numel(), cfg, k as u64) {
            if pairs.len() >= want {
                break;
            }
            let eval = |delta: f64| -> Result<(f64, u64)> {
                let mut data = leaf.to_vec();
                data[idx] += delta;
                let mut perturbed: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
                perturbed[k] = Tensor::from_vec(leaf.shape(), data)?;
                let (v, fp) = with_branch_probe(|| f(&perturbed));
                Ok((v?.item()?, fp))
            };
            let (plus, fp_plus) = eval(cfg.eps)?;
            let (minus, fp_minus) = eval(-cfg.eps)?;
            if fp_plus != base_fp || fp_minus != base_fp {
                skipped += 1;
                continue;
            }
            pairs.push((idx, analytic[idx], (plus - minus) / (2.0 * cfg.eps)));
        }
        let mut rep = rel_errors(&format!("input{k}"), &pairs);
        rep.skipped_kinks = skipped;
        report.merge(rep);
    }
    Ok(report)
}

/// Checks gradients of a scalar model loss with respect to named parameters.
///
/// `f` is evaluated on `store` as-is for the analytic pass, and with one
/// coordinate nudged by `±eps` for each numeric sample; the store is
/// restored afterwards.
pub fn check_param_gradients<F>(
    store: &mut ParamStore,
    names: &[String],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<Tensor>,
{
    let (loss, base_fp) = with_branch_probe(|| f(store));
    let grads = backward(&loss?)?;

    let mut report = GradCheckReport::default();
    for (k, name) in names.iter().enumerate() {
        let value = store.get(name)?;
        let analytic = grads.get_or_zeros(&value);
        let original = value.to_vec();
        let want = cfg.max_coords.unwrap_or(usize::MAX);
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for idx in pick_coords(original.len(), cfg, k as u64 + 1) {
            if pairs.len() >= want {
                break;
            }
            let mut eval = |delta: f64| -> Result<(f64, u64)> {
                let mut data = original.clone();
                data[idx] += delta;
                store.param_mut(name).expect("present").assign(data)?;
                let (v, fp) = with_branch_probe(|| f(store));
                Ok((v?.item()?, fp))
            };
            let plus = eval(cfg.eps);
            let minus = eval(-cfg.eps);
            store.param_mut(name).expect("present").assign(original.clone())?;
            let ((plus, fp_plus), (minus, fp_minus)) = (plus?, minus?);
            if fp_plus != base_fp || fp_minus != base_fp {
                skipped += 1;
                continue;
            }
            pairs.push((idx, analytic[idx], (plus - minus) / (2.0 * cfg.eps)));
        }
        let mut rep = rel_errors(name, &pairs);
        rep.skipped_kinks = skipped;
        report.merge(rep);
    }
    Ok(report)
}
