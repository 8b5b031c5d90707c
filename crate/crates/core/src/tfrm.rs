//! Textual feature refinement: n-gram convolutional word projection,
//! caption embedding, image projection heads and the alignment
//! (DAMSM) and projection-classification (CMPC) losses.

use cgfr_tensor::{ParamStore, Tensor};
use rand::Rng;

use crate::encoders::{GLOBAL_DIM, LOCAL_SHAPE, SEQ_LEN};
use crate::error::{CgfrError, Result};
use crate::nn::{self, batch_norm, init_batch_norm, init_conv, init_linear, linear, BnUpdates, Mode};

pub const EMBED_DIM: usize = 64;
pub const NGRAMS: [usize; 3] = [1, 2, 3];
/// Guard for every L2 normalisation in this module.
pub const NORM_EPS: f64 = 1e-12;
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamsmConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl Default for DamsmConfig {
    fn default() -> Self {
        DamsmConfig {
            gamma1: 5.0,
            gamma2: 5.0,
            gamma3: 10.0,
        }
    }
}

impl DamsmConfig {
    pub fn new(gamma1: f64, gamma2: f64, gamma3: f64) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma2 > 0.0 && gamma3 > 0.0) {
            return Err(CgfrError::config(format!("DAMSM gammas must be positive: {gamma1}, {gamma2}, {gamma3}")));
        }
        Ok(DamsmConfig { gamma1, gamma2, gamma3 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tfrm {
    pub text_dim: usize,
    pub num_classes: usize,
    pub leaky_slope: f64,
    pub cls_caption: bool,
    pub bn_eps: f64,
}

#[derive(Debug, Clone)]
pub struct DamsmOutput {
    pub loss: Tensor,
    /// `[N, N]` word-level similarity, image rows by caption columns.
    pub word_sim: Tensor,
    /// `[N, N]` caption-level cosine similarity.
    pub caption_sim: Tensor,
}

#[derive(Debug, Clone)]
pub struct CmpcOutput {
    pub ipt: Tensor,
    pub tpi: Tensor,
    pub total: Tensor,
}

impl Tfrm {
    pub const PREFIX: &'static str = "tfrm";

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for k in NGRAMS {
            init_conv(store, rng, &format!("tfrm.ngram{k}"), [EMBED_DIM, 1, k, self.text_dim])?;
        }
        init_conv(store, rng, "tfrm.img_proj", [EMBED_DIM, LOCAL_SHAPE[0], 1, 1])?;
        init_linear(store, rng, "tfrm.glob_proj", GLOBAL_DIM, EMBED_DIM)?;
        store.init_weight(rng, "tfrm.cmpc.w", &[self.num_classes, EMBED_DIM], EMBED_DIM)?;
        if self.cls_caption {
            init_linear(store, rng, "tfrm.cls_proj", self.text_dim, EMBED_DIM)?;
            init_batch_norm(store, "tfrm.cls_bn", EMBED_DIM)?;
        }
        Ok(())
    }

    /// `[N, L, D]` encoder output to unit-norm word embeddings `[N, L-1, 64]`.
    ///
    /// Row 0 is dropped; uni/bi/tri-gram convolutions span the full feature
    /// width and are padded to keep `L-1` positions (the bi-gram at position
    /// `i` covers words `i-1, i`); the three maps are combined by an
    /// elementwise max.
    pub fn conv_projection(&self, store: &ParamStore, tokens_out: &Tensor) -> Result<Tensor> {
        let [n, l, d] = *tokens_out.shape() else {
            return Err(CgfrError::input(format!("tokens_out must be [N, L, D], got {:?}", tokens_out.shape())));
        };
        if d != self.text_dim || l != SEQ_LEN {
            return Err(CgfrError::Tensor(cgfr_tensor::TensorError::Shape {
                op: "conv_projection",
                lhs: tokens_out.shape().to_vec(),
                rhs: vec![n, SEQ_LEN, self.text_dim],
            }));
        }
        let words = tokens_out.narrow(1, 1, l - 1)?.reshape(&[n, 1, l - 1, d])?;
        let mut best: Option<Tensor> = None;
        for k in NGRAMS {
            let pad = k / 2;
            let y = nn::conv(store, &format!("tfrm.ngram{k}"), &words, (pad, 0), (1, 1))?;
            let y = y.narrow(2, 0, l - 1)?;
            best = Some(match best {
                None => y,
                Some(b) => b.maximum(&y)?,
            });
        }
        let y = best.expect("three branches");
        // [N, 64, L-1, 1] -> [N, L-1, 64]
        let w = y.reshape(&[n, EMBED_DIM, l - 1])?.transpose_last()?;
        Ok(w.l2_normalize(NORM_EPS)?)
    }

    /// Max over word rows then L2 normalisation: `[N, T, 64] -> [N, 64]`.
    pub fn caption_embedding(&self, words: &Tensor) -> Result<Tensor> {
        Ok(words.max_axis(1)?.l2_normalize(NORM_EPS)?)
    }

    /// Alternative caption embedding from the CLS row: linear, batch norm, L2.
    pub fn cls_caption_embedding(
        &self,
        store: &ParamStore,
        cls_out: &Tensor,
        mode: Mode,
        updates: &mut BnUpdates,
    ) -> Result<Tensor> {
        let h = linear(store, "tfrm.cls_proj", cls_out)?;
        let h = batch_norm(store, "tfrm.cls_bn", &h, mode, self.bn_eps, updates)?;
        Ok(h.l2_normalize(NORM_EPS)?)
    }

    /// 1x1 convolution to 64 channels and leaky ReLU: `[N,256,14,14] -> [N,64,14,14]`.
    pub fn image_projection(&self, store: &ParamStore, local: &Tensor) -> Result<Tensor> {
        if local.rank() != 4 || local.shape()[1..] != LOCAL_SHAPE {
            return Err(CgfrError::Tensor(cgfr_tensor::TensorError::Shape {
                op: "image_projection",
                lhs: local.shape().to_vec(),
                rhs: LOCAL_SHAPE.to_vec(),
            }));
        }
        Ok(nn::conv(store, "tfrm.img_proj", local, (0, 0), (1, 1))?.leaky_relu(self.leaky_slope))
    }

    /// Learned linear map of the global image vector to 64 dims.
    pub fn global_projection(&self, store: &ParamStore, global: &Tensor) -> Result<Tensor> {
        linear(store, "tfrm.glob_proj", global)
    }
}

/// Region matrix `[N, HW, 64]` from a projected map `[N, 64, H, W]`.
pub fn regions(projected: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = *projected.shape() else {
        return Err(CgfrError::input(format!("projected map must be rank 4, got {:?}", projected.shape())));
    };
    Ok(projected.reshape(&[n, c, h * w])?.transpose_last()?)
}

/// Rows of the word matrix that hold real words (not SEP or PAD), from the
/// token attention mask. Row `r` is token position `r + 1`.
pub fn word_mask(attention_mask: &[u8]) -> Vec<bool> {
    let used = attention_mask.iter().filter(|&&m| m == 1).count();
    (1..SEQ_LEN).map(|p| p + 1 < used).collect()
}

fn mask_bias(mask: &[Vec<bool>], rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .flat_map(|&r| mask[r].iter().map(|&m| if m { 0.0 } else { MASK_BIAS }))
        .collect()
}

/// `-mean_i log softmax(gamma * S)[i, i]` over rows, plus the same over columns.
fn batch_posterior_loss(sim: &Tensor, gamma: f64) -> Result<Tensor> {
    let n = sim.shape()[0];
    let mut pick = vec![0.0; n * n];
    for i in 0..n {
        pick[i * n + i] = -1.0 / n as f64;
    }
    let pick = Tensor::from_vec(&[n, n], pick)?;
    let rows = sim.scale(gamma).log_softmax_last()?.mul(&pick)?.sum_all();
    let cols = sim.transpose_last()?.scale(gamma).log_softmax_last()?.mul(&pick)?.sum_all();
    Ok(rows.add(&cols)?)
}

/// Log-sum-exp over the last axis with a detached max shift.
fn logsumexp_last(x: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().expect("rank >= 1");
    let m: Vec<f64> = x.data().chunks(d).map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut keep = x.shape().to_vec();
    *keep.last_mut().expect("rank >= 1") = 1;
    let out = &x.shape()[..x.rank() - 1];
    let s = x.sub(&Tensor::from_vec(&keep, m.clone())?)?.exp().sum_axis(x.rank() - 1)?.ln();
    Ok(s.add(&Tensor::from_vec(out, m)?)?)
}

/// Word-level similarity for every (image, caption) pair: `[N, N]`.
///
/// For each pair, region relevance per word is `softmax` over words of the
/// word-region dot products, sharpened by `gamma1` into attention over
/// regions; each word is compared by cosine with its attended region
/// context and the per-word scores are pooled by `(1/gamma2) ln sum exp(gamma2 .)`.
pub fn word_similarity(region: &Tensor, words: &Tensor, mask: &[Vec<bool>], cfg: &DamsmConfig) -> Result<Tensor> {
    let n = region.shape()[0];
    let t = words.shape()[1];
    if words.shape()[0] != n || mask.len() != n || mask.iter().any(|m| m.len() != t) {
        return Err(CgfrError::input("damsm: batch sizes of regions, words and masks disagree"));
    }
    let a_idx: Vec<usize> = (0..n * n).map(|p| p / n).collect();
    let b_idx: Vec<usize> = (0..n * n).map(|p| p % n).collect();
    let p = n * n;
    let reg = region.index_select(&a_idx)?;
    let wrd = words.index_select(&b_idx)?;
    let bias = Tensor::from_vec(&[p, 1, t], mask_bias(mask, &b_idx))?;

    let s = wrd.bmm_bt(&reg)?; // [P, T, R]
    let s_bar = s.transpose_last()?.add(&bias)?.softmax_last()?.transpose_last()?;
    let alpha = s_bar.scale(cfg.gamma1).softmax_last()?;
    let ctx = alpha.bmm(&reg)?; // [P, T, 64]
    let rel = ctx
        .l2_normalize(NORM_EPS)?
        .mul(&wrd.l2_normalize(NORM_EPS)?)?
        .sum_axis(2)?; // [P, T]
    let pooled = logsumexp_last(&rel.scale(cfg.gamma2).add(&bias.reshape(&[p, t])?)?)?.scale(1.0 / cfg.gamma2);
    Ok(pooled.reshape(&[n, n])?)
}

/// Cosine similarity of every (image, caption) pair: `[N, N]`.
pub fn caption_similarity(vglob: &Tensor, caption: &Tensor) -> Result<Tensor> {
    let v = vglob.l2_normalize(NORM_EPS)?;
    let c = caption.l2_normalize(NORM_EPS)?;
    Ok(v.matmul(&c.transpose_last()?)?)
}

/// Sum of the four batch-posterior terms (word/caption granularity, both
/// retrieval directions), each a batch mean of `-log P(correct pair)`.
pub fn damsm_loss(
    region: &Tensor,
    words: &Tensor,
    mask: &[Vec<bool>],
    caption: &Tensor,
    vglob: &Tensor,
    cfg: &DamsmConfig,
) -> Result<DamsmOutput> {
    if region.shape()[0] == 0 {
        return Err(CgfrError::input("damsm: empty batch"));
    }
    let word_sim = word_similarity(region, words, mask, cfg)?;
    let caption_sim = caption_similarity(vglob, caption)?;
    let loss = batch_posterior_loss(&word_sim, cfg.gamma3)?.add(&batch_posterior_loss(&caption_sim, cfg.gamma3)?)?;
    Ok(DamsmOutput {
        loss,
        word_sim,
        caption_sim,
    })
}

/// `(a . b_bar) b_bar` row-wise, with `b_bar = b / |b|`.
fn project_onto(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.shape()[0];
    let b_bar = b.l2_normalize(NORM_EPS)?;
    let coef = a.mul(&b_bar)?.sum_axis(1)?.reshape(&[n, 1])?;
    Ok(coef.mul(&b_bar)?)
}

/// Cross-modal projection classification with unit-norm class weights.
pub fn cmpc_loss(v: &Tensor, c: &Tensor, labels: &[usize], w_cls: &Tensor) -> Result<CmpcOutput> {
    let n = v.shape()[0];
    if n == 0 || c.shape() != v.shape() || labels.len() != n {
        return Err(CgfrError::input(format!(
            "cmpc: v {:?}, c {:?}, {} labels",
            v.shape(),
            c.shape(),
            labels.len()
        )));
    }
    let classes = w_cls.shape()[0];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CgfrError::input(format!("cmpc: label {bad} out of range for {classes} classes")));
    }
    let w_t = w_cls.l2_normalize(NORM_EPS)?.transpose_last()?;
    let v_hat = project_onto(v, c)?;
    let c_hat = project_onto(c, v)?;
    let ipt = v_hat.matmul(&w_t)?.cross_entropy(labels)?;
    let tpi = c_hat.matmul(&w_t)?.cross_entropy(labels)?;
    let total = ipt.add(&tpi)?;
    Ok(CmpcOutput { ipt, tpi, total })
}

pub fn tfrm_objective(damsm: &Tensor, cmpc: &Tensor, lambda1: f64, lambda2: f64) -> Result<Tensor> {
    Ok(damsm.scale(lambda1).add(&cmpc.scale(lambda2))?)
}
