//! Contextual feature aggregation: the linear-fusion baseline, word-level
//! and caption-level context modelling, and the dense aggregation head.

use std::fmt;
use std::str::FromStr;

use cgfr_tensor::{ParamStore, Tensor};
use rand::Rng;

use crate::encoders::{GLOBAL_DIM, LOCAL_SHAPE};
use crate::error::{CgfrError, Result};
use crate::nn::{batch_norm, conv, init_batch_norm, init_conv, init_linear, init_norm, layer_norm, linear, BnUpdates, Mode};
use crate::tfrm::EMBED_DIM;

pub const FUSED_DIM: usize = 768;
pub const LINEAR_FUSION_DIM: usize = GLOBAL_DIM + EMBED_DIM;
pub const WORD_CTX_DIM: usize = 1024;
pub const AGG_DIM: usize = WORD_CTX_DIM + EMBED_DIM;
/// Spatial side of the word-level attention maps.
pub const MAP_SIDE: usize = 8;
const MAP_NUMEL: usize = EMBED_DIM * MAP_SIDE * MAP_SIDE;
/// Tokens the global image vector is cut into for caption-level attention.
pub const GLOBAL_TOKENS: usize = GLOBAL_DIM / EMBED_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CfamVariant {
    LinearOnly,
    WordOnly,
    WordNoNorm,
    WordNoSelfAttn,
    WordPlusCaption,
    Full,
}

impl CfamVariant {
    pub const ALL: [CfamVariant; 6] = [
        CfamVariant::LinearOnly,
        CfamVariant::WordOnly,
        CfamVariant::WordNoNorm,
        CfamVariant::WordNoSelfAttn,
        CfamVariant::WordPlusCaption,
        CfamVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CfamVariant::LinearOnly => "linear_only",
            CfamVariant::WordOnly => "word_only",
            CfamVariant::WordNoNorm => "word_no_norm",
            CfamVariant::WordNoSelfAttn => "word_no_selfattn",
            CfamVariant::WordPlusCaption => "word_plus_caption",
            CfamVariant::Full => "full",
        }
    }

    pub fn uses_word(self) -> bool {
        self != CfamVariant::LinearOnly
    }

    pub fn uses_caption(self) -> bool {
        matches!(self, CfamVariant::WordPlusCaption | CfamVariant::Full)
    }

    /// Width of the embedding the variant produces.
    pub fn output_dim(self) -> usize {
        match self {
            CfamVariant::WordPlusCaption => AGG_DIM,
            _ => FUSED_DIM,
        }
    }
}

impl fmt::Display for CfamVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CfamVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CfamVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = CfamVariant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionBlockConfig {
    pub value_channels: usize,
    pub scale: f64,
    pub heads: usize,
}

impl AttentionBlockConfig {
    pub fn new(value_channels: usize, scale: f64, heads: usize) -> Result<Self> {
        let cfg = AttentionBlockConfig {
            value_channels,
            scale,
            heads,
        };
        if !(scale > 0.0 && scale <= 1.0) || cfg.key_channels() == 0 || heads == 0 {
            return Err(CgfrError::config(format!(
                "attention block needs scale in (0, 1] and at least one key channel and head: {cfg:?}"
            )));
        }
        Ok(cfg)
    }

    /// Query/key channels, `round(scale * value_channels)`.
    pub fn key_channels(&self) -> usize {
        (self.scale * self.value_channels as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cfam {
    pub variant: CfamVariant,
    pub attn: AttentionBlockConfig,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
}

/// Attention output together with its `[N, queries, keys]` (or
/// `[N, heads, queries, keys]`) weights.
#[derive(Debug, Clone)]
pub struct Attended {
    pub out: Tensor,
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct CfamOutput {
    pub embedding: Tensor,
    /// Every attention weight tensor computed on the way.
    pub attention: Vec<Tensor>,
}

fn shape_err(op: &'static str, got: &[usize], want: &[usize]) -> CgfrError {
    CgfrError::Tensor(cgfr_tensor::TensorError::Shape {
        op,
        lhs: got.to_vec(),
        rhs: want.to_vec(),
    })
}

fn batched(op: &'static str, x: &Tensor, tail: &[usize]) -> Result<Tensor> {
    if x.shape().len() == tail.len() && x.shape() == tail {
        let mut s = vec![1];
        s.extend_from_slice(tail);
        return Ok(x.reshape(&s)?);
    }
    if x.rank() == tail.len() + 1 && &x.shape()[1..] == tail {
        return Ok(x.clone());
    }
    Err(shape_err(op, x.shape(), tail))
}

/// `[N, C, H, W] -> [N, HW, C]`
fn tokens(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else { unreachable!("rank checked by callers") };
    Ok(x.reshape(&[n, c, h * w])?.transpose_last()?)
}

/// `softmax(q k^T / sqrt(d_k)) v` for `[.., Tq, dk]`, `[.., Tk, dk]`, `[.., Tk, dv]`.
fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Attended> {
    let dk = *q.shape().last().expect("rank >= 2") as f64;
    let weights = q.bmm_bt(k)?.scale(1.0 / dk.sqrt()).softmax_last()?;
    Ok(Attended {
        out: weights.bmm(v)?,
        weights,
    })
}

impl Cfam {
    pub const PREFIX: &'static str = "cfam";

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let c = self.attn.value_channels;
        let ck = self.attn.key_channels();
        if self.variant == CfamVariant::LinearOnly {
            return init_linear(store, rng, "cfam.lin", LINEAR_FUSION_DIM, FUSED_DIM);
        }
        init_batch_norm(store, "cfam.word.bn", LOCAL_SHAPE[0])?;
        init_conv(store, rng, "cfam.word.conv", [EMBED_DIM, LOCAL_SHAPE[0], 3, 3])?;
        for (block, kinds) in [("sa", ["q", "k", "v"]), ("ca", ["q", "k", "v"])] {
            for kind in kinds {
                let out = if kind == "v" { c } else { ck };
                init_conv(store, rng, &format!("cfam.word.{block}.{kind}"), [out, c, 1, 1])?;
            }
        }
        init_norm(store, "cfam.word.ln1", MAP_NUMEL)?;
        init_norm(store, "cfam.word.ln2", MAP_NUMEL)?;
        match self.variant {
            CfamVariant::WordOnly | CfamVariant::WordNoNorm | CfamVariant::WordNoSelfAttn => {
                init_linear(store, rng, "cfam.word_head", WORD_CTX_DIM, FUSED_DIM)?;
            }
            _ => {
                for m in ["q", "k", "v", "o"] {
                    init_linear(store, rng, &format!("cfam.cap.{m}"), EMBED_DIM, EMBED_DIM)?;
                }
                init_norm(store, "cfam.cap.ln", EMBED_DIM)?;
                if self.variant == CfamVariant::Full {
                    init_linear(store, rng, "cfam.fan", AGG_DIM, FUSED_DIM)?;
                }
            }
        }
        Ok(())
    }

    /// Concatenation of the global image vector and the caption embedding
    /// (576-d) followed by one fully connected layer.
    pub fn linear_fusion(&self, store: &ParamStore, v: &Tensor, c: &Tensor) -> Result<Tensor> {
        let v = batched("linear_fusion", v, &[GLOBAL_DIM])?;
        let c = batched("linear_fusion", c, &[EMBED_DIM])?;
        let joint = Tensor::concat(&[v, c], 1)?;
        linear(store, "cfam.lin", &joint)
    }

    /// 1x1-conv self-attention over spatial positions with a residual.
    pub fn self_attention_2d(&self, store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Attended> {
        let x = self.check_map("self_attention_2d", x)?;
        let q = tokens(&conv(store, &format!("{prefix}.q"), &x, (0, 0), (1, 1))?)?;
        let k = tokens(&conv(store, &format!("{prefix}.k"), &x, (0, 0), (1, 1))?)?;
        let v = tokens(&conv(store, &format!("{prefix}.v"), &x, (0, 0), (1, 1))?)?;
        let a = attend(&q, &k, &v)?;
        let out = a.out.transpose_last()?.reshape(x.shape())?.add(&x)?;
        Ok(Attended { out, weights: a.weights })
    }

    /// Queries from `query_src`, keys and values from `kv_src`; the output
    /// takes the spatial layout of the query map. No residual.
    pub fn cross_attention_2d(&self, store: &ParamStore, prefix: &str, query_src: &Tensor, kv_src: &Tensor) -> Result<Attended> {
        let qs = self.check_map("cross_attention_2d", query_src)?;
        let ks = self.check_map("cross_attention_2d", kv_src)?;
        if qs.shape()[0] != ks.shape()[0] {
            return Err(shape_err("cross_attention_2d", qs.shape(), ks.shape()));
        }
        let q = tokens(&conv(store, &format!("{prefix}.q"), &qs, (0, 0), (1, 1))?)?;
        let k = tokens(&conv(store, &format!("{prefix}.k"), &ks, (0, 0), (1, 1))?)?;
        let v = tokens(&conv(store, &format!("{prefix}.v"), &ks, (0, 0), (1, 1))?)?;
        let a = attend(&q, &k, &v)?;
        let [n, _, h, w] = *qs.shape() else { unreachable!() };
        let out = a.out.transpose_last()?.reshape(&[n, self.attn.value_channels, h, w])?;
        Ok(Attended { out, weights: a.weights })
    }

    fn check_map(&self, op: &'static str, x: &Tensor) -> Result<Tensor> {
        let x = if x.rank() == 3 { x.reshape(&[1, x.shape()[0], x.shape()[1], x.shape()[2]])? } else { x.clone() };
        if x.rank() != 4 || x.shape()[1] != self.attn.value_channels {
            return Err(shape_err(op, x.shape(), &[self.attn.value_channels, 0, 0]));
        }
        Ok(x)
    }

    fn map_norm(&self, store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let y = layer_norm(store, prefix, &x.reshape(&[n, MAP_NUMEL])?, self.ln_eps)?;
        Ok(y.reshape(x.shape())?)
    }

    /// `G = W^T W` per sample, each row laid out as an 8x8 map: `[N, 64, 8, 8]`.
    pub fn word_correlation(words: &Tensor) -> Result<Tensor> {
        let w = batched("word_correlation", words, &[words.shape()[words.rank() - 2], EMBED_DIM])?;
        let n = w.shape()[0];
        let wt = w.transpose_last()?;
        Ok(wt.bmm_bt(&wt)?.reshape(&[n, EMBED_DIM, MAP_SIDE, MAP_SIDE])?)
    }

    /// Word embeddings attend to the local image features: `[N, 1024]`.
    pub fn word_level_cm(
        &self,
        store: &ParamStore,
        words: &Tensor,
        local: &Tensor,
        mode: Mode,
        updates: &mut BnUpdates,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let local = batched("word_level_cm", local, &LOCAL_SHAPE)?;
        let words = batched("word_level_cm", words, &[crate::encoders::SEQ_LEN - 1, EMBED_DIM])?;
        if local.shape()[0] != words.shape()[0] {
            return Err(shape_err("word_level_cm", local.shape(), words.shape()));
        }
        let norm = self.variant != CfamVariant::WordNoNorm;
        let mut attention = Vec::new();

        let mut img = local;
        if norm {
            img = batch_norm(store, "cfam.word.bn", &img, mode, self.bn_eps, updates)?;
        }
        let img = conv(store, "cfam.word.conv", &img, (2, 2), (1, 1))?;
        let mut img = img.maxpool2d(2, 2)?;
        if self.variant != CfamVariant::WordNoSelfAttn {
            let a = self.self_attention_2d(store, "cfam.word.sa", &img)?;
            attention.push(a.weights);
            img = a.out;
        }
        if norm {
            img = self.map_norm(store, "cfam.word.ln1", &img)?;
        }

        let g = Self::word_correlation(&words)?;
        let a = self.cross_attention_2d(store, "cfam.word.ca", &g, &img)?;
        attention.push(a.weights);
        let mut ctx = a.out;
        if norm {
            ctx = self.map_norm(store, "cfam.word.ln2", &ctx)?;
        }
        let pooled = ctx.maxpool2d(2, 2)?;
        let n = pooled.shape()[0];
        Ok((pooled.reshape(&[n, WORD_CTX_DIM])?, attention))
    }

    /// The caption embedding as a single query over the global image vector
    /// cut into 8 tokens of 64, multi-head, then output projection and LN.
    pub fn caption_level_cm(&self, store: &ParamStore, c: &Tensor, v: &Tensor) -> Result<Attended> {
        let c = batched("caption_level_cm", c, &[EMBED_DIM])?;
        let v = batched("caption_level_cm", v, &[GLOBAL_DIM])?;
        let n = c.shape()[0];
        if v.shape()[0] != n {
            return Err(shape_err("caption_level_cm", c.shape(), v.shape()));
        }
        let h = self.attn.heads;
        if EMBED_DIM % h != 0 {
            return Err(CgfrError::config(format!("{h} heads do not divide {EMBED_DIM}")));
        }
        let dh = EMBED_DIM / h;
        let toks = v.reshape(&[n, GLOBAL_TOKENS, EMBED_DIM])?;
        let split = |t: Tensor, len: usize| -> Result<Tensor> { Ok(t.reshape(&[n, len, h, dh])?.permute(&[0, 2, 1, 3])?) };
        let q = split(linear(store, "cfam.cap.q", &c.reshape(&[n, 1, EMBED_DIM])?)?, 1)?;
        let k = split(linear(store, "cfam.cap.k", &toks)?, GLOBAL_TOKENS)?;
        let vv = split(linear(store, "cfam.cap.v", &toks)?, GLOBAL_TOKENS)?;
        let a = attend(&q, &k, &vv)?;
        let ctx = a.out.permute(&[0, 2, 1, 3])?.reshape(&[n, EMBED_DIM])?;
        let out = layer_norm(store, "cfam.cap.ln", &linear(store, "cfam.cap.o", &ctx)?, self.ln_eps)?;
        Ok(Attended { out, weights: a.weights })
    }

    /// `leaky(FC(concat(word_ctx, cap_ctx)))`, 1088 -> 768.
    pub fn feature_aggregation(&self, store: &ParamStore, word_ctx: &Tensor, cap_ctx: &Tensor) -> Result<Tensor> {
        let w = batched("feature_aggregation", word_ctx, &[WORD_CTX_DIM])?;
        let c = batched("feature_aggregation", cap_ctx, &[EMBED_DIM])?;
        let joint = Tensor::concat(&[w, c], 1)?;
        Ok(linear(store, "cfam.fan", &joint)?.leaky_relu(self.leaky_slope))
    }

    /// Routes through the sub-networks enabled by the variant.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        store: &ParamStore,
        local: &Tensor,
        global: &Tensor,
        words: &Tensor,
        caption: &Tensor,
        mode: Mode,
        updates: &mut BnUpdates,
    ) -> Result<CfamOutput> {
        if self.variant == CfamVariant::LinearOnly {
            return Ok(CfamOutput {
                embedding: self.linear_fusion(store, global, caption)?,
                attention: Vec::new(),
            });
        }
        let (word_ctx, mut attention) = self.word_level_cm(store, words, local, mode, updates)?;
        let embedding = match self.variant {
            CfamVariant::WordOnly | CfamVariant::WordNoNorm | CfamVariant::WordNoSelfAttn => {
                linear(store, "cfam.word_head", &word_ctx)?.leaky_relu(self.leaky_slope)
            }
            _ => {
                let cap = self.caption_level_cm(store, caption, global)?;
                attention.push(cap.weights);
                if self.variant == CfamVariant::Full {
                    self.feature_aggregation(store, &word_ctx, &cap.out)?
                } else {
                    Tensor::concat(&[word_ctx, cap.out], 1)?
                }
            }
        };
        Ok(CfamOutput { embedding, attention })
    }
}
