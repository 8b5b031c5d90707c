//! The assembled network: encoders, feature refinement, fusion and the
//! identity head over one parameter store.

use cgfr_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cfam::{AttentionBlockConfig, Cfam, CfamOutput};
use crate::config::Config;
use crate::encoders::{ImageEncoder, TextEncoder, TokenSequence, Vocabulary, GLOBAL_DIM, LOCAL_SHAPE};
use crate::error::{CgfrError, Result};
use crate::nn::{BnUpdates, Mode};
use crate::tfrm::{self, CmpcOutput, DamsmConfig, DamsmOutput, Tfrm};

pub const LOCAL_LEN: usize = LOCAL_SHAPE[0] * LOCAL_SHAPE[1] * LOCAL_SHAPE[2];
pub const ID_HEAD: &str = "head.id.w";
/// Seed stream of the image-encoder initialisation.
pub const IMAGE_STREAM: u64 = 1;
const NORM_EPS: f64 = 1e-12;

/// Frozen image-encoder outputs for a set of images, stored in single
/// precision to halve their footprint.
#[derive(Debug, Clone, Default)]
pub struct FeatureCache {
    pub local: Vec<Vec<f32>>,
    pub global: Vec<Vec<f32>>,
}

impl FeatureCache {
    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// `([B, 256, 14, 14], [B, 512])` for the given rows.
    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut local = Vec::with_capacity(rows.len() * LOCAL_LEN);
        let mut global = Vec::with_capacity(rows.len() * GLOBAL_DIM);
        for &r in rows {
            let (l, g) = self
                .local
                .get(r)
                .zip(self.global.get(r))
                .ok_or_else(|| CgfrError::input(format!("feature row {r} of {}", self.len())))?;
            local.extend(l.iter().map(|&v| v as f64));
            global.extend(g.iter().map(|&v| v as f64));
        }
        let mut ls = vec![rows.len()];
        ls.extend_from_slice(&LOCAL_SHAPE);
        Ok((Tensor::from_vec(&ls, local)?, Tensor::from_vec(&[rows.len(), GLOBAL_DIM], global)?))
    }
}

/// Text-side outputs of the refinement module for one batch.
#[derive(Debug, Clone)]
pub struct TextSide {
    /// `[B, L-1, 64]` unit-norm word embeddings.
    pub words: Tensor,
    /// `[B, 64]` unit-norm caption embedding.
    pub caption: Tensor,
    /// Real-word rows of `words` per sample.
    pub masks: Vec<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct TfrmLosses {
    pub damsm: DamsmOutput,
    pub cmpc: CmpcOutput,
    pub objective: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: Config,
    pub vocab: Vocabulary,
    pub num_classes: usize,
    pub store: ParamStore,
}

impl Model {
    /// Fresh parameters. Each part draws from its own stream of the run
    /// seed, so the image encoder is identical across fusion variants.
    pub fn new(config: &Config, vocab: Vocabulary, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(CgfrError::config(format!("need at least 2 identity classes, got {num_classes}")));
        }
        let mut m = Model {
            config: config.clone(),
            vocab,
            num_classes,
            store: ParamStore::new(),
        };
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(stream);
            r
        };
        m.image().init(&mut m.store, &mut rng(IMAGE_STREAM))?;
        m.text().init(&mut m.store, &mut rng(2))?;
        m.tfrm().init(&mut m.store, &mut rng(3))?;
        m.cfam()?.init(&mut m.store, &mut rng(4))?;
        let out = m.config.variant.output_dim();
        m.store.init_weight(&mut rng(5), ID_HEAD, &[num_classes, out], out)?;
        m.store.set_frozen_prefix(ImageEncoder::PREFIX, true);
        Ok(m)
    }

    pub fn image(&self) -> ImageEncoder {
        ImageEncoder {
            leaky_slope: self.config.leaky_slope,
        }
    }

    pub fn text(&self) -> TextEncoder {
        TextEncoder {
            vocab_size: self.vocab.len(),
            dim: self.config.text_dim,
            layers: self.config.text_layers,
            heads: self.config.text_heads,
            ffn_mult: self.config.text_ffn_mult,
            ln_eps: self.config.ln_eps,
        }
    }

    pub fn tfrm(&self) -> Tfrm {
        Tfrm {
            text_dim: self.config.text_dim,
            num_classes: self.num_classes,
            leaky_slope: self.config.leaky_slope,
            cls_caption: self.config.cls_caption,
            bn_eps: self.config.bn_eps,
        }
    }

    pub fn cfam(&self) -> Result<Cfam> {
        Ok(Cfam {
            variant: self.config.variant,
            attn: AttentionBlockConfig::new(tfrm::EMBED_DIM, self.config.attn_scale, self.config.cap_heads)?,
            leaky_slope: self.config.leaky_slope,
            bn_eps: self.config.bn_eps,
            ln_eps: self.config.ln_eps,
        })
    }

    pub fn damsm(&self) -> Result<DamsmConfig> {
        DamsmConfig::new(self.config.gamma1, self.config.gamma2, self.config.gamma3)
    }

    pub fn tokenize(&self, captions: &[&str]) -> Result<Vec<TokenSequence>> {
        captions.iter().map(|c| self.vocab.tokenize(c)).collect()
    }

    pub fn text_side(&self, store: &ParamStore, seqs: &[TokenSequence], mode: Mode, updates: &mut BnUpdates) -> Result<TextSide> {
        let feats = self.text().forward(store, seqs)?;
        let t = self.tfrm();
        let words = t.conv_projection(store, &feats.tokens_out)?;
        let caption = if self.config.cls_caption {
            t.cls_caption_embedding(store, &feats.cls_out()?, mode, updates)?
        } else {
            t.caption_embedding(&words)?
        };
        let masks = seqs.iter().map(|s| tfrm::word_mask(&s.attention_mask)).collect();
        Ok(TextSide { words, caption, masks })
    }

    /// Alignment and projection-classification losses for one batch.
    pub fn tfrm_losses(&self, store: &ParamStore, text: &TextSide, local: &Tensor, global: &Tensor, labels: &[usize]) -> Result<TfrmLosses> {
        let t = self.tfrm();
        let region = tfrm::regions(&t.image_projection(store, local)?)?;
        let vglob = t.global_projection(store, global)?;
        let damsm = tfrm::damsm_loss(&region, &text.words, &text.masks, &text.caption, &vglob, &self.damsm()?)?;
        let cmpc = tfrm::cmpc_loss(&vglob, &text.caption, labels, &store.get("tfrm.cmpc.w")?)?;
        let objective = tfrm::tfrm_objective(&damsm.loss, &cmpc.total, self.config.lambda1, self.config.lambda2)?;
        Ok(TfrmLosses { damsm, cmpc, objective })
    }

    pub fn fuse(&self, store: &ParamStore, text: &TextSide, local: &Tensor, global: &Tensor, mode: Mode, updates: &mut BnUpdates) -> Result<CfamOutput> {
        self.cfam()?
            .forward(store, local, global, &text.words, &text.caption, mode, updates)
    }

    /// Normalised-softmax identity loss: cosine logits scaled by `id_scale`.
    pub fn identity_loss(&self, store: &ParamStore, embedding: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let w = store.get(ID_HEAD)?.l2_normalize(NORM_EPS)?;
        let e = embedding.l2_normalize(NORM_EPS)?;
        Ok(e.matmul(&w.transpose_last()?)?.scale(self.config.id_scale).cross_entropy(labels)?)
    }

    /// Eval-mode fused embeddings, one row per `(feature row, caption)`.
    pub fn embed(&self, cache: &FeatureCache, rows: &[usize], captions: &[&str]) -> Result<Vec<Vec<f64>>> {
        if rows.len() != captions.len() {
            return Err(CgfrError::input("one caption per feature row is required"));
        }
        let bs = self.config.batch_size.max(1);
        let mut out = Vec::with_capacity(rows.len());
        for (r, c) in rows.chunks(bs).zip(captions.chunks(bs)) {
            let seqs = self.tokenize(c)?;
            let mut sink = BnUpdates::new();
            let text = self.text_side(&self.store, &seqs, Mode::Eval, &mut sink)?;
            let (local, global) = cache.batch(r)?;
            let e = self.fuse(&self.store, &text, &local, &global, Mode::Eval, &mut sink)?.embedding;
            let d = e.shape()[1];
            out.extend(e.data().chunks(d).map(|v| v.to_vec()));
        }
        Ok(out)
    }
}

/// Image-only baseline embeddings: the frozen encoder's global vectors.
pub fn global_embeddings(cache: &FeatureCache, rows: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| cache.global[r].iter().map(|&v| v as f64).collect())
        .collect()
}
