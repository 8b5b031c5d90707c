//! Pre-norm transformer text encoder over fixed-length token sequences.

use cgfr_tensor::{ParamStore, Tensor};
use rand::Rng;

use super::vocab::{TokenSequence, SEQ_LEN};
use crate::error::{CgfrError, Result};
use crate::nn::{init_linear, init_norm, layer_norm, linear};

/// Additive attention bias for masked keys; `exp` of it underflows to 0.
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextEncoder {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub ln_eps: f64,
}

/// Encoder output for a batch of `N` sequences.
#[derive(Debug, Clone)]
pub struct TextFeatures {
    /// `[N, L, D]` contextual token embeddings.
    pub tokens_out: Tensor,
    /// Per-layer attention weights `[N, heads, L, L]`.
    pub attention: Vec<Tensor>,
}

impl TextFeatures {
    /// `[N, D]` row 0 of every sequence.
    pub fn cls_out(&self) -> Result<Tensor> {
        let n = self.tokens_out.shape()[0];
        let d = self.tokens_out.shape()[2];
        Ok(self.tokens_out.narrow(1, 0, 1)?.reshape(&[n, d])?)
    }
}

impl TextEncoder {
    pub const PREFIX: &'static str = "text";

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let d = self.dim;
        store.init_weight(rng, "text.tok_emb", &[self.vocab_size, d], d)?;
        store.init_weight(rng, "text.pos_emb", &[SEQ_LEN, d], d)?;
        for l in 0..self.layers {
            let p = format!("text.l{l}");
            init_norm(store, &format!("{p}.ln1"), d)?;
            for m in ["q", "k", "v", "o"] {
                init_linear(store, rng, &format!("{p}.{m}"), d, d)?;
            }
            init_norm(store, &format!("{p}.ln2"), d)?;
            init_linear(store, rng, &format!("{p}.ff1"), d, d * self.ffn_mult)?;
            init_linear(store, rng, &format!("{p}.ff2"), d * self.ffn_mult, d)?;
        }
        init_norm(store, "text.ln_f", d)?;
        Ok(())
    }

    /// Token + positional embedding, `[N, L, D]`.
    pub fn embed(&self, store: &ParamStore, seqs: &[TokenSequence]) -> Result<Tensor> {
        let mut ids = Vec::with_capacity(seqs.len() * SEQ_LEN);
        for s in seqs {
            if s.ids.len() != SEQ_LEN || s.attention_mask.len() != SEQ_LEN {
                return Err(CgfrError::input(format!("token sequence must have length {SEQ_LEN}")));
            }
            if let Some(&bad) = s.ids.iter().find(|&&i| i >= self.vocab_size) {
                return Err(CgfrError::input(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
            }
            ids.extend_from_slice(&s.ids);
        }
        let tok = store.get("text.tok_emb")?.index_select(&ids)?;
        let x = tok.reshape(&[seqs.len(), SEQ_LEN, self.dim])?;
        Ok(x.add(&store.get("text.pos_emb")?)?)
    }

    pub fn forward(&self, store: &ParamStore, seqs: &[TokenSequence]) -> Result<TextFeatures> {
        let masks: Vec<&[u8]> = seqs.iter().map(|s| s.attention_mask.as_slice()).collect();
        let x = self.embed(store, seqs)?;
        self.forward_embedded(store, &x, &masks)
    }

    /// Runs the transformer blocks on already-embedded input `[N, L, D]`.
    pub fn forward_embedded(&self, store: &ParamStore, x: &Tensor, masks: &[&[u8]]) -> Result<TextFeatures> {
        let n = masks.len();
        let (l, d, h) = (SEQ_LEN, self.dim, self.heads);
        if x.shape() != [n, l, d] {
            return Err(CgfrError::input(format!("text input must be [{n}, {l}, {d}], got {:?}", x.shape())));
        }
        let dh = d / h;
        let bias: Vec<f64> = masks
            .iter()
            .flat_map(|m| m.iter().map(|&v| if v == 1 { 0.0 } else { MASK_BIAS }))
            .collect();
        let bias = Tensor::from_vec(&[n, 1, 1, l], bias)?;
        let split = |t: Tensor| -> Result<Tensor> { Ok(t.reshape(&[n, l, h, dh])?.permute(&[0, 2, 1, 3])?) };

        let mut x = x.clone();
        let mut attention = Vec::with_capacity(self.layers);
        for layer in 0..self.layers {
            let p = format!("text.l{layer}");
            let hn = layer_norm(store, &format!("{p}.ln1"), &x, self.ln_eps)?;
            let q = split(linear(store, &format!("{p}.q"), &hn)?)?;
            let k = split(linear(store, &format!("{p}.k"), &hn)?)?;
            let v = split(linear(store, &format!("{p}.v"), &hn)?)?;
            let logits = q.bmm_bt(&k)?.scale(1.0 / (dh as f64).sqrt()).add(&bias)?;
            let attn = logits.softmax_last()?;
            let ctx = attn.bmm(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[n, l, d])?;
            x = x.add(&linear(store, &format!("{p}.o"), &ctx)?)?;
            attention.push(attn);

            let hn = layer_norm(store, &format!("{p}.ln2"), &x, self.ln_eps)?;
            let ff = linear(store, &format!("{p}.ff1"), &hn)?.gelu();
            x = x.add(&linear(store, &format!("{p}.ff2"), &ff)?)?;
        }
        let tokens_out = layer_norm(store, "text.ln_f", &x, self.ln_eps)?;
        Ok(TextFeatures { tokens_out, attention })
    }
}
