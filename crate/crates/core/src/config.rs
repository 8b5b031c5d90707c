//! Run configuration: flat `key=value` text with namespaced keys.
//!
//! Every key has a default; unknown keys are rejected. Lines starting with
//! `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::cfam::CfamVariant;
use crate::datagen::SplitPolicy;
use crate::error::{CgfrError, Result};

/// Parsing and canonical rendering of one config value type.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| format!("`{s}`: {e}"))
            }
            fn render(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}
from_str_value!(usize, u64, f64, bool);

impl ConfigValue for CfamVariant {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for SplitPolicy {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

macro_rules! config_keys {
    ($( $key:literal => $field:ident : $ty:ty = $default:expr; )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $(pub $field: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Config { $($field: $default,)* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Sets one key from its text form; does not re-validate.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = <$ty as ConfigValue>::parse_value(value.trim())
                            .map_err(|e| CgfrError::config(format!("{key}: {e}")))?;
                    })*
                    _ => return Err(CgfrError::config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$field.render()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "run.seed" => seed: u64 = 0;

    "data.n_identities" => n_identities: usize = 200;
    "data.images_per_identity" => images_per_identity: usize = 10;
    "data.captions_per_image" => captions_per_image: usize = 10;
    "data.min_attrs" => min_attrs: usize = 5;
    "data.max_attrs" => max_attrs: usize = 8;
    "data.split" => split: SplitPolicy = SplitPolicy::Shared;
    "data.gallery_per_identity" => gallery_per_identity: usize = 1;
    "data.probe_per_identity" => probe_per_identity: usize = 2;
    "data.train_fraction" => train_fraction: f64 = 0.7;
    "data.nuisance" => nuisance: f64 = 1.0;

    "degrade.subsample_min" => subsample_min: f64 = 2.0;
    "degrade.subsample_max" => subsample_max: f64 = 4.0;
    "degrade.rotation_deg" => rotation_deg: f64 = 10.0;
    "degrade.flip_prob" => flip_prob: f64 = 0.5;
    "degrade.noise_sigma" => noise_sigma: f64 = 0.08;
    "degrade.brightness" => brightness: f64 = 0.2;
    "degrade.contrast" => contrast: f64 = 0.2;
    "degrade.saturation" => saturation: f64 = 0.2;

    "text.dim" => text_dim: usize = 768;
    "text.layers" => text_layers: usize = 2;
    "text.heads" => text_heads: usize = 4;
    "text.ffn_mult" => text_ffn_mult: usize = 4;

    "tfrm.lambda1" => lambda1: f64 = 1.0;
    "tfrm.lambda2" => lambda2: f64 = 0.5;
    "tfrm.cls_caption" => cls_caption: bool = false;
    "damsm.gamma1" => gamma1: f64 = 5.0;
    "damsm.gamma2" => gamma2: f64 = 5.0;
    "damsm.gamma3" => gamma3: f64 = 10.0;

    "cfam.variant" => variant: CfamVariant = CfamVariant::Full;
    "cfam.scale" => attn_scale: f64 = 0.5;
    "cfam.heads" => cap_heads: usize = 4;

    "norm.bn_momentum" => bn_momentum: f64 = 0.1;
    "norm.bn_eps" => bn_eps: f64 = 1e-5;
    "norm.ln_eps" => ln_eps: f64 = 1e-5;
    "act.leaky_slope" => leaky_slope: f64 = 0.2;

    "train.batch_size" => batch_size: usize = 16;
    "train.phase1_epochs" => phase1_epochs: usize = 4;
    "train.phase2_epochs" => phase2_epochs: usize = 24;
    "train.lr_init" => lr_init: f64 = 1e-5;
    "train.lr_peak" => lr_peak: f64 = 1e-4;
    "train.lr_final" => lr_final: f64 = 1e-5;
    "train.warmup_iters" => warmup_iters: u64 = 2000;
    "train.adamw_wd" => adamw_wd: f64 = 0.02;
    "train.proj_lr" => proj_lr: f64 = 1e-3;
    "train.cfam_lr" => cfam_lr: f64 = 1e-3;
    "train.adam_beta1" => adam_beta1: f64 = 0.5;
    "train.adam_beta2" => adam_beta2: f64 = 0.99;
    "train.phase2_lr_scale" => phase2_lr_scale: f64 = 0.1;
    "train.id_scale" => id_scale: f64 = 16.0;
    "train.id_weight" => id_weight: f64 = 1.0;
    "train.tfrm_weight" => tfrm_weight: f64 = 1.0;

    "eval.n_genuine" => n_genuine: usize = 500;
    "eval.n_impostor" => n_impostor: usize = 10000;
}

impl Config {
    /// Desk-scale preset: narrower text encoder and a short phase 2, with
    /// every other value at its default.
    pub fn desk() -> Self {
        Config {
            text_dim: 128,
            phase2_epochs: 4,
            ..Config::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CgfrError::config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CgfrError::config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CgfrError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CgfrError::config(m));
        if self.batch_size < 2 {
            return bad(format!("train.batch_size must be >= 2, got {}", self.batch_size));
        }
        let rates = [
            ("train.lr_init", self.lr_init),
            ("train.lr_peak", self.lr_peak),
            ("train.lr_final", self.lr_final),
            ("train.proj_lr", self.proj_lr),
            ("train.cfam_lr", self.cfam_lr),
            ("train.phase2_lr_scale", self.phase2_lr_scale),
            ("train.id_scale", self.id_scale),
            ("damsm.gamma1", self.gamma1),
            ("damsm.gamma2", self.gamma2),
            ("damsm.gamma3", self.gamma3),
            ("norm.bn_eps", self.bn_eps),
            ("norm.ln_eps", self.ln_eps),
        ];
        for (k, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("train.adam_beta1", self.adam_beta1), ("train.adam_beta2", self.adam_beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{k} must lie in (0,1), got {v}"));
            }
        }
        if self.warmup_iters == 0 {
            return bad("train.warmup_iters must be positive".into());
        }
        if self.text_dim == 0 || self.text_heads == 0 || self.text_dim % self.text_heads != 0 {
            return bad(format!("text.dim {} must be a positive multiple of text.heads {}", self.text_dim, self.text_heads));
        }
        if self.text_layers == 0 || self.text_ffn_mult == 0 {
            return bad("text.layers and text.ffn_mult must be positive".into());
        }
        if !(self.attn_scale > 0.0 && self.attn_scale <= 1.0) {
            return bad(format!("cfam.scale must lie in (0,1], got {}", self.attn_scale));
        }
        if self.cap_heads == 0 || 64 % self.cap_heads != 0 {
            return bad(format!("cfam.heads {} must divide 64", self.cap_heads));
        }
        if !(3..=8).contains(&self.min_attrs) || !(self.min_attrs..=8).contains(&self.max_attrs) {
            return bad(format!(
                "need 3 <= data.min_attrs <= data.max_attrs <= 8, got {}..{}",
                self.min_attrs, self.max_attrs
            ));
        }
        if self.n_identities == 0 || self.images_per_identity == 0 || self.captions_per_image == 0 {
            return bad("data counts must be >= 1".into());
        }
        if self.captions_per_image > 10 {
            return bad(format!("data.captions_per_image must be <= 10, got {}", self.captions_per_image));
        }
        if !(self.subsample_min >= 1.0 && self.subsample_max >= self.subsample_min) {
            return bad("need 1 <= degrade.subsample_min <= degrade.subsample_max".into());
        }
        let non_neg = [
            ("degrade.rotation_deg", self.rotation_deg),
            ("degrade.noise_sigma", self.noise_sigma),
            ("degrade.brightness", self.brightness),
            ("degrade.contrast", self.contrast),
            ("degrade.saturation", self.saturation),
            ("data.nuisance", self.nuisance),
            ("train.adamw_wd", self.adamw_wd),
            ("tfrm.lambda1", self.lambda1),
            ("tfrm.lambda2", self.lambda2),
            ("train.id_weight", self.id_weight),
            ("train.tfrm_weight", self.tfrm_weight),
        ];
        for (k, v) in non_neg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("degrade.flip_prob must lie in [0,1], got {}", self.flip_prob));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("norm.bn_momentum must lie in [0,1], got {}", self.bn_momentum));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("data.train_fraction must lie in (0,1), got {}", self.train_fraction));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
        let desk = Config::desk();
        assert_eq!(Config::parse(&desk.to_text()).unwrap(), desk);
    }

    #[test]
    fn overrides_comments_and_unknown_keys() {
        let cfg = Config::parse("# comment\n\ntrain.batch_size = 8\ncfam.variant=word_only\n").unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.variant, CfamVariant::WordOnly);
        assert!(Config::parse("train.nope=1").unwrap_err().to_string().contains("unknown key"));
        assert!(Config::parse("train.batch_size").is_err());
        assert!(Config::parse("train.batch_size=x").is_err());
    }

    #[test]
    fn validation_rejects_degenerate_values() {
        assert!(Config::parse("train.batch_size=1").is_err());
        assert!(Config::parse("damsm.gamma3=0").is_err());
        assert!(Config::parse("text.dim=100\ntext.heads=3").is_err());
        assert!(Config::parse("data.min_attrs=2").is_err());
    }

    #[test]
    fn floats_render_losslessly() {
        let mut cfg = Config::default();
        cfg.lr_init = 0.1 + 0.2;
        let back = Config::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.lr_init.to_bits(), cfg.lr_init.to_bits());
    }
}
