//! Synthetic identity, image and caption generator with train/gallery/probe
//! splits and an on-disk manifest format.

pub mod attributes;
pub mod captions;
pub mod degrade;
pub mod io;
pub mod render;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use attributes::{generate_identity, IdentityRecord, NUM_ATTRIBUTES};
pub use captions::{generate_captions, grammar_corpus, parse_caption};
pub use degrade::{degrade, DegradeConfig};
pub use render::{render_image, Nuisance, IMAGE_LEN};

use crate::config::Config;
use crate::encoders::Vocabulary;
use crate::error::{CgfrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Every identity contributes train, gallery and probe images.
    Shared,
    /// Training identities never appear in the gallery or probe sets.
    Disjoint,
}

impl SplitPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SplitPolicy::Shared => "shared",
            SplitPolicy::Disjoint => "disjoint",
        }
    }
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "shared" => Ok(SplitPolicy::Shared),
            "disjoint" => Ok(SplitPolicy::Disjoint),
            _ => Err(format!("unknown split policy `{s}` (expected shared or disjoint)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub captions_per_image: usize,
    pub min_attrs: usize,
    pub max_attrs: usize,
    pub split: SplitPolicy,
    pub gallery_per_identity: usize,
    pub probe_per_identity: usize,
    pub train_fraction: f64,
    /// Strength of per-view pose/illumination/expression variation.
    pub nuisance: f64,
    pub degrade: DegradeConfig,
}

impl DataConfig {
    pub fn from_config(c: &Config) -> Self {
        DataConfig {
            n_identities: c.n_identities,
            images_per_identity: c.images_per_identity,
            captions_per_image: c.captions_per_image,
            min_attrs: c.min_attrs,
            max_attrs: c.max_attrs,
            split: c.split,
            gallery_per_identity: c.gallery_per_identity,
            probe_per_identity: c.probe_per_identity,
            train_fraction: c.train_fraction,
            nuisance: c.nuisance,
            degrade: DegradeConfig {
                subsample_min: c.subsample_min,
                subsample_max: c.subsample_max,
                rotation_deg: c.rotation_deg,
                flip_prob: c.flip_prob,
                noise_sigma: c.noise_sigma,
                brightness: c.brightness,
                contrast: c.contrast,
                saturation: c.saturation,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.images_per_identity == 0 || self.captions_per_image == 0 {
            return Err(CgfrError::config("identity, image and caption counts must be at least 1"));
        }
        if self.images_per_identity > 200 {
            return Err(CgfrError::config("at most 200 images per identity"));
        }
        if self.captions_per_image > 10 {
            return Err(CgfrError::config("at most 10 captions per image"));
        }
        if self.min_attrs < captions::MIN_MENTIONED || self.min_attrs > self.max_attrs {
            return Err(CgfrError::config(format!(
                "attribute range {}..={} must start at {} or more",
                self.min_attrs,
                self.max_attrs,
                captions::MIN_MENTIONED
            )));
        }
        if !(self.nuisance >= 0.0 && self.nuisance.is_finite()) {
            return Err(CgfrError::config("nuisance strength must be non-negative"));
        }
        self.degrade.validate()?;
        self.split_counts().map(|_| ())
    }

    /// `(train identities, eval identities)` implied by the split policy.
    fn split_counts(&self) -> Result<(usize, usize)> {
        let eval_imgs = self.gallery_per_identity + self.probe_per_identity;
        if self.gallery_per_identity == 0 || self.probe_per_identity == 0 {
            return Err(CgfrError::config("gallery and probe need at least one image per identity"));
        }
        match self.split {
            SplitPolicy::Shared => {
                if eval_imgs >= self.images_per_identity {
                    return Err(CgfrError::config(format!(
                        "shared split needs more than {eval_imgs} images per identity, got {}",
                        self.images_per_identity
                    )));
                }
                Ok((self.n_identities, self.n_identities))
            }
            SplitPolicy::Disjoint => {
                if !(0.0..1.0).contains(&self.train_fraction) {
                    return Err(CgfrError::config("train_fraction must lie in [0, 1)"));
                }
                let train = (self.train_fraction * self.n_identities as f64).round() as usize;
                if train == 0 || train >= self.n_identities || eval_imgs > self.images_per_identity {
                    return Err(CgfrError::config(format!(
                        "disjoint split of {} identities at fraction {} leaves an empty side",
                        self.n_identities, self.train_fraction
                    )));
                }
                Ok((train, self.n_identities - train))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub identity: usize,
    /// `[3, 112, 112]` planar pixels in `[0, 1]`.
    pub image: Vec<f64>,
    pub captions: Vec<String>,
    /// Known for generated samples, absent for samples read from disk.
    pub nuisance: Option<Nuisance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Identity records when generated in-process; empty when loaded.
    pub records: Vec<IdentityRecord>,
    /// Grouped by identity, views in order.
    pub samples: Vec<Sample>,
}

/// Sample indices of each split part.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub gallery: Vec<usize>,
    pub probe: Vec<usize>,
}

/// Worker threads for parallel generation: `CGFR_THREADS` if set and
/// positive, otherwise the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("CGFR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn identity_samples(cfg: &DataConfig, seed: u64, id: usize) -> Result<(IdentityRecord, Vec<Sample>)> {
    let record = generate_identity(seed, id);
    let mut out = Vec::with_capacity(cfg.images_per_identity);
    for view in 0..cfg.images_per_identity {
        let mut rng = attributes::stream_rng(seed, id, 1 + view as u64);
        let nuisance = Nuisance::sample(&mut rng, cfg.nuisance);
        let clean = render_image(&record, &nuisance);
        let image = degrade(&clean, &cfg.degrade, &mut rng)?;
        let captions = generate_captions(&record, &mut rng, cfg.captions_per_image, cfg.min_attrs, cfg.max_attrs)?;
        out.push(Sample {
            identity: id,
            image,
            captions,
            nuisance: Some(nuisance),
        });
    }
    Ok((record, out))
}

/// Generates every identity, its rendered and degraded views and their
/// captions; deterministic in `seed` regardless of thread count.
pub fn build_dataset(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| CgfrError::config(format!("thread pool: {e}")))?;
    let parts: Vec<(IdentityRecord, Vec<Sample>)> = pool.install(|| {
        (0..cfg.n_identities)
            .into_par_iter()
            .map(|id| identity_samples(cfg, seed, id))
            .collect::<Result<_>>()
    })?;
    let mut records = Vec::with_capacity(parts.len());
    let mut samples = Vec::with_capacity(cfg.n_identities * cfg.images_per_identity);
    for (r, s) in parts {
        records.push(r);
        samples.extend(s);
    }
    Ok(Dataset { records, samples })
}

/// The closed vocabulary of the caption grammar.
pub fn caption_vocabulary() -> Vocabulary {
    let corpus = grammar_corpus();
    Vocabulary::from_corpus(corpus.iter().map(|s| s.as_str()))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct identity ids in order of first appearance.
    pub fn identities(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for s in &self.samples {
            if out.last() != Some(&s.identity) && !out.contains(&s.identity) {
                out.push(s.identity);
            }
        }
        out
    }

    /// Assigns samples to train, gallery and probe.
    ///
    /// Within an identity, views are taken in order: gallery first, then
    /// probe, then (shared policy) the rest for training. Under the disjoint
    /// policy the first `round(train_fraction * n)` identities train on all
    /// their views and the others supply gallery and probe.
    pub fn split(&self, cfg: &DataConfig) -> Result<Split> {
        let ids = self.identities();
        let mut check = cfg.clone();
        check.n_identities = ids.len();
        let (n_train, _) = check.split_counts()?;
        let mut split = Split::default();
        for (rank, id) in ids.iter().enumerate() {
            let views: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].identity == *id).collect();
            let g = cfg.gallery_per_identity;
            let p = cfg.probe_per_identity;
            let eval_side = cfg.split == SplitPolicy::Shared || rank >= n_train;
            let train_side = cfg.split == SplitPolicy::Shared || rank < n_train;
            if eval_side {
                if views.len() < g + p + usize::from(cfg.split == SplitPolicy::Shared) {
                    return Err(CgfrError::config(format!("identity {id} has only {} views", views.len())));
                }
                split.gallery.extend(&views[..g]);
                split.probe.extend(&views[g..g + p]);
            }
            if train_side {
                let skip = if cfg.split == SplitPolicy::Shared { g + p } else { 0 };
                split.train.extend(&views[skip..]);
            }
        }
        Ok(split)
    }
}
