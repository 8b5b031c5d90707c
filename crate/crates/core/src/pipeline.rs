//! Glue between generated data, the frozen encoder, training and the
//! evaluation protocols.

use std::collections::BTreeMap;
use std::path::Path;

use cgfr_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cfam::CfamVariant;
use crate::config::Config;
use crate::datagen::{caption_vocabulary, Dataset, DataConfig, Split, IMAGE_LEN};
use crate::encoders::{ImageEncoder, GLOBAL_DIM, IMAGE_SHAPE};
use crate::error::{CgfrError, Result};
use crate::metrics::{build_verification_protocol, score_pairs, IdentificationTrial, MetricsSummary, ScoreSet};
use crate::model::{global_embeddings, FeatureCache, Model, LOCAL_LEN};
use crate::trainer::{self, RunOptions, TrainReport, TrainSet};

/// Gallery or probe items with the caption used at evaluation time.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub features: FeatureCache,
    pub identities: Vec<usize>,
    pub captions: Vec<String>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

/// Everything training and evaluation need, with images already encoded.
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub train: TrainSet,
    pub gallery: EvalSet,
    pub probe: EvalSet,
    /// Dataset identity of each training class.
    pub class_identity: Vec<usize>,
}

impl Prepared {
    pub fn num_classes(&self) -> usize {
        self.class_identity.len()
    }
}

/// Runs the frozen image encoder over planar images in chunks of 16.
pub fn encode_images<'a>(store: &ParamStore, enc: &ImageEncoder, images: impl IntoIterator<Item = &'a [f64]>) -> Result<FeatureCache> {
    const CHUNK: usize = 16;
    let mut cache = FeatureCache::default();
    let mut data = Vec::with_capacity(CHUNK * IMAGE_LEN);
    let flush = |data: &mut Vec<f64>, cache: &mut FeatureCache| -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let mut shape = vec![data.len() / IMAGE_LEN];
        shape.extend_from_slice(&IMAGE_SHAPE);
        let f = enc.forward(store, &Tensor::from_vec(&shape, std::mem::take(data))?)?;
        for (l, g) in f.local.data().chunks(LOCAL_LEN).zip(f.global.data().chunks(GLOBAL_DIM)) {
            cache.local.push(l.iter().map(|&v| v as f32).collect());
            cache.global.push(g.iter().map(|&v| v as f32).collect());
        }
        Ok(())
    };
    for img in images {
        if img.len() != IMAGE_LEN {
            return Err(CgfrError::input(format!("image has {} values, expected {IMAGE_LEN}", img.len())));
        }
        data.extend_from_slice(img);
        if data.len() == CHUNK * IMAGE_LEN {
            flush(&mut data, &mut cache)?;
        }
    }
    flush(&mut data, &mut cache)?;
    Ok(cache)
}

/// Features of every sample under the encoder of `model`.
pub fn encode_with_model(model: &Model, ds: &Dataset) -> Result<FeatureCache> {
    encode_images(&model.store, &model.image(), ds.samples.iter().map(|s| s.image.as_slice()))
}

/// Frozen encoder features of every sample. The parameters come from the
/// same seeded stream [`Model::new`] uses, so they match any model built
/// with `cfg`.
pub fn encode_dataset(cfg: &Config, ds: &Dataset) -> Result<FeatureCache> {
    let enc = ImageEncoder {
        leaky_slope: cfg.leaky_slope,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(crate::model::IMAGE_STREAM);
    enc.init(&mut store, &mut rng)?;
    encode_images(&store, &enc, ds.samples.iter().map(|s| s.image.as_slice()))
}

fn take_rows(cache: &mut FeatureCache, rows: &[usize]) -> FeatureCache {
    let mut out = FeatureCache::default();
    for &r in rows {
        out.local.push(std::mem::take(&mut cache.local[r]));
        out.global.push(std::mem::take(&mut cache.global[r]));
    }
    out
}

fn eval_set(ds: &Dataset, cache: &mut FeatureCache, rows: &[usize]) -> EvalSet {
    EvalSet {
        features: take_rows(cache, rows),
        identities: rows.iter().map(|&r| ds.samples[r].identity).collect(),
        captions: rows.iter().map(|&r| ds.samples[r].captions[0].clone()).collect(),
    }
}

/// Splits the dataset and moves each part's features out of `features`.
/// Training identities are relabelled `0..C` in order of appearance.
pub fn prepare(ds: &Dataset, split: &Split, mut features: FeatureCache) -> Result<Prepared> {
    if features.len() != ds.len() {
        return Err(CgfrError::input(format!("{} feature rows for {} samples", features.len(), ds.len())));
    }
    let mut class_of = BTreeMap::new();
    let mut class_identity = Vec::new();
    let labels: Vec<usize> = split
        .train
        .iter()
        .map(|&r| {
            let id = ds.samples[r].identity;
            *class_of.entry(id).or_insert_with(|| {
                class_identity.push(id);
                class_identity.len() - 1
            })
        })
        .collect();
    let train = TrainSet {
        labels,
        captions: split.train.iter().map(|&r| ds.samples[r].captions.clone()).collect(),
        features: take_rows(&mut features, &split.train),
    };
    let gallery = eval_set(ds, &mut features, &split.gallery);
    let probe = eval_set(ds, &mut features, &split.probe);
    Ok(Prepared {
        train,
        gallery,
        probe,
        class_identity,
    })
}

/// Generates, encodes and splits a dataset in one go.
pub fn prepare_generated(cfg: &Config) -> Result<Prepared> {
    let dc = DataConfig::from_config(cfg);
    let ds = crate::datagen::build_dataset(&dc, cfg.seed)?;
    let split = ds.split(&dc)?;
    let features = encode_dataset(cfg, &ds)?;
    prepare(&ds, &split, features)
}

/// Per-item embeddings of the gallery followed by the probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub gallery: Vec<Vec<f64>>,
    pub probe: Vec<Vec<f64>>,
}

pub fn embed_fused(model: &Model, p: &Prepared) -> Result<Embedded> {
    let run = |s: &EvalSet| {
        let rows: Vec<usize> = (0..s.len()).collect();
        let caps: Vec<&str> = s.captions.iter().map(String::as_str).collect();
        model.embed(&s.features, &rows, &caps)
    };
    Ok(Embedded {
        gallery: run(&p.gallery)?,
        probe: run(&p.probe)?,
    })
}

/// The image-only baseline: frozen global features.
pub fn embed_baseline(p: &Prepared) -> Embedded {
    let all = |s: &EvalSet| global_embeddings(&s.features, &(0..s.len()).collect::<Vec<_>>());
    Embedded {
        gallery: all(&p.gallery),
        probe: all(&p.probe),
    }
}

/// Verification pairs over gallery and probe items together.
pub fn verification_scores(gallery_ids: &[usize], probe_ids: &[usize], e: &Embedded, seed: u64, n_genuine: usize, n_impostor: usize) -> Result<ScoreSet> {
    let ids: Vec<usize> = gallery_ids.iter().chain(probe_ids).copied().collect();
    let pairs = build_verification_protocol(&ids, seed, n_genuine, n_impostor)?;
    let items: Vec<Vec<f64>> = e.gallery.iter().chain(&e.probe).cloned().collect();
    score_pairs(&pairs, &items)
}

/// Closed-set trial: the first gallery item of each identity is enrolled,
/// every probe is searched.
pub fn identification_trial(gallery_ids: &[usize], probe_ids: &[usize], e: &Embedded) -> IdentificationTrial {
    let mut seen = std::collections::HashSet::new();
    let gallery = gallery_ids
        .iter()
        .zip(&e.gallery)
        .filter(|(id, _)| seen.insert(**id))
        .map(|(&id, v)| (id, v.clone()))
        .collect();
    let probes = probe_ids.iter().zip(&e.probe).map(|(&id, v)| (id, v.clone())).collect();
    IdentificationTrial { gallery, probes }
}

/// Pair counts capped by what the evaluation items can supply.
pub fn protocol_sizes(gallery_ids: &[usize], probe_ids: &[usize], n_genuine: usize, n_impostor: usize) -> (usize, usize) {
    let mut per: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in gallery_ids.iter().chain(probe_ids) {
        *per.entry(i).or_default() += 1;
    }
    let n = gallery_ids.len() + probe_ids.len();
    let genuine: usize = per.values().map(|&k| k * k.saturating_sub(1) / 2).sum();
    let total = n * n.saturating_sub(1) / 2;
    (n_genuine.min(genuine), n_impostor.min(total - genuine))
}

/// Verification scores and identification trial under the configured
/// protocol sizes and seed.
pub fn protocols(gallery_ids: &[usize], probe_ids: &[usize], e: &Embedded, cfg: &Config) -> Result<(ScoreSet, IdentificationTrial)> {
    if e.gallery.len() != gallery_ids.len() || e.probe.len() != probe_ids.len() {
        return Err(CgfrError::input("embedding and identity counts differ"));
    }
    let (g, i) = protocol_sizes(gallery_ids, probe_ids, cfg.n_genuine, cfg.n_impostor);
    let scores = verification_scores(gallery_ids, probe_ids, e, cfg.seed, g, i)?;
    Ok((scores, identification_trial(gallery_ids, probe_ids, e)))
}

pub fn evaluate(p: &Prepared, e: &Embedded, cfg: &Config) -> Result<MetricsSummary> {
    let (scores, trial) = protocols(&p.gallery.identities, &p.probe.identities, e, cfg)?;
    MetricsSummary::compute(&scores, &trial)
}

/// Runs phase 1 on the prepared training rows, checkpointing under `dir`.
pub fn run_phase1(p: &Prepared, cfg: &Config, dir: &Path) -> Result<(Model, TrainReport)> {
    let mut model = Model::new(cfg, caption_vocabulary(), p.num_classes())?;
    let opts = RunOptions {
        checkpoint_dir: Some(dir.to_path_buf()),
        stop_after: None,
    };
    let report = trainer::train_phase1(&mut model, &p.train, &opts)?;
    Ok((model, report))
}

/// Phase 2 for one fusion variant, started from a phase-1 checkpoint.
pub fn run_phase2(p: &Prepared, cfg: &Config, variant: CfamVariant, phase1: &Path, dir: Option<&Path>) -> Result<(Model, TrainReport)> {
    let cfg = Config { variant, ..cfg.clone() };
    let mut model = Model::new(&cfg, caption_vocabulary(), p.num_classes())?;
    let opts = RunOptions {
        checkpoint_dir: dir.map(Path::to_path_buf),
        stop_after: None,
    };
    let report = trainer::train_phase2(&mut model, &p.train, phase1, &opts)?;
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: CfamVariant,
    pub metrics: MetricsSummary,
    pub report: TrainReport,
}

/// Trains and evaluates each variant from the same phase-1 checkpoint.
pub fn run_ablation(p: &Prepared, cfg: &Config, phase1: &Path, variants: &[CfamVariant]) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let (model, report) = run_phase2(p, cfg, variant, phase1, None)?;
            let metrics = evaluate(p, &embed_fused(&model, p)?, cfg)?;
            Ok(AblationRow { variant, metrics, report })
        })
        .collect()
}

/// Fixed-width table with one row per variant.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<18}", "variant");
    for k in MetricsSummary::KEYS {
        out.push_str(&format!(" {k:>13}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:<18}", r.variant.name()));
        for v in r.metrics.values() {
            out.push_str(&format!(" {v:>13.6}"));
        }
        out.push('\n');
    }
    out
}
