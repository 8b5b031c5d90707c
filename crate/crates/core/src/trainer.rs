//! Two-phase training: phase 1 refines the text side against the alignment
//! objective, phase 2 trains fusion and identity head end to end with the
//! text side at a reduced rate. The image encoder never changes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cgfr_tensor::{backward, checkpoint, Gradients, LrSchedule, OptimizerState, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::encoders::Vocabulary;
use crate::error::{CgfrError, Result};
use crate::model::{FeatureCache, Model};
use crate::nn::{apply_bn_updates, BnUpdates, Mode};

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
/// Parameter prefixes a phase-2 run takes over from phase 1.
pub const SHARED_PREFIXES: [&str; 3] = ["image.", "text.", "tfrm."];
const FUSION_PREFIXES: [&str; 2] = ["cfam.", "head."];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }

    fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Phase::One),
            2 => Ok(Phase::Two),
            _ => Err(CgfrError::Load(format!("unknown training phase {n}"))),
        }
    }
}

/// Training rows: frozen image features, class labels in `0..num_classes`
/// and the captions available for each row.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    pub features: FeatureCache,
    pub labels: Vec<usize>,
    pub captions: Vec<Vec<String>>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.features.len() != self.len() || self.captions.len() != self.len() {
            return Err(CgfrError::input("train set columns have different lengths"));
        }
        if self.captions.iter().any(|c| c.is_empty()) {
            return Err(CgfrError::input("every training row needs a caption"));
        }
        let distinct: std::collections::BTreeSet<_> = self.labels.iter().collect();
        if distinct.len() < 2 {
            return Err(CgfrError::config("training needs at least two identities"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub damsm: f64,
    pub cmpc: f64,
    pub identity: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub phase: u8,
    pub epochs: Vec<EpochRecord>,
    /// Total loss of every step, in order.
    pub step_losses: Vec<f64>,
    /// Text-encoder learning rate used at every step.
    pub lr_trace: Vec<f64>,
    pub schedule: LrSchedule,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
    pub wall_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    /// Human-readable per-epoch table.
    pub fn table(&self) -> String {
        let mut out = format!("phase {}\nepoch      damsm       cmpc   identity      total\n", self.phase);
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{:>5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
                e.epoch, e.damsm, e.cmpc, e.identity, e.total
            );
        }
        let _ = writeln!(out, "wall time {:.1} s", self.wall_secs);
        out
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "phase={}", self.phase);
        let _ = writeln!(out, "epochs={}", self.epochs.len());
        for e in &self.epochs {
            let p = format!("epoch.{}", e.epoch);
            let _ = writeln!(out, "{p}.damsm={}", e.damsm);
            let _ = writeln!(out, "{p}.cmpc={}", e.cmpc);
            let _ = writeln!(out, "{p}.identity={}", e.identity);
            let _ = writeln!(out, "{p}.total={}", e.total);
        }
        let _ = writeln!(out, "steps={}", self.step_losses.len());
        let _ = writeln!(out, "schedule.warmup_iters={}", self.schedule.warmup_iters);
        let _ = writeln!(out, "schedule.total_iters={}", self.schedule.total_iters);
        let _ = writeln!(out, "frozen_hash_before={}", self.frozen_hash_before);
        let _ = writeln!(out, "frozen_hash_after={}", self.frozen_hash_after);
        let _ = writeln!(out, "wall_secs={}", self.wall_secs);
        if let Some(p) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint={}", p.display());
        }
        out
    }
}

/// Optimizers and progress of one phase; everything needed to resume.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub phase: Phase,
    pub epochs_done: usize,
    pub iteration: u64,
    pub opt_text: OptimizerState,
    pub opt_proj: OptimizerState,
    pub opt_fusion: OptimizerState,
}

impl PhaseState {
    pub fn new(phase: Phase, cfg: &Config) -> Result<Self> {
        Ok(PhaseState {
            phase,
            epochs_done: 0,
            iteration: 0,
            opt_text: OptimizerState::adamw(0.9, 0.999, cfg.adamw_wd)?,
            opt_proj: OptimizerState::adam(cfg.adam_beta1, cfg.adam_beta2)?,
            opt_fusion: OptimizerState::adam(cfg.adam_beta1, cfg.adam_beta2)?,
        })
    }

    fn epochs_total(&self, cfg: &Config) -> usize {
        match self.phase {
            Phase::One => cfg.phase1_epochs,
            Phase::Two => cfg.phase2_epochs,
        }
    }
}

/// Warmup of `warmup_iters`, or 10% of the run when the run is not longer
/// than that, followed by cosine decay to the final rate.
pub fn schedule_for(cfg: &Config, total_iters: u64) -> Result<LrSchedule> {
    if total_iters < 2 {
        return Err(CgfrError::config(format!("a run needs at least 2 iterations, got {total_iters}")));
    }
    let warmup = if total_iters > cfg.warmup_iters {
        cfg.warmup_iters
    } else {
        (total_iters / 10).max(1)
    };
    Ok(LrSchedule::new(cfg.lr_init, cfg.lr_peak, cfg.lr_final, warmup, total_iters)?)
}

/// Batches of one epoch: shuffled rows and the caption index per row.
/// Trailing batches of a single row are dropped.
pub fn epoch_batches(data: &TrainSet, batch_size: usize, seed: u64, phase: Phase, epoch: usize) -> Vec<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((phase.number() as u64) << 32) | epoch as u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let picks: Vec<(usize, usize)> = order
        .into_iter()
        .map(|r| (r, rng.random_range(0..data.captions[r].len())))
        .collect();
    picks
        .chunks(batch_size.max(2))
        .filter(|b| b.len() >= 2)
        .map(|b| b.to_vec())
        .collect()
}

pub fn steps_per_epoch(data: &TrainSet, batch_size: usize) -> usize {
    let bs = batch_size.max(2);
    data.len() / bs + usize::from(data.len() % bs >= 2)
}

/// SHA-256 over the names and values of every parameter under `prefix`.
pub fn param_hash(store: &ParamStore, prefix: &str) -> String {
    let mut h = Sha256::new();
    for name in store.names_with_prefix(prefix) {
        h.update(name.as_bytes());
        for v in store.get(&name).expect("listed").data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

fn names_with(store: &ParamStore, prefixes: &[&str]) -> Vec<String> {
    prefixes.iter().flat_map(|p| store.names_with_prefix(p)).collect()
}

/// `(name, gradient)` for trainable parameters the loss actually reached.
fn reached(store: &ParamStore, names: &[String], grads: &Gradients) -> Vec<(String, Vec<f64>)> {
    names
        .iter()
        .filter_map(|n| {
            let p = store.param(n)?;
            if p.frozen() {
                return None;
            }
            grads.get(p.value()).map(|g| (n.clone(), g.to_vec()))
        })
        .collect()
}

struct StepLosses {
    damsm: f64,
    cmpc: f64,
    identity: f64,
    total: f64,
}

/// Sum of the terms with a non-zero weight; `None` when every weight is 0.
fn weighted_sum(terms: &[(f64, &Tensor)]) -> Result<Option<Tensor>> {
    let mut acc: Option<Tensor> = None;
    for (w, t) in terms {
        if *w == 0.0 {
            continue;
        }
        let s = t.scale(*w);
        acc = Some(match acc {
            None => s,
            Some(a) => a.add(&s)?,
        });
    }
    Ok(acc)
}

fn train_step(model: &mut Model, state: &mut PhaseState, data: &TrainSet, batch: &[(usize, usize)], lr_text: f64) -> Result<StepLosses> {
    let cfg = model.config.clone();
    let rows: Vec<usize> = batch.iter().map(|b| b.0).collect();
    let labels: Vec<usize> = rows.iter().map(|&r| data.labels[r]).collect();
    let caps: Vec<&str> = batch.iter().map(|&(r, c)| data.captions[r][c].as_str()).collect();
    let seqs = model.tokenize(&caps)?;
    let (local, global) = data.features.batch(&rows)?;

    let mut updates = BnUpdates::new();
    let text = model.text_side(&model.store, &seqs, Mode::Train, &mut updates)?;
    let tl = model.tfrm_losses(&model.store, &text, &local, &global, &labels)?;
    let (loss, identity) = match state.phase {
        Phase::One => (
            weighted_sum(&[(cfg.lambda1, &tl.damsm.loss), (cfg.lambda2, &tl.cmpc.total)])?,
            0.0,
        ),
        Phase::Two => {
            let fused = model.fuse(&model.store, &text, &local, &global, Mode::Train, &mut updates)?;
            let id = model.identity_loss(&model.store, &fused.embedding, &labels)?;
            let w1 = cfg.tfrm_weight * cfg.lambda1;
            let w2 = cfg.tfrm_weight * cfg.lambda2;
            let idv = id.item()?;
            (weighted_sum(&[(cfg.id_weight, &id), (w1, &tl.damsm.loss), (w2, &tl.cmpc.total)])?, idv)
        }
    };
    let damsm = tl.damsm.loss.item()?;
    let cmpc = tl.cmpc.total.item()?;
    let total = loss.as_ref().map_or(Ok(0.0), |l| l.item())?;
    if !(damsm.is_finite() && cmpc.is_finite() && identity.is_finite() && total.is_finite()) {
        return Err(CgfrError::input(format!(
            "non-finite loss at iteration {} (damsm {damsm}, cmpc {cmpc}, identity {identity})",
            state.iteration
        )));
    }
    if let Some(loss) = loss {
        let grads = backward(&loss)?;
        let store = &mut model.store;
        let text_names = store.names_with_prefix("text.");
        let proj_names = store.names_with_prefix("tfrm.");
        let (proj_lr, fusion) = match state.phase {
            Phase::One => (cfg.proj_lr, Vec::new()),
            Phase::Two => (cfg.proj_lr * cfg.phase2_lr_scale, names_with(store, &FUSION_PREFIXES)),
        };
        let g_text = reached(store, &text_names, &grads);
        let g_proj = reached(store, &proj_names, &grads);
        let g_fusion = reached(store, &fusion, &grads);
        state.opt_text.step_raw(store, &g_text, lr_text)?;
        state.opt_proj.step_raw(store, &g_proj, proj_lr)?;
        if !g_fusion.is_empty() {
            state.opt_fusion.step_raw(store, &g_fusion, cfg.cfam_lr)?;
        }
        apply_bn_updates(store, &updates, cfg.bn_momentum)?;
    }
    Ok(StepLosses {
        damsm,
        cmpc,
        identity,
        total,
    })
}

/// Where and whether to write per-epoch checkpoints.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many epochs of the phase (for resumable runs).
    pub stop_after: Option<usize>,
}

/// Runs (or continues) one phase until its configured epoch count.
pub fn run_phase(model: &mut Model, data: &TrainSet, state: &mut PhaseState, opts: &RunOptions) -> Result<TrainReport> {
    data.validate()?;
    if data.num_classes() > model.num_classes {
        return Err(CgfrError::config(format!(
            "{} classes in the data but the model has {}",
            data.num_classes(),
            model.num_classes
        )));
    }
    let started = Instant::now();
    let cfg = model.config.clone();
    let epochs = state.epochs_total(&cfg);
    let per_epoch = steps_per_epoch(data, cfg.batch_size) as u64;
    let mut schedule = schedule_for(&cfg, per_epoch * epochs as u64)?;
    if state.phase == Phase::Two {
        schedule = schedule.scaled(cfg.phase2_lr_scale);
    }
    let frozen_hash_before = param_hash(&model.store, "image.");
    let mut report = TrainReport {
        phase: state.phase.number(),
        epochs: Vec::new(),
        step_losses: Vec::new(),
        lr_trace: Vec::new(),
        schedule,
        frozen_hash_before,
        frozen_hash_after: String::new(),
        wall_secs: 0.0,
        checkpoint: None,
    };
    let last = opts.stop_after.map_or(epochs, |s| (state.epochs_done + s).min(epochs));
    while state.epochs_done < last {
        let epoch = state.epochs_done;
        let mut sums = [0.0; 4];
        let batches = epoch_batches(data, cfg.batch_size, cfg.seed, state.phase, epoch);
        for batch in &batches {
            let lr = schedule.lr_at(state.iteration)?;
            let s = train_step(model, state, data, batch, lr)?;
            report.lr_trace.push(lr);
            report.step_losses.push(s.total);
            for (acc, v) in sums.iter_mut().zip([s.damsm, s.cmpc, s.identity, s.total]) {
                *acc += v;
            }
            state.iteration += 1;
        }
        let n = batches.len().max(1) as f64;
        state.epochs_done += 1;
        report.epochs.push(EpochRecord {
            phase: state.phase.number(),
            epoch: state.epochs_done,
            damsm: sums[0] / n,
            cmpc: sums[1] / n,
            identity: sums[2] / n,
            total: sums[3] / n,
        });
        if let Some(dir) = &opts.checkpoint_dir {
            let path = dir.join(format!("phase{}_epoch{:03}.ckpt", state.phase.number(), state.epochs_done));
            save_checkpoint(&path, model, state)?;
            report.checkpoint = Some(path);
        }
    }
    report.frozen_hash_after = param_hash(&model.store, "image.");
    if report.frozen_hash_after != report.frozen_hash_before {
        return Err(CgfrError::input("image encoder parameters changed during training"));
    }
    report.wall_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

pub fn train_phase1(model: &mut Model, data: &TrainSet, opts: &RunOptions) -> Result<TrainReport> {
    let mut state = PhaseState::new(Phase::One, &model.config)?;
    run_phase(model, data, &mut state, opts)
}

/// Starts phase 2 from a phase-1 checkpoint: the encoders and refinement
/// heads are taken from it, fusion and identity head keep their fresh
/// initialisation.
pub fn train_phase2(model: &mut Model, data: &TrainSet, phase1: &Path, opts: &RunOptions) -> Result<TrainReport> {
    let map = checkpoint::load_map(phase1).map_err(|e| CgfrError::Load(format!("{}: {e}", phase1.display())))?;
    load_prefixes(&mut model.store, &map, &SHARED_PREFIXES)?;
    let mut state = PhaseState::new(Phase::Two, &model.config)?;
    run_phase(model, data, &mut state, opts)
}

/// Overwrites every parameter and buffer under `prefixes` from `map`,
/// requiring each to be present with the same shape.
pub fn load_prefixes(store: &mut ParamStore, map: &BTreeMap<String, Tensor>, prefixes: &[&str]) -> Result<()> {
    let wanted: Vec<(String, Vec<usize>, bool)> = store
        .named_tensors()
        .into_iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, t)| {
            let is_param = store.param(&n).is_some();
            (n, t.shape().to_vec(), is_param)
        })
        .collect();
    for (name, shape, is_param) in wanted {
        let t = map
            .get(&name)
            .ok_or_else(|| CgfrError::Load(format!("checkpoint lacks `{name}`")))?;
        if t.shape() != shape.as_slice() {
            return Err(CgfrError::Load(format!(
                "`{name}` has shape {:?} in the checkpoint but {shape:?} in the model",
                t.shape()
            )));
        }
        if is_param {
            store.param_mut(&name).expect("listed").assign(t.to_vec())?;
        } else {
            store.set_buffer(&name, t.to_vec())?;
        }
    }
    Ok(())
}

fn meta(v: f64) -> Tensor {
    Tensor::from_vec(&[1], vec![v]).expect("1-element tensor")
}

/// Model tensors, optimizer states and progress in one file, plus the run
/// config and vocabulary beside it. Written to a temporary name first.
pub fn save_checkpoint(path: &Path, model: &Model, state: &PhaseState) -> Result<()> {
    let mut tensors = model.store.named_tensors();
    tensors.extend(state.opt_text.export("opt.text"));
    tensors.extend(state.opt_proj.export("opt.proj"));
    tensors.extend(state.opt_fusion.export("opt.fusion"));
    tensors.push(("meta.phase".into(), meta(state.phase.number() as f64)));
    tensors.push(("meta.epochs_done".into(), meta(state.epochs_done as f64)));
    tensors.push(("meta.iteration".into(), meta(state.iteration as f64)));
    tensors.push(("meta.num_classes".into(), meta(model.num_classes as f64)));
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    checkpoint::save(&tmp, &tensors)?;
    std::fs::rename(&tmp, path)?;
    std::fs::write(dir.join(CONFIG_FILE), model.config.to_text())?;
    model.vocab.save(&dir.join(VOCAB_FILE))?;
    Ok(())
}

fn meta_value(map: &BTreeMap<String, Tensor>, key: &str) -> Result<f64> {
    map.get(key)
        .ok_or_else(|| CgfrError::Load(format!("checkpoint lacks `{key}`")))?
        .item()
        .map_err(CgfrError::from)
}

/// Rebuilds model and phase state from a checkpoint and the config and
/// vocabulary files beside it.
pub fn load_checkpoint(path: &Path) -> Result<(Model, PhaseState)> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let cfg = Config::load(&dir.join(CONFIG_FILE)).map_err(|e| CgfrError::Load(e.to_string()))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE)).map_err(|e| CgfrError::Load(e.to_string()))?;
    load_checkpoint_with(path, &cfg, vocab)
}

/// As [`load_checkpoint`] with an explicit config and vocabulary; shapes
/// must agree with the stored tensors.
pub fn load_checkpoint_with(path: &Path, cfg: &Config, vocab: Vocabulary) -> Result<(Model, PhaseState)> {
    let map = checkpoint::load_map(path).map_err(|e| CgfrError::Load(format!("{}: {e}", path.display())))?;
    let num_classes = meta_value(&map, "meta.num_classes")? as usize;
    let mut model = Model::new(cfg, vocab, num_classes)?;
    model
        .store
        .load_named(&map)
        .map_err(|e| CgfrError::Load(format!("{}: {e}", path.display())))?;
    let mut state = PhaseState::new(Phase::from_number(meta_value(&map, "meta.phase")? as u8)?, cfg)?;
    state.epochs_done = meta_value(&map, "meta.epochs_done")? as usize;
    state.iteration = meta_value(&map, "meta.iteration")? as u64;
    state.opt_text.import("opt.text", &map)?;
    state.opt_proj.import("opt.proj", &map)?;
    state.opt_fusion.import("opt.fusion", &map)?;
    Ok((model, state))
}
