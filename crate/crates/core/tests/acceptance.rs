//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. `CGFR_ACCEPT=1,3,4` restricts the run to the listed criteria.

use std::error::Error;
use std::path::Path;
use std::time::Instant;

use cgfr::cfam::{CfamVariant, FUSED_DIM, LINEAR_FUSION_DIM, WORD_CTX_DIM};
use cgfr::datagen::io::{manifest_hash, read_dataset, write_dataset};
use cgfr::datagen::{build_dataset, caption_vocabulary, generate_captions, generate_identity, worker_threads, DataConfig};
use cgfr::encoders::{GLOBAL_DIM, LOCAL_SHAPE, SEQ_LEN};
use cgfr::metrics::{
    auc, cosine_score, eer, rank_k, roc, roc_from_text, roc_to_text, scores_from_text, scores_to_text, tpr_at_fpr,
    IdentificationTrial, MetricsSummary, ScoreSet,
};
use cgfr::model::Model;
use cgfr::nn::{self, BnUpdates, Mode};
use cgfr::pipeline::{self, AblationRow, Prepared};
use cgfr::selftest::{stack_gradient_check, GRAD_TOL};
use cgfr::tfrm::{self, DamsmConfig, EMBED_DIM};
use cgfr::trainer::{
    load_checkpoint, param_hash, save_checkpoint, schedule_for, train_phase1, train_phase2, RunOptions, TrainReport,
};
use cgfr::Config;
use cgfr_tensor::suite::op_gradient_suite;
use cgfr_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

mod common;
use common::*;

type Res<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

struct Outcome {
    passed: bool,
    detail: String,
}

/// Collects named sub-checks; the criterion passes when all do.
#[derive(Default)]
struct Checks(Vec<(String, bool)>);

impl Checks {
    fn add(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push((name.into(), ok));
    }

    fn outcome(self, extra: String) -> Outcome {
        let failed: Vec<&str> = self.0.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        let mut detail = format!("{}/{} checks", self.0.len() - failed.len(), self.0.len());
        if !failed.is_empty() {
            detail += &format!(", failed: {}", failed.join(", "));
        }
        if !extra.is_empty() {
            detail += &format!("; {extra}");
        }
        Outcome {
            passed: failed.is_empty(),
            detail,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    t(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
}

fn gradients() -> Res<Outcome> {
    let start = Instant::now();
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for seed in 0..5 {
        for (_, r) in op_gradient_suite(seed)? {
            worst = worst.max(r.max_rel_err);
            checked += r.checked;
        }
        let s = stack_gradient_check(seed, 2)?;
        worst = worst.max(s.max_rel_err);
        checked += s.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        passed: worst < GRAD_TOL && secs < 120.0,
        detail: format!("5 seeds, {checked} coordinates, max rel err {worst:.2e} (< {GRAD_TOL:e}), {secs:.1} s (< 120 s)"),
    })
}

fn model(variant: CfamVariant) -> Res<Model> {
    let cfg = Config {
        variant,
        ..Config::desk()
    };
    Ok(Model::new(&cfg, caption_vocabulary(), 3)?)
}

fn shapes() -> Res<Outcome> {
    const N: usize = 2;
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let caps: Vec<String> = (0..N)
        .map(|i| generate_captions(&generate_identity(2, i), &mut rng, 1, 5, 8).map(|mut v| v.remove(0)))
        .collect::<Result<_, _>>()?;
    let caps: Vec<&str> = caps.iter().map(String::as_str).collect();
    let mut ls = vec![N];
    ls.extend_from_slice(&LOCAL_SHAPE);
    let local = uniform(&mut rng, &ls);
    let global = uniform(&mut rng, &[N, GLOBAL_DIM]);

    let full = model(CfamVariant::Full)?;
    let seqs = full.tokenize(&caps)?;
    c.add("token length 21", SEQ_LEN == 21 && seqs.iter().all(|s| s.ids.len() == 21 && s.attention_mask.len() == 21));
    let mut up = BnUpdates::new();
    let text = full.text_side(&full.store, &seqs, Mode::Eval, &mut up)?;
    c.add("words (L-1) x 64", text.words.shape() == [N, SEQ_LEN - 1, EMBED_DIM]);
    c.add("caption 64", text.caption.shape() == [N, EMBED_DIM]);

    let lin = model(CfamVariant::LinearOnly)?;
    let ltext = lin.text_side(&lin.store, &seqs, Mode::Eval, &mut up)?;
    let fused = lin.fuse(&lin.store, &ltext, &local, &global, Mode::Eval, &mut up)?;
    let w = lin.store.get("cfam.lin.w")?;
    c.add("linear fusion 576", LINEAR_FUSION_DIM == 576 && w.shape() == [576, FUSED_DIM] && fused.embedding.shape() == [N, FUSED_DIM]);

    let cf = full.cfam()?;
    let conv = nn::conv(&full.store, "cfam.word.conv", &local, (2, 2), (1, 1))?;
    c.add("conv 64x16x16", conv.shape() == [N, 64, 16, 16]);
    c.add("pool 64x8x8", conv.maxpool2d(2, 2)?.shape() == [N, 64, 8, 8]);
    let (ctx, attn) = cf.word_level_cm(&full.store, &text.words, &local, Mode::Eval, &mut up)?;
    c.add("word context 1024", WORD_CTX_DIM == 1024 && ctx.shape() == [N, 1024]);
    let stochastic = attn.iter().all(|a| {
        let side = *a.shape().last().unwrap();
        a.data().chunks(side).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9)
    });
    c.add("attention rows sum to one", stochastic && !attn.is_empty());
    let cap = cf.caption_level_cm(&full.store, &text.caption, &global)?;
    c.add("caption context 64", cap.out.shape() == [N, 64]);
    c.add("4 heads over 8 tokens", cap.weights.shape() == [N, 4, 1, 8]);
    let out = full.fuse(&full.store, &text, &local, &global, Mode::Eval, &mut up)?;
    c.add("fused 768", FUSED_DIM == 768 && out.embedding.shape() == [N, 768]);
    for v in [CfamVariant::WordOnly, CfamVariant::WordNoNorm, CfamVariant::WordNoSelfAttn, CfamVariant::WordPlusCaption] {
        let m = model(v)?;
        let tx = m.text_side(&m.store, &seqs, Mode::Eval, &mut up)?;
        let e = m.fuse(&m.store, &tx, &local, &global, Mode::Eval, &mut up)?.embedding;
        c.add(format!("{v} output"), e.shape() == [N, v.output_dim()]);
    }
    Ok(c.outcome(String::new()))
}

fn closed_forms() -> Res<Outcome> {
    let mut c = Checks::default();
    let g = DamsmConfig::default();
    let damsm = |b: &Batch| -> Res<f64> {
        let (reg, wrd, cap, glob) = tensors(b);
        Ok(tfrm::damsm_loss(&reg, &wrd, &b.masks, &cap, &glob, &g)?.loss.item()?)
    };
    c.add("single pair alignment 0", damsm(&batch(1, 1, 196, 20))? == 0.0);
    let mut b = batch(2, 1, 196, 20);
    b.regions.push(b.regions[0].clone());
    b.words.push(b.words[0].clone());
    b.masks.push(b.masks[0].clone());
    b.captions.push(b.captions[0].clone());
    b.globals.push(b.globals[0].clone());
    c.add("duplicate pair 4 ln 2", (damsm(&b)? - 4.0 * 2f64.ln()).abs() <= 1e-10);

    let classes = 7;
    let mut v = vec![0.0; EMBED_DIM];
    let mut w = vec![0.0; EMBED_DIM];
    v[3] = 0.7;
    w[40] = -2.0;
    let out = tfrm::cmpc_loss(&t(&[1, EMBED_DIM], v), &t(&[1, EMBED_DIM], w), &[4], &Tensor::ones(&[classes, EMBED_DIM]))?;
    let ln_c = (classes as f64).ln();
    c.add(
        "orthogonal classification ln C",
        (out.ipt.item()? - ln_c).abs() <= 1e-10 && (out.tpi.item()? - ln_c).abs() <= 1e-10,
    );

    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = Config::default();
    for seed in 0..5 {
        let b = batch(seed, 4, 196, 20);
        let d = damsm(&b)?;
        let d_want = oracle_damsm(&b, &g);
        let (n, classes) = (4, 6);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng, EMBED_DIM)).collect();
        let cs: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng, EMBED_DIM)).collect();
        let ws: Vec<Vec<f64>> = (0..classes).map(|_| rand_vec(&mut rng, EMBED_DIM)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let flat = |x: &Vec<Vec<f64>>| x.iter().flatten().cloned().collect::<Vec<_>>();
        let cm = tfrm::cmpc_loss(
            &t(&[n, EMBED_DIM], flat(&vs)),
            &t(&[n, EMBED_DIM], flat(&cs)),
            &labels,
            &t(&[classes, EMBED_DIM], flat(&ws)),
        )?;
        let (ipt, tpi) = oracle_cmpc(&vs, &cs, &labels, &ws);
        let obj = tfrm::tfrm_objective(&Tensor::scalar(d), &cm.total, cfg.lambda1, cfg.lambda2)?.item()?;
        let obj_want = cfg.lambda1 * d_want + cfg.lambda2 * (ipt + tpi);
        for err in [d - d_want, cm.ipt.item()? - ipt, cm.tpi.item()? - tpi, obj - obj_want] {
            worst = worst.max(err.abs());
        }
    }
    c.add("random instances match the loop oracles", worst <= 1e-10);
    Ok(c.outcome(format!("max oracle deviation {worst:.1e}")))
}

fn mann_whitney(s: &ScoreSet) -> f64 {
    let mut wins = 0.0;
    for g in &s.genuine {
        for i in &s.impostor {
            wins += if g > i { 1.0 } else if g == i { 0.5 } else { 0.0 };
        }
    }
    wins / (s.genuine.len() * s.impostor.len()) as f64
}

/// Sorted copies for counting by binary search.
fn rates(genuine: &[f64], impostor: &[f64], t: f64) -> (f64, f64) {
    let far = (impostor.len() - impostor.partition_point(|&v| v < t)) as f64 / impostor.len() as f64;
    let frr = genuine.partition_point(|&v| v < t) as f64 / genuine.len() as f64;
    (far, frr)
}

fn metrics_check() -> Res<Outcome> {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut auc_err, mut eer_ok, mut tpr_ok) = (0.0f64, true, true);
    for set in 0..30 {
        let ng = rng.random_range(60..120);
        // coarse scores for the tie-sensitive checks, continuous ones for the sweep
        let coarse = set % 2 == 0;
        let q = |v: f64| if coarse { (v * 50.0).round() / 50.0 } else { v };
        let s = ScoreSet {
            genuine: (0..ng).map(|_| q(rng.random_range(0.15..1.15))).collect(),
            impostor: (0..200 - ng).map(|_| q(rng.random_range(0.0..1.0))).collect(),
        };
        let curve = roc(&s)?;
        auc_err = auc_err.max((auc(&curve) - mann_whitney(&s)).abs());

        let mut g = s.genuine.clone();
        let mut im = s.impostor.clone();
        g.sort_by(f64::total_cmp);
        im.sort_by(f64::total_cmp);
        if !coarse {
            const STEPS: usize = 100_000;
            let (lo, hi) = (-0.1, 1.3);
            let cell = (hi - lo) / STEPS as f64;
            let at = |k: usize| rates(&g, &im, lo + k as f64 * cell);
            let k = (0..=STEPS).find(|&k| at(k).0 <= at(k).1).ok_or("no crossing on the grid")?;
            let (a, b) = (at(k - 1), at(k));
            let e = eer(&s)?;
            eer_ok &= e >= a.1.min(b.0) - 1e-12 && e <= a.0.max(b.1) + 1e-12;
        }

        let mut cands: Vec<f64> = g.iter().chain(&im).copied().collect();
        cands.extend([f64::INFINITY, f64::NEG_INFINITY]);
        for target in [0.0, 1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0] {
            let want = cands
                .iter()
                .filter(|&&t| rates(&g, &im, t).0 <= target)
                .map(|&t| (g.len() - g.partition_point(|&v| v < t)) as f64 / g.len() as f64)
                .fold(0.0, f64::max);
            tpr_ok &= tpr_at_fpr(&curve, target)? == want;
        }
    }
    c.add("auc equals Mann-Whitney", auc_err <= 1e-12);
    c.add("eer within one grid cell", eer_ok);
    c.add("tpr at fpr exact", tpr_ok);

    let mut rank_ok = true;
    for _ in 0..30 {
        let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..3).map(|_| rng.random_range(-2..=2) as f64 + 0.5).collect() };
        let trial = IdentificationTrial {
            gallery: (0..12).map(|id| (id, v(&mut rng))).collect(),
            probes: (0..40).map(|_| (rng.random_range(0..12), v(&mut rng))).collect(),
        };
        for k in [1, 5, 12] {
            let mut hits = 0;
            for (pid, pe) in &trial.probes {
                let mut order: Vec<(f64, usize, usize)> = trial
                    .gallery
                    .iter()
                    .enumerate()
                    .map(|(j, (gid, ge))| (cosine_score(pe, ge).unwrap(), j, *gid))
                    .collect();
                order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                hits += usize::from(order.iter().take(k).any(|o| o.2 == *pid));
            }
            rank_ok &= rank_k(&trial, k)? == hits as f64 / trial.probes.len() as f64;
        }
    }
    c.add("rank-k exact", rank_ok);
    let secs = start.elapsed().as_secs_f64();
    c.add("under 30 s", secs < 30.0);
    Ok(c.outcome(format!("30 sets of 200, max auc deviation {auc_err:.1e}, {secs:.1} s")))
}

const ABLATION: [CfamVariant; 5] = [
    CfamVariant::Full,
    CfamVariant::WordPlusCaption,
    CfamVariant::LinearOnly,
    CfamVariant::WordOnly,
    CfamVariant::WordNoNorm,
];

struct SeedRun {
    seed: u64,
    baseline: MetricsSummary,
    rows: Vec<AblationRow>,
}

impl SeedRun {
    fn get(&self, v: CfamVariant) -> &MetricsSummary {
        &self.rows.iter().find(|r| r.variant == v).expect("variant was trained").metrics
    }
}

fn desk_run(seed: u64) -> Res<SeedRun> {
    let cfg = Config {
        seed,
        ..Config::desk()
    };
    let p: Prepared = pipeline::prepare_generated(&cfg)?;
    let baseline = pipeline::evaluate(&p, &pipeline::embed_baseline(&p), &cfg)?;
    let dir = tempfile::tempdir()?;
    let (_, r1) = pipeline::run_phase1(&p, &cfg, dir.path())?;
    let ck = r1.checkpoint.clone().ok_or("phase 1 wrote no checkpoint")?;
    let rows = pipeline::run_ablation(&p, &cfg, &ck, &ABLATION)?;
    Ok(SeedRun { seed, baseline, rows })
}

fn desk_runs() -> Res<(Vec<SeedRun>, f64, usize)> {
    let start = Instant::now();
    let threads = worker_threads().min(3);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let runs = pool.install(|| [0u64, 1, 2].par_iter().map(|&s| desk_run(s)).collect::<Res<Vec<_>>>())?;
    Ok((runs, start.elapsed().as_secs_f64(), threads))
}

fn fused_beats_baseline(runs: &[SeedRun], secs: f64, threads: usize) -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for r in runs {
        let (b, f) = (&r.baseline, r.get(CfamVariant::Full));
        let win = f.rank1 > b.rank1 && f.auc > b.auc && f.eer < b.eer;
        wins += usize::from(win);
        rows.push(format!(
            "seed {}: rank1 {:.4}/{:.4} auc {:.4}/{:.4} eer {:.4}/{:.4}",
            r.seed, f.rank1, b.rank1, f.auc, b.auc, f.eer, b.eer
        ));
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let timing = if cores >= 4 {
        format!("{secs:.0} s (< 1800 s)")
    } else {
        format!("{secs:.0} s on {cores} core(s), the 1800 s budget assumes 4 and is not enforced")
    };
    Outcome {
        passed: wins >= 2 && (cores < 4 || secs < 1800.0),
        detail: format!(
            "fused beats baseline in {wins}/3 seeds (fused/baseline) [{}]; {threads} worker(s), {timing}",
            rows.join("; ")
        ),
    }
}

fn ablation_orderings(runs: &[SeedRun]) -> Outcome {
    let (mut chain, mut norm) = (0, 0);
    let mut rows = Vec::new();
    for r in runs {
        let a = |v| r.get(v).auc;
        let (f, wc, l) = (a(CfamVariant::Full), a(CfamVariant::WordPlusCaption), a(CfamVariant::LinearOnly));
        let (wo, wn) = (a(CfamVariant::WordOnly), a(CfamVariant::WordNoNorm));
        chain += usize::from(f >= wc && wc >= l);
        norm += usize::from(wn < wo);
        rows.push(format!(
            "seed {}: full {f:.4} word_plus_caption {wc:.4} linear_only {l:.4} word_only {wo:.4} word_no_norm {wn:.4}",
            r.seed
        ));
    }
    Outcome {
        passed: chain >= 2 && norm >= 2,
        detail: format!(
            "auc chain holds in {chain}/3, normalisation helps in {norm}/3 [{}]",
            rows.join("; ")
        ),
    }
}

fn tiny(seed: u64) -> Config {
    Config {
        seed,
        n_identities: 5,
        images_per_identity: 5,
        captions_per_image: 3,
        text_dim: 16,
        text_layers: 1,
        text_heads: 2,
        text_ffn_mult: 2,
        batch_size: 4,
        phase1_epochs: 2,
        phase2_epochs: 2,
        n_genuine: 8,
        n_impostor: 20,
        ..Config::default()
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Both phases on the tiny config: reports plus final parameter hash.
fn two_phases(cfg: &Config, p: &Prepared, dir: &Path) -> Res<(TrainReport, TrainReport, String, String)> {
    let opts = RunOptions {
        checkpoint_dir: Some(dir.to_path_buf()),
        stop_after: None,
    };
    let mut m1 = Model::new(cfg, caption_vocabulary(), p.num_classes())?;
    let frozen = param_hash(&m1.store, "image.");
    let r1 = train_phase1(&mut m1, &p.train, &opts)?;
    let ck = r1.checkpoint.clone().ok_or("phase 1 wrote no checkpoint")?;
    let mut m2 = Model::new(cfg, caption_vocabulary(), p.num_classes())?;
    let r2 = train_phase2(&mut m2, &p.train, &ck, &RunOptions { checkpoint_dir: None, stop_after: None })?;
    Ok((r1, r2, param_hash(&m2.store, ""), frozen))
}

fn training_contract() -> Res<Outcome> {
    let mut c = Checks::default();
    let cfg = Config::default();
    let s = schedule_for(&cfg, 20_000)?;
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    c.add(
        "lr anchors",
        s.warmup_iters == 2000 && near(s.lr_at(0)?, 1e-5) && near(s.lr_at(2000)?, 1e-4) && near(s.lr_at(20_000)?, 1e-5),
    );

    let cfg = tiny(11);
    let p = pipeline::prepare_generated(&cfg)?;
    let (da, db) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let a = two_phases(&cfg, &p, da.path())?;
    let b = two_phases(&cfg, &p, db.path())?;
    let frozen = &a.3;
    c.add(
        "frozen encoder bit-identical across both phases",
        [&a.0, &a.1].iter().all(|r| &r.frozen_hash_before == frozen && &r.frozen_hash_after == frozen),
    );
    c.add(
        "phase 1 trajectory bit-identical",
        bits(&a.0.step_losses) == bits(&b.0.step_losses) && bits(&a.0.lr_trace) == bits(&b.0.lr_trace),
    );
    c.add("phase 2 trajectory bit-identical", bits(&a.1.step_losses) == bits(&b.1.step_losses));
    c.add("final parameters bit-identical", a.2 == b.2);
    Ok(c.outcome(format!("{} + {} steps", a.0.step_losses.len(), a.1.step_losses.len())))
}

fn round_trips() -> Res<Outcome> {
    let mut c = Checks::default();
    let dir = tempfile::tempdir()?;

    let cfg = tiny(12);
    let p = pipeline::prepare_generated(&cfg)?;
    let mut m = Model::new(&cfg, caption_vocabulary(), p.num_classes())?;
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after: Some(1),
    };
    let ck = train_phase1(&mut m, &p.train, &opts)?.checkpoint.ok_or("no checkpoint")?;
    let (model, state) = load_checkpoint(&ck)?;
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &model, &state)?;
    c.add("checkpoint save-load-save byte-identical", std::fs::read(&ck)? == std::fs::read(&again)?);

    let mut dc = DataConfig::from_config(&cfg);
    dc.n_identities = 6;
    let ds = build_dataset(&dc, 12)?;
    let data_dir = dir.path().join("data");
    let hash = write_dataset(&ds, &data_dir)?;
    let back = read_dataset(&data_dir)?;
    let same = back.len() == ds.len()
        && back
            .samples
            .iter()
            .zip(&ds.samples)
            .all(|(x, y)| (x.identity, &x.image, &x.captions) == (y.identity, &y.image, &y.captions));
    c.add("manifest and images lossless", same && manifest_hash(&back)? == hash);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut awkward = || rng.random_range(-1.0..1.0) / 3.0 * 10f64.powi(rng.random_range(-20..20));
    let scores = ScoreSet {
        genuine: (0..50).map(|_| awkward()).collect(),
        impostor: (0..80).map(|_| awkward()).collect(),
    };
    c.add("score file lossless", scores_from_text(&scores_to_text(&scores))? == scores);
    let curve = roc(&scores)?;
    c.add("roc file lossless", roc_from_text(&roc_to_text(&curve))? == curve);
    Ok(c.outcome(String::new()))
}

fn report(n: usize, name: &str, r: Res<Outcome>) -> bool {
    let o = r.unwrap_or_else(|e| Outcome {
        passed: false,
        detail: format!("error: {e}"),
    });
    println!("{} {n} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    o.passed
}

fn main() {
    let selected: Option<Vec<usize>> =
        std::env::var("CGFR_ACCEPT").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |n: usize| selected.as_ref().is_none_or(|s| s.contains(&n));
    let mut ok = true;
    if want(1) {
        ok &= report(1, "gradients", gradients());
    }
    if want(2) {
        ok &= report(2, "shapes", shapes());
    }
    if want(3) {
        ok &= report(3, "loss closed forms", closed_forms());
    }
    if want(4) {
        ok &= report(4, "metrics", metrics_check());
    }
    if want(5) || want(6) {
        match desk_runs() {
            Ok((runs, secs, threads)) => {
                if want(5) {
                    ok &= report(5, "fused beats baseline", Ok(fused_beats_baseline(&runs, secs, threads)));
                }
                if want(6) {
                    ok &= report(6, "ablation orderings", Ok(ablation_orderings(&runs)));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                if want(5) {
                    ok &= report(5, "fused beats baseline", Err(msg.clone().into()));
                }
                if want(6) {
                    ok &= report(6, "ablation orderings", Err(msg.into()));
                }
            }
        }
    }
    if want(7) {
        ok &= report(7, "training contract", training_contract());
    }
    if want(8) {
        ok &= report(8, "round trips", round_trips());
    }
    if !ok {
        std::process::exit(1);
    }
}
