//! Built-in oracle checks: finite-difference gradients, loss closed forms,
//! metric identities and format round trips.

use cgfr_tensor::gradcheck::{check_param_gradients, GradCheckConfig, GradCheckReport};
use cgfr_tensor::suite::op_gradient_suite;
use cgfr_tensor::{checkpoint, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::datagen::{caption_vocabulary, generate_captions, generate_identity};
use crate::encoders::{GLOBAL_DIM, LOCAL_SHAPE};
use crate::error::Result;
use crate::metrics::{self, IdentificationTrial, ScoreSet};
use crate::model::Model;
use crate::nn::{BnUpdates, Mode};
use crate::tfrm::{self, DamsmConfig, EMBED_DIM};

/// Bound on the finite-difference relative error.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// A small but complete model: narrow text encoder, full fusion variant.
pub fn small_model(seed: u64, num_classes: usize) -> Result<Model> {
    let cfg = Config {
        seed,
        text_dim: 16,
        text_layers: 1,
        text_heads: 2,
        text_ffn_mult: 2,
        ..Config::default()
    };
    Model::new(&cfg, caption_vocabulary(), num_classes)
}

/// Finite-difference check of the summed identity, alignment and
/// projection-classification losses through text encoder, refinement and
/// fusion, in training mode, with `coords` sampled coordinates per tensor.
pub fn stack_gradient_check(seed: u64, coords: usize) -> Result<GradCheckReport> {
    const N: usize = 3;
    let mut model = small_model(seed, N)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut ls = vec![N];
    ls.extend_from_slice(&LOCAL_SHAPE);
    let local = uniform(&mut rng, &ls, 0.0, 1.0);
    let global = uniform(&mut rng, &[N, GLOBAL_DIM], 0.0, 1.0);
    let captions: Vec<String> = (0..N)
        .map(|i| Ok(generate_captions(&generate_identity(seed, i), &mut rng, 1, 5, 8)?.remove(0)))
        .collect::<Result<_>>()?;
    let caps: Vec<&str> = captions.iter().map(String::as_str).collect();
    let seqs = model.tokenize(&caps)?;
    let labels: Vec<usize> = (0..N).collect();
    let names: Vec<String> = model
        .store
        .params()
        .filter(|p| !p.frozen())
        .map(|p| p.name.clone())
        .collect();
    let net = model.clone();
    let loss = |store: &cgfr_tensor::ParamStore| -> cgfr_tensor::Result<Tensor> {
        let run = || -> Result<Tensor> {
            let mut sink = BnUpdates::new();
            let text = net.text_side(store, &seqs, Mode::Train, &mut sink)?;
            let tl = net.tfrm_losses(store, &text, &local, &global, &labels)?;
            let fused = net.fuse(store, &text, &local, &global, Mode::Train, &mut sink)?;
            let id = net.identity_loss(store, &fused.embedding, &labels)?;
            Ok(id.add(&tl.objective)?)
        };
        run().map_err(|e| cgfr_tensor::TensorError::Contract(e.to_string()))
    };
    let cfg = GradCheckConfig {
        eps: 1e-3,
        max_coords: Some(coords),
        seed,
    };
    Ok(check_param_gradients(&mut model.store, &names, loss, &cfg)?)
}

fn closed_forms() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = DamsmConfig::default();
    let unit = |t: Tensor| t.l2_normalize(1e-12).expect("rank >= 1");
    let region = uniform(&mut rng, &[1, 6, EMBED_DIM], -1.0, 1.0);
    let words = unit(uniform(&mut rng, &[1, 4, EMBED_DIM], -1.0, 1.0));
    let cap = unit(uniform(&mut rng, &[1, EMBED_DIM], -1.0, 1.0));
    let vglob = uniform(&mut rng, &[1, EMBED_DIM], -1.0, 1.0);
    let mask = vec![vec![true, true, true, false]];
    let one = tfrm::damsm_loss(&region, &words, &mask, &cap, &vglob, &cfg)?.loss.item()?;

    let dup = |t: &Tensor| Tensor::concat(&[t.clone(), t.clone()], 0).expect("same shape");
    let mask2 = vec![mask[0].clone(), mask[0].clone()];
    let two = tfrm::damsm_loss(&dup(&region), &dup(&words), &mask2, &dup(&cap), &dup(&vglob), &cfg)?
        .loss
        .item()?;

    let mut a = vec![0.0; EMBED_DIM];
    let mut b = vec![0.0; EMBED_DIM];
    a[0] = 2.0;
    b[1] = 1.5;
    let v = Tensor::from_vec(&[1, EMBED_DIM], a)?;
    let c = Tensor::from_vec(&[1, EMBED_DIM], b)?;
    let w = uniform(&mut rng, &[7, EMBED_DIM], -1.0, 1.0);
    let ortho = tfrm::cmpc_loss(&v, &c, &[3], &w)?;
    let ln7 = 7f64.ln();
    Ok(vec![
        check("damsm single pair is zero", one == 0.0, format!("{one}")),
        check(
            "damsm duplicated pair is 4 ln 2",
            (two - 4.0 * 2f64.ln()).abs() <= 1e-10,
            format!("{two}"),
        ),
        check(
            "cmpc orthogonal inputs give ln C",
            (ortho.ipt.item()? - ln7).abs() <= 1e-10 && (ortho.tpi.item()? - ln7).abs() <= 1e-10,
            format!("{} {}", ortho.ipt.item()?, ortho.tpi.item()?),
        ),
    ])
}

fn metric_identities() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst_auc: f64 = 0.0;
    let mut rank_ok = true;
    for _ in 0..10 {
        let scores = ScoreSet {
            genuine: (0..80).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0 + 0.1).collect(),
            impostor: (0..120).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect(),
        };
        let mut wins = 0.0;
        for g in &scores.genuine {
            for i in &scores.impostor {
                wins += if g > i { 1.0 } else if g == i { 0.5 } else { 0.0 };
            }
        }
        let mw = wins / (scores.genuine.len() * scores.impostor.len()) as f64;
        worst_auc = worst_auc.max((metrics::auc(&metrics::roc(&scores)?) - mw).abs());

        let dim = 4;
        let gallery: Vec<(usize, Vec<f64>)> = (0..6)
            .map(|id| (id, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let probes: Vec<(usize, Vec<f64>)> = (0..10)
            .map(|_| (rng.random_range(0..6), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let trial = IdentificationTrial { gallery, probes };
        let mut hits = 0;
        for (pid, pe) in &trial.probes {
            let best = trial
                .gallery
                .iter()
                .map(|(gid, ge)| (metrics::cosine_score(pe, ge).expect("nonzero"), *gid))
                .fold((f64::NEG_INFINITY, usize::MAX), |acc, x| if x.0 > acc.0 { x } else { acc });
            hits += usize::from(best.1 == *pid);
        }
        rank_ok &= metrics::rank_k(&trial, 1)? == hits as f64 / trial.probes.len() as f64;
    }
    Ok(vec![
        check("auc equals the Mann-Whitney statistic", worst_auc <= 1e-12, format!("max diff {worst_auc:e}")),
        check("rank-1 equals the arg-max hit rate", rank_ok, String::new()),
    ])
}

fn round_trips() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let tensors = vec![
        ("a".to_string(), uniform(&mut rng, &[2, 3], -1.0, 1.0)),
        ("b.c".to_string(), uniform(&mut rng, &[4], -1e9, 1e9)),
    ];
    let bytes = checkpoint::encode(&tensors)?;
    let again = checkpoint::encode(&checkpoint::decode(&bytes)?)?;
    let scores = ScoreSet {
        genuine: vec![0.1, 1.0 / 3.0],
        impostor: vec![-0.2, 1e-17],
    };
    let back = metrics::scores_from_text(&metrics::scores_to_text(&scores))?;
    Ok(vec![
        check("checkpoint bytes survive decode and encode", bytes == again, String::new()),
        check("score file round trip", back == scores, String::new()),
    ])
}

/// Runs every check; failures are reported, not raised.
pub fn run() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut worst = GradCheckReport::default();
    for (_, r) in op_gradient_suite(0)? {
        if r.max_rel_err >= worst.max_rel_err {
            worst = r;
        }
    }
    out.push(check(
        "op gradients match finite differences",
        worst.max_rel_err < GRAD_TOL,
        format!("max rel err {:e}", worst.max_rel_err),
    ));
    let stack = stack_gradient_check(0, 2)?;
    out.push(check(
        "model gradients match finite differences",
        stack.max_rel_err < GRAD_TOL,
        format!("max rel err {:e} over {} coords", stack.max_rel_err, stack.checked),
    ));
    out.extend(closed_forms()?);
    out.extend(metric_identities()?);
    out.extend(round_trips()?);
    Ok(out)
}
