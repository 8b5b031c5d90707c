//! Loop-based reference implementations shared by the loss tests.
#![allow(dead_code)]

use cgfr::tfrm::{DamsmConfig, EMBED_DIM};
use cgfr_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data).unwrap()
}

pub fn norm(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub struct Batch {
    pub regions: Vec<Vec<Vec<f64>>>,
    pub words: Vec<Vec<Vec<f64>>>,
    pub masks: Vec<Vec<bool>>,
    pub captions: Vec<Vec<f64>>,
    pub globals: Vec<Vec<f64>>,
}

pub fn batch(seed: u64, n: usize, r: usize, w: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Batch {
        regions: vec![],
        words: vec![],
        masks: vec![],
        captions: vec![],
        globals: vec![],
    };
    for _ in 0..n {
        b.regions.push((0..r).map(|_| rand_vec(&mut rng, EMBED_DIM)).collect());
        b.words.push((0..w).map(|_| norm(&rand_vec(&mut rng, EMBED_DIM))).collect());
        let used = rng.random_range(1..=w);
        b.masks.push((0..w).map(|i| i < used).collect());
        b.captions.push(norm(&rand_vec(&mut rng, EMBED_DIM)));
        b.globals.push(rand_vec(&mut rng, EMBED_DIM));
    }
    b
}

pub fn tensors(b: &Batch) -> (Tensor, Tensor, Tensor, Tensor) {
    let n = b.regions.len();
    let r = b.regions[0].len();
    let w = b.words[0].len();
    let flat3 = |x: &Vec<Vec<Vec<f64>>>| x.iter().flatten().flatten().cloned().collect::<Vec<_>>();
    let flat2 = |x: &Vec<Vec<f64>>| x.iter().flatten().cloned().collect::<Vec<_>>();
    (
        t(&[n, r, EMBED_DIM], flat3(&b.regions)),
        t(&[n, w, EMBED_DIM], flat3(&b.words)),
        t(&[n, EMBED_DIM], flat2(&b.captions)),
        t(&[n, EMBED_DIM], flat2(&b.globals)),
    )
}

/// Word-level score of image `i` against caption `j`, straight from the
/// definition with loops.
pub fn oracle_word_score(b: &Batch, i: usize, j: usize, g: &DamsmConfig) -> f64 {
    let regions = &b.regions[i];
    let real: Vec<usize> = (0..b.words[j].len()).filter(|&k| b.masks[j][k]).collect();
    // per region: softmax over real words of the dot products
    let mut s_bar = vec![vec![0.0; regions.len()]; real.len()];
    for (ri, reg) in regions.iter().enumerate() {
        let col: Vec<f64> = real.iter().map(|&k| dot(&b.words[j][k], reg)).collect();
        for (wi, p) in softmax(&col).into_iter().enumerate() {
            s_bar[wi][ri] = p;
        }
    }
    let mut acc = 0.0;
    for (wi, &k) in real.iter().enumerate() {
        let alpha = softmax(&s_bar[wi].iter().map(|v| g.gamma1 * v).collect::<Vec<_>>());
        let mut ctx = vec![0.0; EMBED_DIM];
        for (a, reg) in alpha.iter().zip(regions) {
            for d in 0..EMBED_DIM {
                ctx[d] += a * reg[d];
            }
        }
        let rel = dot(&norm(&ctx), &norm(&b.words[j][k]));
        acc += (g.gamma2 * rel).exp();
    }
    acc.ln() / g.gamma2
}

pub fn oracle_posterior(s: &[Vec<f64>], gamma: f64) -> f64 {
    let n = s.len();
    let mut loss = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| gamma * s[i][j]).collect();
        let col: Vec<f64> = (0..n).map(|j| gamma * s[j][i]).collect();
        loss -= softmax(&row)[i].ln() / n as f64;
        loss -= softmax(&col)[i].ln() / n as f64;
    }
    loss
}

pub fn oracle_damsm(b: &Batch, g: &DamsmConfig) -> f64 {
    let n = b.regions.len();
    let word: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| oracle_word_score(b, i, j, g)).collect()).collect();
    let cap: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(&norm(&b.globals[i]), &norm(&b.captions[j]))).collect())
        .collect();
    oracle_posterior(&word, g.gamma3) + oracle_posterior(&cap, g.gamma3)
}

pub fn oracle_cmpc(v: &[Vec<f64>], c: &[Vec<f64>], labels: &[usize], w: &[Vec<f64>]) -> (f64, f64) {
    let wn: Vec<Vec<f64>> = w.iter().map(|r| norm(r)).collect();
    let ce = |x: &[f64], y: usize| -> f64 {
        let logits: Vec<f64> = wn.iter().map(|r| dot(r, x)).collect();
        -softmax(&logits)[y].ln()
    };
    let (mut ipt, mut tpi) = (0.0, 0.0);
    for i in 0..v.len() {
        let cb = norm(&c[i]);
        let vb = norm(&v[i]);
        let vh: Vec<f64> = cb.iter().map(|x| dot(&v[i], &cb) * x).collect();
        let ch: Vec<f64> = vb.iter().map(|x| dot(&c[i], &vb) * x).collect();
        ipt += ce(&vh, labels[i]);
        tpi += ce(&ch, labels[i]);
    }
    (ipt / v.len() as f64, tpi / v.len() as f64)
}
