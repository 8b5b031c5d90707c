//! Verification (ROC, AUC, EER, TPR@FPR) and closed-set identification
//! (rank-k) metrics, pair sampling, and score/ROC text formats.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CgfrError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

pub type RocCurve = Vec<RocPoint>;

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(CgfrError::input(format!(
                "score set needs genuine and impostor scores, got {} and {}",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        if self.genuine.iter().chain(&self.impostor).any(|s| !s.is_finite()) {
            return Err(CgfrError::input("non-finite score"));
        }
        Ok(())
    }
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CgfrError::input(format!("embedding lengths {} and {} differ", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CgfrError::input("cosine of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Number of values in ascending `sorted` that are `>= t`.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < t)
}

/// Sweep over `+inf`, every distinct observed score in descending order,
/// then `-inf`. A score `>= threshold` is accepted.
pub fn roc(scores: &ScoreSet) -> Result<RocCurve> {
    scores.validate()?;
    let mut g = scores.genuine.clone();
    let mut i = scores.impostor.clone();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (ng, ni) = (g.len() as f64, i.len() as f64);
    let mut curve = Vec::with_capacity(thresholds.len() + 2);
    curve.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    for t in thresholds {
        curve.push(RocPoint {
            fpr: count_at_least(&i, t) as f64 / ni,
            tpr: count_at_least(&g, t) as f64 / ng,
            threshold: t,
        });
    }
    curve.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    Ok(curve)
}

/// Trapezoidal area under the curve over fpr.
pub fn auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Equal error rate by linear interpolation at the first sign change of
/// `fpr - fnr` along the sweep.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let curve = roc(scores)?;
    let d = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    let k = curve.iter().position(|p| d(p) >= 0.0).expect("the -inf sentinel has fpr - fnr = 1");
    let b = &curve[k];
    if d(b) == 0.0 || k == 0 {
        return Ok(b.fpr);
    }
    let a = &curve[k - 1];
    let t = -d(a) / (d(b) - d(a));
    Ok(a.fpr + t * (b.fpr - a.fpr))
}

/// Largest tpr among curve points with `fpr <= target` (step convention).
pub fn tpr_at_fpr(curve: &[RocPoint], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(CgfrError::input(format!("target fpr {target} outside [0, 1]")));
    }
    Ok(curve
        .iter()
        .filter(|p| p.fpr <= target)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

/// Closed-set identification trial: unique gallery identities, every probe
/// identity enrolled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdentificationTrial {
    pub gallery: Vec<(usize, Vec<f64>)>,
    pub probes: Vec<(usize, Vec<f64>)>,
}

/// Fraction of probes whose gallery mate is among the `k` best cosine
/// scores; ties are broken towards the lower gallery index.
pub fn rank_k(trial: &IdentificationTrial, k: usize) -> Result<f64> {
    Ok(rank_k_curve(trial, k)?[k - 1])
}

/// Rank-1 through rank-`max_k` identification rates (the CMC curve).
pub fn rank_k_curve(trial: &IdentificationTrial, max_k: usize) -> Result<Vec<f64>> {
    if max_k == 0 {
        return Err(CgfrError::input("rank k must be at least 1"));
    }
    if trial.gallery.is_empty() || trial.probes.is_empty() {
        return Err(CgfrError::input("identification needs a gallery and probes"));
    }
    let mut seen = HashSet::new();
    for (id, _) in &trial.gallery {
        if !seen.insert(*id) {
            return Err(CgfrError::input(format!("gallery identity {id} enrolled twice")));
        }
    }
    let mut hits = vec![0usize; max_k];
    for (pid, pe) in &trial.probes {
        let mate = trial
            .gallery
            .iter()
            .position(|(g, _)| g == pid)
            .ok_or_else(|| CgfrError::input(format!("probe identity {pid} is not in the gallery")))?;
        let scores: Vec<f64> = trial
            .gallery
            .iter()
            .map(|(_, ge)| cosine_score(pe, ge))
            .collect::<Result<_>>()?;
        let s = scores[mate];
        let rank = scores
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s || (v == s && j < mate))
            .count();
        for h in hits.iter_mut().skip(rank) {
            *h += 1;
        }
    }
    let n = trial.probes.len() as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

/// One sampled verification pair of item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

/// Samples `n_genuine` same-identity and `n_impostor` cross-identity
/// unordered pairs without replacement over items labelled `identities`.
pub fn build_verification_protocol(identities: &[usize], seed: u64, n_genuine: usize, n_impostor: usize) -> Result<Vec<Pair>> {
    let n = identities.len();
    let mut genuine = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if identities[a] == identities[b] {
                genuine.push(Pair { a, b, genuine: true });
            }
        }
    }
    let total = n * n.saturating_sub(1) / 2;
    let impostor_total = total - genuine.len();
    if genuine.len() < n_genuine || impostor_total < n_impostor {
        return Err(CgfrError::input(format!(
            "protocol asks for {n_genuine} genuine and {n_impostor} impostor pairs; only {} and {impostor_total} exist",
            genuine.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    genuine.shuffle(&mut rng);
    genuine.truncate(n_genuine);

    let mut impostor = Vec::with_capacity(n_impostor);
    if n_impostor * 4 >= impostor_total {
        for a in 0..n {
            for b in a + 1..n {
                if identities[a] != identities[b] {
                    impostor.push(Pair { a, b, genuine: false });
                }
            }
        }
        impostor.shuffle(&mut rng);
        impostor.truncate(n_impostor);
    } else {
        let mut seen = HashSet::with_capacity(n_impostor);
        while impostor.len() < n_impostor {
            let (x, y) = (rng.random_range(0..n), rng.random_range(0..n));
            let (a, b) = (x.min(y), x.max(y));
            if identities[a] != identities[b] && seen.insert((a, b)) {
                impostor.push(Pair { a, b, genuine: false });
            }
        }
    }
    genuine.extend(impostor);
    Ok(genuine)
}

/// Cosine scores for every pair over per-item embeddings.
pub fn score_pairs(pairs: &[Pair], embeddings: &[Vec<f64>]) -> Result<ScoreSet> {
    let mut s = ScoreSet::default();
    for p in pairs {
        let (ea, eb) = (
            embeddings.get(p.a).ok_or_else(|| CgfrError::input("pair index out of range"))?,
            embeddings.get(p.b).ok_or_else(|| CgfrError::input("pair index out of range"))?,
        );
        let v = cosine_score(ea, eb)?;
        if p.genuine {
            s.genuine.push(v);
        } else {
            s.impostor.push(v);
        }
    }
    Ok(s)
}

/// The summary columns of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub auc: f64,
    pub eer: f64,
    pub tpr_at_1e3: f64,
    pub tpr_at_1e4: f64,
    pub rank1: f64,
}

impl MetricsSummary {
    pub const KEYS: [&'static str; 5] = ["auc", "eer", "tpr_fpr_1e-3", "tpr_fpr_1e-4", "rank1"];

    pub fn compute(scores: &ScoreSet, trial: &IdentificationTrial) -> Result<Self> {
        let curve = roc(scores)?;
        Ok(MetricsSummary {
            auc: auc(&curve),
            eer: eer(scores)?,
            tpr_at_1e3: tpr_at_fpr(&curve, 1e-3)?,
            tpr_at_1e4: tpr_at_fpr(&curve, 1e-4)?,
            rank1: rank_k(trial, 1)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.auc, self.eer, self.tpr_at_1e3, self.tpr_at_1e4, self.rank1]
    }

    /// `key=value` lines in [`MetricsSummary::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v:?}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 5];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CgfrError::Format(format!("metrics line `{line}`")))?;
            let i = Self::KEYS
                .iter()
                .position(|x| *x == k)
                .ok_or_else(|| CgfrError::Format(format!("unknown metric `{k}`")))?;
            vals[i] = Some(v.parse::<f64>().map_err(|e| CgfrError::Format(format!("{k}: {e}")))?);
        }
        let get = |i: usize| vals[i].ok_or_else(|| CgfrError::Format(format!("missing metric {}", Self::KEYS[i])));
        Ok(MetricsSummary {
            auc: get(0)?,
            eer: get(1)?,
            tpr_at_1e3: get(2)?,
            tpr_at_1e4: get(3)?,
            rank1: get(4)?,
        })
    }
}

/// `label<TAB>score` lines, genuine scores first.
pub fn scores_to_text(s: &ScoreSet) -> String {
    let mut out = String::new();
    for v in &s.genuine {
        let _ = writeln!(out, "genuine\t{v}");
    }
    for v in &s.impostor {
        let _ = writeln!(out, "impostor\t{v}");
    }
    out
}

pub fn scores_from_text(text: &str) -> Result<ScoreSet> {
    let mut s = ScoreSet::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CgfrError::Format(format!("scores line {}: {m}", n + 1));
        let (label, v) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
        let v: f64 = v.trim().parse().map_err(|e| bad(format!("{e}")))?;
        match label {
            "genuine" => s.genuine.push(v),
            "impostor" => s.impostor.push(v),
            other => return Err(bad(format!("unknown label `{other}`"))),
        }
    }
    Ok(s)
}

/// `fpr,tpr,threshold` lines; sentinels print as `inf` and `-inf`.
pub fn roc_to_text(curve: &[RocPoint]) -> String {
    let mut out = String::new();
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
    }
    out
}

pub fn roc_from_text(text: &str) -> Result<RocCurve> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CgfrError::Format(format!("roc line `{l}`: {e}")))?;
            match f[..] {
                [fpr, tpr, threshold] => Ok(RocPoint { fpr, tpr, threshold }),
                _ => Err(CgfrError::Format(format!("roc line `{l}` needs three fields"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet {
            genuine: g.to_vec(),
            impostor: i.to_vec(),
        }
    }

    #[test]
    fn separable_scores() {
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        let c = roc(&s).unwrap();
        assert!(c.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&c), 1.0);
        assert_eq!(eer(&s).unwrap(), 0.0);
        assert_eq!(tpr_at_fpr(&c, 1e-4).unwrap(), 1.0);
    }

    #[test]
    fn identical_distributions_sit_on_the_diagonal() {
        let v = [0.3, 0.1, 0.7, 0.5];
        let s = set(&v, &v);
        let c = roc(&s).unwrap();
        assert!(c.iter().all(|p| p.fpr == p.tpr));
        assert!((auc(&c) - 0.5).abs() < 1e-15);
        assert!((eer(&s).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(tpr_at_fpr(&c, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn cosine_edge_cases() {
        assert!((cosine_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_score(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn text_formats_round_trip() {
        let s = set(&[0.5, 0.25], &[-0.125]);
        assert_eq!(scores_from_text(&scores_to_text(&s)).unwrap(), s);
        let c = roc(&s).unwrap();
        assert_eq!(roc_from_text(&roc_to_text(&c)).unwrap(), c);
        let m = MetricsSummary {
            auc: 0.9,
            eer: 0.1,
            tpr_at_1e3: 0.5,
            tpr_at_1e4: 0.25,
            rank1: 0.75,
        };
        assert_eq!(MetricsSummary::parse(&m.to_text()).unwrap(), m);
    }
}
