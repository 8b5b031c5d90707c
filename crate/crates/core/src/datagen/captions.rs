//! Templated captions over attribute phrases and their exact inverse.
//!
//! Grammar: `<subject> has <p1>, <p2>, ... and <pk>.` where the subject is
//! `she`, `he` or `this person`. Gendered subjects mention the gender
//! attribute; the neutral one does not.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::attributes::{phrase, lookup_phrase, IdentityRecord, ATTRIBUTES, GENDER, NUM_ATTRIBUTES};
use crate::encoders::MAX_WORDS;
use crate::error::{CgfrError, Result};

const SUBJECTS: [&str; 3] = ["she", "he", "this person"];
/// Phrases allowed after the neutral three-word subject, keeping captions
/// within the word budget.
const NEUTRAL_MAX_PHRASES: usize = 7;
/// Minimum number of attributes every caption mentions.
pub const MIN_MENTIONED: usize = 3;

/// Attribute indices with a mentionable value in `record`.
pub fn mentionable(record: &IdentityRecord) -> Vec<usize> {
    (0..NUM_ATTRIBUTES).filter(|&a| phrase(record, a).is_some()).collect()
}

fn render(subject: &str, phrases: &[&str]) -> String {
    let body = match phrases {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    };
    let mut s = format!("{subject} has {body}.");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

/// One caption mentioning between `min_attrs` and `max_attrs` phrases.
pub fn generate_caption<R: Rng>(record: &IdentityRecord, rng: &mut R, min_attrs: usize, max_attrs: usize) -> String {
    let mut pool = mentionable(record);
    let gendered = rng.random::<f64>() < 0.7;
    let subject = if gendered { SUBJECTS[record.attributes[GENDER]] } else { SUBJECTS[2] };
    let cap = if gendered { (MAX_WORDS - 3) / 2 } else { NEUTRAL_MAX_PHRASES };
    let hi = max_attrs.min(cap).min(pool.len()).max(1);
    let lo = min_attrs.min(hi).max(1);
    let k = rng.random_range(lo..=hi);
    pool.shuffle(rng);
    pool.truncate(k);
    pool.sort_unstable();
    let phrases: Vec<&str> = pool.iter().map(|&a| phrase(record, a).expect("mentionable")).collect();
    render(subject, &phrases)
}

/// `n` pairwise distinct captions (at most 10).
pub fn generate_captions<R: Rng>(
    record: &IdentityRecord,
    rng: &mut R,
    n: usize,
    min_attrs: usize,
    max_attrs: usize,
) -> Result<Vec<String>> {
    if n == 0 || n > 10 {
        return Err(CgfrError::config(format!("captions per image must be in 1..=10, got {n}")));
    }
    if min_attrs > max_attrs || max_attrs == 0 {
        return Err(CgfrError::config(format!("attribute range {min_attrs}..={max_attrs} is empty")));
    }
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        let c = generate_caption(record, rng, min_attrs, max_attrs);
        attempts += 1;
        if !out.contains(&c) || attempts > 1000 {
            out.push(c);
        }
    }
    Ok(out)
}

/// Attribute assignments a caption states, keyed by attribute index.
pub fn parse_caption(caption: &str) -> Result<BTreeMap<usize, usize>> {
    let bad = || CgfrError::Format(format!("caption outside the template grammar: `{caption}`"));
    let lower = caption.to_lowercase();
    let body = lower.strip_suffix('.').ok_or_else(bad)?;
    let mut out = BTreeMap::new();
    let rest = if let Some(r) = body.strip_prefix("she has ") {
        out.insert(GENDER, 0);
        r
    } else if let Some(r) = body.strip_prefix("he has ") {
        out.insert(GENDER, 1);
        r
    } else {
        body.strip_prefix("this person has ").ok_or_else(bad)?
    };
    let (head, last) = match rest.rsplit_once(" and ") {
        Some((h, l)) => (Some(h), l),
        None => (None, rest),
    };
    let parts = head.into_iter().flat_map(|h| h.split(", ")).chain(std::iter::once(last));
    for p in parts {
        let (a, v) = lookup_phrase(p).ok_or_else(bad)?;
        if out.insert(a, v).is_some() {
            return Err(bad());
        }
    }
    Ok(out)
}

/// Every word the grammar can produce, for building a closed vocabulary.
pub fn grammar_corpus() -> Vec<String> {
    let mut out: Vec<String> = SUBJECTS.iter().map(|s| format!("{s} has and")).collect();
    for attr in ATTRIBUTES.iter() {
        out.extend(attr.phrases.iter().flatten().map(|p| p.to_string()));
    }
    out
}
