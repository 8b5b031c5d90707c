//! Dataset directories: `manifest.tsv`, `vocab.txt` and raw image files.
//!
//! Image file layout: `CGIM`, then `C`, `H`, `W` as little-endian u16, then
//! `C*H*W` little-endian f64 values in planar order.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::render::{CHANNELS, SIDE};
use super::{caption_vocabulary, Dataset, Sample};
use crate::error::{CgfrError, Result};

pub const IMAGE_MAGIC: &[u8; 4] = b"CGIM";
pub const IMAGE_HEADER_LEN: usize = 10;
pub const MANIFEST: &str = "manifest.tsv";
pub const VOCAB: &str = "vocab.txt";

pub fn encode_image(shape: [usize; 3], data: &[f64]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() || shape.iter().any(|&d| d > u16::MAX as usize) {
        return Err(CgfrError::input(format!("image shape {shape:?} does not fit {} values", data.len())));
    }
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + 8 * data.len());
    out.extend_from_slice(IMAGE_MAGIC);
    for d in shape {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<([usize; 3], Vec<f64>)> {
    if bytes.len() < IMAGE_HEADER_LEN || &bytes[..4] != IMAGE_MAGIC {
        return Err(CgfrError::Format("not a CGIM image".into()));
    }
    let dim = |i: usize| u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    let body = &bytes[IMAGE_HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(CgfrError::Format(format!(
            "image {shape:?} needs {} payload bytes, found {}",
            8 * n,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((shape, data))
}

fn image_path(index: usize, s: &Sample) -> String {
    format!("images/{:06}_{:04}.cgim", s.identity, index)
}

/// Manifest text: `identity_id<TAB>image_path<TAB>caption_1|caption_2|...`.
pub fn manifest_text(ds: &Dataset) -> String {
    let mut out = String::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}", s.identity, image_path(i, s), s.captions.join("|"));
    }
    out
}

/// SHA-256 over the manifest text followed by every encoded image.
pub fn manifest_hash(ds: &Dataset) -> Result<String> {
    let mut h = Sha256::new();
    h.update(manifest_text(ds).as_bytes());
    for s in &ds.samples {
        h.update(encode_image([CHANNELS, SIDE, SIDE], &s.image)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Writes manifest, vocabulary and images under `dir`; returns the
/// manifest hash.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::write(dir.join(MANIFEST), manifest_text(ds))?;
    caption_vocabulary().save(&dir.join(VOCAB))?;
    for (i, s) in ds.samples.iter().enumerate() {
        std::fs::write(dir.join(image_path(i, s)), encode_image([CHANNELS, SIDE, SIDE], &s.image)?)?;
    }
    manifest_hash(ds)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| CgfrError::Load(format!("{}: {e}", manifest_path.display())))?;
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| CgfrError::Format(format!("manifest line {}: {what}", n + 1));
        let mut cols = line.split('\t');
        let (Some(id), Some(path), Some(caps), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad("expected three tab-separated columns"));
        };
        let identity: usize = id.parse().map_err(|_| bad("identity is not an integer"))?;
        let bytes = std::fs::read(dir.join(path)).map_err(|e| CgfrError::Load(format!("{path}: {e}")))?;
        let (shape, image) = decode_image(&bytes)?;
        if shape != [CHANNELS, SIDE, SIDE] {
            return Err(bad(&format!("image {path} has shape {shape:?}")));
        }
        let captions: Vec<String> = caps.split('|').map(String::from).collect();
        if captions.iter().any(|c| c.trim().is_empty()) {
            return Err(bad("empty caption"));
        }
        samples.push(Sample {
            identity,
            image,
            captions,
            nuisance: None,
        });
    }
    Ok(Dataset {
        records: Vec::new(),
        samples,
    })
}
