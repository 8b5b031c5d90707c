//! Image degradation: down-up resampling, colour jitter, horizontal flip,
//! rotation and additive Gaussian noise, in that order.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::render::{CHANNELS, SIDE};
use crate::error::{CgfrError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeConfig {
    pub subsample_min: f64,
    pub subsample_max: f64,
    pub rotation_deg: f64,
    pub flip_prob: f64,
    pub noise_sigma: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl DegradeConfig {
    pub const IDENTITY: DegradeConfig = DegradeConfig {
        subsample_min: 1.0,
        subsample_max: 1.0,
        rotation_deg: 0.0,
        flip_prob: 0.0,
        noise_sigma: 0.0,
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
    };

    /// Strong preset: 2-4x subsampling and noise sigma 0.08.
    pub const STRONG: DegradeConfig = DegradeConfig {
        subsample_min: 2.0,
        subsample_max: 4.0,
        rotation_deg: 10.0,
        flip_prob: 0.5,
        noise_sigma: 0.08,
        brightness: 0.2,
        contrast: 0.2,
        saturation: 0.2,
    };

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.rotation_deg,
            self.noise_sigma,
            self.brightness,
            self.contrast,
            self.saturation,
        ];
        if ranges.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || !(self.subsample_min >= 1.0 && self.subsample_max >= self.subsample_min && self.subsample_max.is_finite())
            || !(0.0..=1.0).contains(&self.flip_prob)
        {
            return Err(CgfrError::config(format!("invalid degradation settings {self:?}")));
        }
        Ok(())
    }
}

fn sample_sym<R: Rng>(rng: &mut R, r: f64) -> f64 {
    if r > 0.0 {
        rng.random_range(-r..=r)
    } else {
        0.0
    }
}

/// Bilinear sample of one plane at continuous pixel coordinates
/// (pixel centres at integer + 0.5), clamped at the border.
fn bilinear_clamped(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
    let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
    top * (1.0 - ty) + bot * ty
}

fn resize(plane: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = bilinear_clamped(plane, w, h, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
        }
    }
    out
}

/// Downsamples by `factor` and back up to the original size, per plane.
pub fn down_up(img: &[f64], factor: f64) -> Vec<f64> {
    let small = ((SIDE as f64 / factor).round() as usize).max(1);
    let mut out = Vec::with_capacity(img.len());
    for plane in img.chunks(SIDE * SIDE) {
        let lo = resize(plane, SIDE, SIDE, small, small);
        out.extend(resize(&lo, small, small, SIDE, SIDE));
    }
    out
}

/// Mirrors every plane left-right.
pub fn hflip(img: &[f64]) -> Vec<f64> {
    let mut out = img.to_vec();
    for row in out.chunks_mut(SIDE) {
        row.reverse();
    }
    out
}

/// Rotation about the image centre by `deg` degrees, bilinear, zero fill.
pub fn rotate(img: &[f64], deg: f64) -> Vec<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    let mid = SIDE as f64 / 2.0;
    let mut out = vec![0.0; img.len()];
    for (plane, dst) in img.chunks(SIDE * SIDE).zip(out.chunks_mut(SIDE * SIDE)) {
        for y in 0..SIDE {
            for x in 0..SIDE {
                let (dx, dy) = (x as f64 + 0.5 - mid, y as f64 + 0.5 - mid);
                let sx = c * dx + s * dy + mid - 0.5;
                let sy = -s * dx + c * dy + mid - 0.5;
                if sx < -1.0 || sy < -1.0 || sx > SIDE as f64 || sy > SIDE as f64 {
                    continue;
                }
                let (x0, y0) = (sx.floor(), sy.floor());
                let (tx, ty) = (sx - x0, sy - y0);
                let at = |xx: f64, yy: f64| -> f64 {
                    if xx < 0.0 || yy < 0.0 || xx >= SIDE as f64 || yy >= SIDE as f64 {
                        0.0
                    } else {
                        plane[yy as usize * SIDE + xx as usize]
                    }
                };
                let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
                let bot = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
                dst[y * SIDE + x] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Brightness, contrast and saturation factors; a factor of exactly 1
/// leaves the image untouched.
pub fn color_jitter(img: &mut [f64], brightness: f64, contrast: f64, saturation: f64) {
    let hw = SIDE * SIDE;
    if brightness != 1.0 {
        img.iter_mut().for_each(|v| *v *= brightness);
    }
    let gray = |img: &[f64], i: usize| 0.299 * img[i] + 0.587 * img[hw + i] + 0.114 * img[2 * hw + i];
    if contrast != 1.0 {
        let mean = (0..hw).map(|i| gray(img, i)).sum::<f64>() / hw as f64;
        img.iter_mut().for_each(|v| *v = (*v - mean) * contrast + mean);
    }
    if saturation != 1.0 {
        for i in 0..hw {
            let g = gray(img, i);
            for ch in 0..CHANNELS {
                let v = &mut img[ch * hw + i];
                *v = g + (*v - g) * saturation;
            }
        }
    }
}

/// Applies the full pipeline to a planar `[3, 112, 112]` image.
pub fn degrade<R: Rng>(img: &[f64], cfg: &DegradeConfig, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    if img.len() != CHANNELS * SIDE * SIDE {
        return Err(CgfrError::input(format!("degrade expects {} values, got {}", CHANNELS * SIDE * SIDE, img.len())));
    }
    let factor = if cfg.subsample_max > cfg.subsample_min {
        rng.random_range(cfg.subsample_min..=cfg.subsample_max)
    } else {
        cfg.subsample_min
    };
    let brightness = 1.0 + sample_sym(rng, cfg.brightness);
    let contrast = 1.0 + sample_sym(rng, cfg.contrast);
    let saturation = 1.0 + sample_sym(rng, cfg.saturation);
    let flip = cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob;
    let angle = sample_sym(rng, cfg.rotation_deg);

    let mut out = if factor > 1.0 { down_up(img, factor) } else { img.to_vec() };
    color_jitter(&mut out, brightness, contrast, saturation);
    if flip {
        out = hflip(&out);
    }
    if angle != 0.0 {
        out = rotate(&out, angle);
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| CgfrError::config(e.to_string()))?;
        out.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}
