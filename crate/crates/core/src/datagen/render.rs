//! Procedural face-like images driven by an identity record.

use rand::Rng;

use super::attributes::*;

pub const SIDE: usize = 112;
pub const CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = CHANNELS * SIDE * SIDE;

type Rgb = [f64; 3];

const HAIR_RGB: [Rgb; 5] = [
    [0.08, 0.07, 0.07],
    [0.86, 0.76, 0.45],
    [0.40, 0.25, 0.12],
    [0.62, 0.62, 0.64],
    [0.56, 0.22, 0.10],
];
const SKIN_RGB: [Rgb; 4] = [
    [0.96, 0.86, 0.79],
    [0.90, 0.74, 0.62],
    [0.72, 0.56, 0.40],
    [0.42, 0.28, 0.20],
];
const IRIS_RGB: [Rgb; 4] = [
    [0.20, 0.40, 0.85],
    [0.20, 0.62, 0.30],
    [0.35, 0.20, 0.10],
    [0.58, 0.46, 0.20],
];
const DARK: Rgb = [0.05, 0.05, 0.06];
const WHITE: Rgb = [0.97, 0.97, 0.97];
const LIPSTICK_RED: Rgb = [0.80, 0.08, 0.15];
const GOLD: Rgb = [0.92, 0.78, 0.25];

/// Per-view variation: head shift, illumination and expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisance {
    /// Horizontal head turn in `[-1, 1]`.
    pub pose: f64,
    /// Multiplicative illumination gain.
    pub gain: f64,
    /// 0 neutral, 1 smiling, 2 open mouth.
    pub expression: usize,
}

impl Nuisance {
    pub const NONE: Nuisance = Nuisance {
        pose: 0.0,
        gain: 1.0,
        expression: 0,
    };

    /// Random view with strength `s` (0 gives [`Nuisance::NONE`]).
    pub fn sample<R: Rng>(rng: &mut R, s: f64) -> Nuisance {
        let pose = s * rng.random_range(-1.0..=1.0);
        let gain = 1.0 + s * rng.random_range(-0.25..=0.25);
        let expression = if s > 0.0 { rng.random_range(0..3) } else { 0 };
        Nuisance { pose, gain, expression }
    }
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn ell(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)
}

fn superell(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, p: f64) -> f64 {
    ((x - cx) / rx).abs().powf(p) + ((y - cy) / ry).abs().powf(p)
}

/// Cheap deterministic hash of a pixel and a salt in `[0, 1)`.
fn speckle(x: usize, y: usize, salt: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ salt;
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Planar `[3, 112, 112]` image with values in `[0, 1]`.
pub fn render_image(record: &IdentityRecord, nuisance: &Nuisance) -> Vec<f64> {
    let a = &record.attributes;
    let t = &record.traits;
    let salt = record.id as u64 ^ 0x5EED;

    let cx = 56.0 + 7.0 * nuisance.pose;
    let cy = 60.0 + 4.0 * (t[1] - 0.5);
    let (mut rx, mut ry, p) = match a[FACE_SHAPE] {
        0 => (30.0, 39.0, 2.0),
        1 => (35.0, 36.0, 2.0),
        2 => (33.0, 37.0, 3.2),
        _ => (27.0, 43.0, 2.0),
    };
    rx *= 0.92 + 0.16 * t[2] - 0.08 * nuisance.pose.abs();
    ry *= 0.95 + 0.1 * t[3];
    if a[19] == 1 {
        rx *= 1.08;
    }
    let eye_dx = 11.0 + 4.0 * t[4] - 2.0 * nuisance.pose.abs();
    let eye_y = cy - 7.0 - 3.0 * (t[5] - 0.5);
    let mouth_y = cy + 19.0 + 2.0 * t[6];
    let bg_a: Rgb = [0.25 + 0.5 * t[0], 0.35 + 0.3 * t[7], 0.6 - 0.3 * t[0]];
    let bg_b: Rgb = [0.1 + 0.2 * t[7], 0.15, 0.25 + 0.2 * t[0]];
    let hair = HAIR_RGB[a[HAIR_COLOR]];
    let mut skin = SKIN_RGB[a[SKIN]];
    if a[AGE] == 2 {
        skin = mix(skin, [0.8, 0.75, 0.72], 0.2);
    }
    let bald = a[BALD] == 1;
    let hair_drop = match a[HAIR_LENGTH] {
        0 => 0.0,
        2 => 0.55,
        _ => 1.2,
    };
    let hairline = cy - ry * (0.55 + if a[6] == 1 { 0.2 } else { 0.0 }) + if a[4] == 1 { 14.0 } else { 0.0 };
    let hat_color: Rgb = [0.2 + 0.6 * t[6], 0.2 + 0.5 * t[1], 0.3 + 0.4 * t[3]];
    let smile = a[SMILE] == 1 || nuisance.expression == 1;
    let open = a[OPEN_MOUTH] == 1 || nuisance.expression == 2;
    let lip_w = match a[LIPS] {
        0 => 11.0,
        1 => 8.0,
        _ => 10.0,
    } * if smile { 1.2 } else { 1.0 };
    let lip_h = match a[LIPS] {
        1 => 1.6,
        0 => 3.4,
        _ => 3.0,
    };
    let lip_color = if a[LIPSTICK] == 1 { LIPSTICK_RED } else { mix(skin, [0.7, 0.3, 0.3], 0.5) };
    let (eye_rx, eye_ry) = match a[EYE_SHAPE] {
        0 => (5.5, 2.0),
        1 => (4.2, 4.0),
        _ => (5.5, 3.0),
    };
    let brow_th = match a[EYEBROWS] {
        1 => 2.6,
        2 => 0.8,
        _ => 1.5,
    };
    let nose_w = if a[NOSE_SIZE] == 0 { 5.0 } else { 3.0 };
    let ear_r = if a[EARS] == 0 { 7.5 } else { 5.0 };

    let mut img = vec![0.0; IMAGE_LEN];
    for yi in 0..SIDE {
        for xi in 0..SIDE {
            let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
            let mut c = mix(bg_a, bg_b, y / SIDE as f64);

            let head = ell(x, y, cx, cy - 4.0, rx * 1.15, ry * 1.12);
            if !bald && hair_drop > 0.0 && y > cy - ry && y < cy + ry * hair_drop && (x - cx).abs() < rx * 1.25 {
                c = hair;
            }
            let ear_y = eye_y + 6.0;
            for side in [-1.0, 1.0] {
                let ex = cx + side * (rx + 1.5);
                if ell(x, y, ex, ear_y, ear_r * 0.6, ear_r) < 1.0 {
                    c = mix(skin, DARK, 0.08);
                }
                if a[EARRINGS] == 1 && ell(x, y, ex, ear_y + ear_r + 2.0, 1.8, 1.8) < 1.0 {
                    c = GOLD;
                }
            }
            let face = superell(x, y, cx, cy, rx, ry, p) < 1.0;
            if face {
                c = skin;
                if a[ROSY] == 1 || a[MAKEUP] == 1 {
                    for side in [-1.0, 1.0] {
                        let d = ell(x, y, cx + side * eye_dx * 1.2, eye_y + 14.0, 6.0, 4.0);
                        if d < 1.0 {
                            c = mix(c, [0.9, 0.35, 0.4], 0.35 * (1.0 - d));
                        }
                    }
                }
                if a[FRECKLES] == 1 && (y - eye_y - 9.0).abs() < 6.0 && speckle(xi, yi, salt) < 0.12 {
                    c = mix(c, [0.55, 0.3, 0.15], 0.6);
                }
                if a[AGE] == 2 && ((y - (eye_y - 13.0)).abs() < 0.6 || (y - (eye_y - 17.0)).abs() < 0.6) && (x - cx).abs() < rx * 0.5 {
                    c = mix(c, DARK, 0.3);
                }
                if a[STUBBLE] == 1 && y > mouth_y - 8.0 && speckle(xi, yi, salt ^ 7) < 0.35 {
                    c = mix(c, hair, 0.5);
                }
                match a[BEARD] {
                    1 if y > mouth_y - 6.0 || (y > eye_y + 12.0 && (x - cx).abs() > rx * 0.7) => c = hair,
                    2 if y > mouth_y + 3.0 && (x - cx).abs() < 8.0 => c = hair,
                    _ => {}
                }
                if a[20] == 1 && ell(x, y, cx, cy + ry * 0.95, rx * 0.5, 4.0) < 1.0 {
                    c = mix(c, DARK, 0.15);
                }
            }
            if !bald && y < hairline && head < 1.0 {
                c = hair;
            }
            if bald && head < 1.0 && y < cy - ry * 0.5 {
                c = mix(skin, WHITE, 0.15);
            }
            if a[HAT] == 1 && y < cy - ry * 0.72 && ell(x, y, cx, cy - ry * 0.8, rx * 1.35, ry * 0.55) < 1.0 {
                c = hat_color;
            }
            if face {
                for side in [-1.0, 1.0] {
                    let ex = cx + side * eye_dx;
                    let e = ell(x, y, ex, eye_y, eye_rx, eye_ry);
                    if e < 1.0 {
                        c = WHITE;
                        if ell(x, y, ex + 1.2 * nuisance.pose, eye_y, eye_ry.min(2.6), eye_ry.min(2.6)) < 1.0 {
                            c = IRIS_RGB[a[EYE_COLOR]];
                        }
                    }
                    if a[10] == 1 && ell(x, y, ex, eye_y + eye_ry + 2.0, eye_rx * 0.9, 1.3) < 1.0 {
                        c = mix(skin, DARK, 0.3);
                    }
                    if a[36] == 1 && (y - (eye_y - eye_ry)).abs() < 0.7 && (x - ex).abs() < eye_rx {
                        c = DARK;
                    }
                    let arch = if a[EYEBROWS] == 0 { 3.0 * (1.0 - ((x - ex) / 7.0).powi(2)) } else { 0.0 };
                    let brow_y = eye_y - 7.0 - arch;
                    if (x - ex).abs() < 7.0 && (y - brow_y).abs() < brow_th {
                        c = mix(hair, DARK, 0.4);
                    }
                    match a[EYEWEAR] {
                        1 if (e.sqrt() - 1.6).abs() < 0.18 => c = DARK,
                        2 if e < 2.6 => c = DARK,
                        _ => {}
                    }
                }
                if a[EYEWEAR] != 0 && (y - eye_y).abs() < 0.8 && (x - cx).abs() < eye_dx - eye_rx * 1.3 {
                    c = DARK;
                }
                let nose_top = eye_y + 2.0;
                let nose_bot = mouth_y - 7.0;
                if y > nose_top && y < nose_bot {
                    let frac = (y - nose_top) / (nose_bot - nose_top);
                    let half = nose_w * (0.3 + 0.7 * frac) * if a[12] == 0 { 0.8 } else { 1.0 };
                    if (x - cx - 2.0 * nuisance.pose).abs() < half && frac > 0.6 {
                        c = mix(skin, DARK, 0.25);
                    }
                }
                let curve = if smile { 0.04 * (x - cx).powi(2) } else { 0.0 };
                let my = mouth_y - curve;
                if (x - cx).abs() < lip_w {
                    if open && (y - my).abs() < lip_h * 0.8 {
                        c = DARK;
                    } else if (y - my).abs() < lip_h {
                        c = lip_color;
                    }
                    if a[MUSTACHE] == 1 && (y - (mouth_y - lip_h - 2.5)).abs() < 1.5 {
                        c = hair;
                    }
                }
                if a[17] == 1 && ell(x, y, cx + lip_w + 3.0, mouth_y, 1.2, 1.2) < 1.0 {
                    c = mix(skin, DARK, 0.3);
                }
            }
            if y > cy + ry && (x - cx).abs() < rx * 1.6 {
                if a[NECKTIE] == 1 && (x - cx).abs() < 3.0 + 0.3 * (y - cy - ry) {
                    c = [0.6, 0.1, 0.15];
                } else if a[32] == 1 && (y - (cy + ry + 5.0)).abs() < 1.0 {
                    c = GOLD;
                }
            }

            let light = nuisance.gain * (1.0 + 0.15 * nuisance.pose * (x - 56.0) / 56.0);
            for (ch, v) in c.iter().enumerate() {
                img[(ch * SIDE + yi) * SIDE + xi] = (v * light).clamp(0.0, 1.0);
            }
        }
    }
    img
}
