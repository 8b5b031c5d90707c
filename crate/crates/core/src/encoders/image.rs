//! Stand-in convolutional face encoder: `3x112x112` in, local features
//! `256x14x14` after the third stage and a 512-d global vector out.

use cgfr_tensor::{ParamStore, Tensor};
use rand::Rng;

use crate::error::{CgfrError, Result};
use crate::nn::{conv, init_conv, init_linear, linear};

pub const IMAGE_SHAPE: [usize; 3] = [3, 112, 112];
pub const LOCAL_SHAPE: [usize; 3] = [256, 14, 14];
pub const GLOBAL_DIM: usize = 512;

/// (name, filters, in channels, kernel, stride); pad is `kernel / 2`.
const LAYERS: [(&str, usize, usize, usize, usize); 8] = [
    ("stem", 32, 3, 3, 2),
    ("s1", 32, 32, 3, 1),
    ("s2a", 64, 32, 3, 2),
    ("s2b", 64, 64, 3, 1),
    ("s3a", 128, 64, 3, 2),
    ("s3b", 256, 128, 3, 1),
    ("s4a", 256, 256, 3, 2),
    ("s4b", 128, 256, 1, 1),
];
/// Index of the layer whose output is the local feature map.
const LOCAL_AT: usize = 5;
const FLAT_DIM: usize = 128 * 7 * 7;

#[derive(Debug, Clone)]
pub struct ImageFeatures {
    /// `[N, 256, 14, 14]`
    pub local: Tensor,
    /// `[N, 512]`
    pub global: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEncoder {
    pub leaky_slope: f64,
}

impl ImageEncoder {
    pub const PREFIX: &'static str = "image";

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (name, f, c, k, _) in LAYERS {
            init_conv(store, rng, &format!("image.{name}"), [f, c, k, k])?;
        }
        init_linear(store, rng, "image.fc", FLAT_DIM, GLOBAL_DIM)
    }

    /// Encodes `[N, 3, 112, 112]` (or a single `[3, 112, 112]` image).
    pub fn forward(&self, store: &ParamStore, images: &Tensor) -> Result<ImageFeatures> {
        let x = match images.shape() {
            [3, 112, 112] => images.reshape(&[1, 3, 112, 112])?,
            [_, 3, 112, 112] => images.clone(),
            other => {
                return Err(CgfrError::Tensor(cgfr_tensor::TensorError::Shape {
                    op: "image_encode",
                    lhs: other.to_vec(),
                    rhs: IMAGE_SHAPE.to_vec(),
                }))
            }
        };
        let n = x.shape()[0];
        let mut h = x;
        let mut local = None;
        for (i, (name, _, _, k, s)) in LAYERS.iter().enumerate() {
            h = conv(store, &format!("image.{name}"), &h, (k / 2, k / 2), (*s, *s))?.leaky_relu(self.leaky_slope);
            if i == LOCAL_AT {
                local = Some(h.clone());
            }
        }
        let global = linear(store, "image.fc", &h.reshape(&[n, FLAT_DIM])?)?;
        Ok(ImageFeatures {
            local: local.expect("local layer visited"),
            global,
        })
    }
}
