//! Stand-in text and image encoders with the fixed interface shapes used by
//! the fusion model.

pub mod image;
pub mod text;
pub mod vocab;

pub use image::{ImageEncoder, ImageFeatures, GLOBAL_DIM, IMAGE_SHAPE, LOCAL_SHAPE};
pub use text::{TextEncoder, TextFeatures};
pub use vocab::{TokenSequence, Vocabulary, MAX_WORDS, SEQ_LEN};
