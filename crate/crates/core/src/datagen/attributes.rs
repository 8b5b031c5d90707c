//! The 38-attribute identity description and its caption phrases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NUM_ATTRIBUTES: usize = 38;

/// One attribute: name, the caption phrase of every value (`None` for values
/// that are never mentioned, such as an absent accessory), and the sampling
/// weight of every value.
#[derive(Debug, Clone, Copy)]
pub struct Attribute {
    pub name: &'static str,
    pub phrases: &'static [Option<&'static str>],
    pub weights: &'static [f64],
}

impl Attribute {
    pub fn arity(&self) -> usize {
        self.phrases.len()
    }
}

macro_rules! binary {
    ($name:literal, $phrase:literal, $p:expr) => {
        Attribute {
            name: $name,
            phrases: &[None, Some($phrase)],
            weights: &[1.0 - $p, $p],
        }
    };
}

macro_rules! categorical {
    ($name:literal, [$($phrase:literal),+ $(,)?]) => {
        Attribute {
            name: $name,
            phrases: &[$(Some($phrase)),+],
            weights: &[],
        }
    };
}

pub const GENDER: usize = 0;
pub const HAIR_COLOR: usize = 1;
pub const HAIR_LENGTH: usize = 2;
pub const BALD: usize = 5;
pub const EYEBROWS: usize = 7;
pub const EYE_SHAPE: usize = 8;
pub const EYE_COLOR: usize = 9;
pub const NOSE_SIZE: usize = 11;
pub const LIPS: usize = 13;
pub const LIPSTICK: usize = 14;
pub const OPEN_MOUTH: usize = 15;
pub const SMILE: usize = 16;
pub const FACE_SHAPE: usize = 18;
pub const ROSY: usize = 22;
pub const SKIN: usize = 23;
pub const FRECKLES: usize = 24;
pub const EYEWEAR: usize = 25;
pub const BEARD: usize = 26;
pub const MUSTACHE: usize = 27;
pub const STUBBLE: usize = 28;
pub const EARRINGS: usize = 30;
pub const HAT: usize = 31;
pub const NECKTIE: usize = 33;
pub const MAKEUP: usize = 34;
pub const AGE: usize = 35;
pub const EARS: usize = 37;

pub const ATTRIBUTES: [Attribute; NUM_ATTRIBUTES] = [
    // Gender is carried by the caption subject, never by a phrase.
    Attribute {
        name: "gender",
        phrases: &[None, None],
        weights: &[],
    },
    categorical!("hair_color", ["black hair", "blond hair", "brown hair", "gray hair", "auburn hair"]),
    categorical!("hair_length", ["short hair", "long hair", "medium hair"]),
    categorical!("hair_texture", ["straight hair", "wavy hair", "curly hair"]),
    binary!("bangs", "bangs", 0.2),
    binary!("bald", "bald head", 0.08),
    binary!("receding_hairline", "receding hairline", 0.15),
    categorical!("eyebrows", ["arched eyebrows", "bushy eyebrows", "thin eyebrows", "straight eyebrows"]),
    categorical!("eye_shape", ["narrow eyes", "round eyes", "almond eyes"]),
    categorical!("eye_color", ["blue irises", "green irises", "brown irises", "hazel irises"]),
    binary!("eye_bags", "eye bags", 0.25),
    categorical!("nose_size", ["big nose", "small nose"]),
    categorical!("nose_shape", ["pointy nose", "button nose", "hooked nose"]),
    categorical!("lips", ["big lips", "thin lips", "full lips"]),
    binary!("lipstick", "red lipstick", 0.3),
    binary!("open_mouth", "parted lips", 0.3),
    binary!("smile", "broad smile", 0.45),
    binary!("dimples", "dimples", 0.2),
    categorical!("face_shape", ["oval face", "round face", "square face", "long face"]),
    binary!("chubby", "chubby cheeks", 0.15),
    binary!("double_chin", "double chin", 0.1),
    binary!("high_cheekbones", "high cheekbones", 0.35),
    binary!("rosy_cheeks", "rosy cheeks", 0.2),
    categorical!("skin_tone", ["pale skin", "fair skin", "olive skin", "dark skin"]),
    binary!("freckles", "freckles", 0.15),
    Attribute {
        name: "eyewear",
        phrases: &[None, Some("eyeglasses"), Some("sunglasses")],
        weights: &[0.7, 0.2, 0.1],
    },
    Attribute {
        name: "beard",
        phrases: &[None, Some("full beard"), Some("goatee")],
        weights: &[0.7, 0.2, 0.1],
    },
    binary!("mustache", "mustache", 0.2),
    binary!("stubble", "stubble", 0.2),
    binary!("sideburns", "sideburns", 0.15),
    binary!("earrings", "earrings", 0.25),
    binary!("hat", "a hat", 0.12),
    binary!("necklace", "a necklace", 0.15),
    binary!("necktie", "a necktie", 0.12),
    binary!("makeup", "heavy makeup", 0.3),
    categorical!("age", ["young age", "middle age", "old age"]),
    binary!("eyelashes", "long eyelashes", 0.25),
    categorical!("ears", ["big ears", "small ears"]),
];

/// Attributes that are only sampled as present for one gender
/// (0 = female, 1 = male).
const GENDERED: [(usize, usize); 7] = [
    (BEARD, 1),
    (MUSTACHE, 1),
    (STUBBLE, 1),
    (29, 1),
    (LIPSTICK, 0),
    (MAKEUP, 0),
    (36, 0),
];

/// Continuous per-identity traits that shape the rendered face beyond what
/// the attribute vector says, each in `[0, 1]`.
pub const NUM_TRAITS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRecord {
    pub id: usize,
    pub attributes: [usize; NUM_ATTRIBUTES],
    pub traits: [f64; NUM_TRAITS],
}

fn sample_value<R: Rng>(rng: &mut R, attr: &Attribute) -> usize {
    if attr.weights.is_empty() {
        return rng.random_range(0..attr.arity());
    }
    let total: f64 = attr.weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in attr.weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    attr.arity() - 1
}

/// Stream-separated generator for one `(seed, id, purpose)` triple.
pub fn stream_rng(seed: u64, id: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((id as u64) << 8) | purpose);
    rng
}

/// Deterministic record from `(seed, id)`.
pub fn generate_identity(seed: u64, id: usize) -> IdentityRecord {
    let mut rng = stream_rng(seed, id, 0);
    let mut attributes = [0usize; NUM_ATTRIBUTES];
    for (a, attr) in ATTRIBUTES.iter().enumerate() {
        attributes[a] = sample_value(&mut rng, attr);
    }
    for (a, g) in GENDERED {
        if attributes[GENDER] != g {
            attributes[a] = 0;
        }
    }
    if attributes[BALD] == 1 {
        attributes[4] = 0;
        attributes[HAIR_LENGTH] = 0;
    }
    let mut traits = [0.0; NUM_TRAITS];
    for t in traits.iter_mut() {
        *t = rng.random::<f64>();
    }
    IdentityRecord { id, attributes, traits }
}

/// Phrase of attribute `a` in `record`, if the value is mentionable.
pub fn phrase(record: &IdentityRecord, a: usize) -> Option<&'static str> {
    ATTRIBUTES[a].phrases[record.attributes[a]]
}

/// `(attribute, value)` for a caption phrase.
pub fn lookup_phrase(p: &str) -> Option<(usize, usize)> {
    ATTRIBUTES.iter().enumerate().find_map(|(a, attr)| {
        attr.phrases
            .iter()
            .position(|q| *q == Some(p))
            .map(|v| (a, v))
    })
}
