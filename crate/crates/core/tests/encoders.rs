use cgfr::datagen::{caption_vocabulary, generate_captions, generate_identity};
use cgfr::encoders::{ImageEncoder, TextEncoder, TokenSequence, Vocabulary, GLOBAL_DIM, LOCAL_SHAPE, MAX_WORDS, SEQ_LEN};
use cgfr_tensor::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn text_encoder(vocab: &Vocabulary) -> (TextEncoder, ParamStore) {
    let enc = TextEncoder {
        vocab_size: vocab.len(),
        dim: 16,
        layers: 2,
        heads: 2,
        ffn_mult: 2,
        ln_eps: 1e-5,
    };
    let mut store = ParamStore::new();
    enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    (enc, store)
}

fn captions(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| generate_captions(&generate_identity(seed, i), &mut rng, 1, 5, 8).unwrap().remove(0))
        .collect()
}

#[test]
fn generated_captions_tokenize_without_unknowns() {
    let v = caption_vocabulary();
    for c in captions(1, 40) {
        let s = v.tokenize(&c).unwrap();
        assert_eq!(s.ids[0], v.cls_id());
        let used = s.attention_mask.iter().filter(|&&m| m == 1).count();
        assert!(s.attention_mask[..used].iter().all(|&m| m == 1));
        assert_eq!(s.ids[used - 1], v.sep_id());
        assert!(s.ids[used..].iter().all(|&i| i == v.pad_id()));
        assert!(!s.ids.contains(&v.unk_id()));
    }
}

#[test]
fn detokenize_then_tokenize_is_idempotent() {
    let v = caption_vocabulary();
    for c in captions(2, 40) {
        let s = v.tokenize(&c).unwrap();
        let again = v.tokenize(&v.detokenize(&s)).unwrap();
        assert_eq!(again, s);
    }
}

#[test]
fn text_encoder_shapes_and_attention_rows() {
    let v = caption_vocabulary();
    let (enc, store) = text_encoder(&v);
    let seqs: Vec<TokenSequence> = captions(4, 3).iter().map(|c| v.tokenize(c).unwrap()).collect();
    let out = enc.forward(&store, &seqs).unwrap();
    assert_eq!(out.tokens_out.shape(), &[3, SEQ_LEN, 16]);
    assert_eq!(out.cls_out().unwrap().shape(), &[3, 16]);
    assert_eq!(out.attention.len(), 2);
    for a in &out.attention {
        assert_eq!(a.shape(), &[3, 2, SEQ_LEN, SEQ_LEN]);
        for (i, row) in a.data().chunks(SEQ_LEN).enumerate() {
            let mask = &seqs[i / (2 * SEQ_LEN)].attention_mask;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (p, m) in row.iter().zip(mask) {
                if *m == 0 {
                    assert_eq!(*p, 0.0);
                }
            }
        }
    }
}

#[test]
fn padded_positions_do_not_leak_into_real_tokens() {
    let v = caption_vocabulary();
    let (enc, store) = text_encoder(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for c in captions(5, 5) {
        let s = v.tokenize(&c).unwrap();
        let used = s.attention_mask.iter().filter(|&&m| m == 1).count();
        let mut t = s.clone();
        for id in &mut t.ids[used..] {
            *id = rng.random_range(0..v.len());
        }
        let a = enc.forward(&store, &[s]).unwrap().tokens_out;
        let b = enc.forward(&store, &[t]).unwrap().tokens_out;
        assert_eq!(&a.data()[..used * 16], &b.data()[..used * 16]);
    }
}

#[test]
fn text_batch_rows_are_independent() {
    let v = caption_vocabulary();
    let (enc, store) = text_encoder(&v);
    let seqs: Vec<TokenSequence> = captions(6, 3).iter().map(|c| v.tokenize(c).unwrap()).collect();
    let all = enc.forward(&store, &seqs).unwrap().tokens_out;
    let one = enc.forward(&store, &seqs[1..2]).unwrap().tokens_out;
    let per = SEQ_LEN * 16;
    for (a, b) in all.data()[per..2 * per].iter().zip(one.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn text_input_errors() {
    let v = caption_vocabulary();
    let (enc, store) = text_encoder(&v);
    let mut s = v.tokenize("a man").unwrap();
    s.ids[1] = v.len();
    assert!(enc.forward(&store, &[s.clone()]).is_err());
    s.ids.pop();
    assert!(enc.forward(&store, &[s]).is_err());
    assert!(enc.forward_embedded(&store, &Tensor::zeros(&[1, SEQ_LEN, 8]), &[&[1u8; SEQ_LEN]]).is_err());
}

fn image_encoder() -> (ImageEncoder, ParamStore) {
    let enc = ImageEncoder { leaky_slope: 0.1 };
    let mut store = ParamStore::new();
    enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    (enc, store)
}

#[test]
fn image_encoder_shapes_determinism_and_batch_independence() {
    let (enc, store) = image_encoder();
    let (enc2, store2) = image_encoder();
    assert_eq!(enc, enc2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let imgs = Tensor::from_vec(&[2, 3, 112, 112], (0..2 * 3 * 112 * 112).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let f = enc.forward(&store, &imgs).unwrap();
    let mut ls = vec![2];
    ls.extend_from_slice(&LOCAL_SHAPE);
    assert_eq!(f.local.shape(), ls.as_slice());
    assert_eq!(f.global.shape(), &[2, GLOBAL_DIM]);
    let g = enc2.forward(&store2, &imgs).unwrap();
    assert_eq!(f.global.data(), g.global.data());
    assert_eq!(f.local.data(), g.local.data());

    let single = imgs.narrow(0, 1, 1).unwrap().reshape(&[3, 112, 112]).unwrap();
    let s = enc.forward(&store, &single).unwrap();
    for (a, b) in s.global.data().iter().zip(&f.global.data()[GLOBAL_DIM..]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(enc.forward(&store, &Tensor::zeros(&[1, 3, 64, 64])).is_err());
}

proptest! {
    #[test]
    fn tokenize_layout(ws in proptest::collection::vec("[a-z]{1,6}", 1..30)) {
        let v = Vocabulary::from_corpus(ws.iter().map(String::as_str));
        let s = v.tokenize(&ws.join(" ")).unwrap();
        prop_assert_eq!(s.ids.len(), SEQ_LEN);
        let used = ws.len().min(MAX_WORDS) + 2;
        prop_assert_eq!(s.attention_mask.iter().filter(|&&m| m == 1).count(), used);
        prop_assert_eq!(s.ids[used - 1], v.sep_id());
        for (i, w) in ws.iter().take(MAX_WORDS).enumerate() {
            prop_assert_eq!(v.token(s.ids[i + 1]), Some(w.as_str()));
        }
        prop_assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}
