use cgfr_tensor::gradcheck::{check_param_gradients, GradCheckConfig};
use cgfr_tensor::suite::op_gradient_suite;
use cgfr_tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..5 {
        for (name, rep) in op_gradient_suite(seed).unwrap() {
            assert!(rep.checked > 0, "{name}: nothing checked");
            assert!(rep.max_rel_err < 1e-4, "{name} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn param_gradients_through_a_small_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    store.init_weight(&mut rng, "w1", &[3, 2, 3, 3], 18).unwrap();
    store.init_weight(&mut rng, "b1", &[3], 3).unwrap();
    store.init_weight(&mut rng, "fc", &[12, 2], 12).unwrap();
    let x = cgfr_tensor::Tensor::from_vec(&[2, 4, 4], (0..32).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4).collect()).unwrap();
    let names: Vec<String> = store.names().map(String::from).collect();
    let rep = check_param_gradients(
        &mut store,
        &names,
        |s| {
            let h = x.conv2d(&s.get("w1")?, Some(&s.get("b1")?), (1, 1), (1, 1))?.leaky_relu(0.2).maxpool2d(2, 2)?;
            let logits = h.reshape(&[1, 12])?.matmul(&s.get("fc")?)?;
            logits.cross_entropy(&[1])
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    assert!(rep.checked > 50);
}
