mod common;

use common::random_archs;
use densiprune::arch::{builtin_arch, resize_arch, Shape3};
use densiprune::checkpoint;
use densiprune::cost::network_cost;
use densiprune::model::{Mode, Model};
use densiprune::tensor::Tensor;
use proptest::prelude::*;
use std::path::Path;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resize_never_grows_and_keeps_a_channel(ae in prop::collection::vec(0.0f64..=1.0, 9)) {
        let base = builtin_arch("vgg-lite", Shape3::new(1, 28, 28), 10).unwrap();
        prop_assume!(ae.len() >= base.num_prunable());
        let ae = &ae[..base.num_prunable()];
        let pruned = resize_arch(&base, ae).unwrap();
        for (new, old) in pruned.prunable_sizes().iter().zip(base.prunable_sizes()) {
            prop_assert!(*new >= 1 && *new <= old);
        }
        let before = network_cost(&base).unwrap();
        let after = network_cost(&pruned).unwrap();
        prop_assert!(after.total_macs <= before.total_macs);
        prop_assert!(after.total_params <= before.total_params);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_outputs(index in 0usize..12, seed in any::<u64>()) {
        let arch = &random_archs(12, 77)[index];
        let model = Model::<f64>::instantiate(arch, seed).unwrap();
        let restored: Model<f64> = checkpoint::decode(&checkpoint::encode(&model), Path::new("mem")).unwrap();
        prop_assert_eq!(restored.arch(), model.arch());
        let [c, h, w] = arch.input_shape;
        let x = Tensor::from_vec(&[1, c, h, w], (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = model.clone().forward(&x, Mode::Eval).unwrap();
        let b = restored.clone().forward(&x, Mode::Eval).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn forward_shape_follows_arch(index in 0usize..20, batch in 1usize..4) {
        let arch = &random_archs(20, 5)[index];
        let mut model = Model::<f32>::instantiate(arch, 1).unwrap();
        let [c, h, w] = arch.input_shape;
        let x = Tensor::<f32>::zeros(&[batch, c, h, w]);
        let y = model.forward(&x, Mode::Eval).unwrap();
        prop_assert_eq!(y.shape(), &[batch, arch.num_classes][..]);
    }
}

#[test]
fn f32_and_f64_models_agree() {
    let arch = builtin_arch("vgg-lite", Shape3::new(1, 28, 28), 10).unwrap();
    let mut m64 = Model::<f64>::instantiate(&arch, 3).unwrap();
    let mut m32 = Model::<f32>::instantiate(&arch, 3).unwrap();
    let data: Vec<f64> = (0..2 * 28 * 28).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect();
    let y64 = m64.forward(&Tensor::from_vec(&[2, 1, 28, 28], data.clone()).unwrap(), Mode::Eval).unwrap();
    let y32 = m32.forward(&Tensor::<f32>::from_f64(&[2, 1, 28, 28], &data).unwrap(), Mode::Eval).unwrap();
    for (a, b) in y64.data().iter().zip(y32.data()) {
        assert!((a - *b as f64).abs() < 1e-3 * (1.0 + a.abs()), "{a} vs {b}");
    }
}
