mod common;

use common::{loop_nest_conv, loop_nest_macs, random_tensor};
use densiprune::arch::{builtin_arch, ArchSpec, LayerSpec, Shape3};
use densiprune::cost::{layer_macs, layer_params, network_cost, network_cost_with, CostConventions};
use densiprune::model::Model;
use densiprune::nn::conv::conv_output_size;
use densiprune::nn::Conv2d;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn single_conv(n: usize, m: usize, k: usize, i: usize, s: usize, p: usize) -> ArchSpec {
    ArchSpec {
        name: "one".into(),
        input_shape: [n, i, i],
        num_classes: 2,
        layers: vec![LayerSpec::conv(m, k, s, p), LayerSpec::relu(true), LayerSpec::Fc { out_features: 2 }],
    }
}

#[test]
fn macs_match_loop_nest_exhaustively() {
    let mut checked = 0;
    for i in 1..=8u64 {
        for k in [1u64, 3] {
            for n in 1..=4u64 {
                for m in 1..=4u64 {
                    for s in [1u64, 2] {
                        for p in [0u64, 1] {
                            let brute = loop_nest_macs(n, m, k, i, s, p);
                            match conv_output_size(i as usize, k as usize, s as usize, p as usize) {
                                Ok(o) => {
                                    assert_eq!(layer_macs(n, m, k, o as u64), brute, "n{n} m{m} k{k} i{i} s{s} p{p}");
                                    let arch = single_conv(n as usize, m as usize, k as usize, i as usize, s as usize, p as usize);
                                    let report = network_cost(&arch).unwrap();
                                    assert_eq!(report.per_layer[0].macs, brute);
                                    assert_eq!(report.per_layer[0].params, layer_params(n, m, k));
                                    checked += 1;
                                }
                                Err(_) => assert_eq!(brute, 0),
                            }
                        }
                    }
                }
            }
        }
    }
    // 1024 shapes minus the 64 where a 3x3 kernel does not fit unpadded
    assert_eq!(checked, 960);
}

#[test]
fn cost_params_match_instantiated_weights() {
    let cases = [
        ("vgg-lite", Shape3::new(1, 28, 28), 10),
        ("resnet-lite", Shape3::new(3, 32, 32), 10),
        ("vgg19", Shape3::new(3, 32, 32), 10),
        ("resnet18", Shape3::new(3, 32, 32), 100),
    ];
    for (name, input, classes) in cases {
        let arch = builtin_arch(name, input, classes).unwrap();
        let model = Model::<f32>::build(&arch).unwrap();
        let plain = network_cost(&arch).unwrap();
        assert_eq!(plain.total_params, model.weight_count() as u64, "{name}");
        let with_bias = network_cost_with(
            &arch,
            CostConventions {
                include_bias: true,
                count_projections: true,
            },
        )
        .unwrap();
        assert_eq!(with_bias.total_params, model.param_count() as u64, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_forward_matches_loop_nest(
        seed in any::<u64>(),
        n in 1usize..4,
        m in 1usize..4,
        k in prop::sample::select(vec![1usize, 3]),
        i in 3usize..8,
        s in 1usize..3,
        p in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Conv2d::<f64>::new(n, m, k, s, p, true);
        conv.init(&mut rng);
        let bias: Vec<f64> = (0..m).map(|j| j as f64 * 0.25 - 0.3).collect();
        conv.params.bias.as_mut().unwrap().value.data_mut().copy_from_slice(&bias);
        let x = random_tensor(&mut rng, &[2, n, i, i]);
        let got = conv.forward(&x, false).unwrap();
        let want = loop_nest_conv(&x, &conv.params.weights.value, Some(&bias), s, p);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }
}
