use hcr_core::nn::{backward, forward, Activation, Layer, NetworkSpec, Parameters, Tensor};
use hcr_core::oracles::{finite_difference_check, naive_forward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_hot_input(rng: &mut ChaCha8Rng, batch: usize, channels: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; batch * channels * h * w];
    for b in 0..batch {
        for cell in 0..h * w {
            let c = rng.gen_range(0..channels);
            data[((b * channels + c) * h * w) + cell] = 1.0;
        }
    }
    Tensor::new(vec![batch, channels, h, w], data).unwrap()
}

#[test]
fn default_network_matches_naive_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = NetworkSpec::default_q_network([6, 12, 12], 8);
    let params = Parameters::<f32>::init(&spec, 5).unwrap();
    let input = one_hot_input(&mut rng, 4, 6, 12, 12);
    let out = forward(&spec, &params, &input).unwrap();
    let p64 = params.cast::<f64>();
    for b in 0..4 {
        let sample: Vec<f64> = input.row(b).iter().map(|&v| v as f64).collect();
        let (expected, _) = naive_forward(&spec, &p64, &sample);
        for (a, e) in out.row(b).iter().zip(&expected) {
            assert!((*a as f64 - e).abs() < 1e-5, "{a} vs {e}");
        }
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = NetworkSpec::default_q_network([6, 12, 12], 8);
    let params = Parameters::<f32>::init(&spec, 1).unwrap();
    let input = one_hot_input(&mut rng, 3, 6, 12, 12);
    let g = Tensor::from_fn(vec![3, 8], |i| (i as f32 * 0.37).sin());
    let a = forward(&spec, &params, &input).unwrap();
    let b = forward(&spec, &params, &input).unwrap();
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let ga = backward(&spec, &params, &input, &g).unwrap();
    let gb = backward(&spec, &params, &input, &g).unwrap();
    assert_eq!(ga, gb);
}

fn random_spec(rng: &mut ChaCha8Rng, case: usize) -> NetworkSpec {
    let act = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.7) { Activation::Relu } else { Activation::Identity };
    let actions = rng.gen_range(2..5);
    match case % 3 {
        0 => NetworkSpec {
            input: vec![rng.gen_range(2..6)],
            layers: vec![
                Layer::Dense { units: rng.gen_range(2..6), activation: act(rng) },
                Layer::Dense { units: actions, activation: Activation::Identity },
            ],
        },
        1 => NetworkSpec {
            input: vec![rng.gen_range(1..3), rng.gen_range(4..7), rng.gen_range(4..7)],
            layers: vec![
                Layer::Convolution { filters: rng.gen_range(1..4), kernel: 3, stride: rng.gen_range(1..3), activation: act(rng) },
                Layer::Flatten,
                Layer::Dense { units: actions, activation: Activation::Identity },
            ],
        },
        _ => NetworkSpec {
            input: vec![rng.gen_range(1..3), 7, 7],
            layers: vec![
                Layer::Convolution { filters: 2, kernel: 2, stride: 1, activation: act(rng) },
                Layer::Convolution { filters: 2, kernel: 3, stride: 2, activation: act(rng) },
                Layer::Flatten,
                Layer::Dense { units: 4, activation: act(rng) },
                Layer::Dense { units: actions, activation: Activation::Identity },
            ],
        },
    }
}

#[test]
fn gradients_match_central_differences_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total_checked = 0;
    for case in 0..24 {
        let spec = random_spec(&mut rng, case);
        let params = Parameters::<f64>::init(&spec, rng.gen()).unwrap();
        let per_sample: usize = spec.input.iter().product();
        let batch = 2;
        let input = Tensor::from_fn([vec![batch], spec.input.clone()].concat(), |_| rng.gen_range(-1.0..1.0));
        let actions = spec.output_units().unwrap();
        let g = Tensor::from_fn(vec![batch, actions], |_| rng.gen_range(-1.0..1.0));
        let analytic = backward(&spec, &params, &input, &g).unwrap();
        let samples: Vec<Vec<f64>> = (0..batch).map(|b| input.data()[b * per_sample..(b + 1) * per_sample].to_vec()).collect();
        let weights: Vec<Vec<f64>> = (0..batch).map(|b| g.row(b).to_vec()).collect();
        let check = finite_difference_check(&spec, &params, &samples, &weights, &analytic, 1e-3);
        assert!(check.max_relative_error < 1e-4, "case {case}: {check:?}");
        assert!(check.checked > check.skipped, "case {case}: {check:?}");
        total_checked += check.checked;
    }
    assert!(total_checked > 500);
}
