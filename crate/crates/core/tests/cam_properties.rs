use hrcam_core::backbone::network::{backward, concat_features, forward, forward_traced, head_features, predict, BackwardOptions};
use hrcam_core::backbone::params::{conv_bias_name, conv_weight_name, CLASSIFIER_WEIGHT};
use hrcam_core::backbone::{build_model, HeadWeights, ModelSpec};
use hrcam_core::cam::{default_gradcam_tap, feature_stack, grad_cam, gradcam_weights, hrcam, normalize_cam, zhou_cam};
use hrcam_core::ops::{bilinear_upsample, dense_forward, gap_forward, softmax};
use hrcam_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(spec: &ModelSpec, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = spec.input_shape;
    Tensor::from_fn(&[c, h, w], |_| rng.random_range(0.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn small_spec() -> ModelSpec {
    ModelSpec::desk(&[3, 5, 4], 16, false)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn hrcam_is_linear_in_head_weights(seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let spec = small_spec();
        let (params, taps) = build_model::<f64>(&spec, seed).unwrap();
        let h1 = HeadWeights::<f64>::init(&taps, 2, seed ^ 1);
        let h2 = HeadWeights::<f64>::init(&taps, 2, seed ^ 2);
        let mixed = HeadWeights {
            weight: Tensor::new(h1.weight.shape().to_vec(), h1.weight.data().iter().zip(h2.weight.data()).map(|(x, y)| a * x + b * y).collect()).unwrap(),
            bias: h1.bias.clone(),
        };
        let img = image(&spec, seed);
        let m1 = hrcam(&img, &params, &spec, &taps, &h1, 1).unwrap();
        let m2 = hrcam(&img, &params, &spec, &taps, &h2, 1).unwrap();
        let mm = hrcam(&img, &params, &spec, &taps, &mixed, 1).unwrap();
        let want: Vec<f64> = m1.values.data().iter().zip(m2.values.data()).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(max_abs_diff(mm.values.data(), &want) < 1e-9);
    }

    #[test]
    fn normalized_map_ignores_positive_weight_scale(seed in any::<u64>(), s in 0.01..100.0f64) {
        let spec = small_spec();
        let (params, taps) = build_model::<f64>(&spec, seed).unwrap();
        let h = HeadWeights::<f64>::init(&taps, 2, seed);
        let scaled = HeadWeights { weight: h.weight.map(|v| v * s), bias: h.bias.clone() };
        let img = image(&spec, seed);
        let a = normalize_cam(&hrcam(&img, &params, &spec, &taps, &h, 0).unwrap());
        let b = normalize_cam(&hrcam(&img, &params, &spec, &taps, &scaled, 0).unwrap());
        prop_assert!(max_abs_diff(a.values.data(), b.values.data()) < 1e-9);
        prop_assert!(a.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gap_of_upsampled_constant_is_the_constant(c in -5.0..5.0f64, h in 1..6usize, w in 1..6usize, fy in 1..5usize, fx in 1..5usize) {
        let t = Tensor::filled(&[1, 2, h, w], c);
        let up = bilinear_upsample(&t, h * fy, w * fx).unwrap();
        prop_assert!(up.data().iter().all(|&v| v == c));
        prop_assert!(gap_forward(&up).unwrap().data().iter().all(|&v| (v - c).abs() <= 1e-12 * c.abs().max(1.0)));
    }
}

#[test]
fn gradcam_alphas_at_the_final_tap_are_classifier_weights_over_area() {
    let spec = small_spec();
    let (params, taps) = build_model::<f64>(&spec, 11).unwrap();
    let last = taps.len() - 1;
    let [h, w] = [taps.taps[last].height, taps.taps[last].width];
    let cls = params.get(CLASSIFIER_WEIGHT).unwrap();
    for class_id in 0..2 {
        let (alphas, feats) = gradcam_weights(&image(&spec, 3), &params, &spec, class_id, last).unwrap();
        assert_eq!(feats.shape(), &[1, taps.taps[last].channels, h, w]);
        for (k, a) in alphas.iter().enumerate() {
            let want = cls.at(&[k, class_id]) / (h * w) as f64;
            assert!((a - want).abs() < 1e-12, "channel {k}: {a} vs {want}");
        }
    }
}

#[test]
fn gradcam_alphas_average_a_tap_gradient_that_matches_finite_differences() {
    // scaling a plain stage's last conv by s turns its tap into s * f, so d logit / ds = sum(g * f)
    let spec = small_spec();
    let (params, taps) = build_model::<f64>(&spec, 12).unwrap();
    let img = image(&spec, 4).reshape(&[1, 1, 16, 16]).unwrap();
    let tap = default_gradcam_tap(&taps);
    let stage = taps.taps[tap].stage;
    let (alphas, feats) = gradcam_weights(&img, &params, &spec, 1, tap).unwrap();
    let (_, trace) = forward_traced(&params, &spec, &img).unwrap();
    let seed = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
    let grads = backward(&params, &spec, &trace, &seed, BackwardOptions { param_grads: false, stop_at_stage: Some(stage) }).unwrap();
    let g = grads.taps[tap].as_ref().unwrap();
    let [_, c, h, w] = g.dims4().unwrap();
    for (k, a) in alphas.iter().enumerate() {
        let mean = g.data()[k * h * w..][..h * w].iter().sum::<f64>() / (h * w) as f64;
        assert!((a - mean).abs() < 1e-15);
    }
    assert_eq!(c, alphas.len());
    let predicted: f64 = g.data().iter().zip(feats.data()).map(|(a, b)| a * b).sum();
    let logit = |s: f64| {
        let mut p = params.clone();
        let j = spec.stages[stage].convs.len() - 1;
        for name in [conv_weight_name(stage, j), conv_bias_name(stage, j)] {
            let t = p.get_mut(&name).unwrap();
            *t = t.map(|v| v * s);
        }
        forward(&p, &spec, &img).unwrap().logits.at(&[0, 1])
    };
    let e = 1e-5;
    let numeric = (logit(1.0 + e) - logit(1.0 - e)) / (2.0 * e);
    assert!((numeric - predicted).abs() <= 1e-3 * numeric.abs().max(1.0), "{numeric} vs {predicted}");
}

#[test]
fn gradcam_is_non_negative_and_at_input_resolution() {
    let spec = small_spec();
    let (params, taps) = build_model::<f64>(&spec, 13).unwrap();
    for layer in 0..taps.len() {
        let m = grad_cam(&image(&spec, 5), &params, &spec, 1, Some(layer)).unwrap();
        assert_eq!(m.values.shape(), &[16, 16]);
        assert!(m.values.data().iter().all(|&v| v >= 0.0));
    }
    assert!(grad_cam(&image(&spec, 5), &params, &spec, 1, Some(taps.len())).is_err());
}

#[test]
fn zhou_map_is_the_upsampled_final_layer_sum() {
    let spec = small_spec();
    let (params, _) = build_model::<f64>(&spec, 14).unwrap();
    let img = image(&spec, 6);
    let out = forward(&params, &spec, &img.clone().reshape(&[1, 1, 16, 16]).unwrap()).unwrap();
    let cls = params.get(CLASSIFIER_WEIGHT).unwrap();
    let [_, c, h, w] = out.features.dims4().unwrap();
    let mut raw = Tensor::zeros(&[1, 1, h, w]);
    for k in 0..c {
        for p in 0..h * w {
            raw.data_mut()[p] += cls.at(&[k, 0]) * out.features.data()[k * h * w + p];
        }
    }
    let want = bilinear_upsample(&raw, 16, 16).unwrap();
    let got = zhou_cam(&img, &params, &spec, 0).unwrap();
    assert!(max_abs_diff(got.values.data(), want.data()) < 1e-12);
}

#[test]
fn stack_concatenates_taps_in_order() {
    let spec = small_spec();
    let (params, taps) = build_model::<f64>(&spec, 15).unwrap();
    let img = image(&spec, 7);
    let out = forward(&params, &spec, &img.clone().reshape(&[1, 1, 16, 16]).unwrap()).unwrap();
    assert_eq!(out.taps.len(), taps.len());
    for (t, tap) in out.taps.iter().zip(&taps.taps) {
        assert_eq!(t.shape(), &[1, tap.channels, tap.height, tap.width]);
    }
    let stack = feature_stack(&img, &params, &spec).unwrap();
    let mut want = Vec::new();
    for t in &out.taps {
        want.extend_from_slice(bilinear_upsample(t, 16, 16).unwrap().data());
    }
    assert_eq!(stack.data(), want.as_slice());
    assert_eq!(concat_features(&out.taps, 16, 16).unwrap(), stack);
}

#[test]
fn predict_is_softmax_of_the_head_over_pooled_stack() {
    let spec = small_spec();
    let (params, taps) = build_model::<f64>(&spec, 16).unwrap();
    let head = HeadWeights::<f64>::init(&taps, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = Tensor::from_fn(&[3, 1, 16, 16], |_| rng.random_range(0.0..1.0));
    let feats = head_features(&params, &spec, &batch, false).unwrap();
    let stack = concat_features(&forward(&params, &spec, &batch).unwrap().taps, 16, 16).unwrap();
    assert_eq!(feats, gap_forward(&stack).unwrap());
    let want = softmax(&dense_forward(&feats, &head.weight, &head.bias).unwrap()).unwrap();
    assert_eq!(predict(&params, &spec, &taps, &head, &batch).unwrap(), want);
    let fast = head_features(&params, &spec, &batch, true).unwrap();
    assert_eq!(fast.shape(), feats.shape());
}
