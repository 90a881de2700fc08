use super::*;
use crate::gradcheck::{check_model_gradients, GradCheckConfig};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Purpose::Init, 0)
}

fn dense_model(in_dim: usize, out_dim: usize, seed: u64) -> Model {
    let spec = ModelSpec {
        input_shape: vec![in_dim],
        layers: vec![LayerSpec::Dense { in_dim, out_dim }],
    };
    Model::new(spec, &mut rng(seed)).unwrap()
}

#[test]
fn dense_identity_passes_input_through() {
    let mut model = dense_model(2, 2, 0);
    let w = model.params_mut().get_mut("layer0.weight").unwrap();
    w.weight.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
    let (y, _) = model.forward_train(&x).unwrap();
    assert_eq!(y.data(), &[1.0, 2.0]);
}

#[test]
fn batchnorm_standardizes_two_points() {
    let spec = ModelSpec {
        input_shape: vec![1],
        layers: vec![LayerSpec::batchnorm(1)],
    };
    let mut model = Model::new(spec, &mut rng(0)).unwrap();
    let x = Tensor::from_vec(&[2, 1], vec![0.0, 2.0]).unwrap();
    let (y, _) = model.forward_train(&x).unwrap();
    // mean 1, population var 1 -> outputs (x-1)/sqrt(1+eps)
    assert!((y.data()[0] + 1.0).abs() < 1e-4, "{:?}", y.data());
    assert!((y.data()[1] - 1.0).abs() < 1e-4, "{:?}", y.data());
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let spec = ModelSpec {
        input_shape: vec![3],
        layers: vec![LayerSpec::batchnorm(3)],
    };
    let mut model = Model::new(spec, &mut rng(3)).unwrap();
    let mut g = stream(9, Purpose::Dataset, 0);
    let mut data = vec![0.0f32; 16 * 3];
    data.iter_mut().for_each(|v| *v = g.gen_range(-2.0..5.0));
    let x = Tensor::from_vec(&[16, 3], data).unwrap();
    let (y, _) = model.forward_train(&x).unwrap();
    for f in 0..3 {
        let col: Vec<f64> = (0..16).map(|b| y.data()[b * 3 + f] as f64).collect();
        let mean = col.iter().sum::<f64>() / 16.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-5, "feature {f} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "feature {f} var {var}");
    }
}

#[test]
fn eval_forward_is_pure_and_bit_identical() {
    let spec = ModelSpec {
        input_shape: vec![4],
        layers: vec![
            LayerSpec::Dense { in_dim: 4, out_dim: 8 },
            LayerSpec::batchnorm(8),
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 8, out_dim: 3 },
        ],
    };
    let model = Model::new(spec, &mut rng(1)).unwrap();
    let x = Tensor::from_vec(&[2, 4], (0..8).map(|i| i as f32 * 0.25).collect()).unwrap();
    let a = model.forward_eval(&x).unwrap();
    let b = model.forward_eval(&x).unwrap();
    assert!(a.bit_eq(&b));
}

#[test]
fn zero_dlogits_give_zero_gradients() {
    let mut model = dense_model(3, 2, 5);
    let x = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
    let (y, cache) = model.forward_train(&x).unwrap();
    let d = Tensor::zeros(y.shape());
    model.backward(&cache, &d).unwrap();
    for (_, e) in model.params().trainable() {
        assert!(e.gradient.data().iter().all(|&g| g == 0.0));
    }
}

#[test]
fn dense_gradient_is_input_outer_product() {
    // 1x1 case: y = w*x + b, dlogits = [[1]] -> dw = x, db = 1, scaled by B=1.
    let mut model = dense_model(1, 1, 7);
    let x = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
    let (_, cache) = model.forward_train(&x).unwrap();
    let d = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
    model.backward(&cache, &d).unwrap();
    assert_eq!(
        model.params().get("layer0.weight").unwrap().gradient.data(),
        &[3.0]
    );
    assert_eq!(
        model.params().get("layer0.bias").unwrap().gradient.data(),
        &[1.0]
    );
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let spec = ModelSpec {
        input_shape: vec![4],
        layers: vec![
            LayerSpec::Dense { in_dim: 4, out_dim: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 6, out_dim: 3 },
        ],
    };
    let model = Model::new(spec, &mut rng(11)).unwrap();
    let mut g = stream(11, Purpose::Dataset, 0);
    let mut data = vec![0.0f32; 16];
    data.iter_mut().for_each(|v| *v = g.gen_range(-1.0..1.0));
    let x = Tensor::from_vec(&[4, 4], data).unwrap();
    let report =
        check_model_gradients(&model, &x, &[0, 1, 2, 0], &GradCheckConfig::default()).unwrap();
    assert!(
        report.pass_fraction() >= 0.99,
        "pass {}/{} worst {}",
        report.passed,
        report.checked,
        report.worst_rel_err
    );
}

#[test]
fn conv_bn_model_gradients_match_finite_differences() {
    let spec = ModelSpec {
        input_shape: vec![1, 5, 5],
        layers: vec![
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: 2,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::batchnorm(2),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { in_dim: 50, out_dim: 3 },
        ],
    };
    let model = Model::new(spec, &mut rng(13)).unwrap();
    let mut g = stream(13, Purpose::Dataset, 0);
    let mut data = vec![0.0f32; 4 * 25];
    data.iter_mut().for_each(|v| *v = g.gen_range(-1.0..1.0));
    let x = Tensor::from_vec(&[4, 1, 5, 5], data).unwrap();
    let report =
        check_model_gradients(&model, &x, &[0, 1, 2, 1], &GradCheckConfig::default()).unwrap();
    assert!(
        report.pass_fraction() >= 0.99,
        "pass {}/{} worst {}",
        report.passed,
        report.checked,
        report.worst_rel_err
    );
}

#[test]
fn batch_shape_mismatch_is_config_error() {
    let mut model = dense_model(3, 2, 0);
    let x = Tensor::from_vec(&[2, 4], vec![0.0; 8]).unwrap();
    assert!(matches!(
        model.forward_train(&x),
        Err(crate::error::Error::Config(_))
    ));
}

#[test]
fn nonfinite_activation_names_the_layer() {
    let mut model = dense_model(2, 2, 0);
    model
        .params_mut()
        .get_mut("layer0.weight")
        .unwrap()
        .weight
        .data_mut()[0] = f32::INFINITY;
    let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
    let err = model.forward_train(&x).unwrap_err();
    assert!(err.to_string().contains("layer0"), "{err}");
}

#[test]
fn mismatched_cache_is_usage_error() {
    let mut a = dense_model(2, 2, 0);
    let spec = ModelSpec {
        input_shape: vec![2],
        layers: vec![
            LayerSpec::Dense { in_dim: 2, out_dim: 2 },
            LayerSpec::Relu,
        ],
    };
    let mut b = Model::new(spec, &mut rng(0)).unwrap();
    let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
    let (_, cache) = a.forward_train(&x).unwrap();
    let d = Tensor::zeros(&[1, 2]);
    assert!(matches!(
        b.backward(&cache, &d),
        Err(crate::error::Error::Usage(_))
    ));
}

#[test]
fn collect_stats_accumulates_across_calls() {
    let spec = ModelSpec {
        input_shape: vec![1],
        layers: vec![LayerSpec::batchnorm(1)],
    };
    let model = Model::new(spec, &mut rng(0)).unwrap();
    let mut collector = StatsCollector::new();
    let a = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
    let b = Tensor::from_vec(&[2, 1], vec![5.0, 7.0]).unwrap();
    model.forward_collect(&a, &mut collector).unwrap();
    model.forward_collect(&b, &mut collector).unwrap();
    let (_, stats) = collector.layers().next().unwrap();
    assert_eq!(stats.count, 4);
    assert!((stats.sum[0] - 16.0).abs() < 1e-12);
    assert!((stats.sumsq[0] - (1.0 + 9.0 + 25.0 + 49.0)).abs() < 1e-12);
}

#[test]
fn spec_requires_a_trainable_layer() {
    let spec = ModelSpec {
        input_shape: vec![4],
        layers: vec![LayerSpec::Relu, LayerSpec::Flatten],
    };
    assert!(matches!(
        spec.validate(),
        Err(crate::error::Error::Config(_))
    ));
}

#[test]
fn spec_rejects_incompatible_adjacent_shapes() {
    let spec = ModelSpec {
        input_shape: vec![4],
        layers: vec![
            LayerSpec::Dense { in_dim: 4, out_dim: 8 },
            LayerSpec::Dense { in_dim: 9, out_dim: 2 },
        ],
    };
    assert!(matches!(
        spec.validate(),
        Err(crate::error::Error::Config(_))
    ));
}
