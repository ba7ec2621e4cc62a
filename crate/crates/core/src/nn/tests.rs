use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn half_sq_norm(m: &Matrix<f64>) -> f64 {
    m.as_slice().iter().map(|v| 0.5 * v * v).sum()
}

#[test]
fn identity_layer_passes_input_through() {
    let layer = Linear::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
    let y = layer.forward(&Matrix::row_vector(&[1.0, 2.0])).unwrap();
    assert_eq!(y.as_slice(), &[1.0, 2.0]);
}

#[test]
fn zero_mask_leaves_only_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut layer = Linear::<f64>::new(3, 2, &mut rng);
    layer.bias_mut().copy_from_slice(&[0.25, -4.0]);
    let layer = layer.with_mask(vec![false; 6]).unwrap();
    let y = layer.forward(&Matrix::row_vector(&[7.0, -3.0, 1.5])).unwrap();
    assert_eq!(y.as_slice(), &[0.25, -4.0]);
}

#[test]
fn shape_mismatch_is_a_configuration_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = Linear::<f64>::new(3, 2, &mut rng);
    let err = layer.forward(&Matrix::row_vector(&[1.0, 2.0])).unwrap_err();
    assert!(matches!(err, crate::Error::Shape { expected: 3, got: 2, .. }));
}

#[test]
fn two_layer_tanh_forward_matches_hand_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::<f64>::new(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
    let x = [0.5, -1.0, 2.0];
    let (l1, l2) = (&net.layers()[0], &net.layers()[1]);
    let mut h = [0.0; 4];
    for (j, hj) in h.iter_mut().enumerate() {
        let mut s = l1.bias()[j];
        for (i, xi) in x.iter().enumerate() {
            s += l1.weight()[j * 3 + i] * xi;
        }
        *hj = s.tanh();
    }
    let mut expected = [0.0; 2];
    for (j, e) in expected.iter_mut().enumerate() {
        *e = l2.bias()[j];
        for (i, hi) in h.iter().enumerate() {
            *e += l2.weight()[j * 4 + i] * hi;
        }
    }
    let y = net.forward(&Matrix::row_vector(&x)).unwrap();
    for (a, b) in y.as_slice().iter().zip(expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn linear_half_norm_gradient_is_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Linear::<f64>::new(3, 2, &mut rng);
    let x = Matrix::row_vector(&[0.3, -0.7, 1.1]);
    let y = layer.forward(&x).unwrap();
    // dL/dy = y for L = ½‖y‖²
    let (_, g) = layer.backward(&x, &y);
    for j in 0..2 {
        for i in 0..3 {
            let expected = y.get(0, j) * x.get(0, i);
            assert!((g.weight[j * 3 + i] - expected).abs() < 1e-15);
        }
        assert!((g.bias[j] - y.get(0, j)).abs() < 1e-15);
    }
}

#[test]
fn masked_positions_get_zero_gradient_and_do_not_affect_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
    let layer = Linear::<f64>::new(4, 3, &mut rng).with_mask(mask.clone()).unwrap();
    let x = random_matrix(&mut rng, 5, 4);
    let y = layer.forward(&x).unwrap();
    let (_, g) = layer.backward(&x, &y);
    let mut perturbed = layer.clone();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            assert_eq!(g.weight[i], 0.0);
            perturbed.weight_mut()[i] = 123.456;
        }
    }
    assert_eq!(perturbed.forward(&x).unwrap(), y);
}

fn check_mlp_gradient(net: &Mlp<f64>, x: &Matrix<f64>) -> f64 {
    let (out, cache) = net.forward_train(x).unwrap();
    let (_, analytic) = net.backward(&cache, &out);
    let numeric = finite_difference_gradient(net, 1e-5, |m: &Mlp<f64>| {
        Ok(half_sq_norm(&m.forward(x).unwrap()))
    })
    .unwrap();
    max_relative_error(&analytic, &numeric, 1e-6)
}

#[test]
fn gradients_match_finite_differences_for_every_layer_type() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..10 {
        let x = random_matrix(&mut rng, 4, 3);
        let relu = Mlp::<f64>::new(&[3, 5, 4, 2], Activation::Relu, &mut rng).unwrap();
        let tanh = Mlp::<f64>::new(&[3, 6, 2], Activation::Tanh, &mut rng).unwrap();
        let residual = Mlp::<f64>::new(&[3, 5, 5, 5, 2], Activation::Tanh, &mut rng)
            .unwrap()
            .with_residual(true);
        let mask: Vec<bool> = (0..15).map(|_| rng.random_bool(0.6)).collect();
        let masked = Mlp::from_layers(
            vec![
                Linear::new(3, 5, &mut rng).with_mask(mask).unwrap(),
                Linear::new(5, 2, &mut rng),
            ],
            Activation::Tanh,
            false,
        )
        .unwrap();
        for (name, net) in [("relu", &relu), ("tanh", &tanh), ("residual", &residual), ("masked", &masked)] {
            let err = check_mlp_gradient(net, &x);
            assert!(err < 1e-4, "{name} trial {trial}: relative error {err}");
        }
    }
}

#[test]
fn gradient_of_input_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = Mlp::<f64>::new(&[3, 8, 2], Activation::Tanh, &mut rng).unwrap();
    let x = random_matrix(&mut rng, 2, 3);
    let (out, cache) = net.forward_train(&x).unwrap();
    let (dx, _) = net.backward(&cache, &out);
    let h = 1e-5;
    for i in 0..x.as_slice().len() {
        let mut up = x.clone();
        up.as_mut_slice()[i] += h;
        let mut down = x.clone();
        down.as_mut_slice()[i] -= h;
        let fd = (half_sq_norm(&net.forward(&up).unwrap()) - half_sq_norm(&net.forward(&down).unwrap())) / (2.0 * h);
        assert!((fd - dx.as_slice()[i]).abs() < 1e-8);
    }
}

fn linear_regression_problem(n: usize, seed: u64) -> MseObjective<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = random_matrix(&mut rng, n, 2);
    let targets = Matrix::from_vec(
        n,
        1,
        (0..n).map(|i| 1.5 * inputs.get(i, 0) - 0.5 * inputs.get(i, 1) + 0.25).collect(),
    )
    .unwrap();
    MseObjective { inputs, targets }
}

#[test]
fn realizable_linear_target_is_learned() {
    let objective = linear_regression_problem(500, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Mlp::<f64>::new(&[2, 16, 1], Activation::Relu, &mut rng).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        patience_epochs: 30,
        max_epochs: 400,
        ..TrainConfig::default()
    };
    let log = train(&mut net, &objective, 500, &config).unwrap();
    assert!(
        log.best_validation_loss < 1e-3 * log.initial_validation_loss,
        "{} vs initial {}",
        log.best_validation_loss,
        log.initial_validation_loss
    );
}

#[test]
fn zero_patience_runs_exactly_one_epoch() {
    let objective = linear_regression_problem(100, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = Mlp::<f64>::new(&[2, 4, 1], Activation::Relu, &mut rng).unwrap();
    let config = TrainConfig {
        patience_epochs: 0,
        ..TrainConfig::default()
    };
    let log = train(&mut net, &objective, 100, &config).unwrap();
    assert_eq!(log.epochs.len(), 1);
}

#[test]
fn training_is_deterministic_and_restores_best_epoch() {
    let objective = linear_regression_problem(300, 7);
    let config = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 16,
        patience_epochs: 5,
        max_epochs: 60,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Mlp::<f64>::new(&[2, 8, 1], Activation::Tanh, &mut rng).unwrap();
        let log = train(&mut net, &objective, 300, &config).unwrap();
        (net, log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(log_a, log_b);
    let bits = |m: &Mlp<f64>| -> Vec<u64> { m.parameters().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(&a), bits(&b));

    let min = log_a.epochs.iter().map(|e| e.validation_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(log_a.best_validation_loss, min);
    assert_eq!(log_a.epochs[log_a.best_epoch - 1].validation_loss, min);
    let (_, val) = config.split(300).unwrap();
    let restored = objective.loss(&a, &val).unwrap();
    assert!((restored - min).abs() < 1e-12);
}

#[test]
fn validation_split_must_be_nonempty() {
    let config = TrainConfig {
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    assert!(config.split(1).is_err());
    let (train, val) = config.split(1000).unwrap();
    assert_eq!((train.len(), val.len()), (900, 100));
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut objective = linear_regression_problem(50, 12);
    objective.targets.as_mut_slice()[3] = f64::NAN;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Mlp::<f64>::new(&[2, 4, 1], Activation::Relu, &mut rng).unwrap();
    let config = TrainConfig {
        validation_fraction: 0.5,
        ..TrainConfig::default()
    };
    let (train_rows, _) = config.split(50).unwrap();
    let err = match train(&mut net, &objective, 50, &config) {
        Err(e) => e,
        Ok(_) => panic!("NaN target must abort training"),
    };
    let has_nan_in_train = train_rows.contains(&3);
    assert!(matches!(err, crate::Error::Training { .. }), "{err} (nan in train: {has_nan_in_train})");
}

#[test]
fn f32_networks_run_the_same_code_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = Mlp::<f32>::new(&[3, 4, 1], Activation::Relu, &mut rng).unwrap();
    let y = net.forward(&Matrix::row_vector(&[1.0f32, 2.0, 3.0])).unwrap();
    assert!(y.all_finite());
}
