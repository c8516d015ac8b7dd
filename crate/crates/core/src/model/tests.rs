use proptest::prelude::*;

use super::*;
use crate::objective::entropy_loss;
use crate::stream::{make_source, LabeledSet, SourceSpec};

fn spec() -> ModelSpec {
    ModelSpec::default()
}

/// Straight-line forward: dense, BN with either batch or stored statistics,
/// ReLU, softmax. Shares nothing with the layer code.
fn oracle_probs(model: &Model, x: &Matrix, use_batch: bool) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.to_vec()).collect();
    for layer in model.layers() {
        rows = match layer {
            Layer::Dense(d) => rows
                .iter()
                .map(|r| {
                    (0..d.output)
                        .map(|o| {
                            let mut acc = d.bias[o];
                            for i in 0..d.input {
                                acc += d.weight[o * d.input + i] * r[i];
                            }
                            acc
                        })
                        .collect()
                })
                .collect(),
            Layer::BatchNorm(bn) => {
                let n = rows.len() as f64;
                let mut out = rows.clone();
                for j in 0..bn.width {
                    let (mu, var) = if use_batch {
                        let mu = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                        let var = rows.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / n;
                        (mu, var)
                    } else {
                        (bn.running_mean[j], bn.running_var[j])
                    };
                    for (o, r) in out.iter_mut().zip(&rows) {
                        o[j] = bn.gamma[j] * (r[j] - mu) / (var + BN_EPS).sqrt() + bn.beta[j];
                    }
                }
                out
            }
            Layer::Relu { .. } => rows
                .iter()
                .map(|r| r.iter().map(|v| v.max(0.0)).collect())
                .collect(),
        };
    }
    rows.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn entropy_at(model: &Model, x: &Matrix, policy: &NormPolicy) -> f64 {
    entropy_loss(&model.forward(x, policy).unwrap().probs).unwrap()
}

fn relu_pattern(model: &Model, x: &Matrix, policy: &NormPolicy) -> Vec<bool> {
    let pass = model.forward(x, policy).unwrap();
    pass.caches
        .iter()
        .filter_map(|c| match c {
            layer::LayerCache::Relu { input } => Some(input.data().iter().map(|v| *v > 0.0)),
            _ => None,
        })
        .flatten()
        .collect()
}

/// Central differences against `backward`. Coordinates whose ±h probes land
/// on different ReLU activation patterns straddle a kink, where the loss is
/// not differentiable; those are skipped and counted.
fn check_gradients(model: &Model, x: &Matrix, policy: &NormPolicy) -> (usize, usize) {
    let pass = model.forward(x, policy).unwrap();
    let g_logits = crate::objective::entropy_loss_grad(&pass.logits).unwrap();
    let grads = model.backward(&pass, &g_logits).unwrap();
    let base = model.params();
    let adaptable: Vec<usize> = (0..base.len()).filter(|&i| model.adapt_mask()[i]).collect();
    assert_eq!(grads.len(), adaptable.len());
    let h = 1e-4;
    let mut probe = model.clone();
    let mut skipped = 0;
    for (k, &i) in adaptable.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p).unwrap();
        let up = entropy_at(&probe, x, policy);
        let up_pattern = relu_pattern(&probe, x, policy);
        p[i] = base[i] - h;
        probe.set_params(&p).unwrap();
        let down = entropy_at(&probe, x, policy);
        if relu_pattern(&probe, x, policy) != up_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.values()[k];
        let scale = analytic.abs().max(numeric.abs());
        assert!(
            (analytic - numeric).abs() <= 1e-4 * scale + 1e-9,
            "param {i}: analytic {analytic} numeric {numeric}"
        );
    }
    (adaptable.len(), skipped)
}

#[test]
fn forward_matches_oracle() {
    for seed in 0..10 {
        let (model, x) = random_case(&spec(), 9, seed);
        for (policy, use_batch) in [(NormPolicy::test_batch(), true), (NormPolicy::train_running(), false)] {
            let pass = model.forward(&x, &policy).unwrap();
            let want = oracle_probs(&model, &x, use_batch);
            for (got, want) in pass.probs.row_iter().zip(&want) {
                for (a, b) in got.iter().zip(want) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
            assert_eq!(pass.features.shape(), (9, 32));
        }
    }
}

#[test]
fn zero_head_gives_uniform_predictions() {
    let mut model = Model::new(&spec(), 3).unwrap();
    if let Some(Layer::Dense(d)) = model.layers_mut().last_mut() {
        d.weight.iter_mut().for_each(|w| *w = 0.0);
        d.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    model.touch();
    let (_, x) = random_case(&spec(), 5, 3);
    let pass = model.forward(&x, &NormPolicy::test_batch()).unwrap();
    for row in pass.probs.row_iter() {
        for &p in row {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn duplicate_rows_give_identical_predictions() {
    let (model, x) = random_case(&spec(), 4, 11);
    let rows: Vec<Vec<f64>> = (0..6).map(|i| x.row(i % 2).to_vec()).collect();
    let dup = Matrix::from_rows(&rows).unwrap();
    let pass = model.forward(&dup, &NormPolicy::test_batch()).unwrap();
    assert_eq!(pass.probs.row(0), pass.probs.row(2));
    assert_eq!(pass.probs.row(1), pass.probs.row(5));
}

#[test]
fn forward_rejects_wrong_width() {
    let model = Model::new(&spec(), 0).unwrap();
    let x = Matrix::zeros(3, 5);
    assert!(matches!(model.forward(&x, &NormPolicy::test_batch()), Err(Error::Dimension(_))));
}

#[test]
fn test_batch_normalises_to_affine_parameters() {
    let (model, x) = random_case(&spec(), 64, 5);
    let pass = model.forward(&x, &NormPolicy::test_batch()).unwrap();
    // output of the first BN layer is cached as the input of the following ReLU
    let bn = match &model.layers()[1] {
        Layer::BatchNorm(bn) => bn.clone(),
        _ => unreachable!(),
    };
    let relu_in = match &pass.caches[2] {
        layer::LayerCache::Relu { input } => input.clone(),
        _ => unreachable!(),
    };
    let n = relu_in.rows() as f64;
    for j in 0..bn.width {
        let col: Vec<f64> = relu_in.row_iter().map(|r| r[j]).collect();
        let mu = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        assert!((mu - bn.beta[j]).abs() < 1e-6);
        assert!((var - bn.gamma[j].powi(2)).abs() < 1e-6);
    }
}

#[test]
fn ema_policy_updates_running_stats_only_when_committed() {
    let (mut model, x) = random_case(&spec(), 8, 2);
    let before = model.running_stats();
    let pass = model.forward(&x, &NormPolicy::test_ema(0.1)).unwrap();
    assert_eq!(model.running_stats(), before);
    model.commit_running_stats(&pass);
    let after = model.running_stats();
    assert_ne!(after, before);
    let (m0, _) = &before[0];
    let (m1, _) = &after[0];
    // second pass with the same batch moves the mean further towards the batch mean
    let pass2 = model.forward(&x, &NormPolicy::test_ema(0.1)).unwrap();
    model.commit_running_stats(&pass2);
    let (m2, _) = &model.running_stats()[0];
    assert!((m2[0] - m1[0]).abs() < (m1[0] - m0[0]).abs() + 1e-12);
}

#[test]
fn batch_of_one_falls_back_to_ema() {
    let p = NormPolicy::test_batch().resolve_for_batch(1);
    assert_eq!(p.mode, NormMode::TestEma);
    assert_eq!(p.ema_momentum, 0.1);
    assert_eq!(NormPolicy::test_batch().resolve_for_batch(2).mode, NormMode::TestBatch);
}

#[test]
fn gradients_match_finite_differences_bn_affine() {
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..20 {
        let (model, x) = random_case(&spec(), 8, 100 + seed);
        let (n, s) = check_gradients(&model, &x, &NormPolicy::test_batch());
        checked += n;
        skipped += s;
    }
    assert!(skipped * 100 < checked, "{skipped} of {checked} coordinates hit a kink");
}

#[test]
fn gradients_match_finite_differences_full_extractor() {
    let small = ModelSpec {
        input_dim: 4,
        hidden: vec![6, 5],
        n_classes: 3,
    };
    for seed in 0..5 {
        let (mut model, x) = random_case(&small, 7, 200 + seed);
        model.set_adapt_scope(AdaptScope::FullExtractor);
        check_gradients(&model, &x, &NormPolicy::test_batch());
        check_gradients(&model, &x, &NormPolicy::train_running());
    }
}

#[test]
fn frozen_parameters_have_no_gradient_entries() {
    let (model, x) = random_case(&spec(), 8, 1);
    let pass = model.forward(&x, &NormPolicy::test_batch()).unwrap();
    let g = crate::objective::entropy_loss_grad(&pass.logits).unwrap();
    let grads = model.backward(&pass, &g).unwrap();
    // two BN layers of width 32, gamma and beta each
    assert_eq!(grads.len(), 128);
    assert_eq!(model.n_adaptable(), 128);
    assert!(model.n_params() > 128);
}

#[test]
fn stale_forward_is_rejected() {
    let (mut model, x) = random_case(&spec(), 8, 1);
    let pass = model.forward(&x, &NormPolicy::test_batch()).unwrap();
    let g = crate::objective::entropy_loss_grad(&pass.logits).unwrap();
    let grads = model.backward(&pass, &g).unwrap();
    model.sgd_step(&grads, 0.01).unwrap();
    assert!(matches!(model.backward(&pass, &g), Err(Error::State(_))));
}

#[test]
fn sgd_step_examples() {
    let layers = vec![Layer::BatchNorm(BatchNorm::new(1)), Layer::Dense(Dense {
        input: 1,
        output: 2,
        weight: vec![1.0, -1.0],
        bias: vec![0.0, 0.0],
    })];
    let mut model = Model::from_layers(layers, 1, AdaptScope::BatchNormAffine).unwrap();
    let frozen = model.params()[2..].to_vec();
    model
        .sgd_step(&Gradients::new(vec![0.5, -0.5]), 0.01)
        .unwrap();
    let p = model.params();
    assert!((p[0] - 0.995).abs() < 1e-15);
    assert!((p[1] - 0.005).abs() < 1e-15);
    assert_eq!(&p[2..], &frozen[..]);

    let grads = Gradients::new(vec![0.1, 0.1]);
    assert!(matches!(model.sgd_step(&grads, 0.0), Err(Error::Domain(_))));
    assert!(matches!(model.sgd_step(&grads, f64::NAN), Err(Error::Domain(_))));
    assert!(matches!(
        model.sgd_step(&Gradients::new(vec![0.1]), 0.1),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        model.sgd_step(&Gradients::new(vec![0.1, f64::INFINITY]), 0.1),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn adapt_mask_length_is_checked() {
    let mut model = Model::new(&spec(), 0).unwrap();
    assert!(model.set_adapt_mask(vec![true; 3]).is_err());
    let n = model.n_params();
    model.set_adapt_mask(vec![false; n]).unwrap();
    assert_eq!(model.n_adaptable(), 0);
}

fn two_blobs(seed: u64) -> LabeledSet {
    let spec = SourceSpec::orthogonal(2, 8, 5.0, 1.0, 400, seed).unwrap();
    make_source(&spec).unwrap()
}

#[test]
fn source_training_separates_blobs() {
    let data = two_blobs(4);
    let small = ModelSpec {
        input_dim: 8,
        hidden: vec![16],
        n_classes: 2,
    };
    let cfg = TrainConfig {
        epochs: 50,
        seed: 9,
        ..TrainConfig::default()
    };
    let (model, log) = train_source(Model::new(&small, 1).unwrap(), &data, &cfg).unwrap();
    assert_eq!(log.len(), 50);
    let pass = model.forward(&data.features, &NormPolicy::train_running()).unwrap();
    let correct = pass
        .probs
        .row_iter()
        .zip(&data.labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    assert!(correct as f64 / data.len() as f64 >= 0.99);
}

#[test]
fn zero_epochs_leaves_model_unchanged() {
    let data = two_blobs(1);
    let small = ModelSpec {
        input_dim: 8,
        hidden: vec![4],
        n_classes: 2,
    };
    let init = Model::new(&small, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (trained, log) = train_source(init.clone(), &data, &cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(trained, init);
}

#[test]
fn training_is_deterministic() {
    let data = two_blobs(2);
    let small = ModelSpec {
        input_dim: 8,
        hidden: vec![8],
        n_classes: 2,
    };
    let cfg = TrainConfig {
        epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train_source(Model::new(&small, 3).unwrap(), &data, &cfg).unwrap();
    let b = train_source(Model::new(&small, 3).unwrap(), &data, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn model_file_round_trip() {
    let (mut model, _) = random_case(&spec(), 2, 8);
    model.set_adapt_scope(AdaptScope::FullExtractor);
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();
    let back = read_model(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, model);
    let mut again = Vec::new();
    write_model(&back, &mut again).unwrap();
    assert_eq!(again, bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn corrupt_model_files_are_rejected() {
    let model = Model::new(&spec(), 0).unwrap();
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(read_model(&mut bad_magic.as_slice()), Err(Error::Format(_))));

    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&(MODEL_FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        read_model(&mut future.as_slice()),
        Err(Error::Version { found, .. }) if found == MODEL_FORMAT_VERSION + 1
    ));

    let truncated = &bytes[..bytes.len() - 3];
    assert!(read_model(&mut &truncated[..]).is_err());

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(read_model(&mut trailing.as_slice()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_are_distributions(seed in 0u64..10_000, batch in 2usize..12) {
        let (model, x) = random_case(&spec(), batch, seed);
        let pass = model.forward(&x, &NormPolicy::test_batch()).unwrap();
        for row in pass.probs.row_iter() {
            prop_assert!(crate::numeric::check_distribution(row).is_ok());
        }
    }

    #[test]
    fn sgd_moves_only_adaptable_parameters(seed in 0u64..10_000, eta in 1e-4f64..1.0) {
        let (mut model, x) = random_case(&spec(), 6, seed);
        let before = model.params();
        let pass = model.forward(&x, &NormPolicy::test_batch()).unwrap();
        let g = crate::objective::entropy_loss_grad(&pass.logits).unwrap();
        let grads = model.backward(&pass, &g).unwrap();
        model.sgd_step(&grads, eta).unwrap();
        let after = model.params();
        let mut k = 0;
        for i in 0..before.len() {
            if model.adapt_mask()[i] {
                prop_assert!((after[i] - (before[i] - eta * grads.values()[k])).abs() < 1e-12);
                k += 1;
            } else {
                prop_assert_eq!(after[i], before[i]);
            }
        }
    }
}

