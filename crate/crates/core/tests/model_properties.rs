//! End-to-end properties of the label branch, checked against plain-loop
//! reference computations and numerical differentiation.

#![allow(clippy::needless_range_loop)]

use gatn_core::corr::{build_correlation, cooccurrence_matrix};
use gatn_core::experiment::{run_training, Checkpoint, ExperimentConfig};
use gatn_core::gat::{transform_adjacency, GatLayerParams};
use gatn_core::gcn::{gcn_forward, normalize_adjacency, Activation, GcnLayerParams};
use gatn_core::model::{
    check_gradients, forward, gradients, label_features, sgd_step, train, AttentionConfig,
    Features, GatnParams, LabeledSample, ModelConfig, ToyInstance, TrainConfig,
};
use gatn_core::synth::{synthesize, SynthConfig};
use gatn_core::{AdjacencyMatrix, CorrPipelineConfig, EmbeddingMatrix, Matrix, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn naive_normalize(a: &Matrix) -> Vec<Vec<f64>> {
    let n = a.rows();
    let mut t = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            t[i][j] = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
        }
    }
    let deg: Vec<f64> = t
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>().max(1e-6))
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = t[i][j] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    out
}

fn naive_gcn(z: &Matrix, ahat: &[Vec<f64>], layers: &[GcnLayerParams]) -> Vec<Vec<f64>> {
    let n = z.rows();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).to_vec()).collect();
    for lp in layers {
        let (din, dout) = (lp.w.rows(), lp.w.cols());
        let mut next = vec![vec![0.0; dout]; n];
        for i in 0..n {
            for o in 0..dout {
                let mut acc = 0.0;
                for j in 0..n {
                    for c in 0..din {
                        acc += ahat[i][j] * h[j][c] * lp.w.get(c, o);
                    }
                }
                next[i][o] = match lp.activation {
                    Activation::LeakyRelu(s) if acc < 0.0 => s * acc,
                    _ => acc,
                };
            }
        }
        h = next;
    }
    h
}

#[test]
fn normalization_and_propagation_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=6 {
        // signed entries exercise the absolute-value degree
        let a = AdjacencyMatrix::new(rand_matrix(&mut rng, n, n), Stage::Transformed).unwrap();
        let fast = normalize_adjacency(&a).unwrap();
        let slow = naive_normalize(a.matrix());
        for i in 0..n {
            for j in 0..n {
                assert!((fast.matrix().get(i, j) - slow[i][j]).abs() < 1e-12);
            }
        }
        let z = EmbeddingMatrix::new(rand_matrix(&mut rng, n, 4)).unwrap();
        let layers = GcnLayerParams::chain(&[4, 5, 3, 2], 0.2, &mut rng).unwrap();
        let out = gcn_forward(&z, &fast, &layers).unwrap();
        let expect = naive_gcn(z.matrix(), &slow, &layers);
        for i in 0..n {
            for o in 0..2 {
                assert!((out.get(i, o) - expect[i][o]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn label_features_compose_the_stages() {
    let toy = ToyInstance::standard(5).unwrap();
    let gat = toy.params.gat.as_ref().unwrap();
    let ahat = normalize_adjacency(&transform_adjacency(&toy.a, gat).unwrap()).unwrap();
    let expect = gcn_forward(&toy.z, &ahat, &toy.params.gcn).unwrap();
    let got = label_features(&toy.params, &toy.z, &toy.a).unwrap();
    assert_eq!(got, expect);
}

fn assert_gradcheck(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    batch: &[LabeledSample],
) {
    let report = check_gradients(params, z, a, batch, 1e-5).unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn gradients_without_attention_and_with_deep_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = EmbeddingMatrix::new(rand_matrix(&mut rng, 4, 5)).unwrap();
    let a = build_correlation(&z, &CorrPipelineConfig::default()).unwrap();
    let batch: Vec<LabeledSample> = (0..3)
        .map(|s| {
            let y = vec![(s % 2) as u8, 1, 0, ((s + 1) % 2) as u8];
            LabeledSample::new(
                Features::Pooled((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                y,
            )
            .unwrap()
        })
        .collect();
    for (hidden, attention) in [
        (vec![], None),
        (vec![6, 4], None),
        (
            vec![6, 4],
            Some(AttentionConfig {
                k: 3,
                h: 1,
                d_h: Some(2),
            }),
        ),
    ] {
        let cfg = ModelConfig {
            hidden,
            attention,
            ..ModelConfig::default()
        };
        let params = GatnParams::init(4, 5, 3, &cfg, 9).unwrap();
        assert_gradcheck(&params, &z, &a, &batch);
    }
}

#[test]
fn gradients_with_feature_maps_and_cooccurrence_adjacency() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch: Vec<LabeledSample> = [[1u8, 1, 0], [0, 1, 1], [1, 0, 1]]
        .iter()
        .map(|y| {
            LabeledSample::new(Features::Map(rand_matrix(&mut rng, 4, 3)), y.to_vec()).unwrap()
        })
        .collect();
    let labels = Matrix::from_fn(3, 3, |s, c| f64::from(batch[s].targets[c]));
    let a = cooccurrence_matrix(&labels, &CorrPipelineConfig::default()).unwrap();
    let z = EmbeddingMatrix::new(rand_matrix(&mut rng, 3, 2)).unwrap();
    let cfg = ModelConfig {
        hidden: vec![3],
        attention: Some(AttentionConfig {
            k: 2,
            h: 2,
            d_h: Some(3),
        }),
        ..ModelConfig::default()
    };
    let params = GatnParams::init(3, 2, 4, &cfg, 4).unwrap();
    assert_gradcheck(&params, &z, &a, &batch);
}

#[test]
fn tiny_step_along_gradient_does_not_increase_loss() {
    for seed in [1, 2, 3] {
        let toy = ToyInstance::standard(seed).unwrap();
        let before = forward(&toy.params, &toy.z, &toy.a, &toy.batch)
            .unwrap()
            .loss;
        let g = gradients(&toy.params, &toy.z, &toy.a, &toy.batch).unwrap();
        let mut p = toy.params.clone();
        let cfg = TrainConfig {
            lr: 1e-6,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut p, &g, &cfg).unwrap();
        let after = forward(&p, &toy.z, &toy.a, &toy.batch).unwrap().loss;
        assert!(after <= before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn zero_learning_rate_freezes_the_loss_curve() {
    let toy = ToyInstance::standard(2).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        epochs: 5,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let out = train(&cfg, toy.params.clone(), &toy.z, &toy.a, &toy.batch).unwrap();
    assert_eq!(out.loss_history.len(), 5);
    for l in &out.loss_history {
        assert!((l - out.loss_history[0]).abs() <= 1e-12);
    }
    let params_only = |p: &GatnParams| p.tensors().into_iter().cloned().collect::<Vec<_>>();
    assert_eq!(params_only(&out.params), params_only(&toy.params));
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let data = synthesize(&SynthConfig::default()).unwrap();
    let z = data.embedding_matrix().unwrap();
    let cfg = ExperimentConfig {
        epochs: 3,
        ..ExperimentConfig::toy()
    };
    let run = run_training(&cfg, &data.labels, &z, &data.train).unwrap();
    let text = run.checkpoint.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back, run.checkpoint);
    assert_eq!(back.to_json().unwrap(), text);
    assert_eq!(run.loss_history.len(), 3);
}

#[test]
fn attention_layer_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lp = GatLayerParams::init(4, 2, 3, 2, &mut rng).unwrap();
    let text = serde_json::to_string(&lp).unwrap();
    let back: GatLayerParams = serde_json::from_str(&text).unwrap();
    assert_eq!(back, lp);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(
        (v["k"].as_u64(), v["h"].as_u64(), v["d_h"].as_u64()),
        (Some(2), Some(3), Some(2))
    );
}
