mod support;

use hashguard::hashnet::{
    train_joint, train_stage1, Dims, HashNetModel, JointSample, JointTrainConfig, LossWeights, Stage1Config, TrainBatch,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradients::{joint_max_error, random_batch, stage1_max_error, tiny_joint};

#[test]
fn stage1_gradient_matches_finite_differences() {
    let err = stage1_max_error(20, 3);
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn softmax_is_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..1000 {
        let model = HashNetModel::new(Dims { d_in: 5, d: 7, k: 9, m: 4 }, seed);
        let x = Array1::from_shape_simple_fn(5, || rng.random_range(-3.0..3.0));
        let f = model.forward(x.view()).unwrap();
        assert!((f.probs.sum() - 1.0).abs() <= 1e-9);
        assert!(f.probs.iter().all(|&p| p >= 0.0));
        assert!(f.hash.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn loss_composition() {
    use hashguard::hashnet::{loss_classification, loss_entropy, loss_quantization, loss_total, BatchForward};
    use ndarray::array;
    let hash = array![[0.0, 1.0, 1.0, 1.0]];
    let probs = array![[0.7, 0.2, 0.1]];
    let fwd = BatchForward {
        inputs: Array2::zeros((1, 1)),
        pre_fc1: Array2::zeros((1, 1)),
        fc1: Array2::zeros((1, 1)),
        hash: hash.clone(),
        probs: probs.clone(),
    };
    let ones = LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0, lambda: 0.0 };
    let l = loss_total(&fwd, &[0], &ones, 0.0);
    let expected = loss_classification(probs.view(), &[0], 0.0, 0.0) + loss_quantization(hash.view()) + loss_entropy(hash.view());
    assert!((l.total - expected).abs() < 1e-15);
    assert!((l.total - (-(0.7f64).ln() - 0.25 + 0.0625)).abs() < 1e-12);
    let quant_only = LossWeights { alpha: 0.0, beta: 0.4, gamma: 0.0, lambda: 0.0 };
    assert!((loss_total(&fwd, &[0], &quant_only, 0.0).total + 0.1).abs() < 1e-15);
}

#[test]
fn stage1_halves_loss_on_ten_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d_in = 16;
    let protos: Vec<Vec<f64>> = (0..10).map(|_| (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut x = Array2::zeros((200, d_in));
    let mut labels = Vec::new();
    for i in 0..200 {
        let c = i % 10;
        for j in 0..d_in {
            x[[i, j]] = protos[c][j] + 0.2 * rng.random_range(-1.0..1.0);
        }
        labels.push(c);
    }
    let batch = TrainBatch::new(x, labels, 10).unwrap();
    let mut model = HashNetModel::new(Dims { d_in, d: 32, k: 15, m: 10 }, 4);
    let hist = train_stage1(&mut model, &batch, &LossWeights::default(), &Stage1Config::default()).unwrap();
    assert!(hist.final_loss() < 0.5 * hist.initial_loss, "{} vs {}", hist.final_loss(), hist.initial_loss);
}

#[test]
fn joint_forward_is_composition() {
    let (joint, _) = tiny_joint(1);
    let x = ndarray::array![0.3, -1.0, 2.0, 0.1];
    let hash = joint.dh.forward(x.view()).unwrap().hash;
    let llr = hashguard::nnd::llr_from_soft(hash.as_slice().unwrap(), 15.0);
    assert_eq!(joint.forward(x.view()).unwrap(), joint.nnd.forward(&llr).unwrap());
}

#[test]
fn joint_gradient_matches_finite_differences() {
    let err = joint_max_error(20, 77);
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn one_joint_epoch_reduces_bce() {
    let (mut joint, code) = tiny_joint(5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let targets: Vec<Vec<bool>> = (0..3)
        .map(|_| code.encode(&(0..code.k()).map(|_| rng.random()).collect::<Vec<_>>()).unwrap().into_bits())
        .collect();
    let data: Vec<JointSample> = (0..30)
        .map(|i| JointSample {
            input: (0..4).map(|j| (i % 3) as f64 * (j as f64 - 1.5) + rng.random_range(-0.1..0.1)).collect(),
            target: targets[i % 3].clone(),
        })
        .collect();
    let cfg = JointTrainConfig { epochs: 1, dh_learning_rate: 0.05, nnd_learning_rate: 0.05, ..Default::default() };
    let hist = train_joint(&mut joint, &data, &cfg).unwrap();
    assert!(hist.final_loss() < hist.initial_loss, "{} vs {}", hist.final_loss(), hist.initial_loss);
}

#[test]
fn training_is_seed_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = random_batch(&mut rng, 40, 4, 3);
    let cfg = Stage1Config { epochs: 4, batch_size: 8, ..Default::default() };
    let run = || {
        let mut m = HashNetModel::new(Dims { d_in: 4, d: 6, k: 8, m: 3 }, 9);
        let h = train_stage1(&mut m, &batch, &LossWeights::default(), &cfg).unwrap();
        (m.to_json(LossWeights::default()).unwrap(), h)
    };
    assert_eq!(run(), run());
}
