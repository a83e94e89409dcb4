//! Finite-difference gradient checks on randomized tiny instances. Each
//! returns the largest relative error seen across all parameters.

use hashguard::bch::BchCode;
use hashguard::hashnet::{integrate, Dims, HashNetModel, JointModel, JointSample, LossWeights, TrainBatch};
use hashguard::nnd::{self, InputMode, NndModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central_difference, relative_error, FD_FLOOR};

pub const FD_STEP: f64 = 1e-5;

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d_in: usize, classes: usize) -> TrainBatch {
    let x = Array2::from_shape_simple_fn((n, d_in), || rng.random_range(-1.5..1.5));
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    TrainBatch::new(x, labels, classes).unwrap()
}

pub fn set_params(model: &mut HashNetModel, p: &[f64]) {
    model.params_mut().into_iter().zip(p).for_each(|(w, &x)| *w = x);
}

pub fn tiny_joint(seed: u64) -> (JointModel, BchCode) {
    let code = BchCode::new(4, 2).unwrap();
    let dh = HashNetModel::new(Dims { d_in: 4, d: 6, k: 15, m: 3 }, seed);
    let nnd = NndModel::for_code(&code, 3, 15.0).unwrap();
    (integrate(dh, nnd, InputMode::Soft).unwrap(), code)
}

fn max_error(analytic: &[f64], params: &mut [f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    analytic
        .iter()
        .enumerate()
        .map(|(i, &a)| relative_error(a, central_difference(params, i, FD_STEP, &f), FD_FLOOR))
        .fold(0.0, f64::max)
}

/// Stage-1 total loss on a `d_in=4, d=6, K=8, M=3` model.
pub fn stage1_max_error(instances: u64, seed: u64) -> f64 {
    let dims = Dims { d_in: 4, d: 6, k: 8, m: 3 };
    let lw = LossWeights { alpha: 1.0, beta: 0.7, gamma: 0.9, lambda: 1e-2 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|instance| {
            let model = HashNetModel::new(dims, seed.wrapping_add(instance));
            let batch = random_batch(&mut rng, 5, dims.d_in, dims.m);
            let (_, grads) = model.gradients(&batch, &lw).unwrap();
            max_error(&grads.flatten(), &mut model.flat_params(), |p| {
                let mut m = model.clone();
                set_params(&mut m, p);
                m.loss(&batch, &lw).unwrap().total
            })
        })
        .fold(0.0, f64::max)
}

/// Decoder BCE loss on BCH(15,7) with random weights, LLRs and targets.
pub fn nnd_max_error(instances: u64, seed: u64) -> f64 {
    let code = BchCode::new(4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let mut model = NndModel::for_code(&code, 3, 15.0).unwrap();
            for w in model.params_mut() {
                *w = rng.random_range(0.5..1.5);
            }
            let llr: Vec<f64> = (0..code.n()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let target: Vec<bool> = (0..code.n()).map(|_| rng.random()).collect();
            let (_, grads, _) = model.loss_and_gradients(&llr, &target).unwrap();
            max_error(&grads.flat_weights(), &mut model.flat_weights(), |p| {
                let mut m = model.clone();
                m.params_mut().into_iter().zip(p).for_each(|(w, &x)| *w = x);
                nnd::bce_loss(&m.forward(&llr).unwrap(), &target)
            })
        })
        .fold(0.0, f64::max)
}

/// Joint BCE loss through hashing network, LLR mapping and decoder.
pub fn joint_max_error(instances: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|instance| {
            let (mut joint, code) = tiny_joint(seed.wrapping_add(100 + instance));
            for w in joint.nnd.params_mut() {
                *w = rng.random_range(0.5..1.5);
            }
            let samples: Vec<JointSample> = (0..3)
                .map(|_| {
                    let msg: Vec<bool> = (0..code.k()).map(|_| rng.random()).collect();
                    JointSample {
                        input: (0..4).map(|_| rng.random_range(-1.5..1.5)).collect(),
                        target: code.encode(&msg).unwrap().into_bits(),
                    }
                })
                .collect();
            let (_, g) = joint.loss_and_gradients(&samples).unwrap();
            let dh_count = joint.dh.flat_params().len();
            let analytic: Vec<f64> = g.dh.flatten().into_iter().chain(g.nnd.flat_weights()).collect();
            let mut params: Vec<f64> = joint.dh.flat_params().into_iter().chain(joint.nnd.flat_weights()).collect();
            max_error(&analytic, &mut params, |p| {
                let mut j = joint.clone();
                set_params(&mut j.dh, &p[..dh_count]);
                j.nnd.params_mut().into_iter().zip(&p[dh_count..]).for_each(|(w, &x)| *w = x);
                j.mean_loss(&samples).unwrap()
            })
        })
        .fold(0.0, f64::max)
}
