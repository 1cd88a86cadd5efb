use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::LabeledDataset;
use super::net::{argmax, Architecture};
use super::params::Params;
use crate::scalar::Scalar;

/// A differentiable training loss over an indexed set of samples.
pub trait Objective<T: Scalar> {
    /// Number of samples in one training epoch.
    fn train_len(&self) -> usize;

    /// Mean loss over `batch` (sample positions in `0..train_len`) and its gradient.
    fn loss_grad(&self, params: &Params<T>, batch: &[usize]) -> (T, Params<T>);

    fn loss(&self, params: &Params<T>, batch: &[usize]) -> T {
        self.loss_grad(params, batch).0
    }
}

/// Mean softmax cross-entropy of a network over a dataset's training split.
///
/// With `threads > 1` samples are evaluated concurrently; per-sample gradients are
/// always summed in batch order, so the result does not depend on the thread count.
pub struct Classification<'a, T> {
    pub arch: &'a Architecture,
    pub data: &'a LabeledDataset<T>,
    pub threads: usize,
}

impl<'a, T: Scalar> Classification<'a, T> {
    pub fn new(arch: &'a Architecture, data: &'a LabeledDataset<T>) -> Self {
        Self { arch, data, threads: 1 }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }
}

impl<T: Scalar> Objective<T> for Classification<'_, T> {
    fn train_len(&self) -> usize {
        self.data.train_indices().len()
    }

    fn loss_grad(&self, params: &Params<T>, batch: &[usize]) -> (T, Params<T>) {
        let per_sample = |i: usize| self.arch.sample_loss_grad(params, self.data.image(i), self.data.label(i));
        let results: Vec<(T, Params<T>)> = if self.threads <= 1 || batch.len() < 2 {
            batch.iter().map(|&i| per_sample(i)).collect()
        } else {
            let chunk = batch.len().div_ceil(self.threads);
            std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .chunks(chunk)
                    .map(|part| scope.spawn(move || part.iter().map(|&i| per_sample(i)).collect::<Vec<_>>()))
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("gradient worker panicked")).collect()
            })
        };
        let mut total = T::zero();
        let mut grads = Params::zeros_like(params);
        for (loss, g) in &results {
            total += *loss;
            grads.axpy(T::one(), g);
        }
        let inv = T::one() / T::of(batch.len().max(1) as f64);
        grads.scale(inv);
        (total * inv, grads)
    }
}

/// `v ← μv + g + λw`, `w ← w − lr·v`, applied element-wise.
pub fn sgd_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    velocity: &mut Params<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) {
    for ((w, &g), v) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
}

/// Momentum SGD whose velocity persists across calls.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: Option<Params<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum: T::of(momentum), weight_decay: T::of(weight_decay), velocity: None }
    }

    /// One update. Kernel entries whose `mask` flag is `false` keep zero velocity and
    /// are held at exactly zero; biases are never masked.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: T, mask: Option<&[Vec<bool>]>) {
        let velocity = self.velocity.get_or_insert_with(|| Params::zeros_like(params));
        sgd_step(params, grads, velocity, lr, self.momentum, self.weight_decay);
        if let Some(mask) = mask {
            for ((k, v), m) in params.kernels.iter_mut().zip(velocity.kernels.iter_mut()).zip(mask) {
                for ((w, vel), &keep) in k.values_mut().iter_mut().zip(v.values_mut()).zip(m) {
                    if !keep {
                        *w = T::zero();
                        *vel = T::zero();
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · ½(1 + cos(π·k/K))` over the `K` steps of the whole run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

/// Shuffled mini-batches covering `0..len` once.
pub fn epoch_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Plain (optionally masked) training; returns the mean batch loss of every epoch.
pub fn train<T: Scalar>(
    objective: &impl Objective<T>,
    params: &mut Params<T>,
    config: &TrainConfig,
    mask: Option<&[Vec<bool>]>,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let steps_per_epoch = objective.train_len().div_ceil(config.batch_size.max(1));
    let total = steps_per_epoch * config.epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(objective.train_len(), config.batch_size, &mut rng);
        for batch in &batches {
            let (loss, grads) = objective.loss_grad(params, batch);
            let lr = T::of(config.schedule.rate(config.lr, step, total));
            sgd.step(params, &grads, lr, mask);
            sum += loss.as_f64();
            step += 1;
        }
        history.push(sum / batches.len().max(1) as f64);
    }
    history
}

/// Fraction of the listed samples classified correctly.
pub fn accuracy<T: Scalar>(
    arch: &Architecture,
    params: &Params<T>,
    data: &LabeledDataset<T>,
    indices: impl Iterator<Item = usize>,
) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for i in indices {
        let logits = arch.forward(params, data.image(i)).expect("dataset matches architecture");
        hits += usize::from(argmax(&logits) == data.label(i));
        total += 1;
    }
    hits as f64 / total.max(1) as f64
}
