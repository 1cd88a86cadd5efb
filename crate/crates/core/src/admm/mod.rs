//! Latency-constrained training by ADMM.
//!
//! The constrained problem `min L(W) s.t. T(W) ≤ budget` is split as `W = U` with the
//! constraint moved onto `U`, and the augmented Lagrangian is minimized by alternating
//!
//! ```text
//! W ← one SGD epoch on  L(W) + ρ/2 ‖W − U + Z/ρ‖²
//! U ← project(W + Z/ρ)          (largest-norm units that fit the budget)
//! Z ← Z + ρ (W − U)
//! ```
//!
//! after which `W` is set to `U` and the surviving weights are finetuned under a fixed
//! mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::NetworkLatencyModel;
use crate::nn::{epoch_batches, LrSchedule, Objective, Params, Sgd};
use crate::pruning::{element_mask, ProjectionResult, Projector};
use crate::scalar::Scalar;
use crate::sparse_format::DenseKernel;

/// How the dual variable starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualInit {
    /// `Z_0 = W − U_0`.
    #[default]
    Residual,
    /// `Z_0 = 0`.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlcsConfig {
    pub budget_ms: f64,
    pub rho: f64,
    pub admm_epochs: usize,
    pub finetune_epochs: usize,
    /// Constant learning rate of the W-updates.
    pub admm_lr: f64,
    /// Starting learning rate of the cosine finetuning schedule.
    pub finetune_lr: f64,
    pub momentum: f64,
    /// Applied during the W-updates only; finetuning runs without weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Bisection tolerance; `None` means `min(0.1 ms, budget / 1000)`.
    pub epsilon_ms: Option<f64>,
    pub group_size: usize,
    pub skip_layers: Vec<usize>,
    pub dual_init: DualInit,
    pub seed: u64,
}

impl Default for AlcsConfig {
    fn default() -> Self {
        Self {
            budget_ms: f64::INFINITY,
            rho: 0.01,
            admm_epochs: 30,
            finetune_epochs: 20,
            admm_lr: 0.001,
            finetune_lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            epsilon_ms: None,
            group_size: 4,
            skip_layers: Vec::new(),
            dual_init: DualInit::Residual,
            seed: 0,
        }
    }
}

impl AlcsConfig {
    pub fn effective_epsilon_ms(&self) -> f64 {
        self.epsilon_ms.unwrap_or_else(|| {
            let scaled = self.budget_ms / 1000.0;
            if scaled > 0.0 && scaled.is_finite() {
                scaled.min(0.1)
            } else {
                0.1
            }
        })
    }

    pub fn projector(&self) -> Projector {
        Projector {
            group_size: self.group_size,
            epsilon_ms: self.effective_epsilon_ms(),
            skip_layers: self.skip_layers.clone(),
        }
    }
}

/// Primal `W` (all trainable parameters), auxiliary `U` and dual `Z` (prunable kernels
/// only), penalty `ρ` and the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState<T> {
    pub w: Params<T>,
    pub u: Vec<DenseKernel<T>>,
    pub z: Vec<DenseKernel<T>>,
    pub rho: T,
    pub iteration: usize,
}

impl<T: Scalar> AdmmState<T> {
    pub fn new(w: Params<T>, u: Vec<DenseKernel<T>>, z: Vec<DenseKernel<T>>, rho: f64) -> Result<Self> {
        if rho.is_nan() || rho <= 0.0 {
            return Err(Error::Domain(format!("rho must be > 0, got {rho}")));
        }
        let congruent = |ks: &[DenseKernel<T>]| {
            ks.len() == w.kernels.len() && ks.iter().zip(&w.kernels).all(|(a, b)| a.shape() == b.shape())
        };
        if !congruent(&u) || !congruent(&z) {
            return Err(Error::Dimension("W, U and Z must be shape-congruent".into()));
        }
        Ok(Self { w, u, z, rho: T::of(rho), iteration: 0 })
    }

    /// `W + Z/ρ`, the point the U-update projects.
    pub fn projection_target(&self) -> Vec<DenseKernel<T>> {
        self.w
            .kernels
            .iter()
            .zip(&self.z)
            .map(|(w, z)| {
                let mut t = w.clone();
                for (a, &b) in t.values_mut().iter_mut().zip(z.values()) {
                    *a += b / self.rho;
                }
                t
            })
            .collect()
    }

    /// `‖W − U‖_F` over all prunable kernels.
    pub fn w_u_gap(&self) -> f64 {
        self.w.kernels.iter().zip(&self.u).map(|(w, u)| w.distance(u).powi(2)).sum::<f64>().sqrt()
    }

    /// `ρ/2 ‖W − U + Z/ρ‖²`.
    pub fn proximal_penalty(&self) -> T {
        let mut sum = T::zero();
        for ((w, u), z) in self.w.kernels.iter().zip(&self.u).zip(&self.z) {
            for ((&a, &b), &c) in w.values().iter().zip(u.values()).zip(z.values()) {
                let d = a - b + c / self.rho;
                sum += d * d;
            }
        }
        self.rho * sum / T::of(2.0)
    }
}

/// Batch value of `L(W) + ρ/2 ‖W − U + Z/ρ‖²`.
pub fn augmented_objective<T: Scalar>(state: &AdmmState<T>, objective: &impl Objective<T>, batch: &[usize]) -> T {
    objective.loss(&state.w, batch) + state.proximal_penalty()
}

/// Batch loss and gradient of the augmented objective: `∇L(W) + ρ(W − U) + Z` on the
/// kernels, `∇L(W)` on everything else. Returns `(loss, augmented loss, gradient)`.
pub fn augmented_w_gradient<T: Scalar>(
    state: &AdmmState<T>,
    objective: &impl Objective<T>,
    batch: &[usize],
) -> (T, T, Params<T>) {
    let (loss, mut grad) = objective.loss_grad(&state.w, batch);
    for (((g, w), u), z) in grad.kernels.iter_mut().zip(&state.w.kernels).zip(&state.u).zip(&state.z) {
        for (((gv, &wv), &uv), &zv) in g.values_mut().iter_mut().zip(w.values()).zip(u.values()).zip(z.values()) {
            *gv += state.rho * (wv - uv) + zv;
        }
    }
    (loss, loss + state.proximal_penalty(), grad)
}

/// One epoch of momentum SGD on the augmented objective. `U` and `Z` are untouched.
/// Returns the epoch means of the loss and of the augmented objective.
pub fn w_update<T: Scalar>(
    state: &mut AdmmState<T>,
    objective: &impl Objective<T>,
    sgd: &mut Sgd<T>,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let batches = epoch_batches(objective.train_len(), batch_size, rng);
    let (mut loss_sum, mut aug_sum) = (0.0, 0.0);
    for batch in &batches {
        let (loss, aug, grad) = augmented_w_gradient(state, objective, batch);
        sgd.step(&mut state.w, &grad, T::of(lr), None);
        loss_sum += loss.as_f64();
        aug_sum += aug.as_f64();
    }
    let n = batches.len().max(1) as f64;
    (loss_sum / n, aug_sum / n)
}

/// `U ← project(W + Z/ρ)` under the latency budget.
pub fn u_update<T: Scalar>(
    state: &mut AdmmState<T>,
    model: &NetworkLatencyModel,
    projector: &Projector,
    budget_ms: f64,
) -> Result<ProjectionResult> {
    let (result, projected) = projector.project(&state.projection_target(), model, budget_ms)?;
    state.u = projected;
    Ok(result)
}

/// `Z ← Z + ρ(W − U)`.
pub fn z_update<T: Scalar>(state: &mut AdmmState<T>) {
    for ((z, w), u) in state.z.iter_mut().zip(&state.w.kernels).zip(&state.u) {
        for ((zv, &wv), &uv) in z.values_mut().iter_mut().zip(w.values()).zip(u.values()) {
            *zv += state.rho * (wv - uv);
        }
    }
}

/// Trains only the kernel entries of kept units (biases stay trainable) with a cosine
/// schedule from `config.finetune_lr` to zero and no weight decay. Returns per-epoch
/// mean losses.
pub fn finetune<T: Scalar>(
    objective: &impl Objective<T>,
    params: &mut Params<T>,
    unit_mask: &[bool],
    config: &AlcsConfig,
) -> Vec<f64> {
    let mask = element_mask(&params.kernels, config.group_size, unit_mask);
    for (k, m) in params.kernels.iter_mut().zip(&mask) {
        for (w, &keep) in k.values_mut().iter_mut().zip(m) {
            if !keep {
                *w = T::zero();
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut sgd = Sgd::new(config.momentum, 0.0);
    let steps_per_epoch = objective.train_len().div_ceil(config.batch_size.max(1));
    let total = steps_per_epoch * config.finetune_epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(config.finetune_epochs);
    for _ in 0..config.finetune_epochs {
        let batches = epoch_batches(objective.train_len(), config.batch_size, &mut rng);
        let mut sum = 0.0;
        for batch in &batches {
            let (loss, grad) = objective.loss_grad(params, batch);
            let lr = LrSchedule::Cosine.rate(config.finetune_lr, step, total);
            sgd.step(params, &grad, T::of(lr), Some(&mask));
            sum += loss.as_f64();
            step += 1;
        }
        history.push(sum / batches.len().max(1) as f64);
    }
    history
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    /// Epoch mean of `L(W)`.
    pub loss: f64,
    /// Epoch mean of the augmented objective.
    pub aug_loss: f64,
    /// `‖W − U‖_F` after the U-update.
    pub w_u_gap: f64,
    /// Nonzero parameters of `U`.
    pub nnz: usize,
    pub est_latency_ms: f64,
}

#[derive(Debug, Clone)]
pub struct AlcsOutcome<T> {
    /// Pruned and finetuned parameters.
    pub params: Params<T>,
    /// Final projection; its mask is the finetuning mask.
    pub projection: ProjectionResult,
    pub log: Vec<LogRecord>,
    pub finetune_losses: Vec<f64>,
}

/// Full pipeline: initial projection, `admm_epochs` rounds of W/U/Z updates, `W ← U`,
/// then masked finetuning. The budget is checked by the initial projection, before any
/// training.
pub fn run_alcs<T: Scalar>(
    objective: &impl Objective<T>,
    pretrained: Params<T>,
    model: &NetworkLatencyModel,
    config: &AlcsConfig,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<AlcsOutcome<T>> {
    let projector = config.projector();
    let (mut projection, u0) = projector.project(&pretrained.kernels, model, config.budget_ms)?;
    let z0 = match config.dual_init {
        DualInit::Residual => pretrained
            .kernels
            .iter()
            .zip(&u0)
            .map(|(w, u)| {
                let mut z = w.clone();
                for (a, &b) in z.values_mut().iter_mut().zip(u.values()) {
                    *a -= b;
                }
                z
            })
            .collect(),
        DualInit::Zero => pretrained.kernels.iter().map(|k| DenseKernel::zeros(k.shape())).collect(),
    };
    let mut state = AdmmState::new(pretrained, u0, z0, config.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let mut log = Vec::with_capacity(config.admm_epochs);
    for t in 1..=config.admm_epochs {
        let (loss, aug_loss) = w_update(&mut state, objective, &mut sgd, config.admm_lr, config.batch_size, &mut rng);
        projection = u_update(&mut state, model, &projector, config.budget_ms)?;
        z_update(&mut state);
        state.iteration = t;
        let record = LogRecord {
            iteration: t,
            loss,
            aug_loss,
            w_u_gap: state.w_u_gap(),
            nnz: projection.nonzeros.iter().sum(),
            est_latency_ms: projection.estimated_latency_ms,
        };
        log::info!(
            "admm {t}: loss {:.5} aug {:.5} |W-U| {:.5} nnz {} latency {:.4} ms",
            record.loss,
            record.aug_loss,
            record.w_u_gap,
            record.nnz,
            record.est_latency_ms
        );
        on_record(&record);
        log.push(record);
    }
    let mut params = state.w;
    params.kernels = state.u;
    let finetune_losses = finetune(objective, &mut params, &projection.mask, config);
    Ok(AlcsOutcome { params, projection, log, finetune_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_format::KernelShape;

    /// `L(w) = ½ Σ a_i (w_i − c_i)²` over one kernel.
    struct Quadratic {
        weights: Vec<f64>,
        center: Vec<f64>,
        samples: usize,
    }

    impl Objective<f64> for Quadratic {
        fn train_len(&self) -> usize {
            self.samples
        }

        fn loss_grad(&self, params: &Params<f64>, _batch: &[usize]) -> (f64, Params<f64>) {
            let mut grad = Params::zeros_like(params);
            let mut loss = 0.0;
            for (i, (&w, g)) in params.kernels[0].values().iter().zip(grad.kernels[0].values_mut()).enumerate() {
                let d = w - self.center[i];
                loss += 0.5 * self.weights[i] * d * d;
                *g = self.weights[i] * d;
            }
            (loss, grad)
        }
    }

    struct Zero;

    impl Objective<f64> for Zero {
        fn train_len(&self) -> usize {
            1
        }

        fn loss_grad(&self, params: &Params<f64>, _batch: &[usize]) -> (f64, Params<f64>) {
            (0.0, Params::zeros_like(params))
        }
    }

    fn scalar(v: f64) -> DenseKernel<f64> {
        DenseKernel::new(KernelShape::new(1, 1, 1, 1).unwrap(), vec![v]).unwrap()
    }

    fn scalar_state(w: f64, u: f64, z: f64, rho: f64) -> AdmmState<f64> {
        AdmmState::new(Params { kernels: vec![scalar(w)], biases: vec![vec![]] }, vec![scalar(u)], vec![scalar(z)], rho)
            .unwrap()
    }

    #[test]
    fn proximal_gradient_by_hand() {
        let state = scalar_state(1.0, 0.0, 0.0, 1.0);
        let (_, aug, g) = augmented_w_gradient(&state, &Zero, &[0]);
        assert_eq!(g.kernels[0].values(), &[1.0]);
        assert_eq!(aug, 0.5);
    }

    #[test]
    fn proximal_term_vanishes_when_w_equals_u() {
        let q = Quadratic { weights: vec![1.0, 2.0], center: vec![3.0, -1.0], samples: 1 };
        let k = DenseKernel::new(KernelShape::new(2, 1, 1, 1).unwrap(), vec![0.5, 0.5]).unwrap();
        let state = AdmmState::new(
            Params { kernels: vec![k.clone()], biases: vec![vec![0.0; 2]] },
            vec![k.clone()],
            vec![DenseKernel::zeros(k.shape())],
            0.01,
        )
        .unwrap();
        let (_, plain) = q.loss_grad(&state.w, &[0]);
        let (_, _, augmented) = augmented_w_gradient(&state, &q, &[0]);
        assert_eq!(plain, augmented);
    }

    #[test]
    fn z_update_by_hand() {
        let mut state = scalar_state(1.0, 0.0, 0.0, 0.01);
        z_update(&mut state);
        assert_eq!(state.z[0].values(), &[0.01]);
        z_update(&mut state);
        assert_eq!(state.z[0].values(), &[0.02]);
        let mut same = scalar_state(0.7, 0.7, 0.3, 0.01);
        z_update(&mut same);
        assert_eq!(same.z[0].values(), &[0.3]);
    }

    #[test]
    fn zero_learning_rate_keeps_w() {
        let q = Quadratic { weights: vec![1.0], center: vec![4.0], samples: 1 };
        let mut state = scalar_state(1.0, 0.5, 0.1, 0.01);
        let mut sgd = Sgd::new(0.9, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        w_update(&mut state, &q, &mut sgd, 0.0, 1, &mut rng);
        assert_eq!(state.w.kernels[0].values(), &[1.0]);
        assert_eq!(state.u[0].values(), &[0.5]);
        assert_eq!(state.z[0].values(), &[0.1]);
    }

    #[test]
    fn single_step_by_hand() {
        // L = ½(w − 4)², w = 1, u = 0.5, z = 0.1, ρ = 0.5: g = −3 + 0.25 + 0.1 = −2.65
        let q = Quadratic { weights: vec![1.0], center: vec![4.0], samples: 1 };
        let mut state = scalar_state(1.0, 0.5, 0.1, 0.5);
        let mut sgd = Sgd::new(0.9, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        w_update(&mut state, &q, &mut sgd, 0.1, 1, &mut rng);
        assert!((state.w.kernels[0].values()[0] - 1.265).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_state() {
        let w = Params { kernels: vec![scalar(1.0)], biases: vec![vec![]] };
        assert!(AdmmState::new(w.clone(), vec![scalar(0.0)], vec![scalar(0.0)], 0.0).is_err());
        assert!(AdmmState::new(w, vec![], vec![scalar(0.0)], 0.1).is_err());
    }

    /// Two units of two weights each, a linear 1 ms/weight profile and a budget of one unit.
    /// Unit 0 (entries 0, 2) has the smaller magnitude but the larger loss weight.
    fn two_unit_instance() -> (Quadratic, Params<f64>, NetworkLatencyModel) {
        use crate::latency::{LayerLatencyProfile, LayerSpec};
        let q = Quadratic { weights: vec![4.0, 1.0, 4.0, 1.0], center: vec![1.0, 1.2, 1.0, 1.2], samples: 64 };
        let shape = KernelShape::new(2, 1, 1, 2).unwrap();
        let w = Params { kernels: vec![DenseKernel::new(shape, q.center.clone()).unwrap()], biases: vec![vec![]] };
        let spec = LayerSpec::from_shape_array("q", [2, 1, 1, 2, 1, 2, 1, 0]).unwrap();
        let profile = LayerLatencyProfile::new(spec, &[(0, 0.0), (4, 4.0)]).unwrap();
        (q, w, NetworkLatencyModel::new(0.0, vec![profile]).unwrap())
    }

    fn quadratic_config() -> AlcsConfig {
        AlcsConfig {
            budget_ms: 2.0,
            rho: 2.0,
            admm_epochs: 30,
            finetune_epochs: 5,
            admm_lr: 0.05,
            finetune_lr: 0.05,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 1,
            group_size: 2,
            ..Default::default()
        }
    }

    #[test]
    fn quadratic_matches_brute_force() {
        let (q, w, model) = two_unit_instance();
        // Keeping unit u leaves loss ½ Σ_{i∉u} a_i c_i².
        let units = [[0usize, 2], [1, 3]];
        let residual = |u: &[usize; 2]| -> f64 {
            (0..4).filter(|i| !u.contains(i)).map(|i| 0.5 * q.weights[i] * q.center[i] * q.center[i]).sum()
        };
        let best = if residual(&units[0]) < residual(&units[1]) { 0 } else { 1 };
        assert_eq!(best, 0);
        for dual_init in [DualInit::Residual, DualInit::Zero] {
            let magnitude = run_alcs(
                &q,
                w.clone(),
                &model,
                &AlcsConfig { admm_epochs: 0, finetune_epochs: 0, ..quadratic_config() },
                |_| {},
            )
            .unwrap();
            assert_eq!(magnitude.projection.mask, vec![false, true]);
            let out = run_alcs(&q, w.clone(), &model, &AlcsConfig { dual_init, ..quadratic_config() }, |_| {}).unwrap();
            assert_eq!(out.projection.mask, vec![true, false], "{dual_init:?}");
            let loss = q.loss(&out.params, &[0]);
            assert!((loss - residual(&units[best])).abs() < 1e-6, "{loss}");
        }
    }

    #[test]
    fn degenerate_schedule_is_projection() {
        let (q, w, model) = two_unit_instance();
        let cfg = AlcsConfig { admm_epochs: 0, finetune_epochs: 0, budget_ms: 4.0, ..quadratic_config() };
        let out = run_alcs(&q, w.clone(), &model, &cfg, |_| {}).unwrap();
        assert_eq!(out.params, w);
        assert!(out.log.is_empty());
        let cfg = AlcsConfig { budget_ms: 0.0, ..cfg };
        let out = run_alcs(&q, w, &model, &cfg, |_| {}).unwrap();
        assert!(out.params.kernels[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infeasible_before_training() {
        let (q, w, mut model) = two_unit_instance();
        model.set_tau_ms(1.0).unwrap();
        let mut calls = 0;
        let err =
            run_alcs(&q, w, &model, &AlcsConfig { budget_ms: 0.5, ..quadratic_config() }, |_| calls += 1).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert_eq!(calls, 0);
    }

    #[test]
    fn runs_are_deterministic_and_logged() {
        let (q, w, model) = two_unit_instance();
        let cfg = AlcsConfig { admm_epochs: 6, momentum: 0.9, ..quadratic_config() };
        let mut seen = Vec::new();
        let a = run_alcs(&q, w.clone(), &model, &cfg, |r| seen.push(r.clone())).unwrap();
        let b = run_alcs(&q, w, &model, &cfg, |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert_eq!(seen, a.log);
        assert_eq!(a.log.len(), 6);
        assert!(a.log.iter().all(|r| r.est_latency_ms <= cfg.budget_ms && r.nnz == 2));
    }

    #[test]
    fn finetune_preserves_mask() {
        let (q, mut w, _) = two_unit_instance();
        let before = w.clone();
        assert!(finetune(&q, &mut w, &[false, false], &quadratic_config()).len() == 5);
        assert!(w.kernels[0].values().iter().all(|&v| v == 0.0));
        let mut w = before.clone();
        w.kernels[0].values_mut().copy_from_slice(&[0.0, 5.0, 0.0, -5.0]);
        finetune(&q, &mut w, &[false, true], &quadratic_config());
        let v = w.kernels[0].values();
        assert_eq!((v[0], v[2]), (0.0, 0.0));
        assert!(v[1] != 5.0 && v[3] != -5.0);
        let mut w = before.clone();
        finetune(&q, &mut w, &[true, true], &AlcsConfig { finetune_epochs: 0, ..quadratic_config() });
        assert_eq!(w, before);
    }

    #[test]
    fn default_epsilon_tracks_budget() {
        assert_eq!(AlcsConfig { budget_ms: 0.08, ..Default::default() }.effective_epsilon_ms(), 0.08 / 1000.0);
        assert_eq!(AlcsConfig { budget_ms: 500.0, ..Default::default() }.effective_epsilon_ms(), 0.1);
        assert_eq!(
            AlcsConfig { budget_ms: 1.0, epsilon_ms: Some(0.5), ..Default::default() }.effective_epsilon_ms(),
            0.5
        );
    }
}
