//! Training loops: plain SGD/Adam with weight decay, early stopping, and
//! weight averaging, plus noise-stability optimization (gradient steps on
//! `+/-` paired weight perturbations), with generalization-gap and
//! Hessian-trace tracking.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hessian::{layer_trace, FdConfig, ParamLayout, TraceMethod};
#[cfg_attr(test, allow(unused_imports))]
use crate::math::F64Ext;
use crate::model::{
    apply_noise, draw_noise, gradient_prepared, loss, forward_prepared, tie_gradients,
    DatasetExample, Gradients, LossKind, MpnnModel, Objective, PreparedExample,
};
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Training settings. Defaults follow the reference experimental setup:
/// Adam at learning rate 0.01, 50 epochs, batch size 128; Algorithm-1
/// noise steps activate when `nso_sigma > 0`, with 10 perturbations.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub early_stop_patience: Option<usize>,
    pub weight_averaging: bool,
    /// Number of perturbations per step when noise-stability optimization
    /// is active.
    pub nso_m: usize,
    /// Noise standard deviation; 0 disables noise-stability steps. (The
    /// perturbation routine is parameterized by the standard deviation,
    /// not the variance.)
    pub nso_sigma: f64,
    pub seed: u64,
    /// Record per-layer mean Hessian traces every this many epochs.
    pub trace_monitor_every: Option<usize>,
    /// Also track the largest Hessian eigenvalue when monitoring (power
    /// iteration on averaged Hessian-vector products; costly).
    pub lambda_max_monitor: bool,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr: 0.01,
            epochs: 50,
            batch_size: 128,
            weight_decay: 0.0,
            early_stop_patience: None,
            weight_averaging: false,
            nso_m: 10,
            nso_sigma: 0.0,
            seed: 0,
            trace_monitor_every: None,
            lambda_max_monitor: false,
            loss: LossKind::BinaryLogistic,
        }
    }
}

/// Per-epoch scalars plus the optional curvature monitors.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// `(epoch, per-layer mean trace over the train set)`.
    pub traces: Vec<(usize, Vec<f64>)>,
    /// `(epoch, largest Hessian eigenvalue estimate)`.
    pub lambda_max: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
}

/// Mean loss of a model over a prepared set.
pub fn mean_loss_prepared(
    model: &MpnnModel,
    set: &[PreparedExample],
    kind: LossKind,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in set {
        let out = forward_prepared(model, &ex.x, &ex.p)?;
        total += loss(&out.output, ex.label, kind)?;
    }
    Ok(total / set.len() as f64)
}

/// Mean loss over raw examples.
pub fn mean_loss(model: &MpnnModel, set: &[DatasetExample], kind: LossKind) -> Result<f64> {
    let prepared = prepare_set(model, set)?;
    mean_loss_prepared(model, &prepared, kind)
}

/// Mean test loss minus mean train loss (held-out set as the population
/// proxy).
pub fn generalization_gap(
    model: &MpnnModel,
    train: &[DatasetExample],
    test: &[DatasetExample],
    kind: LossKind,
) -> Result<f64> {
    Ok(mean_loss(model, test, kind)? - mean_loss(model, train, kind)?)
}

pub fn prepare_set(model: &MpnnModel, set: &[DatasetExample]) -> Result<Vec<PreparedExample>> {
    set.iter().map(|ex| model.prepare(ex)).collect()
}

/// Batch-mean gradient (sum over examples, scaled by `1/len`).
fn batch_gradient(
    model: &MpnnModel,
    batch: &[PreparedExample],
    kind: LossKind,
) -> Result<Gradients> {
    let mut acc = Gradients::zeros_like(model);
    for ex in batch {
        let g = gradient_prepared(model, &ex.x, &ex.p, ex.label, Objective::Standard(kind))?;
        acc.add_assign(&g);
    }
    acc.scale_assign(1.0 / batch.len() as f64);
    Ok(acc)
}

fn add_weight_decay(model: &MpnnModel, grads: &mut Gradients, wd: f64) {
    if wd == 0.0 {
        return;
    }
    for (g, w) in grads.w.iter_mut().zip(model.weights()) {
        *g = g.add(&w.scale(wd)).expect("shapes");
    }
    if let (Some(gu), Some(wu)) = (&mut grads.u, model.anchor_weights()) {
        for (g, w) in gu.iter_mut().zip(wu) {
            *g = g.add(&w.scale(wd)).expect("shapes");
        }
    }
    if let (Some(gv), Some(wv)) = (&mut grads.v, model.gin_heads()) {
        for (g, w) in gv.iter_mut().zip(wv) {
            *g = g.add(&w.scale(wd)).expect("shapes");
        }
    }
}

/// `wize <- w - factor * g` applied entrywise across all weight groups.
fn apply_update(model: &mut MpnnModel, grads: &Gradients, factor: f64) {
    let l = model.depth();
    for t in 0..l {
        let w = &mut model.weights_mut()[t];
        for (a, g) in w.data_mut().iter_mut().zip(grads.w[t].data()) {
            *a -= factor * g;
        }
    }
    if let Some(gu) = &grads.u {
        if let Some(us) = model.anchor_weights_mut() {
            for (m, g) in us.iter_mut().zip(gu) {
                for (a, gg) in m.data_mut().iter_mut().zip(g.data()) {
                    *a -= factor * gg;
                }
            }
        }
    }
    if let Some(gv) = &grads.v {
        if let Some(vs) = model.gin_heads_mut() {
            for (m, g) in vs.iter_mut().zip(gv) {
                for (a, gg) in m.data_mut().iter_mut().zip(g.data()) {
                    *a -= factor * gg;
                }
            }
        }
    }
}

/// One plain SGD step on the batch-mean gradient.
pub fn sgd_step(
    model: &MpnnModel,
    batch: &[PreparedExample],
    lr: f64,
    kind: LossKind,
) -> Result<MpnnModel> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut g = batch_gradient(model, batch, kind)?;
    tie_gradients(model, &mut g);
    let mut out = model.clone();
    apply_update(&mut out, &g, lr);
    Ok(out)
}

/// One noise-stability step: draws `m` Gaussian perturbations, evaluates
/// the batch gradient at `theta + E_i` and `theta - E_i` (the same draw,
/// negated exactly), and applies
/// `theta <- theta - lr/(2m) * sum_i (g_i^+ + g_i^-)`.
///
/// With `sigma = 0` this reduces to one plain SGD step, bit-for-bit when
/// `m` is a power of two (the accumulated sum and the `lr/(2m)` scaling
/// are then exact).
pub fn noise_stability_step(
    model: &MpnnModel,
    batch: &[PreparedExample],
    m: usize,
    sigma: f64,
    lr: f64,
    seed: u64,
    kind: LossKind,
) -> Result<MpnnModel> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidParameter("sigma must be >= 0".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let sigmas = vec![sigma; model.depth()];
    let tree = SeedTree::new(seed);
    let mut acc = Gradients::zeros_like(model);
    for i in 0..m {
        let noise = draw_noise(model, &sigmas, tree.child("perturbation", i as u64).root())?;
        let plus = apply_noise(model, &noise, 1.0);
        acc.add_assign(&batch_gradient(&plus, batch, kind)?);
        let minus = apply_noise(model, &noise, -1.0);
        acc.add_assign(&batch_gradient(&minus, batch, kind)?);
    }
    tie_gradients(model, &mut acc);
    let mut out = model.clone();
    apply_update(&mut out, &acc, lr / (2.0 * m as f64));
    Ok(out)
}

/// Adam moment state over the flat parameter vector.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    fn new(total: usize) -> Self {
        Self {
            m: vec![0.0; total],
            v: vec![0.0; total],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

/// Runs the configured optimizer. Early stopping watches the test loss;
/// weight averaging (when enabled) returns the running mean of the
/// weights over the final half of the epochs that actually ran.
pub fn train(
    model: &MpnnModel,
    train_set: &[DatasetExample],
    test_set: &[DatasetExample],
    config: &TrainConfig,
) -> Result<(MpnnModel, TrainHistory)> {
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if !(config.lr > 0.0) && config.epochs > 0 {
        // lr = 0 is allowed: the loop runs and the weights never move.
        if config.lr < 0.0 {
            return Err(Error::InvalidParameter("negative learning rate".into()));
        }
    }
    if config.nso_sigma > 0.0 && config.nso_m == 0 {
        return Err(Error::InvalidParameter(
            "noise-stability optimization needs nso_m >= 1".into(),
        ));
    }
    let train_prep = prepare_set(model, train_set)?;
    let test_prep = if test_set.is_empty() {
        Vec::new()
    } else {
        prepare_set(model, test_set)?
    };

    let mut current = model.clone();
    let layout = ParamLayout::of(&current);
    let mut adam = AdamState::new(layout.total());
    let tree = SeedTree::new(config.seed);
    let mut history = TrainHistory::default();

    let mut best_test = f64::INFINITY;
    let mut since_best = 0usize;

    let avg_start = config.epochs / 2;
    let mut avg_sum: Option<Vec<f64>> = None;
    let mut avg_count = 0usize;

    let batch_size = config.batch_size.max(1);
    let n = train_prep.len();

    for epoch in 0..config.epochs {
        // Seeded shuffle; batches then run in index order.
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = tree.stream("shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut batch: Vec<PreparedExample> = Vec::with_capacity(batch_size.min(n));
        let mut batch_index = 0u64;
        let mut cursor = 0usize;
        while cursor < n {
            batch.clear();
            for &idx in order[cursor..(cursor + batch_size).min(n)].iter() {
                batch.push(train_prep[idx].clone());
            }
            cursor += batch_size;

            if config.nso_sigma > 0.0 {
                // Algorithm-1 step with per-batch noise redraws; the
                // averaged +/- gradient feeds the configured optimizer.
                let sigmas = vec![config.nso_sigma; current.depth()];
                let step_tree = tree.child("nso", (epoch as u64) << 20 | batch_index);
                let mut acc = Gradients::zeros_like(&current);
                for i in 0..config.nso_m {
                    let noise =
                        draw_noise(&current, &sigmas, step_tree.child("perturbation", i as u64).root())?;
                    let plus = apply_noise(&current, &noise, 1.0);
                    acc.add_assign(&batch_gradient(&plus, &batch, config.loss)?);
                    let minus = apply_noise(&current, &noise, -1.0);
                    acc.add_assign(&batch_gradient(&minus, &batch, config.loss)?);
                }
                acc.scale_assign(1.0 / (2.0 * config.nso_m as f64));
                add_weight_decay(&current, &mut acc, config.weight_decay);
                tie_gradients(&current, &mut acc);
                optimizer_step(&mut current, &acc, config, &layout, &mut adam);
            } else {
                let mut g = batch_gradient(&current, &batch, config.loss)?;
                add_weight_decay(&current, &mut g, config.weight_decay);
                tie_gradients(&current, &mut g);
                optimizer_step(&mut current, &g, config, &layout, &mut adam);
            }
            batch_index += 1;
        }

        let train_loss = mean_loss_prepared(&current, &train_prep, config.loss)?;
        let test_loss = if test_prep.is_empty() {
            train_loss
        } else {
            mean_loss_prepared(&current, &test_prep, config.loss)?
        };
        if !train_loss.is_finite() || !test_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            test_loss,
            gap: test_loss - train_loss,
        });

        if let Some(every) = config.trace_monitor_every {
            if every > 0 && epoch % every == 0 {
                let traces = mean_layer_traces(
                    &current,
                    &train_prep,
                    config.loss,
                    tree.child("trace-monitor", epoch as u64).root(),
                )?;
                history.traces.push((epoch, traces));
                if config.lambda_max_monitor {
                    let lam = largest_hessian_eigenvalue(
                        &current,
                        &train_prep,
                        Objective::Standard(config.loss),
                        40,
                        tree.child("lambda-max", epoch as u64).root(),
                    )?;
                    history.lambda_max.push((epoch, lam));
                }
            }
        }

        if epoch >= avg_start && config.weight_averaging {
            let theta = layout.flatten(&current);
            match &mut avg_sum {
                Some(sum) => {
                    for (s, t) in sum.iter_mut().zip(&theta) {
                        *s += t;
                    }
                }
                None => avg_sum = Some(theta),
            }
            avg_count += 1;
        }

        if let Some(patience) = config.early_stop_patience {
            if test_loss < best_test {
                best_test = test_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > patience {
                    break;
                }
            }
        }
    }

    if let (true, Some(sum)) = (config.weight_averaging, avg_sum) {
        let mean: Vec<f64> = sum.iter().map(|s| s / avg_count as f64).collect();
        layout.write(&mut current, &mean)?;
    }
    Ok((current, history))
}

fn optimizer_step(
    model: &mut MpnnModel,
    grads: &Gradients,
    config: &TrainConfig,
    layout: &ParamLayout,
    adam: &mut AdamState,
) {
    match config.optimizer {
        Optimizer::Sgd => apply_update(model, grads, config.lr),
        Optimizer::Adam => {
            let mut theta = layout.flatten(model);
            let g = layout.flatten_gradients(grads);
            adam.step(&mut theta, &g, config.lr);
            layout.write(model, &theta).expect("layout matches");
        }
    }
}

/// Per-layer mean Hessian traces over a prepared set (exact sweep where
/// the layer fits under the cap, Hutchinson probes otherwise).
pub fn mean_layer_traces(
    model: &MpnnModel,
    set: &[PreparedExample],
    kind: LossKind,
    seed: u64,
) -> Result<Vec<f64>> {
    let fd = FdConfig::default();
    let layout = ParamLayout::of(model);
    let objective = Objective::Standard(kind);
    let tree = SeedTree::new(seed);
    let mut out = Vec::with_capacity(model.depth());
    for layer in 1..=model.depth() {
        let params = layout.layer(layer)?.len();
        let method = if params <= fd.exact_cap {
            TraceMethod::Exact
        } else {
            TraceMethod::Hutchinson { probes: 64 }
        };
        let mut mean = 0.0;
        for (idx, ex) in set.iter().enumerate() {
            mean += layer_trace(
                model,
                ex,
                layer,
                objective,
                method,
                tree.child("ex", idx as u64).root(),
                &fd,
            )?
            .trace;
        }
        out.push(mean / set.len() as f64);
    }
    Ok(out)
}

/// Largest eigenvalue of the train-set-averaged loss Hessian via power
/// iteration on finite-difference Hessian-vector products.
pub fn largest_hessian_eigenvalue(
    model: &MpnnModel,
    set: &[PreparedExample],
    objective: Objective,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    let fd = FdConfig::default();
    let layout = ParamLayout::of(model);
    let total = layout.total();
    let mut rng = SeedTree::new(seed).stream("lambda-start", 0);
    let mut v: Vec<f64> = (0..total).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let mut hv = vec![0.0; total];
        for ex in set {
            let contribution = crate::hessian::hvp(model, ex, objective, &v, &fd)?;
            for (a, b) in hv.iter_mut().zip(&contribution) {
                *a += b;
            }
        }
        for a in hv.iter_mut() {
            *a /= set.len() as f64;
        }
        lambda = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let norm = normalize(&mut hv);
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = hv;
    }
    Ok(lambda)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, DiffusionKind, GraphFamily};
    use crate::linalg::DenseMatrix;
    use crate::model::{Activation, ActivationTriple};

    fn dataset(count: usize, n: usize, d0: usize, seed: u64) -> Vec<DatasetExample> {
        let tree = SeedTree::new(seed);
        (0..count)
            .map(|i| {
                let g = generate(GraphFamily::ErdosRenyi { n, p: 0.5 }, seed * 1000 + i as u64)
                    .unwrap();
                let mut rng = tree.stream("x", i as u64);
                let x = DenseMatrix::from_fn(n, d0, |_, _| rng.gen::<f64>() - 0.5);
                DatasetExample::new(x, g, (i % 2 == 0) as usize).unwrap()
            })
            .collect()
    }

    fn small_model(seed: u64) -> MpnnModel {
        MpnnModel::random_init(
            vec![3, 4, 2],
            vec![ActivationTriple::uniform(Activation::Tanh)],
            DiffusionKind::SymNormalizedSelfLoops,
            false,
            true,
            false,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let model = small_model(1);
        let data = dataset(6, 5, 3, 2);
        let config = TrainConfig {
            optimizer: Optimizer::Sgd,
            lr: 0.0,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&model, &data, &data, &config).unwrap();
        assert_eq!(trained, model);
        let first = history.epochs[0].train_loss;
        assert!(history.epochs.iter().all(|e| e.train_loss == first));
    }

    #[test]
    fn one_example_training_reduces_loss() {
        let model = small_model(3);
        let data = dataset(1, 5, 3, 4);
        let config = TrainConfig {
            optimizer: Optimizer::Sgd,
            lr: 0.5,
            epochs: 40,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &data, &data, &config).unwrap();
        // Monotone non-increase over the last 10 epochs of a smooth
        // one-example fit.
        let k = history.epochs.len();
        for i in (k - 10)..k {
            assert!(
                history.epochs[i].train_loss <= history.epochs[i - 1].train_loss + 1e-12,
                "epoch {i}"
            );
        }
        assert!(history.epochs[k - 1].train_loss < history.epochs[0].train_loss);
    }

    #[test]
    fn heavy_weight_decay_shrinks_weights() {
        let model = small_model(5);
        let data = dataset(8, 5, 3, 6);
        let base = TrainConfig {
            optimizer: Optimizer::Sgd,
            lr: 0.05,
            epochs: 20,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let decayed = TrainConfig { weight_decay: 10.0, ..base.clone() };
        let (plain, _) = train(&model, &data, &data, &base).unwrap();
        let (shrunk, _) = train(&model, &data, &data, &decayed).unwrap();
        let fro = |m: &MpnnModel| -> f64 {
            m.weights().iter().map(|w| w.frobenius_norm().powi(2)).sum::<f64>().sqrt()
        };
        assert!(fro(&shrunk) < fro(&plain));
    }

    #[test]
    fn generalization_gap_on_same_set_is_zero() {
        let model = small_model(7);
        let data = dataset(5, 5, 3, 8);
        let gap = generalization_gap(&model, &data, &data, LossKind::BinaryLogistic).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn nso_step_with_zero_sigma_bit_equals_sgd_step() {
        let model = small_model(9);
        let data = dataset(4, 5, 3, 10);
        let prep = prepare_set(&model, &data).unwrap();
        let lr = 0.05;
        let sgd = sgd_step(&model, &prep, lr, LossKind::BinaryLogistic).unwrap();
        for m in [1usize, 2, 4] {
            let nso =
                noise_stability_step(&model, &prep, m, 0.0, lr, 99, LossKind::BinaryLogistic)
                    .unwrap();
            for (a, b) in nso.weights().iter().zip(sgd.weights()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "m = {m}");
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let model = small_model(11);
        let data = dataset(10, 5, 3, 12);
        let config = TrainConfig {
            optimizer: Optimizer::Adam,
            epochs: 5,
            batch_size: 4,
            nso_sigma: 0.05,
            nso_m: 2,
            seed: 31,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&model, &data, &data, &config).unwrap();
        let (b, hb) = train(&model, &data, &data, &config).unwrap();
        assert_eq!(a, b);
        for (x, y) in ha.epochs.iter().zip(&hb.epochs) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }

    #[test]
    fn early_stopping_truncates_history() {
        let model = small_model(13);
        let train_set = dataset(4, 5, 3, 14);
        let test_set = dataset(8, 5, 3, 15);
        // Memorizing 4 examples quickly stops helping a disjoint test
        // set; patience 3 must cut the run well short of 300 epochs.
        let config = TrainConfig {
            optimizer: Optimizer::Sgd,
            lr: 1.0,
            epochs: 300,
            batch_size: 4,
            early_stop_patience: Some(3),
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &train_set, &test_set, &config).unwrap();
        assert!(history.epochs.len() < 300, "ran {}", history.epochs.len());
    }
}
