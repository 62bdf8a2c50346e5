//! The centralized reference trainer: one process with full feature access
//! running the identical update rule on the identical seed streams — the
//! same instance draws, the same directions, and the same surviving mask
//! regenerated from the worker secrets. No masking, trees, shards, or
//! transport are involved, which makes this the independent ground truth
//! the federated engine is checked against.

use std::collections::HashMap;
use std::time::Instant;

use crate::dataio::{sparse_dot, Sample, VerticalDataset};
use crate::protocol::Protocol;
use crate::rff::{phi_from_scalar, sample_direction};

use super::{
    omega_seed, sample_index, scale_pow, EngineError, EvalOptions, MetricsRow, RunMetrics, Split,
    TrainConfig,
};

/// Direct computation of the per-feature scalars `w_f' x + b_f`, cached per
/// (feature, sample id) like the federated initiator's cache.
#[derive(Clone, Debug)]
struct ScalarOracle {
    /// Dense direction per feature iteration (index `t - 1`).
    omegas: Vec<Vec<f64>>,
    /// Surviving mask per feature iteration.
    offsets: Vec<f64>,
    cache: HashMap<(u64, u64), f64>,
    train: Vec<Sample>,
    test: Vec<Sample>,
}

impl ScalarOracle {
    fn sample(&self, split: Split, idx: usize) -> &Sample {
        match split {
            Split::Train => &self.train[idx],
            Split::Test => &self.test[idx],
        }
    }

    fn scalar(&mut self, feature: u64, split: Split, idx: usize) -> f64 {
        let id = self.sample(split, idx).index as u64;
        if let Some(&u) = self.cache.get(&(feature, id)) {
            return u;
        }
        let k = (feature - 1) as usize;
        let u = sparse_dot(&self.sample(split, idx).features, &self.omegas[k]) + self.offsets[k];
        self.cache.insert((feature, id), u);
        u
    }
}

/// The centralized model: a flat coefficient list with the same lazy
/// rescale bookkeeping as the federated shards.
#[derive(Clone, Debug)]
pub struct CentralizedModel {
    pub cfg: TrainConfig,
    entries: Vec<(u64, f64)>,
    epoch: u64,
    oracle: ScalarOracle,
}

impl CentralizedModel {
    fn new(data: &VerticalDataset, cfg: TrainConfig) -> Self {
        Self {
            cfg,
            entries: Vec::new(),
            epoch: 0,
            oracle: ScalarOracle {
                omegas: Vec::new(),
                offsets: Vec::new(),
                cache: HashMap::new(),
                train: data.train.clone(),
                test: data.test.clone(),
            },
        }
    }

    pub fn coefficients(&self) -> Vec<(u64, f64)> {
        let decay = self.cfg.decay();
        self.entries
            .iter()
            .map(|&(i, raw)| (i, raw * scale_pow(decay, self.epoch - i)))
            .collect()
    }

    /// `f(x)` as the materialized coefficient sum in birth order — the same
    /// summation order as the federated evaluation with a single active
    /// worker.
    pub fn evaluate(&mut self, split: Split, idx: usize) -> f64 {
        let decay = self.cfg.decay();
        let epoch = self.epoch;
        let oracle = &mut self.oracle;
        let mut acc = 0.0;
        for &(i, raw) in &self.entries {
            let u = oracle.scalar(i, split, idx);
            acc += raw * scale_pow(decay, epoch - i) * phi_from_scalar(u);
        }
        acc
    }

    pub fn predict_label(&mut self, split: Split, idx: usize) -> f64 {
        if self.evaluate(split, idx) < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn evaluate_test_error(&mut self) -> f64 {
        assert!(!self.oracle.test.is_empty(), "test error needs a nonempty test set");
        let labels: Vec<f64> = self.oracle.test.iter().map(|s| s.label).collect();
        let wrong = labels
            .iter()
            .enumerate()
            .filter(|&(idx, &y)| self.predict_label(Split::Test, idx) != y)
            .count();
        wrong as f64 / labels.len() as f64
    }
}

/// Train the reference model. The trajectory is coefficient-for-coefficient
/// the one the federated engine produces under the same config.
pub fn train_centralized(
    data: &VerticalDataset,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<(CentralizedModel, RunMetrics), EngineError> {
    cfg.validate(data)?;
    let protocol = Protocol::new(cfg.seed, cfg.q);
    let active = data.label_holder;
    let mut model = CentralizedModel::new(data, cfg.clone());
    let d = data.dim();
    let n_train = data.train.len();
    let start = Instant::now();
    let mut metrics = RunMetrics::default();
    let mut window_loss = 0.0;
    let mut window_count = 0u64;

    for t in 1..=cfg.iterations {
        let s_idx = sample_index(cfg.seed, t, n_train);
        model
            .oracle
            .omegas
            .push(sample_direction(&cfg.kernel, omega_seed(cfg.seed, t), d).omega);
        let b = protocol
            .surviving_mask(t, active)
            .map_err(|source| EngineError::ProtocolAbort { iteration: t, source })?;
        model.oracle.offsets.push(b);

        let f = model.evaluate(Split::Train, s_idx);
        let u_t = model.oracle.scalar(t, Split::Train, s_idx);
        let y = model.oracle.train[s_idx].label;
        let alpha = -cfg.gamma * cfg.loss.derivative(f, y) * phi_from_scalar(u_t);
        model.entries.push((t, alpha));
        model.epoch += 1;

        window_loss += cfg.loss.value(f, y);
        window_count += 1;
        if opts.eval_every.is_some_and(|k| t % k == 0) {
            let test_error =
                (!model.oracle.test.is_empty()).then(|| model.evaluate_test_error());
            metrics.rows.push(MetricsRow {
                iteration: t,
                wall_ms: start.elapsed().as_millis() as u64,
                train_loss: window_loss / window_count.max(1) as f64,
                test_error,
                messages: 0,
                bytes: 0,
            });
            window_loss = 0.0;
            window_count = 0;
        }
    }
    metrics.total_wall_ms = start.elapsed().as_millis() as u64;
    Ok((model, metrics))
}

/// Probe predictions of one long reference run.
#[derive(Clone, Debug)]
pub struct ProbeRun {
    /// `(iteration, f_t at every probe)` at each requested snapshot, in
    /// ascending iteration order.
    pub snapshots: Vec<(u64, Vec<f64>)>,
    pub final_test_error: Option<f64>,
}

/// Long-run reference trainer that tracks running predictions for every
/// training sample and probe point instead of re-evaluating the coefficient
/// sum (`f_{t+1} = decay * f_t + alpha_t * phi_t`), keeping the cost per
/// iteration linear. Same trajectory as `train_centralized` up to float
/// rounding, which the trend checks it serves are insensitive to.
pub fn train_centralized_with_probes(
    data: &VerticalDataset,
    cfg: &TrainConfig,
    probes: &[Vec<(usize, f64)>],
    snapshot_iterations: &[u64],
) -> Result<ProbeRun, EngineError> {
    cfg.validate(data)?;
    let protocol = Protocol::new(cfg.seed, cfg.q);
    let active = data.label_holder;
    let d = data.dim();
    let n_train = data.train.len();
    let spec = cfg.kernel;
    let decay = cfg.decay();

    let mut snaps: Vec<u64> = snapshot_iterations.to_vec();
    snaps.sort_unstable();
    snaps.dedup();

    let mut pred_train = vec![0.0f64; n_train];
    let mut pred_test = vec![0.0f64; data.test.len()];
    let mut pred_probe = vec![0.0f64; probes.len()];
    let mut snapshots = Vec::with_capacity(snaps.len());

    for t in 1..=cfg.iterations {
        let s_idx = sample_index(cfg.seed, t, n_train);
        let omega = sample_direction(&spec, omega_seed(cfg.seed, t), d).omega;
        let b = protocol
            .surviving_mask(t, active)
            .map_err(|source| EngineError::ProtocolAbort { iteration: t, source })?;

        let f = pred_train[s_idx];
        let y = data.train[s_idx].label;
        let u_t = sparse_dot(&data.train[s_idx].features, &omega) + b;
        let alpha = -cfg.gamma * cfg.loss.derivative(f, y) * phi_from_scalar(u_t);

        for (p, sample) in data.train.iter().enumerate() {
            let u = sparse_dot(&sample.features, &omega) + b;
            pred_train[p] = decay * pred_train[p] + alpha * phi_from_scalar(u);
        }
        for (p, sample) in data.test.iter().enumerate() {
            let u = sparse_dot(&sample.features, &omega) + b;
            pred_test[p] = decay * pred_test[p] + alpha * phi_from_scalar(u);
        }
        for (p, probe) in probes.iter().enumerate() {
            let u = sparse_dot(probe, &omega) + b;
            pred_probe[p] = decay * pred_probe[p] + alpha * phi_from_scalar(u);
        }
        if snaps.binary_search(&t).is_ok() {
            snapshots.push((t, pred_probe.clone()));
        }
    }

    let final_test_error = (!data.test.is_empty()).then(|| {
        let wrong = data
            .test
            .iter()
            .zip(&pred_test)
            .filter(|(s, f)| (if **f < 0.0 { -1.0 } else { 1.0 }) != s.label)
            .count();
        wrong as f64 / data.test.len() as f64
    });
    Ok(ProbeRun { snapshots, final_test_error })
}
