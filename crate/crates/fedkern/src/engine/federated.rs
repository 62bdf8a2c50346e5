//! The federated training loop. Per iteration the active worker draws an
//! instance and broadcasts its index over the reverse-order tree `T0`; all
//! workers regenerate the iteration's direction from the broadcast index;
//! the masked inner-product exchange yields `w_t' x + b` (cached); each
//! worker evaluates its local model share `f^l`; a tree sum over `T0`
//! reconstructs `f(x)`; the active worker stores the new coefficient and a
//! reverse-order broadcast carries the rescale command.

use std::time::Instant;

use crate::comm::{broadcast_reverse, build_tree, tree_sum, MsgTag, Recorder, TreeKind, WorkerId};
use crate::dataio::{VerticalDataset, WorkerSlice};
use crate::protocol::Protocol;
use crate::rff::{omega_coord, phi_from_scalar};

use super::{
    eval_tree_seed, omega_seed, sample_index, t0_seed, CoefficientShard, EngineError, EvalOptions,
    FeatureCache, MetricsRow, RunMetrics, Split, TrainConfig,
};

/// A trained (or in-training) federated model: per-worker data slices,
/// coefficient shards, and protocol-output caches.
#[derive(Clone, Debug)]
pub struct FederatedModel {
    pub cfg: TrainConfig,
    protocol: Protocol,
    slices: Vec<WorkerSlice>,
    /// Original sample ids, the cache keys shared with replays.
    train_ids: Vec<u64>,
    test_ids: Vec<u64>,
    shards: Vec<CoefficientShard>,
    caches: Vec<FeatureCache>,
    active: WorkerId,
}

impl FederatedModel {
    fn new(data: &VerticalDataset, cfg: TrainConfig, protocol: Protocol) -> Self {
        let decay = cfg.decay();
        let q = cfg.q;
        Self {
            protocol,
            slices: data.worker_slices(),
            train_ids: data.train.iter().map(|s| s.index as u64).collect(),
            test_ids: data.test.iter().map(|s| s.index as u64).collect(),
            shards: (0..q).map(|w| CoefficientShard::new(WorkerId(w), decay)).collect(),
            caches: vec![FeatureCache::default(); q],
            active: data.label_holder,
            cfg,
        }
    }

    pub fn q(&self) -> usize {
        self.cfg.q
    }

    pub fn active_worker(&self) -> WorkerId {
        self.active
    }

    pub fn shards(&self) -> &[CoefficientShard] {
        &self.shards
    }

    /// All coefficients across shards, materialized, ordered by birth
    /// iteration.
    pub fn coefficients(&self) -> Vec<(u64, f64)> {
        let mut all: Vec<(u64, f64)> = self
            .shards
            .iter()
            .flat_map(|s| s.iter_coefficients())
            .collect();
        all.sort_by_key(|&(i, _)| i);
        all
    }

    fn sample_id(&self, split: Split, idx: usize) -> u64 {
        match split {
            Split::Train => self.train_ids[idx],
            Split::Test => self.test_ids[idx],
        }
    }

    fn row<'a>(slice: &'a WorkerSlice, split: Split, idx: usize) -> &'a [(usize, f64)] {
        match split {
            Split::Train => &slice.train[idx],
            Split::Test => &slice.test[idx],
        }
    }

    /// Worker-local partial `<w_G, x_G>`; the worker regenerates exactly
    /// its own coordinates of the direction.
    fn partial(&self, worker: WorkerId, feature: u64, split: Split, idx: usize) -> f64 {
        let seed = omega_seed(self.cfg.seed, feature);
        Self::row(&self.slices[worker.0], split, idx)
            .iter()
            .map(|&(j, v)| omega_coord(&self.cfg.kernel, seed, j) * v)
            .sum()
    }

    /// The protocol output `w_f' x + b` for one (feature, sample) pair,
    /// from the initiator's cache or a fresh exchange.
    fn scalar(
        &mut self,
        initiator: WorkerId,
        feature: u64,
        split: Split,
        idx: usize,
        rec: &mut Recorder,
    ) -> Result<f64, EngineError> {
        let id = self.sample_id(split, idx);
        if let Some(u) = self.caches[initiator.0].get(feature, id) {
            return Ok(u);
        }
        let u = {
            let this = &*self;
            let partials = move |w: WorkerId| this.partial(w, feature, split, idx);
            this.protocol
                .secure_inner_product(initiator, feature, &partials, rec)
                .map_err(|source| EngineError::ProtocolAbort { iteration: feature, source })?
        };
        self.caches[initiator.0].insert(feature, id, u);
        Ok(u)
    }

    /// Worker-local model share `f^l(x) = sum_{i in shard} alpha_i phi_i(x)`,
    /// using cached protocol outputs where present.
    pub fn local_evaluate(
        &mut self,
        worker: WorkerId,
        split: Split,
        idx: usize,
        rec: &mut Recorder,
    ) -> Result<f64, EngineError> {
        if self.shards[worker.0].is_empty() {
            return Ok(0.0);
        }
        let entries: Vec<(u64, f64)> = self.shards[worker.0].iter_coefficients().collect();
        let mut acc = 0.0;
        for (feature, alpha) in entries {
            let u = self.scalar(worker, feature, split, idx, rec)?;
            acc += alpha * phi_from_scalar(u);
        }
        Ok(acc)
    }

    /// Global prediction `f(x)`: tree sum of the local shares.
    pub fn predict(
        &mut self,
        split: Split,
        idx: usize,
        rec: &mut Recorder,
    ) -> Result<f64, EngineError> {
        let workers: Vec<WorkerId> = (0..self.cfg.q).map(WorkerId).collect();
        let mut locals = vec![0.0; self.cfg.q];
        for w in &workers {
            locals[w.0] = self.local_evaluate(*w, split, idx, rec)?;
        }
        let id = self.sample_id(split, idx);
        let tree = build_tree(&workers, eval_tree_seed(self.cfg.seed, id)).expect("nonempty");
        rec.set_scope(TreeKind::Eval, id);
        Ok(tree_sum(&tree, |w| locals[w.0], MsgTag::Eval, rec))
    }

    /// Classification label with the deterministic tie rule `f = 0 -> +1`.
    pub fn predict_label(
        &mut self,
        split: Split,
        idx: usize,
        rec: &mut Recorder,
    ) -> Result<f64, EngineError> {
        let f = self.predict(split, idx, rec)?;
        Ok(if f < 0.0 { -1.0 } else { 1.0 })
    }

    /// Fraction of test samples with `sign(f(x)) != y`.
    pub fn evaluate_test_error(&mut self, rec: &mut Recorder) -> Result<f64, EngineError> {
        let labels = self.slices[self.active.0]
            .test_labels
            .clone()
            .expect("active worker holds labels");
        assert!(!labels.is_empty(), "test error needs a nonempty test set");
        let mut wrong = 0usize;
        for (idx, &y) in labels.iter().enumerate() {
            if self.predict_label(Split::Test, idx, rec)? != y {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / labels.len() as f64)
    }
}

/// Run the federated training loop. Training traffic lands in `rec`;
/// test-error evaluations sampled via `opts.eval_every` use a scratch
/// recorder so the complexity accounting stays that of training.
pub fn train_federated(
    data: &VerticalDataset,
    cfg: &TrainConfig,
    opts: &EvalOptions,
    rec: &mut Recorder,
) -> Result<(FederatedModel, RunMetrics), EngineError> {
    cfg.validate(data)?;
    let protocol = Protocol::new(cfg.seed, cfg.q);
    let mut model = FederatedModel::new(data, cfg.clone(), protocol);
    let workers: Vec<WorkerId> = (0..cfg.q).map(WorkerId).collect();
    let active = model.active;
    let n_train = data.train.len();
    let start = Instant::now();

    let mut metrics = RunMetrics {
        per_iteration_messages: opts.track_per_iteration_messages.then(Vec::new),
        ..RunMetrics::default()
    };
    let mut window_loss = 0.0;
    let mut window_count = 0u64;

    for t in 1..=cfg.iterations {
        let messages_before = rec.ledger.messages;

        // Instance selection at the active worker, index broadcast over
        // the reverse-order tree T0.
        let s_idx = sample_index(cfg.seed, t, n_train);
        let t0 = build_tree(&workers, t0_seed(cfg.seed, t)).expect("nonempty");
        rec.set_scope(TreeKind::T0, t);
        broadcast_reverse(&t0, s_idx as f64, MsgTag::Index, rec);

        // The iteration's masked inner product, cached at the initiator.
        let u_t = model.scalar(active, t, Split::Train, s_idx, rec)?;

        // Local shares and the global prediction over T0.
        let mut locals = vec![0.0; cfg.q];
        for w in &workers {
            locals[w.0] = model.local_evaluate(*w, Split::Train, s_idx, rec)?;
        }
        rec.set_scope(TreeKind::T0, t);
        let f = tree_sum(&t0, |w| locals[w.0], MsgTag::Eval, rec);

        // New coefficient at the active worker, then the rescale command.
        let y = model.slices[active.0].train_labels.as_ref().expect("labels")[s_idx];
        let alpha = -cfg.gamma * cfg.loss.derivative(f, y) * phi_from_scalar(u_t);
        model.shards[active.0].push(t, alpha);
        rec.set_scope(TreeKind::T0, t);
        broadcast_reverse(&t0, cfg.decay(), MsgTag::Scale, rec);
        for shard in &mut model.shards {
            shard.advance_epoch();
        }

        window_loss += cfg.loss.value(f, y);
        window_count += 1;
        if let Some(per_iter) = &mut metrics.per_iteration_messages {
            per_iter.push(rec.ledger.messages - messages_before);
        }

        if opts.eval_every.is_some_and(|k| t % k == 0) {
            let test_error = if data.test.is_empty() {
                None
            } else {
                let mut scratch = Recorder::counting();
                Some(model.evaluate_test_error(&mut scratch)?)
            };
            metrics.rows.push(MetricsRow {
                iteration: t,
                wall_ms: start.elapsed().as_millis() as u64,
                train_loss: window_loss / window_count.max(1) as f64,
                test_error,
                messages: rec.ledger.messages,
                bytes: rec.ledger.bytes(),
            });
            window_loss = 0.0;
            window_count = 0;
        }
    }
    metrics.total_wall_ms = start.elapsed().as_millis() as u64;
    Ok((model, metrics))
}
