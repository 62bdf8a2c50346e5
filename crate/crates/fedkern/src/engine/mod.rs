//! The training engines: the federated loop over simulated workers, the
//! centralized reference trainer consuming the identical seed streams, the
//! distributed coefficient shards, and the iteration-bound diagnostic.
//!
//! Both engines derive every random quantity (instance indices, directions,
//! masks, tree shapes, the surviving-mask worker) from the same seed
//! functions in this module, so a federated run and a centralized run under
//! one `TrainConfig` walk the same trajectory; the federated path merely
//! routes the arithmetic through masked tree sums.

mod centralized;
mod federated;
mod theory;

pub use centralized::{train_centralized, train_centralized_with_probes, CentralizedModel, ProbeRun};
pub use federated::{train_federated, FederatedModel};
pub use theory::{theory_iteration_bound, IterationBound, TheoryConstants};

use std::collections::HashMap;

use thiserror::Error;

use crate::comm::WorkerId;
use crate::dataio::VerticalDataset;
use crate::loss::LossSpec;
use crate::protocol::ProtocolError;
use crate::rff::KernelSpec;
use crate::seedstream::{derive_key, stream_value, tags};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("protocol aborted at iteration {iteration}")]
    ProtocolAbort {
        iteration: u64,
        #[source]
        source: ProtocolError,
    },
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Constant step size.
    pub gamma: f64,
    /// Regularization weight.
    pub lambda: f64,
    pub iterations: u64,
    pub loss: LossSpec,
    pub kernel: KernelSpec,
    pub q: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Per-iteration shrink factor applied to all previous coefficients.
    pub fn decay(&self) -> f64 {
        1.0 - self.gamma * self.lambda
    }

    pub fn validate(&self, data: &VerticalDataset) -> Result<(), EngineError> {
        let cfg_err = |msg: String| Err(EngineError::Config(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return cfg_err(format!("step size must be positive, got {}", self.gamma));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return cfg_err(format!("regularization must be positive, got {}", self.lambda));
        }
        // The convergence guarantee wants gamma < 1/lambda strictly; the
        // boundary gamma*lambda = 1 is algebraically well defined (previous
        // coefficients vanish each step) and is accepted.
        if self.gamma * self.lambda > 1.0 {
            return cfg_err(format!(
                "step size {} exceeds 1/lambda = {}",
                self.gamma,
                1.0 / self.lambda
            ));
        }
        if self.iterations == 0 {
            return cfg_err("iteration count must be at least 1".into());
        }
        if self.q != data.q() {
            return cfg_err(format!(
                "config says {} workers but the dataset is partitioned across {}",
                self.q,
                data.q()
            ));
        }
        if data.train.is_empty() {
            return cfg_err("training split is empty".into());
        }
        if self.loss.requires_binary_labels() {
            for s in data.train.iter().chain(data.test.iter()) {
                if s.label != 1.0 && s.label != -1.0 {
                    return cfg_err(format!(
                        "classification loss requires labels in {{-1,+1}}; sample {} has {}",
                        s.index, s.label
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `decay^k` via one shared code path, so the federated shards and the
/// centralized trainer materialize coefficients identically.
pub(crate) fn scale_pow(decay: f64, k: u64) -> f64 {
    if k == 0 {
        1.0
    } else {
        decay.powi(k as i32)
    }
}

/// Seed of the random direction for one feature iteration.
pub fn omega_seed(run_seed: u64, iteration: u64) -> u64 {
    derive_key(&[run_seed, tags::OMEGA, iteration])
}

/// The training instance drawn at one iteration (uniform with replacement).
pub fn sample_index(run_seed: u64, iteration: u64, n_train: usize) -> usize {
    let key = derive_key(&[run_seed, tags::SAMPLE]);
    (stream_value(key, iteration) % n_train as u64) as usize
}

pub(crate) fn t0_seed(run_seed: u64, iteration: u64) -> u64 {
    derive_key(&[run_seed, tags::TREE_T0, iteration])
}

pub(crate) fn eval_tree_seed(run_seed: u64, sample_id: u64) -> u64 {
    derive_key(&[run_seed, tags::EVAL_TREE, sample_id])
}

/// One worker's slice of the model: the coefficients born on the iterations
/// this worker initiated. Rescaling is lazy — a shared epoch counter
/// advances on every scale command and entries materialize as
/// `raw * decay^(epoch - birth)` on read, observationally identical to
/// eager scaling.
#[derive(Clone, Debug)]
pub struct CoefficientShard {
    pub owner: WorkerId,
    entries: Vec<(u64, f64)>,
    epoch: u64,
    decay: f64,
}

impl CoefficientShard {
    pub fn new(owner: WorkerId, decay: f64) -> Self {
        Self { owner, entries: Vec::new(), epoch: 0, decay }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Store the coefficient born at `iteration`, before that iteration's
    /// scale command runs.
    pub fn push(&mut self, iteration: u64, raw: f64) {
        debug_assert!(iteration > self.epoch, "coefficient born in the past");
        debug_assert!(self.entries.last().is_none_or(|&(i, _)| i < iteration));
        self.entries.push((iteration, raw));
    }

    /// Apply one scale command.
    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    /// `(birth iteration, raw)` pairs in insertion order.
    pub fn iter_raw(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Current coefficient values in insertion order.
    pub fn iter_coefficients(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        let (epoch, decay) = (self.epoch, self.decay);
        self.entries
            .iter()
            .map(move |&(i, raw)| (i, raw * scale_pow(decay, epoch - i)))
    }

    pub fn materialized(&self) -> Vec<(u64, f64)> {
        self.iter_coefficients().collect()
    }

    pub fn abs_sum(&self) -> f64 {
        self.iter_coefficients().map(|(_, a)| a.abs()).sum()
    }
}

/// Cached protocol outputs `w_j' x + b` per (feature iteration, sample id).
/// A hit short-circuits a protocol call, which is what keeps the fresh-call
/// count per iteration at O(t) instead of O(t^2).
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    map: HashMap<(u64, u64), f64>,
}

impl FeatureCache {
    pub fn get(&self, feature: u64, sample_id: u64) -> Option<f64> {
        self.map.get(&(feature, sample_id)).copied()
    }

    pub fn insert(&mut self, feature: u64, sample_id: u64, value: f64) {
        self.map.insert((feature, sample_id), value);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Which half of the dataset a sample reference points into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-iteration measurements of one run.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub iteration: u64,
    pub wall_ms: u64,
    /// Average training loss since the previous row.
    pub train_loss: f64,
    pub test_error: Option<f64>,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    /// Scalar messages per iteration, collected only when requested.
    pub per_iteration_messages: Option<Vec<u64>>,
    pub total_wall_ms: u64,
}

/// Sampling and bookkeeping switches that do not affect the trajectory.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Emit a metrics row (with test error) every this many iterations.
    pub eval_every: Option<u64>,
    pub track_per_iteration_messages: bool,
}
