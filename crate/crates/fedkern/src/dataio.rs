//! Sparse classification/regression data: parsing, min-max normalization,
//! deterministic train/test splitting, and vertical feature partitioning
//! across `q` workers.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::comm::WorkerId;
use crate::seedstream::{derive_key, tags, CounterStream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One observation: a sparse feature vector and a label (`+/-1` for
/// classification). `features` is sorted by feature id with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub features: Vec<(usize, f64)>,
    pub label: f64,
}

impl Sample {
    pub fn new(index: usize, features: Vec<(usize, f64)>, label: f64) -> Self {
        debug_assert!(features.windows(2).all(|w| w[0].0 < w[1].0));
        Self { index, features, label }
    }

    /// Highest feature id present, if any.
    pub fn max_feature(&self) -> Option<usize> {
        self.features.last().map(|&(j, _)| j)
    }
}

/// Parse the sparse text format `label idx:val idx:val ...` with 1-based,
/// strictly ascending indices. Indices come out 0-based; empty lines are
/// skipped.
pub fn parse_sparse_str(content: &str) -> Result<Vec<Sample>, DataError> {
    let mut samples = Vec::new();
    for (lineno, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Parse { line: lineno + 1, msg };
        let mut parts = line.split_whitespace();
        let label: f64 = parts
            .next()
            .expect("non-empty line has a first token")
            .parse()
            .map_err(|_| err("label is not a number".into()))?;
        let mut features = Vec::new();
        let mut prev: Option<usize> = None;
        for tok in parts {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got `{tok}`")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| err(format!("feature index `{idx_s}` is not an integer")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based; got 0".into()));
            }
            if let Some(p) = prev {
                if idx <= p {
                    return Err(err(format!(
                        "feature indices must be strictly ascending; {idx} follows {p}"
                    )));
                }
            }
            prev = Some(idx);
            let val: f64 = val_s
                .parse()
                .map_err(|_| err(format!("feature value `{val_s}` is not a number")))?;
            features.push((idx - 1, val));
        }
        samples.push(Sample::new(samples.len(), features, label));
    }
    Ok(samples)
}

pub fn parse_sparse_file(path: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let content = std::fs::read_to_string(path)?;
    parse_sparse_str(&content)
}

/// Write samples back out in the 1-based sparse text format.
pub fn write_libsvm(samples: &[Sample], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::new();
    for s in samples {
        write!(out, "{}", s.label).expect("string write");
        for &(j, v) in &s.features {
            write!(out, " {}:{}", j + 1, v).expect("string write");
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Per-feature min-max statistics, fitted on one set of samples (the
/// training split) and reusable on another.
#[derive(Clone, Debug)]
pub struct NormalizationStats {
    /// `(min, max)` over the *present* entries of each feature.
    ranges: Vec<Option<(f64, f64)>>,
}

impl NormalizationStats {
    pub fn fit(samples: &[Sample], dim: usize) -> Self {
        let mut ranges: Vec<Option<(f64, f64)>> = vec![None; dim];
        for s in samples {
            for &(j, v) in &s.features {
                let r = ranges[j].get_or_insert((v, v));
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        Self { ranges }
    }

    /// Scale present entries into `[0, 1]`; constant features map to 0 and
    /// absent entries stay implicit zeros. Values outside the fitted range
    /// (possible on a held-out split) are clamped so every feature stays in
    /// the small range the masking analysis assumes.
    pub fn apply(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| {
                let features = s
                    .features
                    .iter()
                    .map(|&(j, v)| {
                        let scaled = match self.ranges.get(j).copied().flatten() {
                            Some((lo, hi)) if hi > lo => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
                            _ => 0.0,
                        };
                        (j, scaled)
                    })
                    .collect();
                Sample::new(s.index, features, s.label)
            })
            .collect()
    }
}

/// Min-max scale each feature of `samples` to `[0, 1]` using statistics
/// from the same samples.
pub fn normalize(samples: &[Sample]) -> Vec<Sample> {
    assert!(!samples.is_empty(), "normalize requires a nonempty sample list");
    let dim = dimension_of(samples);
    NormalizationStats::fit(samples, dim).apply(samples)
}

/// Number of feature columns implied by the data (max feature id + 1).
pub fn dimension_of(samples: &[Sample]) -> usize {
    samples
        .iter()
        .filter_map(Sample::max_feature)
        .max()
        .map_or(0, |m| m + 1)
}

/// Deterministic shuffled split with `|train| = round(ratio * n)`.
pub fn split_train_test(samples: &[Sample], ratio: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio must be in (0, 1)");
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    CounterStream::new(derive_key(&[seed, tags::SPLIT])).shuffle(&mut order);
    let n_train = (ratio * n as f64).round() as usize;
    let train = order[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| samples[i].clone()).collect();
    (train, test)
}

/// How feature columns are assigned to workers.
#[derive(Clone, Debug)]
pub enum PartitionScheme {
    Contiguous,
    RoundRobin,
    Explicit(Vec<Vec<usize>>),
}

/// Disjoint cover of the `d` feature columns by `q` worker groups.
#[derive(Clone, Debug)]
pub struct FeatureGroupPartition {
    groups: Vec<Vec<usize>>,
    worker_of: Vec<usize>,
}

impl FeatureGroupPartition {
    pub fn q(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.worker_of.len()
    }

    /// The sorted feature ids held by one worker.
    pub fn group(&self, worker: WorkerId) -> &[usize] {
        &self.groups[worker.0]
    }

    pub fn worker_of(&self, feature: usize) -> WorkerId {
        WorkerId(self.worker_of[feature])
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> {
        (0..self.groups.len()).map(WorkerId)
    }
}

/// Partition features `{0..d-1}` into `q` disjoint nonempty groups.
pub fn partition_features(
    d: usize,
    q: usize,
    scheme: &PartitionScheme,
) -> Result<FeatureGroupPartition, DataError> {
    if q == 0 {
        return Err(DataError::Config("worker count must be at least 1".into()));
    }
    if q > d {
        return Err(DataError::Config(format!(
            "cannot partition {d} features across {q} workers"
        )));
    }
    let groups: Vec<Vec<usize>> = match scheme {
        PartitionScheme::Contiguous => {
            // The first (d mod q) blocks take the ceiling size.
            let base = d / q;
            let extra = d % q;
            let mut start = 0;
            (0..q)
                .map(|g| {
                    let len = base + usize::from(g < extra);
                    let block = (start..start + len).collect();
                    start += len;
                    block
                })
                .collect()
        }
        PartitionScheme::RoundRobin => {
            let mut groups = vec![Vec::new(); q];
            for j in 0..d {
                groups[j % q].push(j);
            }
            groups
        }
        PartitionScheme::Explicit(raw) => {
            if raw.len() != q {
                return Err(DataError::Config(format!(
                    "explicit partition has {} groups, expected {q}",
                    raw.len()
                )));
            }
            let mut groups: Vec<Vec<usize>> = raw.clone();
            for g in &mut groups {
                g.sort_unstable();
            }
            groups
        }
    };

    let mut worker_of = vec![usize::MAX; d];
    for (w, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(DataError::Config(format!("group {w} is empty")));
        }
        for &j in g {
            if j >= d {
                return Err(DataError::Config(format!(
                    "feature {j} out of range for dimension {d}"
                )));
            }
            if worker_of[j] != usize::MAX {
                return Err(DataError::Config(format!(
                    "feature {j} assigned to two groups"
                )));
            }
            worker_of[j] = w;
        }
    }
    if let Some(j) = worker_of.iter().position(|&w| w == usize::MAX) {
        return Err(DataError::Config(format!("feature {j} not covered by any group")));
    }
    Ok(FeatureGroupPartition { groups, worker_of })
}

/// One worker's private view: its feature columns of every sample, plus the
/// labels when this worker is the label holder.
#[derive(Clone, Debug)]
pub struct WorkerSlice {
    pub worker: WorkerId,
    pub features: Vec<usize>,
    /// Per train sample: the `(feature, value)` pairs within this group.
    pub train: Vec<Vec<(usize, f64)>>,
    pub test: Vec<Vec<(usize, f64)>>,
    /// Labels; populated only on the active worker.
    pub train_labels: Option<Vec<f64>>,
    pub test_labels: Option<Vec<f64>>,
}

/// A normalized dataset split vertically across `q` workers. Normalization
/// statistics come from the training split only and are reused on the test
/// split; the harness keeps the full matrix for reference oracles, while
/// workers see their own `WorkerSlice` only.
#[derive(Clone, Debug)]
pub struct VerticalDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub partition: FeatureGroupPartition,
    pub label_holder: WorkerId,
}

impl VerticalDataset {
    pub fn build(
        samples: &[Sample],
        ratio: f64,
        seed: u64,
        q: usize,
        scheme: &PartitionScheme,
    ) -> Result<Self, DataError> {
        if samples.is_empty() {
            return Err(DataError::Config("dataset is empty".into()));
        }
        let dim = dimension_of(samples);
        if dim == 0 {
            return Err(DataError::Config("dataset has no features".into()));
        }
        let partition = partition_features(dim, q, scheme)?;
        let (train_raw, test_raw) = split_train_test(samples, ratio, seed);
        if train_raw.is_empty() {
            return Err(DataError::Config("training split is empty".into()));
        }
        let stats = NormalizationStats::fit(&train_raw, dim);
        Ok(Self {
            train: stats.apply(&train_raw),
            test: stats.apply(&test_raw),
            partition,
            label_holder: WorkerId(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn q(&self) -> usize {
        self.partition.q()
    }

    /// Restrict a sample to one worker's feature group.
    fn restrict(sample: &Sample, worker: usize, partition: &FeatureGroupPartition) -> Vec<(usize, f64)> {
        sample
            .features
            .iter()
            .filter(|&&(j, _)| partition.worker_of[j] == worker)
            .copied()
            .collect()
    }

    pub fn worker_slice(&self, worker: WorkerId) -> WorkerSlice {
        let train = self
            .train
            .iter()
            .map(|s| Self::restrict(s, worker.0, &self.partition))
            .collect();
        let test = self
            .test
            .iter()
            .map(|s| Self::restrict(s, worker.0, &self.partition))
            .collect();
        let is_active = worker == self.label_holder;
        WorkerSlice {
            worker,
            features: self.partition.group(worker).to_vec(),
            train,
            test,
            train_labels: is_active.then(|| self.train.iter().map(|s| s.label).collect()),
            test_labels: is_active.then(|| self.test.iter().map(|s| s.label).collect()),
        }
    }

    pub fn worker_slices(&self) -> Vec<WorkerSlice> {
        self.partition.workers().map(|w| self.worker_slice(w)).collect()
    }
}

/// Sparse dot product against a dense vector, accumulated in ascending
/// feature order.
pub fn sparse_dot(features: &[(usize, f64)], dense: &[f64]) -> f64 {
    features.iter().map(|&(j, v)| dense[j] * v).sum()
}
