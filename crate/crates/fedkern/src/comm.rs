//! Simulated synchronous transport among workers: binary aggregation trees,
//! the totally-different-tree predicate, reverse-order broadcast, and
//! message/byte accounting.
//!
//! The transport is an in-process round-based exchange. A tree over `n`
//! participants performs its global sum in `ceil(log2 n)` synchronous
//! rounds and exactly `n - 1` scalar messages; each worker observes only
//! the partial sums routed through it. Message order within a round is
//! deterministic given the construction seeds.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::seedstream::{derive_key, CounterStream};

/// Identity of a simulated worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct WorkerId(pub usize);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum CommError {
    #[error("aggregation tree needs at least one participant")]
    EmptyParticipants,
    #[error("no totally different tree exists over {participants:?}")]
    NoDisjointTree { participants: Vec<WorkerId> },
}

/// What a message carries; used for accounting and transcript analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum MsgTag {
    /// Sample-index broadcast.
    Index,
    /// Masked partial sum (tree T1).
    MaskedSum,
    /// Mask-removal sum (tree T2).
    MaskSum,
    /// Local model evaluation f^l.
    Eval,
    /// Coefficient rescale command.
    Scale,
    /// Benchmark payload.
    Bench,
}

/// Which schedule a message belongs to, for harness-side analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum TreeKind {
    T0,
    T1,
    T2,
    Eval,
    Bench,
    Other,
}

#[derive(Clone, Copy, Debug)]
struct Merge {
    round: usize,
    left_start: usize,
    right_start: usize,
    right_len: usize,
    total_len: usize,
}

/// A rooted binary combining tree over a worker subset. Construction pairs
/// the (seed-shuffled) leaf order round by round, promoting an odd leftover,
/// so every node covers a contiguous range of the leaf order and the owner
/// of a node is its leftmost leaf.
#[derive(Clone, Debug)]
pub struct AggregationTree {
    order: Vec<WorkerId>,
    merges: Vec<Merge>,
    participants: Vec<WorkerId>,
    pub seed: u64,
}

impl AggregationTree {
    /// Sorted participant set.
    pub fn participants(&self) -> &[WorkerId] {
        &self.participants
    }

    /// The shuffled leaf order the pairing is built on.
    pub fn leaf_order(&self) -> &[WorkerId] {
        &self.order
    }

    /// Number of synchronous rounds of a sum or broadcast over this tree.
    pub fn rounds(&self) -> usize {
        self.merges.last().map_or(0, |m| m.round)
    }

    /// Leaf-sets (sorted) of every internal node; all have size >= 2.
    pub fn internal_leaf_sets(&self) -> Vec<Vec<WorkerId>> {
        self.merges
            .iter()
            .map(|m| {
                let mut s: Vec<WorkerId> =
                    self.order[m.left_start..m.left_start + m.total_len].to_vec();
                s.sort_unstable();
                s
            })
            .collect()
    }

    /// First-round pairs, useful for inspecting the pairing.
    pub fn first_round_pairs(&self) -> Vec<(WorkerId, WorkerId)> {
        self.merges
            .iter()
            .filter(|m| m.round == 1 && m.right_len == 1 && m.total_len == 2)
            .map(|m| (self.order[m.left_start], self.order[m.right_start]))
            .collect()
    }
}

/// Adjacent pairing level by level with the odd leftover promoted; the
/// merge schedule depends only on the leaf count.
fn pairing_merges(n: usize) -> Vec<Merge> {
    let mut level: Vec<(usize, usize)> = (0..n).map(|i| (i, 1)).collect();
    let mut merges = Vec::new();
    let mut round = 1;
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match pair {
                [(ls, ll), (rs, rl)] => {
                    let total = ll + rl;
                    merges.push(Merge {
                        round,
                        left_start: *ls,
                        right_start: *rs,
                        right_len: *rl,
                        total_len: total,
                    });
                    next.push((*ls, total));
                }
                [leftover] => next.push(*leftover),
                _ => unreachable!(),
            }
        }
        level = next;
        round += 1;
    }
    merges
}

/// Build the balanced pairing tree over `participants`, deterministic in
/// `seed`.
pub fn build_tree(participants: &[WorkerId], seed: u64) -> Result<AggregationTree, CommError> {
    if participants.is_empty() {
        return Err(CommError::EmptyParticipants);
    }
    let mut sorted = participants.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut order = sorted.clone();
    CounterStream::new(seed).shuffle(&mut order);
    let merges = pairing_merges(order.len());
    Ok(AggregationTree { order, merges, participants: sorted, seed })
}

/// Two trees are totally different when no internal node of one covers the
/// same multi-leaf set as an internal node of the other.
pub fn totally_different(a: &AggregationTree, b: &AggregationTree) -> bool {
    let sets: HashSet<Vec<WorkerId>> = a.internal_leaf_sets().into_iter().collect();
    b.internal_leaf_sets().iter().all(|s| !sets.contains(s))
}

const REJECTION_ATTEMPTS: u64 = 64;

/// Build a tree over `participants` that is totally different from
/// `reference`: seeded rejection sampling first, exhaustive enumeration of
/// pairings for small sets as the fallback.
pub fn build_disjoint_tree(
    reference: &AggregationTree,
    participants: &[WorkerId],
    seed: u64,
) -> Result<AggregationTree, CommError> {
    for attempt in 0..REJECTION_ATTEMPTS {
        let t = build_tree(participants, derive_key(&[seed, attempt]))?;
        if totally_different(reference, &t) {
            return Ok(t);
        }
    }
    let mut sorted = participants.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() <= 6 {
        if let Some(t) = exhaustive_disjoint(reference, &sorted) {
            return Ok(t);
        }
    }
    Err(CommError::NoDisjointTree { participants: sorted })
}

/// Try every leaf permutation of the canonical pairing; `None` when no
/// pairing satisfies the predicate.
fn exhaustive_disjoint(
    reference: &AggregationTree,
    sorted: &[WorkerId],
) -> Option<AggregationTree> {
    let mut perm = sorted.to_vec();
    loop {
        let t = tree_from_order(&perm, sorted);
        if totally_different(reference, &t) {
            return Some(t);
        }
        if !next_permutation(&mut perm) {
            return None;
        }
    }
}

fn tree_from_order(order: &[WorkerId], sorted: &[WorkerId]) -> AggregationTree {
    AggregationTree {
        order: order.to_vec(),
        merges: pairing_merges(order.len()),
        participants: sorted.to_vec(),
        seed: 0,
    }
}

fn next_permutation(items: &mut [WorkerId]) -> bool {
    let n = items.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && items[i - 1] >= items[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while items[j] <= items[i - 1] {
        j -= 1;
    }
    items.swap(i - 1, j);
    items[i..].reverse();
    true
}

/// One received message as a worker's transcript sees it.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct TranscriptEntry {
    pub round: u64,
    pub sender: WorkerId,
    pub tag: MsgTag,
    pub value: f64,
}

/// Full harness-side record of an executed message, including the leaf set
/// the payload covers (not visible to worker logic).
#[derive(Clone, Debug)]
pub struct ExecRecord {
    pub round: u64,
    pub sender: WorkerId,
    pub receiver: WorkerId,
    pub tag: MsgTag,
    pub value: f64,
    pub covers: Vec<WorkerId>,
    pub tree: TreeKind,
    pub feature: u64,
}

/// Per-worker transcripts plus the omniscient record of every message.
#[derive(Clone, Debug, Default)]
pub struct TranscriptBook {
    pub per_worker: HashMap<WorkerId, Vec<TranscriptEntry>>,
    pub executed: Vec<ExecRecord>,
}

/// Message and byte counters. Counters are monotone; `per_round` is only
/// collected when round tracking is enabled (long training runs keep the
/// counters and skip the breakdown).
#[derive(Clone, Debug, Default)]
pub struct CommLedger {
    pub messages: u64,
    pub scalar_payloads: u64,
    pub per_round: Vec<(u64, u64)>,
    collect_rounds: bool,
}

impl CommLedger {
    /// Every payload is a scalar or a small fixed record, accounted as
    /// 8 bytes.
    pub fn bytes(&self) -> u64 {
        8 * self.scalar_payloads
    }
}

/// Sink for executed messages: always counts, optionally records
/// transcripts and the per-round breakdown.
#[derive(Clone, Debug)]
pub struct Recorder {
    pub ledger: CommLedger,
    pub book: Option<TranscriptBook>,
    scope: (TreeKind, u64),
    round_base: u64,
}

impl Recorder {
    /// Counters only; suitable for long runs.
    pub fn counting() -> Self {
        Self {
            ledger: CommLedger::default(),
            book: None,
            scope: (TreeKind::Other, 0),
            round_base: 0,
        }
    }

    /// Counters plus transcripts and per-round breakdown, for audits.
    pub fn recording() -> Self {
        Self {
            ledger: CommLedger { collect_rounds: true, ..CommLedger::default() },
            book: Some(TranscriptBook::default()),
            scope: (TreeKind::Other, 0),
            round_base: 0,
        }
    }

    /// Label subsequent messages with the schedule they belong to.
    pub fn set_scope(&mut self, tree: TreeKind, feature: u64) {
        self.scope = (tree, feature);
    }

    fn begin_op(&mut self, rounds: usize) -> u64 {
        let base = self.round_base;
        self.round_base += rounds as u64;
        base
    }

    fn message(
        &mut self,
        round: u64,
        sender: WorkerId,
        receiver: WorkerId,
        tag: MsgTag,
        value: f64,
        covers: &[usize],
        order: &[WorkerId],
    ) {
        self.ledger.messages += 1;
        self.ledger.scalar_payloads += 1;
        if self.ledger.collect_rounds {
            match self.ledger.per_round.last_mut() {
                Some(last) if last.0 == round => last.1 += 1,
                _ => self.ledger.per_round.push((round, 1)),
            }
        }
        if let Some(book) = &mut self.book {
            book.per_worker
                .entry(receiver)
                .or_default()
                .push(TranscriptEntry { round, sender, tag, value });
            let mut set: Vec<WorkerId> = covers.iter().map(|&i| order[i]).collect();
            set.sort_unstable();
            book.executed.push(ExecRecord {
                round,
                sender,
                receiver,
                tag,
                value,
                covers: set,
                tree: self.scope.0,
                feature: self.scope.1,
            });
        }
    }
}

/// Aggregate `local_value` over the tree. Returns the sum held at the root
/// owner; costs exactly `participants - 1` messages.
pub fn tree_sum(
    tree: &AggregationTree,
    local_value: impl Fn(WorkerId) -> f64,
    tag: MsgTag,
    rec: &mut Recorder,
) -> f64 {
    let base = rec.begin_op(tree.rounds());
    let mut acc: HashMap<usize, f64> = tree
        .order
        .iter()
        .enumerate()
        .map(|(i, &w)| (i, local_value(w)))
        .collect();
    for m in &tree.merges {
        let right = acc.remove(&m.right_start).expect("right node value");
        let covers: Vec<usize> = (m.right_start..m.right_start + m.right_len).collect();
        rec.message(
            base + m.round as u64,
            tree.order[m.right_start],
            tree.order[m.left_start],
            tag,
            right,
            &covers,
            &tree.order,
        );
        *acc.get_mut(&m.left_start).expect("left node value") += right;
    }
    acc[&0]
}

/// Deliver `payload` from the root owner to every other participant by
/// walking the tree in reverse merge order; `participants - 1` messages.
pub fn broadcast_reverse(
    tree: &AggregationTree,
    payload: f64,
    tag: MsgTag,
    rec: &mut Recorder,
) {
    let total_rounds = tree.rounds();
    let base = rec.begin_op(total_rounds);
    for m in tree.merges.iter().rev() {
        let round = (total_rounds - m.round) as u64 + 1;
        let covers: Vec<usize> = (m.right_start..m.right_start + m.right_len).collect();
        rec.message(
            base + round,
            tree.order[m.left_start],
            tree.order[m.right_start],
            tag,
            payload,
            &covers,
            &tree.order,
        );
    }
}

/// Communication structures compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommStructure {
    Tree,
    Star,
    Ring,
}

impl CommStructure {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommStructure::Tree => "tree",
            CommStructure::Star => "star",
            CommStructure::Ring => "ring",
        }
    }
}

/// Latency is charged per synchronous round plus per message.
#[derive(Clone, Copy, Debug)]
pub struct LatencyModel {
    pub per_round: f64,
    pub per_message: f64,
}

impl LatencyModel {
    pub fn cost(&self, rounds: u64, messages: u64) -> f64 {
        self.per_round * rounds as f64 + self.per_message * messages as f64
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub structure: CommStructure,
    pub q: usize,
    pub rounds: u64,
    pub messages: u64,
    pub latency: f64,
    pub sum: f64,
}

/// Run one global sum of `values` (worker `i` holds `values[i]`) under the
/// given structure. A sum always needs `q - 1` additions; the structures
/// differ in how many synchronous rounds those take: the hub of a star and
/// the cycle both serialize into `q - 1` rounds, while tree pairing needs
/// `ceil(log2 q)`.
pub fn bench_global_sum(
    structure: CommStructure,
    values: &[f64],
    seed: u64,
    latency: &LatencyModel,
    rec: &mut Recorder,
) -> BenchResult {
    let q = values.len();
    assert!(q >= 1, "benchmark needs at least one worker");
    let workers: Vec<WorkerId> = (0..q).map(WorkerId).collect();
    let before = rec.ledger.messages;
    rec.set_scope(TreeKind::Bench, 0);
    let (sum, rounds) = match structure {
        CommStructure::Tree => {
            let tree = build_tree(&workers, seed).expect("nonempty");
            let s = tree_sum(&tree, |w| values[w.0], MsgTag::Bench, rec);
            (s, tree.rounds() as u64)
        }
        CommStructure::Star => {
            // Everyone sends to worker 0, which receives one message per round.
            let base = rec.begin_op(q - 1);
            let mut s = values[0];
            for (round, w) in (1..q).enumerate() {
                rec.message(
                    base + round as u64 + 1,
                    WorkerId(w),
                    WorkerId(0),
                    MsgTag::Bench,
                    values[w],
                    &[w],
                    &workers,
                );
                s += values[w];
            }
            (s, (q - 1) as u64)
        }
        CommStructure::Ring => {
            // Accumulate around the cycle 0 -> 1 -> ... -> q-1.
            let base = rec.begin_op(q - 1);
            let mut s = values[0];
            for w in 1..q {
                rec.message(
                    base + w as u64,
                    WorkerId(w - 1),
                    WorkerId(w),
                    MsgTag::Bench,
                    s,
                    &(0..w).collect::<Vec<_>>(),
                    &workers,
                );
                s += values[w];
            }
            (s, (q - 1) as u64)
        }
    };
    let messages = rec.ledger.messages - before;
    BenchResult {
        structure,
        q,
        rounds,
        messages,
        latency: latency.cost(rounds, messages),
        sum,
    }
}
