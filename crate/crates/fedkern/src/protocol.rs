//! Federated computation of `w_i' x_i + b`: every worker adds a private
//! uniform mask `b^l` to its local partial inner product, the masked
//! partials are summed over tree `T1`, and the masks of all workers except
//! a surviving one `l'` are removed via a sum over a totally different tree
//! `T2` spanning everyone but `l'`. The initiator ends up with
//! `w_i' x_i + b^{l'}`, where `b^{l'}` is uniform on `[0, 2*pi)` and no
//! worker ever transmits an unmasked partial.

use thiserror::Error;

use crate::comm::{
    build_disjoint_tree, build_tree, totally_different, tree_sum, AggregationTree, MsgTag,
    Recorder, TreeKind, WorkerId,
};
use crate::seedstream::{derive_key, mix64, tags, CounterStream};
use crate::stats::{ks_critical_1pct, ks_statistic_uniform};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("no mask-removal tree exists for feature {feature} (q={q})")]
    NoDisjointTree { feature: u64, q: usize },
}

/// Per-worker mask seeds: `seed(l, i) = mix(secret_l, i)`. Secrets never
/// appear in any message; masks are regenerated from the seed on every use
/// so workers stay stateless across calls.
#[derive(Clone, Debug)]
pub struct MaskSeedPolicy {
    secrets: Vec<u64>,
}

impl MaskSeedPolicy {
    pub fn from_global_seed(global_seed: u64, q: usize) -> Self {
        let secrets = (0..q as u64)
            .map(|l| derive_key(&[global_seed, tags::MASK_SECRET, l]))
            .collect();
        Self { secrets }
    }

    pub fn derive(&self, worker: WorkerId, feature: u64) -> u64 {
        mix64(self.secrets[worker.0] ^ mix64(feature))
    }

    /// The mask `b^l` for one feature iteration, uniform on `[0, 2*pi)`.
    pub fn mask(&self, worker: WorkerId, feature: u64) -> f64 {
        CounterStream::new(self.derive(worker, feature)).next_angle()
    }
}

/// Fault injections used by the privacy audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize)]
pub enum Injection {
    #[default]
    None,
    /// All masks forced to zero; raw partials go on the wire.
    NoMasks,
    /// The mask-removal sum reuses T1 instead of a totally different tree.
    SameTree,
    /// Mask seeds ignore the feature iteration, so masks repeat.
    ConstantMaskSeed,
}

/// The schedule of one masked inner-product exchange: a pure function of
/// `(global seed, feature index, initiator)`, so any party — including the
/// centralized reference trainer — can regenerate it independently.
#[derive(Clone, Debug)]
pub struct ProtocolPlan {
    pub t1: AggregationTree,
    pub l_prime: WorkerId,
    pub t2: AggregationTree,
}

#[derive(Clone, Debug)]
pub struct Protocol {
    pub q: usize,
    pub global_seed: u64,
    pub masks: MaskSeedPolicy,
    pub injection: Injection,
}

impl Protocol {
    pub fn new(global_seed: u64, q: usize) -> Self {
        assert!(q >= 1, "need at least one worker");
        Self {
            q,
            global_seed,
            masks: MaskSeedPolicy::from_global_seed(global_seed, q),
            injection: Injection::None,
        }
    }

    pub fn with_injection(mut self, injection: Injection) -> Self {
        self.injection = injection;
        self
    }

    /// The mask a worker contributes for one feature, after injections.
    pub fn effective_mask(&self, worker: WorkerId, feature: u64) -> f64 {
        match self.injection {
            Injection::NoMasks => 0.0,
            Injection::ConstantMaskSeed => self.masks.mask(worker, 0),
            _ => self.masks.mask(worker, feature),
        }
    }

    /// Build `(T1, l', T2)` for one feature. The surviving worker `l'` is
    /// drawn seeded-uniformly from the non-initiators; when the first draw
    /// admits no totally different tree (possible only for q = 3, where T2
    /// spans two workers), the remaining candidates are tried in seeded
    /// order before failing.
    pub fn plan(&self, feature: u64, initiator: WorkerId) -> Result<ProtocolPlan, ProtocolError> {
        assert!(self.q >= 2, "plan is defined for q >= 2");
        assert!(initiator.0 < self.q);
        let all: Vec<WorkerId> = (0..self.q).map(WorkerId).collect();
        let t1 = build_tree(&all, derive_key(&[self.global_seed, tags::TREE_T1, feature]))
            .expect("nonempty participant set");

        let mut candidates: Vec<WorkerId> =
            all.iter().copied().filter(|&w| w != initiator).collect();
        CounterStream::new(derive_key(&[self.global_seed, tags::L_PRIME, feature]))
            .shuffle(&mut candidates);

        for (attempt, &l_prime) in candidates.iter().enumerate() {
            let rest: Vec<WorkerId> = all.iter().copied().filter(|&w| w != l_prime).collect();
            if self.injection == Injection::SameTree {
                return Ok(ProtocolPlan { t1: t1.clone(), l_prime, t2: t1 });
            }
            let t2_seed =
                derive_key(&[self.global_seed, tags::TREE_T2, feature, attempt as u64]);
            match build_disjoint_tree(&t1, &rest, t2_seed) {
                Ok(t2) => return Ok(ProtocolPlan { t1, l_prime, t2 }),
                Err(_) => continue,
            }
        }
        Err(ProtocolError::NoDisjointTree { feature, q: self.q })
    }

    /// The mask that survives in the output for one feature: `b^{l'}`
    /// (the initiator's own mask when q = 1). This is what the centralized
    /// reference trainer regenerates.
    pub fn surviving_mask(&self, feature: u64, initiator: WorkerId) -> Result<f64, ProtocolError> {
        if self.q == 1 {
            return Ok(self.effective_mask(initiator, feature));
        }
        let plan = self.plan(feature, initiator)?;
        Ok(self.effective_mask(plan.l_prime, feature))
    }

    /// Execute the exchange: masked partials over T1, mask removal over T2,
    /// subtraction at the initiator. `partials(l)` is worker `l`'s local
    /// `<w_G, x_G>`. Costs `(q-1) + (q-2)` scalar messages (none for q = 1).
    pub fn secure_inner_product(
        &self,
        initiator: WorkerId,
        feature: u64,
        partials: &dyn Fn(WorkerId) -> f64,
        rec: &mut Recorder,
    ) -> Result<f64, ProtocolError> {
        if self.q == 1 {
            return Ok(partials(initiator) + self.effective_mask(initiator, feature));
        }
        let plan = self.plan(feature, initiator)?;
        rec.set_scope(TreeKind::T1, feature);
        let masked_sum = tree_sum(
            &plan.t1,
            |w| partials(w) + self.effective_mask(w, feature),
            MsgTag::MaskedSum,
            rec,
        );
        rec.set_scope(TreeKind::T2, feature);
        let mask_sum = tree_sum(
            &plan.t2,
            |w| self.effective_mask(w, feature),
            MsgTag::MaskSum,
            rec,
        );
        rec.set_scope(TreeKind::Other, 0);
        Ok(masked_sum - mask_sum)
    }
}

/// Outcome of the surviving-mask uniformity check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct KsOutcome {
    pub n: usize,
    pub statistic: f64,
    pub critical_1pct: f64,
    pub pass: bool,
}

/// Run `n_trials` honest protocol calls over synthetic partials and test
/// the residual `output - true inner product` (which is the surviving mask)
/// against Uniform[0, 2*pi) at 1% significance.
pub fn surviving_mask_distribution_check(n_trials: usize, q: usize, seed: u64) -> KsOutcome {
    assert!(n_trials >= 1000, "need at least 1000 trials for the KS check");
    let protocol = Protocol::new(seed, q);
    let initiator = WorkerId(0);
    let mut residuals = Vec::with_capacity(n_trials);
    let mut rec = Recorder::counting();
    for i in 0..n_trials as u64 {
        let key = derive_key(&[seed, tags::AUDIT, i]);
        let values: Vec<f64> = (0..q)
            .map(|l| CounterStream::at(key, l as u64).next_f64() * 2.0 - 1.0)
            .collect();
        let truth: f64 = values.iter().sum();
        let out = protocol
            .secure_inner_product(initiator, i, &|w| values[w.0], &mut rec)
            .expect("honest run");
        residuals.push((out - truth).rem_euclid(std::f64::consts::TAU));
    }
    let statistic = ks_statistic_uniform(&residuals, std::f64::consts::TAU);
    let critical = ks_critical_1pct(n_trials);
    KsOutcome { n: n_trials, statistic, critical_1pct: critical, pass: statistic < critical }
}

/// Every `(T1, T2)` pair a plan produces must satisfy the
/// totally-different predicate; exposed for the audit module.
pub fn plan_pair_is_separated(plan: &ProtocolPlan) -> bool {
    totally_different(&plan.t1, &plan.t2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_partials(q: usize, key: u64) -> Vec<f64> {
        (0..q)
            .map(|l| CounterStream::at(key, l as u64).next_f64() * 4.0 - 2.0)
            .collect()
    }

    #[test]
    fn output_equals_inner_product_plus_surviving_mask() {
        // The executable content of the masked-sum identity: across worker
        // counts and many calls, output - sum(partials) equals the
        // regenerated surviving mask to float cancellation error.
        for q in [2usize, 3, 4, 8] {
            let protocol = Protocol::new(911, q);
            let mut rec = Recorder::counting();
            for i in 0..1000u64 {
                let values = synthetic_partials(q, derive_key(&[3, i]));
                let truth: f64 = values.iter().sum();
                let out = protocol
                    .secure_inner_product(WorkerId(0), i, &|w| values[w.0], &mut rec)
                    .unwrap();
                let b = protocol.surviving_mask(i, WorkerId(0)).unwrap();
                assert!(
                    (out - (truth + b)).abs() <= 1e-10,
                    "q={q} i={i}: out={out} truth+b={}",
                    truth + b
                );
            }
        }
    }

    #[test]
    fn message_cost_is_two_tree_sums() {
        for q in [2usize, 3, 4, 8] {
            let protocol = Protocol::new(5, q);
            let values = synthetic_partials(q, 17);
            let mut rec = Recorder::counting();
            protocol
                .secure_inner_product(WorkerId(0), 0, &|w| values[w.0], &mut rec)
                .unwrap();
            assert_eq!(rec.ledger.messages as usize, (q - 1) + (q - 2), "q={q}");
        }
    }

    #[test]
    fn degenerate_single_worker_path() {
        let protocol = Protocol::new(1, 1);
        let mut rec = Recorder::counting();
        let out = protocol
            .secure_inner_product(WorkerId(0), 4, &|_| 0.75, &mut rec)
            .unwrap();
        let b = protocol.effective_mask(WorkerId(0), 4);
        assert_eq!(out, 0.75 + b);
        assert_eq!(rec.ledger.messages, 0);
    }

    #[test]
    fn zero_vector_leaves_only_the_mask() {
        let protocol = Protocol::new(23, 4);
        let mut rec = Recorder::counting();
        let out = protocol
            .secure_inner_product(WorkerId(0), 9, &|_| 0.0, &mut rec)
            .unwrap();
        assert!((0.0..std::f64::consts::TAU).contains(&out));
        let b = protocol.surviving_mask(9, WorkerId(0)).unwrap();
        assert!((out - b).abs() <= 1e-12);
    }

    #[test]
    fn mask_conservation() {
        // masked_sum - output reproduces the removed mask total exactly.
        let q = 4;
        let protocol = Protocol::new(77, q);
        for i in 0..50u64 {
            let plan = protocol.plan(i, WorkerId(0)).unwrap();
            let values = synthetic_partials(q, derive_key(&[9, i]));
            let mut rec = Recorder::counting();
            let xi = tree_sum(
                &plan.t1,
                |w| values[w.0] + protocol.effective_mask(w, i),
                MsgTag::MaskedSum,
                &mut rec,
            );
            let out = protocol
                .secure_inner_product(WorkerId(0), i, &|w| values[w.0], &mut rec)
                .unwrap();
            let removed = tree_sum(
                &plan.t2,
                |w| protocol.effective_mask(w, i),
                MsgTag::MaskSum,
                &mut rec,
            );
            // out is computed as xi - removed in one operation, so the
            // recombination matches up to one rounding of xi.
            assert!((xi - out - removed).abs() <= 1e-12, "i={i}");
        }
    }

    #[test]
    fn surviving_worker_is_never_the_initiator() {
        for q in [2usize, 3, 4, 8] {
            let protocol = Protocol::new(13, q);
            for i in 0..200u64 {
                let initiator = WorkerId(i as usize % q);
                let plan = protocol.plan(i, initiator).unwrap();
                assert_ne!(plan.l_prime, initiator);
                assert!(!plan.t2.participants().contains(&plan.l_prime));
                assert!(plan.t2.participants().contains(&initiator));
            }
        }
    }

    #[test]
    fn executed_tree_pairs_are_totally_different() {
        for q in [2usize, 3, 4, 8] {
            let protocol = Protocol::new(37, q);
            for i in 0..200u64 {
                let plan = protocol.plan(i, WorkerId(0)).unwrap();
                assert!(plan_pair_is_separated(&plan), "q={q} i={i}");
            }
        }
    }

    #[test]
    fn plans_are_replayable() {
        let protocol = Protocol::new(55, 4);
        let a = protocol.plan(12, WorkerId(0)).unwrap();
        let b = protocol.plan(12, WorkerId(0)).unwrap();
        assert_eq!(a.l_prime, b.l_prime);
        assert_eq!(a.t1.leaf_order(), b.t1.leaf_order());
        assert_eq!(a.t2.leaf_order(), b.t2.leaf_order());
    }

    #[test]
    fn mask_seeds_are_distinct_across_workers_and_features() {
        let policy = MaskSeedPolicy::from_global_seed(5, 8);
        let mut seen = std::collections::HashSet::new();
        for l in 0..8 {
            for i in 0..500u64 {
                assert!(seen.insert(policy.derive(WorkerId(l), i)), "collision at ({l}, {i})");
            }
        }
    }

    #[test]
    fn no_raw_partial_appears_in_any_message() {
        // Probability-zero event under honest masking, checked as a smoke
        // test with tolerance.
        let q = 4;
        let protocol = Protocol::new(99, q);
        let mut rec = Recorder::recording();
        let mut partials = Vec::new();
        for i in 0..100u64 {
            let values = synthetic_partials(q, derive_key(&[31, i]));
            partials.extend(values.clone());
            protocol
                .secure_inner_product(WorkerId(0), i, &|w| values[w.0], &mut rec)
                .unwrap();
        }
        let book = rec.book.unwrap();
        for record in &book.executed {
            for &p in &partials {
                assert!(
                    (record.value - p).abs() > 1e-12,
                    "message value {} matches a raw partial",
                    record.value
                );
            }
        }
    }

    #[test]
    fn surviving_mask_is_uniform() {
        let outcome = surviving_mask_distribution_check(10_000, 4, 71);
        assert!(outcome.pass, "ks={} crit={}", outcome.statistic, outcome.critical_1pct);
        // smaller n, three independent harness seeds
        for seed in [1u64, 2, 3] {
            let o = surviving_mask_distribution_check(1000, 4, seed);
            assert!(o.pass, "seed={seed} ks={}", o.statistic);
        }
    }

    #[test]
    fn constant_mask_injection_fails_the_ks_check() {
        // With a degenerate (constant) mask the residual distribution is a
        // point mass and KS must reject.
        let q = 4;
        let protocol = Protocol::new(41, q).with_injection(Injection::ConstantMaskSeed);
        let mut rec = Recorder::counting();
        let residuals: Vec<f64> = (0..2000u64)
            .map(|i| {
                let values = synthetic_partials(q, derive_key(&[8, i]));
                let truth: f64 = values.iter().sum();
                let out = protocol
                    .secure_inner_product(WorkerId(0), i, &|w| values[w.0], &mut rec)
                    .unwrap();
                (out - truth).rem_euclid(std::f64::consts::TAU)
            })
            .collect();
        let d = ks_statistic_uniform(&residuals, std::f64::consts::TAU);
        assert!(d > ks_critical_1pct(2000), "d={d}");
    }
}
