//! Bucketed total preference order over rollouts, maintained by
//! model-assisted insertion sort against the labeling oracle.
//!
//! The chain keeps buckets of equally preferred rollouts ordered from most
//! preferred (index 0) downward. Inserting a new rollout first asks the
//! reward model for a predictive interval to bracket the likely position,
//! probes the bracket's boundary buckets against the oracle, widens by
//! doubling steps when the bracket was wrong, and finishes with a binary
//! search over the remaining gap and merge positions. Once placed, the
//! rollout's order against every other ranked rollout follows by
//! transitivity, yielding derived labels at zero additional query cost.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::oracle::{Oracle, PreferenceLabel};
use crate::reward::{PreferencePair, Provenance, ReturnPredictor, RewardError};
use crate::rollouts::RolloutDataset;

/// Default cap on distinct ranked rollouts.
pub const DEFAULT_MAX_RANKED: usize = 30;

/// Chain lookup and mutation failures.
#[derive(Debug, Error)]
pub enum ChainError {
    /// The chain already ranks its configured maximum of distinct rollouts;
    /// the caller should treat this as ranking-budget exhaustion.
    #[error("chain already ranks {cap} rollouts; insertion refused")]
    AtCapacity { cap: usize },
    #[error("rollout {id} is already ranked in the chain")]
    AlreadyRanked { id: u64 },
    #[error("rollout {id} is not in the dataset")]
    UnknownRollout { id: u64 },
    #[error(transparent)]
    Predict(#[from] RewardError),
}

/// One chain element: rollouts judged equally preferred.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    /// Member rollout ids in insertion order; never empty.
    pub members: Vec<u64>,
}

impl Bucket {
    /// The member held up for oracle probes: the first, which is stable
    /// under later merges.
    pub fn representative(&self) -> u64 {
        self.members[0]
    }
}

/// What one insertion did and what it cost.
#[derive(Debug, Clone)]
pub struct InsertionReceipt {
    /// Bucket index where the rollout landed.
    pub rank: usize,
    /// Whether it joined an existing bucket rather than opening a new one.
    pub merged: bool,
    /// Oracle queries consumed by this insertion.
    pub queries_used: u64,
    /// The concrete (rollout, representative) labels the oracle answered.
    pub queried_pairs: Vec<PreferencePair>,
    /// Labels implied by the rollout's final position against every other
    /// ranked rollout: strict across buckets, Equal within.
    pub derived_pairs: Vec<PreferencePair>,
}

/// Ordered bucket list, most preferred first, with an id-to-bucket index.
#[derive(Debug, Clone)]
pub struct PreferenceChain {
    buckets: Vec<Bucket>,
    max_ranked: usize,
    member_index: HashMap<u64, usize>,
}

impl Default for PreferenceChain {
    fn default() -> Self {
        PreferenceChain::new(DEFAULT_MAX_RANKED)
    }
}

impl PreferenceChain {
    pub fn new(max_ranked: usize) -> Self {
        assert!(max_ranked >= 1, "a chain must admit at least one rollout");
        PreferenceChain { buckets: Vec::new(), max_ranked, member_index: HashMap::new() }
    }

    /// Builds a chain from explicit bucket membership, most preferred first.
    /// Used for event-log replay and audit fixtures; panics on an empty
    /// bucket or a duplicated id.
    pub fn from_buckets(members: Vec<Vec<u64>>, max_ranked: usize) -> Self {
        let mut member_index = HashMap::new();
        let buckets: Vec<Bucket> = members
            .into_iter()
            .enumerate()
            .map(|(idx, ids)| {
                assert!(!ids.is_empty(), "bucket {idx} has no members");
                for &id in &ids {
                    let previous = member_index.insert(id, idx);
                    assert!(previous.is_none(), "rollout {id} appears in two buckets");
                }
                Bucket { members: ids }
            })
            .collect();
        PreferenceChain { buckets, max_ranked, member_index }
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Distinct rollouts ranked so far, across all buckets.
    pub fn ranked_count(&self) -> usize {
        self.member_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Whether the distinct-rollout cap is exhausted.
    pub fn is_full(&self) -> bool {
        self.member_index.len() >= self.max_ranked
    }

    pub fn max_ranked(&self) -> usize {
        self.max_ranked
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    /// Bucket index of a ranked rollout, 0 = most preferred.
    pub fn rank_of(&self, id: u64) -> Option<usize> {
        self.member_index.get(&id).copied()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.member_index.contains_key(&id)
    }

    /// Ordered membership snapshot for event logs and audits.
    pub fn bucket_members(&self) -> Vec<Vec<u64>> {
        self.buckets.iter().map(|b| b.members.clone()).collect()
    }

    /// Predictive bracket for where `xi` likely belongs: the predictive mean
    /// return plus/minus one predictive stddev, each end mapped to the
    /// bucket whose own predicted return is nearest.
    pub fn fast_guess_range(
        &self,
        predictor: &mut dyn ReturnPredictor,
        xi: u64,
        m_samples: usize,
    ) -> Result<(usize, usize), RewardError> {
        assert!(!self.buckets.is_empty(), "cannot bracket against an empty chain");
        let mut bucket_predictions = Vec::with_capacity(self.buckets.len());
        for bucket in &self.buckets {
            let mut total = 0.0;
            for &member in &bucket.members {
                total += predictor.predict_stats(member, m_samples)?.0;
            }
            bucket_predictions.push(total / bucket.members.len() as f64);
        }
        let (mean, spread) = predictor.predict_stats(xi, m_samples)?;
        Ok(guess_range_from_stats(mean, spread, &bucket_predictions))
    }

    /// Ranks `xi` with as few oracle queries as the model's bracket allows:
    /// boundary probes, doubling widening on a missed bracket, then binary
    /// search. An `Equal` answer merges `xi` into the answering bucket; a
    /// fully bracketed gap splices a new singleton bucket.
    pub fn insert(
        &mut self,
        xi: u64,
        dataset: &RolloutDataset,
        oracle: &mut Oracle,
        predictor: &mut dyn ReturnPredictor,
        m_samples: usize,
        rng: &mut impl Rng,
    ) -> Result<InsertionReceipt, ChainError> {
        if self.member_index.contains_key(&xi) {
            return Err(ChainError::AlreadyRanked { id: xi });
        }
        if self.member_index.len() >= self.max_ranked {
            return Err(ChainError::AtCapacity { cap: self.max_ranked });
        }
        let xi_rollout = dataset.rollout(xi).ok_or(ChainError::UnknownRollout { id: xi })?;
        if self.buckets.is_empty() {
            self.buckets.push(Bucket { members: vec![xi] });
            self.member_index.insert(xi, 0);
            return Ok(InsertionReceipt {
                rank: 0,
                merged: false,
                queries_used: 0,
                queried_pairs: Vec::new(),
                derived_pairs: Vec::new(),
            });
        }

        let (lo, hi) = self.fast_guess_range(predictor, xi, m_samples)?;
        let n = self.buckets.len() as isize;
        let reps: Vec<u64> = self.buckets.iter().map(Bucket::representative).collect();
        let mut queried: Vec<PreferencePair> = Vec::new();
        let mut probe = |idx: usize| -> Result<PreferenceLabel, ChainError> {
            let rep_id = reps[idx];
            let rep = dataset.rollout(rep_id).ok_or(ChainError::UnknownRollout { id: rep_id })?;
            let label = oracle.compare(xi_rollout, rep, rng);
            queried.push(PreferencePair::new(xi, rep_id, label, Provenance::Queried));
            Ok(label)
        };

        // Interval invariant: buckets at or before `above` are known
        // preferred over xi, buckets at or after `below` known less
        // preferred; -1 and n mean "no bound on that side yet". Every
        // answer tightens the interval, so noisy answers can misplace xi
        // but never contradict the probe sequence structurally.
        let mut above: isize = -1;
        let mut below: isize = n;
        let mut merged_at: Option<usize> = None;

        // Boundary probe at the more-preferred end of the guess.
        match probe(lo)? {
            PreferenceLabel::Equal => merged_at = Some(lo),
            PreferenceLabel::FirstPreferred => {
                // xi beats the bracket's best: widen upward by doubling.
                below = lo as isize;
                let mut offset: isize = 1;
                loop {
                    let j = lo as isize - offset;
                    if j < 0 {
                        break;
                    }
                    match probe(j as usize)? {
                        PreferenceLabel::Equal => {
                            merged_at = Some(j as usize);
                            break;
                        }
                        PreferenceLabel::FirstPreferred => {
                            below = j;
                            offset *= 2;
                        }
                        PreferenceLabel::SecondPreferred => {
                            above = j;
                            break;
                        }
                    }
                }
            }
            PreferenceLabel::SecondPreferred => {
                above = lo as isize;
                // Probe the less-preferred end when it is a distinct bucket;
                // a single-bucket guess already refuted counts as a miss.
                let widen_from = if hi == lo {
                    Some(lo)
                } else {
                    match probe(hi)? {
                        PreferenceLabel::Equal => {
                            merged_at = Some(hi);
                            None
                        }
                        PreferenceLabel::FirstPreferred => {
                            below = hi as isize;
                            None
                        }
                        PreferenceLabel::SecondPreferred => {
                            above = hi as isize;
                            Some(hi)
                        }
                    }
                };
                // xi falls below the bracket: widen downward by doubling.
                if let Some(base) = widen_from {
                    let mut offset: isize = 1;
                    loop {
                        let j = base as isize + offset;
                        if j >= n {
                            break;
                        }
                        match probe(j as usize)? {
                            PreferenceLabel::Equal => {
                                merged_at = Some(j as usize);
                                break;
                            }
                            PreferenceLabel::SecondPreferred => {
                                above = j;
                                offset *= 2;
                            }
                            PreferenceLabel::FirstPreferred => {
                                below = j;
                                break;
                            }
                        }
                    }
                }
            }
        }

        // Binary search over the remaining merge and gap positions.
        if merged_at.is_none() {
            while below - above >= 2 {
                let mid = (above + below) / 2;
                match probe(mid as usize)? {
                    PreferenceLabel::Equal => {
                        merged_at = Some(mid as usize);
                        break;
                    }
                    PreferenceLabel::FirstPreferred => below = mid,
                    PreferenceLabel::SecondPreferred => above = mid,
                }
            }
        }

        let (rank, merged) = match merged_at {
            Some(bucket) => {
                self.buckets[bucket].members.push(xi);
                (bucket, true)
            }
            None => {
                let at = below as usize;
                self.buckets.insert(at, Bucket { members: vec![xi] });
                for (idx, bucket) in self.buckets.iter().enumerate().skip(at + 1) {
                    for &member in &bucket.members {
                        self.member_index.insert(member, idx);
                    }
                }
                (at, false)
            }
        };
        self.member_index.insert(xi, rank);

        let derived_pairs = self.derive_preferences(xi, rank);
        Ok(InsertionReceipt {
            rank,
            merged,
            queries_used: queried.len() as u64,
            queried_pairs: queried,
            derived_pairs,
        })
    }

    /// Every label implied by `xi` holding `rank`: members of earlier
    /// buckets are preferred over it, co-bucket members tie with it, and
    /// members of later buckets fall below it.
    pub fn derive_preferences(&self, xi: u64, rank: usize) -> Vec<PreferencePair> {
        debug_assert_eq!(self.member_index.get(&xi), Some(&rank));
        let mut pairs = Vec::new();
        for (idx, bucket) in self.buckets.iter().enumerate() {
            for &member in &bucket.members {
                if member == xi {
                    continue;
                }
                let pair = match idx.cmp(&rank) {
                    Ordering::Less => PreferencePair::new(
                        member,
                        xi,
                        PreferenceLabel::FirstPreferred,
                        Provenance::Derived,
                    ),
                    Ordering::Equal => PreferencePair::new(
                        xi,
                        member,
                        PreferenceLabel::Equal,
                        Provenance::Derived,
                    ),
                    Ordering::Greater => PreferencePair::new(
                        xi,
                        member,
                        PreferenceLabel::FirstPreferred,
                        Provenance::Derived,
                    ),
                };
                pairs.push(pair);
            }
        }
        pairs
    }
}

/// Maps a predictive interval onto bucket indices: the interval's upper end
/// lands on the more-preferred side. Buckets are scored by their own
/// predicted returns, which follow the chain's descending order only as far
/// as the model is calibrated, so the result is normalized to `lo <= hi`.
/// Distance ties resolve to the more-preferred (lower) index.
pub fn guess_range_from_stats(
    mean: f64,
    spread: f64,
    bucket_predictions: &[f64],
) -> (usize, usize) {
    assert!(!bucket_predictions.is_empty(), "no buckets to bracket against");
    let nearest = |target: f64| -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (idx, &pred) in bucket_predictions.iter().enumerate() {
            let dist = (pred - target).abs();
            if dist < best_dist {
                best_dist = dist;
                best = idx;
            }
        }
        best
    };
    let upper = nearest(mean + spread);
    let lower = nearest(mean - spread);
    (upper.min(lower), upper.max(lower))
}

/// Outcome of auditing a chain against ground-truth returns.
#[derive(Debug, Default)]
pub struct ConsistencyReport {
    /// Human-readable description of each violation found.
    pub violations: Vec<String>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits bucket structure against ground-truth returns: members of one
/// bucket must agree within `tolerance`, and bucket returns must strictly
/// decrease along the chain. Violations are expected only when the chain
/// was built against a noisy labeler.
pub fn chain_consistency_check(
    chain: &PreferenceChain,
    dataset: &RolloutDataset,
    tolerance: f64,
) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let mut spans: Vec<Option<(f64, f64)>> = Vec::new();
    for (idx, bucket) in chain.buckets().iter().enumerate() {
        let mut span: Option<(f64, f64)> = None;
        for &member in &bucket.members {
            match dataset.rollout(member) {
                Some(r) => {
                    let (lo, hi) = span.unwrap_or((r.gt_return, r.gt_return));
                    span = Some((lo.min(r.gt_return), hi.max(r.gt_return)));
                }
                None => report
                    .violations
                    .push(format!("bucket {idx}: rollout {member} missing from dataset")),
            }
        }
        if let Some((lo, hi)) = span {
            if hi - lo > tolerance {
                report.violations.push(format!(
                    "bucket {idx}: members span returns {lo}..{hi}, beyond tolerance {tolerance}"
                ));
            }
        }
        spans.push(span);
    }
    for (idx, pair) in spans.windows(2).enumerate() {
        if let (Some((prev_min, _)), Some((_, cur_max))) = (pair[0], pair[1]) {
            if prev_min <= cur_max + tolerance {
                report.violations.push(format!(
                    "buckets {idx}..{}: returns do not strictly decrease ({prev_min} vs {cur_max})",
                    idx + 1
                ));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, Task, TaskConfig};
    use crate::rollouts::{
        Rollout, SourcePolicy, DEFAULT_LOW_RETURN_CAP, DEFAULT_LOW_RETURN_THRESHOLD,
    };
    use crate::seeding::{stream_rng, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_with_returns(returns: &[f64]) -> RolloutDataset {
        let config = TaskConfig::new(Task::Empty);
        let state = {
            let mut env = Env::new(config.clone()).unwrap();
            env.reset(0);
            env.state().clone()
        };
        RolloutDataset {
            task: config,
            rollouts: returns
                .iter()
                .enumerate()
                .map(|(id, &gt_return)| Rollout {
                    id: id as u64,
                    source_policy: SourcePolicy::Expert,
                    gt_return,
                    steps: Vec::new(),
                    final_state: state.clone(),
                })
                .collect(),
            low_return_cap: DEFAULT_LOW_RETURN_CAP,
            low_return_threshold: DEFAULT_LOW_RETURN_THRESHOLD,
        }
    }

    /// Fixed per-id predictions with a shared spread; spread 0 with
    /// ground-truth means models a perfectly calibrated collapsed posterior.
    struct TablePredictor {
        means: Vec<f64>,
        spread: f64,
    }

    impl TablePredictor {
        fn calibrated(dataset: &RolloutDataset) -> Self {
            TablePredictor {
                means: dataset.rollouts.iter().map(|r| r.gt_return).collect(),
                spread: 0.0,
            }
        }

        fn flat(n: usize, value: f64) -> Self {
            TablePredictor { means: vec![value; n], spread: 0.0 }
        }
    }

    impl ReturnPredictor for TablePredictor {
        fn predict_stats(&mut self, id: u64, _m: usize) -> Result<(f64, f64), RewardError> {
            Ok((self.means[id as usize], self.spread))
        }

        fn predict_samples(
            &mut self,
            ids: &[u64],
            m_samples: usize,
        ) -> Result<Vec<Vec<f64>>, RewardError> {
            Ok((0..m_samples)
                .map(|_| ids.iter().map(|&id| self.means[id as usize]).collect())
                .collect())
        }
    }

    fn oracle_rng(seed: u64) -> ChaCha8Rng {
        stream_rng(seed, Stream::Oracle, 0)
    }

    fn build_chain(
        dataset: &RolloutDataset,
        predictor: &mut dyn ReturnPredictor,
        ids: impl IntoIterator<Item = u64>,
        oracle: &mut Oracle,
        rng: &mut ChaCha8Rng,
    ) -> (PreferenceChain, Vec<InsertionReceipt>) {
        let mut chain = PreferenceChain::default();
        let mut receipts = Vec::new();
        for id in ids {
            receipts.push(chain.insert(id, dataset, oracle, predictor, 4, rng).unwrap());
        }
        (chain, receipts)
    }

    /// Group ids by return and sort descending: the order the chain must
    /// reproduce. Members inside each group are sorted for set comparison.
    fn group_sort(dataset: &RolloutDataset, ids: &[u64]) -> Vec<Vec<u64>> {
        let mut distinct: Vec<f64> = Vec::new();
        for &id in ids {
            let r = dataset.rollout(id).unwrap().gt_return;
            if !distinct.contains(&r) {
                distinct.push(r);
            }
        }
        distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
        distinct
            .into_iter()
            .map(|r| {
                let mut group: Vec<u64> = ids
                    .iter()
                    .copied()
                    .filter(|&id| dataset.rollout(id).unwrap().gt_return == r)
                    .collect();
                group.sort_unstable();
                group
            })
            .collect()
    }

    fn sorted_members(chain: &PreferenceChain) -> Vec<Vec<u64>> {
        chain
            .bucket_members()
            .into_iter()
            .map(|mut m| {
                m.sort_unstable();
                m
            })
            .collect()
    }

    #[test]
    fn inserting_into_an_empty_chain_costs_nothing() {
        let dataset = dataset_with_returns(&[5.0]);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let mut oracle = Oracle::deterministic();
        let mut rng = oracle_rng(0);
        let mut chain = PreferenceChain::default();
        let receipt =
            chain.insert(0, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        assert_eq!(receipt.rank, 0);
        assert!(!receipt.merged);
        assert_eq!(receipt.queries_used, 0);
        assert!(receipt.queried_pairs.is_empty());
        assert!(receipt.derived_pairs.is_empty());
        assert_eq!(oracle.query_counter, 0);
        assert_eq!(chain.ranked_count(), 1);
        assert_eq!(chain.rank_of(0), Some(0));
    }

    #[test]
    fn guessing_against_a_singleton_chain_pins_bucket_zero() {
        assert_eq!(guess_range_from_stats(3.0, 10.0, &[7.0]), (0, 0));
    }

    #[test]
    fn degenerate_interval_lands_on_the_nearest_bucket() {
        let preds = [10.0, 8.0, 6.0, 4.0, 2.0];
        // Strictly between buckets 2 and 3, closer to 2.
        assert_eq!(guess_range_from_stats(5.2, 0.0, &preds), (2, 2));
        // Exactly halfway: the tie resolves to the more-preferred index.
        assert_eq!(guess_range_from_stats(7.0, 0.0, &preds), (1, 1));
        assert_eq!(guess_range_from_stats(5.0, 0.0, &preds), (2, 2));
    }

    #[test]
    fn wide_interval_spans_the_enclosing_buckets() {
        let preds = [10.0, 8.0, 6.0, 4.0, 2.0];
        assert_eq!(guess_range_from_stats(6.0, 1.5, &preds), (1, 3));
    }

    #[test]
    fn uncalibrated_predictions_still_give_an_ordered_range() {
        // A miscalibrated model can score buckets out of chain order; the
        // bracket must still come back with lo <= hi.
        let preds = [2.0, 9.0, 4.0];
        let (lo, hi) = guess_range_from_stats(3.0, 1.0, &preds);
        assert!(lo <= hi);
        assert_eq!((lo, hi), (0, 2));
    }

    #[test]
    fn equal_return_merges_into_the_matching_bucket() {
        let dataset = dataset_with_returns(&[9.0, 8.0, 7.0, 6.0, 5.0, 5.0]);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let mut oracle = Oracle::deterministic();
        let mut rng = oracle_rng(1);
        let (mut chain, _) =
            build_chain(&dataset, &mut predictor, 0..5, &mut oracle, &mut rng);
        let receipt =
            chain.insert(5, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        assert_eq!(receipt.rank, 4);
        assert!(receipt.merged);
        assert_eq!(receipt.queries_used, 1);
        assert_eq!(chain.buckets()[4].members, vec![4, 5]);
        assert_eq!(chain.bucket_count(), 5);
    }

    #[test]
    fn every_position_is_found_under_any_predictor() {
        // Base chain of 8 singleton buckets; every merge position and every
        // gap position must be found exactly, whether the bracket comes from
        // a calibrated model or from constant guesses at either extreme.
        let base: Vec<f64> = (0..8).map(|i| 16.0 - 2.0 * i as f64).collect();
        let merge_cases: Vec<f64> = base.clone();
        let gap_cases: Vec<f64> = (0..9).map(|i| 17.0 - 2.0 * i as f64).collect();
        let mut oracle = Oracle::deterministic();
        let mut total_queries = 0;
        for case in merge_cases.iter().chain(&gap_cases) {
            let mut returns = base.clone();
            returns.push(*case);
            let dataset = dataset_with_returns(&returns);
            let expected_rank = base.iter().filter(|&&r| r > *case).count();
            let expected_merge = base.contains(case);
            let mut predictors: Vec<TablePredictor> = vec![
                TablePredictor::calibrated(&dataset),
                TablePredictor::flat(9, 9.0),
                TablePredictor::flat(9, 100.0),
                TablePredictor::flat(9, -100.0),
            ];
            for (which, predictor) in predictors.iter_mut().enumerate() {
                let mut rng = oracle_rng(7);
                let (mut chain, _) =
                    build_chain(&dataset, &mut TablePredictor::calibrated(&dataset), 0..8, &mut oracle, &mut rng);
                let receipt =
                    chain.insert(8, &dataset, &mut oracle, predictor, 4, &mut rng).unwrap();
                assert_eq!(receipt.rank, expected_rank, "case {case}, predictor {which}");
                assert_eq!(receipt.merged, expected_merge, "case {case}, predictor {which}");
                // Bracket + binary search bound for a calibrated model.
                if which == 0 {
                    assert!(receipt.queries_used <= 2, "calibrated case {case}");
                }
                // Bracket + widening + binary search bound for any model:
                // 2 boundary probes, log-many widening probes, log-many
                // bisection probes over 9 candidate gaps.
                assert!(receipt.queries_used <= 14, "case {case}, predictor {which}");
                let all_ids: Vec<u64> = (0..9).collect();
                assert_eq!(sorted_members(&chain), group_sort(&dataset, &all_ids));
                total_queries += receipt.queries_used
                    + 7 /* building the 8-bucket base chain costs 7 probes */;
            }
        }
        assert_eq!(oracle.query_counter, total_queries);
    }

    #[test]
    fn repeated_insertion_reproduces_a_full_sort() {
        for trial in 0..30u64 {
            let mut trial_rng = ChaCha8Rng::seed_from_u64(900 + trial);
            let n = 1 + (trial_rng.gen::<u64>() % 30) as usize;
            let returns: Vec<f64> =
                (0..n).map(|_| (trial_rng.gen::<u64>() % 6) as f64).collect();
            let dataset = dataset_with_returns(&returns);
            let mut predictor: TablePredictor = if trial % 2 == 0 {
                TablePredictor::calibrated(&dataset)
            } else {
                TablePredictor::flat(n, 2.5)
            };
            let mut oracle = Oracle::deterministic();
            let mut rng = oracle_rng(trial);
            let (chain, receipts) = build_chain(
                &dataset,
                &mut predictor,
                0..n as u64,
                &mut oracle,
                &mut rng,
            );
            let all_ids: Vec<u64> = (0..n as u64).collect();
            assert_eq!(sorted_members(&chain), group_sort(&dataset, &all_ids), "trial {trial}");

            let spent: u64 = receipts.iter().map(|r| r.queries_used).sum();
            assert_eq!(spent, oracle.query_counter, "trial {trial}");

            for (ranked, receipt) in receipts.iter().enumerate() {
                assert_eq!(receipt.derived_pairs.len(), ranked, "trial {trial}");
                // Loosest form of the per-insert bound: the final bucket
                // count is at least the count at insertion time.
                let final_buckets = chain.bucket_count().max(1) as f64;
                let log_bound = (final_buckets + 1.0).log2().ceil() as u64;
                assert!(receipt.queries_used <= 2 + 3 * log_bound, "trial {trial}");
                for pair in &receipt.derived_pairs {
                    let first = dataset.rollout(pair.first).unwrap().gt_return;
                    let second = dataset.rollout(pair.second).unwrap().gt_return;
                    match pair.label {
                        PreferenceLabel::FirstPreferred => assert!(first > second),
                        PreferenceLabel::Equal => assert_eq!(first, second),
                        PreferenceLabel::SecondPreferred => {
                            panic!("derived pairs always orient the winner first")
                        }
                    }
                    assert_eq!(pair.provenance, Provenance::Derived);
                }
            }
        }
    }

    #[test]
    fn derivation_covers_earlier_equal_and_later_members() {
        // Two singleton buckets, then an insertion between them.
        let dataset = dataset_with_returns(&[3.0, 1.0, 2.0]);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let mut oracle = Oracle::deterministic();
        let mut rng = oracle_rng(2);
        let (mut chain, _) = build_chain(&dataset, &mut predictor, 0..2, &mut oracle, &mut rng);
        let receipt =
            chain.insert(2, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        assert_eq!(receipt.rank, 1);
        assert_eq!(
            receipt.derived_pairs,
            vec![
                PreferencePair::new(0, 2, PreferenceLabel::FirstPreferred, Provenance::Derived),
                PreferencePair::new(2, 1, PreferenceLabel::FirstPreferred, Provenance::Derived),
            ]
        );

        // Merge into a three-member bucket flanked by two earlier singletons
        // and one later singleton: 2 strict-better, 3 ties, 1 strict-worse.
        let dataset =
            dataset_with_returns(&[9.0, 8.0, 5.0, 5.0, 5.0, 1.0, 5.0]);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let (mut chain, _) = build_chain(&dataset, &mut predictor, 0..6, &mut oracle, &mut rng);
        let receipt =
            chain.insert(6, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        assert_eq!(receipt.rank, 2);
        assert!(receipt.merged);
        assert_eq!(receipt.derived_pairs.len(), 6);
        let better = receipt
            .derived_pairs
            .iter()
            .filter(|p| p.label == PreferenceLabel::FirstPreferred && p.second == 6)
            .count();
        let ties = receipt
            .derived_pairs
            .iter()
            .filter(|p| p.label == PreferenceLabel::Equal)
            .count();
        let worse = receipt
            .derived_pairs
            .iter()
            .filter(|p| p.label == PreferenceLabel::FirstPreferred && p.first == 6)
            .count();
        assert_eq!((better, ties, worse), (2, 3, 1));

        // Singleton chain with an insertion at the top: exactly one pair.
        let dataset = dataset_with_returns(&[1.0, 5.0]);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let (mut chain, _) = build_chain(&dataset, &mut predictor, 0..1, &mut oracle, &mut rng);
        let receipt =
            chain.insert(1, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        assert_eq!(receipt.rank, 0);
        assert_eq!(
            receipt.derived_pairs,
            vec![PreferencePair::new(1, 0, PreferenceLabel::FirstPreferred, Provenance::Derived)]
        );
    }

    #[test]
    fn capacity_and_membership_errors_cost_no_queries() {
        let dataset = dataset_with_returns(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let mut oracle = Oracle::deterministic();
        let mut rng = oracle_rng(3);
        let mut chain = PreferenceChain::new(5);
        for id in 0..3 {
            chain.insert(id, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        }
        let partial = oracle.query_counter;
        let err = chain.insert(99, &dataset, &mut oracle, &mut predictor, 4, &mut rng);
        assert!(matches!(err, Err(ChainError::UnknownRollout { id: 99 })));
        assert_eq!(oracle.query_counter, partial);

        for id in 3..5 {
            chain.insert(id, &dataset, &mut oracle, &mut predictor, 4, &mut rng).unwrap();
        }
        assert!(chain.is_full());
        let before = oracle.query_counter;
        let err = chain.insert(5, &dataset, &mut oracle, &mut predictor, 4, &mut rng);
        assert!(matches!(err, Err(ChainError::AtCapacity { cap: 5 })));
        assert_eq!(oracle.query_counter, before);

        let err = chain.insert(0, &dataset, &mut oracle, &mut predictor, 4, &mut rng);
        assert!(matches!(err, Err(ChainError::AlreadyRanked { id: 0 })));
        assert_eq!(oracle.query_counter, before);
    }

    #[test]
    fn consistency_check_accepts_sorted_chains_and_flags_shuffles() {
        let mut trial_rng = ChaCha8Rng::seed_from_u64(77);
        let returns: Vec<f64> = (0..30).map(|_| (trial_rng.gen::<u64>() % 8) as f64).collect();
        let dataset = dataset_with_returns(&returns);
        let mut predictor = TablePredictor::calibrated(&dataset);
        let mut oracle = Oracle::deterministic();
        let mut rng = oracle_rng(4);
        let (chain, _) = build_chain(&dataset, &mut predictor, 0..30, &mut oracle, &mut rng);
        assert!(chain_consistency_check(&chain, &dataset, 0.0).is_consistent());

        let empty = PreferenceChain::default();
        assert!(chain_consistency_check(&empty, &dataset, 0.0).is_consistent());

        // Ascending order is backwards.
        let dataset = dataset_with_returns(&[1.0, 9.0]);
        let shuffled = PreferenceChain::from_buckets(vec![vec![0], vec![1]], 30);
        let report = chain_consistency_check(&shuffled, &dataset, 0.0);
        assert_eq!(report.violations.len(), 1);

        // Unequal returns sharing a bucket.
        let mixed = PreferenceChain::from_buckets(vec![vec![0, 1]], 30);
        let report = chain_consistency_check(&mixed, &dataset, 0.0);
        assert!(!report.is_consistent());
    }

    #[test]
    fn membership_snapshots_round_trip() {
        let members = vec![vec![3, 1], vec![0], vec![2, 4]];
        let chain = PreferenceChain::from_buckets(members.clone(), 10);
        assert_eq!(chain.bucket_members(), members);
        assert_eq!(chain.rank_of(4), Some(2));
        assert_eq!(chain.rank_of(7), None);
        assert_eq!(chain.ranked_count(), 5);
        assert_eq!(chain.bucket_count(), 3);
    }
}
