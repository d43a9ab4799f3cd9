//! Candidate scoring for the next ranking query.
//!
//! The primary strategy scores each unranked rollout by the expected
//! information gained about reward-model weights from learning where the
//! rollout lands in the preference chain: posterior weight samples that
//! disagree about the rollout's rank make its insertion informative. Two
//! pairwise baselines (information gain on a single comparison, and a
//! sample-disagreement surrogate for posterior volume removal) and uniform
//! random selection round out the menu.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::chain::PreferenceChain;
use crate::oracle::luce_probability;
use crate::reward::{ReturnPredictor, RewardError};

/// Candidate scoring failures.
#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("no candidates to score")]
    NoCandidates,
    #[error("information gain needs at least 2 posterior samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("candidate {id} is already ranked in the chain")]
    AlreadyRanked { id: u64 },
    #[error("cannot score candidates against an empty chain")]
    EmptyChain,
    #[error(transparent)]
    Predict(#[from] RewardError),
}

/// Probabilities over the gap positions a rollout could occupy in a chain
/// of `n` buckets: index 0 is above the most-preferred bucket, index `n`
/// below the least-preferred one.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDistribution {
    pub probs: Vec<f64>,
}

/// Outcome of one selection round.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    /// The highest-scoring candidate; ties resolve to the lowest id.
    pub chosen: u64,
    /// Every candidate's score, ordered by id.
    pub scores: Vec<(u64, f64)>,
}

/// Where one weight sample believes a rollout belongs: each gap between
/// adjacent buckets is weighted by the product of the two adjacent win
/// probabilities under the Luce choice rule at `1/temperature` sharpness,
/// boundary gaps by their single available factor, then normalized.
pub fn rank_distribution(
    xi_return: f64,
    bucket_returns: &[f64],
    temperature: f64,
) -> RankDistribution {
    assert!(!bucket_returns.is_empty(), "rank distribution needs at least one bucket");
    assert!(temperature > 0.0, "temperature must be positive");
    let beta = temperature.recip();
    let n = bucket_returns.len();
    let mut weights = Vec::with_capacity(n + 1);
    for gap in 0..=n {
        let mut w = 1.0;
        if gap > 0 {
            w *= luce_probability(bucket_returns[gap - 1], xi_return, beta);
        }
        if gap < n {
            w *= luce_probability(xi_return, bucket_returns[gap], beta);
        }
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        // Unreachable for sane return scales; guards subnormal underflow of
        // every product at once.
        return RankDistribution { probs: vec![1.0 / (n + 1) as f64; n + 1] };
    }
    RankDistribution { probs: weights.iter().map(|w| w / total).collect() }
}

/// Monte-Carlo mutual information between the weight samples and the
/// discrete outcome: the average KL divergence from each sample's outcome
/// distribution to their across-sample mean. Zero probabilities contribute
/// nothing; the result is never negative.
pub fn infogain_estimate(distributions: &[RankDistribution]) -> f64 {
    assert!(!distributions.is_empty(), "need at least one outcome distribution");
    let m = distributions.len() as f64;
    let outcomes = distributions[0].probs.len();
    let mut total = 0.0;
    for dist in distributions {
        debug_assert_eq!(dist.probs.len(), outcomes);
        for psi in 0..outcomes {
            let p = dist.probs[psi];
            if p > 0.0 {
                let pooled: f64 = distributions.iter().map(|d| d.probs[psi]).sum();
                total += p * (m * p / pooled).ln();
            }
        }
    }
    total / m
}

/// Bucket-mean predicted returns per weight sample: `rows[s]` scores the
/// flattened member list starting at `member_offset`, grouped by
/// `bucket_sizes`.
fn per_sample_bucket_means(
    rows: &[Vec<f64>],
    member_offset: usize,
    bucket_sizes: &[usize],
) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let mut means = Vec::with_capacity(bucket_sizes.len());
            let mut at = member_offset;
            for &size in bucket_sizes {
                let slice = &row[at..at + size];
                means.push(slice.iter().sum::<f64>() / size as f64);
                at += size;
            }
            means
        })
        .collect()
}

/// Expected information gained about the weights from learning `xi`'s chain
/// position, estimated over `m_samples` shared posterior draws.
pub fn info_gain(
    predictor: &mut dyn ReturnPredictor,
    chain: &PreferenceChain,
    xi: u64,
    m_samples: usize,
    temperature: f64,
) -> Result<f64, AcquisitionError> {
    if m_samples < 2 {
        return Err(AcquisitionError::TooFewSamples { got: m_samples });
    }
    if chain.is_empty() {
        return Err(AcquisitionError::EmptyChain);
    }
    let bucket_sizes: Vec<usize> = chain.buckets().iter().map(|b| b.members.len()).collect();
    let mut ids = vec![xi];
    ids.extend(chain.buckets().iter().flat_map(|b| b.members.iter().copied()));
    let rows = predictor.predict_samples(&ids, m_samples)?;
    let bucket_means = per_sample_bucket_means(&rows, 1, &bucket_sizes);
    let dists: Vec<RankDistribution> = rows
        .iter()
        .zip(&bucket_means)
        .map(|(row, means)| rank_distribution(row[0], means, temperature))
        .collect();
    Ok(infogain_estimate(&dists))
}

/// Scores every candidate against one shared set of posterior draws (so the
/// comparison is apples-to-apples) and returns the argmax, ties to the
/// lowest id.
pub fn select_next(
    predictor: &mut dyn ReturnPredictor,
    chain: &PreferenceChain,
    candidates: &[u64],
    m_samples: usize,
    temperature: f64,
) -> Result<AcquisitionResult, AcquisitionError> {
    if candidates.is_empty() {
        return Err(AcquisitionError::NoCandidates);
    }
    if m_samples < 2 {
        return Err(AcquisitionError::TooFewSamples { got: m_samples });
    }
    if chain.is_empty() {
        return Err(AcquisitionError::EmptyChain);
    }
    let mut sorted: Vec<u64> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&ranked) = sorted.iter().find(|&&c| chain.contains(c)) {
        return Err(AcquisitionError::AlreadyRanked { id: ranked });
    }

    let bucket_sizes: Vec<usize> = chain.buckets().iter().map(|b| b.members.len()).collect();
    let mut ids = sorted.clone();
    ids.extend(chain.buckets().iter().flat_map(|b| b.members.iter().copied()));
    let rows = predictor.predict_samples(&ids, m_samples)?;
    let bucket_means = per_sample_bucket_means(&rows, sorted.len(), &bucket_sizes);

    let mut scores = Vec::with_capacity(sorted.len());
    let mut chosen = sorted[0];
    let mut best = f64::NEG_INFINITY;
    for (slot, &candidate) in sorted.iter().enumerate() {
        let dists: Vec<RankDistribution> = rows
            .iter()
            .zip(&bucket_means)
            .map(|(row, means)| rank_distribution(row[slot], means, temperature))
            .collect();
        let score = infogain_estimate(&dists);
        if score > best {
            best = score;
            chosen = candidate;
        }
        scores.push((candidate, score));
    }
    Ok(AcquisitionResult { chosen, scores })
}

/// Per-sample win probabilities of `first` over `second` under the Luce
/// rule at `1/temperature` sharpness.
fn pairwise_win_probabilities(
    predictor: &mut dyn ReturnPredictor,
    first: u64,
    second: u64,
    m_samples: usize,
    temperature: f64,
) -> Result<Vec<f64>, AcquisitionError> {
    if m_samples < 2 {
        return Err(AcquisitionError::TooFewSamples { got: m_samples });
    }
    let beta = temperature.recip();
    let rows = predictor.predict_samples(&[first, second], m_samples)?;
    Ok(rows.iter().map(|row| luce_probability(row[0], row[1], beta)).collect())
}

/// Information gained about the weights from a single pairwise label:
/// the same mutual-information estimator with the binary win/lose outcome
/// in place of the chain position.
pub fn pairwise_infogain_score(
    predictor: &mut dyn ReturnPredictor,
    first: u64,
    second: u64,
    m_samples: usize,
    temperature: f64,
) -> Result<f64, AcquisitionError> {
    let wins = pairwise_win_probabilities(predictor, first, second, m_samples, temperature)?;
    let dists: Vec<RankDistribution> =
        wins.iter().map(|&p| RankDistribution { probs: vec![p, 1.0 - p] }).collect();
    Ok(infogain_estimate(&dists))
}

/// Sample-disagreement surrogate for posterior volume removal: the average
/// per-sample label variance, summed over both outcomes. The original
/// method targets linear reward models; this adaptation keeps its
/// prefer-uncertain-pairs behavior for a nonlinear net, peaking at 0.5 when
/// every sample is maximally unsure.
pub fn volume_removal_score(
    predictor: &mut dyn ReturnPredictor,
    first: u64,
    second: u64,
    m_samples: usize,
    temperature: f64,
) -> Result<f64, AcquisitionError> {
    let wins = pairwise_win_probabilities(predictor, first, second, m_samples, temperature)?;
    let m = wins.len() as f64;
    Ok(wins.iter().map(|&p| 2.0 * p * (1.0 - p)).sum::<f64>() / m)
}

/// Uniform draw from the candidate list.
pub fn random_select(candidates: &[u64], rng: &mut impl Rng) -> Result<u64, AcquisitionError> {
    candidates.choose(rng).copied().ok_or(AcquisitionError::NoCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream_rng, Stream};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Cycles through fixed per-sample prediction tables indexed by id.
    struct MixturePredictor {
        tables: Vec<Vec<f64>>,
    }

    impl ReturnPredictor for MixturePredictor {
        fn predict_stats(&mut self, id: u64, _m: usize) -> Result<(f64, f64), RewardError> {
            let values: Vec<f64> = self.tables.iter().map(|t| t[id as usize]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (values.len() - 1).max(1) as f64;
            Ok((mean, var.sqrt()))
        }

        fn predict_samples(
            &mut self,
            ids: &[u64],
            m_samples: usize,
        ) -> Result<Vec<Vec<f64>>, RewardError> {
            Ok((0..m_samples)
                .map(|s| {
                    let table = &self.tables[s % self.tables.len()];
                    ids.iter().map(|&id| table[id as usize]).collect()
                })
                .collect())
        }
    }

    fn degenerate(table: Vec<f64>) -> MixturePredictor {
        MixturePredictor { tables: vec![table] }
    }

    #[test]
    fn certain_winner_saturates_the_top_gap() {
        let dist = rank_distribution(100.0, &[0.0], 0.1);
        assert_eq!(dist.probs, vec![1.0, 0.0]);
    }

    #[test]
    fn midpoint_between_two_buckets_favors_the_middle_gap() {
        // Buckets at 5.5 and 4.5, candidate at 5.0, temperature 0.1: both
        // boundary gaps carry one sigmoid(-5) factor, the middle gap the
        // product of two sigmoid(5) factors.
        let dist = rank_distribution(5.0, &[5.5, 4.5], 0.1);
        assert_abs_diff_eq!(dist.probs[0], 0.0066926, epsilon = 1e-6);
        assert_abs_diff_eq!(dist.probs[1], 0.9866149, epsilon = 1e-6);
        assert_abs_diff_eq!(dist.probs[2], 0.0066926, epsilon = 1e-6);
        assert!(dist.probs[1] > dist.probs[0] && dist.probs[1] > dist.probs[2]);
    }

    #[test]
    fn rank_distributions_normalize_over_random_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..1000 {
            let n = 1 + (rng.gen::<u64>() % 9) as usize;
            let buckets: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 40.0 - 20.0).collect();
            let xi = rng.gen::<f64>() * 40.0 - 20.0;
            let temp = [0.05, 0.1, 1.0][(rng.gen::<u64>() % 3) as usize];
            let dist = rank_distribution(xi, &buckets, temp);
            assert_eq!(dist.probs.len(), n + 1);
            assert!(dist.probs.iter().all(|&p| p >= 0.0));
            let sum: f64 = dist.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        }
    }

    #[test]
    fn identical_samples_carry_no_information() {
        let dist = RankDistribution { probs: vec![0.3, 0.5, 0.2] };
        let estimate = infogain_estimate(&[dist.clone(), dist.clone(), dist]);
        assert_eq!(estimate, 0.0);
    }

    #[test]
    fn two_certain_disagreeing_samples_gain_one_bit() {
        let dists = [
            RankDistribution { probs: vec![1.0, 0.0] },
            RankDistribution { probs: vec![0.0, 1.0] },
        ];
        assert_abs_diff_eq!(infogain_estimate(&dists), 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn estimator_matches_joint_table_mutual_information() {
        // When the posterior is literally the uniform mixture over the M
        // samples, the estimator must equal the mutual information of the
        // joint (sample, outcome) table.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let m = 2 + (rng.gen::<u64>() % 5) as usize;
            let outcomes = 2 + (rng.gen::<u64>() % 5) as usize;
            let dists: Vec<RankDistribution> = (0..m)
                .map(|_| {
                    let raw: Vec<f64> =
                        (0..outcomes).map(|_| rng.gen::<f64>() + 1e-3).collect();
                    let total: f64 = raw.iter().sum();
                    RankDistribution { probs: raw.iter().map(|r| r / total).collect() }
                })
                .collect();

            let mut exact = 0.0;
            let p_sample = 1.0 / m as f64;
            for psi in 0..outcomes {
                let p_psi: f64 =
                    dists.iter().map(|d| p_sample * d.probs[psi]).sum();
                for dist in &dists {
                    let joint = p_sample * dist.probs[psi];
                    if joint > 0.0 {
                        exact += joint * (joint / (p_sample * p_psi)).ln();
                    }
                }
            }

            let estimate = infogain_estimate(&dists);
            assert_abs_diff_eq!(estimate, exact, epsilon = 1e-9);
            assert!(estimate >= -1e-12);
        }
    }

    #[test]
    fn degenerate_posterior_scores_every_candidate_zero() {
        let chain = PreferenceChain::from_buckets(vec![vec![0], vec![1]], 30);
        let mut predictor = degenerate(vec![10.0, 0.0, 7.0, 3.0, 5.0]);
        let result = select_next(&mut predictor, &chain, &[4, 2, 3], 4, 0.1).unwrap();
        assert_eq!(result.scores.len(), 3);
        assert!(result.scores.iter().all(|&(_, s)| s == 0.0));
        // All tied at zero: the lowest id wins regardless of input order.
        assert_eq!(result.chosen, 2);
        assert_eq!(result.scores[0].0, 2);
    }

    #[test]
    fn split_rank_beliefs_outscore_certain_ones() {
        // Candidate 2 tracks bucket 0's rollout under both weight samples
        // (its rank is settled); candidate 3 flips between the top and the
        // bottom of the chain (its rank is maximally contested).
        let chain = PreferenceChain::from_buckets(vec![vec![0], vec![1]], 30);
        let mut predictor = MixturePredictor {
            tables: vec![vec![10.0, 0.0, 10.0, 10.0], vec![10.0, 0.0, 10.0, 0.0]],
        };
        let result = select_next(&mut predictor, &chain, &[2, 3], 2, 0.1).unwrap();
        let score_of = |id: u64| {
            result.scores.iter().find(|&&(i, _)| i == id).map(|&(_, s)| s).unwrap()
        };
        assert!(score_of(3) > score_of(2));
        assert_eq!(result.chosen, 3);

        let single = select_next(&mut predictor, &chain, &[3], 2, 0.1).unwrap();
        assert_eq!(single.chosen, 3);

        // Same inputs, same draw source: the selection is a pure function.
        let again = select_next(&mut predictor, &chain, &[2, 3], 2, 0.1).unwrap();
        assert_eq!(again, result);
    }

    #[test]
    fn selection_rejects_bad_inputs() {
        let chain = PreferenceChain::from_buckets(vec![vec![0]], 30);
        let mut predictor = degenerate(vec![1.0, 2.0]);
        assert!(matches!(
            select_next(&mut predictor, &chain, &[], 4, 0.1),
            Err(AcquisitionError::NoCandidates)
        ));
        assert!(matches!(
            select_next(&mut predictor, &chain, &[1], 1, 0.1),
            Err(AcquisitionError::TooFewSamples { got: 1 })
        ));
        assert!(matches!(
            select_next(&mut predictor, &chain, &[0], 4, 0.1),
            Err(AcquisitionError::AlreadyRanked { id: 0 })
        ));
        let empty = PreferenceChain::new(30);
        assert!(matches!(
            select_next(&mut predictor, &empty, &[1], 4, 0.1),
            Err(AcquisitionError::EmptyChain)
        ));
        assert!(matches!(
            info_gain(&mut predictor, &empty, 1, 4, 0.1),
            Err(AcquisitionError::EmptyChain)
        ));
    }

    #[test]
    fn single_candidate_info_gain_matches_selection_score() {
        let chain = PreferenceChain::from_buckets(vec![vec![0], vec![1]], 30);
        let mut predictor = MixturePredictor {
            tables: vec![vec![10.0, 0.0, 8.0], vec![10.0, 0.0, 2.0]],
        };
        let gain = info_gain(&mut predictor, &chain, 2, 2, 0.1).unwrap();
        assert!(gain > 0.0);
        let result = select_next(&mut predictor, &chain, &[2], 2, 0.1).unwrap();
        assert_abs_diff_eq!(result.scores[0].1, gain, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_gain_is_zero_iff_samples_agree() {
        let mut settled = degenerate(vec![4.0, 1.0]);
        assert_eq!(pairwise_infogain_score(&mut settled, 0, 1, 4, 0.1).unwrap(), 0.0);

        // Two samples certain of opposite winners: exactly one bit.
        let mut torn = MixturePredictor { tables: vec![vec![10.0, 0.0], vec![0.0, 10.0]] };
        let score = pairwise_infogain_score(&mut torn, 0, 1, 2, 0.1).unwrap();
        assert_abs_diff_eq!(score, 2.0_f64.ln(), epsilon = 1e-12);

        let swapped = pairwise_infogain_score(&mut torn, 1, 0, 2, 0.1).unwrap();
        assert_abs_diff_eq!(score, swapped, epsilon = 1e-12);
    }

    #[test]
    fn volume_removal_tracks_per_sample_uncertainty() {
        let mut certain = degenerate(vec![10.0, 0.0]);
        assert_eq!(volume_removal_score(&mut certain, 0, 1, 4, 0.1).unwrap(), 0.0);

        let mut unsure = degenerate(vec![5.0, 5.0]);
        assert_eq!(volume_removal_score(&mut unsure, 0, 1, 4, 0.1).unwrap(), 0.5);

        // Intermediate certainty: 2p(1-p) at p = sigmoid(1).
        let mut leaning = degenerate(vec![5.1, 5.0]);
        let p = 1.0 / (1.0 + (-1.0_f64).exp());
        let score = volume_removal_score(&mut leaning, 0, 1, 4, 0.1).unwrap();
        assert_abs_diff_eq!(score, 2.0 * p * (1.0 - p), epsilon = 1e-12);

        // Swapping turns 2p(1-p) into 2(1-p)p: same value up to rounding.
        let swapped = volume_removal_score(&mut leaning, 1, 0, 4, 0.1).unwrap();
        assert_abs_diff_eq!(score, swapped, epsilon = 1e-15);
    }

    #[test]
    fn random_selection_is_uniform_and_reproducible() {
        assert_eq!(random_select(&[7], &mut stream_rng(0, Stream::Acquisition, 0)).unwrap(), 7);
        assert!(matches!(
            random_select(&[], &mut stream_rng(0, Stream::Acquisition, 0)),
            Err(AcquisitionError::NoCandidates)
        ));

        let candidates: Vec<u64> = (0..10).collect();
        let mut rng = stream_rng(3, Stream::Acquisition, 0);
        let mut counts = [0u64; 10];
        for _ in 0..10_000 {
            counts[random_select(&candidates, &mut rng).unwrap() as usize] += 1;
        }
        let expected = 1000.0;
        let statistic: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(9.0).unwrap().inverse_cdf(0.99);
        assert!(statistic < critical, "chi-squared {statistic} over critical {critical}");

        let a = random_select(&candidates, &mut stream_rng(5, Stream::Acquisition, 1)).unwrap();
        let b = random_select(&candidates, &mut stream_rng(5, Stream::Acquisition, 1)).unwrap();
        assert_eq!(a, b);
    }
}
