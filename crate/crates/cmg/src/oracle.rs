//! Simulated labeler: ternary preferences over rollout pairs.
//!
//! Strict preferences are sampled from the Shepard-Luce choice rule on
//! ground-truth returns, sharpened by an inverse temperature `beta`
//! (`beta = ∞` gives the deterministic argmax labeler). Ties within the
//! equality tolerance are flagged `Equal` deterministically — the noise
//! model never corrupts an equality flag. Every comparison, equal or not,
//! increments the oracle's query counter; experiment budgets are audited
//! against that tally.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rollouts::Rollout;

/// Default inverse temperature: low-noise labels.
pub const DEFAULT_BETA: f64 = 5.0;

/// Labeler verdict on an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferenceLabel {
    FirstPreferred,
    SecondPreferred,
    Equal,
}

impl PreferenceLabel {
    /// The same verdict with the pair order flipped.
    pub fn flipped(self) -> PreferenceLabel {
        match self {
            PreferenceLabel::FirstPreferred => PreferenceLabel::SecondPreferred,
            PreferenceLabel::SecondPreferred => PreferenceLabel::FirstPreferred,
            PreferenceLabel::Equal => PreferenceLabel::Equal,
        }
    }
}

/// Probability that the first return wins under the Shepard-Luce rule,
/// `exp(β·r₁) / (exp(β·r₁) + exp(β·r₂))`, evaluated after factoring out the
/// larger exponent so nothing overflows. Computing both orientations through
/// the same shifted exponent makes complements exact:
/// `luce_probability(a, b, β) + luce_probability(b, a, β) == 1.0` bit-for-bit.
pub fn luce_probability(return1: f64, return2: f64, beta: f64) -> f64 {
    if return1 == return2 {
        return 0.5;
    }
    let d = beta * (return1 - return2);
    if d >= 0.0 {
        let t = (-d).exp();
        1.0 - t / (1.0 + t)
    } else {
        let t = d.exp();
        t / (1.0 + t)
    }
}

/// The stateful labeler: choice noise, equality band, and the running tally
/// of comparisons charged against query budgets.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub beta: f64,
    pub equality_tolerance: f64,
    pub query_counter: u64,
}

impl Oracle {
    pub fn new(beta: f64) -> Oracle {
        Oracle { beta, equality_tolerance: 0.0, query_counter: 0 }
    }

    /// Noise-free argmax labeler.
    pub fn deterministic() -> Oracle {
        Oracle::new(f64::INFINITY)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Oracle {
        self.equality_tolerance = tolerance;
        self
    }

    /// Labels an ordered pair of returns. Ties inside the tolerance are
    /// `Equal` without consuming randomness; strict comparisons sample the
    /// Luce rule. Always counts one query.
    pub fn compare_returns(
        &mut self,
        return1: f64,
        return2: f64,
        rng: &mut impl Rng,
    ) -> PreferenceLabel {
        self.query_counter += 1;
        if (return1 - return2).abs() <= self.equality_tolerance {
            return PreferenceLabel::Equal;
        }
        let p_first = luce_probability(return1, return2, self.beta);
        if rng.gen::<f64>() < p_first {
            PreferenceLabel::FirstPreferred
        } else {
            PreferenceLabel::SecondPreferred
        }
    }

    /// Labels a rollout pair by its cached ground-truth returns. Both
    /// rollouts must come from the same task for returns to be comparable.
    pub fn compare(
        &mut self,
        first: &Rollout,
        second: &Rollout,
        rng: &mut impl Rng,
    ) -> PreferenceLabel {
        self.compare_returns(first.gt_return, second.gt_return, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream_rng, Stream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        stream_rng(seed, Stream::Oracle, 0)
    }

    #[test]
    fn equal_returns_are_a_coin_flip_for_any_beta() {
        for beta in [0.1, 1.0, 5.0, 1e6, f64::INFINITY] {
            assert_eq!(luce_probability(3.25, 3.25, beta), 0.5);
        }
    }

    #[test]
    fn unit_gap_at_unit_beta_matches_the_logistic_value() {
        assert_abs_diff_eq!(luce_probability(2.0, 1.0, 1.0), 0.731_058_578_630_004_9, epsilon = 1e-12);
    }

    #[test]
    fn huge_gaps_saturate_without_overflow() {
        let p = luce_probability(100.0, 0.0, 1.0);
        assert!(p.is_finite());
        assert!((1.0 - p).abs() < 1e-30);
        let q = luce_probability(0.0, 100.0, 1.0);
        assert!((0.0..1e-30).contains(&q));
    }

    #[test]
    fn probability_increases_strictly_with_the_gap() {
        let mut last = 0.0;
        for k in -40..=40 {
            let p = luce_probability(k as f64 * 0.25, 0.0, 1.0);
            assert!(p > last || k == -40);
            last = p;
        }
    }

    proptest! {
        #[test]
        fn complements_sum_to_exactly_one(
            r1 in -50.0..50.0f64,
            r2 in -50.0..50.0f64,
            beta in 0.01..20.0f64,
        ) {
            let p = luce_probability(r1, r2, beta);
            let q = luce_probability(r2, r1, beta);
            prop_assert_eq!(p + q, 1.0);
            prop_assert!((0.0..=1.0).contains(&p));
            // Saturation to the boundary can only happen once the scaled gap
            // dwarfs f64 resolution.
            if (beta * (r1 - r2)).abs() < 30.0 {
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn ties_are_always_equal_and_never_consume_randomness() {
        let mut oracle = Oracle::new(DEFAULT_BETA);
        let mut a = rng(1);
        let mut b = rng(1);
        for _ in 0..100 {
            assert_eq!(oracle.compare_returns(4.0, 4.0, &mut a), PreferenceLabel::Equal);
        }
        // The rng was untouched: both streams still agree.
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        assert_eq!(oracle.query_counter, 100);
    }

    #[test]
    fn deterministic_oracle_always_picks_the_higher_return() {
        let mut oracle = Oracle::deterministic();
        let mut r = rng(2);
        for _ in 0..50 {
            assert_eq!(oracle.compare_returns(7.0, 3.0, &mut r), PreferenceLabel::FirstPreferred);
            assert_eq!(oracle.compare_returns(3.0, 7.0, &mut r), PreferenceLabel::SecondPreferred);
        }
        assert_eq!(oracle.query_counter, 100);
    }

    #[test]
    fn sampled_frequency_matches_the_luce_probability() {
        let mut oracle = Oracle::new(1.0);
        let mut r = rng(3);
        let n = 10_000;
        let firsts = (0..n)
            .filter(|_| oracle.compare_returns(5.0, 4.0, &mut r) == PreferenceLabel::FirstPreferred)
            .count();
        let freq = firsts as f64 / n as f64;
        assert!((0.72..=0.75).contains(&freq), "frequency {freq}");
        assert_eq!(oracle.query_counter, n as u64);
    }

    #[test]
    fn tolerance_widens_the_equality_band() {
        let mut oracle = Oracle::deterministic().with_tolerance(0.5);
        let mut r = rng(4);
        assert_eq!(oracle.compare_returns(4.4, 4.0, &mut r), PreferenceLabel::Equal);
        assert_eq!(oracle.compare_returns(4.6, 4.0, &mut r), PreferenceLabel::FirstPreferred);
    }

    #[test]
    fn rollout_comparison_reads_cached_returns() {
        let config = crate::env::TaskConfig::new(crate::env::Task::Empty);
        let mut env = crate::env::Env::new(config).unwrap();
        env.reset(0);
        let stub = |id: u64, gt_return: f64| Rollout {
            id,
            source_policy: crate::rollouts::SourcePolicy::Expert,
            gt_return,
            steps: Vec::new(),
            final_state: env.state().clone(),
        };
        let mut oracle = Oracle::deterministic();
        let mut r = rng(5);
        assert_eq!(
            oracle.compare(&stub(0, 8.0), &stub(1, 2.0), &mut r),
            PreferenceLabel::FirstPreferred
        );
        assert_eq!(oracle.compare(&stub(0, 2.0), &stub(1, 2.0), &mut r), PreferenceLabel::Equal);
    }
}
