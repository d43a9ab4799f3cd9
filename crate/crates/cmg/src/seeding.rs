//! Deterministic derivation of per-component RNG streams from one master seed.
//!
//! Every stochastic component (environment resets, policy noise, the oracle,
//! network initialization, posterior sampling, acquisition pools) draws from
//! its own ChaCha stream so that adding draws in one component never perturbs
//! another. Streams are derived by hashing the master seed with fixed tags.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed tags for the independent random streams used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    EnvReset,
    PolicyNoise,
    Oracle,
    NetInit,
    NetSample,
    Acquisition,
    DataGeneration,
    Evaluation,
    /// Obstacle placements embedded in observations during planning.
    Planner,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::EnvReset => 0x01,
            Stream::PolicyNoise => 0x02,
            Stream::Oracle => 0x03,
            Stream::NetInit => 0x04,
            Stream::NetSample => 0x05,
            Stream::Acquisition => 0x06,
            Stream::DataGeneration => 0x07,
            Stream::Evaluation => 0x08,
            Stream::Planner => 0x09,
        }
    }
}

/// SplitMix64 finalizer; a cheap, well-mixed 64-bit hash step.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a master seed with an arbitrary sequence of words into one stream seed.
pub fn mix(master: u64, words: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    acc
}

/// Derives the seed for a tagged stream (optionally indexed, e.g. per rollout).
pub fn stream_seed(master: u64, stream: Stream, index: u64) -> u64 {
    mix(master, &[stream.tag(), index])
}

/// Builds the ChaCha generator for a tagged stream.
pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_inputs_same_stream() {
        let mut a = stream_rng(7, Stream::Oracle, 3);
        let mut b = stream_rng(7, Stream::Oracle, 3);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn streams_differ_by_tag_and_index() {
        let a = stream_seed(7, Stream::Oracle, 0);
        let b = stream_seed(7, Stream::NetInit, 0);
        let c = stream_seed(7, Stream::Oracle, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(1, &[2, 3]), mix(1, &[3, 2]));
    }
}
