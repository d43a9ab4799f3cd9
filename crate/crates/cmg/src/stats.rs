//! Cross-seed summary statistics: sample moments and a one-sided Welch's
//! t-test for comparing algorithms on unequal-variance return samples.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 values per sample, got {got}")]
    TooFewSamples { got: usize },
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than 2 values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var =
        values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// One-sided Welch's t-test p-value for the alternative mean(a) > mean(b),
/// with Welch-Satterthwaite degrees of freedom. Both variances zero falls
/// back to a convention: 0.5 on equal means, 0 when a is ahead, 1 otherwise.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(StatsError::TooFewSamples { got });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_std(a).powi(2), sample_std(b).powi(2));
    let (sea, seb) = (va / a.len() as f64, vb / b.len() as f64);
    let pooled = sea + seb;
    if pooled == 0.0 {
        return Ok(if ma == mb {
            0.5
        } else if ma > mb {
            0.0
        } else {
            1.0
        });
    }
    let t = (ma - mb) / pooled.sqrt();
    let df = pooled * pooled
        / (sea * sea / (a.len() - 1) as f64 + seb * seb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    // Survival function via symmetry, keeping precision in the far tail.
    Ok(dist.cdf(-t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_match_hand_computation() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(mean(&[3.0]), 3.0);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(sample_std(&[5.0]), 0.0);
        assert_abs_diff_eq!(sample_std(&[1.0, 2.0, 3.0]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sample_std(&[2.0, 4.0]), 2.0f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn identical_samples_sit_on_the_fence() {
        let xs = [4.0, 5.0, 6.0, 7.0];
        assert_eq!(welch_p_value(&xs, &xs).unwrap(), 0.5);
    }

    #[test]
    fn zero_variance_conventions_hold() {
        assert_eq!(welch_p_value(&[2.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(welch_p_value(&[0.0, 0.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(welch_p_value(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn p_values_match_an_independent_reference() {
        // Pinned against a separately implemented Welch test
        // (unequal-variance, one-sided greater).
        let a = [18.1, 17.3, 19.0, 16.8, 18.4];
        let b = [12.9, 4.1, 20.3, 8.8, 15.2];
        assert_abs_diff_eq!(
            welch_p_value(&a, &b).unwrap(),
            0.05468014984727889,
            epsilon = 1e-12
        );

        let c = [1.0, 2.0, 3.0];
        let d = [1.5, 2.5, 3.5, 4.5];
        assert_abs_diff_eq!(
            welch_p_value(&c, &d).unwrap(),
            0.849598646372412,
            epsilon = 1e-12
        );

        let e = [5.0, 5.1];
        let f = [4.9, 5.05, 5.2];
        assert_abs_diff_eq!(welch_p_value(&e, &f).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn confident_separation_gives_vanishing_p() {
        // Flat groups at 2 and 0 with a hair of jitter: overwhelming
        // one-sided evidence. Reference value 3.4586e-38.
        let a = [2.0, 2.000001, 1.999999, 2.0000005];
        let b = [0.0, 0.0000012, -0.0000007, 0.0000003];
        let p = welch_p_value(&a, &b).unwrap();
        assert!(p < 1e-3);
        let relative = (p / 3.4586010774516775e-38 - 1.0).abs();
        assert!(relative < 1e-6, "p {p} relative error {relative}");
    }

    #[test]
    fn swapping_the_samples_mirrors_the_p_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = welch_p_value(&a, &b).unwrap();
            let q = welch_p_value(&b, &a).unwrap();
            assert_abs_diff_eq!(p + q, 1.0, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn undersized_samples_are_rejected() {
        assert_eq!(
            welch_p_value(&[1.0], &[2.0, 3.0]),
            Err(StatsError::TooFewSamples { got: 1 })
        );
        assert_eq!(
            welch_p_value(&[1.0, 2.0], &[]),
            Err(StatsError::TooFewSamples { got: 0 })
        );
    }
}
