//! Plain-text experiment configuration.
//!
//! Config files are `key = value` lines with `#` comments. Lists are
//! comma-separated, seed lists also accept `a..b` ranges, and every key has
//! a default, so the empty file is a valid experiment. Unknown keys are
//! errors: a typo should never silently fall back to a default.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::env::{Task, TaskConfig, Variant};
use crate::oracle::DEFAULT_BETA;
use crate::reward::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    MissingEquals { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}` (expected {expected})")]
    BadValue { line: usize, key: String, value: String, expected: &'static str },
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Which learner drives querying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algorithm {
    /// Random pairs up front, no active querying.
    Baseline,
    /// Ranked preference chain with model-assisted insertion.
    Impec,
    /// Active pairwise queries scored by information gain.
    PairwiseInfoGain,
    /// Active pairwise queries scored by the volume-removal heuristic.
    VolumeRemoval,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Baseline,
        Algorithm::Impec,
        Algorithm::PairwiseInfoGain,
        Algorithm::VolumeRemoval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Impec => "impec",
            Algorithm::PairwiseInfoGain => "pairwise_infogain",
            Algorithm::VolumeRemoval => "volume_removal",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pieces of the full ranking algorithm that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ablation {
    /// Replace acquisition scoring with uniform random selection.
    NoActive,
    /// Keep the chain but drop transitively derived pairs.
    NoDerivedPrefs,
    /// Drop the chain entirely; reduces to pairwise information gain.
    NoRanking,
}

impl Ablation {
    pub const ALL: [Ablation; 3] =
        [Ablation::NoActive, Ablation::NoDerivedPrefs, Ablation::NoRanking];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoActive => "no_active",
            Ablation::NoDerivedPrefs => "no_derived_prefs",
            Ablation::NoRanking => "no_ranking",
        }
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        Ablation::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resolved query accounting for one task: how many labels may be bought,
/// and how the ranking algorithms split them between the random bootstrap
/// set and the sorting phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetPlan {
    pub query_budget: u64,
    pub initial_pairs: usize,
    pub sort_budget: u64,
}

/// Full experiment description: the task/algorithm/seed grid plus every
/// knob of the pipeline. Budgets default per task difficulty: 300 split
/// 150+150 on in-distribution tasks, 600 split 400+200 on
/// distribution-shift tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tasks: Vec<Task>,
    pub variant: Variant,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub ablations: BTreeSet<Ablation>,
    pub query_budget: Option<u64>,
    pub initial_pairs: Option<usize>,
    pub sort_budget: Option<u64>,
    pub epochs: u32,
    pub query_stop_epoch: u32,
    pub oracle_beta: f64,
    pub equality_tolerance: f64,
    pub eval_horizon: u32,
    pub eval_episodes: usize,
    /// Episodes per per-epoch learning-curve point; 0 skips the trace.
    pub trace_episodes: usize,
    pub failure_threshold: f64,
    pub dataset_size: usize,
    pub chain_cap: usize,
    pub candidate_pool: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            tasks: vec![Task::Empty],
            variant: Variant::Train,
            algorithms: vec![Algorithm::Impec],
            seeds: vec![0, 1, 2, 3, 4],
            ablations: BTreeSet::new(),
            query_budget: None,
            initial_pairs: None,
            sort_budget: None,
            epochs: 20,
            query_stop_epoch: 15,
            oracle_beta: DEFAULT_BETA,
            equality_tolerance: 0.0,
            eval_horizon: 100,
            eval_episodes: 20,
            trace_episodes: 5,
            failure_threshold: 10.0,
            dataset_size: 60,
            chain_cap: 30,
            candidate_pool: 50,
            train: TrainConfig::default(),
        }
    }
}

fn parse_list<T>(
    raw: &str,
    item: impl FnMut(&str) -> Option<T>,
) -> Option<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn parse_seeds(raw: &str) -> Option<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().ok()?;
            let hi: u64 = hi.trim().parse().ok()?;
            if lo >= hi {
                return None;
            }
            seeds.extend(lo..hi);
        } else {
            seeds.push(part.parse().ok()?);
        }
    }
    Some(seeds)
}

impl ExperimentConfig {
    /// Parses a config file; every key is optional and later assignments
    /// win. Validation runs at the end.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut config = ExperimentConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::MissingEquals { line, text: content.to_string() });
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |expected: &'static str| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                expected,
            };
            match key {
                "tasks" => {
                    config.tasks =
                        parse_list(value, Task::parse).ok_or(bad("task names"))?;
                }
                "variant" => {
                    config.variant = match value {
                        "train" => Variant::Train,
                        "test" => Variant::Test,
                        _ => return Err(bad("train or test")),
                    };
                }
                "algorithms" => {
                    config.algorithms =
                        parse_list(value, Algorithm::parse).ok_or(bad("algorithm names"))?;
                }
                "seeds" => {
                    config.seeds = parse_seeds(value).ok_or(bad("seed list or a..b"))?;
                }
                "ablations" => {
                    config.ablations = parse_list(value, Ablation::parse)
                        .ok_or(bad("ablation names"))?
                        .into_iter()
                        .collect();
                }
                "query_budget" => {
                    config.query_budget = Some(value.parse().map_err(|_| bad("integer"))?);
                }
                "initial_pairs" => {
                    config.initial_pairs = Some(value.parse().map_err(|_| bad("integer"))?);
                }
                "sort_budget" => {
                    config.sort_budget = Some(value.parse().map_err(|_| bad("integer"))?);
                }
                "epochs" => config.epochs = value.parse().map_err(|_| bad("integer"))?,
                "query_stop_epoch" => {
                    config.query_stop_epoch = value.parse().map_err(|_| bad("integer"))?;
                }
                "oracle_beta" => {
                    config.oracle_beta = match value {
                        "inf" | "deterministic" => f64::INFINITY,
                        _ => value.parse().map_err(|_| bad("number or inf"))?,
                    };
                }
                "equality_tolerance" => {
                    config.equality_tolerance = value.parse().map_err(|_| bad("number"))?;
                }
                "eval_horizon" => {
                    config.eval_horizon = value.parse().map_err(|_| bad("integer"))?;
                }
                "eval_episodes" => {
                    config.eval_episodes = value.parse().map_err(|_| bad("integer"))?;
                }
                "trace_episodes" => {
                    config.trace_episodes = value.parse().map_err(|_| bad("integer"))?;
                }
                "failure_threshold" => {
                    config.failure_threshold = value.parse().map_err(|_| bad("number"))?;
                }
                "dataset_size" => {
                    config.dataset_size = value.parse().map_err(|_| bad("integer"))?;
                }
                "chain_cap" => config.chain_cap = value.parse().map_err(|_| bad("integer"))?,
                "candidate_pool" => {
                    config.candidate_pool = value.parse().map_err(|_| bad("integer"))?;
                }
                "learning_rate" => {
                    config.train.learning_rate = value.parse().map_err(|_| bad("number"))?;
                }
                "weight_decay" => {
                    config.train.weight_decay = value.parse().map_err(|_| bad("number"))?;
                }
                "batch_size" => {
                    config.train.batch_size = value.parse().map_err(|_| bad("integer"))?;
                }
                "temperature" => {
                    config.train.temperature = value.parse().map_err(|_| bad("number"))?;
                }
                "m_samples" => {
                    config.train.m_samples = value.parse().map_err(|_| bad("integer"))?;
                }
                "kl_weight" => {
                    config.train.kl_weight = value.parse().map_err(|_| bad("number"))?;
                }
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Query accounting for one task, applying the file's overrides on top
    /// of the per-difficulty defaults.
    pub fn budget_for(&self, task: Task) -> BudgetPlan {
        let hard = TaskConfig::new(task).has_distribution_shift();
        let default_budget = if hard { 600 } else { 300 };
        let default_initial = if hard { 400 } else { 150 };
        let query_budget = self.query_budget.unwrap_or(default_budget);
        let initial_pairs = self.initial_pairs.unwrap_or_else(|| {
            if self.query_budget.is_none() {
                default_initial
            } else {
                (query_budget / 2) as usize
            }
        });
        let sort_budget = self
            .sort_budget
            .unwrap_or_else(|| query_budget.saturating_sub(initial_pairs as u64));
        BudgetPlan { query_budget, initial_pairs, sort_budget }
    }

    /// The task config experiments run on (variant applied).
    pub fn task_config(&self, task: Task) -> TaskConfig {
        TaskConfig::new(task).with_variant(self.variant)
    }

    /// Cross-field sanity checks; `parse` runs these before returning.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.tasks.is_empty() {
            return fail("at least one task is required".into());
        }
        if self.algorithms.is_empty() {
            return fail("at least one algorithm is required".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.query_stop_epoch > self.epochs {
            return fail(format!(
                "query_stop_epoch {} exceeds epochs {}",
                self.query_stop_epoch, self.epochs
            ));
        }
        if self.train.m_samples < 2 {
            return fail("m_samples must be at least 2".into());
        }
        if self.chain_cap == 0 || self.candidate_pool == 0 || self.eval_episodes == 0 {
            return fail("chain_cap, candidate_pool, and eval_episodes must be positive".into());
        }
        let available = self.dataset_size * self.dataset_size.saturating_sub(1) / 2;
        for &task in &self.tasks {
            let plan = self.budget_for(task);
            if plan.query_budget == 0 {
                return fail(format!("query budget for {task} must be positive"));
            }
            let ranking = self
                .algorithms
                .iter()
                .any(|a| !matches!(a, Algorithm::Baseline));
            if ranking && plan.initial_pairs as u64 + plan.sort_budget != plan.query_budget {
                return fail(format!(
                    "initial_pairs {} + sort_budget {} must equal query_budget {} on {task}",
                    plan.initial_pairs, plan.sort_budget, plan.query_budget
                ));
            }
            let mut needed = 0u64;
            if self.algorithms.contains(&Algorithm::Baseline) {
                needed = needed.max(plan.query_budget);
            }
            if ranking {
                needed = needed.max(plan.initial_pairs as u64);
            }
            if needed > available as u64 {
                return fail(format!(
                    "{needed} distinct pairs requested on {task} but only {available} exist \
                     over {} rollouts",
                    self.dataset_size
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_empty_file_is_the_default_experiment() {
        let config = ExperimentConfig::parse("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        assert_eq!(
            config.budget_for(Task::Empty),
            BudgetPlan { query_budget: 300, initial_pairs: 150, sort_budget: 150 }
        );
        assert_eq!(
            config.budget_for(Task::LavaPosition),
            BudgetPlan { query_budget: 600, initial_pairs: 400, sort_budget: 200 }
        );
    }

    #[test]
    fn a_full_file_parses_every_key() {
        let text = "
            # grid
            tasks = empty, lava_position
            variant = train
            algorithms = baseline, impec
            seeds = 0..3, 7
            ablations = no_active

            query_budget = 40      # tiny smoke budget
            initial_pairs = 30
            sort_budget = 10
            epochs = 4
            query_stop_epoch = 3
            oracle_beta = inf
            equality_tolerance = 0.5
            eval_horizon = 50
            eval_episodes = 4
            trace_episodes = 0
            failure_threshold = 8.5
            dataset_size = 20
            chain_cap = 12
            candidate_pool = 9
            learning_rate = 3e-4
            weight_decay = 0
            batch_size = 16
            temperature = 0.2
            m_samples = 6
            kl_weight = 0.5
        ";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.tasks, vec![Task::Empty, Task::LavaPosition]);
        assert_eq!(config.algorithms, vec![Algorithm::Baseline, Algorithm::Impec]);
        assert_eq!(config.seeds, vec![0, 1, 2, 7]);
        assert!(config.ablations.contains(&Ablation::NoActive));
        assert_eq!(
            config.budget_for(Task::LavaPosition),
            BudgetPlan { query_budget: 40, initial_pairs: 30, sort_budget: 10 }
        );
        assert!(config.oracle_beta.is_infinite());
        assert_eq!(config.equality_tolerance, 0.5);
        assert_eq!(config.eval_horizon, 50);
        assert_eq!(config.trace_episodes, 0);
        assert_eq!(config.train.learning_rate, 3e-4);
        assert_eq!(config.train.batch_size, 16);
        assert_eq!(config.train.m_samples, 6);
        assert_eq!(config.train.kl_weight, 0.5);
    }

    #[test]
    fn an_explicit_budget_splits_evenly_by_default() {
        let config = ExperimentConfig::parse("query_budget = 100\ndataset_size = 30").unwrap();
        assert_eq!(
            config.budget_for(Task::Empty),
            BudgetPlan { query_budget: 100, initial_pairs: 50, sort_budget: 50 }
        );
    }

    #[test]
    fn typos_and_garbage_are_rejected_with_line_numbers() {
        assert_eq!(
            ExperimentConfig::parse("epoch = 20"),
            Err(ConfigError::UnknownKey { line: 1, key: "epoch".into() })
        );
        assert_eq!(
            ExperimentConfig::parse("\nepochs"),
            Err(ConfigError::MissingEquals { line: 2, text: "epochs".into() })
        );
        assert!(matches!(
            ExperimentConfig::parse("epochs = soon"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("tasks = moon_base"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("seeds = 5..2"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
    }

    #[test]
    fn inconsistent_experiments_fail_validation() {
        // Split does not sum to the budget for a ranking algorithm.
        let text = "algorithms = impec\nquery_budget = 50\ninitial_pairs = 10\nsort_budget = 10";
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Invalid(_))));

        // Baseline is exempt from the split rule.
        let exempt =
            "algorithms = baseline\nquery_budget = 40\ninitial_pairs = 10\nsort_budget = 10\ndataset_size = 10";
        assert!(ExperimentConfig::parse(exempt).is_ok());

        // More distinct pairs than the dataset can offer.
        let text = "algorithms = baseline\nquery_budget = 50\ndataset_size = 10";
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Invalid(_))));

        // Stop epoch past the end of training.
        assert!(matches!(
            ExperimentConfig::parse("epochs = 10\nquery_stop_epoch = 15"),
            Err(ConfigError::Invalid(_))
        ));

        // Repeated seeds would silently inflate the statistics.
        assert!(matches!(
            ExperimentConfig::parse("seeds = 1,1,2"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
