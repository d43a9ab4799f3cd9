//! Offline rollout datasets from scripted policies.
//!
//! Three scripted skill levels — random, mid, expert — come from one
//! ground-truth planner wrapped in ε-greedy noise (ε = 1.0, 0.5, 0.05).
//! The two skilled levels share a demonstrator habit: after most goal events
//! (the task's configured plant probability) they pause in place for a few
//! steps, long enough for the water-ripple channel to settle. Calm water near
//! the goal therefore tracks recent success in skilled data — the planted
//! association the dataset audits quantify. The random level never pauses on
//! goals, but half of its fragments stop going anywhere mid-episode: half of
//! those park across an arbitrary window, and the other half walk up to the
//! goal and hover on an adjacent cell without ever entering. Both produce
//! the calm-and-idle signature with nothing achieved; they are the
//! counter-evidence that the signature itself earns nothing. Fragments are
//! fixed-length and end with a short scripted wrap-up in which the collector
//! parks the agent regardless of skill.
//!
//! Generation mixes the policies round-robin and caps the share of
//! low-return fragments by rejection: once the cap is full, further
//! low-return draws are discarded (their round-robin slot is not re-rolled),
//! which skews the dataset toward higher-return behavior.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    manhattan, reward_from_transition, Action, Env, GoalSpec, GridState, Observation, TaskConfig,
    NUM_ACTIONS,
};
use crate::planner::{PlanError, PlanningPolicy};
use crate::seeding::{stream_rng, stream_seed, Stream};

/// Steps per rollout fragment.
pub const FRAGMENT_LENGTH: usize = 30;
/// Forced-Stay steps closing each fragment.
pub const WRAP_UP_STEPS: usize = 6;
/// Largest share of the dataset that low-return fragments may occupy.
pub const DEFAULT_LOW_RETURN_CAP: f64 = 0.25;
/// Returns at or below this count as low.
pub const DEFAULT_LOW_RETURN_THRESHOLD: f64 = 0.0;
/// Stay steps a skilled policy inserts after each goal event.
pub const GOAL_PAUSE_STEPS: u32 = 5;
/// Chance that a random-policy fragment parks across a window.
const PARK_PROBABILITY: f64 = 0.25;
/// Chance that a random-policy fragment hovers next to the goal instead.
const TEASE_PROBABILITY: f64 = 0.25;
/// Bounds on the length of a random-policy parking window.
const PARK_LENGTH: std::ops::RangeInclusive<u32> = 6..=14;
/// Rollouts per task dataset.
pub const DEFAULT_DATASET_SIZE: usize = 500;
/// Noise levels for the three standard policies, in round-robin order.
pub const DEFAULT_EPSILONS: [f64; 3] = [1.0, 0.5, 0.05];
/// A ripple level at or below this reads as calm water.
pub const CALM_RIPPLE_THRESHOLD: f64 = 0.1;
/// Generation attempts allowed per requested rollout before giving up.
const MAX_ATTEMPT_FACTOR: usize = 40;
/// Smallest dataset worth generating.
const MIN_DATASET_SIZE: usize = 10;

/// Dataset construction and persistence errors.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset needs at least {min} rollouts, got {got}")]
    TooSmall { got: usize, min: usize },
    #[error("no policies to sample from")]
    NoPolicies,
    #[error(
        "low-return cap kept the dataset at {accepted}/{wanted} rollouts \
         after {attempts} attempts"
    )]
    CapUnreachable { accepted: usize, wanted: usize, attempts: usize },
    #[error("pair budget {k} exceeds the {available} distinct pairs")]
    TooManyPairs { k: usize, available: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record: {0}")]
    Format(#[from] serde_json::Error),
    #[error("dataset file is empty")]
    MissingHeader,
}

/// Which scripted skill level produced a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourcePolicy {
    Random,
    Mid,
    Expert,
}

/// One fixed-length fragment of behavior: the atom of preference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub id: u64,
    pub source_policy: SourcePolicy,
    /// Cached sum of per-step ground-truth rewards.
    pub gt_return: f64,
    /// Exactly [`FRAGMENT_LENGTH`] entries of (state, action taken in it,
    /// observation of it).
    pub steps: Vec<(GridState, Action, Observation)>,
    /// State after the last action, closing the reward chain.
    pub final_state: GridState,
}

impl Rollout {
    /// Recomputes the ground-truth return from the stored state chain; must
    /// match the cached `gt_return` exactly.
    pub fn recomputed_return(&self, config: &TaskConfig) -> f64 {
        let mut total = 0.0;
        for t in 0..self.steps.len() {
            let after = if t + 1 < self.steps.len() {
                &self.steps[t + 1].0
            } else {
                &self.final_state
            };
            total += reward_from_transition(config, &self.steps[t].0, after);
        }
        total
    }
}

/// An offline rollout collection with its provenance and cap settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutDataset {
    pub task: TaskConfig,
    pub rollouts: Vec<Rollout>,
    pub low_return_cap: f64,
    pub low_return_threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    task: TaskConfig,
    low_return_cap: f64,
    low_return_threshold: f64,
    count: usize,
}

impl RolloutDataset {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn low_return_count(&self) -> usize {
        self.rollouts
            .iter()
            .filter(|r| r.gt_return <= self.low_return_threshold)
            .count()
    }

    /// Looks a rollout up by id: dense ids resolve by index, anything else
    /// falls back to a scan.
    pub fn rollout(&self, id: u64) -> Option<&Rollout> {
        match self.rollouts.get(id as usize) {
            Some(r) if r.id == id => Some(r),
            _ => self.rollouts.iter().find(|r| r.id == id),
        }
    }

    /// Writes a header record followed by one rollout record per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), DatasetError> {
        let header = DatasetHeader {
            task: self.task.clone(),
            low_return_cap: self.low_return_cap,
            low_return_threshold: self.low_return_threshold,
            count: self.rollouts.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for rollout in &self.rollouts {
            serde_json::to_writer(&mut w, rollout)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`write_jsonl`](Self::write_jsonl).
    pub fn read_jsonl(r: impl BufRead) -> Result<RolloutDataset, DatasetError> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or(DatasetError::MissingHeader)??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut rollouts = Vec::with_capacity(header.count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rollouts.push(serde_json::from_str(&line)?);
        }
        Ok(RolloutDataset {
            task: header.task,
            rollouts,
            low_return_cap: header.low_return_cap,
            low_return_threshold: header.low_return_threshold,
        })
    }
}

/// How a random-label fragment spends its idle half, when it has one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IdleMode {
    /// Act randomly the whole fragment.
    None,
    /// Stay through the steps in [start, start + len).
    Park { start: u32, len: u32 },
    /// Plan toward the goal cell, then hover adjacent without entering.
    Tease,
}

/// A ground-truth planner behind ε-greedy noise: acts optimally with
/// probability 1−ε and uniformly at random otherwise. Skilled labels pause
/// for [`GOAL_PAUSE_STEPS`] after most goal events; the random label instead
/// draws an [`IdleMode`] per fragment.
pub struct ScriptedPolicy {
    pub epsilon: f64,
    pub label: SourcePolicy,
    planner: PlanningPolicy<'static>,
    rng: ChaCha8Rng,
    pause_probability: f64,
    step: u32,
    last_goal: Option<GoalSpec>,
    pause_left: u32,
    idle: IdleMode,
}

impl ScriptedPolicy {
    pub fn new(config: &TaskConfig, epsilon: f64, label: SourcePolicy) -> ScriptedPolicy {
        ScriptedPolicy {
            epsilon,
            label,
            planner: PlanningPolicy::ground_truth(config.clone()),
            rng: stream_rng(0, Stream::PolicyNoise, 0),
            pause_probability: config.spurious_probability,
            step: 0,
            last_goal: None,
            pause_left: 0,
            idle: IdleMode::None,
        }
    }

    /// The standard random/mid/expert trio for a task.
    pub fn standard_trio(config: &TaskConfig) -> Vec<ScriptedPolicy> {
        let labels = [SourcePolicy::Random, SourcePolicy::Mid, SourcePolicy::Expert];
        DEFAULT_EPSILONS
            .iter()
            .zip(labels)
            .map(|(&eps, label)| ScriptedPolicy::new(config, eps, label))
            .collect()
    }

    /// Re-arms the noise stream and resets per-fragment state; cached plans
    /// are kept. A random-label policy draws its idle mode here.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = stream_rng(seed, Stream::PolicyNoise, 0);
        self.step = 0;
        self.last_goal = None;
        self.pause_left = 0;
        self.idle = if self.label == SourcePolicy::Random {
            let roll: f64 = self.rng.gen();
            if roll < PARK_PROBABILITY {
                let len = self.rng.gen_range(PARK_LENGTH);
                let start = self.rng.gen_range(0..FRAGMENT_LENGTH as u32);
                IdleMode::Park { start, len }
            } else if roll < PARK_PROBABILITY + TEASE_PROBABILITY {
                IdleMode::Tease
            } else {
                IdleMode::None
            }
        } else {
            IdleMode::None
        };
    }

    pub fn act(&mut self, state: &GridState) -> Result<Action, PlanError> {
        let t = self.step;
        self.step += 1;
        if self.label != SourcePolicy::Random {
            if let Some(prev) = self.last_goal {
                if prev != state.goal_spec && self.rng.gen::<f64>() < self.pause_probability {
                    self.pause_left = GOAL_PAUSE_STEPS;
                }
            }
        }
        self.last_goal = Some(state.goal_spec);
        if self.pause_left > 0 {
            self.pause_left -= 1;
            return Ok(Action::Stay);
        }
        match self.idle {
            IdleMode::Park { start, len } if (start..start + len).contains(&t) => {
                return Ok(Action::Stay);
            }
            // Hover next to the goal cell without entering; tasks whose goal
            // is not a cell fall through to random behavior.
            IdleMode::Tease => {
                if let GoalSpec::Cell(goal) = state.goal_spec {
                    return if manhattan(state.agent_pos, goal) <= 1 {
                        Ok(Action::Stay)
                    } else {
                        self.planner.act(state)
                    };
                }
            }
            _ => {}
        }
        if self.rng.gen::<f64>() < self.epsilon {
            let idx = self.rng.gen_range(0..NUM_ACTIONS);
            Ok(Action::from_index(idx).expect("index in range"))
        } else {
            self.planner.act(state)
        }
    }
}

/// Rolls one fragment: the policy acts until the wrap-up window, then the
/// collector parks the agent with forced Stays.
pub fn collect_rollout(
    env: &mut Env,
    policy: &mut ScriptedPolicy,
    reset_seed: u64,
    id: u64,
) -> Result<Rollout, PlanError> {
    env.reset(reset_seed);
    let mut steps = Vec::with_capacity(FRAGMENT_LENGTH);
    let mut gt_return = 0.0;
    for t in 0..FRAGMENT_LENGTH {
        let state = env.state().clone();
        let observation = env.observation();
        let action = if t < FRAGMENT_LENGTH - WRAP_UP_STEPS {
            policy.act(&state)?
        } else {
            Action::Stay
        };
        let outcome = env.step(action);
        gt_return += outcome.reward;
        steps.push((state, action, observation));
    }
    Ok(Rollout {
        id,
        source_policy: policy.label,
        gt_return,
        steps,
        final_state: env.state().clone(),
    })
}

/// Builds a dataset by cycling through the policies, rejecting low-return
/// fragments once their capped share is full. Deterministic given the seed.
pub fn generate_dataset(
    config: &TaskConfig,
    policies: &mut [ScriptedPolicy],
    n_rollouts: usize,
    seed: u64,
) -> Result<RolloutDataset, DatasetError> {
    if n_rollouts < MIN_DATASET_SIZE {
        return Err(DatasetError::TooSmall { got: n_rollouts, min: MIN_DATASET_SIZE });
    }
    if policies.is_empty() {
        return Err(DatasetError::NoPolicies);
    }
    let mut env = Env::new(config.clone()).expect("dataset config is valid");
    let max_low = (DEFAULT_LOW_RETURN_CAP * n_rollouts as f64).floor() as usize;
    let max_attempts = MAX_ATTEMPT_FACTOR * n_rollouts;
    let mut rollouts: Vec<Rollout> = Vec::with_capacity(n_rollouts);
    let mut low_count = 0;
    let mut attempt = 0;
    while rollouts.len() < n_rollouts {
        if attempt >= max_attempts {
            return Err(DatasetError::CapUnreachable {
                accepted: rollouts.len(),
                wanted: n_rollouts,
                attempts: attempt,
            });
        }
        let policy = &mut policies[attempt % policies.len()];
        policy.reseed(stream_seed(seed, Stream::PolicyNoise, attempt as u64));
        let reset_seed = stream_seed(seed, Stream::DataGeneration, attempt as u64);
        attempt += 1;
        let rollout = collect_rollout(&mut env, policy, reset_seed, rollouts.len() as u64)?;
        if rollout.gt_return <= DEFAULT_LOW_RETURN_THRESHOLD {
            if low_count >= max_low {
                continue;
            }
            low_count += 1;
        }
        rollouts.push(rollout);
    }
    Ok(RolloutDataset {
        task: config.clone(),
        rollouts,
        low_return_cap: DEFAULT_LOW_RETURN_CAP,
        low_return_threshold: DEFAULT_LOW_RETURN_THRESHOLD,
    })
}

/// Samples `k` distinct unordered id pairs uniformly without replacement.
pub fn sample_initial_pairs(
    dataset: &RolloutDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(u64, u64)>, DatasetError> {
    let n = dataset.rollouts.len();
    let available = n * n.saturating_sub(1) / 2;
    if k > available {
        return Err(DatasetError::TooManyPairs { k, available });
    }
    let mut rng = stream_rng(seed, Stream::DataGeneration, 0);
    let mut seen = HashSet::with_capacity(k);
    let mut pairs = Vec::with_capacity(k);
    while pairs.len() < k {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if seen.insert(key) {
            pairs.push((dataset.rollouts[key.0].id, dataset.rollouts[key.1].id));
        }
    }
    Ok(pairs)
}

/// Pooled association (Yule's Q) between "water is calm after step t" and
/// "a goal event happened at or before step t", over all (rollout, step)
/// cells. Goal events are read off goal-spec changes, which respawns always
/// produce because the consumed cell is excluded from the candidate set.
/// Returns `None` when a state lacks the ripple channel.
pub fn ripple_goal_association(rollouts: &[Rollout]) -> Option<f64> {
    // counts[calm][reached]
    let mut counts = [[0u64; 2]; 2];
    for rollout in rollouts {
        let mut reached = false;
        for t in 0..rollout.steps.len() {
            let post_state = if t + 1 < rollout.steps.len() {
                &rollout.steps[t + 1].0
            } else {
                &rollout.final_state
            };
            if post_state.goal_spec != rollout.steps[t].0.goal_spec {
                reached = true;
            }
            let calm = post_state.ripple? <= CALM_RIPPLE_THRESHOLD;
            counts[calm as usize][reached as usize] += 1;
        }
    }
    let a = counts[1][1] as f64;
    let b = counts[1][0] as f64;
    let c = counts[0][1] as f64;
    let d = counts[0][0] as f64;
    let denom = a * d + b * c;
    Some(if denom == 0.0 { 0.0 } else { (a * d - b * c) / denom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GoalSpec, Pos, Task};
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::VecDeque;

    fn expert(config: &TaskConfig) -> ScriptedPolicy {
        ScriptedPolicy::new(config, 0.05, SourcePolicy::Expert)
    }

    fn random(config: &TaskConfig) -> ScriptedPolicy {
        ScriptedPolicy::new(config, 1.0, SourcePolicy::Random)
    }

    fn collect_batch(
        config: &TaskConfig,
        policy: &mut ScriptedPolicy,
        n: usize,
        seed: u64,
    ) -> Vec<Rollout> {
        let mut env = Env::new(config.clone()).unwrap();
        (0..n)
            .map(|i| {
                policy.reseed(stream_seed(seed, Stream::PolicyNoise, i as u64));
                let reset = stream_seed(seed, Stream::DataGeneration, i as u64);
                collect_rollout(&mut env, policy, reset, i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn fragments_have_fixed_length_and_matching_cached_return() {
        let config = TaskConfig::new(Task::Lava);
        let mut policy = expert(&config);
        for rollout in collect_batch(&config, &mut policy, 5, 7) {
            assert_eq!(rollout.steps.len(), FRAGMENT_LENGTH);
            assert_eq!(rollout.gt_return, rollout.recomputed_return(&config));
        }
    }

    #[test]
    fn fully_random_policy_draws_actions_uniformly() {
        let config = TaskConfig::new(Task::Empty);
        let mut env = Env::new(config.clone()).unwrap();
        env.reset(3);
        let mut policy = random(&config);
        policy.reseed(99);
        let mut counts = [0u64; NUM_ACTIONS];
        let draws = 10_000;
        for _ in 0..draws {
            counts[policy.act(env.state()).unwrap().index()] += 1;
        }
        let expected = draws as f64 / NUM_ACTIONS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new((NUM_ACTIONS - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    /// Fewest steps to the goal over (position, direction) nodes, as a bound
    /// on how fast a noiseless scripted policy must finish.
    fn shortest_path_steps(config: &TaskConfig, state: &GridState) -> u32 {
        let goal = match state.goal_spec {
            GoalSpec::Cell(p) => p,
            _ => unreachable!(),
        };
        let g = config.grid_size;
        let inside = |p: Pos| p.0 >= 1 && p.1 >= 1 && p.0 < g - 1 && p.1 < g - 1;
        let mut seen = std::collections::HashMap::new();
        let mut queue = VecDeque::new();
        seen.insert((state.agent_pos, state.agent_dir), 0u32);
        queue.push_back((state.agent_pos, state.agent_dir));
        while let Some((pos, dir)) = queue.pop_front() {
            let steps = seen[&(pos, dir)];
            if pos == goal {
                return steps;
            }
            let fwd = crate::env::forward_cell(pos, dir);
            let mut nexts = vec![(pos, dir.left()), (pos, dir.right())];
            if inside(fwd) {
                nexts.push((fwd, dir));
            }
            for n in nexts {
                seen.entry(n).or_insert_with(|| {
                    queue.push_back(n);
                    steps + 1
                });
            }
        }
        unreachable!("goal unreachable");
    }

    #[test]
    fn noiseless_policy_reaches_the_goal_at_the_shortest_path_bound() {
        let config = TaskConfig::new(Task::Empty);
        let mut policy = ScriptedPolicy::new(&config, 0.0, SourcePolicy::Expert);
        let mut env = Env::new(config.clone()).unwrap();
        for seed in 0..5 {
            policy.reseed(seed);
            env.reset(seed);
            let bound = shortest_path_steps(&config, env.state());
            let mut reached_at = None;
            for t in 0..FRAGMENT_LENGTH as u32 {
                let before = env.state().goal_spec;
                let action = policy.act(env.state()).unwrap();
                env.step(action);
                if env.state().goal_spec != before {
                    reached_at = Some(t + 1);
                    break;
                }
            }
            assert_eq!(reached_at, Some(bound), "seed {seed}");
        }
    }

    #[test]
    fn near_optimal_rollouts_outscore_random_ones() {
        let config = TaskConfig::new(Task::Empty);
        let mean = |rs: &[Rollout]| {
            rs.iter().map(|r| r.gt_return).sum::<f64>() / rs.len() as f64
        };
        let expert_mean = mean(&collect_batch(&config, &mut expert(&config), 100, 11));
        let random_mean = mean(&collect_batch(&config, &mut random(&config), 100, 11));
        assert!(
            expert_mean > random_mean,
            "expert {expert_mean} vs random {random_mean}"
        );
    }

    #[test]
    fn generation_respects_the_low_return_cap() {
        let config = TaskConfig::new(Task::Empty);
        let mut policies = ScriptedPolicy::standard_trio(&config);
        let dataset = generate_dataset(&config, &mut policies, 500, 42).unwrap();
        assert_eq!(dataset.len(), 500);
        let max_low = (DEFAULT_LOW_RETURN_CAP * 500.0).floor() as usize;
        assert!(dataset.low_return_count() <= max_low, "lows {}", dataset.low_return_count());
        // Ids are dense and unique.
        for (i, r) in dataset.rollouts.iter().enumerate() {
            assert_eq!(r.id, i as u64);
        }
        // The skew materializes: most of the dataset scored at least once.
        let high = dataset.len() - dataset.low_return_count();
        assert!(high >= 500 - max_low);
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let config = TaskConfig::new(Task::Empty);
        let gen = |seed| {
            let mut policies = ScriptedPolicy::standard_trio(&config);
            generate_dataset(&config, &mut policies, 30, seed).unwrap()
        };
        let (a, b, c) = (gen(5), gen(5), gen(6));
        assert_eq!(a, b);
        assert_ne!(
            a.rollouts.iter().map(|r| r.gt_return).collect::<Vec<_>>(),
            c.rollouts.iter().map(|r| r.gt_return).collect::<Vec<_>>()
        );
    }

    #[test]
    fn all_expert_generation_can_satisfy_the_cap_with_zero_lows() {
        let config = TaskConfig::new(Task::Empty);
        let mut policies = vec![expert(&config), expert(&config), expert(&config)];
        let dataset = generate_dataset(&config, &mut policies, 10, 12).unwrap();
        assert_eq!(dataset.low_return_count(), 0);
    }

    #[test]
    fn all_random_generation_saturates_but_respects_the_cap() {
        let config = TaskConfig::new(Task::Empty);
        let mut policies = vec![random(&config), random(&config), random(&config)];
        let dataset = generate_dataset(&config, &mut policies, 40, 0).unwrap();
        assert_eq!(dataset.len(), 40);
        let max_low = (DEFAULT_LOW_RETURN_CAP * 40.0).floor() as usize;
        assert_eq!(dataset.low_return_count(), max_low, "cap should bind for random-only data");
    }

    #[test]
    fn tiny_datasets_are_rejected() {
        let config = TaskConfig::new(Task::Empty);
        let mut policies = ScriptedPolicy::standard_trio(&config);
        assert!(matches!(
            generate_dataset(&config, &mut policies, 9, 0),
            Err(DatasetError::TooSmall { got: 9, .. })
        ));
    }

    fn stub_dataset(n: usize) -> RolloutDataset {
        let config = TaskConfig::new(Task::Empty);
        let state = {
            let mut env = Env::new(config.clone()).unwrap();
            env.reset(0);
            env.state().clone()
        };
        RolloutDataset {
            task: config,
            rollouts: (0..n as u64)
                .map(|id| Rollout {
                    id,
                    source_policy: SourcePolicy::Expert,
                    gt_return: id as f64,
                    steps: Vec::new(),
                    final_state: state.clone(),
                })
                .collect(),
            low_return_cap: DEFAULT_LOW_RETURN_CAP,
            low_return_threshold: DEFAULT_LOW_RETURN_THRESHOLD,
        }
    }

    #[test]
    fn pair_sampling_yields_distinct_unordered_pairs() {
        let dataset = stub_dataset(500);
        assert!(sample_initial_pairs(&dataset, 0, 0).unwrap().is_empty());
        let pairs = sample_initial_pairs(&dataset, 150, 9).unwrap();
        assert_eq!(pairs.len(), 150);
        let mut seen = HashSet::new();
        for &(a, b) in &pairs {
            assert_ne!(a, b);
            assert!(seen.insert((a.min(b), a.max(b))), "pair ({a},{b}) repeated");
        }
        assert_eq!(pairs, sample_initial_pairs(&dataset, 150, 9).unwrap());
        assert_ne!(pairs, sample_initial_pairs(&dataset, 150, 10).unwrap());
    }

    #[test]
    fn pair_sampling_rejects_oversized_budgets() {
        let dataset = stub_dataset(5);
        assert!(sample_initial_pairs(&dataset, 10, 0).is_ok());
        assert!(matches!(
            sample_initial_pairs(&dataset, 11, 0),
            Err(DatasetError::TooManyPairs { k: 11, available: 10 })
        ));
    }

    #[test]
    fn calm_water_tracks_success_for_experts_but_not_random_behavior() {
        let config = TaskConfig::new(Task::Empty);
        let expert_q =
            ripple_goal_association(&collect_batch(&config, &mut expert(&config), 50, 3)).unwrap();
        let random_q =
            ripple_goal_association(&collect_batch(&config, &mut random(&config), 50, 3)).unwrap();
        assert!(expert_q > 0.8, "expert association {expert_q}");
        assert!(random_q < 0.3, "random association {random_q}");
    }

    #[test]
    fn association_is_undefined_without_the_ripple_channel() {
        let config = TaskConfig::new(Task::LavaPosition);
        let rollouts = collect_batch(&config, &mut expert(&config), 2, 0);
        assert_eq!(ripple_goal_association(&rollouts), None);
    }

    #[test]
    fn datasets_round_trip_through_jsonl() {
        let config = TaskConfig::new(Task::Fetch);
        let mut policies = ScriptedPolicy::standard_trio(&config);
        let dataset = generate_dataset(&config, &mut policies, 10, 8).unwrap();
        let mut buf = Vec::new();
        dataset.write_jsonl(&mut buf).unwrap();
        let reread = RolloutDataset::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(dataset, reread);
    }
}
