//! Tabular planning and policy evaluation.
//!
//! Each task layout (goal configuration plus static cells) induces a small
//! finite MDP over agent position × direction, extended with the discrete
//! ripple level when a learned reward needs to see it. Policies come from
//! value iteration; because goals respawn, the executed policy re-plans
//! whenever the layout changes, caching one plan per layout.
//!
//! Ground-truth planning scores transitions with the real reward rule.
//! Learned-reward planning scores state-action pairs with a caller-supplied
//! function (typically a reward network at its posterior mean) and never
//! treats any state as absorbing, so a constant per-step offset in the
//! learned reward — which preference training cannot identify — shifts all
//! values equally and leaves the greedy policy unchanged.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use thiserror::Error;

use crate::env::{
    self, build_observation, forward_cell, Action, CellEntity, Direction, Env, GoalSpec,
    GridState, ObjectKind, Observation, Pos, Task, TaskConfig, Variant, NUM_ACTIONS,
    NUM_OBSTACLES, RIPPLE_CLAMP, RIPPLE_DECAY, RIPPLE_ON_MOVE,
};

/// Hard ceiling on the enumerated state count.
pub const STATE_CAP: usize = 1_000_000;
/// Discount factor for all planning.
pub const DEFAULT_GAMMA: f64 = 0.98;
/// Sup-norm residual at which value iteration stops.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Episodes per evaluation report.
pub const DEFAULT_EVAL_EPISODES: usize = 20;
/// Steps per evaluation episode.
pub const DEFAULT_EVAL_HORIZON: u32 = 100;
/// A run fails when its mean evaluation return is at or below this.
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 10.0;
/// Obstacle placements averaged per state-action when a learned reward is
/// planned on the dynamic-obstacles task.
const OBSTACLE_REWARD_SAMPLES: usize = 4;

/// Planning errors.
#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("state space has {got} states, exceeding the cap of {cap}")]
    StateSpaceTooLarge { got: usize, cap: usize },
    #[error("gamma must lie in [0, 1), got {got}")]
    InvalidGamma { got: f64 },
    #[error("state not covered by the tabular model")]
    StateNotCovered,
}

/// The static part of an episode state: everything that persists until a
/// goal event changes it. Obstacles are excluded (they resample every step
/// and are handled probabilistically).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    pub goal_spec: GoalSpec,
    pub static_cells: Vec<(Pos, CellEntity)>,
}

impl Layout {
    pub fn of(state: &GridState) -> Layout {
        Layout {
            goal_spec: state.goal_spec,
            static_cells: state
                .special_cells
                .iter()
                .filter(|(_, e)| !matches!(e, CellEntity::Obstacle))
                .map(|(p, e)| (*p, *e))
                .collect(),
        }
    }

    fn cells(&self) -> BTreeMap<Pos, CellEntity> {
        self.static_cells.iter().copied().collect()
    }
}

/// One abstract planner state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PlannerState {
    pub pos: Pos,
    pub dir: Direction,
    /// Index into [`ripple_levels`]; `None` when the model ignores ripples.
    pub ripple_idx: Option<u8>,
}

/// The discrete ripple levels reachable under the dynamics: zero plus the
/// halving chain down from 1 until the clamp, in increasing order.
pub fn ripple_levels() -> Vec<f64> {
    let mut levels = vec![0.0];
    let mut chain = Vec::new();
    let mut r = RIPPLE_ON_MOVE;
    while r >= RIPPLE_CLAMP {
        chain.push(r);
        r *= RIPPLE_DECAY;
    }
    chain.reverse();
    levels.extend(chain);
    levels
}

fn ripple_index(levels: &[f64], value: f64) -> Option<u8> {
    levels
        .iter()
        .position(|&l| l == value)
        .map(|i| i as u8)
}

fn decayed_index(levels: &[f64], idx: u8) -> u8 {
    let decayed = levels[idx as usize] * RIPPLE_DECAY;
    let clamped = if decayed < RIPPLE_CLAMP { 0.0 } else { decayed };
    ripple_index(levels, clamped).expect("decay stays on the level lattice")
}

/// Finite MDP for one layout: states, exact transition rows, and the
/// expected ground-truth reward per state-action.
#[derive(Debug)]
pub struct TabularModel {
    pub config: TaskConfig,
    pub layout: Layout,
    pub states: Vec<PlannerState>,
    index: HashMap<PlannerState, usize>,
    /// `transitions[s][a]` = (next-state index, probability) pairs summing to 1.
    pub transitions: Vec<[Vec<(usize, f64)>; NUM_ACTIONS]>,
    gt_reward: Vec<[f64; NUM_ACTIONS]>,
    ripple_levels: Vec<f64>,
    with_ripple: bool,
}

/// Enumerates the layout's reachable abstraction. `with_ripple` extends the
/// state with the discrete ripple level (only meaningful on tasks carrying
/// the ripple sensor); ground-truth planning never needs it.
pub fn enumerate_states(
    config: &TaskConfig,
    layout: &Layout,
    with_ripple: bool,
) -> Result<TabularModel, PlanError> {
    let cells = layout.cells();
    let levels = ripple_levels();
    let occupiable: Vec<Pos> = config
        .interior_cells()
        .into_iter()
        .filter(|p| !matches!(cells.get(p), Some(CellEntity::Door { .. } | CellEntity::Object { .. })))
        .collect();
    let n_ripple = if with_ripple { levels.len() } else { 1 };
    let count = occupiable.len() * 4 * n_ripple;
    if count > STATE_CAP {
        return Err(PlanError::StateSpaceTooLarge { got: count, cap: STATE_CAP });
    }

    let mut states = Vec::with_capacity(count);
    for &pos in &occupiable {
        for dir in Direction::ALL {
            if with_ripple {
                for idx in 0..levels.len() {
                    states.push(PlannerState { pos, dir, ripple_idx: Some(idx as u8) });
                }
            } else {
                states.push(PlannerState { pos, dir, ripple_idx: None });
            }
        }
    }
    let index: HashMap<PlannerState, usize> =
        states.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let goal_cell = match layout.goal_spec {
        GoalSpec::Cell(p) => Some(p),
        _ => None,
    };
    // Probability that a forward move into a non-goal cell is blocked by a
    // freshly resampled obstacle.
    let p_block = if config.task == Task::DynamicObstacles {
        let candidates = config.interior_cells().len() - 2;
        NUM_OBSTACLES as f64 / candidates as f64
    } else {
        0.0
    };

    let g = config.grid_size;
    let enterable = |pos: Pos| -> bool {
        pos.0 >= 1
            && pos.1 >= 1
            && pos.0 < g - 1
            && pos.1 < g - 1
            && !matches!(
                cells.get(&pos),
                Some(CellEntity::Door { .. } | CellEntity::Object { .. })
            )
    };
    let satisfied = |pos: Pos| goal_satisfied(config, layout, pos);
    let on_lava = |pos: Pos| matches!(cells.get(&pos), Some(CellEntity::Lava));
    let facing_key = |s: &PlannerState| {
        matches!(
            cells.get(&forward_cell(s.pos, s.dir)),
            Some(CellEntity::Object { kind: ObjectKind::Key, .. })
        )
    };

    let mut transitions = Vec::with_capacity(states.len());
    let mut gt_reward = Vec::with_capacity(states.len());
    for s in &states {
        let still_ripple = s.ripple_idx.map(|i| decayed_index(&levels, i));
        let moved_ripple = s
            .ripple_idx
            .map(|_| ripple_index(&levels, RIPPLE_ON_MOVE).unwrap());
        let still = |pos: Pos, dir: Direction| PlannerState { pos, dir, ripple_idx: still_ripple };
        let step_outcome = |next: PlannerState, p: f64| -> (usize, f64) { (index[&next], p) };

        let mut rows: [Vec<(usize, f64)>; NUM_ACTIONS] = Default::default();
        let mut rewards = [0.0; NUM_ACTIONS];
        for action in Action::ALL {
            let a = action.index();
            match action {
                Action::TurnLeft => {
                    rows[a].push(step_outcome(still(s.pos, s.dir.left()), 1.0));
                }
                Action::TurnRight => {
                    rows[a].push(step_outcome(still(s.pos, s.dir.right()), 1.0));
                }
                Action::Stay | Action::Pickup => {
                    rows[a].push(step_outcome(still(s.pos, s.dir), 1.0));
                }
                Action::Forward => {
                    let target = forward_cell(s.pos, s.dir);
                    if !enterable(target) {
                        rows[a].push(step_outcome(still(s.pos, s.dir), 1.0));
                    } else {
                        let block = if Some(target) == goal_cell { 0.0 } else { p_block };
                        let moved = PlannerState { pos: target, dir: s.dir, ripple_idx: moved_ripple };
                        if block > 0.0 {
                            rows[a].push(step_outcome(moved, 1.0 - block));
                            rows[a].push(step_outcome(still(s.pos, s.dir), block));
                        } else {
                            rows[a].push(step_outcome(moved, 1.0));
                        }
                    }
                }
            }
            // Expected ground-truth reward over the outcome distribution:
            // +1 whenever the post-step position satisfies the goal (or a key
            // is picked up), −1 whenever it lands on lava.
            let mut r = 0.0;
            for &(next_idx, p) in &rows[a] {
                let next = states[next_idx];
                if satisfied(next.pos) {
                    r += p;
                }
                if on_lava(next.pos) {
                    r -= p;
                }
            }
            if action == Action::Pickup && facing_key(s) {
                r += 1.0;
            }
            rewards[a] = r;
        }
        transitions.push(rows);
        gt_reward.push(rewards);
    }

    Ok(TabularModel {
        config: config.clone(),
        layout: layout.clone(),
        states,
        index,
        transitions,
        gt_reward,
        ripple_levels: levels,
        with_ripple,
    })
}

/// Whether standing at `pos` satisfies the layout's goal condition (cell
/// occupancy or door adjacency; key pickup is an action event, not a
/// position).
pub fn goal_satisfied(config: &TaskConfig, layout: &Layout, pos: Pos) -> bool {
    match layout.goal_spec {
        GoalSpec::Cell(goal) => pos == goal,
        GoalSpec::DoorWall(wall) => env::manhattan(pos, config.door_cell(wall)) == 1,
        GoalSpec::KeyColor(_) => false,
    }
}

impl TabularModel {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    /// Index of the abstract state matching a concrete episode state.
    pub fn state_index(&self, state: &GridState) -> Result<usize, PlanError> {
        let ripple_idx = if self.with_ripple {
            let level = state.ripple.unwrap_or(0.0);
            Some(
                ripple_index(&self.ripple_levels, level)
                    .ok_or(PlanError::StateNotCovered)?,
            )
        } else {
            None
        };
        self.index
            .get(&PlannerState { pos: state.agent_pos, dir: state.agent_dir, ripple_idx })
            .copied()
            .ok_or(PlanError::StateNotCovered)
    }

    /// Expected ground-truth reward table.
    pub fn ground_truth_reward(&self, state: usize, action: usize) -> f64 {
        self.gt_reward[state][action]
    }

    /// Observation for an abstract state, for scoring learned rewards. On the
    /// dynamic-obstacles task the observation depends on obstacle positions,
    /// which the abstraction marginalizes away; `obstacle_fill` supplies the
    /// placements to embed.
    pub fn state_observation(&self, state: usize, obstacle_fill: &[Pos]) -> Observation {
        let s = self.states[state];
        let mut cells = self.layout.cells();
        for &p in obstacle_fill {
            cells.insert(p, CellEntity::Obstacle);
        }
        let grid = GridState {
            agent_pos: s.pos,
            agent_dir: s.dir,
            goal_spec: self.layout.goal_spec,
            special_cells: cells,
            carried: None,
            ripple: s.ripple_idx.map(|i| self.ripple_levels[i as usize]),
            step_count: 0,
        };
        build_observation(&self.config, &grid)
    }

    /// Deterministic obstacle placements for learned-reward scoring, empty on
    /// tasks without obstacles.
    pub fn obstacle_fills(&self) -> Vec<Vec<Pos>> {
        if self.config.task != Task::DynamicObstacles {
            return vec![Vec::new()];
        }
        let candidates: Vec<Pos> = self.config.interior_cells();
        let mut rng = crate::seeding::stream_rng(
            crate::seeding::mix(self.config.rng_seed, &[candidates.len() as u64]),
            crate::seeding::Stream::Planner,
            0,
        );
        (0..OBSTACLE_REWARD_SAMPLES)
            .map(|_| {
                let mut picks = Vec::with_capacity(NUM_OBSTACLES);
                while picks.len() < NUM_OBSTACLES {
                    let p = candidates[rng.gen_range(0..candidates.len())];
                    if !picks.contains(&p) {
                        picks.push(p);
                    }
                }
                picks.sort_unstable();
                picks
            })
            .collect()
    }
}

/// Greedy policy extracted from converged values.
#[derive(Debug)]
pub struct TabularPolicy {
    pub actions: Vec<Action>,
    pub values: Vec<f64>,
    pub sweeps: usize,
    /// Sup-norm residual after each sweep.
    pub residuals: Vec<f64>,
}

/// Synchronous value iteration to a sup-norm residual below `tolerance`,
/// with greedy extraction breaking ties toward the lowest action index.
pub fn value_iteration(
    model: &TabularModel,
    reward: impl Fn(usize, usize) -> f64,
    gamma: f64,
    tolerance: f64,
) -> Result<TabularPolicy, PlanError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(PlanError::InvalidGamma { got: gamma });
    }
    let n = model.states.len();
    let mut table = vec![[0.0; NUM_ACTIONS]; n];
    let mut r_max: f64 = 0.0;
    for (s, row) in table.iter_mut().enumerate() {
        for (a, slot) in row.iter_mut().enumerate() {
            let r = reward(s, a);
            *slot = r;
            r_max = r_max.max(r.abs());
        }
    }
    let q_row = |row: &[f64; NUM_ACTIONS],
                 transitions: &[Vec<(usize, f64)>; NUM_ACTIONS],
                 values: &[f64]|
     -> [f64; NUM_ACTIONS] {
        let mut qs = *row;
        for (q, targets) in qs.iter_mut().zip(transitions) {
            for &(t, p) in targets {
                *q += gamma * p * values[t];
            }
        }
        qs
    };
    // Standard contraction bound on the sweeps needed, plus slack for
    // floating-point rounding near the tolerance.
    let sweep_cap = if r_max == 0.0 || gamma == 0.0 {
        2
    } else {
        let bound = (tolerance * (1.0 - gamma) / r_max).ln() / gamma.ln();
        bound.ceil() as usize + 16
    };

    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    loop {
        let mut residual: f64 = 0.0;
        for (s, (row, transitions)) in table.iter().zip(&model.transitions).enumerate() {
            let qs = q_row(row, transitions, &values);
            let best = qs.iter().fold(f64::NEG_INFINITY, |m, &q| m.max(q));
            residual = residual.max((best - values[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut values, &mut next);
        residuals.push(residual);
        if residual < tolerance || residuals.len() >= sweep_cap {
            break;
        }
    }

    let mut actions = Vec::with_capacity(n);
    for (row, transitions) in table.iter().zip(&model.transitions) {
        let qs = q_row(row, transitions, &values);
        let mut best_a = 0;
        for (a, &q) in qs.iter().enumerate() {
            if q > qs[best_a] {
                best_a = a;
            }
        }
        actions.push(Action::from_index(best_a).unwrap());
    }
    Ok(TabularPolicy { actions, values, sweeps: residuals.len(), residuals })
}

/// How a plan scores state-action pairs.
pub enum RewardSource<'a> {
    GroundTruth,
    /// Learned per-step reward on (observation, action); evaluated with the
    /// ripple level in the state on tasks that observe it.
    Learned(&'a dyn Fn(&Observation, Action) -> f64),
}

/// A policy that plans per layout and re-plans when a goal event changes the
/// layout, caching plans across episodes.
pub struct PlanningPolicy<'a> {
    config: TaskConfig,
    source: RewardSource<'a>,
    gamma: f64,
    cache: HashMap<Layout, (TabularModel, TabularPolicy)>,
}

impl<'a> PlanningPolicy<'a> {
    pub fn new(config: TaskConfig, source: RewardSource<'a>, gamma: f64) -> PlanningPolicy<'a> {
        PlanningPolicy { config, source, gamma, cache: HashMap::new() }
    }

    pub fn ground_truth(config: TaskConfig) -> PlanningPolicy<'static> {
        PlanningPolicy::new(config, RewardSource::GroundTruth, DEFAULT_GAMMA)
    }

    /// Number of distinct layouts planned so far.
    pub fn plans_built(&self) -> usize {
        self.cache.len()
    }

    /// Greedy action for the current state, planning on first sight of its
    /// layout. The config used for planning is the one this policy was built
    /// with, so a policy planned for the Train variant acts identically under
    /// Test-variant evaluation — only layout sampling differs.
    pub fn act(&mut self, state: &GridState) -> Result<Action, PlanError> {
        let layout = Layout::of(state);
        if !self.cache.contains_key(&layout) {
            let with_ripple = match self.source {
                RewardSource::GroundTruth => false,
                RewardSource::Learned(_) => self.config.has_extra_obs(),
            };
            let model = enumerate_states(&self.config, &layout, with_ripple)?;
            let policy = match self.source {
                RewardSource::GroundTruth => value_iteration(
                    &model,
                    |s, a| model.ground_truth_reward(s, a),
                    self.gamma,
                    DEFAULT_TOLERANCE,
                )?,
                RewardSource::Learned(f) => {
                    let fills = model.obstacle_fills();
                    let n = model.state_count();
                    let mut table = vec![[0.0; NUM_ACTIONS]; n];
                    for (s, row) in table.iter_mut().enumerate() {
                        for fill in &fills {
                            let obs = model.state_observation(s, fill);
                            for action in Action::ALL {
                                row[action.index()] += f(&obs, action) / fills.len() as f64;
                            }
                        }
                    }
                    value_iteration(&model, |s, a| table[s][a], self.gamma, DEFAULT_TOLERANCE)?
                }
            };
            self.cache.insert(layout.clone(), (model, policy));
        }
        let (model, policy) = &self.cache[&layout];
        let idx = model.state_index(state)?;
        Ok(policy.actions[idx])
    }
}

/// Evaluation summary over fresh episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub episodes: usize,
    pub horizon: u32,
    pub failed: bool,
}

/// Rolls a policy out on the true environment and scores it with ground-truth
/// rewards. Distribution-shift tasks are evaluated on the Test variant
/// regardless of the config's variant; others keep theirs.
pub fn evaluate_policy(
    policy: &mut dyn FnMut(&GridState) -> Result<Action, PlanError>,
    config: &TaskConfig,
    episodes: usize,
    horizon: u32,
    failure_threshold: f64,
    seed: u64,
) -> Result<EvalReport, PlanError> {
    let mut eval_config = config.clone().with_episode_horizon(horizon);
    if eval_config.has_distribution_shift() {
        eval_config = eval_config.with_variant(Variant::Test);
    }
    let mut env = Env::new(eval_config).expect("evaluation config is valid");
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        env.reset(crate::seeding::mix(seed, &[ep as u64]));
        let mut total = 0.0;
        loop {
            let action = policy(env.state())?;
            let out = env.step(action);
            total += out.reward;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = if episodes > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (episodes - 1) as f64
    } else {
        0.0
    };
    Ok(EvalReport {
        mean_return: mean,
        std_return: var.sqrt(),
        episodes,
        horizon,
        failed: mean <= failure_threshold,
    })
}

/// Difference between a reward reading on the on-goal/rippling probe
/// observation and the off-goal/still one. Positive gaps mean the reward
/// tracks the true goal feature rather than the water.
pub fn spurious_probe_gap(
    env: &Env,
    reward: impl Fn(&Observation) -> f64,
) -> Result<f64, env::EnvError> {
    let (on_goal, off_goal) = env.probe_observations()?;
    Ok(reward(&on_goal) - reward(&off_goal))
}
