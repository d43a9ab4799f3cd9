//! Grid-world tasks with planted spurious correlations.
//!
//! Six tasks share one movement system: an agent on a walled square grid
//! turns, steps forward, picks objects up, or stays put. Reaching the task
//! goal pays +1 and the goal immediately respawns nearby (episodes never
//! terminate early, so returns accumulate); standing on lava costs −1 per
//! step. Each task carries a confound that correlates with success in
//! curated data but not causally:
//!
//! - `ExtraObs` appends a water-ripple level to the observation. Ripples jump
//!   to 1 whenever the agent's position changes and halve each still step, so
//!   calm water follows any agent that stops — which well-behaved scripted
//!   data does right after finishing its work.
//! - `PositionBias` places the goal (or goal door) at one favored location
//!   with probability `spurious_probability` in the Train variant, and
//!   uniformly in the Test variant.
//! - `ColorBias` colors the target key yellow (and the distractor non-yellow)
//!   with probability `spurious_probability` in Train, uniformly in Test.
//!
//! Environments are plain values: a config plus mutable episode state and a
//! seeded generator. Identical `(config, seed)` pairs replay identical
//! episodes, including obstacle motion and ripple decay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

/// Smallest supported grid side; below this the wall ring leaves no room.
pub const MIN_GRID_SIZE: usize = 5;
/// Number of discrete actions.
pub const NUM_ACTIONS: usize = 5;
/// Number of object/door colors.
pub const NUM_COLORS: usize = 6;
/// Ripple level set on any step where the agent's position changes.
pub const RIPPLE_ON_MOVE: f64 = 1.0;
/// Multiplicative ripple decay per still step.
pub const RIPPLE_DECAY: f64 = 0.5;
/// Ripple levels below this clamp to exactly zero.
pub const RIPPLE_CLAMP: f64 = 1e-3;
/// Number of roaming obstacles in the dynamic-obstacles task.
pub const NUM_OBSTACLES: usize = 3;

/// Grid coordinate as (row, col), row 0 at the top.
pub type Pos = (usize, usize);

/// The six benchmark tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    Empty,
    DynamicObstacles,
    Lava,
    LavaPosition,
    GoToDoor,
    Fetch,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Empty,
        Task::DynamicObstacles,
        Task::Lava,
        Task::LavaPosition,
        Task::GoToDoor,
        Task::Fetch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Empty => "empty",
            Task::DynamicObstacles => "dynamic_obstacles",
            Task::Lava => "lava",
            Task::LavaPosition => "lava_position",
            Task::GoToDoor => "go_to_door",
            Task::Fetch => "fetch",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    /// Confounds active by default for this task.
    pub fn default_confounds(self) -> BTreeSet<Confound> {
        let list: &[Confound] = match self {
            Task::Empty | Task::DynamicObstacles | Task::Lava => &[Confound::ExtraObs],
            Task::LavaPosition | Task::GoToDoor => &[Confound::PositionBias],
            Task::Fetch => &[Confound::ColorBias],
        };
        list.iter().copied().collect()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train uses the biased goal-configuration distribution; Test is uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Train,
    Test,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Train => "train",
            Variant::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "train" => Some(Variant::Train),
            "test" => Some(Variant::Test),
            _ => None,
        }
    }
}

/// Spurious-correlation mechanisms that can be planted in a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Confound {
    /// Append the water-ripple level to observations.
    ExtraObs,
    /// Bias the goal location toward one favored cell/wall in Train.
    PositionBias,
    /// Bias object colors (yellow target key) in Train.
    ColorBias,
}

impl Confound {
    pub fn as_str(self) -> &'static str {
        match self {
            Confound::ExtraObs => "extra_obs",
            Confound::PositionBias => "position_bias",
            Confound::ColorBias => "color_bias",
        }
    }

    pub fn parse(s: &str) -> Option<Confound> {
        match s {
            "extra_obs" => Some(Confound::ExtraObs),
            "position_bias" => Some(Confound::PositionBias),
            "color_bias" => Some(Confound::ColorBias),
            _ => None,
        }
    }
}

/// Discrete agent actions, in fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Stay,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::TurnLeft,
        Action::TurnRight,
        Action::Forward,
        Action::Pickup,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::TurnLeft => 0,
            Action::TurnRight => 1,
            Action::Forward => 2,
            Action::Pickup => 3,
            Action::Stay => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Facing direction of the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Right,
        Direction::Down,
        Direction::Left,
    ];

    pub fn index(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Right => 1,
            Direction::Down => 2,
            Direction::Left => 3,
        }
    }

    pub fn left(self) -> Direction {
        match self {
            Direction::Up => Direction::Left,
            Direction::Left => Direction::Down,
            Direction::Down => Direction::Right,
            Direction::Right => Direction::Up,
        }
    }

    pub fn right(self) -> Direction {
        self.left().left().left()
    }

    /// Row/col offset of one forward step.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Right => (0, 1),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
        }
    }
}

/// Object and door palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Grey,
}

impl Color {
    pub const ALL: [Color; NUM_COLORS] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Grey,
    ];

    pub fn index(self) -> usize {
        Color::ALL.iter().position(|c| *c == self).unwrap()
    }
}

/// Portable objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Key,
    Ball,
}

/// The four boundary walls, used to address doors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WallSide {
    Top,
    Right,
    Bottom,
    Left,
}

impl WallSide {
    pub const ALL: [WallSide; 4] = [
        WallSide::Top,
        WallSide::Right,
        WallSide::Bottom,
        WallSide::Left,
    ];
}

/// Entities that occupy grid cells beyond the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellEntity {
    Lava,
    Obstacle,
    Door { color: Color, wall: WallSide },
    Object { kind: ObjectKind, color: Color },
}

/// What currently counts as "the goal".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalSpec {
    /// Reach this cell (Empty, DynamicObstacles, Lava, LavaPosition).
    Cell(Pos),
    /// Stand adjacent to the door in this wall (GoToDoor).
    DoorWall(WallSide),
    /// Pick up the key; it currently has this color (Fetch).
    KeyColor(Color),
}

/// Full task configuration. Construct with [`TaskConfig::new`] and adjust via
/// the `with_*` builders; [`TaskConfig::validate`] is called by [`Env::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    pub variant: Variant,
    pub grid_size: usize,
    pub confounds: BTreeSet<Confound>,
    /// Probability of the spurious goal configuration in the Train variant.
    pub spurious_probability: f64,
    /// Steps before an episode reports `done`.
    pub episode_horizon: u32,
    /// Goals respawn within this Manhattan radius of the agent (falls back to
    /// the whole grid when no cell qualifies). Small radii keep multi-goal
    /// returns high enough that skilled rollouts clear the low-return band.
    pub respawn_radius: usize,
    /// Base seed folded into every reset seed.
    pub rng_seed: u64,
}

impl TaskConfig {
    pub fn new(task: Task) -> TaskConfig {
        TaskConfig {
            task,
            variant: Variant::Train,
            grid_size: 8,
            confounds: task.default_confounds(),
            spurious_probability: 0.9,
            episode_horizon: 100,
            respawn_radius: 2,
            rng_seed: 0,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_grid_size(mut self, grid_size: usize) -> Self {
        self.grid_size = grid_size;
        self
    }

    pub fn with_confounds<I: IntoIterator<Item = Confound>>(mut self, confounds: I) -> Self {
        self.confounds = confounds.into_iter().collect();
        self
    }

    pub fn with_spurious_probability(mut self, p: f64) -> Self {
        self.spurious_probability = p;
        self
    }

    pub fn with_episode_horizon(mut self, horizon: u32) -> Self {
        self.episode_horizon = horizon;
        self
    }

    pub fn with_respawn_radius(mut self, radius: usize) -> Self {
        self.respawn_radius = radius;
        self
    }

    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.grid_size < MIN_GRID_SIZE {
            return Err(EnvError::GridTooSmall { got: self.grid_size });
        }
        if !(0.0..=1.0).contains(&self.spurious_probability) {
            return Err(EnvError::InvalidProbability {
                got: self.spurious_probability,
            });
        }
        if self.episode_horizon == 0 {
            return Err(EnvError::ZeroHorizon);
        }
        for &c in &self.confounds {
            let ok = match c {
                Confound::ExtraObs => true,
                Confound::PositionBias => self.task != Task::Fetch,
                Confound::ColorBias => self.task == Task::Fetch,
            };
            if !ok {
                return Err(EnvError::UnsupportedConfound {
                    task: self.task,
                    confound: c,
                });
            }
        }
        Ok(())
    }

    pub fn has_extra_obs(&self) -> bool {
        self.confounds.contains(&Confound::ExtraObs)
    }

    /// Whether Train and Test differ for this config.
    pub fn has_distribution_shift(&self) -> bool {
        self.confounds.contains(&Confound::PositionBias)
            || self.confounds.contains(&Confound::ColorBias)
    }

    /// Whether the biased goal-configuration branch is active.
    fn bias_active(&self) -> bool {
        self.variant == Variant::Train && self.has_distribution_shift()
    }

    /// Interior (non-wall) cells in row-major order.
    pub fn interior_cells(&self) -> Vec<Pos> {
        let g = self.grid_size;
        let mut cells = Vec::with_capacity((g - 2) * (g - 2));
        for r in 1..g - 1 {
            for c in 1..g - 1 {
                cells.push((r, c));
            }
        }
        cells
    }

    /// Static lava cells: the middle interior row with one gap column.
    pub fn lava_cells(&self) -> BTreeSet<Pos> {
        match self.task {
            Task::Lava | Task::LavaPosition => {
                let g = self.grid_size;
                let row = g / 2;
                let gap = g / 2;
                (1..g - 1).filter(|&c| c != gap).map(|c| (row, c)).collect()
            }
            _ => BTreeSet::new(),
        }
    }

    /// The favored goal cell under `PositionBias`: just below the lava gap
    /// (or the same cell on lava-free grids).
    pub fn spurious_goal_cell(&self) -> Pos {
        let g = self.grid_size;
        ((g / 2 + 1).min(g - 2), g / 2)
    }

    /// Door cells, one per wall at its midpoint.
    pub fn door_cells(&self) -> [(WallSide, Pos); 4] {
        let g = self.grid_size;
        let m = g / 2;
        [
            (WallSide::Top, (0, m)),
            (WallSide::Right, (m, g - 1)),
            (WallSide::Bottom, (g - 1, m)),
            (WallSide::Left, (m, 0)),
        ]
    }

    pub fn door_cell(&self, wall: WallSide) -> Pos {
        self.door_cells()
            .iter()
            .find(|(w, _)| *w == wall)
            .map(|(_, p)| *p)
            .unwrap()
    }

    /// Cells a goal may occupy (interior minus lava).
    pub fn goal_eligible_cells(&self) -> Vec<Pos> {
        let lava = self.lava_cells();
        self.interior_cells()
            .into_iter()
            .filter(|p| !lava.contains(p))
            .collect()
    }

    /// Observation vector length for this config.
    pub fn observation_dim(&self) -> usize {
        let blocks = match self.task {
            Task::Empty => 1,
            Task::DynamicObstacles => 1 + NUM_OBSTACLES,
            Task::Lava | Task::LavaPosition => 1 + self.lava_cells().len(),
            Task::GoToDoor => 1 + 4,
            Task::Fetch => 2,
        };
        2 + 4 + blocks * BLOCK_DIM + usize::from(self.has_extra_obs())
    }
}

/// One cell-description block inside an observation: entity-type one-hot,
/// normalized position, color one-hot, the cell's offset from the agent
/// (normalized to [0, 1] with 0.5 meaning "same coordinate"), and a bit set
/// when the cell lies directly ahead of the agent.
pub const BLOCK_DIM: usize = 6 + 2 + NUM_COLORS + 3;

const TYPE_GOAL: usize = 0;
const TYPE_LAVA: usize = 1;
const TYPE_OBSTACLE: usize = 2;
const TYPE_DOOR: usize = 3;
const TYPE_KEY: usize = 4;
const TYPE_BALL: usize = 5;

/// Flat observation vector, all entries in [0, 1].
pub type Observation = Vec<f64>;

/// Complete dynamic state of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub agent_pos: Pos,
    pub agent_dir: Direction,
    pub goal_spec: GoalSpec,
    /// Serialized as a pair list: JSON object keys must be strings, so a
    /// position-keyed map cannot round-trip as a map.
    #[serde(with = "cell_pairs")]
    pub special_cells: BTreeMap<Pos, CellEntity>,
    pub carried: Option<(ObjectKind, Color)>,
    /// Water-ripple level; present exactly when `ExtraObs` is configured.
    pub ripple: Option<f64>,
    pub step_count: u32,
}

mod cell_pairs {
    use super::{CellEntity, Pos};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<Pos, CellEntity>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<Pos, CellEntity>, D::Error> {
        Ok(Vec::<(Pos, CellEntity)>::deserialize(de)?.into_iter().collect())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub observation: Observation,
    pub done: bool,
}

/// Errors from configuration or misuse of an environment.
#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("grid size must be at least {MIN_GRID_SIZE}, got {got}")]
    GridTooSmall { got: usize },
    #[error("spurious probability must lie in [0, 1], got {got}")]
    InvalidProbability { got: f64 },
    #[error("episode horizon must be positive")]
    ZeroHorizon,
    #[error("confound {confound:?} is not supported on task {task:?}")]
    UnsupportedConfound { task: Task, confound: Confound },
    #[error("spurious-feature probe requires the ExtraObs confound")]
    ProbeWithoutExtraObs,
}

/// A single-worker environment instance: config, episode state, and the
/// seeded generator that drives layout sampling, respawns, and obstacles.
#[derive(Debug, Clone)]
pub struct Env {
    config: TaskConfig,
    state: GridState,
    rng: ChaCha8Rng,
}

impl Env {
    /// Validates the config and starts an episode with reset seed 0.
    pub fn new(config: TaskConfig) -> Result<Env, EnvError> {
        config.validate()?;
        let mut rng = reset_rng(&config, 0);
        let state = sample_initial_state(&config, &mut rng);
        Ok(Env { config, state, rng })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    /// Starts a fresh episode. Identical `(config, seed)` yield identical
    /// layouts, and the subsequent trajectory is a pure function of actions.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = reset_rng(&self.config, seed);
        self.state = sample_initial_state(&self.config, &mut self.rng);
        self.observation()
    }

    /// Advances one step. Rewards are +1 on goal satisfaction (the goal then
    /// respawns), −1 per step spent on lava, 0 otherwise. Illegal moves are
    /// no-ops that still consume the step.
    pub fn step(&mut self, action: Action) -> StepOutcome {
        let prev_pos = self.state.agent_pos;
        let mut reward = 0.0;

        match action {
            Action::TurnLeft => self.state.agent_dir = self.state.agent_dir.left(),
            Action::TurnRight => self.state.agent_dir = self.state.agent_dir.right(),
            Action::Forward => {
                let target = forward_cell(self.state.agent_pos, self.state.agent_dir);
                if self.cell_enterable(target) {
                    self.state.agent_pos = target;
                }
            }
            Action::Pickup => {
                let target = forward_cell(self.state.agent_pos, self.state.agent_dir);
                if let Some(CellEntity::Object { kind, color }) =
                    self.state.special_cells.get(&target).copied()
                {
                    self.state.special_cells.remove(&target);
                    self.state.carried = Some((kind, color));
                    if kind == ObjectKind::Key {
                        reward += 1.0;
                        self.respawn_key(target);
                    } else {
                        self.respawn_ball(target);
                    }
                }
            }
            Action::Stay => {}
        }

        // Cell-goal satisfaction: the only way to stand on the goal cell is to
        // have just landed on it, because respawns exclude the agent's cell.
        if let GoalSpec::Cell(goal) = self.state.goal_spec {
            if self.state.agent_pos == goal {
                reward += 1.0;
                self.respawn_goal_cell();
            }
        }
        // Door-goal satisfaction: standing next to the goal door.
        if let GoalSpec::DoorWall(wall) = self.state.goal_spec {
            let door = self.config.door_cell(wall);
            if manhattan(self.state.agent_pos, door) == 1 {
                reward += 1.0;
                self.respawn_goal_door(wall);
            }
        }

        if matches!(
            self.state.special_cells.get(&self.state.agent_pos),
            Some(CellEntity::Lava)
        ) {
            reward -= 1.0;
        }

        if self.config.task == Task::DynamicObstacles {
            self.resample_obstacles();
        }

        if let Some(r) = self.state.ripple {
            self.state.ripple = Some(if self.state.agent_pos != prev_pos {
                RIPPLE_ON_MOVE
            } else {
                let decayed = r * RIPPLE_DECAY;
                if decayed < RIPPLE_CLAMP {
                    0.0
                } else {
                    decayed
                }
            });
        }

        self.state.step_count += 1;
        StepOutcome {
            reward,
            observation: self.observation(),
            done: self.state.step_count >= self.config.episode_horizon,
        }
    }

    /// Observation of the current state.
    pub fn observation(&self) -> Observation {
        build_observation(&self.config, &self.state)
    }

    /// A pair of crafted observations for the spurious-feature probe:
    /// (agent on the goal with rippling water, agent elsewhere with still
    /// water). Only meaningful under `ExtraObs`.
    pub fn probe_observations(&self) -> Result<(Observation, Observation), EnvError> {
        if !self.config.has_extra_obs() {
            return Err(EnvError::ProbeWithoutExtraObs);
        }
        let goal = match self.state.goal_spec {
            GoalSpec::Cell(p) => p,
            // Non-cell goals never combine with ExtraObs by default; fall back
            // to the favored cell so the probe stays well-defined.
            _ => self.config.spurious_goal_cell(),
        };
        let mut on_goal = self.state.clone();
        on_goal.agent_pos = goal;
        on_goal.ripple = Some(RIPPLE_ON_MOVE);
        let off_cell = self
            .config
            .goal_eligible_cells()
            .into_iter()
            .find(|&p| p != goal && !self.state.special_cells.contains_key(&p))
            .expect("grid always has a free non-goal cell");
        let mut off_goal = self.state.clone();
        off_goal.agent_pos = off_cell;
        off_goal.ripple = Some(0.0);
        Ok((
            build_observation(&self.config, &on_goal),
            build_observation(&self.config, &off_goal),
        ))
    }

    /// ASCII rendering of the current state, one row per line.
    pub fn render(&self) -> String {
        let g = self.config.grid_size;
        let mut out = String::with_capacity((g + 1) * g);
        for r in 0..g {
            for c in 0..g {
                let pos = (r, c);
                let ch = if pos == self.state.agent_pos {
                    match self.state.agent_dir {
                        Direction::Up => '^',
                        Direction::Right => '>',
                        Direction::Down => 'v',
                        Direction::Left => '<',
                    }
                } else if let Some(entity) = self.state.special_cells.get(&pos) {
                    match entity {
                        CellEntity::Lava => '~',
                        CellEntity::Obstacle => 'O',
                        CellEntity::Door { .. } => 'D',
                        CellEntity::Object { kind: ObjectKind::Key, .. } => 'K',
                        CellEntity::Object { kind: ObjectKind::Ball, .. } => 'b',
                    }
                } else if self.state.goal_spec == GoalSpec::Cell(pos) {
                    'G'
                } else if r == 0 || c == 0 || r == g - 1 || c == g - 1 {
                    '#'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    fn cell_enterable(&self, pos: Pos) -> bool {
        let g = self.config.grid_size;
        if pos.0 == 0 || pos.1 == 0 || pos.0 >= g - 1 || pos.1 >= g - 1 {
            return false;
        }
        match self.state.special_cells.get(&pos) {
            None | Some(CellEntity::Lava) => true,
            Some(_) => false,
        }
    }

    /// Cells within the respawn radius of the agent, excluding the agent's own
    /// cell and any listed exclusions; falls back to the full eligible set.
    fn respawn_candidates(&self, eligible: &[Pos], exclude: &[Pos]) -> Vec<Pos> {
        let agent = self.state.agent_pos;
        let near: Vec<Pos> = eligible
            .iter()
            .copied()
            .filter(|&p| {
                p != agent
                    && !exclude.contains(&p)
                    && manhattan(p, agent) <= self.config.respawn_radius
            })
            .collect();
        if !near.is_empty() {
            return near;
        }
        eligible
            .iter()
            .copied()
            .filter(|&p| p != agent && !exclude.contains(&p))
            .collect()
    }

    fn respawn_goal_cell(&mut self) {
        let eligible = self.config.goal_eligible_cells();
        let spurious = self.config.spurious_goal_cell();
        if self.config.bias_active()
            && spurious != self.state.agent_pos
            && self.rng.gen::<f64>() < self.config.spurious_probability
        {
            self.state.goal_spec = GoalSpec::Cell(spurious);
            return;
        }
        let candidates = self.respawn_candidates(&eligible, &[]);
        let next = *candidates
            .choose(&mut self.rng)
            .expect("goal respawn always has a candidate cell");
        self.state.goal_spec = GoalSpec::Cell(next);
    }

    fn respawn_goal_door(&mut self, current: WallSide) {
        let others: Vec<WallSide> = WallSide::ALL
            .iter()
            .copied()
            .filter(|w| *w != current)
            .collect();
        let next = if self.config.bias_active()
            && current != WallSide::Top
            && self.rng.gen::<f64>() < self.config.spurious_probability
        {
            WallSide::Top
        } else {
            *others.choose(&mut self.rng).unwrap()
        };
        self.state.goal_spec = GoalSpec::DoorWall(next);
    }

    fn sample_key_color(&mut self) -> Color {
        sample_key_color(&self.config, &mut self.rng)
    }

    fn sample_ball_color(&mut self) -> Color {
        sample_ball_color(&self.config, &mut self.rng)
    }

    fn object_free_cells(&self, vacated: Pos) -> Vec<Pos> {
        self.config
            .interior_cells()
            .into_iter()
            .filter(|p| !self.state.special_cells.contains_key(p) && *p != vacated)
            .collect()
    }

    fn respawn_key(&mut self, vacated: Pos) {
        let eligible = self.object_free_cells(vacated);
        let candidates = self.respawn_candidates(&eligible, &[]);
        let pos = *candidates.choose(&mut self.rng).unwrap();
        let color = self.sample_key_color();
        self.state
            .special_cells
            .insert(pos, CellEntity::Object { kind: ObjectKind::Key, color });
        self.state.goal_spec = GoalSpec::KeyColor(color);
    }

    fn respawn_ball(&mut self, vacated: Pos) {
        let eligible = self.object_free_cells(vacated);
        let candidates = self.respawn_candidates(&eligible, &[]);
        let pos = *candidates.choose(&mut self.rng).unwrap();
        let color = self.sample_ball_color();
        self.state
            .special_cells
            .insert(pos, CellEntity::Object { kind: ObjectKind::Ball, color });
    }

    fn resample_obstacles(&mut self) {
        self.state
            .special_cells
            .retain(|_, e| !matches!(e, CellEntity::Obstacle));
        let goal = match self.state.goal_spec {
            GoalSpec::Cell(p) => Some(p),
            _ => None,
        };
        let candidates: Vec<Pos> = self
            .config
            .interior_cells()
            .into_iter()
            .filter(|&p| p != self.state.agent_pos && Some(p) != goal)
            .collect();
        for &pos in candidates
            .choose_multiple(&mut self.rng, NUM_OBSTACLES)
            .collect::<Vec<_>>()
        {
            self.state.special_cells.insert(pos, CellEntity::Obstacle);
        }
    }
}

fn reset_rng(config: &TaskConfig, seed: u64) -> ChaCha8Rng {
    seeding::stream_rng(
        seeding::mix(config.rng_seed, &[seed]),
        seeding::Stream::EnvReset,
        0,
    )
}

/// Cell one step ahead of `pos` facing `dir`. Callers must bounds-check.
pub fn forward_cell(pos: Pos, dir: Direction) -> Pos {
    let (dr, dc) = dir.delta();
    (
        (pos.0 as isize + dr) as usize,
        (pos.1 as isize + dc) as usize,
    )
}

/// Manhattan distance between two cells.
pub fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

fn sample_key_color(config: &TaskConfig, rng: &mut ChaCha8Rng) -> Color {
    if config.bias_active()
        && config.confounds.contains(&Confound::ColorBias)
        && rng.gen::<f64>() < config.spurious_probability
    {
        Color::Yellow
    } else {
        *Color::ALL.choose(rng).unwrap()
    }
}

fn sample_ball_color(config: &TaskConfig, rng: &mut ChaCha8Rng) -> Color {
    if config.bias_active()
        && config.confounds.contains(&Confound::ColorBias)
        && rng.gen::<f64>() < config.spurious_probability
    {
        let non_yellow: Vec<Color> = Color::ALL
            .iter()
            .copied()
            .filter(|c| *c != Color::Yellow)
            .collect();
        *non_yellow.choose(rng).unwrap()
    } else {
        *Color::ALL.choose(rng).unwrap()
    }
}

/// Samples a fresh episode layout. Goal configuration is drawn first so its
/// marginal matches the configured bias exactly; the agent spawn then avoids
/// occupied and goal cells.
fn sample_initial_state(config: &TaskConfig, rng: &mut ChaCha8Rng) -> GridState {
    let mut special_cells: BTreeMap<Pos, CellEntity> = BTreeMap::new();
    for p in config.lava_cells() {
        special_cells.insert(p, CellEntity::Lava);
    }

    let goal_spec = match config.task {
        Task::Empty | Task::DynamicObstacles | Task::Lava | Task::LavaPosition => {
            let eligible = config.goal_eligible_cells();
            let spurious = config.spurious_goal_cell();
            let goal = if config.bias_active()
                && rng.gen::<f64>() < config.spurious_probability
            {
                spurious
            } else {
                *eligible.choose(rng).unwrap()
            };
            GoalSpec::Cell(goal)
        }
        Task::GoToDoor => {
            let mut colors = Color::ALL.to_vec();
            colors.shuffle(rng);
            for ((wall, pos), color) in config.door_cells().iter().zip(colors) {
                special_cells.insert(*pos, CellEntity::Door { color, wall: *wall });
            }
            let wall = if config.bias_active()
                && rng.gen::<f64>() < config.spurious_probability
            {
                WallSide::Top
            } else {
                *WallSide::ALL.choose(rng).unwrap()
            };
            GoalSpec::DoorWall(wall)
        }
        Task::Fetch => {
            let interior = config.interior_cells();
            let key_color = sample_key_color(config, rng);
            let key_pos = *interior.choose(rng).unwrap();
            special_cells.insert(
                key_pos,
                CellEntity::Object { kind: ObjectKind::Key, color: key_color },
            );
            let ball_color = sample_ball_color(config, rng);
            let remaining: Vec<Pos> = interior.into_iter().filter(|&p| p != key_pos).collect();
            let ball_pos = *remaining.choose(rng).unwrap();
            special_cells.insert(
                ball_pos,
                CellEntity::Object { kind: ObjectKind::Ball, color: ball_color },
            );
            GoalSpec::KeyColor(key_color)
        }
    };

    let goal_cell = match goal_spec {
        GoalSpec::Cell(p) => Some(p),
        _ => None,
    };
    let spawn_cells: Vec<Pos> = config
        .interior_cells()
        .into_iter()
        .filter(|p| !special_cells.contains_key(p) && Some(*p) != goal_cell)
        .collect();
    let agent_pos = *spawn_cells.choose(rng).unwrap();
    let agent_dir = *Direction::ALL.choose(rng).unwrap();

    let mut state = GridState {
        agent_pos,
        agent_dir,
        goal_spec,
        special_cells,
        carried: None,
        // The agent's arrival disturbs the water, so episodes start rippling.
        ripple: config.has_extra_obs().then_some(RIPPLE_ON_MOVE),
        step_count: 0,
    };

    if config.task == Task::DynamicObstacles {
        let candidates: Vec<Pos> = config
            .interior_cells()
            .into_iter()
            .filter(|&p| p != state.agent_pos && Some(p) != goal_cell)
            .collect();
        for &pos in candidates
            .choose_multiple(rng, NUM_OBSTACLES)
            .collect::<Vec<_>>()
        {
            state.special_cells.insert(pos, CellEntity::Obstacle);
        }
    }

    state
}

fn push_block(
    v: &mut Vec<f64>,
    g: usize,
    type_idx: usize,
    pos: Pos,
    color: Option<Color>,
    agent: Pos,
    dir: Direction,
) {
    let scale = (g - 1) as f64;
    for i in 0..6 {
        v.push(if i == type_idx { 1.0 } else { 0.0 });
    }
    v.push(pos.0 as f64 / scale);
    v.push(pos.1 as f64 / scale);
    for i in 0..NUM_COLORS {
        v.push(match color {
            Some(c) if c.index() == i => 1.0,
            _ => 0.0,
        });
    }
    // Agent-relative offset and an adjacency bit, the cues a spatial encoder
    // would extract; offsets are mapped from [-1, 1] to [0, 1] so the
    // observation range stays uniform.
    v.push(((pos.0 as f64 - agent.0 as f64) / scale + 1.0) / 2.0);
    v.push(((pos.1 as f64 - agent.1 as f64) / scale + 1.0) / 2.0);
    v.push(if forward_cell(agent, dir) == pos { 1.0 } else { 0.0 });
}

/// Builds the flat observation for a state under a config. Layout: agent
/// position (2), direction one-hot (4), a fixed-order block per salient cell,
/// then the ripple level when `ExtraObs` is active.
pub fn build_observation(config: &TaskConfig, state: &GridState) -> Observation {
    let g = config.grid_size;
    let scale = (g - 1) as f64;
    let mut v = Vec::with_capacity(config.observation_dim());
    v.push(state.agent_pos.0 as f64 / scale);
    v.push(state.agent_pos.1 as f64 / scale);
    for i in 0..4 {
        v.push(if i == state.agent_dir.index() { 1.0 } else { 0.0 });
    }

    match config.task {
        Task::Empty | Task::DynamicObstacles | Task::Lava | Task::LavaPosition => {
            let goal = match state.goal_spec {
                GoalSpec::Cell(p) => p,
                _ => unreachable!("cell-goal task carries a cell goal"),
            };
            push_block(&mut v, g, TYPE_GOAL, goal, None, state.agent_pos, state.agent_dir);
            if config.task == Task::DynamicObstacles {
                let mut obstacles: Vec<Pos> = state
                    .special_cells
                    .iter()
                    .filter(|(_, e)| matches!(e, CellEntity::Obstacle))
                    .map(|(p, _)| *p)
                    .collect();
                obstacles.sort_unstable();
                for p in obstacles {
                    push_block(&mut v, g, TYPE_OBSTACLE, p, None, state.agent_pos, state.agent_dir);
                }
            }
            if matches!(config.task, Task::Lava | Task::LavaPosition) {
                for p in config.lava_cells() {
                    push_block(&mut v, g, TYPE_LAVA, p, None, state.agent_pos, state.agent_dir);
                }
            }
        }
        Task::GoToDoor => {
            let goal_wall = match state.goal_spec {
                GoalSpec::DoorWall(w) => w,
                _ => unreachable!("door task carries a door goal"),
            };
            let goal_pos = config.door_cell(goal_wall);
            let goal_color = match state.special_cells.get(&goal_pos) {
                Some(CellEntity::Door { color, .. }) => Some(*color),
                _ => None,
            };
            push_block(&mut v, g, TYPE_GOAL, goal_pos, goal_color, state.agent_pos, state.agent_dir);
            for (wall, pos) in config.door_cells() {
                let color = match state.special_cells.get(&pos) {
                    Some(CellEntity::Door { color, .. }) => Some(*color),
                    _ => None,
                };
                debug_assert!(color.is_some(), "door missing at {wall:?}");
                push_block(&mut v, g, TYPE_DOOR, pos, color, state.agent_pos, state.agent_dir);
            }
        }
        Task::Fetch => {
            let mut key_block = None;
            let mut ball_block = None;
            for (pos, entity) in &state.special_cells {
                if let CellEntity::Object { kind, color } = entity {
                    match kind {
                        ObjectKind::Key => key_block = Some((*pos, *color)),
                        ObjectKind::Ball => ball_block = Some((*pos, *color)),
                    }
                }
            }
            let (kp, kc) = key_block.expect("fetch layout always holds a key");
            let (bp, bc) = ball_block.expect("fetch layout always holds a ball");
            push_block(&mut v, g, TYPE_KEY, kp, Some(kc), state.agent_pos, state.agent_dir);
            push_block(&mut v, g, TYPE_BALL, bp, Some(bc), state.agent_pos, state.agent_dir);
        }
    }

    if let Some(r) = state.ripple {
        v.push(r);
    }
    debug_assert_eq!(v.len(), config.observation_dim());
    v
}

/// Reconstructs the reward of the transition `before → after` from state
/// evidence alone: goal respawns mark +1 events (respawns never reproduce the
/// previous goal configuration) and standing on lava marks −1.
pub fn reward_from_transition(config: &TaskConfig, before: &GridState, after: &GridState) -> f64 {
    let mut reward = 0.0;
    let satisfied = match (&before.goal_spec, &after.goal_spec) {
        (GoalSpec::Cell(a), GoalSpec::Cell(b)) => a != b,
        (GoalSpec::DoorWall(a), GoalSpec::DoorWall(b)) => a != b,
        (GoalSpec::KeyColor(_), GoalSpec::KeyColor(_)) => {
            let key_pos = |s: &GridState| {
                s.special_cells.iter().find_map(|(p, e)| match e {
                    CellEntity::Object { kind: ObjectKind::Key, .. } => Some(*p),
                    _ => None,
                })
            };
            key_pos(before) != key_pos(after)
        }
        _ => false,
    };
    if satisfied {
        reward += 1.0;
    }
    if config.lava_cells().contains(&after.agent_pos) {
        reward -= 1.0;
    }
    reward
}
