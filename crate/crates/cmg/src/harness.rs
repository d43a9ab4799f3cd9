//! End-to-end experiment driver.
//!
//! One run generates a rollout dataset, buys preference labels from the
//! oracle under a hard query budget, trains the Bayesian reward net, plans
//! against the learned reward, and evaluates on the ground truth. The
//! ranking algorithm bootstraps with random pairs, then spends the
//! remaining budget on model-assisted chain insertions spread evenly over
//! the query epochs; the pairwise baselines spend it on single active
//! queries instead, and the plain baseline buys everything up front.
//! Every run streams a deterministic event log and ends with a budget
//! audit.

use std::collections::BTreeSet;
use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acquisition::{
    pairwise_infogain_score, random_select, select_next, volume_removal_score,
    AcquisitionError,
};
use crate::chain::{ChainError, PreferenceChain};
use crate::config::{Ablation, Algorithm, BudgetPlan, ExperimentConfig};
use crate::env::{Action, Env, EnvError, Observation, Task, TaskConfig};
use crate::eventlog::{Event, EventLog, LogError, RunReplay};
use crate::graph::{build_graph, ChainCountMethod, PreferenceGraph};
use crate::oracle::Oracle;
use crate::planner::{
    evaluate_policy, spurious_probe_gap, EvalReport, PlanError, PlanningPolicy, RewardSource,
    DEFAULT_GAMMA,
};
use crate::reward::{
    step_input, BayesianRewardNet, FeatureTable, PosteriorPredictor, PreferencePair,
    Provenance, RewardError, Trainer, DEFAULT_PRIOR_SIGMA,
};
use crate::rollouts::{
    generate_dataset, sample_initial_pairs, DatasetError, RolloutDataset, ScriptedPolicy,
};
use crate::seeding::{mix, stream_rng, stream_seed, Stream};
use crate::stats::{mean, sample_std, welch_p_value};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset generation failed: {0}")]
    Dataset(#[from] DatasetError),
    #[error("reward model failed: {0}")]
    Reward(#[from] RewardError),
    #[error("chain insertion failed: {0}")]
    Chain(#[from] ChainError),
    #[error("acquisition failed: {0}")]
    Acquisition(#[from] AcquisitionError),
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("environment failed: {0}")]
    Env(#[from] EnvError),
    #[error("event log failed: {0}")]
    Log(#[from] LogError),
    #[error("artifact I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("budget audit failed: used {used} of {budget}")]
    BudgetExceeded { used: u64, budget: u64 },
}

/// Dataset-graph connectivity numbers attached to every run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphMetrics {
    pub nodes: usize,
    pub edges: usize,
    pub clustering: f64,
    pub efficiency: f64,
    pub largest_component: usize,
    pub chains: u64,
    pub cyclic: bool,
}

impl GraphMetrics {
    pub fn of(graph: &PreferenceGraph) -> GraphMetrics {
        let count = graph.count_chains(ChainCountMethod::ReachablePairs);
        GraphMetrics {
            nodes: graph.node_count(),
            edges: graph.edge_count(),
            clustering: graph.clustering_coefficient(),
            efficiency: graph.global_efficiency(),
            largest_component: graph.largest_connected_component().node_count(),
            chains: count.count,
            cyclic: count.cyclic,
        }
    }
}

/// Outcome of a single seeded run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub task: Task,
    pub algorithm: Algorithm,
    pub ablations: BTreeSet<Ablation>,
    pub seed: u64,
    pub eval: EvalReport,
    pub query_usage: u64,
    /// Learned-reward response to the true goal feature vs. the decoy
    /// water feature; only tasks with the extra observation report one.
    pub probe_gap: Option<f64>,
    pub loss_trace: Vec<f64>,
    /// Per-epoch evaluation returns, when trace episodes are configured.
    pub return_trace: Vec<(u32, f64)>,
    pub graph: GraphMetrics,
    /// Full training set at the end of the run, for graph analysis.
    pub pairs: Vec<PreferencePair>,
}

/// How an algorithm spends its per-epoch query allowance.
enum QueryMode {
    Passive,
    Chain,
    Pairwise(PairScorer),
}

#[derive(Clone, Copy)]
enum PairScorer {
    InfoGain,
    VolumeRemoval,
}

fn query_mode(algorithm: Algorithm, ablations: &BTreeSet<Ablation>) -> QueryMode {
    match algorithm {
        Algorithm::Baseline => QueryMode::Passive,
        Algorithm::Impec => {
            if ablations.contains(&Ablation::NoRanking) {
                QueryMode::Pairwise(PairScorer::InfoGain)
            } else {
                QueryMode::Chain
            }
        }
        Algorithm::PairwiseInfoGain => QueryMode::Pairwise(PairScorer::InfoGain),
        Algorithm::VolumeRemoval => QueryMode::Pairwise(PairScorer::VolumeRemoval),
    }
}

/// Ablations that actually change the named algorithm; the baseline has no
/// active pathway to ablate.
fn effective_ablations(
    algorithm: Algorithm,
    ablations: &BTreeSet<Ablation>,
) -> BTreeSet<Ablation> {
    match algorithm {
        Algorithm::Baseline => BTreeSet::new(),
        _ => ablations.clone(),
    }
}

/// Even split of the sort budget over the query epochs, floor division with
/// the remainder spent earliest.
fn sort_allowances(sort_budget: u64, query_epochs: u32) -> Vec<u64> {
    if query_epochs == 0 {
        return Vec::new();
    }
    let q = sort_budget / query_epochs as u64;
    let r = (sort_budget % query_epochs as u64) as usize;
    (0..query_epochs as usize).map(|i| q + u64::from(i < r)).collect()
}

/// Training pairs with unordered-pair dedup; every accepted pair is logged.
struct PairStore {
    pairs: Vec<PreferencePair>,
    seen: HashSet<(u64, u64)>,
}

impl PairStore {
    fn new() -> PairStore {
        PairStore { pairs: Vec::new(), seen: HashSet::new() }
    }

    fn add(
        &mut self,
        pair: PreferencePair,
        log: &mut EventLog<impl Write>,
    ) -> Result<bool, LogError> {
        let key = (pair.first.min(pair.second), pair.first.max(pair.second));
        if !self.seen.insert(key) {
            return Ok(false);
        }
        log.record(&Event::PairAdded {
            first: pair.first,
            second: pair.second,
            label: pair.label,
            provenance: pair.provenance,
        })?;
        self.pairs.push(pair);
        Ok(true)
    }
}

struct Driver<'c, W: Write> {
    config: &'c ExperimentConfig,
    task: Task,
    task_config: TaskConfig,
    plan: BudgetPlan,
    algorithm: Algorithm,
    ablations: BTreeSet<Ablation>,
    seed: u64,
    dataset: RolloutDataset,
    features: FeatureTable,
    trainer: Trainer,
    oracle: Oracle,
    oracle_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    acq_rng: ChaCha8Rng,
    store: PairStore,
    chain: PreferenceChain,
    /// Oracle counter right after the bootstrap pairs.
    phase_start: u64,
    log: &'c mut EventLog<W>,
}

/// Runs one (task, algorithm, seed) cell end to end, streaming its event
/// log. The returned result carries everything the summary tables need.
pub fn run_experiment<W: Write>(
    config: &ExperimentConfig,
    task: Task,
    algorithm: Algorithm,
    seed: u64,
    log: &mut EventLog<W>,
) -> Result<RunResult, HarnessError> {
    let mut driver = Driver::start(config, task, algorithm, seed, log)?;
    driver.bootstrap()?;
    let allowances = sort_allowances(driver.plan.sort_budget, config.query_stop_epoch);
    let mode = query_mode(algorithm, &driver.ablations);
    let mut allowed_cum = 0u64;
    let mut loss_trace = Vec::with_capacity(config.epochs as usize);
    let mut return_trace = Vec::new();

    for epoch in 1..=config.epochs {
        let loss = driver.train_epoch(epoch)?;
        loss_trace.push(loss);

        if epoch <= config.query_stop_epoch {
            allowed_cum += allowances[(epoch - 1) as usize];
            match mode {
                QueryMode::Passive => {}
                QueryMode::Chain => driver.chain_queries(epoch, allowed_cum)?,
                QueryMode::Pairwise(scorer) => driver.pairwise_queries(allowed_cum, scorer)?,
            }
        }

        if config.trace_episodes > 0 {
            let mean_return = driver.trace_eval(epoch)?;
            return_trace.push((epoch, mean_return));
        }
    }

    driver.finish(loss_trace, return_trace)
}

impl<'c, W: Write> Driver<'c, W> {
    fn start(
        config: &'c ExperimentConfig,
        task: Task,
        algorithm: Algorithm,
        seed: u64,
        log: &'c mut EventLog<W>,
    ) -> Result<Driver<'c, W>, HarnessError> {
        let plan = config.budget_for(task);
        let task_config = config.task_config(task);
        let ablations = effective_ablations(algorithm, &config.ablations);
        log.record(&Event::RunStarted {
            task: task.as_str().to_string(),
            variant: task_config.variant.as_str().to_string(),
            algorithm: algorithm.as_str().to_string(),
            ablations: ablations.iter().map(|a| a.as_str().to_string()).collect(),
            seed,
            query_budget: plan.query_budget,
            initial_pairs: plan.initial_pairs,
            dataset_size: config.dataset_size,
        })?;

        let mut policies = ScriptedPolicy::standard_trio(&task_config);
        let dataset = generate_dataset(&task_config, &mut policies, config.dataset_size, seed)?;
        log.record(&Event::DatasetReady {
            rollouts: dataset.len(),
            low_return: dataset.low_return_count(),
        })?;

        let features = FeatureTable::build(&dataset);
        let layout = BayesianRewardNet::task_layout(task_config.observation_dim());
        let net = BayesianRewardNet::init(
            &layout,
            DEFAULT_PRIOR_SIGMA,
            stream_seed(seed, Stream::NetInit, 0),
        )?;
        let trainer = Trainer::new(net, config.train.clone());
        let oracle =
            Oracle::new(config.oracle_beta).with_tolerance(config.equality_tolerance);

        Ok(Driver {
            config,
            task,
            task_config,
            plan,
            algorithm,
            ablations,
            seed,
            dataset,
            features,
            trainer,
            oracle,
            oracle_rng: stream_rng(seed, Stream::Oracle, 0),
            train_rng: stream_rng(seed, Stream::NetSample, 1),
            acq_rng: stream_rng(seed, Stream::Acquisition, 0),
            store: PairStore::new(),
            chain: PreferenceChain::new(config.chain_cap),
            phase_start: 0,
            log,
        })
    }

    /// Buys the up-front random pairs: the whole budget for the passive
    /// baseline, the bootstrap share for everything else.
    fn bootstrap(&mut self) -> Result<(), HarnessError> {
        let k = match self.algorithm {
            Algorithm::Baseline => self.plan.query_budget as usize,
            _ => self.plan.initial_pairs,
        };
        let sampled = sample_initial_pairs(&self.dataset, k, self.seed)?;
        for (a, b) in sampled {
            let first = self.dataset.rollout(a).expect("sampled ids exist");
            let second = self.dataset.rollout(b).expect("sampled ids exist");
            let label = self.oracle.compare(first, second, &mut self.oracle_rng);
            self.store.add(
                PreferencePair::new(a, b, label, Provenance::Initial),
                self.log,
            )?;
        }
        self.phase_start = self.oracle.query_counter;
        Ok(())
    }

    fn train_epoch(&mut self, epoch: u32) -> Result<f64, HarnessError> {
        let loss =
            self.trainer.train_epoch(&self.store.pairs, &self.features, &mut self.train_rng)?;
        self.log.record(&Event::EpochTrained { epoch, loss })?;
        Ok(loss)
    }

    /// Spends the cumulative allowance on chain insertions. An insertion
    /// that would push past the allowance is undone — chain, counter, and
    /// oracle randomness all restored — and ends the epoch's querying.
    fn chain_queries(&mut self, epoch: u32, allowed_cum: u64) -> Result<(), HarnessError> {
        let mut predictor = PosteriorPredictor::new(
            &self.trainer.net,
            &self.features,
            mix(self.seed, &[0xAC0, epoch as u64]),
        );
        loop {
            if self.chain.is_full() {
                return Ok(());
            }
            let spent = self.oracle.query_counter - self.phase_start;
            if spent >= allowed_cum {
                return Ok(());
            }
            let pool = {
                let mut unranked: Vec<u64> = self
                    .dataset
                    .rollouts
                    .iter()
                    .map(|r| r.id)
                    .filter(|&id| !self.chain.contains(id))
                    .collect();
                if unranked.len() > self.config.candidate_pool {
                    unranked.shuffle(&mut self.acq_rng);
                    unranked.truncate(self.config.candidate_pool);
                    unranked.sort_unstable();
                }
                unranked
            };
            if pool.is_empty() {
                return Ok(());
            }
            let xi = if self.chain.is_empty() || self.ablations.contains(&Ablation::NoActive) {
                random_select(&pool, &mut self.acq_rng)?
            } else {
                select_next(
                    &mut predictor,
                    &self.chain,
                    &pool,
                    self.config.train.m_samples,
                    self.config.train.temperature,
                )?
                .chosen
            };

            let chain_before = self.chain.clone();
            let counter_before = self.oracle.query_counter;
            let rng_before = self.oracle_rng.clone();
            let receipt = match self.chain.insert(
                xi,
                &self.dataset,
                &mut self.oracle,
                &mut predictor,
                self.config.train.m_samples,
                &mut self.oracle_rng,
            ) {
                Ok(receipt) => receipt,
                Err(ChainError::AtCapacity { .. }) => return Ok(()),
                Err(e) => return Err(e.into()),
            };
            let spent_after = self.oracle.query_counter - self.phase_start;
            if spent_after > allowed_cum {
                self.chain = chain_before;
                self.oracle.query_counter = counter_before;
                self.oracle_rng = rng_before;
                self.log.record(&Event::InsertSkipped {
                    id: xi,
                    would_use: receipt.queries_used,
                    allowance: allowed_cum - (counter_before - self.phase_start),
                })?;
                return Ok(());
            }
            self.log.record(&Event::Inserted {
                id: xi,
                rank: receipt.rank,
                merged: receipt.merged,
                queries: receipt.queries_used,
                derived: receipt.derived_pairs.len(),
            })?;
            for pair in receipt.queried_pairs {
                self.store.add(pair, self.log)?;
            }
            if !self.ablations.contains(&Ablation::NoDerivedPrefs) {
                for pair in receipt.derived_pairs {
                    self.store.add(pair, self.log)?;
                }
            }
        }
    }

    /// Spends the cumulative allowance one pairwise query at a time,
    /// scoring a sampled pool of fresh pairs per query.
    fn pairwise_queries(
        &mut self,
        allowed_cum: u64,
        scorer: PairScorer,
    ) -> Result<(), HarnessError> {
        let n = self.dataset.len();
        let total_pairs = n * n.saturating_sub(1) / 2;
        loop {
            let spent = self.oracle.query_counter - self.phase_start;
            if spent >= allowed_cum {
                return Ok(());
            }
            if self.store.seen.len() >= total_pairs {
                return Ok(());
            }
            let want = self.config.candidate_pool.min(total_pairs - self.store.seen.len());
            let mut fresh: Vec<(u64, u64)> = Vec::with_capacity(want);
            let mut tried: HashSet<(u64, u64)> = HashSet::new();
            let mut attempts = 0usize;
            while fresh.len() < want && attempts < 100 * want {
                attempts += 1;
                let i = self.acq_rng.gen_range(0..n);
                let j = self.acq_rng.gen_range(0..n);
                if i == j {
                    continue;
                }
                let key = (
                    self.dataset.rollouts[i.min(j)].id,
                    self.dataset.rollouts[i.max(j)].id,
                );
                if self.store.seen.contains(&key) || !tried.insert(key) {
                    continue;
                }
                fresh.push(key);
            }
            if fresh.is_empty() {
                return Ok(());
            }
            fresh.sort_unstable();

            let (a, b) = if self.ablations.contains(&Ablation::NoActive) {
                fresh[self.acq_rng.gen_range(0..fresh.len())]
            } else {
                let mut predictor = PosteriorPredictor::new(
                    &self.trainer.net,
                    &self.features,
                    mix(self.seed, &[0xBA1, spent]),
                );
                let mut best = fresh[0];
                let mut best_score = f64::NEG_INFINITY;
                for &(x, y) in &fresh {
                    let score = match scorer {
                        PairScorer::InfoGain => pairwise_infogain_score(
                            &mut predictor,
                            x,
                            y,
                            self.config.train.m_samples,
                            self.config.train.temperature,
                        )?,
                        PairScorer::VolumeRemoval => volume_removal_score(
                            &mut predictor,
                            x,
                            y,
                            self.config.train.m_samples,
                            self.config.train.temperature,
                        )?,
                    };
                    if score > best_score {
                        best_score = score;
                        best = (x, y);
                    }
                }
                best
            };
            let first = self.dataset.rollout(a).expect("pair ids exist");
            let second = self.dataset.rollout(b).expect("pair ids exist");
            let label = self.oracle.compare(first, second, &mut self.oracle_rng);
            self.store.add(PreferencePair::new(a, b, label, Provenance::Queried), self.log)?;
        }
    }

    fn trace_eval(&mut self, epoch: u32) -> Result<f64, HarnessError> {
        let report = {
            let reward = learned_reward(&self.trainer);
            let mut policy = PlanningPolicy::new(
                self.task_config.clone(),
                RewardSource::Learned(&reward),
                DEFAULT_GAMMA,
            );
            evaluate_policy(
                &mut |s| policy.act(s),
                &self.task_config,
                self.config.trace_episodes,
                self.config.eval_horizon,
                self.config.failure_threshold,
                stream_seed(self.seed, Stream::Evaluation, epoch as u64),
            )?
        };
        self.log.record(&Event::EpochEvaluated { epoch, mean_return: report.mean_return })?;
        Ok(report.mean_return)
    }

    fn finish(
        self,
        loss_trace: Vec<f64>,
        return_trace: Vec<(u32, f64)>,
    ) -> Result<RunResult, HarnessError> {
        let eval = {
            let reward = learned_reward(&self.trainer);
            let mut policy = PlanningPolicy::new(
                self.task_config.clone(),
                RewardSource::Learned(&reward),
                DEFAULT_GAMMA,
            );
            evaluate_policy(
                &mut |s| policy.act(s),
                &self.task_config,
                self.config.eval_episodes,
                self.config.eval_horizon,
                self.config.failure_threshold,
                stream_seed(self.seed, Stream::Evaluation, 0),
            )?
        };
        self.log.record(&Event::FinalEvaluation {
            mean_return: eval.mean_return,
            std_return: eval.std_return,
            episodes: eval.episodes,
            failed: eval.failed,
        })?;

        let probe_gap = if self.task_config.has_extra_obs() {
            let gap = {
                let reward = learned_reward(&self.trainer);
                let mut env = Env::new(self.task_config.clone())?;
                let mut total = 0.0;
                let probes = 10u64;
                for i in 0..probes {
                    env.reset(stream_seed(self.seed, Stream::EnvReset, 0xBEEF + i));
                    total += spurious_probe_gap(&env, |obs| {
                        Action::ALL.iter().map(|&a| reward(obs, a)).sum::<f64>()
                            / Action::ALL.len() as f64
                    })?;
                }
                total / probes as f64
            };
            self.log.record(&Event::ProbeGap { gap })?;
            Some(gap)
        } else {
            None
        };

        let graph = build_graph(&self.store.pairs);
        let metrics = GraphMetrics::of(&graph);
        self.log.record(&Event::GraphSnapshot {
            nodes: metrics.nodes,
            edges: metrics.edges,
            clustering: metrics.clustering,
            efficiency: metrics.efficiency,
            largest_component: metrics.largest_component,
            chains: metrics.chains,
            cyclic: metrics.cyclic,
        })?;

        let query_usage = self.oracle.query_counter;
        if query_usage > self.plan.query_budget {
            return Err(HarnessError::BudgetExceeded {
                used: query_usage,
                budget: self.plan.query_budget,
            });
        }
        self.log.record(&Event::RunFinished { query_usage })?;

        Ok(RunResult {
            task: self.task,
            algorithm: self.algorithm,
            ablations: self.ablations,
            seed: self.seed,
            eval,
            query_usage,
            probe_gap,
            loss_trace,
            return_trace,
            graph: metrics,
            pairs: self.store.pairs,
        })
    }
}

/// Scores a state-action with the posterior-mean net; the planner calls
/// this through `RewardSource::Learned`.
fn learned_reward(trainer: &Trainer) -> impl Fn(&Observation, Action) -> f64 + '_ {
    let mean_weights = trainer.net.mean_weights();
    move |obs: &Observation, action: Action| {
        trainer
            .net
            .forward(&mean_weights, &step_input(obs, action))
            .expect("feature dimensions are fixed by the task")
    }
}

/// One grid cell of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub task: String,
    pub algorithm: String,
    pub ablations: String,
    pub seeds: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub failures: usize,
    pub mean_query_usage: f64,
    pub p_vs_baseline: Option<f64>,
}

/// The facts one run contributes to a summary, whether it just ran or was
/// replayed from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub task: String,
    pub algorithm: String,
    pub ablations: String,
    pub seed: u64,
    pub final_return: f64,
    pub failed: bool,
    pub query_usage: u64,
}

impl RunRecord {
    pub fn from_result(result: &RunResult) -> RunRecord {
        RunRecord {
            task: result.task.as_str().to_string(),
            algorithm: result.algorithm.as_str().to_string(),
            ablations: join_ablations(
                result.ablations.iter().map(|a| a.as_str().to_string()),
            ),
            seed: result.seed,
            final_return: result.eval.mean_return,
            failed: result.eval.failed,
            query_usage: result.query_usage,
        }
    }

    pub fn from_replay(replay: &RunReplay) -> Option<RunRecord> {
        Some(RunRecord {
            task: replay.task.clone(),
            algorithm: replay.algorithm.clone(),
            ablations: join_ablations(replay.ablations.iter().cloned()),
            seed: replay.seed,
            final_return: replay.final_return?,
            failed: replay.final_failed?,
            query_usage: replay.query_usage?,
        })
    }
}

fn join_ablations(parts: impl Iterator<Item = String>) -> String {
    parts.collect::<Vec<_>>().join("+")
}

/// Groups records by (task, algorithm, ablations) in first-appearance
/// order: cross-seed mean and std of final return, failure counts, and a
/// one-sided p-value against the same task's baseline where one exists.
pub fn summarize(records: &[RunRecord]) -> Vec<SuiteRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in records {
        let key = (r.task.clone(), r.algorithm.clone(), r.ablations.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let returns_of = |task: &str, algorithm: &str, ablations: &str| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.task == task && r.algorithm == algorithm && r.ablations == ablations)
            .map(|r| r.final_return)
            .collect()
    };
    keys.iter()
        .map(|(task, algorithm, ablations)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| {
                    &r.task == task && &r.algorithm == algorithm && &r.ablations == ablations
                })
                .collect();
            let returns: Vec<f64> = group.iter().map(|r| r.final_return).collect();
            let baseline = returns_of(task, Algorithm::Baseline.as_str(), "");
            let p_vs_baseline = if algorithm == Algorithm::Baseline.as_str() {
                None
            } else {
                welch_p_value(&returns, &baseline).ok()
            };
            SuiteRow {
                task: task.clone(),
                algorithm: algorithm.clone(),
                ablations: ablations.clone(),
                seeds: group.len(),
                mean_return: mean(&returns),
                std_return: sample_std(&returns),
                failures: group.iter().filter(|r| r.failed).count(),
                mean_query_usage: mean(
                    &group.iter().map(|r| r.query_usage as f64).collect::<Vec<_>>(),
                ),
                p_vs_baseline,
            }
        })
        .collect()
}

/// Renders the summary as an aligned text table.
pub fn render_table(rows: &[SuiteRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:<18} {:<18} {:>5} {:>18} {:>8} {:>12} {:>12}\n",
        "task", "algorithm", "ablations", "seeds", "return (mean±std)", "failures", "queries",
        "p vs base"
    ));
    for row in rows {
        let ablations = if row.ablations.is_empty() { "-" } else { &row.ablations };
        let p = row.p_vs_baseline.map_or("-".to_string(), |p| format!("{p:.4}"));
        out.push_str(&format!(
            "{:<14} {:<18} {:<18} {:>5} {:>11.2}±{:<6.2} {:>8} {:>12.1} {:>12}\n",
            row.task,
            row.algorithm,
            ablations,
            row.seeds,
            row.mean_return,
            row.std_return,
            row.failures,
            row.mean_query_usage,
            p
        ));
    }
    out
}

/// Per-run facts as CSV.
pub fn runs_csv(results: &[RunResult]) -> String {
    let mut out = String::from(
        "task,algorithm,ablations,seed,final_return,std_return,failed,query_usage,probe_gap,\
         nodes,edges,clustering,efficiency,largest_component,chains,cyclic\n",
    );
    for r in results {
        let record = RunRecord::from_result(r);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            record.task,
            record.algorithm,
            record.ablations,
            r.seed,
            r.eval.mean_return,
            r.eval.std_return,
            r.eval.failed,
            r.query_usage,
            r.probe_gap.map_or(String::new(), |g| g.to_string()),
            r.graph.nodes,
            r.graph.edges,
            r.graph.clustering,
            r.graph.efficiency,
            r.graph.largest_component,
            r.graph.chains,
            r.graph.cyclic,
        ));
    }
    out
}

/// Summary rows as CSV.
pub fn summary_csv(rows: &[SuiteRow]) -> String {
    let mut out = String::from(
        "task,algorithm,ablations,seeds,mean_return,std_return,failures,mean_query_usage,\
         p_vs_baseline\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.task,
            row.algorithm,
            row.ablations,
            row.seeds,
            row.mean_return,
            row.std_return,
            row.failures,
            row.mean_query_usage,
            row.p_vs_baseline.map_or(String::new(), |p| p.to_string()),
        ));
    }
    out
}

/// Per-epoch learning curves for one task: tab-separated columns of mean
/// and cross-seed std per algorithm, one row per epoch. Results must all
/// belong to the same task.
pub fn emit_plot_data(results: &[RunResult], epochs: u32) -> String {
    let mut series: Vec<(String, Vec<&RunResult>)> = Vec::new();
    for r in results {
        let record = RunRecord::from_result(r);
        let name = if record.ablations.is_empty() {
            record.algorithm
        } else {
            format!("{}[{}]", record.algorithm, record.ablations)
        };
        match series.iter_mut().find(|(n, _)| *n == name) {
            Some((_, runs)) => runs.push(r),
            None => series.push((name, vec![r])),
        }
    }
    let mut out = String::from("epoch");
    for (name, _) in &series {
        out.push_str(&format!("\t{name}_mean\t{name}_std"));
    }
    out.push('\n');
    if series.iter().all(|(_, runs)| runs.iter().all(|r| r.return_trace.is_empty())) {
        return out;
    }
    for epoch in 1..=epochs {
        let mut row = format!("{epoch}");
        for (_, runs) in &series {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| {
                    r.return_trace.iter().find(|(e, _)| *e == epoch).map(|(_, v)| *v)
                })
                .collect();
            row.push_str(&format!("\t{}\t{}", mean(&values), sample_std(&values)));
        }
        row.push('\n');
        out.push_str(&row);
    }
    out
}

/// Writes a file through a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Everything `run_suite` produced: the per-run results and summary rows.
pub struct SuiteOutcome {
    pub results: Vec<RunResult>,
    pub rows: Vec<SuiteRow>,
}

/// Runs the full task × algorithm × seed grid serially, writing one event
/// log per run plus the CSV and plot artifacts under `out_dir`.
pub fn run_suite(config: &ExperimentConfig, out_dir: &Path) -> Result<SuiteOutcome, HarnessError> {
    let logs_dir = out_dir.join("logs");
    fs::create_dir_all(&logs_dir)?;
    let mut results = Vec::new();
    for &task in &config.tasks {
        for &algorithm in &config.algorithms {
            for &seed in &config.seeds {
                let mut log = EventLog::new(Vec::new());
                let result = run_experiment(config, task, algorithm, seed, &mut log)?;
                let ablations =
                    join_ablations(result.ablations.iter().map(|a| a.as_str().to_string()));
                let suffix = if ablations.is_empty() {
                    String::new()
                } else {
                    format!("_{}", ablations.replace('+', "-"))
                };
                let name = format!("{}_{}{suffix}_{seed}.jsonl", task.as_str(), algorithm);
                write_atomic(&logs_dir.join(name), &log.into_inner())?;
                results.push(result);
            }
        }
    }
    let records: Vec<RunRecord> = results.iter().map(RunRecord::from_result).collect();
    let rows = summarize(&records);
    write_atomic(&out_dir.join("runs.csv"), runs_csv(&results).as_bytes())?;
    write_atomic(&out_dir.join("summary.csv"), summary_csv(&rows).as_bytes())?;
    for &task in &config.tasks {
        let task_results: Vec<RunResult> =
            results.iter().filter(|r| r.task == task).cloned().collect();
        let plot = emit_plot_data(&task_results, config.epochs);
        write_atomic(
            &out_dir.join(format!("plot_{}.tsv", task.as_str())),
            plot.as_bytes(),
        )?;
    }
    Ok(SuiteOutcome { results, rows })
}

/// One point of a budget sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub query_budget: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub failures: usize,
}

/// Runs the passive baseline on the first configured task at each budget,
/// writing logs and a sweep CSV under `out_dir`.
pub fn run_sweep(
    config: &ExperimentConfig,
    budgets: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    let task = config.tasks[0];
    let available =
        (config.dataset_size * config.dataset_size.saturating_sub(1) / 2) as u64;
    let logs_dir = out_dir.join("logs");
    fs::create_dir_all(&logs_dir)?;
    let mut rows = Vec::new();
    for &budget in budgets {
        if budget == 0 || budget > available {
            return Err(HarnessError::Dataset(DatasetError::TooManyPairs {
                k: budget as usize,
                available: available as usize,
            }));
        }
        let mut point = config.clone();
        point.query_budget = Some(budget);
        point.initial_pairs = None;
        point.sort_budget = None;
        let mut returns = Vec::new();
        let mut failures = 0;
        for &seed in &config.seeds {
            let mut log = EventLog::new(Vec::new());
            let result =
                run_experiment(&point, task, Algorithm::Baseline, seed, &mut log)?;
            let name = format!("sweep_{}_{budget}_{seed}.jsonl", task.as_str());
            write_atomic(&logs_dir.join(name), &log.into_inner())?;
            returns.push(result.eval.mean_return);
            failures += usize::from(result.eval.failed);
        }
        rows.push(SweepRow {
            query_budget: budget,
            mean_return: mean(&returns),
            std_return: sample_std(&returns),
            failures,
        });
    }
    let mut csv = String::from("query_budget,mean_return,std_return,failures\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.query_budget, row.mean_return, row.std_return, row.failures
        ));
    }
    write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
    Ok(rows)
}
