//! Command-line front end: run experiments, summarize finished runs from
//! their event logs, rebuild preference graphs, and sweep query budgets.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cmg::config::{Algorithm, ExperimentConfig};
use cmg::env::{Task, TaskConfig, Variant};
use cmg::eventlog::{read_events, replay, EventLog, RunReplay};
use cmg::graph::{build_graph, ChainCountMethod};
use cmg::harness::{
    render_table, run_experiment, run_suite, run_sweep, summarize, write_atomic, GraphMetrics,
    RunRecord,
};
use cmg::rollouts::{generate_dataset, ScriptedPolicy};

#[derive(Parser)]
#[command(
    name = "cmg",
    version,
    about = "Preference-learning experiments on confounded grid tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its event log.
    Run {
        /// Key=value experiment config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task to run; defaults to the config's first task.
        #[arg(long)]
        task: Option<String>,
        /// Algorithm to run; defaults to the config's first algorithm.
        #[arg(long)]
        algorithm: Option<String>,
        /// Seed to run; defaults to the config's first seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where the event log goes.
        #[arg(long, default_value = "run.jsonl")]
        log: PathBuf,
    },
    /// Run the configured task x algorithm x seed grid and write all
    /// artifacts (event logs, CSVs, plot data).
    Suite {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for logs and tables.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize finished runs from their event logs alone.
    Stats {
        /// Event-log files or directories holding `.jsonl` logs.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Also write the summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rebuild one run's preference graph from its event log and report
    /// connectivity metrics.
    Graph {
        /// Event log of a finished run.
        log: PathBuf,
        /// Chain counting: reachable-pairs, path-components, or
        /// maximal-paths.
        #[arg(long, default_value = "reachable-pairs")]
        method: String,
        /// Write an adjacency listing here.
        #[arg(long)]
        adjacency: Option<PathBuf>,
        /// Write the edge table (TSV) here.
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Write the node table (TSV) here; regenerates the run's dataset.
        #[arg(long)]
        nodes: Option<PathBuf>,
    },
    /// Random-query baseline across several query budgets.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated query budgets.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            ExperimentConfig::parse(&text)
                .with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn collect_logs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    if files.is_empty() {
        bail!("no event logs found");
    }
    Ok(files)
}

fn load_replay(path: &Path) -> Result<RunReplay> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let events = read_events(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    replay(&events).with_context(|| format!("replaying {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, task, algorithm, seed, log } => {
            let config = load_config(config.as_deref())?;
            config.validate()?;
            let task = match task {
                Some(t) => Task::parse(&t).with_context(|| format!("unknown task {t:?}"))?,
                None => config.tasks[0],
            };
            let algorithm = match algorithm {
                Some(a) => {
                    Algorithm::parse(&a).with_context(|| format!("unknown algorithm {a:?}"))?
                }
                None => config.algorithms[0],
            };
            let seed = seed.unwrap_or(config.seeds[0]);
            if let Some(parent) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let file = File::create(&log)
                .with_context(|| format!("creating {}", log.display()))?;
            let mut event_log = EventLog::new(BufWriter::new(file));
            let result = run_experiment(&config, task, algorithm, seed, &mut event_log)?;
            event_log.into_inner().into_inner().context("flushing event log")?;
            println!(
                "{} {} seed {}: return {:.3} ± {:.3} ({}), queries {}/{}",
                result.task.as_str(),
                result.algorithm,
                result.seed,
                result.eval.mean_return,
                result.eval.std_return,
                if result.eval.failed { "FAILED" } else { "ok" },
                result.query_usage,
                config.budget_for(task).query_budget,
            );
            if let Some(gap) = result.probe_gap {
                println!("probe gap {gap:.4}");
            }
            println!(
                "graph: {} nodes, {} edges, clustering {:.4}, efficiency {:.4}, chains {}",
                result.graph.nodes,
                result.graph.edges,
                result.graph.clustering,
                result.graph.efficiency,
                result.graph.chains,
            );
            println!("log written to {}", log.display());
        }
        Command::Suite { config, out } => {
            let config = load_config(config.as_deref())?;
            config.validate()?;
            let outcome = run_suite(&config, &out)?;
            print!("{}", render_table(&outcome.rows));
            println!("artifacts written to {}", out.display());
        }
        Command::Stats { logs, csv } => {
            let files = collect_logs(&logs)?;
            let mut records = Vec::new();
            for file in &files {
                let replayed = load_replay(file)?;
                match RunRecord::from_replay(&replayed) {
                    Some(record) => records.push(record),
                    None => eprintln!("skipping unfinished run {}", file.display()),
                }
            }
            if records.is_empty() {
                bail!("no finished runs among {} logs", files.len());
            }
            let rows = summarize(&records);
            print!("{}", render_table(&rows));
            if let Some(path) = csv {
                write_atomic(&path, cmg::harness::summary_csv(&rows).as_bytes())?;
                println!("summary written to {}", path.display());
            }
        }
        Command::Graph { log, method, adjacency, edges, nodes } => {
            let method: ChainCountMethod =
                method.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let replayed = load_replay(&log)?;
            let graph = build_graph(&replayed.pairs);
            let metrics = GraphMetrics::of(&graph);
            let chains = graph.count_chains(method);
            println!(
                "{} {} seed {}: {} nodes, {} edges",
                replayed.task, replayed.algorithm, replayed.seed, metrics.nodes, metrics.edges,
            );
            println!(
                "clustering {:.6}, efficiency {:.6}, largest component {}",
                metrics.clustering, metrics.efficiency, metrics.largest_component,
            );
            println!(
                "chains ({method:?}): {}{}",
                chains.count,
                if chains.cyclic { " (cyclic)" } else { "" },
            );
            if let Some(path) = adjacency {
                let mut buf = Vec::new();
                graph.write_adjacency(&mut buf)?;
                write_atomic(&path, &buf)?;
            }
            if let Some(path) = edges {
                let mut buf = Vec::new();
                graph.write_edge_table(&mut buf)?;
                write_atomic(&path, &buf)?;
            }
            if let Some(path) = nodes {
                let task = Task::parse(&replayed.task)
                    .with_context(|| format!("log names unknown task {:?}", replayed.task))?;
                let variant = Variant::parse(&replayed.variant)
                    .with_context(|| format!("log names unknown variant {:?}", replayed.variant))?;
                let task_config = TaskConfig::new(task).with_variant(variant);
                let mut policies = ScriptedPolicy::standard_trio(&task_config);
                let dataset = generate_dataset(
                    &task_config,
                    &mut policies,
                    replayed.dataset_size,
                    replayed.seed,
                )?;
                let mut buf = Vec::new();
                graph.write_node_table(&dataset, &mut buf)?;
                write_atomic(&path, &buf)?;
            }
        }
        Command::Sweep { config, budgets, out } => {
            let config = load_config(config.as_deref())?;
            config.validate()?;
            let rows = run_sweep(&config, &budgets, &out)?;
            println!("{:>12} {:>18} {:>8}", "budget", "return (mean±std)", "failures");
            for row in &rows {
                println!(
                    "{:>12} {:>11.2}±{:<6.2} {:>8}",
                    row.query_budget, row.mean_return, row.std_return, row.failures,
                );
            }
            println!("artifacts written to {}", out.display());
        }
    }
    Ok(())
}
