//! Append-only experiment event logs, one JSON record per line.
//!
//! Every run writes the same stream of typed events in a deterministic
//! order with no timestamps, so a run (config, seed) replays to an
//! identical log byte-for-byte, and every summary table can be rebuilt
//! from logs alone.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::PreferenceLabel;
use crate::reward::{PreferencePair, Provenance};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("malformed log record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("log does not start with a run_started record")]
    MissingHeader,
}

/// One experiment event. The variants mirror the run loop: header, dataset,
/// pair ingestion, per-epoch training/evaluation, chain insertions, the
/// final dataset-graph snapshot, and the closing audit line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStarted {
        task: String,
        variant: String,
        algorithm: String,
        ablations: Vec<String>,
        seed: u64,
        query_budget: u64,
        initial_pairs: usize,
        dataset_size: usize,
    },
    DatasetReady {
        rollouts: usize,
        low_return: usize,
    },
    PairAdded {
        first: u64,
        second: u64,
        label: PreferenceLabel,
        provenance: Provenance,
    },
    EpochTrained {
        epoch: u32,
        loss: f64,
    },
    EpochEvaluated {
        epoch: u32,
        mean_return: f64,
    },
    Inserted {
        id: u64,
        rank: usize,
        merged: bool,
        queries: u64,
        derived: usize,
    },
    InsertSkipped {
        id: u64,
        would_use: u64,
        allowance: u64,
    },
    GraphSnapshot {
        nodes: usize,
        edges: usize,
        clustering: f64,
        efficiency: f64,
        largest_component: usize,
        chains: u64,
        cyclic: bool,
    },
    ProbeGap {
        gap: f64,
    },
    FinalEvaluation {
        mean_return: f64,
        std_return: f64,
        episodes: usize,
        failed: bool,
    },
    RunFinished {
        query_usage: u64,
    },
}

/// Streams events to a sink as JSON lines.
pub struct EventLog<W: Write> {
    out: W,
    records: usize,
}

impl<W: Write> EventLog<W> {
    pub fn new(out: W) -> EventLog<W> {
        EventLog { out, records: 0 }
    }

    pub fn record(&mut self, event: &Event) -> Result<(), LogError> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> usize {
        self.records
    }

    /// Consumes the log and hands back the sink (e.g. captured bytes).
    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a full event stream; blank lines are ignored.
pub fn read_events(r: impl BufRead) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}

/// Everything a summary table or graph rebuild needs from one run's log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReplay {
    pub task: String,
    pub variant: String,
    pub algorithm: String,
    pub ablations: Vec<String>,
    pub seed: u64,
    pub query_budget: u64,
    pub initial_pairs: usize,
    pub dataset_size: usize,
    pub pairs: Vec<PreferencePair>,
    pub losses: Vec<f64>,
    pub return_trace: Vec<(u32, f64)>,
    pub inserts: usize,
    pub skipped_inserts: usize,
    pub final_return: Option<f64>,
    pub final_failed: Option<bool>,
    pub query_usage: Option<u64>,
}

/// Folds an event stream back into a run summary. The first record must be
/// the run header.
pub fn replay(events: &[Event]) -> Result<RunReplay, LogError> {
    let Some(Event::RunStarted {
        task,
        variant,
        algorithm,
        ablations,
        seed,
        query_budget,
        initial_pairs,
        dataset_size,
    }) = events.first()
    else {
        return Err(LogError::MissingHeader);
    };
    let mut run = RunReplay {
        task: task.clone(),
        variant: variant.clone(),
        algorithm: algorithm.clone(),
        ablations: ablations.clone(),
        seed: *seed,
        query_budget: *query_budget,
        initial_pairs: *initial_pairs,
        dataset_size: *dataset_size,
        pairs: Vec::new(),
        losses: Vec::new(),
        return_trace: Vec::new(),
        inserts: 0,
        skipped_inserts: 0,
        final_return: None,
        final_failed: None,
        query_usage: None,
    };
    for event in &events[1..] {
        match event {
            Event::PairAdded { first, second, label, provenance } => {
                run.pairs.push(PreferencePair::new(*first, *second, *label, *provenance));
            }
            Event::EpochTrained { loss, .. } => run.losses.push(*loss),
            Event::EpochEvaluated { epoch, mean_return } => {
                run.return_trace.push((*epoch, *mean_return));
            }
            Event::Inserted { .. } => run.inserts += 1,
            Event::InsertSkipped { .. } => run.skipped_inserts += 1,
            Event::FinalEvaluation { mean_return, failed, .. } => {
                run.final_return = Some(*mean_return);
                run.final_failed = Some(*failed);
            }
            Event::RunFinished { query_usage } => run.query_usage = Some(*query_usage),
            _ => {}
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Event {
        Event::RunStarted {
            task: "empty".into(),
            variant: "train".into(),
            algorithm: "impec".into(),
            ablations: vec![],
            seed: 3,
            query_budget: 300,
            initial_pairs: 150,
            dataset_size: 60,
        }
    }

    #[test]
    fn events_round_trip_through_jsonl() {
        let events = vec![
            header(),
            Event::DatasetReady { rollouts: 60, low_return: 5 },
            Event::PairAdded {
                first: 4,
                second: 9,
                label: PreferenceLabel::FirstPreferred,
                provenance: Provenance::Initial,
            },
            Event::EpochTrained { epoch: 1, loss: 0.69 },
            Event::Inserted { id: 7, rank: 2, merged: false, queries: 2, derived: 5 },
            Event::InsertSkipped { id: 8, would_use: 4, allowance: 1 },
            Event::EpochEvaluated { epoch: 1, mean_return: 11.5 },
            Event::GraphSnapshot {
                nodes: 40,
                edges: 155,
                clustering: 0.06,
                efficiency: 0.19,
                largest_component: 40,
                chains: 300,
                cyclic: false,
            },
            Event::ProbeGap { gap: 0.8 },
            Event::FinalEvaluation {
                mean_return: 18.0,
                std_return: 2.1,
                episodes: 20,
                failed: false,
            },
            Event::RunFinished { query_usage: 299 },
        ];
        let mut log = EventLog::new(Vec::new());
        for e in &events {
            log.record(e).unwrap();
        }
        assert_eq!(log.records(), events.len());
        let bytes = log.into_inner();
        let parsed = read_events(bytes.as_slice()).unwrap();
        assert_eq!(parsed, events);
    }

    #[test]
    fn the_line_format_is_frozen() {
        let mut log = EventLog::new(Vec::new());
        log.record(&Event::EpochTrained { epoch: 2, loss: 0.5 }).unwrap();
        let line = String::from_utf8(log.into_inner()).unwrap();
        assert_eq!(line, "{\"event\":\"epoch_trained\",\"epoch\":2,\"loss\":0.5}\n");
    }

    #[test]
    fn replay_folds_a_log_into_a_run_summary() {
        let events = vec![
            header(),
            Event::PairAdded {
                first: 1,
                second: 2,
                label: PreferenceLabel::Equal,
                provenance: Provenance::Derived,
            },
            Event::EpochTrained { epoch: 1, loss: 0.7 },
            Event::EpochTrained { epoch: 2, loss: 0.6 },
            Event::EpochEvaluated { epoch: 2, mean_return: 9.0 },
            Event::Inserted { id: 3, rank: 0, merged: false, queries: 1, derived: 0 },
            Event::InsertSkipped { id: 5, would_use: 3, allowance: 0 },
            Event::FinalEvaluation {
                mean_return: 14.0,
                std_return: 1.0,
                episodes: 10,
                failed: false,
            },
            Event::RunFinished { query_usage: 151 },
        ];
        let run = replay(&events).unwrap();
        assert_eq!(run.task, "empty");
        assert_eq!(run.algorithm, "impec");
        assert_eq!(run.seed, 3);
        assert_eq!(run.pairs.len(), 1);
        assert_eq!(run.pairs[0].provenance, Provenance::Derived);
        assert_eq!(run.losses, vec![0.7, 0.6]);
        assert_eq!(run.return_trace, vec![(2, 9.0)]);
        assert_eq!(run.inserts, 1);
        assert_eq!(run.skipped_inserts, 1);
        assert_eq!(run.final_return, Some(14.0));
        assert_eq!(run.final_failed, Some(false));
        assert_eq!(run.query_usage, Some(151));
    }

    #[test]
    fn replay_requires_the_header_record() {
        let events = vec![Event::RunFinished { query_usage: 0 }];
        assert!(matches!(replay(&events), Err(LogError::MissingHeader)));
        assert!(matches!(replay(&[]), Err(LogError::MissingHeader)));
    }

    #[test]
    fn unreadable_lines_are_reported() {
        let text = "{\"event\":\"run_finished\",\"query_usage\":1}\nnot json\n";
        assert!(matches!(read_events(text.as_bytes()), Err(LogError::Json(_))));
        let blanks = "\n{\"event\":\"run_finished\",\"query_usage\":1}\n\n";
        assert_eq!(read_events(blanks.as_bytes()).unwrap().len(), 1);
    }
}
