//! Event log produced by a simulation run, and its CSV export.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Scenario;

/// Pipeline stages in traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mobile,
    Link1,
    Edge,
    Link2,
    Cloud,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Mobile,
        Stage::Link1,
        Stage::Edge,
        Stage::Link2,
        Stage::Cloud,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mobile => "mobile",
            Stage::Link1 => "link1",
            Stage::Edge => "edge",
            Stage::Link2 => "link2",
            Stage::Cloud => "cloud",
        }
    }

    pub fn is_link(self) -> bool {
        matches!(self, Stage::Link1 | Stage::Link2)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Sample {
        t: f64,
        id: u64,
        semantic_new: bool,
        admitted: bool,
    },
    StageDone {
        t: f64,
        id: u64,
        stage: Stage,
    },
    /// A waiting job replaced by a newer arrival under keep-latest.
    Discarded {
        t: f64,
        id: u64,
        stage: Stage,
    },
    /// `inference_s` is the time the job spent in service, excluding waits.
    Generated {
        t: f64,
        id: u64,
        via_exit: Option<usize>,
        inference_s: f64,
    },
    Intercepted {
        t: f64,
        id: u64,
    },
    Verified {
        t: f64,
        k: u64,
        trust_level: String,
        delta: f64,
    },
}

impl Record {
    pub fn time(&self) -> f64 {
        match *self {
            Record::Sample { t, .. }
            | Record::StageDone { t, .. }
            | Record::Discarded { t, .. }
            | Record::Generated { t, .. }
            | Record::Intercepted { t, .. }
            | Record::Verified { t, .. } => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub scenario: Scenario,
    pub records: Vec<Record>,
    pub end_time: f64,
    pub warnings: Vec<String>,
}

pub const LOG_CSV_HEADER: &str = "time_s,event,job_id,stage_or_level,extra";

impl EventLog {
    /// Checks time ordering, sample/generation pairing and per-job stage order.
    pub fn check(&self) -> Result<(), String> {
        let mut last = f64::NEG_INFINITY;
        let mut sampled = HashSet::new();
        let mut progress: std::collections::HashMap<u64, (f64, Option<Stage>)> =
            std::collections::HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let t = r.time();
            if t < last {
                return Err(format!("record {i} goes back in time ({t} < {last})"));
            }
            last = t;
            match *r {
                Record::Sample { id, t, .. } => {
                    sampled.insert(id);
                    progress.insert(id, (t, None));
                }
                Record::StageDone { id, stage, t } => {
                    let entry = progress
                        .get_mut(&id)
                        .ok_or_else(|| format!("stage_done for unsampled job {id}"))?;
                    if entry.1.is_some_and(|s| s >= stage) || t < entry.0 {
                        return Err(format!("job {id} completes {} out of order", stage.name()));
                    }
                    *entry = (t, Some(stage));
                }
                Record::Generated { id, t, .. } => {
                    if !sampled.contains(&id) {
                        return Err(format!("generated job {id} has no sample"));
                    }
                    if progress.get(&id).is_some_and(|p| t < p.0) {
                        return Err(format!("job {id} generated before its last stage"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn generated_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Generated { .. }))
            .count()
    }
}

/// One CSV row per record, preceded by [`LOG_CSV_HEADER`]. Times carry nine
/// decimals.
pub fn export_log(log: &EventLog) -> String {
    let mut out = String::with_capacity(32 * (log.records.len() + 1));
    out.push_str(LOG_CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        write_row(&mut out, r);
        out.push('\n');
    }
    out
}

fn write_row(out: &mut String, r: &Record) {
    let _ = match r {
        Record::Sample {
            t,
            id,
            semantic_new,
            admitted,
        } => {
            let extra = match (semantic_new, admitted) {
                (true, _) => "new",
                (false, true) => "same",
                (false, false) => "dropped",
            };
            write!(out, "{t:.9},sample,{id},,{extra}")
        }
        Record::StageDone { t, id, stage } => write!(out, "{t:.9},stage_done,{id},{},", stage.name()),
        Record::Discarded { t, id, stage } => write!(out, "{t:.9},discarded,{id},{},", stage.name()),
        Record::Generated { t, id, via_exit, .. } => match via_exit {
            Some(layer) => write!(out, "{t:.9},generated,{id},,exit:{layer}"),
            None => write!(out, "{t:.9},generated,{id},,"),
        },
        Record::Intercepted { t, id } => write!(out, "{t:.9},intercepted,{id},,"),
        Record::Verified {
            t,
            k,
            trust_level,
            delta,
        } => write!(out, "{t:.9},verified,{k},{trust_level},{delta}"),
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(r: Record) -> String {
        let mut s = String::new();
        write_row(&mut s, &r);
        s
    }

    #[test]
    fn row_formats() {
        assert_eq!(
            row(Record::Sample {
                t: 0.0,
                id: 0,
                semantic_new: true,
                admitted: true
            }),
            "0.000000000,sample,0,,new"
        );
        assert_eq!(
            row(Record::Generated {
                t: 0.14,
                id: 0,
                via_exit: None,
                inference_s: 0.14
            }),
            "0.140000000,generated,0,,"
        );
        assert_eq!(
            row(Record::Verified {
                t: 5.0,
                k: 1,
                trust_level: "hi".into(),
                delta: 0.2
            }),
            "5.000000000,verified,1,hi,0.2"
        );
        assert_eq!(
            row(Record::StageDone {
                t: 1.5,
                id: 3,
                stage: Stage::Link1
            }),
            "1.500000000,stage_done,3,link1,"
        );
        assert_eq!(
            row(Record::Sample {
                t: 0.25,
                id: 2,
                semantic_new: false,
                admitted: false
            }),
            "0.250000000,sample,2,,dropped"
        );
    }
}
