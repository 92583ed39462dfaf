//! Ordered log of the decisions taken by the selection engine.
//!
//! Serialized as one JSON object per line. [`SelectionTrace::validate`]
//! re-checks the structural guarantees of a run from the log alone.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::groups::BlockCoordinate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// A freshly chosen block yielded no entry.
    EmptyBlock,
    /// Every block has been closed.
    AllBlocksClosed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    BlockChosen {
        k: usize,
        j: usize,
        score: f64,
    },
    RowChosen {
        k: usize,
        j: usize,
        row: usize,
        score: f64,
    },
    EntryAccepted {
        coord: BlockCoordinate,
        ebic_before: f64,
        ebic_after: f64,
    },
    /// The row gave at least one entry and is not considered again for this block.
    RowExhausted { k: usize, j: usize, row: usize },
    /// The row gave nothing; control returns to block selection.
    RowAbandoned { k: usize, j: usize, row: usize },
    BlockClosed { k: usize, j: usize },
    Terminated { reason: TerminationReason },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub events: Vec<TraceEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceViolation {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event {}: {}", self.index, self.message)
    }
}

impl std::error::Error for TraceViolation {}

impl SelectionTrace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn accepted(&self) -> impl Iterator<Item = (&BlockCoordinate, f64, f64)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::EntryAccepted {
                coord,
                ebic_before,
                ebic_after,
            } => Some((coord, *ebic_before, *ebic_after)),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<serde_json::Result<_>>()?;
        Ok(SelectionTrace { events })
    }

    /// Checks the structural invariants of a run.
    ///
    /// * accepted entries strictly decrease the criterion and chain onto each
    ///   other (`ebic_before` equals the previous `ebic_after`);
    /// * events nest as entries within rows within blocks;
    /// * closed blocks are never chosen again and exhausted rows are never
    ///   chosen again for their block;
    /// * no entry is accepted twice and at most `max_entries` are accepted;
    /// * the log ends with exactly one `Terminated`.
    pub fn validate(&self, max_entries: usize) -> Result<(), TraceViolation> {
        let fail = |index: usize, message: String| Err(TraceViolation { index, message });
        let mut block: Option<(usize, usize)> = None;
        let mut row: Option<usize> = None;
        let mut row_entries = 0usize;
        let mut block_entries = 0usize;
        let mut closed = BTreeSet::new();
        let mut exhausted = BTreeSet::new();
        let mut accepted = BTreeSet::new();
        let mut last_ebic: Option<f64> = None;
        let mut terminated = false;

        for (i, e) in self.events.iter().enumerate() {
            if terminated {
                return fail(i, "event after termination".into());
            }
            match *e {
                TraceEvent::BlockChosen { k, j, .. } => {
                    if block.is_some() {
                        return fail(i, "block chosen while another is open".into());
                    }
                    if closed.contains(&(k, j)) {
                        return fail(i, format!("closed block ({k}, {j}) chosen again"));
                    }
                    block = Some((k, j));
                    block_entries = 0;
                }
                TraceEvent::RowChosen { k, j, row: a, .. } => {
                    if block != Some((k, j)) || row.is_some() {
                        return fail(i, "row chosen outside an open block".into());
                    }
                    if exhausted.contains(&(k, j, a)) {
                        return fail(i, format!("exhausted row {a} of ({k}, {j}) chosen again"));
                    }
                    row = Some(a);
                    row_entries = 0;
                }
                TraceEvent::EntryAccepted {
                    coord,
                    ebic_before,
                    ebic_after,
                } => {
                    if block != Some(coord.block()) || row != Some(coord.row) {
                        return fail(i, "entry outside the current row".into());
                    }
                    if !(ebic_after < ebic_before) {
                        return fail(i, format!("criterion did not decrease: {ebic_before} -> {ebic_after}"));
                    }
                    if let Some(prev) = last_ebic {
                        if (prev - ebic_before).abs() > 1e-9 * prev.abs().max(1.0) {
                            return fail(i, format!("criterion chain broken: {prev} vs {ebic_before}"));
                        }
                    }
                    if !accepted.insert(coord) {
                        return fail(i, format!("entry {coord:?} accepted twice"));
                    }
                    if accepted.len() > max_entries {
                        return fail(i, format!("more than {max_entries} entries accepted"));
                    }
                    last_ebic = Some(ebic_after);
                    row_entries += 1;
                    block_entries += 1;
                }
                TraceEvent::RowExhausted { k, j, row: a } => {
                    if block != Some((k, j)) || row != Some(a) || row_entries == 0 {
                        return fail(i, "row exhausted without entries or out of place".into());
                    }
                    exhausted.insert((k, j, a));
                    row = None;
                }
                TraceEvent::RowAbandoned { k, j, row: a } => {
                    if block != Some((k, j)) || row != Some(a) || row_entries != 0 {
                        return fail(i, "row abandoned after entries or out of place".into());
                    }
                    row = None;
                }
                TraceEvent::BlockClosed { k, j } => {
                    if block != Some((k, j)) || row.is_some() || block_entries == 0 {
                        return fail(i, "block closed without entries or out of place".into());
                    }
                    closed.insert((k, j));
                    block = None;
                }
                TraceEvent::Terminated { reason } => {
                    if row.is_some() {
                        return fail(i, "terminated inside a row".into());
                    }
                    match reason {
                        TerminationReason::EmptyBlock if block.is_none() || block_entries != 0 => {
                            return fail(i, "empty-block termination without an empty block".into());
                        }
                        TerminationReason::AllBlocksClosed if block.is_some() => {
                            return fail(i, "all-closed termination with an open block".into());
                        }
                        _ => {}
                    }
                    terminated = true;
                }
            }
        }
        if !terminated {
            return fail(self.events.len(), "trace does not terminate".into());
        }
        Ok(())
    }
}
