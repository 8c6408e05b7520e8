//! Time-ordered event records, written one JSON object per line.

use std::io::{self, Write};

use serde::Serialize;

use super::signals::Light;
use crate::signal::PhaseId;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    StopArrival { bus: usize, stop: usize },
    StopDeparture { bus: usize, stop: usize },
    Crossing { bus: usize, intersection: usize },
    Phase { intersection: usize, phase: PhaseId, light: Light },
    Plan { intersection: usize, first_cycle: i64, cycles: usize },
    Guidance { bus: usize, segment: usize, line_target: Option<f64>, stop_target: Option<f64> },
    Rejected { intersection: usize, cycle: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EventTrace {
    pub events: Vec<Event>,
}

impl EventTrace {
    pub fn push(&mut self, time: f64, kind: EventKind) {
        debug_assert!(self.events.last().is_none_or(|e| e.time <= time), "trace went back in time");
        self.events.push(Event { time, kind });
    }

    /// Appends a batch after sorting it by time; ties keep their order.
    pub fn extend_sorted(&mut self, mut batch: Vec<Event>) {
        batch.sort_by(|a, b| a.time.total_cmp(&b.time));
        for e in batch {
            self.push(e.time, e.kind);
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Realised stop arrivals as `[bus][stop]`.
    pub fn arrivals(&self, buses: usize, stops: usize) -> Vec<Vec<Option<f64>>> {
        let mut out = vec![vec![None; stops]; buses];
        for e in &self.events {
            if let EventKind::StopArrival { bus, stop } = e.kind {
                out[bus][stop] = Some(e.time);
            }
        }
        out
    }
}
