//! Executed signal timing with the in-service lock.

use serde::Serialize;

use crate::corridor::Intersection;
use crate::signal::{PhaseId, TimingPlan};

/// One cycle's start times and greens, indexed by slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleTiming {
    /// Background cycle index.
    pub index: i64,
    pub t: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Light {
    Green,
    Yellow,
    Red,
}

/// Why a plan was turned away.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub time: f64,
    pub intersection: usize,
    pub cycle: i64,
    pub reason: String,
}

/// Cycles of one intersection, contiguous by index. Those that started at or
/// before `now` are committed and never change; the rest may be replaced.
#[derive(Debug, Clone)]
pub struct SignalRuntime {
    pub intersection: usize,
    cycles: Vec<CycleTiming>,
    /// Timing of each cycle as it stood when it began.
    begun: Vec<CycleTiming>,
    yellow: f64,
}

impl SignalRuntime {
    pub fn new(x: &Intersection, now: f64) -> Self {
        let m0 = x.background.cycle_index_at(now);
        let mut rt = SignalRuntime {
            intersection: x.structure.intersection,
            cycles: Vec::new(),
            begun: Vec::new(),
            yellow: x.structure.yellow,
        };
        rt.push_background(x, m0);
        rt
    }

    fn push_background(&mut self, x: &Intersection, m: i64) {
        let lay = x.background.layout(&x.structure, m, 1);
        self.cycles.push(CycleTiming {
            index: m,
            t: lay.t[0].clone(),
            g: lay.g[0].clone(),
        });
    }

    pub fn cycles(&self) -> &[CycleTiming] {
        &self.cycles
    }

    pub fn begun(&self) -> &[CycleTiming] {
        &self.begun
    }

    fn start(&self, c: &CycleTiming, first_slot: usize) -> f64 {
        c.t[first_slot]
    }

    /// Appends background cycles until cycle `m` exists.
    pub fn ensure(&mut self, x: &Intersection, m: i64) {
        while self.cycles.last().expect("never empty").index < m {
            let next = self.cycles.last().unwrap().index + 1;
            self.push_background(x, next);
        }
    }

    /// Appends background cycles until one starts after `time`.
    pub fn ensure_time(&mut self, x: &Intersection, time: f64) {
        let f = x.structure.first_slots()[0];
        while self.start(self.cycles.last().unwrap(), f) <= time {
            let next = self.cycles.last().unwrap().index + 1;
            self.push_background(x, next);
        }
    }

    /// Records cycles that have begun by `now`.
    pub fn commit(&mut self, x: &Intersection, now: f64) {
        self.ensure_time(x, now);
        let f = x.structure.first_slots()[0];
        let done = self.begun.last().map(|c| c.index);
        for c in &self.cycles {
            if c.t[f] <= now && done.is_none_or(|d| c.index > d) {
                self.begun.push(c.clone());
            }
        }
    }

    /// Index of the latest cycle that has begun.
    pub fn in_service(&self) -> i64 {
        self.begun.last().expect("committed at construction").index
    }

    pub fn cycle(&self, m: i64) -> Option<&CycleTiming> {
        let first = self.cycles.first()?.index;
        if m < first {
            return None;
        }
        self.cycles.get((m - first) as usize)
    }

    /// `k` cycles from `first`, background beyond what is planned.
    pub fn plan(&mut self, x: &Intersection, first: i64, k: usize) -> TimingPlan {
        self.ensure(x, first + k as i64 - 1);
        let cs: Vec<&CycleTiming> = (0..k).map(|c| self.cycle(first + c as i64).expect("ensured")).collect();
        TimingPlan {
            intersection: self.intersection,
            first_cycle: first,
            t: cs.iter().map(|c| c.t.clone()).collect(),
            g: cs.iter().map(|c| c.g.clone()).collect(),
        }
    }

    /// Replaces pending cycles with the plan's; the whole plan is refused if it
    /// would alter a begun cycle or start one in the past.
    pub fn apply(&mut self, x: &Intersection, plan: &TimingPlan, now: f64) -> Result<(), Rejection> {
        let f = x.structure.first_slots()[0];
        let reject = |cycle: i64, reason: String| Rejection {
            time: now,
            intersection: self.intersection,
            cycle,
            reason,
        };
        let first_have = self.cycles[0].index;
        let mut replace_from = None;
        for k in 0..plan.cycles() {
            let m = plan.first_cycle + k as i64;
            if m < first_have {
                return Err(reject(m, "cycle precedes the simulation".into()));
            }
            match self.cycle(m) {
                Some(c) if c.t[f] <= now => {
                    if c.t != plan.t[k] || c.g != plan.g[k] {
                        return Err(reject(m, "cycle already in service".into()));
                    }
                }
                _ => {
                    if plan.t[k][f] <= now {
                        return Err(reject(m, "planned start has already passed".into()));
                    }
                    replace_from.get_or_insert(k);
                }
            }
        }
        let Some(k0) = replace_from else { return Ok(()) };
        let m0 = plan.first_cycle + k0 as i64;
        self.ensure(x, m0 - 1);
        let keep = (m0 - first_have) as usize;
        self.cycles.truncate(keep);
        for k in k0..plan.cycles() {
            self.cycles.push(CycleTiming {
                index: plan.first_cycle + k as i64,
                t: plan.t[k].clone(),
                g: plan.g[k].clone(),
            });
        }
        Ok(())
    }

    /// Light shown to `slot` at `time`; the green and yellow intervals are closed.
    pub fn light(&self, slot: usize, time: f64) -> Light {
        for c in &self.cycles {
            let (t, g) = (c.t[slot], c.g[slot]);
            if time >= t && time <= t + g {
                return Light::Green;
            }
            if time > t + g && time <= t + g + self.yellow {
                return Light::Yellow;
            }
        }
        Light::Red
    }

    /// Earliest time ≥ `time` at which `slot` shows green or yellow, if planned.
    pub fn next_open(&self, slot: usize, time: f64) -> Option<f64> {
        for c in &self.cycles {
            let (t, end) = (c.t[slot], c.t[slot] + c.g[slot] + self.yellow);
            if time <= end {
                return Some(time.max(t));
            }
        }
        None
    }

    /// Phase changes in `(t0, t1]`, in time order.
    pub fn changes(&self, phases: &[PhaseId], t0: f64, t1: f64) -> Vec<(f64, PhaseId, Light)> {
        let mut out = Vec::new();
        for c in &self.cycles {
            for (j, &p) in phases.iter().enumerate() {
                let t = c.t[j];
                let y = t + c.g[j];
                for (at, l) in [(t, Light::Green), (y, Light::Yellow), (y + self.yellow, Light::Red)] {
                    if at > t0 && at <= t1 {
                        out.push((at, p, l));
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }
}
