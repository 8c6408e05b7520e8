//! Fixed-step corridor simulator. Steps are Δt long but every bus event is
//! placed at its exact time inside the step.

pub mod proxy;
pub mod signals;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::bus::{sample_dwell, visit_stream, BusLocation, BusState};
use crate::corridor::Corridor;
use crate::signal::TimingPlan;
pub use proxy::{car_delay_proxy, DelayProxy, DelayProxyInputs, PhaseDemand};
pub use signals::{CycleTiming, Light, Rejection, SignalRuntime};
pub use trace::{Event, EventKind, EventTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub end: f64,
    pub seed: u64,
    /// Sample bus positions at this interval for trajectory export.
    pub position_every: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            end: 3600.0,
            seed: 0,
            position_every: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.end >= 0.0) || !self.end.is_finite() {
            return Err(format!("end time must be finite and non-negative, got {}", self.end));
        }
        if let Some(p) = self.position_every {
            if !(p > 0.0) {
                return Err("position sampling interval must be positive".into());
            }
        }
        Ok(())
    }
}

/// Target times for one bus on one segment; the bus drives at
/// min(v_max, distance / (target − now)) towards each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusCommand {
    pub bus: usize,
    pub segment: usize,
    /// Stop-line arrival target on the approach.
    pub line_target: Option<f64>,
    /// Downstream stop arrival target after the crossing.
    pub stop_target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Commands {
    pub plans: Vec<TimingPlan>,
    pub buses: Vec<BusCommand>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSnapshot {
    pub in_service: i64,
    /// From the in-service cycle onward.
    pub plan: TimingPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub buses: Vec<BusState>,
    pub signals: Vec<SignalSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositionSample {
    pub time: f64,
    pub bus: usize,
    pub position: f64,
    pub speed: f64,
}

#[derive(Debug, Clone)]
struct BusRuntime {
    state: BusState,
    arrived_at: f64,
    dwell: f64,
    /// Per segment: stop-line and downstream stop targets.
    line_target: Vec<Option<f64>>,
    stop_target: Vec<Option<f64>>,
}

pub struct Simulator<'a> {
    corridor: &'a Corridor,
    cfg: SimConfig,
    steps: u64,
    buses: Vec<BusRuntime>,
    signals: Vec<SignalRuntime>,
    trace: EventTrace,
    rejections: Vec<Rejection>,
    positions: Vec<PositionSample>,
}

impl<'a> Simulator<'a> {
    pub fn new(corridor: &'a Corridor, cfg: SimConfig) -> Result<Self, String> {
        cfg.validate()?;
        if corridor.segments.len() != corridor.intersections.len() {
            return Err("every segment needs exactly one intersection".into());
        }
        let signals = corridor
            .intersections
            .iter()
            .map(|x| {
                let mut rt = SignalRuntime::new(x, 0.0);
                rt.commit(x, 0.0);
                rt
            })
            .collect();
        let buses = (0..corridor.timetable.buses())
            .map(|n| BusRuntime {
                state: BusState {
                    id: n,
                    location: BusLocation::Pending,
                    last_arrival: None,
                    position: 0.0,
                    speed: 0.0,
                    v_max: corridor.v_max,
                },
                arrived_at: f64::NAN,
                dwell: 0.0,
                line_target: vec![None; corridor.segments.len()],
                stop_target: vec![None; corridor.segments.len()],
            })
            .collect();
        Ok(Simulator {
            corridor,
            cfg,
            steps: 0,
            buses,
            signals,
            trace: EventTrace::default(),
            rejections: Vec::new(),
            positions: Vec::new(),
        })
    }

    pub fn now(&self) -> f64 {
        self.steps as f64 * self.cfg.dt
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn done(&self) -> bool {
        self.now() >= self.cfg.end - 1e-9
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    pub fn positions(&self) -> &[PositionSample] {
        &self.positions
    }

    pub fn signals(&self) -> &[SignalRuntime] {
        &self.signals
    }

    pub fn bus_states(&self) -> Vec<BusState> {
        self.buses.iter().map(|b| b.state).collect()
    }

    pub fn snapshot(&mut self, lookahead: usize) -> Snapshot {
        let c = self.corridor;
        let signals = self
            .signals
            .iter_mut()
            .zip(&c.intersections)
            .map(|(rt, x)| {
                let m = rt.in_service();
                SignalSnapshot {
                    in_service: m,
                    plan: rt.plan(x, m, lookahead.max(1)),
                }
            })
            .collect();
        Snapshot {
            time: self.now(),
            buses: self.bus_states(),
            signals,
        }
    }

    /// Plans touching a begun cycle are refused whole and recorded. A bus named
    /// in the commands drops its earlier targets; other buses keep theirs.
    pub fn apply_commands(&mut self, cmds: &Commands) {
        let now = self.now();
        for p in &cmds.plans {
            let i = p.intersection;
            let x = &self.corridor.intersections[i];
            match self.signals[i].apply(x, p, now) {
                Ok(()) => self.trace.push(
                    now,
                    EventKind::Plan {
                        intersection: i,
                        first_cycle: p.first_cycle,
                        cycles: p.cycles(),
                    },
                ),
                Err(r) => {
                    log::warn!("intersection {i}: plan rejected at {now:.1} s ({})", r.reason);
                    self.trace.push(
                        now,
                        EventKind::Rejected {
                            intersection: i,
                            cycle: r.cycle,
                        },
                    );
                    self.rejections.push(r);
                }
            }
        }
        for bc in &cmds.buses {
            let b = &mut self.buses[bc.bus];
            b.line_target.fill(None);
            b.stop_target.fill(None);
        }
        for bc in &cmds.buses {
            let b = &mut self.buses[bc.bus];
            b.line_target[bc.segment] = bc.line_target;
            b.stop_target[bc.segment] = bc.stop_target;
            self.trace.push(
                now,
                EventKind::Guidance {
                    bus: bc.bus,
                    segment: bc.segment,
                    line_target: bc.line_target,
                    stop_target: bc.stop_target,
                },
            );
        }
    }

    pub fn step(&mut self) {
        let t0 = self.now();
        let t1 = (self.steps + 1) as f64 * self.cfg.dt;
        let c = self.corridor;
        let mut batch = Vec::new();
        for (rt, x) in self.signals.iter_mut().zip(&c.intersections) {
            rt.ensure_time(x, t1 + x.background.cycle);
            for (at, phase, light) in rt.changes(&x.structure.phases(), t0, t1) {
                batch.push(Event {
                    time: at,
                    kind: EventKind::Phase {
                        intersection: rt.intersection,
                        phase,
                        light,
                    },
                });
            }
        }
        for n in 0..self.buses.len() {
            self.advance(n, t0, t1, &mut batch);
        }
        self.trace.extend_sorted(batch);
        for (rt, x) in self.signals.iter_mut().zip(&c.intersections) {
            rt.commit(x, t1);
        }
        self.steps += 1;
        if let Some(every) = self.cfg.position_every {
            let k = (every / self.cfg.dt).round().max(1.0) as u64;
            if self.steps % k == 0 {
                for b in &self.buses {
                    if !matches!(b.state.location, BusLocation::Pending | BusLocation::Finished) {
                        self.positions.push(PositionSample {
                            time: t1,
                            bus: b.state.id,
                            position: b.state.position,
                            speed: b.state.speed,
                        });
                    }
                }
            }
        }
    }

    pub fn run_until(&mut self, time: f64) {
        let time = time.min(self.cfg.end);
        while self.now() < time - 1e-9 {
            self.step();
        }
    }

    pub fn run_to_end(&mut self) {
        self.run_until(self.cfg.end);
    }

    fn arrive(&mut self, n: usize, stop: usize, t: f64, batch: &mut Vec<Event>) {
        let c = self.corridor;
        let last = c.stops() - 1;
        let b = &mut self.buses[n];
        b.arrived_at = t;
        b.dwell = if stop == last {
            0.0
        } else {
            sample_dwell(c.dwell.at(stop), &mut visit_stream(self.cfg.seed, n, stop))
        };
        b.state.location = BusLocation::Dwelling { stop, elapsed: 0.0 };
        b.state.last_arrival = Some((stop, t));
        b.state.position = c.stop_position(stop);
        b.state.speed = 0.0;
        batch.push(Event {
            time: t,
            kind: EventKind::StopArrival { bus: n, stop },
        });
    }

    /// Moves bus `n` from `t0` to `t1`, emitting every event at its exact time.
    fn advance(&mut self, n: usize, t0: f64, t1: f64, batch: &mut Vec<Event>) {
        let c = self.corridor;
        let v_max = c.v_max;
        let last = c.stops() - 1;
        let mut t = t0;
        loop {
            let b = &self.buses[n];
            match b.state.location {
                BusLocation::Finished => break,
                BusLocation::Pending => {
                    let due = c.timetable.t_opt(n, 0);
                    if due > t1 {
                        break;
                    }
                    t = due.max(t);
                    self.arrive(n, 0, t, batch);
                }
                BusLocation::Dwelling { stop, .. } => {
                    let dep = b.arrived_at + b.dwell;
                    if dep > t1 {
                        self.buses[n].state.location = BusLocation::Dwelling {
                            stop,
                            elapsed: t1 - b.arrived_at,
                        };
                        break;
                    }
                    t = dep.max(t);
                    batch.push(Event {
                        time: t,
                        kind: EventKind::StopDeparture { bus: n, stop },
                    });
                    let b = &mut self.buses[n];
                    b.state.location = if stop == last {
                        BusLocation::Finished
                    } else {
                        BusLocation::Approach {
                            segment: stop,
                            remaining: c.segments[stop].l_app,
                        }
                    };
                }
                BusLocation::Approach { segment, remaining } => {
                    let base = c.stop_position(segment);
                    let seg = &c.segments[segment];
                    if remaining <= 0.0 {
                        let slot = c.intersections[segment].structure.bus_slot();
                        match self.signals[segment].next_open(slot, t) {
                            Some(open) if open <= t1 => {
                                t = open;
                                batch.push(Event {
                                    time: t,
                                    kind: EventKind::Crossing { bus: n, intersection: segment },
                                });
                                let b = &mut self.buses[n];
                                b.state.location = BusLocation::Departure {
                                    segment,
                                    remaining: seg.l_dep,
                                };
                            }
                            _ => {
                                self.buses[n].state.speed = 0.0;
                                break;
                            }
                        }
                        continue;
                    }
                    let target = b.line_target[segment];
                    let (v, at) = drive(remaining, t, target, v_max);
                    let b = &mut self.buses[n];
                    b.state.speed = v;
                    if at <= t1 {
                        t = at;
                        b.state.location = BusLocation::Approach { segment, remaining: 0.0 };
                        b.state.position = base + seg.l_app;
                    } else {
                        let rem = remaining - v * (t1 - t);
                        b.state.location = BusLocation::Approach { segment, remaining: rem };
                        b.state.position = base + seg.l_app - rem;
                        break;
                    }
                }
                BusLocation::Departure { segment, remaining } => {
                    let seg = &c.segments[segment];
                    let base = c.stop_position(segment) + seg.l_app;
                    let target = b.stop_target[segment];
                    let (v, at) = drive(remaining, t, target, v_max);
                    let b = &mut self.buses[n];
                    b.state.speed = v;
                    if at <= t1 {
                        t = at;
                        self.arrive(n, segment + 1, t, batch);
                    } else {
                        let rem = remaining - v * (t1 - t);
                        b.state.location = BusLocation::Departure { segment, remaining: rem };
                        b.state.position = base + seg.l_dep - rem;
                        break;
                    }
                }
            }
        }
    }

    /// Executed greens of every begun cycle that started before the end time.
    pub fn delay_inputs(&self) -> DelayProxyInputs {
        let c = self.corridor;
        let mut phases = Vec::new();
        for (rt, x) in self.signals.iter().zip(&c.intersections) {
            let s = &x.structure;
            let f = s.first_slots()[0];
            let cycles: Vec<&CycleTiming> = rt.cycles().iter().filter(|k| k.t[f] < self.cfg.end.max(self.now())).collect();
            let begun: Vec<&CycleTiming> = cycles.into_iter().filter(|k| k.t[f] <= self.now()).collect();
            for j in 0..s.num_slots() {
                let greens = begun
                    .iter()
                    .map(|k| {
                        let len = rt
                            .cycle(k.index + 1)
                            .map_or(x.background.cycle, |nx| nx.t[f] - k.t[f]);
                        (len, k.g[j])
                    })
                    .collect();
                phases.push(PhaseDemand {
                    intersection: s.intersection,
                    slot: j,
                    volume: x.demand.volumes[j],
                    saturation: x.demand.saturation[j],
                    greens,
                });
            }
        }
        DelayProxyInputs { phases }
    }

    /// Begun cycles whose executed timing differs from the timing they began with.
    pub fn lock_violations(&self) -> usize {
        self.signals
            .iter()
            .map(|rt| {
                rt.begun()
                    .iter()
                    .filter(|b| rt.cycle(b.index).is_none_or(|c| c != *b))
                    .count()
            })
            .sum()
    }
}

/// Speed towards an optional target time and the resulting arrival.
fn drive(remaining: f64, now: f64, target: Option<f64>, v_max: f64) -> (f64, f64) {
    match target {
        Some(tg) if tg > now && remaining / (tg - now) < v_max => (remaining / (tg - now), tg),
        _ => (v_max, now + remaining / v_max),
    }
}
