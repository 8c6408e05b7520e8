//! Time-triggered rolling horizon: the background pass-through, the
//! route-level deterministic baseline, and the hierarchical stochastic controller.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bus::{BusLocation, BusState, DwellDist};
use crate::corridor::{Corridor, Weights};
use crate::lower::{build_lower, solve_lower, sample_saa, LowerBus, LowerInstance, ShiftLimit};
use crate::milp::{solve_milp, Budget, MilpProblem, SolveStatus};
use crate::signal::{validate_corridor, Boundary, DualRingStructure, PlanCheck, TimingPlan};
use crate::sim::{
    BusCommand, Commands, CycleTiming, DelayProxyInputs, EventTrace, PositionSample, Rejection, SimConfig, Simulator,
    Snapshot,
};
use crate::upper::{build_upper, extract_guidance, BusStart, Guidance, SignalWindow, UpperBus, UpperInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Blank,
    RtspSa,
    HierTspSa,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Blank, ControllerKind::RtspSa, ControllerKind::HierTspSa];

    pub fn tag(self) -> &'static str {
        match self {
            ControllerKind::Blank => "blank",
            ControllerKind::RtspSa => "rtsp_sa",
            ControllerKind::HierTspSa => "hier_tsp_sa",
        }
    }

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Blank => "Blank",
            ControllerKind::RtspSa => "RTSP-SA",
            ControllerKind::HierTspSa => "HierTSP-SA",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ControllerKind::ALL.into_iter().find(|k| k.tag() == s).ok_or_else(|| {
            let tags: Vec<&str> = ControllerKind::ALL.iter().map(|k| k.tag()).collect();
            format!("unknown controller `{s}`; expected one of {}", tags.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Cycles per horizon.
    pub k: usize,
    /// Seconds between ticks.
    pub period: f64,
    pub n_saa: usize,
    pub weights: Weights,
    pub upper_nodes: usize,
    pub lower_nodes: usize,
    /// Optional wall-clock cap per solve, seconds. Off by default so runs stay reproducible.
    pub time_limit: Option<f64>,
    /// Per-tick wall time above which a warning is logged, seconds.
    pub tick_budget: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            k: 3,
            period: 20.0,
            n_saa: 50,
            weights: Weights::default(),
            upper_nodes: 20_000,
            lower_nodes: 5_000,
            time_limit: None,
            tick_budget: 2.0,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self, kind: ControllerKind) -> Result<(), String> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(format!("period must be positive, got {}", self.period));
        }
        if kind == ControllerKind::Blank {
            return Ok(());
        }
        if self.k < 2 {
            return Err(format!("horizon needs at least 2 cycles, got {}", self.k));
        }
        if !(self.weights.w_b >= 0.0 && self.weights.w_c >= 0.0) {
            return Err("weights must be nonnegative".into());
        }
        if kind == ControllerKind::HierTspSa && self.n_saa == 0 {
            return Err("n_saa must be at least 1".into());
        }
        if self.upper_nodes == 0 || self.lower_nodes == 0 {
            return Err("node limits must be positive".into());
        }
        if let Some(t) = self.time_limit {
            if !(t > 0.0) {
                return Err(format!("time_limit must be positive, got {t}"));
            }
        }
        Ok(())
    }

    fn budget(&self, nodes: usize) -> Budget {
        Budget {
            max_nodes: nodes,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
        }
    }
}

/// Trigger times 0, period, 2·period, … strictly before `horizon`.
pub fn schedule_ticks(period: f64, horizon: f64) -> Vec<f64> {
    assert!(period > 0.0, "period must be positive");
    let mut out = vec![0.0];
    let mut n = 1u64;
    loop {
        let t = n as f64 * period;
        if t >= horizon {
            break;
        }
        out.push(t);
        n += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveRecord {
    pub time: f64,
    pub stage: Stage,
    pub intersection: Option<usize>,
    pub status: String,
    pub objective: Option<f64>,
    pub nodes: usize,
    pub wall_ms: f64,
}

/// One trigger: what was seen, what was sent, and how the solves went.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerTick {
    pub time: f64,
    pub snapshot: Snapshot,
    /// `None` when nothing was sent and earlier commands stand.
    pub commands: Option<Commands>,
    pub records: Vec<SolveRecord>,
    pub notes: Vec<String>,
    pub wall_ms: f64,
}

fn status_tag(s: SolveStatus) -> String {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::BudgetExceeded => "budget_exceeded",
    }
    .into()
}

/// Cycles of `plan` that have not begun at `now`.
fn pending(plan: &TimingPlan, s: &DualRingStructure, now: f64) -> Option<TimingPlan> {
    let first = (0..plan.cycles()).find(|&k| plan.cycle_start(s, k) > now)?;
    Some(TimingPlan {
        intersection: plan.intersection,
        first_cycle: plan.first_cycle + first as i64,
        t: plan.t[first..].to_vec(),
        g: plan.g[first..].to_vec(),
    })
}

/// Background timing for the cycles after the one in service.
pub fn tick_blank(c: &Corridor, snap: &Snapshot) -> Commands {
    let plans = c
        .intersections
        .iter()
        .zip(&snap.signals)
        .filter_map(|(x, sig)| {
            let k = sig.plan.cycles();
            let lay = x.background.layout(&x.structure, sig.in_service, k.max(2));
            pending(&lay, &x.structure, snap.time)
        })
        .collect();
    Commands { plans, buses: vec![] }
}

fn open_at(plan: &TimingPlan, s: &DualRingStructure, r: f64) -> Option<(usize, f64)> {
    let j = s.bus_slot();
    (0..plan.cycles()).find_map(|k| {
        let (t, g) = (plan.t[k][j], plan.g[k][j]);
        (r <= t + g + s.yellow).then_some((k, r.max(t)))
    })
}

fn start_of(c: &Corridor, b: &BusState, now: f64) -> Option<BusStart> {
    let n_int = c.intersections.len();
    match b.location {
        BusLocation::Pending => Some(BusStart::Stop {
            stop: 0,
            t_arr: c.timetable.t_opt(b.id, 0),
            dwell: c.dwell.at(0).mean(),
        }),
        BusLocation::Dwelling { stop, elapsed } if stop < n_int => Some(BusStart::Stop {
            stop,
            t_arr: now - elapsed,
            dwell: c.dwell.at(stop).conditional(elapsed).mean(),
        }),
        BusLocation::Approach { segment, remaining } => Some(BusStart::Approach {
            segment,
            time: now,
            remaining,
        }),
        BusLocation::Departure { segment, remaining } => Some(BusStart::Departure {
            segment,
            time: now,
            remaining,
        }),
        _ => None,
    }
}

/// Consecutive crossings that a do-nothing bus makes inside the snapshot's
/// horizon, waiting for the next opening and dwelling the mean.
fn reachable_crossings(c: &Corridor, snap: &Snapshot, start: &BusStart) -> usize {
    let v = c.v_max;
    let first = start.first_crossing();
    let mut ready = match *start {
        BusStart::Stop { t_arr, dwell, .. } => t_arr + dwell,
        BusStart::Approach { segment, time, remaining } => time + (remaining - c.segments[segment].l_app) / v,
        BusStart::Departure { segment, time, remaining } => time + remaining / v + c.dwell.at(segment + 1).mean(),
    };
    let mut n = 0;
    for i in first..c.intersections.len() {
        let seg = &c.segments[i];
        let r = ready + seg.l_app / v;
        let Some((_, pass)) = open_at(&snap.signals[i].plan, &c.intersections[i].structure, r) else {
            break;
        };
        n += 1;
        ready = pass + seg.l_dep / v + c.dwell.at(i + 1).mean();
    }
    n
}

/// Route-level instance over the snapshot: the cycle in service is pinned and
/// each bus carries the crossings it can make inside the horizon.
pub fn upper_instance<'a>(c: &'a Corridor, snap: &Snapshot, p: &ControllerParams) -> UpperInstance<'a> {
    let signals = snap
        .signals
        .iter()
        .map(|sig| SignalWindow {
            first_cycle: sig.in_service,
            boundary: Boundary::CommittedCycle {
                t: sig.plan.t[0].clone(),
                g: sig.plan.g[0].clone(),
            },
        })
        .collect();
    let mut buses = Vec::new();
    for b in &snap.buses {
        let Some(start) = start_of(c, b, snap.time) else { continue };
        let crossings = reachable_crossings(c, snap, &start);
        // a departed bus still has its stop arrival to steer
        if crossings > 0 || matches!(start, BusStart::Departure { .. }) {
            buses.push(UpperBus {
                id: b.id,
                start,
                crossings,
            });
        }
    }
    UpperInstance {
        corridor: c,
        signals,
        buses,
        k: p.k,
        weights: p.weights,
        big_m: UpperInstance::default_big_m(c, p.k),
    }
}

fn solve_route(
    c: &Corridor,
    snap: &Snapshot,
    p: &ControllerParams,
    records: &mut Vec<SolveRecord>,
) -> Result<Guidance, String> {
    let inst = upper_instance(c, snap, p);
    let clock = Instant::now();
    let out = build_upper(&inst).map_err(|e| e.to_string()).and_then(|m| {
        let sol = solve_milp(&m.problem, &p.budget(p.upper_nodes));
        let g = extract_guidance(&inst, &m, &sol).map_err(|e| e.to_string());
        Ok((sol, g))
    });
    let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    let (status, objective, nodes) = match &out {
        Ok((sol, g)) => (status_tag(sol.status), g.as_ref().ok().map(|g| g.objective), sol.nodes),
        Err(e) => (format!("error: {e}"), None, 0),
    };
    records.push(SolveRecord {
        time: snap.time,
        stage: Stage::Upper,
        intersection: None,
        status,
        objective,
        nodes,
        wall_ms,
    });
    out.and_then(|(_, g)| g)
}

/// Stop-line and stop targets for every planned crossing, plus the pending part of each plan.
fn route_commands(c: &Corridor, snap: &Snapshot, g: &Guidance, plans: &[TimingPlan]) -> Commands {
    let plans = plans
        .iter()
        .zip(&c.intersections)
        .filter_map(|(p, x)| pending(p, &x.structure, snap.time))
        .collect();
    let mut buses = Vec::new();
    for b in &snap.buses {
        if let BusLocation::Departure { segment, .. } = b.location {
            if let Some(at) = g.arrival(b.id, segment + 1) {
                buses.push(BusCommand {
                    bus: b.id,
                    segment,
                    line_target: None,
                    stop_target: Some(at),
                });
            }
        }
    }
    for pc in &g.crossings {
        buses.push(BusCommand {
            bus: pc.bus,
            segment: pc.intersection,
            line_target: Some(pc.pass),
            stop_target: Some(pc.t_next),
        });
    }
    Commands { plans, buses }
}

/// Single deterministic route-level solve with mean dwell.
pub fn tick_rtsp_sa(c: &Corridor, snap: &Snapshot, p: &ControllerParams) -> (Option<Commands>, Vec<SolveRecord>, Vec<String>) {
    let mut records = Vec::new();
    match solve_route(c, snap, p, &mut records) {
        Ok(g) => (Some(route_commands(c, snap, &g, &g.plans)), records, vec![]),
        Err(e) => {
            let note = format!("route-level solve failed at {:.1} s: {e}; earlier commands stand", snap.time);
            log::warn!("{note}");
            (None, records, vec![note])
        }
    }
}

/// Start bounds on coordinated phases that keep the band to each neighbour's
/// route-level plan whatever that neighbour's own lower model does.
fn shift_limits(c: &Corridor, plans: &[TimingPlan], i: usize) -> Vec<ShiftLimit> {
    let x = &c.intersections[i];
    let s = &x.structure;
    let neighbours: Vec<usize> = [i.checked_sub(1), Some(i + 1).filter(|&n| n < plans.len())].into_iter().flatten().collect();
    let mut out = Vec::new();
    for &phase in &s.coordinated {
        let Some(j) = s.slot(phase) else { continue };
        for k in 1..plans[i].cycles() {
            let m = plans[i].first_cycle + k as i64;
            let mut half = f64::INFINITY;
            for &nb in &neighbours {
                let y = &c.intersections[nb];
                let Some(jb) = y.structure.slot(phase) else { continue };
                let cb = m - plans[nb].first_cycle;
                if cb < 0 || cb as usize >= plans[nb].cycles() {
                    continue;
                }
                let band = (x.background.phase_start(s, m, j) - y.background.phase_start(&y.structure, m, jb)).abs() + c.delta_c;
                let gap = (plans[i].t[k][j] - plans[nb].t[cb as usize][jb]).abs();
                half = half.min(((band - gap) / 2.0).max(0.0));
            }
            if half.is_finite() {
                let t = plans[i].t[k][j];
                out.push(ShiftLimit {
                    cycle: k,
                    slot: j,
                    lo: t - half,
                    hi: t + half,
                });
            }
        }
    }
    out
}

fn mix(seed: u64, tick: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tick.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (i as u64).wrapping_mul(0xA076_1D64_78BD_642F)
}

/// Lower instance at `i` and its starting point (route-level plan, stop-line target per bus).
fn lower_instance<'a>(
    c: &'a Corridor,
    snap: &Snapshot,
    p: &ControllerParams,
    g: &Guidance,
    window: &SignalWindow,
    i: usize,
    seed: u64,
) -> (LowerInstance<'a>, Vec<f64>) {
    let seg = &c.segments[i];
    let n_int = c.intersections.len();
    let mut buses = Vec::new();
    let mut start_r = Vec::new();
    let mut keep_open = Vec::new();
    for pc in g.crossings.iter().filter(|pc| pc.intersection == i) {
        let state = snap.buses.iter().find(|b| b.id == pc.bus);
        let next = state.and_then(|b| b.next_intersection(n_int));
        let carried = if next == Some(i) && pc.cycle + 1 < p.k {
            let b = state.expect("found above");
            match b.location {
                BusLocation::Dwelling { elapsed, .. } => Some((snap.time - elapsed, c.dwell.at(i).conditional(elapsed), seg.l_app)),
                BusLocation::Approach { remaining, .. } => Some((snap.time, DwellDist::Uniform { min: 0.0, max: 0.0 }, remaining)),
                BusLocation::Pending | BusLocation::Departure { .. } => Some((pc.t_arr, *c.dwell.at(i), seg.l_app)),
                BusLocation::Finished => None,
            }
        } else {
            None
        };
        match carried {
            Some((t_arr, dwell, l_app)) => {
                buses.push(LowerBus {
                    id: pc.bus,
                    t_arr,
                    dwell,
                    l_app,
                    l_dep: seg.l_dep,
                    cycle: pc.cycle,
                    t_upp: pc.t_next,
                });
                start_r.push(pc.pass);
            }
            None => keep_open.push((pc.cycle, pc.pass)),
        }
    }
    let inst = LowerInstance {
        corridor: c,
        intersection: i,
        window: window.clone(),
        k: p.k,
        buses,
        limits: shift_limits(c, &g.plans, i),
        keep_open,
        weights: p.weights,
        n_saa: p.n_saa,
        seed,
    };
    (inst, start_r)
}

/// Route-level solve, then one stochastic solve per intersection in parallel,
/// merged into plans and stop-line targets.
pub fn tick_hier(
    c: &Corridor,
    snap: &Snapshot,
    p: &ControllerParams,
    seed: u64,
    tick: u64,
) -> (Option<Commands>, Vec<SolveRecord>, Vec<String>) {
    let mut records = Vec::new();
    let mut notes = Vec::new();
    let g = match solve_route(c, snap, p, &mut records) {
        Ok(g) => g,
        Err(e) => {
            let note = format!("route-level solve failed at {:.1} s: {e}; earlier commands stand", snap.time);
            log::warn!("{note}");
            return (None, records, vec![note]);
        }
    };
    let windows = upper_instance(c, snap, p).signals;
    let n_int = c.intersections.len();
    let results: Vec<_> = (0..n_int)
        .into_par_iter()
        .map(|i| {
            let (inst, start_r) = lower_instance(c, snap, p, &g, &windows[i], i, mix(seed, tick, i));
            let clock = Instant::now();
            let samples = sample_saa(&inst);
            let res = solve_lower(&inst, &samples, Some((&g.plans[i], &start_r)), &p.budget(p.lower_nodes));
            let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            let ids: Vec<usize> = inst.buses.iter().map(|b| b.id).collect();
            (ids, res, wall_ms)
        })
        .collect();

    let mut plans = g.plans.clone();
    let mut targets: Vec<(usize, usize, f64)> = Vec::new();
    for (i, (ids, res, wall_ms)) in results.into_iter().enumerate() {
        let (status, objective, nodes) = match &res {
            Ok((d, sol)) => (status_tag(sol.status), Some(d.objective), sol.nodes),
            Err(e) => (format!("error: {e}"), None, 0),
        };
        records.push(SolveRecord {
            time: snap.time,
            stage: Stage::Lower,
            intersection: Some(i),
            status,
            objective,
            nodes,
            wall_ms,
        });
        match res {
            Ok((d, _)) => {
                plans[i] = d.plan;
                targets.extend(ids.into_iter().zip(d.r).map(|(b, r)| (b, i, r)));
            }
            Err(e) => {
                let note = format!("intersection {i}: lower solve failed at {:.1} s ({e}); route-level plan kept", snap.time);
                log::warn!("{note}");
                notes.push(note);
            }
        }
    }

    let checks: Vec<PlanCheck<'_>> = plans
        .iter()
        .zip(&c.intersections)
        .map(|(plan, x)| PlanCheck {
            plan,
            structure: &x.structure,
            background: &x.background,
            demand: &x.demand,
        })
        .collect();
    let bad = match validate_corridor(&checks, c.delta_c) {
        Ok(v) => (!v.is_empty()).then(|| format!("{} violations, first {}", v.len(), v[0].constraint)),
        Err(e) => Some(e.to_string()),
    };
    let mut cmds = match bad {
        Some(why) => {
            let note = format!("merged plans rejected at {:.1} s ({why}); route-level plans sent", snap.time);
            log::warn!("{note}");
            notes.push(note);
            targets.clear();
            route_commands(c, snap, &g, &g.plans)
        }
        None => route_commands(c, snap, &g, &plans),
    };
    for (bus, i, r) in targets {
        if let Some(bc) = cmds.buses.iter_mut().find(|bc| bc.bus == bus && bc.segment == i) {
            bc.line_target = Some(r);
        }
    }
    (Some(cmds), records, notes)
}

/// The route-level model of a tick and, when it solves, every lower model, named for dumps.
pub fn tick_models(
    c: &Corridor,
    snap: &Snapshot,
    p: &ControllerParams,
    seed: u64,
    tick: u64,
) -> Result<Vec<(String, MilpProblem<f64>)>, String> {
    let inst = upper_instance(c, snap, p);
    let upper = build_upper(&inst).map_err(|e| e.to_string())?;
    let mut out = vec![(format!("upper_t{:.0}", snap.time), upper.problem)];
    let g = solve_route(c, snap, p, &mut Vec::new())?;
    for i in 0..c.intersections.len() {
        let (li, _) = lower_instance(c, snap, p, &g, &inst.signals[i], i, mix(seed, tick, i));
        match build_lower(&li, &sample_saa(&li)) {
            Ok(m) => out.push((format!("lower_t{:.0}_i{i}", snap.time), m.problem)),
            Err(e) => log::warn!("intersection {i}: {e}"),
        }
    }
    Ok(out)
}

/// One controller bound to a corridor; keeps a tick counter for reseeding the SAA draws.
pub struct Controller<'a> {
    corridor: &'a Corridor,
    kind: ControllerKind,
    params: ControllerParams,
    seed: u64,
    ticks: u64,
}

impl<'a> Controller<'a> {
    pub fn new(corridor: &'a Corridor, kind: ControllerKind, params: ControllerParams, seed: u64) -> Result<Self, String> {
        params.validate(kind)?;
        Ok(Controller {
            corridor,
            kind,
            params,
            seed,
            ticks: 0,
        })
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn tick(&mut self, snap: Snapshot) -> ControllerTick {
        let clock = Instant::now();
        let c = self.corridor;
        let (commands, records, notes) = match self.kind {
            ControllerKind::Blank => (Some(tick_blank(c, &snap)), vec![], vec![]),
            ControllerKind::RtspSa => tick_rtsp_sa(c, &snap, &self.params),
            ControllerKind::HierTspSa => tick_hier(c, &snap, &self.params, self.seed, self.ticks),
        };
        self.ticks += 1;
        let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        if wall_ms > self.params.tick_budget * 1e3 {
            log::warn!("tick at {:.1} s took {wall_ms:.0} ms", snap.time);
        }
        ControllerTick {
            time: snap.time,
            snapshot: snap,
            commands,
            records,
            notes,
            wall_ms,
        }
    }
}

/// Everything a closed-loop run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: EventTrace,
    pub rejections: Vec<Rejection>,
    pub lock_violations: usize,
    pub delay: DelayProxyInputs,
    pub positions: Vec<PositionSample>,
    /// Cycles that began, per intersection, as they ran.
    pub executed: Vec<Vec<CycleTiming>>,
    /// Ticks without their snapshots.
    pub ticks: Vec<ControllerTick>,
}

impl RunOutput {
    pub fn records(&self) -> impl Iterator<Item = &SolveRecord> {
        self.ticks.iter().flat_map(|t| &t.records)
    }
}

/// Advances the simulator to each trigger, ticks, applies the commands, and runs out the clock.
pub fn run_closed_loop(
    c: &Corridor,
    kind: ControllerKind,
    params: &ControllerParams,
    cfg: SimConfig,
) -> Result<RunOutput, String> {
    let mut sim = Simulator::new(c, cfg)?;
    let mut ctl = Controller::new(c, kind, *params, cfg.seed)?;
    let mut ticks = Vec::new();
    for t in schedule_ticks(params.period, cfg.end) {
        sim.run_until(t);
        let snap = sim.snapshot(params.k.max(2));
        let mut tick = ctl.tick(snap);
        if let Some(cmds) = &tick.commands {
            sim.apply_commands(cmds);
        }
        tick.snapshot.buses.clear();
        tick.snapshot.signals.clear();
        ticks.push(tick);
    }
    sim.run_to_end();
    Ok(RunOutput {
        trace: sim.trace().clone(),
        rejections: sim.rejections().to_vec(),
        lock_violations: sim.lock_violations(),
        delay: sim.delay_inputs(),
        positions: sim.positions().to_vec(),
        executed: sim.signals().iter().map(|s| s.begun().to_vec()).collect(),
        ticks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::corridor;

    fn sched(buses: usize, headway: f64) -> Vec<Vec<f64>> {
        // 300 + 300 m at 12 m/s is 50 s; allow 25 s dwell and 30 s slack per segment
        (0..buses).map(|n| (0..3).map(|s| 40.0 + n as f64 * headway + s as f64 * 105.0).collect()).collect()
    }

    #[test]
    fn tick_schedule() {
        assert_eq!(schedule_ticks(20.0, 100.0), vec![0.0, 20.0, 40.0, 60.0, 80.0]);
        assert_eq!(schedule_ticks(150.0, 100.0), vec![0.0]);
    }

    #[test]
    fn kind_tags_round_trip() {
        for k in ControllerKind::ALL {
            assert_eq!(k.tag().parse::<ControllerKind>().unwrap(), k);
        }
        let err = "hier".parse::<ControllerKind>().unwrap_err();
        assert!(err.contains("blank, rtsp_sa, hier_tsp_sa"), "{err}");
        assert!(ControllerParams::default().validate(ControllerKind::HierTspSa).is_ok());
        let bad = ControllerParams { k: 1, ..Default::default() };
        assert!(bad.validate(ControllerKind::RtspSa).is_err());
    }

    #[test]
    fn blank_sends_background() {
        let c = corridor(&[0.0, 30.0], (20.0, 30.0), sched(1, 120.0));
        let mut sim = Simulator::new(&c, SimConfig { end: 400.0, ..Default::default() }).unwrap();
        sim.run_until(130.0);
        let snap = sim.snapshot(3);
        let cmds = tick_blank(&c, &snap);
        assert!(cmds.buses.is_empty());
        for (p, x) in cmds.plans.iter().zip(&c.intersections) {
            assert_eq!(p.first_cycle, snap.signals[p.intersection].in_service + 1);
            assert_eq!(*p, x.background.layout(&x.structure, p.first_cycle, p.cycles()));
        }
    }

    #[test]
    fn no_buses_gives_background() {
        let c = corridor(&[0.0, 30.0], (20.0, 30.0), vec![]);
        let mut sim = Simulator::new(&c, SimConfig { end: 400.0, ..Default::default() }).unwrap();
        sim.run_until(150.0);
        let snap = sim.snapshot(3);
        let p = ControllerParams { n_saa: 5, ..Default::default() };
        for kind in [ControllerKind::RtspSa, ControllerKind::HierTspSa] {
            let mut ctl = Controller::new(&c, kind, p, 1).unwrap();
            let tick = ctl.tick(snap.clone());
            let cmds = tick.commands.unwrap();
            assert!(cmds.buses.is_empty());
            assert_eq!(cmds.plans.len(), 2);
            for (plan, x) in cmds.plans.iter().zip(&c.intersections) {
                let bg = x.background.layout(&x.structure, plan.first_cycle, plan.cycles());
                for k in 0..plan.cycles() {
                    for j in 0..bg.t[k].len() {
                        assert!((plan.t[k][j] - bg.t[k][j]).abs() < 1e-6, "{kind}");
                        assert!((plan.g[k][j] - bg.g[k][j]).abs() < 1e-6, "{kind}");
                    }
                }
            }
            let lowers = tick.records.iter().filter(|r| r.stage == Stage::Lower).count();
            assert_eq!(lowers, if kind == ControllerKind::HierTspSa { 2 } else { 0 });
        }
    }

    #[test]
    fn shift_limits_split_the_slack() {
        let c = corridor(&[0.0, 30.0, 60.0], (20.0, 30.0), vec![]);
        let plans: Vec<TimingPlan> = c
            .intersections
            .iter()
            .map(|x| x.background.layout(&x.structure, 0, 3))
            .collect();
        let s = &c.intersections[1].structure;
        let lim = shift_limits(&c, &plans, 1);
        assert_eq!(lim.len(), s.coordinated.len() * 2);
        for l in &lim {
            let t = plans[1].t[l.cycle][l.slot];
            assert!((t - l.lo - c.delta_c / 2.0).abs() < 1e-9);
            assert!((l.hi - t - c.delta_c / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_loop_respects_committed_cycles() {
        let c = corridor(&[0.0, 30.0], (15.0, 35.0), sched(3, 120.0));
        let cfg = SimConfig { end: 600.0, seed: 3, ..Default::default() };
        for period in [10.0, 20.0, 50.0] {
            for kind in [ControllerKind::RtspSa, ControllerKind::HierTspSa] {
                let p = ControllerParams { period, n_saa: 10, ..Default::default() };
                let out = run_closed_loop(&c, kind, &p, cfg).unwrap();
                assert!(out.rejections.is_empty(), "{kind} at {period}: {:?}", out.rejections);
                assert_eq!(out.lock_violations, 0);
                assert!(out.ticks.iter().all(|t| t.commands.is_some()), "{kind} at {period}");
                let guided = out.ticks.iter().filter(|t| !t.commands.as_ref().unwrap().buses.is_empty()).count();
                assert!(guided > out.ticks.len() / 2, "{kind} at {period}: {guided}");
            }
        }
    }

    #[test]
    fn degenerate_dwell_collapses() {
        let c = corridor(&[0.0, 30.0], (25.0, 25.0), sched(3, 120.0));
        let cfg = SimConfig { end: 600.0, seed: 5, ..Default::default() };
        let p = ControllerParams { n_saa: 8, ..Default::default() };
        let a = run_closed_loop(&c, ControllerKind::RtspSa, &p, cfg).unwrap();
        let b = run_closed_loop(&c, ControllerKind::HierTspSa, &p, cfg).unwrap();
        let ca: Vec<_> = a.ticks.iter().map(|t| &t.commands).collect();
        let cb: Vec<_> = b.ticks.iter().map(|t| &t.commands).collect();
        assert_eq!(ca, cb);
        let arr = a.trace.arrivals(3, 3);
        for (n, row) in arr.iter().enumerate() {
            for (s, t) in row.iter().enumerate() {
                let t = t.expect("every stop reached");
                assert!((t - c.timetable.t_opt(n, s)).abs() < 1e-6, "bus {n} stop {s}: {t}");
            }
        }
    }
}
