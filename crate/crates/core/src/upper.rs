//! Route-level deterministic model: signal timing over K cycles at every
//! intersection, bus chaining with mean dwell, and cycle assignment by big-M.

use thiserror::Error;

use crate::corridor::{Corridor, Weights};
use crate::milp::{MilpProblem, MilpSolution, ModelBuilder, ModelError, Sense, SolveStatus, VarId};
use crate::signal::{
    gen_horizon_and_coordination, gen_min_green, gen_ring_constraints, horizon_end, Boundary, CorridorEntry, PlanVars,
    SignalError, TimingPlan,
};
use crate::Scalar;

/// Closed form of the strict inequalities.
pub const STRICT_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum UpperError {
    #[error("bus {bus} cannot reach intersection {intersection} before the horizon ends (earliest {earliest:.1} s, horizon {horizon:.1} s)")]
    Unreachable {
        bus: usize,
        intersection: usize,
        earliest: f64,
        horizon: f64,
    },
    #[error("instance: {0}")]
    Instance(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solution has no incumbent ({0:?})")]
    NoSolution(SolveStatus),
    #[error("bus {bus} at intersection {intersection}: cycle assignment is not integral")]
    Integrality { bus: usize, intersection: usize },
}

/// Where a bus is when the model is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusStart {
    /// At stop `stop` since `t_arr` (or due there then) with `dwell` seconds expected in total.
    Stop { stop: usize, t_arr: f64, dwell: f64 },
    /// Between stop `segment` and its stop line, `remaining` metres away at `time`.
    Approach { segment: usize, time: f64, remaining: f64 },
    /// Past stop line `segment`, `remaining` metres from stop `segment + 1` at `time`.
    Departure { segment: usize, time: f64, remaining: f64 },
}

impl BusStart {
    /// First intersection that is still ahead.
    pub fn first_crossing(&self) -> usize {
        match *self {
            BusStart::Stop { stop, .. } => stop,
            BusStart::Approach { segment, .. } => segment,
            BusStart::Departure { segment, .. } => segment + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperBus {
    pub id: usize,
    pub start: BusStart,
    /// Number of consecutive intersections modelled from `start.first_crossing()`.
    pub crossings: usize,
}

/// Per intersection: which background cycle is planned cycle 1, and what is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub first_cycle: i64,
    pub boundary: Boundary,
}

#[derive(Debug, Clone)]
pub struct UpperInstance<'a> {
    pub corridor: &'a Corridor,
    pub signals: Vec<SignalWindow>,
    pub buses: Vec<UpperBus>,
    pub k: usize,
    pub weights: Weights,
    pub big_m: f64,
}

impl<'a> UpperInstance<'a> {
    /// M = 10·K·C with the longest cycle in the corridor.
    pub fn default_big_m(corridor: &Corridor, k: usize) -> f64 {
        let c = (0..corridor.intersections.len()).map(|i| corridor.cycle(i)).fold(0.0, f64::max);
        10.0 * k as f64 * c
    }
}

#[derive(Debug, Clone)]
pub struct CrossingVars {
    pub bus: usize,
    pub intersection: usize,
    pub r: VarId,
    pub t_app: VarId,
    pub d: VarId,
    pub d_tilde: VarId,
    pub t_dep: VarId,
    pub theta: Vec<VarId>,
    /// Stop arrival before the crossing, when it is a decision.
    pub t_arr: Option<VarId>,
    pub t_next: VarId,
}

#[derive(Debug, Clone)]
pub struct ArrivalVars {
    pub bus: usize,
    pub stop: usize,
    pub t_arr: VarId,
    pub dev: VarId,
}

#[derive(Debug, Clone)]
pub struct UpperModel {
    pub problem: MilpProblem<f64>,
    pub plans: Vec<PlanVars>,
    pub crossings: Vec<CrossingVars>,
    pub arrivals: Vec<ArrivalVars>,
    pub compression: Vec<VarId>,
}

/// Where a stop arrival sits in the chain: known or a variable.
#[derive(Clone, Copy)]
enum Arr {
    Known(f64),
    Var(VarId),
}

/// Earliest feasible stop-line arrival for every crossing, ignoring signals.
fn earliest_crossings(inst: &UpperInstance<'_>, bus: &UpperBus) -> Vec<f64> {
    let c = inst.corridor;
    let v = c.v_max;
    let mut out = Vec::with_capacity(bus.crossings);
    let first = bus.start.first_crossing();
    let mut ready = match bus.start {
        BusStart::Stop { t_arr, dwell, .. } => t_arr + dwell,
        BusStart::Approach { time, remaining, .. } => time + remaining / v - c.segments[first].l_app / v,
        BusStart::Departure { segment, time, remaining } => time + remaining / v + c.dwell.at(segment + 1).mean(),
    };
    for i in first..first + bus.crossings {
        let seg = &c.segments[i];
        let r = ready + seg.l_app / v;
        out.push(r);
        ready = r + seg.l_dep / v + c.dwell.at(i + 1).mean();
    }
    out
}

pub fn build_upper(inst: &UpperInstance<'_>) -> Result<UpperModel, UpperError> {
    let c = inst.corridor;
    let n_int = c.intersections.len();
    if inst.k == 0 {
        return Err(UpperError::Instance("horizon must hold at least one cycle".into()));
    }
    if inst.signals.len() != n_int || c.segments.len() != n_int {
        return Err(UpperError::Instance("one signal window and one segment per intersection".into()));
    }
    if !(inst.weights.w_b >= 0.0 && inst.weights.w_c >= 0.0) {
        return Err(UpperError::Instance("weights must be nonnegative".into()));
    }
    let horizon_len = (0..n_int).map(|i| c.cycle(i)).fold(0.0, f64::max) * inst.k as f64;
    if !(inst.big_m > horizon_len) {
        return Err(UpperError::Instance(format!("big-M {} does not exceed the horizon {horizon_len}", inst.big_m)));
    }
    let m = inst.big_m;
    let v = c.v_max;
    let k_max = inst.k;

    let mut b = ModelBuilder::<f64>::new();
    let plans: Vec<PlanVars> = (0..n_int)
        .map(|i| PlanVars::declare(&mut b, &c.intersections[i].structure, k_max, &format!("i{i}")))
        .collect();

    let mut compression = Vec::new();
    for (i, (x, pv)) in c.intersections.iter().zip(&plans).enumerate() {
        let s = &x.structure;
        b.extend(gen_ring_constraints(s, pv, &inst.signals[i].boundary)?);
        b.extend(gen_min_green(s, &x.demand, x.background.cycle, pv));
        let phases = s.phases();
        for k in 0..k_max {
            for j in 0..s.num_slots() {
                let cv = b.continuous(format!("c_i{i}_k{}_p{}", k + 1, phases[j]), 0.0, f64::INFINITY);
                b.add(
                    format!("comp_i{i}_k{}_p{}", k + 1, phases[j]),
                    vec![(cv, 1.0), (pv.g[k][j], 1.0)],
                    Sense::Ge,
                    x.background.green(s, j),
                );
                b.minimize_term(cv, inst.weights.w_c);
                compression.push(cv);
            }
        }
    }
    let entries: Vec<CorridorEntry<'_>> = c
        .intersections
        .iter()
        .zip(&plans)
        .zip(&inst.signals)
        .map(|((x, pv), w)| CorridorEntry {
            structure: &x.structure,
            background: &x.background,
            vars: pv,
            first_cycle: w.first_cycle,
        })
        .collect();
    b.extend(gen_horizon_and_coordination(&entries, c.delta_c));

    let mut crossings = Vec::new();
    let mut arrivals = Vec::new();
    for (bi, bus) in inst.buses.iter().enumerate() {
        let n = bus.id;
        let first = bus.start.first_crossing();
        if first + bus.crossings > n_int {
            return Err(UpperError::Instance(format!("bus {n} crosses past the last intersection")));
        }
        for (x, r0) in earliest_crossings(inst, bus).into_iter().enumerate() {
            let i = first + x;
            let w = &inst.signals[i];
            let end = horizon_end(&c.intersections[i].background, w.first_cycle, k_max);
            if r0 > end {
                return Err(UpperError::Unreachable {
                    bus: n,
                    intersection: i,
                    earliest: r0,
                    horizon: end,
                });
            }
        }

        let mut add_arrival = |b: &mut ModelBuilder<f64>, stop: usize, var: VarId| {
            let t_opt = c.timetable.t_opt(n, stop);
            let dev = b.continuous(format!("dev_n{n}_s{stop}"), 0.0, f64::INFINITY);
            b.add(format!("devp_n{n}_s{stop}"), vec![(dev, 1.0), (var, -1.0)], Sense::Ge, -t_opt);
            b.add(format!("devm_n{n}_s{stop}"), vec![(dev, 1.0), (var, 1.0)], Sense::Ge, t_opt);
            b.minimize_term(dev, inst.weights.w_b);
            arrivals.push(ArrivalVars {
                bus: bi,
                stop,
                t_arr: var,
                dev,
            });
        };

        // the stop arrival preceding the first modelled crossing
        let (mut arr, mut dwell) = match bus.start {
            BusStart::Stop { t_arr, dwell, .. } => (Arr::Known(t_arr), dwell),
            BusStart::Approach { .. } => (Arr::Known(f64::NAN), 0.0),
            BusStart::Departure { segment, time, remaining } => {
                let stop = segment + 1;
                let t_dep = b.continuous(format!("tdep_n{n}_i{segment}"), remaining / v, f64::INFINITY);
                let a = b.free(format!("tarr_n{n}_s{stop}"));
                b.add(format!("dep_n{n}_i{segment}"), vec![(a, 1.0), (t_dep, -1.0)], Sense::Eq, time);
                add_arrival(&mut b, stop, a);
                (Arr::Var(a), c.dwell.at(stop).mean())
            }
        };

        for x in 0..bus.crossings {
            let i = first + x;
            let seg = &c.segments[i];
            let s = &c.intersections[i].structure;
            let pv = &plans[i];
            let j = s.bus_slot();
            let y = s.yellow;
            let tag = format!("n{n}_i{i}");

            let r = b.free(format!("r_{tag}"));
            let (app_lo, approach_start) = match bus.start {
                BusStart::Approach { time, remaining, .. } if x == 0 => (remaining / v, Some(time)),
                _ => (seg.l_app / v, None),
            };
            let t_app = b.continuous(format!("tapp_{tag}"), app_lo, f64::INFINITY);
            match (approach_start, arr) {
                (Some(time), _) => b.add(format!("app_{tag}"), vec![(r, 1.0), (t_app, -1.0)], Sense::Eq, time),
                (None, Arr::Known(t)) => {
                    b.add(format!("app_{tag}"), vec![(r, 1.0), (t_app, -1.0)], Sense::Eq, t + dwell)
                }
                (None, Arr::Var(a)) => {
                    b.add(format!("app_{tag}"), vec![(r, 1.0), (t_app, -1.0), (a, -1.0)], Sense::Eq, dwell)
                }
            }

            let theta: Vec<VarId> = (0..k_max).map(|k| b.binary(format!("theta_{tag}_k{}", k + 1))).collect();
            b.add(format!("assign_{tag}"), theta.iter().map(|&t| (t, 1.0)).collect(), Sense::Eq, 1.0);
            let d_tilde = b.free(format!("dt_{tag}"));
            let d = b.continuous(format!("d_{tag}"), 0.0, f64::INFINITY);
            b.add(format!("delay_{tag}"), vec![(d, 1.0), (d_tilde, -1.0)], Sense::Ge, 0.0);
            for k in 0..k_max {
                let th = theta[k];
                let kk = k + 1;
                if k > 0 {
                    // r > t_{k-1} + g_{k-1} + Y when assigned to k
                    b.add(
                        format!("winlo_{tag}_k{kk}"),
                        vec![(r, 1.0), (pv.t[k - 1][j], -1.0), (pv.g[k - 1][j], -1.0), (th, -m)],
                        Sense::Ge,
                        y + STRICT_MARGIN - m,
                    );
                }
                b.add(
                    format!("winhi_{tag}_k{kk}"),
                    vec![(r, 1.0), (pv.t[k][j], -1.0), (pv.g[k][j], -1.0), (th, m)],
                    Sense::Le,
                    y + m,
                );
                b.add(
                    format!("dlo_{tag}_k{kk}"),
                    vec![(d_tilde, 1.0), (pv.t[k][j], -1.0), (r, 1.0), (th, -m)],
                    Sense::Ge,
                    -m,
                );
                b.add(
                    format!("dhi_{tag}_k{kk}"),
                    vec![(d_tilde, 1.0), (pv.t[k][j], -1.0), (r, 1.0), (th, m)],
                    Sense::Le,
                    m,
                );
            }
            let t_dep = b.continuous(format!("tdep_{tag}"), seg.l_dep / v, f64::INFINITY);
            let next = b.free(format!("tarr_n{n}_s{}", i + 1));
            b.add(
                format!("dep_{tag}"),
                vec![(next, 1.0), (r, -1.0), (d, -1.0), (t_dep, -1.0)],
                Sense::Eq,
                0.0,
            );
            add_arrival(&mut b, i + 1, next);
            crossings.push(CrossingVars {
                bus: bi,
                intersection: i,
                r,
                t_app,
                d,
                d_tilde,
                t_dep,
                theta,
                t_arr: match arr {
                    Arr::Var(a) => Some(a),
                    Arr::Known(_) => None,
                },
                t_next: next,
            });
            arr = Arr::Var(next);
            dwell = c.dwell.at(i + 1).mean();
        }
    }

    Ok(UpperModel {
        problem: b.build()?,
        plans,
        crossings,
        arrivals,
        compression,
    })
}

/// One planned intersection crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedCrossing {
    pub bus: usize,
    pub intersection: usize,
    /// Assigned cycle, 0-based within the horizon.
    pub cycle: usize,
    /// Background cycle index of the assigned cycle.
    pub abs_cycle: i64,
    /// Arrival at the upstream stop (known or planned); NaN when the bus is already past it.
    pub t_arr: f64,
    pub r: f64,
    /// When the bus actually clears the stop line: max(r, green start).
    pub pass: f64,
    /// Planned arrival at the downstream stop.
    pub t_next: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedArrival {
    pub bus: usize,
    pub stop: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub plans: Vec<TimingPlan>,
    pub crossings: Vec<PlannedCrossing>,
    pub arrivals: Vec<PlannedArrival>,
    pub objective: f64,
}

impl Guidance {
    pub fn crossing(&self, bus: usize, intersection: usize) -> Option<&PlannedCrossing> {
        self.crossings.iter().find(|c| c.bus == bus && c.intersection == intersection)
    }

    pub fn arrival(&self, bus: usize, stop: usize) -> Option<f64> {
        self.arrivals.iter().find(|a| a.bus == bus && a.stop == stop).map(|a| a.time)
    }
}

pub fn extract_guidance(
    inst: &UpperInstance<'_>,
    model: &UpperModel,
    sol: &MilpSolution<f64>,
) -> Result<Guidance, UpperError> {
    if !sol.has_solution() {
        return Err(UpperError::NoSolution(sol.status));
    }
    let x = &sol.values;
    let c = inst.corridor;
    let plans: Vec<TimingPlan> = model
        .plans
        .iter()
        .enumerate()
        .map(|(i, pv)| pv.extract(x, i, inst.signals[i].first_cycle))
        .collect();
    let mut crossings = Vec::with_capacity(model.crossings.len());
    for cv in &model.crossings {
        let bus = inst.buses[cv.bus].id;
        let i = cv.intersection;
        let tol = f64::int_tol();
        let integral = cv.theta.iter().all(|t| (x[t.0] - x[t.0].round()).abs() <= tol);
        let ones: Vec<usize> = (0..cv.theta.len()).filter(|&k| x[cv.theta[k].0] > 0.5).collect();
        if !integral || ones.len() != 1 {
            return Err(UpperError::Integrality { bus, intersection: i });
        }
        let k = ones[0];
        let j = c.intersections[i].structure.bus_slot();
        let r = x[cv.r.0];
        let t_arr = match (cv.t_arr, inst.buses[cv.bus].start) {
            (Some(a), _) => x[a.0],
            (None, BusStart::Stop { t_arr, .. }) => t_arr,
            (None, _) => f64::NAN,
        };
        crossings.push(PlannedCrossing {
            bus,
            intersection: i,
            cycle: k,
            abs_cycle: inst.signals[i].first_cycle + k as i64,
            t_arr,
            r,
            pass: r.max(plans[i].t[k][j]),
            t_next: x[cv.t_next.0],
        });
    }
    let arrivals = model
        .arrivals
        .iter()
        .map(|a| PlannedArrival {
            bus: inst.buses[a.bus].id,
            stop: a.stop,
            time: x[a.t_arr.0],
        })
        .collect();
    Ok(Guidance {
        plans,
        crossings,
        arrivals,
        objective: sol.objective,
    })
}


#[cfg(test)]
mod bench {
    use super::*;
    use crate::milp::{solve_milp, Budget};
    use crate::testutil::corridor;

    #[test]
    #[ignore]
    fn reference_size() {
        let offs = [0.0, 44.0, 54.0, 30.0, 43.0];
        let sched: Vec<Vec<f64>> = (0..8).map(|n| (0..6).map(|i| n as f64 * 120.0 + 77.0 * i as f64).collect()).collect();
        let c = corridor(&offs, (15.0, 35.0), sched);
        for now in [0.0, 37.0, 91.0, 150.0, 233.0, 400.0] {
            let mut buses = Vec::new();
            for n in 0..8usize {
                // crude position: assume the bus runs to schedule
                let dep = n as f64 * 120.0;
                if dep > now + 150.0 { continue; }
                let elapsed = (now - dep).max(0.0);
                let stop = ((elapsed / 77.0) as usize).min(5);
                if stop >= 5 { continue; }
                let t_arr = dep + 77.0 * stop as f64;
                let horizon = 300.0 - (now % 100.0);
                let crossings = (((now + horizon - t_arr - 60.0) / 77.0).floor() as i64).clamp(0, (5 - stop) as i64) as usize;
                buses.push(UpperBus { id: n, start: BusStart::Stop { stop, t_arr, dwell: 25.0 }, crossings });
            }
            let first = (now / 100.0).floor() as i64;
            let inst = UpperInstance {
                corridor: &c,
                signals: c.intersections.iter().map(|x| {
                    let m = x.background.cycle_index_at(now);
                    let p = x.background.layout(&x.structure, m, 1);
                    SignalWindow { first_cycle: m, boundary: Boundary::CommittedCycle { t: p.t[0].clone(), g: p.g[0].clone() } }
                }).collect(),
                buses,
                k: 3,
                weights: Weights::default(),
                big_m: 3000.0,
            };
            let _ = first;
            let t0 = std::time::Instant::now();
            let model = match build_upper(&inst) { Ok(m) => m, Err(e) => { println!("now {now}: {e}"); continue; } };
            let sol = solve_milp(&model.problem, &Budget::default());
            println!("now {now}: {} crossings, {} vars {} rows, {:?} obj {:.2} nodes {} pivots {} in {:?}",
                model.crossings.len(), model.problem.num_vars(), model.problem.constraints.len(), sol.status, sol.objective, sol.nodes, sol.pivots, t0.elapsed());
        }
    }
}
