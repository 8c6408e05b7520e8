//! Per-intersection stochastic model: shared signal timing and speed guidance,
//! per-sample recourse through the three-branch arrival function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bus::{sample_dwell, DwellDist};
use crate::corridor::{Corridor, Weights};
use crate::milp::{
    solve_lp, solve_milp_with, Budget, LinearExpr, LpStatus, MilpProblem, MilpSolution, ModelBuilder, ModelError, Sense, SolveOptions, SolveStatus, VarId,
};
#[cfg(test)]
use crate::milp::solve_milp;
use crate::signal::{
    gen_horizon_and_coordination, gen_min_green, gen_ring_constraints, CorridorEntry, PlanVars, SignalError,
    TimingPlan,
};
use crate::upper::{SignalWindow, STRICT_MARGIN};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LowerError {
    #[error("bus {bus} is assigned cycle {cycle} but the horizon holds {k} cycles; the next cycle is needed")]
    Horizon { bus: usize, cycle: usize, k: usize },
    #[error("instance: {0}")]
    Instance(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solution has no incumbent ({0:?})")]
    NoSolution(SolveStatus),
    #[error("bus {bus}, sample {sample}: branch indicators are not integral")]
    Integrality { bus: usize, sample: usize },
}

/// A bus that will cross this intersection inside the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBus {
    pub id: usize,
    /// Arrival at the upstream stop, or the current time if it already left.
    pub t_arr: f64,
    /// Remaining dwell counted from `t_arr` (degenerate zero once departed).
    pub dwell: DwellDist,
    /// Distance still to cover to the stop line.
    pub l_app: f64,
    pub l_dep: f64,
    /// Assigned cycle, 0-based within the horizon.
    pub cycle: usize,
    /// Planned downstream stop arrival handed down from the route level.
    pub t_upp: f64,
}

/// Bounds on a coordinated phase start that keep the corridor band intact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftLimit {
    pub cycle: usize,
    pub slot: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct LowerInstance<'a> {
    pub corridor: &'a Corridor,
    pub intersection: usize,
    pub window: SignalWindow,
    pub k: usize,
    pub buses: Vec<LowerBus>,
    pub limits: Vec<ShiftLimit>,
    /// (cycle, time): the bus phase of that cycle must still be open at that
    /// time, for crossings planned upstream that this model does not carry.
    pub keep_open: Vec<(usize, f64)>,
    pub weights: Weights,
    pub n_saa: usize,
    pub seed: u64,
}

/// Dwell draws of one bus, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    pub bus: usize,
    pub dwell: Vec<f64>,
}

fn mix(seed: u64, id: usize) -> u64 {
    let mut z = seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_saa(inst: &LowerInstance<'_>) -> Vec<ScenarioSample> {
    inst.buses
        .iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(inst.seed, b.id));
            ScenarioSample {
                bus: b.id,
                dwell: (0..inst.n_saa).map(|_| sample_dwell(&b.dwell, &mut rng)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Late against the guidance but still inside the green.
    Late,
    /// Guidance binding, crossing at r.
    Guided,
    /// Green missed, crossing at the next green start.
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalInputs {
    pub t_arr: f64,
    pub t_st: f64,
    pub r: f64,
    /// Bus phase start and green of the assigned cycle.
    pub t: f64,
    pub g: f64,
    pub yellow: f64,
    /// Bus phase start in the following cycle.
    pub t_next: f64,
    pub l_app: f64,
    pub l_dep: f64,
    pub v_max: f64,
}

/// Downstream stop arrival under one dwell realisation, with the branch taken.
/// A bus may clear the line until the end of yellow.
pub fn piecewise_arrival_oracle(x: &ArrivalInputs) -> (f64, Branch) {
    let e1 = x.t_arr + x.t_st + x.l_app / x.v_max;
    let e2 = x.r;
    let e3 = x.t + x.g + x.yellow;
    let dep = x.l_dep / x.v_max;
    if e1 > e2 && e1 <= e3 {
        (e1 + dep, Branch::Late)
    } else if e1 <= e2 && e2 <= e3 {
        (e2 + dep, Branch::Guided)
    } else {
        (x.t_next + dep, Branch::Missed)
    }
}

/// Stop arrival if the bus takes branch `br`, whether or not its guard holds.
pub fn branch_arrival(x: &ArrivalInputs, br: Branch) -> f64 {
    let line = match br {
        Branch::Late => x.t_arr + x.t_st + x.l_app / x.v_max,
        Branch::Guided => x.r,
        Branch::Missed => x.t_next,
    };
    line + x.l_dep / x.v_max
}

/// Branches whose guards hold when every comparison is relaxed by `tol`;
/// a solver point sitting on a guard may legitimately take either side.
pub fn admissible_branches(x: &ArrivalInputs, tol: f64) -> Vec<Branch> {
    let e1 = x.t_arr + x.t_st + x.l_app / x.v_max;
    let e3 = x.t + x.g + x.yellow;
    let mut out = Vec::new();
    if e1 > x.r - tol && e1 <= e3 + tol {
        out.push(Branch::Late);
    }
    if e1 <= x.r + tol && x.r <= e3 + tol {
        out.push(Branch::Guided);
    }
    if e1 > e3 - tol || x.r > e3 - tol {
        out.push(Branch::Missed);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SampleVars {
    pub beta1: VarId,
    pub beta2: VarId,
    pub beta3: VarId,
    pub beta3a: VarId,
    pub beta3b: VarId,
    pub dev: VarId,
}

#[derive(Debug, Clone)]
pub struct LowerModel {
    pub problem: MilpProblem<f64>,
    pub plan: PlanVars,
    pub r: Vec<VarId>,
    /// `[bus][sample]`
    pub samples: Vec<Vec<SampleVars>>,
    pub compression: Vec<VarId>,
}

pub fn build_lower(inst: &LowerInstance<'_>, samples: &[ScenarioSample]) -> Result<LowerModel, LowerError> {
    let c = inst.corridor;
    let i = inst.intersection;
    let x = c
        .intersections
        .get(i)
        .ok_or_else(|| LowerError::Instance(format!("no intersection {i}")))?;
    let s = &x.structure;
    let k_max = inst.k;
    if inst.n_saa == 0 {
        return Err(LowerError::Instance("at least one sample is needed".into()));
    }
    if samples.len() != inst.buses.len() || samples.iter().any(|sm| sm.dwell.len() != inst.n_saa) {
        return Err(LowerError::Instance("sample matrix does not match the buses".into()));
    }
    for b in &inst.buses {
        if b.cycle + 1 >= k_max {
            return Err(LowerError::Horizon {
                bus: b.id,
                cycle: b.cycle,
                k: k_max,
            });
        }
    }
    let v = c.v_max;
    let y = s.yellow;
    let eps = STRICT_MARGIN;
    let j = s.bus_slot();

    let mut mb = ModelBuilder::<f64>::new();
    let plan = PlanVars::declare(&mut mb, s, k_max, &format!("i{i}"));
    mb.extend(gen_ring_constraints(s, &plan, &inst.window.boundary)?);
    mb.extend(gen_min_green(s, &x.demand, x.background.cycle, &plan));
    mb.extend(gen_horizon_and_coordination(
        &[CorridorEntry {
            structure: s,
            background: &x.background,
            vars: &plan,
            first_cycle: inst.window.first_cycle,
        }],
        c.delta_c,
    ));
    let phases = s.phases();
    for l in &inst.limits {
        if l.cycle >= k_max || l.slot >= s.num_slots() {
            return Err(LowerError::Instance("shift limit outside the plan".into()));
        }
        let t = plan.t[l.cycle][l.slot];
        let tag = format!("i{i}_k{}_p{}", l.cycle + 1, phases[l.slot]);
        mb.add(format!("coord_lo_{tag}"), vec![(t, 1.0)], Sense::Ge, l.lo);
        mb.add(format!("coord_hi_{tag}"), vec![(t, 1.0)], Sense::Le, l.hi);
    }
    for (q, &(k, at)) in inst.keep_open.iter().enumerate() {
        if k >= k_max {
            return Err(LowerError::Instance("kept window outside the plan".into()));
        }
        let (t, g) = (plan.t[k][j], plan.g[k][j]);
        mb.add(format!("open_lo_{q}"), vec![(t, 1.0)], Sense::Le, at);
        mb.add(format!("open_hi_{q}"), vec![(t, 1.0), (g, 1.0)], Sense::Ge, at - y);
    }
    let mut compression = Vec::new();
    for k in 0..k_max {
        for jj in 0..s.num_slots() {
            let cv = mb.continuous(format!("c_i{i}_k{}_p{}", k + 1, phases[jj]), 0.0, f64::INFINITY);
            mb.add(
                format!("comp_i{i}_k{}_p{}", k + 1, phases[jj]),
                vec![(cv, 1.0), (plan.g[k][jj], 1.0)],
                Sense::Ge,
                x.background.green(s, jj),
            );
            mb.minimize_term(cv, inst.weights.w_c);
            compression.push(cv);
        }
    }

    // ranges of the signal quantities each bus depends on, over the timing polytope alone
    let signal_only = mb.clone().build()?;
    let mut ranges: Vec<Option<[(f64, f64); 3]>> = vec![None; k_max];
    for b in &inst.buses {
        let k = b.cycle;
        if ranges[k].is_none() {
            let (t, g, t_nx) = (plan.t[k][j], plan.g[k][j], plan.t[k + 1][j]);
            ranges[k] = Some([
                lp_range(&signal_only, &[(t, 1.0)])?,
                lp_range(&signal_only, &[(t, 1.0), (g, 1.0)])?,
                lp_range(&signal_only, &[(t_nx, 1.0)])?,
            ]);
        }
    }

    let w_dev = inst.weights.w_b / inst.n_saa as f64;
    let mut rs = Vec::new();
    let mut all = Vec::new();
    for (b, sm) in inst.buses.iter().zip(samples) {
        let n = b.id;
        let k = b.cycle;
        let (t, g, t_nx) = (plan.t[k][j], plan.g[k][j], plan.t[k + 1][j]);
        let [(r_lo, _), (tg_lo, tg_hi), (nx_lo, nx_hi)] = ranges[k].expect("range computed");
        let (e3_lo, e3_hi) = (tg_lo + y, tg_hi + y);
        let r_hi = e3_hi;
        let dep = b.l_dep / v;
        let r = mb.free(format!("r_n{n}"));
        // guidance stays inside the assigned green
        mb.add(format!("rlo_n{n}"), vec![(r, 1.0), (t, -1.0)], Sense::Ge, 0.0);
        mb.add(format!("rhi_n{n}"), vec![(r, 1.0), (t, -1.0), (g, -1.0)], Sense::Le, y);
        rs.push(r);

        let late = dep - b.t_upp;
        let mut vars = Vec::with_capacity(inst.n_saa);
        for (si, &d) in sm.dwell.iter().enumerate() {
            let e1 = b.t_arr + d + b.l_app / v;
            let tag = format!("n{n}_s{si}");
            let b1 = mb.binary(format!("b1_{tag}"));
            let b2 = mb.binary(format!("b2_{tag}"));
            let b3 = mb.binary(format!("b3_{tag}"));
            let b3a = mb.binary(format!("b3a_{tag}"));
            let b3b = mb.binary(format!("b3b_{tag}"));
            let dev = mb.continuous(format!("dev_{tag}"), 0.0, f64::INFINITY);
            // each M is the largest violation its row can see, plus slack
            let big = |x: f64| x.max(0.0) + 1.0;
            mb.add(format!("one_{tag}"), vec![(b1, 1.0), (b2, 1.0), (b3, 1.0)], Sense::Eq, 1.0);
            // branch 1: e1 > r and e1 <= t + g + Y
            let m = big(r_hi - e1 + eps);
            mb.add(format!("b1lo_{tag}"), vec![(r, 1.0), (b1, m)], Sense::Le, e1 - eps + m);
            let m = big(e1 - e3_lo);
            mb.add(format!("b1hi_{tag}"), vec![(t, -1.0), (g, -1.0), (b1, m)], Sense::Le, y - e1 + m);
            // branch 2: e1 <= r <= t + g + Y
            let m = big(e1 - r_lo);
            mb.add(format!("b2lo_{tag}"), vec![(r, -1.0), (b2, m)], Sense::Le, -e1 + m);
            let m = big(r_hi - e3_lo);
            mb.add(format!("b2hi_{tag}"), vec![(r, 1.0), (t, -1.0), (g, -1.0), (b2, m)], Sense::Le, y + m);
            // branch 3: e1 > t + g + Y or r > t + g + Y
            let m = big(e3_hi - e1 + eps);
            mb.add(format!("b3a_{tag}"), vec![(t, 1.0), (g, 1.0), (b3a, m)], Sense::Le, e1 - eps - y + m);
            let m = big(e3_hi - r_lo + eps);
            mb.add(format!("b3b_{tag}"), vec![(t, 1.0), (g, 1.0), (r, -1.0), (b3b, m)], Sense::Le, -y - eps + m);
            mb.add(format!("or1_{tag}"), vec![(b3, 1.0), (b3a, -1.0)], Sense::Ge, 0.0);
            mb.add(format!("or2_{tag}"), vec![(b3, 1.0), (b3b, -1.0)], Sense::Ge, 0.0);
            mb.add(format!("or3_{tag}"), vec![(b3, 1.0), (b3a, -1.0), (b3b, -1.0)], Sense::Le, 0.0);
            // lateness against the planned downstream arrival, per branch
            // off-branch, dev is still at least max(r, e1) + late or t_nx + late
            let floor = r_lo.max(e1) + late;
            let m = big(e1 + late - floor.min(nx_lo + late));
            mb.add(format!("dev1_{tag}"), vec![(dev, 1.0), (b1, -m)], Sense::Ge, e1 + late - m);
            let m = big(r_hi - r_lo);
            mb.add(format!("dev2_{tag}"), vec![(dev, 1.0), (r, -1.0), (b2, -m)], Sense::Ge, late - m);
            let m = big(nx_hi + late - floor);
            mb.add(format!("dev3_{tag}"), vec![(dev, 1.0), (t_nx, -1.0), (b3, -m)], Sense::Ge, late - m);
            // implied by the above on integral points, tighter on fractional ones
            mb.add(format!("cut_r_{tag}"), vec![(dev, 1.0), (r, -1.0)], Sense::Ge, late);
            let m = big(e1 - nx_lo);
            mb.add(format!("cut_e_{tag}"), vec![(dev, 1.0), (b3, m)], Sense::Ge, e1 + late);
            // branches the signal ranges already rule out
            if e1 - eps < r_lo {
                mb.set_bounds(b1, 0.0, 0.0);
            }
            if e1 > r_hi {
                mb.set_bounds(b2, 0.0, 0.0);
            }
            if e1 - eps < e3_lo {
                mb.set_bounds(b3a, 0.0, 0.0);
            }
            if e1 > e3_hi {
                mb.set_bounds(b1, 0.0, 0.0);
                mb.set_bounds(b2, 0.0, 0.0);
            }
            mb.minimize_term(dev, w_dev);
            vars.push(SampleVars {
                beta1: b1,
                beta2: b2,
                beta3: b3,
                beta3a: b3a,
                beta3b: b3b,
                dev,
            });
        }
        // a longer dwell never lands in an earlier branch
        let mut order: Vec<usize> = (0..sm.dwell.len()).collect();
        order.sort_by(|&a, &b| sm.dwell[a].total_cmp(&sm.dwell[b]).then(a.cmp(&b)));
        for w in order.windows(2) {
            let (p, q) = (&vars[w[0]], &vars[w[1]]);
            mb.add(format!("ord3_n{n}_s{}", w[0]), vec![(q.beta3, 1.0), (p.beta3, -1.0)], Sense::Ge, 0.0);
            mb.add(format!("ord2_n{n}_s{}", w[0]), vec![(p.beta2, 1.0), (q.beta2, -1.0)], Sense::Ge, 0.0);
        }
        all.push(vars);
    }

    Ok(LowerModel {
        problem: mb.build()?,
        plan,
        r: rs,
        samples: all,
        compression,
    })
}

/// Minimum and maximum of a linear form over a problem's LP relaxation.
fn lp_range(p: &MilpProblem<f64>, terms: &[(VarId, f64)]) -> Result<(f64, f64), LowerError> {
    let mut q = p.clone();
    let mut out = [0.0; 2];
    for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
        q.objective = LinearExpr::new(terms.iter().map(|&(v, a)| (v, sign * a)).collect(), 0.0);
        let r = solve_lp(&q);
        if r.status != LpStatus::Optimal {
            return Err(LowerError::Instance(format!("signal timing has no feasible plan ({:?})", r.status)));
        }
        out[k] = sign * r.objective;
    }
    Ok((out[0], out[1]))
}

/// Objective value and full assignment of a given timing plan and guidance,
/// with branches and deviations read off the oracle.
pub fn assignment_for(
    inst: &LowerInstance<'_>,
    samples: &[ScenarioSample],
    model: &LowerModel,
    plan: &TimingPlan,
    r: &[f64],
) -> Vec<f64> {
    let c = inst.corridor;
    let x = &c.intersections[inst.intersection];
    let s = &x.structure;
    let j = s.bus_slot();
    let mut vals = vec![0.0; model.problem.num_vars()];
    for k in 0..model.plan.cycles() {
        for jj in 0..s.num_slots() {
            vals[model.plan.t[k][jj].0] = plan.t[k][jj];
            vals[model.plan.g[k][jj].0] = plan.g[k][jj];
        }
    }
    let mut ci = 0;
    for k in 0..model.plan.cycles() {
        for jj in 0..s.num_slots() {
            vals[model.compression[ci].0] = (x.background.green(s, jj) - plan.g[k][jj]).max(0.0);
            ci += 1;
        }
    }
    for (bi, (b, sm)) in inst.buses.iter().zip(samples).enumerate() {
        vals[model.r[bi].0] = r[bi];
        let k = b.cycle;
        for (si, &d) in sm.dwell.iter().enumerate() {
            let inp = ArrivalInputs {
                t_arr: b.t_arr,
                t_st: d,
                r: r[bi],
                t: plan.t[k][j],
                g: plan.g[k][j],
                yellow: s.yellow,
                t_next: plan.t[k + 1][j],
                l_app: b.l_app,
                l_dep: b.l_dep,
                v_max: c.v_max,
            };
            let (arr, br) = piecewise_arrival_oracle(&inp);
            let sv = &model.samples[bi][si];
            let e1 = b.t_arr + d + b.l_app / c.v_max;
            let e3 = inp.t + inp.g + inp.yellow;
            vals[sv.dev.0] = (arr - b.t_upp).max(0.0);
            match br {
                Branch::Late => vals[sv.beta1.0] = 1.0,
                Branch::Guided => vals[sv.beta2.0] = 1.0,
                Branch::Missed => {
                    vals[sv.beta3.0] = 1.0;
                    vals[sv.beta3a.0] = if e1 > e3 { 1.0 } else { 0.0 };
                    vals[sv.beta3b.0] = if r[bi] > e3 { 1.0 } else { 0.0 };
                }
            }
        }
    }
    vals
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerDecision {
    pub plan: TimingPlan,
    /// Planned stop-line arrival per bus, in instance order.
    pub r: Vec<f64>,
    /// `[bus][sample]` branch taken.
    pub branches: Vec<Vec<Branch>>,
    /// `[bus][sample]` lateness at the downstream stop.
    pub dev: Vec<Vec<f64>>,
    pub objective: f64,
}

pub fn extract_decision(
    inst: &LowerInstance<'_>,
    model: &LowerModel,
    sol: &MilpSolution<f64>,
) -> Result<LowerDecision, LowerError> {
    if !sol.has_solution() {
        return Err(LowerError::NoSolution(sol.status));
    }
    let x = &sol.values;
    let tol = f64::int_tol();
    let mut branches = Vec::new();
    let mut devs = Vec::new();
    for (bi, row) in model.samples.iter().enumerate() {
        let mut br = Vec::with_capacity(row.len());
        let mut dv = Vec::with_capacity(row.len());
        for (si, sv) in row.iter().enumerate() {
            let bs = [x[sv.beta1.0], x[sv.beta2.0], x[sv.beta3.0]];
            if bs.iter().any(|b| (b - b.round()).abs() > tol) || (bs.iter().sum::<f64>() - 1.0).abs() > tol {
                return Err(LowerError::Integrality {
                    bus: inst.buses[bi].id,
                    sample: si,
                });
            }
            br.push(if bs[0] > 0.5 {
                Branch::Late
            } else if bs[1] > 0.5 {
                Branch::Guided
            } else {
                Branch::Missed
            });
            dv.push(x[sv.dev.0]);
        }
        branches.push(br);
        devs.push(dv);
    }
    Ok(LowerDecision {
        plan: model.plan.extract(x, inst.intersection, inst.window.first_cycle),
        r: model.r.iter().map(|v| x[v.0]).collect(),
        branches,
        dev: devs,
        objective: sol.objective,
    })
}

/// What the intersection and its buses are told to do.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerCommands {
    /// Cycles whose service has not begun at `now`.
    pub plan: TimingPlan,
    /// Per bus: (id, stop-line target time, speed reference).
    pub speeds: Vec<(usize, f64, f64)>,
}

/// Timing for cycles not yet begun and a speed reference L / (r − now) per bus, clamped to (0, v_max].
pub fn extract_commands(inst: &LowerInstance<'_>, decision: &LowerDecision, now: f64) -> LowerCommands {
    let s = &inst.corridor.intersections[inst.intersection].structure;
    let plan = &decision.plan;
    let keep: Vec<usize> = (0..plan.cycles()).filter(|&k| plan.cycle_start(s, k) > now).collect();
    let first = keep.first().copied().unwrap_or(plan.cycles());
    let trimmed = TimingPlan {
        intersection: plan.intersection,
        first_cycle: plan.first_cycle + first as i64,
        t: plan.t[first..].to_vec(),
        g: plan.g[first..].to_vec(),
    };
    let v_max = inst.corridor.v_max;
    let speeds = inst
        .buses
        .iter()
        .zip(&decision.r)
        .map(|(b, &r)| {
            let depart = (b.t_arr + b.dwell.bounds().0).max(now);
            let dt = r - depart;
            let v = if dt > 0.0 { (b.l_app / dt).min(v_max) } else { v_max };
            (b.id, r, v.max(f64::MIN_POSITIVE))
        })
        .collect();
    LowerCommands { plan: trimmed, speeds }
}

/// Builds, solves and reads back one lower instance. `start` is an optional
/// incumbent (plan, guidance) that is kept unless something strictly better is found.
pub fn solve_lower(
    inst: &LowerInstance<'_>,
    samples: &[ScenarioSample],
    start: Option<(&TimingPlan, &[f64])>,
    budget: &Budget,
) -> Result<(LowerDecision, MilpSolution<f64>), LowerError> {
    let model = build_lower(inst, samples)?;
    let incumbent = start
        .map(|(p, r)| assignment_for(inst, samples, &model, p, r))
        .filter(|x| model.problem.is_feasible(x, 1e-6));
    let opts = SolveOptions {
        budget: *budget,
        gap_abs: 1e-6,
        incumbent,
    };
    let sol = solve_milp_with(&model.problem, &opts);
    let d = extract_decision(inst, &model, &sol)?;
    Ok((d, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Boundary;
    use crate::testutil::corridor;
    use proptest::prelude::*;

    fn window(c: &Corridor) -> SignalWindow {
        let x = &c.intersections[0];
        let lay = x.background.layout(&x.structure, 0, 1);
        SignalWindow {
            first_cycle: 0,
            boundary: Boundary::CommittedCycle {
                t: lay.t[0].clone(),
                g: lay.g[0].clone(),
            },
        }
    }

    fn bus(id: usize, t_arr: f64, dwell: (f64, f64), cycle: usize, t_upp: f64) -> LowerBus {
        LowerBus {
            id,
            t_arr,
            dwell: DwellDist::Uniform {
                min: dwell.0,
                max: dwell.1,
            },
            l_app: 300.0,
            l_dep: 300.0,
            cycle,
            t_upp,
        }
    }

    fn inst<'a>(c: &'a Corridor, buses: Vec<LowerBus>, n_saa: usize) -> LowerInstance<'a> {
        LowerInstance {
            corridor: c,
            intersection: 0,
            window: window(c),
            k: 3,
            buses,
            limits: vec![],
            keep_open: vec![],
            weights: Weights::default(),
            n_saa,
            seed: 7,
        }
    }

    fn inputs(b: &LowerBus, d: f64, r: f64, plan: &TimingPlan, c: &Corridor) -> ArrivalInputs {
        let s = &c.intersections[0].structure;
        let j = s.bus_slot();
        ArrivalInputs {
            t_arr: b.t_arr,
            t_st: d,
            r,
            t: plan.t[b.cycle][j],
            g: plan.g[b.cycle][j],
            yellow: s.yellow,
            t_next: plan.t[b.cycle + 1][j],
            l_app: b.l_app,
            l_dep: b.l_dep,
            v_max: c.v_max,
        }
    }

    /// Every branch choice per sample fixed in turn, the rest solved as an LP.
    fn enumerate_branches(m: &LowerModel) -> Option<f64> {
        let cells: Vec<&SampleVars> = m.samples.iter().flatten().collect();
        let picks: [[f64; 5]; 4] = [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 1.0],
        ];
        let mut best: Option<f64> = None;
        for mut code in 0..4usize.pow(cells.len() as u32) {
            let mut q = m.problem.clone();
            for sv in &cells {
                let p = picks[code % 4];
                code /= 4;
                for (v, x) in [sv.beta1, sv.beta2, sv.beta3, sv.beta3a, sv.beta3b].into_iter().zip(p) {
                    q.vars[v.0].lower = x;
                    q.vars[v.0].upper = x;
                }
            }
            let r = solve_lp(&q);
            if r.status == LpStatus::Optimal {
                best = Some(best.map_or(r.objective, |b: f64| b.min(r.objective)));
            }
        }
        best
    }

    /// Arrival implied by the branch indicators against the oracle, per (bus, sample).
    /// On a guard (within solver tolerance) either neighbouring branch is accepted.
    fn check_encoding(li: &LowerInstance<'_>, samples: &[ScenarioSample], d: &LowerDecision) {
        let c = li.corridor;
        for (bi, b) in li.buses.iter().enumerate() {
            for (si, &t_st) in samples[bi].dwell.iter().enumerate() {
                let x = inputs(b, t_st, d.r[bi], &d.plan, c);
                let (arr, br) = piecewise_arrival_oracle(&x);
                let taken = d.branches[bi][si];
                let implied = branch_arrival(&x, taken);
                if taken != br {
                    assert!(admissible_branches(&x, 1e-6).contains(&taken), "bus {bi} sample {si}: {taken:?} vs {br:?}");
                } else {
                    assert!((implied - arr).abs() < 1e-6);
                }
                assert!(d.dev[bi][si] >= (implied - b.t_upp).max(0.0) - 1e-6);
            }
        }
    }

    #[test]
    fn samples_are_seeded_and_in_support() {
        let c = corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
        let li = inst(&c, vec![bus(0, 0.0, (15.0, 35.0), 1, 200.0), bus(1, 0.0, (15.0, 35.0), 1, 200.0)], 50);
        let a = sample_saa(&li);
        assert_eq!(a, sample_saa(&li));
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|s| s.dwell.len() == 50 && s.dwell.iter().all(|d| (15.0..=35.0).contains(d))));
        assert_ne!(a[0].dwell, a[1].dwell);
        let one = inst(&c, vec![bus(0, 0.0, (20.0, 20.0), 1, 200.0)], 1);
        assert_eq!(sample_saa(&one)[0].dwell, vec![20.0]);
    }

    #[test]
    fn oracle_branches() {
        let base = ArrivalInputs {
            t_arr: 0.0,
            t_st: 20.0,
            r: 60.0,
            t: 40.0,
            g: 40.0,
            yellow: 3.0,
            t_next: 140.0,
            l_app: 240.0,
            l_dep: 120.0,
            v_max: 12.0,
        };
        // e1 = 40
        assert_eq!(piecewise_arrival_oracle(&base), (70.0, Branch::Guided));
        let late = ArrivalInputs { t_st: 45.0, ..base };
        assert_eq!(piecewise_arrival_oracle(&late), (75.0, Branch::Late));
        let missed = ArrivalInputs { t_st: 70.0, ..base };
        assert_eq!(piecewise_arrival_oracle(&missed), (150.0, Branch::Missed));
        // a bus may still clear during yellow
        let yellow = ArrivalInputs { t_st: 62.0, ..base };
        assert_eq!(piecewise_arrival_oracle(&yellow).1, Branch::Late);
    }

    #[test]
    fn dwell_sweep_has_at_most_two_breakpoints() {
        for r in [45.0, 55.0, 70.0] {
            let x = ArrivalInputs {
                t_arr: 0.0,
                t_st: 0.0,
                r,
                t: 40.0,
                g: 30.0,
                yellow: 3.0,
                t_next: 140.0,
                l_app: 240.0,
                l_dep: 120.0,
                v_max: 12.0,
            };
            let ys: Vec<(f64, Branch)> = (0..=200)
                .map(|i| piecewise_arrival_oracle(&ArrivalInputs { t_st: 15.0 + 0.1 * i as f64, ..x }))
                .collect();
            let switches = ys.windows(2).filter(|w| w[0].1 != w[1].1).count();
            assert!(switches <= 2, "r = {r}: {switches}");
            assert!(ys.windows(2).all(|w| w[1].0 >= w[0].0 - 1e-12));
        }
    }

    #[test]
    fn deterministic_dwell_matches_branch_enumeration() {
        let c = corridor(&[0.0], (25.0, 25.0), vec![vec![0.0, 100.0]]);
        // assigned the second cycle, green [114, 159]; cases: early, mid green, end of green
        for (t_arr, t_upp) in [(60.0, 150.0), (90.0, 170.0), (100.0, 185.0), (120.0, 190.0)] {
            let li = inst(&c, vec![bus(0, t_arr, (25.0, 25.0), 1, t_upp)], 1);
            let samples = sample_saa(&li);
            let model = build_lower(&li, &samples).unwrap();
            let sol = solve_milp(&model.problem, &Budget::default());
            assert_eq!(sol.status, SolveStatus::Optimal);
            let best = enumerate_branches(&model).unwrap();
            assert!((sol.objective - best).abs() < 1e-6, "{t_arr}: {} vs {best}", sol.objective);
            let d = extract_decision(&li, &model, &sol).unwrap();
            check_encoding(&li, &samples, &d);
        }
    }

    #[test]
    fn identical_samples_take_identical_branches() {
        let c = corridor(&[0.0], (25.0, 25.0), vec![vec![0.0, 100.0]]);
        let li = inst(&c, vec![bus(0, 110.0, (25.0, 25.0), 1, 190.0)], 6);
        let (d, _) = solve_lower(&li, &sample_saa(&li), None, &Budget::default()).unwrap();
        assert!(d.branches[0].windows(2).all(|w| w[0] == w[1]));
        assert!(d.dev[0].windows(2).all(|w| (w[0] - w[1]).abs() < 1e-6));
    }

    #[test]
    fn generous_green_needs_no_compression() {
        let c = corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
        // e1 in [85, 105], green of cycle 2 is [114, 159]
        let li = inst(&c, vec![bus(0, 45.0, (15.0, 35.0), 1, 200.0)], 20);
        let (d, sol) = solve_lower(&li, &sample_saa(&li), None, &Budget::default()).unwrap();
        assert!(sol.objective.abs() < 1e-6);
        let x = &c.intersections[0];
        let lay = x.background.layout(&x.structure, 0, 3);
        for k in 0..3 {
            for j in 0..8 {
                assert!((d.plan.g[k][j] - lay.g[k][j]).abs() < 1e-6);
            }
        }
        check_encoding(&li, &sample_saa(&li), &d);
    }

    #[test]
    fn last_cycle_needs_an_extension() {
        let c = corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
        let li = inst(&c, vec![bus(0, 45.0, (15.0, 35.0), 2, 300.0)], 5);
        assert_eq!(
            build_lower(&li, &sample_saa(&li)).unwrap_err(),
            LowerError::Horizon { bus: 0, cycle: 2, k: 3 }
        );
        let li = LowerInstance { k: 4, ..li };
        assert!(build_lower(&li, &sample_saa(&li)).is_ok());
    }

    #[test]
    fn commands_keep_pinned_cycle_and_cap_speed() {
        let c = corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
        let li = inst(&c, vec![bus(0, 80.0, (15.0, 35.0), 1, 190.0)], 10);
        let samples = sample_saa(&li);
        let (d, _) = solve_lower(&li, &samples, None, &Budget::default()).unwrap();
        let x = &c.intersections[0];
        let lay = x.background.layout(&x.structure, 0, 1);
        assert_eq!(d.plan.t[0], lay.t[0]);
        assert_eq!(d.plan.g[0], lay.g[0]);
        let report = crate::signal::validate_plan(&d.plan, &x.structure, &x.background, &x.demand, c.delta_c).unwrap();
        assert!(report.is_empty(), "{report:?}");
        let cmd = extract_commands(&li, &d, 50.0);
        assert_eq!(cmd.plan.first_cycle, 1);
        assert_eq!(cmd.plan.cycles(), 2);
        let (_, r, v) = cmd.speeds[0];
        assert!(v > 0.0 && v <= c.v_max);
        assert!((v - (300.0 / (r - 95.0)).min(12.0)).abs() < 1e-9);
        let mut tight = d.clone();
        tight.r[0] = 95.0 + 25.0;
        assert_eq!(extract_commands(&li, &tight, 50.0).speeds[0].2, 12.0);
    }

    #[test]
    fn upper_candidate_is_kept_when_optimal() {
        let c = corridor(&[0.0], (25.0, 25.0), vec![vec![0.0, 100.0]]);
        let li = inst(&c, vec![bus(0, 70.0, (25.0, 25.0), 1, 200.0)], 3);
        let samples = sample_saa(&li);
        let x = &c.intersections[0];
        let lay = x.background.layout(&x.structure, 0, 3);
        let r = [120.0];
        let (d, sol) = solve_lower(&li, &samples, Some((&lay, &r)), &Budget::default()).unwrap();
        assert!(sol.kept_incumbent);
        assert_eq!(d.r, r.to_vec());
        assert_eq!(d.plan, lay);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn milp_arrivals_match_oracle(
            t_arr in 40.0f64..140.0,
            lo in 0.0f64..30.0,
            width in 0.0f64..30.0,
            slack in -20.0f64..60.0,
            n in 1usize..=5,
            seed in 0u64..1000,
        ) {
            let c = corridor(&[0.0], (lo, lo + width), vec![vec![0.0, 100.0]]);
            let t_upp = t_arr + lo + 50.0 + slack;
            let mut li = inst(&c, vec![bus(0, t_arr, (lo, lo + width), 1, t_upp)], n);
            li.seed = seed;
            let samples = sample_saa(&li);
            let (d, sol) = solve_lower(&li, &samples, None, &Budget::default()).unwrap();
            prop_assert_eq!(sol.status, SolveStatus::Optimal);
            check_encoding(&li, &samples, &d);
        }
    }

    #[test]
    #[ignore]
    fn reference_size() {
        // timing bench at the reference sample count: cargo test --lib reference_size -- --ignored --nocapture
        let c = corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
        for (nb, t0, gap) in [(1, 60.0, 0.0), (1, 100.0, 0.0), (2, 20.0, 120.0), (2, 70.0, 25.0), (3, 60.0, 25.0)] {
            let buses = (0..nb)
                .map(|n| {
                    let t = t0 + gap * n as f64;
                    let cycle = (t / 100.0) as usize + 1;
                    bus(n, t, (15.0, 35.0), cycle.min(1), t + 80.0)
                })
                .collect();
            let li = inst(&c, buses, 50);
            let samples = sample_saa(&li);
            let t = std::time::Instant::now();
            let (_, sol) = solve_lower(&li, &samples, None, &Budget::default()).unwrap();
            eprintln!("{nb} buses from {t0}: {:?} nodes {} pivots {} in {:?}", sol.status, sol.nodes, sol.pivots, t.elapsed());
        }
    }
}
