//! Dual-ring signal structure, timing plans and the timing constraint generators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{LinearConstraint, ModelBuilder, Sense, VarId};
use crate::scalar::Scalar;

pub type PhaseId = u8;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("intersection {0}: {1}")]
    Structure(usize, String),
    #[error("intersection {0}: background plan {1}")]
    Background(usize, String),
    #[error("demand profile: {0}")]
    Demand(String),
    #[error("plan shape does not match structure: {0}")]
    Dimension(String),
}

/// One ring: phases in service order, split by the barrier into two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub phases: Vec<PhaseId>,
    /// Index of the first phase after the barrier.
    pub barrier_at: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualRingStructure {
    pub intersection: usize,
    pub rings: Vec<Ring>,
    pub coordinated: Vec<PhaseId>,
    pub bus_phases: Vec<PhaseId>,
    pub yellow: f64,
}

impl DualRingStructure {
    pub fn new(
        intersection: usize,
        rings: Vec<Ring>,
        coordinated: Vec<PhaseId>,
        bus_phases: Vec<PhaseId>,
        yellow: f64,
    ) -> Result<Self, SignalError> {
        let err = |m: &str| SignalError::Structure(intersection, m.to_string());
        if rings.is_empty() || rings.len() > 2 {
            return Err(err("expected one or two rings"));
        }
        if !(yellow > 0.0) {
            return Err(err("yellow must be positive"));
        }
        let mut seen = Vec::new();
        for r in &rings {
            if r.phases.is_empty() {
                return Err(err("empty ring"));
            }
            if rings.len() == 2 && (r.barrier_at == 0 || r.barrier_at >= r.phases.len()) {
                return Err(err("barrier must leave phases on both sides"));
            }
            for p in &r.phases {
                if seen.contains(p) {
                    return Err(err("phase listed twice"));
                }
                seen.push(*p);
            }
        }
        if bus_phases.is_empty() {
            return Err(err("no bus phase"));
        }
        for p in bus_phases.iter().chain(&coordinated) {
            if !seen.contains(p) {
                return Err(err("bus or coordinated phase not in any ring"));
            }
        }
        Ok(DualRingStructure {
            intersection,
            rings,
            coordinated,
            bus_phases,
            yellow,
        })
    }

    /// Phases in slot order: ring 0 in sequence, then ring 1.
    pub fn phases(&self) -> Vec<PhaseId> {
        self.rings.iter().flat_map(|r| r.phases.iter().copied()).collect()
    }

    pub fn num_slots(&self) -> usize {
        self.rings.iter().map(|r| r.phases.len()).sum()
    }

    pub fn slot(&self, phase: PhaseId) -> Option<usize> {
        self.phases().iter().position(|&p| p == phase)
    }

    fn ring_offset(&self, ring: usize) -> usize {
        self.rings[..ring].iter().map(|r| r.phases.len()).sum()
    }

    /// Slots of a ring in service order.
    pub fn ring_slots(&self, ring: usize) -> std::ops::Range<usize> {
        let o = self.ring_offset(ring);
        o..o + self.rings[ring].phases.len()
    }

    pub fn first_slots(&self) -> Vec<usize> {
        (0..self.rings.len()).map(|r| self.ring_slots(r).start).collect()
    }

    pub fn last_slots(&self) -> Vec<usize> {
        (0..self.rings.len()).map(|r| self.ring_slots(r).end - 1).collect()
    }

    /// Slot pairs that must start together: ring starts and post-barrier starts.
    pub fn barrier_pairs(&self) -> Vec<(usize, usize)> {
        if self.rings.len() < 2 {
            return Vec::new();
        }
        let a = self.ring_offset(0);
        let b = self.ring_offset(1);
        vec![
            (a, b),
            (a + self.rings[0].barrier_at, b + self.rings[1].barrier_at),
        ]
    }

    /// The slot the buses are served by.
    pub fn bus_slot(&self) -> usize {
        self.slot(self.bus_phases[0]).expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPlan {
    pub cycle: f64,
    pub offset: f64,
    /// Green plus yellow per slot.
    pub splits: Vec<f64>,
}

impl BackgroundPlan {
    pub fn new(s: &DualRingStructure, cycle: f64, offset: f64, splits: Vec<f64>) -> Result<Self, SignalError> {
        let err = |m: String| SignalError::Background(s.intersection, m);
        if splits.len() != s.num_slots() {
            return Err(err("split count differs from phase count".into()));
        }
        if !(cycle > 0.0) || !(0.0..cycle).contains(&offset) {
            return Err(err("offset must lie in [0, C)".into()));
        }
        for (r, ring) in s.rings.iter().enumerate() {
            let sum: f64 = s.ring_slots(r).map(|j| splits[j]).sum();
            if (sum - cycle).abs() > 1e-6 {
                return Err(err(format!("ring {r} splits sum to {sum}, not {cycle}")));
            }
            if s.ring_slots(r).any(|j| splits[j] < s.yellow) {
                return Err(err("split shorter than yellow".into()));
            }
            let _ = ring;
        }
        if s.rings.len() == 2 {
            let half = |r: usize| -> f64 {
                let sl = s.ring_slots(r);
                (sl.start..sl.start + s.rings[r].barrier_at).map(|j| splits[j]).sum()
            };
            if (half(0) - half(1)).abs() > 1e-6 {
                return Err(err("rings reach the barrier at different times".into()));
            }
        }
        Ok(BackgroundPlan { cycle, offset, splits })
    }

    pub fn green(&self, s: &DualRingStructure, slot: usize) -> f64 {
        self.splits[slot] - s.yellow
    }

    pub fn cycle_start(&self, m: i64) -> f64 {
        self.offset + m as f64 * self.cycle
    }

    /// Index of the background cycle running at `time`.
    pub fn cycle_index_at(&self, time: f64) -> i64 {
        ((time - self.offset) / self.cycle).floor() as i64
    }

    /// Offset of a slot's start from its cycle start.
    pub fn start_in_cycle(&self, s: &DualRingStructure, slot: usize) -> f64 {
        let ring = (0..s.rings.len())
            .find(|&r| s.ring_slots(r).contains(&slot))
            .expect("slot in range");
        (s.ring_slots(ring).start..slot).map(|j| self.splits[j]).sum()
    }

    /// Reference start t^opt of a slot within background cycle `m`.
    pub fn phase_start(&self, s: &DualRingStructure, m: i64, slot: usize) -> f64 {
        self.cycle_start(m) + self.start_in_cycle(s, slot)
    }

    /// The background plan laid out over `k` cycles starting at cycle `first`.
    pub fn layout(&self, s: &DualRingStructure, first: i64, k: usize) -> TimingPlan {
        let n = s.num_slots();
        let mut t = Vec::with_capacity(k);
        let mut g = Vec::with_capacity(k);
        for c in 0..k {
            let m = first + c as i64;
            t.push((0..n).map(|j| self.phase_start(s, m, j)).collect());
            g.push((0..n).map(|j| self.green(s, j)).collect());
        }
        TimingPlan {
            intersection: s.intersection,
            first_cycle: first,
            t,
            g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub volumes: Vec<f64>,
    pub saturation: Vec<f64>,
    pub critical_saturation: f64,
    pub min_green: f64,
}

impl DemandProfile {
    pub fn new(volumes: Vec<f64>, saturation: Vec<f64>, critical_saturation: f64, min_green: f64) -> Result<Self, SignalError> {
        if volumes.len() != saturation.len() {
            return Err(SignalError::Demand("volume and saturation lengths differ".into()));
        }
        if volumes.iter().any(|v| !(*v >= 0.0)) {
            return Err(SignalError::Demand("negative volume".into()));
        }
        if saturation.iter().any(|s| !(*s > 0.0)) {
            return Err(SignalError::Demand("saturation flow must be positive".into()));
        }
        if !(critical_saturation > 0.0 && critical_saturation <= 1.0) {
            return Err(SignalError::Demand("critical saturation must lie in (0, 1]".into()));
        }
        if !(min_green >= 0.0) {
            return Err(SignalError::Demand("negative minimum green".into()));
        }
        Ok(DemandProfile {
            volumes,
            saturation,
            critical_saturation,
            min_green,
        })
    }

    /// Lower bound on green for a slot: max(V·C/(S·Xc), G^min).
    pub fn min_green_bound(&self, slot: usize, cycle: f64) -> f64 {
        let v = self.volumes[slot] * cycle / (self.saturation[slot] * self.critical_saturation);
        v.max(self.min_green)
    }
}

/// Concrete start times and greens, indexed `[cycle][slot]`; cycle 0 is the one in service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPlan {
    pub intersection: usize,
    /// Background cycle index aligned with the first planned cycle.
    pub first_cycle: i64,
    pub t: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

impl TimingPlan {
    pub fn cycles(&self) -> usize {
        self.t.len()
    }

    /// End of the ring-0 last phase including yellow.
    pub fn cycle_end(&self, s: &DualRingStructure, k: usize) -> f64 {
        let last = s.last_slots()[0];
        self.t[k][last] + self.g[k][last] + s.yellow
    }

    pub fn cycle_start(&self, s: &DualRingStructure, k: usize) -> f64 {
        self.t[k][s.first_slots()[0]]
    }
}

/// Decision variables for a plan inside a model.
#[derive(Debug, Clone)]
pub struct PlanVars {
    pub t: Vec<Vec<VarId>>,
    pub g: Vec<Vec<VarId>>,
}

impl PlanVars {
    pub fn declare<T: Scalar>(b: &mut ModelBuilder<T>, s: &DualRingStructure, k: usize, tag: &str) -> Self {
        let n = s.num_slots();
        let phases = s.phases();
        let mut t = Vec::with_capacity(k);
        let mut g = Vec::with_capacity(k);
        for c in 0..k {
            t.push((0..n).map(|j| b.free(format!("t_{tag}_k{}_p{}", c + 1, phases[j]))).collect());
            g.push(
                (0..n)
                    .map(|j| b.continuous(format!("g_{tag}_k{}_p{}", c + 1, phases[j]), T::zero(), T::infinity()))
                    .collect(),
            );
        }
        PlanVars { t, g }
    }

    pub fn cycles(&self) -> usize {
        self.t.len()
    }

    /// Reads a plan back out of a solution vector.
    pub fn extract(&self, values: &[f64], intersection: usize, first_cycle: i64) -> TimingPlan {
        TimingPlan {
            intersection,
            first_cycle,
            t: self.t.iter().map(|r| r.iter().map(|v| values[v.0]).collect()).collect(),
            g: self.g.iter().map(|r| r.iter().map(|v| values[v.0]).collect()).collect(),
        }
    }
}

/// What is already fixed when a plan is (re)optimised.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Nothing pinned.
    Free,
    /// Start time of the phase currently in service in cycle 1.
    PhaseStart { phase: PhaseId, start: f64 },
    /// The whole in-service cycle 1, which may not be changed.
    CommittedCycle { t: Vec<f64>, g: Vec<f64> },
}

fn lc(name: String, terms: Vec<(VarId, f64)>, sense: Sense, rhs: f64) -> LinearConstraint<f64> {
    LinearConstraint::new(name, terms, sense, rhs)
}

/// Succession within a ring, cycle roll-over, barrier alignment and the boundary pin.
pub fn gen_ring_constraints(
    s: &DualRingStructure,
    vars: &PlanVars,
    boundary: &Boundary,
) -> Result<Vec<LinearConstraint<f64>>, SignalError> {
    let i = s.intersection;
    let y = s.yellow;
    let k_max = vars.cycles();
    let n = s.num_slots();
    if vars.t.iter().chain(&vars.g).any(|r| r.len() != n) {
        return Err(SignalError::Dimension(format!("variables for intersection {i} do not cover every phase")));
    }
    let phases = s.phases();
    let mut out = Vec::new();
    for k in 0..k_max {
        for r in 0..s.rings.len() {
            let slots = s.ring_slots(r);
            for j in slots.start..slots.end - 1 {
                // t_next = t_j + g_j + Y
                out.push(lc(
                    format!("seq_i{i}_k{}_p{}", k + 1, phases[j + 1]),
                    vec![(vars.t[k][j + 1], 1.0), (vars.t[k][j], -1.0), (vars.g[k][j], -1.0)],
                    Sense::Eq,
                    y,
                ));
            }
            if k + 1 < k_max {
                let last = slots.end - 1;
                out.push(lc(
                    format!("roll_i{i}_k{}_r{}", k + 1, r + 1),
                    vec![(vars.t[k + 1][slots.start], 1.0), (vars.t[k][last], -1.0), (vars.g[k][last], -1.0)],
                    Sense::Eq,
                    y,
                ));
            }
        }
        for (a, b) in s.barrier_pairs() {
            out.push(lc(
                format!("barrier_i{i}_k{}_p{}_p{}", k + 1, phases[a], phases[b]),
                vec![(vars.t[k][a], 1.0), (vars.t[k][b], -1.0)],
                Sense::Eq,
                0.0,
            ));
        }
    }
    match boundary {
        Boundary::Free => {}
        Boundary::PhaseStart { phase, start } => {
            let j = s
                .slot(*phase)
                .ok_or_else(|| SignalError::Structure(i, format!("phase {phase} not in structure")))?;
            if k_max == 0 {
                return Err(SignalError::Dimension("boundary needs at least one cycle".into()));
            }
            out.push(lc(format!("pin_i{i}_p{phase}"), vec![(vars.t[0][j], 1.0)], Sense::Eq, *start));
        }
        Boundary::CommittedCycle { t, g } => {
            if t.len() != n || g.len() != n || k_max == 0 {
                return Err(SignalError::Dimension("committed cycle shape".into()));
            }
            for j in 0..n {
                out.push(lc(format!("pin_t_i{i}_p{}", phases[j]), vec![(vars.t[0][j], 1.0)], Sense::Eq, t[j]));
                out.push(lc(format!("pin_g_i{i}_p{}", phases[j]), vec![(vars.g[0][j], 1.0)], Sense::Eq, g[j]));
            }
        }
    }
    Ok(out)
}

/// Per cycle and phase: g ≥ max(V·C/(S·Xc), G^min).
pub fn gen_min_green(
    s: &DualRingStructure,
    demand: &DemandProfile,
    cycle: f64,
    vars: &PlanVars,
) -> Vec<LinearConstraint<f64>> {
    let phases = s.phases();
    let mut out = Vec::new();
    for (k, row) in vars.g.iter().enumerate() {
        for (j, &g) in row.iter().enumerate() {
            out.push(lc(
                format!("mingreen_i{}_k{}_p{}", s.intersection, k + 1, phases[j]),
                vec![(g, 1.0)],
                Sense::Ge,
                demand.min_green_bound(j, cycle),
            ));
        }
    }
    out
}

/// One intersection's view for the horizon and coordination constraints.
#[derive(Debug, Clone, Copy)]
pub struct CorridorEntry<'a> {
    pub structure: &'a DualRingStructure,
    pub background: &'a BackgroundPlan,
    pub vars: &'a PlanVars,
    /// Background cycle index aligned with planned cycle 1.
    pub first_cycle: i64,
}

/// Horizon end of an intersection's plan on the background cycle grid.
pub fn horizon_end(bg: &BackgroundPlan, first_cycle: i64, k: usize) -> f64 {
    bg.cycle_start(first_cycle) + k as f64 * bg.cycle
}

/// Fixed horizon end per intersection, and the coordination band between neighbours.
///
/// Entries must be in corridor order; consecutive entries are treated as adjacent.
pub fn gen_horizon_and_coordination(corridor: &[CorridorEntry<'_>], delta_c: f64) -> Vec<LinearConstraint<f64>> {
    let mut out = Vec::new();
    for e in corridor {
        let s = e.structure;
        let k = e.vars.cycles();
        if k == 0 {
            continue;
        }
        let end = horizon_end(e.background, e.first_cycle, k);
        let phases = s.phases();
        for last in s.last_slots() {
            out.push(lc(
                format!("horizon_i{}_p{}", s.intersection, phases[last]),
                vec![(e.vars.t[k - 1][last], 1.0), (e.vars.g[k - 1][last], 1.0)],
                Sense::Eq,
                end - s.yellow,
            ));
        }
    }
    for w in corridor.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        for &phase in &a.structure.coordinated {
            let (Some(ja), Some(jb)) = (a.structure.slot(phase), b.structure.slot(phase)) else {
                continue;
            };
            // cycles are paired by background index, not by position in the horizon
            for ca in 0..a.vars.cycles() {
                let m = a.first_cycle + ca as i64;
                let cb = m - b.first_cycle;
                if cb < 0 || cb as usize >= b.vars.cycles() {
                    continue;
                }
                let cb = cb as usize;
                let ra = a.background.phase_start(a.structure, m, ja);
                let rb = b.background.phase_start(b.structure, m, jb);
                let band = (ra - rb).abs() + delta_c;
                let ta = a.vars.t[ca][ja];
                let tb = b.vars.t[cb][jb];
                let tag = format!("i{}_i{}_m{m}_p{phase}", a.structure.intersection, b.structure.intersection);
                out.push(lc(format!("coord_up_{tag}"), vec![(ta, 1.0), (tb, -1.0)], Sense::Le, band));
                out.push(lc(format!("coord_dn_{tag}"), vec![(tb, 1.0), (ta, -1.0)], Sense::Le, band));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    Succession,
    Rollover,
    Barrier,
    MinGreen,
    Horizon,
    Coordination,
    NegativeGreen,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub constraint: String,
    pub amount: f64,
}

fn kind_of(name: &str) -> ViolationKind {
    match name.split('_').next().unwrap_or("") {
        "seq" => ViolationKind::Succession,
        "roll" => ViolationKind::Rollover,
        "barrier" => ViolationKind::Barrier,
        "mingreen" => ViolationKind::MinGreen,
        "horizon" => ViolationKind::Horizon,
        "coord" => ViolationKind::Coordination,
        _ => ViolationKind::Boundary,
    }
}

/// Everything needed to check one intersection's plan.
#[derive(Debug, Clone, Copy)]
pub struct PlanCheck<'a> {
    pub plan: &'a TimingPlan,
    pub structure: &'a DualRingStructure,
    pub background: &'a BackgroundPlan,
    pub demand: &'a DemandProfile,
}

/// Re-checks every timing constraint on concrete plans of a corridor (listed in corridor order).
pub fn validate_corridor(plans: &[PlanCheck<'_>], delta_c: f64) -> Result<Vec<Violation>, SignalError> {
    let mut b = ModelBuilder::<f64>::new();
    let mut vars = Vec::new();
    let mut values = Vec::new();
    for pc in plans {
        let n = pc.structure.num_slots();
        if pc.plan.t.len() != pc.plan.g.len() || pc.plan.t.iter().chain(&pc.plan.g).any(|r| r.len() != n) {
            return Err(SignalError::Dimension(format!(
                "plan for intersection {} has the wrong number of phases or cycles",
                pc.structure.intersection
            )));
        }
        let v = PlanVars::declare(&mut b, pc.structure, pc.plan.cycles(), &pc.structure.intersection.to_string());
        values.resize(b.num_vars(), 0.0);
        for k in 0..pc.plan.cycles() {
            for j in 0..n {
                values[v.t[k][j].0] = pc.plan.t[k][j];
                values[v.g[k][j].0] = pc.plan.g[k][j];
            }
        }
        vars.push(v);
    }
    let mut cons = Vec::new();
    let mut report = Vec::new();
    for (pc, v) in plans.iter().zip(&vars) {
        cons.extend(gen_ring_constraints(pc.structure, v, &Boundary::Free)?);
        cons.extend(gen_min_green(pc.structure, pc.demand, pc.background.cycle, v));
        for (k, row) in pc.plan.g.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                if *g < -1e-6 {
                    report.push(Violation {
                        kind: ViolationKind::NegativeGreen,
                        constraint: format!("green_i{}_k{}_slot{j}", pc.structure.intersection, k + 1),
                        amount: -g,
                    });
                }
            }
        }
    }
    let entries: Vec<CorridorEntry<'_>> = plans
        .iter()
        .zip(&vars)
        .map(|(pc, v)| CorridorEntry {
            structure: pc.structure,
            background: pc.background,
            vars: v,
            first_cycle: pc.plan.first_cycle,
        })
        .collect();
    cons.extend(gen_horizon_and_coordination(&entries, delta_c));
    for c in &cons {
        let amount = c.violation(&values);
        if amount > 1e-6 {
            report.push(Violation {
                kind: kind_of(&c.name),
                constraint: c.name.clone(),
                amount,
            });
        }
    }
    Ok(report)
}

/// Single-intersection check; the coordination band needs neighbours and is skipped.
pub fn validate_plan(
    plan: &TimingPlan,
    structure: &DualRingStructure,
    background: &BackgroundPlan,
    demand: &DemandProfile,
    delta_c: f64,
) -> Result<Vec<Violation>, SignalError> {
    validate_corridor(
        &[PlanCheck {
            plan,
            structure,
            background,
            demand,
        }],
        delta_c,
    )
}
