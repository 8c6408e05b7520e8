#![allow(dead_code)]

use hiertsp::bus::{DwellDist, DwellModel, RouteSegment, Timetable};
use hiertsp::corridor::{Corridor, Intersection, Weights};
use hiertsp::lower::{LowerBus, LowerInstance};
use hiertsp::milp::{solve_lp, LpStatus, MilpProblem, ModelBuilder, Sense, VarId, VarKind};
use hiertsp::signal::{BackgroundPlan, Boundary, DemandProfile, DualRingStructure, Ring};
use hiertsp::upper::SignalWindow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Optimum over binary assignments, each completed by an LP solve.
/// Returns `None` when every assignment is infeasible.
pub fn enumerate_binaries(p: &MilpProblem<f64>) -> Option<f64> {
    let bins: Vec<usize> = p
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| i)
        .collect();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1u64 << bins.len()) {
        let mut q = p.clone();
        for (k, &j) in bins.iter().enumerate() {
            let v = ((mask >> k) & 1) as f64;
            q.vars[j].lower = v;
            q.vars[j].upper = v;
        }
        let r = solve_lp(&q);
        if r.status == LpStatus::Optimal {
            best = Some(best.map_or(r.objective, |b: f64| b.min(r.objective)));
        }
    }
    best
}

/// LP optimum by brute-force vertex enumeration; all variables must be bounded.
pub fn vertex_lp(p: &MilpProblem<f64>) -> Option<f64> {
    let n = p.vars.len();
    // every constraint and bound as a hyperplane a.x = b plus its feasibility check
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &p.constraints {
        let mut a = vec![0.0; n];
        for &(v, k) in &c.terms {
            a[v.0] = k;
        }
        planes.push((a, c.rhs));
    }
    for (j, v) in p.vars.iter().enumerate() {
        assert!(v.lower.is_finite() && v.upper.is_finite());
        let mut a = vec![0.0; n];
        a[j] = 1.0;
        planes.push((a.clone(), v.lower));
        planes.push((a, v.upper));
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    if n == 0 {
        return Some(p.objective.constant);
    }
    loop {
        if let Some(x) = solve_square(&idx.iter().map(|&i| planes[i].clone()).collect::<Vec<_>>()) {
            if p.max_violation(&x) <= 1e-7 {
                let f = p.objective.eval(&x);
                best = Some(best.map_or(f, |b: f64| b.min(f)));
            }
        }
        // next combination
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < planes.len() - n + k {
                idx[k] += 1;
                for t in k + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn solve_square(rows: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|(a, b)| {
            let mut r = a.clone();
            r.push(*b);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Random MILP whose rows are satisfied by a hidden point most of the time.
pub fn random_milp(seed: u64, max_bin: usize, max_cont: usize, bounded: bool) -> MilpProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.gen_range(1..=max_bin);
    let nc = rng.gen_range(0..=max_cont);
    let mut b = ModelBuilder::<f64>::new();
    let mut ids = Vec::new();
    let mut hidden = Vec::new();
    for i in 0..nb {
        ids.push(b.binary(format!("b{i}")));
        hidden.push(rng.gen_range(0..=1) as f64);
    }
    for i in 0..nc {
        let lo = rng.gen_range(-5..=0) as f64;
        let hi = if bounded || rng.gen_bool(0.7) { lo + rng.gen_range(1..=10) as f64 } else { f64::INFINITY };
        ids.push(b.continuous(format!("y{i}"), lo, hi));
        hidden.push(lo + rng.gen_range(0.0..1.0) * (hi.min(lo + 10.0) - lo));
    }
    let rows = rng.gen_range(1..=(nb + nc).clamp(2, 10));
    for r in 0..rows {
        let k = rng.gen_range(1..=ids.len().min(5));
        let mut terms = Vec::new();
        for _ in 0..k {
            let j = rng.gen_range(0..ids.len());
            let mut a = rng.gen_range(-6..=6) as f64;
            if a == 0.0 {
                a = 1.0;
            }
            terms.push((ids[j], a));
        }
        let act: f64 = terms.iter().map(|&(v, a)| a * hidden[v.0]).sum();
        let kind = rng.gen_range(0..10);
        let (sense, rhs) = match kind {
            0 => (Sense::Eq, act),
            1..=4 => (Sense::Le, (act + rng.gen_range(0.0..4.0)).round()),
            5..=8 => (Sense::Ge, (act - rng.gen_range(0.0..4.0)).round()),
            _ => (Sense::Le, rng.gen_range(-8..=8) as f64),
        };
        b.add(format!("r{r}"), terms, sense, rhs);
    }
    for &v in &ids {
        let c = rng.gen_range(-9..=9) as f64;
        if c != 0.0 {
            b.minimize_term(v, c);
        }
    }
    b.build().expect("generated problem is valid")
}

pub fn nema(i: usize) -> DualRingStructure {
    DualRingStructure::new(
        i,
        vec![
            Ring { phases: vec![1, 2, 3, 4], barrier_at: 2 },
            Ring { phases: vec![5, 6, 7, 8], barrier_at: 2 },
        ],
        vec![2, 6],
        vec![2],
        3.0,
    )
    .unwrap()
}

/// Identical intersections with C = 100 and bus phase 2 (green 45 s).
pub fn corridor(offsets: &[f64], dwell: (f64, f64), scheduled: Vec<Vec<f64>>) -> Corridor {
    let intersections = offsets
        .iter()
        .enumerate()
        .map(|(i, &off)| {
            let structure = nema(i);
            let background =
                BackgroundPlan::new(&structure, 100.0, off, vec![14.0, 48.0, 23.0, 15.0, 25.0, 37.0, 12.0, 26.0]).unwrap();
            let demand = DemandProfile::new(vec![0.0; 8], vec![1800.0; 8], 0.9, 9.0).unwrap();
            Intersection { structure, background, demand }
        })
        .collect();
    Corridor {
        intersections,
        segments: (0..offsets.len()).map(|i| RouteSegment::new(i, 300.0, 300.0).unwrap()).collect(),
        timetable: Timetable::new(120.0, scheduled).unwrap(),
        dwell: DwellModel::uniform(offsets.len() + 1, dwell.0, dwell.1).unwrap(),
        v_max: 12.0,
        delta_c: 5.0,
    }
}

/// Minimum over every one-hot choice in each group, the rest solved as an LP.
pub fn enumerate_groups(p: &MilpProblem<f64>, groups: &[Vec<VarId>]) -> Option<f64> {
    let total: usize = groups.iter().map(|g| g.len()).product();
    let mut best: Option<f64> = None;
    for mut code in 0..total {
        let mut q = p.clone();
        for g in groups {
            let pick = code % g.len();
            code /= g.len();
            for (k, v) in g.iter().enumerate() {
                let x = if k == pick { 1.0 } else { 0.0 };
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

pub const LOWER_K: usize = 3;

/// One bus on intersection 0 of `c`, assigned cycle 1, with cycle 0 in service.
pub fn lower_instance(c: &Corridor, t_arr: f64, dwell: (f64, f64), t_upp: f64, n_saa: usize, seed: u64) -> LowerInstance<'_> {
    let x = &c.intersections[0];
    let lay = x.background.layout(&x.structure, 0, 1);
    LowerInstance {
        corridor: c,
        intersection: 0,
        window: SignalWindow {
            first_cycle: 0,
            boundary: Boundary::CommittedCycle { t: lay.t[0].clone(), g: lay.g[0].clone() },
        },
        k: LOWER_K,
        buses: vec![LowerBus {
            id: 0,
            t_arr,
            dwell: DwellDist::Uniform { min: dwell.0, max: dwell.1 },
            l_app: 300.0,
            l_dep: 300.0,
            cycle: 1,
            t_upp,
        }],
        limits: vec![],
        keep_open: vec![],
        weights: Weights::default(),
        n_saa,
        seed,
    }
}
