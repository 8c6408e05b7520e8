use crate::bus::{DwellModel, RouteSegment, Timetable};
use crate::corridor::{Corridor, Intersection};
use crate::milp::{solve_lp, LpStatus, MilpProblem, VarId};
use crate::signal::{BackgroundPlan, DemandProfile, DualRingStructure, Ring};

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

/// Identical intersections with C = 100, bus phase 2 green 45 s, no demand floor beyond 9 s.
pub fn corridor(offsets: &[f64], dwell: (f64, f64), scheduled: Vec<Vec<f64>>) -> Corridor {
    let intersections = offsets
        .iter()
        .enumerate()
        .map(|(i, &off)| {
            let structure = nema(i);
            let background =
                BackgroundPlan::new(&structure, 100.0, off, vec![14.0, 48.0, 23.0, 15.0, 25.0, 37.0, 12.0, 26.0]).unwrap();
            let demand = DemandProfile::new(vec![0.0; 8], vec![1800.0; 8], 0.9, 9.0).unwrap();
            Intersection {
                structure,
                background,
                demand,
            }
        })
        .collect();
    let segments = (0..offsets.len()).map(|i| RouteSegment::new(i, 300.0, 300.0).unwrap()).collect();
    Corridor {
        intersections,
        segments,
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
