//! Per-replication schedule adherence, headway regularity and car-side proxies.

use serde::{Deserialize, Serialize};

use crate::bus::{punctual, Timetable};
use crate::corridor::Corridor;
use crate::sim::CycleTiming;

pub const PUNCTUAL_WINDOW: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalMetrics {
    /// Mean |t_arr − t_opt| over every realised (bus, stop), s.
    pub mean_deviation: f64,
    /// Sample SD of consecutive-arrival gaps per stop, averaged over stops, s.
    pub headway_sd: f64,
    pub punctual_rate: f64,
    /// Mean |deviation| per stop.
    pub per_stop: Vec<f64>,
    pub arrivals: usize,
    /// Scheduled (bus, stop) pairs with no arrival before the run ended.
    pub missing: usize,
}

fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// `arrivals[bus][stop]` as recorded by the simulator.
pub fn compute_metrics(arrivals: &[Vec<Option<f64>>], timetable: &Timetable) -> ArrivalMetrics {
    let stops = arrivals.first().map_or(0, |r| r.len());
    let mut devs = Vec::new();
    let mut per_stop = vec![(0.0, 0usize); stops];
    let mut on_time = 0usize;
    let mut missing = 0usize;
    for (n, row) in arrivals.iter().enumerate() {
        for (s, a) in row.iter().enumerate() {
            match a {
                Some(t) => {
                    let opt = timetable.t_opt(n, s);
                    let d = (t - opt).abs();
                    devs.push(d);
                    per_stop[s].0 += d;
                    per_stop[s].1 += 1;
                    on_time += punctual(*t, opt, PUNCTUAL_WINDOW) as usize;
                }
                None => missing += 1,
            }
        }
    }
    let mut sds = Vec::new();
    for s in 0..stops {
        let mut times: Vec<f64> = arrivals.iter().filter_map(|r| r[s]).collect();
        times.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(sd) = sample_sd(&gaps) {
            sds.push(sd);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    ArrivalMetrics {
        mean_deviation: mean(&devs),
        headway_sd: mean(&sds),
        punctual_rate: if devs.is_empty() { 0.0 } else { on_time as f64 / devs.len() as f64 },
        per_stop: per_stop
            .iter()
            .map(|&(sum, k)| if k == 0 { 0.0 } else { sum / k as f64 })
            .collect(),
        arrivals: devs.len(),
        missing,
    }
}

/// Total green taken from background splits over executed cycles, s.
pub fn green_compression(c: &Corridor, executed: &[Vec<CycleTiming>]) -> f64 {
    let mut total = 0.0;
    for (x, cycles) in c.intersections.iter().zip(executed) {
        for cy in cycles {
            for (j, g) in cy.g.iter().enumerate() {
                total += (x.background.green(&x.structure, j) - g).max(0.0);
            }
        }
    }
    total
}

/// Largest amount by which a coordinated phase start moved against its
/// neighbour's beyond the background offset difference, over executed cycles.
pub fn band_deviation(c: &Corridor, executed: &[Vec<CycleTiming>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 1..c.intersections.len() {
        let (a, b) = (&c.intersections[i - 1], &c.intersections[i]);
        for &phase in &a.structure.coordinated {
            let (Some(ja), Some(jb)) = (a.structure.slot(phase), b.structure.slot(phase)) else { continue };
            for ca in &executed[i - 1] {
                let Some(cb) = executed[i].iter().find(|cb| cb.index == ca.index) else { continue };
                let ra = a.background.phase_start(&a.structure, ca.index, ja);
                let rb = b.background.phase_start(&b.structure, ca.index, jb);
                let moved = (ca.t[ja] - cb.t[jb]).abs() - (ra - rb).abs();
                worst = worst.max(moved);
            }
        }
    }
    worst
}
