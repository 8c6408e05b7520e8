//! Paired Monte-Carlo replications and their aggregates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::{band_deviation, compute_metrics, green_compression, ArrivalMetrics};
use super::scenario::Scenario;
use crate::controller::{run_closed_loop, ControllerKind, RunOutput, Stage};
use crate::sim::{car_delay_proxy, SimConfig};

/// Worker count for replications.
pub const WORKERS_ENV: &str = "HIERTSP_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub metrics: ArrivalMetrics,
    /// Volume-weighted uniform delay over executed greens, s/veh.
    pub car_delay: f64,
    pub oversaturated_phases: usize,
    /// Green taken from background splits over the run, s.
    pub compression: f64,
    /// Worst coordination-band movement beyond the background offsets, s.
    pub band_deviation: f64,
    pub rejections: usize,
    pub lock_violations: usize,
    pub ticks: usize,
    pub tick_ms_mean: f64,
    pub tick_ms_max: f64,
    pub lower_ms_mean: f64,
    pub lower_ms_max: f64,
    /// Ticks that sent nothing or replaced a lower result with the route-level plan.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Half-width of the 95% confidence interval (Student t); 0 with one value.
    pub ci95: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(xs: &[f64]) -> Aggregate {
        let n = xs.len();
        if n == 0 {
            return Aggregate { mean: f64::NAN, ci95: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Aggregate { mean, ci95: 0.0, n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n ≥ 2").inverse_cdf(0.975);
        Aggregate {
            mean,
            ci95: t * (var / n as f64).sqrt(),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub mean_deviation: Aggregate,
    pub headway_sd: Aggregate,
    pub punctual_rate: Aggregate,
    pub car_delay: Aggregate,
    pub compression: Aggregate,
    /// Mean over replications of each stop's mean |deviation|.
    pub per_stop: Vec<f64>,
    pub max_band_deviation: f64,
    pub rejections: usize,
    pub lower_ms_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub kind: ControllerKind,
    pub replications: Vec<ReplicationResult>,
    /// (replication, message) for runs that aborted.
    pub failures: Vec<(usize, String)>,
    pub summary: ControllerSummary,
}

impl ControllerReport {
    pub fn partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Aggregates straight from the stored replications.
pub fn summarize(reps: &[ReplicationResult]) -> ControllerSummary {
    let col = |f: &dyn Fn(&ReplicationResult) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
    let stops = reps.first().map_or(0, |r| r.metrics.per_stop.len());
    let per_stop = (0..stops)
        .map(|s| reps.iter().map(|r| r.metrics.per_stop[s]).sum::<f64>() / reps.len() as f64)
        .collect();
    ControllerSummary {
        mean_deviation: Aggregate::of(&col(&|r| r.metrics.mean_deviation)),
        headway_sd: Aggregate::of(&col(&|r| r.metrics.headway_sd)),
        punctual_rate: Aggregate::of(&col(&|r| r.metrics.punctual_rate)),
        car_delay: Aggregate::of(&col(&|r| r.car_delay)),
        compression: Aggregate::of(&col(&|r| r.compression)),
        per_stop,
        max_band_deviation: reps.iter().map(|r| r.band_deviation).fold(0.0, f64::max),
        rejections: reps.iter().map(|r| r.rejections).sum(),
        lower_ms_max: reps.iter().map(|r| r.lower_ms_max).fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub replications: usize,
    pub seed: u64,
    pub controllers: Vec<ControllerReport>,
}

impl ExperimentReport {
    pub fn get(&self, kind: ControllerKind) -> Option<&ControllerReport> {
        self.controllers.iter().find(|c| c.kind == kind)
    }
}

fn mean_max(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
    for x in xs {
        sum += x;
        max = max.max(x);
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, max)
}

/// Scores one closed-loop run.
pub fn score(s: &Scenario, replication: usize, seed: u64, run: &RunOutput) -> ReplicationResult {
    let c = &s.corridor;
    let arrivals = run.trace.arrivals(c.timetable.buses(), c.stops());
    let proxy = car_delay_proxy(&run.delay);
    let (tick_ms_mean, tick_ms_max) = mean_max(run.ticks.iter().map(|t| t.wall_ms));
    let (lower_ms_mean, lower_ms_max) = mean_max(run.records().filter(|r| r.stage == Stage::Lower).map(|r| r.wall_ms));
    ReplicationResult {
        replication,
        seed,
        metrics: compute_metrics(&arrivals, &c.timetable),
        car_delay: proxy.delay,
        oversaturated_phases: proxy.oversaturated.len(),
        compression: green_compression(c, &run.executed),
        band_deviation: band_deviation(c, &run.executed),
        rejections: run.rejections.len(),
        lock_violations: run.lock_violations,
        ticks: run.ticks.len(),
        tick_ms_mean,
        tick_ms_max,
        lower_ms_mean,
        lower_ms_max,
        fallbacks: run.ticks.iter().filter(|t| t.commands.is_none() || !t.notes.is_empty()).count(),
    }
}

pub fn run_replication(s: &Scenario, kind: ControllerKind, seed: u64, sim: SimConfig) -> Result<RunOutput, String> {
    run_closed_loop(&s.corridor, kind, s.params(), SimConfig { seed, ..sim })
}

/// Workers from the environment, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `reps` replications of each controller. Replication r uses seed + r for
/// every controller, so dwell draws are shared across controllers.
pub fn run_experiment(s: &Scenario, kinds: &[ControllerKind], reps: usize, seed: u64) -> ExperimentReport {
    let jobs: Vec<(ControllerKind, usize)> = kinds.iter().flat_map(|&k| (0..reps).map(move |r| (k, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool");
    let sim = s.sim();
    let results: Vec<(ControllerKind, usize, Result<ReplicationResult, String>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, r)| {
                let rs = seed.wrapping_add(r as u64);
                let out = run_replication(s, k, rs, sim).map(|run| score(s, r, rs, &run));
                if let Err(e) = &out {
                    log::error!("{k} replication {r} aborted: {e}");
                }
                (k, r, out)
            })
            .collect()
    });
    let controllers = kinds
        .iter()
        .map(|&kind| {
            let mut replications = Vec::new();
            let mut failures = Vec::new();
            for (k, r, out) in &results {
                if *k != kind {
                    continue;
                }
                match out {
                    Ok(m) => replications.push(m.clone()),
                    Err(e) => failures.push((*r, e.clone())),
                }
            }
            let summary = summarize(&replications);
            ControllerReport {
                kind,
                replications,
                failures,
                summary,
            }
        })
        .collect();
    ExperimentReport {
        scenario: s.name().to_string(),
        replications: reps,
        seed,
        controllers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_matches_hand_values() {
        let a = Aggregate::of(&[1.0, 2.0, 3.0]);
        assert_eq!(a.mean, 2.0);
        // t(0.975, 2) = 4.302653; sd = 1
        assert!((a.ci95 - 4.302653 / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(Aggregate::of(&[5.0]).ci95, 0.0);
    }
}
