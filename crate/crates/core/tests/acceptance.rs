//! One PASS/FAIL line per acceptance criterion.
//!
//! The suite reports rather than aborts, so a criterion the testbed cannot
//! reach stays visible without hiding the others. Set
//! HIERTSP_ACCEPTANCE_STRICT=1 to make any FAIL fail the test.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hiertsp::bus::DwellDist;
use hiertsp::controller::ControllerKind;
use hiertsp::corridor::Weights;
use hiertsp::eval::experiment::{run_experiment, run_replication, score, ExperimentReport};
use hiertsp::eval::{load_scenario, Scenario};
use hiertsp::lower::{
    admissible_branches, branch_arrival, build_lower, extract_decision, piecewise_arrival_oracle, sample_saa,
    solve_lower, ArrivalInputs,
};
use hiertsp::milp::{solve_milp, Budget, SolveStatus, VarId};
use hiertsp::signal::Boundary;
use hiertsp::upper::{build_upper, BusStart, SignalWindow, UpperBus, UpperInstance};

const REPS: usize = 30;
const EPS_FEAS: f64 = 1e-6;

struct Ledger {
    lines: Vec<(bool, String)>,
}

impl Ledger {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        let line = format!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        say(&line);
        self.lines.push((pass, line));
    }
}

/// Straight to stderr so the lines show without --nocapture.
fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn scenario(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    load_scenario(&p).unwrap()
}

fn encoding(l: &mut Ledger) {
    let t0 = Instant::now();
    let c = common::corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut bad) = (0usize, Vec::new());
    for case in 0..500u64 {
        let t_arr = rng.gen_range(40.0..140.0);
        let lo = rng.gen_range(0.0..30.0);
        let width = rng.gen_range(0.0..30.0);
        let t_upp = t_arr + lo + 50.0 + rng.gen_range(-20.0..60.0);
        let n = rng.gen_range(1..=5);
        let li = common::lower_instance(&c, t_arr, (lo, lo + width), t_upp, n, case);
        let samples = sample_saa(&li);
        let model = build_lower(&li, &samples).unwrap();
        let sol = solve_milp(&model.problem, &Budget::default());
        if sol.status != SolveStatus::Optimal {
            bad.push(format!("case {case}: {:?}", sol.status));
            continue;
        }
        let d = extract_decision(&li, &model, &sol).unwrap();
        let x = &sol.values;
        let v = |id: VarId| x[id.0];
        let s = &c.intersections[0].structure;
        let j = s.bus_slot();
        let b = &li.buses[0];
        for (si, sv) in model.samples[0].iter().enumerate() {
            let sum = v(sv.beta1) + v(sv.beta2) + v(sv.beta3);
            let or = v(sv.beta3a).max(v(sv.beta3b));
            if sum.round() != 1.0 || (sum - 1.0).abs() > 1e-9 || (v(sv.beta3) - or).abs() > 1e-9 {
                bad.push(format!("case {case} sample {si}: beta sum {sum}"));
            }
            let inp = ArrivalInputs {
                t_arr: b.t_arr,
                t_st: samples[0].dwell[si],
                r: d.r[0],
                t: d.plan.t[1][j],
                g: d.plan.g[1][j],
                yellow: s.yellow,
                t_next: d.plan.t[2][j],
                l_app: b.l_app,
                l_dep: b.l_dep,
                v_max: c.v_max,
            };
            let (arr, br) = piecewise_arrival_oracle(&inp);
            let taken = d.branches[0][si];
            // a point on a branch guard may take either side
            let ok = if taken == br {
                (branch_arrival(&inp, taken) - arr).abs() <= 1e-6
            } else {
                admissible_branches(&inp, 1e-6).contains(&taken)
            };
            if !ok {
                bad.push(format!("case {case} sample {si}: {taken:?} vs oracle {br:?}"));
            }
            checked += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    l.record(
        "1 encoding",
        bad.is_empty() && secs < 120.0,
        format!("500 lower instances, {checked} (bus, sample) arrivals match the oracle, {} mismatches, {secs:.1} s (limit 120 s){}", bad.len(), first(&bad)),
    );
}

fn first(v: &[String]) -> String {
    v.first().map(|s| format!("; first: {s}")).unwrap_or_default()
}

fn upper_enumeration(l: &mut Ledger) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut done, mut skipped, mut bad) = (0usize, 0usize, Vec::new());
    while done < 200 {
        let n_int = rng.gen_range(1..=2);
        let offsets: Vec<f64> = (0..n_int).map(|_| rng.gen_range(0..100) as f64).collect();
        let k = rng.gen_range(2..=3);
        let n_bus = rng.gen_range(1..=2);
        let seg = rng.gen_range(70.0..110.0);
        let sched: Vec<Vec<f64>> = (0..n_bus)
            .map(|n| {
                let t0 = n as f64 * 120.0 + rng.gen_range(0.0..40.0);
                (0..=n_int).map(|s| t0 + seg * s as f64).collect()
            })
            .collect();
        let c = common::corridor(&offsets, (25.0, 25.0), sched.clone());
        let buses: Vec<UpperBus> = (0..n_bus)
            .map(|n| {
                let stop = if n_int == 2 { rng.gen_range(0..=1) } else { 0 };
                UpperBus {
                    id: n,
                    start: BusStart::Stop {
                        stop,
                        t_arr: sched[n][stop] + rng.gen_range(-10.0..30.0),
                        dwell: 25.0,
                    },
                    crossings: n_int - stop,
                }
            })
            .collect();
        let inst = UpperInstance {
            corridor: &c,
            signals: c
                .intersections
                .iter()
                .map(|x| SignalWindow {
                    first_cycle: 0,
                    boundary: Boundary::PhaseStart { phase: 1, start: x.background.offset },
                })
                .collect(),
            buses,
            k,
            weights: Weights::default(),
            big_m: UpperInstance::default_big_m(&c, k),
        };
        let Ok(model) = build_upper(&inst) else {
            skipped += 1;
            continue;
        };
        let sol = solve_milp(&model.problem, &Budget::default());
        let groups: Vec<Vec<VarId>> = model.crossings.iter().map(|c| c.theta.clone()).collect();
        let oracle = common::enumerate_groups(&model.problem, &groups);
        let ok = match (sol.status, oracle) {
            (SolveStatus::Optimal, Some(o)) => (sol.objective - o).abs() <= 1e-6,
            (SolveStatus::Infeasible, None) => true,
            _ => false,
        };
        if !ok {
            bad.push(format!("instance {done}: {:?} {} vs {oracle:?}", sol.status, sol.objective));
        }
        done += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    l.record(
        "2 upper enumeration",
        bad.is_empty() && secs < 300.0,
        format!("200 route-level instances ({skipped} unreachable draws redrawn), {} mismatches, {secs:.1} s (limit 300 s){}", bad.len(), first(&bad)),
    );
}

fn milp_oracle(l: &mut Ledger) {
    let t0 = Instant::now();
    let mut bad = Vec::new();
    let mut max_bin = 0;
    for seed in 0..200u64 {
        let p = common::random_milp(1000 + seed, 12, 4, true);
        max_bin = max_bin.max(p.vars.iter().filter(|v| v.kind == hiertsp::milp::VarKind::Binary).count());
        let s = solve_milp(&p, &Budget::default());
        let ok = match (s.status, common::enumerate_binaries(&p)) {
            (SolveStatus::Optimal, Some(o)) => (s.objective - o).abs() <= 1e-6,
            (SolveStatus::Infeasible, None) => true,
            _ => false,
        };
        if !ok {
            bad.push(format!("seed {seed}: {:?}", s.status));
        }
    }
    l.record(
        "3 milp oracle",
        bad.is_empty(),
        format!("200 random MILPs (up to {max_bin} binaries) against enumeration, {} mismatches, {:.1} s{}", bad.len(), t0.elapsed().as_secs_f64(), first(&bad)),
    );
}

fn pct(controlled: f64, blank: f64) -> f64 {
    (controlled - blank) / blank * 100.0
}

fn no_abrupt_change(l: &mut Ledger, r: &ExperimentReport) {
    let mut rej = 0;
    let mut lock = 0;
    let mut runs = 0;
    for k in [ControllerKind::RtspSa, ControllerKind::HierTspSa] {
        for x in &r.get(k).unwrap().replications {
            rej += x.rejections;
            lock += x.lock_violations;
            runs += 1;
        }
    }
    l.record(
        "4 no abrupt change",
        runs == 2 * REPS && rej == 0 && lock == 0,
        format!("{runs} full runs, {rej} committed-cycle rejections, {lock} changed boundaries of begun cycles"),
    );
}

fn performance_trend(l: &mut Ledger, r: &ExperimentReport, secs: f64) {
    let b = &r.get(ControllerKind::Blank).unwrap();
    let rt = &r.get(ControllerKind::RtspSa).unwrap();
    let h = &r.get(ControllerKind::HierTspSa).unwrap();
    let failed = b.failures.len() + rt.failures.len() + h.failures.len();
    let (bs, hs) = (&b.summary, &h.summary);
    l.record(
        "5a blank baseline",
        failed == 0 && (0.30..=0.65).contains(&bs.punctual_rate.mean) && bs.mean_deviation.mean >= 35.0,
        format!(
            "punctual {:.3} (need 0.30..0.65), mean deviation {:.1} s (need >= 35), {failed} aborted runs",
            bs.punctual_rate.mean, bs.mean_deviation.mean
        ),
    );
    let red = pct(hs.mean_deviation.mean, bs.mean_deviation.mean);
    l.record(
        "5b hier deviation and punctuality",
        red <= -70.0 && hs.punctual_rate.mean >= 0.95,
        format!("deviation {:.1} s ({red:+.1}%, need <= -70%), punctual {:.3} (need >= 0.95)", hs.mean_deviation.mean, hs.punctual_rate.mean),
    );
    let hw = pct(hs.headway_sd.mean, bs.headway_sd.mean);
    l.record(
        "5c hier headway regularity",
        hw <= -60.0,
        format!("headway SD {:.1} s vs {:.1} s ({hw:+.1}%, need <= -60%)", hs.headway_sd.mean, bs.headway_sd.mean),
    );
    let mut wins = 0;
    for x in &h.replications {
        if let Some(y) = rt.replications.iter().find(|y| y.replication == x.replication) {
            wins += (x.metrics.mean_deviation < y.metrics.mean_deviation && x.metrics.punctual_rate > y.metrics.punctual_rate) as usize;
        }
    }
    l.record(
        "5d hier dominates rtsp",
        wins >= 27,
        format!(
            "strictly better on deviation and punctuality in {wins}/{REPS} paired replications (need >= 27); rtsp {:.1} s / {:.3}",
            rt.summary.mean_deviation.mean, rt.summary.punctual_rate.mean
        ),
    );
    l.record("5e runtime", secs <= 1800.0, format!("{REPS} replications x 3 controllers in {secs:.0} s (limit 1800 s)"));
}

fn per_stop_trend(l: &mut Ledger, r: &ExperimentReport) {
    let b = &r.get(ControllerKind::Blank).unwrap().summary.per_stop;
    let h = &r.get(ControllerKind::HierTspSa).unwrap().summary.per_stop;
    let drops: Vec<f64> = b.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    let blank_ok = drops.is_empty() || (drops.len() == 1 && drops[0] <= 2.0);
    let flat = h[5] <= 2.0 * h[1];
    l.record(
        "6 per-stop profile",
        blank_ok && flat,
        format!(
            "blank {} ({} inversions); hier stop 6 {:.1} s vs 2 x stop 2 = {:.1} s",
            fmt_profile(b),
            drops.len(),
            h[5],
            2.0 * h[1]
        ),
    );
}

fn fmt_profile(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/")
}

fn car_impact(l: &mut Ledger, high: &ExperimentReport, others: &[(String, ExperimentReport)], delta_c: f64) {
    let inc = |r: &ExperimentReport| {
        pct(
            r.get(ControllerKind::HierTspSa).unwrap().summary.car_delay.mean,
            r.get(ControllerKind::Blank).unwrap().summary.car_delay.mean,
        )
    };
    let mut pass = inc(high) <= 10.0;
    let mut detail = format!("high {:+.2}% (<= 10%)", inc(high));
    let mut band: f64 = 0.0;
    for r in std::iter::once(high).chain(others.iter().map(|(_, r)| r)) {
        for c in &r.controllers {
            band = band.max(c.summary.max_band_deviation);
        }
    }
    for (name, r) in others {
        pass &= inc(r) <= 5.0;
        detail += &format!(", {name} {:+.2}% (<= 5%)", inc(r));
    }
    pass &= band <= delta_c + EPS_FEAS;
    l.record("7 car impact", pass, format!("car-delay proxy change {detail}; worst band deviation {band:.3} s (limit {delta_c} s)"));
}

fn saa(l: &mut Ledger, r: &ExperimentReport, n_saa: usize) {
    let c = common::corridor(&[0.0], (15.0, 35.0), vec![vec![0.0, 100.0]]);
    let sd = |n: usize| {
        let objs: Vec<f64> = (0..20u64)
            .map(|seed| {
                let li = common::lower_instance(&c, 110.0, (15.0, 35.0), 190.0, n, 100 + seed);
                solve_lower(&li, &sample_saa(&li), None, &Budget::default()).unwrap().1.objective
            })
            .collect();
        let m = objs.iter().sum::<f64>() / objs.len() as f64;
        (objs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (objs.len() - 1) as f64).sqrt()
    };
    let (a, b) = (sd(12), sd(48));
    let ratio = a / b;
    let h = r.get(ControllerKind::HierTspSa).unwrap();
    let max_ms = h.summary.lower_ms_max;
    let mean_ms = h.replications.iter().map(|x| x.lower_ms_mean).sum::<f64>() / h.replications.len().max(1) as f64;
    l.record(
        "8 saa behaviour",
        (1.5..=2.5).contains(&ratio) && max_ms <= 2000.0,
        format!(
            "objective SD {a:.3} at n=12 vs {b:.3} at n=48, ratio {ratio:.2} (need 2 +/- 0.5); lower solve at n_saa={n_saa}: mean {mean_ms:.0} ms, max {max_ms:.0} ms (limit 2000 ms)"
        ),
    );
}

fn degenerate(l: &mut Ledger, high: &Scenario) {
    let s = high.with_dwell(DwellDist::Uniform { min: 25.0, max: 25.0 }).unwrap();
    let seed = s.file.experiment.seed;
    let rt = run_replication(&s, ControllerKind::RtspSa, seed, s.sim()).unwrap();
    let h = run_replication(&s, ControllerKind::HierTspSa, seed, s.sim()).unwrap();
    let same = rt.ticks.len() == h.ticks.len() && rt.ticks.iter().zip(&h.ticks).all(|(a, b)| a.commands == b.commands);
    let differ = rt.ticks.iter().zip(&h.ticks).position(|(a, b)| a.commands != b.commands);
    let dr = score(&s, 0, seed, &rt).metrics.mean_deviation;
    let dh = score(&s, 0, seed, &h).metrics.mean_deviation;
    l.record(
        "9 degenerate dwell",
        same && dh <= EPS_FEAS && dr <= EPS_FEAS,
        format!(
            "U[25,25]: command streams {}; mean deviation hier {dh:.3} s, rtsp {dr:.3} s (need <= {EPS_FEAS})",
            if same { "identical".to_string() } else { format!("differ from tick {}", differ.unwrap_or(0)) }
        ),
    );
}

#[test]
fn acceptance() {
    let mut l = Ledger { lines: Vec::new() };
    encoding(&mut l);
    upper_enumeration(&mut l);
    milp_oracle(&mut l);

    let high = scenario("high");
    let t0 = Instant::now();
    let report = run_experiment(&high, &ControllerKind::ALL, REPS, high.file.experiment.seed);
    let secs = t0.elapsed().as_secs_f64();
    no_abrupt_change(&mut l, &report);
    performance_trend(&mut l, &report, secs);
    per_stop_trend(&mut l, &report);

    let kinds = [ControllerKind::Blank, ControllerKind::HierTspSa];
    let others: Vec<(String, ExperimentReport)> = ["medium", "low"]
        .iter()
        .map(|n| {
            let s = scenario(n);
            (n.to_string(), run_experiment(&s, &kinds, 5, s.file.experiment.seed))
        })
        .collect();
    car_impact(&mut l, &report, &others, high.corridor.delta_c);
    saa(&mut l, &report, high.params().n_saa);
    degenerate(&mut l, &high);

    let failed: Vec<&String> = l.lines.iter().filter(|(p, _)| !p).map(|(_, s)| s).collect();
    say(&format!("acceptance: {}/{} criterion lines pass", l.lines.len() - failed.len(), l.lines.len()));
    if std::env::var("HIERTSP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        assert!(failed.is_empty(), "failing criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
    }
}
