//! Text tables, JSON reports and plot-ready data series.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::{Aggregate, ExperimentReport};
use crate::controller::{ControllerKind, RunOutput};
use crate::corridor::Corridor;
use crate::sim::{Light, PositionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}`; expected text or json")),
        }
    }
}

/// (controlled − blank) / blank in percent; negative means a reduction.
pub fn improvement(controlled: f64, blank: f64) -> f64 {
    (controlled - blank) / blank * 100.0
}

fn cell(a: &Aggregate, digits: usize) -> String {
    format!("{:.*} ± {:.*}", digits, a.mean, digits, a.ci95)
}

/// One row per controller with % change against Blank when Blank is present.
pub fn format_table(r: &ExperimentReport) -> String {
    let blank = r.get(ControllerKind::Blank).map(|b| &b.summary);
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} | {} replications from seed {}", r.scenario, r.replications, r.seed);
    let _ = writeln!(
        out,
        "{:<11} | {:>17} {:>8} | {:>17} {:>8} | {:>15} {:>8} | {:>15} {:>8}",
        "Method", "Schedule Dev.(s)", "%", "Headway SD.(s)", "%", "Punctual Rate", "%", "Car delay (s)", "%"
    );
    for c in &r.controllers {
        let s = &c.summary;
        let pct = |x: f64, b: Option<f64>| match b {
            Some(b) if c.kind != ControllerKind::Blank => format!("{:+.1}", improvement(x, b)),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<11} | {:>17} {:>8} | {:>17} {:>8} | {:>15} {:>8} | {:>15} {:>8}{}",
            c.kind.label(),
            cell(&s.mean_deviation, 1),
            pct(s.mean_deviation.mean, blank.map(|b| b.mean_deviation.mean)),
            cell(&s.headway_sd, 1),
            pct(s.headway_sd.mean, blank.map(|b| b.headway_sd.mean)),
            cell(&s.punctual_rate, 3),
            pct(s.punctual_rate.mean, blank.map(|b| b.punctual_rate.mean)),
            cell(&s.car_delay, 2),
            pct(s.car_delay.mean, blank.map(|b| b.car_delay.mean)),
            if c.partial() { format!("  [partial: {} failed]", c.failures.len()) } else { String::new() },
        );
    }
    let _ = writeln!(out, "\nPer-stop mean deviation (s)");
    let stops = r.controllers.first().map_or(0, |c| c.summary.per_stop.len());
    let _ = write!(out, "{:<11}", "Method");
    for s in 0..stops {
        let _ = write!(out, " | {:>7}", format!("stop {}", s + 1));
    }
    let _ = writeln!(out);
    for c in &r.controllers {
        let _ = write!(out, "{:<11}", c.kind.label());
        for v in &c.summary.per_stop {
            let _ = write!(out, " | {v:>7.1}");
        }
        let _ = writeln!(out);
    }
    out
}

pub fn per_stop_csv(r: &ExperimentReport) -> String {
    let mut out = String::from("controller,stop,mean_deviation\n");
    for c in &r.controllers {
        for (s, v) in c.summary.per_stop.iter().enumerate() {
            let _ = writeln!(out, "{},{},{v}", c.kind.tag(), s + 1);
        }
    }
    out
}

/// Writes the requested formats into `dir`; returns the files written.
pub fn emit_report(r: &ExperimentReport, dir: &Path, formats: &[Format]) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            Format::Text => ("report.txt", format_table(r)),
            Format::Json => ("report.json", serde_json::to_string_pretty(r).map_err(io::Error::other)?),
        };
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    let p = dir.join("per_stop.csv");
    fs::write(&p, per_stop_csv(r))?;
    written.push(p);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalInterval {
    pub intersection: usize,
    pub phase: u8,
    pub light: Light,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// Stop-line position of each intersection along the route, m.
    pub stop_lines: Vec<f64>,
    pub stops: Vec<f64>,
    /// Green and yellow intervals of the bus phases; red is the gaps.
    pub signals: Vec<SignalInterval>,
    pub positions: Vec<PositionSample>,
}

pub fn trajectory(c: &Corridor, run: &RunOutput) -> Trajectory {
    let mut signals = Vec::new();
    for (i, (x, cycles)) in c.intersections.iter().zip(&run.executed).enumerate() {
        let s = &x.structure;
        for &p in &s.bus_phases {
            let j = s.slot(p).expect("validated");
            for cy in cycles {
                let (t, g) = (cy.t[j], cy.g[j]);
                signals.push(SignalInterval { intersection: i, phase: p, light: Light::Green, start: t, end: t + g });
                signals.push(SignalInterval {
                    intersection: i,
                    phase: p,
                    light: Light::Yellow,
                    start: t + g,
                    end: t + g + s.yellow,
                });
            }
        }
    }
    Trajectory {
        stop_lines: (0..c.intersections.len()).map(|i| c.stop_position(i) + c.segments[i].l_app).collect(),
        stops: (0..c.stops()).map(|s| c.stop_position(s)).collect(),
        signals,
        positions: run.positions.clone(),
    }
}
