use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hiertsp::controller::{schedule_ticks, tick_models, Controller, ControllerKind};
use hiertsp::eval::experiment::{run_experiment, run_replication, ExperimentReport};
use hiertsp::eval::{emit_report, format_table, load_scenario, trajectory, Format, Scenario};
use hiertsp::milp::export_lp_text;
use hiertsp::sim::{SimConfig, Simulator};

#[derive(Parser)]
#[command(name = "hiertsp", version, about = "Transit signal priority and bus speed control testbed")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario's controller (or an override) over seeded replications.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Paired comparison of several controllers on one scenario.
    Compare {
        scenario: PathBuf,
        /// Comma-separated controller tags.
        #[arg(long, value_delimiter = ',', default_value = "blank,rtsp_sa,hier_tsp_sa")]
        controller: Vec<ControllerKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Check scenario files without running them.
    Validate { scenarios: Vec<PathBuf> },
    /// Write the LP text of every model built at the tick at or before `--at`.
    ExportLp {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        at: f64,
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "lp")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Where reports, per-stop data, a trajectory and an event log are written.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output formats; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_value = "text")]
    format: Vec<Format>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    load_scenario(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { scenario, controller, common } => {
            let s = load(&scenario)?;
            let kind = controller.unwrap_or(s.kind());
            experiment(&s, &[kind], &common)?;
        }
        Cmd::Compare { scenario, controller, common } => {
            let s = load(&scenario)?;
            if controller.is_empty() {
                bail!("no controllers given");
            }
            experiment(&s, &controller, &common)?;
        }
        Cmd::Validate { scenarios } => {
            let mut ok = true;
            for p in &scenarios {
                match load_scenario(p) {
                    Ok(s) => println!(
                        "{}: ok ({} intersections, {} buses)",
                        p.display(),
                        s.corridor.intersections.len(),
                        s.corridor.timetable.buses()
                    ),
                    Err(e) => {
                        ok = false;
                        println!("{}: {e}", p.display());
                    }
                }
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::ExportLp { scenario, at, controller, seed, out_dir } => {
            let s = load(&scenario)?;
            let kind = controller.unwrap_or(s.kind());
            export_lp(&s, kind, at, seed.unwrap_or(s.file.experiment.seed), &out_dir)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn experiment(s: &Scenario, kinds: &[ControllerKind], common: &Common) -> Result<()> {
    let reps = common.reps.unwrap_or(s.file.experiment.replications);
    let seed = common.seed.unwrap_or(s.file.experiment.seed);
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let report = run_experiment(s, kinds, reps, seed);
    print!("{}", format_table(&report));
    if let Some(dir) = &common.out_dir {
        for p in emit_report(&report, dir, &common.format)? {
            eprintln!("wrote {}", p.display());
        }
        export_run(s, kinds, seed, dir)?;
    } else if common.format.contains(&Format::Json) {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    surface_failures(&report)
}

fn surface_failures(report: &ExperimentReport) -> Result<()> {
    let failed: usize = report.controllers.iter().map(|c| c.failures.len()).sum();
    if failed > 0 {
        for c in &report.controllers {
            for (r, e) in &c.failures {
                eprintln!("{} replication {r}: {e}", c.kind);
            }
        }
        bail!("{failed} replications aborted; the report is partial");
    }
    Ok(())
}

/// The first replication of each controller again, with positions sampled every second.
fn export_run(s: &Scenario, kinds: &[ControllerKind], seed: u64, dir: &Path) -> Result<()> {
    for &k in kinds {
        let sim = SimConfig { position_every: Some(1.0), ..s.sim() };
        let run = run_replication(s, k, seed, sim).map_err(anyhow::Error::msg)?;
        let p = dir.join(format!("trajectory_{}.json", k.tag()));
        fs::write(&p, serde_json::to_string(&trajectory(&s.corridor, &run))?)?;
        eprintln!("wrote {}", p.display());
        let p = dir.join(format!("events_{}.jsonl", k.tag()));
        run.trace.write_jsonl(std::io::BufWriter::new(fs::File::create(&p)?))?;
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn export_lp(s: &Scenario, kind: ControllerKind, at: f64, seed: u64, dir: &Path) -> Result<()> {
    if kind == ControllerKind::Blank {
        bail!("the blank controller builds no models");
    }
    let c = &s.corridor;
    let p = s.params();
    let mut sim = Simulator::new(c, SimConfig { seed, ..s.sim() }).map_err(anyhow::Error::msg)?;
    let mut ctl = Controller::new(c, kind, *p, seed).map_err(anyhow::Error::msg)?;
    let ticks: Vec<f64> = schedule_ticks(p.period, s.sim().end).into_iter().filter(|&t| t <= at).collect();
    let last = ticks.len() - 1;
    for (n, &t) in ticks.iter().enumerate() {
        sim.run_until(t);
        let snap = sim.snapshot(p.k);
        if n == last {
            let models = tick_models(c, &snap, p, seed, n as u64).map_err(anyhow::Error::msg)?;
            fs::create_dir_all(dir)?;
            for (name, m) in models {
                let path = dir.join(format!("{name}.lp"));
                fs::write(&path, export_lp_text(&m))?;
                println!("wrote {}", path.display());
            }
            if kind == ControllerKind::RtspSa {
                eprintln!("note: the route-level controller only solves the upper model");
            }
        } else if let Some(cmds) = ctl.tick(snap).commands {
            sim.apply_commands(&cmds);
        }
    }
    Ok(())
}
