//! Scenario files: TOML, one per corridor and demand level.
//!
//! Units are seconds, metres and veh/h throughout. Phase-indexed lists
//! (`splits`, `volumes`, `saturation`) follow ring order, ring 1 then ring 2.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{DwellDist, DwellModel, RouteSegment, Timetable, TimetableRule};
use crate::controller::{ControllerKind, ControllerParams};
use crate::corridor::{Corridor, Intersection};
use crate::signal::{BackgroundPlan, DemandProfile, DualRingStructure, PhaseId, Ring};
use crate::sim::SimConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub controller: ControllerSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sim: SimConfig,
    pub corridor: CorridorSection,
    pub route: RouteSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    #[serde(default)]
    pub params: ControllerParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub replications: usize,
    /// Replication r runs with seed + r.
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            replications: 30,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSection {
    pub cycle: f64,
    #[serde(default = "default_yellow")]
    pub yellow: f64,
    #[serde(default = "default_delta_c")]
    pub delta_c: f64,
    #[serde(default = "default_xc")]
    pub critical_saturation: f64,
    #[serde(default = "default_min_green")]
    pub min_green: f64,
    /// Multiplies every listed volume.
    #[serde(default = "one")]
    pub volume_scale: f64,
    pub intersections: Vec<IntersectionSection>,
}

fn default_yellow() -> f64 {
    3.0
}
fn default_delta_c() -> f64 {
    5.0
}
fn default_xc() -> f64 {
    0.9
}
fn default_min_green() -> f64 {
    9.0
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSection {
    pub offset: f64,
    /// Phase order of each ring.
    pub rings: Vec<Vec<PhaseId>>,
    /// Phases before the barrier, per ring.
    pub barrier: Vec<usize>,
    /// Green plus yellow, s.
    pub splits: Vec<f64>,
    pub volumes: Vec<f64>,
    pub saturation: Vec<f64>,
    pub coordinated: Vec<PhaseId>,
    pub bus_phases: Vec<PhaseId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub l_app: f64,
    pub l_dep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSection {
    pub v_max: f64,
    /// One per intersection; segment i runs stop i → stop line i → stop i+1.
    pub segments: Vec<SegmentSection>,
    /// One distribution for every stop, or one per stop.
    pub dwell: DwellSection,
    pub timetable: TimetableRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DwellSection {
    Same(DwellDist),
    PerStop(Vec<DwellDist>),
}

/// A validated scenario with its corridor built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub corridor: Corridor,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn kind(&self) -> ControllerKind {
        self.file.controller.kind
    }

    pub fn params(&self) -> &ControllerParams {
        &self.file.controller.params
    }

    pub fn sim(&self) -> SimConfig {
        self.file.sim
    }

    /// Same scenario with the dwell at every stop replaced.
    pub fn with_dwell(&self, d: DwellDist) -> Result<Scenario, ScenarioError> {
        let mut f = self.file.clone();
        f.route.dwell = DwellSection::Same(d);
        Scenario::from_file(f)
    }

    pub fn with_controller(&self, kind: ControllerKind) -> Scenario {
        let mut s = self.clone();
        s.file.controller.kind = kind;
        s
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        let corridor = build_corridor(&file)?;
        file.controller
            .params
            .validate(file.controller.kind)
            .map_err(|e| invalid("controller.params", e))?;
        file.sim.validate().map_err(|e| invalid("sim", e))?;
        if file.experiment.replications == 0 {
            return Err(invalid("experiment.replications", "must be at least 1"));
        }
        Ok(Scenario { file, corridor })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Schema(format!("at `{path}`: {}", e.into_inner()))
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!("found {}, this build reads {SCHEMA_VERSION}", file.schema_version),
        ));
    }
    Scenario::from_file(file)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

fn build_corridor(f: &ScenarioFile) -> Result<Corridor, ScenarioError> {
    let cs = &f.corridor;
    let n = cs.intersections.len();
    if n == 0 {
        return Err(invalid("corridor.intersections", "at least one intersection"));
    }
    if f.route.segments.len() != n {
        return Err(invalid(
            "route.segments",
            format!("{} segments for {n} intersections", f.route.segments.len()),
        ));
    }
    if !(cs.volume_scale >= 0.0) {
        return Err(invalid("corridor.volume_scale", "must be nonnegative"));
    }
    let mut intersections = Vec::with_capacity(n);
    for (i, x) in cs.intersections.iter().enumerate() {
        let field = |name: &str| format!("corridor.intersections[{i}].{name}");
        if x.rings.len() != x.barrier.len() {
            return Err(invalid(field("barrier"), "one entry per ring"));
        }
        let rings = x
            .rings
            .iter()
            .zip(&x.barrier)
            .map(|(p, &b)| Ring {
                phases: p.clone(),
                barrier_at: b,
            })
            .collect();
        let structure = DualRingStructure::new(i, rings, x.coordinated.clone(), x.bus_phases.clone(), cs.yellow)
            .map_err(|e| invalid(field("rings"), e))?;
        let slots = structure.num_slots();
        for (name, len) in [("splits", x.splits.len()), ("volumes", x.volumes.len()), ("saturation", x.saturation.len())] {
            if len != slots {
                return Err(invalid(field(name), format!("{len} entries for {slots} phases")));
            }
        }
        let background =
            BackgroundPlan::new(&structure, cs.cycle, x.offset, x.splits.clone()).map_err(|e| invalid(field("splits"), e))?;
        let volumes = x.volumes.iter().map(|v| v * cs.volume_scale).collect();
        let demand = DemandProfile::new(volumes, x.saturation.clone(), cs.critical_saturation, cs.min_green)
            .map_err(|e| invalid(field("volumes"), e))?;
        for j in 0..slots {
            let need = demand.min_green_bound(j, cs.cycle);
            let have = background.green(&structure, j);
            if need > have + 1e-9 {
                return Err(invalid(
                    field("splits"),
                    format!("phase {} needs {need:.1} s of green, background gives {have:.1} s", structure.phases()[j]),
                ));
            }
        }
        intersections.push(Intersection {
            structure,
            background,
            demand,
        });
    }
    let segments = f
        .route
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| RouteSegment::new(i, s.l_app, s.l_dep).map_err(|e| invalid(format!("route.segments[{i}]"), e)))
        .collect::<Result<Vec<_>, _>>()?;
    let stops = n + 1;
    let per_stop = match &f.route.dwell {
        DwellSection::Same(d) => vec![*d; stops],
        DwellSection::PerStop(v) if v.len() == stops => v.clone(),
        DwellSection::PerStop(v) => return Err(invalid("route.dwell", format!("{} entries for {stops} stops", v.len()))),
    };
    for (s, d) in per_stop.iter().enumerate() {
        d.validate().map_err(|e| invalid(format!("route.dwell[{s}]"), e))?;
    }
    if !(f.route.v_max > 0.0) {
        return Err(invalid("route.v_max", "must be positive"));
    }
    let rule = &f.route.timetable;
    if rule.buses == 0 {
        return Err(invalid("route.timetable.buses", "at least one bus"));
    }
    let timetable = Timetable::generate(rule, &segments).map_err(|e| invalid("route.timetable", e))?;
    if !(cs.delta_c >= 0.0) {
        return Err(invalid("corridor.delta_c", "must be nonnegative"));
    }
    Ok(Corridor {
        intersections,
        segments,
        timetable,
        dwell: DwellModel { per_stop },
        v_max: f.route.v_max,
        delta_c: cs.delta_c,
    })
}
