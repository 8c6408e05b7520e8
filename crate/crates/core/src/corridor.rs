//! The static description of a signalised bus corridor.

use serde::{Deserialize, Serialize};

use crate::bus::{DwellModel, RouteSegment, Timetable};
use crate::signal::{BackgroundPlan, DemandProfile, DualRingStructure};

#[derive(Debug, Clone)]
pub struct Intersection {
    pub structure: DualRingStructure,
    pub background: BackgroundPlan,
    pub demand: DemandProfile,
}

/// Intersection `i` sits on segment `i`, between stop `i` and stop `i + 1`.
#[derive(Debug, Clone)]
pub struct Corridor {
    pub intersections: Vec<Intersection>,
    pub segments: Vec<RouteSegment>,
    pub timetable: Timetable,
    pub dwell: DwellModel,
    pub v_max: f64,
    pub delta_c: f64,
}

impl Corridor {
    pub fn stops(&self) -> usize {
        self.segments.len() + 1
    }

    pub fn cycle(&self, i: usize) -> f64 {
        self.intersections[i].background.cycle
    }

    /// Distance of stop `i` from stop 0.
    pub fn stop_position(&self, stop: usize) -> f64 {
        self.segments[..stop].iter().map(|s| s.length()).sum()
    }
}

/// Weights shared by both optimisation levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_b: f64,
    pub w_c: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w_b: 1.0, w_c: 0.1 }
    }
}
