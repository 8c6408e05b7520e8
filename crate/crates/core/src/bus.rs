//! Route geometry, timetable, dwell times and the bus movement relations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Segments shorter than this are rejected as degenerate.
pub const MIN_SEGMENT_LENGTH: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("segment {0}: {1}")]
    Segment(usize, String),
    #[error("timetable: {0}")]
    Timetable(String),
    #[error("dwell model: {0}")]
    Dwell(String),
}

/// Stop `upstream` → stop line of `intersection` → stop `upstream + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment {
    pub upstream_stop: usize,
    pub intersection: usize,
    pub downstream_stop: usize,
    pub l_app: f64,
    pub l_dep: f64,
}

impl RouteSegment {
    pub fn new(index: usize, l_app: f64, l_dep: f64) -> Result<Self, BusError> {
        for (what, l) in [("approach", l_app), ("departure", l_dep)] {
            if !(l >= MIN_SEGMENT_LENGTH) || !l.is_finite() {
                return Err(BusError::Segment(index, format!("{what} length {l} m is too short")));
            }
        }
        Ok(RouteSegment {
            upstream_stop: index,
            intersection: index,
            downstream_stop: index + 1,
            l_app,
            l_dep,
        })
    }

    pub fn length(&self) -> f64 {
        self.l_app + self.l_dep
    }
}

/// Minimum approach and departure times at full speed.
pub fn traversal_time_bounds(seg: &RouteSegment, v_max: f64) -> (f64, f64) {
    (seg.l_app / v_max, seg.l_dep / v_max)
}

/// Stop-line arrival `r` and next stop arrival from one stop visit.
pub fn chain_planned_arrival(t_arr: f64, t_st: f64, t_app: f64, delay: f64, t_dep: f64) -> (f64, f64) {
    let r = t_arr + t_app + t_st;
    (r + delay + t_dep, r)
}

/// Strictly inside the punctuality window.
pub fn punctual(t_arr: f64, t_opt: f64, window: f64) -> bool {
    (t_arr - t_opt).abs() < window
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DwellDist {
    Uniform { min: f64, max: f64 },
}

impl DwellDist {
    pub fn validate(&self) -> Result<(), BusError> {
        match *self {
            DwellDist::Uniform { min, max } => {
                if !(min >= 0.0) || !(max >= min) || !max.is_finite() {
                    return Err(BusError::Dwell(format!("bad uniform bounds [{min}, {max}]")));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DwellDist::Uniform { min, max } => 0.5 * (min + max),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            DwellDist::Uniform { min, max } => (min, max),
        }
    }

    /// Total dwell given that `elapsed` seconds have already passed.
    pub fn conditional(&self, elapsed: f64) -> DwellDist {
        match *self {
            DwellDist::Uniform { min, max } => {
                let lo = min.max(elapsed).min(max);
                DwellDist::Uniform { min: lo, max }
            }
        }
    }
}

pub fn sample_dwell<R: Rng + ?Sized>(dist: &DwellDist, rng: &mut R) -> f64 {
    match *dist {
        DwellDist::Uniform { min, max } => {
            if max <= min {
                min
            } else {
                rng.gen_range(min..=max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellModel {
    pub per_stop: Vec<DwellDist>,
}

impl DwellModel {
    pub fn uniform(stops: usize, min: f64, max: f64) -> Result<Self, BusError> {
        let d = DwellDist::Uniform { min, max };
        d.validate()?;
        Ok(DwellModel { per_stop: vec![d; stops] })
    }

    pub fn at(&self, stop: usize) -> &DwellDist {
        &self.per_stop[stop.min(self.per_stop.len() - 1)]
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one (replication seed, bus, stop) visit, so every
/// controller sees the same dwell realisation for the same visit.
pub fn visit_stream(seed: u64, bus: usize, stop: usize) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ splitmix((bus as u64) << 20 | stop as u64));
    ChaCha8Rng::seed_from_u64(key)
}

/// How scheduled arrivals are generated from geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimetableRule {
    pub first_departure: f64,
    pub headway: f64,
    pub buses: usize,
    /// Cruise speed assumed between stops, m/s.
    pub schedule_speed: f64,
    /// Dwell time allowed at each intermediate stop.
    pub dwell_allowance: f64,
    /// Extra slack per segment.
    pub recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timetable {
    pub headway: f64,
    /// `scheduled[n][i]`: planned arrival of bus n at stop i.
    pub scheduled: Vec<Vec<f64>>,
}

impl Timetable {
    pub fn new(headway: f64, scheduled: Vec<Vec<f64>>) -> Result<Self, BusError> {
        if !(headway > 0.0) {
            return Err(BusError::Timetable("headway must be positive".into()));
        }
        for (n, row) in scheduled.iter().enumerate() {
            if row.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(BusError::Timetable(format!("bus {n} arrivals do not increase")));
            }
        }
        Ok(Timetable { headway, scheduled })
    }

    pub fn generate(rule: &TimetableRule, segments: &[RouteSegment]) -> Result<Self, BusError> {
        if !(rule.schedule_speed > 0.0) {
            return Err(BusError::Timetable("schedule speed must be positive".into()));
        }
        let rows = (0..rule.buses)
            .map(|n| {
                let mut t = rule.first_departure + n as f64 * rule.headway;
                let mut row = vec![t];
                for seg in segments {
                    t += rule.dwell_allowance + seg.length() / rule.schedule_speed + rule.recovery;
                    row.push(t);
                }
                row
            })
            .collect();
        Timetable::new(rule.headway, rows)
    }

    pub fn buses(&self) -> usize {
        self.scheduled.len()
    }

    pub fn t_opt(&self, bus: usize, stop: usize) -> f64 {
        self.scheduled[bus][stop]
    }
}

/// Where a bus is, as seen by controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum BusLocation {
    /// Not yet dispatched; appears at stop 0 at its scheduled time.
    Pending,
    Dwelling { stop: usize, elapsed: f64 },
    /// Between a stop and the next stop line (zero remaining while held at red).
    Approach { segment: usize, remaining: f64 },
    /// Past the stop line, heading to the next stop.
    Departure { segment: usize, remaining: f64 },
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusState {
    pub id: usize,
    pub location: BusLocation,
    /// Last realised stop arrival (stop, time).
    pub last_arrival: Option<(usize, f64)>,
    /// Distance from stop 0 along the route, m.
    pub position: f64,
    pub speed: f64,
    pub v_max: f64,
}

impl BusState {
    pub fn dwelling(&self) -> bool {
        matches!(self.location, BusLocation::Dwelling { .. })
    }

    /// Next intersection the bus still has to cross, if any.
    pub fn next_intersection(&self, n_intersections: usize) -> Option<usize> {
        match self.location {
            BusLocation::Pending => Some(0),
            BusLocation::Dwelling { stop, .. } => (stop < n_intersections).then_some(stop),
            BusLocation::Approach { segment, .. } => Some(segment),
            BusLocation::Departure { segment, .. } => (segment + 1 < n_intersections).then_some(segment + 1),
            BusLocation::Finished => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traversal_bounds() {
        let seg = RouteSegment::new(0, 600.0, 300.0).unwrap();
        let (a, d) = traversal_time_bounds(&seg, 12.0);
        assert_eq!(a, 50.0);
        assert_eq!(d, 25.0);
        let (a2, d2) = traversal_time_bounds(&seg, 24.0);
        assert_eq!((a2 * 2.0, d2 * 2.0), (a, d));
        assert!(RouteSegment::new(0, 300.0, 0.0001).is_err());
    }

    #[test]
    fn chain_examples() {
        assert_eq!(chain_planned_arrival(100.0, 25.0, 50.0, 0.0, 40.0), (215.0, 175.0));
        let (next, _) = chain_planned_arrival(10.0, 0.0, 30.0, 0.0, 20.0);
        assert_eq!(next, 60.0);
    }

    #[test]
    fn punctuality_window_is_strict() {
        assert!(punctual(129.9, 100.0, 30.0));
        assert!(!punctual(130.0, 100.0, 30.0));
        assert!(punctual(100.0, 100.0, 30.0));
        assert!(!punctual(70.0, 100.0, 30.0));
    }

    #[test]
    fn dwell_draws() {
        let d = DwellDist::Uniform { min: 15.0, max: 35.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_dwell(&d, &mut rng);
            assert!((15.0..=35.0).contains(&x));
            sum += x;
        }
        assert!((sum / n as f64 - 25.0).abs() < 0.2);
        let c = DwellDist::Uniform { min: 20.0, max: 20.0 };
        assert_eq!(sample_dwell(&c, &mut rng), 20.0);
    }

    #[test]
    fn visit_streams_repeat() {
        let d = DwellDist::Uniform { min: 15.0, max: 35.0 };
        let a = sample_dwell(&d, &mut visit_stream(9, 3, 2));
        let b = sample_dwell(&d, &mut visit_stream(9, 3, 2));
        let c = sample_dwell(&d, &mut visit_stream(9, 3, 1));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generated_timetable_increases() {
        let segs: Vec<_> = (0..5).map(|i| RouteSegment::new(i, 300.0, 300.0).unwrap()).collect();
        let rule = TimetableRule {
            first_departure: 0.0,
            headway: 120.0,
            buses: 3,
            schedule_speed: 10.0,
            dwell_allowance: 25.0,
            recovery: 0.0,
        };
        let tt = Timetable::generate(&rule, &segs).unwrap();
        assert_eq!(tt.scheduled[1][0], 120.0);
        assert_eq!(tt.scheduled[0][1], 85.0);
        assert!(Timetable::new(120.0, vec![vec![0.0, 0.0]]).is_err());
    }
}
