//! Analytic car delay over executed greens (uniform-delay term only).

use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDemand {
    pub intersection: usize,
    pub slot: usize,
    /// veh/h
    pub volume: f64,
    /// veh/h
    pub saturation: f64,
    /// Executed (cycle length, green) pairs.
    pub greens: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayProxyInputs {
    pub phases: Vec<PhaseDemand>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayProxy {
    /// Volume-weighted mean delay, s/veh.
    pub delay: f64,
    /// (intersection, slot, worst v/c) of phases pushed past capacity.
    pub oversaturated: Vec<(usize, usize, f64)>,
}

/// d = C(1 − λ)² / (2(1 − min(1, X)·λ)), λ = g/C, X = V·C/(g·S).
pub fn uniform_delay(cycle: f64, green: f64, volume: f64, saturation: f64) -> (f64, f64) {
    let lambda = (green / cycle).clamp(0.0, 1.0);
    let x = if green > 0.0 { volume * cycle / (green * saturation) } else { f64::INFINITY };
    let denom = 2.0 * (1.0 - x.min(1.0) * lambda);
    let d = if denom <= 0.0 { 0.0 } else { cycle * (1.0 - lambda).powi(2) / denom };
    (d, x)
}

pub fn car_delay_proxy(inputs: &DelayProxyInputs) -> DelayProxy {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut over = Vec::new();
    for p in &inputs.phases {
        if p.greens.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        let mut worst: f64 = 0.0;
        for &(c, g) in &p.greens {
            let (d, x) = uniform_delay(c, g, p.volume, p.saturation);
            sum += d;
            worst = worst.max(x);
        }
        if worst > 1.0 {
            log::warn!("intersection {} slot {} runs at v/c {:.2}; delay capped", p.intersection, p.slot, worst);
            over.push((p.intersection, p.slot, worst));
        }
        num += p.volume * sum / p.greens.len() as f64;
        den += p.volume;
    }
    DelayProxy {
        delay: if den > 0.0 { num / den } else { 0.0 },
        oversaturated: over,
    }
}
