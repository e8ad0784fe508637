//! Induction-loop emulation over recorded trajectories.

use super::idm::VEHICLE_LENGTH;
use super::network::RoadNetwork;
use super::sim::{ballistic, time_to_cover, Trajectory};
use crate::error::{Error, Result};

/// Aggregate reading of one detector over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorStats {
    /// Vehicles per second.
    pub flow: f64,
    /// Fraction of the window during which a vehicle body covers the loop.
    pub occupancy: f64,
    /// Mean crossing speed, m/s (0 when nothing crossed).
    pub mean_speed: f64,
    /// Window length, s.
    pub window: f64,
}

impl DetectorStats {
    pub fn empty(window: f64) -> Self {
        Self {
            flow: 0.0,
            occupancy: 0.0,
            mean_speed: 0.0,
            window,
        }
    }
}

/// Reads `detector` over `[t0, t1]`.
pub fn read_detector(
    trajectory: &Trajectory,
    network: &RoadNetwork,
    detector: usize,
    window: (f64, f64),
) -> Result<DetectorStats> {
    let det = network
        .detectors()
        .get(detector)
        .ok_or_else(|| Error::invalid(format!("detector index {detector} out of range")))?;
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::invalid(format!("window [{t0}, {t1}] is empty")));
    }
    if let (Some(start), Some(end)) = (trajectory.start(), trajectory.end()) {
        if t0 < start - 1e-9 || t1 > end + 1e-9 {
            return Err(Error::invalid(format!(
                "window [{t0}, {t1}] exceeds recorded horizon [{start}, {end}]"
            )));
        }
    }
    let dt = trajectory.dt;
    // nothing moves farther than this within one step
    let reach = VEHICLE_LENGTH + 60.0 * dt;
    let mut crossings = 0usize;
    let mut speed_sum = 0.0;
    let mut occupied = 0.0;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for snap in &trajectory.snapshots {
        let lo = (t0 - snap.t).max(0.0);
        let hi = (t1 - snap.t).min(dt);
        if hi <= lo {
            continue;
        }
        intervals.clear();
        for veh in &snap.vehicles {
            // position of the front bumper relative to the loop
            let Some(rel) = network.signed_distance(veh.edge, veh.x, det.edge, det.position, reach) else {
                continue;
            };
            let (travel, _) = ballistic(veh.v, veh.a, dt);
            if rel + travel < 0.0 || rel > VEHICLE_LENGTH {
                continue;
            }
            let enter = time_to_cover(veh.v, veh.a, -rel).unwrap_or(f64::INFINITY);
            let exit = time_to_cover(veh.v, veh.a, VEHICLE_LENGTH - rel).unwrap_or(f64::INFINITY);
            let (a, b) = (enter.max(lo), exit.min(hi));
            if b > a {
                intervals.push((a, b));
            }
            // a front exactly on the loop counts here unless it is parked there
            let approaching = rel < 0.0 || (rel == 0.0 && veh.v > 0.0);
            if approaching && enter >= lo && enter < hi {
                crossings += 1;
                speed_sum += ballistic(veh.v, veh.a, enter).1;
            }
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cur: Option<(f64, f64)> = None;
        for &(a, b) in &intervals {
            match cur {
                Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
                Some((ca, cb)) => {
                    occupied += cb - ca;
                    cur = Some((a, b));
                }
                None => cur = Some((a, b)),
            }
        }
        if let Some((ca, cb)) = cur {
            occupied += cb - ca;
        }
    }
    let len = t1 - t0;
    Ok(DetectorStats {
        flow: crossings as f64 / len,
        occupancy: (occupied / len).clamp(0.0, 1.0),
        mean_speed: if crossings == 0 { 0.0 } else { speed_sum / crossings as f64 },
        window: len,
    })
}
