//! Built-in benchmark: two single-lane corridors crossing at a yielding junction.
//!
//! ```text
//!                 B4 (module 3)
//!                  ^
//!                 B3 (module 3)
//!                  ^
//!   A1 -> A2 ----- X ----> A3 -> A4
//!   (module 0)     ^      (module 1)
//!                 B2 (module 2, yields)
//!                  ^
//!                 B1 (module 2)
//! ```
//!
//! Each edge is 400 m long with a 13.9 m/s limit. Every module carries ten
//! loops, five per edge.

use super::network::{Detector, Edge, RoadNetwork};
use super::sim::{Demand, Flow};

pub const EDGE_LENGTH: f64 = 400.0;
pub const SPEED_LIMIT: f64 = 13.9;
pub const LOOP_POSITIONS: [f64; 5] = [40.0, 120.0, 200.0, 280.0, 360.0];

/// Origin edge of the priority corridor.
pub const MAJOR_ORIGIN: usize = 0;
/// Origin edge of the yielding corridor.
pub const MINOR_ORIGIN: usize = 4;

/// First instant observed by a scenario window; lets the network fill up.
pub const WARM_UP: f64 = 180.0;
/// Last instant any scenario window may reach.
pub const LAST_OBSERVED: f64 = 1050.0;
/// End of the route file's release schedule.
pub const DEMAND_END: f64 = 1100.0;

pub fn network() -> RoadNetwork {
    let names = ["A1", "A2", "A3", "A4", "B1", "B2", "B3", "B4"];
    let edges = names
        .iter()
        .enumerate()
        .map(|(i, name)| Edge {
            name: (*name).to_string(),
            length: EDGE_LENGTH,
            speed_limit: SPEED_LIMIT,
            successor: if i % 4 == 3 { None } else { Some(i + 1) },
            module: i / 2,
            yields_to: if i == 5 { Some(1) } else { None },
        })
        .collect::<Vec<_>>();
    let detectors = (0..edges.len())
        .flat_map(|edge| {
            LOOP_POSITIONS.iter().map(move |&position| Detector {
                edge,
                position,
                module: edge / 2,
            })
        })
        .collect();
    RoadNetwork::new(edges, detectors).expect("benchmark network is valid")
}

/// Low-volume route file: ten flows with staggered activity so that the
/// traffic level rises and falls over the schedule.
pub fn demand() -> Demand {
    let f = |origin, begin, end, period| Flow {
        origin,
        begin,
        end,
        period,
    };
    let (a, b) = (MAJOR_ORIGIN, MINOR_ORIGIN);
    Demand::new(vec![
        f(a, 0.0, DEMAND_END, 30.0),
        f(a, 3.0, DEMAND_END, 45.0),
        f(a, 100.0, 900.0, 36.0),
        f(a, 250.0, 700.0, 30.0),
        f(a, 400.0, 1000.0, 40.0),
        f(a, 7.0, 500.0, 50.0),
        f(b, 0.0, DEMAND_END, 40.0),
        f(b, 11.0, 800.0, 60.0),
        f(b, 300.0, DEMAND_END, 45.0),
        f(b, 500.0, 900.0, 50.0),
    ])
}

/// Start times of `count` observation windows of length `duration`, spread
/// evenly over the observed part of the schedule.
pub fn window_starts(count: usize, duration: f64) -> Vec<f64> {
    let last_start = (LAST_OBSERVED - duration).max(WARM_UP);
    match count {
        0 => Vec::new(),
        1 => vec![WARM_UP],
        n => {
            let step = (last_start - WARM_UP) / (n - 1) as f64;
            (0..n).map(|i| WARM_UP + i as f64 * step).collect()
        }
    }
}
