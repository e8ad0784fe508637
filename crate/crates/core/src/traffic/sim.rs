//! Fixed-step ballistic integration of the car-following system.

use std::collections::{HashSet, VecDeque};

use super::idm::{idm_with_desired_speed, DrivingConfig, Leader, VEHICLE_LENGTH};
use super::network::{EdgeId, RoadNetwork};
use crate::error::{Error, Result};

/// Default integration step, s.
pub const DEFAULT_DT: f64 = 0.5;

/// How far ahead a driver looks for a leader, m.
const LOOKAHEAD: f64 = 250.0;
/// Distance to a stop line at which the yield decision is taken, m.
const DECISION_DISTANCE: f64 = 80.0;
/// Minimum time gap to priority traffic accepted at a yielding junction, s.
const CRITICAL_GAP: f64 = 3.0;
/// Priority vehicles whose rear is closer than this past the conflict point block it, m.
const CONFLICT_CLEARANCE: f64 = 2.0;

/// Displacement and end speed after moving for `tau` seconds with constant
/// acceleration `a`, stopping (never reversing) if the speed reaches zero.
pub fn ballistic(v: f64, a: f64, tau: f64) -> (f64, f64) {
    let v_end = v + a * tau;
    if v_end >= 0.0 {
        (v * tau + 0.5 * a * tau * tau, v_end)
    } else {
        // a < 0 here: the vehicle halts at tau_stop = -v / a
        (-v * v / (2.0 * a), 0.0)
    }
}

/// Earliest time at which a vehicle moving as in [`ballistic`] has covered
/// `dist >= 0`; `None` if it halts first.
pub fn time_to_cover(v: f64, a: f64, dist: f64) -> Option<f64> {
    if dist <= 0.0 {
        return Some(0.0);
    }
    let disc = v * v + 2.0 * a * dist;
    if disc < 0.0 {
        return None;
    }
    let denom = v + disc.sqrt();
    if denom <= 0.0 {
        return None;
    }
    Some(2.0 * dist / denom)
}

/// Repeated release of vehicles at the upstream end of `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub origin: EdgeId,
    pub begin: f64,
    pub end: f64,
    pub period: f64,
}

impl Flow {
    pub fn release_times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count()).map(move |i| self.begin + i as f64 * self.period)
    }

    pub fn count(&self) -> u64 {
        if self.end < self.begin {
            0
        } else {
            ((self.end - self.begin) / self.period + 1e-9).floor() as u64 + 1
        }
    }
}

/// A route file: a list of flows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Demand {
    pub flows: Vec<Flow>,
}

impl Demand {
    pub fn new(flows: Vec<Flow>) -> Self {
        Self { flows }
    }

    /// The demand obtained by concatenating `copies` copies of this route file.
    pub fn replicated(&self, copies: usize) -> Self {
        let mut flows = Vec::with_capacity(self.flows.len() * copies);
        for _ in 0..copies {
            flows.extend_from_slice(&self.flows);
        }
        Self { flows }
    }

    pub fn validate(&self, network: &RoadNetwork) -> Result<()> {
        for (i, f) in self.flows.iter().enumerate() {
            if f.origin >= network.edges().len() {
                return Err(Error::invalid(format!("flow {i}: origin edge {} out of range", f.origin)));
            }
            if !(f.period.is_finite() && f.period > 0.0) || !f.begin.is_finite() || !f.end.is_finite() {
                return Err(Error::invalid(format!("flow {i}: begin/end must be finite and period positive")));
            }
        }
        Ok(())
    }

    pub fn vehicle_count(&self) -> u64 {
        self.flows.iter().map(Flow::count).sum()
    }
}

/// A group of vehicles sharing a driving configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub id: String,
    pub config: DrivingConfig,
    /// Share of flow definitions handed to the fleet.
    pub share: f64,
}

impl Fleet {
    pub fn new(id: impl Into<String>, config: DrivingConfig, share: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::invalid(format!("fleet share must lie in [0, 1], got {share}")));
        }
        config.validate()?;
        Ok(Self {
            id: id.into(),
            config,
            share,
        })
    }

    /// Which of `flows` flow definitions belong to the fleet: `floor(share * flows)`
    /// of them, spread evenly over the list.
    pub fn flow_membership(&self, flows: usize) -> Vec<bool> {
        let cum = |i: usize| ((i as f64) * self.share + 1e-9).floor() as u64;
        (0..flows).map(|i| cum(i + 1) > cum(i)).collect()
    }

    /// Number of fleet vehicles defined by `demand`.
    pub fn insured_vehicles(&self, demand: &Demand) -> u64 {
        self.flow_membership(demand.flows.len())
            .iter()
            .zip(&demand.flows)
            .filter(|(m, _)| **m)
            .map(|(_, f)| f.count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: usize,
    pub fleet: bool,
    pub edge: EdgeId,
    /// Front bumper position from the upstream end of `edge`, m.
    pub x: f64,
    pub v: f64,
    /// Acceleration applied over the coming step.
    pub a: f64,
    pub release_time: f64,
    pub origin: EdgeId,
    /// Sink edge at the end of the vehicle's successor chain.
    pub destination: EdgeId,
}

/// State of one vehicle at the start of a recorded step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSample {
    pub id: usize,
    pub fleet: bool,
    pub edge: EdgeId,
    pub module: usize,
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub vehicles: Vec<VehicleSample>,
}

/// Recorded step states. Snapshot `i` holds the state at `t_i` together with
/// the accelerations applied over `[t_i, t_i + dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            snapshots: Vec::new(),
        }
    }

    pub fn start(&self) -> Option<f64> {
        self.snapshots.first().map(|s| s.t)
    }

    pub fn end(&self) -> Option<f64> {
        self.snapshots.last().map(|s| s.t + self.dt)
    }

    /// Index of the snapshot whose step contains `t`.
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        let i = self.snapshots.partition_point(|s| s.t <= t);
        let s = self.snapshots.get(i.checked_sub(1)?)?;
        (t <= s.t + self.dt).then_some(s)
    }

    /// Writes `t,vehicle,edge,x,v,a` rows.
    pub fn write_csv<W: std::io::Write>(&self, network: &RoadNetwork, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "vehicle", "edge", "x", "v", "a"])?;
        for s in &self.snapshots {
            for v in &s.vehicles {
                w.write_record([
                    s.t.to_string(),
                    v.id.to_string(),
                    network.edge(v.edge).name.clone(),
                    v.x.to_string(),
                    v.v.to_string(),
                    v.a.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Pending {
    release: f64,
    fleet: bool,
    origin: EdgeId,
}

/// Deterministic microscopic simulation on a [`RoadNetwork`].
#[derive(Debug, Clone)]
pub struct Simulation<'n> {
    network: &'n RoadNetwork,
    background: DrivingConfig,
    fleet: DrivingConfig,
    dt: f64,
    steps: u64,
    /// Pending releases per origin edge, ordered by release time.
    pending: Vec<VecDeque<Pending>>,
    vehicles: Vec<VehicleState>,
    next_id: usize,
    committed: HashSet<usize>,
}

impl<'n> Simulation<'n> {
    /// A simulation of `demand` where flows selected by `fleet` use the fleet's
    /// configuration and all other vehicles use `background`.
    pub fn new(
        network: &'n RoadNetwork,
        demand: &Demand,
        fleet: Option<&Fleet>,
        background: DrivingConfig,
        dt: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        demand.validate(network)?;
        background.validate()?;
        let membership = match fleet {
            Some(f) => f.flow_membership(demand.flows.len()),
            None => vec![false; demand.flows.len()],
        };
        let mut releases: Vec<(f64, usize, Pending)> = Vec::new();
        for (i, (flow, &is_fleet)) in demand.flows.iter().zip(&membership).enumerate() {
            for t in flow.release_times() {
                releases.push((
                    t,
                    i,
                    Pending {
                        release: t,
                        fleet: is_fleet,
                        origin: flow.origin,
                    },
                ));
            }
        }
        releases.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pending = vec![VecDeque::new(); network.edges().len()];
        for (_, _, p) in releases {
            pending[p.origin].push_back(p);
        }
        let mut sim = Self {
            network,
            background,
            fleet: fleet.map_or(background, |f| f.config),
            dt,
            steps: 0,
            pending,
            vehicles: Vec::new(),
            next_id: 0,
            committed: HashSet::new(),
        };
        sim.insert_released();
        sim.update_accelerations();
        Ok(sim)
    }

    /// A simulation starting from explicit vehicle states, with no pending demand.
    pub fn from_states(
        network: &'n RoadNetwork,
        vehicles: Vec<VehicleState>,
        background: DrivingConfig,
        fleet: DrivingConfig,
        dt: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        for v in &vehicles {
            if v.edge >= network.edges().len() || !(v.v >= 0.0) || !v.x.is_finite() {
                return Err(Error::invalid(format!("vehicle {}: invalid state", v.id)));
            }
        }
        let next_id = vehicles.iter().map(|v| v.id + 1).max().unwrap_or(0);
        Ok(Self {
            network,
            background,
            fleet,
            dt,
            steps: 0,
            pending: vec![VecDeque::new(); network.edges().len()],
            vehicles,
            next_id,
            committed: HashSet::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Vehicles currently inside the network.
    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn pending_count(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    fn config_of(&self, v: &VehicleState) -> &DrivingConfig {
        if v.fleet {
            &self.fleet
        } else {
            &self.background
        }
    }

    fn destination_of(&self, origin: EdgeId) -> EdgeId {
        let mut cur = origin;
        while let Some(s) = self.network.edge(cur).successor {
            cur = s;
        }
        cur
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.time(),
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleSample {
                    id: v.id,
                    fleet: v.fleet,
                    edge: v.edge,
                    module: self.network.edge(v.edge).module,
                    x: v.x,
                    v: v.v,
                    a: v.a,
                })
                .collect(),
        }
    }

    /// Advance by one step: move every vehicle ballistically with its current
    /// acceleration, retire vehicles that reached their destination, release
    /// scheduled vehicles, then recompute accelerations.
    pub fn step(&mut self) {
        let dt = self.dt;
        let network = self.network;
        self.vehicles.retain_mut(|veh| {
            let (dx, v_end) = ballistic(veh.v, veh.a, dt);
            veh.x += dx;
            veh.v = v_end;
            loop {
                let edge = network.edge(veh.edge);
                if veh.x < edge.length {
                    return true;
                }
                match edge.successor {
                    Some(s) => {
                        veh.x -= edge.length;
                        veh.edge = s;
                    }
                    None => return false,
                }
            }
        });
        let alive: HashSet<usize> = self.vehicles.iter().map(|v| v.id).collect();
        self.committed.retain(|id| alive.contains(id));
        self.steps += 1;
        self.insert_released();
        self.update_accelerations();
    }

    /// Steps until the clock reaches `t_end`, recording a snapshot of every
    /// step that starts at or after `record_from` into `trajectory`.
    pub fn run_until(&mut self, t_end: f64, record_from: f64, mut trajectory: Option<&mut Trajectory>) {
        while self.time() < t_end - 1e-9 {
            if let Some(tr) = trajectory.as_deref_mut() {
                if self.time() >= record_from - 1e-9 {
                    tr.snapshots.push(self.snapshot());
                }
            }
            self.step();
        }
    }

    /// Rearmost vehicle on `edge`, as (front position, speed).
    fn rearmost_on(&self, order: &[Vec<usize>], edge: EdgeId) -> Option<(f64, f64)> {
        order[edge].last().map(|&i| (self.vehicles[i].x, self.vehicles[i].v))
    }

    /// Vehicle indices per edge, front-most first.
    fn edge_order(&self) -> Vec<Vec<usize>> {
        let mut order = vec![Vec::new(); self.network.edges().len()];
        for (i, v) in self.vehicles.iter().enumerate() {
            order[v.edge].push(i);
        }
        for list in &mut order {
            list.sort_by(|&a, &b| {
                self.vehicles[b]
                    .x
                    .total_cmp(&self.vehicles[a].x)
                    .then(self.vehicles[a].id.cmp(&self.vehicles[b].id))
            });
        }
        order
    }

    fn insert_released(&mut self) {
        let now = self.time();
        let order = self.edge_order();
        for origin in 0..self.pending.len() {
            let mut gap_ahead = self.rearmost_on(&order, origin);
            while let Some(p) = self.pending[origin].front() {
                if p.release > now + 1e-9 {
                    break;
                }
                let cfg = if p.fleet { self.fleet } else { self.background };
                let desired = cfg.v_max.min(self.network.edge(origin).speed_limit);
                let speed = match gap_ahead {
                    None => desired,
                    Some((lead_x, lead_v)) => {
                        let gap = lead_x - VEHICLE_LENGTH;
                        if gap <= cfg.min_gap {
                            break;
                        }
                        desired.min(lead_v).min((gap - cfg.min_gap) / cfg.headway)
                    }
                };
                let p = self.pending[origin].pop_front().expect("front exists");
                let destination = self.destination_of(origin);
                self.vehicles.push(VehicleState {
                    id: self.next_id,
                    fleet: p.fleet,
                    edge: origin,
                    x: 0.0,
                    v: speed,
                    a: 0.0,
                    release_time: p.release,
                    origin,
                    destination,
                });
                self.next_id += 1;
                gap_ahead = Some((0.0, speed));
            }
        }
    }

    fn leader_of(&self, order: &[Vec<usize>], idx: usize, rank: usize) -> Option<Leader> {
        let me = &self.vehicles[idx];
        if rank > 0 {
            let lead = &self.vehicles[order[me.edge][rank - 1]];
            return Some(Leader {
                speed: lead.v,
                gap: lead.x - VEHICLE_LENGTH - me.x,
            });
        }
        let mut offset = self.network.edge(me.edge).length;
        let mut cur = self.network.edge(me.edge).successor;
        while let Some(e) = cur {
            if offset - me.x > LOOKAHEAD {
                break;
            }
            if let Some((x, v)) = self.rearmost_on(order, e) {
                return Some(Leader {
                    speed: v,
                    gap: offset + x - VEHICLE_LENGTH - me.x,
                });
            }
            offset += self.network.edge(e).length;
            cur = self.network.edge(e).successor;
        }
        None
    }

    /// Nearest downstream stop line within the decision distance, as
    /// (minor edge, priority edge, distance from front bumper).
    fn upcoming_stop_line(&self, me: &VehicleState) -> Option<(EdgeId, EdgeId, f64)> {
        let mut offset = 0.0;
        let mut cur = Some(me.edge);
        while let Some(e) = cur {
            let edge = self.network.edge(e);
            offset += edge.length;
            let dist = offset - me.x;
            if dist - edge.length > DECISION_DISTANCE {
                return None;
            }
            if let Some(major) = edge.yields_to {
                return (dist <= DECISION_DISTANCE).then_some((e, major, dist));
            }
            cur = edge.successor;
        }
        None
    }

    /// Gap acceptance against traffic heading for the end of `major`.
    fn junction_clear(&self, major: EdgeId, my_arrival: f64) -> bool {
        let major_len = self.network.edge(major).length;
        let horizon = LOOKAHEAD + major_len;
        self.vehicles.iter().all(|other| {
            let Some(ahead) = self
                .network
                .signed_distance(other.edge, other.x, major, major_len, horizon)
            else {
                return true;
            };
            if ahead >= 0.0 {
                // front already past the conflict point
                ahead > VEHICLE_LENGTH + CONFLICT_CLEARANCE
            } else {
                let arrival = -ahead / other.v.max(0.1);
                arrival > my_arrival + CRITICAL_GAP
            }
        })
    }

    fn update_accelerations(&mut self) {
        let order = self.edge_order();
        let mut accels = vec![0.0; self.vehicles.len()];
        let mut newly_committed = Vec::new();
        for list in &order {
            for (rank, &idx) in list.iter().enumerate() {
                let me = &self.vehicles[idx];
                let cfg = self.config_of(me);
                let desired = cfg.v_max.min(self.network.edge(me.edge).speed_limit);
                let mut leader = self.leader_of(&order, idx, rank);
                if !self.committed.contains(&me.id) {
                    if let Some((_, major, dist)) = self.upcoming_stop_line(me) {
                        let cannot_stop = dist < me.v * me.v / (2.0 * super::idm::EMERGENCY_DECEL);
                        let arrival = dist / me.v.max(1.0);
                        if cannot_stop || self.junction_clear(major, arrival) {
                            newly_committed.push(me.id);
                        } else {
                            let stop = Leader {
                                speed: 0.0,
                                gap: dist.max(1e-3),
                            };
                            leader = match leader {
                                Some(l) if l.gap <= stop.gap => Some(l),
                                _ => Some(stop),
                            };
                        }
                    }
                }
                accels[idx] = idm_with_desired_speed(me.v, desired, leader, cfg);
            }
        }
        self.committed.extend(newly_committed);
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            v.a = a;
        }
    }
}
