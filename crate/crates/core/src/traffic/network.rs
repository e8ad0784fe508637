use crate::error::{Error, Result};

pub type EdgeId = usize;

/// Directed single-lane road segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub name: String,
    /// Length in m.
    pub length: f64,
    /// Speed limit in m/s.
    pub speed_limit: f64,
    /// Edge entered when a vehicle runs off the downstream end. `None` marks a sink.
    pub successor: Option<EdgeId>,
    /// Traffic module (0-based) this edge belongs to.
    pub module: usize,
    /// If set, the downstream end of this edge is a stop line that yields to
    /// traffic reaching the downstream end of the named priority edge.
    pub yields_to: Option<EdgeId>,
}

/// Induction loop placed on an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub edge: EdgeId,
    /// Distance from the upstream end of the edge, in m.
    pub position: f64,
    pub module: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    edges: Vec<Edge>,
    detectors: Vec<Detector>,
    modules: usize,
    predecessor: Vec<Option<EdgeId>>,
}

impl RoadNetwork {
    /// Validates and builds a network. Modules must be numbered `0..R` with
    /// every module holding at least one edge.
    pub fn new(edges: Vec<Edge>, detectors: Vec<Detector>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::invalid("network has no edges"));
        }
        let modules = edges.iter().map(|e| e.module).max().unwrap_or(0) + 1;
        let mut seen = vec![false; modules];
        let mut predecessor = vec![None; edges.len()];
        for (id, e) in edges.iter().enumerate() {
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(Error::invalid(format!("edge {}: length must be positive", e.name)));
            }
            if !(e.speed_limit.is_finite() && e.speed_limit > 0.0) {
                return Err(Error::invalid(format!("edge {}: speed limit must be positive", e.name)));
            }
            seen[e.module] = true;
            if let Some(s) = e.successor {
                if s >= edges.len() {
                    return Err(Error::invalid(format!("edge {}: successor {s} out of range", e.name)));
                }
                if predecessor[s].is_some() {
                    return Err(Error::invalid(format!(
                        "edge {}: merging edges are not supported",
                        edges[s].name
                    )));
                }
                predecessor[s] = Some(id);
            }
            if let Some(m) = e.yields_to {
                if m >= edges.len() || m == id {
                    return Err(Error::invalid(format!("edge {}: invalid priority edge {m}", e.name)));
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("module {r} has no edges")));
        }
        // successor chains must terminate
        for start in 0..edges.len() {
            let mut cur = edges[start].successor;
            let mut hops = 0;
            while let Some(c) = cur {
                hops += 1;
                if hops > edges.len() {
                    return Err(Error::invalid(format!("edge {} lies on a cycle", edges[start].name)));
                }
                cur = edges[c].successor;
            }
        }
        for (i, d) in detectors.iter().enumerate() {
            let Some(edge) = edges.get(d.edge) else {
                return Err(Error::invalid(format!("detector {i}: edge {} out of range", d.edge)));
            };
            if !(0.0..=edge.length).contains(&d.position) {
                return Err(Error::invalid(format!(
                    "detector {i}: position {} outside [0, {}]",
                    d.position, edge.length
                )));
            }
            if d.module != edge.module {
                return Err(Error::invalid(format!(
                    "detector {i}: module {} differs from its edge's module {}",
                    d.module, edge.module
                )));
            }
        }
        Ok(Self {
            edges,
            detectors,
            modules,
            predecessor,
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn module_count(&self) -> usize {
        self.modules
    }

    pub fn predecessor(&self, id: EdgeId) -> Option<EdgeId> {
        self.predecessor[id]
    }

    pub fn detectors_in_module(&self, module: usize) -> impl Iterator<Item = (usize, &Detector)> {
        self.detectors
            .iter()
            .enumerate()
            .filter(move |(_, d)| d.module == module)
    }

    /// Distance along successor links from the upstream end of `from` to the
    /// upstream end of `to`, if `to` is reachable from `from` within `max_distance`.
    pub fn downstream_offset(&self, from: EdgeId, to: EdgeId, max_distance: f64) -> Option<f64> {
        let mut offset = 0.0;
        let mut cur = from;
        loop {
            if cur == to {
                return Some(offset);
            }
            offset += self.edges[cur].length;
            if offset > max_distance {
                return None;
            }
            cur = self.edges[cur].successor?;
        }
    }

    /// Signed distance of point `(edge, x)` ahead of point `(ref_edge, ref_x)`
    /// measured along the road. `None` when the points are not on a common
    /// chain within `reach` metres of each other.
    pub fn signed_distance(&self, edge: EdgeId, x: f64, ref_edge: EdgeId, ref_x: f64, reach: f64) -> Option<f64> {
        if let Some(off) = self.downstream_offset(ref_edge, edge, reach + ref_x) {
            return Some(off + x - ref_x);
        }
        self.downstream_offset(edge, ref_edge, reach + x)
            .map(|off| x - (off + ref_x))
    }
}
