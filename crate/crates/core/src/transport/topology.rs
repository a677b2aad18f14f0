//! Network topology and static routing.
//!
//! Links are bidirectional with independent per-direction capacity, queues
//! and bookings. Routes are shortest-path by hop count, computed once at
//! load; ties break toward the lexicographically smallest node-id sequence
//! so every run sees identical paths.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("no route from {0} to {1}")]
    NoRoute(String, String),
}

/// Fraction of link capacity each booking class may reserve. Best-effort
/// traffic never books the ledger; its share only sizes what admission
/// leaves alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassShares {
    pub ef: f64,
    pub af: f64,
    pub be: f64,
}

impl Default for ClassShares {
    fn default() -> Self {
        ClassShares { ef: 0.30, af: 0.50, be: 0.20 }
    }
}

impl ClassShares {
    pub fn sum(&self) -> f64 {
        self.ef + self.af + self.be
    }
}

pub const DEFAULT_QUEUE_CAPACITY_BYTES: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDef {
    pub link_id: String,
    pub from: String,
    pub to: String,
    pub capacity_bps: u64,
    pub propagation_delay_ms: f64,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity_bytes: u64,
    /// Resource-control segment this link belongs to, e.g. `access:dsl`
    /// or `core`.
    #[serde(default = "default_segment")]
    pub segment: String,
    #[serde(default)]
    pub class_shares: ClassShares,
}

fn default_queue_capacity() -> u64 {
    DEFAULT_QUEUE_CAPACITY_BYTES
}

fn default_segment() -> String {
    "core".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub links: Vec<LinkDef>,
}

/// Traversal direction over a link relative to its (from, to) definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Fwd,
    Rev,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Fwd => Direction::Rev,
            Direction::Rev => Direction::Fwd,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Fwd => 0,
            Direction::Rev => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Fwd => "fwd",
            Direction::Rev => "rev",
        }
    }
}

/// One step of a path: which link to cross and in which direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub link: usize,
    pub direction: Direction,
}

impl Topology {
    pub fn node_index(&self, node: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }

    pub fn link_index(&self, link_id: &str) -> Option<usize> {
        self.links.iter().position(|l| l.link_id == link_id)
    }

    /// Adjacency as (neighbor, link index, direction), sorted by neighbor
    /// id then link id so traversal order is deterministic.
    fn adjacency(&self) -> BTreeMap<&str, Vec<(&str, usize, Direction)>> {
        let mut adj: BTreeMap<&str, Vec<(&str, usize, Direction)>> = BTreeMap::new();
        for n in &self.nodes {
            adj.insert(n.as_str(), Vec::new());
        }
        for (i, l) in self.links.iter().enumerate() {
            if let Some(v) = adj.get_mut(l.from.as_str()) {
                v.push((l.to.as_str(), i, Direction::Fwd));
            }
            if let Some(v) = adj.get_mut(l.to.as_str()) {
                v.push((l.from.as_str(), i, Direction::Rev));
            }
        }
        for v in adj.values_mut() {
            v.sort_by(|a, b| a.0.cmp(b.0).then_with(|| self.links[a.1].link_id.cmp(&self.links[b.1].link_id)));
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = std::collections::BTreeSet::new();
        let mut queue = VecDeque::from([self.nodes[0].as_str()]);
        seen.insert(self.nodes[0].as_str());
        while let Some(n) = queue.pop_front() {
            for &(m, _, _) in adj.get(n).into_iter().flatten() {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

/// Precomputed shortest-path routing over a [`Topology`].
#[derive(Debug)]
pub struct Routing {
    topology: Topology,
    /// dist[dst_idx][node_idx] = hop count from node to dst, usize::MAX if
    /// unreachable.
    dist: Vec<Vec<usize>>,
}

impl Routing {
    pub fn new(topology: Topology) -> Self {
        let n = topology.nodes.len();
        let adj = topology.adjacency();
        let index: BTreeMap<&str, usize> =
            topology.nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut dist = vec![vec![usize::MAX; n]; n];
        for (dst_idx, dst) in topology.nodes.iter().enumerate() {
            let d = &mut dist[dst_idx];
            d[dst_idx] = 0;
            let mut queue = VecDeque::from([dst.as_str()]);
            while let Some(cur) = queue.pop_front() {
                let cur_i = index[cur];
                for &(nb, _, _) in adj.get(cur).into_iter().flatten() {
                    let nb_i = index[nb];
                    if d[nb_i] == usize::MAX {
                        d[nb_i] = d[cur_i] + 1;
                        queue.push_back(nb);
                    }
                }
            }
        }
        Routing { topology, dist }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Shortest path from `src` to `dst`. Among equal-length paths the one
    /// whose node-id sequence is lexicographically smallest is chosen: at
    /// each step we greedily take the smallest-id neighbor that still lies
    /// on a shortest path.
    pub fn path(&self, src: &str, dst: &str) -> Result<Vec<Hop>, TopologyError> {
        let src_idx = self
            .topology
            .node_index(src)
            .ok_or_else(|| TopologyError::UnknownNode(src.to_string()))?;
        let dst_idx = self
            .topology
            .node_index(dst)
            .ok_or_else(|| TopologyError::UnknownNode(dst.to_string()))?;
        if src_idx == dst_idx {
            return Ok(Vec::new());
        }
        let dist = &self.dist[dst_idx];
        if dist[src_idx] == usize::MAX {
            return Err(TopologyError::NoRoute(src.to_string(), dst.to_string()));
        }
        let adj = self.topology.adjacency();
        let index: BTreeMap<&str, usize> =
            self.topology.nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut hops = Vec::with_capacity(dist[src_idx]);
        let mut cur = src;
        while cur != dst {
            let cur_i = index[cur];
            let step = adj
                .get(cur)
                .into_iter()
                .flatten()
                .find(|&&(nb, _, _)| dist[index[nb]] + 1 == dist[cur_i])
                .copied()
                .expect("BFS distance table guarantees a next hop");
            hops.push(Hop { link: step.1, direction: step.2 });
            cur = step.0;
        }
        Ok(hops)
    }
}
