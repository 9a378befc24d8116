//! Network representation shared by every other module.
//!
//! A [`NetworkState`] holds the nodes (position, battery, liveness), the
//! directed links between nodes in transmission range (per-piece energy cost
//! and per-hop latency), and the set of proxies. The controller is not a graph
//! vertex: any alive node reaches it at cost [`NetworkState::eps_cc`].

mod paths;
mod topology;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use paths::{
    access_latency, hops_latency, path_latency, validate_paths, NodeRows, PathReport, PathRow,
    PathTable, PathViolation, Walk, WalkEnd, RANK_STEP,
};
pub use topology::{build_grid_topology, GridConfig, LinkParams};

/// Opaque node identifier. The total order is used for every tie-break.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Identifier of a data piece stream `D_i`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PieceId(pub u32);

impl fmt::Display for PieceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub x_m: f64,
    pub y_m: f64,
    /// Remaining battery, joules.
    pub energy: f64,
    pub initial_energy: f64,
    pub is_proxy: bool,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    /// Joules per transmitted piece in the current cycle.
    pub eps: f64,
    /// Joules per transmitted piece in the previous cycle.
    pub eps_prev: f64,
    /// Interference-free cost the link returns to once disturbances expire.
    pub eps_base: f64,
    pub latency_ms: f64,
    /// Pieces for which this link is activated (`x_uv^i = 1`).
    pub active_pieces: BTreeSet<PieceId>,
}

impl LinkState {
    pub fn new(eps: f64, latency_ms: f64) -> Self {
        Self {
            eps,
            eps_prev: eps,
            eps_base: eps,
            latency_ms,
            active_pieces: BTreeSet::new(),
        }
    }
}

/// A producer/consumer stream `D_i = (s_i, c_i, r_i)` and its assigned proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPiece {
    pub id: PieceId,
    pub source: NodeId,
    pub consumer: NodeId,
    /// Pieces generated per cycle.
    pub rate: u32,
    pub proxy: NodeId,
    pub size_bytes: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("grid {rows}x{cols} has fewer than two nodes")]
    Degenerate { rows: usize, cols: usize },
    #[error("topology is disconnected: {unreached} node(s) unreachable from {from}")]
    Disconnected { from: NodeId, unreached: usize },
    #[error("proxy {0} is not a node of the topology")]
    UnknownProxy(NodeId),
    #[error("invalid link parameters: {0}")]
    InvalidLinkParams(String),
}

/// Static and dynamic state of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    nodes: Vec<NodeState>,
    links: BTreeMap<(NodeId, NodeId), LinkState>,
    adjacency: Vec<Vec<NodeId>>,
    proxies: BTreeSet<NodeId>,
    /// Cost of one message to the controller, joules.
    pub eps_cc: f64,
}

impl NetworkState {
    pub fn new(eps_cc: f64) -> Self {
        Self {
            nodes: Vec::new(),
            links: BTreeMap::new(),
            adjacency: Vec::new(),
            proxies: BTreeSet::new(),
            eps_cc,
        }
    }

    /// Appends a node and returns its id (ids are dense, starting at 0).
    pub fn add_node(&mut self, x_m: f64, y_m: f64, energy: f64, is_proxy: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(NodeState {
            x_m,
            y_m,
            energy,
            initial_energy: energy,
            is_proxy,
            alive: energy > 0.0,
        });
        self.adjacency.push(Vec::new());
        if is_proxy {
            self.proxies.insert(id);
        }
        id
    }

    /// Adds both directions of a link with identical cost and latency.
    pub fn add_link_pair(&mut self, u: NodeId, v: NodeId, eps: f64, latency_ms: f64) {
        assert!(u != v, "self-loop {u}");
        assert!(eps > 0.0 && latency_ms > 0.0, "link scalars must be positive");
        for (a, b) in [(u, v), (v, u)] {
            self.links.insert((a, b), LinkState::new(eps, latency_ms));
            let adj = &mut self.adjacency[a.index()];
            if let Err(pos) = adj.binary_search(&b) {
                adj.insert(pos, b);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut NodeState {
        &mut self.nodes[id.index()]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes[id.index()].alive
    }

    pub fn alive_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.alive).count()
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id.index()]
    }

    pub fn alive_neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[id.index()]
            .iter()
            .copied()
            .filter(|v| self.nodes[v.index()].alive)
    }

    pub fn link(&self, u: NodeId, v: NodeId) -> Option<&LinkState> {
        self.links.get(&(u, v))
    }

    pub fn link_mut(&mut self, u: NodeId, v: NodeId) -> Option<&mut LinkState> {
        self.links.get_mut(&(u, v))
    }

    pub fn links(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &LinkState)> {
        self.links.iter()
    }

    pub fn links_mut(&mut self) -> impl Iterator<Item = (&(NodeId, NodeId), &mut LinkState)> {
        self.links.iter_mut()
    }

    pub fn link_keys(&self) -> Vec<(NodeId, NodeId)> {
        self.links.keys().copied().collect()
    }

    pub fn proxies(&self) -> &BTreeSet<NodeId> {
        &self.proxies
    }

    pub fn total_energy(&self) -> f64 {
        self.nodes.iter().map(|n| n.energy).sum()
    }

    /// Debits `amount` joules from `id`. Returns false, draining the battery,
    /// if the node cannot afford the full amount.
    pub fn charge(&mut self, id: NodeId, amount: f64) -> (bool, f64) {
        let node = &mut self.nodes[id.index()];
        if node.energy >= amount {
            node.energy -= amount;
            (true, amount)
        } else {
            let spent = node.energy;
            node.energy = 0.0;
            (false, spent)
        }
    }

    /// Breadth-first reachability among alive nodes, starting from the
    /// lowest alive id. `Ok(())` when every alive node is reached.
    pub fn check_connected(&self) -> Result<(), TopologyError> {
        let Some(start) = self.node_ids().find(|&n| self.is_alive(n)) else {
            return Ok(());
        };
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start.index()] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.alive_neighbors(u) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    queue.push_back(v);
                }
            }
        }
        let unreached = self
            .node_ids()
            .filter(|&n| self.is_alive(n) && !seen[n.index()])
            .count();
        if unreached == 0 {
            Ok(())
        } else {
            Err(TopologyError::Disconnected {
                from: start,
                unreached,
            })
        }
    }

    /// Rebuilds every link's `active_pieces` from the forwarding pointers.
    pub fn sync_activation(&mut self, table: &PathTable) {
        for link in self.links.values_mut() {
            link.active_pieces.clear();
        }
        for (piece, u, v) in table.activations() {
            if let Some(link) = self.links.get_mut(&(u, v)) {
                link.active_pieces.insert(piece);
            }
        }
    }

    pub fn snapshot(&self) -> TopologySnapshot {
        TopologySnapshot {
            eps_cc: self.eps_cc,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| SnapshotNode {
                    id: NodeId(i as u32),
                    x_m: n.x_m,
                    y_m: n.y_m,
                    energy_j: n.energy,
                    initial_energy_j: n.initial_energy,
                    proxy: n.is_proxy,
                    alive: n.alive,
                })
                .collect(),
            links: self
                .links
                .iter()
                .map(|(&(from, to), l)| SnapshotLink {
                    from,
                    to,
                    eps_j: l.eps,
                    latency_ms: l.latency_ms,
                })
                .collect(),
        }
    }
}

/// Debug/fixture export of a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub eps_cc: f64,
    pub nodes: Vec<SnapshotNode>,
    pub links: Vec<SnapshotLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub energy_j: f64,
    pub initial_energy_j: f64,
    pub proxy: bool,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLink {
    pub from: NodeId,
    pub to: NodeId,
    pub eps_j: f64,
    pub latency_ms: f64,
}

impl TopologySnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    /// Rebuilds a network from a snapshot. Links are restored per direction.
    pub fn into_network(self) -> NetworkState {
        let mut net = NetworkState::new(self.eps_cc);
        for n in &self.nodes {
            let id = net.add_node(n.x_m, n.y_m, n.initial_energy_j, n.proxy);
            let st = net.node_mut(id);
            st.energy = n.energy_j;
            st.alive = n.alive;
        }
        for l in self.links {
            net.links
                .insert((l.from, l.to), LinkState::new(l.eps_j, l.latency_ms));
            let adj = &mut net.adjacency[l.from.index()];
            if let Err(pos) = adj.binary_search(&l.to) {
                adj.insert(pos, l.to);
            }
        }
        net
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_drains_when_short() {
        let mut net = NetworkState::new(1.0);
        let a = net.add_node(0.0, 0.0, 1.0, false);
        assert_eq!(net.charge(a, 0.25), (true, 0.25));
        assert_eq!(net.charge(a, 1.0), (false, 0.75));
        assert_eq!(net.node(a).energy, 0.0);
    }

    #[test]
    fn snapshot_roundtrip_preserves_network() {
        let mut net = NetworkState::new(0.5);
        let a = net.add_node(0.0, 0.0, 3.0, true);
        let b = net.add_node(2.5, 0.0, 1.0, false);
        net.add_link_pair(a, b, 0.1, 10.0);
        let json = net.snapshot().to_json();
        let back: TopologySnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_network(), net);
    }
}
