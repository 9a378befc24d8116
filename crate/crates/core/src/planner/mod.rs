//! Centralized controller: initial forwarding plan and full recomputation.
//!
//! Pieces are planned greedily in descending rate order. For each piece every
//! proxy is tried: the consumer segment is the widest path within half the
//! round-trip budget, the source segment the widest path avoiding it, and the
//! proxy whose narrower segment is widest wins. Rates of planned pieces are
//! accumulated so later pieces see the load of earlier ones.

mod bottleneck;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bottleneck::{bottleneck_path, transmitter_lifetime, FoundPath};

use crate::lifetime::{LifetimeParams, RateVector};
use crate::netmodel::{hops_latency, DataPiece, NetworkState, NodeId, PathTable, PieceId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStatus {
    pub to: NodeId,
    pub eps: f64,
    pub latency_ms: f64,
}

/// What a node uploads to the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub node: NodeId,
    pub energy: f64,
    pub is_proxy: bool,
    pub links: Vec<LinkStatus>,
}

/// Status of every alive node, links restricted to alive neighbors.
pub fn collect_status(net: &NetworkState) -> Vec<StatusReport> {
    net.node_ids()
        .filter(|&u| net.is_alive(u))
        .map(|u| StatusReport {
            node: u,
            energy: net.node(u).energy,
            is_proxy: net.node(u).is_proxy,
            links: net
                .alive_neighbors(u)
                .map(|v| {
                    let l = net.link(u, v).expect("adjacent");
                    LinkStatus {
                        to: v,
                        eps: l.eps,
                        latency_ms: l.latency_ms,
                    }
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewNode {
    pub energy: f64,
    pub is_proxy: bool,
    pub links: Vec<LinkStatus>,
}

/// The controller's picture of the network, assembled from status reports.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetView {
    pub nodes: BTreeMap<NodeId, ViewNode>,
}

impl NetView {
    pub fn from_reports(reports: &[StatusReport]) -> Self {
        let present: BTreeSet<NodeId> = reports.iter().map(|r| r.node).collect();
        let nodes = reports
            .iter()
            .map(|r| {
                let mut links: Vec<LinkStatus> = r
                    .links
                    .iter()
                    .filter(|l| present.contains(&l.to))
                    .cloned()
                    .collect();
                links.sort_by_key(|l| l.to);
                (
                    r.node,
                    ViewNode {
                        energy: r.energy,
                        is_proxy: r.is_proxy,
                        links,
                    },
                )
            })
            .collect();
        Self { nodes }
    }

    pub fn proxies(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|(_, n)| n.is_proxy)
            .map(|(&id, _)| id)
    }

    fn latency(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.nodes
            .get(&u)?
            .links
            .iter()
            .find(|l| l.to == v)
            .map(|l| l.latency_ms)
    }
}

/// Rates already committed by planned pieces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectedRates(pub BTreeMap<NodeId, RateVector>);

impl ProjectedRates {
    pub fn of(&self, u: NodeId) -> Option<&RateVector> {
        self.0.get(&u)
    }

    pub fn add_path(&mut self, nodes: &[NodeId], rate: f64) {
        for w in nodes.windows(2) {
            self.0.entry(w[0]).or_default().add(w[1], rate);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecePlan {
    pub piece: PieceId,
    pub proxy: NodeId,
    /// Source to proxy, both included.
    pub source_segment: Vec<NodeId>,
    /// Proxy to consumer, both included.
    pub consumer_segment: Vec<NodeId>,
    pub round_trip_ms: f64,
    /// Projected lifetime of the weakest transmitter on the path, cycles.
    pub bottleneck: f64,
}

impl PiecePlan {
    pub fn full_path(&self) -> Vec<NodeId> {
        let mut nodes = self.source_segment.clone();
        nodes.extend_from_slice(&self.consumer_segment[1..]);
        nodes
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub pieces: BTreeMap<PieceId, PiecePlan>,
}

impl Plan {
    /// Replaces the rows of every planned piece in `table`.
    pub fn install(&self, table: &mut PathTable) {
        for (&id, pp) in &self.pieces {
            table.install_path(id, &pp.full_path());
        }
    }

    /// Copies proxy assignments into the piece list.
    pub fn assign_proxies(&self, pieces: &mut [DataPiece]) {
        for p in pieces {
            if let Some(pp) = self.pieces.get(&p.id) {
                p.proxy = pp.proxy;
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOutcome {
    pub plan: Plan,
    /// Pieces with no latency-feasible assignment.
    pub unplanned: Vec<PieceId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no latency-feasible path for piece {0}")]
    Infeasible(PieceId),
    #[error("latency budget must be positive, got {0} ms")]
    BadBudget(f64),
}

/// Plans every piece it can; pieces without a feasible path are listed.
pub fn plan_pieces(
    reports: &[StatusReport],
    pieces: &[DataPiece],
    l_max_ms: f64,
    params: &LifetimeParams,
) -> PlanOutcome {
    let view = NetView::from_reports(reports);
    let proxies: Vec<NodeId> = view.proxies().collect();
    let mut order: Vec<&DataPiece> = pieces.iter().collect();
    order.sort_by(|a, b| b.rate.cmp(&a.rate).then(a.id.cmp(&b.id)));

    let mut projected = ProjectedRates::default();
    let mut outcome = PlanOutcome::default();
    for piece in order {
        let rate = piece.rate as f64;
        let mut best: Option<(FoundPath, PiecePlan)> = None;
        for &p in &proxies {
            let Some(cand) = plan_via(&view, piece, p, l_max_ms, &projected, rate, params) else {
                continue;
            };
            let full = FoundPath {
                nodes: cand.full_path(),
                latency_ms: cand.round_trip_ms,
                bottleneck: cand.bottleneck,
            };
            if best.as_ref().is_none_or(|(b, _)| full.better_than(b)) {
                best = Some((full, cand));
            }
        }
        match best {
            Some((full, pp)) => {
                projected.add_path(&full.nodes, rate);
                outcome.plan.pieces.insert(piece.id, pp);
            }
            None => outcome.unplanned.push(piece.id),
        }
    }
    outcome.unplanned.sort();
    outcome
}

fn plan_via(
    view: &NetView,
    piece: &DataPiece,
    proxy: NodeId,
    l_max_ms: f64,
    projected: &ProjectedRates,
    rate: f64,
    params: &LifetimeParams,
) -> Option<PiecePlan> {
    let (s, c) = (piece.source, piece.consumer);
    if !view.nodes.contains_key(&s) || !view.nodes.contains_key(&c) {
        return None;
    }
    let consumer = if proxy == c {
        trivial(c)
    } else {
        let avoid: BTreeSet<NodeId> = [s].into_iter().filter(|&n| n != proxy).collect();
        bottleneck_path(view, proxy, c, l_max_ms / 2.0, projected, rate, &avoid, params)?
    };
    let back: f64 = consumer
        .nodes
        .windows(2)
        .map(|w| view.latency(w[1], w[0]))
        .sum::<Option<f64>>()?;
    let round_trip = consumer.latency_ms + back;
    if round_trip > l_max_ms {
        return None;
    }
    let source = if proxy == s {
        trivial(s)
    } else {
        let avoid: BTreeSet<NodeId> = consumer.nodes.iter().copied().filter(|&n| n != proxy).collect();
        bottleneck_path(view, s, proxy, f64::INFINITY, projected, rate, &avoid, params)?
    };
    Some(PiecePlan {
        piece: piece.id,
        proxy,
        bottleneck: source.bottleneck.min(consumer.bottleneck),
        source_segment: source.nodes,
        consumer_segment: consumer.nodes,
        round_trip_ms: round_trip,
    })
}

fn trivial(n: NodeId) -> FoundPath {
    FoundPath {
        nodes: vec![n],
        latency_ms: 0.0,
        bottleneck: f64::INFINITY,
    }
}

/// Plans every piece or fails naming the first infeasible one.
pub fn compute_plan(
    reports: &[StatusReport],
    pieces: &[DataPiece],
    l_max_ms: f64,
    params: &LifetimeParams,
) -> Result<Plan, PlanError> {
    if !(l_max_ms > 0.0) {
        return Err(PlanError::BadBudget(l_max_ms));
    }
    let outcome = plan_pieces(reports, pieces, l_max_ms, params);
    match outcome.unplanned.first() {
        Some(&id) => Err(PlanError::Infeasible(id)),
        None => Ok(outcome.plan),
    }
}

/// Result of a controller-driven reconfiguration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recomputation {
    pub outcome: PlanOutcome,
    /// Energy spent by nodes uploading their status, joules.
    pub charged_j: f64,
    pub participants: usize,
}

/// Every alive node uploads its status at cost `eps_cc`, then the controller
/// plans from scratch over the updated state.
pub fn recompute_central(
    net: &mut NetworkState,
    pieces: &[DataPiece],
    l_max_ms: f64,
    params: &LifetimeParams,
) -> Recomputation {
    let alive: Vec<NodeId> = net.node_ids().filter(|&u| net.is_alive(u)).collect();
    if alive.is_empty() {
        return Recomputation::default();
    }
    let mut charged = 0.0;
    for &u in &alive {
        charged += net.charge(u, net.eps_cc).1;
    }
    let reports = collect_status(net);
    Recomputation {
        outcome: plan_pieces(&reports, pieces, l_max_ms, params),
        charged_j: charged,
        participants: alive.len(),
    }
}

/// Round-trip latency of a planned consumer segment on the live network.
pub fn planned_round_trip(net: &NetworkState, pp: &PiecePlan) -> Option<f64> {
    let fwd = hops_latency(net, &pp.consumer_segment).ok()?;
    let rev: Vec<NodeId> = pp.consumer_segment.iter().rev().copied().collect();
    Some(fwd + hops_latency(net, &rev).ok()?)
}
