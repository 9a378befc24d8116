//! Distributed path maintenance run by every node.
//!
//! Each cycle a node scans its outgoing links for cost jumps, handles the
//! messages delivered to it, and fires its timers. A node whose next hop
//! fails is alerted by it and splices in a common neighbor of both sides of
//! the gap, or runs a TTL-limited route discovery when no such neighbor
//! qualifies. Path ranks, which increase strictly from source to consumer,
//! let a node rejoining the path decide locally whether it sits downstream
//! or upstream of the gap and which part of the path became obsolete.

mod aodv;
mod message;
mod node;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use message::{Direction, Endpoint, Envelope, Message, RouteReply, RouteRequest};
pub use node::NodeCtx;

use crate::lifetime::{aggregate_rates, node_lifetime, LifetimeParams, RateVector};
use crate::netmodel::{DataPiece, NetworkState, NodeId, PathTable, PieceId};
use crate::planner::LinkStatus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Relays a route request may traverse.
    pub ttl: u32,
    /// Cycles the route target keeps collecting requests after the first.
    pub route_wait: u64,
    /// Discoveries a node retries before giving a piece up.
    pub retries: u32,
    pub lifetime: LifetimeParams,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            ttl: 2,
            route_wait: 1,
            retries: 5,
            lifetime: LifetimeParams::default(),
        }
    }
}

impl ProtocolParams {
    /// Cycles before retry number `attempt` (counting from 0) after a
    /// failed discovery: the route timeout, doubled per earlier attempt.
    pub fn backoff(&self, attempt: u32) -> u64 {
        self.route_timeout() << attempt.min(16)
    }

    /// Cycles after which a route discovery started now is abandoned.
    pub fn route_timeout(&self) -> u64 {
        2 * (self.ttl as u64 + 1) + self.route_wait + 1
    }
}

/// What every node knows about a piece from the plan distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceMeta {
    pub piece: DataPiece,
    pub proxy_rank: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PieceBook(pub BTreeMap<PieceId, PieceMeta>);

impl PieceBook {
    /// Reads proxy ranks from a freshly installed table.
    pub fn new(pieces: &[DataPiece], table: &PathTable) -> Self {
        Self(
            pieces
                .iter()
                .map(|p| {
                    let proxy_rank = table.row(p.id, p.proxy).map_or(f64::NAN, |r| r.rank);
                    (
                        p.id,
                        PieceMeta {
                            piece: p.clone(),
                            proxy_rank,
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn get(&self, id: PieceId) -> Option<&PieceMeta> {
        self.0.get(&id)
    }

    pub fn pieces(&self) -> Vec<DataPiece> {
        self.0.values().map(|m| m.piece.clone()).collect()
    }
}

/// Periodic neighbor advertisement: energy, links and current load.
#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    pub energy: f64,
    pub links: Vec<LinkStatus>,
    pub rates: RateVector,
}

impl Beacon {
    /// Lifetime of the advertiser if `extra` more pieces per cycle went to `to`.
    pub fn lifetime_with(&self, to: NodeId, extra: f64, params: &LifetimeParams) -> f64 {
        let loads = self.links.iter().map(|l| {
            let bump = if l.to == to { extra } else { 0.0 };
            (l.eps, self.rates.get(l.to) + bump)
        });
        node_lifetime(self.energy, loads, params)
    }

    pub fn link_to(&self, v: NodeId) -> Option<&LinkStatus> {
        self.links.iter().find(|l| l.to == v)
    }
}

/// Beacons of all alive nodes as heard at the start of a cycle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Beacons(pub BTreeMap<NodeId, Beacon>);

impl Beacons {
    pub fn collect(net: &NetworkState, table: &PathTable, book: &PieceBook) -> Self {
        let mut rates = aggregate_rates(table, &book.pieces());
        Self(
            net.node_ids()
                .filter(|&u| net.is_alive(u))
                .map(|u| {
                    let links = net
                        .alive_neighbors(u)
                        .map(|v| {
                            let l = net.link(u, v).expect("adjacent");
                            LinkStatus {
                                to: v,
                                eps: l.eps,
                                latency_ms: l.latency_ms,
                            }
                        })
                        .collect();
                    let beacon = Beacon {
                        energy: net.node(u).energy,
                        links,
                        rates: rates.remove(&u).unwrap_or_default(),
                    };
                    (u, beacon)
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RepairStage {
    /// A join was sent to `via`; a rejection falls back to route discovery.
    Splice { via: NodeId, until: u64 },
    Route { req_id: u64, until: u64 },
    /// Discovery failed; try again at `until`.
    Backoff { until: u64 },
}

/// Where a repairing node wants to reconnect, and under which limits.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Goal {
    pub target: NodeId,
    pub target_rank: f64,
    /// A splice is accepted only if its two hops are no slower than this.
    pub baseline_ms: f64,
    pub avoid: Option<NodeId>,
    pub forbid_direct: bool,
    /// Failed discoveries so far.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Repair {
    pub goal: Goal,
    pub stage: RepairStage,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Collect {
    pub piece: PieceId,
    pub origin_rank: f64,
    pub until: u64,
    /// `(min lifetime, route)` per arrival.
    pub arrivals: Vec<(f64, Vec<NodeId>)>,
    pub avoid: Option<NodeId>,
}

/// Protocol state private to one node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeLocal {
    pub(crate) repairs: BTreeMap<PieceId, Repair>,
    pub(crate) collecting: BTreeMap<(NodeId, u64), Collect>,
    pub(crate) seen_requests: BTreeSet<(NodeId, u64)>,
    pub(crate) seen_waves: BTreeSet<(PieceId, NodeId, u64)>,
    pub(crate) seq: u64,
}

impl NodeLocal {
    fn is_idle(&self) -> bool {
        self.repairs.is_empty() && self.collecting.is_empty()
    }
}

/// Counters of one protocol step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub triggered_links: u64,
    pub alerts_stale: u64,
    pub splices: u64,
    pub joins_rejected: u64,
    pub routes_started: u64,
    pub routes_installed: u64,
    pub routes_failed: u64,
    pub retries: u64,
    /// Pieces given up at a node because the gap cannot be bridged.
    pub breaks: u64,
    pub waves_forwarded: u64,
}

impl StepStats {
    pub fn absorb(&mut self, o: &StepStats) {
        self.triggered_links += o.triggered_links;
        self.alerts_stale += o.alerts_stale;
        self.splices += o.splices;
        self.joins_rejected += o.joins_rejected;
        self.routes_started += o.routes_started;
        self.routes_installed += o.routes_installed;
        self.routes_failed += o.routes_failed;
        self.retries += o.retries;
        self.breaks += o.breaks;
        self.waves_forwarded += o.waves_forwarded;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Messages sent and paid for this cycle, in send order.
    pub sent: Vec<Envelope>,
    /// Energy spent on those messages, joules.
    pub energy_j: f64,
    /// Per-sender message spend, joules.
    pub spend: BTreeMap<NodeId, f64>,
    pub disconnected: Vec<NodeId>,
    /// Messages lost because the sender could not pay or the receiver died.
    pub dropped: u64,
    pub stats: StepStats,
}

/// All nodes' protocol state plus the messages in flight between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub params: ProtocolParams,
    locals: Vec<NodeLocal>,
    in_flight: Vec<Envelope>,
}

impl Protocol {
    pub fn new(node_count: usize, params: ProtocolParams) -> Self {
        Self {
            params,
            locals: vec![NodeLocal::default(); node_count],
            in_flight: Vec::new(),
        }
    }

    /// Queues a message for delivery at the next step, free of charge.
    pub fn post(&mut self, env: Envelope) {
        self.in_flight.push(env);
    }

    pub fn in_flight(&self) -> &[Envelope] {
        &self.in_flight
    }

    /// No messages in flight and no repair or route timer pending.
    pub fn is_quiet(&self) -> bool {
        self.in_flight.is_empty() && self.locals.iter().all(NodeLocal::is_idle)
    }

    /// Drops every pending message and timer.
    pub fn reset(&mut self) {
        self.in_flight.clear();
        for l in &mut self.locals {
            *l = NodeLocal::default();
        }
    }

    /// Runs one cycle of every alive node in ascending id order.
    pub fn step(
        &mut self,
        cycle: u64,
        net: &mut NetworkState,
        table: &mut PathTable,
        book: &PieceBook,
    ) -> StepOutcome {
        let beacons = Beacons::collect(net, table, book);
        let mut out = StepOutcome::default();
        let mut inbox: BTreeMap<NodeId, Vec<(NodeId, Message)>> = BTreeMap::new();
        for env in std::mem::take(&mut self.in_flight) {
            let (Endpoint::Node(from), Endpoint::Node(to)) = (env.from, env.to) else {
                continue;
            };
            if net.is_alive(to) {
                inbox.entry(to).or_default().push((from, env.msg));
            } else if let Message::Join { piece, .. } = env.msg {
                // Link-layer delivery failure reaches the sender as a refusal.
                inbox
                    .entry(from)
                    .or_default()
                    .push((to, Message::JoinReject { piece }));
            } else {
                out.dropped += 1;
            }
        }

        let ids: Vec<NodeId> = net.node_ids().collect();
        for u in ids {
            if !net.is_alive(u) {
                continue;
            }
            let messages = inbox.remove(&u).unwrap_or_default();
            let (sends, disconnect, stats) = {
                let mut ctx = NodeCtx::new(
                    u,
                    cycle,
                    net,
                    &beacons,
                    book,
                    &self.params,
                    table.node_rows(u),
                    &mut self.locals[u.index()],
                );
                let disconnect = ctx.run_cycle(messages);
                let (sends, stats) = ctx.finish();
                (sends, disconnect, stats)
            };
            out.stats.absorb(&stats);
            for (to, msg) in sends {
                let cost = net.link(u, to).map(|l| l.eps);
                match cost {
                    Some(eps) => {
                        let (paid, spent) = net.charge(u, eps);
                        out.energy_j += spent;
                        *out.spend.entry(u).or_insert(0.0) += spent;
                        let env = Envelope::local(u, to, msg);
                        if paid {
                            out.sent.push(env.clone());
                            self.in_flight.push(env);
                        } else {
                            out.dropped += 1;
                        }
                    }
                    None => out.dropped += 1,
                }
            }
            if disconnect {
                net.node_mut(u).alive = false;
                self.locals[u.index()] = NodeLocal::default();
                out.disconnected.push(u);
            }
        }
        out
    }

    /// Steps until quiet or `max_cycles` elapse; returns the cycles used and
    /// the accumulated outcome.
    pub fn settle(
        &mut self,
        start_cycle: u64,
        max_cycles: u64,
        net: &mut NetworkState,
        table: &mut PathTable,
        book: &PieceBook,
    ) -> (u64, StepOutcome) {
        let mut total = StepOutcome::default();
        let mut k = 0;
        while k < max_cycles && !self.is_quiet() {
            let o = self.step(start_cycle + k, net, table, book);
            net.sync_activation(table);
            total.sent.extend(o.sent);
            total.energy_j += o.energy_j;
            for (n, e) in o.spend {
                *total.spend.entry(n).or_insert(0.0) += e;
            }
            total.disconnected.extend(o.disconnected);
            total.dropped += o.dropped;
            total.stats.absorb(&o.stats);
            k += 1;
        }
        (k, total)
    }
}

#[cfg(test)]
mod tests;
