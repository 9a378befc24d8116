use std::fmt;

use serde::{Deserialize, Serialize};

use crate::netmodel::{NodeId, PathRow, PieceId};
use crate::planner::StatusReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Along `next` pointers, toward the consumer.
    Fwd,
    /// Along `previous` pointers, toward the source.
    Bwd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub piece: PieceId,
    pub origin: NodeId,
    pub target: NodeId,
    pub req_id: u64,
    /// Relays the request may still pass through.
    pub relays_left: u32,
    /// Smallest transmitter lifetime seen so far, cycles.
    pub min_life: f64,
    /// Nodes visited so far, origin first.
    pub hops: Vec<NodeId>,
    pub avoid: Option<NodeId>,
    pub origin_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteReply {
    pub piece: PieceId,
    pub req_id: u64,
    /// Chosen route, origin first, target last.
    pub route: Vec<NodeId>,
    pub origin_rank: f64,
    pub target_rank: f64,
}

impl RouteReply {
    /// Rank assigned to the `k`-th node of the route.
    pub fn rank_at(&self, k: usize) -> f64 {
        let m = (self.route.len() - 1) as f64;
        if k + 1 == self.route.len() {
            return self.target_rank;
        }
        self.origin_rank + (self.target_rank - self.origin_rank) * k as f64 / m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Status(StatusReport),
    Plan(Vec<(PieceId, PathRow)>),
    /// `failed` left the path of `piece`; `downstream` is where it pointed.
    Alert {
        piece: PieceId,
        failed: NodeId,
        downstream: Option<NodeId>,
        downstream_rank: Option<f64>,
        /// Latency of the hop `failed -> downstream`, ms.
        failed_hop_ms: f64,
    },
    Join {
        piece: PieceId,
        upstream: NodeId,
        downstream: NodeId,
        upstream_rank: f64,
        downstream_rank: f64,
    },
    JoinReject {
        piece: PieceId,
    },
    ModifyPath {
        piece: PieceId,
        joiner: NodeId,
        joiner_rank: f64,
        delete: bool,
        dir: Direction,
        wave: u64,
    },
    RouteRequest(RouteRequest),
    RouteReply(RouteReply),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Status(_) => "status",
            Message::Plan(_) => "plan",
            Message::Alert { .. } => "alert",
            Message::Join { .. } => "join",
            Message::JoinReject { .. } => "join_reject",
            Message::ModifyPath { .. } => "modify_path",
            Message::RouteRequest(_) => "rreq",
            Message::RouteReply(_) => "rrep",
        }
    }

    pub fn piece(&self) -> Option<PieceId> {
        match self {
            Message::Status(_) | Message::Plan(_) => None,
            Message::Alert { piece, .. }
            | Message::Join { piece, .. }
            | Message::JoinReject { piece }
            | Message::ModifyPath { piece, .. } => Some(*piece),
            Message::RouteRequest(r) => Some(r.piece),
            Message::RouteReply(r) => Some(r.piece),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Node(NodeId),
    Controller,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(n) => write!(f, "{n}"),
            Endpoint::Controller => f.write_str("ctl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: Endpoint,
    pub to: Endpoint,
    pub msg: Message,
}

impl Envelope {
    pub fn local(from: NodeId, to: NodeId, msg: Message) -> Self {
        Self {
            from: Endpoint::Node(from),
            to: Endpoint::Node(to),
            msg,
        }
    }

    /// One trace line: `cycle type src dst piece`.
    pub fn trace_line(&self, cycle: u64) -> String {
        let piece = self.msg.piece().map_or_else(|| "-".to_string(), |p| p.to_string());
        format!("{cycle} {} {} {} {piece}", self.msg.kind(), self.from, self.to)
    }
}
