use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DataPiece, NetworkState, NodeId, PieceId};

/// Spacing between consecutive hop ranks of a freshly installed path.
pub const RANK_STEP: f64 = 1_048_576.0;

/// One node's view of one piece's path.
///
/// `rank` labels the node's position: ranks strictly increase from source to
/// consumer. `next_rank` is a lower bound on the successor's rank, known
/// locally from the last pointer update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub previous: Option<NodeId>,
    pub next: Option<NodeId>,
    pub rank: f64,
    pub next_rank: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path of {piece} broken after {at}")]
    Broken { piece: PieceId, at: NodeId },
    #[error("path of {piece} revisits {node}")]
    Loop { piece: PieceId, node: NodeId },
    #[error("no link {from} -> {to}")]
    MissingLink { from: NodeId, to: NodeId },
}

/// Distributed previous/next pointers, keyed by (piece, node).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathTable {
    rows: BTreeMap<(PieceId, NodeId), PathRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkEnd {
    /// The last node has no forward pointer (or no row at all).
    Stopped,
    /// The forward pointer of the last node leads back to this node.
    Loop(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    pub nodes: Vec<NodeId>,
    pub end: WalkEnd,
}

impl PathTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row(&self, piece: PieceId, node: NodeId) -> Option<&PathRow> {
        self.rows.get(&(piece, node))
    }

    pub fn row_mut(&mut self, piece: PieceId, node: NodeId) -> Option<&mut PathRow> {
        self.rows.get_mut(&(piece, node))
    }

    pub fn set_row(&mut self, piece: PieceId, node: NodeId, row: PathRow) {
        self.rows.insert((piece, node), row);
    }

    pub fn remove_row(&mut self, piece: PieceId, node: NodeId) -> Option<PathRow> {
        self.rows.remove(&(piece, node))
    }

    pub fn next(&self, piece: PieceId, node: NodeId) -> Option<NodeId> {
        self.row(piece, node).and_then(|r| r.next)
    }

    pub fn previous(&self, piece: PieceId, node: NodeId) -> Option<NodeId> {
        self.row(piece, node).and_then(|r| r.previous)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (PieceId, NodeId, &PathRow)> {
        self.rows.iter().map(|(&(p, n), r)| (p, n, r))
    }

    /// Rows held by one node, in piece order.
    pub fn rows_of_node(&self, node: NodeId) -> Vec<(PieceId, PathRow)> {
        self.rows
            .iter()
            .filter(|((_, n), _)| *n == node)
            .map(|(&(p, _), r)| (p, *r))
            .collect()
    }

    pub fn clear_piece(&mut self, piece: PieceId) {
        self.rows.retain(|(p, _), _| *p != piece);
    }

    /// Writes a simple path `nodes[0] -> ... -> nodes[last]` for `piece`,
    /// replacing whatever the piece had before.
    pub fn install_path(&mut self, piece: PieceId, nodes: &[NodeId]) {
        self.clear_piece(piece);
        for (k, &n) in nodes.iter().enumerate() {
            let row = PathRow {
                previous: k.checked_sub(1).map(|j| nodes[j]),
                next: nodes.get(k + 1).copied(),
                rank: k as f64 * RANK_STEP,
                next_rank: nodes.get(k + 1).map(|_| (k + 1) as f64 * RANK_STEP),
            };
            self.rows.insert((piece, n), row);
        }
    }

    /// All `(piece, u, v)` with `next(piece, u) = v`.
    pub fn activations(&self) -> impl Iterator<Item = (PieceId, NodeId, NodeId)> + '_ {
        self.rows
            .iter()
            .filter_map(|(&(p, u), r)| r.next.map(|v| (p, u, v)))
    }

    /// Follows forward pointers from `from` until they stop or repeat.
    pub fn walk(&self, piece: PieceId, from: NodeId) -> Walk {
        let mut nodes = vec![from];
        let mut seen = BTreeSet::from([from]);
        let mut cur = from;
        while let Some(next) = self.next(piece, cur) {
            if !seen.insert(next) {
                return Walk {
                    nodes,
                    end: WalkEnd::Loop(next),
                };
            }
            nodes.push(next);
            cur = next;
        }
        Walk {
            nodes,
            end: WalkEnd::Stopped,
        }
    }

    /// Mutable access restricted to the rows of a single node.
    pub fn node_rows(&mut self, node: NodeId) -> NodeRows<'_> {
        NodeRows { table: self, node }
    }
}

/// The slice of the path table a node is allowed to touch: its own rows.
pub struct NodeRows<'a> {
    table: &'a mut PathTable,
    node: NodeId,
}

impl NodeRows<'_> {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn get(&self, piece: PieceId) -> Option<PathRow> {
        self.table.row(piece, self.node).copied()
    }

    pub fn set(&mut self, piece: PieceId, row: PathRow) {
        self.table.set_row(piece, self.node, row);
    }

    pub fn update(&mut self, piece: PieceId, f: impl FnOnce(&mut PathRow)) -> bool {
        match self.table.row_mut(piece, self.node) {
            Some(row) => {
                f(row);
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, piece: PieceId) -> Option<PathRow> {
        self.table.remove_row(piece, self.node)
    }

    pub fn all(&self) -> Vec<(PieceId, PathRow)> {
        self.table.rows_of_node(self.node)
    }
}

/// Sum of per-hop latencies over an explicit hop list.
pub fn hops_latency(net: &NetworkState, nodes: &[NodeId]) -> Result<f64, PathError> {
    nodes.windows(2).try_fold(0.0, |acc, w| {
        net.link(w[0], w[1])
            .map(|l| acc + l.latency_ms)
            .ok_or(PathError::MissingLink {
                from: w[0],
                to: w[1],
            })
    })
}

/// Latency of the pointer-connected segment `from -> ... -> to` of `piece`.
pub fn path_latency(
    net: &NetworkState,
    table: &PathTable,
    piece: PieceId,
    from: NodeId,
    to: NodeId,
) -> Result<f64, PathError> {
    let mut total = 0.0;
    let mut cur = from;
    let mut seen = BTreeSet::from([from]);
    while cur != to {
        let next = table
            .next(piece, cur)
            .ok_or(PathError::Broken { piece, at: cur })?;
        if !seen.insert(next) {
            return Err(PathError::Loop { piece, node: next });
        }
        let link = net.link(cur, next).ok_or(PathError::MissingLink {
            from: cur,
            to: next,
        })?;
        total += link.latency_ms;
        cur = next;
    }
    Ok(total)
}

/// Round-trip access latency of the consumer: the request travels the
/// consumer segment in reverse, the response travels it forward.
pub fn access_latency(
    net: &NetworkState,
    table: &PathTable,
    piece: &DataPiece,
) -> Result<f64, PathError> {
    let response = path_latency(net, table, piece.id, piece.proxy, piece.consumer)?;
    let mut request = 0.0;
    let mut cur = piece.proxy;
    while cur != piece.consumer {
        let next = table.next(piece.id, cur).expect("walked above");
        request += net
            .link(next, cur)
            .ok_or(PathError::MissingLink {
                from: next,
                to: cur,
            })?
            .latency_ms;
        cur = next;
    }
    Ok(request + response)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathViolation {
    /// Following forward pointers revisits `node`.
    Loop { piece: PieceId, node: NodeId },
    /// `next(from) = to` but `previous(to) != from`.
    PointerAsymmetry {
        piece: PieceId,
        from: NodeId,
        to: NodeId,
    },
    /// The walk from the source stops at `at` before reaching the consumer.
    Broken { piece: PieceId, at: NodeId },
    /// The consumer is reached without passing through the assigned proxy.
    MissingProxy { piece: PieceId },
    /// A traversed link is absent or not activated for the piece.
    InactiveLink {
        piece: PieceId,
        from: NodeId,
        to: NodeId,
    },
}

impl PathViolation {
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            PathViolation::Loop { .. } | PathViolation::PointerAsymmetry { .. }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub violations: Vec<PathViolation>,
    /// Pieces whose walk reaches the consumer through the proxy.
    pub intact: Vec<PieceId>,
}

impl PathReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn structural(&self) -> impl Iterator<Item = &PathViolation> {
        self.violations.iter().filter(|v| v.is_structural())
    }
}

/// Checks every piece's path: simplicity, pointer symmetry along the walk,
/// source -> proxy -> consumer endpoints, and link activation.
pub fn validate_paths(net: &NetworkState, table: &PathTable, pieces: &[DataPiece]) -> PathReport {
    let mut report = PathReport::default();
    for piece in pieces {
        let id = piece.id;
        if table.row(id, piece.source).is_none() {
            report.violations.push(PathViolation::Broken {
                piece: id,
                at: piece.source,
            });
            continue;
        }
        let walk = table.walk(id, piece.source);
        let mut ok = true;
        if let WalkEnd::Loop(node) = walk.end {
            report.violations.push(PathViolation::Loop { piece: id, node });
            ok = false;
        }
        let mut gap = false;
        for w in walk.nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            if table.row(id, b).is_none() {
                report.violations.push(PathViolation::Broken { piece: id, at: a });
                ok = false;
                gap = true;
                break;
            }
            if table.previous(id, b) != Some(a) {
                report.violations.push(PathViolation::PointerAsymmetry {
                    piece: id,
                    from: a,
                    to: b,
                });
                ok = false;
            }
            let active = net
                .link(a, b)
                .is_some_and(|l| l.active_pieces.contains(&id));
            if !active {
                report.violations.push(PathViolation::InactiveLink {
                    piece: id,
                    from: a,
                    to: b,
                });
                ok = false;
            }
        }
        if walk.end == WalkEnd::Stopped && !gap {
            let last = *walk.nodes.last().expect("walk starts at the source");
            if last != piece.consumer {
                report
                    .violations
                    .push(PathViolation::Broken { piece: id, at: last });
                ok = false;
            } else if !walk.nodes[..walk.nodes.len() - 1].contains(&piece.proxy) {
                report
                    .violations
                    .push(PathViolation::MissingProxy { piece: id });
                ok = false;
            }
        }
        if ok {
            report.intact.push(id);
        }
    }
    report
}
