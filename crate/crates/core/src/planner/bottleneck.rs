//! Latency-bounded widest-path search where the "width" of a path is the
//! smallest projected lifetime among its transmitting nodes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{NetView, ProjectedRates};
use crate::lifetime::{node_lifetime, LifetimeParams};
use crate::netmodel::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct FoundPath {
    pub nodes: Vec<NodeId>,
    pub latency_ms: f64,
    /// Minimum projected lifetime over every node but the last, cycles.
    pub bottleneck: f64,
}

impl FoundPath {
    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Ranking used for every tie-break: wider first, then fewer hops, then
    /// the lexicographically smallest node sequence.
    pub fn better_than(&self, other: &FoundPath) -> bool {
        if self.bottleneck != other.bottleneck {
            return self.bottleneck > other.bottleneck;
        }
        if self.hops() != other.hops() {
            return self.hops() < other.hops();
        }
        self.nodes < other.nodes
    }
}

/// Lifetime of `u` if `rate` more pieces per cycle were sent over `(u, next)`.
pub fn transmitter_lifetime(
    view: &NetView,
    projected: &ProjectedRates,
    u: NodeId,
    next: NodeId,
    rate: f64,
    params: &LifetimeParams,
) -> f64 {
    let node = &view.nodes[&u];
    let current = projected.of(u);
    let loads = node.links.iter().map(|l| {
        let mut a = current.map_or(0.0, |r| r.get(l.to));
        if l.to == next {
            a += rate;
        }
        (l.eps, a)
    });
    node_lifetime(node.energy, loads, params)
}

#[derive(Debug, Clone)]
struct Label {
    latency: f64,
    bottleneck: f64,
    path: Vec<NodeId>,
}

impl Label {
    fn hops(&self) -> usize {
        self.path.len() - 1
    }

    /// `self` makes `other` redundant: every extension of `other` is also an
    /// extension of `self` (its nodes are a subset) and ranks no better.
    fn dominates(&self, other: &Label) -> bool {
        self.latency <= other.latency
            && self.bottleneck >= other.bottleneck
            && (self.hops() < other.hops() || (self.hops() == other.hops() && self.path <= other.path))
            && self.path.iter().all(|n| other.path.contains(n))
    }
}

/// Among simple paths `from -> to` avoiding `excluded` whose latency is at
/// most `budget_ms`, returns the best one by [`FoundPath::better_than`].
///
/// Label-correcting search: each node keeps the labels not dominated in
/// (latency, bottleneck, hops, node sequence, node set).
pub fn bottleneck_path(
    view: &NetView,
    from: NodeId,
    to: NodeId,
    budget_ms: f64,
    projected: &ProjectedRates,
    rate: f64,
    excluded: &BTreeSet<NodeId>,
    params: &LifetimeParams,
) -> Option<FoundPath> {
    if from == to || !view.nodes.contains_key(&from) || !view.nodes.contains_key(&to) {
        return None;
    }
    let mut labels: BTreeMap<NodeId, Vec<Label>> = BTreeMap::new();
    let mut queue: VecDeque<(NodeId, Label)> = VecDeque::new();
    let start = Label {
        latency: 0.0,
        bottleneck: f64::INFINITY,
        path: vec![from],
    };
    labels.insert(from, vec![start.clone()]);
    queue.push_back((from, start));

    while let Some((v, label)) = queue.pop_front() {
        let still_there = labels
            .get(&v)
            .is_some_and(|ls| ls.iter().any(|l| l.path == label.path));
        if !still_there || v == to {
            continue;
        }
        for link in &view.nodes[&v].links {
            let w = link.to;
            if excluded.contains(&w) || label.path.contains(&w) || !view.nodes.contains_key(&w) {
                continue;
            }
            let latency = label.latency + link.latency_ms;
            if latency > budget_ms {
                continue;
            }
            let t = transmitter_lifetime(view, projected, v, w, rate, params);
            let mut path = label.path.clone();
            path.push(w);
            let cand = Label {
                latency,
                bottleneck: label.bottleneck.min(t),
                path,
            };
            let set = labels.entry(w).or_default();
            if set.iter().any(|l| l.dominates(&cand)) {
                continue;
            }
            set.retain(|l| !cand.dominates(l));
            set.push(cand.clone());
            queue.push_back((w, cand));
        }
    }

    labels
        .remove(&to)?
        .into_iter()
        .map(|l| FoundPath {
            nodes: l.path,
            latency_ms: l.latency,
            bottleneck: l.bottleneck,
        })
        .reduce(|best, c| if c.better_than(&best) { c } else { best })
}
