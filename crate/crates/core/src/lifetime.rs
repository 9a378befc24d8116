//! Epoch and lifetime arithmetic.
//!
//! Lifetimes are measured in cycles. A node's lifetime under a fixed
//! forwarding assignment is its battery divided by its per-cycle spend,
//! except for nearly depleted nodes, which survive one configuration cycle at
//! most, and empty nodes, which survive none.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netmodel::{DataPiece, NetworkState, NodeId, PathTable, PieceId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeParams {
    /// Energy a node needs to complete a configuration phase, joules.
    pub e_cfg: f64,
    /// Cycle length, seconds.
    pub tau_s: f64,
    /// Relative cost increase above which a link is considered disturbed.
    pub gamma: f64,
}

impl Default for LifetimeParams {
    fn default() -> Self {
        Self {
            e_cfg: 5e-3,
            tau_s: 1.0,
            gamma: 0.5,
        }
    }
}

/// Aggregate outgoing rate of one node, pieces per cycle, keyed by neighbor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateVector(pub BTreeMap<NodeId, f64>);

impl RateVector {
    pub fn add(&mut self, to: NodeId, rate: f64) {
        *self.0.entry(to).or_insert(0.0) += rate;
    }

    pub fn get(&self, to: NodeId) -> f64 {
        self.0.get(&to).copied().unwrap_or(0.0)
    }

    pub fn is_idle(&self) -> bool {
        self.0.values().all(|&a| a == 0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.0.iter().map(|(&v, &a)| (v, a))
    }
}

/// Lifetime in cycles of a node holding `energy` joules whose outgoing links
/// carry `(eps, rate)` loads.
///
/// Returns `f64::INFINITY` for a healthy node that transmits nothing.
pub fn node_lifetime<I>(energy: f64, loads: I, params: &LifetimeParams) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    if energy <= 0.0 {
        return 0.0;
    }
    if energy <= params.e_cfg {
        return 1.0;
    }
    let spend: f64 = loads.into_iter().map(|(eps, a)| eps * a).sum();
    if spend > 0.0 {
        energy / spend
    } else {
        f64::INFINITY
    }
}

/// Per-node aggregate rates `a_uv = sum_i r_i x_uv^i`, with `x` read from the
/// forwarding pointers of `table`.
pub fn aggregate_rates(table: &PathTable, pieces: &[DataPiece]) -> BTreeMap<NodeId, RateVector> {
    let rate_of: BTreeMap<PieceId, f64> = pieces.iter().map(|p| (p.id, p.rate as f64)).collect();
    let mut out: BTreeMap<NodeId, RateVector> = BTreeMap::new();
    for (piece, u, v) in table.activations() {
        if let Some(&r) = rate_of.get(&piece) {
            out.entry(u).or_default().add(v, r);
        }
    }
    out
}

/// Lifetime of `u` under its current link costs and the given rates.
pub fn lifetime_under(
    net: &NetworkState,
    u: NodeId,
    rates: &RateVector,
    params: &LifetimeParams,
) -> f64 {
    let loads = rates.iter().map(|(v, a)| {
        let eps = net.link(u, v).map_or(0.0, |l| l.eps);
        (eps, a)
    });
    node_lifetime(net.node(u).energy, loads, params)
}

/// Shortest lifetime among alive nodes with at least one active outgoing
/// link; infinity when no such node exists.
pub fn max_epoch_duration(
    net: &NetworkState,
    table: &PathTable,
    pieces: &[DataPiece],
    params: &LifetimeParams,
) -> f64 {
    aggregate_rates(table, pieces)
        .iter()
        .filter(|(u, rates)| net.is_alive(**u) && rates.0.values().any(|&a| a > 0.0))
        .map(|(&u, rates)| lifetime_under(net, u, rates, params))
        .fold(f64::INFINITY, f64::min)
}

/// True when the cost increase relative to the current cost exceeds `gamma`.
pub fn trigger_check(eps_now: f64, eps_prev: f64, gamma: f64) -> bool {
    debug_assert!(eps_now > 0.0);
    (eps_now - eps_prev) / eps_now > gamma
}
