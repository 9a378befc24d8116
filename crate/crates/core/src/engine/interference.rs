use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::InterferenceConfig;
use crate::netmodel::{NetworkState, NodeId};
use crate::rng::SimRng;

/// A burst of interference on one directed link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disturbance {
    pub from: NodeId,
    pub to: NodeId,
    /// Cycles the raised cost persists, counting the current one.
    pub cycles: u64,
}

/// Samples this cycle's new disturbances and raises the cost of each hit
/// link to `eps_base * multiplier`.
///
/// The draws depend only on the rng and the link set, never on energies or
/// paths, so every strategy sees the same schedule for a given seed.
pub fn inject_interference(
    net: &mut NetworkState,
    rng: &mut SimRng,
    params: &InterferenceConfig,
) -> Vec<Disturbance> {
    if !rng.random_bool(params.event_prob) {
        return Vec::new();
    }
    let keys = net.link_keys();
    let k = params.affected_edges.min(keys.len());
    let mut picked: Vec<usize> = index::sample(rng, keys.len(), k).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let (from, to) = keys[i];
            let cycles = rng.random_range(params.duration_min..=params.duration_max);
            let link = net.link_mut(from, to).expect("key from link set");
            link.eps = link.eps_base * params.multiplier;
            Disturbance { from, to, cycles }
        })
        .collect()
}

/// Disturbances in progress and their expiry cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Interference {
    params: InterferenceConfig,
    rng: SimRng,
    /// Last cycle at which each disturbed link still carries the raised cost.
    active: BTreeMap<(NodeId, NodeId), u64>,
    events: u64,
}

impl Interference {
    pub fn new(params: InterferenceConfig, rng: SimRng) -> Self {
        Self {
            params,
            rng,
            active: BTreeMap::new(),
            events: 0,
        }
    }

    /// Starts cycle `cycle`: remembers every link's previous cost, restores
    /// links whose disturbance ended and applies new ones.
    pub fn advance(&mut self, cycle: u64, net: &mut NetworkState) -> Vec<Disturbance> {
        for (_, link) in net.links_mut() {
            link.eps_prev = link.eps;
        }
        let expired: Vec<(NodeId, NodeId)> = self
            .active
            .iter()
            .filter(|(_, &last)| last < cycle)
            .map(|(&k, _)| k)
            .collect();
        for (u, v) in expired {
            self.active.remove(&(u, v));
            if let Some(link) = net.link_mut(u, v) {
                link.eps = link.eps_base;
            }
        }
        let hits = inject_interference(net, &mut self.rng, &self.params);
        if !hits.is_empty() {
            self.events += 1;
        }
        for d in &hits {
            let last = cycle + d.cycles - 1;
            let entry = self.active.entry((d.from, d.to)).or_insert(last);
            *entry = (*entry).max(last);
        }
        hits
    }

    /// Number of cycles in which a disturbance started.
    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn active(&self) -> usize {
        self.active.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetime::trigger_check;
    use crate::rng::{stream, STREAM_INTERFERENCE};

    fn line() -> NetworkState {
        let mut net = NetworkState::new(5e-3);
        let a = net.add_node(0.0, 0.0, 1.0, false);
        let b = net.add_node(1.0, 0.0, 1.0, false);
        net.add_link_pair(a, b, 1e-3, 10.0);
        net
    }

    fn params(prob: f64, mult: f64) -> InterferenceConfig {
        InterferenceConfig {
            event_prob: prob,
            multiplier: mult,
            affected_edges: 1,
            duration_min: 3,
            duration_max: 3,
        }
    }

    #[test]
    fn multiplier_above_bound_fires_the_trigger() {
        let mut net = line();
        let mut intf = Interference::new(params(1.0, 2.5), stream(1, STREAM_INTERFERENCE));
        let hits = intf.advance(1, &mut net);
        assert_eq!(hits.len(), 1);
        let l = net.link(hits[0].from, hits[0].to).unwrap();
        assert!((l.eps - 2.5e-3).abs() < 1e-15);
        let ratio = (l.eps - l.eps_prev) / l.eps;
        assert!((ratio - 0.6).abs() < 1e-12);
        assert!(trigger_check(l.eps, l.eps_prev, 0.5));
    }

    #[test]
    fn unit_multiplier_never_fires() {
        let mut net = line();
        let mut intf = Interference::new(params(1.0, 1.0), stream(2, STREAM_INTERFERENCE));
        for c in 1..20 {
            intf.advance(c, &mut net);
            for (_, l) in net.links() {
                assert!(!trigger_check(l.eps, l.eps_prev, 0.5));
            }
        }
    }

    #[test]
    fn disturbance_expires_after_its_duration() {
        let mut net = line();
        let mut intf = Interference::new(params(1.0, 2.5), stream(3, STREAM_INTERFERENCE));
        let hit = intf.advance(1, &mut net)[0];
        intf.params.event_prob = 0.0;
        for c in 2..=3 {
            intf.advance(c, &mut net);
            assert_eq!(net.link(hit.from, hit.to).unwrap().eps, 2.5e-3);
        }
        intf.advance(4, &mut net);
        let l = net.link(hit.from, hit.to).unwrap();
        assert_eq!(l.eps, 1e-3);
        assert_eq!(l.eps_prev, 2.5e-3);
        assert!(!trigger_check(l.eps, l.eps_prev, 0.5));
        assert_eq!(intf.active(), 0);
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let mut net = line();
        let mut intf = Interference::new(params(0.0, 2.5), stream(4, STREAM_INTERFERENCE));
        for c in 1..100 {
            assert!(intf.advance(c, &mut net).is_empty());
        }
        assert_eq!(intf.events(), 0);
        assert!(net.links().all(|(_, l)| l.eps == 1e-3));
    }
}
