use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkState, NodeId, TopologyError};
use crate::rng::{self, SimRng};

/// Per-link scalar distributions used at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// One-hop latency is drawn uniformly from `[latency_min_ms, latency_max_ms]`.
    pub latency_min_ms: f64,
    pub latency_max_ms: f64,
    /// Energy per transmitted piece on a local link.
    pub eps_j: f64,
    /// Energy per message to the controller.
    pub eps_cc_j: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            latency_min_ms: 8.0,
            latency_max_ms: 12.0,
            eps_j: 50e-6,
            eps_cc_j: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub range_m: f64,
    pub proxies: Vec<NodeId>,
    pub link: LinkParams,
    /// Ordinary nodes draw their battery uniformly from this interval, joules.
    pub node_energy_j: (f64, f64),
    pub proxy_energy_j: f64,
}

/// Places `rows * cols` nodes on a square lattice (id = row * cols + col) and
/// links every pair within `range_m`. Latencies are sampled once per node
/// pair, so both directions of a link share the same latency and cost.
pub fn build_grid_topology(cfg: &GridConfig, seed: u64) -> Result<NetworkState, TopologyError> {
    if cfg.rows * cfg.cols < 2 {
        return Err(TopologyError::Degenerate {
            rows: cfg.rows,
            cols: cfg.cols,
        });
    }
    let l = &cfg.link;
    if !(l.latency_min_ms > 0.0 && l.latency_max_ms >= l.latency_min_ms) {
        return Err(TopologyError::InvalidLinkParams(format!(
            "latency interval [{}, {}] ms",
            l.latency_min_ms, l.latency_max_ms
        )));
    }
    if !(l.eps_j > 0.0 && l.eps_cc_j > 0.0) {
        return Err(TopologyError::InvalidLinkParams(
            "energy costs must be positive".into(),
        ));
    }
    let n = cfg.rows * cfg.cols;
    for &p in &cfg.proxies {
        if p.index() >= n {
            return Err(TopologyError::UnknownProxy(p));
        }
    }

    let mut rng = rng::stream(seed, rng::STREAM_TOPOLOGY);
    let mut net = NetworkState::new(l.eps_cc_j);
    for id in 0..n {
        let (row, col) = (id / cfg.cols, id % cfg.cols);
        let is_proxy = cfg.proxies.contains(&NodeId(id as u32));
        let energy = if is_proxy {
            cfg.proxy_energy_j
        } else {
            uniform(&mut rng, cfg.node_energy_j.0, cfg.node_energy_j.1)
        };
        net.add_node(
            col as f64 * cfg.spacing_m,
            row as f64 * cfg.spacing_m,
            energy,
            is_proxy,
        );
    }

    for a in 0..n {
        for b in (a + 1)..n {
            let (u, v) = (NodeId(a as u32), NodeId(b as u32));
            let (nu, nv) = (net.node(u), net.node(v));
            let dist = (nu.x_m - nv.x_m).hypot(nu.y_m - nv.y_m);
            if dist <= cfg.range_m {
                let latency = uniform(&mut rng, l.latency_min_ms, l.latency_max_ms);
                net.add_link_pair(u, v, l.eps_j, latency);
            }
        }
    }

    net.check_connected()?;
    Ok(net)
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
