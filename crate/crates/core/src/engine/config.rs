use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::lifetime::LifetimeParams;
use crate::netmodel::{GridConfig, LinkParams, NodeId};
use crate::protocol::ProtocolParams;

pub const JOULES_PER_WH: f64 = 3600.0;
/// Cycles in 2000 hours at one cycle per second.
pub const FULL_HORIZON_CYCLES: u64 = 7_200_000;
/// 830 mAh at 3.7 V.
pub const BATTERY_CAP_WH: f64 = 0.830 * 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Static central plan, never reconfigured.
    #[serde(rename = "pdd")]
    Pdd,
    /// Central plan recomputed from scratch on every trigger.
    #[serde(rename = "pdd-cr")]
    PddCr,
    /// Central plan repaired locally by the nodes.
    #[serde(rename = "distr")]
    Distr,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Pdd, Strategy::PddCr, Strategy::Distr];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pdd => "pdd",
            Strategy::PddCr => "pdd-cr",
            Strategy::Distr => "distr",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pdd" => Ok(Strategy::Pdd),
            "pdd-cr" | "pddcr" => Ok(Strategy::PddCr),
            "distr" | "distrdatafwd" | "ddf" => Ok(Strategy::Distr),
            other => Err(format!("unknown strategy `{other}` (expected pdd, pdd-cr or distr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub range_m: f64,
    pub proxies: Vec<u32>,
    pub latency_min_ms: f64,
    pub latency_max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    /// Share of non-proxy nodes that consume one piece each.
    pub consumer_fraction: f64,
    pub rate_min: u32,
    pub rate_max: u32,
    pub size_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub l_max_ms: f64,
    pub gamma: f64,
    pub ttl: u32,
    pub tau_s: f64,
    pub horizon_cycles: u64,
    /// Cycles a route target collects requests before answering.
    pub route_wait_cycles: u64,
    /// Failed route discoveries a node retries, with doubling backoff.
    pub route_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceConfig {
    /// Probability that a disturbance starts in a given cycle.
    pub event_prob: f64,
    /// Factor applied to the cost of every disturbed link.
    pub multiplier: f64,
    /// Directed links hit by one disturbance.
    pub affected_edges: usize,
    /// A disturbance lasts a uniform number of cycles in this range.
    pub duration_min: u64,
    pub duration_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub node_wh_min: f64,
    pub node_wh_max: f64,
    pub proxy_wh: f64,
    pub eps_j: f64,
    pub eps_cc_j: f64,
    pub e_cfg_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedDeath {
    pub cycle: u64,
    /// Node to kill; the busiest relay at that cycle when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub seed: u64,
    /// Probability that a consumer requests its piece in a given cycle.
    pub request_prob: f64,
    #[serde(default)]
    pub forced_deaths: Vec<ForcedDeath>,
    /// Run 2000 hours with unscaled batteries instead of the desk horizon.
    #[serde(default)]
    pub full_horizon: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologyConfig,
    pub pieces: PieceConfig,
    pub timing: TimingConfig,
    pub interference: InterferenceConfig,
    pub energy: EnergyConfig,
    pub run: RunConfig,
}

impl Default for ScenarioConfig {
    /// 18-node grid, 4 proxies, parameters of the reference setup.
    fn default() -> Self {
        Self {
            topology: TopologyConfig {
                rows: 3,
                cols: 6,
                spacing_m: 2.0,
                range_m: 3.0,
                proxies: vec![2, 6, 11, 15],
                latency_min_ms: 8.0,
                latency_max_ms: 12.0,
            },
            pieces: PieceConfig {
                consumer_fraction: 0.25,
                rate_min: 1,
                rate_max: 8,
                size_bytes: 64,
            },
            timing: TimingConfig {
                l_max_ms: 100.0,
                gamma: 0.5,
                ttl: 2,
                tau_s: 1.0,
                horizon_cycles: 20_000,
                route_wait_cycles: 1,
                route_retries: 5,
            },
            interference: InterferenceConfig {
                event_prob: 0.01,
                multiplier: 2.5,
                affected_edges: 1,
                duration_min: 20,
                duration_max: 50,
            },
            energy: EnergyConfig {
                node_wh_min: 0.0,
                node_wh_max: 1.0,
                proxy_wh: 3.0,
                eps_j: 50e-6,
                eps_cc_j: 5e-3,
                e_cfg_j: 5e-3,
            },
            run: RunConfig {
                strategy: Strategy::Distr,
                seed: 1,
                request_prob: 0.1,
                forced_deaths: Vec::new(),
                full_horizon: false,
            },
        }
    }
}

/// One problem found while checking a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ScenarioConfig {
    pub fn horizon(&self) -> u64 {
        if self.run.full_horizon {
            FULL_HORIZON_CYCLES
        } else {
            self.timing.horizon_cycles
        }
    }

    /// Batteries shrink with the horizon so that a desk-scale run drains them
    /// as far as the full-length run would.
    pub fn energy_scale(&self) -> f64 {
        self.horizon() as f64 / FULL_HORIZON_CYCLES as f64
    }

    pub fn lifetime_params(&self) -> LifetimeParams {
        LifetimeParams {
            e_cfg: self.energy.e_cfg_j,
            tau_s: self.timing.tau_s,
            gamma: self.timing.gamma,
        }
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            ttl: self.timing.ttl,
            route_wait: self.timing.route_wait_cycles,
            retries: self.timing.route_retries,
            lifetime: self.lifetime_params(),
        }
    }

    pub fn grid_config(&self) -> GridConfig {
        let to_j = |wh: f64| wh.min(BATTERY_CAP_WH) * JOULES_PER_WH * self.energy_scale();
        GridConfig {
            rows: self.topology.rows,
            cols: self.topology.cols,
            spacing_m: self.topology.spacing_m,
            range_m: self.topology.range_m,
            proxies: self.topology.proxies.iter().map(|&p| NodeId(p)).collect(),
            link: LinkParams {
                latency_min_ms: self.topology.latency_min_ms,
                latency_max_ms: self.topology.latency_max_ms,
                eps_j: self.energy.eps_j,
                eps_cc_j: self.energy.eps_cc_j,
            },
            node_energy_j: (to_j(self.energy.node_wh_min), to_j(self.energy.node_wh_max)),
            proxy_energy_j: to_j(self.energy.proxy_wh),
        }
    }

    /// Range and consistency checks that need no topology.
    pub fn check(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let mut bad = |field: &str, ok: bool, message: String| {
            if !ok {
                out.push(Finding {
                    field: field.to_string(),
                    message,
                });
            }
        };
        let t = &self.topology;
        let n = t.rows * t.cols;
        bad("topology.rows", n >= 2, format!("grid {}x{} has fewer than two nodes", t.rows, t.cols));
        bad("topology.spacing_m", t.spacing_m > 0.0, format!("must be positive, got {}", t.spacing_m));
        bad(
            "topology.range_m",
            t.range_m >= t.spacing_m,
            format!("range {} m below spacing {} m leaves the grid disconnected", t.range_m, t.spacing_m),
        );
        bad("topology.proxies", !t.proxies.is_empty(), "at least one proxy is required".into());
        for &p in &t.proxies {
            bad("topology.proxies", (p as usize) < n, format!("proxy {p} outside the {n}-node grid"));
        }
        let mut sorted = t.proxies.clone();
        sorted.sort_unstable();
        sorted.dedup();
        bad("topology.proxies", sorted.len() == t.proxies.len(), "duplicate proxy id".into());
        bad(
            "topology.latency_min_ms",
            t.latency_min_ms > 0.0 && t.latency_max_ms >= t.latency_min_ms,
            format!("latency interval [{}, {}] ms is invalid", t.latency_min_ms, t.latency_max_ms),
        );

        let p = &self.pieces;
        bad(
            "pieces.consumer_fraction",
            p.consumer_fraction > 0.0 && p.consumer_fraction <= 1.0,
            format!("must lie in (0, 1], got {}", p.consumer_fraction),
        );
        bad(
            "pieces.rate_min",
            p.rate_min >= 1 && p.rate_max >= p.rate_min,
            format!("rate range [{}, {}] is invalid", p.rate_min, p.rate_max),
        );
        bad(
            "pieces.consumer_fraction",
            n > t.proxies.len() + 1,
            "need at least two non-proxy nodes for a source and a consumer".into(),
        );

        let tm = &self.timing;
        bad("timing.l_max_ms", tm.l_max_ms > 0.0, format!("must be positive, got {}", tm.l_max_ms));
        bad(
            "timing.gamma",
            tm.gamma > 0.0 && tm.gamma < 1.0,
            format!("must lie in (0, 1), got {}", tm.gamma),
        );
        bad("timing.tau_s", tm.tau_s > 0.0, format!("must be positive, got {}", tm.tau_s));
        bad("timing.horizon_cycles", tm.horizon_cycles >= 1, "must be at least 1".into());
        bad("timing.route_wait_cycles", tm.route_wait_cycles >= 1, "must be at least 1".into());
        bad("timing.route_retries", tm.route_retries <= 16, format!("at most 16, got {}", tm.route_retries));

        let i = &self.interference;
        bad(
            "interference.event_prob",
            (0.0..=1.0).contains(&i.event_prob),
            format!("must lie in [0, 1], got {}", i.event_prob),
        );
        bad(
            "interference.multiplier",
            i.multiplier >= 1.0,
            format!("must be at least 1, got {}", i.multiplier),
        );
        bad(
            "interference.duration_min",
            i.duration_min >= 1 && i.duration_max >= i.duration_min,
            format!("duration range [{}, {}] is invalid", i.duration_min, i.duration_max),
        );

        let e = &self.energy;
        bad(
            "energy.node_wh_min",
            e.node_wh_min >= 0.0 && e.node_wh_max >= e.node_wh_min,
            format!("battery range [{}, {}] Wh is invalid", e.node_wh_min, e.node_wh_max),
        );
        bad(
            "energy.proxy_wh",
            e.proxy_wh > e.node_wh_max,
            format!("proxies need more energy than ordinary nodes ({} <= {})", e.proxy_wh, e.node_wh_max),
        );
        bad("energy.eps_j", e.eps_j > 0.0, format!("must be positive, got {}", e.eps_j));
        bad(
            "energy.eps_cc_j",
            e.eps_cc_j > e.eps_j,
            format!("controller cost {} must exceed the local cost {}", e.eps_cc_j, e.eps_j),
        );
        bad("energy.e_cfg_j", e.e_cfg_j >= 0.0, format!("must be non-negative, got {}", e.e_cfg_j));

        let r = &self.run;
        bad(
            "run.request_prob",
            (0.0..=1.0).contains(&r.request_prob),
            format!("must lie in [0, 1], got {}", r.request_prob),
        );
        for d in &r.forced_deaths {
            if let Some(node) = d.node {
                bad("run.forced_deaths", (node as usize) < n, format!("node {node} outside the grid"));
            }
            bad("run.forced_deaths", d.cycle >= 1, "deaths start at cycle 1".into());
        }
        out
    }
}
