//! Cycle-driven simulation of one strategy on one scenario.
//!
//! Every cycle applies forced deaths and interference, forwards the pieces
//! generated at the sources, lets the nodes run the repair protocol (for the
//! distributed strategy), samples consumer requests, fires the central
//! recomputation hook (for the reconfiguring strategy) and appends a metrics
//! row. All randomness comes from per-purpose streams, so two strategies run
//! on the same seed see the same topology, pieces, interference and requests.

mod config;
mod interference;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

pub use config::{
    EnergyConfig, Finding, ForcedDeath, InterferenceConfig, PieceConfig, RunConfig, ScenarioConfig,
    Strategy, TimingConfig, TopologyConfig, BATTERY_CAP_WH, FULL_HORIZON_CYCLES, JOULES_PER_WH,
};
pub use interference::{inject_interference, Disturbance, Interference};
pub use metrics::{CycleRow, Death, LatencyStats, LossCause, Metrics, Summary, CSV_HEADER};

use crate::lifetime::{aggregate_rates, max_epoch_duration, trigger_check, LifetimeParams};
use crate::netmodel::{
    build_grid_topology, hops_latency, DataPiece, NetworkState, NodeId, PathTable, PieceId,
    TopologyError, WalkEnd,
};
use crate::planner::{collect_status, recompute_central, Plan, StatusReport};
use crate::protocol::{Endpoint, Envelope, Message, PieceBook, Protocol, StepStats};
use crate::rng::{self, SimRng};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<Finding>),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn join(findings: &[Finding]) -> String {
    findings.iter().map(Finding::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record one line per message.
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub trace: Vec<String>,
}

/// Draws the consumer set and one piece per consumer: a uniformly chosen
/// non-proxy consumer, a distinct non-proxy source and a uniform rate.
pub fn generate_pieces(cfg: &ScenarioConfig, seed: u64) -> Vec<DataPiece> {
    let mut rng = rng::stream(seed, rng::STREAM_PIECES);
    let n = (cfg.topology.rows * cfg.topology.cols) as u32;
    let candidates: Vec<NodeId> = (0..n)
        .filter(|id| !cfg.topology.proxies.contains(id))
        .map(NodeId)
        .collect();
    if candidates.len() < 2 {
        return Vec::new();
    }
    let k = ((cfg.pieces.consumer_fraction * candidates.len() as f64).round() as usize)
        .clamp(1, candidates.len());
    let mut picks = index::sample(&mut rng, candidates.len(), k).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .enumerate()
        .map(|(i, ci)| {
            let consumer = candidates[ci];
            let mut si = rng.random_range(0..candidates.len() - 1);
            if si >= ci {
                si += 1;
            }
            DataPiece {
                id: PieceId(i as u32),
                source: candidates[si],
                consumer,
                rate: rng.random_range(cfg.pieces.rate_min..=cfg.pieces.rate_max),
                proxy: consumer,
                size_bytes: cfg.pieces.size_bytes,
            }
        })
        .collect()
}

/// Round trip over the live consumer segment of `piece`: the request walks
/// the segment backwards, the response forwards.
pub fn sample_access_latency(
    piece: &DataPiece,
    table: &PathTable,
    net: &NetworkState,
) -> Result<f64, LossCause> {
    let walk = table.walk(piece.id, piece.proxy);
    let Some(end) = walk.nodes.iter().position(|&n| n == piece.consumer) else {
        return Err(match walk.end {
            WalkEnd::Loop(_) => LossCause::Loop,
            WalkEnd::Stopped => LossCause::Broken,
        });
    };
    let segment = &walk.nodes[..=end];
    if table.row(piece.id, piece.proxy).is_none() || segment.iter().any(|&n| !net.is_alive(n)) {
        return Err(LossCause::NodeDead);
    }
    let back: Vec<NodeId> = segment.iter().rev().copied().collect();
    let fwd = hops_latency(net, segment).map_err(|_| LossCause::Broken)?;
    let rev = hops_latency(net, &back).map_err(|_| LossCause::Broken)?;
    Ok(fwd + rev)
}

/// The non-endpoint node carrying the most traffic, lowest id on ties.
/// Falls back to any non-proxy transmitter when every carrier is an endpoint.
pub fn busiest_relay(net: &NetworkState, table: &PathTable, pieces: &[DataPiece]) -> Option<NodeId> {
    let endpoints: BTreeSet<NodeId> = pieces
        .iter()
        .flat_map(|p| [p.source, p.consumer, p.proxy])
        .collect();
    let load: Vec<(NodeId, f64)> = aggregate_rates(table, pieces)
        .into_iter()
        .filter(|(u, _)| net.is_alive(*u) && !net.node(*u).is_proxy)
        .map(|(u, r)| (u, r.iter().map(|(_, a)| a).sum()))
        .collect();
    let pick = |only_relays: bool| {
        load.iter()
            .filter(|(u, _)| !only_relays || !endpoints.contains(u))
            .fold(None, |best: Option<(NodeId, f64)>, &(u, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((u, a)),
            })
            .map(|(u, _)| u)
    };
    pick(true).or_else(|| pick(false))
}

pub struct Simulation {
    cfg: ScenarioConfig,
    params: LifetimeParams,
    net: NetworkState,
    table: PathTable,
    pieces: Vec<DataPiece>,
    planned: BTreeSet<PieceId>,
    protocol: Option<(Protocol, PieceBook)>,
    interference: Interference,
    requests: SimRng,
    forced: Vec<(u64, NodeId)>,
    cycle: u64,
    initial_energy: f64,
    energy_data: f64,
    energy_cfg: f64,
    forced_drain: f64,
    generated: u64,
    delivered: u64,
    lost: u64,
    loss_causes: BTreeMap<LossCause, u64>,
    latency: LatencyStats,
    reconfigs: u64,
    central_plans: u64,
    epochs: Vec<u64>,
    deaths: Vec<Death>,
    forced_deaths: Vec<Death>,
    j_max_initial: Option<f64>,
    planned_initial: usize,
    active_triggers: u64,
    messages_sent: u64,
    messages_dropped: u64,
    stats: StepStats,
    rows: Vec<CycleRow>,
    trace: Option<Vec<String>>,
}

impl Simulation {
    /// Validates the scenario, builds the network and runs cycle 0: every
    /// alive node uploads its status and the controller installs the plan.
    pub fn new(cfg: &ScenarioConfig, opts: RunOptions) -> Result<Self, EngineError> {
        let findings = cfg.check();
        if !findings.is_empty() {
            return Err(EngineError::Invalid(findings));
        }
        let seed = cfg.run.seed;
        let mut net = build_grid_topology(&cfg.grid_config(), seed)?;
        net.check_connected()?;
        let params = cfg.lifetime_params();
        let initial_energy = net.total_energy();

        let mut deaths = Vec::new();
        let ids: Vec<NodeId> = net.node_ids().collect();
        for &u in &ids {
            if net.node(u).energy <= params.e_cfg {
                net.node_mut(u).alive = false;
                deaths.push(Death { node: u, cycle: 0 });
            }
        }

        let mut sim = Self {
            cfg: cfg.clone(),
            params,
            interference: Interference::new(
                cfg.interference.clone(),
                rng::stream(seed, rng::STREAM_INTERFERENCE),
            ),
            requests: rng::stream(seed, rng::STREAM_REQUESTS),
            pieces: generate_pieces(cfg, seed),
            net,
            table: PathTable::new(),
            planned: BTreeSet::new(),
            protocol: None,
            forced: Vec::new(),
            cycle: 0,
            initial_energy,
            energy_data: 0.0,
            energy_cfg: 0.0,
            forced_drain: 0.0,
            generated: 0,
            delivered: 0,
            lost: 0,
            loss_causes: BTreeMap::new(),
            latency: LatencyStats::default(),
            reconfigs: 0,
            central_plans: 0,
            epochs: vec![0],
            deaths,
            forced_deaths: Vec::new(),
            j_max_initial: None,
            planned_initial: 0,
            active_triggers: 0,
            messages_sent: 0,
            messages_dropped: 0,
            stats: StepStats::default(),
            rows: Vec::new(),
            trace: opts.trace.then(Vec::new),
        };
        sim.central_plan();
        let planned = sim.planned_pieces();
        sim.planned_initial = planned.len();
        let j = max_epoch_duration(&sim.net, &sim.table, &planned, &sim.params);
        sim.j_max_initial = j.is_finite().then_some(j);

        if cfg.run.strategy == Strategy::Distr {
            let book = PieceBook::new(&planned, &sim.table);
            let protocol = Protocol::new(sim.net.node_count(), cfg.protocol_params());
            sim.protocol = Some((protocol, book));
        }
        let relay = busiest_relay(&sim.net, &sim.table, &planned);
        let mut forced: Vec<(u64, NodeId)> = cfg
            .run
            .forced_deaths
            .iter()
            .filter_map(|d| d.node.map(NodeId).or(relay).map(|n| (d.cycle, n)))
            .collect();
        forced.sort();
        sim.forced = forced;
        sim.push_row(None);
        Ok(sim)
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn is_done(&self) -> bool {
        self.cycle >= self.cfg.horizon()
    }

    pub fn net(&self) -> &NetworkState {
        &self.net
    }

    pub fn table(&self) -> &PathTable {
        &self.table
    }

    pub fn pieces(&self) -> &[DataPiece] {
        &self.pieces
    }

    /// Pieces with a path from the most recent plan.
    pub fn planned_pieces(&self) -> Vec<DataPiece> {
        self.pieces
            .iter()
            .filter(|p| self.planned.contains(&p.id))
            .cloned()
            .collect()
    }

    pub fn rows(&self) -> &[CycleRow] {
        &self.rows
    }

    /// Forced deaths resolved to concrete nodes.
    pub fn trace_lines(&self) -> &[String] { self.trace.as_deref().unwrap_or(&[]) }

    pub fn forced_schedule(&self) -> &[(u64, NodeId)] {
        &self.forced
    }

    fn operational(&self, u: NodeId) -> bool {
        self.net.is_alive(u) && self.net.node(u).energy > self.params.e_cfg
    }

    fn central_plan(&mut self) {
        let cycle = self.cycle;
        let rc = recompute_central(&mut self.net, &self.pieces, self.cfg.timing.l_max_ms, &self.params);
        self.energy_cfg += rc.charged_j;
        self.central_plans += 1;
        let plan = rc.outcome.plan;
        if self.trace.is_some() {
            let reports = collect_status(&self.net);
            self.trace_central(cycle, reports, &plan);
        }
        for p in &self.pieces {
            self.table.clear_piece(p.id);
        }
        plan.install(&mut self.table);
        plan.assign_proxies(&mut self.pieces);
        self.planned = plan.pieces.keys().copied().collect();
        self.net.sync_activation(&self.table);
    }

    fn trace_central(&mut self, cycle: u64, reports: Vec<StatusReport>, plan: &Plan) {
        let Some(trace) = self.trace.as_mut() else {
            return;
        };
        for r in reports {
            let env = Envelope {
                from: Endpoint::Node(r.node),
                to: Endpoint::Controller,
                msg: Message::Status(r),
            };
            trace.push(env.trace_line(cycle));
        }
        let mut table = PathTable::new();
        plan.install(&mut table);
        let mut per_node: BTreeMap<NodeId, Vec<_>> = BTreeMap::new();
        for (piece, node, row) in table.rows() {
            per_node.entry(node).or_default().push((piece, *row));
        }
        for (node, rows) in per_node {
            let env = Envelope {
                from: Endpoint::Controller,
                to: Endpoint::Node(node),
                msg: Message::Plan(rows),
            };
            trace.push(env.trace_line(cycle));
        }
    }

    fn lose(&mut self, cause: LossCause, n: u64) {
        self.lost += n;
        *self.loss_causes.entry(cause).or_insert(0) += n;
    }

    /// Generates every alive source's pieces and pushes them along the
    /// forward pointers, each sender paying `rate * eps` per hop.
    fn forward(&mut self) {
        for i in 0..self.pieces.len() {
            let piece = &self.pieces[i];
            let (id, source, consumer, proxy) = (piece.id, piece.source, piece.consumer, piece.proxy);
            let r = piece.rate as u64;
            if !self.operational(source) {
                continue;
            }
            self.generated += r;
            if !self.planned.contains(&id) {
                self.lose(LossCause::Unplanned, r);
                continue;
            }
            let mut cur = source;
            let mut seen = BTreeSet::from([source]);
            let mut via_proxy = false;
            let fate = loop {
                via_proxy |= cur == proxy;
                if cur == consumer {
                    break if via_proxy { None } else { Some(LossCause::Broken) };
                }
                let Some(next) = self.table.next(id, cur) else {
                    break Some(LossCause::Broken);
                };
                if !seen.insert(next) {
                    break Some(LossCause::Loop);
                }
                let Some(eps) = self.net.link(cur, next).map(|l| l.eps) else {
                    break Some(LossCause::Broken);
                };
                let (paid, spent) = self.net.charge(cur, r as f64 * eps);
                self.energy_data += spent;
                if !paid {
                    break Some(LossCause::Depleted);
                }
                if !self.operational(next) {
                    break Some(LossCause::NodeDead);
                }
                cur = next;
            };
            match fate {
                None => self.delivered += r,
                Some(cause) => self.lose(cause, r),
            }
        }
    }

    fn sample_requests(&mut self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for i in 0..self.pieces.len() {
            let asked = self.requests.random_bool(self.cfg.run.request_prob);
            let piece = &self.pieces[i];
            if !asked || !self.planned.contains(&piece.id) || !self.net.is_alive(piece.consumer) {
                continue;
            }
            self.latency.requests += 1;
            match sample_access_latency(piece, &self.table, &self.net) {
                Ok(ms) => {
                    if ms > self.cfg.timing.l_max_ms {
                        self.latency.violations += 1;
                    }
                    worst = Some(worst.map_or(ms, |w| w.max(ms)));
                }
                Err(_) => self.latency.misses += 1,
            }
        }
        if let Some(w) = worst {
            self.latency.max_ms = Some(self.latency.max_ms.map_or(w, |m| m.max(w)));
        }
        worst
    }

    /// True when a link carrying pieces crossed the cost threshold this cycle.
    fn active_trigger(&self) -> bool {
        self.net.links().any(|(&(u, _), l)| {
            !l.active_pieces.is_empty()
                && self.net.is_alive(u)
                && trigger_check(l.eps, l.eps_prev, self.params.gamma)
        })
    }

    pub fn step(&mut self) -> &CycleRow {
        self.cycle += 1;
        let t = self.cycle;
        let alive_before: Vec<bool> = self.net.node_ids().map(|u| self.net.is_alive(u)).collect();
        let transmitting: BTreeSet<NodeId> = self
            .net
            .links()
            .filter(|(_, l)| !l.active_pieces.is_empty())
            .map(|(&(u, _), _)| u)
            .collect();

        let due: Vec<NodeId> = self.forced.iter().filter(|(c, _)| *c == t).map(|&(_, n)| n).collect();
        for u in due {
            if !self.net.is_alive(u) {
                continue;
            }
            let e = self.net.node(u).energy;
            let left = e.min(self.params.e_cfg);
            self.forced_drain += e - left;
            self.net.node_mut(u).energy = left;
            self.forced_deaths.push(Death { node: u, cycle: t });
        }

        self.interference.advance(t, &mut self.net);
        let triggered = self.active_trigger();
        if triggered {
            self.active_triggers += 1;
        }

        self.forward();

        let mut repaired = false;
        if let Some((protocol, book)) = self.protocol.as_mut() {
            let o = protocol.step(t, &mut self.net, &mut self.table, book);
            self.energy_cfg += o.energy_j;
            self.messages_sent += o.sent.len() as u64;
            self.messages_dropped += o.dropped;
            self.stats.absorb(&o.stats);
            if let Some(trace) = self.trace.as_mut() {
                trace.extend(o.sent.iter().map(|e| e.trace_line(t)));
            }
            let reconfigs = self.stats.splices + self.stats.routes_started;
            repaired = reconfigs > self.reconfigs;
            self.reconfigs = reconfigs;
        } else {
            let ids: Vec<NodeId> = self.net.node_ids().collect();
            for u in ids {
                if self.net.is_alive(u) && self.net.node(u).energy <= self.params.e_cfg {
                    self.net.node_mut(u).alive = false;
                }
            }
        }

        let mut active_died = false;
        let ids: Vec<NodeId> = self.net.node_ids().collect();
        for u in ids {
            if alive_before[u.index()] && !self.net.is_alive(u) {
                self.deaths.push(Death { node: u, cycle: t });
                active_died |= transmitting.contains(&u);
            }
        }
        let path_node_died = self
            .deaths
            .iter()
            .rev()
            .take_while(|d| d.cycle == t)
            .any(|d| !self.table.rows_of_node(d.node).is_empty());
        self.net.sync_activation(&self.table);

        let worst = self.sample_requests();

        let mut boundary = active_died || repaired;
        if self.cfg.run.strategy == Strategy::PddCr && (triggered || path_node_died) {
            self.central_plan();
            self.reconfigs += 1;
            boundary = true;
        }
        if boundary {
            self.epochs.push(t);
        }
        self.push_row(worst);
        self.rows.last().expect("row just pushed")
    }

    fn push_row(&mut self, max_latency_ms: Option<f64>) {
        self.rows.push(CycleRow {
            cycle: self.cycle,
            energy_data_j: self.energy_data,
            energy_cfg_j: self.energy_cfg,
            generated: self.generated,
            delivered: self.delivered,
            lost: self.lost,
            max_latency_ms,
            reconfigs: self.reconfigs,
            alive_nodes: self.net.alive_count(),
        });
    }

    pub fn summary(&self) -> Summary {
        let spent = self.energy_data + self.energy_cfg + self.forced_drain;
        Summary {
            strategy: self.cfg.run.strategy,
            seed: self.cfg.run.seed,
            cycles: self.cycle,
            nodes: self.net.node_count(),
            pieces: self.pieces.len(),
            planned_initial: self.planned_initial,
            energy_data_j: self.energy_data,
            energy_cfg_j: self.energy_cfg,
            energy_total_j: self.energy_data + self.energy_cfg,
            energy_forced_drain_j: self.forced_drain,
            generated: self.generated,
            delivered: self.delivered,
            lost: self.lost,
            loss_causes: self.loss_causes.clone(),
            latency: self.latency.clone(),
            reconfigs: self.reconfigs,
            central_plans: self.central_plans,
            epochs: self.epochs.clone(),
            deaths: self.deaths.clone(),
            forced_deaths: self.forced_deaths.clone(),
            j_max_initial: self.j_max_initial,
            interference_events: self.interference.events(),
            active_triggers: self.active_triggers,
            messages_sent: self.messages_sent,
            messages_dropped: self.messages_dropped,
            protocol: self.protocol.as_ref().map(|_| self.stats.clone()),
            energy_audit_error_j: self.initial_energy - self.net.total_energy() - spent,
        }
    }

    pub fn run(mut self) -> RunOutput {
        while !self.is_done() {
            self.step();
        }
        let summary = self.summary();
        RunOutput {
            metrics: Metrics {
                rows: self.rows,
                summary,
            },
            trace: self.trace.unwrap_or_default(),
        }
    }
}

/// Runs the scenario to its horizon without a message trace.
pub fn run_simulation(cfg: &ScenarioConfig) -> Result<Metrics, EngineError> {
    Ok(Simulation::new(cfg, RunOptions::default())?.run().metrics)
}

#[cfg(test)]
mod tests;
