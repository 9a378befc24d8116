use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use super::config::Strategy;
use crate::netmodel::NodeId;
use crate::protocol::StepStats;

/// Why generated pieces failed to reach their consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCause {
    /// A node on the path had no forward pointer.
    Broken,
    /// The next hop was dead or out of energy.
    NodeDead,
    /// The sender could not pay for the transmission.
    Depleted,
    /// The piece had no planned path.
    Unplanned,
    /// Forward pointers revisited a node.
    Loop,
}

/// One CSV line. Energies and piece counts are cumulative; latency is the
/// largest round trip sampled in this cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub cycle: u64,
    #[serde(rename = "energy_data_J")]
    pub energy_data_j: f64,
    #[serde(rename = "energy_cfg_J")]
    pub energy_cfg_j: f64,
    pub generated: u64,
    pub delivered: u64,
    pub lost: u64,
    pub max_latency_ms: Option<f64>,
    pub reconfigs: u64,
    pub alive_nodes: usize,
}

impl CycleRow {
    /// Pieces generated but neither delivered nor lost. Forwarding completes
    /// within the generating cycle, so this is always zero at row time.
    pub fn in_transit(&self) -> i64 {
        self.generated as i64 - self.delivered as i64 - self.lost as i64
    }

    pub fn energy_total_j(&self) -> f64 {
        self.energy_data_j + self.energy_cfg_j
    }
}

pub const CSV_HEADER: &str =
    "cycle,energy_data_J,energy_cfg_J,generated,delivered,lost,max_latency_ms,reconfigs,alive_nodes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Death {
    pub node: NodeId,
    pub cycle: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub requests: u64,
    /// Requests whose consumer segment was broken.
    pub misses: u64,
    /// Answered requests whose round trip exceeded the budget.
    pub violations: u64,
    pub max_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: Strategy,
    pub seed: u64,
    pub cycles: u64,
    pub nodes: usize,
    pub pieces: usize,
    pub planned_initial: usize,
    pub energy_data_j: f64,
    pub energy_cfg_j: f64,
    pub energy_total_j: f64,
    /// Charge removed by forced deaths; not spent on any transmission.
    pub energy_forced_drain_j: f64,
    pub generated: u64,
    pub delivered: u64,
    pub lost: u64,
    pub loss_causes: BTreeMap<LossCause, u64>,
    pub latency: LatencyStats,
    pub reconfigs: u64,
    /// Controller recomputations, including the initial plan.
    pub central_plans: u64,
    /// Cycles at which a new epoch began.
    pub epochs: Vec<u64>,
    pub deaths: Vec<Death>,
    pub forced_deaths: Vec<Death>,
    /// Shortest active-node lifetime under the initial plan; absent when no
    /// node transmits.
    pub j_max_initial: Option<f64>,
    pub interference_events: u64,
    /// Cycles in which an active link crossed the trigger threshold.
    pub active_triggers: u64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub protocol: Option<StepStats>,
    /// Initial minus final battery charge, minus all accounted spending.
    pub energy_audit_error_j: f64,
}

impl Summary {
    pub fn first_epoch_cycles(&self) -> u64 {
        match self.epochs.get(1) {
            Some(&c) => c - self.epochs[0],
            None => self.cycles + 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rows: Vec<CycleRow>,
    pub summary: Summary,
}

impl Metrics {
    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn last(&self) -> &CycleRow {
        self.rows.last().expect("cycle 0 is always recorded")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cycle: u64, lat: Option<f64>) -> CycleRow {
        CycleRow {
            cycle,
            energy_data_j: 0.5,
            energy_cfg_j: 0.09,
            generated: 7,
            delivered: 5,
            lost: 2,
            max_latency_ms: lat,
            reconfigs: 1,
            alive_nodes: 18,
        }
    }

    #[test]
    fn csv_header_and_empty_latency() {
        let m = Metrics {
            rows: vec![row(0, None), row(1, Some(41.25))],
            summary: serde_json::from_str(&sample_summary()).unwrap(),
        };
        let text = m.csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,0.5,0.09,7,5,2,,1,18");
        assert_eq!(lines[2], "1,0.5,0.09,7,5,2,41.25,1,18");
        assert_eq!(m.last().in_transit(), 0);
    }

    fn sample_summary() -> String {
        r#"{"strategy":"pdd","seed":1,"cycles":1,"nodes":18,"pieces":4,"planned_initial":4,
            "energy_data_j":0.5,"energy_cfg_j":0.09,"energy_total_j":0.59,"energy_forced_drain_j":0.0,"generated":7,
            "delivered":5,"lost":2,"loss_causes":{"node_dead":2},
            "latency":{"requests":1,"misses":0,"violations":0,"max_ms":41.25},
            "reconfigs":1,"central_plans":1,"epochs":[0],"deaths":[],"forced_deaths":[],
            "j_max_initial":null,"interference_events":0,"active_triggers":0,
            "messages_sent":0,"messages_dropped":0,"protocol":null,"energy_audit_error_j":0.0}"#
            .to_string()
    }

    #[test]
    fn summary_json_round_trips() {
        let s: Summary = serde_json::from_str(&sample_summary()).unwrap();
        assert_eq!(s.loss_causes[&LossCause::NodeDead], 2);
        let back: Summary = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.first_epoch_cycles(), 2);
    }
}
