use super::*;

fn calm(strategy: Strategy, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.run.strategy = strategy;
    cfg.run.seed = seed;
    cfg.timing.horizon_cycles = 2000;
    cfg.interference.event_prob = 0.0;
    cfg.energy.node_wh_min = 2.0;
    cfg.energy.node_wh_max = 2.0;
    cfg
}

fn short(strategy: Strategy, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.run.strategy = strategy;
    cfg.run.seed = seed;
    cfg.timing.horizon_cycles = 3000;
    cfg.interference.event_prob = 0.05;
    cfg
}

fn line(n: usize, latency_ms: f64) -> NetworkState {
    let mut net = NetworkState::new(5e-3);
    let ids: Vec<NodeId> = (0..n)
        .map(|i| net.add_node(i as f64, 0.0, 1.0, i == 0))
        .collect();
    for w in ids.windows(2) {
        net.add_link_pair(w[0], w[1], 1e-4, latency_ms);
    }
    net
}

fn piece(consumer: u32) -> DataPiece {
    DataPiece {
        id: PieceId(0),
        source: NodeId(0),
        consumer: NodeId(consumer),
        rate: 1,
        proxy: NodeId(0),
        size_bytes: 64,
    }
}

#[test]
fn access_latency_is_the_round_trip_over_the_consumer_segment() {
    let net = line(7, 10.0);
    let mut table = PathTable::new();
    table.install_path(PieceId(0), &[NodeId(0), NodeId(1), NodeId(2)]);
    assert_eq!(sample_access_latency(&piece(2), &table, &net), Ok(40.0));

    let mut table = PathTable::new();
    let far: Vec<NodeId> = (0..7).map(NodeId).collect();
    table.install_path(PieceId(0), &far);
    let rt = sample_access_latency(&piece(6), &table, &net).unwrap();
    assert_eq!(rt, 120.0);
    assert!(rt > ScenarioConfig::default().timing.l_max_ms);
}

#[test]
fn access_latency_fails_on_a_dead_or_cut_segment() {
    let mut net = line(4, 10.0);
    let mut table = PathTable::new();
    table.install_path(PieceId(0), &[NodeId(0), NodeId(1), NodeId(2)]);
    net.node_mut(NodeId(1)).alive = false;
    assert_eq!(sample_access_latency(&piece(2), &table, &net), Err(LossCause::NodeDead));
    table.row_mut(PieceId(0), NodeId(0)).unwrap().next = None;
    assert_eq!(sample_access_latency(&piece(2), &table, &net), Err(LossCause::Broken));
}

#[test]
fn default_pieces_pick_distinct_non_proxy_endpoints() {
    let cfg = ScenarioConfig::default();
    let pieces = generate_pieces(&cfg, 9);
    assert_eq!(pieces.len(), 4);
    for p in &pieces {
        assert_ne!(p.source, p.consumer);
        assert!(!cfg.topology.proxies.contains(&p.source.0));
        assert!(!cfg.topology.proxies.contains(&p.consumer.0));
        assert!((cfg.pieces.rate_min..=cfg.pieces.rate_max).contains(&p.rate));
    }
    assert_eq!(pieces, generate_pieces(&cfg, 9));
}

#[test]
fn calm_network_with_ample_energy_loses_nothing() {
    for s in Strategy::ALL {
        let m = run_simulation(&calm(s, 3)).unwrap();
        let x = &m.summary;
        assert_eq!(x.planned_initial, x.pieces, "{s}");
        assert_eq!(x.lost, 0, "{s}");
        assert_eq!(x.reconfigs, 0, "{s}");
        assert!(x.deaths.is_empty(), "{s}");
        assert_eq!(x.epochs, vec![0], "{s}");
        assert_eq!(x.latency.violations, 0, "{s}");
        assert!(x.generated > 0 && x.delivered == x.generated, "{s}");
    }
}

#[test]
fn strategies_coincide_without_events() {
    let runs: Vec<Metrics> = Strategy::ALL
        .into_iter()
        .map(|s| run_simulation(&calm(s, 5)).unwrap())
        .collect();
    let strip = |m: &Metrics| -> Vec<CycleRow> {
        m.rows
            .iter()
            .map(|r| CycleRow { energy_cfg_j: 0.0, ..r.clone() })
            .collect()
    };
    for m in &runs[1..] {
        assert_eq!(strip(m), strip(&runs[0]));
        assert_eq!(m.summary.energy_cfg_j, runs[0].summary.energy_cfg_j);
    }
}

#[test]
fn pieces_are_conserved_every_cycle() {
    for s in Strategy::ALL {
        let m = run_simulation(&short(s, 2)).unwrap();
        for r in &m.rows {
            assert_eq!(r.in_transit(), 0, "{s} cycle {}", r.cycle);
        }
        let lost: u64 = m.summary.loss_causes.values().sum();
        assert_eq!(lost, m.summary.lost);
        assert_eq!(m.rows.len() as u64, m.summary.cycles + 1);
    }
}

#[test]
fn spending_matches_the_battery_drop() {
    for s in Strategy::ALL {
        let mut cfg = short(s, 4);
        cfg.run.forced_deaths = vec![ForcedDeath { cycle: 500, node: None }];
        let x = run_simulation(&cfg).unwrap().summary;
        assert!(x.energy_audit_error_j.abs() < 1e-8, "{s}: {}", x.energy_audit_error_j);
        assert!((x.energy_total_j - x.energy_data_j - x.energy_cfg_j).abs() < 1e-12);
        assert!(x.energy_forced_drain_j > 0.0);
    }
}

#[test]
fn runs_are_reproducible() {
    for s in Strategy::ALL {
        let a = run_simulation(&short(s, 8)).unwrap();
        let b = run_simulation(&short(s, 8)).unwrap();
        assert_eq!(a.csv_string(), b.csv_string());
        assert_eq!(a.summary.to_json(), b.summary.to_json());
    }
}

#[test]
fn static_plan_loses_what_crosses_the_forced_node() {
    let mut cfg = calm(Strategy::Pdd, 6);
    cfg.run.forced_deaths = vec![ForcedDeath { cycle: 1000, node: None }];
    let sim = Simulation::new(&cfg, RunOptions::default()).unwrap();
    let (_, victim) = sim.forced_schedule()[0];
    let through: u64 = sim
        .pieces()
        .iter()
        .filter(|p| sim.table().row(p.id, victim).is_some())
        .map(|p| p.rate as u64)
        .sum();
    assert!(through > 0);
    let x = sim.run().metrics.summary;
    assert_eq!(x.forced_deaths, vec![Death { node: victim, cycle: 1000 }]);
    assert_eq!(x.lost, through * 1001);
    assert_eq!(x.loss_causes[&LossCause::NodeDead], x.lost);
    assert_eq!(x.reconfigs, 0);
}

#[test]
fn reconfiguring_strategies_recover_from_a_forced_death() {
    for s in [Strategy::PddCr, Strategy::Distr] {
        let mut cfg = calm(s, 6);
        cfg.run.forced_deaths = vec![ForcedDeath { cycle: 1000, node: None }];
        let x = run_simulation(&cfg).unwrap().summary;
        assert!(x.reconfigs >= 1, "{s}");
        assert!(x.lost < 100, "{s}: {}", x.lost);
        assert!(x.epochs.contains(&1000), "{s}: {:?}", x.epochs);
    }
}

#[test]
fn local_repair_costs_less_per_trigger_than_a_central_recompute() {
    let mut per = BTreeMap::new();
    for s in [Strategy::PddCr, Strategy::Distr] {
        let x = run_simulation(&short(s, 1)).unwrap().summary;
        assert!(x.active_triggers > 0);
        let base = x.nodes as f64 * ScenarioConfig::default().energy.eps_cc_j;
        per.insert(s, (x.energy_cfg_j - base) / x.active_triggers as f64);
    }
    assert!(per[&Strategy::Distr] < per[&Strategy::PddCr], "{per:?}");
}

#[test]
fn first_epoch_ends_by_the_initial_bound() {
    for seed in 1..=5 {
        let mut cfg = ScenarioConfig::default();
        cfg.run.strategy = Strategy::Pdd;
        cfg.run.seed = seed;
        cfg.interference.event_prob = 0.0;
        let x = run_simulation(&cfg).unwrap().summary;
        let Some(j) = x.j_max_initial else { continue };
        assert!(x.first_epoch_cycles() as f64 <= j + 1.0, "seed {seed}: {} > {j}", x.first_epoch_cycles());
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut cfg = ScenarioConfig::default();
    cfg.timing.gamma = 1.5;
    assert!(matches!(
        Simulation::new(&cfg, RunOptions::default()),
        Err(EngineError::Invalid(f)) if f.iter().any(|f| f.field.contains("gamma"))
    ));
}

#[test]
fn trace_is_collected_only_on_request() {
    let cfg = short(Strategy::Distr, 3);
    let quiet = Simulation::new(&cfg, RunOptions::default()).unwrap().run();
    assert!(quiet.trace.is_empty());
    let loud = Simulation::new(&cfg, RunOptions { trace: true }).unwrap().run();
    assert!(!loud.trace.is_empty());
    assert_eq!(quiet.metrics, loud.metrics);
}
