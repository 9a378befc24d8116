use super::*;
use crate::lifetime::LifetimeParams;
use crate::netmodel::{validate_paths, PathRow, RANK_STEP};

const EPS: f64 = 0.001;
const E_CFG: f64 = 0.01;

fn params(ttl: u32) -> ProtocolParams {
    ProtocolParams {
        ttl,
        route_wait: 1,
        retries: 0,
        lifetime: LifetimeParams {
            e_cfg: E_CFG,
            tau_s: 1.0,
            gamma: 0.5,
        },
    }
}

struct Fixture {
    net: NetworkState,
    table: PathTable,
    book: PieceBook,
    proto: Protocol,
    cycle: u64,
}

fn n(k: u32) -> NodeId {
    NodeId(k)
}

fn ids(v: &[u32]) -> Vec<NodeId> {
    v.iter().map(|&k| NodeId(k)).collect()
}

impl Fixture {
    /// `paths` holds `(source, proxy, consumer-terminated node list, rate)`.
    fn new(energies: &[f64], edges: &[(u32, u32, f64)], paths: &[(u32, &[u32], u32)], ttl: u32) -> Self {
        let mut net = NetworkState::new(E_CFG);
        for &e in energies {
            net.add_node(0.0, 0.0, e, false);
        }
        for &(a, b, lat) in edges {
            net.add_link_pair(n(a), n(b), EPS, lat);
        }
        let mut table = PathTable::new();
        let mut pieces = Vec::new();
        for (k, &(proxy, nodes, rate)) in paths.iter().enumerate() {
            let id = PieceId(k as u32);
            table.install_path(id, &ids(nodes));
            pieces.push(DataPiece {
                id,
                source: n(nodes[0]),
                consumer: n(*nodes.last().unwrap()),
                rate,
                proxy: n(proxy),
                size_bytes: 9,
            });
        }
        net.sync_activation(&table);
        let book = PieceBook::new(&pieces, &table);
        let proto = Protocol::new(energies.len(), params(ttl));
        Self {
            net,
            table,
            book,
            proto,
            cycle: 1,
        }
    }

    fn kill(&mut self, u: u32) {
        let e = &mut self.net.node_mut(n(u)).energy;
        *e = e.min(E_CFG);
    }

    fn step(&mut self) -> StepOutcome {
        let o = self.proto.step(self.cycle, &mut self.net, &mut self.table, &self.book);
        self.net.sync_activation(&self.table);
        self.cycle += 1;
        o
    }

    /// One cycle, then more until the protocol is quiet.
    fn settle(&mut self) -> StepOutcome {
        let mut first = self.step();
        let (k, o) = self
            .proto
            .settle(self.cycle, 64, &mut self.net, &mut self.table, &self.book);
        self.cycle += k;
        assert!(self.proto.is_quiet(), "protocol did not settle");
        first.sent.extend(o.sent);
        first.disconnected.extend(o.disconnected);
        first.stats.absorb(&o.stats);
        first
    }

    fn path(&self, piece: u32) -> Vec<u32> {
        let src = self.book.get(PieceId(piece)).unwrap().piece.source;
        self.table
            .walk(PieceId(piece), src)
            .nodes
            .iter()
            .map(|x| x.0)
            .collect()
    }

    fn report(&self) -> crate::netmodel::PathReport {
        validate_paths(&self.net, &self.table, &self.book.pieces())
    }

    fn has_row(&self, piece: u32, u: u32) -> bool {
        self.table.row(PieceId(piece), n(u)).is_some()
    }
}

fn sent_by(o: &StepOutcome, u: u32) -> Vec<&Envelope> {
    o.sent
        .iter()
        .filter(|e| e.from == Endpoint::Node(n(u)))
        .collect()
}

/// s0 -> w1 -> x2 -> v3 -> a4 -> b5 -> j6 -> c7, with j adjacent to w and v.
fn forward_loop() -> Fixture {
    let mut edges: Vec<(u32, u32, f64)> = (0..7).map(|k| (k, k + 1, 10.0)).collect();
    edges.push((1, 6, 8.0));
    edges.push((6, 3, 10.0));
    Fixture::new(&[10.0; 8], &edges, &[(1, &[0, 1, 2, 3, 4, 5, 6, 7], 2)], 2)
}

#[test]
fn forward_loop_is_cut_out_by_deletion_wave() {
    let mut f = forward_loop();
    f.kill(2);
    let o = f.settle();
    assert_eq!(f.path(0), vec![0, 1, 6, 7]);
    assert!(f.report().is_clean(), "{:?}", f.report());
    // v, a and b lose their rows: edges (v,a), (a,b), (b,j) deactivated.
    for u in [3, 4, 5] {
        assert!(!f.has_row(0, u), "node {u} still holds a row");
    }
    assert_eq!(o.stats.waves_forwarded, 2);
    assert_eq!(o.stats.splices, 1);
    let waves: Vec<_> = o
        .sent
        .iter()
        .filter(|e| matches!(e.msg, Message::ModifyPath { delete: true, .. }))
        .map(|e| (e.from, e.to))
        .collect();
    let hop = |a: u32, b: u32| (Endpoint::Node(n(a)), Endpoint::Node(n(b)));
    assert_eq!(waves, vec![hop(6, 3), hop(3, 4), hop(4, 5)]);
    for (a, b) in [(3, 4), (4, 5), (5, 6)] {
        assert!(f.net.link(n(a), n(b)).unwrap().active_pieces.is_empty());
    }
}

/// s0 -> j1 -> y2 -> w3 -> x4 -> v5 -> c6, with j adjacent to w and v.
fn backward_loop() -> Fixture {
    let mut edges: Vec<(u32, u32, f64)> = (0..6).map(|k| (k, k + 1, 10.0)).collect();
    edges.push((3, 1, 8.0));
    edges.push((1, 5, 10.0));
    Fixture::new(&[10.0; 7], &edges, &[(0, &[0, 1, 2, 3, 4, 5, 6], 2)], 2)
}

#[test]
fn backward_loop_wave_walks_back_to_the_joiner() {
    let mut f = backward_loop();
    f.kill(4);
    let o = f.settle();
    assert_eq!(f.path(0), vec![0, 1, 5, 6]);
    assert!(f.report().is_clean(), "{:?}", f.report());
    assert!(!f.has_row(0, 2) && !f.has_row(0, 3));
    assert_eq!(o.stats.waves_forwarded, 1);
    let back: Vec<_> = o
        .sent
        .iter()
        .filter(|e| matches!(e.msg, Message::ModifyPath { delete: true, dir: Direction::Bwd, .. }))
        .map(|e| (e.from, e.to))
        .collect();
    assert_eq!(
        back,
        vec![
            (Endpoint::Node(n(1)), Endpoint::Node(n(3))),
            (Endpoint::Node(n(3)), Endpoint::Node(n(2)))
        ]
    );
}

/// s0 -> w1 -> x2 -> v3 -> c4 plus i5 adjacent to w and v.
fn splice_fixture() -> Fixture {
    let edges = [
        (0, 1, 10.0),
        (1, 2, 10.0),
        (2, 3, 10.0),
        (3, 4, 10.0),
        (1, 5, 9.0),
        (5, 3, 11.0),
    ];
    Fixture::new(&[10.0; 6], &edges, &[(0, &[0, 1, 2, 3, 4], 3)], 2)
}

#[test]
fn mid_path_failure_splices_one_node() {
    let mut f = splice_fixture();
    f.kill(2);
    let o = f.settle();
    assert_eq!(f.path(0), vec![0, 1, 5, 3, 4]);
    assert!(f.report().is_clean());
    assert_eq!(o.stats.splices, 1);
    assert_eq!(o.stats.waves_forwarded, 0);
    assert_eq!(o.stats.routes_started, 0);
    let r1 = f.table.row(PieceId(0), n(1)).unwrap().rank;
    let r5 = f.table.row(PieceId(0), n(5)).unwrap().rank;
    let r3 = f.table.row(PieceId(0), n(3)).unwrap().rank;
    assert!(r1 < r5 && r5 < r3);
}

#[test]
fn stale_alert_leaves_repaired_path_alone() {
    let mut f = splice_fixture();
    f.kill(2);
    f.settle();
    let before = f.table.clone();
    f.proto.post(Envelope::local(
        n(2),
        n(1),
        Message::Alert {
            piece: PieceId(0),
            failed: n(2),
            downstream: Some(n(3)),
            downstream_rank: Some(3.0 * RANK_STEP),
            failed_hop_ms: 10.0,
        },
    ));
    let o = f.step();
    assert_eq!(o.stats.alerts_stale, 1);
    assert_eq!(f.table, before);
    assert!(o.sent.is_empty());
}

#[test]
fn articulation_point_failure_breaks_the_piece() {
    let edges: Vec<(u32, u32, f64)> = (0..4).map(|k| (k, k + 1, 10.0)).collect();
    let mut f = Fixture::new(&[10.0; 5], &edges, &[(0, &[0, 1, 2, 3, 4], 1)], 2);
    f.kill(2);
    let o = f.settle();
    assert_eq!(o.stats.breaks, 1);
    assert_eq!(o.stats.routes_installed, 0);
    let report = f.report();
    assert_eq!(report.structural().count(), 0);
    assert!(report.intact.is_empty());
    assert_eq!(f.path(0), vec![0, 1]);
}

/// King-move 3x3 grid, row-major ids, path 3 -> 4 -> 5 with 4 failing.
/// Common neighbors of 3 and 5 besides 4 are 1 and 7.
fn grid3(e1: f64, e7: f64, lat_1: f64) -> Fixture {
    let mut edges = Vec::new();
    for a in 0..9u32 {
        for b in a + 1..9 {
            let (ra, ca, rb, cb) = (a / 3, a % 3, b / 3, b % 3);
            if ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1 {
                let slow = [(1, 3), (1, 5)].contains(&(a, b)) || [(3, 1), (5, 1)].contains(&(b, a));
                edges.push((a, b, if slow { lat_1 } else { 10.0 }));
            }
        }
    }
    let mut energies = [10.0; 9];
    energies[1] = e1;
    energies[7] = e7;
    Fixture::new(&energies, &edges, &[(3, &[3, 4, 5], 2)], 2)
}

#[test]
fn grid_splice_prefers_gate_passing_neighbor() {
    // Node 1 is richer but its two hops take 24 ms against a 20 ms budget.
    let mut f = grid3(50.0, 5.0, 12.0);
    f.kill(4);
    f.settle();
    assert_eq!(f.path(0), vec![3, 7, 5]);
    assert!(f.report().is_clean());
}

#[test]
fn grid_splice_picks_longest_lifetime() {
    // Both pass the gate. Idle nodes: T = E / (eps * r) with r = 2.
    let b1 = Beacon {
        energy: 4.0,
        links: vec![LinkStatus {
            to: n(5),
            eps: EPS,
            latency_ms: 10.0,
        }],
        rates: RateVector::default(),
    };
    assert_eq!(b1.lifetime_with(n(5), 2.0, &params(2).lifetime), 4.0 / (EPS * 2.0));
    let mut f = grid3(4.0, 6.0, 10.0);
    f.kill(4);
    f.settle();
    assert_eq!(f.path(0), vec![3, 7, 5]);
    let mut f = grid3(6.0, 4.0, 10.0);
    f.kill(4);
    f.settle();
    assert_eq!(f.path(0), vec![3, 1, 5]);
}

#[test]
fn grid_splice_tie_goes_to_lowest_id() {
    let mut f = grid3(10.0, 10.0, 10.0);
    f.kill(4);
    f.settle();
    assert_eq!(f.path(0), vec![3, 1, 5]);
}

/// s0 -> w1 -> x2 -> d3 -> c4; detours w-a5-d and w-b6-d too slow to splice.
fn route_fixture(e_a: f64, e_b: f64) -> Fixture {
    let edges = [
        (0, 1, 5.0),
        (1, 2, 5.0),
        (2, 3, 5.0),
        (3, 4, 5.0),
        (1, 5, 10.0),
        (5, 3, 10.0),
        (1, 6, 10.0),
        (6, 3, 10.0),
    ];
    Fixture::new(&[10.0, 10.0, 10.0, 10.0, 10.0, e_a, e_b], &edges, &[(0, &[0, 1, 2, 3, 4], 2)], 2)
}

#[test]
fn route_discovery_prefers_healthier_relay() {
    let mut f = route_fixture(1.0, 10.0);
    f.kill(2);
    let o = f.settle();
    assert_eq!(o.stats.splices, 0);
    assert_eq!(o.stats.routes_installed, 1);
    assert_eq!(f.path(0), vec![0, 1, 6, 3, 4]);
    assert!(f.report().is_clean());

    let mut f = route_fixture(10.0, 1.0);
    f.kill(2);
    f.settle();
    assert_eq!(f.path(0), vec![0, 1, 5, 3, 4]);
}

#[test]
fn route_discovery_respects_ttl() {
    // Only detour: w1 - p5 - q6 - d3, two relays.
    let edges = [
        (0, 1, 5.0),
        (1, 2, 5.0),
        (2, 3, 5.0),
        (3, 4, 5.0),
        (1, 5, 10.0),
        (5, 6, 10.0),
        (6, 3, 10.0),
    ];
    let mut f = Fixture::new(&[10.0; 7], &edges, &[(0, &[0, 1, 2, 3, 4], 2)], 1);
    f.kill(2);
    let o = f.settle();
    assert_eq!(o.stats.routes_failed, 1);
    assert_eq!(f.report().intact.len(), 0);

    let mut f = Fixture::new(&[10.0; 7], &edges, &[(0, &[0, 1, 2, 3, 4], 2)], 2);
    f.kill(2);
    f.settle();
    assert_eq!(f.path(0), vec![0, 1, 5, 6, 3, 4]);
    assert!(f.report().is_clean());
}

#[test]
fn relay_forwards_a_request_once() {
    // Relay 2 hears the same request from 1 and 3.
    let edges = [(0, 1, 5.0), (0, 3, 5.0), (1, 2, 5.0), (3, 2, 5.0), (2, 4, 5.0)];
    let mut f = Fixture::new(&[10.0; 6], &edges, &[(5, &[5], 1)], 2);
    let req = |from: u32| {
        Envelope::local(
            n(from),
            n(2),
            Message::RouteRequest(RouteRequest {
                piece: PieceId(0),
                origin: n(0),
                target: n(4),
                req_id: 7,
                relays_left: 1,
                min_life: 100.0,
                hops: vec![n(0), n(from)],
                avoid: None,
                origin_rank: 0.0,
            }),
        )
    };
    f.proto.post(req(1));
    f.proto.post(req(3));
    let o = f.step();
    let fwd = sent_by(&o, 2);
    assert_eq!(fwd.len(), 1);
    assert_eq!(fwd[0].to, Endpoint::Node(n(4)));
}

#[test]
fn disconnect_alerts_every_predecessor() {
    let edges = [(0, 2, 10.0), (1, 2, 10.0), (2, 3, 10.0), (2, 4, 10.0), (5, 0, 10.0)];
    let mut f = Fixture::new(&[10.0; 6], &edges, &[(0, &[0, 2, 3], 1), (1, &[1, 2, 4], 1)], 2);
    f.kill(2);
    let o = f.step();
    let alerts: Vec<_> = sent_by(&o, 2)
        .into_iter()
        .map(|e| (e.to, e.msg.kind()))
        .collect();
    assert_eq!(
        alerts,
        vec![(Endpoint::Node(n(0)), "alert"), (Endpoint::Node(n(1)), "alert")]
    );
    assert_eq!(o.disconnected, vec![n(2)]);
    assert!(!f.has_row(0, 2) && !f.has_row(1, 2));

    // Leaf without pieces leaves silently; a second pass is a no-op.
    f.kill(5);
    let o = f.step();
    assert!(sent_by(&o, 5).is_empty());
    assert!(o.disconnected.contains(&n(5)));
    let o = f.step();
    assert!(!o.disconnected.contains(&n(5)) && !o.disconnected.contains(&n(2)));
}

#[test]
fn exhausted_node_disconnects_immediately() {
    let mut f = splice_fixture();
    f.net.node_mut(n(2)).energy = 0.0;
    let o = f.step();
    assert_eq!(o.disconnected, vec![n(2)]);
    assert!(!f.net.is_alive(n(2)));
}

#[test]
fn one_of_two_links_triggered_keeps_node_alive() {
    // Node 1 has exactly two neighbors; its active link to 2 jumps 2.5x.
    let edges: Vec<(u32, u32, f64)> = (0..3).map(|k| (k, k + 1, 10.0)).collect();
    let mut f = Fixture::new(&[10.0; 4], &edges, &[(0, &[0, 1, 2, 3], 1)], 2);
    f.net.link_mut(n(1), n(2)).unwrap().eps = 2.5 * EPS;
    let o = f.step();
    assert!(o.disconnected.is_empty());
    assert_eq!(o.stats.triggered_links, 1);
    let alerts = sent_by(&o, 1);
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].to, Endpoint::Node(n(0)));
    assert!(!f.has_row(0, 1));
}

#[test]
fn majority_triggered_node_leaves() {
    let edges: Vec<(u32, u32, f64)> = (0..3).map(|k| (k, k + 1, 10.0)).collect();
    let mut f = Fixture::new(&[10.0; 4], &edges, &[(0, &[0, 1, 2, 3], 1)], 2);
    f.net.link_mut(n(1), n(2)).unwrap().eps = 2.5 * EPS;
    f.net.link_mut(n(1), n(0)).unwrap().eps = 2.5 * EPS;
    let o = f.step();
    assert_eq!(o.disconnected, vec![n(1)]);
}

#[test]
fn idle_node_spends_nothing() {
    let mut f = splice_fixture();
    let before = f.net.node(n(5)).energy;
    for _ in 0..5 {
        let o = f.step();
        assert!(o.sent.is_empty());
    }
    assert_eq!(f.net.node(n(5)).energy, before);
}

#[test]
fn modify_without_delete_writes_one_pointer() {
    let mut f = splice_fixture();
    f.proto.post(Envelope::local(
        n(5),
        n(3),
        Message::ModifyPath {
            piece: PieceId(0),
            joiner: n(5),
            joiner_rank: 2.5 * RANK_STEP,
            delete: false,
            dir: Direction::Fwd,
            wave: 1,
        },
    ));
    let o = f.step();
    assert!(o.sent.is_empty());
    assert_eq!(f.table.previous(PieceId(0), n(3)), Some(n(5)));
}

#[test]
fn delete_wave_reaching_joiner_stops() {
    let mut f = forward_loop();
    let before = f.table.clone();
    f.proto.post(Envelope::local(
        n(5),
        n(6),
        Message::ModifyPath {
            piece: PieceId(0),
            joiner: n(6),
            joiner_rank: 6.0 * RANK_STEP,
            delete: true,
            dir: Direction::Fwd,
            wave: 1,
        },
    ));
    let o = f.step();
    assert!(o.sent.is_empty());
    assert_eq!(f.table, before);
}

#[test]
fn fresh_join_extends_path_by_one() {
    // s0 -> w1 -> v2 -> c3, with i4 adjacent to w and v.
    let edges = [(0, 1, 10.0), (1, 2, 10.0), (2, 3, 10.0), (1, 4, 10.0), (4, 2, 10.0)];
    let mut f = Fixture::new(&[10.0; 5], &edges, &[(0, &[0, 1, 2, 3], 1)], 2);
    f.table.row_mut(PieceId(0), n(1)).unwrap().next = Some(n(4));
    f.proto.post(Envelope::local(
        n(1),
        n(4),
        Message::Join {
            piece: PieceId(0),
            upstream: n(1),
            downstream: n(2),
            upstream_rank: RANK_STEP,
            downstream_rank: 2.0 * RANK_STEP,
        },
    ));
    let o = f.settle();
    assert_eq!(f.path(0), vec![0, 1, 4, 2, 3]);
    assert!(f.report().is_clean());
    assert_eq!(o.stats.waves_forwarded, 0);
    assert!(!o.sent.iter().any(|e| matches!(e.msg, Message::ModifyPath { delete: true, .. })));
}

#[test]
fn join_that_would_drop_the_proxy_is_refused() {
    // Forward-loop fixture with the proxy on the obsolete segment (node 4).
    let mut edges: Vec<(u32, u32, f64)> = (0..7).map(|k| (k, k + 1, 10.0)).collect();
    edges.push((1, 6, 8.0));
    edges.push((6, 3, 10.0));
    let mut f = Fixture::new(&[10.0; 8], &edges, &[(4, &[0, 1, 2, 3, 4, 5, 6, 7], 2)], 2);
    f.kill(2);
    let o = f.settle();
    assert_eq!(o.stats.joins_rejected, 1);
    assert!(f.has_row(0, 4));
    assert_eq!(f.report().structural().count(), 0);
}

#[test]
fn target_ignores_copies_arriving_after_its_answer() {
    let mut f = route_fixture(10.0, 10.0);
    let req = |relay: u32| {
        Envelope::local(
            n(relay),
            n(3),
            Message::RouteRequest(RouteRequest {
                piece: PieceId(0),
                origin: n(1),
                target: n(3),
                req_id: 9,
                relays_left: 1,
                min_life: 100.0,
                hops: vec![n(1), n(relay)],
                avoid: Some(n(2)),
                origin_rank: RANK_STEP,
            }),
        )
    };
    f.proto.post(req(5));
    f.step();
    let o = f.step();
    assert_eq!(o.sent.iter().filter(|e| e.msg.kind() == "rrep").count(), 1);
    let answered = f.table.row(PieceId(0), n(3)).unwrap().previous;
    assert_eq!(answered, Some(n(5)));

    f.proto.post(req(6));
    f.step();
    let o = f.step();
    assert!(sent_by(&o, 3).is_empty());
    assert_eq!(f.table.row(PieceId(0), n(3)).unwrap().previous, answered);
}

#[test]
fn failed_discovery_is_retried_then_given_up() {
    let edges = [
        (0, 1, 5.0),
        (1, 2, 5.0),
        (2, 3, 5.0),
        (3, 4, 5.0),
        (1, 5, 10.0),
        (5, 6, 10.0),
        (6, 3, 10.0),
    ];
    let mut f = Fixture::new(&[10.0; 7], &edges, &[(0, &[0, 1, 2, 3, 4], 2)], 1);
    f.proto.params.retries = 2;
    f.kill(2);
    f.step();
    let mut stats = StepStats::default();
    for _ in 0..200 {
        stats.absorb(&f.step().stats);
    }
    assert!(f.proto.is_quiet());
    assert_eq!(stats.retries, 2);
    assert_eq!(stats.routes_failed, 3);
    assert_eq!(stats.breaks, 1);
}

#[test]
fn retry_may_use_the_direct_hop_once_the_spike_is_over() {
    // s0 -> v1 -> c2; the only other neighbor of s0 is the dead end a3.
    let edges = [(0, 1, 10.0), (1, 2, 10.0), (0, 3, 10.0)];
    let mut f = Fixture::new(&[10.0; 4], &edges, &[(1, &[0, 1, 2], 2)], 2);
    f.proto.params.retries = 1;
    f.net.link_mut(n(0), n(1)).unwrap().eps = 2.5 * EPS;
    let first = f.step();
    assert_eq!(first.stats.routes_started, 1);
    assert_eq!(f.path(0), vec![0]);
    f.net.link_mut(n(0), n(1)).unwrap().eps_prev = 2.5 * EPS;
    let o = f.settle();
    assert_eq!(o.stats.routes_failed, 1);
    assert_eq!(o.stats.retries, 1);
    assert_eq!(o.stats.routes_installed, 1);
    assert_eq!(f.path(0), vec![0, 1, 2]);
    assert!(f.report().is_clean());
}

#[test]
fn source_reroutes_around_its_own_triggered_link() {
    // s0 -> v1 -> c2, detour s0 - a3 - v1 slower than the direct hop.
    let edges = [(0, 1, 10.0), (1, 2, 10.0), (0, 3, 8.0), (3, 1, 8.0)];
    let mut f = Fixture::new(&[10.0; 4], &edges, &[(1, &[0, 1, 2], 2)], 2);
    f.net.link_mut(n(0), n(1)).unwrap().eps = 2.5 * EPS;
    let o = f.step();
    assert_eq!(o.stats.routes_started, 1);
    f.net.link_mut(n(0), n(1)).unwrap().eps_prev = 2.5 * EPS;
    f.settle();
    assert_eq!(f.path(0), vec![0, 3, 1, 2]);
    assert!(f.report().is_clean());
}

#[test]
fn trace_line_format() {
    let env = Envelope::local(n(3), n(4), Message::JoinReject { piece: PieceId(2) });
    assert_eq!(env.trace_line(17), "17 join_reject n3 n4 d2");
    let env = Envelope {
        from: Endpoint::Node(n(1)),
        to: Endpoint::Controller,
        msg: Message::Plan(vec![(
            PieceId(0),
            PathRow {
                previous: None,
                next: None,
                rank: 0.0,
                next_rank: None,
            },
        )]),
    };
    assert_eq!(env.trace_line(0), "0 plan n1 ctl -");
}

mod props {
    use super::*;
    use crate::netmodel::{build_grid_topology, GridConfig, LinkParams};
    use crate::planner::{collect_status, plan_pieces};
    use proptest::prelude::*;

    #[derive(Debug, Clone)]
    enum Event {
        Kill(u32),
        Spike(u32, usize),
        Calm(u32, usize),
        Pause,
    }

    fn event() -> impl Strategy<Value = Event> {
        prop_oneof![
            (0u32..20).prop_map(Event::Kill),
            (0u32..20, 0usize..8).prop_map(|(u, k)| Event::Spike(u, k)),
            (0u32..20, 0usize..8).prop_map(|(u, k)| Event::Calm(u, k)),
            Just(Event::Pause),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn repairs_never_create_loops(
            seed in 0u64..1000,
            rows in 3usize..5,
            cols in 3usize..6,
            events in proptest::collection::vec(event(), 1..12),
        ) {
            let cfg = GridConfig {
                rows,
                cols,
                spacing_m: 2.0,
                range_m: 3.0,
                proxies: vec![NodeId(1), NodeId((rows * cols - 2) as u32)],
                link: LinkParams { eps_j: EPS, eps_cc_j: E_CFG, ..LinkParams::default() },
                node_energy_j: (1.0, 10.0),
                proxy_energy_j: 30.0,
            };
            let mut net = build_grid_topology(&cfg, seed).unwrap();
            let count = (rows * cols) as u32;
            let mut pieces: Vec<DataPiece> = (0..3)
                .map(|k| DataPiece {
                    id: PieceId(k),
                    source: NodeId((seed as u32 + 5 * k) % count),
                    consumer: NodeId((seed as u32 + 7 * k + 3) % count),
                    rate: 1 + k,
                    proxy: NodeId(0),
                    size_bytes: 9,
                })
                .filter(|p| p.source != p.consumer)
                .collect();
            let p = ProtocolParams { retries: 2, ..params(2) };
            let outcome = plan_pieces(&collect_status(&net), &pieces, 1000.0, &p.lifetime);
            outcome.plan.assign_proxies(&mut pieces);
            pieces.retain(|d| outcome.plan.pieces.contains_key(&d.id));
            let mut table = PathTable::new();
            outcome.plan.install(&mut table);
            net.sync_activation(&table);
            let book = PieceBook::new(&pieces, &table);
            let mut proto = Protocol::new(net.node_count(), p);
            let mut cycle = 1;
            for ev in events {
                for l in net.links_mut().map(|(_, l)| l) {
                    l.eps_prev = l.eps;
                }
                match ev {
                    Event::Kill(u) => {
                        let u = NodeId(u % count);
                        let e = &mut net.node_mut(u).energy;
                        *e = e.min(E_CFG);
                    }
                    Event::Spike(u, k) => {
                        let u = NodeId(u % count);
                        let nbrs = net.neighbors(u).to_vec();
                        let v = nbrs[k % nbrs.len()];
                        net.link_mut(u, v).unwrap().eps *= 2.5;
                    }
                    Event::Calm(u, k) => {
                        let u = NodeId(u % count);
                        let nbrs = net.neighbors(u).to_vec();
                        let l = net.link_mut(u, nbrs[k % nbrs.len()]).unwrap();
                        l.eps = l.eps_base;
                    }
                    Event::Pause => {}
                }
                proto.step(cycle, &mut net, &mut table, &book);
                net.sync_activation(&table);
                cycle += 1;
            }
            for l in net.links_mut().map(|(_, l)| l) {
                l.eps_prev = l.eps;
            }
            let (_, _) = proto.settle(cycle, 400, &mut net, &mut table, &book);
            prop_assert!(proto.is_quiet());
            let report = validate_paths(&net, &table, &pieces);
            let structural: Vec<_> = report.structural().collect();
            prop_assert!(structural.is_empty(), "{:?}", structural);
        }
    }
}

