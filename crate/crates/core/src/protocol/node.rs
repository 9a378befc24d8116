use crate::lifetime::trigger_check;
use crate::netmodel::{LinkState, NetworkState, NodeId, NodeRows, PathRow, PieceId};

use super::message::{Direction, Message};
use super::{
    Beacon, Beacons, Goal, NodeLocal, PieceBook, PieceMeta, ProtocolParams, Repair, RepairStage,
    StepStats,
};

/// Everything a node may see or touch during its cycle: its own battery,
/// links and path rows, its neighbors' beacons, and its private state.
pub struct NodeCtx<'a> {
    pub(super) me: NodeId,
    pub(super) cycle: u64,
    net: &'a NetworkState,
    beacons: &'a Beacons,
    pub(super) book: &'a PieceBook,
    pub(super) params: &'a ProtocolParams,
    pub(super) rows: NodeRows<'a>,
    pub(super) local: &'a mut NodeLocal,
    out: Vec<(NodeId, Message)>,
    pub(super) stats: StepStats,
}

impl<'a> NodeCtx<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn new(
        me: NodeId,
        cycle: u64,
        net: &'a NetworkState,
        beacons: &'a Beacons,
        book: &'a PieceBook,
        params: &'a ProtocolParams,
        rows: NodeRows<'a>,
        local: &'a mut NodeLocal,
    ) -> Self {
        Self {
            me,
            cycle,
            net,
            beacons,
            book,
            params,
            rows,
            local,
            out: Vec::new(),
            stats: StepStats::default(),
        }
    }

    pub(super) fn finish(self) -> (Vec<(NodeId, Message)>, StepStats) {
        (self.out, self.stats)
    }

    pub(super) fn send(&mut self, to: NodeId, msg: Message) {
        self.out.push((to, msg));
    }

    fn energy(&self) -> f64 {
        self.net.node(self.me).energy
    }

    fn own_link(&self, v: NodeId) -> Option<&LinkState> {
        self.net.link(self.me, v)
    }

    pub(super) fn hop_ms(&self, v: NodeId) -> f64 {
        self.own_link(v).map_or(f64::INFINITY, |l| l.latency_ms)
    }

    /// Neighbors that beaconed at the start of the cycle, ascending.
    pub(super) fn neighbors(&self) -> Vec<NodeId> {
        self.beacons
            .0
            .get(&self.me)
            .map(|b| b.links.iter().map(|l| l.to).collect())
            .unwrap_or_default()
    }

    pub(super) fn beacon(&self, v: NodeId) -> Option<&'a Beacon> {
        self.beacons.0.get(&v)
    }

    /// Own lifetime if `extra` more pieces per cycle were sent to `to`.
    pub(super) fn own_lifetime_with(&self, to: NodeId, extra: f64) -> f64 {
        self.beacon(self.me)
            .map_or(0.0, |b| b.lifetime_with(to, extra, &self.params.lifetime))
    }

    pub(super) fn meta(&self, piece: PieceId) -> Option<&'a PieceMeta> {
        self.book.get(piece)
    }

    pub(super) fn next_seq(&mut self) -> u64 {
        self.local.seq += 1;
        self.local.seq
    }

    /// One cycle: exhaustion check, trigger scan, inbox, timers, exit guard.
    /// Returns true when the node disconnects.
    pub(super) fn run_cycle(&mut self, inbox: Vec<(NodeId, Message)>) -> bool {
        if self.energy() <= self.params.lifetime.e_cfg {
            self.disconnect();
            return true;
        }

        let operational = self.neighbors();
        let gamma = self.params.lifetime.gamma;
        let triggered: Vec<NodeId> = operational
            .iter()
            .copied()
            .filter(|&v| {
                self.own_link(v)
                    .is_some_and(|l| trigger_check(l.eps, l.eps_prev, gamma))
            })
            .collect();
        self.stats.triggered_links += triggered.len() as u64;
        for &v in &triggered {
            for (piece, row) in self.rows.all() {
                if row.next == Some(v) {
                    self.on_link_trigger(piece, row, v);
                }
            }
        }

        for (from, msg) in inbox {
            self.dispatch(from, msg);
        }
        self.fire_timers();
        self.drop_dead_next_hops(&operational);

        if 2 * triggered.len() > operational.len() {
            self.disconnect();
            return true;
        }
        false
    }

    fn dispatch(&mut self, from: NodeId, msg: Message) {
        match msg {
            Message::Alert {
                piece,
                failed,
                downstream,
                downstream_rank,
                failed_hop_ms,
            } => self.handle_alert(from, piece, failed, downstream, downstream_rank, failed_hop_ms),
            Message::Join {
                piece,
                upstream,
                downstream,
                upstream_rank,
                downstream_rank,
            } => self.join_path(piece, upstream, downstream, upstream_rank, downstream_rank),
            Message::JoinReject { piece } => self.handle_reject(from, piece),
            Message::ModifyPath {
                piece,
                joiner,
                joiner_rank,
                delete,
                dir,
                wave,
            } => self.modify_path(from, piece, joiner, joiner_rank, delete, dir, wave),
            Message::RouteRequest(req) => self.handle_route_request(req),
            Message::RouteReply(rep) => self.handle_route_reply(rep),
            Message::Status(_) | Message::Plan(_) => {}
        }
    }

    /// The cost of `(me, v)` jumped. Intermediate nodes step out of every
    /// path using the link; sources and proxies reroute around it themselves.
    fn on_link_trigger(&mut self, piece: PieceId, row: PathRow, v: NodeId) {
        let Some(meta) = self.meta(piece) else {
            return;
        };
        let hop = self.hop_ms(v);
        if self.me == meta.piece.source || self.me == meta.piece.proxy {
            self.rows.update(piece, |r| {
                r.next = None;
                r.next_rank = None;
            });
            let goal = Goal {
                target: v,
                target_rank: row.next_rank.unwrap_or(row.rank + 1.0),
                baseline_ms: hop,
                avoid: None,
                forbid_direct: true,
                attempts: 0,
            };
            self.local_path_config(piece, goal);
            return;
        }
        self.rows.remove(piece);
        self.local.repairs.remove(&piece);
        if let Some(p) = row.previous {
            self.send(
                p,
                Message::Alert {
                    piece,
                    failed: self.me,
                    downstream: Some(v),
                    downstream_rank: row.next_rank,
                    failed_hop_ms: hop,
                },
            );
        }
    }

    pub(super) fn handle_alert(
        &mut self,
        from: NodeId,
        piece: PieceId,
        failed: NodeId,
        downstream: Option<NodeId>,
        downstream_rank: Option<f64>,
        failed_hop_ms: f64,
    ) {
        let Some(row) = self.rows.get(piece) else {
            self.stats.alerts_stale += 1;
            return;
        };
        if row.next != Some(failed) || from != failed {
            self.stats.alerts_stale += 1;
            return;
        }
        self.rows.update(piece, |r| {
            r.next = None;
            r.next_rank = None;
        });
        self.local.repairs.remove(&piece);
        let proxy_failed = self.meta(piece).is_none_or(|m| m.piece.proxy == failed);
        let (Some(d), Some(d_rank)) = (downstream, downstream_rank) else {
            self.stats.breaks += 1;
            return;
        };
        if proxy_failed {
            self.stats.breaks += 1;
            return;
        }
        let goal = Goal {
            target: d,
            target_rank: d_rank,
            baseline_ms: self.hop_ms(failed) + failed_hop_ms,
            avoid: Some(failed),
            forbid_direct: false,
            attempts: 0,
        };
        self.local_path_config(piece, goal);
    }

    /// Reconnects toward the goal's target through the healthiest common
    /// neighbor whose two hops are no slower than the baseline, else by route
    /// discovery.
    pub(super) fn local_path_config(&mut self, piece: PieceId, goal: Goal) {
        let Some(my) = self.rows.get(piece) else {
            return;
        };
        let (target, avoid) = (goal.target, goal.avoid);
        let rate = self.meta(piece).map_or(0.0, |m| m.piece.rate as f64);
        let mut best: Option<(NodeId, f64)> = None;
        for iota in self.neighbors() {
            if iota == target || Some(iota) == avoid {
                continue;
            }
            let Some(b) = self.beacon(iota) else {
                continue;
            };
            let Some(second) = b.link_to(target) else {
                continue;
            };
            if self.hop_ms(iota) + second.latency_ms > goal.baseline_ms {
                continue;
            }
            let t = b.lifetime_with(target, rate, &self.params.lifetime);
            if best.is_none_or(|(_, bt)| t > bt) {
                best = Some((iota, t));
            }
        }
        match best {
            Some((iota, _)) => {
                self.stats.splices += 1;
                let target_rank = goal.target_rank;
                let mid = 0.5 * (my.rank + target_rank);
                self.rows.update(piece, |r| {
                    r.next = Some(iota);
                    r.next_rank = Some(mid);
                });
                self.send(
                    iota,
                    Message::Join {
                        piece,
                        upstream: self.me,
                        downstream: target,
                        upstream_rank: my.rank,
                        downstream_rank: target_rank,
                    },
                );
                self.local.repairs.insert(
                    piece,
                    Repair {
                        goal,
                        stage: RepairStage::Splice {
                            via: iota,
                            until: self.cycle + 3,
                        },
                    },
                );
            }
            None => self.start_route(piece, goal),
        }
    }

    fn handle_reject(&mut self, from: NodeId, piece: PieceId) {
        let Some(repair) = self.local.repairs.get(&piece).cloned() else {
            return;
        };
        let RepairStage::Splice { via, .. } = repair.stage else {
            return;
        };
        if via != from || self.rows.get(piece).and_then(|r| r.next) != Some(via) {
            return;
        }
        self.stats.joins_rejected += 1;
        self.rows.update(piece, |r| {
            r.next = None;
            r.next_rank = None;
        });
        self.local.repairs.remove(&piece);
        self.start_route(piece, repair.goal);
    }

    /// Join request from `w` to bridge `w -> me -> v`.
    pub(super) fn join_path(&mut self, piece: PieceId, w: NodeId, v: NodeId, r_w: f64, r_v: f64) {
        let Some(meta) = self.meta(piece) else {
            return;
        };
        let r_p = meta.proxy_rank;
        let mid = 0.5 * (r_w + r_v);
        let fresh = PathRow {
            previous: Some(w),
            next: Some(v),
            rank: mid,
            next_rank: Some(r_v),
        };
        match self.rows.get(piece) {
            // Not on the path, or a leftover row ranked inside the gap.
            None => self.join_fresh(piece, fresh, v),
            Some(row) if row.rank > r_w && row.rank < r_v => self.join_fresh(piece, fresh, v),
            Some(row) if row.rank > r_w => {
                // Downstream of the gap: v .. previous(me) becomes obsolete.
                if r_p > r_w && r_p < row.rank {
                    return self.reject(w, piece);
                }
                self.rows.update(piece, |r| r.previous = Some(w));
                let wave = self.next_seq();
                self.send(
                    v,
                    Message::ModifyPath {
                        piece,
                        joiner: self.me,
                        joiner_rank: row.rank,
                        delete: true,
                        dir: Direction::Fwd,
                        wave,
                    },
                );
            }
            Some(row) if row.rank < r_w => {
                // Upstream of the gap: next(me) .. w becomes obsolete.
                if r_p > row.rank && r_p <= r_w {
                    return self.reject(w, piece);
                }
                self.rows.update(piece, |r| {
                    r.next = Some(v);
                    r.next_rank = Some(r_v);
                });
                let (fwd, bwd) = (self.next_seq(), self.next_seq());
                self.send(
                    v,
                    Message::ModifyPath {
                        piece,
                        joiner: self.me,
                        joiner_rank: row.rank,
                        delete: false,
                        dir: Direction::Fwd,
                        wave: fwd,
                    },
                );
                self.send(
                    w,
                    Message::ModifyPath {
                        piece,
                        joiner: self.me,
                        joiner_rank: row.rank,
                        delete: true,
                        dir: Direction::Bwd,
                        wave: bwd,
                    },
                );
            }
            Some(_) => self.reject(w, piece),
        }
    }

    fn join_fresh(&mut self, piece: PieceId, row: PathRow, v: NodeId) {
        self.rows.set(piece, row);
        let wave = self.next_seq();
        self.send(
            v,
            Message::ModifyPath {
                piece,
                joiner: self.me,
                joiner_rank: row.rank,
                delete: false,
                dir: Direction::Fwd,
                wave,
            },
        );
    }

    fn reject(&mut self, w: NodeId, piece: PieceId) {
        self.send(w, Message::JoinReject { piece });
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn modify_path(
        &mut self,
        from: NodeId,
        piece: PieceId,
        joiner: NodeId,
        joiner_rank: f64,
        delete: bool,
        dir: Direction,
        wave: u64,
    ) {
        if !self.local.seen_waves.insert((piece, joiner, wave)) {
            return;
        }
        if !delete {
            self.rows.update(piece, |r| match dir {
                Direction::Fwd => r.previous = Some(joiner),
                Direction::Bwd => {
                    r.next = Some(joiner);
                    r.next_rank = Some(joiner_rank);
                }
            });
            return;
        }
        if self.me == joiner {
            return;
        }
        let Some(row) = self.rows.get(piece) else {
            return;
        };
        let Some(meta) = self.meta(piece) else {
            return;
        };
        let p = &meta.piece;
        if self.me == p.source || self.me == p.proxy || self.me == p.consumer {
            return;
        }
        // Past the first hop the wave only follows intact pointers.
        let linked = match dir {
            Direction::Fwd => row.previous == Some(from),
            Direction::Bwd => row.next == Some(from),
        };
        if from != joiner && !linked {
            return;
        }
        self.rows.remove(piece);
        self.local.repairs.remove(&piece);
        let onward = match dir {
            Direction::Fwd => row.next,
            Direction::Bwd => row.previous,
        };
        if let Some(n) = onward.filter(|&n| n != joiner) {
            self.stats.waves_forwarded += 1;
            self.send(
                n,
                Message::ModifyPath {
                    piece,
                    joiner,
                    joiner_rank,
                    delete,
                    dir,
                    wave,
                },
            );
        }
    }

    /// Leaves the network: alerts every predecessor and drops all rows.
    pub(super) fn disconnect(&mut self) {
        for (piece, row) in self.rows.all() {
            if let Some(p) = row.previous {
                let failed_hop_ms = row.next.map_or(0.0, |n| self.hop_ms(n));
                self.send(
                    p,
                    Message::Alert {
                        piece,
                        failed: self.me,
                        downstream: row.next,
                        downstream_rank: row.next_rank,
                        failed_hop_ms,
                    },
                );
            }
            self.rows.remove(piece);
        }
        self.local.repairs.clear();
        self.local.collecting.clear();
    }

    /// A next hop that stopped beaconing without alerting leaves a gap.
    fn drop_dead_next_hops(&mut self, operational: &[NodeId]) {
        for (piece, row) in self.rows.all() {
            let Some(next) = row.next else {
                continue;
            };
            if operational.contains(&next) || self.local.repairs.contains_key(&piece) {
                continue;
            }
            self.rows.update(piece, |r| {
                r.next = None;
                r.next_rank = None;
            });
            self.stats.breaks += 1;
        }
    }

    fn fire_timers(&mut self) {
        let now = self.cycle;
        let due: Vec<(NodeId, u64)> = self
            .local
            .collecting
            .iter()
            .filter(|(_, c)| c.until <= now)
            .map(|(&k, _)| k)
            .collect();
        for key in due {
            let c = self.local.collecting.remove(&key).expect("listed");
            self.answer_route(key.0, key.1, c);
        }
        let expired: Vec<PieceId> = self
            .local
            .repairs
            .iter()
            .filter(|(_, r)| match r.stage {
                RepairStage::Splice { until, .. }
                | RepairStage::Route { until, .. }
                | RepairStage::Backoff { until } => until <= now,
            })
            .map(|(&p, _)| p)
            .collect();
        for piece in expired {
            let r = self.local.repairs.remove(&piece).expect("listed");
            match r.stage {
                RepairStage::Splice { .. } => {}
                RepairStage::Route { .. } => {
                    self.stats.routes_failed += 1;
                    self.retry_later(piece, r.goal);
                }
                RepairStage::Backoff { .. } => {
                    let open = self.rows.get(piece).is_some_and(|row| row.next.is_none());
                    if open {
                        self.stats.retries += 1;
                        // The disturbance that forbade the direct hop has likely passed.
                        let goal = Goal {
                            forbid_direct: false,
                            ..r.goal
                        };
                        self.local_path_config(piece, goal);
                    }
                }
            }
        }
    }

    /// Schedules another attempt after a failed discovery, or gives the
    /// piece up once the retry budget is spent.
    pub(super) fn retry_later(&mut self, piece: PieceId, goal: Goal) {
        if goal.attempts >= self.params.retries {
            self.stats.breaks += 1;
            return;
        }
        let until = self.cycle + self.params.backoff(goal.attempts);
        let goal = Goal {
            attempts: goal.attempts + 1,
            ..goal
        };
        self.local.repairs.insert(
            piece,
            Repair {
                goal,
                stage: RepairStage::Backoff { until },
            },
        );
    }
}
