//! TTL-limited route discovery that prefers the route whose weakest
//! transmitter lives longest.

use crate::netmodel::{NodeId, PathRow, PieceId};

use super::message::{Message, RouteReply, RouteRequest};
use super::node::NodeCtx;
use super::{Collect, Goal, Repair, RepairStage};

impl NodeCtx<'_> {
    /// Unicasts a request to every usable neighbor. Relays may not already
    /// carry the piece, so an installed route never crosses the old path.
    pub(super) fn start_route(&mut self, piece: PieceId, goal: Goal) {
        let Some(my) = self.rows.get(piece) else {
            return;
        };
        let rate = self.meta(piece).map_or(0.0, |m| m.piece.rate as f64);
        let req_id = self.next_seq();
        let ttl = self.params.ttl;
        let mut sent = false;
        for y in self.neighbors() {
            if Some(y) == goal.avoid {
                continue;
            }
            if y == goal.target {
                if goal.forbid_direct {
                    continue;
                }
            } else if ttl == 0 {
                continue;
            }
            let req = RouteRequest {
                piece,
                origin: self.me,
                target: goal.target,
                req_id,
                relays_left: ttl,
                min_life: self.own_lifetime_with(y, rate),
                hops: vec![self.me],
                avoid: goal.avoid,
                origin_rank: my.rank,
            };
            self.send(y, Message::RouteRequest(req));
            sent = true;
        }
        if !sent {
            self.stats.routes_failed += 1;
            self.retry_later(piece, goal);
            return;
        }
        self.stats.routes_started += 1;
        let until = self.cycle + self.params.route_timeout();
        self.local.repairs.insert(
            piece,
            Repair {
                goal,
                stage: RepairStage::Route { req_id, until },
            },
        );
    }

    pub(super) fn handle_route_request(&mut self, mut req: RouteRequest) {
        if req.hops.contains(&self.me) || Some(self.me) == req.avoid {
            return;
        }
        if self.me == req.target {
            let key = (req.origin, req.req_id);
            if self.rows.get(req.piece).is_none() {
                return;
            }
            // Copies arriving after the answer went out are stale.
            if !self.local.collecting.contains_key(&key) && !self.local.seen_requests.insert(key) {
                return;
            }
            let until = self.cycle + self.params.route_wait;
            let mut route = req.hops;
            route.push(self.me);
            self.local
                .collecting
                .entry(key)
                .or_insert_with(|| Collect {
                    piece: req.piece,
                    origin_rank: req.origin_rank,
                    until,
                    arrivals: Vec::new(),
                    avoid: req.avoid,
                })
                .arrivals
                .push((req.min_life, route));
            return;
        }
        if self.rows.get(req.piece).is_some()
            || req.relays_left == 0
            || !self.local.seen_requests.insert((req.origin, req.req_id))
        {
            return;
        }
        let rate = self.meta(req.piece).map_or(0.0, |m| m.piece.rate as f64);
        req.relays_left -= 1;
        req.hops.push(self.me);
        for y in self.neighbors() {
            if req.hops.contains(&y) || Some(y) == req.avoid {
                continue;
            }
            if y != req.target && req.relays_left == 0 {
                continue;
            }
            let mut fwd = req.clone();
            fwd.min_life = req.min_life.min(self.own_lifetime_with(y, rate));
            self.send(y, Message::RouteRequest(fwd));
        }
    }

    /// Picks the longest-lived collected route (then fewer hops, then the
    /// smallest node sequence) and sends the reply back along it.
    pub(super) fn answer_route(&mut self, origin: NodeId, req_id: u64, c: Collect) {
        let Some(row) = self.rows.get(c.piece) else {
            return;
        };
        if row.previous.is_some_and(|p| p != origin && Some(p) != c.avoid) {
            return;
        }
        if row.rank <= c.origin_rank {
            return;
        }
        let Some((_, route)) = c.arrivals.into_iter().reduce(|best, cand| {
            let better = cand.0 > best.0
                || (cand.0 == best.0
                    && (cand.1.len() < best.1.len()
                        || (cand.1.len() == best.1.len() && cand.1 < best.1)));
            if better {
                cand
            } else {
                best
            }
        }) else {
            return;
        };
        let last_relay = route[route.len() - 2];
        self.rows.update(c.piece, |r| r.previous = Some(last_relay));
        let reply = RouteReply {
            piece: c.piece,
            req_id,
            route,
            origin_rank: c.origin_rank,
            target_rank: row.rank,
        };
        self.send(last_relay, Message::RouteReply(reply));
    }

    pub(super) fn handle_route_reply(&mut self, rep: RouteReply) {
        let Some(k) = rep.route.iter().position(|&n| n == self.me) else {
            return;
        };
        let piece = rep.piece;
        if k == 0 {
            let pending = matches!(
                self.local.repairs.get(&piece),
                Some(Repair { stage: RepairStage::Route { req_id, .. }, .. }) if *req_id == rep.req_id
            );
            let open = self.rows.get(piece).is_some_and(|r| r.next.is_none());
            if pending && open {
                self.local.repairs.remove(&piece);
                self.rows.update(piece, |r| {
                    r.next = Some(rep.route[1]);
                    r.next_rank = Some(rep.rank_at(1));
                });
                self.stats.routes_installed += 1;
            }
            return;
        }
        if self.rows.get(piece).is_some() || k + 1 >= rep.route.len() {
            return;
        }
        self.rows.set(
            piece,
            PathRow {
                previous: Some(rep.route[k - 1]),
                next: Some(rep.route[k + 1]),
                rank: rep.rank_at(k),
                next_rank: Some(rep.rank_at(k + 1)),
            },
        );
        self.send(rep.route[k - 1], Message::RouteReply(rep));
    }
}
