//! DODAG construction and maintenance for a single node.

pub mod forward;
pub mod mrhof;
pub mod trickle;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::messages::{
    DaoAckBody, DaoBody, Destination, DioBody, DisBody, MessageBody, NodeId, TrickleParams,
};
use crate::time::{from_secs, SimTime};
use mrhof::{select_parent, Candidate, MrhofParams, INFINITE_RANK};
use trickle::{TrickleConfig, TrickleSchedule, TrickleState};

pub const MRHOF_OCP: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RplParams {
    pub dodag_id: NodeId,
    pub version: u8,
    pub mrhof: MrhofParams,
    pub trickle: TrickleConfig,
    pub upward_reachable_timeout_s: f64,
    pub downward_route_lifetime_s: f64,
    pub dao_delay_s: f64,
    pub dao_ack_timeout_s: f64,
    pub dao_max_retries: u32,
    pub dis_interval_s: f64,
    pub dis_startup_max_s: f64,
    pub repair_holddown_s: f64,
    pub etx_alpha: f64,
    pub route_maintenance_s: f64,
}

impl Default for RplParams {
    fn default() -> Self {
        RplParams {
            dodag_id: 0,
            version: 1,
            mrhof: MrhofParams::default(),
            trickle: TrickleConfig::default(),
            upward_reachable_timeout_s: 600.0,
            downward_route_lifetime_s: 600.0,
            dao_delay_s: 1.0,
            dao_ack_timeout_s: 4.0,
            dao_max_retries: 3,
            dis_interval_s: 60.0,
            dis_startup_max_s: 5.0,
            repair_holddown_s: 2.0,
            etx_alpha: 0.1,
            route_maintenance_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RplTimer {
    TrickleFire(u64),
    TrickleEnd(u64),
    Freshness(u64),
    DaoSend(u64),
    DaoAckTimeout { seq: u8, attempt: u32 },
    Dis(u64),
    RepairEnd(u64),
    RouteMaintenance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RplAction {
    Send { dest: Destination, body: MessageBody },
    Timer { at: SimTime, timer: RplTimer },
    ParentChanged { old: Option<NodeId>, new: Option<NodeId>, rank: u16 },
    Evicted { neighbor: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub last_heard: SimTime,
    pub etx: f64,
    /// Rank from the latest DIO; `None` when the neighbor is not a candidate.
    pub advertised_rank: Option<u16>,
    /// When the latest DIO from this neighbor was processed.
    pub dio_at: SimTime,
    pub tx_ok: u32,
    pub tx_failed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub next_hop: NodeId,
    pub expires: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RplStats {
    pub parent_changes: u32,
    pub evictions: u32,
    pub local_repairs: u32,
    pub dao_suspects: u32,
    pub stale_version: u32,
    pub dio_sent: u32,
    pub dio_suppressed: u32,
}

#[derive(Debug, Clone)]
pub struct Router {
    pub id: NodeId,
    pub params: RplParams,
    root: bool,
    rank: u16,
    lowest_rank: u16,
    preferred_parent: Option<NodeId>,
    pub neighbors: BTreeMap<NodeId, Neighbor>,
    pub trickle: TrickleState,
    pub routes: BTreeMap<NodeId, Route>,
    dao_seq: u8,
    dao_pending: Option<(u8, u32)>,
    dao_gen: u64,
    freshness_gen: u64,
    dis_gen: u64,
    repair_gen: u64,
    repair_until: SimTime,
    pub stats: RplStats,
}

fn push_trickle(out: &mut Vec<RplAction>, s: TrickleSchedule) {
    out.push(RplAction::Timer { at: s.fire_at, timer: RplTimer::TrickleFire(s.generation) });
    out.push(RplAction::Timer { at: s.interval_end, timer: RplTimer::TrickleEnd(s.generation) });
}

impl Router {
    fn blank(id: NodeId, params: RplParams, root: bool) -> Self {
        Router {
            id,
            trickle: TrickleState::new(params.trickle),
            params,
            root,
            rank: INFINITE_RANK,
            lowest_rank: INFINITE_RANK,
            preferred_parent: None,
            neighbors: BTreeMap::new(),
            routes: BTreeMap::new(),
            dao_seq: 0,
            dao_pending: None,
            dao_gen: 0,
            freshness_gen: 0,
            dis_gen: 0,
            repair_gen: 0,
            repair_until: 0,
            stats: RplStats::default(),
        }
    }

    /// Creates the DODAG root and starts its Trickle timer.
    pub fn start_root<R: Rng>(id: NodeId, params: RplParams, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) -> Self {
        let mut r = Router::blank(id, params, true);
        r.rank = r.params.mrhof.root_rank();
        r.lowest_rank = r.rank;
        let s = r.trickle.reset(now, rng);
        push_trickle(out, s);
        r.schedule_maintenance(now, out);
        r
    }

    /// Creates a detached router that solicits DIOs until it joins.
    pub fn start_router<R: Rng>(id: NodeId, params: RplParams, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) -> Self {
        let mut r = Router::blank(id, params, false);
        r.dis_gen += 1;
        let delay = rng.gen_range(0.0..r.params.dis_startup_max_s.max(1e-3));
        out.push(RplAction::Timer { at: now + from_secs(delay), timer: RplTimer::Dis(r.dis_gen) });
        r.schedule_maintenance(now, out);
        r
    }

    pub fn is_root(&self) -> bool {
        self.root
    }

    pub fn rank(&self) -> u16 {
        self.rank
    }

    pub fn lowest_rank(&self) -> u16 {
        self.lowest_rank
    }

    pub fn preferred_parent(&self) -> Option<NodeId> {
        self.preferred_parent
    }

    pub fn is_joined(&self) -> bool {
        self.root || self.preferred_parent.is_some()
    }

    pub fn in_repair(&self, now: SimTime) -> bool {
        !self.root && self.preferred_parent.is_none() && now < self.repair_until
    }

    /// Neighbors currently holding a finite advertised rank.
    pub fn parent_set(&self) -> impl Iterator<Item = (NodeId, u16)> + '_ {
        self.neighbors
            .iter()
            .filter_map(|(&id, n)| n.advertised_rank.map(|r| (id, r)))
    }

    pub fn dio_body(&self) -> DioBody {
        let t = &self.params.trickle;
        DioBody {
            dodag_id: self.params.dodag_id,
            version: self.params.version,
            rank: self.rank,
            of_id: MRHOF_OCP,
            trickle: TrickleParams {
                interval_min_log2: t.interval_min_log2(),
                doublings: t.doublings.min(255) as u8,
                redundancy: t.redundancy_k.min(255) as u8,
            },
            dodag_config_flags: 0,
        }
    }

    /// Records that a frame from `sender` was accepted or acknowledged.
    /// `etx_seed` initialises the estimate for a new neighbor.
    pub fn note_heard(&mut self, sender: NodeId, now: SimTime, etx_seed: f64) {
        let n = self.neighbors.entry(sender).or_insert(Neighbor {
            last_heard: now,
            etx: etx_seed.max(1.0),
            advertised_rank: None,
            dio_at: 0,
            tx_ok: 0,
            tx_failed: 0,
        });
        n.last_heard = n.last_heard.max(now);
    }

    /// Folds a unicast outcome into the link estimate. Failed exchanges are
    /// counted but leave the estimate unchanged.
    pub fn on_unicast_result(&mut self, neighbor: NodeId, success: bool, attempts: u32) {
        let alpha = self.params.etx_alpha;
        if let Some(n) = self.neighbors.get_mut(&neighbor) {
            if success {
                n.tx_ok += 1;
                n.etx = (1.0 - alpha) * n.etx + alpha * attempts.max(1) as f64;
            } else {
                n.tx_failed += 1;
            }
        }
    }

    fn trickle_reset<R: Rng>(&mut self, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) {
        let s = self.trickle.reset(now, rng);
        push_trickle(out, s);
    }

    /// Treats an event as a Trickle inconsistency.
    pub fn inconsistency<R: Rng>(&mut self, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) {
        if !self.is_joined() {
            return;
        }
        if let Some(s) = self.trickle.hear_inconsistent(now, rng) {
            push_trickle(out, s);
        }
    }

    pub fn process_dio<R: Rng>(&mut self, now: SimTime, rng: &mut R, sender: NodeId, dio: &DioBody, out: &mut Vec<RplAction>) {
        if dio.dodag_id != self.params.dodag_id {
            return;
        }
        if dio.version != self.params.version {
            self.stats.stale_version += 1;
            return;
        }
        if self.root {
            if dio.rank != INFINITE_RANK {
                self.trickle.hear_consistent();
            }
            return;
        }
        if self.in_repair(now) {
            return;
        }
        let Some(n) = self.neighbors.get_mut(&sender) else {
            return;
        };
        n.advertised_rank = (dio.rank != INFINITE_RANK).then_some(dio.rank);
        n.dio_at = now;
        let before = (self.preferred_parent, self.rank);
        self.reselect(now, rng, out);
        if before == (self.preferred_parent, self.rank) && dio.rank != INFINITE_RANK && self.is_joined() {
            self.trickle.hear_consistent();
        }
    }

    pub fn process_dis<R: Rng>(&mut self, now: SimTime, rng: &mut R, sender: NodeId, _dis: &DisBody, unicast: bool, out: &mut Vec<RplAction>) {
        if !self.is_joined() {
            return;
        }
        if unicast {
            out.push(RplAction::Send {
                dest: Destination::Node(sender),
                body: MessageBody::Dio(self.dio_body()),
            });
            self.stats.dio_sent += 1;
        } else {
            let s = self.trickle.reset(now, rng);
            push_trickle(out, s);
        }
    }

    pub fn process_dao<R: Rng>(&mut self, now: SimTime, rng: &mut R, sender: NodeId, dao: &DaoBody, out: &mut Vec<RplAction>) {
        let _ = rng;
        if !self.is_joined() {
            return;
        }
        let expires = now + from_secs(dao.path_lifetime_s as f64);
        for &target in &dao.reachable {
            self.routes.insert(target, Route { next_hop: sender, expires });
        }
        if dao.ack_requested {
            out.push(RplAction::Send {
                dest: Destination::Node(sender),
                body: MessageBody::DaoAck(DaoAckBody { sequence: dao.sequence, status: 0 }),
            });
        }
        if let Some(p) = self.preferred_parent {
            out.push(RplAction::Send {
                dest: Destination::Node(p),
                body: MessageBody::Dao(DaoBody {
                    reachable: dao.reachable.clone(),
                    path_lifetime_s: dao.path_lifetime_s,
                    ack_requested: false,
                    sequence: dao.sequence,
                }),
            });
        }
    }

    pub fn process_dao_ack(&mut self, ack: &DaoAckBody) {
        if matches!(self.dao_pending, Some((seq, _)) if seq == ack.sequence) {
            self.dao_pending = None;
        }
    }

    fn candidates(&self) -> Vec<Candidate> {
        self.neighbors
            .iter()
            .filter_map(|(&id, n)| {
                n.advertised_rank.map(|r| Candidate { id, advertised_rank: r, link_etx: n.etx })
            })
            .collect()
    }

    fn reselect<R: Rng>(&mut self, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) {
        if self.root {
            return;
        }
        let sel = select_parent(&self.candidates(), self.preferred_parent, self.lowest_rank, &self.params.mrhof);
        let Some(sel) = sel else {
            if self.preferred_parent.is_some() {
                self.local_repair(now, rng, out);
            }
            return;
        };
        let old = self.preferred_parent;
        let rank_changed = sel.rank != self.rank;
        self.rank = sel.rank;
        self.lowest_rank = self.lowest_rank.min(sel.rank);
        if old != Some(sel.parent) {
            self.preferred_parent = Some(sel.parent);
            if old.is_some() {
                self.stats.parent_changes += 1;
            }
            self.dis_gen += 1;
            out.push(RplAction::ParentChanged { old, new: Some(sel.parent), rank: sel.rank });
            self.schedule_dao(now, rng, out);
            self.arm_freshness(out);
        }
        if rank_changed || old != Some(sel.parent) {
            self.trickle_reset(now, rng, out);
        }
    }

    fn local_repair<R: Rng>(&mut self, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) {
        let _ = rng;
        let old = self.preferred_parent.take();
        self.rank = INFINITE_RANK;
        self.lowest_rank = INFINITE_RANK;
        for n in self.neighbors.values_mut() {
            n.advertised_rank = None;
        }
        self.stats.local_repairs += 1;
        self.trickle.stop();
        self.freshness_gen += 1;
        self.dao_gen += 1;
        self.dao_pending = None;
        out.push(RplAction::ParentChanged { old, new: None, rank: INFINITE_RANK });
        out.push(RplAction::Send {
            dest: Destination::Multicast,
            body: MessageBody::Dio(self.dio_body()),
        });
        self.stats.dio_sent += 1;
        self.repair_gen += 1;
        self.repair_until = now + from_secs(self.params.repair_holddown_s);
        out.push(RplAction::Timer { at: self.repair_until, timer: RplTimer::RepairEnd(self.repair_gen) });
    }

    fn arm_freshness(&mut self, out: &mut Vec<RplAction>) {
        self.freshness_gen += 1;
        if let Some(n) = self.preferred_parent.and_then(|p| self.neighbors.get(&p)) {
            let at = n.last_heard + from_secs(self.params.upward_reachable_timeout_s);
            out.push(RplAction::Timer { at, timer: RplTimer::Freshness(self.freshness_gen) });
        }
    }

    /// Evicts the preferred parent and any other candidate not heard within
    /// the upward reachability timeout, then reselects.
    pub fn check_parent_freshness<R: Rng>(&mut self, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) {
        let timeout = from_secs(self.params.upward_reachable_timeout_s);
        let Some(p) = self.preferred_parent else {
            return;
        };
        let deadline = self.neighbors.get(&p).map_or(now, |n| n.last_heard + timeout);
        if now < deadline {
            self.arm_freshness(out);
            return;
        }
        let stale: Vec<NodeId> = self
            .neighbors
            .iter()
            .filter(|(&id, n)| id == p || (n.advertised_rank.is_some() && n.last_heard + timeout <= now))
            .map(|(&id, _)| id)
            .collect();
        for id in stale {
            self.neighbors.remove(&id);
            self.stats.evictions += 1;
            out.push(RplAction::Evicted { neighbor: id });
        }
        self.reselect(now, rng, out);
    }

    fn schedule_dao<R: Rng>(&mut self, now: SimTime, rng: &mut R, out: &mut Vec<RplAction>) {
        self.dao_gen += 1;
        let delay = rng.gen_range(0.0..self.params.dao_delay_s.max(1e-3));
        out.push(RplAction::Timer { at: now + from_secs(delay), timer: RplTimer::DaoSend(self.dao_gen) });
    }

    fn send_dao(&mut self, seq: u8, out: &mut Vec<RplAction>) {
        let Some(p) = self.preferred_parent else {
            return;
        };
        out.push(RplAction::Send {
            dest: Destination::Node(p),
            body: MessageBody::Dao(DaoBody {
                reachable: vec![self.id],
                path_lifetime_s: self.params.downward_route_lifetime_s.round() as u32,
                ack_requested: true,
                sequence: seq,
            }),
        });
    }

    fn schedule_maintenance(&self, now: SimTime, out: &mut Vec<RplAction>) {
        out.push(RplAction::Timer {
            at: now + from_secs(self.params.route_maintenance_s),
            timer: RplTimer::RouteMaintenance,
        });
    }

    pub fn on_timer<R: Rng>(&mut self, now: SimTime, rng: &mut R, timer: RplTimer, out: &mut Vec<RplAction>) {
        match timer {
            RplTimer::TrickleFire(g) => {
                let before = self.trickle.suppressed_count;
                if self.is_joined() && self.trickle.fire(g) {
                    out.push(RplAction::Send {
                        dest: Destination::Multicast,
                        body: MessageBody::Dio(self.dio_body()),
                    });
                    self.stats.dio_sent += 1;
                }
                self.stats.dio_suppressed += self.trickle.suppressed_count - before;
            }
            RplTimer::TrickleEnd(g) => {
                if let Some(s) = self.trickle.interval_end(g, now, rng) {
                    push_trickle(out, s);
                }
            }
            RplTimer::Freshness(g) => {
                if g == self.freshness_gen {
                    self.check_parent_freshness(now, rng, out);
                }
            }
            RplTimer::DaoSend(g) => {
                if g != self.dao_gen || self.preferred_parent.is_none() {
                    return;
                }
                self.dao_seq = self.dao_seq.wrapping_add(1);
                let seq = self.dao_seq;
                self.dao_pending = Some((seq, 0));
                self.send_dao(seq, out);
                out.push(RplAction::Timer {
                    at: now + from_secs(self.params.dao_ack_timeout_s),
                    timer: RplTimer::DaoAckTimeout { seq, attempt: 0 },
                });
                out.push(RplAction::Timer {
                    at: now + from_secs(self.params.downward_route_lifetime_s / 2.0),
                    timer: RplTimer::DaoSend(g),
                });
            }
            RplTimer::DaoAckTimeout { seq, attempt } => {
                if self.dao_pending != Some((seq, attempt)) {
                    return;
                }
                if attempt < self.params.dao_max_retries {
                    self.dao_pending = Some((seq, attempt + 1));
                    self.send_dao(seq, out);
                    out.push(RplAction::Timer {
                        at: now + from_secs(self.params.dao_ack_timeout_s),
                        timer: RplTimer::DaoAckTimeout { seq, attempt: attempt + 1 },
                    });
                } else {
                    self.dao_pending = None;
                    self.stats.dao_suspects += 1;
                }
            }
            RplTimer::Dis(g) | RplTimer::RepairEnd(g) => {
                let live = match timer {
                    RplTimer::Dis(_) => g == self.dis_gen,
                    _ => g == self.repair_gen,
                };
                if !live || self.is_joined() {
                    return;
                }
                out.push(RplAction::Send {
                    dest: Destination::Multicast,
                    body: MessageBody::Dis(DisBody { solicited: None }),
                });
                self.dis_gen += 1;
                out.push(RplAction::Timer {
                    at: now + from_secs(self.params.dis_interval_s),
                    timer: RplTimer::Dis(self.dis_gen),
                });
            }
            RplTimer::RouteMaintenance => {
                self.routes.retain(|_, r| r.expires > now);
                self.schedule_maintenance(now, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dio(rank: u16) -> DioBody {
        let r = Router::blank(0, RplParams::default(), true);
        DioBody { rank, ..r.dio_body() }
    }

    fn joined_router(rng: &mut ChaCha8Rng) -> Router {
        let mut out = Vec::new();
        let mut r = Router::start_router(5, RplParams::default(), 0, rng, &mut out);
        r.note_heard(1, 0, 1.0);
        r.process_dio(0, rng, 1, &dio(256), &mut out);
        r
    }

    #[test]
    fn joins_on_first_dio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = joined_router(&mut rng);
        assert_eq!(r.preferred_parent(), Some(1));
        assert_eq!(r.rank(), 512);
        assert_eq!(r.lowest_rank(), 512);
    }

    #[test]
    fn poison_from_only_parent_triggers_repair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = joined_router(&mut rng);
        let mut out = Vec::new();
        r.process_dio(10, &mut rng, 1, &dio(INFINITE_RANK), &mut out);
        assert_eq!(r.preferred_parent(), None);
        assert_eq!(r.rank(), INFINITE_RANK);
        assert!(out.iter().any(|a| matches!(a, RplAction::Send { dest: Destination::Multicast, body: MessageBody::Dio(d) } if d.rank == INFINITE_RANK)));
        // DIOs in the holddown are ignored
        r.note_heard(2, 11, 1.0);
        r.process_dio(11, &mut rng, 2, &dio(256), &mut out);
        assert_eq!(r.preferred_parent(), None);
        let later = 11 + from_secs(2.0);
        r.process_dio(later, &mut rng, 2, &dio(256), &mut out);
        assert_eq!(r.preferred_parent(), Some(2));
    }

    #[test]
    fn stale_parent_is_evicted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = joined_router(&mut rng);
        let mut out = Vec::new();
        r.check_parent_freshness(from_secs(599.0), &mut rng, &mut out);
        assert_eq!(r.preferred_parent(), Some(1));
        r.check_parent_freshness(from_secs(600.0), &mut rng, &mut out);
        assert_eq!(r.preferred_parent(), None);
        assert!(out.contains(&RplAction::Evicted { neighbor: 1 }));
    }

    #[test]
    fn failed_unicasts_leave_etx_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = joined_router(&mut rng);
        r.on_unicast_result(1, false, 3);
        assert_eq!(r.neighbors[&1].etx, 1.0);
        r.on_unicast_result(1, true, 3);
        assert!((r.neighbors[&1].etx - 1.2).abs() < 1e-12);
    }

    #[test]
    fn dao_retries_then_marks_suspect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = joined_router(&mut rng);
        let mut out = Vec::new();
        let g = r.dao_gen;
        r.on_timer(0, &mut rng, RplTimer::DaoSend(g), &mut out);
        let seq = r.dao_seq;
        for attempt in 0..=3 {
            r.on_timer(0, &mut rng, RplTimer::DaoAckTimeout { seq, attempt }, &mut out);
        }
        assert_eq!(r.stats.dao_suspects, 1);
        let daos = out
            .iter()
            .filter(|a| matches!(a, RplAction::Send { body: MessageBody::Dao(_), .. }))
            .count();
        assert_eq!(daos, 4);
    }
}
