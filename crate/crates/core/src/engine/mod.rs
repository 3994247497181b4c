//! Discrete-event engine driving one simulated round.

pub mod config;
pub mod node;
pub mod topology;
pub mod traffic;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{AdversaryState, AttackKind, WormholeEndpoint};
use crate::linklayer::{energy_report, Frame, FrameBody, RadioMedium, TxOutcome};
use crate::messages::{
    classify_code, decode, encode, secure_unwrap, secure_wrap, open_sealed, CcBody, ControlMessage,
    Content, CounterSource, Decoded, Destination, MessageBody, MessageError, MessageKind, NodeId,
    ReplayWatermarks, SecurityLevel,
};
use crate::rpl::forward::{DataBuffer, DataPacket, DropReason, Forward};
use crate::rpl::mrhof::INFINITE_RANK;
use crate::rpl::{RplAction, RplTimer, Router};
use crate::secure::{
    accept_policy, respond_cc, ChallengeOutcome, ConsistencyChecker, KeyStore, ResponseOutcome,
    TimeoutOutcome, Verdict,
};
use crate::time::{from_secs, SimTime};
use crate::trace::TraceRecord;
use config::{ConfigError, Role, ScenarioConfig};
use node::{Node, Outgoing, TxLabel};

/// Named RNG streams; each consumer draws from its own so adding one does
/// not perturb the others.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Radio = 1,
    Jitter = 2,
    Trickle = 3,
    Phase = 4,
    Cc = 5,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

#[derive(Debug, Clone)]
enum Ev {
    Arrive { to: NodeId, frame: Arc<Frame> },
    TxDone { node: NodeId, outcome: TxOutcome, attempts: u32, dest: Destination, data: bool },
    Rpl { node: NodeId, timer: RplTimer },
    CcTimeout { node: NodeId, peer: NodeId, nonce: u16, attempt: u32 },
    AppSend { node: NodeId },
    DataRetry { node: NodeId },
    BufferExpire { node: NodeId },
    Activate,
    Tunnel { to: NodeId, frame: Arc<Frame> },
    ReplayDone { endpoint: NodeId },
    Snapshot,
}

struct Scheduled {
    time: SimTime,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        (self.time, self.seq) == (o.time, o.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    // min-heap on (time, seq)
    fn cmp(&self, o: &Self) -> Ordering {
        (o.time, o.seq).cmp(&(self.time, self.seq))
    }
}

const MAX_VIOLATION_RECORDS: u32 = 50;

fn code_labels(bytes: &[u8]) -> (&'static str, &'static str) {
    match bytes.first().and_then(|&c| classify_code(c)) {
        Some((k, v)) => (k.as_str(), v.as_str()),
        None => ("unknown", "-"),
    }
}

pub struct Simulator {
    cfg: ScenarioConfig,
    now: SimTime,
    duration: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    medium: RadioMedium,
    nodes: BTreeMap<NodeId, Node>,
    wormholes: BTreeMap<NodeId, WormholeEndpoint>,
    radio_rng: ChaCha8Rng,
    trickle_rng: ChaCha8Rng,
    root: NodeId,
    window: SimTime,
    cc_timeout: SimTime,
    trace: Vec<TraceRecord>,
    resolved: HashSet<(NodeId, u32)>,
    violations: u32,
}

impl Simulator {
    pub fn new(cfg: &ScenarioConfig, seed: u64, round: u32) -> Result<Self, ConfigError> {
        topology::build_topology(cfg)?;
        let cfg = cfg.clone();
        let mut phase_rng = stream(seed, Stream::Phase);
        let mut jitter_rng = stream(seed, Stream::Jitter);
        let mut cc_rng = stream(seed, Stream::Cc);
        let root = cfg.root().expect("validated").id;
        let attack = cfg.attack.clone();
        let activation = from_secs(attack.activation_time_s);
        let mut medium = RadioMedium::new(cfg.radio, cfg.rdc);
        let mut specs = cfg.topology.clone();
        specs.sort_by_key(|n| n.id);
        for n in &specs {
            medium.add_node(n.id, (n.x, n.y), &mut phase_rng);
            if let Some(ph) = n.wake_phase_ms {
                medium.set_phase(n.id, from_secs(ph / 1000.0));
            }
        }

        // A pair of adversaries is a wormhole; without an attack the pair
        // stays as silent listeners.
        let mut wormholes = BTreeMap::new();
        let pair = attack.adversary_ids.len() == 2
            && matches!(attack.kind, AttackKind::Wormhole | AttackKind::None);
        if pair {
            let (a, b) = (attack.adversary_ids[0], attack.adversary_ids[1]);
            let enabled = attack.kind == AttackKind::Wormhole;
            for (x, y) in [(a, b), (b, a)] {
                medium.set_promiscuous(x);
                wormholes.insert(
                    x,
                    WormholeEndpoint::new(x, y, attack.wormhole_link_latency_ms, activation, enabled),
                );
            }
        }

        let params = cfg.rpl_params();
        let mut sim = Simulator {
            now: 0,
            duration: from_secs(cfg.duration_s),
            seq: 0,
            queue: BinaryHeap::new(),
            medium,
            nodes: BTreeMap::new(),
            wormholes,
            radio_rng: stream(seed, Stream::Radio),
            trickle_rng: stream(seed, Stream::Trickle),
            root,
            window: from_secs(cfg.rdc.acceptance_window_ms as f64 / 1000.0),
            cc_timeout: from_secs(cfg.security.cc_timeout_s),
            trace: Vec::new(),
            resolved: HashSet::new(),
            violations: 0,
            cfg,
        };

        let mut legit = Vec::new();
        let mut boot: Vec<(NodeId, Vec<RplAction>)> = Vec::new();
        for n in &specs {
            if sim.wormholes.contains_key(&n.id) {
                continue;
            }
            let is_adv = sim.cfg.is_adversary(n.id);
            let has_key = !is_adv || attack.has_key;
            let keystore = match (n.security_mode.speaks_secure(), has_key) {
                (true, true) => KeyStore::with_key(n.security_mode, sim.cfg.security.key)
                    .expect("key supplied"),
                (true, false) => KeyStore::keyless(n.security_mode),
                (false, _) => KeyStore::unsecured(),
            };
            let adversary = is_adv.then(|| {
                AdversaryState::new(attack.kind, activation, attack.speaks_secure)
            });
            let mut acts = Vec::new();
            let router = if n.role == Role::Root {
                Router::start_root(n.id, params.clone(), 0, &mut sim.trickle_rng, &mut acts)
            } else {
                Router::start_router(n.id, params.clone(), 0, &mut sim.trickle_rng, &mut acts)
            };
            use rand::Rng;
            let nonce_start: u16 = cc_rng.gen();
            sim.nodes.insert(
                n.id,
                Node {
                    id: n.id,
                    legit: !is_adv,
                    mode: n.security_mode,
                    router,
                    keystore,
                    counter: CounterSource::new(),
                    watermarks: ReplayWatermarks::new(),
                    checker: ConsistencyChecker::new(
                        sim.cfg.security.cc_trigger,
                        sim.cfg.security.cc_retries,
                        nonce_start,
                    ),
                    buffer: DataBuffer::new(sim.cfg.buffer),
                    mac_queue: Default::default(),
                    radio_busy: false,
                    adversary,
                    app_seq: 0,
                    joined_at: 0,
                },
            );
            if !is_adv {
                legit.push(n.id);
            }
            boot.push((n.id, acts));
        }
        sim.trace.push(TraceRecord::Meta {
            round,
            seed,
            duration_us: sim.duration,
            activation_us: activation,
            attack: attack.kind.as_str().to_string(),
            rdc: format!("{:?}", sim.cfg.rdc.kind),
            legit: legit.clone(),
            adversaries: attack.adversary_ids.clone(),
            root,
        });
        for (id, acts) in boot {
            sim.apply(id, acts);
        }
        let t = sim.cfg.traffic.clone();
        for &id in &legit {
            if id == root {
                continue;
            }
            for at in traffic::app_traffic(t.period_s, t.jitter_s, t.start_s, sim.cfg.duration_s, &mut jitter_rng) {
                sim.schedule(at, Ev::AppSend { node: id });
            }
        }
        if attack.kind != AttackKind::None {
            sim.schedule(activation, Ev::Activate);
        }
        sim.schedule(from_secs(sim.cfg.snapshot_interval_s), Ev::Snapshot);
        Ok(sim)
    }

    fn schedule(&mut self, at: SimTime, ev: Ev) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Scheduled { time: at.max(self.now), seq: self.seq, ev });
    }

    fn rx(&mut self, node: NodeId, link_src: NodeId, kind: &str, verdict: &str) {
        self.trace.push(TraceRecord::Rx {
            time_us: self.now,
            node,
            link_src,
            kind: kind.to_string(),
            verdict: verdict.to_string(),
        });
    }

    fn drop_packet(&mut self, node: NodeId, p: DataPacket, reason: DropReason) {
        self.resolved.insert((p.origin, p.seq));
        self.trace.push(TraceRecord::AppDrop {
            time_us: self.now,
            node,
            origin: p.origin,
            seq: p.seq,
            reason: reason.as_str().to_string(),
        });
    }

    /// Runs to the end of the round and returns the trace.
    pub fn run(mut self) -> Vec<TraceRecord> {
        while let Some(top) = self.queue.peek() {
            if top.time > self.duration {
                break;
            }
            let Scheduled { time, ev, .. } = self.queue.pop().expect("peeked");
            self.now = time;
            self.handle(ev);
            if self.cfg.check_invariants {
                self.check_invariants();
            }
        }
        self.now = self.duration;
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Arrive { to, frame } => self.on_arrive(to, frame),
            Ev::TxDone { node, outcome, attempts, dest, data } => {
                self.on_tx_done(node, outcome, attempts, dest, data)
            }
            Ev::Rpl { node, timer } => {
                let mut acts = Vec::new();
                if let Some(n) = self.nodes.get_mut(&node) {
                    n.router.on_timer(self.now, &mut self.trickle_rng, timer, &mut acts);
                }
                self.apply(node, acts);
            }
            Ev::CcTimeout { node, peer, nonce, attempt } => self.on_cc_timeout(node, peer, nonce, attempt),
            Ev::AppSend { node } => self.on_app_send(node),
            Ev::DataRetry { node } => self.pump(node),
            Ev::BufferExpire { node } => self.expire(node),
            Ev::Activate => self.on_activate(),
            Ev::Tunnel { to, frame } => {
                if let Some(ep) = self.wormholes.get_mut(&to) {
                    ep.replay_out.push_back((*frame).clone());
                    if !ep.busy {
                        self.replay_next(to);
                    }
                }
            }
            Ev::ReplayDone { endpoint } => {
                if let Some(ep) = self.wormholes.get_mut(&endpoint) {
                    ep.busy = false;
                }
                self.replay_next(endpoint);
            }
            Ev::Snapshot => {
                self.snapshot();
                let next = self.now + from_secs(self.cfg.snapshot_interval_s);
                self.schedule(next, Ev::Snapshot);
            }
        }
    }

    fn snapshot(&mut self) {
        let edges = self
            .nodes
            .values()
            .filter_map(|n| n.router.preferred_parent().map(|p| (n.id, p)))
            .collect();
        self.trace.push(TraceRecord::Snapshot { time_us: self.now, edges });
    }

    fn apply(&mut self, id: NodeId, actions: Vec<RplAction>) {
        for a in actions {
            match a {
                RplAction::Send { dest, body } => self.emit_control(id, dest, body),
                RplAction::Timer { at, timer } => self.schedule(at, Ev::Rpl { node: id, timer }),
                RplAction::ParentChanged { old, new, rank } => {
                    self.trace.push(TraceRecord::Parent { time_us: self.now, node: id, old, new, rank });
                    let now = self.now;
                    let Some(n) = self.nodes.get_mut(&id) else { continue };
                    if new.is_some() {
                        if old.is_none() {
                            n.joined_at = now;
                        }
                        n.buffer.parent_found();
                        self.pump(id);
                    } else {
                        n.buffer.parent_lost(now);
                        if let Some(at) = n.buffer.next_expiry() {
                            self.schedule(at, Ev::BufferExpire { node: id });
                        }
                    }
                }
                RplAction::Evicted { neighbor } => {
                    self.trace.push(TraceRecord::Evict { time_us: self.now, node: id, neighbor });
                    if let Some(n) = self.nodes.get_mut(&id) {
                        n.checker.forget(neighbor);
                    }
                }
            }
        }
    }

    /// Serializes and queues a control message from `id`.
    fn emit_control(&mut self, id: NodeId, dest: Destination, body: MessageBody) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(&id) else { return };
        if n.silent(now) {
            return;
        }
        let kind = body.kind();
        let (bytes, variant, counter) = if n.mode.speaks_secure() {
            let Some(key) = n.keystore.signing_key().copied() else { return };
            let Ok(c) = n.counter.next_counter() else { return };
            let Ok(msg) = secure_wrap(id, dest, &body, &key, c, SecurityLevel::EncThenMac) else {
                return;
            };
            (encode(&msg), "secure", Some(c))
        } else {
            if kind == MessageKind::Cc {
                return;
            }
            (encode(&ControlMessage::base(id, dest, body)), "base", None)
        };
        let Ok(bytes) = bytes else { return };
        n.mac_queue.push_back(Outgoing {
            dest,
            body: FrameBody::Control(bytes),
            label: TxLabel { kind: kind.as_str(), variant, counter },
        });
        self.try_start(id);
    }

    fn try_start(&mut self, id: NodeId) {
        let now = self.now;
        let out = {
            let Some(n) = self.nodes.get_mut(&id) else { return };
            if n.radio_busy {
                return;
            }
            if n.silent(now) {
                n.mac_queue.clear();
                return;
            }
            let Some(out) = n.mac_queue.pop_front() else { return };
            n.radio_busy = true;
            out
        };
        let data = matches!(out.body, FrameBody::Data(_));
        let mut frame = Frame { link_src: id, link_dst: out.dest, tx_start: now, body: out.body };
        let nodes = &self.nodes;
        let plan = self.medium.transmit(
            id,
            out.dest,
            frame.len(),
            now,
            |r| nodes.get(&r).is_some_and(|n| !n.silent(now)),
            &mut self.radio_rng,
        );
        frame.tx_start = plan.tx_start;
        let frame = Arc::new(frame);
        for d in plan.deliveries.iter().chain(plan.taps.iter()) {
            self.schedule(d.at, Ev::Arrive { to: d.receiver, frame: frame.clone() });
        }
        self.trace.push(TraceRecord::Tx {
            time_us: now,
            sender: id,
            receiver: match out.dest {
                Destination::Node(r) => r.to_string(),
                Destination::Multicast => "*".into(),
            },
            kind: out.label.kind.into(),
            variant: out.label.variant.into(),
            counter: out.label.counter.map_or("-".into(), |c| c.to_string()),
            outcome: match plan.outcome {
                TxOutcome::Acked => "acked",
                TxOutcome::TxFailed => "failed",
                TxOutcome::Broadcast => "broadcast",
            }
            .into(),
        });
        self.schedule(
            plan.end,
            Ev::TxDone { node: id, outcome: plan.outcome, attempts: plan.attempts, dest: out.dest, data },
        );
    }

    fn on_tx_done(&mut self, id: NodeId, outcome: TxOutcome, attempts: u32, dest: Destination, data: bool) {
        let now = self.now;
        let etx = self.medium.link_etx();
        let Some(n) = self.nodes.get_mut(&id) else { return };
        n.radio_busy = false;
        let ok = outcome == TxOutcome::Acked;
        if let Destination::Node(r) = dest {
            if ok {
                n.router.note_heard(r, now, etx);
            }
            n.router.on_unicast_result(r, ok, attempts);
        }
        if data {
            let has_parent = n.has_parent();
            n.buffer.tx_done(ok, now, has_parent);
            if !ok {
                let at = n.buffer.backoff_until();
                self.schedule(at, Ev::DataRetry { node: id });
                if !has_parent {
                    if let Some(at) = self.nodes[&id].buffer.next_expiry() {
                        self.schedule(at, Ev::BufferExpire { node: id });
                    }
                }
            }
        }
        self.pump(id);
        self.try_start(id);
    }

    /// Hands the head data packet to the MAC when the node has a parent.
    fn pump(&mut self, id: NodeId) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(&id) else { return };
        let Some(parent) = n.router.preferred_parent() else { return };
        if let Some(p) = n.buffer.next_to_send(now, true) {
            n.mac_queue.push_back(Outgoing {
                dest: Destination::Node(parent),
                body: FrameBody::Data(p),
                label: TxLabel { kind: "data", variant: "-", counter: None },
            });
        }
        self.try_start(id);
    }

    fn expire(&mut self, id: NodeId) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(&id) else { return };
        let dropped = n.buffer.expire(now);
        let next = n.buffer.next_expiry();
        for p in dropped {
            self.drop_packet(id, p, DropReason::NoRoute);
        }
        if let Some(at) = next {
            self.schedule(at, Ev::BufferExpire { node: id });
        }
    }

    fn on_app_send(&mut self, id: NodeId) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(&id) else { return };
        let p = DataPacket { origin: id, seq: n.app_seq, send_time: now, hops: 0 };
        n.app_seq += 1;
        self.trace.push(TraceRecord::AppSend { time_us: now, origin: id, seq: p.seq });
        self.accept_data(id, p, false);
    }

    fn accept_data(&mut self, id: NodeId, p: DataPacket, relayed: bool) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(&id) else { return };
        let has_parent = n.has_parent();
        match n.buffer.forward_data(p, now, has_parent, relayed) {
            Forward::Drop(p, reason) => self.drop_packet(id, p, reason),
            Forward::Buffered => {
                if !has_parent {
                    if let Some(at) = n.buffer.next_expiry() {
                        self.schedule(at, Ev::BufferExpire { node: id });
                    }
                }
                self.pump(id);
            }
        }
    }

    fn on_activate(&mut self) {
        let now = self.now;
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let n = self.nodes.get_mut(&id).expect("present");
            let drops = n
                .adversary
                .as_ref()
                .is_some_and(|a| matches!(a.kind, AttackKind::Blackhole | AttackKind::SelectiveForward) && a.active(now));
            if drops {
                for p in n.buffer.drain_queued() {
                    self.drop_packet(id, p, DropReason::Adversary);
                }
            }
        }
    }

    fn on_arrive(&mut self, to: NodeId, frame: Arc<Frame>) {
        let now = self.now;
        if let Some(ep) = self.wormholes.get_mut(&to) {
            if ep.observe(now, &frame) {
                let peer = ep.peer;
                let at = now + ep.latency;
                if let Some(f) = ep.wormhole_forward() {
                    self.schedule(at, Ev::Tunnel { to: peer, frame: Arc::new(f) });
                }
            }
            return;
        }
        if let Destination::Node(x) = frame.link_dst {
            if x != to {
                return;
            }
        }
        let (kind, _) = match &frame.body {
            FrameBody::Control(b) => code_labels(b),
            FrameBody::Data(_) => ("data", "-"),
        };
        if now.saturating_sub(frame.tx_start) > self.window {
            if kind != "data" {
                self.rx(to, frame.link_src, kind, "stale");
            }
            return;
        }
        let Some(n) = self.nodes.get_mut(&to) else { return };
        let mut replay = None;
        if let Some(adv) = n.adversary.as_mut() {
            if adv.blackhole_filter(now, &frame) || adv.selective_forward_filter(now, &frame) {
                if let FrameBody::Data(p) = frame.body {
                    self.drop_packet(to, p, DropReason::Adversary);
                }
                return;
            }
            replay = adv.neighbor_replay(now, &frame).map(<[u8]>::to_vec);
        }
        if let Some(bytes) = replay {
            let (k, v) = code_labels(&bytes);
            n.mac_queue.push_back(Outgoing {
                dest: Destination::Multicast,
                body: FrameBody::Control(bytes),
                label: TxLabel { kind: k, variant: v, counter: None },
            });
            self.trace.push(TraceRecord::Replay { time_us: now, adversary: to, kind: k.into() });
            self.try_start(to);
        }
        match &frame.body {
            FrameBody::Data(p) => {
                if to == self.root {
                    self.resolved.insert((p.origin, p.seq));
                    self.trace.push(TraceRecord::AppDeliver {
                        time_us: now,
                        origin: p.origin,
                        seq: p.seq,
                        latency_us: now - p.send_time,
                        hops: p.hops.saturating_add(1),
                    });
                } else {
                    self.accept_data(to, *p, true);
                }
            }
            FrameBody::Control(bytes) => self.on_control(to, frame.link_src, bytes),
        }
    }

    fn on_control(&mut self, to: NodeId, link_src: NodeId, bytes: &[u8]) {
        let n = &self.nodes[&to];
        let (kind, _) = code_labels(bytes);
        let msg = match decode(bytes, n.mode) {
            Err(_) => return self.rx(to, link_src, kind, "malformed"),
            Ok(Decoded::Unrecognized { .. }) => return self.rx(to, link_src, kind, "unrecognized"),
            Ok(Decoded::Message(m)) => m,
        };
        if msg.source == to {
            return self.rx(to, link_src, kind, "own");
        }
        if let Destination::Node(d) = msg.destination {
            if d != to {
                return self.rx(to, link_src, kind, "not_for_me");
            }
        }
        if let Verdict::Discard(r) = accept_policy(n.mode, &msg) {
            return self.rx(to, link_src, kind, r.as_str());
        }
        let body = match &msg.content {
            Content::Base(b) => b.clone(),
            Content::Secure(_) => match self.secure_in(to, link_src, &msg) {
                Some(b) => b,
                None => return,
            },
        };
        self.rx(to, link_src, kind, "accept");
        self.dispatch(to, msg.source, msg.destination, body);
    }

    /// Opens a secure message, running the consistency check when replay
    /// protection is on. Returns the body when it should be processed now.
    fn secure_in(&mut self, to: NodeId, link_src: NodeId, msg: &ControlMessage) -> Option<MessageBody> {
        let now = self.now;
        let kind = msg.kind.as_str();
        let src = msg.source;
        let n = self.nodes.get_mut(&to).expect("present");
        let rp = n.mode.replay_protection();
        match msg.kind {
            MessageKind::Cc => {
                let Ok(MessageBody::Cc(cc)) = open_sealed(msg, &n.keystore) else {
                    self.rx(to, link_src, kind, "auth_failure");
                    return None;
                };
                if !cc.is_response {
                    let own = n.counter.peek();
                    self.rx(to, link_src, kind, "accept");
                    if let Some(resp) = respond_cc(&cc, own) {
                        self.emit_control(to, Destination::Node(src), MessageBody::Cc(resp));
                    }
                    return None;
                }
                if !rp {
                    self.rx(to, link_src, kind, "accept");
                    return None;
                }
                match n.checker.on_response(src, &cc) {
                    ResponseOutcome::Verified { pending, echoed_counter } => {
                        let w = n.watermarks.entry(src).or_insert(echoed_counter);
                        *w = (*w).max(echoed_counter);
                        self.rx(to, link_src, kind, "accept");
                        if let Some(dio) = pending {
                            self.dispatch(to, src, Destination::Multicast, MessageBody::Dio(dio));
                        }
                    }
                    ResponseOutcome::WrongNonce => self.rx(to, link_src, kind, "wrong_nonce"),
                    ResponseOutcome::NoSession => self.rx(to, link_src, kind, "no_session"),
                }
                None
            }
            MessageKind::Dio if rp => {
                let Ok(MessageBody::Dio(dio)) = open_sealed(msg, &n.keystore) else {
                    self.rx(to, link_src, kind, "auth_failure");
                    return None;
                };
                let c = msg.counter().unwrap_or(0);
                let anomaly = n.watermarks.get(&src).is_some_and(|&m| c <= m);
                if !n.checker.is_suspect(src, anomaly) {
                    n.watermarks.insert(src, c);
                    return Some(MessageBody::Dio(dio));
                }
                match n.checker.challenge(now, src, Some(dio)) {
                    Ok(ChallengeOutcome::Issue { nonce }) => {
                        self.rx(to, link_src, kind, "withheld");
                        self.send_cc_request(to, src, nonce, 0);
                    }
                    Ok(ChallengeOutcome::Refreshed) => self.rx(to, link_src, kind, "withheld"),
                    Err(_) => self.rx(to, link_src, kind, "nonce_exhausted"),
                }
                None
            }
            _ => match secure_unwrap(msg, &n.keystore, &mut n.watermarks, rp) {
                Ok(b) => Some(b),
                Err(MessageError::ReplaySuspect { .. }) => {
                    self.rx(to, link_src, kind, "replay");
                    None
                }
                Err(_) => {
                    self.rx(to, link_src, kind, "auth_failure");
                    None
                }
            },
        }
    }

    fn send_cc_request(&mut self, from: NodeId, peer: NodeId, nonce: u16, attempt: u32) {
        let req = CcBody { nonce, is_response: false, echoed_counter: 0 };
        self.emit_control(from, Destination::Node(peer), MessageBody::Cc(req));
        let at = self.now + self.cc_timeout;
        self.schedule(at, Ev::CcTimeout { node: from, peer, nonce, attempt });
    }

    fn on_cc_timeout(&mut self, id: NodeId, peer: NodeId, nonce: u16, attempt: u32) {
        let Some(n) = self.nodes.get_mut(&id) else { return };
        match n.checker.on_timeout(peer, nonce, attempt) {
            TimeoutOutcome::Retry { nonce } => self.send_cc_request(id, peer, nonce, attempt + 1),
            TimeoutOutcome::GiveUp { .. } => {
                self.trace.push(TraceRecord::CcFail { time_us: self.now, node: id, peer });
                let mut acts = Vec::new();
                n.router.inconsistency(self.now, &mut self.trickle_rng, &mut acts);
                self.apply(id, acts);
            }
            TimeoutOutcome::Stale => {}
        }
    }

    fn dispatch(&mut self, to: NodeId, src: NodeId, dest: Destination, body: MessageBody) {
        let now = self.now;
        let etx = self.medium.link_etx();
        let n = self.nodes.get_mut(&to).expect("present");
        n.router.note_heard(src, now, etx);
        let mut acts = Vec::new();
        let rng = &mut self.trickle_rng;
        match &body {
            MessageBody::Dio(d) => n.router.process_dio(now, rng, src, d, &mut acts),
            MessageBody::Dis(d) => {
                let unicast = matches!(dest, Destination::Node(_));
                n.router.process_dis(now, rng, src, d, unicast, &mut acts)
            }
            MessageBody::Dao(d) => n.router.process_dao(now, rng, src, d, &mut acts),
            MessageBody::DaoAck(a) => n.router.process_dao_ack(a),
            MessageBody::Cc(_) => {}
        }
        self.apply(to, acts);
    }

    fn replay_next(&mut self, ep_id: NodeId) {
        let now = self.now;
        let Some(ep) = self.wormholes.get_mut(&ep_id) else { return };
        if ep.busy {
            return;
        }
        let Some(frame) = ep.replay_out.pop_front() else { return };
        ep.busy = true;
        ep.replayed += 1;
        let plan = self.medium.transmit(ep_id, Destination::Multicast, frame.len(), now, |_| false, &mut self.radio_rng);
        let (kind, variant) = match &frame.body {
            FrameBody::Control(b) => code_labels(b),
            FrameBody::Data(_) => ("data", "-"),
        };
        let frame = Arc::new(frame);
        for d in &plan.deliveries {
            self.schedule(d.at, Ev::Arrive { to: d.receiver, frame: frame.clone() });
        }
        self.trace.push(TraceRecord::Tx {
            time_us: now,
            sender: ep_id,
            receiver: "*".into(),
            kind: kind.into(),
            variant: variant.into(),
            counter: "-".into(),
            outcome: "replay".into(),
        });
        self.trace.push(TraceRecord::Replay { time_us: now, adversary: ep_id, kind: kind.into() });
        self.schedule(plan.end, Ev::ReplayDone { endpoint: ep_id });
    }

    fn violation(&mut self, what: String) {
        if self.violations < MAX_VIOLATION_RECORDS {
            self.trace.push(TraceRecord::Violation { time_us: self.now, what });
        }
        self.violations += 1;
    }

    /// Loop freedom, rank consistency and parent-set membership.
    fn check_invariants(&mut self) {
        let mut found = Vec::new();
        let limit = self.nodes.len() + 1;
        for n in self.nodes.values() {
            let Some(p) = n.router.preferred_parent() else { continue };
            let mut cur = n.id;
            let mut steps = 0;
            while let Some(next) = self.nodes.get(&cur).and_then(|x| x.router.preferred_parent()) {
                cur = next;
                steps += 1;
                if steps > limit {
                    found.push(format!("loop through node {}", n.id));
                    break;
                }
            }
            let Some(entry) = n.router.neighbors.get(&p) else {
                found.push(format!("node {} prefers {} which is not a neighbor", n.id, p));
                continue;
            };
            if entry.advertised_rank.is_none() {
                found.push(format!("node {} prefers {} outside its parent set", n.id, p));
            }
            if let Some(pn) = self.nodes.get(&p) {
                let pr = pn.router.rank();
                let stale = pn.joined_at > entry.dio_at;
                if pr != INFINITE_RANK && !stale && n.router.rank() <= pr {
                    found.push(format!("node {} rank {} not above parent {} rank {}", n.id, n.router.rank(), p, pr));
                }
            }
        }
        for f in found {
            self.violation(f);
        }
    }

    fn finish(mut self) -> Vec<TraceRecord> {
        self.snapshot();
        let mut residual = BTreeSet::new();
        for n in self.nodes.values() {
            for p in n.buffer.packets() {
                if !self.resolved.contains(&(p.origin, p.seq)) {
                    residual.insert((p.origin, p.seq, n.id));
                }
            }
        }
        for s in self.queue.iter() {
            if let Ev::Arrive { to, frame } = &s.ev {
                if let FrameBody::Data(p) = frame.body {
                    if !self.resolved.contains(&(p.origin, p.seq)) {
                        residual.insert((p.origin, p.seq, *to));
                    }
                }
            }
        }
        let mut seen = HashSet::new();
        for (origin, seq, node) in residual {
            if seen.insert((origin, seq)) {
                self.trace.push(TraceRecord::Buffered { node, origin, seq });
            }
        }
        let ids: Vec<NodeId> = self.cfg.topology.iter().map(|n| n.id).collect::<BTreeSet<_>>().into_iter().collect();
        let report = energy_report(&self.medium.ledger, &ids, self.duration, &self.cfg.rdc, &self.cfg.power);
        for e in report.nodes {
            self.trace.push(TraceRecord::Energy {
                node: e.node,
                tx_s: e.tx_time_s,
                rx_s: e.rx_time_s,
                idle_s: e.idle_listen_time_s,
                sleep_s: e.sleep_time_s,
                energy_mj: e.energy_mj,
            });
        }
        self.trace
    }
}

/// Executes one round and returns its trace.
pub fn simulate(cfg: &ScenarioConfig, seed: u64, round: u32) -> Result<Vec<TraceRecord>, ConfigError> {
    Ok(Simulator::new(cfg, seed, round)?.run())
}
