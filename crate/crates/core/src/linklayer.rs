//! Unit-disk radio medium, radio duty cycling and energy accounting.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::messages::{Destination, NodeId};
use crate::rpl::forward::DataPacket;
use crate::time::{from_millis, from_secs, to_secs, SimTime};

/// Microseconds per byte at 250 kbit/s.
pub const BYTE_TIME_US: u64 = 32;
pub const ACK_BYTES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub range_m: f64,
    /// Recorded for completeness; collisions are not modelled.
    pub interference_range_m: f64,
    pub loss_prob: f64,
    pub frame_overhead_bytes: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            range_m: 50.0,
            interference_range_m: 100.0,
            loss_prob: 0.0,
            frame_overhead_bytes: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RdcKind {
    DutyCycled,
    AlwaysOn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdcModel {
    pub kind: RdcKind,
    pub wake_interval_ms: u64,
    /// Radio-on time of one periodic channel check.
    pub check_ms: f64,
    pub max_tx_attempts: u32,
    /// Frames whose link timestamp is older than this on arrival are dropped.
    pub acceptance_window_ms: u64,
    /// Wait for an ACK before an always-on sender retries.
    pub ack_wait_ms: f64,
}

impl Default for RdcModel {
    fn default() -> Self {
        RdcModel {
            kind: RdcKind::DutyCycled,
            wake_interval_ms: 125,
            check_ms: 0.5,
            max_tx_attempts: 3,
            acceptance_window_ms: 250,
            ack_wait_ms: 1.0,
        }
    }
}

impl RdcModel {
    pub fn always_on() -> Self {
        RdcModel { kind: RdcKind::AlwaysOn, ..Default::default() }
    }

    pub fn wake_interval(&self) -> SimTime {
        from_millis(self.wake_interval_ms).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerParams {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub listen_mw: f64,
    pub sleep_mw: f64,
    /// Idle listening draw when the radio never sleeps.
    pub always_on_listen_mw: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        PowerParams {
            tx_mw: 60.0,
            rx_mw: 40.0,
            listen_mw: 40.0,
            sleep_mw: 0.06,
            always_on_listen_mw: 122.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameBody {
    Control(Vec<u8>),
    Data(DataPacket),
}

/// A link-layer frame. `tx_start` is the link timestamp checked against the
/// acceptance window on arrival.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub link_src: NodeId,
    pub link_dst: Destination,
    pub tx_start: SimTime,
    pub body: FrameBody,
}

impl Frame {
    pub fn len(&self) -> usize {
        match &self.body {
            FrameBody::Control(b) => b.len(),
            FrameBody::Data(_) => DATA_FRAME_BYTES,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network-layer size of a data packet.
pub const DATA_FRAME_BYTES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub receiver: NodeId,
    pub at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxOutcome {
    Acked,
    TxFailed,
    Broadcast,
}

/// What the medium will do with one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxPlan {
    pub deliveries: Vec<Delivery>,
    /// Copies overheard by promiscuous observers.
    pub taps: Vec<Delivery>,
    pub outcome: TxOutcome,
    pub attempts: u32,
    /// Start of the attempt that produced the deliveries.
    pub tx_start: SimTime,
    /// When the sender's radio is free again.
    pub end: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub tx_us: u64,
    pub rx_us: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    pub nodes: BTreeMap<NodeId, EnergyState>,
}

impl EnergyLedger {
    pub fn charge_tx(&mut self, node: NodeId, dur: SimTime) {
        self.nodes.entry(node).or_default().tx_us += dur;
    }

    pub fn charge_rx(&mut self, node: NodeId, dur: SimTime) {
        self.nodes.entry(node).or_default().rx_us += dur;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergy {
    pub node: NodeId,
    pub tx_time_s: f64,
    pub rx_time_s: f64,
    pub idle_listen_time_s: f64,
    pub sleep_time_s: f64,
    pub energy_mj: f64,
    pub mean_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub nodes: Vec<NodeEnergy>,
    pub total_mj: f64,
    pub mean_mw: f64,
}

/// Splits each node's time into states and prices it.
pub fn energy_report(
    ledger: &EnergyLedger,
    nodes: &[NodeId],
    duration: SimTime,
    rdc: &RdcModel,
    power: &PowerParams,
) -> EnergyReport {
    let dur_s = to_secs(duration);
    let mut out = Vec::with_capacity(nodes.len());
    for &id in nodes {
        let st = ledger.nodes.get(&id).copied().unwrap_or_default();
        let tx = to_secs(st.tx_us).min(dur_s);
        let rx = to_secs(st.rx_us).min(dur_s - tx);
        let free = (dur_s - tx - rx).max(0.0);
        let (idle, sleep, idle_mw) = match rdc.kind {
            RdcKind::AlwaysOn => (free, 0.0, power.always_on_listen_mw),
            RdcKind::DutyCycled => {
                let wakes = duration / rdc.wake_interval();
                let idle = (wakes as f64 * rdc.check_ms / 1000.0).min(free);
                (idle, free - idle, power.listen_mw)
            }
        };
        let energy_mj = tx * power.tx_mw + rx * power.rx_mw + idle * idle_mw + sleep * power.sleep_mw;
        out.push(NodeEnergy {
            node: id,
            tx_time_s: tx,
            rx_time_s: rx,
            idle_listen_time_s: idle,
            sleep_time_s: sleep,
            energy_mj,
            mean_mw: if dur_s > 0.0 { energy_mj / dur_s } else { 0.0 },
        });
    }
    let total_mj: f64 = out.iter().map(|n| n.energy_mj).sum();
    let mean_mw = if out.is_empty() || dur_s <= 0.0 {
        0.0
    } else {
        total_mj / dur_s / out.len() as f64
    };
    EnergyReport { nodes: out, total_mj, mean_mw }
}

#[derive(Debug, Clone)]
pub struct RadioMedium {
    pub params: RadioParams,
    pub rdc: RdcModel,
    positions: BTreeMap<NodeId, (f64, f64)>,
    phases: BTreeMap<NodeId, SimTime>,
    promiscuous: Vec<NodeId>,
    pub ledger: EnergyLedger,
}

impl RadioMedium {
    pub fn new(params: RadioParams, rdc: RdcModel) -> Self {
        RadioMedium {
            params,
            rdc,
            positions: BTreeMap::new(),
            phases: BTreeMap::new(),
            promiscuous: Vec::new(),
            ledger: EnergyLedger::default(),
        }
    }

    /// Adds a node with a random wake phase.
    pub fn add_node<R: Rng>(&mut self, id: NodeId, pos: (f64, f64), phase_rng: &mut R) {
        let phase = phase_rng.gen_range(0..self.rdc.wake_interval());
        self.positions.insert(id, pos);
        self.phases.insert(id, phase);
    }

    pub fn set_phase(&mut self, id: NodeId, phase: SimTime) {
        self.phases.insert(id, phase % self.rdc.wake_interval());
    }

    pub fn set_promiscuous(&mut self, id: NodeId) {
        if !self.promiscuous.contains(&id) {
            self.promiscuous.push(id);
        }
    }

    pub fn is_promiscuous(&self, id: NodeId) -> bool {
        self.promiscuous.contains(&id)
    }

    pub fn position(&self, id: NodeId) -> Option<(f64, f64)> {
        self.positions.get(&id).copied()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        match (self.position(a), self.position(b)) {
            (Some(p), Some(q)) => ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt(),
            _ => f64::INFINITY,
        }
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.distance(a, b) <= self.params.range_m
    }

    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.positions
            .keys()
            .copied()
            .filter(|&o| self.in_range(id, o))
            .collect()
    }

    pub fn airtime(&self, bytes: usize) -> SimTime {
        (bytes + self.params.frame_overhead_bytes) as u64 * BYTE_TIME_US
    }

    /// First wake instant of `id` at or after `t`.
    pub fn next_wake(&self, id: NodeId, t: SimTime) -> SimTime {
        if self.is_promiscuous(id) || self.rdc.kind == RdcKind::AlwaysOn {
            return t;
        }
        let w = self.rdc.wake_interval();
        let phase = self.phases.get(&id).copied().unwrap_or(0);
        if t <= phase {
            return phase;
        }
        phase + (t - phase).div_ceil(w) * w
    }

    /// Expected per-link ETX from the loss model.
    pub fn link_etx(&self) -> f64 {
        1.0 / (1.0 - self.params.loss_prob.clamp(0.0, 0.99))
    }

    fn lost<R: Rng>(&self, rng: &mut R) -> bool {
        self.params.loss_prob > 0.0 && rng.gen_bool(self.params.loss_prob.min(1.0))
    }

    fn taps_for(&self, sender: NodeId, dest: Destination, at: SimTime) -> Vec<Delivery> {
        self.promiscuous
            .iter()
            .copied()
            .filter(|&o| Destination::Node(o) != dest && self.in_range(sender, o))
            .map(|o| Delivery { receiver: o, at })
            .collect()
    }

    /// Plans one frame from `sender` starting at `now`. `acks` says whether a
    /// unicast receiver answers with a link ACK.
    pub fn transmit<R: Rng>(
        &mut self,
        sender: NodeId,
        dest: Destination,
        bytes: usize,
        now: SimTime,
        acks: impl Fn(NodeId) -> bool,
        rng: &mut R,
    ) -> TxPlan {
        let air = self.airtime(bytes);
        let ack_air = self.airtime(ACK_BYTES - self.params.frame_overhead_bytes.min(ACK_BYTES));
        let w = self.rdc.wake_interval();
        let duty = self.rdc.kind == RdcKind::DutyCycled;
        match dest {
            Destination::Multicast => {
                let mut deliveries = Vec::new();
                for r in self.neighbors(sender) {
                    if self.is_promiscuous(r) || self.lost(rng) {
                        continue;
                    }
                    let at = if duty { self.next_wake(r, now) + air } else { now + air };
                    self.ledger.charge_rx(r, air);
                    deliveries.push(Delivery { receiver: r, at });
                }
                let busy = if duty { w + air } else { air };
                self.ledger.charge_tx(sender, busy);
                TxPlan {
                    deliveries,
                    taps: self.taps_for(sender, dest, now + air),
                    outcome: TxOutcome::Broadcast,
                    attempts: 1,
                    tx_start: now,
                    end: now + busy,
                }
            }
            Destination::Node(r) => {
                let max = self.rdc.max_tx_attempts.max(1);
                let reachable = self.in_range(sender, r) && !self.is_promiscuous(r);
                let ack_wait = from_secs(self.rdc.ack_wait_ms / 1000.0);
                let mut t = now;
                for attempt in 1..=max {
                    let ok = reachable && acks(r) && !self.lost(rng);
                    if ok {
                        let wake = if duty { self.next_wake(r, t) } else { t };
                        let at = wake + air;
                        self.ledger.charge_tx(sender, at - t);
                        self.ledger.charge_rx(sender, ack_air);
                        self.ledger.charge_rx(r, air);
                        self.ledger.charge_tx(r, ack_air);
                        return TxPlan {
                            deliveries: vec![Delivery { receiver: r, at }],
                            taps: self.taps_for(sender, dest, t + air),
                            outcome: TxOutcome::Acked,
                            attempts: attempt,
                            tx_start: if duty { wake } else { t },
                            end: at + ack_air,
                        };
                    }
                    let span = if duty { w + air } else { air + ack_wait };
                    self.ledger.charge_tx(sender, if duty { span } else { air });
                    t += span;
                }
                TxPlan {
                    deliveries: Vec::new(),
                    taps: self.taps_for(sender, dest, now + air),
                    outcome: TxOutcome::TxFailed,
                    attempts: max,
                    tx_start: now,
                    end: t,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn medium(rdc: RdcModel) -> RadioMedium {
        let mut m = RadioMedium::new(RadioParams { range_m: 100.0, ..Default::default() }, rdc);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.add_node(1, (0.0, 0.0), &mut rng);
        m.add_node(2, (50.0, 0.0), &mut rng);
        m.add_node(3, (120.0, 0.0), &mut rng);
        m
    }

    #[test]
    fn always_on_delivers_after_airtime() {
        let mut m = medium(RdcModel::always_on());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = m.transmit(1, Destination::Node(2), 40, 1000, |_| true, &mut rng);
        assert_eq!(p.outcome, TxOutcome::Acked);
        assert_eq!(p.deliveries, vec![Delivery { receiver: 2, at: 1000 + m.airtime(40) }]);
    }

    #[test]
    fn duty_cycled_waits_for_receiver_wake() {
        let mut m = medium(RdcModel::default());
        m.set_phase(2, from_millis(70));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = m.transmit(1, Destination::Node(2), 40, 0, |_| true, &mut rng);
        // the frame is caught at the wake instant, +70 ms
        assert_eq!(p.deliveries[0].at - m.airtime(40), from_millis(70));
    }

    #[test]
    fn out_of_range_is_not_delivered() {
        let mut m = medium(RdcModel::always_on());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = m.transmit(1, Destination::Multicast, 40, 0, |_| true, &mut rng);
        assert_eq!(p.deliveries.len(), 1);
        assert_eq!(p.deliveries[0].receiver, 2);
        let p = m.transmit(1, Destination::Node(3), 40, 0, |_| true, &mut rng);
        assert_eq!(p.outcome, TxOutcome::TxFailed);
    }

    #[test]
    fn silent_receiver_costs_full_strobes() {
        let mut m = medium(RdcModel::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = m.transmit(1, Destination::Node(2), 40, 0, |_| false, &mut rng);
        assert_eq!(p.outcome, TxOutcome::TxFailed);
        assert_eq!(p.attempts, 3);
        assert_eq!(p.end, 3 * (from_millis(125) + m.airtime(40)));
    }

    #[test]
    fn observer_overhears_unicast() {
        let mut m = medium(RdcModel::default());
        m.set_promiscuous(3);
        m.positions.insert(3, (10.0, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = m.transmit(1, Destination::Node(2), 40, 0, |_| true, &mut rng);
        assert_eq!(p.taps.len(), 1);
        assert_eq!(p.taps[0].receiver, 3);
        m.positions.insert(3, (-200.0, 0.0));
        let p = m.transmit(1, Destination::Node(2), 40, 0, |_| true, &mut rng);
        assert!(p.taps.is_empty());
    }

    #[test]
    fn always_on_idle_power_near_122() {
        let ledger = EnergyLedger::default();
        let r = energy_report(&ledger, &[1], from_secs(1200.0), &RdcModel::always_on(), &PowerParams::default());
        assert!((r.mean_mw - 122.0).abs() < 0.5);
    }

    #[test]
    fn sleeping_node_costs_sleep_coefficient() {
        let rdc = RdcModel { check_ms: 0.0, ..Default::default() };
        let p = PowerParams::default();
        let r = energy_report(&EnergyLedger::default(), &[1], from_secs(100.0), &rdc, &p);
        assert!((r.total_mj - 100.0 * p.sleep_mw).abs() < 1e-9);
        let n = r.nodes[0];
        let sum = n.tx_time_s + n.rx_time_s + n.idle_listen_time_s + n.sleep_time_s;
        assert!((sum - 100.0).abs() < 1e-9);
    }
}
