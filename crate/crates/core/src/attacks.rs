//! Adversary behaviours: blackhole, selective forwarding, neighbor replay and
//! an out-of-band wormhole.

use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::linklayer::{Frame, FrameBody};
use crate::messages::{classify_code, peek_kind, MessageKind, NodeId};
use crate::time::{from_secs, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    Blackhole,
    SelectiveForward,
    Neighbor,
    Wormhole,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Blackhole => "BH",
            AttackKind::SelectiveForward => "SF",
            AttackKind::Neighbor => "NA",
            AttackKind::Wormhole => "WH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackProfile {
    pub kind: AttackKind,
    pub activation_time_s: f64,
    pub adversary_ids: Vec<NodeId>,
    pub internal: bool,
    pub has_key: bool,
    pub speaks_secure: bool,
    pub wormhole_link_latency_ms: f64,
}

impl Default for AttackProfile {
    fn default() -> Self {
        AttackProfile {
            kind: AttackKind::None,
            activation_time_s: 120.0,
            adversary_ids: Vec::new(),
            internal: true,
            has_key: true,
            speaks_secure: true,
            wormhole_link_latency_ms: 1.0,
        }
    }
}

/// Behaviour of a participating (non-wormhole) adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryState {
    pub kind: AttackKind,
    pub activation: SimTime,
    pub speaks_secure: bool,
    pub dropped_data: u32,
    pub dropped_ctrl: u32,
    pub replayed: u32,
}

impl AdversaryState {
    pub fn new(kind: AttackKind, activation: SimTime, speaks_secure: bool) -> Self {
        AdversaryState {
            kind,
            activation,
            speaks_secure,
            dropped_data: 0,
            dropped_ctrl: 0,
            replayed: 0,
        }
    }

    pub fn active(&self, now: SimTime) -> bool {
        self.kind != AttackKind::None && now >= self.activation
    }

    /// A blackhole neither emits nor acknowledges anything once active.
    pub fn radio_silent(&self, now: SimTime) -> bool {
        self.kind == AttackKind::Blackhole && self.active(now)
    }

    pub fn blackhole_filter(&mut self, now: SimTime, frame: &Frame) -> bool {
        if !self.radio_silent(now) {
            return false;
        }
        match frame.body {
            FrameBody::Data(_) => self.dropped_data += 1,
            FrameBody::Control(_) => self.dropped_ctrl += 1,
        }
        true
    }

    /// Transit data is dropped by both blackhole and selective forwarder.
    pub fn selective_forward_filter(&mut self, now: SimTime, frame: &Frame) -> bool {
        let drops = matches!(self.kind, AttackKind::Blackhole | AttackKind::SelectiveForward)
            && self.active(now)
            && matches!(frame.body, FrameBody::Data(_));
        if drops {
            self.dropped_data += 1;
        }
        drops
    }

    /// Bytes to re-broadcast unchanged, if this frame is a DIO the adversary
    /// can recognise.
    pub fn neighbor_replay<'a>(&mut self, now: SimTime, frame: &'a Frame) -> Option<&'a [u8]> {
        if self.kind != AttackKind::Neighbor || !self.active(now) {
            return None;
        }
        let FrameBody::Control(bytes) = &frame.body else {
            return None;
        };
        match peek_kind(bytes, self.speaks_secure) {
            Some((MessageKind::Dio, _)) => {
                self.replayed += 1;
                Some(bytes)
            }
            _ => None,
        }
    }
}

const DEDUP_WINDOW_S: f64 = 1.0;

fn frame_hash(frame: &Frame) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    frame.link_src.hash(&mut h);
    frame.tx_start.hash(&mut h);
    if let FrameBody::Control(b) = &frame.body {
        b.hash(&mut h);
    }
    h.finish()
}

/// One end of the out-of-band tunnel. Frames heard on the radio go into
/// `radio_in`, cross the tunnel, and wait in the far end's `replay_out`.
#[derive(Debug, Clone)]
pub struct WormholeEndpoint {
    pub id: NodeId,
    pub peer: NodeId,
    pub latency: SimTime,
    pub activation: SimTime,
    pub enabled: bool,
    pub radio_in: VecDeque<Frame>,
    pub replay_out: VecDeque<Frame>,
    pub busy: bool,
    recent: VecDeque<(SimTime, u64)>,
    pub tunneled: u32,
    pub replayed: u32,
}

impl WormholeEndpoint {
    pub fn new(id: NodeId, peer: NodeId, latency_ms: f64, activation: SimTime, enabled: bool) -> Self {
        WormholeEndpoint {
            id,
            peer,
            latency: from_secs(latency_ms / 1000.0),
            activation,
            enabled,
            radio_in: VecDeque::new(),
            replay_out: VecDeque::new(),
            busy: false,
            recent: VecDeque::new(),
            tunneled: 0,
            replayed: 0,
        }
    }

    /// Classifies an overheard frame; control frames (base or secure) are
    /// queued for the tunnel. Returns true when the frame was taken.
    pub fn observe(&mut self, now: SimTime, frame: &Frame) -> bool {
        if !self.enabled || now < self.activation {
            return false;
        }
        let FrameBody::Control(bytes) = &frame.body else {
            return false;
        };
        if bytes.first().and_then(|&c| classify_code(c)).is_none() {
            return false;
        }
        let window = from_secs(DEDUP_WINDOW_S);
        while matches!(self.recent.front(), Some(&(t, _)) if t + window < now) {
            self.recent.pop_front();
        }
        let h = frame_hash(frame);
        if self.recent.iter().any(|&(_, x)| x == h) {
            return false;
        }
        self.recent.push_back((now, h));
        self.radio_in.push_back(frame.clone());
        self.tunneled += 1;
        true
    }

    /// Head of the tunnel, in FIFO order.
    pub fn wormhole_forward(&mut self) -> Option<Frame> {
        self.radio_in.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{code_point, Destination, Variant};
    use crate::rpl::forward::DataPacket;

    fn ctrl(kind: MessageKind, variant: Variant) -> Frame {
        let code = code_point(kind, variant).unwrap();
        Frame {
            link_src: 1,
            link_dst: Destination::Multicast,
            tx_start: 10,
            body: FrameBody::Control(vec![code, 0, 1, 255, 255, 0, 0]),
        }
    }

    fn data() -> Frame {
        Frame {
            link_src: 1,
            link_dst: Destination::Node(2),
            tx_start: 10,
            body: FrameBody::Data(DataPacket { origin: 1, seq: 0, send_time: 0, hops: 0 }),
        }
    }

    #[test]
    fn inactive_before_activation() {
        let mut a = AdversaryState::new(AttackKind::Blackhole, 100, true);
        assert!(!a.blackhole_filter(99, &data()));
        assert!(a.blackhole_filter(100, &data()));
        assert!(a.radio_silent(100));
    }

    #[test]
    fn selective_forward_keeps_control() {
        let mut a = AdversaryState::new(AttackKind::SelectiveForward, 0, true);
        assert!(a.selective_forward_filter(5, &data()));
        assert!(!a.selective_forward_filter(5, &ctrl(MessageKind::Dio, Variant::Base)));
        assert!(!a.radio_silent(5));
    }

    #[test]
    fn neighbor_needs_secure_awareness() {
        let mut blind = AdversaryState::new(AttackKind::Neighbor, 0, false);
        assert!(blind.neighbor_replay(1, &ctrl(MessageKind::Dio, Variant::Secure)).is_none());
        assert!(blind.neighbor_replay(1, &ctrl(MessageKind::Dio, Variant::Base)).is_some());
        let mut aware = AdversaryState::new(AttackKind::Neighbor, 0, true);
        assert!(aware.neighbor_replay(1, &ctrl(MessageKind::Dio, Variant::Secure)).is_some());
        assert!(aware.neighbor_replay(1, &ctrl(MessageKind::Dis, Variant::Secure)).is_none());
    }

    #[test]
    fn wormhole_takes_control_only_and_dedups() {
        let mut w = WormholeEndpoint::new(27, 29, 1.0, 0, true);
        assert!(!w.observe(5, &data()));
        assert!(w.observe(5, &ctrl(MessageKind::Dao, Variant::Secure)));
        assert!(!w.observe(6, &ctrl(MessageKind::Dao, Variant::Secure)));
        assert!(w.observe(5, &ctrl(MessageKind::Cc, Variant::Secure)));
        assert_eq!(w.wormhole_forward().unwrap().body, ctrl(MessageKind::Dao, Variant::Secure).body);
        assert_eq!(w.radio_in.len(), 1);
    }

    #[test]
    fn disabled_wormhole_is_inert() {
        let mut w = WormholeEndpoint::new(27, 29, 1.0, 0, false);
        assert!(!w.observe(5, &ctrl(MessageKind::Dio, Variant::Base)));
    }
}
