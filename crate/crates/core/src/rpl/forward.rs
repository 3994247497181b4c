//! Per-node upward data buffer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::messages::NodeId;
use crate::time::{from_secs, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataPacket {
    pub origin: NodeId,
    pub seq: u32,
    pub send_time: SimTime,
    pub hops: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    QueueFull,
    NoRoute,
    HopLimit,
    Adversary,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::QueueFull => "queue_full",
            DropReason::NoRoute => "no_route",
            DropReason::HopLimit => "hop_limit",
            DropReason::Adversary => "adversary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferParams {
    pub capacity: usize,
    /// How long a packet may wait while the node has no parent.
    pub no_route_ttl_s: f64,
    /// Wait after a failed unicast before the head packet is retried.
    pub retry_backoff_s: f64,
    pub hop_limit: u8,
}

impl Default for BufferParams {
    fn default() -> Self {
        BufferParams {
            capacity: 10,
            no_route_ttl_s: 120.0,
            retry_backoff_s: 10.0,
            hop_limit: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct Queued {
    packet: DataPacket,
    parked_since: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forward {
    /// Accepted into the buffer; the caller should try `next_to_send`.
    Buffered,
    Drop(DataPacket, DropReason),
}

#[derive(Debug, Clone)]
pub struct DataBuffer {
    params: BufferParams,
    queue: VecDeque<Queued>,
    in_flight: Option<DataPacket>,
    backoff_until: SimTime,
}

impl DataBuffer {
    pub fn new(params: BufferParams) -> Self {
        DataBuffer {
            params,
            queue: VecDeque::new(),
            in_flight: None,
            backoff_until: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len() + usize::from(self.in_flight.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_flight(&self) -> Option<&DataPacket> {
        self.in_flight.as_ref()
    }

    pub fn backoff_until(&self) -> SimTime {
        self.backoff_until
    }

    /// Accepts a locally generated or relayed packet.
    pub fn forward_data(&mut self, mut packet: DataPacket, now: SimTime, has_parent: bool, relayed: bool) -> Forward {
        if relayed {
            packet.hops = packet.hops.saturating_add(1);
            if packet.hops >= self.params.hop_limit {
                return Forward::Drop(packet, DropReason::HopLimit);
            }
        }
        if self.queue.len() >= self.params.capacity {
            return Forward::Drop(packet, DropReason::QueueFull);
        }
        self.queue.push_back(Queued {
            packet,
            parked_since: (!has_parent).then_some(now),
        });
        Forward::Buffered
    }

    pub fn parent_lost(&mut self, now: SimTime) {
        for q in &mut self.queue {
            q.parked_since.get_or_insert(now);
        }
    }

    pub fn parent_found(&mut self) {
        for q in &mut self.queue {
            q.parked_since = None;
        }
        self.backoff_until = 0;
    }

    /// Removes packets that waited without a route longer than the TTL.
    pub fn expire(&mut self, now: SimTime) -> Vec<DataPacket> {
        let ttl = from_secs(self.params.no_route_ttl_s);
        let mut out = Vec::new();
        self.queue.retain(|q| match q.parked_since {
            Some(t) if now >= t + ttl => {
                out.push(q.packet);
                false
            }
            _ => true,
        });
        out
    }

    /// Earliest time a parked packet will hit its TTL.
    pub fn next_expiry(&self) -> Option<SimTime> {
        let ttl = from_secs(self.params.no_route_ttl_s);
        self.queue.iter().filter_map(|q| q.parked_since).min().map(|t| t + ttl)
    }

    /// Pops the head packet for transmission when the link is free.
    pub fn next_to_send(&mut self, now: SimTime, has_parent: bool) -> Option<DataPacket> {
        if self.in_flight.is_some() || !has_parent || now < self.backoff_until {
            return None;
        }
        let q = self.queue.pop_front()?;
        self.in_flight = Some(q.packet);
        Some(q.packet)
    }

    /// Outcome of the in-flight unicast. A failed packet goes back to the
    /// head of the queue.
    pub fn tx_done(&mut self, success: bool, now: SimTime, has_parent: bool) {
        let Some(p) = self.in_flight.take() else {
            return;
        };
        if !success {
            self.queue.push_front(Queued {
                packet: p,
                parked_since: (!has_parent).then_some(now),
            });
            self.backoff_until = now + from_secs(self.params.retry_backoff_s);
        }
    }

    /// Empties the queue, leaving any in-flight packet alone.
    pub fn drain_queued(&mut self) -> Vec<DataPacket> {
        self.queue.drain(..).map(|q| q.packet).collect()
    }

    pub fn packets(&self) -> impl Iterator<Item = &DataPacket> {
        self.in_flight.iter().chain(self.queue.iter().map(|q| &q.packet))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u32) -> DataPacket {
        DataPacket { origin: 5, seq, send_time: 0, hops: 0 }
    }

    #[test]
    fn eleventh_packet_is_queue_full() {
        let mut b = DataBuffer::new(BufferParams::default());
        for i in 0..10 {
            assert_eq!(b.forward_data(pkt(i), 0, false, false), Forward::Buffered);
        }
        assert_eq!(
            b.forward_data(pkt(10), 0, false, false),
            Forward::Drop(pkt(10), DropReason::QueueFull)
        );
    }

    #[test]
    fn hop_limit_drops() {
        let mut b = DataBuffer::new(BufferParams::default());
        let mut p = pkt(0);
        p.hops = 63;
        assert!(matches!(b.forward_data(p, 0, true, true), Forward::Drop(_, DropReason::HopLimit)));
    }

    #[test]
    fn ttl_only_while_parentless() {
        let mut b = DataBuffer::new(BufferParams::default());
        b.forward_data(pkt(0), 0, true, false);
        assert!(b.expire(from_secs(500.0)).is_empty());
        b.parent_lost(from_secs(500.0));
        assert!(b.expire(from_secs(619.0)).is_empty());
        assert_eq!(b.expire(from_secs(620.0)), vec![pkt(0)]);
    }

    #[test]
    fn failed_packet_returns_to_head() {
        let mut b = DataBuffer::new(BufferParams::default());
        b.forward_data(pkt(0), 0, true, false);
        b.forward_data(pkt(1), 0, true, false);
        assert_eq!(b.next_to_send(0, true), Some(pkt(0)));
        assert_eq!(b.next_to_send(0, true), None);
        b.tx_done(false, 5, true);
        assert_eq!(b.next_to_send(6, true), None);
        let later = 5 + from_secs(10.0);
        assert_eq!(b.next_to_send(later, true), Some(pkt(0)));
        assert_eq!(b.len(), 2);
    }
}
