//! Per-round event trace. Metrics are computed from these records alone.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::messages::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum TraceRecord {
    Meta {
        round: u32,
        seed: u64,
        duration_us: u64,
        activation_us: u64,
        attack: String,
        rdc: String,
        legit: Vec<NodeId>,
        adversaries: Vec<NodeId>,
        root: NodeId,
    },
    Tx {
        time_us: u64,
        sender: NodeId,
        /// Node id or `*` for multicast.
        receiver: String,
        kind: String,
        variant: String,
        counter: String,
        outcome: String,
    },
    Rx {
        time_us: u64,
        node: NodeId,
        link_src: NodeId,
        kind: String,
        verdict: String,
    },
    AppSend {
        time_us: u64,
        origin: NodeId,
        seq: u32,
    },
    AppDeliver {
        time_us: u64,
        origin: NodeId,
        seq: u32,
        latency_us: u64,
        hops: u8,
    },
    AppDrop {
        time_us: u64,
        node: NodeId,
        origin: NodeId,
        seq: u32,
        reason: String,
    },
    Buffered {
        node: NodeId,
        origin: NodeId,
        seq: u32,
    },
    Parent {
        time_us: u64,
        node: NodeId,
        old: Option<NodeId>,
        new: Option<NodeId>,
        rank: u16,
    },
    Evict {
        time_us: u64,
        node: NodeId,
        neighbor: NodeId,
    },
    CcFail {
        time_us: u64,
        node: NodeId,
        peer: NodeId,
    },
    Replay {
        time_us: u64,
        adversary: NodeId,
        kind: String,
    },
    Snapshot {
        time_us: u64,
        edges: Vec<(NodeId, NodeId)>,
    },
    Violation {
        time_us: u64,
        what: String,
    },
    Energy {
        node: NodeId,
        tx_s: f64,
        rx_s: f64,
        idle_s: f64,
        sleep_s: f64,
        energy_mj: f64,
    },
}

pub fn write_ndjson<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_ndjson<R: BufRead>(r: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}

pub fn to_bytes(records: &[TraceRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ndjson(records, &mut buf).expect("writing to memory");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_round_trip() {
        let recs = vec![
            TraceRecord::AppSend { time_us: 5, origin: 3, seq: 0 },
            TraceRecord::Parent { time_us: 9, node: 3, old: None, new: Some(0), rank: 512 },
            TraceRecord::Energy { node: 3, tx_s: 0.5, rx_s: 0.25, idle_s: 1.0, sleep_s: 2.0, energy_mj: 0.1 },
        ];
        let bytes = to_bytes(&recs);
        assert_eq!(read_ndjson(&bytes[..]).unwrap(), recs);
    }
}
