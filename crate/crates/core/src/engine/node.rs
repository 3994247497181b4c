//! Per-node runtime: router, security state, data buffer and MAC queue.

use std::collections::VecDeque;

use crate::attacks::AdversaryState;
use crate::linklayer::FrameBody;
use crate::messages::{CounterSource, Destination, NodeId, NodeSecurityMode, ReplayWatermarks};
use crate::rpl::forward::DataBuffer;
use crate::rpl::Router;
use crate::secure::{ConsistencyChecker, KeyStore};
use crate::time::SimTime;

/// Trace labels for a queued frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLabel {
    pub kind: &'static str,
    pub variant: &'static str,
    pub counter: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct Outgoing {
    pub dest: Destination,
    pub body: FrameBody,
    pub label: TxLabel,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub legit: bool,
    pub mode: NodeSecurityMode,
    pub router: Router,
    pub keystore: KeyStore,
    pub counter: CounterSource,
    pub watermarks: ReplayWatermarks,
    pub checker: ConsistencyChecker,
    pub buffer: DataBuffer,
    pub mac_queue: VecDeque<Outgoing>,
    pub radio_busy: bool,
    pub adversary: Option<AdversaryState>,
    pub app_seq: u32,
    /// Last time the node went from detached to joined.
    pub joined_at: SimTime,
}

impl Node {
    pub fn silent(&self, now: SimTime) -> bool {
        self.adversary.as_ref().is_some_and(|a| a.radio_silent(now))
    }

    pub fn has_parent(&self) -> bool {
        self.router.preferred_parent().is_some()
    }
}
