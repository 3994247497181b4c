//! Preinstalled secure mode behavior: key possession, the acceptance policy
//! for base vs secure messages, and the consistency-check (CC) exchange used
//! for replay protection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{
    CcBody, ControlMessage, DioBody, GroupKey, NodeId, NodeSecurityMode, Variant,
};
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SecureError {
    #[error("mode {0:?} requires at least one preinstalled key")]
    MissingKey(NodeSecurityMode),
    #[error("nonce space exhausted")]
    NonceExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyStore {
    mode: NodeSecurityMode,
    keys: BTreeMap<u8, GroupKey>,
}

impl KeyStore {
    pub fn new(mode: NodeSecurityMode, keys: impl IntoIterator<Item = GroupKey>) -> Result<Self, SecureError> {
        let keys: BTreeMap<u8, GroupKey> = keys.into_iter().map(|k| (k.id, k)).collect();
        if mode.speaks_secure() && keys.is_empty() {
            return Err(SecureError::MissingKey(mode));
        }
        Ok(KeyStore { mode, keys })
    }

    pub fn unsecured() -> Self {
        KeyStore {
            mode: NodeSecurityMode::Um,
            keys: BTreeMap::new(),
        }
    }

    /// A node that recognises secure code points but holds no key.
    pub fn keyless(mode: NodeSecurityMode) -> Self {
        KeyStore {
            mode,
            keys: BTreeMap::new(),
        }
    }

    pub fn with_key(mode: NodeSecurityMode, key: GroupKey) -> Result<Self, SecureError> {
        Self::new(mode, [key])
    }

    pub fn mode(&self) -> NodeSecurityMode {
        self.mode
    }

    pub fn key(&self, id: u8) -> Option<&GroupKey> {
        self.keys.get(&id)
    }

    /// Key used for outgoing messages (lowest id).
    pub fn signing_key(&self) -> Option<&GroupKey> {
        self.keys.values().next()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiscardReason {
    /// Base message reaching a node that runs a secure mode.
    BaseInSecureMode,
    /// Secure code point reaching a node that cannot parse it.
    Unrecognized,
    Malformed,
    AuthFailure,
    /// Withheld DIO whose CC exchange never completed.
    CcFailed,
    /// CC response with a nonce we did not issue.
    WrongNonce,
    /// Frame arrived outside the link-layer acceptance window.
    Stale,
    /// Counter at or below the sender's watermark.
    Replay,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::BaseInSecureMode => "base_in_secure_mode",
            DiscardReason::Unrecognized => "unrecognized",
            DiscardReason::Malformed => "malformed",
            DiscardReason::AuthFailure => "auth_failure",
            DiscardReason::CcFailed => "cc_failed",
            DiscardReason::WrongNonce => "wrong_nonce",
            DiscardReason::Stale => "stale",
            DiscardReason::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Discard(DiscardReason),
}

/// PSM nodes drop base routing messages; UM nodes drop secure ones.
pub fn accept_policy(mode: NodeSecurityMode, msg: &ControlMessage) -> Verdict {
    match (mode.speaks_secure(), msg.variant()) {
        (true, Variant::Secure) | (false, Variant::Base) => Verdict::Accept,
        (true, Variant::Base) => Verdict::Discard(DiscardReason::BaseInSecureMode),
        (false, Variant::Secure) => Verdict::Discard(DiscardReason::Unrecognized),
    }
}

/// What makes an incoming DIO suspect under replay protection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CcTrigger {
    /// Unverified senders and counter anomalies.
    #[default]
    FirstContactAndAnomaly,
    AnomalyOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcSession {
    pub peer: NodeId,
    pub nonce: u16,
    pub issued_at: SimTime,
    pub pending_dio: Option<DioBody>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChallengeOutcome {
    /// A fresh request must be sent to the peer.
    Issue { nonce: u16 },
    /// A session with this peer is already open; its withheld DIO was replaced.
    Refreshed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeoutOutcome {
    Retry { nonce: u16 },
    GiveUp { discarded: Option<DioBody> },
    /// The session already completed or moved on.
    Stale,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseOutcome {
    Verified {
        pending: Option<DioBody>,
        echoed_counter: u32,
    },
    WrongNonce,
    NoSession,
}

/// Per-node consistency-check state.
#[derive(Debug, Clone)]
pub struct ConsistencyChecker {
    pub trigger: CcTrigger,
    pub max_retries: u32,
    sessions: BTreeMap<NodeId, CcSession>,
    verified: BTreeSet<NodeId>,
    next_nonce: u16,
    issued: u32,
}

impl ConsistencyChecker {
    pub fn new(trigger: CcTrigger, max_retries: u32, nonce_start: u16) -> Self {
        ConsistencyChecker {
            trigger,
            max_retries,
            sessions: BTreeMap::new(),
            verified: BTreeSet::new(),
            next_nonce: nonce_start,
            issued: 0,
        }
    }

    pub fn is_verified(&self, peer: NodeId) -> bool {
        self.verified.contains(&peer)
    }

    pub fn issued(&self) -> u32 {
        self.issued
    }

    pub fn session(&self, peer: NodeId) -> Option<&CcSession> {
        self.sessions.get(&peer)
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Whether a DIO from `sender` must be withheld pending a CC exchange.
    pub fn is_suspect(&self, sender: NodeId, counter_anomaly: bool) -> bool {
        counter_anomaly
            || (self.trigger == CcTrigger::FirstContactAndAnomaly && !self.is_verified(sender))
    }

    fn fresh_nonce(&mut self) -> Result<u16, SecureError> {
        if self.issued >= 1 << 16 {
            return Err(SecureError::NonceExhausted);
        }
        let n = self.next_nonce;
        self.next_nonce = self.next_nonce.wrapping_add(1);
        self.issued += 1;
        Ok(n)
    }

    /// Withholds `dio` and opens (or refreshes) a session with `peer`.
    pub fn challenge(
        &mut self,
        now: SimTime,
        peer: NodeId,
        dio: Option<DioBody>,
    ) -> Result<ChallengeOutcome, SecureError> {
        if let Some(s) = self.sessions.get_mut(&peer) {
            if dio.is_some() {
                s.pending_dio = dio;
            }
            return Ok(ChallengeOutcome::Refreshed);
        }
        let nonce = self.fresh_nonce()?;
        self.sessions.insert(
            peer,
            CcSession {
                peer,
                nonce,
                issued_at: now,
                pending_dio: dio,
                retries: 0,
            },
        );
        Ok(ChallengeOutcome::Issue { nonce })
    }

    pub fn on_timeout(&mut self, peer: NodeId, nonce: u16, attempt: u32) -> TimeoutOutcome {
        let Some(s) = self.sessions.get_mut(&peer) else {
            return TimeoutOutcome::Stale;
        };
        if s.nonce != nonce || s.retries != attempt {
            return TimeoutOutcome::Stale;
        }
        if s.retries < self.max_retries {
            s.retries += 1;
            return TimeoutOutcome::Retry { nonce };
        }
        let s = self.sessions.remove(&peer).expect("session present");
        TimeoutOutcome::GiveUp {
            discarded: s.pending_dio,
        }
    }

    pub fn on_response(&mut self, peer: NodeId, body: &CcBody) -> ResponseOutcome {
        match self.sessions.get(&peer) {
            None => ResponseOutcome::NoSession,
            Some(s) if s.nonce != body.nonce => ResponseOutcome::WrongNonce,
            Some(_) => {
                let s = self.sessions.remove(&peer).expect("session present");
                self.verified.insert(peer);
                ResponseOutcome::Verified {
                    pending: s.pending_dio,
                    echoed_counter: body.echoed_counter,
                }
            }
        }
    }

    /// Drops verification state for a peer (e.g. after it was evicted).
    pub fn forget(&mut self, peer: NodeId) {
        self.verified.remove(&peer);
    }
}

/// Builds the response to an authenticated CC request.
pub fn respond_cc(request: &CcBody, own_counter: u32) -> Option<CcBody> {
    if request.is_response {
        return None;
    }
    Some(CcBody {
        nonce: request.nonce,
        is_response: true,
        echoed_counter: own_counter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{Destination, MessageBody, TrickleParams};

    fn dio(rank: u16) -> DioBody {
        DioBody {
            dodag_id: 0,
            version: 1,
            rank,
            of_id: 1,
            trickle: TrickleParams {
                interval_min_log2: 12,
                doublings: 8,
                redundancy: 10,
            },
            dodag_config_flags: 0,
        }
    }

    #[test]
    fn psm_requires_a_key() {
        assert_eq!(
            KeyStore::new(NodeSecurityMode::Psm, []),
            Err(SecureError::MissingKey(NodeSecurityMode::Psm))
        );
        assert!(KeyStore::new(NodeSecurityMode::Um, []).is_ok());
    }

    #[test]
    fn policy_matrix() {
        let base = ControlMessage::base(1, Destination::Multicast, MessageBody::Dio(dio(512)));
        let key = GroupKey::new(0, 5);
        let sec = crate::messages::secure_wrap_message(&base, &key, 0).unwrap();
        assert_eq!(
            accept_policy(NodeSecurityMode::Psm, &base),
            Verdict::Discard(DiscardReason::BaseInSecureMode)
        );
        assert_eq!(
            accept_policy(NodeSecurityMode::Um, &sec),
            Verdict::Discard(DiscardReason::Unrecognized)
        );
        assert_eq!(accept_policy(NodeSecurityMode::Psm, &sec), Verdict::Accept);
        assert_eq!(accept_policy(NodeSecurityMode::PsmRp, &sec), Verdict::Accept);
        assert_eq!(accept_policy(NodeSecurityMode::Um, &base), Verdict::Accept);
    }

    #[test]
    fn honest_response_releases_the_withheld_dio() {
        let mut cc = ConsistencyChecker::new(CcTrigger::FirstContactAndAnomaly, 3, 100);
        assert!(cc.is_suspect(7, false));
        let ChallengeOutcome::Issue { nonce } = cc.challenge(0, 7, Some(dio(512))).unwrap() else {
            panic!()
        };
        let resp = respond_cc(
            &CcBody {
                nonce,
                is_response: false,
                echoed_counter: 0,
            },
            42,
        )
        .unwrap();
        assert_eq!(
            cc.on_response(7, &resp),
            ResponseOutcome::Verified {
                pending: Some(dio(512)),
                echoed_counter: 42
            }
        );
        assert!(cc.is_verified(7));
        assert!(!cc.is_suspect(7, false));
        assert!(cc.is_suspect(7, true));
    }

    #[test]
    fn wrong_nonce_keeps_session() {
        let mut cc = ConsistencyChecker::new(CcTrigger::FirstContactAndAnomaly, 3, 100);
        cc.challenge(0, 7, Some(dio(512))).unwrap();
        let bad = CcBody {
            nonce: 99,
            is_response: true,
            echoed_counter: 1,
        };
        assert_eq!(cc.on_response(7, &bad), ResponseOutcome::WrongNonce);
        assert!(cc.session(7).is_some());
    }

    #[test]
    fn retries_then_give_up() {
        let mut cc = ConsistencyChecker::new(CcTrigger::FirstContactAndAnomaly, 3, 0);
        let ChallengeOutcome::Issue { nonce } = cc.challenge(0, 7, Some(dio(512))).unwrap() else {
            panic!()
        };
        for attempt in 0..3 {
            assert_eq!(cc.on_timeout(7, nonce, attempt), TimeoutOutcome::Retry { nonce });
        }
        assert_eq!(
            cc.on_timeout(7, nonce, 3),
            TimeoutOutcome::GiveUp {
                discarded: Some(dio(512))
            }
        );
        assert!(!cc.is_verified(7));
        assert_eq!(cc.on_timeout(7, nonce, 3), TimeoutOutcome::Stale);
    }

    #[test]
    fn existing_session_is_refreshed_not_reissued() {
        let mut cc = ConsistencyChecker::new(CcTrigger::FirstContactAndAnomaly, 3, 0);
        cc.challenge(0, 7, Some(dio(512))).unwrap();
        assert_eq!(
            cc.challenge(10, 7, Some(dio(768))).unwrap(),
            ChallengeOutcome::Refreshed
        );
        assert_eq!(cc.issued(), 1);
        assert_eq!(cc.session(7).unwrap().pending_dio, Some(dio(768)));
    }

    #[test]
    fn anomaly_only_skips_first_contact() {
        let cc = ConsistencyChecker::new(CcTrigger::AnomalyOnly, 3, 0);
        assert!(!cc.is_suspect(7, false));
        assert!(cc.is_suspect(7, true));
    }

    #[test]
    fn response_echoes_nonce() {
        let req = CcBody {
            nonce: 0x1F2A,
            is_response: false,
            echoed_counter: 0,
        };
        assert_eq!(respond_cc(&req, 9).unwrap().nonce, 0x1F2A);
        assert!(respond_cc(&respond_cc(&req, 9).unwrap(), 9).is_none());
    }

    #[test]
    fn nonces_are_unique_until_exhausted() {
        let mut cc = ConsistencyChecker::new(CcTrigger::FirstContactAndAnomaly, 0, 65530);
        let mut seen = BTreeSet::new();
        for _ in 0..=u16::MAX as u32 {
            let ChallengeOutcome::Issue { nonce } = cc.challenge(0, 7, None).unwrap() else {
                panic!()
            };
            assert!(seen.insert(nonce));
            let resp = CcBody {
                nonce,
                is_response: true,
                echoed_counter: 0,
            };
            assert!(matches!(cc.on_response(7, &resp), ResponseOutcome::Verified { .. }));
        }
        assert_eq!(cc.challenge(0, 7, None), Err(SecureError::NonceExhausted));
    }
}
