//! RPL control messages in base and secure form.
//!
//! Every `(kind, variant)` pair owns a distinct leading code point, mirroring
//! the ICMPv6 RPL codes (0x00..0x03 base, 0x80..0x83 secure, 0x8A for the
//! consistency check). The secure transform is a modeled cipher: a keyed
//! keystream XOR plus a keyed checksum tag. It exists so that key possession
//! and code-point visibility behave correctly, not to resist cryptanalysis.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::secure::KeyStore;

pub type NodeId = u16;

/// Wire value used for the multicast destination.
pub const MULTICAST_WIRE: u16 = 0xFFFF;

pub const DEFAULT_MAC_LEN: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    Node(NodeId),
    Multicast,
}

impl Destination {
    fn to_wire(self) -> u16 {
        match self {
            Destination::Node(id) => id,
            Destination::Multicast => MULTICAST_WIRE,
        }
    }

    fn from_wire(v: u16) -> Self {
        if v == MULTICAST_WIRE {
            Destination::Multicast
        } else {
            Destination::Node(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    Dio,
    Dis,
    Dao,
    DaoAck,
    Cc,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::Dio,
        MessageKind::Dis,
        MessageKind::Dao,
        MessageKind::DaoAck,
        MessageKind::Cc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Dio => "DIO",
            MessageKind::Dis => "DIS",
            MessageKind::Dao => "DAO",
            MessageKind::DaoAck => "DAO_ACK",
            MessageKind::Cc => "CC",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Base,
    Secure,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Secure => "secure",
        }
    }
}

/// Security configuration a node runs RPL in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeSecurityMode {
    #[serde(rename = "UM")]
    Um,
    #[serde(rename = "PSM")]
    Psm,
    #[serde(rename = "PSMrp")]
    PsmRp,
}

impl NodeSecurityMode {
    /// Whether the node understands secure code points at all.
    pub fn speaks_secure(self) -> bool {
        !matches!(self, NodeSecurityMode::Um)
    }

    pub fn replay_protection(self) -> bool {
        matches!(self, NodeSecurityMode::PsmRp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeSecurityMode::Um => "UM",
            NodeSecurityMode::Psm => "PSM",
            NodeSecurityMode::PsmRp => "PSMrp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SecurityLevel {
    MacOnly,
    EncThenMac,
}

impl SecurityLevel {
    fn to_wire(self) -> u8 {
        match self {
            SecurityLevel::MacOnly => 0,
            SecurityLevel::EncThenMac => 1,
        }
    }

    fn from_wire(v: u8) -> Option<Self> {
        match v {
            0 => Some(SecurityLevel::MacOnly),
            1 => Some(SecurityLevel::EncThenMac),
            _ => None,
        }
    }
}

/// Unencrypted header carried by every secure message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityHeader {
    pub counter: u32,
    pub key_id: u8,
    pub level: SecurityLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrickleParams {
    /// log2 of the minimum interval in milliseconds.
    pub interval_min_log2: u8,
    pub doublings: u8,
    pub redundancy: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DioBody {
    pub dodag_id: NodeId,
    pub version: u8,
    pub rank: u16,
    pub of_id: u16,
    pub trickle: TrickleParams,
    pub dodag_config_flags: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolicitedInfo {
    pub dodag_id: NodeId,
    pub version: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisBody {
    pub solicited: Option<SolicitedInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaoBody {
    pub reachable: Vec<NodeId>,
    pub path_lifetime_s: u32,
    pub ack_requested: bool,
    pub sequence: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaoAckBody {
    pub sequence: u8,
    pub status: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcBody {
    pub nonce: u16,
    pub is_response: bool,
    pub echoed_counter: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageBody {
    Dio(DioBody),
    Dis(DisBody),
    Dao(DaoBody),
    DaoAck(DaoAckBody),
    Cc(CcBody),
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Dio(_) => MessageKind::Dio,
            MessageBody::Dis(_) => MessageKind::Dis,
            MessageBody::Dao(_) => MessageKind::Dao,
            MessageBody::DaoAck(_) => MessageKind::DaoAck,
            MessageBody::Cc(_) => MessageKind::Cc,
        }
    }
}

/// Sealed body of a secure message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureEnvelope {
    pub header: SecurityHeader,
    pub ciphertext: Vec<u8>,
    pub auth_tag: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Content {
    Base(MessageBody),
    Secure(SecureEnvelope),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub source: NodeId,
    pub destination: Destination,
    pub content: Content,
}

impl ControlMessage {
    pub fn base(source: NodeId, destination: Destination, body: MessageBody) -> Self {
        ControlMessage {
            kind: body.kind(),
            source,
            destination,
            content: Content::Base(body),
        }
    }

    pub fn variant(&self) -> Variant {
        match self.content {
            Content::Base(_) => Variant::Base,
            Content::Secure(_) => Variant::Secure,
        }
    }

    pub fn security(&self) -> Option<&SecurityHeader> {
        match &self.content {
            Content::Secure(env) => Some(&env.header),
            Content::Base(_) => None,
        }
    }

    pub fn counter(&self) -> Option<u32> {
        self.security().map(|h| h.counter)
    }

    fn check_invariants(&self) -> Result<(), MessageError> {
        match &self.content {
            Content::Base(body) => {
                if self.kind == MessageKind::Cc {
                    return Err(MessageError::InvariantViolation(
                        "CC exists only in secure form".into(),
                    ));
                }
                if body.kind() != self.kind {
                    return Err(MessageError::InvariantViolation(format!(
                        "body kind {} does not match message kind {}",
                        body.kind(),
                        self.kind
                    )));
                }
            }
            Content::Secure(env) => {
                if env.auth_tag.is_empty() || env.auth_tag.len() > u8::MAX as usize {
                    return Err(MessageError::InvariantViolation(
                        "secure message needs a 1..=255 byte tag".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("message counter exhausted")]
    CounterExhausted,
    #[error("authentication failure")]
    AuthFailure,
    #[error("replay suspected: counter {counter} <= watermark {watermark}")]
    ReplaySuspect { counter: u32, watermark: u32 },
}

/// Result of decoding a frame under a given node mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Message(ControlMessage),
    /// A code point the node does not understand; counted, never processed.
    Unrecognized { code: u8 },
}

pub fn code_point(kind: MessageKind, variant: Variant) -> Option<u8> {
    let base = match kind {
        MessageKind::Dis => 0x00,
        MessageKind::Dio => 0x01,
        MessageKind::Dao => 0x02,
        MessageKind::DaoAck => 0x03,
        MessageKind::Cc => return (variant == Variant::Secure).then_some(0x8A),
    };
    Some(match variant {
        Variant::Base => base,
        Variant::Secure => base | 0x80,
    })
}

pub fn classify_code(code: u8) -> Option<(MessageKind, Variant)> {
    Some(match code {
        0x00 => (MessageKind::Dis, Variant::Base),
        0x01 => (MessageKind::Dio, Variant::Base),
        0x02 => (MessageKind::Dao, Variant::Base),
        0x03 => (MessageKind::DaoAck, Variant::Base),
        0x80 => (MessageKind::Dis, Variant::Secure),
        0x81 => (MessageKind::Dio, Variant::Secure),
        0x82 => (MessageKind::Dao, Variant::Secure),
        0x83 => (MessageKind::DaoAck, Variant::Secure),
        0x8A => (MessageKind::Cc, Variant::Secure),
        _ => return None,
    })
}

/// Classifies raw bytes by code point only. Models an observer that knows
/// which code points exist; `speaks_secure` gates the secure half.
pub fn peek_kind(bytes: &[u8], speaks_secure: bool) -> Option<(MessageKind, Variant)> {
    let (kind, variant) = classify_code(*bytes.first()?)?;
    if variant == Variant::Secure && !speaks_secure {
        return None;
    }
    Some((kind, variant))
}

fn encode_body(body: &MessageBody, out: &mut Vec<u8>) {
    match body {
        MessageBody::Dio(d) => {
            out.extend_from_slice(&d.dodag_id.to_be_bytes());
            out.push(d.version);
            out.extend_from_slice(&d.rank.to_be_bytes());
            out.extend_from_slice(&d.of_id.to_be_bytes());
            out.push(d.trickle.interval_min_log2);
            out.push(d.trickle.doublings);
            out.push(d.trickle.redundancy);
            out.push(d.dodag_config_flags);
        }
        MessageBody::Dis(d) => match &d.solicited {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.dodag_id.to_be_bytes());
                out.push(s.version);
            }
        },
        MessageBody::Dao(d) => {
            out.push(d.sequence);
            out.push(u8::from(d.ack_requested));
            out.extend_from_slice(&d.path_lifetime_s.to_be_bytes());
            out.push(d.reachable.len() as u8);
            for id in &d.reachable {
                out.extend_from_slice(&id.to_be_bytes());
            }
        }
        MessageBody::DaoAck(d) => {
            out.push(d.sequence);
            out.push(d.status);
        }
        MessageBody::Cc(c) => {
            out.extend_from_slice(&c.nonce.to_be_bytes());
            out.push(u8::from(c.is_response));
            out.extend_from_slice(&c.echoed_counter.to_be_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MessageError> {
        if self.pos + n > self.buf.len() {
            return Err(MessageError::MalformedFrame(format!(
                "truncated: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MessageError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MessageError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bool(&mut self) -> Result<bool, MessageError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(MessageError::MalformedFrame(format!("bad flag byte {v}"))),
        }
    }

    fn finish(&self) -> Result<(), MessageError> {
        if self.pos != self.buf.len() {
            return Err(MessageError::MalformedFrame(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode_body(kind: MessageKind, bytes: &[u8]) -> Result<MessageBody, MessageError> {
    let mut r = Reader::new(bytes);
    let body = match kind {
        MessageKind::Dio => MessageBody::Dio(DioBody {
            dodag_id: r.u16()?,
            version: r.u8()?,
            rank: r.u16()?,
            of_id: r.u16()?,
            trickle: TrickleParams {
                interval_min_log2: r.u8()?,
                doublings: r.u8()?,
                redundancy: r.u8()?,
            },
            dodag_config_flags: r.u8()?,
        }),
        MessageKind::Dis => {
            let solicited = if r.bool()? {
                Some(SolicitedInfo {
                    dodag_id: r.u16()?,
                    version: r.u8()?,
                })
            } else {
                None
            };
            MessageBody::Dis(DisBody { solicited })
        }
        MessageKind::Dao => {
            let sequence = r.u8()?;
            let ack_requested = r.bool()?;
            let path_lifetime_s = r.u32()?;
            let n = r.u8()? as usize;
            let mut reachable = Vec::with_capacity(n);
            for _ in 0..n {
                reachable.push(r.u16()?);
            }
            MessageBody::Dao(DaoBody {
                reachable,
                path_lifetime_s,
                ack_requested,
                sequence,
            })
        }
        MessageKind::DaoAck => MessageBody::DaoAck(DaoAckBody {
            sequence: r.u8()?,
            status: r.u8()?,
        }),
        MessageKind::Cc => MessageBody::Cc(CcBody {
            nonce: r.u16()?,
            is_response: r.bool()?,
            echoed_counter: r.u32()?,
        }),
    };
    r.finish()?;
    Ok(body)
}

/// Deterministic, self-delimiting encoding.
pub fn encode(msg: &ControlMessage) -> Result<Vec<u8>, MessageError> {
    msg.check_invariants()?;
    let code = code_point(msg.kind, msg.variant())
        .ok_or_else(|| MessageError::InvariantViolation("no code point".into()))?;
    let mut out = Vec::with_capacity(32);
    out.push(code);
    out.extend_from_slice(&msg.source.to_be_bytes());
    out.extend_from_slice(&msg.destination.to_wire().to_be_bytes());
    match &msg.content {
        Content::Base(body) => {
            let mut b = Vec::new();
            encode_body(body, &mut b);
            out.extend_from_slice(&(b.len() as u16).to_be_bytes());
            out.extend_from_slice(&b);
        }
        Content::Secure(env) => {
            out.extend_from_slice(&env.header.counter.to_be_bytes());
            out.push(env.header.key_id);
            out.push(env.header.level.to_wire());
            out.extend_from_slice(&(env.ciphertext.len() as u16).to_be_bytes());
            out.extend_from_slice(&env.ciphertext);
            out.push(env.auth_tag.len() as u8);
            out.extend_from_slice(&env.auth_tag);
        }
    }
    Ok(out)
}

/// Decodes a frame as seen by a node running `mode`. UM nodes cannot parse
/// secure code points; PSM nodes parse both envelopes (unsealing is separate).
pub fn decode(bytes: &[u8], mode: NodeSecurityMode) -> Result<Decoded, MessageError> {
    let mut r = Reader::new(bytes);
    let code = r.u8()?;
    let Some((kind, variant)) = classify_code(code) else {
        return Err(MessageError::MalformedFrame(format!(
            "unknown code point {code:#04x}"
        )));
    };
    if variant == Variant::Secure && !mode.speaks_secure() {
        return Ok(Decoded::Unrecognized { code });
    }
    let source = r.u16()?;
    let destination = Destination::from_wire(r.u16()?);
    let content = match variant {
        Variant::Base => {
            let len = r.u16()? as usize;
            let body = decode_body(kind, r.take(len)?)?;
            Content::Base(body)
        }
        Variant::Secure => {
            let counter = r.u32()?;
            let key_id = r.u8()?;
            let level = SecurityLevel::from_wire(r.u8()?)
                .ok_or_else(|| MessageError::MalformedFrame("bad security level".into()))?;
            let len = r.u16()? as usize;
            let ciphertext = r.take(len)?.to_vec();
            let tag_len = r.u8()? as usize;
            if tag_len == 0 {
                return Err(MessageError::MalformedFrame("empty auth tag".into()));
            }
            let auth_tag = r.take(tag_len)?.to_vec();
            Content::Secure(SecureEnvelope {
                header: SecurityHeader {
                    counter,
                    key_id,
                    level,
                },
                ciphertext,
                auth_tag,
            })
        }
    };
    r.finish()?;
    Ok(Decoded::Message(ControlMessage {
        kind,
        source,
        destination,
        content,
    }))
}

/// Preinstalled symmetric group key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupKey {
    pub id: u8,
    pub secret: u64,
    #[serde(default = "default_mac_len")]
    pub mac_len: u8,
}

fn default_mac_len() -> u8 {
    DEFAULT_MAC_LEN
}

impl GroupKey {
    pub fn new(id: u8, secret: u64) -> Self {
        GroupKey {
            id,
            secret,
            mac_len: DEFAULT_MAC_LEN,
        }
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn apply_keystream(key: &GroupKey, source: NodeId, counter: u32, data: &mut [u8]) {
    let mut state = key.secret ^ ((source as u64) << 48) ^ ((counter as u64) << 8);
    for chunk in data.chunks_mut(8) {
        let ks = splitmix(&mut state).to_le_bytes();
        for (b, k) in chunk.iter_mut().zip(ks) {
            *b ^= k;
        }
    }
}

fn compute_tag(key: &GroupKey, authenticated: &[u8]) -> Vec<u8> {
    // keyed FNV-1a followed by a splitmix expansion
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ key.secret;
    for &b in authenticated {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut state = h ^ key.secret.rotate_left(17);
    let mut tag = Vec::with_capacity(key.mac_len as usize);
    while tag.len() < key.mac_len as usize {
        tag.extend_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    tag.truncate(key.mac_len as usize);
    tag
}

fn authenticated_bytes(
    kind: MessageKind,
    source: NodeId,
    destination: Destination,
    header: &SecurityHeader,
    ciphertext: &[u8],
) -> Vec<u8> {
    let mut a = Vec::with_capacity(ciphertext.len() + 12);
    a.push(code_point(kind, Variant::Secure).unwrap_or(0xFF));
    a.extend_from_slice(&source.to_be_bytes());
    a.extend_from_slice(&destination.to_wire().to_be_bytes());
    a.extend_from_slice(&header.counter.to_be_bytes());
    a.push(header.key_id);
    a.push(header.level.to_wire());
    a.extend_from_slice(ciphertext);
    a
}

/// Seals a base message (or a CC body) under `key` with the given counter.
pub fn secure_wrap(
    source: NodeId,
    destination: Destination,
    body: &MessageBody,
    key: &GroupKey,
    counter: u32,
    level: SecurityLevel,
) -> Result<ControlMessage, MessageError> {
    if counter == u32::MAX {
        return Err(MessageError::CounterExhausted);
    }
    let kind = body.kind();
    let header = SecurityHeader {
        counter,
        key_id: key.id,
        level,
    };
    let mut ciphertext = Vec::new();
    encode_body(body, &mut ciphertext);
    if level == SecurityLevel::EncThenMac {
        apply_keystream(key, source, counter, &mut ciphertext);
    }
    let auth_tag = compute_tag(
        key,
        &authenticated_bytes(kind, source, destination, &header, &ciphertext),
    );
    Ok(ControlMessage {
        kind,
        source,
        destination,
        content: Content::Secure(SecureEnvelope {
            header,
            ciphertext,
            auth_tag,
        }),
    })
}

/// Convenience wrapper taking an existing base message.
pub fn secure_wrap_message(
    msg: &ControlMessage,
    key: &GroupKey,
    counter: u32,
) -> Result<ControlMessage, MessageError> {
    match &msg.content {
        Content::Base(body) => secure_wrap(
            msg.source,
            msg.destination,
            body,
            key,
            counter,
            SecurityLevel::EncThenMac,
        ),
        Content::Secure(_) => Err(MessageError::InvariantViolation(
            "message is already secure".into(),
        )),
    }
}

/// Highest accepted counter per sender.
pub type ReplayWatermarks = HashMap<NodeId, u32>;

/// Verifies and opens a secure message without touching any watermark.
pub fn open_sealed(msg: &ControlMessage, keystore: &KeyStore) -> Result<MessageBody, MessageError> {
    let Content::Secure(env) = &msg.content else {
        return Err(MessageError::InvariantViolation(
            "base message has nothing to unwrap".into(),
        ));
    };
    let key = keystore
        .key(env.header.key_id)
        .ok_or(MessageError::AuthFailure)?;
    let expected = compute_tag(
        key,
        &authenticated_bytes(
            msg.kind,
            msg.source,
            msg.destination,
            &env.header,
            &env.ciphertext,
        ),
    );
    if expected != env.auth_tag {
        return Err(MessageError::AuthFailure);
    }
    let mut plain = env.ciphertext.clone();
    if env.header.level == SecurityLevel::EncThenMac {
        apply_keystream(key, msg.source, env.header.counter, &mut plain);
    }
    let body = decode_body(msg.kind, &plain).map_err(|_| MessageError::AuthFailure)?;
    Ok(body)
}

/// Verifies the tag, applies the replay watermark, and returns the body.
pub fn secure_unwrap(
    msg: &ControlMessage,
    keystore: &KeyStore,
    watermarks: &mut ReplayWatermarks,
    replay_protection: bool,
) -> Result<MessageBody, MessageError> {
    let body = open_sealed(msg, keystore)?;
    let counter = msg.counter().unwrap_or(0);
    match watermarks.get(&msg.source) {
        Some(&mark) if replay_protection && counter <= mark => {
            return Err(MessageError::ReplaySuspect {
                counter,
                watermark: mark,
            });
        }
        Some(&mark) if counter <= mark => {}
        _ => {
            watermarks.insert(msg.source, counter);
        }
    }
    Ok(body)
}

/// Per-sender monotone counter shared by all secure message kinds.
#[derive(Debug, Clone, Default)]
pub struct CounterSource {
    next: u32,
}

impl CounterSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peek(&self) -> u32 {
        self.next
    }

    pub fn next_counter(&mut self) -> Result<u32, MessageError> {
        if self.next == u32::MAX {
            return Err(MessageError::CounterExhausted);
        }
        let c = self.next;
        self.next += 1;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secure::KeyStore;

    fn dio(rank: u16) -> MessageBody {
        MessageBody::Dio(DioBody {
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
        })
    }

    fn psm_store(secret: u64) -> KeyStore {
        KeyStore::with_key(NodeSecurityMode::Psm, GroupKey::new(0, secret)).unwrap()
    }

    #[test]
    fn base_and_secure_dio_have_different_code_points() {
        let key = GroupKey::new(0, 42);
        let base = ControlMessage::base(3, Destination::Multicast, dio(512));
        let sec = secure_wrap_message(&base, &key, 0).unwrap();
        let a = encode(&base).unwrap();
        let b = encode(&sec).unwrap();
        assert_ne!(a[0], b[0]);
    }

    #[test]
    fn code_points_are_injective() {
        let mut seen = std::collections::HashSet::new();
        for k in MessageKind::ALL {
            for v in [Variant::Base, Variant::Secure] {
                if let Some(c) = code_point(k, v) {
                    assert!(seen.insert(c));
                    assert_eq!(classify_code(c), Some((k, v)));
                }
            }
        }
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn base_cc_is_rejected() {
        let msg = ControlMessage {
            kind: MessageKind::Cc,
            source: 1,
            destination: Destination::Node(2),
            content: Content::Base(MessageBody::Cc(CcBody {
                nonce: 1,
                is_response: false,
                echoed_counter: 0,
            })),
        };
        assert!(matches!(
            encode(&msg),
            Err(MessageError::InvariantViolation(_))
        ));
    }

    #[test]
    fn secure_dio_is_unrecognized_under_um() {
        let key = GroupKey::new(0, 42);
        let base = ControlMessage::base(3, Destination::Multicast, dio(512));
        let bytes = encode(&secure_wrap_message(&base, &key, 0).unwrap()).unwrap();
        assert_eq!(
            decode(&bytes, NodeSecurityMode::Um).unwrap(),
            Decoded::Unrecognized { code: 0x81 }
        );
        match decode(&bytes, NodeSecurityMode::Psm).unwrap() {
            Decoded::Message(m) => {
                assert_eq!(m.kind, MessageKind::Dio);
                assert_eq!(m.variant(), Variant::Secure);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_garbage_is_malformed() {
        assert!(matches!(
            decode(&[0x01, 0x00, 0x07], NodeSecurityMode::Psm),
            Err(MessageError::MalformedFrame(_))
        ));
        assert!(matches!(
            decode(&[], NodeSecurityMode::Um),
            Err(MessageError::MalformedFrame(_))
        ));
    }

    #[test]
    fn wrap_unwrap_and_wrong_key() {
        let k1 = GroupKey::new(0, 1111);
        let body = dio(700);
        let m = secure_wrap(5, Destination::Multicast, &body, &k1, 3, SecurityLevel::EncThenMac)
            .unwrap();
        let mut marks = ReplayWatermarks::new();
        assert_eq!(
            secure_unwrap(&m, &psm_store(1111), &mut marks, true).unwrap(),
            body
        );
        let mut marks = ReplayWatermarks::new();
        assert_eq!(
            secure_unwrap(&m, &psm_store(2222), &mut marks, true),
            Err(MessageError::AuthFailure)
        );
    }

    #[test]
    fn missing_key_id_is_auth_failure() {
        let k = GroupKey::new(7, 1111);
        let m = secure_wrap(5, Destination::Multicast, &dio(700), &k, 0, SecurityLevel::EncThenMac)
            .unwrap();
        let mut marks = ReplayWatermarks::new();
        assert_eq!(
            secure_unwrap(&m, &psm_store(1111), &mut marks, false),
            Err(MessageError::AuthFailure)
        );
    }

    #[test]
    fn watermark_semantics() {
        let k = GroupKey::new(0, 9);
        let store = psm_store(9);
        let mut marks = ReplayWatermarks::new();
        marks.insert(5, 5);
        let fresh = secure_wrap(5, Destination::Multicast, &dio(600), &k, 7, SecurityLevel::EncThenMac)
            .unwrap();
        assert!(secure_unwrap(&fresh, &store, &mut marks, true).is_ok());
        assert_eq!(marks[&5], 7);

        let mut marks = ReplayWatermarks::new();
        marks.insert(5, 5);
        let stale = secure_wrap(5, Destination::Multicast, &dio(600), &k, 5, SecurityLevel::EncThenMac)
            .unwrap();
        assert_eq!(
            secure_unwrap(&stale, &store, &mut marks, true),
            Err(MessageError::ReplaySuspect {
                counter: 5,
                watermark: 5
            })
        );
        // without replay protection the stale copy is accepted
        assert!(secure_unwrap(&stale, &store, &mut marks, false).is_ok());
    }

    #[test]
    fn counters_enumerate_from_zero() {
        let mut src = CounterSource::new();
        let k = GroupKey::new(0, 9);
        let seq: Vec<u32> = (0..3)
            .map(|_| {
                let c = src.next_counter().unwrap();
                let m = secure_wrap(1, Destination::Multicast, &dio(512), &k, c, SecurityLevel::EncThenMac)
                    .unwrap();
                m.counter().unwrap()
            })
            .collect();
        assert_eq!(seq, vec![0, 1, 2]);
    }

    #[test]
    fn counter_exhaustion() {
        let k = GroupKey::new(0, 9);
        assert_eq!(
            secure_wrap(1, Destination::Multicast, &dio(512), &k, u32::MAX, SecurityLevel::MacOnly),
            Err(MessageError::CounterExhausted)
        );
    }

    #[test]
    fn tampering_breaks_the_tag() {
        let k = GroupKey::new(0, 77);
        let m = secure_wrap(2, Destination::Node(9), &dio(1024), &k, 4, SecurityLevel::EncThenMac)
            .unwrap();
        let mut bytes = encode(&m).unwrap();
        let idx = 14; // inside the ciphertext
        bytes[idx] ^= 0x01;
        let Decoded::Message(t) = decode(&bytes, NodeSecurityMode::Psm).unwrap() else {
            panic!()
        };
        let mut marks = ReplayWatermarks::new();
        assert_eq!(
            secure_unwrap(&t, &psm_store(77), &mut marks, false),
            Err(MessageError::AuthFailure)
        );
    }
}
