//! Message generators shared by the property tests and the acceptance target.

use proptest::prelude::*;

use rplsim::messages::{
    secure_wrap, CcBody, ControlMessage, DaoAckBody, DaoBody, Destination, DioBody, DisBody,
    GroupKey, MessageBody, SecurityLevel, SolicitedInfo, TrickleParams,
};

pub fn dest() -> impl Strategy<Value = Destination> {
    prop_oneof![
        Just(Destination::Multicast),
        (0u16..0xFFFF).prop_map(Destination::Node),
    ]
}

pub fn dio() -> impl Strategy<Value = DioBody> {
    (any::<u16>(), any::<u8>(), 256u16.., any::<u16>(), any::<[u8; 3]>(), any::<u8>()).prop_map(
        |(dodag_id, version, rank, of_id, t, flags)| DioBody {
            dodag_id,
            version,
            rank,
            of_id,
            trickle: TrickleParams {
                interval_min_log2: t[0],
                doublings: t[1],
                redundancy: t[2],
            },
            dodag_config_flags: flags,
        },
    )
}

pub fn base_body() -> impl Strategy<Value = MessageBody> {
    prop_oneof![
        dio().prop_map(MessageBody::Dio),
        proptest::option::of((any::<u16>(), any::<u8>()))
            .prop_map(|s| MessageBody::Dis(DisBody {
                solicited: s.map(|(dodag_id, version)| SolicitedInfo { dodag_id, version }),
            })),
        (proptest::collection::vec(any::<u16>(), 0..20), any::<u32>(), any::<bool>(), any::<u8>())
            .prop_map(|(reachable, path_lifetime_s, ack_requested, sequence)| {
                MessageBody::Dao(DaoBody { reachable, path_lifetime_s, ack_requested, sequence })
            }),
        (any::<u8>(), any::<u8>())
            .prop_map(|(sequence, status)| MessageBody::DaoAck(DaoAckBody { sequence, status })),
    ]
}

pub fn cc_body() -> impl Strategy<Value = MessageBody> {
    (any::<u16>(), any::<bool>(), any::<u32>()).prop_map(|(nonce, is_response, echoed_counter)| {
        MessageBody::Cc(CcBody { nonce, is_response, echoed_counter })
    })
}

pub fn any_body() -> impl Strategy<Value = MessageBody> {
    prop_oneof![4 => base_body(), 1 => cc_body()]
}

pub fn level() -> impl Strategy<Value = SecurityLevel> {
    prop_oneof![Just(SecurityLevel::MacOnly), Just(SecurityLevel::EncThenMac)]
}

pub fn key() -> impl Strategy<Value = GroupKey> {
    (any::<u8>(), any::<u64>(), 1u8..=32).prop_map(|(id, secret, mac_len)| GroupKey { id, secret, mac_len })
}

pub fn secure_msg() -> impl Strategy<Value = (ControlMessage, GroupKey)> {
    (any::<u16>(), dest(), any_body(), key(), 0u32..u32::MAX, level()).prop_map(
        |(src, d, body, k, counter, lvl)| (secure_wrap(src, d, &body, &k, counter, lvl).unwrap(), k),
    )
}
