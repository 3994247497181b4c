//! Scenario configuration with a strict schema.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackKind, AttackProfile};
use crate::linklayer::{PowerParams, RadioParams, RdcModel};
use crate::messages::{GroupKey, NodeId, NodeSecurityMode};
use crate::rpl::forward::BufferParams;
use crate::rpl::mrhof::MrhofParams;
use crate::rpl::trickle::TrickleConfig;
use crate::rpl::RplParams;
use crate::secure::CcTrigger;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("disconnected topology: nodes {0:?} cannot reach the root")]
    DisconnectedTopology(Vec<NodeId>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Root,
    Router,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub role: Role,
    #[serde(default = "default_mode")]
    pub security_mode: NodeSecurityMode,
    /// Fixed wake phase; random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wake_phase_ms: Option<f64>,
}

fn default_mode() -> NodeSecurityMode {
    NodeSecurityMode::Um
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimerConfig {
    pub upward_reachable_timeout_s: f64,
    pub downward_route_lifetime_s: f64,
    pub trickle: TrickleConfig,
}

impl Default for TimerConfig {
    fn default() -> Self {
        TimerConfig {
            upward_reachable_timeout_s: 600.0,
            downward_route_lifetime_s: 600.0,
            trickle: TrickleConfig::default(),
        }
    }
}

/// Protocol constants not covered by `timers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RplTuning {
    pub version: u8,
    pub mrhof: MrhofParams,
    pub dao_delay_s: f64,
    pub dao_ack_timeout_s: f64,
    pub dao_max_retries: u32,
    pub dis_interval_s: f64,
    pub dis_startup_max_s: f64,
    pub repair_holddown_s: f64,
    pub etx_alpha: f64,
    pub route_maintenance_s: f64,
}

impl Default for RplTuning {
    fn default() -> Self {
        let p = RplParams::default();
        RplTuning {
            version: p.version,
            mrhof: p.mrhof,
            dao_delay_s: p.dao_delay_s,
            dao_ack_timeout_s: p.dao_ack_timeout_s,
            dao_max_retries: p.dao_max_retries,
            dis_interval_s: p.dis_interval_s,
            dis_startup_max_s: p.dis_startup_max_s,
            repair_holddown_s: p.repair_holddown_s,
            etx_alpha: p.etx_alpha,
            route_maintenance_s: p.route_maintenance_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecurityConfig {
    pub key: GroupKey,
    pub cc_trigger: CcTrigger,
    pub cc_timeout_s: f64,
    pub cc_retries: u32,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        SecurityConfig {
            key: GroupKey::new(1, 0x5eed_cafe_f00d_0001),
            cc_trigger: CcTrigger::default(),
            cc_timeout_s: 2.0,
            cc_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub period_s: f64,
    pub jitter_s: f64,
    pub start_s: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            period_s: 60.0,
            jitter_s: 0.0,
            start_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub topology: Vec<NodeSpec>,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub rdc: RdcModel,
    #[serde(default)]
    pub power: PowerParams,
    #[serde(default)]
    pub attack: AttackProfile,
    #[serde(default)]
    pub timers: TimerConfig,
    #[serde(default)]
    pub rpl: RplTuning,
    #[serde(default)]
    pub security: SecurityConfig,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub buffer: BufferParams,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default = "default_snapshot")]
    pub snapshot_interval_s: f64,
    /// Check loop freedom and rank consistency after every event.
    #[serde(default = "default_true")]
    pub check_invariants: bool,
}

fn default_duration() -> f64 {
    1200.0
}
fn default_rounds() -> u32 {
    10
}
fn default_seed() -> u64 {
    1
}
fn default_snapshot() -> f64 {
    60.0
}
fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn root(&self) -> Option<&NodeSpec> {
        self.topology.iter().find(|n| n.role == Role::Root)
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.topology.iter().find(|n| n.id == id)
    }

    pub fn is_adversary(&self, id: NodeId) -> bool {
        self.attack.adversary_ids.contains(&id)
    }

    /// Nodes that are neither adversaries nor wormhole endpoints.
    pub fn legit_ids(&self) -> Vec<NodeId> {
        self.topology
            .iter()
            .map(|n| n.id)
            .filter(|&id| !self.is_adversary(id))
            .collect()
    }

    /// Security mode of the legitimate network (taken from the root).
    pub fn network_mode(&self) -> NodeSecurityMode {
        self.root().map_or(NodeSecurityMode::Um, |r| r.security_mode)
    }

    pub fn rpl_params(&self) -> RplParams {
        let t = &self.rpl;
        RplParams {
            dodag_id: self.root().map_or(0, |r| r.id),
            version: t.version,
            mrhof: t.mrhof,
            trickle: self.timers.trickle,
            upward_reachable_timeout_s: self.timers.upward_reachable_timeout_s,
            downward_route_lifetime_s: self.timers.downward_route_lifetime_s,
            dao_delay_s: t.dao_delay_s,
            dao_ack_timeout_s: t.dao_ack_timeout_s,
            dao_max_retries: t.dao_max_retries,
            dis_interval_s: t.dis_interval_s,
            dis_startup_max_s: t.dis_startup_max_s,
            repair_holddown_s: t.repair_holddown_s,
            etx_alpha: t.etx_alpha,
            route_maintenance_s: t.route_maintenance_s,
        }
    }

    /// Field-level checks; returns every problem found.
    // negated comparisons so that NaN fails them
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let roots = self.topology.iter().filter(|n| n.role == Role::Root).count();
        if roots != 1 {
            errs.push(format!("topology: exactly one root required, found {roots}"));
        }
        let mut seen = BTreeSet::new();
        for n in &self.topology {
            if !seen.insert(n.id) {
                errs.push(format!("topology: duplicate node id {}", n.id));
            }
            if n.id == crate::messages::MULTICAST_WIRE {
                errs.push(format!("topology: node id {} is reserved", n.id));
            }
            if !n.x.is_finite() || !n.y.is_finite() {
                errs.push(format!("topology[{}]: coordinates must be finite", n.id));
            }
        }
        if !(self.radio.range_m > 0.0) {
            errs.push("radio.range_m: must be positive".into());
        }
        if !(0.0..1.0).contains(&self.radio.loss_prob) {
            errs.push("radio.loss_prob: must be in [0, 1)".into());
        }
        if self.rdc.max_tx_attempts == 0 {
            errs.push("rdc.max_tx_attempts: must be at least 1".into());
        }
        if self.rdc.wake_interval_ms == 0 {
            errs.push("rdc.wake_interval_ms: must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            errs.push("duration_s: must be positive".into());
        }
        if self.rounds == 0 {
            errs.push("rounds: must be at least 1".into());
        }
        if !(self.traffic.period_s > 0.0) {
            errs.push("traffic.period_s: must be positive".into());
        }
        if self.traffic.jitter_s < 0.0 || self.traffic.jitter_s >= self.traffic.period_s {
            errs.push("traffic.jitter_s: must be in [0, period_s)".into());
        }
        if !(self.timers.upward_reachable_timeout_s > 0.0) {
            errs.push("timers.upward_reachable_timeout_s: must be positive".into());
        }
        if !(self.snapshot_interval_s > 0.0) {
            errs.push("snapshot_interval_s: must be positive".into());
        }
        if self.buffer.capacity == 0 {
            errs.push("buffer.capacity: must be at least 1".into());
        }
        let a = &self.attack;
        for &id in &a.adversary_ids {
            match self.node(id) {
                None => errs.push(format!("attack.adversary_ids: {id} is not in the topology")),
                Some(n) if n.role == Role::Root => {
                    errs.push(format!("attack.adversary_ids: {id} is the root"))
                }
                _ => {}
            }
        }
        match a.kind {
            AttackKind::Wormhole if a.adversary_ids.len() != 2 => {
                errs.push("attack.adversary_ids: wormhole needs exactly two endpoints".into())
            }
            AttackKind::Blackhole | AttackKind::SelectiveForward | AttackKind::Neighbor
                if a.adversary_ids.len() != 1 =>
            {
                errs.push("attack.adversary_ids: this attack needs exactly one adversary".into())
            }
            _ => {}
        }
        if a.kind != AttackKind::None && self.duration_s < a.activation_time_s {
            errs.push("duration_s: must not be shorter than attack.activation_time_s".into());
        }
        if a.activation_time_s < 0.0 {
            errs.push("attack.activation_time_s: must not be negative".into());
        }
        if a.wormhole_link_latency_ms < 0.0 {
            errs.push("attack.wormhole_link_latency_ms: must not be negative".into());
        }
        if a.internal && !a.has_key && self.network_mode().speaks_secure() {
            errs.push("attack.has_key: an internal adversary in a secure network holds the key".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
