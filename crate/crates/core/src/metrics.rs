//! Round metrics computed from a trace, and aggregation across rounds.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::messages::{MessageKind, NodeId};
use crate::trace::TraceRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace has no meta record")]
    MissingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub sent: u32,
    pub delivered: u32,
    pub ctrl_sent: u32,
    pub ctrl_recv: u32,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub round: u32,
    pub seed: u64,
    pub sent: u32,
    pub delivered: u32,
    pub drops: BTreeMap<String, u32>,
    pub buffered_at_end: u32,
    /// sent == delivered + drops + buffered, with no packet counted twice.
    pub conserved: bool,
    pub pdr: f64,
    /// Mean over delivered packets; `None` when nothing arrived.
    pub avg_latency_s: Option<f64>,
    /// Per-legitimate-node averages.
    pub ctrl_sent: f64,
    pub ctrl_recv: f64,
    pub ctrl_sent_by_kind: BTreeMap<String, f64>,
    pub ctrl_recv_by_kind: BTreeMap<String, f64>,
    pub energy_mj: f64,
    pub mean_power_mw: f64,
    /// Legitimate energy per delivered packet; `None` when nothing arrived.
    pub energy_mj_per_delivered: Option<f64>,
    /// Seconds from activation until every child of an adversary evicted it.
    pub recovery_s: Option<f64>,
    pub cc_failures: u32,
    pub replays: u32,
    pub violations: u32,
    pub final_edges: Vec<(NodeId, NodeId)>,
    /// Every (child, parent) edge seen in any snapshot.
    pub edges_seen: Vec<(NodeId, NodeId)>,
    pub per_node: Vec<NodeMetrics>,
}

fn is_control(kind: &str) -> bool {
    MessageKind::ALL.iter().any(|k| k.as_str() == kind)
}

/// Pure function of the trace.
pub fn compute_metrics(trace: &[TraceRecord]) -> Result<RunMetrics, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let Some(TraceRecord::Meta { round, seed, duration_us, activation_us, attack, legit, adversaries, .. }) =
        trace.iter().find(|r| matches!(r, TraceRecord::Meta { .. }))
    else {
        return Err(MetricsError::MissingMeta);
    };
    let legit_set: BTreeSet<NodeId> = legit.iter().copied().collect();
    let mut per_node: BTreeMap<NodeId, NodeMetrics> = legit
        .iter()
        .map(|&n| (n, NodeMetrics { node: n, sent: 0, delivered: 0, ctrl_sent: 0, ctrl_recv: 0, energy_mj: 0.0 }))
        .collect();
    let mut sent = HashSet::new();
    let mut delivered = HashSet::new();
    let mut dropped = HashSet::new();
    let mut buffered = HashSet::new();
    let mut duplicates = 0u32;
    let mut drops: BTreeMap<String, u32> = BTreeMap::new();
    let mut latency_sum = 0u128;
    let mut sent_by_kind: BTreeMap<String, u32> = BTreeMap::new();
    let mut recv_by_kind: BTreeMap<String, u32> = BTreeMap::new();
    let mut energy = 0.0;
    let mut cc_failures = 0;
    let mut replays = 0;
    let mut violations = 0;
    let mut final_edges = Vec::new();
    let mut edges_seen = BTreeSet::new();
    let mut parent_at_activation: HashMap<NodeId, Option<NodeId>> = HashMap::new();
    let mut evicted_at: HashMap<(NodeId, NodeId), u64> = HashMap::new();

    for r in trace {
        match r {
            TraceRecord::AppSend { origin, seq, .. } => {
                if !sent.insert((*origin, *seq)) {
                    duplicates += 1;
                }
                if let Some(m) = per_node.get_mut(origin) {
                    m.sent += 1;
                }
            }
            TraceRecord::AppDeliver { origin, seq, latency_us, .. } => {
                if !delivered.insert((*origin, *seq)) {
                    duplicates += 1;
                    continue;
                }
                latency_sum += *latency_us as u128;
                if let Some(m) = per_node.get_mut(origin) {
                    m.delivered += 1;
                }
            }
            TraceRecord::AppDrop { origin, seq, reason, .. } => {
                if !dropped.insert((*origin, *seq)) {
                    duplicates += 1;
                }
                *drops.entry(reason.clone()).or_default() += 1;
            }
            TraceRecord::Buffered { origin, seq, .. } => {
                buffered.insert((*origin, *seq));
            }
            TraceRecord::Tx { sender, kind, .. } if is_control(kind) && legit_set.contains(sender) => {
                *sent_by_kind.entry(kind.clone()).or_default() += 1;
                per_node.get_mut(sender).expect("legit").ctrl_sent += 1;
            }
            TraceRecord::Rx { node, kind, .. } if is_control(kind) && legit_set.contains(node) => {
                *recv_by_kind.entry(kind.clone()).or_default() += 1;
                per_node.get_mut(node).expect("legit").ctrl_recv += 1;
            }
            TraceRecord::Energy { node, energy_mj, .. } if legit_set.contains(node) => {
                energy += energy_mj;
                per_node.get_mut(node).expect("legit").energy_mj = *energy_mj;
            }
            TraceRecord::Parent { time_us, node, new, .. } if *time_us <= *activation_us => {
                parent_at_activation.insert(*node, *new);
            }
            TraceRecord::Evict { time_us, node, neighbor } if *time_us >= *activation_us => {
                evicted_at.entry((*node, *neighbor)).or_insert(*time_us);
            }
            TraceRecord::CcFail { .. } => cc_failures += 1,
            TraceRecord::Replay { .. } => replays += 1,
            TraceRecord::Violation { .. } => violations += 1,
            TraceRecord::Snapshot { edges, .. } => {
                edges_seen.extend(edges.iter().copied());
                final_edges = edges.clone();
            }
            _ => {}
        }
    }

    let n_legit = legit.len().max(1) as f64;
    let n_sent = sent.len() as u32;
    let n_delivered = delivered.len() as u32;
    let overlap = delivered.intersection(&dropped).count()
        + buffered.iter().filter(|p| delivered.contains(p) || dropped.contains(p)).count();
    let accounted: HashSet<_> = delivered.iter().chain(&dropped).chain(&buffered).copied().collect();
    let conserved = duplicates == 0 && overlap == 0 && accounted == sent;

    let mut recovery_s = None;
    if attack != "none" {
        let mut worst: Option<u64> = None;
        let mut all = true;
        for &adv in adversaries {
            for (&child, &p) in &parent_at_activation {
                if p != Some(adv) || !legit_set.contains(&child) {
                    continue;
                }
                match evicted_at.get(&(child, adv)) {
                    Some(&t) => worst = Some(worst.map_or(t, |w: u64| w.max(t))),
                    None => all = false,
                }
            }
        }
        if all {
            recovery_s = worst.map(|t| (t - activation_us) as f64 / 1e6);
        }
    }

    let by_kind = |m: &BTreeMap<String, u32>| -> BTreeMap<String, f64> {
        MessageKind::ALL
            .iter()
            .map(|k| (k.as_str().to_string(), *m.get(k.as_str()).unwrap_or(&0) as f64 / n_legit))
            .collect()
    };
    let dur_s = *duration_us as f64 / 1e6;
    Ok(RunMetrics {
        round: *round,
        seed: *seed,
        sent: n_sent,
        delivered: n_delivered,
        drops,
        buffered_at_end: buffered.len() as u32,
        conserved,
        pdr: if n_sent == 0 { 0.0 } else { n_delivered as f64 / n_sent as f64 },
        avg_latency_s: (n_delivered > 0).then(|| latency_sum as f64 / n_delivered as f64 / 1e6),
        ctrl_sent: sent_by_kind.values().sum::<u32>() as f64 / n_legit,
        ctrl_recv: recv_by_kind.values().sum::<u32>() as f64 / n_legit,
        ctrl_sent_by_kind: by_kind(&sent_by_kind),
        ctrl_recv_by_kind: by_kind(&recv_by_kind),
        energy_mj: energy,
        mean_power_mw: if dur_s > 0.0 { energy / dur_s / n_legit } else { 0.0 },
        energy_mj_per_delivered: (n_delivered > 0).then(|| energy / n_delivered as f64),
        recovery_s,
        cc_failures,
        replays,
        violations,
        final_edges,
        edges_seen: edges_seen.into_iter().collect(),
        per_node: per_node.into_values().collect(),
    })
}

/// Mean, 95% Student-t half-width and median of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub mean: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub ci: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub median: f64,
}

// JSON has no NaN; serde_json writes it as null
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Two-sided 95% half-width `t(0.975, n-1) * s / sqrt(n)`; NaN below two samples.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt()
}

pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stat { n: 0, mean: f64::NAN, ci: f64::NAN, median: f64::NAN };
        }
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 { sorted[m / 2] } else { (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0 };
        Stat { n: m, mean: v.iter().sum::<f64>() / m as f64, ci: ci95(&v), median }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub rounds: usize,
    pub pdr: Stat,
    pub latency_s: Stat,
    pub ctrl_sent: Stat,
    pub ctrl_recv: Stat,
    pub ctrl_total: Stat,
    pub energy_mj_per_pkt: Stat,
    pub mean_power_mw: Stat,
    pub recovery_s: Stat,
    pub per_round: Vec<RunMetrics>,
}

pub fn aggregate(rounds: Vec<RunMetrics>) -> AggregateMetrics {
    let col = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Stat {
        Stat::of(&rounds.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect::<Vec<_>>())
    };
    AggregateMetrics {
        rounds: rounds.len(),
        pdr: col(&|r| Some(r.pdr)),
        latency_s: col(&|r| r.avg_latency_s),
        ctrl_sent: col(&|r| Some(r.ctrl_sent)),
        ctrl_recv: col(&|r| Some(r.ctrl_recv)),
        ctrl_total: col(&|r| Some(r.ctrl_sent + r.ctrl_recv)),
        energy_mj_per_pkt: col(&|r| r.energy_mj_per_delivered),
        mean_power_mw: col(&|r| Some(r.mean_power_mw)),
        recovery_s: col(&|r| r.recovery_s),
        per_round: rounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TraceRecord {
        TraceRecord::Meta {
            round: 0,
            seed: 1,
            duration_us: 1_000_000,
            activation_us: 0,
            attack: "none".into(),
            rdc: "AlwaysOn".into(),
            legit: vec![0, 1],
            adversaries: vec![],
            root: 0,
        }
    }

    #[test]
    fn pdr_arithmetic() {
        let mut t = vec![meta()];
        for s in 0..100 {
            t.push(TraceRecord::AppSend { time_us: 0, origin: 1, seq: s });
            if s < 98 {
                t.push(TraceRecord::AppDeliver { time_us: 10, origin: 1, seq: s, latency_us: 10, hops: 1 });
            } else {
                t.push(TraceRecord::AppDrop { time_us: 10, node: 1, origin: 1, seq: s, reason: "no_route".into() });
            }
        }
        let m = compute_metrics(&t).unwrap();
        assert!((m.pdr - 0.98).abs() < 1e-12);
        assert!(m.conserved);
        assert!((m.avg_latency_s.unwrap() - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert_eq!(compute_metrics(&[]), Err(MetricsError::EmptyTrace));
    }

    #[test]
    fn unaccounted_packet_breaks_conservation() {
        let t = vec![meta(), TraceRecord::AppSend { time_us: 0, origin: 1, seq: 0 }];
        assert!(!compute_metrics(&t).unwrap().conserved);
    }

    #[test]
    fn ten_round_t_multiplier() {
        assert!((t_quantile_975(9) - 2.262157).abs() < 1e-5);
    }

    #[test]
    fn zero_variance_gives_zero_width() {
        assert_eq!(ci95(&[0.5; 10]), 0.0);
    }
}
