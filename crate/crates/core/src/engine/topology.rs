//! Radio graph construction, connectivity checks and a clustered sampler.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use super::config::{ConfigError, NodeSpec, Role, ScenarioConfig};
use crate::messages::{NodeId, NodeSecurityMode};

/// Nodes within `range` of each other, keyed by id.
pub fn adjacency(nodes: &[NodeSpec], range: f64) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
    for a in nodes {
        for b in nodes {
            if a.id != b.id && ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() <= range {
                adj.get_mut(&a.id).expect("present").insert(b.id);
            }
        }
    }
    adj
}

/// Nodes reachable from `start` without passing through `excluded`.
pub fn reachable(
    adj: &BTreeMap<NodeId, BTreeSet<NodeId>>,
    start: NodeId,
    excluded: &BTreeSet<NodeId>,
) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([start]);
    let mut q = VecDeque::from([start]);
    while let Some(n) = q.pop_front() {
        for &m in adj.get(&n).into_iter().flatten() {
            if !excluded.contains(&m) && seen.insert(m) {
                q.push_back(m);
            }
        }
    }
    seen
}

/// Checks that every legitimate node reaches the root with all adversaries
/// removed, which also guarantees a path around them.
pub fn check_connectivity(cfg: &ScenarioConfig) -> Result<BTreeMap<NodeId, BTreeSet<NodeId>>, ConfigError> {
    let adj = adjacency(&cfg.topology, cfg.radio.range_m);
    let root = cfg.root().map(|r| r.id).ok_or_else(|| ConfigError::Invalid(vec!["topology: no root".into()]))?;
    let excluded: BTreeSet<NodeId> = cfg.attack.adversary_ids.iter().copied().collect();
    let seen = reachable(&adj, root, &excluded);
    let missing: Vec<NodeId> = cfg
        .legit_ids()
        .into_iter()
        .filter(|id| !seen.contains(id))
        .collect();
    if missing.is_empty() {
        Ok(adj)
    } else {
        Err(ConfigError::DisconnectedTopology(missing))
    }
}

/// Validates a config and its radio graph.
pub fn build_topology(cfg: &ScenarioConfig) -> Result<BTreeMap<NodeId, BTreeSet<NodeId>>, ConfigError> {
    cfg.validate()?;
    check_connectivity(cfg)
}

/// Box-Muller standard normal.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Places a root plus `n` routers in three Gaussian clusters inside a
/// `width` x `height` area, retrying until the graph is connected.
pub fn sample_three_clusters<R: Rng>(
    n: usize,
    width: f64,
    height: f64,
    range: f64,
    rng: &mut R,
) -> Option<Vec<NodeSpec>> {
    let sigma = range * 0.6;
    for _ in 0..1000 {
        let centers: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(0.2..0.8) * width, rng.gen_range(0.2..0.8) * height))
            .collect();
        let mut nodes = vec![NodeSpec {
            id: 0,
            x: centers[0].0,
            y: centers[0].1,
            role: Role::Root,
            security_mode: NodeSecurityMode::Um,
            wake_phase_ms: None,
        }];
        for i in 0..n {
            let c = centers[i % 3];
            let x = (c.0 + sigma * normal(rng)).clamp(0.0, width);
            let y = (c.1 + sigma * normal(rng)).clamp(0.0, height);
            nodes.push(NodeSpec {
                id: (i + 1) as NodeId,
                x,
                y,
                role: Role::Router,
                security_mode: NodeSecurityMode::Um,
                wake_phase_ms: None,
            });
        }
        let adj = adjacency(&nodes, range);
        if reachable(&adj, 0, &BTreeSet::new()).len() == nodes.len() {
            return Some(nodes);
        }
    }
    None
}
