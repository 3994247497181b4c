//! Minimum Rank with Hysteresis objective function over ETX.

use serde::{Deserialize, Serialize};

use crate::messages::NodeId;

pub const INFINITE_RANK: u16 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MrhofParams {
    pub min_hop_rank_increase: u16,
    /// Rank units per unit of ETX.
    pub etx_scale: u16,
    pub hysteresis: u16,
    /// How far a node may raise its rank above the lowest rank it held since
    /// joining before it must detach and repair.
    pub max_rank_increase: u16,
}

impl Default for MrhofParams {
    fn default() -> Self {
        MrhofParams {
            min_hop_rank_increase: 256,
            etx_scale: 128,
            hysteresis: 192,
            max_rank_increase: 0,
        }
    }
}

impl MrhofParams {
    pub fn root_rank(&self) -> u16 {
        self.min_hop_rank_increase
    }

    pub fn rank_increment(&self, link_etx: f64) -> u16 {
        let scaled = (link_etx.max(1.0) * self.etx_scale as f64).round();
        let scaled = if scaled >= INFINITE_RANK as f64 {
            INFINITE_RANK
        } else {
            scaled as u16
        };
        scaled.max(self.min_hop_rank_increase)
    }
}

/// Rank advertised by a child of `parent_rank` over a link of `link_etx`.
pub fn mrhof_rank(parent_rank: u16, link_etx: f64, params: &MrhofParams) -> u16 {
    if parent_rank == INFINITE_RANK {
        return INFINITE_RANK;
    }
    parent_rank.saturating_add(params.rank_increment(link_etx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: NodeId,
    pub advertised_rank: u16,
    pub link_etx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub parent: NodeId,
    pub rank: u16,
}

/// Picks the preferred parent among `candidates`.
///
/// A candidate is eligible when its advertised rank is below `lowest_rank`
/// (the lowest rank held since joining, or infinite when detached) and the
/// resulting rank stays within `lowest_rank + max_rank_increase`. The current
/// parent is kept unless another candidate beats it by more than the
/// hysteresis.
pub fn select_parent(
    candidates: &[Candidate],
    current: Option<NodeId>,
    lowest_rank: u16,
    params: &MrhofParams,
) -> Option<Selection> {
    let limit = if lowest_rank == INFINITE_RANK {
        INFINITE_RANK - 1
    } else {
        lowest_rank.saturating_add(params.max_rank_increase)
    };
    let eligible = |c: &Candidate| -> Option<Selection> {
        if c.advertised_rank == INFINITE_RANK || c.advertised_rank >= lowest_rank {
            return None;
        }
        let rank = mrhof_rank(c.advertised_rank, c.link_etx, params);
        (rank <= limit).then_some(Selection { parent: c.id, rank })
    };
    let best = candidates
        .iter()
        .filter_map(eligible)
        .min_by_key(|s| (s.rank, s.parent))?;
    let cur = current.and_then(|id| candidates.iter().find(|c| c.id == id).and_then(eligible));
    match cur {
        Some(cur) if best.rank.saturating_add(params.hysteresis) >= cur.rank => Some(cur),
        _ => Some(best),
    }
}
