//! Threshold checks over stored aggregates.

use std::collections::BTreeSet;

use crate::attacks::AttackKind;
use crate::engine::config::{ConfigError, ScenarioConfig};
use crate::experiments::{
    apply, mitigation_deltas, rdc_label, run_round, Experiment, Results, Scenario, Topologies,
};
use crate::linklayer::RdcKind;
use crate::messages::NodeId;
use crate::metrics::{AggregateMetrics, RunMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// The rows this check needs were not run.
    Skip,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        let s = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        format!("criterion {:>2} {s}  {}: {}", self.id, self.name, self.detail)
    }
}

/// Collects sub-results for one criterion.
struct Builder {
    id: u8,
    name: &'static str,
    ok: bool,
    any: bool,
    missing: bool,
    parts: Vec<String>,
}

impl Builder {
    fn new(id: u8, name: &'static str) -> Self {
        Builder { id, name, ok: true, any: false, missing: false, parts: Vec::new() }
    }

    fn part(&mut self, pass: bool, text: String) {
        self.any = true;
        self.ok &= pass;
        self.parts.push(if pass { text } else { format!("[x] {text}") });
    }

    fn missing(&mut self, what: String) {
        self.missing = true;
        self.parts.push(format!("missing {what}"));
    }

    fn done(self) -> Check {
        let status = if !self.ok {
            Status::Fail
        } else if !self.any || self.missing {
            Status::Skip
        } else {
            Status::Pass
        };
        Check { id: self.id, name: self.name, status, detail: self.parts.join("; ") }
    }
}

fn rdcs() -> [RdcKind; 2] {
    [RdcKind::DutyCycled, RdcKind::AlwaysOn]
}

fn tag(exp: Experiment, scen: Scenario, rdc: RdcKind) -> String {
    format!("{}/{}/{}", exp.label(), scen.label(), rdc_label(rdc))
}

const INTERNAL: [Experiment; 3] = [Experiment::UmI, Experiment::PsmI, Experiment::PsmRpI];

pub fn no_attack_pdr(r: &Results) -> Check {
    let mut b = Builder::new(1, "no-attack PDR >= 0.95");
    for rdc in rdcs() {
        for exp in Experiment::ALL {
            match r.find(exp, Scenario::NoAttack, rdc, None) {
                Some(m) => b.part(m.pdr.mean >= 0.95, format!("{} {:.3}", tag(exp, Scenario::NoAttack, rdc), m.pdr.mean)),
                None => b.missing(tag(exp, Scenario::NoAttack, rdc)),
            }
        }
    }
    b.done()
}

pub fn external_adversary(r: &Results) -> Check {
    let mut b = Builder::new(2, "external adversary has no effect");
    let exp = Experiment::PsmE;
    for rdc in rdcs() {
        let Some(base) = r.find(exp, Scenario::NoAttack, rdc, None) else {
            b.missing(tag(exp, Scenario::NoAttack, rdc));
            continue;
        };
        for scen in [Scenario::Blackhole, Scenario::SelectiveForward, Scenario::Neighbor] {
            match r.find(exp, scen, rdc, None) {
                Some(m) => {
                    let dp = (m.pdr.mean - base.pdr.mean).abs();
                    let dl = (m.latency_s.mean / base.latency_s.mean - 1.0).abs();
                    b.part(dp <= 0.02 && dl <= 0.20, format!("{} dPDR {dp:.3} dLat {:.0}%", tag(exp, scen, rdc), dl * 100.0));
                }
                None => b.missing(tag(exp, scen, rdc)),
            }
        }
    }
    b.done()
}

fn round_pdrs(m: &AggregateMetrics) -> Vec<f64> {
    m.per_round.iter().map(|r| r.pdr).collect()
}

pub fn internal_sf_bh(r: &Results) -> Check {
    let mut b = Builder::new(3, "internal SF/BH PDR bands and ordering");
    for rdc in rdcs() {
        for exp in INTERNAL {
            let (Some(na), Some(bh), Some(sf)) = (
                r.find(exp, Scenario::NoAttack, rdc, None),
                r.find(exp, Scenario::Blackhole, rdc, None),
                r.find(exp, Scenario::SelectiveForward, rdc, None),
            ) else {
                b.missing(format!("{}/{} rows", exp.label(), rdc_label(rdc)));
                continue;
            };
            let t = format!("{}/{}", exp.label(), rdc_label(rdc));
            b.part((0.60..=0.80).contains(&sf.pdr.mean), format!("{t} SF {:.3}", sf.pdr.mean));
            b.part((0.72..=0.90).contains(&bh.pdr.mean), format!("{t} BH {:.3}", bh.pdr.mean));
            let (a, c, n) = (round_pdrs(sf), round_pdrs(bh), round_pdrs(na));
            let rounds = a.len().min(c.len()).min(n.len());
            let ordered = (0..rounds).filter(|&i| a[i] < c[i] && c[i] < n[i]).count();
            b.part(ordered * 10 >= rounds * 9, format!("{t} ordered {ordered}/{rounds}"));
        }
    }
    b.done()
}

pub fn bh_recovery(r: &Results) -> Check {
    let mut b = Builder::new(4, "BH recovery time");
    for rdc in rdcs() {
        for (variant, lo, hi) in [(None, 540.0, 660.0), (Some("M2"), 270.0, 330.0)] {
            let label = format!("{}{}", tag(Experiment::UmI, Scenario::Blackhole, rdc), variant.map_or(String::new(), |v| format!("+{v}")));
            let found = r.find(Experiment::UmI, Scenario::Blackhole, rdc, variant).or_else(|| {
                variant.is_none().then(|| r.find(Experiment::UmI, Scenario::Blackhole, rdc, Some("baseline"))).flatten()
            });
            match found {
                Some(m) => {
                    let med = m.recovery_s.median;
                    b.part(med >= lo && med <= hi, format!("{label} median {med:.0}s (n={})", m.recovery_s.n));
                }
                None => b.missing(label),
            }
        }
    }
    b.done()
}

pub fn replay_protection(r: &Results) -> Check {
    let mut b = Builder::new(5, "PSMrp-I vs PSM-I under NA");
    for rdc in rdcs() {
        let (Some(rp), Some(p)) = (
            r.find(Experiment::PsmRpI, Scenario::Neighbor, rdc, None),
            r.find(Experiment::PsmI, Scenario::Neighbor, rdc, None),
        ) else {
            b.missing(format!("NA rows {}", rdc_label(rdc)));
            continue;
        };
        let gain = rp.pdr.mean - p.pdr.mean;
        let ratio = rp.ctrl_total.mean / p.ctrl_total.mean;
        b.part(gain >= 0.10, format!("{} PDR gain {gain:+.3}", rdc_label(rdc)));
        b.part(ratio >= 1.3, format!("{} ctrl ratio {ratio:.2}", rdc_label(rdc)));
    }
    b.done()
}

pub fn energy(r: &Results) -> Check {
    let mut b = Builder::new(6, "duty-cycled energy per delivered packet");
    let rdc = RdcKind::DutyCycled;
    match (
        r.find(Experiment::PsmRpI, Scenario::Neighbor, rdc, None),
        r.find(Experiment::PsmI, Scenario::Neighbor, rdc, None),
    ) {
        (Some(rp), Some(p)) => {
            let ratio = rp.energy_mj_per_pkt.mean / p.energy_mj_per_pkt.mean;
            b.part(ratio >= 1.2, format!("PSMrp-I/PSM-I NA {ratio:.2}"));
        }
        _ => b.missing("NA rows".into()),
    }
    match (
        r.find(Experiment::PsmI, Scenario::NoAttack, rdc, None),
        r.find(Experiment::UmI, Scenario::NoAttack, rdc, None),
    ) {
        (Some(p), Some(u)) => {
            let d = (p.energy_mj_per_pkt.mean / u.energy_mj_per_pkt.mean - 1.0).abs();
            b.part(d <= 0.10, format!("PSM-I vs UM-I no attack {:.1}%", d * 100.0));
        }
        _ => b.missing("no-attack rows".into()),
    }
    b.done()
}

/// Parent edges longer than the radio range.
pub fn ghost_edges(cfg: &ScenarioConfig, edges: &[(NodeId, NodeId)]) -> Vec<(NodeId, NodeId)> {
    edges
        .iter()
        .copied()
        .filter(|&(c, p)| match (cfg.node(c), cfg.node(p)) {
            (Some(a), Some(b)) => ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() > cfg.radio.range_m,
            _ => false,
        })
        .collect()
}

pub fn wormhole(r: &Results, topo: &Topologies) -> Check {
    let mut b = Builder::new(7, "wormhole PDR band, spread and ghost parents");
    let rdc = RdcKind::AlwaysOn;
    let mut pdrs = Vec::new();
    for exp in Experiment::ALL {
        let Some(m) = r.find(exp, Scenario::Wormhole, rdc, None) else {
            b.missing(tag(exp, Scenario::Wormhole, rdc));
            continue;
        };
        pdrs.push(m.pdr.mean);
        b.part((0.72..=0.90).contains(&m.pdr.mean), format!("{} {:.3}", exp.label(), m.pdr.mean));
        let with_ghost = m
            .per_round
            .iter()
            .filter(|rm| !ghost_edges(&topo.wormhole, &rm.edges_seen).is_empty())
            .count();
        b.part(with_ghost * 10 >= m.per_round.len() * 9, format!("{} ghost {with_ghost}/{}", exp.label(), m.per_round.len()));
    }
    if pdrs.len() > 1 {
        let spread = pdrs.iter().cloned().fold(f64::MIN, f64::max) - pdrs.iter().cloned().fold(f64::MAX, f64::min);
        b.part(spread < 0.05, format!("spread {spread:.3}"));
    }
    b.done()
}

/// No significant PDR change.
pub const NO_CHANGE_PDR: f64 = 0.03;

pub fn mitigations(r: &Results) -> Check {
    let mut b = Builder::new(8, "mitigations");
    let deltas = mitigation_deltas(&r.rows);
    if deltas.is_empty() {
        b.missing("mitigation rows".into());
        return b.done();
    }
    for d in &deltas {
        let t = format!("{}/{}/{}", d.mitigation, d.scenario.label(), rdc_label(d.rdc));
        let gain = d.pdr_gain();
        match (d.mitigation.as_str(), d.scenario) {
            (_, Scenario::NoAttack) => {}
            (_, Scenario::Wormhole) => b.part(gain.abs() <= NO_CHANGE_PDR, format!("{t} dPDR {gain:+.3}")),
            ("M1", s) => {
                b.part((0.03..=0.10).contains(&gain), format!("{t} dPDR {gain:+.3}"));
                if s == Scenario::SelectiveForward && d.rdc == RdcKind::DutyCycled {
                    let red = d.latency_reduction();
                    b.part(red >= 0.25, format!("{t} latency {:+.0}%", -red * 100.0));
                }
            }
            ("M2", Scenario::Blackhole) => {
                b.part(d.pdr_after >= 0.85, format!("{t} PDR {:.3}", d.pdr_after));
                let red = d.latency_reduction();
                b.part(red >= 0.40, format!("{t} latency {:+.0}%", -red * 100.0));
            }
            ("M2", _) => b.part(gain.abs() <= NO_CHANGE_PDR, format!("{t} dPDR {gain:+.3}")),
            _ => {}
        }
    }
    b.done()
}

/// Duty-cycled wormhole with a tunnel slower than the acceptance window
/// against the no-attack run on the same topology and seed.
pub fn wormhole_timing(topo: &Topologies, exp: Experiment, seed: u64) -> Result<Check, ConfigError> {
    let mut b = Builder::new(9, "late wormhole replays are ignored");
    let rdc = RdcKind::DutyCycled;
    let mut attacked = apply(&topo.wormhole, exp, Scenario::Wormhole, rdc);
    let window = attacked.rdc.acceptance_window_ms as f64;
    attacked.attack.wormhole_link_latency_ms = window * 2.0;
    let mut quiet = attacked.clone();
    quiet.attack.kind = AttackKind::None;
    let (a, _) = run_round(&attacked, seed, 0)?;
    let (q, _) = run_round(&quiet, seed, 0)?;
    let ea: BTreeSet<_> = a.edges_seen.iter().collect();
    let eq: BTreeSet<_> = q.edges_seen.iter().collect();
    b.part(
        ea == eq && a.final_edges == q.final_edges,
        format!("latency {:.0} ms, {} edges vs {}, {} replays", window * 2.0, ea.len(), eq.len(), a.replays),
    );
    Ok(b.done())
}

/// Per-round property checks used by `run --assert`.
pub fn round_properties(rounds: &[RunMetrics]) -> Vec<Check> {
    let mut loops = Builder::new(11, "no loops or rank violations");
    let mut cons = Builder::new(12, "packet conservation");
    for m in rounds {
        loops.part(m.violations == 0, format!("round {} violations {}", m.round, m.violations));
        cons.part(m.conserved, format!("round {} sent {} delivered {} buffered {}", m.round, m.sent, m.delivered, m.buffered_at_end));
    }
    vec![loops.done(), cons.done()]
}

/// All criteria that can be read off stored aggregates.
pub fn evaluate(r: &Results, topo: &Topologies) -> Vec<Check> {
    vec![
        no_attack_pdr(r),
        external_adversary(r),
        internal_sf_bh(r),
        bh_recovery(r),
        replay_protection(r),
        energy(r),
        wormhole(r, topo),
        mitigations(r),
    ]
}

