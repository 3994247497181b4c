//! Experiment matrix, mitigation comparison and result files.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::engine::config::{ConfigError, ScenarioConfig};
use crate::engine::simulate;
use crate::linklayer::RdcKind;
use crate::messages::NodeSecurityMode;
use crate::metrics::{aggregate, compute_metrics, AggregateMetrics, RunMetrics, SCHEMA_VERSION};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "UM-I")]
    UmI,
    #[serde(rename = "PSM-I")]
    PsmI,
    #[serde(rename = "PSMrp-I")]
    PsmRpI,
    #[serde(rename = "PSM-E")]
    PsmE,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [Experiment::UmI, Experiment::PsmI, Experiment::PsmRpI, Experiment::PsmE];

    pub fn label(self) -> &'static str {
        match self {
            Experiment::UmI => "UM-I",
            Experiment::PsmI => "PSM-I",
            Experiment::PsmRpI => "PSMrp-I",
            Experiment::PsmE => "PSM-E",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.label().eq_ignore_ascii_case(s))
    }

    pub fn network_mode(self) -> NodeSecurityMode {
        match self {
            Experiment::UmI => NodeSecurityMode::Um,
            Experiment::PsmI | Experiment::PsmE => NodeSecurityMode::Psm,
            Experiment::PsmRpI => NodeSecurityMode::PsmRp,
        }
    }

    pub fn internal(self) -> bool {
        self != Experiment::PsmE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    NoAttack,
    #[serde(rename = "BH")]
    Blackhole,
    #[serde(rename = "SF")]
    SelectiveForward,
    #[serde(rename = "NA")]
    Neighbor,
    #[serde(rename = "WH")]
    Wormhole,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::NoAttack,
        Scenario::Blackhole,
        Scenario::SelectiveForward,
        Scenario::Neighbor,
        Scenario::Wormhole,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::NoAttack => "NoAttack",
            Scenario::Blackhole => "BH",
            Scenario::SelectiveForward => "SF",
            Scenario::Neighbor => "NA",
            Scenario::Wormhole => "WH",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.label().eq_ignore_ascii_case(s))
    }

    pub fn attack_kind(self) -> AttackKind {
        match self {
            Scenario::NoAttack => AttackKind::None,
            Scenario::Blackhole => AttackKind::Blackhole,
            Scenario::SelectiveForward => AttackKind::SelectiveForward,
            Scenario::Neighbor => AttackKind::Neighbor,
            Scenario::Wormhole => AttackKind::Wormhole,
        }
    }
}

pub fn rdc_label(kind: RdcKind) -> &'static str {
    match kind {
        RdcKind::DutyCycled => "DutyCycled",
        RdcKind::AlwaysOn => "AlwaysOn",
    }
}

/// Rewrites security modes, adversary capabilities, attack kind and RDC.
///
/// An external adversary runs unsecured RPL without the key.
pub fn apply(base: &ScenarioConfig, exp: Experiment, scen: Scenario, rdc: RdcKind) -> ScenarioConfig {
    let mut cfg = base.clone();
    let mode = exp.network_mode();
    let adversaries = cfg.attack.adversary_ids.clone();
    for n in &mut cfg.topology {
        n.security_mode = if !exp.internal() && adversaries.contains(&n.id) {
            NodeSecurityMode::Um
        } else {
            mode
        };
    }
    let a = &mut cfg.attack;
    a.kind = scen.attack_kind();
    a.internal = exp.internal();
    a.has_key = exp.internal();
    a.speaks_secure = exp.internal() && mode.speaks_secure();
    cfg.rdc.kind = rdc;
    cfg.name = format!("{}/{}/{}/{}", base.name, exp.label(), scen.label(), rdc_label(rdc));
    cfg
}

/// Both dead-parent timeouts lowered.
pub fn with_short_timeouts(base: &ScenarioConfig, timeout_s: f64) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.timers.upward_reachable_timeout_s = timeout_s;
    cfg.timers.downward_route_lifetime_s = timeout_s;
    cfg.name = format!("{}+timeout{}", base.name, timeout_s);
    cfg
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("RPLSIM_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

pub fn run_round(cfg: &ScenarioConfig, seed: u64, round: u32) -> Result<(RunMetrics, Vec<TraceRecord>), ConfigError> {
    let trace = simulate(cfg, seed, round)?;
    let m = compute_metrics(&trace).expect("engine always writes a meta record");
    Ok((m, trace))
}

pub struct SetResult {
    pub aggregate: AggregateMetrics,
    pub traces: Vec<Vec<TraceRecord>>,
}

/// Rounds use seeds `base_seed + i` and are merged by round index.
pub fn run_set(cfg: &ScenarioConfig, rounds: u32, base_seed: u64, keep_traces: bool) -> Result<SetResult, ConfigError> {
    cfg.validate()?;
    let results: Vec<Result<(RunMetrics, Vec<TraceRecord>), ConfigError>> = pool().install(|| {
        (0..rounds)
            .into_par_iter()
            .map(|i| {
                run_round(cfg, base_seed + i as u64, i).map(|(m, t)| (m, if keep_traces { t } else { Vec::new() }))
            })
            .collect()
    });
    let mut metrics = Vec::with_capacity(rounds as usize);
    let mut traces = Vec::new();
    for r in results {
        let (m, t) = r?;
        metrics.push(m);
        if keep_traces {
            traces.push(t);
        }
    }
    Ok(SetResult { aggregate: aggregate(metrics), traces })
}

/// Base configurations for the two topologies.
#[derive(Debug, Clone)]
pub struct Topologies {
    pub reference: ScenarioConfig,
    pub wormhole: ScenarioConfig,
}

impl Topologies {
    pub fn for_scenario(&self, scen: Scenario) -> &ScenarioConfig {
        if scen == Scenario::Wormhole {
            &self.wormhole
        } else {
            &self.reference
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatrixOptions {
    pub experiments: Vec<Experiment>,
    pub scenarios: Vec<Scenario>,
    pub rdcs: Vec<RdcKind>,
    pub rounds: u32,
    pub base_seed: u64,
    /// Also run the wormhole under duty cycling.
    pub duty_cycled_wormhole: bool,
}

impl MatrixOptions {
    pub fn full(rounds: u32, base_seed: u64) -> Self {
        MatrixOptions {
            experiments: Experiment::ALL.to_vec(),
            scenarios: Scenario::ALL.to_vec(),
            rdcs: vec![RdcKind::DutyCycled, RdcKind::AlwaysOn],
            rounds,
            base_seed,
            duty_cycled_wormhole: false,
        }
    }

    pub fn cells(&self) -> Vec<(Experiment, Scenario, RdcKind)> {
        let mut out = Vec::new();
        for &rdc in &self.rdcs {
            for &exp in &self.experiments {
                for &scen in &self.scenarios {
                    if scen == Scenario::Wormhole && rdc == RdcKind::DutyCycled && !self.duty_cycled_wormhole {
                        continue;
                    }
                    out.push((exp, scen, rdc));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: Experiment,
    pub scenario: Scenario,
    pub rdc: RdcKind,
    /// `None` for the plain matrix, otherwise the mitigation label.
    pub variant: Option<String>,
    pub metrics: AggregateMetrics,
}

fn run_cells(
    cells: Vec<(String, Option<String>, ScenarioConfig, Experiment, Scenario, RdcKind)>,
    rounds: u32,
    base_seed: u64,
) -> Result<Vec<Row>, ConfigError> {
    let out: Vec<Result<Row, ConfigError>> = pool().install(|| {
        cells
            .into_par_iter()
            .map(|(_, variant, cfg, exp, scen, rdc)| {
                log::info!("running {}", cfg.name);
                let set = run_set(&cfg, rounds, base_seed, false)?;
                Ok(Row { experiment: exp, scenario: scen, rdc, variant, metrics: set.aggregate })
            })
            .collect()
    });
    out.into_iter().collect()
}

pub fn run_matrix(topo: &Topologies, opts: &MatrixOptions) -> Result<Vec<Row>, ConfigError> {
    let cells = opts
        .cells()
        .into_iter()
        .map(|(e, s, r)| {
            let cfg = apply(topo.for_scenario(s), e, s, r);
            (cfg.name.clone(), None, cfg, e, s, r)
        })
        .collect();
    run_cells(cells, opts.rounds, opts.base_seed)
}

pub const MITIGATION_TIMEOUT_S: f64 = 300.0;

/// One configuration per (rdc, attack, mitigation label), all with the
/// internal unsecured adversary.
pub fn mitigation_configs(
    base: &Topologies,
    extra_routers: &Topologies,
    rdcs: &[RdcKind],
) -> Vec<(&'static str, ScenarioConfig, Scenario, RdcKind)> {
    let short = Topologies {
        reference: with_short_timeouts(&base.reference, MITIGATION_TIMEOUT_S),
        wormhole: with_short_timeouts(&base.wormhole, MITIGATION_TIMEOUT_S),
    };
    let mut out = Vec::new();
    for &rdc in rdcs {
        for scen in Scenario::ALL {
            if scen == Scenario::Wormhole && rdc == RdcKind::DutyCycled {
                continue;
            }
            for (label, topo) in [("baseline", base), ("M1", extra_routers), ("M2", &short)] {
                out.push((label, apply(topo.for_scenario(scen), Experiment::UmI, scen, rdc), scen, rdc));
            }
        }
    }
    out
}

/// Baseline, extra routers (`M1`) and shorter timeouts (`M2`) for every attack.
pub fn run_mitigations(
    base: &Topologies,
    extra_routers: &Topologies,
    rdcs: &[RdcKind],
    rounds: u32,
    base_seed: u64,
) -> Result<Vec<Row>, ConfigError> {
    let cells = mitigation_configs(base, extra_routers, rdcs)
        .into_iter()
        .map(|(label, cfg, scen, rdc)| (cfg.name.clone(), Some(label.to_string()), cfg, Experiment::UmI, scen, rdc))
        .collect();
    run_cells(cells, rounds, base_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationDelta {
    pub mitigation: String,
    pub scenario: Scenario,
    pub rdc: RdcKind,
    pub pdr_before: f64,
    pub pdr_after: f64,
    pub lat_before_s: f64,
    pub lat_after_s: f64,
}

impl MitigationDelta {
    pub fn pdr_gain(&self) -> f64 {
        self.pdr_after - self.pdr_before
    }

    /// Fractional latency reduction; positive when the mitigation helps.
    pub fn latency_reduction(&self) -> f64 {
        1.0 - self.lat_after_s / self.lat_before_s
    }
}

pub fn mitigation_deltas(rows: &[Row]) -> Vec<MitigationDelta> {
    let mut out = Vec::new();
    for after in rows.iter().filter(|r| matches!(r.variant.as_deref(), Some(v) if v != "baseline")) {
        let Some(before) = rows.iter().find(|r| {
            r.variant.as_deref() == Some("baseline") && r.scenario == after.scenario && r.rdc == after.rdc
        }) else {
            continue;
        };
        out.push(MitigationDelta {
            mitigation: after.variant.clone().unwrap_or_default(),
            scenario: after.scenario,
            rdc: after.rdc,
            pdr_before: before.metrics.pdr.mean,
            pdr_after: after.metrics.pdr.mean,
            lat_before_s: before.metrics.latency_s.mean,
            lat_after_s: after.metrics.latency_s.mean,
        });
    }
    out
}

/// Stored aggregates, read back by `report`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub schema_version: u32,
    pub rows: Vec<Row>,
}

impl Results {
    pub fn new(rows: Vec<Row>) -> Self {
        Results { schema_version: SCHEMA_VERSION, rows }
    }

    pub fn find(&self, exp: Experiment, scen: Scenario, rdc: RdcKind, variant: Option<&str>) -> Option<&AggregateMetrics> {
        self.rows
            .iter()
            .find(|r| r.experiment == exp && r.scenario == scen && r.rdc == rdc && r.variant.as_deref() == variant)
            .map(|r| &r.metrics)
    }
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "schema_version",
    "experiment",
    "scenario",
    "rdc",
    "pdr_mean",
    "pdr_ci",
    "lat_mean_s",
    "lat_ci",
    "ctrl_sent",
    "ctrl_recv",
    "energy_mJ_per_pkt",
    "energy_ci",
];

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "NaN".into()
    }
}

pub fn write_summary(path: &Path, rows: &[Row]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        let exp = match &r.variant {
            Some(v) => format!("{}+{}", r.experiment.label(), v),
            None => r.experiment.label().to_string(),
        };
        let energy = if r.rdc == RdcKind::DutyCycled {
            (num(m.energy_mj_per_pkt.mean), num(m.energy_mj_per_pkt.ci))
        } else {
            (String::new(), String::new())
        };
        w.write_record([
            SCHEMA_VERSION.to_string(),
            exp,
            r.scenario.label().to_string(),
            rdc_label(r.rdc).to_string(),
            num(m.pdr.mean),
            num(m.pdr.ci),
            num(m.latency_s.mean),
            num(m.latency_s.ci),
            num(m.ctrl_sent.mean),
            num(m.ctrl_recv.mean),
            energy.0,
            energy.1,
        ])?;
    }
    w.flush()
}

pub fn write_results(dir: &Path, results: &Results) -> std::io::Result<()> {
    fs::write(dir.join("aggregates.json"), serde_json::to_vec_pretty(results)?)?;
    write_summary(&dir.join("summary.csv"), &results.rows)
}

pub fn read_results(dir: &Path) -> std::io::Result<Results> {
    let bytes = fs::read(dir.join("aggregates.json"))?;
    serde_json::from_slice(&bytes).map_err(std::io::Error::other)
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta<'a> {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub command: &'a str,
    pub rounds: u32,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub configs: Vec<&'a ScenarioConfig>,
}

pub fn write_meta(dir: &Path, command: &str, rounds: u32, base_seed: u64, configs: Vec<&ScenarioConfig>) -> std::io::Result<()> {
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        rounds,
        seeds: (0..rounds as u64).map(|i| base_seed + i).collect(),
        threads: pool().current_num_threads(),
        configs,
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Panel {
    Pdr,
    Latency,
    Ctrl,
    Power,
}

/// `(file stem, rdc, variant, panels)`.
type Figure = (&'static str, RdcKind, Option<&'static str>, Vec<Panel>);

fn figures() -> Vec<Figure> {
    use Panel::*;
    let dc = vec![Pdr, Latency, Ctrl, Power];
    let ao = vec![Pdr, Latency, Ctrl];
    vec![
        ("dc_attacks", RdcKind::DutyCycled, None, dc.clone()),
        ("dc_m1", RdcKind::DutyCycled, Some("M1"), dc.clone()),
        ("dc_m2", RdcKind::DutyCycled, Some("M2"), dc),
        ("ao_attacks", RdcKind::AlwaysOn, None, ao.clone()),
        ("ao_m1", RdcKind::AlwaysOn, Some("M1"), ao.clone()),
        ("ao_m2", RdcKind::AlwaysOn, Some("M2"), ao),
    ]
}

/// One CSV per plot panel; returns the file names written.
pub fn write_report(dir: &Path, results: &Results) -> std::io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (stem, rdc, variant, panels) in figures() {
        for panel in panels {
            let suffix = match panel {
                Panel::Pdr => "pdr",
                Panel::Latency => "latency",
                Panel::Ctrl => "ctrl",
                Panel::Power => "power",
            };
            let name = format!("{stem}_{suffix}.csv");
            let mut w = csv::Writer::from_path(dir.join(&name))?;
            if panel == Panel::Ctrl {
                w.write_record(["schema_version", "experiment", "scenario", "sent_mean", "sent_ci", "recv_mean", "recv_ci"])?;
            } else {
                w.write_record(["schema_version", "experiment", "scenario", "mean", "ci"])?;
            }
            let rows = results.rows.iter().filter(|r| {
                r.rdc == rdc
                    && match variant {
                        None => r.variant.is_none(),
                        Some(v) => r.variant.as_deref() == Some(v),
                    }
            });
            for r in rows {
                let m = &r.metrics;
                let mut rec = vec![
                    SCHEMA_VERSION.to_string(),
                    r.experiment.label().to_string(),
                    r.scenario.label().to_string(),
                ];
                match panel {
                    Panel::Pdr => rec.extend([num(m.pdr.mean), num(m.pdr.ci)]),
                    Panel::Latency => rec.extend([num(m.latency_s.mean), num(m.latency_s.ci)]),
                    Panel::Power => rec.extend([num(m.energy_mj_per_pkt.mean), num(m.energy_mj_per_pkt.ci)]),
                    Panel::Ctrl => rec.extend([
                        num(m.ctrl_sent.mean),
                        num(m.ctrl_sent.ci),
                        num(m.ctrl_recv.mean),
                        num(m.ctrl_recv.ci),
                    ]),
                }
                w.write_record(&rec)?;
            }
            w.flush()?;
            written.push(name);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_adversary_runs_unsecured() {
        let base = ScenarioConfig::from_json(
            r#"{"topology":[{"id":0,"x":0,"y":0,"role":"root"},{"id":1,"x":10,"y":0,"role":"router"},
                {"id":2,"x":20,"y":0,"role":"router"}],"attack":{"adversary_ids":[2]}}"#,
        )
        .unwrap();
        let c = apply(&base, Experiment::PsmE, Scenario::Blackhole, RdcKind::AlwaysOn);
        assert_eq!(c.node(2).unwrap().security_mode, NodeSecurityMode::Um);
        assert_eq!(c.node(1).unwrap().security_mode, NodeSecurityMode::Psm);
        assert!(!c.attack.has_key && !c.attack.speaks_secure);
        assert!(c.validate().is_ok());
        let c = apply(&base, Experiment::PsmRpI, Scenario::Neighbor, RdcKind::DutyCycled);
        assert!(c.topology.iter().all(|n| n.security_mode == NodeSecurityMode::PsmRp));
        assert!(c.attack.speaks_secure);
    }

    #[test]
    fn wormhole_skipped_under_duty_cycling_by_default() {
        let cells = MatrixOptions::full(10, 1).cells();
        assert_eq!(cells.len(), 36);
        assert!(!cells.iter().any(|&(_, s, r)| s == Scenario::Wormhole && r == RdcKind::DutyCycled));
    }

    #[test]
    fn report_has_one_file_per_panel() {
        let dir = tempfile::tempdir().unwrap();
        let names = write_report(dir.path(), &Results::new(Vec::new())).unwrap();
        assert_eq!(names.len(), 4 * 3 + 3 * 3);
    }
}
