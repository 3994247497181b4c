//! Runs every acceptance criterion on the shipped scenarios and prints one
//! line per criterion. Exits non-zero if any criterion does not pass.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rplsim::acceptance::{self, Check, Status};
use rplsim::engine::config::ScenarioConfig;
use rplsim::experiments::{
    mitigation_configs, run_matrix, run_mitigations, run_round, Experiment, MatrixOptions, Results, Scenario,
};
use rplsim::linklayer::RdcKind;
use rplsim::messages::{
    decode, encode, secure_unwrap, secure_wrap, CcBody, ControlMessage, CounterSource, DaoAckBody, Decoded,
    Destination, MessageBody, MessageError, NodeSecurityMode, ReplayWatermarks, SecurityLevel,
};
use rplsim::metrics::{ci95, t_quantile_975, Stat};
use rplsim::scenarios;
use rplsim::secure::{CcTrigger, ChallengeOutcome, ConsistencyChecker, KeyStore, TimeoutOutcome};
use rplsim::trace::{to_bytes, TraceRecord};

use common::{base_body, dest, key, secure_msg};

const ROUNDS: u32 = 10;
const SEED: u64 = 1;
const CASES: u32 = 1000;

fn check(id: u8, name: &'static str, failures: Vec<String>, ok_detail: String) -> Check {
    if failures.is_empty() {
        Check { id, name, status: Status::Pass, detail: ok_detail }
    } else {
        Check { id, name, status: Status::Fail, detail: failures.join("; ") }
    }
}

fn prop<S: Strategy>(
    failures: &mut Vec<String>,
    what: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) {
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    if let Err(e) = runner.run(&strategy, test) {
        failures.push(format!("{what}: {e}"));
    }
}

fn codec_properties() -> Check {
    let mut f = Vec::new();
    prop(&mut f, "base round-trip", (any::<u16>(), dest(), base_body()), |(src, d, body)| {
        let msg = ControlMessage::base(src, d, body);
        let bytes = encode(&msg).unwrap();
        for mode in [NodeSecurityMode::Um, NodeSecurityMode::Psm, NodeSecurityMode::PsmRp] {
            prop_assert_eq!(decode(&bytes, mode).unwrap(), Decoded::Message(msg.clone()));
        }
        Ok(())
    });
    prop(&mut f, "secure round-trip", secure_msg(), |(msg, k)| {
        let bytes = encode(&msg).unwrap();
        let back = decode(&bytes, NodeSecurityMode::Psm).unwrap();
        prop_assert_eq!(back, Decoded::Message(msg.clone()));
        let store = KeyStore::with_key(NodeSecurityMode::Psm, k).unwrap();
        prop_assert!(secure_unwrap(&msg, &store, &mut ReplayWatermarks::new(), true).is_ok());
        Ok(())
    });
    prop(&mut f, "mode blindness", secure_msg(), |(msg, _)| {
        let bytes = encode(&msg).unwrap();
        let blind = matches!(decode(&bytes, NodeSecurityMode::Um), Ok(Decoded::Unrecognized { .. }));
        prop_assert!(blind);
        Ok(())
    });
    prop(
        &mut f,
        "counter monotonicity",
        (key(), proptest::collection::vec(0u32..500, 1..50), 1usize..100),
        |(k, counters, n)| {
            let mut src = CounterSource::new();
            let own: Vec<u32> = (0..n).map(|_| src.next_counter().unwrap()).collect();
            prop_assert!(own.windows(2).all(|w| w[0] < w[1]));
            let store = KeyStore::with_key(NodeSecurityMode::PsmRp, k).unwrap();
            let mut marks = ReplayWatermarks::new();
            let mut accepted = Vec::new();
            let body = MessageBody::DaoAck(DaoAckBody { sequence: 1, status: 0 });
            for c in counters {
                let msg = secure_wrap(5, Destination::Node(0), &body, &k, c, SecurityLevel::EncThenMac).unwrap();
                match secure_unwrap(&msg, &store, &mut marks, true) {
                    Ok(_) => accepted.push(c),
                    Err(MessageError::ReplaySuspect { .. }) => {}
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
            prop_assert!(accepted.windows(2).all(|w| w[0] < w[1]));
            Ok(())
        },
    );
    prop(
        &mut f,
        "nonce uniqueness",
        (any::<u16>(), proptest::collection::vec((0u16..16, 0u8..3), 1..400)),
        |(start, ops)| {
            let mut cc = ConsistencyChecker::new(CcTrigger::FirstContactAndAnomaly, 3, start);
            let mut seen = BTreeSet::new();
            for (i, (peer, op)) in ops.into_iter().enumerate() {
                match op {
                    0 => {
                        if let Ok(ChallengeOutcome::Issue { nonce }) = cc.challenge(i as u64, peer, None) {
                            prop_assert!(seen.insert(nonce));
                        }
                    }
                    1 => {
                        if let Some(s) = cc.session(peer).cloned() {
                            if let TimeoutOutcome::Retry { nonce } = cc.on_timeout(peer, s.nonce, s.retries) {
                                prop_assert_eq!(nonce, s.nonce);
                            }
                        }
                    }
                    _ => {
                        if let Some(s) = cc.session(peer).cloned() {
                            cc.on_response(peer, &CcBody { nonce: s.nonce, is_response: true, echoed_counter: 0 });
                            cc.forget(peer);
                        }
                    }
                }
            }
            Ok(())
        },
    );
    check(10, "codec and secure-mode properties", f, format!("5 properties x {CASES} cases"))
}

/// Every configuration the acceptance runs use, one per cell.
fn acceptance_configs() -> Vec<ScenarioConfig> {
    let topo = scenarios::topologies();
    let mut out: Vec<ScenarioConfig> = MatrixOptions::full(ROUNDS, SEED)
        .cells()
        .into_iter()
        .map(|(e, s, r)| rplsim::experiments::apply(topo.for_scenario(s), e, s, r))
        .collect();
    let extra = scenarios::extra_routers();
    out.extend(
        mitigation_configs(&topo, &extra, &[RdcKind::DutyCycled, RdcKind::AlwaysOn])
            .into_iter()
            .filter(|(label, ..)| *label != "baseline")
            .map(|(_, cfg, ..)| cfg),
    );
    out
}

fn determinism_and_energy(configs: &[ScenarioConfig]) -> (Check, Vec<String>, usize) {
    let mut f = Vec::new();
    let mut energy_failures = Vec::new();
    let mut ledgers = 0;
    for cfg in configs {
        let (_, a) = run_round(cfg, SEED, 0).unwrap();
        let (_, b) = run_round(cfg, SEED, 0).unwrap();
        if to_bytes(&a) != to_bytes(&b) {
            f.push(cfg.name.clone());
        }
        let duration = a
            .iter()
            .find_map(|r| match r {
                TraceRecord::Meta { duration_us, .. } => Some(*duration_us as f64 / 1e6),
                _ => None,
            })
            .unwrap();
        for r in &a {
            if let TraceRecord::Energy { node, tx_s, rx_s, idle_s, sleep_s, .. } = r {
                ledgers += 1;
                let gap = (tx_s + rx_s + idle_s + sleep_s - duration).abs();
                if gap > 1e-6 {
                    energy_failures.push(format!("{} node {node} off by {gap:.3e} s", cfg.name));
                }
            }
        }
    }
    let c = check(13, "identical traces for equal seeds", f, format!("{} configurations byte-identical", configs.len()));
    (c, energy_failures, ledgers)
}

fn energy(results: &Results, mut f: Vec<String>, ledgers: usize) -> Check {
    let mut parts = Vec::new();
    for exp in Experiment::ALL {
        let dc = results.find(exp, Scenario::NoAttack, RdcKind::DutyCycled, None);
        let ao = results.find(exp, Scenario::NoAttack, RdcKind::AlwaysOn, None);
        match (dc, ao) {
            (Some(dc), Some(ao)) => {
                let (d, a) = (dc.mean_power_mw.mean, ao.mean_power_mw.mean);
                parts.push(format!("{} AO {a:.2} mW > DC {d:.2} mW", exp.label()));
                if a <= d {
                    f.push(format!("{} AO {a:.2} <= DC {d:.2}", exp.label()));
                }
            }
            _ => f.push(format!("{} no-attack rows missing", exp.label())),
        }
    }
    check(14, "energy ledger closure and AO > DC power", f, format!("{ledgers} ledgers close; {}", parts.join(", ")))
}

fn ci_math() -> Check {
    // 97.5% Student-t quantiles from published tables
    let table = [(1usize, 12.706_204_736_174_7), (4, 2.776_445_105_197_799), (9, 2.262_157_162_798_205), (29, 2.045_229_642_132_703)];
    let mut f = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut samples = 0;
    for (dof, t) in table {
        if (t_quantile_975(dof) - t).abs() > 1e-9 {
            f.push(format!("t({dof}) = {}", t_quantile_975(dof)));
        }
        for _ in 0..200 {
            let v: Vec<f64> = (0..=dof).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let expected = t * s / n.sqrt();
            let got = ci95(&v);
            if (got - expected).abs() > 1e-9 || (Stat::of(&v).ci - expected).abs() > 1e-9 {
                f.push(format!("n={} got {got} expected {expected}", v.len()));
            }
            samples += 1;
        }
    }
    if !ci95(&[0.5]).is_nan() {
        f.push("single sample has a finite half-width".into());
    }
    check(15, "Student-t half-widths", f, format!("{samples} synthetic samples within 1e-9"))
}

fn merge(id: u8, name: &'static str, parts: Vec<Check>) -> Check {
    let status = if parts.iter().any(|c| c.status == Status::Fail) {
        Status::Fail
    } else if parts.iter().all(|c| c.status == Status::Pass) {
        Status::Pass
    } else {
        Status::Skip
    };
    let detail = parts.iter().map(|c| c.detail.clone()).collect::<Vec<_>>().join("; ");
    Check { id, name, status, detail }
}

fn main() -> ExitCode {
    let topo = scenarios::topologies();
    let extra = scenarios::extra_routers();
    let both = [RdcKind::DutyCycled, RdcKind::AlwaysOn];

    let mut rows = run_matrix(&topo, &MatrixOptions::full(ROUNDS, SEED)).expect("matrix");
    rows.extend(run_mitigations(&topo, &extra, &both, ROUNDS, SEED).expect("mitigations"));
    let results = Results::new(rows);

    let mut checks = acceptance::evaluate(&results, &topo);
    let timing = Experiment::ALL
        .iter()
        .map(|&e| {
            let mut c = acceptance::wormhole_timing(&topo, e, SEED).expect("timing run");
            c.detail = format!("{} {}", e.label(), c.detail);
            c
        })
        .collect();
    checks.push(merge(9, "late wormhole replays are ignored", timing));
    checks.push(codec_properties());

    let per_round: Vec<_> = results.rows.iter().flat_map(|r| r.metrics.per_round.iter().cloned()).collect();
    checks.extend(acceptance::round_properties(&per_round).into_iter().map(|mut c| {
        c.detail = format!("{} rounds checked{}", per_round.len(), if c.status == Status::Pass { String::new() } else { format!(": {}", c.detail) });
        c
    }));

    let (det, energy_failures, ledgers) = determinism_and_energy(&acceptance_configs());
    checks.push(det);
    checks.push(energy(&results, energy_failures, ledgers));
    checks.push(ci_math());
    checks.sort_by_key(|c| c.id);

    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<u8> = checks.iter().filter(|c| c.status != Status::Pass).map(|c| c.id).collect();
    if failed.is_empty() {
        println!("all {} criteria pass", checks.len());
        ExitCode::SUCCESS
    } else {
        println!("criteria not passing: {failed:?}");
        ExitCode::FAILURE
    }
}
