//! Every built-in adversary strategy against the mechanism it targets, at
//! n=64 with sampled committees in conditioned mode. Each test first checks
//! that the attack actually engaged (injections, corruptions, observations),
//! then that the targeted guarantee held anyway.

use saba::adversary::by_name;
use saba::approver::ApproverProc;
use saba::binary::BinaryProc;
use saba::coin::CoinProc;
use saba::metrics::Outcome;
use saba::mv::MvProc;
use saba::netsim::{run_with, Process, ProtocolKind, RunConfig, RunTrace};
use saba::params::derive_params;
use saba::wire::Val;
use std::sync::Arc;

fn cfg(protocol: ProtocolKind, seed: u64, inputs: Vec<Val>) -> RunConfig {
    let params = derive_params(64, 0.2, 0.05).expect("n=64 parameters are valid");
    let mut cfg = RunConfig::new(params, protocol, seed);
    cfg.inputs = inputs;
    cfg
}

fn base() -> Arc<[u8]> {
    b"adversary-drill".to_vec().into()
}

fn run(c: &RunConfig, strategy_name: &str) -> RunTrace {
    let mut strategy = by_name(strategy_name).expect("registered strategy");
    let n = c.params.n;
    let cap = c.round_cap + c.extra_rounds;
    let kind = c.protocol;
    run_with(
        c,
        move |_, v| -> Box<dyn Process> {
            match kind {
                ProtocolKind::Approver => Box::new(ApproverProc::new(base(), n, v.clone())),
                ProtocolKind::Coin => Box::new(CoinProc::new(base(), n)),
                ProtocolKind::Binary => {
                    Box::new(BinaryProc::new(base(), n, cap, v.as_bit().expect("bit input")))
                }
                ProtocolKind::Multivalued => Box::new(MvProc::new(base(), n, cap, v.clone())),
            }
        },
        strategy.as_mut(),
    )
    .expect("conditioned run completes")
}

/// Seated equivocators flood conflicting inits and echoes, split by
/// recipient parity. The forged values never reach B+1 inits or W echoes,
/// so unanimous approver runs still return exactly the common input.
#[test]
fn equivocation_cannot_forge_values_into_approver_outputs() {
    let v = Val::bytes(b"ledger-head");
    for seed in 0..10 {
        let c = cfg(ProtocolKind::Approver, seed, vec![v.clone(); 64]);
        let trace = run(&c, "equivocate");
        assert!(trace.metrics.injected > 0, "seed {seed}: attack never fired");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        for o in trace.metrics.outcomes.iter().filter(|o| !o.corrupted) {
            let Some(Outcome::ApproverSet(set)) = &o.outcome else {
                panic!("seed {seed}: process {} returned nothing", o.pid);
            };
            assert_eq!(*set, vec![v.clone()], "seed {seed}: process {}", o.pid);
        }
    }
}

/// Against binary agreement the equivocated bits are in-domain, the
/// strongest position for this strategy. Decisions must still agree.
#[test]
fn equivocation_cannot_split_binary_decisions() {
    for seed in 10..20 {
        let inputs: Vec<Val> = (0..64).map(|i| Val::bit(i % 2 == 0)).collect();
        let c = cfg(ProtocolKind::Binary, seed, inputs);
        let trace = run(&c, "equivocate");
        assert!(trace.metrics.injected > 0, "seed {seed}: attack never fired");
        assert_eq!(trace.metrics.violations.agreement, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.termination, 0, "seed {seed}");
    }
}

/// Corrupting certificate carriers the moment they speak, then starving
/// their broadcasts, attacks the alert count. Sent votes cannot be
/// retracted, so the count still clears B+1 and agreement is unaffected.
#[test]
fn withheld_certificates_cannot_flip_multivalued_agreement() {
    let v = Val::bytes(b"checkpoint-7");
    let mut engaged = 0u64;
    for seed in 20..30 {
        let c = cfg(ProtocolKind::Multivalued, seed, vec![v.clone(); 64]);
        let trace = run(&c, "qc-withhold");
        engaged += trace.metrics.corruptions;
        assert_eq!(trace.metrics.violations.agreement, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.qc_conflict, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.termination, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        // Unanimous inputs and a full budget of corrupted carriers: the
        // remaining correct certificates still defeat the alert.
        for o in trace.metrics.outcomes.iter().filter(|o| !o.corrupted) {
            assert_eq!(
                o.outcome,
                Some(Outcome::MvDecide(v.clone())),
                "seed {seed}: process {}",
                o.pid
            );
        }
    }
    assert!(engaged > 0, "strategy never corrupted a carrier");
}

/// The scheduling attack the coin's success bound is proved against:
/// starve the minimal reveal toward half the processes. Outputs may split
/// only when the overlap premise fails; under conditioned sampling it
/// never does, so the conditional-agreement counter must stay zero.
#[test]
fn coin_splitting_never_breaks_conditional_agreement() {
    let mut observed = 0u32;
    let mut agreed = 0u32;
    for seed in 30..60 {
        let c = cfg(ProtocolKind::Coin, seed, vec![Val::Bottom; 64]);
        let trace = run(&c, "coin-splitter");
        assert_eq!(trace.metrics.corruptions, 1, "seed {seed}: observer missing");
        assert_eq!(trace.metrics.violations.coin_v_min, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.termination, 0, "seed {seed}");
        let rec = &trace.metrics.coin_records[0];
        assert_eq!(rec.outputs, 63, "seed {seed}: every correct process outputs");
        assert!(rec.overlap_guaranteed, "seed {seed}: conditioned premise");
        if rec.v_min_common {
            observed += 1;
            assert_eq!(rec.all_agree, Some(rec.v_min_lsb), "seed {seed}");
        }
        if rec.all_agree.is_some() {
            agreed += 1;
        }
    }
    assert!(observed >= 10, "common minimum too rare: {observed}/30");
    assert!(agreed >= observed, "agreement can only be more frequent");
}

/// Forged certificate batches (duplicated signer, or mixed values under a
/// split) ride on genuine seats, so they count as converge votes, but they
/// must fail verification and never feed the content count.
#[test]
fn forged_certificates_count_as_votes_but_never_as_content() {
    let v = Val::bytes(b"epoch-42");
    for seed in 60..70 {
        let c = cfg(ProtocolKind::Multivalued, seed, vec![v.clone(); 64]);
        let trace = run(&c, "alert-skew");
        assert!(trace.metrics.injected > 0, "seed {seed}: no forgery broadcast");
        assert_eq!(trace.metrics.violations.qc_conflict, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        for o in trace.metrics.outcomes.iter().filter(|o| !o.corrupted) {
            assert_eq!(
                o.outcome,
                Some(Outcome::MvDecide(v.clone())),
                "seed {seed}: process {}",
                o.pid
            );
        }
    }
}

/// Full-budget crashes against all four protocols: the baseline every
/// threshold must absorb. Runs terminate and stay safe.
#[test]
fn crashes_preserve_termination_across_the_stack() {
    let drills: [(ProtocolKind, Vec<Val>); 4] = [
        (ProtocolKind::Approver, vec![Val::bytes(b"head"); 64]),
        (ProtocolKind::Coin, vec![Val::Bottom; 64]),
        (ProtocolKind::Binary, (0..64).map(|i| Val::bit(i % 3 == 0)).collect()),
        (ProtocolKind::Multivalued, (0..64).map(|i| Val::bytes(&[i as u8 % 2])).collect()),
    ];
    for (slot, (kind, inputs)) in drills.into_iter().enumerate() {
        for seed in 0..4 {
            let c = cfg(kind, 70 + slot as u64 * 10 + seed, inputs.clone());
            let trace = run(&c, "crash");
            assert_eq!(trace.metrics.corruptions, 8, "{kind:?} seed {seed}");
            assert_eq!(trace.metrics.violations.termination, 0, "{kind:?} seed {seed}");
            assert_eq!(trace.metrics.violations.safety_total(), 0, "{kind:?} seed {seed}");
            assert!(trace.blocked_reason.is_none(), "{kind:?} seed {seed}");
        }
    }
}
