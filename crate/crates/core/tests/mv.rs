//! Multivalued agreement at realistic scale: n=64 sampled committees,
//! conditioned mode. Weak unanimity, agreement, certificate uniqueness, and
//! termination are asserted per run.

use saba::metrics::Outcome;
use saba::mv::MvProc;
use saba::netsim::{run_with, Adv, Passive, Process, ProtocolKind, RunConfig, RunTrace, Strategy};
use saba::params::derive_params;
use saba::wire::Val;
use std::sync::Arc;

fn cfg(seed: u64, inputs: Vec<Val>) -> RunConfig {
    let params = derive_params(64, 0.2, 0.05).expect("n=64 parameters are valid");
    let mut cfg = RunConfig::new(params, ProtocolKind::Multivalued, seed);
    cfg.inputs = inputs;
    cfg
}

fn base() -> Arc<[u8]> {
    b"mv-64".to_vec().into()
}

fn run(c: &RunConfig, strategy: &mut dyn Strategy) -> RunTrace {
    let n = c.params.n;
    let cap = c.round_cap + c.extra_rounds;
    run_with(
        c,
        |_, v| Box::new(MvProc::new(base(), n, cap, v.clone())) as Box<dyn Process>,
        strategy,
    )
    .expect("conditioned run completes")
}

fn decisions(trace: &RunTrace) -> Vec<Val> {
    trace
        .metrics
        .outcomes
        .iter()
        .filter(|o| !o.corrupted)
        .filter_map(|o| match &o.outcome {
            Some(Outcome::MvDecide(v)) => Some(v.clone()),
            _ => None,
        })
        .collect()
}

struct CrashF;

impl Strategy for CrashF {
    fn name(&self) -> &'static str {
        "crash"
    }
    fn on_run_start(&mut self, adv: &mut Adv) {
        for pid in 0..adv.params().f {
            adv.corrupt(pid).expect("within budget");
        }
    }
}

#[test]
fn unanimous_inputs_decide_that_value() {
    let v = Val::bytes(b"tx-block-a");
    for seed in 0..8 {
        let c = cfg(seed, vec![v.clone(); 64]);
        let trace = run(&c, &mut Passive);
        assert!(!trace.blocked, "seed {seed}");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.termination, 0, "seed {seed}");
        let ds = decisions(&trace);
        assert_eq!(ds.len(), 64);
        assert!(ds.iter().all(|d| *d == v), "seed {seed}");
    }
}

#[test]
fn split_inputs_agree_with_at_most_one_certified_value() {
    let domain = [Val::bytes(b"a"), Val::bytes(b"b"), Val::bytes(b"c")];
    for seed in 100..110 {
        let inputs: Vec<Val> = (0..64).map(|i| domain[i % 3].clone()).collect();
        let c = cfg(seed, inputs);
        let trace = run(&c, &mut Passive);
        assert!(!trace.blocked, "seed {seed}");
        assert_eq!(trace.metrics.violations.agreement, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.qc_conflict, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        let ds = decisions(&trace);
        assert_eq!(ds.len(), 64, "seed {seed}");
        assert!(ds.iter().all(|d| *d == ds[0]), "seed {seed}");
    }
}

#[test]
fn crash_faults_preserve_agreement_and_termination() {
    let v = Val::bytes(b"survivor");
    for seed in 200..206 {
        let c = cfg(seed, vec![v.clone(); 64]);
        let trace = run(&c, &mut CrashF);
        assert!(!trace.blocked, "seed {seed}");
        assert_eq!(trace.metrics.corruptions as u32, c.params.f, "seed {seed}");
        assert_eq!(trace.metrics.violations.agreement, 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.safety_total(), 0, "seed {seed}");
        assert_eq!(trace.metrics.violations.termination, 0, "seed {seed}");
        let ds = decisions(&trace);
        assert_eq!(ds.len() as u32, 64 - c.params.f, "seed {seed}");
        assert!(ds.iter().all(|d| *d == ds[0]), "seed {seed}");
    }
}
