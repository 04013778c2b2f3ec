//! Built-in adversary strategies, each aimed at one protocol mechanism.
//!
//! Every strategy plays under the delayed-adaptive rules the simulator
//! enforces: corruption up to the budget at any moment, no retraction of
//! messages sent while correct, payload contents visible only for traffic
//! the adversary injected or receives at corrupted processes, and scheduling
//! bounded by the staleness forcing. Each one documents the mechanism it
//! attacks; in conditioned mode every one of them is expected to lose, and a
//! safety violation under any of them is a protocol bug, not a test flake.
//!
//! Strategies draw only on observed metadata and corrupted-process state, so
//! a run replays exactly from its seed.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::crypto::{vrf_value_of, Digest};
use crate::netsim::{Adv, EnvId, EnvMeta, Passive, Strategy};
use crate::wire::{Body, InstanceId, MemberCert, Payload, Proto, Qc, Val};

/// Looks a strategy up by its CLI name, `NAME` or `NAME:OPTS`. `crash`
/// accepts an optional corruption count (`crash:3`); the rest take no
/// options.
pub fn by_name(spec: &str) -> Option<Box<dyn Strategy>> {
    let (name, opts) = match spec.split_once(':') {
        Some((n, o)) => (n, Some(o)),
        None => (spec, None),
    };
    match (name, opts) {
        ("none", None) => Some(Box::new(Passive)),
        ("crash", None) => Some(Box::new(Crash { count: None })),
        ("crash", Some(o)) => Some(Box::new(Crash { count: Some(o.parse().ok()?) })),
        ("equivocate", None) => Some(Box::<Equivocate>::default()),
        ("qc-withhold", None) => Some(Box::<QcWithhold>::default()),
        ("coin-splitter", None) => Some(Box::<CoinSplitter>::default()),
        ("alert-skew", None) => Some(Box::<AlertSkew>::default()),
        _ => None,
    }
}

/// All registered strategy names, for CLI help and sweep drivers.
pub const NAMES: [&str; 6] =
    ["none", "crash", "equivocate", "qc-withhold", "coin-splitter", "alert-skew"];

/// Corrupts the first `count` (default: the full budget) processes before
/// anything starts and keeps them silent. The baseline fault model: every
/// threshold in the stack must already tolerate f missing voices.
pub struct Crash {
    pub count: Option<u32>,
}

impl Strategy for Crash {
    fn name(&self) -> &'static str {
        "crash"
    }

    fn on_run_start(&mut self, adv: &mut Adv) {
        let count = self.count.unwrap_or(adv.params().f).min(adv.params().f);
        for pid in 0..count {
            adv.corrupt(pid).expect("within budget");
        }
    }
}

/// Corrupts the full budget up front; whenever a new instance opens with
/// init traffic, every corrupted committee member sends conflicting values,
/// bit 0 to even recipients and bit 1 to odd ones, as both inits and echoes.
/// The target is the first tally threshold: a value only correct processes
/// never proposed must stay below B+1 inits, and ≤ B equivocating echoes
/// must never complete a W quorum on their own.
#[derive(Default)]
pub struct Equivocate {
    attacked: HashSet<InstanceId>,
}

impl Strategy for Equivocate {
    fn name(&self) -> &'static str {
        "equivocate"
    }

    fn on_run_start(&mut self, adv: &mut Adv) {
        for pid in 0..adv.params().f {
            adv.corrupt(pid).expect("within budget");
        }
    }

    fn on_send(&mut self, adv: &mut Adv, meta: &EnvMeta) {
        if meta.kind != "init" || !self.attacked.insert(meta.inst.clone()) {
            return;
        }
        let n = adv.n();
        let pair = [Val::bit(false), Val::bit(true)];
        for pid in 0..adv.params().f {
            for (parity, val) in pair.iter().enumerate() {
                let bodies =
                    [Body::Init { val: val.clone() }, Body::Echo { val: val.clone() }];
                for body in bodies {
                    let Ok(Some(p)) = adv.byz_build(pid, &meta.inst, body) else {
                        continue;
                    };
                    for to in (0..n).filter(|t| *t % 2 == parity as u32) {
                        adv.byz_send(pid, to, p.clone()).expect("pid is corrupted");
                    }
                }
            }
        }
    }
}

/// Corrupts the senders of content converge votes the moment they speak and
/// starves their certificate-carrying broadcasts for as long as the
/// staleness bound allows. The target: reach the alert latch with fewer
/// than B+1 counted certificates even though correct processes produced
/// them. Votes already sent cannot be retracted, only delayed, so the
/// certificate that the decide path waits for still arrives.
#[derive(Default)]
pub struct QcWithhold {
    queue: VecDeque<EnvId>,
}

impl Strategy for QcWithhold {
    fn name(&self) -> &'static str {
        "qc-withhold"
    }

    fn on_send(&mut self, adv: &mut Adv, meta: &EnvMeta) {
        if meta.kind == "converge-qc"
            && !adv.is_corrupted(meta.from)
            && adv.budget_left() > 0
        {
            adv.corrupt(meta.from).expect("budget checked");
        }
        self.queue.push_back(meta.id);
    }

    fn pick(&mut self, adv: &mut Adv) -> Option<EnvId> {
        for _ in 0..self.queue.len() {
            let id = self.queue.pop_front().expect("loop bounded by len");
            let Some(meta) = adv.meta(id) else { continue };
            if meta.kind == "converge-qc" {
                self.queue.push_back(id);
            } else {
                return Some(id);
            }
        }
        None
    }
}

/// Corrupts one process as an observation post, watches the first-phase coin
/// values it receives, and starves deliveries of the currently-minimal
/// sender's reveals to the lower half of the process space. The target is
/// the common-minimum argument: without enough correct second-committee
/// members holding v_min, outputs may split. Content obliviousness makes
/// this the strongest scheduling attack available, and the success-rate
/// bound is proved against exactly this class.
#[derive(Default)]
pub struct CoinSplitter {
    /// Per coin instance: (smallest observed first value, its origin).
    mins: HashMap<InstanceId, (Digest, u32)>,
    queue: VecDeque<EnvId>,
}

impl CoinSplitter {
    fn held(&self, meta: &EnvMeta, n: u32) -> bool {
        meta.kind == "first"
            && meta.to < n / 2
            && self.mins.get(&meta.inst).is_some_and(|&(_, origin)| origin == meta.from)
    }
}

impl Strategy for CoinSplitter {
    fn name(&self) -> &'static str {
        "coin-splitter"
    }

    fn on_run_start(&mut self, adv: &mut Adv) {
        if adv.params().f > 0 {
            adv.corrupt(adv.n() - 1).expect("within budget");
        }
    }

    fn on_send(&mut self, _adv: &mut Adv, meta: &EnvMeta) {
        self.queue.push_back(meta.id);
    }

    fn on_deliver_byz(&mut self, _adv: &mut Adv, _meta: &EnvMeta, payload: &Arc<Payload>) {
        let Body::First { vrf_proof } = &payload.body else { return };
        let value = vrf_value_of(vrf_proof);
        let origin = payload.seat.process_id;
        let entry = self.mins.entry(payload.inst.clone()).or_insert((value, origin));
        if (value, origin) < *entry {
            *entry = (value, origin);
        }
    }

    fn pick(&mut self, adv: &mut Adv) -> Option<EnvId> {
        let n = adv.n();
        for _ in 0..self.queue.len() {
            let id = self.queue.pop_front().expect("loop bounded by len");
            let Some(meta) = adv.meta(id) else { continue };
            if self.held(&meta, n) {
                self.queue.push_back(id);
            } else {
                return Some(id);
            }
        }
        None
    }
}

/// Corrupts the full budget up front, collects genuine init certificates
/// arriving at corrupted processes, and has every corrupted converge member
/// broadcast a content vote whose certificate cannot verify: mixed-value
/// certificates when the input was split, a duplicated signer otherwise.
/// The target is the alert threshold: forged certificates must count as
/// votes but never as content, leaving the B+1 count to genuine quorums.
#[derive(Default)]
pub struct AlertSkew {
    certs: HashMap<InstanceId, Vec<(Val, MemberCert)>>,
    attacked: HashSet<InstanceId>,
}

impl Strategy for AlertSkew {
    fn name(&self) -> &'static str {
        "alert-skew"
    }

    fn on_run_start(&mut self, adv: &mut Adv) {
        for pid in 0..adv.params().f {
            adv.corrupt(pid).expect("within budget");
        }
    }

    fn on_deliver_byz(&mut self, adv: &mut Adv, _meta: &EnvMeta, payload: &Arc<Payload>) {
        let Body::Init { val } = &payload.body else { return };
        if payload.inst.proto != Proto::Mv || self.attacked.contains(&payload.inst) {
            return;
        }
        let w = adv.params().w as usize;
        let certs = self.certs.entry(payload.inst.clone()).or_default();
        if certs.iter().any(|(_, c)| c.pid == payload.seat.process_id) {
            return;
        }
        certs.push((
            val.clone(),
            MemberCert {
                pid: payload.seat.process_id,
                seat: payload.seat.clone(),
                sig: payload.sig.clone(),
            },
        ));
        if certs.len() < w {
            return;
        }
        self.attacked.insert(payload.inst.clone());
        let batch = self.certs.remove(&payload.inst).expect("just filled");
        let mixed = batch.iter().any(|(v, _)| *v != batch[0].0);
        let claim = batch[0].0.clone();
        let mut forged: Vec<MemberCert> = batch.into_iter().map(|(_, c)| c).collect();
        if !mixed {
            // All certificates genuinely match: break the batch instead by
            // duplicating a signer, which the distinctness check must catch.
            forged[1] = forged[0].clone();
        }
        let qc = Qc { val: claim, certs: forged };
        let inst = payload.inst.clone();
        for pid in 0..adv.params().f {
            let Ok(Some(p)) = adv.byz_build(pid, &inst, Body::Converge { qc: Some(qc.clone()) })
            else {
                continue;
            };
            adv.byz_broadcast(pid, p).expect("pid is corrupted");
        }
    }
}
