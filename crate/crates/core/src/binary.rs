//! Binary Byzantine agreement, correct with high probability.
//!
//! Each round runs two approver calls around a shared coin. The first call
//! filters estimates: a caller whose return set is a singleton {v} proposes
//! v, anyone else proposes ⊥. Graded agreement makes conflicting singletons
//! a whp-impossibility, so at most one non-⊥ value enters the second call.
//! Its return set then classifies the round: {v} decides v, {v,⊥} adopts v
//! as the next estimate, {⊥} adopts the coin.
//!
//! The interlock that yields agreement: deciding on {v} means W processes
//! OK'd v, so every other caller's W OKs overlap that set and contain v,
//! putting v in everyone's return set. Whoever did not decide still adopted
//! v, and a round with unanimous estimates decides it. The coin drives
//! termination: when every correct caller got {⊥}, estimates follow the
//! coin, and with probability at least the coin's agreement rate the next
//! round is unanimous. Deciding does not stop a process; it keeps running
//! rounds with its estimate pinned to the decision so that stragglers one
//! round behind still meet quorums.
//!
//! A second-call return with two non-⊥ values is an observed failure of the
//! graded-agreement promise (possible in faithful sampling mode). It is
//! flagged on the run and answered deterministically: adopt the smallest
//! non-⊥ value, never decide on it.
//!
//! Sub-protocol instances are created on first contact, local or network,
//! so a process lagging rounds behind still serves committee duties for the
//! instances its peers already run. Rounds advance strictly in phase order;
//! in particular the coin is not consulted until the proposal is fixed.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::approver::ApproverInstance;
use crate::coin::CoinInstance;
use crate::metrics::Outcome;
use crate::netsim::{Ctx, Process};
use crate::wire::{InstanceId, Payload, Proto, Val};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    FilterEstimates,
    Coin,
    Classify,
}

/// One process's binary agreement state machine. The input bit arrives with
/// [`BinaryInstance::start`], which may come after network contact: the
/// multivalued protocol computes its alert input from received messages, so
/// sub-instances here tally and serve committees before the estimate exists.
pub struct BinaryInstance {
    base: Arc<[u8]>,
    n: u32,
    /// Messages for rounds past this are dropped unread; correct peers never
    /// get there, so anything beyond is a Byzantine memory probe.
    max_round: u32,
    started: bool,
    est: bool,
    round: u32,
    phase: Phase,
    propose: Val,
    coin_bit: Option<bool>,
    decided: Option<(bool, u32)>,
    apps: BTreeMap<(u32, u8), ApproverInstance>,
    coins: BTreeMap<u32, CoinInstance>,
}

impl BinaryInstance {
    pub fn new(base: Arc<[u8]>, n: u32, max_round: u32) -> BinaryInstance {
        BinaryInstance {
            base,
            n,
            max_round,
            started: false,
            est: false,
            round: 1,
            phase: Phase::FilterEstimates,
            propose: Val::Bottom,
            coin_bit: None,
            decided: None,
            apps: BTreeMap::new(),
            coins: BTreeMap::new(),
        }
    }

    /// The local call: fixes the input estimate and begins round 1.
    /// Idempotent; the first input wins.
    pub fn start(&mut self, ctx: &mut Ctx, input: bool) {
        if self.started {
            return;
        }
        self.started = true;
        self.est = input;
        self.advance(ctx);
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn decided(&self) -> Option<(bool, u32)> {
        self.decided
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// True when `inst` belongs to this agreement's instance family.
    pub fn owns(&self, inst: &InstanceId) -> bool {
        inst.base[..] == self.base[..]
    }

    fn app_at(&mut self, round: u32, sub: u8) -> &mut ApproverInstance {
        let (base, n) = (&self.base, self.n);
        self.apps.entry((round, sub)).or_insert_with(|| {
            ApproverInstance::new(InstanceId::new(Proto::Approver, base.clone(), round, sub), n)
        })
    }

    fn coin_at(&mut self, round: u32) -> &mut CoinInstance {
        let (base, n) = (&self.base, self.n);
        self.coins.entry(round).or_insert_with(|| {
            CoinInstance::new(InstanceId::new(Proto::Coin, base.clone(), round, 0), n)
        })
    }

    /// Drives the phase machine as far as arrived messages allow.
    fn advance(&mut self, ctx: &mut Ctx) {
        while self.started && self.round <= self.max_round {
            match self.phase {
                Phase::FilterEstimates => {
                    let est = Val::bit(self.est);
                    let round = self.round;
                    let inst = self.app_at(round, 1);
                    inst.start(ctx, est);
                    let Some(vals) = inst.output() else { return };
                    self.propose = match vals {
                        [v] if !v.is_bottom() => v.clone(),
                        _ => Val::Bottom,
                    };
                    self.phase = Phase::Coin;
                }
                Phase::Coin => {
                    let round = self.round;
                    let inst = self.coin_at(round);
                    inst.start(ctx);
                    let Some(bit) = inst.output() else { return };
                    self.coin_bit = Some(bit);
                    self.phase = Phase::Classify;
                }
                Phase::Classify => {
                    let propose = self.propose.clone();
                    let round = self.round;
                    let inst = self.app_at(round, 2);
                    inst.start(ctx, propose);
                    let Some(vals) = inst.output() else { return };
                    let vals = vals.to_vec();
                    self.settle(ctx, &vals);
                    self.round += 1;
                    self.phase = Phase::FilterEstimates;
                }
            }
        }
    }

    /// Applies one round's second-call return set. `vals` is sorted and
    /// deduplicated, so ⊥ (if present) comes first.
    fn settle(&mut self, ctx: &mut Ctx, vals: &[Val]) {
        let coin = self.coin_bit.take().expect("the coin resolves before the second call");
        let has_bottom = vals.iter().any(Val::is_bottom);
        let bits: Vec<bool> = vals.iter().filter_map(Val::as_bit).collect();
        let non_bottom = vals.iter().filter(|v| !v.is_bottom()).count();
        if non_bottom >= 2 || bits.len() != non_bottom {
            // Two non-⊥ values, or a value no correct process fed in: the
            // graded promise broke. Surface it and fall back deterministically.
            ctx.flag_graded_failure();
            if self.decided.is_none() {
                if let Some(&b) = bits.first() {
                    self.est = b;
                }
            }
            return;
        }
        if self.decided.is_none() {
            match (bits.first(), has_bottom) {
                (Some(&v), false) => {
                    self.decided = Some((v, self.round));
                    self.est = v;
                }
                (Some(&v), true) => self.est = v,
                (None, _) => self.est = coin,
            }
        }
    }

    /// Feeds one validated payload of this agreement's instance family and
    /// drives the phase machine.
    pub fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Payload) {
        let inst = &payload.inst;
        debug_assert!(self.owns(inst));
        if inst.round == 0 || inst.round > self.max_round {
            return;
        }
        match inst.proto {
            Proto::Approver if inst.sub == 1 || inst.sub == 2 => {
                self.app_at(inst.round, inst.sub).on_payload(ctx, from, payload);
            }
            Proto::Coin if inst.sub == 0 => {
                self.coin_at(inst.round).on_payload(ctx, from, payload);
            }
            _ => return,
        }
        self.advance(ctx);
    }
}

/// Standalone harness process: one binary agreement per process.
pub struct BinaryProc {
    instance: BinaryInstance,
    input: bool,
}

impl BinaryProc {
    pub fn new(base: Arc<[u8]>, n: u32, max_round: u32, input: bool) -> BinaryProc {
        BinaryProc { instance: BinaryInstance::new(base, n, max_round), input }
    }
}

impl Process for BinaryProc {
    fn on_start(&mut self, ctx: &mut Ctx) {
        self.instance.start(ctx, self.input);
    }

    fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Arc<Payload>) {
        if self.instance.owns(&payload.inst) {
            self.instance.on_payload(ctx, from, payload);
        }
    }

    fn done(&self) -> bool {
        self.instance.decided().is_some()
    }

    fn round(&self) -> u32 {
        self.instance.round()
    }

    fn outcome(&self) -> Option<Outcome> {
        self.instance.decided().map(|(bit, round)| Outcome::BinaryDecide { bit, round })
    }
}
