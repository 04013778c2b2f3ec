//! Multivalued weak Byzantine agreement over an arbitrary finite value
//! domain, built from one committee exchange and an embedded binary
//! agreement on a single alert bit.
//!
//! A process sampled to the init committee opens with its input. Everyone
//! collects inits; at the W-th distinct sender, a process sampled to the
//! converge committee votes: if every received value equaled its own input,
//! it sends a content vote carrying a quorum certificate (the W signed
//! inits, necessarily all for its value); otherwise it sends an empty vote.
//! At the W-th distinct converge sender, the process latches an alert bit,
//! true unless at least B+1 votes carried verifying certificates, and feeds
//! it to a binary agreement. Deciding true means inputs were too split to
//! certify anything: decide ⊥. Deciding false means some correct process
//! certified its value; wait for any verifying certificate (often already
//! held) and decide its value.
//!
//! Two valid certificates can never certify different values: each needs W
//! init signers for its value, and two such quorums would take 2W − B
//! distinct init-committee members, more than any committee the sampler
//! accepts. That makes the certificate value unambiguous, so agreement
//! reduces to the binary instance's agreement. Certificates are verified
//! before they count toward the alert threshold; a vote whose certificate
//! fails verification still counts as a vote, just not as content. The
//! binary instance runs under a tag derived from this instance, keeping its
//! committees disjoint from init and converge by construction.
//!
//! Tallies, the converge vote, and the embedded binary all run eagerly on
//! message arrival, as in the approver; the local start only adds the init
//! broadcast. The alert bit is derived from received messages, not local
//! input, so even the embedded agreement starts without the local call.

use std::sync::Arc;

use crate::binary::BinaryInstance;
use crate::metrics::Outcome;
use crate::netsim::{Ctx, PidSet, Process};
use crate::wire::{Body, InstanceId, MemberCert, Payload, Proto, Qc, Step, Val};

/// One process's multivalued agreement state machine.
pub struct MvProc {
    inst: InstanceId,
    input: Val,
    started: bool,
    init_senders: PidSet,
    /// The first W signed inits, the certificate material for a content vote.
    init_certs: Vec<MemberCert>,
    /// Every init value received before the latch equaled the local input.
    all_own: bool,
    init_latched: bool,
    converge_senders: PidSet,
    content_count: u32,
    alert: Option<bool>,
    /// Value of the first verifying certificate seen, from any vote.
    qc_value: Option<Val>,
    binary: BinaryInstance,
    decision: Option<Val>,
}

impl MvProc {
    pub fn new(base: Arc<[u8]>, n: u32, max_round: u32, input: Val) -> MvProc {
        let inst = InstanceId::new(Proto::Mv, base, 0, 0);
        let mut alert_base = inst.bytes().to_vec();
        alert_base.extend_from_slice(b"/alert");
        MvProc {
            inst,
            input,
            started: false,
            init_senders: PidSet::new(n),
            init_certs: Vec::new(),
            all_own: true,
            init_latched: false,
            converge_senders: PidSet::new(n),
            content_count: 0,
            alert: None,
            qc_value: None,
            binary: BinaryInstance::new(alert_base.into(), n, max_round),
            decision: None,
        }
    }

    pub fn decision(&self) -> Option<&Val> {
        self.decision.as_ref()
    }

    fn on_init(&mut self, ctx: &mut Ctx, from: u32, val: &Val, payload: &Payload) {
        let w = ctx.params().w;
        if self.init_latched || !self.init_senders.insert(from) {
            return;
        }
        self.all_own &= *val == self.input;
        self.init_certs.push(MemberCert {
            pid: from,
            seat: payload.seat.clone(),
            sig: payload.sig.clone(),
        });
        if self.init_senders.len() < w {
            return;
        }
        self.init_latched = true;
        if let Some(seat) = ctx.try_seat(&self.inst, &Step::Converge) {
            let qc = if self.all_own {
                Some(Qc { val: self.input.clone(), certs: std::mem::take(&mut self.init_certs) })
            } else {
                None
            };
            ctx.broadcast(&self.inst, Body::Converge { qc }, seat);
        }
        self.init_certs = Vec::new();
    }

    fn on_converge(&mut self, ctx: &mut Ctx, from: u32, payload: &Payload) {
        let Body::Converge { qc } = &payload.body else { return };
        // Verify content on every arrival, latched or not: verification also
        // feeds the run-wide conflicting-certificate check, and a late
        // certificate is what the decide path may be waiting for.
        let content = qc.is_some() && ctx.qc_valid(payload);
        if content && self.qc_value.is_none() {
            self.qc_value = Some(qc.as_ref().expect("content implies a certificate").val.clone());
        }
        if self.alert.is_none() && self.converge_senders.insert(from) {
            if content {
                self.content_count += 1;
            }
            let (w, b) = (ctx.params().w, ctx.params().b);
            if self.converge_senders.len() == w {
                let alert = self.content_count < b + 1;
                self.alert = Some(alert);
                self.binary.start(ctx, alert);
            }
        }
        self.maybe_decide();
    }

    fn maybe_decide(&mut self) {
        if self.decision.is_some() {
            return;
        }
        match self.binary.decided() {
            Some((true, _)) => self.decision = Some(Val::Bottom),
            Some((false, _)) => {
                if let Some(v) = &self.qc_value {
                    self.decision = Some(v.clone());
                }
            }
            None => {}
        }
    }
}

impl Process for MvProc {
    fn on_start(&mut self, ctx: &mut Ctx) {
        if self.started {
            return;
        }
        self.started = true;
        if let Some(seat) = ctx.try_seat(&self.inst, &Step::Init) {
            ctx.broadcast(&self.inst, Body::Init { val: self.input.clone() }, seat);
        }
    }

    fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Arc<Payload>) {
        if payload.inst == self.inst {
            match &payload.body {
                Body::Init { val } => self.on_init(ctx, from, val, payload),
                Body::Converge { .. } => self.on_converge(ctx, from, payload),
                _ => {}
            }
        } else if self.binary.owns(&payload.inst) {
            self.binary.on_payload(ctx, from, payload);
            self.maybe_decide();
        }
    }

    fn done(&self) -> bool {
        self.decision.is_some()
    }

    fn round(&self) -> u32 {
        self.binary.round()
    }

    fn outcome(&self) -> Option<Outcome> {
        self.decision.clone().map(Outcome::MvDecide)
    }
}
