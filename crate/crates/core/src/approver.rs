//! The approver: one-shot graded agreement on a small value domain.
//!
//! Three committee-gated broadcast waves per instance. A process sampled to
//! the init committee opens with its input value. Any process that has seen
//! B+1 inits for one value knows at least one correct init carried it, and
//! echoes it if sampled to that value's echo committee (at most one echo per
//! value). W echoes for a value make it OK-able: a process on the ok
//! committee that has not yet OK'd anything sends an OK for the first value
//! to get there, carrying the W signed echoes as its proof. A caller returns
//! the set of distinct values among the first W valid OKs it receives from
//! distinct senders.
//!
//! The quorum arithmetic behind it: W > 2B makes the B+1 init threshold
//! unreachable for values no correct process proposed, and two singleton
//! returns for different values would need 2W − B distinct OK senders, more
//! than any committee the sampler accepts (the s5 margin). Byzantine OK
//! without W echoes fails proof verification, handled in netsim's validator.
//!
//! Processes tally and serve committee duties for an instance as soon as its
//! messages arrive, whether or not the local call to [`ApproverInstance::start`]
//! has happened; starting only adds the init broadcast and arms the return.
//! Binary agreement relies on this: a process lagging rounds behind still
//! feeds echoes and OKs to the instances its peers are already running.

use std::sync::Arc;

use crate::metrics::Outcome;
use crate::netsim::{Ctx, PidSet, Process};
use crate::wire::{Body, InstanceId, MemberCert, OkProof, Payload, Proto, Step, Val};

/// Per-value echo tally. Certificates are kept only until the W threshold
/// fires for this value (or the instance stops needing them).
#[derive(Debug)]
struct EchoTally {
    val: Val,
    senders: PidSet,
    certs: Vec<MemberCert>,
}

/// One approver instance's state machine. Payloads fed here have already
/// passed signature, seat, and proof validation.
#[derive(Debug)]
pub struct ApproverInstance {
    inst: InstanceId,
    n: u32,
    started: bool,
    inits: Vec<(Val, PidSet)>,
    echoed: Vec<Val>,
    echoes: Vec<EchoTally>,
    ok_sent: bool,
    ok_senders: PidSet,
    /// Values of the first W OKs from distinct senders, in arrival order.
    ok_vals: Vec<Val>,
    output: Option<Vec<Val>>,
}

impl ApproverInstance {
    pub fn new(inst: InstanceId, n: u32) -> ApproverInstance {
        ApproverInstance {
            inst,
            n,
            started: false,
            inits: Vec::new(),
            echoed: Vec::new(),
            echoes: Vec::new(),
            ok_sent: false,
            ok_senders: PidSet::new(n),
            ok_vals: Vec::new(),
            output: None,
        }
    }

    pub fn instance(&self) -> &InstanceId {
        &self.inst
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn ok_sent(&self) -> bool {
        self.ok_sent
    }

    /// The local call: broadcast the input if on the init committee and arm
    /// the return. Idempotent; the first input wins.
    pub fn start(&mut self, ctx: &mut Ctx, input: Val) {
        if self.started {
            return;
        }
        self.started = true;
        let w = ctx.params().w;
        if let Some(seat) = ctx.try_seat(&self.inst, &Step::Init) {
            ctx.broadcast(&self.inst, Body::Init { val: input }, seat);
        }
        self.maybe_finish(w);
    }

    /// Feeds one validated payload of this instance.
    pub fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Payload) {
        debug_assert_eq!(payload.inst, self.inst);
        match &payload.body {
            Body::Init { val } => self.on_init(ctx, from, val),
            Body::Echo { val } => self.on_echo(ctx, from, val, payload),
            Body::Ok { val, .. } => self.on_ok(ctx.params().w, from, val),
            _ => {}
        }
    }

    /// The return value, once W OKs arrived and the instance was started.
    pub fn output(&self) -> Option<&[Val]> {
        self.output.as_deref()
    }

    fn on_init(&mut self, ctx: &mut Ctx, from: u32, val: &Val) {
        let b = ctx.params().b;
        let n = self.n;
        let tally = match self.inits.iter_mut().find(|(v, _)| v == val) {
            Some((_, s)) => s,
            None => {
                self.inits.push((val.clone(), PidSet::new(n)));
                &mut self.inits.last_mut().expect("just pushed").1
            }
        };
        if !tally.insert(from) {
            return;
        }
        // B+1 inits for one value: at least one correct process proposed it.
        if tally.len() == b + 1 && !self.echoed.contains(val) {
            if let Some(seat) = ctx.try_seat(&self.inst, &Step::Echo(val.clone())) {
                self.echoed.push(val.clone());
                ctx.broadcast(&self.inst, Body::Echo { val: val.clone() }, seat);
            }
        }
    }

    fn on_echo(&mut self, ctx: &mut Ctx, from: u32, val: &Val, payload: &Payload) {
        let w = ctx.params().w;
        let n = self.n;
        let tally = match self.echoes.iter_mut().position(|t| t.val == *val) {
            Some(i) => &mut self.echoes[i],
            None => {
                self.echoes.push(EchoTally {
                    val: val.clone(),
                    senders: PidSet::new(n),
                    certs: Vec::new(),
                });
                self.echoes.last_mut().expect("just pushed")
            }
        };
        if !tally.senders.insert(from) {
            return;
        }
        if tally.certs.len() < w as usize {
            tally.certs.push(MemberCert {
                pid: from,
                seat: payload.seat.clone(),
                sig: payload.sig.clone(),
            });
        }
        // First value past W echoes wins this process's one OK.
        if tally.senders.len() == w && !self.ok_sent {
            if let Some(seat) = ctx.try_seat(&self.inst, &Step::OkStep) {
                self.ok_sent = true;
                let proof = OkProof { certs: std::mem::take(&mut tally.certs) };
                let body = Body::Ok { val: val.clone(), proof };
                ctx.broadcast(&self.inst, body, seat);
            }
        }
        if tally.senders.len() >= w {
            // Past the threshold the certificates have no further use.
            tally.certs = Vec::new();
        }
    }

    fn on_ok(&mut self, w: u32, from: u32, val: &Val) {
        if !self.ok_senders.insert(from) {
            return;
        }
        if self.ok_vals.len() < w as usize {
            self.ok_vals.push(val.clone());
            self.maybe_finish(w);
        }
    }

    fn maybe_finish(&mut self, w: u32) {
        if self.started && self.output.is_none() && self.ok_vals.len() == w as usize {
            let mut set = self.ok_vals.clone();
            set.sort();
            set.dedup();
            self.output = Some(set);
        }
    }
}

/// Standalone harness process: one approver call per process.
pub struct ApproverProc {
    instance: ApproverInstance,
    input: Val,
}

impl ApproverProc {
    pub fn new(base: Arc<[u8]>, n: u32, input: Val) -> ApproverProc {
        let inst = InstanceId::new(Proto::Approver, base, 0, 0);
        ApproverProc { instance: ApproverInstance::new(inst, n), input }
    }
}

impl Process for ApproverProc {
    fn on_start(&mut self, ctx: &mut Ctx) {
        self.instance.start(ctx, self.input.clone());
    }

    fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Arc<Payload>) {
        if payload.inst == *self.instance.instance() {
            self.instance.on_payload(ctx, from, payload);
        }
    }

    fn done(&self) -> bool {
        self.instance.output().is_some()
    }

    fn outcome(&self) -> Option<Outcome> {
        self.instance.output().map(|vs| Outcome::ApproverSet(vs.to_vec()))
    }
}
