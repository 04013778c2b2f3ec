//! Shared coin by VRF minimum, correct with high probability.
//!
//! Two committee-gated waves per instance. A process sampled to the first
//! committee reveals its VRF value for the round (as the proof; the value is
//! derivable). A process sampled to the second committee waits for W valid
//! firsts from distinct senders, takes the minimum value among them (ties
//! broken by origin id), and relays it with provenance: origin id, origin's
//! VRF proof, origin's first-committee seat. Receivers can then verify a
//! relayed value instead of trusting the relay; a value below the true
//! minimum would need a VRF forgery. Every caller waits for W valid seconds
//! from distinct senders and outputs the least significant bit of the
//! minimum over the carried values.
//!
//! The output agrees across correct callers whenever the committee-wide
//! minimum reached enough correct second members before they relayed: each
//! caller's W seconds then overlap that set, so every minimum-over-W lands
//! on the same value. The adversary can break this only by starving most of
//! the second committee of the minimal first, which scheduling alone (being
//! content-oblivious for correct traffic) achieves with probability bounded
//! away from one. Nothing is retried here; callers needing certainty run
//! rounds until a coin goes their way.
//!
//! Tallying and the second-phase relay run as soon as messages arrive,
//! started or not, exactly like the approver's eager committee duties; the
//! local call only adds the first broadcast and arms the output.

use std::sync::Arc;

use crate::crypto::{vrf_value_of, CommitteeProof, Digest};
use crate::metrics::Outcome;
use crate::netsim::{Ctx, PidSet, Process};
use crate::wire::{coin_value_input, Body, InstanceId, Payload, Proto, Step};

/// One retained first-phase receipt: everything a relay needs to carry the
/// value with provenance.
#[derive(Debug)]
struct FirstRec {
    origin: u32,
    value: Digest,
    proof: Digest,
    seat: CommitteeProof,
}

/// One coin instance's state machine. Payloads fed here have already passed
/// signature, seat, VRF, and provenance validation.
#[derive(Debug)]
pub struct CoinInstance {
    inst: InstanceId,
    started: bool,
    first_senders: PidSet,
    /// The first W firsts, in arrival order; cleared once the relay decision
    /// is made.
    firsts: Vec<FirstRec>,
    second_sent: bool,
    second_senders: PidSet,
    /// Carried (value, origin) of the first W seconds from distinct senders.
    seconds: Vec<(Digest, u32)>,
    output: Option<bool>,
}

impl CoinInstance {
    pub fn new(inst: InstanceId, n: u32) -> CoinInstance {
        CoinInstance {
            inst,
            started: false,
            first_senders: PidSet::new(n),
            firsts: Vec::new(),
            second_sent: false,
            second_senders: PidSet::new(n),
            seconds: Vec::new(),
            output: None,
        }
    }

    pub fn instance(&self) -> &InstanceId {
        &self.inst
    }

    pub fn started(&self) -> bool {
        self.started
    }

    /// The local call: reveal this process's value if on the first committee
    /// and arm the output. Idempotent.
    pub fn start(&mut self, ctx: &mut Ctx) {
        if self.started {
            return;
        }
        self.started = true;
        if let Some(seat) = ctx.try_seat(&self.inst, &Step::First) {
            let proof = ctx.vrf(&coin_value_input(&self.inst)).proof;
            ctx.broadcast(&self.inst, Body::First { vrf_proof: proof }, seat);
        }
        self.maybe_finish(ctx);
    }

    /// Feeds one validated payload of this instance.
    pub fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Payload) {
        debug_assert_eq!(payload.inst, self.inst);
        match &payload.body {
            Body::First { vrf_proof } => self.on_first(ctx, from, vrf_proof, payload),
            Body::Second { origin, origin_vrf_proof, .. } => {
                self.on_second(ctx, from, *origin, origin_vrf_proof)
            }
            _ => {}
        }
    }

    /// The output bit, once W seconds arrived and the instance was started.
    pub fn output(&self) -> Option<bool> {
        self.output
    }

    fn on_first(&mut self, ctx: &mut Ctx, from: u32, proof: &Digest, payload: &Payload) {
        let w = ctx.params().w as usize;
        if !self.first_senders.insert(from) {
            return;
        }
        if self.firsts.len() < w {
            self.firsts.push(FirstRec {
                origin: from,
                value: vrf_value_of(proof),
                proof: *proof,
                seat: payload.seat.clone(),
            });
        }
        if self.firsts.len() == w && !self.second_sent {
            if let Some(seat) = ctx.try_seat(&self.inst, &Step::Second) {
                self.second_sent = true;
                let min = self
                    .firsts
                    .iter()
                    .min_by_key(|r| (r.value, r.origin))
                    .expect("w is at least 1");
                let body = Body::Second {
                    origin: min.origin,
                    origin_vrf_proof: min.proof,
                    origin_seat: min.seat.clone(),
                };
                ctx.coin_second_snapshot(
                    &self.inst,
                    self.firsts.iter().map(|r| (r.origin, r.value)).collect(),
                );
                ctx.broadcast(&self.inst, body, seat);
            }
            // Relayed or not on the committee: the receipts are spent.
            self.firsts = Vec::new();
        }
    }

    fn on_second(&mut self, ctx: &mut Ctx, from: u32, origin: u32, origin_proof: &Digest) {
        let w = ctx.params().w as usize;
        if !self.second_senders.insert(from) {
            return;
        }
        if self.seconds.len() < w {
            self.seconds.push((vrf_value_of(origin_proof), origin));
            self.maybe_finish(ctx);
        }
    }

    fn maybe_finish(&mut self, ctx: &mut Ctx) {
        let w = ctx.params().w as usize;
        if self.started && self.output.is_none() && self.seconds.len() == w {
            let (value, _) = self.seconds.iter().min().expect("w is at least 1");
            let bit = value[31] & 1 == 1;
            ctx.coin_output(&self.inst, bit);
            self.output = Some(bit);
        }
    }
}

/// Standalone harness process: one coin call per process.
pub struct CoinProc {
    instance: CoinInstance,
}

impl CoinProc {
    pub fn new(base: Arc<[u8]>, n: u32) -> CoinProc {
        let inst = InstanceId::new(Proto::Coin, base, 0, 0);
        CoinProc { instance: CoinInstance::new(inst, n) }
    }
}

impl Process for CoinProc {
    fn on_start(&mut self, ctx: &mut Ctx) {
        self.instance.start(ctx);
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
        self.instance.output().map(Outcome::CoinBit)
    }
}
