//! Asynchronous message-passing world with an adversarial scheduler.
//!
//! The model: n processes exchange signed payloads over a network that
//! guarantees eventual delivery but nothing about order. Every send becomes an
//! envelope in a pending pool; each simulation step the scheduler (adversary
//! strategy, or a seeded uniform pick) selects one envelope to deliver. A
//! staleness bound caps how long any envelope can be starved, which is the
//! whole of the "eventual delivery" guarantee.
//!
//! The adversary is delayed-adaptive: it may corrupt processes at any point up
//! to the corruption budget f, but messages already sent are immutable and
//! cannot be unsent. Payload contents of correct-to-correct traffic are opaque
//! to strategies; only metadata (sender, recipient, step kind, digest) is
//! visible. This matters: the coin's agreement probability is proved against a
//! scheduler that cannot read in-flight first-phase values, and the interface
//! enforces that structurally rather than by convention.
//!
//! Committee sampling comes in two modes. `Faithful` realizes every committee
//! from the plain VRF election and records which size/composition conditions
//! it happened to satisfy. `Conditioned` resamples a committee (by salting its
//! tag) until the conditions hold, turning whp statements into invariants the
//! test suite can assert unconditionally. Salt 0 is the unsalted tag, so a
//! committee that passes on the first draw is bit-identical in both modes.
//!
//! Verification is centralized here: a payload delivered to a correct process
//! is dropped unless its committee seat, signature, and any embedded
//! certificate batch all check out. Results are memoized by payload digest, so
//! a broadcast is fully verified once, not n times.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{self, CommitteeProof, Digest, Registry, VrfOutput};
use crate::metrics::{
    decision_records, CommitteeRecord, CoinRecord, DecisionRecord, Metrics, Outcome,
    ProcessOutcome,
};
use crate::params::{self, SystemParams};
use crate::wire::{self, Body, InstanceId, Payload, Step, Val};

/// Fixed-capacity process-id set; committees and tallies index by pid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PidSet {
    words: Vec<u64>,
    len: u32,
}

impl PidSet {
    pub fn new(n: u32) -> PidSet {
        PidSet { words: vec![0; (n as usize).div_ceil(64)], len: 0 }
    }

    /// True if `pid` was not yet in the set.
    pub fn insert(&mut self, pid: u32) -> bool {
        let (w, b) = (pid as usize / 64, pid as usize % 64);
        if self.words[w] >> b & 1 == 1 {
            return false;
        }
        self.words[w] |= 1 << b;
        self.len += 1;
        true
    }

    pub fn contains(&self, pid: u32) -> bool {
        let (w, b) = (pid as usize / 64, pid as usize % 64);
        w < self.words.len() && self.words[w] >> b & 1 == 1
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| (wi * 64 + b) as u32)
        })
    }
}

/// Whether committees are used as sampled or resampled until the good event
/// holds. See the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SamplingMode {
    Faithful,
    Conditioned,
}

/// Which protocol the run drives; selects input validation and the
/// end-of-run safety checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProtocolKind {
    Approver,
    Coin,
    Binary,
    Multivalued,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: SystemParams,
    pub seed: u64,
    pub protocol: ProtocolKind,
    /// Initial value per process. Ignored by the coin (may be empty).
    pub inputs: Vec<Val>,
    pub mode: SamplingMode,
    /// A process advancing past this round halts the run as blocked.
    pub round_cap: u32,
    /// Rounds every process keeps running after all correct ones decided
    /// (binary agreement harness; 0 for everything else).
    pub extra_rounds: u32,
    /// Maximum steps an envelope may wait before delivery is forced.
    /// 0 selects the default, 10·n·λ.
    pub staleness_bound: u64,
    pub record_trace: bool,
}

impl RunConfig {
    pub fn new(params: SystemParams, protocol: ProtocolKind, seed: u64) -> RunConfig {
        RunConfig {
            params,
            seed,
            protocol,
            inputs: Vec::new(),
            mode: SamplingMode::Conditioned,
            round_cap: 200,
            extra_rounds: if protocol == ProtocolKind::Binary { 2 } else { 0 },
            staleness_bound: 0,
            record_trace: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("bad run inputs: {0}")]
    BadInputs(String),
    #[error("conditioned sampling gave up on committee {tag_hex} after {tries} draws")]
    Conditioning { tag_hex: String, tries: u32 },
}

/// Errors surfaced to adversary strategies by the [`Adv`] interface.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdvError {
    #[error("corruption budget f exhausted")]
    BudgetExceeded,
    #[error("process is not corrupted")]
    NotCorrupted,
    #[error("cannot send on behalf of a correct process")]
    Forgery,
}

/// One line of the run trace. Serialized as JSONL; byte-stable across reruns
/// of the same config.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub step: u64,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Everything a run leaves behind.
#[derive(Debug)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
    pub decisions: Vec<DecisionRecord>,
    pub metrics: Metrics,
    pub blocked: bool,
    pub blocked_reason: Option<String>,
}

impl RunTrace {
    /// The event log as JSONL, for persistence and replay comparison.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }
}

/// Pending-envelope handle. Packs a slab slot with a generation so handles
/// from freed slots never alias.
pub type EnvId = u64;

#[derive(Debug, Clone)]
struct Envelope {
    from: u32,
    to: u32,
    send_step: u64,
    payload: Arc<Payload>,
}

/// Envelope metadata visible to adversary strategies regardless of who sent
/// or receives it. Payload contents are gated separately (see [`Adv::payload`]).
#[derive(Debug, Clone)]
pub struct EnvMeta {
    pub id: EnvId,
    pub from: u32,
    pub to: u32,
    pub send_step: u64,
    pub kind: &'static str,
    pub inst: InstanceId,
    pub digest: Digest,
}

/// Slab of pending envelopes with O(1) insert, remove, and uniform pick.
#[derive(Debug, Default)]
struct Pool {
    slots: Vec<Option<Envelope>>,
    gens: Vec<u32>,
    free: Vec<u32>,
    /// Live handles, swap-removed on delivery; `pos[slot]` is the index here.
    live: Vec<EnvId>,
    pos: Vec<u32>,
}

const DEAD: u32 = u32::MAX;

impl Pool {
    fn insert(&mut self, env: Envelope) -> EnvId {
        let slot = match self.free.pop() {
            Some(s) => s,
            None => {
                self.slots.push(None);
                self.gens.push(0);
                self.pos.push(DEAD);
                (self.slots.len() - 1) as u32
            }
        };
        self.slots[slot as usize] = Some(env);
        let id = (self.gens[slot as usize] as u64) << 32 | slot as u64;
        self.pos[slot as usize] = self.live.len() as u32;
        self.live.push(id);
        id
    }

    fn get(&self, id: EnvId) -> Option<&Envelope> {
        let (gen, slot) = ((id >> 32) as u32, id as u32);
        if self.gens.get(slot as usize) != Some(&gen) {
            return None;
        }
        self.slots[slot as usize].as_ref()
    }

    fn remove(&mut self, id: EnvId) -> Option<Envelope> {
        let (gen, slot) = ((id >> 32) as u32, id as u32);
        if self.gens.get(slot as usize) != Some(&gen) {
            return None;
        }
        let env = self.slots[slot as usize].take()?;
        self.gens[slot as usize] = gen.wrapping_add(1);
        self.free.push(slot);
        let at = self.pos[slot as usize];
        self.pos[slot as usize] = DEAD;
        let last = *self.live.last().expect("live nonempty");
        self.live[at as usize] = last;
        self.live.pop();
        if last != id {
            self.pos[last as u32 as usize] = at;
        }
        Some(env)
    }

    fn len(&self) -> usize {
        self.live.len()
    }

    fn random(&self, rng: &mut ChaCha12Rng) -> EnvId {
        self.live[rng.gen_range(0..self.live.len())]
    }
}

/// Envelope origin marker: bit 31 of `from` flags envelopes enqueued through
/// the adversary interface, i.e. sent by a process corrupted at send time.
/// Process ids stay far below this.
const INJECTED_BIT: u32 = 1 << 31;

impl Envelope {
    fn injected(&self) -> bool {
        self.from & INJECTED_BIT != 0
    }

    fn sender(&self) -> u32 {
        self.from & !INJECTED_BIT
    }
}

/// A realized committee: effective (possibly salted) tag, membership, and how
/// many resamples conditioning spent.
#[derive(Debug)]
struct CommitteeInfo {
    eff_tag: Arc<[u8]>,
    members: PidSet,
}

/// Per-coin-instance observations, folded into [`CoinRecord`]s at the end.
#[derive(Debug, Default)]
struct CoinTrack {
    /// (second-phase sender, its first-W (origin, value) receipts), recorded
    /// at the moment the sender relayed; senders here were correct then.
    snapshots: Vec<(u32, Vec<(u32, Digest)>)>,
    outputs: Vec<(u32, bool)>,
}

const CONDITIONING_CAP: u32 = 10_000;

/// Shared world state: network, registry, committees, verification caches,
/// metrics. Processes touch it through [`Ctx`], strategies through [`Adv`].
pub struct World {
    prms: SystemParams,
    mode: SamplingMode,
    reg: Registry,
    step: u64,
    pool: Pool,
    /// Envelope ids in send order; drives the staleness bound.
    fifo: VecDeque<EnvId>,
    staleness_bound: u64,
    corrupted: Vec<bool>,
    corrupted_count: u32,
    committees: HashMap<Vec<u8>, CommitteeInfo>,
    header_ok: HashMap<u128, bool>,
    qc_ok: HashMap<u128, bool>,
    /// First valid certificate value per instance; detects conflicting QCs.
    qc_value: HashMap<InstanceId, Val>,
    coin_tracks: HashMap<InstanceId, CoinTrack>,
    /// Metas of envelopes enqueued since the last strategy callback.
    fresh: VecDeque<EnvMeta>,
    rng_sched: ChaCha12Rng,
    rng_adv: ChaCha12Rng,
    metrics: Metrics,
    events: Vec<TraceEvent>,
    record_trace: bool,
    done: Vec<bool>,
    rounds: Vec<u32>,
    conditioning_failure: Option<RunError>,
}

fn cache_key(d: &Digest) -> u128 {
    u128::from_le_bytes(d[..16].try_into().expect("digest is 32 bytes"))
}

fn rng_stream(seed: u64, label: &[u8]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(crypto::digest_parts(&[b"rng", &seed.to_le_bytes(), label]))
}

impl World {
    fn new(cfg: &RunConfig) -> World {
        let n = cfg.params.n;
        let staleness = if cfg.staleness_bound > 0 {
            cfg.staleness_bound
        } else {
            (10.0 * n as f64 * cfg.params.lambda).ceil() as u64
        };
        World {
            prms: cfg.params,
            mode: cfg.mode,
            reg: Registry::new(n, cfg.seed),
            step: 0,
            pool: Pool::default(),
            fifo: VecDeque::new(),
            staleness_bound: staleness,
            corrupted: vec![false; n as usize],
            corrupted_count: 0,
            committees: HashMap::new(),
            header_ok: HashMap::new(),
            qc_ok: HashMap::new(),
            qc_value: HashMap::new(),
            coin_tracks: HashMap::new(),
            fresh: VecDeque::new(),
            rng_sched: rng_stream(cfg.seed, b"sched"),
            rng_adv: rng_stream(cfg.seed, b"adv"),
            metrics: Metrics::default(),
            events: Vec::new(),
            record_trace: cfg.record_trace,
            done: vec![false; n as usize],
            rounds: vec![0; n as usize],
            conditioning_failure: None,
        }
    }

    fn n(&self) -> u32 {
        self.prms.n
    }

    fn is_corrupted(&self, pid: u32) -> bool {
        self.corrupted[pid as usize]
    }

    fn trace(&mut self, ev: TraceEvent) {
        if self.record_trace {
            self.events.push(ev);
        }
    }

    fn trace_digest(d: &Digest) -> Option<String> {
        Some(d.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Realizes (or returns the cached) committee for a logical tag. In
    /// conditioned mode the tag is salted and redrawn until the committee is
    /// inside the size band with at least W correct and at most B Byzantine
    /// members, judged against the corruption set at this moment.
    fn realize(&mut self, logical: &[u8]) -> &CommitteeInfo {
        if !self.committees.contains_key(logical) {
            let info = self.draw_committee(logical);
            self.committees.insert(logical.to_vec(), info);
        }
        &self.committees[logical]
    }

    fn draw_committee(&mut self, logical: &[u8]) -> CommitteeInfo {
        let n = self.n();
        let lo = (1.0 - self.prms.d) * self.prms.lambda;
        let hi = (1.0 + self.prms.d) * self.prms.lambda;
        let mut salt: u32 = 0;
        loop {
            let eff: Arc<[u8]> = if salt == 0 {
                logical.to_vec().into()
            } else {
                let mut t = Vec::with_capacity(logical.len() + 16);
                t.extend_from_slice(logical);
                t.extend_from_slice(&(b"salt".len() as u32).to_le_bytes());
                t.extend_from_slice(b"salt");
                t.extend_from_slice(&4u32.to_le_bytes());
                t.extend_from_slice(&salt.to_le_bytes());
                t.into()
            };
            let mut members = PidSet::new(n);
            let mut byz = 0u32;
            for pid in 0..n {
                if crypto::sample(self.reg.key(pid), &eff, self.prms.lambda, n).0 {
                    members.insert(pid);
                    byz += self.corrupted[pid as usize] as u32;
                }
            }
            let size = members.len();
            let correct = size - byz;
            let s1 = (size as f64) <= hi;
            let s2 = (size as f64) >= lo;
            let s3 = correct >= self.prms.w;
            let s4 = byz <= self.prms.b;
            let good = s1 && s2 && s3 && s4;
            if self.mode == SamplingMode::Faithful || good {
                self.metrics.committees.record(&CommitteeRecord {
                    size,
                    correct,
                    byzantine: byz,
                    rejections: salt,
                    s1_ok: s1,
                    s2_ok: s2,
                    s3_ok: s3,
                    s4_ok: s4,
                });
                let tag_digest = crypto::digest_parts(&[b"trace-tag", &eff]);
                let note =
                    format!("size={size} correct={correct} byz={byz} salt={salt}");
                let ev = TraceEvent {
                    step: self.step,
                    kind: "committee",
                    from: None,
                    to: None,
                    digest: Self::trace_digest(&tag_digest),
                    note: Some(note),
                };
                self.trace(ev);
                return CommitteeInfo { eff_tag: eff, members };
            }
            salt += 1;
            if salt >= CONDITIONING_CAP {
                let tag_hex: String = logical.iter().map(|b| format!("{b:02x}")).collect();
                self.conditioning_failure =
                    Some(RunError::Conditioning { tag_hex, tries: salt });
                // Give up but stay callable: hand back the last draw.
                return CommitteeInfo { eff_tag: eff, members };
            }
        }
    }

    /// Sender-side election check for (inst, step). The returned seat proof
    /// is on the effective tag, which is what validators check against.
    fn seat_for(&mut self, pid: u32, inst: &InstanceId, step: &Step) -> Option<CommitteeProof> {
        let logical = wire::committee_tag(inst, step);
        let (member, eff) = {
            let info = self.realize(&logical);
            (info.members.contains(pid), info.eff_tag.clone())
        };
        if !member {
            return None;
        }
        let (won, proof) = crypto::sample(self.reg.key(pid), &eff, self.prms.lambda, self.n());
        debug_assert!(won, "membership and election proof must agree");
        Some(proof)
    }

    fn enqueue(&mut self, from: u32, to: u32, payload: Arc<Payload>) -> EnvId {
        let env = Envelope { from, to, send_step: self.step, payload };
        let meta_payload = env.payload.clone();
        let id = self.pool.insert(env);
        self.fifo.push_back(id);
        self.metrics.sends += 1;
        self.fresh.push_back(EnvMeta {
            id,
            from,
            to,
            send_step: self.step,
            kind: meta_payload.body.kind(),
            inst: meta_payload.inst.clone(),
            digest: meta_payload.id,
        });
        id
    }

    /// Broadcast by a correct process: n envelopes (self included; loopback
    /// delivery is scheduled like any other message) plus word accounting.
    fn broadcast_correct(&mut self, from: u32, payload: Arc<Payload>) {
        let n = self.n();
        self.metrics.words_sent += wire::word_cost(&payload.body, self.prms.w) * n as u64;
        self.metrics.bump_kind(payload.body.kind());
        let ev = TraceEvent {
            step: self.step,
            kind: "send",
            from: Some(from),
            to: None,
            digest: Self::trace_digest(&payload.id),
            note: Some(payload.body.kind().to_string()),
        };
        self.trace(ev);
        for to in 0..n {
            self.enqueue(from, to, payload.clone());
        }
    }

    /// Full payload verification, memoized by payload digest. An envelope
    /// whose transport sender differs from the signer is rejected before the
    /// cache: that check is per-envelope, not per-payload.
    fn validate(&mut self, env: &Envelope) -> bool {
        let p = env.payload.as_ref();
        let sender = env.sender();
        if p.sig.signer != sender || p.seat.process_id != sender {
            return false;
        }
        let key = cache_key(&p.id);
        if let Some(&ok) = self.header_ok.get(&key) {
            return ok;
        }
        let ok = self.validate_payload(p);
        self.header_ok.insert(key, ok);
        ok
    }

    fn validate_payload(&mut self, p: &Payload) -> bool {
        let step = p.body.step();
        let logical = wire::committee_tag(&p.inst, &step);
        let eff = self.realize(&logical).eff_tag.clone();
        if p.seat.tag[..] != eff[..]
            || !crypto::committee_val(&self.reg, &eff, self.prms.lambda, p.seat.process_id, &p.seat)
        {
            return false;
        }
        if !crypto::verify(&self.reg, wire::signable_digest(&p.inst, &p.body), &p.sig) {
            return false;
        }
        match &p.body {
            Body::Ok { val, proof } => self.validate_batch(
                &p.inst,
                Step::Echo(val.clone()),
                &Body::Echo { val: val.clone() },
                &proof.certs,
            ),
            // A first-phase sender can reveal or withhold its coin value but
            // never substitute another: the proof must verify as its own VRF
            // on this instance's value input.
            Body::First { vrf_proof } => crypto::vrf_verify(
                &self.reg,
                p.seat.process_id,
                &wire::coin_value_input(&p.inst),
                vrf_proof,
            )
            .is_some(),
            Body::Second { origin, origin_vrf_proof, origin_seat } => {
                if origin_seat.process_id != *origin {
                    return false;
                }
                let first_tag = wire::committee_tag(&p.inst, &Step::First);
                let eff_first = self.realize(&first_tag).eff_tag.clone();
                origin_seat.tag[..] == eff_first[..]
                    && crypto::committee_val(
                        &self.reg,
                        &eff_first,
                        self.prms.lambda,
                        *origin,
                        origin_seat,
                    )
                    && crypto::vrf_verify(
                        &self.reg,
                        *origin,
                        &wire::coin_value_input(&p.inst),
                        origin_vrf_proof,
                    )
                    .is_some()
            }
            // The certificate inside a converge is checked separately (see
            // `qc_valid`): a converge with a bad certificate still counts as
            // a vote, just not as content.
            _ => true,
        }
    }

    /// Checks a batch of W member certificates: distinct signers, each with a
    /// valid seat on the certificate step's committee and a valid signature
    /// over the reconstructed certificate body.
    fn validate_batch(
        &mut self,
        inst: &InstanceId,
        cert_step: Step,
        cert_body: &Body,
        certs: &[wire::MemberCert],
    ) -> bool {
        if certs.len() != self.prms.w as usize {
            return false;
        }
        let sd = wire::signable_digest(inst, cert_body);
        let logical = wire::committee_tag(inst, &cert_step);
        let eff = self.realize(&logical).eff_tag.clone();
        let mut seen = PidSet::new(self.n());
        certs.iter().all(|c| {
            c.pid == c.seat.process_id
                && c.pid == c.sig.signer
                && seen.insert(c.pid)
                && c.seat.tag[..] == eff[..]
                && crypto::committee_val(&self.reg, &eff, self.prms.lambda, c.pid, &c.seat)
                && crypto::verify(&self.reg, sd, &c.sig)
        })
    }

    /// Certificate check for a converge payload, memoized. Also watches for
    /// two valid certificates certifying different values in one instance,
    /// which would be a safety break of the init quorum intersection.
    fn qc_valid(&mut self, p: &Payload) -> bool {
        let Body::Converge { qc: Some(qc) } = &p.body else {
            return false;
        };
        let key = cache_key(&p.id);
        if let Some(&ok) = self.qc_ok.get(&key) {
            return ok;
        }
        let ok = self.validate_batch(
            &p.inst,
            Step::Init,
            &Body::Init { val: qc.val.clone() },
            &qc.certs,
        );
        self.qc_ok.insert(key, ok);
        if ok {
            match self.qc_value.get(&p.inst) {
                None => {
                    self.qc_value.insert(p.inst.clone(), qc.val.clone());
                }
                Some(v) if *v != qc.val => {
                    self.metrics.violations.qc_conflict += 1;
                }
                _ => {}
            }
        }
        ok
    }

    /// Oldest live envelope whose wait exceeds the staleness bound, skipping
    /// entries already delivered or addressed to corrupted processes.
    fn pick_stale(&mut self) -> Option<EnvId> {
        while let Some(&id) = self.fifo.front() {
            let Some(env) = self.pool.get(id) else {
                self.fifo.pop_front();
                continue;
            };
            if self.corrupted[env.to as usize] {
                self.fifo.pop_front();
                continue;
            }
            if self.step.saturating_sub(env.send_step) >= self.staleness_bound {
                self.fifo.pop_front();
                return Some(id);
            }
            return None;
        }
        None
    }

    fn corrupt(&mut self, pid: u32) -> Result<bool, AdvError> {
        if self.corrupted[pid as usize] {
            return Ok(false);
        }
        if self.corrupted_count >= self.prms.f {
            return Err(AdvError::BudgetExceeded);
        }
        self.corrupted[pid as usize] = true;
        self.corrupted_count += 1;
        self.metrics.corruptions += 1;
        let ev = TraceEvent {
            step: self.step,
            kind: "corrupt",
            from: None,
            to: Some(pid),
            digest: None,
            note: None,
        };
        self.trace(ev);
        Ok(true)
    }

    fn meta_of(&self, id: EnvId) -> Option<EnvMeta> {
        self.pool.get(id).map(|env| EnvMeta {
            id,
            from: env.sender(),
            to: env.to,
            send_step: env.send_step,
            kind: env.payload.body.kind(),
            inst: env.payload.inst.clone(),
            digest: env.payload.id,
        })
    }

    /// Entry point for adversary sends: the envelope carries the injected
    /// marker so payload visibility can distinguish traffic sent while
    /// corrupted from traffic sent while still correct.
    fn enqueue_injected(&mut self, from: u32, to: u32, payload: Arc<Payload>) -> EnvId {
        let env = Envelope { from: from | INJECTED_BIT, to, send_step: self.step, payload };
        let meta_payload = env.payload.clone();
        let id = self.pool.insert(env);
        self.fifo.push_back(id);
        self.metrics.sends += 1;
        self.fresh.push_back(EnvMeta {
            id,
            from,
            to,
            send_step: self.step,
            kind: meta_payload.body.kind(),
            inst: meta_payload.inst.clone(),
            digest: meta_payload.id,
        });
        id
    }
}

/// A correct process's handle on the world: committee election for its own
/// sends, broadcasting, certificate checks, and instrumentation hooks.
pub struct Ctx<'w> {
    w: &'w mut World,
    pid: u32,
}

impl Ctx<'_> {
    pub fn pid(&self) -> u32 {
        self.pid
    }

    pub fn params(&self) -> &SystemParams {
        &self.w.prms
    }

    /// Election check for this process on (inst, step). `Some` carries the
    /// seat proof to attach to a payload for that step.
    pub fn try_seat(&mut self, inst: &InstanceId, step: &Step) -> Option<CommitteeProof> {
        self.w.seat_for(self.pid, inst, step)
    }

    /// Signs and broadcasts a payload to all n processes (self included).
    pub fn broadcast(&mut self, inst: &InstanceId, body: Body, seat: CommitteeProof) {
        let sd = wire::signable_digest(inst, &body);
        let sig = crypto::sign(self.w.reg.key(self.pid), sd);
        let payload = Arc::new(Payload::new(inst.clone(), body, seat, sig));
        self.w.broadcast_correct(self.pid, payload);
    }

    /// This process's VRF output on an arbitrary input (the coin's first
    /// phase value).
    pub fn vrf(&self, input: &[u8]) -> VrfOutput {
        crypto::vrf_eval(self.w.reg.key(self.pid), input)
    }

    /// Whether a converge payload carries a valid quorum certificate.
    pub fn qc_valid(&mut self, p: &Payload) -> bool {
        self.w.qc_valid(p)
    }

    /// Records this process's coin output for an instance.
    pub fn coin_output(&mut self, inst: &InstanceId, bit: bool) {
        let track = self.w.coin_tracks.entry(inst.clone()).or_default();
        track.outputs.push((self.pid, bit));
    }

    /// Records a graded-agreement failure seen by a caller: a return set
    /// carrying two distinct non-bottom values where the input discipline
    /// promised at most one. The run is marked compromised; downstream
    /// statistics exclude it rather than average over broken runs.
    pub fn flag_graded_failure(&mut self) {
        self.w.metrics.violations.approver_multi_value += 1;
        self.w.metrics.safety_compromised = true;
    }

    /// Records the first-W (origin, value) receipts backing this process's
    /// second-phase relay. Snapshot time is send time, so entries here are
    /// from senders that were correct when they relayed.
    pub fn coin_second_snapshot(&mut self, inst: &InstanceId, seen: Vec<(u32, Digest)>) {
        let pid = self.pid;
        let track = self.w.coin_tracks.entry(inst.clone()).or_default();
        track.snapshots.push((pid, seen));
    }
}

/// The adversary's handle on the world. Everything a strategy can observe or
/// do goes through here; in particular payload contents are only revealed for
/// traffic the adversary legitimately controls or receives.
pub struct Adv<'w> {
    w: &'w mut World,
}

impl Adv<'_> {
    pub fn params(&self) -> &SystemParams {
        &self.w.prms
    }

    pub fn n(&self) -> u32 {
        self.w.n()
    }

    pub fn step(&self) -> u64 {
        self.w.step
    }

    pub fn is_corrupted(&self, pid: u32) -> bool {
        self.w.is_corrupted(pid)
    }

    pub fn budget_left(&self) -> u32 {
        self.w.prms.f - self.w.corrupted_count
    }

    /// Corrupts a process, if the budget allows. From this moment the
    /// process's machine is frozen, its key is usable via `byz_*`, and its
    /// incoming traffic is handed to the strategy. Messages it already sent
    /// stay in the network untouched.
    pub fn corrupt(&mut self, pid: u32) -> Result<bool, AdvError> {
        self.w.corrupt(pid)
    }

    pub fn pending_len(&self) -> usize {
        self.w.pool.len()
    }

    pub fn meta(&self, id: EnvId) -> Option<EnvMeta> {
        self.w.meta_of(id)
    }

    /// Payload contents of a pending envelope. Visible only when the sender
    /// was corrupted at send time (the envelope carries the injected marker)
    /// or the recipient is corrupted now. Corrupting a sender later does not
    /// expose traffic it sent while correct: the scheduler must stay
    /// content-oblivious for correct-to-correct messages, which is what the
    /// coin's agreement bound is proved against.
    pub fn payload(&self, id: EnvId) -> Option<Arc<Payload>> {
        let env = self.w.pool.get(id)?;
        if env.injected() || self.w.is_corrupted(env.to) {
            Some(env.payload.clone())
        } else {
            None
        }
    }

    /// The adversary's own deterministic randomness stream.
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.w.rng_adv
    }

    /// Builds a signed payload on behalf of a corrupted process, if that
    /// process holds a seat on the step's committee. Returns `None` when the
    /// election was lost; committee membership cannot be forged.
    pub fn byz_build(
        &mut self,
        pid: u32,
        inst: &InstanceId,
        body: Body,
    ) -> Result<Option<Arc<Payload>>, AdvError> {
        if !self.w.is_corrupted(pid) {
            return Err(AdvError::NotCorrupted);
        }
        let Some(seat) = self.w.seat_for(pid, inst, &body.step()) else {
            return Ok(None);
        };
        let sd = wire::signable_digest(inst, &body);
        let sig = crypto::sign(self.w.reg.key(pid), sd);
        Ok(Some(Arc::new(Payload::new(inst.clone(), body, seat, sig))))
    }

    /// Sends an arbitrary payload from a corrupted process to one recipient.
    /// Refuses to originate traffic from correct processes: the network
    /// authenticates the transport sender.
    pub fn byz_send(&mut self, from: u32, to: u32, payload: Arc<Payload>) -> Result<EnvId, AdvError> {
        if !self.w.is_corrupted(from) {
            return Err(AdvError::Forgery);
        }
        assert!(to < self.w.n(), "recipient out of range");
        self.w.metrics.injected += 1;
        let ev = TraceEvent {
            step: self.w.step,
            kind: "inject",
            from: Some(from),
            to: Some(to),
            digest: World::trace_digest(&payload.id),
            note: None,
        };
        self.w.trace(ev);
        Ok(self.w.enqueue_injected(from, to, payload))
    }

    /// Broadcast variant of [`Adv::byz_send`].
    pub fn byz_broadcast(&mut self, from: u32, payload: Arc<Payload>) -> Result<(), AdvError> {
        for to in 0..self.w.n() {
            self.byz_send(from, to, payload.clone())?;
        }
        Ok(())
    }

    /// Seat lookup for a corrupted process (e.g. to learn whether it can
    /// speak on a committee before building a payload).
    pub fn byz_seat(
        &mut self,
        pid: u32,
        inst: &InstanceId,
        step: &Step,
    ) -> Result<Option<CommitteeProof>, AdvError> {
        if !self.w.is_corrupted(pid) {
            return Err(AdvError::NotCorrupted);
        }
        Ok(self.w.seat_for(pid, inst, step))
    }

    /// The VRF output of a corrupted process on an input (lets the adversary
    /// inspect its own coin values).
    pub fn byz_vrf(&mut self, pid: u32, input: &[u8]) -> Result<VrfOutput, AdvError> {
        if !self.w.is_corrupted(pid) {
            return Err(AdvError::NotCorrupted);
        }
        Ok(crypto::vrf_eval(self.w.reg.key(pid), input))
    }
}

/// Scheduling and corruption strategy. The default implementations are a
/// passive adversary: uniform random scheduling, no corruption.
pub trait Strategy {
    fn name(&self) -> &'static str;

    /// Called once before any process starts.
    fn on_run_start(&mut self, _adv: &mut Adv) {}

    /// Called for every envelope entering the network, in send order.
    fn on_send(&mut self, _adv: &mut Adv, _meta: &EnvMeta) {}

    /// Called when an envelope is delivered to a corrupted process; the
    /// payload is the adversary's to use.
    fn on_deliver_byz(&mut self, _adv: &mut Adv, _meta: &EnvMeta, _payload: &Arc<Payload>) {}

    /// Picks the next envelope to deliver. `None`, or a stale handle, falls
    /// back to the seeded uniform pick. The staleness bound overrides this
    /// choice when an envelope has waited too long.
    fn pick(&mut self, _adv: &mut Adv) -> Option<EnvId> {
        None
    }
}

/// The passive strategy under its own name.
pub struct Passive;

impl Strategy for Passive {
    fn name(&self) -> &'static str {
        "none"
    }
}

/// A protocol machine driven by the world: started once, fed validated
/// payloads, reporting completion, its current round, and its final outcome.
pub trait Process {
    fn on_start(&mut self, ctx: &mut Ctx);
    fn on_payload(&mut self, ctx: &mut Ctx, from: u32, payload: &Arc<Payload>);
    /// Protocol-complete for halting purposes (has an output / has decided).
    fn done(&self) -> bool;
    /// Current round for round-capped protocols; 0 where rounds don't apply.
    fn round(&self) -> u32 {
        0
    }
    fn outcome(&self) -> Option<Outcome>;
}

fn drain_fresh(world: &mut World, strategy: &mut dyn Strategy) {
    while let Some(meta) = world.fresh.pop_front() {
        strategy.on_send(&mut Adv { w: world }, &meta);
    }
}

fn all_correct_done(world: &World) -> bool {
    (0..world.n() as usize).all(|p| world.corrupted[p] || world.done[p])
}

fn min_correct_round(world: &World) -> u32 {
    (0..world.n() as usize)
        .filter(|&p| !world.corrupted[p])
        .map(|p| world.rounds[p])
        .min()
        .unwrap_or(0)
}

fn max_correct_round(world: &World) -> u32 {
    (0..world.n() as usize)
        .filter(|&p| !world.corrupted[p])
        .map(|p| world.rounds[p])
        .max()
        .unwrap_or(0)
}

/// Runs one protocol execution: builds the world and one machine per process
/// from `factory`, lets `strategy` schedule deliveries, and returns the trace.
pub fn run_with(
    cfg: &RunConfig,
    mut factory: impl FnMut(u32, &Val) -> Box<dyn Process>,
    strategy: &mut dyn Strategy,
) -> Result<RunTrace, RunError> {
    let n = cfg.params.n;
    match cfg.protocol {
        ProtocolKind::Coin => {}
        _ => {
            if cfg.inputs.len() != n as usize {
                return Err(RunError::BadInputs(format!(
                    "expected {} inputs, got {}",
                    n,
                    cfg.inputs.len()
                )));
            }
            if cfg.protocol == ProtocolKind::Binary
                && cfg.inputs.iter().any(|v| v.as_bit().is_none())
            {
                return Err(RunError::BadInputs("binary inputs must be bits".into()));
            }
        }
    }
    if cfg.round_cap == 0 {
        return Err(RunError::BadInputs("round cap must be at least 1".into()));
    }

    let mut world = World::new(cfg);
    let bottom = Val::Bottom;
    let mut procs: Vec<Box<dyn Process>> = (0..n)
        .map(|pid| factory(pid, cfg.inputs.get(pid as usize).unwrap_or(&bottom)))
        .collect();

    strategy.on_run_start(&mut Adv { w: &mut world });
    drain_fresh(&mut world, strategy);

    for pid in 0..n {
        if !world.is_corrupted(pid) {
            procs[pid as usize].on_start(&mut Ctx { w: &mut world, pid });
            drain_fresh(&mut world, strategy);
        }
    }

    // Snapshot of the highest correct round when everyone had decided; the
    // run continues until every correct process has moved extra_rounds past
    // it (binary harness keeps decided processes participating).
    let mut extra_target: Option<u32> = None;
    let mut halted_by_cap = false;
    let mut check_halt = true;

    loop {
        if let Some(err) = world.conditioning_failure.take() {
            return Err(err);
        }
        if check_halt {
            check_halt = false;
            if all_correct_done(&world) {
                match extra_target {
                    None if cfg.extra_rounds == 0 => break,
                    None => extra_target = Some(max_correct_round(&world) + cfg.extra_rounds),
                    Some(_) => {}
                }
            }
            if let Some(t) = extra_target {
                if min_correct_round(&world) >= t {
                    break;
                }
            }
        }
        if world.pool.len() == 0 {
            break;
        }
        world.step += 1;
        if world.step.is_multiple_of(256) {
            check_halt = true;
        }

        let forced = world.pick_stale();
        let id = match forced {
            Some(id) => {
                world.metrics.forced_deliveries += 1;
                id
            }
            None => match strategy.pick(&mut Adv { w: &mut world }) {
                Some(id) if world.pool.get(id).is_some() => id,
                _ => world.pool.random(&mut world.rng_sched),
            },
        };
        let env = world.pool.remove(id).expect("picked envelope is live");
        world.metrics.deliveries += 1;
        let (to, sender) = (env.to, env.sender());
        let ev = TraceEvent {
            step: world.step,
            kind: "deliver",
            from: Some(sender),
            to: Some(to),
            digest: World::trace_digest(&env.payload.id),
            note: forced.map(|_| "stale".to_string()),
        };
        world.trace(ev);

        if world.is_corrupted(to) {
            let meta = EnvMeta {
                id,
                from: sender,
                to,
                send_step: env.send_step,
                kind: env.payload.body.kind(),
                inst: env.payload.inst.clone(),
                digest: env.payload.id,
            };
            strategy.on_deliver_byz(&mut Adv { w: &mut world }, &meta, &env.payload);
            drain_fresh(&mut world, strategy);
            continue;
        }

        if !world.validate(&env) {
            world.metrics.dropped_invalid += 1;
            let ev = TraceEvent {
                step: world.step,
                kind: "drop",
                from: Some(sender),
                to: Some(to),
                digest: World::trace_digest(&env.payload.id),
                note: None,
            };
            world.trace(ev);
            continue;
        }

        procs[to as usize].on_payload(&mut Ctx { w: &mut world, pid: to }, sender, &env.payload);
        drain_fresh(&mut world, strategy);

        let p = &procs[to as usize];
        if p.done() && !world.done[to as usize] {
            world.done[to as usize] = true;
            check_halt = true;
            let note = p.outcome().map(|o| o.label());
            let ev = TraceEvent {
                step: world.step,
                kind: "decide",
                from: None,
                to: Some(to),
                digest: None,
                note,
            };
            world.trace(ev);
        }
        let r = p.round();
        if r != world.rounds[to as usize] {
            world.rounds[to as usize] = r;
            check_halt = true;
            if r > cfg.round_cap {
                halted_by_cap = true;
                break;
            }
        }
    }

    if let Some(err) = world.conditioning_failure.take() {
        return Err(err);
    }

    finalize(cfg, world, &procs, halted_by_cap)
}

fn finalize(
    cfg: &RunConfig,
    mut world: World,
    procs: &[Box<dyn Process>],
    halted_by_cap: bool,
) -> Result<RunTrace, RunError> {
    let n = cfg.params.n;
    let outcomes: Vec<ProcessOutcome> = (0..n)
        .map(|pid| ProcessOutcome {
            pid,
            corrupted: world.is_corrupted(pid),
            outcome: procs[pid as usize].outcome(),
        })
        .collect();

    // Coin instances: reconstruct v_min from the realized first committee and
    // judge commonness from the second-phase snapshots.
    let mut tracks: Vec<(InstanceId, CoinTrack)> = world.coin_tracks.drain().collect();
    tracks.sort_by(|a, b| a.0.bytes().cmp(b.0.bytes()));
    for (inst, track) in tracks {
        let first_tag = wire::committee_tag(&inst, &Step::First);
        let Some(info) = world.committees.get(&first_tag) else {
            continue;
        };
        let input = wire::coin_value_input(&inst);
        let mut v_min: Option<(Digest, u32)> = None;
        for pid in info.members.iter() {
            let value = crypto::vrf_eval(world.reg.key(pid), &input).value;
            let better = match &v_min {
                None => true,
                Some((best, origin)) => value < *best || (value == *best && pid < *origin),
            };
            if better {
                v_min = Some((value, pid));
            }
        }
        let Some((v_min, v_min_origin)) = v_min else {
            continue;
        };
        let mut counts: HashMap<(u32, Digest), u32> = HashMap::new();
        for (_, seen) in &track.snapshots {
            for &(origin, value) in seen {
                *counts.entry((origin, value)).or_insert(0) += 1;
            }
        }
        let threshold = cfg.params.b + 1;
        let common_values = counts.values().filter(|&&c| c >= threshold).count() as u32;
        let v_min_common = counts.get(&(v_min_origin, v_min)).copied().unwrap_or(0) >= threshold;
        let v_min_lsb = v_min[31] & 1 == 1;
        let ones = track.outputs.iter().filter(|&&(_, b)| b).count() as u32;
        let outputs = track.outputs.len() as u32;
        let all_agree = if outputs > 0 && (ones == 0 || ones == outputs) {
            Some(ones > 0)
        } else {
            None
        };
        // The overlap argument needs W + B + 1 to exceed the realized second
        // committee; a faithful-mode committee can outgrow that, and then a
        // caller may legitimately draw W relays that all miss v_min.
        let second_tag = wire::committee_tag(&inst, &Step::Second);
        let overlap_guaranteed = world
            .committees
            .get(&second_tag)
            .is_some_and(|c| c.members.len() <= cfg.params.w + cfg.params.b);
        let v_min_mismatch = overlap_guaranteed
            && v_min_common
            && track.outputs.iter().any(|&(_, b)| b != v_min_lsb);
        if v_min_mismatch {
            world.metrics.violations.coin_v_min += 1;
        }
        world.metrics.coin_records.push(CoinRecord {
            round: inst.round,
            outputs,
            ones,
            all_agree,
            v_min_common,
            v_min_lsb,
            common_values,
            common_bound: params::common_value_bound(cfg.params.d, cfg.params.lambda),
            overlap_guaranteed,
            v_min_mismatch,
        });
    }

    let correct: Vec<&ProcessOutcome> = outcomes.iter().filter(|o| !o.corrupted).collect();
    let v = &mut world.metrics.violations;
    for o in &correct {
        if o.outcome.is_none() {
            v.termination += 1;
        }
    }

    match cfg.protocol {
        ProtocolKind::Approver => {
            let inputs: Vec<&Val> = correct.iter().map(|o| &cfg.inputs[o.pid as usize]).collect();
            let unanimous = inputs.windows(2).all(|w| w[0] == w[1]);
            // Multi-value returns are legitimate graded behavior here; the
            // two-non-⊥ alarm belongs to binary agreement's second call,
            // where the input discipline promises at most one non-⊥ value.
            let mut singletons: Vec<&Val> = Vec::new();
            for o in &correct {
                let Some(Outcome::ApproverSet(set)) = &o.outcome else { continue };
                if set.len() == 1 && !set[0].is_bottom() {
                    singletons.push(&set[0]);
                }
                if unanimous && !inputs.is_empty() {
                    let want = vec![inputs[0].clone()];
                    if *set != want {
                        v.approver_validity += 1;
                    }
                }
            }
            singletons.sort();
            singletons.dedup();
            if singletons.len() > 1 {
                v.approver_graded += 1;
            }
        }
        ProtocolKind::Coin => {}
        ProtocolKind::Binary => {
            let mut bits = Vec::new();
            for o in &correct {
                if let Some(Outcome::BinaryDecide { bit, round }) = &o.outcome {
                    bits.push(*bit);
                    world.metrics.decide_rounds.push(*round);
                }
            }
            let inputs: Vec<bool> =
                correct.iter().filter_map(|o| cfg.inputs[o.pid as usize].as_bit()).collect();
            if !bits.is_empty() && bits.iter().any(|&b| b != bits[0]) {
                v.agreement += 1;
            }
            if inputs.len() == correct.len()
                && !inputs.is_empty()
                && inputs.iter().all(|&b| b == inputs[0])
                && bits.iter().any(|&b| b != inputs[0])
            {
                v.validity += 1;
            }
        }
        ProtocolKind::Multivalued => {
            let mut decided: Vec<&Val> = Vec::new();
            for o in &correct {
                if let Some(Outcome::MvDecide(val)) = &o.outcome {
                    decided.push(val);
                }
            }
            if !decided.is_empty() && decided.iter().any(|&d| d != decided[0]) {
                v.agreement += 1;
            }
            // With zero corruptions and unanimous inputs the only legal
            // decision is the common input.
            if world.metrics.corruptions == 0 {
                let inputs: Vec<&Val> =
                    correct.iter().map(|o| &cfg.inputs[o.pid as usize]).collect();
                if !inputs.is_empty()
                    && inputs.windows(2).all(|w| w[0] == w[1])
                    && decided.iter().any(|&d| d != inputs[0])
                {
                    v.validity += 1;
                }
            }
        }
    }

    let blocked = correct.iter().any(|o| o.outcome.is_none());
    let blocked_reason = if !blocked {
        None
    } else if halted_by_cap {
        Some("round-cap".to_string())
    } else {
        Some("queue-drained".to_string())
    };
    if blocked {
        let note = blocked_reason.clone();
        let ev = TraceEvent {
            step: world.step,
            kind: "halt",
            from: None,
            to: None,
            digest: None,
            note,
        };
        world.trace(ev);
    } else {
        let ev = TraceEvent {
            step: world.step,
            kind: "halt",
            from: None,
            to: None,
            digest: None,
            note: Some("done".to_string()),
        };
        world.trace(ev);
    }

    world.metrics.steps = world.step;
    world.metrics.outcomes = outcomes;
    Ok(RunTrace {
        events: std::mem::take(&mut world.events),
        decisions: decision_records(&world.metrics.outcomes),
        metrics: world.metrics,
        blocked,
        blocked_reason,
    })
}
