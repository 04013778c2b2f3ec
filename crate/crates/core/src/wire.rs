//! Wire-level message types and their canonical byte encodings.
//!
//! Messages never cross a real network in the simulator; the canonical
//! encoding exists so that signatures, payload digests, trace lines, and the
//! word-complexity accounting all agree on one bit-exact representation.
//! Golden-vector tests pin the layouts.
//!
//! Naming: an *instance* is one running protocol incarnation (one approver
//! call, one coin round, one binary agreement, one multivalued agreement).
//! Committee tags extend the instance tag with a step label and, for
//! per-value echo committees, the value itself.

use std::fmt;
use std::sync::Arc;

use crate::crypto::{self, CommitteeProof, Digest, Signature};

/// A protocol value: either opaque bytes or the reserved out-of-domain
/// sentinel ⊥. ⊥ is never a legal protocol input; it exists so the approver
/// can carry "no proposal" and the multivalued protocol can decide "no value".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Val {
    Bottom,
    Data(Arc<[u8]>),
}

impl Val {
    pub fn bit(b: bool) -> Val {
        Val::Data(Arc::from(if b { [1u8].as_slice() } else { [0u8].as_slice() }))
    }

    pub fn bytes(b: &[u8]) -> Val {
        Val::Data(Arc::from(b))
    }

    pub fn as_bit(&self) -> Option<bool> {
        match self {
            Val::Data(d) if d.len() == 1 && d[0] <= 1 => Some(d[0] == 1),
            _ => None,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Val::Bottom)
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Val::Bottom => out.push(0),
            Val::Data(d) => {
                out.push(1);
                out.extend_from_slice(&(d.len() as u32).to_le_bytes());
                out.extend_from_slice(d);
            }
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Bottom => write!(f, "⊥"),
            Val::Data(d) => {
                for b in d.iter() {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    }
}

/// Which protocol an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proto {
    Approver,
    Coin,
    Binary,
    Mv,
}

impl Proto {
    fn label(self) -> &'static [u8] {
        match self {
            Proto::Approver => b"approver",
            Proto::Coin => b"coin",
            Proto::Binary => b"binary",
            Proto::Mv => b"mv",
        }
    }
}

fn push_part(out: &mut Vec<u8>, part: &[u8]) {
    out.extend_from_slice(&(part.len() as u32).to_le_bytes());
    out.extend_from_slice(part);
}

/// Identifies one protocol instance. `base` is the caller-chosen label for
/// top-level instances, or the parent instance's tag bytes for nested ones
/// (the binary agreement inside the multivalued protocol, the approver calls
/// and coin rounds inside a binary agreement).
#[derive(Debug, Clone)]
pub struct InstanceId {
    pub proto: Proto,
    pub base: Arc<[u8]>,
    pub round: u32,
    /// Sub-instance discriminator: approver call 1 or 2 within a round.
    pub sub: u8,
    bytes: Arc<[u8]>,
}

impl InstanceId {
    pub fn new(proto: Proto, base: Arc<[u8]>, round: u32, sub: u8) -> InstanceId {
        let mut bytes = Vec::with_capacity(base.len() + 32);
        push_part(&mut bytes, b"inst");
        push_part(&mut bytes, proto.label());
        push_part(&mut bytes, &base);
        push_part(&mut bytes, &round.to_le_bytes());
        push_part(&mut bytes, &[sub]);
        InstanceId { proto, base, round, sub, bytes: bytes.into() }
    }

    /// Canonical tag bytes for this instance; unique by construction.
    pub fn bytes(&self) -> &Arc<[u8]> {
        &self.bytes
    }
}

impl PartialEq for InstanceId {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}
impl Eq for InstanceId {}
impl std::hash::Hash for InstanceId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bytes.hash(state);
    }
}

/// A committee step within an instance. Echo committees are per-value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Init,
    Echo(Val),
    OkStep,
    First,
    Second,
    Converge,
}

impl Step {
    fn label(&self) -> &'static [u8] {
        match self {
            Step::Init => b"init",
            Step::Echo(_) => b"echo",
            Step::OkStep => b"ok",
            Step::First => b"first",
            Step::Second => b"second",
            Step::Converge => b"converge",
        }
    }
}

/// Canonical committee tag: instance tag extended by the step label and, for
/// echo committees, the value. This is the string committee sampling is
/// evaluated on.
pub fn committee_tag(inst: &InstanceId, step: &Step) -> Vec<u8> {
    let mut t = Vec::with_capacity(inst.bytes().len() + 24);
    t.extend_from_slice(inst.bytes());
    push_part(&mut t, step.label());
    if let Step::Echo(v) = step {
        let mut vb = Vec::new();
        v.encode(&mut vb);
        push_part(&mut t, &vb);
    }
    t
}

/// VRF input for a coin round's random value (distinct from the committee
/// election tags of the same round).
pub fn coin_value_input(inst: &InstanceId) -> Vec<u8> {
    let mut t = Vec::with_capacity(inst.bytes().len() + 12);
    t.extend_from_slice(inst.bytes());
    push_part(&mut t, b"coin-val");
    t
}

/// One member's signed contribution to a batch certificate: an echo batched
/// into an OK proof, or an init batched into a quorum certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberCert {
    pub pid: u32,
    pub seat: CommitteeProof,
    pub sig: Signature,
}

fn encode_seat(out: &mut Vec<u8>, seat: &CommitteeProof) {
    out.extend_from_slice(&seat.process_id.to_le_bytes());
    push_part(out, &seat.tag);
    out.extend_from_slice(&seat.proof);
}

fn encode_sig(out: &mut Vec<u8>, sig: &Signature) {
    out.extend_from_slice(&sig.signer.to_le_bytes());
    out.extend_from_slice(&sig.payload_digest);
    out.extend_from_slice(&sig.tag);
}

fn encode_certs(out: &mut Vec<u8>, certs: &[MemberCert]) {
    out.extend_from_slice(&(certs.len() as u32).to_le_bytes());
    for c in certs {
        out.extend_from_slice(&c.pid.to_le_bytes());
        encode_seat(out, &c.seat);
        encode_sig(out, &c.sig);
    }
}

/// Batch of W distinct signed echoes justifying an OK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OkProof {
    pub certs: Vec<MemberCert>,
}

/// Quorum certificate: W distinct signed init messages for one value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qc {
    pub val: Val,
    pub certs: Vec<MemberCert>,
}

/// Message bodies. The sender's own committee seat and signature live in the
/// enclosing [`Payload`]; bodies hold only step-specific content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    /// Approver step 1 and the multivalued protocol's opening broadcast.
    Init { val: Val },
    /// Approver step 2, sent per value once B+1 inits for it arrived.
    Echo { val: Val },
    /// Approver step 3, justified by W echoes.
    Ok { val: Val, proof: OkProof },
    /// Coin phase 1: the sender's VRF value for this round, carried as its
    /// proof (the value is publicly derivable from the proof).
    First { vrf_proof: Digest },
    /// Coin phase 2: relays the minimum first-phase value seen, with full
    /// provenance (origin id, origin's VRF proof, origin's first-committee
    /// seat).
    Second { origin: u32, origin_vrf_proof: Digest, origin_seat: CommitteeProof },
    /// Multivalued converge vote. `Some(qc)` claims content (all W received
    /// init values were one value, certified by the QC); `None` claims
    /// non-content.
    Converge { qc: Option<Qc> },
}

impl Body {
    /// The committee this body's sender must hold a seat on.
    pub fn step(&self) -> Step {
        match self {
            Body::Init { .. } => Step::Init,
            Body::Echo { val } => Step::Echo(val.clone()),
            Body::Ok { .. } => Step::OkStep,
            Body::First { .. } => Step::First,
            Body::Second { .. } => Step::Second,
            Body::Converge { .. } => Step::Converge,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Body::Init { .. } => "init",
            Body::Echo { .. } => "echo",
            Body::Ok { .. } => "ok",
            Body::First { .. } => "first",
            Body::Second { .. } => "second",
            Body::Converge { qc: None } => "converge",
            Body::Converge { qc: Some(_) } => "converge-qc",
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Body::Init { val } => {
                out.push(0);
                val.encode(out);
            }
            Body::Echo { val } => {
                out.push(1);
                val.encode(out);
            }
            Body::Ok { val, proof } => {
                out.push(2);
                val.encode(out);
                encode_certs(out, &proof.certs);
            }
            Body::First { vrf_proof } => {
                out.push(3);
                out.extend_from_slice(vrf_proof);
            }
            Body::Second { origin, origin_vrf_proof, origin_seat } => {
                out.push(4);
                out.extend_from_slice(&origin.to_le_bytes());
                out.extend_from_slice(origin_vrf_proof);
                encode_seat(out, origin_seat);
            }
            Body::Converge { qc: None } => out.push(5),
            Body::Converge { qc: Some(qc) } => {
                out.push(6);
                qc.val.encode(out);
                encode_certs(out, &qc.certs);
            }
        }
    }
}

/// A complete wire message: instance routing, body, the sender's committee
/// seat for the body's step, and the sender's signature over (instance, body).
#[derive(Debug, Clone)]
pub struct Payload {
    pub inst: InstanceId,
    pub body: Body,
    pub seat: CommitteeProof,
    pub sig: Signature,
    /// Digest over the full encoded payload; trace identity and verification
    /// cache key.
    pub id: Digest,
}

/// Digest that the sender signs: instance and body only. Seats and signatures
/// stay outside so a batched certificate can be checked against a
/// reconstructed body (see [`signable_digest`] callers in verification).
pub fn signable_digest(inst: &InstanceId, body: &Body) -> Digest {
    let mut buf = Vec::with_capacity(96);
    push_part(&mut buf, inst.bytes());
    body.encode(&mut buf);
    crypto::digest_parts(&[b"body", &buf])
}

/// Full payload identity, covering seat and signature as well.
fn payload_id(inst: &InstanceId, body: &Body, seat: &CommitteeProof, sig: &Signature) -> Digest {
    let mut buf = Vec::with_capacity(192);
    push_part(&mut buf, inst.bytes());
    body.encode(&mut buf);
    encode_seat(&mut buf, seat);
    encode_sig(&mut buf, sig);
    crypto::digest_parts(&[b"payload-id", &buf])
}

impl Payload {
    pub fn new(inst: InstanceId, body: Body, seat: CommitteeProof, sig: Signature) -> Payload {
        let id = payload_id(&inst, &body, &seat, &sig);
        Payload { inst, body, seat, sig, id }
    }
}

/// Word-complexity cost of one message, per the accounting rules used
/// throughout: every bounded-domain value, signature, committee or VRF proof
/// counts one word; a batch certificate of W member signatures counts W
/// words. The message header (sender seat + sender signature) is two words.
///
/// This table is the single place the per-message costs are defined.
pub fn word_cost(body: &Body, w: u32) -> u64 {
    let header = 2u64;
    let body_words = match body {
        // value
        Body::Init { .. } | Body::Echo { .. } => 1,
        // value + W-cert batch
        Body::Ok { .. } => 1 + w as u64,
        // VRF proof (the value is derived from it)
        Body::First { .. } => 1,
        // origin id + origin VRF proof + origin seat
        Body::Second { .. } => 3,
        // content flag
        Body::Converge { qc: None } => 1,
        // content flag + certified value + W-cert batch
        Body::Converge { qc: Some(_) } => 2 + w as u64,
    };
    header + body_words
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Registry;

    fn hex(d: &[u8]) -> String {
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    #[test]
    fn val_bit_round_trip() {
        assert_eq!(Val::bit(false).as_bit(), Some(false));
        assert_eq!(Val::bit(true).as_bit(), Some(true));
        assert_eq!(Val::Bottom.as_bit(), None);
        assert_eq!(Val::bytes(b"xy").as_bit(), None);
        assert!(Val::Bottom < Val::bit(false));
    }

    #[test]
    fn instance_tags_are_distinct_and_stable() {
        let base: Arc<[u8]> = Arc::from(b"run-1".as_slice());
        let a = InstanceId::new(Proto::Binary, base.clone(), 3, 1);
        let b = InstanceId::new(Proto::Binary, base.clone(), 3, 2);
        let c = InstanceId::new(Proto::Binary, base.clone(), 4, 1);
        let d = InstanceId::new(Proto::Coin, base.clone(), 3, 1);
        let tags: Vec<_> = [&a, &b, &c, &d].iter().map(|i| i.bytes().clone()).collect();
        for i in 0..tags.len() {
            for j in i + 1..tags.len() {
                assert_ne!(tags[i], tags[j]);
            }
        }
        let a2 = InstanceId::new(Proto::Binary, base, 3, 1);
        assert_eq!(a, a2);
    }

    #[test]
    fn committee_tags_separate_steps_and_values() {
        let inst = InstanceId::new(Proto::Approver, Arc::from(b"x".as_slice()), 0, 0);
        let t_init = committee_tag(&inst, &Step::Init);
        let t_ok = committee_tag(&inst, &Step::OkStep);
        let t_e0 = committee_tag(&inst, &Step::Echo(Val::bit(false)));
        let t_e1 = committee_tag(&inst, &Step::Echo(Val::bit(true)));
        let t_eb = committee_tag(&inst, &Step::Echo(Val::Bottom));
        let all = [&t_init, &t_ok, &t_e0, &t_e1, &t_eb];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    // Pins the payload byte layout end to end: a change to any encoding shows
    // up as a digest change here.
    #[test]
    fn golden_payload_digests() {
        let reg = Registry::new(4, 42);
        let inst = InstanceId::new(Proto::Approver, Arc::from(b"g".as_slice()), 0, 0);
        assert_eq!(
            hex(inst.bytes()),
            "04000000696e737408000000617070726f766572010000006704000000000000000100000000"
        );
        let body = Body::Init { val: Val::bit(true) };
        let sd = signable_digest(&inst, &body);
        let sig = crypto::sign(reg.key(0), sd);
        let ctag = committee_tag(&inst, &Step::Init);
        let (_, seat) = crypto::sample(reg.key(0), &ctag, 4.0, 4);
        let p = Payload::new(inst, body, seat, sig);
        assert_eq!(
            hex(&sd),
            "ab0d18fd2709c2b4be2dd82cfe46e22b1cc855d76d89a73da80853bd3861c9b0"
        );
        assert_eq!(
            hex(&p.id),
            "9eadf66e23842f2a3b7fdeb91e470b156190030781fb4d578e0dea0955ffa758"
        );
    }

    #[test]
    fn word_costs_per_kind() {
        let w = 37;
        assert_eq!(word_cost(&Body::Init { val: Val::bit(true) }, w), 3);
        assert_eq!(word_cost(&Body::Echo { val: Val::Bottom }, w), 3);
        assert_eq!(
            word_cost(&Body::Ok { val: Val::bit(true), proof: OkProof { certs: vec![] } }, w),
            3 + 37
        );
        assert_eq!(word_cost(&Body::First { vrf_proof: [0; 32] }, w), 3);
        assert_eq!(word_cost(&Body::Converge { qc: None }, w), 3);
    }
}
