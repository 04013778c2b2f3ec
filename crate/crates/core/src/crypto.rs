//! Simulation-grade signatures, VRFs, and validated committee sampling.
//!
//! Keyed SHA-256 stands in for real cryptography: a process's "secret key" is
//! a 32-byte seed, and every primitive is a domain-separated hash over it.
//! Verification re-derives the same hash through the seed registry held by
//! the verifier role. Nothing here is computationally hard — the adversary
//! model is enforced by interface visibility (strategies never see a correct
//! process's seed), which buys determinism and speed without changing any
//! protocol-visible behavior.
//!
//! Committee sampling follows the sortition scheme: for a committee named by
//! a canonical tag string, process i is elected iff the top bits of its VRF
//! value on that tag fall below λ/n of the value range. The VRF proof doubles
//! as the election proof, so any process can validate any other's membership
//! claim with `committee_val`.
//!
//! All byte layouts (length-prefixed parts under SHA-256) are pinned by
//! golden-vector tests; changing them breaks recorded traces.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
pub type Digest = [u8; DIGEST_LEN];

/// SHA-256 over length-prefixed parts. The length prefix (u32 LE per part)
/// makes the encoding injective, so distinct part lists never collide by
/// concatenation ambiguity.
pub fn digest_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Digest of a wire payload body. Domain-separated from every other hash use.
pub fn payload_digest(body: &[u8]) -> Digest {
    digest_parts(&[b"payload", body])
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub process_id: u32,
    pub secret_seed: Digest,
    pub public_id: Digest,
}

/// Per-run key material for all n processes. The registry is held by the
/// simulator's verifier role; adversary strategies only receive the seeds of
/// processes they have corrupted.
#[derive(Debug, Clone)]
pub struct Registry {
    keys: Vec<KeyPair>,
}

impl Registry {
    /// Derives n deterministic keypairs from a run seed.
    pub fn new(n: u32, run_seed: u64) -> Registry {
        let keys = (0..n)
            .map(|pid| {
                let secret_seed = digest_parts(&[
                    b"key-seed",
                    &run_seed.to_le_bytes(),
                    &pid.to_le_bytes(),
                ]);
                KeyPair {
                    process_id: pid,
                    secret_seed,
                    public_id: digest_parts(&[b"pub-id", &secret_seed]),
                }
            })
            .collect();
        Registry { keys }
    }

    pub fn n(&self) -> u32 {
        self.keys.len() as u32
    }

    pub fn key(&self, pid: u32) -> &KeyPair {
        &self.keys[pid as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer: u32,
    pub payload_digest: Digest,
    pub tag: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VrfOutput {
    /// 256-bit pseudorandom value, big-endian semantic range.
    pub value: Digest,
    pub proof: Digest,
}

/// Election proof: the VRF proof for the committee tag, bound to the claimed
/// process and tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeProof {
    pub process_id: u32,
    pub tag: Vec<u8>,
    pub proof: Digest,
}

pub fn sign(key: &KeyPair, payload_digest: Digest) -> Signature {
    Signature {
        signer: key.process_id,
        payload_digest,
        tag: digest_parts(&[b"sig", &key.secret_seed, &payload_digest]),
    }
}

/// True iff `sig` was produced by `signer`'s key over exactly `payload_digest`.
pub fn verify(reg: &Registry, payload_digest: Digest, sig: &Signature) -> bool {
    if sig.signer >= reg.n() || sig.payload_digest != payload_digest {
        return false;
    }
    let key = reg.key(sig.signer);
    sig.tag == digest_parts(&[b"sig", &key.secret_seed, &payload_digest])
}

pub fn vrf_eval(key: &KeyPair, input: &[u8]) -> VrfOutput {
    let proof = digest_parts(&[b"vrf-proof", &key.secret_seed, input]);
    VrfOutput { value: digest_parts(&[b"vrf-value", &proof]), proof }
}

/// Verifies a claimed VRF output for (pid, input) and returns the true value
/// if the proof is genuine. The value is recomputed from the proof, so a
/// valid proof can never be paired with a forged value.
pub fn vrf_verify(reg: &Registry, pid: u32, input: &[u8], proof: &Digest) -> Option<Digest> {
    if pid >= reg.n() {
        return None;
    }
    let expect = digest_parts(&[b"vrf-proof", &reg.key(pid).secret_seed, input]);
    if expect != *proof {
        return None;
    }
    Some(digest_parts(&[b"vrf-value", proof]))
}

/// The VRF value determined by a proof. Callers must have verified the proof
/// first (`vrf_verify`); this is the cheap re-derivation for when the binding
/// to (pid, input) is already established.
pub fn vrf_value_of(proof: &Digest) -> Digest {
    digest_parts(&[b"vrf-value", proof])
}

/// Election threshold on the top 128 bits of the VRF value. `None` means
/// "every value wins" (probability clamped to 1).
fn election_threshold(probability: f64) -> Option<u128> {
    if probability >= 1.0 {
        None
    } else if probability <= 0.0 {
        Some(0)
    } else {
        Some((probability * 2f64.powi(128)) as u128)
    }
}

fn value_high_bits(value: &Digest) -> u128 {
    u128::from_be_bytes(value[..16].try_into().unwrap())
}

/// Committee election for `key` on committee `tag`: elected with probability
/// λ/n, independently per (process, tag). The returned proof validates the
/// claim regardless of outcome.
pub fn sample(key: &KeyPair, tag: &[u8], lambda: f64, n: u32) -> (bool, CommitteeProof) {
    let vrf = vrf_eval(key, tag);
    let elected = match election_threshold(lambda / n as f64) {
        None => true,
        Some(t) => value_high_bits(&vrf.value) < t,
    };
    (
        elected,
        CommitteeProof { process_id: key.process_id, tag: tag.to_vec(), proof: vrf.proof },
    )
}

/// True iff `proof` is a genuine election proof showing `pid` won a seat on
/// the committee named `tag` with threshold λ/n. False on any tampering,
/// wrong tag, wrong process, or a genuine proof of a lost election.
pub fn committee_val(reg: &Registry, tag: &[u8], lambda: f64, pid: u32, proof: &CommitteeProof) -> bool {
    if proof.process_id != pid || proof.tag != tag {
        return false;
    }
    let Some(value) = vrf_verify(reg, pid, tag, &proof.proof) else {
        return false;
    };
    match election_threshold(lambda / reg.n() as f64) {
        None => true,
        Some(t) => value_high_bits(&value) < t,
    }
}
