//! Committee-sampled asynchronous Byzantine agreement.
//!
//! This crate implements a full protocol stack for Byzantine agreement with
//! subquadratic word complexity, together with a deterministic discrete-event
//! simulator for exercising it against adaptive adversaries:
//!
//! - [`params`]: system constants (committee size λ, thresholds W and B,
//!   resilience f) and the closed-form analytic bounds they must satisfy.
//! - [`crypto`]: simulation-grade signatures and VRFs, and validated committee
//!   sampling built on them.
//! - [`wire`]: message bodies, instance identifiers, committee tags, and the
//!   word-cost table used for communication accounting.
//! - [`netsim`]: the event-driven network simulator. The adversary schedules
//!   every message delivery and may corrupt processes mid-run, but cannot
//!   retract messages already sent.
//! - [`approver`]: a one-shot primitive giving graded agreement on a small
//!   value domain; the building block of the binary protocol.
//! - [`coin`]: a shared coin with constant success rate, computed from VRF
//!   minima relayed through two sampled committees.
//! - [`binary`]: binary Byzantine agreement built from two approver calls and
//!   a coin flip per round.
//! - [`mv`]: the multivalued reduction; one approver-style exchange plus one
//!   embedded binary agreement on an alert bit.
//! - [`adversary`]: built-in attack strategies and benign schedulers.
//! - [`metrics`]: per-run accounting (words, rounds, committee statistics,
//!   safety checks) and cross-run aggregation.
//!
//! Everything is deterministic given a run seed: repeating a run reproduces
//! its trace byte for byte.

pub mod adversary;
pub mod approver;
pub mod binary;
pub mod coin;
pub mod crypto;
pub mod metrics;
pub mod mv;
pub mod netsim;
pub mod params;
pub mod wire;
