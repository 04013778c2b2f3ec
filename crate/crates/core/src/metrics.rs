//! Per-run accounting and cross-run aggregation.
//!
//! A run produces one [`Metrics`] value: message and word counts, committee
//! statistics, coin instance records, per-process outcomes, and the safety /
//! liveness violation tallies the acceptance gates key on. Nothing in here
//! influences protocol behavior; it is observation only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::wire::Val;

/// Final protocol output of one process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Approver return value: the distinct values among the first W OKs.
    ApproverSet(Vec<Val>),
    CoinBit(bool),
    BinaryDecide { bit: bool, round: u32 },
    /// ⊥ is a legal decision here.
    MvDecide(Val),
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::ApproverSet(vs) => {
                let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                format!("{{{}}}", parts.join(","))
            }
            Outcome::CoinBit(b) => format!("coin:{}", *b as u8),
            Outcome::BinaryDecide { bit, round } => format!("decide:{}@r{round}", *bit as u8),
            Outcome::MvDecide(v) => format!("decide:{v}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessOutcome {
    pub pid: u32,
    pub corrupted: bool,
    pub outcome: Option<Outcome>,
}

/// Snapshot of one realized committee.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitteeRecord {
    pub size: u32,
    pub correct: u32,
    pub byzantine: u32,
    /// Conditioned mode: resamples before the constraints held.
    pub rejections: u32,
    /// Faithful mode: which of the size/correctness constraints failed.
    pub s1_ok: bool,
    pub s2_ok: bool,
    pub s3_ok: bool,
    pub s4_ok: bool,
}

/// Aggregated committee statistics for one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CommitteeStats {
    pub realized: u64,
    pub rejections_total: u64,
    pub size_sum: u64,
    pub size_min: u32,
    pub size_max: u32,
    pub correct_min: u32,
    pub byz_max: u32,
    pub s1_failures: u64,
    pub s2_failures: u64,
    pub s3_failures: u64,
    pub s4_failures: u64,
}

impl CommitteeStats {
    pub fn record(&mut self, r: &CommitteeRecord) {
        if self.realized == 0 {
            self.size_min = u32::MAX;
            self.correct_min = u32::MAX;
        }
        self.realized += 1;
        self.rejections_total += r.rejections as u64;
        self.size_sum += r.size as u64;
        self.size_min = self.size_min.min(r.size);
        self.size_max = self.size_max.max(r.size);
        self.correct_min = self.correct_min.min(r.correct);
        self.byz_max = self.byz_max.max(r.byzantine);
        self.s1_failures += !r.s1_ok as u64;
        self.s2_failures += !r.s2_ok as u64;
        self.s3_failures += !r.s3_ok as u64;
        self.s4_failures += !r.s4_ok as u64;
    }
}

/// One coin instance, observed across all correct participants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoinRecord {
    pub round: u32,
    /// Correct processes that produced an output for this instance.
    pub outputs: u32,
    pub ones: u32,
    /// Set when every correct output agreed on one bit.
    pub all_agree: Option<bool>,
    /// v_min (the minimum VRF value over the whole first committee) was
    /// received by at least B+1 correct second-committee members.
    pub v_min_common: bool,
    pub v_min_lsb: bool,
    /// Number of common values (received by ≥ B+1 correct second members).
    pub common_values: u32,
    /// Analytic lower bound on common values, d(11−3d)/(1+9d)·λ.
    pub common_bound: f64,
    /// The realized second committee was small enough (≤ W + B) that any W
    /// distinct relays must include a common value's holder. Conditioned
    /// sampling with validly derived parameters guarantees this; faithful
    /// mode can miss it, voiding the agreement argument for the instance.
    pub overlap_guaranteed: bool,
    /// Safety check: overlap was guaranteed and v_min common, yet some
    /// correct output disagreed with its low bit. Must never happen.
    pub v_min_mismatch: bool,
}

/// Safety and liveness violation tallies. Safety entries must stay zero in
/// conditioned mode; faithful mode may legitimately accrue them when a
/// committee misses its good event.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Violations {
    /// Unanimous-input approver run returned something other than {v}.
    pub approver_validity: u64,
    /// Two correct approver callers returned different singletons.
    pub approver_graded: u64,
    /// An approver output held two non-⊥ values.
    pub approver_multi_value: u64,
    /// Two correct processes decided differently (binary or multivalued).
    pub agreement: u64,
    /// Unanimous-input agreement run decided something else.
    pub validity: u64,
    /// v_min was common but a correct coin output missed it.
    pub coin_v_min: u64,
    /// Two verifying quorum certificates for different values in one
    /// instance.
    pub qc_conflict: u64,
    /// Correct processes left without an output when the run halted.
    pub termination: u64,
    /// Mechanical trace audit failures (delayed-adaptive, send monotonicity,
    /// duplicate OK sends).
    pub audit: u64,
}

impl Violations {
    /// Violations that constitute a safety failure (liveness excluded).
    pub fn safety_total(&self) -> u64 {
        self.approver_validity
            + self.approver_graded
            + self.approver_multi_value
            + self.agreement
            + self.validity
            + self.coin_v_min
            + self.qc_conflict
            + self.audit
    }
}

/// Everything measured about one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: u64,
    pub sends: u64,
    pub deliveries: u64,
    pub forced_deliveries: u64,
    pub dropped_invalid: u64,
    pub injected: u64,
    pub corruptions: u64,
    /// Total words sent by correct processes (cost table × recipients).
    pub words_sent: u64,
    pub msgs_by_kind: BTreeMap<String, u64>,
    pub committees: CommitteeStats,
    pub coin_records: Vec<CoinRecord>,
    pub violations: Violations,
    /// Decision rounds of correct processes (binary protocol only).
    pub decide_rounds: Vec<u32>,
    /// An approver output carried two non-⊥ values somewhere in this run;
    /// whp-statistic consumers should exclude the run.
    pub safety_compromised: bool,
    #[serde(skip)]
    pub outcomes: Vec<ProcessOutcome>,
}

impl Metrics {
    pub fn bump_kind(&mut self, kind: &'static str) {
        *self.msgs_by_kind.entry(kind.to_string()).or_insert(0) += 1;
    }
}

/// Per-process record embedded in the run trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub pid: u32,
    pub corrupted: bool,
    pub output: Option<String>,
}

pub fn decision_records(outcomes: &[ProcessOutcome]) -> Vec<DecisionRecord> {
    outcomes
        .iter()
        .map(|o| DecisionRecord {
            pid: o.pid,
            corrupted: o.corrupted,
            output: o.outcome.as_ref().map(|x| x.label()),
        })
        .collect()
}
