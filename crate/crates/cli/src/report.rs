//! Aggregation of a seed sweep into one report. Reports are deterministic
//! functions of (configuration, seed list): runs are merged in seed order,
//! maps are ordered, and nothing wall-clock-dependent is recorded.

use std::collections::BTreeMap;

use saba::metrics::Violations;
use saba::netsim::RunTrace;
use saba::params::SystemParams;
use serde::Serialize;

/// Bumped when a field changes meaning, so downstream tables can refuse
/// mixed inputs.
pub const SCHEMA: &str = "saba-report/1";

/// Echo of the exact sweep configuration, for reproduction.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub protocol: String,
    pub n: u32,
    pub epsilon: f64,
    pub d: f64,
    pub seed: u64,
    pub runs: u32,
    pub adversary: String,
    pub mode: String,
    pub round_cap: u32,
    pub inputs: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamsEcho {
    pub lambda: f64,
    pub w: u32,
    pub b: u32,
    pub f: u32,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommitteeEcho {
    pub realized: u64,
    pub rejections: u64,
    pub size_mean: f64,
    pub size_min: u32,
    pub size_max: u32,
    /// Failures of the four good-event clauses, in faithful mode only.
    pub s_failures: [u64; 4],
}

/// Network-wide totals over the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Totals {
    pub blocked_runs: u32,
    pub violations: Violations,
    pub words_total: u64,
    pub words_mean: f64,
    /// words_mean / (n·λ²); flat across n for a subquadratic stack.
    pub words_per_n_lambda2: f64,
    pub sends: u64,
    pub deliveries: u64,
    pub forced_deliveries: u64,
    pub dropped_invalid: u64,
    pub injected: u64,
    pub corruptions: u64,
    pub committees: CommitteeEcho,
    pub msgs_by_kind: BTreeMap<String, u64>,
}

/// Decision-round distribution over all correct processes of all runs.
#[derive(Debug, Clone, Serialize)]
pub struct Rounds {
    pub count: u64,
    pub mean: f64,
    pub p50: u32,
    pub p90: u32,
    pub max: u32,
}

/// Per-invocation shared-coin statistics.
#[derive(Debug, Clone, Serialize)]
pub struct Coin {
    pub invocations: u64,
    /// Invocations where every correct output agreed.
    pub agreed: u64,
    pub success_rate: f64,
    /// Fraction of individual outputs that were 1.
    pub ones_fraction: f64,
    /// Invocations whose overall minimum value was a common value.
    pub v_min_common: u64,
    pub mean_common_values: f64,
    /// Analytic lower bound on common values per invocation.
    pub common_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub clean: bool,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub config: ConfigEcho,
    pub params: ParamsEcho,
    pub totals: Totals,
    pub rounds: Option<Rounds>,
    pub coin: Option<Coin>,
    /// Outcome label → number of correct processes reporting it.
    pub outcomes: BTreeMap<String, u64>,
    pub verdict: Verdict,
}

fn merge_violations(into: &mut Violations, v: &Violations) {
    into.approver_validity += v.approver_validity;
    into.approver_graded += v.approver_graded;
    into.approver_multi_value += v.approver_multi_value;
    into.agreement += v.agreement;
    into.validity += v.validity;
    into.coin_v_min += v.coin_v_min;
    into.qc_conflict += v.qc_conflict;
    into.termination += v.termination;
    into.audit += v.audit;
}

fn percentile(sorted: &[u32], p: f64) -> u32 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx]
}

pub fn build(
    config: ConfigEcho,
    params: &SystemParams,
    conditioned: bool,
    traces: &[RunTrace],
) -> Report {
    let n_runs = traces.len() as u64;
    let mut violations = Violations::default();
    let mut blocked_runs = 0u32;
    let (mut words, mut sends, mut deliveries, mut forced) = (0u64, 0u64, 0u64, 0u64);
    let (mut dropped, mut injected, mut corruptions) = (0u64, 0u64, 0u64);
    let mut msgs: BTreeMap<String, u64> = BTreeMap::new();
    let mut outcomes: BTreeMap<String, u64> = BTreeMap::new();
    let mut rounds: Vec<u32> = Vec::new();
    let (mut com_realized, mut com_rej, mut com_size_sum) = (0u64, 0u64, 0u64);
    let (mut com_min, mut com_max) = (u32::MAX, 0u32);
    let mut s_failures = [0u64; 4];
    let (mut coin_n, mut coin_agreed, mut coin_common) = (0u64, 0u64, 0u64);
    let (mut coin_outputs, mut coin_ones, mut common_sum) = (0u64, 0u64, 0u64);
    let mut common_bound = 0.0f64;

    for t in traces {
        let m = &t.metrics;
        merge_violations(&mut violations, &m.violations);
        blocked_runs += t.blocked as u32;
        words += m.words_sent;
        sends += m.sends;
        deliveries += m.deliveries;
        forced += m.forced_deliveries;
        dropped += m.dropped_invalid;
        injected += m.injected;
        corruptions += m.corruptions;
        for (k, v) in &m.msgs_by_kind {
            *msgs.entry(k.clone()).or_insert(0) += v;
        }
        for o in m.outcomes.iter().filter(|o| !o.corrupted) {
            if let Some(out) = &o.outcome {
                *outcomes.entry(out.label()).or_insert(0) += 1;
            }
        }
        rounds.extend_from_slice(&m.decide_rounds);
        let c = &m.committees;
        com_realized += c.realized;
        com_rej += c.rejections_total;
        com_size_sum += c.size_sum;
        if c.realized > 0 {
            com_min = com_min.min(c.size_min);
            com_max = com_max.max(c.size_max);
        }
        for (slot, fails) in
            [c.s1_failures, c.s2_failures, c.s3_failures, c.s4_failures].into_iter().enumerate()
        {
            s_failures[slot] += fails;
        }
        for rec in &m.coin_records {
            coin_n += 1;
            coin_agreed += rec.all_agree.is_some() as u64;
            coin_common += rec.v_min_common as u64;
            coin_outputs += rec.outputs as u64;
            coin_ones += rec.ones as u64;
            common_sum += rec.common_values as u64;
            common_bound = rec.common_bound;
        }
    }

    rounds.sort_unstable();
    let rounds = (!rounds.is_empty()).then(|| Rounds {
        count: rounds.len() as u64,
        mean: rounds.iter().map(|&r| r as f64).sum::<f64>() / rounds.len() as f64,
        p50: percentile(&rounds, 0.5),
        p90: percentile(&rounds, 0.9),
        max: *rounds.last().expect("non-empty"),
    });
    let coin = (coin_n > 0).then(|| Coin {
        invocations: coin_n,
        agreed: coin_agreed,
        success_rate: coin_agreed as f64 / coin_n as f64,
        ones_fraction: if coin_outputs == 0 { 0.0 } else { coin_ones as f64 / coin_outputs as f64 },
        v_min_common: coin_common,
        mean_common_values: common_sum as f64 / coin_n as f64,
        common_bound,
    });

    let words_mean = if n_runs == 0 { 0.0 } else { words as f64 / n_runs as f64 };
    let lam2 = params.lambda * params.lambda;
    let safety = violations.safety_total();
    let (clean, reason) = if safety > 0 {
        (false, format!("{safety} safety violations"))
    } else if conditioned && blocked_runs > 0 {
        (false, format!("{blocked_runs} blocked runs in conditioned mode"))
    } else if blocked_runs > 0 {
        (true, format!("ok ({blocked_runs} blocked runs tolerated in faithful mode)"))
    } else {
        (true, "ok".to_string())
    };

    Report {
        schema: SCHEMA,
        config,
        params: ParamsEcho {
            lambda: params.lambda,
            w: params.w,
            b: params.b,
            f: params.f,
            rho: params.rho,
        },
        totals: Totals {
            blocked_runs,
            violations,
            words_total: words,
            words_mean,
            words_per_n_lambda2: words_mean / (params.n as f64 * lam2),
            sends,
            deliveries,
            forced_deliveries: forced,
            dropped_invalid: dropped,
            injected,
            corruptions,
            committees: CommitteeEcho {
                realized: com_realized,
                rejections: com_rej,
                size_mean: if com_realized == 0 {
                    0.0
                } else {
                    com_size_sum as f64 / com_realized as f64
                },
                size_min: if com_realized == 0 { 0 } else { com_min },
                size_max: com_max,
                s_failures,
            },
            msgs_by_kind: msgs,
        },
        rounds,
        coin,
        outcomes,
        verdict: Verdict { clean, reason },
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Single-row CSV with a fixed, versioned column set. Optional sections
/// serialize as empty cells.
pub fn to_csv(r: &Report) -> String {
    let header = [
        "schema,protocol,n,epsilon,d,seed,runs,adversary,mode,round_cap,inputs",
        "lambda,w,b,f,rho",
        "blocked_runs,v_approver_validity,v_approver_graded,v_approver_multi_value",
        "v_agreement,v_validity,v_coin_v_min,v_qc_conflict,v_termination,v_audit",
        "words_total,words_mean,words_per_n_lambda2,sends,deliveries,forced_deliveries",
        "dropped_invalid,injected,corruptions,committees_realized,committee_rejections",
        "committee_size_mean,rounds_count,rounds_mean,rounds_p50,rounds_p90,rounds_max",
        "coin_invocations,coin_agreed,coin_success_rate,clean",
    ]
    .join(",");
    let c = &r.config;
    let p = &r.params;
    let t = &r.totals;
    let v = &t.violations;
    let mut row: Vec<String> = vec![
        r.schema.to_string(),
        c.protocol.clone(),
        c.n.to_string(),
        c.epsilon.to_string(),
        c.d.to_string(),
        c.seed.to_string(),
        c.runs.to_string(),
        csv_field(&c.adversary),
        c.mode.clone(),
        c.round_cap.to_string(),
        csv_field(&c.inputs),
        p.lambda.to_string(),
        p.w.to_string(),
        p.b.to_string(),
        p.f.to_string(),
        p.rho.to_string(),
        t.blocked_runs.to_string(),
        v.approver_validity.to_string(),
        v.approver_graded.to_string(),
        v.approver_multi_value.to_string(),
        v.agreement.to_string(),
        v.validity.to_string(),
        v.coin_v_min.to_string(),
        v.qc_conflict.to_string(),
        v.termination.to_string(),
        v.audit.to_string(),
        t.words_total.to_string(),
        t.words_mean.to_string(),
        t.words_per_n_lambda2.to_string(),
        t.sends.to_string(),
        t.deliveries.to_string(),
        t.forced_deliveries.to_string(),
        t.dropped_invalid.to_string(),
        t.injected.to_string(),
        t.corruptions.to_string(),
        t.committees.realized.to_string(),
        t.committees.rejections.to_string(),
        t.committees.size_mean.to_string(),
    ];
    match &r.rounds {
        Some(x) => row.extend([
            x.count.to_string(),
            x.mean.to_string(),
            x.p50.to_string(),
            x.p90.to_string(),
            x.max.to_string(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 5)),
    }
    match &r.coin {
        Some(x) => row.extend([
            x.invocations.to_string(),
            x.agreed.to_string(),
            x.success_rate.to_string(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 3)),
    }
    row.push(r.verdict.clean.to_string());
    format!("{header}\n{}\n", row.join(","))
}
