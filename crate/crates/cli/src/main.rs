//! Experiment runner: drives seed sweeps of one protocol configuration,
//! optionally under a named adversary, and writes an aggregate report.
//!
//! Runs fan out across worker threads, one run per worker; aggregation is
//! sequential in seed order, so a report is a deterministic function of the
//! configuration and the seed list regardless of thread count.
//!
//! Exit codes: 0 for a clean sweep, 1 when safety was violated (or any run
//! blocked in conditioned mode, where the good event is guaranteed), 2 for
//! configuration errors.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use saba::adversary::by_name;
use saba::approver::ApproverProc;
use saba::binary::BinaryProc;
use saba::coin::CoinProc;
use saba::mv::MvProc;
use saba::netsim::{run_with, Process, ProtocolKind, RunConfig, RunTrace, SamplingMode};
use saba::params::derive_params;
use saba::wire::Val;

mod report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Approver,
    Coin,
    Binary,
    Multivalued,
}

impl Protocol {
    fn kind(self) -> ProtocolKind {
        match self {
            Protocol::Approver => ProtocolKind::Approver,
            Protocol::Coin => ProtocolKind::Coin,
            Protocol::Binary => ProtocolKind::Binary,
            Protocol::Multivalued => ProtocolKind::Multivalued,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Faithful,
    Conditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "saba-cli",
    about = "Seed sweeps over committee-sampled agreement protocols",
    args_override_self = true
)]
struct Args {
    /// Protocol to drive.
    #[arg(long, value_enum)]
    protocol: Protocol,
    /// Process count.
    #[arg(long)]
    n: u32,
    /// Resilience slack: tolerates f = floor((1/3 - epsilon)n) corruptions.
    #[arg(long)]
    epsilon: f64,
    /// Committee margin knob; the analysis needs max{1/lambda, 0.0362} < d
    /// < epsilon/3 - 1/(3 lambda).
    #[arg(long)]
    d: f64,
    /// First seed; the sweep covers seed..seed+runs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of runs.
    #[arg(long, default_value_t = 1)]
    runs: u32,
    /// Adversary strategy, NAME or NAME:OPTS. Known: none, crash[:count],
    /// equivocate, qc-withhold, coin-splitter, alert-skew.
    #[arg(long, default_value = "none")]
    adversary: String,
    /// Committee sampling: faithful draws, or conditioned on the good event.
    #[arg(long, value_enum, default_value_t = Mode::Conditioned)]
    mode: Mode,
    /// A process advancing past this round marks the run blocked.
    #[arg(long, default_value_t = 200)]
    round_cap: u32,
    /// Input assignment: "unanimous:V" or "split[:V1,V2,...]" (round-robin).
    /// Binary runs take values 0/1; the coin ignores inputs.
    #[arg(long, default_value = "split")]
    inputs: String,
    /// Directory for the report (and traces); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write one JSONL event trace per run into --out.
    #[arg(long)]
    trace: bool,
    /// Key=value file supplying defaults for any flag; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv = match splice_config(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    match drive(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Reads `--config FILE` ahead of clap and splices the file's `key=value`
/// lines in as flags right after the program name, so anything given
/// explicitly on the command line overrides the file.
fn splice_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path: Option<PathBuf> = None;
    let mut iter = argv.iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            let v = iter.next().ok_or("--config needs a file argument")?;
            path = Some(PathBuf::from(v));
        } else if let Some(rest) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            path = Some(PathBuf::from(rest));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path)
        .map_err(|e| format!("config file {}: {e}", path.display()))?;
    let mut spliced: Vec<OsString> = vec![argv[0].clone()];
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => match line.split_once(char::is_whitespace) {
                Some((k, v)) => (k.trim(), Some(v.trim())),
                None => (line, None),
            },
        };
        if key == "config" {
            return Err("config files cannot nest further config files".into());
        }
        spliced.push(format!("--{}", key.replace('_', "-")).into());
        if let Some(v) = value {
            spliced.push(v.into());
        }
    }
    spliced.extend(argv.into_iter().skip(1));
    Ok(spliced)
}

fn parse_val(token: &str, protocol: Protocol) -> Result<Val, String> {
    if protocol == Protocol::Binary {
        return match token {
            "0" => Ok(Val::bit(false)),
            "1" => Ok(Val::bit(true)),
            _ => Err(format!("binary inputs must be 0 or 1, got {token:?}")),
        };
    }
    if token.is_empty() {
        return Err("empty input value".into());
    }
    Ok(Val::bytes(token.as_bytes()))
}

fn parse_inputs(spec: &str, protocol: Protocol, n: u32) -> Result<Vec<Val>, String> {
    if protocol == Protocol::Coin {
        return Ok(vec![Val::Bottom; n as usize]);
    }
    let (head, rest) = match spec.split_once(':') {
        Some((h, r)) => (h, Some(r)),
        None => (spec, None),
    };
    let vals: Vec<Val> = match (head, rest) {
        ("unanimous", Some(tok)) => vec![parse_val(tok, protocol)?],
        ("unanimous", None) => return Err("unanimous needs a value: unanimous:V".into()),
        ("split", None) => {
            let pair = if protocol == Protocol::Binary { ["0", "1"] } else { ["a", "b"] };
            pair.iter().map(|t| parse_val(t, protocol)).collect::<Result<_, _>>()?
        }
        ("split", Some(list)) => {
            let toks: Vec<&str> = list.split(',').collect();
            if toks.len() < 2 {
                return Err("split needs at least two values".into());
            }
            toks.iter().map(|t| parse_val(t, protocol)).collect::<Result<_, _>>()?
        }
        _ => return Err(format!("input spec {spec:?}: use unanimous:V or split[:V1,V2,...]")),
    };
    Ok((0..n).map(|i| vals[i as usize % vals.len()].clone()).collect())
}

fn drive(args: Args) -> Result<bool, String> {
    if args.runs == 0 {
        return Err("at least one run is required (--runs 0)".into());
    }
    if args.trace && args.out.is_none() {
        return Err("--trace needs --out to have somewhere to write".into());
    }
    let params = derive_params(args.n, args.epsilon, args.d).map_err(|e| e.to_string())?;
    let inputs = parse_inputs(&args.inputs, args.protocol, args.n)?;
    if by_name(&args.adversary).is_none() {
        return Err(format!("unknown adversary {:?}", args.adversary));
    }

    let kind = args.protocol.kind();
    let mode = match args.mode {
        Mode::Faithful => SamplingMode::Faithful,
        Mode::Conditioned => SamplingMode::Conditioned,
    };
    let base: Arc<[u8]> = b"saba-cli".to_vec().into();
    let seeds: Vec<u64> = (0..args.runs as u64).map(|i| args.seed + i).collect();
    let traces: Vec<RunTrace> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = RunConfig::new(params, kind, seed);
            cfg.inputs = inputs.clone();
            cfg.mode = mode;
            cfg.round_cap = args.round_cap;
            cfg.record_trace = args.trace;
            let mut strategy = by_name(&args.adversary).expect("validated above");
            let n = params.n;
            let cap = cfg.round_cap + cfg.extra_rounds;
            let base = base.clone();
            run_with(
                &cfg,
                move |_, v| -> Box<dyn Process> {
                    match kind {
                        ProtocolKind::Approver => {
                            Box::new(ApproverProc::new(base.clone(), n, v.clone()))
                        }
                        ProtocolKind::Coin => Box::new(CoinProc::new(base.clone(), n)),
                        ProtocolKind::Binary => Box::new(BinaryProc::new(
                            base.clone(),
                            n,
                            cap,
                            v.as_bit().expect("validated bit input"),
                        )),
                        ProtocolKind::Multivalued => {
                            Box::new(MvProc::new(base.clone(), n, cap, v.clone()))
                        }
                    }
                },
                strategy.as_mut(),
            )
            .map_err(|e| format!("seed {seed}: {e}"))
        })
        .collect::<Result<_, _>>()?;

    let echo = report::ConfigEcho {
        protocol: format!("{:?}", args.protocol).to_lowercase(),
        n: args.n,
        epsilon: args.epsilon,
        d: args.d,
        seed: args.seed,
        runs: args.runs,
        adversary: args.adversary.clone(),
        mode: format!("{:?}", args.mode).to_lowercase(),
        round_cap: args.round_cap,
        inputs: args.inputs.clone(),
    };
    let rep = report::build(echo, &params, mode == SamplingMode::Conditioned, &traces);

    let rendered = match args.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rep).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => report::to_csv(&rep),
    };
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
            let name = match args.format {
                Format::Json => "report.json",
                Format::Csv => "report.csv",
            };
            let path = dir.join(name);
            fs::write(&path, rendered).map_err(|e| format!("writing {}: {e}", path.display()))?;
            if args.trace {
                for (seed, trace) in seeds.iter().zip(&traces) {
                    let tp = dir.join(format!("trace-{seed}.jsonl"));
                    fs::write(&tp, trace.trace_jsonl())
                        .map_err(|e| format!("writing {}: {e}", tp.display()))?;
                }
            }
            println!("{} ({})", path.display(), rep.verdict.reason);
        }
        None => print!("{rendered}"),
    }
    Ok(rep.verdict.clean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_specs_cover_the_protocols() {
        let v = parse_inputs("unanimous:1", Protocol::Binary, 4).unwrap();
        assert!(v.iter().all(|x| x.as_bit() == Some(true)));
        let v = parse_inputs("split", Protocol::Binary, 4).unwrap();
        assert_eq!(v.iter().filter(|x| x.as_bit() == Some(true)).count(), 2);
        let v = parse_inputs("split:x,y,z", Protocol::Multivalued, 7).unwrap();
        assert_eq!(v[0], v[3]);
        assert_ne!(v[0], v[1]);
        assert!(parse_inputs("split:only", Protocol::Approver, 4).is_err());
        assert!(parse_inputs("unanimous:2", Protocol::Binary, 4).is_err());
        assert!(parse_inputs("garbled", Protocol::Approver, 4).is_err());
        let v = parse_inputs("anything", Protocol::Coin, 3).unwrap();
        assert!(v.iter().all(|x| x.is_bottom()));
    }

    #[test]
    fn config_files_yield_to_explicit_flags() {
        let dir = std::env::temp_dir().join("saba-cli-test-config");
        fs::create_dir_all(&dir).unwrap();
        let file = dir.join("sweep.conf");
        fs::write(&file, "n = 64\nruns 9\nround_cap=50\n# comment\ntrace\n").unwrap();
        let argv: Vec<OsString> =
            ["saba-cli", "--config", file.to_str().unwrap(), "--runs", "3"]
                .iter()
                .map(OsString::from)
                .collect();
        let spliced = splice_config(argv).unwrap();
        let texts: Vec<String> =
            spliced.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(
            texts,
            vec!["saba-cli", "--n", "64", "--runs", "9", "--round-cap", "50", "--trace",
                 "--config", file.to_str().unwrap(), "--runs", "3"]
        );
    }
}
