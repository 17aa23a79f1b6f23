//! Command-line interface: run simulations, compare reports, replay audits
//! over recorded event logs, and generate synthetic workload files.
//!
//! Exit codes: 0 on success, 1 when an audit fails, 2 on configuration or
//! usage errors.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::dram::{CommandEvent, Geometry};
use crate::sim::config::SimConfig;
use crate::sim::report::{compare, Report};
use crate::sim::{audit_events, Sim};
use crate::workload::{self, HammerPattern};

#[derive(Parser)]
#[command(
    name = "smdsim",
    about = "Cycle-accurate simulator for self-managing DRAM maintenance",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON report here (otherwise a summary goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full command-event log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Weighted speedup and energy deltas between two run reports.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Replay the auditors over a recorded CSV event log.
    Audit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate trace, weak-row and fault-map files.
    #[command(subcommand)]
    GenTrace(GenCmd),
}

#[derive(Subcommand)]
enum GenCmd {
    /// Fixed-stride streaming accesses.
    Stream {
        #[arg(long)]
        len: usize,
        #[arg(long)]
        stride: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long, default_value_t = 0)]
        bubbles: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniform random accesses over a footprint.
    Random {
        #[arg(long)]
        len: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        footprint: u64,
        #[arg(long, default_value_t = 0)]
        bubbles: u64,
        #[arg(long, default_value_t = 0.0)]
        write_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interleaved streaming and random phases.
    Mix {
        #[arg(long)]
        len: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        stride: u64,
        #[arg(long)]
        footprint: u64,
        #[arg(long, default_value_t = 0)]
        bubbles: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// RowHammer attack loop over aggressor rows in bank 0.
    Hammer {
        #[arg(long, value_enum)]
        pattern: HammerArg,
        /// Comma-separated aggressor row ids.
        #[arg(long, value_delimiter = ',')]
        aggressors: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        acts_per_round: usize,
        #[arg(long, default_value_t = 0)]
        bubbles: u64,
        #[arg(long)]
        len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniformly sampled weak-row set (one decimal row id per line).
    WeakRows {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.001)]
        fraction: f64,
        #[arg(long, default_value_t = 131_072)]
        rows: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random fault map ("row,codeword" per line).
    FaultMap {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 131_072)]
        rows: u32,
        #[arg(long, default_value_t = 128)]
        codewords: u16,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum HammerArg {
    Single,
    DoubleSided,
    ManySided,
}

impl From<HammerArg> for HammerPattern {
    fn from(v: HammerArg) -> Self {
        match v {
            HammerArg::Single => HammerPattern::Single,
            HammerArg::DoubleSided => HammerPattern::DoubleSided,
            HammerArg::ManySided => HammerPattern::ManySided,
        }
    }
}

fn load_config(path: &PathBuf) -> Result<SimConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SimConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_event_csv(path: &PathBuf, events: &[CommandEvent], g: &Geometry) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "cycle,kind,channel,rank,bank,row,origin")?;
    for ev in events {
        writeln!(f, "{}", ev.to_csv(g))?;
    }
    Ok(())
}

fn read_event_csv(path: &PathBuf, g: &Geometry) -> Result<Vec<CommandEvent>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') || text.starts_with("cycle") {
            continue;
        }
        out.push(
            CommandEvent::from_csv(text, g)
                .with_context(|| format!("{}:{}: bad event row", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn print_summary(report: &Report) {
    println!("cycles             {}", report.cycles);
    for (i, core) in report.cores.iter().enumerate() {
        println!("core {i} ipc         {:.4}", core.ipc);
    }
    println!("requests completed {}", report.requests_completed);
    println!(
        "acts / nacked      {} / {} (rate {:.5})",
        report.act_issues, report.nacked_acts, report.nack_rate
    );
    println!("ref commands       {}", report.ref_count);
    println!(
        "read latency       mean {:.1} p99 {} max {}",
        report.read_latency.mean, report.read_latency.p99, report.read_latency.max
    );
    for (mech, counts) in &report.maintenance {
        println!(
            "maintenance {mech:6} rows {} reads {} writebacks {}",
            counts.row_ops, counts.reads, counts.writebacks
        );
    }
    println!(
        "energy total       {:.3} uJ",
        report.energy.total_nj / 1000.0
    );
    println!("event hash         {}", report.event_hash);
    let tri = |pass: bool, failed: bool| {
        if pass {
            "pass"
        } else if failed {
            "FAIL"
        } else {
            "inconclusive (span too short)"
        }
    };
    let audits = [
        (
            "timing",
            report.timing_audit.as_ref().map(|v| (v.pass(), !v.pass())),
        ),
        (
            "exclusion",
            report
                .exclusion_audit
                .as_ref()
                .map(|v| (v.pass(), !v.pass())),
        ),
        (
            "refresh",
            report
                .refresh_audit
                .as_ref()
                .map(|v| (v.pass(), v.failed())),
        ),
        (
            "rowhammer",
            report
                .rowhammer_audit
                .as_ref()
                .map(|v| (v.pass(), !v.pass())),
        ),
        (
            "scrub",
            report.scrub_audit.as_ref().map(|v| (v.pass(), v.failed())),
        ),
    ];
    for (name, verdict) in audits {
        if let Some((pass, failed)) = verdict {
            println!("audit {name:12} {}", tri(pass, failed));
        }
    }
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Command::Run { config, out, log } => {
            let cfg = load_config(&config)?;
            let retry_slack = cfg.audits.retry_slack;
            let g = cfg.resolved_geometry()?;
            let keep_log = log.is_some();
            let sim = Sim::with_log(cfg, keep_log)?;
            let output = sim.run();
            if let (Some(path), Some(events)) = (&log, &output.log) {
                write_event_csv(path, events, &g)?;
            }
            match &out {
                Some(path) => {
                    fs::write(path, serde_json::to_string_pretty(&output.report)?)?;
                    println!("report written to {}", path.display());
                }
                None => print_summary(&output.report),
            }
            Ok(if output.report.audits_pass(retry_slack) {
                0
            } else {
                1
            })
        }
        Command::Compare {
            baseline,
            candidate,
        } => {
            let base: Report = serde_json::from_str(&fs::read_to_string(&baseline)?)
                .with_context(|| format!("parsing {}", baseline.display()))?;
            let cand: Report = serde_json::from_str(&fs::read_to_string(&candidate)?)
                .with_context(|| format!("parsing {}", candidate.display()))?;
            let cmp = compare(&base, &cand)?;
            println!("{}", serde_json::to_string_pretty(&cmp)?);
            Ok(0)
        }
        Command::Audit { log, config } => {
            let cfg = load_config(&config)?;
            let g = cfg.resolved_geometry()?;
            let events = read_event_csv(&log, &g)?;
            let summary = audit_events(&cfg, events)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if summary.pass(cfg.audits.retry_slack) {
                0
            } else {
                1
            })
        }
        Command::GenTrace(gen) => {
            run_gen(gen)?;
            Ok(0)
        }
    }
}

fn run_gen(gen: GenCmd) -> Result<()> {
    match gen {
        GenCmd::Stream {
            len,
            stride,
            start,
            bubbles,
            out,
        } => {
            workload::write_trace(&out, &workload::gen_stream(len, stride, start, bubbles))?;
        }
        GenCmd::Random {
            len,
            seed,
            footprint,
            bubbles,
            write_fraction,
            out,
        } => {
            workload::write_trace(
                &out,
                &workload::gen_random(len, seed, footprint, bubbles, write_fraction),
            )?;
        }
        GenCmd::Mix {
            len,
            seed,
            stride,
            footprint,
            bubbles,
            out,
        } => {
            workload::write_trace(
                &out,
                &workload::gen_mix(len, seed, stride, footprint, bubbles),
            )?;
        }
        GenCmd::Hammer {
            pattern,
            aggressors,
            acts_per_round,
            bubbles,
            len,
            out,
        } => {
            anyhow::ensure!(!aggressors.is_empty(), "at least one aggressor row");
            let trace = workload::gen_hammer(
                pattern.into(),
                &aggressors,
                acts_per_round,
                bubbles,
                len,
                &Geometry::default(),
            );
            workload::write_trace(&out, &trace)?;
        }
        GenCmd::WeakRows {
            seed,
            fraction,
            rows,
            out,
        } => {
            workload::write_rows(&out, &workload::gen_weak_rows(seed, fraction, rows))?;
        }
        GenCmd::FaultMap {
            seed,
            count,
            rows,
            codewords,
            out,
        } => {
            workload::write_fault_map(
                &out,
                &workload::gen_fault_map(seed, count, rows, codewords),
            )?;
        }
    }
    Ok(())
}
