//! Simulation driver: builds the system from a [`config::SimConfig`], runs
//! the cycle loop, fans every command event out to the hasher, auditors and
//! energy model, and assembles the report.

pub mod audit;
pub mod config;
pub mod energy;
pub mod report;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chip::SmdChip;
use crate::dram::{
    decode_address, ChipSel, CmdKind, CommandEvent, ConfigError, Cycle, Geometry, Mapping, Origin,
    TimingParams,
};
use crate::maintenance::{
    DrpEngine, Engine, FrEngine, MechCtx, MsEngine, PrpEngine, PrpPlusEngine, StressEngine,
    VrEngine,
};
use crate::memctrl::{Completion, CtrlConfig, MemController, ReqKind, Request};
use crate::workload::{self, CoreModel, MemPort, TraceEntry};

use audit::{
    ExclusionAuditor, RefreshAuditor, RefreshMode, RetryAuditor, RowHammerAuditor, ScrubAuditor,
    TimingAuditor,
};
use config::{DivergenceMode, FaultSource, MechConfig, Mode, RunLength, SimConfig, WeakRowsSource};
use energy::{EnergyModel, EnergyParams};
use report::{CoreReport, LatencyStats, MaintCounts, Report};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace: {0}")]
    Trace(#[from] workload::TraceError),
}

fn sub_seed(master: u64, tag: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut z = master ^ tag.rotate_left(17) ^ a.rotate_left(29) ^ b.rotate_left(43) ^ c;
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

/// Fan-out for every emitted command event.
struct EventSink {
    g: Geometry,
    hasher: Sha256,
    count: u64,
    last_cycle: Cycle,
    scratch: Vec<u8>,
    log: Option<Vec<CommandEvent>>,
    timing: Option<TimingAuditor>,
    exclusion: Option<ExclusionAuditor>,
    refresh: Option<RefreshAuditor>,
    rowhammer: Option<RowHammerAuditor>,
    scrub: Option<ScrubAuditor>,
    retry: Option<RetryAuditor>,
    energy: Option<EnergyModel>,
    maint: BTreeMap<&'static str, MaintCounts>,
}

impl EventSink {
    fn push(&mut self, ev: CommandEvent) {
        debug_assert!(
            ev.cycle >= self.last_cycle,
            "events must be emitted in cycle order"
        );
        self.last_cycle = ev.cycle;
        self.scratch.clear();
        ev.pack(&self.g, &mut self.scratch);
        self.hasher.update(&self.scratch);
        self.count += 1;
        if let Origin::Mech { kind, .. } = ev.origin {
            let entry = self.maint.entry(kind.code()).or_default();
            match ev.kind {
                CmdKind::MaintAct => entry.row_ops += 1,
                CmdKind::MaintRd => entry.reads += 1,
                CmdKind::MaintWb => entry.writebacks += 1,
                CmdKind::Nack => entry.nacks_caused += 1,
                _ => {}
            }
        }
        if let Some(a) = &mut self.timing {
            a.observe(&ev);
        }
        if let Some(a) = &mut self.exclusion {
            a.observe(&ev);
        }
        if let Some(a) = &mut self.refresh {
            a.observe(&ev);
        }
        if let Some(a) = &mut self.rowhammer {
            a.observe(&ev);
        }
        if let Some(a) = &mut self.scrub {
            a.observe(&ev);
        }
        if let Some(a) = &mut self.retry {
            a.observe(&ev);
        }
        if let Some(e) = &mut self.energy {
            e.observe(&ev);
        }
        if let Some(log) = &mut self.log {
            log.push(ev);
        }
    }
}

struct CorePort<'a> {
    controllers: &'a mut [MemController],
    g: &'a Geometry,
    mapping: &'a Mapping,
    capacity: u64,
    cacheline_mask: u64,
    next_id: &'a mut u64,
}

impl MemPort for CorePort<'_> {
    fn read(&mut self, core: usize, addr: u64, now: Cycle) -> Option<u64> {
        let addr = (addr % self.capacity) & self.cacheline_mask;
        let da = decode_address(addr, self.g, self.mapping).expect("wrapped address in range");
        let id = *self.next_id;
        let accepted = self.controllers[da.channel as usize].enqueue(Request {
            id,
            core,
            kind: ReqKind::Read,
            addr: da,
            arrival: now,
        });
        if accepted {
            *self.next_id += 1;
            Some(id)
        } else {
            None
        }
    }

    fn write(&mut self, core: usize, addr: u64, now: Cycle) -> bool {
        let addr = (addr % self.capacity) & self.cacheline_mask;
        let da = decode_address(addr, self.g, self.mapping).expect("wrapped address in range");
        let id = *self.next_id;
        let accepted = self.controllers[da.channel as usize].enqueue(Request {
            id,
            core,
            kind: ReqKind::Write,
            addr: da,
            arrival: now,
        });
        if accepted {
            *self.next_id += 1;
        }
        accepted
    }
}

pub struct Sim {
    cfg: SimConfig,
    g: Geometry,
    t: TimingParams,
    mapping: Mapping,
    controllers: Vec<MemController>,
    chips: Vec<Vec<Vec<SmdChip>>>,
    cores: Vec<CoreModel>,
    sink: EventSink,
    now: Cycle,
    next_req_id: u64,
    latencies: Vec<u64>,
    requests_completed: u64,
    core_target_cycle: Vec<Option<Cycle>>,
    done_buf: Vec<Completion>,
    pub weak_rows: Vec<u32>,
    pub faults: Vec<(u32, u16)>,
}

pub struct SimOutput {
    pub report: Report,
    pub log: Option<Vec<CommandEvent>>,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Sim, SimError> {
        Self::with_log(cfg, false)
    }

    pub fn with_log(cfg: SimConfig, keep_log: bool) -> Result<Sim, SimError> {
        cfg.validate()?;
        let g = cfg.resolved_geometry()?;
        let t = cfg.resolved_timing()?;
        let mapping = Mapping::default();

        let ResolvedMechs {
            weak_rows,
            faults,
            scrub_cfg,
            vr_factor,
            refresh_rg,
        } = resolve_mechs(&cfg, &g, &t)?;

        let logical_chips = cfg.logical_chips();
        let l_ref = FrEngine::op_latency(refresh_rg, &t);
        let chip_offsets: Vec<(Cycle, u32)> = (0..logical_chips)
            .map(|i| match &cfg.divergence {
                DivergenceMode::Lockstep => (0, 0),
                DivergenceMode::WorstCase => (i as u64 * l_ref, i as u32),
                DivergenceMode::Custom { offsets } => (offsets[i].delay, offsets[i].lock_region),
            })
            .collect();

        let banks_per_rank = g.banks_per_chip() as usize;
        let mut chips: Vec<Vec<Vec<SmdChip>>> = Vec::new();
        for ch in 0..g.channels {
            let mut per_rank = Vec::new();
            for rank in 0..g.ranks_per_channel {
                let mut rank_chips = Vec::new();
                if cfg.mode == Mode::Smd {
                    for (chip_idx, &(delay, lock_region)) in chip_offsets.iter().enumerate() {
                        let ctx = MechCtx {
                            geometry: &g,
                            timing: &t,
                            weak_rows: &weak_rows,
                            faults: &faults,
                            per_row_locks: cfg.pause_policy,
                            first_op_delay: delay,
                            initial_lock_region: lock_region,
                        };
                        let engines: Vec<Vec<Engine>> = (0..banks_per_rank)
                            .map(|_| {
                                build_engines(
                                    &cfg,
                                    &ctx,
                                    &t,
                                    vr_factor,
                                    scrub_cfg,
                                    cfg.seed,
                                    ch,
                                    rank,
                                    chip_idx as u32,
                                )
                            })
                            .collect();
                        let sel = if logical_chips == 1 {
                            ChipSel::All
                        } else {
                            ChipSel::One(chip_idx as u8)
                        };
                        rank_chips.push(SmdChip::new(
                            sel,
                            ch as u8,
                            rank as u8,
                            &g,
                            engines,
                            ChaCha8Rng::seed_from_u64(sub_seed(
                                cfg.seed,
                                0xc41b,
                                u64::from(ch),
                                u64::from(rank),
                                chip_idx as u64,
                            )),
                            cfg.multi_mech,
                            cfg.pause_policy,
                            cfg.bitline,
                        ));
                    }
                }
                per_rank.push(rank_chips);
            }
            chips.push(per_rank);
        }

        let ctrl_cfg = CtrlConfig {
            queue_depth: cfg.scheduler.queue_depth,
            cap: cfg.scheduler.cap,
            drain_high: cfg.scheduler.drain_high,
            drain_low: cfg.scheduler.drain_low,
            policy: cfg.policy,
            divergence: logical_chips > 1,
            baseline_refresh: cfg.mode == Mode::Ddr4Baseline && !cfg.no_refresh,
            mc_para: cfg.baselines.mc_para,
            mc_scrub_period: cfg
                .baselines
                .mc_scrub_period_s
                .map(|s| (s * 1e9 / t.clock_ns) as u64 / cfg.time_scale.max(1)),
        };
        let controllers: Vec<MemController> = (0..g.channels)
            .map(|ch| {
                MemController::new(
                    ch as u8,
                    ctrl_cfg.clone(),
                    g.clone(),
                    t.clone(),
                    ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 0x3c, u64::from(ch), 0, 0)),
                )
            })
            .collect();

        let mut cores = Vec::new();
        for (i, src) in cfg.traces.iter().enumerate() {
            let entries: Vec<TraceEntry> = src.resolve(&g)?;
            let core = CoreModel::new(i, entries);
            let core = if matches!(cfg.run, RunLength::TraceOnce) {
                core.once()
            } else {
                core
            };
            cores.push(core);
        }

        let sink = build_sink(
            &cfg,
            &g,
            &t,
            logical_chips,
            vr_factor,
            scrub_cfg,
            keep_log,
            &weak_rows,
            &faults,
        );

        let core_count = cores.len();
        Ok(Sim {
            cfg,
            g,
            t,
            mapping,
            controllers,
            chips,
            cores,
            sink,
            now: 0,
            next_req_id: 0,
            latencies: Vec::new(),
            requests_completed: 0,
            core_target_cycle: vec![None; core_count],
            done_buf: Vec::new(),
            weak_rows,
            faults,
        })
    }

    fn step(&mut self) {
        let now = self.now;
        let sink = &mut self.sink;
        for per_rank in self.chips.iter_mut() {
            for rank_chips in per_rank.iter_mut() {
                for chip in rank_chips.iter_mut() {
                    chip.step(now, &self.g, &self.t, &mut |e| sink.push(e));
                }
            }
        }
        for (ch, mc) in self.controllers.iter_mut().enumerate() {
            mc.tick(
                now,
                &mut self.chips[ch],
                &mut |e| sink.push(e),
                &mut self.done_buf,
            );
        }
        for c in self.done_buf.drain(..) {
            self.requests_completed += 1;
            self.latencies.push(c.done.saturating_sub(c.arrival));
            if c.kind == ReqKind::Read {
                self.cores[c.core].complete(c.id);
            }
        }
        let mut port = CorePort {
            controllers: &mut self.controllers,
            g: &self.g,
            mapping: &self.mapping,
            capacity: self.g.capacity_bytes(),
            cacheline_mask: !(u64::from(self.g.cacheline_bytes) - 1),
            next_id: &mut self.next_req_id,
        };
        for core in self.cores.iter_mut() {
            core.tick(now, &mut port);
        }
        self.now = now + 1;
    }

    pub fn run(mut self) -> SimOutput {
        let max = self.cfg.max_cycles();
        loop {
            match self.cfg.run {
                RunLength::Cycles { n } => {
                    if self.now >= n {
                        break;
                    }
                }
                RunLength::Instructions { n } => {
                    for (i, core) in self.cores.iter().enumerate() {
                        if self.core_target_cycle[i].is_none() && core.retired >= n {
                            self.core_target_cycle[i] = Some(self.now.max(1));
                        }
                    }
                    if !self.cores.is_empty() && self.core_target_cycle.iter().all(Option::is_some)
                    {
                        break;
                    }
                }
                RunLength::TraceOnce => {
                    let cores_idle = self.cores.iter().all(CoreModel::idle);
                    let ctrls_idle = self.controllers.iter().all(|c| !c.busy());
                    if cores_idle && ctrls_idle && self.now > 0 {
                        break;
                    }
                }
            }
            assert!(self.now < max, "run exceeded max_cycles = {max}; stalled?");
            self.step();
        }
        self.finalize()
    }

    fn finalize(mut self) -> SimOutput {
        let elapsed = self.now;
        let cores: Vec<CoreReport> = self
            .cores
            .iter()
            .enumerate()
            .map(|(i, core)| {
                let cycles = self.core_target_cycle[i].unwrap_or(elapsed).max(1);
                let retired = match self.cfg.run {
                    RunLength::Instructions { n } if self.core_target_cycle[i].is_some() => n,
                    _ => core.retired,
                };
                CoreReport {
                    retired,
                    cycles,
                    ipc: retired as f64 / cycles as f64,
                }
            })
            .collect();
        let total_throughput_ipc = cores.iter().map(|c| c.ipc).sum();

        let mut act_issues = 0;
        let mut nacked_acts = 0;
        let mut nack_events = 0;
        let mut retries = 0;
        let mut ref_count = 0;
        let mut reads = 0;
        let mut writes = 0;
        let mut max_nack_resolve = 0;
        let mut timeout_precharges = 0;
        for mc in &self.controllers {
            act_issues += mc.stats.act_issues;
            nacked_acts += mc.stats.nacked_acts;
            nack_events += mc.stats.nack_events;
            retries += mc.stats.retries;
            ref_count += mc.stats.ref_count;
            reads += mc.stats.reads_served;
            writes += mc.stats.writes_served;
            max_nack_resolve = max_nack_resolve.max(mc.stats.max_nack_resolve);
            timeout_precharges += mc.stats.timeout_precharges;
        }

        let sink = &mut self.sink;
        let maintenance: BTreeMap<String, MaintCounts> = sink
            .maint
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let report = Report {
            cycles: elapsed,
            cores,
            weighted_speedup: None,
            total_throughput_ipc,
            act_issues,
            nacked_acts,
            nack_events,
            nack_rate: if act_issues > 0 {
                nacked_acts as f64 / act_issues as f64
            } else {
                0.0
            },
            retries,
            ref_count,
            reads,
            writes,
            requests_completed: self.requests_completed,
            requests_issued: self.next_req_id,
            maintenance,
            read_latency: LatencyStats::from_samples(&mut self.latencies),
            max_nack_resolve,
            timeout_precharges,
            timing_audit: sink.timing.take().map(TimingAuditor::finalize),
            exclusion_audit: sink.exclusion.take().map(ExclusionAuditor::finalize),
            refresh_audit: sink.refresh.take().map(|a| a.finalize(elapsed)),
            rowhammer_audit: sink.rowhammer.take().map(RowHammerAuditor::finalize),
            scrub_audit: sink.scrub.take().map(|a| a.finalize(elapsed)),
            retry_audit: sink.retry.take().map(RetryAuditor::finalize),
            energy: sink
                .energy
                .take()
                .map(|e| e.finalize(elapsed))
                .unwrap_or_default(),
            events: sink.count,
            event_hash: hex_digest(std::mem::take(&mut sink.hasher)),
        };
        SimOutput {
            report,
            log: sink.log.take(),
        }
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Per-bank data derived from the mechanism list (weak rows and faults are
/// applied uniformly to every bank).
struct ResolvedMechs {
    weak_rows: Vec<u32>,
    faults: Vec<(u32, u16)>,
    /// Scrub tick interval and codewords per row.
    scrub_cfg: Option<(u64, u32)>,
    vr_factor: u64,
    refresh_rg: u32,
}

fn resolve_mechs(
    cfg: &SimConfig,
    g: &Geometry,
    t: &TimingParams,
) -> Result<ResolvedMechs, SimError> {
    let mut out = ResolvedMechs {
        weak_rows: Vec::new(),
        faults: Vec::new(),
        scrub_cfg: None,
        vr_factor: 1,
        refresh_rg: 8,
    };
    for mech in &cfg.mechanisms {
        match mech {
            MechConfig::VariableRefresh {
                rg,
                rt_weak_ms,
                weak_rows: src,
                ..
            } => {
                out.refresh_rg = *rg;
                out.vr_factor = (rt_weak_ms / cfg.refresh_period_ms).round().max(1.0) as u64;
                out.weak_rows = match src {
                    WeakRowsSource::File { path } => {
                        workload::load_weak_rows(std::path::Path::new(path))?
                    }
                    WeakRowsSource::Generate { fraction, seed } => {
                        workload::gen_weak_rows(*seed, *fraction, g.rows_per_bank)
                    }
                };
            }
            MechConfig::FixedRefresh { rg } => out.refresh_rg = *rg,
            MechConfig::Scrub {
                period_s,
                codewords_per_row,
                faults: src,
            } => {
                let period_cycles = (period_s * 1e9 / t.clock_ns) as u64 / cfg.time_scale.max(1);
                let tick = (period_cycles / u64::from(g.rows_per_bank)).max(1);
                out.scrub_cfg = Some((tick, *codewords_per_row));
                out.faults = match src {
                    FaultSource::None => Vec::new(),
                    FaultSource::File { path } => {
                        workload::load_fault_map(std::path::Path::new(path))?
                    }
                    FaultSource::Generate { count, seed } => workload::gen_fault_map(
                        *seed,
                        *count,
                        g.rows_per_bank,
                        *codewords_per_row as u16,
                    ),
                };
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Verdicts of an offline audit over a recorded event log.
#[derive(Debug, serde::Serialize)]
pub struct AuditSummary {
    pub events: u64,
    pub end_cycle: Cycle,
    pub timing: Option<audit::TimingVerdict>,
    pub exclusion: Option<audit::ExclusionVerdict>,
    pub refresh: Option<audit::RefreshVerdict>,
    pub rowhammer: Option<audit::RowHammerVerdict>,
    pub scrub: Option<audit::ScrubVerdict>,
    pub retry: Option<audit::RetryVerdict>,
}

impl AuditSummary {
    pub fn pass(&self, retry_slack: Cycle) -> bool {
        self.timing.as_ref().is_none_or(|v| v.pass())
            && self.exclusion.as_ref().is_none_or(|v| v.pass())
            && self.refresh.as_ref().is_none_or(|v| v.pass())
            && self.rowhammer.as_ref().is_none_or(|v| v.pass())
            && self.scrub.as_ref().is_none_or(|v| v.pass())
            && self.retry.as_ref().is_none_or(|v| v.pass(retry_slack))
    }
}

/// Replays a recorded event log through the auditors configured for `cfg`.
pub fn audit_events(
    cfg: &SimConfig,
    events: impl IntoIterator<Item = CommandEvent>,
) -> Result<AuditSummary, SimError> {
    cfg.validate()?;
    let g = cfg.resolved_geometry()?;
    let t = cfg.resolved_timing()?;
    let resolved = resolve_mechs(cfg, &g, &t)?;
    let mut sink = build_sink(
        cfg,
        &g,
        &t,
        cfg.logical_chips(),
        resolved.vr_factor,
        resolved.scrub_cfg,
        false,
        &resolved.weak_rows,
        &resolved.faults,
    );
    let mut end = 0;
    for ev in events {
        end = end.max(ev.cycle);
        sink.push(ev);
    }
    Ok(AuditSummary {
        events: sink.count,
        end_cycle: end,
        timing: sink.timing.take().map(TimingAuditor::finalize),
        exclusion: sink.exclusion.take().map(ExclusionAuditor::finalize),
        refresh: sink.refresh.take().map(|a| a.finalize(end)),
        rowhammer: sink.rowhammer.take().map(RowHammerAuditor::finalize),
        scrub: sink.scrub.take().map(|a| a.finalize(end)),
        retry: sink.retry.take().map(RetryAuditor::finalize),
    })
}

impl SimConfig {
    fn max_cycles(&self) -> u64 {
        match self.run {
            RunLength::Cycles { n } => n,
            _ => 1_000_000_000,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_engines(
    cfg: &SimConfig,
    ctx: &MechCtx,
    t: &TimingParams,
    vr_factor: u64,
    scrub_cfg: Option<(u64, u32)>,
    seed: u64,
    ch: u32,
    rank: u32,
    chip: u32,
) -> Vec<Engine> {
    cfg.mechanisms
        .iter()
        .map(|m| match m {
            MechConfig::FixedRefresh { rg } => Engine::Fr(FrEngine::new(*rg, t.t_refw, ctx)),
            MechConfig::VariableRefresh {
                rg,
                filter_bits,
                filter_hashes,
                ..
            } => Engine::Vr(VrEngine::new(
                *rg,
                t.t_refw,
                vr_factor,
                *filter_bits,
                *filter_hashes,
                sub_seed(
                    seed,
                    0xb100,
                    u64::from(ch),
                    u64::from(rank),
                    u64::from(chip),
                ),
                ctx,
            )),
            MechConfig::ProbRh {
                p_mark,
                blast_radius,
            } => Engine::Prp(PrpEngine::new(*p_mark, *blast_radius, ctx)),
            MechConfig::ProbRhPlus {
                p_mark,
                blast_radius,
                act_max,
                cbf_counters,
                cbf_hashes,
                window_ms,
            } => {
                let window = match window_ms {
                    Some(ms) => ((ms * 1e6 / t.clock_ns) as u64 / cfg.time_scale.max(1)).max(1),
                    None => t.t_refw,
                };
                Engine::PrpPlus(PrpPlusEngine::new(
                    *p_mark,
                    *blast_radius,
                    *act_max,
                    *cbf_counters,
                    *cbf_hashes,
                    window,
                    sub_seed(seed, 0xcbf, u64::from(ch), u64::from(rank), u64::from(chip)),
                    ctx,
                ))
            }
            MechConfig::DetRh {
                act_max,
                entries,
                blast_radius,
            } => Engine::Drp(DrpEngine::new(*act_max, *entries, *blast_radius, ctx)),
            MechConfig::Scrub {
                codewords_per_row, ..
            } => {
                let (tick, _) = scrub_cfg.expect("scrub config resolved");
                Engine::Ms(MsEngine::new(tick, *codewords_per_row, ctx))
            }
            MechConfig::Stress { hold } => Engine::Stress(StressEngine::new(*hold, ctx)),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_sink(
    cfg: &SimConfig,
    g: &Geometry,
    t: &TimingParams,
    logical_chips: usize,
    vr_factor: u64,
    scrub_cfg: Option<(u64, u32)>,
    keep_log: bool,
    weak_rows: &[u32],
    faults: &[(u32, u16)],
) -> EventSink {
    let _ = faults;
    let timing = cfg
        .audits
        .timing
        .then(|| TimingAuditor::new(g, t, logical_chips));
    let exclusion = cfg
        .audits
        .exclusion
        .then(|| ExclusionAuditor::new(g, t, cfg.bitline, logical_chips));
    let refresh = cfg.audits.refresh.then(|| {
        let has_vr = cfg
            .mechanisms
            .iter()
            .any(|m| matches!(m, MechConfig::VariableRefresh { .. }));
        let smd_bound = t.t_refw + 17 * t.t_refi;
        let (mode, bound, bound_strong) = if has_vr {
            (
                RefreshMode::Variable {
                    weak: weak_rows.to_vec(),
                },
                smd_bound,
                vr_factor * smd_bound,
            )
        } else if cfg.mode == Mode::Smd {
            (RefreshMode::Uniform, smd_bound, smd_bound)
        } else {
            let b = t.t_refw + 8 * t.t_refi + t.t_rfc;
            (RefreshMode::Uniform, b, b)
        };
        RefreshAuditor::new(g, t, logical_chips, mode, bound, bound_strong)
    });
    let rowhammer = cfg.audits.rowhammer.then(|| {
        let mut enforced = false;
        let mut act_max = None;
        let mut blast = 1;
        for m in &cfg.mechanisms {
            match m {
                MechConfig::DetRh {
                    act_max: a,
                    blast_radius,
                    ..
                } => {
                    enforced = true;
                    act_max = Some(*a);
                    blast = *blast_radius;
                }
                MechConfig::ProbRhPlus {
                    act_max: a,
                    blast_radius,
                    ..
                } => {
                    act_max = act_max.or(Some(*a));
                    blast = *blast_radius;
                }
                MechConfig::ProbRh { blast_radius, .. } => blast = *blast_radius,
                _ => {}
            }
        }
        if cfg.audits.rowhammer_act_max.is_some() {
            enforced = true;
        }
        let act_max = cfg.audits.rowhammer_act_max.or(act_max).unwrap_or(u64::MAX);
        RowHammerAuditor::new(g, t, logical_chips, act_max, blast, enforced)
    });
    let scrub = if cfg.audits.scrub {
        scrub_cfg.map(|(tick, codewords)| {
            let op = t.t_rcd + u64::from(codewords) * t.t_bl + t.t_rp;
            let slack = 8 * tick + 9 * t.t_refi + t.ari + op + t.t_rc();
            let bound = u64::from(g.rows_per_bank) * tick + slack;
            ScrubAuditor::new(g, t, logical_chips, codewords, bound, bound)
        })
    } else {
        None
    };
    let retry = cfg
        .audits
        .retry
        .then(|| RetryAuditor::new(g, t, logical_chips));
    EventSink {
        g: g.clone(),
        hasher: Sha256::new(),
        count: 0,
        last_cycle: 0,
        scratch: Vec::with_capacity(32),
        log: keep_log.then(Vec::new),
        timing,
        exclusion,
        refresh,
        rowhammer,
        scrub,
        retry,
        energy: Some(EnergyModel::new(
            cfg.energy
                .clone()
                .unwrap_or_else(|| EnergyParams::ddr4_defaults(t, g)),
            g,
            t,
        )),
        maint: BTreeMap::new(),
    }
}

/// Builds and runs a configuration.
pub fn run_config(cfg: SimConfig) -> Result<SimOutput, SimError> {
    Ok(Sim::new(cfg)?.run())
}

/// Same, keeping the full event log.
pub fn run_config_logged(cfg: SimConfig) -> Result<SimOutput, SimError> {
    Ok(Sim::with_log(cfg, true)?.run())
}
