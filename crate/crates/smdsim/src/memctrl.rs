//! Memory controller: request queues, FR-FCFS-Cap scheduling under the DDR4
//! timing constraints, ACT_NACK handling with ARI-paced retries, partial
//! activation policies, row-open timeout, the baseline DDR4 refresh engine,
//! and the controller-side PARA / scrubbing baselines.
//!
//! One controller per channel; it issues at most one command on the command
//! bus per cycle.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chip::{ActResponse, ChipAct, SmdChip};
use crate::dram::{
    apply_command, earliest_issue, BankPhase, BankState, BusTiming, ChipSel, CmdKind, CommandEvent,
    Cycle, DramAddress, Geometry, Origin, RankTiming, TimingParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReqKind {
    Read,
    Write,
}

/// Scheduler-visible memory request.
#[derive(Debug, Clone)]
pub struct Request {
    pub id: u64,
    pub core: usize,
    pub kind: ReqKind,
    pub addr: DramAddress,
    pub arrival: Cycle,
}

/// Served request, reported when its data movement finishes.
#[derive(Debug, Clone, Copy)]
pub struct Completion {
    pub id: u64,
    pub core: usize,
    pub kind: ReqKind,
    pub arrival: Cycle,
    pub done: Cycle,
}

/// How the controller treats a partially activated row (chips diverged).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy")]
#[derive(Default)]
pub enum DivergencePolicy {
    /// Re-issue the same ACT every ARI until every chip has the row open.
    #[default]
    Wait,
    /// Close the partial row immediately and work on other lock regions.
    Precharge,
    /// Precharge when at least `threshold` queued requests target other lock
    /// regions of the bank, otherwise wait.
    Hybrid { threshold: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrlConfig {
    pub queue_depth: usize,
    /// Consecutive row hits served before an older row-miss wins.
    pub cap: u32,
    pub drain_high: usize,
    pub drain_low: usize,
    pub policy: DivergencePolicy,
    /// Chips may diverge: disables other-region probing of a bank that is
    /// already waiting on a retry, so at most one row is ever partial.
    pub divergence: bool,
    /// DDR4 baseline: per-rank refresh engine. Off in SMD mode (and for the
    /// hypothetical no-refresh configuration).
    pub baseline_refresh: bool,
    /// Controller-side PARA baseline: probability of refreshing the
    /// neighbors of each activated row, with explicit ACT/PRE pairs.
    pub mc_para: Option<McPara>,
    /// Controller-side scrub baseline: walk every row once per period,
    /// reading all columns.
    pub mc_scrub_period: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct McPara {
    pub p_mark: f64,
    pub blast_radius: u32,
}

impl Default for CtrlConfig {
    fn default() -> Self {
        CtrlConfig {
            queue_depth: 64,
            cap: 4,
            drain_high: 32,
            drain_low: 16,
            policy: DivergencePolicy::default(),
            divergence: false,
            baseline_refresh: false,
            mc_para: None,
            mc_scrub_period: None,
        }
    }
}

/// An issued ACT whose accept/reject responses are in flight for t_nack
/// cycles.
#[derive(Debug, Clone)]
struct PendingAct {
    row: u32,
    issue: Cycle,
    response: ActResponse,
    /// Bank ACT history to restore if every chip rejects (a rejected ACT
    /// leaves the bank state untouched).
    prev_last_act: Option<Cycle>,
    was_retry: bool,
}

/// Retry bookkeeping for a rejected activation. One record per bank: only
/// one region of a bank is under maintenance at a time, and the controller
/// tracks which one (9 bits per bank in hardware terms).
#[derive(Debug, Clone)]
struct NackTracker {
    row: u32,
    region: u32,
    first_issue: Cycle,
    next_retry: Cycle,
    /// Chips still lacking the row (Wait policy after a partial activation).
    missing: Option<Vec<bool>>,
    /// Precharge policy: close the partial row before other work.
    needs_close: bool,
}

#[derive(Debug, Default, Clone)]
struct BankCtl {
    state: BankState,
    pending: Option<PendingAct>,
    nack: Option<NackTracker>,
    /// Regions beyond the tracked one that also rejected an ACT (a
    /// whole-bank scrub lock, or adjacency spill); they unblock when the
    /// tracked retry is accepted.
    known_locked: Vec<u32>,
    hit_streak: u32,
}

/// Baseline DDR4 refresh state for one rank.
#[derive(Debug, Clone)]
struct RefreshEngine {
    next_tick: Cycle,
    debt: u8,
}

#[derive(Debug, Clone)]
struct McScrub {
    interval: Cycle,
    next_at: Cycle,
    rank: u8,
    flat_bank: usize,
    row: u32,
    cols_done: u32,
    active: bool,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct CtrlStats {
    pub act_issues: u64,
    /// ACTs rejected by at least one chip.
    pub nacked_acts: u64,
    /// Per-chip NACK responses.
    pub nack_events: u64,
    pub retries: u64,
    pub ref_count: u64,
    pub reads_served: u64,
    pub writes_served: u64,
    pub timeout_precharges: u64,
    /// Longest span from a request's first rejected ACT to its acceptance.
    pub max_nack_resolve: Cycle,
    pub para_refreshes: u64,
}

pub struct MemController {
    channel: u8,
    cfg: CtrlConfig,
    g: Geometry,
    t: TimingParams,
    read_q: Vec<Request>,
    write_q: Vec<Request>,
    banks: Vec<Vec<BankCtl>>,
    ranks: Vec<RankTiming>,
    bus: BusTiming,
    refresh: Vec<RefreshEngine>,
    drain: bool,
    para_queue: VecDeque<(u8, usize, u32)>,
    scrub: Option<McScrub>,
    completions: VecDeque<Completion>,
    rng: ChaCha8Rng,
    pub stats: CtrlStats,
}

/// One command selected for the bus this cycle.
#[derive(Debug, Clone, Copy)]
struct Cmd {
    kind: CmdKind,
    rank: u8,
    flat_bank: usize,
    row: u32,
    column: u16,
    source: CmdSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmdSource {
    Retry,
    Internal,
    Demand { read: bool, queue_idx: usize },
    Refresh,
}

impl MemController {
    pub fn new(
        channel: u8,
        cfg: CtrlConfig,
        g: Geometry,
        t: TimingParams,
        rng: ChaCha8Rng,
    ) -> Self {
        let ranks = g.ranks_per_channel as usize;
        let banks_per_rank = g.banks_per_chip() as usize;
        let refresh = (0..ranks)
            .map(|r| RefreshEngine {
                // Ranks staggered across the refresh interval.
                next_tick: t.t_refi + (r as u64 * t.t_refi) / ranks as u64,
                debt: 0,
            })
            .collect();
        let scrub = cfg.mc_scrub_period.map(|period| {
            let rows_total = u64::from(g.rows_per_bank) * banks_per_rank as u64 * ranks as u64;
            let interval = (period / rows_total.max(1)).max(1);
            McScrub {
                interval,
                next_at: interval,
                rank: 0,
                flat_bank: 0,
                row: 0,
                cols_done: 0,
                active: false,
            }
        });
        MemController {
            channel,
            cfg,
            g,
            t,
            read_q: Vec::new(),
            write_q: Vec::new(),
            banks: vec![vec![BankCtl::default(); banks_per_rank]; ranks],
            ranks: vec![RankTiming::default(); ranks],
            bus: BusTiming::default(),
            refresh,
            drain: false,
            para_queue: VecDeque::new(),
            scrub,
            completions: VecDeque::new(),
            rng,
            stats: CtrlStats::default(),
        }
    }

    pub fn pending_requests(&self) -> usize {
        self.read_q.len() + self.write_q.len()
    }

    /// In-flight work beyond the queues (responses, retries, completions).
    pub fn busy(&self) -> bool {
        self.pending_requests() > 0
            || !self.completions.is_empty()
            || self
                .banks
                .iter()
                .flatten()
                .any(|b| b.pending.is_some() || b.nack.is_some())
    }

    /// Queue admission; a full queue back-pressures the core.
    pub fn enqueue(&mut self, req: Request) -> bool {
        let q = match req.kind {
            ReqKind::Read => &mut self.read_q,
            ReqKind::Write => &mut self.write_q,
        };
        if q.len() >= self.cfg.queue_depth {
            return false;
        }
        q.push(req);
        true
    }

    /// Advances one cycle: delivers due ACT responses, updates refresh debt,
    /// and issues at most one command.
    pub fn tick(
        &mut self,
        now: Cycle,
        chips: &mut [Vec<SmdChip>],
        emit: &mut dyn FnMut(CommandEvent),
        done: &mut Vec<Completion>,
    ) {
        while let Some(c) = self.completions.front() {
            if c.done > now {
                break;
            }
            done.push(self.completions.pop_front().unwrap());
        }

        self.process_act_responses(now, emit);

        if self.cfg.baseline_refresh {
            for rank in 0..self.refresh.len() {
                let eng = &mut self.refresh[rank];
                while now >= eng.next_tick {
                    assert!(eng.debt < 8, "refresh debt exceeded 8 on rank {rank}");
                    eng.debt += 1;
                    eng.next_tick += self.t.t_refi;
                }
            }
        }

        if let Some(cmd) = self.choose(now) {
            self.issue(cmd, now, chips, emit);
        }
    }

    fn addr_for(&self, rank: u8, flat_bank: usize, row: u32, column: u16) -> DramAddress {
        DramAddress {
            channel: self.channel,
            rank,
            bankgroup: (flat_bank as u32 / self.g.banks_per_group) as u8,
            bank: (flat_bank as u32 % self.g.banks_per_group) as u8,
            row,
            column,
        }
    }

    /// Delivers NACK/accept verdicts exactly t_nack cycles after their ACT.
    fn process_act_responses(&mut self, now: Cycle, emit: &mut dyn FnMut(CommandEvent)) {
        for rank in 0..self.banks.len() {
            for fb in 0..self.banks[rank].len() {
                let due = matches!(
                    &self.banks[rank][fb].pending,
                    Some(p) if p.issue + self.t.t_nack == now
                );
                if !due {
                    continue;
                }
                let pending = self.banks[rank][fb].pending.take().unwrap();
                let nacks = pending.response.nack_count();
                if nacks > 0 {
                    self.stats.nacked_acts += 1;
                    self.stats.nack_events += nacks as u64;
                    let lockstep = pending.response.per_chip.len() == 1;
                    for (chip_idx, act) in pending.response.per_chip.iter().enumerate() {
                        if let ChipAct::Nack(mech) = act {
                            emit(CommandEvent {
                                cycle: now,
                                kind: CmdKind::Nack,
                                addr: self.addr_for(rank as u8, fb, pending.row, 0),
                                origin: Origin::Mech {
                                    kind: *mech,
                                    chip: if lockstep {
                                        ChipSel::All
                                    } else {
                                        ChipSel::One(chip_idx as u8)
                                    },
                                },
                            });
                        }
                    }
                }
                self.resolve_response(now, rank, fb, pending);
            }
        }
    }

    fn resolve_response(&mut self, _now: Cycle, rank: usize, fb: usize, pending: PendingAct) {
        let region = pending.row / self.g.region_rows();

        if pending.response.full_accept() {
            let bank = &mut self.banks[rank][fb];
            let tracked = bank.nack.as_ref().map(|tr| tr.row);
            if tracked == Some(pending.row) {
                let tr = bank.nack.take().unwrap();
                bank.known_locked.clear();
                if pending.was_retry {
                    let span = pending.issue - tr.first_issue;
                    self.stats.max_nack_resolve = self.stats.max_nack_resolve.max(span);
                }
            }
            return;
        }

        if pending.response.full_nack() {
            // No chip opened anything: mark the bank precharged, leaving its
            // timing history untouched.
            let bank = &mut self.banks[rank][fb];
            bank.state.phase = BankPhase::Precharged;
            bank.state.last_act = pending.prev_last_act;
            match &mut bank.nack {
                Some(tr) if tr.row == pending.row => {
                    tr.next_retry = pending.issue + self.t.ari;
                    tr.missing = None;
                }
                Some(_) => {
                    // A different-region probe was also rejected (whole-bank
                    // lock or adjacency): remember the region, keep the
                    // original retry stream.
                    if !bank.known_locked.contains(&region) {
                        bank.known_locked.push(region);
                    }
                }
                None => {
                    bank.nack = Some(NackTracker {
                        row: pending.row,
                        region,
                        first_issue: pending.issue,
                        next_retry: pending.issue + self.t.ari,
                        missing: None,
                        needs_close: false,
                    });
                }
            }
            return;
        }

        // Partial activation: divergence only, and admission guarantees it
        // is the tracked request (or a fresh one).
        let other_region_requests = self
            .read_q
            .iter()
            .chain(self.write_q.iter())
            .filter(|r| {
                r.addr.rank as usize == rank
                    && r.addr.flat_bank(&self.g) == fb
                    && r.addr.region(&self.g) != region
            })
            .count();
        let precharge = match self.cfg.policy {
            DivergencePolicy::Wait => false,
            DivergencePolicy::Precharge => true,
            DivergencePolicy::Hybrid { threshold } => other_region_requests >= threshold,
        };
        let missing: Vec<bool> = pending
            .response
            .per_chip
            .iter()
            .map(|c| matches!(c, ChipAct::Nack(_)))
            .collect();
        let bank = &mut self.banks[rank][fb];
        let tr = bank.nack.get_or_insert(NackTracker {
            row: pending.row,
            region,
            first_issue: pending.issue,
            next_retry: 0,
            missing: None,
            needs_close: false,
        });
        debug_assert_eq!(
            tr.row, pending.row,
            "partial activation of an untracked row"
        );
        tr.next_retry = pending.issue + self.t.ari;
        if precharge {
            tr.missing = None;
            tr.needs_close = true;
        } else {
            tr.missing = Some(missing);
        }
    }

    /// Command selection for this cycle, in strict priority order.
    fn choose(&mut self, now: Cycle) -> Option<Cmd> {
        self.pick_retry(now)
            .or_else(|| self.pick_tracker_precharges(now))
            .or_else(|| self.pick_refresh(now, true))
            .or_else(|| self.pick_timeout_precharge(now))
            .or_else(|| self.pick_refresh(now, false))
            .or_else(|| self.pick_para(now))
            .or_else(|| self.pick_mc_scrub(now))
            .or_else(|| self.pick_demand(now))
    }

    fn legal_now(&self, kind: CmdKind, rank: usize, fb: usize, row: u32, now: Cycle) -> bool {
        matches!(
            earliest_issue(
                kind,
                row,
                &self.banks[rank][fb].state,
                &self.ranks[rank],
                &self.bus,
                &self.t,
                now
            ),
            Ok(e) if e == now
        )
    }

    /// Forced refresh drains a rank; keep new activations out of it.
    fn rank_accepts_acts(&self, rank: usize) -> bool {
        !(self.cfg.baseline_refresh && self.refresh[rank].debt >= 8)
    }

    /// A due retry outranks all other traffic on the channel.
    fn pick_retry(&mut self, now: Cycle) -> Option<Cmd> {
        let mut best: Option<(Cycle, usize, usize)> = None;
        for rank in 0..self.banks.len() {
            for fb in 0..self.banks[rank].len() {
                let bank = &self.banks[rank][fb];
                let Some(tr) = &bank.nack else { continue };
                if tr.next_retry > now || bank.pending.is_some() || tr.needs_close {
                    continue;
                }
                let ok = if tr.missing.is_some() {
                    // Wait policy: the partially open row is re-activated in
                    // place; only rank-level constraints apply.
                    self.ranks[rank].rfc_ready <= now
                        && self.ranks[rank]
                            .last_act
                            .is_none_or(|a| now >= a + self.t.t_rrd)
                } else {
                    self.legal_now(CmdKind::Act, rank, fb, tr.row, now)
                };
                if ok && best.is_none_or(|(due, ..)| tr.next_retry < due) {
                    best = Some((tr.next_retry, rank, fb));
                }
            }
        }
        best.map(|(_, rank, fb)| {
            let tr = self.banks[rank][fb].nack.as_ref().unwrap();
            Cmd {
                kind: CmdKind::Act,
                rank: rank as u8,
                flat_bank: fb,
                row: tr.row,
                column: 0,
                source: CmdSource::Retry,
            }
        })
    }

    /// Precharges owed to trackers: closing a partial row (Precharge
    /// policy), or clearing other-region work in time for a due retry.
    fn pick_tracker_precharges(&mut self, now: Cycle) -> Option<Cmd> {
        for rank in 0..self.banks.len() {
            for fb in 0..self.banks[rank].len() {
                let bank = &self.banks[rank][fb];
                let Some(tr) = &bank.nack else { continue };
                if bank.pending.is_some() {
                    continue;
                }
                let mut st = bank.state.clone();
                st.settle(now);
                let open = matches!(
                    st.phase,
                    BankPhase::Active { .. } | BankPhase::Activating { .. }
                );
                if !open {
                    continue;
                }
                let due_close =
                    tr.needs_close || (tr.missing.is_none() && now + self.t.t_rp >= tr.next_retry);
                if due_close && self.legal_now(CmdKind::Pre, rank, fb, 0, now) {
                    return Some(Cmd {
                        kind: CmdKind::Pre,
                        rank: rank as u8,
                        flat_bank: fb,
                        row: 0,
                        column: 0,
                        source: CmdSource::Internal,
                    });
                }
            }
        }
        None
    }

    /// Baseline refresh: forced once the debt hits 8, opportunistic when the
    /// rank is idle.
    fn pick_refresh(&mut self, now: Cycle, forced_only: bool) -> Option<Cmd> {
        if !self.cfg.baseline_refresh {
            return None;
        }
        for rank in 0..self.refresh.len() {
            let debt = self.refresh[rank].debt;
            if debt == 0 {
                continue;
            }
            let forced = debt >= 8;
            if forced_only != forced {
                continue;
            }
            if !forced {
                let targeted = self
                    .read_q
                    .iter()
                    .chain(self.write_q.iter())
                    .any(|r| r.addr.rank as usize == rank);
                if targeted {
                    continue;
                }
            }
            // Every bank must be precharged before REF.
            let mut all_ready = true;
            for fb in 0..self.banks[rank].len() {
                let bank = &self.banks[rank][fb];
                let mut st = bank.state.clone();
                st.settle(now);
                match st.phase {
                    BankPhase::Precharged => {}
                    BankPhase::Precharging { .. } => all_ready = false,
                    BankPhase::Active { .. } | BankPhase::Activating { .. } => {
                        all_ready = false;
                        if forced
                            && bank.pending.is_none()
                            && self.legal_now(CmdKind::Pre, rank, fb, 0, now)
                        {
                            return Some(Cmd {
                                kind: CmdKind::Pre,
                                rank: rank as u8,
                                flat_bank: fb,
                                row: 0,
                                column: 0,
                                source: CmdSource::Internal,
                            });
                        }
                    }
                }
            }
            if all_ready && self.legal_now(CmdKind::Ref, rank, 0, 0, now) {
                return Some(Cmd {
                    kind: CmdKind::Ref,
                    rank: rank as u8,
                    flat_bank: 0,
                    row: 0,
                    column: 0,
                    source: CmdSource::Refresh,
                });
            }
        }
        None
    }

    /// Standards cap how long a row may stay open; the forced precharge also
    /// bounds how long maintenance can wait for a lock.
    fn pick_timeout_precharge(&mut self, now: Cycle) -> Option<Cmd> {
        for rank in 0..self.banks.len() {
            for fb in 0..self.banks[rank].len() {
                let bank = &self.banks[rank][fb];
                if bank.pending.is_some() {
                    continue;
                }
                let mut st = bank.state.clone();
                st.settle(now);
                let expired = match st.phase {
                    BankPhase::Active { opened_at, .. } => now >= opened_at + self.t.max_open,
                    _ => false,
                };
                if expired && self.legal_now(CmdKind::Pre, rank, fb, 0, now) {
                    self.stats.timeout_precharges += 1;
                    return Some(Cmd {
                        kind: CmdKind::Pre,
                        rank: rank as u8,
                        flat_bank: fb,
                        row: 0,
                        column: 0,
                        source: CmdSource::Internal,
                    });
                }
            }
        }
        None
    }

    /// Controller-issued neighbor refreshes (the PARA baseline) occupy the
    /// bus and banks like any other traffic.
    fn pick_para(&mut self, now: Cycle) -> Option<Cmd> {
        let &(rank, fb, row) = self.para_queue.front()?;
        let rank_idx = rank as usize;
        if self.banks[rank_idx][fb].pending.is_some() {
            return None;
        }
        let mut st = self.banks[rank_idx][fb].state.clone();
        st.settle(now);
        let (kind, cmd_row) = match st.phase {
            BankPhase::Active { .. } | BankPhase::Activating { .. } => (CmdKind::Pre, 0),
            BankPhase::Precharged | BankPhase::Precharging { .. } => (CmdKind::Act, row),
        };
        if kind == CmdKind::Act && !self.rank_accepts_acts(rank_idx) {
            return None;
        }
        if self.legal_now(kind, rank_idx, fb, cmd_row, now) {
            Some(Cmd {
                kind,
                rank,
                flat_bank: fb,
                row: cmd_row,
                column: 0,
                source: CmdSource::Internal,
            })
        } else {
            None
        }
    }

    fn pick_mc_scrub(&mut self, now: Cycle) -> Option<Cmd> {
        {
            let scrub = self.scrub.as_mut()?;
            if !scrub.active {
                if now < scrub.next_at {
                    return None;
                }
                scrub.active = true;
                scrub.cols_done = 0;
                scrub.next_at += scrub.interval;
            }
        }
        let scrub = self.scrub.as_ref().unwrap();
        let (rank, fb, row, cols_done) = (scrub.rank, scrub.flat_bank, scrub.row, scrub.cols_done);
        let rank_idx = rank as usize;
        if self.banks[rank_idx][fb].pending.is_some() {
            return None;
        }
        let mut st = self.banks[rank_idx][fb].state.clone();
        st.settle(now);
        let cols = self.g.columns_per_row();
        let (kind, cmd_row, column) = match st.phase {
            BankPhase::Precharged | BankPhase::Precharging { .. } => (CmdKind::Act, row, 0),
            BankPhase::Activating { row: r, .. } | BankPhase::Active { row: r, .. } if r == row => {
                if cols_done < cols {
                    (CmdKind::Rd, row, cols_done as u16)
                } else {
                    (CmdKind::Pre, 0, 0)
                }
            }
            _ => (CmdKind::Pre, 0, 0),
        };
        if kind == CmdKind::Act && !self.rank_accepts_acts(rank_idx) {
            return None;
        }
        if self.legal_now(kind, rank_idx, fb, cmd_row, now) {
            Some(Cmd {
                kind,
                rank,
                flat_bank: fb,
                row: cmd_row,
                column,
                source: CmdSource::Internal,
            })
        } else {
            None
        }
    }

    /// FR-FCFS-Cap over the demand queues.
    fn pick_demand(&mut self, now: Cycle) -> Option<Cmd> {
        if self.drain {
            if self.write_q.len() <= self.cfg.drain_low {
                self.drain = false;
            }
        } else if self.write_q.len() >= self.cfg.drain_high {
            self.drain = true;
        }
        let serve_writes = self.drain || (self.read_q.is_empty() && !self.write_q.is_empty());
        let (queue, is_read) = if serve_writes {
            (&self.write_q, false)
        } else {
            (&self.read_q, true)
        };
        if queue.is_empty() {
            return None;
        }

        // Pass 1: oldest ready row hit, honoring the cap.
        let mut pick: Option<(usize, CmdKind)> = None;
        for (idx, req) in queue.iter().enumerate() {
            if !self.schedulable(req) {
                continue;
            }
            let rank = req.addr.rank as usize;
            let fb = req.addr.flat_bank(&self.g);
            let bank = &self.banks[rank][fb];
            let mut st = bank.state.clone();
            st.settle(now);
            if st.open_row() != Some(req.addr.row) {
                continue;
            }
            if bank.hit_streak >= self.cfg.cap {
                let older_miss = queue[..idx].iter().any(|r| {
                    r.addr.rank as usize == rank
                        && r.addr.flat_bank(&self.g) == fb
                        && r.addr.row != req.addr.row
                });
                if older_miss {
                    continue;
                }
            }
            let kind = if is_read { CmdKind::Rd } else { CmdKind::Wr };
            if self.legal_now(kind, rank, fb, req.addr.row, now) {
                pick = Some((idx, kind));
                break;
            }
        }

        // Pass 2: oldest request whose next step is issuable now.
        if pick.is_none() {
            for (idx, req) in queue.iter().enumerate() {
                if !self.schedulable(req) {
                    continue;
                }
                let rank = req.addr.rank as usize;
                let fb = req.addr.flat_bank(&self.g);
                let mut st = self.banks[rank][fb].state.clone();
                st.settle(now);
                let kind = match st.phase {
                    BankPhase::Precharged | BankPhase::Precharging { .. } => CmdKind::Act,
                    BankPhase::Active { row, .. } if row != req.addr.row => CmdKind::Pre,
                    _ => continue, // opening, or open on our row but not ready
                };
                if kind == CmdKind::Act && !self.act_admissible(rank, fb, now) {
                    continue;
                }
                let row = if kind == CmdKind::Act {
                    req.addr.row
                } else {
                    0
                };
                if self.legal_now(kind, rank, fb, row, now) {
                    pick = Some((idx, kind));
                    break;
                }
            }
        }

        pick.map(|(idx, kind)| {
            let req = &queue[idx];
            Cmd {
                kind,
                rank: req.addr.rank,
                flat_bank: req.addr.flat_bank(&self.g),
                row: if kind == CmdKind::Pre {
                    0
                } else {
                    req.addr.row
                },
                column: req.addr.column,
                source: CmdSource::Demand {
                    read: is_read,
                    queue_idx: idx,
                },
            }
        })
    }

    /// Requests to a known-locked region wait for their bank's retry; a bank
    /// awaiting an ACT verdict takes no other commands.
    fn schedulable(&self, req: &Request) -> bool {
        let rank = req.addr.rank as usize;
        let fb = req.addr.flat_bank(&self.g);
        let bank = &self.banks[rank][fb];
        if bank.pending.is_some() {
            return false;
        }
        if let Some(tr) = &bank.nack {
            if tr.missing.is_some() {
                // Partially open row: nothing else may touch this bank.
                return false;
            }
            let region = req.addr.region(&self.g);
            if region == tr.region || bank.known_locked.contains(&region) {
                return false;
            }
        }
        true
    }

    /// Admission for new activations next to pending retries: other-region
    /// work must precharge before the retry is due, no demand ACT may eat
    /// the rank's ACT-to-ACT budget right before one, and diverged systems
    /// do not probe a bank that is already waiting.
    fn act_admissible(&self, rank: usize, fb: usize, now: Cycle) -> bool {
        if !self.rank_accepts_acts(rank) {
            return false;
        }
        if let Some(tr) = &self.banks[rank][fb].nack {
            if self.cfg.divergence {
                return false;
            }
            if now + self.t.t_ras + self.t.t_rp > tr.next_retry {
                return false;
            }
        }
        for other in &self.banks[rank] {
            if let Some(tr) = &other.nack {
                if tr.next_retry > now && tr.next_retry <= now + self.t.t_rrd {
                    return false;
                }
            }
        }
        true
    }

    fn issue(
        &mut self,
        cmd: Cmd,
        now: Cycle,
        chips: &mut [Vec<SmdChip>],
        emit: &mut dyn FnMut(CommandEvent),
    ) {
        let rank = cmd.rank as usize;
        let fb = cmd.flat_bank;
        let addr = self.addr_for(cmd.rank, fb, cmd.row, cmd.column);
        let prev_last_act = self.banks[rank][fb].state.last_act;
        let prev_open = {
            let mut st = self.banks[rank][fb].state.clone();
            st.settle(now);
            st.open_row()
        };

        // A Wait-policy retry re-activates a row that is already (partially)
        // open; everything else goes through the normal state machine.
        let reactivation = cmd.kind == CmdKind::Act && prev_open == Some(cmd.row);
        if reactivation {
            let bank = &mut self.banks[rank][fb].state;
            // The open episode keeps its original start so the row-open
            // limit still bounds a long partial-activation fight.
            let mut settled = bank.clone();
            settled.settle(now);
            let episode_start = match settled.phase {
                BankPhase::Active { opened_at, .. } => opened_at,
                _ => bank.last_act.unwrap_or(now),
            };
            bank.phase = BankPhase::Active {
                row: cmd.row,
                opened_at: episode_start,
            };
            bank.last_act = Some(now);
            bank.last_col = None;
            self.ranks[rank].last_act = Some(now);
        } else {
            apply_command(
                cmd.kind,
                cmd.row,
                &mut self.banks[rank][fb].state,
                &mut self.ranks[rank],
                &mut self.bus,
                &self.t,
                now,
            )
            .unwrap_or_else(|e| panic!("scheduler issued illegal command: {e}"));
        }

        emit(CommandEvent {
            cycle: now,
            kind: cmd.kind,
            addr,
            origin: Origin::Controller,
        });

        match cmd.kind {
            CmdKind::Act => {
                self.stats.act_issues += 1;
                let was_retry = cmd.source == CmdSource::Retry;
                if was_retry {
                    self.stats.retries += 1;
                }
                let response = if chips[rank].is_empty() {
                    ActResponse {
                        per_chip: vec![ChipAct::Accept],
                    }
                } else {
                    ActResponse {
                        per_chip: chips[rank]
                            .iter_mut()
                            .map(|c| c.on_act(fb, cmd.row, &self.g, now))
                            .collect(),
                    }
                };
                self.banks[rank][fb].pending = Some(PendingAct {
                    row: cmd.row,
                    issue: now,
                    response,
                    prev_last_act,
                    was_retry,
                });
                self.banks[rank][fb].hit_streak = 0;
                if let (Some(para), CmdSource::Demand { .. }) = (self.cfg.mc_para, cmd.source) {
                    if para.p_mark > 0.0 && self.rng.gen_bool(para.p_mark) {
                        let lo = cmd.row.saturating_sub(para.blast_radius);
                        let hi = (cmd.row + para.blast_radius).min(self.g.rows_per_bank - 1);
                        for victim in lo..=hi {
                            if victim != cmd.row {
                                self.para_queue.push_back((cmd.rank, fb, victim));
                                self.stats.para_refreshes += 1;
                            }
                        }
                    }
                }
            }
            CmdKind::Pre => {
                for chip in chips[rank].iter_mut() {
                    chip.on_pre(fb);
                }
                self.banks[rank][fb].hit_streak = 0;
                if let Some(tr) = &mut self.banks[rank][fb].nack {
                    tr.needs_close = false;
                    tr.missing = None;
                }
                if let Some(&(prank, pfb, prow)) = self.para_queue.front() {
                    if prank == cmd.rank && pfb == fb && prev_open == Some(prow) {
                        self.para_queue.pop_front();
                    }
                }
                if let Some(scrub) = &mut self.scrub {
                    if scrub.active
                        && scrub.rank == cmd.rank
                        && scrub.flat_bank == fb
                        && scrub.cols_done >= self.g.columns_per_row()
                        && prev_open == Some(scrub.row)
                    {
                        scrub.active = false;
                        scrub.cols_done = 0;
                        scrub.row += 1;
                        if scrub.row == self.g.rows_per_bank {
                            scrub.row = 0;
                            scrub.flat_bank += 1;
                            if scrub.flat_bank == self.banks[rank].len() {
                                scrub.flat_bank = 0;
                                scrub.rank = (scrub.rank + 1) % self.banks.len() as u8;
                            }
                        }
                    }
                }
            }
            CmdKind::Rd | CmdKind::Wr => {
                self.banks[rank][fb].hit_streak += 1;
                match cmd.source {
                    CmdSource::Demand { read, queue_idx } => {
                        let req = if read {
                            self.read_q.remove(queue_idx)
                        } else {
                            self.write_q.remove(queue_idx)
                        };
                        let done = if read {
                            self.stats.reads_served += 1;
                            now + self.t.t_cl + self.t.t_bl
                        } else {
                            self.stats.writes_served += 1;
                            now + self.t.t_bl
                        };
                        self.completions.push_back(Completion {
                            id: req.id,
                            core: req.core,
                            kind: req.kind,
                            arrival: req.arrival,
                            done,
                        });
                    }
                    _ => {
                        if let Some(scrub) = &mut self.scrub {
                            if scrub.active && scrub.rank == cmd.rank && scrub.flat_bank == fb {
                                scrub.cols_done += 1;
                            }
                        }
                    }
                }
            }
            CmdKind::Ref => {
                self.refresh[rank].debt -= 1;
                self.stats.ref_count += 1;
            }
            _ => unreachable!(),
        }
    }
}
