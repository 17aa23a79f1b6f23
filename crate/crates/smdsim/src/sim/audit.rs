//! Conformance auditors. Each consumes the command-event stream (and static
//! configuration) only — never mechanism internals — so their verdicts are
//! valid oracles for the simulator proper.
//!
//! The timing checker deliberately re-derives the constraint rules instead of
//! reusing the scheduler's `earliest_issue` path.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chip::{blocked_subarrays, BitlineMode};
use crate::dram::{
    ChipSel, CmdKind, CommandEvent, Cycle, Geometry, MechKind, Origin, TimingParams,
};

type BankKey = (u8, u8, usize);

fn bank_key(ev: &CommandEvent, g: &Geometry) -> BankKey {
    (ev.addr.channel, ev.addr.rank, ev.addr.flat_bank(g))
}

/// Which chips an activation ended up accepted by, reconstructed from the
/// NACK events that follow it within the t_nack window.
#[derive(Debug, Clone)]
struct ResolvedAct {
    key: BankKey,
    row: u32,
    issue: Cycle,
    /// Per logical chip.
    accepted: Vec<bool>,
}

impl ResolvedAct {
    fn any_accepted(&self) -> bool {
        self.accepted.iter().any(|&a| a)
    }
}

/// Buffers controller ACTs until their rejection window has passed.
#[derive(Debug)]
struct ActWindow {
    t_nack: Cycle,
    chips: usize,
    pending: HashMap<BankKey, (Cycle, u32, Vec<bool>)>, // issue, row, rejected per chip
}

impl ActWindow {
    fn new(t_nack: Cycle, chips: usize) -> Self {
        ActWindow {
            t_nack,
            chips,
            pending: HashMap::new(),
        }
    }

    /// Feed an event; returns activations whose window closed before it.
    fn observe(&mut self, ev: &CommandEvent, g: &Geometry) -> Vec<ResolvedAct> {
        let mut out: Vec<ResolvedAct> = self
            .pending
            .iter()
            .filter(|(_, (issue, ..))| ev.cycle > issue + self.t_nack)
            .map(|(k, _)| *k)
            .collect::<Vec<_>>()
            .into_iter()
            .map(|k| {
                let (issue, row, rejected) = self.pending.remove(&k).unwrap();
                ResolvedAct {
                    key: k,
                    row,
                    issue,
                    accepted: rejected.iter().map(|r| !r).collect(),
                }
            })
            .collect();
        out.sort_by_key(|r| (r.issue, r.key));
        match (ev.kind, ev.origin) {
            (CmdKind::Act, Origin::Controller) => {
                self.pending.insert(
                    bank_key(ev, g),
                    (ev.cycle, ev.addr.row, vec![false; self.chips]),
                );
            }
            (CmdKind::Nack, origin) => {
                if let Some((_, _, rejected)) = self.pending.get_mut(&bank_key(ev, g)) {
                    match origin {
                        Origin::Mech {
                            chip: ChipSel::One(c),
                            ..
                        } => {
                            rejected[c as usize] = true;
                        }
                        _ => rejected.iter_mut().for_each(|r| *r = true),
                    }
                }
            }
            _ => {}
        }
        out
    }

    fn drain(&mut self) -> Vec<ResolvedAct> {
        let mut out: Vec<ResolvedAct> = self
            .pending
            .drain()
            .map(|(k, (issue, row, rejected))| ResolvedAct {
                key: k,
                row,
                issue,
                accepted: rejected.iter().map(|r| !r).collect(),
            })
            .collect();
        out.sort_by_key(|r| (r.issue, r.key));
        out
    }
}

fn push_example(list: &mut Vec<String>, msg: String) {
    if list.len() < 16 {
        list.push(msg);
    }
}

// ---------------------------------------------------------------------------
// Timing soundness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TimingVerdict {
    pub commands_checked: u64,
    pub violations: u64,
    pub examples: Vec<String>,
}

impl TimingVerdict {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BankObs {
    open: Option<u32>,
    opened_act: Cycle,
    last_pre: Option<Cycle>,
    last_col: Option<Cycle>,
}

/// Replays controller commands through an independent constraint table.
pub struct TimingAuditor {
    t: TimingParams,
    g: Geometry,
    window: ActWindow,
    banks: HashMap<BankKey, BankObs>,
    rank_last_act: HashMap<(u8, u8), Cycle>,
    rank_last_wr: HashMap<(u8, u8), Cycle>,
    rank_last_ref: HashMap<(u8, u8), Cycle>,
    chan_last_col: HashMap<u8, Cycle>,
    out: TimingVerdict,
}

impl TimingAuditor {
    pub fn new(g: &Geometry, t: &TimingParams, chips: usize) -> Self {
        TimingAuditor {
            t: t.clone(),
            g: g.clone(),
            window: ActWindow::new(t.t_nack, chips),
            banks: HashMap::new(),
            rank_last_act: HashMap::new(),
            rank_last_wr: HashMap::new(),
            rank_last_ref: HashMap::new(),
            chan_last_col: HashMap::new(),
            out: TimingVerdict::default(),
        }
    }

    fn fail(&mut self, ev: &CommandEvent, rule: &str) {
        self.out.violations += 1;
        let msg = format!(
            "{} @{} ch{} rank{} bank{} row {}: {rule}",
            ev.kind.code(),
            ev.cycle,
            ev.addr.channel,
            ev.addr.rank,
            ev.addr.flat_bank(&self.g),
            ev.addr.row
        );
        push_example(&mut self.out.examples, msg);
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        for resolved in self.window.observe(ev, &self.g.clone()) {
            let bank = self.banks.entry(resolved.key).or_default();
            if resolved.any_accepted() {
                bank.open = Some(resolved.row);
                bank.opened_act = resolved.issue;
                bank.last_col = None;
            }
        }
        if ev.origin != Origin::Controller {
            return;
        }
        self.out.commands_checked += 1;
        let key = bank_key(ev, &self.g);
        let rank = (ev.addr.channel, ev.addr.rank);
        let now = ev.cycle;
        let t = self.t.clone();
        match ev.kind {
            CmdKind::Act => {
                let bank = self.banks.get(&key).copied().unwrap_or_default();
                if let Some(open) = bank.open {
                    if open != ev.addr.row {
                        self.fail(ev, "ACT while another row is open");
                    }
                }
                if let Some(pre) = bank.last_pre {
                    if bank.open.is_none() && now < pre + t.t_rp {
                        self.fail(ev, "tRP");
                    }
                }
                if let Some(a) = self.rank_last_act.get(&rank) {
                    if now < a + t.t_rrd {
                        self.fail(ev, "tRRD");
                    }
                }
                if let Some(r) = self.rank_last_ref.get(&rank) {
                    if now < r + t.t_rfc {
                        self.fail(ev, "tRFC");
                    }
                }
                self.rank_last_act.insert(rank, now);
            }
            CmdKind::Pre => {
                let bank = self.banks.entry(key).or_default();
                if bank.open.is_none() {
                    // Legal only while still activating (window pending).
                    if !self.window.pending.contains_key(&key) {
                        self.fail(ev, "PRE on a closed bank");
                        return;
                    }
                }
                let act = if bank.open.is_some() {
                    Some(bank.opened_act)
                } else {
                    self.window.pending.get(&key).map(|(issue, ..)| *issue)
                };
                let last_col = bank.last_col;
                if let Some(a) = act {
                    if now < a + t.t_ras {
                        self.fail(ev, "tRAS");
                    }
                }
                if let Some(c) = last_col {
                    if now < c + t.t_bl {
                        self.fail(ev, "burst not drained before PRE");
                    }
                }
                let bank = self.banks.entry(key).or_default();
                bank.open = None;
                bank.last_pre = Some(now);
                // A pending ACT closed by this precharge never opens.
                self.window.pending.remove(&key);
            }
            CmdKind::Rd | CmdKind::Wr => {
                let bank = self.banks.get(&key).copied().unwrap_or_default();
                match bank.open {
                    Some(row) if row == ev.addr.row => {
                        if now < bank.opened_act + t.t_rcd {
                            self.fail(ev, "tRCD");
                        }
                    }
                    _ => self.fail(ev, "column command without the row open"),
                }
                if let Some(c) = bank.last_col {
                    if now < c + t.t_ccd_l {
                        self.fail(ev, "tCCD_L");
                    }
                }
                if let Some(c) = self.chan_last_col.get(&ev.addr.channel) {
                    if now < c + t.t_bl {
                        self.fail(ev, "data bus occupied (tBL)");
                    }
                }
                if ev.kind == CmdKind::Rd {
                    if let Some(w) = self.rank_last_wr.get(&rank) {
                        if now < w + t.t_wtr {
                            self.fail(ev, "tWTR");
                        }
                    }
                }
                self.banks.entry(key).or_default().last_col = Some(now);
                self.chan_last_col.insert(ev.addr.channel, now);
                if ev.kind == CmdKind::Wr {
                    self.rank_last_wr.insert(rank, now);
                }
            }
            CmdKind::Ref => {
                let banks_per_rank = self.g.banks_per_chip() as usize;
                for fb in 0..banks_per_rank {
                    let k = (ev.addr.channel, ev.addr.rank, fb);
                    let bank = self.banks.get(&k).copied().unwrap_or_default();
                    if bank.open.is_some() || self.window.pending.contains_key(&k) {
                        self.fail(ev, "REF with an open bank");
                        break;
                    }
                    if let Some(pre) = bank.last_pre {
                        if now < pre + t.t_rp {
                            self.fail(ev, "REF before tRP");
                            break;
                        }
                    }
                }
                if let Some(r) = self.rank_last_ref.get(&rank) {
                    if now < r + t.t_rfc {
                        self.fail(ev, "REF before tRFC");
                    }
                }
                self.rank_last_ref.insert(rank, now);
            }
            _ => {}
        }
    }

    pub fn finalize(mut self) -> TimingVerdict {
        self.window.pending.clear();
        self.out
    }
}

// ---------------------------------------------------------------------------
// Maintenance / access mutual exclusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ExclusionVerdict {
    pub maint_events: u64,
    pub violations: u64,
    pub examples: Vec<String>,
}

impl ExclusionVerdict {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone)]
struct MaintOp {
    mech: MechKind,
    whole_bank: bool,
    region: u32,
    /// Cycle of the op's most recent array command: the lock is provably
    /// held from the first through the last of them.
    last_event: Cycle,
}

/// Checks that no controller-open row ever shares a (sense-amp adjacent)
/// subarray with in-flight maintenance, per chip.
pub struct ExclusionAuditor {
    g: Geometry,
    t: TimingParams,
    bitline: BitlineMode,
    chips: usize,
    window: ActWindow,
    /// Per (bank, chip): the controller row this chip holds open.
    open: HashMap<(BankKey, usize), (u32, Cycle)>,
    /// Per (bank, chip): maintenance op reconstructed from its events.
    ops: HashMap<(BankKey, usize), MaintOp>,
    out: ExclusionVerdict,
}

impl ExclusionAuditor {
    pub fn new(g: &Geometry, t: &TimingParams, bitline: BitlineMode, chips: usize) -> Self {
        ExclusionAuditor {
            g: g.clone(),
            t: t.clone(),
            bitline,
            chips,
            window: ActWindow::new(t.t_nack, chips),
            open: HashMap::new(),
            ops: HashMap::new(),
            out: ExclusionVerdict::default(),
        }
    }

    fn chip_list(&self, sel: ChipSel) -> Vec<usize> {
        match sel {
            ChipSel::All => (0..self.chips).collect(),
            ChipSel::One(c) => vec![c as usize],
        }
    }

    fn span_blocks(&self, region: u32, whole_bank: bool, row: u32) -> bool {
        if whole_bank {
            return true;
        }
        let sa = row / self.g.rows_per_subarray;
        let (lo, hi) = blocked_subarrays(region, &self.g, self.bitline);
        sa >= lo && sa <= hi
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        let g = self.g.clone();
        for resolved in self.window.observe(ev, &g) {
            for (chip, &accepted) in resolved.accepted.iter().enumerate() {
                if !accepted {
                    continue;
                }
                self.open
                    .insert((resolved.key, chip), (resolved.row, resolved.issue));
                // An activation accepted while the lock was provably held
                // (at or before the op's latest array command) is a
                // violation from the other side.
                if let Some(op) = self.ops.get(&(resolved.key, chip)) {
                    if resolved.issue <= op.last_event
                        && self.span_blocks(op.region, op.whole_bank, resolved.row)
                    {
                        self.out.violations += 1;
                        push_example(
                            &mut self.out.examples,
                            format!(
                                "ACT row {} accepted at {} inside {:?} op span",
                                resolved.row, resolved.issue, op.mech
                            ),
                        );
                    }
                }
            }
        }
        match (ev.kind, ev.origin) {
            (CmdKind::Pre, Origin::Controller) => {
                let key = bank_key(ev, &self.g);
                for chip in 0..self.chips {
                    self.open.remove(&(key, chip));
                }
            }
            (CmdKind::Rd | CmdKind::Wr, Origin::Controller) => {
                // A column command needs the row open in every chip: reading
                // a partially activated row would return garbage.
                let key = bank_key(ev, &self.g);
                for chip in 0..self.chips {
                    if self.open.get(&(key, chip)).map(|&(r, _)| r) != Some(ev.addr.row) {
                        self.out.violations += 1;
                        push_example(
                            &mut self.out.examples,
                            format!(
                                "{} row {} at {} but chip {} lacks the open row",
                                ev.kind.code(),
                                ev.addr.row,
                                ev.cycle,
                                chip
                            ),
                        );
                        break;
                    }
                }
            }
            (
                CmdKind::MaintAct | CmdKind::MaintPre | CmdKind::MaintRd | CmdKind::MaintWb,
                Origin::Mech { kind, chip },
            ) => {
                self.out.maint_events += 1;
                let key = bank_key(ev, &self.g);
                let region = ev.addr.row / self.g.region_rows();
                let whole_bank = kind == MechKind::Scrub;
                for c in self.chip_list(chip) {
                    // Same-region events within one row cycle belong to one
                    // op; anything else is a fresh lock.
                    let op = self.ops.entry((key, c)).or_insert(MaintOp {
                        mech: kind,
                        whole_bank,
                        region,
                        last_event: ev.cycle,
                    });
                    let same_op = op.mech == kind
                        && op.whole_bank == whole_bank
                        && (whole_bank || op.region == region)
                        && ev.cycle <= op.last_event + self.t.t_rc();
                    if !same_op {
                        *op = MaintOp {
                            mech: kind,
                            whole_bank,
                            region,
                            last_event: ev.cycle,
                        };
                    }
                    op.last_event = ev.cycle;
                    let op_region = op.region;
                    let op_whole = op.whole_bank;
                    if let Some(&(row, _)) = self.open.get(&(key, c)) {
                        if self.span_blocks(op_region, op_whole, row) {
                            self.out.violations += 1;
                            push_example(
                                &mut self.out.examples,
                                format!(
                                    "{:?} touches row {} at {} while chip {} holds row {} open",
                                    kind, ev.addr.row, ev.cycle, c, row
                                ),
                            );
                        }
                    }
                }
            }
            _ => {}
        }
    }

    pub fn finalize(self) -> ExclusionVerdict {
        self.out
    }
}

// ---------------------------------------------------------------------------
// Refresh coverage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AuditResult {
    Pass,
    Fail,
    /// The observed span was too short to judge.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefreshVerdict {
    pub result: AuditResult,
    pub max_gap: Cycle,
    pub max_gap_weak: Cycle,
    pub max_gap_strong: Cycle,
    pub bound: Cycle,
    pub bound_strong: Cycle,
    pub violations: u64,
    pub offending_rows: Vec<u32>,
    pub span: Cycle,
}

impl RefreshVerdict {
    /// Conclusive pass: the span covered at least two windows and no gap
    /// exceeded its bound.
    pub fn pass(&self) -> bool {
        matches!(self.result, AuditResult::Pass)
    }

    /// A proven violation (an inconclusive span is not a failure).
    pub fn failed(&self) -> bool {
        matches!(self.result, AuditResult::Fail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefreshMode {
    /// Fixed-rate or baseline: every row against one bound.
    Uniform,
    /// Weak rows against `bound`, the rest against `bound_strong`.
    Variable { weak: Vec<u32> },
}

/// Tracks per-row inter-refresh gaps per chip. Accepted activations count as
/// refreshes too (an activation restores the row), as do all maintenance row
/// operations and the rows covered by each baseline REF.
pub struct RefreshAuditor {
    g: Geometry,
    chips: usize,
    mode: RefreshMode,
    weak_mask: Option<Vec<bool>>,
    bound: Cycle,
    bound_strong: Cycle,
    min_span: Cycle,
    window: ActWindow,
    /// last refresh cycle, per (bank, chip), indexed by row.
    last: HashMap<(BankKey, usize), Vec<Cycle>>,
    max_gap_weak: Cycle,
    max_gap_strong: Cycle,
    violations: u64,
    offending: Vec<u32>,
    /// Baseline REF cursor per (channel, rank).
    ref_cursor: HashMap<(u8, u8), u64>,
}

impl RefreshAuditor {
    pub fn new(
        g: &Geometry,
        t: &TimingParams,
        chips: usize,
        mode: RefreshMode,
        bound: Cycle,
        bound_strong: Cycle,
    ) -> Self {
        let weak_mask = match &mode {
            RefreshMode::Uniform => None,
            RefreshMode::Variable { weak } => {
                let mut mask = vec![false; g.rows_per_bank as usize];
                for &w in weak {
                    mask[w as usize] = true;
                }
                Some(mask)
            }
        };
        RefreshAuditor {
            g: g.clone(),
            chips,
            mode,
            weak_mask,
            bound,
            bound_strong,
            min_span: 2 * t.t_refw,
            window: ActWindow::new(t.t_nack, chips),
            last: HashMap::new(),
            max_gap_weak: 0,
            max_gap_strong: 0,
            violations: 0,
            offending: Vec::new(),
            ref_cursor: HashMap::new(),
        }
    }

    fn is_strong(&self, row: u32) -> bool {
        match &self.weak_mask {
            None => false,
            Some(mask) => !mask[row as usize],
        }
    }

    fn refresh(&mut self, key: BankKey, chip: usize, row: u32, cycle: Cycle) {
        let rows = self.g.rows_per_bank as usize;
        let last = self
            .last
            .entry((key, chip))
            .or_insert_with(|| vec![0; rows]);
        let gap = cycle - last[row as usize];
        last[row as usize] = cycle;
        self.record_gap(row, gap);
    }

    fn record_gap(&mut self, row: u32, gap: Cycle) {
        let strong = self.is_strong(row);
        let bound = if strong {
            self.bound_strong
        } else {
            self.bound
        };
        if strong {
            self.max_gap_strong = self.max_gap_strong.max(gap);
        } else {
            self.max_gap_weak = self.max_gap_weak.max(gap);
        }
        if gap > bound {
            self.violations += 1;
            if self.offending.len() < 16 && !self.offending.contains(&row) {
                self.offending.push(row);
            }
        }
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        let g = self.g.clone();
        for resolved in self.window.observe(ev, &g) {
            for (chip, &accepted) in resolved.accepted.iter().enumerate() {
                if accepted {
                    self.refresh(resolved.key, chip, resolved.row, resolved.issue);
                }
            }
        }
        match (ev.kind, ev.origin) {
            (CmdKind::MaintAct, Origin::Mech { chip, .. }) => {
                let key = bank_key(ev, &self.g);
                let chips: Vec<usize> = match chip {
                    ChipSel::All => (0..self.chips).collect(),
                    ChipSel::One(c) => vec![c as usize],
                };
                for c in chips {
                    self.refresh(key, c, ev.addr.row, ev.cycle);
                }
            }
            (CmdKind::Ref, Origin::Controller) => {
                // One REF covers rows_per_bank / 8192 consecutive rows in
                // every bank of the rank.
                let rank = (ev.addr.channel, ev.addr.rank);
                let cursor = self.ref_cursor.entry(rank).or_insert(0);
                let per_ref = u64::from(self.g.rows_per_bank / 8192).max(1);
                let start = (*cursor * per_ref) % u64::from(self.g.rows_per_bank);
                *cursor += 1;
                for fb in 0..self.g.banks_per_chip() as usize {
                    let key = (ev.addr.channel, ev.addr.rank, fb);
                    for chip in 0..self.chips {
                        for i in 0..per_ref {
                            let row = ((start + i) % u64::from(self.g.rows_per_bank)) as u32;
                            self.refresh(key, chip, row, ev.cycle);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    pub fn finalize(mut self, end: Cycle) -> RefreshVerdict {
        // Trailing gaps: every tracked bank's rows from their last refresh to
        // the end of the observed span.
        let mut tracked: Vec<(BankKey, usize)> = self.last.keys().copied().collect();
        tracked.sort_unstable();
        for key in tracked {
            let rows = std::mem::take(self.last.get_mut(&key).unwrap());
            for (row, &last) in rows.iter().enumerate() {
                self.record_gap(row as u32, end - last);
            }
        }
        let result = if end < self.min_span {
            AuditResult::Inconclusive
        } else if self.violations == 0 {
            AuditResult::Pass
        } else {
            AuditResult::Fail
        };
        RefreshVerdict {
            result,
            max_gap: self.max_gap_weak.max(self.max_gap_strong),
            max_gap_weak: self.max_gap_weak,
            max_gap_strong: self.max_gap_strong,
            bound: self.bound,
            bound_strong: match self.mode {
                RefreshMode::Uniform => self.bound,
                RefreshMode::Variable { .. } => self.bound_strong,
            },
            violations: self.violations,
            offending_rows: self.offending,
            span: end,
        }
    }
}

// ---------------------------------------------------------------------------
// RowHammer activation budget
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowHammerVerdict {
    pub max_count: u64,
    pub act_max: u64,
    /// Whether max_count <= act_max is enforced (deterministic protection)
    /// or merely reported (probabilistic).
    pub enforced: bool,
    pub violations: u64,
    pub victim_ops: u64,
    pub offending_rows: Vec<u32>,
}

impl RowHammerVerdict {
    pub fn pass(&self) -> bool {
        !self.enforced || self.violations == 0
    }
}

#[derive(Debug, Default, Clone)]
struct VictimBatch {
    rows: Vec<u32>,
    last: Cycle,
}

/// Exact per-row activation counter, reset when a row's neighbors are victim
/// refreshed and at every refresh-window boundary.
pub struct RowHammerAuditor {
    g: Geometry,
    t: TimingParams,
    chips: usize,
    act_max: u64,
    blast: u32,
    enforced: bool,
    window: ActWindow,
    counts: HashMap<(BankKey, usize), HashMap<u32, u64>>,
    batches: HashMap<(BankKey, usize), VictimBatch>,
    next_window_reset: Cycle,
    max_count: u64,
    violations: u64,
    victim_ops: u64,
    offending: Vec<u32>,
}

impl RowHammerAuditor {
    pub fn new(
        g: &Geometry,
        t: &TimingParams,
        chips: usize,
        act_max: u64,
        blast: u32,
        enforced: bool,
    ) -> Self {
        RowHammerAuditor {
            g: g.clone(),
            t: t.clone(),
            chips,
            act_max,
            blast,
            enforced,
            window: ActWindow::new(t.t_nack, chips),
            counts: HashMap::new(),
            batches: HashMap::new(),
            next_window_reset: t.t_refw,
            max_count: 0,
            violations: 0,
            victim_ops: 0,
            offending: Vec::new(),
        }
    }

    fn flush_batch(&mut self, slot: (BankKey, usize)) {
        let Some(batch) = self.batches.remove(&slot) else {
            return;
        };
        self.victim_ops += 1;
        let min = *batch.rows.iter().min().unwrap();
        let max = *batch.rows.iter().max().unwrap();
        let counts = self.counts.entry(slot).or_default();
        let lo = min.saturating_sub(self.blast);
        let hi = (max + self.blast).min(self.g.rows_per_bank - 1);
        for candidate in lo..=hi {
            let neighbors = {
                let lo = candidate.saturating_sub(self.blast);
                let hi = (candidate + self.blast).min(self.g.rows_per_bank - 1);
                (lo..=hi).filter(|&v| v != candidate)
            };
            let mut all_in = true;
            let mut any = false;
            for n in neighbors {
                any = true;
                if !batch.rows.contains(&n) {
                    all_in = false;
                    break;
                }
            }
            if any && all_in {
                counts.remove(&candidate);
            }
        }
    }

    fn count_act(&mut self, slot: (BankKey, usize), row: u32) {
        let count = self.counts.entry(slot).or_default().entry(row).or_insert(0);
        *count += 1;
        let c = *count;
        self.max_count = self.max_count.max(c);
        if c > self.act_max {
            self.violations += 1;
            if self.offending.len() < 16 && !self.offending.contains(&row) {
                self.offending.push(row);
            }
        }
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        while ev.cycle >= self.next_window_reset {
            // Every row is refreshed within the window, clearing disturbance.
            let mut slots: Vec<_> = self.batches.keys().copied().collect();
            slots.sort_unstable();
            for slot in slots {
                self.flush_batch(slot);
            }
            self.counts.clear();
            self.next_window_reset += self.t.t_refw;
        }
        // Close any victim batch that has gone quiet.
        let mut stale: Vec<_> = self
            .batches
            .iter()
            .filter(|(_, b)| ev.cycle > b.last + self.t.t_rc() + self.t.ari)
            .map(|(k, _)| *k)
            .collect();
        stale.sort_unstable();
        for slot in stale {
            self.flush_batch(slot);
        }

        let g = self.g.clone();
        for resolved in self.window.observe(ev, &g) {
            for (chip, &accepted) in resolved.accepted.iter().enumerate() {
                if accepted {
                    self.count_act((resolved.key, chip), resolved.row);
                }
            }
        }
        if let (
            CmdKind::MaintAct,
            Origin::Mech {
                kind: MechKind::DetRh | MechKind::ProbRh | MechKind::ProbRhPlus,
                chip,
            },
        ) = (ev.kind, ev.origin)
        {
            let key = bank_key(ev, &self.g);
            let chips: Vec<usize> = match chip {
                ChipSel::All => (0..self.chips).collect(),
                ChipSel::One(c) => vec![c as usize],
            };
            for c in chips {
                let batch = self.batches.entry((key, c)).or_default();
                batch.rows.push(ev.addr.row);
                batch.last = ev.cycle;
            }
        }
    }

    pub fn finalize(mut self) -> RowHammerVerdict {
        let mut slots: Vec<_> = self.batches.keys().copied().collect();
        slots.sort_unstable();
        for slot in slots {
            self.flush_batch(slot);
        }
        RowHammerVerdict {
            max_count: self.max_count,
            act_max: self.act_max,
            enforced: self.enforced,
            violations: self.violations,
            victim_ops: self.victim_ops,
            offending_rows: self.offending,
        }
    }
}

// ---------------------------------------------------------------------------
// Scrub timing and coverage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScrubVerdict {
    pub result: AuditResult,
    pub rows_scrubbed: u64,
    pub duration_violations: u64,
    pub double_cleared: u64,
    pub faults_cleared: u64,
    pub max_gap: Cycle,
    pub bound: Cycle,
    pub coverage_violations: u64,
    pub examples: Vec<String>,
}

impl ScrubVerdict {
    pub fn pass(&self) -> bool {
        matches!(self.result, AuditResult::Pass)
    }

    pub fn failed(&self) -> bool {
        matches!(self.result, AuditResult::Fail)
    }
}

/// Verifies the scrub latency model (tRCD + codewords*tBL + tRP, plus one
/// burst per corrected codeword), single clearing of every flagged fault,
/// and per-row scrub coverage.
pub struct ScrubAuditor {
    g: Geometry,
    t: TimingParams,
    codewords: u32,
    bound: Cycle,
    min_span: Cycle,
    last: HashMap<(BankKey, usize), Vec<Cycle>>,
    current: HashMap<(BankKey, usize), (u32, Cycle, u64)>, // row, act cycle, write-backs
    wb_counts: HashMap<(BankKey, usize, u32, u16), u32>,
    chips: usize,
    rows_scrubbed: u64,
    duration_violations: u64,
    max_gap: Cycle,
    coverage_violations: u64,
    examples: Vec<String>,
}

impl ScrubAuditor {
    pub fn new(
        g: &Geometry,
        t: &TimingParams,
        chips: usize,
        codewords: u32,
        bound: Cycle,
        min_span: Cycle,
    ) -> Self {
        ScrubAuditor {
            g: g.clone(),
            t: t.clone(),
            codewords,
            bound,
            min_span,
            last: HashMap::new(),
            current: HashMap::new(),
            wb_counts: HashMap::new(),
            chips,
            rows_scrubbed: 0,
            duration_violations: 0,
            max_gap: 0,
            coverage_violations: 0,
            examples: Vec::new(),
        }
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        let Origin::Mech {
            kind: MechKind::Scrub,
            chip,
        } = ev.origin
        else {
            return;
        };
        let key = bank_key(ev, &self.g);
        let chips: Vec<usize> = match chip {
            ChipSel::All => (0..self.chips).collect(),
            ChipSel::One(c) => vec![c as usize],
        };
        for c in chips {
            let slot = (key, c);
            match ev.kind {
                CmdKind::MaintAct => {
                    self.current.insert(slot, (ev.addr.row, ev.cycle, 0));
                }
                CmdKind::MaintWb => {
                    if let Some(cur) = self.current.get_mut(&slot) {
                        cur.2 += 1;
                    }
                    let wb = self
                        .wb_counts
                        .entry((key, c, ev.addr.row, ev.addr.column))
                        .or_insert(0);
                    *wb += 1;
                }
                CmdKind::MaintPre => {
                    let Some((row, act, wbs)) = self.current.remove(&slot) else {
                        continue;
                    };
                    self.rows_scrubbed += 1;
                    let expected =
                        self.t.t_rcd + u64::from(self.codewords) * self.t.t_bl + wbs * self.t.t_bl;
                    let got = ev.cycle - act;
                    if got != expected {
                        self.duration_violations += 1;
                        push_example(
                            &mut self.examples,
                            format!("row {row} scrub took {got} cycles, expected {expected}"),
                        );
                    }
                    let rows = self.g.rows_per_bank as usize;
                    let last = self.last.entry(slot).or_insert_with(|| vec![0; rows]);
                    let gap = act - last[row as usize];
                    last[row as usize] = act;
                    self.max_gap = self.max_gap.max(gap);
                    if gap > self.bound {
                        self.coverage_violations += 1;
                    }
                }
                _ => {}
            }
        }
    }

    pub fn finalize(mut self, end: Cycle) -> ScrubVerdict {
        let mut tracked: Vec<_> = self.last.keys().copied().collect();
        tracked.sort_unstable();
        for slot in tracked {
            let rows = std::mem::take(self.last.get_mut(&slot).unwrap());
            for &last in &rows {
                let gap = end - last;
                self.max_gap = self.max_gap.max(gap);
                if gap > self.bound {
                    self.coverage_violations += 1;
                }
            }
        }
        let mut double = 0;
        let mut wbs: Vec<_> = self.wb_counts.iter().map(|(k, v)| (*k, *v)).collect();
        wbs.sort_unstable();
        for ((_, _, row, cw), n) in wbs {
            if n > 1 {
                double += 1;
                push_example(
                    &mut self.examples,
                    format!("fault ({row},{cw}) cleared {n} times"),
                );
            }
        }
        let result = if end < self.min_span {
            AuditResult::Inconclusive
        } else if self.duration_violations == 0 && double == 0 && self.coverage_violations == 0 {
            AuditResult::Pass
        } else {
            AuditResult::Fail
        };
        ScrubVerdict {
            result,
            rows_scrubbed: self.rows_scrubbed,
            duration_violations: self.duration_violations,
            double_cleared: double,
            faults_cleared: self.wb_counts.len() as u64,
            max_gap: self.max_gap,
            bound: self.bound,
            coverage_violations: self.coverage_violations,
            examples: self.examples,
        }
    }
}

// ---------------------------------------------------------------------------
// Retry pacing / forward progress
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RetryVerdict {
    /// Rejected activations that eventually were accepted.
    pub streams_resolved: u64,
    /// Rejected activations still unresolved at the end of the run.
    pub streams_open: u64,
    pub retry_gaps: u64,
    /// Gaps that deviated from exactly one ARI (same-cycle bus collisions
    /// slip a retry; the deviation is reported, not hidden).
    pub inexact_gaps: u64,
    pub max_gap_deviation: Cycle,
    /// Longest first-rejection-to-acceptance span.
    pub max_resolve: Cycle,
    pub examples: Vec<String>,
}

impl RetryVerdict {
    pub fn pass(&self, max_allowed_deviation: Cycle) -> bool {
        self.streams_open == 0 && self.max_gap_deviation <= max_allowed_deviation
    }
}

#[derive(Debug, Clone)]
struct RetryStream {
    row: u32,
    issues: Vec<Cycle>,
}

/// Verifies that each rejected request's retries are spaced exactly one ARI
/// apart until acceptance (the premise of the forward-progress argument).
/// Rejections of other rows probing the same bank while a stream is open are
/// outside the paced stream and tracked separately.
pub struct RetryAuditor {
    g: Geometry,
    t: TimingParams,
    window: ActWindow,
    streams: HashMap<BankKey, RetryStream>,
    out: RetryVerdict,
}

impl RetryAuditor {
    pub fn new(g: &Geometry, t: &TimingParams, chips: usize) -> Self {
        RetryAuditor {
            g: g.clone(),
            t: t.clone(),
            window: ActWindow::new(t.t_nack, chips),
            streams: HashMap::new(),
            out: RetryVerdict::default(),
        }
    }

    fn resolved(&mut self, r: ResolvedAct) {
        let fully_accepted = r.accepted.iter().all(|&a| a);
        match self.streams.get_mut(&r.key) {
            Some(stream) if stream.row == r.row => {
                stream.issues.push(r.issue);
                if fully_accepted {
                    let stream = self.streams.remove(&r.key).unwrap();
                    self.out.streams_resolved += 1;
                    for pair in stream.issues.windows(2) {
                        self.out.retry_gaps += 1;
                        let gap = pair[1] - pair[0];
                        let dev = gap.abs_diff(self.t.ari);
                        if dev != 0 {
                            self.out.inexact_gaps += 1;
                            self.out.max_gap_deviation = self.out.max_gap_deviation.max(dev);
                            push_example(
                                &mut self.out.examples,
                                format!(
                                    "row {} retry gap {} (ari {}) at {}",
                                    stream.row, gap, self.t.ari, pair[1]
                                ),
                            );
                        }
                    }
                    let span = stream.issues.last().unwrap() - stream.issues[0];
                    self.out.max_resolve = self.out.max_resolve.max(span);
                }
            }
            Some(_) => {
                // Probe of another row while a stream is open: not paced.
            }
            None => {
                if !fully_accepted {
                    self.streams.insert(
                        r.key,
                        RetryStream {
                            row: r.row,
                            issues: vec![r.issue],
                        },
                    );
                }
            }
        }
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        let g = self.g.clone();
        for r in self.window.observe(ev, &g) {
            self.resolved(r);
        }
    }

    pub fn finalize(mut self) -> RetryVerdict {
        for r in self.window.drain() {
            self.resolved(r);
        }
        self.out.streams_open = self.streams.len() as u64;
        self.out
    }
}
