//! The SMD chip extension: per-bank Lock Region Table, lock controller with
//! ACT rejection, open-bitline adjacency blocking, the per-region ACT retry
//! interval gate, and the executor that turns granted maintenance operations
//! into timed array work.
//!
//! Chips in a rank either share one state (lockstep) or evolve independently
//! (divergence); the simulator instantiates one `SmdChip` per logical chip.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dram::{
    ChipSel, CmdKind, CommandEvent, Cycle, DramAddress, Geometry, MechKind, Origin, TimingParams,
};
use crate::maintenance::{Engine, LockScope, OpOutcome, OpPlan, RowJob};

/// Sense-amplifier sharing between adjacent subarrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BitlineMode {
    /// Adjacent subarrays share sense amplifiers: locking a region also
    /// blocks one neighboring subarray on each existing side.
    #[default]
    Open,
    /// Dedicated sense amplifiers: only the region's own subarrays block.
    Folded,
}

/// Inclusive subarray range a locked region makes inaccessible.
pub fn blocked_subarrays(region: u32, g: &Geometry, mode: BitlineMode) -> (u32, u32) {
    let first = region * g.subarrays_per_region;
    let last = first + g.subarrays_per_region - 1;
    match mode {
        BitlineMode::Folded => (first, last),
        BitlineMode::Open => (
            first.saturating_sub(1),
            (last + 1).min(g.subarrays_per_bank() - 1),
        ),
    }
}

/// Per-bank lock bits plus holder and expected completion per region.
#[derive(Debug, Clone)]
pub struct LockRegionTable {
    holder: Vec<Option<MechKind>>,
    deadline: Vec<Cycle>,
}

impl LockRegionTable {
    pub fn new(regions: u32) -> Self {
        LockRegionTable {
            holder: vec![None; regions as usize],
            deadline: vec![0; regions as usize],
        }
    }

    pub fn regions(&self) -> u32 {
        self.holder.len() as u32
    }

    pub fn is_held(&self, region: u32) -> bool {
        self.holder[region as usize].is_some()
    }

    pub fn holder(&self, region: u32) -> Option<MechKind> {
        self.holder[region as usize]
    }

    pub fn any_held(&self) -> bool {
        self.holder.iter().any(Option::is_some)
    }

    pub fn held_regions(&self) -> impl Iterator<Item = u32> + '_ {
        self.holder
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|_| i as u32))
    }

    fn hold(&mut self, region: u32, mech: MechKind, deadline: Cycle) {
        debug_assert!(self.holder[region as usize].is_none());
        self.holder[region as usize] = Some(mech);
        self.deadline[region as usize] = deadline;
    }

    /// Clears the lock bit. Releasing a region one does not hold is an
    /// internal invariant violation and aborts.
    pub fn release(&mut self, region: u32, mech: MechKind) {
        match self.holder[region as usize] {
            Some(h) if h == mech => {
                self.holder[region as usize] = None;
                self.deadline[region as usize] = 0;
            }
            other => panic!("release of region {region} by {mech:?} but holder is {other:?}"),
        }
    }
}

/// Cycle of the last lock release per region: no new maintenance lock is
/// granted on a region until a full ARI has elapsed after the release.
#[derive(Debug, Clone)]
pub struct AriGate {
    last_release: Vec<Option<Cycle>>,
}

impl AriGate {
    pub fn new(regions: u32) -> Self {
        AriGate {
            last_release: vec![None; regions as usize],
        }
    }

    pub fn permits(&self, region: u32, now: Cycle, ari: Cycle) -> bool {
        self.last_release[region as usize].is_none_or(|rel| now >= rel + ari)
    }

    pub fn stamp(&mut self, region: u32, now: Cycle) {
        self.last_release[region as usize] = Some(now);
    }
}

/// One chip's response to a row activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChipAct {
    Accept,
    /// The chip already has this row open (an earlier partial activation)
    /// and simply ignores the command.
    AcceptIgnored,
    /// Rejected by the given mechanism's lock: the negative acknowledgment
    /// arrives t_nack cycles after the ACT.
    Nack(MechKind),
}

/// Rank-level view of the per-chip responses.
#[derive(Debug, Clone)]
pub struct ActResponse {
    pub per_chip: Vec<ChipAct>,
}

impl ActResponse {
    pub fn nack_count(&self) -> usize {
        self.per_chip
            .iter()
            .filter(|c| matches!(c, ChipAct::Nack(_)))
            .count()
    }

    pub fn full_accept(&self) -> bool {
        self.nack_count() == 0
    }

    pub fn full_nack(&self) -> bool {
        self.nack_count() == self.per_chip.len()
    }

    /// Some chips rejected while others accepted; only possible when chips
    /// diverge.
    pub fn partial(&self) -> bool {
        !self.full_accept() && !self.full_nack()
    }
}

#[derive(Debug, Clone)]
struct CurrentRow {
    done_at: Cycle,
    events: VecDeque<(Cycle, CmdKind, u32, u16)>, // (cycle, kind, row, column)
}

/// A granted maintenance operation being executed against the array.
#[derive(Debug, Clone)]
struct OngoingOp {
    mech: MechKind,
    engine_idx: usize,
    scope: LockScope,
    jobs: VecDeque<RowJob>,
    current: Option<CurrentRow>,
    hold_until: Option<Cycle>,
    rows_done: u32,
    pause_requested: bool,
}

impl OngoingOp {
    fn schedule_row(job: &RowJob, start: Cycle, t: &TimingParams) -> CurrentRow {
        let mut events = VecDeque::new();
        match job {
            RowJob::Refresh { row } => {
                events.push_back((start, CmdKind::MaintAct, *row, 0));
                events.push_back((start + t.t_ras, CmdKind::MaintPre, *row, 0));
                CurrentRow {
                    done_at: start + t.t_rc(),
                    events,
                }
            }
            RowJob::Scrub {
                row,
                codewords,
                faulty,
            } => {
                events.push_back((start, CmdKind::MaintAct, *row, 0));
                let mut cursor = start + t.t_rcd;
                let mut faulty = faulty.iter().peekable();
                // One burst slot per codeword read; a faulty codeword costs
                // one extra burst slot for the corrected write-back (2.5 ns).
                for cw in 0..*codewords {
                    events.push_back((cursor, CmdKind::MaintRd, *row, cw));
                    cursor += t.t_bl;
                    if faulty.peek() == Some(&&cw) {
                        faulty.next();
                        events.push_back((cursor, CmdKind::MaintWb, *row, cw));
                        cursor += t.t_bl;
                    }
                }
                events.push_back((cursor, CmdKind::MaintPre, *row, 0));
                CurrentRow {
                    done_at: cursor + t.t_rp,
                    events,
                }
            }
        }
    }
}

/// Per-bank chip state: lock table, retry gate, the chip-local open row and
/// any maintenance work in flight.
#[derive(Debug, Clone)]
pub struct ChipBank {
    pub lrt: LockRegionTable,
    pub ari: AriGate,
    /// Row this chip currently drives (activating or active). Diverges from
    /// the controller's view only across partial activations.
    pub open_row: Option<u32>,
    ongoing: Vec<OngoingOp>,
    pub engines: Vec<Engine>,
}

/// One SMD chip (or, in lockstep mode, the shared state of all chips of a
/// rank).
pub struct SmdChip {
    pub sel: ChipSel,
    channel: u8,
    rank: u8,
    pub banks: Vec<ChipBank>,
    pub rng: ChaCha8Rng,
    /// Allow two mechanisms to hold two different regions of one bank.
    /// Off by default: one maintenance op per bank at a time.
    multi_mech: bool,
    pause_policy: bool,
    bitline: BitlineMode,
}

impl SmdChip {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sel: ChipSel,
        channel: u8,
        rank: u8,
        g: &Geometry,
        engines_per_bank: Vec<Vec<Engine>>,
        rng: ChaCha8Rng,
        multi_mech: bool,
        pause_policy: bool,
        bitline: BitlineMode,
    ) -> Self {
        let regions = g.regions_per_bank();
        let banks = engines_per_bank
            .into_iter()
            .map(|mut engines| {
                engines.sort_by_key(|e| e.priority());
                ChipBank {
                    lrt: LockRegionTable::new(regions),
                    ari: AriGate::new(regions),
                    open_row: None,
                    ongoing: Vec::new(),
                    engines,
                }
            })
            .collect();
        SmdChip {
            sel,
            channel,
            rank,
            banks,
            rng,
            multi_mech,
            pause_policy,
            bitline,
        }
    }

    fn scope_regions(scope: LockScope, regions: u32) -> std::ops::Range<u32> {
        match scope {
            LockScope::Region(r) => r..r + 1,
            LockScope::WholeBank => 0..regions,
        }
    }

    /// Lock grant test and commit. Granted iff every requested region is
    /// unheld, its ARI gap has elapsed, and no chip-open row lies in the
    /// blocked subarray span.
    pub fn try_lock(
        bank: &mut ChipBank,
        scope: LockScope,
        mech: MechKind,
        g: &Geometry,
        t: &TimingParams,
        bitline: BitlineMode,
        now: Cycle,
    ) -> bool {
        let regions = Self::scope_regions(scope, g.regions_per_bank());
        for region in regions.clone() {
            if bank.lrt.is_held(region) {
                return false;
            }
            if !bank.ari.permits(region, now, t.ari) {
                return false;
            }
            let (lo, hi) = blocked_subarrays(region, g, bitline);
            if let Some(row) = bank.open_row {
                let sa = row / g.rows_per_subarray;
                if sa >= lo && sa <= hi {
                    return false;
                }
            }
            // Two concurrent locks may not share sense amplifiers either.
            for held in bank.lrt.held_regions() {
                let (hlo, hhi) = blocked_subarrays(held, g, bitline);
                if lo <= hhi && hlo <= hi {
                    return false;
                }
            }
        }
        for region in regions {
            bank.lrt.hold(region, mech, now);
        }
        true
    }

    /// The chip's response to an ACT for `row`. An accepted activation
    /// updates the chip-local open row and feeds the RowHammer trackers.
    pub fn on_act(&mut self, flat_bank: usize, row: u32, g: &Geometry, now: Cycle) -> ChipAct {
        let bank = &mut self.banks[flat_bank];
        match bank.open_row {
            Some(open) if open == row => return ChipAct::AcceptIgnored,
            Some(open) => panic!(
                "controller activated row {row} while chip holds row {open} open (bank {flat_bank}, cycle {now})"
            ),
            None => {}
        }
        let sa = row / g.rows_per_subarray;
        let blocking = bank.lrt.held_regions().find(|&region| {
            let (lo, hi) = blocked_subarrays(region, g, self.bitline);
            sa >= lo && sa <= hi
        });
        if let Some(region) = blocking {
            let mech = bank.lrt.holder(region).expect("held region has holder");
            if self.pause_policy {
                Self::flag_pause(bank, region, g, self.bitline);
            }
            return ChipAct::Nack(mech);
        }
        bank.open_row = Some(row);
        for engine in &mut bank.engines {
            engine.on_act(row, &mut self.rng);
        }
        ChipAct::Accept
    }

    /// Controller precharged the bank.
    pub fn on_pre(&mut self, flat_bank: usize) {
        self.banks[flat_bank].open_row = None;
    }

    fn flag_pause(bank: &mut ChipBank, region: u32, g: &Geometry, bitline: BitlineMode) {
        let sa_span = blocked_subarrays(region, g, bitline);
        for op in &mut bank.ongoing {
            let covers = Self::scope_regions(op.scope, g.regions_per_bank()).any(|r| {
                let (lo, hi) = blocked_subarrays(r, g, bitline);
                lo <= sa_span.1 && sa_span.0 <= hi
            });
            if covers {
                op.pause_requested = true;
            }
        }
    }

    /// Pause request: the holder finishes only its in-flight row, then
    /// releases; it re-acquires the lock after the controller precharges the
    /// bank. No-op when the pause policy is disabled. Returns the paused
    /// mechanism as a resume token.
    pub fn pause_request(
        &mut self,
        flat_bank: usize,
        region: u32,
        g: &Geometry,
    ) -> Option<MechKind> {
        if !self.pause_policy {
            return None;
        }
        let bitline = self.bitline;
        let bank = &mut self.banks[flat_bank];
        let holder = bank.lrt.holder(region)?;
        Self::flag_pause(bank, region, g, bitline);
        Some(holder)
    }

    /// Advances every bank's maintenance timelines by one cycle, emitting the
    /// array commands that happen at `now`.
    pub fn step(
        &mut self,
        now: Cycle,
        g: &Geometry,
        t: &TimingParams,
        emit: &mut dyn FnMut(CommandEvent),
    ) {
        let banks_per_group = g.banks_per_group;
        for flat_bank in 0..self.banks.len() {
            let addr_base = DramAddress {
                channel: self.channel,
                rank: self.rank,
                bankgroup: (flat_bank as u32 / banks_per_group) as u8,
                bank: (flat_bank as u32 % banks_per_group) as u8,
                row: 0,
                column: 0,
            };
            let bank = &mut self.banks[flat_bank];

            // 1. Advance in-flight operations.
            let mut idx = 0;
            while idx < bank.ongoing.len() {
                let finished = {
                    let op = &mut bank.ongoing[idx];
                    Self::advance_op(op, now, t, addr_base, self.sel, emit)
                };
                if finished {
                    let op = bank.ongoing.remove(idx);
                    for region in Self::scope_regions(op.scope, g.regions_per_bank()) {
                        bank.lrt.release(region, op.mech);
                        bank.ari.stamp(region, now);
                    }
                    let outcome = OpOutcome {
                        rows_done: op.rows_done,
                        remaining: op.jobs.into(),
                    };
                    bank.engines[op.engine_idx].on_complete(outcome);
                } else {
                    idx += 1;
                }
            }

            // 2. Interval timers.
            for engine in &mut bank.engines {
                engine.tick(now);
            }

            // 3. Lock attempts, in fixed priority order. A mechanism that
            // fails simply retries next cycle.
            for engine_idx in 0..bank.engines.len() {
                if !bank.ongoing.is_empty() && !self.multi_mech {
                    break;
                }
                if bank.ongoing.iter().any(|op| op.engine_idx == engine_idx) {
                    continue;
                }
                let Some(scope) = bank.engines[engine_idx].lock_request(now) else {
                    continue;
                };
                let mech = bank.engines[engine_idx].kind();
                if Self::try_lock(bank, scope, mech, g, t, self.bitline, now) {
                    let plan = bank.engines[engine_idx].begin_op(now);
                    let mut op = Self::make_op(plan, mech, engine_idx, now, t);
                    // Emit this op's cycle-zero work immediately.
                    let finished = Self::advance_op(&mut op, now, t, addr_base, self.sel, emit);
                    if finished {
                        for region in Self::scope_regions(op.scope, g.regions_per_bank()) {
                            bank.lrt.release(region, op.mech);
                            bank.ari.stamp(region, now);
                        }
                        bank.engines[engine_idx].on_complete(OpOutcome {
                            rows_done: op.rows_done,
                            remaining: op.jobs.into(),
                        });
                    } else {
                        bank.ongoing.push(op);
                    }
                }
            }
        }
    }

    fn make_op(
        plan: OpPlan,
        mech: MechKind,
        engine_idx: usize,
        now: Cycle,
        _t: &TimingParams,
    ) -> OngoingOp {
        let hold_until = plan.hold.map(|h| now + h);
        OngoingOp {
            mech,
            engine_idx,
            scope: plan.scope,
            jobs: plan.jobs.into(),
            current: None,
            hold_until,
            rows_done: 0,
            pause_requested: false,
        }
    }

    /// Runs one op for the cycle `now`; returns true when it released.
    fn advance_op(
        op: &mut OngoingOp,
        now: Cycle,
        t: &TimingParams,
        addr_base: DramAddress,
        sel: ChipSel,
        emit: &mut dyn FnMut(CommandEvent),
    ) -> bool {
        if let Some(hold) = op.hold_until {
            return now >= hold;
        }
        loop {
            if op.current.is_none() {
                if op.jobs.is_empty() || op.pause_requested {
                    return true;
                }
                let job = op.jobs.front().expect("job present");
                op.current = Some(OngoingOp::schedule_row(job, now, t));
                op.jobs.pop_front();
            }
            let current = op.current.as_mut().expect("current row");
            while let Some(&(cycle, kind, row, column)) = current.events.front() {
                if cycle != now {
                    break;
                }
                current.events.pop_front();
                emit(CommandEvent {
                    cycle,
                    kind,
                    addr: DramAddress {
                        row,
                        column,
                        ..addr_base
                    },
                    origin: Origin::Mech {
                        kind: op.mech,
                        chip: sel,
                    },
                });
            }
            if now >= current.done_at {
                op.rows_done += 1;
                op.current = None;
                if op.jobs.is_empty() || op.pause_requested {
                    return true;
                }
                // Next row starts back-to-back in this same cycle.
                continue;
            }
            return false;
        }
    }
}
