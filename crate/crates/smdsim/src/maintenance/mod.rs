//! In-DRAM maintenance mechanisms: fixed-rate refresh, variable-rate refresh,
//! probabilistic and deterministic RowHammer protection, ECC scrubbing, and
//! an adversarial lock generator for stress runs.
//!
//! Engines are plain per-bank state machines. Each cycle the owning chip asks
//! the highest-priority engine with pending work which lock it wants
//! ([`Engine::lock_request`]); once the lock controller grants it, the engine
//! commits an [`OpPlan`] whose row jobs the chip executes against the array.

pub mod sketch;
pub mod track;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::dram::{Cycle, Geometry, MechKind, TimingParams};
use sketch::{BloomFilter, CbfPair};
use track::{table_size, CounterTable, MarkedRowsTable};

/// What a maintenance operation locks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockScope {
    Region(u32),
    /// Scrubbing uses the shared data bus, so it reserves every lock region
    /// of the bank at once.
    WholeBank,
}

/// One row's worth of array work inside a maintenance operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowJob {
    /// Activate + precharge, restoring the charge of the row's cells.
    Refresh { row: u32 },
    /// Read every codeword, writing back the ones flagged faulty.
    Scrub {
        row: u32,
        codewords: u16,
        faulty: Vec<u16>,
    },
}

impl RowJob {
    pub fn row(&self) -> u32 {
        match self {
            RowJob::Refresh { row } | RowJob::Scrub { row, .. } => *row,
        }
    }
}

/// A committed maintenance operation, produced once the lock is granted.
#[derive(Debug, Clone)]
pub struct OpPlan {
    pub scope: LockScope,
    pub jobs: Vec<RowJob>,
    /// For ops that do no array work (stress locks): hold duration in cycles.
    pub hold: Option<Cycle>,
}

/// Completion report handed back to the engine when its op releases.
#[derive(Debug, Clone)]
pub struct OpOutcome {
    pub rows_done: u32,
    /// Jobs cut off by a pause request; the engine re-offers them before
    /// advancing its counters.
    pub remaining: Vec<RowJob>,
}

/// Per-(chip, bank) context needed to build engines.
pub struct MechCtx<'a> {
    pub geometry: &'a Geometry,
    pub timing: &'a TimingParams,
    /// Weak-row ids (per-bank set, applied uniformly to every bank).
    pub weak_rows: &'a [u32],
    /// Faulty (row, codeword) pairs, applied uniformly to every bank.
    pub faults: &'a [(u32, u16)],
    /// Pause policy: refresh ops release after every row.
    pub per_row_locks: bool,
    /// Divergence offsets for this chip.
    pub first_op_delay: Cycle,
    pub initial_lock_region: u32,
}

/// Refresh sweep core shared by SMD-FR and SMD-VR: pending-op counter, lock
/// region counter and row (group) address counter.
#[derive(Debug, Clone)]
struct SweepCore {
    rg: u32,
    regions: u32,
    region_rows: u32,
    groups_per_region: u32,
    op_interval: Cycle,
    next_tick: Cycle,
    pending: u8,
    pending_cap: u8,
    lock_region: u32,
    row_group: u32,
    sweeps_completed: u64,
}

impl SweepCore {
    fn new(rg: u32, period: Cycle, g: &Geometry, delay: Cycle, initial_region: u32) -> Self {
        let regions = g.regions_per_bank();
        let region_rows = g.region_rows();
        assert!(
            region_rows.is_multiple_of(rg),
            "refresh granularity must divide the region"
        );
        let groups_per_region = region_rows / rg;
        // One op refreshes `rg` rows, so sweeping the bank within one refresh
        // period needs an op every period / (rows / rg) cycles. This equals
        // tREFI when rg == rows_per_bank / 8192.
        let ops_per_sweep = u64::from(regions) * u64::from(groups_per_region);
        let op_interval = (period / ops_per_sweep).max(1);
        SweepCore {
            rg,
            regions,
            region_rows,
            groups_per_region,
            op_interval,
            next_tick: op_interval + delay,
            pending: 0,
            pending_cap: 8,
            lock_region: initial_region % regions,
            row_group: 0,
            sweeps_completed: 0,
        }
    }

    fn tick(&mut self, now: Cycle) {
        while now >= self.next_tick {
            self.pending = (self.pending + 1).min(self.pending_cap);
            self.next_tick += self.op_interval;
        }
    }

    fn group_rows(&self) -> impl Iterator<Item = u32> {
        let base = self.lock_region * self.region_rows + self.row_group * self.rg;
        base..base + self.rg
    }

    /// Counter advance after a completed group: region counter increments,
    /// carrying into the row counter on wrap.
    fn advance_group(&mut self) {
        self.pending -= 1;
        self.lock_region += 1;
        if self.lock_region == self.regions {
            self.lock_region = 0;
            self.row_group += 1;
            if self.row_group == self.groups_per_region {
                self.row_group = 0;
                self.sweeps_completed += 1;
            }
        }
    }
}

/// Fixed-rate refresh: every row once per refresh period, RG rows per lock.
#[derive(Debug, Clone)]
pub struct FrEngine {
    core: SweepCore,
    per_row: bool,
    /// Rows still owed for the group being serviced.
    current: Option<(u32, VecDeque<u32>)>,
}

/// Variable-rate refresh: weak rows every sweep, strong rows only on sweeps
/// whose index is a multiple of the VR factor.
#[derive(Debug, Clone)]
pub struct VrEngine {
    core: SweepCore,
    per_row: bool,
    filter: BloomFilter,
    vr_factor: u64,
    current: Option<(u32, VecDeque<u32>)>,
}

impl FrEngine {
    pub fn new(rg: u32, period: Cycle, ctx: &MechCtx) -> Self {
        FrEngine {
            core: SweepCore::new(
                rg,
                period,
                ctx.geometry,
                ctx.first_op_delay,
                ctx.initial_lock_region,
            ),
            per_row: ctx.per_row_locks,
            current: None,
        }
    }

    /// Latency of one refresh op; used to derive worst-case divergence
    /// offsets.
    pub fn op_latency(rg: u32, t: &TimingParams) -> Cycle {
        Cycle::from(rg) * t.t_rc()
    }
}

impl VrEngine {
    pub fn new(
        rg: u32,
        period: Cycle,
        vr_factor: u64,
        filter_bits: usize,
        filter_hashes: u32,
        seed: u64,
        ctx: &MechCtx,
    ) -> Self {
        let mut filter = BloomFilter::new(filter_bits, filter_hashes, seed);
        for &row in ctx.weak_rows {
            filter.insert(u64::from(row));
        }
        VrEngine {
            core: SweepCore::new(
                rg,
                period,
                ctx.geometry,
                ctx.first_op_delay,
                ctx.initial_lock_region,
            ),
            per_row: ctx.per_row_locks,
            filter,
            vr_factor: vr_factor.max(1),
            current: None,
        }
    }
}

/// Per-row refresh decision for a candidate group.
pub fn vr_should_refresh(
    rows: impl Iterator<Item = u32>,
    refresh_cycle: u64,
    vr_factor: u64,
    filter: &BloomFilter,
) -> Vec<u32> {
    let full_sweep = refresh_cycle.is_multiple_of(vr_factor);
    rows.filter(|&r| full_sweep || filter.query(u64::from(r)))
        .collect()
}

/// Probabilistic RowHammer protection: every accepted activation marks the
/// row with probability `p_mark`; marked rows get their neighbors refreshed
/// under a region lock.
#[derive(Debug, Clone)]
pub struct PrpEngine {
    p_mark: f64,
    blast: u32,
    mrt: MarkedRowsTable,
    rows_per_bank: u32,
    region_rows: u32,
    service: Option<VictimService>,
}

#[derive(Debug, Clone)]
struct VictimService {
    mark_region: usize,
    chunks: VecDeque<(u32, Vec<u32>)>,
}

/// Victim rows at distance 1..=blast on both sides, clipped at the bank
/// edges, grouped into per-region chunks (a victim set can straddle a region
/// boundary, and each lock covers one region).
pub fn victim_chunks(
    row: u32,
    blast: u32,
    rows_per_bank: u32,
    region_rows: u32,
) -> Vec<(u32, Vec<u32>)> {
    let lo = row.saturating_sub(blast);
    let hi = (row + blast).min(rows_per_bank - 1);
    let mut chunks: Vec<(u32, Vec<u32>)> = Vec::new();
    for victim in lo..=hi {
        if victim == row {
            continue;
        }
        let region = victim / region_rows;
        match chunks.last_mut() {
            Some((r, rows)) if *r == region => rows.push(victim),
            _ => chunks.push((region, vec![victim])),
        }
    }
    chunks
}

impl PrpEngine {
    pub fn new(p_mark: f64, blast: u32, ctx: &MechCtx) -> Self {
        PrpEngine {
            p_mark,
            blast,
            mrt: MarkedRowsTable::new(ctx.geometry.regions_per_bank() as usize),
            rows_per_bank: ctx.geometry.rows_per_bank,
            region_rows: ctx.geometry.region_rows(),
            service: None,
        }
    }

    fn try_mark(&mut self, row: u32, rng: &mut impl Rng) {
        if self.p_mark > 0.0 && rng.gen_bool(self.p_mark) {
            let region = (row / self.region_rows) as usize;
            self.mrt.mark(region, row);
        }
    }
}

/// PRP with aggressor detection: a pair of counting Bloom filters tracks
/// activations over a rolling window; only rows whose estimate reaches
/// `act_max` are eligible for marking.
#[derive(Debug, Clone)]
pub struct PrpPlusEngine {
    prp: PrpEngine,
    cbf: CbfPair,
    act_max: u64,
}

impl PrpPlusEngine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p_mark: f64,
        blast: u32,
        act_max: u64,
        cbf_counters: usize,
        cbf_hashes: u32,
        window: Cycle,
        seed: u64,
        ctx: &MechCtx,
    ) -> Self {
        PrpPlusEngine {
            prp: PrpEngine::new(p_mark, blast, ctx),
            cbf: CbfPair::new(cbf_counters, cbf_hashes, seed, window),
            act_max,
        }
    }
}

/// Deterministic RowHammer protection: a Misra-Gries counter table with
/// spillover; a row reaching a multiple of `act_max` gets its neighbors
/// refreshed.
#[derive(Debug, Clone)]
pub struct DrpEngine {
    ct: CounterTable,
    act_max: u64,
    blast: u32,
    window: Cycle,
    next_reset: Cycle,
    rows_per_bank: u32,
    region_rows: u32,
    victims: VecDeque<(u32, Vec<u32>)>,
}

impl DrpEngine {
    pub fn new(act_max: u64, entries: Option<usize>, blast: u32, ctx: &MechCtx) -> Self {
        let t = ctx.timing;
        // Maximum activations one bank can absorb in a window: one per tRC.
        let act_trefw = t.t_refw / t.t_rc();
        let n = entries.unwrap_or_else(|| table_size(act_trefw.max(1), act_max));
        DrpEngine {
            ct: CounterTable::new(n),
            act_max,
            blast,
            window: t.t_refw,
            next_reset: t.t_refw,
            rows_per_bank: ctx.geometry.rows_per_bank,
            region_rows: ctx.geometry.region_rows(),
            victims: VecDeque::new(),
        }
    }
}

/// ECC scrubbing: one row per lock, whole-bank scope, pending counter pacing
/// a whole-memory scrub period.
#[derive(Debug, Clone)]
pub struct MsEngine {
    tick_interval: Cycle,
    next_tick: Cycle,
    pending: u8,
    lock_region: u32,
    row_offset: u32,
    regions: u32,
    region_rows: u32,
    codewords_per_row: u32,
    faults: BTreeMap<u32, BTreeSet<u16>>,
}

impl MsEngine {
    pub fn new(tick_interval: Cycle, codewords_per_row: u32, ctx: &MechCtx) -> Self {
        let mut faults: BTreeMap<u32, BTreeSet<u16>> = BTreeMap::new();
        for &(row, cw) in ctx.faults {
            faults.entry(row).or_default().insert(cw);
        }
        MsEngine {
            tick_interval: tick_interval.max(1),
            next_tick: tick_interval.max(1) + ctx.first_op_delay,
            pending: 0,
            lock_region: ctx.initial_lock_region % ctx.geometry.regions_per_bank(),
            row_offset: 0,
            regions: ctx.geometry.regions_per_bank(),
            region_rows: ctx.geometry.region_rows(),
            codewords_per_row,
            faults,
        }
    }

    fn current_row(&self) -> u32 {
        self.lock_region * self.region_rows + self.row_offset
    }

    fn advance(&mut self) {
        self.pending -= 1;
        self.lock_region += 1;
        if self.lock_region == self.regions {
            self.lock_region = 0;
            self.row_offset += 1;
            if self.row_offset == self.region_rows {
                self.row_offset = 0;
            }
        }
    }
}

/// Adversarial mechanism: locks regions round-robin, holding each for a
/// fixed duration, as fast as the ARI gate allows. Emits no array work.
#[derive(Debug, Clone)]
pub struct StressEngine {
    hold: Cycle,
    cursor: u32,
    regions: u32,
}

impl StressEngine {
    pub fn new(hold: Cycle, ctx: &MechCtx) -> Self {
        StressEngine {
            hold: hold.max(1),
            cursor: ctx.initial_lock_region % ctx.geometry.regions_per_bank(),
            regions: ctx.geometry.regions_per_bank(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Engine {
    Fr(FrEngine),
    Vr(VrEngine),
    Prp(PrpEngine),
    PrpPlus(PrpPlusEngine),
    Drp(DrpEngine),
    Ms(MsEngine),
    Stress(StressEngine),
}

impl Engine {
    pub fn kind(&self) -> MechKind {
        match self {
            Engine::Fr(_) => MechKind::FixedRefresh,
            Engine::Vr(_) => MechKind::VariableRefresh,
            Engine::Prp(_) => MechKind::ProbRh,
            Engine::PrpPlus(_) => MechKind::ProbRhPlus,
            Engine::Drp(_) => MechKind::DetRh,
            Engine::Ms(_) => MechKind::Scrub,
            Engine::Stress(_) => MechKind::Stress,
        }
    }

    /// Lock-contention priority: scrubbing and RowHammer victim refreshes are
    /// rare and latency-sensitive, so they outrank periodic refresh.
    pub fn priority(&self) -> u8 {
        match self {
            Engine::Ms(_) => 0,
            Engine::Drp(_) => 1,
            Engine::Prp(_) | Engine::PrpPlus(_) => 2,
            Engine::Fr(_) | Engine::Vr(_) => 3,
            Engine::Stress(_) => 4,
        }
    }

    /// Advances interval timers and window resets.
    pub fn tick(&mut self, now: Cycle) {
        match self {
            Engine::Fr(e) => e.core.tick(now),
            Engine::Vr(e) => e.core.tick(now),
            Engine::Prp(_) => {}
            Engine::PrpPlus(e) => e.cbf.tick(now),
            Engine::Drp(e) => {
                while now >= e.next_reset {
                    e.ct.reset();
                    e.next_reset += e.window;
                }
            }
            Engine::Ms(e) => {
                while now >= e.next_tick {
                    e.pending = (e.pending + 1).min(8);
                    e.next_tick += e.tick_interval;
                }
            }
            Engine::Stress(_) => {}
        }
    }

    /// Observes an activation this chip accepted. RowHammer protection only
    /// counts accepted activations: a rejected one opens no row.
    pub fn on_act(&mut self, row: u32, rng: &mut impl Rng) {
        match self {
            Engine::Prp(e) => e.try_mark(row, rng),
            Engine::PrpPlus(e) => {
                e.cbf.insert(u64::from(row));
                // Threshold test runs after the insertion.
                if e.cbf.estimate_active(u64::from(row)) as u64 >= e.act_max {
                    e.prp.try_mark(row, rng);
                }
            }
            Engine::Drp(e) => {
                if let Some(count) = e.ct.observe(row) {
                    if count % e.act_max == 0 {
                        for chunk in victim_chunks(row, e.blast, e.rows_per_bank, e.region_rows) {
                            e.victims.push_back(chunk);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// The lock this engine wants right now, if any. Stateless with respect
    /// to the lock outcome: callers retry every cycle until granted.
    pub fn lock_request(&mut self, _now: Cycle) -> Option<LockScope> {
        match self {
            Engine::Fr(e) => {
                if e.current.is_none() {
                    if e.core.pending == 0 {
                        return None;
                    }
                    let rows: VecDeque<u32> = e.core.group_rows().collect();
                    e.current = Some((e.core.lock_region, rows));
                }
                e.current.as_ref().map(|(r, _)| LockScope::Region(*r))
            }
            Engine::Vr(e) => {
                while e.current.is_none() {
                    if e.core.pending == 0 {
                        return None;
                    }
                    let rows = vr_should_refresh(
                        e.core.group_rows(),
                        e.core.sweeps_completed,
                        e.vr_factor,
                        &e.filter,
                    );
                    if rows.is_empty() {
                        // Nothing to refresh in this group: the op completes
                        // without locking anything.
                        e.core.advance_group();
                        continue;
                    }
                    e.current = Some((e.core.lock_region, rows.into()));
                }
                e.current.as_ref().map(|(r, _)| LockScope::Region(*r))
            }
            Engine::Prp(e) => {
                ensure_service(
                    &mut e.service,
                    &e.mrt,
                    e.blast,
                    e.rows_per_bank,
                    e.region_rows,
                );
                e.service
                    .as_ref()
                    .and_then(|s| s.chunks.front())
                    .map(|(r, _)| LockScope::Region(*r))
            }
            Engine::PrpPlus(e) => {
                let p = &mut e.prp;
                ensure_service(
                    &mut p.service,
                    &p.mrt,
                    p.blast,
                    p.rows_per_bank,
                    p.region_rows,
                );
                p.service
                    .as_ref()
                    .and_then(|s| s.chunks.front())
                    .map(|(r, _)| LockScope::Region(*r))
            }
            Engine::Drp(e) => e.victims.front().map(|(r, _)| LockScope::Region(*r)),
            Engine::Ms(e) => (e.pending > 0).then_some(LockScope::WholeBank),
            Engine::Stress(e) => Some(LockScope::Region(e.cursor)),
        }
    }

    /// Commits the operation after its lock was granted.
    pub fn begin_op(&mut self, _now: Cycle) -> OpPlan {
        match self {
            Engine::Fr(e) => begin_refresh(&mut e.current, e.per_row),
            Engine::Vr(e) => begin_refresh(&mut e.current, e.per_row),
            Engine::Prp(e) => begin_victims(&mut e.service),
            Engine::PrpPlus(e) => begin_victims(&mut e.prp.service),
            Engine::Drp(e) => {
                let (region, rows) = e.victims.pop_front().expect("victim op planned");
                OpPlan {
                    scope: LockScope::Region(region),
                    jobs: rows
                        .into_iter()
                        .map(|row| RowJob::Refresh { row })
                        .collect(),
                    hold: None,
                }
            }
            Engine::Ms(e) => {
                let row = e.current_row();
                let faulty: Vec<u16> = e
                    .faults
                    .remove(&row)
                    .map(|s| s.into_iter().collect())
                    .unwrap_or_default();
                OpPlan {
                    scope: LockScope::WholeBank,
                    jobs: vec![RowJob::Scrub {
                        row,
                        codewords: e.codewords_per_row as u16,
                        faulty,
                    }],
                    hold: None,
                }
            }
            Engine::Stress(e) => OpPlan {
                scope: LockScope::Region(e.cursor),
                jobs: Vec::new(),
                hold: Some(e.hold),
            },
        }
    }

    /// Completion callback: counters advance only once the whole group is
    /// done; paused remainders are re-offered first.
    pub fn on_complete(&mut self, outcome: OpOutcome) {
        match self {
            Engine::Fr(e) => finish_refresh(&mut e.current, &mut e.core, outcome),
            Engine::Vr(e) => finish_refresh(&mut e.current, &mut e.core, outcome),
            Engine::Prp(e) => finish_victims(&mut e.service, &mut e.mrt, outcome, e.region_rows),
            Engine::PrpPlus(e) => {
                let region_rows = e.prp.region_rows;
                finish_victims(&mut e.prp.service, &mut e.prp.mrt, outcome, region_rows)
            }
            Engine::Drp(e) => {
                let remaining: Vec<u32> = outcome.remaining.iter().map(RowJob::row).collect();
                if let Some(&first) = remaining.first() {
                    e.victims.push_front((first / e.region_rows, remaining));
                }
            }
            Engine::Ms(e) => e.advance(),
            Engine::Stress(e) => e.cursor = (e.cursor + 1) % e.regions,
        }
    }
}

fn begin_refresh(current: &mut Option<(u32, VecDeque<u32>)>, per_row: bool) -> OpPlan {
    let (region, rows) = current.as_mut().expect("refresh op planned");
    let take = if per_row { 1 } else { rows.len() };
    let jobs: Vec<RowJob> = rows
        .drain(..take.min(rows.len()))
        .map(|row| RowJob::Refresh { row })
        .collect();
    OpPlan {
        scope: LockScope::Region(*region),
        jobs,
        hold: None,
    }
}

fn finish_refresh(
    current: &mut Option<(u32, VecDeque<u32>)>,
    core: &mut SweepCore,
    outcome: OpOutcome,
) {
    let (_, rows) = current.as_mut().expect("refresh op in flight");
    for job in outcome.remaining.into_iter().rev() {
        rows.push_front(job.row());
    }
    if rows.is_empty() {
        *current = None;
        core.advance_group();
    }
}

fn ensure_service(
    service: &mut Option<VictimService>,
    mrt: &MarkedRowsTable,
    blast: u32,
    rows_per_bank: u32,
    region_rows: u32,
) {
    if service.is_none() {
        if let Some((region, row)) = mrt.first_valid() {
            service.replace(VictimService {
                mark_region: region,
                chunks: victim_chunks(row, blast, rows_per_bank, region_rows).into(),
            });
        }
    }
}

fn begin_victims(service: &mut Option<VictimService>) -> OpPlan {
    let s = service.as_mut().expect("victim op planned");
    let (region, rows) = s.chunks.pop_front().expect("victim chunk available");
    OpPlan {
        scope: LockScope::Region(region),
        jobs: rows
            .into_iter()
            .map(|row| RowJob::Refresh { row })
            .collect(),
        hold: None,
    }
}

fn finish_victims(
    service: &mut Option<VictimService>,
    mrt: &mut MarkedRowsTable,
    outcome: OpOutcome,
    region_rows: u32,
) {
    let s = service.as_mut().expect("victim op in flight");
    let remaining: Vec<u32> = outcome.remaining.iter().map(RowJob::row).collect();
    if let Some(&first) = remaining.first() {
        s.chunks.push_front((first / region_rows, remaining));
    }
    if s.chunks.is_empty() {
        mrt.clear(s.mark_region);
        *service = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::Geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_geometry() -> Geometry {
        Geometry {
            channels: 1,
            ranks_per_channel: 1,
            bankgroups_per_chip: 1,
            banks_per_group: 1,
            rows_per_bank: 64,
            rows_per_subarray: 4,
            subarrays_per_region: 4,
            ..Geometry::default()
        }
    }

    fn ctx<'a>(g: &'a Geometry, t: &'a TimingParams) -> MechCtx<'a> {
        MechCtx {
            geometry: g,
            timing: t,
            weak_rows: &[],
            faults: &[],
            per_row_locks: false,
            first_op_delay: 0,
            initial_lock_region: 0,
        }
    }

    #[test]
    fn sweep_counters_carry_region_into_row() {
        let g = small_geometry(); // 4 regions of 16 rows
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let fr = FrEngine::new(8, 4096, &c);
        assert_eq!(fr.core.op_interval, 4096 / 8); // 8 groups per sweep
        let mut e = Engine::Fr(fr);
        match &mut e {
            Engine::Fr(f) => f.core.pending = 8,
            _ => unreachable!(),
        }
        // Run 4 ops (one per region): the row group counter advances once.
        for i in 0..4 {
            assert_eq!(e.lock_request(0), Some(LockScope::Region(i)));
            let plan = e.begin_op(0);
            assert_eq!(plan.jobs.len(), 8);
            e.on_complete(OpOutcome {
                rows_done: 8,
                remaining: vec![],
            });
        }
        let fr = match e {
            Engine::Fr(f) => f,
            _ => unreachable!(),
        };
        assert_eq!(fr.core.lock_region, 0);
        assert_eq!(fr.core.row_group, 1);
        // Group rows start after the first RG block of region 0.
        assert_eq!(
            fr.core.group_rows().collect::<Vec<_>>(),
            (8..16).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pending_saturates_at_eight() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let mut e = Engine::Fr(FrEngine::new(8, 4096, &c));
        e.tick(100 * 4096);
        match &e {
            Engine::Fr(f) => assert_eq!(f.core.pending, 8),
            _ => unreachable!(),
        }
    }

    #[test]
    fn vr_weak_rows_refresh_every_sweep_strong_rows_every_fourth() {
        let g = small_geometry();
        let t = TimingParams::default();
        let mut c = ctx(&g, &t);
        let weak = [5u32];
        c.weak_rows = &weak;
        let vr = VrEngine::new(8, 4096, 4, 1024, 6, 1, &c);
        // Sweep 0 is a full-refresh sweep.
        let all = vr_should_refresh(0..8, 0, 4, &vr.filter);
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        // Sweeps 1..3 keep only the weak row.
        for cycle in 1..4 {
            assert_eq!(vr_should_refresh(0..8, cycle, 4, &vr.filter), vec![5]);
        }
        assert_eq!(vr_should_refresh(0..8, 4, 4, &vr.filter).len(), 8);
    }

    #[test]
    fn vr_empty_groups_complete_without_locking() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t); // no weak rows at all
        let mut e = Engine::Vr(VrEngine::new(8, 4096, 4, 1024, 6, 1, &c));
        // Force one full sweep so sweeps_completed becomes 1 (a skip sweep).
        match &mut e {
            Engine::Vr(v) => {
                v.core.sweeps_completed = 1;
                v.core.pending = 3;
            }
            _ => unreachable!(),
        }
        assert_eq!(e.lock_request(0), None);
        match &e {
            Engine::Vr(v) => assert_eq!(v.core.pending, 0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn prp_mark_probability_zero_and_one() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut never = Engine::Prp(PrpEngine::new(0.0, 1, &c));
        for row in 0..64 {
            never.on_act(row, &mut rng);
        }
        assert_eq!(never.lock_request(0), None);

        let mut always = Engine::Prp(PrpEngine::new(1.0, 1, &c));
        always.on_act(9, &mut rng);
        assert_eq!(always.lock_request(0), Some(LockScope::Region(0)));
        let plan = always.begin_op(0);
        assert_eq!(
            plan.jobs.iter().map(RowJob::row).collect::<Vec<_>>(),
            vec![8, 10]
        );
    }

    #[test]
    fn prp_marking_frequency_within_three_sigma() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let mut e = PrpEngine::new(0.01, 1, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 1_000_000u64;
        let mut marks = 0u64;
        for _ in 0..trials {
            // Isolate each Bernoulli draw on one region's entry.
            e.mrt.clear(0);
            e.try_mark(9, &mut rng);
            if e.mrt.first_valid() == Some((0, 9)) {
                marks += 1;
            }
        }
        let expected = 10_000.0;
        let sigma = (trials as f64 * 0.01 * 0.99).sqrt();
        assert!(
            (marks as f64 - expected).abs() < 3.0 * sigma,
            "marks {marks} outside 3 sigma of {expected}"
        );
    }

    #[test]
    fn victim_chunks_clip_at_edges() {
        assert_eq!(victim_chunks(0, 1, 64, 16), vec![(0, vec![1])]);
        assert_eq!(victim_chunks(9, 1, 64, 16), vec![(0, vec![8, 10])]);
        assert_eq!(victim_chunks(9, 2, 64, 16), vec![(0, vec![7, 8, 10, 11])]);
        assert_eq!(victim_chunks(63, 1, 64, 16), vec![(3, vec![62])]);
        // Straddles the boundary between regions 0 and 1.
        assert_eq!(
            victim_chunks(16, 1, 64, 16),
            vec![(0, vec![15]), (1, vec![17])]
        );
    }

    #[test]
    fn prp_plus_marks_only_past_threshold() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let mut e = Engine::PrpPlus(PrpPlusEngine::new(1.0, 1, 4, 64, 3, 1_000_000, 7, &c));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            e.on_act(20, &mut rng);
            assert_eq!(e.lock_request(0), None, "below threshold");
        }
        e.on_act(20, &mut rng); // 4th insertion reaches act_max
        assert_eq!(e.lock_request(0), Some(LockScope::Region(1)));
    }

    #[test]
    fn drp_triggers_once_per_act_max() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let mut e = Engine::Drp(DrpEngine::new(512, Some(4), 1, &c));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut triggers = 0;
        for _ in 0..512 {
            e.on_act(30, &mut rng);
            if e.lock_request(0).is_some() {
                triggers += 1;
                let _ = e.begin_op(0);
                e.on_complete(OpOutcome {
                    rows_done: 2,
                    remaining: vec![],
                });
            }
        }
        assert_eq!(triggers, 1, "exactly one victim refresh at the 512th ACT");
    }

    #[test]
    fn drp_auto_table_size_uses_window_budget() {
        let g = small_geometry();
        let t = TimingParams::ddr4_3200(32.0).unwrap();
        let c = ctx(&g, &t);
        let e = DrpEngine::new(512, None, 1, &c);
        assert_eq!(e.ct.estimate(0), 0);
        // 51.2e6 / 74 = 691891 activations per window.
        assert_eq!(table_size(t.t_refw / t.t_rc(), 512), 1351);
    }

    #[test]
    fn ms_sweeps_one_row_per_op_interleaving_regions() {
        let g = small_geometry();
        let t = TimingParams::default();
        let c = ctx(&g, &t);
        let mut e = MsEngine::new(100, 128, &c);
        e.pending = 8;
        let mut rows = Vec::new();
        for _ in 0..5 {
            rows.push(e.current_row());
            e.advance();
        }
        // Row 0 of each region first, then row 1 of region 0.
        assert_eq!(rows, vec![0, 16, 32, 48, 1]);
    }

    #[test]
    fn ms_faults_drain_exactly_once() {
        let g = small_geometry();
        let t = TimingParams::default();
        let mut c = ctx(&g, &t);
        let faults = [(0u32, 3u16), (0, 7)];
        c.faults = &faults;
        let mut e = Engine::Ms(MsEngine::new(100, 128, &c));
        match &mut e {
            Engine::Ms(m) => m.pending = 2,
            _ => unreachable!(),
        }
        assert_eq!(e.lock_request(0), Some(LockScope::WholeBank));
        let plan = e.begin_op(0);
        match &plan.jobs[0] {
            RowJob::Scrub {
                row,
                codewords,
                faulty,
            } => {
                assert_eq!(*row, 0);
                assert_eq!(*codewords, 128);
                assert_eq!(faulty, &vec![3, 7]);
            }
            _ => unreachable!(),
        }
        e.on_complete(OpOutcome {
            rows_done: 1,
            remaining: vec![],
        });
        // Second visit to row 0 finds no faults left.
        match &mut e {
            Engine::Ms(m) => {
                m.lock_region = 0;
                m.row_offset = 0;
            }
            _ => unreachable!(),
        }
        let plan = e.begin_op(0);
        match &plan.jobs[0] {
            RowJob::Scrub { faulty, .. } => assert!(faulty.is_empty()),
            _ => unreachable!(),
        }
    }
}
