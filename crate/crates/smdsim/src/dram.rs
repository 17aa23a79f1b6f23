//! DRAM geometry, address decoding, per-bank state machines and DDR4-like
//! timing-constraint bookkeeping for the command set {ACT, PRE, RD, WR, REF}.
//!
//! All timing is expressed in command-bus cycles; one clock domain. The data
//! bus is modeled as `t_bl` cycles of occupancy per column command rather
//! than as a separate DQ model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in command-bus cycles.
pub type Cycle = u64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unsupported speed grade `{0}`")]
    UnknownSpeedGrade(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum AddressError {
    #[error("physical address {addr:#x} out of range (capacity {capacity:#x})")]
    OutOfRange { addr: u64, capacity: u64 },
    #[error("address component {field} = {value} exceeds bound {bound}")]
    ComponentOutOfRange {
        field: &'static str,
        value: u64,
        bound: u64,
    },
}

/// Timing-protocol violations abort the simulation; they indicate a scheduler
/// bug, never a recoverable condition.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{kind:?} illegal in phase {phase} at cycle {now}")]
    IllegalPhase {
        kind: CmdKind,
        phase: String,
        now: Cycle,
    },
    #[error("{kind:?} at cycle {now} violates timing (earliest legal {earliest})")]
    TooEarly {
        kind: CmdKind,
        now: Cycle,
        earliest: Cycle,
    },
}

/// Fixed shape of the memory system.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct Geometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub chips_per_rank: u32,
    pub bankgroups_per_chip: u32,
    pub banks_per_group: u32,
    pub rows_per_bank: u32,
    pub rows_per_subarray: u32,
    pub subarrays_per_region: u32,
    pub row_bytes: u32,
    pub cacheline_bytes: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            channels: 4,
            ranks_per_channel: 2,
            chips_per_rank: 8,
            bankgroups_per_chip: 4,
            banks_per_group: 4,
            rows_per_bank: 131_072,
            rows_per_subarray: 512,
            subarrays_per_region: 16,
            row_bytes: 8192,
            cacheline_bytes: 64,
        }
    }
}

impl Geometry {
    pub fn banks_per_chip(&self) -> u32 {
        self.bankgroups_per_chip * self.banks_per_group
    }

    pub fn subarrays_per_bank(&self) -> u32 {
        self.rows_per_bank / self.rows_per_subarray
    }

    /// Rows covered by one lock region.
    pub fn region_rows(&self) -> u32 {
        self.subarrays_per_region * self.rows_per_subarray
    }

    pub fn regions_per_bank(&self) -> u32 {
        self.rows_per_bank / self.region_rows()
    }

    pub fn columns_per_row(&self) -> u32 {
        self.row_bytes / self.cacheline_bytes
    }

    pub fn capacity_bytes(&self) -> u64 {
        u64::from(self.channels)
            * u64::from(self.ranks_per_channel)
            * u64::from(self.banks_per_chip())
            * u64::from(self.rows_per_bank)
            * u64::from(self.row_bytes)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let all_nonzero = [
            self.channels,
            self.ranks_per_channel,
            self.chips_per_rank,
            self.bankgroups_per_chip,
            self.banks_per_group,
            self.rows_per_bank,
            self.rows_per_subarray,
            self.subarrays_per_region,
            self.row_bytes,
            self.cacheline_bytes,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_nonzero {
            return Err(ConfigError::Geometry("all counts must be nonzero".into()));
        }
        if !self.rows_per_bank.is_multiple_of(self.rows_per_subarray) {
            return Err(ConfigError::Geometry(format!(
                "rows_per_bank {} not a multiple of rows_per_subarray {}",
                self.rows_per_bank, self.rows_per_subarray
            )));
        }
        if !self.rows_per_bank.is_multiple_of(self.region_rows()) {
            return Err(ConfigError::Geometry(format!(
                "region span {} does not divide rows_per_bank {}",
                self.region_rows(),
                self.rows_per_bank
            )));
        }
        if !self.row_bytes.is_multiple_of(self.cacheline_bytes) {
            return Err(ConfigError::Geometry(
                "row_bytes must be a multiple of cacheline_bytes".into(),
            ));
        }
        Ok(())
    }
}

/// Hierarchical location of one cacheline-sized access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramAddress {
    pub channel: u8,
    pub rank: u8,
    pub bankgroup: u8,
    pub bank: u8,
    pub row: u32,
    pub column: u16,
}

impl DramAddress {
    pub fn flat_bank(&self, g: &Geometry) -> usize {
        self.bankgroup as usize * g.banks_per_group as usize + self.bank as usize
    }

    pub fn subarray(&self, g: &Geometry) -> u32 {
        self.row / g.rows_per_subarray
    }

    pub fn region(&self, g: &Geometry) -> u32 {
        self.row / g.region_rows()
    }
}

/// Address interleaving field, most significant to least significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapField {
    Row,
    Bank,
    Rank,
    Column,
    Channel,
}

/// Physical-to-DRAM address mapping: field order from MSB down to LSB, with
/// the cacheline offset below everything. The default interleaves consecutive
/// cachelines across channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping(pub [MapField; 5]);

impl Default for Mapping {
    fn default() -> Self {
        Mapping([
            MapField::Row,
            MapField::Bank,
            MapField::Rank,
            MapField::Column,
            MapField::Channel,
        ])
    }
}

fn field_size(field: MapField, g: &Geometry) -> u64 {
    match field {
        MapField::Row => u64::from(g.rows_per_bank),
        MapField::Bank => u64::from(g.banks_per_chip()),
        MapField::Rank => u64::from(g.ranks_per_channel),
        MapField::Column => u64::from(g.columns_per_row()),
        MapField::Channel => u64::from(g.channels),
    }
}

/// Decodes a physical byte address. Bijective over the capacity: see
/// [`encode_address`] for the inverse.
pub fn decode_address(
    addr: u64,
    g: &Geometry,
    mapping: &Mapping,
) -> Result<DramAddress, AddressError> {
    let capacity = g.capacity_bytes();
    if addr >= capacity {
        return Err(AddressError::OutOfRange { addr, capacity });
    }
    let mut x = addr / u64::from(g.cacheline_bytes);
    let mut out = DramAddress {
        channel: 0,
        rank: 0,
        bankgroup: 0,
        bank: 0,
        row: 0,
        column: 0,
    };
    // Peel fields from least significant to most significant.
    for field in mapping.0.iter().rev() {
        let size = field_size(*field, g);
        let v = x % size;
        x /= size;
        match field {
            MapField::Row => out.row = v as u32,
            MapField::Bank => {
                out.bankgroup = (v / u64::from(g.banks_per_group)) as u8;
                out.bank = (v % u64::from(g.banks_per_group)) as u8;
            }
            MapField::Rank => out.rank = v as u8,
            MapField::Column => out.column = v as u16,
            MapField::Channel => out.channel = v as u8,
        }
    }
    Ok(out)
}

/// Recomposes the physical byte address of a decoded location.
pub fn encode_address(
    a: &DramAddress,
    g: &Geometry,
    mapping: &Mapping,
) -> Result<u64, AddressError> {
    let checks: [(&'static str, u64, u64); 5] = [
        ("channel", u64::from(a.channel), u64::from(g.channels)),
        ("rank", u64::from(a.rank), u64::from(g.ranks_per_channel)),
        (
            "bank",
            u64::from(a.bankgroup) * u64::from(g.banks_per_group) + u64::from(a.bank),
            u64::from(g.banks_per_chip()),
        ),
        ("row", u64::from(a.row), u64::from(g.rows_per_bank)),
        (
            "column",
            u64::from(a.column),
            u64::from(g.columns_per_row()),
        ),
    ];
    for (field, value, bound) in checks {
        if value >= bound {
            return Err(AddressError::ComponentOutOfRange {
                field,
                value,
                bound,
            });
        }
    }
    let mut x = 0u64;
    for field in mapping.0.iter() {
        let size = field_size(*field, g);
        let v = match field {
            MapField::Row => u64::from(a.row),
            MapField::Bank => {
                u64::from(a.bankgroup) * u64::from(g.banks_per_group) + u64::from(a.bank)
            }
            MapField::Rank => u64::from(a.rank),
            MapField::Column => u64::from(a.column),
            MapField::Channel => u64::from(a.channel),
        };
        x = x * size + v;
    }
    Ok(x * u64::from(g.cacheline_bytes))
}

/// DDR4-like timing parameters in command-bus cycles.
///
/// `t_refi`/`t_refw`/`max_open` may be shrunk by a time-scale factor for fast
/// runs; every consumer (mechanisms, auditors, refresh engine) reads the
/// scaled values, so the ratios the protocol depends on are preserved.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TimingParams {
    pub t_rcd: Cycle,
    pub t_rp: Cycle,
    pub t_ras: Cycle,
    pub t_cl: Cycle,
    pub t_bl: Cycle,
    pub t_ccd_l: Cycle,
    pub t_wtr: Cycle,
    pub t_rrd: Cycle,
    pub t_rfc: Cycle,
    pub t_refi: Cycle,
    pub t_refw: Cycle,
    /// ACT retry interval: retry spacing for rejected activates and the
    /// mandatory idle gap between maintenance locks of one region.
    pub ari: Cycle,
    /// Cycles between an ACT and the negative acknowledgment rejecting it.
    pub t_nack: Cycle,
    /// Row-open limit enforced by the controller (9 x t_refi).
    pub max_open: Cycle,
    /// Nanoseconds per command-bus cycle.
    pub clock_ns: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams::ddr4_3200(32.0).expect("default speed grade")
    }
}

impl TimingParams {
    /// DDR4-3200 timing set for a given refresh period in milliseconds.
    /// 8192 refresh commands cover the window, so t_refi = period / 8192.
    pub fn ddr4_3200(refresh_period_ms: f64) -> Result<Self, ConfigError> {
        Self::for_grade("DDR4-3200", refresh_period_ms)
    }

    pub fn for_grade(grade: &str, refresh_period_ms: f64) -> Result<Self, ConfigError> {
        if grade != "DDR4-3200" {
            return Err(ConfigError::UnknownSpeedGrade(grade.to_string()));
        }
        if refresh_period_ms <= 0.0 {
            return Err(ConfigError::Invalid(
                "refresh period must be positive".into(),
            ));
        }
        let clock_ns = 0.625;
        let t_refw = (refresh_period_ms * 1e6 / clock_ns).round() as Cycle;
        let t_refi = t_refw / 8192;
        Ok(TimingParams {
            t_rcd: 22,
            t_rp: 22,
            t_ras: 52,
            t_cl: 22,
            t_bl: 4,
            t_ccd_l: 10,
            t_wtr: 12,
            t_rrd: 8,
            t_rfc: 560, // 350 ns
            t_refi,
            t_refw,
            ari: 100, // 62.5 ns
            t_nack: 5,
            max_open: 9 * t_refi,
            clock_ns,
        })
    }

    /// Shrinks the refresh window (and everything derived from it) by an
    /// integer divisor for fast tests.
    pub fn apply_time_scale(&mut self, scale: u64) {
        if scale <= 1 {
            return;
        }
        self.t_refw = (self.t_refw / scale).max(1);
        self.t_refi = (self.t_refi / scale).max(1);
        self.max_open = 9 * self.t_refi;
    }

    /// tRAS + tRP: the full row cycle used by refresh-style maintenance.
    pub fn t_rc(&self) -> Cycle {
        self.t_ras + self.t_rp
    }

    pub fn ns(&self, cycles: Cycle) -> f64 {
        cycles as f64 * self.clock_ns
    }
}

/// Command vocabulary observable in the event log. `Maint*` commands are
/// generated inside a chip and never occupy the command bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmdKind {
    Act,
    Pre,
    Rd,
    Wr,
    Ref,
    Nack,
    MaintAct,
    MaintPre,
    MaintRd,
    MaintWb,
}

impl CmdKind {
    pub fn code(self) -> &'static str {
        match self {
            CmdKind::Act => "ACT",
            CmdKind::Pre => "PRE",
            CmdKind::Rd => "RD",
            CmdKind::Wr => "WR",
            CmdKind::Ref => "REF",
            CmdKind::Nack => "NACK",
            CmdKind::MaintAct => "MACT",
            CmdKind::MaintPre => "MPRE",
            CmdKind::MaintRd => "MRD",
            CmdKind::MaintWb => "MWB",
        }
    }

    pub fn from_code(s: &str) -> Option<CmdKind> {
        Some(match s {
            "ACT" => CmdKind::Act,
            "PRE" => CmdKind::Pre,
            "RD" => CmdKind::Rd,
            "WR" => CmdKind::Wr,
            "REF" => CmdKind::Ref,
            "NACK" => CmdKind::Nack,
            "MACT" => CmdKind::MaintAct,
            "MPRE" => CmdKind::MaintPre,
            "MRD" => CmdKind::MaintRd,
            "MWB" => CmdKind::MaintWb,
            _ => return None,
        })
    }
}

/// In-DRAM maintenance mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechKind {
    /// Fixed-rate refresh (SMD-FR).
    FixedRefresh,
    /// Variable-rate refresh with a weak-row Bloom filter (SMD-VR).
    VariableRefresh,
    /// Probabilistic RowHammer protection (SMD-PRP).
    ProbRh,
    /// PRP with CBF-based aggressor detection (SMD-PRP+).
    ProbRhPlus,
    /// Deterministic RowHammer protection (SMD-DRP).
    DetRh,
    /// ECC scrubbing with a whole-bank lock (SMD-MS).
    Scrub,
    /// Adversarial lock generator used to stress forward progress.
    Stress,
}

impl MechKind {
    pub fn code(self) -> &'static str {
        match self {
            MechKind::FixedRefresh => "fr",
            MechKind::VariableRefresh => "vr",
            MechKind::ProbRh => "prp",
            MechKind::ProbRhPlus => "prpp",
            MechKind::DetRh => "drp",
            MechKind::Scrub => "ms",
            MechKind::Stress => "stress",
        }
    }

    pub fn from_code(s: &str) -> Option<MechKind> {
        Some(match s {
            "fr" => MechKind::FixedRefresh,
            "vr" => MechKind::VariableRefresh,
            "prp" => MechKind::ProbRh,
            "prpp" => MechKind::ProbRhPlus,
            "drp" => MechKind::DetRh,
            "ms" => MechKind::Scrub,
            "stress" => MechKind::Stress,
            _ => return None,
        })
    }
}

/// Which chips of a rank an event applies to. `All` is the lockstep case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChipSel {
    All,
    One(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Controller,
    Mech { kind: MechKind, chip: ChipSel },
}

impl Origin {
    pub fn code(&self) -> String {
        match self {
            Origin::Controller => "mc".to_string(),
            Origin::Mech {
                kind,
                chip: ChipSel::All,
            } => format!("{}@*", kind.code()),
            Origin::Mech {
                kind,
                chip: ChipSel::One(c),
            } => format!("{}@{}", kind.code(), c),
        }
    }

    pub fn from_code(s: &str) -> Option<Origin> {
        if s == "mc" {
            return Some(Origin::Controller);
        }
        let (mech, chip) = s.split_once('@')?;
        let kind = MechKind::from_code(mech)?;
        let chip = if chip == "*" {
            ChipSel::All
        } else {
            ChipSel::One(chip.parse().ok()?)
        };
        Some(Origin::Mech { kind, chip })
    }
}

/// One timestamped entry of the command stream consumed by the auditors and
/// the energy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandEvent {
    pub cycle: Cycle,
    pub kind: CmdKind,
    pub addr: DramAddress,
    pub origin: Origin,
}

impl CommandEvent {
    /// CSV row: cycle,kind,channel,rank,bank,row,origin (bank is the flat
    /// bank index within the rank).
    pub fn to_csv(&self, g: &Geometry) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.cycle,
            self.kind.code(),
            self.addr.channel,
            self.addr.rank,
            self.addr.flat_bank(g),
            self.addr.row,
            self.origin.code()
        )
    }

    pub fn from_csv(line: &str, g: &Geometry) -> Option<CommandEvent> {
        let mut it = line.split(',');
        let cycle = it.next()?.trim().parse().ok()?;
        let kind = CmdKind::from_code(it.next()?.trim())?;
        let channel = it.next()?.trim().parse().ok()?;
        let rank = it.next()?.trim().parse().ok()?;
        let flat: u32 = it.next()?.trim().parse().ok()?;
        let row = it.next()?.trim().parse().ok()?;
        let origin = Origin::from_code(it.next()?.trim())?;
        Some(CommandEvent {
            cycle,
            kind,
            addr: DramAddress {
                channel,
                rank,
                bankgroup: (flat / g.banks_per_group) as u8,
                bank: (flat % g.banks_per_group) as u8,
                row,
                column: 0,
            },
            origin,
        })
    }

    /// Stable byte encoding used for the determinism hash.
    pub fn pack(&self, g: &Geometry, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.cycle.to_le_bytes());
        out.push(match self.kind {
            CmdKind::Act => 0,
            CmdKind::Pre => 1,
            CmdKind::Rd => 2,
            CmdKind::Wr => 3,
            CmdKind::Ref => 4,
            CmdKind::Nack => 5,
            CmdKind::MaintAct => 6,
            CmdKind::MaintPre => 7,
            CmdKind::MaintRd => 8,
            CmdKind::MaintWb => 9,
        });
        out.push(self.addr.channel);
        out.push(self.addr.rank);
        out.push(self.addr.flat_bank(g) as u8);
        out.extend_from_slice(&self.addr.row.to_le_bytes());
        out.extend_from_slice(&self.addr.column.to_le_bytes());
        match self.origin {
            Origin::Controller => out.push(0xff),
            Origin::Mech { kind, chip } => {
                out.push(match kind {
                    MechKind::FixedRefresh => 0,
                    MechKind::VariableRefresh => 1,
                    MechKind::ProbRh => 2,
                    MechKind::ProbRhPlus => 3,
                    MechKind::DetRh => 4,
                    MechKind::Scrub => 5,
                    MechKind::Stress => 6,
                });
                out.push(match chip {
                    ChipSel::All => 0xfe,
                    ChipSel::One(c) => c,
                });
            }
        }
    }
}

/// Controller-visible bank phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankPhase {
    Precharged,
    Activating { row: u32, ready_at: Cycle },
    Active { row: u32, opened_at: Cycle },
    Precharging { ready_at: Cycle },
}

impl BankPhase {
    fn name(&self) -> &'static str {
        match self {
            BankPhase::Precharged => "Precharged",
            BankPhase::Activating { .. } => "Activating",
            BankPhase::Active { .. } => "Active",
            BankPhase::Precharging { .. } => "Precharging",
        }
    }
}

/// Per-bank state machine plus the command history needed for the timing
/// checks that are scoped to a bank.
#[derive(Debug, Clone)]
pub struct BankState {
    pub phase: BankPhase,
    /// Cycle of the last ACT to this bank (tRAS / tRCD anchors).
    pub last_act: Option<Cycle>,
    /// Cycle of the last column command (tCCD_L anchor).
    pub last_col: Option<Cycle>,
}

impl Default for BankState {
    fn default() -> Self {
        BankState {
            phase: BankPhase::Precharged,
            last_act: None,
            last_col: None,
        }
    }
}

/// Rank-scoped timing history (tRRD, tWTR, tRFC).
#[derive(Debug, Clone, Default)]
pub struct RankTiming {
    pub last_act: Option<Cycle>,
    pub last_wr: Option<Cycle>,
    /// End of the refresh blackout; no command may target the rank before it.
    pub rfc_ready: Cycle,
}

/// Channel-scoped history: the shared data bus (tBL occupancy).
#[derive(Debug, Clone, Default)]
pub struct BusTiming {
    pub last_col: Option<Cycle>,
}

impl BankState {
    /// Folds time-driven transitions (Activating -> Active,
    /// Precharging -> Precharged) into the phase.
    pub fn settle(&mut self, now: Cycle) {
        match self.phase {
            BankPhase::Activating { row, ready_at } if now >= ready_at => {
                self.phase = BankPhase::Active {
                    row,
                    opened_at: self.last_act.unwrap_or(ready_at),
                };
            }
            BankPhase::Precharging { ready_at } if now >= ready_at => {
                self.phase = BankPhase::Precharged;
            }
            _ => {}
        }
    }

    pub fn open_row(&self) -> Option<u32> {
        match self.phase {
            BankPhase::Activating { row, .. } | BankPhase::Active { row, .. } => Some(row),
            _ => None,
        }
    }
}

/// First cycle >= `now` at which `kind` targeting this bank satisfies every
/// applicable constraint, or a protocol error if the command is structurally
/// illegal in the current phase.
pub fn earliest_issue(
    kind: CmdKind,
    row: u32,
    bank: &BankState,
    rank: &RankTiming,
    bus: &BusTiming,
    t: &TimingParams,
    now: Cycle,
) -> Result<Cycle, ProtocolError> {
    let mut bank = bank.clone();
    bank.settle(now);
    let illegal = |b: &BankState| ProtocolError::IllegalPhase {
        kind,
        phase: b.phase.name().to_string(),
        now,
    };
    let mut earliest = now.max(rank.rfc_ready);
    match kind {
        CmdKind::Act => {
            match bank.phase {
                BankPhase::Precharged => {}
                BankPhase::Precharging { ready_at } => earliest = earliest.max(ready_at),
                _ => return Err(illegal(&bank)),
            }
            if let Some(a) = rank.last_act {
                earliest = earliest.max(a + t.t_rrd);
            }
        }
        CmdKind::Pre => {
            match bank.phase {
                BankPhase::Active { .. } | BankPhase::Activating { .. } => {}
                _ => return Err(illegal(&bank)),
            }
            if let Some(a) = bank.last_act {
                earliest = earliest.max(a + t.t_ras);
            }
            // Let an in-flight burst drain before closing the row.
            if let Some(c) = bank.last_col {
                earliest = earliest.max(c + t.t_bl);
            }
        }
        CmdKind::Rd | CmdKind::Wr => {
            match bank.phase {
                BankPhase::Active { row: r, .. } | BankPhase::Activating { row: r, .. }
                    if r == row => {}
                _ => return Err(illegal(&bank)),
            }
            if let Some(a) = bank.last_act {
                earliest = earliest.max(a + t.t_rcd);
            }
            if let Some(c) = bank.last_col {
                earliest = earliest.max(c + t.t_ccd_l);
            }
            if let Some(c) = bus.last_col {
                earliest = earliest.max(c + t.t_bl);
            }
            if kind == CmdKind::Rd {
                if let Some(w) = rank.last_wr {
                    earliest = earliest.max(w + t.t_wtr);
                }
            }
        }
        CmdKind::Ref => match bank.phase {
            BankPhase::Precharged => {}
            BankPhase::Precharging { ready_at } => earliest = earliest.max(ready_at),
            _ => return Err(illegal(&bank)),
        },
        _ => {
            return Err(illegal(&bank));
        }
    }
    Ok(earliest)
}

/// Applies `kind` to the bank/rank/bus state at `now`, enforcing the
/// preconditions checked by [`earliest_issue`].
pub fn apply_command(
    kind: CmdKind,
    row: u32,
    bank: &mut BankState,
    rank: &mut RankTiming,
    bus: &mut BusTiming,
    t: &TimingParams,
    now: Cycle,
) -> Result<(), ProtocolError> {
    let earliest = earliest_issue(kind, row, bank, rank, bus, t, now)?;
    if now < earliest {
        return Err(ProtocolError::TooEarly {
            kind,
            now,
            earliest,
        });
    }
    bank.settle(now);
    match kind {
        CmdKind::Act => {
            bank.phase = BankPhase::Activating {
                row,
                ready_at: now + t.t_rcd,
            };
            bank.last_act = Some(now);
            bank.last_col = None;
            rank.last_act = Some(now);
        }
        CmdKind::Pre => {
            bank.phase = BankPhase::Precharging {
                ready_at: now + t.t_rp,
            };
        }
        CmdKind::Rd | CmdKind::Wr => {
            bank.last_col = Some(now);
            bus.last_col = Some(now);
            if kind == CmdKind::Wr {
                rank.last_wr = Some(now);
            }
        }
        CmdKind::Ref => {
            rank.rfc_ready = now + t.t_rfc;
        }
        _ => unreachable!("apply_command only accepts bus commands"),
    }
    Ok(())
}
