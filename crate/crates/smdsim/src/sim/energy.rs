//! Command-level DRAM energy model: per-command energies plus background
//! power integrated over per-bank state, driven entirely by the event log.
//!
//! Bundled defaults are derived from representative 16Gb-class DDR4-3200 IDD
//! currents (the default geometry is a 16Gb-per-chip organization). The
//! refresh energy window uses that part's refresh latency even though the
//! protocol timing runs the shorter composite value.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dram::{ChipSel, CmdKind, CommandEvent, Cycle, Geometry, Origin, TimingParams};

/// Datasheet inputs for deriving the per-command energies.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IddCurrents {
    pub idd0_ma: f64,
    pub idd2n_ma: f64,
    pub idd3n_ma: f64,
    pub idd4r_ma: f64,
    pub idd4w_ma: f64,
    pub idd5b_ma: f64,
    pub vdd_v: f64,
    /// Refresh blackout of the datasheet part, used as the IDD5B window.
    pub refresh_window_ns: f64,
}

impl IddCurrents {
    /// Representative 16Gb DDR4-3200 values.
    pub fn ddr4_16gb() -> Self {
        IddCurrents {
            idd0_ma: 60.0,
            idd2n_ma: 44.0,
            idd3n_ma: 50.0,
            idd4r_ma: 150.0,
            idd4w_ma: 140.0,
            idd5b_ma: 390.0,
            vdd_v: 1.2,
            refresh_window_ns: 550.0,
        }
    }
}

/// Rank-level per-command energies (nJ) and per-bank background power (mW).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EnergyParams {
    pub act_nj: f64,
    pub pre_nj: f64,
    pub rd_nj: f64,
    pub wr_nj: f64,
    pub ref_nj: f64,
    pub bank_active_mw: f64,
    pub bank_precharged_mw: f64,
}

impl EnergyParams {
    /// mA * V * ns = pJ; commands are priced for the whole rank.
    pub fn from_idd(idd: &IddCurrents, t: &TimingParams, g: &Geometry) -> Self {
        let chips = f64::from(g.chips_per_rank);
        let banks = f64::from(g.banks_per_chip());
        let pj = |delta_ma: f64, ns: f64| delta_ma * idd.vdd_v * ns / 1000.0;
        EnergyParams {
            act_nj: pj(idd.idd0_ma - idd.idd3n_ma, t.ns(t.t_ras)) * chips,
            pre_nj: pj(idd.idd0_ma - idd.idd2n_ma, t.ns(t.t_rp)) * chips,
            rd_nj: pj(idd.idd4r_ma - idd.idd3n_ma, t.ns(t.t_bl)) * chips,
            wr_nj: pj(idd.idd4w_ma - idd.idd3n_ma, t.ns(t.t_bl)) * chips,
            ref_nj: pj(idd.idd5b_ma - idd.idd3n_ma, idd.refresh_window_ns) * chips,
            bank_active_mw: idd.idd3n_ma * idd.vdd_v * chips / banks,
            bank_precharged_mw: idd.idd2n_ma * idd.vdd_v * chips / banks,
        }
    }

    pub fn ddr4_defaults(t: &TimingParams, g: &Geometry) -> Self {
        Self::from_idd(&IddCurrents::ddr4_16gb(), t, g)
    }
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self::ddr4_defaults(&TimingParams::default(), &Geometry::default())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct EnergyBreakdown {
    pub act_nj: f64,
    pub pre_nj: f64,
    pub rd_nj: f64,
    pub wr_nj: f64,
    pub ref_nj: f64,
    pub maint_nj: f64,
    pub background_nj: f64,
    pub total_nj: f64,
}

#[derive(Debug, Clone, Copy)]
struct OpenSpan {
    since: Cycle,
}

#[derive(Debug, Clone)]
struct PendingAct {
    cycle: Cycle,
    nacks: u32,
}

/// Streaming event consumer. A rejected activation is not charged (and in a
/// divergent rank, a partial one is charged for the accepting chips only).
pub struct EnergyModel {
    params: EnergyParams,
    chips: u32,
    t_nack: Cycle,
    clock_ns: f64,
    banks: usize,
    open: HashMap<(u8, u8, usize), OpenSpan>,
    pending: HashMap<(u8, u8, usize), PendingAct>,
    active_cycles: u64,
    out: EnergyBreakdown,
    g: Geometry,
}

impl EnergyModel {
    pub fn new(params: EnergyParams, g: &Geometry, t: &TimingParams) -> Self {
        let banks = (g.channels * g.ranks_per_channel * g.banks_per_chip()) as usize;
        EnergyModel {
            params,
            chips: g.chips_per_rank,
            t_nack: t.t_nack,
            clock_ns: t.clock_ns,
            banks,
            open: HashMap::new(),
            pending: HashMap::new(),
            active_cycles: 0,
            out: EnergyBreakdown::default(),
            g: g.clone(),
        }
    }

    fn chip_fraction(&self, sel: ChipSel) -> f64 {
        match sel {
            ChipSel::All => 1.0,
            ChipSel::One(_) => 1.0 / f64::from(self.chips),
        }
    }

    fn commit_pending(&mut self, key: (u8, u8, usize)) {
        if let Some(p) = self.pending.remove(&key) {
            let accepted = f64::from(self.chips.saturating_sub(p.nacks)) / f64::from(self.chips);
            if accepted > 0.0 {
                self.out.act_nj += self.params.act_nj * accepted;
                self.open.insert(key, OpenSpan { since: p.cycle });
            }
        }
    }

    pub fn observe(&mut self, ev: &CommandEvent) {
        let key = (ev.addr.channel, ev.addr.rank, ev.addr.flat_bank(&self.g));
        // Resolve an ACT whose rejection window has passed.
        if let Some(p) = self.pending.get(&key) {
            if ev.cycle > p.cycle + self.t_nack
                || (ev.cycle == p.cycle + self.t_nack && ev.kind != CmdKind::Nack)
            {
                self.commit_pending(key);
            }
        }
        match (ev.kind, ev.origin) {
            (CmdKind::Act, Origin::Controller) => {
                self.pending.insert(
                    key,
                    PendingAct {
                        cycle: ev.cycle,
                        nacks: 0,
                    },
                );
            }
            (CmdKind::Nack, _) => {
                if let Some(p) = self.pending.get_mut(&key) {
                    // Lockstep rejections stand for every chip in the rank.
                    p.nacks += match ev.origin {
                        Origin::Mech {
                            chip: ChipSel::All, ..
                        } => self.chips,
                        _ => 1,
                    };
                    if p.nacks >= self.chips {
                        self.pending.remove(&key);
                    }
                }
            }
            (CmdKind::Pre, Origin::Controller) => {
                if let Some(span) = self.open.remove(&key) {
                    self.active_cycles += ev.cycle - span.since;
                }
                self.out.pre_nj += self.params.pre_nj;
            }
            (CmdKind::Rd, Origin::Controller) => self.out.rd_nj += self.params.rd_nj,
            (CmdKind::Wr, Origin::Controller) => self.out.wr_nj += self.params.wr_nj,
            (CmdKind::Ref, Origin::Controller) => self.out.ref_nj += self.params.ref_nj,
            // In-DRAM maintenance commands are priced as their controller
            // counterparts, scaled to the chips that actually perform them.
            (CmdKind::MaintAct, Origin::Mech { chip, .. }) => {
                self.out.maint_nj += self.params.act_nj * self.chip_fraction(chip);
            }
            (CmdKind::MaintPre, Origin::Mech { chip, .. }) => {
                self.out.maint_nj += self.params.pre_nj * self.chip_fraction(chip);
            }
            (CmdKind::MaintRd, Origin::Mech { chip, .. }) => {
                self.out.maint_nj += self.params.rd_nj * self.chip_fraction(chip);
            }
            (CmdKind::MaintWb, Origin::Mech { chip, .. }) => {
                self.out.maint_nj += self.params.wr_nj * self.chip_fraction(chip);
            }
            _ => {}
        }
    }

    /// Closes open spans and integrates background power over the elapsed
    /// span.
    pub fn finalize(mut self, elapsed: Cycle) -> EnergyBreakdown {
        let mut keys: Vec<_> = self.pending.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            self.commit_pending(key);
        }
        for (_, span) in self.open.drain() {
            self.active_cycles += elapsed.saturating_sub(span.since);
        }
        let total_bank_cycles = elapsed as f64 * self.banks as f64;
        let active = self.active_cycles as f64;
        let precharged = (total_bank_cycles - active).max(0.0);
        // mW * ns = pJ.
        self.out.background_nj = (self.params.bank_active_mw * active * self.clock_ns
            + self.params.bank_precharged_mw * precharged * self.clock_ns)
            / 1000.0;
        self.out.total_nj = self.out.act_nj
            + self.out.pre_nj
            + self.out.rd_nj
            + self.out.wr_nj
            + self.out.ref_nj
            + self.out.maint_nj
            + self.out.background_nj;
        self.out
    }
}

/// Convenience entry point over a recorded log.
pub fn energy_of(
    events: &[CommandEvent],
    elapsed: Cycle,
    params: &EnergyParams,
    g: &Geometry,
    t: &TimingParams,
) -> EnergyBreakdown {
    let mut model = EnergyModel::new(params.clone(), g, t);
    for ev in events {
        model.observe(ev);
    }
    model.finalize(elapsed)
}
