//! Run configuration: geometry and timing knobs, maintenance mechanism
//! selection, divergence and scheduling policies, workload sources and audit
//! toggles. Serialized as JSON.

use serde::{Deserialize, Serialize};

use crate::chip::BitlineMode;
use crate::dram::{ConfigError, Cycle, Geometry, TimingParams};
use crate::memctrl::{DivergencePolicy, McPara};
use crate::sim::energy::EnergyParams;
use crate::workload::{self, HammerPattern, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Conventional controller-managed DRAM (REF engine in the controller).
    #[default]
    Ddr4Baseline,
    /// Self-managing chips: maintenance runs inside the DRAM.
    Smd,
}

/// Optional overrides for individual timing parameters (cycles).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TimingOverrides {
    pub t_rcd: Option<Cycle>,
    pub t_rp: Option<Cycle>,
    pub t_ras: Option<Cycle>,
    pub t_cl: Option<Cycle>,
    pub t_bl: Option<Cycle>,
    pub t_ccd_l: Option<Cycle>,
    pub t_wtr: Option<Cycle>,
    pub t_rrd: Option<Cycle>,
    pub t_rfc: Option<Cycle>,
    pub ari: Option<Cycle>,
    pub t_nack: Option<Cycle>,
}

impl TimingOverrides {
    pub fn apply(&self, t: &mut TimingParams) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        set!(t_rcd, t_rp, t_ras, t_cl, t_bl, t_ccd_l, t_wtr, t_rrd, t_rfc, ari, t_nack);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "from", rename_all = "kebab-case")]
pub enum WeakRowsSource {
    File { path: String },
    Generate { fraction: f64, seed: u64 },
}

impl Default for WeakRowsSource {
    fn default() -> Self {
        WeakRowsSource::Generate {
            fraction: 0.001,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "from", rename_all = "kebab-case")]
pub enum FaultSource {
    #[default]
    None,
    File {
        path: String,
    },
    Generate {
        count: usize,
        seed: u64,
    },
}

fn d_rg() -> u32 {
    8
}
fn d_rt_weak() -> f64 {
    128.0
}
fn d_bits() -> usize {
    8192
}
fn d_hashes() -> u32 {
    6
}
fn d_pmark() -> f64 {
    0.01
}
fn d_blast() -> u32 {
    1
}
fn d_actmax_prp() -> u64 {
    1024
}
fn d_actmax_drp() -> u64 {
    512
}
fn d_scrub_s() -> f64 {
    300.0
}
fn d_codewords() -> u32 {
    128
}
fn d_hold() -> u64 {
    592
}

/// One in-DRAM maintenance mechanism and its parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechConfig {
    /// SMD-FR.
    FixedRefresh {
        #[serde(default = "d_rg")]
        rg: u32,
    },
    /// SMD-VR.
    VariableRefresh {
        #[serde(default = "d_rg")]
        rg: u32,
        /// Retention threshold of weak rows; rows above it refresh once every
        /// rt_weak_ms / refresh_period sweeps.
        #[serde(default = "d_rt_weak")]
        rt_weak_ms: f64,
        #[serde(default = "d_bits")]
        filter_bits: usize,
        #[serde(default = "d_hashes")]
        filter_hashes: u32,
        #[serde(default)]
        weak_rows: WeakRowsSource,
    },
    /// SMD-PRP.
    ProbRh {
        #[serde(default = "d_pmark")]
        p_mark: f64,
        #[serde(default = "d_blast")]
        blast_radius: u32,
    },
    /// SMD-PRP+.
    ProbRhPlus {
        #[serde(default = "d_pmark")]
        p_mark: f64,
        #[serde(default = "d_blast")]
        blast_radius: u32,
        #[serde(default = "d_actmax_prp")]
        act_max: u64,
        #[serde(default = "d_bits")]
        cbf_counters: usize,
        #[serde(default = "d_hashes")]
        cbf_hashes: u32,
        /// Rolling window; defaults to the refresh period.
        #[serde(default)]
        window_ms: Option<f64>,
    },
    /// SMD-DRP.
    DetRh {
        #[serde(default = "d_actmax_drp")]
        act_max: u64,
        /// Counter-table entries; None sizes it from the activation budget
        /// of one refresh window.
        #[serde(default)]
        entries: Option<usize>,
        #[serde(default = "d_blast")]
        blast_radius: u32,
    },
    /// SMD-MS.
    Scrub {
        #[serde(default = "d_scrub_s")]
        period_s: f64,
        #[serde(default = "d_codewords")]
        codewords_per_row: u32,
        #[serde(default)]
        faults: FaultSource,
    },
    /// Adversarial round-robin lock generator.
    Stress {
        #[serde(default = "d_hold")]
        hold: u64,
    },
}

impl MechConfig {
    pub fn is_refresh(&self) -> bool {
        matches!(
            self,
            MechConfig::FixedRefresh { .. } | MechConfig::VariableRefresh { .. }
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[derive(Default)]
pub enum DivergenceMode {
    /// All chips of a rank share one state.
    #[default]
    Lockstep,
    /// Chip i delays its first refresh by i times one refresh-op latency and
    /// starts on lock region i.
    WorstCase,
    Custom {
        offsets: Vec<ChipOffset>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ChipOffset {
    pub delay: Cycle,
    pub lock_region: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub queue_depth: usize,
    pub cap: u32,
    pub drain_high: usize,
    pub drain_low: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            queue_depth: 64,
            cap: 4,
            drain_high: 32,
            drain_low: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Baselines {
    pub mc_para: Option<McPara>,
    pub mc_scrub_period_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", tag = "until")]
pub enum RunLength {
    Cycles {
        n: u64,
    },
    /// Run until every core has retired n instructions (traces repeat).
    Instructions {
        n: u64,
    },
    /// Play each trace once and drain all queues.
    TraceOnce,
}

impl Default for RunLength {
    fn default() -> Self {
        RunLength::Cycles { n: 100_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TraceSource {
    File {
        path: String,
    },
    Stream {
        len: usize,
        stride: u64,
        #[serde(default)]
        start: u64,
        #[serde(default)]
        bubbles: u64,
    },
    Random {
        len: usize,
        seed: u64,
        footprint: u64,
        #[serde(default)]
        bubbles: u64,
        #[serde(default)]
        write_fraction: f64,
    },
    Mix {
        len: usize,
        seed: u64,
        stride: u64,
        footprint: u64,
        #[serde(default)]
        bubbles: u64,
    },
    Hammer {
        pattern: HammerPattern,
        aggressors: Vec<u32>,
        #[serde(default = "one")]
        acts_per_round: usize,
        #[serde(default)]
        bubbles: u64,
        len: usize,
    },
}

fn one() -> usize {
    1
}

impl TraceSource {
    pub fn resolve(&self, g: &Geometry) -> Result<Vec<TraceEntry>, ConfigError> {
        Ok(match self {
            TraceSource::File { path } => workload::load_trace(std::path::Path::new(path))
                .map_err(|e| ConfigError::Invalid(format!("trace {path}: {e}")))?,
            TraceSource::Stream {
                len,
                stride,
                start,
                bubbles,
            } => workload::gen_stream(*len, *stride, *start, *bubbles),
            TraceSource::Random {
                len,
                seed,
                footprint,
                bubbles,
                write_fraction,
            } => workload::gen_random(*len, *seed, *footprint, *bubbles, *write_fraction),
            TraceSource::Mix {
                len,
                seed,
                stride,
                footprint,
                bubbles,
            } => workload::gen_mix(*len, *seed, *stride, *footprint, *bubbles),
            TraceSource::Hammer {
                pattern,
                aggressors,
                acts_per_round,
                bubbles,
                len,
            } => workload::gen_hammer(*pattern, aggressors, *acts_per_round, *bubbles, *len, g),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub timing: bool,
    pub exclusion: bool,
    /// Refresh coverage; enabled when a refresh source exists. Costs memory
    /// proportional to rows x banks x chips.
    pub refresh: bool,
    pub rowhammer: bool,
    pub scrub: bool,
    pub retry: bool,
    /// Largest tolerated deviation from exact ARI retry spacing (same-cycle
    /// bus collisions slip a retry by a cycle or two).
    pub retry_slack: Cycle,
    /// Override for the RowHammer budget audited against; defaults to the
    /// protection mechanism's act_max.
    pub rowhammer_act_max: Option<u64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            timing: true,
            exclusion: true,
            refresh: false,
            rowhammer: false,
            scrub: false,
            retry: true,
            retry_slack: 8,
            rowhammer_act_max: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub geometry: Geometry,
    pub speed_grade: String,
    pub refresh_period_ms: f64,
    /// Integer divisor shrinking tREFW/tREFI (and the scrub period) so long
    /// refresh horizons fit in short runs; all consumers read scaled values.
    pub time_scale: u64,
    pub timing: TimingOverrides,
    pub mode: Mode,
    /// DDR4 mode only: disable the refresh engine entirely (the hypothetical
    /// upper-bound configuration).
    pub no_refresh: bool,
    pub mechanisms: Vec<MechConfig>,
    /// Overrides geometry.subarrays_per_region: 16 regions by default, 1 for
    /// the single-lock-region variant.
    pub regions_per_bank: Option<u32>,
    pub bitline: BitlineMode,
    pub divergence: DivergenceMode,
    pub policy: DivergencePolicy,
    /// Pause in-flight maintenance for incoming activations: refresh engines
    /// lock one row at a time and ops truncate at row boundaries.
    pub pause_policy: bool,
    /// Allow two mechanisms to hold two disjoint regions of one bank.
    pub multi_mech: bool,
    pub scheduler: SchedulerConfig,
    pub baselines: Baselines,
    /// None: bundled defaults derived from datasheet currents.
    pub energy: Option<EnergyParams>,
    pub seed: u64,
    pub run: RunLength,
    /// One trace per core.
    pub traces: Vec<TraceSource>,
    pub audits: AuditConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            geometry: Geometry::default(),
            speed_grade: "DDR4-3200".to_string(),
            refresh_period_ms: 32.0,
            time_scale: 1,
            timing: TimingOverrides::default(),
            mode: Mode::default(),
            no_refresh: false,
            mechanisms: Vec::new(),
            regions_per_bank: None,
            bitline: BitlineMode::default(),
            divergence: DivergenceMode::default(),
            policy: DivergencePolicy::default(),
            pause_policy: false,
            multi_mech: false,
            scheduler: SchedulerConfig::default(),
            baselines: Baselines::default(),
            energy: None,
            seed: 1,
            run: RunLength::default(),
            traces: Vec::new(),
            audits: AuditConfig::default(),
        }
    }
}

impl SimConfig {
    /// Geometry with the lock-region override applied.
    pub fn resolved_geometry(&self) -> Result<Geometry, ConfigError> {
        let mut g = self.geometry.clone();
        if let Some(regions) = self.regions_per_bank {
            if regions == 0 || !g.subarrays_per_bank().is_multiple_of(regions) {
                return Err(ConfigError::Invalid(format!(
                    "regions_per_bank {regions} does not divide {} subarrays",
                    g.subarrays_per_bank()
                )));
            }
            g.subarrays_per_region = g.subarrays_per_bank() / regions;
        }
        g.validate()?;
        Ok(g)
    }

    /// Timing with grade defaults, overrides, and the time scale applied.
    pub fn resolved_timing(&self) -> Result<TimingParams, ConfigError> {
        let mut t = TimingParams::for_grade(&self.speed_grade, self.refresh_period_ms)?;
        self.timing.apply(&mut t);
        if self.time_scale == 0 {
            return Err(ConfigError::Invalid("time_scale must be >= 1".into()));
        }
        t.apply_time_scale(self.time_scale);
        if t.t_nack >= t.t_rcd {
            return Err(ConfigError::Invalid(format!(
                "t_nack {} must be below t_rcd {}",
                t.t_nack, t.t_rcd
            )));
        }
        if t.ari <= t.t_nack {
            return Err(ConfigError::Invalid("ari must exceed t_nack".into()));
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolved_geometry()?;
        self.resolved_timing()?;
        match self.mode {
            Mode::Ddr4Baseline => {
                if !self.mechanisms.is_empty() {
                    return Err(ConfigError::Invalid(
                        "in-DRAM mechanisms require smd mode".into(),
                    ));
                }
            }
            Mode::Smd => {
                if self.no_refresh {
                    return Err(ConfigError::Invalid(
                        "no_refresh applies to the ddr4-baseline mode".into(),
                    ));
                }
            }
        }
        let refresh_mechs = self.mechanisms.iter().filter(|m| m.is_refresh()).count();
        if refresh_mechs > 1 {
            return Err(ConfigError::Invalid(
                "at most one refresh mechanism (fixed or variable)".into(),
            ));
        }
        if let DivergenceMode::Custom { offsets } = &self.divergence {
            if offsets.len() != self.geometry.chips_per_rank as usize {
                return Err(ConfigError::Invalid(format!(
                    "custom divergence needs {} chip offsets",
                    self.geometry.chips_per_rank
                )));
            }
        }
        Ok(())
    }

    /// Logical chips simulated per rank: one in lockstep, all of them when
    /// the chips may diverge.
    pub fn logical_chips(&self) -> usize {
        match self.divergence {
            DivergenceMode::Lockstep => 1,
            _ => self.geometry.chips_per_rank as usize,
        }
    }

    pub fn from_json(text: &str) -> Result<SimConfig, ConfigError> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn regions_override_shapes_the_lock_region() {
        let cfg = SimConfig {
            regions_per_bank: Some(1),
            ..SimConfig::default()
        };
        let g = cfg.resolved_geometry().unwrap();
        assert_eq!(g.regions_per_bank(), 1);
        assert_eq!(g.region_rows(), g.rows_per_bank);
    }

    #[test]
    fn mechanisms_rejected_in_baseline_mode() {
        let cfg = SimConfig {
            mechanisms: vec![MechConfig::FixedRefresh { rg: 8 }],
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn two_refresh_mechanisms_rejected() {
        let cfg = SimConfig {
            mode: Mode::Smd,
            mechanisms: vec![
                MechConfig::FixedRefresh { rg: 8 },
                MechConfig::VariableRefresh {
                    rg: 8,
                    rt_weak_ms: 128.0,
                    filter_bits: 8192,
                    filter_hashes: 6,
                    weak_rows: WeakRowsSource::default(),
                },
            ],
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = SimConfig {
            mode: Mode::Smd,
            mechanisms: vec![
                MechConfig::FixedRefresh { rg: 8 },
                MechConfig::DetRh {
                    act_max: 512,
                    entries: None,
                    blast_radius: 1,
                },
            ],
            run: RunLength::Cycles { n: 1000 },
            traces: vec![TraceSource::Random {
                len: 100,
                seed: 3,
                footprint: 1 << 30,
                bubbles: 2,
                write_fraction: 0.25,
            }],
            ..SimConfig::default()
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = SimConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let cfg =
            SimConfig::from_json(r#"{"mode": "smd", "mechanisms": [{"kind": "fixed-refresh"}]}"#)
                .unwrap();
        assert_eq!(cfg.mechanisms, vec![MechConfig::FixedRefresh { rg: 8 }]);
        assert_eq!(cfg.time_scale, 1);
    }
}
