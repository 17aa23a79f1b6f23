//! Per-run statistics and the weighted-speedup metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::audit::{
    ExclusionVerdict, RefreshVerdict, RetryVerdict, RowHammerVerdict, ScrubVerdict, TimingVerdict,
};
use crate::sim::energy::EnergyBreakdown;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("core counts differ: {0} vs {1}")]
    CoreMismatch(usize, usize),
    #[error("core {0} has zero alone-run IPC")]
    ZeroAloneIpc(usize),
}

/// Sum over cores of shared-run IPC divided by alone-run IPC. A run compared
/// against itself scores the core count.
pub fn weighted_speedup(run_ipcs: &[f64], alone_ipcs: &[f64]) -> Result<f64, MetricError> {
    if run_ipcs.len() != alone_ipcs.len() {
        return Err(MetricError::CoreMismatch(run_ipcs.len(), alone_ipcs.len()));
    }
    let mut total = 0.0;
    for (i, (&run, &alone)) in run_ipcs.iter().zip(alone_ipcs).enumerate() {
        if alone <= 0.0 {
            return Err(MetricError::ZeroAloneIpc(i));
        }
        total += run / alone;
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CoreReport {
    pub retired: u64,
    pub cycles: u64,
    pub ipc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct LatencyStats {
    pub count: u64,
    pub mean: f64,
    pub p99: u64,
    pub max: u64,
}

impl LatencyStats {
    pub fn from_samples(samples: &mut [u64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        samples.sort_unstable();
        let count = samples.len() as u64;
        let sum: u64 = samples.iter().sum();
        let p99 = samples[((samples.len() - 1) as f64 * 0.99) as usize];
        LatencyStats {
            count,
            mean: sum as f64 / count as f64,
            p99,
            max: *samples.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MaintCounts {
    pub row_ops: u64,
    pub reads: u64,
    pub writebacks: u64,
    pub nacks_caused: u64,
}

/// Everything a run reports. Serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Report {
    pub cycles: u64,
    pub cores: Vec<CoreReport>,
    /// Σ run_ipc / alone_ipc against a named baseline; filled by `compare`.
    pub weighted_speedup: Option<f64>,
    pub total_throughput_ipc: f64,
    pub act_issues: u64,
    pub nacked_acts: u64,
    pub nack_events: u64,
    /// nacked ACT issues over all ACT issues.
    pub nack_rate: f64,
    pub retries: u64,
    pub ref_count: u64,
    pub reads: u64,
    pub writes: u64,
    pub requests_completed: u64,
    pub requests_issued: u64,
    pub maintenance: BTreeMap<String, MaintCounts>,
    pub read_latency: LatencyStats,
    pub max_nack_resolve: u64,
    pub timeout_precharges: u64,
    pub timing_audit: Option<TimingVerdict>,
    pub exclusion_audit: Option<ExclusionVerdict>,
    pub refresh_audit: Option<RefreshVerdict>,
    pub rowhammer_audit: Option<RowHammerVerdict>,
    pub scrub_audit: Option<ScrubVerdict>,
    pub retry_audit: Option<RetryVerdict>,
    pub energy: EnergyBreakdown,
    pub events: u64,
    /// SHA-256 over the packed event stream: identical config+seed runs hash
    /// identically.
    pub event_hash: String,
}

impl Report {
    /// True when every enabled auditor passed.
    pub fn audits_pass(&self, retry_slack: u64) -> bool {
        self.timing_audit.as_ref().is_none_or(TimingVerdict::pass)
            && self
                .exclusion_audit
                .as_ref()
                .is_none_or(ExclusionVerdict::pass)
            && self.refresh_audit.as_ref().is_none_or(RefreshVerdict::pass)
            && self
                .rowhammer_audit
                .as_ref()
                .is_none_or(RowHammerVerdict::pass)
            && self.scrub_audit.as_ref().is_none_or(ScrubVerdict::pass)
            && self
                .retry_audit
                .as_ref()
                .is_none_or(|r| r.pass(retry_slack))
    }
}

/// Deltas between two runs, as emitted by the compare subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub weighted_speedup: f64,
    /// Weighted speedup divided by the core count (1.0 = parity).
    pub normalized_speedup: f64,
    pub energy_delta_nj: f64,
    pub energy_ratio: f64,
    pub nack_rate_delta: f64,
}

pub fn compare(baseline: &Report, candidate: &Report) -> Result<Comparison, MetricError> {
    let run: Vec<f64> = candidate.cores.iter().map(|c| c.ipc).collect();
    let alone: Vec<f64> = baseline.cores.iter().map(|c| c.ipc).collect();
    let ws = weighted_speedup(&run, &alone)?;
    Ok(Comparison {
        weighted_speedup: ws,
        normalized_speedup: ws / run.len().max(1) as f64,
        energy_delta_nj: candidate.energy.total_nj - baseline.energy.total_nj,
        energy_ratio: if baseline.energy.total_nj > 0.0 {
            candidate.energy.total_nj / baseline.energy.total_nj
        } else {
            1.0
        },
        nack_rate_delta: candidate.nack_rate - baseline.nack_rate,
    })
}
