//! Counters, derived statistics, and tabular export.
//!
//! A [`MetricsReport`] is accumulated by the engine and finalized at the end
//! of a run; multi-run drivers aggregate reports into sweep/comparison/CDF
//! structures. Exports are plain comma-separated tables with `# `-prefixed
//! header lines embedding the resolved configuration and master seed, so any
//! figure can be regenerated from its own artifact. Numbers are serialized
//! with shortest-round-trip precision: re-parsing an export reproduces the
//! exact values.

use std::io::{self, Write};

use serde::Serialize;

use crate::config::SimulationConfig;
use crate::error::{Error, Result};

/// Which experiment arm produced a measurement: congestion handler enabled
/// ("with") or the baseline ("without").
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Arm {
    With,
    Without,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::With => "with",
            Arm::Without => "without",
        }
    }

    pub fn from_handler_flag(handler_enabled: bool) -> Self {
        if handler_enabled {
            Arm::With
        } else {
            Arm::Without
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a finished run reports: request counters by outcome, packet
/// counters by cause, handler/event counters, per-request completion times,
/// the per-slot potential series, and an echo of the producing configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub requests_arrived: u64,
    pub requests_serviced: u64,
    pub dropped_forced: u64,
    pub dropped_overflow_requests: u64,
    pub dropped_deadline: u64,
    /// Requests still live when the run ended.
    pub requests_in_flight: u64,
    pub packets_arrived: u64,
    pub packets_delivered: u64,
    pub packets_dropped_forced: u64,
    pub packets_dropped_overflow: u64,
    pub packets_dropped_deadline: u64,
    /// Packets still buffered when the run ended.
    pub packets_residual: u64,
    pub offload_events: u64,
    pub evacuations: u64,
    pub timeouts: u64,
    /// Arrival-to-final-delivery durations (in slots, inclusive) of every
    /// serviced request.
    pub completion_times: Vec<u64>,
    /// Composition potential sampled at the end of every slot.
    pub potential_series: Vec<f64>,
    pub config: SimulationConfig,
}

impl MetricsReport {
    /// Fresh all-zero report bound to the configuration that will produce it.
    pub fn new(config: SimulationConfig) -> Self {
        MetricsReport {
            requests_arrived: 0,
            requests_serviced: 0,
            dropped_forced: 0,
            dropped_overflow_requests: 0,
            dropped_deadline: 0,
            requests_in_flight: 0,
            packets_arrived: 0,
            packets_delivered: 0,
            packets_dropped_forced: 0,
            packets_dropped_overflow: 0,
            packets_dropped_deadline: 0,
            packets_residual: 0,
            offload_events: 0,
            evacuations: 0,
            timeouts: 0,
            completion_times: Vec::new(),
            potential_series: Vec::new(),
            config,
        }
    }

    /// Requests dropped for any reason.
    pub fn dropped_requests_total(&self) -> u64 {
        self.dropped_forced + self.dropped_overflow_requests + self.dropped_deadline
    }

    /// Final composition potential; vacuously 1 for an empty run.
    pub fn p_mdc_final(&self) -> f64 {
        self.potential_series.last().copied().unwrap_or(1.0)
    }

    pub fn arm(&self) -> Arm {
        Arm::from_handler_flag(self.config.policy.handler_enabled)
    }
}

/// Relative gain of the handler arm over the baseline,
/// `100 · (with − without) / with`. Undefined when the handler arm serviced
/// nothing.
pub fn improvement_percent(serviced_with: u64, serviced_without: u64) -> Result<f64> {
    if serviced_with == 0 {
        return Err(Error::domain(
            "improvement percentage is undefined when the handler arm serviced zero requests",
        ));
    }
    Ok(100.0 * (serviced_with as f64 - serviced_without as f64) / serviced_with as f64)
}

/// Improvement of mean serviced counts, as written into sweep and comparison
/// rows. Returns NaN when the normalizing arm's mean is zero; the alternative
/// normalization divides by the baseline arm instead.
pub fn mean_improvement_percent(mean_with: f64, mean_without: f64, relative_to_baseline: bool) -> f64 {
    let denominator = if relative_to_baseline { mean_without } else { mean_with };
    if denominator == 0.0 {
        return f64::NAN;
    }
    100.0 * (mean_with - mean_without) / denominator
}

/// Empirical CDF of completion times: `(t, F(t))` at each distinct time,
/// nondecreasing with final value 1 for nonempty input.
pub fn completion_time_cdf(times: &[u64]) -> Vec<(u64, f64)> {
    if times.is_empty() {
        return Vec::new();
    }
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    let total = sorted.len() as f64;
    let mut points = Vec::new();
    let mut cumulative = 0usize;
    let mut i = 0usize;
    while i < sorted.len() {
        let t = sorted[i];
        while i < sorted.len() && sorted[i] == t {
            cumulative += 1;
            i += 1;
        }
        points.push((t, cumulative as f64 / total));
    }
    points
}

/// Verifies the request-level and packet-level conservation identities
/// exactly: every arrived request/packet is accounted for by exactly one
/// outcome (or is still in flight / buffered).
pub fn conservation_check(report: &MetricsReport) -> bool {
    let requests_accounted = report.requests_serviced
        + report.dropped_forced
        + report.dropped_overflow_requests
        + report.dropped_deadline
        + report.requests_in_flight;
    let packets_accounted = report.packets_delivered
        + report.packets_dropped_forced
        + report.packets_dropped_overflow
        + report.packets_dropped_deadline
        + report.packets_residual;
    report.requests_arrived == requests_accounted && report.packets_arrived == packets_accounted
}

/// One averaged capacity point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub capacity: u64,
    pub mean_serviced_with: f64,
    pub mean_serviced_without: f64,
    pub mean_dropped_with: f64,
    pub mean_dropped_without: f64,
    pub improvement_pct: f64,
}

/// Capacity sweep with paired handler-on/off arms per derived seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub master_seed: u64,
    pub iterations: u32,
    pub rows: Vec<SweepRow>,
    pub base: SimulationConfig,
    /// Whether every underlying run passed the conservation check.
    pub conservation_ok: bool,
}

/// One paired run of a fixed-capacity comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub seed: u64,
    pub serviced_with: u64,
    pub serviced_without: u64,
    pub dropped_with: u64,
    pub dropped_without: u64,
    pub improvement_pct: f64,
}

/// Paired comparison across derived seeds at the configured capacity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub master_seed: u64,
    pub rows: Vec<CompareRow>,
    pub mean_serviced_with: f64,
    pub mean_serviced_without: f64,
    pub mean_dropped_with: f64,
    pub mean_dropped_without: f64,
    /// Improvement of the mean serviced counts.
    pub improvement_pct: f64,
    pub base: SimulationConfig,
    pub conservation_ok: bool,
}

/// Completion times pooled across derived seeds, per requested arm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CdfReport {
    pub master_seed: u64,
    pub iterations: u32,
    pub arms: Vec<(Arm, Vec<u64>)>,
    pub base: SimulationConfig,
    pub conservation_ok: bool,
}

fn write_header<W: Write>(
    out: &mut W,
    kind: &str,
    master_seed: u64,
    iterations: Option<u32>,
    config: &SimulationConfig,
) -> io::Result<()> {
    writeln!(out, "# mdcsim {kind}")?;
    writeln!(out, "# master_seed = {master_seed}")?;
    if let Some(iterations) = iterations {
        writeln!(out, "# iterations = {iterations}")?;
    }
    let rendered = config
        .to_toml_string()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    for line in rendered.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// Writes one summary row per report:
/// `capacity,arm,seed,requests_arrived,requests_serviced,dropped_forced,dropped_overflow,dropped_deadline,offload_events,evacuations,timeouts,p_mdc_final`.
pub fn write_run_summary<W: Write>(
    out: &mut W,
    base: &SimulationConfig,
    reports: &[MetricsReport],
) -> io::Result<()> {
    write_header(out, "run summary", base.simulation.seed, None, base)?;
    writeln!(
        out,
        "capacity,arm,seed,requests_arrived,requests_serviced,dropped_forced,dropped_overflow,dropped_deadline,offload_events,evacuations,timeouts,p_mdc_final"
    )?;
    for report in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            report.config.queueing.aggregate_capacity,
            report.arm(),
            report.config.simulation.seed,
            report.requests_arrived,
            report.requests_serviced,
            report.dropped_forced,
            report.dropped_overflow_requests,
            report.dropped_deadline,
            report.offload_events,
            report.evacuations,
            report.timeouts,
            report.p_mdc_final(),
        )?;
    }
    Ok(())
}

/// Writes the sweep table:
/// `capacity,mean_serviced_with,mean_serviced_without,mean_dropped_with,mean_dropped_without,improvement_pct`.
pub fn write_sweep_summary<W: Write>(out: &mut W, report: &SweepReport) -> io::Result<()> {
    write_header(
        out,
        "sweep summary",
        report.master_seed,
        Some(report.iterations),
        &report.base,
    )?;
    writeln!(
        out,
        "capacity,mean_serviced_with,mean_serviced_without,mean_dropped_with,mean_dropped_without,improvement_pct"
    )?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.capacity,
            row.mean_serviced_with,
            row.mean_serviced_without,
            row.mean_dropped_with,
            row.mean_dropped_without,
            row.improvement_pct,
        )?;
    }
    Ok(())
}

/// Writes the paired comparison table:
/// `seed,serviced_with,serviced_without,dropped_with,dropped_without,improvement_pct`,
/// followed by a summary row whose seed column reads `mean` and whose
/// improvement is computed from the mean serviced counts.
pub fn write_compare<W: Write>(out: &mut W, report: &CompareReport) -> io::Result<()> {
    write_header(
        out,
        "comparison",
        report.master_seed,
        Some(report.rows.len() as u32),
        &report.base,
    )?;
    writeln!(
        out,
        "seed,serviced_with,serviced_without,dropped_with,dropped_without,improvement_pct"
    )?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.seed,
            row.serviced_with,
            row.serviced_without,
            row.dropped_with,
            row.dropped_without,
            row.improvement_pct,
        )?;
    }
    writeln!(
        out,
        "mean,{},{},{},{},{}",
        report.mean_serviced_with,
        report.mean_serviced_without,
        report.mean_dropped_with,
        report.mean_dropped_without,
        report.improvement_pct,
    )?;
    Ok(())
}

/// Writes the pooled completion-time CDF per arm:
/// `arm,time_slots,cumulative_fraction`.
pub fn write_cdf<W: Write>(out: &mut W, report: &CdfReport) -> io::Result<()> {
    write_header(
        out,
        "completion-time cdf",
        report.master_seed,
        Some(report.iterations),
        &report.base,
    )?;
    writeln!(out, "arm,time_slots,cumulative_fraction")?;
    for (arm, times) in &report.arms {
        for (t, fraction) in completion_time_cdf(times) {
            writeln!(out, "{arm},{t},{fraction}")?;
        }
    }
    Ok(())
}
