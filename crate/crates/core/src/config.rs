//! Scenario configuration: schema, defaults, TOML parsing, dotted-path
//! overrides, and validation.
//!
//! An empty document resolves to the full default scenario; every field can
//! be overridden from a file or with `section.key=value` pairs applied after
//! the file. Unknown keys are rejected rather than ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complete description of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub simulation: SimulationSection,
    pub devices: Vec<DeviceSpec>,
    pub channel: ChannelSection,
    pub queueing: QueueingSection,
    pub workload: WorkloadSection,
    pub policy: PolicySection,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            simulation: SimulationSection::default(),
            devices: vec![DeviceSpec::default(); 3],
            channel: ChannelSection::default(),
            queueing: QueueingSection::default(),
            workload: WorkloadSection::default(),
            policy: PolicySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Master seed; multi-run commands derive per-run seeds from it.
    pub seed: u64,
    /// Number of slots to simulate. Zero is allowed and yields an empty run.
    pub slots: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { seed: 42, slots: 10_000 }
    }
}

/// One participating device: its abstract residual-resource budget (consumed
/// by in-flight requests, restored on completion or expiry) and how many
/// interfaces it contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSpec {
    pub residual_resource: f64,
    pub interfaces: u32,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec { residual_resource: 1.0e12, interfaces: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// Lower bound of the per-slot uniform fading-parameter draw.
    pub m_low: f64,
    /// Upper bound of the per-slot uniform fading-parameter draw.
    pub m_high: f64,
    /// Proportionality constant of the weight mapping w = k·m.
    pub proportionality_k: f64,
    /// Nakagami spread Ω (mean-square gain).
    pub spread_omega: f64,
    /// Amplitude at which delivery success saturates to certainty.
    pub reference_gain: f64,
    /// Fading parameter below which a slot counts toward interface failure.
    pub failure_m_threshold: f64,
    /// Consecutive bad slots that mark an interface failed (and consecutive
    /// good slots that recover it).
    pub failure_window: u32,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            m_low: 0.1,
            m_high: 1.0,
            proportionality_k: 1.0,
            spread_omega: 1.0,
            reference_gain: 1.0,
            failure_m_threshold: 0.15,
            failure_window: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueingSection {
    /// Total packet capacity split evenly across all interfaces (remainder
    /// goes to the lowest interface ids).
    pub aggregate_capacity: u64,
    /// Per-queue threshold as a fraction of that queue's capacity.
    pub threshold_fraction: f64,
}

impl Default for QueueingSection {
    fn default() -> Self {
        QueueingSection { aggregate_capacity: 100, threshold_fraction: 0.75 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    /// Expected request arrivals per slot (Poisson).
    pub lambda: f64,
    pub size_min_bytes: u64,
    pub size_max_bytes: u64,
    pub deadline_min_slots: u64,
    pub deadline_max_slots: u64,
    /// Bytes carried per packet; requests are split into ceil(size/unit)
    /// packets.
    pub payload_unit_bytes: u64,
    /// Fraction of arrivals issued by an unregistered consumer (these are
    /// forcefully dropped at admission).
    pub unregistered_fraction: f64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            lambda: 0.3,
            size_min_bytes: 1_048_576,
            size_max_bytes: 4_194_304,
            deadline_min_slots: 50,
            deadline_max_slots: 200,
            payload_unit_bytes: 1500,
            unregistered_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Enables the congestion handler (threshold offloading plus
    /// retransmission rerouting). Off reproduces the baseline arm.
    pub handler_enabled: bool,
    /// Restricts admission to consumers on the serving device's friend list.
    pub friend_mode: bool,
    /// Normalizes the improvement percentage by the baseline arm instead of
    /// the handler arm.
    pub improvement_relative_to_baseline: bool,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            handler_enabled: true,
            friend_mode: false,
            improvement_relative_to_baseline: false,
        }
    }
}

impl SimulationConfig {
    /// Total number of interfaces across all devices.
    pub fn total_interfaces(&self) -> u64 {
        self.devices.iter().map(|d| u64::from(d.interfaces)).sum()
    }

    /// Per-queue capacities after splitting the aggregate: `aggregate / n`
    /// each, with the remainder handed to the lowest interface ids.
    pub fn per_queue_capacities(&self) -> Vec<usize> {
        let n = self.total_interfaces() as usize;
        if n == 0 {
            return Vec::new();
        }
        let base = (self.queueing.aggregate_capacity as usize) / n;
        let remainder = (self.queueing.aggregate_capacity as usize) % n;
        (0..n).map(|i| base + usize::from(i < remainder)).collect()
    }

    /// Serializes the resolved configuration back to TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(format!("serialization failed: {e}")))
    }

    /// Checks every field constraint, reporting the first violation with its
    /// field name, offending value, and the constraint text.
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::invalid("devices", "[]", "at least one device is required"));
        }
        for (i, device) in self.devices.iter().enumerate() {
            if device.interfaces == 0 {
                return Err(Error::invalid(
                    &format!("devices[{i}].interfaces"),
                    device.interfaces,
                    "every device needs at least one interface",
                ));
            }
            if !(device.residual_resource >= 0.0 && device.residual_resource.is_finite()) {
                return Err(Error::invalid(
                    &format!("devices[{i}].residual_resource"),
                    device.residual_resource,
                    "residual resource must be finite and nonnegative",
                ));
            }
        }

        let interfaces = self.total_interfaces();
        if self.queueing.aggregate_capacity < interfaces {
            return Err(Error::invalid(
                "queueing.aggregate_capacity",
                self.queueing.aggregate_capacity,
                "aggregate capacity must provide at least one packet per interface",
            ));
        }
        if !(self.queueing.threshold_fraction > 0.0 && self.queueing.threshold_fraction <= 1.0) {
            return Err(Error::invalid(
                "queueing.threshold_fraction",
                self.queueing.threshold_fraction,
                "threshold fraction must lie in (0, 1]",
            ));
        }

        let ch = &self.channel;
        if !(ch.m_low > 0.0 && ch.m_low.is_finite()) {
            return Err(Error::invalid("channel.m_low", ch.m_low, "m_low must be positive"));
        }
        if !(ch.m_high >= ch.m_low && ch.m_high.is_finite()) {
            return Err(Error::invalid(
                "channel.m_high",
                ch.m_high,
                "m_high must be finite and at least m_low",
            ));
        }
        if !(ch.proportionality_k > 0.0 && ch.proportionality_k.is_finite()) {
            return Err(Error::invalid(
                "channel.proportionality_k",
                ch.proportionality_k,
                "proportionality constant must be positive",
            ));
        }
        if !(ch.spread_omega > 0.0 && ch.spread_omega.is_finite()) {
            return Err(Error::invalid(
                "channel.spread_omega",
                ch.spread_omega,
                "spread omega must be positive",
            ));
        }
        if !(ch.reference_gain > 0.0 && ch.reference_gain.is_finite()) {
            return Err(Error::invalid(
                "channel.reference_gain",
                ch.reference_gain,
                "reference gain must be positive",
            ));
        }
        if !(ch.failure_m_threshold > 0.0 && ch.failure_m_threshold.is_finite()) {
            return Err(Error::invalid(
                "channel.failure_m_threshold",
                ch.failure_m_threshold,
                "failure threshold must be positive",
            ));
        }
        if ch.failure_window == 0 {
            return Err(Error::invalid(
                "channel.failure_window",
                ch.failure_window,
                "failure window must be at least one slot",
            ));
        }

        let wl = &self.workload;
        if !(wl.lambda > 0.0 && wl.lambda.is_finite()) {
            return Err(Error::invalid("workload.lambda", wl.lambda, "lambda must be positive"));
        }
        if wl.size_min_bytes == 0 {
            return Err(Error::invalid(
                "workload.size_min_bytes",
                wl.size_min_bytes,
                "request sizes must be positive",
            ));
        }
        if wl.size_max_bytes < wl.size_min_bytes {
            return Err(Error::invalid(
                "workload.size_max_bytes",
                wl.size_max_bytes,
                "size_max_bytes must be at least size_min_bytes",
            ));
        }
        if wl.deadline_min_slots == 0 {
            return Err(Error::invalid(
                "workload.deadline_min_slots",
                wl.deadline_min_slots,
                "deadlines must be at least one slot",
            ));
        }
        if wl.deadline_max_slots < wl.deadline_min_slots {
            return Err(Error::invalid(
                "workload.deadline_max_slots",
                wl.deadline_max_slots,
                "deadline_max_slots must be at least deadline_min_slots",
            ));
        }
        if wl.payload_unit_bytes == 0 {
            return Err(Error::invalid(
                "workload.payload_unit_bytes",
                wl.payload_unit_bytes,
                "payload unit must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&wl.unregistered_fraction) {
            return Err(Error::invalid(
                "workload.unregistered_fraction",
                wl.unregistered_fraction,
                "unregistered fraction must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Parses a TOML document into a validated configuration. An empty document
/// yields the defaults.
pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    parse_config_with_overrides(text, &[])
}

/// Parses a TOML document, then applies `section.key=value` override pairs on
/// top before validating. Unknown keys — from the file or from overrides —
/// are rejected.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<SimulationConfig> {
    let document: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
    let mut tree = toml::Value::Table(document);
    for pair in overrides {
        let (path, raw) = pair.split_once('=').ok_or_else(|| {
            Error::ConfigParse(format!("override '{pair}' must have the form key=value"))
        })?;
        set_dotted_path(&mut tree, path.trim(), parse_override_value(raw.trim()))?;
    }
    let config: SimulationConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Interprets an override's right-hand side with TOML scalar syntax, falling
/// back to a plain string when it parses as none of the scalar types.
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(table) = format!("value = {raw}").parse::<toml::Table>() {
        if let Some(value) = table.get("value") {
            return value.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn set_dotted_path(root: &mut toml::Value, dotted: &str, value: toml::Value) -> Result<()> {
    if dotted.is_empty() {
        return Err(Error::ConfigParse("override key must not be empty".into()));
    }
    let mut current = root;
    let segments: Vec<&str> = dotted.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let table = current.as_table_mut().ok_or_else(|| {
            Error::ConfigParse(format!(
                "override '{dotted}' descends through '{}', which is not a table",
                segments[..i].join(".")
            ))
        })?;
        if i == segments.len() - 1 {
            table.insert(segment.to_string(), value);
            return Ok(());
        }
        current = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("loop always returns on the final segment");
}
