//! Devices, cloud composition, and the resource/potential bookkeeping.
//!
//! A composition is the set of devices currently pooling their residual
//! resources. Potential metrics are plain serviced/received ratios kept at
//! device granularity and aggregated at composition level; "received" counts
//! every request routed to a device, including the ones it later failed.

use crate::error::{Error, Result};

/// Identifier of a participating (or requesting) device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

/// One member of the composition: its abstract residual-resource budget, the
/// interfaces it contributes, and its lifetime request counters.
#[derive(Clone, Debug)]
pub struct Device {
    pub device_id: DeviceId,
    pub residual_resource: f64,
    pub interface_ids: Vec<crate::queueing::InterfaceId>,
    pub requests_received: u64,
    pub requests_serviced: u64,
    pub registered: bool,
}

impl Device {
    pub fn new(
        device_id: DeviceId,
        residual_resource: f64,
        interface_ids: Vec<crate::queueing::InterfaceId>,
    ) -> Result<Self> {
        if !(residual_resource >= 0.0) {
            return Err(Error::domain(format!(
                "residual resource must be nonnegative, got {residual_resource}"
            )));
        }
        if interface_ids.is_empty() {
            return Err(Error::domain("a device needs at least one interface"));
        }
        Ok(Device {
            device_id,
            residual_resource,
            interface_ids,
            requests_received: 0,
            requests_serviced: 0,
            registered: true,
        })
    }

    /// Serviced/received ratio for this device; vacuously 1 before it has
    /// received anything.
    pub fn potential(&self) -> Result<f64> {
        device_potential(self.requests_serviced, self.requests_received)
    }
}

/// The set of devices currently pooled, with the slot at which they formed.
#[derive(Clone, Debug, Default)]
pub struct MdcComposition {
    pub devices: Vec<Device>,
    pub formation_slot: u64,
}

impl MdcComposition {
    pub fn new(devices: Vec<Device>, formation_slot: u64) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for device in &devices {
            if !seen.insert(device.device_id) {
                return Err(Error::domain(format!(
                    "duplicate device id {:?} in composition",
                    device.device_id
                )));
            }
        }
        Ok(MdcComposition {
            devices,
            formation_slot,
        })
    }
}

/// Total combined residual resource of the composition.
pub fn total_resource(composition: &MdcComposition) -> f64 {
    composition.devices.iter().map(|d| d.residual_resource).sum()
}

/// Per-device service potential: `serviced / received`, with the convention
/// that a device that has received nothing has potential 1.
pub fn device_potential(serviced: u64, received: u64) -> Result<f64> {
    if serviced > received {
        return Err(Error::Contract(format!(
            "serviced count {serviced} exceeds received count {received}"
        )));
    }
    if received == 0 {
        return Ok(1.0);
    }
    Ok(serviced as f64 / received as f64)
}

/// Composition-level potential: total serviced over total received across all
/// member devices, 1 when nothing has been received yet.
pub fn mdc_potential(composition: &MdcComposition) -> f64 {
    let received: u64 = composition.devices.iter().map(|d| d.requests_received).sum();
    if received == 0 {
        return 1.0;
    }
    let serviced: u64 = composition.devices.iter().map(|d| d.requests_serviced).sum();
    serviced as f64 / received as f64
}
