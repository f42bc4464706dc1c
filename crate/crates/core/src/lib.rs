//! Deterministic simulator of an MPTCP-enabled mobile device cloud with a
//! user-space congestion handler.
//!
//! A pool of devices exposes one queue per network interface; each link fades
//! per slot under a Nakagami-m channel whose shape parameter also drives a
//! per-interface weight. When a queue's weighted occupancy crosses its
//! threshold, the handler moves the excess to the best eligible peer queue
//! instead of letting arrivals overflow; interface failures are evacuated,
//! retransmissions rerouted, and unregistered consumers rejected at admission.
//! Runs are slotted, seeded, and fully reproducible, which makes paired
//! with/without-handler experiments (capacity sweeps, completion-time CDFs)
//! exact rather than statistical.
//!
//! Entry points: build a [`SimulationConfig`] (usually via [`parse_config`]),
//! then [`run`] a single scenario or drive [`run_sweep`] / [`run_compare`] /
//! [`run_cdf`] for multi-run experiments, and export the results with the
//! writers in [`metrics`].

// Validation guards are written `!(x > 0.0)` so that NaN fails closed; the
// partial_cmp form clippy suggests trades that clarity for ceremony.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod queueing;
pub mod topology;
pub mod workload;

pub use channel::{
    link_weight, nakagami_pdf, nakagami_sample, sample_fading_parameter,
    service_success_probability, FadingChannel,
};
pub use config::{parse_config, parse_config_with_overrides, SimulationConfig};
pub use engine::{
    derive_run_seed, detect_interface_failure, run, run_cdf, run_compare, run_pair, run_sweep,
    Simulation,
};
pub use error::{Error, Result};
pub use metrics::{
    completion_time_cdf, conservation_check, improvement_percent, mean_improvement_percent,
    write_cdf, write_compare, write_run_summary, write_sweep_summary, Arm, CdfReport,
    CompareReport, CompareRow, MetricsReport, SweepReport, SweepRow,
};
pub use queueing::{
    congestion_trigger, evacuate_failed_interface, forced_drop_decision, offload_excess,
    on_retransmission_timeout, select_offload_target, serve_slot, AdmissionRegistry,
    EvacuationOutcome, InterfaceId, InterfaceQueue, Packet, RequestId, ServeOutcome,
};
pub use topology::{
    device_potential, mdc_potential, total_resource, Device, DeviceId, MdcComposition,
};
pub use workload::{generate_request, packetize, poisson_arrivals, Request};
