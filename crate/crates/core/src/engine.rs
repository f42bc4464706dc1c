//! The deterministic slotted simulation loop and its multi-run drivers.
//!
//! A [`Simulation`] owns every piece of mutable state — queues, channels,
//! composition, live-request bookkeeping, and a single ChaCha stream — and
//! advances one slot at a time in a fixed phase order:
//!
//! 1. resample fading per interface, update weights and failure state,
//!    evacuate freshly failed interfaces;
//! 2. draw Poisson arrivals, apply the forced-drop rule, admit whole requests
//!    to the least-weighted-occupancy healthy queue;
//! 3. with the handler enabled, evaluate the congestion trigger on every
//!    queue and offload the excess;
//! 4. serve every healthy queue, route retransmissions, fire timeouts;
//! 5. expire deadlines and purge their packets;
//! 6. sample the composition potential.
//!
//! The fixed order, a single stream per run, and value-ordered iteration make
//! equal `(config, seed)` runs byte-identical, including across parallel sweep
//! execution. Multi-run drivers ([`run_sweep`], [`run_compare`], [`run_cdf`])
//! derive one seed per (capacity value, iteration) cell — shared by both arms,
//! so comparisons are paired — and may execute runs on a bounded thread pool.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::FadingChannel;
use crate::config::SimulationConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    conservation_check, mean_improvement_percent, Arm, CdfReport, CompareReport, CompareRow,
    MetricsReport, SweepReport, SweepRow,
};
use crate::queueing::{
    evacuate_failed_interface, forced_drop_decision, offload_excess, on_retransmission_timeout,
    select_offload_target, serve_slot, AdmissionRegistry, InterfaceId, InterfaceQueue, RequestId,
};
use crate::topology::{mdc_potential, Device, DeviceId, MdcComposition};
use crate::workload::{generate_request, packetize, poisson_arrivals};

/// Synthetic consumer id for arrivals originating outside the registry.
const UNREGISTERED_CONSUMER: DeviceId = DeviceId(u32::MAX);

/// True iff the last `window` fading samples are all below `threshold_m`,
/// i.e. media quality has been bad continuously for the whole window.
pub fn detect_interface_failure(history: &[f64], threshold_m: f64, window: usize) -> bool {
    window >= 1
        && history.len() >= window
        && history[history.len() - window..].iter().all(|&m| m < threshold_m)
}

/// Admission-time bookkeeping for a request that made it into a queue.
#[derive(Debug)]
struct LiveRequest {
    serving_device: DeviceId,
    arrival_slot: u64,
    expiry_slot: u64,
    packets_total: u32,
    packets_delivered: u32,
    /// Resource actually reserved at admission (bounded by what the device
    /// had left); returned on completion or expiry.
    resource_claimed: f64,
}

/// One simulation run's complete mutable state.
pub struct Simulation {
    config: SimulationConfig,
    rng: ChaCha8Rng,
    slot: u64,
    /// Indexed by interface id; queue `i` belongs to `owner_of[i]`.
    queues: Vec<InterfaceQueue>,
    channels: Vec<FadingChannel>,
    owner_of: Vec<DeviceId>,
    composition: MdcComposition,
    registry: AdmissionRegistry,
    registered_consumers: Vec<DeviceId>,
    live: BTreeMap<RequestId, LiveRequest>,
    /// Expiry slot → requests that die there; kept in sync with `live`.
    expiries: BTreeMap<u64, BTreeSet<RequestId>>,
    next_request_id: u64,
    report: MetricsReport,
}

impl Simulation {
    /// Builds a fresh run from a validated configuration, seeding the stream
    /// from `config.simulation.seed`.
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let per_queue = config.per_queue_capacities();

        let mut devices = Vec::with_capacity(config.devices.len());
        let mut queues = Vec::new();
        let mut channels = Vec::new();
        let mut owner_of = Vec::new();
        let mut registry = AdmissionRegistry::new(config.policy.friend_mode);
        let mut next_interface = 0u32;
        for (index, spec) in config.devices.iter().enumerate() {
            let device_id = DeviceId(index as u32);
            let mut interface_ids = Vec::with_capacity(spec.interfaces as usize);
            for _ in 0..spec.interfaces {
                let interface_id = InterfaceId(next_interface);
                next_interface += 1;
                let channel = FadingChannel::new(
                    config.channel.m_high,
                    config.channel.spread_omega,
                    config.channel.proportionality_k,
                )?;
                let capacity = per_queue[interface_id.0 as usize];
                let tau = capacity as f64 * config.queueing.threshold_fraction;
                queues.push(InterfaceQueue::new(interface_id, capacity, tau, channel.weight())?);
                channels.push(channel);
                owner_of.push(device_id);
                interface_ids.push(interface_id);
            }
            devices.push(Device::new(device_id, spec.residual_resource, interface_ids)?);
            registry.register(device_id);
        }
        let registered_consumers: Vec<DeviceId> =
            devices.iter().map(|d| d.device_id).collect();
        // Friend mode starts from a complete friendship graph; the gate is
        // surfaced without changing default admission behavior.
        if config.policy.friend_mode {
            for &a in &registered_consumers {
                for &b in &registered_consumers {
                    if a != b {
                        registry.befriend(a, b)?;
                    }
                }
            }
        }
        let composition = MdcComposition::new(devices, 0)?;

        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(config.simulation.seed),
            slot: 0,
            queues,
            channels,
            owner_of,
            composition,
            registry,
            registered_consumers,
            live: BTreeMap::new(),
            expiries: BTreeMap::new(),
            next_request_id: 0,
            report: MetricsReport::new(config.clone()),
            config: config.clone(),
        })
    }

    fn device_mut(&mut self, id: DeviceId) -> &mut Device {
        let device = &mut self.composition.devices[id.0 as usize];
        debug_assert_eq!(device.device_id, id);
        device
    }

    /// Healthy queue with the least weighted occupancy (ties to the lowest
    /// interface id); `None` when every interface has failed.
    fn admission_queue_index(&self) -> Option<usize> {
        self.queues
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.failed)
            .min_by(|(_, a), (_, b)| {
                a.weighted_occupancy()
                    .total_cmp(&b.weighted_occupancy())
                    .then(a.interface_id.cmp(&b.interface_id))
            })
            .map(|(index, _)| index)
    }

    fn phase_channel_and_failures(&mut self) -> Result<()> {
        let channel_cfg = &self.config.channel;
        let mut newly_failed: Vec<InterfaceId> = Vec::new();
        for (queue, channel) in self.queues.iter_mut().zip(&mut self.channels) {
            channel.resample(&mut self.rng, channel_cfg.m_low, channel_cfg.m_high)?;
            queue.weight_w = channel.weight();
            if channel.fading_m() < channel_cfg.failure_m_threshold {
                queue.consecutive_bad_slots += 1;
                queue.consecutive_good_slots = 0;
                if !queue.failed && queue.consecutive_bad_slots >= channel_cfg.failure_window {
                    queue.failed = true;
                    newly_failed.push(queue.interface_id);
                }
            } else {
                queue.consecutive_bad_slots = 0;
                queue.consecutive_good_slots += 1;
                // Recovery is symmetric with detection: the outage ends only
                // after a full window of good slots, not on the first one.
                if queue.failed && queue.consecutive_good_slots >= channel_cfg.failure_window {
                    queue.failed = false;
                }
            }
        }
        for source in newly_failed {
            let outcome = evacuate_failed_interface(&mut self.queues, source);
            self.report.evacuations += 1;
            // Evacuation packets that found no eligible queue are buffering
            // losses; their requests can no longer complete and will be
            // reaped by their deadlines.
            self.report.packets_dropped_overflow += outcome.dropped.len() as u64;
        }
        Ok(())
    }

    fn phase_arrivals(&mut self) -> Result<()> {
        let arrivals = poisson_arrivals(&mut self.rng, self.config.workload.lambda)?;
        for _ in 0..arrivals {
            let request_id = RequestId(self.next_request_id);
            self.next_request_id += 1;
            let request = generate_request(
                &mut self.rng,
                &self.config.workload,
                &self.registered_consumers,
                UNREGISTERED_CONSUMER,
                request_id,
                self.slot,
            );
            self.report.requests_arrived += 1;
            self.report.packets_arrived += u64::from(request.packet_count);

            let Some(queue_index) = self.admission_queue_index() else {
                // Every interface is down: nothing can buffer the request.
                self.report.dropped_overflow_requests += 1;
                self.report.packets_dropped_overflow += u64::from(request.packet_count);
                continue;
            };
            let serving_device = self.owner_of[queue_index];
            self.device_mut(serving_device).requests_received += 1;

            if !forced_drop_decision(request.consumer_id, &self.registry, serving_device) {
                self.report.dropped_forced += 1;
                self.report.packets_dropped_forced += u64::from(request.packet_count);
                continue;
            }
            // With the handler active, an MDC whose every healthy queue is
            // past its trigger protects itself by forcefully dropping new
            // arrivals instead of deepening the congestion.
            if self.config.policy.handler_enabled
                && self.queues.iter().all(|q| q.failed || q.is_congested())
            {
                self.report.dropped_forced += 1;
                self.report.packets_dropped_forced += u64::from(request.packet_count);
                continue;
            }

            // Packets are admitted individually; once the queue fills, the
            // rest of the request overflows. A request that got no packet in
            // is rejected outright, while a truncated one stays live (it can
            // never complete, so its deadline eventually reclaims it).
            let mut admitted = 0u32;
            for packet in packetize(&request, self.config.workload.payload_unit_bytes)? {
                if self.queues[queue_index].enqueue(packet) {
                    admitted += 1;
                } else {
                    self.report.packets_dropped_overflow += 1;
                }
            }
            if admitted == 0 {
                self.report.dropped_overflow_requests += 1;
                continue;
            }
            let device = self.device_mut(serving_device);
            let resource_claimed = (request.size as f64).min(device.residual_resource);
            device.residual_resource -= resource_claimed;
            let expiry_slot = request.expiry_slot();
            self.live.insert(
                request_id,
                LiveRequest {
                    serving_device,
                    arrival_slot: self.slot,
                    expiry_slot,
                    packets_total: request.packet_count,
                    packets_delivered: 0,
                    resource_claimed,
                },
            );
            self.expiries.entry(expiry_slot).or_default().insert(request_id);
        }
        Ok(())
    }

    fn phase_offload(&mut self) {
        if !self.config.policy.handler_enabled {
            return;
        }
        for source_index in 0..self.queues.len() {
            let source = &self.queues[source_index];
            if source.failed || !source.is_congested() {
                continue;
            }
            let Some(target_id) = select_offload_target(&self.queues, source.interface_id) else {
                continue;
            };
            let (source, target) =
                two_queues(&mut self.queues, source_index, target_id.0 as usize);
            if !offload_excess(source, target).is_empty() {
                self.report.offload_events += 1;
            }
        }
    }

    fn phase_serve(&mut self) {
        for index in 0..self.queues.len() {
            if self.queues[index].failed {
                continue;
            }
            let gain = self.channels[index].current_gain();
            let outcome = serve_slot(
                &mut self.queues[index],
                gain,
                &mut self.rng,
                self.config.channel.reference_gain,
            );

            self.report.packets_delivered += outcome.delivered.len() as u64;
            for packet in &outcome.delivered {
                self.record_delivery(packet.request_id);
            }

            for packet in outcome.to_retransmit {
                // The handler reroutes retransmissions to the eligible queue
                // with the lightest weighted occupancy and falls back to the
                // source tail when no queue is eligible or the chosen one
                // cannot take the packet; the baseline always requeues at
                // the source. Only a full fallback loses the packet.
                let destination = if self.config.policy.handler_enabled {
                    select_offload_target(&self.queues, self.queues[index].interface_id)
                        .map_or(index, |id| id.0 as usize)
                } else {
                    index
                };
                if !self.queues[destination].enqueue(packet)
                    && !self.queues[index].enqueue(packet)
                {
                    self.report.packets_dropped_overflow += 1;
                }
            }

            // Every retransmission that fails a second time raises its own
            // timeout event; several in one slot keep collapsing the window
            // and grind ssthresh down to its floor.
            for _ in 0..outcome.repeat_failures {
                on_retransmission_timeout(&mut self.queues[index]);
                self.report.timeouts += 1;
            }
        }
    }

    /// Books one delivered packet; on the request's final packet, records the
    /// service, releases the resource claim, and retires the deadline entry.
    fn record_delivery(&mut self, request_id: RequestId) {
        let live = self
            .live
            .get_mut(&request_id)
            .expect("every buffered packet belongs to a live request");
        live.packets_delivered += 1;
        if live.packets_delivered < live.packets_total {
            return;
        }
        let entry = self.live.remove(&request_id).expect("checked above");
        self.report.requests_serviced += 1;
        self.report
            .completion_times
            .push(self.slot - entry.arrival_slot + 1);
        let device = self.device_mut(entry.serving_device);
        device.requests_serviced += 1;
        device.residual_resource += entry.resource_claimed;
        if let Some(ids) = self.expiries.get_mut(&entry.expiry_slot) {
            ids.remove(&request_id);
            if ids.is_empty() {
                self.expiries.remove(&entry.expiry_slot);
            }
        }
    }

    fn phase_expire(&mut self) {
        let Some(expiring) = self.expiries.remove(&self.slot) else {
            return;
        };
        for request_id in &expiring {
            let entry = self
                .live
                .remove(request_id)
                .expect("the expiry index only references live requests");
            self.report.dropped_deadline += 1;
            let device = self.device_mut(entry.serving_device);
            device.residual_resource += entry.resource_claimed;
        }
        let mut purged = 0usize;
        for queue in &mut self.queues {
            purged += queue.retain_packets(|p| !expiring.contains(&p.request_id));
        }
        self.report.packets_dropped_deadline += purged as u64;
    }

    /// Advances the simulation by one slot in the fixed phase order.
    pub fn step(&mut self) -> Result<()> {
        self.phase_channel_and_failures()?;
        self.phase_arrivals()?;
        self.phase_offload();
        self.phase_serve();
        self.phase_expire();
        self.report.potential_series.push(mdc_potential(&self.composition));
        self.slot += 1;
        Ok(())
    }

    /// Closes the books: whatever is still live or buffered is reported as
    /// in flight / residual.
    pub fn finalize(mut self) -> MetricsReport {
        self.report.requests_in_flight = self.live.len() as u64;
        self.report.packets_residual = self.queues.iter().map(|q| q.len() as u64).sum();
        self.report
    }
}

/// Two distinct mutable queue borrows out of one slice.
fn two_queues(
    queues: &mut [InterfaceQueue],
    first: usize,
    second: usize,
) -> (&mut InterfaceQueue, &mut InterfaceQueue) {
    debug_assert_ne!(first, second, "offload never targets its own source");
    if first < second {
        let (left, right) = queues.split_at_mut(second);
        (&mut left[first], &mut right[0])
    } else {
        let (left, right) = queues.split_at_mut(first);
        (&mut right[0], &mut left[second])
    }
}

/// Runs the configured number of slots from a fresh state and returns the
/// finalized report (which echoes the configuration it was produced by).
pub fn run(config: &SimulationConfig) -> Result<MetricsReport> {
    let mut simulation = Simulation::new(config)?;
    for _ in 0..config.simulation.slots {
        simulation.step()?;
    }
    Ok(simulation.finalize())
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for one (capacity, iteration) cell of a multi-run driver.
///
/// Keyed by the capacity *value*, not its position in the sweep list, so
/// permuting the list leaves every per-capacity result unchanged. Both arms
/// share the cell's seed: comparisons are paired, which removes common
/// workload noise from the improvement estimate.
pub fn derive_run_seed(master_seed: u64, capacity: u64, iteration: u32) -> u64 {
    let mut acc = mix64(master_seed ^ 0x9E37_79B9_7F4A_7C15);
    acc = mix64(acc ^ capacity);
    mix64(acc ^ u64::from(iteration))
}

fn arm_config(
    base: &SimulationConfig,
    capacity: u64,
    seed: u64,
    handler_enabled: bool,
) -> SimulationConfig {
    let mut config = base.clone();
    config.queueing.aggregate_capacity = capacity;
    config.simulation.seed = seed;
    config.policy.handler_enabled = handler_enabled;
    config
}

/// Runs the handler arm and the baseline arm with the same seed and capacity.
pub fn run_pair(
    base: &SimulationConfig,
    capacity: u64,
    seed: u64,
) -> Result<(MetricsReport, MetricsReport)> {
    let with = run(&arm_config(base, capacity, seed, true))?;
    let without = run(&arm_config(base, capacity, seed, false))?;
    Ok((with, without))
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::domain(format!("could not build the worker pool: {e}")))
}

fn mean<I: IntoIterator<Item = u64>>(values: I, count: u32) -> f64 {
    values.into_iter().map(|v| v as f64).sum::<f64>() / f64::from(count)
}

/// Sweeps aggregate capacity: for every capacity, `iterations` paired runs
/// with derived seeds, averaged into one [`SweepRow`]. `jobs` bounds the
/// worker threads (0 uses all cores); results are merged in deterministic
/// capacity-then-iteration order regardless of scheduling.
pub fn run_sweep(
    base: &SimulationConfig,
    capacities: &[u64],
    iterations: u32,
    jobs: usize,
) -> Result<SweepReport> {
    if capacities.is_empty() {
        return Err(Error::domain("a capacity sweep needs at least one capacity"));
    }
    if iterations == 0 {
        return Err(Error::domain("a capacity sweep needs at least one iteration"));
    }
    let master_seed = base.simulation.seed;
    let cells: Vec<(u64, u32)> = capacities
        .iter()
        .flat_map(|&capacity| (0..iterations).map(move |iteration| (capacity, iteration)))
        .collect();
    let pool = build_pool(jobs)?;
    let pairs: Vec<(MetricsReport, MetricsReport)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(capacity, iteration)| {
                run_pair(base, capacity, derive_run_seed(master_seed, capacity, iteration))
            })
            .collect::<Result<_>>()
    })?;

    let conservation_ok = pairs
        .iter()
        .all(|(with, without)| conservation_check(with) && conservation_check(without));
    let relative = base.policy.improvement_relative_to_baseline;
    let rows: Vec<SweepRow> = capacities
        .iter()
        .enumerate()
        .map(|(row_index, &capacity)| {
            let cell = &pairs[row_index * iterations as usize..(row_index + 1) * iterations as usize];
            let mean_serviced_with = mean(cell.iter().map(|(w, _)| w.requests_serviced), iterations);
            let mean_serviced_without =
                mean(cell.iter().map(|(_, wo)| wo.requests_serviced), iterations);
            let mean_dropped_with =
                mean(cell.iter().map(|(w, _)| w.dropped_requests_total()), iterations);
            let mean_dropped_without =
                mean(cell.iter().map(|(_, wo)| wo.dropped_requests_total()), iterations);
            SweepRow {
                capacity,
                mean_serviced_with,
                mean_serviced_without,
                mean_dropped_with,
                mean_dropped_without,
                improvement_pct: mean_improvement_percent(
                    mean_serviced_with,
                    mean_serviced_without,
                    relative,
                ),
            }
        })
        .collect();

    Ok(SweepReport {
        master_seed,
        iterations,
        rows,
        base: base.clone(),
        conservation_ok,
    })
}

/// Paired comparison at the configured capacity: one row per derived seed
/// plus means and the improvement of the means.
pub fn run_compare(base: &SimulationConfig, iterations: u32, jobs: usize) -> Result<CompareReport> {
    if iterations == 0 {
        return Err(Error::domain("a comparison needs at least one iteration"));
    }
    let master_seed = base.simulation.seed;
    let capacity = base.queueing.aggregate_capacity;
    let pool = build_pool(jobs)?;
    let pairs: Vec<(u64, MetricsReport, MetricsReport)> = pool.install(|| {
        (0..iterations)
            .into_par_iter()
            .map(|iteration| {
                let seed = derive_run_seed(master_seed, capacity, iteration);
                let (with, without) = run_pair(base, capacity, seed)?;
                Ok((seed, with, without))
            })
            .collect::<Result<_>>()
    })?;

    let conservation_ok = pairs
        .iter()
        .all(|(_, with, without)| conservation_check(with) && conservation_check(without));
    let relative = base.policy.improvement_relative_to_baseline;
    let rows: Vec<CompareRow> = pairs
        .iter()
        .map(|(seed, with, without)| CompareRow {
            seed: *seed,
            serviced_with: with.requests_serviced,
            serviced_without: without.requests_serviced,
            dropped_with: with.dropped_requests_total(),
            dropped_without: without.dropped_requests_total(),
            improvement_pct: mean_improvement_percent(
                with.requests_serviced as f64,
                without.requests_serviced as f64,
                relative,
            ),
        })
        .collect();
    let mean_serviced_with = mean(rows.iter().map(|r| r.serviced_with), iterations);
    let mean_serviced_without = mean(rows.iter().map(|r| r.serviced_without), iterations);
    let mean_dropped_with = mean(rows.iter().map(|r| r.dropped_with), iterations);
    let mean_dropped_without = mean(rows.iter().map(|r| r.dropped_without), iterations);

    Ok(CompareReport {
        master_seed,
        rows,
        mean_serviced_with,
        mean_serviced_without,
        mean_dropped_with,
        mean_dropped_without,
        improvement_pct: mean_improvement_percent(
            mean_serviced_with,
            mean_serviced_without,
            relative,
        ),
        base: base.clone(),
        conservation_ok,
    })
}

/// Pools completion times over `iterations` derived seeds for each requested
/// arm, at the configured capacity.
pub fn run_cdf(
    base: &SimulationConfig,
    iterations: u32,
    arms: &[Arm],
    jobs: usize,
) -> Result<CdfReport> {
    if iterations == 0 {
        return Err(Error::domain("a CDF needs at least one iteration"));
    }
    let master_seed = base.simulation.seed;
    let capacity = base.queueing.aggregate_capacity;
    let cells: Vec<(Arm, u32)> = arms
        .iter()
        .flat_map(|&arm| (0..iterations).map(move |iteration| (arm, iteration)))
        .collect();
    let pool = build_pool(jobs)?;
    let reports: Vec<MetricsReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(arm, iteration)| {
                let seed = derive_run_seed(master_seed, capacity, iteration);
                run(&arm_config(base, capacity, seed, arm == Arm::With))
            })
            .collect::<Result<_>>()
    })?;

    let conservation_ok = reports.iter().all(conservation_check);
    let pooled: Vec<(Arm, Vec<u64>)> = arms
        .iter()
        .enumerate()
        .map(|(arm_index, &arm)| {
            let runs = &reports[arm_index * iterations as usize..(arm_index + 1) * iterations as usize];
            let mut times = Vec::new();
            for report in runs {
                times.extend_from_slice(&report.completion_times);
            }
            (arm, times)
        })
        .collect();

    Ok(CdfReport {
        master_seed,
        iterations,
        arms: pooled,
        base: base.clone(),
        conservation_ok,
    })
}
