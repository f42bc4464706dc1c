//! Per-interface FIFO queues and the congestion-handler policy.
//!
//! Each interface buffers packets up to a fixed capacity and carries a
//! threshold τ below capacity. The congestion trigger compares the weighted
//! occupancy `len · w` against τ; once it trips, the newest packets are
//! offloaded to the healthiest peer queue instead of being dropped. Failed
//! interfaces are evacuated wholesale, and delivery failures feed a small
//! TCP-flavored window state (slow start, timeout reset to 1).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::channel::service_success_probability;
use crate::error::{Error, Result};
use crate::topology::DeviceId;

/// Identifier of one network interface (equivalently, of its queue).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InterfaceId(pub u32);

/// Identifier of a request; packets carry it alongside their position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId(pub u64);

/// One payload unit of a request. `(request_id, sequence_index)` is unique
/// among all live packets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Packet {
    pub request_id: RequestId,
    pub sequence_index: u32,
    pub size: u64,
    pub enqueue_slot: u64,
    pub retransmission: bool,
}

/// FIFO packet buffer of one interface plus its trigger and window state.
#[derive(Clone, Debug)]
pub struct InterfaceQueue {
    pub interface_id: InterfaceId,
    pub capacity: usize,
    pub threshold_tau: f64,
    buffer: VecDeque<Packet>,
    pub weight_w: f64,
    pub cwnd: usize,
    pub ssthresh: usize,
    pub failed: bool,
    pub consecutive_bad_slots: u32,
    pub consecutive_good_slots: u32,
}

impl InterfaceQueue {
    /// Creates an empty healthy queue. The congestion window starts at 1 with
    /// the slow-start ceiling set to the queue capacity.
    pub fn new(interface_id: InterfaceId, capacity: usize, threshold_tau: f64, weight_w: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("queue capacity must be positive"));
        }
        if !(threshold_tau > 0.0 && threshold_tau <= capacity as f64) {
            return Err(Error::domain(format!(
                "threshold tau must lie in (0, capacity], got {threshold_tau} with capacity {capacity}"
            )));
        }
        if !(weight_w > 0.0) {
            return Err(Error::domain(format!("link weight must be positive, got {weight_w}")));
        }
        Ok(InterfaceQueue {
            interface_id,
            capacity,
            threshold_tau,
            buffer: VecDeque::with_capacity(capacity),
            weight_w,
            cwnd: 1,
            ssthresh: capacity,
            failed: false,
            consecutive_bad_slots: 0,
            consecutive_good_slots: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn free_space(&self) -> usize {
        self.capacity - self.buffer.len()
    }

    /// Occupancy scaled by the current link weight, the quantity the trigger
    /// and the target-selection rule both rank by.
    pub fn weighted_occupancy(&self) -> f64 {
        self.buffer.len() as f64 * self.weight_w
    }

    /// Whether the congestion trigger currently holds for this queue.
    pub fn is_congested(&self) -> bool {
        congestion_trigger(self.buffer.len(), self.weight_w, self.threshold_tau)
    }

    /// Appends a packet in FIFO order; refuses (an overflow drop, accounted
    /// by the caller) when the buffer is at capacity.
    pub fn enqueue(&mut self, packet: Packet) -> bool {
        if self.buffer.len() >= self.capacity {
            return false;
        }
        self.buffer.push_back(packet);
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.buffer.iter()
    }

    /// Drops every packet rejected by the predicate, returning how many were
    /// removed. Used to purge expired requests.
    pub fn retain_packets<F: FnMut(&Packet) -> bool>(&mut self, mut keep: F) -> usize {
        let before = self.buffer.len();
        self.buffer.retain(|p| keep(p));
        before - self.buffer.len()
    }
}

/// Registered participants and who considers whom a friend. When friend mode
/// is off, registration alone admits a consumer.
#[derive(Clone, Debug)]
pub struct AdmissionRegistry {
    registered: BTreeSet<DeviceId>,
    friend_lists: BTreeMap<DeviceId, BTreeSet<DeviceId>>,
    friend_mode: bool,
}

impl AdmissionRegistry {
    pub fn new(friend_mode: bool) -> Self {
        AdmissionRegistry {
            registered: BTreeSet::new(),
            friend_lists: BTreeMap::new(),
            friend_mode,
        }
    }

    pub fn register(&mut self, device: DeviceId) {
        self.registered.insert(device);
    }

    pub fn is_registered(&self, device: DeviceId) -> bool {
        self.registered.contains(&device)
    }

    pub fn friend_mode(&self) -> bool {
        self.friend_mode
    }

    /// Records `friend` on `owner`'s list. Both must already be registered so
    /// friend lists never reference unknown devices.
    pub fn befriend(&mut self, owner: DeviceId, friend: DeviceId) -> Result<()> {
        if !self.is_registered(owner) || !self.is_registered(friend) {
            return Err(Error::Contract(format!(
                "friend lists may only reference registered devices ({owner:?} -> {friend:?})"
            )));
        }
        self.friend_lists.entry(owner).or_default().insert(friend);
        Ok(())
    }

    pub fn are_friends(&self, owner: DeviceId, other: DeviceId) -> bool {
        self.friend_lists
            .get(&owner)
            .is_some_and(|friends| friends.contains(&other))
    }
}

/// The congestion condition: weighted occupancy has reached the threshold,
/// `occupancy · w ≥ τ`.
pub fn congestion_trigger(occupancy: usize, weight_w: f64, tau: f64) -> bool {
    occupancy as f64 * weight_w >= tau
}

/// Picks the healthiest destination for displaced packets: a non-failed queue
/// other than the source whose weighted occupancy is strictly below its own
/// trigger, minimizing weighted occupancy with ties broken toward the lowest
/// interface id. Remaining room is deliberately not part of eligibility; a
/// full-but-calm queue is still the chosen target and simply accepts nothing.
pub fn select_offload_target(queues: &[InterfaceQueue], source_id: InterfaceId) -> Option<InterfaceId> {
    queues
        .iter()
        .filter(|q| !q.failed && q.interface_id != source_id && !q.is_congested())
        .min_by(|a, b| {
            a.weighted_occupancy()
                .partial_cmp(&b.weighted_occupancy())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.interface_id.cmp(&b.interface_id))
        })
        .map(|q| q.interface_id)
}

/// Moves the newest packets from a congested source to the target until the
/// source drops below its trigger or the target fills, preserving the moved
/// packets' relative order. Returns the packets moved; a defensive call on an
/// untriggered source is a no-op.
pub fn offload_excess(source: &mut InterfaceQueue, target: &mut InterfaceQueue) -> Vec<Packet> {
    if source.failed || !source.is_congested() {
        return Vec::new();
    }
    let mut needed = 0;
    while needed < source.len()
        && congestion_trigger(source.len() - needed, source.weight_w, source.threshold_tau)
    {
        needed += 1;
    }
    let count = needed.min(target.free_space());
    let tail = source.buffer.split_off(source.len() - count);
    let moved: Vec<Packet> = tail.into_iter().collect();
    target.buffer.extend(moved.iter().copied());
    moved
}

/// Packets moved and packets that fit nowhere during an evacuation.
#[derive(Debug, Default)]
pub struct EvacuationOutcome {
    pub moved: Vec<Packet>,
    pub dropped: Vec<Packet>,
}

/// Evacuation target choice: the offload eligibility rule narrowed to queues
/// that still have a free slot, so the per-packet re-selection below always
/// makes progress instead of re-picking a queue that cannot accept anything.
fn select_evacuation_target(queues: &[InterfaceQueue], source_id: InterfaceId) -> Option<InterfaceId> {
    queues
        .iter()
        .filter(|q| {
            !q.failed && q.interface_id != source_id && !q.is_congested() && q.free_space() > 0
        })
        .min_by(|a, b| {
            a.weighted_occupancy()
                .partial_cmp(&b.weighted_occupancy())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.interface_id.cmp(&b.interface_id))
        })
        .map(|q| q.interface_id)
}

/// Empties a failed interface, pushing its packets in FIFO order into
/// eligible peers (re-selected per packet as targets fill). Packets with no
/// eligible destination are dropped and reported for overflow accounting.
pub fn evacuate_failed_interface(queues: &mut [InterfaceQueue], source_id: InterfaceId) -> EvacuationOutcome {
    let source_index = queues
        .iter()
        .position(|q| q.interface_id == source_id)
        .expect("evacuation source must exist");
    debug_assert!(queues[source_index].failed, "only failed interfaces are evacuated");
    let pending: Vec<Packet> = queues[source_index].buffer.drain(..).collect();
    let mut outcome = EvacuationOutcome::default();
    for packet in pending {
        match select_evacuation_target(queues, source_id) {
            Some(target_id) => {
                let target = queues
                    .iter_mut()
                    .find(|q| q.interface_id == target_id)
                    .expect("selected target must exist");
                target.buffer.push_back(packet);
                outcome.moved.push(packet);
            }
            None => outcome.dropped.push(packet),
        }
    }
    outcome
}

/// What one service slot produced: delivered packets, packets that need
/// retransmission, and how many of the failures were already retransmissions
/// (each of those is a timeout indication).
#[derive(Debug, Default)]
pub struct ServeOutcome {
    pub delivered: Vec<Packet>,
    pub to_retransmit: Vec<Packet>,
    pub repeat_failures: usize,
}

/// Serves up to `cwnd` packets from the head of the queue. Each dequeued
/// packet is delivered with the success probability implied by the slot's
/// gain; failures are marked for retransmission. Afterwards the window grows:
/// doubling in slow start (below `ssthresh`), otherwise by one, capped at the
/// queue capacity.
pub fn serve_slot<R: Rng + ?Sized>(
    queue: &mut InterfaceQueue,
    gain: f64,
    rng: &mut R,
    reference_gain: f64,
) -> ServeOutcome {
    debug_assert!(!queue.failed, "failed interfaces are not served");
    let p = service_success_probability(gain, reference_gain)
        .expect("serve_slot requires a nonnegative gain and positive reference gain");
    let mut outcome = ServeOutcome::default();
    let burst = queue.cwnd.min(queue.buffer.len());
    for _ in 0..burst {
        let mut packet = queue.buffer.pop_front().expect("burst is bounded by queue length");
        if rng.random::<f64>() < p {
            outcome.delivered.push(packet);
        } else {
            if packet.retransmission {
                outcome.repeat_failures += 1;
            }
            packet.retransmission = true;
            outcome.to_retransmit.push(packet);
        }
    }
    queue.cwnd = if queue.cwnd < queue.ssthresh {
        (queue.cwnd * 2).min(queue.capacity)
    } else {
        (queue.cwnd + 1).min(queue.capacity)
    };
    outcome
}

/// Retransmission-timer expiry: halve the slow-start threshold (floored at 1)
/// and reinitialize the window to 1.
pub fn on_retransmission_timeout(queue: &mut InterfaceQueue) {
    queue.ssthresh = (queue.cwnd / 2).max(1);
    queue.cwnd = 1;
}

/// Admission-time gate: a request is accepted only from a registered consumer
/// and, when friend mode is active, only if the serving device lists the
/// consumer as a friend.
pub fn forced_drop_decision(consumer: DeviceId, registry: &AdmissionRegistry, serving_device: DeviceId) -> bool {
    if !registry.is_registered(serving_device) || !registry.is_registered(consumer) {
        return false;
    }
    if !registry.friend_mode() {
        return true;
    }
    registry.are_friends(serving_device, consumer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn packet(request: u64, sequence: u32) -> Packet {
        Packet {
            request_id: RequestId(request),
            sequence_index: sequence,
            size: 1500,
            enqueue_slot: 0,
            retransmission: false,
        }
    }

    fn queue(id: u32, capacity: usize, tau: f64, weight: f64) -> InterfaceQueue {
        InterfaceQueue::new(InterfaceId(id), capacity, tau, weight).unwrap()
    }

    fn fill(q: &mut InterfaceQueue, count: usize) {
        for i in 0..count {
            assert!(q.enqueue(packet(u64::from(q.interface_id.0) * 1000 + i as u64, 0)));
        }
    }

    #[test]
    fn trigger_fires_at_the_weighted_boundary() {
        assert!(congestion_trigger(15, 1.0, 15.0));
        assert!(!congestion_trigger(0, 1.0, 15.0));
        assert!(!congestion_trigger(14, 1.0, 15.0));
        assert!(congestion_trigger(14, 1.2, 15.0));
    }

    #[test]
    fn enqueue_respects_capacity_and_fifo_order() {
        let mut q = queue(0, 20, 15.0, 1.0);
        assert!(q.enqueue(packet(1, 0)));
        assert_eq!(q.len(), 1);
        fill(&mut q, 19);
        assert_eq!(q.len(), 20);
        assert!(!q.enqueue(packet(99, 0)));
        assert_eq!(q.len(), 20);

        let mut q = queue(1, 4, 3.0, 1.0);
        q.enqueue(packet(1, 0));
        q.enqueue(packet(2, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        q.cwnd = 2;
        let outcome = serve_slot(&mut q, 10.0, &mut rng, 1.0);
        let ids: Vec<u64> = outcome.delivered.iter().map(|p| p.request_id.0).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn target_selection_prefers_low_weighted_occupancy() {
        let mut queues = vec![queue(0, 20, 15.0, 1.0), queue(1, 20, 15.0, 1.0)];
        fill(&mut queues[0], 16);
        assert_eq!(select_offload_target(&queues, InterfaceId(0)), Some(InterfaceId(1)));

        queues[1].failed = true;
        assert_eq!(select_offload_target(&queues, InterfaceId(0)), None);
    }

    #[test]
    fn target_selection_breaks_ties_toward_the_lower_id() {
        // Exhaustive over two candidate queues at matched weighted occupancy.
        for occupancy in 0..=5usize {
            let mut queues = vec![
                queue(0, 8, 7.5, 1.0),
                queue(2, 8, 7.5, 1.0),
                queue(1, 8, 7.5, 1.0),
            ];
            fill(&mut queues[1], occupancy);
            fill(&mut queues[2], occupancy);
            queues[0].failed = true; // force the choice between ids 1 and 2
            assert_eq!(select_offload_target(&queues, InterfaceId(0)), Some(InterfaceId(1)));
        }
    }

    #[test]
    fn congested_targets_are_ineligible_but_full_calm_ones_are_not() {
        let mut queues = vec![queue(0, 20, 15.0, 1.0), queue(1, 20, 15.0, 1.0)];
        fill(&mut queues[0], 16);
        fill(&mut queues[1], 15); // at its trigger
        assert_eq!(select_offload_target(&queues, InterfaceId(0)), None);

        // A full queue whose weighted occupancy stays below its trigger is
        // still the selected target; it just cannot accept any packets.
        let mut queues = vec![queue(0, 20, 15.0, 1.0), queue(1, 4, 3.9, 0.5)];
        fill(&mut queues[1], 4);
        assert_eq!(select_offload_target(&queues, InterfaceId(0)), Some(InterfaceId(1)));
    }

    #[test]
    fn offload_moves_the_minimal_tail() {
        let mut source = queue(0, 20, 15.0, 1.0);
        let mut target = queue(1, 20, 15.0, 1.0);
        for i in 0..18 {
            source.enqueue(packet(i, 0));
        }
        let moved = offload_excess(&mut source, &mut target);
        assert_eq!(moved.len(), 4);
        assert_eq!(source.len(), 14);
        assert!(!source.is_congested());
        // Tail packets, relative order preserved.
        let moved_ids: Vec<u64> = moved.iter().map(|p| p.request_id.0).collect();
        assert_eq!(moved_ids, vec![14, 15, 16, 17]);
        let target_ids: Vec<u64> = target.iter().map(|p| p.request_id.0).collect();
        assert_eq!(target_ids, moved_ids);
    }

    #[test]
    fn offload_is_a_noop_below_the_trigger() {
        let mut source = queue(0, 20, 15.0, 1.0);
        let mut target = queue(1, 20, 15.0, 1.0);
        fill(&mut source, 14);
        assert!(offload_excess(&mut source, &mut target).is_empty());
        assert_eq!(source.len(), 14);
        assert_eq!(target.len(), 0);
    }

    #[test]
    fn offload_stops_at_target_capacity() {
        let mut source = queue(0, 20, 15.0, 1.0);
        let mut target = queue(1, 16, 12.0, 0.5);
        fill(&mut source, 18);
        fill(&mut target, 15);
        let moved = offload_excess(&mut source, &mut target);
        assert_eq!(moved.len(), 1);
        assert_eq!(source.len(), 17);
        assert!(source.is_congested());
        assert_eq!(target.len(), 16);
    }

    #[test]
    fn evacuation_moves_everything_when_a_healthy_peer_has_room() {
        let mut queues = vec![queue(0, 20, 15.0, 1.0), queue(1, 20, 15.0, 1.0)];
        fill(&mut queues[0], 5);
        queues[0].failed = true;
        let outcome = evacuate_failed_interface(&mut queues, InterfaceId(0));
        assert_eq!(outcome.moved.len(), 5);
        assert!(outcome.dropped.is_empty());
        assert!(queues[0].is_empty());
        assert_eq!(queues[1].len(), 5);
    }

    #[test]
    fn evacuation_without_targets_drops_everything() {
        let mut queues = vec![queue(0, 20, 15.0, 1.0), queue(1, 20, 15.0, 1.0)];
        fill(&mut queues[0], 5);
        queues[0].failed = true;
        queues[1].failed = true;
        let outcome = evacuate_failed_interface(&mut queues, InterfaceId(0));
        assert!(outcome.moved.is_empty());
        assert_eq!(outcome.dropped.len(), 5);
        assert!(queues[0].is_empty());
    }

    #[test]
    fn evacuation_respects_target_capacity() {
        let mut queues = vec![queue(0, 20, 15.0, 1.0), queue(1, 20, 18.0, 0.1)];
        fill(&mut queues[0], 10);
        fill(&mut queues[1], 17);
        queues[0].failed = true;
        let outcome = evacuate_failed_interface(&mut queues, InterfaceId(0));
        assert_eq!(outcome.moved.len(), 3);
        assert_eq!(outcome.dropped.len(), 7);
        assert!(queues[0].is_empty());
        assert_eq!(queues[1].len(), 20);
    }

    #[test]
    fn serving_with_certain_success_delivers_a_window() {
        let mut q = queue(0, 20, 15.0, 1.0);
        fill(&mut q, 10);
        q.cwnd = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let outcome = serve_slot(&mut q, 10.0, &mut rng, 1.0);
        assert_eq!(outcome.delivered.len(), 4);
        assert!(outcome.to_retransmit.is_empty());
        assert_eq!(q.len(), 6);
    }

    #[test]
    fn serving_a_dead_channel_retransmits_the_window() {
        let mut q = queue(0, 20, 15.0, 1.0);
        fill(&mut q, 10);
        q.cwnd = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let outcome = serve_slot(&mut q, 0.0, &mut rng, 1.0);
        assert!(outcome.delivered.is_empty());
        assert_eq!(outcome.to_retransmit.len(), 4);
        assert!(outcome.to_retransmit.iter().all(|p| p.retransmission));
        assert_eq!(outcome.repeat_failures, 0);
    }

    #[test]
    fn repeated_failures_are_flagged_for_timeout() {
        let mut q = queue(0, 20, 15.0, 1.0);
        let mut p = packet(1, 0);
        p.retransmission = true;
        q.enqueue(p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let outcome = serve_slot(&mut q, 0.0, &mut rng, 1.0);
        assert_eq!(outcome.repeat_failures, 1);
    }

    #[test]
    fn window_growth_follows_slow_start_then_linear() {
        let mut q = queue(0, 64, 48.0, 1.0);
        fill(&mut q, 60);
        q.cwnd = 2;
        q.ssthresh = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trace = vec![q.cwnd];
        for _ in 0..5 {
            serve_slot(&mut q, 10.0, &mut rng, 1.0);
            trace.push(q.cwnd);
        }
        assert_eq!(trace, vec![2, 4, 8, 9, 10, 11]);
    }

    #[test]
    fn window_is_capped_at_capacity() {
        let mut q = queue(0, 8, 6.0, 1.0);
        fill(&mut q, 8);
        q.cwnd = 5;
        q.ssthresh = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        serve_slot(&mut q, 10.0, &mut rng, 1.0);
        assert_eq!(q.cwnd, 8);
    }

    #[test]
    fn timeout_reinitializes_the_window() {
        let mut q = queue(0, 20, 15.0, 1.0);
        q.cwnd = 8;
        on_retransmission_timeout(&mut q);
        assert_eq!(q.cwnd, 1);
        assert_eq!(q.ssthresh, 4);

        let mut q = queue(0, 20, 15.0, 1.0);
        q.cwnd = 1;
        on_retransmission_timeout(&mut q);
        assert_eq!(q.cwnd, 1);
        assert_eq!(q.ssthresh, 1);
        on_retransmission_timeout(&mut q);
        assert_eq!(q.cwnd, 1);
        assert_eq!(q.ssthresh, 1);
    }

    #[test]
    fn admission_gate_covers_registration_and_friendship() {
        let mut registry = AdmissionRegistry::new(false);
        registry.register(DeviceId(0));
        registry.register(DeviceId(1));
        registry.register(DeviceId(2));
        registry.befriend(DeviceId(0), DeviceId(1)).unwrap();

        // Unregistered consumers never pass.
        assert!(!forced_drop_decision(DeviceId(9), &registry, DeviceId(0)));
        // Friend mode off: registration suffices even without friendship.
        assert!(forced_drop_decision(DeviceId(2), &registry, DeviceId(0)));

        let mut friendly = AdmissionRegistry::new(true);
        friendly.register(DeviceId(0));
        friendly.register(DeviceId(1));
        friendly.register(DeviceId(2));
        friendly.befriend(DeviceId(0), DeviceId(1)).unwrap();
        assert!(forced_drop_decision(DeviceId(1), &friendly, DeviceId(0)));
        assert!(!forced_drop_decision(DeviceId(2), &friendly, DeviceId(0)));
        // Pure function: repeated evaluation agrees.
        assert_eq!(
            forced_drop_decision(DeviceId(1), &friendly, DeviceId(0)),
            forced_drop_decision(DeviceId(1), &friendly, DeviceId(0))
        );
    }

    #[test]
    fn friend_lists_require_registration() {
        let mut registry = AdmissionRegistry::new(true);
        registry.register(DeviceId(0));
        assert!(registry.befriend(DeviceId(0), DeviceId(7)).is_err());
        assert!(registry.befriend(DeviceId(7), DeviceId(0)).is_err());
    }

    /// One step of the random-walk model used by the uniqueness property.
    #[derive(Clone, Debug)]
    enum QueueOp {
        Enqueue(u8),
        Offload(u8),
        Evacuate(u8),
        Recover(u8),
        Serve { queue: u8, succeed: bool },
    }

    fn op_strategy() -> impl Strategy<Value = QueueOp> {
        prop_oneof![
            (0u8..4).prop_map(QueueOp::Enqueue),
            (0u8..4).prop_map(QueueOp::Offload),
            (0u8..4).prop_map(QueueOp::Evacuate),
            (0u8..4).prop_map(QueueOp::Recover),
            ((0u8..4), any::<bool>()).prop_map(|(queue, succeed)| QueueOp::Serve { queue, succeed }),
        ]
    }

    proptest! {
        /// Arbitrary interleavings of enqueue/offload/evacuate/serve keep
        /// packet identities unique across all queues and never lose or
        /// duplicate a packet unaccounted for.
        #[test]
        fn packet_identity_survives_random_operation_sequences(
            ops in proptest::collection::vec(op_strategy(), 1..120),
            seed in any::<u64>(),
        ) {
            let mut queues = vec![
                queue(0, 6, 4.0, 1.0),
                queue(1, 6, 4.0, 0.8),
                queue(2, 6, 4.0, 1.2),
                queue(3, 6, 4.0, 1.0),
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut next_request = 0u64;
            let mut admitted = 0usize;
            let mut delivered = 0usize;
            let mut dropped = 0usize;

            for op in ops {
                match op {
                    QueueOp::Enqueue(i) => {
                        let q = &mut queues[i as usize % 4];
                        if !q.failed {
                            let p = packet(next_request, 0);
                            next_request += 1;
                            if q.enqueue(p) { admitted += 1; }
                        }
                    }
                    QueueOp::Offload(i) => {
                        let idx = i as usize % 4;
                        if !queues[idx].failed && queues[idx].is_congested() {
                            if let Some(target) = select_offload_target(&queues, queues[idx].interface_id) {
                                let t_idx = queues.iter().position(|q| q.interface_id == target).unwrap();
                                let (a, b) = if idx < t_idx {
                                    let (lo, hi) = queues.split_at_mut(t_idx);
                                    (&mut lo[idx], &mut hi[0])
                                } else {
                                    let (lo, hi) = queues.split_at_mut(idx);
                                    (&mut hi[0], &mut lo[t_idx])
                                };
                                offload_excess(a, b);
                            }
                        }
                    }
                    QueueOp::Evacuate(i) => {
                        let idx = i as usize % 4;
                        queues[idx].failed = true;
                        let source_id = queues[idx].interface_id;
                        let outcome = evacuate_failed_interface(&mut queues, source_id);
                        dropped += outcome.dropped.len();
                    }
                    QueueOp::Recover(i) => {
                        queues[i as usize % 4].failed = false;
                    }
                    QueueOp::Serve { queue: i, succeed } => {
                        let idx = i as usize % 4;
                        if !queues[idx].failed {
                            let gain = if succeed { 10.0 } else { 0.0 };
                            let outcome = serve_slot(&mut queues[idx], gain, &mut rng, 1.0);
                            delivered += outcome.delivered.len();
                            for p in outcome.to_retransmit {
                                if queues[idx].enqueue(p) { } else { dropped += 1; }
                            }
                        }
                    }
                }

                let mut seen = std::collections::BTreeSet::new();
                for q in &queues {
                    for p in q.iter() {
                        prop_assert!(
                            seen.insert((p.request_id, p.sequence_index)),
                            "duplicate packet {:?}", (p.request_id, p.sequence_index)
                        );
                    }
                    prop_assert!(q.len() <= q.capacity);
                    prop_assert!(q.cwnd >= 1);
                }
                prop_assert_eq!(seen.len() + delivered + dropped, admitted);
            }
        }

        /// After a successful offload with the chosen eligible target, the
        /// source is no longer congested unless the target filled first.
        #[test]
        fn offload_restores_the_trigger_or_exhausts_the_target(
            source_fill in 0usize..20,
            target_fill in 0usize..20,
            weight in 0.5f64..1.5,
        ) {
            let mut source = queue(0, 20, 15.0, weight);
            let mut target = queue(1, 20, 15.0, weight);
            fill(&mut source, source_fill);
            fill(&mut target, target_fill);
            if source.is_congested() && select_offload_target(&[source.clone(), target.clone()], InterfaceId(0)).is_some() {
                let before = source.len() + target.len();
                offload_excess(&mut source, &mut target);
                prop_assert_eq!(source.len() + target.len(), before);
                prop_assert!(!source.is_congested() || target.free_space() == 0);
            }
        }
    }
}
