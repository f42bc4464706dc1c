//! Request-stream generation: Poisson arrivals, sizes, deadlines, and
//! packetization into payload units.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::config::WorkloadSection;
use crate::error::{Error, Result};
use crate::queueing::{Packet, RequestId};
use crate::topology::DeviceId;

/// One unit of work submitted to the cloud: a sized transfer with a relative
/// deadline, split into `packet_count` payload units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub request_id: RequestId,
    pub consumer_id: DeviceId,
    pub size: u64,
    pub arrival_slot: u64,
    pub deadline_slots: u64,
    pub packet_count: u32,
}

impl Request {
    /// Last slot (inclusive) in which the request may still complete.
    pub fn expiry_slot(&self) -> u64 {
        self.arrival_slot + self.deadline_slots - 1
    }
}

/// Number of request arrivals in one slot, Poisson with mean `lambda`.
pub fn poisson_arrivals<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<u64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("arrival rate lambda must be positive, got {lambda}")));
    }
    let poisson = Poisson::new(lambda)
        .map_err(|e| Error::domain(format!("poisson distribution rejected lambda {lambda}: {e}")))?;
    Ok(poisson.sample(rng) as u64)
}

/// Draws one request: size and deadline uniform within the configured bounds,
/// consumer uniform among the registered pool except for the configured
/// unregistered fraction (used to exercise forced drops).
pub fn generate_request<R: Rng + ?Sized>(
    rng: &mut R,
    params: &WorkloadSection,
    registered_consumers: &[DeviceId],
    unregistered_consumer: DeviceId,
    request_id: RequestId,
    arrival_slot: u64,
) -> Request {
    debug_assert!(!registered_consumers.is_empty(), "the consumer pool must be nonempty");
    let unregistered = rng.random::<f64>() < params.unregistered_fraction;
    let consumer_id = if unregistered {
        unregistered_consumer
    } else {
        registered_consumers[rng.random_range(0..registered_consumers.len())]
    };
    let size = if params.size_min_bytes == params.size_max_bytes {
        params.size_min_bytes
    } else {
        rng.random_range(params.size_min_bytes..=params.size_max_bytes)
    };
    let deadline_slots = if params.deadline_min_slots == params.deadline_max_slots {
        params.deadline_min_slots
    } else {
        rng.random_range(params.deadline_min_slots..=params.deadline_max_slots)
    };
    let packet_count = size.div_ceil(params.payload_unit_bytes) as u32;
    Request {
        request_id,
        consumer_id,
        size,
        arrival_slot,
        deadline_slots,
        packet_count,
    }
}

/// Splits a request into `ceil(size / payload_unit)` packets; every packet
/// carries a full payload unit except the last, which carries the remainder.
pub fn packetize(request: &Request, payload_unit: u64) -> Result<Vec<Packet>> {
    if payload_unit == 0 {
        return Err(Error::domain("payload unit must be positive"));
    }
    let count = request.size.div_ceil(payload_unit);
    let packets = (0..count)
        .map(|index| {
            let size = if index + 1 == count {
                request.size - payload_unit * (count - 1)
            } else {
                payload_unit
            };
            Packet {
                request_id: request.request_id,
                sequence_index: index as u32,
                size,
                enqueue_slot: request.arrival_slot,
                retransmission: false,
            }
        })
        .collect();
    Ok(packets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn params() -> WorkloadSection {
        WorkloadSection::default()
    }

    fn request_of_size(size: u64, unit: u64) -> Request {
        Request {
            request_id: RequestId(1),
            consumer_id: DeviceId(0),
            size,
            arrival_slot: 5,
            deadline_slots: 10,
            packet_count: size.div_ceil(unit) as u32,
        }
    }

    #[test]
    fn poisson_matches_mean_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| poisson_arrivals(&mut rng, 4.0).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let variance = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 0.01, "mean was {mean}");
        assert!((variance - 4.0).abs() < 0.05, "variance was {variance}");
    }

    #[test]
    fn poisson_small_rate_is_almost_surely_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(poisson_arrivals(&mut rng, 0.0001).unwrap(), 0);
    }

    #[test]
    fn poisson_rejects_nonpositive_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(poisson_arrivals(&mut rng, 0.0).is_err());
        assert!(poisson_arrivals(&mut rng, -1.0).is_err());
    }

    #[test]
    fn poisson_is_deterministic_under_a_fixed_seed() {
        let draw = |seed| -> Vec<u64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..256).map(|_| poisson_arrivals(&mut rng, 1.5).unwrap()).collect()
        };
        assert_eq!(draw(77), draw(77));
    }

    #[test]
    fn arrivals_in_disjoint_ranges_are_independent() {
        // Chi-square independence test on paired counts from consecutive
        // slots, with coarse bins keeping expected cells well-populated.
        let mut rng = ChaCha8Rng::seed_from_u64(0xD15C0);
        let bin = |count: u64| -> usize {
            match count {
                0..=3 => 0,
                4..=5 => 1,
                _ => 2,
            }
        };
        let n = 4000;
        let mut table = [[0f64; 3]; 3];
        for _ in 0..n {
            let first = bin(poisson_arrivals(&mut rng, 4.0).unwrap());
            let second = bin(poisson_arrivals(&mut rng, 4.0).unwrap());
            table[first][second] += 1.0;
        }
        let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<f64> = (0..3).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        let total: f64 = row_sums.iter().sum();
        let mut statistic = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let expected = row_sums[r] * col_sums[c] / total;
                assert!(expected > 5.0, "bin ({r},{c}) too sparse: {expected}");
                let delta = table[r][c] - expected;
                statistic += delta * delta / expected;
            }
        }
        let critical = ChiSquared::new(4.0).unwrap().inverse_cdf(0.99);
        assert!(
            statistic < critical,
            "independence rejected: chi-square {statistic} >= {critical}"
        );
    }

    #[test]
    fn generated_requests_respect_all_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let consumers = [DeviceId(0), DeviceId(1), DeviceId(2)];
        let p = params();
        for i in 0..2000 {
            let req = generate_request(&mut rng, &p, &consumers, DeviceId(99), RequestId(i), 3);
            assert!((p.size_min_bytes..=p.size_max_bytes).contains(&req.size));
            assert!((p.deadline_min_slots..=p.deadline_max_slots).contains(&req.deadline_slots));
            assert_eq!(req.packet_count as u64, req.size.div_ceil(p.payload_unit_bytes));
            assert!(req.size >= 1_048_576, "default sizes stay above 1 MB");
        }
    }

    #[test]
    fn degenerate_size_bounds_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = params();
        p.size_min_bytes = 2_097_152;
        p.size_max_bytes = 2_097_152;
        let req = generate_request(&mut rng, &p, &[DeviceId(0)], DeviceId(99), RequestId(0), 0);
        assert_eq!(req.size, 2_097_152);
    }

    #[test]
    fn unregistered_fraction_zero_only_yields_registered_consumers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = params();
        p.unregistered_fraction = 0.0;
        let consumers = [DeviceId(0), DeviceId(1)];
        for i in 0..500 {
            let req = generate_request(&mut rng, &p, &consumers, DeviceId(99), RequestId(i), 0);
            assert!(consumers.contains(&req.consumer_id));
        }
    }

    #[test]
    fn packetize_covers_exact_ceiling_and_minimum_splits() {
        assert_eq!(packetize(&request_of_size(3000, 1500), 1500).unwrap().len(), 2);
        assert_eq!(packetize(&request_of_size(3001, 1500), 1500).unwrap().len(), 3);
        assert_eq!(packetize(&request_of_size(1, 1500), 1500).unwrap().len(), 1);
        assert!(packetize(&request_of_size(1, 1500), 0).is_err());
    }

    #[test]
    fn packet_payloads_reconstruct_the_request_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for i in 0..500u64 {
            let size = rng.random_range(1..=5_000_000u64);
            let unit = rng.random_range(1..=700_000u64);
            let req = request_of_size(size, unit);
            let packets = packetize(&req, unit).unwrap();
            assert_eq!(packets.iter().map(|p| p.size).sum::<u64>(), size, "case {i}");
            assert!(packets.iter().all(|p| p.size > 0 && p.size <= unit));
            let indices: Vec<u32> = packets.iter().map(|p| p.sequence_index).collect();
            let expected: Vec<u32> = (0..packets.len() as u32).collect();
            assert_eq!(indices, expected);
        }
    }
}
