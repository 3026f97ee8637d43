//! Deterministic discrete-event machinery: a time-ordered event queue with a
//! sequence-number tiebreaker, and per-entity random streams split from a
//! master seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Identifies a simulated entity (node, gateway, subsystem, ...).
pub type EntityId = u32;

/// What a scheduled event does when it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Periodic sensor sampling for one subsystem.
    PlantSample,
    /// Gateway broadcasts the request-reply message opening a new round.
    RrmBroadcast,
    /// A radio frame starts occupying its channel.
    TxStart,
    /// A radio frame leaves the air; delivery is resolved here.
    TxEnd,
    /// A duty-cycle block on some (node, channel) expires.
    DcRelease,
    /// Customer demand changes (profile step or jitter update).
    DemandChange,
    /// A leak fault turns on or off.
    FaultToggle,
    /// A confirmed-uplink node stops waiting for its acknowledgement.
    AckTimeout,
    /// Traffic generator fires at a node (protocol benchmark mode).
    TrafficArrival,
}

/// One entry in the simulator's future event list.
#[derive(Debug, Clone)]
pub struct SimEvent {
    pub fire_time: f64,
    pub sequence_no: u64,
    pub kind: EventKind,
    pub target: EntityId,
    /// Free slot for event-specific payload (frame ids, attempt counters...).
    pub payload: u64,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.sequence_no == other.sequence_no
    }
}
impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert to pop earliest (time, seq) first.
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.sequence_no.cmp(&self.sequence_no))
    }
}
impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered event queue. Events pop in `(fire_time, sequence_no)`
/// lexicographic order; scheduling into the past is a simulator bug and
/// panics immediately rather than corrupting causality.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
    now: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current simulation time: the fire time of the last popped event.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedule `kind` for `target` at absolute time `fire_time`.
    pub fn schedule(&mut self, fire_time: f64, kind: EventKind, target: EntityId) -> u64 {
        self.schedule_with(fire_time, kind, target, 0)
    }

    pub fn schedule_with(
        &mut self,
        fire_time: f64,
        kind: EventKind,
        target: EntityId,
        payload: u64,
    ) -> u64 {
        assert!(
            fire_time.is_finite() && fire_time >= self.now,
            "schedule into the past: t={fire_time} < now={} ({kind:?})",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent {
            fire_time,
            sequence_no: seq,
            kind,
            target,
            payload,
        });
        seq
    }

    /// Pop the next event and advance the clock. The clock never moves
    /// backwards.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let ev = self.heap.pop()?;
        debug_assert!(ev.fire_time >= self.now, "clock would move backwards");
        self.now = ev.fire_time;
        Some(ev)
    }
}

/// Distributions supported by [`RngStream::draw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    UniformInt { lo: i64, hi: i64 },
    UniformReal { lo: f64, hi: f64 },
    Exponential { mean: f64 },
}

/// A sample drawn from a [`Distribution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    Int(i64),
    Real(f64),
}

impl Sample {
    pub fn as_f64(self) -> f64 {
        match self {
            Sample::Int(v) => v as f64,
            Sample::Real(v) => v,
        }
    }
    pub fn as_i64(self) -> i64 {
        match self {
            Sample::Int(v) => v,
            Sample::Real(v) => v as i64,
        }
    }
}

/// Per-entity random stream derived from a master seed.
///
/// Streams for distinct `stream_id`s are statistically independent, and a
/// stream's draws depend only on `(master_seed, stream_id)` — adding another
/// entity to a scenario never perturbs existing entities' randomness.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        // SplitMix64 finalizer over the pair gives well-mixed, independent
        // 256-bit ChaCha seeds for nearby (seed, id) values.
        let mut state = master_seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream_id ^ 0xd1b5);
        let mut seed_bytes = [0u8; 32];
        for chunk in seed_bytes.chunks_mut(8) {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(seed_bytes),
        }
    }

    /// Draw one sample. Errors on malformed parameters (`hi < lo`,
    /// non-positive mean).
    pub fn draw(&mut self, dist: Distribution) -> Result<Sample> {
        match dist {
            Distribution::UniformInt { lo, hi } => {
                if hi < lo {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform-int upper bound {hi} < lower bound {lo}"
                    )));
                }
                Ok(Sample::Int(self.rng.gen_range(lo..=hi)))
            }
            Distribution::UniformReal { lo, hi } => {
                if hi < lo {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform-real upper bound {hi} < lower bound {lo}"
                    )));
                }
                if hi == lo {
                    return Ok(Sample::Real(lo));
                }
                Ok(Sample::Real(self.rng.gen_range(lo..hi)))
            }
            Distribution::Exponential { mean } => {
                if !(mean > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "exponential mean must be positive, got {mean}"
                    )));
                }
                // Inverse CDF on a (0,1] uniform.
                let u: f64 = 1.0 - self.rng.gen::<f64>();
                Ok(Sample::Real(-mean * u.ln()))
            }
        }
    }

    /// Uniform integer in `1..=k` (request-slot picks and the like).
    pub fn pick_1_to_k(&mut self, k: u32) -> u32 {
        assert!(k >= 1);
        self.rng.gen_range(1..=k)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            self.rng.gen_range(lo..hi)
        }
    }

    pub fn exponential(&mut self, mean: f64) -> f64 {
        let u: f64 = 1.0 - self.rng.gen::<f64>();
        -mean * u.ln()
    }

    /// Standard normal via Box-Muller (used by the demand jitter process).
    pub fn standard_normal(&mut self) -> f64 {
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(5.0, EventKind::PlantSample, 0);
        q.schedule(3.0, EventKind::PlantSample, 1);
        let first = q.pop().unwrap();
        let second = q.pop().unwrap();
        assert_eq!(first.target, 1);
        assert_eq!(first.fire_time, 3.0);
        assert_eq!(second.target, 0);
    }

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(3.0, EventKind::TxStart, 10);
        q.schedule(3.0, EventKind::TxStart, 11);
        assert_eq!(q.pop().unwrap().target, 10);
        assert_eq!(q.pop().unwrap().target, 11);
    }

    #[test]
    #[should_panic(expected = "schedule into the past")]
    fn scheduling_into_the_past_panics() {
        let mut q = EventQueue::new();
        q.schedule(2.0, EventKind::TxStart, 0);
        q.pop();
        q.schedule(1.0, EventKind::TxStart, 0);
    }

    #[test]
    fn popped_times_nondecreasing() {
        let mut q = EventQueue::new();
        let mut rng = RngStream::new(7, 0);
        for i in 0..200 {
            q.schedule(rng.uniform(0.0, 100.0), EventKind::TxEnd, i);
        }
        let mut last = 0.0;
        while let Some(ev) = q.pop() {
            assert!(ev.fire_time >= last);
            last = ev.fire_time;
        }
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let mut a1 = RngStream::new(42, 1);
        let mut a2 = RngStream::new(42, 1);
        let seq1: Vec<u64> = (0..16).map(|_| a1.next_u64()).collect();
        let seq2: Vec<u64> = (0..16).map(|_| a2.next_u64()).collect();
        assert_eq!(seq1, seq2);

        let mut b = RngStream::new(42, 2);
        let seq3: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(seq1, seq3);
    }

    #[test]
    fn uniform_int_frequencies() {
        let mut rng = RngStream::new(1, 9);
        let n = 1_000_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let v = rng
                .draw(Distribution::UniformInt { lo: 1, hi: 5 })
                .unwrap()
                .as_i64();
            counts[(v - 1) as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 0.01, "frequency {freq} out of band");
        }
    }

    #[test]
    fn uniform_int_degenerate() {
        let mut rng = RngStream::new(1, 3);
        for _ in 0..100 {
            let v = rng
                .draw(Distribution::UniformInt { lo: 3, hi: 3 })
                .unwrap()
                .as_i64();
            assert_eq!(v, 3);
        }
    }

    #[test]
    fn exponential_mean_within_two_percent() {
        let mut rng = RngStream::new(123, 4);
        let n = 1_000_000usize;
        let mean = 4.5;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += rng
                .draw(Distribution::Exponential { mean })
                .unwrap()
                .as_f64();
        }
        let got = sum / n as f64;
        assert!(
            (got - mean).abs() / mean < 0.02,
            "sample mean {got} deviates more than 2% from {mean}"
        );
    }

    #[test]
    fn invalid_parameters_error() {
        let mut rng = RngStream::new(0, 0);
        assert!(rng.draw(Distribution::UniformInt { lo: 5, hi: 1 }).is_err());
        assert!(rng
            .draw(Distribution::Exponential { mean: 0.0 })
            .is_err());
        assert!(rng
            .draw(Distribution::Exponential { mean: -1.0 })
            .is_err());
    }
}
