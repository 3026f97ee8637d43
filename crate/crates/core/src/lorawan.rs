//! ALOHA baseline protocols: plain unconfirmed uplinks (fire and forget)
//! and the confirmed variant with acknowledgements and bounded retries.
//! Actuation downlinks share the aggregated frame format of the scheduled
//! protocol; only the channel discipline differs.

use crate::ctrlmac::PendingSample;
use crate::sim::RngStream;

/// Outcome of an acknowledgement timeout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeoutOutcome {
    /// Try again after this backoff (seconds).
    Retry { backoff_s: f64 },
    /// Attempt budget exhausted; the carried event dies.
    Drop { event_id: u64 },
}

/// Node-side state for both ALOHA variants. The confirmed variant runs a
/// transaction per pending packet: attempts are counted across retries and
/// the payload refreshes to the newest sample at every (re)transmission.
#[derive(Debug, Clone)]
pub struct AlohaNodeState {
    /// Freshest sample waiting to go (or be re-sent).
    pub pending: Option<PendingSample>,
    /// Attempts made in the running transaction (confirmed mode).
    pub attempts: u32,
    /// Event id carried by the frame currently awaiting its ack, with the
    /// attempt number used to match timeout events.
    pub awaiting_ack: Option<(u64, u32)>,
    /// A transmission or backoff is in progress; new samples only refresh
    /// the payload instead of spawning a second transaction.
    pub busy: bool,
    pub max_attempts: u32,
}

impl AlohaNodeState {
    pub fn new(max_attempts: u32) -> Self {
        Self {
            pending: None,
            attempts: 0,
            awaiting_ack: None,
            busy: false,
            max_attempts,
        }
    }

    /// Freshness rule: a newer sample replaces the pending one; returns the
    /// replaced event id when that happens.
    pub fn offer_sample(&mut self, sample: PendingSample) -> Option<u64> {
        let replaced = self.pending.map(|p| p.event_id);
        let mut s = sample;
        if let Some(old) = self.pending {
            s.replaced = old.replaced + 1;
        }
        self.pending = Some(s);
        replaced
    }

    /// Snapshot the newest sample for a transmission attempt.
    /// Unconfirmed mode consumes the pending sample; confirmed mode keeps it
    /// for possible retries and counts the attempt.
    pub fn begin_attempt(&mut self, confirmed: bool) -> Option<PendingSample> {
        if confirmed {
            let s = self.pending?;
            self.attempts += 1;
            self.awaiting_ack = Some((s.event_id, self.attempts));
            self.busy = true;
            Some(s)
        } else {
            self.busy = true;
            self.pending.take()
        }
    }

    /// Acknowledgement for `event_id` arrived. Returns true when it closes
    /// the running transaction.
    pub fn on_ack(&mut self, event_id: u64) -> bool {
        match self.awaiting_ack {
            Some((e, _)) if e == event_id => {
                self.awaiting_ack = None;
                self.attempts = 0;
                self.busy = false;
                // The acked sample leaves the queue unless a newer one
                // already replaced it.
                if self.pending.map(|p| p.event_id) == Some(event_id) {
                    self.pending = None;
                }
                true
            }
            _ => false,
        }
    }

    /// The ack window for attempt `attempt_no` closed without an ack.
    pub fn on_timeout(&mut self, attempt_no: u32, rng: &mut RngStream, backoff: [f64; 2]) -> Option<TimeoutOutcome> {
        match self.awaiting_ack {
            Some((event_id, a)) if a == attempt_no => {
                self.awaiting_ack = None;
                if self.attempts >= self.max_attempts {
                    self.attempts = 0;
                    self.busy = false;
                    // The newest pending sample dies with the transaction.
                    let dead = self.pending.take().map(|p| p.event_id).unwrap_or(event_id);
                    Some(TimeoutOutcome::Drop { event_id: dead })
                } else {
                    Some(TimeoutOutcome::Retry {
                        backoff_s: rng.uniform(backoff[0], backoff[1]),
                    })
                }
            }
            _ => None,
        }
    }
}

/// Uplink channel choice: uniform over the data channels, redrawn per
/// attempt (channel-hopping convention).
pub fn choose_uplink_channel(rng: &mut RngStream, data_channels: &[u8]) -> u8 {
    assert!(!data_channels.is_empty());
    let idx = rng.pick_1_to_k(data_channels.len() as u32) - 1;
    data_channels[idx as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64, t: f64) -> PendingSample {
        PendingSample {
            event_id: id,
            value: 0.0,
            generated_at: t,
            replaced: 0,
        }
    }

    #[test]
    fn unconfirmed_consumes_pending() {
        let mut n = AlohaNodeState::new(8);
        n.offer_sample(sample(1, 0.0));
        let s = n.begin_attempt(false).unwrap();
        assert_eq!(s.event_id, 1);
        assert!(n.pending.is_none());
        assert!(n.awaiting_ack.is_none(), "unconfirmed mode expects no ack");
    }

    #[test]
    fn confirmed_retries_then_drops_after_budget() {
        let mut n = AlohaNodeState::new(8);
        let mut rng = RngStream::new(9, 0);
        n.offer_sample(sample(1, 0.0));
        for attempt in 1..=8 {
            let s = n.begin_attempt(true).unwrap();
            assert_eq!(s.event_id, 1);
            let out = n.on_timeout(attempt, &mut rng, [0.5, 1.5]).unwrap();
            if attempt < 8 {
                match out {
                    TimeoutOutcome::Retry { backoff_s } => {
                        assert!((0.5..1.5).contains(&backoff_s));
                    }
                    other => panic!("expected retry, got {other:?}"),
                }
            } else {
                assert_eq!(out, TimeoutOutcome::Drop { event_id: 1 });
            }
        }
        assert!(n.pending.is_none());
        assert!(!n.busy);
    }

    #[test]
    fn ack_closes_transaction() {
        let mut n = AlohaNodeState::new(8);
        n.offer_sample(sample(7, 0.0));
        n.begin_attempt(true);
        assert!(n.on_ack(7));
        assert!(n.pending.is_none());
        assert_eq!(n.attempts, 0);
    }

    #[test]
    fn newer_sample_refreshes_payload_between_attempts() {
        let mut n = AlohaNodeState::new(8);
        let mut rng = RngStream::new(10, 0);
        n.offer_sample(sample(1, 0.0));
        n.begin_attempt(true);
        n.on_timeout(1, &mut rng, [0.5, 1.5]);
        // Fresh data arrives during the backoff.
        let replaced = n.offer_sample(sample(2, 4.5));
        assert_eq!(replaced, Some(1));
        let s = n.begin_attempt(true).unwrap();
        assert_eq!(s.event_id, 2, "retry must carry the newest sample");
        assert_eq!(n.attempts, 2, "attempt budget spans the transaction");
    }

    #[test]
    fn ack_for_superseded_event_keeps_newer_pending() {
        let mut n = AlohaNodeState::new(8);
        n.offer_sample(sample(1, 0.0));
        n.begin_attempt(true);
        n.offer_sample(sample(2, 1.0));
        // The ack closes event 1's transaction but sample 2 still waits.
        assert!(n.on_ack(1));
        assert_eq!(n.pending.unwrap().event_id, 2);
    }

    #[test]
    fn stale_timeouts_are_ignored() {
        let mut n = AlohaNodeState::new(8);
        let mut rng = RngStream::new(11, 0);
        n.offer_sample(sample(1, 0.0));
        n.begin_attempt(true);
        assert!(n.on_ack(1));
        // Timeout for the already-acked attempt must be a no-op.
        assert_eq!(n.on_timeout(1, &mut rng, [0.5, 1.5]), None);
    }

    #[test]
    fn channel_choice_uniform() {
        let mut rng = RngStream::new(12, 0);
        let chans = [1u8, 2, 3];
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            let c = choose_uplink_channel(&mut rng, &chans);
            counts[(c - 1) as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 30_000.0;
            assert!((f - 1.0 / 3.0).abs() < 0.02);
        }
    }
}
