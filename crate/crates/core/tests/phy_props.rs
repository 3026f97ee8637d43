//! Channel-layer property tests.

use proptest::prelude::*;

use ctrlsim_core::phy::{Channel, ChannelRole, Direction, DutyCycleState, GateOutcome};

proptest! {
    // Long-run airtime fraction per (node, channel) never exceeds the duty
    // cycle over any window of at least 100 times the largest airtime.
    #[test]
    fn duty_cycle_bounds_long_run_airtime(
        duty_pct in 1u32..=10,
        toas in proptest::collection::vec(0.01f64..0.35, 20..200),
        gaps in proptest::collection::vec(0.0f64..3.0, 20..200),
    ) {
        let duty_cycle = duty_pct as f64 / 100.0;
        let ch = Channel {
            id: 1,
            bandwidth_hz: 125_000.0,
            direction: Direction::Uplink,
            role: ChannelRole::Data,
            duty_cycle,
        };
        let mut dc = DutyCycleState::new();
        let mut now = 0.0f64;
        let mut sent: Vec<(f64, f64)> = Vec::new(); // (start, toa)
        let max_toa = toas.iter().cloned().fold(0.0f64, f64::max);

        for (toa, gap) in toas.iter().zip(&gaps) {
            now += gap;
            match dc.gate(1, &ch, now, *toa) {
                GateOutcome::Allowed => sent.push((now, *toa)),
                GateOutcome::RetryAt(at) => {
                    // Honor the gate: send at the earliest legal time.
                    now = at;
                    prop_assert!(matches!(dc.gate(1, &ch, now, *toa), GateOutcome::Allowed));
                    sent.push((now, *toa));
                }
            }
            now += toa;
        }

        // The off-time rule caps the airtime of frames *starting* inside a
        // window at duty_cycle * window + max_toa; edge frames straddling
        // either boundary add at most one more airtime each, so any window
        // of length >= 100 * max_toa obeys duty + 2*max_toa/window, which
        // converges to the configured duty cycle in the long run.
        let horizon = now.max(1.0);
        let window = (100.0 * max_toa).max(1.0);
        if horizon <= window {
            let airtime: f64 = sent.iter().map(|(_, t)| t).sum();
            prop_assert!(airtime / horizon <= duty_cycle + 2.0 * max_toa / horizon + 1e-9);
        } else {
            let mut start = 0.0;
            while start + window <= horizon {
                let airtime: f64 = sent
                    .iter()
                    .map(|&(s, t)| {
                        let overlap = (s + t).min(start + window) - s.max(start);
                        overlap.max(0.0)
                    })
                    .sum();
                let bound = duty_cycle + 2.0 * max_toa / window + 1e-9;
                prop_assert!(
                    airtime / window <= bound,
                    "window [{start}, {}) airtime fraction {} above bound {bound}",
                    start + window,
                    airtime / window
                );
                start += window / 4.0;
            }
            // And the whole horizon tends to the configured duty cycle.
            let total: f64 = sent.iter().map(|(_, t)| t).sum();
            prop_assert!(total / horizon <= duty_cycle + 2.0 * max_toa / horizon + 1e-9);
        }
    }
}
