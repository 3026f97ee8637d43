//! LoRa-like physical layer: time-on-air arithmetic, per-(node, channel)
//! duty-cycle enforcement, and collision-based delivery resolution with an
//! optional capture-effect mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EntityId;

/// Largest application payload a single frame may carry, in bytes.
pub const MAX_PAYLOAD_BYTES: usize = 222;

/// Spreading factor used everywhere; kept constant on purpose.
pub const SPREADING_FACTOR: u32 = 7;

/// Preamble length in symbols.
pub const PREAMBLE_SYMBOLS: f64 = 8.0;

/// Coding rate 4/5 => CR index 1 in the ToA formula.
const CODING_RATE_INDEX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// What traffic a channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    /// Scheduled sensor data uplinks.
    Data,
    /// Contention-based transmission requests.
    Request,
    /// Gateway RRM broadcasts and LoRaWAN acknowledgements.
    RrmAck,
    /// Gateway-to-actuator control updates.
    Actuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: u8,
    pub bandwidth_hz: f64,
    pub direction: Direction,
    pub role: ChannelRole,
    /// Duty cycle as a fraction in (0, 1].
    pub duty_cycle: f64,
}

/// The radio channel layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub channels: Vec<Channel>,
    pub spreading_factor: u32,
}

impl ChannelPlan {
    /// Default EU-style plan: three 125 kHz uplink data channels at 1% DC,
    /// one 125 kHz request channel at 10% DC, and the 250 kHz downlink at
    /// 10% DC split into a 125 kHz RRM/ack half and a 125 kHz actuation half.
    pub fn default_plan() -> Self {
        let mut channels = Vec::new();
        for id in 1..=3u8 {
            channels.push(Channel {
                id,
                bandwidth_hz: 125_000.0,
                direction: Direction::Uplink,
                role: ChannelRole::Data,
                duty_cycle: 0.01,
            });
        }
        channels.push(Channel {
            id: 4,
            bandwidth_hz: 125_000.0,
            direction: Direction::Uplink,
            role: ChannelRole::Request,
            duty_cycle: 0.10,
        });
        channels.push(Channel {
            id: 5,
            bandwidth_hz: 125_000.0,
            direction: Direction::Downlink,
            role: ChannelRole::RrmAck,
            duty_cycle: 0.10,
        });
        channels.push(Channel {
            id: 6,
            bandwidth_hz: 125_000.0,
            direction: Direction::Downlink,
            role: ChannelRole::Actuation,
            duty_cycle: 0.10,
        });
        Self {
            channels,
            spreading_factor: SPREADING_FACTOR,
        }
    }

    pub fn channel(&self, id: u8) -> Option<&Channel> {
        self.channels.iter().find(|c| c.id == id)
    }

    pub fn data_channels(&self) -> Vec<u8> {
        self.channels
            .iter()
            .filter(|c| c.role == ChannelRole::Data)
            .map(|c| c.id)
            .collect()
    }

    pub fn request_channel(&self) -> Option<u8> {
        self.channels
            .iter()
            .find(|c| c.role == ChannelRole::Request)
            .map(|c| c.id)
    }

    pub fn rrm_ack_channel(&self) -> Option<u8> {
        self.channels
            .iter()
            .find(|c| c.role == ChannelRole::RrmAck)
            .map(|c| c.id)
    }

    pub fn actuation_channel(&self) -> Option<u8> {
        self.channels
            .iter()
            .find(|c| c.role == ChannelRole::Actuation)
            .map(|c| c.id)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.channels {
            if !(c.duty_cycle > 0.0 && c.duty_cycle <= 1.0) {
                return Err(Error::InvalidScenario {
                    field: format!("channel_plan.channels[{}].duty_cycle", c.id),
                    reason: format!("duty cycle {} not in (0, 1]", c.duty_cycle),
                });
            }
            if c.bandwidth_hz <= 0.0 {
                return Err(Error::InvalidScenario {
                    field: format!("channel_plan.channels[{}].bandwidth_hz", c.id),
                    reason: "bandwidth must be positive".into(),
                });
            }
        }
        let requests = self
            .channels
            .iter()
            .filter(|c| c.role == ChannelRole::Request)
            .count();
        let actuations = self
            .channels
            .iter()
            .filter(|c| c.role == ChannelRole::Actuation)
            .count();
        if requests != 1 || actuations != 1 {
            return Err(Error::InvalidScenario {
                field: "channel_plan".into(),
                reason: format!(
                    "need exactly one request and one actuation channel, got {requests} and {actuations}"
                ),
            });
        }
        Ok(())
    }
}

/// Frame roles, used for logging and delivery bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRole {
    Request,
    Data,
    Rrm,
    Ack,
    Actuation,
}

/// One radio frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub channel_id: u8,
    pub start: f64,
    pub toa: f64,
    pub payload_bytes: usize,
    pub src: EntityId,
    pub role: FrameRole,
    pub snr_db: Option<f64>,
}

impl Transmission {
    pub fn end(&self) -> f64 {
        self.start + self.toa
    }

    fn overlaps(&self, other: &Self) -> bool {
        self.channel_id == other.channel_id && self.start < other.end() && other.start < self.end()
    }
}

/// Time on air of a LoRa frame at the given bandwidth: SF7, coding rate 4/5,
/// 8-symbol preamble, explicit header, CRC on, no low-data-rate optimization.
pub fn time_on_air_at(payload_bytes: usize, bandwidth_hz: f64, sf: u32) -> Result<f64> {
    if payload_bytes == 0 {
        return Err(Error::PayloadEmpty);
    }
    if payload_bytes > MAX_PAYLOAD_BYTES {
        return Err(Error::PayloadTooLarge(payload_bytes));
    }
    let sf = sf as f64;
    let t_sym = 2f64.powf(sf) / bandwidth_hz;
    let t_preamble = (PREAMBLE_SYMBOLS + 4.25) * t_sym;
    // Explicit header (IH=0), CRC on (CRC=1), LDRO off (DE=0).
    let numer = 8.0 * payload_bytes as f64 - 4.0 * sf + 28.0 + 16.0;
    let payload_symbols = 8.0 + (numer / (4.0 * sf)).ceil().max(0.0) * (CODING_RATE_INDEX + 4.0);
    Ok(t_preamble + payload_symbols * t_sym)
}

/// Time on air on a specific channel of a plan.
pub fn time_on_air(payload_bytes: usize, plan: &ChannelPlan, channel_id: u8) -> Result<f64> {
    let ch = plan.channel(channel_id).ok_or_else(|| Error::InvalidScenario {
        field: "channel_id".into(),
        reason: format!("unknown channel {channel_id}"),
    })?;
    time_on_air_at(payload_bytes, ch.bandwidth_hz, plan.spreading_factor)
}

/// Verdict of [`DutyCycleState::gate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateOutcome {
    Allowed,
    RetryAt(f64),
}

/// Tracks, per (node, channel), the earliest time the next transmission may
/// start. After a frame of duration `toa` ending at `t_end` on a channel
/// with duty cycle `d`, the next start is `t_end + toa * (1/d - 1)`.
#[derive(Debug, Clone, Default)]
pub struct DutyCycleState {
    next_allowed: BTreeMap<(EntityId, u8), f64>,
}

impl DutyCycleState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Earliest legal start time for `node` on `channel` (0 if never used).
    pub fn next_allowed(&self, node: EntityId, channel: u8) -> f64 {
        self.next_allowed.get(&(node, channel)).copied().unwrap_or(0.0)
    }

    /// Check whether a frame of duration `toa` may start at `now`; if so,
    /// commit it and advance the off-time bookkeeping.
    pub fn gate(
        &mut self,
        node: EntityId,
        channel: &Channel,
        now: f64,
        toa: f64,
    ) -> GateOutcome {
        debug_assert!(toa > 0.0);
        let key = (node, channel.id);
        let allowed_at = self.next_allowed.get(&key).copied().unwrap_or(0.0);
        if now + 1e-12 < allowed_at {
            return GateOutcome::RetryAt(allowed_at);
        }
        let t_end = now + toa;
        let off_time = toa * (1.0 / channel.duty_cycle - 1.0);
        self.next_allowed.insert(key, t_end + off_time);
        GateOutcome::Allowed
    }
}

/// Delivery verdict for one transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeliveryOutcome {
    Delivered {
        /// SNR after capture degradation, when SNR modelling is active.
        snr_db: Option<f64>,
        /// Set when capture mode decoded the frame below the SNR threshold,
        /// which the gateway treats as a suspected collision.
        suspected_collision: bool,
    },
    Collided,
}

impl DeliveryOutcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, DeliveryOutcome::Delivered { .. })
    }

    /// Delivered cleanly: not collided and not flagged suspect.
    pub fn is_clean(&self) -> bool {
        matches!(
            self,
            DeliveryOutcome::Delivered {
                suspected_collision: false,
                ..
            }
        )
    }
}

/// Capture-effect configuration. Disabled by default; when disabled any
/// time overlap on a channel destroys both frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    pub enabled: bool,
    /// Minimum power advantage (dB) for the stronger frame to survive.
    pub capture_margin_db: f64,
    /// Decoded frames below this SNR are flagged as suspected collisions.
    pub snr_threshold_db: f64,
    /// Node SNR at the reference distance (dB); used as-is when no node
    /// coordinates are given.
    pub snr_ref_db: f64,
    /// Log-distance path loss exponent applied when coordinates exist.
    pub path_loss_exp: f64,
    pub ref_dist_m: f64,
    /// SNR of gateway transmissions.
    pub gateway_snr_db: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            capture_margin_db: 6.0,
            snr_threshold_db: 7.0,
            snr_ref_db: 10.0,
            path_loss_exp: 2.7,
            ref_dist_m: 100.0,
            gateway_snr_db: 20.0,
        }
    }
}

/// Resolve deliveries for a batch of transmissions.
///
/// With capture off, the collision relation is exactly time overlap on equal
/// channel ids: overlapping frames all collide, everything else delivers.
/// With capture on, the strongest frame in an overlap group survives if it
/// clears the margin over the power sum of the others; its decoded SNR is
/// degraded and flagged suspect when it drops below the threshold.
///
/// The outcome vector is index-aligned with the input and independent of
/// input order.
pub fn resolve_deliveries(
    active: &[Transmission],
    capture: &CaptureConfig,
) -> Vec<DeliveryOutcome> {
    let n = active.len();
    let mut outcomes = vec![
        DeliveryOutcome::Delivered {
            snr_db: None,
            suspected_collision: false,
        };
        n
    ];
    // Overlap groups via union-find would be overkill at these sizes.
    let mut overlapping: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if active[i].overlaps(&active[j]) {
                overlapping[i].push(j);
                overlapping[j].push(i);
            }
        }
    }

    for i in 0..n {
        if overlapping[i].is_empty() {
            outcomes[i] = DeliveryOutcome::Delivered {
                snr_db: active[i].snr_db,
                suspected_collision: false,
            };
            continue;
        }
        if !capture.enabled {
            outcomes[i] = DeliveryOutcome::Collided;
            continue;
        }
        let own = match active[i].snr_db {
            Some(s) => s,
            None => {
                // No SNR information: capture cannot arbitrate.
                outcomes[i] = DeliveryOutcome::Collided;
                continue;
            }
        };
        // Interference power sum in linear units, relative to noise.
        let mut interference = 0.0;
        let mut missing_snr = false;
        for &j in &overlapping[i] {
            match active[j].snr_db {
                Some(s) => interference += db_to_linear(s),
                None => missing_snr = true,
            }
        }
        if missing_snr {
            outcomes[i] = DeliveryOutcome::Collided;
            continue;
        }
        let own_lin = db_to_linear(own);
        let margin_db = 10.0 * (own_lin / interference).log10();
        if margin_db >= capture.capture_margin_db {
            let degraded_lin = own_lin / (1.0 + interference);
            let degraded_db = 10.0 * degraded_lin.log10();
            outcomes[i] = DeliveryOutcome::Delivered {
                snr_db: Some(degraded_db),
                suspected_collision: degraded_db < capture.snr_threshold_db,
            };
        } else {
            outcomes[i] = DeliveryOutcome::Collided;
        }
    }
    outcomes
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tx(channel: u8, start: f64, toa: f64) -> Transmission {
        Transmission {
            channel_id: channel,
            start,
            toa,
            payload_bytes: 10,
            src: 0,
            role: FrameRole::Data,
            snr_db: None,
        }
    }

    #[test]
    fn toa_12_bytes_125khz() {
        // Independent evaluation of the published formula gives 41.216 ms.
        let plan = ChannelPlan::default_plan();
        let toa = time_on_air(12, &plan, 1).unwrap();
        assert_relative_eq!(toa, 0.041216, epsilon = 1e-6);
    }

    #[test]
    fn toa_halves_when_bandwidth_doubles() {
        let t125 = time_on_air_at(32, 125_000.0, 7).unwrap();
        let t250 = time_on_air_at(32, 250_000.0, 7).unwrap();
        assert_relative_eq!(t125 / t250, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn toa_payload_bounds() {
        assert!(time_on_air_at(0, 125_000.0, 7).is_err());
        assert!(time_on_air_at(223, 125_000.0, 7).is_err());
        assert!(time_on_air_at(222, 125_000.0, 7).is_ok());
    }

    #[test]
    fn duty_cycle_one_percent() {
        let ch = Channel {
            id: 1,
            bandwidth_hz: 125_000.0,
            direction: Direction::Uplink,
            role: ChannelRole::Data,
            duty_cycle: 0.01,
        };
        let mut dc = DutyCycleState::new();
        assert_eq!(dc.gate(1, &ch, 0.0, 0.05), GateOutcome::Allowed);
        // 0.05 + 0.05 * 99 = 5.0
        assert_relative_eq!(dc.next_allowed(1, 1), 5.0, epsilon = 1e-12);
        assert_eq!(dc.gate(1, &ch, 1.0, 0.05), GateOutcome::RetryAt(5.0));
        assert_eq!(dc.gate(1, &ch, 5.0, 0.05), GateOutcome::Allowed);
    }

    #[test]
    fn duty_cycle_ten_percent() {
        let ch = Channel {
            id: 6,
            bandwidth_hz: 125_000.0,
            direction: Direction::Downlink,
            role: ChannelRole::Actuation,
            duty_cycle: 0.10,
        };
        let mut dc = DutyCycleState::new();
        assert_eq!(dc.gate(0, &ch, 0.0, 0.05), GateOutcome::Allowed);
        assert_relative_eq!(dc.next_allowed(0, 6), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn overlap_collides_both() {
        let cap = CaptureConfig::default();
        let out = resolve_deliveries(&[tx(1, 0.0, 0.05), tx(1, 0.03, 0.05)], &cap);
        assert_eq!(out[0], DeliveryOutcome::Collided);
        assert_eq!(out[1], DeliveryOutcome::Collided);
    }

    #[test]
    fn disjoint_or_cross_channel_delivers() {
        let cap = CaptureConfig::default();
        let out = resolve_deliveries(&[tx(1, 0.0, 0.05), tx(1, 0.06, 0.05)], &cap);
        assert!(out[0].is_delivered() && out[1].is_delivered());
        let out = resolve_deliveries(&[tx(1, 0.0, 0.05), tx(2, 0.01, 0.05)], &cap);
        assert!(out[0].is_delivered() && out[1].is_delivered());
    }

    #[test]
    fn capture_decodes_stronger_frame_with_degraded_snr() {
        let cap = CaptureConfig {
            enabled: true,
            ..Default::default()
        };
        let mut strong = tx(1, 0.0, 0.05);
        strong.snr_db = Some(10.0);
        let mut weak = tx(1, 0.02, 0.05);
        weak.snr_db = Some(2.0);
        let out = resolve_deliveries(&[strong, weak], &cap);
        match out[0] {
            DeliveryOutcome::Delivered {
                snr_db: Some(snr),
                suspected_collision,
            } => {
                assert!(snr < 10.0, "capture must degrade the decoded SNR");
                assert!(suspected_collision, "decoded at {snr} dB, below 7 dB threshold");
            }
            other => panic!("stronger frame should capture, got {other:?}"),
        }
        assert_eq!(out[1], DeliveryOutcome::Collided);
    }

    #[test]
    fn capture_without_margin_loses_both() {
        let cap = CaptureConfig {
            enabled: true,
            ..Default::default()
        };
        let mut a = tx(1, 0.0, 0.05);
        a.snr_db = Some(9.0);
        let mut b = tx(1, 0.02, 0.05);
        b.snr_db = Some(8.0);
        let out = resolve_deliveries(&[a, b], &cap);
        assert_eq!(out[0], DeliveryOutcome::Collided);
        assert_eq!(out[1], DeliveryOutcome::Collided);
    }

    #[test]
    fn default_plan_validates() {
        ChannelPlan::default_plan().validate().unwrap();
    }

    proptest! {
        // Permuting the input never changes any frame's outcome.
        #[test]
        fn resolve_is_permutation_symmetric(
            frames in proptest::collection::vec(
                (1u8..=3, 0.0f64..10.0, 0.01f64..0.2), 2..12),
            seed in 0u64..1000,
        ) {
            let txs: Vec<Transmission> = frames
                .iter()
                .map(|&(ch, start, toa)| tx(ch, start, toa))
                .collect();
            let cap = CaptureConfig::default();
            let base = resolve_deliveries(&txs, &cap);

            // Deterministic shuffle driven by the seed.
            let mut order: Vec<usize> = (0..txs.len()).collect();
            let mut state = seed;
            for i in (1..order.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                order.swap(i, j);
            }
            let shuffled: Vec<Transmission> = order.iter().map(|&i| txs[i].clone()).collect();
            let out = resolve_deliveries(&shuffled, &cap);
            for (pos, &orig_idx) in order.iter().enumerate() {
                prop_assert_eq!(out[pos], base[orig_idx]);
            }
        }

        // Collision (capture off) is exactly interval overlap on equal channels.
        #[test]
        fn collision_is_exactly_overlap(
            frames in proptest::collection::vec(
                (1u8..=2, 0.0f64..5.0, 0.01f64..0.3), 2..10),
        ) {
            let txs: Vec<Transmission> = frames
                .iter()
                .map(|&(ch, start, toa)| tx(ch, start, toa))
                .collect();
            let out = resolve_deliveries(&txs, &CaptureConfig::default());
            for i in 0..txs.len() {
                let any_overlap = (0..txs.len())
                    .filter(|&j| j != i)
                    .any(|j| txs[i].overlaps(&txs[j]));
                prop_assert_eq!(out[i] == DeliveryOutcome::Collided, any_overlap);
            }
        }
    }
}
