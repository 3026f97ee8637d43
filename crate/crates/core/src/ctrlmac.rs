//! The Ctrl-MAC protocol: the request-reply message (RRM) codec, the
//! gateway's per-round contention bookkeeping with first-come-first-served
//! data-slot allocation, the FTR retransmission schedule, and the sensor-node
//! state machine.
//!
//! Protocol timing. A round lasts `k * t_slot` seconds. The gateway
//! broadcasts the RRM for round `r-1` at the start of round `r` on the
//! downlink RRM channel while round `r`'s request slots run concurrently on
//! the uplink request channel. A grant ties a data slot counter `c1` and a
//! data channel counter `c2` to the round in which it is received; the data
//! slot grid starts right after the RRM and slots are `data_slot_s` long.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sim::{EntityId, RngStream};

/// Per-request-slot outcome carried by the RRM.
pub const C0_EMPTY: u8 = 0;
pub const C0_GRANTED: u8 = 1;
pub const C0_COLLIDED: u8 = 2;

/// One request slot entry of an RRM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RrmSlot {
    /// Slot state: 0 empty, 1 granted, 2 collided.
    pub c0: u8,
    /// Granted data slot, 1..=l. Meaningful only when `c0 == 1`.
    pub c1: u16,
    /// Granted data channel, 1..=m_d. Meaningful only when `c0 == 1`.
    pub c2: u8,
}

impl RrmSlot {
    pub fn empty() -> Self {
        Self { c0: C0_EMPTY, c1: 1, c2: 1 }
    }
}

/// A request-reply message: one entry per request slot plus the FTR counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrm {
    pub slots: Vec<RrmSlot>,
    /// Cumulative unresolved contentions; decremented by one per RRM.
    pub ftr: u8,
}

fn bits_for(n: u16) -> u32 {
    // ceil(log2(n)) with a 1-bit floor so degenerate sizes still encode.
    if n <= 1 {
        1
    } else {
        16 - (n - 1).leading_zeros()
    }
}

/// Encoded RRM size in bytes for the given geometry.
pub fn rrm_encoded_len(k: u32, l: u16, m_d: u8) -> usize {
    let per_slot = 2 + bits_for(l) + bits_for(m_d as u16);
    let total_bits = k * per_slot + 8;
    total_bits.div_ceil(8) as usize
}

/// Bit-pack an RRM: per slot `c0` (2 bits), `c1 - 1` (ceil(log2 l) bits),
/// `c2 - 1` (ceil(log2 m_d) bits); then the FTR byte; zero-padded to a byte
/// boundary. Fields are written most-significant-bit first.
pub fn encode_rrm(rrm: &Rrm, k: u32, l: u16, m_d: u8) -> Result<Vec<u8>> {
    if rrm.slots.len() != k as usize {
        return Err(Error::RrmFieldRange(format!(
            "rrm has {} slots, geometry says k={k}",
            rrm.slots.len()
        )));
    }
    let c1_bits = bits_for(l);
    let c2_bits = bits_for(m_d as u16);
    let mut bits: Vec<bool> = Vec::with_capacity(rrm_encoded_len(k, l, m_d) * 8);
    let mut push = |value: u32, width: u32| {
        for i in (0..width).rev() {
            bits.push(value & (1 << i) != 0);
        }
    };
    for (idx, slot) in rrm.slots.iter().enumerate() {
        if slot.c0 > 2 {
            return Err(Error::RrmFieldRange(format!(
                "slot {idx}: c0={} not in 0..=2",
                slot.c0
            )));
        }
        if slot.c1 < 1 || slot.c1 > l {
            return Err(Error::RrmFieldRange(format!(
                "slot {idx}: c1={} not in 1..={l}",
                slot.c1
            )));
        }
        if slot.c2 < 1 || slot.c2 > m_d {
            return Err(Error::RrmFieldRange(format!(
                "slot {idx}: c2={} not in 1..={m_d}",
                slot.c2
            )));
        }
        push(slot.c0 as u32, 2);
        push((slot.c1 - 1) as u32, c1_bits);
        push((slot.c2 - 1) as u32, c2_bits);
    }
    push(rrm.ftr as u32, 8);
    while !bits.len().is_multiple_of(8) {
        bits.push(false);
    }
    let mut out = Vec::with_capacity(bits.len() / 8);
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 1 << (7 - i);
            }
        }
        out.push(byte);
    }
    Ok(out)
}

/// Inverse of [`encode_rrm`]. Errors on truncated buffers or out-of-range
/// fields.
pub fn decode_rrm(bytes: &[u8], k: u32, l: u16, m_d: u8) -> Result<Rrm> {
    let need = rrm_encoded_len(k, l, m_d);
    if bytes.len() < need {
        return Err(Error::RrmTruncated {
            need,
            got: bytes.len(),
        });
    }
    let c1_bits = bits_for(l);
    let c2_bits = bits_for(m_d as u16);
    let mut pos = 0usize;
    let mut take = |width: u32| -> u32 {
        let mut v = 0u32;
        for _ in 0..width {
            let byte = bytes[pos / 8];
            let bit = (byte >> (7 - (pos % 8))) & 1;
            v = (v << 1) | bit as u32;
            pos += 1;
        }
        v
    };
    let mut slots = Vec::with_capacity(k as usize);
    for idx in 0..k {
        let c0 = take(2) as u8;
        let c1 = take(c1_bits) as u16 + 1;
        let c2 = take(c2_bits) as u8 + 1;
        if c0 > 2 {
            return Err(Error::RrmFieldRange(format!("slot {idx}: decoded c0={c0}")));
        }
        slots.push(RrmSlot { c0, c1, c2 });
    }
    let ftr = take(8) as u8;
    Ok(Rrm { slots, ftr })
}

/// Uniform request-slot choice over `1..=k`.
pub fn choose_request_slot(stream: &mut RngStream, k: u32) -> u32 {
    stream.pick_1_to_k(k)
}

/// Number of RRMs a collided node waits before re-requesting:
/// `ftr + r - p`, where `r` is the number of collided slots in the RRM and
/// `p` the position of the node's own slot among them (1-based).
pub fn retransmit_wait_index(ftr: u32, r: u32, p: u32) -> Result<u32> {
    if p < 1 || p > r {
        return Err(Error::RrmFieldRange(format!(
            "slot position p={p} not in 1..=r={r}"
        )));
    }
    if ftr < 1 {
        return Err(Error::RrmFieldRange("ftr must be >= 1 on a collision".into()));
    }
    Ok(ftr + r - p)
}

/// Gateway-side allocation state across rounds.
///
/// Grants are handed out first-come-first-served in slot order. The per
/// channel `busy_until` cursors stop a grant in the current round from
/// overlapping a still-running data slot granted in an earlier round, and no
/// two grants in one round ever share a (data slot, channel) pair.
#[derive(Debug, Clone)]
pub struct GatewaySchedule {
    pub k: u32,
    pub l: u16,
    pub m_d: u8,
    pub data_slot_s: f64,
    pub ftr: u32,
    /// Absolute time until which each data channel (1..=m_d) is booked.
    busy_until: Vec<f64>,
    /// Requests observed in the running round: slot -> requesting nodes.
    round_requests: BTreeMap<u32, Vec<EntityId>>,
    /// Slots where the gateway detected energy it could not decode.
    contended_slots: Vec<u32>,
}

/// A data-slot grant as seen by the gateway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grant {
    pub node: EntityId,
    pub request_slot: u32,
    pub c1: u16,
    pub c2: u8,
    /// Absolute start time of the granted data slot.
    pub slot_start: f64,
}

impl GatewaySchedule {
    pub fn new(k: u32, l: u16, m_d: u8, data_slot_s: f64) -> Self {
        Self {
            k,
            l,
            m_d,
            data_slot_s,
            ftr: 0,
            busy_until: vec![0.0; m_d as usize],
            round_requests: BTreeMap::new(),
            contended_slots: Vec::new(),
        }
    }

    /// Record one cleanly decoded request during the running round.
    pub fn record_request(&mut self, slot: u32, node: EntityId) {
        self.round_requests.entry(slot).or_default().push(node);
    }

    /// Mark a slot contended: energy was detected but nothing decoded
    /// (an on-air collision, or a capture-mode frame below the SNR
    /// threshold that the gateway refuses to trust).
    pub fn record_contention(&mut self, slot: u32) {
        self.contended_slots.push(slot);
    }

    /// Close the running round: build the RRM reporting it, allocate data
    /// slots/channels FCFS, and roll the FTR counter.
    ///
    /// `rrm_time` is when the produced RRM will be broadcast; granted data
    /// slots are placed on the slot grid starting at `rrm_time + rrm_toa`.
    /// Grant exhaustion (no free slot/channel pair left in the window)
    /// reports the slot as contended so the requester retries via the FTR
    /// schedule.
    pub fn close_round(&mut self, rrm_time: f64, rrm_toa: f64) -> (Rrm, Vec<Grant>) {
        let mut slots = vec![RrmSlot::empty(); self.k as usize];
        let mut grants = Vec::new();
        let grid_origin = rrm_time + rrm_toa;

        let mut contended = std::mem::take(&mut self.contended_slots);
        contended.sort_unstable();
        contended.dedup();
        for &slot in &contended {
            slots[(slot - 1) as usize].c0 = C0_COLLIDED;
        }
        let mut new_contentions = contended.len() as u32;

        let requests = std::mem::take(&mut self.round_requests);
        for (slot, nodes) in requests {
            let entry = &mut slots[(slot - 1) as usize];
            if entry.c0 == C0_COLLIDED {
                // Slot already marked contended by undecodable energy.
                continue;
            }
            match nodes.len() {
                0 => {}
                1 => {
                    if let Some((c1, c2, start)) = self.allocate(grid_origin) {
                        entry.c0 = C0_GRANTED;
                        entry.c1 = c1;
                        entry.c2 = c2;
                        grants.push(Grant {
                            node: nodes[0],
                            request_slot: slot,
                            c1,
                            c2,
                            slot_start: start,
                        });
                    } else {
                        // Exhausted: defer by reporting contention.
                        entry.c0 = C0_COLLIDED;
                        new_contentions += 1;
                    }
                }
                _ => {
                    entry.c0 = C0_COLLIDED;
                    new_contentions += 1;
                }
            }
        }

        self.ftr = self.ftr.saturating_sub(1) + new_contentions;
        let rrm = Rrm {
            slots,
            ftr: self.ftr.min(u8::MAX as u32) as u8,
        };
        (rrm, grants)
    }

    /// First free (c1, c2) pair on the slot grid after `grid_origin`,
    /// channel-major so consecutive grants rotate channels (which also keeps
    /// per-node data duty cycles comfortable).
    fn allocate(&mut self, grid_origin: f64) -> Option<(u16, u8, f64)> {
        for c1 in 1..=self.l {
            let start = grid_origin + (c1 as f64 - 1.0) * self.data_slot_s;
            for c2 in 1..=self.m_d {
                if self.busy_until[(c2 - 1) as usize] <= start + 1e-12 {
                    self.busy_until[(c2 - 1) as usize] = start + self.data_slot_s;
                    return Some((c1, c2, start));
                }
            }
        }
        None
    }
}

/// Phases of the sensor-node MAC state machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePhase {
    /// Nothing pending; radio asleep.
    Idle,
    /// Has data, waiting for the next RRM to learn the slot grid.
    Syncing,
    /// Will transmit a request in the chosen slot of the running round.
    Requesting { slot: u32 },
    /// Request sent; outcome arrives with the next RRM.
    AwaitingRrm { slot: u32 },
    /// Collided; counts down RRMs per the FTR schedule.
    Backoff { rrms_left: u32 },
    /// Granted; data goes out in the assigned slot/channel.
    Granted { c1: u16, c2: u8 },
}

/// A sensor sample waiting to be sent. Newer samples overwrite older ones:
/// the node keeps at most one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingSample {
    pub event_id: u64,
    pub value: f64,
    pub generated_at: f64,
    /// Event ids this sample replaced while queued (for loss accounting).
    pub replaced: u32,
}

/// Sensor-node MAC state.
#[derive(Debug, Clone)]
pub struct NodeMacState {
    pub phase: NodePhase,
    pub pending: Option<PendingSample>,
}

/// What the node does in reaction to an RRM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeAction {
    /// Transmit a request in this slot of the round that just opened.
    SendRequest { slot: u32 },
    /// Transmit the pending sample in the granted data slot.
    SendData { c1: u16, c2: u8 },
    /// Stay quiet for this round.
    Wait,
    /// Nothing pending at all.
    Sleep,
}

impl NodeMacState {
    pub fn new() -> Self {
        Self {
            phase: NodePhase::Idle,
            pending: None,
        }
    }

    /// Accept a fresh sample; the freshness rule drops any older pending one.
    pub fn offer_sample(&mut self, sample: PendingSample) -> Option<u64> {
        let replaced = self.pending.map(|p| p.event_id);
        let mut s = sample;
        if let Some(old) = self.pending {
            s.replaced = old.replaced + 1;
        }
        self.pending = Some(s);
        if self.phase == NodePhase::Idle {
            self.phase = NodePhase::Syncing;
        }
        replaced
    }

    /// Step the state machine on an RRM broadcast.
    ///
    /// `rng` drives the uniform slot choice; decoding failures leave the
    /// node syncing for another round.
    pub fn on_rrm(&mut self, rrm: Result<&Rrm>, rng: &mut RngStream, k: u32) -> NodeAction {
        if self.pending.is_none() {
            self.phase = NodePhase::Idle;
            return NodeAction::Sleep;
        }
        let rrm = match rrm {
            Ok(r) => r,
            Err(_) => {
                self.phase = NodePhase::Syncing;
                return NodeAction::Wait;
            }
        };
        match self.phase {
            NodePhase::Idle | NodePhase::Syncing => {
                let slot = choose_request_slot(rng, k);
                self.phase = NodePhase::Requesting { slot };
                NodeAction::SendRequest { slot }
            }
            NodePhase::Requesting { slot } | NodePhase::AwaitingRrm { slot } => {
                // This RRM reports the round we requested in.
                let entry = rrm.slots[(slot - 1) as usize];
                match entry.c0 {
                    C0_GRANTED => {
                        self.phase = NodePhase::Granted {
                            c1: entry.c1,
                            c2: entry.c2,
                        };
                        NodeAction::SendData {
                            c1: entry.c1,
                            c2: entry.c2,
                        }
                    }
                    C0_COLLIDED => {
                        let r = rrm.slots.iter().filter(|s| s.c0 == C0_COLLIDED).count() as u32;
                        let p = rrm.slots[..slot as usize]
                            .iter()
                            .filter(|s| s.c0 == C0_COLLIDED)
                            .count() as u32;
                        let ftr = (rrm.ftr as u32).max(1);
                        let wait = retransmit_wait_index(ftr, r, p).unwrap_or(1);
                        if wait <= 1 {
                            let slot = choose_request_slot(rng, k);
                            self.phase = NodePhase::Requesting { slot };
                            NodeAction::SendRequest { slot }
                        } else {
                            self.phase = NodePhase::Backoff {
                                rrms_left: wait - 1,
                            };
                            NodeAction::Wait
                        }
                    }
                    _ => {
                        // Slot reported empty although we transmitted: the
                        // request frame was lost some other way; re-request.
                        let slot = choose_request_slot(rng, k);
                        self.phase = NodePhase::Requesting { slot };
                        NodeAction::SendRequest { slot }
                    }
                }
            }
            NodePhase::Backoff { rrms_left } => {
                if rrms_left <= 1 {
                    let slot = choose_request_slot(rng, k);
                    self.phase = NodePhase::Requesting { slot };
                    NodeAction::SendRequest { slot }
                } else {
                    self.phase = NodePhase::Backoff {
                        rrms_left: rrms_left - 1,
                    };
                    NodeAction::Wait
                }
            }
            NodePhase::Granted { c1, c2 } => {
                // Still holding a grant (data slot later this round).
                NodeAction::SendData { c1, c2 }
            }
        }
    }

    /// Consume the pending sample at physical send time; by the freshness
    /// rule this is always the newest one.
    pub fn take_for_send(&mut self) -> Option<PendingSample> {
        let s = self.pending.take();
        if self.pending.is_none() {
            self.phase = NodePhase::Idle;
        }
        s
    }
}

impl Default for NodeMacState {
    fn default() -> Self {
        Self::new()
    }
}

/// Split an actuation outbox into frames of at most 111 entries, 2 bytes
/// each (1 address byte + 1 control byte). Values are the quantized control
/// inputs.
pub fn build_actuation_frames(outbox: &BTreeMap<u8, u8>) -> Vec<Vec<u8>> {
    const MAX_PER_FRAME: usize = 111;
    let mut frames = Vec::new();
    let mut current = Vec::new();
    for (&addr, &value) in outbox {
        current.push(addr);
        current.push(value);
        if current.len() >= MAX_PER_FRAME * 2 {
            frames.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        frames.push(current);
    }
    frames
}
