//! Metric definitions and collection.
//!
//! Per-event lifecycle: generated at the sensor, possibly replaced by a
//! fresher sample before leaving the node, delivered uplink at the gateway,
//! acknowledged back to the sensor, and finally covered by an actuation
//! update arriving at the actuator. The end-to-end delay of an event runs
//! from generation to that actuation arrival, with computation delays taken
//! as zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::EntityId;

/// One sensor event's lifecycle timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub id: u64,
    pub sensor: EntityId,
    pub t_generated: f64,
    /// Delivered at the gateway (clean uplink).
    pub t_uplink: Option<f64>,
    /// Acknowledged to the sensor. For scheduled uplinks the grant system
    /// makes delivery and acknowledgement the same instant.
    pub t_acked: Option<f64>,
    /// Actuation update carrying this event's effect reached the actuator.
    pub t_actuated: Option<f64>,
    /// Overwritten by a newer sample before it could leave the node.
    pub replaced: bool,
    /// Dropped after exhausting retransmission attempts.
    pub dropped: bool,
}

/// Append-only event log filled by the simulation engine.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    records: Vec<EventRecord>,
    next_id: u64,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generate(&mut self, sensor: EntityId, t: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.records.push(EventRecord {
            id,
            sensor,
            t_generated: t,
            t_uplink: None,
            t_acked: None,
            t_actuated: None,
            replaced: false,
            dropped: false,
        });
        id
    }

    fn record_mut(&mut self, id: u64) -> &mut EventRecord {
        &mut self.records[id as usize]
    }

    pub fn mark_replaced(&mut self, id: u64) {
        self.record_mut(id).replaced = true;
    }

    pub fn mark_dropped(&mut self, id: u64) {
        self.record_mut(id).dropped = true;
    }

    pub fn mark_uplink(&mut self, id: u64, t: f64) {
        let r = self.record_mut(id);
        if r.t_uplink.is_none() {
            r.t_uplink = Some(t);
        }
    }

    pub fn mark_acked(&mut self, id: u64, t: f64) {
        let r = self.record_mut(id);
        if r.t_acked.is_none() {
            r.t_acked = Some(t);
        }
    }

    pub fn mark_actuated(&mut self, id: u64, t: f64) {
        let r = self.record_mut(id);
        if r.t_actuated.is_none() {
            r.t_actuated = Some(t);
        }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Overshoot numbers per demand phase (a single phase unless a fault
/// scenario splits the run into no-fault / fault / recovery).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOvershoot {
    pub label: String,
    pub overshoot_pct: f64,
    pub events_per_minute: f64,
}

/// The full metrics record of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub e2e_pdr_pct: f64,
    pub e2e_delay_mean_s: f64,
    pub e2e_delay_max_s: f64,
    /// Events acknowledged over events delivered at actuators, as printed;
    /// can exceed 100 in corner cases, in which case `ul_flagged` is set.
    pub ul_reliability_pct: f64,
    pub ul_flagged: bool,
    pub overshoot_pct: f64,
    pub overshoot_phases: Vec<PhaseOvershoot>,
    /// True when any overshoot exceeds the physical overflow limit.
    pub critical_failure: bool,
    pub events_per_minute: f64,
    pub drops: u64,
    pub per_node_rtt_s: Vec<(EntityId, f64)>,
    /// Set when the log was empty and every ratio was zeroed.
    pub empty_log: bool,
    pub events_generated: u64,
    pub events_actuated: u64,
}

/// Events generated within this many seconds of the end of the run are
/// excluded from the ratios so in-flight traffic does not skew them.
pub const DRAIN_WINDOW_S: f64 = 60.0;

/// Compute the metric set from an event log over `[0, duration]`.
///
/// Ratios follow the printed definitions exactly: E2E PDR is unique
/// actuation updates received over unique events generated; UL reliability
/// is events acknowledged over events delivered at actuators (reported as
/// computed and flagged if above 100).
pub fn compute_metrics(log: &EventLog, duration_s: f64) -> MetricsReport {
    let cutoff = (duration_s - DRAIN_WINDOW_S).max(0.0);
    let horizon_min = if cutoff > 0.0 {
        cutoff / 60.0
    } else {
        duration_s.max(1e-9) / 60.0
    };

    let considered: Vec<&EventRecord> = log
        .records()
        .iter()
        .filter(|r| cutoff == 0.0 || r.t_generated < cutoff)
        .collect();

    if considered.is_empty() {
        return MetricsReport {
            e2e_pdr_pct: 0.0,
            e2e_delay_mean_s: 0.0,
            e2e_delay_max_s: 0.0,
            ul_reliability_pct: 0.0,
            ul_flagged: false,
            overshoot_pct: 0.0,
            overshoot_phases: Vec::new(),
            critical_failure: false,
            events_per_minute: 0.0,
            drops: 0,
            per_node_rtt_s: Vec::new(),
            empty_log: true,
            events_generated: 0,
            events_actuated: 0,
        };
    }

    let generated = considered.len() as u64;
    let actuated = considered.iter().filter(|r| r.t_actuated.is_some()).count() as u64;
    let acked = considered.iter().filter(|r| r.t_acked.is_some()).count() as u64;
    let drops = considered.iter().filter(|r| r.dropped).count() as u64;

    let mut delay_sum = 0.0;
    let mut delay_max = 0.0f64;
    let mut per_node: BTreeMap<EntityId, (f64, u64)> = BTreeMap::new();
    for r in &considered {
        if let Some(t_act) = r.t_actuated {
            let d = t_act - r.t_generated;
            delay_sum += d;
            delay_max = delay_max.max(d);
            let e = per_node.entry(r.sensor).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
        }
    }

    let ul = if actuated > 0 {
        acked as f64 / actuated as f64 * 100.0
    } else {
        0.0
    };

    MetricsReport {
        e2e_pdr_pct: actuated as f64 / generated as f64 * 100.0,
        e2e_delay_mean_s: if actuated > 0 {
            delay_sum / actuated as f64
        } else {
            0.0
        },
        e2e_delay_max_s: delay_max,
        ul_reliability_pct: ul,
        ul_flagged: ul > 100.0,
        overshoot_pct: 0.0,
        overshoot_phases: Vec::new(),
        critical_failure: false,
        events_per_minute: generated as f64 / horizon_min,
        drops,
        per_node_rtt_s: per_node
            .into_iter()
            .map(|(n, (sum, cnt))| (n, sum / cnt as f64))
            .collect(),
        empty_log: false,
        events_generated: generated,
        events_actuated: actuated,
    }
}

/// Format a value to six significant digits, deterministically.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        // Runs abort on divergence before emission, but stay total anyway.
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// Render rows as CSV with a stable column order. Emitting the same table
/// twice yields identical bytes; an empty table is just the header line.
pub fn emit_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
