//! Scenario configuration: the JSON document that fully describes one
//! experiment, its validation, and the defaults. A machine-readable schema
//! ships in `docs/scenario.schema.json`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::{CaptureConfig, ChannelPlan};
use crate::plant::{DemandProfile, DesignParams, SubsystemModel, TankParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Ctrlmac,
    Lorawan,
    Lorawanpp,
    /// Zero-delay, zero-loss periodic baseline.
    Wired,
}

impl Protocol {
    pub fn label(&self) -> &'static str {
        match self {
            Protocol::Ctrlmac => "ctrlmac",
            Protocol::Lorawan => "lorawan",
            Protocol::Lorawanpp => "lorawanpp",
            Protocol::Wired => "wired",
        }
    }
}

/// Sampling and trigger parameters shared by every subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub h_s: f64,
    pub sigma: f64,
    pub rho: f64,
    pub tau_d_s: f64,
    /// Offset each subsystem's sampling grid by a random phase in [0, h).
    pub stagger_phases: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            h_s: 4.5,
            sigma: 0.1,
            rho: 0.001,
            tau_d_s: 4.0,
            stagger_phases: false,
        }
    }
}

/// One DMA: tank count plus optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmaConfig {
    pub tanks: usize,
    #[serde(default)]
    pub tank_params: Option<TankParams>,
}

/// Synthetic traffic for protocol benchmarks (no plants, no triggers; every
/// arrival is an event carrying a dummy sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub nodes: usize,
    pub pattern: TrafficPattern,
    pub interval_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficPattern {
    Periodic,
    Exponential,
}

/// Random fluctuation around the demand profile: an Ornstein-Uhlenbeck
/// component plus compound-Poisson bursts (discrete customer draws opening
/// for a while). This is what keeps the event trigger alive in steady state
/// and what loads the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub enabled: bool,
    /// Stationary RMS of the diffusive component, percent of full demand.
    pub rms_pct: f64,
    /// Correlation time of the diffusive component (s).
    pub corr_s: f64,
    /// Update period (s).
    pub update_s: f64,
    /// Burst starts per tank per minute.
    pub burst_rate_per_min: f64,
    /// Burst magnitude bounds, percent of full demand.
    pub burst_mag_pct: [f64; 2],
    /// Burst duration bounds (s).
    pub burst_dur_s: [f64; 2],
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rms_pct: 4.0,
            corr_s: 2.0,
            update_s: 1.0,
            burst_rate_per_min: 2.0,
            burst_mag_pct: [20.0, 80.0],
            burst_dur_s: [5.0, 25.0],
        }
    }
}

impl JitterConfig {
    /// Stationary mean of the burst component, as a demand fraction.
    ///
    /// Bursts arrive Poisson and overwrite each other; the one most recently
    /// started is active while younger than its duration. With arrival rate
    /// `lam` and uniform durations on [a, b], the active probability is
    /// `1 - (e^{-lam a} - e^{-lam b}) / (lam (b - a))`. The proportional
    /// controller cannot remove a demand bias, so the linearization point
    /// must absorb this mean.
    pub fn stationary_mean_fraction(&self) -> f64 {
        if !self.enabled || self.burst_rate_per_min <= 0.0 {
            return 0.0;
        }
        let lam = self.burst_rate_per_min / 60.0;
        let [a, b] = self.burst_dur_s;
        let p_active = if (b - a).abs() < 1e-12 {
            1.0 - (-lam * a).exp()
        } else {
            1.0 - ((-lam * a).exp() - (-lam * b).exp()) / (lam * (b - a))
        };
        let mean_mag = (self.burst_mag_pct[0] + self.burst_mag_pct[1]) / 2.0 / 100.0;
        p_active * mean_mag
    }
}

/// MAC-layer protocol constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    /// Request slots per round.
    pub k: u32,
    /// Request slot duration (s).
    pub t_slot_s: f64,
    /// Data slots per round window.
    pub data_slots: u16,
    /// Guard fraction added to the data-slot airtime.
    pub guard_frac: f64,
    /// Confirmed-uplink acknowledgement timeout (s).
    pub ack_timeout_s: f64,
    /// Uniform retry backoff bounds (s).
    pub backoff_s: [f64; 2],
    /// Attempts before a confirmed uplink is dropped.
    pub max_attempts: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            k: 5,
            t_slot_s: 0.1,
            data_slots: 16,
            guard_frac: 0.1,
            ack_timeout_s: 1.0,
            backoff_s: [0.5, 1.5],
            max_attempts: 8,
        }
    }
}

/// Frame sizes in bytes. The scheduled-uplink data frame is lean; the
/// ALOHA-stack frames carry `lorawan_overhead_bytes` of header on top of
/// the application payload, calibrated so a contention-free sensor-to-
/// actuator round trip sums to 0.15 s of airtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameProfile {
    /// Application payload of one sensor reading.
    pub sensor_payload_bytes: usize,
    /// Total scheduled data frame (payload plus lean header).
    pub ctrlmac_data_bytes: usize,
    /// Transmission request frame (node id).
    pub request_bytes: usize,
    /// Acknowledgement frame.
    pub ack_bytes: usize,
    /// Header overhead on ALOHA-stack uplink and actuation frames.
    pub lorawan_overhead_bytes: usize,
    /// Bytes per actuator entry in actuation frames (address + value).
    pub bytes_per_actuator: usize,
}

impl Default for FrameProfile {
    fn default() -> Self {
        Self {
            sensor_payload_bytes: 8,
            ctrlmac_data_bytes: 12,
            request_bytes: 2,
            ack_bytes: 32,
            lorawan_overhead_bytes: 30,
            bytes_per_actuator: 2,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub protocol: Protocol,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_dmas")]
    pub dmas: Vec<DmaConfig>,
    #[serde(default)]
    pub traffic: Option<TrafficConfig>,
    #[serde(default = "ChannelPlan::default_plan")]
    pub channel_plan: ChannelPlan,
    #[serde(default = "default_demand")]
    pub demand: DemandProfile,
    #[serde(default)]
    pub demand_jitter: JitterConfig,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub frames: FrameProfile,
    #[serde(default)]
    pub capture: CaptureConfig,
    /// Optional node coordinates (meters, gateway at the origin) feeding the
    /// log-distance SNR term in capture mode.
    #[serde(default)]
    pub placement: Option<Vec<[f64; 2]>>,
    /// Initial tank level (m); the startup transient rises from here to the
    /// reference.
    #[serde(default = "default_initial_level")]
    pub initial_level_m: f64,
    /// Reference level / tank geometry and control design shared by DMAs.
    #[serde(default)]
    pub design: DesignOverrides,
}

fn default_dmas() -> Vec<DmaConfig> {
    vec![
        DmaConfig { tanks: 3, tank_params: None },
        DmaConfig { tanks: 3, tank_params: None },
        DmaConfig { tanks: 4, tank_params: None },
    ]
}

fn default_demand() -> DemandProfile {
    DemandProfile::Constant { level_pct: 100.0 }
}

fn default_initial_level() -> f64 {
    2.4
}

/// Plant design knobs that are usually left at their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignOverrides {
    pub ref_level_m: f64,
    pub tank_height_m: f64,
    pub lq_weight_ratio: f64,
}

impl Default for DesignOverrides {
    fn default() -> Self {
        let d = DesignParams::default();
        Self {
            ref_level_m: d.ref_level,
            tank_height_m: d.tank_height,
            lq_weight_ratio: d.lq_weight_ratio,
        }
    }
}

impl ScenarioSpec {
    /// Minimal scenario with every default filled in.
    pub fn minimal(protocol: Protocol, duration_s: f64, seed: u64) -> Self {
        Self {
            protocol,
            duration_s,
            seed,
            sampling: SamplingConfig::default(),
            dmas: default_dmas(),
            traffic: None,
            channel_plan: ChannelPlan::default_plan(),
            demand: default_demand(),
            demand_jitter: JitterConfig::default(),
            mac: MacConfig::default(),
            frames: FrameProfile::default(),
            capture: CaptureConfig::default(),
            placement: None,
            initial_level_m: default_initial_level(),
            design: DesignOverrides::default(),
        }
    }

    /// Pure MAC benchmark: `nodes` sensors offering synthetic traffic,
    /// no plants in the loop.
    pub fn traffic_benchmark(
        protocol: Protocol,
        nodes: usize,
        pattern: TrafficPattern,
        interval_s: f64,
        duration_s: f64,
        seed: u64,
    ) -> Self {
        let mut spec = Self::minimal(protocol, duration_s, seed);
        spec.dmas = Vec::new();
        spec.traffic = Some(TrafficConfig {
            nodes,
            pattern,
            interval_s,
        });
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: String| Error::InvalidScenario {
            field: field.to_string(),
            reason,
        };
        if !(self.duration_s >= 0.0) {
            return Err(err("duration_s", "must be non-negative".into()));
        }
        if !(self.sampling.h_s > 0.0) {
            return Err(err("sampling.h_s", "must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sampling.sigma) {
            return Err(err(
                "sampling.sigma",
                format!("{} not in [0, 1)", self.sampling.sigma),
            ));
        }
        if self.sampling.tau_d_s < 0.0 || self.sampling.tau_d_s >= self.sampling.h_s {
            return Err(err(
                "sampling.tau_d_s",
                format!(
                    "{} not in [0, h = {})",
                    self.sampling.tau_d_s, self.sampling.h_s
                ),
            ));
        }
        if self.sampling.rho < 0.0 {
            return Err(err("sampling.rho", "must be non-negative".into()));
        }
        self.channel_plan.validate()?;
        self.demand.validate()?;
        if self.mac.k < 1 {
            return Err(err("mac.k", "need at least one request slot".into()));
        }
        if !(self.mac.t_slot_s > 0.0) {
            return Err(err("mac.t_slot_s", "must be positive".into()));
        }
        if self.mac.backoff_s[1] < self.mac.backoff_s[0] || self.mac.backoff_s[0] < 0.0 {
            return Err(err("mac.backoff_s", "bounds must be ordered and non-negative".into()));
        }
        if self.mac.max_attempts == 0 {
            return Err(err("mac.max_attempts", "must be at least 1".into()));
        }
        if self.dmas.is_empty() && self.traffic.is_none() {
            return Err(err(
                "dmas",
                "need at least one subsystem or a traffic benchmark".into(),
            ));
        }
        for (i, dma) in self.dmas.iter().enumerate() {
            if !(dma.tanks == 3 || dma.tanks == 4) {
                return Err(err(
                    &format!("dmas[{i}].tanks"),
                    format!("a DMA has 3 or 4 tanks, got {}", dma.tanks),
                ));
            }
        }
        if let Some(t) = &self.traffic {
            if t.nodes == 0 {
                return Err(err("traffic.nodes", "must be positive".into()));
            }
            if !(t.interval_s > 0.0) {
                return Err(err("traffic.interval_s", "must be positive".into()));
            }
        }
        if let Some(p) = &self.placement {
            let needed = self.n_sensor_nodes();
            if p.len() != needed {
                return Err(err(
                    "placement",
                    format!("{} coordinates for {} nodes", p.len(), needed),
                ));
            }
        }
        if !(self.initial_level_m >= 0.0 && self.initial_level_m <= self.design.tank_height_m) {
            return Err(err(
                "initial_level_m",
                format!(
                    "{} outside [0, tank height {}]",
                    self.initial_level_m, self.design.tank_height_m
                ),
            ));
        }
        if self.demand_jitter.rms_pct < 0.0 || self.demand_jitter.corr_s <= 0.0 {
            return Err(err("demand_jitter", "rms must be >= 0 and corr_s > 0".into()));
        }
        if self.demand_jitter.burst_rate_per_min < 0.0
            || self.demand_jitter.burst_mag_pct[0] > self.demand_jitter.burst_mag_pct[1]
            || self.demand_jitter.burst_dur_s[0] > self.demand_jitter.burst_dur_s[1]
            || self.demand_jitter.burst_dur_s[0] <= 0.0
        {
            return Err(err("demand_jitter", "burst parameters out of order".into()));
        }
        Ok(())
    }

    /// Linearization-point demand: profile mean plus the stationary mean
    /// of the burst jitter.
    pub fn nominal_demand_fraction(&self) -> f64 {
        (crate::plant::mean_demand(&self.demand, self.duration_s) / 100.0
            + self.demand_jitter.stationary_mean_fraction())
        .min(1.0)
    }

    pub fn n_sensor_nodes(&self) -> usize {
        if let Some(t) = &self.traffic {
            t.nodes
        } else {
            self.dmas.iter().map(|d| d.tanks).sum()
        }
    }

    /// Instantiate the plant models for every DMA.
    pub fn build_plants(&self) -> Result<Vec<SubsystemModel>> {
        let design = DesignParams {
            h: self.sampling.h_s,
            sigma: self.sampling.sigma,
            rho: self.sampling.rho,
            tau_d: self.sampling.tau_d_s,
            ref_level: self.design.ref_level_m,
            tank_height: self.design.tank_height_m,
            lq_weight_ratio: self.design.lq_weight_ratio,
            nominal_demand: self.nominal_demand_fraction(),
        };
        self.dmas
            .iter()
            .map(|dma| {
                let params = vec![dma.tank_params.unwrap_or_default(); dma.tanks];
                crate::plant::build_dma_plant(dma.tanks, &params, &design)
            })
            .collect()
    }
}

/// Parse and validate a scenario from JSON text. Unknown fields are
/// rejected so typos surface instead of silently using defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let mut de = serde_json::Deserializer::from_str(text);
    let spec: ScenarioSpec = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::InvalidScenario {
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
    spec.validate()?;
    Ok(spec)
}
