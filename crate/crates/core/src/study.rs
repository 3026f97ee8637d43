//! Study runner: four canonical co-simulation studies comparing the
//! scheduled protocol against the confirmed-ALOHA baseline and the ideal
//! wired loop, each emitted as one CSV table.
//!
//! 1. constant customer demand, 3 DMAs (10 nodes), parameter sweep
//! 2. daily (tri-modal) demand
//! 3. constant demand with a leak fault and recovery, phase-split metrics
//! 4. scale-up to 10 DMAs (32 nodes)

use crate::engine::run_scenario;
use crate::error::{Error, Result};
use crate::metrics::{emit_csv, fmt_sig6};
use crate::plant::DemandProfile;
use crate::scenario::{DmaConfig, Protocol, ScenarioSpec};

/// Overridable study knobs.
#[derive(Debug, Clone, Copy)]
pub struct StudyOverrides {
    pub seed: u64,
    /// Scale run durations down (>0, <=1) for quick smoke runs.
    pub duration_scale: f64,
    pub capture: bool,
}

impl Default for StudyOverrides {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_scale: 1.0,
            capture: false,
        }
    }
}

/// One emitted file: name and CSV bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub filename: String,
    pub csv: String,
}

fn scenario(
    protocol: Protocol,
    dmas: Vec<DmaConfig>,
    demand: DemandProfile,
    duration: f64,
    h: f64,
    sigma: f64,
    ov: &StudyOverrides,
) -> ScenarioSpec {
    let mut spec = ScenarioSpec::minimal(protocol, duration * ov.duration_scale, ov.seed);
    spec.dmas = dmas;
    spec.demand = demand;
    spec.sampling.h_s = h;
    spec.sampling.sigma = sigma;
    spec.sampling.tau_d_s = (0.9 * h).min(4.0);
    spec.capture.enabled = ov.capture;
    spec
}

fn three_dmas() -> Vec<DmaConfig> {
    vec![
        DmaConfig { tanks: 3, tank_params: None },
        DmaConfig { tanks: 3, tank_params: None },
        DmaConfig { tanks: 4, tank_params: None },
    ]
}

fn ten_dmas() -> Vec<DmaConfig> {
    (0..10)
        .map(|i| DmaConfig {
            tanks: if i < 8 { 3 } else { 4 },
            tank_params: None,
        })
        .collect()
}

const HEADER: [&str; 7] = [
    "protocol",
    "h_s",
    "sigma",
    "events_per_min",
    "overshoot_pct",
    "e2e_pdr_pct",
    "e2e_delay_s",
];

fn row(spec: &ScenarioSpec, sigma_label: &str) -> Result<Vec<String>> {
    let out = run_scenario(spec)?;
    let m = out.metrics;
    Ok(vec![
        spec.protocol.label().to_string(),
        fmt_sig6(spec.sampling.h_s),
        sigma_label.to_string(),
        fmt_sig6(m.events_per_minute),
        fmt_sig6(m.overshoot_pct),
        fmt_sig6(m.e2e_pdr_pct),
        fmt_sig6(m.e2e_delay_mean_s),
    ])
}

/// Run one study and return its table(s).
pub fn run_study(study_id: u8, ov: &StudyOverrides) -> Result<Vec<StudyTable>> {
    match study_id {
        1 => study1(ov),
        2 => study2(ov),
        3 => study3(ov),
        4 => study4(ov),
        other => Err(Error::InvalidScenario {
            field: "study_id".into(),
            reason: format!("{other} is not one of 1..=4"),
        }),
    }
}

fn study1(ov: &StudyOverrides) -> Result<Vec<StudyTable>> {
    let demand = DemandProfile::Constant { level_pct: 100.0 };
    let cells: [(f64, f64); 5] = [(1.0, 0.1), (4.5, 0.01), (4.5, 0.1), (4.5, 0.3), (10.0, 0.1)];
    let mut rows = Vec::new();
    for proto in [Protocol::Ctrlmac, Protocol::Lorawanpp] {
        for (h, sigma) in cells {
            let spec = scenario(proto, three_dmas(), demand.clone(), 9000.0, h, sigma, ov);
            rows.push(row(&spec, &fmt_sig6(sigma))?);
        }
    }
    for h in [1.0, 4.5, 10.0] {
        let spec = scenario(Protocol::Wired, three_dmas(), demand.clone(), 9000.0, h, 0.1, ov);
        rows.push(row(&spec, "-")?);
    }
    Ok(vec![StudyTable {
        filename: "study1.csv".into(),
        csv: emit_csv(&HEADER, &rows),
    }])
}

fn study2(ov: &StudyOverrides) -> Result<Vec<StudyTable>> {
    let demand = DemandProfile::Trimodal {
        base_pct: 20.0,
        morning_pct: 45.0,
        midday_pct: 25.0,
        evening_pct: 55.0,
    };
    let mut rows = Vec::new();
    for proto in [Protocol::Ctrlmac, Protocol::Lorawanpp] {
        for sigma in [0.1, 0.3] {
            let spec = scenario(proto, three_dmas(), demand.clone(), 9000.0, 4.5, sigma, ov);
            rows.push(row(&spec, &fmt_sig6(sigma))?);
        }
    }
    let spec = scenario(Protocol::Wired, three_dmas(), demand, 9000.0, 4.5, 0.1, ov);
    rows.push(row(&spec, "-")?);
    Ok(vec![StudyTable {
        filename: "study2.csv".into(),
        csv: emit_csv(&HEADER, &rows),
    }])
}

fn study3(ov: &StudyOverrides) -> Result<Vec<StudyTable>> {
    let duration = 9000.0 * ov.duration_scale;
    let demand = DemandProfile::Fault {
        base: Box::new(DemandProfile::Constant { level_pct: 60.0 }),
        leak_pct: 35.0,
        t_start_s: duration / 3.0,
        t_end_s: duration * 2.0 / 3.0,
    };
    let header = [
        "protocol",
        "h_s",
        "sigma",
        "phase",
        "events_per_min",
        "overshoot_pct",
        "e2e_pdr_pct",
        "e2e_delay_s",
    ];
    let mut rows = Vec::new();
    for proto in [Protocol::Ctrlmac, Protocol::Lorawanpp, Protocol::Wired] {
        let sigmas: &[f64] = if proto == Protocol::Wired { &[0.1] } else { &[0.1, 0.3] };
        for &sigma in sigmas {
            let mut spec =
                scenario(proto, three_dmas(), demand.clone(), 9000.0, 4.5, sigma, ov);
            // The fault windows were placed against the scaled duration.
            spec.demand = demand.clone();
            let out = run_scenario(&spec)?;
            let m = out.metrics;
            for ph in &m.overshoot_phases {
                rows.push(vec![
                    proto.label().to_string(),
                    fmt_sig6(4.5),
                    if proto == Protocol::Wired { "-".into() } else { fmt_sig6(sigma) },
                    ph.label.clone(),
                    fmt_sig6(ph.events_per_minute),
                    fmt_sig6(ph.overshoot_pct),
                    fmt_sig6(m.e2e_pdr_pct),
                    fmt_sig6(m.e2e_delay_mean_s),
                ]);
            }
        }
    }
    Ok(vec![StudyTable {
        filename: "study3.csv".into(),
        csv: emit_csv(&header, &rows),
    }])
}

fn study4(ov: &StudyOverrides) -> Result<Vec<StudyTable>> {
    let demand = DemandProfile::Constant { level_pct: 100.0 };
    let mut rows = Vec::new();
    for proto in [Protocol::Ctrlmac, Protocol::Lorawanpp] {
        for h in [1.0, 4.5] {
            let spec = scenario(proto, ten_dmas(), demand.clone(), 10_000.0, h, 0.1, ov);
            rows.push(row(&spec, &fmt_sig6(0.1))?);
        }
    }
    let spec = scenario(Protocol::Wired, ten_dmas(), demand, 10_000.0, 4.5, 0.1, ov);
    rows.push(row(&spec, "-")?);
    Ok(vec![StudyTable {
        filename: "study4.csv".into(),
        csv: emit_csv(&HEADER, &rows),
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_tables_are_deterministic() {
        let ov = StudyOverrides {
            seed: 9,
            duration_scale: 0.05,
            capture: false,
        };
        let a = run_study(1, &ov).unwrap();
        let b = run_study(1, &ov).unwrap();
        assert_eq!(a, b, "same seed must give byte-identical tables");
        assert!(a[0].csv.starts_with("protocol,h_s,sigma,"));
        assert_eq!(a[0].csv.lines().count(), 1 + 13);
    }

    #[test]
    fn study3_splits_phases() {
        let ov = StudyOverrides {
            seed: 2,
            duration_scale: 0.05,
            capture: false,
        };
        let t = run_study(3, &ov).unwrap();
        let body: Vec<&str> = t[0].csv.lines().skip(1).collect();
        // 2 protocols x 2 sigmas + wired = 5 runs x 3 phases.
        assert_eq!(body.len(), 15);
        assert!(body.iter().any(|l| l.contains(",P2,")));
    }

    #[test]
    fn invalid_study_id_rejected() {
        assert!(run_study(5, &StudyOverrides::default()).is_err());
    }
}
