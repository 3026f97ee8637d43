//! Water-DMA plant models and the DPETC machinery: linearized tank-level
//! dynamics, a slow linear-quadratic feedback design, exact zero-order-hold
//! integration, the quadratic event trigger, the held-state update rule, and
//! demand profiles with fault injection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigen_real_parts, is_hurwitz, zoh_pair};

/// A linearized DMA: diagonal tank dynamics plus the designed feedback gain
/// and the sampling/trigger parameters that drive it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    /// n x n state matrix, diagonal with entries `-a_j` (1/s).
    pub a: DMatrix<f64>,
    /// n x m input matrix, diagonal valve gains `beta_j` (m/s per unit valve).
    pub b: DMatrix<f64>,
    /// m x n feedback gain.
    pub k: DMatrix<f64>,
    /// Sampling period (s).
    pub h: f64,
    /// Event-trigger parameter in [0, 1).
    pub sigma: f64,
    /// Required convergence rate (1/s).
    pub rho: f64,
    /// Maximum allowable transmission delay (s), < h.
    pub tau_d: f64,
    /// Reference water levels (m).
    pub ref_levels: DVector<f64>,
    /// Tank heights (m); levels above this overflow.
    pub tank_height: f64,
    /// Demand gain: level rate (m/s) pulled by a full-open out-valve.
    pub demand_gain: DVector<f64>,
    /// Operating-point in-valve opening (fraction of full).
    pub nominal_valve: DVector<f64>,
    /// Nominal demand fraction the operating point balances.
    pub nominal_demand: f64,
}

impl SubsystemModel {
    pub fn n_tanks(&self) -> usize {
        self.a.nrows()
    }

    /// Closed-loop matrix `A + B K`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }
}

/// Physical per-tank parameters fed to the model builder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    /// Linearized demand-outflow sensitivity a_j (1/s).
    pub outflow_sensitivity: f64,
    /// Valve gain beta_j (m/s at full opening).
    pub valve_gain: f64,
    /// Demand gain gamma_j (m/s at full demand).
    pub demand_gain: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        // Slow dynamics: the saturated startup ramp plus the small-signal
        // tail settle on the order of thousands of seconds.
        Self {
            outflow_sensitivity: 5.0e-4,
            valve_gain: 4.0e-3,
            demand_gain: 2.0e-3,
        }
    }
}

/// Build-time knobs beyond the per-tank constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub h: f64,
    pub sigma: f64,
    pub rho: f64,
    pub tau_d: f64,
    pub ref_level: f64,
    pub tank_height: f64,
    /// State-to-input weight ratio q/r of the LQ design; small values give
    /// the slow response wanted here.
    pub lq_weight_ratio: f64,
    pub nominal_demand: f64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            h: 4.5,
            sigma: 0.1,
            rho: 0.001,
            tau_d: 4.0,
            ref_level: 3.0,
            tank_height: 4.5,
            lq_weight_ratio: 1.5,
            nominal_demand: 1.0,
        }
    }
}

/// Build a DMA model with `n_tanks` tanks.
///
/// The per-tank feedback gain comes from the scalar LQ (Riccati) design:
/// with `x' = -a x + b u`, cost weights q on the state and r on the input,
/// the optimal gain is `k = -(sqrt(a^2 + b^2 q/r) - a)/b`, placing the
/// closed-loop pole at `-sqrt(a^2 + b^2 q/r)`. The default weight ratio
/// puts that pole near -1e-3 1/s.
pub fn build_dma_plant(
    n_tanks: usize,
    tanks: &[TankParams],
    design: &DesignParams,
) -> Result<SubsystemModel> {
    if !(n_tanks == 3 || n_tanks == 4) {
        return Err(Error::PlantModel(format!(
            "a DMA has 3 or 4 tanks, got {n_tanks}"
        )));
    }
    if tanks.len() != n_tanks {
        return Err(Error::PlantModel(format!(
            "expected {n_tanks} tank parameter sets, got {}",
            tanks.len()
        )));
    }
    if !(0.0..1.0).contains(&design.sigma) {
        return Err(Error::PlantModel(format!(
            "sigma {} not in [0, 1)",
            design.sigma
        )));
    }
    if !(design.h > 0.0) {
        return Err(Error::PlantModel("sampling period must be positive".into()));
    }
    if design.tau_d < 0.0 || design.tau_d >= design.h {
        return Err(Error::PlantModel(format!(
            "tau_d {} not in [0, h={})",
            design.tau_d, design.h
        )));
    }

    let mut a_diag = Vec::with_capacity(n_tanks);
    let mut b_diag = Vec::with_capacity(n_tanks);
    let mut k_diag = Vec::with_capacity(n_tanks);
    let mut gamma = Vec::with_capacity(n_tanks);
    for (j, t) in tanks.iter().enumerate() {
        if t.outflow_sensitivity < 0.0 {
            return Err(Error::PlantModel(format!(
                "tank {j}: outflow sensitivity must be non-negative"
            )));
        }
        if t.valve_gain <= 0.0 {
            return Err(Error::PlantModel(format!(
                "tank {j}: valve gain must be positive (zero makes the tank uncontrollable)"
            )));
        }
        let a = t.outflow_sensitivity;
        let b = t.valve_gain;
        let k = -((a * a + b * b * design.lq_weight_ratio).sqrt() - a) / b;
        a_diag.push(-a);
        b_diag.push(b);
        k_diag.push(k);
        gamma.push(t.demand_gain);
    }

    let a = DMatrix::from_diagonal(&DVector::from_vec(a_diag));
    let b = DMatrix::from_diagonal(&DVector::from_vec(b_diag));
    let k = DMatrix::from_diagonal(&DVector::from_vec(k_diag));

    let closed = &a + &b * &k;
    if !is_hurwitz(&closed) {
        return Err(Error::PlantModel(format!(
            "closed loop is not Hurwitz; eigenvalue real parts {:?}",
            eigen_real_parts(&closed)
        )));
    }

    let demand_gain = DVector::from_vec(gamma);
    // Valve opening that balances the nominal demand: beta * u = gamma * d.
    let nominal_valve = DVector::from_iterator(
        n_tanks,
        (0..n_tanks).map(|j| demand_gain[j] * design.nominal_demand / b[(j, j)]),
    );
    for (j, u) in nominal_valve.iter().enumerate() {
        if !(0.0..=1.0).contains(u) {
            return Err(Error::PlantModel(format!(
                "tank {j}: operating point valve {u:.3} outside [0, 1]"
            )));
        }
    }

    Ok(SubsystemModel {
        a,
        b,
        k,
        h: design.h,
        sigma: design.sigma,
        rho: design.rho,
        tau_d: design.tau_d,
        ref_levels: DVector::from_element(n_tanks, design.ref_level),
        tank_height: design.tank_height,
        demand_gain,
        nominal_valve,
        nominal_demand: design.nominal_demand,
    })
}

/// Continuous plant state in deviation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Level deviations from reference (m).
    pub xi: DVector<f64>,
    /// Controller-side held estimate of `xi`.
    pub xi_hat: DVector<f64>,
    /// Applied valve deviations from the operating point.
    pub v: DVector<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn new(n: usize, initial_xi: &DVector<f64>) -> Self {
        Self {
            xi: initial_xi.clone(),
            xi_hat: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0.0,
        }
    }
}

/// Exact LTI zero-order-hold step:
/// `xi+ = e^{A dt} xi + (∫_0^dt e^{A s} ds) (B v + w)`.
///
/// `disturbance` is the demand term already mapped into level rate (m/s).
/// Errors if the state leaves the finite range.
pub fn integrate_step(
    model: &SubsystemModel,
    state: &PlantState,
    disturbance: &DVector<f64>,
    dt: f64,
) -> Result<PlantState> {
    assert!(dt > 0.0, "integration step must be positive");
    let (ead, phi) = zoh_pair(&model.a, dt);
    let forcing = &model.b * &state.v + disturbance;
    let xi = &ead * &state.xi + &phi * forcing;
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::PlantDiverged {
            subsystem: 0,
            t: state.t + dt,
        });
    }
    Ok(PlantState {
        xi,
        xi_hat: state.xi_hat.clone(),
        v: state.v.clone(),
        t: state.t + dt,
    })
}

/// Pre-computed ZOH matrices for a fixed step, for the hot loop.
#[derive(Debug, Clone)]
pub struct ZohStep {
    pub ead: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub dt: f64,
}

impl ZohStep {
    pub fn new(model: &SubsystemModel, dt: f64) -> Self {
        let (ead, phi) = zoh_pair(&model.a, dt);
        Self { ead, phi, dt }
    }

    pub fn advance(
        &self,
        model: &SubsystemModel,
        xi: &DVector<f64>,
        v: &DVector<f64>,
        disturbance: &DVector<f64>,
    ) -> DVector<f64> {
        &self.ead * xi + &self.phi * (&model.b * v + disturbance)
    }
}

/// Quadratic event trigger for one component:
/// fires iff `|xi_hat_j - xi_j| - sigma * |xi_j| > 0`.
pub fn event_check(xi_j: f64, xi_hat_j: f64, sigma: f64) -> bool {
    (xi_hat_j - xi_j).abs() - sigma * xi_j.abs() > 0.0
}

/// Componentwise held-state update: transmitted components are replaced by
/// the sampled values, the rest stay.
pub fn holder_update(
    xi_hat: &DVector<f64>,
    xi_sampled: &DVector<f64>,
    flags: &[bool],
) -> DVector<f64> {
    assert_eq!(xi_hat.len(), xi_sampled.len());
    assert_eq!(xi_hat.len(), flags.len());
    DVector::from_iterator(
        xi_hat.len(),
        flags
            .iter()
            .enumerate()
            .map(|(j, &f)| if f { xi_sampled[j] } else { xi_hat[j] }),
    )
}

/// Raw feedback input `v = K xi_hat` (deviation coordinates, pre-clamp).
pub fn feedback_input(k: &DMatrix<f64>, xi_hat: &DVector<f64>) -> Result<DVector<f64>> {
    if k.ncols() != xi_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "K is {}x{}, xi_hat has {} entries",
            k.nrows(),
            k.ncols(),
            xi_hat.len()
        )));
    }
    Ok(k * xi_hat)
}

/// Clamp a physical valve opening to its range.
pub fn clamp_valve(u: f64) -> f64 {
    u.clamp(0.0, 1.0)
}

/// Customer demand profile in percent of full out-valve opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandProfile {
    Constant {
        level_pct: f64,
    },
    /// Daily curve: three smooth bumps over a base, peaks in the morning and
    /// evening (evening highest), trough at night.
    Trimodal {
        base_pct: f64,
        morning_pct: f64,
        midday_pct: f64,
        evening_pct: f64,
    },
    /// Base profile plus a leak adding demand during `[t_start, t_end)`.
    Fault {
        base: Box<DemandProfile>,
        leak_pct: f64,
        t_start_s: f64,
        t_end_s: f64,
    },
}

impl DemandProfile {
    pub fn validate(&self) -> Result<()> {
        let check = |v: f64, field: &str| {
            if !(0.0..=100.0).contains(&v) {
                Err(Error::InvalidScenario {
                    field: format!("demand.{field}"),
                    reason: format!("{v} not in [0, 100] percent"),
                })
            } else {
                Ok(())
            }
        };
        match self {
            DemandProfile::Constant { level_pct } => check(*level_pct, "level_pct"),
            DemandProfile::Trimodal {
                base_pct,
                morning_pct,
                midday_pct,
                evening_pct,
            } => {
                check(*base_pct, "base_pct")?;
                check(*morning_pct, "morning_pct")?;
                check(*midday_pct, "midday_pct")?;
                check(*evening_pct, "evening_pct")
            }
            DemandProfile::Fault { base, leak_pct, .. } => {
                check(*leak_pct, "leak_pct")?;
                base.validate()
            }
        }
    }
}

const DAY_SECONDS: f64 = 86_400.0;

/// Demand at time `t`, as a valve-opening percentage clamped to [0, 100].
pub fn demand_at(profile: &DemandProfile, t: f64) -> f64 {
    assert!(t >= 0.0);
    let raw = match profile {
        DemandProfile::Constant { level_pct } => *level_pct,
        DemandProfile::Trimodal {
            base_pct,
            morning_pct,
            midday_pct,
            evening_pct,
        } => {
            let hour = (t % DAY_SECONDS) / 3600.0;
            let bump = |center: f64, width: f64| {
                let mut d = (hour - center).abs();
                d = d.min(24.0 - d);
                (-0.5 * (d / width).powi(2)).exp()
            };
            base_pct
                + morning_pct * bump(8.0, 1.6)
                + midday_pct * bump(13.0, 2.2)
                + evening_pct * bump(19.5, 2.0)
        }
        DemandProfile::Fault {
            base,
            leak_pct,
            t_start_s,
            t_end_s,
        } => {
            let mut d = demand_at(base, t);
            if (*t_start_s..*t_end_s).contains(&t) {
                d += leak_pct;
            }
            d
        }
    };
    raw.clamp(0.0, 100.0)
}

/// Mean demand over one day, used as the linearization point for
/// time-varying profiles.
pub fn mean_demand(profile: &DemandProfile, duration_s: f64) -> f64 {
    let horizon = duration_s.clamp(1.0, DAY_SECONDS);
    let steps = 1440;
    let dt = horizon / steps as f64;
    let sum: f64 = (0..steps)
        .map(|i| demand_at(profile, (i as f64 + 0.5) * dt))
        .sum();
    sum / steps as f64
}

/// Peak excursion above the reference as a percentage of it:
/// `max(level - ref, 0) / ref * 100` over the trace.
pub fn overshoot_pct(level_trace: &[f64], reference: f64) -> Result<f64> {
    if level_trace.is_empty() {
        return Err(Error::PlantModel("overshoot of an empty trace".into()));
    }
    assert!(reference > 0.0);
    let peak = level_trace
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l - reference));
    Ok(peak / reference * 100.0)
}

/// Overshoot above which a 4.5 m tank with a 3 m reference physically
/// overflows; flagged as critical failure in reports.
pub const CRITICAL_OVERSHOOT_PCT: f64 = 50.0;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_model(n: usize) -> SubsystemModel {
        build_dma_plant(
            n,
            &vec![TankParams::default(); n],
            &DesignParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn build_produces_hurwitz_closed_loop() {
        let m = default_model(3);
        assert!(is_hurwitz(&m.closed_loop()));
        // Diagonal A with -a entries.
        assert!(m.a[(0, 0)] < 0.0);
        assert_eq!(m.a[(0, 1)], 0.0);
    }

    #[test]
    fn integrator_tank_is_stabilized() {
        // a_j = 0 (pure integrator): closed loop is beta * k < 0.
        let t = TankParams {
            outflow_sensitivity: 0.0,
            ..Default::default()
        };
        let m = build_dma_plant(3, &[t; 3], &DesignParams::default()).unwrap();
        assert!(is_hurwitz(&m.closed_loop()));
    }

    #[test]
    fn zero_valve_gain_is_uncontrollable() {
        let mut tanks = [TankParams::default(); 3];
        tanks[1].valve_gain = 0.0;
        let err = build_dma_plant(3, &tanks, &DesignParams::default()).unwrap_err();
        assert!(err.to_string().contains("uncontrollable"));
    }

    #[test]
    fn rejects_bad_design_params() {
        let tanks = [TankParams::default(); 3];
        let d = DesignParams {
            sigma: 1.0,
            ..Default::default()
        };
        assert!(build_dma_plant(3, &tanks, &d).is_err());
        let base = DesignParams::default();
        let d = DesignParams {
            tau_d: base.h,
            ..base
        };
        assert!(build_dma_plant(3, &tanks, &d).is_err());
        assert!(build_dma_plant(5, &[TankParams::default(); 5], &DesignParams::default()).is_err());
    }

    #[test]
    fn integrate_pure_integrator() {
        // A = 0, B = I, v = 1, w = 0, dt = 1 -> xi+ = xi + 1.
        let mut m = default_model(3);
        m.a = DMatrix::zeros(3, 3);
        m.b = DMatrix::identity(3, 3);
        let mut s = PlantState::new(3, &DVector::from_element(3, 0.5));
        s.v = DVector::from_element(3, 1.0);
        let next = integrate_step(&m, &s, &DVector::zeros(3), 1.0).unwrap();
        for j in 0..3 {
            assert_relative_eq!(next.xi[j], 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn integrate_scalar_exponential() {
        let mut m = default_model(3);
        m.a = DMatrix::from_diagonal(&DVector::from_element(3, -0.5));
        let s = PlantState::new(3, &DVector::from_element(3, 2.0));
        let next = integrate_step(&m, &s, &DVector::zeros(3), 1.0).unwrap();
        assert_relative_eq!(next.xi[0], 2.0 * (-0.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn integrate_equilibrium_stays_zero() {
        let m = default_model(3);
        let s = PlantState::new(3, &DVector::zeros(3));
        let next = integrate_step(&m, &s, &DVector::zeros(3), 10.0).unwrap();
        assert!(next.xi.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn integrate_matches_rk4_oracle() {
        // Fine-step RK4 on random stable diagonal-plus-noise systems.
        let mut rng = crate::sim::RngStream::new(99, 0);
        for _ in 0..10 {
            let n = 3;
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = if i == j {
                        -rng.uniform(0.2, 1.0)
                    } else {
                        rng.uniform(-0.05, 0.05)
                    };
                }
            }
            let mut m = default_model(3);
            m.a = a.clone();
            m.b = DMatrix::identity(n, n);
            let xi0 = DVector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0));
            let v = DVector::from_fn(n, |_, _| rng.uniform(-0.5, 0.5));
            let w = DVector::from_fn(n, |_, _| rng.uniform(-0.1, 0.1));
            let mut s = PlantState::new(n, &xi0);
            s.v = v.clone();
            let dt = 1.0;
            let exact = integrate_step(&m, &s, &w, dt).unwrap();

            // RK4 oracle with 10_000 substeps.
            let f = |x: &DVector<f64>| &a * x + &v + &w;
            let mut x = xi0.clone();
            let hh = dt / 10_000.0;
            for _ in 0..10_000 {
                let k1 = f(&x);
                let k2 = f(&(&x + &k1 * (hh / 2.0)));
                let k3 = f(&(&x + &k2 * (hh / 2.0)));
                let k4 = f(&(&x + &k3 * hh));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hh / 6.0);
            }
            for j in 0..n {
                assert_relative_eq!(exact.xi[j], x[j], max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn event_check_cases() {
        assert!(!event_check(3.0, 3.0, 0.1));
        assert!(event_check(3.0, 3.4, 0.1)); // 0.4 > 0.3
        assert!(event_check(0.0, 0.001, 0.9)); // any error at zero state
    }

    #[test]
    fn holder_update_mixes_components() {
        let hat = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let sampled = DVector::from_vec(vec![10.0, 20.0, 30.0]);
        assert_eq!(
            holder_update(&hat, &sampled, &[false, false, false]),
            hat
        );
        assert_eq!(
            holder_update(&hat, &sampled, &[true, true, true]),
            sampled
        );
        let mixed = holder_update(&hat, &sampled, &[true, false, true]);
        assert_eq!(mixed, DVector::from_vec(vec![10.0, 2.0, 30.0]));
    }

    #[test]
    fn feedback_and_clamp() {
        let k = DMatrix::from_diagonal(&DVector::from_element(2, -1.0));
        let v = feedback_input(&k, &DVector::zeros(2)).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        let v = feedback_input(&k, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(v, DVector::from_vec(vec![-1.0, 1.0]));
        assert_eq!(clamp_valve(1.7), 1.0);
        assert_eq!(clamp_valve(-0.3), 0.0);
        assert!(feedback_input(&k, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn demand_profiles() {
        let c = DemandProfile::Constant { level_pct: 100.0 };
        assert_eq!(demand_at(&c, 0.0), 100.0);
        assert_eq!(demand_at(&c, 12345.0), 100.0);

        let tri = DemandProfile::Trimodal {
            base_pct: 20.0,
            morning_pct: 45.0,
            midday_pct: 25.0,
            evening_pct: 55.0,
        };
        let at = |h: f64| demand_at(&tri, h * 3600.0);
        assert!(at(3.0) < at(8.0), "night below morning");
        // Evening peak is the daily max.
        let peak = (0..240)
            .map(|i| at(i as f64 / 10.0))
            .fold(0.0f64, f64::max);
        assert_relative_eq!(at(19.5), peak, epsilon = 1e-9);

        let fault = DemandProfile::Fault {
            base: Box::new(c.clone()),
            leak_pct: 40.0,
            t_start_s: 100.0,
            t_end_s: 200.0,
        };
        assert_eq!(demand_at(&fault, 50.0), 100.0);
        assert_eq!(demand_at(&fault, 150.0), 100.0); // clamped at 100
        let fault2 = DemandProfile::Fault {
            base: Box::new(DemandProfile::Constant { level_pct: 50.0 }),
            leak_pct: 40.0,
            t_start_s: 100.0,
            t_end_s: 200.0,
        };
        assert_eq!(demand_at(&fault2, 150.0), 90.0);
        assert_eq!(demand_at(&fault2, 250.0), 50.0);
    }

    #[test]
    fn overshoot_computation() {
        assert_relative_eq!(
            overshoot_pct(&[2.0, 3.09, 2.8], 3.0).unwrap(),
            3.0,
            epsilon = 1e-9
        );
        assert_eq!(overshoot_pct(&[1.0, 2.0], 3.0).unwrap(), 0.0);
        assert!(overshoot_pct(&[], 3.0).is_err());
    }
}
