//! Shared test oracles, independent of the implementation paths they check.
// Each test binary compiles its own copy and uses a subset.
#![allow(dead_code)]

use nalgebra::DMatrix;

use ctrlsim_core::linalg::zoh_pair;
use ctrlsim_core::sim::RngStream;
use ctrlsim_core::stability::DpetcSystem;

/// Monodromy matrix of the periodically-sampled loop with input delay:
/// over one period the plant flows `tau_d` under the previous sample's
/// input, the new input lands, and the plant flows the rest of the period.
/// The extended state is (current plant state, previously applied sample);
/// spectral radius below one is exponential stability of the
/// always-transmit loop.
pub fn sampled_data_monodromy(sys: &DpetcSystem) -> DMatrix<f64> {
    let n = sys.n_s();
    let (e1, f1) = if sys.tau_d > 0.0 {
        zoh_pair(&sys.a, sys.tau_d)
    } else {
        (DMatrix::identity(n, n), DMatrix::zeros(n, n))
    };
    let (e2, f2) = zoh_pair(&sys.a, sys.h - sys.tau_d);
    let bk = &sys.b * &sys.k_gain;
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    let top_left = &e2 * &e1 + &f2 * &bk;
    let top_right = &e2 * &f1 * &bk;
    m.view_mut((0, 0), (n, n)).copy_from(&top_left);
    m.view_mut((0, n), (n, n)).copy_from(&top_right);
    m.view_mut((n, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    m
}

/// Two-sided Kolmogorov-Smirnov statistic against an exponential CDF with
/// the given mean. `sorted` must be ascending.
pub fn ks_statistic(sorted: &[f64], mean: f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = 1.0 - (-x / mean).exp();
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i as f64 + 1.0) / n - f).abs());
    }
    d
}

/// KS exponential-fit test with the mean estimated from the data. The
/// critical value is Monte-Carlo calibrated at the requested significance
/// with the same re-fitting, which accounts for the estimated parameter.
/// Returns (statistic, critical value).
pub fn ks_exponential_fit(samples: &mut [f64], significance: f64, seed: u64) -> (f64, f64) {
    assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let d = ks_statistic(samples, mean);

    let n = samples.len();
    let replicates = 500;
    let mut rng = RngStream::new(seed, 0);
    let mut ds: Vec<f64> = (0..replicates)
        .map(|_| {
            let mut sim: Vec<f64> = (0..n).map(|_| rng.exponential(1.0)).collect();
            sim.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = sim.iter().sum::<f64>() / n as f64;
            ks_statistic(&sim, m)
        })
        .collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = (((1.0 - significance) * replicates as f64) as usize).min(replicates - 1);
    (d, ds[idx])
}

/// Monte-Carlo oracle for the request stage, in two mechanistic stages.
///
/// Stage one estimates the per-round collision probability by simulating
/// Poisson arrivals spread uniformly over `k` slots and checking whether a
/// tagged request shares its slot. Stage two runs a discrete-event FIFO
/// queue with Poisson arrivals and exponential service at the rate matching
/// that collision probability's geometric retry tail, and reports the
/// empirical sojourn CDF at the requested delays (in seconds).
pub fn mc_request_stage_cdf(
    lambda_per_round: f64,
    k: u32,
    round_s: f64,
    x_seconds: &[f64],
    n_customers: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 1);

    // Stage one: slot-level collision probability.
    let trials = 200_000;
    let mut collisions = 0usize;
    for _ in 0..trials {
        let my_slot = rng.pick_1_to_k(k);
        // Ambient arrivals this round.
        let mut n_arrivals = 0usize;
        let mut acc = rng.exponential(1.0 / lambda_per_round);
        while acc < 1.0 {
            n_arrivals += 1;
            acc += rng.exponential(1.0 / lambda_per_round);
        }
        let mut hit = false;
        for _ in 0..n_arrivals {
            if rng.pick_1_to_k(k) == my_slot {
                hit = true;
                break;
            }
        }
        if hit {
            collisions += 1;
        }
    }
    let fail_prob = collisions as f64 / trials as f64;
    let mu = (1.0 / fail_prob).ln();

    // Stage two: M/M/1 sojourn times (units of rounds).
    let mut t_arrival = 0.0f64;
    let mut server_free = 0.0f64;
    let mut sojourns = Vec::with_capacity(n_customers);
    for _ in 0..n_customers {
        t_arrival += rng.exponential(1.0 / lambda_per_round);
        let start = t_arrival.max(server_free);
        let service = rng.exponential(1.0 / mu);
        server_free = start + service;
        sojourns.push(server_free - t_arrival);
    }

    x_seconds
        .iter()
        .map(|&x| {
            let x_rounds = x / round_s;
            sojourns.iter().filter(|&&s| s <= x_rounds).count() as f64 / sojourns.len() as f64
        })
        .collect()
}

/// Classic RK4 with `steps` substeps for `x' = A x + u` (constant forcing),
/// the fine-step oracle for the exact discretization.
pub fn rk4_constant_forcing(
    a: &DMatrix<f64>,
    x0: &nalgebra::DVector<f64>,
    u: &nalgebra::DVector<f64>,
    dt: f64,
    steps: usize,
) -> nalgebra::DVector<f64> {
    let f = |x: &nalgebra::DVector<f64>| a * x + u;
    let h = dt / steps as f64;
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}
