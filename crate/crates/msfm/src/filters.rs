//! Filters: posterior statistics of the hidden state given the observations.
//!
//! The reduced linear model admits the exact Kalman-Bucy filter and its
//! theta-tangent; the 2-state chain admits the Wonham filter; the full
//! multiscale model is filtered by a bootstrap particle approximation of the
//! Kallianpur-Striebel ratio.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ModelSpec, ReducedLinearModel};
use crate::simulate::{HiddenStepper, Path};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("observation path has no Y channel")]
    MissingObservations,
    #[error("non-finite filter state at step {0}")]
    NonFinite(usize),
    #[error("observation gain abar(theta) = 0: theta not identifiable from Y")]
    DegenerateGain,
    #[error("all particle weights vanished at step {0}")]
    WeightDegeneracy(usize),
    #[error("grid mismatch: filter has {filter} steps, observations {obs}")]
    GridMismatch { filter: usize, obs: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Posterior statistics along an observation path.
#[derive(Debug, Clone)]
pub struct FilterPath {
    pub t0: f64,
    pub dt: f64,
    /// Posterior drift `pi_t[hbar]`; for the Wonham filter this is
    /// `P(U_t = 1 | Y)`.
    pub pi_h: Vec<f64>,
    /// Conditional variance (Kalman only).
    pub sigma_hat: Option<Vec<f64>>,
    /// Effective sample size (particle filter only).
    pub ess: Option<Vec<f64>>,
    /// Innovation increments `(dY - pi dt) / Sigma`, length `n_steps`.
    pub nu_increments: Vec<f64>,
}

impl FilterPath {
    pub fn n_steps(&self) -> usize {
        self.pi_h.len() - 1
    }
}

/// Theta-derivative of the posterior drift.
#[derive(Debug, Clone)]
pub struct TangentPath {
    pub t0: f64,
    pub dt: f64,
    pub pi_dot: Vec<f64>,
}

fn observations(obs: &Path) -> Result<&[f64], FilterError> {
    obs.channel("Y").ok_or(FilterError::MissingObservations)
}

/// Stationary Kalman quantities: `(kappa, zeta, sigma_hat_inf)`.
pub fn stationary_gain(
    reduced: &ReducedLinearModel,
    theta: f64,
) -> Result<(f64, f64, f64), FilterError> {
    if reduced.abar(theta) == 0.0 {
        return Err(FilterError::DegenerateGain);
    }
    Ok((
        reduced.kappa(theta),
        reduced.zeta(theta),
        reduced.sigma_hat_inf(theta),
    ))
}

/// Kalman-Bucy filter with the paper's stationary initialization
/// (`sigma_hat_0 = sigma_hat_inf`, `Uhat_0 = 0`).
pub fn kalman_bucy(
    reduced: &ReducedLinearModel,
    theta: f64,
    obs: &Path,
) -> Result<FilterPath, FilterError> {
    kalman_bucy_with_init(reduced, theta, obs, reduced.sigma_hat_inf(theta), 0.0)
}

/// The filter relaxation rate is kappa; Euler substeps keep
/// `kappa * dt_sub` at or below this target so the recursion stays stable
/// and unbiased even when the observation grid is coarse relative to kappa.
const FILTER_SUBSTEP_TARGET: f64 = 0.02;

fn substeps(kappa: f64, dt: f64) -> usize {
    if kappa <= 0.0 {
        return 1;
    }
    ((kappa * dt / FILTER_SUBSTEP_TARGET).ceil() as usize).clamp(1, 10_000)
}

/// Euler recursion for the Kalman-Bucy filter with the per-observation-step
/// increment spread uniformly over internal substeps; optionally carries the
/// theta-tangent recursion on the same substep grid.
fn kalman_core(
    reduced: &ReducedLinearModel,
    theta: f64,
    obs: &Path,
    sigma_hat_0: f64,
    u_hat_0: f64,
    with_tangent: bool,
) -> Result<(FilterPath, Option<Vec<f64>>), FilterError> {
    let y = observations(obs)?;
    let dt = obs.dt;
    let n = obs.n_steps;
    let abar = reduced.abar(theta);
    let betabar = reduced.betabar(theta);
    let gamma = reduced.gamma(theta);
    let s2 = reduced.sigma_obs * reduced.sigma_obs;
    let kappa = reduced.kappa(theta);
    let d_betabar = reduced.d_betabar(theta);
    let d_zeta = reduced.d_zeta(theta);
    let n_sub = substeps(kappa, dt);
    let h = dt / n_sub as f64;

    let mut u_hat = u_hat_0;
    let mut sig = sigma_hat_0;
    let mut pd = 0.0;
    let mut pi_h = Vec::with_capacity(n + 1);
    let mut sigma_hat = Vec::with_capacity(n + 1);
    let mut nu = Vec::with_capacity(n);
    let mut pi_dot = Vec::with_capacity(n + 1);
    pi_h.push(abar * u_hat);
    sigma_hat.push(sig);
    pi_dot.push(pd);
    for k in 0..n {
        let dy_sub = (y[k + 1] - y[k]) / n_sub as f64;
        nu.push((y[k + 1] - y[k] - abar * u_hat * dt) / reduced.sigma_obs);
        for _ in 0..n_sub {
            let pi = abar * u_hat;
            let innov = dy_sub - pi * h;
            if with_tangent {
                // Forcing zeta' * Sigma * d(nu) with d(nu) = innov / Sigma.
                pd += (-d_betabar * pi - kappa * pd) * h + d_zeta * innov;
            }
            u_hat += -betabar * u_hat * h + abar * sig / s2 * innov;
            sig += (-2.0 * betabar * sig - abar * abar * sig * sig / s2 + gamma * gamma) * h;
        }
        if !(u_hat.is_finite() && sig.is_finite() && pd.is_finite()) {
            return Err(FilterError::NonFinite(k + 1));
        }
        pi_h.push(abar * u_hat);
        sigma_hat.push(sig);
        pi_dot.push(pd);
    }
    let fp = FilterPath {
        t0: obs.t0,
        dt,
        pi_h,
        sigma_hat: Some(sigma_hat),
        ess: None,
        nu_increments: nu,
    };
    Ok((fp, with_tangent.then_some(pi_dot)))
}

/// Kalman-Bucy filter with explicit initial conditional variance and mean.
pub fn kalman_bucy_with_init(
    reduced: &ReducedLinearModel,
    theta: f64,
    obs: &Path,
    sigma_hat_0: f64,
    u_hat_0: f64,
) -> Result<FilterPath, FilterError> {
    Ok(kalman_core(reduced, theta, obs, sigma_hat_0, u_hat_0, false)?.0)
}

/// Theta-tangent of the stationary Kalman filter, driven by the innovation
/// increments of `filter`; recomputed on the filter's internal substep grid
/// so the two recursions stay consistent.
pub fn tangent_filter(
    reduced: &ReducedLinearModel,
    theta: f64,
    obs: &Path,
    filter: &FilterPath,
) -> Result<TangentPath, FilterError> {
    if filter.n_steps() != obs.n_steps {
        return Err(FilterError::GridMismatch {
            filter: filter.n_steps(),
            obs: obs.n_steps,
        });
    }
    let (_, pi_dot) = kalman_core(
        reduced,
        theta,
        obs,
        reduced.sigma_hat_inf(theta),
        0.0,
        true,
    )?;
    Ok(TangentPath {
        t0: obs.t0,
        dt: obs.dt,
        pi_dot: pi_dot.expect("tangent requested"),
    })
}

const WONHAM_CLAMP: f64 = 1e-12;

/// Wonham filter for the symmetric 2-state chain observed in Gaussian noise,
/// with explicit initial probability.
pub fn wonham_filter_with_init(
    theta: f64,
    sigma_obs: f64,
    obs: &Path,
    p0: f64,
) -> Result<FilterPath, FilterError> {
    if theta < 0.0 || sigma_obs <= 0.0 {
        return Err(FilterError::InvalidArgument(
            "wonham filter needs theta >= 0 and Sigma > 0".into(),
        ));
    }
    let y = observations(obs)?;
    let dt = obs.dt;
    let n = obs.n_steps;
    let s2 = sigma_obs * sigma_obs;
    let mut p = p0.clamp(WONHAM_CLAMP, 1.0 - WONHAM_CLAMP);
    let mut pi_h = Vec::with_capacity(n + 1);
    let mut nu = Vec::with_capacity(n);
    pi_h.push(p);
    for k in 0..n {
        let dy = y[k + 1] - y[k];
        nu.push((dy - p * dt) / sigma_obs);
        // Predict: Euler step of the master equation, then update with the
        // Gaussian emission on the increment. The update is the exact Bayes
        // step for the increment likelihoods exp(u dY/Sigma^2 - u^2 dt /
        // (2 Sigma^2)), u in {0, 1}; expanding it recovers the
        // p(1-p)(dY - p dt)/Sigma^2 innovation term plus its Ito correction.
        p += theta * (1.0 - 2.0 * p) * dt;
        p = p.clamp(WONHAM_CLAMP, 1.0 - WONHAM_CLAMP);
        let l1 = ((dy - 0.5 * dt) / s2).exp();
        p = p * l1 / (p * l1 + (1.0 - p));
        if !p.is_finite() {
            return Err(FilterError::NonFinite(k + 1));
        }
        p = p.clamp(WONHAM_CLAMP, 1.0 - WONHAM_CLAMP);
        pi_h.push(p);
    }
    Ok(FilterPath {
        t0: obs.t0,
        dt,
        pi_h,
        sigma_hat: None,
        ess: None,
        nu_increments: nu,
    })
}

/// Wonham filter started from the uninformative prior `p0 = 1/2`.
pub fn wonham_filter(theta: f64, sigma_obs: f64, obs: &Path) -> Result<FilterPath, FilterError> {
    wonham_filter_with_init(theta, sigma_obs, obs, 0.5)
}

/// Weighted particle cloud for the bootstrap filter.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub states: Vec<(f64, f64)>,
    pub log_weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Normalized weights and their effective sample size `1 / sum w_i^2`.
    pub fn normalized_weights(&self) -> Option<(Vec<f64>, f64)> {
        let m = self
            .log_weights
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if !m.is_finite() {
            return None;
        }
        let mut w: Vec<f64> = self.log_weights.iter().map(|lw| (lw - m).exp()).collect();
        let sum: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= sum;
        }
        let ess = 1.0 / w.iter().map(|wi| wi * wi).sum::<f64>();
        Some((w, ess))
    }
}

fn systematic_resample(weights: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = weights.len();
    let start: f64 = rng.gen::<f64>() / n as f64;
    let mut indices = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = start + i as f64 / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        indices.push(j);
    }
    indices
}

/// Bootstrap particle filter for the full multiscale model.
///
/// Particles follow the hidden dynamics of `model` at parameter `theta`;
/// log-weights accumulate the Gaussian increment likelihood
/// `h dY / Sigma^2 - h^2 dt / (2 Sigma^2)` with left-point `h`, and the
/// cloud is resampled systematically every step. Returns the filter path
/// (posterior mean of `h`, effective sample sizes, innovations) and the
/// log of the mean unnormalized weight, an estimate of the log evidence.
pub fn particle_filter(
    model: &ModelSpec,
    theta: f64,
    obs: &Path,
    n_particles: usize,
    seed: u64,
) -> Result<(FilterPath, f64), FilterError> {
    if n_particles < 2 {
        return Err(FilterError::InvalidArgument(
            "need at least 2 particles".into(),
        ));
    }
    let y = observations(obs)?;
    let dt = obs.dt;
    let n = obs.n_steps;
    let s2 = model.sigma_obs * model.sigma_obs;
    let stepper = HiddenStepper::new(model, theta, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70f1_17e5_ca77_e57a);
    let mut rng_u = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_a6f2_3b81_d04c);
    let mut rng_x = ChaCha8Rng::seed_from_u64(seed ^ 0x9d2c_5680_17f4_3a1e);

    let mut states: Vec<(f64, f64)> = (0..n_particles)
        .map(|_| stepper.init_state(&mut rng_u, &mut rng_x))
        .collect();
    let mean_h = |states: &[(f64, f64)]| -> f64 {
        states
            .iter()
            .map(|&(x, u)| stepper.obs_drift(x, u))
            .sum::<f64>()
            / states.len() as f64
    };

    let mut pi_h = Vec::with_capacity(n + 1);
    let mut ess_trace = Vec::with_capacity(n + 1);
    let mut nu = Vec::with_capacity(n);
    let mut log_evidence = 0.0;
    pi_h.push(mean_h(&states));
    ess_trace.push(n_particles as f64);

    let mut ensemble = ParticleEnsemble {
        states,
        log_weights: vec![0.0; n_particles],
    };
    for k in 0..n {
        let dy = y[k + 1] - y[k];
        nu.push((dy - pi_h[k] * dt) / model.sigma_obs);
        for (lw, &(x, u)) in ensemble.log_weights.iter_mut().zip(&ensemble.states) {
            let h = stepper.obs_drift(x, u);
            *lw = h * dy / s2 - h * h * dt / (2.0 * s2);
        }
        let (weights, ess) = ensemble
            .normalized_weights()
            .ok_or(FilterError::WeightDegeneracy(k + 1))?;
        let m = ensemble
            .log_weights
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mean_w: f64 = ensemble
            .log_weights
            .iter()
            .map(|lw| (lw - m).exp())
            .sum::<f64>()
            / n_particles as f64;
        log_evidence += m + mean_w.ln();
        ess_trace.push(ess);

        let indices = systematic_resample(&weights, &mut rng);
        states = indices.iter().map(|&i| ensemble.states[i]).collect();
        for s in &mut states {
            *s = stepper.step(s.0, s.1, &mut rng_u, &mut rng_x);
        }
        let pm = mean_h(&states);
        if !pm.is_finite() {
            return Err(FilterError::NonFinite(k + 1));
        }
        pi_h.push(pm);
        ensemble.states = states;
    }
    Ok((
        FilterPath {
            t0: obs.t0,
            dt,
            pi_h,
            sigma_hat: None,
            ess: Some(ess_trace),
            nu_increments: nu,
        },
        log_evidence,
    ))
}

/// Integrates the Riccati ODE to steady state; an oracle for
/// [`stationary_gain`], independent of the closed form.
#[doc(hidden)]
pub fn riccati_steady_state(reduced: &ReducedLinearModel, theta: f64, sigma0: f64) -> f64 {
    let betabar = reduced.betabar(theta);
    let abar = reduced.abar(theta);
    let gamma = reduced.gamma(theta);
    let s2 = reduced.sigma_obs * reduced.sigma_obs;
    let f = |sig: f64| -2.0 * betabar * sig - abar * abar * sig * sig / s2 + gamma * gamma;
    let mut sig = sigma0;
    let dt = 1e-4 / reduced.kappa(theta).max(1.0);
    for _ in 0..2_000_000 {
        // RK4
        let k1 = f(sig);
        let k2 = f(sig + 0.5 * dt * k1);
        let k3 = f(sig + 0.5 * dt * k2);
        let k4 = f(sig + dt * k3);
        let next = sig + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (next - sig).abs() <= 1e-14 * sig.abs().max(1e-14) {
            return next;
        }
        sig = next;
    }
    sig
}
