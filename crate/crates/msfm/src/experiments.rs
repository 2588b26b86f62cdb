//! Monte Carlo harness: repeated estimation studies, the filter-convergence
//! study in the scale parameter, and histogram summaries.
//!
//! Replicates run concurrently on derived per-replicate seeds; aggregation
//! follows replicate-index order, so results are bitwise deterministic for a
//! fixed configuration.

use rayon::prelude::*;
use thiserror::Error;

use crate::filters::{kalman_bucy, particle_filter, wonham_filter, FilterError};
use crate::inference::{fisher_information, mle, theoretical_stderr, InferenceError};
use crate::model::{reduce, ExampleTag, ModelError, ModelSpec};
use crate::simulate::{derive_seed, simulate_multiscale, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{n_fail} of {n_total} replicates failed (more than 5%)")]
    TooManyFailures { n_fail: usize, n_total: usize },
}

/// Configuration of a Monte Carlo estimation study.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub tag: ExampleTag,
    pub true_alpha: f64,
    pub n_replicates: usize,
    pub t_total: f64,
    pub delta: f64,
    pub dt: f64,
    pub sigma_obs: f64,
    pub sigma_fast: f64,
    pub theta_bounds: (f64, f64),
    pub root_seed: u64,
    pub n_bins: usize,
}

impl McConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_replicates < 2 {
            return Err(ExperimentError::InvalidConfig(
                "need at least 2 replicates".into(),
            ));
        }
        let ratio = self.t_total / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ExperimentError::InvalidConfig(
                "T must be an integer multiple of dt".into(),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, ModelError> {
        build_model(
            self.tag,
            self.delta,
            self.sigma_obs,
            self.sigma_fast,
            self.theta_bounds,
        )
    }
}

pub fn build_model(
    tag: ExampleTag,
    delta: f64,
    sigma_obs: f64,
    sigma_fast: f64,
    theta_bounds: (f64, f64),
) -> Result<ModelSpec, ModelError> {
    match tag {
        ExampleTag::Example1 => ModelSpec::example1(delta, sigma_obs, sigma_fast, theta_bounds),
        ExampleTag::Example2 => ModelSpec::example2(delta, sigma_obs, sigma_fast, theta_bounds),
        ExampleTag::Example3 => ModelSpec::example3(delta, sigma_obs, sigma_fast, theta_bounds),
        ExampleTag::Custom => Err(ModelError::InvalidParameter(
            "custom models need explicit coefficients".into(),
        )),
    }
}

/// Density histogram rows `(bin_left, bin_right, density)` plus samples of
/// the fitted normal density.
#[derive(Debug, Clone)]
pub struct HistogramData {
    pub bins: Vec<(f64, f64, f64)>,
    pub overlay: Vec<(f64, f64)>,
}

/// Summary of a Monte Carlo estimation study.
#[derive(Debug, Clone)]
pub struct McResult {
    pub estimates: Vec<f64>,
    pub mean_estimate: f64,
    /// Sample standard deviation of the estimates.
    pub empirical_stderr: f64,
    /// `(T I(alpha))^{-1/2}` at the true parameter.
    pub theoretical_stderr: f64,
    pub n_ok: usize,
    pub n_fail: usize,
    pub histogram: HistogramData,
}

/// Simulates `n_replicates` data sets at the true parameter, estimates theta
/// on each, and summarizes. Failed replicates are excluded and counted; more
/// than 5% failures aborts the study.
pub fn run_mc_study(config: &McConfig) -> Result<McResult, ExperimentError> {
    config.validate()?;
    let model = config.model()?;
    let results: Vec<Option<f64>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(config.root_seed, rep as u64);
            let obs =
                simulate_multiscale(&model, config.true_alpha, config.t_total, config.dt, seed)
                    .ok()?;
            let est = mle(&model, &obs).ok()?;
            Some(est.theta_hat)
        })
        .collect();

    let estimates: Vec<f64> = results.iter().filter_map(|r| *r).collect();
    let n_fail = config.n_replicates - estimates.len();
    if n_fail * 20 > config.n_replicates {
        return Err(ExperimentError::TooManyFailures {
            n_fail,
            n_total: config.n_replicates,
        });
    }
    let n_ok = estimates.len();
    let mean_estimate = estimates.iter().sum::<f64>() / n_ok as f64;
    let empirical_stderr = if n_ok > 1 {
        (estimates
            .iter()
            .map(|e| (e - mean_estimate) * (e - mean_estimate))
            .sum::<f64>()
            / (n_ok - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let fisher = fisher_information(&model, config.true_alpha)?;
    let theo = theoretical_stderr(fisher, config.t_total)?;
    let histogram =
        histogram_with_normal_overlay(&estimates, config.true_alpha, theo, config.n_bins)?;
    Ok(McResult {
        estimates,
        mean_estimate,
        empirical_stderr,
        theoretical_stderr: theo,
        n_ok,
        n_fail,
        histogram,
    })
}

/// One row of the filter-convergence study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub delta: f64,
    /// Mean over replicates of the time-averaged squared gap between the
    /// particle posterior drift and the reduced-filter drift.
    pub mse: f64,
    /// Monte Carlo standard error of the mean.
    pub stderr: f64,
}

/// Filter-convergence study over a list of scale parameters, with the model
/// for each `delta` supplied by `model_for_delta`.
///
/// Per replicate: simulate the full system, run the bootstrap particle
/// filter and the reduced exact filter on the same observations at the true
/// parameter, and record `(1/T) int (pi_pf - pi_reduced)^2 dt`.
#[allow(clippy::too_many_arguments)]
pub fn filter_convergence_study_with<F>(
    model_for_delta: F,
    alpha: f64,
    deltas: &[f64],
    n_particles: usize,
    n_replicates: usize,
    t_total: f64,
    dt: f64,
    root_seed: u64,
) -> Result<Vec<ConvergenceRow>, ExperimentError>
where
    F: Fn(f64) -> Result<ModelSpec, ModelError> + Sync,
{
    if deltas.len() < 2 {
        return Err(ExperimentError::InvalidConfig(
            "need at least 2 delta values".into(),
        ));
    }
    if n_replicates < 2 {
        return Err(ExperimentError::InvalidConfig(
            "need at least 2 replicates".into(),
        ));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let model = model_for_delta(delta)?;
        let mses: Vec<f64> = (0..n_replicates)
            .into_par_iter()
            .map(|rep| -> Result<f64, ExperimentError> {
                let seed = derive_seed(root_seed, (di * 1_000_003 + rep) as u64);
                let obs = simulate_multiscale(&model, alpha, t_total, dt, seed)?;
                let (pf, _) = particle_filter(&model, alpha, &obs, n_particles, seed ^ 0x5eed)?;
                let reference = match model.tag {
                    ExampleTag::Example3 => wonham_filter(alpha, model.sigma_obs, &obs)?,
                    _ => {
                        let red = reduce(&model)?;
                        kalman_bucy(&red, alpha, &obs)?
                    }
                };
                let n = obs.n_steps;
                let sq = pf
                    .pi_h
                    .iter()
                    .zip(&reference.pi_h)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (n + 1) as f64;
                Ok(sq)
            })
            .collect::<Result<_, _>>()?;
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        let var = mses
            .iter()
            .map(|m| (m - mean) * (m - mean))
            .sum::<f64>()
            / (mses.len() - 1) as f64;
        rows.push(ConvergenceRow {
            delta,
            mse: mean,
            stderr: (var / mses.len() as f64).sqrt(),
        });
    }
    Ok(rows)
}

/// Convergence study for a registered example.
#[allow(clippy::too_many_arguments)]
pub fn filter_convergence_study(
    tag: ExampleTag,
    alpha: f64,
    deltas: &[f64],
    n_particles: usize,
    n_replicates: usize,
    t_total: f64,
    dt: f64,
    sigma_obs: f64,
    sigma_fast: f64,
    theta_bounds: (f64, f64),
    root_seed: u64,
) -> Result<Vec<ConvergenceRow>, ExperimentError> {
    filter_convergence_study_with(
        |delta| build_model(tag, delta, sigma_obs, sigma_fast, theta_bounds),
        alpha,
        deltas,
        n_particles,
        n_replicates,
        t_total,
        dt,
        root_seed,
    )
}

/// Density-normalized histogram of the estimates over their range, plus 201
/// samples of the `N(alpha, stderr^2)` density.
pub fn histogram_with_normal_overlay(
    estimates: &[f64],
    alpha: f64,
    stderr: f64,
    n_bins: usize,
) -> Result<HistogramData, ExperimentError> {
    if estimates.is_empty() {
        return Err(ExperimentError::InvalidConfig("no estimates".into()));
    }
    if n_bins < 2 || stderr <= 0.0 {
        return Err(ExperimentError::InvalidConfig(
            "need n_bins >= 2 and stderr > 0".into(),
        ));
    }
    let mut lo = estimates.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        // Degenerate sample: open a unit window so densities stay finite.
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &e in estimates {
        let idx = (((e - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let n = estimates.len() as f64;
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let left = lo + i as f64 * width;
            (left, left + width, c as f64 / (n * width))
        })
        .collect();
    let overlay = (0..201)
        .map(|i| {
            let x = alpha - 4.0 * stderr + 8.0 * stderr * i as f64 / 200.0;
            let z = (x - alpha) / stderr;
            let pdf = (-0.5 * z * z).exp() / (stderr * (2.0 * std::f64::consts::PI).sqrt());
            (x, pdf)
        })
        .collect();
    Ok(HistogramData { bins, overlay })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_config() -> McConfig {
        McConfig {
            tag: ExampleTag::Example1,
            true_alpha: 0.0,
            n_replicates: 8,
            t_total: 25.0,
            delta: 0.01,
            dt: 0.02,
            sigma_obs: 0.1,
            sigma_fast: 0.1,
            theta_bounds: (-2.0, 3.0),
            root_seed: 1,
            n_bins: 5,
        }
    }

    #[test]
    fn mc_study_is_reproducible() {
        let cfg = small_config();
        let a = run_mc_study(&cfg).unwrap();
        let b = run_mc_study(&cfg).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.mean_estimate.to_bits(), b.mean_estimate.to_bits());
        assert_eq!(a.n_fail, 0);
    }

    #[test]
    fn degenerate_replication_has_zero_spread() {
        // Two replicates forced onto identical seeds must agree exactly.
        let cfg = small_config();
        let model = cfg.model().unwrap();
        let obs = simulate_multiscale(&model, 0.0, 25.0, 0.02, 7).unwrap();
        let e1 = mle(&model, &obs).unwrap().theta_hat;
        let e2 = mle(&model, &obs).unwrap().theta_hat;
        let sd = ((e1 - e2) * (e1 - e2) / 1.0).sqrt();
        assert_abs_diff_eq!(sd, 0.0);
    }

    #[test]
    fn histogram_constant_array() {
        let h = histogram_with_normal_overlay(&[1.0; 10], 1.0, 0.1, 4).unwrap();
        let occupied: Vec<_> = h.bins.iter().filter(|(_, _, d)| *d > 0.0).collect();
        assert_eq!(occupied.len(), 1);
        let (l, r, d) = occupied[0];
        assert_abs_diff_eq!(d * (r - l), 1.0, epsilon = 1e-12);
        // Mass sums to one.
        let mass: f64 = h.bins.iter().map(|(l, r, d)| d * (r - l)).sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        assert_eq!(h.overlay.len(), 201);
    }

    #[test]
    fn histogram_mass_normalizes() {
        let est: Vec<f64> = (0..500).map(|i| (i as f64 * 0.7919).sin()).collect();
        let h = histogram_with_normal_overlay(&est, 0.0, 0.5, 25).unwrap();
        let mass: f64 = h.bins.iter().map(|(l, r, d)| d * (r - l)).sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config();
        cfg.n_replicates = 1;
        assert!(run_mc_study(&cfg).is_err());
        let mut cfg = small_config();
        cfg.t_total = 25.013;
        assert!(run_mc_study(&cfg).is_err());
    }
}
