//! Reduced-likelihood inference: likelihood evaluation, maximization over
//! theta, and Fisher-information uncertainty quantification.

use serde::Serialize;
use thiserror::Error;

use crate::filters::{kalman_bucy, tangent_filter, wonham_filter, FilterError, FilterPath};
use crate::model::{reduce, ExampleTag, ModelError, ModelSpec, ReducedLinearModel};
use crate::simulate::{simulate_reduced, simulate_reduced_ctmc, Path, SimError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("likelihood non-finite over the whole theta grid")]
    DegenerateLikelihood,
}

/// One evaluation of the reduced log-likelihood and its score.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodEvaluation {
    pub theta: f64,
    pub loglik: f64,
    pub score: f64,
    pub t_total: f64,
}

/// Result of maximizing the reduced likelihood on an observation path.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimationResult {
    pub theta_hat: f64,
    /// True when the estimate sits on a bound of the parameter interval.
    pub clamped: bool,
    /// Fisher information at the estimate.
    pub fisher: f64,
    /// `(T I)^{-1/2}` when the information is positive.
    pub theoretical_stderr: f64,
    #[serde(rename = "loglik")]
    pub loglik_at_max: f64,
}

/// Runs the reduced filter for `model` at `theta` and returns the posterior
/// drift `pi_t[hbar]` on the observation grid.
fn reduced_filter(model: &ModelSpec, theta: f64, obs: &Path) -> Result<FilterPath, InferenceError> {
    match model.tag {
        ExampleTag::Example3 => Ok(wonham_filter(theta, model.sigma_obs, obs)?),
        _ => {
            let red = reduce(model)?;
            Ok(kalman_bucy(&red, theta, obs)?)
        }
    }
}

/// The reduced log-likelihood: left-point discretization of
/// `(int pi dY - 1/2 int pi^2 ds) / Sigma^2`.
pub fn reduced_log_likelihood(
    model: &ModelSpec,
    theta: f64,
    obs: &Path,
) -> Result<f64, InferenceError> {
    let fp = reduced_filter(model, theta, obs)?;
    let y = obs.channel("Y").ok_or(FilterError::MissingObservations)?;
    let dt = obs.dt;
    let s2 = model.sigma_obs * model.sigma_obs;
    let mut acc = 0.0;
    for k in 0..obs.n_steps {
        let pi = fp.pi_h[k];
        acc += pi * (y[k + 1] - y[k]) - 0.5 * pi * pi * dt;
    }
    Ok(acc / s2)
}

const SCORE_FD_STEP: f64 = 1e-4;

/// Score of the reduced likelihood: the tangent-filter-driven integral for
/// the linear examples, a central finite difference of the likelihood for
/// the chain example.
pub fn score(model: &ModelSpec, theta: f64, obs: &Path) -> Result<f64, InferenceError> {
    match model.tag {
        ExampleTag::Example3 => {
            let h = SCORE_FD_STEP;
            let up = reduced_log_likelihood(model, theta + h, obs)?;
            let dn = reduced_log_likelihood(model, theta - h, obs)?;
            Ok((up - dn) / (2.0 * h))
        }
        _ => {
            let red = reduce(model)?;
            let fp = kalman_bucy(&red, theta, obs)?;
            let tp = tangent_filter(&red, theta, obs, &fp)?;
            let y = obs.channel("Y").ok_or(FilterError::MissingObservations)?;
            let dt = obs.dt;
            let s2 = model.sigma_obs * model.sigma_obs;
            let mut acc = 0.0;
            for k in 0..obs.n_steps {
                acc += tp.pi_dot[k] * (y[k + 1] - y[k] - fp.pi_h[k] * dt);
            }
            Ok(acc / s2)
        }
    }
}

/// Evaluates likelihood and score together.
pub fn evaluate(
    model: &ModelSpec,
    theta: f64,
    obs: &Path,
) -> Result<LikelihoodEvaluation, InferenceError> {
    Ok(LikelihoodEvaluation {
        theta,
        loglik: reduced_log_likelihood(model, theta, obs)?,
        score: score(model, theta, obs)?,
        t_total: obs.total_time(),
    })
}

const MLE_GRID: usize = 41;
const MLE_TOL: f64 = 1e-6;

fn golden_section_max(
    f: &mut dyn FnMut(f64) -> Result<f64, InferenceError>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<f64, InferenceError> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (b - a).abs() > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Default horizon for the ergodic numeric Fisher average.
const FISHER_NUMERIC_T: f64 = 2000.0;
/// Grid for the ergodic numeric Fisher average.
const FISHER_NUMERIC_DT: f64 = 0.002;
/// Fixed stream for the per-fit numeric Fisher of the chain example, so the
/// estimate is a deterministic function of the model and theta.
const FISHER_NUMERIC_SEED: u64 = 0x0f15_4e2d;

/// Fisher information at `theta`: the closed form for the linear examples,
/// the ergodic numeric average (fixed stream, default horizon) for the chain.
pub fn fisher_information(model: &ModelSpec, theta: f64) -> Result<f64, InferenceError> {
    fisher_at(model, theta)
}

fn fisher_at(model: &ModelSpec, theta: f64) -> Result<f64, InferenceError> {
    match model.tag {
        ExampleTag::Example3 => fisher_numeric(
            model,
            theta,
            FISHER_NUMERIC_T,
            FISHER_NUMERIC_DT,
            FISHER_NUMERIC_SEED,
        ),
        _ => {
            let red = reduce(model)?;
            fisher_closed(&red, theta)
        }
    }
}

/// Maximizes the reduced likelihood: coarse 41-point grid, then
/// golden-section refinement around the interior argmax. A boundary argmax
/// clamps to the bound.
pub fn mle(model: &ModelSpec, obs: &Path) -> Result<EstimationResult, InferenceError> {
    if obs.n_steps == 0 {
        return Err(InferenceError::InvalidArgument(
            "empty observation path".into(),
        ));
    }
    let (lo, hi) = model.theta_bounds;
    let grid: Vec<f64> = (0..MLE_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (MLE_GRID - 1) as f64)
        .collect();
    // The filter recursion can blow up at extreme theta (stiff gain on the
    // observation grid); such grid points count as likelihood -infinity.
    let safe_ll = |th: f64| -> f64 {
        match reduced_log_likelihood(model, th, obs) {
            Ok(ll) if ll.is_finite() => ll,
            _ => f64::NEG_INFINITY,
        }
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, &th) in grid.iter().enumerate() {
        let ll = safe_ll(th);
        if ll.is_finite() && best.map_or(true, |(_, b)| ll > b) {
            best = Some((i, ll));
        }
    }
    let (i_best, _) = best.ok_or(InferenceError::DegenerateLikelihood)?;

    let (theta_hat, clamped) = if i_best == 0 {
        (lo, true)
    } else if i_best == MLE_GRID - 1 {
        (hi, true)
    } else {
        let mut f = |th: f64| Ok(safe_ll(th));
        let th = golden_section_max(&mut f, grid[i_best - 1], grid[i_best + 1], MLE_TOL)?;
        (th.clamp(lo, hi), false)
    };
    let loglik_at_max = reduced_log_likelihood(model, theta_hat, obs)?;
    let fisher = fisher_at(model, theta_hat)?;
    let t_total = obs.total_time();
    let theoretical_stderr = if fisher > 0.0 {
        theoretical_stderr(fisher, t_total)?
    } else {
        f64::INFINITY
    };
    Ok(EstimationResult {
        theta_hat,
        clamped,
        fisher,
        theoretical_stderr,
        loglik_at_max,
    })
}

/// Closed-form Fisher information of the reduced linear model,
/// `dbetabar^2/(2 betabar) + dkappa^2/(2 kappa) - 2 dbetabar dkappa/(betabar + kappa)`.
pub fn fisher_closed(reduced: &ReducedLinearModel, alpha: f64) -> Result<f64, InferenceError> {
    let kappa = reduced.kappa(alpha);
    if kappa <= 0.0 {
        return Err(InferenceError::InvalidArgument(
            "kappa must be positive".into(),
        ));
    }
    let betabar = reduced.betabar(alpha);
    let db = reduced.d_betabar(alpha);
    let dk = reduced.d_kappa(alpha);
    Ok(db * db / (2.0 * betabar) + dk * dk / (2.0 * kappa) - 2.0 * db * dk / (betabar + kappa))
}

/// Numeric Fisher information: the ergodic time average
/// `(1/(T Sigma^2)) int |pi_dot|^2 ds` on one simulated reduced path.
pub fn fisher_numeric(
    model: &ModelSpec,
    alpha: f64,
    t_total: f64,
    dt: f64,
    seed: u64,
) -> Result<f64, InferenceError> {
    if t_total < 100.0 {
        return Err(InferenceError::InvalidArgument(
            "need T >= 100 for the ergodic average".into(),
        ));
    }
    let s2 = model.sigma_obs * model.sigma_obs;
    let pi_dot: Vec<f64> = match model.tag {
        ExampleTag::Example3 => {
            let path = simulate_reduced_ctmc(alpha, model.sigma_obs, t_total, dt, seed)?;
            let h = SCORE_FD_STEP;
            let up = wonham_filter(alpha + h, model.sigma_obs, &path)?;
            let dn = wonham_filter((alpha - h).max(0.0), model.sigma_obs, &path)?;
            let denom = h + (alpha - (alpha - h).max(0.0));
            up.pi_h
                .iter()
                .zip(&dn.pi_h)
                .map(|(u, d)| (u - d) / denom)
                .collect()
        }
        _ => {
            let red = reduce(model)?;
            let path = simulate_reduced(&red, alpha, t_total, dt, seed)?;
            let fp = kalman_bucy(&red, alpha, &path)?;
            let tp = tangent_filter(&red, alpha, &path, &fp)?;
            tp.pi_dot
        }
    };
    let mean_sq: f64 = pi_dot.iter().map(|p| p * p).sum::<f64>() / pi_dot.len() as f64;
    Ok(mean_sq / s2)
}

/// Asymptotic standard error of the MLE, `(T I)^{-1/2}`.
pub fn theoretical_stderr(fisher: f64, t_total: f64) -> Result<f64, InferenceError> {
    if fisher <= 0.0 || t_total <= 0.0 {
        return Err(InferenceError::InvalidArgument(
            "need I > 0 and T > 0".into(),
        ));
    }
    Ok(1.0 / (t_total * fisher).sqrt())
}

/// Grid check of the linear identifiability condition: positivity of
/// `|dbetabar| + |dkappa|` and separation of `(betabar, kappa)` pairs for
/// thetas at distance greater than `epsilon`.
pub fn check_linear_identifiability(
    reduced: &ReducedLinearModel,
    grid: &[f64],
    epsilon: f64,
) -> bool {
    if grid.is_empty() || epsilon <= 0.0 {
        return false;
    }
    let deriv_ok = grid
        .iter()
        .all(|&th| reduced.d_betabar(th).abs() + reduced.d_kappa(th).abs() > 0.0);
    if !deriv_ok {
        return false;
    }
    for (i, &a) in grid.iter().enumerate() {
        for &b in &grid[i + 1..] {
            if (a - b).abs() > epsilon {
                let sep = (reduced.betabar(a) - reduced.betabar(b)).abs()
                    + (reduced.kappa(a) - reduced.kappa(b)).abs();
                if sep <= 0.0 {
                    return false;
                }
            }
        }
    }
    true
}
