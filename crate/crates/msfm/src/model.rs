//! Model classes for the slow-fast system and their homogenized reductions.
//!
//! A [`ModelSpec`] describes the full three-equation system (observed `Y`,
//! hidden slow `U`, hidden fast `X`). Averaging the coefficients against the
//! invariant measure of the fast component yields a [`ReducedLinearModel`]
//! for the linear example classes.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Coefficient of the full system, a function of `(x, u, theta)`.
pub type Coef = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Scalar function of `theta`.
pub type ThetaFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar function of the fast state `x`.
pub type FastFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("quadrature did not converge within {max_nodes} nodes (last change {last_change:e})")]
    QuadratureDiverged { max_nodes: usize, last_change: f64 },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("model `{0:?}` has no linear reduced form")]
    NotReducible(ExampleTag),
}

/// Which registered example a [`ModelSpec`] instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleTag {
    /// `dY = e^X U dt + S dW`, `dU = -U dt + dV`, fast OU around `theta`.
    Example1,
    /// `dY = U dt + S dW`, `dU = -e^X U dt + dV`, fast OU around `theta`.
    Example2,
    /// `dY = X dt + S dW`, fast OU around the 2-state chain `U` with flip rate `theta`.
    Example3,
    Custom,
}

/// A Gaussian measure on the real line, `N(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeasure {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMeasure {
    pub fn new(mean: f64, variance: f64) -> Self {
        assert!(variance >= 0.0, "variance must be nonnegative");
        Self { mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Invariant measure of the fast component with the slow variable frozen.
#[derive(Debug, Clone)]
pub enum InvariantMeasure {
    Gaussian(GaussianMeasure),
    /// Empirical fallback: samples from a long `delta = 1` run.
    Empirical(Vec<f64>),
}

/// Invariant measure of the OU fast process `dX = (theta - X) dt + sigma dB`.
///
/// The stationary law is `N(theta, sigma^2 / 2)`.
pub fn invariant_measure_ou(theta: f64, sigma: f64) -> GaussianMeasure {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    GaussianMeasure::new(theta, sigma * sigma / 2.0)
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature
// ---------------------------------------------------------------------------

/// Nodes and weights for n-point Gauss-Hermite quadrature (weight `e^{-x^2}`).
///
/// Newton iteration on the orthonormal Hermite recurrence; weights sum to
/// `sqrt(pi)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

const QUAD_NODE_CAP: usize = 128;
const QUAD_RTOL: f64 = 1e-10;

fn gh_average(f: &dyn Fn(f64, f64) -> f64, mu: GaussianMeasure, u: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_hermite(n);
    let scale = (2.0 * mu.variance).sqrt();
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        acc += w * f(mu.mean + scale * x, u);
    }
    acc / std::f64::consts::PI.sqrt()
}

/// A coefficient averaged against an invariant measure: `u -> integral f(x, u) mu(dx)`.
pub struct AveragedCoefficient {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    mu: InvariantMeasure,
}

impl AveragedCoefficient {
    pub fn eval(&self, u: f64) -> Result<f64, ModelError> {
        match &self.mu {
            InvariantMeasure::Gaussian(g) => {
                if g.variance == 0.0 {
                    return Ok((self.f)(g.mean, u));
                }
                // Node doubling until successive estimates agree.
                let mut n = 8;
                let mut prev = gh_average(self.f.as_ref(), *g, u, n);
                loop {
                    n = (2 * n).min(QUAD_NODE_CAP);
                    let cur = gh_average(self.f.as_ref(), *g, u, n);
                    let change = (cur - prev).abs();
                    if !cur.is_finite() {
                        return Err(ModelError::QuadratureDiverged {
                            max_nodes: n,
                            last_change: change,
                        });
                    }
                    if change <= QUAD_RTOL * cur.abs().max(1.0) {
                        return Ok(cur);
                    }
                    if n >= QUAD_NODE_CAP {
                        return Err(ModelError::QuadratureDiverged {
                            max_nodes: QUAD_NODE_CAP,
                            last_change: change,
                        });
                    }
                    prev = cur;
                }
            }
            InvariantMeasure::Empirical(samples) => {
                if samples.is_empty() {
                    return Err(ModelError::InvalidParameter(
                        "empirical invariant measure has no samples".into(),
                    ));
                }
                let sum: f64 = samples.iter().map(|&x| (self.f)(x, u)).sum();
                Ok(sum / samples.len() as f64)
            }
        }
    }
}

/// Averages `f(x, u)` over `x` against the Gaussian measure `mu`.
pub fn average_coefficient<F>(f: F, mu: GaussianMeasure) -> AveragedCoefficient
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    AveragedCoefficient {
        f: Arc::new(f),
        mu: InvariantMeasure::Gaussian(mu),
    }
}

/// Averages `f(x, u)` over the samples of an empirical invariant measure.
pub fn average_coefficient_empirical<F>(f: F, samples: Vec<f64>) -> AveragedCoefficient
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    AveragedCoefficient {
        f: Arc::new(f),
        mu: InvariantMeasure::Empirical(samples),
    }
}

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

/// Linear structure of a custom model, `dY = a(T) L(X) U dt + ...`,
/// `dU = -b(T) q(X) U dt + g(T) dV`, needed to form its reduction.
#[derive(Clone)]
pub struct LinearParts {
    pub a: ThetaFn,
    pub beta: ThetaFn,
    pub gamma: ThetaFn,
    pub lambda: FastFn,
    pub q: FastFn,
    /// Invariant measure of the fast component as a function of theta.
    pub invariant: Arc<dyn Fn(f64) -> InvariantMeasure + Send + Sync>,
}

/// The full multiscale model.
///
/// Coefficients are stored pre-division by the scale parameter: the fast
/// drift is `b(x, u, theta) / delta` and the fast diffusion
/// `sigma(x, u, theta) / sqrt(delta)`.
#[derive(Clone)]
pub struct ModelSpec {
    pub h: Coef,
    pub g: Coef,
    pub tau: Coef,
    pub fast_drift: Coef,
    pub fast_diffusion: Coef,
    /// Observation noise scale.
    pub sigma_obs: f64,
    /// Constant fast diffusion scale (registered examples).
    pub sigma_fast: f64,
    pub delta: f64,
    pub theta_bounds: (f64, f64),
    pub tag: ExampleTag,
    pub linear_parts: Option<LinearParts>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("tag", &self.tag)
            .field("sigma_obs", &self.sigma_obs)
            .field("sigma_fast", &self.sigma_fast)
            .field("delta", &self.delta)
            .field("theta_bounds", &self.theta_bounds)
            .finish()
    }
}

impl ModelSpec {
    fn validate(&self) -> Result<(), ModelError> {
        if self.sigma_obs <= 0.0 {
            return Err(ModelError::InvalidParameter("Sigma must be > 0".into()));
        }
        if self.delta <= 0.0 || self.delta > 1.0 {
            return Err(ModelError::InvalidParameter("delta must be in (0, 1]".into()));
        }
        if self.theta_bounds.0 >= self.theta_bounds.1 {
            return Err(ModelError::InvalidParameter(
                "theta bounds must satisfy lo < hi".into(),
            ));
        }
        Ok(())
    }

    /// Example 1: the fast process enters the observation drift multiplicatively.
    pub fn example1(
        delta: f64,
        sigma_obs: f64,
        sigma_fast: f64,
        theta_bounds: (f64, f64),
    ) -> Result<Self, ModelError> {
        let spec = Self {
            h: Arc::new(|x, u, _| x.exp() * u),
            g: Arc::new(|_, u, _| -u),
            tau: Arc::new(|_, _, _| 1.0),
            fast_drift: Arc::new(|x, _, th| th - x),
            fast_diffusion: Arc::new(move |_, _, _| sigma_fast),
            sigma_obs,
            sigma_fast,
            delta,
            theta_bounds,
            tag: ExampleTag::Example1,
            linear_parts: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Example 2: the fast process modulates the mean reversion of `U`.
    pub fn example2(
        delta: f64,
        sigma_obs: f64,
        sigma_fast: f64,
        theta_bounds: (f64, f64),
    ) -> Result<Self, ModelError> {
        let spec = Self {
            h: Arc::new(|_, u, _| u),
            g: Arc::new(|x, u, _| -(x.exp()) * u),
            tau: Arc::new(|_, _, _| 1.0),
            fast_drift: Arc::new(|x, _, th| th - x),
            fast_diffusion: Arc::new(move |_, _, _| sigma_fast),
            sigma_obs,
            sigma_fast,
            delta,
            theta_bounds,
            tag: ExampleTag::Example2,
            linear_parts: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Example 3: `U` is a symmetric 2-state chain with flip rate `theta` and
    /// the fast process relaxes towards it.
    pub fn example3(
        delta: f64,
        sigma_obs: f64,
        sigma_fast: f64,
        theta_bounds: (f64, f64),
    ) -> Result<Self, ModelError> {
        if theta_bounds.0 < 0.0 {
            return Err(ModelError::InvalidParameter(
                "Example 3 requires theta >= 0".into(),
            ));
        }
        let spec = Self {
            h: Arc::new(|x, _, _| x),
            g: Arc::new(|_, _, _| 0.0),
            tau: Arc::new(|_, _, _| 0.0),
            fast_drift: Arc::new(|x, u, _| u - x),
            fast_diffusion: Arc::new(move |_, _, _| sigma_fast),
            sigma_obs,
            sigma_fast,
            delta,
            theta_bounds,
            tag: ExampleTag::Example3,
            linear_parts: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A linear-Gaussian model with no fast component, used to embed a
    /// reduced model back into the full-system machinery (particle-filter
    /// cross-checks against the exact Kalman solution).
    pub fn embedded_linear(
        abar: f64,
        betabar: f64,
        gamma: f64,
        sigma_obs: f64,
        theta_bounds: (f64, f64),
    ) -> Result<Self, ModelError> {
        let parts = LinearParts {
            a: Arc::new(move |_| abar),
            beta: Arc::new(move |_| betabar),
            gamma: Arc::new(move |_| gamma),
            lambda: Arc::new(|_| 1.0),
            q: Arc::new(|_| 1.0),
            invariant: Arc::new(|_| InvariantMeasure::Gaussian(GaussianMeasure::new(0.0, 0.0))),
        };
        let spec = Self {
            h: Arc::new(move |_, u, _| abar * u),
            g: Arc::new(move |_, u, _| -betabar * u),
            tau: Arc::new(move |_, _, _| gamma),
            fast_drift: Arc::new(|x, _, _| -x),
            fast_diffusion: Arc::new(|_, _, _| 0.0),
            sigma_obs,
            sigma_fast: 0.0,
            delta: 1.0,
            theta_bounds,
            tag: ExampleTag::Custom,
            linear_parts: Some(parts),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A custom model with explicit linear structure.
    #[allow(clippy::too_many_arguments)]
    pub fn custom_linear(
        h: Coef,
        g: Coef,
        tau: Coef,
        fast_drift: Coef,
        fast_diffusion: Coef,
        sigma_obs: f64,
        sigma_fast: f64,
        delta: f64,
        theta_bounds: (f64, f64),
        parts: LinearParts,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            h,
            g,
            tau,
            fast_drift,
            fast_diffusion,
            sigma_obs,
            sigma_fast,
            delta,
            theta_bounds,
            tag: ExampleTag::Custom,
            linear_parts: Some(parts),
        };
        spec.validate()?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// ReducedLinearModel
// ---------------------------------------------------------------------------

/// The homogenized linear model `dY = abar U dt + S dW`,
/// `dU = -betabar U dt + gamma dV`, together with theta-derivatives.
#[derive(Clone)]
pub struct ReducedLinearModel {
    abar: ThetaFn,
    betabar: ThetaFn,
    gamma: ThetaFn,
    d_abar: ThetaFn,
    d_betabar: ThetaFn,
    d_gamma: ThetaFn,
    pub sigma_obs: f64,
}

impl fmt::Debug for ReducedLinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedLinearModel")
            .field("sigma_obs", &self.sigma_obs)
            .finish()
    }
}

impl ReducedLinearModel {
    pub fn new(
        abar: ThetaFn,
        betabar: ThetaFn,
        gamma: ThetaFn,
        d_abar: ThetaFn,
        d_betabar: ThetaFn,
        d_gamma: ThetaFn,
        sigma_obs: f64,
    ) -> Self {
        Self {
            abar,
            betabar,
            gamma,
            d_abar,
            d_betabar,
            d_gamma,
            sigma_obs,
        }
    }

    pub fn abar(&self, theta: f64) -> f64 {
        (self.abar)(theta)
    }
    pub fn betabar(&self, theta: f64) -> f64 {
        (self.betabar)(theta)
    }
    pub fn gamma(&self, theta: f64) -> f64 {
        (self.gamma)(theta)
    }
    pub fn d_abar(&self, theta: f64) -> f64 {
        (self.d_abar)(theta)
    }
    pub fn d_betabar(&self, theta: f64) -> f64 {
        (self.d_betabar)(theta)
    }
    pub fn d_gamma(&self, theta: f64) -> f64 {
        (self.d_gamma)(theta)
    }

    /// `kappa = sqrt(betabar^2 + gamma^2 abar^2 / Sigma^2)`.
    pub fn kappa(&self, theta: f64) -> f64 {
        let b = self.betabar(theta);
        let ga = self.gamma(theta) * self.abar(theta) / self.sigma_obs;
        (b * b + ga * ga).sqrt()
    }

    /// `zeta = kappa - betabar`, the stationary gain factor.
    pub fn zeta(&self, theta: f64) -> f64 {
        self.kappa(theta) - self.betabar(theta)
    }

    /// Derivative of `kappa` in theta, from the chain rule on its definition.
    pub fn d_kappa(&self, theta: f64) -> f64 {
        let b = self.betabar(theta);
        let a = self.abar(theta);
        let g = self.gamma(theta);
        let s2 = self.sigma_obs * self.sigma_obs;
        let k = self.kappa(theta);
        (b * self.d_betabar(theta)
            + (g * self.d_gamma(theta) * a * a + g * g * a * self.d_abar(theta)) / s2)
            / k
    }

    /// Derivative of `zeta` in theta.
    pub fn d_zeta(&self, theta: f64) -> f64 {
        self.d_kappa(theta) - self.d_betabar(theta)
    }

    /// Stationary solution of the Riccati equation, `Sigma^2 zeta / abar^2`.
    ///
    /// `zeta = 0` forces the stationary variance to 0 even when `abar = 0`.
    pub fn sigma_hat_inf(&self, theta: f64) -> f64 {
        let z = self.zeta(theta);
        if z <= 0.0 {
            return 0.0;
        }
        let a = self.abar(theta);
        self.sigma_obs * self.sigma_obs * z / (a * a)
    }
}

fn fd_step(theta: f64) -> f64 {
    1e-5 * theta.abs().max(1.0)
}

/// Homogenizes a [`ModelSpec`] into its [`ReducedLinearModel`].
///
/// Examples 1 and 2 get their closed-form averaged coefficients and analytic
/// derivatives; custom linear models get quadrature-averaged coefficients and
/// central finite-difference derivatives. Example 3 has no linear reduction
/// (its reduced model is a 2-state chain, handled by the Wonham filter).
pub fn reduce(model: &ModelSpec) -> Result<ReducedLinearModel, ModelError> {
    let sv = model.sigma_fast * model.sigma_fast;
    match model.tag {
        ExampleTag::Example1 => {
            let abar: ThetaFn = Arc::new(move |th: f64| (th + sv / 4.0).exp());
            Ok(ReducedLinearModel::new(
                abar.clone(),
                Arc::new(|_| 1.0),
                Arc::new(|_| 1.0),
                abar,
                Arc::new(|_| 0.0),
                Arc::new(|_| 0.0),
                model.sigma_obs,
            ))
        }
        ExampleTag::Example2 => {
            let betabar: ThetaFn = Arc::new(move |th: f64| (th + sv / 4.0).exp());
            Ok(ReducedLinearModel::new(
                Arc::new(|_| 1.0),
                betabar.clone(),
                Arc::new(|_| 1.0),
                Arc::new(|_| 0.0),
                betabar,
                Arc::new(|_| 0.0),
                model.sigma_obs,
            ))
        }
        ExampleTag::Example3 => Err(ModelError::NotReducible(ExampleTag::Example3)),
        ExampleTag::Custom => {
            let parts = model.linear_parts.clone().ok_or_else(|| {
                ModelError::InvalidParameter(
                    "custom model without linear structure cannot be reduced".into(),
                )
            })?;
            let averaged = |f: FastFn, scale: ThetaFn| -> ThetaFn {
                let inv = parts.invariant.clone();
                Arc::new(move |th: f64| {
                    let f = f.clone();
                    let coef = AveragedCoefficient {
                        f: Arc::new(move |x, _| f(x)),
                        mu: inv(th),
                    };
                    scale(th) * coef.eval(0.0).unwrap_or(f64::NAN)
                })
            };
            let abar = averaged(parts.lambda.clone(), parts.a.clone());
            let betabar = averaged(parts.q.clone(), parts.beta.clone());
            let gamma = parts.gamma.clone();
            let central = |f: ThetaFn| -> ThetaFn {
                Arc::new(move |th| {
                    let h = fd_step(th);
                    (f(th + h) - f(th - h)) / (2.0 * h)
                })
            };
            let d_abar = central(abar.clone());
            let d_betabar = central(betabar.clone());
            let d_gamma = central(gamma.clone());
            Ok(ReducedLinearModel::new(
                abar,
                betabar,
                gamma,
                d_abar,
                d_betabar,
                d_gamma,
                model.sigma_obs,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn ou_invariant_measure() {
        let m = invariant_measure_ou(0.0, 0.1);
        assert_abs_diff_eq!(m.mean, 0.0);
        assert_abs_diff_eq!(m.variance, 0.005, epsilon = 1e-15);

        let point = invariant_measure_ou(2.0, 0.0);
        assert_abs_diff_eq!(point.mean, 2.0);
        assert_abs_diff_eq!(point.variance, 0.0);
    }

    #[test]
    fn gh_weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 16, 64, 128] {
            let (_, w) = gauss_hermite(n);
            let s: f64 = w.iter().sum();
            assert_relative_eq!(s, std::f64::consts::PI.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn average_of_x_independent_integrand_is_identity() {
        let mu = GaussianMeasure::new(3.0, 0.7);
        let avg = average_coefficient(|_, u| u, mu);
        for u in [-2.0, 0.0, 1.5, 10.0] {
            assert_abs_diff_eq!(avg.eval(u).unwrap(), u, epsilon = 1e-12);
        }
    }

    #[test]
    fn average_of_exp_matches_lognormal_moment() {
        // E[e^X] for X ~ N(theta, sigma^2/2) is e^{theta + sigma^2/4}.
        let mu = GaussianMeasure::new(0.0, 0.005);
        let avg = average_coefficient(|x: f64, u| x.exp() * u, mu);
        let expected = (0.0f64 + 0.01 / 4.0).exp();
        assert_relative_eq!(avg.eval(1.0).unwrap(), expected, max_relative = 1e-10);
        assert_relative_eq!(expected, 1.0025031, max_relative = 1e-7);
        assert_relative_eq!(avg.eval(2.0).unwrap(), 2.0 * expected, max_relative = 1e-10);
    }

    #[test]
    fn average_of_x_is_gaussian_mean() {
        let mu = GaussianMeasure::new(1.3, 0.02);
        let avg = average_coefficient(|x, _| x, mu);
        assert_abs_diff_eq!(avg.eval(0.0).unwrap(), 1.3, epsilon = 1e-10);
    }

    #[test]
    fn quadrature_rejects_non_integrable_f() {
        // e^{x^2} is not integrable against any nondegenerate Gaussian.
        let mu = GaussianMeasure::new(0.0, 1.0);
        let avg = average_coefficient(|x: f64, _| (x * x).exp(), mu);
        assert!(matches!(
            avg.eval(0.0),
            Err(ModelError::QuadratureDiverged { .. })
        ));
    }

    #[test]
    fn reduce_example1_closed_form() {
        let model = ModelSpec::example1(0.01, 0.1, 0.1, (-1.0, 2.0)).unwrap();
        let red = reduce(&model).unwrap();
        assert_relative_eq!(red.abar(0.0), 1.0025031, max_relative = 1e-7);
        assert_abs_diff_eq!(red.betabar(0.0), 1.0);
        assert_abs_diff_eq!(red.gamma(0.0), 1.0);

        // Quadrature oracle for abar at several theta.
        for th in [-1.0, 0.0, 1.0, 1.5] {
            let mu = invariant_measure_ou(th, 0.1);
            let avg = average_coefficient(|x: f64, _| x.exp(), mu);
            assert_relative_eq!(red.abar(th), avg.eval(0.0).unwrap(), max_relative = 1e-8);
        }
    }

    #[test]
    fn reduce_example2_closed_form() {
        let model = ModelSpec::example2(0.01, 0.1, 0.1, (0.0, 2.0)).unwrap();
        let red = reduce(&model).unwrap();
        assert_relative_eq!(red.betabar(1.0), 2.7251, max_relative = 1e-4);
        assert_abs_diff_eq!(red.abar(1.0), 1.0);
    }

    #[test]
    fn reduce_degenerate_fast_noise() {
        let model = ModelSpec::example1(0.01, 0.1, 0.0, (-1.0, 2.0)).unwrap();
        let red = reduce(&model).unwrap();
        assert_abs_diff_eq!(red.abar(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn reduce_rejects_example3() {
        let model = ModelSpec::example3(0.01, 0.1, 0.1, (0.0, 3.0)).unwrap();
        assert!(matches!(reduce(&model), Err(ModelError::NotReducible(_))));
    }

    #[test]
    fn kappa_zeta_invariants_on_grid() {
        for model in [
            ModelSpec::example1(0.01, 0.1, 0.1, (-1.0, 2.0)).unwrap(),
            ModelSpec::example2(0.01, 0.1, 0.1, (-1.0, 2.0)).unwrap(),
        ] {
            let red = reduce(&model).unwrap();
            let (lo, hi) = model.theta_bounds;
            for i in 0..=100 {
                let th = lo + (hi - lo) * i as f64 / 100.0;
                assert!(red.kappa(th) >= red.betabar(th));
                assert!(red.zeta(th) >= 0.0);
            }
        }
    }

    #[test]
    fn finite_difference_matches_analytic_derivatives() {
        for model in [
            ModelSpec::example1(0.01, 0.1, 0.1, (-1.0, 2.0)).unwrap(),
            ModelSpec::example2(0.01, 0.1, 0.1, (-1.0, 2.0)).unwrap(),
        ] {
            let red = reduce(&model).unwrap();
            let h = 1e-5;
            let (lo, hi) = model.theta_bounds;
            for i in 0..=100 {
                let th = lo + (hi - lo) * i as f64 / 100.0;
                let fd_a = (red.abar(th + h) - red.abar(th - h)) / (2.0 * h);
                let fd_b = (red.betabar(th + h) - red.betabar(th - h)) / (2.0 * h);
                assert_relative_eq!(fd_a, red.d_abar(th), max_relative = 1e-6, epsilon = 1e-9);
                assert_relative_eq!(fd_b, red.d_betabar(th), max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn embedded_linear_reduces_to_itself() {
        let model = ModelSpec::embedded_linear(1.0025, 1.0, 1.0, 0.1, (-1.0, 2.0)).unwrap();
        let red = reduce(&model).unwrap();
        assert_relative_eq!(red.abar(0.3), 1.0025, max_relative = 1e-12);
        assert_relative_eq!(red.betabar(0.3), 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(red.d_abar(0.3), 0.0, epsilon = 1e-9);
    }
}
