//! Built-in test problems with known solutions and, where available, known
//! limiting covariances.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fields::contracts::{
    probe_estimator_lipschitz, probe_jacobian, probe_lipschitz, probe_time_growth, probe_unbiasedness,
    probe_variance, BoundCheck, ProbeConfig,
};
use crate::fields::{additive_noise_estimator, induced_one_norm, subsample_estimator, RngStream, StochasticEstimator, VectorField};
use crate::propagator::{sigma, SigmaOptions};
use crate::reference::{solve_reference_with, ReferenceOptions, ReferenceSolution};

type SolutionFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;
type SigmaFn = dyn Fn(f64) -> DMatrix<f64> + Send + Sync;

/// A vector field, its estimator, initial value and horizon, plus whatever
/// closed forms are known.
#[derive(Clone)]
pub struct ModelSpec {
    name: &'static str,
    field: VectorField,
    estimator: Arc<dyn StochasticEstimator>,
    x0: DVector<f64>,
    horizon: f64,
    solution: Option<Arc<SolutionFn>>,
    sigma: Option<Arc<SigmaFn>>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("x0", &self.x0.as_slice())
            .field("horizon", &self.horizon)
            .field("closed_solution", &self.solution.is_some())
            .field("closed_sigma", &self.sigma.is_some())
            .finish()
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn estimator(&self) -> &dyn StochasticEstimator {
        self.estimator.as_ref()
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn has_closed_solution(&self) -> bool {
        self.solution.is_some()
    }

    pub fn solution(&self, t: f64) -> Option<DVector<f64>> {
        self.solution.as_ref().map(|s| s(t))
    }

    pub fn has_closed_sigma(&self) -> bool {
        self.sigma.is_some()
    }

    pub fn closed_sigma(&self, t: f64) -> Option<DMatrix<f64>> {
        self.sigma.as_ref().map(|s| s(t))
    }

    /// Reference solution on a uniform power-of-two grid with at least
    /// `min_steps` steps, so dyadic times up to that level are grid nodes.
    pub fn reference(&self, tol: f64, min_steps: usize) -> Result<ReferenceSolution> {
        let opts = ReferenceOptions {
            min_steps: min_steps.next_power_of_two(),
            ..ReferenceOptions::new(tol)
        };
        solve_reference_with(&self.field, &self.x0, self.horizon, opts)
    }

    /// `Sigma(t)`: the closed form when there is one, quadrature otherwise.
    pub fn predicted_sigma(&self, reference: &ReferenceSolution, t: f64, opts: SigmaOptions) -> Result<DMatrix<f64>> {
        match self.closed_sigma(t) {
            Some(s) => Ok(s),
            None => Ok(sigma(&self.field, self.estimator(), reference, t, opts)?.value),
        }
    }

    /// Probe box scaled to the initial value, over the model horizon.
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            horizon: self.horizon,
            radius: 2.0 * self.x0.amax().max(1.0),
            ..ProbeConfig::default()
        }
    }

    /// Runs the regularity probes, with the estimator checks taken along
    /// `reference`.
    pub fn check_contracts(&self, cfg: &ProbeConfig, reference: &ReferenceSolution, draws: usize) -> ContractReport {
        let along: Vec<(f64, DVector<f64>)> = (0..=8)
            .map(|k| {
                let t = self.horizon * k as f64 / 8.0;
                (t, reference.eval(t))
            })
            .collect();
        let e = self.estimator();
        ContractReport {
            time_growth: probe_time_growth(&self.field, cfg),
            lipschitz: probe_lipschitz(&self.field, cfg),
            estimator_lipschitz: probe_estimator_lipschitz(e, cfg),
            jacobian_errors: probe_jacobian(&self.field, cfg, &JACOBIAN_STEPS),
            jacobian_scale: 1.0 + self.field.lipschitz(),
            unbiasedness_z: probe_unbiasedness(e, &self.field, &along, draws, cfg.seed),
            max_variance: probe_variance(e, &along, draws, cfg.seed),
            variance_bound: e.variance_bound(),
            draws,
        }
    }
}

const JACOBIAN_STEPS: [f64; 2] = [1e-3, 1e-6];

/// Largest z-score accepted by [`ContractReport::passed`].
pub const MAX_BIAS_Z: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractReport {
    pub time_growth: BoundCheck,
    pub lipschitz: BoundCheck,
    pub estimator_lipschitz: BoundCheck,
    /// Forward-difference errors at steps 1e-3 and 1e-6.
    pub jacobian_errors: Option<Vec<f64>>,
    jacobian_scale: f64,
    pub unbiasedness_z: f64,
    pub max_variance: f64,
    pub variance_bound: f64,
    draws: usize,
}

impl ContractReport {
    pub fn jacobian_ok(&self) -> bool {
        self.jacobian_errors
            .as_ref()
            .is_none_or(|e| e[1] <= 1e-4 * self.jacobian_scale)
    }

    /// Sample variances exceed the bound only by sampling noise, allowed
    /// at five standard errors of a Gaussian variance estimate.
    pub fn variance_ok(&self) -> bool {
        let slack = 5.0 * (2.0 / (self.draws - 1) as f64).sqrt();
        self.max_variance <= self.variance_bound * (1.0 + slack) + 1e-12
    }

    pub fn passed(&self) -> bool {
        self.time_growth.satisfied()
            && self.lipschitz.satisfied()
            && self.estimator_lipschitz.satisfied()
            && self.jacobian_ok()
            && self.unbiasedness_z <= MAX_BIAS_Z
            && self.variance_ok()
    }
}

fn check_start(x0: &DVector<f64>, horizon: f64) -> Result<()> {
    if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("initial value must be a finite nonempty vector"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// `int_0^t e^{As} V e^{A's} ds` from one block exponential:
/// `exp([[-A, V], [0, A']] t) = [[*, G], [0, e^{A't}]]` and the integral is
/// `e^{At} G`.
pub fn lyapunov_integral(a: &DMatrix<f64>, v: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(-a * t));
    block.view_mut((0, d), (d, d)).copy_from(&(v * t));
    block.view_mut((d, d), (d, d)).copy_from(&(a.transpose() * t));
    let e = block.exp();
    let g = e.view((0, d), (d, d)).into_owned();
    let ead = e.view((d, d), (d, d)).transpose();
    let s = ead * g;
    (&s + s.transpose()) * 0.5
}

/// `x' = A x` with additive Gaussian noise of covariance `noise_cov`.
pub fn model_linear(a: DMatrix<f64>, noise_cov: DMatrix<f64>, x0: DVector<f64>, horizon: f64) -> Result<ModelSpec> {
    check_start(&x0, horizon)?;
    let d = x0.len();
    if a.shape() != (d, d) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("A must be a finite {d}x{d} matrix")));
    }
    let field = VectorField::linear(a.clone());
    let estimator = additive_noise_estimator(field.clone(), noise_cov.clone())?;
    let solution = {
        let (a, x0) = (a.clone(), x0.clone());
        move |t: f64| (&a * t).exp() * &x0
    };
    let sigma: Arc<SigmaFn> = if d == 1 {
        let (a, v) = (a[(0, 0)], noise_cov[(0, 0)]);
        Arc::new(move |t: f64| {
            let s = if a == 0.0 { v * t } else { v * (2.0 * a * t).exp_m1() / (2.0 * a) };
            DMatrix::from_element(1, 1, s)
        })
    } else {
        Arc::new(move |t: f64| lyapunov_integral(&a, &noise_cov, t))
    };
    Ok(ModelSpec {
        name: "linear",
        field,
        estimator: Arc::new(estimator),
        x0,
        horizon,
        solution: Some(Arc::new(solution)),
        sigma: Some(sigma),
    })
}

/// `x' = r x (1 - x / cap)` on `[-clip, clip]`, continued linearly with the
/// boundary slope outside so that the field is globally Lipschitz and C^1,
/// with additive noise of variance `noise_v`.
pub fn model_logistic(r: f64, cap: f64, clip: f64, noise_v: f64, x0: f64, horizon: f64) -> Result<ModelSpec> {
    let x0v = DVector::from_element(1, x0);
    check_start(&x0v, horizon)?;
    if !r.is_finite() || !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::domain("logistic model needs finite r and positive cap"));
    }
    if !(clip > x0.abs() && clip > cap && clip.is_finite()) {
        return Err(Error::domain(format!(
            "clip {clip} must exceed |x0| = {} and cap = {cap}",
            x0.abs()
        )));
    }
    let raw = move |x: f64| r * x * (1.0 - x / cap);
    let slope = move |x: f64| r * (1.0 - 2.0 * x / cap);
    let clamped = move |x: f64| {
        if x > clip {
            raw(clip) + slope(clip) * (x - clip)
        } else if x < -clip {
            raw(-clip) + slope(-clip) * (x + clip)
        } else {
            raw(x)
        }
    };
    let k2 = r.abs() * (1.0 + 2.0 * clip / cap);
    let field = VectorField::new(1, 0.0, k2, move |_, x: &DVector<f64>| x.map(clamped))
        .with_jacobian(move |_, x: &DVector<f64>| DMatrix::from_element(1, 1, slope(x[0].clamp(-clip, clip))));
    let estimator = additive_noise_estimator(field.clone(), DMatrix::from_element(1, 1, noise_v))?;
    // The closed form holds while the solution stays between x0 and cap, or
    // at the fixed point 0.
    let stays_inside = x0 == 0.0 || (x0 > 0.0 && (x0 <= cap || r >= 0.0));
    let solution: Option<Arc<SolutionFn>> = stays_inside.then(|| {
        Arc::new(move |t: f64| {
            let x = if x0 == 0.0 { 0.0 } else { cap / (1.0 + (cap / x0 - 1.0) * (-r * t).exp()) };
            DVector::from_element(1, x)
        }) as Arc<SolutionFn>
    });
    Ok(ModelSpec {
        name: "logistic",
        field,
        estimator: Arc::new(estimator),
        x0: x0v,
        horizon,
        solution,
        sigma: None,
    })
}

/// `F = sum_i (A_i x + b_i)` estimated by mini-batches of `batch` components.
///
/// The declared variance bound holds for every state the solution can
/// reach: `|x(t)|_1 <= (|x0|_1 + T |b|_1) e^{|A|_1 T}` bounds each component
/// value, and sampling without replacement has variance
/// `m (m - batch) / (batch (m - 1))` times at most the mean square.
pub fn model_affine_sum(
    components: Vec<(DMatrix<f64>, DVector<f64>)>,
    batch: usize,
    x0: DVector<f64>,
    horizon: f64,
) -> Result<ModelSpec> {
    check_start(&x0, horizon)?;
    let d = x0.len();
    let m = components.len();
    if m == 0 {
        return Err(Error::domain("need at least one component"));
    }
    if components.iter().any(|(a, b)| a.shape() != (d, d) || b.len() != d) {
        return Err(Error::domain(format!("components must be {d}x{d} matrices and {d}-vectors")));
    }
    let a_sum = components.iter().fold(DMatrix::zeros(d, d), |acc, (a, _)| acc + a);
    let b_sum = components.iter().fold(DVector::zeros(d), |acc, (_, b)| acc + b);
    let fields: Vec<VectorField> = components
        .iter()
        .map(|(a, b)| VectorField::affine(a.clone(), b.clone()))
        .collect();
    let mut estimator = subsample_estimator(fields, batch)?;
    // Summing the components in order keeps the full batch bit-identical
    // to the field.
    let field = estimator.mean_field();
    if batch < m {
        let reach = (x0.lp_norm(1) + horizon * b_sum.lp_norm(1)) * (induced_one_norm(&a_sum) * horizon).exp();
        let factor = (m * (m - batch)) as f64 / (batch * (m - 1)) as f64;
        let k3 = (0..d)
            .map(|i| {
                factor
                    * components
                        .iter()
                        .map(|(a, b)| (a.row(i).lp_norm(1) * reach + b[i].abs()).powi(2))
                        .sum::<f64>()
            })
            .fold(0.0, f64::max);
        estimator = estimator.with_variance_bound(k3);
    }
    // Augmented system [x; 1]' = [[A, b], [0, 0]] [x; 1].
    let mut aug = DMatrix::zeros(d + 1, d + 1);
    aug.view_mut((0, 0), (d, d)).copy_from(&a_sum);
    aug.view_mut((0, d), (d, 1)).copy_from(&b_sum);
    let start = x0.clone().push(1.0);
    let solution = move |t: f64| {
        let y = (&aug * t).exp() * &start;
        y.rows(0, d).into_owned()
    };
    Ok(ModelSpec {
        name: "subsampled_sum",
        field,
        estimator: Arc::new(estimator),
        x0,
        horizon,
        solution: Some(Arc::new(solution)),
        sigma: None,
    })
}

/// `m` affine components with entries uniform in `[-1, 1] / m`, drawn from
/// `seed`; the dimension is that of `x0`.
pub fn model_subsampled_sum(m: usize, seed: u64, batch: usize, x0: DVector<f64>, horizon: f64) -> Result<ModelSpec> {
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 components, got {m}")));
    }
    let d = x0.len();
    let mut rng = RngStream::new(seed, 0);
    let scale = 1.0 / m as f64;
    let components = (0..m)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| scale * rng.random_range(-1.0..=1.0));
            let b = DVector::from_fn(d, |_, _| scale * rng.random_range(-1.0..=1.0));
            (a, b)
        })
        .collect();
    model_affine_sum(components, batch, x0, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::gamma;
    use crate::scheme::{deterministic_euler, run_scheme};
    use crate::grid::dyadic_partition;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn assert_solution_matches_reference(model: &ModelSpec) {
        let tol = 1e-9;
        let r = model.reference(tol, 1 << 16).unwrap();
        for k in 0..50 {
            let t = model.horizon() * k as f64 / 49.0;
            let exact = model.solution(t).unwrap();
            let diff = (r.eval(t) - &exact).lp_norm(1);
            assert!(diff < 10.0 * tol * (1.0 + exact.lp_norm(1)), "{} at t = {t}: {diff:e}", model.name());
        }
    }

    #[test]
    fn linear_examples() {
        let flat = model_linear(dmatrix![0.0], dmatrix![1.0], dvector![1.0], 2.0).unwrap();
        for t in [0.0, 0.5, 2.0] {
            assert_eq!(flat.closed_sigma(t).unwrap()[(0, 0)], t);
        }
        let growth = model_linear(dmatrix![1.0], dmatrix![1.0], dvector![1.0], 1.0).unwrap();
        let s = growth.closed_sigma(1.0).unwrap()[(0, 0)];
        assert_relative_eq!(s, (std::f64::consts::E.powi(2) - 1.0) / 2.0, epsilon = 1e-14);
        assert!((s - 3.194528).abs() < 1e-6);
        assert_relative_eq!(growth.solution(1.0).unwrap()[0], std::f64::consts::E, epsilon = 1e-14);

        let still = model_linear(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), dvector![1.0, 2.0], 1.0).unwrap();
        assert_eq!(still.solution(0.7).unwrap(), dvector![1.0, 2.0]);
        assert_eq!(still.closed_sigma(0.7).unwrap(), DMatrix::zeros(2, 2));
        assert!(still.estimator().is_deterministic() || still.estimator().variance_bound() == 0.0);
    }

    #[test]
    fn linear_rejects_bad_input() {
        assert!(model_linear(dmatrix![1.0, 0.0], dmatrix![1.0], dvector![1.0], 1.0).is_err());
        assert!(model_linear(dmatrix![1.0], dmatrix![-1.0], dvector![1.0], 1.0).is_err());
        assert!(model_linear(dmatrix![1.0], dmatrix![1.0], dvector![1.0], 0.0).is_err());
    }

    #[test]
    fn block_exponential_matches_quadrature() {
        let a = dmatrix![-0.5, 1.0; -1.0, -0.2];
        let v = dmatrix![1.0, 0.3; 0.3, 0.5];
        let model = model_linear(a, v, dvector![1.0, 0.0], 2.0).unwrap();
        let r = model.reference(1e-9, 1 << 10).unwrap();
        for t in [0.0, 0.5, 1.3, 2.0] {
            let closed = model.closed_sigma(t).unwrap();
            let quad = sigma(model.field(), model.estimator(), &r, t, SigmaOptions::default()).unwrap();
            assert!((&closed - &quad.value).abs().max() < 3.0 * quad.quad_err + 1e-8, "t = {t}");
        }
    }

    #[test]
    fn scalar_closed_sigma_matches_quadrature() {
        for a in [-1.5, 0.0, 0.7] {
            let model = model_linear(dmatrix![a], dmatrix![0.5], dvector![1.0], 1.0).unwrap();
            let r = model.reference(1e-9, 1 << 10).unwrap();
            let quad = sigma(model.field(), model.estimator(), &r, 1.0, SigmaOptions::default()).unwrap();
            assert!((model.closed_sigma(1.0).unwrap() - quad.value).abs().max() < 3.0 * quad.quad_err + 1e-10);
            assert_relative_eq!(model.closed_sigma(1.0).unwrap()[(0, 0)], lyapunov_integral(&dmatrix![a], &dmatrix![0.5], 1.0)[(0, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_solutions_match_reference() {
        assert_solution_matches_reference(&model_linear(dmatrix![1.0], dmatrix![0.5], dvector![1.0], 1.0).unwrap());
        assert_solution_matches_reference(
            &model_linear(dmatrix![-0.5, 1.0; -1.0, -0.2], DMatrix::identity(2, 2), dvector![1.0, 0.0], 2.0).unwrap(),
        );
        assert_solution_matches_reference(&model_logistic(1.0, 2.0, 4.0, 0.1, 1.0, 1.0).unwrap());
        assert_solution_matches_reference(&model_logistic(-0.8, 2.0, 4.0, 0.1, 1.5, 2.0).unwrap());
        assert_solution_matches_reference(&model_logistic(1.3, 2.0, 4.0, 0.1, 3.0, 2.0).unwrap());
        assert_solution_matches_reference(&model_subsampled_sum(5, 3, 2, dvector![1.0, -0.5, 0.25], 1.0).unwrap());
    }

    #[test]
    fn logistic_examples() {
        let m = model_logistic(1.0, 2.0, 4.0, 0.0, 1.0, 1.0).unwrap();
        let x1 = m.solution(1.0).unwrap()[0];
        assert_relative_eq!(x1, 2.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        assert!((x1 - 1.462117).abs() < 1e-6);
        let flat = model_logistic(0.0, 2.0, 4.0, 0.0, 1.3, 1.0).unwrap();
        assert_eq!(flat.solution(0.9).unwrap()[0], 1.3);
        let fixed = model_logistic(1.0, 2.0, 4.0, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(fixed.solution(0.9).unwrap()[0], 2.0);
        let euler = deterministic_euler(fixed.field(), &dyadic_partition(5, 1.0).unwrap(), fixed.x0()).unwrap();
        assert!(euler.values().iter().all(|x| x[0] == 2.0));
        assert!(!model_logistic(1.0, 2.0, 4.0, 0.0, -1.0, 1.0).unwrap().has_closed_solution());
    }

    #[test]
    fn logistic_rejects_bad_parameters() {
        assert!(model_logistic(1.0, 2.0, 1.5, 0.0, 1.0, 1.0).is_err());
        assert!(model_logistic(1.0, 2.0, 3.0, 0.0, 3.5, 1.0).is_err());
        assert!(model_logistic(1.0, -2.0, 3.0, 0.0, 1.0, 1.0).is_err());
        assert!(model_logistic(1.0, 2.0, 3.0, -0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn logistic_extension_is_lipschitz_and_smooth() {
        let m = model_logistic(1.5, 2.0, 3.0, 0.0, 1.0, 1.0).unwrap();
        let cfg = ProbeConfig {
            radius: 10.0,
            probes: 2000,
            ..ProbeConfig::default()
        };
        assert!(probe_lipschitz(m.field(), &cfg).satisfied());
        let f = |x: f64| m.field().eval(0.0, &dvector![x])[0];
        for edge in [-3.0, 3.0] {
            let h = 1e-7;
            let left = (f(edge) - f(edge - h)) / h;
            let right = (f(edge + h) - f(edge)) / h;
            assert!((left - right).abs() < 1e-5);
        }
    }

    #[test]
    fn subsample_examples() {
        let full = model_subsampled_sum(4, 1, 4, dvector![1.0, 2.0], 1.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        let r = full.reference(1e-9, 64).unwrap();
        assert_eq!(gamma(full.estimator(), full.field(), &r, 0.5, 2, &mut rng).unwrap(), DMatrix::zeros(2, 2));
        let p = dyadic_partition(4, 1.0).unwrap();
        let det = deterministic_euler(full.field(), &p, full.x0()).unwrap();
        let noisy = run_scheme(full.estimator(), &p, full.x0(), &RngStream::new(3, 1)).unwrap();
        for (a, b) in det.values().iter().zip(noisy.values()) {
            assert_eq!(a, b);
        }

        let a1 = dmatrix![0.3, -0.1; 0.2, 0.4];
        let opposite = model_affine_sum(
            vec![(a1.clone(), DVector::zeros(2)), (-&a1, DVector::zeros(2))],
            1,
            dvector![1.0, -2.0],
            1.0,
        )
        .unwrap();
        assert_eq!(opposite.solution(0.8).unwrap(), dvector![1.0, -2.0]);
        let x = dvector![0.5, 1.5];
        let ax = &a1 * &x;
        let g = opposite.estimator().analytic_gamma(0.0, &x).unwrap();
        assert!((g - (&ax * ax.transpose()) * 4.0).amax() < 1e-14);

        let zero_b: Vec<_> = (0..3)
            .map(|i| (DMatrix::from_element(2, 2, 0.1 * i as f64), DVector::zeros(2)))
            .collect();
        let at_origin = model_affine_sum(zero_b, 1, dvector![0.0, 0.0], 1.0).unwrap();
        assert_eq!(at_origin.estimator().analytic_gamma(0.0, &dvector![0.0, 0.0]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn subsample_is_seed_determined() {
        let a = model_subsampled_sum(6, 42, 2, dvector![1.0, 0.0], 1.0).unwrap();
        let b = model_subsampled_sum(6, 42, 2, dvector![1.0, 0.0], 1.0).unwrap();
        let c = model_subsampled_sum(6, 43, 2, dvector![1.0, 0.0], 1.0).unwrap();
        let x = dvector![0.3, -0.7];
        assert_eq!(a.field().eval(0.0, &x), b.field().eval(0.0, &x));
        assert_ne!(a.field().eval(0.0, &x), c.field().eval(0.0, &x));
        assert!(model_subsampled_sum(1, 0, 1, dvector![1.0], 1.0).is_err());
        assert!(model_subsampled_sum(3, 0, 4, dvector![1.0], 1.0).is_err());
    }

    #[test]
    fn builtin_models_pass_contracts() {
        let models = [
            model_linear(dmatrix![1.0], dmatrix![0.5], dvector![1.0], 1.0).unwrap(),
            model_linear(dmatrix![-0.5, 1.0; -1.0, -0.2], dmatrix![1.0, 0.3; 0.3, 0.5], dvector![1.0, 0.0], 2.0).unwrap(),
            model_logistic(1.0, 2.0, 4.0, 0.2, 1.0, 1.0).unwrap(),
            model_subsampled_sum(5, 7, 2, dvector![1.0, -0.5], 1.0).unwrap(),
            model_subsampled_sum(4, 7, 4, dvector![1.0, -0.5], 1.0).unwrap(),
        ];
        for m in &models {
            let r = m.reference(1e-8, 256).unwrap();
            let report = m.check_contracts(&m.probe_config(), &r, 4000);
            assert!(report.passed(), "{}: {report:?}", m.name());
        }
    }

    #[test]
    fn contracts_catch_a_wrong_declaration() {
        let mut m = model_linear(dmatrix![2.0], dmatrix![0.5], dvector![1.0], 1.0).unwrap();
        m.field = VectorField::new(1, 0.0, 1.0, |_, x: &DVector<f64>| x * 2.0);
        let r = m.reference(1e-8, 64).unwrap();
        assert!(!m.check_contracts(&m.probe_config(), &r, 100).passed());
    }
}
