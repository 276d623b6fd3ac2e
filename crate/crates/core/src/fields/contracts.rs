//! Probe-based spot checks of the declared regularity constants.
//!
//! None of these prove anything; they sample points and report the worst
//! case seen, which is enough to catch a wrong declaration.

use nalgebra::DVector;
use rand::Rng;

use super::estimator::StochasticEstimator;
use super::field::VectorField;
use super::rng::RngStream;

const REL_SLACK: f64 = 1e-9;
const ABS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub probes: usize,
    pub horizon: f64,
    /// Probe states are drawn from the box `[-radius, radius]^d`.
    pub radius: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probes: 200,
            horizon: 1.0,
            radius: 2.0,
            seed: 0x5eed,
        }
    }
}

/// Worst observed left-hand side against its declared bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    /// Largest `observed - allowed` over all probes.
    pub worst_excess: f64,
    /// Largest `observed / allowed` (0 when both vanish, infinite when only
    /// the bound vanishes).
    pub worst_ratio: f64,
}

impl BoundCheck {
    fn new() -> Self {
        Self {
            worst_excess: f64::NEG_INFINITY,
            worst_ratio: 0.0,
        }
    }

    fn record(&mut self, observed: f64, allowed: f64) {
        let slack = allowed * REL_SLACK + ABS_SLACK;
        self.worst_excess = self.worst_excess.max(observed - allowed - slack);
        let ratio = if observed <= ABS_SLACK {
            0.0
        } else if allowed == 0.0 {
            f64::INFINITY
        } else {
            observed / allowed
        };
        self.worst_ratio = self.worst_ratio.max(ratio);
    }

    pub fn satisfied(&self) -> bool {
        self.worst_excess <= 0.0
    }
}

fn random_state(dim: usize, radius: f64, rng: &mut RngStream) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius))
}

/// `|F(s,x) - F(t,x)|_1 <= k1 (1 + |x|_1) |s - t|` on random probes.
pub fn probe_time_growth(f: &VectorField, cfg: &ProbeConfig) -> BoundCheck {
    let mut rng = RngStream::new(cfg.seed, 0);
    let mut check = BoundCheck::new();
    for _ in 0..cfg.probes {
        let s = rng.random_range(0.0..=cfg.horizon);
        let t = rng.random_range(0.0..=cfg.horizon);
        let x = random_state(f.dim(), cfg.radius, &mut rng);
        let observed = (f.eval(s, &x) - f.eval(t, &x)).lp_norm(1);
        let allowed = f.time_growth() * (1.0 + x.lp_norm(1)) * (s - t).abs();
        check.record(observed, allowed);
    }
    check
}

/// `|F(t,x) - F(t,y)|_1 <= k2 |x - y|_1` on random probe pairs, including
/// close pairs that see the local slope.
pub fn probe_lipschitz(f: &VectorField, cfg: &ProbeConfig) -> BoundCheck {
    let mut rng = RngStream::new(cfg.seed, 1);
    let mut check = BoundCheck::new();
    for i in 0..cfg.probes {
        let t = rng.random_range(0.0..=cfg.horizon);
        let x = random_state(f.dim(), cfg.radius, &mut rng);
        let spread = if i % 2 == 0 { cfg.radius } else { 1e-3 * cfg.radius };
        let y = &x + random_state(f.dim(), spread, &mut rng);
        let observed = (f.eval(t, &x) - f.eval(t, &y)).lp_norm(1);
        check.record(observed, f.lipschitz() * (&x - &y).lp_norm(1));
    }
    check
}

/// Per-realization Lipschitz bound: both points are sampled from clones of
/// one stream, so they see the same realization.
pub fn probe_estimator_lipschitz(e: &dyn StochasticEstimator, cfg: &ProbeConfig) -> BoundCheck {
    let mut rng = RngStream::new(cfg.seed, 2);
    let mut check = BoundCheck::new();
    for i in 0..cfg.probes {
        let t = rng.random_range(0.0..=cfg.horizon);
        let x = random_state(e.dim(), cfg.radius, &mut rng);
        let spread = if i % 2 == 0 { cfg.radius } else { 1e-3 * cfg.radius };
        let y = &x + random_state(e.dim(), spread, &mut rng);
        let realization = RngStream::new(cfg.seed, 1_000 + i as u64);
        let fx = e.sample(t, &x, &mut realization.clone());
        let fy = e.sample(t, &y, &mut realization.clone());
        check.record((fx - fy).lp_norm(1), e.lipschitz() * (&x - &y).lp_norm(1));
    }
    check
}

/// Worst forward-difference Jacobian error for each step size in `steps`.
///
/// Returns `None` if the field has no Jacobian. A correct Jacobian makes the
/// errors shrink with the step until rounding takes over.
pub fn probe_jacobian(f: &VectorField, cfg: &ProbeConfig, steps: &[f64]) -> Option<Vec<f64>> {
    if !f.has_jacobian() {
        return None;
    }
    let mut rng = RngStream::new(cfg.seed, 3);
    let probes: Vec<(f64, DVector<f64>)> = (0..cfg.probes)
        .map(|_| {
            let t = rng.random_range(0.0..=cfg.horizon);
            (t, random_state(f.dim(), cfg.radius, &mut rng))
        })
        .collect();
    let errors = steps
        .iter()
        .map(|&h| {
            probes
                .iter()
                .map(|(t, x)| {
                    let jac = f.jacobian(*t, x).expect("checked above");
                    let fx = f.eval(*t, x);
                    (0..f.dim())
                        .map(|i| {
                            let mut xh = x.clone();
                            xh[i] += h;
                            let fd = (f.eval(*t, &xh) - &fx) / h;
                            (fd - jac.column(i)).lp_norm(1)
                        })
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Some(errors)
}

/// Largest z-score `|bias_a| / (sd_a / sqrt(draws))` over the given points
/// and coordinates. Zero-variance coordinates count as 0 if the bias is
/// exactly 0 and infinite otherwise.
pub fn probe_unbiasedness(
    e: &dyn StochasticEstimator,
    f: &VectorField,
    points: &[(f64, DVector<f64>)],
    draws: usize,
    seed: u64,
) -> f64 {
    assert!(draws >= 2, "need at least two draws for a z-score");
    points
        .iter()
        .enumerate()
        .map(|(i, (t, x))| {
            let (mean, var) = sample_moments(e, *t, x, draws, &mut RngStream::new(seed, i as u64));
            let bias = mean - f.eval(*t, x);
            bias.iter()
                .zip(var.iter())
                .map(|(b, v)| {
                    if *v == 0.0 {
                        if *b == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        b.abs() / (v / draws as f64).sqrt()
                    }
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Largest empirical componentwise variance over the given points.
pub fn probe_variance(
    e: &dyn StochasticEstimator,
    points: &[(f64, DVector<f64>)],
    draws: usize,
    seed: u64,
) -> f64 {
    assert!(draws >= 2, "need at least two draws for a variance");
    points
        .iter()
        .enumerate()
        .map(|(i, (t, x))| {
            let (_, var) = sample_moments(e, *t, x, draws, &mut RngStream::new(seed, i as u64));
            var.max()
        })
        .fold(0.0, f64::max)
}

/// Sample mean and unbiased componentwise variance (Welford).
fn sample_moments(
    e: &dyn StochasticEstimator,
    t: f64,
    x: &DVector<f64>,
    draws: usize,
    rng: &mut RngStream,
) -> (DVector<f64>, DVector<f64>) {
    let d = e.dim();
    let mut mean = DVector::zeros(d);
    let mut m2 = DVector::zeros(d);
    for n in 1..=draws {
        let v = e.sample(t, x, rng);
        let delta = &v - &mean;
        mean += &delta / n as f64;
        m2 += delta.component_mul(&(&v - &mean));
    }
    (mean, m2 / (draws - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{additive_noise_estimator, subsample_estimator};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn honest_linear_field_passes() {
        let f = VectorField::linear(dmatrix![1.0, -2.0; 0.5, 0.0]);
        let cfg = ProbeConfig::default();
        assert!(probe_time_growth(&f, &cfg).satisfied());
        let lip = probe_lipschitz(&f, &cfg);
        assert!(lip.satisfied());
        assert!(lip.worst_ratio > 0.5);
        let errs = probe_jacobian(&f, &cfg, &[1e-3]).unwrap();
        assert!(errs[0] < 1e-9);
    }

    #[test]
    fn understated_constants_are_caught() {
        let f = VectorField::new(1, 0.0, 0.5, |_, x| x * 2.0);
        assert!(!probe_lipschitz(&f, &ProbeConfig::default()).satisfied());
        let g = VectorField::new(1, 0.0, 1.0, |t, x| x.map(|v| v + t));
        let check = probe_time_growth(&g, &ProbeConfig::default());
        assert!(!check.satisfied());
        assert_eq!(check.worst_ratio, f64::INFINITY);
    }

    #[test]
    fn wrong_jacobian_does_not_shrink() {
        let f = VectorField::new(1, 0.0, 1.0, |_, x| x.map(f64::sin))
            .with_jacobian(|_, x| dmatrix![x[0].sin()]);
        let errs = probe_jacobian(&f, &ProbeConfig::default(), &[1e-2, 1e-4]).unwrap();
        assert!(errs[1] > 0.1);
        let g = VectorField::new(1, 0.0, 1.0, |_, x| x.map(f64::sin))
            .with_jacobian(|_, x| dmatrix![x[0].cos()]);
        let errs = probe_jacobian(&g, &ProbeConfig::default(), &[1e-2, 1e-4]).unwrap();
        assert!(errs[1] < errs[0] / 50.0);
    }

    #[test]
    fn estimator_probes() {
        let f = VectorField::linear(dmatrix![-1.0]);
        let e = additive_noise_estimator(f.clone(), dmatrix![0.3]).unwrap();
        let cfg = ProbeConfig::default();
        assert!(probe_estimator_lipschitz(&e, &cfg).satisfied());
        let pts = vec![(0.0, dvector![1.0]), (0.5, dvector![-0.2])];
        assert!(probe_unbiasedness(&e, &f, &pts, 20_000, 1) < 5.0);
        let var = probe_variance(&e, &pts, 20_000, 1);
        assert!((var - 0.3).abs() < 0.03, "{var}");

        let s = subsample_estimator(
            vec![VectorField::linear(dmatrix![1.0]), VectorField::linear(dmatrix![-1.0])],
            1,
        )
        .unwrap();
        assert!(probe_estimator_lipschitz(&s, &cfg).satisfied());
        assert!(probe_unbiasedness(&s, &s.mean_field(), &pts, 20_000, 2) < 5.0);
    }
}
