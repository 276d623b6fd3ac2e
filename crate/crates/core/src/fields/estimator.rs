use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::field::{check_components, sum_components, VectorField};
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Subset counts up to this size get an exactly enumerated noise covariance.
pub const MAX_ENUMERATED_SUBSETS: u64 = 10_000;

/// A randomized evaluator `F~(t, x, w)` with `E[F~(t, x)] = F(t, x)`.
///
/// Randomness comes exclusively from the stream passed to [`sample`], so a
/// realization is fixed by the stream's key and position. Sampling two
/// points from clones of one stream evaluates the same realization.
///
/// [`sample`]: StochasticEstimator::sample
pub trait StochasticEstimator: Send + Sync {
    fn dim(&self) -> usize;

    fn sample(&self, t: f64, x: &DVector<f64>, rng: &mut RngStream) -> DVector<f64>;

    /// Lipschitz constant in `x` of every fixed realization (1-norm).
    fn lipschitz(&self) -> f64;

    /// Declared componentwise variance bound `k3` along the solution.
    fn variance_bound(&self) -> f64;

    /// `E[(F~ - F)(F~ - F)']` at `(t, x)`, when known in closed form.
    fn analytic_gamma(&self, _t: f64, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// True when every sample equals the mean field exactly.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// `F~(t, x) = F(t, x) + xi` with `xi ~ N(0, V)` drawn afresh per sample.
#[derive(Debug, Clone)]
pub struct AdditiveNoise {
    field: VectorField,
    cov: DMatrix<f64>,
    /// `L` with `L L' = V`; `None` when `V = 0`.
    factor: Option<DMatrix<f64>>,
}

/// Wraps `f` with state-independent Gaussian noise of covariance `noise_cov`.
pub fn additive_noise_estimator(f: VectorField, noise_cov: DMatrix<f64>) -> Result<AdditiveNoise> {
    let d = f.dim();
    if noise_cov.shape() != (d, d) {
        return Err(Error::domain(format!(
            "noise covariance is {:?}, field dimension is {d}",
            noise_cov.shape()
        )));
    }
    let factor = psd_factor(&noise_cov)?;
    Ok(AdditiveNoise {
        field: f,
        cov: noise_cov,
        factor,
    })
}

impl AdditiveNoise {
    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

impl StochasticEstimator for AdditiveNoise {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn sample(&self, t: f64, x: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
        let mean = self.field.eval(t, x);
        match &self.factor {
            None => mean,
            Some(l) => {
                let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
                mean + l * z
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        self.field.lipschitz()
    }

    fn variance_bound(&self) -> f64 {
        self.cov.diagonal().iter().copied().fold(0.0, f64::max)
    }

    fn analytic_gamma(&self, _t: f64, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.cov.clone())
    }

    fn is_deterministic(&self) -> bool {
        self.factor.is_none()
    }
}

/// Checks that `v` is symmetric positive semidefinite and returns a square
/// root factor, or `None` for the zero matrix.
fn psd_factor(v: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let scale = v.amax();
    if scale == 0.0 {
        return Ok(None);
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::domain("noise covariance has non-finite entries"));
    }
    let asym = (v - v.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::domain(format!(
            "noise covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if let Some(chol) = v.clone().cholesky() {
        return Ok(Some(chol.l()));
    }
    // Singular but possibly semidefinite: fall back to the eigen square root.
    let eig = v.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(Error::domain(format!(
            "noise covariance is indefinite (eigenvalue {min:e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(Some(eig.eigenvectors * DMatrix::from_diagonal(&roots)))
}

/// Mini-batch estimator of `F = f_1 + ... + f_m`.
///
/// Each sample draws `batch` distinct indices uniformly and returns
/// `(m / batch) * sum_{i in batch} f_i(t, x)`.
#[derive(Debug, Clone)]
pub struct Subsample {
    components: Vec<VectorField>,
    batch: usize,
    scale: f64,
    lipschitz: f64,
    variance_bound: f64,
}

pub fn subsample_estimator(components: Vec<VectorField>, batch: usize) -> Result<Subsample> {
    check_components(&components)?;
    let m = components.len();
    if batch == 0 || batch > m {
        return Err(Error::domain(format!(
            "batch size {batch} outside 1..={m}"
        )));
    }
    let scale = m as f64 / batch as f64;
    // Worst-case batch: the `batch` largest component constants.
    let mut ks: Vec<f64> = components.iter().map(|c| c.lipschitz()).collect();
    ks.sort_by(|a, b| b.total_cmp(a));
    let lipschitz = scale * ks[..batch].iter().sum::<f64>();
    Ok(Subsample {
        components,
        batch,
        scale,
        lipschitz,
        variance_bound: if batch == m { 0.0 } else { f64::INFINITY },
    })
}

impl Subsample {
    /// Declares the componentwise variance bound `k3` along the solution.
    pub fn with_variance_bound(mut self, k3: f64) -> Self {
        self.variance_bound = k3;
        self
    }

    pub fn components(&self) -> &[VectorField] {
        &self.components
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// The mean field `f_1 + ... + f_m`.
    pub fn mean_field(&self) -> VectorField {
        VectorField::sum(&self.components).expect("validated at construction")
    }

    /// Whether the per-realization Lipschitz constant exceeds the one
    /// declared by the mean field `f`.
    pub fn exceeds_field_lipschitz(&self, f: &VectorField) -> bool {
        self.lipschitz > f.lipschitz()
    }

    /// Number of distinct batches, `C(m, batch)`, saturating at `u64::MAX`.
    pub fn subset_count(&self) -> u64 {
        binomial(self.components.len() as u64, self.batch as u64)
    }

    fn batch_value(&self, indices: &[usize], t: f64, x: &DVector<f64>) -> DVector<f64> {
        let sum = sum_components(indices.iter().map(|&i| &self.components[i]), t, x);
        if self.batch == self.components.len() {
            sum
        } else {
            sum * self.scale
        }
    }
}

impl StochasticEstimator for Subsample {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn sample(&self, t: f64, x: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
        let m = self.components.len();
        if self.batch == m {
            return sum_components(self.components.iter(), t, x);
        }
        let mut indices = rand::seq::index::sample(rng, m, self.batch).into_vec();
        indices.sort_unstable();
        self.batch_value(&indices, t, x)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn variance_bound(&self) -> f64 {
        self.variance_bound
    }

    /// Exact covariance by enumerating every batch, if there are at most
    /// [`MAX_ENUMERATED_SUBSETS`] of them.
    fn analytic_gamma(&self, t: f64, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = self.dim();
        if self.batch == self.components.len() {
            return Some(DMatrix::zeros(d, d));
        }
        let count = self.subset_count();
        if count > MAX_ENUMERATED_SUBSETS {
            return None;
        }
        let mean = sum_components(self.components.iter(), t, x);
        let mut acc = DMatrix::zeros(d, d);
        for_each_subset(self.components.len(), self.batch, |idx| {
            let dev = self.batch_value(idx, t, x) - &mean;
            acc += &dev * dev.transpose();
        });
        Some(acc / count as f64)
    }

    fn is_deterministic(&self) -> bool {
        self.batch == self.components.len()
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Calls `visit` with every `k`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// `(1/draws) sum_j F~(t, x, w_j) - F(t, x)`, drawing sequentially from `stream`.
pub fn estimate_bias(
    e: &dyn StochasticEstimator,
    f: &VectorField,
    t: f64,
    x: &DVector<f64>,
    draws: usize,
    stream: &mut RngStream,
) -> DVector<f64> {
    assert!(draws > 0, "estimate_bias needs at least one draw");
    let mean = f.eval(t, x);
    let mut acc = DVector::zeros(e.dim());
    for _ in 0..draws {
        acc += e.sample(t, x, stream) - &mean;
    }
    acc / draws as f64
}
