//! Monte Carlo ensembles and the diagnostics built on them: L2 rate fits,
//! almost-sure convergence traces, normality reports for the rescaled error
//! and the discrete Gronwall bounds.

use std::io::{self, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{RngStream, StochasticEstimator};
use crate::grid::{dyadic_partition, Partition};
use crate::io::{write_comments, write_row};
use crate::propagator::op_norm;
use crate::reference::{sup_error, ReferenceSolution};
use crate::scheme::run_scheme;

/// Number of pseudo-random projection directions in a normality report.
pub const RANDOM_DIRECTIONS: usize = 8;

/// Frequency magnitudes of the characteristic-function grid, used along
/// each coordinate axis with both signs.
pub const CF_FREQUENCIES: [f64; 3] = [0.5, 1.0, 2.0];

/// Everything an ensemble needs besides the replication range.
#[derive(Clone, Copy)]
pub struct EnsembleSpec<'a> {
    pub estimator: &'a dyn StochasticEstimator,
    pub reference: &'a ReferenceSolution,
    pub partition: &'a Partition,
    pub t_star: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    config_hash: String,
    master_seed: u64,
    mesh: f64,
    t_star: f64,
    first_replication: u64,
    sup_errors: Vec<f64>,
    endpoints: Vec<DVector<f64>>,
}

impl EnsembleResult {
    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = hash.into();
        self
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn t_star(&self) -> f64 {
        self.t_star
    }

    pub fn replications(&self) -> Range<u64> {
        self.first_replication..self.first_replication + self.sup_errors.len() as u64
    }

    pub fn sup_errors(&self) -> &[f64] {
        &self.sup_errors
    }

    /// `Z^N(t*) = mesh^{-1/2} (x_hat(t*) - x(t*))` per replication.
    pub fn endpoints(&self) -> &[DVector<f64>] {
        &self.endpoints
    }

    /// Joins two runs over adjacent replication ranges of the same setup.
    pub fn concat(mut self, other: EnsembleResult) -> Result<Self> {
        if self.master_seed != other.master_seed
            || self.mesh != other.mesh
            || self.t_star != other.t_star
            || self.config_hash != other.config_hash
        {
            return Err(Error::domain("ensembles come from different setups"));
        }
        if self.replications().end != other.first_replication {
            return Err(Error::domain("replication ranges are not adjacent"));
        }
        self.sup_errors.extend(other.sup_errors);
        self.endpoints.extend(other.endpoints);
        Ok(self)
    }

    /// CSV with header `replication,sup_error,z_1,...,z_d`.
    pub fn write_csv<W: Write>(&self, w: &mut W, comments: &[String]) -> io::Result<()> {
        write_comments(w, comments)?;
        let d = self.endpoints.first().map_or(0, |z| z.len());
        let mut header = vec!["replication".to_string(), "sup_error".into()];
        header.extend((1..=d).map(|i| format!("z_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (r, (e, z)) in self.replications().zip(self.sup_errors.iter().zip(&self.endpoints)) {
            let mut row = vec![*e];
            row.extend(z.iter());
            write_row(w, &[r.to_string()], &row)?;
        }
        Ok(())
    }
}

/// Replications `0..replications`; see [`run_replications`].
pub fn run_ensemble(spec: &EnsembleSpec<'_>, replications: usize) -> Result<EnsembleResult> {
    run_replications(spec, 0..replications as u64)
}

/// Runs the scheme once per replication index `r`, on stream
/// `RngStream::new(master_seed, r)`, recording the sup error against the
/// reference and the rescaled error at `t*`.
///
/// Replications run in parallel; results are in replication order, and a
/// divergence reports the lowest diverging replication.
pub fn run_replications(spec: &EnsembleSpec<'_>, replications: Range<u64>) -> Result<EnsembleResult> {
    if replications.is_empty() {
        return Err(Error::domain("an ensemble needs at least one replication"));
    }
    let horizon = spec.partition.horizon();
    if !(0.0..=horizon).contains(&spec.t_star) {
        return Err(Error::domain(format!("t* = {} outside [0, {horizon}]", spec.t_star)));
    }
    let x0 = spec.reference.initial();
    let exact = spec.reference.eval(spec.t_star);
    let scale = spec.partition.mesh().sqrt().recip();
    let outcomes: Vec<Result<(f64, DVector<f64>)>> = replications
        .clone()
        .into_par_iter()
        .map(|r| {
            let stream = RngStream::new(spec.master_seed, r);
            let path = run_scheme(spec.estimator, spec.partition, &x0, &stream).map_err(|e| match e {
                Error::Divergence { step } => Error::ReplicationDiverged {
                    replication: r as usize,
                    step,
                },
                other => other,
            })?;
            let err = sup_error(&path, spec.reference)?;
            let z = (path.eval(spec.t_star)? - &exact) * scale;
            Ok((err, z))
        })
        .collect();
    let mut sup_errors = Vec::with_capacity(outcomes.len());
    let mut endpoints = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (e, z) = outcome?;
        sup_errors.push(e);
        endpoints.push(z);
    }
    Ok(EnsembleResult {
        config_hash: String::new(),
        master_seed: spec.master_seed,
        mesh: spec.partition.mesh(),
        t_star: spec.t_star,
        first_replication: replications.start,
        sup_errors,
        endpoints,
    })
}

/// Root mean square of the per-replication sup errors.
pub fn rms_sup_error(r: &EnsembleResult) -> f64 {
    let n = r.sup_errors.len() as f64;
    (r.sup_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub meshes: Vec<f64>,
    pub rms_errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the residuals in log space.
    pub residual: f64,
}

impl RateFit {
    /// CSV with header `mesh,rms_error,fit_slope,fit_intercept,residual`.
    pub fn write_csv<W: Write>(&self, w: &mut W, comments: &[String]) -> io::Result<()> {
        write_comments(w, comments)?;
        writeln!(w, "mesh,rms_error,fit_slope,fit_intercept,residual")?;
        for (m, e) in self.meshes.iter().zip(&self.rms_errors) {
            write_row(w, &[], &[*m, *e, self.slope, self.intercept, self.residual])?;
        }
        Ok(())
    }
}

/// Least squares line through `(ln mesh, ln rms_error)`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::domain(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(m, e)| !(m > 0.0 && e > 0.0) || !m.is_finite() || !e.is_finite()) {
        return Err(Error::domain("rate fit needs positive finite meshes and errors"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("rate fit needs at least two distinct meshes"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        meshes: points.iter().map(|p| p.0).collect(),
        rms_errors: points.iter().map(|p| p.1).collect(),
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// One path per dyadic level, level `N` drawing from stream
/// `RngStream::new(master_seed, N)`, and its sup error.
///
/// A divergence is reported as [`Error::ReplicationDiverged`] with the level
/// in place of the replication.
pub fn as_trace(
    e: &dyn StochasticEstimator,
    reference: &ReferenceSolution,
    levels: &[u32],
    master_seed: u64,
) -> Result<Vec<(u32, f64)>> {
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("trace levels must be strictly increasing"));
    }
    let x0 = reference.initial();
    levels
        .iter()
        .map(|&level| {
            let p = dyadic_partition(level, reference.horizon())?;
            let stream = RngStream::new(master_seed, level as u64);
            let path = run_scheme(e, &p, &x0, &stream).map_err(|e| match e {
                Error::Divergence { step } => Error::ReplicationDiverged {
                    replication: level as usize,
                    step,
                },
                other => other,
            })?;
            Ok((level, sup_error(&path, reference)?))
        })
        .collect()
}

/// KS statistic of one standardized projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub direction: DVector<f64>,
    /// `None` when the predicted variance along the direction vanishes.
    pub ks: Option<f64>,
}

impl Projection {
    pub fn skipped(&self) -> bool {
        self.ks.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityReport {
    pub replications: usize,
    pub predicted: DMatrix<f64>,
    pub empirical: DMatrix<f64>,
    /// `|C - Sigma| / |Sigma|` in spectral norm; `None` when `Sigma = 0`.
    pub covariance_error: Option<f64>,
    /// Coordinate axes first, then the pseudo-random directions.
    pub projections: Vec<Projection>,
    pub cf_distance: f64,
    pub mean_norm: f64,
}

impl NormalityReport {
    pub fn covariance_flagged(&self) -> bool {
        self.covariance_error.is_none()
    }

    pub fn max_ks(&self) -> Option<f64> {
        self.projections.iter().filter_map(|p| p.ks).reduce(f64::max)
    }
}

/// Normality diagnostics for the endpoints of an ensemble, with projection
/// directions seeded from its config hash.
pub fn normality_report(r: &EnsembleResult, predicted: &DMatrix<f64>) -> Result<NormalityReport> {
    normality_diagnostics(r.endpoints(), predicted, direction_seed(r.config_hash()))
}

/// 64-bit FNV-1a of the hash string.
pub fn direction_seed(config_hash: &str) -> u64 {
    config_hash.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// The axes followed by [`RANDOM_DIRECTIONS`] unit vectors drawn from `seed`.
pub fn projection_directions(d: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut dirs: Vec<DVector<f64>> = (0..d)
        .map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    for k in 0..RANDOM_DIRECTIONS {
        let mut rng = RngStream::new(seed, k as u64);
        loop {
            let v = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let n = v.norm();
            if n > 1e-8 {
                dirs.push(v / n);
                break;
            }
        }
    }
    dirs
}

/// Sample covariance with denominator `M - 1` about the sample mean.
pub fn sample_covariance(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let m = samples.len();
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for z in samples {
        mean += z;
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(d, d);
    for z in samples {
        let c = z - &mean;
        cov += &c * c.transpose();
    }
    cov /= (m - 1) as f64;
    (mean, (&cov + cov.transpose()) * 0.5)
}

pub fn normality_diagnostics(
    samples: &[DVector<f64>],
    predicted: &DMatrix<f64>,
    seed: u64,
) -> Result<NormalityReport> {
    let d = predicted.nrows();
    if predicted.ncols() != d || samples.iter().any(|z| z.len() != d) {
        return Err(Error::domain("sample and covariance dimensions differ"));
    }
    if samples.len() < d + 2 {
        return Err(Error::domain(format!(
            "normality diagnostics need at least {} samples, got {}",
            d + 2,
            samples.len()
        )));
    }
    let (mean, empirical) = sample_covariance(samples);
    let scale = op_norm(predicted);
    let covariance_error = (scale > 0.0).then(|| op_norm(&(&empirical - predicted)) / scale);

    let projections = projection_directions(d, seed)
        .into_iter()
        .map(|u| {
            let var = (u.transpose() * predicted * &u)[(0, 0)];
            let ks = (var > 1e-12 * scale && scale > 0.0).then(|| {
                let sd = var.sqrt();
                let mut z: Vec<f64> = samples.iter().map(|x| u.dot(x) / sd).collect();
                ks_normal(&mut z)
            });
            Projection { direction: u, ks }
        })
        .collect();

    let mut cf_distance = 0.0f64;
    for i in 0..d {
        for &mag in &CF_FREQUENCIES {
            for alpha in [mag, -mag] {
                let (mut re, mut im) = (0.0, 0.0);
                for z in samples {
                    let phase = alpha * z[i];
                    re += phase.cos();
                    im += phase.sin();
                }
                let m = samples.len() as f64;
                let target = (-0.5 * alpha * alpha * predicted[(i, i)]).exp();
                cf_distance = cf_distance.max((re / m - target).hypot(im / m));
            }
        }
    }

    Ok(NormalityReport {
        replications: samples.len(),
        predicted: predicted.clone(),
        empirical,
        covariance_error,
        projections,
        cf_distance,
        mean_norm: mean.norm(),
    })
}

/// Kolmogorov-Smirnov distance between the empirical law of `z` and the
/// standard normal. Sorts `z` in place.
pub fn ks_normal(z: &mut [f64]) -> f64 {
    z.sort_by(f64::total_cmp);
    let m = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let cdf = normal_cdf(v);
            ((i + 1) as f64 / m - cdf).max(cdf - i as f64 / m)
        })
        .fold(0.0, f64::max)
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function: the positive-term Taylor series of `erf`
/// below 2.5 and a backward-evaluated continued fraction above. Absolute
/// error stays near 1e-15.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let two_over_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI;
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (2n+1)!!
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > 1e-17 * sum {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
        }
        return 1.0 - two_over_sqrt_pi * (-x2).exp() * sum;
    }
    if x > 27.0 {
        return 0.0;
    }
    // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = x;
    for n in (1..=120).rev() {
        tail = x + (n as f64 / 2.0) / tail;
    }
    0.5 * two_over_sqrt_pi * (-x * x).exp() / tail
}

/// `(sharp, exp)` Gronwall bounds for `y_n <= f_n + sum_{k<n} g_k y_k`:
///
/// `sharp = f_n + sum_{k<n} f_k g_k prod_{j=k+1}^{n-1} (1 + g_j)` and
/// `exp = f_n + sum_{k<n} f_k g_k exp(sum_{j=k+1}^{n-1} g_j)`.
pub fn gronwall_bound(f: &[f64], g: &[f64], n: usize) -> Result<(f64, f64)> {
    if f.len() <= n || g.len() < n {
        return Err(Error::domain(format!(
            "need f of length > {n} and g of length >= {n}"
        )));
    }
    if f[..=n].iter().chain(&g[..n]).any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("Gronwall sequences must be nonnegative"));
    }
    // Horner form of the product sum: s_{k+1} = s_k + g_k (f_k + s_k).
    let mut s = 0.0;
    for k in 0..n {
        s += g[k] * (f[k] + s);
    }
    let mut exp_sum = 0.0;
    let mut tail = 0.0;
    for k in (0..n).rev() {
        exp_sum += f[k] * g[k] * f64::exp(tail);
        tail += g[k];
    }
    Ok((f[n] + s, f[n] + exp_sum))
}
