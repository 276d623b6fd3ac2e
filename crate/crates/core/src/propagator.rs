//! Matrix propagators along the reference solution and the limiting
//! covariance of the rescaled scheme error.
//!
//! With `J(s) = grad_x F(s, x(s))`, the discrete propagator on a partition is
//! `P^N(s, t) = prod_{s < t_j <= t} (I + dt_j J(t_{j-1}))`, newest factor on
//! the left. Under dyadic refinement it converges uniformly to the solution
//! operator `P(s, t)` of `d/dt P = J(t) P`, `P(s, s) = I`, and the limiting
//! covariance is `Sigma(t) = int_0^t P(s,t) Gamma(s) P(s,t)' ds`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fields::{RngStream, StochasticEstimator, VectorField};
use crate::grid::Partition;
use crate::io::{write_comments, write_row};
use crate::reference::ReferenceSolution;

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values.max()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_times(s: f64, t: f64, horizon: f64) -> Result<()> {
    if (0.0..=t).contains(&s) && t <= horizon {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "need 0 <= s <= t <= {horizon}, got s = {s}, t = {t}"
        )))
    }
}

fn require_jacobian(f: &VectorField) -> Result<()> {
    if f.has_jacobian() {
        Ok(())
    } else {
        Err(Error::Capability(
            "propagators need the Jacobian of the vector field".into(),
        ))
    }
}

/// `I + dt * grad_x F(t, x(t))`.
fn euler_factor(f: &VectorField, reference: &ReferenceSolution, t: f64, dt: f64) -> DMatrix<f64> {
    let jac = f.jacobian(t, &reference.eval(t)).expect("checked by caller");
    let d = jac.nrows();
    jac * dt + DMatrix::identity(d, d)
}

/// Euler factors of a partition, with products over arbitrary grid ranges.
#[derive(Debug, Clone)]
pub struct PropagatorGrid {
    partition: Partition,
    /// `factors[j - 1] = I + dt_j J(t_{j-1})` for `j = 1..=K`.
    factors: Vec<DMatrix<f64>>,
}

impl PropagatorGrid {
    pub fn new(f: &VectorField, reference: &ReferenceSolution, p: &Partition) -> Result<Self> {
        require_jacobian(f)?;
        let pts = p.points();
        let factors = (1..pts.len())
            .map(|j| euler_factor(f, reference, pts[j - 1], pts[j] - pts[j - 1]))
            .collect();
        Ok(Self {
            partition: p.clone(),
            factors,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    fn dim(&self) -> usize {
        self.factors[0].nrows()
    }

    /// `P^N(s, t)`: product of the factors with `s < t_j <= t`.
    pub fn between(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        check_times(s, t, self.partition.horizon())?;
        let pts = self.partition.points();
        let d = self.dim();
        let mut acc = DMatrix::identity(d, d);
        let first = pts.partition_point(|&p| p <= s);
        for j in first..pts.len() {
            if pts[j] > t {
                break;
            }
            acc = &self.factors[j - 1] * acc;
        }
        Ok(acc)
    }

    /// `P^N(t_k, t)` for every grid index `k` with `t_k <= t`, by one
    /// backward sweep of suffix products.
    pub fn to_time(&self, t: f64) -> Result<Vec<DMatrix<f64>>> {
        check_times(0.0, t, self.partition.horizon())?;
        let pts = self.partition.points();
        let last = pts.partition_point(|&p| p <= t) - 1;
        let d = self.dim();
        let mut out = vec![DMatrix::identity(d, d); last + 1];
        for k in (0..last).rev() {
            out[k] = &out[k + 1] * &self.factors[k];
        }
        Ok(out)
    }
}

/// `prod_{s < t_j <= t} (I + dt_j grad_x F(t_{j-1}, x(t_{j-1})))` on `p`.
pub fn discrete_propagator(
    f: &VectorField,
    reference: &ReferenceSolution,
    p: &Partition,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    require_jacobian(f)?;
    check_times(s, t, p.horizon())?;
    let pts = p.points();
    let d = f.dim();
    let mut acc = DMatrix::identity(d, d);
    let first = pts.partition_point(|&x| x <= s);
    for j in first..pts.len() {
        if pts[j] > t {
            break;
        }
        acc = euler_factor(f, reference, pts[j - 1], pts[j] - pts[j - 1]) * acc;
    }
    Ok(acc)
}

/// Point `j` of the dyadic grid of `[0, horizon]` at `level`, computed the
/// same way as [`crate::grid::dyadic_partition`].
fn dyadic_point(horizon: f64, level: u32, j: u64) -> f64 {
    horizon * j as f64 * ((1u64 << level) as f64).recip()
}

/// `P^N(s, t)` on the dyadic grid of `[0, T]` at `level`, streamed without
/// materializing the partition.
fn dyadic_product(f: &VectorField, reference: &ReferenceSolution, level: u32, s: f64, t: f64) -> DMatrix<f64> {
    let horizon = reference.horizon();
    let cells = 1u64 << level;
    let d = f.dim();
    let mut j = ((s / horizon) * cells as f64).floor().max(0.0) as u64;
    while j > 0 && dyadic_point(horizon, level, j) > s {
        j -= 1;
    }
    while j <= cells && dyadic_point(horizon, level, j) <= s {
        j += 1;
    }
    let mut acc = DMatrix::identity(d, d);
    let mut prev = dyadic_point(horizon, level, j.saturating_sub(1));
    while j <= cells {
        let tj = dyadic_point(horizon, level, j);
        if tj > t {
            break;
        }
        acc = euler_factor(f, reference, prev, tj - prev) * acc;
        prev = tj;
        j += 1;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOptions {
    /// Accept once consecutive levels differ by less than this (spectral norm).
    pub tol: f64,
    pub start_level: u32,
    pub max_level: u32,
}

impl LimitOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            start_level: 4,
            max_level: 26,
        }
    }
}

/// Result of a dyadic refinement: the finest product computed, its level and
/// its distance to the previous level.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorLimit {
    pub value: DMatrix<f64>,
    pub level: u32,
    pub change: f64,
}

fn refine<T, S, D>(opts: &LimitOptions, mut at_level: S, distance: D) -> Result<(T, u32, f64)>
where
    S: FnMut(u32) -> T,
    D: Fn(&T, &T) -> f64,
{
    if !(opts.tol > 0.0) {
        return Err(Error::domain("refinement tolerance must be positive"));
    }
    let mut prev = at_level(opts.start_level);
    for level in opts.start_level + 1..=opts.max_level {
        let next = at_level(level);
        let change = distance(&prev, &next);
        if change < opts.tol {
            return Ok((next, level, change));
        }
        prev = next;
    }
    Err(Error::Accuracy(format!(
        "dyadic refinement did not reach {} by level {}",
        opts.tol, opts.max_level
    )))
}

/// `P(s, t)` as the limit of dyadic products, refining until two consecutive
/// levels differ by less than `opts.tol`.
pub fn limit_propagator(
    f: &VectorField,
    reference: &ReferenceSolution,
    s: f64,
    t: f64,
    opts: LimitOptions,
) -> Result<PropagatorLimit> {
    require_jacobian(f)?;
    check_times(s, t, reference.horizon())?;
    let (value, level, change) = refine(
        &opts,
        |level| dyadic_product(f, reference, level, s, t),
        |a, b| op_norm(&(a - b)),
    )?;
    Ok(PropagatorLimit {
        value,
        level,
        change,
    })
}

/// `k T / (n - 1)` for `k = 0..n`.
pub fn probe_times(horizon: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two probe times");
    (0..n)
        .map(|k| horizon * k as f64 / (n - 1) as f64)
        .collect()
}

/// Propagators between all ordered pairs of probe times.
///
/// `entry(a, b)` holds `P(times[a], times[b])` for `a <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    times: Vec<f64>,
    /// Row `a` holds the entries for `b = a..n`.
    rows: Vec<Vec<DMatrix<f64>>>,
}

impl ProbeTable {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn entry(&self, a: usize, b: usize) -> &DMatrix<f64> {
        assert!(a <= b, "probe table holds s <= t only");
        &self.rows[a][b - a]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.times.len();
        (0..n).flat_map(move |a| (a..n).map(move |b| (a, b)))
    }

    /// Largest spectral-norm distance over all pairs.
    pub fn max_distance(&self, other: &ProbeTable) -> f64 {
        self.pairs()
            .map(|(a, b)| op_norm(&(self.entry(a, b) - other.entry(a, b))))
            .fold(0.0, f64::max)
    }
}

fn check_probe_times(times: &[f64], horizon: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::domain("no probe times"));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("probe times must be sorted"));
    }
    if times[0] < 0.0 || times[times.len() - 1] > horizon {
        return Err(Error::domain("probe times outside [0, T]"));
    }
    Ok(())
}

/// `P^N(s_a, s_b)` at one dyadic level for every probe pair, in a single
/// forward sweep that keeps one running product per start time.
pub fn dyadic_probe_table(
    f: &VectorField,
    reference: &ReferenceSolution,
    level: u32,
    times: &[f64],
) -> Result<ProbeTable> {
    require_jacobian(f)?;
    check_probe_times(times, reference.horizon())?;
    let horizon = reference.horizon();
    let n = times.len();
    let d = f.dim();
    let mut running = vec![DMatrix::<f64>::identity(d, d); n];
    let mut rows: Vec<Vec<DMatrix<f64>>> = (0..n).map(|a| Vec::with_capacity(n - a)).collect();
    let mut next_record = 0;
    let record = |upto: usize, running: &[DMatrix<f64>], rows: &mut Vec<Vec<DMatrix<f64>>>| {
        // Every start a <= b has accumulated exactly the factors with t_j <= t_b.
        for a in 0..=upto {
            rows[a].push(running[a].clone());
        }
    };
    let cells = 1u64 << level;
    for j in 1..=cells {
        let tj = dyadic_point(horizon, level, j);
        while next_record < n && times[next_record] < tj {
            record(next_record, &running, &mut rows);
            next_record += 1;
        }
        let prev = dyadic_point(horizon, level, j - 1);
        let factor = euler_factor(f, reference, prev, tj - prev);
        for a in 0..n {
            if times[a] < tj {
                running[a] = &factor * &running[a];
            }
        }
    }
    while next_record < n {
        record(next_record, &running, &mut rows);
        next_record += 1;
    }
    Ok(ProbeTable {
        times: times.to_vec(),
        rows,
    })
}

/// Dyadic limit over a whole probe table; the change is the worst pair.
pub fn limit_probe_table(
    f: &VectorField,
    reference: &ReferenceSolution,
    times: &[f64],
    opts: LimitOptions,
) -> Result<(ProbeTable, u32, f64)> {
    require_jacobian(f)?;
    check_probe_times(times, reference.horizon())?;
    refine(
        &opts,
        |level| dyadic_probe_table(f, reference, level, times).expect("validated above"),
        |a, b| a.max_distance(b),
    )
}

/// `sup` over probe pairs of `|P^N(s, t) - P(s, t)|` for each level.
pub fn propagator_convergence(
    f: &VectorField,
    reference: &ReferenceSolution,
    times: &[f64],
    levels: &[u32],
    limit: &ProbeTable,
) -> Result<Vec<(u32, f64)>> {
    levels
        .iter()
        .map(|&level| {
            let table = dyadic_probe_table(f, reference, level, times)?;
            Ok((level, table.max_distance(limit)))
        })
        .collect()
}

/// One RK4 step of the variational system `x' = F(t, x)`, `Y' = J(t, x) Y`.
fn variational_step(
    f: &VectorField,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    y: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let rhs = |t: f64, x: &DVector<f64>, y: &DMatrix<f64>| {
        let jac = f.jacobian(t, x).expect("checked by caller");
        (f.eval(t, x), jac * y)
    };
    let (k1x, k1y) = rhs(t, x, y);
    let (k2x, k2y) = rhs(t + 0.5 * h, &(x + &k1x * (0.5 * h)), &(y + &k1y * (0.5 * h)));
    let (k3x, k3y) = rhs(t + 0.5 * h, &(x + &k2x * (0.5 * h)), &(y + &k2y * (0.5 * h)));
    let (k4x, k4y) = rhs(t + h, &(x + &k3x * h), &(y + &k3y * h));
    (
        x + (k1x + (k2x + k3x) * 2.0 + k4x) * (h / 6.0),
        y + (k1y + (k2y + k3y) * 2.0 + k4y) * (h / 6.0),
    )
}

fn variational_segment(
    f: &VectorField,
    t0: f64,
    t1: f64,
    steps: usize,
    mut x: DVector<f64>,
    mut y: DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let h = (t1 - t0) / steps as f64;
    for k in 0..steps {
        (x, y) = variational_step(f, t0 + k as f64 * h, h, &x, &y);
    }
    (x, y)
}

fn ode_propagator_at(f: &VectorField, x0: &DVector<f64>, horizon: f64, s: f64, t: f64, resolution: usize) -> DMatrix<f64> {
    let d = f.dim();
    let steps = |len: f64| ((resolution as f64 * len / horizon).ceil() as usize).max(1);
    let id = DMatrix::identity(d, d);
    let (xs, _) = variational_segment(f, 0.0, s, steps(s), x0.clone(), id.clone());
    variational_segment(f, s, t, steps(t - s), xs, id).1
}

/// `P(s, t)` by integrating `d/dt P = J(t, x(t)) P` together with the state
/// from `x(0)`, doubling the RK4 resolution until it moves by less than
/// `tol / 10`.
pub fn propagator_by_ode(
    f: &VectorField,
    reference: &ReferenceSolution,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    require_jacobian(f)?;
    check_times(s, t, reference.horizon())?;
    let x0 = reference.initial();
    let horizon = reference.horizon();
    let mut resolution = 64;
    let mut prev = ode_propagator_at(f, &x0, horizon, s, t, resolution);
    while resolution < 1 << 22 {
        resolution *= 2;
        let next = ode_propagator_at(f, &x0, horizon, s, t, resolution);
        if op_norm(&(&next - &prev)) < tol / 10.0 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Accuracy(format!(
        "matrix ODE did not settle to {tol} within the step budget"
    )))
}

/// `E[(F~ - F)(F~ - F)']` at `(s, x)`: closed form when the estimator has
/// one, otherwise a symmetrized Monte Carlo average over `draws` samples.
pub fn gamma_at(
    e: &dyn StochasticEstimator,
    f: &VectorField,
    s: f64,
    x: &DVector<f64>,
    draws: usize,
    stream: &mut RngStream,
) -> Result<DMatrix<f64>> {
    if let Some(g) = e.analytic_gamma(s, x) {
        return Ok(g);
    }
    if draws < 2 {
        return Err(Error::domain("Monte Carlo noise covariance needs at least two draws"));
    }
    let mean = f.eval(s, x);
    let d = e.dim();
    let mut acc = DMatrix::zeros(d, d);
    for _ in 0..draws {
        let dev = e.sample(s, x, stream) - &mean;
        acc += &dev * dev.transpose();
    }
    Ok(symmetrize(&(acc / draws as f64)))
}

/// The noise covariance along the reference solution, `Gamma(s)`.
pub fn gamma(
    e: &dyn StochasticEstimator,
    f: &VectorField,
    reference: &ReferenceSolution,
    s: f64,
    draws: usize,
    stream: &mut RngStream,
) -> Result<DMatrix<f64>> {
    check_times(s, s, reference.horizon())?;
    gamma_at(e, f, s, &reference.eval(s), draws, stream)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaOptions {
    /// Trapezoid nodes on `[0, t]`; odd, so that halving reuses every other node.
    pub quad_points: usize,
    /// Largest acceptable quadrature error estimate (spectral norm).
    pub tol: f64,
    /// RK4 substeps between neighbouring quadrature nodes.
    pub substeps: usize,
    /// Draws per node when the noise covariance must be estimated.
    pub mc_draws: usize,
    /// Master seed of the per-node streams for the Monte Carlo case.
    pub seed: u64,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        Self {
            quad_points: 257,
            tol: 1e-3,
            substeps: 8,
            mc_draws: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub value: DMatrix<f64>,
    /// Richardson estimate `|I_h - I_2h| / 3` of the trapezoid error.
    pub quad_err: f64,
}

/// `Sigma(t) = int_0^t P(s,t) Gamma(s) P(s,t)' ds` by the composite
/// trapezoid rule, with `P(s, t) = Phi(t) Phi(s)^{-1}` from the fundamental
/// matrix `Phi` integrated alongside the state.
pub fn sigma(
    f: &VectorField,
    e: &dyn StochasticEstimator,
    reference: &ReferenceSolution,
    t: f64,
    opts: SigmaOptions,
) -> Result<SigmaEstimate> {
    require_jacobian(f)?;
    check_times(0.0, t, reference.horizon())?;
    let n = opts.quad_points;
    if n < 3 || n % 2 == 0 {
        return Err(Error::domain(format!(
            "quadrature needs an odd node count >= 3, got {n}"
        )));
    }
    let d = f.dim();
    if t == 0.0 {
        return Ok(SigmaEstimate {
            value: DMatrix::zeros(d, d),
            quad_err: 0.0,
        });
    }
    let h = t / (n - 1) as f64;
    let mut x = reference.initial();
    let mut phi = DMatrix::identity(d, d);
    let mut states = Vec::with_capacity(n);
    states.push((x.clone(), phi.clone()));
    for k in 1..n {
        let t0 = (k - 1) as f64 * h;
        let t1 = if k == n - 1 { t } else { k as f64 * h };
        (x, phi) = variational_segment(f, t0, t1, opts.substeps.max(1), x, phi);
        states.push((x.clone(), phi.clone()));
    }
    let phi_t = states[n - 1].1.clone();
    let integrand = states
        .iter()
        .enumerate()
        .map(|(k, (xk, phik))| {
            let inv = phik
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Accuracy("fundamental matrix became singular".into()))?;
            let p = &phi_t * inv;
            let s = if k == n - 1 { t } else { k as f64 * h };
            let g = gamma_at(e, f, s, xk, opts.mc_draws, &mut RngStream::new(opts.seed, k as u64))?;
            Ok(&p * g * p.transpose())
        })
        .collect::<Result<Vec<_>>>()?;

    let trapezoid = |stride: usize| {
        let nodes: Vec<&DMatrix<f64>> = integrand.iter().step_by(stride).collect();
        let last = nodes.len() - 1;
        let mut acc = (nodes[0] + nodes[last]) * 0.5;
        for m in &nodes[1..last] {
            acc += *m;
        }
        acc * (h * stride as f64)
    };
    let fine = trapezoid(1);
    let coarse = trapezoid(2);
    let quad_err = op_norm(&(&fine - &coarse)) / 3.0;
    if quad_err > opts.tol {
        return Err(Error::Accuracy(format!(
            "quadrature error estimate {quad_err:e} exceeds {}",
            opts.tol
        )));
    }
    Ok(SigmaEstimate {
        value: symmetrize(&fine),
        quad_err,
    })
}

/// `Sigma` sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceCurve {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    pub quad_errors: Vec<f64>,
}

pub fn covariance_curve(
    f: &VectorField,
    e: &dyn StochasticEstimator,
    reference: &ReferenceSolution,
    times: &[f64],
    opts: SigmaOptions,
) -> Result<CovarianceCurve> {
    let mut curve = CovarianceCurve {
        times: times.to_vec(),
        matrices: Vec::with_capacity(times.len()),
        quad_errors: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let est = sigma(f, e, reference, t, opts)?;
        curve.matrices.push(est.value);
        curve.quad_errors.push(est.quad_err);
    }
    Ok(curve)
}

impl CovarianceCurve {
    /// CSV with header `t,sigma_11,...,sigma_dd,quad_err`, entries row-major.
    pub fn write_csv<W: Write>(&self, w: &mut W, comments: &[String]) -> io::Result<()> {
        write_comments(w, comments)?;
        let d = self.matrices.first().map_or(0, |m| m.nrows());
        let mut header = vec!["t".to_string()];
        for i in 1..=d {
            for j in 1..=d {
                header.push(format!("sigma_{i}{j}"));
            }
        }
        header.push("quad_err".into());
        writeln!(w, "{}", header.join(","))?;
        for ((t, m), err) in self.times.iter().zip(&self.matrices).zip(&self.quad_errors) {
            let mut row = vec![*t];
            row.extend(m.transpose().iter());
            row.push(*err);
            write_row(w, &[], &row)?;
        }
        Ok(())
    }
}
