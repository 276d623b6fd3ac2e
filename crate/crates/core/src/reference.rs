//! High-accuracy deterministic reference trajectory and the sup-norm error
//! of a step path against it.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::grid::{uniform_partition, Partition};
use crate::io::{write_comments, write_row};
use crate::scheme::StepPath;

/// Starting resolution of the step-doubling loop.
pub const DEFAULT_MIN_STEPS: usize = 64;
/// Step budget of the step-doubling loop.
pub const DEFAULT_MAX_STEPS: usize = 1 << 23;
/// Factor by which the reference grid should be finer than any experimental
/// partition it is compared with.
pub const REFINEMENT_FACTOR: usize = 1 << 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub tol: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl ReferenceOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            min_steps: DEFAULT_MIN_STEPS,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    /// Ensures the grid is at least [`REFINEMENT_FACTOR`] times finer than a
    /// partition with `steps` cells.
    pub fn finer_than(mut self, steps: usize) -> Self {
        self.min_steps = self.min_steps.max(steps.saturating_mul(REFINEMENT_FACTOR));
        self
    }
}

/// A trajectory on a dense uniform grid, interpolated linearly in `t`.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    grid: Partition,
    dim: usize,
    /// Row-major `(K + 1) x dim`.
    values: Vec<f64>,
    tolerance: f64,
}

impl ReferenceSolution {
    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    /// Endpoint change observed at the last doubling; an upper estimate of
    /// the error of the stored grid values.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Stored value at grid index `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn initial(&self) -> DVector<f64> {
        DVector::from_column_slice(self.node(0))
    }

    /// Linear interpolation of the stored values; `t` is clamped to `[0, T]`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.eval_into(t, out.as_mut_slice());
        out
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let (i, w) = self.locate(t);
        let (lo, hi) = (self.node(i), self.node(i + 1));
        for (o, (l, h)) in out.iter_mut().zip(lo.iter().zip(hi)) {
            *o = l + w * (h - l);
        }
    }

    /// Cell index and interpolation weight for `t`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let pts = self.grid.points();
        let t = t.clamp(0.0, self.horizon());
        let i = self.grid.cell_index(t).min(pts.len() - 2);
        (i, (t - pts[i]) / (pts[i + 1] - pts[i]))
    }

    /// `|v - x(t)|_1` without allocating.
    fn l1_distance_at(&self, t: f64, v: &[f64]) -> f64 {
        let (i, w) = self.locate(t);
        let (lo, hi) = (self.node(i), self.node(i + 1));
        v.iter()
            .zip(lo.iter().zip(hi))
            .map(|(x, (l, h))| (x - (l + w * (h - l))).abs())
            .sum()
    }

    /// `|x(t) - x(0) - int_0^t F(s, x(s)) ds|_1`, with the integral taken by
    /// the trapezoid rule on the stored grid (plus a partial last cell).
    pub fn integral_residual(&self, f: &VectorField, t: f64) -> f64 {
        let pts = self.grid.points();
        let mut integral = DVector::zeros(self.dim);
        let mut prev_t = 0.0;
        let mut prev_f = f.eval(0.0, &self.initial());
        for (i, &s) in pts.iter().enumerate().skip(1) {
            let (s, x) = if s <= t {
                (s, DVector::from_column_slice(self.node(i)))
            } else {
                (t, self.eval(t))
            };
            if s <= prev_t {
                break;
            }
            let fs = f.eval(s, &x);
            integral += (&prev_f + &fs) * (0.5 * (s - prev_t));
            prev_t = s;
            prev_f = fs;
        }
        (self.eval(t) - self.initial() - integral).lp_norm(1)
    }

    /// CSV in the step-path layout `t,x1,...,xd`.
    pub fn write_csv<W: Write>(&self, w: &mut W, comments: &[String]) -> io::Result<()> {
        write_comments(w, comments)?;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, &t) in self.grid.points().iter().enumerate() {
            let mut row = vec![t];
            row.extend_from_slice(self.node(i));
            write_row(w, &[], &row)?;
        }
        Ok(())
    }
}

fn rk4(f: &VectorField, x0: &DVector<f64>, horizon: f64, steps: usize) -> Vec<f64> {
    let d = x0.len();
    let h = horizon / steps as f64;
    let mut values = Vec::with_capacity((steps + 1) * d);
    values.extend_from_slice(x0.as_slice());
    let mut x = x0.clone();
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = f.eval(t, &x);
        let k2 = f.eval(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = f.eval(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = f.eval(t + h, &(&x + &k3 * h));
        x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        values.extend_from_slice(x.as_slice());
    }
    values
}

/// Classical RK4 with step doubling until the endpoint moves by less than
/// `tol / 10`.
pub fn solve_reference(f: &VectorField, x0: &DVector<f64>, horizon: f64, tol: f64) -> Result<ReferenceSolution> {
    solve_reference_with(f, x0, horizon, ReferenceOptions::new(tol))
}

pub fn solve_reference_with(
    f: &VectorField,
    x0: &DVector<f64>,
    horizon: f64,
    opts: ReferenceOptions,
) -> Result<ReferenceSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if x0.len() != f.dim() {
        return Err(Error::domain("initial value dimension does not match the field"));
    }
    let d = x0.len();
    let mut steps = opts.min_steps.max(1);
    let mut coarse = rk4(f, x0, horizon, steps);
    loop {
        let fine_steps = steps * 2;
        if fine_steps > opts.max_steps {
            return Err(Error::Accuracy(format!(
                "reference solver did not reach tolerance {} within {} steps",
                opts.tol, opts.max_steps
            )));
        }
        let fine = rk4(f, x0, horizon, fine_steps);
        let end = |v: &[f64]| v[v.len() - d..].to_vec();
        let change: f64 = end(&coarse)
            .iter()
            .zip(end(&fine))
            .map(|(a, b)| (a - b).abs())
            .sum();
        if !change.is_finite() {
            return Err(Error::Accuracy("reference solution is not finite".into()));
        }
        if change < opts.tol / 10.0 {
            return Ok(ReferenceSolution {
                grid: uniform_partition(fine_steps, horizon)?,
                dim: d,
                values: fine,
                tolerance: change,
            });
        }
        steps = fine_steps;
        coarse = fine;
    }
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `sup_{t in [0, T]} |path(t) - x(t)|_1` against the interpolated reference.
///
/// On each path cell the path is constant and the reference is piecewise
/// linear, so the supremum is attained at the cell's left end, at reference
/// nodes inside the cell, or in the left limit at the cell's right end.
pub fn sup_error(path: &StepPath, reference: &ReferenceSolution) -> Result<f64> {
    let horizon = path.partition().horizon();
    if (horizon - reference.horizon()).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::domain(format!(
            "path horizon {horizon} differs from reference horizon {}",
            reference.horizon()
        )));
    }
    if path.dim() != reference.dim() {
        return Err(Error::domain("path and reference dimensions differ"));
    }
    let pts = path.partition().points();
    let ref_pts = reference.grid().points();
    let mut worst = 0.0f64;
    let mut j = 0usize;
    for k in 0..pts.len() - 1 {
        let v = path.values()[k].as_slice();
        let (a, b) = (pts[k], pts[k + 1]);
        worst = worst.max(reference.l1_distance_at(a, v));
        while j < ref_pts.len() && ref_pts[j] <= a {
            j += 1;
        }
        while j < ref_pts.len() && ref_pts[j] < b {
            worst = worst.max(l1_dist(v, reference.node(j)));
            j += 1;
        }
        worst = worst.max(reference.l1_distance_at(b, v));
    }
    let last = path.terminal().as_slice();
    worst = worst.max(reference.l1_distance_at(horizon, last));
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dyadic_partition;
    use crate::scheme::deterministic_euler;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn exponential_growth_and_decay() {
        let up = solve_reference(&VectorField::linear(dmatrix![1.0]), &dvector![1.0], 1.0, 1e-10).unwrap();
        assert!((up.eval(1.0)[0] - std::f64::consts::E).abs() < 1e-10);
        let down = solve_reference(&VectorField::linear(dmatrix![-1.0]), &dvector![1.0], 1.0, 1e-10).unwrap();
        assert!((down.eval(1.0)[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert!(up.tolerance() < 1e-11);
    }

    #[test]
    fn zero_field_is_constant() {
        let r = solve_reference(&VectorField::zero(2), &dvector![1.0, -3.0], 2.0, 1e-8).unwrap();
        for t in [0.0, 0.3, 1.7, 2.0] {
            assert_eq!(r.eval(t), dvector![1.0, -3.0]);
        }
        assert_eq!(r.tolerance(), 0.0);
        assert_eq!(r.integral_residual(&VectorField::zero(2), 1.3), 0.0);
    }

    #[test]
    fn respects_refinement_request() {
        let opts = ReferenceOptions::new(1e-8).finer_than(16);
        let r = solve_reference_with(&VectorField::zero(1), &dvector![0.0], 1.0, opts).unwrap();
        assert!(r.grid().steps() >= 16 * REFINEMENT_FACTOR);
    }

    #[test]
    fn budget_exhaustion_is_an_accuracy_error() {
        let opts = ReferenceOptions {
            tol: 1e-30,
            min_steps: 8,
            max_steps: 64,
        };
        let err = solve_reference_with(&VectorField::linear(dmatrix![1.0]), &dvector![1.0], 1.0, opts);
        assert!(matches!(err, Err(Error::Accuracy(_))));
        assert!(solve_reference(&VectorField::zero(1), &dvector![0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn integral_equation_residual() {
        let f = VectorField::new(2, 1.0, 2.0, |t, x| dvector![x[1], -x[0] + t.sin()]);
        let r = solve_reference(&f, &dvector![1.0, 0.0], 2.0, 1e-9).unwrap();
        for t in [0.25, 1.0, 1.9, 2.0] {
            // Trapezoid error on the stored grid dominates.
            let h = r.grid().mesh();
            assert!(r.integral_residual(&f, t) < 1e-9 + h * h, "t = {t}");
        }
    }

    #[test]
    fn growth_sup_error_at_level_one() {
        // Euler values (1, 1.5, 2.25) against e^t: the endpoint gap is e - 2.25.
        let f = VectorField::linear(dmatrix![1.0]);
        let r = solve_reference(&f, &dvector![1.0], 1.0, 1e-10).unwrap();
        let path = deterministic_euler(&f, &dyadic_partition(1, 1.0).unwrap(), &dvector![1.0]).unwrap();
        let err = sup_error(&path, &r).unwrap();
        assert!(err >= std::f64::consts::E - 2.25 - 1e-9);
        // The left limit at t = 1 sees 1.5 against e.
        assert!((err - (std::f64::consts::E - 1.5)).abs() < 1e-8);
    }

    #[test]
    fn held_exact_solution_is_within_lipschitz_bound() {
        let f = VectorField::linear(dmatrix![-2.0]);
        let r = solve_reference(&f, &dvector![1.0], 1.0, 1e-10).unwrap();
        let p = dyadic_partition(5, 1.0).unwrap();
        let values = p.points().iter().map(|&t| r.eval(t)).collect();
        let held = StepPath::new(p.clone(), values).unwrap();
        // |x'| <= 2 along the solution.
        assert!(sup_error(&held, &r).unwrap() <= 2.0 * p.mesh() + 1e-9);
    }

    #[test]
    fn constant_path_on_constant_solution() {
        let r = solve_reference(&VectorField::zero(1), &dvector![0.5], 1.0, 1e-8).unwrap();
        let p = dyadic_partition(3, 1.0).unwrap();
        let path = StepPath::new(p.clone(), vec![dvector![0.5]; 9]).unwrap();
        assert_eq!(sup_error(&path, &r).unwrap(), 0.0);
        let bumped = StepPath::new(p, (0..9).map(|i| dvector![0.5 + (i == 4) as u8 as f64]).collect()).unwrap();
        assert_eq!(sup_error(&bumped, &r).unwrap(), 1.0);
    }

    #[test]
    fn horizon_mismatch() {
        let r = solve_reference(&VectorField::zero(1), &dvector![0.0], 1.0, 1e-8).unwrap();
        let p = dyadic_partition(2, 2.0).unwrap();
        let path = StepPath::new(p, vec![dvector![0.0]; 5]).unwrap();
        assert!(matches!(sup_error(&path, &r), Err(Error::Domain(_))));
    }

    #[test]
    fn interior_extremum_is_seen() {
        // x(t) = sin(2 pi t) has its peak strictly inside a single path cell.
        let f = VectorField::new(2, 0.0, 2.0 * std::f64::consts::TAU, |_, x| {
            dvector![std::f64::consts::TAU * x[1], -std::f64::consts::TAU * x[0]]
        });
        let r = solve_reference(&f, &dvector![0.0, 1.0], 1.0, 1e-10).unwrap();
        let p = Partition::from_points(vec![0.0, 1.0]).unwrap();
        let path = StepPath::new(p, vec![dvector![0.0, 0.0], dvector![0.0, 1.0]]).unwrap();
        let err = sup_error(&path, &r).unwrap();
        // max |sin| + |cos| = sqrt 2 at t = 1/8.
        assert!((err - 2f64.sqrt()).abs() < 1e-6, "{err}");
    }
}
