//! The stochastic Euler recursion and its piecewise-constant path.
//!
//! Given a partition `0 = t_0 < ... < t_K = T`, the scheme sets
//! `x_0 = x(0)` and `x_i = x_{i-1} + (t_i - t_{i-1}) F~_i(t_{i-1}, x_{i-1})`,
//! where step `i` draws from its own substream. The path holds `x_i` on
//! `[t_i, t_{i+1})` and takes `x_K` at `T`.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fields::{RngStream, StochasticEstimator, VectorField};
use crate::grid::Partition;
use crate::io::{write_comments, write_row};

/// A right-continuous step path over a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    partition: Partition,
    values: Vec<DVector<f64>>,
}

impl StepPath {
    /// Builds a path from grid values; `values.len()` must equal the number
    /// of partition points and all values must share one dimension.
    pub fn new(partition: Partition, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != partition.points().len() {
            return Err(Error::domain(format!(
                "{} values for {} grid points",
                values.len(),
                partition.points().len()
            )));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::domain("path values have mixed dimensions"));
        }
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn terminal(&self) -> &DVector<f64> {
        &self.values[self.values.len() - 1]
    }

    /// Value of the path at time `t`: the left grid value of the cell
    /// containing `t`, or the last value at the horizon.
    pub fn eval(&self, t: f64) -> Result<&DVector<f64>> {
        if !self.partition.contains_time(t) {
            return Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.partition.horizon()
            )));
        }
        Ok(&self.values[self.partition.cell_index(t)])
    }

    /// CSV with header `t,x1,...,xd` and one row per grid point.
    pub fn write_csv<W: Write>(&self, w: &mut W, comments: &[String]) -> io::Result<()> {
        write_comments(w, comments)?;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim()).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, v) in self.partition.points().iter().zip(&self.values) {
            let mut row = vec![*t];
            row.extend(v.iter());
            write_row(w, &[], &row)?;
        }
        Ok(())
    }
}

/// Free-function form of [`StepPath::eval`].
pub fn path_eval(path: &StepPath, t: f64) -> Result<DVector<f64>> {
    path.eval(t).cloned()
}

/// `x + dt * slope`, shared by every Euler update so that the stochastic
/// and deterministic variants round identically.
#[inline]
fn euler_update(x: &DVector<f64>, dt: f64, slope: &DVector<f64>) -> DVector<f64> {
    x.zip_map(slope, |a, b| a + dt * b)
}

fn run_with<S>(p: &Partition, x0: &DVector<f64>, mut slope: S) -> Result<StepPath>
where
    S: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
{
    let points = p.points();
    let mut values = Vec::with_capacity(points.len());
    values.push(x0.clone());
    for i in 1..points.len() {
        let prev = &values[i - 1];
        let s = slope(i, points[i - 1], prev);
        let next = euler_update(prev, points[i] - points[i - 1], &s);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i });
        }
        values.push(next);
    }
    Ok(StepPath {
        partition: p.clone(),
        values,
    })
}

fn check_dims(dim: usize, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::domain(format!(
            "initial value has dimension {}, field has {dim}",
            x0.len()
        )));
    }
    Ok(())
}

/// Runs the stochastic Euler scheme. Step `i` (1-based) samples from
/// `stream.substream(i)`.
pub fn run_scheme(
    e: &dyn StochasticEstimator,
    p: &Partition,
    x0: &DVector<f64>,
    stream: &RngStream,
) -> Result<StepPath> {
    check_dims(e.dim(), x0)?;
    run_with(p, x0, |i, t, x| e.sample(t, x, &mut stream.substream(i as u64)))
}

/// Classical explicit Euler, the zero-noise case of [`run_scheme`].
pub fn deterministic_euler(f: &VectorField, p: &Partition, x0: &DVector<f64>) -> Result<StepPath> {
    check_dims(f.dim(), x0)?;
    run_with(p, x0, |_, t, x| f.eval(t, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{additive_noise_estimator, subsample_estimator};
    use crate::grid::{dyadic_partition, uniform_partition};
    use nalgebra::{dmatrix, dvector, DMatrix};
    use proptest::prelude::*;

    fn growth() -> VectorField {
        VectorField::linear(dmatrix![1.0])
    }

    #[test]
    fn hand_iterated_growth() {
        // x' = x, x0 = 1, step 0.5: 1, 1.5, 2.25.
        let p = dyadic_partition(1, 1.0).unwrap();
        let path = deterministic_euler(&growth(), &p, &dvector![1.0]).unwrap();
        let got: Vec<f64> = path.values().iter().map(|v| v[0]).collect();
        assert_eq!(got, vec![1.0, 1.5, 2.25]);

        let e = additive_noise_estimator(growth(), dmatrix![0.0]).unwrap();
        let noisy = run_scheme(&e, &p, &dvector![1.0], &RngStream::new(1, 0)).unwrap();
        assert_eq!(noisy, path);
    }

    #[test]
    fn constant_field_holds_still() {
        let p = uniform_partition(7, 2.0).unwrap();
        let x0 = dvector![0.3, -4.0];
        let path = deterministic_euler(&VectorField::zero(2), &p, &x0).unwrap();
        assert!(path.values().iter().all(|v| *v == x0));
    }

    #[test]
    fn single_step() {
        let p = Partition::from_points(vec![0.0, 2.0]).unwrap();
        let e = additive_noise_estimator(growth(), dmatrix![1.0]).unwrap();
        let stream = RngStream::new(4, 9);
        let path = run_scheme(&e, &p, &dvector![1.0], &stream).unwrap();
        let sample = e.sample(0.0, &dvector![1.0], &mut stream.substream(1));
        assert_eq!(path.terminal()[0], 1.0 + 2.0 * sample[0]);
    }

    #[test]
    fn cadlag_evaluation() {
        let p = Partition::from_points(vec![0.0, 0.5, 1.0]).unwrap();
        let path = StepPath::new(p, vec![dvector![1.0], dvector![2.0], dvector![3.0]]).unwrap();
        assert_eq!(path_eval(&path, 0.0).unwrap(), dvector![1.0]);
        assert_eq!(path_eval(&path, 0.49).unwrap(), dvector![1.0]);
        assert_eq!(path_eval(&path, 0.5).unwrap(), dvector![2.0]);
        assert_eq!(path_eval(&path, 0.7).unwrap(), dvector![2.0]);
        assert_eq!(path_eval(&path, 1.0).unwrap(), dvector![3.0]);
        assert!(matches!(path_eval(&path, 1.1), Err(Error::Domain(_))));
        assert!(matches!(path_eval(&path, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn divergence_names_the_step() {
        let f = VectorField::new(1, 0.0, 0.0, |_, x| x.map(|v| v * 1e300));
        let p = uniform_partition(10, 1.0).unwrap();
        let err = deterministic_euler(&f, &p, &dvector![1.0]).unwrap_err();
        assert_eq!(err, Error::Divergence { step: 2 });
    }

    #[test]
    fn dimension_mismatch() {
        let p = uniform_partition(2, 1.0).unwrap();
        assert!(deterministic_euler(&growth(), &p, &dvector![1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let p = Partition::from_points(vec![0.0, 0.5]).unwrap();
        let path = StepPath::new(p, vec![dvector![1.0, 2.0], dvector![3.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2");
        assert_eq!(lines.len(), 3);
        let parsed: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, vec![0.5, 3.0, 4.0]);
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let e = additive_noise_estimator(growth(), dmatrix![0.5]).unwrap();
        let p = dyadic_partition(6, 1.0).unwrap();
        let a = run_scheme(&e, &p, &dvector![1.0], &RngStream::new(3, 1)).unwrap();
        let b = run_scheme(&e, &p, &dvector![1.0], &RngStream::new(3, 1)).unwrap();
        let c = run_scheme(&e, &p, &dvector![1.0], &RngStream::new(3, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn steps_use_distinct_substreams() {
        let base = RngStream::new(0, 17);
        let ids: std::collections::HashSet<u64> =
            (1..=1024u64).map(|i| base.substream(i).stream_index()).collect();
        assert_eq!(ids.len(), 1024);
        let other = RngStream::new(0, 18);
        assert!((1..=1024u64).all(|i| !ids.contains(&other.substream(i).stream_index())));
    }

    fn random_matrix(d: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut r = RngStream::new(seed, 0);
        DMatrix::from_fn(d, d, |_, _| r.random_range(-2.0..2.0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn zero_noise_matches_classical_euler(
            seed in any::<u64>(),
            d in 1usize..4,
            steps in 1usize..40,
            nonlinear in any::<bool>(),
        ) {
            let a = random_matrix(d, seed);
            let f = if nonlinear {
                let a2 = a.clone();
                VectorField::new(d, 0.0, 2.0 * d as f64, move |t, x| (&a2 * x).map(f64::sin) * (1.0 + t))
            } else {
                VectorField::linear(a)
            };
            let x0 = DVector::from_fn(d, |i, _| i as f64 - 0.5);
            let p = uniform_partition(steps, 1.3).unwrap();
            let e = additive_noise_estimator(f.clone(), DMatrix::zeros(d, d)).unwrap();
            let noisy = run_scheme(&e, &p, &x0, &RngStream::new(seed, 0)).unwrap();
            prop_assert_eq!(noisy, deterministic_euler(&f, &p, &x0).unwrap());
        }

        #[test]
        fn one_step_increment_bound(seed in any::<u64>(), level in 0u32..8) {
            // |x_i - x_{i-1}|_1 = dt |F~|_1 <= dt (|F|_1 + |noise|_1).
            let f = VectorField::linear(dmatrix![-0.7, 0.2; 0.1, 0.3]);
            let e = additive_noise_estimator(f.clone(), dmatrix![0.4, 0.1; 0.1, 0.2]).unwrap();
            let p = dyadic_partition(level, 1.0).unwrap();
            let stream = RngStream::new(seed, 0);
            let path = run_scheme(&e, &p, &dvector![1.0, 1.0], &stream).unwrap();
            for i in 1..path.values().len() {
                let dt = p.increment(i);
                let prev = &path.values()[i - 1];
                let t = p.points()[i - 1];
                let noise = e.sample(t, prev, &mut stream.substream(i as u64)) - f.eval(t, prev);
                let step = (&path.values()[i] - prev).lp_norm(1);
                let bound = dt * (f.eval(t, prev).lp_norm(1) + noise.lp_norm(1));
                prop_assert!(step <= bound * (1.0 + 1e-12) + 1e-15);
            }
        }

        #[test]
        fn full_batch_subsample_matches_euler(seed in any::<u64>(), steps in 1usize..30) {
            let parts: Vec<VectorField> = (0..3)
                .map(|k| VectorField::linear(random_matrix(2, seed.wrapping_add(k))))
                .collect();
            let e = subsample_estimator(parts.clone(), 3).unwrap();
            let f = VectorField::sum(&parts).unwrap();
            let p = uniform_partition(steps, 1.0).unwrap();
            let x0 = dvector![1.0, -1.0];
            prop_assert_eq!(
                run_scheme(&e, &p, &x0, &RngStream::new(seed, 3)).unwrap(),
                deterministic_euler(&f, &p, &x0).unwrap()
            );
        }
    }
}
