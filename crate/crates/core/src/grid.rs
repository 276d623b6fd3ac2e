//! Partitions of a finite time interval `[0, T]`.
//!
//! A [`Partition`] stores its points explicitly, so dyadic, uniform and
//! arbitrary non-uniform grids share a single representation. Increments are
//! always recomputed from neighbouring points.

use crate::error::{Error, Result};

/// Largest dyadic level accepted by [`dyadic_partition`].
pub const MAX_DYADIC_LEVEL: u32 = 30;

/// An ordered grid `0 = t_0 < t_1 < ... < t_K = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    points: Vec<f64>,
    /// `T / K` for grids built as equidistant; rounding makes the largest
    /// computed difference drift from it by an ulp or so.
    nominal_mesh: Option<f64>,
}

impl Partition {
    /// Builds a partition from explicit points.
    ///
    /// The first point must be exactly `0`, the sequence strictly increasing
    /// and finite, and at least two points must be given.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::domain("a partition needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(Error::domain(format!(
                "partition must start at 0, got {}",
                points[0]
            )));
        }
        if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::domain(format!("non-finite partition point {bad}")));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::domain(format!(
                "partition points not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self {
            points,
            nominal_mesh: None,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of steps `K` (one less than the number of points).
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// The `k`-th increment `t_k - t_{k-1}`, for `k` in `1..=K`.
    pub fn increment(&self, k: usize) -> f64 {
        self.points[k] - self.points[k - 1]
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| w[1] - w[0])
    }

    /// Largest increment of the grid; exactly `T / K` for dyadic and
    /// uniform grids.
    pub fn mesh(&self) -> f64 {
        self.nominal_mesh
            .unwrap_or_else(|| self.increments().fold(0.0, f64::max))
    }

    /// Index `i` of the half-open cell `[t_i, t_{i+1})` containing `t`; the
    /// horizon itself maps to `K`.
    ///
    /// `t` must lie in `[0, T]`.
    pub fn cell_index(&self, t: f64) -> usize {
        // partition_point returns the number of points <= t.
        self.points.partition_point(|&p| p <= t).saturating_sub(1)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        (0.0..=self.horizon()).contains(&t)
    }
}

/// Mesh of a partition; free-function form of [`Partition::mesh`].
pub fn mesh(p: &Partition) -> f64 {
    p.mesh()
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "horizon must be positive and finite, got {horizon}"
        )))
    }
}

/// The grid `{T k / 2^level : k = 0..=2^level}`.
pub fn dyadic_partition(level: u32, horizon: f64) -> Result<Partition> {
    dyadic_partition_bounded(level, horizon, MAX_DYADIC_LEVEL)
}

/// As [`dyadic_partition`] with an explicit cap on the level.
pub fn dyadic_partition_bounded(level: u32, horizon: f64, max_level: u32) -> Result<Partition> {
    if level > max_level {
        return Err(Error::ResourceBound {
            what: "dyadic level",
            requested: level as u64,
            maximum: max_level as u64,
        });
    }
    check_horizon(horizon)?;
    let cells = 1u64 << level;
    let scale = (cells as f64).recip();
    // Multiplying by a power of two is exact, which keeps consecutive levels
    // nested point-for-point and the last point equal to the horizon.
    let points = (0..=cells)
        .map(|k| horizon * k as f64 * scale)
        .collect();
    Ok(Partition {
        points,
        nominal_mesh: Some(horizon * scale),
    })
}

/// Equidistant grid with `steps` cells.
pub fn uniform_partition(steps: usize, horizon: f64) -> Result<Partition> {
    if steps == 0 {
        return Err(Error::domain("uniform partition needs at least one step"));
    }
    check_horizon(horizon)?;
    let mut points: Vec<f64> = (0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect();
    points[steps] = horizon;
    let mut p = Partition::from_points(points)?;
    p.nominal_mesh = Some(horizon / steps as f64);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dyadic_examples() {
        let p = dyadic_partition(2, 1.0).unwrap();
        assert_eq!(p.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(dyadic_partition(0, 3.0).unwrap().points(), &[0.0, 3.0]);
        assert_eq!(dyadic_partition(3, 1.0).unwrap().mesh(), 0.125);
        assert_eq!(mesh(&dyadic_partition(2, 1.0).unwrap()), 0.25);
    }

    #[test]
    fn dyadic_errors() {
        assert!(matches!(
            dyadic_partition(31, 1.0),
            Err(Error::ResourceBound { requested: 31, maximum: 30, .. })
        ));
        assert!(matches!(dyadic_partition(2, 0.0), Err(Error::Domain(_))));
        assert!(matches!(dyadic_partition(2, -1.0), Err(Error::Domain(_))));
        assert!(dyadic_partition_bounded(5, 1.0, 4).is_err());
    }

    #[test]
    fn uniform_examples() {
        let p = uniform_partition(4, 2.0).unwrap();
        assert_eq!(p.points(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(uniform_partition(1, 1.0).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(uniform_partition(5, 1.0).unwrap().mesh(), 0.2);
        assert!(matches!(uniform_partition(0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn explicit_points() {
        let p = Partition::from_points(vec![0.0, 0.1, 1.0]).unwrap();
        assert_eq!(p.mesh(), 0.9);
        assert_eq!(Partition::from_points(vec![0.0, 0.5, 1.0]).unwrap().mesh(), 0.5);
        assert!(Partition::from_points(vec![0.0]).is_err());
        assert!(Partition::from_points(vec![0.1, 1.0]).is_err());
        assert!(Partition::from_points(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Partition::from_points(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn cell_lookup() {
        let p = dyadic_partition(1, 1.0).unwrap();
        assert_eq!(p.cell_index(0.0), 0);
        assert_eq!(p.cell_index(0.49), 0);
        assert_eq!(p.cell_index(0.5), 1);
        assert_eq!(p.cell_index(0.7), 1);
        assert_eq!(p.cell_index(1.0), 2);
    }

    proptest! {
        #[test]
        fn dyadic_levels_nest(level in 0u32..14, horizon in 0.01f64..100.0) {
            let coarse = dyadic_partition(level, horizon).unwrap();
            let fine = dyadic_partition(level + 1, horizon).unwrap();
            for (k, &p) in coarse.points().iter().enumerate() {
                prop_assert_eq!(p, fine.points()[2 * k]);
            }
            prop_assert_eq!(coarse.horizon(), horizon);
        }

        #[test]
        fn increments_sum_to_horizon(level in 0u32..14, horizon in 0.01f64..100.0) {
            let p = dyadic_partition(level, horizon).unwrap();
            let total: f64 = p.increments().sum();
            let slack = p.steps() as f64 * f64::EPSILON * horizon;
            prop_assert!((total - horizon).abs() <= slack);
        }

        #[test]
        fn dyadic_mesh_exact_for_powers_of_two(level in 0u32..20, e in -4i32..6) {
            let horizon = 2f64.powi(e);
            let p = dyadic_partition(level, horizon).unwrap();
            prop_assert_eq!(p.mesh(), horizon * 2f64.powi(-(level as i32)));
        }

        #[test]
        fn dyadic_mesh_within_rounding(level in 0u32..16, horizon in 0.01f64..100.0) {
            let p = dyadic_partition(level, horizon).unwrap();
            let exact = horizon * 2f64.powi(-(level as i32));
            prop_assert!((p.mesh() - exact).abs() <= 2.0 * f64::EPSILON * horizon);
        }

        #[test]
        fn uniform_is_valid(steps in 1usize..500, horizon in 0.01f64..100.0) {
            let p = uniform_partition(steps, horizon).unwrap();
            prop_assert_eq!(p.steps(), steps);
            prop_assert_eq!(p.horizon(), horizon);
            let widest = p.increments().fold(0.0, f64::max);
            prop_assert!((widest - p.mesh()).abs() <= 4.0 * f64::EPSILON * horizon);
        }
    }
}
