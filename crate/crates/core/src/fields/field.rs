use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

type EvalFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A deterministic right-hand side `F(t, x)` of `x' = F(t, x)`.
///
/// Carries the declared regularity constants: `time_growth` bounds
/// `|F(s,x) - F(t,x)|_1 <= k1 (1 + |x|_1) |s - t|` and `lipschitz` bounds
/// `|F(t,x) - F(t,y)|_1 <= k2 |x - y|_1`. They are declarations, checked by
/// the probes in [`crate::fields::contracts`].
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacobianFn>>,
    time_growth: f64,
    lipschitz: f64,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("has_jacobian", &self.jacobian.is_some())
            .field("time_growth", &self.time_growth)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl VectorField {
    pub fn new<F>(dim: usize, time_growth: f64, lipschitz: f64, eval: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "vector field dimension must be positive");
        assert!(
            time_growth >= 0.0 && lipschitz >= 0.0,
            "regularity constants must be nonnegative"
        );
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: None,
            time_growth,
            lipschitz,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// `F(t, x) = 0` on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        Self::linear(DMatrix::zeros(dim, dim))
    }

    /// `F(t, x) = A x`.
    pub fn linear(a: DMatrix<f64>) -> Self {
        Self::affine(a.clone(), DVector::zeros(a.nrows()))
    }

    /// `F(t, x) = A x + b`.
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert!(a.is_square(), "affine field needs a square matrix");
        assert_eq!(a.nrows(), b.len(), "affine field dimension mismatch");
        let dim = a.nrows();
        let lipschitz = induced_one_norm(&a);
        let jac = a.clone();
        Self::new(dim, 0.0, lipschitz, move |_, x| &a * x + &b)
            .with_jacobian(move |_, _| jac.clone())
    }

    /// `F = f_1 + ... + f_m`, summed in index order.
    ///
    /// The Jacobian is present only if every component has one.
    pub fn sum(components: &[VectorField]) -> Result<Self> {
        let dim = check_components(components)?;
        let time_growth = components.iter().map(|c| c.time_growth).sum();
        let lipschitz = components.iter().map(|c| c.lipschitz).sum();
        let parts: Vec<VectorField> = components.to_vec();
        let field = Self::new(dim, time_growth, lipschitz, {
            let parts = parts.clone();
            move |t, x| sum_components(parts.iter(), t, x)
        });
        if parts.iter().all(|c| c.jacobian.is_some()) {
            Ok(field.with_jacobian(move |t, x| {
                let mut acc = DMatrix::zeros(dim, dim);
                for c in &parts {
                    acc += c.jacobian(t, x).expect("checked above");
                }
                acc
            }))
        } else {
            Ok(field)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(t, x)
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// `grad_x F(t, x)`, if the field supplies one.
    pub fn jacobian(&self, t: f64, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(t, x))
    }

    pub fn require_jacobian(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.jacobian(t, x)
            .ok_or_else(|| Error::Capability("vector field has no Jacobian".into()))
    }

    /// Declared time-growth constant `k1`.
    pub fn time_growth(&self) -> f64 {
        self.time_growth
    }

    /// Declared spatial Lipschitz constant `k2` (1-norm).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

pub(crate) fn check_components(components: &[VectorField]) -> Result<usize> {
    let first = components
        .first()
        .ok_or_else(|| Error::domain("component list is empty"))?;
    let dim = first.dim();
    if let Some(i) = components.iter().position(|c| c.dim() != dim) {
        return Err(Error::domain(format!(
            "component {i} has dimension {} but component 0 has {dim}",
            components[i].dim()
        )));
    }
    Ok(dim)
}

/// Sums component evaluations in iteration order, starting from the first.
pub(crate) fn sum_components<'a>(
    mut parts: impl Iterator<Item = &'a VectorField>,
    t: f64,
    x: &DVector<f64>,
) -> DVector<f64> {
    let mut acc = parts.next().expect("at least one component").eval(t, x);
    for c in parts {
        acc += c.eval(t, x);
    }
    acc
}

/// Operator norm induced by the vector 1-norm: the largest absolute column sum.
pub fn induced_one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    #[test]
    fn affine_field() {
        let f = VectorField::affine(dmatrix![1.0, 2.0; 0.0, -3.0], dvector![1.0, 0.0]);
        assert_eq!(f.eval(0.3, &dvector![1.0, 1.0]), dvector![4.0, -3.0]);
        assert_eq!(f.lipschitz(), 5.0);
        assert_eq!(f.time_growth(), 0.0);
        assert_eq!(
            f.jacobian(0.0, &dvector![0.0, 0.0]).unwrap(),
            dmatrix![1.0, 2.0; 0.0, -3.0]
        );
    }

    #[test]
    fn missing_jacobian_is_a_capability_error() {
        let f = VectorField::new(1, 0.0, 1.0, |_, x| x.map(f64::sin));
        assert!(!f.has_jacobian());
        assert!(matches!(
            f.require_jacobian(0.0, &dvector![0.0]),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn sum_of_components() {
        let parts = vec![
            VectorField::linear(dmatrix![1.0]),
            VectorField::linear(dmatrix![-0.25]),
        ];
        let f = VectorField::sum(&parts).unwrap();
        assert_eq!(f.eval(0.0, &dvector![2.0]), dvector![1.5]);
        assert_eq!(f.lipschitz(), 1.25);
        assert_eq!(f.jacobian(0.0, &dvector![0.0]).unwrap(), dmatrix![0.75]);
        assert!(VectorField::sum(&[]).is_err());
        let mixed = vec![VectorField::zero(1), VectorField::zero(2)];
        assert!(matches!(VectorField::sum(&mixed), Err(Error::Domain(_))));
    }
}
