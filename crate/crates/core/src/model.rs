//! Problem abstraction shared by the full-order, reduced and algebraic models.

use nalgebra::DVector;
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter point is invalid: {0}")]
    InvalidParameter(String),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("{0}")]
    Invalid(String),
}

/// A point in parameter space, `mu in R^N`.
///
/// For the channel model the components are ordered `(nu, s, c_H)`:
/// viscosity, inlet scaling and inlet-height factor. `active` selects the
/// component varied by continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint<T: Real> {
    values: Vec<T>,
    active: usize,
}

impl<T: Real> ParameterPoint<T> {
    pub fn new(values: Vec<T>, active: usize) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidParameter("empty parameter vector".into()));
        }
        if active >= values.len() {
            return Err(ModelError::InvalidParameter(format!(
                "active index {} out of range for {} components",
                active,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter("non-finite component".into()));
        }
        Ok(Self { values, active })
    }

    /// Single-parameter point, active by construction.
    pub fn scalar(value: T) -> Self {
        Self { values: vec![value], active: 0 }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn active_value(&self) -> T {
        self.values[self.active]
    }

    /// Copy of the point with the active component replaced.
    pub fn with_active_value(&self, value: T) -> Self {
        let mut values = self.values.clone();
        values[self.active] = value;
        Self { values, active: self.active }
    }

    pub fn get(&self, index: usize) -> T {
        self.values[index]
    }
}

/// Tag of the discrete space a coefficient vector lives in.
pub type SpaceTag = String;

/// Flat coefficient vector of a discrete field.
///
/// For the full-order channel model the coefficients are the free velocity
/// dofs followed by the pressure dofs; Dirichlet values never enter the
/// vector (the lifting field carries them). For the reduced model the
/// coefficients are the reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    pub coeffs: DVector<T>,
    pub space_tag: SpaceTag,
}

impl<T: Real> StateVector<T> {
    pub fn new(coeffs: DVector<T>, space_tag: impl Into<SpaceTag>) -> Self {
        Self { coeffs, space_tag: space_tag.into() }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }
}

/// Linearization used to build the step operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearizationMode {
    /// Full Frechet derivative; quadratic convergence near simple roots.
    Newton,
    /// Convection frozen at the previous iterate; linear but robust.
    Oseen,
}

/// One assembled linearization of the residual at a state.
///
/// `solve` factorizes lazily on first use so that a single assembly can back
/// several solves (the bordering algorithm of the continuation module relies
/// on this to reuse the static condensation).
pub trait LinearizedSystem<T: Real> {
    /// Applies the linearized operator to a vector.
    fn apply(&self, v: &DVector<T>) -> DVector<T>;

    /// Solves `J x = rhs`.
    fn solve(&mut self, rhs: &DVector<T>) -> Result<DVector<T>, ModelError>;

    /// Right-hand side of the direct form `J u^{k+1} = rhs`, i.e. the vector
    /// such that solving against it advances the iterate one step.
    fn direct_rhs(&self) -> DVector<T>;
}

/// Contract every solvable problem implements: residual, linearizations,
/// parameter derivative, inner product and the scalar diagram output.
pub trait ProblemModel<T: Real> {
    fn dof_count(&self) -> usize;

    fn space_tag(&self) -> SpaceTag;

    /// Residual `L(u; mu)` over the free dofs.
    fn residual(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T>;

    /// Assembles the linearized system at `u`.
    fn linearize(
        &self,
        u: &DVector<T>,
        mu: &ParameterPoint<T>,
        mode: LinearizationMode,
    ) -> Result<Box<dyn LinearizedSystem<T> + '_>, ModelError>;

    /// `dL/dmu_active` at `(u, mu)`.
    ///
    /// The default is a central difference; models where the derivative is
    /// exact and cheap override it. For residuals polynomial of degree <= 2
    /// in the active parameter the central difference is itself exact.
    fn parameter_derivative(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        let mu_a = mu.active_value();
        let h = crate::real::<T>(1e-5) * mu_a.abs().max(T::one());
        let plus = self.residual(u, &mu.with_active_value(mu_a + h));
        let minus = self.residual(u, &mu.with_active_value(mu_a - h));
        (plus - minus) / (h + h)
    }

    /// Inner product of the model space; discrete l2 unless overridden.
    fn inner_product(&self, a: &DVector<T>, b: &DVector<T>) -> T {
        default_inner_product(a, b).expect("inner product length mismatch")
    }

    fn norm(&self, a: &DVector<T>) -> T {
        self.inner_product(a, a).sqrt()
    }

    /// Scalar output `f(u)` plotted in bifurcation diagrams.
    fn output_functional(&self, u: &DVector<T>) -> T;
}

/// Discrete l2 inner product, the default for every provided model.
pub fn default_inner_product<T: Real>(a: &DVector<T>, b: &DVector<T>) -> Result<T, ModelError> {
    if a.len() != b.len() {
        return Err(ModelError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.dot(b))
}

/// Dense linearized system used by the algebraic and reduced models.
pub struct DenseLinearized<T: Real> {
    pub matrix: nalgebra::DMatrix<T>,
    pub rhs: DVector<T>,
    lu: Option<nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<T: Real> DenseLinearized<T> {
    pub fn new(matrix: nalgebra::DMatrix<T>, rhs: DVector<T>) -> Self {
        Self { matrix, rhs, lu: None }
    }
}

impl<T: Real> LinearizedSystem<T> for DenseLinearized<T> {
    fn apply(&self, v: &DVector<T>) -> DVector<T> {
        &self.matrix * v
    }

    fn solve(&mut self, rhs: &DVector<T>) -> Result<DVector<T>, ModelError> {
        if self.lu.is_none() {
            self.lu = Some(self.matrix.clone().lu());
        }
        self.lu
            .as_ref()
            .unwrap()
            .solve(rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or(ModelError::SingularSystem)
    }

    fn direct_rhs(&self) -> DVector<T> {
        self.rhs.clone()
    }
}

/// Relative error between `J v` and the central difference
/// `(L(u + h v) - L(u - h v)) / 2h` in Newton mode.
pub fn fd_jacobian_check<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    u: &DVector<T>,
    mu: &ParameterPoint<T>,
    v: &DVector<T>,
    h: T,
) -> T {
    let lin = model
        .linearize(u, mu, LinearizationMode::Newton)
        .expect("linearization failed in jacobian check");
    let jv = lin.apply(v);
    let plus = model.residual(&(u + v * h), mu);
    let minus = model.residual(&(u - v * h), mu);
    let fd = (plus - minus) / (h + h);
    let denom = jv.norm().max(fd.norm()).max(crate::real::<T>(1e-30));
    (jv - fd).norm() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_point_validation() {
        assert!(ParameterPoint::<f64>::new(vec![], 0).is_err());
        assert!(ParameterPoint::new(vec![1.0, 2.0], 2).is_err());
        assert!(ParameterPoint::new(vec![f64::NAN], 0).is_err());
        let p = ParameterPoint::new(vec![0.5, 1.0, 0.9], 0).unwrap();
        assert_eq!(p.active_value(), 0.5);
        let q = p.with_active_value(0.25);
        assert_eq!(q.active_value(), 0.25);
        assert_eq!(q.get(2), 0.9);
    }

    #[test]
    fn inner_product_examples() {
        // (e1, e1) = 1
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(default_inner_product(&e1, &e1).unwrap(), 1.0);
        // (u, 0) = 0
        let u = DVector::from_vec(vec![3.0, -2.0, 7.0]);
        let z = DVector::zeros(3);
        assert_eq!(default_inner_product(&u, &z).unwrap(), 0.0);
        // ((1,2),(3,4)) = 11
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(default_inner_product(&a, &b).unwrap(), 11.0);
        // length mismatch is an error
        assert!(default_inner_product(&a, &u).is_err());
    }
}
