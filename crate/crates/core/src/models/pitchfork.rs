//! Scalar pitchfork normal form `L(x; mu) = x^3 - mu x + eps`.
//!
//! For `eps = 0` the solutions are `{0}` for `mu <= 0` and `{0, +-sqrt(mu)}`
//! for `mu > 0`, which makes the model a closed-form oracle for the deflated
//! continuation machinery. A small `eps` breaks the pitchfork into a primary
//! branch and a disconnected branch with a fold.

use nalgebra::{DMatrix, DVector};

use crate::model::{
    DenseLinearized, LinearizationMode, LinearizedSystem, ModelError, ParameterPoint, ProblemModel,
    SpaceTag,
};
use crate::Real;

#[derive(Debug, Clone)]
pub struct PitchforkModel<T: Real> {
    pub epsilon: T,
}

impl<T: Real> PitchforkModel<T> {
    pub fn new() -> Self {
        Self { epsilon: T::zero() }
    }

    pub fn with_epsilon(epsilon: T) -> Self {
        Self { epsilon }
    }

    pub fn residual_scalar(&self, x: T, mu: T) -> T {
        x * x * x - mu * x + self.epsilon
    }

    pub fn jacobian_scalar(&self, x: T, mu: T) -> T {
        crate::real::<T>(3.0) * x * x - mu
    }
}

impl<T: Real> Default for PitchforkModel<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ProblemModel<T> for PitchforkModel<T> {
    fn dof_count(&self) -> usize {
        1
    }

    fn space_tag(&self) -> SpaceTag {
        "algebraic:pitchfork".into()
    }

    fn residual(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        DVector::from_element(1, self.residual_scalar(u[0], mu.active_value()))
    }

    fn linearize(
        &self,
        u: &DVector<T>,
        mu: &ParameterPoint<T>,
        _mode: LinearizationMode,
    ) -> Result<Box<dyn LinearizedSystem<T> + '_>, ModelError> {
        // The cubic admits no Picard split that stays invertible at its own
        // roots ((x^k)^2 - mu vanishes at x = +-sqrt(mu)), so Oseen mode is
        // served by the Newton linearization.
        let x = u[0];
        let m = mu.active_value();
        let j = self.jacobian_scalar(x, m);
        let rhs = j * x - self.residual_scalar(x, m);
        Ok(Box::new(DenseLinearized::new(
            DMatrix::from_element(1, 1, j),
            DVector::from_element(1, rhs),
        )))
    }

    fn parameter_derivative(&self, u: &DVector<T>, _mu: &ParameterPoint<T>) -> DVector<T> {
        DVector::from_element(1, -u[0])
    }

    fn output_functional(&self, u: &DVector<T>) -> T {
        u[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd_jacobian_check;

    #[test]
    fn residual_and_jacobian_examples() {
        let m = PitchforkModel::<f64>::new();
        // trivial branch: L(0; mu) = 0 for all mu
        for mu in [-2.0, -0.5, 0.0, 0.3, 1.7] {
            assert_eq!(m.residual_scalar(0.0, mu), 0.0);
        }
        // analytic root x = 1 at mu = 1: L = 0, J = 2
        assert_eq!(m.residual_scalar(1.0, 1.0), 0.0);
        assert_eq!(m.jacobian_scalar(1.0, 1.0), 2.0);
    }

    #[test]
    fn newton_linearization_is_frechet_derivative() {
        let m = PitchforkModel::<f64>::with_epsilon(1e-3);
        let u = DVector::from_element(1, 0.7);
        let mu = ParameterPoint::scalar(0.4);
        let v = DVector::from_element(1, 1.0);
        let err = fd_jacobian_check(&m, &u, &mu, &v, 1e-6);
        assert!(err < 1e-8, "fd check error {err}");
    }

    #[test]
    fn epsilon_breaks_pitchfork_into_fold() {
        // Cubic discriminant: for eps != 0 three real roots exist only for
        // 4 mu^3 > 27 eps^2, i.e. past the fold at mu_f = (27 eps^2 / 4)^{1/3}.
        let eps = 1e-3_f64;
        let mu_f = (27.0 * eps * eps / 4.0).powf(1.0 / 3.0);
        let roots = |mu: f64| {
            let disc = 4.0 * mu.powi(3) - 27.0 * eps * eps;
            if disc > 0.0 {
                3
            } else {
                1
            }
        };
        assert_eq!(roots(mu_f * 0.9), 1);
        assert_eq!(roots(mu_f * 1.1), 3);
    }
}
