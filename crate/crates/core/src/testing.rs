//! Small algebraic models and dense oracles shared by unit, property and
//! acceptance tests. Everything here is an independent route: the oracles
//! assemble full dense systems and never call into the solver paths they
//! check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::deflation::{m_gradient, m_value};
use crate::model::{
    DenseLinearized, LinearizationMode, LinearizedSystem, ModelError, ParameterPoint,
    ProblemModel, SpaceTag,
};
use crate::Real;

/// Quadratic map `L_i(u) = (A u)_i + u^T Q_i u + c_i` with exact Jacobian
/// `J_i = A_i + ((Q_i + Q_i^T) u)^T`. Parameter dependence: `c = c0 + mu*c1`.
pub struct QuadraticModel<T: Real> {
    pub a: DMatrix<T>,
    pub q: Vec<DMatrix<T>>,
    pub c0: DVector<T>,
    pub c1: DVector<T>,
}

impl<T: Real> QuadraticModel<T> {
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || crate::real::<T>(rng.gen_range(-1.0..1.0));
        let a = DMatrix::from_fn(n, n, |_, _| draw())
            + DMatrix::identity(n, n) * crate::real::<T>(2.0);
        let q = (0..n)
            .map(|_| DMatrix::from_fn(n, n, |_, _| draw() * crate::real::<T>(0.3)))
            .collect();
        let c0 = DVector::from_fn(n, |_, _| draw());
        let c1 = DVector::from_fn(n, |_, _| draw());
        Self { a, q, c0, c1 }
    }
}

impl<T: Real> ProblemModel<T> for QuadraticModel<T> {
    fn dof_count(&self) -> usize {
        self.a.nrows()
    }

    fn space_tag(&self) -> SpaceTag {
        "algebraic:quadratic".into()
    }

    fn residual(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        let mut r = &self.a * u + &self.c0 + &self.c1 * mu.active_value();
        for (i, q) in self.q.iter().enumerate() {
            r[i] += u.dot(&(q * u));
        }
        r
    }

    fn linearize(
        &self,
        u: &DVector<T>,
        mu: &ParameterPoint<T>,
        mode: LinearizationMode,
    ) -> Result<Box<dyn LinearizedSystem<T> + '_>, ModelError> {
        let n = self.dof_count();
        let mut j = self.a.clone();
        for (i, q) in self.q.iter().enumerate() {
            let row = match mode {
                LinearizationMode::Newton => (q + q.transpose()) * u,
                // quadratic term frozen on its first argument
                LinearizationMode::Oseen => q.transpose() * u,
            };
            for k in 0..n {
                j[(i, k)] += row[k];
            }
        }
        let rhs = &j * u - self.residual(u, mu);
        Ok(Box::new(DenseLinearized::new(j, rhs)))
    }

    fn parameter_derivative(&self, _u: &DVector<T>, _mu: &ParameterPoint<T>) -> DVector<T> {
        self.c1.clone()
    }

    fn output_functional(&self, u: &DVector<T>) -> T {
        u[0]
    }
}

/// Circle constraint `L(u; mu) = u^2 + mu^2 - 1`, one dof; the branch is the
/// unit circle, convenient for corrector geometry checks.
pub struct CircleModel;

impl<T: Real> ProblemModel<T> for CircleModel {
    fn dof_count(&self) -> usize {
        1
    }

    fn space_tag(&self) -> SpaceTag {
        "algebraic:circle".into()
    }

    fn residual(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        let m = mu.active_value();
        DVector::from_element(1, u[0] * u[0] + m * m - T::one())
    }

    fn linearize(
        &self,
        u: &DVector<T>,
        mu: &ParameterPoint<T>,
        _mode: LinearizationMode,
    ) -> Result<Box<dyn LinearizedSystem<T> + '_>, ModelError> {
        let j = u[0] + u[0];
        let rhs = j * u[0] - (u[0] * u[0] + mu.active_value() * mu.active_value() - T::one());
        Ok(Box::new(DenseLinearized::new(
            DMatrix::from_element(1, 1, j),
            DVector::from_element(1, rhs),
        )))
    }

    fn parameter_derivative(&self, _u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        DVector::from_element(1, mu.active_value() + mu.active_value())
    }

    fn output_functional(&self, u: &DVector<T>) -> T {
        u[0]
    }
}

/// Straight branch `u = a mu`: `L(u; mu) = u - a mu`.
pub struct LinearBranchModel<T: Real> {
    pub slope: T,
}

impl<T: Real> ProblemModel<T> for LinearBranchModel<T> {
    fn dof_count(&self) -> usize {
        1
    }

    fn space_tag(&self) -> SpaceTag {
        "algebraic:linear".into()
    }

    fn residual(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        DVector::from_element(1, u[0] - self.slope * mu.active_value())
    }

    fn linearize(
        &self,
        _u: &DVector<T>,
        mu: &ParameterPoint<T>,
        _mode: LinearizationMode,
    ) -> Result<Box<dyn LinearizedSystem<T> + '_>, ModelError> {
        Ok(Box::new(DenseLinearized::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, self.slope * mu.active_value()),
        )))
    }

    fn parameter_derivative(&self, _u: &DVector<T>, _mu: &ParameterPoint<T>) -> DVector<T> {
        DVector::from_element(1, -self.slope)
    }

    fn output_functional(&self, u: &DVector<T>) -> T {
        u[0]
    }
}

/// Materializes a linearized operator as a dense matrix by applying it to
/// the canonical basis.
pub fn dense_matrix_of<T: Real>(lin: &dyn LinearizedSystem<T>, n: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = T::one();
        m.set_column(j, &lin.apply(&e));
    }
    m
}

/// Newton step of the explicitly assembled deflated system
/// `G = M L`, `J_G = M J_L + L grad(M)^T`, solved densely. This is the
/// oracle against which the Sherman-Morrison tau shortcut is checked.
pub fn deflated_newton_step_dense<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    u: &DVector<T>,
    mu: &ParameterPoint<T>,
    known: &[DVector<T>],
    power: u32,
) -> DVector<T> {
    let n = model.dof_count();
    let l = model.residual(u, mu);
    let lin = model.linearize(u, mu, LinearizationMode::Newton).unwrap();
    let j_l = dense_matrix_of(lin.as_ref(), n);
    let m = m_value(u, known, power).unwrap();
    let grad = m_gradient(u, known, power).unwrap();
    let j_g = &j_l * m + &l * grad.transpose();
    let g = &l * m;
    j_g.lu().solve(&(-g)).expect("dense deflated system is singular")
}

/// Solves the dense `(n+1) x (n+1)` bordered system
/// `[[J, L_mu], [u_dot^T, mu_dot]] [du; dmu] = [r; rho]` directly.
pub fn bordered_solve_dense<T: Real>(
    j: &DMatrix<T>,
    l_mu: &DVector<T>,
    u_dot: &DVector<T>,
    mu_dot: T,
    rhs_top: &DVector<T>,
    rhs_bottom: T,
) -> (DVector<T>, T) {
    let n = j.nrows();
    let mut big = DMatrix::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(j);
    for i in 0..n {
        big[(i, n)] = l_mu[i];
        big[(n, i)] = u_dot[i];
    }
    big[(n, n)] = mu_dot;
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = rhs_top[i];
    }
    rhs[n] = rhs_bottom;
    let sol = big.lu().solve(&rhs).expect("bordered oracle is singular");
    (sol.rows(0, n).into_owned(), sol[n])
}
