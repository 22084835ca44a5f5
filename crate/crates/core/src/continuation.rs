//! Simple and pseudo-arclength predictors, the bordered corrector and
//! adaptive step control.
//!
//! The pseudo-arclength corrector solves the augmented system
//!
//! ```text
//! L(u, mu)                                        = 0
//! N(u, mu) = u_dot^T (u - u_i) + mu_dot (mu - mu_i) - dS = 0
//! ```
//!
//! by Newton iterations on the bordered linear system. The bordered system
//! is solved with a bordering algorithm: two solves with the unbordered
//! operator per iteration, so any structure of the model solver (static
//! condensation in particular) is reused untouched.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{LinearizationMode, LinearizedSystem, ModelError, ParameterPoint, ProblemModel};
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("secant tangent from coincident points")]
    CoincidentPoints,
    #[error("bordered denominator vanished (fold proximity)")]
    FoldDenominator,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Unit tangent `(u_dot, mu_dot)` to a branch.
#[derive(Debug, Clone)]
pub struct TangentEstimate<T: Real> {
    pub u_dot: DVector<T>,
    pub mu_dot: T,
    pub normalized: bool,
}

impl<T: Real> TangentEstimate<T> {
    /// Tangent aligned with the parameter axis; the degenerate but valid
    /// tangent used before two points are available.
    pub fn parameter_axis(n: usize, direction: T) -> Self {
        Self { u_dot: DVector::zeros(n), mu_dot: direction.signum(), normalized: true }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationConfig<T: Real> {
    /// Initial arclength step; rescaled by the orchestrator after the first
    /// accepted step so it matches the state magnitude of the problem.
    pub delta_s: T,
    pub delta_s_min: T,
    pub delta_s_max: T,
    pub growth: T,
    pub shrink: T,
    /// Corrector iteration count below which the step is grown.
    pub iteration_threshold: usize,
    /// Bound `|d mu| <= max_relative_param_step * |mu|` on the parameter
    /// motion of one accepted step.
    pub max_relative_param_step: T,
    /// Fraction of the last parameter step used for the one simple step
    /// taken right after a bifurcation.
    pub post_bifurcation_step_fraction: T,
    /// Parameter step of the very first step away from the seed solution.
    pub first_step: T,
}

impl<T: Real> Default for ContinuationConfig<T> {
    fn default() -> Self {
        Self {
            delta_s: real(0.01),
            delta_s_min: real(1e-9),
            delta_s_max: real(1e3),
            growth: real(1.5),
            shrink: real(0.5),
            iteration_threshold: 6,
            max_relative_param_step: real(0.02),
            post_bifurcation_step_fraction: real(0.5),
            first_step: real(1e-3),
        }
    }
}

/// Secant tangent through two consecutive branch points, normalized so that
/// `<u_dot, u_dot> + mu_dot^2 = 1`. Orientation follows the sweep direction
/// `prev -> curr`.
pub fn secant_tangent<T: Real>(
    u_prev: &DVector<T>,
    mu_prev: T,
    u_curr: &DVector<T>,
    mu_curr: T,
    delta_s_prev: T,
) -> Result<TangentEstimate<T>, ContinuationError> {
    let mut u_dot = (u_curr - u_prev) / delta_s_prev;
    let mut mu_dot = (mu_curr - mu_prev) / delta_s_prev;
    let norm = (u_dot.dot(&u_dot) + mu_dot * mu_dot).sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return Err(ContinuationError::CoincidentPoints);
    }
    u_dot /= norm;
    mu_dot /= norm;
    Ok(TangentEstimate { u_dot, mu_dot, normalized: true })
}

/// Simple-continuation predictor: the previous state unchanged, parameter
/// advanced by `delta_mu`.
pub fn predict_simple<T: Real>(
    u: &DVector<T>,
    mu: T,
    delta_mu: T,
) -> (DVector<T>, T) {
    (u.clone(), mu + delta_mu)
}

/// Pseudo-arclength predictor: tangent step of length `delta_s`. The guess
/// satisfies the normalization hyperplane `N(u, mu; delta_s) = 0` exactly.
pub fn predict_arclength<T: Real>(
    u: &DVector<T>,
    mu: T,
    tangent: &TangentEstimate<T>,
    delta_s: T,
) -> (DVector<T>, T) {
    debug_assert!(tangent.normalized);
    (u + &tangent.u_dot * delta_s, mu + tangent.mu_dot * delta_s)
}

/// Solves the bordered system
/// `J du + L_mu dmu = rhs_top`, `u_dot^T du + mu_dot dmu = rhs_bottom`
/// through two solves with the unbordered operator `J`.
pub fn bordered_solve<T: Real>(
    lin: &mut (dyn LinearizedSystem<T> + '_),
    l_mu: &DVector<T>,
    tangent: &TangentEstimate<T>,
    rhs_top: &DVector<T>,
    rhs_bottom: T,
) -> Result<(DVector<T>, T), ContinuationError> {
    let z_r = lin.solve(rhs_top)?;
    let z_mu = lin.solve(l_mu)?;
    let denom = tangent.mu_dot - tangent.u_dot.dot(&z_mu);
    if denom == T::zero() || !denom.is_finite() {
        return Err(ContinuationError::FoldDenominator);
    }
    let dmu = (rhs_bottom - tangent.u_dot.dot(&z_r)) / denom;
    let du = z_r - z_mu * dmu;
    Ok((du, dmu))
}

/// Assembles and solves the linearized continuation system of the model at
/// `(u, mu)` with right-hand side `(L, delta_s)`.
pub fn bordered_solve_at<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    u: &DVector<T>,
    mu: &ParameterPoint<T>,
    tangent: &TangentEstimate<T>,
    delta_s: T,
) -> Result<(DVector<T>, T), ContinuationError> {
    let l = model.residual(u, mu);
    let l_mu = model.parameter_derivative(u, mu);
    let mut lin = model.linearize(u, mu, LinearizationMode::Newton)?;
    bordered_solve(lin.as_mut(), &l_mu, tangent, &l, delta_s)
}

/// Outcome of one arclength corrector run.
#[derive(Debug, Clone)]
pub struct CorrectorResult<T: Real> {
    pub u: DVector<T>,
    pub mu_active: T,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: T,
}

/// Newton corrector for the augmented system; starts from the arclength
/// predictor and keeps the iterates on the normalization hyperplane.
pub fn correct_arclength<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    base_u: &DVector<T>,
    base_mu: &ParameterPoint<T>,
    tangent: &TangentEstimate<T>,
    delta_s: T,
    tolerance: T,
    max_iterations: usize,
) -> Result<CorrectorResult<T>, ContinuationError> {
    let (mut u, mut mu_a) = predict_arclength(base_u, base_mu.active_value(), tangent, delta_s);
    let mut iterations = 0;
    let mut residual_norm;
    loop {
        let mu = base_mu.with_active_value(mu_a);
        let l = model.residual(&u, &mu);
        residual_norm = model.norm(&l);
        if !residual_norm.is_finite() {
            return Ok(CorrectorResult { u, mu_active: mu_a, iterations, converged: false, residual_norm });
        }
        if residual_norm <= tolerance {
            return Ok(CorrectorResult { u, mu_active: mu_a, iterations, converged: true, residual_norm });
        }
        if iterations >= max_iterations {
            return Ok(CorrectorResult { u, mu_active: mu_a, iterations, converged: false, residual_norm });
        }
        let n_res = tangent.u_dot.dot(&(&u - base_u))
            + tangent.mu_dot * (mu_a - base_mu.active_value())
            - delta_s;
        let l_mu = model.parameter_derivative(&u, &mu);
        let mut lin = model.linearize(&u, &mu, LinearizationMode::Newton)?;
        let (du, dmu) = bordered_solve(lin.as_mut(), &l_mu, tangent, &(-&l), -n_res)?;
        u += du;
        mu_a += dmu;
        iterations += 1;
    }
}

/// Step adaptation: grow on fast convergence, shrink otherwise, clamped to
/// the configured bounds.
pub fn adapt_step<T: Real>(
    iterations: usize,
    converged: bool,
    delta_s: T,
    config: &ContinuationConfig<T>,
) -> T {
    let factor = if converged && iterations < config.iteration_threshold {
        config.growth
    } else {
        config.shrink
    };
    (delta_s * factor).clamp(config.delta_s_min, config.delta_s_max)
}

/// Largest arclength step whose parameter motion respects the
/// `max_relative_param_step` bound at the current parameter value.
pub fn cap_step_by_param<T: Real>(
    delta_s: T,
    tangent: &TangentEstimate<T>,
    mu_active: T,
    config: &ContinuationConfig<T>,
) -> T {
    let cap = config.max_relative_param_step * mu_active.abs();
    if cap == T::zero() || tangent.mu_dot == T::zero() {
        return delta_s;
    }
    delta_s.min(cap / tangent.mu_dot.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{bordered_solve_dense, dense_matrix_of, CircleModel, QuadraticModel};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn secant_tangent_examples() {
        // straight branch u = 2 mu through (0,0) and (0.2, 0.1)
        let t = secant_tangent(&v(&[0.0]), 0.0, &v(&[0.2]), 0.1, 0.1).unwrap();
        let s5 = 5.0_f64.sqrt();
        assert_relative_eq!(t.u_dot[0], 2.0 / s5, max_relative = 1e-14);
        assert_relative_eq!(t.mu_dot, 1.0 / s5, max_relative = 1e-14);
        assert_relative_eq!(t.u_dot.dot(&t.u_dot) + t.mu_dot * t.mu_dot, 1.0, epsilon = 1e-12);

        // constant branch: tangent is (0, +-1)
        let t = secant_tangent(&v(&[3.0]), 0.5, &v(&[3.0]), 0.4, 0.1).unwrap();
        assert_eq!(t.u_dot[0], 0.0);
        assert_eq!(t.mu_dot, -1.0);

        // coincident points are an error
        assert!(secant_tangent(&v(&[1.0]), 0.5, &v(&[1.0]), 0.5, 0.1).is_err());
    }

    #[test]
    fn simple_predictor() {
        let (g, mu) = predict_simple(&v(&[1.0, 2.0]), 0.5, -0.1);
        assert_eq!(g, v(&[1.0, 2.0]));
        assert_relative_eq!(mu, 0.4);
    }

    #[test]
    fn arclength_predictor_examples() {
        // linear branch u = 2 mu from (0.2, 0.1) with dS = sqrt(0.05)
        let s5 = 5.0_f64.sqrt();
        let t = TangentEstimate { u_dot: v(&[2.0 / s5]), mu_dot: 1.0 / s5, normalized: true };
        let (g, mu) = predict_arclength(&v(&[0.2]), 0.1, &t, 0.05_f64.sqrt());
        assert_relative_eq!(g[0], 0.4, max_relative = 1e-14);
        assert_relative_eq!(mu, 0.2, max_relative = 1e-14);

        // zero step keeps the point
        let (g, mu) = predict_arclength(&v(&[0.2]), 0.1, &t, 0.0);
        assert_eq!(g[0], 0.2);
        assert_eq!(mu, 0.1);

        // predictor lies on the normalization hyperplane exactly
        let ds = 0.37;
        let (g, mu) = predict_arclength(&v(&[0.2]), 0.1, &t, ds);
        let n = t.u_dot.dot(&(&g - &v(&[0.2]))) + t.mu_dot * (mu - 0.1) - ds;
        assert!(n.abs() < 1e-15);
    }

    #[test]
    fn circle_corrector_converges_quickly() {
        // circle branch u^2 + mu^2 = 1 at (1, 0), tangent (0, 1), dS = 0.1
        let t = TangentEstimate { u_dot: v(&[0.0]), mu_dot: 1.0, normalized: true };
        let base_mu = ParameterPoint::scalar(0.0);
        let (g, mu) = predict_arclength(&v(&[1.0]), 0.0, &t, 0.1);
        assert_eq!((g[0], mu), (1.0, 0.1));
        let res =
            correct_arclength(&CircleModel, &v(&[1.0]), &base_mu, &t, 0.1, 1e-12, 10).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 3, "took {} iterations", res.iterations);
        assert_relative_eq!(
            res.u[0] * res.u[0] + res.mu_active * res.mu_active,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bordered_trivial_and_identity_cases() {
        // tangent aligned with the parameter axis: dmu = rhs_bottom exactly
        let model = QuadraticModel::<f64>::random(3, &mut ChaCha8Rng::seed_from_u64(7));
        let mu = ParameterPoint::scalar(0.3);
        let u = v(&[0.1, -0.2, 0.4]);
        let t = TangentEstimate::parameter_axis(3, 1.0);
        let l_mu = DVector::zeros(3);
        let mut lin = model.linearize(&u, &mu, LinearizationMode::Newton).unwrap();
        let rhs = v(&[0.5, 0.1, -0.2]);
        let (_, dmu) = bordered_solve(lin.as_mut(), &l_mu, &t, &rhs, 0.7).unwrap();
        assert_relative_eq!(dmu, 0.7, max_relative = 1e-14);

        // identity J, zero L_mu, e1 tangent with mu_dot = 1: du = rhs and the
        // second row forces dmu; checked against the dense 3x3 solve.
        let j = nalgebra::DMatrix::<f64>::identity(2, 2);
        let mut lin = crate::model::DenseLinearized::new(j.clone(), DVector::zeros(2));
        let t = TangentEstimate { u_dot: v(&[1.0, 0.0]), mu_dot: 1.0, normalized: true };
        let l_mu = v(&[0.0, 0.0]);
        let rhs = v(&[2.0, 0.0]);
        let (du, dmu) = bordered_solve(&mut lin, &l_mu, &t, &rhs, 5.0).unwrap();
        let (du_o, dmu_o) = bordered_solve_dense(&j, &l_mu, &t.u_dot, t.mu_dot, &rhs, 5.0);
        assert_relative_eq!(du[0], du_o[0], max_relative = 1e-14);
        assert_relative_eq!(dmu, dmu_o, max_relative = 1e-14);
        assert_relative_eq!(du[0], 2.0);
        assert_relative_eq!(dmu, 3.0);
    }

    #[test]
    fn bordered_matches_dense_oracle_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let n = 6;
            let model = QuadraticModel::<f64>::random(n, &mut rng);
            let u = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let mu = ParameterPoint::scalar(0.4);
            let mut u_dot =
                DVector::<f64>::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let mut mu_dot: f64 = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            let norm = (u_dot.dot(&u_dot) + mu_dot * mu_dot).sqrt();
            u_dot /= norm;
            mu_dot /= norm;
            let t = TangentEstimate { u_dot, mu_dot, normalized: true };
            let rhs = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let rhs_b = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            let l_mu = model.parameter_derivative(&u, &mu);

            let mut lin = model.linearize(&u, &mu, LinearizationMode::Newton).unwrap();
            let j = dense_matrix_of(lin.as_ref(), n);
            let (du, dmu) = bordered_solve(lin.as_mut(), &l_mu, &t, &rhs, rhs_b).unwrap();
            let (du_o, dmu_o) = bordered_solve_dense(&j, &l_mu, &t.u_dot, t.mu_dot, &rhs, rhs_b);

            let scale = du_o.norm().max(dmu_o.abs()).max(1.0);
            assert!((du - &du_o).norm() / scale < 1e-10, "trial {trial}");
            assert!((dmu - dmu_o).abs() / scale < 1e-10, "trial {trial}");

            // both rows of the bordered system hold residually
            let top = &j * &du_o + &l_mu * dmu_o - &rhs;
            assert!(top.norm() / scale < 1e-10);
        }
    }

    #[test]
    fn adapt_step_examples() {
        let cfg = ContinuationConfig::<f64>::default();
        // fast convergence grows by 1.5
        assert_relative_eq!(adapt_step(4, true, 0.1, &cfg), 0.15);
        // slow convergence or failure shrinks by 0.5
        assert_relative_eq!(adapt_step(9, true, 0.1, &cfg), 0.05);
        assert_relative_eq!(adapt_step(3, false, 0.1, &cfg), 0.05);
        // clamped at delta_s_max
        let mut ds = cfg.delta_s_max;
        for _ in 0..3 {
            ds = adapt_step(2, true, ds, &cfg);
        }
        assert_eq!(ds, cfg.delta_s_max);
    }

    #[test]
    fn adapt_step_monotone_in_iteration_count() {
        let cfg = ContinuationConfig::<f64>::default();
        let ds = 0.2;
        let mut prev = f64::INFINITY;
        for it in 0..12 {
            let next = adapt_step(it, true, ds, &cfg);
            assert!(next <= prev, "fewer iterations must never shrink the step");
            prev = next;
        }
    }

    #[test]
    fn param_step_cap() {
        let cfg = ContinuationConfig::<f64>::default();
        let t = TangentEstimate { u_dot: v(&[0.8]), mu_dot: 0.6, normalized: true };
        // cap = 0.02 * 0.5 = 0.01; ds capped at 0.01 / 0.6
        let ds = cap_step_by_param(1.0, &t, 0.5, &cfg);
        assert_relative_eq!(ds * t.mu_dot.abs(), 0.01, max_relative = 1e-12);
        // small steps unaffected
        assert_eq!(cap_step_by_param(1e-5, &t, 0.5, &cfg), 1e-5);
    }

    #[test]
    fn linear_branch_stays_on_branch() {
        use crate::testing::LinearBranchModel;
        let model = LinearBranchModel { slope: 2.0 };
        let cfg = ContinuationConfig::<f64>::default();
        let mut u = v(&[2.0]);
        let mut mu = 1.0;
        let mut prev = (v(&[2.0 - 2.0 * 1e-3]), 1.0 - 1e-3);
        let mut ds = 0.05;
        for _ in 0..20 {
            let t = secant_tangent(&prev.0, prev.1, &u, mu, ds).unwrap();
            let ds_used = cap_step_by_param(ds, &t, mu, &cfg);
            let res = correct_arclength(
                &model,
                &u,
                &ParameterPoint::scalar(mu),
                &t,
                ds_used,
                1e-12,
                10,
            )
            .unwrap();
            assert!(res.converged);
            // never leaves the branch
            assert_relative_eq!(res.u[0], 2.0 * res.mu_active, epsilon = 1e-10);
            // accepted parameter motion obeys the relative cap
            assert!((res.mu_active - mu).abs() <= cfg.max_relative_param_step * mu.abs() + 1e-12);
            prev = (u.clone(), mu);
            u = res.u.clone();
            mu = res.mu_active;
            ds = adapt_step(res.iterations, true, ds_used, &cfg);
        }
        assert!(mu > 1.05);
    }
}
