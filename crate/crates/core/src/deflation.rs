//! Shifted deflation operators, the Sherman-Morrison tau formula and the
//! sign-preserving clamping heuristic.
//!
//! A known solution `w` is removed from the reach of the iterative solver by
//! multiplying the residual with the scalar shifted operator
//! `M(u; w) = 1 + 1 / ||u - w||^p`. Several known solutions compose
//! multiplicatively, which keeps `M` scalar so the tau identity below still
//! applies. The Newton step of the deflated system `G = M L` is then
//! `tau * delta_u` with
//!
//! `tau = 1 / (1 + M^{-1} M'^T J_L^{-1} L) = 1 / (1 - M^{-1} M'^T delta_u)`,
//!
//! where `delta_u = -J_L^{-1} L` is the undeflated Newton step. Distances are
//! measured in the discrete l2 norm, which is the inner product of every
//! model in this crate.

use nalgebra::DVector;
use thiserror::Error;

use crate::{real, Real};

#[derive(Debug, Error)]
pub enum DeflationError {
    #[error("state coincides with a deflated solution")]
    SingularDeflation,
    #[error("tau denominator vanished")]
    TauSingular,
}

/// Parameters of the shifted power deflation operator `1 + 1/d^p`.
///
/// The shift is fixed at one: it keeps `M >= 1` everywhere, so a solver can
/// never be dragged toward spurious far-field states, while `M -> inf` as
/// the iterate approaches a deflated solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeflationOperator {
    pub power: u32,
}

impl DeflationOperator {
    pub fn new(power: u32) -> Self {
        assert!(power >= 1, "deflation power must be positive");
        Self { power }
    }
}

impl Default for DeflationOperator {
    fn default() -> Self {
        Self { power: 1 }
    }
}

fn dist_powers<T: Real>(
    u: &DVector<T>,
    known: &[DVector<T>],
    p: u32,
    scale: T,
) -> Result<Vec<(T, T)>, DeflationError> {
    known
        .iter()
        .map(|w| {
            let d = (u - w).norm() / scale;
            if d == T::zero() {
                return Err(DeflationError::SingularDeflation);
            }
            Ok((d, d.powi(p as i32)))
        })
        .collect()
}

/// `M(u) = prod_i (1 + ||u - w_i||^{-p})`; the empty product is one.
pub fn m_value<T: Real>(
    u: &DVector<T>,
    known: &[DVector<T>],
    p: u32,
) -> Result<T, DeflationError> {
    m_value_scaled(u, known, p, T::one())
}

/// [`m_value`] with distances measured in units of `scale`, i.e. under the
/// inner product `<a, b> / scale^2`. The state magnitudes of a discrete PDE
/// are arbitrary in the plain coefficient l2 norm; scaling by the expected
/// inter-solution distance puts the deflation operator in the regime where
/// it can actually push an iterate from one basin to another.
pub fn m_value_scaled<T: Real>(
    u: &DVector<T>,
    known: &[DVector<T>],
    p: u32,
    scale: T,
) -> Result<T, DeflationError> {
    let mut m = T::one();
    for (_, dp) in dist_powers(u, known, p, scale)? {
        m *= T::one() + T::one() / dp;
    }
    Ok(m)
}

/// Gradient of [`m_value`] with respect to `u` under the l2 norm.
///
/// For a single known solution this is `-p ||u-w||^{-p-2} (u - w)`; several
/// solutions combine through the product rule.
pub fn m_gradient<T: Real>(
    u: &DVector<T>,
    known: &[DVector<T>],
    p: u32,
) -> Result<DVector<T>, DeflationError> {
    m_gradient_scaled(u, known, p, T::one())
}

/// Gradient of [`m_value_scaled`] with respect to `u`.
pub fn m_gradient_scaled<T: Real>(
    u: &DVector<T>,
    known: &[DVector<T>],
    p: u32,
    scale: T,
) -> Result<DVector<T>, DeflationError> {
    let mut grad = DVector::zeros(u.len());
    if known.is_empty() {
        return Ok(grad);
    }
    let dps = dist_powers(u, known, p, scale)?;
    let m = m_value_scaled(u, known, p, scale)?;
    let pf = real::<T>(p as f64);
    for (w, (d, dp)) in known.iter().zip(dps) {
        // grad M_i / M_i = -p d^{-p-2} (u - w) / (1 + d^{-p}), d in scale units
        let mi = T::one() + T::one() / dp;
        let coeff = -pf / (dp * d * d) / mi * m / (scale * scale);
        grad.axpy(coeff, &(u - w), T::one());
    }
    Ok(grad)
}

/// Raw Sherman-Morrison factor `tau = 1 / (1 - M^{-1} M'^T delta_u)`.
pub fn tau_raw<T: Real>(
    m: T,
    m_grad: &DVector<T>,
    delta_u: &DVector<T>,
) -> Result<T, DeflationError> {
    let denom = T::one() - m_grad.dot(delta_u) / m;
    if denom == T::zero() {
        return Err(DeflationError::TauSingular);
    }
    Ok(T::one() / denom)
}

/// Clamping state: running scale `c`, thresholds and the sign of the
/// previous tau. `c` starts at one for every solve and is never decreased.
#[derive(Debug, Clone, PartialEq)]
pub struct TauClampState<T: Real> {
    pub tau_minus: T,
    pub tau_plus: T,
    pub c: T,
    pub s_c: T,
    pub last_sign: Option<bool>,
}

impl<T: Real> Default for TauClampState<T> {
    fn default() -> Self {
        Self {
            tau_minus: real(-0.4),
            tau_plus: real(0.6),
            c: T::one(),
            s_c: real(1.75),
            last_sign: None,
        }
    }
}

impl<T: Real> TauClampState<T> {
    pub fn new(tau_minus: T, tau_plus: T, s_c: T) -> Self {
        assert!(tau_minus < T::zero() && T::zero() < tau_plus, "thresholds must straddle zero");
        assert!(s_c > T::one(), "scale growth factor must exceed one");
        Self { tau_minus, tau_plus, c: T::one(), s_c, last_sign: None }
    }
}

/// Sign-preserving minimum-magnitude clamp with scale growth.
///
/// When the sign of tau flips from negative to positive the previous escape
/// from a deflated solution failed, so the scale `c` is grown by `s_c`
/// before clamping. The clamp maps `c*tau` in `(tau_minus, 0)` to
/// `tau_minus`, `c*tau` in `[0, tau_plus)` to `tau_plus`, and leaves larger
/// magnitudes at `c*tau`.
pub fn tau_clamped<T: Real>(tau: T, state: &mut TauClampState<T>) -> T {
    let positive = tau >= T::zero();
    if state.last_sign == Some(false) && tau > T::zero() {
        state.c *= state.s_c;
    }
    state.last_sign = Some(positive);
    let ct = state.c * tau;
    if ct > state.tau_minus && ct < T::zero() {
        state.tau_minus
    } else if ct >= T::zero() && ct < state.tau_plus {
        state.tau_plus
    } else {
        ct
    }
}

/// Deflated update `delta_u_G = tau' * delta_u_L`.
pub fn deflated_update<T: Real>(delta_u: &DVector<T>, tau: T) -> DVector<T> {
    delta_u * tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn m_value_examples() {
        // unit distance, p = 2, one known solution -> 2
        let m = m_value(&v(&[1.0]), &[v(&[0.0])], 2).unwrap();
        assert_eq!(m, 2.0);
        // empty product -> 1
        assert_eq!(m_value(&v(&[0.7]), &[], 2).unwrap(), 1.0);
        // u = 0.5, w = 0, p = 2 -> 1 + 1/0.25 = 5
        assert_eq!(m_value(&v(&[0.5]), &[v(&[0.0])], 2).unwrap(), 5.0);
        // zero distance is a singular-deflation signal
        assert!(matches!(
            m_value(&v(&[0.5]), &[v(&[0.5])], 2),
            Err(DeflationError::SingularDeflation)
        ));
    }

    #[test]
    fn m_value_at_least_one() {
        let w = v(&[0.3, -0.8, 2.0]);
        for k in 1..50 {
            let u = &w + v(&[0.1, -0.05, 0.2]) * (k as f64);
            assert!(m_value(&u, &[w.clone()], 1).unwrap() >= 1.0);
        }
        // M -> 1 at infinity
        let far = &w + v(&[1.0, 0.0, 0.0]) * 1e9;
        assert_relative_eq!(m_value(&far, &[w], 2).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn m_gradient_scalar_example() {
        // u = 0.5, w = 0, p = 2 -> -2 * 0.5 * 0.5^{-4} = -16
        let g = m_gradient(&v(&[0.5]), &[v(&[0.0])], 2).unwrap();
        assert_relative_eq!(g[0], -16.0, max_relative = 1e-14);
    }

    #[test]
    fn m_gradient_vanishes_at_infinity() {
        let u = v(&[1000.0]);
        let g = m_gradient(&u, &[v(&[0.0])], 2).unwrap();
        assert!(g.norm() <= 1e-8);
    }

    #[test]
    fn m_gradient_matches_finite_difference() {
        // random-ish u, w pairs in R^5, two known solutions
        let u = v(&[0.3, -0.2, 0.9, 0.1, -0.7]);
        let known = vec![v(&[1.0, 0.4, -0.3, 0.2, 0.0]), v(&[-0.5, 0.8, 0.1, -0.9, 0.6])];
        for p in [1u32, 2, 3] {
            let g = m_gradient(&u, &known, p).unwrap();
            let h = 1e-6;
            for i in 0..5 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += h;
                um[i] -= h;
                let fd = (m_value(&up, &known, p).unwrap() - m_value(&um, &known, p).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn tau_raw_examples() {
        // zero gradient -> tau = 1 (deflation inactive far away)
        let tau = tau_raw(3.0, &v(&[0.0, 0.0]), &v(&[1.0, -2.0])).unwrap();
        assert_eq!(tau, 1.0);
        // pitchfork chain: mu = 1, x = 0.5, w = 0, p = 2
        // M = 5, M' = -16, delta_u = -L/J = -(-0.375)/(-0.25) = -1.5
        // tau = 1 / (1 - (1/5)(-16)(-1.5)) = -5/19
        let m = m_value(&v(&[0.5]), &[v(&[0.0])], 2).unwrap();
        let g = m_gradient(&v(&[0.5]), &[v(&[0.0])], 2).unwrap();
        let delta = v(&[-1.5]);
        let tau = tau_raw(m, &g, &delta).unwrap();
        assert_relative_eq!(tau, -5.0 / 19.0, max_relative = 1e-14);
        // continuation of the example: the deflated update flips orientation
        let step = deflated_update(&delta, tau);
        assert_relative_eq!(step[0], 1.5 * 5.0 / 19.0, max_relative = 1e-14);
        assert!(step[0] > 0.0, "step moves away from the deflated root toward +1");
    }

    #[test]
    fn clamp_table() {
        // tau = 1e-7, c = 1 -> 0.6
        let mut s = TauClampState::<f64>::default();
        assert_eq!(tau_clamped(1e-7, &mut s), 0.6);
        // tau = -0.01, c = 1 -> -0.4
        let mut s = TauClampState::<f64>::default();
        assert_eq!(tau_clamped(-0.01, &mut s), -0.4);
        // tau = 0.8, c = 1 -> unchanged
        let mut s = TauClampState::<f64>::default();
        assert_eq!(tau_clamped(0.8, &mut s), 0.8);
        // previous tau < 0, current tau = 0.05 -> c = 1.75 and tau' = 0.6
        let mut s = TauClampState::<f64>::default();
        assert_eq!(tau_clamped(-0.01, &mut s), -0.4);
        assert_eq!(tau_clamped(0.05, &mut s), 0.6);
        assert_eq!(s.c, 1.75);
    }

    #[test]
    fn clamp_preserves_sign_and_grows_c() {
        let mut s = TauClampState::<f64>::default();
        let mut last_c = s.c;
        let taus = [0.3, -0.2, 0.1, -1e-9, 2.0, -0.5, 0.7];
        for &t in &taus {
            let out = tau_clamped(t, &mut s);
            assert_eq!(out > 0.0, t >= 0.0, "sign preserved for tau = {t}");
            assert!(s.c >= last_c, "c never decreases");
            last_c = s.c;
        }
    }

    #[test]
    fn deflated_update_examples() {
        let d = v(&[2.0, -4.0]);
        assert_eq!(deflated_update(&d, 1.0), d);
        let scaled = deflated_update(&d, 0.6);
        assert_eq!(scaled, v(&[1.2, -2.4]));
    }

    #[test]
    fn liminf_property_on_pitchfork() {
        // Along x_i -> w = 1 (a simple root of x^3 - x), M * |L| stays
        // bounded away from zero, the defining inequality of a deflation
        // operator.
        let w = v(&[1.0]);
        for p in [1u32, 2] {
            for k in 1..40 {
                let x = 1.0 + 0.5_f64.powi(k);
                let l = (x * x * x - x).abs();
                let m = m_value(&v(&[x]), &[w.clone()], p).unwrap();
                // |L| ~ 2 d near the root, M ~ d^{-p}, so M |L| ~ 2 d^{1-p}.
                assert!(m * l > 1.0, "liminf bound violated at distance 2^-{k}, p = {p}");
            }
        }
    }
}
