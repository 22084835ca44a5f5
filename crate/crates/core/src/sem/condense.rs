//! Two-level static condensation of the saddle-point block system.
//!
//! Level one eliminates the element-interior velocity dofs through the
//! block-diagonal `C`. Level two eliminates the non-constant pressure modes
//! through the (also element-blocked) pressure Schur block, leaving a dense
//! system on `b = [u_bnd, p_0]`: the free boundary velocity dofs plus one
//! mean-pressure dof per element. Back-substitution then recovers the
//! remaining pressure modes and the interior velocities.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::assembly::SemOperators;
use crate::model::{LinearizedSystem, ModelError};
use crate::probe::record_full_order_op;
use crate::Real;

/// Assembled block system in the `[u_bnd | u_int | p]` free-dof layout.
pub struct BlockSystem<'a, T: Real> {
    pub ops: &'a SemOperators<T>,
    /// Boundary-boundary velocity coupling over free dofs.
    pub a: DMatrix<T>,
    /// Per element: boundary-interior coupling (local boundary rows).
    pub b: Vec<DMatrix<T>>,
    /// Per element: interior-boundary coupling.
    pub bt: Vec<DMatrix<T>>,
    /// Per element: interior-interior coupling.
    pub c: Vec<DMatrix<T>>,
    /// Right-hand side of the direct form `J u^{k+1} = rhs`.
    pub rhs: DVector<T>,
    /// Mean-pressure pin `(element, value)` for enclosed (all-Dirichlet)
    /// problems, where the pressure is only determined up to a constant.
    pub pin: Option<(usize, T)>,
}

impl<'a, T: Real> BlockSystem<'a, T> {
    fn gather_bnd_local(&self, e: usize, x: &DVector<T>) -> DVector<T> {
        let el = &self.ops.elems[e];
        let mut out = DVector::zeros(el.bnd_free.len());
        for (i, slot) in el.bnd_free.iter().enumerate() {
            if let Some(fi) = slot {
                out[i] = x[*fi];
            }
        }
        out
    }

    /// Matrix-vector product of the full block operator.
    pub fn apply_matrix(&self, x: &DVector<T>) -> DVector<T> {
        let dof = &self.ops.dof;
        let np = dof.n_p_per_elem;
        let nint = 2 * dof.n_int_per_elem;
        let mut out = DVector::zeros(dof.dof_count());
        let x_bnd = x.rows(0, dof.n_bnd_free).into_owned();
        out.rows_mut(0, dof.n_bnd_free).copy_from(&(&self.a * &x_bnd));
        for e in 0..dof.n_elems {
            let el = &self.ops.elems[e];
            let x_loc = self.gather_bnd_local(e, x);
            let x_int = x.rows(dof.int_offset() + e * nint, nint).into_owned();
            let x_p = x.rows(dof.p_offset() + e * np, np).into_owned();

            let r_bnd_loc = &self.b[e] * &x_int + el.d_bnd.tr_mul(&x_p);
            for (i, slot) in el.bnd_free.iter().enumerate() {
                if let Some(fi) = slot {
                    out[*fi] += r_bnd_loc[i];
                }
            }
            let r_int = &self.bt[e] * &x_loc + &self.c[e] * &x_int + el.d_int.tr_mul(&x_p);
            out.rows_mut(dof.int_offset() + e * nint, nint).copy_from(&r_int);
            let r_p = &el.d_bnd * &x_loc + &el.d_int * &x_int;
            out.rows_mut(dof.p_offset() + e * np, np).copy_from(&r_p);
        }
        if let Some((elem, _)) = self.pin {
            let row = dof.p_dof(elem, 0);
            out[row] = x[row];
        }
        out
    }

    /// Factorizes the two-level condensation.
    pub fn condense(&self) -> Result<CondensedFactors<T>, ModelError> {
        let dof = &self.ops.dof;
        let np = dof.n_p_per_elem;
        let n_b = dof.n_bnd_free + dof.n_elems;
        let mut s = DMatrix::zeros(n_b, n_b);
        s.view_mut((0, 0), (dof.n_bnd_free, dof.n_bnd_free)).copy_from(&self.a);

        let mut lu_c = Vec::with_capacity(dof.n_elems);
        let mut x_fac = Vec::with_capacity(dof.n_elems);
        let mut y_fac = Vec::with_capacity(dof.n_elems);
        let mut b_hat = Vec::with_capacity(dof.n_elems);
        let mut c_hat = Vec::with_capacity(dof.n_elems);
        let mut lu_dhat = Vec::with_capacity(dof.n_elems);

        for e in 0..dof.n_elems {
            let el = &self.ops.elems[e];
            let nb2 = el.bnd_free.len();
            let lu = self.c[e].clone().lu();
            let x = lu.solve(&self.bt[e]).ok_or(ModelError::SingularSystem)?;
            let y = lu.solve(&el.d_int.transpose()).ok_or(ModelError::SingularSystem)?;

            let a1_loc = -(&self.b[e] * &x); // (2nb x 2nb)
            let g1 = el.d_bnd.transpose() - &self.b[e] * &y; // (2nb x np)
            let g2 = &el.d_bnd - &el.d_int * &x; // (np x 2nb)
            let g3 = -(&el.d_int * &y); // (np x np)

            // level-2 partition: local b-rows are the free boundary dofs of
            // this element plus its mean-pressure dof
            let mut bh = DMatrix::zeros(nb2 + 1, np - 1);
            bh.view_mut((0, 0), (nb2, np - 1)).copy_from(&g1.columns(1, np - 1));
            bh.view_mut((nb2, 0), (1, np - 1)).copy_from(&g3.view((0, 1), (1, np - 1)));
            let mut ch = DMatrix::zeros(np - 1, nb2 + 1);
            ch.view_mut((0, 0), (np - 1, nb2)).copy_from(&g2.rows(1, np - 1));
            ch.view_mut((0, nb2), (np - 1, 1)).copy_from(&g3.view((1, 0), (np - 1, 1)));
            let dlu = g3.view((1, 1), (np - 1, np - 1)).into_owned().lu();
            let w = dlu.solve(&ch).ok_or(ModelError::SingularSystem)?;
            let schur_loc = &bh * &w; // ((2nb+1) x (2nb+1))

            // scatter A1, the mean couplings and the Schur correction
            let p0_row = dof.n_bnd_free + e;
            let row_of = |i: usize| -> Option<usize> {
                if i < nb2 {
                    el.bnd_free[i]
                } else {
                    Some(p0_row)
                }
            };
            for i in 0..nb2 {
                let Some(fi) = el.bnd_free[i] else { continue };
                for j in 0..nb2 {
                    let Some(fj) = el.bnd_free[j] else { continue };
                    s[(fi, fj)] += a1_loc[(i, j)];
                }
                s[(fi, p0_row)] += g1[(i, 0)];
            }
            for j in 0..nb2 {
                if let Some(fj) = el.bnd_free[j] {
                    s[(p0_row, fj)] += g2[(0, j)];
                }
            }
            s[(p0_row, p0_row)] += g3[(0, 0)];
            for i in 0..=nb2 {
                let Some(fi) = row_of(i) else { continue };
                for j in 0..=nb2 {
                    let Some(fj) = row_of(j) else { continue };
                    s[(fi, fj)] -= schur_loc[(i, j)];
                }
            }

            lu_c.push(lu);
            x_fac.push(x);
            y_fac.push(y);
            b_hat.push(bh);
            c_hat.push(ch);
            lu_dhat.push(dlu);
        }

        if let Some((elem, _)) = self.pin {
            let row = dof.n_bnd_free + elem;
            for j in 0..n_b {
                s[(row, j)] = T::zero();
            }
            s[(row, row)] = T::one();
        }

        Ok(CondensedFactors {
            lu_s: s.lu(),
            lu_c,
            x_fac,
            y_fac,
            b_hat,
            c_hat,
            lu_dhat,
            pin_elem: self.pin.map(|(e, _)| e),
        })
    }
}

/// Stored factors of the two-level condensation; solves arbitrary
/// right-hand sides without re-factorizing.
pub struct CondensedFactors<T: Real> {
    lu_s: LU<T, Dyn, Dyn>,
    lu_c: Vec<LU<T, Dyn, Dyn>>,
    x_fac: Vec<DMatrix<T>>,
    y_fac: Vec<DMatrix<T>>,
    b_hat: Vec<DMatrix<T>>,
    c_hat: Vec<DMatrix<T>>,
    lu_dhat: Vec<LU<T, Dyn, Dyn>>,
    pin_elem: Option<usize>,
}

impl<T: Real> CondensedFactors<T> {
    pub fn solve(
        &self,
        system: &BlockSystem<'_, T>,
        rhs: &DVector<T>,
    ) -> Result<DVector<T>, ModelError> {
        record_full_order_op();
        let dof = &system.ops.dof;
        let np = dof.n_p_per_elem;
        let nint = 2 * dof.n_int_per_elem;
        let n_b = dof.n_bnd_free + dof.n_elems;

        let mut rhs_b = DVector::zeros(n_b);
        rhs_b
            .rows_mut(0, dof.n_bnd_free)
            .copy_from(&rhs.rows(0, dof.n_bnd_free).into_owned());
        let mut z = Vec::with_capacity(dof.n_elems);
        let mut r2 = Vec::with_capacity(dof.n_elems);
        for e in 0..dof.n_elems {
            let el = &system.ops.elems[e];
            let r_int = rhs.rows(dof.int_offset() + e * nint, nint).into_owned();
            let r_p = rhs.rows(dof.p_offset() + e * np, np).into_owned();
            let z_e = self.lu_c[e].solve(&r_int).ok_or(ModelError::SingularSystem)?;
            let rhs1_loc = &system.b[e] * &z_e;
            for (i, slot) in el.bnd_free.iter().enumerate() {
                if let Some(fi) = slot {
                    rhs_b[*fi] -= rhs1_loc[i];
                }
            }
            let r2_e = &r_p - &el.d_int * &z_e;
            rhs_b[dof.n_bnd_free + e] += r2_e[0];
            // level-2 right-hand side correction: -B_hat D_hat^{-1} r2_hat
            let r2_hat = r2_e.rows(1, np - 1).into_owned();
            let w = self.lu_dhat[e].solve(&r2_hat).ok_or(ModelError::SingularSystem)?;
            let corr = &self.b_hat[e] * &w;
            let nb2 = el.bnd_free.len();
            for i in 0..nb2 {
                if let Some(fi) = el.bnd_free[i] {
                    rhs_b[fi] -= corr[i];
                }
            }
            rhs_b[dof.n_bnd_free + e] -= corr[nb2];
            z.push(z_e);
            r2.push(r2_e);
        }
        if let Some(elem) = self.pin_elem {
            rhs_b[dof.n_bnd_free + elem] = rhs[dof.p_dof(elem, 0)];
        }

        let b_sol = self.lu_s.solve(&rhs_b).ok_or(ModelError::SingularSystem)?;
        if !b_sol.iter().all(|v| v.is_finite()) {
            return Err(ModelError::SingularSystem);
        }

        let mut out = DVector::zeros(dof.dof_count());
        out.rows_mut(0, dof.n_bnd_free)
            .copy_from(&b_sol.rows(0, dof.n_bnd_free).into_owned());
        for e in 0..dof.n_elems {
            let el = &system.ops.elems[e];
            let nb2 = el.bnd_free.len();
            let mut b_loc = DVector::zeros(nb2 + 1);
            for (i, slot) in el.bnd_free.iter().enumerate() {
                if let Some(fi) = slot {
                    b_loc[i] = b_sol[*fi];
                }
            }
            b_loc[nb2] = b_sol[dof.n_bnd_free + e];
            // back-substitute the non-constant pressure modes
            let r2_hat = r2[e].rows(1, np - 1).into_owned();
            let p_hat = self
                .lu_dhat[e]
                .solve(&(&r2_hat - &self.c_hat[e] * &b_loc))
                .ok_or(ModelError::SingularSystem)?;
            let mut p_e = DVector::zeros(np);
            p_e[0] = b_loc[nb2];
            p_e.rows_mut(1, np - 1).copy_from(&p_hat);
            // back-substitute interior velocities
            let u_loc = b_loc.rows(0, nb2).into_owned();
            let u_int = &z[e] - &self.x_fac[e] * &u_loc - &self.y_fac[e] * &p_e;
            out.rows_mut(dof.int_offset() + e * nint, nint).copy_from(&u_int);
            out.rows_mut(dof.p_offset() + e * np, np).copy_from(&p_e);
        }
        Ok(out)
    }
}

/// [`LinearizedSystem`] wrapper: applies through the blocks, solves through
/// the condensation, factorizing lazily on first solve.
pub struct SemLinearized<'a, T: Real> {
    pub system: BlockSystem<'a, T>,
    factors: Option<CondensedFactors<T>>,
}

impl<'a, T: Real> SemLinearized<'a, T> {
    pub fn new(system: BlockSystem<'a, T>) -> Self {
        Self { system, factors: None }
    }
}

impl<'a, T: Real> LinearizedSystem<T> for SemLinearized<'a, T> {
    fn apply(&self, v: &DVector<T>) -> DVector<T> {
        record_full_order_op();
        self.system.apply_matrix(v)
    }

    fn solve(&mut self, rhs: &DVector<T>) -> Result<DVector<T>, ModelError> {
        if self.factors.is_none() {
            self.factors = Some(self.system.condense()?);
        }
        self.factors.as_ref().unwrap().solve(&self.system, rhs)
    }

    fn direct_rhs(&self) -> DVector<T> {
        self.system.rhs.clone()
    }
}
