//! Weak-form assembly of the steady Navier-Stokes block system.
//!
//! Element matrices follow the entry formulas of the saddle-point system:
//! the velocity blocks carry `a(.,.)` plus the mode-dependent convection
//! linearizations, `c(phi_j, u^k, phi_i) + c(u^k, phi_j, phi_i)` for Newton
//! and only the convected term for Oseen; the `D` blocks carry
//! `b(phi_i, q_l)`. All elements are axis-aligned rectangles, so the
//! reference tables of [`GllBasis`] are shared and only constant Jacobian
//! factors differ per element.

use nalgebra::{DMatrix, DVector};

use super::condense::BlockSystem;
use super::mesh::Mesh;
use super::space::{DofMap, GllBasis, GridField, NodeRef};
use crate::model::LinearizationMode;
use crate::probe::record_full_order_op;
use crate::{real, Real};

pub type ForcingFn<'a, T> = dyn Fn(T, T) -> (T, T) + 'a;

/// Per-element constants: geometry factors and the state-independent
/// matrices (viscous stiffness, divergence couplings).
#[derive(Debug, Clone)]
pub struct ElemOps<T: Real> {
    pub jac: T,
    pub dx: T,
    pub dy: T,
    /// Scalar viscous stiffness `int grad phi_j . grad phi_i`, (n x n).
    pub stiff: DMatrix<T>,
    /// `b(phi e_x, q)` over all local velocity nodes, (np x n).
    pub div_x: DMatrix<T>,
    /// `b(phi e_y, q)` over all local velocity nodes, (np x n).
    pub div_y: DMatrix<T>,
    /// Local boundary-mode nodes in ascending local order.
    pub bnd_nodes: Vec<usize>,
    /// Free index of each local boundary velocity dof `2*pos + comp`.
    pub bnd_free: Vec<Option<usize>>,
    /// `b`-coupling of pressure to local boundary velocity dofs, (np x 8P).
    pub d_bnd: DMatrix<T>,
    /// `b`-coupling of pressure to interior velocity dofs, (np x 2 nint).
    pub d_int: DMatrix<T>,
}

/// Mesh- and order-bound assembly engine.
pub struct SemOperators<T: Real> {
    pub mesh: Mesh<T>,
    pub basis: GllBasis<T>,
    pub dof: DofMap<T>,
    pub elems: Vec<ElemOps<T>>,
    /// With convection disabled the residual and both linearizations reduce
    /// to the Stokes problem (used by the manufactured-solution checks).
    pub with_convection: bool,
}

impl<T: Real> SemOperators<T> {
    pub fn new(mesh: Mesh<T>, order: usize) -> Self {
        let basis = GllBasis::new(order);
        let dof = DofMap::build(&mesh, &basis);
        let n = basis.nodes_per_elem();
        let np = basis.pressure_per_elem();
        let nint = basis.interior_per_elem();
        let mut elems = Vec::with_capacity(mesh.n_elements());
        for (e, rect) in mesh.elements.iter().enumerate() {
            let four = real::<T>(4.0);
            let two = real::<T>(2.0);
            let jac = rect.hx * rect.hy / four;
            let dx = two / rect.hx;
            let dy = two / rect.hy;
            let stiff = &basis.kxx * (jac * dx * dx) + &basis.kyy * (jac * dy * dy);
            // b(w, q) = -int q div w
            let div_x = &basis.gx * (-jac * dx);
            let div_y = &basis.gy * (-jac * dy);
            let mut bnd_nodes = Vec::new();
            for local in 0..n {
                if !basis.is_interior_node(local) {
                    bnd_nodes.push(local);
                }
            }
            let mut bnd_free = vec![None; 2 * bnd_nodes.len()];
            for (pos, &local) in bnd_nodes.iter().enumerate() {
                if let NodeRef::Bnd(g) = dof.elem_nodes[e][local] {
                    for c in 0..2 {
                        bnd_free[2 * pos + c] = dof.bnd_free[2 * g + c];
                    }
                }
            }
            let mut d_bnd = DMatrix::zeros(np, 2 * bnd_nodes.len());
            for (pos, &local) in bnd_nodes.iter().enumerate() {
                for l in 0..np {
                    d_bnd[(l, 2 * pos)] = div_x[(l, local)];
                    d_bnd[(l, 2 * pos + 1)] = div_y[(l, local)];
                }
            }
            let mut d_int = DMatrix::zeros(np, 2 * nint);
            let mut k_int = 0;
            for local in 0..n {
                if basis.is_interior_node(local) {
                    for l in 0..np {
                        d_int[(l, 2 * k_int)] = div_x[(l, local)];
                        d_int[(l, 2 * k_int + 1)] = div_y[(l, local)];
                    }
                    k_int += 1;
                }
            }
            elems.push(ElemOps {
                jac,
                dx,
                dy,
                stiff,
                div_x,
                div_y,
                bnd_nodes,
                bnd_free,
                d_bnd,
                d_int,
            });
        }
        Self { mesh, basis, dof, elems, with_convection: true }
    }

    /// Same discretization with the convective term dropped (Stokes).
    pub fn stokes(mesh: Mesh<T>, order: usize) -> Self {
        let mut ops = Self::new(mesh, order);
        ops.with_convection = false;
        ops
    }

    pub fn dof_count(&self) -> usize {
        self.dof.dof_count()
    }

    fn quad_values(&self, local: &DVector<T>, table: &DMatrix<T>) -> DVector<T> {
        table.tr_mul(local)
    }

    /// Velocity components and reference derivatives of one element at the
    /// quadrature grid: `(ux, uy, ux_xi, ux_eta, uy_xi, uy_eta)`.
    fn element_field_at_quad(
        &self,
        field: &GridField<T>,
        e: usize,
    ) -> (DVector<T>, DVector<T>, DVector<T>, DVector<T>, DVector<T>, DVector<T>) {
        let n = self.basis.nodes_per_elem();
        let loc = field.gather_element(&self.dof, e);
        let mut ux = DVector::zeros(n);
        let mut uy = DVector::zeros(n);
        for i in 0..n {
            ux[i] = loc[2 * i];
            uy[i] = loc[2 * i + 1];
        }
        (
            self.quad_values(&ux, &self.basis.e2),
            self.quad_values(&uy, &self.basis.e2),
            self.quad_values(&ux, &self.basis.ex2),
            self.quad_values(&ux, &self.basis.ey2),
            self.quad_values(&uy, &self.basis.ex2),
            self.quad_values(&uy, &self.basis.ey2),
        )
    }

    /// Residual over the free dofs at the full velocity field `field` and
    /// pressure coefficients `pressure` (all elements, concatenated).
    pub fn residual(
        &self,
        field: &GridField<T>,
        pressure: &DVector<T>,
        nu: T,
        forcing: Option<&ForcingFn<'_, T>>,
    ) -> DVector<T> {
        record_full_order_op();
        let dof = &self.dof;
        let basis = &self.basis;
        let n = basis.nodes_per_elem();
        let np = basis.pressure_per_elem();
        let nq2 = basis.nq * basis.nq;
        let mut r = DVector::zeros(dof.dof_count());
        for e in 0..dof.n_elems {
            let el = &self.elems[e];
            let (ux, uy, ux_xi, ux_eta, uy_xi, uy_eta) = self.element_field_at_quad(field, e);
            let p_loc = pressure.rows(e * np, np).into_owned();
            let _p_q = self.quad_values(&p_loc, &basis.p2);

            // weighted integrands at quadrature points
            let mut conv_x = DVector::zeros(nq2);
            let mut conv_y = DVector::zeros(nq2);
            let mut wdiv = DVector::zeros(nq2);
            for q in 0..nq2 {
                let w = basis.w2[q] * el.jac;
                let uxx = el.dx * ux_xi[q];
                let uxy = el.dy * ux_eta[q];
                let uyx = el.dx * uy_xi[q];
                let uyy = el.dy * uy_eta[q];
                if self.with_convection {
                    conv_x[q] = w * (ux[q] * uxx + uy[q] * uxy);
                    conv_y[q] = w * (ux[q] * uyx + uy[q] * uyy);
                }
                wdiv[q] = w * (uxx + uyy);
            }
            if let Some(f) = forcing {
                let rect = self.mesh.elements[e];
                for qy in 0..basis.nq {
                    for qx in 0..basis.nq {
                        let q = qy * basis.nq + qx;
                        let (x, y) = rect.map(basis.quad_nodes[qx], basis.quad_nodes[qy]);
                        let (fx, fy) = f(x, y);
                        let w = basis.w2[q] * el.jac;
                        conv_x[q] -= w * fx;
                        conv_y[q] -= w * fy;
                    }
                }
            }

            // momentum rows: nu * stiffness + convection - pressure coupling
            let mut ux_nodes = DVector::zeros(n);
            let mut uy_nodes = DVector::zeros(n);
            let loc = field.gather_element(dof, e);
            for i in 0..n {
                ux_nodes[i] = loc[2 * i];
                uy_nodes[i] = loc[2 * i + 1];
            }
            let mut r_x = &el.stiff * &ux_nodes * nu + &basis.e2 * &conv_x;
            let mut r_y = &el.stiff * &uy_nodes * nu + &basis.e2 * &conv_y;
            // b(phi, p): rows of div_x^T applied to p
            r_x += el.div_x.tr_mul(&p_loc);
            r_y += el.div_y.tr_mul(&p_loc);

            for (local, nref) in dof.elem_nodes[e].iter().enumerate() {
                match nref {
                    NodeRef::Bnd(g) => {
                        if let Some(fi) = dof.bnd_free[2 * g] {
                            r[fi] += r_x[local];
                        }
                        if let Some(fi) = dof.bnd_free[2 * g + 1] {
                            r[fi] += r_y[local];
                        }
                    }
                    NodeRef::Int(k) => {
                        r[dof.int_dof(e, *k, 0)] += r_x[local];
                        r[dof.int_dof(e, *k, 1)] += r_y[local];
                    }
                }
            }
            // continuity rows: b(w, q) = -int q div w
            let r_p = &basis.p2 * &(-wdiv);
            for l in 0..np {
                r[dof.p_dof(e, l)] = r_p[l];
            }
        }
        r
    }

    /// Assembles the linearized block system at the full field `field`; the
    /// right-hand side is set by the caller (see `assemble_system`).
    fn assemble_matrix<'a>(
        &'a self,
        field: &GridField<T>,
        nu: T,
        mode: LinearizationMode,
    ) -> BlockSystem<'a, T> {
        record_full_order_op();
        let dof = &self.dof;
        let basis = &self.basis;
        let n = basis.nodes_per_elem();
        let nint = basis.interior_per_elem();
        let nq2 = basis.nq * basis.nq;

        let mut a = DMatrix::zeros(dof.n_bnd_free, dof.n_bnd_free);
        let mut b_blocks = Vec::with_capacity(dof.n_elems);
        let mut bt_blocks = Vec::with_capacity(dof.n_elems);
        let mut c_blocks = Vec::with_capacity(dof.n_elems);

        let scale_cols = |m: &DMatrix<T>, w: &DVector<T>| -> DMatrix<T> {
            let mut s = m.clone();
            for q in 0..s.ncols() {
                let wq = w[q];
                for i in 0..s.nrows() {
                    s[(i, q)] *= wq;
                }
            }
            s
        };

        for e in 0..dof.n_elems {
            let el = &self.elems[e];
            let (ux, uy, ux_xi, ux_eta, uy_xi, uy_eta) = self.element_field_at_quad(field, e);

            // (u . grad) operator weights
            let n1 = if self.with_convection {
                let mut w_adv_x = DVector::zeros(nq2);
                let mut w_adv_y = DVector::zeros(nq2);
                for q in 0..nq2 {
                    let w = basis.w2[q] * el.jac;
                    w_adv_x[q] = w * ux[q] * el.dx;
                    w_adv_y[q] = w * uy[q] * el.dy;
                }
                &scale_cols(&basis.e2, &w_adv_x) * basis.ex2.transpose()
                    + &scale_cols(&basis.e2, &w_adv_y) * basis.ey2.transpose()
            } else {
                DMatrix::zeros(n, n)
            };

            // Newton adds c(phi_j, u^k, phi_i): gradient-weighted mass blocks
            let grad_blocks = if self.with_convection && mode == LinearizationMode::Newton {
                let mut wxx = DVector::zeros(nq2);
                let mut wxy = DVector::zeros(nq2);
                let mut wyx = DVector::zeros(nq2);
                let mut wyy = DVector::zeros(nq2);
                for q in 0..nq2 {
                    let w = basis.w2[q] * el.jac;
                    wxx[q] = w * el.dx * ux_xi[q];
                    wxy[q] = w * el.dy * ux_eta[q];
                    wyx[q] = w * el.dx * uy_xi[q];
                    wyy[q] = w * el.dy * uy_eta[q];
                }
                let et = basis.e2.transpose();
                Some((
                    &scale_cols(&basis.e2, &wxx) * &et,
                    &scale_cols(&basis.e2, &wxy) * &et,
                    &scale_cols(&basis.e2, &wyx) * &et,
                    &scale_cols(&basis.e2, &wyy) * &et,
                ))
            } else {
                None
            };

            let diag = &el.stiff * nu + &n1;
            let block = |arow: usize, bcol: usize, i: usize, j: usize| -> T {
                let mut v = if arow == bcol { diag[(i, j)] } else { T::zero() };
                if let Some((wxx, wxy, wyx, wyy)) = &grad_blocks {
                    v += match (arow, bcol) {
                        (0, 0) => wxx[(i, j)],
                        (0, 1) => wxy[(i, j)],
                        (1, 0) => wyx[(i, j)],
                        (1, 1) => wyy[(i, j)],
                        _ => unreachable!(),
                    };
                }
                v
            };

            // split local velocity coupling into bnd/int blocks
            let nb = el.bnd_nodes.len();
            let mut int_nodes = Vec::with_capacity(nint);
            for local in 0..n {
                if basis.is_interior_node(local) {
                    int_nodes.push(local);
                }
            }
            let mut b_e = DMatrix::zeros(2 * nb, 2 * nint);
            let mut bt_e = DMatrix::zeros(2 * nint, 2 * nb);
            let mut c_e = DMatrix::zeros(2 * nint, 2 * nint);
            for (pi, &li) in int_nodes.iter().enumerate() {
                for (pj, &lj) in int_nodes.iter().enumerate() {
                    for ar in 0..2 {
                        for bc in 0..2 {
                            c_e[(2 * pi + ar, 2 * pj + bc)] = block(ar, bc, li, lj);
                        }
                    }
                }
                for (pj, &lj) in el.bnd_nodes.iter().enumerate() {
                    for ar in 0..2 {
                        for bc in 0..2 {
                            bt_e[(2 * pi + ar, 2 * pj + bc)] = block(ar, bc, li, lj);
                            b_e[(2 * pj + bc, 2 * pi + ar)] = block(bc, ar, lj, li);
                        }
                    }
                }
            }
            for (pi, &li) in el.bnd_nodes.iter().enumerate() {
                for (pj, &lj) in el.bnd_nodes.iter().enumerate() {
                    for ar in 0..2 {
                        let Some(fi) = el.bnd_free[2 * pi + ar] else { continue };
                        for bc in 0..2 {
                            let Some(fj) = el.bnd_free[2 * pj + bc] else { continue };
                            a[(fi, fj)] += block(ar, bc, li, lj);
                        }
                    }
                }
            }
            b_blocks.push(b_e);
            bt_blocks.push(bt_e);
            c_blocks.push(c_e);
        }

        BlockSystem {
            ops: self,
            a,
            b: b_blocks,
            bt: bt_blocks,
            c: c_blocks,
            rhs: DVector::zeros(dof.dof_count()),
            pin: None,
        }
    }

    /// Assembles the mode-linearized system at the free state `free` with
    /// Dirichlet data `dirichlet`, setting the right-hand side of the direct
    /// form `J u^{k+1} = rhs` (equivalently `u^{k+1} = u^k - J^{-1} L`).
    pub fn assemble_system<'a>(
        &'a self,
        free: &DVector<T>,
        dirichlet: &DVector<T>,
        nu: T,
        mode: LinearizationMode,
        forcing: Option<&ForcingFn<'_, T>>,
        pin: Option<(usize, T)>,
    ) -> BlockSystem<'a, T> {
        let field = GridField::from_free(&self.dof, free, dirichlet);
        let pressure = free.rows(self.dof.p_offset(), self.dof.n_p_total()).into_owned();
        let mut sys = self.assemble_matrix(&field, nu, mode);
        let l = self.residual(&field, &pressure, nu, forcing);
        sys.rhs = sys.apply_matrix(free) - l;
        sys.pin = pin;
        if let Some((elem, value)) = pin {
            sys.rhs[self.dof.p_dof(elem, 0)] = value;
        }
        sys
    }

    /// Residual at a free state (scatters Dirichlet data internally).
    pub fn residual_free(
        &self,
        free: &DVector<T>,
        dirichlet: &DVector<T>,
        nu: T,
        forcing: Option<&ForcingFn<'_, T>>,
    ) -> DVector<T> {
        let field = GridField::from_free(&self.dof, free, dirichlet);
        let pressure = free.rows(self.dof.p_offset(), self.dof.n_p_total()).into_owned();
        self.residual(&field, &pressure, nu, forcing)
    }

    /// `int_Omega a . b` over the velocity fields by quadrature.
    pub fn integrate_velocity_dot(&self, a: &GridField<T>, b: &GridField<T>) -> T {
        let mut total = T::zero();
        for e in 0..self.dof.n_elems {
            let el = &self.elems[e];
            let (ax, ay, ..) = self.element_field_at_quad(a, e);
            let (bx, by, ..) = self.element_field_at_quad(b, e);
            for q in 0..self.basis.nq * self.basis.nq {
                total += self.basis.w2[q] * el.jac * (ax[q] * bx[q] + ay[q] * by[q]);
            }
        }
        total
    }

    /// Vector of `int phi_i sign(y - y_c)` over the free streamwise dofs;
    /// pairing a velocity state with it gives the upper/lower flux
    /// difference that fixes the sign of the diagram output.
    pub fn streamwise_sign_vector(&self, y_c: T) -> DVector<T> {
        let dof = &self.dof;
        let basis = &self.basis;
        let nq2 = basis.nq * basis.nq;
        let mut out = DVector::zeros(dof.dof_count());
        for e in 0..dof.n_elems {
            let el = &self.elems[e];
            let rect = self.mesh.elements[e];
            let mut w = DVector::zeros(nq2);
            for qy in 0..basis.nq {
                let (_, y) = rect.map(T::zero(), basis.quad_nodes[qy]);
                let s = (y - y_c).signum();
                let s = if y == y_c { T::zero() } else { s };
                for qx in 0..basis.nq {
                    let q = qy * basis.nq + qx;
                    w[q] = basis.w2[q] * el.jac * s;
                }
            }
            let r = &basis.e2 * &w;
            for (local, nref) in dof.elem_nodes[e].iter().enumerate() {
                match nref {
                    NodeRef::Bnd(g) => {
                        if let Some(fi) = dof.bnd_free[2 * g] {
                            out[fi] += r[local];
                        }
                    }
                    NodeRef::Int(k) => out[dof.int_dof(e, *k, 0)] += r[local],
                }
            }
        }
        out
    }

    /// Samples a full-order state at the GLL nodes as `(x, y, u, v, p)` rows.
    pub fn field_samples(
        &self,
        field: &GridField<T>,
        pressure: &DVector<T>,
    ) -> Vec<(T, T, T, T, T)> {
        let dof = &self.dof;
        let basis = &self.basis;
        let nn = basis.order + 1;
        let np = basis.pressure_per_elem();
        // pressure values need the modal basis at the GLL nodes
        let pv = super::gll::legendre_tables(basis.order - 2, &basis.nodes);
        let mut rows = Vec::new();
        for e in 0..dof.n_elems {
            let rect = self.mesh.elements[e];
            let loc = field.gather_element(dof, e);
            let p_loc = pressure.rows(e * np, np).into_owned();
            for iy in 0..nn {
                for ix in 0..nn {
                    let local = iy * nn + ix;
                    let (x, y) = rect.map(basis.nodes[ix], basis.nodes[iy]);
                    let mut p = T::zero();
                    for jy in 0..basis.order - 1 {
                        for jx in 0..basis.order - 1 {
                            p += p_loc[jy * (basis.order - 1) + jx]
                                * pv[(jx, ix)]
                                * pv[(jy, iy)];
                        }
                    }
                    rows.push((x, y, loc[2 * local], loc[2 * local + 1], p));
                }
            }
        }
        rows
    }
}
