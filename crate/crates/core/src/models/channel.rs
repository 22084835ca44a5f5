//! Steady Navier-Stokes in the sudden-expansion channel.
//!
//! Parameters `(nu, s, c_H)`: viscosity, inlet scaling and inlet-height
//! factor. The inlet profile on `x = 0` is `u = 20 s (y1 - y)(y - y0)` with
//! `y0 = 3.75 - 1.25 c_H`, `y1 = 3.75 + 1.25 c_H`; left-boundary points
//! outside `(y0, y1)` carry homogeneous wall values. The Coanda attachment
//! of the jet breaks the mirror symmetry about `y = 3.75` as the viscosity
//! drops, which the diagram output `f(u) = +-int |u - R(u)|^2` measures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::model::{
    LinearizationMode, LinearizedSystem, ModelError, ParameterPoint, ProblemModel, SpaceTag,
};
use crate::sem::{GridField, Mesh, SemLinearized, SemOperators};
use crate::{real, Real};

/// `Re = U L / nu` with `U = 31.25 s` (peak inlet speed) and
/// `L = 2.5 c_H` (inlet height).
pub fn reynolds<T: Real>(nu: T, s: T, c_h: T) -> T {
    real::<T>(31.25) * s * real::<T>(2.5) * c_h / nu
}

#[derive(Debug, Clone)]
pub struct ChannelConfig<T: Real> {
    pub order: usize,
    /// Mesh override; defaults to the 18-element channel.
    pub mesh: Option<Mesh<T>>,
}

impl<T: Real> ChannelConfig<T> {
    pub fn with_order(order: usize) -> Self {
        Self { order, mesh: None }
    }
}

pub struct ChannelModel<T: Real> {
    pub ops: SemOperators<T>,
    /// Reflection about the symmetry axis over free dofs:
    /// `out[i] = sign * in[src]`.
    reflect_map: Vec<(usize, T)>,
    /// `int phi_i sign(y - y_c)` over streamwise free dofs.
    sign_vec: DVector<T>,
}

impl<T: Real> ChannelModel<T> {
    pub fn new(config: ChannelConfig<T>) -> Result<Self, ModelError> {
        let mesh = match config.mesh {
            Some(m) => m,
            None => Mesh::channel().map_err(|e| ModelError::Invalid(e.to_string()))?,
        };
        let ops = SemOperators::new(mesh, config.order);
        let reflect_map = build_reflection(&ops)?;
        let sign_vec = ops.streamwise_sign_vector(ops.mesh.symmetry_axis);
        Ok(Self { ops, reflect_map, sign_vec })
    }

    pub fn with_order(order: usize) -> Result<Self, ModelError> {
        Self::new(ChannelConfig::with_order(order))
    }

    pub fn order(&self) -> usize {
        self.ops.basis.order
    }

    fn unpack_mu(&self, mu: &ParameterPoint<T>) -> (T, T, T) {
        let nu = mu.get(0);
        let s = if mu.len() > 1 { mu.get(1) } else { T::one() };
        let c_h = if mu.len() > 2 { mu.get(2) } else { T::one() };
        (nu, s, c_h)
    }

    /// Inlet profile bounds `(y0, y1)` for an inlet-height factor.
    pub fn inlet_bounds(c_h: T) -> (T, T) {
        let mid = real::<T>(3.75);
        let half = real::<T>(1.25) * c_h;
        (mid - half, mid + half)
    }

    /// Pointwise Dirichlet data of the inlet/wall boundary.
    pub fn boundary_data(s: T, c_h: T) -> impl Fn(T, T) -> (T, T) {
        let (y0, y1) = Self::inlet_bounds(c_h);
        move |x: T, y: T| {
            if x.abs() < real(1e-9) && y > y0 && y < y1 {
                (real::<T>(20.0) * s * (y1 - y) * (y - y0), T::zero())
            } else {
                (T::zero(), T::zero())
            }
        }
    }

    /// Lifting field: Dirichlet values at boundary nodes, zero elsewhere.
    pub fn lifting(&self, s: T, c_h: T) -> DVector<T> {
        let lo = real::<T>(0.8);
        let hi = T::one();
        if s < lo || s > hi || c_h < lo || c_h > hi {
            log::warn!("inlet parameters (s, c_H) outside the studied range [0.8, 1]");
        }
        self.ops.dof.dirichlet_values(&Self::boundary_data(s, c_h))
    }

    fn lifting_for(&self, mu: &ParameterPoint<T>) -> DVector<T> {
        let (_, s, c_h) = self.unpack_mu(mu);
        self.lifting(s, c_h)
    }

    /// Reflects a free-dof state over the horizontal symmetry axis.
    pub fn reflect(&self, u: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(u.len());
        for (i, &(src, sign)) in self.reflect_map.iter().enumerate() {
            out[i] = u[src] * sign;
        }
        out
    }

    /// Asymmetry magnitude `int |u - R(u)|^2` of a free-dof state. The
    /// lifting cancels in the difference because it is mirror-symmetric.
    pub fn asymmetry(&self, u: &DVector<T>) -> T {
        let diff = u - self.reflect(u);
        self.velocity_l2(&diff, &diff)
    }

    /// `int_Omega a . b` of the velocity parts of two free-dof states.
    pub fn velocity_l2(&self, a: &DVector<T>, b: &DVector<T>) -> T {
        let zero_g = DVector::zeros(2 * self.ops.dof.n_bnd_nodes);
        let fa = GridField::from_free(&self.ops.dof, a, &zero_g);
        let fb = GridField::from_free(&self.ops.dof, b, &zero_g);
        self.ops.integrate_velocity_dot(&fa, &fb)
    }

    /// Upper-minus-lower streamwise flux of a free-dof state; its sign is
    /// the sign of the diagram output.
    pub fn flux_difference(&self, u: &DVector<T>) -> T {
        self.sign_vec.dot(u)
    }

    /// Full-order field samples `(x, y, u, v, p)` at the GLL nodes, written
    /// as CSV for plotting.
    pub fn write_field_csv(
        &self,
        path: &Path,
        u: &DVector<T>,
        mu: &ParameterPoint<T>,
    ) -> std::io::Result<()> {
        let g = self.lifting_for(mu);
        let field = GridField::from_free(&self.ops.dof, u, &g);
        let pressure = u.rows(self.ops.dof.p_offset(), self.ops.dof.n_p_total()).into_owned();
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,y,u,v,p")?;
        for (x, y, uu, vv, pp) in self.ops.field_samples(&field, &pressure) {
            let f = |v: T| num_traits::ToPrimitive::to_f64(&v).unwrap();
            writeln!(w, "{},{},{},{},{}", f(x), f(y), f(uu), f(vv), f(pp))?;
        }
        w.flush()
    }
}

fn build_reflection<T: Real>(ops: &SemOperators<T>) -> Result<Vec<(usize, T)>, ModelError> {
    let dof = &ops.dof;
    let mesh = &ops.mesh;
    let basis = &ops.basis;
    let y_c = mesh.symmetry_axis;
    let p = basis.order;
    let tol = real::<T>(1e-9)
        * mesh.elements.iter().map(|r| r.hy.abs()).fold(T::one(), |a, b| a.max(b));

    // mirror of each boundary node by coordinate matching
    let mut node_mirror = vec![usize::MAX; dof.n_bnd_nodes];
    for (g, &(x, y)) in dof.bnd_coords.iter().enumerate() {
        let ym = (y_c + y_c) - y;
        let m = dof
            .bnd_coords
            .iter()
            .position(|&(a, b)| (a - x).abs() <= tol && (b - ym).abs() <= tol)
            .ok_or_else(|| ModelError::Invalid("mesh is not mirror-symmetric".into()))?;
        node_mirror[g] = m;
        if dof.bnd_dirichlet[g] != dof.bnd_dirichlet[m] {
            return Err(ModelError::Invalid("Dirichlet set is not mirror-symmetric".into()));
        }
    }

    let mut map = vec![(usize::MAX, T::one()); dof.dof_count()];
    // boundary velocity dofs
    for g in 0..dof.n_bnd_nodes {
        let m = node_mirror[g];
        for c in 0..2 {
            if let Some(dst) = dof.bnd_free[2 * g + c] {
                let src = dof.bnd_free[2 * m + c]
                    .ok_or_else(|| ModelError::Invalid("free set is not symmetric".into()))?;
                let sign = if c == 1 { -T::one() } else { T::one() };
                map[dst] = (src, sign);
            }
        }
    }
    // interior velocity and pressure, element by element
    for e in 0..dof.n_elems {
        let m = mesh
            .mirror_element(e)
            .ok_or_else(|| ModelError::Invalid("mesh is not mirror-symmetric".into()))?;
        // interior node (ix, iy) of e maps from (ix, P - iy) of m
        for iy in 1..p {
            for ix in 1..p {
                let k = (iy - 1) * (p - 1) + (ix - 1);
                let km = (p - iy - 1) * (p - 1) + (ix - 1);
                for c in 0..2 {
                    let dst = dof.int_dof(e, k, c);
                    let src = dof.int_dof(m, km, c);
                    let sign = if c == 1 { -T::one() } else { T::one() };
                    map[dst] = (src, sign);
                }
            }
        }
        // pressure is even under reflection; the Legendre eta-degree flips
        // the coefficient sign for odd degrees
        for jy in 0..p - 1 {
            for jx in 0..p - 1 {
                let l = jy * (p - 1) + jx;
                let dst = dof.p_dof(e, l);
                let src = dof.p_dof(m, l);
                let sign = if jy % 2 == 1 { -T::one() } else { T::one() };
                map[dst] = (src, sign);
            }
        }
    }
    if map.iter().any(|&(src, _)| src == usize::MAX) {
        return Err(ModelError::Invalid("incomplete reflection map".into()));
    }
    Ok(map)
}

impl<T: Real> ProblemModel<T> for ChannelModel<T> {
    fn dof_count(&self) -> usize {
        self.ops.dof_count()
    }

    fn space_tag(&self) -> SpaceTag {
        format!("sem:P{}:{}el", self.ops.basis.order, self.ops.mesh.n_elements())
    }

    fn residual(&self, u: &DVector<T>, mu: &ParameterPoint<T>) -> DVector<T> {
        let (nu, _, _) = self.unpack_mu(mu);
        let g = self.lifting_for(mu);
        self.ops.residual_free(u, &g, nu, None)
    }

    fn linearize(
        &self,
        u: &DVector<T>,
        mu: &ParameterPoint<T>,
        mode: LinearizationMode,
    ) -> Result<Box<dyn LinearizedSystem<T> + '_>, ModelError> {
        let (nu, _, _) = self.unpack_mu(mu);
        let g = self.lifting_for(mu);
        let sys = self.ops.assemble_system(u, &g, nu, mode, None, None);
        Ok(Box::new(SemLinearized::new(sys)))
    }

    fn output_functional(&self, u: &DVector<T>) -> T {
        let q = self.asymmetry(u);
        let flux_diff = self.sign_vec.dot(u);
        if flux_diff < T::zero() {
            -q
        } else if flux_diff > T::zero() {
            q
        } else {
            T::zero()
        }
    }
}
