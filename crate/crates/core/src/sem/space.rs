//! 2D tensor GLL velocity basis, modal Legendre pressure basis, and the
//! boundary/interior dof partition that static condensation relies on.

use nalgebra::{DMatrix, DVector};

use super::gll::{gll_nodes_weights, lagrange_tables, legendre_tables};
use super::mesh::{BoundaryTag, Mesh, SIDE_EAST, SIDE_NORTH, SIDE_SOUTH, SIDE_WEST};
use crate::{real, Real};

/// Per-order reference tables shared by all elements (the mesh elements are
/// axis-aligned rectangles, so only constant Jacobian factors differ).
#[derive(Debug, Clone)]
pub struct GllBasis<T: Real> {
    /// Velocity order P; pressure is modal Legendre of degree P - 2.
    pub order: usize,
    pub nodes: Vec<T>,
    pub node_weights: Vec<T>,
    /// Quadrature point count per direction; over-integrated to keep the
    /// trilinear form alias-free (exactness >= 3P).
    pub nq: usize,
    pub quad_nodes: Vec<T>,
    pub quad_weights: Vec<T>,
    /// 2D tensor quadrature weights, length nq^2.
    pub w2: DVector<T>,
    /// Velocity basis values and reference derivatives at the quadrature
    /// grid, (P+1)^2 x nq^2.
    pub e2: DMatrix<T>,
    pub ex2: DMatrix<T>,
    pub ey2: DMatrix<T>,
    /// Pressure basis values at the quadrature grid, (P-1)^2 x nq^2.
    pub p2: DMatrix<T>,
    /// Reference stiffness pieces `Ex W Ex^T` and `Ey W Ey^T`.
    pub kxx: DMatrix<T>,
    pub kyy: DMatrix<T>,
    /// Reference mass `E W E^T`.
    pub mass: DMatrix<T>,
    /// Reference divergence couplings `P2 W Ex^T` and `P2 W Ey^T`.
    pub gx: DMatrix<T>,
    pub gy: DMatrix<T>,
}

impl<T: Real> GllBasis<T> {
    pub fn new(order: usize) -> Self {
        assert!(order >= 2, "velocity order must be >= 2 for a P/P-2 pair");
        let (nodes, node_weights) = gll_nodes_weights::<T>(order);
        let nq = 3 * order / 2 + 2;
        let (quad_nodes, quad_weights) = gll_nodes_weights::<T>(nq - 1);
        let (bu, du) = lagrange_tables(&nodes, &quad_nodes);
        let bp = legendre_tables(order - 2, &quad_nodes);

        let nn = order + 1;
        let n = nn * nn;
        let np = (order - 1) * (order - 1);
        let nq2 = nq * nq;
        let mut e2 = DMatrix::zeros(n, nq2);
        let mut ex2 = DMatrix::zeros(n, nq2);
        let mut ey2 = DMatrix::zeros(n, nq2);
        let mut p2 = DMatrix::zeros(np, nq2);
        let mut w2 = DVector::zeros(nq2);
        for qy in 0..nq {
            for qx in 0..nq {
                let q = qy * nq + qx;
                w2[q] = quad_weights[qx] * quad_weights[qy];
                for iy in 0..nn {
                    for ix in 0..nn {
                        let i = iy * nn + ix;
                        e2[(i, q)] = bu[(ix, qx)] * bu[(iy, qy)];
                        ex2[(i, q)] = du[(ix, qx)] * bu[(iy, qy)];
                        ey2[(i, q)] = bu[(ix, qx)] * du[(iy, qy)];
                    }
                }
                for jy in 0..order - 1 {
                    for jx in 0..order - 1 {
                        let j = jy * (order - 1) + jx;
                        p2[(j, q)] = bp[(jx, qx)] * bp[(jy, qy)];
                    }
                }
            }
        }
        let weighted = |m: &DMatrix<T>| -> DMatrix<T> {
            let mut s = m.clone();
            for q in 0..nq2 {
                let w = w2[q];
                for i in 0..s.nrows() {
                    s[(i, q)] *= w;
                }
            }
            s
        };
        let kxx = weighted(&ex2) * ex2.transpose();
        let kyy = weighted(&ey2) * ey2.transpose();
        let mass = weighted(&e2) * e2.transpose();
        let gx = weighted(&p2) * ex2.transpose();
        let gy = weighted(&p2) * ey2.transpose();
        Self {
            order,
            nodes,
            node_weights,
            nq,
            quad_nodes,
            quad_weights,
            w2,
            e2,
            ex2,
            ey2,
            p2,
            kxx,
            kyy,
            mass,
            gx,
            gy,
        }
    }

    pub fn nodes_per_elem(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    pub fn interior_per_elem(&self) -> usize {
        (self.order - 1) * (self.order - 1)
    }

    pub fn pressure_per_elem(&self) -> usize {
        (self.order - 1) * (self.order - 1)
    }

    pub fn is_interior_node(&self, local: usize) -> bool {
        let nn = self.order + 1;
        let ix = local % nn;
        let iy = local / nn;
        ix >= 1 && ix < self.order && iy >= 1 && iy < self.order
    }
}

/// Where a local node lives globally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    /// Shared boundary-mode node (global id).
    Bnd(usize),
    /// Element-interior node (index within the element's interior block).
    Int(usize),
}

/// Global dof bookkeeping for the `[u_bnd | u_int | p]` layout.
#[derive(Debug, Clone)]
pub struct DofMap<T: Real> {
    pub n_bnd_nodes: usize,
    pub bnd_coords: Vec<(T, T)>,
    pub bnd_dirichlet: Vec<bool>,
    /// Per element: local node -> NodeRef, length (P+1)^2.
    pub elem_nodes: Vec<Vec<NodeRef>>,
    /// Free index of each boundary velocity dof `2*node + comp`.
    pub bnd_free: Vec<Option<usize>>,
    pub n_bnd_free: usize,
    pub n_elems: usize,
    pub n_int_per_elem: usize,
    pub n_p_per_elem: usize,
}

impl<T: Real> DofMap<T> {
    pub fn build(mesh: &Mesh<T>, basis: &GllBasis<T>) -> Self {
        let p = basis.order;
        let nn = p + 1;
        let mut bnd_coords: Vec<(T, T)> = Vec::new();
        let mut elem_nodes = Vec::with_capacity(mesh.n_elements());
        let scale = mesh
            .elements
            .iter()
            .map(|r| r.hx.abs().max(r.hy.abs()))
            .fold(T::one(), |a, b| a.max(b));
        let tol = real::<T>(1e-9) * scale;
        for rect in &mesh.elements {
            let mut nodes = Vec::with_capacity(nn * nn);
            let mut next_int = 0;
            for iy in 0..nn {
                for ix in 0..nn {
                    let local = iy * nn + ix;
                    if basis.is_interior_node(local) {
                        nodes.push(NodeRef::Int(next_int));
                        next_int += 1;
                    } else {
                        let (x, y) = rect.map(basis.nodes[ix], basis.nodes[iy]);
                        let found = bnd_coords
                            .iter()
                            .position(|&(a, b)| (a - x).abs() <= tol && (b - y).abs() <= tol);
                        let g = match found {
                            Some(g) => g,
                            None => {
                                bnd_coords.push((x, y));
                                bnd_coords.len() - 1
                            }
                        };
                        nodes.push(NodeRef::Bnd(g));
                    }
                }
            }
            elem_nodes.push(nodes);
        }

        // Dirichlet nodes: everything on Inlet or Wall sides.
        let mut bnd_dirichlet = vec![false; bnd_coords.len()];
        for (e, tags) in mesh.boundary.iter().enumerate() {
            for (side, tag) in tags.iter().enumerate() {
                let dirichlet = matches!(tag, Some(BoundaryTag::Inlet) | Some(BoundaryTag::Wall));
                if !dirichlet {
                    continue;
                }
                for k in 0..nn {
                    let local = match side {
                        SIDE_SOUTH => k,
                        SIDE_NORTH => p * nn + k,
                        SIDE_WEST => k * nn,
                        SIDE_EAST => k * nn + p,
                        _ => unreachable!(),
                    };
                    if let NodeRef::Bnd(g) = elem_nodes[e][local] {
                        bnd_dirichlet[g] = true;
                    }
                }
            }
        }

        let mut bnd_free = vec![None; 2 * bnd_coords.len()];
        let mut n_bnd_free = 0;
        for g in 0..bnd_coords.len() {
            if !bnd_dirichlet[g] {
                for c in 0..2 {
                    bnd_free[2 * g + c] = Some(n_bnd_free);
                    n_bnd_free += 1;
                }
            }
        }

        Self {
            n_bnd_nodes: bnd_coords.len(),
            bnd_coords,
            bnd_dirichlet,
            elem_nodes,
            bnd_free,
            n_bnd_free,
            n_elems: mesh.n_elements(),
            n_int_per_elem: basis.interior_per_elem(),
            n_p_per_elem: basis.pressure_per_elem(),
        }
    }

    pub fn n_int_total(&self) -> usize {
        2 * self.n_int_per_elem * self.n_elems
    }

    pub fn n_p_total(&self) -> usize {
        self.n_p_per_elem * self.n_elems
    }

    /// Free dofs: free boundary velocity + interior velocity + pressure.
    pub fn dof_count(&self) -> usize {
        self.n_bnd_free + self.n_int_total() + self.n_p_total()
    }

    pub fn int_offset(&self) -> usize {
        self.n_bnd_free
    }

    pub fn p_offset(&self) -> usize {
        self.n_bnd_free + self.n_int_total()
    }

    pub fn int_dof(&self, elem: usize, k: usize, comp: usize) -> usize {
        self.int_offset() + elem * 2 * self.n_int_per_elem + 2 * k + comp
    }

    pub fn p_dof(&self, elem: usize, l: usize) -> usize {
        self.p_offset() + elem * self.n_p_per_elem + l
    }

    /// Dirichlet values at all boundary-node velocity dofs, from a pointwise
    /// boundary-data function; zero at non-Dirichlet nodes.
    pub fn dirichlet_values(&self, data: &dyn Fn(T, T) -> (T, T)) -> DVector<T> {
        let mut g = DVector::zeros(2 * self.n_bnd_nodes);
        for (node, &(x, y)) in self.bnd_coords.iter().enumerate() {
            if self.bnd_dirichlet[node] {
                let (u, v) = data(x, y);
                g[2 * node] = u;
                g[2 * node + 1] = v;
            }
        }
        g
    }
}

/// Full velocity field: values at every boundary node (free and Dirichlet)
/// plus the per-element interior blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T: Real> {
    pub bnd: DVector<T>,
    pub int: DVector<T>,
}

impl<T: Real> GridField<T> {
    pub fn zeros(dof: &DofMap<T>) -> Self {
        Self { bnd: DVector::zeros(2 * dof.n_bnd_nodes), int: DVector::zeros(dof.n_int_total()) }
    }

    /// Builds the full field from free dofs plus Dirichlet data.
    pub fn from_free(dof: &DofMap<T>, free: &DVector<T>, dirichlet: &DVector<T>) -> Self {
        let mut bnd = dirichlet.clone();
        for (i, slot) in dof.bnd_free.iter().enumerate() {
            if let Some(fi) = slot {
                bnd[i] = free[*fi];
            }
        }
        let int = free.rows(dof.int_offset(), dof.n_int_total()).into_owned();
        Self { bnd, int }
    }

    /// Local velocity values of one element, component-interleaved:
    /// `out[2*local + comp]`.
    pub fn gather_element(&self, dof: &DofMap<T>, elem: usize) -> DVector<T> {
        let nodes = &dof.elem_nodes[elem];
        let mut out = DVector::zeros(2 * nodes.len());
        for (local, nref) in nodes.iter().enumerate() {
            for c in 0..2 {
                out[2 * local + c] = match nref {
                    NodeRef::Bnd(g) => self.bnd[2 * g + c],
                    NodeRef::Int(k) => {
                        self.int[elem * 2 * dof.n_int_per_elem + 2 * k + c]
                    }
                };
            }
        }
        out
    }
}
