//! 2D quadrilateral spectral-element discretization of the steady
//! Navier-Stokes weak form: GLL tensor velocity of order `P`, modal
//! Legendre pressure of degree `P - 2` per element, block-system assembly
//! for Newton/Oseen linearizations, and two-level static condensation.

pub mod assembly;
pub mod condense;
pub mod gll;
pub mod mesh;
pub mod space;

pub use assembly::{ForcingFn, SemOperators};
pub use condense::{BlockSystem, CondensedFactors, SemLinearized};
pub use gll::{gll_nodes_weights, lagrange_tables, legendre_tables};
pub use mesh::{BoundaryTag, Mesh, MeshError, Rect};
pub use space::{DofMap, GllBasis, GridField, NodeRef};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearizationMode;
    
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_ops(order: usize) -> SemOperators<f64> {
        // 2x2 unit square mesh, walls everywhere (all-Dirichlet velocity)
        let mesh = Mesh::tensor(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0], |_, _, _| {
            BoundaryTag::Wall
        })
        .unwrap();
        SemOperators::new(mesh, order)
    }

    fn channel_ops(order: usize) -> SemOperators<f64> {
        SemOperators::new(Mesh::channel().unwrap(), order)
    }

    fn zero_dirichlet(ops: &SemOperators<f64>) -> DVector<f64> {
        DVector::zeros(2 * ops.dof.n_bnd_nodes)
    }

    fn random_state(ops: &SemOperators<f64>, rng: &mut impl Rng, scale: f64) -> DVector<f64> {
        DVector::from_fn(ops.dof_count(), |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn nu_scaling_is_linear_at_zero_base_flow() {
        // doubling nu doubles the viscous contribution, assembled at u^k = 0
        let ops = small_ops(4);
        let g = zero_dirichlet(&ops);
        let zero = DVector::zeros(ops.dof_count());
        let s0 = ops.assemble_system(&zero, &g, 0.0, LinearizationMode::Newton, None, None);
        let s1 = ops.assemble_system(&zero, &g, 1.0, LinearizationMode::Newton, None, None);
        let s2 = ops.assemble_system(&zero, &g, 2.0, LinearizationMode::Newton, None, None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_state(&ops, &mut rng, 1.0);
        let visc1 = s1.apply_matrix(&v) - s0.apply_matrix(&v);
        let visc2 = s2.apply_matrix(&v) - s0.apply_matrix(&v);
        assert_relative_eq!((visc2 - &visc1 * 2.0).norm(), 0.0, epsilon = 1e-10 * visc1.norm());
    }

    #[test]
    fn newton_equals_oseen_at_zero_base_flow() {
        let ops = small_ops(4);
        let g = zero_dirichlet(&ops);
        let zero = DVector::zeros(ops.dof_count());
        let sn = ops.assemble_system(&zero, &g, 0.7, LinearizationMode::Newton, None, None);
        let so = ops.assemble_system(&zero, &g, 0.7, LinearizationMode::Oseen, None, None);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let v = random_state(&ops, &mut rng, 1.0);
            let d = sn.apply_matrix(&v) - so.apply_matrix(&v);
            assert!(d.norm() < 1e-12, "convective linearization must vanish");
        }
    }

    fn interpolate_velocity(
        ops: &SemOperators<f64>,
        exact: &dyn Fn(f64, f64) -> (f64, f64),
    ) -> (DVector<f64>, DVector<f64>) {
        let dof = &ops.dof;
        let mut free = DVector::zeros(ops.dof_count());
        let mut dirichlet = DVector::zeros(2 * dof.n_bnd_nodes);
        for (g, &(x, y)) in dof.bnd_coords.iter().enumerate() {
            let (u, v) = exact(x, y);
            if dof.bnd_dirichlet[g] {
                dirichlet[2 * g] = u;
                dirichlet[2 * g + 1] = v;
            } else if let (Some(fu), Some(fv)) = (dof.bnd_free[2 * g], dof.bnd_free[2 * g + 1]) {
                free[fu] = u;
                free[fv] = v;
            }
        }
        let nn = ops.basis.order + 1;
        for e in 0..dof.n_elems {
            let rect = ops.mesh.elements[e];
            let mut k = 0;
            for iy in 0..nn {
                for ix in 0..nn {
                    if ops.basis.is_interior_node(iy * nn + ix) {
                        let (x, y) = rect.map(ops.basis.nodes[ix], ops.basis.nodes[iy]);
                        let (u, v) = exact(x, y);
                        free[dof.int_dof(e, k, 0)] = u;
                        free[dof.int_dof(e, k, 1)] = v;
                        k += 1;
                    }
                }
            }
        }
        (free, dirichlet)
    }

    #[test]
    fn discrete_divergence_of_divergence_free_interpolant() {
        // u = (y^2, x^2) is divergence-free and inside the velocity space
        // for P >= 2; its discrete divergence rows vanish to quadrature
        // accuracy.
        let ops = small_ops(4);
        let dof = &ops.dof;
        let (free, dirichlet) = interpolate_velocity(&ops, &|x, y| (y * y, x * x));
        let r = ops.residual_free(&free, &dirichlet, 0.0, None);
        for e in 0..dof.n_elems {
            for l in 0..dof.n_p_per_elem {
                assert!(r[dof.p_dof(e, l)].abs() < 1e-12, "divergence row not zero");
            }
        }
    }

    #[test]
    fn direct_rhs_identity() {
        // J u - L(u) equals the assembled right-hand side for both modes
        let ops = channel_ops(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_state(&ops, &mut rng, 0.3);
        let g = ops.dof.dirichlet_values(&|_x, y: f64| {
            if y > 2.5 && y < 5.0 {
                (20.0 * (5.0 - y) * (y - 2.5), 0.0)
            } else {
                (0.0, 0.0)
            }
        });
        for mode in [LinearizationMode::Newton, LinearizationMode::Oseen] {
            let sys = ops.assemble_system(&u, &g, 0.8, mode, None, None);
            let l = ops.residual_free(&u, &g, 0.8, None);
            let lhs = sys.apply_matrix(&u) - &l;
            assert!(
                (&lhs - &sys.rhs).norm() <= 1e-9 * (1.0 + sys.rhs.norm()),
                "direct-form identity broken in {mode:?}"
            );
        }
    }

    #[test]
    fn newton_matrix_is_frechet_derivative() {
        let ops = channel_ops(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_state(&ops, &mut rng, 0.2);
        let v = random_state(&ops, &mut rng, 1.0);
        let g = zero_dirichlet(&ops);
        let sys = ops.assemble_system(&u, &g, 0.9, LinearizationMode::Newton, None, None);
        let jv = sys.apply_matrix(&v);
        let h = 1e-6;
        let rp = ops.residual_free(&(&u + &v * h), &g, 0.9, None);
        let rm = ops.residual_free(&(&u - &v * h), &g, 0.9, None);
        let fd = (rp - rm) / (2.0 * h);
        let err = (&jv - &fd).norm() / jv.norm().max(fd.norm());
        assert!(err < 1e-5, "fd check error {err}");
    }

    #[test]
    fn condensed_solve_matches_dense_solve_on_channel_system() {
        let ops = channel_ops(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_state(&ops, &mut rng, 0.2);
        let g = zero_dirichlet(&ops);
        let sys = ops.assemble_system(&u, &g, 1.0, LinearizationMode::Newton, None, None);
        let n = ops.dof_count();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            dense.set_column(j, &sys.apply_matrix(&e));
        }
        let rhs = random_state(&ops, &mut rng, 1.0);
        let x_dense = dense.lu().solve(&rhs).unwrap();
        let factors = sys.condense().unwrap();
        let x_cond = factors.solve(&sys, &rhs).unwrap();
        let rel = (&x_cond - &x_dense).norm() / x_dense.norm();
        assert!(rel < 1e-10, "condensed vs dense relative error {rel}");
        let res = (sys.apply_matrix(&x_cond) - &rhs).norm() / rhs.norm();
        assert!(res < 1e-10, "reconstructed residual {res}");
    }

    /// Random block system in the element layout of `ops`, with SPD-shifted
    /// C blocks and random couplings.
    fn random_block_system<'a>(
        ops: &'a SemOperators<f64>,
        rng: &mut ChaCha8Rng,
    ) -> BlockSystem<'a, f64> {
        let dof = &ops.dof;
        let ni = 2 * dof.n_int_per_elem;
        let nb_free = dof.n_bnd_free;
        BlockSystem {
            a: nalgebra::DMatrix::from_fn(nb_free, nb_free, |i, j| {
                rng.gen_range(-1.0..1.0) + if i == j { 8.0 } else { 0.0 }
            }),
            b: (0..dof.n_elems)
                .map(|e| {
                    nalgebra::DMatrix::from_fn(ops.elems[e].bnd_free.len(), ni, |_, _| {
                        rng.gen_range(-1.0..1.0)
                    })
                })
                .collect(),
            bt: (0..dof.n_elems)
                .map(|e| {
                    nalgebra::DMatrix::from_fn(ni, ops.elems[e].bnd_free.len(), |_, _| {
                        rng.gen_range(-1.0..1.0)
                    })
                })
                .collect(),
            c: (0..dof.n_elems)
                .map(|_| {
                    let m =
                        nalgebra::DMatrix::<f64>::from_fn(ni, ni, |_, _| rng.gen_range(-1.0..1.0));
                    &m * m.transpose() + nalgebra::DMatrix::identity(ni, ni) * (ni as f64)
                })
                .collect(),
            rhs: DVector::zeros(dof.dof_count()),
            pin: None,
            ops,
        }
    }

    #[test]
    fn condensed_solve_matches_dense_on_random_block_systems() {
        // random data in the block layout of a small 2-element mesh, random
        // divergence couplings included
        let mesh = Mesh::tensor(&[0.0, 1.0, 2.0], &[0.0, 1.0], |_, _, _| BoundaryTag::Outlet)
            .unwrap();
        let mut ops = SemOperators::new(mesh, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..20 {
            for e in 0..ops.dof.n_elems {
                let ni = 2 * ops.dof.n_int_per_elem;
                let np = ops.dof.n_p_per_elem;
                let nb = ops.elems[e].bnd_free.len();
                ops.elems[e].d_bnd =
                    nalgebra::DMatrix::from_fn(np, nb, |_, _| rng.gen_range(-1.0..1.0));
                ops.elems[e].d_int =
                    nalgebra::DMatrix::from_fn(np, ni, |_, _| rng.gen_range(-1.0..1.0));
            }
            let n = ops.dof_count();
            let sys = random_block_system(&ops, &mut rng);
            let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                dense.set_column(j, &sys.apply_matrix(&e));
            }
            let rhs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let x_dense = dense.lu().solve(&rhs).unwrap();
            let x_cond = sys.condense().unwrap().solve(&sys, &rhs).unwrap();
            let rel = (&x_cond - &x_dense).norm() / x_dense.norm();
            assert!(rel < 1e-10, "trial {trial}: relative error {rel}");
        }
    }

    fn stokes_manufactured_error(order: usize) -> f64 {
        let pi = std::f64::consts::PI;
        let nu = 1.0;
        // streamfunction psi = sin(pi x) sin(pi y):
        // u = pi sin(pi x) cos(pi y), v = -pi cos(pi x) sin(pi y)
        let exact = move |x: f64, y: f64| {
            (pi * (pi * x).sin() * (pi * y).cos(), -pi * (pi * x).cos() * (pi * y).sin())
        };
        // p = cos(pi x) cos(pi y); f = -nu lap(u) + grad p
        let forcing = move |x: f64, y: f64| {
            let fx_visc = 2.0 * pi.powi(3) * (pi * x).sin() * (pi * y).cos();
            let fy_visc = -2.0 * pi.powi(3) * (pi * x).cos() * (pi * y).sin();
            let px = -pi * (pi * x).sin() * (pi * y).cos();
            let py = -pi * (pi * x).cos() * (pi * y).sin();
            (nu * fx_visc + px, nu * fy_visc + py)
        };
        let mesh = Mesh::tensor(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0], |_, _, _| {
            BoundaryTag::Wall
        })
        .unwrap();
        let ops = SemOperators::stokes(mesh, order);
        let g = ops.dof.dirichlet_values(&exact);
        let zero = DVector::zeros(ops.dof_count());
        // all-Dirichlet velocity leaves the pressure defined up to a
        // constant: pin the mean-pressure dof of element 0 to the exact
        // element mean of p over [0, 0.5]^2, which is (2/pi)^2.
        let pin_val = (2.0 / pi) * (2.0 / pi);
        let sys = ops.assemble_system(
            &zero,
            &g,
            nu,
            LinearizationMode::Oseen,
            Some(&forcing),
            Some((0, pin_val)),
        );
        let rhs = sys.rhs.clone();
        let sol = sys.condense().unwrap().solve(&sys, &rhs).unwrap();
        let (exact_free, exact_dirichlet) = interpolate_velocity(&ops, &exact);
        let sol_field = GridField::from_free(&ops.dof, &sol, &g);
        let exact_field = GridField::from_free(&ops.dof, &exact_free, &exact_dirichlet);
        let diff = GridField {
            bnd: &sol_field.bnd - &exact_field.bnd,
            int: &sol_field.int - &exact_field.int,
        };
        ops.integrate_velocity_dot(&diff, &diff).sqrt()
    }

    #[test]
    fn stokes_manufactured_polynomial_is_exact() {
        // polynomial manufactured solution inside the discrete space: the
        // residual of its interpolant vanishes to quadrature accuracy, both
        // in the Stokes limit and with the full convective term folded into
        // the forcing.
        let exact = |x: f64, y: f64| (y * y, x * x);
        // nu = 1, p = x + 2y - 3/2 (zero mean over the unit square)
        let pressure = |rect: &Rect<f64>, free: &mut DVector<f64>, ops: &SemOperators<f64>, e: usize| {
            let pm1 = ops.basis.order - 1;
            free[ops.dof.p_dof(e, 0)] =
                rect.x0 + rect.hx * 0.5 + 2.0 * (rect.y0 + rect.hy * 0.5) - 1.5;
            free[ops.dof.p_dof(e, 1)] = rect.hx * 0.5;
            free[ops.dof.p_dof(e, pm1)] = rect.hy;
        };

        // Stokes limit: f = -lap u + grad p = (-1, 0)
        let mesh = Mesh::tensor(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0], |_, _, _| {
            BoundaryTag::Wall
        })
        .unwrap();
        let ops = SemOperators::stokes(mesh, 4);
        let (mut free, dirichlet) = interpolate_velocity(&ops, &exact);
        for e in 0..ops.dof.n_elems {
            let rect = ops.mesh.elements[e];
            pressure(&rect, &mut free, &ops, e);
        }
        let stokes_forcing = |_x: f64, _y: f64| (-1.0, 0.0);
        let r = ops.residual_free(&free, &dirichlet, 1.0, Some(&stokes_forcing));
        assert!(r.norm() < 1e-10, "stokes residual {}", r.norm());

        // full system: f = -lap u + (u . grad)u + grad p
        let ops = small_ops(4);
        let (mut free, dirichlet) = interpolate_velocity(&ops, &exact);
        for e in 0..ops.dof.n_elems {
            let rect = ops.mesh.elements[e];
            pressure(&rect, &mut free, &ops, e);
        }
        let ns_forcing = |x: f64, y: f64| (2.0 * x * x * y - 1.0, 2.0 * x * y * y);
        let r = ops.residual_free(&free, &dirichlet, 1.0, Some(&ns_forcing));
        assert!(r.norm() < 1e-10, "navier-stokes residual {}", r.norm());
    }

    #[test]
    fn stokes_p_refinement_converges_exponentially() {
        let e4 = stokes_manufactured_error(4);
        let e6 = stokes_manufactured_error(6);
        let e8 = stokes_manufactured_error(8);
        assert!(e6 < e4 * 0.1, "e4 = {e4:.3e}, e6 = {e6:.3e}");
        assert!(e8 < e6 * 0.1, "e6 = {e6:.3e}, e8 = {e8:.3e}");
        assert!(e8 < 1e-7, "stokes error at P = 8: {e8:.3e}");
    }
}
