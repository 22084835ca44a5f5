//! Scans the channel in viscosity and reports (a) the resolvent response of
//! the symmetric-branch Jacobian to an antisymmetric load and (b) whether
//! plain Newton from a strongly antisymmetric perturbation converges to an
//! asymmetric solution. Development aid, not part of the test suite.

use dfcn_core::model::{LinearizationMode, ProblemModel};
use dfcn_core::models::ChannelModel;
use dfcn_core::nlsolve::{solve, ModePolicy, SolverConfig};
use dfcn_core::ParameterPoint;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let order: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let nu_end: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let model = ChannelModel::<f64>::with_order(order).unwrap();
    println!("order P = {order}, dofs = {}", model.dof_count());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mu = |nu: f64| ParameterPoint::new(vec![nu, 1.0, 1.0], 0).unwrap();

    let t0 = Instant::now();
    let config = SolverConfig::new(1e-6, 150).with_policy(ModePolicy::AlwaysOseen);
    let zero = DVector::zeros(model.dof_count());
    let (state, report) = solve(&model, &zero, &mu(1.0), &config, None);
    println!(
        "seed solve: converged={} its={} res={:.2e} [{:.2?}]",
        report.converged, report.iterations, report.final_residual_norm, t0.elapsed()
    );

    // fixed random antisymmetric load
    let raw = DVector::from_fn(model.dof_count(), |_, _| rng.gen_range(-1.0_f64..1.0));
    let load = (&raw - model.reflect(&raw)) * 0.5;

    let newton_cfg = SolverConfig::new(1e-6, 40);
    let mut sym = state.coeffs.clone();
    let mut asym: Option<DVector<f64>> = None;
    let mut nu = 1.0_f64;
    while nu > nu_end {
        nu -= 0.02 * nu;
        let t = Instant::now();
        let (s_new, rep) = solve(&model, &sym, &mu(nu), &newton_cfg, None);
        if !rep.converged {
            println!("nu={nu:.4}: symmetric corrector FAILED ({:?})", rep.status);
            break;
        }
        sym = s_new.coeffs.clone();
        // resolvent response to the antisymmetric load
        let mut lin = model.linearize(&sym, &mu(nu), LinearizationMode::Newton).unwrap();
        let resp = lin.solve(&load).map(|z| z.norm()).unwrap_or(f64::INFINITY);

        // Newton from a strong antisymmetric kick
        let mut f_kick = f64::NAN;
        let mut kick_its = 0;
        if asym.is_none() {
            let kick = &sym + &load * (0.05 * sym.norm() / load.norm());
            let (cand, rep_k) = solve(&model, &kick, &mu(nu), &newton_cfg, None);
            if rep_k.converged {
                f_kick = model.output_functional(&cand.coeffs);
                kick_its = rep_k.iterations;
                let dist = (&cand.coeffs - &sym).norm();
                if dist > 1e-3 * (1.0 + sym.norm()) {
                    asym = Some(cand.coeffs.clone());
                }
            }
        } else {
            // follow the asymmetric branch
            let (cand, rep_k) = solve(&model, asym.as_ref().unwrap(), &mu(nu), &newton_cfg, None);
            if rep_k.converged {
                f_kick = model.output_functional(&cand.coeffs);
                kick_its = rep_k.iterations;
                asym = Some(cand.coeffs);
            } else {
                println!("  asymmetric branch lost ({:?})", rep_k.status);
                asym = None;
            }
        }
        println!(
            "nu={nu:.4} Re={:6.1}: f_sym={:+.2e} |J^-1 r|={resp:9.3e} kick f={f_kick:+.4e} @{kick_its} its{} [{:.2?}]",
            dfcn_core::models::reynolds(nu, 1.0, 1.0),
            model.output_functional(&sym),
            if asym.is_some() { " <ASYM>" } else { "" },
            t.elapsed()
        );
    }
}
