//! Drives the actual deflated solver against the channel at a few
//! viscosities and perturbation settings. Development aid.

use dfcn_core::model::ProblemModel;
use dfcn_core::models::ChannelModel;
use dfcn_core::nlsolve::{solve, DeflationSettings, DeflationState, ModePolicy, SolverConfig};
use dfcn_core::ParameterPoint;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let order = 8;
    let model = ChannelModel::<f64>::with_order(order).unwrap();
    let cfg = SolverConfig::new(1e-6, 150).with_policy(ModePolicy::AlwaysOseen);

    for nu in [0.98, 0.96, 0.94, 0.90] {
        let mu = ParameterPoint::new(vec![nu, 1.0, 1.0], 0).unwrap();
        let zero = DVector::zeros(model.dof_count());
        let (sym, rep) = solve(&model, &zero, &mu, &cfg, None);
        assert!(rep.converged);
        let sym = sym.coeffs;
        for scale in [0.02_f64, 0.05] {
            for p in [1_u32, 2] {
                for seed in [7_u64, 8] {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let raw =
                        DVector::from_fn(sym.len(), |_, _| rng.gen_range(-1.0_f64..1.0));
                    let magnitude = scale * sym.norm();
                    let guess = &sym + &raw * (magnitude / raw.norm());
                    let known = vec![sym.clone()];
                    let deflation = DeflationState {
                        known: &known,
                        settings: DeflationSettings::new(p, 1e-4 * sym.norm())
                            .with_norm_scale(magnitude),
                    };
                    let dcfg = SolverConfig::new(1e-6, 150).with_policy(
                        ModePolicy::DistanceSwitched { threshold: 3.0 * magnitude },
                    );
                    let t = Instant::now();
                    let (cand, drep) = solve(&model, &guess, &mu, &dcfg, Some(&deflation));
                    let f = model.output_functional(&cand.coeffs);
                    let tail: Vec<String> = drep
                        .taus
                        .iter()
                        .rev()
                        .take(4)
                        .map(|t| format!("{t:+.2e}"))
                        .collect();
                    println!(
                        "nu={nu} scale={scale} p={p} seed={seed}: {:?} its={} f={f:+.3e} res={:.2e} d={:.2e} taus={tail:?} [{:.1?}]",
                        drep.status,
                        drep.iterations,
                        drep.final_residual_norm,
                        (&cand.coeffs - &sym).norm(),
                        t.elapsed()
                    );
                }
            }
        }
    }
}
