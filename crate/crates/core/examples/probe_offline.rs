//! Full offline deflated-continuation run on the channel; prints the
//! branch structure and timing. Development aid.

use dfcn_core::continuation::ContinuationConfig;
use dfcn_core::models::ChannelModel;
use dfcn_core::orchestrator::*;
use std::time::Instant;

fn main() {
    let order: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let nu_end: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let model = ChannelModel::<f64>::with_order(order).unwrap();
    let mut plan = SweepPlan::new(1.0, nu_end);
    plan.base_mu = vec![1.0, 1.0, 1.0];
    plan.tolerance = 1e-6;
    plan.grid = GridRule::Adaptive;
    plan.deflation_power = 1;
    plan.budget = DeflationAttemptBudget { max_iterations: 150, max_consecutive_failures: 1 };
    plan.rng_seed = 2024;
    let mut cont = ContinuationConfig::default();
    cont.first_step = -0.005;
    cont.delta_s = 0.5;
    cont.delta_s_max = 1e4;

    let t0 = Instant::now();
    let (diagram, snaps) =
        offline_deflated_continuation(&model, &plan, &cont).unwrap();
    println!("elapsed {:.1?}, {} snapshots", t0.elapsed(), snaps.len());
    for b in &diagram.branches {
        let first = b.points.first().unwrap();
        let last = b.points.last().unwrap();
        println!(
            "branch {}: {} pts, nu {:.4}..{:.4}, f {:+.4e}..{:+.4e}, term {:?}",
            b.id,
            b.points.len(),
            first.mu.active_value(),
            last.mu.active_value(),
            first.output,
            last.output,
            b.termination
        );
    }
    for e in &diagram.bifurcations {
        println!(
            "estimate nu*={:.4} +- {:.4} ids {:?}",
            e.mu_star, e.uncertainty, e.branch_ids
        );
    }
}
