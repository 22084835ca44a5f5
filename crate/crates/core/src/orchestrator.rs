//! Deflated-continuation drivers: offline sweeps producing snapshots and
//! diagrams, online sweeps over refined grids, and bifurcation-point
//! estimation.
//!
//! One sweep traces every known branch across the active-parameter range.
//! The leading branch steps adaptively (pseudo-arclength with the parameter
//! cap), every other branch is corrected at the leader's accepted grid
//! value so that all branches stay aligned in the parameter; deflation then
//! runs against the set of solutions at that value and seeds new branches
//! from whatever new solutions it finds.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::continuation::{
    adapt_step, cap_step_by_param, correct_arclength, secant_tangent, ContinuationConfig,
    TangentEstimate,
};
use crate::deflation::TauClampState;
use crate::diagram::{
    default_dedup_radius, is_duplicate, BifurcationDiagram, BifurcationEstimate, Branch,
    BranchPoint, BranchTermination,
};
use crate::model::{ParameterPoint, ProblemModel, StateVector};
use crate::nlsolve::{
    solve, DeflationSettings, DeflationState, ModePolicy, SolverConfig, SolverReport,
};
use crate::rom::{SnapshotMeta, SnapshotSet};
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("seed solve did not converge at the start of the range")]
    SeedSolveFailed,
    #[error("parameter range is empty")]
    EmptyRange,
}

/// How the active-parameter grid advances.
#[derive(Debug, Clone)]
pub enum GridRule<T: Real> {
    /// Pseudo-arclength steps with adaptive length, capped by the relative
    /// parameter bound.
    Adaptive,
    /// Fixed relative step `|d mu| = rel * |mu|` (simple continuation).
    FixedRelStep(T),
    /// Fixed absolute step (simple continuation).
    FixedStep(T),
    /// Explicit grid values, in sweep order.
    Explicit(Vec<T>),
}

/// When deflation runs.
#[derive(Debug, Clone)]
pub enum DeflationSchedule<T: Real> {
    EveryStep,
    /// Only when the active parameter lies inside one of the windows.
    Windows(Vec<(T, T)>),
    Never,
}

impl<T: Real> DeflationSchedule<T> {
    fn active_at(&self, mu: T) -> bool {
        match self {
            Self::EveryStep => true,
            Self::Never => false,
            Self::Windows(ws) => ws.iter().any(|&(a, b)| mu >= a.min(b) && mu <= a.max(b)),
        }
    }
}

/// Iteration caps of a deflated solve and the retry budget per grid value.
#[derive(Debug, Clone, Copy)]
pub struct DeflationAttemptBudget {
    pub max_iterations: usize,
    /// Consecutive failed attempts tolerated before moving on.
    pub max_consecutive_failures: usize,
}

impl Default for DeflationAttemptBudget {
    fn default() -> Self {
        // offline cap; the online driver raises the iteration cap to 300
        Self { max_iterations: 150, max_consecutive_failures: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPlan<T: Real> {
    pub start: T,
    pub end: T,
    /// Template parameter vector; the active component is overwritten while
    /// sweeping, the others define the slice.
    pub base_mu: Vec<T>,
    pub active: usize,
    /// Secondary grids as `(component, values)`; the sweep runs once per
    /// point of their cartesian product.
    pub secondary: Vec<(usize, Vec<T>)>,
    pub grid: GridRule<T>,
    pub schedule: DeflationSchedule<T>,
    pub budget: DeflationAttemptBudget,
    pub deflation_power: u32,
    pub tolerance: T,
    pub corrector_max_iterations: usize,
    /// Initial guess of the very first solve (zero field by default).
    pub seed_guess: Option<DVector<T>>,
    pub rng_seed: u64,
    /// Relative scale of the random perturbation applied to deflated-solve
    /// initial guesses.
    pub perturbation_scale: T,
    /// Relative deduplication radius on top of the absolute default.
    pub dedup_radius_rel: T,
    /// Absolute deduplication radius; defaults to `1e-8 sqrt(dofs)`.
    pub dedup_radius_abs: Option<T>,
    /// Distance unit of the deflation norm; `None` scales it to the
    /// perturbation magnitude of each attempt.
    pub deflation_norm_scale: Option<T>,
    /// Continue branches found by deflation backward toward the bifurcation
    /// point for sharper estimates.
    pub continue_backward: bool,
    pub max_branches: usize,
    /// Clamp parameters cloned into every deflated solve.
    pub clamp: TauClampState<T>,
}

impl<T: Real> SweepPlan<T> {
    pub fn new(start: T, end: T) -> Self {
        Self {
            start,
            end,
            base_mu: vec![start],
            active: 0,
            secondary: Vec::new(),
            grid: GridRule::Adaptive,
            schedule: DeflationSchedule::EveryStep,
            budget: DeflationAttemptBudget::default(),
            deflation_power: 1,
            tolerance: real(1e-6),
            corrector_max_iterations: 30,
            seed_guess: None,
            rng_seed: 0,
            perturbation_scale: real(1e-2),
            dedup_radius_rel: real(1e-5),
            dedup_radius_abs: None,
            deflation_norm_scale: None,
            continue_backward: false,
            max_branches: 24,
            clamp: TauClampState::default(),
        }
    }

    fn mu_at(&self, overrides: &[(usize, T)], active_value: T) -> ParameterPoint<T> {
        let mut values = self.base_mu.clone();
        for &(idx, v) in overrides {
            values[idx] = v;
        }
        values[self.active] = active_value;
        ParameterPoint::new(values, self.active).expect("invalid sweep parameter point")
    }
}

struct BranchState<T: Real> {
    branch: Branch<T>,
    alive: bool,
    /// Last two accepted states for secant tangents.
    prev: Option<(DVector<T>, T)>,
    curr: (DVector<T>, T),
    /// Displacement of the last accepted step, the scale reference of the
    /// Newton/Oseen switching threshold.
    last_disp: T,
}

fn record_point<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    mu: &ParameterPoint<T>,
    state: DVector<T>,
    iterations: usize,
    residual_norm: T,
    tolerance: T,
) -> (BranchPoint<T>, Arc<StateVector<T>>) {
    let arc = Arc::new(StateVector::new(state, model.space_tag()));
    let point = BranchPoint {
        mu: mu.clone(),
        state: arc.clone(),
        output: model.output_functional(&arc.coeffs),
        iterations,
        converged: true,
        residual_norm,
        tolerance,
    };
    (point, arc)
}

/// One deflated solve attempt sequence at a fixed parameter value: guesses
/// cycle over the known solutions (perturbed), every converged and distinct
/// solution joins the known set, and the loop stops after the configured
/// number of consecutive failures. Returns the new solutions.
#[allow(clippy::too_many_arguments)]
pub fn attempt_deflation<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    mu: &ParameterPoint<T>,
    known: &mut Vec<DVector<T>>,
    plan: &SweepPlan<T>,
    mode_threshold: T,
    rng: &mut ChaCha8Rng,
) -> Vec<(DVector<T>, SolverReport<T>)> {
    let radius_abs = plan
        .dedup_radius_abs
        .unwrap_or_else(|| default_dedup_radius::<T>(model.dof_count()));
    let config = SolverConfig::new(plan.tolerance, plan.budget.max_iterations)
        .with_policy(ModePolicy::DistanceSwitched { threshold: mode_threshold });
    let mut found = Vec::new();
    let mut failures = 0;
    let mut base_idx = 0;
    while failures < plan.budget.max_consecutive_failures
        && known.len() + 1 <= plan.max_branches
    {
        let base = &known[base_idx % known.len()];
        base_idx += 1;
        // perturbation of the configured relative magnitude, in a random
        // direction; it both breaks any symmetry the base solution has and
        // sets the distance unit of the deflation norm
        let raw = DVector::from_fn(base.len(), |_, _| real::<T>(rng.gen_range(-1.0..1.0)));
        let magnitude = plan.perturbation_scale * base.norm().max(T::one());
        let perturb = &raw * (magnitude / raw.norm());
        let guess = base + perturb;
        let deflation = DeflationState {
            known,
            settings: DeflationSettings {
                power: plan.deflation_power,
                clamp: Some(plan.clamp.clone()),
                radius: radius_abs,
                norm_scale: plan.deflation_norm_scale.unwrap_or(magnitude),
            },
        };
        let (state, report) = solve(model, &guess, mu, &config, Some(&deflation));
        let distinct = report.converged
            && known
                .iter()
                .all(|w| !is_duplicate(&state.coeffs, w, radius_abs, plan.dedup_radius_rel));
        if distinct {
            known.push(state.coeffs.clone());
            found.push((state.coeffs, report));
            failures = 0;
        } else {
            failures += 1;
        }
    }
    found
}

/// Result of one single-slice sweep.
pub struct SweepOutcome<T: Real> {
    pub branches: Vec<Branch<T>>,
    pub estimates: Vec<BifurcationEstimate<T>>,
    /// Accepted active-parameter grid, in sweep order.
    pub grid: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn run_sweep<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    plan: &SweepPlan<T>,
    cont: &ContinuationConfig<T>,
    overrides: &[(usize, T)],
    deflate: bool,
    single_branch: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SweepOutcome<T>, OrchestratorError> {
    let dir = (plan.end - plan.start).signum();
    if dir == T::zero() {
        return Err(OrchestratorError::EmptyRange);
    }
    let radius_abs = plan
        .dedup_radius_abs
        .unwrap_or_else(|| default_dedup_radius::<T>(model.dof_count()));
    let tol = plan.tolerance;

    // seed solve at the start of the range (Oseen is the robust choice for
    // a zero initial guess; models without a Picard split fall back to
    // Newton internally)
    let seed_cfg = SolverConfig::new(tol, plan.budget.max_iterations.max(150))
        .with_policy(ModePolicy::AlwaysOseen);
    let guess = plan
        .seed_guess
        .clone()
        .unwrap_or_else(|| DVector::zeros(model.dof_count()));
    let mu0 = plan.mu_at(overrides, plan.start);
    let (seed_state, seed_report) = solve(model, &guess, &mu0, &seed_cfg, None);
    if !seed_report.converged {
        return Err(OrchestratorError::SeedSolveFailed);
    }
    let (p0, _) = record_point(
        model,
        &mu0,
        seed_state.coeffs.clone(),
        seed_report.iterations,
        seed_report.final_residual_norm,
        tol,
    );
    let mut branches = vec![BranchState {
        branch: {
            let mut b = Branch::new(0);
            b.points.push(p0);
            b
        },
        alive: true,
        prev: None,
        curr: (seed_state.coeffs, plan.start),
        last_disp: T::zero(),
    }];
    let mut grid = vec![plan.start];

    let corr_cfg = SolverConfig::new(tol, plan.corrector_max_iterations);
    let mut delta_s = cont.delta_s;
    let mut post_bifurcation = false;
    let mut last_dmu = cont.first_step * dir;
    let mut explicit_idx = 1usize;

    'sweep: loop {
        let leader_idx = match branches.iter().position(|b| b.alive) {
            Some(i) => i,
            None => break,
        };
        let mu_curr = branches[leader_idx].curr.1;
        if (plan.end - mu_curr) * dir <= T::zero() {
            break;
        }

        // ---- advance the leader to the next accepted grid value ----
        let leader = &branches[leader_idx];
        let first_step = leader.branch.points.len() < 2 || leader.prev.is_none();
        let mut accepted: Option<(DVector<T>, T, usize, T)> = None;
        let use_arclength =
            matches!(plan.grid, GridRule::Adaptive) && !first_step && !post_bifurcation;

        if use_arclength {
            let (u_prev, mu_prev) = leader.prev.clone().unwrap();
            let tangent = match secant_tangent(
                &u_prev,
                mu_prev,
                &leader.curr.0,
                leader.curr.1,
                delta_s.max(cont.delta_s_min),
            ) {
                Ok(t) => t,
                Err(_) => TangentEstimate::parameter_axis(model.dof_count(), dir),
            };
            // orient along the sweep
            let tangent = if tangent.mu_dot * dir < T::zero() {
                TangentEstimate {
                    u_dot: -tangent.u_dot,
                    mu_dot: -tangent.mu_dot,
                    normalized: true,
                }
            } else {
                tangent
            };
            let mut ds_try = cap_step_by_param(delta_s, &tangent, mu_curr, cont);
            for _retry in 0..5 {
                // land exactly on the range end when overshooting
                if tangent.mu_dot != T::zero() {
                    let mu_pred = mu_curr + ds_try * tangent.mu_dot;
                    if (mu_pred - plan.end) * dir > T::zero() {
                        break; // handled by the fixed-end solve below
                    }
                }
                let base_mu = plan.mu_at(overrides, mu_curr);
                match correct_arclength(
                    model,
                    &branches[leader_idx].curr.0,
                    &base_mu,
                    &tangent,
                    ds_try,
                    tol,
                    plan.corrector_max_iterations,
                ) {
                    Ok(res)
                        if res.converged && (res.mu_active - mu_curr) * dir > T::zero() =>
                    {
                        let its = res.iterations;
                        delta_s = adapt_step(its, true, ds_try, cont);
                        accepted = Some((res.u, res.mu_active, its, res.residual_norm));
                        break;
                    }
                    _ => {
                        ds_try = (ds_try * cont.shrink).max(cont.delta_s_min);
                        if ds_try <= cont.delta_s_min {
                            break;
                        }
                    }
                }
            }
        }

        if accepted.is_none() {
            // simple continuation: fixed parameter target, previous state as
            // the guess
            let mu_next = match &plan.grid {
                GridRule::Explicit(values) => {
                    if explicit_idx >= values.len() {
                        break 'sweep;
                    }
                    let v = values[explicit_idx];
                    explicit_idx += 1;
                    v
                }
                GridRule::FixedStep(h) => mu_curr + h.abs() * dir,
                GridRule::FixedRelStep(rel) => mu_curr + mu_curr.abs() * *rel * dir,
                GridRule::Adaptive => {
                    let dmu = if first_step {
                        cont.first_step * dir
                    } else {
                        last_dmu * cont.post_bifurcation_step_fraction
                    };
                    mu_curr + dmu
                }
            };
            let mu_next =
                if (mu_next - plan.end) * dir > T::zero() { plan.end } else { mu_next };
            let mu = plan.mu_at(overrides, mu_next);
            let (state, report) =
                solve(model, &branches[leader_idx].curr.0, &mu, &corr_cfg, None);
            if report.converged {
                accepted = Some((
                    state.coeffs,
                    mu_next,
                    report.iterations,
                    report.final_residual_norm,
                ));
            }
        }

        let Some((u_new, mu_new, its, resnorm)) = accepted else {
            // leader exhausted its retries: terminate it and promote the
            // next branch
            branches[leader_idx].alive = false;
            branches[leader_idx].branch.termination = BranchTermination::StepUnderflow;
            continue;
        };
        post_bifurcation = false;
        last_dmu = mu_new - mu_curr;
        let mu = plan.mu_at(overrides, mu_new);
        let disp = (&u_new - &branches[leader_idx].curr.0).norm();
        {
            let leader = &mut branches[leader_idx];
            let (point, _) = record_point(model, &mu, u_new.clone(), its, resnorm, tol);
            leader.branch.points.push(point);
            leader.prev = Some(leader.curr.clone());
            leader.curr = (u_new, mu_new);
            leader.last_disp = disp;
        }
        grid.push(mu_new);

        // ---- followers correct at the leader's grid value ----
        for i in 0..branches.len() {
            if i == leader_idx || !branches[i].alive {
                continue;
            }
            // guesses: secant extrapolation first, then the previous state,
            // then scaled nudges that step off singular ridges without
            // leaving the branch's symmetry class
            let mut guesses: Vec<DVector<T>> = Vec::new();
            if let Some((u_prev, mu_prev)) = &branches[i].prev {
                let denom = branches[i].curr.1 - *mu_prev;
                if denom != T::zero() {
                    let t = (mu_new - branches[i].curr.1) / denom;
                    guesses.push(&branches[i].curr.0 + (&branches[i].curr.0 - u_prev) * t);
                }
            }
            guesses.push(branches[i].curr.0.clone());
            for nudge in [1e-3, -1e-3, 5e-2, -5e-2] {
                guesses.push(&branches[i].curr.0 * (T::one() + real::<T>(nudge)));
            }
            let mut result = None;
            for guess in &guesses {
                let (state, report) = solve(model, guess, &mu, &corr_cfg, None);
                if report.converged {
                    result = Some((state, report));
                    break;
                }
            }
            let Some((state, report)) = result else {
                branches[i].alive = false;
                branches[i].branch.termination = BranchTermination::Divergence;
                continue;
            };
            // merged onto another branch?
            let mut merged = None;
            for j in 0..branches.len() {
                if j != i && branches[j].alive && branches[j].curr.1 == mu_new {
                    if is_duplicate(
                        &state.coeffs,
                        &branches[j].curr.0,
                        radius_abs,
                        plan.dedup_radius_rel,
                    ) {
                        merged = Some(branches[j].branch.id);
                        break;
                    }
                }
            }
            if let Some(into) = merged {
                branches[i].alive = false;
                branches[i].branch.termination = BranchTermination::Merged { into };
                continue;
            }
            let disp = (&state.coeffs - &branches[i].curr.0).norm();
            let (point, _) = record_point(
                model,
                &mu,
                state.coeffs.clone(),
                report.iterations,
                report.final_residual_norm,
                tol,
            );
            branches[i].branch.points.push(point);
            branches[i].prev = Some(branches[i].curr.clone());
            branches[i].curr = (state.coeffs, mu_new);
            branches[i].last_disp = disp;
        }

        // ---- deflation against all solutions at this grid value ----
        if deflate && !single_branch && plan.schedule.active_at(mu_new) {
            let mut known: Vec<DVector<T>> = branches
                .iter()
                .filter(|b| b.alive && b.curr.1 == mu_new)
                .map(|b| b.curr.0.clone())
                .collect();
            if !known.is_empty() && branches.len() < plan.max_branches {
                let threshold =
                    real::<T>(10.0) * branches[leader_idx].last_disp.max(real::<T>(1e-12));
                let new_solutions =
                    attempt_deflation(model, &mu, &mut known, plan, threshold, rng);
                let found_any = !new_solutions.is_empty();
                for (coeffs, report) in new_solutions {
                    let id = branches.len();
                    let (point, _) = record_point(
                        model,
                        &mu,
                        coeffs.clone(),
                        report.iterations,
                        report.final_residual_norm,
                        tol,
                    );
                    let mut b = Branch::new(id);
                    b.points.push(point);
                    let mut bs = BranchState {
                        branch: b,
                        alive: true,
                        prev: None,
                        curr: (coeffs, mu_new),
                        last_disp: branches[leader_idx].last_disp,
                    };
                    // optional backward continuation toward the bifurcation
                    if plan.continue_backward {
                        backfill_branch(
                            model, plan, overrides, &grid, &branches, &mut bs, &corr_cfg,
                            radius_abs,
                        );
                    }
                    branches.push(bs);
                }
                if found_any {
                    post_bifurcation = true;
                }
            }
        }
    }

    for b in &mut branches {
        if b.alive {
            b.branch.termination = BranchTermination::RangeEnd;
        }
    }
    let branches: Vec<Branch<T>> = branches.into_iter().map(|b| b.branch).collect();
    let estimates = estimate_from_grid(&branches, &grid);
    Ok(SweepOutcome { branches, estimates, grid })
}

/// Continues a freshly found branch backward over the already visited grid
/// until the corrector fails or the branch merges into a known one.
#[allow(clippy::too_many_arguments)]
fn backfill_branch<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    plan: &SweepPlan<T>,
    overrides: &[(usize, T)],
    grid: &[T],
    branches: &[BranchState<T>],
    bs: &mut BranchState<T>,
    corr_cfg: &SolverConfig<T>,
    radius_abs: T,
) {
    let mut state = bs.curr.0.clone();
    let mut prepend = Vec::new();
    for &mu_b in grid.iter().rev().skip(1) {
        let mu = plan.mu_at(overrides, mu_b);
        let (s, report) = solve(model, &state, &mu, corr_cfg, None);
        if !report.converged {
            break;
        }
        let dup = branches.iter().any(|other| {
            other
                .branch
                .point_at(mu_b)
                .map(|p| {
                    is_duplicate(&s.coeffs, &p.state.coeffs, radius_abs, plan.dedup_radius_rel)
                })
                .unwrap_or(false)
        });
        if dup {
            break;
        }
        let (point, _) = record_point(
            model,
            &mu,
            s.coeffs.clone(),
            report.iterations,
            report.final_residual_norm,
            plan.tolerance,
        );
        prepend.push(point);
        state = s.coeffs;
    }
    for p in prepend {
        bs.branch.points.insert(0, p);
    }
}

/// Bifurcation estimates from solution counts along an aligned grid:
/// whenever the count changes between consecutive grid values the midpoint
/// of the interval is an estimate, with the interval width as uncertainty.
pub fn estimate_from_grid<T: Real>(
    branches: &[Branch<T>],
    grid: &[T],
) -> Vec<BifurcationEstimate<T>> {
    let mut estimates = Vec::new();
    let half = real::<T>(0.5);
    for w in grid.windows(2) {
        let at = |mu: T| -> Vec<usize> {
            branches.iter().filter(|b| b.point_at(mu).is_some()).map(|b| b.id).collect()
        };
        let a = at(w[0]);
        let b = at(w[1]);
        if a.len() != b.len() {
            let mut ids: Vec<usize> = b
                .iter()
                .filter(|id| !a.contains(id))
                .chain(a.iter().filter(|id| !b.contains(id)))
                .copied()
                .collect();
            ids.sort_unstable();
            estimates.push(BifurcationEstimate {
                mu_star: (w[0] + w[1]) * half,
                uncertainty: (w[1] - w[0]).abs(),
                branch_ids: ids,
            });
        }
    }
    estimates
}

/// Bifurcation estimates of a diagram with mu-aligned branches.
pub fn estimate_bifurcation_points<T: Real>(
    diagram: &BifurcationDiagram<T>,
) -> Vec<BifurcationEstimate<T>> {
    estimate_from_grid(&diagram.branches, &diagram.grid())
}

/// Traces a single branch from a seed across the range (no deflation).
pub fn trace_branch<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    plan: &SweepPlan<T>,
    cont: &ContinuationConfig<T>,
) -> Result<Branch<T>, OrchestratorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
    let outcome = run_sweep(model, plan, cont, &[], false, true, &mut rng)?;
    Ok(outcome.branches.into_iter().next().expect("sweep returns at least the seed branch"))
}

fn secondary_combinations<T: Real>(plan: &SweepPlan<T>) -> Vec<Vec<(usize, T)>> {
    let mut combos: Vec<Vec<(usize, T)>> = vec![Vec::new()];
    for (idx, values) in &plan.secondary {
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for combo in &combos {
            for &v in values {
                let mut c = combo.clone();
                c.push((*idx, v));
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

/// Offline phase: one 1-parameter deflated-continuation diagram per
/// secondary-grid point; every converged point's state is collected as a
/// snapshot.
pub fn offline_deflated_continuation<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    plan: &SweepPlan<T>,
    cont: &ContinuationConfig<T>,
) -> Result<(BifurcationDiagram<T>, SnapshotSet<T>), OrchestratorError> {
    let mut diagram = BifurcationDiagram::new();
    let mut snapshots = SnapshotSet::new();
    for (combo_idx, combo) in secondary_combinations(plan).iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed.wrapping_add(combo_idx as u64));
        let outcome = run_sweep(model, plan, cont, combo, true, false, &mut rng)?;
        let id_offset = diagram.branches.len();
        for mut branch in outcome.branches {
            branch.id += id_offset;
            for point in &branch.points {
                snapshots.push(
                    point.state.clone(),
                    SnapshotMeta {
                        mu: point.mu.clone(),
                        branch_id: branch.id,
                        tolerance: point.tolerance,
                    },
                );
            }
            diagram.branches.push(branch);
        }
        for mut est in outcome.estimates {
            for id in &mut est.branch_ids {
                *id += id_offset;
            }
            diagram.bifurcations.push(est);
        }
    }
    Ok((diagram, snapshots))
}

/// Online phase: the same deflated-continuation logic on a reduced model
/// over a refined grid, with the online budgets and deflation power.
pub fn online_deflated_continuation<T: Real, M: ProblemModel<T> + ?Sized>(
    model: &M,
    plan: &SweepPlan<T>,
    cont: &ContinuationConfig<T>,
) -> Result<BifurcationDiagram<T>, OrchestratorError> {
    let (diagram, _) = offline_deflated_continuation(model, plan, cont)?;
    Ok(diagram)
}

/// Refines every interval of an accepted grid into `refine` equal parts.
pub fn refine_grid<T: Real>(grid: &[T], refine: usize) -> Vec<T> {
    if grid.len() < 2 || refine < 2 {
        return grid.to_vec();
    }
    let mut out = vec![grid[0]];
    let rf = real::<T>(refine as f64);
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / rf;
        for k in 1..=refine {
            out.push(w[0] + h * real::<T>(k as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PitchforkModel;
    use approx::assert_relative_eq;

    fn pitchfork_plan(start: f64, end: f64) -> SweepPlan<f64> {
        let mut plan = SweepPlan::new(start, end);
        plan.tolerance = 1e-12;
        plan.grid = GridRule::FixedStep(0.01);
        plan.deflation_power = 1;
        plan.dedup_radius_abs = Some(1e-3);
        plan.budget =
            DeflationAttemptBudget { max_iterations: 150, max_consecutive_failures: 2 };
        plan
    }

    #[test]
    fn trace_trivial_branch() {
        // x = 0 for all mu, swept from -1 to 1
        let model = PitchforkModel::<f64>::new();
        let mut plan = pitchfork_plan(-1.0, 1.0);
        plan.schedule = DeflationSchedule::Never;
        let cont = ContinuationConfig::default();
        let branch = trace_branch(&model, &plan, &cont).unwrap();
        assert_eq!(branch.termination, BranchTermination::RangeEnd);
        assert!(branch.points.len() >= 200);
        for p in &branch.points {
            assert!(p.state.coeffs[0].abs() < 1e-10);
            assert_eq!(p.output, p.state.coeffs[0]);
        }
    }

    #[test]
    fn trace_sqrt_branch_adaptive() {
        // seeded on the nontrivial branch at mu = 0.25, swept up to 1;
        // points match sqrt(mu) to 1e-8
        let model = PitchforkModel::<f64>::new();
        let mut plan = SweepPlan::new(0.25, 1.0);
        plan.tolerance = 1e-12;
        plan.seed_guess = Some(DVector::from_element(1, 0.5));
        plan.schedule = DeflationSchedule::Never;
        let mut cont = ContinuationConfig::default();
        cont.first_step = 1e-3;
        cont.max_relative_param_step = 0.05;
        let branch = trace_branch(&model, &plan, &cont).unwrap();
        assert_eq!(branch.termination, BranchTermination::RangeEnd);
        assert!(branch.points.len() >= 10);
        for p in &branch.points {
            let mu = p.mu.active_value();
            assert!(mu <= 1.0 + 1e-12);
            assert_relative_eq!(p.state.coeffs[0], mu.sqrt(), epsilon = 1e-8);
        }
        let last = branch.points.last().unwrap();
        assert_relative_eq!(last.mu.active_value(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn deflation_attempts_on_pitchfork() {
        let model = PitchforkModel::<f64>::new();
        let plan = pitchfork_plan(-1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        // at mu = 1 with {0} known: two successive deflated solves find +-1
        let mu = ParameterPoint::scalar(1.0);
        let mut known = vec![DVector::from_element(1, 0.0)];
        let found = attempt_deflation(&model, &mu, &mut known, &plan, 0.05, &mut rng);
        assert_eq!(
            found.len(),
            2,
            "found {:?}",
            found.iter().map(|f| f.0[0]).collect::<Vec<_>>()
        );
        let mut roots: Vec<f64> = found.iter().map(|(s, _)| s[0]).collect();
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(roots[0], -1.0, epsilon = 1e-9);
        assert_relative_eq!(roots[1], 1.0, epsilon = 1e-9);

        // at mu = -1 with {0} known: no other real roots, empty list
        let mu = ParameterPoint::scalar(-1.0);
        let mut known = vec![DVector::from_element(1, 0.0)];
        let found = attempt_deflation(&model, &mu, &mut known, &plan, 0.05, &mut rng);
        assert!(found.is_empty());
    }

    #[test]
    fn pitchfork_diagram_structure() {
        let model = PitchforkModel::<f64>::new();
        let plan = pitchfork_plan(-1.0, 1.0);
        let cont = ContinuationConfig::default();
        let (diagram, snapshots) =
            offline_deflated_continuation(&model, &plan, &cont).unwrap();
        // three branches for mu > 0, one for mu < 0
        assert_eq!(diagram.branches.len(), 3);
        for &mu in &diagram.grid() {
            let count = diagram.solutions_at(mu);
            if mu < 0.0 {
                assert_eq!(count, 1, "mu = {mu}");
            } else if mu > 0.005 {
                assert_eq!(count, 3, "mu = {mu}");
            }
        }
        // nontrivial branches match +-sqrt(mu)
        for b in &diagram.branches[1..] {
            for p in &b.points {
                let mu = p.mu.active_value();
                assert!(mu > 0.0);
                assert_relative_eq!(p.state.coeffs[0].abs(), mu.sqrt(), epsilon = 1e-8);
            }
        }
        // single estimate at mu* = 0 +- 0.01
        assert_eq!(diagram.bifurcations.len(), 1);
        let est = &diagram.bifurcations[0];
        assert!(est.mu_star.abs() <= 0.01, "mu* = {}", est.mu_star);
        assert!(est.uncertainty <= 0.011);
        // every converged point became a snapshot
        assert_eq!(snapshots.len(), diagram.point_count());
    }

    #[test]
    fn backward_continuation_sharpens_new_branches() {
        let model = PitchforkModel::<f64>::new();
        let mut plan = pitchfork_plan(-0.2, 0.3);
        plan.continue_backward = true;
        let cont = ContinuationConfig::default();
        let (diagram, _) = offline_deflated_continuation(&model, &plan, &cont).unwrap();
        assert_eq!(diagram.branches.len(), 3);
        // backfilled branches still match the closed form
        for b in &diagram.branches[1..] {
            for p in &b.points {
                assert_relative_eq!(
                    p.state.coeffs[0].abs(),
                    p.mu.active_value().max(0.0).sqrt(),
                    epsilon = 1e-7
                );
            }
        }
    }

    #[test]
    fn epsilon_fold_detected_by_deflated_continuation() {
        // eps != 0 splits the pitchfork: one branch through, plus a
        // disconnected branch born at the fold mu_f = (27 eps^2 / 4)^(1/3)
        let eps = 1e-3;
        let model = PitchforkModel::<f64>::with_epsilon(eps);
        let plan = pitchfork_plan(-0.5, 1.0);
        let cont = ContinuationConfig::default();
        let (diagram, _) = offline_deflated_continuation(&model, &plan, &cont).unwrap();
        assert_eq!(diagram.branches.len(), 3);
        let mu_f = (27.0 * eps * eps / 4.0).powf(1.0 / 3.0);
        let est = &diagram.bifurcations[0];
        assert!(
            (est.mu_star - mu_f).abs() <= 0.011,
            "fold estimate {} vs {}",
            est.mu_star,
            mu_f
        );
    }

    #[test]
    fn degenerate_single_point_grid() {
        let model = PitchforkModel::<f64>::new();
        let mut plan = pitchfork_plan(1.0, 1.0 + 1e-9);
        plan.grid = GridRule::Explicit(vec![1.0]);
        plan.seed_guess = Some(DVector::from_element(1, 0.9));
        let cont = ContinuationConfig::default();
        let (diagram, _) = offline_deflated_continuation(&model, &plan, &cont).unwrap();
        // single solve, one point on the seeded branch
        assert_eq!(diagram.branches[0].points.len(), 1);
    }

    #[test]
    fn refine_grid_splits_intervals() {
        let g = vec![1.0, 0.9, 0.85];
        let r = refine_grid(&g, 2);
        assert_eq!(r.len(), 5);
        assert_relative_eq!(r[1], 0.95);
        assert_relative_eq!(r[3], 0.875);
    }
}
