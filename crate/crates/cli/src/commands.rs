//! Phase drivers shared by the CLI subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;

use dfcn_core::continuation::ContinuationConfig;
use dfcn_core::diagram::BifurcationDiagram;
use dfcn_core::io::{self, DiagramFile, DiagramFormat};
use dfcn_core::model::{LinearizationMode, ParameterPoint, ProblemModel};
use dfcn_core::models::{ChannelConfig, ChannelModel, PitchforkModel};
use dfcn_core::nlsolve::{solve, ModePolicy, SolverConfig};
use dfcn_core::orchestrator::{offline_deflated_continuation, SweepPlan};
use dfcn_core::rom::{
    build_reduced_operators, pod, pod_projection_error, PodTarget, ReducedBasis, ReducedModel,
    SnapshotSet,
};
use dfcn_core::sem::Mesh;

use crate::config::{ModelKind, PodTargetSpec, RunConfig};

pub struct OutPaths {
    pub dir: PathBuf,
}

impl OutPaths {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn diagram_csv(&self) -> PathBuf {
        self.dir.join("diagram.csv")
    }
    pub fn diagram_json(&self) -> PathBuf {
        self.dir.join("diagram.json")
    }
    pub fn snapshots(&self) -> PathBuf {
        self.dir.join("snapshots.bin")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
    pub fn modes(&self) -> PathBuf {
        self.dir.join("modes.bin")
    }
    pub fn eigen_json(&self) -> PathBuf {
        self.dir.join("eigenvalues.json")
    }
    pub fn eigen_csv(&self) -> PathBuf {
        self.dir.join("eigenvalues.csv")
    }
    pub fn online_csv(&self) -> PathBuf {
        self.dir.join("diagram_online.csv")
    }
    pub fn online_json(&self) -> PathBuf {
        self.dir.join("diagram_online.json")
    }
    pub fn online_states(&self) -> PathBuf {
        self.dir.join("online_states.bin")
    }
}

pub fn build_channel(config: &RunConfig) -> Result<ChannelModel<f64>> {
    let mesh = match &config.mesh_file {
        Some(path) => Some(Mesh::load_json(path)?),
        None => None,
    };
    Ok(ChannelModel::new(ChannelConfig { order: config.order, mesh })?)
}

/// Runs the offline sweeps; `jobs > 1` distributes the independent
/// secondary-grid slices over threads, preserving the sequential output
/// byte for byte (slices are merged in grid order).
fn offline_parallel<M: ProblemModel<f64> + Sync + ?Sized>(
    model: &M,
    plan: &SweepPlan<f64>,
    cont: &ContinuationConfig<f64>,
    jobs: usize,
) -> Result<(BifurcationDiagram<f64>, SnapshotSet<f64>)> {
    let combos = secondary_combinations(plan);
    if jobs <= 1 || combos.len() <= 1 {
        return Ok(offline_deflated_continuation(model, plan, cont)?);
    }
    // one single-slice plan per combo, seeded exactly as the sequential path
    let slices: Vec<SweepPlan<f64>> = combos
        .iter()
        .enumerate()
        .map(|(idx, combo)| {
            let mut p = plan.clone();
            p.secondary = Vec::new();
            for &(comp, v) in combo {
                p.base_mu[comp] = v;
            }
            p.rng_seed = plan.rng_seed.wrapping_add(idx as u64);
            p
        })
        .collect();
    let results: Vec<Result<(BifurcationDiagram<f64>, SnapshotSet<f64>)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = slices
                .iter()
                .map(|p| {
                    scope.spawn(move || {
                        offline_deflated_continuation(model, p, cont).map_err(|e| anyhow!(e))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
    let mut diagram = BifurcationDiagram::new();
    let mut snapshots = SnapshotSet::new();
    for result in results {
        let (d, s) = result?;
        let offset = diagram.branches.len();
        for mut b in d.branches {
            b.id += offset;
            diagram.branches.push(b);
        }
        for mut est in d.bifurcations {
            for id in &mut est.branch_ids {
                *id += offset;
            }
            diagram.bifurcations.push(est);
        }
        for (state, mut meta) in s.states.into_iter().zip(s.meta) {
            meta.branch_id += offset;
            snapshots.push(state, meta);
        }
    }
    Ok((diagram, snapshots))
}

fn secondary_combinations(plan: &SweepPlan<f64>) -> Vec<Vec<(usize, f64)>> {
    let mut combos: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
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

fn write_diagram(file: &DiagramFile, csv: &Path, json: &Path) -> Result<()> {
    std::fs::write(csv, io::serialize_diagram(file, DiagramFormat::Csv)?)?;
    std::fs::write(json, io::serialize_diagram(file, DiagramFormat::Json)?)?;
    Ok(())
}

pub fn cmd_offline(
    config: &RunConfig,
    out: &OutPaths,
    jobs: usize,
    dump_fields: bool,
) -> Result<()> {
    let plan = config.offline_plan()?;
    let cont = config.continuation_config();
    let t0 = Instant::now();
    let (diagram, snapshots) = match config.model {
        ModelKind::Pitchfork => {
            let model = PitchforkModel::with_epsilon(config.epsilon);
            offline_parallel(&model, &plan, &cont, jobs)?
        }
        ModelKind::Channel => {
            let model = build_channel(config)?;
            let result = offline_parallel(&model, &plan, &cont, jobs)?;
            if dump_fields {
                for branch in &result.0.branches {
                    if let Some(p) = branch.points.last() {
                        let path = out.dir.join(format!("field_branch{}.csv", branch.id));
                        model.write_field_csv(&path, &p.state.coeffs, &p.mu)?;
                    }
                }
            }
            result
        }
    };
    log::info!(
        "offline: {} branches, {} points, {} bifurcation estimates in {:.1?}",
        diagram.branches.len(),
        diagram.point_count(),
        diagram.bifurcations.len(),
        t0.elapsed()
    );
    // diagram files first, manifest last so a failure leaves no manifest
    let file = DiagramFile::from_diagram(&diagram);
    write_diagram(&file, &out.diagram_csv(), &out.diagram_json())?;
    snapshots.save(&out.snapshots(), &out.manifest(), config.order)?;
    println!(
        "offline: {} branches, {} snapshots, {} bifurcation estimate(s)",
        diagram.branches.len(),
        snapshots.len(),
        diagram.bifurcations.len()
    );
    for est in &diagram.bifurcations {
        println!("  mu* = {:.6} +- {:.6} (branches {:?})", est.mu_star, est.uncertainty, est.branch_ids);
    }
    Ok(())
}

pub fn cmd_pod(config: &RunConfig, out: &OutPaths) -> Result<()> {
    let (snapshots, order) = SnapshotSet::<f64>::load(&out.snapshots(), &out.manifest())
        .context("cannot load snapshot set (run `offline` first)")?;
    if snapshots.is_empty() {
        bail!("snapshot set is empty");
    }
    let target = match config.pod.target {
        PodTargetSpec::Dimension(n) => PodTarget::Dimension(n),
        PodTargetSpec::EnergyTolerance(t) => PodTarget::EnergyTolerance(t),
    };
    let basis = pod(&snapshots, target)?;
    // the error identity, verified and logged
    let lhs = pod_projection_error(&snapshots, &basis, None);
    let rhs: f64 = basis.eigenvalues[basis.dim()..].iter().sum();
    let scale = basis.eigenvalues.first().copied().unwrap_or(1.0).max(1e-300);
    log::info!(
        "pod: dimension {}, projection error identity |lhs - rhs|/lambda_1 = {:.3e}",
        basis.dim(),
        (lhs - rhs).abs() / scale
    );
    if (lhs - rhs).abs() > 1e-8 * scale {
        log::warn!("pod error identity violated: lhs {lhs:.6e} vs tail {rhs:.6e}");
    }
    basis.save(&out.modes(), &out.eigen_json())?;
    let mut csv = String::from("index,lambda\n");
    for (i, l) in basis.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(out.eigen_csv(), csv)?;
    println!(
        "pod: {} snapshots (order {order}) -> {} modes; eigenvalue table written",
        snapshots.len(),
        basis.dim()
    );
    Ok(())
}

pub fn cmd_online(
    config: &RunConfig,
    out: &OutPaths,
    jobs: usize,
    verify_against_full: bool,
) -> Result<()> {
    if config.model != ModelKind::Channel {
        bail!("the online phase is defined for the channel model");
    }
    let model = build_channel(config)?;
    let basis = ReducedBasis::<f64>::load(&out.modes(), &out.eigen_json())
        .context("cannot load reduced basis (run `pod` first)")?;
    if basis.full_dof() != model.dof_count() {
        bail!(
            "basis dof {} does not match the model ({}); check `order`",
            basis.full_dof(),
            model.dof_count()
        );
    }
    let t0 = Instant::now();
    let ops = build_reduced_operators(&model, &basis, &config.c_h_values)?;
    let reduced = ReducedModel::new(ops)?;
    log::info!("reduced operators built in {:.1?} (N_rb = {})", t0.elapsed(), basis.dim());

    let plan = config.online_plan()?;
    let cont = config.continuation_config();
    let t1 = Instant::now();
    let (diagram, reduced_states) = offline_parallel(&reduced, &plan, &cont, jobs)?;
    log::info!(
        "online: {} points on {} branches in {:.1?}",
        diagram.point_count(),
        diagram.branches.len(),
        t1.elapsed()
    );

    let mut file = DiagramFile::from_diagram(&diagram);
    if verify_against_full {
        let sample = config.online.verify_sample.max(1);
        let total = file.rows.len();
        let stride = (total / sample).max(1);
        let full_cfg = SolverConfig::new(config.tolerance, 60);
        let mut errors = Vec::new();
        let mut row_idx = 0usize;
        for branch in &diagram.branches {
            for point in &branch.points {
                if row_idx % stride == 0 {
                    let lifted = basis.lift(&point.state.coeffs);
                    let (full, report) = solve(&model, &lifted, &point.mu, &full_cfg, None);
                    if report.converged {
                        let err = (&lifted - &full.coeffs).norm() / full.coeffs.norm();
                        file.rows[row_idx].rel_error = Some(err);
                        errors.push(err);
                    }
                }
                row_idx += 1;
            }
        }
        if !errors.is_empty() {
            let avg: f64 = errors.iter().sum::<f64>() / errors.len() as f64;
            let max = errors.iter().cloned().fold(0.0_f64, f64::max);
            println!(
                "verification against full order: {} samples, avg error {avg:.3e}, max {max:.3e}",
                errors.len()
            );
        }
    }
    write_diagram(&file, &out.online_csv(), &out.online_json())?;
    io::write_states(
        &out.online_states(),
        basis.dim(),
        diagram
            .branches
            .iter()
            .flat_map(|b| b.points.iter().map(|p| &p.state.coeffs)),
    )?;
    println!(
        "online: {} branches, {} points, {} bifurcation estimate(s)",
        diagram.branches.len(),
        file.rows.len(),
        diagram.bifurcations.len()
    );
    Ok(())
}

pub fn cmd_plot(input: &Path, output: &Path, x_component: usize) -> Result<()> {
    let bytes = std::fs::read(input)
        .with_context(|| format!("cannot read diagram {}", input.display()))?;
    let file = io::deserialize_diagram(&bytes, DiagramFormat::Csv)?;
    let svg = crate::plot::render_svg(&file, x_component);
    std::fs::write(output, svg)?;
    println!("plot: {} -> {}", input.display(), output.display());
    Ok(())
}

/// Self-check battery; returns the number of failures.
pub fn cmd_verify(config: &RunConfig) -> Result<usize> {
    use dfcn_core::deflation::{tau_clamped, TauClampState};
    use dfcn_core::model::fd_jacobian_check;
    use dfcn_core::testing::{deflated_newton_step_dense, QuadraticModel};
    use rand::SeedableRng;
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, name);
        if !ok {
            failures += 1;
        }
    };

    // Jacobian consistency of the configured model at a modest order
    {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (err, name): (f64, &str) = match config.model {
            ModelKind::Pitchfork => {
                let m = PitchforkModel::with_epsilon(config.epsilon);
                let u = DVector::from_element(1, 0.37);
                let v = DVector::from_element(1, 1.0);
                (
                    fd_jacobian_check(&m, &u, &ParameterPoint::scalar(0.4), &v, 1e-6),
                    "jacobian finite-difference check (pitchfork)",
                )
            }
            ModelKind::Channel => {
                let mut cfg = config.clone();
                cfg.order = cfg.order.min(4);
                let m = build_channel(&cfg)?;
                let n = m.dof_count();
                let u = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -0.2..0.2));
                let v = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
                let mu = ParameterPoint::new(vec![0.9, 1.0, 1.0], 0).unwrap();
                (fd_jacobian_check(&m, &u, &mu, &v, 1e-6), "jacobian finite-difference check (channel)")
            }
        };
        check(name, err < 1e-5);
    }

    // tau shortcut against the dense deflated system
    {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut ok = true;
        for _ in 0..20 {
            let n = 5;
            let model = QuadraticModel::<f64>::random(n, &mut rng);
            let mu = ParameterPoint::scalar(0.3);
            let u = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let w = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let known = vec![w];
            let (_, delta) = dfcn_core::nlsolve::newton_step(&model, &u, &mu).unwrap();
            let m = dfcn_core::deflation::m_value(&u, &known, 2).unwrap();
            let g = dfcn_core::deflation::m_gradient(&u, &known, 2).unwrap();
            let tau = dfcn_core::deflation::tau_raw(m, &g, &delta).unwrap();
            let oracle = deflated_newton_step_dense(&model, &u, &mu, &known, 2);
            let rel = (&delta * tau - &oracle).norm() / oracle.norm().max(1e-300);
            ok &= rel < 1e-10;
        }
        check("sherman-morrison tau vs dense deflated newton step", ok);
    }

    // clamp table
    {
        let mut s = TauClampState::<f64>::default();
        let a = tau_clamped(1e-7, &mut s) == 0.6;
        let mut s = TauClampState::<f64>::default();
        let b = tau_clamped(-0.01, &mut s) == -0.4;
        let c = tau_clamped(0.05, &mut s) == 0.6 && s.c == 1.75;
        check("tau clamp table", a && b && c);
    }

    // pod error identity on random snapshots
    {
        use dfcn_core::model::StateVector;
        use dfcn_core::rom::SnapshotMeta;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut snaps = SnapshotSet::new();
        for i in 0..8 {
            let c = DVector::from_fn(40, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            snaps.push(
                Arc::new(StateVector::new(c, "verify")),
                SnapshotMeta {
                    mu: ParameterPoint::scalar(i as f64),
                    branch_id: 0,
                    tolerance: 1e-10,
                },
            );
        }
        let full = pod(&snaps, PodTarget::Dimension(8))?;
        let mut ok = true;
        for dim in 1..8 {
            let b = pod(&snaps, PodTarget::Dimension(dim))?;
            let lhs = pod_projection_error(&snaps, &b, None);
            let rhs: f64 = full.eigenvalues[dim..].iter().sum();
            ok &= (lhs - rhs).abs() <= 1e-10 * full.eigenvalues[0];
        }
        check("pod projection-error identity", ok);
    }

    // condensed solve equals dense solve on an assembled channel system
    {
        let mut cfg = config.clone();
        cfg.order = 3;
        cfg.mesh_file = None;
        let m = build_channel(&cfg)?;
        let mu = ParameterPoint::new(vec![1.0, 1.0, 1.0], 0).unwrap();
        let zero = DVector::zeros(m.dof_count());
        let scfg = SolverConfig::new(1e-8, 100).with_policy(ModePolicy::AlwaysOseen);
        let (state, report) = solve(&m, &zero, &mu, &scfg, None);
        let mut ok = report.converged;
        if ok {
            let res = m.residual(&state.coeffs, &mu);
            ok &= m.norm(&res) <= 1e-8;
            // residual of the reconstructed state through one more linear solve
            let mut lin = m.linearize(&state.coeffs, &mu, LinearizationMode::Newton)?;
            let rhs = lin.direct_rhs();
            let next = lin.solve(&rhs)?;
            let rel = (lin.apply(&next) - &rhs).norm() / rhs.norm().max(1e-300);
            ok &= rel < 1e-10;
        }
        check("static condensation solve on the channel system", ok);
    }

    Ok(failures)
}
