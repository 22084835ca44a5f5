//! JSON run configuration; command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dfcn_core::continuation::ContinuationConfig;
use dfcn_core::deflation::TauClampState;
use dfcn_core::orchestrator::{
    DeflationAttemptBudget, DeflationSchedule, GridRule, SweepPlan,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pitchfork,
    Channel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GridSpec {
    Adaptive,
    FixedStep { value: f64 },
    FixedRelStep { value: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::Adaptive
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Keyword(String),
    Windows { windows: Vec<[f64; 2]> },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::Keyword("every_step".into())
    }
}

fn default_growth() -> f64 {
    1.5
}
fn default_shrink() -> f64 {
    0.5
}
fn default_iter_threshold() -> usize {
    6
}
fn default_max_rel() -> f64 {
    0.02
}
fn default_post_bif() -> f64 {
    0.5
}
fn default_first_step() -> f64 {
    -0.005
}
fn default_delta_s0() -> f64 {
    0.5
}
fn default_delta_s_min() -> f64 {
    1e-9
}
fn default_delta_s_max() -> f64 {
    1e4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationSpec {
    #[serde(default = "default_delta_s0")]
    pub delta_s0: f64,
    #[serde(default = "default_delta_s_min")]
    pub delta_s_min: f64,
    #[serde(default = "default_delta_s_max")]
    pub delta_s_max: f64,
    #[serde(default = "default_growth")]
    pub growth: f64,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default = "default_iter_threshold")]
    pub iter_threshold: usize,
    #[serde(default = "default_max_rel")]
    pub max_rel_param_step: f64,
    #[serde(default = "default_post_bif")]
    pub post_bifurcation_step_fraction: f64,
    #[serde(default = "default_first_step")]
    pub first_step: f64,
}

impl Default for ContinuationSpec {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

fn default_tau_minus() -> f64 {
    -0.4
}
fn default_tau_plus() -> f64 {
    0.6
}
fn default_s_c() -> f64 {
    1.75
}
fn default_p_off() -> u32 {
    1
}
fn default_p_on() -> u32 {
    2
}
fn default_iters_off() -> usize {
    150
}
fn default_iters_on() -> usize {
    300
}
fn default_failures() -> usize {
    1
}
fn default_perturbation() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeflationSpec {
    #[serde(default = "default_tau_minus")]
    pub tau_minus: f64,
    #[serde(default = "default_tau_plus")]
    pub tau_plus: f64,
    #[serde(default = "default_s_c")]
    pub s_c: f64,
    #[serde(default = "default_p_off")]
    pub deflation_power_offline: u32,
    #[serde(default = "default_p_on")]
    pub deflation_power_online: u32,
    #[serde(default = "default_iters_off")]
    pub max_iterations_offline: usize,
    #[serde(default = "default_iters_on")]
    pub max_iterations_online: usize,
    #[serde(default = "default_failures")]
    pub max_consecutive_failures: usize,
    #[serde(default = "default_perturbation")]
    pub perturbation_scale: f64,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

impl Default for DeflationSpec {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodTargetSpec {
    Dimension(usize),
    EnergyTolerance(f64),
}

fn default_pod_target() -> PodTargetSpec {
    PodTargetSpec::EnergyTolerance(1e-10)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PodSpec {
    #[serde(default = "default_pod_target")]
    pub target: PodTargetSpec,
}

impl Default for PodSpec {
    fn default() -> Self {
        Self { target: default_pod_target() }
    }
}

fn default_refine() -> usize {
    20
}
fn default_verify_sample() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineSpec {
    /// Step-size division factor relative to the offline cap rule.
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// Points sampled when `--verify-against-full` is set.
    #[serde(default = "default_verify_sample")]
    pub verify_sample: usize,
    /// s grid of the online sweep (defaults to the offline values).
    #[serde(default)]
    pub s_values: Option<Vec<f64>>,
    /// c_H grid of the online sweep (defaults to the offline values).
    #[serde(default)]
    pub c_h_values: Option<Vec<f64>>,
}

impl Default for OnlineSpec {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

fn default_order() -> usize {
    8
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_ones() -> Vec<f64> {
    vec![1.0]
}
fn default_nu_range() -> [f64; 2] {
    [1.0, 0.3]
}
fn default_dedup_rel() -> f64 {
    1e-5
}
fn default_max_branches() -> usize {
    24
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default = "default_order")]
    pub order: usize,
    /// Pitchfork asymmetry.
    #[serde(default)]
    pub epsilon: f64,
    /// Mesh JSON override for the channel model.
    #[serde(default)]
    pub mesh_file: Option<PathBuf>,
    /// Active-parameter range, swept from the first value to the second.
    #[serde(default = "default_nu_range")]
    pub nu_range: [f64; 2],
    #[serde(default = "default_ones")]
    pub s_values: Vec<f64>,
    #[serde(default = "default_ones")]
    pub c_h_values: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub continuation: ContinuationSpec,
    #[serde(default)]
    pub deflation: DeflationSpec,
    #[serde(default)]
    pub pod: PodSpec,
    #[serde(default)]
    pub online: OnlineSpec,
    #[serde(default = "default_dedup_rel")]
    pub dedup_radius_rel: f64,
    #[serde(default)]
    pub dedup_radius_abs: Option<f64>,
    #[serde(default)]
    pub continue_backward: bool,
    #[serde(default = "default_max_branches")]
    pub max_branches: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    /// Structural validation; failures exit with code 2.
    pub fn validate(&self) -> Result<()> {
        if self.nu_range[0] == self.nu_range[1] {
            bail!("empty parameter range: start equals end");
        }
        if self.model == ModelKind::Channel {
            if self.nu_range[0] <= 0.0 || self.nu_range[1] <= 0.0 {
                bail!("viscosity range must be positive, got {:?}", self.nu_range);
            }
            if self.order < 3 {
                bail!("channel model needs order >= 3");
            }
        }
        if self.s_values.is_empty() || self.c_h_values.is_empty() {
            bail!("s_values and c_h_values must be nonempty");
        }
        if self.tolerance <= 0.0 {
            bail!("tolerance must be positive");
        }
        if let Some(mesh) = &self.mesh_file {
            if !mesh.exists() {
                bail!("mesh file {} does not exist", mesh.display());
            }
        }
        if !(self.deflation.tau_minus < 0.0 && self.deflation.tau_plus > 0.0) {
            bail!("clamp thresholds must straddle zero");
        }
        if self.deflation.s_c <= 1.0 {
            bail!("s_c must exceed one");
        }
        Ok(())
    }

    pub fn continuation_config(&self) -> ContinuationConfig<f64> {
        let c = &self.continuation;
        ContinuationConfig {
            delta_s: c.delta_s0,
            delta_s_min: c.delta_s_min,
            delta_s_max: c.delta_s_max,
            growth: c.growth,
            shrink: c.shrink,
            iteration_threshold: c.iter_threshold,
            max_relative_param_step: c.max_rel_param_step,
            post_bifurcation_step_fraction: c.post_bifurcation_step_fraction,
            first_step: c.first_step,
        }
    }

    pub fn grid_rule(&self) -> GridRule<f64> {
        match &self.grid {
            GridSpec::Adaptive => GridRule::Adaptive,
            GridSpec::FixedStep { value } => GridRule::FixedStep(*value),
            GridSpec::FixedRelStep { value } => GridRule::FixedRelStep(*value),
            GridSpec::Explicit { values } => GridRule::Explicit(values.clone()),
        }
    }

    pub fn schedule(&self) -> Result<DeflationSchedule<f64>> {
        match &self.deflation.schedule {
            ScheduleSpec::Keyword(k) if k == "every_step" => Ok(DeflationSchedule::EveryStep),
            ScheduleSpec::Keyword(k) if k == "never" => Ok(DeflationSchedule::Never),
            ScheduleSpec::Keyword(k) => bail!("unknown deflation schedule `{k}`"),
            ScheduleSpec::Windows { windows } => Ok(DeflationSchedule::Windows(
                windows.iter().map(|w| (w[0], w[1])).collect(),
            )),
        }
    }

    fn clamp(&self) -> TauClampState<f64> {
        TauClampState::new(
            self.deflation.tau_minus,
            self.deflation.tau_plus,
            self.deflation.s_c,
        )
    }

    /// Sweep plan of the offline phase. The secondary grids (s, c_H) apply
    /// to the channel model only.
    pub fn offline_plan(&self) -> Result<SweepPlan<f64>> {
        let mut plan = SweepPlan::new(self.nu_range[0], self.nu_range[1]);
        plan.grid = self.grid_rule();
        plan.schedule = self.schedule()?;
        plan.tolerance = self.tolerance;
        plan.budget = DeflationAttemptBudget {
            max_iterations: self.deflation.max_iterations_offline,
            max_consecutive_failures: self.deflation.max_consecutive_failures,
        };
        plan.deflation_power = self.deflation.deflation_power_offline;
        plan.rng_seed = self.seed;
        plan.perturbation_scale = self.deflation.perturbation_scale;
        plan.dedup_radius_rel = self.dedup_radius_rel;
        plan.dedup_radius_abs = self.dedup_radius_abs;
        plan.continue_backward = self.continue_backward;
        plan.max_branches = self.max_branches;
        plan.clamp = self.clamp();
        if self.model == ModelKind::Channel {
            plan.base_mu = vec![self.nu_range[0], self.s_values[0], self.c_h_values[0]];
            plan.secondary =
                vec![(1, self.s_values.clone()), (2, self.c_h_values.clone())];
        }
        Ok(plan)
    }

    /// Online plan: refined fixed-relative grid, online budgets and power.
    pub fn online_plan(&self) -> Result<SweepPlan<f64>> {
        let mut plan = self.offline_plan()?;
        plan.budget = DeflationAttemptBudget {
            max_iterations: self.deflation.max_iterations_online,
            max_consecutive_failures: self.deflation.max_consecutive_failures,
        };
        plan.deflation_power = self.deflation.deflation_power_online;
        let rel = match self.grid {
            GridSpec::FixedRelStep { value } => value,
            _ => self.continuation.max_rel_param_step,
        };
        plan.grid = GridRule::FixedRelStep(rel / self.online.refine as f64);
        if self.model == ModelKind::Channel {
            let s = self.online.s_values.clone().unwrap_or_else(|| self.s_values.clone());
            let ch =
                self.online.c_h_values.clone().unwrap_or_else(|| self.c_h_values.clone());
            plan.secondary = vec![(1, s), (2, ch)];
        }
        Ok(plan)
    }
}
