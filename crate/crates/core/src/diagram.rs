//! Bifurcation diagram data model.

use std::sync::Arc;

use nalgebra::DVector;

use crate::model::{ParameterPoint, StateVector};
use crate::Real;

/// Why a branch stopped being continued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BranchTermination {
    /// Reached the end of the parameter range.
    RangeEnd,
    /// Corrector diverged and retries were exhausted.
    Divergence,
    /// Adaptive step fell below the configured minimum.
    StepUnderflow,
    /// Converged onto an already known branch.
    Merged { into: usize },
    /// Still being continued (only seen on diagrams under construction).
    Active,
}

/// One accepted point on a branch.
#[derive(Debug, Clone)]
pub struct BranchPoint<T: Real> {
    pub mu: ParameterPoint<T>,
    /// Converged state; shared with the snapshot set.
    pub state: Arc<StateVector<T>>,
    /// Scalar diagram output `f(u)`.
    pub output: T,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm accepted by the solver.
    pub residual_norm: T,
    /// Solver tolerance in force when the point was accepted.
    pub tolerance: T,
}

#[derive(Debug, Clone)]
pub struct Branch<T: Real> {
    pub id: usize,
    pub points: Vec<BranchPoint<T>>,
    pub termination: BranchTermination,
}

impl<T: Real> Branch<T> {
    pub fn new(id: usize) -> Self {
        Self { id, points: Vec::new(), termination: BranchTermination::Active }
    }

    /// Point at the given active-parameter value, if the branch has one.
    pub fn point_at(&self, mu_active: T) -> Option<&BranchPoint<T>> {
        self.points.iter().find(|p| p.mu.active_value() == mu_active)
    }
}

/// Estimated critical point: midpoint of the grid interval across which the
/// solution count changed, with the interval width as the uncertainty.
#[derive(Debug, Clone)]
pub struct BifurcationEstimate<T: Real> {
    pub mu_star: T,
    pub uncertainty: T,
    /// Branches that appeared (or vanished) across the interval.
    pub branch_ids: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct BifurcationDiagram<T: Real> {
    pub branches: Vec<Branch<T>>,
    pub bifurcations: Vec<BifurcationEstimate<T>>,
}

impl<T: Real> BifurcationDiagram<T> {
    pub fn new() -> Self {
        Self { branches: Vec::new(), bifurcations: Vec::new() }
    }

    pub fn point_count(&self) -> usize {
        self.branches.iter().map(|b| b.points.len()).sum()
    }

    /// Sorted distinct active-parameter grid values, in sweep order of the
    /// first branch.
    pub fn grid(&self) -> Vec<T> {
        let mut grid: Vec<T> = Vec::new();
        for b in &self.branches {
            for p in &b.points {
                let v = p.mu.active_value();
                if !grid.contains(&v) {
                    grid.push(v);
                }
            }
        }
        // Sweep order is the order of the leading branch; any branch found
        // later only refines the tail, so stable ordering by first occurrence
        // already matches. Re-sort defensively by position along the leader.
        if let Some(first) = self.branches.first() {
            if first.points.len() >= 2 {
                let descending = first.points[1].mu.active_value()
                    < first.points[0].mu.active_value();
                grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if descending {
                    grid.reverse();
                }
            }
        }
        grid
    }

    /// Number of branches holding a point at the given grid value.
    pub fn solutions_at(&self, mu_active: T) -> usize {
        self.branches.iter().filter(|b| b.point_at(mu_active).is_some()).count()
    }
}

/// Default deduplication threshold: `1e-8 * sqrt(dofs)` in the model norm.
pub fn default_dedup_radius<T: Real>(dofs: usize) -> T {
    crate::real::<T>(1e-8) * crate::real::<T>(dofs as f64).sqrt()
}

/// Distance-based identity test for solutions at one parameter value.
///
/// Two states are considered the same solution when their distance is below
/// `max(radius_abs, radius_rel * max(|a|, |b|))`. The absolute radius
/// defaults to [`default_dedup_radius`]; the relative term absorbs the
/// solver-tolerance noise between independent solves of one solution.
pub fn is_duplicate<T: Real>(
    a: &DVector<T>,
    b: &DVector<T>,
    radius_abs: T,
    radius_rel: T,
) -> bool {
    let d = (a - b).norm();
    d <= radius_abs.max(radius_rel * a.norm().max(b.norm()))
}
