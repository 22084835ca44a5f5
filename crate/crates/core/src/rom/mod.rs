//! POD reduced basis: snapshot sets, the correlation operator, plain and
//! weighted POD, projection/lifting, and the error identity
//!
//! `(1/M) sum_i |psi_i - P_N(psi_i)|^2 = sum_{i > N} lambda_i`.

pub mod affine;

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::io::{self, IoError, SnapshotEntry, SnapshotManifest};
use crate::model::{ParameterPoint, StateVector};
use crate::probe::record_full_order_op;
use crate::{real, Real};

pub use affine::{build_reduced_operators, LiftingBlocks, ReducedModel, ReducedOperatorSet};

#[derive(Debug, Error)]
pub enum RomError {
    #[error("snapshot set is empty")]
    EmptySnapshotSet,
    #[error("snapshot lengths are inconsistent")]
    InconsistentDofs,
    #[error("weight matrix is not symmetric positive definite")]
    NotSpd,
    #[error("basis has zero modes")]
    DegenerateBasis,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Per-snapshot provenance.
#[derive(Debug, Clone)]
pub struct SnapshotMeta<T: Real> {
    pub mu: ParameterPoint<T>,
    pub branch_id: usize,
    pub tolerance: T,
}

/// Converged full-order states collected during the offline phase.
#[derive(Debug, Clone, Default)]
pub struct SnapshotSet<T: Real> {
    pub states: Vec<Arc<StateVector<T>>>,
    pub meta: Vec<SnapshotMeta<T>>,
}

impl<T: Real> SnapshotSet<T> {
    pub fn new() -> Self {
        Self { states: Vec::new(), meta: Vec::new() }
    }

    pub fn push(&mut self, state: Arc<StateVector<T>>, meta: SnapshotMeta<T>) {
        self.states.push(state);
        self.meta.push(meta);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dof(&self) -> Result<usize, RomError> {
        let first = self.states.first().ok_or(RomError::EmptySnapshotSet)?.len();
        if self.states.iter().any(|s| s.len() != first) {
            return Err(RomError::InconsistentDofs);
        }
        Ok(first)
    }

    /// Snapshot matrix, one column per snapshot.
    pub fn matrix(&self) -> Result<DMatrix<T>, RomError> {
        let dof = self.dof()?;
        let mut m = DMatrix::zeros(dof, self.len());
        for (j, s) in self.states.iter().enumerate() {
            m.set_column(j, &s.coeffs);
        }
        Ok(m)
    }

    /// Persists states (binary) and the JSON manifest next to each other.
    pub fn save(
        &self,
        states_path: &Path,
        manifest_path: &Path,
        order: usize,
    ) -> Result<(), RomError> {
        let dof = self.dof()?;
        io::write_states(states_path, dof, self.states.iter().map(|s| &s.coeffs))?;
        let manifest = SnapshotManifest {
            space_tag: self.states[0].space_tag.clone(),
            order,
            dof,
            entries: self
                .meta
                .iter()
                .enumerate()
                .map(|(i, m)| SnapshotEntry {
                    index: i,
                    mu: m.mu.values().iter().map(|&v| to_f64(v)).collect(),
                    branch_id: m.branch_id,
                    tolerance: to_f64(m.tolerance),
                })
                .collect(),
        };
        manifest.save(manifest_path)?;
        Ok(())
    }

    pub fn load(states_path: &Path, manifest_path: &Path) -> Result<(Self, usize), RomError> {
        let manifest = SnapshotManifest::load(manifest_path)?;
        let (dof, states) = io::read_states::<T>(states_path)?;
        if dof != manifest.dof || states.len() != manifest.entries.len() {
            return Err(RomError::InconsistentDofs);
        }
        let mut set = Self::new();
        for (coeffs, entry) in states.into_iter().zip(&manifest.entries) {
            let mu_vals: Vec<T> = entry.mu.iter().map(|&v| real(v)).collect();
            set.push(
                Arc::new(StateVector::new(coeffs, manifest.space_tag.clone())),
                SnapshotMeta {
                    mu: ParameterPoint::new(mu_vals, 0).map_err(|_| RomError::InconsistentDofs)?,
                    branch_id: entry.branch_id,
                    tolerance: real(entry.tolerance),
                },
            );
        }
        Ok((set, manifest.order))
    }
}

fn to_f64<T: Real>(x: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap()
}

fn weighted_dot<T: Real>(a: &DVector<T>, b: &DVector<T>, weight: Option<&DMatrix<T>>) -> T {
    match weight {
        Some(w) => a.dot(&(w * b)),
        None => a.dot(b),
    }
}

/// `(1/M)`-scaled Gram matrix of the snapshots in the chosen inner product;
/// its nonzero spectrum is the spectrum of the correlation operator
/// `C(v) = (1/M) sum_i (v, psi_i) psi_i`.
pub fn correlation_operator<T: Real>(
    snapshots: &SnapshotSet<T>,
    weight: Option<&DMatrix<T>>,
) -> Result<DMatrix<T>, RomError> {
    let m = snapshots.len();
    if m == 0 {
        return Err(RomError::EmptySnapshotSet);
    }
    snapshots.dof()?;
    let inv_m = T::one() / real::<T>(m as f64);
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = weighted_dot(&snapshots.states[i].coeffs, &snapshots.states[j].coeffs, weight)
                * inv_m;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Basis-size selection.
#[derive(Debug, Clone, Copy)]
pub enum PodTarget<T: Real> {
    Dimension(usize),
    /// Smallest dimension whose relative eigenvalue tail is below the
    /// tolerance (the error identity makes the tail the squared error).
    EnergyTolerance(T),
}

/// Orthonormal POD modes with the full descending eigenvalue list.
#[derive(Debug, Clone)]
pub struct ReducedBasis<T: Real> {
    /// One column per mode, orthonormal in the construction inner product.
    pub modes: DMatrix<T>,
    /// All correlation eigenvalues, descending (not just the retained ones).
    pub eigenvalues: Vec<T>,
    pub space_tag: String,
}

impl<T: Real> ReducedBasis<T> {
    pub fn dim(&self) -> usize {
        self.modes.ncols()
    }

    pub fn full_dof(&self) -> usize {
        self.modes.nrows()
    }

    /// Reduced coordinates of a full-order (lifting-free) state.
    pub fn project(&self, x: &DVector<T>) -> DVector<T> {
        record_full_order_op();
        self.modes.tr_mul(x)
    }

    /// Full-order homogeneous state of reduced coordinates; the Dirichlet
    /// lifting is added by the full-order model when the field is needed.
    pub fn lift(&self, coords: &DVector<T>) -> DVector<T> {
        record_full_order_op();
        &self.modes * coords
    }

    pub fn save(&self, modes_path: &Path, eigen_path: &Path) -> Result<(), RomError> {
        let cols: Vec<DVector<T>> =
            (0..self.dim()).map(|j| self.modes.column(j).into_owned()).collect();
        io::write_states(modes_path, self.full_dof(), cols.iter())?;
        let eigen: Vec<f64> = self.eigenvalues.iter().map(|&v| to_f64(v)).collect();
        let payload = serde_json::json!({
            "space_tag": self.space_tag,
            "eigenvalues": eigen,
            "dimension": self.dim(),
        });
        std::fs::write(eigen_path, serde_json::to_vec_pretty(&payload).map_err(IoError::from)?)
            .map_err(IoError::from)?;
        Ok(())
    }

    pub fn load(modes_path: &Path, eigen_path: &Path) -> Result<Self, RomError> {
        let (dof, cols) = io::read_states::<T>(modes_path)?;
        let payload: serde_json::Value =
            serde_json::from_slice(&std::fs::read(eigen_path).map_err(IoError::from)?)
                .map_err(IoError::from)?;
        let eigenvalues: Vec<T> = payload["eigenvalues"]
            .as_array()
            .ok_or_else(|| IoError::Malformed("missing eigenvalues".into()))?
            .iter()
            .map(|v| real(v.as_f64().unwrap_or(f64::NAN)))
            .collect();
        let space_tag = payload["space_tag"].as_str().unwrap_or("unknown").to_string();
        let mut modes = DMatrix::zeros(dof, cols.len());
        for (j, c) in cols.iter().enumerate() {
            modes.set_column(j, c);
        }
        Ok(Self { modes, eigenvalues, space_tag })
    }
}

/// POD through the eigendecomposition of the correlation matrix (method of
/// snapshots), followed by re-orthonormalization of the modes.
pub fn pod<T: Real>(
    snapshots: &SnapshotSet<T>,
    target: PodTarget<T>,
) -> Result<ReducedBasis<T>, RomError> {
    pod_weighted_impl(snapshots, None, target)
}

/// POD optimal in the norm induced by an SPD Gram matrix.
pub fn weighted_pod<T: Real>(
    snapshots: &SnapshotSet<T>,
    weight: &DMatrix<T>,
    target: PodTarget<T>,
) -> Result<ReducedBasis<T>, RomError> {
    if weight.clone().cholesky().is_none() {
        return Err(RomError::NotSpd);
    }
    pod_weighted_impl(snapshots, Some(weight), target)
}

fn pod_weighted_impl<T: Real>(
    snapshots: &SnapshotSet<T>,
    weight: Option<&DMatrix<T>>,
    target: PodTarget<T>,
) -> Result<ReducedBasis<T>, RomError> {
    let m = snapshots.len();
    let k = correlation_operator(snapshots, weight)?;
    let eig = k.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let total: T = eigenvalues.iter().fold(T::zero(), |a, &b| a + b.max(T::zero()));
    let floor = real::<T>(1e-12) * eigenvalues.first().copied().unwrap_or(T::zero());
    let rank = eigenvalues.iter().filter(|&&l| l > floor && l > T::zero()).count();
    let requested = match target {
        PodTarget::Dimension(n) => n,
        PodTarget::EnergyTolerance(tol) => {
            let mut n = m;
            let mut tail = T::zero();
            for i in (0..m).rev() {
                tail += eigenvalues[i].max(T::zero());
                if tail > tol * total {
                    n = i + 1;
                    break;
                }
                n = i;
            }
            n.max(1)
        }
    };
    let dim = if requested > rank {
        log::warn!("requested {requested} modes but snapshot rank is {rank}; truncating");
        rank
    } else {
        requested
    };
    if dim == 0 {
        return Err(RomError::DegenerateBasis);
    }

    let psi = snapshots.matrix()?;
    let m_scalar = real::<T>(m as f64);
    let mut modes = DMatrix::zeros(psi.nrows(), dim);
    for (col, &i) in order.iter().take(dim).enumerate() {
        let v = eig.eigenvectors.column(i);
        let scale = T::one() / (m_scalar * eigenvalues[col]).sqrt();
        let mode = &psi * (v * scale);
        modes.set_column(col, &mode);
    }
    // modified Gram-Schmidt pass for numerical orthonormality
    for j in 0..dim {
        for k2 in 0..j {
            let proj = weighted_dot(
                &modes.column(k2).into_owned(),
                &modes.column(j).into_owned(),
                weight,
            );
            let corrected = modes.column(j).into_owned() - modes.column(k2).into_owned() * proj;
            modes.set_column(j, &corrected);
        }
        let col = modes.column(j).into_owned();
        let norm = weighted_dot(&col, &col, weight).sqrt();
        modes.set_column(j, &(col / norm));
    }

    Ok(ReducedBasis { modes, eigenvalues, space_tag: snapshots.states[0].space_tag.clone() })
}

/// Left side of the error identity, computed directly:
/// `(1/M) sum_i |psi_i - P(psi_i)|^2` in the construction norm.
pub fn pod_projection_error<T: Real>(
    snapshots: &SnapshotSet<T>,
    basis: &ReducedBasis<T>,
    weight: Option<&DMatrix<T>>,
) -> T {
    let m = snapshots.len();
    let mut total = T::zero();
    for s in &snapshots.states {
        let x = &s.coeffs;
        let mut px = DVector::zeros(x.len());
        for j in 0..basis.dim() {
            let xi = basis.modes.column(j).into_owned();
            let c = weighted_dot(&xi, x, weight);
            px += xi * c;
        }
        let d = x - px;
        total += weighted_dot(&d, &d, weight);
    }
    total / real::<T>(m as f64)
}
