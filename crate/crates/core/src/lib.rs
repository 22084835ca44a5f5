//! Bifurcation diagrams of nonlinear parametric PDE systems.
//!
//! The crate combines four pieces:
//!
//! * a damped Newton/Oseen solver with a Sherman-Morrison deflation hook
//!   ([`nlsolve`], [`deflation`]),
//! * simple and pseudo-arclength continuation with a bordered corrector
//!   ([`continuation`]),
//! * a 2D quadrilateral spectral-element discretization of the steady
//!   incompressible Navier-Stokes equations with two-level static
//!   condensation ([`sem`], [`models`]),
//! * a POD reduced basis with affine-decomposed projected operators for the
//!   online phase ([`rom`]).
//!
//! The [`orchestrator`] module ties these together into offline (full order)
//! and online (reduced order) deflated-continuation sweeps that produce
//! [`diagram::BifurcationDiagram`]s and snapshot sets.
//!
//! All numerical kernels are generic over the scalar type through the
//! [`Real`] trait; the crate root exports `f64` aliases for the common types.

pub mod continuation;
pub mod deflation;
pub mod diagram;
pub mod io;
pub mod model;
pub mod models;
pub mod nlsolve;
pub mod orchestrator;
pub mod probe;
pub mod rom;
pub mod sem;
pub mod testing;

/// Scalar type of the numerical kernels: `f32` or `f64`.
///
/// `nalgebra::RealField` supplies the field operations and the dense linear
/// algebra; the `num_traits` casts move literals and persisted values in and
/// out of the working precision.
pub trait Real:
    nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
}

impl<T> Real for T where
    T: nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy
{
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal not representable in scalar type")
}

pub use model::{LinearizationMode, LinearizedSystem, ParameterPoint, ProblemModel, StateVector};

// Concrete aliases for the default double-precision build.
pub type ParameterPointF64 = model::ParameterPoint<f64>;
pub type StateVectorF64 = model::StateVector<f64>;
pub type BranchF64 = diagram::Branch<f64>;
pub type BifurcationDiagramF64 = diagram::BifurcationDiagram<f64>;
pub type SnapshotSetF64 = rom::SnapshotSet<f64>;
pub type ReducedBasisF64 = rom::ReducedBasis<f64>;
pub type ChannelModelF64 = models::ChannelModel<f64>;
pub type PitchforkModelF64 = models::PitchforkModel<f64>;
