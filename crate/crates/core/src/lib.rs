//! Classical and quantum numerics for scattering at barrier-top energies.
//!
//! The classical side integrates Hamiltonian trajectories of
//! `p(x, xi) = |xi|^2/2 + V(x)` for short-range barrier potentials, extracts
//! incoming/outgoing asymptotic data, samples the stable and unstable
//! manifolds of the hyperbolic fixed point, and assembles the leading-order
//! semiclassical scattering amplitude (regularity determinant, modified
//! actions, Maslov indices). The quantum side provides independent
//! desk-scale validators: a 1D Numerov transmission solver, a 2D
//! partial-wave solver, split-step wave-packet propagation, and
//! Husimi/wavefront probes.

pub mod amplitude;
pub mod assumptions;
pub mod asymptotic;
pub mod error;
pub mod flow;
pub mod manifold;
pub mod potential;
pub mod quantum;
pub mod symplectic;
pub mod util;

pub use assumptions::{linearization, validate_assumptions, AssumptionReport, Linearization};
pub use error::{Error, Result};
pub use flow::{flow, flow_with_variational, FlowOpts, PhasePoint, TrajectorySegment};
pub use potential::{EnergySpec, ModelConfig, PotentialKind, PotentialModel};
