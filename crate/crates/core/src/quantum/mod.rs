//! Desk-scale quantum solvers used to validate the semiclassical predictions:
//! 1D Numerov scattering, 2D partial waves, split-step propagation, and
//! Husimi wavefront probes.

pub mod bessel;
pub mod numerov;
pub mod husimi;
pub mod partialwave;
pub mod splitstep;

pub use numerov::{numerov_scattering_1d, Scattering1d};
pub use partialwave::{partial_wave_amplitude, PartialWaveResult};
pub use husimi::{husimi_wavefront, HusimiField, PhaseSpaceWindow};
pub use splitstep::{coherent_state, propagate, GridSpec, GridState, PropagateOpts};
