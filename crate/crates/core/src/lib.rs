//! Numerical verification kernels for a complex phase-space representation
//! of 1D quantum mechanics.
//!
//! From a wavefunction psi(x, t) the crate builds the complex distribution
//! Q(x, p, t) whose real part acts as a phase-space density, and provides
//! residual evaluators for everything that representation is supposed to
//! satisfy: the nonlocal transport equation for Q, its terminated series
//! (Boltzmann) form, the local-factor wave equation, the hydrodynamic
//! moment laws, and the classical advection limit. A small CLI crate on
//! top of this library drives scenario runs and convergence sweeps.

pub mod error;
pub mod grids;
pub mod kinetics;
pub mod moments;
pub mod phasespace;
pub mod report;
pub mod schrodinger;

pub use error::{Error, Result};
pub use grids::{
    make_grids, spectral_derivative, spectral_derivative_p, to_momentum, to_position,
    MomentumField, MomentumGrid, SpatialField, SpatialGrid,
};
pub use kinetics::{
    boltzmann_series_residual, broadening_estimate, classical_characteristic,
    classical_liouville_evolve, ehrenfest_compare, hbar_scaling_study, local_wave_residual,
    q_transport_residual, BroadeningEstimate, ClassicalField, EhrenfestTrace, HbarScaling,
    SeriesResidual, TransportResidual, HBAR_SI,
};
pub use moments::{
    band_limited_density, classical_moments, continuity_residual, energy_residual,
    momentum_residual, verify_pressure_identity, ClassicalMoments, EnergyResidual, EpsVariant,
};
pub use phasespace::{
    action_form_f, build_q, build_q_via_local, classical_internal_energy,
    effective_potential_avg, local_q, moments, EffectivePotential, LocalQField, NegativityReport,
    PhaseSpaceField, PhaseSpaceMoments,
};
pub use report::{fit_order, ResidualReport};
pub use schrodinger::{
    analytic_state, bohm_decompose, bohm_decompose_at, split_step_evolve, time_derivative,
    AnalyticState, BohmFields, PolynomialPotential, Snapshots, WaveField,
    BOUNDARY_LEAK_THRESHOLD, NORM_TOL, RHO_MIN_FRAC_DEFAULT,
};
