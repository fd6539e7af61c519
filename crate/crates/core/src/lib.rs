//! Dissipative dynamics of quantum annealers under hybrid noise.
//!
//! Energies and temperatures are in millikelvin with `ħ = k_B = 1`; times are
//! in inverse millikelvin.

pub mod bath;
pub mod dynamics;
pub mod eigensolver;
pub mod error;
pub mod quadrature;
pub mod rates;
pub mod rotation;
pub mod spin_system;

pub use bath::{BathParams, LineShape};
pub use error::{Error, Result};
pub use spin_system::{
    hamiltonian_at, hamiltonian_derivative_at, sigma_z_matrix_element, AnnealingHamiltonian,
    IsingInstance, MonotoneCubic, OperatorKind, Schedule, SpinOperator,
};

/// `ħ/k_B` in s·K.
pub const HBAR_OVER_KB: f64 = 7.6382e-12;

/// Duration of one unit of time (`1 mK⁻¹`) in seconds.
pub const TIME_UNIT_S: f64 = HBAR_OVER_KB * 1e3;

/// Anneal duration in milliseconds to dimensionless `t_f` in mK⁻¹.
pub fn ms_to_time_units(ms: f64) -> f64 {
    ms * 1e-3 / TIME_UNIT_S
}

pub fn time_units_to_ms(t: f64) -> f64 {
    t * TIME_UNIT_S * 1e3
}
