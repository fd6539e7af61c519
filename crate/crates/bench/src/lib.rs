//! Benchmark fixtures.

use hyqa_core::spin_system::builtins::dickson16;
use hyqa_core::{AnnealingHamiltonian, Schedule};

/// The 16-qubit instance under the linear schedule.
pub fn dickson_hamiltonian() -> AnnealingHamiltonian {
    AnnealingHamiltonian::new(dickson16(0.02).expect("builtin instance"), Schedule::linear(120.0))
        .expect("builtin schedule")
}
