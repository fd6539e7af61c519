//! Instances shipped with the simulator.

use super::IsingInstance;
use crate::error::{Error, Result};

/// Internal (ring) qubits of the 16-qubit instance, 0-based, in ring order.
pub const DICKSON_INTERNAL: [usize; 8] = [0, 1, 2, 3, 8, 9, 10, 11];
/// External qubits; `DICKSON_EXTERNAL[k]` hangs off `DICKSON_INTERNAL[k]`.
pub const DICKSON_EXTERNAL: [usize; 8] = [4, 5, 6, 7, 12, 13, 14, 15];

/// One qubit, `H = -(A Δ/2) σx + (B h/2) σz`.
pub fn single_qubit(h: f64, delta: f64) -> Result<IsingInstance> {
    IsingInstance::new(1, vec![h], vec![], vec![delta])
}

/// Two-level toy with unit bias and tunneling. Under the linear schedule the
/// mixing angle turns by a quarter period around `s = 1/2`.
pub fn lz_toy() -> IsingInstance {
    IsingInstance::new(1, vec![1.0], vec![], vec![1.0]).expect("static instance")
}

/// The 16-qubit ferromagnetic instance: an 8-cycle of internal qubits with
/// one external qubit pendant on each, `J = -1` on every edge. Internal
/// biases are `-1` except two zero-bias sites, external biases are `+1`.
///
/// `delta_spread` adds a deterministic relative variation
/// `Δ_α = 1 + delta_spread·c_α` with `c_α ∈ [-1, 1]`, which lifts the exact
/// degeneracies of the symmetric instance.
pub fn dickson16(delta_spread: f64) -> Result<IsingInstance> {
    if !(0.0..0.5).contains(&delta_spread) {
        return Err(Error::OutOfRange {
            name: "delta_spread",
            value: delta_spread,
            lo: 0.0,
            hi: 0.5,
        });
    }
    let n = 16;
    let mut h = vec![0.0; n];
    for &q in &DICKSON_INTERNAL {
        h[q] = -1.0;
    }
    h[3] = 0.0;
    h[9] = 0.0;
    for &q in &DICKSON_EXTERNAL {
        h[q] = 1.0;
    }
    let mut couplers = Vec::with_capacity(16);
    for k in 0..8 {
        let (a, b) = (DICKSON_INTERNAL[k], DICKSON_INTERNAL[(k + 1) % 8]);
        couplers.push((a.min(b), a.max(b), -1.0));
    }
    for k in 0..8 {
        couplers.push((DICKSON_INTERNAL[k], DICKSON_EXTERNAL[k], -1.0));
    }
    let delta = (0..n)
        .map(|q| {
            // low-discrepancy offsets in [-1, 1]
            let c = 2.0 * ((q as f64 * 0.618_033_988_749_895 + 0.5).fract()) - 1.0;
            1.0 + delta_spread * c
        })
        .collect();
    IsingInstance::new(n, h, couplers, delta)
}

/// Basis index of the all-spins-down product state, the classical minimum of
/// the 16-qubit instance.
pub fn all_down_index(n_qubits: usize) -> usize {
    (1usize << n_qubits) - 1
}

pub fn by_name(name: &str) -> Result<IsingInstance> {
    match name {
        "single_qubit" => single_qubit(1.0, 1.0),
        "lz_toy" => Ok(lz_toy()),
        "dickson16" => dickson16(DICKSON_DEFAULT_SPREAD),
        other => Err(Error::InvalidInstance(format!(
            "unknown builtin instance {other:?} (expected single_qubit, lz_toy or dickson16)"
        ))),
    }
}

pub const DICKSON_DEFAULT_SPREAD: f64 = 0.02;
