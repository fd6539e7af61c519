//! Transverse-field Ising Hamiltonians as matrix-free operators.
//!
//! Basis convention: computational index `i` stores one spin per bit, and bit
//! `α` equal to 0 means `z_α = +1` (spin up). The ordering is fixed so that
//! CSV output is stable across runs.

pub mod builtins;
mod schedule;

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use schedule::{MonotoneCubic, Schedule};

pub const MAX_QUBITS: usize = 24;

/// Row count above which matrix-vector products are split across threads.
const PARALLEL_DIM: usize = 1 << 12;

/// Spin value `z_α ∈ {+1, -1}` of basis state `index`.
#[inline]
pub fn spin(index: usize, qubit: usize) -> f64 {
    if (index >> qubit) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Problem instance: biases, couplers and per-qubit tunneling amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingInstance {
    pub n_qubits: usize,
    #[serde(rename = "h")]
    pub biases: Vec<f64>,
    /// Unordered pairs `(α, β, J_αβ)` with `α != β`.
    #[serde(rename = "J", default)]
    pub couplers: Vec<(usize, usize, f64)>,
    #[serde(rename = "delta")]
    pub tunneling: Vec<f64>,
}

impl IsingInstance {
    pub fn new(
        n_qubits: usize,
        biases: Vec<f64>,
        couplers: Vec<(usize, usize, f64)>,
        tunneling: Vec<f64>,
    ) -> Result<Self> {
        let inst = Self {
            n_qubits,
            biases,
            couplers,
            tunneling,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::InvalidInstance(format!(
                "n_qubits = {n} must be in 1..={MAX_QUBITS}"
            )));
        }
        if self.biases.len() != n || self.tunneling.len() != n {
            return Err(Error::InvalidInstance(format!(
                "expected {n} biases and {n} tunneling amplitudes, got {} and {}",
                self.biases.len(),
                self.tunneling.len()
            )));
        }
        if self.biases.iter().chain(&self.tunneling).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite bias or tunneling amplitude".into()));
        }
        if self.tunneling.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidInstance("tunneling amplitudes must be nonnegative".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b, j) in &self.couplers {
            if a >= n || b >= n {
                return Err(Error::InvalidInstance(format!(
                    "coupler ({a}, {b}) references a qubit outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidInstance(format!("self-coupling on qubit {a}")));
            }
            if !j.is_finite() {
                return Err(Error::InvalidInstance(format!("non-finite coupler ({a}, {b})")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidInstance(format!("duplicate coupler ({a}, {b})")));
            }
        }
        Ok(())
    }

    /// Parse the key-value instance format:
    ///
    /// ```toml
    /// n_qubits = 2
    /// h = [1.0, 1.0]
    /// delta = [1.0, 1.0]
    /// J = [[0, 1, -1.0]]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let inst: Self = toml::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_toml_string(&self) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = format!(
            "n_qubits = {}\nh = [{}]\ndelta = [{}]\nJ = [\n",
            self.n_qubits,
            fmt(&self.biases),
            fmt(&self.tunneling)
        );
        for &(a, b, j) in &self.couplers {
            out.push_str(&format!("  [{a}, {b}, {j:?}],\n"));
        }
        out.push_str("]\n");
        out
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Classical energy `(1/2) Σ h_α z_α + (1/2) Σ_pairs J_αβ z_α z_β` of a basis state.
    pub fn classical_energy(&self, index: usize) -> f64 {
        let field: f64 = self
            .biases
            .iter()
            .enumerate()
            .map(|(q, h)| h * spin(index, q))
            .sum();
        let coupling: f64 = self
            .couplers
            .iter()
            .map(|&(a, b, j)| j * spin(index, a) * spin(index, b))
            .sum();
        0.5 * (field + coupling)
    }

    pub fn classical_energies(&self) -> Vec<f64> {
        let dim = self.dim();
        if dim >= PARALLEL_DIM {
            (0..dim).into_par_iter().map(|i| self.classical_energy(i)).collect()
        } else {
            (0..dim).map(|i| self.classical_energy(i)).collect()
        }
    }

    /// Index of a product state given `z_α` for every qubit.
    pub fn basis_index(spins: &[i8]) -> usize {
        spins
            .iter()
            .enumerate()
            .filter(|(_, &z)| z < 0)
            .fold(0, |acc, (q, _)| acc | (1 << q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    Driver,
    Problem,
    Combined { s: f64 },
    Derivative { s: f64 },
}

/// Real symmetric operator `Σ_α w_α σ_x^α + c · H_P` acting on `2^N` amplitudes.
#[derive(Debug, Clone)]
pub struct SpinOperator {
    kind: OperatorKind,
    n_qubits: usize,
    flip_weights: Vec<f64>,
    diag_scale: f64,
    classical: Arc<Vec<f64>>,
}

/// Amplitude types an operator can act on.
pub trait Amplitude: Copy + Send + Sync + std::ops::Add<Output = Self> + std::ops::Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn conj(self) -> Self;
    fn times(self, other: Self) -> Complex64;
}

impl Amplitude for f64 {
    fn zero() -> Self {
        0.0
    }
    fn conj(self) -> Self {
        self
    }
    fn times(self, other: Self) -> Complex64 {
        Complex64::new(self * other, 0.0)
    }
}

impl Amplitude for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn times(self, other: Self) -> Complex64 {
        self * other
    }
}

impl SpinOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Coefficient multiplying `σ_x^α`.
    pub fn flip_weights(&self) -> &[f64] {
        &self.flip_weights
    }

    pub fn diagonal(&self, index: usize) -> f64 {
        self.diag_scale * self.classical[index]
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let diag = self
            .classical
            .iter()
            .fold(0.0_f64, |m, e| m.max((self.diag_scale * e).abs()));
        diag + self.flip_weights.iter().map(|w| w.abs()).sum::<f64>()
    }

    /// Rows `[base, base + out.len())` of `H v`. `out.len()` is a power of
    /// two and `base` a multiple of it, so every bit flip maps the block onto
    /// contiguous ranges.
    fn block<T: Amplitude>(&self, base: usize, v: &[T], out: &mut [T]) {
        let len = out.len();
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = v[base + k] * (self.diag_scale * self.classical[base + k]);
        }
        for (q, &w) in self.flip_weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let bit = 1usize << q;
            if bit >= len {
                let src = &v[base ^ bit..(base ^ bit) + len];
                out.iter_mut().zip(src).for_each(|(o, &x)| *o = *o + x * w);
            } else {
                for sub in (0..len).step_by(2 * bit) {
                    let (lo, hi) = out[sub..sub + 2 * bit].split_at_mut(bit);
                    let src_lo = &v[base + sub..base + sub + bit];
                    let src_hi = &v[base + sub + bit..base + sub + 2 * bit];
                    lo.iter_mut().zip(src_hi).for_each(|(o, &x)| *o = *o + x * w);
                    hi.iter_mut().zip(src_lo).for_each(|(o, &x)| *o = *o + x * w);
                }
            }
        }
    }

    /// `w = H v` without materializing `H`.
    pub fn apply<T: Amplitude>(&self, v: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); v.len()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into<T: Amplitude>(&self, v: &[T], out: &mut [T]) -> Result<()> {
        let dim = self.dim();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if out.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: out.len(),
            });
        }
        if dim >= PARALLEL_DIM {
            out.par_chunks_mut(1024)
                .enumerate()
                .for_each(|(c, chunk)| self.block(c * 1024, v, chunk));
        } else {
            self.block(0, v, out);
        }
        Ok(())
    }

    /// Dense row-major matrix; only for small systems and test oracles.
    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        if self.n_qubits > 10 {
            return Err(Error::InvalidArgument(format!(
                "refusing to materialize a {}-qubit operator",
                self.n_qubits
            )));
        }
        let dim = self.dim();
        let mut m = nalgebra::DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = self.diagonal(i);
            for (q, &w) in self.flip_weights.iter().enumerate() {
                m[(i, i ^ (1 << q))] += w;
            }
        }
        Ok(m)
    }

    /// `⟨u|H|v⟩`.
    pub fn matrix_element<T: Amplitude>(&self, u: &[T], v: &[T]) -> Result<Complex64> {
        let hv = self.apply(v)?;
        Ok(inner(u, &hv))
    }
}

/// `⟨u|v⟩`, summed in fixed-size chunks so the result does not depend on the thread count.
pub fn inner<T: Amplitude>(u: &[T], v: &[T]) -> Complex64 {
    debug_assert_eq!(u.len(), v.len());
    let partial = |range: std::ops::Range<usize>| {
        range.fold(Complex64::new(0.0, 0.0), |acc, i| acc + u[i].conj().times(v[i]))
    };
    if u.len() >= PARALLEL_DIM {
        let chunk = 4096;
        let parts: Vec<Complex64> = (0..u.len().div_ceil(chunk))
            .into_par_iter()
            .map(|c| partial(c * chunk..((c + 1) * chunk).min(u.len())))
            .collect();
        parts.into_iter().sum()
    } else {
        partial(0..u.len())
    }
}

/// `⟨u|σ_z^α|v⟩ = Σ_z conj(u_z) z_α v_z`.
pub fn sigma_z_matrix_element<T: Amplitude>(u: &[T], v: &[T], qubit: usize) -> Result<Complex64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    if !u.len().is_power_of_two() || (1usize << qubit) >= u.len() {
        return Err(Error::OutOfRange {
            name: "qubit",
            value: qubit as f64,
            lo: 0.0,
            hi: (u.len().trailing_zeros() as f64) - 1.0,
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..u.len() {
        let t = u[i].conj().times(v[i]);
        if (i >> qubit) & 1 == 0 {
            acc += t;
        } else {
            acc -= t;
        }
    }
    Ok(acc)
}

/// All `⟨u|σ_z^α|v⟩` for real vectors in one pass.
pub fn sigma_z_all(u: &[f64], v: &[f64], n_qubits: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_qubits];
    for i in 0..u.len() {
        let t = u[i] * v[i];
        if t == 0.0 {
            continue;
        }
        for (q, slot) in out.iter_mut().enumerate() {
            if (i >> q) & 1 == 0 {
                *slot += t;
            } else {
                *slot -= t;
            }
        }
    }
    out
}

/// Instance and schedule bundled with the cached classical energies.
#[derive(Debug, Clone)]
pub struct AnnealingHamiltonian {
    instance: IsingInstance,
    schedule: Schedule,
    classical: Arc<Vec<f64>>,
}

impl AnnealingHamiltonian {
    pub fn new(instance: IsingInstance, schedule: Schedule) -> Result<Self> {
        instance.validate()?;
        if let Some(count) = schedule.per_qubit_count() {
            if count != instance.n_qubits {
                return Err(Error::InvalidSchedule(format!(
                    "schedule has {count} per-qubit columns for {} qubits",
                    instance.n_qubits
                )));
            }
        }
        let classical = Arc::new(instance.classical_energies());
        Ok(Self {
            instance,
            schedule,
            classical,
        })
    }

    pub fn instance(&self) -> &IsingInstance {
        &self.instance
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn n_qubits(&self) -> usize {
        self.instance.n_qubits
    }

    pub fn classical(&self) -> &[f64] {
        &self.classical
    }

    fn check_s(s: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRange {
                name: "s",
                value: s,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }

    fn operator(&self, kind: OperatorKind, flip_weights: Vec<f64>, diag_scale: f64) -> SpinOperator {
        SpinOperator {
            kind,
            n_qubits: self.instance.n_qubits,
            flip_weights,
            diag_scale,
            classical: Arc::clone(&self.classical),
        }
    }

    pub fn driver(&self) -> SpinOperator {
        let w = self.instance.tunneling.iter().map(|d| -0.5 * d).collect();
        self.operator(OperatorKind::Driver, w, 0.0)
    }

    pub fn problem(&self) -> SpinOperator {
        self.operator(OperatorKind::Problem, vec![0.0; self.instance.n_qubits], 1.0)
    }

    /// `H_S(s) = A(s) H_D + B(s) H_P`.
    pub fn at(&self, s: f64) -> Result<SpinOperator> {
        Self::check_s(s)?;
        let w = self
            .instance
            .tunneling
            .iter()
            .enumerate()
            .map(|(q, d)| -0.5 * d * self.schedule.a_qubit(q, s))
            .collect();
        Ok(self.operator(OperatorKind::Combined { s }, w, self.schedule.b(s)))
    }

    /// `dH_S/ds = A'(s) H_D + B'(s) H_P`.
    pub fn derivative_at(&self, s: f64) -> Result<SpinOperator> {
        Self::check_s(s)?;
        let w = self
            .instance
            .tunneling
            .iter()
            .enumerate()
            .map(|(q, d)| -0.5 * d * self.schedule.a_qubit_prime(q, s))
            .collect();
        Ok(self.operator(OperatorKind::Derivative { s }, w, self.schedule.b_prime(s)))
    }
}

pub fn hamiltonian_at(instance: &IsingInstance, schedule: &Schedule, s: f64) -> Result<SpinOperator> {
    AnnealingHamiltonian::new(instance.clone(), schedule.clone())?.at(s)
}

pub fn hamiltonian_derivative_at(
    instance: &IsingInstance,
    schedule: &Schedule,
    s: f64,
) -> Result<SpinOperator> {
    AnnealingHamiltonian::new(instance.clone(), schedule.clone())?.derivative_at(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> IsingInstance {
        let h = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = (0..n).map(|_| rng.gen_range(0.2..1.5)).collect();
        let mut j = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.6) {
                    j.push((a, b, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        IsingInstance::new(n, h, j, d).unwrap()
    }

    // Kronecker-product construction, independent of the bit-twiddling matvec.
    fn dense_oracle(inst: &IsingInstance, a: f64, b: f64) -> DMatrix<f64> {
        let n = inst.n_qubits;
        let id = DMatrix::<f64>::identity(2, 2);
        let sx = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let sz = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        // qubit α is bit α, so it is the α-th factor from the right
        let embed = |ops: &[(usize, &DMatrix<f64>)]| {
            let mut m = DMatrix::<f64>::identity(1, 1);
            for q in (0..n).rev() {
                let f = ops.iter().find(|(k, _)| *k == q).map(|(_, o)| *o).unwrap_or(&id);
                m = m.kronecker(f);
            }
            m
        };
        let dim = 1 << n;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for q in 0..n {
            h -= embed(&[(q, &sx)]) * (0.5 * a * inst.tunneling[q]);
            h += embed(&[(q, &sz)]) * (0.5 * b * inst.biases[q]);
        }
        for &(p, q, j) in &inst.couplers {
            h += embed(&[(p, &sz), (q, &sz)]) * (0.5 * b * j);
        }
        h
    }

    #[test]
    fn single_qubit_splitting() {
        let inst = IsingInstance::new(1, vec![0.0], vec![], vec![1.0]).unwrap();
        let op = hamiltonian_at(&inst, &Schedule::constant(1.0, 1.0), 0.3).unwrap();
        let eig = op.to_dense().unwrap().symmetric_eigenvalues();
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] + 0.5).abs() < 1e-14 && (e[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn two_qubit_classical_diagonal() {
        let inst = IsingInstance::new(2, vec![1.0, 1.0], vec![(0, 1, -1.0)], vec![0.0, 0.0]).unwrap();
        let op = hamiltonian_at(&inst, &Schedule::constant(1.0, 1.0), 0.5).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| op.diagonal(i)).collect();
        // index 0: (+,+), 1: (-,+), 2: (+,-), 3: (-,-)
        assert_eq!(diag, vec![0.5, 0.5, 0.5, -1.5]);
    }

    #[test]
    fn zero_driver_is_pure_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 3);
        let sched = Schedule::linear(2.0);
        let ham = AnnealingHamiltonian::new(inst, sched).unwrap();
        let op = ham.at(1.0).unwrap();
        assert!(op.flip_weights().iter().all(|&w| w == 0.0));
        let v: Vec<f64> = (0..8).map(|i| i as f64 - 2.5).collect();
        let w = op.apply(&v).unwrap();
        let p = ham.problem().apply(&v).unwrap();
        for i in 0..8 {
            assert!((w[i] - 2.0 * p[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_schedule_derivative_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 3);
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hd = ham.driver().apply(&v).unwrap();
        let hp = ham.problem().apply(&v).unwrap();
        for &s in &[0.1, 0.5, 0.9] {
            let w = ham.derivative_at(s).unwrap().apply(&v).unwrap();
            for i in 0..8 {
                assert!((w[i] - (hp[i] - hd[i])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn flat_schedule_derivative_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = random_instance(&mut rng, 3);
        let ham = AnnealingHamiltonian::new(inst, Schedule::constant(2.0, 3.0)).unwrap();
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = ham.derivative_at(0.4).unwrap().apply(&v).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tabulated_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = random_instance(&mut rng, 3);
        let sched = Schedule::new(
            vec![0.0, 0.25, 0.5, 0.75, 1.0],
            vec![3.0, 2.0, 0.9, 0.3, 0.0],
            vec![0.0, 0.4, 1.5, 2.6, 3.0],
        )
        .unwrap();
        let ham = AnnealingHamiltonian::new(inst, sched).unwrap();
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-6;
        for &s in &[0.13, 0.41, 0.66] {
            let plus = ham.at(s + h).unwrap().apply(&v).unwrap();
            let minus = ham.at(s - h).unwrap().apply(&v).unwrap();
            let d = ham.derivative_at(s).unwrap().apply(&v).unwrap();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            let err = (0..8)
                .map(|i| ((plus[i] - minus[i]) / (2.0 * h) - d[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-6 * norm, "relative error {} at s={s}", err / norm);
        }
    }

    #[test]
    fn matvec_matches_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = random_instance(&mut rng, 3);
        let sched = Schedule::constant(1.3, 0.7);
        let op = hamiltonian_at(&inst, &sched, 0.5).unwrap();
        let dense = dense_oracle(&inst, 1.3, 0.7);
        let v: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let w = op.apply(&v).unwrap();
        let vr = nalgebra::DVector::from_iterator(8, v.iter().map(|c| c.re));
        let vi = nalgebra::DVector::from_iterator(8, v.iter().map(|c| c.im));
        let (wr, wi) = (&dense * vr, &dense * vi);
        let scale = wr.norm().hypot(wi.norm());
        for i in 0..8 {
            assert!((w[i].re - wr[i]).abs() <= 1e-12 * scale);
            assert!((w[i].im - wi[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn diagonal_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=4 {
            let inst = random_instance(&mut rng, n);
            let op = hamiltonian_at(&inst, &Schedule::constant(0.4, 1.7), 0.2).unwrap();
            let dense = dense_oracle(&inst, 0.4, 1.7);
            for i in 0..1 << n {
                assert!((op.diagonal(i) - dense[(i, i)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn basis_state_eigen_action_without_driver() {
        let inst = IsingInstance::new(3, vec![0.3, -0.2, 0.5], vec![(0, 2, 0.7)], vec![0.0; 3]).unwrap();
        let op = hamiltonian_at(&inst, &Schedule::constant(1.0, 1.0), 0.5).unwrap();
        let mut v = vec![0.0; 8];
        v[0] = 1.0;
        let w = op.apply(&v).unwrap();
        let e = inst.classical_energy(0);
        assert_eq!(w[0], e);
        assert!(w[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sigma_z_elements() {
        let up = [1.0, 0.0];
        assert_eq!(sigma_z_matrix_element(&up, &up, 0).unwrap().re, 1.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [r, r];
        assert!(sigma_z_matrix_element(&plus, &plus, 0).unwrap().norm() < 1e-15);
        assert!(sigma_z_matrix_element(&plus, &plus, 1).is_err());

        // ground state of H = -(Δ/2)σx - (h/2)σz with h = Δ: ⟨σz⟩ = h/Ω0
        let (h, d) = (1.0_f64, 1.0_f64);
        let m = DMatrix::from_row_slice(2, 2, &[-h / 2.0, -d / 2.0, -d / 2.0, h / 2.0]);
        let eig = m.symmetric_eigen();
        let k = if eig.eigenvalues[0] < eig.eigenvalues[1] { 0 } else { 1 };
        let g: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let sz = sigma_z_matrix_element(&g, &g, 0).unwrap().re;
        assert!((sz - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn instance_validation() {
        assert!(IsingInstance::new(2, vec![0.0; 2], vec![(0, 0, 1.0)], vec![1.0; 2]).is_err());
        assert!(IsingInstance::new(2, vec![0.0; 2], vec![(0, 1, 1.0), (1, 0, 1.0)], vec![1.0; 2]).is_err());
        assert!(IsingInstance::new(2, vec![0.0; 2], vec![(0, 2, 1.0)], vec![1.0; 2]).is_err());
        assert!(IsingInstance::new(0, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn instance_file_roundtrip() {
        let text = "n_qubits = 3\nh = [1, -1.0, 0.5]\ndelta = [1.0, 1.0, 0.9]\nJ = [[0, 1, -1], [1, 2, 0.25]]\n";
        let inst = IsingInstance::from_toml_str(text).unwrap();
        assert_eq!(inst.couplers, vec![(0, 1, -1.0), (1, 2, 0.25)]);
        let again = IsingInstance::from_toml_str(&inst.to_toml_string()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn rejects_out_of_range_s() {
        let inst = IsingInstance::new(1, vec![0.0], vec![], vec![1.0]).unwrap();
        assert!(hamiltonian_at(&inst, &Schedule::linear(1.0), 1.5).is_err());
        let op = hamiltonian_at(&inst, &Schedule::linear(1.0), 0.5).unwrap();
        assert!(op.apply(&[1.0; 3]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn apply_is_hermitian(seed in 0u64..1000, s in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=5);
            let inst = random_instance(&mut rng, n);
            let op = hamiltonian_at(&inst, &Schedule::linear(1.0), s).unwrap();
            let dim = 1 << n;
            let rand_vec = |rng: &mut ChaCha8Rng| -> Vec<Complex64> {
                (0..dim).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
            };
            let u = rand_vec(&mut rng);
            let v = rand_vec(&mut rng);
            let uhv = op.matrix_element(&u, &v).unwrap();
            let vhu = op.matrix_element(&v, &u).unwrap();
            let scale = uhv.norm().max(1.0);
            proptest::prop_assert!((uhv - vhu.conj()).norm() <= 1e-12 * scale);
        }
    }
}
