//! Hybrid relaxation rates between states of a retained subspace.
//!
//! `Γ_nm` is the rate of transitions from `|m⟩` into `|n⟩`; the pair data are
//! stored for the ordered pair `(m, n)` with `ω_mn = E_m − E_n`.
//!
//! Polaron shifts of the level energies are not computed: they cancel exactly
//! between the two bath correlators entering the rate.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{BathParams, LineShape};
use crate::eigensolver::{derivative_couplings, EigenBasis};
use crate::error::{Error, Result};
use crate::quadrature::{breakpoints, integrate, QuadOptions};
use crate::spin_system::{sigma_z_all, AnnealingHamiltonian};

/// Pairs with Hamming distance below this use the Redfield branch.
pub const ZERO_HAMMING_GUARD: f64 = 1e-12;

/// Relative quadrature error above which a rate is reported as a failure.
pub const MAX_QUAD_REL_ERROR: f64 = 1e-6;

/// Rates below this (mK) are dynamically irrelevant; their quadrature error is not checked.
pub const NEGLIGIBLE_RATE: f64 = 1e-20;

/// Operators of one anneal point restricted to `K` retained states.
#[derive(Debug, Clone)]
pub struct SubspaceFrame {
    pub s: f64,
    /// `⟨m|H_S|n⟩`
    pub h: DMatrix<f64>,
    /// `⟨m|dH_S/ds|n⟩`
    pub dh: DMatrix<f64>,
    /// `⟨m|σ_z^α|n⟩` for each qubit `α`.
    pub sigma: Vec<DMatrix<f64>>,
    /// `⟨m|dn/ds⟩` per unit `s`.
    pub coupling: DMatrix<f64>,
    /// `⟨target|n⟩` for a computational basis state, if requested.
    pub target: Vec<f64>,
    /// Degenerate pairs whose coupling could not be formed.
    pub flagged: Vec<(usize, usize)>,
}

impl SubspaceFrame {
    /// Restrict the operators at `basis.s` to the eigenbasis.
    pub fn from_basis(basis: &EigenBasis, ham: &AnnealingHamiltonian, target: Option<usize>) -> Result<Self> {
        let k = basis.len();
        let n = ham.n_qubits();
        let dh_op = ham.derivative_at(basis.s)?;
        let dc = derivative_couplings(basis, &dh_op)?;
        let mut sigma = vec![DMatrix::zeros(k, k); n];
        for i in 0..k {
            for j in i..k {
                let z = sigma_z_all(&basis.vectors[i], &basis.vectors[j], n);
                for (q, val) in z.into_iter().enumerate() {
                    sigma[q][(i, j)] = val;
                    sigma[q][(j, i)] = val;
                }
            }
        }
        let target = match target {
            Some(idx) => {
                if idx >= basis.dim() {
                    return Err(Error::InvalidArgument(format!("target state {idx} outside the basis")));
                }
                basis.vectors.iter().map(|v| v[idx]).collect()
            }
            None => Vec::new(),
        };
        Ok(Self {
            s: basis.s,
            h: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&basis.energies)),
            dh: dc.numerators,
            sigma,
            coupling: dc.matrix,
            target,
            flagged: dc.flagged,
        })
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn n_qubits(&self) -> usize {
        self.sigma.len()
    }

    /// `E_n = ⟨n|H_S|n⟩`.
    pub fn energies(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.h[(i, i)]).collect()
    }

    /// Change of basis `|n'⟩ = Σ_m R_mn |m⟩` with `dR/ds` supplied for the
    /// coupling term.
    pub fn transformed(&self, r: &DMatrix<f64>, dr: &DMatrix<f64>) -> Self {
        let rt = r.transpose();
        let conj = |x: &DMatrix<f64>| &rt * x * r;
        Self {
            s: self.s,
            h: symmetrize(conj(&self.h)),
            dh: symmetrize(conj(&self.dh)),
            sigma: self.sigma.iter().map(|x| symmetrize(conj(x))).collect(),
            coupling: antisymmetrize(conj(&self.coupling) + &rt * dr),
            target: if self.target.is_empty() {
                Vec::new()
            } else {
                (0..r.ncols())
                    .map(|n| (0..r.nrows()).map(|m| self.target[m] * r[(m, n)]).sum())
                    .collect()
            },
            flagged: self.flagged.clone(),
        }
    }
}

fn symmetrize(x: DMatrix<f64>) -> DMatrix<f64> {
    (&x + x.transpose()) * 0.5
}

fn antisymmetrize(x: DMatrix<f64>) -> DMatrix<f64> {
    (&x - x.transpose()) * 0.5
}

/// Coefficients of the ordered pair `(m, n)` entering every rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCoefficients {
    pub m: usize,
    pub n: usize,
    /// Hamming distance `Σ(σ_m − σ_n)²`.
    pub a: f64,
    /// `Σ|σ_mn|²`
    pub b: f64,
    /// `Σσ_mn(σ_m − σ_n)`
    pub c: Complex64,
    /// `Σσ_mn(σ_m + σ_n)`
    pub d: Complex64,
    /// `Σ(σ_m² − σ_n²)`, the dephasing phase weight.
    pub sq_diff: f64,
    /// `E_m − E_n`
    pub omega: f64,
    /// `⟨m|H_S|n⟩`
    pub t_mn: Complex64,
    /// `⟨m|ṅ⟩` per unit time.
    pub mdot: f64,
}

impl PairCoefficients {
    /// `T̄_mn = T_mn − i⟨m|ṅ⟩ − d_mn ε` for reorganization energy `eps`.
    pub fn tbar_with(&self, eps: f64) -> Complex64 {
        self.t_mn - Complex64::new(0.0, self.mdot) - self.d * eps
    }

    /// `T̄_mn` with the total reorganization energy of `bath`.
    pub fn tbar(&self, bath: &BathParams) -> Complex64 {
        self.tbar_with(bath.eps_total())
    }

    pub fn zero_hamming(&self) -> bool {
        self.a < ZERO_HAMMING_GUARD
    }

    /// `A_mn = T̄_mn − ω_mn c_mn/a_mn`.
    pub fn a_coeff(&self, bath: &BathParams) -> Complex64 {
        self.tbar(bath) - self.c * (self.omega / self.a)
    }

    /// `B_mn = (a b − |c|²)/a²`, clipped at zero against rounding.
    pub fn b_coeff(&self) -> f64 {
        ((self.a * self.b - self.c.norm_sqr()) / (self.a * self.a)).max(0.0)
    }

    /// `Δ²_mn(ω) = |A_mn|² + B_mn(ω² + W²_mn)`.
    pub fn delta2(&self, bath: &BathParams, omega: f64) -> f64 {
        self.a_coeff(bath).norm_sqr() + self.b_coeff() * (omega * omega + self.a * bath.w2())
    }

    /// Same pair with `m` and `n` exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            m: self.n,
            n: self.m,
            c: -self.c.conj(),
            d: self.d.conj(),
            sq_diff: -self.sq_diff,
            omega: -self.omega,
            t_mn: self.t_mn.conj(),
            mdot: -self.mdot,
            ..*self
        }
    }
}

/// Pair coefficients from a subspace frame; `t_f` converts `⟨m|dn/ds⟩` to a
/// rate per unit time.
pub fn pair_coefficients(frame: &SubspaceFrame, m: usize, n: usize, t_f: f64) -> Result<PairCoefficients> {
    let k = frame.len();
    if m >= k || n >= k || m == n {
        return Err(Error::InvalidArgument(format!("pair ({m}, {n}) invalid for {k} retained states")));
    }
    if !(t_f.is_finite() && t_f > 0.0) {
        return Err(Error::InvalidArgument(format!("t_f must be positive, got {t_f}")));
    }
    if frame.flagged.iter().any(|&(p, q)| (p, q) == (m, n) || (q, p) == (m, n)) {
        return Err(Error::Degenerate {
            s: frame.s,
            m,
            n,
            gap: frame.h[(n, n)] - frame.h[(m, m)],
        });
    }
    let (mut a, mut b, mut c, mut d, mut q) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for sig in &frame.sigma {
        let (sm, sn, smn) = (sig[(m, m)], sig[(n, n)], sig[(m, n)]);
        a += (sm - sn) * (sm - sn);
        b += smn * smn;
        c += smn * (sm - sn);
        d += smn * (sm + sn);
        q += sm * sm - sn * sn;
    }
    Ok(PairCoefficients {
        m,
        n,
        a,
        b,
        c: Complex64::new(c, 0.0),
        d: Complex64::new(d, 0.0),
        sq_diff: q,
        omega: frame.h[(m, m)] - frame.h[(n, n)],
        t_mn: Complex64::new(frame.h[(m, n)], 0.0),
        mdot: frame.coupling[(m, n)] / t_f,
    })
}

/// Pair coefficients straight from an eigenbasis and its couplings.
pub fn pair_coefficients_from_basis(
    basis: &EigenBasis,
    couplings: &crate::eigensolver::DerivativeCouplings,
    n_qubits: usize,
    m: usize,
    n: usize,
    t_f: f64,
) -> Result<PairCoefficients> {
    let k = basis.len();
    let mut sigma = vec![DMatrix::zeros(k, k); n_qubits];
    for (i, j) in [(m, m), (n, n), (m, n)] {
        let z = sigma_z_all(&basis.vectors[i], &basis.vectors[j], n_qubits);
        for (q, val) in z.into_iter().enumerate() {
            sigma[q][(i, j)] = val;
            sigma[q][(j, i)] = val;
        }
    }
    let frame = SubspaceFrame {
        s: basis.s,
        h: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&basis.energies)),
        dh: couplings.numerators.clone(),
        sigma,
        coupling: couplings.matrix.clone(),
        target: Vec::new(),
        flagged: couplings.flagged.clone(),
    };
    pair_coefficients(&frame, m, n, t_f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Convolution,
    TimeDomain,
    Redfield,
    Marcus,
    ZeroHamming,
}

impl RateMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RateMethod::Convolution => "convolution",
            RateMethod::TimeDomain => "time_domain",
            RateMethod::Redfield => "redfield",
            RateMethod::Marcus => "marcus",
            RateMethod::ZeroHamming => "zero_hamming",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// `Γ_nm`, rate from `m` into `n` (mK).
    pub gamma: f64,
    pub method: RateMethod,
    /// Estimated absolute quadrature error (0 for closed forms).
    pub quadrature_error: f64,
    /// `Γ·τ_mn`
    pub applicability: f64,
}

fn finish(pc: &PairCoefficients, bath: &BathParams, gamma: f64, method: RateMethod, err: f64) -> RateResult {
    let mut r = RateResult {
        gamma,
        method,
        quadrature_error: err,
        applicability: 0.0,
    };
    r.applicability = applicability(pc, bath, &r);
    r
}

/// `τ_mn = 1/max(|ω_mn|, W_mn)`.
pub fn correlation_time(pc: &PairCoefficients, bath: &BathParams) -> f64 {
    let inv = pc.omega.abs().max((pc.a.max(0.0) * bath.w2()).sqrt());
    if inv > 0.0 {
        1.0 / inv
    } else {
        f64::INFINITY
    }
}

/// Perturbation parameter `Γ_nm·τ_mn`.
pub fn applicability(pc: &PairCoefficients, bath: &BathParams, rate: &RateResult) -> f64 {
    if rate.gamma == 0.0 {
        return 0.0;
    }
    rate.gamma * correlation_time(pc, bath)
}

/// Redfield rate for pairs at zero Hamming distance: `b_mn S_H(ω_mn)`.
pub fn rate_zero_hamming(pc: &PairCoefficients, bath: &BathParams) -> RateResult {
    finish(pc, bath, pc.b * bath.s_high(pc.omega), RateMethod::ZeroHamming, 0.0)
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-30,
        rel_tol: 1e-10,
        max_intervals: 4000,
    }
}

/// Breakpoints resolving a Lorentzian of width `gamma` centred at 0 and a
/// Gaussian of width `w` centred at `peak`.
fn envelope_points(lo: f64, hi: f64, gamma: f64, peak: f64, w: f64) -> Vec<f64> {
    let mut pts = vec![0.0, peak];
    let mut g = gamma;
    while g > 0.0 && g < hi.abs().max(lo.abs()) {
        pts.extend([-g, g]);
        g *= 10.0;
    }
    for k in [0.5, 1.0, 2.0, 3.0, 5.0, 7.0] {
        pts.extend([peak - k * w, peak + k * w]);
    }
    breakpoints(lo, hi, pts)
}

/// Frequency-domain hybrid rate
/// `Γ_nm = ∫dω/2π Δ²_mn(ω) G^L_mn(ω_mn − ω) G^H_mn(ω)`.
/// Zero-Hamming pairs are routed to [`rate_zero_hamming`].
pub fn rate_convolution(pc: &PairCoefficients, bath: &BathParams) -> Result<RateResult> {
    if pc.zero_hamming() {
        return Ok(rate_zero_hamming(pc, bath));
    }
    let line = bath.line(pc.a)?;
    let t = bath.temperature();
    let w = line.w();
    let peak = pc.omega - line.eps;
    let lorentz = 8.0 * line.gamma + 20.0 * t;
    let lo = (-lorentz).min(peak - 10.0 * w);
    let hi = lorentz.max(peak + 10.0 * w);
    let a2 = pc.a_coeff(bath).norm_sqr();
    let bc = pc.b_coeff();
    let f = |x: f64| {
        let d2 = a2 + bc * (x * x + line.w2);
        d2 * line.gaussian(pc.omega - x) * line.lorentzian(bath, x)
    };
    let pts = envelope_points(lo, hi, line.gamma, peak, w);
    let q = integrate(f, &pts, &quad_opts());
    let gamma = q.value / (2.0 * PI);
    let err = q.error / (2.0 * PI);
    check_quadrature(gamma, err)?;
    Ok(finish(pc, bath, gamma.max(0.0), RateMethod::Convolution, err))
}

fn check_quadrature(value: f64, err: f64) -> Result<()> {
    if !value.is_finite() || err > MAX_QUAD_REL_ERROR * value.abs() && err > NEGLIGIBLE_RATE {
        return Err(Error::Quadrature { value, error: err });
    }
    Ok(())
}

/// `e^{−a f_H(τ)} = [(1 + iω_cτ) sinh(πTτ)/(πTτ)]^{−a η/2π}`.
fn high_frequency_factor(bath: &BathParams, a: f64, tau: f64) -> Complex64 {
    (-bath.f_high(tau) * a).exp()
}

/// Time-domain hybrid rate
/// `Γ_nm = ∫dτ e^{iω_mn τ − a f(τ)} {b f̈ + (T̄ − c g)(T̄* − c* g)}`,
/// truncated at `|τ| = 12/W_mn`.
pub fn rate_time_domain(pc: &PairCoefficients, bath: &BathParams) -> Result<RateResult> {
    if pc.zero_hamming() {
        return Ok(rate_zero_hamming(pc, bath));
    }
    let line = bath.line(pc.a)?;
    let tau_max = 12.0 / line.w();
    let tbar = pc.tbar(bath);
    let f = |tau: f64| {
        let gaussian = Complex64::new(-0.5 * line.w2 * tau * tau, (pc.omega - line.eps) * tau).exp();
        let g = bath.g(tau);
        let x = tbar - pc.c * g;
        let y = tbar.conj() - pc.c.conj() * g;
        gaussian * high_frequency_factor(bath, pc.a, tau) * (bath.f_ddot(tau) * pc.b + x * y)
    };
    let mut pts = vec![0.0];
    let mut s = 1.0 / bath.omega_c();
    while s < tau_max {
        pts.extend([-s, s]);
        s *= 4.0;
    }
    let period = if pc.omega != line.eps { 2.0 * PI / (pc.omega - line.eps).abs() } else { tau_max };
    let per = (tau_max / period).ceil().min(400.0) as usize;
    for k in 1..per {
        let x = k as f64 * tau_max / per as f64;
        pts.extend([-x, x]);
    }
    let pts = breakpoints(-tau_max, tau_max, pts);
    let q = integrate(f, &pts, &quad_opts());
    let value = q.value;
    let err = q.error;
    check_quadrature(value.re, err)?;
    if value.im.abs() > 1e-6 * value.re.abs().max(err) && value.im.abs() > 10.0 * err {
        return Err(Error::Numerical(format!(
            "time-domain rate has imaginary part {:.3e} against real part {:.3e}",
            value.im, value.re
        )));
    }
    Ok(finish(pc, bath, value.re.max(0.0), RateMethod::TimeDomain, err))
}

/// Weak-coupling, narrow-line limit
/// `Γ = Δ²_mn(ω_mn) a S_H(ω_mn)/(ω²_mn + γ²_mn)`; zero-Hamming pairs give
/// `b S_H(ω_mn)`.
pub fn rate_redfield(pc: &PairCoefficients, bath: &BathParams) -> RateResult {
    if pc.zero_hamming() {
        return rate_zero_hamming(pc, bath);
    }
    let line = LineShape {
        a: pc.a,
        eps: pc.a * bath.eps_l(),
        w2: pc.a * bath.w2(),
        eta: pc.a * bath.eta(),
        gamma: 0.5 * pc.a * bath.eta() * bath.temperature(),
    };
    let gamma = pc.delta2(bath, pc.omega) * line.lorentzian(bath, pc.omega);
    finish(pc, bath, gamma, RateMethod::Redfield, 0.0)
}

/// Multiqubit tunneling amplitude of the Marcus limit,
/// `Δ²_mn(0) = (b − |c|²/a) W² + |T_mn − i⟨m|ṅ⟩ − d ε − ω c/a|²`.
/// The reorganization energy is the bath total, which is `ε_L` at `η = 0`.
pub fn marcus_amplitude(pc: &PairCoefficients, bath: &BathParams) -> f64 {
    pc.delta2(bath, 0.0)
}

/// Marcus limit `Γ = Δ²_mn √(2π/W²_mn) exp[−(ω_mn − ε_mn)²/2W²_mn]`.
pub fn rate_marcus(pc: &PairCoefficients, bath: &BathParams) -> Result<RateResult> {
    if pc.zero_hamming() {
        return Err(Error::InvalidArgument(
            "the Marcus limit is undefined at zero Hamming distance".into(),
        ));
    }
    let line = bath.line(pc.a)?;
    let gamma = marcus_amplitude(pc, bath) * line.gaussian(pc.omega);
    Ok(finish(pc, bath, gamma, RateMethod::Marcus, 0.0))
}

/// Single-qubit parameters for `H = −(h/2)σ_z − (Δ/2)σ_x` in its energy basis,
/// pair `(2, 1)` (excited to ground).
pub fn single_qubit_pair(h: f64, delta: f64) -> Result<PairCoefficients> {
    let omega0 = (h * h + delta * delta).sqrt();
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(Error::InvalidArgument("single-qubit splitting must be positive".into()));
    }
    let o2 = omega0 * omega0;
    Ok(PairCoefficients {
        m: 1,
        n: 0,
        a: 4.0 * h * h / o2,
        b: delta * delta / o2,
        c: Complex64::new(-2.0 * h * delta / o2, 0.0),
        d: Complex64::new(0.0, 0.0),
        sq_diff: 0.0,
        omega: omega0,
        t_mn: Complex64::new(0.0, 0.0),
        mdot: 0.0,
    })
}

/// Single-qubit hybrid relaxation rate
/// `Γ = Δ² ∫dω/2π S_H(ω)/(ω² + γ²) √(2π/aW²) exp[−(Ω₀ − ω − aε_L)²/2aW²]`,
/// `a = 4h²/Ω₀²`, `γ = aηT/2`. At `h = 0` the Redfield rate `S_H(Δ)` is returned.
pub fn rate_single_qubit(h: f64, delta: f64, bath: &BathParams) -> Result<RateResult> {
    let pc = single_qubit_pair(h, delta)?;
    if pc.zero_hamming() {
        return Ok(rate_zero_hamming(&pc, bath));
    }
    let line = bath.line(pc.a)?;
    let w = line.w();
    let omega0 = pc.omega;
    let peak = omega0 - line.eps;
    let f = |x: f64| {
        let den = x * x + line.gamma * line.gamma;
        if den == 0.0 {
            return 0.0;
        }
        bath.s_high(x) / den * line.gaussian(omega0 - x)
    };
    let lorentz = 8.0 * line.gamma + 20.0 * bath.temperature();
    let lo = (-lorentz).min(peak - 10.0 * w);
    let hi = lorentz.max(peak + 10.0 * w);
    let q = integrate(f, &envelope_points(lo, hi, line.gamma, peak, w), &quad_opts());
    let gamma = delta * delta * q.value / (2.0 * PI);
    let err = delta * delta * q.error / (2.0 * PI);
    check_quadrature(gamma, err)?;
    Ok(finish(&pc, bath, gamma, RateMethod::Convolution, err))
}

/// Small-`Δ` single-qubit rate: Gaussian line of width `2W` centred at
/// `h − 4ε_L` convolved with a Lorentzian of width `2ηT`,
/// `Γ = Δ² ∫dω/2π S_H(ω)/(ω² + (2S_H(0))²) √(π/2W²) exp[−(h − ω − 4ε_L)²/8W²]`.
pub fn rate_single_qubit_small_delta(h: f64, delta: f64, bath: &BathParams) -> Result<f64> {
    let w = bath.w();
    let gamma = 2.0 * bath.s_high(0.0);
    let center = h - 4.0 * bath.eps_l();
    let f = |x: f64| {
        let d = h - x - 4.0 * bath.eps_l();
        bath.s_high(x) / (x * x + gamma * gamma) * (PI / (2.0 * w * w)).sqrt() * (-d * d / (8.0 * w * w)).exp()
    };
    let width = 2.0 * w;
    let lorentz = 8.0 * gamma + 20.0 * bath.temperature();
    let lo = (-lorentz).min(center - 10.0 * width);
    let hi = lorentz.max(center + 10.0 * width);
    let q = integrate(f, &envelope_points(lo, hi, gamma, center, width), &quad_opts());
    let value = delta * delta * q.value / (2.0 * PI);
    check_quadrature(value, delta * delta * q.error / (2.0 * PI))?;
    Ok(value)
}

/// Coherence `⟨S_m†(t) S_n(t)⟩` between two basis states:
/// `e^{−W²_mn t²/2} e^{iθ_mn(t)} [√(1 + ω_c²t²) sinh(πTt)/(πTt)]^{−η_mn/2π}`.
pub fn dephasing_factor(pc: &PairCoefficients, bath: &BathParams, t: f64) -> Complex64 {
    let a = pc.a.max(0.0);
    let fh = bath.f_high(t);
    let magnitude = (-0.5 * a * bath.w2() * t * t - a * fh.re).exp();
    // Im f − ε t = (η/2π)(atan ω_c t − ω_c t); the ε_L parts cancel
    let wt = bath.omega_c() * t;
    let theta = pc.sq_diff * bath.eta() / (2.0 * PI) * (wt.atan() - wt);
    Complex64::from_polar(magnitude, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::{dense_eigenpairs, derivative_couplings};
    use crate::spin_system::{IsingInstance, Schedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn bath(w: f64, eta: f64, t: f64) -> BathParams {
        BathParams::from_width(w, eta, 8e4, t).unwrap()
    }

    pub(crate) fn random_pair(rng: &mut ChaCha8Rng) -> PairCoefficients {
        let a: f64 = rng.gen_range(0.3..6.0);
        let b: f64 = rng.gen_range(0.0..1.0);
        // |c|² ≤ a b keeps B ≥ 0
        let c: f64 = rng.gen_range(-1.0..1.0) * f64::sqrt(a * b);
        PairCoefficients {
            m: 1,
            n: 0,
            a,
            b,
            c: Complex64::new(c, 0.0),
            d: Complex64::new(rng.gen_range(-0.3..0.3), 0.0),
            sq_diff: rng.gen_range(-1.0..1.0),
            omega: rng.gen_range(-40.0..40.0),
            t_mn: Complex64::new(rng.gen_range(-2.0..2.0), 0.0),
            mdot: rng.gen_range(-0.5..0.5),
        }
    }

    fn frame_for(ham: &AnnealingHamiltonian, s: f64, k: usize) -> SubspaceFrame {
        let basis = dense_eigenpairs(&ham.at(s).unwrap(), k, s).unwrap();
        SubspaceFrame::from_basis(&basis, ham, None).unwrap()
    }

    #[test]
    fn single_qubit_coefficients() {
        // H = −σ_z/2 − σ_x/2 in this crate's sign convention is h = −1
        let inst = IsingInstance::new(1, vec![-1.0], vec![], vec![1.0]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, Schedule::constant(1.0, 1.0)).unwrap();
        let f = frame_for(&ham, 0.5, 2);
        let pc = pair_coefficients(&f, 1, 0, 1.0).unwrap();
        assert!((pc.a - 2.0).abs() < 1e-12);
        assert!((pc.b - 0.5).abs() < 1e-12);
        assert!((pc.c.norm() - 1.0).abs() < 1e-12);
        assert!(pc.d.norm() < 1e-12);
        assert!(pc.b_coeff().abs() < 1e-12);
        let reference = single_qubit_pair(1.0, 1.0).unwrap();
        assert!((reference.a - 2.0).abs() < 1e-15 && (reference.c.re + 1.0).abs() < 1e-15);
    }

    #[test]
    fn classical_pairs() {
        let inst = IsingInstance::new(3, vec![0.31, -0.73, 1.17], vec![(0, 1, 0.41)], vec![0.0; 3]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, Schedule::constant(1.0, 1.0)).unwrap();
        let f = frame_for(&ham, 0.5, 4);
        for m in 0..4 {
            for n in 0..4 {
                if m == n {
                    continue;
                }
                let pc = pair_coefficients(&f, m, n, 1.0).unwrap();
                assert!(pc.b.abs() < 1e-24 && pc.c.norm() < 1e-12);
                let flips = (0..3).filter(|&q| (f.sigma[q][(m, m)] - f.sigma[q][(n, n)]).abs() > 1.0).count();
                assert!((pc.a - 4.0 * flips as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficients_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = crate::eigensolver::tests::random_instance(&mut rng, 3);
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let s = 0.4;
        let basis = dense_eigenpairs(&ham.at(s).unwrap(), 8, s).unwrap();
        let f = SubspaceFrame::from_basis(&basis, &ham, None).unwrap();
        let dc = derivative_couplings(&basis, &ham.derivative_at(s).unwrap()).unwrap();
        // explicit σ_z matrices
        let sz = |q: usize, u: &[f64], v: &[f64]| -> f64 {
            (0..8).map(|i| u[i] * v[i] * if (i >> q) & 1 == 0 { 1.0 } else { -1.0 }).sum()
        };
        for (m, n) in [(0, 1), (2, 5), (7, 3)] {
            let pc = pair_coefficients(&f, m, n, 2.0).unwrap();
            let via_basis = pair_coefficients_from_basis(&basis, &dc, 3, m, n, 2.0).unwrap();
            let (vm, vn) = (&basis.vectors[m], &basis.vectors[n]);
            let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
            for q in 0..3 {
                let (sm, sn, smn) = (sz(q, vm, vm), sz(q, vn, vn), sz(q, vm, vn));
                a += (sm - sn).powi(2);
                b += smn * smn;
                c += smn * (sm - sn);
                d += smn * (sm + sn);
            }
            for p in [pc, via_basis] {
                assert!((p.a - a).abs() < 1e-10 && (p.b - b).abs() < 1e-10);
                assert!((p.c.re - c).abs() < 1e-10 && (p.d.re - d).abs() < 1e-10);
                assert!((p.mdot - dc.get(m, n) / 2.0).abs() < 1e-12);
            }
            // conjugation relations
            let r = pair_coefficients(&f, n, m, 2.0).unwrap();
            assert!((pc.c.conj() + r.c).norm() < 1e-12);
            assert!((pc.d.conj() - r.d).norm() < 1e-12);
            let b0 = bath(2.0, 0.1, 10.0);
            assert!((pc.tbar(&b0).conj() - r.tbar(&b0)).norm() < 1e-12);
            assert!((pc.a_coeff(&b0).conj() - r.a_coeff(&b0)).norm() < 1e-12);
            assert!((pc.b_coeff() - r.b_coeff()).abs() < 1e-12);
            // B from its explicit double-sum form
            let mut sum = 0.0;
            for x in 0..3 {
                for y in 0..3 {
                    let dx = sz(x, vm, vm) - sz(x, vn, vn);
                    let dy = sz(y, vm, vm) - sz(y, vn, vn);
                    sum += (dx * sz(y, vm, vn) - dy * sz(x, vm, vn)).powi(2);
                }
            }
            assert!((pc.b_coeff() - sum / (2.0 * a * a)).abs() < 1e-9);
            let rev = pc.reversed();
            assert!((rev.c - r.c).norm() < 1e-12 && (rev.omega - r.omega).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_detailed_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let pc = random_pair(&mut rng);
            let b = bath(rng.gen_range(0.5..10.0), rng.gen_range(0.01..0.3), rng.gen_range(5.0..40.0));
            let fwd = rate_convolution(&pc, &b).unwrap();
            let back = rate_convolution(&pc.reversed(), &b).unwrap();
            assert!(fwd.gamma > 0.0);
            assert!(rel(back.gamma, (-pc.omega / b.temperature()).exp() * fwd.gamma) < 1e-8);
            let r1 = rate_redfield(&pc, &b).gamma;
            let r2 = rate_redfield(&pc.reversed(), &b).gamma;
            assert!(rel(r2, (-pc.omega / b.temperature()).exp() * r1) < 1e-8);
        }
    }

    #[test]
    fn redfield_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut pc = random_pair(&mut rng);
            pc.omega = rng.gen_range(5.0..40.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let b = bath(1e-3 * pc.omega.abs(), 0.05, 10.0);
            let conv = rate_convolution(&pc, &b).unwrap().gamma;
            let red = rate_redfield(&pc, &b).gamma;
            assert!(rel(conv, red) < 0.01, "conv {conv} red {red}");
        }
    }

    #[test]
    fn marcus_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let mut pc = random_pair(&mut rng);
            let b = bath(rng.gen_range(2.0..10.0), 1e-5, 10.0);
            // within a few line widths of resonance; far tails pick up the
            // algebraic Ohmic tail instead
            let line = b.line(pc.a).unwrap();
            pc.omega = line.eps + rng.gen_range(-2.5..2.5) * line.w();
            let conv = rate_convolution(&pc, &b).unwrap().gamma;
            let mar = rate_marcus(&pc, &b).unwrap().gamma;
            assert!(rel(conv, mar) < 0.01, "conv {conv} marcus {mar}");
        }
    }

    #[test]
    fn zero_hamming_branch() {
        let b = BathParams::from_width(1.0, 0.2, 8e4, 10.0).unwrap();
        let mut pc = single_qubit_pair(1.0, 1.0).unwrap();
        pc.a = 0.0;
        pc.b = 0.3;
        pc.omega = 0.0;
        // S_H(0) = ηT = 2
        let r = rate_convolution(&pc, &b).unwrap();
        assert_eq!(r.method, RateMethod::ZeroHamming);
        assert_eq!(r.gamma, 0.3 * 2.0);
        assert_eq!(rate_redfield(&pc, &b).gamma, 0.6);
        assert!(rate_marcus(&pc, &b).is_err());
    }

    #[test]
    fn redfield_large_gap_forms() {
        let b = bath(1.0, 0.05, 10.0);
        let pc = single_qubit_pair(30.0, 20.0).unwrap();
        let red = rate_redfield(&pc, &b).gamma;
        let omega0 = pc.omega;
        let expect = 20.0f64.powi(2) / omega0.powi(2) * b.s_high(omega0);
        assert!(rel(red, expect) < 1e-3, "{red} vs {expect}");
        assert!(rel(red, pc.b * b.s_high(omega0)) < 1e-3);
    }

    #[test]
    fn single_qubit_forms_agree() {
        let b = bath(3.0, 0.05, 12.0);
        for &(h, d) in &[(10.0, 2.0), (-5.0, 4.0), (30.0, 1.0)] {
            let direct = rate_single_qubit(h, d, &b).unwrap().gamma;
            let conv = rate_convolution(&single_qubit_pair(h, d).unwrap(), &b).unwrap().gamma;
            assert!(rel(direct, conv) < 1e-8, "{direct} vs {conv}");
        }
        assert_eq!(rate_single_qubit(5.0, 0.0, &b).unwrap().gamma, 0.0);
        let h = 20.0;
        let small = rate_single_qubit_small_delta(h, 0.05 * h, &b).unwrap();
        let full = rate_single_qubit(h, 0.05 * h, &b).unwrap().gamma;
        assert!(rel(full, small) < 0.02, "{full} vs {small}");
    }

    #[test]
    fn time_domain_agrees_with_convolution() {
        // agreement needs η_mn ln(ω_c/W_mn)/2π ≪ 1: the Lorentzian envelope
        // drops the weight e^{−a f_H} moves up to frequencies near ω_c
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(eta, wc) in &[(1e-4, 8e4), (0.02, 1e2)] {
            let pc = random_pair(&mut rng);
            let b = BathParams::from_width(pc.omega.abs() * 0.5 + 1.0, eta, wc, 10.0).unwrap();
            let conv = rate_convolution(&pc, &b).unwrap().gamma;
            let time = rate_time_domain(&pc, &b).unwrap().gamma;
            assert!(rel(time, conv) < 0.01, "time {time} conv {conv}");
        }
    }

    #[test]
    fn time_domain_null_integrand() {
        let b = bath(2.0, 0.05, 10.0);
        let mut pc = random_pair(&mut ChaCha8Rng::seed_from_u64(1));
        pc.b = 0.0;
        pc.c = Complex64::new(0.0, 0.0);
        pc.d = Complex64::new(0.0, 0.0);
        pc.t_mn = Complex64::new(0.0, 0.0);
        pc.mdot = 0.0;
        assert_eq!(rate_time_domain(&pc, &b).unwrap().gamma, 0.0);
        assert_eq!(rate_convolution(&pc, &b).unwrap().gamma, 0.0);
    }

    #[test]
    fn dephasing_limits() {
        let b = bath(4.0, 0.1, 10.0);
        let pc = random_pair(&mut ChaCha8Rng::seed_from_u64(2));
        assert!((dephasing_factor(&pc, &b, 0.0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let mut z = pc;
        z.a = 0.0;
        z.sq_diff = 0.0;
        assert!((dephasing_factor(&z, &b, 3.0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let wmn = (pc.a * b.w2()).sqrt();
        assert!(dephasing_factor(&pc, &b, 3.0 / wmn).norm() <= (-4.5f64).exp());
    }

    #[test]
    fn applicability_uses_larger_scale() {
        let b = bath(2.0, 0.1, 10.0);
        let mut pc = single_qubit_pair(3.0, 1.0).unwrap();
        let r = RateResult {
            gamma: 0.5,
            method: RateMethod::Redfield,
            quadrature_error: 0.0,
            applicability: 0.0,
        };
        pc.a = 4.0;
        pc.omega = 1.0;
        assert!((applicability(&pc, &b, &r) - 0.5 / 4.0).abs() < 1e-15);
        pc.omega = -10.0;
        assert!((applicability(&pc, &b, &r) - 0.05).abs() < 1e-15);
        let zero = RateResult { gamma: 0.0, ..r };
        assert_eq!(applicability(&pc, &b, &zero), 0.0);
    }
}
