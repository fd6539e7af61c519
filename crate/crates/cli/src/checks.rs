//! Cross-module invariant checks shared by `validate` and the acceptance
//! suite. Every check is deterministic for a given seed.

use hyqa_core::dynamics::{boltzmann, integrate_anneal, spectral_sweep, AnnealOptions};
use hyqa_core::eigensolver::{
    align_phases, dense_eigenpairs, derivative_couplings, lanczos, real_dot, LanczosOptions,
};
use hyqa_core::quadrature::{integrate, QuadOptions};
use hyqa_core::rates::{
    rate_convolution, rate_marcus, rate_redfield, rate_single_qubit, rate_single_qubit_small_delta,
    rate_time_domain, PairCoefficients, RateMethod,
};
use hyqa_core::rotation::{single_qubit_theta, solve_rotation_angle, verify_rotation, RotationOptions};
use hyqa_core::spin_system::builtins::lz_toy;
use hyqa_core::{AnnealingHamiltonian, BathParams, IsingInstance, Schedule};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Outcome of one check. `value` is the worst observed error (or the
/// achieved factor for lower-bound checks).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    /// Reported only; never fails the suite.
    pub informational: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            informational: false,
            detail: detail.into(),
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            passed: value >= threshold,
            ..Self::at_most(name, value, threshold, detail)
        }
    }

    pub fn info(name: &str, value: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: true,
            value,
            threshold: f64::NAN,
            informational: true,
            detail: detail.into(),
        }
    }

    /// A check that could not be evaluated.
    pub fn errored(name: &str, threshold: f64, err: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            threshold,
            informational: false,
            detail: format!("error: {err}"),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn guard(name: &str, threshold: f64, f: impl FnOnce() -> hyqa_core::Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::errored(name, threshold, e))
}

/// Random pair coefficients with `B ≥ 0` and a nonzero Hamming distance.
pub fn random_pair(rng: &mut ChaCha8Rng) -> PairCoefficients {
    let a: f64 = rng.gen_range(0.3..6.0);
    let b: f64 = rng.gen_range(0.0..1.0);
    let c: f64 = rng.gen_range(-1.0..1.0) * (a * b).sqrt();
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

pub fn random_bath(rng: &mut ChaCha8Rng, omega_c: f64) -> hyqa_core::Result<BathParams> {
    BathParams::from_width(
        rng.gen_range(0.5..10.0),
        rng.gen_range(0.01..0.3),
        omega_c,
        rng.gen_range(5.0..40.0),
    )
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> hyqa_core::Result<IsingInstance> {
    let h = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d = (0..n).map(|_| rng.gen_range(0.3..1.5)).collect();
    let mut j = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.5) {
                j.push((a, b, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    IsingInstance::new(n, h, j, d)
}

/// `Γ(n→m) = e^{−ω_mn/T} Γ(m→n)` for the convolution rate.
pub fn detailed_balance(seed: u64, draws: usize) -> Check {
    const TOL: f64 = 1e-6;
    let name = "detailed_balance";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..draws {
            let pc = random_pair(&mut rng);
            let bath = random_bath(&mut rng, 8e4)?;
            let fwd = rate_convolution(&pc, &bath)?.gamma;
            let back = rate_convolution(&pc.reversed(), &bath)?.gamma;
            worst = worst.max(rel(back, (-pc.omega / bath.temperature()).exp() * fwd));
        }
        Ok(Check::at_most(name, worst, TOL, format!("{draws} random pairs and baths")))
    })
}

/// Convolution against the direct time-domain integral, with `W/|ω|` drawn
/// from `[0.1, 3]` and `η` from `(0, eta_max]`.
pub fn time_domain_agreement(seed: u64, points: usize, eta_max: f64, omega_c: f64) -> Check {
    const TOL: f64 = 0.01;
    let name = "convolution_vs_time_domain";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        let mut worst_at = String::new();
        for _ in 0..points {
            let mut pc = random_pair(&mut rng);
            pc.omega = rng.gen_range(2.0..40.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let ratio = rng.gen_range(0.1..3.0);
            let eta = rng.gen_range(0.0..eta_max).max(1e-3 * eta_max);
            let temperature = rng.gen_range(5.0..40.0);
            let bath = BathParams::from_width(ratio * pc.omega.abs(), eta, omega_c, temperature)?;
            let conv = rate_convolution(&pc, &bath)?.gamma;
            let time = rate_time_domain(&pc, &bath)?.gamma;
            let err = rel(conv, time);
            if err > worst {
                worst = err;
                worst_at = format!("eta={eta:.3e} W/|omega|={ratio:.2} a={:.2}", pc.a);
            }
        }
        Ok(Check::at_most(
            name,
            worst,
            TOL,
            format!("{points} points, eta <= {eta_max}, omega_c = {omega_c}; worst at {worst_at}"),
        ))
    })
}

/// Marcus limit at `η = 10⁻⁵`, near resonance.
pub fn marcus_limit(seed: u64, draws: usize) -> Check {
    const TOL: f64 = 0.01;
    let name = "marcus_limit";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..draws {
            let mut pc = random_pair(&mut rng);
            let bath = BathParams::from_width(rng.gen_range(2.0..10.0), 1e-5, 8e4, rng.gen_range(5.0..40.0))?;
            let line = bath.line(pc.a)?;
            pc.omega = line.eps + rng.gen_range(-2.5..2.5) * line.w();
            let conv = rate_convolution(&pc, &bath)?.gamma;
            let mar = rate_marcus(&pc, &bath)?.gamma;
            worst = worst.max(rel(conv, mar));
        }
        Ok(Check::at_most(name, worst, TOL, format!("{draws} pairs within 2.5 W of resonance")))
    })
}

/// Redfield limit at `W = 10⁻³|ω|` with `ε_L = W²/2T`.
pub fn redfield_limit(seed: u64, draws: usize) -> Check {
    const TOL: f64 = 0.01;
    let name = "redfield_limit";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..draws {
            let mut pc = random_pair(&mut rng);
            pc.omega = rng.gen_range(5.0..40.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let bath = BathParams::from_width(1e-3 * pc.omega.abs(), rng.gen_range(0.01..0.2), 8e4, rng.gen_range(5.0..40.0))?;
            let conv = rate_convolution(&pc, &bath)?.gamma;
            let red = rate_redfield(&pc, &bath).gamma;
            worst = worst.max(rel(conv, red));
        }
        Ok(Check::at_most(name, worst, TOL, format!("{draws} pairs")))
    })
}

/// Pairs at zero Hamming distance return exactly `b·S_H(ω)`.
pub fn zero_hamming(seed: u64, draws: usize) -> Check {
    let name = "zero_hamming_exact";
    guard(name, 0.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        let mut routed = true;
        for _ in 0..draws {
            let mut pc = random_pair(&mut rng);
            pc.a = 0.0;
            pc.c = Complex64::new(0.0, 0.0);
            let bath = random_bath(&mut rng, 8e4)?;
            let r = rate_convolution(&pc, &bath)?;
            routed &= r.method == RateMethod::ZeroHamming;
            worst = worst.max((r.gamma - pc.b * bath.s_high(pc.omega)).abs());
        }
        let mut c = Check::at_most(name, worst, 0.0, format!("{draws} pairs, largest absolute difference"));
        c.passed &= routed;
        Ok(c)
    })
}

/// Hybrid single-qubit rate at `Δ = 0.05 h` against the small-`Δ` closed
/// form, for `h` log-spaced over `[0.5, 50]·W`.
pub fn single_qubit_closed_form(baths: &[BathParams], points: usize) -> Check {
    const TOL: f64 = 0.02;
    let name = "single_qubit_small_delta";
    guard(name, TOL, || {
        let mut worst = 0.0_f64;
        let mut worst_at = String::new();
        for bath in baths {
            for i in 0..points {
                let x = i as f64 / (points - 1).max(1) as f64;
                let h = bath.w() * 0.5 * 100f64.powf(x);
                let full = rate_single_qubit(h, 0.05 * h, bath)?.gamma;
                let closed = rate_single_qubit_small_delta(h, 0.05 * h, bath)?;
                let err = rel(full, closed);
                if err > worst {
                    worst = err;
                    worst_at = format!("h={h:.4} W={} eta={}", bath.w(), bath.eta());
                }
            }
        }
        Ok(Check::at_most(
            name,
            worst,
            TOL,
            format!("{} baths x {points} biases; worst at {worst_at}", baths.len()),
        ))
    })
}

/// Gaussian normalization `∫G dω/2π = 1`.
pub fn gaussian_normalization(seed: u64, draws: usize) -> Check {
    const TOL: f64 = 1e-8;
    let name = "gaussian_normalization";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..draws {
            let bath = random_bath(&mut rng, 8e4)?;
            let line = bath.line(rng.gen_range(0.3..6.0))?;
            let (lo, hi) = (line.eps - 14.0 * line.w(), line.eps + 14.0 * line.w());
            let pts: Vec<f64> = (0..=28).map(|i| lo + (hi - lo) * i as f64 / 28.0).collect();
            let q = integrate(|w| line.gaussian(w), &pts, &QuadOptions::default());
            worst = worst.max((q.value / (2.0 * std::f64::consts::PI) - 1.0).abs());
        }
        Ok(Check::at_most(name, worst, TOL, format!("{draws} random line shapes")))
    })
}

/// `G(ω)/G(−ω) = e^{ω/T}` for the Gaussian and Lorentzian envelopes.
pub fn envelope_balance(seed: u64, points: usize) -> Check {
    const TOL: f64 = 1e-10;
    let name = "envelope_balance";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..points {
            let bath = random_bath(&mut rng, 8e4)?;
            let a = rng.gen_range(0.3..6.0);
            let line = bath.line(a)?;
            let omega = rng.gen_range(-4.0..4.0) * line.w().max(bath.temperature());
            let boltz = (omega / bath.temperature()).exp();
            let g = bath.gaussian_envelope(a, omega)? / bath.gaussian_envelope(a, -omega)?;
            let l = bath.lorentzian_envelope(a, omega)? / bath.lorentzian_envelope(a, -omega)?;
            worst = worst.max(rel(g, boltz)).max(rel(l, boltz));
        }
        Ok(Check::at_most(name, worst, TOL, format!("{points} random frequencies, both envelopes")))
    })
}

/// Lanczos against dense diagonalization for random instances.
pub fn lanczos_vs_dense(seed: u64, instances: usize, max_qubits: usize, k: usize) -> Check {
    const TOL: f64 = 1e-9;
    let name = "lanczos_vs_dense";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        let opts = LanczosOptions {
            seed,
            ..LanczosOptions::default()
        };
        for _ in 0..instances {
            let n = rng.gen_range(4..=max_qubits.max(4));
            let inst = random_instance(&mut rng, n)?;
            let ham = AnnealingHamiltonian::new(inst, Schedule::linear(rng.gen_range(1.0..20.0)))?;
            let s = rng.gen_range(0.05..0.95);
            let op = ham.at(s)?;
            let dense = dense_eigenpairs(&op, k, s)?;
            let lz = lanczos(&op, k, s, &opts, None)?;
            for (a, b) in dense.energies.iter().zip(&lz.energies) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(Check::at_most(
            name,
            worst,
            TOL,
            format!("{instances} instances, 4..={max_qubits} qubits, K = {k}"),
        ))
    })
}

/// Derivative couplings `⟨m|dn/ds⟩` against central differences of the
/// eigenvectors, relative to `max(1, |value|)`.
pub fn couplings_vs_finite_differences(seed: u64, instances: usize, k: usize) -> Check {
    const TOL: f64 = 1e-4;
    const STEP: f64 = 1e-5;
    let name = "derivative_couplings";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        let mut used = 0;
        while used < instances {
            let n = rng.gen_range(2..=6);
            let inst = random_instance(&mut rng, n)?;
            let ham = AnnealingHamiltonian::new(inst, Schedule::linear(rng.gen_range(1.0..20.0)))?;
            let s = rng.gen_range(0.1..0.9);
            let kk = k.min(1 << n);
            let mid = dense_eigenpairs(&ham.at(s)?, kk, s)?;
            // keep the finite-difference error small against the gap scale
            let min_gap = mid.energies.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            if min_gap < 1e-2 {
                continue;
            }
            used += 1;
            let dc = derivative_couplings(&mid, &ham.derivative_at(s)?)?;
            let (lo, _) = align_phases(&mid, &dense_eigenpairs(&ham.at(s - STEP)?, kk, s - STEP)?)?;
            let (hi, _) = align_phases(&mid, &dense_eigenpairs(&ham.at(s + STEP)?, kk, s + STEP)?)?;
            for m in 0..kk {
                for nn in 0..kk {
                    if m == nn {
                        continue;
                    }
                    let fd = (real_dot(&mid.vectors[m], &hi.vectors[nn]) - real_dot(&mid.vectors[m], &lo.vectors[nn]))
                        / (2.0 * STEP);
                    let exact = dc.get(m, nn);
                    worst = worst.max((fd - exact).abs() / exact.abs().max(1.0));
                }
            }
        }
        Ok(Check::at_most(name, worst, TOL, format!("{instances} random instances, K <= {k}")))
    })
}

/// Rotation angle on the Landau-Zener toy against the half mixing angle.
pub fn lz_rotation_angle(points: usize) -> Check {
    const TOL: f64 = 1e-6;
    let name = "lz_rotation_angle";
    guard(name, TOL, || {
        let ham = AnnealingHamiltonian::new(lz_toy(), Schedule::linear(1.0))?;
        let track = solve_rotation_angle(&ham, 0.0, 1.0, &tight_rotation())?;
        let mut worst = 0.0_f64;
        for i in 0..=points {
            let s = i as f64 / points as f64;
            worst = worst.max((track.theta_at(s) - single_qubit_theta(&ham, 0.0, s)?).abs());
        }
        Ok(Check::at_most(name, worst, TOL, format!("{} grid points", points + 1)))
    })
}

/// `⟨q'|H|p'⟩ = (E_q − E_p)/2·sin2Θ` along the Landau-Zener rotation.
pub fn lz_rotated_coupling(points: usize) -> Check {
    const TOL: f64 = 1e-8;
    let name = "rotated_coupling_identity";
    guard(name, TOL, || {
        let ham = AnnealingHamiltonian::new(lz_toy(), Schedule::linear(1.0))?;
        let track = solve_rotation_angle(&ham, 0.0, 1.0, &tight_rotation())?;
        let grid: Vec<f64> = (1..points).map(|i| i as f64 / points as f64).collect();
        let report = verify_rotation(&track, &ham, &grid, 1e-5, &LanczosOptions::default(), None)?;
        Ok(Check::at_most(
            name,
            report.max_identity_error,
            TOL,
            format!("{} grid points", grid.len()),
        ))
    })
}

fn tight_rotation() -> RotationOptions {
    RotationOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        ..RotationOptions::default()
    }
}

/// A 3-qubit toy under a constant schedule.
pub fn frozen_toy() -> hyqa_core::Result<AnnealingHamiltonian> {
    let inst = IsingInstance::new(
        3,
        vec![0.4, -0.3, 0.2],
        vec![(0, 1, 0.5), (1, 2, -0.35)],
        vec![1.0, 0.9, 1.1],
    )?;
    AnnealingHamiltonian::new(inst, Schedule::constant(8.0, 10.0))
}

/// A long anneal under a frozen schedule relaxes to the Boltzmann
/// distribution. Returns the population check and the conservation check.
pub fn frozen_boltzmann(levels: &[usize]) -> [Check; 2] {
    const TOL: f64 = 1e-6;
    const CONSERVATION: f64 = 1e-9;
    let run = || -> hyqa_core::Result<(f64, f64)> {
        let ham = frozen_toy()?;
        let bath = BathParams::from_width(2.0, 0.1, 8e4, 5.0)?;
        let mut worst = 0.0_f64;
        let mut drift = 0.0_f64;
        for &k in levels {
            let opts = AnnealOptions {
                levels: k,
                s_start: 0.2,
                s_end: 0.8,
                rotate: false,
                max_ds: 0.1,
                rel_tol: 1e-10,
                abs_tol: 1e-14,
                ..AnnealOptions::default()
            };
            let sweep = spectral_sweep(&ham, &opts)?;
            let traj = integrate_anneal(&sweep, &bath, 1e7, &opts)?;
            let p = &traj.samples.last().expect("trajectory has samples").p;
            let e = sweep.nodes.last().expect("sweep has nodes").frame.energies();
            let eq = boltzmann(&e, bath.temperature());
            for (pn, qn) in p.iter().zip(&eq) {
                worst = worst.max((pn - qn).abs() / qn.max(1e-6));
            }
            drift = drift.max(traj.max_conservation_error);
        }
        Ok((worst, drift))
    };
    let detail = format!("K in {levels:?}");
    match run() {
        Ok((worst, drift)) => [
            Check::at_most("frozen_boltzmann", worst, TOL, detail.clone()),
            Check::at_most("probability_conservation", drift, CONSERVATION, detail),
        ],
        Err(e) => [
            Check::errored("frozen_boltzmann", TOL, &e),
            Check::errored("probability_conservation", CONSERVATION, &e),
        ],
    }
}

/// How much a representative rate moves when the Ohmic cutoff changes, and
/// the resulting gap between the convolution and time-domain rates.
pub fn cutoff_sensitivity(bath: &BathParams) -> Vec<Check> {
    let run = || -> hyqa_core::Result<Vec<Check>> {
        let mut pc = random_pair(&mut ChaCha8Rng::seed_from_u64(0));
        pc.omega = 2.0 * bath.w().max(1.0);
        let at = |wc: f64| BathParams::new(Some(bath.w()), None, bath.eta(), wc, bath.temperature());
        let base = rate_convolution(&pc, bath)?.gamma;
        let half = rate_convolution(&pc, &at(0.5 * bath.omega_c())?)?.gamma;
        let double = rate_convolution(&pc, &at(2.0 * bath.omega_c())?)?.gamma;
        let time = rate_time_domain(&pc, bath)?.gamma;
        Ok(vec![
            Check::info(
                "eps_high",
                bath.eps_h(),
                format!("eta*omega_c/2pi in mK at omega_c = {}", bath.omega_c()),
            ),
            Check::info(
                "omega_c_sensitivity",
                rel(half, base).max(rel(double, base)),
                "largest relative rate change when omega_c is halved or doubled",
            ),
            Check::info(
                "omega_c_time_domain_gap",
                rel(base, time),
                "relative convolution vs time-domain difference at the configured bath",
            ),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::errored("omega_c_sensitivity", f64::NAN, e)])
}
