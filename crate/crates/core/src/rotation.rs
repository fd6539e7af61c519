//! Rotation of an anticrossing pair into the basis where their mutual
//! derivative coupling vanishes.
//!
//! With `|1'⟩ = cosΘ|1⟩ + sinΘ|2⟩` and `|2'⟩ = −sinΘ|1⟩ + cosΘ|2⟩` the coupling
//! `⟨2'|d1'/ds⟩ = dΘ/ds + ⟨2|d1/ds⟩` is zero when
//! `dΘ/ds = ⟨2|dH/ds|1⟩/(E₂ − E₁)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bath::BathParams;
use crate::eigensolver::{align_phases, eigenpairs_at, real_dot, EigenBasis, LanczosOptions};
use crate::error::{Error, Result};
use crate::rates::{pair_coefficients, rate_convolution, SubspaceFrame};
use crate::spin_system::AnnealingHamiltonian;

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Continuous extension weights for the fifth-order dense output.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];
/// Fifth-order solution minus embedded fourth-order solution.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct RotationOptions {
    /// Rotated levels `(p, q)`, zero-based, `p < q`.
    pub pair: (usize, usize),
    /// Step acceptance: `|Θ₅ − Θ₄| ≤ abs_tol + rel_tol·|Θ|`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// Largest rotation of either eigenvector within one step (radians).
    pub max_frame_turn: f64,
    pub max_steps: usize,
    pub lanczos: LanczosOptions,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self {
            pair: (0, 1),
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            initial_step: 1e-3,
            max_step: 0.01,
            min_step: 1e-12,
            max_frame_turn: 0.3,
            max_steps: 100_000,
            lanczos: LanczosOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationNode {
    pub s: f64,
    pub theta: f64,
    pub dtheta: f64,
    /// `E_q − E_p`
    pub gap: f64,
    /// Quartic correction `θ²(1−θ)²·bump` to the Hermite cubic on the step
    /// ending at this node.
    pub bump: f64,
}

/// Accepted integration nodes of `Θ(s)` with the stepper's quartic dense output.
/// Before the first node `Θ = Θ(s₀) = 0`; after the last it stays frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationTrack {
    pub pair: (usize, usize),
    pub nodes: Vec<RotationNode>,
    /// The sign of `|q⟩` was reversed so that `Θ` ends nonnegative.
    pub flipped: bool,
    pub rejected_steps: usize,
    /// Rejections caused by the frame-turn limit.
    pub turn_rejections: usize,
    pub evaluations: usize,
}

impl RotationTrack {
    /// A track with `Θ ≡ 0`.
    pub fn zero(pair: (usize, usize), s0: f64, s1: f64) -> Self {
        let node = |s| RotationNode {
            s,
            theta: 0.0,
            dtheta: 0.0,
            gap: f64::NAN,
            bump: 0.0,
        };
        Self {
            pair,
            nodes: vec![node(s0), node(s1)],
            flipped: false,
            rejected_steps: 0,
            turn_rejections: 0,
            evaluations: 0,
        }
    }

    pub fn span(&self) -> (f64, f64) {
        (self.nodes[0].s, self.nodes[self.nodes.len() - 1].s)
    }

    fn locate(&self, s: f64) -> Option<usize> {
        let (lo, hi) = self.span();
        if s < lo || s > hi || self.nodes.len() < 2 {
            return None;
        }
        let i = self.nodes.partition_point(|n| n.s <= s);
        Some(i.clamp(1, self.nodes.len() - 1) - 1)
    }

    fn hermite(&self, i: usize, s: f64) -> (f64, f64) {
        let (a, b) = (&self.nodes[i], &self.nodes[i + 1]);
        let h = b.s - a.s;
        let t = (s - a.s) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let bump = t2 * (1.0 - t) * (1.0 - t);
        let value = h00 * a.theta + h10 * h * a.dtheta + h01 * b.theta + h11 * h * b.dtheta + bump * b.bump;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let dbump = 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / h;
        let slope = d00 * a.theta + d10 * a.dtheta + d01 * b.theta + d11 * b.dtheta + dbump * b.bump;
        (value, slope)
    }

    /// Unclamped `Θ(s)`.
    pub fn theta_raw(&self, s: f64) -> f64 {
        match self.locate(s) {
            Some(i) => self.hermite(i, s).0,
            None if s < self.span().0 => self.nodes[0].theta,
            None => self.nodes[self.nodes.len() - 1].theta,
        }
    }

    /// `Θ(s)` clamped to `[0, π]`.
    pub fn theta_at(&self, s: f64) -> f64 {
        self.theta_raw(s).clamp(0.0, std::f64::consts::PI)
    }

    /// `dΘ/ds` from the dense output; zero outside the integrated span.
    pub fn dtheta_at(&self, s: f64) -> f64 {
        match self.locate(s) {
            Some(i) => self.hermite(i, s).1,
            None => 0.0,
        }
    }

    /// Sign that `⟨q|dH/ds|p⟩/(E_q − E_p)` must have at `s` for the track's
    /// orientation of `|q⟩`. Past the span it continues the last node's sign;
    /// before the span `Θ = 0` and the orientation is immaterial.
    pub fn orientation_at(&self, s: f64) -> f64 {
        let d = self.dtheta_at(s);
        if d != 0.0 {
            return d.signum();
        }
        let last = self.nodes[self.nodes.len() - 1].dtheta;
        if s >= self.span().1 && last != 0.0 {
            last.signum()
        } else {
            0.0
        }
    }

    /// `s` of the largest `dΘ/ds` among the nodes.
    pub fn peak(&self) -> f64 {
        self.nodes
            .iter()
            .max_by(|a, b| a.dtheta.abs().total_cmp(&b.dtheta.abs()))
            .map_or(f64::NAN, |n| n.s)
    }

    pub fn grid(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.s).collect()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.theta.clamp(0.0, std::f64::consts::PI)).collect()
    }
}

/// Eigen-solves along the path, sign-aligned to a reference basis.
struct PairSolver<'a> {
    ham: &'a AnnealingHamiltonian,
    k: usize,
    pair: (usize, usize),
    opts: &'a LanczosOptions,
    evaluations: usize,
}

struct Sample {
    basis: EigenBasis,
    dtheta: f64,
    gap: f64,
}

impl PairSolver<'_> {
    /// Basis at `s` aligned to `reference`, or `None` when either rotated
    /// vector turned by more than `max_turn` relative to it.
    fn sample(&mut self, s: f64, reference: Option<&EigenBasis>, max_turn: f64) -> Result<Option<Sample>> {
        self.evaluations += 1;
        let mut basis = eigenpairs_at(self.ham, s, self.k, self.opts, reference)?;
        if let Some(r) = reference {
            let (aligned, al) = align_phases(r, &basis)?;
            let (p, q) = self.pair;
            if al.overlaps[p] < max_turn.cos() || al.overlaps[q] < max_turn.cos() {
                return Ok(None);
            }
            basis = aligned;
        }
        let (dtheta, gap) = pair_rate(self.ham, &basis, self.pair)?;
        Ok(Some(Sample { basis, dtheta, gap }))
    }
}

/// `⟨q|dH/ds|p⟩/(E_q − E_p)` and the gap.
fn pair_rate(ham: &AnnealingHamiltonian, basis: &EigenBasis, (p, q): (usize, usize)) -> Result<(f64, f64)> {
    let dh = ham.derivative_at(basis.s)?;
    let num = real_dot(&basis.vectors[q], &dh.apply(&basis.vectors[p])?);
    let gap = basis.energies[q] - basis.energies[p];
    let scale = basis.energies.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    if gap.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate {
            s: basis.s,
            m: p,
            n: q,
            gap,
        });
    }
    Ok((num / gap, gap))
}

/// Integrate `dΘ/ds = ⟨q|dH/ds|p⟩/(E_q − E_p)` from `Θ(s0) = 0` to `s1` with
/// an adaptive Dormand–Prince 5(4) stepper. Steps are also rejected when an
/// eigenvector of the pair turns by more than `max_frame_turn`, so the
/// near-delta spike at the anticrossing cannot be stepped over.
pub fn solve_rotation_angle(
    ham: &AnnealingHamiltonian,
    s0: f64,
    s1: f64,
    opts: &RotationOptions,
) -> Result<RotationTrack> {
    let (p, q) = opts.pair;
    if p >= q {
        return Err(Error::InvalidArgument(format!("rotation pair ({p}, {q}) must satisfy p < q")));
    }
    if !(0.0..=1.0).contains(&s0) || !(0.0..=1.0).contains(&s1) || s1 <= s0 {
        return Err(Error::InvalidArgument(format!("rotation window [{s0}, {s1}] is not inside [0, 1]")));
    }
    let mut solver = PairSolver {
        ham,
        k: q + 1,
        pair: opts.pair,
        opts: &opts.lanczos,
        evaluations: 0,
    };
    let first = solver.sample(s0, None, opts.max_frame_turn)?.expect("unreferenced sample");
    let mut nodes = vec![RotationNode {
        s: s0,
        theta: 0.0,
        dtheta: first.dtheta,
        gap: first.gap,
        bump: 0.0,
    }];
    let mut current = first;
    let mut s = s0;
    let mut theta = 0.0;
    let mut h = opts.initial_step.min(opts.max_step).min(s1 - s0);
    let mut rejected = 0;
    let mut turn_rejections = 0;
    let mut after_reject = false;
    let mut steps = 0;
    while s < s1 {
        if steps >= opts.max_steps {
            return Err(Error::StepCollapse { s, step: h });
        }
        steps += 1;
        let last = s1 - s <= h * (1.0 + 1e-12);
        if last {
            h = s1 - s;
        }
        if h < opts.min_step {
            return Err(Error::StepCollapse { s, step: h });
        }
        let mut k = [0.0; 7];
        k[0] = current.dtheta;
        let mut end: Option<Sample> = None;
        let mut turned = false;
        for i in 1..7 {
            let si = if C[i] == 1.0 && last { s1 } else { s + C[i] * h };
            match solver.sample(si, Some(&current.basis), opts.max_frame_turn)? {
                Some(sample) => {
                    k[i] = sample.dtheta;
                    if i == 6 {
                        end = Some(sample);
                    }
                }
                None => {
                    turned = true;
                    break;
                }
            }
        }
        if turned {
            rejected += 1;
            turn_rejections += 1;
            after_reject = true;
            h *= 0.25;
            continue;
        }
        let incr: f64 = (0..6).map(|j| A[6][j] * k[j]).sum::<f64>() * h;
        let err: f64 = ((0..7).map(|j| E[j] * k[j]).sum::<f64>() * h).abs();
        let new_theta = theta + incr;
        let tol = opts.abs_tol + opts.rel_tol * theta.abs().max(new_theta.abs());
        let ratio = err / tol;
        if ratio <= 1.0 {
            let end = end.expect("final stage evaluated");
            s = if last { s1 } else { s + h };
            theta = new_theta;
            nodes.push(RotationNode {
                s,
                theta,
                dtheta: end.dtheta,
                gap: end.gap,
                bump: h * (0..7).map(|j| D[j] * k[j]).sum::<f64>(),
            });
            current = end;
            let cap = if after_reject { 1.0 } else { 5.0 };
            let grow = if ratio == 0.0 { cap } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, cap) };
            h = (h * grow).min(opts.max_step);
            after_reject = false;
        } else {
            rejected += 1;
            after_reject = true;
            h *= (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.5);
        }
    }
    let flipped = theta < 0.0;
    if flipped {
        for n in &mut nodes {
            n.theta = -n.theta;
            n.dtheta = -n.dtheta;
            n.bump = -n.bump;
        }
    }
    Ok(RotationTrack {
        pair: opts.pair,
        nodes,
        flipped,
        rejected_steps: rejected,
        turn_rejections,
        evaluations: solver.evaluations,
    })
}

/// Rotation matrix acting on the retained levels: identity except the
/// `(p, q)` block `[[cosΘ, −sinΘ], [sinΘ, cosΘ]]`, so column `p` is `|p'⟩`.
pub fn rotation_matrix(k: usize, (p, q): (usize, usize), theta: f64) -> DMatrix<f64> {
    let mut r = DMatrix::identity(k, k);
    let (s, c) = theta.sin_cos();
    r[(p, p)] = c;
    r[(q, p)] = s;
    r[(p, q)] = -s;
    r[(q, q)] = c;
    r
}

/// `dR/dΘ` of [`rotation_matrix`].
pub fn rotation_matrix_derivative(k: usize, (p, q): (usize, usize), theta: f64) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(k, k);
    let (s, c) = theta.sin_cos();
    r[(p, p)] = -s;
    r[(q, p)] = c;
    r[(p, q)] = -c;
    r[(q, q)] = -s;
    r
}

/// Rotate levels `(p, q)` of an eigenbasis by `Θ`. Energies become the
/// expectation values `⟨n'|H_S|n'⟩`.
pub fn rotate_pair(basis: &EigenBasis, pair: (usize, usize), theta: f64) -> Result<EigenBasis> {
    let (p, q) = pair;
    if q >= basis.len() || p >= q {
        return Err(Error::InvalidArgument(format!(
            "pair ({p}, {q}) not available in a basis of {} levels",
            basis.len()
        )));
    }
    let (s, c) = theta.sin_cos();
    let mut out = basis.clone();
    let (vp, vq) = (&basis.vectors[p], &basis.vectors[q]);
    out.vectors[p] = vp.iter().zip(vq).map(|(a, b)| c * a + s * b).collect();
    out.vectors[q] = vp.iter().zip(vq).map(|(a, b)| -s * a + c * b).collect();
    let (ep, eq) = (basis.energies[p], basis.energies[q]);
    out.energies[p] = c * c * ep + s * s * eq;
    out.energies[q] = s * s * ep + c * c * eq;
    Ok(out)
}

/// `⟨q'|H_S|p'⟩` computed with the operator.
pub fn rotated_coupling(
    basis: &EigenBasis,
    pair: (usize, usize),
    theta: f64,
    ham: &AnnealingHamiltonian,
) -> Result<f64> {
    let rotated = rotate_pair(basis, pair, theta)?;
    let op = ham.at(basis.s)?;
    let hp = op.apply(&rotated.vectors[pair.0])?;
    Ok(real_dot(&rotated.vectors[pair.1], &hp))
}

/// Orient level `q` of a frame to the track's sign convention and rotate it.
/// The sign of `|q⟩` is fixed by matching `⟨q|dH/ds|p⟩/(E_q − E_p)` to
/// [`RotationTrack::orientation_at`]. Inside the integrated span `dΘ/ds` is the
/// frame's own exact value, so the rotated pair coupling vanishes there.
pub fn rotate_frame(frame: &SubspaceFrame, track: &RotationTrack) -> Result<SubspaceFrame> {
    let (p, q) = track.pair;
    let k = frame.len();
    if q >= k {
        return Err(Error::InvalidArgument(format!("rotation pair ({p}, {q}) needs at least {} levels", q + 1)));
    }
    let gap = frame.h[(q, q)] - frame.h[(p, p)];
    let own = frame.dh[(q, p)] / gap;
    let reference = track.dtheta_at(frame.s);
    let mut oriented = frame.clone();
    if own * track.orientation_at(frame.s) < 0.0 {
        flip_level(&mut oriented, q);
    }
    let (lo, hi) = track.span();
    let inside = frame.s >= lo && frame.s <= hi;
    let dtheta = if inside { own.abs() * reference.signum() } else { 0.0 };
    let theta = track.theta_at(frame.s);
    let r = rotation_matrix(k, track.pair, theta);
    let dr = rotation_matrix_derivative(k, track.pair, theta) * dtheta;
    Ok(oriented.transformed(&r, &dr))
}

fn flip_level(frame: &mut SubspaceFrame, q: usize) {
    let k = frame.len();
    let mut flip = DMatrix::identity(k, k);
    flip[(q, q)] = -1.0;
    *frame = frame.transformed(&flip, &DMatrix::zeros(k, k));
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RotationCheck {
    pub s: f64,
    pub theta: f64,
    pub gap: f64,
    /// `|⟨q'|dp'/ds⟩|` by central differences.
    pub rotated_coupling: f64,
    /// `|⟨q|dp/ds⟩|` by central differences.
    pub unrotated_coupling: f64,
    /// `|⟨q'|H|p'⟩ − (E_q − E_p) sin2Θ/2|`
    pub identity_error: f64,
    /// `|E_p' + E_q' − E_p − E_q|`
    pub trace_error: f64,
    /// `Γ·τ` of the pair in the rotated and unrotated frames.
    pub rotated_gamma_tau: Option<f64>,
    pub unrotated_gamma_tau: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationReport {
    pub points: Vec<RotationCheck>,
    pub max_rotated_coupling: f64,
    pub max_unrotated_coupling: f64,
    pub max_identity_error: f64,
    pub max_trace_error: f64,
    pub max_rotated_gamma_tau: Option<f64>,
    pub max_unrotated_gamma_tau: Option<f64>,
}

impl RotationReport {
    /// Unrotated peak coupling over the largest rotated coupling.
    pub fn suppression(&self) -> f64 {
        self.max_unrotated_coupling / self.max_rotated_coupling.max(f64::MIN_POSITIVE)
    }
}

/// Check the rotated frame on `grid`: central-difference derivative couplings
/// with step `delta`, the rotated tunneling identity, trace preservation and,
/// given a bath and `t_f`, the pair's `Γ·τ` with and without rotation.
pub fn verify_rotation(
    track: &RotationTrack,
    ham: &AnnealingHamiltonian,
    grid: &[f64],
    delta: f64,
    lanczos: &LanczosOptions,
    bath: Option<(&BathParams, f64)>,
) -> Result<RotationReport> {
    let (p, q) = track.pair;
    let k = q + 1;
    let mut points = Vec::with_capacity(grid.len());
    let mut warm: Option<EigenBasis> = None;
    for &s in grid {
        let lo = (s - delta).max(0.0);
        let hi = (s + delta).min(1.0);
        let mid = eigenpairs_at(ham, s, k, lanczos, warm.as_ref())?;
        let below = align_phases(&mid, &eigenpairs_at(ham, lo, k, lanczos, Some(&mid))?)?.0;
        let above = align_phases(&mid, &eigenpairs_at(ham, hi, k, lanczos, Some(&mid))?)?.0;
        // orient |q⟩ as the track does
        let (own, _) = pair_rate(ham, &mid, track.pair)?;
        let flip = own * track.orientation_at(s) < 0.0;
        let orient = |mut b: EigenBasis| {
            if flip {
                b.vectors[q].iter_mut().for_each(|x| *x = -*x);
            }
            b
        };
        let (below, mid_o, above) = (orient(below), orient(mid.clone()), orient(above));
        let fd = |a: &EigenBasis, b: &EigenBasis, c: &EigenBasis| -> f64 {
            let diff: Vec<f64> = c.vectors[p].iter().zip(&a.vectors[p]).map(|(x, y)| x - y).collect();
            real_dot(&b.vectors[q], &diff) / (hi - lo)
        };
        let unrotated = fd(&below, &mid_o, &above).abs();
        let rb = rotate_pair(&below, track.pair, track.theta_at(lo))?;
        let rm = rotate_pair(&mid_o, track.pair, track.theta_at(s))?;
        let ra = rotate_pair(&above, track.pair, track.theta_at(hi))?;
        let rotated = fd(&rb, &rm, &ra).abs();
        let theta = track.theta_at(s);
        let gap = mid.energies[q] - mid.energies[p];
        let t21 = rotated_coupling(&mid_o, track.pair, theta, ham)?;
        let identity_error = (t21 - 0.5 * gap * (2.0 * theta).sin()).abs();
        let trace_error = (rm.energies[p] + rm.energies[q] - mid.energies[p] - mid.energies[q]).abs();
        let (rgt, ugt) = match bath {
            Some((b, t_f)) => {
                let frame = SubspaceFrame::from_basis(&mid, ham, None)?;
                let rotated_frame = rotate_frame(&frame, track)?;
                let gt = |f: &SubspaceFrame| -> Result<f64> {
                    let mut worst = 0.0_f64;
                    for (m, n) in [(p, q), (q, p)] {
                        let pc = pair_coefficients(f, m, n, t_f)?;
                        worst = worst.max(rate_convolution(&pc, b)?.applicability);
                    }
                    Ok(worst)
                };
                (Some(gt(&rotated_frame)?), Some(gt(&frame)?))
            }
            None => (None, None),
        };
        points.push(RotationCheck {
            s,
            theta,
            gap,
            rotated_coupling: rotated,
            unrotated_coupling: unrotated,
            identity_error,
            trace_error,
            rotated_gamma_tau: rgt,
            unrotated_gamma_tau: ugt,
        });
        warm = Some(mid);
    }
    let max = |f: &dyn Fn(&RotationCheck) -> f64| points.iter().map(f).fold(0.0_f64, f64::max);
    let max_opt = |f: &dyn Fn(&RotationCheck) -> Option<f64>| -> Option<f64> {
        points.iter().map(f).try_fold(0.0_f64, |m, x| x.map(|v| m.max(v)))
    };
    Ok(RotationReport {
        max_rotated_coupling: max(&|c| c.rotated_coupling),
        max_unrotated_coupling: max(&|c| c.unrotated_coupling),
        max_identity_error: max(&|c| c.identity_error),
        max_trace_error: max(&|c| c.trace_error),
        max_rotated_gamma_tau: max_opt(&|c| c.rotated_gamma_tau),
        max_unrotated_gamma_tau: max_opt(&|c| c.unrotated_gamma_tau),
        points,
    })
}

/// Analytic `Θ(s)` for one qubit: the ground-state mixing angle of
/// `A(s)·(−Δ/2)σ_x + B(s)·(h/2)σ_z` turns by `(φ(s) − φ(s0))/2` with
/// `tanφ = AΔ/(−Bh)`.
pub fn single_qubit_theta(ham: &AnnealingHamiltonian, s0: f64, s: f64) -> Result<f64> {
    if ham.n_qubits() != 1 {
        return Err(Error::InvalidArgument("closed-form angle needs a single qubit".into()));
    }
    let inst = ham.instance();
    let (h, d) = (inst.biases[0], inst.tunneling[0]);
    let sched = ham.schedule();
    let phi = |s: f64| (sched.a_qubit(0, s) * d).atan2(-sched.b(s) * h);
    Ok(0.5 * (phi(s) - phi(s0)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_system::builtins::lz_toy;
    use crate::spin_system::{IsingInstance, Schedule};

    fn lz() -> AnnealingHamiltonian {
        AnnealingHamiltonian::new(lz_toy(), Schedule::linear(1.0)).unwrap()
    }

    fn tight() -> RotationOptions {
        RotationOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..RotationOptions::default()
        }
    }

    #[test]
    fn flat_schedule_gives_zero_angle() {
        let inst = IsingInstance::new(2, vec![0.3, -0.5], vec![(0, 1, 0.7)], vec![1.0, 0.8]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, Schedule::constant(1.0, 2.0)).unwrap();
        let track = solve_rotation_angle(&ham, 0.1, 0.9, &RotationOptions::default()).unwrap();
        assert!(track.nodes.iter().all(|n| n.theta == 0.0 && n.dtheta == 0.0));
    }

    #[test]
    fn landau_zener_angle_matches_closed_form() {
        let ham = lz();
        let track = solve_rotation_angle(&ham, 0.0, 1.0, &tight()).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..=200 {
            let s = i as f64 / 200.0;
            let exact = single_qubit_theta(&ham, 0.0, s).unwrap();
            worst = worst.max((track.theta_at(s) - exact).abs());
        }
        assert!(worst < 1e-6, "max deviation {worst}");
        let end = track.theta_at(1.0);
        assert!((end - std::f64::consts::FRAC_PI_4).abs() < 1e-6);
    }

    #[test]
    fn rotation_algebra() {
        let ham = lz();
        let basis = eigenpairs_at(&ham, 0.4, 2, &LanczosOptions::default(), None).unwrap();
        let same = rotate_pair(&basis, (0, 1), 0.0).unwrap();
        assert_eq!(same.vectors, basis.vectors);
        let swapped = rotate_pair(&basis, (0, 1), std::f64::consts::FRAC_PI_2).unwrap();
        for i in 0..2 {
            assert!((swapped.vectors[0][i] - basis.vectors[1][i]).abs() < 1e-15);
            assert!((swapped.vectors[1][i] + basis.vectors[0][i]).abs() < 1e-15);
        }
        let gap = basis.energies[1] - basis.energies[0];
        for theta in [0.0, 0.3, std::f64::consts::FRAC_PI_4, 1.2, std::f64::consts::FRAC_PI_2] {
            let r = rotate_pair(&basis, (0, 1), theta).unwrap();
            assert!(r.orthonormality_error() < 1e-12);
            let t = rotated_coupling(&basis, (0, 1), theta, &ham).unwrap();
            assert!((t - 0.5 * gap * (2.0 * theta).sin()).abs() < 1e-8);
            let trace = r.energies[0] + r.energies[1] - basis.energies[0] - basis.energies[1];
            assert!(trace.abs() < 1e-10);
        }
        assert!(rotated_coupling(&basis, (0, 1), 0.0, &ham).unwrap().abs() < 1e-12);
        let t = rotated_coupling(&basis, (0, 1), std::f64::consts::FRAC_PI_4, &ham).unwrap();
        assert!((t - gap / 2.0).abs() < 1e-12);
    }

    #[test]
    fn verified_on_two_levels() {
        let ham = lz();
        let track = solve_rotation_angle(&ham, 0.0, 1.0, &tight()).unwrap();
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        let rep = verify_rotation(&track, &ham, &grid, 1e-5, &LanczosOptions::default(), None).unwrap();
        assert!(rep.max_rotated_coupling < 1e-6, "{}", rep.max_rotated_coupling);
        assert!(rep.max_unrotated_coupling > 0.1);
        assert!(rep.max_identity_error < 1e-8 && rep.max_trace_error < 1e-10);
        // negative control: no rotation leaves the coupling in place
        let zero = RotationTrack::zero((0, 1), 0.0, 1.0);
        let rep0 = verify_rotation(&zero, &ham, &grid, 1e-5, &LanczosOptions::default(), None).unwrap();
        assert!((rep0.max_rotated_coupling - rep0.max_unrotated_coupling).abs() < 1e-12);
    }

    #[test]
    fn rotated_frame_has_no_pair_coupling() {
        let ham = lz();
        let track = solve_rotation_angle(&ham, 0.0, 1.0, &tight()).unwrap();
        for s in [0.2, 0.5, 0.8] {
            let b = eigenpairs_at(&ham, s, 2, &LanczosOptions::default(), None).unwrap();
            let f = SubspaceFrame::from_basis(&b, &ham, Some(1)).unwrap();
            let r = rotate_frame(&f, &track).unwrap();
            assert!(r.coupling[(1, 0)].abs() < 1e-12);
            let theta = track.theta_at(s);
            let gap = f.h[(1, 1)] - f.h[(0, 0)];
            assert!((r.h[(1, 0)] - 0.5 * gap * (2.0 * theta).sin()).abs() < 1e-10);
            let t2: f64 = r.target.iter().map(|x| x * x).sum();
            let t1: f64 = f.target.iter().map(|x| x * x).sum();
            assert!((t1 - t2).abs() < 1e-14);
        }
    }
}
