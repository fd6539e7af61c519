//! Lowest eigenpairs of the instantaneous Hamiltonian and derivative couplings.
//!
//! The Lanczos path uses full reorthogonalization and explicit locking: each
//! Krylov run locks the converged lowest Ritz pairs, the next run works in the
//! orthogonal complement. A final verification run from a random start guards
//! against levels the warm start missed, and a Rayleigh–Ritz step on the
//! locked set separates near-degenerate pairs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spin_system::{AnnealingHamiltonian, SpinOperator};

pub const MAX_LEVELS: usize = 32;
/// Largest qubit count for the dense path.
pub const DENSE_MAX_QUBITS: usize = 10;
/// Relative gap below which derivative couplings are not formed.
pub const DEGENERACY_GUARD: f64 = 1e-14;

const PAR_DIM: usize = 1 << 12;
const CHUNK: usize = 4096;

fn dot(u: &[f64], v: &[f64]) -> f64 {
    if u.len() >= PAR_DIM {
        let parts: Vec<f64> = u
            .par_chunks(CHUNK)
            .zip(v.par_chunks(CHUNK))
            .map(|(a, b)| dot_serial(a, b))
            .collect();
        parts.into_iter().sum()
    } else {
        dot_serial(u, v)
    }
}

/// Eight independent accumulators so the loop vectorizes.
fn dot_serial(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (uc, ur) = (u.chunks_exact(8), u.chunks_exact(8).remainder());
    let vr = v.chunks_exact(8).remainder();
    for (a, b) in uc.zip(v.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let tail: f64 = ur.iter().zip(vr).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if y.len() >= PAR_DIM {
        y.par_chunks_mut(CHUNK)
            .zip(x.par_chunks(CHUNK))
            .for_each(|(yc, xc)| yc.iter_mut().zip(xc).for_each(|(a, b)| *a += alpha * b));
    } else {
        y.iter_mut().zip(x).for_each(|(a, b)| *a += alpha * b);
    }
}

fn scale(alpha: f64, v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x *= alpha);
}

const BLOCK: usize = 2048;

/// One blocked sweep: `w -= Σ c_i v_i` (missing `c_i` read as zero), then
/// `⟨v_i, w⟩` for every vector and `‖w‖²`. Per-block partials are summed in
/// block order, so results do not depend on the thread count.
fn sweep(w: &mut [f64], vs: &[&[f64]], c: &[f64]) -> (Vec<f64>, f64) {
    let n = vs.len();
    let work = |start: usize, wb: &mut [f64]| -> Vec<f64> {
        let len = wb.len();
        for (v, &ci) in vs.iter().zip(c) {
            if ci != 0.0 {
                let vb = &v[start..start + len];
                wb.iter_mut().zip(vb).for_each(|(x, y)| *x -= ci * y);
            }
        }
        let mut out = Vec::with_capacity(n + 1);
        for v in vs {
            out.push(dot_serial(&v[start..start + len], wb));
        }
        out.push(dot_serial(wb, wb));
        out
    };
    let partials: Vec<Vec<f64>> = if w.len() >= PAR_DIM {
        w.par_chunks_mut(BLOCK)
            .enumerate()
            .map(|(b, wb)| work(b * BLOCK, wb))
            .collect()
    } else {
        vec![work(0, w)]
    };
    let mut total = vec![0.0; n + 1];
    for p in partials {
        total.iter_mut().zip(p).for_each(|(t, x)| *t += x);
    }
    let nn = total.pop().unwrap_or(0.0);
    (total, nn)
}

/// Orthogonalize `w` against `locked` and `basis`, given the already known
/// coefficients on `basis`. Returns the final norm.
fn reorthogonalize(w: &mut [f64], locked: &[Vec<f64>], basis: &[Vec<f64>], known: &[f64]) -> f64 {
    let vs: Vec<&[f64]> = locked.iter().chain(basis).map(Vec::as_slice).collect();
    if vs.is_empty() {
        return norm(w);
    }
    let mut c = vec![0.0; locked.len()];
    c.extend_from_slice(known);
    let (mut d, mut nn) = sweep(w, &vs, &c);
    for _ in 0..3 {
        let (d2, nn2) = sweep(w, &vs, &d);
        // a full second sweep returns residual overlaps; repeat only if they stay large
        let resid = d2.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let n2 = nn2.max(0.0).sqrt();
        nn = nn2;
        if resid <= 1e-12 * n2.max(f64::MIN_POSITIVE) || n2 == 0.0 {
            return n2;
        }
        d = d2;
    }
    nn.max(0.0).sqrt()
}

/// `⟨v_i, w⟩` for every basis vector.
fn project(vs: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
    let mut tmp = w.to_vec();
    sweep(&mut tmp, &refs, &[]).0
}

/// Columns of `coeffs` applied to `vs`, computed in one blocked pass.
fn combine_many(vs: &[Vec<f64>], coeffs: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let dim = vs.first().map_or(0, Vec::len);
    let k = coeffs.ncols();
    let mut out = vec![vec![0.0; dim]; k];
    let blocks = dim.div_ceil(BLOCK);
    let fill = |b: usize| -> Vec<Vec<f64>> {
        let start = b * BLOCK;
        let len = BLOCK.min(dim - start);
        let mut res = vec![vec![0.0; len]; k];
        for (i, v) in vs.iter().enumerate() {
            let vb = &v[start..start + len];
            for (c, r) in res.iter_mut().enumerate() {
                let a = coeffs[(i, c)];
                if a != 0.0 {
                    r.iter_mut().zip(vb).for_each(|(x, y)| *x += a * y);
                }
            }
        }
        res
    };
    let parts: Vec<Vec<Vec<f64>>> = if dim >= PAR_DIM {
        (0..blocks).into_par_iter().map(fill).collect()
    } else {
        (0..blocks).map(fill).collect()
    };
    for (b, part) in parts.into_iter().enumerate() {
        let start = b * BLOCK;
        for (c, r) in part.into_iter().enumerate() {
            out[c][start..start + r.len()].copy_from_slice(&r);
        }
    }
    out
}

/// `Σ_j c_j · vs[j]`.
fn combine(vs: &[Vec<f64>], coeffs: impl Iterator<Item = f64>, dim: usize) -> Vec<f64> {
    let c: Vec<f64> = coeffs.take(vs.len()).collect();
    let mut out = vec![0.0; dim];
    let block = |start: usize, chunk: &mut [f64]| {
        for (v, &cj) in vs.iter().zip(&c) {
            if cj != 0.0 {
                let src = &v[start..start + chunk.len()];
                chunk.iter_mut().zip(src).for_each(|(o, x)| *o += cj * x);
            }
        }
    };
    if dim >= PAR_DIM {
        out.par_chunks_mut(1024).enumerate().for_each(|(b, chunk)| block(b * 1024, chunk));
    } else {
        block(0, &mut out);
    }
    out
}

/// Flip so the largest-magnitude component is positive. Ties resolve to the
/// lowest index, so the convention is deterministic.
pub fn canonical_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let lead = v
        .iter()
        .position(|x| x.abs() >= max * (1.0 - 1e-12))
        .expect("nonzero vector");
    if v[lead] < 0.0 {
        scale(-1.0, v);
    }
}

/// K lowest eigenpairs of `H_S(s)`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub s: f64,
    pub energies: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn gap(&self, m: usize, n: usize) -> f64 {
        self.energies[n] - self.energies[m]
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.len();
        let mut worst = 0.0_f64;
        for i in 0..k {
            for j in 0..=i {
                let g = dot(&self.vectors[i], &self.vectors[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// `⟨m|op|n⟩` for all retained pairs.
    pub fn matrix_elements(&self, op: &SpinOperator) -> Result<DMatrix<f64>> {
        let applied: Vec<Vec<f64>> = self
            .vectors
            .iter()
            .map(|v| op.apply(v))
            .collect::<Result<_>>()?;
        let k = self.len();
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = dot(&self.vectors[i], &applied[j]);
            }
        }
        // the operator is symmetric; remove rounding asymmetry
        let sym = (&m + m.transpose()) * 0.5;
        Ok(sym)
    }

    /// Recompute residuals `‖Hv − Ev‖` against `op`.
    pub fn refresh_residuals(&mut self, op: &SpinOperator) -> Result<()> {
        for (n, v) in self.vectors.iter().enumerate() {
            let mut r = op.apply(v)?;
            axpy(-self.energies[n], v, &mut r);
            self.residuals[n] = norm(&r);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Krylov dimension per run.
    pub krylov_dim: usize,
    /// Maximum number of Krylov runs.
    pub max_runs: usize,
    /// Residual target relative to the Gershgorin norm bound.
    pub rel_tol: f64,
    /// Run a complement check from a random start after all levels lock.
    /// Warm-started solves skip it unless `verify_warm` is set.
    pub verify: bool,
    pub verify_warm: bool,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 48,
            max_runs: 200,
            rel_tol: 1e-9,
            verify: true,
            verify_warm: false,
            seed: 0,
        }
    }
}

/// Dense diagonalization, for `N ≤ 10`.
pub fn dense_eigenpairs(op: &SpinOperator, k: usize, s: f64) -> Result<EigenBasis> {
    check_k(op, k)?;
    let m = op.to_dense()?;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut basis = EigenBasis {
        s,
        energies: Vec::with_capacity(k),
        vectors: Vec::with_capacity(k),
        residuals: vec![0.0; k],
    };
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        canonical_sign(&mut v);
        basis.energies.push(eig.eigenvalues[i]);
        basis.vectors.push(v);
    }
    basis.refresh_residuals(op)?;
    Ok(basis)
}

fn check_k(op: &SpinOperator, k: usize) -> Result<()> {
    if k == 0 || k > MAX_LEVELS.min(op.dim()) {
        return Err(Error::OutOfRange {
            name: "K",
            value: k as f64,
            lo: 1.0,
            hi: MAX_LEVELS.min(op.dim()) as f64,
        });
    }
    Ok(())
}

/// Lanczos path regardless of size. `warm` seeds the start vector with a
/// previous basis, which makes sweeps along `s` cheap.
///
/// Thick restart: when the basis reaches `krylov_dim`, it is compressed to the
/// lowest unconverged Ritz vectors and the Krylov expansion continues from
/// there. The projected matrix is formed explicitly from stored `H v`
/// products, so locking and restarts need no tridiagonal bookkeeping.
pub fn lanczos(
    op: &SpinOperator,
    k: usize,
    s: f64,
    opts: &LanczosOptions,
    warm: Option<&EigenBasis>,
) -> Result<EigenBasis> {
    check_k(op, k)?;
    let dim = op.dim();
    let hnorm = op.norm_bound().max(f64::MIN_POSITIVE);
    let tol = opts.rel_tol * hnorm;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };

    let mut locked: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut locked_vals: Vec<f64> = Vec::with_capacity(k + 1);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut applied: Vec<Vec<f64>> = Vec::new();
    // projected matrix, grown one column per expansion
    let mut proj: Vec<Vec<f64>> = Vec::new();

    let warm_used = matches!(warm, Some(prev) if prev.dim() == dim);
    let verify = opts.verify && (opts.verify_warm || !warm_used);
    let start = match warm {
        Some(prev) if prev.dim() == dim => {
            let mut v = combine(&prev.vectors, std::iter::repeat(1.0), dim);
            let noise = random(&mut rng);
            axpy(1e-4 * norm(&v) / (dim as f64).sqrt(), &noise, &mut v);
            v
        }
        _ => random(&mut rng),
    };
    let mut pending = Some(start);
    let mut verifying = false;
    let mut worst = f64::INFINITY;

    for _restart in 0..opts.max_runs {
        let room = dim - locked.len();
        let m = opts.krylov_dim.max(2 * k + 16).min(room);
        while basis.len() < m {
            // next Krylov direction: H q_last minus its known projections
            let (mut w, known) = match pending.take() {
                Some(w) => (w, Vec::new()),
                None => match applied.last() {
                    Some(hq) => (hq.clone(), proj.iter().map(|row| *row.last().unwrap()).collect()),
                    None => (random(&mut rng), Vec::new()),
                },
            };
            let before = norm(&w).max(f64::MIN_POSITIVE);
            let mut nw = reorthogonalize(&mut w, &locked, &basis, &known);
            if nw <= 1e-10 * before || nw <= 1e-14 * hnorm {
                // invariant subspace: continue with a fresh direction
                if basis.len() + locked.len() >= dim {
                    break;
                }
                w = random(&mut rng);
                nw = reorthogonalize(&mut w, &locked, &basis, &[]);
            }
            scale(1.0 / nw, &mut w);
            let hw = op.apply(&w)?;
            let mut col = project(&basis, &hw);
            for (row, &c) in proj.iter_mut().zip(&col) {
                row.push(c);
            }
            col.push(dot(&w, &hw));
            proj.push(col);
            applied.push(hw);
            basis.push(w);
        }
        let j = basis.len();
        let g = DMatrix::from_fn(j, j, |a, b| 0.5 * (proj[a][b] + proj[b][a]));
        let eig = SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..j).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let want = if verifying { 1 } else { k - locked.len() };
        let keep = (want + 8).min(j.saturating_sub(4)).max(want.min(j));
        let mut kept_v = Vec::with_capacity(keep);
        let mut kept_av = Vec::with_capacity(keep);
        let mut kept_theta: Vec<f64> = Vec::with_capacity(keep);
        let mut prefix = true;
        let mut lowest: Option<(f64, f64)> = None;
        let mut accepted_lower = false;
        worst = 0.0;
        let cols: Vec<usize> = order.iter().take(keep).copied().collect();
        let coeffs = DMatrix::from_fn(j, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])]);
        let xs = combine_many(&basis, &coeffs);
        let hxs = combine_many(&applied, &coeffs);
        for ((x, hx), &c) in xs.into_iter().zip(hxs).zip(&cols) {
            let theta = eig.eigenvalues[c];
            let mut r = hx.clone();
            axpy(-theta, &x, &mut r);
            let res = norm(&r);
            if lowest.is_none() {
                lowest = Some((theta, res));
            }
            let counts = if verifying { kept_v.is_empty() } else { locked.len() + kept_v.len() < k };
            if prefix && counts && res <= tol {
                let lock = if verifying {
                    let max_locked = locked_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    theta < max_locked - res
                } else {
                    true
                };
                if lock {
                    locked.push(x);
                    locked_vals.push(theta);
                    accepted_lower |= verifying;
                    continue;
                }
            }
            if counts {
                worst = worst.max(res);
            }
            prefix = false;
            kept_v.push(x);
            kept_av.push(hx);
            kept_theta.push(theta);
        }

        if verifying {
            if accepted_lower {
                trim_to(&mut locked, &mut locked_vals, k);
            } else if let Some((theta, res)) = lowest {
                let max_locked = locked_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if res <= tol && theta >= max_locked - res {
                    return rayleigh_ritz(op, locked, s);
                }
            }
        } else if locked.len() >= k {
            if !verify || k >= dim {
                return rayleigh_ritz(op, locked, s);
            }
            verifying = true;
            kept_v.clear();
            kept_av.clear();
            kept_theta.clear();
            pending = Some(random(&mut rng));
        }
        basis = kept_v;
        applied = kept_av;
        // Ritz vectors diagonalize the projection
        proj = (0..kept_theta.len())
            .map(|a| (0..kept_theta.len()).map(|b| if a == b { kept_theta[a] } else { 0.0 }).collect())
            .collect();
        if basis.is_empty() && pending.is_none() {
            pending = Some(random(&mut rng));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_runs,
        residual: worst,
    })
}

fn trim_to(locked: &mut Vec<Vec<f64>>, vals: &mut Vec<f64>, k: usize) {
    while locked.len() > k {
        let (imax, _) = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        locked.remove(imax);
        vals.remove(imax);
    }
}

/// Diagonalize `op` inside span(vectors) and return sorted pairs.
fn rayleigh_ritz(op: &SpinOperator, vectors: Vec<Vec<f64>>, s: f64) -> Result<EigenBasis> {
    let k = vectors.len();
    let dim = op.dim();
    let applied: Vec<Vec<f64>> = vectors.iter().map(|v| op.apply(v)).collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            h[(i, j)] = 0.5 * (dot(&vectors[i], &applied[j]) + dot(&vectors[j], &applied[i]));
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut basis = EigenBasis {
        s,
        energies: Vec::with_capacity(k),
        vectors: Vec::with_capacity(k),
        residuals: Vec::with_capacity(k),
    };
    for &c in &order {
        let y = eig.eigenvectors.column(c);
        let mut v = combine(&vectors, y.iter().copied(), dim);
        let mut hv = combine(&applied, y.iter().copied(), dim);
        let nv = norm(&v);
        scale(1.0 / nv, &mut v);
        scale(1.0 / nv, &mut hv);
        if canonical_flip(&mut v) {
            scale(-1.0, &mut hv);
        }
        let e = dot(&v, &hv);
        axpy(-e, &v, &mut hv);
        basis.residuals.push(norm(&hv));
        basis.energies.push(e);
        basis.vectors.push(v);
    }
    Ok(basis)
}

fn canonical_flip(v: &mut [f64]) -> bool {
    let before = v.iter().copied().find(|x| *x != 0.0);
    canonical_sign(v);
    before != v.iter().copied().find(|x| *x != 0.0)
}

/// K lowest eigenpairs: dense for `N ≤ 10`, Lanczos otherwise.
pub fn lowest_eigenpairs(op: &SpinOperator, k: usize, seed: u64) -> Result<EigenBasis> {
    let s = match op.kind() {
        crate::spin_system::OperatorKind::Combined { s } => s,
        _ => f64::NAN,
    };
    if op.n_qubits() <= DENSE_MAX_QUBITS {
        dense_eigenpairs(op, k, s)
    } else {
        let opts = LanczosOptions {
            seed,
            ..LanczosOptions::default()
        };
        lanczos(op, k, s, &opts, None)
    }
}

/// K lowest eigenpairs of `H_S(s)`: dense for `N ≤ 10`, otherwise Lanczos
/// warm-started from `warm` when given.
pub fn eigenpairs_at(
    ham: &AnnealingHamiltonian,
    s: f64,
    k: usize,
    opts: &LanczosOptions,
    warm: Option<&EigenBasis>,
) -> Result<EigenBasis> {
    let op = ham.at(s)?;
    if ham.n_qubits() <= DENSE_MAX_QUBITS {
        dense_eigenpairs(&op, k, s)
    } else {
        lanczos(&op, k, s, opts, warm)
    }
}

/// `⟨m|dn/ds⟩` per unit `s`, antisymmetric with zero diagonal.
#[derive(Debug, Clone)]
pub struct DerivativeCouplings {
    pub matrix: DMatrix<f64>,
    /// `⟨m|dH/ds|n⟩`, symmetric.
    pub numerators: DMatrix<f64>,
    /// Pairs whose gap fell below the degeneracy guard; their entries are zero.
    pub flagged: Vec<(usize, usize)>,
}

impl DerivativeCouplings {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.matrix[(m, n)]
    }
}

pub fn derivative_couplings(basis: &EigenBasis, dh: &SpinOperator) -> Result<DerivativeCouplings> {
    let num = basis.matrix_elements(dh)?;
    let k = basis.len();
    let emax = basis.energies.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let guard = DEGENERACY_GUARD * emax.max(f64::MIN_POSITIVE);
    let mut matrix = DMatrix::zeros(k, k);
    let mut flagged = Vec::new();
    for m in 0..k {
        for n in m + 1..k {
            let gap = basis.energies[n] - basis.energies[m];
            if gap.abs() <= guard {
                flagged.push((m, n));
                continue;
            }
            let c = num[(m, n)] / gap;
            matrix[(m, n)] = c;
            matrix[(n, m)] = -c;
        }
    }
    Ok(DerivativeCouplings {
        matrix,
        numerators: num,
        flagged,
    })
}

#[derive(Debug, Clone)]
pub struct Alignment {
    /// `⟨n(prev)|n(cur)⟩` after sign fixing.
    pub overlaps: Vec<f64>,
    /// Largest `|⟨m(prev)|n(cur)⟩|` with `m ≠ n`.
    pub max_cross_overlap: f64,
    /// Some diagonal overlap fell below 1/√2: levels likely crossed.
    pub crossing_suspected: bool,
}

/// Flip signs of `cur` so each vector overlaps its predecessor positively.
pub fn align_phases(prev: &EigenBasis, cur: &EigenBasis) -> Result<(EigenBasis, Alignment)> {
    if prev.len() != cur.len() || prev.dim() != cur.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            got: cur.len(),
        });
    }
    let mut out = cur.clone();
    let k = cur.len();
    let mut overlaps = Vec::with_capacity(k);
    let mut cross = 0.0_f64;
    for n in 0..k {
        let o = dot(&prev.vectors[n], &out.vectors[n]);
        if o < 0.0 {
            scale(-1.0, &mut out.vectors[n]);
        }
        overlaps.push(o.abs());
        for m in 0..k {
            if m != n {
                cross = cross.max(dot(&prev.vectors[m], &out.vectors[n]).abs());
            }
        }
    }
    let crossing_suspected = overlaps.iter().any(|&o| o < std::f64::consts::FRAC_1_SQRT_2);
    Ok((
        out,
        Alignment {
            overlaps,
            max_cross_overlap: cross,
            crossing_suspected,
        },
    ))
}

/// Overlap matrix `O[m][n] = ⟨m(prev)|n(cur)⟩`.
pub fn overlap_matrix(prev: &EigenBasis, cur: &EigenBasis) -> DMatrix<f64> {
    let k = prev.len().min(cur.len());
    DMatrix::from_fn(k, k, |m, n| dot(&prev.vectors[m], &cur.vectors[n]))
}

/// Normalize a vector in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        scale(1.0 / n, v);
    }
    n
}

pub fn real_dot(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::spin_system::{AnnealingHamiltonian, IsingInstance, Schedule};

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> IsingInstance {
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
        IsingInstance::new(n, h, j, d).unwrap()
    }

    #[test]
    fn single_qubit_levels() {
        let inst = IsingInstance::new(1, vec![1.0], vec![], vec![1.0]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, Schedule::constant(1.0, 1.0)).unwrap();
        let b = lowest_eigenpairs(&ham.at(0.5).unwrap(), 2, 0).unwrap();
        let r = std::f64::consts::SQRT_2 / 2.0;
        assert!((b.energies[0] + r).abs() < 1e-14);
        assert!((b.energies[1] - r).abs() < 1e-14);
    }

    #[test]
    fn lanczos_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..6 {
            let n = 4 + trial % 4;
            let inst = random_instance(&mut rng, n);
            let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
            let op = ham.at(rng.gen_range(0.05..0.95)).unwrap();
            let dense = dense_eigenpairs(&op, 6, 0.0).unwrap();
            let opts = LanczosOptions {
                seed: trial as u64,
                ..LanczosOptions::default()
            };
            let lz = lanczos(&op, 6, 0.0, &opts, None).unwrap();
            for i in 0..6 {
                assert!((dense.energies[i] - lz.energies[i]).abs() < 1e-9, "level {i}: {} vs {}", dense.energies[i], lz.energies[i]);
            }
            assert!(lz.orthonormality_error() < 1e-10);
            let tol = 1e-8 * op.norm_bound();
            assert!(lz.residuals.iter().all(|&r| r <= tol));
        }
    }

    #[test]
    fn classical_limit_gives_smallest_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut inst = random_instance(&mut rng, 5);
        inst.tunneling = vec![0.0; 5];
        let ham = AnnealingHamiltonian::new(inst.clone(), Schedule::constant(1.0, 1.0)).unwrap();
        let b = lowest_eigenpairs(&ham.at(0.5).unwrap(), 4, 0).unwrap();
        let mut e = inst.classical_energies();
        e.sort_by(f64::total_cmp);
        for i in 0..4 {
            assert!((b.energies[i] - e[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_levels_are_all_found() {
        // uncoupled identical qubits: ground level unique, first excited level 3-fold
        let inst = IsingInstance::new(3, vec![0.0; 3], vec![], vec![1.0; 3]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, Schedule::constant(1.0, 1.0)).unwrap();
        let op = ham.at(0.5).unwrap();
        let lz = lanczos(&op, 4, 0.5, &LanczosOptions::default(), None).unwrap();
        let expected = [-1.5, -0.5, -0.5, -0.5];
        for i in 0..4 {
            assert!((lz.energies[i] - expected[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_start_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = random_instance(&mut rng, 8);
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let a = lanczos(&ham.at(0.40).unwrap(), 4, 0.40, &LanczosOptions::default(), None).unwrap();
        let b = lanczos(&ham.at(0.41).unwrap(), 4, 0.41, &LanczosOptions::default(), Some(&a)).unwrap();
        let d = dense_eigenpairs(&ham.at(0.41).unwrap(), 4, 0.41).unwrap();
        for i in 0..4 {
            assert!((b.energies[i] - d.energies[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn couplings_antisymmetric_and_flat_schedule_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let inst = random_instance(&mut rng, 4);
        let ham = AnnealingHamiltonian::new(inst.clone(), Schedule::linear(1.0)).unwrap();
        let b = lowest_eigenpairs(&ham.at(0.3).unwrap(), 5, 0).unwrap();
        let c = derivative_couplings(&b, &ham.derivative_at(0.3).unwrap()).unwrap();
        for m in 0..5 {
            assert_eq!(c.get(m, m), 0.0);
            for n in 0..5 {
                assert!((c.get(m, n) + c.get(n, m)).abs() < 1e-8);
            }
        }
        let flat = AnnealingHamiltonian::new(inst, Schedule::constant(1.0, 1.0)).unwrap();
        let b = lowest_eigenpairs(&flat.at(0.3).unwrap(), 5, 0).unwrap();
        let c = derivative_couplings(&b, &flat.derivative_at(0.3).unwrap()).unwrap();
        assert!(c.matrix.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_level_mixing_angle_coupling() {
        // H = -(Δ/2)σx - (h(s)/2)σz with h(s) = h0 - 2 h0 s realized through
        // A = 1, B(s) linear and bias -1; tanφ = Δ/h, ⟨2|d1/ds⟩ = φ'/2 up to sign
        let delta = 0.7;
        let inst = IsingInstance::new(1, vec![-1.0], vec![], vec![delta]).unwrap();
        let sched = Schedule::new(vec![0.0, 1.0], vec![1.0, 1.0], vec![0.2, 2.0]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, sched).unwrap();
        for &s in &[0.1, 0.4, 0.8] {
            let b = lowest_eigenpairs(&ham.at(s).unwrap(), 2, 0).unwrap();
            let c = derivative_couplings(&b, &ham.derivative_at(s).unwrap()).unwrap();
            let h = 0.2 + 1.8 * s;
            let dh = 1.8;
            // φ = atan(Δ/h), dφ/ds = -Δ h'/(h² + Δ²)
            let dphi = -delta * dh / (h * h + delta * delta);
            assert!((c.get(1, 0).abs() - 0.5 * dphi.abs()).abs() < 1e-12, "s={s}");
        }
    }

    #[test]
    fn couplings_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let inst = random_instance(&mut rng, 4);
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let s = 0.45;
        let d = 1e-5;
        let b0 = lowest_eigenpairs(&ham.at(s).unwrap(), 4, 0).unwrap();
        let b1 = lowest_eigenpairs(&ham.at(s + d).unwrap(), 4, 0).unwrap();
        let bm = lowest_eigenpairs(&ham.at(s - d).unwrap(), 4, 0).unwrap();
        let (b1, _) = align_phases(&b0, &b1).unwrap();
        let (bm, _) = align_phases(&b0, &bm).unwrap();
        let c = derivative_couplings(&b0, &ham.derivative_at(s).unwrap()).unwrap();
        for m in 0..4 {
            for n in 0..4 {
                if m == n {
                    continue;
                }
                let fd: f64 = (0..b0.dim())
                    .map(|i| b0.vectors[m][i] * (b1.vectors[n][i] - bm.vectors[n][i]) / (2.0 * d))
                    .sum();
                assert!((fd - c.get(m, n)).abs() < 1e-4, "({m},{n}): {fd} vs {}", c.get(m, n));
            }
        }
    }

    #[test]
    fn align_restores_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let inst = random_instance(&mut rng, 3);
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let b = lowest_eigenpairs(&ham.at(0.5).unwrap(), 3, 0).unwrap();
        let (same, al) = align_phases(&b, &b).unwrap();
        assert_eq!(same.vectors, b.vectors);
        assert!(al.overlaps.iter().all(|&o| (o - 1.0).abs() < 1e-12));
        let mut neg = b.clone();
        neg.vectors[1].iter_mut().for_each(|x| *x = -*x);
        let (fixed, al) = align_phases(&b, &neg).unwrap();
        assert_eq!(fixed.vectors[1], b.vectors[1]);
        assert!((al.overlaps[1] - 1.0).abs() < 1e-12);
        assert!(!al.crossing_suspected);
    }

    #[test]
    fn rejects_bad_k() {
        let inst = IsingInstance::new(2, vec![0.0; 2], vec![], vec![1.0; 2]).unwrap();
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let op = ham.at(0.5).unwrap();
        assert!(lowest_eigenpairs(&op, 0, 0).is_err());
        assert!(lowest_eigenpairs(&op, 5, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = random_instance(&mut rng, 9);
        let ham = AnnealingHamiltonian::new(inst, Schedule::linear(1.0)).unwrap();
        let op = ham.at(0.6).unwrap();
        let opts = LanczosOptions { seed: 5, ..LanczosOptions::default() };
        let a = lanczos(&op, 4, 0.6, &opts, None).unwrap();
        let b = lanczos(&op, 4, 0.6, &opts, None).unwrap();
        assert_eq!(a.energies, b.energies);
        assert_eq!(a.vectors, b.vectors);
    }
}
