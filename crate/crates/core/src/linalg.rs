//! Small dense and banded kernels plus the Krylov machinery shared by the
//! ground-state and propagation code.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite banded matrix, stored as
/// lower bands: `band[i][k]` is `L[i, i − k]`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix whose lower band is supplied by `entry(i, k)`
    /// returning `A[i, i − k]` for `k ≤ half_bandwidth`.
    pub fn factor<F: Fn(usize, usize) -> f64>(n: usize, half_bandwidth: usize, entry: F) -> Result<Self> {
        let bw = half_bandwidth;
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        for i in 0..n {
            for k in 0..=bw.min(i) {
                band[i * stride + k] = entry(i, k);
            }
        }
        for i in 0..n {
            let kmax = bw.min(i);
            // off-diagonal entries L[i, j] for j = i − k, k = kmax..1
            for k in (1..=kmax).rev() {
                let j = i - k;
                let mut s = band[i * stride + k];
                let lo = i.saturating_sub(bw).max(j.saturating_sub(bw));
                for p in lo..j {
                    s -= band[i * stride + (i - p)] * band[j * stride + (j - p)];
                }
                band[i * stride + k] = s / band[j * stride];
            }
            let mut d = band[i * stride];
            for p in i.saturating_sub(bw)..i {
                let l = band[i * stride + (i - p)];
                d -= l * l;
            }
            if !(d > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "banded matrix not positive definite at row {i}"
                )));
            }
            band[i * stride] = d.sqrt();
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place; `b` may be strided through `stride`.
    pub fn solve_strided(&self, b: &mut [f64], offset: usize, stride: usize) {
        let s = self.bw + 1;
        let idx = |i: usize| offset + i * stride;
        for i in 0..self.n {
            let mut v = b[idx(i)];
            for p in i.saturating_sub(self.bw)..i {
                v -= self.band[i * s + (i - p)] * b[idx(p)];
            }
            b[idx(i)] = v / self.band[i * s];
        }
        for i in (0..self.n).rev() {
            let mut v = b[idx(i)];
            for q in (i + 1)..(i + self.bw + 1).min(self.n) {
                v -= self.band[q * s + (q - i)] * b[idx(q)];
            }
            b[idx(i)] = v / self.band[i * s];
        }
    }

    pub fn solve(&self, b: &mut [f64]) {
        self.solve_strided(b, 0, 1);
    }
}

/// Eigen-decomposition of a dense symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen(n: usize, a: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = DMatrix::from_row_slice(n, n, a);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((x, y), w) in a.iter().zip(b).zip(w) {
        s += x * y * w;
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Parameters of the thick-restart Lanczos eigensolver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    /// Largest basis size before a restart.
    pub max_subspace: usize,
    /// Ritz vectors kept beyond the requested count at each restart.
    pub extra_kept: usize,
    /// Convergence threshold on `‖Hx − θx‖ / max(1, |θ|)`.
    pub tol: f64,
    pub max_restarts: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_subspace: 48,
            extra_kept: 6,
            tol: 1e-10,
            max_restarts: 2000,
        }
    }
}

/// Converged lowest eigenpairs of a self-adjoint operator.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
}

/// Deterministic pseudo-random start vector.
fn seed_vector(n: usize, salt: u64) -> Vec<f64> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

/// Thick-restart Lanczos for the `nev` lowest eigenpairs of a real operator
/// that is symmetric under the inner product `Σ w_i a_i b_i`.
///
/// `start` vectors seed the basis (previous SCF orbitals, typically). When
/// `project` is given it is applied to every new direction, confining the
/// search to an invariant subspace such as one parity sector.
pub fn lowest_eigenpairs<A, P>(
    apply: A,
    weights: &[f64],
    nev: usize,
    start: &[Vec<f64>],
    project: P,
    opts: &LanczosOptions,
) -> Result<EigenPairs>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&mut [f64]),
{
    let n = weights.len();
    let kmax = opts.max_subspace.max(nev + opts.extra_kept + 2).min(n);
    let nev = nev.min(n);
    if nev == 0 {
        return Ok(EigenPairs {
            values: vec![],
            vectors: vec![],
            residuals: vec![],
            matvecs: 0,
        });
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    // projected matrix, row-major kmax × kmax
    let mut proj = vec![0.0; kmax * kmax];
    let mut matvecs = 0usize;
    let mut salt = 1u64;

    // two-pass Gram-Schmidt against the basis; returns the remaining norm
    let orthogonalize = |basis: &[Vec<f64>], v: &mut [f64]| -> f64 {
        for _ in 0..2 {
            for b in basis {
                let c = wdot(weights, b, v);
                axpy(-c, b, v);
            }
        }
        wdot(weights, v, v).sqrt()
    };

    let mut pending: Option<Vec<f64>> = None;
    let mut candidates: Vec<Vec<f64>> = start.to_vec();
    candidates.reverse();

    let mut restarts = 0usize;
    let mut last_residual;
    loop {
        // grow the basis
        let mut rejected = 0usize;
        while basis.len() < kmax {
            if rejected > 8 {
                // the reachable subspace is exhausted
                break;
            }
            let mut v = match pending.take().or_else(|| candidates.pop()) {
                Some(v) => v,
                None => {
                    salt += 1;
                    seed_vector(n, salt)
                }
            };
            project(&mut v);
            let scale = wdot(weights, &v, &v).sqrt();
            let norm = orthogonalize(&basis, &mut v);
            if !(norm > 1e-10 * scale.max(f64::MIN_POSITIVE)) || norm == 0.0 {
                rejected += 1;
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let mut hv = vec![0.0; n];
            apply(&v, &mut hv);
            matvecs += 1;
            let k = basis.len();
            for (i, b) in basis.iter().enumerate() {
                let t = wdot(weights, b, &hv);
                proj[i * kmax + k] = t;
                proj[k * kmax + i] = t;
            }
            proj[k * kmax + k] = wdot(weights, &v, &hv);
            basis.push(v);
            if candidates.is_empty() {
                let mut next = hv.clone();
                project(&mut next);
                let hn = wdot(weights, &next, &next).sqrt();
                let norm = orthogonalize(&basis, &mut next);
                if norm > 1e-12 * hn {
                    pending = Some(next);
                }
            }
            images.push(hv);
        }

        // Rayleigh–Ritz
        let k = basis.len();
        let mut t = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                t[i * k + j] = 0.5 * (proj[i * kmax + j] + proj[j * kmax + i]);
            }
        }
        let (theta, s) = symmetric_eigen(k, &t);
        let keep = (nev + opts.extra_kept).min(k.saturating_sub(1)).max(nev);
        let mut ritz = Vec::with_capacity(keep);
        let mut ritz_images = Vec::with_capacity(keep);
        for c in 0..keep {
            let mut y = vec![0.0; n];
            let mut hy = vec![0.0; n];
            for i in 0..k {
                let sic = s[(i, c)];
                if sic != 0.0 {
                    axpy(sic, &basis[i], &mut y);
                    axpy(sic, &images[i], &mut hy);
                }
            }
            ritz.push(y);
            ritz_images.push(hy);
        }
        let mut residuals = Vec::with_capacity(nev);
        for c in 0..nev {
            let mut r = ritz_images[c].clone();
            axpy(-theta[c], &ritz[c], &mut r);
            residuals.push(wdot(weights, &r, &r).sqrt() / theta[c].abs().max(1.0));
        }
        let worst = residuals.iter().cloned().fold(0.0, f64::max);
        last_residual = worst;
        if worst <= opts.tol || k == n {
            ritz.truncate(nev);
            return Ok(EigenPairs {
                values: theta[..nev].to_vec(),
                vectors: ritz,
                residuals,
                matvecs,
            });
        }
        restarts += 1;
        if restarts > opts.max_restarts {
            return Err(Error::EigenNotConverged {
                iterations: restarts,
                residual: last_residual,
            });
        }

        // thick restart: keep Ritz pairs, continue from the pending residual direction
        basis = ritz;
        images = ritz_images;
        proj.iter_mut().for_each(|x| *x = 0.0);
        for (c, &th) in theta.iter().enumerate().take(keep) {
            proj[c * kmax + c] = th;
        }
        if pending.is_none() {
            // residual of the least converged wanted vector as the next direction
            let c = residuals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c)
                .unwrap_or(0);
            let mut r = images[c].clone();
            axpy(-theta[c], &basis[c], &mut r);
            pending = Some(r);
        }
    }
}

/// Parameters of the preconditioned block eigensolver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobpcgOptions {
    /// Convergence threshold on `‖Hx − θx‖ / max(1, |θ|)`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Extra block vectors beyond the requested count.
    pub guard: usize,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 1000,
            guard: 2,
        }
    }
}

/// Orthogonalises `(v, hv)` against the orthonormal pairs in `basis`, two
/// passes, and normalises. Returns `false` when `v` is numerically dependent.
fn orthonormalize_pair(
    weights: &[f64],
    basis: &[(Vec<f64>, Vec<f64>)],
    v: &mut [f64],
    hv: Option<&mut Vec<f64>>,
    min_ratio: f64,
) -> bool {
    let before = wdot(weights, v, v).sqrt();
    if !(before > 0.0) || !before.is_finite() {
        return false;
    }
    let mut hv = hv;
    for _ in 0..2 {
        for (b, hb) in basis {
            let c = wdot(weights, b, v);
            axpy(-c, b, v);
            if let Some(h) = hv.as_deref_mut() {
                axpy(-c, hb, h);
            }
        }
    }
    let after = wdot(weights, v, v).sqrt();
    if !(after > min_ratio * before) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= after);
    if let Some(h) = hv {
        h.iter_mut().for_each(|x| *x /= after);
    }
    true
}

/// Locally optimal block preconditioned conjugate gradient for the `nev`
/// lowest eigenpairs of an operator symmetric under `Σ w_i a_i b_i`.
///
/// `precondition` should approximate the inverse of the operator shifted to
/// be positive definite; `project` confines iterates to an invariant
/// subspace and must commute with both operators.
pub fn lobpcg<A, M, P>(
    apply: A,
    precondition: M,
    weights: &[f64],
    nev: usize,
    start: &[Vec<f64>],
    project: P,
    opts: &LobpcgOptions,
) -> Result<EigenPairs>
where
    A: Fn(&[f64], &mut [f64]),
    M: Fn(&mut [f64]),
    P: Fn(&mut [f64]),
{
    let n = weights.len();
    let nev = nev.min(n);
    let k = (nev + opts.guard).min(n);
    let mut matvecs = 0usize;
    if nev == 0 {
        return Ok(EigenPairs {
            values: vec![],
            vectors: vec![],
            residuals: vec![],
            matvecs,
        });
    }
    let apply_new = |v: &[f64], matvecs: &mut usize| {
        let mut hv = vec![0.0; n];
        apply(v, &mut hv);
        *matvecs += 1;
        hv
    };

    // initial block
    let mut x: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(k);
    let mut salt = 7u64;
    let mut candidates: Vec<Vec<f64>> = start.iter().rev().cloned().collect();
    let mut attempts = 0usize;
    while x.len() < k && attempts < 10 * k + 10 {
        attempts += 1;
        let mut v = candidates.pop().unwrap_or_else(|| {
            salt += 1;
            seed_vector(n, salt)
        });
        project(&mut v);
        if orthonormalize_pair(weights, &x, &mut v, None, 1e-10) {
            let hv = apply_new(&v, &mut matvecs);
            x.push((v, hv));
        }
    }
    let k = x.len();
    let nev = nev.min(k);

    // Rayleigh–Ritz over an orthonormal basis of (vector, image) pairs;
    // returns the k lowest Ritz pairs and the non-X part as new directions
    let rayleigh_ritz = |basis: &[(Vec<f64>, Vec<f64>)], nx: usize| {
        let d = basis.len();
        let mut g = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let a = wdot(weights, &basis[i].0, &basis[j].1);
                let b = wdot(weights, &basis[j].0, &basis[i].1);
                g[i * d + j] = 0.5 * (a + b);
                g[j * d + i] = g[i * d + j];
            }
        }
        let (theta, c) = symmetric_eigen(d, &g);
        let mut xs = Vec::with_capacity(k);
        let mut ps = Vec::with_capacity(k);
        for col in 0..k {
            let mut v = vec![0.0; n];
            let mut hv = vec![0.0; n];
            let mut p = vec![0.0; n];
            let mut hp = vec![0.0; n];
            for (i, (b, hb)) in basis.iter().enumerate() {
                let cij = c[(i, col)];
                if cij == 0.0 {
                    continue;
                }
                axpy(cij, b, &mut v);
                axpy(cij, hb, &mut hv);
                if i >= nx {
                    axpy(cij, b, &mut p);
                    axpy(cij, hb, &mut hp);
                }
            }
            xs.push((v, hv));
            ps.push((p, hp));
        }
        (theta[..k].to_vec(), xs, ps)
    };

    let (mut theta, rotated, _) = rayleigh_ritz(&x, k);
    x = rotated;
    let mut p: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut last = f64::INFINITY;
    let mut verified = false;
    for iteration in 0..opts.max_iterations {
        if iteration > 0 && iteration % 16 == 0 {
            for (v, hv) in x.iter_mut() {
                *hv = apply_new(v, &mut matvecs);
            }
            for (t, (v, hv)) in theta.iter_mut().zip(&x) {
                *t = wdot(weights, v, hv);
            }
        }
        let residual_vectors: Vec<Vec<f64>> = x
            .iter()
            .zip(&theta)
            .map(|((v, hv), &t)| {
                let mut r = hv.clone();
                axpy(-t, v, &mut r);
                r
            })
            .collect();
        let res: Vec<f64> = residual_vectors
            .iter()
            .zip(&theta)
            .map(|(r, t)| wdot(weights, r, r).sqrt() / t.abs().max(1.0))
            .collect();
        let worst = res[..nev].iter().cloned().fold(0.0, f64::max);
        last = worst;
        if worst <= opts.tol {
            if verified {
                return Ok(EigenPairs {
                    values: theta[..nev].to_vec(),
                    vectors: x.into_iter().take(nev).map(|(v, _)| v).collect(),
                    residuals: res[..nev].to_vec(),
                    matvecs,
                });
            }
            // images are updated by recurrence; confirm with fresh products
            for (v, hv) in x.iter_mut() {
                *hv = apply_new(v, &mut matvecs);
            }
            for (t, (v, hv)) in theta.iter_mut().zip(&x) {
                *t = wdot(weights, v, hv);
            }
            verified = true;
            continue;
        }
        verified = false;

        let mut basis = x.clone();
        for (r, &ri) in residual_vectors.iter().zip(&res) {
            if ri <= opts.tol {
                continue;
            }
            let mut w = r.clone();
            precondition(&mut w);
            project(&mut w);
            if orthonormalize_pair(weights, &basis, &mut w, None, 1e-10) {
                let hw = apply_new(&w, &mut matvecs);
                basis.push((w, hw));
            }
        }
        for (mut v, mut hv) in p.drain(..) {
            // the image is carried by recurrence, so nearly dependent
            // directions would amplify its error
            if orthonormalize_pair(weights, &basis, &mut v, Some(&mut hv), 1e-3) {
                basis.push((v, hv));
            }
        }
        let (t, xs, ps) = rayleigh_ritz(&basis, k);
        theta = t;
        x = xs;
        p = ps;
    }
    Err(Error::EigenNotConverged {
        iterations: opts.max_iterations,
        residual: last,
    })
}

/// Result of one Krylov exponential step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovInfo {
    /// Subspace dimension actually used.
    pub dimension: usize,
    /// A-posteriori error estimate `|β_m (e^{-iTτ} e₁)_m|`.
    pub error_estimate: f64,
}

/// `ψ ← exp(−i H τ) ψ` by a Lanczos-Krylov approximation of dimension
/// `order`, for `H` self-adjoint under the weights `w`.
///
/// A vanishing off-diagonal (happy breakdown) truncates the subspace, which
/// is then exact.
pub fn krylov_expm<A>(
    apply: A,
    weights: &[f64],
    psi: &mut [Complex64],
    tau: f64,
    order: usize,
) -> Result<KrylovInfo>
where
    A: Fn(&[Complex64], &mut [Complex64]),
{
    let n = psi.len();
    let zero = Complex64::new(0.0, 0.0);
    let beta0 = weighted_norm_sqr(psi, weights).sqrt();
    if beta0 == 0.0 {
        return Ok(KrylovInfo {
            dimension: 0,
            error_estimate: 0.0,
        });
    }
    let order = order.max(1);
    let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(order);
    q.push(psi.iter().map(|x| x / beta0).collect());
    let mut alpha = Vec::with_capacity(order);
    let mut beta: Vec<f64> = Vec::with_capacity(order);
    let mut w = vec![zero; n];
    let mut last_beta = 0.0;
    for j in 0..order {
        apply(&q[j], &mut w);
        if j > 0 {
            axpy_c(&mut w, &q[j - 1], -beta[j - 1]);
        }
        let a = lane_dot(&q[j], &w, weights).re;
        axpy_c(&mut w, &q[j], -a);
        // local correction against the newest basis vector
        let c = lane_dot(&q[j], &w, weights);
        for (x, v) in w.iter_mut().zip(&q[j]) {
            *x -= v * c;
        }
        let b = weighted_norm_sqr(&w, weights).sqrt();
        alpha.push(a);
        if !b.is_finite() || !a.is_finite() {
            return Err(Error::KrylovBreakdown { dimension: j + 1 });
        }
        last_beta = b;
        let scale = a.abs() + beta.last().copied().unwrap_or(0.0);
        if b <= 1e-14 * scale.max(1e-300) {
            last_beta = 0.0;
            break;
        }
        if j + 1 < order {
            beta.push(b);
            let inv = 1.0 / b;
            q.push(w.iter().map(|x| x * inv).collect());
        }
    }
    let m = alpha.len();
    let mut t = vec![0.0; m * m];
    for i in 0..m {
        t[i * m + i] = alpha[i];
        if i + 1 < m {
            t[i * m + i + 1] = beta[i];
            t[(i + 1) * m + i] = beta[i];
        }
    }
    let (theta, s) = symmetric_eigen(m, &t);
    let mut coef = vec![zero; m];
    for (c, &th) in theta.iter().enumerate() {
        let phase = Complex64::from_polar(s[(0, c)], -th * tau);
        for (i, ci) in coef.iter_mut().enumerate() {
            *ci += phase * s[(i, c)];
        }
    }
    if coef.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::KrylovBreakdown { dimension: m });
    }
    let scaled: Vec<Complex64> = coef.iter().map(|c| c * beta0).collect();
    for (start, chunk) in (0..n).step_by(BLOCK).zip(psi.chunks_mut(BLOCK)) {
        chunk.fill(zero);
        for (qi, &c) in q.iter().zip(&scaled) {
            for (x, v) in chunk.iter_mut().zip(&qi[start..]) {
                *x += v * c;
            }
        }
    }
    Ok(KrylovInfo {
        dimension: m,
        error_estimate: last_beta * coef[m - 1].norm() * beta0,
    })
}

/// Points per cache block in the Krylov kernels.
const BLOCK: usize = 512;

fn axpy_c(y: &mut [Complex64], x: &[Complex64], a: f64) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += x * a;
    }
}

fn weighted_norm_sqr(v: &[Complex64], w: &[f64]) -> f64 {
    lane_dot(v, v, w).re
}

/// `Σ g a* b` with four independent accumulators so the loop pipelines.
fn lane_dot(a: &[Complex64], b: &[Complex64], g: &[f64]) -> Complex64 {
    let mut re = [0.0f64; 4];
    let mut im = [0.0f64; 4];
    let split = a.len() / 4 * 4;
    for ((a4, b4), g4) in a[..split]
        .chunks_exact(4)
        .zip(b[..split].chunks_exact(4))
        .zip(g[..split].chunks_exact(4))
    {
        for l in 0..4 {
            re[l] += g4[l] * (a4[l].re * b4[l].re + a4[l].im * b4[l].im);
            im[l] += g4[l] * (a4[l].re * b4[l].im - a4[l].im * b4[l].re);
        }
    }
    for ((x, y), w) in a[split..].iter().zip(&b[split..]).zip(&g[split..]) {
        re[0] += w * (x.re * y.re + x.im * y.im);
        im[0] += w * (x.re * y.im - x.im * y.re);
    }
    Complex64::new((re[0] + re[1]) + (re[2] + re[3]), (im[0] + im[1]) + (im[2] + im[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn banded_cholesky_solves_tridiagonal() {
        // A = tridiag(-1, 4, -1)
        let n = 7;
        let f = BandedCholesky::factor(n, 1, |_, k| if k == 0 { 4.0 } else { -1.0 }).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[i] = 4.0 * x_true[i];
            if i > 0 {
                b[i] -= x_true[i - 1];
            }
            if i + 1 < n {
                b[i] -= x_true[i + 1];
            }
        }
        f.solve(&mut b);
        for i in 0..n {
            assert_relative_eq!(b[i], x_true[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn banded_cholesky_pentadiagonal_matches_dense() {
        let n = 9;
        let entry = |i: usize, k: usize| match k {
            0 => 6.0 + i as f64 * 0.1,
            1 => -1.5,
            _ => 0.25,
        };
        let f = BandedCholesky::factor(n, 2, entry).unwrap();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for k in 0..=2.min(i) {
                a[(i, i - k)] = entry(i, k);
                a[(i - k, i)] = entry(i, k);
            }
        }
        let b = nalgebra::DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
        let x = a.clone().lu().solve(&b).unwrap();
        let mut y: Vec<f64> = b.iter().copied().collect();
        f.solve(&mut y);
        for i in 0..n {
            assert_relative_eq!(y[i], x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_band() {
        assert!(BandedCholesky::factor(3, 1, |_, k| if k == 0 { 1.0 } else { 2.0 }).is_err());
    }

    #[test]
    fn lanczos_finds_lowest_of_diagonal_operator() {
        let n = 200;
        let diag: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.05).collect();
        let w = vec![1.0; n];
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = diag[i] * x[i];
            }
        };
        let res = lowest_eigenpairs(apply, &w, 4, &[], |_| {}, &LanczosOptions::default()).unwrap();
        let mut sorted = diag.clone();
        sorted.sort_by(f64::total_cmp);
        for i in 0..4 {
            assert_relative_eq!(res.values[i], sorted[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn krylov_zero_hamiltonian_is_identity() {
        let n = 10;
        let w = vec![0.5; n];
        let mut psi: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let orig = psi.clone();
        krylov_expm(|_, y: &mut [Complex64]| y.fill(Complex64::new(0.0, 0.0)), &w, &mut psi, 0.3, 8).unwrap();
        for (a, b) in psi.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn lobpcg_weighted_diagonal_operator() {
        let n = 300;
        let diag: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.2).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = diag[i] * x[i];
            }
        };
        let precond = |r: &mut [f64]| {
            for i in 0..n {
                r[i] /= diag[i].abs() + 1.0;
            }
        };
        let res = lobpcg(apply, precond, &w, 5, &[], |_| {}, &LobpcgOptions::default()).unwrap();
        let mut sorted = diag.clone();
        sorted.sort_by(f64::total_cmp);
        for i in 0..5 {
            assert_relative_eq!(res.values[i], sorted[i], epsilon = 1e-9);
            for j in 0..5 {
                let d = wdot(&w, &res.vectors[i], &res.vectors[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }
}
