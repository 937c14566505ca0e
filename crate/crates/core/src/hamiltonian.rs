//! Action of the single-particle Kohn–Sham Hamiltonian on flattened fields.

use std::ops::{AddAssign, Mul};

use ndarray::{ArrayView2, ArrayViewMut2};
use num_complex::Complex64;
use num_traits::Zero;

use crate::error::Result;
use crate::grid::Grid;
use crate::linalg::{symmetric_eigen, BandedCholesky};

/// Central first-derivative weights `a_1..a_p` for unit spacing, so that
/// `f'(z) ≈ Σ_k a_k (f(z + k) − f(z − k))`.
pub fn first_derivative_stencil(half_width: usize) -> Vec<f64> {
    let p = half_width as u64;
    let fact = |n: u64| (1..=n).map(|x| x as f64).product::<f64>();
    (1..=p)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * fact(p).powi(2) / (k as f64 * fact(p - k) * fact(p + k))
        })
        .collect()
}

/// Scalars whose storage is a fixed number of interleaved `f64` parts.
pub trait RealParts: Copy + Zero + Mul<f64, Output = Self> + AddAssign {
    const PARTS: usize;
}

impl RealParts for f64 {
    const PARTS: usize = 1;
}

impl RealParts for Complex64 {
    const PARTS: usize = 2;
}

/// `H_m = T_m + V(z, ρ)` for one azimuthal channel.
#[derive(Debug, Clone)]
pub struct ChannelHamiltonian<'a> {
    pub grid: &'a Grid,
    /// Local potential, row-major `(n_z, n_ρ)`.
    pub potential: &'a [f64],
    pub m: i32,
    centrifugal: Vec<f64>,
}

impl<'a> ChannelHamiltonian<'a> {
    pub fn new(grid: &'a Grid, potential: &'a [f64], m: i32) -> Self {
        assert_eq!(potential.len(), grid.len(), "potential does not match grid");
        let centrifugal = grid
            .rho_points()
            .iter()
            .map(|r| (m * m) as f64 / (2.0 * r * r))
            .collect();
        Self {
            grid,
            potential,
            m,
            centrifugal,
        }
    }

    /// `out = H ψ`.
    pub fn apply<T: RealParts>(&self, psi: &[T], out: &mut [T]) {
        let (nz, nr) = self.grid.shape();
        assert!(psi.len() == nz * nr && out.len() == nz * nr, "field length matches grid");
        for ((o, p), v) in out
            .chunks_exact_mut(nr)
            .zip(psi.chunks_exact(nr))
            .zip(self.potential.chunks_exact(nr))
        {
            for i in 0..nr {
                o[i] = p[i] * (v[i] + self.centrifugal[i]);
            }
        }
        let src = ArrayView2::from_shape((nz, nr), psi).expect("field length matches grid");
        let dst = ArrayViewMut2::from_shape((nz, nr), &mut *out).expect("field length matches grid");
        self.grid.add_kinetic_z(src, dst);
        // radial block: out_c += ψ_c Kᵀ for each real part c
        let k = self.grid.radial_kinetic();
        let parts = T::PARTS;
        let row = (parts * nr) as isize;
        let col = parts as isize;
        // SAFETY: `T` is `parts` contiguous f64 values (f64 or repr(C)
        // Complex64); both slices hold nz·nr elements, so every strided
        // access stays in bounds, and `psi` and `out` are distinct borrows.
        unsafe {
            let a = psi.as_ptr() as *const f64;
            let c = out.as_mut_ptr() as *mut f64;
            for part in 0..parts {
                matrixmultiply::dgemm(
                    nz,
                    nr,
                    nr,
                    1.0,
                    a.add(part),
                    row,
                    col,
                    k.as_ptr(),
                    1,
                    nr as isize,
                    1.0,
                    c.add(part),
                    row,
                    col,
                );
            }
        }
    }
}

/// Adds `A p_z ψ = −i A ∂ψ/∂z` (hard walls) to `out`.
pub fn add_velocity_coupling(grid: &Grid, a: f64, psi: &[Complex64], out: &mut [Complex64]) {
    if a == 0.0 {
        return;
    }
    let (nz, nr) = grid.shape();
    let coef = first_derivative_stencil(grid.spec().fd_order);
    let scale = Complex64::new(0.0, -a / grid.dz());
    for iz in 0..nz {
        let row = &mut out[iz * nr..(iz + 1) * nr];
        for (k, &c) in coef.iter().enumerate() {
            let k = k + 1;
            let w = scale * c;
            if iz + k < nz {
                let up = &psi[(iz + k) * nr..(iz + k + 1) * nr];
                for (o, &v) in row.iter_mut().zip(up) {
                    *o += w * v;
                }
            }
            if iz >= k {
                let dn = &psi[(iz - k) * nr..(iz - k + 1) * nr];
                for (o, &v) in row.iter_mut().zip(dn) {
                    *o -= w * v;
                }
            }
        }
    }
}

/// Direct solver for `(T_m + σ) x = b` with hard walls in z.
///
/// The radial block (including the centrifugal term) is diagonalised once in
/// the `√W`-scaled representation; every radial mode then leaves a banded
/// system in z, factored up front.
#[derive(Debug, Clone)]
pub struct KineticSolver {
    n_z: usize,
    n_rho: usize,
    /// radial modes, row-major `(n_ρ, n_ρ)`; column k is mode k
    modes: Vec<f64>,
    factors: Vec<BandedCholesky>,
    sqrt_w: Vec<f64>,
}

impl KineticSolver {
    pub fn new(grid: &Grid, m: i32, shift: f64) -> Result<Self> {
        let (n_z, n_rho) = grid.shape();
        let mut radial = grid.radial_kinetic_symmetric().to_vec();
        for (i, r) in grid.rho_points().iter().enumerate() {
            radial[i * n_rho + i] += (m * m) as f64 / (2.0 * r * r);
        }
        let (lambda, q) = symmetric_eigen(n_rho, &radial);
        let mut modes = vec![0.0; n_rho * n_rho];
        for i in 0..n_rho {
            for k in 0..n_rho {
                modes[i * n_rho + k] = q[(i, k)];
            }
        }
        let scale = -0.5 / (grid.dz() * grid.dz());
        let stencil = grid.stencil();
        let p = stencil.len() - 1;
        let factors = lambda
            .iter()
            .map(|&lam| {
                BandedCholesky::factor(n_z, p, |_, k| {
                    scale * stencil[k] + if k == 0 { lam + shift } else { 0.0 }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sqrt_w = grid.rho_weights().iter().map(|w| w.sqrt()).collect();
        Ok(Self {
            n_z,
            n_rho,
            modes,
            factors,
            sqrt_w,
        })
    }

    /// Overwrites `b` (row-major `(n_z, n_ρ)`) with the solution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (nz, nr) = (self.n_z, self.n_rho);
        let mut modal = vec![0.0; nz * nr];
        let mut scaled = vec![0.0; nr];
        for iz in 0..nz {
            for i in 0..nr {
                scaled[i] = b[iz * nr + i] * self.sqrt_w[i];
            }
            let row = &mut modal[iz * nr..(iz + 1) * nr];
            for (i, &si) in scaled.iter().enumerate() {
                if si != 0.0 {
                    let q = &self.modes[i * nr..(i + 1) * nr];
                    for (r, qk) in row.iter_mut().zip(q) {
                        *r += si * qk;
                    }
                }
            }
        }
        for (k, f) in self.factors.iter().enumerate() {
            f.solve_strided(&mut modal, k, nr);
        }
        for iz in 0..nz {
            let row = &modal[iz * nr..(iz + 1) * nr];
            for i in 0..nr {
                let q = &self.modes[i * nr..(i + 1) * nr];
                let v: f64 = q.iter().zip(row).map(|(a, b)| a * b).sum();
                b[iz * nr + i] = v / self.sqrt_w[i];
            }
        }
    }
}
