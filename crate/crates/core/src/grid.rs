//! Cylindrical `(z, ρ)` grid: uniform finite differences along the molecular
//! axis and a Lagrange–Laguerre mesh across it.
//!
//! Fields are stored as `(n_z, n_rho)` arrays of point values. The radial
//! basis functions are `p_j(x) e^{-(x - x_j)/2}` with `x = ρ / h_ρ`, which are
//! exactly orthogonal under `ρ dρ` at the Gauss–Laguerre nodes, so the grid
//! inner product is diagonal with weights `Δz · 2π h_ρ² λ_j x_j`.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Zip};
use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLaguerre;

/// Discretisation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of z points; odd so that z = 0 is a grid point.
    pub n_z: usize,
    /// z spacing (bohr).
    pub dz: f64,
    /// Number of radial mesh points.
    pub n_rho: usize,
    /// Radial scaling parameter (bohr).
    pub h_rho: f64,
    /// Half-width of the central second-derivative stencil; the stencil is
    /// accurate to `O(dz^{2 fd_order})`.
    pub fd_order: usize,
}

impl GridSpec {
    pub fn new(n_z: usize, dz: f64, n_rho: usize, h_rho: f64) -> Self {
        Self {
            n_z,
            dz,
            n_rho,
            h_rho,
            fd_order: 2,
        }
    }

    pub fn with_fd_order(mut self, fd_order: usize) -> Self {
        self.fd_order = fd_order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_z % 2 == 0 {
            return Err(Error::InvalidGrid(format!("n_z must be odd, got {}", self.n_z)));
        }
        if !(self.dz > 0.0) || !self.dz.is_finite() {
            return Err(Error::InvalidGrid(format!("dz must be positive, got {}", self.dz)));
        }
        if self.n_rho == 0 {
            return Err(Error::InvalidGrid("n_rho must be at least 1".into()));
        }
        if !(self.h_rho > 0.0) || !self.h_rho.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "h_rho must be positive, got {}",
                self.h_rho
            )));
        }
        if self.fd_order == 0 {
            return Err(Error::InvalidGrid("fd_order must be at least 1".into()));
        }
        if self.n_z < 2 * self.fd_order + 1 {
            return Err(Error::InvalidGrid(format!(
                "n_z = {} is too small for a stencil of half-width {}",
                self.n_z, self.fd_order
            )));
        }
        Ok(())
    }

    /// Half extent of the z axis, `(n_z − 1)/2 · dz`.
    pub fn z_half_extent(&self) -> f64 {
        (self.n_z - 1) as f64 / 2.0 * self.dz
    }
}

/// Central-difference weights `c_0, …, c_p` of `f''(0) ≈ Σ_k c_|k| f(k)`
/// (unit spacing).
pub fn second_derivative_stencil(half_width: usize) -> Vec<f64> {
    let p = half_width;
    let mut c = vec![0.0; p + 1];
    // c_k = 2 (−1)^{k+1} (p!)² / (k² (p−k)! (p+k)!)
    for k in 1..=p {
        let mut ratio = 1.0;
        // (p!)² / ((p−k)! (p+k)!) = Π_{i=1..k} (p−k+i)/(p+i)
        for i in 1..=k {
            ratio *= (p - k + i) as f64 / (p + i) as f64;
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        c[k] = 2.0 * sign * ratio / (k * k) as f64;
    }
    c[0] = -2.0 * c[1..].iter().sum::<f64>();
    c
}

/// Spin label of a Kohn–Sham orbital.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Spin::Up => "up",
            Spin::Down => "dn",
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

impl std::str::FromStr for Spin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "up" | "u" | "alpha" | "+" => Ok(Spin::Up),
            "dn" | "down" | "d" | "beta" | "-" => Ok(Spin::Down),
            other => Err(Error::InvalidInput(format!("unknown spin '{other}'"))),
        }
    }
}

/// A Kohn–Sham spin-orbital `ψ(z, ρ) e^{imφ}`; the stored values carry the
/// `(z, ρ)` dependence and are normalised with the grid's 3D weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbital {
    pub values: Array2<Complex64>,
    pub spin: Spin,
    pub m: i32,
    pub label: String,
}

impl Orbital {
    pub fn new(values: Array2<Complex64>, spin: Spin, m: i32, label: impl Into<String>) -> Self {
        Self {
            values,
            spin,
            m,
            label: label.into(),
        }
    }

    /// Column-name friendly identifier, e.g. `1pu+1_up`.
    pub fn key(&self) -> String {
        spin_orbital_key(&self.label, self.m, self.spin)
    }
}

pub fn spin_orbital_key(label: &str, m: i32, spin: Spin) -> String {
    if m == 0 {
        format!("{label}_{}", spin.tag())
    } else {
        format!("{label}{m:+}_{}", spin.tag())
    }
}

/// The discretised cylindrical grid. Immutable once built.
#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    z: Vec<f64>,
    rho: Vec<f64>,
    /// `2π h² λ_j x_j`: radial quadrature weights with the cylindrical measure.
    rho_weights: Vec<f64>,
    /// `Δz · rho_weights[j]`.
    cell_weights: Vec<f64>,
    stencil: Vec<f64>,
    /// Symmetric radial kinetic block (`m = 0`) acting on `√W`-scaled values.
    radial_sym: Vec<f64>,
    /// Same block acting on point values: `√(W_j/W_i) K_ij`.
    radial_values: Vec<f64>,
}

impl Grid {
    /// Builds the grid, rejecting invalid specifications.
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let half = (spec.n_z as isize - 1) / 2;
        let z = (0..spec.n_z)
            .map(|i| (i as isize - half) as f64 * spec.dz)
            .collect();

        let rule = GaussLaguerre::<f64>::new(spec.n_rho);
        let h = spec.h_rho;
        let rho: Vec<f64> = rule.nodes.iter().map(|x| x * h).collect();
        let rho_weights: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.scaled_weights)
            .map(|(x, l)| 2.0 * PI * h * h * l * x)
            .collect();
        let cell_weights = rho_weights.iter().map(|w| w * spec.dz).collect();

        let n = spec.n_rho;
        let d = rule.lagrange_derivative();
        let mut radial_sym = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n).map(|k| d[k][i] * d[k][j]).sum::<f64>() / (2.0 * h * h);
                radial_sym[i * n + j] = s;
                radial_sym[j * n + i] = s;
            }
        }
        let mut radial_values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                radial_values[i * n + j] =
                    radial_sym[i * n + j] * (rho_weights[j] / rho_weights[i]).sqrt();
            }
        }

        Ok(Self {
            spec,
            z,
            rho,
            rho_weights,
            cell_weights,
            stencil: second_derivative_stencil(spec.fd_order),
            radial_sym,
            radial_values,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n_z(&self) -> usize {
        self.spec.n_z
    }

    pub fn n_rho(&self) -> usize {
        self.spec.n_rho
    }

    pub fn dz(&self) -> f64 {
        self.spec.dz
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.spec.n_z, self.spec.n_rho)
    }

    pub fn len(&self) -> usize {
        self.spec.n_z * self.spec.n_rho
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn z_points(&self) -> &[f64] {
        &self.z
    }

    pub fn rho_points(&self) -> &[f64] {
        &self.rho
    }

    /// Radial weights including the `2πρ` volume factor.
    pub fn rho_weights(&self) -> &[f64] {
        &self.rho_weights
    }

    /// Full 3D quadrature weight of every point in a z row.
    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn z_max(&self) -> f64 {
        self.spec.z_half_extent()
    }

    pub fn rho_max(&self) -> f64 {
        *self.rho.last().expect("at least one radial node")
    }

    /// Second-derivative stencil weights `c_0..c_p` for unit spacing.
    pub fn stencil(&self) -> &[f64] {
        &self.stencil
    }

    /// Symmetric `m = 0` radial kinetic matrix (row-major) in the
    /// `√W`-scaled representation.
    pub fn radial_kinetic_symmetric(&self) -> &[f64] {
        &self.radial_sym
    }

    /// `m = 0` radial kinetic matrix acting on point values (row-major).
    pub fn radial_kinetic(&self) -> &[f64] {
        &self.radial_values
    }

    /// Maps a field index to its mirror image under `z → −z`.
    pub fn mirror_z(&self, iz: usize) -> usize {
        self.spec.n_z - 1 - iz
    }

    pub fn zeros<T: Clone + Zero>(&self) -> Array2<T> {
        Array2::zeros(self.shape())
    }

    /// Evaluates `f(z, ρ)` at every grid point.
    pub fn sample<T, F: Fn(f64, f64) -> T>(&self, f: F) -> Array2<T> {
        Array2::from_shape_fn(self.shape(), |(i, j)| f(self.z[i], self.rho[j]))
    }

    pub fn check_shape<T>(&self, field: &ArrayView2<T>) -> Result<()> {
        let got = field.dim();
        if got != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got,
            });
        }
        Ok(())
    }

    /// `∫ f d³r` for an axially symmetric field.
    pub fn integrate(&self, field: &Array2<f64>) -> Result<f64> {
        self.check_shape(&field.view())?;
        Ok(self.integrate_unchecked(field.view()))
    }

    pub(crate) fn integrate_unchecked(&self, field: ArrayView2<f64>) -> f64 {
        let w = &self.cell_weights;
        field
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(w).map(|(f, w)| f * w).sum::<f64>())
            .sum()
    }

    /// `⟨a|b⟩` with the grid weights.
    pub fn inner(&self, a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
        let w = &self.cell_weights;
        let mut acc = Complex64::zero();
        for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
            for ((x, y), w) in ra.iter().zip(rb.iter()).zip(w) {
                acc += x.conj() * y * *w;
            }
        }
        acc
    }

    pub fn norm_sqr(&self, a: &Array2<Complex64>) -> f64 {
        let w = &self.cell_weights;
        a.rows()
            .into_iter()
            .map(|r| r.iter().zip(w).map(|(x, w)| x.norm_sqr() * w).sum::<f64>())
            .sum()
    }

    /// Applies `−½ ∂²/∂z²` with hard walls beyond the z edges, accumulating
    /// into `out`.
    pub fn add_kinetic_z<T>(&self, psi: ArrayView2<T>, mut out: ArrayViewMut2<T>)
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::AddAssign,
    {
        let nz = self.spec.n_z;
        let nr = self.spec.n_rho;
        let scale = -0.5 / (self.spec.dz * self.spec.dz);
        let coef: Vec<f64> = self.stencil.iter().map(|c| c * scale).collect();
        let p = coef.len() - 1;
        let src = psi.as_slice().expect("standard layout field");
        let dst = out.as_slice_mut().expect("standard layout field");
        for iz in 0..nz {
            let out_row = &mut dst[iz * nr..(iz + 1) * nr];
            let lo = iz.saturating_sub(p);
            let hi = (iz + p).min(nz - 1);
            for jz in lo..=hi {
                let c = coef[iz.abs_diff(jz)];
                let in_row = &src[jz * nr..(jz + 1) * nr];
                for (o, &v) in out_row.iter_mut().zip(in_row) {
                    *o += v * c;
                }
            }
        }
    }

    /// Applies the radial kinetic block `−½ ρ⁻¹∂ρ(ρ∂ρ) + m²/(2ρ²)`,
    /// accumulating into `out`.
    pub fn add_kinetic_rho<T>(&self, psi: ArrayView2<T>, m: i32, mut out: ArrayViewMut2<T>)
    where
        T: Copy + Zero + std::ops::Mul<f64, Output = T> + std::ops::AddAssign,
    {
        let nr = self.spec.n_rho;
        let k = &self.radial_values;
        let centrifugal: Vec<f64> = self
            .rho
            .iter()
            .map(|r| (m * m) as f64 / (2.0 * r * r))
            .collect();
        let src = psi.as_slice().expect("standard layout field");
        let dst = out.as_slice_mut().expect("standard layout field");
        for (in_row, out_row) in src.chunks_exact(nr).zip(dst.chunks_exact_mut(nr)) {
            for i in 0..nr {
                let krow = &k[i * nr..(i + 1) * nr];
                let mut acc = T::zero();
                for (&kij, &v) in krow.iter().zip(in_row) {
                    acc += v * kij;
                }
                out_row[i] += acc + in_row[i] * centrifugal[i];
            }
        }
    }

    /// Full kinetic operator for azimuthal quantum number `m`.
    pub fn apply_kinetic<T>(&self, psi: &Array2<T>, m: i32) -> Result<Array2<T>>
    where
        T: Copy + Zero + std::ops::Mul<f64, Output = T> + std::ops::AddAssign,
    {
        self.check_shape(&psi.view())?;
        let psi = psi.as_standard_layout();
        let mut out = Array2::zeros(self.shape());
        self.add_kinetic_z(psi.view(), out.view_mut());
        self.add_kinetic_rho(psi.view(), m, out.view_mut());
        Ok(out)
    }

    /// Restricts `f` to its even (`parity = +1`) or odd part under `z → −z`.
    pub fn project_parity<T>(&self, f: &mut Array2<T>, parity: i32)
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let nz = self.spec.n_z;
        for iz in 0..=nz / 2 {
            let jz = nz - 1 - iz;
            for ir in 0..self.spec.n_rho {
                let a = f[[iz, ir]];
                let b = f[[jz, ir]];
                let (na, nb) = if parity >= 0 {
                    let s = (a + b) * 0.5;
                    (s, s)
                } else {
                    let d = (a - b) * 0.5;
                    (d, d * -1.0)
                };
                f[[iz, ir]] = na;
                f[[jz, ir]] = nb;
            }
        }
    }

    /// Distance of every grid point from the origin.
    pub fn radius(&self) -> Array2<f64> {
        self.sample(|z, r| (z * z + r * r).sqrt())
    }
}

/// Normalises an orbital to unit grid norm; returns the prior norm.
pub fn normalize(grid: &Grid, values: &mut Array2<Complex64>) -> f64 {
    let n = grid.norm_sqr(values).sqrt();
    if n > 0.0 {
        let inv = 1.0 / n;
        Zip::from(values).for_each(|v| *v *= inv);
    }
    n
}
