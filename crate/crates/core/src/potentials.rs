//! Terms of the Kohn–Sham effective potential: nuclear attraction, Hartree,
//! exchange-only LDA and the laser coupling.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Spin};
use crate::hamiltonian::KineticSolver;
use crate::units;

/// A point nucleus on the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub charge: f64,
    pub z: f64,
}

/// Nuclear framework. Homonuclear diatomics place the two nuclei at
/// `z = ±R/2`; single-centre systems are accepted for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeSpec {
    pub name: String,
    pub nuclei: Vec<Nucleus>,
}

impl MoleculeSpec {
    /// Two equal nuclei of charge `charge` separated by `bond_length`.
    pub fn homonuclear(name: impl Into<String>, charge: u32, bond_length: f64) -> Result<Self> {
        if !(bond_length > 0.0) {
            return Err(Error::InvalidInput(format!(
                "bond length must be positive, got {bond_length}"
            )));
        }
        if charge == 0 {
            return Err(Error::InvalidInput("nuclear charge must be positive".into()));
        }
        let q = charge as f64;
        Ok(Self {
            name: name.into(),
            nuclei: vec![
                Nucleus {
                    charge: q,
                    z: -bond_length / 2.0,
                },
                Nucleus {
                    charge: q,
                    z: bond_length / 2.0,
                },
            ],
        })
    }

    /// A single nucleus at the origin.
    pub fn atom(name: impl Into<String>, charge: f64) -> Self {
        Self {
            name: name.into(),
            nuclei: vec![Nucleus { charge, z: 0.0 }],
        }
    }

    /// N₂ at R = 2.074 bohr.
    pub fn nitrogen() -> Self {
        Self::homonuclear("N2", 7, 2.074).expect("valid preset")
    }

    /// O₂ at R = 2.282 bohr.
    pub fn oxygen() -> Self {
        Self::homonuclear("O2", 8, 2.282).expect("valid preset")
    }

    /// F₂ at R = 2.668 bohr.
    pub fn fluorine() -> Self {
        Self::homonuclear("F2", 9, 2.668).expect("valid preset")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "N2" => Some(Self::nitrogen()),
            "O2" => Some(Self::oxygen()),
            "F2" => Some(Self::fluorine()),
            _ => None,
        }
    }

    pub fn charges(&self) -> Vec<f64> {
        self.nuclei.iter().map(|n| n.charge).collect()
    }

    /// Internuclear separation (0 for a single centre).
    pub fn bond_length(&self) -> f64 {
        match self.nuclei.as_slice() {
            [a, b] => (a.z - b.z).abs(),
            _ => 0.0,
        }
    }

    /// Number of electrons of the neutral molecule.
    pub fn electron_count(&self) -> f64 {
        self.nuclei.iter().map(|n| n.charge).sum()
    }

    /// `Σ_{I<J} Z_I Z_J / R_IJ`.
    pub fn nuclear_repulsion(&self) -> f64 {
        let mut e = 0.0;
        for (i, a) in self.nuclei.iter().enumerate() {
            for b in &self.nuclei[i + 1..] {
                e += a.charge * b.charge / (a.z - b.z).abs();
            }
        }
        e
    }

    /// Checks the two-equal-nuclei form used for production runs.
    pub fn validate_homonuclear(&self) -> Result<()> {
        match self.nuclei.as_slice() {
            [a, b] if a.charge == b.charge && a.charge > 0.0 && (a.z + b.z).abs() < 1e-12 && a.z != b.z => {
                Ok(())
            }
            _ => Err(Error::InvalidInput(format!(
                "molecule '{}' is not a homonuclear diatomic centred at the origin",
                self.name
            ))),
        }
    }

    /// True when the nuclear framework is invariant under `z → −z`.
    pub fn is_inversion_symmetric(&self) -> bool {
        self.nuclei.iter().all(|a| {
            self.nuclei
                .iter()
                .any(|b| b.charge == a.charge && (a.z + b.z).abs() < 1e-12)
        })
    }
}

/// Spin-resolved, axially symmetric electron density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinDensity {
    pub up: Array2<f64>,
    pub down: Array2<f64>,
}

impl SpinDensity {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            up: grid.zeros(),
            down: grid.zeros(),
        }
    }

    pub fn total(&self) -> Array2<f64> {
        &self.up + &self.down
    }

    pub fn spin(&self, s: Spin) -> &Array2<f64> {
        match s {
            Spin::Up => &self.up,
            Spin::Down => &self.down,
        }
    }

    pub fn spin_mut(&mut self, s: Spin) -> &mut Array2<f64> {
        match s {
            Spin::Up => &mut self.up,
            Spin::Down => &mut self.down,
        }
    }

    pub fn electron_count(&self, grid: &Grid) -> f64 {
        grid.integrate_unchecked(self.up.view()) + grid.integrate_unchecked(self.down.view())
    }
}

/// Temporal envelope of the pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    /// `sin²(πt/τ)` over the whole pulse.
    Sin2,
    /// Linear ramps of `ramp_cycles` optical cycles with a flat top.
    Trapezoid { ramp_cycles: f64 },
}

/// Laser–electron coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// `E(t) z` added to the potential.
    Length,
    /// `A(t) p_z` added to the kinetic operator.
    Velocity,
}

/// Linearly polarised pulse along the molecular axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserPulse {
    pub wavelength_nm: f64,
    pub intensity_wcm2: f64,
    pub n_cycles: f64,
    pub envelope: Envelope,
    pub gauge: Gauge,
    /// Carrier-envelope phase (rad).
    #[serde(default)]
    pub cep: f64,
}

impl LaserPulse {
    /// sin² pulse in the length gauge.
    pub fn new(wavelength_nm: f64, intensity_wcm2: f64, n_cycles: f64) -> Self {
        Self {
            wavelength_nm,
            intensity_wcm2,
            n_cycles,
            envelope: Envelope::Sin2,
            gauge: Gauge::Length,
            cep: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::InvalidInput("wavelength must be positive".into()));
        }
        if !(self.intensity_wcm2 >= 0.0) {
            return Err(Error::InvalidInput("intensity must be non-negative".into()));
        }
        if !(self.n_cycles > 0.0) {
            return Err(Error::InvalidInput("pulse needs a positive number of cycles".into()));
        }
        if let Envelope::Trapezoid { ramp_cycles } = self.envelope {
            if !(ramp_cycles > 0.0) || 2.0 * ramp_cycles > self.n_cycles {
                return Err(Error::InvalidInput(
                    "trapezoid ramps must be positive and fit inside the pulse".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        units::angular_frequency(self.wavelength_nm)
    }

    pub fn peak_field(&self) -> f64 {
        units::peak_field(self.intensity_wcm2)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega()
    }

    /// Pulse length τ in atomic units of time.
    pub fn duration(&self) -> f64 {
        self.n_cycles * self.period()
    }

    pub fn duration_fs(&self) -> f64 {
        self.duration() * units::AU_TIME_FS
    }

    /// Ponderomotive energy `E₀² / (4ω²)`.
    pub fn ponderomotive_energy(&self) -> f64 {
        let w = self.omega();
        let e0 = self.peak_field();
        e0 * e0 / (4.0 * w * w)
    }

    pub fn envelope_at(&self, t: f64) -> f64 {
        let tau = self.duration();
        if !(0.0..=tau).contains(&t) {
            return 0.0;
        }
        match self.envelope {
            Envelope::Sin2 => (PI * t / tau).sin().powi(2),
            Envelope::Trapezoid { ramp_cycles } => {
                let ramp = ramp_cycles * self.period();
                if t < ramp {
                    t / ramp
                } else if t > tau - ramp {
                    (tau - t) / ramp
                } else {
                    1.0
                }
            }
        }
    }

    /// Electric field `E(t)`; zero outside `[0, τ]`.
    pub fn field(&self, t: f64) -> f64 {
        self.peak_field() * self.envelope_at(t) * (self.omega() * t + self.cep).cos()
    }

    /// Vector potential `A(t) = −∫₀ᵗ E(t') dt'` by Gauss–Legendre panels.
    pub fn vector_potential(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        if t == 0.0 {
            return 0.0;
        }
        // 8-point Gauss–Legendre nodes on [-1, 1]
        const X: [f64; 4] = [
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_2,
        ];
        const W: [f64; 4] = [
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        let panel = self.period() / 8.0;
        let panels = (t / panel).ceil().max(1.0) as usize;
        let h = t / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (x, w) in X.iter().zip(&W) {
                acc += w * (self.field(mid + 0.5 * h * x) + self.field(mid - 0.5 * h * x));
            }
        }
        -acc * 0.5 * h
    }
}

/// `E(t)` of `pulse`, zero outside the pulse.
pub fn laser_amplitude(pulse: &LaserPulse, t: f64) -> f64 {
    pulse.field(t)
}

/// `V_ion(z, ρ) = −Σ_I Z_I / |r − R_I|`.
pub fn eval_ionic(molecule: &MoleculeSpec, grid: &Grid) -> Array2<f64> {
    grid.sample(|z, r| {
        molecule
            .nuclei
            .iter()
            .map(|n| -n.charge / ((z - n.z).powi(2) + r * r).sqrt())
            .sum()
    })
}

/// `(6/π)^{1/3}`.
pub fn xlda_prefactor<T: Float>() -> T {
    T::from(6.0 / PI).unwrap().cbrt()
}

/// Exchange potential `−(6/π)^{1/3} n_σ^{1/3}`; non-positive densities map to 0.
pub fn xlda_potential<T: Float>(n: T) -> T {
    if n > T::zero() {
        -xlda_prefactor::<T>() * n.cbrt()
    } else {
        T::zero()
    }
}

/// Exchange energy density `−(3/2)(3/4π)^{1/3} n_σ^{4/3}`.
pub fn xlda_energy_density<T: Float>(n: T) -> T {
    if n > T::zero() {
        let c = T::from(1.5).unwrap() * T::from(3.0 / (4.0 * PI)).unwrap().cbrt();
        -c * n * n.cbrt()
    } else {
        T::zero()
    }
}

/// Spin-resolved exchange potentials.
pub fn eval_xlda(density: &SpinDensity) -> (Array2<f64>, Array2<f64>) {
    (
        density.up.mapv(xlda_potential),
        density.down.mapv(xlda_potential),
    )
}

/// `E_x = −(3/2)(3/4π)^{1/3} Σ_σ ∫ n_σ^{4/3}`.
pub fn exchange_energy(density: &SpinDensity, grid: &Grid) -> Result<f64> {
    grid.check_shape(&density.up.view())?;
    grid.check_shape(&density.down.view())?;
    Ok(grid.integrate_unchecked(density.up.mapv(xlda_energy_density).view())
        + grid.integrate_unchecked(density.down.mapv(xlda_energy_density).view()))
}

fn legendre(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..l {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Options of the Hartree solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HartreeOptions {
    /// Highest multipole carried analytically.
    pub lmax: usize,
    /// Width (bohr) of the Gaussian compensation multipoles. Too narrow a
    /// Gaussian is poorly resolved by the discrete Laplacian; its analytic
    /// potential then disagrees with the grid one and the Hartree map stops
    /// being symmetric, which shows up as energy drift in propagation.
    pub compensation_width: f64,
    /// Accepted relative residual of the discrete Poisson equation.
    pub tolerance: f64,
}

impl Default for HartreeOptions {
    fn default() -> Self {
        Self {
            lmax: 4,
            compensation_width: 2.0,
            tolerance: 1e-10,
        }
    }
}

/// Poisson solver `∇²V_H = −4πn` on the cylindrical grid.
///
/// The multipoles `ℓ ≤ lmax` of the density are carried by Gaussian
/// compensation charges whose potentials are known in closed form, so the
/// long-range tail and the grid-edge values follow the multipole expansion.
/// The remainder has no low moments and is solved directly: the radial
/// kinetic block is diagonalised once and each radial mode leaves a banded
/// system in z.
#[derive(Debug, Clone)]
pub struct HartreeSolver {
    options: HartreeOptions,
    kinetic: KineticSolver,
    moment_weights: Vec<Array2<f64>>,
    comp_density: Vec<Array2<f64>>,
    comp_potential: Vec<Array2<f64>>,
    comp_norm: Vec<f64>,
}

/// Potential with its discrete-Poisson residual.
#[derive(Debug, Clone)]
pub struct HartreeSolution {
    pub potential: Array2<f64>,
    pub relative_residual: f64,
}

impl HartreeSolver {
    pub fn new(grid: &Grid) -> Result<Self> {
        Self::with_options(grid, HartreeOptions::default())
    }

    pub fn with_options(grid: &Grid, options: HartreeOptions) -> Result<Self> {
        let kinetic = KineticSolver::new(grid, 0, 0.0)?;

        let a = options.compensation_width;
        let a2 = a * a;
        let mut moment_weights = Vec::new();
        let mut comp_density = Vec::new();
        let mut comp_potential = Vec::new();
        let mut comp_norm = Vec::new();
        for l in 0..=options.lmax {
            let lf = l as f64;
            let s = lf + 1.5;
            let gamma_s = statrs::function::gamma::gamma(s);
            let radial_integral = 0.5 * (2.0 * a2).powf(s) * gamma_s;
            let pref = 4.0 * PI / (2.0 * lf + 1.0);
            let weight = grid.sample(|z, r| {
                let rr = (z * z + r * r).sqrt();
                rr.powi(l as i32) * legendre(l, z / rr)
            });
            let density = grid.sample(|z, r| {
                let rr2 = z * z + r * r;
                let rr = rr2.sqrt();
                rr.powi(l as i32) * (-rr2 / (2.0 * a2)).exp() * legendre(l, z / rr)
            });
            // the grid moment rather than the analytic one, so the remainder
            // has exactly vanishing low moments on the grid
            comp_norm.push(grid.integrate_unchecked((&density * &weight).view()));
            moment_weights.push(weight);
            comp_density.push(density);
            comp_potential.push(grid.sample(|z, r| {
                let rr2 = z * z + r * r;
                let rr = rr2.sqrt();
                let x = rr2 / (2.0 * a2);
                let inner = radial_integral * statrs::function::gamma::gamma_lr(s, x);
                let outer = a2 * (-x).exp();
                pref * (inner / rr.powi(l as i32 + 1) + rr.powi(l as i32) * outer)
                    * legendre(l, z / rr)
            }));
        }

        Ok(Self {
            options,
            kinetic,
            moment_weights,
            comp_density,
            comp_potential,
            comp_norm,
        })
    }

    pub fn options(&self) -> &HartreeOptions {
        &self.options
    }

    /// Solves `T V = 2π s` with hard walls in z, `T` the `m = 0` kinetic
    /// operator (so that `∇²V = −4πs`).
    fn solve_remainder(&self, source: &Array2<f64>) -> Array2<f64> {
        let mut out = source.mapv(|s| 2.0 * PI * s);
        self.kinetic
            .solve_in_place(out.as_slice_mut().expect("standard layout"));
        out
    }

    /// Multipole moments `q_ℓ = ∫ n r^ℓ P_ℓ(cos θ) d³r`.
    pub fn multipole_moments(&self, grid: &Grid, density: &Array2<f64>) -> Vec<f64> {
        self.moment_weights
            .iter()
            .map(|w| grid.integrate_unchecked((density * w).view()))
            .collect()
    }

    /// Hartree potential of `density` with its residual diagnostic.
    pub fn solve_with_residual(&self, grid: &Grid, density: &Array2<f64>) -> Result<HartreeSolution> {
        grid.check_shape(&density.view())?;
        let moments = self.multipole_moments(grid, density);
        let mut remainder = density.clone();
        let mut potential = Array2::zeros(grid.shape());
        for (l, q) in moments.iter().enumerate() {
            let c = q / self.comp_norm[l];
            if c != 0.0 {
                remainder.scaled_add(-c, &self.comp_density[l]);
                potential.scaled_add(c, &self.comp_potential[l]);
            }
        }
        let delta = self.solve_remainder(&remainder);

        // residual of the discrete equation T δV = 2π s
        let mut lhs = grid.zeros::<f64>();
        grid.add_kinetic_z(delta.view(), lhs.view_mut());
        grid.add_kinetic_rho(delta.view(), 0, lhs.view_mut());
        let mut num = 0.0;
        let mut den = 0.0;
        let w = grid.cell_weights();
        Zip::indexed(&lhs).and(&remainder).for_each(|(_, j), &l, &s| {
            let r = l - 2.0 * PI * s;
            num += w[j] * r * r;
            den += w[j] * (2.0 * PI * s).powi(2);
        });
        let relative_residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        if !(relative_residual <= self.options.tolerance) {
            return Err(Error::LinearSolve {
                residual: relative_residual,
            });
        }
        potential += &delta;
        Ok(HartreeSolution {
            potential,
            relative_residual,
        })
    }

    pub fn solve(&self, grid: &Grid, density: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.solve_with_residual(grid, density)?.potential)
    }
}

/// Hartree potential of the total density.
pub fn solve_hartree(density: &SpinDensity, grid: &Grid) -> Result<Array2<f64>> {
    HartreeSolver::new(grid)?.solve(grid, &density.total())
}

/// The static and instantaneous pieces of `V_eff`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialStack {
    pub ionic: Array2<f64>,
    pub hartree: Array2<f64>,
    pub xc_up: Array2<f64>,
    pub xc_down: Array2<f64>,
    /// `E(t)` multiplying z (length gauge only).
    pub laser_coefficient: f64,
}

impl PotentialStack {
    pub fn xc(&self, spin: Spin) -> &Array2<f64> {
        match spin {
            Spin::Up => &self.xc_up,
            Spin::Down => &self.xc_down,
        }
    }

    /// Local effective potential of one spin channel.
    pub fn effective(&self, grid: &Grid, spin: Spin) -> Array2<f64> {
        let mut v = &self.ionic + &self.hartree + self.xc(spin);
        if self.laser_coefficient != 0.0 {
            let e = self.laser_coefficient;
            for (mut row, z) in v.rows_mut().into_iter().zip(grid.z_points()) {
                row.iter_mut().for_each(|x| *x += e * z);
            }
        }
        v
    }
}

/// Builds the per-spin effective potentials `V_ion + V_H + V_xcσ + E(t) z`.
pub fn assemble_effective(
    grid: &Grid,
    ionic: &Array2<f64>,
    hartree: &Array2<f64>,
    xc: (&Array2<f64>, &Array2<f64>),
    laser_coefficient: f64,
) -> Result<[Array2<f64>; 2]> {
    for f in [ionic, hartree, xc.0, xc.1] {
        grid.check_shape(&f.view())?;
    }
    let stack = PotentialStack {
        ionic: ionic.clone(),
        hartree: hartree.clone(),
        xc_up: xc.0.clone(),
        xc_down: xc.1.clone(),
        laser_coefficient,
    };
    Ok([stack.effective(grid, Spin::Up), stack.effective(grid, Spin::Down)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::new(GridSpec::new(61, 0.2, 10, 0.35)).unwrap()
    }

    #[test]
    fn xlda_values() {
        assert_relative_eq!(xlda_potential(1.0f64), -1.240_700_981_798_799, epsilon = 1e-12);
        assert_eq!(xlda_potential(0.0f64), 0.0);
        assert_eq!(xlda_potential(-1e-20f64), 0.0);
        let n = 0.37f64;
        assert_relative_eq!(xlda_potential(8.0 * n), 2.0 * xlda_potential(n), epsilon = 1e-14);
        assert!((xlda_potential(1.0f32) + 1.2407).abs() < 1e-4);
    }

    #[test]
    fn exchange_energy_spin_sum() {
        let g = grid();
        let n = g.sample(|z, r| (-(z * z + r * r)).exp());
        let zero = SpinDensity::zeros(&g);
        assert_eq!(exchange_energy(&zero, &g).unwrap(), 0.0);
        let one = SpinDensity {
            up: n.clone(),
            down: g.zeros(),
        };
        let both = SpinDensity {
            up: n.clone(),
            down: n,
        };
        let e1 = exchange_energy(&one, &g).unwrap();
        let e2 = exchange_energy(&both, &g).unwrap();
        assert!(e1 < 0.0);
        assert_relative_eq!(e2, 2.0 * e1, epsilon = 1e-14);
    }

    #[test]
    fn ionic_single_centre_and_symmetry() {
        let g = grid();
        let h = MoleculeSpec::atom("H", 1.0);
        let v = eval_ionic(&h, &g);
        let iz = g.z_points().iter().position(|&z| (z - 1.0).abs() < 1e-12).unwrap();
        let r1 = g.rho_points()[0];
        assert_relative_eq!(v[[iz, 0]], -1.0 / (1.0 + r1 * r1).sqrt(), epsilon = 1e-14);

        let n2 = MoleculeSpec::nitrogen();
        let v = eval_ionic(&n2, &g);
        let mid = g.n_z() / 2;
        assert_relative_eq!(v[[mid, 0]], -14.0 / (1.037f64.powi(2) + r1 * r1).sqrt(), epsilon = 1e-13);
        for iz in 0..g.n_z() {
            for ir in 0..g.n_rho() {
                assert_eq!(v[[iz, ir]], v[[g.mirror_z(iz), ir]]);
                assert!(v[[iz, ir]] < 0.0 && v[[iz, ir]].is_finite());
            }
        }
    }

    #[test]
    fn molecule_presets() {
        let n2 = MoleculeSpec::nitrogen();
        assert_eq!(n2.electron_count(), 14.0);
        assert_relative_eq!(n2.bond_length(), 2.074);
        assert_relative_eq!(n2.nuclear_repulsion(), 49.0 / 2.074);
        n2.validate_homonuclear().unwrap();
        assert!(MoleculeSpec::atom("H", 1.0).validate_homonuclear().is_err());
        assert!(MoleculeSpec::homonuclear("X", 1, 0.0).is_err());
        assert!(MoleculeSpec::by_name("f2").is_some());
    }

    #[test]
    fn laser_parameters() {
        let p = LaserPulse::new(390.0, 1e14, 24.0);
        assert_eq!(laser_amplitude(&p, 0.0), 0.0);
        assert!((p.peak_field() - 0.05338).abs() < 5e-6);
        assert!((p.omega() - 0.11683).abs() < 5e-6);
        assert!((p.duration_fs() - 31.2).abs() < 0.05);
        assert!(laser_amplitude(&p, p.duration()).abs() < 1e-15);
        assert_eq!(laser_amplitude(&p, -1.0), 0.0);
        assert_eq!(laser_amplitude(&p, p.duration() + 1.0), 0.0);
        let e0 = p.peak_field();
        for k in 0..1000 {
            let t = p.duration() * k as f64 / 999.0;
            assert!(laser_amplitude(&p, t).abs() <= e0 * (1.0 + 1e-15));
        }
    }

    #[test]
    fn vector_potential_derivative_is_minus_field() {
        let p = LaserPulse::new(390.0, 2e14, 6.0);
        let h = 1e-3;
        for &t in &[10.0, 55.5, 100.0, 200.0] {
            let d = (p.vector_potential(t + h) - p.vector_potential(t - h)) / (2.0 * h);
            assert!((d + p.field(t)).abs() < 1e-8, "t={t}");
        }
        // sin² pulses with integer cycles end with A ≈ 0
        assert!(p.vector_potential(p.duration()).abs() < 1e-10);
    }

    #[test]
    fn trapezoid_envelope() {
        let mut p = LaserPulse::new(800.0, 1e14, 10.0);
        p.envelope = Envelope::Trapezoid { ramp_cycles: 2.0 };
        p.validate().unwrap();
        assert_relative_eq!(p.envelope_at(p.duration() / 2.0), 1.0);
        assert_relative_eq!(p.envelope_at(p.period()), 0.5, epsilon = 1e-12);
        p.envelope = Envelope::Trapezoid { ramp_cycles: 6.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn effective_potential_assembly() {
        let g = grid();
        let z = g.zeros::<f64>();
        let [u, d] = assemble_effective(&g, &z, &z, (&z, &z), 0.0).unwrap();
        assert!(u.iter().chain(d.iter()).all(|&x| x == 0.0));

        let ion = eval_ionic(&MoleculeSpec::nitrogen(), &g);
        let h1 = g.sample(|z, r| 1.0 / (1.0 + z * z + r * r));
        let h2 = g.sample(|z, _| 0.1 * z.cos());
        let x = g.sample(|_, r| -0.2 * (-r).exp());
        let [a, _] = assemble_effective(&g, &ion, &h1, (&x, &x), 0.01).unwrap();
        let [b, _] = assemble_effective(&g, &ion, &h2, (&x, &x), 0.01).unwrap();
        let diff = &a - &b;
        let expect = &h1 - &h2;
        for (p, q) in diff.iter().zip(expect.iter()) {
            assert!((p - q).abs() < 1e-13);
        }
        let bad = Array2::<f64>::zeros((2, 2));
        assert!(assemble_effective(&g, &bad, &z, (&z, &z), 0.0).is_err());
    }

    #[test]
    fn legendre_values() {
        assert_relative_eq!(legendre(2, 0.5), -0.125);
        assert_relative_eq!(legendre(3, 0.5), -0.4375);
        assert_relative_eq!(legendre(4, 1.0), 1.0);
    }

    fn erf_oracle(s: f64, centre: f64, z: f64, r: f64) -> f64 {
        let d = ((z - centre).powi(2) + r * r).sqrt();
        if d < 1e-12 {
            2.0 / (s * PI.sqrt())
        } else {
            statrs::function::erf::erf(d / s) / d
        }
    }

    #[test]
    fn hartree_gaussian_matches_erf() {
        let g = Grid::new(GridSpec::new(401, 0.05, 30, 0.25)).unwrap();
        let s = 0.7;
        let norm = 1.0 / (PI.powf(1.5) * s * s * s);
        let shifted = [(0.0, 1.0), (-0.8, 0.5), (0.8, 0.5)];
        for cases in [&shifted[..1], &shifted[1..]] {
            let n: Array2<f64> = g.sample(|z, r| {
                cases
                    .iter()
                    .map(|(c, q)| q * norm * (-((z - c).powi(2) + r * r) / (s * s)).exp())
                    .sum()
            });
            let solver = HartreeSolver::new(&g).unwrap();
            let sol = solver.solve_with_residual(&g, &n).unwrap();
            assert!(sol.relative_residual < 1e-10);
            let exact: Array2<f64> = g.sample(|z, r| cases.iter().map(|(c, q)| q * erf_oracle(s, *c, z, r)).sum::<f64>());
            let err = (&sol.potential - &exact).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            let scale = exact.fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(err / scale < 1e-6, "relative error {}", err / scale);
        }
    }

    #[test]
    fn hartree_of_zero_density_is_zero() {
        let g = grid();
        let v = HartreeSolver::new(&g).unwrap().solve(&g, &g.zeros()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }
}
