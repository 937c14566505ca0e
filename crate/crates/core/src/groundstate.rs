//! Self-consistent ground state, total energy and ΔSCF ionisation potentials.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, Orbital, Spin};
use crate::hamiltonian::{ChannelHamiltonian, KineticSolver};
use crate::linalg::{lobpcg, lowest_eigenpairs, LanczosOptions, LobpcgOptions};
use crate::potentials::{
    eval_ionic, eval_xlda, exchange_energy, HartreeSolver, MoleculeSpec, SpinDensity,
};
use crate::units;

/// Molecular-orbital symmetry label such as `3sg` or `1pu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymmetryLabel {
    /// Principal index within its symmetry (1-based).
    pub n: u32,
    /// `|m|`: 0 for σ, 1 for π, 2 for δ.
    pub lambda: u32,
    pub gerade: bool,
}

impl SymmetryLabel {
    pub fn new(n: u32, lambda: u32, gerade: bool) -> Self {
        Self { n, lambda, gerade }
    }

    /// Parity under `z → −z` of the `(z, ρ)` part of the orbital:
    /// inversion parity times `(−1)^|m|`.
    pub fn z_parity(&self) -> i32 {
        let inv = if self.gerade { 1 } else { -1 };
        if self.lambda % 2 == 0 {
            inv
        } else {
            -inv
        }
    }

    /// Inverse of [`SymmetryLabel::z_parity`].
    pub fn from_z_parity(n: u32, lambda: u32, z_parity: i32) -> Self {
        let odd_lambda = lambda % 2 == 1;
        Self::new(n, lambda, (z_parity > 0) != odd_lambda)
    }
}

impl fmt::Display for SymmetryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = match self.lambda {
            0 => 's',
            1 => 'p',
            2 => 'd',
            _ => 'f',
        };
        write!(f, "{}{}{}", self.n, l, if self.gerade { 'g' } else { 'u' })
    }
}

impl FromStr for SymmetryLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidOccupation(format!("cannot parse orbital label '{s}'"));
        let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
        let rest = &s[digits.len()..];
        let n: u32 = digits.parse().map_err(|_| bad())?;
        let mut chars = rest.chars();
        let lambda = match chars.next() {
            Some('s') => 0,
            Some('p') => 1,
            Some('d') => 2,
            Some('f') => 3,
            _ => return Err(bad()),
        };
        let gerade = match chars.next() {
            Some('g') => true,
            Some('u') => false,
            _ => return Err(bad()),
        };
        if n == 0 || chars.next().is_some() {
            return Err(bad());
        }
        Ok(Self { n, lambda, gerade })
    }
}

/// One spin-orbital of an occupation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupiedOrbital {
    pub label: String,
    pub m: i32,
    pub spin: Spin,
    pub occupation: u8,
}

impl OccupiedOrbital {
    pub fn new(label: &str, m: i32, spin: Spin) -> Self {
        Self {
            label: label.to_string(),
            m,
            spin,
            occupation: 1,
        }
    }

    pub fn symmetry(&self) -> Result<SymmetryLabel> {
        self.label.parse()
    }

    pub fn key(&self) -> String {
        crate::grid::spin_orbital_key(&self.label, self.m, self.spin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    Singlet,
    Doublet,
    Triplet,
}

/// Ordered list of occupied spin-orbitals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSpec {
    pub name: String,
    pub multiplicity: Multiplicity,
    /// Net charge of the system (0 for neutral, 1 for a cation).
    pub charge: i32,
    pub entries: Vec<OccupiedOrbital>,
}

fn both_spins(out: &mut Vec<OccupiedOrbital>, label: &str, m: i32) {
    out.push(OccupiedOrbital::new(label, m, Spin::Up));
    out.push(OccupiedOrbital::new(label, m, Spin::Down));
}

fn sigma_core(out: &mut Vec<OccupiedOrbital>) {
    for l in ["1sg", "1su", "2sg", "2su", "3sg"] {
        both_spins(out, l, 0);
    }
}

impl OccupationSpec {
    /// `1σg² 1σu² 2σg² 2σu² 1πu⁴ 3σg²`.
    pub fn nitrogen() -> Self {
        let mut e = Vec::new();
        sigma_core(&mut e);
        both_spins(&mut e, "1pu", 1);
        both_spins(&mut e, "1pu", -1);
        Self {
            name: "neutral".into(),
            multiplicity: Multiplicity::Singlet,
            charge: 0,
            entries: e,
        }
    }

    /// Triplet O₂: the two `1πg` electrons spin-up in `m = ±1`.
    pub fn oxygen_triplet() -> Self {
        let mut e = Self::nitrogen().entries;
        e.push(OccupiedOrbital::new("1pg", 1, Spin::Up));
        e.push(OccupiedOrbital::new("1pg", -1, Spin::Up));
        Self {
            name: "triplet".into(),
            multiplicity: Multiplicity::Triplet,
            charge: 0,
            entries: e,
        }
    }

    /// Singlet O₂: both `1πg` electrons spin-paired in `m = +1`.
    pub fn oxygen_singlet() -> Self {
        let mut e = Self::nitrogen().entries;
        both_spins(&mut e, "1pg", 1);
        Self {
            name: "singlet".into(),
            multiplicity: Multiplicity::Singlet,
            charge: 0,
            entries: e,
        }
    }

    /// Closed-shell F₂ with `1πg⁴`.
    pub fn fluorine() -> Self {
        let mut e = Self::nitrogen().entries;
        both_spins(&mut e, "1pg", 1);
        both_spins(&mut e, "1pg", -1);
        Self {
            name: "neutral".into(),
            multiplicity: Multiplicity::Singlet,
            charge: 0,
            entries: e,
        }
    }

    /// A single spin-up electron in `1σg` (one-electron tests).
    pub fn single_electron(charge: i32) -> Self {
        Self {
            name: "one-electron".into(),
            multiplicity: Multiplicity::Doublet,
            charge,
            entries: vec![OccupiedOrbital::new("1sg", 0, Spin::Up)],
        }
    }

    /// Built-in configuration by molecule and variant name
    /// (`neutral`, `triplet`, `singlet`, `cation`, `singlet_cation`).
    pub fn builtin(molecule: &str, variant: &str) -> Result<Self> {
        let mol = molecule.to_ascii_uppercase();
        let neutral = match (mol.as_str(), variant) {
            ("N2", "neutral" | "cation") => Self::nitrogen(),
            ("F2", "neutral" | "cation") => Self::fluorine(),
            ("O2", "triplet" | "neutral" | "cation") => Self::oxygen_triplet(),
            ("O2", "singlet" | "singlet_cation") => Self::oxygen_singlet(),
            _ => {
                return Err(Error::InvalidOccupation(format!(
                    "no built-in occupation '{variant}' for {molecule}"
                )))
            }
        };
        if variant.ends_with("cation") {
            neutral.cation(&mol)
        } else {
            Ok(neutral)
        }
    }

    /// Removes the HOMO spin-orbital used for the ΔSCF cation of `molecule`.
    pub fn cation(&self, molecule: &str) -> Result<Self> {
        let (label, m, spin) = match (molecule.to_ascii_uppercase().as_str(), self.multiplicity) {
            ("N2", _) => ("3sg", 0, Spin::Down),
            ("O2", Multiplicity::Triplet) => ("1pg", -1, Spin::Up),
            ("O2", Multiplicity::Singlet) => ("1pg", 1, Spin::Down),
            ("F2", _) => ("1pg", -1, Spin::Down),
            _ => {
                return Err(Error::InvalidOccupation(format!(
                    "no HOMO rule for {molecule} ({:?})",
                    self.multiplicity
                )))
            }
        };
        let mut out = self.without(label, m, spin)?;
        out.name = format!("{}_cation", self.name).replace("neutral_", "");
        out.multiplicity = Multiplicity::Doublet;
        Ok(out)
    }

    /// Copy with one spin-orbital removed and the charge raised by one.
    pub fn without(&self, label: &str, m: i32, spin: Spin) -> Result<Self> {
        let idx = self
            .entries
            .iter()
            .position(|e| e.label == label && e.m == m && e.spin == spin && e.occupation > 0)
            .ok_or_else(|| {
                Error::InvalidOccupation(format!("{label} m={m} {} is not occupied", spin.tag()))
            })?;
        let mut out = self.clone();
        out.entries.remove(idx);
        out.charge += 1;
        Ok(out)
    }

    pub fn electron_count(&self) -> usize {
        self.entries.iter().map(|e| e.occupation as usize).sum()
    }

    pub fn spin_count(&self, spin: Spin) -> usize {
        self.entries
            .iter()
            .filter(|e| e.spin == spin)
            .map(|e| e.occupation as usize)
            .sum()
    }

    /// Checks labels, uniqueness, aufbau order and the electron count.
    pub fn validate(&self, molecule: &MoleculeSpec) -> Result<()> {
        let expected = molecule.electron_count() - self.charge as f64;
        if (self.electron_count() as f64 - expected).abs() > 1e-9 {
            return Err(Error::InvalidOccupation(format!(
                "{} electrons occupied but {} with charge {} has {}",
                self.electron_count(),
                molecule.name,
                self.charge,
                expected
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut sectors: BTreeMap<(i32, Spin, u32, bool), Vec<u32>> = BTreeMap::new();
        for e in &self.entries {
            if e.occupation > 1 {
                return Err(Error::InvalidOccupation(format!(
                    "spin-orbital {} has occupation {}",
                    e.key(),
                    e.occupation
                )));
            }
            let sym = e.symmetry()?;
            if sym.lambda != e.m.unsigned_abs() {
                return Err(Error::InvalidOccupation(format!(
                    "label {} is inconsistent with m = {}",
                    e.label, e.m
                )));
            }
            if !seen.insert((e.label.clone(), e.m, e.spin)) {
                return Err(Error::InvalidOccupation(format!("duplicate spin-orbital {}", e.key())));
            }
            if e.occupation == 1 {
                sectors
                    .entry((e.m, e.spin, sym.lambda, sym.gerade))
                    .or_default()
                    .push(sym.n);
            }
        }
        for ((m, spin, _, _), mut ns) in sectors {
            ns.sort_unstable();
            if ns.iter().enumerate().any(|(i, &n)| n != i as u32 + 1) {
                return Err(Error::InvalidOccupation(format!(
                    "channel m={m} {} skips a lower orbital of the same symmetry",
                    spin.tag()
                )));
            }
        }
        Ok(())
    }

    fn occupied(&self) -> impl Iterator<Item = &OccupiedOrbital> {
        self.entries.iter().filter(|e| e.occupation > 0)
    }
}

/// Electron–electron interaction used by the SCF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// Hartree plus exchange-only LDA.
    KohnSham,
    /// Independent electrons in the nuclear potential.
    None,
}

/// Eigensolver used for the channel Hamiltonians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    /// Block solver preconditioned with the exact inverse of `T + σ`.
    Lobpcg,
    /// Thick-restart Lanczos, unpreconditioned.
    Lanczos,
}

/// Shift σ (hartree) of the kinetic preconditioner.
const PRECONDITIONER_SHIFT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScfParams {
    pub mixing: f64,
    pub max_iterations: usize,
    /// Total-energy change (hartree) between iterations.
    pub energy_tol: f64,
    /// `∫|n_out − n_in| / N_e`.
    pub density_tol: f64,
    /// Relative eigenvector residual of the final diagonalisation.
    pub eigen_tol: f64,
    pub interaction: Interaction,
    pub eigensolver: EigenMethod,
}

impl Default for ScfParams {
    fn default() -> Self {
        Self {
            mixing: 0.3,
            max_iterations: 300,
            energy_tol: 1e-7,
            density_tol: 1e-5,
            eigen_tol: 1e-10,
            interaction: Interaction::KohnSham,
            eigensolver: EigenMethod::Lobpcg,
        }
    }
}

impl ScfParams {
    pub fn independent() -> Self {
        Self {
            interaction: Interaction::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "mixing must lie in (0, 1], got {}",
                self.mixing
            )));
        }
        if !(self.energy_tol > 0.0 && self.density_tol > 0.0 && self.eigen_tol > 0.0) {
            return Err(Error::InvalidInput("SCF tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Converged Kohn–Sham ground state.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub grid_spec: GridSpec,
    pub molecule: MoleculeSpec,
    pub occupation: OccupationSpec,
    pub interaction: Interaction,
    /// Occupied orbitals in the order of `occupation.entries`.
    pub orbitals: Vec<Orbital>,
    /// `⟨ψ|H[n]|ψ⟩` of each orbital in the converged density.
    pub energies: Vec<f64>,
    pub total_energy: f64,
    pub density: SpinDensity,
    pub iterations: usize,
    /// Lowest unoccupied eigenvalue of every solved `(|m|, spin, parity)`
    /// sector, keyed `"m1_up_odd"` etc.
    pub virtual_energies: BTreeMap<String, f64>,
}

impl GroundState {
    /// Energy of the highest occupied orbital.
    pub fn homo_energy(&self) -> f64 {
        self.energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn orbital(&self, key: &str) -> Option<(&Orbital, f64)> {
        self.orbitals
            .iter()
            .zip(&self.energies)
            .find(|(o, _)| o.key() == key)
            .map(|(o, &e)| (o, e))
    }
}

/// `Σ_i |ψ_i|²` per spin.
pub fn density_of(grid: &Grid, orbitals: &[Orbital]) -> SpinDensity {
    let mut d = SpinDensity::zeros(grid);
    for o in orbitals {
        let n = d.spin_mut(o.spin);
        ndarray::Zip::from(n)
            .and(&o.values)
            .for_each(|n, v| *n += v.norm_sqr());
    }
    d
}

/// Sum of Slater-type shell densities on each nucleus, split between spins
/// in proportion to `(n_up, n_down)`.
pub fn initial_density(
    molecule: &MoleculeSpec,
    grid: &Grid,
    n_up: usize,
    n_down: usize,
) -> SpinDensity {
    use std::f64::consts::PI;
    let total: Array2<f64> = grid.sample(|z, r| {
        molecule
            .nuclei
            .iter()
            .map(|nuc| {
                let zc = nuc.charge;
                let d = ((z - nuc.z).powi(2) + r * r).sqrt();
                let q1 = zc.min(2.0);
                let z1 = if zc > 1.0 { zc - 0.3 } else { zc };
                let mut rho = q1 * z1.powi(3) / PI * (-2.0 * z1 * d).exp();
                let q2 = zc - q1;
                if q2 > 0.0 {
                    let z2 = ((zc - 1.7 - 0.35 * (q2 - 1.0)) / 2.0).max(0.3);
                    rho += q2 * z2.powi(5) / (3.0 * PI) * d * d * (-2.0 * z2 * d).exp();
                }
                rho
            })
            .sum()
    });
    let norm = grid.integrate_unchecked(total.view());
    let scale = |n: usize| if norm > 0.0 { n as f64 / norm } else { 0.0 };
    SpinDensity {
        up: &total * scale(n_up),
        down: &total * scale(n_down),
    }
}

/// `(|m|, spin)` channel together with its per-parity occupied counts.
#[derive(Debug, Clone)]
struct Channel {
    lambda: u32,
    spin: Spin,
    /// occupied count in the even and odd z-parity sectors
    occupied: [usize; 2],
}

fn channels(occ: &OccupationSpec) -> Result<Vec<Channel>> {
    let mut map: BTreeMap<(u32, Spin), [usize; 2]> = BTreeMap::new();
    for e in occ.occupied() {
        let sym = e.symmetry()?;
        let slot = if sym.z_parity() > 0 { 0 } else { 1 };
        let c = map.entry((sym.lambda, e.spin)).or_insert([0, 0]);
        c[slot] = c[slot].max(sym.n as usize);
    }
    Ok(map
        .into_iter()
        .map(|((lambda, spin), occupied)| Channel {
            lambda,
            spin,
            occupied,
        })
        .collect())
}

/// Eigenvectors of one parity sector, lowest first.
#[derive(Debug, Clone, Default)]
struct Sector {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

fn project_slice(grid: &Grid, v: &mut [f64], parity: i32) {
    let (nz, nr) = grid.shape();
    for iz in 0..nz / 2 {
        let jz = nz - 1 - iz;
        for ir in 0..nr {
            let a = v[iz * nr + ir];
            let b = v[jz * nr + ir];
            let (x, y) = if parity > 0 {
                let s = 0.5 * (a + b);
                (s, s)
            } else {
                let d = 0.5 * (a - b);
                (d, -d)
            };
            v[iz * nr + ir] = x;
            v[jz * nr + ir] = y;
        }
    }
    if parity < 0 {
        let mid = nz / 2;
        v[mid * nr..(mid + 1) * nr].iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Deterministic sign: the largest-magnitude entry is made positive.
fn fix_sign(v: &mut [f64]) {
    let big = v
        .iter()
        .cloned()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_sector(
    grid: &Grid,
    potential: &[f64],
    lambda: u32,
    parity: i32,
    nev: usize,
    warm: &Sector,
    tol: f64,
    preconditioner: Option<&KineticSolver>,
) -> Result<Sector> {
    let h = ChannelHamiltonian::new(grid, potential, lambda as i32);
    let nr = grid.n_rho();
    let weights: Vec<f64> = (0..grid.len()).map(|i| grid.cell_weights()[i % nr]).collect();
    let project = |v: &mut [f64]| project_slice(grid, v, parity);
    let pairs = match preconditioner {
        Some(k) => lobpcg(
            |x, y| h.apply(x, y),
            |r| k.solve_in_place(r),
            &weights,
            nev,
            &warm.vectors,
            project,
            &LobpcgOptions {
                tol,
                ..LobpcgOptions::default()
            },
        )?,
        None => lowest_eigenpairs(
            |x, y| h.apply(x, y),
            &weights,
            nev,
            &warm.vectors,
            project,
            &LanczosOptions {
                tol,
                ..LanczosOptions::default()
            },
        )?,
    };
    log::trace!(
        "sector m={lambda} parity={parity}: {} matvecs, residual {:.1e}",
        pairs.matvecs,
        pairs.residuals.iter().cloned().fold(0.0, f64::max)
    );
    let mut vectors = pairs.vectors;
    vectors.iter_mut().for_each(|v| fix_sign(v));
    Ok(Sector {
        values: pairs.values,
        vectors,
    })
}

/// Everything the SCF produces from one input density.
struct Diagonalisation {
    sectors: BTreeMap<(u32, Spin, i32), Sector>,
}

fn diagonalise(
    grid: &Grid,
    potentials: &[Vec<f64>; 2],
    chans: &[Channel],
    warm: &BTreeMap<(u32, Spin, i32), Sector>,
    tol: f64,
    preconditioners: &BTreeMap<u32, KineticSolver>,
) -> Result<Diagonalisation> {
    let jobs: Vec<(u32, Spin, i32, usize)> = chans
        .iter()
        .flat_map(|c| {
            [(1, c.occupied[0]), (-1, c.occupied[1])]
                .into_iter()
                .map(move |(p, k)| (c.lambda, c.spin, p, k + 1))
        })
        .collect();
    let empty = Sector::default();
    let solved: Vec<_> = jobs
        .par_iter()
        .map(|&(lambda, spin, parity, nev)| {
            let w = warm.get(&(lambda, spin, parity)).unwrap_or(&empty);
            solve_sector(
                grid,
                &potentials[spin.index()],
                lambda,
                parity,
                nev,
                w,
                tol,
                preconditioners.get(&lambda),
            )
                .map(|s| ((lambda, spin, parity), s))
        })
        .collect::<Result<_>>()?;
    Ok(Diagonalisation {
        sectors: solved.into_iter().collect(),
    })
}

fn orbitals_from(
    grid: &Grid,
    occ: &OccupationSpec,
    diag: &Diagonalisation,
) -> Result<Vec<Orbital>> {
    let shape = grid.shape();
    occ.occupied()
        .map(|e| {
            let sym = e.symmetry()?;
            let sector = &diag.sectors[&(sym.lambda, e.spin, sym.z_parity())];
            let v = sector.vectors.get(sym.n as usize - 1).ok_or_else(|| {
                Error::InvalidOccupation(format!("sector for {} has too few states", e.key()))
            })?;
            let values = Array2::from_shape_vec(shape, v.iter().map(|&x| Complex64::new(x, 0.0)).collect())
                .expect("vector length matches grid");
            Ok(Orbital::new(values, e.spin, e.m, e.label.clone()))
        })
        .collect()
}

/// Static potentials generated by a density.
pub(crate) struct Fields {
    pub(crate) hartree: Array2<f64>,
    pub(crate) xc: [Array2<f64>; 2],
}

pub(crate) fn fields(
    grid: &Grid,
    hartree: Option<&HartreeSolver>,
    density: &SpinDensity,
) -> Result<Fields> {
    match hartree {
        Some(solver) => {
            let vh = solver.solve(grid, &density.total())?;
            let (xu, xd) = eval_xlda(density);
            Ok(Fields {
                hartree: vh,
                xc: [xu, xd],
            })
        }
        None => Ok(Fields {
            hartree: grid.zeros(),
            xc: [grid.zeros(), grid.zeros()],
        }),
    }
}

pub(crate) fn effective(ionic: &Array2<f64>, f: &Fields) -> [Vec<f64>; 2] {
    let base = ionic + &f.hartree;
    [
        (&base + &f.xc[0]).into_raw_vec_and_offset().0,
        (&base + &f.xc[1]).into_raw_vec_and_offset().0,
    ]
}

/// `⟨ψ|H|ψ⟩` for a real-valued or complex orbital.
fn expectation(grid: &Grid, potential: &[f64], orbital: &Orbital) -> f64 {
    let h = ChannelHamiltonian::new(grid, potential, orbital.m);
    let psi = orbital.values.as_standard_layout();
    let psi = psi.as_slice().expect("contiguous");
    let mut hpsi = vec![Complex64::new(0.0, 0.0); psi.len()];
    h.apply(psi, &mut hpsi);
    let nr = grid.n_rho();
    let w = grid.cell_weights();
    psi.iter()
        .zip(&hpsi)
        .enumerate()
        .map(|(i, (a, b))| (a.conj() * b).re * w[i % nr])
        .sum()
}

/// Energy breakdown of a Kohn–Sham state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub eigenvalue_sum: f64,
    pub hartree: f64,
    pub xc_potential: f64,
    pub exchange: f64,
    pub nuclear_repulsion: f64,
    pub total: f64,
}

fn energy_terms(
    grid: &Grid,
    molecule: &MoleculeSpec,
    orbitals: &[Orbital],
    ionic: &Array2<f64>,
    hartree: Option<&HartreeSolver>,
) -> Result<(EnergyTerms, Vec<f64>)> {
    let density = density_of(grid, orbitals);
    let f = fields(grid, hartree, &density)?;
    let v = effective(ionic, &f);
    let energies: Vec<f64> = orbitals
        .par_iter()
        .map(|o| expectation(grid, &v[o.spin.index()], o))
        .collect();
    let eigenvalue_sum = energies.iter().sum();
    let (eh, exc_pot, ex) = if hartree.is_some() {
        let eh = 0.5 * grid.integrate_unchecked((&density.total() * &f.hartree).view());
        let exc = grid.integrate_unchecked((&density.up * &f.xc[0]).view())
            + grid.integrate_unchecked((&density.down * &f.xc[1]).view());
        (eh, exc, exchange_energy(&density, grid)?)
    } else {
        (0.0, 0.0, 0.0)
    };
    let nuclear_repulsion = molecule.nuclear_repulsion();
    let total = eigenvalue_sum - eh - exc_pot + ex + nuclear_repulsion;
    Ok((
        EnergyTerms {
            eigenvalue_sum,
            hartree: eh,
            xc_potential: exc_pot,
            exchange: ex,
            nuclear_repulsion,
            total,
        },
        energies,
    ))
}

/// `E = Σε_i − ½∫nV_H − Σ_σ∫n_σV_xσ + E_x + Σ Z_I Z_J / R_IJ`, with the
/// orbital energies and potentials evaluated in the state's own density.
pub fn total_energy(state: &GroundState, grid: &Grid) -> Result<EnergyTerms> {
    let ionic = eval_ionic(&state.molecule, grid);
    let solver = match state.interaction {
        Interaction::KohnSham => Some(HartreeSolver::new(grid)?),
        Interaction::None => None,
    };
    Ok(energy_terms(grid, &state.molecule, &state.orbitals, &ionic, solver.as_ref())?.0)
}

fn density_change(grid: &Grid, a: &SpinDensity, b: &SpinDensity, ne: f64) -> f64 {
    let d = (&a.up - &b.up).mapv(f64::abs) + (&a.down - &b.down).mapv(f64::abs);
    grid.integrate_unchecked(d.view()) / ne.max(1.0)
}

/// Self-consistent field solution for `occupation` of `molecule`.
pub fn scf_solve(
    molecule: &MoleculeSpec,
    occupation: &OccupationSpec,
    grid: &Grid,
    params: &ScfParams,
) -> Result<GroundState> {
    scf_solve_from(molecule, occupation, grid, params, None)
}

/// As [`scf_solve`], optionally starting from the orbitals of a related state.
pub fn scf_solve_from(
    molecule: &MoleculeSpec,
    occupation: &OccupationSpec,
    grid: &Grid,
    params: &ScfParams,
    start: Option<&GroundState>,
) -> Result<GroundState> {
    params.validate()?;
    occupation.validate(molecule)?;
    if !molecule.is_inversion_symmetric() {
        return Err(Error::InvalidInput(format!(
            "molecule '{}' must be symmetric under z → −z",
            molecule.name
        )));
    }
    let chans = channels(occupation)?;
    let ionic = eval_ionic(molecule, grid);
    let solver = match params.interaction {
        Interaction::KohnSham => Some(HartreeSolver::new(grid)?),
        Interaction::None => None,
    };
    let ne = occupation.electron_count() as f64;
    let mut preconditioners = BTreeMap::new();
    if params.eigensolver == EigenMethod::Lobpcg {
        for c in &chans {
            if !preconditioners.contains_key(&c.lambda) {
                let k = KineticSolver::new(grid, c.lambda as i32, PRECONDITIONER_SHIFT)?;
                preconditioners.insert(c.lambda, k);
            }
        }
    }

    let mut warm: BTreeMap<(u32, Spin, i32), Sector> = BTreeMap::new();
    let mut n_in = match start {
        Some(s) => {
            for (o, e) in s.orbitals.iter().zip(&s.energies) {
                let sym = o.label.parse::<SymmetryLabel>()?;
                if o.m < 0 {
                    continue;
                }
                let sec = warm.entry((sym.lambda, o.spin, sym.z_parity())).or_default();
                sec.values.push(*e);
                sec.vectors.push(o.values.iter().map(|c| c.re).collect());
            }
            s.density.clone()
        }
        None => initial_density(
            molecule,
            grid,
            occupation.spin_count(Spin::Up),
            occupation.spin_count(Spin::Down),
        ),
    };

    let mut last_energy = f64::INFINITY;
    let mut d_change = f64::INFINITY;
    let mut e_change = f64::INFINITY;
    let mut polishing = false;
    for iter in 1..=params.max_iterations {
        let f = fields(grid, solver.as_ref(), &n_in)?;
        let v = effective(&ionic, &f);
        let tol = if polishing {
            params.eigen_tol
        } else {
            params.eigen_tol.max((1e-2 * d_change).min(1e-5))
        };
        let diag = diagonalise(grid, &v, &chans, &warm, tol, &preconditioners)?;
        let orbitals = orbitals_from(grid, occupation, &diag)?;
        let n_out = density_of(grid, &orbitals);
        let (terms, energies) = energy_terms(grid, molecule, &orbitals, &ionic, solver.as_ref())?;
        d_change = density_change(grid, &n_in, &n_out, ne);
        e_change = (terms.total - last_energy).abs();
        last_energy = terms.total;
        log::debug!(
            "scf {} iter {iter}: E = {:.10} dE = {e_change:.2e} dn = {d_change:.2e}",
            molecule.name,
            terms.total
        );
        warm = diag.sectors;
        let converged = polishing
            || (e_change < params.energy_tol && d_change < params.density_tol)
            || (params.interaction == Interaction::None && iter > 1);
        if converged && tol <= params.eigen_tol {
            let mut virtual_energies = BTreeMap::new();
            for c in &chans {
                for (slot, parity) in [(0usize, 1i32), (1, -1)] {
                    if let Some(&e) = warm[&(c.lambda, c.spin, parity)].values.get(c.occupied[slot]) {
                        let tag = if parity > 0 { "even" } else { "odd" };
                        virtual_energies.insert(format!("m{}_{}_{}", c.lambda, c.spin.tag(), tag), e);
                    }
                }
            }
            return Ok(GroundState {
                grid_spec: *grid.spec(),
                molecule: molecule.clone(),
                occupation: occupation.clone(),
                interaction: params.interaction,
                orbitals,
                energies,
                total_energy: terms.total,
                density: n_out,
                iterations: iter,
                virtual_energies,
            });
        }
        if converged {
            // one more diagonalisation of the same input density at the tight tolerance
            polishing = true;
            continue;
        }
        let a = params.mixing;
        n_in.up = &n_in.up * (1.0 - a) + &n_out.up * a;
        n_in.down = &n_in.down * (1.0 - a) + &n_out.down * a;
    }
    Err(Error::ScfNotConverged {
        iterations: params.max_iterations,
        energy_change: e_change,
        density_change: d_change,
    })
}

/// Energies of the neutral and cation and their difference.
#[derive(Debug, Clone)]
pub struct DeltaScf {
    pub neutral: GroundState,
    pub cation: GroundState,
    pub ip_hartree: f64,
    pub ip_ev: f64,
}

/// ΔSCF ionisation potential `E(cation) − E(neutral)`.
pub fn delta_scf(
    molecule: &MoleculeSpec,
    neutral_occ: &OccupationSpec,
    cation_occ: &OccupationSpec,
    grid: &Grid,
    params: &ScfParams,
) -> Result<DeltaScf> {
    if cation_occ.electron_count() + 1 != neutral_occ.electron_count()
        || cation_occ.charge != neutral_occ.charge + 1
        || !cation_occ.entries.iter().all(|c| neutral_occ.entries.contains(c))
    {
        return Err(Error::InvalidOccupation(
            "cation occupation must be the neutral one minus a single spin-orbital".into(),
        ));
    }
    let neutral = scf_solve(molecule, neutral_occ, grid, params)?;
    let cation = scf_solve_from(molecule, cation_occ, grid, params, Some(&neutral))?;
    let ip = cation.total_energy - neutral.total_energy;
    Ok(DeltaScf {
        neutral,
        cation,
        ip_hartree: ip,
        ip_ev: units::hartree_to_ev(ip),
    })
}

/// ΔSCF ionisation potential in eV.
pub fn ionization_potential(
    molecule: &MoleculeSpec,
    neutral_occ: &OccupationSpec,
    cation_occ: &OccupationSpec,
    grid: &Grid,
    params: &ScfParams,
) -> Result<f64> {
    Ok(delta_scf(molecule, neutral_occ, cation_occ, grid, params)?.ip_ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn label_round_trip_and_parity() {
        for s in ["1sg", "3sg", "2su", "1pu", "1pg", "1dg"] {
            let l: SymmetryLabel = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
        }
        assert_eq!("1sg".parse::<SymmetryLabel>().unwrap().z_parity(), 1);
        assert_eq!("1su".parse::<SymmetryLabel>().unwrap().z_parity(), -1);
        assert_eq!("1pu".parse::<SymmetryLabel>().unwrap().z_parity(), 1);
        assert_eq!("1pg".parse::<SymmetryLabel>().unwrap().z_parity(), -1);
        for bad in ["", "sg", "0sg", "1xg", "1s", "1sgx"] {
            assert!(bad.parse::<SymmetryLabel>().is_err(), "{bad}");
        }
        assert_eq!(SymmetryLabel::from_z_parity(1, 1, -1).to_string(), "1pg");
    }

    #[test]
    fn builtin_occupations_are_consistent() {
        let n2 = MoleculeSpec::nitrogen();
        let o2 = MoleculeSpec::oxygen();
        let f2 = MoleculeSpec::fluorine();
        let occ = OccupationSpec::nitrogen();
        occ.validate(&n2).unwrap();
        assert_eq!((occ.spin_count(Spin::Up), occ.spin_count(Spin::Down)), (7, 7));
        let t = OccupationSpec::oxygen_triplet();
        t.validate(&o2).unwrap();
        assert_eq!((t.spin_count(Spin::Up), t.spin_count(Spin::Down)), (9, 7));
        let s = OccupationSpec::oxygen_singlet();
        s.validate(&o2).unwrap();
        assert_eq!((s.spin_count(Spin::Up), s.spin_count(Spin::Down)), (8, 8));
        OccupationSpec::fluorine().validate(&f2).unwrap();
        for (mol, spec, variants) in [
            ("N2", &n2, &["neutral", "cation"][..]),
            ("O2", &o2, &["triplet", "singlet", "cation", "singlet_cation"][..]),
            ("F2", &f2, &["neutral", "cation"][..]),
        ] {
            for v in variants {
                OccupationSpec::builtin(mol, v).unwrap().validate(spec).unwrap();
            }
        }
        let c = OccupationSpec::builtin("O2", "cation").unwrap();
        assert_eq!(c.electron_count(), 15);
        assert!(OccupationSpec::builtin("N2", "singlet").is_err());
    }

    #[test]
    fn occupation_validation_errors() {
        let n2 = MoleculeSpec::nitrogen();
        let mut occ = OccupationSpec::nitrogen();
        occ.entries.pop();
        assert!(occ.validate(&n2).is_err());
        let mut skip = OccupationSpec::nitrogen();
        skip.entries.retain(|e| e.label != "2sg");
        skip.entries.push(OccupiedOrbital::new("4sg", 0, Spin::Up));
        skip.entries.push(OccupiedOrbital::new("5sg", 0, Spin::Down));
        assert!(skip.validate(&n2).is_err());
        let mut dup = OccupationSpec::nitrogen();
        dup.entries.pop();
        dup.entries.push(OccupiedOrbital::new("3sg", 0, Spin::Up));
        assert!(dup.validate(&n2).is_err());
        let mut wrong_m = OccupationSpec::nitrogen();
        wrong_m.entries[0].m = 1;
        assert!(wrong_m.validate(&n2).is_err());
    }

    #[test]
    fn initial_guess_counts_electrons() {
        let g = Grid::new(GridSpec::new(201, 0.1, 24, 0.3)).unwrap();
        let d = initial_density(&MoleculeSpec::oxygen(), &g, 9, 7);
        assert_relative_eq!(g.integrate(&d.up).unwrap(), 9.0, epsilon = 1e-10);
        assert_relative_eq!(g.integrate(&d.down).unwrap(), 7.0, epsilon = 1e-10);
    }

    #[test]
    fn hydrogen_independent_electron() {
        let g = Grid::new(GridSpec::new(241, 0.1, 20, 0.3)).unwrap();
        let h = MoleculeSpec::atom("H", 1.0);
        let occ = OccupationSpec::single_electron(0);
        let gs = scf_solve(&h, &occ, &g, &ScfParams::independent()).unwrap();
        assert!((gs.energies[0] + 0.5).abs() < 5e-3, "{}", gs.energies[0]);
        assert_relative_eq!(gs.total_energy, gs.energies[0], epsilon = 1e-12);
        // virial: <T> = -E
        let t = g.apply_kinetic(&gs.orbitals[0].values, 0).unwrap();
        let kin = g.inner(&gs.orbitals[0].values, &t).re;
        assert!((kin + gs.total_energy).abs() < 1e-2, "T = {kin}");
        assert!(gs.virtual_energies["m0_up_odd"] > gs.energies[0]);
    }
}
