//! Analysis-box ionisation counters, ion probabilities and strong-field
//! diagnostics.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::potentials::LaserPulse;

/// Cylinder `|z| ≤ z_half_extent, ρ ≤ rho_extent` separating bound from
/// continuum density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBox {
    pub z_half_extent: f64,
    pub rho_extent: f64,
}

impl Default for AnalysisBox {
    fn default() -> Self {
        Self {
            z_half_extent: 20.0,
            rho_extent: 12.0,
        }
    }
}

impl AnalysisBox {
    pub fn new(z_half_extent: f64, rho_extent: f64) -> Self {
        Self {
            z_half_extent,
            rho_extent,
        }
    }

    /// Same box with both extents multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.z_half_extent * factor, self.rho_extent * factor)
    }

    /// Box must be non-degenerate and strictly inside the grid.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.z_half_extent > 0.0 && self.rho_extent > 0.0) {
            return Err(Error::InvalidInput("analysis box extents must be positive".into()));
        }
        if self.z_half_extent >= grid.z_max() || self.rho_extent >= grid.rho_max() {
            return Err(Error::InvalidInput(format!(
                "analysis box (|z| ≤ {}, ρ ≤ {}) is not inside the grid (|z| ≤ {}, ρ ≤ {:.3})",
                self.z_half_extent,
                self.rho_extent,
                grid.z_max(),
                grid.rho_max()
            )));
        }
        Ok(())
    }

    pub fn contains(&self, z: f64, rho: f64) -> bool {
        z.abs() <= self.z_half_extent && rho <= self.rho_extent
    }
}

/// Row ranges and radial cut-off of `bx` on `grid`.
fn box_indices(grid: &Grid, bx: &AnalysisBox) -> (usize, usize, usize) {
    let z = grid.z_points();
    let lo = z.iter().position(|&v| v >= -bx.z_half_extent).unwrap_or(z.len());
    let hi = z.iter().rposition(|&v| v <= bx.z_half_extent).map_or(0, |i| i + 1);
    let nr = grid.rho_points().iter().take_while(|&&r| r <= bx.rho_extent).count();
    (lo, hi.max(lo), nr)
}

/// `N_j = ∫_box |ψ_j|²`.
pub fn bound_population(values: &Array2<Complex64>, bx: &AnalysisBox, grid: &Grid) -> Result<f64> {
    bx.validate(grid)?;
    grid.check_shape(&values.view())?;
    let v = values.as_standard_layout();
    Ok(box_population(v.as_slice().expect("standard layout"), bx, grid))
}

/// Box quadrature of a row-major `(n_z, n_ρ)` field.
pub(crate) fn box_population(values: &[Complex64], bx: &AnalysisBox, grid: &Grid) -> f64 {
    let (lo, hi, nr) = box_indices(grid, bx);
    let n_rho = grid.n_rho();
    let w = &grid.cell_weights()[..nr];
    let mut acc = 0.0;
    for iz in lo..hi {
        let row = &values[iz * n_rho..iz * n_rho + nr];
        for (v, w) in row.iter().zip(w) {
            acc += v.norm_sqr() * w;
        }
    }
    acc
}

/// Charge-state probabilities built from per-spin-orbital bound fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonProbabilities<T> {
    pub p0: T,
    pub p1: T,
    /// `1 − P⁰ − P¹`.
    pub p2plus: T,
}

/// `P⁰ = Π N_j`, `P¹ = Σ_n (1 − N_n) Π_{j≠n} N_j` over all spin-orbitals.
pub fn ion_probabilities<T: Float>(populations: &[T]) -> Result<IonProbabilities<T>> {
    let slack = T::epsilon() * T::from(64.0).unwrap();
    let mut n = Vec::with_capacity(populations.len());
    for &p in populations {
        if !(p >= -slack && p <= T::one() + slack) {
            return Err(Error::InvalidInput(format!(
                "bound fraction {:?} outside [0, 1]",
                p.to_f64()
            )));
        }
        n.push(p.max(T::zero()).min(T::one()));
    }
    // prefix[i] = Π_{j<i} N_j, suffix[i] = Π_{j≥i} N_j
    let len = n.len();
    let mut prefix = vec![T::one(); len + 1];
    for i in 0..len {
        prefix[i + 1] = prefix[i] * n[i];
    }
    let mut suffix = vec![T::one(); len + 1];
    for i in (0..len).rev() {
        suffix[i] = suffix[i + 1] * n[i];
    }
    let p0 = prefix[len];
    let mut p1 = T::zero();
    for i in 0..len {
        p1 = p1 + prefix[i] * suffix[i + 1] * (T::one() - n[i]);
    }
    let p2plus = (T::one() - p0 - p1).max(T::zero());
    Ok(IonProbabilities { p0, p1, p2plus })
}

/// Ponderomotive energy `E₀²/(4ω²)` (hartree).
pub fn ponderomotive_energy(pulse: &LaserPulse) -> f64 {
    pulse.ponderomotive_energy()
}

/// Keldysh parameter `√(I_p / 2U_p)` with `I_p` in hartree.
pub fn keldysh(ip: f64, pulse: &LaserPulse) -> f64 {
    (ip / (2.0 * pulse.ponderomotive_energy())).sqrt()
}

/// Outcome of the interference estimate for an `N`-photon channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum Interference {
    Open { k_n: f64, k_n_r: f64 },
    Closed,
}

/// `k_N R` with `k_N² / 2 = Nω − U_p − I_p`.
pub fn interference_parameter(photons: u32, pulse: &LaserPulse, ip: f64, bond_length: f64) -> Interference {
    let excess = photons as f64 * pulse.omega() - pulse.ponderomotive_energy() - ip;
    if excess < 0.0 {
        Interference::Closed
    } else {
        let k = (2.0 * excess).sqrt();
        Interference::Open {
            k_n: k,
            k_n_r: k * bond_length,
        }
    }
}

/// Strong-field parameters of one molecule/pulse pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticParams {
    pub ip: f64,
    pub omega: f64,
    pub ponderomotive: f64,
    pub keldysh: f64,
    /// Smallest photon number with an open channel.
    pub photon_order: u32,
    pub k_n: f64,
    pub k_n_r: f64,
}

pub fn diagnostics(ip: f64, pulse: &LaserPulse, bond_length: f64) -> DiagnosticParams {
    let up = pulse.ponderomotive_energy();
    let omega = pulse.omega();
    let n = ((ip + up) / omega).ceil().max(1.0) as u32;
    let (k_n, k_n_r) = match interference_parameter(n, pulse, ip, bond_length) {
        Interference::Open { k_n, k_n_r } => (k_n, k_n_r),
        // only reachable through rounding at the exact threshold
        Interference::Closed => (0.0, 0.0),
    };
    DiagnosticParams {
        ip,
        omega,
        ponderomotive: up,
        keldysh: keldysh(ip, pulse),
        photon_order: n,
        k_n,
        k_n_r,
    }
}

/// Time series of per-spin-orbital bound fractions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PopulationTrace {
    /// Spin-orbital keys such as `3sg_up` or `1pu+1_dn`.
    pub keys: Vec<String>,
    pub times: Vec<f64>,
    pub field: Vec<f64>,
    /// `bound[s][j]`: `N_j` at sample `s`.
    pub bound: Vec<Vec<f64>>,
    /// Norm removed by the absorber up to sample `s`.
    pub absorbed: Vec<Vec<f64>>,
}

impl PopulationTrace {
    pub fn new(keys: Vec<String>) -> Self {
        Self {
            keys,
            ..Self::default()
        }
    }

    pub fn push(&mut self, time: f64, field: f64, bound: Vec<f64>, absorbed: Vec<f64>) {
        debug_assert_eq!(bound.len(), self.keys.len());
        self.times.push(time);
        self.field.push(field);
        self.bound.push(bound);
        self.absorbed.push(absorbed);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `N̄_j = 1 − N_j` at sample `s` (includes absorbed norm).
    pub fn escaped(&self, s: usize) -> Vec<f64> {
        self.bound[s].iter().map(|n| 1.0 - n).collect()
    }

    pub fn column(&self, key: &str) -> Option<Vec<f64>> {
        let j = self.keys.iter().position(|k| k == key)?;
        Some(self.bound.iter().map(|row| row[j]).collect())
    }

    pub fn final_probabilities(&self) -> Result<IonProbabilities<f64>> {
        match self.bound.last() {
            Some(last) => ion_probabilities(last),
            None => Err(Error::InvalidInput("empty population trace".into())),
        }
    }

    /// Largest `P¹` over all samples.
    pub fn max_p1(&self) -> Result<f64> {
        let mut best = 0.0f64;
        for row in &self.bound {
            best = best.max(ion_probabilities(row)?.p1);
        }
        Ok(best)
    }

    /// Depletion `1 − N_j` at the final sample, by key.
    pub fn final_depletion(&self) -> Vec<(String, f64)> {
        match self.bound.last() {
            Some(last) => self
                .keys
                .iter()
                .cloned()
                .zip(last.iter().map(|n| 1.0 - n))
                .collect(),
            None => Vec::new(),
        }
    }

    /// `time_au,E_t,N_<key>...`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time_au".to_string(), "E_t".to_string()];
        header.extend(self.keys.iter().map(|k| format!("N_{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for s in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[s]), fmt_f64(self.field[s])];
            row.extend(self.bound[s].iter().map(|&v| fmt_f64(v)));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the trace CSV written by [`PopulationTrace::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.len() < 2 || &headers[0] != "time_au" || &headers[1] != "E_t" {
            return Err(Error::InvalidInput("trace CSV must start with time_au,E_t".into()));
        }
        let keys = headers
            .iter()
            .skip(2)
            .map(|h| {
                h.strip_prefix("N_")
                    .map(str::to_string)
                    .ok_or_else(|| Error::InvalidInput(format!("unexpected trace column '{h}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut trace = Self::new(keys);
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::InvalidInput(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let absorbed = vec![0.0; vals.len() - 2];
            trace.push(vals[0], vals[1], vals[2..].to_vec(), absorbed);
        }
        Ok(trace)
    }
}

/// End-of-pulse ion probabilities of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonYieldRecord {
    pub intensity_wcm2: f64,
    pub wavelength_nm: f64,
    pub molecule: String,
    pub occupation: String,
    pub p0: f64,
    pub p1: f64,
    pub p2plus: f64,
}

impl IonYieldRecord {
    pub fn new(pulse: &LaserPulse, molecule: &str, occupation: &str, p: IonProbabilities<f64>) -> Self {
        Self {
            intensity_wcm2: pulse.intensity_wcm2,
            wavelength_nm: pulse.wavelength_nm,
            molecule: molecule.to_string(),
            occupation: occupation.to_string(),
            p0: p.p0,
            p1: p.p1,
            p2plus: p.p2plus,
        }
    }
}

pub const YIELD_HEADER: [&str; 7] = [
    "intensity_Wcm2",
    "wavelength_nm",
    "molecule",
    "occupation",
    "P0",
    "P1",
    "P2plus",
];

/// `intensity_Wcm2,wavelength_nm,molecule,occupation,P0,P1,P2plus`
pub fn write_yields_csv<W: Write>(records: &[IonYieldRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(YIELD_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            format!("{:e}", r.intensity_wcm2),
            fmt_f64(r.wavelength_nm),
            r.molecule.clone(),
            r.occupation.clone(),
            fmt_f64(r.p0),
            fmt_f64(r.p1),
            fmt_f64(r.p2plus),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_yields_csv<R: std::io::Read>(input: R) -> Result<Vec<IonYieldRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(YIELD_HEADER.iter().copied()) {
        return Err(Error::InvalidInput("unexpected yield CSV header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidInput(e.to_string()));
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(IonYieldRecord {
                intensity_wcm2: num(&rec[0])?,
                wavelength_nm: num(&rec[1])?,
                molecule: rec[2].to_string(),
                occupation: rec[3].to_string(),
                p0: num(&rec[4])?,
                p1: num(&rec[5])?,
                p2plus: num(&rec[6])?,
            })
        })
        .collect()
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize, GridSpec};
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::new(GridSpec::new(121, 0.25, 16, 0.5)).unwrap()
    }

    #[test]
    fn two_orbital_probabilities() {
        let p = ion_probabilities(&[0.9, 0.8]).unwrap();
        assert_relative_eq!(p.p0, 0.72, epsilon = 1e-15);
        assert_relative_eq!(p.p1, 0.26, epsilon = 1e-15);
        assert_relative_eq!(p.p0 + p.p1 + p.p2plus, 1.0, epsilon = 1e-15);
        let all = ion_probabilities(&[1.0; 14]).unwrap();
        assert_eq!((all.p0, all.p1, all.p2plus), (1.0, 0.0, 0.0));
        let p32 = ion_probabilities(&[0.9f32, 0.8]).unwrap();
        assert!((p32.p1 - 0.26).abs() < 1e-6);
    }

    #[test]
    fn probabilities_reject_out_of_range() {
        assert!(ion_probabilities(&[0.5, 1.1]).is_err());
        assert!(ion_probabilities(&[-0.1]).is_err());
        assert!(ion_probabilities(&[f64::NAN]).is_err());
        assert!(ion_probabilities::<f64>(&[]).unwrap().p0 == 1.0);
    }

    #[test]
    fn box_counts_full_and_half_norm() {
        let g = grid();
        let bx = AnalysisBox::new(10.0, 5.0);
        let mut psi = g.sample(|z, r| Complex64::new((-(z * z) - r * r).exp(), 0.0));
        normalize(&g, &mut psi);
        assert!((bound_population(&psi, &bx, &g).unwrap() - 1.0).abs() < 1e-8);

        // equal amplitude on two mirror-free points with the same weight
        let mut split = g.zeros::<Complex64>();
        let inside = g.z_points().iter().position(|&z| z.abs() < 1e-12).unwrap();
        let outside = g.n_z() - 2;
        split[[inside, 1]] = Complex64::new(1.0, 0.0);
        split[[outside, 1]] = Complex64::new(0.0, 1.0);
        normalize(&g, &mut split);
        assert_relative_eq!(bound_population(&split, &bx, &g).unwrap(), 0.5, epsilon = 1e-12);

        assert_eq!(bound_population(&g.zeros(), &bx, &g).unwrap(), 0.0);
        assert!(bound_population(&psi, &AnalysisBox::new(100.0, 5.0), &g).is_err());
    }

    #[test]
    fn keldysh_values() {
        let p = LaserPulse::new(390.0, 1e14, 24.0);
        let up = ponderomotive_energy(&p);
        assert!((up - 0.0522).abs() < 5e-4, "{up}");
        let ip = crate::units::ev_to_hartree(15.91);
        assert!((keldysh(ip, &p) - 2.37).abs() < 0.01);
        assert_relative_eq!(keldysh(2.0 * up, &p), 1.0, epsilon = 1e-14);
        let p4 = LaserPulse::new(390.0, 4e14, 24.0);
        assert_relative_eq!(keldysh(ip, &p4), 0.5 * keldysh(ip, &p), epsilon = 1e-12);
    }

    #[test]
    fn interference_channels() {
        let p = LaserPulse::new(390.0, 1e14, 24.0);
        let up = p.ponderomotive_energy();
        let w = p.omega();
        let ip = 5.0 * w - up;
        assert_eq!(
            interference_parameter(5, &p, ip, 2.0),
            Interference::Open { k_n: 0.0, k_n_r: 0.0 }
        );
        let ip = 5.0 * w - up - 0.5;
        match interference_parameter(5, &p, ip, 2.0) {
            Interference::Open { k_n, k_n_r } => {
                assert_relative_eq!(k_n, 1.0, epsilon = 1e-12);
                assert_relative_eq!(k_n_r, 2.0, epsilon = 1e-12);
            }
            Interference::Closed => panic!("channel should be open"),
        }
        assert_eq!(interference_parameter(1, &p, 0.5, 2.0), Interference::Closed);
        let d = diagnostics(crate::units::ev_to_hartree(11.45), &p, 2.282);
        assert!(d.photon_order as f64 * d.omega >= d.ip + d.ponderomotive);
        assert!(((d.photon_order - 1) as f64) * d.omega < d.ip + d.ponderomotive);
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut t = PopulationTrace::new(vec!["3sg_up".into(), "1pu+1_dn".into()]);
        t.push(0.0, 0.0, vec![1.0, 1.0], vec![0.0, 0.0]);
        t.push(0.2, 0.01, vec![0.999_999_1, 0.95], vec![0.0, 1e-3]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_au,E_t,N_3sg_up,N_1pu+1_dn\n"));
        assert_eq!(text.lines().count(), 3);
        let back = PopulationTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.bound, t.bound);
        assert_eq!(back.times, t.times);
    }

    #[test]
    fn yields_csv_round_trip() {
        let p = LaserPulse::new(390.0, 2e14, 24.0);
        let rec = IonYieldRecord::new(&p, "F2", "neutral", ion_probabilities(&[0.9, 0.7]).unwrap());
        let mut buf = Vec::new();
        write_yields_csv(std::slice::from_ref(&rec), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("intensity_Wcm2,wavelength_nm,molecule,occupation,P0,P1,P2plus\n"));
        let back = read_yields_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
