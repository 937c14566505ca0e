//! Scenario configuration: TOML schema, presets, validation and hashing.
//!
//! The grammar is documented in `docs/config.md`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tdks_core::groundstate::{EigenMethod, Interaction, OccupationSpec, ScfParams};
use tdks_core::observables::AnalysisBox;
use tdks_core::potentials::{Envelope, Gauge, LaserPulse, MoleculeSpec};
use tdks_core::propagation::{AbsorberSpec, FreezeMask, PotentialUpdate, PropagatorSpec};
use tdks_core::{Grid, GridSpec};

/// Configuration error with the 1-based line it refers to, when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Named parameter bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Reduced box and 6-cycle pulses; fits a desktop.
    Desk,
    /// The converged grid and propagator of the reference calculations.
    Production,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "production" => Ok(Preset::Production),
            other => Err(ConfigError {
                line: None,
                message: format!("unknown preset '{other}' (expected desk or production)"),
            }),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Production => "production",
        })
    }
}

impl Preset {
    pub fn grid(self) -> GridSpec {
        match self {
            Preset::Desk => GridSpec::new(361, 0.1, 24, 0.3),
            Preset::Production => GridSpec::new(2291, 0.05, 43, 0.28838771),
        }
    }

    pub fn n_cycles(self) -> f64 {
        match self {
            Preset::Desk => 6.0,
            Preset::Production => 24.0,
        }
    }

    pub fn analysis_box(self) -> AnalysisBox {
        match self {
            Preset::Desk => AnalysisBox::new(14.0, 10.0),
            Preset::Production => AnalysisBox::default(),
        }
    }

    pub fn propagator(self) -> PropagatorSpec {
        let rho_onset = match self {
            Preset::Desk => 12.0,
            Preset::Production => 14.0,
        };
        PropagatorSpec {
            absorber: AbsorberSpec {
                rho_onset,
                ..AbsorberSpec::default()
            },
            ..PropagatorSpec::default()
        }
    }
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub preset: Preset,
    pub grid: GridSpec,
    pub molecules: Vec<MoleculeSpec>,
    /// Occupation variants (`neutral`, `triplet`, `singlet`, ...).
    pub occupations: Vec<String>,
    /// Every wavelength × intensity combination.
    pub pulses: Vec<LaserPulse>,
    pub propagator: PropagatorSpec,
    pub analysis_box: AnalysisBox,
    pub masks: Vec<FreezeMask>,
    pub scf: ScfParams,
    pub out_dir: PathBuf,
    pub cadence: usize,
    pub seed: u64,
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub id: String,
    pub molecule: MoleculeSpec,
    pub occupation: OccupationSpec,
    pub pulse: LaserPulse,
    pub mask: FreezeMask,
}

impl ScenarioConfig {
    /// Default scenario of a preset: N₂ at 1×10¹⁴ W/cm², 390 nm.
    pub fn from_preset(preset: Preset) -> Self {
        parse_config(&format!("preset = \"{preset}\"\n")).expect("preset scenario is valid")
    }

    /// Runs in molecule, occupation, pulse, mask order.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for mol in &self.molecules {
            for occ in &self.occupations {
                let occupation = OccupationSpec::builtin(&mol.name, occ).expect("validated at parse time");
                for pulse in &self.pulses {
                    for mask in &self.masks {
                        out.push(RunSpec {
                            id: run_id(&mol.name, occ, pulse, mask),
                            molecule: mol.clone(),
                            occupation: occupation.clone(),
                            pulse: *pulse,
                            mask: mask.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form, without the output directory;
    /// key order in the source text does not matter.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let value = serde_json::to_value(&c).expect("config serialises");
        let canonical = serde_json::to_string(&value).expect("config serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Serialises back to the TOML grammar accepted by [`parse_config`].
    pub fn to_toml(&self) -> String {
        let first = self.pulses.first().copied().unwrap_or_else(|| LaserPulse::new(390.0, 1e14, 1.0));
        let mut wavelengths: Vec<f64> = Vec::new();
        let mut intensities: Vec<f64> = Vec::new();
        for p in &self.pulses {
            if !wavelengths.contains(&p.wavelength_nm) {
                wavelengths.push(p.wavelength_nm);
            }
            if !intensities.contains(&p.intensity_wcm2) {
                intensities.push(p.intensity_wcm2);
            }
        }
        let raw = RawConfig {
            name: Some(self.name.clone()),
            preset: Some(self.preset),
            molecules: Some(self.molecules.iter().map(|m| m.name.clone()).collect()),
            occupations: Some(self.occupations.clone()),
            out_dir: Some(self.out_dir.clone()),
            cadence: Some(self.cadence),
            seed: Some(self.seed),
            grid: Some(RawGrid {
                n_z: Some(self.grid.n_z),
                dz: Some(self.grid.dz),
                n_rho: Some(self.grid.n_rho),
                h_rho: Some(self.grid.h_rho),
                fd_order: Some(self.grid.fd_order),
            }),
            bond_lengths: Some(
                self.molecules
                    .iter()
                    .map(|m| (m.name.clone(), m.bond_length()))
                    .collect(),
            ),
            pulse: Some(RawPulse {
                wavelengths_nm: Some(wavelengths),
                intensities_wcm2: Some(intensities),
                n_cycles: Some(first.n_cycles),
                envelope: Some(match first.envelope {
                    Envelope::Sin2 => "sin2".into(),
                    Envelope::Trapezoid { .. } => "trapezoid".into(),
                }),
                ramp_cycles: match first.envelope {
                    Envelope::Trapezoid { ramp_cycles } => Some(ramp_cycles),
                    Envelope::Sin2 => None,
                },
                gauge: Some(first.gauge),
                cep: Some(first.cep),
            }),
            propagator: Some(RawPropagator {
                dt: Some(self.propagator.dt),
                krylov_order: Some(self.propagator.krylov_order),
                update: Some(self.propagator.update),
            }),
            absorber: Some(RawAbsorber {
                enabled: Some(self.propagator.absorber.enabled),
                z_fraction: Some(self.propagator.absorber.z_fraction),
                rho_onset: Some(self.propagator.absorber.rho_onset),
                exponent: Some(self.propagator.absorber.exponent),
            }),
            analysis_box: Some(RawBox {
                z_half_extent: Some(self.analysis_box.z_half_extent),
                rho_extent: Some(self.analysis_box.rho_extent),
            }),
            scf: Some(RawScf {
                mixing: Some(self.scf.mixing),
                max_iterations: Some(self.scf.max_iterations),
                energy_tol: Some(self.scf.energy_tol),
                density_tol: Some(self.scf.density_tol),
                eigen_tol: Some(self.scf.eigen_tol),
                eigensolver: Some(self.scf.eigensolver),
                interaction: Some(self.scf.interaction),
            }),
            masks: Some(
                self.masks
                    .iter()
                    .map(|m| RawMask {
                        active: m.active.as_ref().map(|s| s.iter().cloned().collect()),
                    })
                    .collect(),
            ),
        };
        toml::to_string(&raw).expect("config serialises")
    }
}

/// `N2_neutral_390nm_1e14_all`
pub fn run_id(molecule: &str, occupation: &str, pulse: &LaserPulse, mask: &FreezeMask) -> String {
    format!(
        "{molecule}_{occupation}_{}nm_{:e}_{}",
        pulse.wavelength_nm,
        pulse.intensity_wcm2,
        mask.tag()
    )
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    molecules: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    occupations: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cadence: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<RawGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bond_lengths: Option<std::collections::BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pulse: Option<RawPulse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    propagator: Option<RawPropagator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    absorber: Option<RawAbsorber>,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    analysis_box: Option<RawBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scf: Option<RawScf>,
    #[serde(rename = "mask", skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<RawMask>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_z: Option<usize>,
    dz: Option<f64>,
    n_rho: Option<usize>,
    h_rho: Option<f64>,
    fd_order: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    wavelengths_nm: Option<Vec<f64>>,
    intensities_wcm2: Option<Vec<f64>>,
    n_cycles: Option<f64>,
    envelope: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ramp_cycles: Option<f64>,
    gauge: Option<Gauge>,
    cep: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPropagator {
    dt: Option<f64>,
    krylov_order: Option<usize>,
    update: Option<PotentialUpdate>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAbsorber {
    enabled: Option<bool>,
    z_fraction: Option<f64>,
    rho_onset: Option<f64>,
    exponent: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    z_half_extent: Option<f64>,
    rho_extent: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScf {
    mixing: Option<f64>,
    max_iterations: Option<usize>,
    energy_tol: Option<f64>,
    density_tol: Option<f64>,
    eigen_tol: Option<f64>,
    eigensolver: Option<EigenMethod>,
    interaction: Option<Interaction>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMask {
    #[serde(skip_serializing_if = "Option::is_none")]
    active: Option<Vec<String>>,
}

/// 1-based line of `key` inside `[section]` (top level when `None`).
fn line_of(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if Some(name.as_str()) == section && section_line.is_none() {
                section_line = Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        let in_section = current.as_deref() == section;
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

fn offset_to_line(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| offset_to_line(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let err = |section: Option<&str>, key: &str, message: String| ConfigError {
        line: line_of(text, section, key),
        message,
    };
    let preset = raw.preset.unwrap_or(Preset::Desk);

    let g = raw.grid.unwrap_or_default();
    let base = preset.grid();
    let grid = GridSpec::new(
        g.n_z.unwrap_or(base.n_z),
        g.dz.unwrap_or(base.dz),
        g.n_rho.unwrap_or(base.n_rho),
        g.h_rho.unwrap_or(base.h_rho),
    )
    .with_fd_order(g.fd_order.unwrap_or(base.fd_order));
    let built = Grid::new(grid).map_err(|e| err(Some("grid"), "n_z", e.to_string()))?;

    let names = raw.molecules.unwrap_or_else(|| vec!["N2".into()]);
    if names.is_empty() {
        return Err(err(None, "molecules", "at least one molecule is required".into()));
    }
    let bonds = raw.bond_lengths.unwrap_or_default();
    for k in bonds.keys() {
        if !names.contains(k) {
            return Err(err(None, k, format!("bond length given for unlisted molecule '{k}'")));
        }
    }
    let mut molecules = Vec::new();
    for name in &names {
        let mut m = MoleculeSpec::by_name(name)
            .ok_or_else(|| err(None, "molecules", format!("unknown molecule '{name}' (expected N2, O2 or F2)")))?;
        if let Some(&r) = bonds.get(name) {
            let charge = m.nuclei[0].charge as u32;
            m = MoleculeSpec::homonuclear(name.clone(), charge, r)
                .map_err(|e| err(Some("bond_lengths"), name, e.to_string()))?;
        }
        molecules.push(m);
    }
    let occupations = raw.occupations.unwrap_or_else(|| vec!["neutral".into()]);
    if occupations.is_empty() {
        return Err(err(None, "occupations", "at least one occupation is required".into()));
    }
    for m in &molecules {
        for o in &occupations {
            let occ = OccupationSpec::builtin(&m.name, o).map_err(|e| err(None, "occupations", e.to_string()))?;
            occ.validate(m).map_err(|e| err(None, "occupations", e.to_string()))?;
        }
    }

    let p = raw.pulse.unwrap_or_default();
    let wavelengths = p.wavelengths_nm.unwrap_or_else(|| vec![390.0]);
    let intensities = p.intensities_wcm2.unwrap_or_else(|| vec![1e14]);
    if wavelengths.is_empty() || intensities.is_empty() {
        return Err(err(Some("pulse"), "intensities_wcm2", "pulse sweep is empty".into()));
    }
    let envelope = match p.envelope.as_deref().unwrap_or("sin2") {
        "sin2" => {
            if p.ramp_cycles.is_some() {
                return Err(err(Some("pulse"), "ramp_cycles", "ramp_cycles needs envelope = \"trapezoid\"".into()));
            }
            Envelope::Sin2
        }
        "trapezoid" => Envelope::Trapezoid {
            ramp_cycles: p.ramp_cycles.unwrap_or(1.0),
        },
        other => {
            return Err(err(
                Some("pulse"),
                "envelope",
                format!("unknown envelope '{other}' (expected sin2 or trapezoid)"),
            ))
        }
    };
    let mut pulses = Vec::new();
    for &wl in &wavelengths {
        for &i in &intensities {
            let pulse = LaserPulse {
                wavelength_nm: wl,
                intensity_wcm2: i,
                n_cycles: p.n_cycles.unwrap_or(preset.n_cycles()),
                envelope,
                gauge: p.gauge.unwrap_or(Gauge::Length),
                cep: p.cep.unwrap_or(0.0),
            };
            pulse.validate().map_err(|e| err(Some("pulse"), "intensities_wcm2", e.to_string()))?;
            pulses.push(pulse);
        }
    }

    let mut propagator = preset.propagator();
    if let Some(rp) = raw.propagator {
        propagator.dt = rp.dt.unwrap_or(propagator.dt);
        propagator.krylov_order = rp.krylov_order.unwrap_or(propagator.krylov_order);
        propagator.update = rp.update.unwrap_or(propagator.update);
    }
    propagator
        .validate()
        .map_err(|e| err(Some("propagator"), "dt", e.to_string()))?;
    if let Some(ra) = raw.absorber {
        let a = &mut propagator.absorber;
        a.enabled = ra.enabled.unwrap_or(a.enabled);
        a.z_fraction = ra.z_fraction.unwrap_or(a.z_fraction);
        a.rho_onset = ra.rho_onset.unwrap_or(a.rho_onset);
        a.exponent = ra.exponent.unwrap_or(a.exponent);
    }
    propagator
        .absorber
        .validate(&built)
        .map_err(|e| err(Some("absorber"), "rho_onset", e.to_string()))?;

    let rb = raw.analysis_box.unwrap_or_default();
    let pb = preset.analysis_box();
    let analysis_box = AnalysisBox::new(
        rb.z_half_extent.unwrap_or(pb.z_half_extent),
        rb.rho_extent.unwrap_or(pb.rho_extent),
    );
    analysis_box
        .validate(&built)
        .map_err(|e| err(Some("box"), "z_half_extent", e.to_string()))?;
    propagator
        .absorber
        .check_box(&built, &analysis_box)
        .map_err(|e| err(Some("box"), "z_half_extent", e.to_string()))?;

    let mut scf = ScfParams::default();
    if let Some(rs) = raw.scf {
        scf.mixing = rs.mixing.unwrap_or(scf.mixing);
        scf.max_iterations = rs.max_iterations.unwrap_or(scf.max_iterations);
        scf.energy_tol = rs.energy_tol.unwrap_or(scf.energy_tol);
        scf.density_tol = rs.density_tol.unwrap_or(scf.density_tol);
        scf.eigen_tol = rs.eigen_tol.unwrap_or(scf.eigen_tol);
        scf.eigensolver = rs.eigensolver.unwrap_or(scf.eigensolver);
        scf.interaction = rs.interaction.unwrap_or(scf.interaction);
    }
    scf.validate().map_err(|e| err(Some("scf"), "mixing", e.to_string()))?;

    let masks: Vec<FreezeMask> = match raw.masks {
        None => vec![FreezeMask::all_active()],
        Some(list) if list.is_empty() => vec![FreezeMask::all_active()],
        Some(list) => list
            .into_iter()
            .map(|m| match m.active {
                None => FreezeMask::all_active(),
                Some(names) => FreezeMask::only(names),
            })
            .collect(),
    };
    for mask in &masks {
        if let Some(set) = &mask.active {
            if set.is_empty() {
                return Err(err(Some("mask"), "active", "a freeze mask needs at least one active orbital".into()));
            }
            for m in &molecules {
                for o in &occupations {
                    let occ = OccupationSpec::builtin(&m.name, o).expect("checked above");
                    for name in set {
                        let known = occ
                            .entries
                            .iter()
                            .any(|e| &e.label == name || &e.key() == name);
                        if !known {
                            return Err(err(
                                Some("mask"),
                                "active",
                                format!("mask orbital '{name}' is not occupied in {} {o}", m.name),
                            ));
                        }
                    }
                }
            }
        }
    }
    let cadence = raw.cadence.unwrap_or(50);
    if cadence == 0 {
        return Err(err(None, "cadence", "cadence must be at least one step".into()));
    }
    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_else(|| "scenario".into()),
        preset,
        grid,
        molecules,
        occupations,
        pulses,
        propagator,
        analysis_box,
        masks,
        scf,
        out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from("tdks-out")),
        cadence,
        seed: raw.seed.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_examples_parse() {
        let doc = include_str!("../../../docs/config.md");
        let blocks: Vec<&str> = doc.split("```toml\n").skip(1).map(|b| b.split("```").next().unwrap()).collect();
        assert!(blocks.len() >= 3);
        for b in blocks {
            parse_config(b).unwrap_or_else(|e| panic!("{e}\n{b}"));
        }
    }

    #[test]
    fn production_preset_matches_converged_parameters() {
        let c = parse_config("preset = \"production\"\nmolecules = [\"N2\"]\n").unwrap();
        assert_eq!(c.grid.n_z, 2291);
        assert_eq!(c.grid.dz, 0.05);
        assert_eq!(c.grid.n_rho, 43);
        assert_eq!(c.grid.h_rho, 0.28838771);
        assert_eq!(c.propagator.dt, 0.02);
        assert_eq!(c.propagator.krylov_order, 18);
        assert_eq!(c.pulses[0].n_cycles, 24.0);
    }

    #[test]
    fn explicit_grid_overrides_preset() {
        let text = "\
molecules = [\"N2\"]
[grid]
n_z = 2291
dz = 0.05
n_rho = 43
h_rho = 0.28838771
[propagator]
dt = 0.02
krylov_order = 18
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.grid, GridSpec::new(2291, 0.05, 43, 0.28838771));
        assert_eq!(c.propagator.krylov_order, 18);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = "name = \"x\"\n[grid]\nn_z = 101\nspacing = 0.1\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.line, Some(4), "{e}");
        assert!(e.message.contains("spacing"), "{e}");
    }

    #[test]
    fn box_larger_than_grid_is_rejected() {
        let text = "[grid]\nn_z = 201\ndz = 0.1\n[box]\nz_half_extent = 30.0\nrho_extent = 5.0\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        assert!(e.message.contains("not inside the grid"), "{e}");
    }

    #[test]
    fn box_overlapping_absorber_is_rejected() {
        let text = "[box]\nz_half_extent = 17.0\n";
        let e = parse_config(text).unwrap_err();
        assert!(e.message.contains("overlaps the absorber"), "{e}");
    }

    #[test]
    fn intensity_sweep_schedules_runs() {
        let text = "[pulse]\nintensities_wcm2 = [1e14, 2e14, 4e14, 6e14, 8e14]\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.runs().len(), 5);
        let text = "molecules = [\"O2\"]\noccupations = [\"singlet\", \"triplet\"]\n\
                    [pulse]\nintensities_wcm2 = [1e14, 2e14, 4e14, 6e14, 8e14]\n";
        assert_eq!(parse_config(text).unwrap().runs().len(), 10);
    }

    #[test]
    fn masks_expand_runs_and_are_checked() {
        let text = "molecules = [\"F2\"]\n[pulse]\nintensities_wcm2 = [2e14]\n\
                    [[mask]]\n[[mask]]\nactive = [\"3sg\", \"1pu\", \"1pg\"]\n\
                    [[mask]]\nactive = [\"1pu\", \"1pg\"]\n[[mask]]\nactive = [\"3sg\"]\n";
        let c = parse_config(text).unwrap();
        let runs = c.runs();
        assert_eq!(runs.len(), 4);
        assert!(runs[1].id.ends_with("1pg-1pu-3sg"));
        let bad = "molecules = [\"N2\"]\n[[mask]]\nactive = [\"1pg\"]\n";
        let e = parse_config(bad).unwrap_err();
        assert_eq!(e.line, Some(3), "{e}");
    }

    #[test]
    fn occupation_must_exist_for_molecule() {
        let e = parse_config("molecules = [\"N2\"]\noccupations = [\"triplet\"]\n").unwrap_err();
        assert_eq!(e.line, Some(2), "{e}");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = "name = \"a\"\ncadence = 20\n[pulse]\nn_cycles = 4\nintensities_wcm2 = [1e14]\n";
        let b = "cadence = 20\nname = \"a\"\n[pulse]\nintensities_wcm2 = [1e14]\nn_cycles = 4\n";
        let ha = parse_config(a).unwrap().hash();
        assert_eq!(ha, parse_config(b).unwrap().hash());
        assert_eq!(ha.len(), 64);
        let c = "name = \"a\"\ncadence = 21\n[pulse]\nn_cycles = 4\nintensities_wcm2 = [1e14]\n";
        assert_ne!(ha, parse_config(c).unwrap().hash());
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let text = "molecules = [\"O2\"]\noccupations = [\"triplet\", \"singlet\"]\n\
                    bond_lengths = { O2 = 2.3 }\n\
                    [pulse]\nintensities_wcm2 = [1e14, 3e14]\nwavelengths_nm = [390.0, 800.0]\n\
                    envelope = \"trapezoid\"\nramp_cycles = 2.0\n[[mask]]\nactive = [\"1pg\"]\n";
        let first = parse_config(text).unwrap();
        let again = parse_config(&first.to_toml()).unwrap();
        assert_eq!(first, again);
        assert_eq!(again.to_toml(), first.to_toml());
        assert_eq!(again.molecules[0].bond_length(), 2.3);
        assert_eq!(again.pulses.len(), 4);
        assert_eq!(again.runs().len(), 8);
    }
}
