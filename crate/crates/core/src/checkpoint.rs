//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every array as little-endian `f64` in header order. Files are
//! written to a sibling temporary and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, Orbital, Spin};
use crate::groundstate::{density_of, GroundState, Interaction, OccupationSpec};
use crate::potentials::MoleculeSpec;

pub const MAGIC: &[u8; 8] = b"TDKSCKP\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    meta: H,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

/// Writes `meta` and the named arrays to `path` atomically.
pub fn write<H: Serialize>(path: &Path, meta: &H, arrays: &[(&str, &[f64])]) -> Result<()> {
    let env = Envelope {
        meta,
        arrays: arrays
            .iter()
            .map(|(n, a)| ArrayEntry {
                name: n.to_string(),
                len: a.len(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&env).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let total: usize = arrays.iter().map(|(_, a)| a.len()).sum();
    let mut buf = Vec::with_capacity(20 + header.len() + 8 * total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, a) in arrays {
        for v in a.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint written by [`write`].
pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, BTreeMap<String, Vec<f64>>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let env: Envelope<H> = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let mut offset = 20 + hlen;
    let mut arrays = BTreeMap::new();
    for entry in env.arrays {
        let end = offset + 8 * entry.len;
        let raw = bytes.get(offset..end).ok_or_else(|| bad("truncated payload"))?;
        let vals = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.insert(entry.name, vals);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((env.meta, arrays))
}

/// Interleaves real and imaginary parts.
pub fn complex_to_flat(values: &Array2<Complex64>) -> Vec<f64> {
    values.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn flat_to_complex(flat: &[f64], shape: (usize, usize)) -> Result<Array2<Complex64>> {
    if flat.len() != 2 * shape.0 * shape.1 {
        return Err(Error::Checkpoint(format!(
            "array of length {} does not fit shape {shape:?}",
            flat.len()
        )));
    }
    let v = flat.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok(Array2::from_shape_vec(shape, v).expect("length checked"))
}

#[derive(Serialize, Deserialize)]
struct GroundMeta {
    kind: String,
    grid: GridSpec,
    molecule: MoleculeSpec,
    occupation: OccupationSpec,
    interaction: Interaction,
    orbitals: Vec<(String, i32, Spin)>,
    energies: Vec<f64>,
    total_energy: f64,
    iterations: usize,
    virtual_energies: BTreeMap<String, f64>,
}

pub fn save_ground_state(path: &Path, state: &GroundState) -> Result<()> {
    let meta = GroundMeta {
        kind: "ground".into(),
        grid: state.grid_spec,
        molecule: state.molecule.clone(),
        occupation: state.occupation.clone(),
        interaction: state.interaction,
        orbitals: state
            .orbitals
            .iter()
            .map(|o| (o.label.clone(), o.m, o.spin))
            .collect(),
        energies: state.energies.clone(),
        total_energy: state.total_energy,
        iterations: state.iterations,
        virtual_energies: state.virtual_energies.clone(),
    };
    let flats: Vec<Vec<f64>> = state.orbitals.iter().map(|o| complex_to_flat(&o.values)).collect();
    let names: Vec<String> = state.orbitals.iter().map(|o| o.key()).collect();
    let arrays: Vec<(&str, &[f64])> = names
        .iter()
        .zip(&flats)
        .map(|(n, f)| (n.as_str(), f.as_slice()))
        .collect();
    write(path, &meta, &arrays)
}

pub fn load_ground_state(path: &Path) -> Result<GroundState> {
    let (meta, mut arrays): (GroundMeta, _) = read(path)?;
    if meta.kind != "ground" {
        return Err(Error::Checkpoint(format!("expected a ground-state checkpoint, found '{}'", meta.kind)));
    }
    let grid = Grid::new(meta.grid)?;
    let mut orbitals = Vec::with_capacity(meta.orbitals.len());
    for (label, m, spin) in meta.orbitals {
        let mut o = Orbital::new(grid.zeros(), spin, m, label);
        let flat = arrays
            .remove(&o.key())
            .ok_or_else(|| Error::Checkpoint(format!("missing orbital {}", o.key())))?;
        o.values = flat_to_complex(&flat, grid.shape())?;
        orbitals.push(o);
    }
    let density = density_of(&grid, &orbitals);
    Ok(GroundState {
        grid_spec: meta.grid,
        molecule: meta.molecule,
        occupation: meta.occupation,
        interaction: meta.interaction,
        orbitals,
        energies: meta.energies,
        total_energy: meta.total_energy,
        density,
        iterations: meta.iterations,
        virtual_energies: meta.virtual_energies,
    })
}
