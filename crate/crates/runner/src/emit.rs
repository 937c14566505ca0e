//! CSV traces, yield tables and the Markdown summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tdks_core::observables::{write_yields_csv, IonYieldRecord, PopulationTrace};
use tdks_core::units::hartree_to_ev;

use crate::error::{Result, RunnerError};
use crate::manifest::{Artifact, ArtifactKind, RunManifest, RunRecord, RunStatus};

pub const YIELDS_FILE: &str = "yields.csv";
pub const YIELD_TABLE_FILE: &str = "yield_table.csv";
pub const SUMMARY_FILE: &str = "summary.md";

pub fn trace_path(id: &str) -> String {
    format!("traces/{id}.csv")
}

/// Writes one trace to `out/traces/<id>.csv`; returns the relative path.
pub fn write_trace(out: &Path, id: &str, trace: &PopulationTrace) -> Result<String> {
    let rel = trace_path(id);
    let path = out.join(&rel);
    let dir = path.parent().expect("trace path has a parent");
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    fs::write(&path, buf).map_err(|e| RunnerError::io(&path, e))?;
    Ok(rel)
}

/// Series name used in yield tables: occupation plus the mask when some
/// orbitals are frozen.
pub fn series_occupation(r: &RunRecord) -> String {
    if r.mask == "all" {
        r.occupation.clone()
    } else {
        format!("{}[{}]", r.occupation, r.mask)
    }
}

/// One yield record per complete run, in manifest order.
pub fn yield_records(manifest: &RunManifest) -> Vec<IonYieldRecord> {
    manifest
        .runs
        .iter()
        .filter(|r| r.status == RunStatus::Complete)
        .filter_map(|r| {
            let p = r.probabilities?;
            Some(IonYieldRecord {
                intensity_wcm2: r.intensity_wcm2,
                wavelength_nm: r.wavelength_nm,
                molecule: r.molecule.clone(),
                occupation: series_occupation(r),
                p0: p.p0,
                p1: p.p1,
                p2plus: p.p2plus,
            })
        })
        .collect()
}

struct Pivot {
    series: Vec<String>,
    intensities: Vec<f64>,
    /// `cells[i][s]`: (end-of-pulse P¹, running maximum).
    cells: Vec<Vec<Option<(f64, f64)>>>,
}

fn pivot(manifest: &RunManifest) -> Pivot {
    let done: Vec<&RunRecord> = manifest
        .runs
        .iter()
        .filter(|r| r.status == RunStatus::Complete && r.probabilities.is_some())
        .collect();
    let name = |r: &RunRecord| format!("{} {} {}nm", r.molecule, series_occupation(r), r.wavelength_nm);
    let mut series: Vec<String> = Vec::new();
    let mut intensities: Vec<f64> = Vec::new();
    for r in &done {
        let s = name(r);
        if !series.contains(&s) {
            series.push(s);
        }
        if !intensities.contains(&r.intensity_wcm2) {
            intensities.push(r.intensity_wcm2);
        }
    }
    intensities.sort_by(f64::total_cmp);
    let mut cells = vec![vec![None; series.len()]; intensities.len()];
    for r in &done {
        let i = intensities.iter().position(|&x| x == r.intensity_wcm2).unwrap();
        let s = series.iter().position(|x| *x == name(r)).unwrap();
        let p1 = r.probabilities.unwrap().p1;
        cells[i][s] = Some((p1, r.max_p1.unwrap_or(p1)));
    }
    Pivot {
        series,
        intensities,
        cells,
    }
}

fn yield_table_csv(p: &Pivot) -> String {
    let mut s = String::from("intensity_Wcm2");
    for name in &p.series {
        write!(s, ",P1 {name}").unwrap();
    }
    s.push('\n');
    for (i, row) in p.intensities.iter().zip(&p.cells) {
        write!(s, "{i:e}").unwrap();
        for c in row {
            match c {
                Some((p1, _)) => write!(s, ",{p1:?}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

fn markdown_table(p: &Pivot, peak: bool) -> String {
    let mut s = String::from("| I (W/cm²) |");
    for name in &p.series {
        write!(s, " {name} |").unwrap();
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(p.series.len()));
    s.push('\n');
    for (i, row) in p.intensities.iter().zip(&p.cells) {
        write!(s, "| {i:.1e} |").unwrap();
        for c in row {
            match c {
                Some((end, max)) => write!(s, " {:.3e} |", if peak { *max } else { *end }).unwrap(),
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s
}

fn summary_markdown(manifest: &RunManifest, p: &Pivot) -> String {
    let mut s = format!("# {}\n\nconfig hash `{}`\n\n", manifest.config.name, manifest.config_hash);
    if !manifest.grounds.is_empty() {
        s.push_str("## Ground states\n\n| molecule | occupation | E (hartree) | −ε_HOMO (eV) |\n|---|---|---|---|\n");
        for g in &manifest.grounds {
            writeln!(
                s,
                "| {} | {} | {:.6} | {:.3} |",
                g.molecule,
                g.occupation,
                g.total_energy,
                hartree_to_ev(-g.homo_energy)
            )
            .unwrap();
        }
        s.push('\n');
    }
    if !p.series.is_empty() {
        s.push_str("## Single-ionisation yield P¹ at the end of the pulse\n\n");
        s.push_str(&markdown_table(p, false));
        s.push_str("\n## Largest P¹ during the pulse\n\n");
        s.push_str(&markdown_table(p, true));
    }
    let open: Vec<&RunRecord> = manifest.runs.iter().filter(|r| r.status != RunStatus::Complete).collect();
    if !open.is_empty() {
        s.push_str("\n## Unfinished runs\n\n");
        for r in open {
            writeln!(
                s,
                "- {} ({:?}, step {}/{}){}",
                r.id,
                r.status,
                r.steps_done,
                r.total_steps,
                r.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default()
            )
            .unwrap();
        }
    }
    s
}

fn record(manifest: &mut RunManifest, out: &Path, rel: &str, kind: ArtifactKind, write: impl FnOnce(&Path) -> Result<()>) {
    let error = write(&out.join(rel)).err().map(|e| e.to_string());
    if let Some(e) = &error {
        log::error!("writing {rel}: {e}");
    }
    manifest.artifacts.push(Artifact {
        path: rel.to_string(),
        kind,
        error,
    });
}

/// Writes `traces`, the yield CSV, the pivot table and `summary.md`, and
/// rebuilds the manifest's artifact list. Every file is attempted; the first
/// I/O failure is returned after the manifest has been updated.
pub fn emit_results(out: &Path, traces: &[(String, PopulationTrace)], manifest: &mut RunManifest) -> Result<()> {
    manifest.artifacts.clear();
    if traces.is_empty() && manifest.runs.is_empty() {
        return Ok(());
    }
    for g in manifest.grounds.clone() {
        let error = (!out.join(&g.checkpoint).exists()).then(|| "file missing".to_string());
        manifest.artifacts.push(Artifact {
            path: g.checkpoint,
            kind: ArtifactKind::GroundState,
            error,
        });
    }
    for (id, trace) in traces {
        let rel = trace_path(id);
        record(manifest, out, &rel, ArtifactKind::Trace, |_| write_trace(out, id, trace).map(|_| ()));
    }
    let listed: Vec<String> = manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    for r in manifest.runs.clone() {
        if let Some(rel) = r.trace {
            if !listed.contains(&rel) {
                let error = (!out.join(&rel).exists()).then(|| "file missing".to_string());
                manifest.artifacts.push(Artifact {
                    path: rel,
                    kind: ArtifactKind::Trace,
                    error,
                });
            }
        }
    }
    let yields = yield_records(manifest);
    let pivot = pivot(manifest);
    let write_text = |text: String| {
        move |path: &Path| -> Result<()> {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
            }
            fs::write(path, text).map_err(|e| RunnerError::io(path, e))
        }
    };
    record(manifest, out, YIELDS_FILE, ArtifactKind::Yields, |path| {
        let mut buf = Vec::new();
        write_yields_csv(&yields, &mut buf)?;
        write_text(String::from_utf8(buf).expect("csv is utf-8"))(path)
    });
    record(manifest, out, YIELD_TABLE_FILE, ArtifactKind::YieldTable, write_text(yield_table_csv(&pivot)));
    let summary = summary_markdown(manifest, &pivot);
    record(manifest, out, SUMMARY_FILE, ArtifactKind::Summary, write_text(summary));
    match manifest.artifacts.iter().find(|a| a.error.is_some()) {
        Some(a) => Err(RunnerError::Manifest(format!(
            "could not write {}: {}",
            a.path,
            a.error.as_deref().unwrap_or_default()
        ))),
        None => Ok(()),
    }
}
