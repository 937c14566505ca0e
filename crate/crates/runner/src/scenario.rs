//! Scenario orchestration: ground states, propagation sweeps, resumption.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use tdks_core::checkpoint::{load_ground_state, save_ground_state};
use tdks_core::groundstate::{delta_scf, scf_solve, GroundState, OccupationSpec};
use tdks_core::observables::PopulationTrace;
use tdks_core::potentials::MoleculeSpec;
use tdks_core::propagation::{CheckpointPolicy, Observer, Propagator};
use tdks_core::units::hartree_to_ev;
use tdks_core::Grid;

use crate::config::{RunSpec, ScenarioConfig};
use crate::emit::{emit_results, write_trace};
use crate::error::{Result, RunnerError};
use crate::manifest::{FailureKind, GroundRecord, RunManifest, RunRecord, RunStatus};

/// Execution controls that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; rayon's default when `None`.
    pub threads: Option<usize>,
    /// Stop each run after this many steps in this invocation, leaving it
    /// checkpointed and `incomplete`.
    pub max_steps_per_run: Option<usize>,
    /// Steps between checkpoints; one optical cycle when `None`.
    pub checkpoint_interval: Option<usize>,
}

fn short_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(&serde_json::to_value(value).expect("serialisable")).expect("serialisable");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

fn ground_hash(config: &ScenarioConfig, molecule: &MoleculeSpec, occupation: &OccupationSpec) -> String {
    short_hash(&(config.grid, molecule, occupation, config.scf))
}

/// Hash of every input that determines one run's output.
pub fn run_hash(config: &ScenarioConfig, run: &RunSpec) -> String {
    short_hash(&(
        ground_hash(config, &run.molecule, &run.occupation),
        run.pulse,
        config.propagator,
        config.analysis_box,
        &run.mask,
        config.cadence,
        config.seed,
    ))
}

fn ground_path(config: &ScenarioConfig, molecule: &MoleculeSpec, occupation: &OccupationSpec) -> String {
    format!(
        "ground/{}_{}_{}.ckpt",
        molecule.name,
        occupation.name,
        ground_hash(config, molecule, occupation)
    )
}

/// Loads the ground state from its checkpoint or solves and saves it.
pub fn ground_state(
    config: &ScenarioConfig,
    grid: &Grid,
    molecule: &MoleculeSpec,
    occupation: &OccupationSpec,
) -> Result<(GroundState, GroundRecord)> {
    let rel = ground_path(config, molecule, occupation);
    let path = config.out_dir.join(&rel);
    let loaded = if path.exists() {
        match load_ground_state(&path) {
            Ok(gs) if gs.grid_spec == config.grid && &gs.molecule == molecule && &gs.occupation == occupation => Some(gs),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring unreadable ground state {}: {e}", path.display());
                None
            }
        }
    } else {
        None
    };
    let gs = match loaded {
        Some(gs) => gs,
        None => {
            log::info!("solving ground state of {} ({})", molecule.name, occupation.name);
            let gs = scf_solve(molecule, occupation, grid, &config.scf)?;
            save_ground_state(&path, &gs)?;
            gs
        }
    };
    let record = GroundRecord {
        molecule: molecule.name.clone(),
        occupation: occupation.name.clone(),
        checkpoint: rel,
        total_energy: gs.total_energy,
        homo_energy: gs.homo_energy(),
        scf_iterations: gs.iterations,
    };
    Ok((gs, record))
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| RunnerError::Manifest(format!("cannot start worker pool: {e}")))
}

fn checkpoint_rel(id: &str) -> String {
    format!("ckpt/{id}.ckpt")
}

fn execute(
    config: &ScenarioConfig,
    grid: &Grid,
    ground: &GroundState,
    run: &RunSpec,
    mut record: RunRecord,
    opts: &RunOptions,
) -> RunRecord {
    let out = &config.out_dir;
    let observer = Observer {
        analysis_box: config.analysis_box,
        cadence: config.cadence,
    };
    let ckpt_rel = checkpoint_rel(&run.id);
    let policy = CheckpointPolicy {
        path: out.join(&ckpt_rel),
        tag: record.run_hash.clone(),
        interval_steps: opts.checkpoint_interval,
    };
    let fail = |mut record: RunRecord, e: RunnerError, steps: usize| {
        log::error!("run {} failed: {e}", record.id);
        record.failure = Some(FailureKind::from(&e));
        record.message = Some(e.to_string());
        record.status = if steps > 0 { RunStatus::Incomplete } else { RunStatus::Pending };
        record.steps_done = steps;
        if policy.path.exists() {
            record.checkpoint = Some(ckpt_rel.clone());
        }
        record
    };
    let build = || Propagator::new(grid, ground, Some(&run.pulse), &config.propagator, &run.mask, &observer);
    let mut p = match build() {
        Ok(p) => p,
        Err(e) => return fail(record, e.into(), 0),
    };
    if policy.path.exists() {
        if let Err(e) = p.restore(&policy.path, &policy.tag) {
            log::warn!("run {}: discarding checkpoint ({e})", run.id);
            p = match build() {
                Ok(p) => p,
                Err(e) => return fail(record, e.into(), 0),
            };
        } else {
            log::info!("run {}: resuming at step {}", run.id, p.step_index());
        }
    }
    record.total_steps = p.total_steps();
    let stop = opts
        .max_steps_per_run
        .map_or(usize::MAX, |k| p.step_index().saturating_add(k));
    if let Err(e) = p.run_until(stop, Some(&policy)) {
        let steps = p.step_index();
        return fail(record, e.into(), steps);
    }
    record.steps_done = p.step_index();
    record.max_krylov_error = p.max_krylov_error();
    record.failure = None;
    record.message = None;
    if !p.finished() {
        if let Err(e) = p.save_checkpoint(&policy.path, &policy.tag) {
            let steps = p.step_index();
            return fail(record, e.into(), steps);
        }
        record.status = RunStatus::Incomplete;
        record.checkpoint = Some(ckpt_rel);
        return record;
    }
    let trace: &PopulationTrace = p.trace();
    let probs = trace.final_probabilities().and_then(|f| trace.max_p1().map(|m| (f, m)));
    match probs {
        Ok((f, m)) => {
            record.probabilities = Some(f);
            record.max_p1 = Some(m);
        }
        Err(e) => {
            let steps = p.step_index();
            return fail(record, e.into(), steps);
        }
    }
    match write_trace(out, &run.id, trace) {
        Ok(rel) => record.trace = Some(rel),
        Err(e) => {
            let steps = p.step_index();
            return fail(record, e, steps);
        }
    }
    if let Err(e) = fs::remove_file(&policy.path).or_else(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Ok(()),
        _ => Err(e),
    }) {
        log::warn!("could not remove {}: {e}", policy.path.display());
    }
    record.checkpoint = None;
    record.status = RunStatus::Complete;
    record
}

/// Runs every sweep point of `config` that is not already complete in the
/// manifest under `config.out_dir`.
///
/// A run is a manifest hit when a previous record with the same id and
/// input hash is complete and its trace file exists. Interrupted runs
/// continue from their last checkpoint. Failures are recorded per run; the
/// manifest is returned either way.
pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunManifest> {
    let runs = config.runs();
    let mut manifest = RunManifest::new(config);
    if runs.is_empty() {
        return Ok(manifest);
    }
    let out: &Path = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| RunnerError::io(out, e))?;
    let previous = RunManifest::load(out)?;
    let mut pending: Vec<usize> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let hash = run_hash(config, run);
        let hit = previous.as_ref().and_then(|m| m.run(&run.id)).filter(|r| {
            r.run_hash == hash
                && r.status == RunStatus::Complete
                && r.trace.as_ref().is_some_and(|t| out.join(t).exists())
        });
        match hit {
            Some(r) => manifest.runs.push(r.clone()),
            None => {
                manifest.runs.push(RunRecord::pending(run, hash));
                pending.push(i);
            }
        }
    }
    log::info!("{} runs, {} to compute", runs.len(), pending.len());

    let grid = Grid::new(config.grid)?;
    let pool = pool(opts.threads)?;

    // Distinct (molecule, occupation) pairs in first-use order.
    let mut pairs: Vec<(MoleculeSpec, OccupationSpec)> = Vec::new();
    for r in &runs {
        if !pairs.iter().any(|(m, o)| m == &r.molecule && o == &r.occupation) {
            pairs.push((r.molecule.clone(), r.occupation.clone()));
        }
    }
    let needed: Vec<bool> = pairs
        .iter()
        .map(|(m, o)| pending.iter().any(|&i| &runs[i].molecule == m && &runs[i].occupation == o))
        .collect();
    let solved: Vec<Option<Result<(GroundState, GroundRecord)>>> = pool.install(|| {
        pairs
            .par_iter()
            .zip(&needed)
            .map(|((m, o), &need)| need.then(|| ground_state(config, &grid, m, o)))
            .collect()
    });
    let mut grounds: BTreeMap<usize, GroundState> = BTreeMap::new();
    for (k, s) in solved.into_iter().enumerate() {
        let (m, o) = &pairs[k];
        match s {
            Some(Ok((gs, rec))) => {
                manifest.grounds.push(rec);
                grounds.insert(k, gs);
            }
            Some(Err(e)) => {
                for (i, run) in runs.iter().enumerate() {
                    if &run.molecule == m && &run.occupation == o {
                        manifest.runs[i].failure = Some(FailureKind::from(&e));
                        manifest.runs[i].message = Some(format!("ground state: {e}"));
                    }
                }
                log::error!("ground state of {} ({}) failed: {e}", m.name, o.name);
            }
            None => {
                let prev = previous
                    .as_ref()
                    .and_then(|p| p.grounds.iter().find(|g| g.molecule == m.name && g.occupation == o.name));
                if let Some(g) = prev {
                    manifest.grounds.push(g.clone());
                }
            }
        }
    }
    manifest.save(out)?;

    let shared = Mutex::new(manifest);
    let pair_of = |run: &RunSpec| {
        pairs
            .iter()
            .position(|(m, o)| m == &run.molecule && o == &run.occupation)
            .unwrap()
    };
    let save_error: Mutex<Option<RunnerError>> = Mutex::new(None);
    pool.install(|| {
        pending.par_iter().for_each(|&i| {
            let run = &runs[i];
            let Some(gs) = grounds.get(&pair_of(run)) else {
                return;
            };
            let record = shared.lock().unwrap().runs[i].clone();
            log::info!("run {} started", run.id);
            let done = execute(config, &grid, gs, run, record, opts);
            log::info!("run {} {:?}", run.id, done.status);
            let mut m = shared.lock().unwrap();
            m.runs[i] = done;
            if let Err(e) = m.save(out) {
                save_error.lock().unwrap().get_or_insert(e);
            }
        });
    });
    if let Some(e) = save_error.into_inner().unwrap() {
        return Err(e);
    }
    let mut manifest = shared.into_inner().unwrap();
    let emitted = emit_results(out, &[], &mut manifest);
    manifest.save(out)?;
    emitted?;
    Ok(manifest)
}

/// Continues the scenario recorded in `out`'s manifest.
pub fn resume_scenario(out: &Path, opts: &RunOptions) -> Result<RunManifest> {
    let manifest = RunManifest::load(out)?
        .ok_or_else(|| RunnerError::Manifest(format!("no manifest in {}", out.display())))?;
    let mut config = manifest.config;
    config.out_dir = out.to_path_buf();
    run_scenario(&config, opts)
}

/// Rewrites the yield tables and summary from the manifest in `out`.
pub fn report(out: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::load(out)?
        .ok_or_else(|| RunnerError::Manifest(format!("no manifest in {}", out.display())))?;
    let emitted = emit_results(out, &[], &mut manifest);
    manifest.save(out)?;
    emitted?;
    Ok(manifest)
}

/// One row of the ionisation-potential table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpRow {
    pub molecule: String,
    pub occupation: String,
    pub total_energy: f64,
    /// `−ε_HOMO` in eV.
    pub koopmans_ev: f64,
    /// `E(cation) − E(neutral)` in eV.
    pub delta_scf_ev: f64,
    pub homo: String,
}

/// Ground states and ΔSCF ionisation potentials of every molecule and
/// occupation in `config`. Neutral ground states are checkpointed for
/// later runs.
pub fn ground_table(config: &ScenarioConfig, threads: Option<usize>) -> Result<Vec<IpRow>> {
    let grid = Grid::new(config.grid)?;
    let mut jobs = Vec::new();
    for m in &config.molecules {
        for o in &config.occupations {
            jobs.push((m.clone(), OccupationSpec::builtin(&m.name, o)?));
        }
    }
    pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(m, occ)| {
                let cation = occ.cation(&m.name)?;
                let d = delta_scf(m, occ, &cation, &grid, &config.scf)?;
                save_ground_state(&config.out_dir.join(ground_path(config, m, occ)), &d.neutral)?;
                let (homo, _) = d
                    .neutral
                    .orbitals
                    .iter()
                    .zip(&d.neutral.energies)
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .expect("occupied orbitals");
                Ok(IpRow {
                    molecule: m.name.clone(),
                    occupation: occ.name.clone(),
                    total_energy: d.neutral.total_energy,
                    koopmans_ev: hartree_to_ev(-d.neutral.homo_energy()),
                    delta_scf_ev: d.ip_ev,
                    homo: homo.label.clone(),
                })
            })
            .collect()
    })
}

pub fn format_ip_table(rows: &[IpRow]) -> String {
    let mut s = format!(
        "{:<8} {:<10} {:>14} {:>6} {:>14} {:>14}\n",
        "molecule", "occupation", "E (hartree)", "HOMO", "-eps_HOMO (eV)", "dSCF IP (eV)"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<8} {:<10} {:>14.6} {:>6} {:>14.3} {:>14.3}\n",
            r.molecule, r.occupation, r.total_energy, r.homo, r.koopmans_ev, r.delta_scf_ev
        ));
    }
    s
}
