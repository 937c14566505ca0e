//! Record of a scenario's runs and emitted files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tdks_core::observables::IonProbabilities;

use crate::config::{RunSpec, ScenarioConfig};
use crate::error::{Result, RunnerError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Input,
    Numerical,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Input => 1,
            FailureKind::Numerical => 2,
            FailureKind::Io => 3,
        }
    }
}

impl From<&RunnerError> for FailureKind {
    fn from(e: &RunnerError) -> Self {
        match e.exit_code() {
            2 => FailureKind::Numerical,
            3 => FailureKind::Io,
            _ => FailureKind::Input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    /// Hash of everything that determines this run's output.
    pub run_hash: String,
    pub molecule: String,
    pub occupation: String,
    pub wavelength_nm: f64,
    pub intensity_wcm2: f64,
    pub mask: String,
    pub status: RunStatus,
    pub steps_done: usize,
    pub total_steps: usize,
    /// Paths are relative to the output directory.
    pub trace: Option<String>,
    pub checkpoint: Option<String>,
    pub probabilities: Option<IonProbabilities<f64>>,
    /// Running maximum of P¹ over the observer samples.
    pub max_p1: Option<f64>,
    pub max_krylov_error: f64,
    pub failure: Option<FailureKind>,
    pub message: Option<String>,
}

impl RunRecord {
    pub fn pending(run: &RunSpec, run_hash: String) -> Self {
        Self {
            id: run.id.clone(),
            run_hash,
            molecule: run.molecule.name.clone(),
            occupation: run.occupation.name.clone(),
            wavelength_nm: run.pulse.wavelength_nm,
            intensity_wcm2: run.pulse.intensity_wcm2,
            mask: run.mask.tag(),
            status: RunStatus::Pending,
            steps_done: 0,
            total_steps: 0,
            trace: None,
            checkpoint: None,
            probabilities: None,
            max_p1: None,
            max_krylov_error: 0.0,
            failure: None,
            message: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRecord {
    pub molecule: String,
    pub occupation: String,
    pub checkpoint: String,
    pub total_energy: f64,
    pub homo_energy: f64,
    pub scf_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    GroundState,
    Trace,
    Yields,
    YieldTable,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub kind: ArtifactKind,
    /// Set when writing the file failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub config: ScenarioConfig,
    pub grounds: Vec<GroundRecord>,
    pub runs: Vec<RunRecord>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(config: &ScenarioConfig) -> Self {
        Self {
            config_hash: config.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            grounds: Vec::new(),
            runs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// `Ok(None)` when `dir` holds no manifest.
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| RunnerError::Manifest(format!("{}: {e}", path.display())))
    }

    /// Writes `dir/manifest.json` through a temporary file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| RunnerError::io(&path, e))
    }

    pub fn run(&self, id: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn is_complete(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Complete)
    }

    /// Worst failure recorded by any run or artifact.
    pub fn worst_failure(&self) -> Option<FailureKind> {
        let runs = self.runs.iter().filter_map(|r| r.failure);
        let files = self.artifacts.iter().filter(|a| a.error.is_some()).map(|_| FailureKind::Io);
        runs.chain(files).max_by_key(|f| f.exit_code())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config("[pulse]\nintensities_wcm2 = [1e14, 2e14]\n").unwrap();
        let mut m = RunManifest::new(&config);
        for r in config.runs() {
            m.runs.push(RunRecord::pending(&r, "h".into()));
        }
        m.runs[1].failure = Some(FailureKind::Numerical);
        assert!(RunManifest::load(dir.path()).unwrap().is_none());
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(back, m);
        assert!(!back.is_complete());
        assert_eq!(back.worst_failure(), Some(FailureKind::Numerical));
    }
}
