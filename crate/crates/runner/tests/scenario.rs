use std::fs;
use std::path::Path;

use tdks_runner::manifest::{ArtifactKind, RunStatus};
use tdks_runner::{parse_config, report, resume_scenario, run_scenario, RunOptions, ScenarioConfig};

/// Coarse grid and a half-cycle pulse: exercises the plumbing in seconds.
fn tiny(out: &Path, extra: &str) -> ScenarioConfig {
    let text = format!(
        "name = \"tiny\"\nout_dir = \"{}\"\ncadence = 10\n{extra}\n\
         [grid]\nn_z = 81\ndz = 0.25\nn_rho = 12\nh_rho = 0.5\n\
         [box]\nz_half_extent = 7.0\nrho_extent = 6.0\n\
         [absorber]\nrho_onset = 7.5\n\
         [propagator]\ndt = 0.1\nkrylov_order = 10\n",
        out.display()
    );
    let mut c = parse_config(&text).unwrap();
    for p in &mut c.pulses {
        p.n_cycles = 0.5;
    }
    c
}

#[test]
fn single_run_emits_listed_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), "[pulse]\nintensities_wcm2 = [4e14]");
    let t = std::time::Instant::now();
    let m = run_scenario(&c, &RunOptions::default()).unwrap();
    eprintln!("elapsed {:?}", t.elapsed());
    assert!(m.is_complete(), "{:?}", m.runs);
    let r = &m.runs[0];
    assert_eq!(r.steps_done, r.total_steps);
    let p = r.probabilities.unwrap();
    assert!((p.p0 + p.p1 + p.p2plus - 1.0).abs() < 1e-12);
    for a in &m.artifacts {
        assert!(a.error.is_none(), "{a:?}");
        assert!(dir.path().join(&a.path).exists(), "{}", a.path);
    }
    let kinds: Vec<ArtifactKind> = m.artifacts.iter().map(|a| a.kind).collect();
    for k in [ArtifactKind::GroundState, ArtifactKind::Trace, ArtifactKind::Yields, ArtifactKind::Summary] {
        assert!(kinds.contains(&k), "{k:?}");
    }
    assert!(!dir.path().join("ckpt").read_dir().map(|mut d| d.next().is_some()).unwrap_or(false));
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap()
}

#[test]
fn rerun_is_a_manifest_hit() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), "");
    let first = run_scenario(&c, &RunOptions::default()).unwrap();
    let trace = first.runs[0].trace.clone().unwrap();
    // A hit must not touch the trace; a recomputation would rewrite it.
    fs::write(dir.path().join(&trace), b"sentinel").unwrap();
    let second = run_scenario(&c, &RunOptions::default()).unwrap();
    assert_eq!(first.runs, second.runs);
    assert_eq!(read(dir.path(), &trace), b"sentinel");
}

#[test]
fn identical_configs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_scenario(&tiny(a.path(), ""), &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
    let mb = run_scenario(&tiny(b.path(), ""), &RunOptions { threads: Some(2), ..Default::default() }).unwrap();
    for art in &ma.artifacts {
        assert_eq!(read(a.path(), &art.path), read(b.path(), &art.path), "{}", art.path);
    }
    assert_eq!(ma.runs[0].probabilities, mb.runs[0].probabilities);
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let whole = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let reference = run_scenario(&tiny(whole.path(), ""), &RunOptions::default()).unwrap();

    let c = tiny(split.path(), "");
    let opts = RunOptions {
        max_steps_per_run: Some(70),
        checkpoint_interval: Some(25),
        ..Default::default()
    };
    let partial = run_scenario(&c, &opts).unwrap();
    let r = &partial.runs[0];
    assert_eq!(r.status, RunStatus::Incomplete);
    assert_eq!(r.steps_done, 70);
    assert!(split.path().join(r.checkpoint.as_ref().unwrap()).exists());
    let summary = String::from_utf8(read(split.path(), "summary.md")).unwrap();
    assert!(summary.contains("Unfinished runs"));

    let done = resume_scenario(split.path(), &RunOptions::default()).unwrap();
    assert!(done.is_complete());
    let (x, y) = (reference.runs[0].probabilities.unwrap(), done.runs[0].probabilities.unwrap());
    assert!((x.p1 - y.p1).abs() <= 1e-12 && (x.p0 - y.p0).abs() <= 1e-12);
    let rel = done.runs[0].trace.as_ref().unwrap();
    assert_eq!(read(whole.path(), rel), read(split.path(), rel));
}

#[test]
fn frozen_orbital_suite_writes_one_trace_per_mask() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(
        dir.path(),
        "molecules = [\"F2\"]\n\
         [[mask]]\n[[mask]]\nactive = [\"3sg\", \"1pu\", \"1pg\"]\n\
         [[mask]]\nactive = [\"1pu\", \"1pg\"]\n[[mask]]\nactive = [\"1pg\"]\n\
         [pulse]\nintensities_wcm2 = [2e14]",
    );
    let m = run_scenario(&c, &RunOptions::default()).unwrap();
    assert!(m.is_complete());
    let traces: Vec<_> = m.artifacts.iter().filter(|a| a.kind == ArtifactKind::Trace).collect();
    assert_eq!(traces.len(), 4);
    assert_eq!(m.grounds.len(), 1);
    // frozen spin-orbitals keep their initial populations exactly
    let text = String::from_utf8(read(dir.path(), &m.runs[3].trace.clone().unwrap())).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    for (k, h) in header.iter().enumerate().skip(2) {
        if !h.starts_with("N_1pg") {
            assert_eq!(first[k], last[k], "{h}");
        }
    }
}

#[test]
fn singlet_and_triplet_sweep_gives_ten_yields() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(
        dir.path(),
        "molecules = [\"O2\"]\noccupations = [\"singlet\", \"triplet\"]\n\
         [pulse]\nintensities_wcm2 = [1e14, 2e14, 4e14, 6e14, 8e14]",
    );
    let m = run_scenario(&c, &RunOptions::default()).unwrap();
    assert!(m.is_complete());
    let yields = tdks_core::observables::read_yields_csv(fs::File::open(dir.path().join("yields.csv")).unwrap()).unwrap();
    assert_eq!(yields.len(), 10);
    let table = String::from_utf8(read(dir.path(), "yield_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert_eq!(table.lines().next().unwrap().split(',').count(), 3);

    fs::remove_file(dir.path().join("yields.csv")).unwrap();
    let again = report(dir.path()).unwrap();
    assert_eq!(again.artifacts, m.artifacts);
    assert!(dir.path().join("yields.csv").exists());
}
