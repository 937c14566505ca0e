use num_complex::Complex64;
use tdks_core::groundstate::{scf_solve, GroundState, OccupationSpec, ScfParams};
use tdks_core::hamiltonian::ChannelHamiltonian;
use tdks_core::observables::AnalysisBox;
use tdks_core::potentials::{LaserPulse, MoleculeSpec};
use tdks_core::propagation::{
    AbsorberSpec, CheckpointPolicy, FreezeMask, Observer, PotentialUpdate, Propagator, PropagatorSpec,
};
use tdks_core::{Grid, GridSpec, Orbital};

fn grid() -> Grid {
    Grid::new(GridSpec::new(81, 0.25, 12, 0.5)).unwrap()
}

fn nitrogen(g: &Grid) -> GroundState {
    let occ = OccupationSpec::builtin("N2", "neutral").unwrap();
    scf_solve(&MoleculeSpec::nitrogen(), &occ, g, &ScfParams::default()).unwrap()
}

fn observer() -> Observer {
    Observer {
        analysis_box: AnalysisBox::new(7.0, 4.0),
        cadence: 5,
    }
}

fn spec(update: PotentialUpdate, absorber: bool) -> PropagatorSpec {
    PropagatorSpec {
        dt: 0.05,
        krylov_order: 14,
        update,
        absorber: if absorber {
            AbsorberSpec {
                rho_onset: 4.5,
                ..AbsorberSpec::default()
            }
        } else {
            AbsorberSpec::disabled()
        },
    }
}

// a quarter cycle is enough to push the orbitals well off the ground state
fn pulse() -> LaserPulse {
    LaserPulse::new(390.0, 3e14, 0.25)
}

fn max_diff(a: &[Orbital], b: &[Orbital]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm()))
        .fold(0.0, f64::max)
}

/// Runs `pulse`, then 1000 field-free steps; returns the energy at the end
/// of the pulse and the largest deviation from it afterwards.
fn field_free_drift(g: &Grid, gs: &GroundState, pulse: &LaserPulse, update: PotentialUpdate) -> (f64, f64) {
    let s = PropagatorSpec {
        dt: 0.02,
        krylov_order: 18,
        update,
        absorber: AbsorberSpec::disabled(),
    };
    let obs = Observer {
        analysis_box: AnalysisBox::new(7.0, 4.0),
        cadence: 50,
    };
    let prop = Propagator::new(g, gs, Some(pulse), &s, &FreezeMask::all_active(), &obs).unwrap();
    let on = if pulse.intensity_wcm2 > 0.0 { prop.total_steps() } else { 0 };
    let mut prop = prop.with_steps(on + 1000);
    prop.run_until(on, None).unwrap();
    let e0 = prop.energy().unwrap();
    let mut worst = 0.0f64;
    for k in 1..=10 {
        prop.run_until(on + 100 * k, None).unwrap();
        worst = worst.max((prop.energy().unwrap() - e0).abs());
    }
    (e0, worst)
}

#[test]
fn field_free_energy_is_conserved_in_frozen_potential() {
    // kicked H2+: the frozen and the true Hamiltonian coincide
    let g = Grid::new(GridSpec::new(121, 0.2, 14, 0.45)).unwrap();
    let h2 = MoleculeSpec::homonuclear("H2+", 1, 2.0).unwrap();
    let gs = scf_solve(&h2, &OccupationSpec::single_electron(1), &g, &ScfParams::independent()).unwrap();
    let (e0, drift) = field_free_drift(&g, &gs, &LaserPulse::new(390.0, 1e14, 0.25), PotentialUpdate::Frozen);
    assert!(e0 > gs.total_energy + 1e-4, "{e0} {}", gs.total_energy);
    assert!(drift <= 1e-8, "drift {drift:e}");

    let g = grid();
    let gs = nitrogen(&g);
    let (_, drift) = field_free_drift(&g, &gs, &LaserPulse::new(390.0, 0.0, 1.0), PotentialUpdate::Frozen);
    assert!(drift <= 1e-8, "drift {drift:e}");
}

#[test]
fn field_free_energy_is_conserved_with_self_consistent_updates() {
    let g = Grid::new(GridSpec::new(161, 0.25, 16, 0.5)).unwrap();
    let gs = nitrogen(&g);
    let (e0, drift) = field_free_drift(&g, &gs, &LaserPulse::new(390.0, 1e13, 0.25), PotentialUpdate::PredictorCorrector);
    assert!(e0 > gs.total_energy + 1e-3, "{e0} {}", gs.total_energy);
    assert!(drift <= 1e-6, "drift {drift:e}");
}

#[test]
fn conjugation_reverses_field_free_evolution() {
    let g = grid();
    let gs = nitrogen(&g);
    let p = pulse();
    let prop = Propagator::new(&g, &gs, Some(&p), &spec(PotentialUpdate::Frozen, false), &FreezeMask::all_active(), &observer()).unwrap();
    let on = prop.total_steps();
    let mut prop = prop.with_steps(on + 200);
    prop.run_until(on, None).unwrap();
    let start = prop.orbitals();
    prop.run_until(on + 100, None).unwrap();
    assert!(max_diff(&prop.orbitals(), &start) > 1e-3);
    prop.conjugate();
    prop.run(None).unwrap();
    prop.conjugate();
    let err = max_diff(&prop.orbitals(), &start);
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn frozen_orbitals_are_untouched() {
    let g = grid();
    let gs = nitrogen(&g);
    let mask = FreezeMask::only(["3sg", "1pu"]);
    let mut prop = Propagator::new(&g, &gs, Some(&pulse()), &spec(PotentialUpdate::PredictorCorrector, true), &mask, &observer()).unwrap();
    prop.run(None).unwrap();
    let mut moved = 0;
    for (after, before) in prop.orbitals().iter().zip(&gs.orbitals) {
        if mask.is_active(before) {
            moved += usize::from(after.values != before.values);
        } else {
            assert_eq!(after.values, before.values, "{}", before.key());
        }
    }
    assert!(moved > 0);
}

#[test]
fn escaped_population_covers_absorbed_norm() {
    let g = grid();
    let gs = nitrogen(&g);
    let mut prop = Propagator::new(&g, &gs, Some(&pulse()), &spec(PotentialUpdate::PredictorCorrector, true), &FreezeMask::all_active(), &observer()).unwrap();
    prop.run(None).unwrap();
    let t = prop.trace();
    for (bound, absorbed) in t.bound.iter().zip(&t.absorbed) {
        for (n, a) in bound.iter().zip(absorbed) {
            assert!(1.0 - n >= a - 1e-12, "1 − N {} < absorbed {a}", 1.0 - n);
        }
    }
    assert!(t.absorbed.last().unwrap().iter().any(|&a| a > 0.0));
}

#[test]
fn norms_and_absorbed_tally_are_monotone_in_frozen_potential() {
    let g = grid();
    let gs = nitrogen(&g);
    let mut prop = Propagator::new(&g, &gs, Some(&pulse()), &spec(PotentialUpdate::Frozen, true), &FreezeMask::all_active(), &observer()).unwrap();
    let mut norms = prop.norms();
    let mut absorbed = prop.absorbed();
    while !prop.finished() {
        prop.run_until(prop.step_index() + 5, None).unwrap();
        for (old, new) in norms.iter().zip(prop.norms()) {
            assert!(new <= old + 1e-10, "norm rose from {old} to {new}");
        }
        for (old, new) in absorbed.iter().zip(prop.absorbed()) {
            assert!(new >= *old);
        }
        norms = prop.norms();
        absorbed = prop.absorbed();
    }
    // norm lost equals the tally
    for ((n, a), o) in prop.norms().iter().zip(prop.absorbed()).zip(&gs.orbitals) {
        let n0 = g.norm_sqr(&o.values);
        assert!((n0 - n - a).abs() < 1e-10 * n0, "{n0} {n} {a}");
    }
}

#[test]
fn checkpoint_resume_is_bitwise_identical() {
    let g = grid();
    let gs = nitrogen(&g);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let s = spec(PotentialUpdate::PredictorCorrector, true);
    let mask = FreezeMask::all_active();

    let mut whole = Propagator::new(&g, &gs, Some(&pulse()), &s, &mask, &observer()).unwrap();
    whole.run(None).unwrap();

    let mut first = Propagator::new(&g, &gs, Some(&pulse()), &s, &mask, &observer()).unwrap();
    first.run_until(37, None).unwrap();
    first.save_checkpoint(&path, "tag").unwrap();
    drop(first);

    let mut second = Propagator::new(&g, &gs, Some(&pulse()), &s, &mask, &observer()).unwrap();
    assert!(second.restore(&path, "other").is_err());
    second.restore(&path, "tag").unwrap();
    assert_eq!(second.step_index(), 37);
    second.run(None).unwrap();

    for (a, b) in whole.orbitals().iter().zip(&second.orbitals()) {
        assert_eq!(a.values, b.values);
    }
    assert_eq!(whole.trace(), second.trace());
    assert_eq!(whole.absorbed(), second.absorbed());
}

#[test]
fn checkpoint_policy_writes_during_run() {
    let g = grid();
    let gs = nitrogen(&g);
    let dir = tempfile::tempdir().unwrap();
    let policy = CheckpointPolicy {
        path: dir.path().join("p.ckpt"),
        tag: "t".into(),
        interval_steps: Some(10),
    };
    let s = spec(PotentialUpdate::Frozen, true);
    let mut p = Propagator::new(&g, &gs, Some(&pulse()), &s, &FreezeMask::all_active(), &observer()).unwrap();
    p.run_until(25, Some(&policy)).unwrap();
    let mut q = Propagator::new(&g, &gs, Some(&pulse()), &s, &FreezeMask::all_active(), &observer()).unwrap();
    q.restore(&policy.path, "t").unwrap();
    assert_eq!(q.step_index(), 20);
}

#[test]
fn channel_hamiltonian_matches_grid_kinetic_plus_potential() {
    let g = grid();
    let v: Vec<f64> = g.sample(|z, r| -2.0 / (0.5 + z * z + r * r).sqrt()).into_raw_vec_and_offset().0;
    for m in [0, 1, 2] {
        let psi = g.sample(|z, r| Complex64::new((-(z - 0.3).powi(2) - r * r).exp() * r.powi(m), z * (-r).exp()));
        let expected = g.apply_kinetic(&psi, m).unwrap();
        let flat: Vec<Complex64> = psi.iter().copied().collect();
        let mut out = vec![Complex64::new(0.0, 0.0); flat.len()];
        ChannelHamiltonian::new(&g, &v, m).apply(&flat, &mut out);
        for ((o, e), (p, v)) in out.iter().zip(expected.iter()).zip(flat.iter().zip(&v)) {
            let want = e + p * v;
            assert!((o - want).norm() <= 1e-12 * (1.0 + want.norm()), "m = {m}: {o} vs {want}");
        }

        // real fields take the same path
        let re: Vec<f64> = flat.iter().map(|c| c.re).collect();
        let mut out_re = vec![0.0; re.len()];
        ChannelHamiltonian::new(&g, &v, m).apply(&re, &mut out_re);
        for (a, b) in out_re.iter().zip(&out) {
            assert!((a - b.re).abs() <= 1e-12 * (1.0 + b.re.abs()));
        }
    }
}
