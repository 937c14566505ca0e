//! Real-time propagation of the Kohn–Sham orbitals through a laser pulse.
//!
//! Spin-orbitals with identical ground-state values, the same `|m|`, the
//! same freeze flag and (for spin-symmetric states) either spin obey the
//! same equation of motion. Each such class is propagated once and its
//! weight carried into the density.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::grid::{Grid, Orbital, Spin};
use crate::groundstate::{effective, fields, Fields, GroundState, Interaction};
use crate::hamiltonian::{add_velocity_coupling, ChannelHamiltonian};
use crate::linalg::krylov_expm;
use crate::observables::{box_population, AnalysisBox, PopulationTrace};
use crate::potentials::{eval_ionic, exchange_energy, Gauge, HartreeSolver, LaserPulse, SpinDensity};

/// How `V_H + V_xc` follows the density during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialUpdate {
    /// Half-step predictor for the midpoint density, then one full step in
    /// the midpoint potential.
    PredictorCorrector,
    /// Ground-state `V_H + V_xc` held fixed; only the laser term varies.
    Frozen,
}

/// Multiplicative boundary mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorberSpec {
    pub enabled: bool,
    /// Outer fraction of each z half-extent covered by the mask.
    pub z_fraction: f64,
    /// Radius beyond which the radial mask starts.
    pub rho_onset: f64,
    /// Power applied to the cosine profile.
    pub exponent: f64,
}

impl Default for AbsorberSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            z_fraction: 0.1,
            rho_onset: 14.0,
            exponent: 0.125,
        }
    }
}

impl AbsorberSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn z_onset(&self, grid: &Grid) -> f64 {
        (1.0 - self.z_fraction) * grid.z_max()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.z_fraction > 0.0 && self.z_fraction < 1.0) {
            return Err(Error::InvalidInput("absorber z_fraction must lie in (0, 1)".into()));
        }
        if !(self.exponent > 0.0) {
            return Err(Error::InvalidInput("absorber exponent must be positive".into()));
        }
        if !(self.rho_onset > 0.0 && self.rho_onset < grid.rho_max()) {
            return Err(Error::InvalidInput(format!(
                "absorber rho_onset {} must lie inside the radial grid (ρ_max = {:.3})",
                self.rho_onset,
                grid.rho_max()
            )));
        }
        Ok(())
    }

    /// The analysis box must end strictly before the mask begins.
    pub fn check_box(&self, grid: &Grid, bx: &AnalysisBox) -> Result<()> {
        bx.validate(grid)?;
        if !self.enabled {
            return Ok(());
        }
        self.validate(grid)?;
        let z_on = self.z_onset(grid);
        if bx.z_half_extent >= z_on || bx.rho_extent >= self.rho_onset {
            return Err(Error::InvalidInput(format!(
                "analysis box (|z| ≤ {}, ρ ≤ {}) overlaps the absorber (|z| > {z_on:.3} or ρ > {})",
                bx.z_half_extent, bx.rho_extent, self.rho_onset
            )));
        }
        Ok(())
    }
}

/// Mask values on the grid together with the quadrature weights.
#[derive(Debug, Clone)]
pub struct Absorber {
    mask: Vec<f64>,
    weights: Vec<f64>,
}

impl Absorber {
    pub fn new(spec: &AbsorberSpec, grid: &Grid) -> Result<Self> {
        spec.validate(grid)?;
        let weights = point_weights(grid);
        if !spec.enabled {
            return Ok(Self {
                mask: vec![1.0; grid.len()],
                weights,
            });
        }
        let z_max = grid.z_max();
        let z_on = spec.z_onset(grid);
        let rho_max = grid.rho_max();
        let profile = |s: f64| (FRAC_PI_2 * s.clamp(0.0, 1.0)).cos().max(0.0).powf(spec.exponent);
        let mask = grid
            .sample(|z, r| {
                let fz = if z.abs() > z_on {
                    profile((z.abs() - z_on) / (z_max - z_on))
                } else {
                    1.0
                };
                let fr = if r > spec.rho_onset {
                    profile((r - spec.rho_onset) / (rho_max - spec.rho_onset))
                } else {
                    1.0
                };
                fz * fr
            })
            .into_raw_vec_and_offset()
            .0;
        Ok(Self { mask, weights })
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    /// `ψ ← Mψ`; returns the removed norm `Σ w |ψ|² (1 − M²)`.
    pub fn apply(&self, psi: &mut [Complex64]) -> f64 {
        let mut removed = 0.0;
        for ((v, &m), &w) in psi.iter_mut().zip(&self.mask).zip(&self.weights) {
            if m != 1.0 {
                removed += v.norm_sqr() * w * (1.0 - m * m);
                *v *= m;
            }
        }
        removed
    }
}

/// Applies `absorber` to one orbital; returns the removed norm.
pub fn apply_absorber(orbital: &mut Orbital, absorber: &Absorber) -> f64 {
    let mut values = std::mem::take(&mut orbital.values).as_standard_layout().into_owned();
    let removed = absorber.apply(values.as_slice_mut().expect("standard layout"));
    orbital.values = values;
    removed
}

/// Time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSpec {
    pub dt: f64,
    pub krylov_order: usize,
    pub update: PotentialUpdate,
    pub absorber: AbsorberSpec,
}

impl Default for PropagatorSpec {
    fn default() -> Self {
        Self {
            dt: 0.02,
            krylov_order: 18,
            update: PotentialUpdate::PredictorCorrector,
            absorber: AbsorberSpec::default(),
        }
    }
}

impl PropagatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput("time step must be positive".into()));
        }
        if self.krylov_order < 2 {
            return Err(Error::InvalidInput("Krylov order must be at least 2".into()));
        }
        Ok(())
    }
}

/// Which spin-orbitals respond to the field.
///
/// Entries are orbital labels (`3sg`, applying to every `m` and spin) or
/// spin-orbital keys (`1pu+1_up`). An absent list means all are active.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreezeMask {
    pub active: Option<BTreeSet<String>>,
}

impl FreezeMask {
    pub fn all_active() -> Self {
        Self { active: None }
    }

    pub fn only<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            active: Some(names.into_iter().map(Into::into).collect()),
        }
    }

    pub fn is_active(&self, orbital: &Orbital) -> bool {
        match &self.active {
            None => true,
            Some(set) => set.contains(&orbital.label) || set.contains(&orbital.key()),
        }
    }

    pub fn validate(&self, orbitals: &[Orbital]) -> Result<()> {
        if let Some(set) = &self.active {
            for name in set {
                if !orbitals.iter().any(|o| &o.label == name || &o.key() == name) {
                    return Err(Error::InvalidInput(format!("freeze mask names unknown orbital '{name}'")));
                }
            }
        }
        if !orbitals.iter().any(|o| self.is_active(o)) {
            return Err(Error::InvalidInput("freeze mask leaves no active orbital".into()));
        }
        Ok(())
    }

    /// Short tag for file names, e.g. `all` or `1pg-1pu`.
    pub fn tag(&self) -> String {
        match &self.active {
            None => "all".into(),
            Some(set) => set.iter().cloned().collect::<Vec<_>>().join("-"),
        }
    }
}

/// Sampling of the analysis-box populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observer {
    pub analysis_box: AnalysisBox,
    /// Steps between samples.
    pub cadence: usize,
}

impl Default for Observer {
    fn default() -> Self {
        Self {
            analysis_box: AnalysisBox::default(),
            cadence: 50,
        }
    }
}

/// Where and how often to checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPolicy {
    pub path: PathBuf,
    /// Identifies the configuration; a resume with a different tag fails.
    pub tag: String,
    /// Steps between checkpoints; one optical cycle when `None`.
    pub interval_steps: Option<usize>,
}

fn point_weights(grid: &Grid) -> Vec<f64> {
    let nr = grid.n_rho();
    let w = grid.cell_weights();
    (0..grid.len()).map(|i| w[i % nr]).collect()
}

/// `ψ ← exp(−i H Δt) ψ` for each orbital, with `potentials` the assembled
/// per-spin `V_eff` and `vector_potential` the velocity-gauge `A`.
/// Returns the largest Krylov error estimate.
pub fn krylov_step(
    grid: &Grid,
    orbitals: &mut [Orbital],
    potentials: &[Array2<f64>; 2],
    vector_potential: f64,
    spec: &PropagatorSpec,
) -> Result<f64> {
    spec.validate()?;
    for p in potentials {
        grid.check_shape(&p.view())?;
    }
    let flat: Vec<Vec<f64>> = potentials
        .iter()
        .map(|p| p.as_standard_layout().iter().copied().collect())
        .collect();
    let weights = point_weights(grid);
    let mut worst = 0.0f64;
    for o in orbitals.iter_mut() {
        grid.check_shape(&o.values.view())?;
        let mut v = o.values.as_standard_layout().into_owned();
        let err = advance(
            grid,
            &flat[o.spin.index()],
            o.m,
            vector_potential,
            &weights,
            v.as_slice_mut().expect("standard layout"),
            spec.dt,
            spec.krylov_order,
        )?;
        worst = worst.max(err);
        o.values = v;
    }
    Ok(worst)
}

#[allow(clippy::too_many_arguments)]
fn advance(
    grid: &Grid,
    potential: &[f64],
    m: i32,
    vector_potential: f64,
    weights: &[f64],
    psi: &mut [Complex64],
    tau: f64,
    order: usize,
) -> Result<f64> {
    let h = ChannelHamiltonian::new(grid, potential, m);
    let info = krylov_expm(
        |x: &[Complex64], y: &mut [Complex64]| {
            h.apply(x, y);
            add_velocity_coupling(grid, vector_potential, x, y);
        },
        weights,
        psi,
        tau,
        order,
    )?;
    Ok(info.error_estimate)
}

/// Spin-orbitals sharing one equation of motion.
#[derive(Debug, Clone)]
struct Class {
    m: i32,
    spin: Spin,
    active: bool,
    /// indices into the initial orbital list
    members: Vec<usize>,
    /// member counts per spin
    weight: [f64; 2],
    values: Vec<Complex64>,
    absorbed: f64,
}

fn build_classes(state: &GroundState, mask: &FreezeMask) -> Vec<Class> {
    let spin_symmetric = state.density.up == state.density.down;
    let mut classes: Vec<Class> = Vec::new();
    for (i, o) in state.orbitals.iter().enumerate() {
        let active = mask.is_active(o);
        let values: Vec<Complex64> = o.values.iter().copied().collect();
        let found = classes.iter_mut().find(|c| {
            let r = &state.orbitals[c.members[0]];
            r.label == o.label
                && r.m.abs() == o.m.abs()
                && c.active == active
                && (spin_symmetric || r.spin == o.spin)
                && c.values == values
        });
        match found {
            Some(c) => {
                c.members.push(i);
                c.weight[o.spin.index()] += 1.0;
            }
            None => {
                let mut weight = [0.0; 2];
                weight[o.spin.index()] = 1.0;
                classes.push(Class {
                    m: o.m.abs(),
                    spin: o.spin,
                    active,
                    members: vec![i],
                    weight,
                    values,
                    absorbed: 0.0,
                });
            }
        }
    }
    classes
}

fn accumulate(density: &mut [Vec<f64>; 2], weight: [f64; 2], values: &[Complex64]) {
    for s in 0..2 {
        if weight[s] != 0.0 {
            for (n, v) in density[s].iter_mut().zip(values) {
                *n += weight[s] * v.norm_sqr();
            }
        }
    }
}

/// End state of a propagation.
#[derive(Debug, Clone)]
pub struct PropagationOutcome {
    pub trace: PopulationTrace,
    /// Final spin-orbitals in ground-state order.
    pub orbitals: Vec<Orbital>,
    pub steps: usize,
    /// Largest Krylov error estimate seen.
    pub max_krylov_error: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    tag: String,
    step: usize,
    total_steps: usize,
    dt: f64,
    classes: Vec<(String, i32, Spin, bool, usize)>,
    trace: PopulationTrace,
    max_krylov_error: f64,
}

/// Stepwise driver for one pulse.
pub struct Propagator<'g> {
    grid: &'g Grid,
    template: Vec<Orbital>,
    classes: Vec<Class>,
    ionic: Vec<f64>,
    nuclear_repulsion: f64,
    hartree: Option<HartreeSolver>,
    frozen_density: [Vec<f64>; 2],
    static_potential: Option<[Vec<f64>; 2]>,
    absorber: Option<Absorber>,
    pulse: Option<LaserPulse>,
    spec: PropagatorSpec,
    observer: Observer,
    weights: Vec<f64>,
    z: Vec<f64>,
    step: usize,
    total_steps: usize,
    trace: PopulationTrace,
    max_krylov_error: f64,
}

impl<'g> Propagator<'g> {
    /// Prepares propagation of `initial` through `pulse` (field-free when
    /// `None`; then set the length with [`Propagator::with_steps`]).
    pub fn new(
        grid: &'g Grid,
        initial: &GroundState,
        pulse: Option<&LaserPulse>,
        spec: &PropagatorSpec,
        mask: &FreezeMask,
        observer: &Observer,
    ) -> Result<Self> {
        spec.validate()?;
        if *grid.spec() != initial.grid_spec {
            return Err(Error::InvalidInput("ground state was computed on a different grid".into()));
        }
        if observer.cadence == 0 {
            return Err(Error::InvalidInput("observer cadence must be at least one step".into()));
        }
        spec.absorber.check_box(grid, &observer.analysis_box)?;
        mask.validate(&initial.orbitals)?;
        if let Some(p) = pulse {
            p.validate()?;
        }
        let classes = build_classes(initial, mask);
        let hartree = match initial.interaction {
            Interaction::KohnSham => Some(HartreeSolver::new(grid)?),
            Interaction::None => None,
        };
        let n = grid.len();
        let mut frozen_density = [vec![0.0; n], vec![0.0; n]];
        for c in classes.iter().filter(|c| !c.active) {
            accumulate(&mut frozen_density, c.weight, &c.values);
        }
        let ionic = eval_ionic(&initial.molecule, grid).into_raw_vec_and_offset().0;
        let z = (0..n).map(|i| grid.z_points()[i / grid.n_rho()]).collect();
        let absorber = if spec.absorber.enabled {
            Some(Absorber::new(&spec.absorber, grid)?)
        } else {
            None
        };
        let total_steps = pulse.map_or(0, |p| (p.duration() / spec.dt - 1e-9).ceil() as usize);
        let keys = initial.orbitals.iter().map(Orbital::key).collect();
        let mut me = Self {
            grid,
            template: initial.orbitals.clone(),
            classes,
            ionic,
            nuclear_repulsion: initial.molecule.nuclear_repulsion(),
            hartree,
            frozen_density,
            static_potential: None,
            absorber,
            pulse: pulse.copied(),
            spec: *spec,
            observer: *observer,
            weights: point_weights(grid),
            z,
            step: 0,
            total_steps,
            trace: PopulationTrace::new(keys),
            max_krylov_error: 0.0,
        };
        if spec.update == PotentialUpdate::Frozen {
            let f = me.fields_of(&me.density(None))?;
            me.static_potential = Some(me.potentials_of(&f));
        }
        me.record()?;
        Ok(me)
    }

    /// Overrides the number of steps.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.total_steps = steps;
        self
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.spec.dt
    }

    pub fn finished(&self) -> bool {
        self.step >= self.total_steps
    }

    pub fn trace(&self) -> &PopulationTrace {
        &self.trace
    }

    pub fn max_krylov_error(&self) -> f64 {
        self.max_krylov_error
    }

    /// Steps per optical cycle (the default checkpoint interval).
    pub fn steps_per_cycle(&self) -> Option<usize> {
        self.pulse
            .map(|p| ((p.period() / self.spec.dt).round() as usize).max(1))
    }

    fn field_at(&self, t: f64) -> (f64, f64) {
        match self.pulse {
            None => (0.0, 0.0),
            Some(p) => match p.gauge {
                Gauge::Length => (p.field(t), 0.0),
                Gauge::Velocity => (0.0, p.vector_potential(t)),
            },
        }
    }

    /// Total spin density, optionally with replacement values for the
    /// active classes.
    fn density(&self, active_values: Option<&[Vec<Complex64>]>) -> [Vec<f64>; 2] {
        let mut d = self.frozen_density.clone();
        let mut k = 0;
        for c in self.classes.iter().filter(|c| c.active) {
            let v = match active_values {
                Some(vals) => &vals[k],
                None => &c.values,
            };
            accumulate(&mut d, c.weight, v);
            k += 1;
        }
        d
    }

    fn fields_of(&self, d: &[Vec<f64>; 2]) -> Result<Fields> {
        let shape = self.grid.shape();
        let density = SpinDensity {
            up: Array2::from_shape_vec(shape, d[0].clone()).expect("grid sized"),
            down: Array2::from_shape_vec(shape, d[1].clone()).expect("grid sized"),
        };
        fields(self.grid, self.hartree.as_ref(), &density)
    }

    fn potentials_of(&self, f: &Fields) -> [Vec<f64>; 2] {
        let ionic = Array2::from_shape_vec(self.grid.shape(), self.ionic.clone()).expect("grid sized");
        effective(&ionic, f)
    }

    /// `V_H + V_xc + V_ion` of the current state, or the frozen one.
    fn current_potentials(&self, active_values: Option<&[Vec<Complex64>]>) -> Result<[Vec<f64>; 2]> {
        match &self.static_potential {
            Some(v) => Ok(v.clone()),
            None => Ok(self.potentials_of(&self.fields_of(&self.density(active_values))?)),
        }
    }

    fn with_laser(&self, base: &[Vec<f64>; 2], e: f64) -> [Vec<f64>; 2] {
        if e == 0.0 {
            return base.clone();
        }
        let add = |v: &Vec<f64>| v.iter().zip(&self.z).map(|(v, z)| v + e * z).collect();
        [add(&base[0]), add(&base[1])]
    }

    /// Propagates copies of the active class values by `tau`.
    fn evolve(
        &self,
        values: &mut [Vec<Complex64>],
        potentials: &[Vec<f64>; 2],
        a: f64,
        tau: f64,
        order: usize,
    ) -> Result<f64> {
        let active: Vec<&Class> = self.classes.iter().filter(|c| c.active).collect();
        let errs = values
            .par_iter_mut()
            .zip(active.par_iter())
            .map(|(v, c)| {
                advance(
                    self.grid,
                    &potentials[c.spin.index()],
                    c.m,
                    a,
                    &self.weights,
                    v,
                    tau,
                    order,
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    }

    fn active_values(&self) -> Vec<Vec<Complex64>> {
        self.classes
            .iter()
            .filter(|c| c.active)
            .map(|c| c.values.clone())
            .collect()
    }

    /// One time step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.spec.dt;
        let t = self.time();
        let base = self.current_potentials(None)?;
        let mut next = self.active_values();
        let order = self.spec.krylov_order;
        let err = match self.spec.update {
            PotentialUpdate::Frozen => {
                let (e, a) = self.field_at(t + 0.5 * dt);
                self.evolve(&mut next, &self.with_laser(&base, e), a, dt, order)?
            }
            PotentialUpdate::PredictorCorrector => {
                let mut half = next.clone();
                let (e, a) = self.field_at(t + 0.25 * dt);
                // the predictor only feeds the midpoint density
                let e1 = self.evolve(&mut half, &self.with_laser(&base, e), a, 0.5 * dt, order.div_ceil(2).max(2))?;
                let mid = self.current_potentials(Some(&half))?;
                let (e, a) = self.field_at(t + 0.5 * dt);
                let e2 = self.evolve(&mut next, &self.with_laser(&mid, e), a, dt, order)?;
                e1.max(e2)
            }
        };
        self.max_krylov_error = self.max_krylov_error.max(err);
        let absorber = self.absorber.as_ref();
        for (c, v) in self.classes.iter_mut().filter(|c| c.active).zip(next) {
            c.values = v;
            if let Some(ab) = absorber {
                c.absorbed += ab.apply(&mut c.values);
            }
        }
        self.step += 1;
        if self.step % self.observer.cadence == 0 || self.step == self.total_steps {
            self.record()?;
        }
        Ok(())
    }

    fn record(&mut self) -> Result<()> {
        if self.trace.times.last() == Some(&self.time()) && !self.trace.is_empty() {
            return Ok(());
        }
        let mut bound = vec![0.0; self.template.len()];
        let mut absorbed = vec![0.0; self.template.len()];
        for c in &self.classes {
            let n = box_population(&c.values, &self.observer.analysis_box, self.grid);
            for &i in &c.members {
                bound[i] = n.min(1.0);
                absorbed[i] = c.absorbed;
            }
        }
        let (e, _) = self.field_at(self.time());
        self.trace.push(self.time(), e, bound, absorbed);
        Ok(())
    }

    /// Runs to the end, checkpointing as `policy` asks.
    pub fn run(&mut self, policy: Option<&CheckpointPolicy>) -> Result<()> {
        self.run_until(self.total_steps, policy)
    }

    /// Runs up to step `stop` (clamped to the total).
    pub fn run_until(&mut self, stop: usize, policy: Option<&CheckpointPolicy>) -> Result<()> {
        let stop = stop.min(self.total_steps);
        let interval = policy.and_then(|p| p.interval_steps.or(self.steps_per_cycle()));
        while self.step < stop {
            self.step()?;
            if let (Some(p), Some(k)) = (policy, interval) {
                if self.step % k == 0 && !self.finished() {
                    self.save_checkpoint(&p.path, &p.tag)?;
                }
            }
        }
        Ok(())
    }

    /// Spin-orbitals at the current time, in ground-state order.
    pub fn orbitals(&self) -> Vec<Orbital> {
        let shape = self.grid.shape();
        let mut out = self.template.clone();
        for c in self.classes.iter().filter(|c| c.active) {
            let values = Array2::from_shape_vec(shape, c.values.clone()).expect("grid sized");
            for &i in &c.members {
                out[i].values = values.clone();
            }
        }
        out
    }

    /// Absorbed norm per spin-orbital, in ground-state order.
    pub fn absorbed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.template.len()];
        for c in &self.classes {
            for &i in &c.members {
                out[i] = c.absorbed;
            }
        }
        out
    }

    /// Grid norm of every spin-orbital.
    pub fn norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.template.len()];
        for c in &self.classes {
            let n: f64 = c.values.iter().zip(&self.weights).map(|(v, w)| v.norm_sqr() * w).sum();
            for &i in &c.members {
                out[i] = n;
            }
        }
        out
    }

    /// Field-free Kohn–Sham total energy of the current orbitals.
    pub fn energy(&self) -> Result<f64> {
        let d = self.density(None);
        let f = self.fields_of(&d)?;
        let v = self.potentials_of(&f);
        let mut sum = 0.0;
        for c in &self.classes {
            for s in 0..2 {
                if c.weight[s] == 0.0 {
                    continue;
                }
                let h = ChannelHamiltonian::new(self.grid, &v[s], c.m);
                let mut hv = vec![Complex64::new(0.0, 0.0); c.values.len()];
                h.apply(&c.values, &mut hv);
                let e: f64 = c
                    .values
                    .iter()
                    .zip(&hv)
                    .zip(&self.weights)
                    .map(|((a, b), w)| (a.conj() * b).re * w)
                    .sum();
                sum += c.weight[s] * e;
            }
        }
        if self.hartree.is_some() {
            let n: Vec<f64> = d[0].iter().zip(&d[1]).map(|(a, b)| a + b).collect();
            let vh = f.hartree.as_slice().expect("standard layout");
            let eh: f64 = 0.5 * n.iter().zip(vh).zip(&self.weights).map(|((n, v), w)| n * v * w).sum::<f64>();
            let mut exc = 0.0;
            for s in 0..2 {
                let vx = f.xc[s].as_slice().expect("standard layout");
                exc += d[s].iter().zip(vx).zip(&self.weights).map(|((n, v), w)| n * v * w).sum::<f64>();
            }
            let shape = self.grid.shape();
            let density = SpinDensity {
                up: Array2::from_shape_vec(shape, d[0].clone()).expect("grid sized"),
                down: Array2::from_shape_vec(shape, d[1].clone()).expect("grid sized"),
            };
            sum += -eh - exc + exchange_energy(&density, self.grid)?;
        }
        Ok(sum + self.nuclear_repulsion)
    }

    /// Complex-conjugates every active orbital (time reversal of a real
    /// Hamiltonian).
    pub fn conjugate(&mut self) {
        for c in self.classes.iter_mut().filter(|c| c.active) {
            c.values.iter_mut().for_each(|v| *v = v.conj());
        }
    }

    pub fn save_checkpoint(&self, path: &Path, tag: &str) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "propagation".into(),
            tag: tag.into(),
            step: self.step,
            total_steps: self.total_steps,
            dt: self.spec.dt,
            classes: self
                .classes
                .iter()
                .map(|c| {
                    let o = &self.template[c.members[0]];
                    (o.label.clone(), c.m, c.spin, c.active, c.members.len())
                })
                .collect(),
            trace: self.trace.clone(),
            max_krylov_error: self.max_krylov_error,
        };
        let flats: Vec<Vec<f64>> = self
            .classes
            .iter()
            .map(|c| c.values.iter().flat_map(|v| [v.re, v.im]).collect())
            .collect();
        let absorbed: Vec<f64> = self.classes.iter().map(|c| c.absorbed).collect();
        let names: Vec<String> = (0..flats.len()).map(|i| format!("class{i}")).collect();
        let mut arrays: Vec<(&str, &[f64])> = vec![("absorbed", &absorbed)];
        arrays.extend(names.iter().map(String::as_str).zip(flats.iter().map(Vec::as_slice)));
        checkpoint::write(path, &meta, &arrays)
    }

    /// Replaces the state with a checkpoint written by an identically
    /// configured propagator.
    pub fn restore(&mut self, path: &Path, tag: &str) -> Result<()> {
        let (meta, arrays): (CheckpointMeta, _) = checkpoint::read(path)?;
        let mismatch = |what: &str| Error::Checkpoint(format!("{}: {what} does not match", path.display()));
        if meta.kind != "propagation" {
            return Err(mismatch("checkpoint kind"));
        }
        if meta.tag != tag {
            return Err(mismatch("configuration tag"));
        }
        if meta.total_steps != self.total_steps || meta.dt.to_bits() != self.spec.dt.to_bits() {
            return Err(mismatch("time grid"));
        }
        if meta.classes.len() != self.classes.len() {
            return Err(mismatch("orbital structure"));
        }
        for (c, (label, m, spin, active, count)) in self.classes.iter().zip(&meta.classes) {
            let o = &self.template[c.members[0]];
            if &o.label != label || c.m != *m || c.spin != *spin || c.active != *active || c.members.len() != *count {
                return Err(mismatch("orbital structure"));
            }
        }
        let absorbed = arrays.get("absorbed").ok_or_else(|| mismatch("absorbed tally"))?;
        for (i, c) in self.classes.iter_mut().enumerate() {
            let flat = arrays.get(&format!("class{i}")).ok_or_else(|| mismatch("orbital data"))?;
            if flat.len() != 2 * c.values.len() {
                return Err(mismatch("orbital data"));
            }
            c.values = flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            c.absorbed = absorbed[i];
        }
        self.step = meta.step;
        self.trace = meta.trace;
        self.max_krylov_error = meta.max_krylov_error;
        Ok(())
    }

    pub fn into_outcome(self) -> PropagationOutcome {
        PropagationOutcome {
            orbitals: self.orbitals(),
            steps: self.step,
            max_krylov_error: self.max_krylov_error,
            trace: self.trace,
        }
    }
}

/// Propagates `initial` through `pulse` from `t = 0` to the pulse end.
pub fn propagate(
    grid: &Grid,
    initial: &GroundState,
    pulse: &LaserPulse,
    spec: &PropagatorSpec,
    mask: &FreezeMask,
    observer: &Observer,
    policy: Option<&CheckpointPolicy>,
) -> Result<PropagationOutcome> {
    let mut p = Propagator::new(grid, initial, Some(pulse), spec, mask, observer)?;
    p.run(policy)?;
    Ok(p.into_outcome())
}

/// Continues an interrupted [`propagate`] from the checkpoint in `policy`.
pub fn resume(
    grid: &Grid,
    initial: &GroundState,
    pulse: &LaserPulse,
    spec: &PropagatorSpec,
    mask: &FreezeMask,
    observer: &Observer,
    policy: &CheckpointPolicy,
) -> Result<PropagationOutcome> {
    let mut p = Propagator::new(grid, initial, Some(pulse), spec, mask, observer)?;
    p.restore(&policy.path, &policy.tag)?;
    p.run(Some(policy))?;
    Ok(p.into_outcome())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::groundstate::{scf_solve, OccupationSpec, ScfParams};
    use crate::potentials::MoleculeSpec;

    fn small_grid() -> Grid {
        Grid::new(GridSpec::new(121, 0.2, 14, 0.45)).unwrap()
    }

    fn hydrogen(grid: &Grid) -> GroundState {
        let occ = OccupationSpec::single_electron(0);
        scf_solve(&MoleculeSpec::atom("H", 1.0), &occ, grid, &ScfParams::independent()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(PropagatorSpec::default().validate().is_ok());
        let bad = PropagatorSpec {
            krylov_order: 1,
            ..PropagatorSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = PropagatorSpec {
            dt: 0.0,
            ..PropagatorSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn absorber_mask_shape_and_bookkeeping() {
        let g = small_grid();
        let spec = AbsorberSpec {
            rho_onset: 8.0,
            ..AbsorberSpec::default()
        };
        let ab = Absorber::new(&spec, &g).unwrap();
        let z_on = spec.z_onset(&g);
        let nr = g.n_rho();
        for (i, &m) in ab.mask().iter().enumerate() {
            let z = g.z_points()[i / nr];
            let r = g.rho_points()[i % nr];
            assert!((0.0..=1.0).contains(&m));
            if z.abs() <= z_on && r <= 8.0 {
                assert_eq!(m, 1.0);
            } else {
                assert!(m < 1.0);
            }
        }
        // packet sitting on the z edge
        let mut psi: Vec<Complex64> = g
            .sample(|z, r| Complex64::new((-(z - 11.0).powi(2) - r * r).exp(), 0.0))
            .into_raw_vec_and_offset()
            .0;
        let w = point_weights(&g);
        let before: f64 = psi.iter().zip(&w).map(|(v, w)| v.norm_sqr() * w).sum();
        let removed = ab.apply(&mut psi);
        let after: f64 = psi.iter().zip(&w).map(|(v, w)| v.norm_sqr() * w).sum();
        assert!(removed > 0.0);
        assert!((removed + after - before).abs() < 1e-12 * before);

        let mut inner: Vec<Complex64> = g
            .sample(|z, r| Complex64::new((-(z * z) - r * r).exp(), 0.0))
            .into_raw_vec_and_offset()
            .0;
        for (v, &m) in inner.iter_mut().zip(ab.mask()) {
            if m < 1.0 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        let copy = inner.clone();
        assert_eq!(ab.apply(&mut inner), 0.0);
        assert_eq!(inner, copy);
    }

    #[test]
    fn absorber_box_overlap_rejected() {
        let g = small_grid();
        let spec = AbsorberSpec {
            rho_onset: 8.0,
            ..AbsorberSpec::default()
        };
        assert!(spec.check_box(&g, &AnalysisBox::new(8.0, 6.0)).is_ok());
        assert!(spec.check_box(&g, &AnalysisBox::new(11.0, 6.0)).is_err());
        assert!(spec.check_box(&g, &AnalysisBox::new(8.0, 8.0)).is_err());
        assert!(AbsorberSpec::disabled().check_box(&g, &AnalysisBox::new(11.0, 8.0)).is_ok());
    }

    #[test]
    fn freeze_mask_rules() {
        let g = small_grid();
        let h = hydrogen(&g);
        assert!(FreezeMask::all_active().validate(&h.orbitals).is_ok());
        assert!(FreezeMask::only(["1sg"]).validate(&h.orbitals).is_ok());
        assert!(FreezeMask::only(["1sg_up"]).validate(&h.orbitals).is_ok());
        assert!(FreezeMask::only(["2pu"]).validate(&h.orbitals).is_err());
        assert!(FreezeMask::only(Vec::<String>::new()).validate(&h.orbitals).is_err());
        assert_eq!(FreezeMask::only(["1pu", "1pg"]).tag(), "1pg-1pu");
    }

    #[test]
    fn eigenstate_acquires_phase() {
        let g = small_grid();
        let h = hydrogen(&g);
        let e = h.energies[0];
        let v = eval_ionic(&h.molecule, &g);
        let mut orbs = h.orbitals.clone();
        let spec = PropagatorSpec::default();
        krylov_step(&g, &mut orbs, &[v.clone(), v], 0.0, &spec).unwrap();
        let phase = Complex64::from_polar(1.0, -e * spec.dt);
        let err = orbs[0]
            .values
            .iter()
            .zip(&h.orbitals[0].values)
            .map(|(a, b)| (a - b * phase).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let g = Grid::new(GridSpec::new(9, 0.5, 3, 0.5)).unwrap();
        let mut psi: Vec<Complex64> = g.sample(|z, r| Complex64::new(z, r)).into_raw_vec_and_offset().0;
        let before = psi.clone();
        let zero = |_: &[Complex64], y: &mut [Complex64]| y.fill(Complex64::new(0.0, 0.0));
        krylov_expm(zero, &point_weights(&g), &mut psi, 0.02, 18).unwrap();
        for (a, b) in psi.iter().zip(&before) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_intensity_keeps_populations() {
        let g = Grid::new(GridSpec::new(161, 0.2, 16, 0.45)).unwrap();
        let h = hydrogen(&g);
        let pulse = LaserPulse::new(390.0, 0.0, 1.0);
        let spec = PropagatorSpec {
            absorber: AbsorberSpec {
                rho_onset: 12.0,
                ..AbsorberSpec::default()
            },
            ..PropagatorSpec::default()
        };
        let obs = Observer {
            analysis_box: AnalysisBox::new(10.0, 8.0),
            cadence: 10,
        };
        let mut p = Propagator::new(&g, &h, Some(&pulse), &spec, &FreezeMask::all_active(), &obs)
            .unwrap()
            .with_steps(100);
        let n0 = p.trace().bound[0][0];
        p.run(None).unwrap();
        for row in &p.trace().bound {
            assert!((row[0] - n0).abs() < 1e-8, "{} {:?} {:?}", row[0] - n0, p.absorbed(), p.max_krylov_error());
        }
        assert!((n0 - 1.0).abs() < 1e-5, "{n0}");
    }
}
