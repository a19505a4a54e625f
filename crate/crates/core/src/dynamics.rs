//! Classical ensembles of thermal atoms in the time-dependent chip potential:
//! Metropolis sampling in a well, velocity-Verlet integration with
//! finite-difference forces, kinetic temperatures, transport runs and flux.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::analysis::{interior_range, well_chain, guide_seed, AnalysisOptions, PotentialField, SceneField, TrapCharacterization, WellChain};
use crate::error::{Error, Result};
use crate::field::ChipScene;
use crate::units::{AtomState, K_B};
use crate::waveforms::{DriveConfig, PhaseProfile, SmoothstepProfile};
use crate::Vec3;

/// Default finite-difference step of the force (m).
pub const FORCE_STEP: f64 = 0.05e-6;
/// Metropolis burn-in steps before the first kept sample.
pub const BURN_IN: usize = 1000;
/// Metropolis steps between kept samples.
pub const THINNING: usize = 5;

/// Atoms and their state. Lost atoms keep their last position and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub time: f64,
    pub seed: u64,
    pub atom: AtomState,
    pub lost: Vec<bool>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn survivors(&self) -> usize {
        self.lost.iter().filter(|l| !**l).count()
    }

    /// Indices of atoms not flagged lost.
    pub fn alive(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.lost[i])
    }

    /// Centre of mass of the surviving atoms, summed in index order.
    pub fn center_of_mass(&self) -> Option<Vec3> {
        let n = self.survivors();
        if n == 0 {
            return None;
        }
        Some(self.alive().fold(Vec3::zeros(), |a, i| a + self.positions[i]) / n as f64)
    }

    /// Keeps only atoms for which `keep` holds; the rest are flagged lost.
    pub fn flag_unless(&mut self, keep: impl Fn(&Vec3) -> bool) {
        for i in 0..self.len() {
            if !keep(&self.positions[i]) {
                self.lost[i] = true;
            }
        }
    }

    /// The atoms selected by `mask` as a new ensemble.
    pub fn subset(&self, mask: &[bool]) -> Ensemble {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| mask[i]).collect();
        Ensemble {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            velocities: idx.iter().map(|&i| self.velocities[i]).collect(),
            time: self.time,
            seed: self.seed,
            atom: self.atom,
            lost: idx.iter().map(|&i| self.lost[i]).collect(),
        }
    }

    /// Concatenation of two ensembles at the same time.
    pub fn merged(&self, other: &Ensemble) -> Ensemble {
        let mut out = self.clone();
        out.positions.extend_from_slice(&other.positions);
        out.velocities.extend_from_slice(&other.velocities);
        out.lost.extend_from_slice(&other.lost);
        out
    }
}

/// Axis-aligned region outside which atoms count as lost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl DomainBox {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// The region under the chip pattern: the centre wire's length in x,
    /// the crossings' length in y, and 2 mm below the surface.
    pub fn for_scene(scene: &ChipScene) -> Self {
        let hx = 0.5 * scene.layout.center_wire_length;
        let hy = scene
            .layout
            .segments()
            .map(|(_, s)| s.start.y.abs().max(s.end.y.abs()))
            .fold(0.0, f64::max)
            .max(hx);
        DomainBox {
            min: Vec3::new(-hx, -hy, -2e-3),
            max: Vec3::new(hx, hy, 0.0),
        }
    }

    pub fn unbounded() -> Self {
        DomainBox {
            min: Vec3::repeat(f64::NEG_INFINITY),
            max: Vec3::repeat(f64::INFINITY),
        }
    }
}

/// A potential that changes in time.
pub trait TimeDependentPotential: Sync {
    fn mass(&self) -> f64;
    /// The landscape frozen at time `t`.
    fn snapshot(&self, t: f64) -> Result<Box<dyn PotentialField + '_>>;
}

/// A landscape that does not change.
pub struct Frozen<'a>(pub &'a dyn PotentialField);

struct Borrowed<'a>(&'a dyn PotentialField);

impl PotentialField for Borrowed<'_> {
    fn energy(&self, p: &Vec3) -> Result<f64> {
        self.0.energy(p)
    }
    fn mass(&self) -> f64 {
        self.0.mass()
    }
    fn field_magnitude(&self, p: &Vec3) -> Result<f64> {
        self.0.field_magnitude(p)
    }
    fn moment(&self) -> f64 {
        self.0.moment()
    }
}

impl TimeDependentPotential for Frozen<'_> {
    fn mass(&self) -> f64 {
        self.0.mass()
    }
    fn snapshot(&self, _t: f64) -> Result<Box<dyn PotentialField + '_>> {
        Ok(Box::new(Borrowed(self.0)))
    }
}

/// A chip scene driven through `profile`, started at `t_start`. Before the
/// start the phase is held at `phase_offset`, after the end at the final value.
pub struct ScheduledDrive<'a> {
    pub scene: &'a ChipScene,
    pub drive: DriveConfig,
    pub profile: Option<&'a dyn PhaseProfile>,
    pub t_start: f64,
    pub phase_offset: f64,
}

impl ScheduledDrive<'_> {
    pub fn phase(&self, t: f64) -> f64 {
        match self.profile {
            Some(p) => self.phase_offset + p.phase_unchecked((t - self.t_start).clamp(0.0, p.duration())),
            None => self.phase_offset,
        }
    }
}

impl TimeDependentPotential for ScheduledDrive<'_> {
    fn mass(&self) -> f64 {
        self.scene.atom.mass
    }
    fn snapshot(&self, t: f64) -> Result<Box<dyn PotentialField + '_>> {
        Ok(Box::new(SceneField::new(self.scene, &self.drive.currents_at(self.phase(t)))))
    }
}

/// -grad U by central differences with step `h`.
pub fn force(field: &dyn PotentialField, p: &Vec3, h: f64) -> Result<Vec3> {
    let mut f = Vec3::zeros();
    for k in 0..3 {
        let mut a = *p;
        let mut b = *p;
        a[k] += h;
        b[k] -= h;
        f[k] = -(field.energy(&a)? - field.energy(&b)?) / (2.0 * h);
    }
    Ok(f)
}

/// Restricts sampling to an interval of x (the well's basin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basin {
    pub x_min: f64,
    pub x_max: f64,
}

impl Basin {
    pub fn unbounded() -> Self {
        Basin {
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x > self.x_min && p.x < self.x_max
    }

    /// The stretch between the barriers that bracket `x` in a well chain.
    pub fn around(chain: &WellChain, x: f64) -> Self {
        Basin {
            x_min: chain.barriers.iter().rev().find(|b| b.0 < x).map_or(f64::NEG_INFINITY, |b| b.0),
            x_max: chain.barriers.iter().find(|b| b.0 > x).map_or(f64::INFINITY, |b| b.0),
        }
    }
}

/// Draws `n` atoms from exp(-U/kT) inside `basin` by Metropolis-Hastings
/// started at the well centre, and Maxwell-Boltzmann velocities.
///
/// Each step picks one of two reversible kernels: an independence proposal
/// from a Gaussian 1.5 times wider than the harmonic thermal cloud, or a
/// random walk with 0.6 times its width along the Hessian eigen-axes.
pub fn sample_thermal(
    field: &dyn PotentialField,
    well: &TrapCharacterization,
    temperature: f64,
    n: usize,
    seed: u64,
    basin: &Basin,
) -> Result<Ensemble> {
    if !(temperature > 0.0) || n == 0 {
        return Err(Error::Domain(format!(
            "sampling needs T > 0 and N >= 1 (got {temperature} K, {n})"
        )));
    }
    let mass = field.mass();
    let kt = K_B * temperature;
    let sigma: [f64; 3] = well
        .frequencies
        .map(|f| (kt / mass).sqrt() / (2.0 * PI * f));
    let centre = well.position;
    let axes = well.eigvecs;
    let to_world = |u: &[f64; 3]| centre + axes[0] * u[0] + axes[1] * u[1] + axes[2] * u[2];
    let log_target = |p: &Vec3| -> Option<f64> {
        if !basin.contains(p) {
            return None;
        }
        field.energy(p).ok().map(|u| -u / kt)
    };
    // log density of the independence proposal, up to a constant
    let wide = 1.5;
    let log_q = |u: &[f64; 3]| -> f64 { -0.5 * (0..3).map(|k| (u[k] / (wide * sigma[k])).powi(2)).sum::<f64>() };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = [0.0; 3];
    let mut lp = log_target(&centre).ok_or_else(|| {
        Error::Sampling("the well centre lies outside the basin or the field domain".into())
    })?;
    let total = BURN_IN + THINNING * n;
    let mut accepted = 0usize;
    let mut positions = Vec::with_capacity(n);
    for step in 0..total {
        let independent = rng.random::<bool>();
        let mut cand = [0.0; 3];
        for k in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            cand[k] = if independent {
                wide * sigma[k] * z
            } else {
                u[k] + 0.6 * sigma[k] * z
            };
        }
        let p = to_world(&cand);
        if let Some(lp_new) = log_target(&p) {
            let mut log_a = lp_new - lp;
            if independent {
                log_a += log_q(&u) - log_q(&cand);
            }
            if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
                u = cand;
                lp = lp_new;
                accepted += 1;
            }
        }
        if step >= BURN_IN && (step - BURN_IN + 1) % THINNING == 0 {
            positions.push(to_world(&u));
        }
    }
    let rate = accepted as f64 / total as f64;
    if rate < 0.01 {
        return Err(Error::Sampling(format!(
            "Metropolis acceptance {:.2}% is below 1%; the temperature does not match the well",
            rate * 100.0
        )));
    }
    let vdist = Normal::new(0.0, (kt / mass).sqrt()).map_err(|e| Error::Sampling(e.to_string()))?;
    let velocities = (0..n)
        .map(|_| Vec3::new(vdist.sample(&mut rng), vdist.sample(&mut rng), vdist.sample(&mut rng)))
        .collect();
    Ok(Ensemble {
        positions,
        velocities,
        time: 0.0,
        seed,
        atom: AtomState::new(field.moment() / crate::units::MU_B, mass)?,
        lost: vec![false; n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub dt: f64,
    /// Fastest trap frequency expected along the run (Hz).
    pub nu_max: f64,
    pub fd_step: f64,
    pub domain: DomainBox,
}

impl IntegrateOptions {
    /// dt = 1 / (40 nu_max).
    pub fn for_frequency(nu_max: f64, domain: DomainBox) -> Self {
        IntegrateOptions {
            dt: 1.0 / (40.0 * nu_max),
            nu_max,
            fd_step: FORCE_STEP,
            domain,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.nu_max > 0.0) {
            return Err(Error::Config("time step and expected frequency must be positive".into()));
        }
        if self.dt > 1.0 / (20.0 * self.nu_max) {
            return Err(Error::Config(format!(
                "dt = {:.3e} s exceeds 1/(20 nu_max) = {:.3e} s for nu_max = {:.1} Hz",
                self.dt,
                1.0 / (20.0 * self.nu_max),
                self.nu_max
            )));
        }
        Ok(())
    }
}

fn accelerations(ens: &Ensemble, field: &dyn PotentialField, h: f64, out: &mut [Vec3], lost: &mut [bool]) {
    let m = ens.atom.mass;
    out.par_iter_mut()
        .zip(lost.par_iter_mut())
        .zip(ens.positions.par_iter())
        .for_each(|((a, l), p)| {
            if *l {
                return;
            }
            match force(field, p, h) {
                Ok(f) => *a = f / m,
                Err(_) => {
                    *l = true;
                    *a = Vec3::zeros();
                }
            }
        });
}

/// Velocity-Verlet from `ens.time` to `t_end`, the step shortened evenly so
/// that the run ends exactly at `t_end`. `observer` sees the ensemble after
/// every step. Atoms whose force stencil enters a wire's exclusion zone or
/// that leave the domain box are frozen and flagged lost.
pub fn integrate(
    ens: &mut Ensemble,
    potential: &dyn TimeDependentPotential,
    t_end: f64,
    opts: &IntegrateOptions,
    observer: &mut dyn FnMut(&Ensemble),
) -> Result<()> {
    opts.check()?;
    if !(t_end > ens.time) {
        return Err(Error::Domain(format!(
            "t_end = {t_end} s is not after the ensemble time {} s",
            ens.time
        )));
    }
    let steps = ((t_end - ens.time) / opts.dt).ceil().max(1.0) as usize;
    let dt = (t_end - ens.time) / steps as f64;
    let t0 = ens.time;
    let n = ens.len();
    let mut acc = vec![Vec3::zeros(); n];
    let mut lost = ens.lost.clone();
    {
        let snap = potential.snapshot(t0)?;
        accelerations(ens, snap.as_ref(), opts.fd_step, &mut acc, &mut lost);
    }
    ens.lost = lost;
    for s in 1..=steps {
        let t = t0 + s as f64 * dt;
        let domain = opts.domain;
        ens.positions
            .par_iter_mut()
            .zip(ens.velocities.par_iter_mut())
            .zip(ens.lost.par_iter_mut())
            .zip(acc.par_iter())
            .for_each(|(((p, v), l), a)| {
                if *l {
                    return;
                }
                *v += a * (0.5 * dt);
                *p += *v * dt;
                if !domain.contains(p) {
                    *l = true;
                }
            });
        let snap = potential.snapshot(t)?;
        let mut lost = std::mem::take(&mut ens.lost);
        accelerations(ens, snap.as_ref(), opts.fd_step, &mut acc, &mut lost);
        ens.lost = lost;
        ens.velocities
            .par_iter_mut()
            .zip(ens.lost.par_iter())
            .zip(acc.par_iter())
            .for_each(|((v, l), a)| {
                if !*l {
                    *v += a * (0.5 * dt);
                }
            });
        ens.time = t;
        observer(ens);
    }
    Ok(())
}

/// Kinetic temperature (1/3kB) <m |v - u - <v - u>|^2> over the survivors,
/// with the unbiased 1/(N-1) normalization.
pub fn temperature(ens: &Ensemble, frame_velocity: &Vec3) -> Result<f64> {
    let t = axis_temperatures(ens, frame_velocity, &[Vec3::x(), Vec3::y(), Vec3::z()])?;
    Ok((t[0] + t[1] + t[2]) / 3.0)
}

/// Kinetic temperatures along three axes.
pub fn axis_temperatures(ens: &Ensemble, frame_velocity: &Vec3, axes: &[Vec3; 3]) -> Result<[f64; 3]> {
    axis_temperatures_where(ens, frame_velocity, axes, &|_| true)
}

/// Kinetic temperature of the survivors whose position satisfies `keep`.
pub fn temperature_where(ens: &Ensemble, frame_velocity: &Vec3, keep: &dyn Fn(&Vec3) -> bool) -> Result<f64> {
    let t = axis_temperatures_where(ens, frame_velocity, &[Vec3::x(), Vec3::y(), Vec3::z()], keep)?;
    Ok((t[0] + t[1] + t[2]) / 3.0)
}

pub fn axis_temperatures_where(
    ens: &Ensemble,
    frame_velocity: &Vec3,
    axes: &[Vec3; 3],
    keep: &dyn Fn(&Vec3) -> bool,
) -> Result<[f64; 3]> {
    let idx: Vec<usize> = ens.alive().filter(|&i| keep(&ens.positions[i])).collect();
    let n = idx.len();
    if n < 2 {
        return Err(Error::Statistics(format!("need at least 2 surviving atoms, have {n}")));
    }
    let rel = |i: usize| ens.velocities[i] - frame_velocity;
    let mean = idx.iter().fold(Vec3::zeros(), |a, &i| a + rel(i)) / n as f64;
    let mut out = [0.0; 3];
    for (k, axis) in axes.iter().enumerate() {
        let s: f64 = idx.iter().map(|&i| (rel(i) - mean).dot(axis).powi(2)).sum();
        out[k] = ens.atom.mass * s / ((n - 1) as f64 * K_B);
    }
    Ok(out)
}

/// Total energy U + m v^2 / 2 of each atom (None for lost atoms or failed
/// evaluations).
pub fn energies(ens: &Ensemble, field: &dyn PotentialField) -> Vec<Option<f64>> {
    (0..ens.len())
        .map(|i| {
            if ens.lost[i] {
                return None;
            }
            field
                .energy(&ens.positions[i])
                .ok()
                .map(|u| u + 0.5 * ens.atom.mass * ens.velocities[i].norm_squared())
        })
        .collect()
}

/// Delivered atoms per second for a steady drive.
pub fn mean_flux(atoms_per_well: f64, profile: &dyn PhaseProfile) -> Result<f64> {
    if atoms_per_well < 0.0 {
        return Err(Error::Domain("atom number must be non-negative".into()));
    }
    let omega = profile.steady_rate().ok_or_else(|| {
        Error::Domain(format!("flux is defined for a steady drive, not a {} profile", profile.kind()))
    })?;
    Ok(atoms_per_well * omega / (2.0 * PI))
}

/// Settings of a transport run.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSetup {
    pub n_atoms: usize,
    pub t0: f64,
    /// Transport distance (m); one modulation period when `None`.
    pub distance: Option<f64>,
    /// Ballistic rethermalization after the drive stops, in longitudinal
    /// trap periods.
    pub settle_periods: f64,
    /// Temperatures are averaged over this many trap periods, once before
    /// the start and once after settling.
    pub average_periods: f64,
    /// Time step; 1/(40 nu_fastest) when `None`.
    pub dt: Option<f64>,
    /// Steps between trajectory rows.
    pub record_every: usize,
}

impl Default for TransportSetup {
    fn default() -> Self {
        TransportSetup {
            n_atoms: 2000,
            t0: 30e-6,
            distance: None,
            settle_periods: 5.0,
            average_periods: 2.0,
            dt: None,
            record_every: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x_com: f64,
    pub z_com: f64,
    pub temperature: f64,
    pub survival: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReport {
    pub v_max: f64,
    pub t_initial: f64,
    pub t_final: f64,
    pub delta_t: f64,
    pub survival_fraction: f64,
    pub trajectory: Vec<TrajectoryRow>,
    pub seed: u64,
    pub dt: f64,
}

impl TransportReport {
    pub fn com_trajectory(&self) -> Vec<(f64, f64)> {
        self.trajectory.iter().map(|r| (r.t, r.x_com)).collect()
    }
}

/// The start well of a transport run: the bounded well closest to the
/// centre of the pattern at phase 0, with its basin.
pub fn start_well(
    scene: &ChipScene,
    drive: &DriveConfig,
    params: &crate::geometry::PaperLayoutParams,
    opts: &AnalysisOptions,
) -> Result<(TrapCharacterization, Basin)> {
    let range = interior_range(params);
    let samples = ((range.1 - range.0) / (params.modulation_period / 24.0)).ceil() as usize + 1;
    let field = SceneField::new(scene, &drive.currents_at(0.0));
    let chain = well_chain(&field, range, samples.max(16), guide_seed(scene, drive.i0), 0.0, opts)?;
    let centre = 0.5 * (range.0 + range.1);
    let well = chain
        .wells
        .iter()
        .filter(|w| w.depth_to_saddle.is_some())
        .min_by(|a, b| (a.position.x - centre).abs().total_cmp(&(b.position.x - centre).abs()))
        .cloned()
        .ok_or_else(|| Error::Search("no bounded well in the pattern interior".into()))?;
    let basin = Basin::around(&chain, well.position.x);
    Ok((well, basin))
}

fn averaged_temperature(
    ens: &mut Ensemble,
    potential: &dyn TimeDependentPotential,
    duration: f64,
    opts: &IntegrateOptions,
    rows: &mut Vec<TrajectoryRow>,
    record_every: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut err = None;
    let n0 = ens.len() as f64;
    let mut step = 0usize;
    integrate(ens, potential, ens.time + duration, opts, &mut |e| {
        step += 1;
        match temperature(e, &Vec3::zeros()) {
            Ok(t) => {
                sum += t;
                count += 1;
                if step % record_every == 0 {
                    if let Some(c) = e.center_of_mass() {
                        rows.push(TrajectoryRow {
                            t: e.time,
                            x_com: c.x,
                            z_com: c.z,
                            temperature: t,
                            survival: e.survivors() as f64 / n0,
                        });
                    }
                }
            }
            Err(x) => err = Some(x),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(sum / count as f64)
}

fn run_recorded(
    ens: &mut Ensemble,
    potential: &dyn TimeDependentPotential,
    t_end: f64,
    opts: &IntegrateOptions,
    rows: &mut Vec<TrajectoryRow>,
    record_every: usize,
) -> Result<()> {
    let n0 = ens.len() as f64;
    let mut step = 0usize;
    integrate(ens, potential, t_end, opts, &mut |e| {
        step += 1;
        if step % record_every == 0 {
            if let (Some(c), Ok(t)) = (e.center_of_mass(), temperature(e, &Vec3::zeros())) {
                rows.push(TrajectoryRow {
                    t: e.time,
                    x_com: c.x,
                    z_com: c.z,
                    temperature: t,
                    survival: e.survivors() as f64 / n0,
                });
            }
        }
    })
}

/// Moves a thermal cloud by `distance` on a smoothstep ramp with peak well
/// speed `v_max` and measures the temperature change. `v_max = 0` holds the
/// drive for the same bookkeeping (null transport).
///
/// Protocol: sample at T0 in the start well; average the kinetic temperature
/// over `average_periods` longitudinal periods with the drive frozen; ramp;
/// hold for `settle_periods`; average again. Temperatures cover every atom
/// still in the domain (filtering by basin would turn spill-over into
/// evaporative cooling); survivors are the atoms in the destination basin.
pub fn transport_experiment(
    scene: &ChipScene,
    drive: &DriveConfig,
    params: &crate::geometry::PaperLayoutParams,
    v_max: f64,
    setup: &TransportSetup,
    seed: u64,
) -> Result<TransportReport> {
    if !(v_max >= 0.0) {
        return Err(Error::Domain(format!("v_max must be non-negative, got {v_max}")));
    }
    let opts = AnalysisOptions::default();
    let (well, basin) = start_well(scene, drive, params, &opts)?;
    let frozen_field = SceneField::new(scene, &drive.currents_at(0.0));
    let mut ens = sample_thermal(&frozen_field, &well, setup.t0, setup.n_atoms, seed, &basin)?;

    let nu_fast = well.frequencies[2];
    let t_long = 1.0 / well.longitudinal_frequency();
    let domain = DomainBox::for_scene(scene);
    let mut iopts = IntegrateOptions::for_frequency(nu_fast, domain);
    if let Some(dt) = setup.dt {
        iopts.dt = dt;
    }
    let distance = setup.distance.unwrap_or(params.modulation_period);
    let record = setup.record_every.max(1);
    let mut rows = Vec::new();

    let hold = ScheduledDrive {
        scene,
        drive: *drive,
        profile: None,
        t_start: 0.0,
        phase_offset: 0.0,
    };
    let t_initial = averaged_temperature(&mut ens, &hold, setup.average_periods * t_long, &iopts, &mut rows, record)?;

    let profile = if v_max > 0.0 {
        Some(SmoothstepProfile::for_transport(distance, v_max, params.modulation_period)?)
    } else {
        None
    };
    let t_start = ens.time;
    let moving = ScheduledDrive {
        scene,
        drive: *drive,
        profile: profile.as_ref().map(|p| p as &dyn PhaseProfile),
        t_start,
        phase_offset: 0.0,
    };
    let ramp = profile.as_ref().map_or(0.0, |p| p.duration);
    let settle_end = t_start + ramp + setup.settle_periods * t_long;
    run_recorded(&mut ens, &moving, settle_end, &iopts, &mut rows, record)?;
    let shift = if v_max > 0.0 { distance } else { 0.0 };
    let dest = Basin {
        x_min: basin.x_min + shift,
        x_max: basin.x_max + shift,
    };
    let t_final = averaged_temperature(&mut ens, &moving, setup.average_periods * t_long, &iopts, &mut rows, record)?;
    let kept = ens.alive().filter(|&i| dest.contains(&ens.positions[i])).count();
    Ok(TransportReport {
        v_max,
        t_initial,
        t_final,
        delta_t: t_final - t_initial,
        survival_fraction: kept as f64 / ens.len() as f64,
        trajectory: rows,
        seed,
        dt: iopts.dt,
    })
}

/// Period of the slowest oscillation of a well, for sizing runs.
pub fn slowest_period(well: &TrapCharacterization) -> f64 {
    1.0 / well.frequencies[0]
}
