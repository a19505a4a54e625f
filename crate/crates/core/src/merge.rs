//! Unification of a conveyor well with the stationary trap above H2: minima
//! counting along the merge cycle, phase-space-density bookkeeping, the
//! septum model and the Monte Carlo merge.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::analysis::{
    find_minimum, line_profile, profile_extrema, refine_barrier, guide_seed, guide_tube, well_chain, AnalysisOptions,
    PotentialField, SceneField, TrapCharacterization,
};
use crate::dynamics::{integrate, sample_thermal, Basin, DomainBox, Ensemble, IntegrateOptions, ScheduledDrive};
use crate::error::{Error, Result};
use crate::field::ChipScene;
use crate::units::{HBAR, K_B};
use crate::waveforms::{DriveConfig, LinearProfile};
use crate::Vec3;

/// Stretch of the guide in which minima are counted. The left edge travels
/// with the belt so that the next arriving well never enters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeWindow {
    pub left: f64,
    pub right: f64,
    pub period: f64,
}

impl MergeWindow {
    pub fn for_scene(scene: &ChipScene) -> Result<Self> {
        let h2 = scene
            .layout
            .h2_x()
            .ok_or_else(|| Error::Config("the layout has no H2 conductor".into()))?;
        let p = scene.layout.modulation_period;
        Ok(MergeWindow {
            left: h2 - 1.70 * p,
            right: h2 + 0.55 * p,
            period: p,
        })
    }

    pub fn at(&self, phase: f64) -> (f64, f64) {
        (self.left + self.period * phase / (2.0 * PI), self.right)
    }

    fn samples(&self) -> usize {
        ((self.right - self.left) / (self.period / 90.0)).ceil() as usize
    }
}

/// The merge region at one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeSlice {
    pub phase: f64,
    /// Minima positions along x, ascending.
    pub minima: Vec<f64>,
    /// Barrier between the two rightmost minima: (x, height above the
    /// shallower of them in T).
    pub barrier: Option<(f64, f64)>,
    /// Volume proxy of the rightmost (stationary or merged) well.
    pub volume: Option<f64>,
    pub trap: Option<TrapCharacterization>,
}

pub fn merge_slice(scene: &ChipScene, drive: &DriveConfig, window: &MergeWindow, phase: f64, opts: &AnalysisOptions) -> Result<MergeSlice> {
    let field = SceneField::new(scene, &drive.currents_at(phase));
    let seed = guide_seed(scene, drive.i0);
    let prof = line_profile(&field, window.at(phase), window.samples(), seed, opts)?;
    let (mins, _) = profile_extrema(&prof);
    let moment = field.moment();
    let barrier = if mins.len() >= 2 {
        let (a, b) = (mins[mins.len() - 2], mins[mins.len() - 1]);
        let top = (a..=b).max_by(|&i, &j| prof[i].energy.total_cmp(&prof[j].energy)).unwrap();
        let lo = top.saturating_sub(1).max(a);
        let hi = (top + 1).min(b);
        let (x, e) = refine_barrier(&field, prof[lo].x, prof[hi].x, (prof[top].y, prof[top].z), guide_tube(seed), opts)?;
        Some((x, (e - prof[a].energy.max(prof[b].energy)) / moment))
    } else {
        None
    };
    let trap = mins
        .last()
        .and_then(|&i| find_minimum(&field, &Vec3::new(prof[i].x, prof[i].y, prof[i].z), opts).ok());
    Ok(MergeSlice {
        phase,
        minima: mins.iter().map(|&i| prof[i].x).collect(),
        barrier,
        volume: trap.as_ref().map(|t| t.volume_proxy()),
        trap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Milestones {
    /// Last phase of the initial run of two minima.
    pub separate_until: Option<f64>,
    /// First phase after that with a single minimum.
    pub merged_at: Option<f64>,
    /// Phase from which on the merged well's volume proxy stays within 1% of
    /// the stationary trap's initial value.
    pub compressed_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergePhaseMap {
    pub phases: Vec<f64>,
    pub minima_counts: Vec<usize>,
    /// T
    pub barrier_heights: Vec<Option<f64>>,
    pub volumes: Vec<Option<f64>>,
    pub milestones: Milestones,
}

impl MergePhaseMap {
    pub fn count_at(&self, phase: f64) -> Option<usize> {
        self.phases
            .iter()
            .position(|p| (p - phase).abs() < 1e-9)
            .map(|i| self.minima_counts[i])
    }
}

fn milestones(phases: &[f64], counts: &[usize], volumes: &[Option<f64>]) -> Milestones {
    let mut m = Milestones::default();
    let Some(first_other) = counts.iter().position(|&c| c != 2) else {
        return m;
    };
    if first_other == 0 {
        return m;
    }
    m.separate_until = Some(phases[first_other - 1]);
    let Some(k) = (first_other..counts.len()).find(|&i| counts[i] == 1) else {
        return m;
    };
    m.merged_at = Some(phases[k]);
    if let Some(v0) = volumes[0] {
        // start of the final stretch that stays compressed; a transient dip
        // followed by re-expansion does not count
        let ok = |i: usize| volumes[i].is_some_and(|v| v <= 1.01 * v0);
        m.compressed_at = (k..phases.len()).rev().take_while(|&i| ok(i)).last().map(|i| phases[i]);
    }
    m
}

/// Counts minima in the merge window at every phase (evaluated in parallel)
/// and extracts the milestones.
pub fn merge_phase_map(scene: &ChipScene, drive: &DriveConfig, phases: &[f64], opts: &AnalysisOptions) -> Result<MergePhaseMap> {
    if !drive.h2_enabled {
        return Err(Error::Config("the merge map needs the H2 channel enabled".into()));
    }
    if phases.is_empty() || phases.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("phase grid must be non-empty and increasing".into()));
    }
    let window = MergeWindow::for_scene(scene)?;
    let slices: Vec<MergeSlice> = phases
        .par_iter()
        .map(|&ph| merge_slice(scene, drive, &window, ph, opts).map_err(|e| e.at_phase(ph)))
        .collect::<Result<_>>()?;
    let minima_counts: Vec<usize> = slices.iter().map(|s| s.minima.len()).collect();
    let volumes: Vec<Option<f64>> = slices.iter().map(|s| s.volume).collect();
    Ok(MergePhaseMap {
        phases: phases.to_vec(),
        milestones: milestones(phases, &minima_counts, &volumes),
        barrier_heights: slices.iter().map(|s| s.barrier.map(|b| b.1)).collect(),
        minima_counts,
        volumes,
    })
}

/// A one-degree grid over one full cycle, 0..=360 deg.
pub fn degree_grid(step_deg: f64) -> Vec<f64> {
    let n = (360.0 / step_deg).round() as usize;
    (0..=n).map(|i| (i as f64 * step_deg).to_radians()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdMethod {
    ClosedForm,
    Ensemble,
}

impl std::fmt::Display for PsdMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PsdMethod::ClosedForm => "closed_form",
            PsdMethod::Ensemble => "ensemble",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub n: f64,
    /// K
    pub temperature: f64,
    /// Geometric mean frequency (Hz).
    pub mean_frequency: f64,
    pub psd: f64,
    pub method: PsdMethod,
}

fn geometric_mean(v: &[f64; 3]) -> f64 {
    (v[0] * v[1] * v[2]).cbrt()
}

/// N (hbar w / kB T)^3 with w the geometric mean angular frequency.
pub fn psd_closed_form(n: f64, temperature: f64, frequencies: [f64; 3]) -> Result<PsdReport> {
    if !(n > 0.0 && temperature > 0.0 && frequencies.iter().all(|&f| f > 0.0)) {
        return Err(Error::Domain(format!(
            "PSD needs positive N, T and frequencies (got {n}, {temperature}, {frequencies:?})"
        )));
    }
    let f = geometric_mean(&frequencies);
    Ok(PsdReport {
        n,
        temperature,
        mean_frequency: f,
        psd: n * (HBAR * 2.0 * PI * f / (K_B * temperature)).powi(3),
        method: PsdMethod::ClosedForm,
    })
}

/// Kinetic temperatures along `axes` of the atoms selected by `keep`, with
/// their centre-of-mass velocity removed, and the number of such atoms.
fn axis_kinetic_temperatures(ens: &Ensemble, axes: &[Vec3; 3], keep: &dyn Fn(&Vec3) -> bool) -> Result<([f64; 3], usize)> {
    let idx: Vec<usize> = ens.alive().filter(|&i| keep(&ens.positions[i])).collect();
    let n = idx.len();
    if n < 10 {
        return Err(Error::Statistics(format!("PSD estimate needs at least 10 atoms, have {n}")));
    }
    let nf = n as f64;
    let mv = idx.iter().fold(Vec3::zeros(), |a, &i| a + ens.velocities[i]) / nf;
    let temps = axes.map(|e| {
        let vv = idx.iter().map(|&i| (ens.velocities[i] - mv).dot(&e).powi(2)).sum::<f64>() / (nf - 1.0);
        ens.atom.mass * vv / K_B
    });
    Ok((temps, n))
}

fn ensemble_report(n: usize, temps: &[f64; 3], well: &TrapCharacterization) -> PsdReport {
    let t = geometric_mean(temps);
    let f = geometric_mean(&well.frequencies);
    let nf = n as f64;
    PsdReport {
        n: nf,
        temperature: t,
        mean_frequency: f,
        psd: nf * (HBAR * 2.0 * PI * f / (K_B * t)).powi(3),
        method: PsdMethod::Ensemble,
    }
}

/// Harmonic PSD estimate of the atoms selected by `keep` in `well`: the
/// temperature is fitted from the velocity spread along the well's principal
/// axes (geometric mean of the three), the frequencies are the well's own.
pub fn psd_from_ensemble(ens: &Ensemble, well: &TrapCharacterization, keep: &dyn Fn(&Vec3) -> bool) -> Result<PsdReport> {
    let (temps, n) = axis_kinetic_temperatures(ens, &well.eigvecs, keep)?;
    Ok(ensemble_report(n, &temps, well))
}

/// A thermal cloud in one trap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cloud {
    pub n: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeptumPrediction {
    pub t_final: f64,
    /// psd_final / psd_initial, the initial value being the entropy-weighted
    /// (population-weighted logarithmic) mean over the populated traps.
    pub psd_ratio: f64,
}

/// Merging two identically shaped harmonic traps holding classical ideal
/// gases: sudden removal of the septum at constant energy (mixing entropy
/// included), then isentropic change to `freqs_final`.
///
/// `right = None` means there is no second trap at all (the null process);
/// `Some` with zero atoms is an empty trap the cloud expands into.
///
/// With S/(N kB) = 4 - ln(psd) for a harmonic gas the final state follows
/// from S_final = N kB (4 + ln(n_traps Z(T_mix) / N)), Z = (kB T / hbar w)^3.
pub fn septum_prediction(left: Cloud, right: Option<Cloud>, freqs_init: [f64; 3], freqs_final: [f64; 3]) -> Result<SeptumPrediction> {
    let clouds: Vec<Cloud> = std::iter::once(left).chain(right).collect();
    if clouds.iter().any(|c| !(c.n >= 0.0)) {
        return Err(Error::Domain("populations must be non-negative".into()));
    }
    if clouds.iter().any(|c| c.n > 0.0 && !(c.temperature > 0.0)) {
        return Err(Error::Domain("populated clouds need a positive temperature".into()));
    }
    if freqs_init.iter().chain(&freqs_final).any(|&f| !(f > 0.0)) {
        return Err(Error::Domain("trap frequencies must be positive".into()));
    }
    let n: f64 = clouds.iter().map(|c| c.n).sum();
    if !(n > 0.0) {
        return Err(Error::Domain("both populations are zero".into()));
    }
    let w_i = 2.0 * PI * geometric_mean(&freqs_init);
    let w_f = 2.0 * PI * geometric_mean(&freqs_final);
    let ln_z = |t: f64| 3.0 * (K_B * t / (HBAR * w_i)).ln();
    let populated = || clouds.iter().filter(|c| c.n > 0.0);
    // ln psd_i = sum n_i ln(n_i / Z(T_i)) / N
    let ln_psd_i = populated().map(|c| c.n * (c.n.ln() - ln_z(c.temperature))).sum::<f64>() / n;
    let t_mix = populated().map(|c| c.n * c.temperature).sum::<f64>() / n;
    let traps = clouds.len() as f64;
    let ln_psd_f = n.ln() - traps.ln() - ln_z(t_mix);
    Ok(SeptumPrediction {
        t_final: t_mix * traps.cbrt() * w_f / w_i,
        psd_ratio: (ln_psd_f - ln_psd_i).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Populate {
    Both,
    LeftOnly,
}

impl std::str::FromStr for Populate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Populate::Both),
            "left_only" | "left-only" => Ok(Populate::LeftOnly),
            _ => Err(Error::Config(format!("populate must be `both` or `left_only`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeSetup {
    pub n_per_well: usize,
    pub t0: f64,
    /// Duration of one full drive cycle (s).
    pub cycle: f64,
    pub dt: Option<f64>,
    /// Trace rows every this many degrees.
    pub record_step_deg: f64,
    /// Hold at the end of the cycle, in periods of the final trap's slowest
    /// oscillation, over which the final temperature is averaged. Zero takes
    /// a single snapshot.
    pub hold_periods: f64,
}

impl Default for MergeSetup {
    fn default() -> Self {
        MergeSetup {
            n_per_well: 1000,
            t0: 30e-6,
            cycle: 0.600,
            dt: None,
            record_step_deg: 10.0,
            hold_periods: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRow {
    pub phase_deg: f64,
    pub minima_count: usize,
    /// G
    pub barrier_g: Option<f64>,
    pub n_left: usize,
    pub n_right: usize,
    pub temperature: Option<f64>,
    pub psd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeReport {
    /// One report per populated well at phase 0, left first.
    pub before: Vec<PsdReport>,
    pub after: PsdReport,
    pub psd_ratio: f64,
    pub temperature_ratio: f64,
    pub trace: Vec<MergeRow>,
    pub dt: f64,
    pub seed: u64,
}

/// The arriving conveyor well and the stationary trap at phase 0 with their
/// basins.
pub fn merge_wells(scene: &ChipScene, drive: &DriveConfig, opts: &AnalysisOptions) -> Result<[(TrapCharacterization, Basin); 2]> {
    let window = MergeWindow::for_scene(scene)?;
    let p = window.period;
    let field = SceneField::new(scene, &drive.currents_at(0.0));
    let range = (window.left - p, window.right);
    let n = ((range.1 - range.0) / (p / 60.0)).ceil() as usize;
    let chain = well_chain(&field, range, n, guide_seed(scene, drive.i0), 0.0, opts)?;
    let h2 = window.left + 1.70 * p;
    let r = chain
        .wells
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.position.x - h2).abs().total_cmp(&(b.1.position.x - h2).abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Search("no stationary trap near H2".into()))?;
    if r == 0 {
        return Err(Error::Search("no conveyor well arriving left of the stationary trap".into()));
    }
    let pick = |i: usize| {
        let w = chain.wells[i].clone();
        let mut b = Basin::around(&chain, w.position.x);
        if i == r {
            b.x_max = b.x_max.min(window.right + p);
        }
        (w, b)
    };
    Ok([pick(r - 1), pick(r)])
}

/// Loads the arriving well (and the stationary trap for `Both`), drives one
/// full cycle and compares harmonic PSD estimates before and after. The final
/// cloud is the set of atoms in the stationary trap's basin at the end.
pub fn merge_simulate(scene: &ChipScene, drive: &DriveConfig, populate: Populate, setup: &MergeSetup, seed: u64) -> Result<MergeReport> {
    if !drive.h2_enabled {
        return Err(Error::Config("the merge needs the H2 channel enabled".into()));
    }
    if !(setup.t0 > 0.0 && setup.cycle > 0.0 && setup.hold_periods >= 0.0) {
        return Err(Error::Domain("merge needs T0 > 0, a positive cycle duration and a non-negative hold".into()));
    }
    let opts = AnalysisOptions::default();
    let [(lw, lb), (rw, rb)] = merge_wells(scene, drive, &opts)?;
    let field0 = SceneField::new(scene, &drive.currents_at(0.0));
    let left = sample_thermal(&field0, &lw, setup.t0, setup.n_per_well, seed, &lb)?;
    let (mut ens, mut before) = (left.clone(), vec![psd_from_ensemble(&left, &lw, &|p| lb.contains(p))?]);
    if populate == Populate::Both {
        let right = sample_thermal(&field0, &rw, setup.t0, setup.n_per_well, seed ^ 0x5eed_0f_71647, &rb)?;
        before.push(psd_from_ensemble(&right, &rw, &|p| rb.contains(p))?);
        ens = ens.merged(&right);
    }

    let nu_max = 1.25 * lw.frequencies[2].max(rw.frequencies[2]);
    let mut iopts = IntegrateOptions::for_frequency(nu_max, DomainBox::for_scene(scene));
    if let Some(dt) = setup.dt {
        iopts.dt = dt;
    }
    let omega = 2.0 * PI / setup.cycle;
    let profile = LinearProfile {
        omega,
        duration: setup.cycle,
    };
    let sched = ScheduledDrive {
        scene,
        drive: *drive,
        profile: Some(&profile),
        t_start: 0.0,
        phase_offset: 0.0,
    };
    let window = MergeWindow::for_scene(scene)?;
    let mut trace = Vec::new();
    let mut next_deg = 0.0;
    let mut err = None;
    let record = |e: &Ensemble, trace: &mut Vec<MergeRow>| -> Result<()> {
        let phase = sched.phase(e.time);
        let s = merge_slice(scene, drive, &window, phase, &opts)?;
        let (x0, x1) = window.at(phase);
        let split = s.barrier.map_or(x0, |b| b.0);
        let n_left = e.alive().filter(|&i| (x0..split).contains(&e.positions[i].x)).count();
        let n_right = e.alive().filter(|&i| (split..x1).contains(&e.positions[i].x)).count();
        let est = s.trap.as_ref().and_then(|t| psd_from_ensemble(e, t, &|p| (split..x1).contains(&p.x)).ok());
        trace.push(MergeRow {
            phase_deg: phase.to_degrees(),
            minima_count: s.minima.len(),
            barrier_g: s.barrier.map(|b| b.1 * 1e4),
            n_left,
            n_right,
            temperature: est.map(|r| r.temperature),
            psd: est.map(|r| r.psd),
        });
        Ok(())
    };
    record(&ens, &mut trace)?;
    next_deg += setup.record_step_deg;
    integrate(&mut ens, &sched, setup.cycle, &iopts, &mut |e| {
        if err.is_some() {
            return;
        }
        let deg = sched.phase(e.time).to_degrees();
        if deg + 1e-9 >= next_deg {
            if let Err(x) = record(e, &mut trace) {
                err = Some(x);
            }
            while next_deg <= deg + 1e-9 {
                next_deg += setup.record_step_deg;
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }

    // the drive has returned to phase 0: the stationary trap is back
    let fw = find_minimum(&SceneField::new(scene, &drive.currents_at(2.0 * PI)), &rw.position, &opts)?;
    // a freshly merged cloud breathes; average its kinetic temperatures over
    // a hold instead of trusting one snapshot
    let after = if setup.hold_periods > 0.0 {
        let keep = |p: &Vec3| rb.contains(p);
        let (mut sums, mut count, mut herr) = ([0.0; 3], 0usize, None);
        let t_end = ens.time + setup.hold_periods / fw.frequencies[0];
        integrate(&mut ens, &sched, t_end, &iopts, &mut |e| match axis_kinetic_temperatures(e, &fw.eigvecs, &keep) {
            Ok((t, _)) => {
                for k in 0..3 {
                    sums[k] += t[k];
                }
                count += 1;
            }
            Err(x) => herr = Some(x),
        })?;
        if let Some(e) = herr {
            return Err(e);
        }
        let n = ens.alive().filter(|&i| keep(&ens.positions[i])).count();
        ensemble_report(n, &sums.map(|s| s / count as f64), &fw)
    } else {
        psd_from_ensemble(&ens, &fw, &|p| rb.contains(p))?
    };
    let n_before: f64 = before.iter().map(|r| r.n).sum();
    let ln_psd_before = before.iter().map(|r| r.n * r.psd.ln()).sum::<f64>() / n_before;
    let t_before = before.iter().map(|r| r.n * r.temperature).sum::<f64>() / n_before;
    Ok(MergeReport {
        psd_ratio: after.psd / ln_psd_before.exp(),
        temperature_ratio: after.temperature / t_before,
        before,
        after,
        trace,
        dt: iopts.dt,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::HarmonicPotential;
    use crate::dynamics::sample_thermal;
    use crate::units::AtomState;

    const F: [f64; 3] = [150.0, 600.0, 650.0];

    #[test]
    fn closed_form_scalings() {
        let a = psd_closed_form(1e5, 30e-6, F).unwrap();
        let b = psd_closed_form(2e5, 30e-6, F).unwrap();
        let c = psd_closed_form(1e5, 60e-6, F).unwrap();
        let d = psd_closed_form(2e5, 30e-6 * 2f64.cbrt(), F).unwrap();
        assert!((b.psd / a.psd - 2.0).abs() < 1e-12);
        assert!((a.psd / c.psd - 8.0).abs() < 1e-12);
        assert!((d.psd / a.psd - 1.0).abs() < 1e-12);
        assert!(psd_closed_form(0.0, 30e-6, F).is_err());
        assert!(psd_closed_form(1.0, -1.0, F).is_err());
        assert!(psd_closed_form(1.0, 1e-6, [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn septum_examples() {
        let c = Cloud { n: 1e5, temperature: 30e-6 };
        let eq = septum_prediction(c, Some(c), F, F).unwrap();
        assert!((eq.psd_ratio - 1.0).abs() < 1e-9);
        assert!((eq.t_final / (30e-6 * 2f64.cbrt()) - 1.0).abs() < 1e-9);
        let empty = septum_prediction(c, Some(Cloud { n: 0.0, temperature: 0.0 }), F, F).unwrap();
        assert!((empty.psd_ratio - 0.5).abs() < 1e-9);
        let null = septum_prediction(c, None, F, F).unwrap();
        assert!((null.psd_ratio - 1.0).abs() < 1e-12);
        assert!((null.t_final - 30e-6).abs() < 1e-18);
        let zero = Cloud { n: 0.0, temperature: 1e-6 };
        assert!(septum_prediction(zero, Some(zero), F, F).is_err());
    }

    #[test]
    fn septum_is_symmetric_and_never_gains() {
        let samples = [
            (1e5, 30e-6, 2e4, 50e-6),
            (1.0, 1e-6, 1e6, 1e-3),
            (3e3, 10e-6, 3e3, 11e-6),
            (5e4, 80e-6, 0.0, 0.0),
        ];
        for (n1, t1, n2, t2) in samples {
            let a = Cloud { n: n1, temperature: t1 };
            let b = Cloud { n: n2, temperature: t2 };
            let ab = septum_prediction(a, Some(b), F, F).unwrap();
            if n2 > 0.0 {
                let ba = septum_prediction(b, Some(a), F, F).unwrap();
                assert!((ab.psd_ratio / ba.psd_ratio - 1.0).abs() < 1e-12);
                assert!((ab.t_final / ba.t_final - 1.0).abs() < 1e-12);
            }
            assert!(ab.psd_ratio <= 1.0 + 1e-12, "{ab:?}");
        }
    }

    #[test]
    fn compression_after_merge_scales_temperature() {
        let c = Cloud { n: 1e4, temperature: 20e-6 };
        let tight = F.map(|f| 2.0 * f);
        let p = septum_prediction(c, Some(c), F, tight).unwrap();
        assert!((p.t_final / (40e-6 * 2f64.cbrt()) - 1.0).abs() < 1e-9);
        assert!((p.psd_ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ensemble_psd_matches_closed_form() {
        let pot = HarmonicPotential::with_frequencies(Vec3::new(0.0, 0.0, -2e-4), F, AtomState::default());
        let trap = find_minimum(&pot, &pot.center, &AnalysisOptions::default()).unwrap();
        let ens = sample_thermal(&pot, &trap, 20e-6, 10_000, 17, &Basin::unbounded()).unwrap();
        let est = psd_from_ensemble(&ens, &trap, &|_| true).unwrap();
        let exact = psd_closed_form(1e4, 20e-6, F).unwrap();
        assert!((est.psd / exact.psd - 1.0).abs() < 0.10, "{} vs {}", est.psd, exact.psd);
        assert_eq!(est.method, PsdMethod::Ensemble);
    }

    #[test]
    fn milestone_extraction() {
        let ph: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let counts = [2, 2, 2, 1, 1, 1, 1, 2];
        let v = [Some(1.0), Some(1.2), Some(1.5), Some(3.0), Some(2.0), Some(1.005), Some(0.9), Some(1.0)];
        let m = milestones(&ph, &counts, &v);
        assert_eq!(m.separate_until, Some(2.0));
        assert_eq!(m.merged_at, Some(3.0));
        assert_eq!(m.compressed_at, Some(5.0));
        let dip = [Some(1.0), Some(1.2), Some(1.5), Some(3.0), Some(0.8), Some(2.0), Some(1.3), Some(1.0)];
        assert_eq!(milestones(&ph, &counts, &dip).compressed_at, Some(7.0));
        let none = milestones(&ph, &[1; 8], &v);
        assert_eq!(none, Milestones::default());
    }

    #[test]
    fn populate_parses() {
        assert_eq!("both".parse::<Populate>().unwrap(), Populate::Both);
        assert_eq!("left_only".parse::<Populate>().unwrap(), Populate::LeftOnly);
        assert!("right".parse::<Populate>().is_err());
    }
}
