//! Trap-landscape analysis: local minima, Hessians and trap frequencies,
//! transverse-minimized line profiles, well chains with their depths, well
//! tracking versus drive phase, and ground-state scales.
//!
//! Minimizers run in scaled coordinates (micrometres, microkelvin) so that the
//! numbers they see are O(1).

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::field::{BiasField, ChipScene, ResolvedCurrents};
use crate::geometry::PaperLayoutParams;
use crate::minimize::{fd_gradient, fd_hessian, Bfgs, MinimizeOptions, Minimizer, NelderMead, Objective};
use crate::units::{recoil_frequency, AtomState, HBAR, K_B};
use crate::waveforms::DriveConfig;
use crate::{Mat3, Vec3};

const UM: f64 = 1e-6;
/// Energy scale of the scaled objective: 1 microkelvin.
const UK: f64 = K_B * 1e-6;

/// A potential energy landscape U(r) in joules.
pub trait PotentialField: Sync {
    fn energy(&self, p: &Vec3) -> Result<f64>;
    fn mass(&self) -> f64;
    /// |B| at `p` (T), for landscapes that have one.
    fn field_magnitude(&self, p: &Vec3) -> Result<f64>;
    /// Converts an energy difference into gauss-equivalent tesla.
    fn moment(&self) -> f64;
}

/// A chip scene frozen at one set of currents.
#[derive(Debug, Clone)]
pub struct SceneField<'a> {
    pub scene: &'a ChipScene,
    pub currents: ResolvedCurrents,
}

impl<'a> SceneField<'a> {
    pub fn new(scene: &'a ChipScene, currents: &crate::field::CurrentSet) -> Self {
        SceneField {
            scene,
            currents: scene.resolve(currents),
        }
    }
}

impl PotentialField for SceneField<'_> {
    fn energy(&self, p: &Vec3) -> Result<f64> {
        self.scene.potential_resolved(&self.currents, p)
    }
    fn mass(&self) -> f64 {
        self.scene.atom.mass
    }
    fn field_magnitude(&self, p: &Vec3) -> Result<f64> {
        Ok(self.scene.field_resolved(&self.currents, p)?.norm())
    }
    fn moment(&self) -> f64 {
        self.scene.atom.moment()
    }
}

/// U = U0 + 1/2 (r - c)^T K (r - c); used to inject analytic landscapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicPotential {
    pub center: Vec3,
    pub stiffness: Mat3,
    pub offset: f64,
    pub atom: AtomState,
}

impl HarmonicPotential {
    pub fn isotropic(center: Vec3, k: f64, atom: AtomState) -> Self {
        HarmonicPotential {
            center,
            stiffness: Mat3::identity() * k,
            offset: 0.0,
            atom,
        }
    }

    /// Stiffness diagonal from trap frequencies (Hz) along x, y, z.
    pub fn with_frequencies(center: Vec3, freqs: [f64; 3], atom: AtomState) -> Self {
        let k = |f: f64| atom.mass * (2.0 * PI * f).powi(2);
        HarmonicPotential {
            center,
            stiffness: Mat3::from_diagonal(&Vec3::new(k(freqs[0]), k(freqs[1]), k(freqs[2]))),
            offset: 0.0,
            atom,
        }
    }
}

impl PotentialField for HarmonicPotential {
    fn energy(&self, p: &Vec3) -> Result<f64> {
        let d = p - self.center;
        Ok(self.offset + 0.5 * d.dot(&(self.stiffness * d)))
    }
    fn mass(&self) -> f64 {
        self.atom.mass
    }
    fn field_magnitude(&self, p: &Vec3) -> Result<f64> {
        Ok(self.energy(p)? / self.moment())
    }
    fn moment(&self) -> f64 {
        self.atom.moment()
    }
}

/// Tolerances for the landscape searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    /// Gradient norm accepted at a minimum (J/m).
    pub grad_tol: f64,
    /// Finite-difference step (m).
    pub fd_step: f64,
    /// Step length accepted at convergence (m).
    pub step_tol: f64,
    pub max_iters: usize,
    /// Longest minimizer step (m).
    pub max_step: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            grad_tol: 1e-28,
            fd_step: 0.05e-6,
            step_tol: 1e-9,
            max_iters: 400,
            max_step: 20e-6,
        }
    }
}

impl AnalysisOptions {
    fn scaled(&self) -> MinimizeOptions {
        MinimizeOptions {
            grad_tol: self.grad_tol * UM / UK,
            step_tol: self.step_tol / UM,
            max_iters: self.max_iters,
            fd_step: self.fd_step / UM,
            max_step: self.max_step / UM,
        }
    }
}

/// U(r) in microkelvin over r in micrometres.
struct Scaled3<'a>(&'a dyn PotentialField);

impl Objective for Scaled3<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.0.energy(&Vec3::new(x[0] * UM, x[1] * UM, x[2] * UM))? / UK)
    }
}

/// U(x, y, z) over (y, z) at fixed x, scaled as above. Optionally confined to
/// a tube around a guide axis so that the search cannot wander off to field
/// zeros next to the chip surface.
struct Transverse<'a> {
    field: &'a dyn PotentialField,
    x: f64,
    tube: Option<((f64, f64), f64)>,
}

impl Objective for Transverse<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, v: &[f64]) -> Result<f64> {
        if let Some(((cy, cz), r)) = self.tube {
            if (v[0] - cy / UM).hypot(v[1] - cz / UM) > r / UM {
                return Err(Error::Domain("outside the guide tube".into()));
            }
        }
        Ok(self.field.energy(&Vec3::new(self.x, v[0] * UM, v[1] * UM))? / UK)
    }
}

/// Quasi-Newton first; on a stalled line search, a simplex restart and a
/// final quasi-Newton polish.
fn robust_minimize(f: &dyn Objective, x0: &[f64], opts: &MinimizeOptions) -> Result<Vec<f64>> {
    match Bfgs.minimize(f, x0, opts) {
        Ok(r) => Ok(r.x),
        Err(Error::Search(_)) => {
            let nm = NelderMead { initial_size: 1.0 }.minimize(f, x0, opts)?;
            Ok(Bfgs.minimize(f, &nm.x, opts)?.x)
        }
        Err(e) => Err(e),
    }
}

/// One characterized potential well.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapCharacterization {
    pub position: Vec3,
    /// |B| at the minimum (T).
    pub b_min: f64,
    /// Trap frequencies (Hz), ascending.
    pub frequencies: [f64; 3],
    /// Unit eigenvectors matching `frequencies`.
    pub eigvecs: [Vec3; 3],
    /// Hessian of U at the minimum (J/m^2).
    pub hessian: Mat3,
    /// Field-magnitude difference to the lower neighbouring barrier (T).
    pub depth_to_saddle: Option<f64>,
    pub phase: f64,
}

impl TrapCharacterization {
    /// Index of the eigen-axis most aligned with the chip's x axis.
    pub fn longitudinal_index(&self) -> usize {
        (0..3)
            .max_by(|&a, &b| self.eigvecs[a].x.abs().total_cmp(&self.eigvecs[b].x.abs()))
            .unwrap_or(0)
    }

    pub fn longitudinal_frequency(&self) -> f64 {
        self.frequencies[self.longitudinal_index()]
    }

    /// The two frequencies off the longitudinal axis, ascending.
    pub fn transverse_frequencies(&self) -> [f64; 2] {
        let l = self.longitudinal_index();
        let mut t: Vec<f64> = (0..3).filter(|&i| i != l).map(|i| self.frequencies[i]).collect();
        t.sort_by(f64::total_cmp);
        [t[0], t[1]]
    }

    /// Curvatures of |B| along the transverse eigen-axes (T/m^2), ascending.
    pub fn transverse_field_curvatures(&self, moment: f64) -> [f64; 2] {
        let l = self.longitudinal_index();
        let mut c: Vec<f64> = (0..3)
            .filter(|&i| i != l)
            .map(|i| self.eigvecs[i].dot(&(self.hessian * self.eigvecs[i])) / moment)
            .collect();
        c.sort_by(f64::total_cmp);
        [c[0], c[1]]
    }

    /// Thermal-ellipsoid volume proxy 1 / (fx fy fz).
    pub fn volume_proxy(&self) -> f64 {
        1.0 / self.frequencies.iter().product::<f64>()
    }
}

/// Hessian of U (J/m^2) by central second differences with step `h` (m).
pub fn hessian_of_potential(field: &dyn PotentialField, point: &Vec3, h: f64) -> Result<Mat3> {
    let obj = Scaled3(field);
    let hs = fd_hessian(&obj, &[point.x / UM, point.y / UM, point.z / UM], h / UM).map_err(|e| match e {
        Error::Singular { conductor, .. } => Error::Domain(format!(
            "Hessian stencil around ({:.3}, {:.3}, {:.3}) um enters the exclusion zone of `{conductor}`",
            point.x / UM,
            point.y / UM,
            point.z / UM
        )),
        other => other,
    })?;
    Ok(Mat3::from_fn(|i, j| hs[(i, j)] * UK / (UM * UM)))
}

/// Gradient of U (J/m) by central differences.
pub fn gradient_of_potential(field: &dyn PotentialField, point: &Vec3, h: f64) -> Result<Vec3> {
    let obj = Scaled3(field);
    let g = fd_gradient(&obj, &[point.x / UM, point.y / UM, point.z / UM], h / UM)?;
    Ok(Vec3::new(g[0], g[1], g[2]) * (UK / UM))
}

/// Builds the characterization of a converged minimum at `position`.
pub fn characterize(field: &dyn PotentialField, position: Vec3, opts: &AnalysisOptions) -> Result<TrapCharacterization> {
    let grad = gradient_of_potential(field, &position, opts.fd_step)?;
    if grad.norm() >= opts.grad_tol {
        return Err(Error::Search(format!(
            "gradient {:.3e} J/m at the reported minimum exceeds tolerance",
            grad.norm()
        )));
    }
    let hessian = hessian_of_potential(field, &position, opts.fd_step)?;
    let eig = SymmetricEigen::new(hessian);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i]);
    if eigenvalues[0] <= 0.0 {
        return Err(Error::Saddle {
            position,
            eigenvalues,
        });
    }
    let mass = field.mass();
    let frequencies = eigenvalues.map(|l| (l / mass).sqrt() / (2.0 * PI));
    let eigvecs = order.map(|i| {
        let v: Vec3 = eig.eigenvectors.column(i).into();
        // fix the sign so that repeated runs report identical vectors
        let k = v.iamax();
        if v[k] < 0.0 {
            -v
        } else {
            v
        }
    });
    Ok(TrapCharacterization {
        position,
        b_min: field.field_magnitude(&position)?,
        frequencies,
        eigvecs,
        hessian,
        depth_to_saddle: None,
        phase: 0.0,
    })
}

/// Local minimum of U starting from `seed`.
pub fn find_minimum(field: &dyn PotentialField, seed: &Vec3, opts: &AnalysisOptions) -> Result<TrapCharacterization> {
    field.energy(seed)?;
    let obj = Scaled3(field);
    let x = robust_minimize(&obj, &[seed.x / UM, seed.y / UM, seed.z / UM], &opts.scaled())?;
    characterize(field, Vec3::new(x[0] * UM, x[1] * UM, x[2] * UM), opts)
}

/// Minimum of U over the transverse plane at fixed `x`. Returns the position
/// and the energy there.
pub fn transverse_minimum(
    field: &dyn PotentialField,
    x: f64,
    seed_yz: (f64, f64),
    opts: &AnalysisOptions,
) -> Result<(Vec3, f64)> {
    transverse_minimum_in(field, x, seed_yz, None, opts)
}

/// As [`transverse_minimum`], confined to the disc `tube = (centre, radius)`.
pub fn transverse_minimum_in(
    field: &dyn PotentialField,
    x: f64,
    seed_yz: (f64, f64),
    tube: Option<((f64, f64), f64)>,
    opts: &AnalysisOptions,
) -> Result<(Vec3, f64)> {
    let obj = Transverse { field, x, tube };
    let x0 = [seed_yz.0 / UM, seed_yz.1 / UM];
    let v = match robust_minimize(&obj, &x0, &opts.scaled()) {
        Ok(v) => v,
        // Where the guide loses transverse confinement the constrained
        // minimum sits on the tube wall; the simplex still finds it.
        Err(_) if tube.is_some() => NelderMead { initial_size: 1.0 }
            .minimize(&obj, &x0, &opts.scaled())
            .map(|r| r.x)
            .map_err(|e| Error::Search(format!("transverse minimization at x = {:.3} um: {e}", x / UM)))?,
        Err(e) => {
            return Err(Error::Search(format!("transverse minimization at x = {:.3} um: {e}", x / UM)));
        }
    };
    let p = Vec3::new(x, v[0] * UM, v[1] * UM);
    Ok((p, field.energy(&p)?))
}

/// A two-dimensional guide: confinement in the transverse plane only.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideCharacterization {
    pub position: Vec3,
    pub b_min: f64,
    /// Transverse frequencies (Hz), ascending.
    pub transverse_frequencies: [f64; 2],
    /// d^2U/dx^2 at the guide centre (J/m^2); zero for an ideal guide.
    pub longitudinal_curvature: f64,
}

impl GuideCharacterization {
    /// Distance of the guide centre below the chip surface.
    pub fn height(&self) -> f64 {
        -self.position.z
    }
}

/// Characterizes a longitudinally flat guide at `x`.
pub fn characterize_guide(
    field: &dyn PotentialField,
    x: f64,
    seed_yz: (f64, f64),
    opts: &AnalysisOptions,
) -> Result<GuideCharacterization> {
    let (p, _) = transverse_minimum(field, x, seed_yz, opts)?;
    let h = hessian_of_potential(field, &p, opts.fd_step)?;
    let block = nalgebra::Matrix2::new(h[(1, 1)], h[(1, 2)], h[(2, 1)], h[(2, 2)]);
    let eig = SymmetricEigen::new(block);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1]];
    ev.sort_by(f64::total_cmp);
    if ev[0] <= 0.0 {
        return Err(Error::Saddle {
            position: p,
            eigenvalues: [ev[0], ev[1], h[(0, 0)]],
        });
    }
    let m = field.mass();
    Ok(GuideCharacterization {
        position: p,
        b_min: field.field_magnitude(&p)?,
        transverse_frequencies: ev.map(|l| (l / m).sqrt() / (2.0 * PI)),
        longitudinal_curvature: h[(0, 0)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Transverse-minimized energy (J).
    pub energy: f64,
}

/// Radius of the tube around the guide axis searched by line profiles: half the
/// guide height.
pub fn guide_tube(seed_yz: (f64, f64)) -> Option<((f64, f64), f64)> {
    Some((seed_yz, 0.5 * seed_yz.1.abs().max(seed_yz.0.abs()).max(1e-6)))
}

/// Transverse-minimized effective 1D potential along x, searched within the
/// guide tube around `seed_yz`.
pub fn line_profile(
    field: &dyn PotentialField,
    x_range: (f64, f64),
    n_samples: usize,
    seed_yz: (f64, f64),
    opts: &AnalysisOptions,
) -> Result<Vec<LineSample>> {
    if n_samples < 16 {
        return Err(Error::Domain(format!("line profile needs at least 16 samples, got {n_samples}")));
    }
    let (x0, x1) = x_range;
    if !(x1 > x0) {
        return Err(Error::Domain("line profile range must be increasing".into()));
    }
    let tube = guide_tube(seed_yz);
    let mut seed = seed_yz;
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let x = x0 + (x1 - x0) * i as f64 / (n_samples - 1) as f64;
        let (p, e) = transverse_minimum_in(field, x, seed, tube, opts)?;
        seed = (p.y, p.z);
        out.push(LineSample { x, y: p.y, z: p.z, energy: e });
    }
    Ok(out)
}

/// Wells of one drive phase, ordered along x.
#[derive(Debug, Clone, PartialEq)]
pub struct WellChain {
    pub phase: f64,
    pub wells: Vec<TrapCharacterization>,
    /// Refined barrier tops between wells: (x, energy in J).
    pub barriers: Vec<(f64, f64)>,
    pub profile: Vec<LineSample>,
}

impl WellChain {
    /// Mean depth (T) over wells bounded by barriers on both sides.
    pub fn mean_depth(&self) -> Option<f64> {
        let d: Vec<f64> = self.wells.iter().filter_map(|w| w.depth_to_saddle).collect();
        if d.is_empty() {
            None
        } else {
            Some(d.iter().sum::<f64>() / d.len() as f64)
        }
    }
}

/// Indices of strict interior local minima and maxima of a sampled profile.
pub fn profile_extrema(profile: &[LineSample]) -> (Vec<usize>, Vec<usize>) {
    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    for i in 1..profile.len().saturating_sub(1) {
        let (a, b, c) = (profile[i - 1].energy, profile[i].energy, profile[i + 1].energy);
        if b < a && b <= c {
            minima.push(i);
        } else if b > a && b >= c {
            maxima.push(i);
        }
    }
    (minima, maxima)
}

/// Golden-section maximization of the transverse-minimized energy on [a, b].
pub(crate) fn refine_barrier(
    field: &dyn PotentialField,
    a: f64,
    b: f64,
    seed_yz: (f64, f64),
    tube: Option<((f64, f64), f64)>,
    opts: &AnalysisOptions,
) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut seed = seed_yz;
    let mut eval = |x: f64| -> Result<f64> {
        let (p, e) = transverse_minimum_in(field, x, seed, tube, opts)?;
        seed = (p.y, p.z);
        Ok(e)
    };
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while (b - a) > 0.01 * UM {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, eval(x)?))
}

/// Extracts the wells of the line profile over `x_range`, refines each in 3D
/// and assigns depths from the neighbouring barrier tops.
pub fn well_chain(
    field: &dyn PotentialField,
    x_range: (f64, f64),
    n_samples: usize,
    seed_yz: (f64, f64),
    phase: f64,
    opts: &AnalysisOptions,
) -> Result<WellChain> {
    let profile = line_profile(field, x_range, n_samples, seed_yz, opts)?;
    let (min_idx, max_idx) = profile_extrema(&profile);
    let barriers: Vec<(f64, f64)> = max_idx
        .iter()
        .map(|&i| {
            let s = &profile[i];
            refine_barrier(field, profile[i - 1].x, profile[i + 1].x, (s.y, s.z), guide_tube(seed_yz), opts)
        })
        .collect::<Result<_>>()?;
    let moment = field.moment();
    let mut wells = Vec::with_capacity(min_idx.len());
    for &i in &min_idx {
        let s = &profile[i];
        let mut w = find_minimum(field, &Vec3::new(s.x, s.y, s.z), opts)?;
        w.phase = phase;
        let u_min = field.energy(&w.position)?;
        let left = barriers.iter().rev().find(|b| b.0 < w.position.x);
        let right = barriers.iter().find(|b| b.0 > w.position.x);
        if let (Some(l), Some(r)) = (left, right) {
            w.depth_to_saddle = Some((l.1.min(r.1) - u_min) / moment);
        }
        wells.push(w);
    }
    Ok(WellChain {
        phase,
        wells,
        barriers,
        profile,
    })
}

/// Follows one well through a sorted list of phases, seeding every search with
/// the previous position.
pub fn track_well(
    scene: &ChipScene,
    drive: &DriveConfig,
    phases: &[f64],
    seed: &Vec3,
    opts: &AnalysisOptions,
) -> Result<Vec<(f64, TrapCharacterization)>> {
    if phases.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("track_well needs sorted phases".into()));
    }
    let max_jump = scene.layout.modulation_period / 4.0;
    let mut out: Vec<(f64, TrapCharacterization)> = Vec::with_capacity(phases.len());
    let mut pos = *seed;
    for &phase in phases {
        let field = SceneField::new(scene, &drive.currents_at(phase));
        let mut w = find_minimum(&field, &pos, opts).map_err(|e| e.at_phase(phase))?;
        w.phase = phase;
        if let Some((prev_phase, prev)) = out.last() {
            let jump = (w.position - prev.position).norm();
            if jump > max_jump {
                return Err(Error::Tracking {
                    from_rad: *prev_phase,
                    to_rad: phase,
                    jump_um: jump / UM,
                });
            }
        }
        pos = w.position;
        out.push((phase, w));
    }
    Ok(out)
}

/// FWHM of the harmonic ground-state wavefunction amplitude,
/// 2 sqrt(2 ln 2) sqrt(hbar / (m omega)).
pub fn ground_state_fwhm(frequency: f64, mass: f64) -> Result<f64> {
    if !(frequency > 0.0) || !(mass > 0.0) {
        return Err(Error::Domain(format!(
            "ground-state size needs positive frequency and mass (got {frequency}, {mass})"
        )));
    }
    let omega = 2.0 * PI * frequency;
    Ok(2.0 * (2.0 * 2f64.ln()).sqrt() * (HBAR / (mass * omega)).sqrt())
}

/// FWHM of the ground-state probability density; smaller by sqrt 2.
pub fn ground_state_density_fwhm(frequency: f64, mass: f64) -> Result<f64> {
    Ok(ground_state_fwhm(frequency, mass)? / 2f64.sqrt())
}

/// sqrt(nu_R / nu_osc).
pub fn lamb_dicke(frequency: f64, atom: &AtomState, wavelength: f64) -> Result<f64> {
    if !(frequency > 0.0) {
        return Err(Error::Domain(format!("trap frequency must be positive, got {frequency}")));
    }
    Ok((recoil_frequency(atom, wavelength)? / frequency).sqrt())
}

/// Default transverse seed for a side guide formed by I0 and the y bias.
pub fn guide_seed(scene: &ChipScene, i0: f64) -> (f64, f64) {
    let by = scene.bias.b0.y.abs().max(1e-9);
    (0.0, -crate::units::MU0 * i0.abs() / (2.0 * PI * by))
}

/// Interior of a conveyor pattern: the pattern centre +- `half_width`
/// periods, chosen so that every well inside has barriers on both sides.
pub fn interior_range(params: &PaperLayoutParams) -> (f64, f64) {
    let p = params.modulation_period;
    let span = (4 * params.n_periods - 1) as f64 * p / 4.0;
    let centre = params.first_wire_x() + 0.5 * span;
    let half = (0.5 * params.n_periods as f64 - 0.75).max(0.75) * p;
    (centre - half, centre + half)
}

/// Landscape figures of a conveyor pattern under a given drive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConveyorSummary {
    pub modulation_period: f64,
    /// Mean depth over interior wells and the sampled phases (T).
    pub mean_depth: f64,
    pub chains: Vec<WellChain>,
}

impl ConveyorSummary {
    /// Interior wells that have a depth.
    pub fn bounded_wells(&self) -> impl Iterator<Item = &TrapCharacterization> {
        self.chains
            .iter()
            .flat_map(|c| c.wells.iter())
            .filter(|w| w.depth_to_saddle.is_some())
    }
}

/// Samples the conveyor landscape at `phases` over the interior of the pattern.
/// A scene for the paper-style layout with the filament count chosen from
/// the guide height.
pub fn auto_scene(params: &PaperLayoutParams, bias: BiasField, atom: AtomState, i0: f64, gravity: bool) -> Result<ChipScene> {
    let scene = ChipScene::new(params.build()?, bias, atom, 1, gravity)?;
    let trap_height = -guide_seed(&scene, i0).1;
    let n_fil = ChipScene::auto_filaments(&scene.layout, trap_height);
    if n_fil == 1 {
        Ok(scene)
    } else {
        ChipScene::new(scene.layout, bias, atom, n_fil, gravity)
    }
}

pub fn conveyor_summary(
    params: &PaperLayoutParams,
    bias: BiasField,
    drive: &DriveConfig,
    atom: AtomState,
    phases: &[f64],
    opts: &AnalysisOptions,
) -> Result<ConveyorSummary> {
    let scene = auto_scene(params, bias, atom, drive.i0, false)?;
    let range = interior_range(params);
    let samples = ((range.1 - range.0) / (params.modulation_period / 24.0)).ceil() as usize + 1;
    let seed = guide_seed(&scene, drive.i0);
    let chains: Vec<WellChain> = phases
        .iter()
        .map(|&ph| {
            let field = SceneField::new(&scene, &drive.currents_at(ph));
            well_chain(&field, range, samples.max(16), seed, ph, opts).map_err(|e| e.at_phase(ph))
        })
        .collect::<Result<_>>()?;
    let depths: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.wells.iter().filter_map(|w| w.depth_to_saddle))
        .collect();
    if depths.is_empty() {
        return Err(Error::Search(format!(
            "no bounded wells in the pattern interior for period {:.1} um",
            params.modulation_period / UM
        )));
    }
    Ok(ConveyorSummary {
        modulation_period: params.modulation_period,
        mean_depth: depths.iter().sum::<f64>() / depths.len() as f64,
        chains,
    })
}

/// Phases at which the conveyor landscape is averaged. The pattern repeats
/// every quarter cycle, so four phases in [0, pi/2) cover it.
pub fn calibration_phases() -> Vec<f64> {
    (0..4).map(|k| k as f64 * PI / 8.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodCalibration {
    pub modulation_period: f64,
    pub mean_depth: f64,
    pub target_depth: f64,
    /// (period, mean depth) pairs visited.
    pub history: Vec<(f64, f64)>,
}

/// Finds the modulation period whose mean well depth equals `target_depth`
/// (T) by bisection on `bracket` (m), to `tol` (m).
pub fn calibrate_period(
    base: &PaperLayoutParams,
    bias: BiasField,
    drive: &DriveConfig,
    atom: AtomState,
    target_depth: f64,
    bracket: (f64, f64),
    tol: f64,
    opts: &AnalysisOptions,
) -> Result<PeriodCalibration> {
    if !(target_depth > 0.0) || !(bracket.0 > 0.0 && bracket.1 > bracket.0) || !(tol > 0.0) {
        return Err(Error::Domain("calibration needs a positive target, an increasing bracket and a positive tolerance".into()));
    }
    let phases = calibration_phases();
    let mut history = Vec::new();
    let mut depth_at = |p: f64| -> Result<f64> {
        let params = PaperLayoutParams {
            modulation_period: p,
            ..*base
        };
        let d = conveyor_summary(&params, bias, drive, atom, &phases, opts)?.mean_depth;
        history.push((p, d));
        Ok(d)
    };
    let (mut lo, mut hi) = bracket;
    let mut f_lo = depth_at(lo)? - target_depth;
    let f_hi = depth_at(hi)? - target_depth;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Search(format!(
            "target depth {:.3} G not bracketed: {:.3} G at {:.1} um, {:.3} G at {:.1} um",
            target_depth * 1e4,
            (f_lo + target_depth) * 1e4,
            lo / UM,
            (f_hi + target_depth) * 1e4,
            hi / UM
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = depth_at(mid)? - target_depth;
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    let d = depth_at(p)?;
    Ok(PeriodCalibration {
        modulation_period: p,
        mean_depth: d,
        target_depth,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{BiasField, CurrentSet};
    use crate::geometry::{paper_layout, ChipLayout, Conductor};
    use crate::units::{LAMBDA_D2, M_RB87};

    #[test]
    fn harmonic_oracle_minimum() {
        let atom = AtomState::default();
        let center = Vec3::new(12e-6, -3e-6, -80e-6);
        let k = 1e-17;
        let pot = HarmonicPotential::isotropic(center, k, atom);
        let opts = AnalysisOptions::default();
        let t = find_minimum(&pot, &Vec3::new(0.0, 0.0, -60e-6), &opts).unwrap();
        assert!((t.position - center).norm() < 1e-12);
        let nu = (k / atom.mass).sqrt() / (2.0 * PI);
        for f in t.frequencies {
            assert!((f / nu - 1.0).abs() < 1e-6, "{f} vs {nu}");
        }
    }

    #[test]
    fn anisotropic_oracle_sorted() {
        let atom = AtomState::default();
        let pot = HarmonicPotential::with_frequencies(Vec3::new(0.0, 0.0, -1e-4), [100.0, 400.0, 380.0], atom);
        let t = find_minimum(&pot, &Vec3::new(5e-6, 2e-6, -1.1e-4), &AnalysisOptions::default()).unwrap();
        assert!((t.frequencies[0] - 100.0).abs() < 1e-4);
        assert!((t.frequencies[1] - 380.0).abs() < 1e-4);
        assert!((t.frequencies[2] - 400.0).abs() < 1e-4);
        assert_eq!(t.longitudinal_index(), 0);
        assert!((t.longitudinal_frequency() - 100.0).abs() < 1e-4);
    }

    #[test]
    fn saddle_is_reported() {
        let atom = AtomState::default();
        let mut pot = HarmonicPotential::with_frequencies(Vec3::zeros(), [100.0, 200.0, 300.0], atom);
        pot.stiffness[(0, 0)] *= -1.0;
        let err = characterize(&pot, Vec3::zeros(), &AnalysisOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Saddle { .. }));
    }

    #[test]
    fn hessian_exact_on_quadratic() {
        let atom = AtomState::default();
        let k = Mat3::new(2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.9) * 1e-17;
        let pot = HarmonicPotential {
            center: Vec3::new(1e-5, 0.0, -5e-5),
            stiffness: k,
            offset: 1e-28,
            atom,
        };
        let h = hessian_of_potential(&pot, &Vec3::new(3e-5, -1e-5, -4e-5), 0.05e-6).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[(i, j)] - k[(i, j)]).abs() < 1e-8 * k.amax(), "{i}{j}");
            }
        }
    }

    #[test]
    fn ground_state_examples() {
        let f800 = ground_state_fwhm(800.0, M_RB87).unwrap();
        assert!((f800 * 1e6 - 0.90).abs() < 0.02, "{}", f800 * 1e6);
        let f3200 = ground_state_fwhm(3200.0, M_RB87).unwrap();
        assert!((f800 / f3200 - 2.0).abs() < 1e-12);
        let f29k = ground_state_fwhm(29e3, M_RB87).unwrap();
        assert!((f29k * 1e6 - 0.149).abs() < 0.001, "{}", f29k * 1e6);
        let dens = ground_state_density_fwhm(800.0, M_RB87).unwrap();
        assert!((dens * 1e6 - 0.635).abs() < 0.01);
        assert!(ground_state_fwhm(0.0, M_RB87).is_err());
    }

    #[test]
    fn lamb_dicke_examples() {
        let atom = AtomState::default();
        let eta = lamb_dicke(29e3, &atom, LAMBDA_D2).unwrap();
        assert!((eta - 0.36).abs() < 0.01);
        let nu_r = recoil_frequency(&atom, LAMBDA_D2).unwrap();
        assert!((lamb_dicke(nu_r, &atom, LAMBDA_D2).unwrap() - 1.0).abs() < 1e-15);
        let eta4 = lamb_dicke(4.0 * 29e3, &atom, LAMBDA_D2).unwrap();
        assert!((eta / eta4 - 2.0).abs() < 1e-12);
        assert!(lamb_dicke(-1.0, &atom, LAMBDA_D2).is_err());
    }

    fn guide_scene(n: usize) -> ChipScene {
        ChipScene::new(
            paper_layout(535e-6, 6).unwrap(),
            BiasField::from_gauss(0.42, 80.0, 0.0).unwrap(),
            AtomState::default(),
            n,
            false,
        )
        .unwrap()
    }

    #[test]
    fn thin_wire_guide_height() {
        let scene = guide_scene(1);
        let field = SceneField::new(&scene, &CurrentSet::new(2.0, 0.0, 0.0, 0.0));
        let g = characterize_guide(&field, 0.0, guide_seed(&scene, 2.0), &AnalysisOptions::default()).unwrap();
        assert!((g.height() - 50e-6).abs() < 0.5e-6, "{}", g.height());
        assert!((g.b_min - 0.42e-4).abs() < 1e-9);
        assert!(g.longitudinal_curvature.abs() < 1e-6 * g.transverse_frequencies[0]);
    }

    #[test]
    fn line_profile_needs_samples() {
        let scene = guide_scene(1);
        let field = SceneField::new(&scene, &CurrentSet::new(2.0, 0.0, 0.0, 0.0));
        assert!(line_profile(&field, (0.0, 1e-3), 8, (0.0, -5e-5), &AnalysisOptions::default()).is_err());
    }

    #[test]
    fn hessian_stencil_in_wire_is_error() {
        let scene = guide_scene(1);
        let field = SceneField::new(&scene, &CurrentSet::new(2.0, 0.0, 0.0, 0.0));
        let r = hessian_of_potential(&field, &Vec3::new(1e-4, 0.0, -26.5e-6), 1e-6);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn rotated_scene_rotates_hessian() {
        // a bent conductor pattern without symmetry, then the same rotated by 90 deg about z
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), PI / 2.0);
        let build = |r: &nalgebra::Rotation3<f64>| {
            let mut convs = paper_layout(500e-6, 1).unwrap().conductors;
            for c in &mut convs {
                for s in &mut c.segments {
                    s.start = r * s.start;
                    s.end = r * s.end;
                }
            }
            let convs: Vec<Conductor> = convs;
            let layout = ChipLayout::new(convs, 5.5e-3, 500e-6).unwrap();
            let b = r * Vec3::new(3e-4, 12e-4, 0.5e-4);
            ChipScene::new(layout, BiasField { b0: b }, AtomState::default(), 2, false).unwrap()
        };
        let s0 = build(&nalgebra::Rotation3::identity());
        let s1 = build(&rot);
        let c = CurrentSet::new(2.0, 0.6, -0.4, 0.2);
        let p = Vec3::new(-1.2e-4, 3e-5, -2.2e-4);
        let h0 = hessian_of_potential(&SceneField::new(&s0, &c), &p, 0.05e-6).unwrap();
        let h1 = hessian_of_potential(&SceneField::new(&s1, &c), &(rot * p), 0.05e-6).unwrap();
        let r = rot.matrix();
        let expect = r * h0 * r.transpose();
        assert!((h1 - expect).amax() < 1e-5 * h0.amax(), "{h1} vs {expect}");
    }
}
