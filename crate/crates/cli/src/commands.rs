use std::f64::consts::PI;
use std::fmt::Write as _;

use atomchip_core::analysis::{
    calibrate_period, characterize_guide, ground_state_fwhm, guide_seed, hessian_of_potential, interior_range,
    lamb_dicke, well_chain, AnalysisOptions, SceneField, TrapCharacterization, WellChain,
};
use atomchip_core::dynamics::{transport_experiment, TransportReport, TransportSetup};
use atomchip_core::field::sample_points;
use atomchip_core::merge::{degree_grid, merge_phase_map, merge_simulate, merge_wells, septum_prediction, Cloud, MergeSetup, Populate};
use atomchip_core::scene::{ResolvedScene, SceneError, ScenePresets};
use atomchip_core::units::{joule_to_uk, LAMBDA_D2};
use atomchip_core::waveforms::waveform_table;
use atomchip_core::Vec3;
use rayon::prelude::*;

use crate::args::*;
use crate::run::{cell, num, CliError, CliResult, Run};
use crate::svg::{heat_map, line_plot, Series};

const UM: f64 = 1e-6;

pub fn dispatch(command: Command, threads: usize) -> CliResult<()> {
    match command {
        Command::Scene(SceneCmd::Validate(a)) => scene_validate(a, threads),
        Command::Scene(SceneCmd::List) => {
            for name in ScenePresets::default().names() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Field(FieldCmd::Sample(a)) => field_sample(a, threads),
        Command::Trap(TrapCmd::Analyze(a)) => trap_analyze(a, threads),
        Command::Trap(TrapCmd::ScanPhase(a)) => scan_phase(a, threads),
        Command::Transport(TransportCmd::Simulate(a)) => transport_simulate(a, threads),
        Command::Transport(TransportCmd::Sweep(a)) => transport_sweep(a, threads),
        Command::Merge(MergeCmd::Map(a)) => merge_map(a, threads),
        Command::Merge(MergeCmd::Simulate(a)) => merge_sim(a, threads),
        Command::Calibrate(CalibrateCmd::Period(a)) => calibrate(a, threads),
        Command::Waveform(WaveformCmd::Export(a)) => waveform_export(a, threads),
        Command::Plot(a) => plot(a),
    }
}

fn needs(invariant: &str, message: &str) -> CliError {
    CliError::Scene(SceneError::Constraint {
        invariant: invariant.into(),
        message: message.into(),
    })
}

/// x range searched for wells: the pattern interior for the paper layout,
/// otherwise the centre wire less one period at each end.
fn chain_range(r: &ResolvedScene) -> (f64, f64) {
    match &r.params {
        Some(p) => interior_range(p),
        None => {
            let l = &r.scene.layout;
            let half = 0.5 * l.center_wire_length - l.modulation_period;
            (-half.abs(), half.abs())
        }
    }
}

fn chain_samples(r: &ResolvedScene, range: (f64, f64)) -> usize {
    (((range.1 - range.0) / (r.scene.layout.modulation_period / 24.0)).ceil() as usize + 1).max(16)
}

fn chain_at(r: &ResolvedScene, phase_rad: f64, opts: &AnalysisOptions) -> CliResult<WellChain> {
    let range = chain_range(r);
    let field = SceneField::new(&r.scene, &r.drive.currents_at(phase_rad));
    let seed = guide_seed(&r.scene, r.drive.i0);
    Ok(well_chain(&field, range, chain_samples(r, range), seed, phase_rad, opts).map_err(|e| e.at_phase(phase_rad))?)
}

/// Trap frequencies assigned to the x, y, z axes by the dominant component
/// of each eigenvector.
fn axis_frequencies(w: &TrapCharacterization) -> [f64; 3] {
    let mut pairs: Vec<(f64, usize, usize)> = (0..3)
        .flat_map(|k| (0..3).map(move |a| (k, a)))
        .map(|(k, a)| (w.eigvecs[k][a].abs(), k, a))
        .collect();
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0));
    let mut out = [f64::NAN; 3];
    let (mut used_k, mut used_a) = ([false; 3], [false; 3]);
    for (_, k, a) in pairs {
        if !used_k[k] && !used_a[a] {
            out[a] = w.frequencies[k];
            used_k[k] = true;
            used_a[a] = true;
        }
    }
    out
}

fn well_row(phase_deg: f64, index: usize, w: &TrapCharacterization) -> Vec<String> {
    let f = axis_frequencies(w);
    vec![
        num(phase_deg),
        index.to_string(),
        num(w.position.x / UM),
        num(w.position.y / UM),
        num(w.position.z / UM),
        num(w.b_min * 1e4),
        cell(w.depth_to_saddle.map(|d| d * 1e4)),
        num(f[0]),
        num(f[1]),
        num(f[2]),
    ]
}

const WELL_HEADER: [&str; 10] = ["phase_deg", "well_index", "x_um", "y_um", "z_um", "Bmin_G", "depth_G", "fx_Hz", "fy_Hz", "fz_Hz"];

fn scene_validate(a: ValidateArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("scene validate", &a, a.out.as_deref(), None);
    let r = run.load_scene(&a.scene.scene)?;
    let text = r.file.to_toml();
    match &a.out {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        }
        None => print!("{text}"),
    }
    eprintln!(
        "scene ok: {} conductors, {} filament(s) per ribbon, gravity {}",
        r.scene.layout.conductors.len(),
        r.scene.n_filaments,
        if r.scene.include_gravity { "on" } else { "off" }
    );
    run.finish(threads)
}

fn field_sample(a: FieldSampleArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("field sample", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    let (xs, ys, zs) = (a.x_um.values(), a.y_um.values(), a.z_um.values());
    let mut points = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &x in &xs {
        for &y in &ys {
            points.extend(zs.iter().map(|&z| Vec3::new(x, y, z) * UM));
        }
    }
    let currents = r.drive.currents_at(a.phase.to_radians());
    let samples = sample_points(&r.scene, &currents, &points);
    let rows: Vec<Vec<String>> = points
        .iter()
        .zip(&samples)
        .map(|(p, s)| {
            let mut row = vec![num(p.x / UM), num(p.y / UM), num(p.z / UM)];
            match s {
                Ok(g) => row.extend([
                    num(g.b.x * 1e4),
                    num(g.b.y * 1e4),
                    num(g.b.z * 1e4),
                    num(g.magnitude * 1e4),
                    num(joule_to_uk(g.potential)),
                ]),
                Err(_) => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
            row
        })
        .collect();
    let excluded = samples.iter().filter(|s| s.is_err()).count();
    run.csv(&["x_um", "y_um", "z_um", "Bx_G", "By_G", "Bz_G", "Bmag_G", "U_uK"], &rows)?;
    if excluded > 0 {
        eprintln!("{excluded} point(s) inside wire exclusion zones left blank");
    }
    if let Some(path) = &a.output.plot {
        let bmag: Vec<f64> = samples.iter().map(|s| s.as_ref().map_or(f64::NAN, |g| g.magnitude * 1e4)).collect();
        let axes: Vec<(&str, &Vec<f64>)> = [("x (um)", &xs), ("y (um)", &ys), ("z (um)", &zs)]
            .into_iter()
            .filter(|(_, v)| v.len() > 1)
            .collect();
        let title = format!("|B| at phase {} deg", a.phase);
        let svg = match axes.as_slice() {
            [] | [_] => {
                let (name, v) = axes.first().copied().unwrap_or(("z (um)", &zs));
                let pts = v.iter().copied().zip(bmag.iter().copied()).collect();
                line_plot(&title, name, "|B| (G)", &[Series { name: "|B|".into(), points: pts }])
            }
            [(n1, v1), (n2, v2)] => {
                // points run with the last axis fastest
                let grid: Vec<Vec<f64>> = (0..v2.len()).map(|j| (0..v1.len()).map(|i| bmag[i * v2.len() + j]).collect()).collect();
                heat_map(&title, n1, n2, v1, v2, &grid, "|B| (G)")
            }
            _ => return Err(CliError::Usage("plots need a one- or two-dimensional grid".into())),
        };
        run.svg(path, &svg)?;
    }
    run.finish(threads)
}

/// Transverse frequencies of a guide along the y- and z-dominated axes of
/// the transverse Hessian block.
fn guide_axis_frequencies(h: [[f64; 2]; 2], mass: f64) -> (f64, f64) {
    let [[a, b], [_, c]] = h;
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    let l1 = a * co * co + 2.0 * b * s * co + c * s * s;
    let l2 = a * s * s - 2.0 * b * s * co + c * co * co;
    let f = |l: f64| (l / mass).sqrt() / (2.0 * PI);
    // the first eigenvector (cos, sin) is y-dominated when |cos| >= |sin|
    if co.abs() >= s.abs() {
        (f(l1), f(l2))
    } else {
        (f(l2), f(l1))
    }
}

fn trap_analyze(a: TrapAnalyzeArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("trap analyze", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    let opts = AnalysisOptions::default();
    let phase = a.phase.to_radians();
    let header = ["phase_deg", "well_index", "x_um", "y_um", "z_um", "height_um", "Bmin_G", "depth_G", "fx_Hz", "fy_Hz", "fz_Hz"];
    let mut summary = String::new();
    let rows = if r.drive.im_amplitude == 0.0 && !r.drive.h2_enabled {
        // a plain side guide: no longitudinal confinement
        let range = chain_range(&r);
        let field = SceneField::new(&r.scene, &r.drive.currents_at(phase));
        let g = characterize_guide(&field, 0.5 * (range.0 + range.1), guide_seed(&r.scene, r.drive.i0), &opts)?;
        let h = hessian_of_potential(&field, &g.position, opts.fd_step)?;
        let (fy, fz) = guide_axis_frequencies([[h[(1, 1)], h[(1, 2)]], [h[(2, 1)], h[(2, 2)]]], r.scene.atom.mass);
        let nu = (g.transverse_frequencies[0] * g.transverse_frequencies[1]).sqrt();
        let _ = writeln!(
            summary,
            "guide: height {:.2} um, B_min {:.4} G, transverse frequencies {:.0} / {:.0} Hz ({} filament(s) per ribbon)",
            g.height() / UM,
            g.b_min * 1e4,
            g.transverse_frequencies[0],
            g.transverse_frequencies[1],
            r.scene.n_filaments
        );
        let _ = writeln!(
            summary,
            "Lamb-Dicke sqrt(nu_R/nu) {:.3}; ground-state FWHM {:.1} nm (amplitude), at the geometric-mean frequency {:.0} Hz",
            lamb_dicke(nu, &r.scene.atom, LAMBDA_D2)?,
            ground_state_fwhm(nu, r.scene.atom.mass)? * 1e9,
            nu
        );
        vec![vec![
            num(a.phase),
            "0".into(),
            num(g.position.x / UM),
            num(g.position.y / UM),
            num(g.position.z / UM),
            num(g.height() / UM),
            num(g.b_min * 1e4),
            String::new(),
            String::new(),
            num(fy),
            num(fz),
        ]]
    } else {
        let chain = chain_at(&r, phase, &opts)?;
        let _ = writeln!(summary, "{} well(s) at phase {} deg", chain.wells.len(), a.phase);
        if let Some(d) = chain.mean_depth() {
            let _ = writeln!(summary, "mean depth of bounded wells {:.4} G", d * 1e4);
        }
        for w in chain.wells.iter().filter(|w| w.depth_to_saddle.is_some()) {
            let t = w.transverse_frequencies();
            let _ = writeln!(
                summary,
                "  x {:8.1} um: height {:.1} um, depth {:.3} G, longitudinal {:.0} Hz, transverse {:.0} / {:.0} Hz",
                w.position.x / UM,
                -w.position.z / UM,
                w.depth_to_saddle.unwrap_or(0.0) * 1e4,
                w.longitudinal_frequency(),
                t[0],
                t[1]
            );
        }
        if let Some(path) = &a.output.plot {
            let pts = chain.profile.iter().map(|s| (s.x / UM, joule_to_uk(s.energy))).collect();
            let svg = line_plot(
                &format!("Transverse-minimized potential at {} deg", a.phase),
                "x (um)",
                "U (uK)",
                &[Series { name: "U".into(), points: pts }],
            );
            run.svg(path, &svg)?;
        }
        chain
            .wells
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut row = well_row(a.phase, i, w);
                row.insert(5, num(-w.position.z / UM));
                row
            })
            .collect()
    };
    run.csv(&header, &rows)?;
    run.summary(&summary);
    run.finish(threads)
}

fn scan_phase(a: ScanPhaseArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("trap scan-phase", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    if !(a.step_deg > 0.0) || a.to_deg < a.from_deg {
        return Err(CliError::Usage("need --step-deg > 0 and --to-deg >= --from-deg".into()));
    }
    let n = ((a.to_deg - a.from_deg) / a.step_deg + 1e-9).floor() as usize + 1;
    let phases: Vec<f64> = (0..n).map(|i| a.from_deg + i as f64 * a.step_deg).collect();
    let opts = AnalysisOptions::default();
    let chains: Vec<WellChain> = phases.par_iter().map(|&d| chain_at(&r, d.to_radians(), &opts)).collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for (&d, chain) in phases.iter().zip(&chains) {
        for (i, w) in chain.wells.iter().enumerate() {
            rows.push(well_row(d, i, w));
        }
    }
    run.csv(&WELL_HEADER, &rows)?;
    if let Some(path) = &a.output.plot {
        let max_wells = chains.iter().map(|c| c.wells.len()).max().unwrap_or(0);
        let series: Vec<Series> = (0..max_wells)
            .map(|i| Series {
                name: format!("well {i}"),
                points: phases
                    .iter()
                    .zip(&chains)
                    .map(|(&d, c)| (d, c.wells.get(i).map_or(f64::NAN, |w| w.position.x / UM)))
                    .collect(),
            })
            .collect();
        run.svg(path, &line_plot("Well positions", "phase (deg)", "x (um)", &series))?;
    }
    run.finish(threads)
}

fn transport_setup(r: &ResolvedScene, t: &TransportOptions) -> (TransportSetup, u64) {
    let sim = &r.file.simulation;
    let setup = TransportSetup {
        n_atoms: t.n_atoms.unwrap_or(sim.n_atoms),
        t0: t.t0_uk.unwrap_or(sim.t0_uk) * 1e-6,
        distance: t.distance_um.map(|d| d * UM),
        settle_periods: t.settle_periods,
        average_periods: t.average_periods,
        dt: sim.dt_s,
        ..TransportSetup::default()
    };
    (setup, t.seed.unwrap_or(sim.seed))
}

fn run_transport(r: &ResolvedScene, v_cm_s: f64, setup: &TransportSetup, seed: u64) -> CliResult<TransportReport> {
    let params = r
        .params
        .as_ref()
        .ok_or_else(|| needs("layout", "transport experiments need the paper layout preset"))?;
    Ok(transport_experiment(&r.scene, &r.drive, params, v_cm_s * 1e-2, setup, seed)?)
}

fn transport_simulate(a: TransportSimulateArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("transport simulate", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    let (setup, seed) = transport_setup(&r, &a.transport);
    run.set_seed(seed);
    let rep = run_transport(&r, a.vmax, &setup, seed)?;
    if let Some(path) = &a.trajectory {
        let rows: Vec<Vec<String>> = rep
            .trajectory
            .iter()
            .map(|t| vec![num(t.t), num(t.x_com / UM), num(t.z_com / UM), num(t.temperature * 1e6), num(t.survival)])
            .collect();
        run.csv_to(path, &["t_s", "x_com_um", "z_com_um", "T_uK", "survival"], &rows)?;
    }
    let row = vec![
        num(a.vmax),
        num(rep.t_initial * 1e6),
        num(rep.t_final * 1e6),
        num(rep.delta_t * 1e6),
        num(rep.survival_fraction),
        rep.seed.to_string(),
        num(rep.dt),
        setup.n_atoms.to_string(),
    ];
    run.csv(
        &["v_max_cm_s", "T_initial_uK", "T_final_uK", "delta_T_uK", "survival", "seed", "dt_s", "n_atoms"],
        &[row],
    )?;
    if let Some(path) = &a.output.plot {
        let pts = rep.trajectory.iter().map(|t| (t.t * 1e3, t.x_com / UM)).collect();
        let temps = rep.trajectory.iter().map(|t| (t.t * 1e3, t.temperature * 1e6)).collect();
        let svg = line_plot(
            &format!("Transport at v_max = {} cm/s", a.vmax),
            "t (ms)",
            "x_com (um) / T (uK)",
            &[Series { name: "x_com (um)".into(), points: pts }, Series { name: "T (uK)".into(), points: temps }],
        );
        run.svg(path, &svg)?;
    }
    run.summary(&format!(
        "v_max {} cm/s: T {:.2} -> {:.2} uK (dT {:+.2} uK), survival {:.3}\n",
        a.vmax,
        rep.t_initial * 1e6,
        rep.t_final * 1e6,
        rep.delta_t * 1e6,
        rep.survival_fraction
    ));
    run.finish(threads)
}

fn mean_sem(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn transport_sweep(a: TransportSweepArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("transport sweep", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    if a.seeds == 0 || a.vmax.0.is_empty() {
        return Err(CliError::Usage("need at least one seed and one velocity".into()));
    }
    let (setup, seed0) = transport_setup(&r, &a.transport);
    run.set_seed(seed0);
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for &v in &a.vmax.0 {
        let mut reps = Vec::new();
        for k in 0..a.seeds {
            // the same seeds at every velocity: common random numbers
            let rep = run_transport(&r, v, &setup, seed0 + k)?;
            eprintln!("v_max {v} cm/s, seed {}: dT {:+.3} uK", seed0 + k, rep.delta_t * 1e6);
            reps.push(rep);
        }
        let pick = |f: fn(&TransportReport) -> f64| reps.iter().map(f).collect::<Vec<_>>();
        let (dt, dt_err) = mean_sem(&pick(|r| r.delta_t * 1e6));
        rows.push(vec![
            num(v),
            num(mean_sem(&pick(|r| r.t_initial * 1e6)).0),
            num(mean_sem(&pick(|r| r.t_final * 1e6)).0),
            num(dt),
            cell(Some(dt_err)),
            num(mean_sem(&pick(|r| r.survival_fraction)).0),
            a.seeds.to_string(),
        ]);
        curve.push((v, dt));
    }
    run.csv(
        &["v_max_cm_s", "T_initial_uK", "T_final_uK", "delta_T_uK", "delta_T_sem_uK", "survival", "n_seeds"],
        &rows,
    )?;
    if let Some(path) = &a.output.plot {
        let svg = line_plot("Heating against peak well velocity", "v_max (cm/s)", "dT (uK)", &[Series { name: "dT".into(), points: curve }]);
        run.svg(path, &svg)?;
    }
    run.finish(threads)
}

fn merge_map(a: MergeMapArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("merge map", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    if !(a.step_deg > 0.0 && a.step_deg <= 90.0) {
        return Err(CliError::Usage("--step-deg must lie in (0, 90]".into()));
    }
    let phases = degree_grid(a.step_deg);
    let map = merge_phase_map(&r.scene, &r.drive, &phases, &AnalysisOptions::default())?;
    let v0 = map.volumes.first().copied().flatten();
    let rel = |v: Option<f64>| v.zip(v0).map(|(v, v0)| v / v0);
    let rows: Vec<Vec<String>> = (0..phases.len())
        .map(|i| {
            vec![
                num(phases[i].to_degrees()),
                map.minima_counts[i].to_string(),
                cell(map.barrier_heights[i].map(|b| b * 1e4)),
                cell(rel(map.volumes[i])),
            ]
        })
        .collect();
    run.csv(&["phase_deg", "minima_count", "barrier_G", "volume_rel"], &rows)?;
    let m = &map.milestones;
    let deg = |p: Option<f64>| p.map_or("never".to_string(), |p| format!("{:.1} deg", p.to_degrees()));
    run.summary(&format!(
        "milestones:\n  two minima until {}\n  single minimum from {}\n  compressed to the initial stationary-trap volume from {}\n",
        deg(m.separate_until),
        deg(m.merged_at),
        deg(m.compressed_at)
    ));
    if let Some(path) = &a.output.plot {
        let deg_of = |i: usize| phases[i].to_degrees();
        let series = [
            Series {
                name: "minima".into(),
                points: (0..phases.len()).map(|i| (deg_of(i), map.minima_counts[i] as f64)).collect(),
            },
            Series {
                name: "barrier (G)".into(),
                points: (0..phases.len()).map(|i| (deg_of(i), map.barrier_heights[i].map_or(f64::NAN, |b| b * 1e4))).collect(),
            },
            Series {
                name: "volume / initial".into(),
                points: (0..phases.len()).map(|i| (deg_of(i), rel(map.volumes[i]).unwrap_or(f64::NAN))).collect(),
            },
        ];
        run.svg(path, &line_plot("Merge cycle", "phase (deg)", "", &series))?;
    }
    run.finish(threads)
}

fn merge_sim(a: MergeSimulateArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("merge simulate", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let populate: Populate = a.populate.parse().map_err(|e: atomchip_core::Error| CliError::Usage(e.to_string()))?;
    let r = run.load_scene(&a.scene.scene)?;
    let sim = &r.file.simulation;
    let setup = MergeSetup {
        n_per_well: a.n_atoms.unwrap_or(sim.n_atoms),
        t0: a.t0_uk.unwrap_or(sim.t0_uk) * 1e-6,
        cycle: a
            .cycle_s
            .or(r.profile.as_ref().map(|p| p.duration()))
            .unwrap_or(MergeSetup::default().cycle),
        dt: sim.dt_s,
        record_step_deg: a.record_step_deg,
        hold_periods: a.hold_periods,
    };
    let seed = a.seed.unwrap_or(sim.seed);
    run.set_seed(seed);
    let rep = merge_simulate(&r.scene, &r.drive, populate, &setup, seed)?;
    let rows: Vec<Vec<String>> = rep
        .trace
        .iter()
        .map(|t| {
            vec![
                num(t.phase_deg),
                t.minima_count.to_string(),
                cell(t.barrier_g),
                t.n_left.to_string(),
                t.n_right.to_string(),
                cell(t.temperature.map(|t| t * 1e6)),
                cell(t.psd),
            ]
        })
        .collect();
    run.csv(&["phase_deg", "minima_count", "barrier_G", "N_left", "N_right", "T_uK", "psd"], &rows)?;

    let [(lw, _), (rw, _)] = merge_wells(&r.scene, &r.drive, &AnalysisOptions::default())?;
    let left = Cloud { n: rep.before[0].n, temperature: rep.before[0].temperature };
    let right = match populate {
        Populate::Both => rep.before.get(1).map(|b| Cloud { n: b.n, temperature: b.temperature }),
        Populate::LeftOnly => Some(Cloud { n: 0.0, temperature: 0.0 }),
    };
    let ideal = septum_prediction(left, right, lw.frequencies, rw.frequencies)?;
    let mut s = String::from("merge summary:\n");
    for (b, name) in rep.before.iter().zip(["arriving well", "stationary trap"]) {
        let _ = writeln!(s, "  before, {name}: N {:.0}, T {:.2} uK, mean frequency {:.1} Hz, psd {:.4e}", b.n, b.temperature * 1e6, b.mean_frequency, b.psd);
    }
    let f = &rep.after;
    let _ = writeln!(s, "  after: N {:.0}, T {:.2} uK, mean frequency {:.1} Hz, psd {:.4e} ({})", f.n, f.temperature * 1e6, f.mean_frequency, f.psd, f.method);
    let _ = writeln!(s, "  psd ratio {:.4}, temperature ratio {:.4}", rep.psd_ratio, rep.temperature_ratio);
    let _ = writeln!(
        s,
        "  ideal-gas septum model: psd ratio {:.4}, final T {:.2} uK",
        ideal.psd_ratio,
        ideal.t_final * 1e6
    );
    let _ = writeln!(s, "  collisionless model, cycle {} s, dt {:.3e} s, seed {seed}", setup.cycle, rep.dt);
    run.summary(&s);
    if let Some(path) = &a.output.plot {
        let series = [
            Series { name: "N left".into(), points: rep.trace.iter().map(|t| (t.phase_deg, t.n_left as f64)).collect() },
            Series { name: "N right".into(), points: rep.trace.iter().map(|t| (t.phase_deg, t.n_right as f64)).collect() },
        ];
        run.svg(path, &line_plot("Atoms on either side of the barrier", "phase (deg)", "atoms", &series))?;
    }
    run.finish(threads)
}

fn calibrate(a: CalibratePeriodArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("calibrate period", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    let params = r
        .params
        .as_ref()
        .ok_or_else(|| needs("layout", "period calibration needs the paper layout preset"))?;
    let cal = calibrate_period(
        params,
        r.scene.bias,
        &r.drive,
        r.scene.atom,
        a.target_g * 1e-4,
        (a.bracket_um.0 * UM, a.bracket_um.1 * UM),
        a.tol_um * UM,
        &AnalysisOptions::default(),
    )?;
    let rows: Vec<Vec<String>> = cal.history.iter().map(|(p, d)| vec![num(p / UM), num(d * 1e4)]).collect();
    run.csv(&["period_um", "mean_depth_G"], &rows)?;
    println!(
        "modulation_period_um = {:.2}  (mean depth {:.4} G, target {} G)",
        cal.modulation_period / UM,
        cal.mean_depth * 1e4,
        a.target_g
    );
    if let Some(path) = &a.output.plot {
        let mut pts: Vec<(f64, f64)> = cal.history.iter().map(|(p, d)| (p / UM, d * 1e4)).collect();
        pts.sort_by(|p, q| p.0.total_cmp(&q.0));
        run.svg(path, &line_plot("Mean well depth against period", "period (um)", "depth (G)", &[Series { name: "depth".into(), points: pts }]))?;
    }
    run.finish(threads)
}

fn waveform_export(a: WaveformExportArgs, threads: usize) -> CliResult<()> {
    let mut run = Run::new("waveform export", &a, a.output.out.as_deref(), a.output.plot.as_deref());
    let r = run.load_scene(&a.scene.scene)?;
    let profile = r.profile.as_ref().ok_or_else(|| needs("profile", "the scene has no [profile] section"))?;
    let table = waveform_table(&r.drive, profile.as_ref(), a.samples)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|w| vec![num(w.t), num(w.phase), num(w.i0), num(w.im1), num(w.im2), num(w.ih2)])
        .collect();
    run.csv(&["t_s", "phase_rad", "I0_A", "IM1_A", "IM2_A", "IH2_A"], &rows)?;
    if let Some(path) = &a.output.plot {
        let ser = |name: &str, f: fn(&atomchip_core::waveforms::WaveformRow) -> f64| Series {
            name: name.into(),
            points: table.iter().map(|w| (w.t * 1e3, f(w))).collect(),
        };
        let series = [ser("I0", |w| w.i0), ser("IM1", |w| w.im1), ser("IM2", |w| w.im2), ser("IH2", |w| w.ih2)];
        run.svg(path, &line_plot("Drive currents", "t (ms)", "current (A)", &series))?;
    }
    run.finish(threads)
}

fn plot(a: PlotArgs) -> CliResult<()> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&a.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.input.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Usage(format!("no column `{name}` in {} (columns: {})", a.input.display(), headers.iter().collect::<Vec<_>>().join(", ")))
        })
    };
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| CliError::Io(e.to_string()))?;
    let value = |r: &csv::StringRecord, i: usize| r.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
    let xi = column(&a.x)?;
    if a.y.is_empty() {
        return Err(CliError::Usage("--y needs at least one column".into()));
    }
    let title = a.title.clone().unwrap_or_else(|| a.input.display().to_string());
    let svg = match &a.heatmap {
        Some(v) => {
            let [y] = a.y.as_slice() else {
                return Err(CliError::Usage("--heatmap takes exactly one --y column".into()));
            };
            let (yi, vi) = (column(y)?, column(v)?);
            let uniq = |i: usize| {
                let mut u: Vec<f64> = records.iter().map(|r| value(r, i)).filter(|v| v.is_finite()).collect();
                u.sort_by(f64::total_cmp);
                u.dedup();
                u
            };
            let (xs, ys) = (uniq(xi), uniq(yi));
            if xs.is_empty() || ys.is_empty() {
                return Err(CliError::Usage("heat map needs numeric x and y columns".into()));
            }
            let mut grid = vec![vec![f64::NAN; xs.len()]; ys.len()];
            for rec in &records {
                let (x, y) = (value(rec, xi), value(rec, yi));
                if let (Ok(i), Ok(j)) = (xs.binary_search_by(|p| p.total_cmp(&x)), ys.binary_search_by(|p| p.total_cmp(&y))) {
                    grid[j][i] = value(rec, vi);
                }
            }
            heat_map(&title, &a.x, y, &xs, &ys, &grid, v)
        }
        None => {
            let series = a
                .y
                .iter()
                .map(|y| {
                    let yi = column(y)?;
                    Ok(Series {
                        name: y.clone(),
                        points: records.iter().map(|r| (value(r, xi), value(r, yi))).collect(),
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let y_label = if a.y.len() == 1 { a.y[0].clone() } else { String::new() };
            line_plot(&title, &a.x, &y_label, &series)
        }
    };
    std::fs::write(&a.out, svg).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))
}
