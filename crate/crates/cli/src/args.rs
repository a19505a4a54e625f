use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "atomchip",
    version,
    about = "Atom-chip magnetic conveyor belt simulator",
    long_about = "Simulates lithographic atom-chip traps and the magnetic conveyor belt: wire fields, \
                  moving-well landscapes, thermal transport and the merging of two traps.\n\n\
                  Exit codes: 0 ok, 1 I/O failure, 2 usage error, 3 scene error, 4 physics or convergence error."
)]
pub struct Cli {
    /// Worker threads for parallel sections [default: all cores]
    #[arg(long, global = true, env = "ATOMCHIP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scene files and presets
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Magnetic field evaluation
    #[command(subcommand)]
    Field(FieldCmd),
    /// Trap landscape analysis
    #[command(subcommand)]
    Trap(TrapCmd),
    /// Thermal transport experiments
    #[command(subcommand)]
    Transport(TransportCmd),
    /// Merging a conveyor well with the stationary trap
    #[command(subcommand)]
    Merge(MergeCmd),
    /// Calibration of unknown geometry
    #[command(subcommand)]
    Calibrate(CalibrateCmd),
    /// Drive waveforms
    #[command(subcommand)]
    Waveform(WaveformCmd),
    /// Plot columns of a CSV file written by this tool as SVG
    Plot(PlotArgs),
}

#[derive(Debug, Subcommand)]
pub enum SceneCmd {
    /// Parse and check a scene, print it with every default filled in
    Validate(ValidateArgs),
    /// List the shipped scene presets
    List,
}

#[derive(Debug, Subcommand)]
pub enum FieldCmd {
    /// Sample B and the trapping potential on a grid
    Sample(FieldSampleArgs),
}

#[derive(Debug, Subcommand)]
pub enum TrapCmd {
    /// Wells (or the guide) at one drive phase
    Analyze(TrapAnalyzeArgs),
    /// Wells over a range of drive phases
    ScanPhase(ScanPhaseArgs),
}

#[derive(Debug, Subcommand)]
pub enum TransportCmd {
    /// Move a thermal cloud by one period and measure the heating
    Simulate(TransportSimulateArgs),
    /// Heating against the peak well velocity
    Sweep(TransportSweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum MergeCmd {
    /// Minima count, barrier and trap volume over the merge cycle
    Map(MergeMapArgs),
    /// Monte Carlo merge with phase-space-density bookkeeping
    Simulate(MergeSimulateArgs),
}

#[derive(Debug, Subcommand)]
pub enum CalibrateCmd {
    /// Fit the modulation-wire period to a target mean well depth
    Period(CalibratePeriodArgs),
}

#[derive(Debug, Subcommand)]
pub enum WaveformCmd {
    /// Tabulate the channel currents over the scene's phase profile
    Export(WaveformExportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SceneArg {
    /// Scene preset name or path to a scene file
    #[arg(long, value_name = "NAME|PATH")]
    pub scene: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// CSV output file [default: stdout]; the run manifest is written next to it
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write an SVG plot
    #[arg(long, value_name = "FILE")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Write the filled-in scene to this file instead of stdout
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FieldSampleArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Drive phase: degrees, or with a `deg`/`rad` suffix
    #[arg(long, default_value = "0", value_parser = parse_angle, allow_hyphen_values = true)]
    pub phase: f64,
    /// x coordinates in um: a value or START:STOP:COUNT
    #[arg(long, default_value = "0", value_parser = parse_axis, allow_hyphen_values = true)]
    pub x_um: Axis,
    /// y coordinates in um: a value or START:STOP:COUNT
    #[arg(long, default_value = "0", value_parser = parse_axis, allow_hyphen_values = true)]
    pub y_um: Axis,
    /// z coordinates in um (negative below the chip): a value or START:STOP:COUNT
    #[arg(long, default_value = "-300:-5:60", value_parser = parse_axis, allow_hyphen_values = true)]
    pub z_um: Axis,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrapAnalyzeArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Drive phase: degrees, or with a `deg`/`rad` suffix
    #[arg(long, default_value = "0", value_parser = parse_angle, allow_hyphen_values = true)]
    pub phase: f64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScanPhaseArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// First phase (degrees)
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub from_deg: f64,
    /// Last phase (degrees, inclusive)
    #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
    pub to_deg: f64,
    /// Phase step (degrees)
    #[arg(long, default_value_t = 5.0)]
    pub step_deg: f64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransportOptions {
    /// Atoms [default: the scene's simulation.n_atoms]
    #[arg(long)]
    pub n_atoms: Option<usize>,
    /// RNG seed [default: the scene's simulation.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial temperature in uK [default: the scene's simulation.t0_uK]
    #[arg(long)]
    pub t0_uk: Option<f64>,
    /// Transport distance in um [default: one modulation period]
    #[arg(long)]
    pub distance_um: Option<f64>,
    /// Hold after the ramp, in longitudinal trap periods
    #[arg(long, default_value_t = 5.0)]
    pub settle_periods: f64,
    /// Temperature averaging window, in longitudinal trap periods
    #[arg(long, default_value_t = 2.0)]
    pub average_periods: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransportSimulateArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Peak well velocity, e.g. 2cm_s, 0.02m_s, 20mm_s [unit default: cm/s]
    #[arg(long, value_parser = parse_velocity)]
    pub vmax: f64,
    #[command(flatten)]
    pub transport: TransportOptions,
    /// Write the decimated trajectory (t, centre of mass, T, survival) here
    #[arg(long, value_name = "FILE")]
    pub trajectory: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransportSweepArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Comma-separated peak velocities, e.g. 0.25,0.5,1,2,4,8cm_s [unit default: cm/s]
    #[arg(long, value_parser = parse_velocity_list)]
    pub vmax: VelocityList,
    /// Independent seeds per velocity (seed, seed+1, ...), shared across velocities
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub transport: TransportOptions,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MergeMapArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Phase step over the full 0..360 degree cycle
    #[arg(long, default_value_t = 1.0)]
    pub step_deg: f64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MergeSimulateArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Which traps are loaded at phase 0: both or left_only
    #[arg(long, default_value = "both")]
    pub populate: String,
    /// Atoms per populated trap [default: the scene's simulation.n_atoms]
    #[arg(long)]
    pub n_atoms: Option<usize>,
    /// RNG seed [default: the scene's simulation.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial temperature in uK [default: the scene's simulation.t0_uK]
    #[arg(long)]
    pub t0_uk: Option<f64>,
    /// Duration of the full drive cycle in s [default: the scene profile's duration, else 0.6]
    #[arg(long)]
    pub cycle_s: Option<f64>,
    /// Trace row spacing (degrees)
    #[arg(long, default_value_t = 10.0)]
    pub record_step_deg: f64,
    /// Hold after the cycle, in periods of the lowest final-trap frequency,
    /// over which the final temperature is averaged (0: single snapshot)
    #[arg(long, default_value_t = 4.0)]
    pub hold_periods: f64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibratePeriodArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Target mean well depth (G)
    #[arg(long = "target-G", default_value_t = 2.5)]
    pub target_g: f64,
    /// Search bracket for the period, LOW,HIGH in um
    #[arg(long, default_value = "300,600", value_parser = parse_pair)]
    pub bracket_um: (f64, f64),
    /// Bisection tolerance (um)
    #[arg(long, default_value_t = 0.5)]
    pub tol_um: f64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WaveformExportArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Samples over the profile duration
    #[arg(long, default_value_t = 361)]
    pub samples: usize,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    /// CSV file written by this tool
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Column for the horizontal axis
    #[arg(long)]
    pub x: String,
    /// Comma-separated columns for the vertical axis (one series each); with
    /// --heatmap, the single column for the vertical grid axis
    #[arg(long, value_delimiter = ',')]
    pub y: Vec<String>,
    /// Draw a heat map of this column over (x, y) instead of lines
    #[arg(long)]
    pub heatmap: Option<String>,
    /// Plot title [default: the input file name]
    #[arg(long)]
    pub title: Option<String>,
    /// SVG output file
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Evenly spaced coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityList(pub Vec<f64>);

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

pub fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Some(r) = s.strip_suffix("rad") {
        number(r).map(f64::to_degrees)
    } else {
        number(s.strip_suffix("deg").unwrap_or(s))
    }
}

pub fn parse_axis(s: &str) -> Result<Axis, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [v] => {
            let v = number(v)?;
            Ok(Axis { start: v, stop: v, count: 1 })
        }
        [a, b, n] => {
            let count: usize = n.trim().parse().map_err(|_| format!("`{n}` is not a count"))?;
            if count == 0 {
                return Err("count must be at least 1".into());
            }
            Ok(Axis {
                start: number(a)?,
                stop: number(b)?,
                count,
            })
        }
        _ => Err(format!("`{s}` is neither a value nor START:STOP:COUNT")),
    }
}

const VELOCITY_UNITS: [(&str, f64); 3] = [("cm_s", 1.0), ("mm_s", 0.1), ("m_s", 100.0)];

fn split_unit(s: &str) -> (&str, Option<f64>) {
    let s = s.trim();
    for (suffix, to_cm) in VELOCITY_UNITS {
        if let Some(v) = s.strip_suffix(suffix) {
            return (v, Some(to_cm));
        }
    }
    (s, None)
}

/// Velocity in cm/s.
pub fn parse_velocity(s: &str) -> Result<f64, String> {
    let (v, unit) = split_unit(s);
    let v = number(v)? * unit.unwrap_or(1.0);
    if v < 0.0 {
        return Err("velocity must be non-negative".into());
    }
    Ok(v)
}

/// Comma-separated velocities in cm/s; a unit on the last item applies to
/// every item without its own.
pub fn parse_velocity_list(s: &str) -> Result<VelocityList, String> {
    let items: Vec<&str> = s.split(',').collect();
    let default_unit = split_unit(items.last().copied().unwrap_or("")).1.unwrap_or(1.0);
    let out = items
        .iter()
        .map(|item| {
            let (v, unit) = split_unit(item);
            let v = number(v)? * unit.unwrap_or(default_unit);
            if v < 0.0 {
                return Err("velocity must be non-negative".to_string());
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VelocityList(out))
}

pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    match s.split(',').collect::<Vec<_>>().as_slice() {
        [a, b] => Ok((number(a)?, number(b)?)),
        _ => Err(format!("`{s}` is not LOW,HIGH")),
    }
}
