//! Scene files: a strict TOML schema with unit-suffixed keys, shipped presets,
//! and resolution into a ready-to-use scene, drive and phase profile.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::guide_seed;
use crate::field::{BiasField, ChipScene};
use crate::geometry::{
    Channel, ChipLayout, Conductor, PaperLayoutParams, DEFAULT_CROSSING_LENGTH, DEFAULT_H2_OFFSET, DEFAULT_H2_OVERHANG,
    DEFAULT_MODULATION_PERIOD, DEFAULT_N_PERIODS, PAPER_CENTER_WIRE_LENGTH, PAPER_WIRE_THICKNESS, PAPER_WIRE_WIDTH,
};
use crate::units::{AtomState, AMU, M_RB87};
use crate::waveforms::{DriveConfig, H2Coefficients, PhaseProfile, ProfileRegistry, ProfileSpec};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    Io { path: String, message: String },
    Syntax(String),
    Schema(String),
    Unit { field: String, message: String },
    Constraint { invariant: String, message: String },
    UnknownPreset { name: String, known: Vec<&'static str> },
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::Io { path, message } => write!(f, "cannot read scene `{path}`: {message}"),
            SceneError::Syntax(m) => write!(f, "syntax error: {m}"),
            SceneError::Schema(m) => write!(f, "schema violation: {m}"),
            SceneError::Unit { field, message } => write!(f, "unit error in `{field}`: {message}"),
            SceneError::Constraint { invariant, message } => {
                write!(f, "constraint violation [{invariant}]: {message}")
            }
            SceneError::UnknownPreset { name, known } => {
                write!(f, "`{name}` is neither a scene file nor a preset (presets: {})", known.join(", "))
            }
        }
    }
}

impl std::error::Error for SceneError {}

pub type SceneResult<T> = std::result::Result<T, SceneError>;

fn constraint(invariant: &str, e: impl fmt::Display) -> SceneError {
    SceneError::Constraint {
        invariant: invariant.into(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorSpec {
    pub id: String,
    pub channel: Channel,
    pub start_um: [f64; 3],
    pub end_um: [f64; 3],
    pub width_um: f64,
    pub thickness_um: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    /// `paper` (the conveyor pattern with H2) or `explicit`.
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation_period_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_periods: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2_offset_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2_overhang_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_length_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_wire_length_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_end_crossings: Option<bool>,
    /// Filaments per ribbon; chosen from the guide height when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_filaments: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductors: Option<Vec<ConductorSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSection {
    #[serde(rename = "x_G")]
    pub x_g: f64,
    #[serde(rename = "y_G")]
    pub y_g: f64,
    #[serde(rename = "z_G", default)]
    pub z_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub gf_mf: f64,
    pub mass_amu: f64,
}

impl Default for AtomSection {
    fn default() -> Self {
        AtomSection {
            gf_mf: 1.0,
            mass_amu: M_RB87 / AMU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H2Section {
    #[serde(rename = "c0_A")]
    pub c0_a: f64,
    #[serde(rename = "c1_A")]
    pub c1_a: f64,
    pub phi1_rad: f64,
    #[serde(rename = "c2_A")]
    pub c2_a: f64,
    pub phi2_rad: f64,
}

impl From<H2Coefficients> for H2Section {
    fn from(h: H2Coefficients) -> Self {
        H2Section {
            c0_a: h.c0,
            c1_a: h.c1,
            phi1_rad: h.phi1,
            c2_a: h.c2,
            phi2_rad: h.phi2,
        }
    }
}

impl From<H2Section> for H2Coefficients {
    fn from(h: H2Section) -> Self {
        H2Coefficients {
            c0: h.c0_a,
            c1: h.c1_a,
            phi1: h.phi1_rad,
            c2: h.c2_a,
            phi2: h.phi2_rad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    #[serde(rename = "i0_A")]
    pub i0_a: f64,
    #[serde(rename = "im_amplitude_A")]
    pub im_amplitude_a: f64,
    #[serde(default)]
    pub h2_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2: Option<H2Section>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    pub n_atoms: usize,
    pub seed: u64,
    pub gravity: bool,
    #[serde(rename = "t0_uK")]
    pub t0_uk: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dt_s: None,
            n_atoms: 2000,
            seed: 1,
            gravity: true,
            t0_uk: 30.0,
        }
    }
}

/// A scene as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub layout: LayoutSection,
    pub bias: BiasSection,
    #[serde(default)]
    pub atom: AtomSection,
    pub drive: DriveSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub simulation: SimulationSection,
}

/// A scene ready for computation. `file` has every default written out.
#[derive(Debug)]
pub struct ResolvedScene {
    pub file: SceneFile,
    pub scene: ChipScene,
    pub drive: DriveConfig,
    pub profile: Option<Box<dyn PhaseProfile>>,
    /// Present for the paper layout.
    pub params: Option<PaperLayoutParams>,
}

fn unit_hint(message: &str) -> Option<SceneError> {
    // "unknown field `foo_mm`, expected one of `foo_um`, ..."
    let start = message.find("unknown field `")? + "unknown field `".len();
    let key = &message[start..start + message[start..].find('`')?];
    let (stem, _) = key.rsplit_once('_')?;
    let expected = &message[start..];
    let known = expected
        .split('`')
        .skip(2)
        .step_by(2)
        .find(|k| k.rsplit_once('_').is_some_and(|(s, _)| s == stem))?;
    Some(SceneError::Unit {
        field: key.into(),
        message: format!("unsupported unit suffix; expected `{known}`"),
    })
}

impl SceneFile {
    pub fn parse(text: &str) -> SceneResult<Self> {
        if text.trim().is_empty() {
            return Err(SceneError::Syntax("empty scene file".into()));
        }
        toml::from_str::<toml::Table>(text).map_err(|e| SceneError::Syntax(e.to_string()))?;
        toml::from_str::<SceneFile>(text).map_err(|e| {
            let m = e.to_string();
            unit_hint(&m).unwrap_or(SceneError::Schema(m))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene files always serialize")
    }

    /// Fills every optional layout key with its default.
    pub fn with_defaults(&self) -> SceneResult<Self> {
        let mut out = self.clone();
        let l = &mut out.layout;
        match l.preset.as_str() {
            "paper" => {
                l.modulation_period_um.get_or_insert(DEFAULT_MODULATION_PERIOD * 1e6);
                l.n_periods.get_or_insert(DEFAULT_N_PERIODS);
                l.h2_offset_um.get_or_insert(DEFAULT_H2_OFFSET * 1e6);
                l.h2_overhang_um.get_or_insert(DEFAULT_H2_OVERHANG * 1e6);
                l.crossing_length_um.get_or_insert(DEFAULT_CROSSING_LENGTH * 1e6);
                l.center_wire_length_um.get_or_insert(PAPER_CENTER_WIRE_LENGTH * 1e6);
                l.width_um.get_or_insert(PAPER_WIRE_WIDTH * 1e6);
                l.thickness_um.get_or_insert(PAPER_WIRE_THICKNESS * 1e6);
                l.half_end_crossings.get_or_insert(true);
                if l.conductors.is_some() {
                    return Err(constraint("layout", "the paper preset does not take explicit conductors"));
                }
            }
            "explicit" => {
                if l.conductors.as_ref().is_none_or(|c| c.is_empty()) {
                    return Err(constraint("layout", "explicit layouts need [[layout.conductors]]"));
                }
                if l.modulation_period_um.is_none() || l.center_wire_length_um.is_none() {
                    return Err(constraint(
                        "layout",
                        "explicit layouts need modulation_period_um and center_wire_length_um",
                    ));
                }
            }
            other => {
                return Err(constraint("layout", format!("unknown layout preset `{other}` (paper, explicit)")));
            }
        }
        if self.drive.h2_enabled {
            out.drive.h2.get_or_insert(H2Coefficients::default().into());
        }
        Ok(out)
    }

    fn paper_params(&self) -> Option<PaperLayoutParams> {
        let l = &self.layout;
        (l.preset == "paper").then(|| PaperLayoutParams {
            modulation_period: l.modulation_period_um.unwrap_or(DEFAULT_MODULATION_PERIOD * 1e6) * 1e-6,
            n_periods: l.n_periods.unwrap_or(DEFAULT_N_PERIODS),
            h2_offset: l.h2_offset_um.unwrap_or(DEFAULT_H2_OFFSET * 1e6) * 1e-6,
            h2_overhang: l.h2_overhang_um.unwrap_or(DEFAULT_H2_OVERHANG * 1e6) * 1e-6,
            crossing_length: l.crossing_length_um.unwrap_or(DEFAULT_CROSSING_LENGTH * 1e6) * 1e-6,
            center_wire_length: l.center_wire_length_um.unwrap_or(PAPER_CENTER_WIRE_LENGTH * 1e6) * 1e-6,
            width: l.width_um.unwrap_or(PAPER_WIRE_WIDTH * 1e6) * 1e-6,
            thickness: l.thickness_um.unwrap_or(PAPER_WIRE_THICKNESS * 1e6) * 1e-6,
            half_end_crossings: l.half_end_crossings.unwrap_or(true),
        })
    }

    fn layout(&self) -> SceneResult<ChipLayout> {
        if let Some(p) = self.paper_params() {
            return p.build().map_err(|e| constraint("layout", e));
        }
        let l = &self.layout;
        let um = |v: [f64; 3]| Vec3::new(v[0], v[1], v[2]) * 1e-6;
        let conductors = l
            .conductors
            .iter()
            .flatten()
            .map(|c| {
                Conductor::straight(
                    c.id.clone(),
                    um(c.start_um),
                    um(c.end_um),
                    c.width_um * 1e-6,
                    c.thickness_um * 1e-6,
                    c.channel.clone(),
                )
            })
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| constraint("conductor", e))?;
        ChipLayout::new(
            conductors,
            l.center_wire_length_um.unwrap_or(0.0) * 1e-6,
            l.modulation_period_um.unwrap_or(0.0) * 1e-6,
        )
        .map_err(|e| constraint("layout", e))
    }

    /// Validates, fills defaults and builds the scene.
    pub fn resolve(&self) -> SceneResult<ResolvedScene> {
        let file = self.with_defaults()?;
        let sim = &file.simulation;
        if !(sim.t0_uk > 0.0) {
            return Err(constraint("simulation.t0_uK > 0", sim.t0_uk));
        }
        if sim.n_atoms == 0 {
            return Err(constraint("simulation.n_atoms >= 1", 0));
        }
        if let Some(dt) = sim.dt_s {
            if !(dt > 0.0) {
                return Err(constraint("simulation.dt_s > 0", dt));
            }
        }
        if let Some(n) = file.layout.n_filaments {
            if n < 1 {
                return Err(constraint("layout.n_filaments >= 1", n));
            }
        }
        let layout = file.layout()?;
        let b = &file.bias;
        let bias = BiasField::from_gauss(b.x_g, b.y_g, b.z_g).map_err(|e| constraint("bias", e))?;
        let atom = AtomState::new(file.atom.gf_mf, file.atom.mass_amu * AMU).map_err(|e| constraint("atom", e))?;
        let d = &file.drive;
        let drive = DriveConfig::new(
            d.i0_a,
            d.im_amplitude_a,
            d.h2.map(H2Coefficients::from).unwrap_or_default(),
            d.h2_enabled,
        )
        .map_err(|e| constraint("drive", e))?;
        let gravity = sim.gravity;
        let scene = ChipScene::new(layout, bias, atom, 1, gravity).map_err(|e| constraint("scene", e))?;
        let n_fil = match file.layout.n_filaments {
            Some(n) => n as usize,
            None => ChipScene::auto_filaments(&scene.layout, -guide_seed(&scene, drive.i0).1),
        };
        let scene = if n_fil == 1 {
            scene
        } else {
            ChipScene::new(scene.layout, bias, atom, n_fil, gravity).map_err(|e| constraint("scene", e))?
        };
        let profile = file
            .profile
            .as_ref()
            .map(|p| ProfileRegistry::default().build(p))
            .transpose()
            .map_err(|e| constraint("profile", e))?;
        Ok(ResolvedScene {
            params: file.paper_params(),
            file,
            scene,
            drive,
            profile,
        })
    }
}

type PresetBuilder = fn() -> SceneFile;

/// Named scenes shipped with the tool.
pub struct ScenePresets {
    presets: BTreeMap<&'static str, PresetBuilder>,
}

impl ScenePresets {
    pub fn empty() -> Self {
        ScenePresets {
            presets: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, builder: PresetBuilder) {
        self.presets.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.presets.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Option<SceneFile> {
        self.presets.get(name).map(|b| b())
    }

    /// A preset name or a path to a scene file.
    pub fn load(&self, name_or_path: &str) -> SceneResult<SceneFile> {
        if let Some(s) = self.get(name_or_path) {
            return Ok(s);
        }
        let path = std::path::Path::new(name_or_path);
        if !path.exists() {
            return Err(SceneError::UnknownPreset {
                name: name_or_path.into(),
                known: self.names(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
            path: name_or_path.into(),
            message: e.to_string(),
        })?;
        SceneFile::parse(&text)
    }
}

fn paper_layout_section() -> LayoutSection {
    LayoutSection {
        preset: "paper".into(),
        ..LayoutSection::default()
    }
}

/// The conveyor of the moving-well figure: I0 = 2 A, |I_M| = 1 A, bias 7 G x + 16 G y,
/// driven at 2 pi / 150 ms for one period.
pub fn fig2_conveyor() -> SceneFile {
    SceneFile {
        name: Some("fig2_conveyor".into()),
        layout: paper_layout_section(),
        bias: BiasSection { x_g: 7.0, y_g: 16.0, z_g: 0.0 },
        atom: AtomSection::default(),
        drive: DriveSection {
            i0_a: 2.0,
            im_amplitude_a: 1.0,
            h2_enabled: false,
            h2: None,
        },
        profile: Some(ProfileSpec {
            kind: "linear".into(),
            duration_s: 0.150,
            omega_rad_s: Some(2.0 * PI / 0.150),
            ..ProfileSpec::default()
        }),
        simulation: SimulationSection::default(),
    }
}

/// The side guide of I0 = 2 A with bias 0.42 G x + 80 G y.
pub fn guide_example() -> SceneFile {
    SceneFile {
        name: Some("guide_example".into()),
        layout: paper_layout_section(),
        bias: BiasSection { x_g: 0.42, y_g: 80.0, z_g: 0.0 },
        atom: AtomSection::default(),
        drive: DriveSection {
            i0_a: 2.0,
            im_amplitude_a: 0.0,
            h2_enabled: false,
            h2: None,
        },
        profile: None,
        simulation: SimulationSection::default(),
    }
}

/// The conveyor with the H2 merge waveform, one cycle in 600 ms.
pub fn fig5_merge() -> SceneFile {
    SceneFile {
        name: Some("fig5_merge".into()),
        drive: DriveSection {
            i0_a: 2.0,
            im_amplitude_a: 1.0,
            h2_enabled: true,
            h2: Some(H2Coefficients::default().into()),
        },
        profile: Some(ProfileSpec {
            kind: "linear".into(),
            duration_s: 0.600,
            omega_rad_s: Some(2.0 * PI / 0.600),
            ..ProfileSpec::default()
        }),
        simulation: SimulationSection {
            n_atoms: 1000,
            ..SimulationSection::default()
        },
        ..fig2_conveyor()
    }
}

impl Default for ScenePresets {
    fn default() -> Self {
        let mut r = ScenePresets::empty();
        r.register("fig2_conveyor", fig2_conveyor);
        r.register("guide_example", guide_example);
        r.register("fig5_merge", fig5_merge);
        r
    }
}
