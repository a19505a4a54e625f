//! Biot-Savart superposition of straight filaments plus a uniform bias, and
//! the trapping potential of a weak-field-seeking atom.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{decompose_ribbon, Channel, ChipLayout, Filament};
use crate::units::{AtomState, G_EARTH, MU0};
use crate::Vec3;

const MU0_OVER_4PI: f64 = MU0 / (4.0 * std::f64::consts::PI);

/// Filament count used for ribbons when the trap sits within five wire widths.
pub const NEAR_FIELD_FILAMENTS: usize = 32;

/// Uniform external field (T).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiasField {
    pub b0: Vec3,
}

impl BiasField {
    pub fn new(bx: f64, by: f64, bz: f64) -> Result<Self> {
        let b0 = Vec3::new(bx, by, bz);
        if b0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("bias field must be finite".into()));
        }
        Ok(BiasField { b0 })
    }

    pub fn from_gauss(bx: f64, by: f64, bz: f64) -> Result<Self> {
        Self::new(bx * 1e-4, by * 1e-4, bz * 1e-4)
    }
}

/// Instantaneous currents on every channel (A).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurrentSet {
    pub i0: f64,
    pub im1: f64,
    pub im2: f64,
    pub ih2: f64,
    pub extra: BTreeMap<String, f64>,
}

impl CurrentSet {
    pub fn new(i0: f64, im1: f64, im2: f64, ih2: f64) -> Self {
        CurrentSet {
            i0,
            im1,
            im2,
            ih2,
            extra: BTreeMap::new(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        CurrentSet {
            i0: self.i0 * s,
            im1: self.im1 * s,
            im2: self.im2 * s,
            ih2: self.ih2 * s,
            extra: self.extra.iter().map(|(k, v)| (k.clone(), v * s)).collect(),
        }
    }

    pub fn add(&self, other: &CurrentSet) -> Self {
        let mut extra = self.extra.clone();
        for (k, v) in &other.extra {
            *extra.entry(k.clone()).or_insert(0.0) += v;
        }
        CurrentSet {
            i0: self.i0 + other.i0,
            im1: self.im1 + other.im1,
            im2: self.im2 + other.im2,
            ih2: self.ih2 + other.ih2,
            extra,
        }
    }

    pub fn channel(&self, channel: &Channel) -> f64 {
        match channel {
            Channel::I0 => self.i0,
            Channel::M1 => self.im1,
            Channel::M2 => self.im2,
            Channel::H2 => self.ih2,
            Channel::Constant(name) => self.extra.get(name).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CompiledFilament {
    start: Vec3,
    delta: Vec3,
    fraction: f64,
    channel: usize,
}

#[derive(Debug, Clone, Copy)]
struct Exclusion {
    start: Vec3,
    delta: Vec3,
    inv_len2: f64,
    radius2: f64,
    conductor: usize,
}

/// Everything needed to evaluate fields: layout, bias, species, filament model
/// and the gravity switch. Filaments are precomputed at construction.
#[derive(Debug, Clone)]
pub struct ChipScene {
    pub layout: ChipLayout,
    pub bias: BiasField,
    pub atom: AtomState,
    pub n_filaments: usize,
    pub include_gravity: bool,
    channels: Vec<Channel>,
    filaments: Vec<CompiledFilament>,
    exclusions: Vec<Exclusion>,
}

impl ChipScene {
    pub fn new(
        layout: ChipLayout,
        bias: BiasField,
        atom: AtomState,
        n_filaments: usize,
        include_gravity: bool,
    ) -> Result<Self> {
        if n_filaments == 0 {
            return Err(Error::Domain("n_filaments must be at least 1".into()));
        }
        let mut channels: Vec<Channel> = vec![Channel::I0, Channel::M1, Channel::M2, Channel::H2];
        let mut filaments = Vec::new();
        let mut exclusions = Vec::new();
        for (ci, conductor) in layout.conductors.iter().enumerate() {
            let channel = match channels.iter().position(|c| c == &conductor.channel) {
                Some(i) => i,
                None => {
                    channels.push(conductor.channel.clone());
                    channels.len() - 1
                }
            };
            for seg in &conductor.segments {
                let n = if seg.width > 0.0 { n_filaments } else { 1 };
                for Filament {
                    start,
                    end,
                    current_fraction,
                } in decompose_ribbon(seg, n)?
                {
                    filaments.push(CompiledFilament {
                        start,
                        delta: end - start,
                        fraction: current_fraction,
                        channel,
                    });
                }
                let delta = seg.end - seg.start;
                exclusions.push(Exclusion {
                    start: seg.start,
                    delta,
                    inv_len2: 1.0 / delta.norm_squared(),
                    radius2: seg.exclusion_radius().powi(2),
                    conductor: ci,
                });
            }
        }
        Ok(ChipScene {
            layout,
            bias,
            atom,
            n_filaments,
            include_gravity,
            channels,
            filaments,
            exclusions,
        })
    }

    /// Filament count by the near-field rule: ribbons are resolved into
    /// `NEAR_FIELD_FILAMENTS` filaments when the trap height is within two
    /// wire widths, otherwise treated as thin wires (relative field error
    /// about (w/d)^2/12, under 2% there).
    pub fn auto_filaments(layout: &ChipLayout, trap_height: f64) -> usize {
        if trap_height < 2.0 * layout.min_width() {
            NEAR_FIELD_FILAMENTS
        } else {
            1
        }
    }

    pub fn with_gravity(&self, include_gravity: bool) -> Self {
        ChipScene {
            include_gravity,
            ..self.clone()
        }
    }

    /// Per-channel currents in the scene's internal channel order.
    pub fn resolve(&self, currents: &CurrentSet) -> ResolvedCurrents {
        ResolvedCurrents(self.channels.iter().map(|c| currents.channel(c)).collect())
    }

    pub fn filament_count(&self) -> usize {
        self.filaments.len()
    }

    /// Returns an error if `p` lies inside any wire's exclusion zone.
    #[inline]
    pub fn check_clearance(&self, p: &Vec3) -> Result<()> {
        for e in &self.exclusions {
            let rel = p - e.start;
            let t = (rel.dot(&e.delta) * e.inv_len2).clamp(0.0, 1.0);
            if (rel - e.delta * t).norm_squared() < e.radius2 {
                return Err(Error::Singular {
                    conductor: self.layout.conductors[e.conductor].id.clone(),
                    point: *p,
                });
            }
        }
        Ok(())
    }

    /// Total field for pre-resolved currents.
    #[inline]
    pub fn field_resolved(&self, currents: &ResolvedCurrents, p: &Vec3) -> Result<Vec3> {
        self.check_clearance(p)?;
        let mut b = Vec3::zeros();
        for f in &self.filaments {
            let i = currents.0[f.channel];
            if i == 0.0 {
                continue;
            }
            b += segment_kernel(&f.start, &f.delta, p) * (i * f.fraction);
        }
        Ok(b * MU0_OVER_4PI + self.bias.b0)
    }

    /// Potential energy (J) for pre-resolved currents.
    #[inline]
    pub fn potential_resolved(&self, currents: &ResolvedCurrents, p: &Vec3) -> Result<f64> {
        let b = self.field_resolved(currents, p)?;
        let mut u = self.atom.moment() * b.norm();
        if self.include_gravity {
            u += self.atom.mass * G_EARTH * p.z;
        }
        Ok(u)
    }
}

/// Channel currents in a scene's internal order; see [`ChipScene::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedCurrents(Vec<f64>);

/// Closed-form finite-segment Biot-Savart kernel without the mu0 I / 4 pi
/// prefactor. Zero on the segment's axis.
#[inline]
fn segment_kernel(start: &Vec3, delta: &Vec3, p: &Vec3) -> Vec3 {
    let r1 = p - start;
    let r2 = r1 - delta;
    let c = delta.cross(&r1);
    let c2 = c.norm_squared();
    if c2 == 0.0 {
        return Vec3::zeros();
    }
    let s = delta.dot(&r1) / r1.norm() - delta.dot(&r2) / r2.norm();
    c * (s / c2)
}

/// Field (T) of a single filament carrying `current` amperes.
pub fn filament_field(filament: &Filament, current: f64, point: &Vec3, exclusion_radius: f64) -> Result<Vec3> {
    let delta = filament.end - filament.start;
    let rel = point - filament.start;
    let t = (rel.dot(&delta) / delta.norm_squared()).clamp(0.0, 1.0);
    if (rel - delta * t).norm() < exclusion_radius {
        return Err(Error::Singular {
            conductor: "filament".into(),
            point: *point,
        });
    }
    Ok(segment_kernel(&filament.start, &delta, point) * (MU0_OVER_4PI * current * filament.current_fraction))
}

/// A field value and its magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b: Vec3,
    pub magnitude: f64,
}

pub fn total_field(scene: &ChipScene, currents: &CurrentSet, point: &Vec3) -> Result<FieldSample> {
    let b = scene.field_resolved(&scene.resolve(currents), point)?;
    Ok(FieldSample {
        b,
        magnitude: b.norm(),
    })
}

/// U = gF mF muB |B| (+ m g z with gravity on; atoms hang below the chip so
/// moving toward -z lowers the energy).
pub fn potential(scene: &ChipScene, currents: &CurrentSet, point: &Vec3) -> Result<f64> {
    scene.potential_resolved(&scene.resolve(currents), point)
}

/// Closed-form side-guide estimates: trap height mu0 I0 / (2 pi B0y) and the
/// guide bottom field B0x.
pub fn guide_estimates(i0: f64, b0y: f64, b0x: f64) -> Result<(f64, f64)> {
    if !(i0 > 0.0) || !(b0y > 0.0) || !(b0x >= 0.0) {
        return Err(Error::Domain(format!(
            "guide estimates need I0 > 0, B0y > 0, B0x >= 0 (got {i0}, {b0y}, {b0x})"
        )));
    }
    Ok((MU0 * i0 / (2.0 * std::f64::consts::PI * b0y), b0x))
}

/// One row of a grid sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub position: Vec3,
    pub b: Vec3,
    pub magnitude: f64,
    pub potential: f64,
}

/// Evaluates field and potential on a list of points. Points inside an
/// exclusion zone are reported as errors in place.
pub fn sample_points(
    scene: &ChipScene,
    currents: &CurrentSet,
    points: &[Vec3],
) -> Vec<Result<GridPoint>> {
    let resolved = scene.resolve(currents);
    points
        .par_iter()
        .map(|p| {
            let b = scene.field_resolved(&resolved, p)?;
            let mut u = scene.atom.moment() * b.norm();
            if scene.include_gravity {
                u += scene.atom.mass * G_EARTH * p.z;
            }
            Ok(GridPoint {
                position: *p,
                b,
                magnitude: b.norm(),
                potential: u,
            })
        })
        .collect()
}
