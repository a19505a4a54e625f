//! Conductor layouts: named conductors made of finite-width ribbon segments in
//! the chip plane z = 0, and their thin-filament decomposition.
//!
//! Chip frame: conductors lie in z = 0, atoms hang below the chip at z < 0 and
//! gravity points along -z.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub const PAPER_WIRE_WIDTH: f64 = 50e-6;
pub const PAPER_WIRE_THICKNESS: f64 = 7e-6;
pub const PAPER_CENTER_WIRE_LENGTH: f64 = 5.5e-3;

/// Modulation period obtained from `calibrate period` against a 2.5 G mean
/// well depth under the conveyor drive (I0 = 2 A, |I_M| = 1 A, bias 7 G / 16 G).
pub const DEFAULT_MODULATION_PERIOD: f64 = 405.5e-6;
pub const DEFAULT_N_PERIODS: usize = 6;
/// Distance from the last modulation wire to the H2 wire.
pub const DEFAULT_H2_OFFSET: f64 = 250e-6;
pub const DEFAULT_H2_OVERHANG: f64 = 100e-6;
/// Length (along y) of the modulation and H2 crossings.
pub const DEFAULT_CROSSING_LENGTH: f64 = 2.0e-3;

/// Direction of positive I_H2 in the chip frame.
///
/// The stationary trap needs the H2 field to oppose the +x bias beneath the
/// wire. In a right-handed frame with the atoms at z < 0 that means current
/// along +y; this corresponds to "-y" in a frame whose vertical axis points
/// from the chip toward the atoms.
pub const H2_DIRECTION: Vec3 = Vec3::new(0.0, 1.0, 0.0);

/// Waveform channel that drives a conductor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    I0,
    M1,
    M2,
    H2,
    /// A named constant current from `CurrentSet::extra`.
    Constant(String),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::I0 => write!(f, "I0"),
            Channel::M1 => write!(f, "M1"),
            Channel::M2 => write!(f, "M2"),
            Channel::H2 => write!(f, "H2"),
            Channel::Constant(name) => write!(f, "const:{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RibbonSegment {
    pub start: Vec3,
    pub end: Vec3,
    pub width: f64,
    /// Stored for reference; the field model is single-plane.
    pub thickness: f64,
    pub conductor_id: String,
}

impl RibbonSegment {
    pub fn new(
        start: Vec3,
        end: Vec3,
        width: f64,
        thickness: f64,
        conductor_id: impl Into<String>,
    ) -> Result<Self> {
        let id = conductor_id.into();
        if (end - start).norm() == 0.0 {
            return Err(Error::Domain(format!("segment of `{id}` has zero length")));
        }
        if !(width >= 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!("segment of `{id}` has width {width}")));
        }
        if start.z != 0.0 || end.z != 0.0 {
            return Err(Error::Domain(format!(
                "segment of `{id}` leaves the chip plane z = 0"
            )));
        }
        Ok(RibbonSegment {
            start,
            end,
            width,
            thickness,
            conductor_id: id,
        })
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> Vec3 {
        (self.end - self.start).normalize()
    }

    /// Distance from `p` to the segment's centre line.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let d = self.end - self.start;
        let t = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        (p - (self.start + d * t)).norm()
    }

    /// Radius around the centre line where the filament model is not trusted:
    /// half the ribbon width plus 1 um.
    pub fn exclusion_radius(&self) -> f64 {
        0.5 * self.width + 1e-6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conductor {
    pub id: String,
    pub segments: Vec<RibbonSegment>,
    pub channel: Channel,
}

impl Conductor {
    pub fn new(id: impl Into<String>, segments: Vec<RibbonSegment>, channel: Channel) -> Result<Self> {
        let id = id.into();
        if segments.is_empty() {
            return Err(Error::Domain(format!("conductor `{id}` has no segments")));
        }
        for pair in segments.windows(2) {
            if (pair[0].end - pair[1].start).norm() > 1e-12 {
                return Err(Error::Domain(format!(
                    "conductor `{id}` is not a connected path"
                )));
            }
        }
        Ok(Conductor {
            id,
            segments,
            channel,
        })
    }

    /// A straight single-segment conductor.
    pub fn straight(
        id: impl Into<String>,
        start: Vec3,
        end: Vec3,
        width: f64,
        thickness: f64,
        channel: Channel,
    ) -> Result<Self> {
        let id = id.into();
        let seg = RibbonSegment::new(start, end, width, thickness, id.clone())?;
        Conductor::new(id, vec![seg], channel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChipLayout {
    pub conductors: Vec<Conductor>,
    pub center_wire_length: f64,
    pub modulation_period: f64,
}

impl ChipLayout {
    /// Checks the channel-binding and period invariants.
    pub fn new(
        conductors: Vec<Conductor>,
        center_wire_length: f64,
        modulation_period: f64,
    ) -> Result<Self> {
        if !(modulation_period > 0.0 && modulation_period.is_finite()) {
            return Err(Error::Domain(format!(
                "modulation period must be positive, got {modulation_period}"
            )));
        }
        let count = |c: Channel| conductors.iter().filter(|k| k.channel == c).count();
        if count(Channel::I0) != 1 {
            return Err(Error::Domain("layout needs exactly one I0 conductor".into()));
        }
        if count(Channel::H2) != 1 {
            return Err(Error::Domain("layout needs exactly one H2 conductor".into()));
        }
        if count(Channel::M1) == 0 || count(Channel::M2) == 0 {
            return Err(Error::Domain(
                "layout needs at least one M1 and one M2 conductor".into(),
            ));
        }
        Ok(ChipLayout {
            conductors,
            center_wire_length,
            modulation_period,
        })
    }

    pub fn segments(&self) -> impl Iterator<Item = (&Conductor, &RibbonSegment)> {
        self.conductors
            .iter()
            .flat_map(|c| c.segments.iter().map(move |s| (c, s)))
    }

    pub fn conductor(&self, id: &str) -> Option<&Conductor> {
        self.conductors.iter().find(|c| c.id == id)
    }

    fn channel_crossings(&self, channel: &Channel) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .conductors
            .iter()
            .filter(|c| &c.channel == channel)
            .flat_map(|c| c.segments.iter())
            .filter(|s| (s.end.x - s.start.x).abs() < 1e-12)
            .map(|s| (s.start.x, (s.end.y - s.start.y).signum()))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// x positions of all modulation-wire crossings, sorted.
    pub fn modulation_wire_x(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self
            .channel_crossings(&Channel::M1)
            .into_iter()
            .chain(self.channel_crossings(&Channel::M2))
            .map(|(x, _)| x)
            .collect();
        xs.sort_by(f64::total_cmp);
        xs
    }

    /// Crossings of M1 wires whose positive current runs along +y. With the
    /// conveyor drive at phase 0 the wells sit beneath these.
    pub fn well_seed_x(&self) -> Vec<f64> {
        self.channel_crossings(&Channel::M1)
            .into_iter()
            .filter(|&(_, dir)| dir > 0.0)
            .map(|(x, _)| x)
            .collect()
    }

    /// x position of the H2 crossing.
    pub fn h2_x(&self) -> Option<f64> {
        self.channel_crossings(&Channel::H2).first().map(|&(x, _)| x)
    }

    /// Smallest ribbon width in the layout.
    pub fn min_width(&self) -> f64 {
        self.segments()
            .map(|(_, s)| s.width)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Parameters of the conveyor chip pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperLayoutParams {
    pub modulation_period: f64,
    pub n_periods: usize,
    pub h2_offset: f64,
    /// Length of each crossing wire along y, centred on y = 0.
    pub crossing_length: f64,
    pub center_wire_length: f64,
    pub width: f64,
    pub thickness: f64,
    /// Terminate the outermost crossing of each modulation channel at the
    /// centre line. An abruptly truncated alternating array leaves an
    /// unbalanced field of half a wire at its ends; half-length end wires
    /// cancel that term, which keeps |B| away from zero at the pattern edge.
    pub half_end_crossings: bool,
    /// How far H2 extends past the centre line; it ends at +crossing_length/2
    /// on the other side. A full-length H2 crossing makes the stationary trap
    /// far deeper and stiffer than the arriving conveyor well, so atoms fall
    /// into it on merging; the default matches the two traps at phase 0.
    pub h2_overhang: f64,
}

impl Default for PaperLayoutParams {
    fn default() -> Self {
        PaperLayoutParams {
            modulation_period: DEFAULT_MODULATION_PERIOD,
            n_periods: DEFAULT_N_PERIODS,
            h2_offset: DEFAULT_H2_OFFSET,
            crossing_length: DEFAULT_CROSSING_LENGTH,
            center_wire_length: PAPER_CENTER_WIRE_LENGTH,
            width: PAPER_WIRE_WIDTH,
            thickness: PAPER_WIRE_THICKNESS,
            half_end_crossings: true,
            h2_overhang: DEFAULT_H2_OVERHANG,
        }
    }
}

impl PaperLayoutParams {
    /// x of the first modulation wire. The modulation pattern together with the
    /// H2 wire is centred on the centre wire.
    pub fn first_wire_x(&self) -> f64 {
        let span = (4 * self.n_periods - 1) as f64 * self.modulation_period / 4.0;
        -0.5 * (span + self.h2_offset)
    }

    pub fn build(&self) -> Result<ChipLayout> {
        let p = self.modulation_period;
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Domain(format!(
                "modulation period must be positive, got {p}"
            )));
        }
        if self.n_periods == 0 {
            return Err(Error::Domain("need at least one modulation period".into()));
        }
        if !(self.h2_offset > 0.0) {
            return Err(Error::Domain("H2 offset must be positive".into()));
        }
        if !(self.h2_overhang >= 0.0 && self.h2_overhang < 0.5 * self.crossing_length) {
            return Err(Error::Domain(format!(
                "H2 overhang must lie in [0, crossing_length/2), got {} m",
                self.h2_overhang
            )));
        }
        if !(self.crossing_length > 0.0 && self.center_wire_length > 0.0) {
            return Err(Error::Domain("wire lengths must be positive".into()));
        }
        let (w, th) = (self.width, self.thickness);
        let half_l = 0.5 * self.center_wire_length;
        let half_c = 0.5 * self.crossing_length;

        // Current along -x so that a +y bias is cancelled below the chip.
        let mut conductors = vec![Conductor::straight(
            "center",
            Vec3::new(half_l, 0.0, 0.0),
            Vec3::new(-half_l, 0.0, 0.0),
            w,
            th,
            Channel::I0,
        )?];

        // Pattern repeats every four crossings: M1(+y), M2(-y), M1(-y), M2(+y).
        // With (I_M1, I_M2) = A (cos phi, -sin phi) the crossing currents along
        // +y are A cos(phi - k pi/2), a wave travelling toward +x.
        let x0 = self.first_wire_x();
        let cycle = [
            (Channel::M1, 1.0),
            (Channel::M2, -1.0),
            (Channel::M1, -1.0),
            (Channel::M2, 1.0),
        ];
        let n_cross = 4 * self.n_periods;
        for k in 0..n_cross {
            let x = x0 + k as f64 * p / 4.0;
            let (channel, dir) = cycle[k % 4].clone();
            let id = format!("{}_{k}", channel.to_string().to_lowercase());
            let outermost = k < 2 || k + 2 >= n_cross;
            let y_start = if self.half_end_crossings && outermost {
                0.0
            } else {
                -dir * half_c
            };
            conductors.push(Conductor::straight(
                id,
                Vec3::new(x, y_start, 0.0),
                Vec3::new(x, dir * half_c, 0.0),
                w,
                th,
                channel,
            )?);
        }

        let x_last = x0 + (4 * self.n_periods - 1) as f64 * p / 4.0;
        let xh = x_last + self.h2_offset;
        let h2_back = self.h2_overhang;
        conductors.push(Conductor::straight(
            "h2",
            Vec3::new(xh, 0.0, 0.0) - H2_DIRECTION * h2_back,
            Vec3::new(xh, 0.0, 0.0) + H2_DIRECTION * half_c,
            w,
            th,
            Channel::H2,
        )?);

        ChipLayout::new(conductors, self.center_wire_length, p)
    }
}

/// The conveyor chip pattern with default spacing parameters.
pub fn paper_layout(modulation_period: f64, n_periods: usize) -> Result<ChipLayout> {
    PaperLayoutParams {
        modulation_period,
        n_periods,
        ..PaperLayoutParams::default()
    }
    .build()
}

/// A thin wire carrying a share of its ribbon's current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filament {
    pub start: Vec3,
    pub end: Vec3,
    pub current_fraction: f64,
}

/// Splits a ribbon into `n` evenly spaced parallel filaments, each carrying 1/n.
pub fn decompose_ribbon(segment: &RibbonSegment, n_filaments: usize) -> Result<Vec<Filament>> {
    if n_filaments == 0 {
        return Err(Error::Domain("need at least one filament".into()));
    }
    let across = Vec3::z().cross(&segment.direction());
    let n = n_filaments as f64;
    let frac = 1.0 / n;
    Ok((0..n_filaments)
        .map(|i| {
            let off = segment.width * ((i as f64 + 0.5) / n - 0.5);
            Filament {
                start: segment.start + across * off,
                end: segment.end + across * off,
                current_fraction: frac,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ribbon(width: f64) -> RibbonSegment {
        RibbonSegment::new(
            Vec3::new(-1e-3, 0.0, 0.0),
            Vec3::new(1e-3, 0.0, 0.0),
            width,
            7e-6,
            "r",
        )
        .unwrap()
    }

    #[test]
    fn single_filament_is_axis() {
        let f = decompose_ribbon(&ribbon(50e-6), 1).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].current_fraction, 1.0);
        assert_eq!(f[0].start, Vec3::new(-1e-3, 0.0, 0.0));
    }

    #[test]
    fn two_filaments_at_quarter_width() {
        let w = 50e-6;
        let f = decompose_ribbon(&ribbon(w), 2).unwrap();
        let mut ys: Vec<f64> = f.iter().map(|f| f.start.y).collect();
        ys.sort_by(f64::total_cmp);
        assert!((ys[0] + w / 4.0).abs() < 1e-18);
        assert!((ys[1] - w / 4.0).abs() < 1e-18);
    }

    #[test]
    fn zero_filaments_rejected() {
        assert!(decompose_ribbon(&ribbon(50e-6), 0).is_err());
    }

    #[test]
    fn degenerate_segment_rejected() {
        let p = Vec3::new(1e-3, 0.0, 0.0);
        assert!(RibbonSegment::new(p, p, 50e-6, 7e-6, "x").is_err());
        let off = Vec3::new(0.0, 0.0, 1e-6);
        assert!(RibbonSegment::new(p, p + Vec3::x() * 1e-3 + off, 50e-6, 7e-6, "x").is_err());
    }

    #[test]
    fn disconnected_conductor_rejected() {
        let a = RibbonSegment::new(Vec3::zeros(), Vec3::x() * 1e-3, 1e-5, 0.0, "c").unwrap();
        let b = RibbonSegment::new(Vec3::x() * 2e-3, Vec3::x() * 3e-3, 1e-5, 0.0, "c").unwrap();
        assert!(Conductor::new("c", vec![a.clone(), b], Channel::I0).is_err());
        let c = RibbonSegment::new(Vec3::x() * 1e-3, Vec3::y() * 1e-3, 1e-5, 0.0, "c").unwrap();
        assert!(Conductor::new("c", vec![a, c], Channel::I0).is_ok());
    }

    #[test]
    fn paper_layout_shape() {
        let p = 500e-6;
        let layout = paper_layout(p, 4).unwrap();
        let centre = layout.conductor("center").unwrap();
        let s = &centre.segments[0];
        assert!((s.start.x.abs() - 2.75e-3).abs() < 1e-15);
        assert!((s.end.x.abs() - 2.75e-3).abs() < 1e-15);
        assert!(layout.segments().all(|(_, s)| s.width == 50e-6 && s.thickness == 7e-6));

        let xs = layout.modulation_wire_x();
        assert_eq!(xs.len(), 16);
        for pair in xs.windows(2) {
            assert!((pair[1] - pair[0] - p / 4.0).abs() < 1e-15);
        }
        assert!((xs[15] - xs[0] + p / 4.0 - 4.0 * p).abs() < 1e-15);
        assert_eq!(layout.well_seed_x().len(), 4);
        assert!(layout.h2_x().unwrap() > xs[15]);
    }

    #[test]
    fn paper_layout_rejects_bad_period() {
        assert!(paper_layout(0.0, 4).is_err());
        assert!(paper_layout(-1e-4, 4).is_err());
        assert!(paper_layout(5e-4, 0).is_err());
    }

    #[test]
    fn paper_layout_mirror_symmetry() {
        let layout = paper_layout(520e-6, 5).unwrap();
        let xs = layout.modulation_wire_x();
        let mid = 0.5 * (xs[0] + xs[xs.len() - 1]);
        let mut mirrored: Vec<f64> = xs.iter().map(|x| 2.0 * mid - x).collect();
        mirrored.sort_by(f64::total_cmp);
        for (a, b) in xs.iter().zip(&mirrored) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_channel_invariants() {
        let layout = paper_layout(5e-4, 2).unwrap();
        let without_h2: Vec<Conductor> = layout
            .conductors
            .iter()
            .filter(|c| c.channel != Channel::H2)
            .cloned()
            .collect();
        assert!(ChipLayout::new(without_h2, 5.5e-3, 5e-4).is_err());
        assert!(ChipLayout::new(layout.conductors.clone(), 5.5e-3, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_preserves_current(n in 1usize..200, w in 0.0f64..1e-4) {
            let f = decompose_ribbon(&ribbon(w), n).unwrap();
            let total: f64 = f.iter().map(|f| f.current_fraction).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let mean_y: f64 = f.iter().map(|f| f.start.y).sum::<f64>() / n as f64;
            prop_assert!(mean_y.abs() < 1e-18);
        }
    }
}
