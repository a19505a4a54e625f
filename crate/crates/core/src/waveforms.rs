//! Drive waveforms: conveyor modulation currents, the H2 merge current and
//! phase profiles phi(t).
//!
//! Phase profiles are strategies behind [`PhaseProfile`]; [`ProfileRegistry`]
//! builds them by name from a [`ProfileSpec`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::CurrentSet;

/// (I_M1, I_M2) = A (cos phi, -sin phi).
pub fn conveyor_currents(phase: f64, amplitude: f64) -> (f64, f64) {
    let (s, c) = phase.sin_cos();
    (amplitude * c, -amplitude * s)
}

/// Coefficients of I_H2(phi) = c0 + c1 sin(phi + p1) + c2 sin(2 phi + p2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H2Coefficients {
    pub c0: f64,
    pub c1: f64,
    pub phi1: f64,
    /// Signed; the published merge waveform subtracts its second harmonic.
    pub c2: f64,
    pub phi2: f64,
}

impl Default for H2Coefficients {
    fn default() -> Self {
        H2Coefficients {
            c0: 0.462,
            c1: 0.255,
            phi1: 0.493,
            c2: -0.088,
            phi2: -1.482,
        }
    }
}

pub fn h2_current(phase: f64, coeffs: &H2Coefficients) -> f64 {
    coeffs.c0 + coeffs.c1 * (phase + coeffs.phi1).sin() + coeffs.c2 * (2.0 * phase + coeffs.phi2).sin()
}

/// Constant and modulated channel settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    pub i0: f64,
    pub im_amplitude: f64,
    pub h2: H2Coefficients,
    pub h2_enabled: bool,
}

impl DriveConfig {
    pub fn new(i0: f64, im_amplitude: f64, h2: H2Coefficients, h2_enabled: bool) -> Result<Self> {
        if !(im_amplitude >= 0.0) || !i0.is_finite() {
            return Err(Error::Domain(format!(
                "modulation amplitude must be non-negative (got {im_amplitude})"
            )));
        }
        Ok(DriveConfig {
            i0,
            im_amplitude,
            h2,
            h2_enabled,
        })
    }

    /// The conveyor drive: I0 = 2 A, |I_M| = 1 A, H2 off.
    pub fn conveyor() -> Self {
        DriveConfig {
            i0: 2.0,
            im_amplitude: 1.0,
            h2: H2Coefficients::default(),
            h2_enabled: false,
        }
    }

    /// The conveyor drive with the merge waveform on H2.
    pub fn merge() -> Self {
        DriveConfig {
            h2_enabled: true,
            ..Self::conveyor()
        }
    }

    pub fn currents_at(&self, phase: f64) -> CurrentSet {
        let (im1, im2) = conveyor_currents(phase, self.im_amplitude);
        let ih2 = if self.h2_enabled {
            h2_current(phase, &self.h2)
        } else {
            0.0
        };
        CurrentSet::new(self.i0, im1, im2, ih2)
    }
}

/// A phase schedule phi(t) on [0, duration].
pub trait PhaseProfile: Debug + Send + Sync {
    fn kind(&self) -> &'static str;
    fn duration(&self) -> f64;
    /// phi(t) without the domain check.
    fn phase_unchecked(&self, t: f64) -> f64;
    /// Largest d(phi)/dt over the schedule.
    fn max_rate(&self) -> f64;
    /// Constant rate, for schedules that have one.
    fn steady_rate(&self) -> Option<f64> {
        None
    }
    fn spec(&self) -> ProfileSpec;
}

/// Phase at time t, rejecting times outside [0, duration].
pub fn phase_at(profile: &dyn PhaseProfile, t: f64) -> Result<f64> {
    let d = profile.duration();
    // allow one ulp-scale overshoot from accumulated time steps
    if !(t >= 0.0 && t <= d * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "t = {t} s is outside the profile's [0, {d}] s"
        )));
    }
    Ok(profile.phase_unchecked(t.min(d)))
}

/// Speed of the well chain: one modulation period per 2 pi of phase.
pub fn max_well_velocity(profile: &dyn PhaseProfile, modulation_period: f64) -> f64 {
    modulation_period / (2.0 * PI) * profile.max_rate()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProfile {
    pub omega: f64,
    pub duration: f64,
}

impl PhaseProfile for LinearProfile {
    fn kind(&self) -> &'static str {
        "linear"
    }
    fn duration(&self) -> f64 {
        self.duration
    }
    fn phase_unchecked(&self, t: f64) -> f64 {
        self.omega * t
    }
    fn max_rate(&self) -> f64 {
        self.omega
    }
    fn steady_rate(&self) -> Option<f64> {
        Some(self.omega)
    }
    fn spec(&self) -> ProfileSpec {
        ProfileSpec {
            kind: "linear".into(),
            duration_s: self.duration,
            omega_rad_s: Some(self.omega),
            ..ProfileSpec::default()
        }
    }
}

/// total_phase * s(t / duration) with the quintic ramp s(u) = 6u^5 - 15u^4 + 10u^3:
/// zero rate and zero acceleration at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothstepProfile {
    pub total_phase: f64,
    pub duration: f64,
}

impl SmoothstepProfile {
    /// Ramp that moves the chain by `distance` with peak speed `v_max`.
    pub fn for_transport(distance: f64, v_max: f64, modulation_period: f64) -> Result<Self> {
        if !(v_max > 0.0 && distance > 0.0 && modulation_period > 0.0) {
            return Err(Error::Domain(format!(
                "transport needs positive distance and speed (got {distance} m, {v_max} m/s)"
            )));
        }
        Ok(SmoothstepProfile {
            total_phase: 2.0 * PI * distance / modulation_period,
            duration: 15.0 / 8.0 * distance / v_max,
        })
    }
}

impl PhaseProfile for SmoothstepProfile {
    fn kind(&self) -> &'static str {
        "smoothstep"
    }
    fn duration(&self) -> f64 {
        self.duration
    }
    fn phase_unchecked(&self, t: f64) -> f64 {
        let u = (t / self.duration).clamp(0.0, 1.0);
        self.total_phase * u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
    fn max_rate(&self) -> f64 {
        // s'(1/2) = 15/8
        15.0 / 8.0 * self.total_phase.abs() / self.duration
    }
    fn spec(&self) -> ProfileSpec {
        ProfileSpec {
            kind: "smoothstep".into(),
            duration_s: self.duration,
            total_phase_rad: Some(self.total_phase),
            ..ProfileSpec::default()
        }
    }
}

/// Monotone cubic (Fritsch-Carlson) interpolation through (t, phi) knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseProfile {
    knots: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl PiecewiseProfile {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Domain("piecewise profile needs at least two knots".into()));
        }
        if knots[0].0 != 0.0 {
            return Err(Error::Domain("piecewise profile must start at t = 0".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain("knot times must increase strictly".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Domain("knot phases must be non-decreasing".into()));
            }
        }
        let n = knots.len();
        let secant: Vec<f64> = knots
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        let mut m = vec![0.0; n];
        m[0] = secant[0];
        m[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            m[i] = if secant[i - 1] * secant[i] <= 0.0 {
                0.0
            } else {
                0.5 * (secant[i - 1] + secant[i])
            };
        }
        for (i, &d) in secant.iter().enumerate() {
            if d == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / d;
            let b = m[i + 1] / d;
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                m[i] = tau * a * d;
                m[i + 1] = tau * b * d;
            }
        }
        Ok(PiecewiseProfile { knots, slopes: m })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }
}

impl PhaseProfile for PiecewiseProfile {
    fn kind(&self) -> &'static str {
        "piecewise"
    }
    fn duration(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }
    fn phase_unchecked(&self, t: f64) -> f64 {
        let k = &self.knots;
        let i = match k.iter().rposition(|&(tk, _)| tk <= t) {
            Some(i) if i + 1 < k.len() => i,
            Some(_) => return k[k.len() - 1].1,
            None => return k[0].1,
        };
        let (t0, p0) = k[i];
        let (t1, p1) = k[i + 1];
        let h = t1 - t0;
        let u = (t - t0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * p0 + h10 * h * self.slopes[i] + h01 * p1 + h11 * h * self.slopes[i + 1]
    }
    fn max_rate(&self) -> f64 {
        let d = self.duration();
        let n = 10_000;
        let dt = d / n as f64;
        (0..n)
            .map(|i| {
                let t0 = i as f64 * dt;
                (self.phase_unchecked(t0 + dt) - self.phase_unchecked(t0)) / dt
            })
            .fold(0.0, f64::max)
    }
    fn spec(&self) -> ProfileSpec {
        ProfileSpec {
            kind: "piecewise".into(),
            duration_s: self.duration(),
            knots: Some(self.knots.iter().map(|&(t, p)| [t, p]).collect()),
            ..ProfileSpec::default()
        }
    }
}

/// Serializable description of a profile, as found in scene files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub kind: String,
    #[serde(default)]
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_phase_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<[f64; 2]>>,
}

type ProfileBuilder = fn(&ProfileSpec) -> Result<Box<dyn PhaseProfile>>;

/// Name -> constructor table for phase profiles.
pub struct ProfileRegistry {
    builders: BTreeMap<&'static str, ProfileBuilder>,
}

impl ProfileRegistry {
    pub fn empty() -> Self {
        ProfileRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, builder: ProfileBuilder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, spec: &ProfileSpec) -> Result<Box<dyn PhaseProfile>> {
        let builder = self.builders.get(spec.kind.as_str()).ok_or_else(|| {
            Error::Config(format!(
                "unknown profile kind `{}` (known: {})",
                spec.kind,
                self.names().join(", ")
            ))
        })?;
        builder(spec)
    }
}

fn positive_duration(spec: &ProfileSpec) -> Result<f64> {
    if spec.duration_s > 0.0 && spec.duration_s.is_finite() {
        Ok(spec.duration_s)
    } else {
        Err(Error::Config(format!(
            "profile `{}` needs duration_s > 0",
            spec.kind
        )))
    }
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        let mut r = ProfileRegistry::empty();
        r.register("linear", |spec| {
            let omega = spec
                .omega_rad_s
                .ok_or_else(|| Error::Config("linear profile needs omega_rad_s".into()))?;
            if !(omega >= 0.0) {
                return Err(Error::Config("linear profile needs omega_rad_s >= 0".into()));
            }
            Ok(Box::new(LinearProfile {
                omega,
                duration: positive_duration(spec)?,
            }))
        });
        r.register("smoothstep", |spec| {
            let total_phase = spec
                .total_phase_rad
                .ok_or_else(|| Error::Config("smoothstep profile needs total_phase_rad".into()))?;
            if !(total_phase >= 0.0) {
                return Err(Error::Config("smoothstep needs total_phase_rad >= 0".into()));
            }
            Ok(Box::new(SmoothstepProfile {
                total_phase,
                duration: positive_duration(spec)?,
            }))
        });
        r.register("piecewise", |spec| {
            let knots = spec
                .knots
                .as_ref()
                .ok_or_else(|| Error::Config("piecewise profile needs knots".into()))?;
            Ok(Box::new(PiecewiseProfile::new(
                knots.iter().map(|k| (k[0], k[1])).collect(),
            )?))
        });
        r
    }
}

/// One sample of the waveform table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformRow {
    pub t: f64,
    pub phase: f64,
    pub i0: f64,
    pub im1: f64,
    pub im2: f64,
    pub ih2: f64,
}

/// Samples the drive on `n` evenly spaced times covering the profile.
pub fn waveform_table(drive: &DriveConfig, profile: &dyn PhaseProfile, n: usize) -> Result<Vec<WaveformRow>> {
    if n < 2 {
        return Err(Error::Domain("need at least two waveform samples".into()));
    }
    let d = profile.duration();
    (0..n)
        .map(|i| {
            let t = d * i as f64 / (n - 1) as f64;
            let phase = phase_at(profile, t)?;
            let c = drive.currents_at(phase);
            Ok(WaveformRow {
                t,
                phase,
                i0: c.i0,
                im1: c.im1,
                im2: c.im2,
                ih2: c.ih2,
            })
        })
        .collect()
}
