//! Physical constants, unit conversions and the atomic species record.
//!
//! Everything inside the crate is SI. Gauss and micrometres only appear at the
//! scene-file and report boundaries, through the helpers below.

use crate::error::{Error, Result};

/// Vacuum permeability (T m / A).
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Bohr magneton (J / T).
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Planck constant (J s).
pub const H: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J / K).
pub const K_B: f64 = 1.380_649e-23;
/// Standard gravitational acceleration (m / s^2).
pub const G_EARTH: f64 = 9.806_65;
/// Atomic mass constant (kg).
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Mass of 87Rb (kg).
pub const M_RB87: f64 = 86.909_180_527 * AMU;
/// 87Rb D2 line vacuum wavelength (m).
pub const LAMBDA_D2: f64 = 780.241_209_686e-9;

/// The constant set as a value, for reports and manifests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub mu0: f64,
    pub mu_b: f64,
    pub hbar: f64,
    pub h: f64,
    pub k_b: f64,
    pub g_earth: f64,
    pub m_rb87: f64,
    pub lambda_d2: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    mu0: MU0,
    mu_b: MU_B,
    hbar: HBAR,
    h: H,
    k_b: K_B,
    g_earth: G_EARTH,
    m_rb87: M_RB87,
    lambda_d2: LAMBDA_D2,
};

const TESLA_PER_GAUSS: f64 = 1e-4;
const METRE_PER_MICRON: f64 = 1e-6;

#[inline]
pub fn gauss_to_tesla(g: f64) -> f64 {
    g * TESLA_PER_GAUSS
}

#[inline]
pub fn tesla_to_gauss(t: f64) -> f64 {
    t / TESLA_PER_GAUSS
}

#[inline]
pub fn um_to_m(um: f64) -> f64 {
    um * METRE_PER_MICRON
}

#[inline]
pub fn m_to_um(m: f64) -> f64 {
    m / METRE_PER_MICRON
}

/// Energy expressed as a temperature, in microkelvin.
#[inline]
pub fn joule_to_uk(e: f64) -> f64 {
    e / K_B * 1e6
}

/// Magnetic state of the trapped species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    /// gF * mF; positive for a weak-field seeker.
    pub gf_mf: f64,
    /// Mass in kg.
    pub mass: f64,
}

impl AtomState {
    /// 87Rb in |F=2, mF=2>: gF = 1/2, mF = 2.
    pub const fn rb87_f2_m2() -> Self {
        AtomState {
            gf_mf: 1.0,
            mass: M_RB87,
        }
    }

    pub fn new(gf_mf: f64, mass: f64) -> Result<Self> {
        if !(gf_mf > 0.0 && gf_mf.is_finite()) {
            return Err(Error::Domain(format!(
                "gF*mF must be positive for a weak-field seeker, got {gf_mf}"
            )));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        Ok(AtomState { gf_mf, mass })
    }

    /// Magnetic moment magnitude gF mF muB (J/T).
    #[inline]
    pub fn moment(&self) -> f64 {
        self.gf_mf * MU_B
    }
}

impl Default for AtomState {
    fn default() -> Self {
        Self::rb87_f2_m2()
    }
}

/// Photon recoil frequency h / (2 m lambda^2) in Hz.
pub fn recoil_frequency(atom: &AtomState, wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::Domain(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    Ok(H / (2.0 * atom.mass * wavelength * wavelength))
}
