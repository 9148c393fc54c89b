//! Body/head orientation on the unit sphere.
//!
//! An orientation is a polar angle `theta` in `[0, 180]` degrees and an
//! azimuth `phi` in `[0, 360)` degrees. Degrees are the external unit;
//! networks regress both angles normalized to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleKind {
    /// Periodic: 0 and 1 (0 and 360 degrees) are the same direction.
    Azimuthal,
    /// Linear on `[0, 180]` degrees.
    Polar,
}

impl AngleKind {
    pub fn range_deg(self) -> f64 {
        match self {
            AngleKind::Azimuthal => 360.0,
            AngleKind::Polar => 180.0,
        }
    }

    /// Error between two angles in degrees under this kind's metric.
    pub fn error_deg(self, a_deg: f64, b_deg: f64) -> Result<f64> {
        match self {
            AngleKind::Azimuthal => circular_distance_deg(a_deg, b_deg),
            AngleKind::Polar => {
                if !(a_deg.is_finite() && b_deg.is_finite()) {
                    return Err(Error::NonFinite("polar angle"));
                }
                Ok((a_deg - b_deg).abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalOrientation {
    theta_deg: f64,
    phi_deg: f64,
}

impl SphericalOrientation {
    /// Polar angles outside `[0, 180]` are rejected; azimuths are reduced mod 360.
    pub fn new(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Ok(Self {
            theta_deg: check_polar(theta_deg)?,
            phi_deg: reduce_azimuth(phi_deg)?,
        })
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi_deg
    }

    pub fn normalize(&self) -> (UnitAngle, UnitAngle) {
        normalize(self)
    }

    pub fn from_unit(theta: UnitAngle, phi: UnitAngle) -> Result<Self> {
        Self::new(theta.to_degrees(), phi.to_degrees())
    }
}

/// Angle scaled to `[0, 1]` by its kind's range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitAngle {
    value: f64,
    kind: AngleKind,
}

impl UnitAngle {
    pub fn new(value: f64, kind: AngleKind) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("unit angle"));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                what: "unit angle",
                value,
            });
        }
        Ok(Self { value, kind })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn kind(&self) -> AngleKind {
        self.kind
    }

    /// Scale back to degrees. An azimuth of exactly 1 maps to 0 degrees.
    pub fn to_degrees(&self) -> f64 {
        let deg = self.value * self.kind.range_deg();
        match self.kind {
            AngleKind::Azimuthal if deg >= 360.0 => deg - 360.0,
            _ => deg,
        }
    }
}

pub fn check_polar(theta_deg: f64) -> Result<f64> {
    if !theta_deg.is_finite() {
        return Err(Error::NonFinite("polar angle"));
    }
    if !(0.0..=180.0).contains(&theta_deg) {
        return Err(Error::OutOfRange {
            what: "polar angle (deg)",
            value: theta_deg,
        });
    }
    Ok(theta_deg)
}

/// Reduce any finite azimuth into `[0, 360)`.
pub fn reduce_azimuth(phi_deg: f64) -> Result<f64> {
    if !phi_deg.is_finite() {
        return Err(Error::NonFinite("azimuth"));
    }
    let r = phi_deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    Ok(if r >= 360.0 { 0.0 } else { r })
}

pub fn normalize(o: &SphericalOrientation) -> (UnitAngle, UnitAngle) {
    (
        UnitAngle {
            value: o.theta_deg / 180.0,
            kind: AngleKind::Polar,
        },
        UnitAngle {
            value: o.phi_deg / 360.0,
            kind: AngleKind::Azimuthal,
        },
    )
}

/// `min(|a - b|, 1 - |a - b|)` on unit-normalized azimuths.
pub fn circular_distance_unit(a: f64, b: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite("unit azimuth"));
    }
    for v in [a, b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange {
                what: "unit azimuth",
                value: v,
            });
        }
    }
    let d = (a - b).abs();
    Ok(d.min(1.0 - d))
}

/// Shortest angular separation of two azimuths, in `[0, 180]` degrees.
pub fn circular_distance_deg(a_deg: f64, b_deg: f64) -> Result<f64> {
    if !(a_deg.is_finite() && b_deg.is_finite()) {
        return Err(Error::NonFinite("azimuth"));
    }
    let d = (a_deg - b_deg).rem_euclid(360.0);
    Ok(d.min(360.0 - d).max(0.0))
}

/// Mirror about the sagittal plane: `phi -> 360 - phi`, `theta` kept.
pub fn flip_orientation(o: &SphericalOrientation) -> SphericalOrientation {
    let phi = 360.0 - o.phi_deg;
    SphericalOrientation {
        theta_deg: o.theta_deg,
        phi_deg: if phi >= 360.0 { 0.0 } else { phi },
    }
}

/// Mirror of a unit-normalized azimuth: `1 - v` taken mod 1.
pub fn flip_unit_azimuth(v: f64) -> f64 {
    let f = 1.0 - v;
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}
