//! Physical quantities of a holographic grating and the neutron beam, and the
//! closed-form kinematic relations the solvers build on.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{ensure_finite, Error, Result};

/// One unslanted holographic grating with refractive index
/// `n(x) = mean_index + index_modulation * cos(2 pi x / spacing)`.
///
/// The tilt rotates the grating about an axis parallel to the grating vector,
/// which lengthens the path through the film without changing the in-plane
/// diffraction geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grating {
    /// Grating spacing Λ (m).
    pub spacing: f64,
    /// Physical film thickness d (m).
    pub thickness: f64,
    /// Refractive-index modulation amplitude Δn.
    pub index_modulation: f64,
    /// Mean refractive index n̄.
    pub mean_index: f64,
    /// Tilt ζ about the grating-vector axis (rad).
    pub tilt: f64,
}

impl Grating {
    /// Untilted grating with `mean_index = 1`.
    pub fn new(spacing: f64, thickness: f64, index_modulation: f64) -> Result<Self> {
        Self {
            spacing,
            thickness,
            index_modulation,
            mean_index: 1.0,
            tilt: 0.0,
        }
        .validated()
    }

    pub fn with_tilt(self, tilt: f64) -> Result<Self> {
        Self { tilt, ..self }.validated()
    }

    pub fn with_mean_index(self, mean_index: f64) -> Result<Self> {
        Self { mean_index, ..self }.validated()
    }

    pub fn with_index_modulation(self, index_modulation: f64) -> Result<Self> {
        Self {
            index_modulation,
            ..self
        }
        .validated()
    }

    pub fn with_thickness(self, thickness: f64) -> Result<Self> {
        Self { thickness, ..self }.validated()
    }

    /// Checks every field invariant and returns the grating unchanged.
    pub fn validated(self) -> Result<Self> {
        for (name, v) in [
            ("spacing", self.spacing),
            ("thickness", self.thickness),
            ("index_modulation", self.index_modulation),
            ("mean_index", self.mean_index),
            ("tilt", self.tilt),
        ] {
            ensure_finite(name, v)?;
        }
        if self.spacing <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "grating spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.thickness <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "grating thickness must be positive, got {}",
                self.thickness
            )));
        }
        if self.index_modulation < 0.0 {
            return Err(Error::InvalidInput(format!(
                "index modulation must be non-negative, got {}",
                self.index_modulation
            )));
        }
        if self.mean_index <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "mean index must be positive, got {}",
                self.mean_index
            )));
        }
        if self.tilt.abs() >= FRAC_PI_2 {
            return Err(Error::Domain(format!(
                "tilt |{}| rad must stay below pi/2",
                self.tilt
            )));
        }
        Ok(self)
    }

    /// Path length through the tilted film, `d / cos ζ`.
    pub fn effective_thickness(&self) -> f64 {
        self.thickness / self.tilt.cos()
    }

    /// Grating vector magnitude `2π/Λ` (1/m).
    pub fn grating_vector(&self) -> f64 {
        2.0 * PI / self.spacing
    }
}

/// Coherent scattering-length-density modulation of the recorded hologram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModulation {
    /// Coherent nuclear scattering length b_c (m), when known separately.
    pub scattering_length: Option<f64>,
    /// Number-density modulation Δρ (1/m³), when known separately.
    pub density_modulation: Option<f64>,
    /// Product b_c Δρ (1/m²).
    pub sld_modulation: f64,
}

impl MaterialModulation {
    pub fn from_parts(scattering_length: f64, density_modulation: f64) -> Result<Self> {
        ensure_finite("scattering_length", scattering_length)?;
        ensure_finite("density_modulation", density_modulation)?;
        Ok(Self {
            scattering_length: Some(scattering_length),
            density_modulation: Some(density_modulation),
            sld_modulation: scattering_length * density_modulation,
        })
    }

    /// A negative value encodes contrast inversion and is allowed.
    pub fn from_sld(sld_modulation: f64) -> Result<Self> {
        ensure_finite("sld_modulation", sld_modulation)?;
        Ok(Self {
            scattering_length: None,
            density_modulation: None,
            sld_modulation,
        })
    }
}

/// Incident neutron beam statistics. Spread and divergence are FWHM values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    /// Central wavelength λ (m).
    pub wavelength: f64,
    /// Relative wavelength spread Δλ/λ (FWHM).
    pub relative_spread: f64,
    /// Angular divergence (FWHM, rad).
    pub divergence: f64,
}

impl Beam {
    pub fn new(wavelength: f64, relative_spread: f64, divergence: f64) -> Result<Self> {
        ensure_finite("wavelength", wavelength)?;
        ensure_finite("relative_spread", relative_spread)?;
        ensure_finite("divergence", divergence)?;
        if wavelength <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if !(0.0..1.0).contains(&relative_spread) {
            return Err(Error::InvalidInput(format!(
                "relative spread must lie in [0, 1), got {relative_spread}"
            )));
        }
        if divergence < 0.0 {
            return Err(Error::InvalidInput(format!(
                "divergence must be non-negative, got {divergence}"
            )));
        }
        Ok(Self {
            wavelength,
            relative_spread,
            divergence,
        })
    }

    /// Perfectly monochromatic, collimated beam.
    pub fn monochromatic(wavelength: f64) -> Result<Self> {
        Self::new(wavelength, 0.0, 0.0)
    }
}

/// Bragg angle `arcsin(λ / 2Λ)` at which order +1 is phase matched.
pub fn bragg_angle(wavelength: f64, spacing: f64) -> Result<f64> {
    ensure_finite("wavelength", wavelength)?;
    ensure_finite("spacing", spacing)?;
    if wavelength <= 0.0 || spacing <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "wavelength and spacing must be positive, got {wavelength} and {spacing}"
        )));
    }
    if wavelength >= 2.0 * spacing {
        return Err(Error::NoPropagatingOrder {
            wavelength,
            spacing,
        });
    }
    Ok((wavelength / (2.0 * spacing)).asin())
}

/// Path length `d / cos ζ` through a film tilted by ζ about the grating vector.
pub fn effective_thickness(thickness: f64, tilt: f64) -> Result<f64> {
    ensure_finite("thickness", thickness)?;
    ensure_finite("tilt", tilt)?;
    if tilt.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "tilt |{tilt}| rad must stay below pi/2"
        )));
    }
    Ok(thickness / tilt.cos())
}

/// Neutron refractive-index modulation `Δn = λ² b_cΔρ / 2π`.
pub fn index_modulation(wavelength: f64, material: &MaterialModulation) -> Result<f64> {
    ensure_finite("wavelength", wavelength)?;
    ensure_finite("sld_modulation", material.sld_modulation)?;
    if wavelength <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    Ok(wavelength * wavelength * material.sld_modulation / (2.0 * PI))
}

/// Klein–Cook parameter `Q = 2πλ d_eff / (n̄ Λ²)`.
///
/// Q ≳ 10 is the two-wave (Bragg) regime, Q ≲ 0.1 the thin-grating regime.
pub fn klein_cook(wavelength: f64, effective_thickness: f64, spacing: f64, mean_index: f64) -> Result<f64> {
    for (name, v) in [
        ("wavelength", wavelength),
        ("effective_thickness", effective_thickness),
        ("spacing", spacing),
        ("mean_index", mean_index),
    ] {
        ensure_finite(name, v)?;
        if v <= 0.0 {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(2.0 * PI * wavelength * effective_thickness / (mean_index * spacing * spacing))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NM: f64 = 1e-9;
    const UM: f64 = 1e-6;

    #[test]
    fn bragg_angle_examples() {
        let a = bragg_angle(1.7 * NM, 1.0 * UM).unwrap();
        assert!((a - 0.850e-3).abs() < 5e-7, "{a}");
        let a = bragg_angle(8.0 * NM, 0.5 * UM).unwrap();
        assert!((a - 8.0e-3).abs() < 1e-6, "{a}");
        let a = bragg_angle(1e-18, 1.0 * UM).unwrap();
        assert!(a < 1e-11);
    }

    #[test]
    fn bragg_angle_without_propagating_order() {
        assert!(matches!(
            bragg_angle(2.0 * UM, 1.0 * UM),
            Err(Error::NoPropagatingOrder { .. })
        ));
        assert!(bragg_angle(0.0, 1.0 * UM).is_err());
    }

    #[test]
    fn effective_thickness_examples() {
        assert_eq!(effective_thickness(91.0 * UM, 0.0).unwrap(), 91.0 * UM);
        let d = effective_thickness(91.0 * UM, 56f64.to_radians()).unwrap();
        assert!((d / UM - 162.7).abs() < 0.05, "{}", d / UM);
        let d = effective_thickness(100.0 * UM, 60f64.to_radians()).unwrap();
        assert!((d / UM - 200.0).abs() < 1e-9);
        assert!(matches!(
            effective_thickness(1.0, FRAC_PI_2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn index_modulation_examples() {
        let zero = MaterialModulation::from_parts(5e-15, 0.0).unwrap();
        assert_eq!(index_modulation(1.7 * NM, &zero).unwrap(), 0.0);
        let m = MaterialModulation::from_sld(1.0e13).unwrap();
        let a = index_modulation(1.7 * NM, &m).unwrap();
        assert!((a - 4.60e-6).abs() < 0.005e-6, "{a}");
        let b = index_modulation(8.0 * NM, &m).unwrap();
        assert!((b - 1.02e-4).abs() < 0.005e-4, "{b}");
        assert!((b / a - (8.0f64 / 1.7).powi(2)).abs() < 1e-12);
        let inverted = MaterialModulation::from_sld(-1.0e13).unwrap();
        assert_eq!(index_modulation(1.7 * NM, &inverted).unwrap(), -a);
        assert!(MaterialModulation::from_sld(f64::NAN).is_err());
        assert!(index_modulation(f64::INFINITY, &m).is_err());
    }

    #[test]
    fn material_parts_multiply() {
        let m = MaterialModulation::from_parts(4.0e-15, 2.5e27).unwrap();
        assert!((m.sld_modulation - 1.0e13).abs() < 1e-3);
    }

    #[test]
    fn klein_cook_examples() {
        let q = klein_cook(1.7 * NM, 163.0 * UM, 1.0 * UM, 1.0).unwrap();
        assert!((q - 1.74).abs() < 0.005, "{q}");
        let q = klein_cook(8.0 * NM, 100.0 * UM, 0.5 * UM, 1.0).unwrap();
        assert!((q - 20.1).abs() < 0.05, "{q}");
        let q = klein_cook(1.7 * NM, 163.0 * UM, 1.0, 1.0).unwrap();
        assert!(q < 1e-9);
    }

    #[test]
    fn grating_invariants() {
        assert!(Grating::new(0.0, 1e-4, 1e-6).is_err());
        assert!(Grating::new(1e-6, -1e-4, 1e-6).is_err());
        assert!(Grating::new(1e-6, 1e-4, -1e-6).is_err());
        let g = Grating::new(1e-6, 1e-4, 1e-6).unwrap();
        assert!(g.with_tilt(2.0).is_err());
        assert!(g.with_mean_index(0.0).is_err());
        assert!(Beam::new(1e-9, 1.0, 0.0).is_err());
        assert!(Beam::new(1e-9, 0.1, -1e-3).is_err());
    }
}
