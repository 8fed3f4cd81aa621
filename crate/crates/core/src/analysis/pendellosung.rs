//! First-order efficiency at Bragg incidence as a function of thickness or
//! wavelength.

use crate::cwt;
use crate::error::{Error, Result};
use crate::instrument::SolverSettings;
use crate::model::{bragg_angle, Grating};

/// How the index modulation follows the wavelength in a wavelength scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexScaling {
    /// Δn held at the grating's value.
    Fixed,
    /// Δn scaled by `(λ/λ_ref)²`, keeping the scattering-length density fixed.
    Material,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVariable {
    /// Effective thickness `d_eff` (m); the tilt is kept.
    Thickness,
    /// Wavelength (m), incidence following `θ_B(λ)`.
    Wavelength(IndexScaling),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendelloesungCurve {
    pub variable: ScanVariable,
    /// Sampled values of the scan variable.
    pub values: Vec<f64>,
    /// `η_+1` at Bragg incidence per sample.
    pub eta: Vec<f64>,
    /// Location of the first interior maximum, refined by a parabola
    /// through the neighbouring samples.
    pub first_maximum: Option<f64>,
}

/// Samples `η_+1` at Bragg incidence over `range` (inclusive, `n` points).
/// `wavelength` is the scan wavelength for thickness scans and the
/// reference wavelength of Δn for wavelength scans.
pub fn pendelloesung_scan(
    grating: &Grating,
    wavelength: f64,
    variable: ScanVariable,
    range: (f64, f64),
    n: usize,
    settings: &SolverSettings,
) -> Result<PendelloesungCurve> {
    let grating = grating.validated()?;
    let (a, b) = range;
    if !(a.is_finite() && b.is_finite()) || a <= 0.0 || b <= a {
        return Err(Error::InvalidInput(format!("scan range must be positive and increasing, got ({a}, {b})")));
    }
    if n < 8 {
        return Err(Error::InvalidInput(format!("a Pendellösung scan needs at least 8 points, got {n}")));
    }
    let values: Vec<f64> = (0..n)
        .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect();
    let eta = values
        .iter()
        .map(|&v| {
            let (g, lambda) = match variable {
                ScanVariable::Thickness => (grating.with_thickness(v * grating.tilt.cos())?, wavelength),
                ScanVariable::Wavelength(IndexScaling::Fixed) => (grating, v),
                ScanVariable::Wavelength(IndexScaling::Material) => (
                    grating.with_index_modulation(grating.index_modulation * (v / wavelength).powi(2))?,
                    v,
                ),
            };
            let theta = bragg_angle(lambda, g.spacing)?;
            Ok(cwt::solve(&g, lambda, theta, settings.max_order, settings.steps)?.get(1))
        })
        .collect::<Result<Vec<f64>>>()?;
    let first_maximum = first_maximum(&values, &eta);
    Ok(PendelloesungCurve {
        variable,
        values,
        eta,
        first_maximum,
    })
}

fn first_maximum(x: &[f64], y: &[f64]) -> Option<f64> {
    let scale = y.iter().copied().fold(0.0, f64::max);
    if scale <= 1e-12 {
        return None;
    }
    (1..y.len() - 1)
        .find(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1])
        .map(|i| {
            let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
            let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
            let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
            let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
            if den == 0.0 {
                x1
            } else {
                x1 - 0.5 * num / den
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_vertex() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 10.0 - (v - 3.3).powi(2)).collect();
        assert!((first_maximum(&x, &y).unwrap() - 3.3).abs() < 1e-12);
    }

    #[test]
    fn zero_modulation_gives_flat_zero_curve() {
        let g = Grating::new(1e-6, 100e-6, 0.0).unwrap();
        let c = pendelloesung_scan(&g, 8e-9, ScanVariable::Thickness, (10e-6, 500e-6), 16, &SolverSettings::default())
            .unwrap();
        assert!(c.eta.iter().all(|&v| v == 0.0));
        assert_eq!(c.first_maximum, None);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let g = Grating::new(1e-6, 100e-6, 1e-6).unwrap();
        let s = SolverSettings::default();
        assert!(pendelloesung_scan(&g, 8e-9, ScanVariable::Thickness, (10e-6, 5e-6), 16, &s).is_err());
        assert!(pendelloesung_scan(&g, 8e-9, ScanVariable::Thickness, (10e-6, 50e-6), 7, &s).is_err());
    }
}
