//! Zernike three-path interferometer: a three-port splitter sends orders
//! -1, 0, +1 towards mirrors that recombine the outer beams on the central
//! one at the detection plane. A phase on the central beam moves the
//! interference pattern along the optical axis.
//!
//! Geometry convention: the separation `s` is the centre-to-centre distance
//! between the central beam and each outer beam at the mirror plane, so the
//! outer pair is `2s` apart there.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::model::bragg_angle;

/// Ray-geometric layout of the interferometer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferometerLayout {
    pub wavelength: f64,
    /// Beam-splitter grating spacing.
    pub splitter_spacing: f64,
    /// Angle of each outer beam to the central beam after the splitter (rad).
    pub first_order_angle: f64,
    /// Half the angle enclosed by the outer beams at the detector (rad).
    pub half_angle: f64,
    /// Splitter-to-mirror distance L₁.
    pub splitter_to_mirror: f64,
    /// Mirror-to-detector distance L₂.
    pub mirror_to_detector: f64,
    pub beam_width: f64,
    pub separation: f64,
}

impl InterferometerLayout {
    /// Splitter-to-detector distance `L₁ + L₂`.
    pub fn total_length(&self) -> f64 {
        self.splitter_to_mirror + self.mirror_to_detector
    }

    /// Axial length over which the outer beams overlap the central one, `w / tan α`.
    pub fn overlap_length(&self) -> f64 {
        self.beam_width / self.half_angle.tan()
    }

    /// Lateral extent of the fringe field (the beam width).
    pub fn lateral_extent(&self) -> f64 {
        self.beam_width
    }

    /// Two-beam fringe period `λ / (2 sin α)`.
    pub fn fringe_period(&self) -> f64 {
        self.wavelength / (2.0 * self.half_angle.sin())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    ensure_finite(name, v)?;
    if v <= 0.0 {
        return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Layout that yields fringe period `fringe_period` at the detector while
/// keeping the beams `separation` apart at the mirrors.
///
/// The outer beams leave the splitter at its Bragg angle `arcsin(λ/2Λ)`.
pub fn solve_layout(
    wavelength: f64,
    splitter_spacing: f64,
    separation: f64,
    beam_width: f64,
    fringe_period: f64,
) -> Result<InterferometerLayout> {
    check_positive("fringe period", fringe_period)?;
    if fringe_period <= wavelength / 2.0 {
        return Err(Error::UnreachableFringePeriod {
            period: fringe_period,
            wavelength,
        });
    }
    let half_angle = (wavelength / (2.0 * fringe_period)).asin();
    layout_with_half_angle(wavelength, splitter_spacing, separation, beam_width, half_angle)
}

/// As [`solve_layout`] with the recombination half-angle given directly.
pub fn layout_with_half_angle(
    wavelength: f64,
    splitter_spacing: f64,
    separation: f64,
    beam_width: f64,
    half_angle: f64,
) -> Result<InterferometerLayout> {
    check_positive("wavelength", wavelength)?;
    check_positive("splitter spacing", splitter_spacing)?;
    check_positive("separation", separation)?;
    check_positive("beam width", beam_width)?;
    ensure_finite("half angle", half_angle)?;
    if wavelength >= splitter_spacing {
        return Err(Error::InvalidInput(format!(
            "wavelength {wavelength:e} m must be below the splitter spacing {splitter_spacing:e} m"
        )));
    }
    if separation <= beam_width {
        return Err(Error::InvalidInput(format!(
            "separation {separation:e} m must exceed the beam width {beam_width:e} m"
        )));
    }
    check_half_angle(half_angle)?;
    let first_order_angle = bragg_angle(wavelength, splitter_spacing)?;
    Ok(InterferometerLayout {
        wavelength,
        splitter_spacing,
        first_order_angle,
        half_angle,
        splitter_to_mirror: separation / first_order_angle.tan(),
        mirror_to_detector: separation / half_angle.tan(),
        beam_width,
        separation,
    })
}

fn check_half_angle(alpha: f64) -> Result<()> {
    if alpha == 0.0 {
        return Err(Error::DegenerateGeometry(
            "half-angle 0: collinear beams never recombine and the axial shift is infinite".into(),
        ));
    }
    if !(0.0 < alpha && alpha < FRAC_PI_2) {
        return Err(Error::Domain(format!("half-angle {alpha} rad must lie in (0, pi/2)")));
    }
    Ok(())
}

/// Outer beams at `±α` and the central beam with extra phase `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeBeamField {
    /// Amplitudes of the -1, 0, +1 beams; `Σ |a|² = 1`.
    pub amplitudes: [Complex64; 3],
    /// Central-beam phase φ (rad).
    pub phase: f64,
    pub half_angle: f64,
    pub wavelength: f64,
}

impl ThreeBeamField {
    pub fn new(amplitudes: [Complex64; 3], phase: f64, half_angle: f64, wavelength: f64) -> Result<Self> {
        let total: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "beam intensities must sum to 1, got {total}"
            )));
        }
        check_positive("wavelength", wavelength)?;
        ensure_finite("phase", phase)?;
        ensure_finite("half angle", half_angle)?;
        if !(half_angle.abs() < FRAC_PI_2) {
            return Err(Error::Domain(format!("half-angle {half_angle} rad must stay below pi/2")));
        }
        Ok(Self {
            amplitudes,
            phase,
            half_angle,
            wavelength,
        })
    }

    /// Scales arbitrary amplitudes to unit total intensity.
    pub fn normalized(amplitudes: [Complex64; 3], phase: f64, half_angle: f64, wavelength: f64) -> Result<Self> {
        let total: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput("beam amplitudes are all zero".into()));
        }
        let s = total.sqrt();
        Self::new(amplitudes.map(|a| a / s), phase, half_angle, wavelength)
    }

    /// Equal intensity in the three beams.
    pub fn equal_split(phase: f64, half_angle: f64, wavelength: f64) -> Result<Self> {
        let a = Complex64::new((1.0f64 / 3.0).sqrt(), 0.0);
        Self::normalized([a, a, a], phase, half_angle, wavelength)
    }

    pub fn with_phase(self, phase: f64) -> Self {
        Self { phase, ..self }
    }

    /// Intensity at one point. The common carrier `exp(ikz cos α)` is
    /// factored out so large `z` keeps full precision.
    pub fn intensity(&self, x: f64, z: f64) -> f64 {
        let k = 2.0 * PI / self.wavelength;
        let beta = k * self.half_angle.sin();
        let one_minus_cos = 2.0 * (0.5 * self.half_angle).sin().powi(2);
        let [a_minus, a_zero, a_plus] = self.amplitudes;
        let psi = k * z * one_minus_cos + self.phase;
        let field = a_minus * Complex64::from_polar(1.0, -beta * x)
            + a_zero * Complex64::from_polar(1.0, psi)
            + a_plus * Complex64::from_polar(1.0, beta * x);
        field.norm_sqr()
    }
}

/// Intensity sampled on a rectilinear grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Row-major, `values[iz * x.len() + ix]`.
    pub values: Vec<f64>,
}

impl IntensityMap {
    pub fn at(&self, ix: usize, iz: usize) -> f64 {
        self.values[iz * self.x.len() + ix]
    }

    pub fn row(&self, iz: usize) -> &[f64] {
        let n = self.x.len();
        &self.values[iz * n..(iz + 1) * n]
    }
}

/// `I(x, z) = |a₋ e^{ik(-x sin α + z cos α)} + a₀ e^{i(kz + φ)} + a₊ e^{ik(x sin α + z cos α)}|²`.
pub fn interference(field: &ThreeBeamField, x: &[f64], z: &[f64]) -> IntensityMap {
    let values = z
        .par_iter()
        .flat_map_iter(|&zv| x.iter().map(move |&xv| field.intensity(xv, zv)))
        .collect();
    IntensityMap {
        x: x.to_vec(),
        z: z.to_vec(),
        values,
    }
}

/// Axial displacement `Δz = δφ / (k (1 - cos α))` produced by a central-beam
/// phase `δφ`: `I(x, z; φ + δφ) = I(x, z + Δz; φ)`.
pub fn axial_shift(phase_shift: f64, wavelength: f64, half_angle: f64) -> Result<f64> {
    ensure_finite("phase shift", phase_shift)?;
    check_positive("wavelength", wavelength)?;
    ensure_finite("half angle", half_angle)?;
    check_half_angle(half_angle)?;
    let k = 2.0 * PI / wavelength;
    Ok(phase_shift / (k * 2.0 * (0.5 * half_angle).sin().powi(2)))
}

/// Signal behind a binary absorption comb of the given period and open
/// fraction, shifted to each offset:
/// `S(x₀) = ∫ I(x, z_plane) T(x - x₀) dx` over the map's x range.
///
/// The comb is open on `[x₀ + jp, x₀ + jp + duty·p)`. The intensity is
/// linear between samples (and between the two nearest z rows) and the
/// overlap with each slit is integrated exactly.
pub fn analyzer_scan(map: &IntensityMap, z_plane: f64, period: f64, duty: f64, offsets: &[f64]) -> Result<Vec<f64>> {
    check_positive("analyzer period", period)?;
    ensure_finite("duty", duty)?;
    ensure_finite("z plane", z_plane)?;
    if !(0.0 < duty && duty < 1.0) {
        return Err(Error::InvalidInput(format!("duty cycle must lie in (0, 1), got {duty}")));
    }
    if map.x.len() < 2 || map.z.is_empty() {
        return Err(Error::InvalidInput("intensity map needs at least two x samples".into()));
    }
    let step = map.x.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if period < 2.0 * step {
        return Err(Error::Undersampling { period, step });
    }
    let profile = row_at(map, z_plane)?;
    let open = duty * period;
    let x = &map.x;
    Ok(offsets
        .iter()
        .map(|&x0| {
            let mut signal = 0.0;
            for i in 0..x.len() - 1 {
                let (xa, xb) = (x[i], x[i + 1]);
                let (ya, yb) = (profile[i], profile[i + 1]);
                let value = |t: f64| ya + (yb - ya) * (t - xa) / (xb - xa);
                let first = ((xa - x0 - open) / period).floor() as i64;
                let last = ((xb - x0) / period).floor() as i64;
                for j in first..=last {
                    let start = x0 + j as f64 * period;
                    let a = start.max(xa);
                    let b = (start + open).min(xb);
                    if b > a {
                        signal += 0.5 * (b - a) * (value(a) + value(b));
                    }
                }
            }
            signal
        })
        .collect())
}

fn row_at(map: &IntensityMap, z_plane: f64) -> Result<Vec<f64>> {
    let z = &map.z;
    let (zmin, zmax) = (z[0], z[z.len() - 1]);
    if z_plane < zmin.min(zmax) || z_plane > zmin.max(zmax) {
        return Err(Error::InvalidInput(format!(
            "z plane {z_plane:e} m lies outside the map range [{zmin:e}, {zmax:e}]"
        )));
    }
    if z.len() == 1 {
        return Ok(map.row(0).to_vec());
    }
    let i = z.windows(2).position(|w| z_plane >= w[0] && z_plane <= w[1]).unwrap_or(z.len() - 2);
    let t = (z_plane - z[i]) / (z[i + 1] - z[i]);
    Ok(map
        .row(i)
        .iter()
        .zip(map.row(i + 1))
        .map(|(a, b)| a + t * (b - a))
        .collect())
}

/// `n` points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| if i + 1 == n { end } else { start + (end - start) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NM: f64 = 1e-9;
    const UM: f64 = 1e-6;

    fn paper_layout() -> InterferometerLayout {
        solve_layout(8.0 * NM, 0.5 * UM, 1e-2, 1e-3, 1.0 * UM).unwrap()
    }

    #[test]
    fn layout_numbers() {
        let l = paper_layout();
        assert!((l.first_order_angle - 8.0e-3).abs() < 1e-6);
        assert!((l.half_angle - 4.0e-3).abs() < 1e-6);
        assert!((l.splitter_to_mirror - 1.25).abs() < 1e-4);
        assert!((l.mirror_to_detector - 2.5).abs() < 1e-4);
        assert!((l.total_length() - 3.75).abs() < 1e-3);
        assert!((l.overlap_length() - 0.25).abs() < 1e-4);
        assert_eq!(l.lateral_extent(), 1e-3);
        assert!((l.fringe_period() - 1.0 * UM).abs() < 1e-15);
        let s = l.splitter_to_mirror * l.first_order_angle.tan();
        assert!((s / l.separation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layout_errors() {
        assert!(matches!(
            solve_layout(8.0 * NM, 0.5 * UM, 1e-2, 1e-3, 4.0 * NM),
            Err(Error::UnreachableFringePeriod { .. })
        ));
        assert!(solve_layout(8.0 * NM, 0.5 * UM, 1e-3, 1e-2, 1.0 * UM).is_err());
        assert!(solve_layout(0.6 * UM, 0.5 * UM, 1e-2, 1e-3, 1.0 * UM).is_err());
        assert!(matches!(
            layout_with_half_angle(8.0 * NM, 0.5 * UM, 1e-2, 1e-3, 0.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn central_beam_alone_is_uniform() {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::default();
        let f = ThreeBeamField::new([zero, one, zero], 0.3, 4e-3, 8.0 * NM).unwrap();
        let m = interference(&f, &linspace(0.0, 3.0 * UM, 17), &linspace(0.0, 1e-3, 5));
        assert!(m.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_beam_fringe_period() {
        let a = Complex64::new(0.5f64.sqrt(), 0.0);
        let zero = Complex64::default();
        let f = ThreeBeamField::new([a, zero, a], 0.0, 4e-3, 8.0 * NM).unwrap();
        // I = 2 cos²(βx), period λ/(2 sin α)
        let p = 8.0 * NM / (2.0 * (4e-3f64).sin());
        assert!((p - 1.0 * UM).abs() < 1e-11);
        for &x in &[0.0, 0.13 * UM, 0.4 * UM, 2.7 * UM] {
            assert!((f.intensity(x, 0.0) - f.intensity(x + p, 0.0)).abs() < 1e-9);
        }
        assert!((f.intensity(0.0, 0.0) - 2.0).abs() < 1e-12);
        assert!(f.intensity(0.5 * p, 0.0).abs() < 1e-12);
    }

    #[test]
    fn normalisation_is_enforced() {
        let a = Complex64::new(1.0, 0.0);
        assert!(ThreeBeamField::new([a, a, a], 0.0, 4e-3, 8.0 * NM).is_err());
        let f = ThreeBeamField::normalized([a, a, a], 0.0, 4e-3, 8.0 * NM).unwrap();
        let total: f64 = f.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn axial_shift_examples() {
        assert_eq!(axial_shift(0.0, 8.0 * NM, 4e-3).unwrap(), 0.0);
        let dz = axial_shift(2.0 * PI / 100.0, 8.0 * NM, 4e-3).unwrap();
        assert!((dz - 10.0 * UM).abs() < 0.01 * UM, "{dz}");
        let full = axial_shift(2.0 * PI, 8.0 * NM, 4e-3).unwrap();
        assert!((full - 1e-3).abs() < 1e-6, "{full}");
        assert!(matches!(axial_shift(0.1, 8.0 * NM, 0.0), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn analyzer_on_uniform_intensity() {
        let map = IntensityMap {
            x: linspace(0.0, 10.0 * UM, 201),
            z: vec![0.0, 1.0],
            values: vec![1.0; 402],
        };
        let s = analyzer_scan(&map, 0.5, 1.0 * UM, 0.3, &linspace(0.0, 1.0 * UM, 7)).unwrap();
        for v in s {
            assert!((v - 0.3 * 10.0 * UM).abs() < 1e-18);
        }
    }

    #[test]
    fn analyzer_errors() {
        let map = IntensityMap {
            x: linspace(0.0, 10.0 * UM, 11),
            z: vec![0.0],
            values: vec![1.0; 11],
        };
        assert!(matches!(
            analyzer_scan(&map, 0.0, 1.5 * UM, 0.5, &[0.0]),
            Err(Error::Undersampling { .. })
        ));
        assert!(analyzer_scan(&map, 0.0, 3.0 * UM, 1.0, &[0.0]).is_err());
        assert!(analyzer_scan(&map, 1.0, 3.0 * UM, 0.5, &[0.0]).is_err());
    }
}
