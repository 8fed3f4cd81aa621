//! Multiwave coupled-wave theory for a sinusoidal phase grating.
//!
//! The field inside the grating is expanded in plane-wave orders `m ∈ [-M, M]`
//! sharing the carrier `k_z`. Order `m` carries the transverse wavevector
//! `k_x - mK`, so order +1 is Bragg matched at `θ = +θ_B`. Under the slowly
//! varying envelope approximation the order amplitudes obey
//!
//! ```text
//! dA_m/dz = i ϑ_m A_m + i κ (A_{m-1} + A_{m+1}),
//! ϑ_m = (2 m k_x K - m² K²) / (2 k_z),   κ = π Δn / (λ cos θ),
//! ```
//!
//! with `A_0(0) = 1`. The generator is real symmetric, so propagation is
//! lossless and `Σ |A_m|²` is conserved.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};
use crate::model::{bragg_angle, Grating};
use crate::special::bessel_j_all;

/// Smallest accepted RK4 step count.
pub const MIN_STEPS: usize = 100;
/// Default RK4 step count.
pub const DEFAULT_STEPS: usize = 2000;
/// Default truncation: orders -4..=4.
pub const DEFAULT_MAX_ORDER: usize = 4;
/// Largest amplitude change tolerated when the step count is doubled.
pub const STEP_DOUBLING_TOLERANCE: f64 = 1e-8;
const MAX_STEPS: usize = 1 << 28;

/// Coupled-wave system for one grating, wavelength and incidence angle.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledWaveSystem {
    /// Truncation order M; orders `-M..=M` are retained.
    pub max_order: usize,
    /// Coupling constant κ (1/m).
    pub coupling: f64,
    /// Dephasing ϑ_m (1/m), indexed by `m + M`.
    pub dephasing: Vec<f64>,
    /// Propagation depth, the effective thickness (m).
    pub depth: f64,
    /// Wavenumber `k = 2π n̄ / λ` (1/m).
    pub wavenumber: f64,
    /// Transverse incident component `k sin θ` (1/m).
    pub kx: f64,
    /// Longitudinal carrier `k cos θ` (1/m).
    pub kz: f64,
    /// Grating vector magnitude `2π/Λ` (1/m).
    pub grating_vector: f64,
}

impl CoupledWaveSystem {
    pub fn order_count(&self) -> usize {
        2 * self.max_order + 1
    }

    pub fn orders(&self) -> impl Iterator<Item = i32> {
        let m = self.max_order as i32;
        -m..=m
    }

    pub fn dephasing_of(&self, order: i32) -> Option<f64> {
        index_of(self.max_order, order).map(|i| self.dephasing[i])
    }

    fn generator(&self) -> DMatrix<f64> {
        let n = self.order_count();
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = self.dephasing[i];
            if i + 1 < n {
                h[(i, i + 1)] = self.coupling;
                h[(i + 1, i)] = self.coupling;
            }
        }
        h
    }

    /// Upper bound on the spectral radius of the generator.
    pub fn generator_norm(&self) -> f64 {
        let max_dephasing = self.dephasing.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        max_dephasing + 2.0 * self.coupling.abs()
    }
}

fn index_of(max_order: usize, order: i32) -> Option<usize> {
    let m = max_order as i32;
    (-m..=m).contains(&order).then(|| (order + m) as usize)
}

/// Assembles the coupled-wave system for a plane wave incident at `theta`.
pub fn build_system(
    grating: &Grating,
    wavelength: f64,
    theta: f64,
    max_order: usize,
) -> Result<CoupledWaveSystem> {
    let grating = grating.validated()?;
    ensure_finite("wavelength", wavelength)?;
    ensure_finite("theta", theta)?;
    if wavelength <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if max_order < 2 {
        return Err(Error::InvalidInput(format!(
            "truncation order must be at least 2 to represent the second orders, got {max_order}"
        )));
    }
    if theta.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "incidence angle |{theta}| rad must stay below pi/2"
        )));
    }
    let wavenumber = 2.0 * PI * grating.mean_index / wavelength;
    let kx = wavenumber * theta.sin();
    let kz = wavenumber * theta.cos();
    let k_grating = grating.grating_vector();
    let dephasing = (-(max_order as i32)..=max_order as i32)
        .map(|m| {
            let m = m as f64;
            (2.0 * m * kx * k_grating - m * m * k_grating * k_grating) / (2.0 * kz)
        })
        .collect();
    Ok(CoupledWaveSystem {
        max_order,
        coupling: PI * grating.index_modulation / (wavelength * theta.cos()),
        dephasing,
        depth: grating.effective_thickness(),
        wavenumber,
        kx,
        kz,
        grating_vector: k_grating,
    })
}

/// Complex order amplitudes at depth `depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderField {
    pub max_order: usize,
    /// Amplitudes indexed by `m + M`.
    pub amplitudes: Vec<Complex64>,
    pub depth: f64,
    /// RK4 step count that produced the field.
    pub steps: usize,
}

impl OrderField {
    pub fn amplitude(&self, order: i32) -> Complex64 {
        index_of(self.max_order, order)
            .map(|i| self.amplitudes[i])
            .unwrap_or_default()
    }

    pub fn total_intensity(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// One RK4 step of `dA/dz = i H A` is the matrix polynomial
/// `I + G + G²/2 + G³/6 + G⁴/24` with `G = i h H`.
fn rk4_step_matrix(h: &DMatrix<f64>, step: f64) -> DMatrix<Complex64> {
    let n = h.nrows();
    let g = h.map(|v| Complex64::new(0.0, v * step));
    let id = DMatrix::<Complex64>::identity(n, n);
    let mut p = &id + &g * Complex64::from(0.25);
    p = &id + (&g * &p) * Complex64::from(1.0 / 3.0);
    p = &id + (&g * &p) * Complex64::from(0.5);
    &id + &g * &p
}

/// Runs exactly `steps` classical RK4 steps of size `depth / steps`.
///
/// The system is linear with constant coefficients, so `steps` RK4 steps
/// equal the `steps`-th power of the one-step matrix, which is applied by
/// repeated squaring.
pub fn propagate_fixed(sys: &CoupledWaveSystem, steps: usize) -> OrderField {
    let n = sys.order_count();
    let one_step = rk4_step_matrix(&sys.generator(), sys.depth / steps as f64);
    let mut v = DVector::<Complex64>::zeros(n);
    v[sys.max_order] = Complex64::new(1.0, 0.0);
    let mut power = one_step;
    let mut remaining = steps;
    while remaining > 0 {
        if remaining & 1 == 1 {
            v = &power * v;
        }
        remaining >>= 1;
        if remaining > 0 {
            power = &power * &power;
        }
    }
    OrderField {
        max_order: sys.max_order,
        amplitudes: v.iter().copied().collect(),
        depth: sys.depth,
        steps,
    }
}

fn max_amplitude_change(a: &OrderField, b: &OrderField) -> f64 {
    a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Integrates the system through the grating with a step-doubling check.
///
/// Starting from `steps`, the step count is doubled until the amplitudes
/// change by at most [`STEP_DOUBLING_TOLERANCE`]; the finer result is returned.
pub fn propagate(sys: &CoupledWaveSystem, steps: usize) -> Result<OrderField> {
    if steps < MIN_STEPS {
        return Err(Error::InvalidInput(format!(
            "at least {MIN_STEPS} steps are required, got {steps}"
        )));
    }
    let mut n = steps;
    let mut coarse = propagate_fixed(sys, n);
    let mut change = f64::INFINITY;
    while 2 * n <= MAX_STEPS {
        let fine = propagate_fixed(sys, 2 * n);
        change = max_amplitude_change(&coarse, &fine);
        if change <= STEP_DOUBLING_TOLERANCE && fine.amplitudes.iter().all(|a| a.is_finite()) {
            return Ok(fine);
        }
        coarse = fine;
        n *= 2;
    }
    Err(Error::Accuracy(format!(
        "coupled-wave integration did not converge: amplitudes still change by {change:e} at {n} steps"
    )))
}

/// Diffraction efficiencies `η_m` indexed by order.
#[derive(Debug, Clone, PartialEq)]
pub struct Efficiencies {
    pub max_order: usize,
    /// Values indexed by `m + M`.
    pub values: Vec<f64>,
}

impl Efficiencies {
    pub fn zeros(max_order: usize) -> Self {
        Self {
            max_order,
            values: vec![0.0; 2 * max_order + 1],
        }
    }

    /// Efficiency of `order`; zero for orders outside the truncation.
    pub fn get(&self, order: i32) -> f64 {
        index_of(self.max_order, order)
            .map(|i| self.values[i])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        let m = self.max_order as i32;
        (-m..=m).zip(self.values.iter().copied())
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_map(&self) -> BTreeMap<i32, f64> {
        self.iter().collect()
    }

    /// The five orders -2..=2 as stored in rocking-curve files.
    pub fn central_five(&self) -> [f64; 5] {
        [self.get(-2), self.get(-1), self.get(0), self.get(1), self.get(2)]
    }

    pub(crate) fn accumulate(&mut self, other: &Efficiencies, weight: f64) {
        debug_assert_eq!(self.max_order, other.max_order);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += weight * b;
        }
    }

    pub(crate) fn max_abs_difference(&self, other: &Efficiencies) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `η_m = |A_m|²`.
pub fn efficiencies(field: &OrderField) -> Efficiencies {
    Efficiencies {
        max_order: field.max_order,
        values: field.amplitudes.iter().map(|a| a.norm_sqr()).collect(),
    }
}

/// Builds, propagates and squares in one call.
pub fn solve(
    grating: &Grating,
    wavelength: f64,
    theta: f64,
    max_order: usize,
    steps: usize,
) -> Result<Efficiencies> {
    let sys = build_system(grating, wavelength, theta, max_order)?;
    Ok(efficiencies(&propagate(&sys, steps)?))
}

/// Pendellösung parameter `ν = π Δn d_eff / (λ cos θ_B)`.
pub fn two_wave_nu(grating: &Grating, wavelength: f64) -> Result<f64> {
    let theta_b = bragg_angle(wavelength, grating.spacing)?;
    Ok(PI * grating.index_modulation * grating.effective_thickness() / (wavelength * theta_b.cos()))
}

/// Off-Bragg parameter `ξ = π d_eff (θ - θ_B) / Λ`.
pub fn two_wave_xi(grating: &Grating, wavelength: f64, theta: f64) -> Result<f64> {
    let theta_b = bragg_angle(wavelength, grating.spacing)?;
    Ok(PI * grating.effective_thickness() * (theta - theta_b) / grating.spacing)
}

/// Two-wave (Kogelnik) efficiency of order +1,
/// `η_1 = sin²(√(ν²+ξ²)) / (1 + ξ²/ν²)`.
pub fn two_wave(grating: &Grating, wavelength: f64, theta: f64) -> Result<f64> {
    let grating = grating.validated()?;
    ensure_finite("theta", theta)?;
    let nu = two_wave_nu(&grating, wavelength)?;
    let xi = two_wave_xi(&grating, wavelength, theta)?;
    if nu == 0.0 {
        return Ok(0.0);
    }
    let s = (nu * nu + xi * xi).sqrt();
    Ok(s.sin().powi(2) / (1.0 + (xi / nu).powi(2)))
}

/// Raman–Nath efficiencies `η_m = J_m²(2 κ d_eff)` at normal incidence,
/// with `κ = π Δn / λ`, for orders `-max_order..=max_order`.
pub fn thin_grating(grating: &Grating, wavelength: f64, max_order: usize) -> Result<Efficiencies> {
    let grating = grating.validated()?;
    ensure_finite("wavelength", wavelength)?;
    if wavelength <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let argument = 2.0 * PI * grating.index_modulation * grating.effective_thickness() / wavelength;
    let j = bessel_j_all(max_order, argument);
    let mut eff = Efficiencies::zeros(max_order);
    for m in -(max_order as i32)..=max_order as i32 {
        eff.values[(m + max_order as i32) as usize] = j[m.unsigned_abs() as usize].powi(2);
    }
    Ok(eff)
}
