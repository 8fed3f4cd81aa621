//! What the small-angle instrument records: efficiencies averaged over the
//! wavelength band and beam divergence, rocking scans, and per-order
//! efficiencies reduced from 2D detector frames.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;

use crate::cwt::{self, Efficiencies, DEFAULT_MAX_ORDER, DEFAULT_STEPS};
use crate::error::{ensure_finite, Error, Result};
use crate::model::{Beam, Grating};
use crate::special::{gauss_hermite, gauss_legendre};

/// Default quadrature nodes per kernel dimension.
pub const DEFAULT_NODES: usize = 7;
/// Largest efficiency change tolerated when the quadrature nodes are doubled.
pub const QUADRATURE_TOLERANCE: f64 = 1e-4;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

/// Line shape of the wavelength and divergence distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelShape {
    #[default]
    Gaussian,
    Triangular,
}

impl std::str::FromStr for KernelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "triangular" => Ok(Self::Triangular),
            other => Err(Error::InvalidInput(format!(
                "unknown kernel shape '{other}', expected gaussian or triangular"
            ))),
        }
    }
}

impl std::fmt::Display for KernelShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Triangular => "triangular",
        })
    }
}

/// Numerical settings shared by every forward-model evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_order: usize,
    pub steps: usize,
    pub nodes: usize,
    pub kernel: KernelShape,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_order: DEFAULT_MAX_ORDER,
            steps: DEFAULT_STEPS,
            nodes: DEFAULT_NODES,
            kernel: KernelShape::Gaussian,
        }
    }
}

/// Quadrature offsets and weights for a normalised kernel of the given FWHM.
/// A zero width gives the single node `(0, 1)`.
pub fn kernel_nodes(shape: KernelShape, fwhm: f64, nodes: usize) -> Vec<(f64, f64)> {
    if fwhm == 0.0 || nodes <= 1 {
        return vec![(0.0, 1.0)];
    }
    let mut out: Vec<(f64, f64)> = match shape {
        KernelShape::Gaussian => {
            let sigma = fwhm / FWHM_PER_SIGMA;
            let (x, w) = gauss_hermite(nodes);
            x.into_iter()
                .zip(w)
                .map(|(x, w)| (std::f64::consts::SQRT_2 * sigma * x, w))
                .collect()
        }
        KernelShape::Triangular => {
            // density (fwhm - |u|) / fwhm² on [-fwhm, fwhm], one Gauss–Legendre rule per flank
            let (x, w) = gauss_legendre(nodes);
            let mut v = Vec::with_capacity(2 * nodes);
            for (&xi, &wi) in x.iter().zip(&w).rev() {
                let u = -0.5 * fwhm * (1.0 + xi);
                v.push((u, wi * 0.5 * fwhm * (fwhm + u) / (fwhm * fwhm)));
            }
            for (&xi, &wi) in x.iter().zip(&w) {
                let u = 0.5 * fwhm * (1.0 + xi);
                v.push((u, wi * 0.5 * fwhm * (fwhm - u) / (fwhm * fwhm)));
            }
            v
        }
    };
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    for node in out.iter_mut() {
        node.1 /= total;
    }
    out
}

/// The instrument forward model: monochromatic efficiencies averaged over a
/// fixed tensor-product quadrature in wavelength and incidence angle.
///
/// The grating's index modulation refers to the central wavelength; at a
/// wavelength λ' it is scaled by `(λ'/λ)²` since the scattering-length
/// density, not Δn, is the material constant.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub beam: Beam,
    pub settings: SolverSettings,
    wavelength_nodes: Vec<(f64, f64)>,
    angle_nodes: Vec<(f64, f64)>,
    fixed_steps: Option<usize>,
}

impl ForwardModel {
    pub fn new(beam: Beam, settings: SolverSettings) -> Result<Self> {
        Self::with_nodes(beam, settings, settings.nodes)
    }

    fn with_nodes(beam: Beam, settings: SolverSettings, nodes: usize) -> Result<Self> {
        let beam = Beam::new(beam.wavelength, beam.relative_spread, beam.divergence)?;
        if nodes == 0 {
            return Err(Error::InvalidInput("quadrature needs at least one node".into()));
        }
        let wavelength_nodes = kernel_nodes(settings.kernel, beam.relative_spread, nodes)
            .into_iter()
            .map(|(u, w)| (beam.wavelength * (1.0 + u), w))
            .collect::<Vec<_>>();
        if wavelength_nodes.iter().any(|(l, _)| *l <= 0.0) {
            return Err(Error::InvalidInput(
                "wavelength spread too wide: quadrature reaches non-positive wavelengths".into(),
            ));
        }
        Ok(Self {
            beam,
            settings,
            wavelength_nodes,
            angle_nodes: kernel_nodes(settings.kernel, beam.divergence, nodes),
            fixed_steps: None,
        })
    }

    /// Uses exactly `steps` RK4 steps per node without the doubling check.
    ///
    /// This makes the model a smooth function of the grating parameters,
    /// which finite-difference Jacobians need.
    pub fn with_fixed_steps(mut self, steps: usize) -> Self {
        self.fixed_steps = Some(steps);
        self
    }

    pub fn fixed_steps(&self) -> Option<usize> {
        self.fixed_steps
    }

    fn node_grating(&self, grating: &Grating, wavelength: f64) -> Grating {
        let scale = (wavelength / self.beam.wavelength).powi(2);
        Grating {
            index_modulation: grating.index_modulation * scale,
            ..*grating
        }
    }

    /// Averaged efficiencies at nominal incidence `theta`.
    pub fn evaluate(&self, grating: &Grating, theta: f64) -> Result<Efficiencies> {
        let grating = grating.validated()?;
        let mut acc = Efficiencies::zeros(self.settings.max_order);
        for &(wavelength, wl_weight) in &self.wavelength_nodes {
            let g = self.node_grating(&grating, wavelength);
            for &(delta, angle_weight) in &self.angle_nodes {
                let sys = cwt::build_system(&g, wavelength, theta + delta, self.settings.max_order)?;
                let field = match self.fixed_steps {
                    Some(steps) => cwt::propagate_fixed(&sys, steps),
                    None => cwt::propagate(&sys, self.settings.steps)?,
                };
                acc.accumulate(&cwt::efficiencies(&field), wl_weight * angle_weight);
            }
        }
        Ok(acc)
    }

    /// Largest converged step count over every quadrature node of the given
    /// gratings and angles; suitable for [`ForwardModel::with_fixed_steps`].
    pub fn converged_steps(&self, gratings: &[Grating], thetas: &[f64]) -> Result<usize> {
        let mut steps = self.settings.steps;
        for grating in gratings {
            for &(wavelength, _) in &self.wavelength_nodes {
                let g = self.node_grating(grating, wavelength);
                for &theta in thetas {
                    for &(delta, _) in &self.angle_nodes {
                        let sys = cwt::build_system(&g, wavelength, theta + delta, self.settings.max_order)?;
                        steps = steps.max(cwt::propagate(&sys, self.settings.steps)?.steps);
                    }
                }
            }
        }
        Ok(steps)
    }
}

/// Efficiencies averaged over Gaussian (or triangular) wavelength and
/// divergence kernels whose FWHM are taken from `beam`.
///
/// The configured node count is checked against a rule with twice as many
/// nodes per dimension; a disagreement above [`QUADRATURE_TOLERANCE`] is an
/// accuracy error.
pub fn convolved_efficiencies(
    grating: &Grating,
    beam: &Beam,
    theta: f64,
    settings: &SolverSettings,
) -> Result<Efficiencies> {
    ensure_finite("theta", theta)?;
    let model = ForwardModel::new(*beam, *settings)?;
    let result = model.evaluate(grating, theta)?;
    if beam.relative_spread > 0.0 || beam.divergence > 0.0 {
        let check = ForwardModel::with_nodes(*beam, *settings, 2 * settings.nodes)?.evaluate(grating, theta)?;
        let change = result.max_abs_difference(&check);
        if change > QUADRATURE_TOLERANCE {
            return Err(Error::Accuracy(format!(
                "quadrature not converged at theta = {theta:e} rad: doubling nodes changes efficiencies by {change:e}"
            )));
        }
    }
    Ok(result)
}

/// Per-order efficiencies sampled over incidence angle.
#[derive(Debug, Clone, PartialEq)]
pub struct RockingCurve {
    /// Incidence angles (rad), strictly increasing.
    pub theta: Vec<f64>,
    /// Efficiencies of orders -2, -1, 0, +1, +2 per angle.
    pub eta: Vec<[f64; 5]>,
    /// Optional per-sample uncertainty.
    pub sigma: Option<Vec<f64>>,
}

/// Orders stored in a rocking curve, in column order.
pub const CURVE_ORDERS: [i32; 5] = [-2, -1, 0, 1, 2];

impl RockingCurve {
    /// Checks shape, ordering and finiteness. Measured data may carry noise
    /// excursions outside `[0, 1]`; see [`RockingCurve::check_physical`].
    pub fn new(theta: Vec<f64>, eta: Vec<[f64; 5]>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if theta.len() != eta.len() {
            return Err(Error::InvalidInput(format!(
                "{} angles but {} efficiency rows",
                theta.len(),
                eta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) || eta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("rocking curve contains non-finite values".into()));
        }
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("rocking-curve angles must be strictly increasing".into()));
        }
        if let Some(s) = &sigma {
            if s.len() != theta.len() {
                return Err(Error::InvalidInput(format!(
                    "{} angles but {} uncertainties",
                    theta.len(),
                    s.len()
                )));
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidInput("uncertainties must be positive and finite".into()));
            }
        }
        Ok(Self { theta, eta, sigma })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Column of one order, or `None` for orders outside -2..=2.
    pub fn column(&self, order: i32) -> Option<Vec<f64>> {
        let idx = CURVE_ORDERS.iter().position(|&m| m == order)?;
        Some(self.eta.iter().map(|row| row[idx]).collect())
    }

    /// Model-curve invariant: every η in `[0, 1+1e-6]` and each row sums to at most `1+1e-6`.
    pub fn check_physical(&self) -> Result<()> {
        for (t, row) in self.theta.iter().zip(&self.eta) {
            if row.iter().any(|v| !(-1e-12..=1.0 + 1e-6).contains(v)) || row.iter().sum::<f64>() > 1.0 + 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "efficiencies at theta = {t:e} rad leave the physical range: {row:?}"
                )));
            }
        }
        Ok(())
    }
}

/// `n` uniformly spaced angles from `theta_min` to `theta_max` inclusive.
pub fn uniform_grid(theta_min: f64, theta_max: f64, n: usize) -> Vec<f64> {
    let step = (theta_max - theta_min) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { theta_max } else { theta_min + i as f64 * step })
        .collect()
}

/// Convolved rocking curve over a uniform angle grid.
pub fn rocking_scan(
    grating: &Grating,
    beam: &Beam,
    theta_min: f64,
    theta_max: f64,
    n: usize,
    settings: &SolverSettings,
) -> Result<RockingCurve> {
    ensure_finite("theta_min", theta_min)?;
    ensure_finite("theta_max", theta_max)?;
    if n < 2 {
        return Err(Error::InvalidInput(format!("a rocking scan needs at least 2 points, got {n}")));
    }
    if theta_min >= theta_max {
        return Err(Error::InvalidInput(format!(
            "theta_min {theta_min} must be below theta_max {theta_max}"
        )));
    }
    let theta = uniform_grid(theta_min, theta_max, n);
    let eta = theta
        .par_iter()
        .map(|&t| convolved_efficiencies(grating, beam, t, settings).map(|e| e.central_five()))
        .collect::<Result<Vec<_>>>()?;
    RockingCurve::new(theta, eta, None)
}

/// Full width at half maximum of the peak containing `peak`, with linear
/// interpolation of the half-maximum crossings. `None` when the peak does
/// not fall below half maximum on both sides within the samples.
pub fn peak_fwhm(x: &[f64], y: &[f64], peak: usize) -> Option<f64> {
    let half = 0.5 * y[peak];
    let mut left = None;
    for i in (0..peak).rev() {
        if y[i] < half {
            let t = (half - y[i]) / (y[i + 1] - y[i]);
            left = Some(x[i] + t * (x[i + 1] - x[i]));
            break;
        }
    }
    let mut right = None;
    for i in peak + 1..y.len() {
        if y[i] < half {
            let t = (y[i - 1] - half) / (y[i - 1] - y[i]);
            right = Some(x[i - 1] + t * (x[i] - x[i - 1]));
            break;
        }
    }
    Some(right? - left?)
}

/// Axis-aligned pixel rectangle, half-open: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Diffraction spot assigned to one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spot {
    pub order: i32,
    pub region: Region,
}

/// Integrated 2D detector counts with the spot and background regions.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFrame {
    pub rows: usize,
    pub cols: usize,
    /// Pixel pitch (m).
    pub pixel_pitch: f64,
    /// Row-major counts, `rows * cols` entries.
    pub counts: Vec<u64>,
    pub spots: Vec<Spot>,
    pub background: Region,
}

impl DetectorFrame {
    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    fn region_sum(&self, r: &Region) -> u64 {
        (r.y0..r.y1)
            .map(|row| self.counts[row * self.cols + r.x0..row * self.cols + r.x1].iter().sum::<u64>())
            .sum()
    }

    /// Regions inside the frame, non-empty, pairwise disjoint, one per order.
    pub fn check_geometry(&self) -> Result<()> {
        if self.counts.len() != self.rows * self.cols {
            return Err(Error::Geometry(format!(
                "frame declares {}x{} pixels but holds {} counts",
                self.rows,
                self.cols,
                self.counts.len()
            )));
        }
        if self.spots.is_empty() {
            return Err(Error::Geometry("no spot regions defined".into()));
        }
        let labelled = self
            .spots
            .iter()
            .map(|s| (format!("order {}", s.order), s.region))
            .chain(std::iter::once(("background".to_string(), self.background)));
        let all: Vec<_> = labelled.collect();
        for (label, r) in &all {
            if r.area() == 0 {
                return Err(Error::Geometry(format!("{label} region {r} is empty")));
            }
            if r.x1 > self.cols || r.y1 > self.rows {
                return Err(Error::Geometry(format!(
                    "{label} region {r} exceeds the {}x{} frame",
                    self.rows, self.cols
                )));
            }
        }
        for (i, (la, a)) in all.iter().enumerate() {
            for (lb, b) in &all[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Geometry(format!("{la} region {a} overlaps {lb} region {b}")));
                }
            }
        }
        for (i, a) in self.spots.iter().enumerate() {
            if self.spots[i + 1..].iter().any(|b| b.order == a.order) {
                return Err(Error::Geometry(format!("order {} has more than one spot", a.order)));
            }
        }
        Ok(())
    }
}

/// Background-corrected spot intensities normalised to efficiencies,
/// `η_m = I_m / Σ I`, with `I_m = Σ_spot counts - (background mean) * area`.
///
/// Negative corrected intensities are clamped to zero with a warning.
pub fn reduce_frame(frame: &DetectorFrame) -> Result<BTreeMap<i32, f64>> {
    frame.check_geometry()?;
    let background_mean = frame.region_sum(&frame.background) as f64 / frame.background.area() as f64;
    let mut intensities = BTreeMap::new();
    for spot in &frame.spots {
        let net = frame.region_sum(&spot.region) as f64 - background_mean * spot.region.area() as f64;
        let net = if net < 0.0 {
            warn!(
                "order {}: background-corrected intensity {net} is negative, clamped to 0",
                spot.order
            );
            0.0
        } else {
            net
        };
        intensities.insert(spot.order, net);
    }
    let total: f64 = intensities.values().sum();
    if total <= 0.0 {
        return Err(Error::NoSignal(total));
    }
    Ok(intensities.into_iter().map(|(m, i)| (m, i / total)).collect())
}
