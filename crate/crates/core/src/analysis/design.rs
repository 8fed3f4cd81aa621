//! Search for the tilt at which orders -1, 0 and +1 carry equal intensity.

use rayon::prelude::*;

use crate::cwt::Efficiencies;
use crate::error::{Error, Result};
use crate::instrument::{ForwardModel, SolverSettings};
use crate::model::{Beam, Grating};

/// Imbalance below which a design point counts as a three-port splitter.
pub const BALANCE_THRESHOLD: f64 = 0.05;
/// Tilt resolution of the golden-section refinement (0.05°).
pub const TILT_TOLERANCE: f64 = 0.05 * std::f64::consts::PI / 180.0;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Efficiencies of a grating at normal incidence, judged as a three-port splitter.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    /// Tilt ζ (rad).
    pub tilt: f64,
    /// Index modulation used.
    pub index_modulation: f64,
    pub eta_m2: f64,
    pub eta_m1: f64,
    pub eta_0: f64,
    pub eta_p1: f64,
    pub eta_p2: f64,
    /// `η_-1 + η_0 + η_+1`.
    pub total: f64,
    /// `max - min` of the three central efficiencies.
    pub imbalance: f64,
    /// False when no interior minimum with imbalance below
    /// [`BALANCE_THRESHOLD`] was found.
    pub balanced: bool,
}

/// `(total, imbalance)` of orders -1, 0, +1.
pub fn three_port_metrics(eff: &Efficiencies) -> (f64, f64) {
    let three = [eff.get(-1), eff.get(0), eff.get(1)];
    let max = three.iter().copied().fold(f64::MIN, f64::max);
    let min = three.iter().copied().fold(f64::MAX, f64::min);
    (three.iter().sum(), max - min)
}

fn design_point(grating: &Grating, eff: &Efficiencies, balanced: bool) -> DesignPoint {
    let (total, imbalance) = three_port_metrics(eff);
    DesignPoint {
        tilt: grating.tilt,
        index_modulation: grating.index_modulation,
        eta_m2: eff.get(-2),
        eta_m1: eff.get(-1),
        eta_0: eff.get(0),
        eta_p1: eff.get(1),
        eta_p2: eff.get(2),
        total,
        imbalance,
        balanced,
    }
}

/// Finds the tilt in `tilt_range` minimising the imbalance at θ = 0.
///
/// A uniform scan of `points` tilts picks the smallest-imbalance sample
/// (ties go to the smallest tilt); an interior minimum is then refined by
/// golden-section search to [`TILT_TOLERANCE`]. The range may be given in
/// either order.
pub fn design_three_port(
    grating: &Grating,
    beam: &Beam,
    tilt_range: (f64, f64),
    points: usize,
    settings: &SolverSettings,
) -> Result<DesignPoint> {
    let (lo, hi) = if tilt_range.0 <= tilt_range.1 {
        tilt_range
    } else {
        (tilt_range.1, tilt_range.0)
    };
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::InvalidInput(format!("empty tilt range [{lo}, {hi}]")));
    }
    if points < 3 {
        return Err(Error::InvalidInput(format!("a tilt scan needs at least 3 points, got {points}")));
    }
    let extreme = if lo.abs() > hi.abs() { lo } else { hi };
    let thickest = grating.with_tilt(extreme)?;
    let base = ForwardModel::new(*beam, *settings)?;
    let steps = base.converged_steps(&[thickest], &[0.0])?;
    let model = base.with_fixed_steps(steps);

    let evaluate = |tilt: f64| -> Result<(Grating, Efficiencies)> {
        let g = grating.with_tilt(tilt)?;
        let e = model.evaluate(&g, 0.0)?;
        Ok((g, e))
    };
    let tilts: Vec<f64> = (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 })
        .collect();
    let scanned = tilts
        .par_iter()
        .map(|&t| evaluate(t).map(|(_, e)| three_port_metrics(&e).1))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &eps) in scanned.iter().enumerate() {
        if eps < scanned[best] {
            best = i;
        }
    }
    let interior = best > 0 && best + 1 < points;
    let mut tilt = tilts[best];
    let mut eps = scanned[best];
    if interior {
        let (mut a, mut b) = (tilts[best - 1], tilts[best + 1]);
        let imbalance = |t: f64| evaluate(t).map(|(_, e)| three_port_metrics(&e).1);
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = imbalance(c)?;
        let mut fd = imbalance(d)?;
        while b - a > TILT_TOLERANCE {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = imbalance(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = imbalance(d)?;
            }
        }
        let (t, f) = if fc <= fd { (c, fc) } else { (d, fd) };
        if f < eps || (f == eps && t < tilt) {
            tilt = t;
            eps = f;
        }
    }
    let (g, e) = evaluate(tilt)?;
    Ok(design_point(&g, &e, interior && eps < BALANCE_THRESHOLD))
}

/// Normal-incidence design metrics of `grating` (at its own tilt) for each
/// index modulation in `modulations`. `balanced` is set when the imbalance
/// is below [`BALANCE_THRESHOLD`].
pub fn scan_modulation(
    grating: &Grating,
    beam: &Beam,
    modulations: &[f64],
    settings: &SolverSettings,
) -> Result<Vec<DesignPoint>> {
    let strongest = modulations.iter().copied().fold(0.0, f64::max);
    let base = ForwardModel::new(*beam, *settings)?;
    let steps = base.converged_steps(&[grating.with_index_modulation(strongest)?], &[0.0])?;
    let model = base.with_fixed_steps(steps);
    modulations
        .par_iter()
        .map(|&dn| {
            let g = grating.with_index_modulation(dn)?;
            let e = model.evaluate(&g, 0.0)?;
            let (_, eps) = three_port_metrics(&e);
            Ok(design_point(&g, &e, eps < BALANCE_THRESHOLD))
        })
        .collect()
}
