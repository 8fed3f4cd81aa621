//! Weighted least-squares fit of the convolved forward model to a measured
//! rocking curve, by damped Gauss–Newton (Levenberg–Marquardt) iterations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument::{ForwardModel, RockingCurve, SolverSettings};
use crate::model::{Beam, Grating};

/// Uncertainty assumed per efficiency point when the data carry none.
pub const DEFAULT_SIGMA: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 200;

const RELATIVE_STEP: f64 = 1e-6;
const CHI2_TOLERANCE: f64 = 1e-8;
const GRADIENT_TOLERANCE: f64 = 1e-10;
const CONDITION_LIMIT: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitParameter {
    /// Index modulation Δn.
    IndexModulation,
    /// Physical thickness d (m); the tilt stays frozen.
    Thickness,
    /// Zero error of the rocking axis (rad): the true incidence angle is
    /// the recorded angle minus this offset.
    ThetaOffset,
}

impl FitParameter {
    pub fn name(&self) -> &'static str {
        match self {
            Self::IndexModulation => "dn",
            Self::Thickness => "d",
            Self::ThetaOffset => "offset",
        }
    }
}

impl std::str::FromStr for FitParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dn" => Ok(Self::IndexModulation),
            "d" => Ok(Self::Thickness),
            "offset" => Ok(Self::ThetaOffset),
            other => Err(Error::InvalidInput(format!(
                "unknown fit parameter '{other}', expected dn, d or offset"
            ))),
        }
    }
}

/// A free parameter with its bounds and starting value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterSpec {
    pub parameter: FitParameter,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub data: RockingCurve,
    /// Model template. Spacing, tilt and mean index stay frozen; Δn and d
    /// are used as given unless they are free.
    pub grating: Grating,
    pub beam: Beam,
    pub settings: SolverSettings,
    /// Rocking-axis offset used when it is not free.
    pub theta_offset: f64,
    pub free: Vec<ParameterSpec>,
    pub max_iter: usize,
    /// Used for every point when `data.sigma` is `None`.
    pub default_sigma: f64,
}

impl FitProblem {
    pub fn new(data: RockingCurve, grating: Grating, beam: Beam, free: Vec<ParameterSpec>) -> Self {
        Self {
            data,
            grating,
            beam,
            settings: SolverSettings::default(),
            theta_offset: 0.0,
            free,
            max_iter: DEFAULT_MAX_ITER,
            default_sigma: DEFAULT_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grating.validated()?;
        if self.free.is_empty() {
            return Err(Error::InvalidInput("no free parameters".into()));
        }
        for (i, p) in self.free.iter().enumerate() {
            let name = p.parameter.name();
            if !(p.lower.is_finite() && p.upper.is_finite() && p.initial.is_finite()) {
                return Err(Error::InvalidInput(format!("{name}: bounds and initial value must be finite")));
            }
            if p.lower >= p.upper {
                return Err(Error::InvalidInput(format!(
                    "{name}: lower bound {} must be below upper bound {}",
                    p.lower, p.upper
                )));
            }
            if !(p.lower..=p.upper).contains(&p.initial) {
                return Err(Error::InvalidInput(format!(
                    "{name}: initial value {} lies outside [{}, {}]",
                    p.initial, p.lower, p.upper
                )));
            }
            let physical_floor = match p.parameter {
                FitParameter::IndexModulation => p.lower >= 0.0,
                FitParameter::Thickness => p.lower > 0.0,
                FitParameter::ThetaOffset => true,
            };
            if !physical_floor {
                return Err(Error::InvalidInput(format!("{name}: lower bound {} is unphysical", p.lower)));
            }
            if self.free[..i].iter().any(|q| q.parameter == p.parameter) {
                return Err(Error::InvalidInput(format!("{name} is listed twice")));
            }
        }
        if self.data.len() < 3 * self.free.len() {
            return Err(Error::InvalidInput(format!(
                "{} angles are too few for {} free parameters (need 3 per parameter)",
                self.data.len(),
                self.free.len()
            )));
        }
        if !(self.default_sigma.is_finite() && self.default_sigma > 0.0) {
            return Err(Error::InvalidInput("default sigma must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("iteration cap must be positive".into()));
        }
        Ok(())
    }

    fn apply(&self, values: &[f64]) -> (Grating, f64) {
        let mut g = self.grating;
        let mut offset = self.theta_offset;
        for (spec, &v) in self.free.iter().zip(values) {
            match spec.parameter {
                FitParameter::IndexModulation => g.index_modulation = v,
                FitParameter::Thickness => g.thickness = v,
                FitParameter::ThetaOffset => offset = v,
            }
        }
        (g, offset)
    }

    fn sigma(&self, j: usize) -> f64 {
        self.data.sigma.as_ref().map_or(self.default_sigma, |s| s[j])
    }
}

/// Whether a best-fit value sits on one of its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterBound {
    Free,
    AtLower,
    AtUpper,
}

impl std::fmt::Display for ParameterBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Free => "free",
            Self::AtLower => "at-lower",
            Self::AtUpper => "at-upper",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    pub values: Vec<f64>,
    /// `None` when the local quadratic model is singular.
    pub std_errors: Option<Vec<f64>>,
    /// Unit parameter-space direction along which the objective is flat,
    /// reported instead of standard errors.
    pub degenerate_direction: Option<Vec<f64>>,
    pub bound_status: Vec<ParameterBound>,
    pub chi_square: f64,
    pub reduced_chi_square: f64,
    pub iterations: usize,
    pub converged: bool,
    /// χ² of the starting point followed by every accepted iterate.
    pub chi_square_history: Vec<f64>,
    /// Template grating with the best-fit values applied.
    pub grating: Grating,
    pub theta_offset: f64,
}

impl FitResult {
    pub fn value(&self, parameter: FitParameter) -> Option<f64> {
        let i = self.parameters.iter().position(|&p| p == parameter)?;
        Some(self.values[i])
    }

    pub fn std_error(&self, parameter: FitParameter) -> Option<f64> {
        let i = self.parameters.iter().position(|&p| p == parameter)?;
        self.std_errors.as_ref().map(|s| s[i])
    }
}

struct Objective<'a> {
    problem: &'a FitProblem,
    model: ForwardModel,
}

impl Objective<'_> {
    fn residuals(&self, values: &[f64]) -> Result<DVector<f64>> {
        let (grating, offset) = self.problem.apply(values);
        let data = &self.problem.data;
        let rows = data
            .theta
            .par_iter()
            .map(|&t| self.model.evaluate(&grating, t - offset).map(|e| e.central_five()))
            .collect::<Result<Vec<_>>>()?;
        let mut r = DVector::zeros(5 * data.len());
        for (j, (model, measured)) in rows.iter().zip(&data.eta).enumerate() {
            let sigma = self.problem.sigma(j);
            for k in 0..5 {
                r[5 * j + k] = (model[k] - measured[k]) / sigma;
            }
        }
        Ok(r)
    }

    /// Central-difference Jacobian with respect to the bound-width-scaled
    /// parameters `u_i = p_i / (upper_i - lower_i)`.
    fn jacobian(&self, values: &[f64]) -> Result<DMatrix<f64>> {
        let specs = &self.problem.free;
        let rows = 5 * self.problem.data.len();
        let mut jac = DMatrix::zeros(rows, specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let width = spec.upper - spec.lower;
            let h = RELATIVE_STEP * values[i].abs().max(width);
            let hi = (values[i] + h).min(spec.upper);
            let lo = (values[i] - h).max(spec.lower);
            let mut plus = values.to_vec();
            plus[i] = hi;
            let mut minus = values.to_vec();
            minus[i] = lo;
            let column = (self.residuals(&plus)? - self.residuals(&minus)?) * (width / (hi - lo));
            jac.set_column(i, &column);
        }
        Ok(jac)
    }
}

fn clamp_to_bounds(specs: &[ParameterSpec], values: &mut [f64]) {
    for (v, s) in values.iter_mut().zip(specs) {
        *v = v.clamp(s.lower, s.upper);
    }
}

/// Minimises `χ² = Σ (η_model - η_data)² / σ²` over the free parameters.
///
/// Steps are only accepted when they lower χ², so the objective decreases
/// monotonically. The run stops when an accepted step lowers χ² by less than
/// a relative 1e-8, when the gradient vanishes, or when no damping yields a
/// decrease. Hitting `max_iter` returns the best point with `converged = false`.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let specs = &problem.free;
    let widths: Vec<f64> = specs.iter().map(|s| s.upper - s.lower).collect();

    let base = ForwardModel::new(problem.beam, problem.settings)?;
    let steps = calibrate_steps(problem, &base)?;
    let objective = Objective {
        problem,
        model: base.with_fixed_steps(steps),
    };

    let mut values: Vec<f64> = specs.iter().map(|s| s.initial).collect();
    let mut residuals = objective.residuals(&values)?;
    let mut chi2 = residuals.norm_squared();
    let mut history = vec![chi2];
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < problem.max_iter {
        iterations += 1;
        let jac = objective.jacobian(&values)?;
        let gradient = jac.transpose() * &residuals;
        if gradient.amax() <= GRADIENT_TOLERANCE * (1.0 + chi2) {
            converged = true;
            break;
        }
        let normal = jac.transpose() * &jac;
        let mut accepted = false;
        while damping <= MAX_DAMPING {
            let mut lhs = normal.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += damping * normal[(i, i)].max(1e-30);
            }
            let Some(chol) = lhs.cholesky() else {
                damping *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&gradient));
            let mut trial: Vec<f64> = values.iter().zip(step.iter()).zip(&widths).map(|((v, s), w)| v + s * w).collect();
            clamp_to_bounds(specs, &mut trial);
            let trial_residuals = objective.residuals(&trial)?;
            let trial_chi2 = trial_residuals.norm_squared();
            if trial_chi2 < chi2 {
                let relative = (chi2 - trial_chi2) / chi2;
                values = trial;
                residuals = trial_residuals;
                chi2 = trial_chi2;
                history.push(chi2);
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                if relative < CHI2_TOLERANCE {
                    converged = true;
                }
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            // no damping lowers χ²: a numerical minimum
            converged = true;
        }
        if converged {
            break;
        }
    }

    let jac = objective.jacobian(&values)?;
    let normal = jac.transpose() * &jac;
    let (std_errors, degenerate_direction) = local_uncertainties(&normal, &widths);
    let bound_status = values
        .iter()
        .zip(specs)
        .map(|(&v, s)| {
            let tol = 1e-9 * (s.upper - s.lower);
            if v - s.lower <= tol {
                ParameterBound::AtLower
            } else if s.upper - v <= tol {
                ParameterBound::AtUpper
            } else {
                ParameterBound::Free
            }
        })
        .collect();
    let dof = (residuals.len() as f64 - specs.len() as f64).max(1.0);
    let (grating, theta_offset) = problem.apply(&values);
    Ok(FitResult {
        parameters: specs.iter().map(|s| s.parameter).collect(),
        values,
        std_errors,
        degenerate_direction,
        bound_status,
        chi_square: chi2,
        reduced_chi_square: chi2 / dof,
        iterations,
        converged,
        chi_square_history: history,
        grating,
        theta_offset,
    })
}

/// Step count that converges at every corner of the parameter box.
fn calibrate_steps(problem: &FitProblem, model: &ForwardModel) -> Result<usize> {
    let specs = &problem.free;
    let mut corners = Vec::new();
    for mask in 0..(1usize << specs.len()) {
        let values: Vec<f64> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| if mask & (1 << i) != 0 { s.upper } else { s.lower })
            .collect();
        corners.push(problem.apply(&values));
    }
    let initial: Vec<f64> = specs.iter().map(|s| s.initial).collect();
    corners.push(problem.apply(&initial));
    let (first, last) = (problem.data.theta[0], *problem.data.theta.last().unwrap());
    let mut steps = problem.settings.steps;
    for (grating, offset) in corners {
        if grating.index_modulation == 0.0 {
            continue;
        }
        steps = steps.max(model.converged_steps(&[grating], &[first - offset, last - offset])?);
    }
    Ok(steps)
}

/// Standard errors from the inverse of `JᵀJ` (scaled parameters), or the
/// flat direction when that matrix is numerically singular.
fn local_uncertainties(normal: &DMatrix<f64>, widths: &[f64]) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let eig = SymmetricEigen::new(normal.clone());
    let (imin, &min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one parameter");
    let max = eig.eigenvalues.amax();
    if !(max > 0.0) || min <= CONDITION_LIMIT * max {
        let v = eig.eigenvectors.column(imin);
        let physical: Vec<f64> = v.iter().zip(widths).map(|(x, w)| x * w).collect();
        let norm = physical.iter().map(|x| x * x).sum::<f64>().sqrt();
        return (None, Some(physical.iter().map(|x| x / norm).collect()));
    }
    let inverse = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    let errors = widths
        .iter()
        .enumerate()
        .map(|(i, w)| w * inverse[(i, i)].sqrt())
        .collect();
    (Some(errors), None)
}

/// Adds seeded Gaussian noise of standard deviation `sigma` to every
/// efficiency and records `sigma` as the uncertainty column.
pub fn add_noise(curve: &RockingCurve, sigma: f64, seed: u64) -> Result<RockingCurve> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidInput(format!("noise sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let eta = curve
        .eta
        .iter()
        .map(|row| {
            let mut out = *row;
            for v in out.iter_mut() {
                *v += normal.sample(&mut rng);
            }
            out
        })
        .collect();
    RockingCurve::new(curve.theta.clone(), eta, Some(vec![sigma; curve.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::rocking_scan;

    const NM: f64 = 1e-9;
    const UM: f64 = 1e-6;

    fn setup() -> (Grating, Beam, SolverSettings) {
        let g = Grating::new(UM, 91.0 * UM, 4.0e-5).unwrap();
        let beam = Beam::new(8.0 * NM, 0.1, 1e-3).unwrap();
        let settings = SolverSettings {
            nodes: 3,
            ..SolverSettings::default()
        };
        (g, beam, settings)
    }

    fn synthetic(g: &Grating, beam: &Beam, settings: &SolverSettings) -> RockingCurve {
        let mut c = rocking_scan(g, beam, -12e-3, 12e-3, 13, settings).unwrap();
        c.sigma = Some(vec![0.02; c.len()]);
        c
    }

    #[test]
    fn exact_data_returns_the_guess() {
        let (g, beam, settings) = setup();
        let data = synthetic(&g, &beam, &settings);
        let mut p = FitProblem::new(
            data,
            g,
            beam,
            vec![
                ParameterSpec {
                    parameter: FitParameter::IndexModulation,
                    lower: 1e-5,
                    upper: 8e-5,
                    initial: 4.0e-5,
                },
                ParameterSpec {
                    parameter: FitParameter::Thickness,
                    lower: 50.0 * UM,
                    upper: 150.0 * UM,
                    initial: 91.0 * UM,
                },
            ],
        );
        p.settings = settings;
        let r = fit(&p).unwrap();
        assert!(r.converged);
        assert!(r.chi_square < 1e-6, "{}", r.chi_square);
        assert!((r.values[0] / 4.0e-5 - 1.0).abs() < 1e-6);
        assert!((r.values[1] / (91.0 * UM) - 1.0).abs() < 1e-6);
        assert!(r.std_errors.is_some());
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let (g, beam, settings) = setup();
        let data = synthetic(&g, &beam, &settings);
        let spec = ParameterSpec {
            parameter: FitParameter::IndexModulation,
            lower: 1e-5,
            upper: 8e-5,
            initial: 9e-5,
        };
        let p = FitProblem::new(data.clone(), g, beam, vec![spec]);
        assert!(matches!(fit(&p), Err(Error::InvalidInput(_))));
        let p = FitProblem::new(data.clone(), g, beam, vec![]);
        assert!(fit(&p).is_err());
        let twice = ParameterSpec { initial: 4e-5, ..spec };
        let p = FitProblem::new(data, g, beam, vec![twice, twice]);
        assert!(fit(&p).is_err());
    }

    #[test]
    fn flat_direction_is_reported() {
        // with zero modulation the curve ignores the thickness entirely
        let (g, beam, settings) = setup();
        let g0 = g.with_index_modulation(0.0).unwrap();
        let data = synthetic(&g0, &beam, &settings);
        let mut p = FitProblem::new(
            data,
            g0,
            beam,
            vec![ParameterSpec {
                parameter: FitParameter::Thickness,
                lower: 50.0 * UM,
                upper: 150.0 * UM,
                initial: 91.0 * UM,
            }],
        );
        p.settings = settings;
        let r = fit(&p).unwrap();
        assert!(r.std_errors.is_none());
        assert_eq!(r.degenerate_direction.as_ref().map(|d| d.iter().map(|v| v.abs()).collect::<Vec<_>>()), Some(vec![1.0]));
    }

    #[test]
    fn noise_is_reproducible() {
        let (g, beam, settings) = setup();
        let data = synthetic(&g, &beam, &settings);
        let a = add_noise(&data, 0.02, 7).unwrap();
        let b = add_noise(&data, 0.02, 7).unwrap();
        let c = add_noise(&data, 0.02, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.sigma.as_ref().unwrap()[0], 0.02);
    }
}
