//! Inverse problems and design on top of the instrument forward model.

mod design;
mod fit;
mod pendellosung;

pub use design::{design_three_port, scan_modulation, three_port_metrics, DesignPoint, BALANCE_THRESHOLD, TILT_TOLERANCE};
pub use fit::{add_noise, fit, FitParameter, FitProblem, FitResult, ParameterBound, ParameterSpec, DEFAULT_MAX_ITER, DEFAULT_SIGMA};
pub use pendellosung::{pendelloesung_scan, IndexScaling, PendelloesungCurve, ScanVariable};
