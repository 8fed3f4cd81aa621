//! Flat `section.key = value` run configuration.
//!
//! Lengths accept the suffixes `nm`, `um` (or `µm`), `mm`, `cm` and `m`; a
//! bare number is in meters. Tilts are in degrees and rocking angles in
//! milliradians. `#` starts a comment. Every key may appear once, except
//! `frame.region`, which is repeated once per region.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use holograting::analysis::{FitParameter, DEFAULT_MAX_ITER, DEFAULT_SIGMA};
use holograting::instrument::{KernelShape, SolverSettings};
use holograting::io::{parse_region, RegionSpec};
use holograting::model::{Beam, Grating};

/// Scalar types the config accessors can parse.
trait Scalar: Sized {
    fn parse_value(text: &str) -> Option<Self>;
}

impl Scalar for f64 {
    fn parse_value(text: &str) -> Option<Self> {
        text.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

impl Scalar for usize {
    fn parse_value(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}

impl Scalar for u64 {
    fn parse_value(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

const KEYS: &[&str] = &[
    "grating.spacing",
    "grating.thickness",
    "grating.index_modulation",
    "grating.mean_index",
    "grating.tilt_deg",
    "beam.wavelength",
    "beam.spread",
    "beam.divergence_mrad",
    "beam.kernel",
    "solver.orders",
    "solver.steps",
    "solver.nodes",
    "rock.theta_min_mrad",
    "rock.theta_max_mrad",
    "rock.points",
    "rock.noise",
    "fit.free",
    "fit.dn_min",
    "fit.dn_max",
    "fit.dn_init",
    "fit.d_min",
    "fit.d_max",
    "fit.d_init",
    "fit.offset_min_mrad",
    "fit.offset_max_mrad",
    "fit.offset_init_mrad",
    "fit.max_iter",
    "fit.default_sigma",
    "design.tilt_min_deg",
    "design.tilt_max_deg",
    "design.points",
    "zernike.wavelength",
    "zernike.splitter_spacing",
    "zernike.separation",
    "zernike.beam_width",
    "zernike.fringe_period",
    "zernike.half_angle_mrad",
    "zernike.amplitudes",
    "zernike.phase",
    "zernike.phase_shift_waves",
    "zernike.x_min",
    "zernike.x_max",
    "zernike.x_points",
    "zernike.z_min",
    "zernike.z_max",
    "zernike.z_points",
    "zernike.analyzer_period",
    "zernike.analyzer_duty",
    "zernike.analyzer_points",
    "run.seed",
    "frame.region",
];

const REPEATABLE: &[&str] = &["frame.region"];

#[derive(Debug, Clone, PartialEq)]
pub struct RockConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
    /// Gaussian noise σ added to the curve; zero writes the clean model.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub free: Vec<FitParameter>,
    pub dn: Bounds,
    /// Physical thickness bounds (m).
    pub d: Bounds,
    /// θ offset bounds (rad).
    pub offset: Bounds,
    pub max_iter: usize,
    pub default_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    pub tilt_min: f64,
    pub tilt_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeConfig {
    pub wavelength: f64,
    pub splitter_spacing: f64,
    pub separation: f64,
    pub beam_width: f64,
    pub fringe_period: f64,
    /// Overrides the half-angle derived from the fringe period (rad).
    pub half_angle: Option<f64>,
    pub amplitudes: [f64; 3],
    pub phase: f64,
    pub phase_shift_waves: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub z_points: usize,
    pub analyzer_period: f64,
    pub analyzer_duty: f64,
    pub analyzer_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grating: Grating,
    pub beam: Beam,
    pub solver: SolverSettings,
    pub rock: RockConfig,
    pub fit: FitConfig,
    pub design: DesignConfig,
    pub zernike: ZernikeConfig,
    pub seed: u64,
    pub regions: Vec<RegionSpec>,
}

/// Raw `key -> [(line, value)]` entries.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    entries: BTreeMap<String, Vec<(usize, String)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `section.key = value`", i + 1)))?;
            raw.insert(key.trim(), value.trim(), i + 1)?;
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Applies a `key=value` override; it replaces any value from the file.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override `{assignment}` is not `key=value`")))?;
        let key = key.trim();
        if !REPEATABLE.contains(&key) {
            self.entries.remove(key);
        }
        self.insert(key, value.trim(), 0)
    }

    fn insert(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let at = |l: usize| if l == 0 { "override".to_string() } else { format!("line {l}") };
        if !KEYS.contains(&key) {
            return Err(ConfigError(format!("{}: unknown key `{key}`", at(line))));
        }
        let slot = self.entries.entry(key.to_string()).or_default();
        if let Some((first, _)) = slot.first() {
            if !REPEATABLE.contains(&key) {
                return Err(ConfigError(format!(
                    "{}: duplicate key `{key}` (first set at {})",
                    at(line),
                    at(*first)
                )));
            }
        }
        slot.push((line, value.to_string()));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key).and_then(|v| v.first())
    }

    fn fail(&self, key: &str, msg: impl std::fmt::Display) -> ConfigError {
        match self.get(key) {
            Some((0, _)) => ConfigError(format!("override `{key}`: {msg}")),
            Some((line, _)) => ConfigError(format!("line {line}: `{key}`: {msg}")),
            None => ConfigError(format!("`{key}`: {msg}")),
        }
    }

    fn scalar<T: Scalar>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some((_, v)) => T::parse_value(v).ok_or_else(|| self.fail(key, format!("cannot read `{v}`"))),
        }
    }

    fn opt_scalar<T: Scalar>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((_, v)) => T::parse_value(v)
                .map(Some)
                .ok_or_else(|| self.fail(key, format!("cannot read `{v}`"))),
        }
    }

    fn length(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.opt_length(key)?.unwrap_or(default))
    }

    fn opt_length(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some((_, v)) => parse_length(v).map(Some).map_err(|e| self.fail(key, e)),
        }
    }
}

/// Parses a length such as `1.7 nm`, `91.15um` or `0.01` (meters).
pub fn parse_length(text: &str) -> std::result::Result<f64, String> {
    // dividing keeps decimal input correctly rounded: `91 um` is the double nearest 9.1e-5
    const UNITS: [(&str, f64); 6] = [("nm", 1e9), ("um", 1e6), ("µm", 1e6), ("mm", 1e3), ("cm", 1e2), ("m", 1.0)];
    let text = text.trim();
    let (number, scale) = UNITS
        .iter()
        .find_map(|&(unit, scale)| text.strip_suffix(unit).map(|n| (n, scale)))
        .unwrap_or((text, 1.0));
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("cannot read `{text}` as a length"))?;
    let v = value / scale;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("length `{text}` is not finite"))
    }
}

fn fmt_length(v: f64) -> String {
    if v == 0.0 {
        "0 m".into()
    } else {
        format!("{v:e} m")
    }
}

/// Unit-converted value rounded to 12 significant digits, which hides
/// conversion noise such as `29.999999999999996` degrees.
fn fmt_converted(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    rounded.to_string()
}

fn fit_parameter_list(text: &str) -> std::result::Result<Vec<FitParameter>, String> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: FitParameter = item.parse().map_err(|e: holograting::Error| e.to_string())?;
        if out.contains(&p) {
            return Err(format!("`{item}` listed twice"));
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err("at least one free parameter is required".into());
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let invalid = |key: &str, e: holograting::Error| raw.fail(key, e);

        let spacing = raw.length("grating.spacing", 1e-6)?;
        let thickness = raw.length("grating.thickness", 91.15e-6)?;
        let dn = raw.scalar("grating.index_modulation", 2.52e-6)?;
        let mean_index = raw.scalar("grating.mean_index", 1.0)?;
        let tilt_deg = raw.scalar("grating.tilt_deg", 56.0)?;
        let grating = Grating::new(spacing, thickness, dn)
            .and_then(|g| g.with_mean_index(mean_index))
            .and_then(|g| g.with_tilt(tilt_deg.to_radians()))
            .and_then(Grating::validated)
            .map_err(|e| invalid("grating.spacing", e))?;

        let wavelength = raw.length("beam.wavelength", 1.7e-9)?;
        let spread = raw.scalar("beam.spread", 0.1)?;
        let divergence = raw.scalar("beam.divergence_mrad", 1.0)? * 1e-3;
        let beam = Beam::new(wavelength, spread, divergence).map_err(|e| invalid("beam.wavelength", e))?;
        let kernel = match raw.get("beam.kernel") {
            None => KernelShape::Gaussian,
            Some((_, v)) => v.parse().map_err(|e| invalid("beam.kernel", e))?,
        };

        let solver = SolverSettings {
            max_order: raw.scalar("solver.orders", holograting::cwt::DEFAULT_MAX_ORDER)?,
            steps: raw.scalar("solver.steps", holograting::cwt::DEFAULT_STEPS)?,
            nodes: raw.scalar("solver.nodes", holograting::instrument::DEFAULT_NODES)?,
            kernel,
        };
        if solver.max_order < 2 {
            return Err(raw.fail("solver.orders", "must be at least 2"));
        }
        if solver.steps < holograting::cwt::MIN_STEPS {
            return Err(raw.fail("solver.steps", format!("must be at least {}", holograting::cwt::MIN_STEPS)));
        }
        if solver.nodes == 0 {
            return Err(raw.fail("solver.nodes", "must be positive"));
        }

        let rock = RockConfig {
            theta_min: raw.scalar("rock.theta_min_mrad", -5.0)? * 1e-3,
            theta_max: raw.scalar("rock.theta_max_mrad", 5.0)? * 1e-3,
            points: raw.scalar("rock.points", 101)?,
            noise: raw.scalar("rock.noise", 0.0)?,
        };
        if rock.noise < 0.0 {
            return Err(raw.fail("rock.noise", "must be non-negative"));
        }

        let free = match raw.get("fit.free") {
            None => vec![FitParameter::IndexModulation, FitParameter::Thickness],
            Some((_, v)) => fit_parameter_list(v).map_err(|e| raw.fail("fit.free", e))?,
        };
        let fit = FitConfig {
            free,
            dn: Bounds {
                min: raw.scalar("fit.dn_min", 0.25 * dn)?,
                max: raw.scalar("fit.dn_max", 4.0 * dn)?,
                init: raw.scalar("fit.dn_init", dn)?,
            },
            d: Bounds {
                min: raw.length("fit.d_min", 0.5 * thickness)?,
                max: raw.length("fit.d_max", 2.0 * thickness)?,
                init: raw.length("fit.d_init", thickness)?,
            },
            offset: Bounds {
                min: raw.scalar("fit.offset_min_mrad", -2.0)? * 1e-3,
                max: raw.scalar("fit.offset_max_mrad", 2.0)? * 1e-3,
                init: raw.scalar("fit.offset_init_mrad", 0.0)? * 1e-3,
            },
            max_iter: raw.scalar("fit.max_iter", DEFAULT_MAX_ITER)?,
            default_sigma: raw.scalar("fit.default_sigma", DEFAULT_SIGMA)?,
        };
        if !(fit.default_sigma > 0.0) {
            return Err(raw.fail("fit.default_sigma", "must be positive"));
        }

        let design = DesignConfig {
            tilt_min: raw.scalar("design.tilt_min_deg", 30.0)?.to_radians(),
            tilt_max: raw.scalar("design.tilt_max_deg", 70.0)?.to_radians(),
            points: raw.scalar("design.points", 41)?,
        };

        let fringe_period = raw.length("zernike.fringe_period", 1e-6)?;
        let amplitudes = match raw.get("zernike.amplitudes") {
            None => [1.0, 1.0, 1.0],
            Some((_, v)) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| raw.fail("zernike.amplitudes", format!("cannot read `{v}`")))?;
                <[f64; 3]>::try_from(parts)
                    .map_err(|_| raw.fail("zernike.amplitudes", "expected three comma-separated values"))?
            }
        };
        let zernike = ZernikeConfig {
            wavelength: raw.length("zernike.wavelength", 8e-9)?,
            splitter_spacing: raw.length("zernike.splitter_spacing", 0.5e-6)?,
            separation: raw.length("zernike.separation", 1e-2)?,
            beam_width: raw.length("zernike.beam_width", 1e-3)?,
            fringe_period,
            half_angle: raw.opt_scalar::<f64>("zernike.half_angle_mrad")?.map(|v| v * 1e-3),
            amplitudes,
            phase: raw.scalar("zernike.phase", FRAC_PI_2)?,
            phase_shift_waves: raw.scalar("zernike.phase_shift_waves", 0.01)?,
            x_min: raw.length("zernike.x_min", -2.0 * fringe_period)?,
            x_max: raw.length("zernike.x_max", 2.0 * fringe_period)?,
            x_points: raw.scalar("zernike.x_points", 201)?,
            z_min: raw.length("zernike.z_min", 0.0)?,
            z_max: raw.length("zernike.z_max", 2e-3)?,
            z_points: raw.scalar("zernike.z_points", 101)?,
            analyzer_period: raw.length("zernike.analyzer_period", fringe_period)?,
            analyzer_duty: raw.scalar("zernike.analyzer_duty", 0.5)?,
            analyzer_points: raw.scalar("zernike.analyzer_points", 21)?,
        };
        if zernike.x_points < 2 || zernike.z_points < 1 || zernike.analyzer_points < 1 {
            return Err(ConfigError("zernike grids need x_points >= 2, z_points >= 1, analyzer_points >= 1".into()));
        }

        let regions = raw
            .entries
            .get("frame.region")
            .map(|list| {
                list.iter()
                    .map(|(line, v)| {
                        parse_region(v).map_err(|e| ConfigError(format!("line {line}: `frame.region`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?
            .unwrap_or_default();

        Ok(Self {
            grating,
            beam,
            solver,
            rock,
            fit,
            design,
            zernike,
            seed: raw.scalar("run.seed", 0)?,
            regions,
        })
    }

    /// Every key with its resolved value, in a form [`RawConfig::parse`] reads back.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let g = &self.grating;
        kv("grating.spacing", fmt_length(g.spacing));
        kv("grating.thickness", fmt_length(g.thickness));
        kv("grating.index_modulation", format!("{:e}", g.index_modulation));
        kv("grating.mean_index", g.mean_index.to_string());
        kv("grating.tilt_deg", fmt_converted(g.tilt.to_degrees()));
        kv("beam.wavelength", fmt_length(self.beam.wavelength));
        kv("beam.spread", self.beam.relative_spread.to_string());
        kv("beam.divergence_mrad", fmt_converted(self.beam.divergence * 1e3));
        kv("beam.kernel", self.solver.kernel.to_string());
        kv("solver.orders", self.solver.max_order.to_string());
        kv("solver.steps", self.solver.steps.to_string());
        kv("solver.nodes", self.solver.nodes.to_string());
        kv("rock.theta_min_mrad", fmt_converted(self.rock.theta_min * 1e3));
        kv("rock.theta_max_mrad", fmt_converted(self.rock.theta_max * 1e3));
        kv("rock.points", self.rock.points.to_string());
        kv("rock.noise", self.rock.noise.to_string());
        let free: Vec<&str> = self.fit.free.iter().map(FitParameter::name).collect();
        kv("fit.free", free.join(","));
        kv("fit.dn_min", format!("{:e}", self.fit.dn.min));
        kv("fit.dn_max", format!("{:e}", self.fit.dn.max));
        kv("fit.dn_init", format!("{:e}", self.fit.dn.init));
        kv("fit.d_min", fmt_length(self.fit.d.min));
        kv("fit.d_max", fmt_length(self.fit.d.max));
        kv("fit.d_init", fmt_length(self.fit.d.init));
        kv("fit.offset_min_mrad", fmt_converted(self.fit.offset.min * 1e3));
        kv("fit.offset_max_mrad", fmt_converted(self.fit.offset.max * 1e3));
        kv("fit.offset_init_mrad", fmt_converted(self.fit.offset.init * 1e3));
        kv("fit.max_iter", self.fit.max_iter.to_string());
        kv("fit.default_sigma", self.fit.default_sigma.to_string());
        kv("design.tilt_min_deg", fmt_converted(self.design.tilt_min.to_degrees()));
        kv("design.tilt_max_deg", fmt_converted(self.design.tilt_max.to_degrees()));
        kv("design.points", self.design.points.to_string());
        let z = &self.zernike;
        kv("zernike.wavelength", fmt_length(z.wavelength));
        kv("zernike.splitter_spacing", fmt_length(z.splitter_spacing));
        kv("zernike.separation", fmt_length(z.separation));
        kv("zernike.beam_width", fmt_length(z.beam_width));
        kv("zernike.fringe_period", fmt_length(z.fringe_period));
        if let Some(a) = z.half_angle {
            kv("zernike.half_angle_mrad", fmt_converted(a * 1e3));
        }
        let amps: Vec<String> = z.amplitudes.iter().map(f64::to_string).collect();
        kv("zernike.amplitudes", amps.join(","));
        kv("zernike.phase", z.phase.to_string());
        kv("zernike.phase_shift_waves", z.phase_shift_waves.to_string());
        kv("zernike.x_min", fmt_length(z.x_min));
        kv("zernike.x_max", fmt_length(z.x_max));
        kv("zernike.x_points", z.x_points.to_string());
        kv("zernike.z_min", fmt_length(z.z_min));
        kv("zernike.z_max", fmt_length(z.z_max));
        kv("zernike.z_points", z.z_points.to_string());
        kv("zernike.analyzer_period", fmt_length(z.analyzer_period));
        kv("zernike.analyzer_duty", z.analyzer_duty.to_string());
        kv("zernike.analyzer_points", z.analyzer_points.to_string());
        kv("run.seed", self.seed.to_string());
        for r in &self.regions {
            kv("frame.region", r.to_string());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_with_units() {
        let cases = [
            ("1.7 nm", 1.7e-9),
            ("91.15um", 91.15e-6),
            ("91.15 µm", 91.15e-6),
            ("1 cm", 1e-2),
            ("2.5mm", 2.5e-3),
            ("3.75 m", 3.75),
            ("1e-6", 1e-6),
            ("1e-6 m", 1e-6),
            ("2E3 nm", 2e-6),
        ];
        for (text, want) in cases {
            let got = parse_length(text).unwrap();
            assert!((got / want - 1.0).abs() < 1e-15, "{text}: {got}");
        }
        for bad in ["", "nm", "1 furlong", "1.2.3 mm", "inf m"] {
            assert!(parse_length(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn strict_keys() {
        assert!(RawConfig::parse("grating.spacing = 1 um\ngrating.spacng = 2 um\n").is_err());
        assert!(RawConfig::parse("grating.spacing = 1 um\ngrating.spacing = 2 um\n").is_err());
        assert!(RawConfig::parse("grating.spacing 1 um\n").is_err());
        let raw = RawConfig::parse("frame.region = order=0:0,0,2,2\nframe.region = background:4,0,6,2\n").unwrap();
        assert_eq!(RunConfig::resolve(&raw).unwrap().regions.len(), 2);
    }

    #[test]
    fn units_are_converted() {
        let raw = RawConfig::parse(
            "# splitter\ngrating.tilt_deg = 30  # degrees\nrock.theta_min_mrad = -2\nbeam.wavelength = 8 nm\n",
        )
        .unwrap();
        let c = RunConfig::resolve(&raw).unwrap();
        assert!((c.grating.tilt - 30f64.to_radians()).abs() < 1e-15);
        assert!((c.rock.theta_min + 2e-3).abs() < 1e-18);
        assert_eq!(c.beam.wavelength, 8e-9);
    }

    #[test]
    fn emitted_config_reads_back() {
        let raw = RawConfig::parse(
            "grating.thickness = 163 um\nzernike.half_angle_mrad = 4\nfit.free = dn,offset\nframe.region = background:1,2,3,4\n",
        )
        .unwrap();
        let c = RunConfig::resolve(&raw).unwrap();
        let text = c.emit();
        let back = RunConfig::resolve(&RawConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.emit(), text);
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse("solver.orders = 4\n").unwrap();
        raw.set("solver.orders=6").unwrap();
        assert_eq!(RunConfig::resolve(&raw).unwrap().solver.max_order, 6);
        assert!(raw.set("solver.order=6").is_err());
    }

    #[test]
    fn invalid_values_name_the_line() {
        let raw = RawConfig::parse("\nsolver.steps = many\n").unwrap();
        let e = RunConfig::resolve(&raw).unwrap_err();
        assert!(e.0.contains("line 2"), "{e}");
    }
}
