//! File formats: rocking-curve CSV, detector frame text grids, spot-region
//! specifications, intensity maps, analyzer scans and report text.
//!
//! Rocking curves store θ in milliradians; every other length or angle is
//! written in SI units. Floats use the shortest representation that
//! round-trips, so output is byte-identical for identical input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use log::warn;

use crate::analysis::{DesignPoint, FitResult};
use crate::error::{Error, Result};
use crate::instrument::{DetectorFrame, Region, RockingCurve, Spot};
use crate::zernike::{InterferometerLayout, IntensityMap};

/// Shortest round-trip text of `v`, switching to exponent form outside
/// `[1e-4, 1e6)`.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Column names of the rocking-curve CSV, in order.
pub const ROCKING_HEADER: [&str; 7] = ["theta_mrad", "eta_m2", "eta_m1", "eta_0", "eta_p1", "eta_p2", "sigma"];

/// Reads a rocking-curve CSV.
///
/// The `sigma` column may be absent or left empty. If it is empty
/// everywhere the curve carries no uncertainties; isolated empty cells are
/// filled with `default_sigma`. Either case is logged as a warning.
pub fn read_rocking_curve<R: Read>(reader: R, default_sigma: f64) -> Result<RockingCurve> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let has_sigma = match header.len() {
        6 => false,
        7 => true,
        n => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected 6 or 7 columns, found {n}"),
            })
        }
    };
    for (i, (got, want)) in header.iter().zip(ROCKING_HEADER).enumerate() {
        if got != want {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {} must be `{want}`, found `{got}`", i + 1),
            });
        }
    }
    let mut theta = Vec::new();
    let mut eta = Vec::new();
    let mut sigma: Vec<Option<f64>> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let field = |k: usize| -> Result<f64> {
            let text = record.get(k).unwrap_or("");
            text.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot read `{text}` as a number", ROCKING_HEADER[k]),
            })
        };
        theta.push(field(0)? * 1e-3);
        eta.push([field(1)?, field(2)?, field(3)?, field(4)?, field(5)?]);
        sigma.push(match record.get(6) {
            Some(s) if has_sigma && !s.is_empty() => Some(field(6)?),
            _ => None,
        });
    }
    let present = sigma.iter().filter(|s| s.is_some()).count();
    let sigma = if present == 0 {
        warn!("rocking curve has no sigma values; default sigma {default_sigma} applies");
        None
    } else {
        if present < sigma.len() {
            warn!(
                "{} rows lack sigma; default sigma {default_sigma} applied to them",
                sigma.len() - present
            );
        }
        Some(sigma.into_iter().map(|s| s.unwrap_or(default_sigma)).collect())
    };
    RockingCurve::new(theta, eta, sigma)
}

/// Writes a rocking curve; the sigma column is left empty when absent.
pub fn write_rocking_curve<W: Write>(writer: W, curve: &RockingCurve) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(ROCKING_HEADER)?;
    for (j, (t, row)) in curve.theta.iter().zip(&curve.eta).enumerate() {
        let mut record: Vec<String> = Vec::with_capacity(7);
        record.push(format_number(t * 1e3));
        record.extend(row.iter().copied().map(format_number));
        record.push(curve.sigma.as_ref().map_or(String::new(), |s| format_number(s[j])));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// Pixel grid read from a frame file, before regions are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub rows: usize,
    pub cols: usize,
    /// Pixel pitch (m).
    pub pixel_pitch: f64,
    pub counts: Vec<u64>,
}

impl FrameGrid {
    pub fn into_frame(self, spots: Vec<Spot>, background: Region) -> DetectorFrame {
        DetectorFrame {
            rows: self.rows,
            cols: self.cols,
            pixel_pitch: self.pixel_pitch,
            counts: self.counts,
            spots,
            background,
        }
    }
}

/// Reads a frame file: `rows cols pixel_pitch_mm` on the first line, then
/// `rows` lines of `cols` non-negative integers. Blank lines are skipped.
pub fn read_frame<R: BufRead>(reader: R) -> Result<FrameGrid> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|l| !matches!(l, Ok((_, s)) if s.trim().is_empty()));
    let (line, header) = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        message: "empty frame file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Parse {
        line,
        message: format!("expected `rows cols pixel_pitch_mm`, found `{}`", header.trim()),
    };
    if fields.len() != 3 {
        return Err(bad_header());
    }
    let rows: usize = fields[0].parse().map_err(|_| bad_header())?;
    let cols: usize = fields[1].parse().map_err(|_| bad_header())?;
    let pitch_mm: f64 = fields[2].parse().map_err(|_| bad_header())?;
    if rows == 0 || cols == 0 || !(pitch_mm > 0.0 && pitch_mm.is_finite()) {
        return Err(bad_header());
    }
    let mut counts = Vec::with_capacity(rows * cols);
    let mut read_rows = 0;
    for item in lines {
        let (line, text) = item?;
        if read_rows == rows {
            return Err(Error::Parse {
                line,
                message: format!("more than the declared {rows} rows"),
            });
        }
        let before = counts.len();
        for token in text.split_whitespace() {
            counts.push(token.parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{token}` is not a non-negative integer count"),
            })?);
        }
        if counts.len() - before != cols {
            return Err(Error::Parse {
                line,
                message: format!("expected {cols} counts, found {}", counts.len() - before),
            });
        }
        read_rows += 1;
    }
    if read_rows != rows {
        return Err(Error::Parse {
            line: line + read_rows,
            message: format!("expected {rows} rows, found {read_rows}"),
        });
    }
    Ok(FrameGrid {
        rows,
        cols,
        pixel_pitch: pitch_mm * 1e-3,
        counts,
    })
}

/// Writes a frame grid in the format read by [`read_frame`].
pub fn write_frame<W: Write>(mut writer: W, grid: &FrameGrid) -> Result<()> {
    writeln!(writer, "{} {} {}", grid.rows, grid.cols, grid.pixel_pitch * 1e3)?;
    for row in grid.counts.chunks(grid.cols) {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(writer, "{}", line.join(" "))?;
    }
    Ok(())
}

/// One parsed region specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionSpec {
    Spot(Spot),
    Background(Region),
}

/// Parses `order=m:x0,y0,x1,y1` or `background:x0,y0,x1,y1`.
pub fn parse_region(text: &str) -> Result<RegionSpec> {
    let bad = |msg: String| Error::InvalidInput(format!("region `{text}`: {msg}"));
    let (label, coords) = text
        .trim()
        .split_once(':')
        .ok_or_else(|| bad("expected `order=m:x0,y0,x1,y1` or `background:x0,y0,x1,y1`".into()))?;
    let c: Vec<usize> = coords
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("coordinates must be non-negative integers".into()))?;
    if c.len() != 4 {
        return Err(bad(format!("expected 4 coordinates, found {}", c.len())));
    }
    if c[2] <= c[0] || c[3] <= c[1] {
        return Err(bad("needs x1 > x0 and y1 > y0".into()));
    }
    let region = Region::new(c[0], c[1], c[2], c[3]);
    let label = label.trim();
    if label == "background" {
        return Ok(RegionSpec::Background(region));
    }
    let order = label
        .strip_prefix("order=")
        .and_then(|m| m.trim().parse::<i32>().ok())
        .ok_or_else(|| bad(format!("unknown label `{label}`")))?;
    Ok(RegionSpec::Spot(Spot { order, region }))
}

impl std::fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Spot(s) => write!(f, "order={}:{}", s.order, s.region),
            Self::Background(r) => write!(f, "background:{r}"),
        }
    }
}

/// `order,eta` rows in ascending order.
pub fn write_efficiencies<W: Write>(writer: W, eta: &BTreeMap<i32, f64>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["order", "eta"])?;
    for (m, v) in eta {
        csv.write_record([m.to_string(), format_number(*v)])?;
    }
    csv.flush()?;
    Ok(())
}

/// `x,z,I` rows, z outer, x inner.
pub fn write_intensity_csv<W: Write>(writer: W, map: &IntensityMap) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["x", "z", "I"])?;
    for (iz, z) in map.z.iter().enumerate() {
        for (ix, x) in map.x.iter().enumerate() {
            csv.write_record([format_number(*x), format_number(*z), format_number(map.at(ix, iz))])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Text form of gnuplot's `nonuniform matrix`: the first row is the column
/// count followed by the x values, each further row is z then `I(x, z)`.
pub fn write_gnuplot_matrix<W: Write>(mut writer: W, map: &IntensityMap) -> Result<()> {
    let mut line = map.x.len().to_string();
    for x in &map.x {
        write!(line, " {}", format_number(*x)).expect("writing to a String");
    }
    writeln!(writer, "{line}")?;
    for (iz, z) in map.z.iter().enumerate() {
        let mut line = format_number(*z);
        for v in map.row(iz) {
            write!(line, " {}", format_number(*v)).expect("writing to a String");
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// `x0,S` rows.
pub fn write_analyzer_csv<W: Write>(writer: W, offsets: &[f64], signal: &[f64]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["x0", "S"])?;
    for (x, s) in offsets.iter().zip(signal) {
        csv.write_record([format_number(*x), format_number(*s)])?;
    }
    csv.flush()?;
    Ok(())
}

/// `parameter,value,std_error,bound` rows; `std_error` is empty when the
/// fit is degenerate.
pub fn write_fit_csv<W: Write>(writer: W, result: &FitResult) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["parameter", "value", "std_error", "bound"])?;
    for (i, p) in result.parameters.iter().enumerate() {
        let se = result.std_errors.as_ref().map_or(String::new(), |s| format_number(s[i]));
        csv.write_record([
            p.name().to_string(),
            format_number(result.values[i]),
            se,
            result.bound_status[i].to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn fit_report(result: &FitResult) -> String {
    let mut s = String::new();
    let status = if result.converged { "converged" } else { "NOT converged" };
    let _ = writeln!(s, "fit {status} after {} iterations", result.iterations);
    let _ = writeln!(s, "chi2 = {:.6e}   reduced chi2 = {:.6e}", result.chi_square, result.reduced_chi_square);
    let _ = writeln!(s, "{:<8} {:>16} {:>16}  bound", "param", "value", "std-error");
    for (i, p) in result.parameters.iter().enumerate() {
        let se = result
            .std_errors
            .as_ref()
            .map_or("n/a".to_string(), |s| format!("{:.6e}", s[i]));
        let _ = writeln!(
            s,
            "{:<8} {:>16.6e} {:>16}  {}",
            p.name(),
            result.values[i],
            se,
            result.bound_status[i]
        );
    }
    if let Some(dir) = &result.degenerate_direction {
        let parts: Vec<String> = result
            .parameters
            .iter()
            .zip(dir)
            .map(|(p, v)| format!("{}:{v:+.4}", p.name()))
            .collect();
        let _ = writeln!(s, "degenerate: objective is flat along ({})", parts.join(", "));
    }
    let g = &result.grating;
    let _ = writeln!(
        s,
        "grating: spacing {:e} m, thickness {:e} m, d_eff {:e} m, dn {:e}, tilt {:.4} deg, offset {:.6} mrad",
        g.spacing,
        g.thickness,
        g.effective_thickness(),
        g.index_modulation,
        g.tilt.to_degrees(),
        result.theta_offset * 1e3
    );
    s
}

pub fn design_report(point: &DesignPoint) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tilt zeta* = {:.4} deg", point.tilt.to_degrees());
    let _ = writeln!(s, "index modulation = {:e}", point.index_modulation);
    let _ = writeln!(s, "order  eta");
    for (m, v) in [
        (-2, point.eta_m2),
        (-1, point.eta_m1),
        (0, point.eta_0),
        (1, point.eta_p1),
        (2, point.eta_p2),
    ] {
        let _ = writeln!(s, "{m:>5}  {v:.6}");
    }
    let _ = writeln!(s, "T = {:.6}", point.total);
    let _ = writeln!(s, "epsilon = {:.6}", point.imbalance);
    let _ = writeln!(s, "balanced = {}", point.balanced);
    s
}

/// Layout report; `axial_shift` pairs a phase step (rad) with its Δz (m).
pub fn layout_report(layout: &InterferometerLayout, axial_shift: Option<(f64, f64)>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "wavelength = {:e} m", layout.wavelength);
    let _ = writeln!(s, "splitter spacing = {:e} m", layout.splitter_spacing);
    let _ = writeln!(s, "first-order angle = {:.6} mrad", layout.first_order_angle * 1e3);
    let _ = writeln!(s, "half angle alpha = {:.6} mrad", layout.half_angle * 1e3);
    let _ = writeln!(s, "L1 splitter-mirror = {:.6} m", layout.splitter_to_mirror);
    let _ = writeln!(s, "L2 mirror-detector = {:.6} m", layout.mirror_to_detector);
    let _ = writeln!(s, "total length = {:.6} m", layout.total_length());
    let _ = writeln!(s, "overlap length = {:.6} m", layout.overlap_length());
    let _ = writeln!(s, "lateral extent = {:e} m", layout.lateral_extent());
    let _ = writeln!(s, "fringe period = {:e} m", layout.fringe_period());
    if let Some((phase, dz)) = axial_shift {
        let _ = writeln!(s, "axial shift for phase {phase:.6} rad = {:.6} um", dz * 1e6);
    }
    s
}
