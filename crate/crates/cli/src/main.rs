mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use holograting::analysis::{self, FitParameter, FitProblem, ParameterSpec};
use holograting::instrument::{self, Region, Spot};
use holograting::io::{self as formats, RegionSpec};
use holograting::model;
use holograting::zernike::{self, ThreeBeamField};
use holograting::Error;
use num_complex::Complex64;

use config::{ConfigError, RawConfig, RunConfig};

#[derive(Parser)]
#[command(name = "holograting", version, about = "Neutron diffraction by holographic phase gratings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set solver.orders=6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    emit_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Convolved rocking curve as CSV.
    Rock {
        #[command(flatten)]
        common: Common,
        /// Output CSV (stdout when absent).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Fit index modulation, thickness and angle offset to a rocking curve.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Rocking-curve CSV to fit.
        data: PathBuf,
        /// Write the parameter table as CSV here.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Exit 0 even when the optimizer does not converge.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Search the tilt that splits into three equal beams at normal incidence.
    Design {
        #[command(flatten)]
        common: Common,
        /// Write the report here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Interferometer layout, intensity map and analyzer scan.
    Zernike {
        #[command(flatten)]
        common: Common,
        /// Directory for intensity.csv, intensity.matrix and analyzer.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Per-order efficiencies from a detector frame.
    Reduce {
        #[command(flatten)]
        common: Common,
        /// Frame file: `rows cols pixel_pitch_mm`, then rows of counts.
        frame: PathBuf,
        /// Output CSV (stdout when absent).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    NotConverged,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Io(_) | Error::Csv(_) | Error::InvalidInput(_) | Error::Geometry(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load(common: &Common, inputs: &[&Path]) -> Result<Option<RunConfig>, Failure> {
    let mut raw = match &common.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    for o in &common.overrides {
        raw.set(o)?;
    }
    let config = RunConfig::resolve(&raw)?;
    if common.emit_config {
        print!("{}", config.emit());
        return Ok(None);
    }
    for path in inputs {
        if !path.is_file() {
            return Err(Failure::Config(format!("input file {} does not exist", path.display())));
        }
    }
    Ok(Some(config))
}

fn sink(output: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Config(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// The first order must propagate: λ < 2Λ.
fn check_diffraction(c: &RunConfig) -> Outcome {
    model::bragg_angle(c.beam.wavelength, c.grating.spacing)?;
    Ok(())
}

fn rock(c: &RunConfig, output: Option<&Path>) -> Outcome {
    check_diffraction(c)?;
    let mut curve = instrument::rocking_scan(
        &c.grating,
        &c.beam,
        c.rock.theta_min,
        c.rock.theta_max,
        c.rock.points,
        &c.solver,
    )?;
    if c.rock.noise > 0.0 {
        curve = analysis::add_noise(&curve, c.rock.noise, c.seed)?;
        curve.sigma = Some(vec![c.rock.noise; curve.len()]);
    }
    let mut out = sink(output)?;
    formats::write_rocking_curve(&mut out, &curve)?;
    out.flush()?;
    Ok(())
}

fn fit(c: &RunConfig, data: &Path, output: Option<&Path>, allow_nonconverged: bool) -> Outcome {
    check_diffraction(c)?;
    let file = File::open(data).map_err(|e| Failure::Config(format!("cannot open {}: {e}", data.display())))?;
    let curve = formats::read_rocking_curve(BufReader::new(file), c.fit.default_sigma)
        .map_err(|e| Failure::Config(format!("{}: {e}", data.display())))?;
    let free = c
        .fit
        .free
        .iter()
        .map(|&p| {
            let b = match p {
                FitParameter::IndexModulation => &c.fit.dn,
                FitParameter::Thickness => &c.fit.d,
                FitParameter::ThetaOffset => &c.fit.offset,
            };
            ParameterSpec {
                parameter: p,
                lower: b.min,
                upper: b.max,
                initial: b.init,
            }
        })
        .collect();
    let mut problem = FitProblem::new(curve, c.grating, c.beam, free);
    problem.settings = c.solver;
    problem.max_iter = c.fit.max_iter;
    problem.default_sigma = c.fit.default_sigma;
    if !c.fit.free.contains(&FitParameter::ThetaOffset) {
        problem.theta_offset = c.fit.offset.init;
    }
    let result = analysis::fit(&problem)?;
    print!("{}", formats::fit_report(&result));
    if let Some(path) = output {
        let mut out = sink(Some(path))?;
        formats::write_fit_csv(&mut out, &result)?;
        out.flush()?;
    }
    if !result.converged && !allow_nonconverged {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn design(c: &RunConfig, output: Option<&Path>) -> Outcome {
    check_diffraction(c)?;
    let point = analysis::design_three_port(
        &c.grating,
        &c.beam,
        (c.design.tilt_min, c.design.tilt_max),
        c.design.points,
        &c.solver,
    )?;
    if !point.balanced {
        log::warn!("no balanced three-port point in the tilt range");
    }
    let mut out = sink(output)?;
    out.write_all(formats::design_report(&point).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn zernike_cmd(c: &RunConfig, out_dir: Option<&Path>) -> Outcome {
    let z = &c.zernike;
    let layout = match z.half_angle {
        Some(a) => zernike::layout_with_half_angle(z.wavelength, z.splitter_spacing, z.separation, z.beam_width, a)?,
        None => zernike::solve_layout(z.wavelength, z.splitter_spacing, z.separation, z.beam_width, z.fringe_period)?,
    };
    let phase_shift = 2.0 * std::f64::consts::PI * z.phase_shift_waves;
    let dz = zernike::axial_shift(phase_shift, z.wavelength, layout.half_angle)?;
    print!("{}", formats::layout_report(&layout, Some((phase_shift, dz))));
    let Some(dir) = out_dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    let amps = z.amplitudes.map(|a| Complex64::new(a, 0.0));
    let field = ThreeBeamField::normalized(amps, z.phase, layout.half_angle, z.wavelength)?;
    let x = zernike::linspace(z.x_min, z.x_max, z.x_points);
    let zs = zernike::linspace(z.z_min, z.z_max, z.z_points);
    let map = zernike::interference(&field, &x, &zs);
    let offsets: Vec<f64> = (0..z.analyzer_points)
        .map(|i| z.analyzer_period * i as f64 / z.analyzer_points as f64)
        .collect();
    let signal = zernike::analyzer_scan(&map, zs[0], z.analyzer_period, z.analyzer_duty, &offsets)?;

    let mut out = sink(Some(&dir.join("intensity.csv")))?;
    formats::write_intensity_csv(&mut out, &map)?;
    out.flush()?;
    let mut out = sink(Some(&dir.join("intensity.matrix")))?;
    formats::write_gnuplot_matrix(&mut out, &map)?;
    out.flush()?;
    let mut out = sink(Some(&dir.join("analyzer.csv")))?;
    formats::write_analyzer_csv(&mut out, &offsets, &signal)?;
    out.flush()?;
    Ok(())
}

fn reduce(c: &RunConfig, frame: &Path, output: Option<&Path>) -> Outcome {
    let mut spots: Vec<Spot> = Vec::new();
    let mut background: Option<Region> = None;
    for r in &c.regions {
        match *r {
            RegionSpec::Spot(s) => spots.push(s),
            RegionSpec::Background(b) if background.is_none() => background = Some(b),
            RegionSpec::Background(_) => {
                return Err(Failure::Config("more than one background region".into()));
            }
        }
    }
    let background = background.ok_or_else(|| Failure::Config("no background region configured".into()))?;
    if spots.is_empty() {
        return Err(Failure::Config("no spot regions configured".into()));
    }
    let file = File::open(frame).map_err(|e| Failure::Config(format!("cannot open {}: {e}", frame.display())))?;
    let grid = formats::read_frame(BufReader::new(file)).map_err(|e| Failure::Config(format!("{}: {e}", frame.display())))?;
    let eta = instrument::reduce_frame(&grid.into_frame(spots, background))?;
    let mut out = sink(output)?;
    formats::write_efficiencies(&mut out, &eta)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Rock { common, output } => match load(&common, &[])? {
            Some(c) => rock(&c, output.as_deref()),
            None => Ok(()),
        },
        Command::Fit {
            common,
            data,
            output,
            allow_nonconverged,
        } => match load(&common, &[&data])? {
            Some(c) => fit(&c, &data, output.as_deref(), allow_nonconverged),
            None => Ok(()),
        },
        Command::Design { common, output } => match load(&common, &[])? {
            Some(c) => design(&c, output.as_deref()),
            None => Ok(()),
        },
        Command::Zernike { common, out_dir } => match load(&common, &[])? {
            Some(c) => zernike_cmd(&c, out_dir.as_deref()),
            None => Ok(()),
        },
        Command::Reduce { common, frame, output } => match load(&common, &[&frame])? {
            Some(c) => reduce(&c, &frame, output.as_deref()),
            None => Ok(()),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: fit did not converge (pass --allow-nonconverged to accept the result)");
            ExitCode::from(4)
        }
    }
}
