//! The `fluoro` command line.
//!
//! Exit codes: 0 on success, 1 when the command line cannot be parsed, 2 when
//! inputs are unreadable or invalid. Every subcommand accepts
//! `--config file.json`, an object whose keys are that subcommand's long flag
//! names (`snake_case` or `kebab-case`); flags given on the command line win.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fluoro_core::fitting::EvalPath;
use fluoro_core::render::HeatmapScale;
use fluoro_core::Component;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fluoro", version, about = "Fluorescent materials in reduced color spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit Gaussian fluorescence to a bispectral matrix and write a material.
    Fit(FitArgs),
    /// Reduce a material or bispectral matrix to K×K matrices.
    Reduce(ReduceArgs),
    /// Color error of fitted and reduced models over a dataset.
    Eval(EvalArgs),
    /// Palette of achievable colors over emission mean and spread.
    Palette(PaletteArgs),
    /// Render a preview sphere or flat swatch.
    Render(RenderArgs),
    /// Interpolate the fluorescence parameters of two materials.
    Interp(InterpArgs),
    /// Heatmap image of a spectral or reduced matrix.
    Heatmap(HeatmapArgs),
    /// Run the local edit service.
    Serve(ServeArgs),
}

/// Accepted on every subcommand; consumed before parsing.
#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON file whose keys mirror this subcommand's flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Bispectral matrix (text or .csv).
    #[arg(long, value_name = "FILE")]
    pub bispec: PathBuf,
    /// Number of 2D Gaussians.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=4))]
    pub q: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit every n-th sample on both axes.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Also fit the reflectance diagonal with this many 1D Gaussians.
    #[arg(long, value_name = "M")]
    pub diagonal: Option<usize>,
    /// Material JSON output.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Fit report JSON (Gaussians, residuals, adjustments).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct Source {
    /// Material JSON.
    #[arg(long, value_name = "FILE", conflicts_with = "bispec", required_unless_present = "bispec")]
    pub material: Option<PathBuf>,
    /// Bispectral matrix (text or .csv).
    #[arg(long, value_name = "FILE")]
    pub bispec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, default_value = "xyzu", value_parser = ["xyz", "xyzu"])]
    pub basis: String,
    /// JSON output; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Bispectral matrices forming the dataset.
    #[arg(long, value_name = "FILE", num_args = 1.., value_delimiter = ',', required = true)]
    pub bispec: Vec<PathBuf>,
    /// Gaussians per fitted model.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=4))]
    pub q: u64,
    /// Paths to evaluate; all three by default.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(EvalPath))]
    pub paths: Vec<EvalPath>,
    /// Illuminant names; the eight standard ones by default.
    #[arg(long, value_delimiter = ',')]
    pub illuminants: Vec<String>,
    #[arg(long, default_value = "xyzu", value_parser = ["xyz", "xyzu"])]
    pub basis: String,
    /// JSON report output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct PaletteArgs {
    /// Take albedo and absorption from the first Gaussian of this material.
    #[arg(long, value_name = "FILE")]
    pub material: Option<PathBuf>,
    #[arg(long, default_value = "D65")]
    pub illuminant: String,
    /// Relative XYZ albedo, e.g. `0.14,0.14,0.2`.
    #[arg(long, value_parser = parse_triple)]
    pub albedo: Option<[f64; 3]>,
    #[arg(long)]
    pub mu_a: Option<f64>,
    #[arg(long)]
    pub sigma_a: Option<f64>,
    /// Strength of every cell.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_bar: f64,
    /// Cells per axis.
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    /// Image pixels per cell edge.
    #[arg(long, default_value_t = fluoro_core::palette::DEFAULT_CELL_PX)]
    pub cell_px: u32,
    #[arg(long, default_value = "full", value_parser = clap::value_parser!(Component))]
    pub component: Component,
    #[arg(long, default_value = "xyzu", value_parser = ["xyz", "xyzu"])]
    pub basis: String,
    /// Multiplier on the automatic exposure.
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
    /// Image output (.ppm or .png).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Parameter grid JSON; defaults to the image path with a .json extension.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Cell to export as a material, `ROW,COL`.
    #[arg(long, value_parser = parse_cell, requires = "pick_out")]
    pub pick: Option<(usize, usize)>,
    /// Material JSON output for `--pick`.
    #[arg(long, value_name = "FILE", requires = "pick")]
    pub pick_out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, value_name = "FILE")]
    pub material: PathBuf,
    #[arg(long, default_value = "D65")]
    pub illuminant: String,
    /// Second illuminant for the right half.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    /// Multiplier on the automatic exposure.
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
    #[arg(long, default_value = "full", value_parser = clap::value_parser!(Component))]
    pub component: Component,
    #[arg(long, default_value = "xyzu", value_parser = ["xyz", "xyzu"])]
    pub basis: String,
    /// Uniformly lit square instead of a sphere; matches palette cells exactly.
    #[arg(long, conflicts_with_all = ["split", "albedo_map", "strength_map", "mu_a_map", "hsv_map"])]
    pub flat: bool,
    /// Achromatic albedo texture (PPM, PNG or PFM).
    #[arg(long, value_name = "FILE")]
    pub albedo_map: Option<PathBuf>,
    #[arg(long, value_parser = parse_pair, default_value = "0,0.2")]
    pub albedo_range: (f64, f64),
    /// Strength texture, multiplies every Gaussian's strength.
    #[arg(long, value_name = "FILE")]
    pub strength_map: Option<PathBuf>,
    #[arg(long, value_parser = parse_pair, default_value = "0,1")]
    pub strength_range: (f64, f64),
    /// Absorption-mean texture.
    #[arg(long, value_name = "FILE")]
    pub mu_a_map: Option<PathBuf>,
    #[arg(long, value_parser = parse_pair, default_value = "340,460")]
    pub mu_a_range: (f64, f64),
    /// Color texture mapped through HSV onto emission mean, spread and strength.
    #[arg(long, value_name = "FILE")]
    pub hsv_map: Option<PathBuf>,
    /// Display image (.ppm or .png).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Float XYZ image (.pfm).
    #[arg(long, value_name = "FILE")]
    pub float_out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long, value_name = "FILE")]
    pub a: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub b: PathBuf,
    /// Blend weight in [0, 1]; 0 gives `a`.
    #[arg(long)]
    pub t: f64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MatrixKind {
    /// N×N bispectral matrix.
    Spectral,
    /// K×K total reduced matrix.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SignMode {
    Auto,
    Signed,
    Unsigned,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum, default_value_t = MatrixKind::Spectral)]
    pub kind: MatrixKind,
    #[arg(long, default_value = "xyzu", value_parser = ["xyz", "xyzu"])]
    pub basis: String,
    #[arg(long, default_value = "linear", value_parser = parse_scale)]
    pub scale: HeatmapScale,
    #[arg(long, value_enum, default_value_t = SignMode::Auto)]
    pub sign: SignMode,
    /// Pixels per matrix entry; 1 for spectral and 64 for reduced by default.
    #[arg(long)]
    pub cell_px: Option<u32>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Directory for `POST /materials/{id}/export`.
    #[arg(long, default_value = "exports")]
    pub export_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_floats(s)?.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    match parse_floats(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err("expected two comma-separated numbers".into()),
    }
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("`{t}` is not an index")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [r, c] => Ok((*r, *c)),
        _ => Err("expected ROW,COL".into()),
    }
}

fn parse_scale(s: &str) -> Result<HeatmapScale, String> {
    match s.to_ascii_lowercase().as_str() {
        "linear" => Ok(HeatmapScale::Linear),
        "log" => Ok(HeatmapScale::Log),
        _ => Err(format!("unknown scale `{s}` (linear, log)")),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match config::expand(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
