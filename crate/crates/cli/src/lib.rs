//! `effdepth` command-line front end. [`run`] is the whole program; `main`
//! only forwards process arguments and the exit code.
//!
//! Exit codes: 0 success, 1 failure or partial failure, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use effdepth_core::backends::{BackendSpec, DepthBackend, ProcessPerceptual};
use effdepth_core::bimodal::decode_field;
use effdepth_core::boost::{self, BoostConfig, BoostError, BoostReport};
use effdepth_core::formats::{self, Manifest};
use effdepth_core::grid::Image;
use effdepth_core::losses::{self, LossWeights, MeanAbsDiff, PerceptualBackend};
use effdepth_core::metrics::{self, AlignMode, DatasetReport, EvalConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Failure(_) => "failure",
        }
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "effdepth", version, about = "High-resolution depth boosting, bimodal decoding, loss auditing and depth evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile an image, infer every patch, align patches to a whole-image reference and blend
    Boost(BoostCmd),
    /// Evaluate predictions listed in a manifest (AbsRel, 100*(1-delta1), WHDR)
    Eval(EvalCmd),
    /// Compare two depth files and print the weighted loss breakdown
    Loss(LossCmd),
    /// Print the tile layout for an image size
    TilePlan(TilePlanCmd),
    /// Decode a per-pixel bimodal mixture file into a depth map
    DecodeBimodal(DecodeCmd),
    /// Time the boosting pipeline on images already loaded into memory
    Bench(BenchCmd),
}

#[derive(Debug, Clone, Args)]
pub struct BoostArgs {
    /// Backend: synthetic:<ramp|radial|sinusoid>?key=value&..., dir:<path> or cmd:<template>
    #[arg(long)]
    pub backend: String,
    /// Tile side in pixels
    #[arg(long, default_value_t = boost::DEFAULT_PATCH)]
    pub patch: usize,
    /// Overlap between neighbouring tiles in pixels; must be below --patch
    #[arg(long, default_value_t = boost::DEFAULT_OVERLAP)]
    pub overlap: usize,
    /// Longest side of the whole-image reference pass [default: backend native size, else 518]
    #[arg(long)]
    pub ref_size: Option<usize>,
    /// Images whose longest side is at most this run through one backend call
    #[arg(long, default_value_t = boost::DEFAULT_PASSTHROUGH_MAX_SIDE)]
    pub passthrough: usize,
    /// Concurrent tile inferences [default: available parallelism]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Scratch directory for cmd: backends [default: system temp dir]
    #[arg(long)]
    pub io_dir: Option<PathBuf>,
}

impl BoostArgs {
    fn backend(&self) -> CliResult<Box<dyn DepthBackend>> {
        let spec = BackendSpec::parse(&self.backend).map_err(|e| CliError::Usage(e.to_string()))?;
        spec.build(self.io_dir.clone())
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    fn config(&self, backend: &dyn DepthBackend) -> CliResult<BoostConfig> {
        let cfg = BoostConfig {
            patch: self.patch,
            overlap: self.overlap,
            reference_size: self
                .ref_size
                .or(backend.native_size())
                .unwrap_or(boost::DEFAULT_REFERENCE_SIZE),
            passthrough_max_side: self.passthrough,
            jobs: self.jobs.unwrap_or_else(default_jobs).max(1),
            ..BoostConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Args)]
pub struct BoostCmd {
    /// Input image (PNG or binary PPM/PGM)
    #[arg(long)]
    pub image: PathBuf,
    /// Output depth file (.pfm, .raw/.f32, or .png with a JSON sidecar)
    #[arg(long)]
    pub out: PathBuf,
    /// Image id used by dir: backends [default: file stem of --image]
    #[arg(long)]
    pub id: Option<String>,
    /// Write the run report as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub boost: BoostArgs,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Skip least-squares alignment in inverse-depth space
    #[arg(long)]
    pub no_align: bool,
    /// delta1 ratio threshold
    #[arg(long, default_value_t = 1.25)]
    pub delta: f64,
    /// Ignore ground truth deeper than this (manifest entries may override)
    #[arg(long)]
    pub depth_cap: Option<f64>,
    /// Relative inverse-depth gap under which a pair counts as "equal"
    #[arg(long, default_value_t = 0.0)]
    pub whdr_margin: f64,
    /// Write per-sample and aggregate metrics as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Samples evaluated concurrently [default: available parallelism]
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LossCmd {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Weight of the shift/scale-invariant term
    #[arg(long, default_value_t = 0.4)]
    pub alpha_l: f64,
    /// Weight of the Laplacian edge term
    #[arg(long, default_value_t = 0.2)]
    pub alpha_edge: f64,
    /// Weight of the perceptual term
    #[arg(long, default_value_t = 0.4)]
    pub alpha_lpips: f64,
    /// External perceptual metric with {a} and {b} placeholders; prints the distance on stdout
    /// [default: built-in mean absolute difference]
    #[arg(long)]
    pub lpips_cmd: Option<String>,
}

#[derive(Debug, Args)]
pub struct TilePlanCmd {
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = boost::DEFAULT_PATCH)]
    pub patch: usize,
    #[arg(long, default_value_t = boost::DEFAULT_OVERLAP)]
    pub overlap: usize,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DecodeCmd {
    /// Five-plane mixture file (pi, mu1, b1, mu2, b2)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// Manifest listing the images to time
    #[arg(long)]
    pub manifest: PathBuf,
    /// Timed runs per image
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Write timing rows as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub boost: BoostArgs,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Boost(c) => cmd_boost(&c, out),
        Command::Eval(c) => cmd_eval(&c, out),
        Command::Loss(c) => cmd_loss(&c, out),
        Command::TilePlan(c) => cmd_tile_plan(&c, out),
        Command::DecodeBimodal(c) => cmd_decode(&c, out),
        Command::Bench(c) => cmd_bench(&c, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let json = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            let _ = writeln!(err, "{json}");
            e.exit_code()
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(fail)?;
    std::fs::write(path, text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(fail)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn boost_error(e: BoostError) -> CliError {
    match e {
        BoostError::Config(m) => CliError::Usage(m),
        other => fail(other),
    }
}

pub fn cmd_boost(c: &BoostCmd, out: &mut dyn Write) -> CliResult<i32> {
    let backend = c.boost.backend()?;
    let cfg = c.boost.config(backend.as_ref())?;
    let image = formats::read_image_file(&c.image).map_err(fail)?;
    let id = c.id.clone().unwrap_or_else(|| stem(&c.image));
    let started = Instant::now();
    let result = boost::simple_boost(&image, &id, backend.as_ref(), &cfg).map_err(boost_error)?;
    formats::write_depth_file(&c.out, &result.depth).map_err(fail)?;
    let wall = started.elapsed();
    print_boost(out, &result.report, wall.as_secs_f64())?;
    if let Some(p) = &c.report {
        write_json(p, &result.report)?;
    }
    Ok(EXIT_OK)
}

fn print_boost(out: &mut dyn Write, r: &BoostReport, wall: f64) -> CliResult<()> {
    let mut text = String::new();
    use std::fmt::Write as _;
    if r.passthrough {
        let _ = writeln!(text, "pass-through: 1 backend call");
    } else {
        let _ = writeln!(text, "tiles: {}", r.tiles.len());
        for (i, t) in r.tiles.iter().enumerate() {
            let [x, y, w, h] = t.rect;
            let _ = writeln!(
                text,
                "  tile {i:>3} at ({x}, {y}) {w}x{h}: s = {:.6}, o = {:.6}",
                t.alignment.s, t.alignment.o
            );
        }
        let _ = writeln!(text, "backend calls: {}", r.backend_calls);
    }
    let _ = writeln!(text, "wall time: {wall:.3} s");
    emit(out, &text)
}

fn fmt_opt(v: Option<f64>, width: usize) -> String {
    v.map_or_else(|| format!("{:>width$}", "-"), |x| format!("{x:>width$.4}"))
}

pub fn cmd_eval(c: &EvalCmd, out: &mut dyn Write) -> CliResult<i32> {
    let cfg = EvalConfig {
        delta_threshold: c.delta,
        depth_cap: c.depth_cap,
        align: if c.no_align { AlignMode::None } else { AlignMode::LeastSquaresInvDepth },
        whdr_margin: c.whdr_margin,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = formats::read_manifest_file(&c.manifest).map_err(fail)?;
    let report = metrics::evaluate_dataset(&manifest, &cfg, c.jobs.unwrap_or_else(default_jobs)).map_err(fail)?;
    print_eval(out, &report)?;
    if let Some(p) = &c.report {
        write_json(p, &report)?;
    }
    Ok(if report.has_failures() { EXIT_FAILURE } else { EXIT_OK })
}

fn print_eval(out: &mut dyn Write, r: &DatasetReport) -> CliResult<()> {
    use std::fmt::Write as _;
    let mut t = String::new();
    let _ = writeln!(t, "{:<24} {:>10} {:>12} {:>8} {:>9}", "id", "AbsRel", "100(1-d1)", "WHDR", "n_valid");
    for s in &r.samples {
        match (&s.report, &s.error) {
            (Some(m), _) => {
                let _ = writeln!(
                    t,
                    "{:<24} {} {} {} {:>9}",
                    s.id,
                    fmt_opt(m.abs_rel, 10),
                    fmt_opt(m.one_minus_delta1_pct, 12),
                    fmt_opt(m.whdr, 8),
                    m.n_valid
                );
            }
            (None, e) => {
                let _ = writeln!(t, "{:<24} error: {}", s.id, e.as_deref().unwrap_or("unknown"));
            }
        }
    }
    let a = &r.aggregate;
    let _ = writeln!(
        t,
        "{:<24} {} {} {} {:>9}",
        "mean",
        fmt_opt(a.abs_rel, 10),
        fmt_opt(a.one_minus_delta1_pct, 12),
        fmt_opt(a.whdr, 8),
        format!("{} ok", a.n_samples)
    );
    if a.n_failed > 0 {
        let _ = writeln!(t, "{} sample(s) failed", a.n_failed);
    }
    emit(out, &t)
}

#[derive(Debug, Serialize)]
struct LossOutput {
    ssi: f64,
    edge: f64,
    lpips: f64,
    total: f64,
    weights: [f64; 3],
    perceptual: String,
}

pub fn cmd_loss(c: &LossCmd, out: &mut dyn Write) -> CliResult<i32> {
    let weights = LossWeights::new(c.alpha_l, c.alpha_edge, c.alpha_lpips)
        .ok_or_else(|| CliError::Usage("loss weights must be finite and nonnegative".into()))?;
    let perceptual: Box<dyn PerceptualBackend> = match &c.lpips_cmd {
        Some(t) => Box::new(
            ProcessPerceptual::new(t, std::env::temp_dir()).map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        None => Box::new(MeanAbsDiff),
    };
    let pred = formats::read_depth_file(&c.pred).map_err(fail)?;
    let gt = formats::read_depth_file(&c.gt).map_err(fail)?;
    let b = losses::loss_total(&pred, &gt, perceptual.as_ref(), &weights).map_err(fail)?;
    let o = LossOutput {
        ssi: b.ssi,
        edge: b.edge,
        lpips: b.lpips,
        total: b.total,
        weights: [weights.alpha_l, weights.alpha_edge, weights.alpha_lpips],
        perceptual: c.lpips_cmd.clone().unwrap_or_else(|| "mean-abs-diff".into()),
    };
    let text = serde_json::to_string_pretty(&o).map_err(fail)?;
    emit(out, &format!("{text}\n"))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct PlanOutput {
    width: usize,
    height: usize,
    patch: usize,
    overlap: usize,
    columns: Vec<usize>,
    rows: Vec<usize>,
    tiles: Vec<[usize; 4]>,
}

pub fn cmd_tile_plan(c: &TilePlanCmd, out: &mut dyn Write) -> CliResult<i32> {
    let cfg = BoostConfig {
        patch: c.patch,
        overlap: c.overlap,
        ..BoostConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if c.width == 0 || c.height == 0 {
        return Err(CliError::Usage("width and height must be positive".into()));
    }
    let plan = boost::plan_tiles(c.width, c.height, &cfg);
    let o = PlanOutput {
        width: c.width,
        height: c.height,
        patch: c.patch,
        overlap: c.overlap,
        columns: plan.cols.starts.clone(),
        rows: plan.rows.starts.clone(),
        tiles: plan.tiles.iter().map(|t| [t.x, t.y, t.w, t.h]).collect(),
    };
    let text = if c.json {
        serde_json::to_string_pretty(&o).map_err(fail)? + "\n"
    } else {
        let mut s = format!(
            "tiles: {} ({} columns x {} rows)\ncolumn starts: {:?}\nrow starts: {:?}\n",
            o.tiles.len(),
            o.columns.len(),
            o.rows.len(),
            o.columns,
            o.rows
        );
        for (i, [x, y, w, h]) in o.tiles.iter().enumerate() {
            s += &format!("  tile {i:>3}: x={x} y={y} w={w} h={h}\n");
        }
        s
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_decode(c: &DecodeCmd, out: &mut dyn Write) -> CliResult<i32> {
    let bytes = std::fs::read(&c.input).map_err(|e| fail(format!("{}: {e}", c.input.display())))?;
    let field = formats::read_bimodal(&bytes).map_err(fail)?;
    let depth = decode_field(&field);
    formats::write_depth_file(&c.out, &depth).map_err(fail)?;
    emit(out, &format!("decoded {}x{} -> {}\n", field.width(), field.height(), c.out.display()))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub tiles: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub runs: usize,
}

/// Decodes every manifest image with `loader` before any timing starts.
pub fn load_images(
    manifest: &Manifest,
    loader: &dyn Fn(&Path) -> Result<Image, String>,
) -> CliResult<Vec<(String, Image)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let path = manifest.resolve(&e.image_path);
            loader(&path)
                .map(|img| (e.id.clone(), img))
                .map_err(|m| fail(format!("{}: {m}", path.display())))
        })
        .collect()
}

/// Times the full pipeline (reference pass, tiles, alignment, blending) on
/// resident images. The standard deviation is over the repeats (population form).
pub fn bench(
    images: &[(String, Image)],
    backend: &dyn DepthBackend,
    cfg: &BoostConfig,
    repeat: usize,
) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(images.len());
    for (id, img) in images {
        let mut times = Vec::with_capacity(repeat);
        let mut tiles = 0;
        for _ in 0..repeat {
            let t = Instant::now();
            let r = boost::simple_boost(img, id, backend, cfg).map_err(boost_error)?;
            times.push(t.elapsed().as_secs_f64());
            tiles = r.report.tiles.len();
        }
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        rows.push(BenchRow {
            id: id.clone(),
            width: img.width(),
            height: img.height(),
            tiles,
            mean_s: mean,
            std_s: var.sqrt(),
            runs: times.len(),
        });
    }
    Ok(rows)
}

pub fn cmd_bench(c: &BenchCmd, out: &mut dyn Write) -> CliResult<i32> {
    if c.repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let backend = c.boost.backend()?;
    let cfg = c.boost.config(backend.as_ref())?;
    let manifest = formats::read_manifest_file(&c.manifest).map_err(fail)?;
    let images = load_images(&manifest, &|p| formats::read_image_file(p).map_err(|e| e.to_string()))?;
    let rows = bench(&images, backend.as_ref(), &cfg, c.repeat)?;
    let mut t = format!("{:<24} {:>11} {:>6} {:>10} {:>10}\n", "id", "size", "tiles", "mean (s)", "std (s)");
    for r in &rows {
        t += &format!(
            "{:<24} {:>11} {:>6} {:>10.4} {:>10.4}\n",
            r.id,
            format!("{}x{}", r.width, r.height),
            r.tiles,
            r.mean_s,
            r.std_s
        );
    }
    emit(out, &t)?;
    if let Some(p) = &c.report {
        write_json(p, &rows)?;
    }
    Ok(EXIT_OK)
}
