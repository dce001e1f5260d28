//! Command-line front end: `simulate`, `reconstruct`, `eval`, `sweep`,
//! `analyze`.
//!
//! Every command accepts `--config <file>` with `key = value` lines named
//! after the long flags; flags given on the command line take precedence.
//! The manifests written by `simulate` and `reconstruct` are such files, so
//! `hsfusion reconstruct --config out.manifest` repeats a run.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::forward::{
    add_noise, gen_mask, gen_response, simulate_cassi, simulate_multiband, CassiMeasurement, MaskCube,
    MultibandMeasurement, ResponseKind, SpectralResponse,
};
use crate::fusion::{fuse, pfuse, FusionConfig, Reconstruction};
use crate::io::{read_cube, read_response, write_cube, write_report, write_response, ReportRow, RunManifest};
use crate::metrics::{
    evaluate, log_spectrum, mean_log_spectrum, sample_patches, singular_spectrum, MetricReport, Peak,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

const META_KEYS: [&str; 2] = ["command", "tool-version"];

#[derive(Debug, Parser)]
#[command(name = "hsfusion", version, about = "Dual-camera compressive hyperspectral simulation and fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate CASSI and multiband measurements of a cube.
    Simulate(SimulateArgs),
    /// Reconstruct a cube from CASSI and multiband measurements.
    Reconstruct(ReconstructArgs),
    /// Compare an estimate against a reference cube.
    Eval(EvalArgs),
    /// Simulate, reconstruct and evaluate over a list of settings.
    Sweep(SweepArgs),
    /// Singular spectra of random patches versus the whole cube.
    Analyze(AnalyzeArgs),
}

/// `average`, `single:i,j,k` or `file:path`.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseSpec {
    Average,
    Single(Vec<usize>),
    File(PathBuf),
}

impl FromStr for ResponseSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "average" {
            return Ok(ResponseSpec::Average);
        }
        if let Some(list) = s.strip_prefix("single:") {
            let idx = list
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad band index {t:?}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            return Ok(ResponseSpec::Single(idx));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(ResponseSpec::File(PathBuf::from(path)));
        }
        Err(format!("response must be average, single:i,j,.. or file:path, got {s:?}"))
    }
}

impl fmt::Display for ResponseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseSpec::Average => write!(f, "average"),
            ResponseSpec::Single(idx) => {
                let s: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                write!(f, "single:{}", s.join(","))
            }
            ResponseSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl ResponseSpec {
    fn channels(&self, default: usize) -> Option<usize> {
        match self {
            ResponseSpec::Average => Some(default),
            ResponseSpec::Single(idx) => Some(idx.len()),
            ResponseSpec::File(_) => None,
        }
    }

    pub fn build(&self, bands: usize, channels: usize) -> Result<SpectralResponse> {
        match self {
            ResponseSpec::Average => gen_response(&ResponseKind::Average, bands, channels),
            ResponseSpec::Single(idx) => gen_response(&ResponseKind::SingleBand(idx.clone()), bands, idx.len()),
            ResponseSpec::File(path) => {
                let r = read_response(path)?;
                if r.bands() != bands {
                    return Err(Error::Shape(format!("response file has {} bands, cube has {bands}", r.bands())));
                }
                Ok(r)
            }
        }
    }
}

/// `m` or `m,n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSize {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for PatchSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad patch size {s:?}"));
        let (rows, cols) = match s.split_once(',') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let m = parse(s)?;
                (m, m)
            }
        };
        if rows == 0 || cols == 0 {
            return Err("patch size must be positive".into());
        }
        Ok(PatchSize { rows, cols })
    }
}

impl fmt::Display for PatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Args)]
pub struct AcquisitionOpts {
    #[arg(long, default_value_t = 0)]
    pub mask_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub density: f64,
    #[arg(long, default_value = "average")]
    pub response: ResponseSpec,
    /// Channel count for the average response.
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Seed for the CASSI noise; the multiband noise uses seed + 1.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
}

impl AcquisitionOpts {
    fn record(&self, m: &mut RunManifest) {
        m.set("mask-seed", self.mask_seed);
        m.set("density", self.density);
        m.set("response", &self.response);
        m.set("channels", self.channels);
        m.set("noise-sigma", self.noise_sigma);
        m.set("noise-seed", self.noise_seed);
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverOpts {
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Patch size `m` or `m,n`.
    #[arg(long, default_value = "100")]
    pub patch: PatchSize,
    /// Defaults to half the smaller patch side.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Joint basis solve using the multiband rows (needs the response).
    #[arg(long)]
    pub improved: bool,
    /// Solve the whole image as one problem instead of patches.
    #[arg(long)]
    pub global: bool,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl SolverOpts {
    fn stride_for(&self, patch: PatchSize) -> usize {
        self.stride.unwrap_or((patch.rows.min(patch.cols) / 2).max(1))
    }

    fn config(&self, patch: PatchSize, rank: usize) -> FusionConfig {
        FusionConfig {
            rank,
            patch_rows: patch.rows,
            patch_cols: patch.cols,
            stride: self.stride_for(patch),
            improved: self.improved,
            ..FusionConfig::default()
        }
    }

    fn record(&self, m: &mut RunManifest) {
        m.set("rank", self.rank);
        m.set("patch", self.patch);
        m.set("stride", self.stride_for(self.patch));
        m.set("improved", self.improved);
        m.set("global", self.global);
        if let Some(t) = self.threads {
            m.set("threads", t);
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth cube.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub acquisition: AcquisitionOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub z: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Response file; required with --improved.
    #[arg(long)]
    pub response: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PeakMode {
    /// Peak 1.
    Unit,
    /// Per-band maximum of the reference.
    RefMax,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PeakMode::Unit)]
    pub peak: PeakMode,
    #[arg(long, default_value = "scene")]
    pub scene: String,
    #[arg(long, default_value = "estimate")]
    pub method: String,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub s: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Varied {
    Rank,
    Patch,
    Response,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth cube.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub vary: Varied,
    /// Comma list with inclusive ranges (`1..5,8`); `;`-separated response
    /// specs when varying the response.
    #[arg(long)]
    pub values: String,
    /// With --vary rank and the average response, use c = k channels.
    #[arg(long)]
    pub match_channels: bool,
    #[command(flatten)]
    pub acquisition: AcquisitionOpts,
    #[command(flatten)]
    pub solver: SolverOpts,
    #[arg(long, value_enum, default_value_t = PeakMode::Unit)]
    pub peak: PeakMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "100")]
    pub patch: PatchSize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format(_) => EXIT_IO,
        Error::RankDeficient { .. } | Error::ZeroRank | Error::NonFinite(_) | Error::Uncovered { .. } => EXIT_NUMERICAL,
        Error::Patch { source, .. } => exit_code(source),
        Error::Shape(_) | Error::InvalidArgument(_) | Error::PatchConstraint { .. } => EXIT_USAGE,
    }
}

fn flag_present(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| a.to_str().is_some_and(|s| s == flag || s.starts_with(&eq)))
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Appends `--key value` for every config entry whose flag is absent.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let manifest = RunManifest::read(&path)?;
    let sub = args.get(1).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(cmd) = manifest.get("command") {
        if cmd != sub {
            return Err(Error::InvalidArgument(format!(
                "config {} is for `{cmd}`, not `{sub}`",
                path.display()
            )));
        }
    }
    let mut out = args.clone();
    for (key, value) in manifest.entries() {
        if META_KEYS.contains(&key.as_str()) {
            continue;
        }
        let flag = format!("--{key}");
        if flag_present(&args, &flag) {
            continue;
        }
        match value.as_str() {
            "true" => out.push(flag.into()),
            "false" | "" => {}
            v => {
                out.push(flag.into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

fn base_manifest(command: &str) -> RunManifest {
    let mut m = RunManifest::new();
    m.set("command", command);
    m.set("tool-version", env!("CARGO_PKG_VERSION"));
    m
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mask, response and both measurements of a scene.
pub struct Acquisition {
    pub mask: MaskCube,
    pub response: SpectralResponse,
    pub cassi: CassiMeasurement,
    pub multiband: MultibandMeasurement,
}

pub fn acquire(truth: &HsiCube, opts: &AcquisitionOpts, response: &ResponseSpec, channels: usize) -> Result<Acquisition> {
    let (rows, cols, bands) = truth.shape();
    let mask = gen_mask(rows, cols, bands, opts.mask_seed, opts.density)?;
    let channels = response.channels(channels).unwrap_or(channels);
    let response = response.build(bands, channels)?;
    let cassi = add_noise(simulate_cassi(truth, &mask)?, opts.noise_sigma, opts.noise_seed)?;
    let multiband =
        add_noise(simulate_multiband(truth, &response)?, opts.noise_sigma, opts.noise_seed.wrapping_add(1))?;
    Ok(Acquisition { mask, response, cassi, multiband })
}

pub fn run_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let truth = read_cube(&args.input)?;
    let acq = acquire(&truth, &args.acquisition, &args.acquisition.response, args.acquisition.channels)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let out = |name: &str| args.out_dir.join(name);
    write_cube(&acq.cassi.to_cube(), out("y.hsc"))?;
    write_cube(acq.multiband.cube(), out("z.hsc"))?;
    write_cube(acq.mask.cube(), out("mask.hsc"))?;
    write_response(&acq.response, out("response.txt"))?;
    let zero_pixels = acq.mask.zero_pixels();
    if zero_pixels > 0 {
        eprintln!("note: {zero_pixels} pixels have an all-zero mask spectrum");
    }

    let mut m = base_manifest("simulate");
    m.set("in", args.input.display());
    args.acquisition.record(&mut m);
    m.set("out-dir", args.out_dir.display());
    m.write(out("manifest.txt"))?;
    Ok(m)
}

fn solve(
    y: &CassiMeasurement,
    z: &MultibandMeasurement,
    mask: &MaskCube,
    response: Option<&SpectralResponse>,
    solver: &SolverOpts,
    patch: PatchSize,
    rank: usize,
) -> Result<Reconstruction> {
    let cfg = solver.config(patch, rank);
    if solver.improved && response.is_none() {
        return Err(Error::InvalidArgument("--improved requires --response".into()));
    }
    let response = if solver.improved { response } else { None };
    with_threads(solver.threads, || {
        if solver.global {
            fuse(y, z, mask, &cfg, response)
        } else {
            pfuse(y, z, mask, &cfg, response)
        }
    })?
}

pub fn run_reconstruct(args: &ReconstructArgs) -> Result<(Reconstruction, f64)> {
    if args.solver.improved && args.response.is_none() {
        return Err(Error::InvalidArgument("--improved requires --response".into()));
    }
    let y = CassiMeasurement::from_cube(&read_cube(&args.y)?)?;
    let z = MultibandMeasurement(read_cube(&args.z)?);
    let mask = MaskCube::new(read_cube(&args.mask)?);
    let response = args.response.as_ref().map(read_response).transpose()?;

    let start = Instant::now();
    let rec = solve(&y, &z, &mask, response.as_ref(), &args.solver, args.solver.patch, args.solver.rank)?;
    let wall = start.elapsed().as_secs_f64();

    write_cube(&rec.cube, &args.out)?;
    let mut m = base_manifest("reconstruct");
    m.set("y", args.y.display());
    m.set("z", args.z.display());
    m.set("mask", args.mask.display());
    if let Some(r) = &args.response {
        m.set("response", r.display());
    }
    args.solver.record(&mut m);
    m.set("out", args.out.display());
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest");
        PathBuf::from(p)
    });
    m.write(&manifest_path)?;
    Ok((rec, wall))
}

fn peak(mode: PeakMode) -> Peak {
    match mode {
        PeakMode::Unit => Peak::Fixed(1.0),
        PeakMode::RefMax => Peak::ReferenceMax,
    }
}

fn report_row(scene: &str, method: &str, k: usize, m: usize, s: usize, r: &MetricReport, wall: f64) -> ReportRow {
    ReportRow {
        scene: scene.to_string(),
        method: method.to_string(),
        k,
        m,
        s,
        m_psnr: r.m_psnr,
        m_ssim: r.m_ssim,
        msa: r.msa,
        wall_seconds: wall,
    }
}

pub fn run_eval(args: &EvalArgs) -> Result<MetricReport> {
    let reference = read_cube(&args.reference)?;
    let estimate = read_cube(&args.est)?;
    let report = evaluate(&reference, &estimate, peak(args.peak))?;
    let row = report_row(&args.scene, &args.method, args.k, args.m, args.s, &report, 0.0);
    write_report(&[row], &args.out)?;
    Ok(report)
}

/// Parses `1..5,8` into `[1, 2, 3, 4, 5, 8]`.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad value list {s:?}"));
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(item.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn scene_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let clean: String = stem.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' }).collect();
    if clean.is_empty() {
        "scene".into()
    } else {
        clean
    }
}

pub fn run_sweep(args: &SweepArgs) -> Result<Vec<ReportRow>> {
    let truth = read_cube(&args.input)?;
    let scene = scene_name(&args.input);
    let method = match (args.solver.global, args.solver.improved) {
        (true, false) => "Fusion",
        (true, true) => "Fusion-improved",
        (false, false) => "PFusion",
        (false, true) => "PFusion-improved",
    };

    struct Setting {
        rank: usize,
        patch: PatchSize,
        response: ResponseSpec,
        channels: usize,
    }
    let base = Setting {
        rank: args.solver.rank,
        patch: args.solver.patch,
        response: args.acquisition.response.clone(),
        channels: args.acquisition.channels,
    };
    let settings: Vec<Setting> = match args.vary {
        Varied::Rank => parse_usize_list(&args.values)?
            .into_iter()
            .map(|k| Setting {
                rank: k,
                channels: if args.match_channels { k } else { base.channels },
                patch: base.patch,
                response: base.response.clone(),
            })
            .collect(),
        Varied::Patch => parse_usize_list(&args.values)?
            .into_iter()
            .map(|m| Setting {
                patch: PatchSize { rows: m, cols: m },
                rank: base.rank,
                response: base.response.clone(),
                channels: base.channels,
            })
            .collect(),
        Varied::Response => args
            .values
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let response = t.parse::<ResponseSpec>().map_err(Error::InvalidArgument)?;
                Ok(Setting { response, rank: base.rank, patch: base.patch, channels: base.channels })
            })
            .collect::<Result<_>>()?,
    };

    let mut rows = Vec::with_capacity(settings.len());
    for s in &settings {
        let acq = acquire(&truth, &args.acquisition, &s.response, s.channels)?;
        let start = Instant::now();
        let rec = solve(&acq.cassi, &acq.multiband, &acq.mask, Some(&acq.response), &args.solver, s.patch, s.rank)?;
        let wall = start.elapsed().as_secs_f64();
        let report = evaluate(&truth, &rec.cube, peak(args.peak))?;
        let (m, stride) = if args.solver.global { (0, 0) } else { (s.patch.rows, args.solver.stride_for(s.patch)) };
        rows.push(report_row(&scene, method, s.rank, m, stride, &report, wall));
    }
    write_report(&rows, &args.out)?;
    Ok(rows)
}

/// `(global log10 sigma, mean patch log10 sigma)` per singular-value index.
pub fn run_analyze(args: &AnalyzeArgs) -> Result<Vec<(f64, f64)>> {
    if args.samples == 0 {
        return Err(Error::InvalidArgument("--samples must be at least 1".into()));
    }
    let cube = read_cube(&args.input)?;
    let global = log_spectrum(&singular_spectrum(&cube)?);
    let patches: Vec<HsiCube> = sample_patches(&cube, args.patch.rows, args.patch.cols, args.samples, args.seed)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let local = mean_log_spectrum(&patches)?;
    let pairs: Vec<(f64, f64)> = global.into_iter().zip(local).collect();
    let mut text = String::from("index,global_log10_sigma,patch_mean_log10_sigma\n");
    for (i, (g, l)) in pairs.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{}\n",
            i + 1,
            crate::io::format_significant(*g, 6),
            crate::io::format_significant(*l, 6)
        ));
    }
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    Ok(pairs)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            run_simulate(&a)?;
            println!("wrote measurements to {}", a.out_dir.display());
        }
        Command::Reconstruct(a) => {
            let (rec, wall) = run_reconstruct(&a)?;
            let shrunk = rec.patches.iter().filter(|p| p.effective_rank < a.solver.rank).count();
            if shrunk > 0 {
                eprintln!("note: {shrunk} of {} patches solved at reduced rank", rec.patches.len());
            }
            println!("wall_seconds = {wall:.3}");
        }
        Command::Eval(a) => {
            let r = run_eval(&a)?;
            println!("m_psnr = {:.4}\nm_ssim = {:.4}\nmsa = {:.4}", r.m_psnr, r.m_ssim, r.msa);
        }
        Command::Sweep(a) => {
            let rows = run_sweep(&a)?;
            println!("wrote {} rows to {}", rows.len(), a.out.display());
        }
        Command::Analyze(a) => {
            let pairs = run_analyze(&a)?;
            println!("wrote {} singular values to {}", pairs.len(), a.out.display());
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_spec_parsing() {
        assert_eq!("average".parse::<ResponseSpec>().unwrap(), ResponseSpec::Average);
        assert_eq!("single:1,5,9".parse::<ResponseSpec>().unwrap(), ResponseSpec::Single(vec![1, 5, 9]));
        assert_eq!("file:a/b.txt".parse::<ResponseSpec>().unwrap(), ResponseSpec::File("a/b.txt".into()));
        assert!("single:x".parse::<ResponseSpec>().is_err());
        assert!("nikon".parse::<ResponseSpec>().is_err());
        for s in ["average", "single:0,2", "file:r.txt"] {
            assert_eq!(s.parse::<ResponseSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn patch_size_parsing() {
        assert_eq!("50".parse::<PatchSize>().unwrap(), PatchSize { rows: 50, cols: 50 });
        assert_eq!("40,60".parse::<PatchSize>().unwrap(), PatchSize { rows: 40, cols: 60 });
        assert!("0".parse::<PatchSize>().is_err());
        assert!("a,b".parse::<PatchSize>().is_err());
    }

    #[test]
    fn value_lists() {
        assert_eq!(parse_usize_list("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_usize_list("40, 60,100").unwrap(), vec![40, 60, 100]);
        assert_eq!(parse_usize_list("1..2,7").unwrap(), vec![1, 2, 7]);
        assert!(parse_usize_list("5..1").is_err());
        assert!(parse_usize_list("").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::PatchConstraint { area: 1, unknowns: 2 }), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Format("x".into())), EXIT_IO);
        assert_eq!(exit_code(&Error::RankDeficient { rank: 1, cols: 2, column: 1 }), EXIT_NUMERICAL);
        let wrapped = Error::Patch { row: 0, col: 0, source: Box::new(Error::ZeroRank) };
        assert_eq!(exit_code(&wrapped), EXIT_NUMERICAL);
    }

    #[test]
    fn config_expansion_prefers_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "command = reconstruct\ntool-version = 0\nrank = 2\nstride = 7\nimproved = true\nglobal = false\n")
            .unwrap();
        let args: Vec<OsString> =
            ["hsfusion", "reconstruct", "--config", cfg.to_str().unwrap(), "--rank=3"].iter().map(OsString::from).collect();
        let out = expand_config(args).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert!(s.contains(&"--rank=3".to_string()));
        assert!(!s.contains(&"--rank".to_string()));
        assert!(s.windows(2).any(|w| w[0] == "--stride" && w[1] == "7"));
        assert!(s.contains(&"--improved".to_string()));
        assert!(!s.contains(&"--global".to_string()));

        let wrong: Vec<OsString> =
            ["hsfusion", "simulate", "--config", cfg.to_str().unwrap()].iter().map(OsString::from).collect();
        assert!(expand_config(wrong).is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["hsfusion", "reconstruct"]), EXIT_USAGE);
        assert_eq!(run(["hsfusion", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["hsfusion", "--help"]), EXIT_OK);
    }
}
