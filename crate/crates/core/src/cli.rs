//! `adobi` command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::calibration::estimate_csm_from_acs;
use crate::config::{ExperimentConfig, Method};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::experiment::{
    initial_image, load_denoiser, recon_maps, run_method, simulate_case, train_ridge, Case, LoadedDenoiser, RunOutput,
};
use crate::forward::ForwardOperator;
use crate::metrics::{aggregate, per_slice_csv, summary_csv, ReconReport};
use crate::mrid::{self, MridObject};
use crate::sampler::SampleTrace;
use crate::types::ComplexImage;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const CONFIG_FILE: &str = "config.txt";
pub const CONFIG_INPUT_FILE: &str = "config_input.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RECON_FILE: &str = "recon.mrid";
pub const FINAL_MAPS_FILE: &str = "final_maps.mrid";
pub const MEAN_FILE: &str = "mean.mrid";
pub const STD_FILE: &str = "std.mrid";
pub const TRACE_FILE: &str = "trace.csv";
pub const DENOISER_FILE: &str = "denoiser.mrid";

/// Default sweep grids.
pub const GAMMA_GRID: &[f64] = &[0.5, 1.0, 1.5, 2.0, 2.4, 3.0];
pub const NFE_GRID: &[f64] = &[1.0, 2.0, 5.0, 10.0];
pub const LAMBDA_GRID: &[f64] = &[1e-2, 1e-1, 1.0, 10.0, 100.0];

#[derive(Debug, Parser)]
#[command(name = "adobi", version, about = "Diffusion-bridge reconstruction for parallel MRI with coil map refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a phantom, coil maps, a mask and measured k-space.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Estimate coil maps from the ACS block and build the initial image.
    Calibrate {
        /// Directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Reconstruct a simulated acquisition.
    Reconstruct {
        /// Directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// Record wall-clock runtime (makes outputs run-dependent).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score reconstructions against ground truth.
    Evaluate {
        /// Directory written by `reconstruct`; may be repeated.
        #[arg(long, required = true)]
        recon: Vec<PathBuf>,
        /// Directory written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        /// Where the CSVs and image dumps go.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Also write magnitude, error and std images as 8-bit PGM.
        #[arg(long)]
        dump: bool,
    },
    /// Reconstruct and score over a grid of one parameter and several seeds.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values; defaults to a built-in grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit a ridge denoiser on simulated training pairs.
    TrainDenoiser {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Gamma,
    Nfe,
    Lambda,
}

impl SweepAxis {
    fn key(self) -> &'static str {
        match self {
            Self::Gamma => "gamma1",
            Self::Nfe => "nfe",
            Self::Lambda => "lambda",
        }
    }

    pub fn default_grid(self) -> &'static [f64] {
        match self {
            Self::Gamma => GAMMA_GRID,
            Self::Nfe => NFE_GRID,
            Self::Lambda => LAMBDA_GRID,
        }
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Base configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    n_coils: Option<String>,
    #[arg(long, value_name = "bumps|shifted-phase")]
    coil_model: Option<String>,
    #[arg(long)]
    perturbation: Option<String>,
    #[arg(long)]
    acceleration: Option<String>,
    #[arg(long)]
    acs_width: Option<String>,
    #[arg(long, value_name = "equispaced|random")]
    mask_style: Option<String>,
    #[arg(long)]
    noise_level: Option<String>,
    #[arg(long, value_name = "zf|grappa")]
    init: Option<String>,
    #[arg(long, value_name = "zf|grappa|ddb|cddb|adobi")]
    method: Option<String>,
    #[arg(long, value_name = "initial|true|estimated")]
    maps: Option<String>,
    #[arg(long, value_name = "gaussian-oracle|ridge:PATH")]
    denoiser: Option<String>,
    #[arg(long)]
    train_count: Option<String>,
    #[arg(long)]
    nfe: Option<String>,
    #[arg(long)]
    gamma1: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long, value_name = "as-written|variance-matched|ode")]
    noise_mode: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Effective configuration plus the verbatim text it was read from.
struct Resolved {
    cfg: ExperimentConfig,
    input_text: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Resolved> {
        let mut cfg = ExperimentConfig::default();
        let input_text = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Configuration(format!("cannot read config {}: {e}", p.display())))?;
                cfg.apply_text(&text)?;
                Some(text)
            }
            None => None,
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        let flags = [
            ("size", &self.size),
            ("n_coils", &self.n_coils),
            ("coil_model", &self.coil_model),
            ("perturbation", &self.perturbation),
            ("acceleration", &self.acceleration),
            ("acs_width", &self.acs_width),
            ("mask_style", &self.mask_style),
            ("noise_level", &self.noise_level),
            ("init", &self.init),
            ("method", &self.method),
            ("maps", &self.maps),
            ("denoiser", &self.denoiser),
            ("train_count", &self.train_count),
            ("nfe", &self.nfe),
            ("gamma1", &self.gamma1),
            ("lambda", &self.lambda),
            ("noise_mode", &self.noise_mode),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(Resolved { cfg, input_text })
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Configuration(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { cfg } => cmd_simulate(&cfg.resolve()?),
        Command::Calibrate { input, cfg } => cmd_calibrate(&cfg.resolve()?, &input),
        Command::Reconstruct { input, timing, cfg } => cmd_reconstruct(&cfg.resolve()?, &input, timing),
        Command::Evaluate { recon, truth, out, dump } => cmd_evaluate(&recon, &truth, &out, dump),
        Command::Sweep { axis, values, timing, cfg } => cmd_sweep(&cfg.resolve()?, axis, &values, timing),
        Command::TrainDenoiser { cfg } => cmd_train_denoiser(&cfg.resolve()?),
    }
}

struct Manifest {
    text: String,
}

impl Manifest {
    fn new(command: &str) -> Self {
        Self { text: format!("command = {command}\n") }
    }

    fn entry(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value}");
        self
    }

    fn file(&mut self, name: &str) -> &mut Self {
        self.entry("file", name)
    }
}

fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect())
}

/// Creates `dir` and writes the effective config, the verbatim input config
/// when there was one, and the manifest.
fn write_provenance(dir: &Path, resolved: &Resolved, manifest: &mut Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), resolved.cfg.to_text())?;
    manifest.file(CONFIG_FILE);
    if let Some(text) = &resolved.input_text {
        fs::write(dir.join(CONFIG_INPUT_FILE), text)?;
        manifest.file(CONFIG_INPUT_FILE);
    }
    fs::write(dir.join(MANIFEST_FILE), &manifest.text)?;
    Ok(())
}

fn cmd_simulate(r: &Resolved) -> Result<()> {
    let cfg = &r.cfg;
    let case = simulate_case(cfg, cfg.seed)?;
    let mut manifest = Manifest::new("simulate");
    manifest.entry("seed", cfg.seed);
    for f in case.save(&cfg.out)? {
        manifest.file(f);
    }
    write_provenance(&cfg.out, r, &mut manifest)?;
    log::info!("simulated seed {} into {}", cfg.seed, cfg.out.display());
    Ok(())
}

fn cmd_calibrate(r: &Resolved, input: &Path) -> Result<()> {
    let cfg = &r.cfg;
    let case = Case::load(input, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let mut manifest = Manifest::new("calibrate");
    manifest.entry("input", input.display());
    let estimated = estimate_csm_from_acs(&case.kspace, cfg.smoothing())?;
    mrid::save_array(cfg.out.join("estimated_maps.mrid"), &MridObject::Maps(estimated))?;
    manifest.file("estimated_maps.mrid");
    let maps = recon_maps(&case, cfg)?;
    let init = initial_image(&case.kspace, &maps, cfg)?;
    mrid::save_array(cfg.out.join("init.mrid"), &MridObject::Image(init))?;
    manifest.entry("init", cfg.init).file("init.mrid");
    write_provenance(&cfg.out, r, &mut manifest)
}

fn denoiser_for(cfg: &ExperimentConfig) -> Result<Option<LoadedDenoiser>> {
    if cfg.method.uses_sampler() {
        log::info!("preparing denoiser {}", cfg.denoiser);
        load_denoiser(cfg).map(Some)
    } else {
        Ok(None)
    }
}

pub fn trace_csv(trace: Option<&SampleTrace>) -> String {
    let mut out = String::from("t,alpha,data_residual,csm_change,gamma_used\n");
    for s in trace.map(|t| t.steps.as_slice()).unwrap_or(&[]) {
        let _ = writeln!(out, "{},{},{},{},{}", s.t, s.alpha, s.data_residual, s.csm_change, s.gamma_used);
    }
    out
}

fn write_recon(dir: &Path, out: &RunOutput, manifest: &mut Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    mrid::save_array(dir.join(RECON_FILE), &MridObject::Image(out.image.clone()))?;
    mrid::save_array(dir.join(FINAL_MAPS_FILE), &MridObject::Maps(out.maps.clone()))?;
    fs::write(dir.join(TRACE_FILE), trace_csv(out.trace.as_ref()))?;
    manifest.file(RECON_FILE).file(FINAL_MAPS_FILE).file(TRACE_FILE);
    if let Some(std) = &out.std {
        let (h, w) = out.image.shape();
        mrid::save_array(dir.join(MEAN_FILE), &MridObject::Image(out.image.clone()))?;
        mrid::save_array(dir.join(STD_FILE), &MridObject::RealImage { height: h, width: w, data: std.clone() })?;
        manifest.file(MEAN_FILE).file(STD_FILE);
    }
    manifest.entry("data_residual", out.residual);
    Ok(())
}

fn cmd_reconstruct(r: &Resolved, input: &Path, timing: bool) -> Result<()> {
    let cfg = &r.cfg;
    let case = Case::load(input, cfg.seed)?;
    let denoiser = denoiser_for(cfg)?;
    let start = Instant::now();
    let out = run_method(&case, cfg, denoiser.as_ref().map(|d| d as &dyn Denoiser))?;
    let runtime = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut manifest = Manifest::new("reconstruct");
    manifest.entry("input", input.display()).entry("method", cfg.method).entry("seed", cfg.seed);
    manifest.entry("runtime_s", runtime);
    write_recon(&cfg.out, &out, &mut manifest)?;
    write_provenance(&cfg.out, r, &mut manifest)?;
    log::info!("{} reconstruction written to {} (residual {:.3e})", cfg.method, cfg.out.display(), out.residual);
    Ok(())
}

/// 8-bit binary PGM with `values` scaled so the maximum maps to 255.
pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(crate::error::dim_err(format!("{} values for a {height}x{width} image", values.len())));
    }
    let peak = values.iter().cloned().filter(|v| v.is_finite()).fold(0.0_f64, f64::max);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| {
        if peak > 0.0 && v.is_finite() {
            (v.max(0.0) / peak * 255.0).round().min(255.0) as u8
        } else {
            0
        }
    }));
    fs::write(path, bytes)?;
    Ok(())
}

fn evaluate_dir(dir: &Path, truth: &Case) -> Result<(ReconReport, ComplexImage)> {
    let cfg = ExperimentConfig::from_text(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let recon = mrid::load_image(dir.join(RECON_FILE))?;
    let maps = mrid::load_maps(dir.join(FINAL_MAPS_FILE))?;
    let residual = ForwardOperator::new(maps, truth.kspace.mask().clone())?.residual_norm(&recon, &truth.kspace)?;
    let runtime = read_manifest(dir)?
        .into_iter()
        .find(|(k, _)| k == "runtime_s")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0.0);
    let report = ReconReport::evaluate(cfg.method.to_string(), cfg.seed, &truth.image, &recon, residual, runtime)?;
    Ok((report, recon))
}

fn cmd_evaluate(recon_dirs: &[PathBuf], truth_dir: &Path, out: &Path, dump: bool) -> Result<()> {
    let truth = Case::load(truth_dir, 0)?;
    fs::create_dir_all(out)?;
    let mut reports = Vec::with_capacity(recon_dirs.len());
    for (i, dir) in recon_dirs.iter().enumerate() {
        let (report, recon) = evaluate_dir(dir, &truth)?;
        if dump {
            let (h, w) = recon.shape();
            let stem = format!("{i:02}-{}-seed{}", report.method, report.seed);
            write_pgm(&out.join(format!("{stem}-magnitude.pgm")), h, w, &recon.magnitude())?;
            let err: Vec<f64> =
                recon.magnitude().iter().zip(truth.image.magnitude()).map(|(a, b)| (a - b).abs()).collect();
            write_pgm(&out.join(format!("{stem}-error.pgm")), h, w, &err)?;
            if dir.join(STD_FILE).exists() {
                let (sh, sw, std) = mrid::load_real_image(dir.join(STD_FILE))?;
                write_pgm(&out.join(format!("{stem}-std.pgm")), sh, sw, &std)?;
            }
        }
        log::info!("{}: psnr {:.2} dB, ssim {:.4}", dir.display(), report.psnr, report.ssim);
        reports.push(report);
    }
    fs::write(out.join("per_slice.csv"), per_slice_csv(&reports))?;
    fs::write(out.join("summary.csv"), summary_csv(&aggregate(&reports)?))?;
    Ok(())
}

pub const SWEEP_HEADER: &str = "axis,value,method,seed,psnr,ssim,nmse,residual,runtime_s";

fn cmd_sweep(r: &Resolved, axis: SweepAxis, values: &[f64], timing: bool) -> Result<()> {
    let base = &r.cfg;
    let values = if values.is_empty() { axis.default_grid() } else { values };
    if values.len() < 2 {
        return Err(Error::Configuration("a sweep needs at least two values".into()));
    }
    let cfgs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            let text = if axis == SweepAxis::Nfe { format!("{}", v.round() as i64) } else { v.to_string() };
            c.set(axis.key(), &text)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let denoiser = denoiser_for(base)?;
    let pairs: Vec<(usize, u64)> =
        (0..cfgs.len()).flat_map(|i| (0..base.seeds as u64).map(move |k| (i, base.seed + k))).collect();
    let rows = pairs
        .par_iter()
        .map(|&(i, seed)| {
            let cfg = ExperimentConfig { seed, ..cfgs[i].clone() };
            let case = simulate_case(&cfg, seed)?;
            let start = Instant::now();
            let out = run_method(&case, &cfg, denoiser.as_ref().map(|d| d as &dyn Denoiser))?;
            let runtime = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
            let dir = base.out.join(format!("{}_{}", axis.key(), values[i])).join(format!("seed_{seed}"));
            let mut manifest = Manifest::new("sweep");
            manifest.entry("method", cfg.method).entry("seed", seed).entry("runtime_s", runtime);
            write_recon(&dir, &out, &mut manifest)?;
            write_provenance(&dir, &Resolved { cfg: cfg.clone(), input_text: None }, &mut manifest)?;
            let report = ReconReport::evaluate(cfg.method.to_string(), seed, &case.image, &out.image, out.residual, runtime)?;
            Ok(format!(
                "{},{},{},{},{},{},{},{},{}",
                axis.key(),
                values[i],
                report.method,
                seed,
                report.psnr,
                report.ssim,
                report.nmse,
                report.data_residual,
                report.runtime_s
            ))
        })
        .collect::<Result<Vec<String>>>()?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    fs::create_dir_all(&base.out)?;
    fs::write(base.out.join("sweep.csv"), csv)?;
    let mut manifest = Manifest::new("sweep");
    manifest.entry("axis", axis.key()).file("sweep.csv");
    write_provenance(&base.out, r, &mut manifest)
}

fn cmd_train_denoiser(r: &Resolved) -> Result<()> {
    let cfg = &r.cfg;
    if cfg.method == Method::ZeroFilled || cfg.method == Method::Grappa {
        log::warn!("method {} does not use a denoiser; training anyway", cfg.method);
    }
    let d = train_ridge(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    mrid::save_array(cfg.out.join(DENOISER_FILE), &MridObject::Ridge(d.clone()))?;
    let mut bins = String::from("bin,alpha,train_mse\n");
    for (i, b) in d.bins().iter().enumerate() {
        let _ = writeln!(bins, "{i},{},{}", b.alpha, b.train_mse);
    }
    fs::write(cfg.out.join("bins.csv"), bins)?;
    let mut manifest = Manifest::new("train-denoiser");
    manifest.file(DENOISER_FILE).file("bins.csv");
    write_provenance(&cfg.out, r, &mut manifest)
}
