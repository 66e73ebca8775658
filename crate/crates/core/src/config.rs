//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bridge::NoiseMode;
use crate::error::{Error, Result};
use crate::forward::MaskStyle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    ZeroFilled,
    Grappa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ZeroFilled,
    Grappa,
    /// Bridge sampling without measurements.
    Ddb,
    /// Bridge sampling with data consistency and fixed maps.
    Cddb,
    /// Bridge sampling with data consistency and map refinement.
    Adobi,
}

impl Method {
    pub fn uses_sampler(self) -> bool {
        matches!(self, Method::Ddb | Method::Cddb | Method::Adobi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapsChoice {
    /// Perturbed copy of the true maps.
    Initial,
    True,
    /// Estimated from the ACS block of the measurements.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoilKind {
    Bumps,
    ShiftedPhase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenoiserChoice {
    GaussianOracle,
    Ridge(PathBuf),
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $($name:literal)|+),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($($name)|+ => Ok($ty::$variant),)+
                    other => Err(Error::Configuration(format!(concat!("unknown ", stringify!($ty), " {:?}"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let names: &[&str] = match self { $($ty::$variant => &[$($name),+],)+ };
                f.write_str(names[0])
            }
        }
    };
}

keyword_enum!(InitKind { ZeroFilled => "zf" | "zero-filled", Grappa => "grappa" });
keyword_enum!(Method { ZeroFilled => "zf" | "zero-filled", Grappa => "grappa", Ddb => "ddb", Cddb => "cddb", Adobi => "adobi" });
keyword_enum!(MapsChoice { Initial => "initial", True => "true", Estimated => "estimated" });
keyword_enum!(CoilKind { Bumps => "bumps", ShiftedPhase => "shifted-phase" });

impl FromStr for DenoiserChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-oracle" => Ok(Self::GaussianOracle),
            _ => match s.strip_prefix("ridge:") {
                Some(p) if !p.is_empty() => Ok(Self::Ridge(PathBuf::from(p))),
                _ => Err(Error::Configuration(format!("unknown denoiser {s:?}; use gaussian-oracle or ridge:<path>"))),
            },
        }
    }
}

impl fmt::Display for DenoiserChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GaussianOracle => f.write_str("gaussian-oracle"),
            Self::Ridge(p) => write!(f, "ridge:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub size: usize,
    pub n_ellipses: usize,
    pub phase_ramp: f64,
    pub head_jitter: f64,
    pub n_coils: usize,
    pub coil_model: CoilKind,
    pub perturbation: f64,
    pub acceleration: usize,
    pub acs_width: usize,
    pub mask_style: MaskStyle,
    pub noise_level: f64,
    pub init: InitKind,
    pub method: Method,
    pub maps: MapsChoice,
    pub denoiser: DenoiserChoice,
    pub train_count: usize,
    pub nfe: usize,
    pub n_steps: usize,
    pub sigma_max: f64,
    pub gamma1: f64,
    pub lambda: f64,
    pub csm_steps: usize,
    pub csm_lr: f64,
    pub noise_mode: NoiseMode,
    pub samples: usize,
    pub seed: u64,
    pub seeds: usize,
    pub grappa_kernel_rows: usize,
    pub grappa_kernel_cols: usize,
    pub grappa_tikhonov: f64,
    pub smoothing_width: usize,
    pub ridge_bins: usize,
    pub patch_radius: usize,
    pub ridge_weight: f64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n_ellipses: 8,
            phase_ramp: 1.0,
            head_jitter: 0.05,
            n_coils: 8,
            coil_model: CoilKind::Bumps,
            perturbation: 0.1,
            acceleration: 4,
            acs_width: 16,
            mask_style: MaskStyle::Equispaced,
            noise_level: 0.0,
            init: InitKind::ZeroFilled,
            method: Method::Adobi,
            maps: MapsChoice::Initial,
            denoiser: DenoiserChoice::GaussianOracle,
            train_count: 200,
            nfe: 10,
            n_steps: 1000,
            sigma_max: 0.1,
            gamma1: crate::sampler::DEFAULT_GAMMA1,
            lambda: 1e-2,
            csm_steps: 5,
            csm_lr: 1.0,
            noise_mode: NoiseMode::VarianceMatched,
            samples: 1,
            seed: 0,
            seeds: 1,
            grappa_kernel_rows: 5,
            grappa_kernel_cols: 4,
            grappa_tikhonov: 1e-4,
            smoothing_width: 0,
            ridge_bins: 16,
            patch_radius: 2,
            ridge_weight: 1e-3,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Configuration(format!("{key} = {value:?}: {e}")))
}

impl ExperimentConfig {
    /// Every key, in the order used by [`ExperimentConfig::to_text`].
    pub const KEYS: &'static [&'static str] = &[
        "size",
        "n_ellipses",
        "phase_ramp",
        "head_jitter",
        "n_coils",
        "coil_model",
        "perturbation",
        "acceleration",
        "acs_width",
        "mask_style",
        "noise_level",
        "init",
        "method",
        "maps",
        "denoiser",
        "train_count",
        "nfe",
        "n_steps",
        "sigma_max",
        "gamma1",
        "lambda",
        "csm_steps",
        "csm_lr",
        "noise_mode",
        "samples",
        "seed",
        "seeds",
        "grappa_kernel_rows",
        "grappa_kernel_cols",
        "grappa_tikhonov",
        "smoothing_width",
        "ridge_bins",
        "patch_radius",
        "ridge_weight",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "size" => self.size = parse(key, v)?,
            "n_ellipses" => self.n_ellipses = parse(key, v)?,
            "phase_ramp" => self.phase_ramp = parse(key, v)?,
            "head_jitter" => self.head_jitter = parse(key, v)?,
            "n_coils" => self.n_coils = parse(key, v)?,
            "coil_model" => self.coil_model = v.parse()?,
            "perturbation" => self.perturbation = parse(key, v)?,
            "acceleration" => self.acceleration = parse(key, v)?,
            "acs_width" => self.acs_width = parse(key, v)?,
            "mask_style" => self.mask_style = v.parse()?,
            "noise_level" => self.noise_level = parse(key, v)?,
            "init" => self.init = v.parse()?,
            "method" => self.method = v.parse()?,
            "maps" => self.maps = v.parse()?,
            "denoiser" => self.denoiser = v.parse()?,
            "train_count" => self.train_count = parse(key, v)?,
            "nfe" => self.nfe = parse(key, v)?,
            "n_steps" => self.n_steps = parse(key, v)?,
            "sigma_max" => self.sigma_max = parse(key, v)?,
            "gamma1" => self.gamma1 = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "csm_steps" => self.csm_steps = parse(key, v)?,
            "csm_lr" => self.csm_lr = parse(key, v)?,
            "noise_mode" => self.noise_mode = v.parse()?,
            "samples" => self.samples = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "grappa_kernel_rows" => self.grappa_kernel_rows = parse(key, v)?,
            "grappa_kernel_cols" => self.grappa_kernel_cols = parse(key, v)?,
            "grappa_tikhonov" => self.grappa_tikhonov = parse(key, v)?,
            "smoothing_width" => self.smoothing_width = parse(key, v)?,
            "ridge_bins" => self.ridge_bins = parse(key, v)?,
            "patch_radius" => self.patch_radius = parse(key, v)?,
            "ridge_weight" => self.ridge_weight = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::Configuration(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "size" => self.size.to_string(),
            "n_ellipses" => self.n_ellipses.to_string(),
            "phase_ramp" => self.phase_ramp.to_string(),
            "head_jitter" => self.head_jitter.to_string(),
            "n_coils" => self.n_coils.to_string(),
            "coil_model" => self.coil_model.to_string(),
            "perturbation" => self.perturbation.to_string(),
            "acceleration" => self.acceleration.to_string(),
            "acs_width" => self.acs_width.to_string(),
            "mask_style" => self.mask_style.to_string(),
            "noise_level" => self.noise_level.to_string(),
            "init" => self.init.to_string(),
            "method" => self.method.to_string(),
            "maps" => self.maps.to_string(),
            "denoiser" => self.denoiser.to_string(),
            "train_count" => self.train_count.to_string(),
            "nfe" => self.nfe.to_string(),
            "n_steps" => self.n_steps.to_string(),
            "sigma_max" => self.sigma_max.to_string(),
            "gamma1" => self.gamma1.to_string(),
            "lambda" => self.lambda.to_string(),
            "csm_steps" => self.csm_steps.to_string(),
            "csm_lr" => self.csm_lr.to_string(),
            "noise_mode" => self.noise_mode.to_string(),
            "samples" => self.samples.to_string(),
            "seed" => self.seed.to_string(),
            "seeds" => self.seeds.to_string(),
            "grappa_kernel_rows" => self.grappa_kernel_rows.to_string(),
            "grappa_kernel_cols" => self.grappa_kernel_cols.to_string(),
            "grappa_tikhonov" => self.grappa_tikhonov.to_string(),
            "smoothing_width" => self.smoothing_width.to_string(),
            "ridge_bins" => self.ridge_bins.to_string(),
            "patch_radius" => self.patch_radius.to_string(),
            "ridge_weight" => self.ridge_weight.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k, v).map_err(|e| Error::Configuration(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        Self::KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("known key"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.size < 16 {
            return bad(format!("size must be >= 16, got {}", self.size));
        }
        if self.n_coils == 0 {
            return bad("n_coils must be >= 1".into());
        }
        if self.acceleration == 0 || self.acceleration > self.size {
            return bad(format!("acceleration must lie in [1, {}]", self.size));
        }
        if self.acs_width == 0 || self.acs_width > self.size {
            return bad(format!("acs_width must lie in [1, {}]", self.size));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise_level must be >= 0, got {}", self.noise_level));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return bad(format!("perturbation must be >= 0, got {}", self.perturbation));
        }
        if self.nfe == 0 || self.nfe > self.n_steps {
            return bad(format!("nfe must lie in [1, n_steps = {}]", self.n_steps));
        }
        if !(self.sigma_max >= 0.0 && self.sigma_max.is_finite()) {
            return bad(format!("sigma_max must be >= 0, got {}", self.sigma_max));
        }
        if !(self.gamma1 >= 0.0 && self.gamma1.is_finite()) {
            return bad(format!("gamma1 must be >= 0, got {}", self.gamma1));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.csm_lr > 0.0 && self.csm_lr.is_finite()) {
            return bad(format!("csm_lr must be > 0, got {}", self.csm_lr));
        }
        if self.samples == 0 || self.seeds == 0 {
            return bad("samples and seeds must be >= 1".into());
        }
        if self.train_count < 2 {
            return bad("train_count must be >= 2".into());
        }
        if self.ridge_bins < 2 {
            return bad("ridge_bins must be >= 2".into());
        }
        if !(self.ridge_weight > 0.0) {
            return bad("ridge_weight must be > 0".into());
        }
        Ok(())
    }

    pub fn smoothing(&self) -> Option<usize> {
        (self.smoothing_width > 0).then_some(self.smoothing_width)
    }
}
