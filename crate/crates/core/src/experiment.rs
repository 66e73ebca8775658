//! End-to-end experiment pipeline shared by the command-line tool and the
//! test suites.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::bridge::BridgeSchedule;
use crate::calibration::{estimate_csm_from_acs, grappa_apply, grappa_calibrate, zero_filled_init, GrappaConfig};
use crate::config::{CoilKind, DenoiserChoice, ExperimentConfig, InitKind, MapsChoice, Method};
use crate::denoiser::{ridge_train, Basis, Denoiser, GaussianPairModel, RidgeConfig, RidgeDenoiser};
use crate::error::Result;
use crate::forward::{add_measurement_noise, make_mask, ForwardOperator};
use crate::mrid::{self, MridObject};
use crate::phantom::{make_coils, make_phantom, CoilModel, CoilModelSpec, PhantomSpec};
use crate::sampler::{sample, sample_ensemble, SampleTrace, SamplerConfig};
use crate::types::{ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};

/// Training cases use seeds from this offset upward, away from evaluation
/// seeds.
pub const TRAIN_SEED_OFFSET: u64 = 1 << 40;

/// One simulated acquisition with its ground truth.
#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub image: ComplexImage,
    pub true_maps: SensitivityMaps,
    pub initial_maps: SensitivityMaps,
    pub mask: SamplingMask,
    pub kspace: MultiCoilKSpace,
}

/// File names used by [`Case::save`] and [`Case::load`].
pub const PHANTOM_FILE: &str = "phantom.mrid";
pub const TRUE_MAPS_FILE: &str = "true_maps.mrid";
pub const INITIAL_MAPS_FILE: &str = "initial_maps.mrid";
pub const MASK_FILE: &str = "mask.mrid";
pub const KSPACE_FILE: &str = "kspace.mrid";

impl Case {
    /// Writes the five case files into `dir` and returns their names.
    pub fn save(&self, dir: &Path) -> Result<Vec<&'static str>> {
        fs::create_dir_all(dir)?;
        mrid::save_array(dir.join(PHANTOM_FILE), &MridObject::Image(self.image.clone()))?;
        mrid::save_array(dir.join(TRUE_MAPS_FILE), &MridObject::Maps(self.true_maps.clone()))?;
        mrid::save_array(dir.join(INITIAL_MAPS_FILE), &MridObject::Maps(self.initial_maps.clone()))?;
        mrid::save_array(dir.join(MASK_FILE), &MridObject::Mask(self.mask.clone()))?;
        mrid::save_array(dir.join(KSPACE_FILE), &MridObject::KSpace(self.kspace.planes().to_vec()))?;
        Ok(vec![PHANTOM_FILE, TRUE_MAPS_FILE, INITIAL_MAPS_FILE, MASK_FILE, KSPACE_FILE])
    }

    pub fn load(dir: &Path, seed: u64) -> Result<Self> {
        let image = mrid::load_image(dir.join(PHANTOM_FILE))?;
        let true_maps = mrid::load_maps(dir.join(TRUE_MAPS_FILE))?.with_detected_normalization(1e-5);
        let initial_maps = mrid::load_maps(dir.join(INITIAL_MAPS_FILE))?.with_detected_normalization(1e-5);
        let mask = mrid::load_mask(dir.join(MASK_FILE))?;
        let kspace = MultiCoilKSpace::new(mrid::load_kspace_planes(dir.join(KSPACE_FILE))?, mask.clone())?;
        if image.shape() != mask.shape() || true_maps.shape() != mask.shape() || initial_maps.shape() != mask.shape() {
            return Err(crate::error::dim_err("case files disagree on the image shape"));
        }
        if true_maps.n_coils() != kspace.n_coils() || initial_maps.n_coils() != kspace.n_coils() {
            return Err(crate::error::dim_err("case files disagree on the coil count"));
        }
        Ok(Case { seed, image, true_maps, initial_maps, mask, kspace })
    }
}

pub fn phantom_spec(cfg: &ExperimentConfig, seed: u64) -> PhantomSpec {
    PhantomSpec {
        size: cfg.size,
        n_ellipses: cfg.n_ellipses,
        phase_ramp: cfg.phase_ramp,
        head_jitter: cfg.head_jitter,
        seed,
        ..PhantomSpec::default()
    }
}

pub fn coil_spec(cfg: &ExperimentConfig, seed: u64) -> CoilModelSpec {
    let model = match cfg.coil_model {
        CoilKind::Bumps => CoilModel::default(),
        CoilKind::ShiftedPhase => CoilModel::ShiftedPhase,
    };
    CoilModelSpec { n_coils: cfg.n_coils, model, perturbation: cfg.perturbation, seed }
}

pub fn simulate_case(cfg: &ExperimentConfig, seed: u64) -> Result<Case> {
    cfg.validate()?;
    let image = make_phantom(&phantom_spec(cfg, seed))?;
    let (true_maps, initial_maps) = make_coils(&coil_spec(cfg, seed), cfg.size, cfg.size)?;
    let mask = make_mask(cfg.size, cfg.size, cfg.acceleration, cfg.acs_width, cfg.mask_style, seed)?;
    let clean = ForwardOperator::new(true_maps.clone(), mask.clone())?.apply(&image)?;
    let kspace = if cfg.noise_level > 0.0 { add_measurement_noise(&clean, cfg.noise_level, seed)? } else { clean };
    Ok(Case { seed, image, true_maps, initial_maps, mask, kspace })
}

/// Maps handed to the reconstruction.
pub fn recon_maps(case: &Case, cfg: &ExperimentConfig) -> Result<SensitivityMaps> {
    Ok(match cfg.maps {
        MapsChoice::Initial => case.initial_maps.clone(),
        MapsChoice::True => case.true_maps.clone(),
        MapsChoice::Estimated => estimate_csm_from_acs(&case.kspace, cfg.smoothing())?,
    })
}

pub fn grappa_config(cfg: &ExperimentConfig) -> GrappaConfig {
    GrappaConfig {
        kernel_rows: cfg.grappa_kernel_rows,
        kernel_cols: cfg.grappa_kernel_cols,
        tikhonov: cfg.grappa_tikhonov,
    }
}

pub fn grappa_image(y: &MultiCoilKSpace, maps: &SensitivityMaps, cfg: &ExperimentConfig) -> Result<ComplexImage> {
    let kernel = grappa_calibrate(y, &grappa_config(cfg))?;
    grappa_apply(&kernel, y, Some(maps))
}

/// Source image of the bridge.
pub fn initial_image(y: &MultiCoilKSpace, maps: &SensitivityMaps, cfg: &ExperimentConfig) -> Result<ComplexImage> {
    match cfg.init {
        InitKind::ZeroFilled => zero_filled_init(y, maps),
        InitKind::Grappa => grappa_image(y, maps, cfg),
    }
}

pub fn schedule(cfg: &ExperimentConfig) -> Result<BridgeSchedule> {
    BridgeSchedule::linear(cfg.n_steps, cfg.sigma_max)
}

pub fn sampler_config(cfg: &ExperimentConfig, seed: u64) -> SamplerConfig {
    let (gamma1, calibrate) = match cfg.method {
        Method::Ddb => (0.0, false),
        Method::Cddb => (cfg.gamma1, false),
        _ => (cfg.gamma1, true),
    };
    SamplerConfig {
        nfe: cfg.nfe,
        gamma1,
        csm_lambda: cfg.lambda,
        csm_steps: cfg.csm_steps,
        csm_lr: cfg.csm_lr,
        noise_mode: cfg.noise_mode,
        calibrate,
        seed,
        ..SamplerConfig::default()
    }
}

/// `(x0, z)` pairs simulated exactly like evaluation cases, on training
/// seeds.
pub fn training_pairs(cfg: &ExperimentConfig) -> Result<Vec<(ComplexImage, ComplexImage)>> {
    (0..cfg.train_count as u64)
        .into_par_iter()
        .map(|k| {
            let case = simulate_case(cfg, TRAIN_SEED_OFFSET + k)?;
            let maps = recon_maps(&case, cfg)?;
            let z = initial_image(&case.kspace, &maps, cfg)?;
            Ok((case.image, z))
        })
        .collect()
}

/// Per-pixel Gaussian model of `(x0, z)` fitted on the training population.
pub fn fit_oracle_denoiser(cfg: &ExperimentConfig) -> Result<GaussianPairModel> {
    GaussianPairModel::fit(&training_pairs(cfg)?, Basis::Pixel)
}

pub fn train_ridge(cfg: &ExperimentConfig) -> Result<RidgeDenoiser> {
    let pairs = training_pairs(cfg)?;
    let rc = RidgeConfig { bins: cfg.ridge_bins, patch_radius: cfg.patch_radius, ridge_weight: cfg.ridge_weight };
    ridge_train(&pairs, &schedule(cfg)?, &rc, TRAIN_SEED_OFFSET)
}

#[derive(Debug, Clone)]
pub enum LoadedDenoiser {
    Gaussian(GaussianPairModel),
    Ridge(RidgeDenoiser),
}

impl Denoiser for LoadedDenoiser {
    fn denoise(&self, x_t: &ComplexImage, alpha: f64, sigma: f64) -> Result<ComplexImage> {
        match self {
            Self::Gaussian(g) => g.denoise(x_t, alpha, sigma),
            Self::Ridge(r) => r.denoise(x_t, alpha, sigma),
        }
    }
}

pub fn load_denoiser(cfg: &ExperimentConfig) -> Result<LoadedDenoiser> {
    match &cfg.denoiser {
        DenoiserChoice::GaussianOracle => Ok(LoadedDenoiser::Gaussian(fit_oracle_denoiser(cfg)?)),
        DenoiserChoice::Ridge(path) => Ok(LoadedDenoiser::Ridge(mrid::load_ridge(path)?)),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: ComplexImage,
    pub maps: SensitivityMaps,
    pub trace: Option<SampleTrace>,
    /// Pixel-wise magnitude spread when several samples were drawn.
    pub std: Option<Vec<f64>>,
    /// `‖y − A x̂‖` with the output maps.
    pub residual: f64,
}

/// Runs the configured method on one case. `denoiser` is only consulted by
/// the sampling methods.
pub fn run_method(case: &Case, cfg: &ExperimentConfig, denoiser: Option<&dyn Denoiser>) -> Result<RunOutput> {
    let maps = recon_maps(case, cfg)?;
    let y = &case.kspace;
    let (image, maps, trace, std) = match cfg.method {
        Method::ZeroFilled => (zero_filled_init(y, &maps)?, maps, None, None),
        Method::Grappa => (grappa_image(y, &maps, cfg)?, maps, None, None),
        _ => {
            let d = denoiser.ok_or_else(|| crate::Error::Configuration("sampling methods need a denoiser".into()))?;
            let z = initial_image(y, &maps, cfg)?;
            let sched = schedule(cfg)?;
            let sc = sampler_config(cfg, case.seed);
            if cfg.samples > 1 {
                let e = sample_ensemble(y, &z, &maps, d, &sched, &sc, cfg.samples)?;
                let (_, m, t) = e.samples.into_iter().next().expect("at least one sample");
                (e.mean, m, Some(t), Some(e.magnitude_std))
            } else {
                let (img, m, t) = sample(y, &z, &maps, d, &sched, &sc)?;
                (img, m, Some(t), None)
            }
        }
    };
    let residual = ForwardOperator::new(maps.clone(), y.mask().clone())?.residual_norm(&image, y)?;
    Ok(RunOutput { image, maps, trace, std, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    fn small() -> ExperimentConfig {
        ExperimentConfig { size: 32, n_coils: 4, acs_width: 16, train_count: 24, nfe: 3, ..Default::default() }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = ExperimentConfig { noise_level: 0.1, ..small() };
        let a = simulate_case(&cfg, 3).unwrap();
        let b = simulate_case(&cfg, 3).unwrap();
        assert_eq!(a.kspace, b.kspace);
        assert_eq!(a.initial_maps, b.initial_maps);
    }

    #[test]
    fn full_sampling_recovers_phantom() {
        let cfg = ExperimentConfig { acceleration: 1, maps: MapsChoice::True, method: Method::ZeroFilled, ..small() };
        let case = simulate_case(&cfg, 1).unwrap();
        let out = run_method(&case, &cfg, None).unwrap();
        assert!(out.image.sub(&case.image).unwrap().norm() < 1e-10);
        assert!(out.trace.is_none());
    }

    #[test]
    fn every_method_runs() {
        let base = small();
        let den = fit_oracle_denoiser(&base).unwrap();
        let case = simulate_case(&base, 7).unwrap();
        for method in [Method::ZeroFilled, Method::Grappa, Method::Ddb, Method::Cddb, Method::Adobi] {
            let cfg = ExperimentConfig { method, ..base.clone() };
            let out = run_method(&case, &cfg, Some(&den)).unwrap();
            assert!(out.image.is_finite());
            assert!(psnr(&case.image, &out.image).unwrap().is_finite());
            if method.uses_sampler() {
                assert_eq!(out.trace.unwrap().steps.len(), 3);
            }
        }
    }
}
