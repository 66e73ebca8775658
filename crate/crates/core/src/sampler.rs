//! Reverse bridge sampling with data consistency and joint coil-map
//! refinement.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bridge::{ddb_step_keyed, BridgeSchedule, NoiseMode};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::fft::{fft2c, ifft2c};
use crate::forward::ForwardOperator;
use crate::rng::{complex_normal_vec, Purpose, StreamKey};
use crate::types::{ComplexImage, MultiCoilKSpace, SensitivityMaps};

/// Tuned step for 4× acceleration.
pub const DEFAULT_GAMMA1: f64 = 2.4;

const MAX_GAMMA_HALVINGS: usize = 30;
const MAX_LR_HALVINGS: usize = 40;

/// Where the data-consistency gradient step is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsistencyPlacement {
    /// On the denoiser output before resampling.
    #[default]
    Estimate,
    /// On the resampled iterate `x_{t−1}`.
    Iterate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub nfe: usize,
    pub gamma1: f64,
    /// Relative weight; scaled by `‖y‖² / ‖S_init‖²` before use.
    pub csm_lambda: f64,
    pub csm_steps: usize,
    pub csm_lr: f64,
    pub noise_mode: NoiseMode,
    pub calibrate: bool,
    pub placement: ConsistencyPlacement,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            nfe: 20,
            gamma1: DEFAULT_GAMMA1,
            csm_lambda: 1e-2,
            csm_steps: 5,
            csm_lr: 1.0,
            noise_mode: NoiseMode::VarianceMatched,
            calibrate: true,
            placement: ConsistencyPlacement::Estimate,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    fn validate(&self, schedule: &BridgeSchedule) -> Result<()> {
        if self.nfe == 0 || self.nfe > schedule.n_steps() {
            return Err(Error::InvalidArgument(format!("nfe {} must lie in [1, {}]", self.nfe, schedule.n_steps())));
        }
        if !(self.gamma1 >= 0.0) || !self.gamma1.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma1 must be finite and >= 0, got {}", self.gamma1)));
        }
        if !(self.csm_lambda >= 0.0) || !self.csm_lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("csm_lambda must be >= 0, got {}", self.csm_lambda)));
        }
        if !(self.csm_lr > 0.0) || !self.csm_lr.is_finite() {
            return Err(Error::InvalidArgument(format!("csm_lr must be > 0, got {}", self.csm_lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub alpha: f64,
    /// `‖y − A x̂'‖` with the maps after this step's update.
    pub data_residual: f64,
    pub csm_change: f64,
    pub gamma_used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub steps: Vec<StepRecord>,
    pub final_image: ComplexImage,
    pub final_maps: SensitivityMaps,
}

/// `x − γ A^H(Ax − y)`.
pub fn consistency_update(
    x0_hat: &ComplexImage,
    y: &MultiCoilKSpace,
    op: &ForwardOperator,
    gamma1: f64,
) -> Result<ComplexImage> {
    let g = op.data_gradient(x0_hat, y)?;
    Ok(x0_hat.zip_map(&g, |a, b| a - b * gamma1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardedUpdate {
    pub image: ComplexImage,
    pub gamma_used: f64,
    pub residual: f64,
}

/// Consistency step that halves `γ` until the residual does not grow.
pub fn guarded_consistency_update(
    x0_hat: &ComplexImage,
    y: &MultiCoilKSpace,
    op: &ForwardOperator,
    gamma1: f64,
) -> Result<GuardedUpdate> {
    let before = op.residual_norm(x0_hat, y)?;
    if gamma1 == 0.0 {
        return Ok(GuardedUpdate { image: x0_hat.clone(), gamma_used: 0.0, residual: before });
    }
    let g = op.data_gradient(x0_hat, y)?;
    let mut gamma = gamma1;
    for _ in 0..=MAX_GAMMA_HALVINGS {
        let image = x0_hat.zip_map(&g, |a, b| a - b * gamma);
        let residual = op.residual_norm(&image, y)?;
        if residual <= before {
            if gamma != gamma1 {
                log::debug!("consistency step reduced from {gamma1} to {gamma} to keep the residual from growing");
            }
            return Ok(GuardedUpdate { image, gamma_used: gamma, residual });
        }
        gamma *= 0.5;
    }
    log::warn!("consistency step skipped: no step size reduced the residual");
    Ok(GuardedUpdate { image: x0_hat.clone(), gamma_used: 0.0, residual: before })
}

fn coil_residuals(maps: &SensitivityMaps, x: &ComplexImage, y: &MultiCoilKSpace) -> Result<Vec<ComplexImage>> {
    if maps.n_coils() != y.n_coils() || maps.shape() != x.shape() || y.shape() != x.shape() {
        return Err(crate::error::dim_err("maps, image and k-space disagree"));
    }
    let mask = y.mask();
    Ok(maps
        .maps()
        .iter()
        .zip(y.planes())
        .map(|(s, yi)| {
            let mut k = fft2c(&s.zip_map(x, |a, b| a * b));
            mask.apply_in_place(&mut k);
            k.zip_map(yi, |a, b| a - b)
        })
        .collect())
}

/// `Σ_i ‖P F(S_i x) − y_i‖² + λ ‖S − S_init‖²`.
pub fn csm_objective(
    maps: &SensitivityMaps,
    x: &ComplexImage,
    y: &MultiCoilKSpace,
    maps_initial: &SensitivityMaps,
    lambda: f64,
) -> Result<f64> {
    let data: f64 = coil_residuals(maps, x, y)?.iter().map(ComplexImage::norm_sqr).sum();
    let prior = maps.distance(maps_initial)?;
    Ok(data + lambda * prior * prior)
}

/// Per-coil `conj(x) ⊙ F^H P(P F(S_i x) − y_i) + λ (S_i − S_init,i)`.
pub fn csm_gradient(
    maps: &SensitivityMaps,
    x: &ComplexImage,
    y: &MultiCoilKSpace,
    maps_initial: &SensitivityMaps,
    lambda: f64,
) -> Result<Vec<ComplexImage>> {
    maps.check_compatible(maps_initial)?;
    let res = coil_residuals(maps, x, y)?;
    Ok(res
        .iter()
        .zip(maps.maps().iter().zip(maps_initial.maps()))
        .map(|(r, (s, s0))| {
            let back = ifft2c(r);
            let data: Vec<Complex64> = back
                .data()
                .iter()
                .zip(x.data())
                .zip(s.data().iter().zip(s0.data()))
                .map(|((b, xv), (sv, s0v))| xv.conj() * b + (sv - s0v) * lambda)
                .collect();
            ComplexImage::from_parts(x.height(), x.width(), data)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmUpdate {
    pub maps: SensitivityMaps,
    /// Objective before the first and after every accepted iteration.
    pub objective: Vec<f64>,
    /// Step size in force at exit.
    pub step: f64,
}

/// Gradient descent on [`csm_objective`] with a backtracking step that is
/// carried across iterations.
#[allow(clippy::too_many_arguments)]
pub fn csm_update(
    maps: &SensitivityMaps,
    x0_hat: &ComplexImage,
    y: &MultiCoilKSpace,
    maps_initial: &SensitivityMaps,
    lambda: f64,
    inner_steps: usize,
    lr: f64,
) -> Result<CsmUpdate> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    let mut current = maps.clone();
    let mut j = csm_objective(&current, x0_hat, y, maps_initial, lambda)?;
    let mut objective = vec![j];
    let mut step = lr;
    'outer: for _ in 0..inner_steps {
        let grad = csm_gradient(&current, x0_hat, y, maps_initial, lambda)?;
        if grad.iter().all(|g| g.norm_sqr() == 0.0) {
            break;
        }
        for _ in 0..MAX_LR_HALVINGS {
            let cand = SensitivityMaps::from_parts(
                current.maps().iter().zip(&grad).map(|(s, g)| s.zip_map(g, |a, b| a - b * step)).collect(),
                false,
            );
            let jc = csm_objective(&cand, x0_hat, y, maps_initial, lambda)?;
            if jc <= j {
                current = cand;
                j = jc;
                objective.push(j);
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }
    Ok(CsmUpdate { maps: current, objective, step })
}

/// Runs the full reverse chain from `z` and returns the reconstruction, the
/// refined maps and a per-step trace.
pub fn sample(
    y: &MultiCoilKSpace,
    z: &ComplexImage,
    maps_initial: &SensitivityMaps,
    denoiser: &dyn Denoiser,
    schedule: &BridgeSchedule,
    config: &SamplerConfig,
) -> Result<(ComplexImage, SensitivityMaps, SampleTrace)> {
    config.validate(schedule)?;
    let mut sched = schedule.reschedule(config.nfe)?;
    if config.noise_mode == NoiseMode::Ode {
        sched = sched.without_noise();
    }
    let op0 = ForwardOperator::new(maps_initial.clone(), y.mask().clone())?;
    if y.n_coils() != maps_initial.n_coils() || z.shape() != op0.shape() {
        return Err(crate::error::dim_err("measurements, maps and initial image disagree"));
    }
    let lambda = if config.calibrate {
        let s2 = maps_initial.norm().powi(2);
        if s2 > 0.0 {
            config.csm_lambda * y.norm_sqr() / s2
        } else {
            config.csm_lambda
        }
    } else {
        0.0
    };

    let n = sched.n_steps();
    let sigma_t = sched.sigma(n);
    let mut x_t = if sigma_t > 0.0 {
        let eps = complex_normal_vec(StreamKey::new(config.seed, Purpose::BridgeInit).step(n as u64), z.len());
        let data = z.data().iter().zip(eps).map(|(a, e)| a + e * sigma_t).collect();
        ComplexImage::from_parts(z.height(), z.width(), data)
    } else {
        z.clone()
    };

    let mut op = op0;
    let mut steps = Vec::with_capacity(n);
    for t in (1..=n).rev() {
        let alpha = sched.alpha(t);
        let x0_hat = denoiser.denoise(&x_t, alpha, sched.sigma(t))?;
        if !x0_hat.same_shape(&x_t) {
            return Err(crate::error::dim_err("denoiser changed the image shape"));
        }
        let (estimate, gamma_used) = match config.placement {
            ConsistencyPlacement::Estimate => {
                let u = guarded_consistency_update(&x0_hat, y, &op, config.gamma1)?;
                (u.image, u.gamma_used)
            }
            ConsistencyPlacement::Iterate => (x0_hat, 0.0),
        };
        let mut csm_change = 0.0;
        if config.calibrate {
            let upd = csm_update(op.maps(), &estimate, y, maps_initial, lambda, config.csm_steps, config.csm_lr)?;
            csm_change = upd.maps.distance(op.maps())?;
            op = ForwardOperator::new(upd.maps, y.mask().clone())?;
        }
        let data_residual = op.residual_norm(&estimate, y)?;
        let key = StreamKey::new(config.seed, Purpose::ReverseStep).step(t as u64);
        x_t = ddb_step_keyed(&estimate, &x_t, t, &sched, config.noise_mode, key)?;
        let mut gamma_used = gamma_used;
        if config.placement == ConsistencyPlacement::Iterate {
            let u = guarded_consistency_update(&x_t, y, &op, config.gamma1)?;
            x_t = u.image;
            gamma_used = u.gamma_used;
        }
        steps.push(StepRecord { t, alpha, data_residual, csm_change, gamma_used });
    }

    let image = match config.placement {
        ConsistencyPlacement::Estimate => guarded_consistency_update(&x_t, y, &op, config.gamma1)?.image,
        ConsistencyPlacement::Iterate => x_t,
    };
    let reduced = steps.iter().filter(|s| s.gamma_used < config.gamma1).count();
    if reduced > 0 {
        log::warn!("consistency step reduced below {} on {reduced} of {n} steps", config.gamma1);
    }
    if !image.is_finite() {
        return Err(Error::Numerical("reconstruction contains non-finite values".into()));
    }
    let maps = op.maps().clone();
    let trace = SampleTrace { steps, final_image: image.clone(), final_maps: maps.clone() };
    Ok((image, maps, trace))
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// Complex pixel-wise mean of the samples.
    pub mean: ComplexImage,
    pub magnitude_mean: Vec<f64>,
    /// Pixel-wise standard deviation of magnitudes (`n − 1` denominator).
    pub magnitude_std: Vec<f64>,
    pub samples: Vec<(ComplexImage, SensitivityMaps, SampleTrace)>,
}

/// Runs [`sample`] with seeds `seed, seed + 1, …`.
pub fn sample_ensemble(
    y: &MultiCoilKSpace,
    z: &ComplexImage,
    maps_initial: &SensitivityMaps,
    denoiser: &dyn Denoiser,
    schedule: &BridgeSchedule,
    config: &SamplerConfig,
    n_samples: usize,
) -> Result<EnsembleResult> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..n_samples as u64).map(|k| config.seed.wrapping_add(k)).collect();
    sample_ensemble_seeds(y, z, maps_initial, denoiser, schedule, config, &seeds)
}

/// Runs [`sample`] once per seed, concurrently.
pub fn sample_ensemble_seeds(
    y: &MultiCoilKSpace,
    z: &ComplexImage,
    maps_initial: &SensitivityMaps,
    denoiser: &dyn Denoiser,
    schedule: &BridgeSchedule,
    config: &SamplerConfig,
    seeds: &[u64],
) -> Result<EnsembleResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("ensemble seeds must be distinct".into()));
    }
    let samples = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SamplerConfig { seed, ..config.clone() };
            sample(y, z, maps_initial, denoiser, schedule, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let (h, w) = z.shape();
    let m = samples.len() as f64;
    let mut mean = vec![Complex64::new(0.0, 0.0); h * w];
    let mut mag_mean = vec![0.0; h * w];
    for (img, _, _) in &samples {
        for (p, v) in img.data().iter().enumerate() {
            mean[p] += v / m;
            mag_mean[p] += v.norm() / m;
        }
    }
    let mut std = vec![0.0; h * w];
    if samples.len() > 1 {
        let base = samples[0].0.magnitude();
        let mut sum = vec![0.0; h * w];
        for (img, _, _) in &samples {
            for (p, v) in img.data().iter().enumerate() {
                let d = v.norm() - base[p];
                sum[p] += d;
                std[p] += d * d;
            }
        }
        for (s, d) in std.iter_mut().zip(&sum) {
            *s = ((*s - d * d / m) / (m - 1.0)).max(0.0).sqrt();
        }
    }
    Ok(EnsembleResult {
        mean: ComplexImage::from_parts(h, w, mean),
        magnitude_mean: mag_mean,
        magnitude_std: std,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::forward_bridge;
    use crate::forward::{make_cartesian_mask, make_mask, MaskStyle};
    use crate::types::SamplingMask;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        ComplexImage::from_vec(h, w, complex_normal_vec(StreamKey::new(seed, Purpose::Test), h * w)).unwrap()
    }

    fn random_maps(nc: usize, h: usize, w: usize, seed: u64) -> SensitivityMaps {
        SensitivityMaps::new((0..nc).map(|i| random_image(h, w, seed * 31 + i as u64)).collect()).unwrap()
    }

    fn setup(h: usize, w: usize, nc: usize, seed: u64) -> (ComplexImage, ForwardOperator, MultiCoilKSpace) {
        let x = random_image(h, w, seed);
        let maps = random_maps(nc, h, w, seed + 1).normalize();
        let mask = make_cartesian_mask(h, w, 2, 2, seed).unwrap();
        let op = ForwardOperator::new(maps, mask).unwrap();
        let y = op.apply(&x).unwrap();
        (x, op, y)
    }

    #[test]
    fn consistency_is_stationary_on_exact_data() {
        let (x, op, y) = setup(8, 8, 2, 1);
        let out = consistency_update(&x, &y, &op, 1.3).unwrap();
        assert!(out.sub(&x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn consistency_descends_for_small_gamma() {
        let (_, op, y) = setup(12, 12, 3, 2);
        for k in 0..20 {
            let x = random_image(12, 12, 100 + k);
            let before = op.residual_norm(&x, &y).unwrap();
            for gamma in [0.1, 0.7, 1.0, 1.5, 1.99] {
                let out = consistency_update(&x, &y, &op, gamma).unwrap();
                assert!(op.residual_norm(&out, &y).unwrap() <= before * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn guard_halves_oversized_steps() {
        let (_, op, y) = setup(12, 12, 1, 3);
        let x = random_image(12, 12, 9);
        let u = guarded_consistency_update(&x, &y, &op, 6.0).unwrap();
        assert!(u.gamma_used < 2.0);
        assert!(u.residual <= op.residual_norm(&x, &y).unwrap());
    }

    #[test]
    fn csm_gradient_matches_finite_differences() {
        let (h, w) = (8, 8);
        let x = random_image(h, w, 10);
        let maps = random_maps(2, h, w, 11);
        let init = random_maps(2, h, w, 12);
        let mask = make_cartesian_mask(h, w, 2, 2, 1).unwrap();
        let y = MultiCoilKSpace::from_full(vec![random_image(h, w, 13), random_image(h, w, 14)], mask).unwrap();
        let lambda = 0.3;
        let g = csm_gradient(&maps, &x, &y, &init, lambda).unwrap();
        for trial in 0..4 {
            let dir = random_maps(2, h, w, 50 + trial);
            let step = 1e-5;
            let shift = |sgn: f64| {
                SensitivityMaps::new(
                    maps.maps().iter().zip(dir.maps()).map(|(s, d)| s.zip_map(d, |a, b| a + b * (sgn * step))).collect(),
                )
                .unwrap()
            };
            let jp = csm_objective(&shift(1.0), &x, &y, &init, lambda).unwrap();
            let jm = csm_objective(&shift(-1.0), &x, &y, &init, lambda).unwrap();
            let fd = (jp - jm) / (2.0 * step);
            let an: f64 = g
                .iter()
                .zip(dir.maps())
                .map(|(gi, di)| 2.0 * crate::types::inner_product(gi, di).unwrap().re)
                .sum();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn csm_update_with_zero_image_pulls_toward_prior() {
        let (h, w) = (8, 8);
        let maps = random_maps(2, h, w, 20);
        let init = random_maps(2, h, w, 21);
        let mask = SamplingMask::full(h, w);
        let y = MultiCoilKSpace::from_full(vec![random_image(h, w, 22), random_image(h, w, 23)], mask).unwrap();
        let mut cur = maps;
        let mut last = cur.distance(&init).unwrap();
        for _ in 0..5 {
            let u = csm_update(&cur, &ComplexImage::zeros(h, w), &y, &init, 0.5, 1, 1.0).unwrap();
            cur = u.maps;
            let d = cur.distance(&init).unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn csm_update_fits_noiseless_data() {
        let (h, w) = (8, 8);
        let x = ComplexImage::from_fn(h, w, |r, c| Complex64::new(1.0 + 0.1 * r as f64, 0.05 * c as f64));
        let truth = random_maps(2, h, w, 30);
        let mask = make_cartesian_mask(h, w, 2, 2, 3).unwrap();
        let y = ForwardOperator::new(truth, mask).unwrap().apply(&x).unwrap();
        let init = random_maps(2, h, w, 31);
        let u = csm_update(&init, &x, &y, &init, 0.0, 400, 1.0).unwrap();
        assert!(u.objective.windows(2).all(|p| p[1] <= p[0]));
        let first = u.objective[0];
        let last = *u.objective.last().unwrap();
        assert!(last < 1e-6 * first, "{last} vs {first}");
    }

    fn toy_problem(h: usize, w: usize) -> (ComplexImage, MultiCoilKSpace, SensitivityMaps, ComplexImage) {
        let x = random_image(h, w, 40);
        let maps = random_maps(3, h, w, 41).normalize();
        let mask = make_mask(h, w, 2, 4, MaskStyle::Equispaced, 0).unwrap();
        let op = ForwardOperator::new(maps.clone(), mask).unwrap();
        let y = op.apply(&x).unwrap();
        let z = op.adjoint(&y).unwrap();
        (x, y, maps, z)
    }

    #[test]
    fn single_perfect_step_returns_truth() {
        let (x, y, maps, z) = toy_problem(8, 8);
        let truth = x.clone();
        let oracle = move |_: &ComplexImage, _: f64, _: f64| Ok(truth.clone());
        let sched = BridgeSchedule::linear(1000, 0.1).unwrap();
        let cfg = SamplerConfig { nfe: 1, gamma1: 0.0, calibrate: false, ..Default::default() };
        let (out, _, trace) = sample(&y, &z, &maps, &oracle, &sched, &cfg).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert!(out.sub(&x).unwrap().norm() < 1e-12);
    }

    fn shrink(x: &ComplexImage, _: f64, _: f64) -> Result<ComplexImage> {
        Ok(x.scale(Complex64::new(0.8, 0.0)))
    }

    #[test]
    fn matches_reference_consistency_loop_bitwise() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(1000, 0.1).unwrap();
        let cfg = SamplerConfig { nfe: 7, gamma1: 0.9, calibrate: false, seed: 5, ..Default::default() };
        let (out, _, trace) = sample(&y, &z, &maps, &shrink, &sched, &cfg).unwrap();
        assert_eq!(trace.steps.len(), 7);

        // Reference: denoise, gradient step, reverse step; then one last step.
        let s = crate::bridge::reschedule(&sched, 7).unwrap();
        let op = ForwardOperator::new(maps.clone(), y.mask().clone()).unwrap();
        let mut xt = z.clone();
        for t in (1..=7).rev() {
            let est = shrink(&xt, 0.0, 0.0).unwrap();
            let g = op.data_gradient(&est, &y).unwrap();
            let est = est.zip_map(&g, |a, b| a - b * 0.9);
            xt = crate::bridge::ddb_step(&est, &xt, t, &s, NoiseMode::VarianceMatched, 5).unwrap();
        }
        let g = op.data_gradient(&xt, &y).unwrap();
        let reference = xt.zip_map(&g, |a, b| a - b * 0.9);
        assert_eq!(out, reference);
    }

    #[test]
    fn plain_bridge_ignores_measurements() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(100, 0.0).unwrap();
        let cfg = SamplerConfig { nfe: 4, gamma1: 0.0, calibrate: false, noise_mode: NoiseMode::Ode, ..Default::default() };
        let (out, _, _) = sample(&y, &z, &maps, &shrink, &sched, &cfg).unwrap();
        // Deterministic affine recursion: x ← 0.8(1−β)x + βx.
        let mut expect = z.clone();
        for t in (1..=4).rev() {
            let beta = (t - 1) as f64 / t as f64;
            expect = expect.scale(Complex64::new(0.8 * (1.0 - beta) + beta, 0.0));
        }
        assert!(out.sub(&expect).unwrap().norm() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(1000, 0.3).unwrap();
        let cfg = SamplerConfig { nfe: 5, seed: 11, ..Default::default() };
        let a = sample(&y, &z, &maps, &shrink, &sched, &cfg).unwrap();
        let b = sample(&y, &z, &maps, &shrink, &sched, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = sample(&y, &z, &maps, &shrink, &sched, &SamplerConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn calibration_records_map_changes() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(1000, 0.1).unwrap();
        let cfg = SamplerConfig { nfe: 3, ..Default::default() };
        let (_, out_maps, trace) = sample(&y, &z, &maps, &shrink, &sched, &cfg).unwrap();
        assert!(trace.steps.iter().any(|s| s.csm_change > 0.0));
        assert_eq!(trace.final_maps, out_maps);
        assert!(trace.steps.iter().all(|s| s.gamma_used <= DEFAULT_GAMMA1));
        assert_eq!(trace.steps.iter().map(|s| s.t).collect::<Vec<_>>(), vec![3, 2, 1]);
    }

    #[test]
    fn iterate_placement_runs() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(1000, 0.1).unwrap();
        let cfg = SamplerConfig { nfe: 3, calibrate: false, gamma1: 1.0, placement: ConsistencyPlacement::Iterate, ..Default::default() };
        let (out, _, _) = sample(&y, &z, &maps, &shrink, &sched, &cfg).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(10, 0.1).unwrap();
        for cfg in [
            SamplerConfig { nfe: 0, ..Default::default() },
            SamplerConfig { nfe: 11, ..Default::default() },
            SamplerConfig { nfe: 2, gamma1: -1.0, ..Default::default() },
            SamplerConfig { nfe: 2, csm_lambda: f64::NAN, ..Default::default() },
        ] {
            assert!(sample(&y, &z, &maps, &shrink, &sched, &cfg).is_err());
        }
    }

    #[test]
    fn ensemble_contracts() {
        let (_, y, maps, z) = toy_problem(8, 8);
        let sched = BridgeSchedule::linear(1000, 0.3).unwrap();
        let ode = SamplerConfig { nfe: 4, noise_mode: NoiseMode::Ode, ..Default::default() };
        let e = sample_ensemble(&y, &z, &maps, &shrink, &sched, &ode, 3).unwrap();
        assert!(e.magnitude_std.iter().all(|&s| s == 0.0));
        assert!(sample_ensemble_seeds(&y, &z, &maps, &shrink, &sched, &ode, &[4, 4]).is_err());
        assert!(sample_ensemble(&y, &z, &maps, &shrink, &sched, &ode, 0).is_err());

        let sde = SamplerConfig { nfe: 4, ..Default::default() };
        let e = sample_ensemble(&y, &z, &maps, &shrink, &sched, &sde, 3).unwrap();
        assert!(e.magnitude_std.iter().any(|&s| s > 0.0));
        let single = sample(&y, &z, &maps, &shrink, &sched, &SamplerConfig { seed: 1, ..sde.clone() }).unwrap();
        assert_eq!(e.samples[1].0, single.0);
    }

    #[test]
    fn forward_bridge_feeds_reverse_chain() {
        let x0 = random_image(4, 4, 1);
        let z = random_image(4, 4, 2);
        let sched = BridgeSchedule::linear(10, 0.0).unwrap();
        let xt = forward_bridge(&x0, &z, 10, &sched, 0).unwrap();
        assert_eq!(xt, z);
    }
}
