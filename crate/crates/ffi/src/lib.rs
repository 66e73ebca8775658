//! C interface to the `adobi` library.
//!
//! Objects cross the boundary as opaque heap handles that the caller frees
//! with the matching `*_free` function. Complex arrays are interleaved
//! `double` pairs (`re, im`) in row-major order. Every fallible call returns
//! an [`AdobiStatus`]; the message for the last failure on the calling thread
//! is available from [`adobi_last_error`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use adobi::bridge::{BridgeSchedule, NoiseMode};
use adobi::calibration::zero_filled_init;
use adobi::config::ExperimentConfig;
use adobi::experiment::{load_denoiser, LoadedDenoiser};
use adobi::forward::{add_measurement_noise, make_mask, ForwardOperator, MaskStyle};
use adobi::metrics::{psnr, ssim_default};
use adobi::mrid::{self, MridObject};
use adobi::phantom::{make_coils, make_phantom, CoilModelSpec, PhantomSpec};
use adobi::sampler::{sample, SamplerConfig};
use adobi::{ComplexImage, Error, MultiCoilKSpace, SamplingMask, SensitivityMaps};
use num_complex::Complex64;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdobiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Calibration = 4,
    Schedule = 5,
    DegenerateModel = 6,
    Configuration = 7,
    Numerical = 8,
    Format = 9,
    Io = 10,
    Panic = 11,
}

impl From<&Error> for AdobiStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => Self::Dimension,
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::Calibration(_) => Self::Calibration,
            Error::Schedule(_) => Self::Schedule,
            Error::DegenerateModel(_) => Self::DegenerateModel,
            Error::Configuration(_) => Self::Configuration,
            Error::Numerical(_) => Self::Numerical,
            Error::Format { .. } => Self::Format,
            Error::Io(_) => Self::Io,
        }
    }
}

/// Bridge noise handling for [`AdobiSamplerParams`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdobiNoiseMode {
    AsWritten = 0,
    VarianceMatched = 1,
    Ode = 2,
}

/// Column layout for [`adobi_mask_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdobiMaskStyle {
    Equispaced = 0,
    Random = 1,
}

/// Sampler and schedule settings.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdobiSamplerParams {
    pub nfe: usize,
    pub gamma1: f64,
    pub csm_lambda: f64,
    pub csm_steps: usize,
    pub csm_lr: f64,
    pub noise_mode: AdobiNoiseMode,
    /// Nonzero enables coil map refinement.
    pub calibrate: i32,
    pub seed: u64,
    /// Fine schedule length.
    pub n_steps: usize,
    pub sigma_max: f64,
}

pub struct AdobiImage(ComplexImage);
pub struct AdobiMaps(SensitivityMaps);
pub struct AdobiMask(SamplingMask);
pub struct AdobiKSpace(MultiCoilKSpace);
pub struct AdobiConfig(ExperimentConfig);
pub struct AdobiDenoiser(LoadedDenoiser);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(AdobiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AdobiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdobiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AdobiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            AdobiStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(AdobiStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(AdobiStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn complex_slice<'a>(data: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null("data"));
    }
    Ok(std::slice::from_raw_parts(data, 2 * len))
}

fn write_interleaved(values: &[Complex64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len != values.len() {
        return Err(Failure(AdobiStatus::Dimension, format!("buffer holds {len} values, need {}", values.len())));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    let dst = unsafe { std::slice::from_raw_parts_mut(out, 2 * len) };
    for (d, v) in dst.chunks_exact_mut(2).zip(values) {
        d[0] = v.re;
        d[1] = v.im;
    }
    Ok(())
}

unsafe fn release<T>(handle: *mut T) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Releases the handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn adobi_image_free(handle: *mut AdobiImage) {
    release(handle)
}

/// Releases the handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn adobi_maps_free(handle: *mut AdobiMaps) {
    release(handle)
}

/// Releases the handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn adobi_mask_free(handle: *mut AdobiMask) {
    release(handle)
}

/// Releases the handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn adobi_kspace_free(handle: *mut AdobiKSpace) {
    release(handle)
}

/// Releases the handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn adobi_config_free(handle: *mut AdobiConfig) {
    release(handle)
}

/// Releases the handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn adobi_denoiser_free(handle: *mut AdobiDenoiser) {
    release(handle)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adobi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn adobi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds an image from `height * width` interleaved complex values.
#[no_mangle]
pub unsafe extern "C" fn adobi_image_new(
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut AdobiImage,
) -> AdobiStatus {
    guard(|| {
        let raw = complex_slice(data, height * width)?;
        let values = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        put(out, AdobiImage(ComplexImage::from_vec(height, width, values)?), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn adobi_image_shape(image: *const AdobiImage, height: *mut usize, width: *mut usize) -> AdobiStatus {
    guard(|| {
        let img = borrow(image, "image")?;
        if height.is_null() || width.is_null() {
            return Err(null("shape output"));
        }
        (*height, *width) = img.0.shape();
        Ok(())
    })
}

/// Copies the pixels into `out`, which must hold `len = height * width`
/// interleaved complex values.
#[no_mangle]
pub unsafe extern "C" fn adobi_image_data(image: *const AdobiImage, out: *mut f64, len: usize) -> AdobiStatus {
    guard(|| write_interleaved(borrow(image, "image")?.0.data(), out, len))
}

/// Ellipse phantom of side `size` with peak magnitude 1.
#[no_mangle]
pub unsafe extern "C" fn adobi_phantom(size: usize, n_ellipses: usize, seed: u64, out: *mut *mut AdobiImage) -> AdobiStatus {
    guard(|| {
        let spec = PhantomSpec { size, n_ellipses, seed, ..PhantomSpec::default() };
        put(out, AdobiImage(make_phantom(&spec)?), "out")
    })
}

/// Smooth coil maps and a perturbed copy; both are normalized.
#[no_mangle]
pub unsafe extern "C" fn adobi_coils(
    n_coils: usize,
    height: usize,
    width: usize,
    perturbation: f64,
    seed: u64,
    true_out: *mut *mut AdobiMaps,
    initial_out: *mut *mut AdobiMaps,
) -> AdobiStatus {
    guard(|| {
        if true_out.is_null() || initial_out.is_null() {
            return Err(null("maps output"));
        }
        let spec = CoilModelSpec { n_coils, perturbation, seed, ..CoilModelSpec::default() };
        let (t, i) = make_coils(&spec, height, width)?;
        put(true_out, AdobiMaps(t), "true_out")?;
        put(initial_out, AdobiMaps(i), "initial_out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn adobi_maps_n_coils(maps: *const AdobiMaps, out: *mut usize) -> AdobiStatus {
    guard(|| {
        let m = borrow(maps, "maps")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.0.n_coils();
        Ok(())
    })
}

/// Copies coil `coil` into `out` (`len = height * width` complex values).
#[no_mangle]
pub unsafe extern "C" fn adobi_maps_coil_data(maps: *const AdobiMaps, coil: usize, out: *mut f64, len: usize) -> AdobiStatus {
    guard(|| {
        let m = borrow(maps, "maps")?;
        if coil >= m.0.n_coils() {
            return Err(Failure(AdobiStatus::InvalidArgument, format!("coil {coil} out of range")));
        }
        write_interleaved(m.0.map(coil).data(), out, len)
    })
}

/// Column mask with a centred fully sampled block of `acs_width` columns.
#[no_mangle]
pub unsafe extern "C" fn adobi_mask_new(
    height: usize,
    width: usize,
    acceleration: usize,
    acs_width: usize,
    style: AdobiMaskStyle,
    seed: u64,
    out: *mut *mut AdobiMask,
) -> AdobiStatus {
    guard(|| {
        let style = match style {
            AdobiMaskStyle::Equispaced => MaskStyle::Equispaced,
            AdobiMaskStyle::Random => MaskStyle::Random,
        };
        put(out, AdobiMask(make_mask(height, width, acceleration, acs_width, style, seed)?), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn adobi_mask_kept_count(mask: *const AdobiMask, out: *mut usize) -> AdobiStatus {
    guard(|| {
        let m = borrow(mask, "mask")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.0.kept_count();
        Ok(())
    })
}

/// `y = P F S x`.
#[no_mangle]
pub unsafe extern "C" fn adobi_forward(
    maps: *const AdobiMaps,
    mask: *const AdobiMask,
    x: *const AdobiImage,
    out: *mut *mut AdobiKSpace,
) -> AdobiStatus {
    guard(|| {
        let op = ForwardOperator::new(borrow(maps, "maps")?.0.clone(), borrow(mask, "mask")?.0.clone())?;
        put(out, AdobiKSpace(op.apply(&borrow(x, "x")?.0)?), "out")
    })
}

/// `A^H y` with the given maps and the mask carried by `y`.
#[no_mangle]
pub unsafe extern "C" fn adobi_adjoint(maps: *const AdobiMaps, y: *const AdobiKSpace, out: *mut *mut AdobiImage) -> AdobiStatus {
    guard(|| {
        let y = &borrow(y, "y")?.0;
        let op = ForwardOperator::new(borrow(maps, "maps")?.0.clone(), y.mask().clone())?;
        put(out, AdobiImage(op.adjoint(y)?), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn adobi_kspace_n_coils(y: *const AdobiKSpace, out: *mut usize) -> AdobiStatus {
    guard(|| {
        let y = borrow(y, "y")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = y.0.n_coils();
        Ok(())
    })
}

/// Adds complex Gaussian noise on the acquired samples with
/// `‖e‖ = level · ‖y‖`.
#[no_mangle]
pub unsafe extern "C" fn adobi_add_noise(y: *const AdobiKSpace, level: f64, seed: u64, out: *mut *mut AdobiKSpace) -> AdobiStatus {
    guard(|| put(out, AdobiKSpace(add_measurement_noise(&borrow(y, "y")?.0, level, seed)?), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn adobi_zero_filled(y: *const AdobiKSpace, maps: *const AdobiMaps, out: *mut *mut AdobiImage) -> AdobiStatus {
    guard(|| put(out, AdobiImage(zero_filled_init(&borrow(y, "y")?.0, &borrow(maps, "maps")?.0)?), "out"))
}

/// Experiment configuration with every key at its default.
#[no_mangle]
pub unsafe extern "C" fn adobi_config_new(out: *mut *mut AdobiConfig) -> AdobiStatus {
    guard(|| put(out, AdobiConfig(ExperimentConfig::default()), "out"))
}

/// Sets one `key = value` pair using the configuration file syntax.
#[no_mangle]
pub unsafe extern "C" fn adobi_config_set(cfg: *mut AdobiConfig, key: *const c_char, value: *const c_char) -> AdobiStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.0.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        Ok(())
    })
}

/// Denoiser selected by the configuration: a Gaussian oracle fitted on
/// simulated training cases or a ridge denoiser loaded from disk.
#[no_mangle]
pub unsafe extern "C" fn adobi_denoiser_from_config(cfg: *const AdobiConfig, out: *mut *mut AdobiDenoiser) -> AdobiStatus {
    guard(|| {
        let cfg = &borrow(cfg, "cfg")?.0;
        cfg.validate()?;
        put(out, AdobiDenoiser(load_denoiser(cfg)?), "out")
    })
}

/// Fills `params` with the library defaults.
#[no_mangle]
pub unsafe extern "C" fn adobi_sampler_params_default(params: *mut AdobiSamplerParams) -> AdobiStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        let d = SamplerConfig::default();
        *p = AdobiSamplerParams {
            nfe: d.nfe,
            gamma1: d.gamma1,
            csm_lambda: d.csm_lambda,
            csm_steps: d.csm_steps,
            csm_lr: d.csm_lr,
            noise_mode: AdobiNoiseMode::VarianceMatched,
            calibrate: i32::from(d.calibrate),
            seed: d.seed,
            n_steps: 1000,
            sigma_max: 0.1,
        };
        Ok(())
    })
}

/// Runs the reverse bridge from `z`. `maps_out` may be null when the refined
/// maps are not wanted.
#[no_mangle]
pub unsafe extern "C" fn adobi_sample(
    y: *const AdobiKSpace,
    z: *const AdobiImage,
    maps_initial: *const AdobiMaps,
    denoiser: *const AdobiDenoiser,
    params: *const AdobiSamplerParams,
    image_out: *mut *mut AdobiImage,
    maps_out: *mut *mut AdobiMaps,
) -> AdobiStatus {
    guard(|| {
        let p = borrow(params, "params")?;
        let schedule = BridgeSchedule::linear(p.n_steps, p.sigma_max)?;
        let config = SamplerConfig {
            nfe: p.nfe,
            gamma1: p.gamma1,
            csm_lambda: p.csm_lambda,
            csm_steps: p.csm_steps,
            csm_lr: p.csm_lr,
            noise_mode: match p.noise_mode {
                AdobiNoiseMode::AsWritten => NoiseMode::AsWritten,
                AdobiNoiseMode::VarianceMatched => NoiseMode::VarianceMatched,
                AdobiNoiseMode::Ode => NoiseMode::Ode,
            },
            calibrate: p.calibrate != 0,
            seed: p.seed,
            ..SamplerConfig::default()
        };
        if image_out.is_null() {
            return Err(null("image_out"));
        }
        let (image, maps, _) = sample(
            &borrow(y, "y")?.0,
            &borrow(z, "z")?.0,
            &borrow(maps_initial, "maps_initial")?.0,
            &borrow(denoiser, "denoiser")?.0,
            &schedule,
            &config,
        )?;
        put(image_out, AdobiImage(image), "image_out")?;
        if !maps_out.is_null() {
            put(maps_out, AdobiMaps(maps), "maps_out")?;
        }
        Ok(())
    })
}

/// Magnitude PSNR against the reference peak; `INFINITY` on an exact match.
#[no_mangle]
pub unsafe extern "C" fn adobi_psnr(reference: *const AdobiImage, test: *const AdobiImage, out: *mut f64) -> AdobiStatus {
    guard(|| {
        let v = psnr(&borrow(reference, "reference")?.0, &borrow(test, "test")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Magnitude SSIM with the default window.
#[no_mangle]
pub unsafe extern "C" fn adobi_ssim(reference: *const AdobiImage, test: *const AdobiImage, out: *mut f64) -> AdobiStatus {
    guard(|| {
        let v = ssim_default(&borrow(reference, "reference")?.0, &borrow(test, "test")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn adobi_image_save(path: *const c_char, image: *const AdobiImage) -> AdobiStatus {
    guard(|| Ok(mrid::save_array(path_arg(path)?, &MridObject::Image(borrow(image, "image")?.0.clone()))?))
}

#[no_mangle]
pub unsafe extern "C" fn adobi_image_load(path: *const c_char, out: *mut *mut AdobiImage) -> AdobiStatus {
    guard(|| put(out, AdobiImage(mrid::load_image(path_arg(path)?)?), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn adobi_maps_save(path: *const c_char, maps: *const AdobiMaps) -> AdobiStatus {
    guard(|| Ok(mrid::save_array(path_arg(path)?, &MridObject::Maps(borrow(maps, "maps")?.0.clone()))?))
}

#[no_mangle]
pub unsafe extern "C" fn adobi_maps_load(path: *const c_char, out: *mut *mut AdobiMaps) -> AdobiStatus {
    guard(|| put(out, AdobiMaps(mrid::load_maps(path_arg(path)?)?.with_detected_normalization(1e-5)), "out"))
}

/// Saves the k-space planes; the mask is not part of the file.
#[no_mangle]
pub unsafe extern "C" fn adobi_kspace_save(path: *const c_char, y: *const AdobiKSpace) -> AdobiStatus {
    guard(|| Ok(mrid::save_array(path_arg(path)?, &MridObject::KSpace(borrow(y, "y")?.0.planes().to_vec()))?))
}

#[no_mangle]
pub unsafe extern "C" fn adobi_kspace_load(path: *const c_char, mask: *const AdobiMask, out: *mut *mut AdobiKSpace) -> AdobiStatus {
    guard(|| {
        let planes = mrid::load_kspace_planes(path_arg(path)?)?;
        put(out, AdobiKSpace(MultiCoilKSpace::new(planes, borrow(mask, "mask")?.0.clone())?), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn adobi_mask_save(path: *const c_char, mask: *const AdobiMask) -> AdobiStatus {
    guard(|| Ok(mrid::save_array(path_arg(path)?, &MridObject::Mask(borrow(mask, "mask")?.0.clone()))?))
}

#[no_mangle]
pub unsafe extern "C" fn adobi_mask_load(path: *const c_char, out: *mut *mut AdobiMask) -> AdobiStatus {
    guard(|| put(out, AdobiMask(mrid::load_mask(path_arg(path)?)?), "out"))
}
