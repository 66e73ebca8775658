use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use adobi_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(adobi_last_error()) }.to_string_lossy().into_owned()
}

fn ok(status: AdobiStatus) {
    assert_eq!(status, AdobiStatus::Ok, "{}", last_error());
}

struct Scene {
    x: *mut AdobiImage,
    maps: *mut AdobiMaps,
    init: *mut AdobiMaps,
    mask: *mut AdobiMask,
    y: *mut AdobiKSpace,
}

impl Scene {
    fn new(size: usize, acceleration: usize, perturbation: f64) -> Self {
        let mut s = Scene {
            x: ptr::null_mut(),
            maps: ptr::null_mut(),
            init: ptr::null_mut(),
            mask: ptr::null_mut(),
            y: ptr::null_mut(),
        };
        unsafe {
            ok(adobi_phantom(size, 6, 2, &mut s.x));
            ok(adobi_coils(4, size, size, perturbation, 2, &mut s.maps, &mut s.init));
            ok(adobi_mask_new(size, size, acceleration, 8, AdobiMaskStyle::Equispaced, 2, &mut s.mask));
            ok(adobi_forward(s.maps, s.mask, s.x, &mut s.y));
        }
        s
    }
}

impl Drop for Scene {
    fn drop(&mut self) {
        unsafe {
            adobi_image_free(self.x);
            adobi_maps_free(self.maps);
            adobi_maps_free(self.init);
            adobi_mask_free(self.mask);
            adobi_kspace_free(self.y);
        }
    }
}

#[test]
fn image_round_trip_through_buffers() {
    let data: Vec<f64> = (0..2 * 6).map(|i| i as f64 * 0.5).collect();
    let mut img = ptr::null_mut();
    unsafe {
        ok(adobi_image_new(2, 3, data.as_ptr(), &mut img));
        let (mut h, mut w) = (0, 0);
        ok(adobi_image_shape(img, &mut h, &mut w));
        assert_eq!((h, w), (2, 3));
        let mut back = vec![0.0; 12];
        ok(adobi_image_data(img, back.as_mut_ptr(), 6));
        assert_eq!(back, data);
        assert_eq!(adobi_image_data(img, back.as_mut_ptr(), 5), AdobiStatus::Dimension);
        adobi_image_free(img);
    }
}

#[test]
fn null_and_invalid_arguments_report_errors() {
    unsafe {
        assert_eq!(adobi_phantom(32, 4, 0, ptr::null_mut()), AdobiStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut img = ptr::null_mut();
        assert_eq!(adobi_phantom(4, 4, 0, &mut img), AdobiStatus::InvalidArgument);
        assert!(img.is_null());
        assert!(!last_error().is_empty());
        ok(adobi_phantom(16, 2, 0, &mut img));
        assert!(last_error().is_empty());
        adobi_image_free(img);
        adobi_image_free(ptr::null_mut());
        let mut p = 0.0;
        assert_eq!(adobi_psnr(ptr::null(), ptr::null(), &mut p), AdobiStatus::NullPointer);
    }
}

#[test]
fn forward_adjoint_zero_filled_and_noise() {
    let s = Scene::new(32, 1, 0.0);
    unsafe {
        let mut back = ptr::null_mut();
        ok(adobi_adjoint(s.maps, s.y, &mut back));
        let mut p = 0.0;
        ok(adobi_psnr(s.x, back, &mut p));
        assert!(p > 100.0, "{p}");
        let mut zf = ptr::null_mut();
        ok(adobi_zero_filled(s.y, s.maps, &mut zf));
        let mut ss = 0.0;
        ok(adobi_ssim(s.x, zf, &mut ss));
        assert!(ss > 0.999);
        let mut noisy = ptr::null_mut();
        ok(adobi_add_noise(s.y, 0.1, 4, &mut noisy));
        let mut nc = 0;
        ok(adobi_kspace_n_coils(noisy, &mut nc));
        assert_eq!(nc, 4);
        assert_eq!(adobi_add_noise(s.y, -1.0, 4, &mut noisy), AdobiStatus::InvalidArgument);
        for i in [back, zf] {
            adobi_image_free(i);
        }
        adobi_kspace_free(noisy);
    }
}

#[test]
fn sampling_with_configured_denoiser() {
    let s = Scene::new(32, 4, 0.1);
    unsafe {
        let mut cfg = ptr::null_mut();
        ok(adobi_config_new(&mut cfg));
        for (k, v) in [("size", "32"), ("n_coils", "4"), ("acs_width", "8"), ("train_count", "12")] {
            let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
            ok(adobi_config_set(cfg, k.as_ptr(), v.as_ptr()));
        }
        let bad = CString::new("no_such_key").unwrap();
        assert_eq!(adobi_config_set(cfg, bad.as_ptr(), bad.as_ptr()), AdobiStatus::Configuration);
        let mut den = ptr::null_mut();
        ok(adobi_denoiser_from_config(cfg, &mut den));

        let mut params = std::mem::zeroed::<AdobiSamplerParams>();
        ok(adobi_sampler_params_default(&mut params));
        assert_eq!(params.gamma1, 2.4);
        params.nfe = 4;
        params.noise_mode = AdobiNoiseMode::Ode;
        let mut z = ptr::null_mut();
        ok(adobi_zero_filled(s.y, s.init, &mut z));
        let (mut a, mut b, mut maps_out) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        ok(adobi_sample(s.y, z, s.init, den, &params, &mut a, &mut maps_out));
        ok(adobi_sample(s.y, z, s.init, den, &params, &mut b, ptr::null_mut()));
        let mut p = 0.0;
        ok(adobi_psnr(a, b, &mut p));
        assert_eq!(p, f64::INFINITY);
        let mut nc = 0;
        ok(adobi_maps_n_coils(maps_out, &mut nc));
        assert_eq!(nc, 4);

        params.nfe = 0;
        assert_ne!(adobi_sample(s.y, z, s.init, den, &params, &mut a, ptr::null_mut()), AdobiStatus::Ok);
        for i in [z, a, b] {
            adobi_image_free(i);
        }
        adobi_maps_free(maps_out);
        adobi_denoiser_free(den);
        adobi_config_free(cfg);
    }
}

#[test]
fn files_round_trip() {
    let s = Scene::new(16, 2, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| CString::new(dir.path().join(n).to_str().unwrap()).unwrap();
    unsafe {
        ok(adobi_image_save(path("x.mrid").as_ptr(), s.x));
        ok(adobi_maps_save(path("s.mrid").as_ptr(), s.maps));
        ok(adobi_mask_save(path("m.mrid").as_ptr(), s.mask));
        ok(adobi_kspace_save(path("y.mrid").as_ptr(), s.y));
        let (mut x, mut maps, mut mask, mut y) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        ok(adobi_image_load(path("x.mrid").as_ptr(), &mut x));
        ok(adobi_maps_load(path("s.mrid").as_ptr(), &mut maps));
        ok(adobi_mask_load(path("m.mrid").as_ptr(), &mut mask));
        ok(adobi_kspace_load(path("y.mrid").as_ptr(), mask, &mut y));
        let mut p = 0.0;
        ok(adobi_psnr(s.x, x, &mut p));
        assert!(p > 120.0, "{p}");
        let (mut k1, mut k2) = (0, 0);
        ok(adobi_mask_kept_count(s.mask, &mut k1));
        ok(adobi_mask_kept_count(mask, &mut k2));
        assert_eq!(k1, k2);
        assert_eq!(adobi_image_load(path("s.mrid").as_ptr(), &mut x), AdobiStatus::Format);
        assert_eq!(adobi_image_load(path("missing.mrid").as_ptr(), &mut x), AdobiStatus::Io);
        adobi_image_free(x);
        adobi_maps_free(maps);
        adobi_mask_free(mask);
        adobi_kspace_free(y);
    }
}

/// Directory holding the static library built for this test run.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/adobi.h");
    assert!(header.exists(), "header not generated");
    let lib = artifact_dir().join("libadobi_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link check: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c_smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
