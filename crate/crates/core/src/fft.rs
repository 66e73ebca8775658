//! Centred, unitary 2-D FFT.
//!
//! Images and k-space are both stored with their origin at `(h/2, w/2)`, so
//! the transform is `fftshift ∘ fft2 ∘ ifftshift`, scaled by `1/sqrt(h·w)` in
//! both directions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::types::ComplexImage;

struct Plan2d {
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

fn plan(height: usize, width: usize) -> Arc<Plan2d> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Plan2d>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((height, width))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan2d {
                row_fwd: planner.plan_fft_forward(width),
                row_inv: planner.plan_fft_inverse(width),
                col_fwd: planner.plan_fft_forward(height),
                col_inv: planner.plan_fft_inverse(height),
            })
        })
        .clone()
}

/// `out[(i + shift) % n] = in[i]` along both axes.
fn roll(data: &[Complex64], height: usize, width: usize, dr: usize, dc: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..height {
        let rr = (r + dr) % height;
        for c in 0..width {
            out[rr * width + (c + dc) % width] = data[r * width + c];
        }
    }
    out
}

fn transform(img: &ComplexImage, inverse: bool) -> ComplexImage {
    let (h, w) = img.shape();
    let p = plan(h, w);
    // ifftshift
    let mut buf = roll(img.data(), h, w, h - h / 2, w - w / 2);

    let (row, col) = if inverse { (&p.row_inv, &p.col_inv) } else { (&p.row_fwd, &p.col_fwd) };
    for chunk in buf.chunks_exact_mut(w) {
        row.process(chunk);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = buf[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            buf[r * w + c] = column[r];
        }
    }

    let scale = 1.0 / ((h * w) as f64).sqrt();
    // fftshift
    let mut out = roll(&buf, h, w, h / 2, w / 2);
    for z in &mut out {
        *z *= scale;
    }
    ComplexImage::from_parts(h, w, out)
}

/// Unitary centred forward transform.
pub fn fft2c(img: &ComplexImage) -> ComplexImage {
    transform(img, false)
}

/// Unitary centred inverse transform.
pub fn ifft2c(img: &ComplexImage) -> ComplexImage {
    transform(img, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal_vec, Purpose, StreamKey};
    use crate::types::inner_product;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        ComplexImage::from_vec(h, w, complex_normal_vec(StreamKey::new(seed, Purpose::Test), h * w)).unwrap()
    }

    /// Direct O(N^2) centred DFT.
    fn dft_oracle(img: &ComplexImage) -> ComplexImage {
        let (h, w) = img.shape();
        let scale = 1.0 / ((h * w) as f64).sqrt();
        ComplexImage::from_fn(h, w, |ku, kv| {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let ph = -2.0
                        * std::f64::consts::PI
                        * (((ku as f64 - (h / 2) as f64) * (r as f64 - (h / 2) as f64)) / h as f64
                            + ((kv as f64 - (w / 2) as f64) * (c as f64 - (w / 2) as f64)) / w as f64);
                    acc += img.get(r, c) * Complex64::from_polar(1.0, ph);
                }
            }
            acc * scale
        })
    }

    #[test]
    fn matches_direct_dft() {
        for &(h, w) in &[(8, 8), (6, 10), (5, 7)] {
            let x = random_image(h, w, (h * w) as u64);
            let fast = fft2c(&x);
            let slow = dft_oracle(&x);
            let err = fast.sub(&slow).unwrap().norm() / slow.norm();
            assert!(err < 1e-12, "{h}x{w}: {err}");
        }
    }

    #[test]
    fn constant_maps_to_scaled_dc() {
        let n = 16;
        let x = ComplexImage::from_fn(n, n, |_, _| Complex64::new(2.0, -1.0));
        let k = fft2c(&x);
        let dc = k.get(n / 2, n / 2);
        assert!((dc - Complex64::new(2.0, -1.0) * n as f64).norm() < 1e-12);
        let rest: f64 = k.data().iter().map(|z| z.norm()).sum::<f64>() - dc.norm();
        assert!(rest < 1e-10);
    }

    #[test]
    fn unitary_round_trip() {
        let x = random_image(12, 9, 5);
        let y = random_image(12, 9, 6);
        let back = ifft2c(&fft2c(&x));
        assert!(back.sub(&x).unwrap().norm() < 1e-12 * x.norm());
        let lhs = inner_product(&fft2c(&x), &y).unwrap();
        let rhs = inner_product(&x, &ifft2c(&y)).unwrap();
        assert!((lhs - rhs).norm() < 1e-12 * x.norm() * y.norm());
    }
}
