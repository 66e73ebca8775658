//! Synthetic ground truth: ellipse phantoms, coil sensitivities and their
//! perturbed estimates.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{complex_normal, Purpose, StreamKey};
use crate::types::{ComplexImage, SensitivityMaps};

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    /// Total ellipse count, including the outer one.
    pub n_ellipses: usize,
    /// Range for the additive intensity of each inner ellipse.
    pub intensity_range: (f64, f64),
    /// Peak phase of the linear ramp, in radians.
    pub phase_ramp: f64,
    /// Semi-axes of the outer ellipse in units of the half field of view.
    pub head_axes: (f64, f64),
    /// Relative random jitter of the outer semi-axes.
    pub head_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_ellipses: 8,
            intensity_range: (-0.4, 0.4),
            phase_ramp: 1.0,
            head_axes: (0.72, 0.9),
            head_jitter: 0.05,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::InvalidArgument(format!("phantom size must be >= 16, got {}", self.size)));
        }
        if self.n_ellipses == 0 {
            return Err(Error::InvalidArgument("at least one ellipse is required".into()));
        }
        let (a, b) = self.head_axes;
        if !(a > 0.0 && b > 0.0 && a <= 1.0 && b <= 1.0) {
            return Err(Error::InvalidArgument(format!("outer semi-axes must lie in (0, 1], got {:?}", self.head_axes)));
        }
        if !(self.head_jitter >= 0.0 && self.head_jitter < 1.0) {
            return Err(Error::InvalidArgument(format!("head_jitter must lie in [0, 1), got {}", self.head_jitter)));
        }
        let (lo, hi) = self.intensity_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad intensity range {:?}", self.intensity_range)));
        }
        if !self.phase_ramp.is_finite() {
            return Err(Error::InvalidArgument("phase_ramp must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let du = u - self.cx;
        let dv = v - self.cy;
        let p = du * self.cos + dv * self.sin;
        let q = -du * self.sin + dv * self.cos;
        (p / self.a).powi(2) + (q / self.b).powi(2) <= 1.0
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Normalized coordinate of a (sub)pixel: `-1` at index 0, `0` at the centre.
fn coord(index: f64, n: usize) -> f64 {
    (index - (n / 2) as f64) / (n / 2) as f64
}

/// Anti-aliased ellipse phantom with a linear phase ramp; peak magnitude 1.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let mut rng = StreamKey::new(spec.seed, Purpose::Phantom).rng();
    let n = spec.size;
    let (ha, hb) = spec.head_axes;
    let jitter = |rng: &mut rand_chacha::ChaCha12Rng| 1.0 + uniform(rng, -spec.head_jitter, spec.head_jitter);
    let head = Ellipse { cx: 0.0, cy: 0.0, a: ha * jitter(&mut rng), b: hb * jitter(&mut rng), cos: 1.0, sin: 0.0, value: 1.0 };
    let mut ellipses = vec![head];
    for _ in 1..spec.n_ellipses {
        let r = 0.6 * uniform(&mut rng, 0.0, 1.0).sqrt();
        let th = uniform(&mut rng, 0.0, 2.0 * PI);
        let angle = uniform(&mut rng, 0.0, PI);
        ellipses.push(Ellipse {
            cx: r * th.cos() * head.a,
            cy: r * th.sin() * head.b,
            a: uniform(&mut rng, 0.06, 0.3),
            b: uniform(&mut rng, 0.06, 0.3),
            cos: angle.cos(),
            sin: angle.sin(),
            value: uniform(&mut rng, spec.intensity_range.0, spec.intensity_range.1),
        });
    }
    let ramp_dir = uniform(&mut rng, 0.0, 2.0 * PI);
    let (rc, rs) = (ramp_dir.cos(), ramp_dir.sin());

    let sub = SUPERSAMPLE as f64;
    let mut img = ComplexImage::from_fn(n, n, |row, col| {
        let mut acc = 0.0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let v = coord(row as f64 + (i as f64 + 0.5) / sub - 0.5, n);
                let u = coord(col as f64 + (j as f64 + 0.5) / sub - 0.5, n);
                acc += ellipses.iter().filter(|e| e.contains(u, v)).map(|e| e.value).sum::<f64>();
            }
        }
        let mag = acc / (sub * sub);
        let phase = spec.phase_ramp * (coord(col as f64, n) * rc + coord(row as f64, n) * rs);
        Complex64::from_polar(mag, phase)
    });
    let peak = img.max_abs();
    if peak > 0.0 {
        img = img.scale(Complex64::new(1.0 / peak, 0.0));
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoilModel {
    /// Gaussian magnitude bumps on a ring with smooth linear phases.
    GaussianBumps { ring_radius: f64, width: f64, phase_scale: f64 },
    /// Uniform magnitude with phase `2π i x / W` for coil `i`, so that every
    /// coil's k-space is a column shift of the first.
    ShiftedPhase,
}

impl Default for CoilModel {
    fn default() -> Self {
        CoilModel::GaussianBumps { ring_radius: 1.2, width: 0.7, phase_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoilModelSpec {
    pub n_coils: usize,
    pub model: CoilModel,
    /// Relative amplitude of the smooth multiplicative error in the initial
    /// maps.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for CoilModelSpec {
    fn default() -> Self {
        Self { n_coils: 8, model: CoilModel::default(), perturbation: 0.1, seed: 0 }
    }
}

/// Smooth complex field with unit RMS built from low spatial frequencies.
pub fn smooth_random_field(height: usize, width: usize, max_freq: usize, key: StreamKey) -> ComplexImage {
    let mut rng = key.rng();
    let f = max_freq as isize;
    let mut modes = Vec::new();
    for ky in -f..=f {
        for kx in -f..=f {
            if ky * ky + kx * kx <= f * f {
                modes.push((ky as f64, kx as f64, complex_normal(&mut rng)));
            }
        }
    }
    let field = ComplexImage::from_fn(height, width, |r, c| {
        modes
            .iter()
            .map(|&(ky, kx, a)| a * Complex64::from_polar(1.0, 2.0 * PI * (ky * r as f64 / height as f64 + kx * c as f64 / width as f64)))
            .sum()
    });
    let rms = (field.norm_sqr() / field.len() as f64).sqrt();
    field.scale(Complex64::new(1.0 / rms, 0.0))
}

/// Returns `(true_maps, initial_maps)`; both satisfy the normalization
/// invariant.
pub fn make_coils(spec: &CoilModelSpec, height: usize, width: usize) -> Result<(SensitivityMaps, SensitivityMaps)> {
    if spec.n_coils == 0 {
        return Err(Error::InvalidArgument("n_coils must be >= 1".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("coil maps need a nonempty grid".into()));
    }
    if !(spec.perturbation >= 0.0) || !spec.perturbation.is_finite() {
        return Err(Error::InvalidArgument(format!("perturbation must be >= 0, got {}", spec.perturbation)));
    }
    let nc = spec.n_coils;
    let raw: Vec<ComplexImage> = match spec.model {
        CoilModel::GaussianBumps { ring_radius, width: bump, phase_scale } => {
            if !(bump > 0.0) {
                return Err(Error::InvalidArgument(format!("bump width must be > 0, got {bump}")));
            }
            let mut rng = StreamKey::new(spec.seed, Purpose::Coils).rng();
            let rot = uniform(&mut rng, 0.0, 2.0 * PI);
            (0..nc)
                .map(|i| {
                    let th = rot + 2.0 * PI * i as f64 / nc as f64;
                    let (cx, cy) = (ring_radius * th.cos(), ring_radius * th.sin());
                    let a = phase_scale * uniform(&mut rng, -1.0, 1.0);
                    let b = phase_scale * uniform(&mut rng, -1.0, 1.0);
                    let c0 = uniform(&mut rng, -PI, PI);
                    ComplexImage::from_fn(height, width, |r, c| {
                        let u = coord(c as f64, width);
                        let v = coord(r as f64, height);
                        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                        Complex64::from_polar((-d2 / (2.0 * bump * bump)).exp(), a * u + b * v + c0)
                    })
                })
                .collect()
        }
        CoilModel::ShiftedPhase => (0..nc)
            .map(|i| {
                ComplexImage::from_fn(height, width, |_, c| {
                    Complex64::from_polar(1.0, 2.0 * PI * (i * c) as f64 / width as f64)
                })
            })
            .collect(),
    };
    let truth = SensitivityMaps::new(raw)?.normalize();
    if spec.perturbation == 0.0 {
        return Ok((truth.clone(), truth));
    }
    let perturbed = truth
        .maps()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let key = StreamKey::new(spec.seed, Purpose::Perturbation).sample(i as u64);
            let f = smooth_random_field(height, width, 3, key);
            m.zip_map(&f, |s, e| s * (Complex64::new(1.0, 0.0) + e * spec.perturbation))
        })
        .collect();
    let initial = SensitivityMaps::new(perturbed)?.normalize();
    Ok((truth, initial))
}

/// Paired `(x0, z)` training examples from phantoms: `z` is the zero-filled
/// reconstruction of the phantom under `degrade`.
pub fn phantom_pairs<F>(spec: &PhantomSpec, count: usize, degrade: F) -> Result<Vec<(ComplexImage, ComplexImage)>>
where
    F: Fn(&ComplexImage, u64) -> Result<ComplexImage> + Sync,
{
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let seed = spec.seed.wrapping_add(k);
            let x = make_phantom(&PhantomSpec { seed, ..spec.clone() })?;
            let z = degrade(&x, seed)?;
            Ok((x, z))
        })
        .collect()
}
