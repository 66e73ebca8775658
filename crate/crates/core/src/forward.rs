//! The parallel-MRI measurement operator `A = P F S`, its adjoint, Cartesian
//! mask generation and measurement noise.

use num_complex::Complex64;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::fft::{fft2c, ifft2c};
use crate::rng::{complex_normal, Purpose, StreamKey};
use crate::types::{inner_product, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};

/// `A = P F S` for one set of coil maps and one mask.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    maps: SensitivityMaps,
    mask: SamplingMask,
}

impl ForwardOperator {
    pub fn new(maps: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        if maps.shape() != mask.shape() {
            return Err(dim_err(format!("maps {:?} vs mask {:?}", maps.shape(), mask.shape())));
        }
        Ok(Self { maps, mask })
    }

    pub fn maps(&self) -> &SensitivityMaps {
        &self.maps
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn apply(&self, x: &ComplexImage) -> Result<MultiCoilKSpace> {
        apply_forward(self, x)
    }

    pub fn adjoint(&self, y: &MultiCoilKSpace) -> Result<ComplexImage> {
        apply_adjoint(self, y)
    }

    /// `A^H (A x − y)`, the gradient of `½‖y − A x‖²`.
    pub fn data_gradient(&self, x: &ComplexImage, y: &MultiCoilKSpace) -> Result<ComplexImage> {
        let residual = self.apply(x)?.sub(y)?;
        self.adjoint(&residual)
    }

    /// `‖y − A x‖₂`.
    pub fn residual_norm(&self, x: &ComplexImage, y: &MultiCoilKSpace) -> Result<f64> {
        Ok(y.sub(&self.apply(x)?)?.norm())
    }

    /// Largest eigenvalue of `A^H A` by power iteration.
    pub fn normal_operator_norm(&self, iterations: usize, seed: u64) -> Result<f64> {
        let (h, w) = self.shape();
        let mut rng = StreamKey::new(seed, Purpose::Test).rng();
        let mut v = ComplexImage::from_fn(h, w, |_, _| complex_normal(&mut rng));
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let n = v.norm();
            if n == 0.0 {
                return Ok(0.0);
            }
            v = v.scale(Complex64::new(1.0 / n, 0.0));
            let av = self.adjoint(&self.apply(&v)?)?;
            lambda = inner_product(&v, &av)?.re;
            v = av;
        }
        Ok(lambda)
    }
}

/// `plane_i = P F (S_i ⊙ x)` for every coil.
pub fn apply_forward(op: &ForwardOperator, x: &ComplexImage) -> Result<MultiCoilKSpace> {
    if x.shape() != op.shape() {
        return Err(dim_err(format!("image {:?} vs operator {:?}", x.shape(), op.shape())));
    }
    let planes: Vec<ComplexImage> = op
        .maps
        .maps()
        .par_iter()
        .map(|s| {
            let mut k = fft2c(&s.zip_map(x, |a, b| a * b));
            op.mask.apply_in_place(&mut k);
            k
        })
        .collect();
    Ok(MultiCoilKSpace::from_parts(planes, op.mask.clone()))
}

/// `Σ_i conj(S_i) ⊙ F^H (P y_i)`. The coil sum runs in coil order so the
/// result does not depend on thread scheduling.
pub fn apply_adjoint(op: &ForwardOperator, y: &MultiCoilKSpace) -> Result<ComplexImage> {
    if y.n_coils() != op.maps.n_coils() {
        return Err(dim_err(format!("{} k-space coils vs {} maps", y.n_coils(), op.maps.n_coils())));
    }
    if y.shape() != op.shape() {
        return Err(dim_err(format!("k-space {:?} vs operator {:?}", y.shape(), op.shape())));
    }
    let per_coil: Vec<ComplexImage> = op
        .maps
        .maps()
        .par_iter()
        .zip(y.planes().par_iter())
        .map(|(s, plane)| {
            let mut k = plane.clone();
            op.mask.apply_in_place(&mut k);
            s.zip_map(&ifft2c(&k), |a, b| a.conj() * b)
        })
        .collect();
    let (h, w) = op.shape();
    let mut acc = vec![Complex64::new(0.0, 0.0); h * w];
    for img in &per_coil {
        for (a, b) in acc.iter_mut().zip(img.data()) {
            *a += b;
        }
    }
    Ok(ComplexImage::from_parts(h, w, acc))
}

/// How the non-ACS columns are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskStyle {
    /// Uniformly random columns, seeded.
    #[default]
    Random,
    /// Every `acceleration`-th column on a grid through the centre column.
    Equispaced,
}

impl std::str::FromStr for MaskStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "equispaced" => Ok(Self::Equispaced),
            other => Err(Error::InvalidArgument(format!("unknown mask style {other:?}"))),
        }
    }
}

impl std::fmt::Display for MaskStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Equispaced => "equispaced",
        })
    }
}

/// Random Cartesian mask keeping `round(width / acceleration)` columns, the
/// centred ACS block included.
pub fn make_cartesian_mask(
    height: usize,
    width: usize,
    acceleration: usize,
    acs_width: usize,
    seed: u64,
) -> Result<SamplingMask> {
    make_mask(height, width, acceleration, acs_width, MaskStyle::Random, seed)
}

pub fn make_mask(
    height: usize,
    width: usize,
    acceleration: usize,
    acs_width: usize,
    style: MaskStyle,
    seed: u64,
) -> Result<SamplingMask> {
    if acceleration == 0 || acceleration > width {
        return Err(Error::InvalidArgument(format!(
            "acceleration {acceleration} must lie in [1, {width}]"
        )));
    }
    if acs_width == 0 || acs_width > width {
        return Err(Error::InvalidArgument(format!("ACS width {acs_width} must lie in [1, {width}]")));
    }
    if acceleration == 1 {
        return Ok(SamplingMask::full(height, width));
    }
    let acs_start = width / 2 - acs_width / 2;
    let mut kept: Vec<usize> = (acs_start..acs_start + acs_width).collect();
    match style {
        MaskStyle::Random => {
            let target = ((width as f64) / acceleration as f64).round() as usize;
            let candidates: Vec<usize> = (0..width).filter(|c| !(acs_start..acs_start + acs_width).contains(c)).collect();
            let extra = target.saturating_sub(acs_width).min(candidates.len());
            let mut rng = StreamKey::new(seed, Purpose::Mask).rng();
            let mut picks: Vec<usize> = sample(&mut rng, candidates.len(), extra).into_iter().map(|i| candidates[i]).collect();
            picks.sort_unstable();
            kept.extend(picks);
        }
        MaskStyle::Equispaced => {
            let centre = width / 2;
            kept.extend((0..width).filter(|&c| (c + width * acceleration - centre) % acceleration == 0));
        }
    }
    kept.sort_unstable();
    kept.dedup();
    SamplingMask::new(height, width, &kept, acs_width)
}

/// Adds circular complex Gaussian noise on the kept columns, rescaled so that
/// `‖e‖₂ = level·‖y‖₂`.
pub fn add_measurement_noise(y: &MultiCoilKSpace, level: f64, seed: u64) -> Result<MultiCoilKSpace> {
    if level.is_nan() || level < 0.0 || !level.is_finite() {
        return Err(Error::InvalidArgument(format!("noise level {level} must be finite and >= 0")));
    }
    let y_norm = y.norm();
    if level == 0.0 || y_norm == 0.0 {
        return Ok(y.clone());
    }
    let mask = y.mask();
    let (_, w) = y.shape();
    let mut rng = StreamKey::new(seed, Purpose::MeasurementNoise).rng();
    let noise: Vec<Vec<Complex64>> = y
        .planes()
        .iter()
        .map(|p| {
            (0..p.len())
                .map(|i| if mask.is_kept(i % w) { complex_normal(&mut rng) } else { Complex64::new(0.0, 0.0) })
                .collect()
        })
        .collect();
    let e_norm = noise.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let gain = level * y_norm / e_norm;
    let planes = y
        .planes()
        .iter()
        .zip(noise)
        .map(|(p, e)| {
            let data = p.data().iter().zip(e).map(|(a, b)| a + b * gain).collect();
            ComplexImage::from_parts(p.height(), p.width(), data)
        })
        .collect();
    Ok(MultiCoilKSpace::from_parts(planes, mask.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::complex_normal_vec;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        ComplexImage::from_vec(h, w, complex_normal_vec(StreamKey::new(seed, Purpose::Test), h * w)).unwrap()
    }

    fn random_maps(n: usize, h: usize, w: usize, seed: u64) -> SensitivityMaps {
        SensitivityMaps::new((0..n).map(|i| random_image(h, w, seed * 100 + i as u64)).collect())
            .unwrap()
            .normalize()
    }

    fn unit_maps(h: usize, w: usize) -> SensitivityMaps {
        SensitivityMaps::new(vec![ComplexImage::from_fn(h, w, |_, _| Complex64::new(1.0, 0.0))]).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let op = ForwardOperator::new(random_maps(3, 8, 8, 1), SamplingMask::full(8, 8)).unwrap();
        let y = op.apply(&ComplexImage::zeros(8, 8)).unwrap();
        assert_eq!(y.norm(), 0.0);
        assert_eq!(op.adjoint(&y).unwrap().norm(), 0.0);
    }

    #[test]
    fn constant_image_lands_on_dc() {
        let n = 16;
        let op = ForwardOperator::new(unit_maps(n, n), SamplingMask::full(n, n)).unwrap();
        let c = Complex64::new(0.5, 0.25);
        let y = op.apply(&ComplexImage::from_fn(n, n, |_, _| c)).unwrap();
        let p = y.plane(0);
        assert!((p.get(n / 2, n / 2) - c * n as f64).norm() < 1e-12);
        assert!(p.norm_sqr() - p.get(n / 2, n / 2).norm_sqr() < 1e-20);
    }

    #[test]
    fn matches_explicit_matrix() {
        let (h, w, nc) = (16, 16, 4);
        let maps = random_maps(nc, h, w, 3);
        let mask = make_cartesian_mask(h, w, 2, 4, 9).unwrap();
        let op = ForwardOperator::new(maps, mask).unwrap();
        // Column j of the dense matrix is A applied to the j-th unit impulse.
        let columns: Vec<MultiCoilKSpace> = (0..h * w)
            .map(|j| {
                let mut e = ComplexImage::zeros(h, w);
                e.data_mut()[j] = Complex64::new(1.0, 0.0);
                op.apply(&e).unwrap()
            })
            .collect();
        let x = random_image(h, w, 11);
        let fast = op.apply(&x).unwrap();
        for coil in 0..nc {
            for row in 0..h * w {
                let dense: Complex64 = (0..h * w).map(|j| columns[j].plane(coil).data()[row] * x.data()[j]).sum();
                assert!((dense - fast.plane(coil).data()[row]).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn single_unit_coil_full_mask_is_unitary() {
        let op = ForwardOperator::new(unit_maps(10, 12), SamplingMask::full(10, 12)).unwrap();
        let x = random_image(10, 12, 2);
        let back = op.adjoint(&op.apply(&x).unwrap()).unwrap();
        assert!(back.sub(&x).unwrap().norm() < 1e-12 * x.norm());
    }

    #[test]
    fn adjoint_identity_random() {
        for seed in 0..20 {
            let maps = random_maps(3, 12, 10, seed);
            let mask = make_cartesian_mask(12, 10, 3, 2, seed).unwrap();
            let op = ForwardOperator::new(maps, mask.clone()).unwrap();
            let x = random_image(12, 10, seed + 100);
            let y = MultiCoilKSpace::from_full((0..3).map(|i| random_image(12, 10, seed * 7 + i)).collect(), mask).unwrap();
            let lhs = op.apply(&x).unwrap().inner_product(&y).unwrap();
            let rhs = inner_product(&x, &op.adjoint(&y).unwrap()).unwrap();
            assert!((lhs - rhs).norm() / (x.norm() * y.norm()) < 1e-10);
        }
    }

    #[test]
    fn adjoint_coil_mismatch() {
        let op = ForwardOperator::new(random_maps(2, 4, 4, 1), SamplingMask::full(4, 4)).unwrap();
        let y = MultiCoilKSpace::from_full(vec![ComplexImage::zeros(4, 4)], SamplingMask::full(4, 4)).unwrap();
        assert!(matches!(op.adjoint(&y), Err(Error::Dimension(_))));
        assert!(matches!(op.apply(&ComplexImage::zeros(4, 5)), Err(Error::Dimension(_))));
    }

    #[test]
    fn linearity() {
        let op = ForwardOperator::new(random_maps(3, 8, 8, 4), make_cartesian_mask(8, 8, 2, 2, 1).unwrap()).unwrap();
        let x = random_image(8, 8, 1);
        let z = random_image(8, 8, 2);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let combo = crate::types::cimage_axpy(a, &x, &z.scale(b)).unwrap();
        let lhs = op.apply(&combo).unwrap();
        let ax = op.apply(&x).unwrap().scale(a);
        let bz = op.apply(&z).unwrap().scale(b);
        for c in 0..3 {
            let expect = ax.plane(c).add(bz.plane(c)).unwrap();
            assert!(lhs.plane(c).sub(&expect).unwrap().norm() < 1e-12 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn normalized_maps_give_contraction() {
        let op = ForwardOperator::new(random_maps(4, 16, 16, 8), make_cartesian_mask(16, 16, 4, 4, 2).unwrap()).unwrap();
        let lam = op.normal_operator_norm(60, 1).unwrap();
        assert!(lam <= 1.0 + 1e-6, "{lam}");
    }

    #[test]
    fn mask_counts() {
        let full = make_cartesian_mask(8, 32, 1, 4, 0).unwrap();
        assert_eq!(full.kept_count(), 32);

        let m = make_cartesian_mask(320, 320, 4, 24, 5).unwrap();
        assert_eq!(m.kept_count(), 80);
        assert!(m.acs_range().all(|c| m.is_kept(c)));
        assert_eq!(m.acs_range(), 148..172);

        assert_eq!(m, make_cartesian_mask(320, 320, 4, 24, 5).unwrap());
        assert_ne!(m, make_cartesian_mask(320, 320, 4, 24, 6).unwrap());
        assert!(make_cartesian_mask(8, 8, 9, 2, 0).is_err());
    }

    #[test]
    fn equispaced_mask_grid() {
        let m = make_mask(4, 32, 4, 4, MaskStyle::Equispaced, 0).unwrap();
        for c in 0..32 {
            let on_grid = (c as i64 - 16).rem_euclid(4) == 0;
            let in_acs = (14..18).contains(&c);
            assert_eq!(m.is_kept(c), on_grid || in_acs, "column {c}");
        }
    }

    #[test]
    fn noise_level_and_support() {
        let mask = make_cartesian_mask(16, 16, 4, 4, 3).unwrap();
        let op = ForwardOperator::new(random_maps(3, 16, 16, 2), mask.clone()).unwrap();
        let y = op.apply(&random_image(16, 16, 9)).unwrap();
        assert_eq!(add_measurement_noise(&y, 0.0, 1).unwrap(), y);
        let noisy = add_measurement_noise(&y, 0.1, 1).unwrap();
        let ratio = noisy.sub(&y).unwrap().norm() / y.norm();
        assert!((ratio - 0.1).abs() < 1e-12, "{ratio}");
        for p in noisy.planes() {
            for (i, z) in p.data().iter().enumerate() {
                if !mask.is_kept(i % 16) {
                    assert_eq!(*z, Complex64::new(0.0, 0.0));
                }
            }
        }
        assert_eq!(noisy, add_measurement_noise(&y, 0.1, 1).unwrap());
        assert!(add_measurement_noise(&y, -0.1, 1).is_err());
    }
}
