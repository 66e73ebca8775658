//! Posterior-mean estimators `R(x_t, t) ≈ E[x0 | x_t]`.
//!
//! [`GaussianPairModel`] gives the exact conditional mean when `(x0, z)` are
//! jointly Gaussian and independent across coefficients of a fixed basis.
//! [`RidgeDenoiser`] is a learned per-time-bin affine patch map fit in closed
//! form under the same squared-error objective.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bridge::{bridge_mixture, BridgeSchedule};
use crate::error::{dim_err, Error, Result};
use crate::fft::{fft2c, ifft2c};
use crate::rng::{complex_normal, Purpose, StreamKey};
use crate::types::ComplexImage;

/// Anything that maps a bridge state at `(α, σ)` to an estimate of `x0`.
pub trait Denoiser: Sync {
    fn denoise(&self, x_t: &ComplexImage, alpha: f64, sigma: f64) -> Result<ComplexImage>;
}

impl<F> Denoiser for F
where
    F: Fn(&ComplexImage, f64, f64) -> Result<ComplexImage> + Sync,
{
    fn denoise(&self, x_t: &ComplexImage, alpha: f64, sigma: f64) -> Result<ComplexImage> {
        self(x_t, alpha, sigma)
    }
}

/// Coefficient basis in which a [`GaussianPairModel`] is independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Centred unitary Fourier coefficients (stationary images).
    Fourier,
    /// Pixels.
    Pixel,
}

impl Basis {
    fn analyze(self, img: &ComplexImage) -> ComplexImage {
        match self {
            Basis::Fourier => fft2c(img),
            Basis::Pixel => img.clone(),
        }
    }

    fn synthesize(self, coef: ComplexImage) -> ComplexImage {
        match self {
            Basis::Fourier => ifft2c(&coef),
            Basis::Pixel => coef,
        }
    }
}

/// Per-coefficient joint circular Gaussian over `(x0, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPairModel {
    basis: Basis,
    height: usize,
    width: usize,
    mean0: Vec<Complex64>,
    mean_z: Vec<Complex64>,
    var0: Vec<f64>,
    var_z: Vec<f64>,
    /// `E[(x0 − m0) conj(z − mz)]`.
    cov0z: Vec<Complex64>,
}

impl GaussianPairModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: Basis,
        height: usize,
        width: usize,
        mean0: Vec<Complex64>,
        mean_z: Vec<Complex64>,
        var0: Vec<f64>,
        var_z: Vec<f64>,
        cov0z: Vec<Complex64>,
    ) -> Result<Self> {
        let n = height * width;
        if n == 0 {
            return Err(Error::InvalidArgument("empty model".into()));
        }
        if [mean0.len(), mean_z.len(), var0.len(), var_z.len(), cov0z.len()].iter().any(|&l| l != n) {
            return Err(dim_err(format!("model arrays must have {n} entries")));
        }
        for p in 0..n {
            let (v0, vz, c) = (var0[p], var_z[p], cov0z[p]);
            if !(v0 >= 0.0 && vz >= 0.0) || !v0.is_finite() || !vz.is_finite() {
                return Err(Error::InvalidArgument(format!("variance at {p} must be finite and >= 0")));
            }
            if c.norm_sqr() > v0 * vz * (1.0 + 1e-9) + 1e-300 {
                return Err(Error::InvalidArgument(format!("covariance block at {p} is not positive semidefinite")));
            }
        }
        Ok(Self { basis, height, width, mean0, mean_z, var0, var_z, cov0z })
    }

    /// Moment fit from paired samples, in the chosen basis. A tiny variance
    /// floor keeps every coefficient non-degenerate.
    pub fn fit(pairs: &[(ComplexImage, ComplexImage)], basis: Basis) -> Result<Self> {
        let (x, _) = pairs.first().ok_or_else(|| Error::InvalidArgument("no training pairs".into()))?;
        let (h, w) = x.shape();
        let n = h * w;
        let coefs: Vec<(ComplexImage, ComplexImage)> = pairs
            .iter()
            .map(|(a, b)| {
                if a.shape() != (h, w) || b.shape() != (h, w) {
                    return Err(dim_err("training pairs must share one shape"));
                }
                Ok((basis.analyze(a), basis.analyze(b)))
            })
            .collect::<Result<_>>()?;
        let m = coefs.len() as f64;
        let zero = Complex64::new(0.0, 0.0);
        let mut mean0 = vec![zero; n];
        let mut mean_z = vec![zero; n];
        for (a, b) in &coefs {
            for p in 0..n {
                mean0[p] += a.data()[p] / m;
                mean_z[p] += b.data()[p] / m;
            }
        }
        let mut var0 = vec![0.0; n];
        let mut var_z = vec![0.0; n];
        let mut cov0z = vec![zero; n];
        for (a, b) in &coefs {
            for p in 0..n {
                let d0 = a.data()[p] - mean0[p];
                let dz = b.data()[p] - mean_z[p];
                var0[p] += d0.norm_sqr() / m;
                var_z[p] += dz.norm_sqr() / m;
                cov0z[p] += d0 * dz.conj() / m;
            }
        }
        let floor = 1e-10 * (var0.iter().sum::<f64>() + var_z.iter().sum::<f64>()) / n as f64 + 1e-300;
        for p in 0..n {
            var0[p] += floor;
            var_z[p] += floor;
            let bound = var0[p] * var_z[p];
            let c2 = cov0z[p].norm_sqr();
            if c2 > bound {
                cov0z[p] *= (bound / c2).sqrt();
            }
        }
        Self::new(basis, h, w, mean0, mean_z, var0, var_z, cov0z)
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn mean0(&self) -> &[Complex64] {
        &self.mean0
    }

    pub fn mean_z(&self) -> &[Complex64] {
        &self.mean_z
    }

    pub fn var0(&self) -> &[f64] {
        &self.var0
    }

    pub fn var_z(&self) -> &[f64] {
        &self.var_z
    }

    pub fn cov0z(&self) -> &[Complex64] {
        &self.cov0z
    }

    /// Draws one `(x0, z)` pair from the model.
    pub fn sample_pair(&self, seed: u64) -> (ComplexImage, ComplexImage) {
        let mut rng = StreamKey::new(seed, Purpose::Dataset).rng();
        let n = self.height * self.width;
        let mut c0 = Vec::with_capacity(n);
        let mut cz = Vec::with_capacity(n);
        for p in 0..n {
            let a = complex_normal(&mut rng);
            let b = complex_normal(&mut rng);
            let (v0, vz, c) = (self.var0[p], self.var_z[p], self.cov0z[p]);
            let d0 = a * v0.sqrt();
            let dz = if v0 > 0.0 {
                d0 * (c.conj() / v0) + b * (vz - c.norm_sqr() / v0).max(0.0).sqrt()
            } else {
                b * vz.sqrt()
            };
            c0.push(self.mean0[p] + d0);
            cz.push(self.mean_z[p] + dz);
        }
        let x0 = self.basis.synthesize(ComplexImage::from_parts(self.height, self.width, c0));
        let z = self.basis.synthesize(ComplexImage::from_parts(self.height, self.width, cz));
        (x0, z)
    }

    /// Per-coefficient `Cov(x0, x_t)` and `Var(x_t)`.
    fn moments(&self, p: usize, alpha: f64, sigma: f64) -> (Complex64, f64) {
        let (v0, vz, c) = (self.var0[p], self.var_z[p], self.cov0z[p]);
        let a = 1.0 - alpha;
        let cov = c * alpha + a * v0;
        let var = a * a * v0 + alpha * alpha * vz + 2.0 * alpha * a * c.re + sigma * sigma;
        (cov, var.max(0.0))
    }

    /// Gain `Cov(x0, x_t) / Var(x_t)` for every coefficient.
    pub fn gain(&self, alpha: f64, sigma: f64) -> Vec<Complex64> {
        (0..self.mean0.len())
            .map(|p| {
                let (cov, var) = self.moments(p, alpha, sigma);
                if var > 0.0 {
                    cov / var
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    }

    /// Expected squared error of the conditional mean, summed over
    /// coefficients.
    pub fn expected_sq_error(&self, alpha: f64, sigma: f64) -> f64 {
        (0..self.mean0.len())
            .map(|p| {
                let (cov, var) = self.moments(p, alpha, sigma);
                if var > 0.0 {
                    (self.var0[p] - cov.norm_sqr() / var).max(0.0)
                } else {
                    self.var0[p]
                }
            })
            .sum()
    }

    /// `E[x0 | x_t]` for `x_t = (1 − α) x0 + α z + σ ε`.
    pub fn posterior_mean(&self, x_t: &ComplexImage, alpha: f64, sigma: f64) -> Result<ComplexImage> {
        if x_t.shape() != (self.height, self.width) {
            return Err(dim_err(format!("image {:?} vs model {:?}", x_t.shape(), self.shape())));
        }
        let coef = self.basis.analyze(x_t);
        let mut out = Vec::with_capacity(coef.len());
        for (p, &v) in coef.data().iter().enumerate() {
            let (cov, var) = self.moments(p, alpha, sigma);
            let m_t = self.mean0[p] * (1.0 - alpha) + self.mean_z[p] * alpha;
            let dev = v - m_t;
            if var > 0.0 {
                out.push(self.mean0[p] + cov / var * dev);
            } else if dev.norm() <= 1e-12 * (1.0 + m_t.norm()) {
                out.push(self.mean0[p]);
            } else {
                return Err(Error::DegenerateModel(format!(
                    "zero variance at coefficient {p} but the input deviates by {}",
                    dev.norm()
                )));
            }
        }
        Ok(self.basis.synthesize(ComplexImage::from_parts(self.height, self.width, out)))
    }
}

impl Denoiser for GaussianPairModel {
    fn denoise(&self, x_t: &ComplexImage, alpha: f64, sigma: f64) -> Result<ComplexImage> {
        self.posterior_mean(x_t, alpha, sigma)
    }
}

/// Exact conditional mean at schedule index `t_index`.
pub fn gaussian_mmse(
    model: &GaussianPairModel,
    x_t: &ComplexImage,
    t_index: usize,
    schedule: &BridgeSchedule,
) -> Result<ComplexImage> {
    schedule.check_index(t_index)?;
    model.posterior_mean(x_t, schedule.alpha(t_index), schedule.sigma(t_index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeConfig {
    pub bins: usize,
    pub patch_radius: usize,
    pub ridge_weight: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self { bins: 16, patch_radius: 2, ridge_weight: 1e-3 }
    }
}

/// One time bin: a complex-linear map of the circular patch around each pixel
/// plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeBin {
    pub alpha: f64,
    pub weights: Vec<Complex64>,
    pub bias: Complex64,
    pub train_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeDenoiser {
    patch_radius: usize,
    ridge_weight: f64,
    bins: Vec<RidgeBin>,
}

/// Bin centres: `α_k = k / (bins − 1)`, both endpoints included.
pub fn alpha_grid(bins: usize) -> Vec<f64> {
    (0..bins).map(|k| k as f64 / (bins - 1) as f64).collect()
}

fn patch_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r).flat_map(|dr| (-r..=r).map(move |dc| (dr, dc))).collect()
}

/// Patch values around `(row, col)` with circular wrap.
fn patch_at(img: &ComplexImage, row: usize, col: usize, offsets: &[(isize, isize)], out: &mut Vec<Complex64>) {
    let (h, w) = img.shape();
    out.clear();
    for &(dr, dc) in offsets {
        let r = (row as isize + dr).rem_euclid(h as isize) as usize;
        let c = (col as isize + dc).rem_euclid(w as isize) as usize;
        out.push(img.get(r, c));
    }
}

/// Solves `(G + λ D) w = b`, `D` diagonal with ones where `penalized`.
pub fn ridge_solve(
    gram: &DMatrix<Complex64>,
    rhs: &DVector<Complex64>,
    ridge: f64,
    penalized: &[bool],
) -> Result<DVector<Complex64>> {
    let n = gram.nrows();
    if gram.ncols() != n || rhs.len() != n || penalized.len() != n {
        return Err(dim_err("ridge system dimensions disagree"));
    }
    let mut a = gram.clone();
    for (i, &p) in penalized.iter().enumerate() {
        if p {
            a[(i, i)] += Complex64::new(ridge, 0.0);
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal equations are not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

impl RidgeDenoiser {
    pub fn from_bins(patch_radius: usize, ridge_weight: f64, bins: Vec<RidgeBin>) -> Result<Self> {
        let n_feat = (2 * patch_radius + 1).pow(2);
        if bins.is_empty() {
            return Err(Error::Configuration("denoiser has no time bins".into()));
        }
        if bins.iter().any(|b| b.weights.len() != n_feat) {
            return Err(dim_err(format!("every bin needs {n_feat} weights")));
        }
        Ok(Self { patch_radius, ridge_weight, bins })
    }

    pub fn patch_radius(&self) -> usize {
        self.patch_radius
    }

    pub fn ridge_weight(&self) -> f64 {
        self.ridge_weight
    }

    pub fn bins(&self) -> &[RidgeBin] {
        &self.bins
    }

    /// Bin whose centre is closest to `alpha`.
    pub fn bin_for_alpha(&self, alpha: f64) -> usize {
        let mut best = 0;
        for (k, b) in self.bins.iter().enumerate() {
            if (b.alpha - alpha).abs() < (self.bins[best].alpha - alpha).abs() {
                best = k;
            }
        }
        best
    }

    pub fn apply_bin(&self, bin: usize, x_t: &ComplexImage) -> Result<ComplexImage> {
        let model = self
            .bins
            .get(bin)
            .ok_or_else(|| Error::Configuration(format!("bin {bin} is not trained ({} bins)", self.bins.len())))?;
        let offsets = patch_offsets(self.patch_radius);
        let (h, w) = x_t.shape();
        let mut patch = Vec::with_capacity(offsets.len());
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                patch_at(x_t, r, c, &offsets, &mut patch);
                let v: Complex64 = patch.iter().zip(&model.weights).map(|(a, b)| a * b).sum();
                out.push(v + model.bias);
            }
        }
        Ok(ComplexImage::from_parts(h, w, out))
    }
}

impl Denoiser for RidgeDenoiser {
    fn denoise(&self, x_t: &ComplexImage, alpha: f64, _sigma: f64) -> Result<ComplexImage> {
        self.apply_bin(self.bin_for_alpha(alpha), x_t)
    }
}

/// Fits one affine patch map per time bin. Each bin draws `x_t` from the
/// forward bridge at its centre `α` for every training pair, then solves the
/// ridge normal equations over all patches.
pub fn ridge_train(
    pairs: &[(ComplexImage, ComplexImage)],
    schedule: &BridgeSchedule,
    config: &RidgeConfig,
    seed: u64,
) -> Result<RidgeDenoiser> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if config.bins < 2 {
        return Err(Error::Configuration("at least two time bins are required".into()));
    }
    if !(config.ridge_weight > 0.0) {
        return Err(Error::Configuration("ridge_weight must be > 0".into()));
    }
    let shape = pairs[0].0.shape();
    if pairs.iter().any(|(a, b)| a.shape() != shape || b.shape() != shape) {
        return Err(dim_err("training pairs must share one shape"));
    }
    let offsets = patch_offsets(config.patch_radius);
    let n_feat = offsets.len();
    let dim = n_feat + 1;
    let mut penalized = vec![true; dim];
    penalized[n_feat] = false;

    let mut bins = Vec::with_capacity(config.bins);
    for (k, alpha) in alpha_grid(config.bins).into_iter().enumerate() {
        let sigma = schedule.sigma_at_alpha(alpha);
        let mut gram = DMatrix::<Complex64>::zeros(dim, dim);
        let mut rhs = DVector::<Complex64>::zeros(dim);
        let mut target_energy = 0.0;
        let mut count = 0usize;
        let mut phi = Vec::with_capacity(dim);
        for (i, (x0, z)) in pairs.iter().enumerate() {
            let key = StreamKey::new(seed, Purpose::Training).sample(i as u64).step(k as u64);
            let x_t = bridge_mixture(x0, z, alpha, sigma, key);
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    patch_at(&x_t, r, c, &offsets, &mut phi);
                    phi.push(Complex64::new(1.0, 0.0));
                    let t = x0.get(r, c);
                    for a in 0..dim {
                        let ca = phi[a].conj();
                        rhs[a] += ca * t;
                        for b in a..dim {
                            gram[(a, b)] += ca * phi[b];
                        }
                    }
                    target_energy += t.norm_sqr();
                    count += 1;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)].conj();
            }
        }
        let wv = ridge_solve(&gram, &rhs, config.ridge_weight, &penalized)?;
        let quad = (wv.adjoint() * &gram * &wv)[(0, 0)].re;
        let cross = (wv.adjoint() * &rhs)[(0, 0)].re;
        let train_mse = ((target_energy - 2.0 * cross + quad) / count as f64).max(0.0);
        bins.push(RidgeBin {
            alpha,
            weights: wv.iter().take(n_feat).copied().collect(),
            bias: wv[n_feat],
            train_mse,
        });
    }
    RidgeDenoiser::from_bins(config.patch_radius, config.ridge_weight, bins)
}

/// Applies the bin that covers schedule index `t_index`.
pub fn ridge_apply(
    denoiser: &RidgeDenoiser,
    x_t: &ComplexImage,
    t_index: usize,
    schedule: &BridgeSchedule,
) -> Result<ComplexImage> {
    schedule.check_index(t_index)?;
    denoiser.denoise(x_t, schedule.alpha(t_index), schedule.sigma(t_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::complex_normal_vec;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        ComplexImage::from_vec(h, w, complex_normal_vec(StreamKey::new(seed, Purpose::Test), h * w)).unwrap()
    }

    fn toy_model(h: usize, w: usize, basis: Basis) -> GaussianPairModel {
        let n = h * w;
        let var0: Vec<f64> = (0..n).map(|p| 0.5 + (p % 5) as f64 * 0.1).collect();
        let var_z: Vec<f64> = (0..n).map(|p| 0.8 + (p % 3) as f64 * 0.2).collect();
        let cov: Vec<Complex64> = (0..n)
            .map(|p| Complex64::from_polar(0.5 * (var0[p] * var_z[p]).sqrt(), p as f64 * 0.3))
            .collect();
        let mean0 = (0..n).map(|p| Complex64::new(0.1 * (p % 2) as f64, 0.0)).collect();
        let mean_z = (0..n).map(|p| Complex64::new(0.0, -0.2 * (p % 3) as f64)).collect();
        GaussianPairModel::new(basis, h, w, mean0, mean_z, var0, var_z, cov).unwrap()
    }

    #[test]
    fn clean_endpoint_returns_input() {
        let m = toy_model(4, 4, Basis::Fourier);
        let x = random_image(4, 4, 1);
        let out = m.posterior_mean(&x, 0.0, 0.0).unwrap();
        assert!(out.sub(&x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn scalar_shrinkage_formula() {
        let n = 1;
        let v0 = 2.0;
        let m = GaussianPairModel::new(
            Basis::Pixel,
            1,
            n,
            vec![Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0)],
            vec![v0],
            vec![0.0],
            vec![Complex64::new(0.0, 0.0)],
        )
        .unwrap();
        let (alpha, sigma) = (0.3, 0.4);
        let expect = (1.0 - alpha) * v0 / ((1.0 - alpha).powi(2) * v0 + sigma * sigma);
        let x = ComplexImage::from_vec(1, 1, vec![Complex64::new(1.5, -0.5)]).unwrap();
        let out = m.posterior_mean(&x, alpha, sigma).unwrap();
        assert!((out.data()[0] - x.data()[0] * expect).norm() < 1e-14);
    }

    #[test]
    fn degenerate_model_is_reported() {
        let zero = vec![Complex64::new(0.0, 0.0)];
        let m = GaussianPairModel::new(Basis::Pixel, 1, 1, zero.clone(), zero.clone(), vec![0.0], vec![0.0], zero)
            .unwrap();
        let x = ComplexImage::from_vec(1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
        assert!(matches!(m.posterior_mean(&x, 0.5, 0.0), Err(Error::DegenerateModel(_))));
        let x0 = ComplexImage::zeros(1, 1);
        assert_eq!(m.posterior_mean(&x0, 0.5, 0.0).unwrap(), x0);
    }

    #[test]
    fn rejects_non_psd_block() {
        let one = vec![Complex64::new(0.0, 0.0)];
        let r = GaussianPairModel::new(Basis::Pixel, 1, 1, one.clone(), one, vec![1.0], vec![1.0], vec![Complex64::new(1.5, 0.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn posterior_mean_is_affine() {
        let m = toy_model(6, 6, Basis::Fourier);
        let a = random_image(6, 6, 1);
        let b = random_image(6, 6, 2);
        let (alpha, sigma) = (0.4, 0.2);
        let w = 0.3;
        let mix = a.zip_map(&b, |x, y| x * w + y * (1.0 - w));
        let lhs = m.posterior_mean(&mix, alpha, sigma).unwrap();
        let ra = m.posterior_mean(&a, alpha, sigma).unwrap();
        let rb = m.posterior_mean(&b, alpha, sigma).unwrap();
        let rhs = ra.zip_map(&rb, |x, y| x * w + y * (1.0 - w));
        assert!(lhs.sub(&rhs).unwrap().norm() < 1e-12);
    }

    #[test]
    fn mmse_beats_perturbed_affine_estimators() {
        let m = toy_model(4, 4, Basis::Fourier);
        let (alpha, sigma) = (0.5, 0.3);
        let n = 100_000u64;
        let gain = m.gain(alpha, sigma);
        // Competitors: the oracle's per-coefficient gain scaled or rotated.
        let factors = [Complex64::new(1.0, 0.0), Complex64::new(0.9, 0.0), Complex64::new(1.1, 0.0), Complex64::new(1.0, 0.1)];
        let mut sse = [0.0f64; 4];
        for k in 0..n {
            let (x0, z) = m.sample_pair(k);
            let xt = bridge_mixture(&x0, &z, alpha, sigma, StreamKey::new(k, Purpose::Test));
            let coef = fft2c(&xt);
            let truth = fft2c(&x0);
            for (f, acc) in factors.iter().zip(sse.iter_mut()) {
                for p in 0..16 {
                    let m_t = m.mean0()[p] * (1.0 - alpha) + m.mean_z()[p] * alpha;
                    let est = m.mean0()[p] + gain[p] * f * (coef.data()[p] - m_t);
                    *acc += (est - truth.data()[p]).norm_sqr();
                }
            }
        }
        let expected = m.expected_sq_error(alpha, sigma) * n as f64;
        assert!((sse[0] - expected).abs() / expected < 0.02, "{} vs {}", sse[0], expected);
        for s in &sse[1..] {
            assert!(sse[0] < *s);
        }
    }

    #[test]
    fn fit_recovers_model_moments() {
        let m = toy_model(2, 2, Basis::Pixel);
        let pairs: Vec<_> = (0..40_000).map(|k| m.sample_pair(k)).collect();
        let fit = GaussianPairModel::fit(&pairs, Basis::Pixel).unwrap();
        for p in 0..4 {
            assert!((fit.var0()[p] - m.var0()[p]).abs() < 0.03);
            assert!((fit.cov0z()[p] - m.cov0z()[p]).norm() < 0.03);
            assert!((fit.mean_z()[p] - m.mean_z()[p]).norm() < 0.03);
        }
    }

    #[test]
    fn ridge_solution_satisfies_normal_equations() {
        let n = 40;
        let d = 6;
        let feats: Vec<Complex64> = complex_normal_vec(StreamKey::new(3, Purpose::Test), n * d);
        let targets: Vec<Complex64> = complex_normal_vec(StreamKey::new(4, Purpose::Test), n);
        let phi = DMatrix::from_row_slice(n, d, &feats);
        let t = DVector::from_vec(targets);
        let gram = phi.adjoint() * &phi;
        let rhs = phi.adjoint() * &t;
        let mut pen = vec![true; d];
        pen[d - 1] = false;
        let ridge = 0.7;
        let w = ridge_solve(&gram, &rhs, ridge, &pen).unwrap();
        let mut a = gram.clone();
        for i in 0..d - 1 {
            a[(i, i)] += Complex64::new(ridge, 0.0);
        }
        let res = (&a * &w - &rhs).norm() / rhs.norm();
        assert!(res < 1e-8, "{res}");
    }

    fn tiny_pairs(n: usize) -> Vec<(ComplexImage, ComplexImage)> {
        (0..n).map(|k| (random_image(8, 8, 100 + k as u64), random_image(8, 8, 500 + k as u64))).collect()
    }

    #[test]
    fn identity_bin_reproduces_clean_image() {
        let pairs = tiny_pairs(6);
        let sched = BridgeSchedule::linear(100, 0.1).unwrap();
        let cfg = RidgeConfig { bins: 4, patch_radius: 1, ridge_weight: 1e-3 };
        let d = ridge_train(&pairs, &sched, &cfg, 1).unwrap();
        assert_eq!(d.bins()[0].alpha, 0.0);
        assert!(d.bins()[0].train_mse < 1e-10);
        let (x0, _) = &pairs[0];
        let out = d.apply_bin(0, x0).unwrap();
        let mse = out.sub(x0).unwrap().norm_sqr() / 64.0;
        assert!(mse < 1e-10, "{mse}");
    }

    #[test]
    fn heavy_ridge_shrinks_weights_on_noise_features() {
        // x0 independent of z, alpha = 1 bin sees only z.
        let pairs = tiny_pairs(10);
        let sched = BridgeSchedule::linear(10, 0.0).unwrap();
        let norms: Vec<f64> = [1e-3, 1e1, 1e5]
            .iter()
            .map(|&rw| {
                let cfg = RidgeConfig { bins: 2, patch_radius: 1, ridge_weight: rw };
                let d = ridge_train(&pairs, &sched, &cfg, 1).unwrap();
                d.bins()[1].weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
        assert!(norms[2] < 1e-3);
    }

    #[test]
    fn training_loss_grows_along_ridge_path() {
        let pairs = tiny_pairs(6);
        let sched = BridgeSchedule::linear(10, 0.2).unwrap();
        let loss = |rw: f64| {
            let cfg = RidgeConfig { bins: 3, patch_radius: 1, ridge_weight: rw };
            ridge_train(&pairs, &sched, &cfg, 2).unwrap().bins()[1].train_mse
        };
        let (a, b, c) = (loss(1e-3), loss(1.0), loss(1e3));
        assert!(a <= b && b <= c, "{a} {b} {c}");
    }

    #[test]
    fn ridge_apply_basics() {
        let pairs = tiny_pairs(3);
        let sched = BridgeSchedule::linear(10, 0.2).unwrap();
        let d = ridge_train(&pairs, &sched, &RidgeConfig { bins: 3, patch_radius: 1, ridge_weight: 1e-2 }, 0).unwrap();
        let x = random_image(8, 8, 77);
        let a = ridge_apply(&d, &x, 5, &sched).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, ridge_apply(&d, &x, 5, &sched).unwrap());

        let zero_bias = RidgeDenoiser::from_bins(
            1,
            1e-3,
            vec![RidgeBin { alpha: 0.0, weights: vec![Complex64::new(0.5, 0.1); 9], bias: Complex64::new(0.0, 0.0), train_mse: 0.0 }],
        )
        .unwrap();
        assert_eq!(zero_bias.apply_bin(0, &ComplexImage::zeros(5, 5)).unwrap().norm(), 0.0);
        assert!(matches!(zero_bias.apply_bin(3, &x), Err(Error::Configuration(_))));
    }

    #[test]
    fn ridge_needs_positive_weight() {
        let sched = BridgeSchedule::linear(10, 0.2).unwrap();
        let cfg = RidgeConfig { bins: 2, patch_radius: 1, ridge_weight: 0.0 };
        assert!(matches!(ridge_train(&tiny_pairs(1), &sched, &cfg, 0), Err(Error::Configuration(_))));
    }
}
