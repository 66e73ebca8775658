//! Containers shared by every stage: complex images, Cartesian masks, coil
//! sensitivity maps and multi-coil k-space.

use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};

/// Dense row-major complex image. Also used for coil maps and single k-space
/// planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self { height, width, data: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image shape {height}x{width} is empty")));
        }
        if data.len() != height * width {
            return Err(dim_err(format!(
                "buffer of {} values for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &ComplexImage) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_shape(&self, other: &ComplexImage, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(dim_err(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexImage {
        Self::from_parts(self.height, self.width, self.data.iter().map(|&z| f(z)).collect())
    }

    /// Elementwise combination of two equally shaped images. Panics on shape
    /// mismatch; callers validate shapes first.
    pub(crate) fn zip_map(
        &self,
        other: &ComplexImage,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> ComplexImage {
        assert!(self.same_shape(other), "zip_map on mismatched shapes");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::from_parts(self.height, self.width, data)
    }

    pub fn scale(&self, a: Complex64) -> ComplexImage {
        self.map(|z| a * z)
    }

    pub fn add(&self, other: &ComplexImage) -> Result<ComplexImage> {
        self.check_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &ComplexImage) -> Result<ComplexImage> {
        self.check_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &ComplexImage) -> Result<ComplexImage> {
        self.check_shape(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Returns `a·x + y`.
pub fn cimage_axpy(a: Complex64, x: &ComplexImage, y: &ComplexImage) -> Result<ComplexImage> {
    x.check_shape(y, "axpy")?;
    Ok(x.zip_map(y, |xv, yv| a * xv + yv))
}

/// `Σ_p conj(x_p)·y_p`.
pub fn inner_product(x: &ComplexImage, y: &ComplexImage) -> Result<Complex64> {
    x.check_shape(y, "inner product")?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| a.conj() * b).sum())
}

/// Cartesian phase-encode mask: whole columns of k-space are kept or dropped.
/// The auto-calibration block is `acs_width` contiguous columns centred on
/// column `width / 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    kept: Vec<bool>,
    acs_width: usize,
}

impl SamplingMask {
    pub fn new(height: usize, width: usize, kept_columns: &[usize], acs_width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("mask dimensions must be positive".into()));
        }
        if acs_width > width {
            return Err(Error::InvalidArgument(format!("ACS width {acs_width} exceeds width {width}")));
        }
        let mut kept = vec![false; width];
        for &c in kept_columns {
            if c >= width {
                return Err(Error::InvalidArgument(format!("column {c} outside [0, {width})")));
            }
            kept[c] = true;
        }
        let mask = Self { height, width, kept, acs_width };
        if let Some(c) = mask.acs_range().find(|&c| !mask.kept[c]) {
            return Err(Error::InvalidArgument(format!("ACS column {c} is not kept")));
        }
        Ok(mask)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, kept: vec![true; width], acs_width: width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn acs_width(&self) -> usize {
        self.acs_width
    }

    pub fn acs_start(&self) -> usize {
        self.width / 2 - self.acs_width / 2
    }

    pub fn acs_range(&self) -> std::ops::Range<usize> {
        let start = self.acs_start();
        start..start + self.acs_width
    }

    pub fn is_kept(&self, col: usize) -> bool {
        self.kept[col]
    }

    pub fn kept_columns(&self) -> Vec<usize> {
        (0..self.width).filter(|&c| self.kept[c]).collect()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn is_full(&self) -> bool {
        self.kept.iter().all(|&k| k)
    }

    /// Zeroes every unkept column of a k-space plane.
    pub fn apply(&self, plane: &ComplexImage) -> Result<ComplexImage> {
        if plane.shape() != self.shape() {
            return Err(dim_err(format!(
                "mask {}x{} applied to {}x{} plane",
                self.height,
                self.width,
                plane.height(),
                plane.width()
            )));
        }
        let mut out = plane.clone();
        self.apply_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn apply_in_place(&self, plane: &mut ComplexImage) {
        let w = self.width;
        for (i, z) in plane.data_mut().iter_mut().enumerate() {
            if !self.kept[i % w] {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Coil sensitivity maps `S_1..S_nc`, all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    maps: Vec<ComplexImage>,
    normalized: bool,
}

/// Pixels whose root-sum-of-squares falls below this are treated as outside
/// the map support.
pub const SUPPORT_FLOOR: f64 = 1e-12;

impl SensitivityMaps {
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one coil map is required".into()))?;
        if let Some(m) = maps.iter().find(|m| !m.same_shape(first)) {
            return Err(dim_err(format!(
                "coil maps of shapes {:?} and {:?}",
                first.shape(),
                m.shape()
            )));
        }
        Ok(Self { maps, normalized: false })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.maps[0].shape()
    }

    pub fn maps(&self) -> &[ComplexImage] {
        &self.maps
    }

    pub fn map(&self, coil: usize) -> &ComplexImage {
        &self.maps[coil]
    }

    pub fn into_maps(self) -> Vec<ComplexImage> {
        self.maps
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Root-sum-of-squares across coils at every pixel.
    pub fn rss(&self) -> Vec<f64> {
        let n = self.maps[0].len();
        (0..n)
            .map(|p| self.maps.iter().map(|m| m.data()[p].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    /// Rescales every pixel so that `Σ_i |S_i|² = 1` wherever the maps are
    /// nonzero.
    pub fn normalize(&self) -> SensitivityMaps {
        let rss = self.rss();
        let maps = self
            .maps
            .iter()
            .map(|m| {
                let data = m
                    .data()
                    .iter()
                    .zip(&rss)
                    .map(|(&z, &r)| if r > SUPPORT_FLOOR { z / r } else { Complex64::new(0.0, 0.0) })
                    .collect();
                ComplexImage::from_parts(m.height(), m.width(), data)
            })
            .collect();
        SensitivityMaps { maps, normalized: true }
    }

    /// Largest `|Σ_i |S_i|² − 1|` over the support.
    pub fn normalization_defect(&self) -> f64 {
        self.rss()
            .iter()
            .filter(|&&r| r > SUPPORT_FLOOR)
            .map(|&r| (r * r - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Marks the maps as normalized if the invariant holds to `tol`.
    pub fn with_detected_normalization(mut self, tol: f64) -> Self {
        self.normalized = self.normalization_defect() <= tol;
        self
    }

    pub fn norm(&self) -> f64 {
        self.maps.iter().map(ComplexImage::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &SensitivityMaps) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .maps
            .iter()
            .zip(&other.maps)
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt())
    }

    pub(crate) fn check_compatible(&self, other: &SensitivityMaps) -> Result<()> {
        if self.n_coils() != other.n_coils() || self.shape() != other.shape() {
            return Err(dim_err(format!(
                "maps {}x{:?} vs {}x{:?}",
                self.n_coils(),
                self.shape(),
                other.n_coils(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts(maps: Vec<ComplexImage>, normalized: bool) -> Self {
        Self { maps, normalized }
    }
}

/// Measured multi-coil k-space together with the mask that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    planes: Vec<ComplexImage>,
    mask: SamplingMask,
}

impl MultiCoilKSpace {
    /// Validates that every plane vanishes outside the kept columns.
    pub fn new(planes: Vec<ComplexImage>, mask: SamplingMask) -> Result<Self> {
        Self::check_planes(&planes, &mask)?;
        for (i, p) in planes.iter().enumerate() {
            let w = p.width();
            if let Some(idx) =
                p.data().iter().enumerate().position(|(k, z)| !mask.is_kept(k % w) && *z != Complex64::new(0.0, 0.0))
            {
                return Err(Error::InvalidArgument(format!(
                    "coil {i} has data at unkept column {}",
                    idx % w
                )));
            }
        }
        Ok(Self { planes, mask })
    }

    /// Masks full k-space planes.
    pub fn from_full(mut planes: Vec<ComplexImage>, mask: SamplingMask) -> Result<Self> {
        Self::check_planes(&planes, &mask)?;
        for p in &mut planes {
            mask.apply_in_place(p);
        }
        Ok(Self { planes, mask })
    }

    fn check_planes(planes: &[ComplexImage], mask: &SamplingMask) -> Result<()> {
        if planes.is_empty() {
            return Err(Error::InvalidArgument("k-space needs at least one coil".into()));
        }
        if let Some(p) = planes.iter().find(|p| p.shape() != mask.shape()) {
            return Err(dim_err(format!("plane {:?} vs mask {:?}", p.shape(), mask.shape())));
        }
        Ok(())
    }

    pub(crate) fn from_parts(planes: Vec<ComplexImage>, mask: SamplingMask) -> Self {
        Self { planes, mask }
    }

    pub fn n_coils(&self) -> usize {
        self.planes.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn planes(&self) -> &[ComplexImage] {
        &self.planes
    }

    pub fn plane(&self, coil: usize) -> &ComplexImage {
        &self.planes[coil]
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn norm_sqr(&self) -> f64 {
        self.planes.iter().map(ComplexImage::norm_sqr).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, a: Complex64) -> MultiCoilKSpace {
        Self { planes: self.planes.iter().map(|p| p.scale(a)).collect(), mask: self.mask.clone() }
    }

    pub fn sub(&self, other: &MultiCoilKSpace) -> Result<MultiCoilKSpace> {
        self.check_compatible(other)?;
        let planes = self.planes.iter().zip(&other.planes).map(|(a, b)| a.zip_map(b, |x, y| x - y)).collect();
        Ok(Self { planes, mask: self.mask.clone() })
    }

    /// `Σ_i <a_i, b_i>` over coils.
    pub fn inner_product(&self, other: &MultiCoilKSpace) -> Result<Complex64> {
        self.check_compatible(other)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, b) in self.planes.iter().zip(&other.planes) {
            acc += inner_product(a, b)?;
        }
        Ok(acc)
    }

    fn check_compatible(&self, other: &MultiCoilKSpace) -> Result<()> {
        if self.n_coils() != other.n_coils() || self.shape() != other.shape() {
            return Err(dim_err(format!(
                "k-space {}x{:?} vs {}x{:?}",
                self.n_coils(),
                self.shape(),
                other.n_coils(),
                other.shape()
            )));
        }
        Ok(())
    }
}
