//! Starting points for the sampler: the source image and the initial coil
//! maps, both derived from the measured data.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::fft::ifft2c;
use crate::forward::ForwardOperator;
use crate::types::{ComplexImage, MultiCoilKSpace, SensitivityMaps};

/// `A^H y` with the given maps.
pub fn zero_filled_init(y: &MultiCoilKSpace, maps: &SensitivityMaps) -> Result<ComplexImage> {
    let op = ForwardOperator::new(maps.clone(), y.mask().clone())?;
    if op.maps().n_coils() != y.n_coils() {
        return Err(dim_err(format!("{} maps vs {} coils", maps.n_coils(), y.n_coils())));
    }
    op.adjoint(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrappaConfig {
    /// Row taps, odd.
    pub kernel_rows: usize,
    /// Acquired source columns, split evenly left and right; even.
    pub kernel_cols: usize,
    /// Tikhonov weight relative to the mean diagonal of the normal matrix.
    pub tikhonov: f64,
}

impl Default for GrappaConfig {
    fn default() -> Self {
        Self { kernel_rows: 5, kernel_cols: 4, tikhonov: 1e-4 }
    }
}

/// Weights for one arrangement of acquired neighbours around a missing
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct GrappaPattern {
    /// Column offsets of the source columns, ascending.
    pub offsets: Vec<isize>,
    /// Row-major `[n_coils, n_coils × kernel_rows × kernel_cols]`.
    pub weights: Vec<Complex64>,
    /// Relative least-squares residual on the calibration equations.
    pub fit_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrappaKernel {
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub n_coils: usize,
    height: usize,
    kept: Vec<bool>,
    patterns: Vec<GrappaPattern>,
    column_pattern: Vec<Option<usize>>,
}

impl GrappaKernel {
    pub fn patterns(&self) -> &[GrappaPattern] {
        &self.patterns
    }

    /// Pattern index used to fill each column; `None` for acquired columns.
    pub fn column_pattern(&self) -> &[Option<usize>] {
        &self.column_pattern
    }

    /// Largest relative fit residual over all patterns.
    pub fn fit_residual(&self) -> f64 {
        self.patterns.iter().map(|p| p.fit_residual).fold(0.0, f64::max)
    }

    fn n_src(&self) -> usize {
        self.n_coils * self.kernel_rows * self.kernel_cols
    }
}

/// Offsets to the `half` nearest acquired columns on each side, wrapping.
fn neighbour_offsets(kept: &[bool], col: usize, half: usize) -> Option<Vec<isize>> {
    let w = kept.len() as isize;
    let mut out = Vec::with_capacity(2 * half);
    for dir in [-1isize, 1] {
        let mut found = 0;
        let mut d = dir;
        while found < half {
            if d.abs() >= w {
                return None;
            }
            if kept[(col as isize + d).rem_euclid(w) as usize] {
                out.push(d);
                found += 1;
            }
            d += dir;
        }
    }
    out.sort_unstable();
    Some(out)
}

fn gather(
    planes: &[ComplexImage],
    row: isize,
    col: usize,
    offsets: &[isize],
    half_rows: isize,
    out: &mut Vec<Complex64>,
) {
    out.clear();
    let (h, w) = planes[0].shape();
    for p in planes {
        for dr in -half_rows..=half_rows {
            let r = row + dr;
            for &d in offsets {
                if r < 0 || r >= h as isize {
                    out.push(Complex64::new(0.0, 0.0));
                } else {
                    let c = (col as isize + d).rem_euclid(w as isize) as usize;
                    out.push(p.get(r as usize, c));
                }
            }
        }
    }
}

/// Fits one weight set per neighbour pattern on the fully sampled ACS block.
pub fn grappa_calibrate(y: &MultiCoilKSpace, config: &GrappaConfig) -> Result<GrappaKernel> {
    if config.kernel_rows == 0 || config.kernel_rows % 2 == 0 {
        return Err(Error::Configuration(format!("kernel_rows must be odd, got {}", config.kernel_rows)));
    }
    if config.kernel_cols == 0 || config.kernel_cols % 2 == 1 {
        return Err(Error::Configuration(format!("kernel_cols must be even, got {}", config.kernel_cols)));
    }
    if !(config.tikhonov >= 0.0) {
        return Err(Error::Configuration(format!("tikhonov must be >= 0, got {}", config.tikhonov)));
    }
    let mask = y.mask();
    let (h, w) = mask.shape();
    let kept: Vec<bool> = (0..w).map(|c| mask.is_kept(c)).collect();
    let nc = y.n_coils();
    let half = config.kernel_cols / 2;
    let half_rows = (config.kernel_rows / 2) as isize;
    let n_src = nc * config.kernel_rows * config.kernel_cols;

    let mut keys: HashMap<Vec<isize>, usize> = HashMap::new();
    let mut offsets_list: Vec<Vec<isize>> = Vec::new();
    let mut column_pattern = vec![None; w];
    for c in (0..w).filter(|&c| !kept[c]) {
        let offs = neighbour_offsets(&kept, c, half).ok_or_else(|| {
            Error::Calibration(format!("column {c} has fewer than {half} acquired neighbours on a side"))
        })?;
        let next = offsets_list.len();
        let idx = *keys.entry(offs.clone()).or_insert_with(|| {
            offsets_list.push(offs);
            next
        });
        column_pattern[c] = Some(idx);
    }

    let acs = mask.acs_range();
    let rows: Vec<isize> = (half_rows..h as isize - half_rows).collect();
    let patterns = offsets_list
        .par_iter()
        .map(|offs| {
            let span = (offs[offs.len() - 1] - offs[0]) as usize;
            let lo = -offs[0];
            let targets: Vec<usize> = acs
                .clone()
                .filter(|&t| {
                    let t = t as isize;
                    t - lo >= acs.start as isize && t - lo + span as isize <= acs.end as isize - 1
                })
                .collect();
            let m = targets.len() * rows.len();
            if targets.is_empty() || m < n_src {
                return Err(Error::Calibration(format!(
                    "ACS of width {} gives {m} equations for {n_src} unknowns; pattern {offs:?} needs at least {} ACS columns",
                    acs.len(),
                    span + n_src.div_ceil(rows.len().max(1)).max(1)
                )));
            }
            let mut phi = DMatrix::<Complex64>::zeros(m, n_src);
            let mut tgt = DMatrix::<Complex64>::zeros(m, nc);
            let mut buf = Vec::with_capacity(n_src);
            let mut e = 0;
            for &t in &targets {
                for &r in &rows {
                    gather(y.planes(), r, t, offs, half_rows, &mut buf);
                    for (k, v) in buf.iter().enumerate() {
                        phi[(e, k)] = *v;
                    }
                    for (j, p) in y.planes().iter().enumerate() {
                        tgt[(e, j)] = p.get(r as usize, t);
                    }
                    e += 1;
                }
            }
            let mut gram = phi.adjoint() * &phi;
            let rhs = phi.adjoint() * &tgt;
            let mean_diag = (0..n_src).map(|k| gram[(k, k)].re).sum::<f64>() / n_src as f64;
            let reg = config.tikhonov * mean_diag;
            for k in 0..n_src {
                gram[(k, k)] += Complex64::new(reg, 0.0);
            }
            let sol = match gram.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => gram
                    .svd(true, true)
                    .solve(&rhs, 1e-12 * mean_diag.max(f64::MIN_POSITIVE))
                    .map_err(|e| Error::Numerical(format!("GRAPPA solve failed: {e}")))?,
            };
            let fit = &phi * &sol - &tgt;
            let tn = tgt.norm();
            let fit_residual = if tn > 0.0 { fit.norm() / tn } else { 0.0 };
            let weights: Vec<Complex64> = (0..nc).flat_map(|j| (0..n_src).map(move |k| (j, k))).map(|(j, k)| sol[(k, j)]).collect();
            if weights.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Numerical("GRAPPA weights are not finite".into()));
            }
            Ok(GrappaPattern { offsets: offs.clone(), weights, fit_residual })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GrappaKernel {
        kernel_rows: config.kernel_rows,
        kernel_cols: config.kernel_cols,
        n_coils: nc,
        height: h,
        kept,
        patterns,
        column_pattern,
    })
}

/// Fills every missing column; acquired columns are copied unchanged.
pub fn grappa_fill(kernel: &GrappaKernel, y: &MultiCoilKSpace) -> Result<Vec<ComplexImage>> {
    let (h, w) = y.shape();
    let same_pattern = w == kernel.kept.len() && (0..w).all(|c| y.mask().is_kept(c) == kernel.kept[c]);
    if h != kernel.height || !same_pattern {
        return Err(Error::Calibration("sampling pattern differs from the calibrated one".into()));
    }
    if y.n_coils() != kernel.n_coils {
        return Err(dim_err(format!("kernel has {} coils, data has {}", kernel.n_coils, y.n_coils())));
    }
    let nc = kernel.n_coils;
    let n_src = kernel.n_src();
    let half_rows = (kernel.kernel_rows / 2) as isize;
    let mut planes: Vec<Vec<Complex64>> = y.planes().iter().map(|p| p.data().to_vec()).collect();
    let filled: Vec<(usize, Vec<Complex64>)> = (0..w)
        .into_par_iter()
        .filter_map(|c| kernel.column_pattern[c].map(|p| (c, p)))
        .map(|(c, p)| {
            let pat = &kernel.patterns[p];
            let mut buf = Vec::with_capacity(n_src);
            let mut col = vec![Complex64::new(0.0, 0.0); nc * h];
            for r in 0..h {
                gather(y.planes(), r as isize, c, &pat.offsets, half_rows, &mut buf);
                for j in 0..nc {
                    let wj = &pat.weights[j * n_src..(j + 1) * n_src];
                    col[j * h + r] = wj.iter().zip(&buf).map(|(a, b)| a * b).sum();
                }
            }
            (c, col)
        })
        .collect();
    for (c, col) in filled {
        for (j, plane) in planes.iter_mut().enumerate() {
            for r in 0..h {
                plane[r * w + c] = col[j * h + r];
            }
        }
    }
    Ok(planes.into_iter().map(|d| ComplexImage::from_parts(h, w, d)).collect())
}

/// GRAPPA reconstruction combined with `maps` (`A^H` on the filled data), or
/// root-sum-of-squares when no maps are given.
pub fn grappa_apply(
    kernel: &GrappaKernel,
    y: &MultiCoilKSpace,
    maps: Option<&SensitivityMaps>,
) -> Result<ComplexImage> {
    let planes = grappa_fill(kernel, y)?;
    let (h, w) = y.shape();
    let coil_images: Vec<ComplexImage> = planes.par_iter().map(ifft2c).collect();
    match maps {
        Some(m) => {
            if m.n_coils() != coil_images.len() || m.shape() != (h, w) {
                return Err(dim_err("maps do not match the k-space"));
            }
            let mut out = vec![Complex64::new(0.0, 0.0); h * w];
            for (s, img) in m.maps().iter().zip(&coil_images) {
                for ((o, a), b) in out.iter_mut().zip(s.data()).zip(img.data()) {
                    *o += a.conj() * b;
                }
            }
            Ok(ComplexImage::from_parts(h, w, out))
        }
        None => {
            let data = (0..h * w)
                .map(|p| Complex64::new(coil_images.iter().map(|c| c.data()[p].norm_sqr()).sum::<f64>().sqrt(), 0.0))
                .collect();
            Ok(ComplexImage::from_parts(h, w, data))
        }
    }
}

/// `sin²` window with `n` nonzero taps.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| (std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).sin().powi(2)).collect()
}

/// Low-resolution coil maps from the ACS block: apodize, invert, divide by
/// the root-sum-of-squares, reference the phase to the first coil and
/// normalize. `smoothing_width` is the row extent of the window; `None` uses
/// the ACS width.
pub fn estimate_csm_from_acs(y: &MultiCoilKSpace, smoothing_width: Option<usize>) -> Result<SensitivityMaps> {
    let mask = y.mask();
    let (h, w) = mask.shape();
    let acs = mask.acs_range();
    if acs.is_empty() {
        return Err(Error::Calibration("no ACS columns".into()));
    }
    let rows_width = smoothing_width.unwrap_or(acs.len()).clamp(1, h);
    if smoothing_width == Some(0) {
        return Err(Error::Configuration("smoothing_width must be >= 1".into()));
    }
    let col_win = hann(acs.len());
    let row_win = hann(rows_width);
    let row_start = h / 2 - rows_width / 2;

    let low: Vec<ComplexImage> = y
        .planes()
        .par_iter()
        .map(|p| {
            let mut buf = ComplexImage::zeros(h, w);
            let d = buf.data_mut();
            for (i, r) in (row_start..row_start + rows_width).enumerate() {
                for (j, c) in acs.clone().enumerate() {
                    d[r * w + c] = p.get(r, c) * (row_win[i] * col_win[j]);
                }
            }
            ifft2c(&buf)
        })
        .collect();

    let rss: Vec<f64> = (0..h * w).map(|p| low.iter().map(|c| c.data()[p].norm_sqr()).sum::<f64>().sqrt()).collect();
    let peak = rss.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Calibration("ACS data are all zero".into()));
    }
    let floor = 1e-8 * peak;
    let maps = low
        .iter()
        .map(|c| {
            let data = (0..h * w)
                .map(|p| {
                    let r = rss[p];
                    if r <= floor {
                        return Complex64::new(0.0, 0.0);
                    }
                    let reference = low[0].data()[p];
                    let phase =
                        if reference.norm() > 0.0 { reference.conj() / reference.norm() } else { Complex64::new(1.0, 0.0) };
                    c.data()[p] * phase / r
                })
                .collect();
            ComplexImage::from_parts(h, w, data)
        })
        .collect();
    Ok(SensitivityMaps::new(maps)?.normalize())
}
