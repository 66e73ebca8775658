//! Image-quality metrics on magnitude images and per-method summaries.

use std::fmt::Write as _;

use crate::error::{dim_err, Error, Result};
use crate::types::ComplexImage;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn magnitudes(reference: &ComplexImage, test: &ComplexImage) -> Result<(Vec<f64>, Vec<f64>)> {
    if !reference.same_shape(test) {
        return Err(dim_err(format!("reference {:?} vs test {:?}", reference.shape(), test.shape())));
    }
    Ok((reference.magnitude(), test.magnitude()))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// `10 log10(peak² / MSE)` with `peak = max |reference|`; an exact match
/// gives `+∞`.
pub fn psnr(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    let (r, t) = magnitudes(reference, test)?;
    let peak = r.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidArgument("reference image is identically zero".into()));
    }
    let m = mse(&r, &t);
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// `‖|x̂| − |x|‖² / ‖x‖²`.
pub fn nmse(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    let (r, t) = magnitudes(reference, test)?;
    let energy: f64 = r.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("reference image is identically zero".into()));
    }
    Ok(mse(&r, &t) * r.len() as f64 / energy)
}

/// Mean structural similarity over all fully contained uniform windows, with
/// dynamic range equal to the reference peak.
pub fn ssim(reference: &ComplexImage, test: &ComplexImage, window: usize, k1: f64, k2: f64) -> Result<f64> {
    let (r, t) = magnitudes(reference, test)?;
    let range = r.iter().cloned().fold(0.0, f64::max);
    ssim_magnitude(&r, &t, reference.height(), reference.width(), window, k1, k2, range)
}

/// [`ssim`] with the default window and constants.
pub fn ssim_default(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    ssim(reference, test, SSIM_WINDOW, SSIM_K1, SSIM_K2)
}

/// SSIM on real images with an explicit dynamic range.
#[allow(clippy::too_many_arguments)]
pub fn ssim_magnitude(
    a: &[f64],
    b: &[f64],
    height: usize,
    width: usize,
    window: usize,
    k1: f64,
    k2: f64,
    range: f64,
) -> Result<f64> {
    if a.len() != height * width || b.len() != height * width {
        return Err(dim_err("image buffers do not match the stated shape"));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("window must be odd, got {window}")));
    }
    if window > height || window > width {
        return Err(Error::InvalidArgument(format!("window {window} exceeds image {height}x{width}")));
    }
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);
    // Summed-area tables of a, b, a², b², ab.
    let stride = width + 1;
    let mut tables = vec![[0.0f64; 5]; (height + 1) * stride];
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (a[r * width + c], b[r * width + c]);
            let vals = [x, y, x * x, y * y, x * y];
            let up = tables[r * stride + c + 1];
            let left = tables[(r + 1) * stride + c];
            let diag = tables[r * stride + c];
            let cell = &mut tables[(r + 1) * stride + c + 1];
            for k in 0..5 {
                cell[k] = vals[k] + up[k] + left[k] - diag[k];
            }
        }
    }
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=height - window {
        for c in 0..=width - window {
            let (r1, c1i) = (r + window, c + window);
            let mut s = [0.0; 5];
            for (k, v) in s.iter_mut().enumerate() {
                *v = tables[r1 * stride + c1i][k] - tables[r * stride + c1i][k] - tables[r1 * stride + c][k]
                    + tables[r * stride + c][k];
            }
            let (mx, my) = (s[0] / n, s[1] / n);
            let vx = ((s[2] - n * mx * mx) / (n - 1.0)).max(0.0);
            let vy = ((s[3] - n * my * my) / (n - 1.0)).max(0.0);
            let bound = (vx * vy).sqrt();
            let cxy = ((s[4] - n * mx * my) / (n - 1.0)).clamp(-bound, bound);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("need two samples of equal length >= 2".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("correlation undefined for a constant sample".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconReport {
    pub method: String,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
    pub data_residual: f64,
    pub runtime_s: f64,
}

impl ReconReport {
    pub fn evaluate(
        method: impl Into<String>,
        seed: u64,
        reference: &ComplexImage,
        recon: &ComplexImage,
        data_residual: f64,
        runtime_s: f64,
    ) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            seed,
            psnr: psnr(reference, recon)?,
            ssim: ssim_default(reference, recon)?,
            nmse: nmse(reference, recon)?,
            data_residual,
            runtime_s,
        })
    }

    pub fn is_exact_match(&self) -> bool {
        self.psnr == f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: f64,
    /// Sample standard deviation; zero for a single report.
    pub std: f64,
    /// Seeds flagged by the 1.5·IQR rule.
    pub outliers: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub metrics: Vec<MetricSummary>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices of values outside `[Q1 − 1.5 IQR, Q3 + 1.5 IQR]`.
pub fn iqr_outliers(values: &[f64]) -> Vec<usize> {
    let mut finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.len() < 4 {
        return Vec::new();
    }
    finite.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q1 = quantile(&finite, 0.25);
    let q3 = quantile(&finite, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    values.iter().enumerate().filter(|(_, &v)| v.is_finite() && (v < lo || v > hi)).map(|(i, _)| i).collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 || !mean.is_finite() {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One summary per method, in order of first appearance.
pub fn aggregate(reports: &[ReconReport]) -> Result<Vec<MethodSummary>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to aggregate".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let getters: [(&'static str, fn(&ReconReport) -> f64); 4] = [
        ("psnr", |r| r.psnr),
        ("ssim", |r| r.ssim),
        ("nmse", |r| r.nmse),
        ("residual", |r| r.data_residual),
    ];
    Ok(order
        .into_iter()
        .map(|method| {
            let group: Vec<&ReconReport> = reports.iter().filter(|r| r.method == method).collect();
            let metrics = getters
                .iter()
                .map(|(name, get)| {
                    let vals: Vec<f64> = group.iter().map(|r| get(r)).collect();
                    let (mean, std) = mean_std(&vals);
                    MetricSummary { metric: name, mean, std, outliers: iqr_outliers(&vals).into_iter().map(|i| group[i].seed).collect() }
                })
                .collect();
            MethodSummary { method: method.to_string(), n: group.len(), metrics }
        })
        .collect())
}

pub const SUMMARY_HEADER: &str = "method,metric,mean,std,n,outliers";
pub const PER_SLICE_HEADER: &str = "method,seed,psnr,ssim,nmse,residual,runtime_s";

fn metric_note() -> String {
    format!("# magnitude images; ssim uniform {SSIM_WINDOW}x{SSIM_WINDOW} window, k1={SSIM_K1}, k2={SSIM_K2}, range=reference peak")
}

/// Summary CSV; outlier seeds are `;`-separated.
pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = format!("{}\n{SUMMARY_HEADER}\n", metric_note());
    for s in summaries {
        for m in &s.metrics {
            let ids: Vec<String> = m.outliers.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{},{},{},{},{},{}", s.method, m.metric, m.mean, m.std, s.n, ids.join(";"));
        }
    }
    out
}

pub fn per_slice_csv(reports: &[ReconReport]) -> String {
    let mut out = format!("{}\n{PER_SLICE_HEADER}\n", metric_note());
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.method, r.seed, r.psnr, r.ssim, r.nmse, r.data_residual, r.runtime_s);
    }
    out
}
