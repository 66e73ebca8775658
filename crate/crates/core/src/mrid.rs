//! MRID binary container.
//!
//! Layout, all little-endian: `b"MRID"`, version `u32`, kind `u8`, ndim
//! `u32`, `ndim` dims as `u64`, dtype `u8`, then the row-major payload.
//! Complex values are stored as interleaved `f32` pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::denoiser::{Basis, GaussianPairModel, RidgeBin, RidgeDenoiser};
use crate::error::{Error, Result};
use crate::types::{ComplexImage, SamplingMask, SensitivityMaps};

pub const MAGIC: &[u8; 4] = b"MRID";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Image = 0,
    KSpaceStack = 1,
    Mask = 2,
    Maps = 3,
    Denoiser = 4,
}

impl Kind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Image,
            1 => Self::KSpaceStack,
            2 => Self::Mask,
            3 => Self::Maps,
            4 => Self::Denoiser,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Complex32 = 0,
    Float32 = 1,
    U8 = 2,
}

impl DType {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Complex32,
            1 => Self::Float32,
            2 => Self::U8,
            _ => return None,
        })
    }

    fn width(self) -> usize {
        match self {
            Self::Complex32 => 8,
            Self::Float32 => 4,
            Self::U8 => 1,
        }
    }
}

/// Raw decoded array.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub kind: Kind,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> DType {
        match self {
            Self::Complex(_) => DType::Complex32,
            Self::Real(_) => DType::Float32,
            Self::Bytes(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::Complex(v) => v.len(),
            Self::Real(v) => v.len(),
            Self::Bytes(v) => v.len(),
        }
    }
}

/// Everything that can be stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub enum MridObject {
    Image(ComplexImage),
    /// Single-channel real image such as a standard-deviation map.
    RealImage { height: usize, width: usize, data: Vec<f64> },
    /// `[n_coils, H, W]` planes; the sampling mask is stored separately.
    KSpace(Vec<ComplexImage>),
    Mask(SamplingMask),
    Maps(SensitivityMaps),
    Ridge(RidgeDenoiser),
    Gaussian(GaussianPairModel),
}

pub fn encode(raw: &RawArray) -> Result<Vec<u8>> {
    let expect: usize = raw.dims.iter().product();
    if expect != raw.payload.len() {
        return Err(Error::InvalidArgument(format!("dims {:?} hold {expect} values, payload has {}", raw.dims, raw.payload.len())));
    }
    let mut out = Vec::with_capacity(4 + 4 + 1 + 4 + 8 * raw.dims.len() + 1 + expect * raw.payload.dtype().width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(raw.kind as u8);
    out.extend_from_slice(&(raw.dims.len() as u32).to_le_bytes());
    for &d in &raw.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(raw.payload.dtype() as u8);
    match &raw.payload {
        Payload::Complex(v) => {
            for z in v {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        Payload::Real(v) => {
            for x in v {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        Payload::Bytes(v) => out.extend_from_slice(v),
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as f64)
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawArray> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected MRID".into() });
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: at as u64, message: format!("unsupported version {version}") });
    }
    let at = r.pos;
    let kind = Kind::from_u8(r.u8("kind")?)
        .ok_or_else(|| Error::Format { offset: at as u64, message: "unknown kind".into() })?;
    let ndim = r.u32("ndim")? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(r.err(format!("unsupported rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        let d = r.u64("dimension")?;
        let d = usize::try_from(d).map_err(|_| r.err("dimension overflows"))?;
        count = count.checked_mul(d).ok_or_else(|| r.err("element count overflows"))?;
        dims.push(d);
    }
    let at = r.pos;
    let dtype = DType::from_u8(r.u8("dtype")?)
        .ok_or_else(|| Error::Format { offset: at as u64, message: "unknown dtype".into() })?;
    let need = count.checked_mul(dtype.width()).ok_or_else(|| r.err("payload size overflows"))?;
    if bytes.len() - r.pos < need {
        return Err(r.err(format!("truncated payload: need {need} bytes, {} left", bytes.len() - r.pos)));
    }
    let payload = match dtype {
        DType::Complex32 => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                let re = r.f32("payload")?;
                let im = r.f32("payload")?;
                v.push(Complex64::new(re, im));
            }
            Payload::Complex(v)
        }
        DType::Float32 => Payload::Real((0..count).map(|_| r.f32("payload")).collect::<Result<_>>()?),
        DType::U8 => Payload::Bytes(r.take(count, "payload")?.to_vec()),
    };
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(RawArray { kind, dims, payload })
}

fn format_err(message: impl Into<String>) -> Error {
    Error::Format { offset: 0, message: message.into() }
}

fn split_planes(dims: &[usize], data: Vec<Complex64>) -> Result<Vec<ComplexImage>> {
    if dims.len() != 3 {
        return Err(format_err(format!("expected [n, H, W], got {dims:?}")));
    }
    let (h, w) = (dims[1], dims[2]);
    data.chunks(h * w.max(1)).take(dims[0]).map(|c| ComplexImage::from_vec(h, w, c.to_vec())).collect()
}

fn ridge_layout(d: &RidgeDenoiser) -> RawArray {
    let n_feat = (2 * d.patch_radius() + 1).pow(2);
    let mut v = Vec::with_capacity(d.bins().len() * (n_feat + 3));
    for b in d.bins() {
        v.extend_from_slice(&b.weights);
        v.push(b.bias);
        v.push(Complex64::new(b.alpha, b.train_mse));
        v.push(Complex64::new(d.ridge_weight(), 0.0));
    }
    RawArray { kind: Kind::Denoiser, dims: vec![d.bins().len(), n_feat + 3], payload: Payload::Complex(v) }
}

fn ridge_from(dims: &[usize], v: &[Complex64]) -> Result<RidgeDenoiser> {
    let cols = dims[1];
    let n_feat = cols.checked_sub(3).ok_or_else(|| format_err("ridge rows are too short"))?;
    let side = (n_feat as f64).sqrt().round() as usize;
    if side * side != n_feat || side % 2 == 0 {
        return Err(format_err(format!("{n_feat} weights do not form an odd square patch")));
    }
    let mut ridge = 0.0;
    let bins = v
        .chunks(cols)
        .map(|row| {
            ridge = row[n_feat + 2].re;
            RidgeBin { alpha: row[n_feat + 1].re, weights: row[..n_feat].to_vec(), bias: row[n_feat], train_mse: row[n_feat + 1].im }
        })
        .collect();
    RidgeDenoiser::from_bins(side / 2, ridge, bins)
}

fn gaussian_layout(m: &GaussianPairModel) -> RawArray {
    let (h, w) = m.shape();
    let code = match m.basis() {
        Basis::Fourier => 0.0,
        Basis::Pixel => 1.0,
    };
    let mut v = Vec::with_capacity(6 * h * w);
    v.extend_from_slice(m.mean0());
    v.extend_from_slice(m.mean_z());
    v.extend(m.var0().iter().map(|&x| Complex64::new(x, 0.0)));
    v.extend(m.var_z().iter().map(|&x| Complex64::new(x, 0.0)));
    v.extend_from_slice(m.cov0z());
    v.extend(std::iter::repeat_n(Complex64::new(code, 0.0), h * w));
    RawArray { kind: Kind::Denoiser, dims: vec![6, h, w], payload: Payload::Complex(v) }
}

fn gaussian_from(dims: &[usize], v: &[Complex64]) -> Result<GaussianPairModel> {
    if dims[0] != 6 {
        return Err(format_err(format!("Gaussian model needs 6 planes, got {}", dims[0])));
    }
    let n = dims[1] * dims[2];
    let plane = |k: usize| &v[k * n..(k + 1) * n];
    let basis = match plane(5).first().map(|z| z.re) {
        Some(c) if c == 0.0 => Basis::Fourier,
        Some(c) if c == 1.0 => Basis::Pixel,
        _ => return Err(format_err("unknown basis code")),
    };
    let var0: Vec<f64> = plane(2).iter().map(|z| z.re).collect();
    let var_z: Vec<f64> = plane(3).iter().map(|z| z.re).collect();
    let cov: Vec<Complex64> = plane(4)
        .iter()
        .enumerate()
        .map(|(p, &c)| {
            let bound = var0[p] * var_z[p];
            if c.norm_sqr() > bound && c.norm_sqr() > 0.0 {
                c * (bound / c.norm_sqr()).sqrt()
            } else {
                c
            }
        })
        .collect();
    GaussianPairModel::new(basis, dims[1], dims[2], plane(0).to_vec(), plane(1).to_vec(), var0, var_z, cov)
}

pub fn to_raw(obj: &MridObject) -> RawArray {
    match obj {
        MridObject::Image(img) => RawArray {
            kind: Kind::Image,
            dims: vec![img.height(), img.width()],
            payload: Payload::Complex(img.data().to_vec()),
        },
        MridObject::RealImage { height, width, data } => RawArray {
            kind: Kind::Image,
            dims: vec![*height, *width],
            payload: Payload::Real(data.clone()),
        },
        MridObject::KSpace(planes) => {
            let (h, w) = planes.first().map(|p| p.shape()).unwrap_or((0, 0));
            RawArray {
                kind: Kind::KSpaceStack,
                dims: vec![planes.len(), h, w],
                payload: Payload::Complex(planes.iter().flat_map(|p| p.data().iter().copied()).collect()),
            }
        }
        MridObject::Mask(m) => {
            let (h, w) = m.shape();
            let acs = m.acs_range();
            let row: Vec<u8> = (0..w)
                .map(|c| if acs.contains(&c) { 2 } else { u8::from(m.is_kept(c)) })
                .collect();
            RawArray { kind: Kind::Mask, dims: vec![h, w], payload: Payload::Bytes(row.repeat(h)) }
        }
        MridObject::Maps(m) => {
            let (h, w) = m.shape();
            RawArray {
                kind: Kind::Maps,
                dims: vec![m.n_coils(), h, w],
                payload: Payload::Complex(m.maps().iter().flat_map(|p| p.data().iter().copied()).collect()),
            }
        }
        MridObject::Ridge(d) => ridge_layout(d),
        MridObject::Gaussian(g) => gaussian_layout(g),
    }
}

pub fn from_raw(raw: RawArray) -> Result<MridObject> {
    let dims = raw.dims.clone();
    match (raw.kind, raw.payload) {
        (Kind::Image, Payload::Complex(v)) if dims.len() == 2 => Ok(MridObject::Image(ComplexImage::from_vec(dims[0], dims[1], v)?)),
        (Kind::Image, Payload::Real(v)) if dims.len() == 2 => Ok(MridObject::RealImage { height: dims[0], width: dims[1], data: v }),
        (Kind::KSpaceStack, Payload::Complex(v)) => Ok(MridObject::KSpace(split_planes(&dims, v)?)),
        (Kind::Maps, Payload::Complex(v)) => {
            let planes = split_planes(&dims, v)?;
            Ok(MridObject::Maps(SensitivityMaps::new(planes)?.with_detected_normalization(1e-5)))
        }
        (Kind::Mask, Payload::Bytes(v)) if dims.len() == 2 => {
            let (h, w) = (dims[0], dims[1]);
            if h == 0 || w == 0 {
                return Err(format_err("empty mask"));
            }
            let row = &v[..w];
            if v.chunks(w).any(|r| r != row) {
                return Err(format_err("mask rows differ; only column masks are supported"));
            }
            if let Some(bad) = row.iter().find(|&&b| b > 2) {
                return Err(format_err(format!("invalid mask value {bad}")));
            }
            let kept: Vec<usize> = (0..w).filter(|&c| row[c] != 0).collect();
            let acs: Vec<usize> = (0..w).filter(|&c| row[c] == 2).collect();
            let mask = SamplingMask::new(h, w, &kept, acs.len())?;
            if mask.acs_range().collect::<Vec<_>>() != acs {
                return Err(format_err("ACS columns are not the centred block"));
            }
            Ok(MridObject::Mask(mask))
        }
        (Kind::Denoiser, Payload::Complex(v)) if dims.len() == 2 => Ok(MridObject::Ridge(ridge_from(&dims, &v)?)),
        (Kind::Denoiser, Payload::Complex(v)) if dims.len() == 3 => Ok(MridObject::Gaussian(gaussian_from(&dims, &v)?)),
        (kind, p) => Err(format_err(format!("kind {kind:?} with rank {} and dtype {:?} is not supported", dims.len(), p.dtype()))),
    }
}

/// Writes `obj` atomically: the bytes go to a sibling temporary file that is
/// then renamed over `path`.
pub fn save_array(path: impl AsRef<Path>, obj: &MridObject) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(&to_raw(obj))?;
    let tmp = path.with_extension("mrid.partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_array(path: impl AsRef<Path>) -> Result<MridObject> {
    let bytes = fs::read(path)?;
    from_raw(decode(&bytes)?)
}

macro_rules! typed_loader {
    ($name:ident, $variant:ident, $ty:ty, $what:literal) => {
        pub fn $name(path: impl AsRef<Path>) -> Result<$ty> {
            match load_array(path)? {
                MridObject::$variant(v) => Ok(v),
                other => Err(format_err(format!(concat!("expected ", $what, ", found {}"), describe(&other)))),
            }
        }
    };
}

fn describe(obj: &MridObject) -> &'static str {
    match obj {
        MridObject::Image(_) => "an image",
        MridObject::RealImage { .. } => "a real image",
        MridObject::KSpace(_) => "k-space",
        MridObject::Mask(_) => "a mask",
        MridObject::Maps(_) => "coil maps",
        MridObject::Ridge(_) => "a ridge denoiser",
        MridObject::Gaussian(_) => "a Gaussian model",
    }
}

typed_loader!(load_image, Image, ComplexImage, "an image");
typed_loader!(load_kspace_planes, KSpace, Vec<ComplexImage>, "k-space");
typed_loader!(load_mask, Mask, SamplingMask, "a mask");
typed_loader!(load_maps, Maps, SensitivityMaps, "coil maps");
typed_loader!(load_ridge, Ridge, RidgeDenoiser, "a ridge denoiser");
typed_loader!(load_gaussian, Gaussian, GaussianPairModel, "a Gaussian model");

/// Loads a real image as `(height, width, data)`.
pub fn load_real_image(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    match load_array(path)? {
        MridObject::RealImage { height, width, data } => Ok((height, width, data)),
        other => Err(format_err(format!("expected a real image, found {}", describe(&other)))),
    }
}
