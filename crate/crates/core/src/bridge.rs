//! Direct diffusion bridge between a clean image `x0` and a degraded start
//! image `z`: the forward mixture, schedule resampling and the reverse step.

use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::rng::{complex_normal_vec, Purpose, StreamKey};
use crate::types::ComplexImage;

/// Discretised signal/noise schedule `{α_t, σ_t}`, `t = 0..=n_steps`.
///
/// `α` rises strictly from 0 (clean) to 1 (degraded); `σ_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSchedule {
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl BridgeSchedule {
    pub fn new(alpha: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 || alpha.len() != sigma.len() {
            return Err(Error::Schedule(format!(
                "need matching alpha/sigma arrays of length >= 2, got {} and {}",
                alpha.len(),
                sigma.len()
            )));
        }
        if alpha[0] != 0.0 || *alpha.last().unwrap() != 1.0 {
            return Err(Error::Schedule("alpha must start at 0 and end at 1".into()));
        }
        if let Some(i) = alpha.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Schedule(format!("alpha not strictly increasing at index {}", i + 1)));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Schedule("sigma must be finite and nonnegative".into()));
        }
        if sigma[0] != 0.0 {
            return Err(Error::Schedule("sigma[0] must be 0".into()));
        }
        Ok(Self { alpha, sigma })
    }

    /// `α_t = t/N`, `σ_t = σ_max·sqrt(α_t(1 − α_t))`.
    pub fn linear(n_steps: usize, sigma_max: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Schedule("schedule needs at least one step".into()));
        }
        let alpha: Vec<f64> = (0..=n_steps).map(|t| t as f64 / n_steps as f64).collect();
        let sigma = alpha.iter().map(|&a| sigma_max * (a * (1.0 - a)).max(0.0).sqrt()).collect();
        Self::new(alpha, sigma)
    }

    pub fn n_steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Same `α`, all `σ` set to zero (deterministic bridge).
    pub fn without_noise(&self) -> Self {
        Self { alpha: self.alpha.clone(), sigma: vec![0.0; self.sigma.len()] }
    }

    /// `σ` at an arbitrary `α ∈ [0, 1]`, linear between schedule nodes.
    pub fn sigma_at_alpha(&self, a: f64) -> f64 {
        let a = a.clamp(0.0, 1.0);
        let hi = self.alpha.partition_point(|&v| v < a).min(self.n_steps()).max(1);
        let lo = hi - 1;
        let (a0, a1) = (self.alpha[lo], self.alpha[hi]);
        let w = if a1 > a0 { (a - a0) / (a1 - a0) } else { 0.0 };
        if w <= 0.0 {
            self.sigma[lo]
        } else if w >= 1.0 {
            self.sigma[hi]
        } else {
            self.sigma[lo] + w * (self.sigma[hi] - self.sigma[lo])
        }
    }

    /// Coarser schedule with `nfe + 1` nodes evenly spaced in `α`, `σ`
    /// interpolated from this schedule.
    pub fn reschedule(&self, nfe: usize) -> Result<Self> {
        reschedule(self, nfe)
    }

    pub(crate) fn check_index(&self, t: usize) -> Result<()> {
        if t > self.n_steps() {
            return Err(Error::InvalidArgument(format!("time index {t} exceeds {} steps", self.n_steps())));
        }
        Ok(())
    }
}

pub fn reschedule(schedule: &BridgeSchedule, nfe: usize) -> Result<BridgeSchedule> {
    if nfe == 0 || nfe > schedule.n_steps() {
        return Err(Error::InvalidArgument(format!(
            "nfe {nfe} must lie in [1, {}]",
            schedule.n_steps()
        )));
    }
    if nfe == schedule.n_steps() {
        return Ok(schedule.clone());
    }
    let alpha: Vec<f64> = (0..=nfe).map(|k| k as f64 / nfe as f64).collect();
    let mut sigma: Vec<f64> = alpha.iter().map(|&a| schedule.sigma_at_alpha(a)).collect();
    sigma[0] = schedule.sigma[0];
    sigma[nfe] = schedule.sigma[schedule.n_steps()];
    BridgeSchedule::new(alpha, sigma)
}

/// Noise scale used by the reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// `σ_t β_t − σ_{t−1}`, taken literally.
    AsWritten,
    /// `sqrt(max(0, σ_{t−1}² − β_t² σ_t²))`, which keeps the forward marginal
    /// variance.
    #[default]
    VarianceMatched,
    /// No noise: the deterministic bridge.
    Ode,
}

impl NoiseMode {
    pub fn noise_scale(self, sigma_t: f64, sigma_prev: f64, beta: f64) -> f64 {
        match self {
            Self::AsWritten => sigma_t * beta - sigma_prev,
            Self::VarianceMatched => (sigma_prev * sigma_prev - beta * beta * sigma_t * sigma_t).max(0.0).sqrt(),
            Self::Ode => 0.0,
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(Self::AsWritten),
            "variance-matched" => Ok(Self::VarianceMatched),
            "ode" => Ok(Self::Ode),
            other => Err(Error::InvalidArgument(format!("unknown noise mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AsWritten => "as-written",
            Self::VarianceMatched => "variance-matched",
            Self::Ode => "ode",
        })
    }
}

/// `x_t = (1 − α_t) x0 + α_t z + σ_t ε` with `E|ε_p|² = 1`.
pub fn forward_bridge(
    x0: &ComplexImage,
    z: &ComplexImage,
    t_index: usize,
    schedule: &BridgeSchedule,
    seed: u64,
) -> Result<ComplexImage> {
    forward_bridge_keyed(x0, z, t_index, schedule, StreamKey::new(seed, Purpose::ForwardBridge).step(t_index as u64))
}

pub(crate) fn forward_bridge_keyed(
    x0: &ComplexImage,
    z: &ComplexImage,
    t_index: usize,
    schedule: &BridgeSchedule,
    key: StreamKey,
) -> Result<ComplexImage> {
    x0.check_shape(z, "bridge endpoints")?;
    schedule.check_index(t_index)?;
    Ok(bridge_mixture(x0, z, schedule.alpha(t_index), schedule.sigma(t_index), key))
}

/// Mixture at an arbitrary `(α, σ)`.
pub(crate) fn bridge_mixture(x0: &ComplexImage, z: &ComplexImage, alpha: f64, sigma: f64, key: StreamKey) -> ComplexImage {
    let mean = x0.zip_map(z, |a, b| a * (1.0 - alpha) + b * alpha);
    if sigma == 0.0 {
        return mean;
    }
    let eps = complex_normal_vec(key, mean.len());
    let data = mean.data().iter().zip(eps).map(|(m, e)| m + e * sigma).collect();
    ComplexImage::from_parts(mean.height(), mean.width(), data)
}

/// One reverse step from `t` to `t − 1`:
/// `x_{t−1} = (1 − β) x̂0 + β x_t + c ε`, `β = α_{t−1}/α_t`.
pub fn ddb_step(
    x0_hat: &ComplexImage,
    x_t: &ComplexImage,
    t_index: usize,
    schedule: &BridgeSchedule,
    noise_mode: NoiseMode,
    seed: u64,
) -> Result<ComplexImage> {
    ddb_step_keyed(x0_hat, x_t, t_index, schedule, noise_mode, StreamKey::new(seed, Purpose::ReverseStep).step(t_index as u64))
}

pub(crate) fn ddb_step_keyed(
    x0_hat: &ComplexImage,
    x_t: &ComplexImage,
    t_index: usize,
    schedule: &BridgeSchedule,
    noise_mode: NoiseMode,
    key: StreamKey,
) -> Result<ComplexImage> {
    if !x0_hat.same_shape(x_t) {
        return Err(dim_err(format!("x0_hat {:?} vs x_t {:?}", x0_hat.shape(), x_t.shape())));
    }
    schedule.check_index(t_index)?;
    if t_index == 0 {
        return Err(Error::InvalidArgument("reverse step needs t_index >= 1".into()));
    }
    let alpha_t = schedule.alpha(t_index);
    if alpha_t == 0.0 {
        return Err(Error::Schedule(format!("alpha is zero at t = {t_index}")));
    }
    let beta = schedule.alpha(t_index - 1) / alpha_t;
    let c = noise_mode.noise_scale(schedule.sigma(t_index), schedule.sigma(t_index - 1), beta);
    let mean = x0_hat.zip_map(x_t, |a, b| a * (1.0 - beta) + b * beta);
    if c == 0.0 {
        return Ok(mean);
    }
    let eps = complex_normal_vec(key, mean.len());
    let data = mean.data().iter().zip(eps).map(|(m, e)| m + e * c).collect();
    Ok(ComplexImage::from_parts(mean.height(), mean.width(), data))
}

/// Complex-valued convenience for tests and oracles: mean of the bridge at
/// `α`.
pub fn bridge_mean(x0: Complex64, z: Complex64, alpha: f64) -> Complex64 {
    x0 * (1.0 - alpha) + z * alpha
}
