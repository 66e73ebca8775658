//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is the
//! tuple `(seed, sample, step, purpose)`. Draws therefore do not depend on the
//! order in which work is scheduled, which keeps parallel ensembles
//! bit-identical to serial ones.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Mask = 1,
    MeasurementNoise = 2,
    BridgeInit = 3,
    ReverseStep = 4,
    ForwardBridge = 5,
    Phantom = 6,
    Coils = 7,
    Perturbation = 8,
    Training = 9,
    Dataset = 10,
    Test = 11,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub sample: u64,
    pub step: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self { seed, sample: 0, step: 0, purpose }
    }

    pub fn sample(mut self, sample: u64) -> Self {
        self.sample = sample;
        self
    }

    pub fn step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.sample.to_le_bytes());
        key[16..24].copy_from_slice(&self.step.to_le_bytes());
        key[24..32].copy_from_slice(&(self.purpose as u64).to_le_bytes());
        ChaCha12Rng::from_seed(key)
    }
}

/// Circular complex normal with `E|z|^2 = 1` (real and imaginary parts each
/// carry variance 1/2).
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec(key: StreamKey, len: usize) -> Vec<Complex64> {
    let mut rng = key.rng();
    (0..len).map(|_| complex_normal(&mut rng)).collect()
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
