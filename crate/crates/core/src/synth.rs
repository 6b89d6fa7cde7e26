//! Synthetic return series for simulations and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::series::ReturnSequence;

/// I.i.d. Gaussian returns: a random walk in prices.
pub fn gaussian_returns(len: usize, sigma: f64, base_price: f64, seed: u64) -> ReturnSequence {
    ar1_returns(len, 0.0, sigma, base_price, seed)
}

/// `r_t = phi * r_{t-1} + e_t` with `e_t ~ N(0, sigma^2)`, started from
/// the stationary distribution.
pub fn ar1_returns(len: usize, phi: f64, sigma: f64, base_price: f64, seed: u64) -> ReturnSequence {
    assert!(phi.abs() < 1.0, "AR(1) coefficient must lie in (-1, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let stationary = Normal::new(0.0, sigma / (1.0 - phi * phi).sqrt())
        .expect("stationary sigma is finite");
    let mut returns = Vec::with_capacity(len);
    let mut prev = stationary.sample(&mut rng);
    for _ in 0..len {
        prev = phi * prev + noise.sample(&mut rng);
        returns.push(prev);
    }
    ReturnSequence::new(returns, base_price)
}

/// Declarative dataset recipe, as used in simulation configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SyntheticSpec {
    RandomWalk {
        len: usize,
        #[serde(default = "unit")]
        sigma: f64,
    },
    Ar1 {
        len: usize,
        phi: f64,
        #[serde(default = "unit")]
        sigma: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn generate(&self, base_price: f64, seed: u64) -> ReturnSequence {
        match *self {
            SyntheticSpec::RandomWalk { len, sigma } => gaussian_returns(len, sigma, base_price, seed),
            SyntheticSpec::Ar1 { len, phi, sigma } => ar1_returns(len, phi, sigma, base_price, seed),
        }
    }
}
