use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Initialization distribution for a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on `[low, high)`.
    Uniform { low: f64, high: f64 },
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, scaled by `gain`.
    Glorot { gain: f64 },
    Zeros,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Glorot { gain: 1.0 }
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

/// Fans of a shape: `[in, out]` for matrices, `[n]` counts as `(n, n)`.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [a, b] => (*a, *b),
        [a, rest @ ..] => (*a, rest.iter().product()),
    }
}

/// Draws a tensor from `scheme` using a stream seeded by `seed` alone.
pub fn init_params(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with(shape, scheme, &mut rng)
}

pub fn init_with<R: Rng>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let (low, high) = match scheme {
        InitScheme::Zeros => return Tensor::zeros(shape),
        InitScheme::Uniform { low, high } => (low, high),
        InitScheme::Glorot { gain } => {
            let (fi, fo) = fans(shape);
            let b = gain * glorot_bound(fi, fo);
            (-b, b)
        }
    };
    let data = (0..n).map(|_| rng.gen_range(low..high)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
