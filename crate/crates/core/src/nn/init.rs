use rand::Rng;

use super::{Mat, Scalar};

/// Glorot/Xavier uniform initialization for a `fan_in × fan_out` weight.
pub fn xavier_uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::lit(rng.gen_range(-limit..limit)))
        .collect();
    Mat::from_vec(fan_in, fan_out, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initializer {
    Zeros,
    Ones,
    Xavier,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
}

impl Initializer {
    pub fn build<F: Scalar, R: Rng + ?Sized>(self, rng: &mut R, rows: usize, cols: usize) -> Mat<F> {
        match self {
            Initializer::Zeros => Mat::zeros(rows, cols),
            Initializer::Ones => Mat::filled(rows, cols, F::one()),
            Initializer::Xavier => xavier_uniform(rng, rows, cols),
            Initializer::Uniform(a) => Mat::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| F::lit(rng.gen_range(-a..=a))).collect(),
            ),
        }
    }
}
