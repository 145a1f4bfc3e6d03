//! Shared numerical kernels: special functions, compensated summation,
//! Gaussian quadrature, FFT convolution, and seeded random streams.

pub mod fft;
pub mod quad;
pub mod rng;
pub mod special;
pub mod sum;
