use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel size and blur strength of the low-pass filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub size: usize,
    pub sigma: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { size: 5, sigma: 1.0 }
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<GaussianKernel> {
        make_gaussian_kernel(self.size, self.sigma)
    }
}

/// Normalized, separable `k×k` Gaussian kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights1d: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Separable factor; `weights == outer(weights1d, weights1d)`.
    pub fn weights1d(&self) -> &[f64] {
        &self.weights1d
    }

    /// Row-major `k×k` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at lattice offset `(di, dj)`, both in `-r..=r`.
    pub fn weight(&self, di: isize, dj: isize) -> f64 {
        let r = self.radius() as isize;
        self.weights[((di + r) * self.size as isize + dj + r) as usize]
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            sigma: 1.0,
            weights1d: vec![1.0],
            weights: vec![1.0],
        }
    }
}

/// Build the `k×k` kernel `exp(-(i²+j²)/2σ²)/K` on the centered integer
/// lattice, where `K` normalizes the weights to unit sum.
pub fn make_gaussian_kernel(size: usize, sigma: f64) -> Result<GaussianKernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel size must be odd and positive, got {size}"
        )));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    let r = (size / 2) as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / denom).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights1d: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let weights = weights1d
        .iter()
        .flat_map(|wi| weights1d.iter().map(move |wj| wi * wj))
        .collect();
    Ok(GaussianKernel {
        size,
        sigma,
        weights1d,
        weights,
    })
}
