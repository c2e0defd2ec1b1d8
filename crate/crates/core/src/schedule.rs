//! Time discretization, seeded noise, and the per-step source/target
//! latent pairing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{Grid, Shape};

/// Uniform grid `t_i = i/T`, `i = 0..=T`; editing visits `i = n_max..=1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    total: usize,
    n_max: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Editing step indices, from `n_max` down to 1.
    pub fn edit_steps(&self) -> impl Iterator<Item = usize> {
        (1..=self.n_max).rev()
    }
}

pub fn build_time_grid(total: usize, n_max: usize) -> Result<TimeGrid> {
    if total == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if n_max == 0 || n_max > total {
        return Err(Error::invalid(format!("N_max must be in 1..={total}, got {n_max}")));
    }
    let times = (0..=total).map(|i| i as f64 / total as f64).collect();
    Ok(TimeGrid { total, n_max, times })
}

/// Deterministic standard-normal stream.
///
/// ChaCha8 keyed by `seed_from_u64`, mapped to N(0, 1) by the ziggurat
/// sampler of `rand_distr::StandardNormal`. Both are value-stable across
/// platforms for the pinned crate versions.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn sample(&mut self, shape: Shape) -> Result<Grid> {
        let data = (0..shape.len()).map(|_| self.next_normal()).collect();
        Grid::from_vec(shape, data)
    }
}

/// Per-item seed for batch workers: SplitMix64 of `seed ^ golden·(index+1)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Encoded source latent and the current edited latent.
#[derive(Clone, Debug, PartialEq)]
pub struct EditState {
    pub z0_src: Grid,
    pub z_flow: Grid,
}

impl EditState {
    pub fn new(z0_src: Grid) -> Self {
        Self {
            z_flow: z0_src.clone(),
            z0_src,
        }
    }

    /// Current edit displacement `z_flow - z0_src`.
    pub fn displacement(&self) -> Grid {
        self.z_flow.sub(&self.z0_src).expect("state shapes are equal")
    }
}

/// `(1 - t)·z0_src + t·noise`
pub fn sample_source_latent(z0_src: &Grid, t: f64, noise: &Grid) -> Result<Grid> {
    z0_src.zip_map(noise, |z, n| (1.0 - t) * z + t * n)
}

/// `z_flow + z_hat_src - z0_src`
pub fn form_target_latent(z_flow: &Grid, z_hat_src: &Grid, z0_src: &Grid) -> Result<Grid> {
    z_flow.ensure_same_shape(z_hat_src)?;
    z_flow.ensure_same_shape(z0_src)?;
    let data = z_flow
        .data()
        .iter()
        .zip(z_hat_src.data())
        .zip(z0_src.data())
        .map(|((f, s), z)| f + s - z)
        .collect();
    Grid::from_vec(z_flow.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(v: f64) -> Grid {
        Grid::filled(Shape::new(2, 3, 3), v).unwrap()
    }

    #[test]
    fn appendix_grid_values() {
        let g = build_time_grid(50, 33).unwrap();
        assert_eq!(g.t(33), 0.66);
        assert_eq!(g.t(1), 0.02);
        assert_eq!(g.edit_steps().count(), 33);
        assert_eq!(g.edit_steps().next(), Some(33));
    }

    #[test]
    fn small_grids() {
        assert_eq!(build_time_grid(1, 1).unwrap().times(), &[0.0, 1.0]);
        assert_eq!(build_time_grid(4, 2).unwrap().times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(build_time_grid(0, 0).is_err());
        assert!(build_time_grid(10, 11).is_err());
        assert!(build_time_grid(10, 0).is_err());
    }

    #[test]
    fn source_latent_endpoints() {
        let z = fill(2.0);
        let n = fill(4.0);
        assert_eq!(sample_source_latent(&z, 0.0, &n).unwrap(), z);
        assert_eq!(sample_source_latent(&z, 1.0, &n).unwrap(), n);
        assert_eq!(sample_source_latent(&z, 0.5, &n).unwrap(), fill(3.0));
    }

    #[test]
    fn target_latent_identities() {
        let z0 = fill(2.0);
        let zs = fill(5.0);
        assert_eq!(form_target_latent(&z0, &zs, &z0).unwrap(), zs);
        let zf = fill(1.0);
        assert_eq!(form_target_latent(&zf, &z0, &z0).unwrap(), zf);
        assert_eq!(form_target_latent(&zf, &zs, &z0).unwrap(), fill(4.0));
        assert!(form_target_latent(&zf, &Grid::zeros(Shape::new(1, 3, 3)).unwrap(), &z0).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let shape = Shape::new(4, 5, 6);
        let a = NoiseSource::new(99).sample(shape).unwrap();
        let b = NoiseSource::new(99).sample(shape).unwrap();
        let c = NoiseSource::new(100).sample(shape).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn noise_moments_are_standard() {
        let mut src = NoiseSource::new(5);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| src.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
