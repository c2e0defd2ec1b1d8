use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, Shape};

/// Stand-in for a VAE: block-mean downsampling by `factor`, with latent
/// channel `c` taken from image channel `c mod 3`.
///
/// Decoding upsamples by nearest neighbour and averages each image channel
/// over the latent channels replicated from it, so `encode(decode(z)) == z`
/// for every `z` in the codec's range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticCodec {
    pub factor: usize,
    pub latent_channels: usize,
}

impl Default for AnalyticCodec {
    fn default() -> Self {
        Self {
            factor: 8,
            latent_channels: 4,
        }
    }
}

pub(crate) const IMAGE_CHANNELS: usize = 3;

impl AnalyticCodec {
    pub fn new(factor: usize, latent_channels: usize) -> Result<Self> {
        if factor == 0 || latent_channels == 0 {
            return Err(Error::invalid("codec factor and latent channels must be positive"));
        }
        Ok(Self {
            factor,
            latent_channels,
        })
    }

    pub fn latent_shape(&self, image: Shape) -> Result<Shape> {
        if image.channels != IMAGE_CHANNELS {
            return Err(Error::invalid(format!("expected a 3-channel image, got {image}")));
        }
        if !image.height.is_multiple_of(self.factor) || !image.width.is_multiple_of(self.factor) {
            return Err(Error::invalid(format!(
                "image {}x{} is not divisible by downsample factor {}",
                image.width, image.height, self.factor
            )));
        }
        Ok(Shape::new(
            self.latent_channels,
            image.height / self.factor,
            image.width / self.factor,
        ))
    }

    pub fn encode(&self, image: &Grid) -> Result<Grid> {
        let ls = self.latent_shape(image.shape())?;
        let f = self.factor;
        let area = (f * f) as f64;
        let mut pooled = Grid::zeros(Shape::new(IMAGE_CHANNELS, ls.height, ls.width))?;
        for c in 0..IMAGE_CHANNELS {
            for y in 0..ls.height {
                for x in 0..ls.width {
                    let mut acc = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            acc += image.get(c, y * f + dy, x * f + dx);
                        }
                    }
                    pooled.set(c, y, x, acc / area);
                }
            }
        }
        Grid::from_fn(ls, |c, y, x| pooled.get(c % IMAGE_CHANNELS, y, x))
    }

    pub fn decode(&self, latent: &Grid) -> Result<Grid> {
        if latent.channels() != self.latent_channels {
            return Err(Error::invalid(format!(
                "expected {} latent channels, got {}",
                self.latent_channels,
                latent.channels()
            )));
        }
        let f = self.factor;
        let shape = Shape::new(IMAGE_CHANNELS, latent.height() * f, latent.width() * f);
        let sources: Vec<Vec<usize>> = (0..IMAGE_CHANNELS)
            .map(|c| (c..self.latent_channels).step_by(IMAGE_CHANNELS).collect())
            .collect();
        Grid::from_fn(shape, |c, y, x| {
            let src = &sources[c];
            if src.is_empty() {
                return 0.0;
            }
            src.iter().map(|&lc| latent.get(lc, y / f, x / f)).sum::<f64>() / src.len() as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn factor_one_three_channels_is_identity() {
        let codec = AnalyticCodec::new(1, 3).unwrap();
        let img = oracle::random_grid(Shape::new(3, 5, 7), 4).map(|v| v.abs().min(1.0));
        assert_eq!(codec.encode(&img).unwrap(), img);
        assert_eq!(codec.decode(&img).unwrap(), img);
    }

    #[test]
    fn constant_image_round_trips() {
        let codec = AnalyticCodec::default();
        let img = Grid::filled(Shape::new(3, 16, 24), 0.375).unwrap();
        let z = codec.encode(&img).unwrap();
        assert_eq!(z.shape(), Shape::new(4, 2, 3));
        assert!(z.data().iter().all(|&v| v == 0.375));
        assert_eq!(codec.decode(&z).unwrap(), img);
    }

    #[test]
    fn ramp_encodes_to_block_means() {
        let codec = AnalyticCodec::new(8, 3).unwrap();
        let img = Grid::from_fn(Shape::new(3, 16, 16), |c, y, x| (c * 256 + y * 16 + x) as f64 / 1000.0).unwrap();
        let z = codec.encode(&img).unwrap();
        let expected = oracle::block_mean(&img, 8);
        assert!(z.max_abs_diff(&expected).unwrap() < 1e-15);
        // block (0,0) of channel 0 averages y*16+x over y,x in 0..8
        assert!((z.get(0, 0, 0) - 0.0595).abs() < 1e-15);
    }

    #[test]
    fn decode_upsamples_blockwise() {
        let codec = AnalyticCodec::new(8, 4).unwrap();
        let z = Grid::from_fn(Shape::new(4, 2, 2), |c, y, x| (c % 3 * 4 + y * 2 + x) as f64).unwrap();
        let img = codec.decode(&z).unwrap();
        assert_eq!(img.shape(), Shape::new(3, 16, 16));
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(img.get(1, y, x), z.get(1, y / 8, x / 8));
            }
        }
        assert_eq!(codec.encode(&img).unwrap(), z);
    }

    #[test]
    fn rejects_indivisible_images() {
        let codec = AnalyticCodec::default();
        assert!(codec.encode(&Grid::zeros(Shape::new(3, 12, 16)).unwrap()).is_err());
        assert!(codec.encode(&Grid::zeros(Shape::new(1, 16, 16)).unwrap()).is_err());
    }
}
