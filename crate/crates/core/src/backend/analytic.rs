use std::collections::HashMap;

use super::codec::AnalyticCodec;
use super::{Capabilities, VelocityBackend, VelocityQuery};
use crate::error::{Error, Result};
use crate::field::Grid;

fn unknown_prompt(prompt: &str) -> Error {
    Error::invalid(format!("no analytic field registered for prompt {prompt:?}"))
}

/// `V(z, t, c) = (z - μ_c) / t`.
///
/// The rectified-flow velocity of a point-mass data distribution at `μ_c`.
/// Backward Euler on this field lands exactly on `μ_c` at `t = 0`, which
/// makes closed-form checks of the whole editor possible.
#[derive(Clone, Debug)]
pub struct PointMassBackend {
    codec: AnalyticCodec,
    means: HashMap<String, Grid>,
}

impl PointMassBackend {
    pub fn new(codec: AnalyticCodec) -> Self {
        Self {
            codec,
            means: HashMap::new(),
        }
    }

    pub fn with_mean(mut self, prompt: impl Into<String>, mean: Grid) -> Self {
        self.means.insert(prompt.into(), mean);
        self
    }

    pub fn mean(&self, prompt: &str) -> Option<&Grid> {
        self.means.get(prompt)
    }
}

impl VelocityBackend for PointMassBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            latent_channels: self.codec.latent_channels,
            downsample_factor: self.codec.factor,
            model_id: "analytic/point_mass".into(),
        }
    }

    fn velocity(&mut self, q: &VelocityQuery<'_>) -> Result<Grid> {
        if q.t.is_nan() || q.t <= 0.0 {
            return Err(Error::invalid(format!(
                "point_mass velocity has a pole at t <= 0 (t = {})",
                q.t
            )));
        }
        let mean = self.means.get(q.prompt).ok_or_else(|| unknown_prompt(q.prompt))?;
        let inv_t = 1.0 / q.t;
        q.latent.zip_map(mean, |z, m| (z - m) * inv_t)
    }

    fn encode(&mut self, image: &Grid) -> Result<Grid> {
        self.codec.encode(image)
    }

    fn decode(&mut self, latent: &Grid) -> Result<Grid> {
        self.codec.decode(latent)
    }
}

/// Channel mixing of a linear field.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelMap {
    /// Independent scale per channel.
    PerChannel(Vec<f64>),
    /// Row-major `C×C` matrix applied at every site.
    Matrix(Vec<f64>),
}

/// `V(z, t, c) = A_c·z + b_c`, independent of `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    pub map: ChannelMap,
    pub bias: Grid,
}

impl LinearField {
    /// `A = 0`: the field ignores the latent entirely.
    pub fn constant(bias: Grid) -> Self {
        let c = bias.channels();
        Self {
            map: ChannelMap::PerChannel(vec![0.0; c]),
            bias,
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.bias.channels();
        let ok = match &self.map {
            ChannelMap::PerChannel(s) => s.len() == c,
            ChannelMap::Matrix(m) => m.len() == c * c,
        };
        if !ok {
            return Err(Error::invalid(format!("linear map does not match {c} channels")));
        }
        Ok(())
    }

    pub fn apply(&self, z: &Grid) -> Result<Grid> {
        z.ensure_same_shape(&self.bias)?;
        let plane = z.shape().plane();
        let channels = z.channels();
        let mut out = self.bias.data().to_vec();
        match &self.map {
            ChannelMap::PerChannel(scales) => {
                for (c, &s) in scales.iter().enumerate() {
                    let zc = z.channel(c);
                    for (o, &v) in out[c * plane..(c + 1) * plane].iter_mut().zip(zc) {
                        *o += s * v;
                    }
                }
            }
            ChannelMap::Matrix(m) => {
                for row in 0..channels {
                    for col in 0..channels {
                        let a = m[row * channels + col];
                        let zc = z.channel(col);
                        for (o, &v) in out[row * plane..(row + 1) * plane].iter_mut().zip(zc) {
                            *o += a * v;
                        }
                    }
                }
            }
        }
        Grid::from_vec(z.shape(), out)
    }
}

#[derive(Clone, Debug)]
pub struct LinearBackend {
    codec: AnalyticCodec,
    fields: HashMap<String, LinearField>,
}

impl LinearBackend {
    pub fn new(codec: AnalyticCodec) -> Self {
        Self {
            codec,
            fields: HashMap::new(),
        }
    }

    pub fn with_field(mut self, prompt: impl Into<String>, field: LinearField) -> Result<Self> {
        field.validate()?;
        self.fields.insert(prompt.into(), field);
        Ok(self)
    }
}

impl VelocityBackend for LinearBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            latent_channels: self.codec.latent_channels,
            downsample_factor: self.codec.factor,
            model_id: "analytic/linear".into(),
        }
    }

    fn velocity(&mut self, q: &VelocityQuery<'_>) -> Result<Grid> {
        let field = self.fields.get(q.prompt).ok_or_else(|| unknown_prompt(q.prompt))?;
        field.apply(q.latent)
    }

    fn encode(&mut self, image: &Grid) -> Result<Grid> {
        self.codec.encode(image)
    }

    fn decode(&mut self, latent: &Grid) -> Result<Grid> {
        self.codec.decode(latent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Branch;
    use crate::field::Shape;

    fn query<'a>(z: &'a Grid, t: f64, prompt: &'a str) -> VelocityQuery<'a> {
        VelocityQuery {
            latent: z,
            t,
            prompt,
            step: 1,
            branch: Branch::Source,
        }
    }

    #[test]
    fn point_mass_vanishes_at_mean() {
        let shape = Shape::new(4, 3, 5);
        let mu = crate::oracle::random_grid(shape, 8);
        let mut b = PointMassBackend::new(AnalyticCodec::default()).with_mean("c", mu.clone());
        for t in [0.02, 0.5, 1.0] {
            assert_eq!(b.velocity(&query(&mu, t, "c")).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn point_mass_scales_by_inverse_time() {
        let shape = Shape::new(4, 2, 2);
        let mut b = PointMassBackend::new(AnalyticCodec::default()).with_mean("c", Grid::zeros(shape).unwrap());
        let z = Grid::filled(shape, 1.0).unwrap();
        assert_eq!(
            b.velocity(&query(&z, 0.5, "c")).unwrap(),
            Grid::filled(shape, 2.0).unwrap()
        );
    }

    #[test]
    fn point_mass_rejects_pole_and_unknown_prompt() {
        let shape = Shape::new(4, 2, 2);
        let z = Grid::zeros(shape).unwrap();
        let mut b = PointMassBackend::new(AnalyticCodec::default()).with_mean("c", z.clone());
        assert!(matches!(
            b.velocity(&query(&z, 0.0, "c")),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            b.velocity(&query(&z, 0.5, "d")),
            Err(Error::InvalidArgument(_))
        ));
        let other = Grid::zeros(Shape::new(4, 3, 2)).unwrap();
        assert!(b.velocity(&query(&other, 0.5, "c")).is_err());
    }

    #[test]
    fn constant_linear_field() {
        let shape = Shape::new(4, 3, 3);
        let bias = Grid::filled(shape, 3.0).unwrap();
        let mut b = LinearBackend::new(AnalyticCodec::default())
            .with_field("c", LinearField::constant(bias.clone()))
            .unwrap();
        let z = crate::oracle::random_grid(shape, 1);
        for t in [0.1, 0.9] {
            assert_eq!(b.velocity(&query(&z, t, "c")).unwrap(), bias);
        }
    }

    #[test]
    fn matrix_map_mixes_channels() {
        let shape = Shape::new(2, 1, 2);
        let z = Grid::from_vec(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let field = LinearField {
            map: ChannelMap::Matrix(vec![0.0, 1.0, 2.0, 0.0]),
            bias: Grid::filled(shape, 0.5).unwrap(),
        };
        let v = field.apply(&z).unwrap();
        assert_eq!(v.data(), &[3.5, 4.5, 2.5, 4.5]);
        let diag = LinearField {
            map: ChannelMap::PerChannel(vec![2.0, -1.0]),
            bias: Grid::zeros(shape).unwrap(),
        };
        assert_eq!(diag.apply(&z).unwrap().data(), &[2.0, 4.0, -3.0, -4.0]);
    }

    #[test]
    fn mismatched_map_is_rejected() {
        let field = LinearField {
            map: ChannelMap::PerChannel(vec![1.0]),
            bias: Grid::zeros(Shape::new(2, 1, 1)).unwrap(),
        };
        assert!(LinearBackend::new(AnalyticCodec::default())
            .with_field("c", field)
            .is_err());
    }
}
