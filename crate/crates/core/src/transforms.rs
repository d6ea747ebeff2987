//! Age embedding plus the two age-conditioned transformations: a modulated
//! convolution on the shape map and channel gating of the texture vector.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{lrelu, lrelu_gain, Linear, DEMOD_EPS};
use crate::params::{Builder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two-layer perceptron from the `6N` age code to `C`.
#[derive(Clone, Debug)]
pub struct AgeEmbedding {
    pub fc0: Linear,
    pub fc1: Linear,
    code_len: usize,
}

impl AgeEmbedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        code_len: usize,
        channels: usize,
    ) -> Self {
        Self {
            fc0: Linear::new(
                &mut b.scoped("fc0"),
                code_len,
                channels,
                lrelu_gain(),
                Some(0.0),
            ),
            fc1: Linear::new(&mut b.scoped("fc1"), channels, channels, 1.0, Some(0.0)),
            code_len,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        code: Var,
    ) -> Result<Var> {
        if g.shape(code) != [self.code_len] {
            return Err(Error::shape(format!(
                "age code of shape {:?}, expected [{}]",
                g.shape(code),
                self.code_len
            )));
        }
        let h = self.fc0.forward(g, p, code)?;
        let h = lrelu(g, h);
        self.fc1.forward(g, p, h)
    }
}

/// Scale input channel `c` of every filter by `s[c]`; optionally rescale each
/// output filter to unit L2 norm (with a `1e-8` floor inside the root).
pub fn modulate_filters<T: Scalar>(
    g: &mut Graph<T>,
    filters: Var,
    scales: Var,
    demodulate: bool,
) -> Result<Var> {
    let m = g.modulate(filters, scales)?;
    if demodulate {
        g.demodulate(m, T::from_f64_lossy(DEMOD_EPS))
    } else {
        Ok(m)
    }
}

/// Gaussian filters `[c, c, k, k]`, each output filter scaled to unit L2 norm
/// so that demodulation leaves them unchanged at initialization.
fn unit_filters<T: Scalar, R: Rng + ?Sized>(c: usize, k: usize, rng: &mut R) -> Tensor<T> {
    let mut w = Tensor::<f64>::randn(vec![c, c, k, k], 1.0, rng);
    for f in w.data_mut().chunks_mut(c * k * k) {
        let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= n);
    }
    w.cast()
}

#[derive(Clone, Debug)]
pub struct ShapeTransform {
    pub filters: ParamId,
    /// Age embedding to per-input-channel scales; starts at all ones.
    pub proj: Linear,
    pub demodulate: bool,
}

impl ShapeTransform {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        channels: usize,
        demodulate: bool,
    ) -> Self {
        let filters = unit_filters(channels, 3, b.rng);
        Self {
            filters: b.add("filters", filters),
            proj: Linear::constant_output(&mut b.scoped("proj"), channels, channels, 1.0),
            demodulate,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        shape_map: Var,
        embedding: Var,
    ) -> Result<Var> {
        let scales = self.proj.forward(g, p, embedding)?;
        let w = g.param(p, self.filters);
        let w = modulate_filters(g, w, scales, self.demodulate)?;
        g.conv2d(shape_map, w, None, 1, 1)
    }
}

#[derive(Clone, Debug)]
pub struct TextureTransform {
    /// Age embedding to channel gates; starts at all ones.
    pub proj: Linear,
}

impl TextureTransform {
    pub fn new<T: Scalar, R: Rng + ?Sized>(b: &mut Builder<'_, T, R>, channels: usize) -> Self {
        Self {
            proj: Linear::constant_output(&mut b.scoped("proj"), channels, channels, 1.0),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        texture: Var,
        embedding: Var,
    ) -> Result<Var> {
        let gates = self.proj.forward(g, p, embedding)?;
        if g.shape(texture) != g.shape(gates) {
            return Err(Error::shape(format!(
                "texture {:?} vs gates {:?}",
                g.shape(texture),
                g.shape(gates)
            )));
        }
        g.mul(texture, gates)
    }
}
