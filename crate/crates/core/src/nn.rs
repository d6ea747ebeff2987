//! Parameterized layers built on the autograd graph.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::kernels::Padding;
use crate::params::{Builder, ParamId, ParamStore};
use crate::scalar::Scalar;

pub const LRELU_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const DEMOD_EPS: f64 = 1e-8;

/// He gain for leaky ReLU with slope 0.2.
pub fn lrelu_gain() -> f64 {
    (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt()
}

pub fn lrelu<T: Scalar>(g: &mut Graph<T>, x: Var) -> Var {
    g.leaky_relu(x, T::from_f64_lossy(LRELU_SLOPE))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let weight = b.normal("weight", &[cout, cin, k, k], cin * k * k, lrelu_gain());
        let bias = Some(b.constant("bias", &[cout], 0.0));
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
            padding: Padding::Zero,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = self.bias.map(|b| g.param(p, b));
        g.conv2d_padded(x, w, b, self.stride, self.pad, self.padding)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        din: usize,
        dout: usize,
        gain: f64,
        bias_init: Option<f64>,
    ) -> Self {
        let weight = b.normal("weight", &[dout, din], din, gain);
        let bias = bias_init.map(|v| b.constant("bias", &[dout], v));
        Self { weight, bias }
    }

    /// Zero weight and constant bias, so the output ignores the input.
    pub fn constant_output<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        din: usize,
        dout: usize,
        value: f64,
    ) -> Self {
        let weight = b.constant("weight", &[dout, din], 0.0);
        let bias = Some(b.constant("bias", &[dout], value));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = self.bias.map(|b| g.param(p, b));
        g.linear(x, w, b)
    }
}
