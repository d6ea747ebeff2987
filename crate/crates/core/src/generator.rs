//! Style-modulated decoder.
//!
//! Four synthesis blocks of two modulated convolutions. The spatial input is
//! the transformed shape map; the style vector drives every convolution
//! through its own affine map. Blocks 3 and 4 upsample 2x (nearest), so the
//! output is four times the input resolution. No noise injection.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{lrelu, lrelu_gain, Conv2d, Linear, DEMOD_EPS};
use crate::params::{Builder, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct ModulatedConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub affine: Linear,
    pub demodulate: bool,
}

impl ModulatedConv {
    fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        style_dim: usize,
        cin: usize,
        cout: usize,
        demodulate: bool,
    ) -> Self {
        Self {
            weight: b.normal("weight", &[cout, cin, 3, 3], cin * 9, lrelu_gain()),
            bias: b.constant("bias", &[cout], 0.0),
            affine: Linear::new(&mut b.scoped("affine"), style_dim, cin, 1.0, Some(1.0)),
            demodulate,
        }
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        style: Var,
    ) -> Result<Var> {
        let s = self.affine.forward(g, p, style)?;
        let w = g.param(p, self.weight);
        let mut w = g.modulate(w, s)?;
        if self.demodulate {
            w = g.demodulate(w, T::from_f64_lossy(DEMOD_EPS))?;
        }
        let bias = g.param(p, self.bias);
        let y = g.conv2d(x, w, Some(bias), 1, 1)?;
        Ok(lrelu(g, y))
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisBlock {
    pub convs: [ModulatedConv; 2],
    pub upsample: bool,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub blocks: [SynthesisBlock; 4],
    pub to_rgb: Conv2d,
    channels: usize,
}

impl Generator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let [g3, g4] = cfg.generator_widths;
        let widths = [(c, c, false), (c, c, false), (c, g3, true), (g3, g4, true)];
        let blocks = std::array::from_fn(|i| {
            let (cin, cout, upsample) = widths[i];
            let mut bb = b.scoped(&format!("block{i}"));
            let c0 = ModulatedConv::new(&mut bb.scoped("conv0"), c, cin, cout, cfg.demodulate);
            let c1 = ModulatedConv::new(&mut bb.scoped("conv1"), c, cout, cout, cfg.demodulate);
            SynthesisBlock {
                convs: [c0, c1],
                upsample,
            }
        });
        let to_rgb = Conv2d::new(&mut b.scoped("to_rgb"), g4, 3, 1, 1);
        Self {
            blocks,
            to_rgb,
            channels: c,
        }
    }

    /// Image in `[-1, 1]` of size `4H x 4W` from a `[C, H, W]` map and a
    /// length-`C` style vector.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        content: Var,
        style: Var,
    ) -> Result<Var> {
        let (c, _, _) = g.value(content).dims3()?;
        if c != self.channels || g.shape(style) != [self.channels] {
            return Err(Error::shape(format!(
                "generator expects [{0}, H, W] content and [{0}] style, got {1:?} and {2:?}",
                self.channels,
                g.shape(content),
                g.shape(style)
            )));
        }
        let mut x = content;
        for block in &self.blocks {
            if block.upsample {
                x = g.upsample2(x)?;
            }
            for conv in &block.convs {
                x = conv.forward(g, p, x, style)?;
            }
        }
        let rgb = self.to_rgb.forward(g, p, x)?;
        Ok(g.tanh(rgb))
    }
}
