//! Age-conditional projection discriminator:
//! `d(I, z) = b(phi(I)) + phi(I) . u(z)`.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{lrelu, Conv2d, Linear};
use crate::params::{Builder, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct DiscriminatorBlock {
    pub convs: [Conv2d; 2],
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub blocks: [DiscriminatorBlock; 4],
    /// Unconditional head `b`.
    pub head: Linear,
    /// Condition embedding `u`, no bias.
    pub projection: Linear,
    code_len: usize,
}

impl Discriminator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let [w1, w2] = cfg.encoder_widths;
        let widths = [(3, w1), (w1, w2), (w2, c), (c, c)];
        let blocks = std::array::from_fn(|i| {
            let (cin, cout) = widths[i];
            let mut bb = b.scoped(&format!("block{i}"));
            DiscriminatorBlock {
                convs: [
                    Conv2d::new(&mut bb.scoped("conv0"), cin, cout, 3, 1),
                    Conv2d::new(&mut bb.scoped("conv1"), cout, cout, 3, 1),
                ],
            }
        });
        Self {
            blocks,
            head: Linear::new(&mut b.scoped("head"), c, 1, 1.0, Some(0.0)),
            projection: Linear::new(&mut b.scoped("projection"), cfg.code_len(), c, 1.0, None),
            code_len: cfg.code_len(),
        }
    }

    /// Pooled trunk features `phi(I)`. Each block halves the resolution while
    /// it is still even and larger than one pixel.
    pub fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        image: Var,
    ) -> Result<Var> {
        match *g.shape(image) {
            [3, h, w] if h > 0 && w > 0 => {}
            ref s => {
                return Err(Error::shape(format!(
                    "discriminator input must be [3, H, W], got {s:?}"
                )))
            }
        }
        let mut x = image;
        for block in &self.blocks {
            for conv in &block.convs {
                x = conv.forward(g, p, x)?;
                x = lrelu(g, x);
            }
            let (_, h, w) = g.value(x).dims3()?;
            if h > 1 && w > 1 && h % 2 == 0 && w % 2 == 0 {
                x = g.avg_pool2(x)?;
            }
        }
        g.global_avg_pool(x)
    }

    /// Scalar logit for `image` under age code `code`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        image: Var,
        code: Var,
    ) -> Result<Var> {
        if g.shape(code) != [self.code_len] {
            return Err(Error::shape(format!(
                "age code of shape {:?}, expected [{}]",
                g.shape(code),
                self.code_len
            )));
        }
        let phi = self.features(g, p, image)?;
        let uncond = self.head.forward(g, p, phi)?;
        let u = self.projection.forward(g, p, code)?;
        let cond = g.dot(phi, u)?;
        let cond = g.reshape(cond, &[1])?;
        let logit = g.add(uncond, cond)?;
        g.reshape(logit, &[])
    }
}
