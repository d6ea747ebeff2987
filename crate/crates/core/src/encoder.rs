//! Shared convolutional encoder and its shape, texture, identity and
//! entangled heads.
//!
//! The body has four blocks of two convolutions each. Blocks 1 and 2 end in
//! 2x average pooling; the middle tap is taken after block 2 and the deep tap
//! after block 4, both at `H/4`.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::config::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::nn::{lrelu, Conv2d, NORM_EPS};
use crate::params::{Builder, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    convs: [Conv2d; 2],
    pool: bool,
}

impl EncoderBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        cin: usize,
        mid: usize,
        cout: usize,
        pool: bool,
    ) -> Self {
        let c0 = Conv2d::new(&mut b.scoped("conv0"), cin, mid, 3, 1);
        let c1 = Conv2d::new(&mut b.scoped("conv1"), mid, cout, 3, 1);
        Self {
            convs: [c0, c1],
            pool,
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for conv in &self.convs {
            x = conv.forward(g, p, x)?;
            x = g.instance_norm(x, T::from_f64_lossy(NORM_EPS))?;
            x = lrelu(g, x);
        }
        if self.pool {
            x = g.avg_pool2(x)?;
        }
        Ok(x)
    }
}

/// Two 3x3 convolutions with a skip connection; no activation after the sum.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
}

impl ResidualBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(b: &mut Builder<'_, T, R>, ch: usize) -> Self {
        Self {
            conv0: Conv2d::new(&mut b.scoped("conv0"), ch, ch, 3, 1),
            conv1: Conv2d::new(&mut b.scoped("conv1"), ch, ch, 3, 1),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv0.forward(g, p, x)?;
        let h = lrelu(g, h);
        let h = self.conv1.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Convolution, nonlinearity, convolution.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
}

impl ProjectionHead {
    fn new<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        cin: usize,
        cout: usize,
        first_stride: usize,
    ) -> Self {
        Self {
            conv0: Conv2d::new(&mut b.scoped("conv0"), cin, cout, 3, first_stride),
            conv1: Conv2d::new(&mut b.scoped("conv1"), cout, cout, 3, 1),
        }
    }

    /// Pad by edge replication, so a spatially constant input stays constant.
    fn edge_padded(self) -> Self {
        Self {
            conv0: self.conv0.with_padding(Padding::Edge),
            conv1: self.conv1.with_padding(Padding::Edge),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv0.forward(g, p, x)?;
        let h = lrelu(g, h);
        self.conv1.forward(g, p, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Taps {
    pub mid: Var,
    pub deep: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    body: [EncoderBlock; 4],
    pub shape_head: Option<ResidualBlock>,
    pub texture_head: Option<ProjectionHead>,
    pub identity_head: ProjectionHead,
    pub entangled_head: Option<Conv2d>,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(b: &mut Builder<'_, T, R>, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let [w1, w2] = cfg.encoder_widths;
        let body = [
            EncoderBlock::new(&mut b.scoped("block0"), 3, w1, w1, true),
            EncoderBlock::new(&mut b.scoped("block1"), w1, w2, c, true),
            EncoderBlock::new(&mut b.scoped("block2"), c, c, c, false),
            EncoderBlock::new(&mut b.scoped("block3"), c, c, c, false),
        ];
        let identity_head = ProjectionHead::new(&mut b.scoped("identity"), c, 2 * c, 2);
        let (shape_head, texture_head, entangled_head) = match cfg.architecture {
            Architecture::Disentangled => (
                Some(ResidualBlock::new(&mut b.scoped("shape"), c)),
                Some(ProjectionHead::new(&mut b.scoped("texture"), c, c, 1).edge_padded()),
                None,
            ),
            Architecture::Entangled => (
                None,
                None,
                Some(Conv2d::new(&mut b.scoped("entangled"), c, c, 3, 1)),
            ),
        };
        Self {
            body,
            shape_head,
            texture_head,
            identity_head,
            entangled_head,
        }
    }

    pub fn check_image<T: Scalar>(g: &Graph<T>, image: Var) -> Result<()> {
        match *g.shape(image) {
            [3, h, w] if h == w && h > 0 && h % 8 == 0 => Ok(()),
            ref s => Err(Error::shape(format!(
                "image must be [3, H, H] with H a multiple of 8, got {s:?}"
            ))),
        }
    }

    /// Blocks 1-2 only.
    pub fn encode_mid<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        image: Var,
    ) -> Result<Var> {
        Self::check_image(g, image)?;
        let x = self.body[0].forward(g, p, image)?;
        self.body[1].forward(g, p, x)
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        image: Var,
    ) -> Result<Taps> {
        let mid = self.encode_mid(g, p, image)?;
        let x = self.body[2].forward(g, p, mid)?;
        let deep = self.body[3].forward(g, p, x)?;
        Ok(Taps { mid, deep })
    }

    fn require<'a, H>(head: &'a Option<H>, what: &str) -> Result<&'a H> {
        head.as_ref()
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("model has no {what} head")))
    }

    /// `f_s`: residual block over the middle tap.
    pub fn extract_shape<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        mid: Var,
    ) -> Result<Var> {
        Self::require(&self.shape_head, "shape")?.forward(g, p, mid)
    }

    /// `f_t`: projection of the deep tap, globally average pooled.
    pub fn extract_texture<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        deep: Var,
    ) -> Result<Var> {
        let h = Self::require(&self.texture_head, "texture")?.forward(g, p, deep)?;
        g.global_avg_pool(h)
    }

    /// `f_id`: strided projection of the deep tap, `H/8` with `2C` channels.
    pub fn extract_identity<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        deep: Var,
    ) -> Result<Var> {
        self.identity_head.forward(g, p, deep)
    }

    pub fn extract_entangled<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        deep: Var,
    ) -> Result<Var> {
        Self::require(&self.entangled_head, "entangled")?.forward(g, p, deep)
    }
}
