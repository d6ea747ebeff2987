//! The full network: encoder, age embedding, transforms, generator and
//! discriminator over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::age::AgeCode;
use crate::autograd::{Graph, Var};
use crate::config::{Architecture, ModelConfig};
use crate::discriminator::Discriminator;
use crate::encoder::{Encoder, Taps};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::params::{Builder, ParamStore, Side};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::{AgeEmbedding, ShapeTransform, TextureTransform};

/// Features of one image inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub taps: Taps,
    /// `f_s`, or `f_en` for the entangled architecture.
    pub shape: Var,
    /// `f_t`; absent for the entangled architecture.
    pub texture: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub age_embedding: AgeEmbedding,
    pub shape_transform: Option<ShapeTransform>,
    pub texture_transform: Option<TextureTransform>,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let (encoder, age_embedding, shape_transform, texture_transform, generator) = {
            let mut b = Builder::new(&mut params, &mut rng, Side::Generator);
            let encoder = Encoder::new(&mut b.scoped("encoder"), &config);
            let age_embedding =
                AgeEmbedding::new(&mut b.scoped("age_embedding"), config.code_len(), c);
            let (st, tt) = match config.architecture {
                Architecture::Disentangled => (
                    Some(ShapeTransform::new(
                        &mut b.scoped("shape_transform"),
                        c,
                        config.demodulate,
                    )),
                    Some(TextureTransform::new(&mut b.scoped("texture_transform"), c)),
                ),
                Architecture::Entangled => (None, None),
            };
            let generator = Generator::new(&mut b.scoped("generator"), &config);
            (encoder, age_embedding, st, tt, generator)
        };
        let discriminator = {
            let mut b = Builder::new(&mut params, &mut rng, Side::Discriminator);
            Discriminator::new(&mut b.scoped("discriminator"), &config)
        };
        Ok(Self {
            config,
            params,
            encoder,
            age_embedding,
            shape_transform,
            texture_transform,
            generator,
            discriminator,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// Image tensor with the configured size, or `ShapeMismatch`.
    pub fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let s = self.config.image_size;
        if image.shape() != [3, s, s] {
            return Err(Error::shape(format!(
                "model expects [3, {s}, {s}] images, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    pub fn features(&self, g: &mut Graph<T>, p: &ParamStore<T>, image: Var) -> Result<Features> {
        let taps = self.encoder.encode(g, p, image)?;
        match self.config.architecture {
            Architecture::Disentangled => {
                let shape = self.encoder.extract_shape(g, p, taps.mid)?;
                let texture = self.encoder.extract_texture(g, p, taps.deep)?;
                Ok(Features {
                    taps,
                    shape,
                    texture: Some(texture),
                })
            }
            Architecture::Entangled => {
                let shape = self.encoder.extract_entangled(g, p, taps.deep)?;
                Ok(Features {
                    taps,
                    shape,
                    texture: None,
                })
            }
        }
    }

    pub fn embed_age(&self, g: &mut Graph<T>, p: &ParamStore<T>, code: Var) -> Result<Var> {
        self.age_embedding.forward(g, p, code)
    }

    fn transforms(&self) -> Result<(&ShapeTransform, &TextureTransform)> {
        match (&self.shape_transform, &self.texture_transform) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(Error::IncompatibleCheckpoint(
                "entangled model has no shape/texture transforms".into(),
            )),
        }
    }

    pub fn shape_transform(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        shape: Var,
        embedding: Var,
    ) -> Result<Var> {
        self.transforms()?.0.forward(g, p, shape, embedding)
    }

    pub fn texture_transform(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        texture: Var,
        embedding: Var,
    ) -> Result<Var> {
        self.transforms()?.1.forward(g, p, texture, embedding)
    }

    /// `G(S(f_s, z), T(f_t, z))`, or `G(S(f_s, z), f_t)` when
    /// `transform_texture` is off.
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        shape: Var,
        texture: Var,
        code: Var,
        transform_texture: bool,
    ) -> Result<Var> {
        let e = self.embed_age(g, p, code)?;
        let s = self.shape_transform(g, p, shape, e)?;
        let t = if transform_texture {
            self.texture_transform(g, p, texture, e)?
        } else {
            texture
        };
        self.generator.forward(g, p, s, t)
    }

    /// `G(f_en, A_E(z))`
    pub fn decode_entangled(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        entangled: Var,
        code: Var,
    ) -> Result<Var> {
        let e = self.embed_age(g, p, code)?;
        self.generator.forward(g, p, entangled, e)
    }

    /// Target image from already extracted features.
    pub fn translate(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        f: &Features,
        code: Var,
    ) -> Result<Var> {
        match f.texture {
            Some(t) => self.decode(g, p, f.shape, t, code, true),
            None => self.decode_entangled(g, p, f.shape, code),
        }
    }

    /// `F(I, z)` in one call.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        image: Var,
        code: Var,
    ) -> Result<Var> {
        let f = self.features(g, p, image)?;
        self.translate(g, p, &f, code)
    }

    pub fn discriminate(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        image: Var,
        code: Var,
    ) -> Result<Var> {
        self.discriminator.forward(g, p, image, code)
    }

    /// Convenience: `F(I, z)` on tensors with the live parameters.
    pub fn synthesize(&self, image: &Tensor<T>, code: &AgeCode<T>) -> Result<Tensor<T>> {
        self.synthesize_with(&self.params, image, code)
    }

    pub fn synthesize_with(
        &self,
        p: &ParamStore<T>,
        image: &Tensor<T>,
        code: &AgeCode<T>,
    ) -> Result<Tensor<T>> {
        self.check_image(image)?;
        let mut g = Graph::inference();
        let x = g.input(image.clone());
        let z = g.input(code.to_tensor());
        let y = self.forward(&mut g, p, x, z)?;
        Ok(g.value(y).clone())
    }

    /// Cast all parameters to another scalar type, keeping the structure.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            age_embedding: self.age_embedding.clone(),
            shape_transform: self.shape_transform.clone(),
            texture_transform: self.texture_transform.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
        }
    }
}
